#![allow(dead_code)]

use std::time::Duration;

use caremesh_server::{start, ClockMode, Config, ServerHandle, TokenFile, TokenTable};
use futures::StreamExt;
use serde_json::Value;
use tempfile::TempDir;

pub const ADMIN: &str = "tok-admin";

pub fn token(n: u64) -> String {
    format!("tok-p-{n}")
}

pub fn config(dir: &TempDir) -> Config {
    Config {
        bind: "127.0.0.1:0".parse().unwrap(),
        log_path: dir.path().join("events.log"),
        token_file: dir.path().join("tokens.json"),
        heartbeat_secs: 30,
        fsync: false,
        clock: ClockMode::Logical,
        stream_buffer: 1024,
    }
}

pub fn tokens(participants: u64) -> TokenTable {
    TokenTable::from_file(TokenFile {
        admin: Some(ADMIN.into()),
        participants: (1..=participants)
            .map(|n| (caremesh_core::ParticipantId::nth(n), token(n)))
            .collect(),
    })
    .unwrap()
}

pub struct TestServer {
    pub handle: ServerHandle,
    pub dir: TempDir,
    pub http: reqwest::Client,
}

impl TestServer {
    pub async fn start() -> Self {
        Self::start_in(TempDir::new().unwrap(), |_| {}).await
    }

    pub async fn start_in(dir: TempDir, tweak: impl FnOnce(&mut Config)) -> Self {
        let mut cfg = config(&dir);
        tweak(&mut cfg);
        let handle = start(cfg, tokens(50)).await.unwrap();
        let s = Self {
            handle,
            dir,
            http: reqwest::Client::new(),
        };
        s.wait_ready().await;
        s
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{}", self.handle.base_url(), path)
    }

    pub async fn wait_ready(&self) {
        for _ in 0..200 {
            if let Ok(r) = self.http.get(self.url("/readyz")).send().await {
                if r.status() == 200 {
                    return;
                }
            }
            tokio::time::sleep(Duration::from_millis(10)).await;
        }
        panic!("server never became ready");
    }

    pub async fn send(
        &self,
        token: &str,
        method: reqwest::Method,
        path: &str,
        body: Option<Value>,
        key: Option<&str>,
    ) -> (u16, Value) {
        let mut req = self
            .http
            .request(method, self.url(path))
            .bearer_auth(token);
        if let Some(k) = key {
            req = req.header("Idempotency-Key", k);
        }
        if let Some(b) = body {
            req = req
                .header("content-type", "application/json")
                .body(b.to_string());
        }
        let resp = req.send().await.unwrap();
        let status = resp.status().as_u16();
        let text = resp.text().await.unwrap();
        (status, serde_json::from_str(&text).unwrap_or(Value::String(text)))
    }

    pub async fn post(&self, token: &str, path: &str, body: Value) -> (u16, Value) {
        self.send(token, reqwest::Method::POST, path, Some(body), None)
            .await
    }

    pub async fn get(&self, token: &str, path: &str) -> (u16, Value) {
        self.send(token, reqwest::Method::GET, path, None, None).await
    }

    pub async fn ok(&self, token: &str, path: &str, body: Value) -> Value {
        let (status, v) = self.post(token, path, body).await;
        assert_eq!(status, 200, "{path}: {v}");
        v
    }

    /// Three experts (p-1..p-3), a patient (p-4) and circle c-1.
    pub async fn team(&self) {
        for (i, domain) in ["nutrition", "coach", "physician"].iter().enumerate() {
            self.ok(
                ADMIN,
                "/participants",
                serde_json::json!({"role":"Expert","domain":domain,"display_name":format!("E{}", i + 1)}),
            )
            .await;
        }
        self.ok(
            ADMIN,
            "/participants",
            serde_json::json!({"role":"EndUser","display_name":"Pat"}),
        )
        .await;
        self.ok(
            ADMIN,
            "/circles",
            serde_json::json!({"experts":["p-1","p-2","p-3"],"patients":["p-4"]}),
        )
        .await;
    }
}

/// Reads frames off an event stream.
pub struct SseReader {
    body: futures::stream::BoxStream<'static, reqwest::Result<axum::body::Bytes>>,
    buf: Vec<u8>,
}

impl SseReader {
    pub async fn open(s: &TestServer, token: &str, query: &str) -> (u16, Option<Self>) {
        let resp = s
            .http
            .get(s.url(&format!("/stream{query}")))
            .bearer_auth(token)
            .send()
            .await
            .unwrap();
        let status = resp.status().as_u16();
        if status != 200 {
            return (status, None);
        }
        (
            status,
            Some(Self {
                body: resp.bytes_stream().boxed(),
                buf: Vec::new(),
            }),
        )
    }

    /// The next raw frame including its terminating blank line, or `None`
    /// when the stream ends or nothing arrives within `wait`.
    pub async fn next_frame(&mut self, wait: Duration) -> Option<String> {
        loop {
            if let Some(pos) = self.buf.windows(2).position(|w| w == b"\n\n") {
                let frame: Vec<u8> = self.buf.drain(..pos + 2).collect();
                return Some(String::from_utf8(frame).unwrap());
            }
            match tokio::time::timeout(wait, self.body.next()).await {
                Ok(Some(Ok(chunk))) => self.buf.extend_from_slice(&chunk),
                _ => return None,
            }
        }
    }
}
