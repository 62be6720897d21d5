//! Where a scenario runs: directly against a coordinator, or over HTTP
//! against a running server.

use std::collections::{HashMap, VecDeque};
use std::sync::mpsc;
use std::time::Duration;

use caremesh_core::{Command, Coordinator, Delivery, ParticipantId, Reply, Subscription};
use caremesh_server::wire::{self, Method};
use caremesh_server::{Digests, MailboxPage, TokenFile};
use futures::StreamExt;
use serde::Deserialize;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{code}: {message}")]
pub struct TargetError {
    pub code: String,
    pub message: String,
}

impl TargetError {
    fn transport(e: impl std::fmt::Display) -> Self {
        Self {
            code: "Transport".into(),
            message: e.to_string(),
        }
    }
}

impl From<caremesh_core::CoordError> for TargetError {
    fn from(e: caremesh_core::CoordError) -> Self {
        Self {
            code: e.code().into(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeedItem {
    Delivery(Delivery),
    /// Nothing arrived within the wait.
    Idle,
    /// The server ended the feed; resume from the last seen seq.
    Closed,
}

/// A client's live view of one mailbox.
pub trait Feed: Send {
    fn next(&mut self, wait: Duration) -> FeedItem;
}

pub trait Target {
    fn execute(&mut self, command: Command) -> Result<Reply, TargetError>;
    /// Every delivery with `seq > after_seq`.
    fn poll(&mut self, mailbox: &ParticipantId, after_seq: u64)
        -> Result<Vec<Delivery>, TargetError>;
    /// Backlog after `after_seq`, then live deliveries.
    fn open_feed(
        &mut self,
        mailbox: &ParticipantId,
        after_seq: u64,
    ) -> Result<Box<dyn Feed>, TargetError>;
    fn digests(&mut self) -> Result<Digests, TargetError>;
    fn describe(&self) -> String;
}

pub struct InProcess {
    pub coordinator: Coordinator,
}

impl InProcess {
    pub fn new() -> Self {
        Self {
            coordinator: Coordinator::in_memory(),
        }
    }
}

impl Default for InProcess {
    fn default() -> Self {
        Self::new()
    }
}

struct LocalFeed {
    backlog: VecDeque<Delivery>,
    live: Subscription,
}

impl Feed for LocalFeed {
    fn next(&mut self, _wait: Duration) -> FeedItem {
        if let Some(d) = self.backlog.pop_front() {
            return FeedItem::Delivery(d);
        }
        // publishing is synchronous with the command, so there is nothing
        // worth waiting for
        match self.live.try_recv() {
            Ok(d) => FeedItem::Delivery(d),
            Err(true) => FeedItem::Closed,
            Err(false) => FeedItem::Idle,
        }
    }
}

impl Target for InProcess {
    fn execute(&mut self, command: Command) -> Result<Reply, TargetError> {
        Ok(self.coordinator.execute(command)?)
    }

    fn poll(
        &mut self,
        mailbox: &ParticipantId,
        after_seq: u64,
    ) -> Result<Vec<Delivery>, TargetError> {
        Ok(self.coordinator.poll(mailbox, after_seq, usize::MAX)?)
    }

    fn open_feed(
        &mut self,
        mailbox: &ParticipantId,
        after_seq: u64,
    ) -> Result<Box<dyn Feed>, TargetError> {
        let (backlog, live) = self.coordinator.resume(mailbox, after_seq)?;
        Ok(Box::new(LocalFeed {
            backlog: backlog.into(),
            live,
        }))
    }

    fn digests(&mut self) -> Result<Digests, TargetError> {
        Ok(Digests {
            head: self.coordinator.log().head(),
            log_digest: self.coordinator.log().digest(),
            state_digest: self.coordinator.state().digest(),
        })
    }

    fn describe(&self) -> String {
        "in-process".into()
    }
}

#[derive(Deserialize)]
struct ErrorBody {
    code: String,
    message: String,
}

/// A caremesh server reached over HTTP, speaking for every participant in
/// its token file.
pub struct Http {
    base: String,
    admin: Option<String>,
    tokens: HashMap<ParticipantId, String>,
    client: reqwest::Client,
    rt: tokio::runtime::Runtime,
}

impl Http {
    pub fn new(base: impl Into<String>, tokens: TokenFile) -> Result<Self, TargetError> {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .map_err(TargetError::transport)?;
        Ok(Self {
            base: base.into().trim_end_matches('/').to_string(),
            admin: tokens.admin,
            tokens: tokens.participants.into_iter().collect(),
            client: reqwest::Client::new(),
            rt,
        })
    }

    /// Waits until the server has replayed its log and answers commands.
    pub fn wait_ready(&self, timeout: Duration) -> Result<(), TargetError> {
        let url = format!("{}/readyz", self.base);
        self.rt.block_on(async {
            let deadline = tokio::time::Instant::now() + timeout;
            loop {
                if let Ok(r) = self.client.get(&url).send().await {
                    if r.status().is_success() {
                        return Ok(());
                    }
                }
                if tokio::time::Instant::now() >= deadline {
                    return Err(TargetError::transport(format!("{url} not ready")));
                }
                tokio::time::sleep(Duration::from_millis(10)).await;
            }
        })
    }

    fn token(&self, who: Option<&ParticipantId>) -> Result<String, TargetError> {
        let token = match who {
            None => self.admin.clone(),
            Some(p) => self.tokens.get(p).cloned(),
        };
        token.ok_or_else(|| TargetError {
            code: "NoToken".into(),
            message: format!(
                "token file has no token for {}",
                who.map_or("admin".to_string(), |p| p.to_string())
            ),
        })
    }

    fn send(
        &self,
        method: reqwest::Method,
        path: &str,
        token: &str,
        body: Option<String>,
    ) -> Result<serde_json::Value, TargetError> {
        let mut req = self
            .client
            .request(method, format!("{}{}", self.base, path))
            .bearer_auth(token);
        if let Some(body) = body {
            req = req.header("content-type", "application/json").body(body);
        }
        self.rt.block_on(async move {
            let resp = req.send().await.map_err(TargetError::transport)?;
            let status = resp.status();
            let bytes = resp.bytes().await.map_err(TargetError::transport)?;
            if status.is_success() {
                serde_json::from_slice(&bytes).map_err(TargetError::transport)
            } else {
                match serde_json::from_slice::<ErrorBody>(&bytes) {
                    Ok(e) => Err(TargetError {
                        code: e.code,
                        message: e.message,
                    }),
                    Err(_) => Err(TargetError::transport(format!(
                        "{status}: {}",
                        String::from_utf8_lossy(&bytes)
                    ))),
                }
            }
        })
    }
}

impl Target for Http {
    fn execute(&mut self, command: Command) -> Result<Reply, TargetError> {
        let req = wire::request_for(&command);
        let token = if req.admin {
            self.token(None)?
        } else {
            self.token(command.actor())?
        };
        let method = match req.method {
            Method::Post => reqwest::Method::POST,
            Method::Patch => reqwest::Method::PATCH,
        };
        let body = caremesh_core::canonical::value_to_string(&req.body);
        let value = self.send(method, &req.path, &token, Some(body))?;
        Reply::from_wire(&command, value).map_err(TargetError::transport)
    }

    fn poll(
        &mut self,
        mailbox: &ParticipantId,
        after_seq: u64,
    ) -> Result<Vec<Delivery>, TargetError> {
        let token = self.token(Some(mailbox))?;
        let mut out: Vec<Delivery> = Vec::new();
        let mut after = after_seq;
        loop {
            let page = self.send(
                reqwest::Method::GET,
                &format!("/mailbox?after_seq={after}&max_batch=1000"),
                &token,
                None,
            )?;
            let page: MailboxPage = serde_json::from_value(page).map_err(TargetError::transport)?;
            let Some(last) = page.deliveries.last() else {
                return Ok(out);
            };
            after = last.seq;
            out.extend(page.deliveries);
            if after >= page.head {
                return Ok(out);
            }
        }
    }

    fn open_feed(
        &mut self,
        mailbox: &ParticipantId,
        after_seq: u64,
    ) -> Result<Box<dyn Feed>, TargetError> {
        let token = self.token(Some(mailbox))?;
        let url = format!("{}/stream?after_seq={after_seq}", self.base);
        let client = self.client.clone();
        let (tx, rx) = mpsc::channel();
        let (cancel, cancelled) = tokio::sync::oneshot::channel::<()>();
        self.rt.spawn(async move {
            let read = async {
                let resp = match client.get(url).bearer_auth(token).send().await {
                    Ok(r) if r.status().is_success() => r,
                    _ => return,
                };
                let mut body = resp.bytes_stream();
                let mut buf: Vec<u8> = Vec::new();
                while let Some(Ok(chunk)) = body.next().await {
                    buf.extend_from_slice(&chunk);
                    while let Some(pos) = buf.windows(2).position(|w| w == b"\n\n") {
                        let frame: Vec<u8> = buf.drain(..pos + 2).collect();
                        if let Some(d) = parse_frame(&frame) {
                            if tx.send(FeedItem::Delivery(d)).is_err() {
                                return;
                            }
                        }
                    }
                }
            };
            tokio::select! {
                _ = read => { let _ = tx.send(FeedItem::Closed); }
                _ = cancelled => {}
            }
        });
        Ok(Box::new(HttpFeed {
            rx,
            _cancel: cancel,
        }))
    }

    fn digests(&mut self) -> Result<Digests, TargetError> {
        let token = self.token(None)?;
        let v = self.send(reqwest::Method::GET, "/state/digest", &token, None)?;
        serde_json::from_value(v).map_err(TargetError::transport)
    }

    fn describe(&self) -> String {
        self.base.clone()
    }
}

/// Parses one event-stream frame; heartbeats and unknown frames give `None`.
pub fn parse_frame(frame: &[u8]) -> Option<Delivery> {
    let text = std::str::from_utf8(frame).ok()?;
    let mut id = None;
    let mut data = None;
    for line in text.lines() {
        if let Some(v) = line.strip_prefix("id: ") {
            id = v.parse::<u64>().ok();
        } else if let Some(v) = line.strip_prefix("data: ") {
            data = Some(v);
        }
    }
    let d: Delivery = serde_json::from_str(data?).ok()?;
    (id == Some(d.seq)).then_some(d)
}

struct HttpFeed {
    rx: mpsc::Receiver<FeedItem>,
    // dropping the feed cancels the connection
    _cancel: tokio::sync::oneshot::Sender<()>,
}

impl Feed for HttpFeed {
    fn next(&mut self, wait: Duration) -> FeedItem {
        match self.rx.recv_timeout(wait) {
            Ok(item) => item,
            Err(mpsc::RecvTimeoutError::Timeout) => FeedItem::Idle,
            Err(mpsc::RecvTimeoutError::Disconnected) => FeedItem::Closed,
        }
    }
}
