//! Runs a scenario both in process and over HTTP against a fresh local
//! server, then compares the two event logs byte for byte.

use std::path::{Path, PathBuf};
use std::time::Duration;

use caremesh_server::{ClockMode, Config, ServeError, ServerHandle, TokenFile, TokenTable};
use serde::Serialize;

use crate::runner::{self, RunReport};
use crate::scenario::Scenario;
use crate::target::{Http, InProcess};

#[derive(Debug, thiserror::Error)]
pub enum EquivalenceError {
    #[error("runtime: {0}")]
    Runtime(#[from] std::io::Error),
    #[error("server: {0}")]
    Server(#[from] ServeError),
    #[error("tokens: {0}")]
    Tokens(#[from] caremesh_server::tokens::TokenError),
    #[error("client: {0}")]
    Client(#[from] crate::target::TargetError),
    #[error("log: {0}")]
    Log(#[from] caremesh_core::StoreError),
}

/// A caremesh server on a private runtime, logging with the logical clock
/// so its log is comparable with an in-process run.
pub struct LocalServer {
    rt: tokio::runtime::Runtime,
    handle: Option<ServerHandle>,
    pub log_path: PathBuf,
}

impl LocalServer {
    pub fn start(dir: &Path, tokens: TokenFile) -> Result<Self, EquivalenceError> {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()?;
        let config = Config {
            bind: ([127, 0, 0, 1], 0).into(),
            log_path: dir.join("events.log"),
            token_file: dir.join("tokens.json"),
            heartbeat_secs: 30,
            fsync: false,
            clock: ClockMode::Logical,
            ..Config::default()
        };
        let log_path = config.log_path.clone();
        let table = TokenTable::from_file(tokens)?;
        let handle = rt.block_on(caremesh_server::start(config, table))?;
        Ok(Self {
            rt,
            handle: Some(handle),
            log_path,
        })
    }

    pub fn base_url(&self) -> String {
        self.handle.as_ref().map(ServerHandle::base_url).unwrap_or_default()
    }

    /// Stops the server once every queued command is on disk.
    pub fn stop(mut self) -> Result<(), EquivalenceError> {
        match self.handle.take() {
            Some(h) => Ok(self.rt.block_on(h.stop())?),
            None => Ok(()),
        }
    }
}

impl Drop for LocalServer {
    fn drop(&mut self) {
        if let Some(h) = self.handle.take() {
            let _ = self.rt.block_on(h.stop());
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Equivalence {
    pub scenario: String,
    pub in_process: RunReport,
    pub wire: RunReport,
    pub core_bytes: usize,
    pub wire_bytes: usize,
    /// 1-based line of the first differing record, if any.
    pub first_difference: Option<usize>,
}

impl Equivalence {
    pub fn identical(&self) -> bool {
        self.first_difference.is_none() && self.core_bytes == self.wire_bytes
    }
}

fn first_difference(a: &[u8], b: &[u8]) -> Option<usize> {
    let mut lines_a = a.split(|c| *c == b'\n');
    let mut lines_b = b.split(|c| *c == b'\n');
    let mut line = 0;
    loop {
        line += 1;
        match (lines_a.next(), lines_b.next()) {
            (None, None) => return None,
            (x, y) if x != y => return Some(line),
            _ => {}
        }
    }
}

/// Runs `scenario` both ways. `dir` holds the server's log and must be
/// empty.
pub fn compare(scenario: &Scenario, dir: &Path) -> Result<Equivalence, EquivalenceError> {
    let mut local = InProcess::new();
    let in_process = runner::run(scenario, &mut local);
    let core = local.coordinator.log().to_bytes()?;

    let tokens = crate::scenario_tokens(scenario);
    let server = LocalServer::start(dir, tokens.clone())?;
    let mut http = Http::new(server.base_url(), tokens)?;
    http.wait_ready(Duration::from_secs(10))?;
    let wire = runner::run(scenario, &mut http);
    drop(http);
    let log_path = server.log_path.clone();
    server.stop()?;
    let on_disk = std::fs::read(&log_path)?;

    Ok(Equivalence {
        scenario: scenario.name.clone(),
        in_process,
        wire,
        core_bytes: core.len(),
        wire_bytes: on_disk.len(),
        first_difference: first_difference(&core, &on_disk),
    })
}

#[cfg(test)]
mod tests {
    use super::first_difference;

    #[test]
    fn difference_is_reported_by_line() {
        assert_eq!(first_difference(b"a\nb\n", b"a\nb\n"), None);
        assert_eq!(first_difference(b"a\nb\n", b"a\nc\n"), Some(2));
        assert_eq!(first_difference(b"a\n", b"a\nb\n"), Some(2));
    }
}
