//! The single writer. Every mutating request is queued to one thread that
//! owns write access to the coordinator, so commands apply in arrival order
//! and a slow client never holds the lock.

use std::collections::{HashMap, VecDeque};
use std::sync::Arc;
use std::thread::JoinHandle;

use caremesh_core::{canonical, Command, Coordinator};
use parking_lot::RwLock;
use tokio::sync::{mpsc, oneshot};

use crate::error::ApiError;

/// Remembered idempotency keys. Oldest entries are forgotten first.
const IDEMPOTENCY_CAPACITY: usize = 10_000;

pub type CommandResult = Result<String, ApiError>;

/// A client-supplied idempotency key, scoped to the caller.
#[derive(Debug, Clone)]
pub struct IdempotencyKey {
    pub scope: String,
    pub key: String,
}

enum Job {
    Run {
        command: Command,
        key: Option<IdempotencyKey>,
        reply: oneshot::Sender<CommandResult>,
    },
    Stop,
}

pub struct Engine {
    core: Arc<RwLock<Coordinator>>,
    tx: mpsc::UnboundedSender<Job>,
    worker: parking_lot::Mutex<Option<JoinHandle<()>>>,
}

impl Engine {
    pub fn start(coordinator: Coordinator) -> Self {
        let core = Arc::new(RwLock::new(coordinator));
        let (tx, rx) = mpsc::unbounded_channel();
        let worker_core = core.clone();
        let worker = std::thread::Builder::new()
            .name("caremesh-commands".into())
            .spawn(move || command_loop(worker_core, rx))
            .expect("spawn command thread");
        Self {
            core,
            tx,
            worker: parking_lot::Mutex::new(Some(worker)),
        }
    }

    /// Shared read access for queries and stream setup.
    pub fn core(&self) -> &Arc<RwLock<Coordinator>> {
        &self.core
    }

    /// Queues `command` and waits for its canonical reply.
    pub async fn execute(&self, command: Command, key: Option<IdempotencyKey>) -> CommandResult {
        let (reply, rx) = oneshot::channel();
        self.tx
            .send(Job::Run {
                command,
                key,
                reply,
            })
            .map_err(|_| ApiError::shutting_down())?;
        rx.await.map_err(|_| ApiError::shutting_down())?
    }

    /// Lets every queued command finish, then stops the thread.
    pub fn stop(&self) {
        let _ = self.tx.send(Job::Stop);
        if let Some(worker) = self.worker.lock().take() {
            let _ = worker.join();
        }
    }
}

impl Drop for Engine {
    fn drop(&mut self) {
        self.stop();
    }
}

struct Remembered {
    fingerprint: String,
    result: CommandResult,
}

#[derive(Default)]
struct IdempotencyCache {
    entries: HashMap<(String, String), Remembered>,
    order: VecDeque<(String, String)>,
}

impl IdempotencyCache {
    fn get(&self, id: &(String, String)) -> Option<&Remembered> {
        self.entries.get(id)
    }

    fn put(&mut self, id: (String, String), remembered: Remembered) {
        if self.entries.len() >= IDEMPOTENCY_CAPACITY {
            if let Some(old) = self.order.pop_front() {
                self.entries.remove(&old);
            }
        }
        self.order.push_back(id.clone());
        self.entries.insert(id, remembered);
    }
}

fn command_loop(core: Arc<RwLock<Coordinator>>, mut rx: mpsc::UnboundedReceiver<Job>) {
    let mut cache = IdempotencyCache::default();
    while let Some(job) = rx.blocking_recv() {
        let (command, key, reply) = match job {
            Job::Run {
                command,
                key,
                reply,
            } => (command, key, reply),
            Job::Stop => break,
        };
        let fingerprint = canonical::to_string(&command)
            .map(|s| canonical::sha256_hex(s.as_bytes()))
            .unwrap_or_default();
        let id = key.map(|k| (k.scope, k.key));
        if let Some(id) = &id {
            if let Some(seen) = cache.get(id) {
                let result = if seen.fingerprint == fingerprint {
                    seen.result.clone()
                } else {
                    Err(ApiError::new(
                        axum::http::StatusCode::CONFLICT,
                        "IdempotencyKeyReused",
                        format!("idempotency key {:?} was used for a different request", id.1),
                    ))
                };
                let _ = reply.send(result);
                continue;
            }
        }
        let name = command.name();
        let result = core
            .write()
            .execute(command)
            .map_err(ApiError::from)
            .and_then(|r| {
                canonical::to_string(&r).map_err(|e| {
                    ApiError::new(
                        axum::http::StatusCode::INTERNAL_SERVER_ERROR,
                        "EncodeFailure",
                        e.to_string(),
                    )
                })
            });
        match &result {
            Ok(_) => tracing::debug!(command = name, "applied"),
            Err(e) => tracing::debug!(command = name, code = %e.code, "refused"),
        }
        if let Some(id) = id {
            cache.put(
                id,
                Remembered {
                    fingerprint,
                    result: result.clone(),
                },
            );
        }
        let _ = reply.send(result);
    }
    tracing::debug!("command queue drained");
}

