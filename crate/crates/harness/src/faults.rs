//! Randomized stream fault schedules.
//!
//! Every mailbox has a client that reads a live feed. Between random
//! commands the schedule drops connections, reconnects from the last seen
//! seq or from a stale one, lets clients fall behind until the hub cuts them
//! off, and reads in random bursts. At the end each client catches up and
//! its deduplicated sequence must equal the mailbox log.

use std::collections::VecDeque;

use caremesh_core::{Clock, Coordinator, Delivery, EventLog, Hub, ParticipantId, Subscription};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::fuzz::World;
use crate::runner::audit_frames;

struct Client {
    who: ParticipantId,
    backlog: VecDeque<Delivery>,
    live: Option<Subscription>,
    frames: Vec<Delivery>,
}

impl Client {
    fn last_seq(&self) -> u64 {
        self.frames.iter().map(|d| d.seq).max().unwrap_or(0)
    }

    fn connect(&mut self, c: &Coordinator, after: u64) {
        let (backlog, live) = c.resume(&self.who, after).expect("mailbox exists");
        self.backlog = backlog.into();
        self.live = Some(live);
    }

    /// Reads up to `budget` frames. Returns true if the server cut the feed.
    fn read(&mut self, budget: usize) -> bool {
        for _ in 0..budget {
            if let Some(d) = self.backlog.pop_front() {
                self.frames.push(d);
                continue;
            }
            let Some(live) = self.live.as_mut() else {
                return false;
            };
            match live.try_recv() {
                Ok(d) => self.frames.push(d),
                Err(false) => return false,
                Err(true) => {
                    self.live = None;
                    return true;
                }
            }
        }
        false
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct FaultReport {
    pub schedules: usize,
    pub passed: usize,
    pub deliveries: u64,
    pub drops: u64,
    pub lag_cutoffs: u64,
    pub stale_reconnects: u64,
    pub failures: Vec<String>,
}

#[derive(Default)]
struct Tally {
    deliveries: u64,
    drops: u64,
    lag_cutoffs: u64,
    stale: u64,
}

fn schedule(seed: u64) -> Result<Tally, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let buffer = rng.random_range(1..=8);
    let coordinator =
        Coordinator::from_log_with_hub(EventLog::in_memory(Clock::Logical), Hub::new(buffer))
            .map_err(|e| e.to_string())?;
    let mut world = World::new(
        coordinator,
        rng.random_range(2..=4),
        rng.random_range(1..=2),
    );
    let mut clients: Vec<Client> = world
        .everyone()
        .into_iter()
        .map(|who| Client {
            who,
            backlog: VecDeque::new(),
            live: None,
            frames: Vec::new(),
        })
        .collect();
    for client in &mut clients {
        client.connect(&world.coordinator, 0);
    }
    let mut tally = Tally::default();
    let steps = rng.random_range(20..150);
    for _ in 0..steps {
        let i = rng.random_range(0..clients.len());
        match rng.random_range(0..20) {
            0..=10 => {
                world.step(&mut rng);
            }
            11..=13 => {
                let budget = rng.random_range(1..6);
                if clients[i].read(budget) {
                    tally.lag_cutoffs += 1;
                    let after = clients[i].last_seq();
                    clients[i].connect(&world.coordinator, after);
                }
            }
            14..=15 => {
                if clients[i].live.take().is_some() {
                    tally.drops += 1;
                }
                clients[i].backlog.clear();
            }
            16..=17 => {
                let after = clients[i].last_seq();
                clients[i].connect(&world.coordinator, after);
            }
            _ => {
                // a client that lost its cursor replays from further back
                let last = clients[i].last_seq();
                let after = rng.random_range(0..=last);
                tally.stale += u64::from(after < last);
                clients[i].connect(&world.coordinator, after);
            }
        }
    }
    for client in &mut clients {
        loop {
            if client.live.is_none() {
                let after = client.last_seq();
                client.connect(&world.coordinator, after);
            }
            if !client.read(usize::MAX) {
                break;
            }
            tally.lag_cutoffs += 1;
        }
        let mailbox = world
            .coordinator
            .poll(&client.who, 0, usize::MAX)
            .map_err(|e| e.to_string())?;
        let n = audit_frames(&client.frames, &mailbox)
            .map_err(|e| format!("seed {seed}, mailbox {}: {e}", client.who))?;
        tally.deliveries += n as u64;
    }
    Ok(tally)
}

pub fn run(schedules: usize, seed: u64) -> FaultReport {
    let mut report = FaultReport {
        schedules,
        ..Default::default()
    };
    for i in 0..schedules {
        match schedule(seed.wrapping_add(i as u64)) {
            Ok(t) => {
                report.passed += 1;
                report.deliveries += t.deliveries;
                report.drops += t.drops;
                report.lag_cutoffs += t.lag_cutoffs;
                report.stale_reconnects += t.stale;
            }
            Err(e) => report.failures.push(e),
        }
    }
    report
}

#[cfg(test)]
mod tests {
    #[test]
    fn a_few_schedules_lose_nothing() {
        let r = super::run(40, 11);
        assert!(r.failures.is_empty(), "{:?}", r.failures);
        assert!(r.drops > 0 && r.lag_cutoffs > 0 && r.stale_reconnects > 0);
    }
}
