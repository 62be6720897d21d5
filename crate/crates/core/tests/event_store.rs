mod common;

use std::fs;

use caremesh_core::store::{self, LOG_HEADER, SNAPSHOT_EVERY};
use caremesh_core::{
    replay, Clock, Coordinator, Durability, EventLog, LogOptions, Payload, StoreError,
};
use common::{care_week, Team};

fn opts() -> LogOptions {
    LogOptions {
        clock: Clock::System,
        durability: Durability::Flush,
    }
}

#[test]
fn replayed_log_matches_live_state() {
    let t = care_week(Coordinator::in_memory());
    let replayed = replay(t.c.log().events()).unwrap();
    assert_eq!(replayed.canonical(), t.c.state().canonical());
    assert_eq!(replayed.digest(), t.c.state().digest());
}

#[test]
fn two_replays_are_identical() {
    let t = care_week(Coordinator::in_memory());
    let a = replay(t.c.log().events()).unwrap();
    let b = replay(t.c.log().events()).unwrap();
    assert_eq!(a.canonical(), b.canonical());
}

#[test]
fn every_prefix_replays() {
    let t = care_week(Coordinator::in_memory());
    let events = t.c.log().events();
    for cut in 0..=events.len() {
        let s = replay(&events[..cut]).unwrap();
        assert_eq!(s.head(), cut as u64);
    }
}

#[test]
fn reopened_file_log_restores_state() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("events.log");
    let live = care_week(Coordinator::open(&path, opts()).unwrap());
    let digest = live.c.state().digest();
    let log_digest = live.c.log().digest();
    drop(live);

    let mut again = Coordinator::open(&path, opts()).unwrap();
    assert_eq!(again.state().digest(), digest);
    assert_eq!(again.log().digest(), log_digest);
    // and it keeps going from where it stopped
    let head = again.log().head();
    let e = caremesh_core::ParticipantId::nth(1);
    let circle = caremesh_core::CircleId::nth(1);
    again
        .submit_notification(&e, &circle, "T1", Payload::text("after restart"))
        .unwrap();
    assert!(again.log().head() > head);
    let text = fs::read_to_string(&path).unwrap();
    assert!(text.starts_with(LOG_HEADER));
    assert_eq!(text.lines().count() as u64, again.log().head() + 1);
}

#[test]
fn clocks_differ_but_content_digest_agrees() {
    let dir = tempfile::tempdir().unwrap();
    let wall = care_week(Coordinator::open(dir.path().join("a.log"), opts()).unwrap());
    let logical = care_week(Coordinator::in_memory());
    assert_eq!(wall.c.log().digest(), logical.c.log().digest());
    assert_eq!(wall.c.state().digest(), logical.c.state().digest());
}

#[test]
fn logical_clock_logs_are_byte_identical() {
    let a = care_week(Coordinator::in_memory());
    let b = care_week(Coordinator::in_memory());
    assert_eq!(a.c.log().to_bytes().unwrap(), b.c.log().to_bytes().unwrap());
}

#[test]
fn corrupted_record_is_reported_with_its_seq() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("events.log");
    drop(care_week(Coordinator::open(&path, opts()).unwrap()));
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    // record 5 sits on line 6 after the header
    lines[5] = lines[5].replacen("\"seq\":5", "\"seq\":5 ", 1);
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    let err = Coordinator::open(&path, opts()).unwrap_err();
    assert_eq!(err.corrupt_seq(), Some(5), "{err}");
    assert!(matches!(err, StoreError::CorruptRecord { .. }));
}

#[test]
fn refused_commands_leave_the_log_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("events.log");
    let mut t = Team::on(Coordinator::open(&path, opts()).unwrap(), 1);
    let before = fs::read(&path).unwrap();
    let (e, circle) = (t.e(0).clone(), t.circle.clone());
    assert!(t
        .c
        .submit_notification(&e, &circle, "T2", Payload::text("x"))
        .is_err());
    assert_eq!(fs::read(&path).unwrap(), before);
}

#[test]
fn snapshot_equals_replay_of_its_prefix() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("events.log");
    let mut t = Team::on(Coordinator::open(&path, opts()).unwrap(), 3);
    let (e, circle) = (t.e(0).clone(), t.circle.clone());
    while t.c.log().head() < SNAPSHOT_EVERY + 10 {
        t.c.submit_notification(&e, &circle, "T1", Payload::text("tick"))
            .unwrap();
    }
    let (seq, snapshot) = store::read_snapshot(&path).expect("snapshot written");
    assert!(seq >= SNAPSHOT_EVERY);
    let prefix = replay(&t.c.log().events()[..seq as usize]).unwrap();
    let expected: serde_json::Value = serde_json::from_str(&prefix.canonical()).unwrap();
    assert_eq!(snapshot, expected);
}

#[test]
fn in_memory_and_file_logs_share_framing() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("events.log");
    let mut file_log = EventLog::open(
        &path,
        LogOptions {
            clock: Clock::Logical,
            durability: Durability::Fsync,
        },
    )
    .unwrap();
    let mut mem = EventLog::in_memory(Clock::Logical);
    let t = care_week(Coordinator::in_memory());
    let bodies: Vec<_> = t.c.log().events().iter().map(|e| e.body.clone()).collect();
    file_log.append(bodies.clone()).unwrap();
    mem.append(bodies).unwrap();
    assert_eq!(fs::read(&path).unwrap(), mem.to_bytes().unwrap());
}
