use std::path::PathBuf;
use std::time::Duration;

use caremesh_core::{replay, EventLog, LogOptions};
use caremesh_harness::equivalence::{compare, LocalServer};
use caremesh_harness::target::Target;
use caremesh_harness::{bundled_scenarios, scenario_tokens, Http, Scenario};

#[test]
fn bundled_scenarios_log_the_same_bytes_over_http() {
    for file in bundled_scenarios().unwrap() {
        let s = Scenario::load(&file).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let eq = compare(&s, dir.path()).unwrap();
        assert!(eq.in_process.passed(), "{}", eq.in_process.render());
        assert!(eq.wire.passed(), "{}", eq.wire.render());
        assert!(
            eq.identical(),
            "{}: logs differ at line {:?}",
            s.name,
            eq.first_difference
        );
        assert_eq!(eq.wire.log_digest, eq.in_process.log_digest);
        assert_eq!(eq.wire.state_digest, eq.in_process.state_digest);
    }
}

#[test]
fn server_started_on_the_golden_log_serves_the_golden_state() {
    let golden = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios/golden");
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(golden.join("fig3.log"), dir.path().join("events.log")).unwrap();
    let expected = {
        let log = EventLog::open(dir.path().join("events.log"), LogOptions::default()).unwrap();
        replay(log.events()).unwrap()
    };
    assert_eq!(
        expected.canonical() + "\n",
        std::fs::read_to_string(golden.join("fig3.state.json")).unwrap()
    );

    let s = Scenario::load(&PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios/fig3.scenario"))
        .unwrap();
    let tokens = scenario_tokens(&s);
    let server = LocalServer::start(dir.path(), tokens.clone()).unwrap();
    let mut http = Http::new(server.base_url(), tokens).unwrap();
    http.wait_ready(Duration::from_secs(10)).unwrap();
    let digests = http.digests().unwrap();
    assert_eq!(digests.head, 14);
    assert_eq!(digests.state_digest, expected.digest());
    assert_eq!(Some(digests.log_digest), s.golden);

    let patient = s.participant_id("pat").unwrap();
    let inbox = http.poll(&patient, 0).unwrap();
    assert_eq!(inbox.len(), 1);
    assert_eq!(inbox[0].body.text, "Switch to a low-sodium diet from Monday");
}
