//! Simulation harness for caremesh.
//!
//! * [`scenario`] parses line-delimited scenario scripts and [`runner`]
//!   plays them against a [`target::Target`], in process or over HTTP.
//! * [`oracle`] checks the approval gate exhaustively against a reference
//!   machine.
//! * [`fuzz`] and [`faults`] drive random command sequences and random
//!   stream faults.
//! * [`equivalence`] compares HTTP and in-process event logs.
//! * [`load`] measures enqueue-to-subscriber latency under a notification
//!   mix.

pub mod equivalence;
pub mod faults;
pub mod fuzz;
pub mod load;
pub mod oracle;
pub mod runner;
pub mod scenario;
pub mod target;

pub use runner::{run, RunReport};
pub use scenario::Scenario;
pub use target::{Http, InProcess, Target, TargetError};

use std::collections::BTreeMap;
use std::path::PathBuf;

use caremesh_server::TokenFile;

/// Token file for a scenario's cast: `tok-admin` for the administrator and
/// `tok-p-N` for each participant, matching the ids the cast will receive.
pub fn scenario_tokens(scenario: &Scenario) -> TokenFile {
    let participants: BTreeMap<_, _> = scenario
        .cast
        .iter()
        .filter_map(|m| scenario.participant_id(&m.alias))
        .map(|id| {
            let token = format!("tok-{id}");
            (id, token)
        })
        .collect();
    TokenFile {
        admin: Some("tok-admin".into()),
        participants,
    }
}

/// The scenarios shipped with the harness, sorted by file name.
pub fn bundled_scenarios() -> std::io::Result<Vec<PathBuf>> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios");
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "scenario"))
        .collect();
    files.sort();
    Ok(files)
}
