//! Scenario loading, experiment runs and trace output.

pub mod profiles;
pub mod run;
pub mod scenario;

pub use profiles::{ingest_profiles, Profile, ProfileError};
pub use run::{
    emit_traces, run_adversary, run_scenario, AdversaryKind, HarnessError, RunMode, RunOptions,
    RunReport, TransportKind,
};
pub use scenario::{
    load_scenario, write_bundled, Scenario, ScenarioError, ScenarioFile, SyntheticDay,
};
