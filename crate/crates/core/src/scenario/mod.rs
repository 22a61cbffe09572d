//! Scenario configuration, the simulation loop, reports, and the bundled
//! scenarios.

pub mod config;
pub mod report;
pub mod run;

pub use config::{load_config, parse_config, ConfigError, Role, ScenarioConfig};
pub use report::{emit_report, ActorOutcome, Event, ReportFormat, ScenarioReport};
pub use run::{in_process_backend, run, run_traced, run_with_backend, RunOutput, RunTrace};

/// Scenario files shipped with the crate, by name.
pub const BUNDLED: &[(&str, &str)] = &[
    ("no_attack", include_str!("../../scenarios/no_attack.json")),
    ("relay_gaen_only", include_str!("../../scenarios/relay_gaen_only.json")),
    ("scenario1", include_str!("../../scenarios/scenario1.json")),
    ("scenario2", include_str!("../../scenarios/scenario2.json")),
    ("replay_expired", include_str!("../../scenarios/replay_expired.json")),
];

pub fn bundled(name: &str) -> Option<Result<ScenarioConfig, ConfigError>> {
    BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, json)| parse_config(json))
}
