//! Scenario harness: configuration, presets, the round loop, warm-up,
//! parameter sweep and reports.

pub mod config;
pub mod presets;
pub mod pretrain;
pub mod report;
pub mod sim;
pub mod sweep;
pub mod timing;

pub use config::{GraphSpec, IpmKnowledge, MitigationScheme, ScenarioConfig};
pub use presets::{describe, preset, PRESET_NAMES};
pub use pretrain::{
    pretrain_on, pretraining_config, record_stream, replay, run_pretraining, run_scenario, run_scenario_with,
    simulate, RecordedStream,
};
pub use report::{DetectionSummary, OverheadSummary, RoundReport, RunReport};
pub use sim::{DetectMode, SimOptions, Simulation};
pub use sweep::{grid_search, write_sweep_csv, SweepGrid, SweepResult, SweepRow};
