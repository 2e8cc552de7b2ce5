//! Drivers behind the CLI subcommands.

mod ablate;
mod config;
mod metrics;
mod tasks;
mod train;
mod verify;

pub use ablate::{run_ablation, write_ablation_csv, AblateConfig, AblationRow, CellStatus};
pub use config::{
    load_dynamics_spec, parse_json, Never, OptimizerKind, Rho, RunConfig, Schedule, SwitchFreq, Task,
};
pub use metrics::{read_jsonl, write_json, write_jsonl, MetricRecord, RunMeta, Summary};
pub use tasks::{accuracy, build_problem, Batcher, Problem, Streams};
pub use train::{layer_optimizer, run_train, TrainOutcome};
pub use verify::{run_verify, Check, VerifyOptions, VerifyReport};
