//! Experiment configuration, the simulation loop and its outputs.

pub mod batch;
pub mod config;
pub mod log;
pub mod noise;
pub mod run;

pub use batch::{load_dir, run_batch, BatchItem};
pub use config::{
    default_experiment, load_config, parse_config, ControllerKind, ExperimentConfig, FilterModel, NoiseModel,
};
pub use log::{emit, parse_csv, to_csv, to_json, to_svg, Format, Record, RunSummary, TrajectoryLog};
pub use noise::{disturbance, inject_noise};
pub use run::{build_controller, run, run_with_controller, NncController, RunOutput};
