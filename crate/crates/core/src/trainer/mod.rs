//! Three-phase training driver: warmup, alternating path search under an
//! energy budget, and variation-aware retraining.

mod data;
mod model;
mod phases;
mod schedule;

pub use data::Dataset;
pub use model::{
    quantize_symmetric, Checkpoint, ConvBlock, ForwardOptions, ForwardPass, Layer, LinearLayer,
    MixMode, Model, ModelSpec, ParamGroup,
};
pub use phases::{
    assignment_energy, digital_ratios, evaluate, run_retrain, run_search, run_warmup,
    AccuracyStats, MetricsRecord, MetricsSink, Phase, SearchOutcome,
};
pub use schedule::{tau_schedule, NoiseSpec, PhaseSchedule};
