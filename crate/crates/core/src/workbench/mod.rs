//! Configuration, datasets, artifacts and the experiment commands.

pub mod artifacts;
pub mod commands;
mod config;
mod dataset;
mod units;

pub use config::{
    load_config, parse_config, DatasetSpec, EvalSettings, IdxSpec, RunConfig, SearchSettings,
    SynthSpec,
};
pub use dataset::{
    load_idx_dataset, read_idx_images, read_idx_labels, synth_dataset, synth_split,
    write_idx_images, write_idx_labels, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC,
};
pub use units::parse_si;
