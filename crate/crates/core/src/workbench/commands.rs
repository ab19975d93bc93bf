//! The workbench commands. Each reads a resolved [`RunConfig`], writes its
//! artifacts under `out`, and returns the summary it wrote.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::artifacts::{self, MetricsLog};
use super::config::{DatasetSpec, RunConfig};
use super::dataset::{load_idx_dataset, synth_split};
use crate::activation::{ActPath, AnalogActConfig};
use crate::device::{build_codebook, characterize_variation, VariationProfile};
use crate::energy::{
    layer_energy_terms, normalize, act_energy, system_energy_conventional, system_energy_mixed,
    ChannelCounts,
};
use crate::error::{Error, Result};
use crate::rng;
use crate::trainer::{
    self, evaluate, AccuracyStats, Checkpoint, Dataset, MetricsRecord, Model, Phase,
};

const INIT_STREAM: u64 = 0x1417;
const EVAL_STREAM: u64 = 0xE7A1;

/// Train and test splits named by the config.
pub fn load_data(cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    match &cfg.dataset {
        DatasetSpec::Synthetic(s) => synth_split(s, cfg.seed),
        DatasetSpec::Idx(idx) => {
            let train = load_idx_dataset(&idx.train_images, &idx.train_labels, idx.classes)?;
            let classes = idx.classes.unwrap_or(train.classes());
            let test = load_idx_dataset(&idx.test_images, &idx.test_labels, Some(classes))?;
            Ok((train, test))
        }
    }
}

pub fn analog_config(cfg: &RunConfig) -> Result<AnalogActConfig> {
    Ok(AnalogActConfig::new(build_codebook(&cfg.mtj)?))
}

/// Freshly initialized model for the config's data shape.
pub fn build_model(cfg: &RunConfig, data: &Dataset) -> Result<Model> {
    let mut model = Model::new(
        cfg.model.clone(),
        data.image_shape(),
        data.classes(),
        analog_config(cfg)?,
        rng::derive_seed(cfg.seed, INIT_STREAM),
    )?;
    model.hw = cfg.hardware.clone();
    Ok(model)
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    artifacts::write_json(path, &model.checkpoint())
}

pub fn load_model(cfg: &RunConfig, path: &Path) -> Result<Model> {
    let ck: Checkpoint = artifacts::read_json(path)?;
    let mut model = Model::from_checkpoint(ck, analog_config(cfg)?)?;
    model.hw = cfg.hardware.clone();
    Ok(model)
}

fn out_path(out: &Path, name: &str) -> PathBuf {
    out.join(name)
}

/// Latest checkpoint among the given phases, in order of preference.
fn latest_checkpoint(out: &Path, phases: &[&str]) -> Option<PathBuf> {
    phases
        .iter()
        .map(|p| out_path(out, &artifacts::model_file(p)))
        .find(|p| p.exists())
}

fn final_loss(records: &[MetricsRecord]) -> Option<f64> {
    records.last().map(|r| r.task_loss)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarmupSummary {
    pub epochs: usize,
    pub initial_loss: Option<f64>,
    pub final_loss: Option<f64>,
    pub test_accuracy: f64,
    pub model: PathBuf,
}

pub fn warmup(cfg: &RunConfig, out: &Path) -> Result<WarmupSummary> {
    artifacts::ensure_dir(out)?;
    let (train, test) = load_data(cfg)?;
    let mut model = build_model(cfg, &train)?;
    let mut log = MetricsLog::create(&out_path(out, &artifacts::metrics_file("warmup")))?;
    trainer::run_warmup(&mut model, &train, &cfg.schedule, cfg.seed, &mut |r| log.record(r))?;
    let records = log.finish()?;
    let model_path = out_path(out, &artifacts::model_file("warmup"));
    save_model(&model, &model_path)?;
    let summary = WarmupSummary {
        epochs: records.len(),
        initial_loss: records.first().map(|r| r.task_loss),
        final_loss: final_loss(&records),
        test_accuracy: evaluate(&model, &test, None, 1, cfg.seed)?.mean,
        model: model_path,
    };
    artifacts::write_json(&out_path(out, &artifacts::summary_file("warmup")), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSummary {
    pub epochs: usize,
    pub final_loss: Option<f64>,
    pub energy_trajectory: Vec<f64>,
    /// Normalized activation energy of the finalized assignment.
    pub normalized_energy: f64,
    pub digital_ratios: Vec<f64>,
    pub test_accuracy: f64,
    pub assignment: PathBuf,
    pub model: PathBuf,
}

/// Requires the warmup checkpoint in `out`.
pub fn search(cfg: &RunConfig, out: &Path) -> Result<SearchSummary> {
    artifacts::ensure_dir(out)?;
    let warm = out_path(out, &artifacts::model_file("warmup"));
    if !warm.exists() {
        return Err(Error::MissingArtifact(warm));
    }
    let (train, test) = load_data(cfg)?;
    let mut model = load_model(cfg, &warm)?;
    let mut log = MetricsLog::create(&out_path(out, &artifacts::metrics_file("search")))?;
    let outcome = trainer::run_search(
        &mut model,
        &train,
        &cfg.schedule,
        &cfg.constraint,
        &cfg.hardware,
        cfg.search.finalize,
        cfg.seed,
        &mut |r| log.record(r),
    )?;
    let records = log.finish()?;
    let assignment_path = out_path(out, artifacts::ASSIGNMENT_FILE);
    artifacts::write_assignment(&assignment_path, &outcome.assignment)?;
    let model_path = out_path(out, &artifacts::model_file("search"));
    save_model(&model, &model_path)?;
    let summary = SearchSummary {
        epochs: records.len(),
        final_loss: final_loss(&records),
        energy_trajectory: outcome.energy_trajectory,
        normalized_energy: trainer::assignment_energy(&outcome.assignment, &model, &cfg.hardware)?,
        digital_ratios: trainer::digital_ratios(&outcome.assignment),
        test_accuracy: evaluate(&model, &test, None, 1, cfg.seed)?.mean,
        assignment: assignment_path,
        model: model_path,
    };
    artifacts::write_json(&out_path(out, &artifacts::summary_file("search")), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrainSummary {
    pub epochs: usize,
    pub final_loss: Option<f64>,
    pub digital_ratios: Vec<f64>,
    pub test_accuracy: f64,
    pub model: PathBuf,
}

/// Requires `assignment.json` in `out`. Starts from the search checkpoint,
/// else the warmup checkpoint, else a fresh model.
pub fn retrain(cfg: &RunConfig, out: &Path) -> Result<RetrainSummary> {
    artifacts::ensure_dir(out)?;
    let assignment_path = out_path(out, artifacts::ASSIGNMENT_FILE);
    let assignment = artifacts::read_assignment(&assignment_path)?;
    let (train, test) = load_data(cfg)?;
    let mut model = match latest_checkpoint(out, &["search", "warmup"]) {
        Some(p) => load_model(cfg, &p)?,
        None => build_model(cfg, &train)?,
    };
    model.set_assignment(assignment)?;
    let mut log = MetricsLog::create(&out_path(out, &artifacts::metrics_file("retrain")))?;
    trainer::run_retrain(&mut model, &train, &cfg.schedule, &cfg.noise, cfg.seed, &mut |r| {
        log.record(r)
    })?;
    let records = log.finish()?;
    let model_path = out_path(out, &artifacts::model_file("retrain"));
    save_model(&model, &model_path)?;
    let summary = RetrainSummary {
        epochs: records.len(),
        final_loss: final_loss(&records),
        digital_ratios: model.digital_ratios(),
        test_accuracy: evaluate(&model, &test, None, 1, cfg.seed)?.mean,
        model: model_path,
    };
    artifacts::write_json(&out_path(out, &artifacts::summary_file("retrain")), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub model: PathBuf,
    pub clean_accuracy: f64,
    pub noisy: AccuracyStats,
}

/// Evaluates `model` (default: the latest checkpoint in `out`) on the test
/// split, once clean and `runs` times under the configured noise.
pub fn eval(cfg: &RunConfig, out: &Path, model: Option<&Path>, runs: Option<usize>) -> Result<EvalSummary> {
    artifacts::ensure_dir(out)?;
    let model_path = match model {
        Some(p) => p.to_path_buf(),
        None => latest_checkpoint(out, &["retrain", "search", "warmup"])
            .ok_or_else(|| Error::MissingArtifact(out_path(out, &artifacts::model_file("retrain"))))?,
    };
    let m = load_model(cfg, &model_path)?;
    let (_, test) = load_data(cfg)?;
    let runs = runs.unwrap_or(cfg.eval.runs);
    let eval_seed = rng::derive_seed(cfg.seed, EVAL_STREAM);
    let clean = evaluate(&m, &test, None, 1, eval_seed)?;
    let noisy = evaluate(&m, &test, Some(&cfg.noise), runs, eval_seed)?;
    let mut log = MetricsLog::create(&out_path(out, &artifacts::metrics_file("eval")))?;
    log.record(&MetricsRecord {
        phase: Phase::Eval,
        epoch: 0,
        task_loss: clean.loss,
        penalty: 0.0,
        normalized_energy: m.normalized_energy()?,
        tau: None,
        lr: 0.0,
        accuracy: Some(clean.mean),
        digital_ratios: m.digital_ratios(),
    });
    log.finish()?;
    let summary = EvalSummary {
        model: model_path,
        clean_accuracy: clean.mean,
        noisy,
    };
    artifacts::write_json(&out_path(out, &artifacts::summary_file("eval")), &summary)?;
    Ok(summary)
}

/// Source of the assignment an energy report describes.
#[derive(Debug, Clone, PartialEq)]
pub enum AssignmentSource {
    File(PathBuf),
    Uniform(ActPath),
}

/// One CSV row; `layer` is `total` on the last row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyRow {
    pub layer: String,
    pub c_out: usize,
    pub c_in: usize,
    pub k: usize,
    pub h_out: usize,
    pub w_out: usize,
    pub vdp_chunks: usize,
    pub analog_channels: usize,
    pub digital_channels: usize,
    pub digital_ratio: f64,
    pub activation_j: f64,
    pub vcsel_j: f64,
    pub photodetector_j: f64,
    pub mixed_total_j: f64,
    pub conventional_activation_j: f64,
    pub conventional_conversion_j: f64,
    pub conventional_total_j: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergySummary {
    pub adc: String,
    pub macam: String,
    /// Search-time activation energy in joules.
    pub act_energy_j: f64,
    /// Activation energy over the all-digital baseline.
    pub normalized_act_energy: f64,
    pub system_mixed_j: f64,
    pub system_conventional_j: f64,
    pub digital_ratios: Vec<f64>,
    pub report: PathBuf,
}

pub fn energy_report(cfg: &RunConfig, out: &Path, source: &AssignmentSource) -> Result<EnergySummary> {
    artifacts::ensure_dir(out)?;
    let (train, _) = load_data(cfg)?;
    let mut model = build_model(cfg, &train)?;
    match source {
        AssignmentSource::File(p) => model.set_assignment(artifacts::read_assignment(p)?)?,
        AssignmentSource::Uniform(path) => model.assign_all(*path),
    }
    let assignment = model.assignment().expect("assignment just set");
    let geoms = model.geometries();
    let hw = &cfg.hardware;
    let counts: Vec<ChannelCounts> = assignment
        .iter()
        .map(|a| {
            let digital = a.iter().filter(|&&p| p == ActPath::Digital).count();
            ChannelCounts {
                analog: a.len() - digital,
                digital,
            }
        })
        .collect();

    let mut rows = Vec::with_capacity(geoms.len() + 1);
    let mut total = EnergyRow {
        layer: "total".into(),
        c_out: 0,
        c_in: 0,
        k: 0,
        h_out: 0,
        w_out: 0,
        vdp_chunks: 0,
        analog_channels: 0,
        digital_channels: 0,
        digital_ratio: 0.0,
        activation_j: 0.0,
        vcsel_j: 0.0,
        photodetector_j: 0.0,
        mixed_total_j: 0.0,
        conventional_activation_j: 0.0,
        conventional_conversion_j: 0.0,
        conventional_total_j: 0.0,
    };
    for (l, (g, c)) in geoms.iter().zip(&counts).enumerate() {
        let t = layer_energy_terms(g, *c, hw);
        let row = EnergyRow {
            layer: l.to_string(),
            c_out: g.c_out,
            c_in: g.c_in,
            k: g.k,
            h_out: g.h_out,
            w_out: g.w_out,
            vdp_chunks: g.vdp_chunks(),
            analog_channels: c.analog,
            digital_channels: c.digital,
            digital_ratio: c.digital as f64 / g.c_out as f64,
            activation_j: t.activation,
            vcsel_j: t.vcsel,
            photodetector_j: t.photodetector,
            mixed_total_j: t.mixed_total,
            conventional_activation_j: t.conventional_activation,
            conventional_conversion_j: t.conventional_conversion,
            conventional_total_j: t.conventional_total,
        };
        total.c_out += g.c_out;
        total.analog_channels += c.analog;
        total.digital_channels += c.digital;
        total.activation_j += t.activation;
        total.vcsel_j += t.vcsel;
        total.photodetector_j += t.photodetector;
        total.mixed_total_j += t.mixed_total;
        total.conventional_activation_j += t.conventional_activation;
        total.conventional_conversion_j += t.conventional_conversion;
        total.conventional_total_j += t.conventional_total;
        rows.push(row);
    }
    total.digital_ratio = total.digital_channels as f64 / total.c_out.max(1) as f64;
    rows.push(total);

    let report = out_path(out, artifacts::ENERGY_REPORT_FILE);
    let mut w = csv::Writer::from_path(&report)
        .map_err(|e| Error::invalid(format!("creating {}: {e}", report.display())))?;
    for row in &rows {
        w.serialize(row)
            .map_err(|e| Error::invalid(format!("writing {}: {e}", report.display())))?;
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", report.display()), e))?;

    let weights = model.hard_weights().expect("assignment just set");
    let act = act_energy(&weights, &geoms, hw)?;
    let summary = EnergySummary {
        adc: hw.adc_name.clone(),
        macam: hw.macam_name.clone(),
        act_energy_j: act,
        normalized_act_energy: normalize(act, &geoms, hw)?,
        system_mixed_j: system_energy_mixed(&geoms, &counts, hw)?,
        system_conventional_j: system_energy_conventional(&geoms, hw),
        digital_ratios: trainer::digital_ratios(&assignment),
        report,
    };
    MetricsLog::create(&out_path(out, &artifacts::metrics_file("energy-report")))?.finish()?;
    artifacts::write_json(&out_path(out, &artifacts::summary_file("energy-report")), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceMcSummary {
    pub table: String,
    pub boundary_voltages: Vec<f64>,
    pub profile: VariationProfile,
    pub report: PathBuf,
}

/// Monte-Carlo boundary variation of the configured level table. `sigma`
/// and `samples` default to the noise section.
pub fn device_mc(
    cfg: &RunConfig,
    out: &Path,
    sigma: Option<f64>,
    samples: Option<usize>,
) -> Result<DeviceMcSummary> {
    artifacts::ensure_dir(out)?;
    let cb = build_codebook(&cfg.mtj)?;
    let profile = characterize_variation(
        &cb,
        sigma.unwrap_or(cfg.noise.macam_sigma),
        samples.unwrap_or(cfg.noise.mc_samples),
        cfg.seed,
    )?;
    let report = out_path(out, artifacts::DEVICE_MC_FILE);
    artifacts::write_json(&report, &profile)?;
    MetricsLog::create(&out_path(out, &artifacts::metrics_file("device-mc")))?.finish()?;
    let summary = DeviceMcSummary {
        table: cfg.mtj.name.clone(),
        boundary_voltages: cfg.mtj.boundary_voltages.clone(),
        profile,
        report,
    };
    artifacts::write_json(&out_path(out, &artifacts::summary_file("device-mc")), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub warmup: WarmupSummary,
    pub search: SearchSummary,
    pub retrain: RetrainSummary,
    pub eval: EvalSummary,
}

/// Warmup, search, retrain and evaluation in one go.
pub fn pipeline(cfg: &RunConfig, out: &Path) -> Result<PipelineSummary> {
    let summary = PipelineSummary {
        warmup: warmup(cfg, out)?,
        search: search(cfg, out)?,
        retrain: retrain(cfg, out)?,
        eval: eval(cfg, out, None, None)?,
    };
    artifacts::write_json(&out_path(out, &artifacts::summary_file("pipeline")), &summary)?;
    Ok(summary)
}
