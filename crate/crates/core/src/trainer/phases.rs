use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::model::{ForwardOptions, MixMode, Model, ParamGroup};
use super::schedule::{tau_schedule, NoiseSpec, PhaseSchedule};
use crate::activation::{ActPath, FinalizeMode};
use crate::device::characterize_variation;
use crate::energy::{
    self, act_energy, normalize, penalty_node, soft_energy_node, EnergyConstraint,
    HardwareEnergyConfig,
};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::tensor::{sgd_step, OptimizerState, Param, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Warmup,
    Search,
    Retrain,
    Eval,
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub phase: Phase,
    pub epoch: usize,
    /// Mean cross-entropy over the epoch's batches.
    pub task_loss: f64,
    /// Mean energy penalty over the epoch's batches (zero outside logit epochs).
    pub penalty: f64,
    /// Normalized activation energy of the current assignment or, before
    /// finalization, its expectation under the path probabilities.
    pub normalized_energy: f64,
    pub tau: Option<f64>,
    pub lr: f64,
    /// Training accuracy over the epoch's batches.
    pub accuracy: Option<f64>,
    pub digital_ratios: Vec<f64>,
}

/// Receives each metrics record as soon as its epoch finishes.
pub type MetricsSink<'a> = &'a mut dyn FnMut(&MetricsRecord);

/// Accuracy over one or more evaluation runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyStats {
    pub mean: f64,
    /// Mean cross-entropy over all runs.
    pub loss: f64,
    /// Population std across runs.
    pub std: f64,
    pub runs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    /// Normalized expected activation energy after each search epoch.
    pub energy_trajectory: Vec<f64>,
    pub assignment: Vec<Vec<ActPath>>,
}

const STREAM_SHUFFLE: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_FINALIZE: u64 = 3;
const STREAM_VARIATION: u64 = 4;

fn phase_streams(seed: u64, phase: Phase) -> (Rng, Rng) {
    let base = rng::derive_seed(seed, phase as u64 + 100);
    (
        rng::seeded(rng::derive_seed(base, STREAM_SHUFFLE)),
        rng::seeded(rng::derive_seed(base, STREAM_NOISE)),
    )
}

#[derive(Default)]
struct EpochTotals {
    loss: f64,
    penalty: f64,
    correct: usize,
    seen: usize,
    batches: usize,
}

impl EpochTotals {
    fn add(&mut self, loss: f64, penalty: f64, logits: &Tensor, labels: &[usize]) {
        self.loss += loss;
        self.penalty += penalty;
        self.correct += count_correct(logits, labels);
        self.seen += labels.len();
        self.batches += 1;
    }

    fn mean_loss(&self) -> f64 {
        self.loss / self.batches.max(1) as f64
    }

    fn mean_penalty(&self) -> f64 {
        self.penalty / self.batches.max(1) as f64
    }

    fn accuracy(&self) -> f64 {
        self.correct as f64 / self.seen.max(1) as f64
    }
}

fn count_correct(logits: &Tensor, labels: &[usize]) -> usize {
    let classes = logits.shape()[1];
    logits
        .data()
        .chunks(classes)
        .zip(labels)
        .filter(|(row, &label)| argmax(row) == label)
        .count()
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn check_data(model: &Model, data: &Dataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Dataset("dataset is empty".into()));
    }
    if data.image_shape() != model.input_shape() {
        return Err(Error::ShapeMismatch {
            op: "dataset vs model input",
            lhs: data.image_shape().to_vec(),
            rhs: model.input_shape().to_vec(),
        });
    }
    if data.classes() > model.classes() {
        return Err(Error::Dataset(format!(
            "dataset has {} classes, model outputs {}",
            data.classes(),
            model.classes()
        )));
    }
    Ok(())
}

/// One optimizer per parameter group.
struct GroupOptimizer {
    group: ParamGroup,
    state: OptimizerState,
}

impl GroupOptimizer {
    fn new(group: ParamGroup, lr0: f64, momentum: f64, epochs: usize) -> Result<Self> {
        Ok(Self {
            group,
            state: OptimizerState::new(lr0, momentum, epochs.max(1))?,
        })
    }
}

/// Weight and threshold optimizers sharing one epoch budget.
fn weight_optimizers(schedule: &PhaseSchedule, epochs: usize) -> Result<Vec<GroupOptimizer>> {
    Ok(vec![
        GroupOptimizer::new(ParamGroup::Weights, schedule.lr0, schedule.momentum, epochs)?,
        GroupOptimizer::new(ParamGroup::Alpha, schedule.alpha_lr0, schedule.momentum, epochs)?,
    ])
}

/// Applies one SGD step per group, parameters in model order. Trainable
/// parameters that received no gradient step with zero.
fn step_groups(model: &mut Model, optimizers: &mut [GroupOptimizer]) -> Result<()> {
    for opt in optimizers.iter_mut() {
        let mut params: Vec<&mut Param> = model
            .params_mut()
            .into_iter()
            .filter(|(g, p)| *g == opt.group && p.requires_grad)
            .map(|(_, p)| p)
            .collect();
        for p in params.iter_mut() {
            if p.grad.is_none() {
                p.grad = Some(Tensor::zeros(p.value.shape()));
            }
        }
        sgd_step(&mut params, &mut opt.state)?;
    }
    model.clamp_alphas();
    model.zero_grads();
    Ok(())
}

/// One pass over `data` updating the groups of `optimizers`.
#[allow(clippy::too_many_arguments)]
fn train_epoch(
    model: &mut Model,
    data: &Dataset,
    batch_size: usize,
    opts: ForwardOptions,
    optimizers: &mut [GroupOptimizer],
    energy_term: Option<(&EnergyConstraint, &HardwareEnergyConfig)>,
    shuffle: &mut Rng,
    noise: &mut Rng,
) -> Result<EpochTotals> {
    let mut totals = EpochTotals::default();
    let geoms = model.geometries();
    for idx in data.batches(batch_size, Some(&mut *shuffle)) {
        let (x, labels) = data.batch(&idx);
        let mut pass = model.forward(&x, opts, shuffle, noise)?;
        let tape = &mut pass.tape;
        let ce = tape.softmax_cross_entropy(pass.logits, &labels)?;
        let ce_value = tape.value(ce).item() as f64;
        let (loss, pen_value) = match energy_term {
            Some((constraint, hw)) => {
                let e = soft_energy_node(tape, &pass.site_weights, &geoms, hw)?;
                let pen = penalty_node(tape, e, constraint);
                let pen_value = tape.value(pen).item() as f64;
                (tape.add(ce, pen)?, pen_value)
            }
            None => (ce, 0.0),
        };
        tape.backward(loss)?;
        let logits = pass.tape.value(pass.logits).clone();
        model.collect_grads(&mut pass);
        step_groups(model, optimizers)?;
        totals.add(ce_value, pen_value, &logits, &labels);
    }
    for opt in optimizers.iter_mut() {
        opt.state.epoch += 1;
    }
    Ok(totals)
}

/// Trains weights and thresholds on the task loss with every site mixing its
/// two paths at a fixed 0.5/0.5 blend. Path logits stay untouched.
pub fn run_warmup(
    model: &mut Model,
    data: &Dataset,
    schedule: &PhaseSchedule,
    seed: u64,
    sink: MetricsSink<'_>,
) -> Result<()> {
    schedule.validate()?;
    check_data(model, data)?;
    let (mut shuffle, mut noise) = phase_streams(seed, Phase::Warmup);
    let mut optimizers = weight_optimizers(schedule, schedule.warmup_epochs)?;
    let opts = ForwardOptions {
        mode: MixMode::Uniform,
        train_weights: true,
        train_theta: false,
        weight_sigma: 0.0,
        device_noise: false,
    };
    for epoch in 0..schedule.warmup_epochs {
        let lr = optimizers[0].state.learning_rate();
        let t = train_epoch(
            model,
            data,
            schedule.batch_size,
            opts,
            &mut optimizers,
            None,
            &mut shuffle,
            &mut noise,
        )?;
        sink(&MetricsRecord {
            phase: Phase::Warmup,
            epoch,
            task_loss: t.mean_loss(),
            penalty: 0.0,
            normalized_energy: uniform_energy(model)?,
            tau: None,
            lr,
            accuracy: Some(t.accuracy()),
            digital_ratios: vec![0.5; model.geometries().len()],
        });
    }
    Ok(())
}

fn uniform_energy(model: &Model) -> Result<f64> {
    let geoms = model.geometries();
    let w: Vec<_> = geoms.iter().map(|g| vec![[0.5, 0.5]; g.c_out]).collect();
    normalize(act_energy(&w, &geoms, &model.hw)?, &geoms, &model.hw)
}

/// Alternates weight epochs (task loss, logits frozen) with logit epochs
/// (task loss plus energy penalty, weights frozen) under a decaying
/// Gumbel temperature, then fixes a hard assignment.
#[allow(clippy::too_many_arguments)]
pub fn run_search(
    model: &mut Model,
    data: &Dataset,
    schedule: &PhaseSchedule,
    constraint: &EnergyConstraint,
    hw: &HardwareEnergyConfig,
    finalize: FinalizeMode,
    seed: u64,
    sink: MetricsSink<'_>,
) -> Result<SearchOutcome> {
    schedule.validate()?;
    constraint.validate()?;
    hw.validate()?;
    check_data(model, data)?;
    if constraint.e_min > 1.0 {
        return Err(Error::invalid(format!(
            "energy band is infeasible: e_min {} exceeds the all-digital energy 1.0",
            constraint.e_min
        )));
    }
    let (lo, hi) = constraint.penalty_free_band();
    if lo >= hi {
        return Err(Error::invalid(format!(
            "energy band is empty after the margin: [{lo}, {hi}]"
        )));
    }
    for site in model.sites_mut() {
        site.mix.assignment = None;
    }

    let theta_epochs = (0..schedule.search_epochs)
        .filter(|&e| schedule.is_theta_epoch(e))
        .count();
    let weight_epochs = schedule.search_epochs - theta_epochs;
    let mut w_opts = weight_optimizers(schedule, weight_epochs)?;
    let mut t_opts = vec![GroupOptimizer::new(
        ParamGroup::Theta,
        schedule.theta_lr0,
        schedule.momentum,
        theta_epochs,
    )?];
    let (mut shuffle, mut noise) = phase_streams(seed, Phase::Search);
    let mut trajectory = Vec::with_capacity(schedule.search_epochs);

    for epoch in 0..schedule.search_epochs {
        let tau = tau_schedule(epoch as f64, schedule)?;
        model.set_tau(tau as f32);
        let theta_epoch = schedule.is_theta_epoch(epoch);
        let opts = ForwardOptions {
            mode: MixMode::Gumbel,
            train_weights: !theta_epoch,
            train_theta: theta_epoch,
            weight_sigma: 0.0,
            device_noise: false,
        };
        let (optimizers, energy_term) = if theta_epoch {
            (&mut t_opts, Some((constraint, hw)))
        } else {
            (&mut w_opts, None)
        };
        let lr = optimizers[0].state.learning_rate();
        let t = train_epoch(
            model,
            data,
            schedule.batch_size,
            opts,
            optimizers,
            energy_term,
            &mut shuffle,
            &mut noise,
        )?;
        let e = model.normalized_energy_with(hw)?;
        trajectory.push(e);
        sink(&MetricsRecord {
            phase: Phase::Search,
            epoch,
            task_loss: t.mean_loss(),
            penalty: t.mean_penalty(),
            normalized_energy: e,
            tau: Some(tau),
            lr,
            accuracy: Some(t.accuracy()),
            digital_ratios: model.digital_ratios(),
        });
    }

    let mut fin_rng = rng::seeded(rng::derive_seed(seed, STREAM_FINALIZE));
    let assignment = model
        .sites_mut()
        .map(|s| s.mix.finalize_assignment(finalize, &mut fin_rng))
        .collect();
    Ok(SearchOutcome {
        energy_trajectory: trajectory,
        assignment,
    })
}

/// Retrains weights and thresholds of a finalized model with injected weight
/// noise and CAM boundary variation. Path logits are not touched.
pub fn run_retrain(
    model: &mut Model,
    data: &Dataset,
    schedule: &PhaseSchedule,
    noise_spec: &NoiseSpec,
    seed: u64,
    sink: MetricsSink<'_>,
) -> Result<()> {
    schedule.validate()?;
    noise_spec.validate()?;
    check_data(model, data)?;
    if !model.is_finalized() {
        return Err(Error::invalid("retraining requires a finalized assignment"));
    }
    let clean = model.analog.clone();
    let noisy = noisy_analog(model, noise_spec, seed)?;
    let opts = ForwardOptions {
        mode: MixMode::Hard,
        train_weights: true,
        train_theta: false,
        weight_sigma: noise_spec.weight_sigma as f32,
        device_noise: noisy.is_some(),
    };
    if let Some(cfg) = noisy {
        model.analog = cfg;
    }
    let result = retrain_loop(model, data, schedule, opts, seed, sink);
    model.analog = clean;
    result
}

fn retrain_loop(
    model: &mut Model,
    data: &Dataset,
    schedule: &PhaseSchedule,
    opts: ForwardOptions,
    seed: u64,
    sink: MetricsSink<'_>,
) -> Result<()> {
    let (mut shuffle, mut noise) = phase_streams(seed, Phase::Retrain);
    let mut optimizers = weight_optimizers(schedule, schedule.retrain_epochs)?;
    for epoch in 0..schedule.retrain_epochs {
        let lr = optimizers[0].state.learning_rate();
        let t = train_epoch(
            model,
            data,
            schedule.batch_size,
            opts,
            &mut optimizers,
            None,
            &mut shuffle,
            &mut noise,
        )?;
        sink(&MetricsRecord {
            phase: Phase::Retrain,
            epoch,
            task_loss: t.mean_loss(),
            penalty: 0.0,
            normalized_energy: model.normalized_energy()?,
            tau: None,
            lr,
            accuracy: Some(t.accuracy()),
            digital_ratios: model.digital_ratios(),
        });
    }
    Ok(())
}

/// Analog configuration carrying the characterized boundary variation, or
/// `None` when the CAM noise is zero.
fn noisy_analog(
    model: &Model,
    spec: &NoiseSpec,
    seed: u64,
) -> Result<Option<crate::activation::AnalogActConfig>> {
    if spec.macam_sigma == 0.0 {
        return Ok(None);
    }
    let profile = characterize_variation(
        &model.analog.codebook,
        spec.macam_sigma,
        spec.mc_samples,
        rng::derive_seed(seed, STREAM_VARIATION),
    )?;
    let cfg = model.analog.clone().with_variation(profile)?;
    Ok(Some(cfg))
}

const EVAL_BATCH: usize = 256;

/// Test accuracy. Finalized models run their hard assignment; others use
/// the uniform 0.5/0.5 blend. With `noise`, each of `runs` passes
/// draws fresh weight and CAM noise from its own derived seed.
pub fn evaluate(
    model: &Model,
    data: &Dataset,
    noise: Option<&NoiseSpec>,
    runs: usize,
    seed: u64,
) -> Result<AccuracyStats> {
    check_data(model, data)?;
    if runs == 0 {
        return Err(Error::invalid("evaluation needs at least one run"));
    }
    let mode = if model.is_finalized() {
        MixMode::Hard
    } else {
        MixMode::Uniform
    };
    let (eval_model, opts) = match noise {
        Some(spec) => {
            spec.validate()?;
            let mut m = model.clone();
            let noisy = noisy_analog(model, spec, seed)?;
            let device_noise = noisy.is_some();
            if let Some(cfg) = noisy {
                m.analog = cfg;
            }
            let opts = ForwardOptions {
                weight_sigma: spec.weight_sigma as f32,
                device_noise,
                ..ForwardOptions::inference(mode)
            };
            (std::borrow::Cow::Owned(m), opts)
        }
        None => (
            std::borrow::Cow::Borrowed(model),
            ForwardOptions::inference(mode),
        ),
    };
    let mut accs = Vec::with_capacity(runs);
    let mut loss_sum = 0.0;
    for run in 0..runs {
        let mut gumbel = rng::seeded(0);
        let mut noise_rng = rng::seeded(rng::derive_seed(seed, 1000 + run as u64));
        let mut correct = 0;
        for idx in data.batches(EVAL_BATCH, None) {
            let (x, labels) = data.batch(&idx);
            let mut pass = eval_model.forward(&x, opts, &mut gumbel, &mut noise_rng)?;
            correct += count_correct(pass.tape.value(pass.logits), &labels);
            let ce = pass.tape.softmax_cross_entropy(pass.logits, &labels)?;
            loss_sum += pass.tape.value(ce).item() as f64 * labels.len() as f64;
        }
        accs.push(correct as f64 / data.len() as f64);
    }
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    let var = accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / accs.len() as f64;
    Ok(AccuracyStats {
        mean,
        loss: loss_sum / (runs * data.len()) as f64,
        std: var.sqrt(),
        runs: accs,
    })
}

/// Fraction of digital channels per layer of an assignment.
pub fn digital_ratios(assignment: &[Vec<ActPath>]) -> Vec<f64> {
    assignment
        .iter()
        .map(|a| a.iter().filter(|&&p| p == ActPath::Digital).count() as f64 / a.len().max(1) as f64)
        .collect()
}

/// Normalized activation energy of a hard assignment.
pub fn assignment_energy(
    assignment: &[Vec<ActPath>],
    model: &Model,
    hw: &HardwareEnergyConfig,
) -> Result<f64> {
    let geoms = model.geometries();
    let w: Vec<energy::LayerWeights> = assignment
        .iter()
        .map(|a| {
            a.iter()
                .map(|p| match p {
                    ActPath::Analog => [1.0, 0.0],
                    ActPath::Digital => [0.0, 1.0],
                })
                .collect()
        })
        .collect();
    normalize(act_energy(&w, &geoms, hw)?, &geoms, hw)
}
