//! Small CNN whose hidden activations are mixed analog/digital sites.

use serde::{Deserialize, Serialize};

use crate::activation::{
    self, ActPath, AlphaParam, AnalogActConfig, DigitalActConfig, MixWeights,
    MixedActivationState,
};
use crate::energy::{self, HardwareEnergyConfig, LayerGeometry, LayerWeights};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::tensor::{Param, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    /// Output channels of each conv block (conv + activation).
    pub conv_channels: Vec<usize>,
    pub kernel: usize,
    /// Zero-based conv blocks followed by a 2x2 average pool.
    pub pool_after: Vec<usize>,
    pub weight_bits: u32,
    pub act_bits: u32,
    pub alpha_init: f32,
    /// When false, thresholds stay at `alpha_init`.
    pub learn_alpha: bool,
    pub vdp_size: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            conv_channels: vec![16, 32, 64, 64],
            kernel: 3,
            pool_after: vec![1, 3],
            weight_bits: 6,
            act_bits: 6,
            alpha_init: 8.0,
            learn_alpha: true,
            vdp_size: 128,
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.conv_channels.is_empty() || self.conv_channels.contains(&0) {
            return Err(Error::invalid("conv_channels must be non-empty and positive"));
        }
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return Err(Error::invalid(format!("kernel must be odd, got {}", self.kernel)));
        }
        if let Some(&p) = self.pool_after.iter().find(|&&p| p >= self.conv_channels.len()) {
            return Err(Error::invalid(format!("pool_after index {p} has no conv block")));
        }
        if !(2..=16).contains(&self.weight_bits) {
            return Err(Error::invalid(format!(
                "weight_bits must be in 2..=16, got {}",
                self.weight_bits
            )));
        }
        DigitalActConfig::new(self.act_bits)?;
        AlphaParam::new(self.alpha_init)?;
        if self.vdp_size == 0 {
            return Err(Error::invalid("vdp_size must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvBlock {
    pub weight: Param,
    pub bias: Param,
    pub pad: usize,
    pub geometry: LayerGeometry,
    pub alpha: AlphaParam,
    pub mix: MixedActivationState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearLayer {
    pub weight: Param,
    pub bias: Param,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer {
    Conv(ConvBlock),
    AvgPool { size: usize },
    Flatten,
    Linear(LinearLayer),
}

/// Which parameters a parameter belongs to for alternating optimization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Weights,
    Alpha,
    Theta,
}

/// How mixed sites combine their two paths during a forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MixMode {
    /// Fixed 0.5 / 0.5 blend.
    Uniform,
    /// Fresh Gumbel-Softmax weights per channel at each site's temperature.
    Gumbel,
    /// Finalized one-hot assignment.
    Hard,
}

#[derive(Debug, Clone, Copy)]
pub struct ForwardOptions {
    pub mode: MixMode,
    pub train_weights: bool,
    pub train_theta: bool,
    pub weight_sigma: f32,
    pub device_noise: bool,
}

impl ForwardOptions {
    pub fn inference(mode: MixMode) -> Self {
        Self {
            mode,
            train_weights: false,
            train_theta: false,
            weight_sigma: 0.0,
            device_noise: false,
        }
    }
}

/// Recorded forward pass: the tape, its logits and the parameter bindings
/// needed to route gradients back.
pub struct ForwardPass {
    pub tape: Tape,
    pub logits: Var,
    /// Per activation site, the `[C_o, 2]` path-weight node (soft modes only).
    pub site_weights: Vec<Var>,
    bindings: Vec<Var>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub layers: Vec<Layer>,
    pub analog: AnalogActConfig,
    pub digital: DigitalActConfig,
    /// Energies used when reporting the activation cost of this model.
    pub hw: HardwareEnergyConfig,
    input_shape: [usize; 3],
}

/// Serializable parameter snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub input_shape: [usize; 3],
    pub classes: usize,
    pub layers: Vec<Layer>,
}

impl Model {
    /// Builds the CNN for `[channels, height, width]` inputs with He-style
    /// uniform initialization.
    pub fn new(
        spec: ModelSpec,
        input_shape: [usize; 3],
        classes: usize,
        analog: AnalogActConfig,
        seed: u64,
    ) -> Result<Self> {
        spec.validate()?;
        if classes < 2 {
            return Err(Error::invalid("need at least 2 classes"));
        }
        let digital = DigitalActConfig::new(spec.act_bits)?;
        let mut rng = rng::seeded(seed);
        let [mut c_in, mut h, mut w] = input_shape;
        let k = spec.kernel;
        let pad = k / 2;
        let mut layers = Vec::new();
        for (i, &c_out) in spec.conv_channels.iter().enumerate() {
            let fan_in = c_in * k * k;
            let alpha = if spec.learn_alpha {
                AlphaParam::new(spec.alpha_init)?
            } else {
                AlphaParam::fixed(spec.alpha_init)?
            };
            layers.push(Layer::Conv(ConvBlock {
                weight: Param::new(he_uniform(&[c_out, c_in, k, k], fan_in, &mut rng)),
                bias: Param::new(Tensor::zeros(&[c_out])),
                pad,
                geometry: LayerGeometry {
                    c_out,
                    c_in,
                    k,
                    h_out: h,
                    w_out: w,
                    vdp_size: spec.vdp_size,
                },
                alpha,
                mix: MixedActivationState::new(c_out, 1.0),
            }));
            c_in = c_out;
            if spec.pool_after.contains(&i) {
                if h % 2 != 0 || w % 2 != 0 {
                    return Err(Error::invalid(format!(
                        "cannot 2x2-pool a {h}x{w} feature map after block {i}"
                    )));
                }
                layers.push(Layer::AvgPool { size: 2 });
                h /= 2;
                w /= 2;
            }
        }
        layers.push(Layer::Flatten);
        let features = c_in * h * w;
        layers.push(Layer::Linear(LinearLayer {
            weight: Param::new(he_uniform(&[features, classes], features, &mut rng)),
            bias: Param::new(Tensor::zeros(&[classes])),
        }));
        Ok(Self {
            spec,
            layers,
            analog,
            digital,
            hw: HardwareEnergyConfig::default(),
            input_shape,
        })
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn classes(&self) -> usize {
        match self.layers.last() {
            Some(Layer::Linear(l)) => l.weight.value.shape()[1],
            _ => 0,
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            spec: self.spec.clone(),
            input_shape: self.input_shape,
            classes: self.classes(),
            layers: self.layers.clone(),
        }
    }

    /// Rebuilds a model from a snapshot, checking it against the layer
    /// structure implied by its spec.
    pub fn from_checkpoint(ck: Checkpoint, analog: AnalogActConfig) -> Result<Self> {
        let mut model = Self::new(ck.spec, ck.input_shape, ck.classes, analog, 0)?;
        if model.layers.len() != ck.layers.len() {
            return Err(Error::invalid("checkpoint layer count does not match its spec"));
        }
        for (fresh, saved) in model.layers.iter().zip(&ck.layers) {
            let ok = match (fresh, saved) {
                (Layer::Conv(a), Layer::Conv(b)) => {
                    a.weight.value.shape() == b.weight.value.shape()
                        && a.bias.value.shape() == b.bias.value.shape()
                        && a.mix.theta.value.shape() == b.mix.theta.value.shape()
                        && b.mix.assignment.as_ref().is_none_or(|s| s.len() == a.geometry.c_out)
                }
                (Layer::Linear(a), Layer::Linear(b)) => {
                    a.weight.value.shape() == b.weight.value.shape()
                        && a.bias.value.shape() == b.bias.value.shape()
                }
                (Layer::AvgPool { size: a }, Layer::AvgPool { size: b }) => a == b,
                (Layer::Flatten, Layer::Flatten) => true,
                _ => false,
            };
            if !ok {
                return Err(Error::invalid("checkpoint layer shapes do not match its spec"));
            }
        }
        model.layers = ck.layers;
        Ok(model)
    }

    pub fn sites(&self) -> impl Iterator<Item = &ConvBlock> {
        self.layers.iter().filter_map(|l| match l {
            Layer::Conv(c) => Some(c),
            _ => None,
        })
    }

    pub fn sites_mut(&mut self) -> impl Iterator<Item = &mut ConvBlock> {
        self.layers.iter_mut().filter_map(|l| match l {
            Layer::Conv(c) => Some(c),
            _ => None,
        })
    }

    /// Geometries of the activation-bearing layers (the classifier has none).
    pub fn geometries(&self) -> Vec<LayerGeometry> {
        self.sites().map(|s| s.geometry).collect()
    }

    pub fn set_tau(&mut self, tau: f32) {
        self.sites_mut().for_each(|s| s.mix.tau = tau);
    }

    pub fn is_finalized(&self) -> bool {
        self.sites().all(|s| s.mix.assignment.is_some())
    }

    pub fn assignment(&self) -> Option<Vec<Vec<ActPath>>> {
        self.sites().map(|s| s.mix.assignment.clone()).collect()
    }

    pub fn set_assignment(&mut self, assignment: Vec<Vec<ActPath>>) -> Result<()> {
        let n_sites = self.sites().count();
        if assignment.len() != n_sites {
            return Err(Error::invalid(format!(
                "assignment has {} layers, model has {n_sites} activation sites",
                assignment.len()
            )));
        }
        for (site, a) in self.sites_mut().zip(assignment) {
            site.mix.set_assignment(a)?;
        }
        Ok(())
    }

    /// Same path for every channel of every site.
    pub fn assign_all(&mut self, path: ActPath) {
        for site in self.sites_mut() {
            let c = site.geometry.c_out;
            site.mix.assignment = Some(vec![path; c]);
        }
    }

    /// Expected path weights under the logit distribution.
    pub fn expected_weights(&self) -> Vec<LayerWeights> {
        self.sites().map(|s| s.mix.probabilities()).collect()
    }

    /// One-hot weights of the finalized assignment.
    pub fn hard_weights(&self) -> Option<Vec<LayerWeights>> {
        self.sites()
            .map(|s| {
                s.mix.assignment.as_ref().map(|a| {
                    a.iter()
                        .map(|p| match p {
                            ActPath::Analog => [1.0, 0.0],
                            ActPath::Digital => [0.0, 1.0],
                        })
                        .collect()
                })
            })
            .collect()
    }

    /// Normalized activation energy of the hard assignment, or its
    /// expectation under the path probabilities before finalization.
    pub fn normalized_energy(&self) -> Result<f64> {
        self.normalized_energy_with(&self.hw)
    }

    pub fn normalized_energy_with(&self, hw: &HardwareEnergyConfig) -> Result<f64> {
        let geoms = self.geometries();
        let weights = self.hard_weights().unwrap_or_else(|| self.expected_weights());
        energy::normalize(energy::act_energy(&weights, &geoms, hw)?, &geoms, hw)
    }

    /// Fraction of channels per site on the digital path (finalized) or the
    /// mean digital probability (not finalized).
    pub fn digital_ratios(&self) -> Vec<f64> {
        self.sites()
            .map(|s| match &s.mix.assignment {
                Some(a) => {
                    a.iter().filter(|&&p| p == ActPath::Digital).count() as f64 / a.len() as f64
                }
                None => {
                    let p = s.mix.probabilities();
                    p.iter().map(|r| r[1]).sum::<f64>() / p.len() as f64
                }
            })
            .collect()
    }

    /// Parameters in a fixed order with their group.
    pub fn params_mut(&mut self) -> Vec<(ParamGroup, &mut Param)> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(c) => {
                    out.push((ParamGroup::Weights, &mut c.weight));
                    out.push((ParamGroup::Weights, &mut c.bias));
                    out.push((ParamGroup::Alpha, &mut c.alpha.param));
                    out.push((ParamGroup::Theta, &mut c.mix.theta));
                }
                Layer::Linear(l) => {
                    out.push((ParamGroup::Weights, &mut l.weight));
                    out.push((ParamGroup::Weights, &mut l.bias));
                }
                _ => {}
            }
        }
        out
    }

    fn params(&self) -> Vec<(ParamGroup, &Param)> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv(c) => {
                    out.push((ParamGroup::Weights, &c.weight));
                    out.push((ParamGroup::Weights, &c.bias));
                    out.push((ParamGroup::Alpha, &c.alpha.param));
                    out.push((ParamGroup::Theta, &c.mix.theta));
                }
                Layer::Linear(l) => {
                    out.push((ParamGroup::Weights, &l.weight));
                    out.push((ParamGroup::Weights, &l.bias));
                }
                _ => {}
            }
        }
        out
    }

    pub fn clamp_alphas(&mut self) {
        self.sites_mut().for_each(|s| s.alpha.clamp());
    }

    /// Records a forward pass on a fresh tape.
    ///
    /// `rng` drives Gumbel draws; `noise_rng` drives weight and device noise.
    pub fn forward(
        &self,
        x: &Tensor,
        opts: ForwardOptions,
        rng: &mut Rng,
        noise_rng: &mut Rng,
    ) -> Result<ForwardPass> {
        let [c, h, w] = self.input_shape;
        if x.shape().len() != 4 || x.shape()[1..] != [c, h, w] {
            return Err(Error::ShapeMismatch {
                op: "model input",
                lhs: x.shape().to_vec(),
                rhs: vec![c, h, w],
            });
        }
        if opts.mode == MixMode::Hard && !self.is_finalized() {
            return Err(Error::invalid(
                "hard activation mode requires a finalized assignment",
            ));
        }

        let mut tape = Tape::new();
        let bindings: Vec<Var> = self
            .params()
            .into_iter()
            .map(|(group, p)| {
                let active = match group {
                    ParamGroup::Weights | ParamGroup::Alpha => opts.train_weights,
                    ParamGroup::Theta => opts.train_theta,
                };
                tape.leaf(p.value.clone(), active && p.requires_grad)
            })
            .collect();

        let mut cur = tape.constant(x.clone());
        let mut site_weights = Vec::new();
        let mut slot = 0;
        let bits = self.spec.weight_bits;
        for layer in &self.layers {
            match layer {
                Layer::Conv(block) => {
                    let (wv, bv, av, tv) = (
                        bindings[slot],
                        bindings[slot + 1],
                        bindings[slot + 2],
                        bindings[slot + 3],
                    );
                    slot += 4;
                    let wq = weight_transform(&mut tape, wv, bits, opts.weight_sigma, noise_rng);
                    let y = tape.conv2d(cur, wq, block.pad)?;
                    let y = tape.bias_add(y, bv)?;
                    let noise = opts.device_noise.then_some(&mut *noise_rng);
                    cur = match opts.mode {
                        MixMode::Hard => {
                            let paths = block.mix.assignment.as_deref().expect("checked finalized");
                            activation::mixed_act(
                                &mut tape,
                                y,
                                av,
                                MixWeights::Hard(paths),
                                &self.analog,
                                self.digital,
                                noise,
                            )?
                        }
                        MixMode::Uniform | MixMode::Gumbel => {
                            let weights = if opts.mode == MixMode::Gumbel {
                                activation::gumbel_softmax(&mut tape, tv, block.mix.tau, rng)?
                            } else {
                                tape.constant(Tensor::full(&[block.geometry.c_out, 2], 0.5))
                            };
                            site_weights.push(weights);
                            activation::mixed_act(
                                &mut tape,
                                y,
                                av,
                                MixWeights::Soft(weights),
                                &self.analog,
                                self.digital,
                                noise,
                            )?
                        }
                    };
                }
                Layer::AvgPool { size } => cur = tape.avgpool2d(cur, *size)?,
                Layer::Flatten => cur = tape.flatten(cur)?,
                Layer::Linear(_) => {
                    let (wv, bv) = (bindings[slot], bindings[slot + 1]);
                    slot += 2;
                    let wq = weight_transform(&mut tape, wv, bits, opts.weight_sigma, noise_rng);
                    let y = tape.matmul(cur, wq)?;
                    cur = tape.bias_add(y, bv)?;
                }
            }
        }
        Ok(ForwardPass {
            tape,
            logits: cur,
            site_weights,
            bindings,
        })
    }

    /// Moves gradients from a finished backward pass into the parameters.
    pub fn collect_grads(&mut self, pass: &mut ForwardPass) {
        let bindings = pass.bindings.clone();
        for ((_, p), v) in self.params_mut().into_iter().zip(bindings) {
            if let Some(g) = pass.tape.take_grad(v) {
                p.accumulate_grad(g);
            }
        }
    }

    pub fn zero_grads(&mut self) {
        self.params_mut().into_iter().for_each(|(_, p)| p.grad = None);
    }
}

fn he_uniform(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor {
    use rand::Rng as _;
    let bound = (6.0 / fan_in as f64).sqrt() as f32;
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape product")
}

/// Symmetric per-tensor uniform fake quantization.
pub fn quantize_symmetric(w: &Tensor, bits: u32) -> Tensor {
    let max_code = ((1u32 << (bits - 1)) - 1) as f32;
    let max_abs = w.data().iter().fold(0.0f32, |m, v| m.max(v.abs()));
    if max_abs == 0.0 {
        return w.clone();
    }
    let step = max_abs / max_code;
    w.map(|v| (v / step).round() * step)
}

/// Fake-quantized weights times `(1 + eps)` multiplicative noise. Gradients
/// pass straight through the quantizer and are scaled by the noise factor.
fn weight_transform(tape: &mut Tape, w: Var, bits: u32, sigma: f32, rng: &mut Rng) -> Var {
    let q = quantize_symmetric(tape.value(w), bits);
    let factors: Option<Vec<f32>> = (sigma > 0.0).then(|| {
        (0..q.numel())
            .map(|_| 1.0 + sigma * rng::standard_normal(rng) as f32)
            .collect()
    });
    let out = match &factors {
        Some(f) => {
            let data = q.data().iter().zip(f).map(|(v, f)| v * f).collect();
            Tensor::new(q.shape().to_vec(), data).expect("same shape")
        }
        None => q,
    };
    let op = move |_: &[&Tensor], _: &Tensor, ct: &Tensor| match &factors {
        Some(f) => {
            let g = ct.data().iter().zip(f).map(|(c, f)| c * f).collect();
            vec![Tensor::new(ct.shape().to_vec(), g).ok()]
        }
        None => vec![Some(ct.clone())],
    };
    tape.record(&[w], out, Box::new(op))
}
