//! Activation operators that plug into the autodiff tape.
//!
//! * analog path: clipped ReLU realized by the CAM projection,
//!   `y = (alpha / c) * project(clip(c * x / alpha, 0, c))`
//! * digital path: clipped ReLU followed by a uniform `bits`-bit quantizer
//! * mixed path: per-channel convex blend of the two, weighted by a
//!   Gumbel-Softmax relaxation of the path choice, or a hard assignment once
//!   the choice is finalized
//!
//! Both paths pass the input gradient straight through on `[0, alpha)`.
//! The analog path's threshold gradient keeps the contribution of in-range
//! inputs: `q / c - x / alpha` on `[0, alpha)` and `1` above.

use serde::{Deserialize, Serialize};

use crate::device::{Codebook, VariationProfile};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::tensor::{Backward, Param, Tape, Tensor, Var};

/// Lower clamp applied to every learnable threshold after an update.
pub const ALPHA_FLOOR: f32 = 1e-3;

/// Learnable clipping threshold, one scalar per layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaParam {
    pub param: Param,
    pub initial: f32,
}

impl AlphaParam {
    pub fn new(initial: f32) -> Result<Self> {
        if !(initial > 0.0 && initial.is_finite()) {
            return Err(Error::invalid(format!("alpha must be positive, got {initial}")));
        }
        Ok(Self {
            param: Param::new(Tensor::scalar(initial)),
            initial,
        })
    }

    /// Threshold that is never updated by the optimizer.
    pub fn fixed(value: f32) -> Result<Self> {
        let mut a = Self::new(value)?;
        a.param.requires_grad = false;
        Ok(a)
    }

    pub fn value(&self) -> f32 {
        self.param.value.item()
    }

    pub fn clamp(&mut self) {
        let v = &mut self.param.value.data_mut()[0];
        *v = v.max(ALPHA_FLOOR);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalogActConfig {
    pub codebook: Codebook,
    pub c: f32,
    pub variation: Option<VariationProfile>,
}

impl AnalogActConfig {
    pub fn new(codebook: Codebook) -> Self {
        let c = codebook.search_range();
        Self {
            codebook,
            c,
            variation: None,
        }
    }

    pub fn with_variation(mut self, profile: VariationProfile) -> Result<Self> {
        if profile.per_interval_input_sigma.len() != self.codebook.len() {
            return Err(Error::invalid(format!(
                "variation profile has {} intervals, codebook has {}",
                profile.per_interval_input_sigma.len(),
                self.codebook.len()
            )));
        }
        self.variation = Some(profile);
        Ok(self)
    }

    fn noise_sigma(&self) -> Option<Vec<f32>> {
        self.variation
            .as_ref()
            .filter(|v| !v.is_noiseless())
            .map(|v| v.per_interval_input_sigma.iter().map(|&s| s as f32).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DigitalActConfig {
    pub bits: u32,
}

impl DigitalActConfig {
    pub fn new(bits: u32) -> Result<Self> {
        if !(1..=16).contains(&bits) {
            return Err(Error::invalid(format!("digital bits must be in 1..=16, got {bits}")));
        }
        Ok(Self { bits })
    }

    /// Largest quantizer code, `2^bits - 1`.
    pub fn max_code(&self) -> f32 {
        ((1u32 << self.bits) - 1) as f32
    }
}

// ---------------------------------------------------------------------------
// element rules

#[inline]
pub fn analog_value(x: f32, alpha: f32, cb: &Codebook) -> f32 {
    if x < 0.0 {
        return 0.0;
    }
    let c = cb.search_range();
    let q = cb.project_unchecked((c * x / alpha).min(c));
    alpha * (q / c)
}

/// Analog value with the interval's equivalent input noise added before the
/// projection.
#[inline]
fn analog_value_noisy(x: f32, alpha: f32, cb: &Codebook, sigma: &[f32], rng: &mut Rng) -> f32 {
    if x < 0.0 {
        return 0.0;
    }
    let c = cb.search_range();
    let s = (c * x / alpha).min(c);
    let noisy = s + sigma[cb.index_unchecked(s)] * rng::standard_normal(rng) as f32;
    let q = cb.project_unchecked(noisy.max(0.0));
    alpha * (q / c)
}

/// `d y / d alpha` of the analog path.
#[inline]
pub fn analog_alpha_grad(x: f32, alpha: f32, cb: &Codebook) -> f32 {
    if x < 0.0 {
        0.0
    } else if x < alpha {
        let c = cb.search_range();
        cb.project_unchecked((c * x / alpha).min(c)) / c - x / alpha
    } else {
        1.0
    }
}

/// Straight-through input gradient shared by both paths.
#[inline]
pub fn passthrough_grad(x: f32, alpha: f32) -> f32 {
    if (0.0..alpha).contains(&x) {
        1.0
    } else {
        0.0
    }
}

#[inline]
pub fn digital_value(x: f32, alpha: f32, cfg: DigitalActConfig) -> f32 {
    if x < 0.0 {
        return 0.0;
    }
    let levels = cfg.max_code();
    let code = (x.min(alpha) * levels / alpha).round();
    alpha * (code / levels)
}

/// `d y / d alpha` of the digital path: 1 once the input saturates.
#[inline]
pub fn digital_alpha_grad(x: f32, alpha: f32) -> f32 {
    if x >= alpha {
        1.0
    } else {
        0.0
    }
}

// ---------------------------------------------------------------------------
// tensor-level forward / backward

pub fn analog_act_forward(
    x: &Tensor,
    alpha: f32,
    cfg: &AnalogActConfig,
    noise: Option<&mut Rng>,
) -> Tensor {
    match (cfg.noise_sigma(), noise) {
        (Some(sigma), Some(rng)) => {
            x.map_with(|v| analog_value_noisy(v, alpha, &cfg.codebook, &sigma, rng))
        }
        _ => x.map(|v| analog_value(v, alpha, &cfg.codebook)),
    }
}

/// Returns `(grad_x, grad_alpha)`; `grad_alpha` is summed over all elements
/// in order, accumulated in `f64`.
pub fn analog_act_backward(
    x: &Tensor,
    alpha: f32,
    cfg: &AnalogActConfig,
    cotangent: &Tensor,
) -> (Tensor, f32) {
    let gx = x
        .data()
        .iter()
        .zip(cotangent.data())
        .map(|(&v, &ct)| ct * passthrough_grad(v, alpha))
        .collect();
    let ga: f64 = x
        .data()
        .iter()
        .zip(cotangent.data())
        .map(|(&v, &ct)| (ct * analog_alpha_grad(v, alpha, &cfg.codebook)) as f64)
        .sum();
    (
        Tensor::new(x.shape().to_vec(), gx).expect("same shape"),
        ga as f32,
    )
}

pub fn digital_act_forward(x: &Tensor, alpha: f32, cfg: DigitalActConfig) -> Tensor {
    x.map(|v| digital_value(v, alpha, cfg))
}

pub fn digital_act_backward(x: &Tensor, alpha: f32, cotangent: &Tensor) -> (Tensor, f32) {
    let gx = x
        .data()
        .iter()
        .zip(cotangent.data())
        .map(|(&v, &ct)| ct * passthrough_grad(v, alpha))
        .collect();
    let ga: f64 = x
        .data()
        .iter()
        .zip(cotangent.data())
        .map(|(&v, &ct)| (ct * digital_alpha_grad(v, alpha)) as f64)
        .sum();
    (
        Tensor::new(x.shape().to_vec(), gx).expect("same shape"),
        ga as f32,
    )
}

fn check_alpha(tape: &Tape, alpha: Var) -> Result<f32> {
    let a = tape.value(alpha);
    if !a.is_scalar() {
        return Err(Error::invalid(format!(
            "alpha must be a scalar, got shape {:?}",
            a.shape()
        )));
    }
    let v = a.item();
    if !(v > 0.0) {
        return Err(Error::invalid(format!("alpha must be positive, got {v}")));
    }
    Ok(v)
}

/// Analog activation node. Device noise, when configured and `noise` is
/// given, perturbs the forward value only.
pub fn analog_act(
    tape: &mut Tape,
    x: Var,
    alpha: Var,
    cfg: &AnalogActConfig,
    noise: Option<&mut Rng>,
) -> Result<Var> {
    let a = check_alpha(tape, alpha)?;
    let out = analog_act_forward(tape.value(x), a, cfg, noise);
    let cb = cfg.clone();
    let op = move |inputs: &[&Tensor], _: &Tensor, ct: &Tensor| {
        let (gx, ga) = analog_act_backward(inputs[0], inputs[1].item(), &cb, ct);
        vec![Some(gx), Some(Tensor::scalar(ga))]
    };
    Ok(tape.record(&[x, alpha], out, Box::new(op)))
}

pub fn digital_act(tape: &mut Tape, x: Var, alpha: Var, cfg: DigitalActConfig) -> Result<Var> {
    let a = check_alpha(tape, alpha)?;
    let out = digital_act_forward(tape.value(x), a, cfg);
    let op = |inputs: &[&Tensor], _: &Tensor, ct: &Tensor| {
        let (gx, ga) = digital_act_backward(inputs[0], inputs[1].item(), ct);
        vec![Some(gx), Some(Tensor::scalar(ga))]
    };
    Ok(tape.record(&[x, alpha], out, Box::new(op)))
}

// ---------------------------------------------------------------------------
// Gumbel-Softmax

/// Draws `[channels][2]` i.i.d. Gumbel(0, 1) noise.
pub fn sample_gumbel_noise(channels: usize, rng: &mut Rng) -> Vec<[f64; 2]> {
    (0..channels)
        .map(|_| [rng::gumbel(rng), rng::gumbel(rng)])
        .collect()
}

fn check_theta(theta: &Tensor) -> Result<usize> {
    match theta.shape() {
        [c, 2] => Ok(*c),
        s => Err(Error::invalid(format!(
            "path logits must have shape [channels, 2], got {s:?}"
        ))),
    }
}

fn check_tau(tau: f32) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::invalid(format!("temperature must be positive, got {tau}")));
    }
    Ok(())
}

/// `softmax((theta + g) / tau)` per channel row.
pub fn gumbel_softmax_weights(theta: &Tensor, tau: f32, noise: &[[f64; 2]]) -> Result<Tensor> {
    let channels = check_theta(theta)?;
    check_tau(tau)?;
    if noise.len() != channels {
        return Err(Error::invalid(format!(
            "got noise for {} channels, logits have {channels}",
            noise.len()
        )));
    }
    let tau = tau as f64;
    let mut out = Vec::with_capacity(channels * 2);
    for (row, g) in theta.data().chunks(2).zip(noise) {
        let z0 = (row[0] as f64 + g[0]) / tau;
        let z1 = (row[1] as f64 + g[1]) / tau;
        let m = z0.max(z1);
        let (e0, e1) = ((z0 - m).exp(), (z1 - m).exp());
        let w0 = e0 / (e0 + e1);
        let w0 = w0 as f32;
        out.push(w0);
        out.push(1.0 - w0);
    }
    Tensor::new(vec![channels, 2], out)
}

/// Gumbel-Softmax node with caller-supplied noise (shared-noise evaluation).
pub fn gumbel_softmax_with_noise(
    tape: &mut Tape,
    theta: Var,
    tau: f32,
    noise: &[[f64; 2]],
) -> Result<Var> {
    let out = gumbel_softmax_weights(tape.value(theta), tau, noise)?;
    let op = move |_: &[&Tensor], a: &Tensor, ct: &Tensor| {
        let mut g = Vec::with_capacity(a.numel());
        for (w, c) in a.data().chunks(2).zip(ct.data().chunks(2)) {
            let dot = w[0] * c[0] + w[1] * c[1];
            g.push(w[0] * (c[0] - dot) / tau);
            g.push(w[1] * (c[1] - dot) / tau);
        }
        vec![Tensor::new(a.shape().to_vec(), g).ok()]
    };
    Ok(tape.record(&[theta], out, Box::new(op)))
}

/// Gumbel-Softmax node with one fresh draw per channel.
pub fn gumbel_softmax(tape: &mut Tape, theta: Var, tau: f32, rng: &mut Rng) -> Result<Var> {
    let channels = check_theta(tape.value(theta))?;
    check_tau(tau)?;
    let noise = sample_gumbel_noise(channels, rng);
    gumbel_softmax_with_noise(tape, theta, tau, &noise)
}

// ---------------------------------------------------------------------------
// mixed activation

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActPath {
    Analog,
    Digital,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinalizeMode {
    Argmax,
    Sample,
}

/// Per-channel path logits `[analog, digital]`, the Gumbel temperature and,
/// once finalized, the hard assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedActivationState {
    pub theta: Param,
    pub tau: f32,
    pub assignment: Option<Vec<ActPath>>,
}

impl MixedActivationState {
    /// Uniform logits (equal path probabilities).
    pub fn new(channels: usize, tau: f32) -> Self {
        Self {
            theta: Param::new(Tensor::zeros(&[channels, 2])),
            tau,
            assignment: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.theta.value.shape()[0]
    }

    /// `softmax(theta_b)` per channel as `[p_analog, p_digital]`.
    pub fn probabilities(&self) -> Vec<[f64; 2]> {
        self.theta
            .value
            .data()
            .chunks(2)
            .map(|r| {
                let p0 = 1.0 / (1.0 + ((r[1] - r[0]) as f64).exp());
                [p0, 1.0 - p0]
            })
            .collect()
    }

    /// Fixes a hard path per channel. `Argmax` breaks ties toward the
    /// digital path; `Sample` draws from the softmax of the logits.
    pub fn finalize_assignment(&mut self, mode: FinalizeMode, rng: &mut Rng) -> Vec<ActPath> {
        let assignment: Vec<ActPath> = match mode {
            FinalizeMode::Argmax => self
                .theta
                .value
                .data()
                .chunks(2)
                .map(|r| if r[0] > r[1] { ActPath::Analog } else { ActPath::Digital })
                .collect(),
            FinalizeMode::Sample => self
                .probabilities()
                .into_iter()
                .map(|p| {
                    let u: f64 = rand::Rng::random(rng);
                    if u < p[0] {
                        ActPath::Analog
                    } else {
                        ActPath::Digital
                    }
                })
                .collect(),
        };
        self.assignment = Some(assignment.clone());
        assignment
    }

    pub fn set_assignment(&mut self, assignment: Vec<ActPath>) -> Result<()> {
        if assignment.len() != self.channels() {
            return Err(Error::invalid(format!(
                "assignment has {} channels, layer has {}",
                assignment.len(),
                self.channels()
            )));
        }
        self.assignment = Some(assignment);
        Ok(())
    }
}

/// How the per-channel path weights of a mixed activation are obtained.
pub enum MixWeights<'a> {
    /// `[channels, 2]` node holding `[w_analog, w_digital]` per channel.
    Soft(Var),
    /// One path per channel; only the selected path is evaluated.
    Hard(&'a [ActPath]),
}

fn channel_layout(x: &Tensor) -> Result<(usize, usize)> {
    let s = x.shape();
    if s.len() < 2 {
        return Err(Error::invalid(format!(
            "mixed activation needs [batch, channels, ...], got {s:?}"
        )));
    }
    Ok((s[1], s[2..].iter().product()))
}

/// Mixed analog/digital activation over dimension 1 of `x`.
pub fn mixed_act(
    tape: &mut Tape,
    x: Var,
    alpha: Var,
    weights: MixWeights<'_>,
    analog: &AnalogActConfig,
    digital: DigitalActConfig,
    noise: Option<&mut Rng>,
) -> Result<Var> {
    let a = check_alpha(tape, alpha)?;
    let (channels, inner) = channel_layout(tape.value(x))?;
    let sigma = analog.noise_sigma();
    let mut noise = noise;
    let cb = &analog.codebook;
    let mut analog_fn = |v: f32| match (&sigma, noise.as_deref_mut()) {
        (Some(s), Some(rng)) => analog_value_noisy(v, a, cb, s, rng),
        _ => analog_value(v, a, cb),
    };

    match weights {
        MixWeights::Soft(w) => {
            let wv = tape.value(w);
            if wv.shape() != [channels, 2] {
                return Err(Error::ShapeMismatch {
                    op: "mixed_act",
                    lhs: tape.value(x).shape().to_vec(),
                    rhs: wv.shape().to_vec(),
                });
            }
            let wd = wv.data().to_vec();
            let xv = tape.value(x);
            let n = xv.numel();
            let mut f1 = Vec::with_capacity(n);
            let mut f2 = Vec::with_capacity(n);
            let mut out = Vec::with_capacity(n);
            for (chunk_idx, chunk) in xv.data().chunks(inner).enumerate() {
                let ch = chunk_idx % channels;
                let (w1, w2) = (wd[2 * ch], wd[2 * ch + 1]);
                for &v in chunk {
                    let y1 = analog_fn(v);
                    let y2 = digital_value(v, a, digital);
                    f1.push(y1);
                    f2.push(y2);
                    out.push(w1 * y1 + w2 * y2);
                }
            }
            let out = Tensor::new(xv.shape().to_vec(), out)?;
            let op = SoftMixBackward {
                codebook: cb.clone(),
                channels,
                inner,
                f1,
                f2,
            };
            Ok(tape.record(&[x, alpha, w], out, Box::new(op)))
        }
        MixWeights::Hard(paths) => {
            if paths.len() != channels {
                return Err(Error::invalid(format!(
                    "assignment has {} channels, activation has {channels}",
                    paths.len()
                )));
            }
            let xv = tape.value(x);
            let mut out = Vec::with_capacity(xv.numel());
            for (chunk_idx, chunk) in xv.data().chunks(inner).enumerate() {
                match paths[chunk_idx % channels] {
                    ActPath::Analog => out.extend(chunk.iter().map(|&v| analog_fn(v))),
                    ActPath::Digital => {
                        out.extend(chunk.iter().map(|&v| digital_value(v, a, digital)))
                    }
                }
            }
            let out = Tensor::new(xv.shape().to_vec(), out)?;
            let op = HardMixBackward {
                codebook: cb.clone(),
                paths: paths.to_vec(),
                inner,
            };
            Ok(tape.record(&[x, alpha], out, Box::new(op)))
        }
    }
}

struct SoftMixBackward {
    codebook: Codebook,
    channels: usize,
    inner: usize,
    f1: Vec<f32>,
    f2: Vec<f32>,
}

impl Backward for SoftMixBackward {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, ct: &Tensor) -> Vec<Option<Tensor>> {
        let (x, a, w) = (inputs[0], inputs[1].item(), inputs[2].data());
        let mut gx = vec![0.0f32; x.numel()];
        let mut ga = 0.0f64;
        let mut gw = vec![0.0f64; self.channels * 2];
        for (i, ((&v, &c), g)) in x.data().iter().zip(ct.data()).zip(gx.iter_mut()).enumerate() {
            let ch = (i / self.inner) % self.channels;
            let (w1, w2) = (w[2 * ch], w[2 * ch + 1]);
            *g = c * (w1 + w2) * passthrough_grad(v, a);
            ga += (c * (w1 * analog_alpha_grad(v, a, &self.codebook) + w2 * digital_alpha_grad(v, a)))
                as f64;
            gw[2 * ch] += (c * self.f1[i]) as f64;
            gw[2 * ch + 1] += (c * self.f2[i]) as f64;
        }
        vec![
            Tensor::new(x.shape().to_vec(), gx).ok(),
            Some(Tensor::scalar(ga as f32)),
            Tensor::new(vec![self.channels, 2], gw.into_iter().map(|v| v as f32).collect()).ok(),
        ]
    }
}

struct HardMixBackward {
    codebook: Codebook,
    paths: Vec<ActPath>,
    inner: usize,
}

impl Backward for HardMixBackward {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, ct: &Tensor) -> Vec<Option<Tensor>> {
        let (x, a) = (inputs[0], inputs[1].item());
        let channels = self.paths.len();
        let mut gx = vec![0.0f32; x.numel()];
        let mut ga = 0.0f64;
        for (i, ((&v, &c), g)) in x.data().iter().zip(ct.data()).zip(gx.iter_mut()).enumerate() {
            *g = c * passthrough_grad(v, a);
            let da = match self.paths[(i / self.inner) % channels] {
                ActPath::Analog => analog_alpha_grad(v, a, &self.codebook),
                ActPath::Digital => digital_alpha_grad(v, a),
            };
            ga += (c * da) as f64;
        }
        vec![
            Tensor::new(x.shape().to_vec(), gx).ok(),
            Some(Tensor::scalar(ga as f32)),
        ]
    }
}
