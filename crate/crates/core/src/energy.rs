//! Activation-energy accounting for mixed analog/digital assignments.
//!
//! Search-time energy counts one event per output activation:
//! `E_act = sum_l sum_b (a_b,analog * E_anlg + a_b,digital * E_digi) * H'W'`
//! with `E_digi` taken as the ADC energy. The system-level models add the
//! photonic partial-sum overhead (mixed system) or per-partial-sum ADC
//! conversions (conventional system).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Per-event energies in joules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardwareEnergyConfig {
    pub e_anlg: f64,
    pub e_digi_adc: f64,
    pub e_digi_act: f64,
    pub e_vcsel: f64,
    pub e_pd: f64,
    pub e_adc: f64,
    pub e_sa: f64,
    pub adc_name: String,
    pub macam_name: String,
}

/// An ADC design point; per-sample energy is power times latency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdcSpec {
    pub name: String,
    pub bits: u32,
    pub power_w: f64,
    pub latency_s: f64,
}

impl AdcSpec {
    pub fn adc1() -> Self {
        Self {
            name: "ADC-1".into(),
            bits: 6,
            power_w: 1.26e-3,
            latency_s: 8e-9,
        }
    }

    pub fn adc2() -> Self {
        Self {
            name: "ADC-2".into(),
            bits: 6,
            power_w: 14e-3,
            latency_s: 1.33e-9,
        }
    }

    pub fn energy_per_sample(&self) -> f64 {
        self.power_w * self.latency_s
    }
}

/// Default analog-path energy per activation for the built-in level tables.
pub fn default_macam_energy(name: &str) -> Option<f64> {
    match name {
        "MACAM-1" => Some(3.6e-15),
        "MACAM-2" => Some(2.2e-15),
        _ => None,
    }
}

impl HardwareEnergyConfig {
    /// Analog/ADC pairing with zero summation-unit energies.
    pub fn from_parts(adc: &AdcSpec, macam_name: &str, e_anlg: f64) -> Self {
        let e_adc = adc.energy_per_sample();
        Self {
            e_anlg,
            e_digi_adc: e_adc,
            e_digi_act: 0.0,
            e_vcsel: 0.0,
            e_pd: 0.0,
            e_adc,
            e_sa: 0.0,
            adc_name: adc.name.clone(),
            macam_name: macam_name.to_string(),
        }
    }

    pub fn macam2_adc1() -> Self {
        Self::from_parts(&AdcSpec::adc1(), "MACAM-2", 2.2e-15)
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("e_anlg", self.e_anlg),
            ("e_digi_adc", self.e_digi_adc),
            ("e_digi_act", self.e_digi_act),
            ("e_vcsel", self.e_vcsel),
            ("e_pd", self.e_pd),
            ("e_adc", self.e_adc),
            ("e_sa", self.e_sa),
        ];
        for (name, v) in fields {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be a non-negative energy, got {v}")));
            }
        }
        if self.e_anlg >= self.e_digi_adc {
            return Err(Error::invalid(format!(
                "analog activation energy {} J must be below the ADC energy {} J",
                self.e_anlg, self.e_digi_adc
            )));
        }
        Ok(())
    }
}

impl Default for HardwareEnergyConfig {
    /// MACAM-1 analog path with ADC-1.
    fn default() -> Self {
        Self::from_parts(&AdcSpec::adc1(), "MACAM-1", 3.6e-15)
    }
}

/// Shape of a convolution (or fully connected, `k = 1`, `1x1` output) layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerGeometry {
    pub c_out: usize,
    pub c_in: usize,
    pub k: usize,
    pub h_out: usize,
    pub w_out: usize,
    /// Vector-dot-product length `N`.
    pub vdp_size: usize,
}

impl LayerGeometry {
    pub fn validate(&self) -> Result<()> {
        if [self.c_out, self.c_in, self.k, self.h_out, self.w_out, self.vdp_size].contains(&0) {
            return Err(Error::invalid(format!("layer geometry has a zero dimension: {self:?}")));
        }
        Ok(())
    }

    pub fn pixels(&self) -> usize {
        self.h_out * self.w_out
    }

    /// Number of VDP units one dot product spans, `ceil(C_i k^2 / N)`.
    pub fn vdp_chunks(&self) -> usize {
        (self.c_in * self.k * self.k).div_ceil(self.vdp_size)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyConstraint {
    pub e_min: f64,
    pub e_max: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for EnergyConstraint {
    fn default() -> Self {
        Self {
            e_min: 0.15,
            e_max: 0.25,
            beta: 0.6,
            gamma: 0.05,
        }
    }
}

impl EnergyConstraint {
    pub fn validate(&self) -> Result<()> {
        if !(self.e_min >= 0.0 && self.e_min < self.e_max) {
            return Err(Error::invalid(format!(
                "energy band needs 0 <= e_min < e_max, got [{}, {}]",
                self.e_min, self.e_max
            )));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::invalid(format!("gamma must be in [0, 1), got {}", self.gamma)));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::invalid(format!("beta must be >= 0, got {}", self.beta)));
        }
        Ok(())
    }

    /// Inner band `[(1 + gamma) e_min, (1 - gamma) e_max]` where the penalty is zero.
    pub fn penalty_free_band(&self) -> (f64, f64) {
        ((1.0 + self.gamma) * self.e_min, (1.0 - self.gamma) * self.e_max)
    }
}

/// Per-channel `[w_analog, w_digital]` weights of every activation layer.
pub type LayerWeights = Vec<[f64; 2]>;

fn check_layers<T>(assign: &[T], geoms: &[LayerGeometry]) -> Result<()> {
    if assign.len() != geoms.len() {
        return Err(Error::invalid(format!(
            "{} assignment layers for {} geometries",
            assign.len(),
            geoms.len()
        )));
    }
    Ok(())
}

/// Activation energy with explicit path energies.
pub fn act_energy_with(
    assign: &[LayerWeights],
    geoms: &[LayerGeometry],
    e_anlg: f64,
    e_digi: f64,
) -> Result<f64> {
    check_layers(assign, geoms)?;
    let mut total = 0.0;
    for (l, (rows, g)) in assign.iter().zip(geoms).enumerate() {
        if rows.len() != g.c_out {
            return Err(Error::invalid(format!(
                "layer {l}: {} channel weights for C_o = {}",
                rows.len(),
                g.c_out
            )));
        }
        let mut layer = 0.0;
        for (b, w) in rows.iter().enumerate() {
            if w[0] < 0.0 || w[1] < 0.0 || (w[0] + w[1] - 1.0).abs() > 1e-6 {
                return Err(Error::invalid(format!(
                    "layer {l} channel {b}: path weights {w:?} are not on the simplex"
                )));
            }
            layer += w[0] * e_anlg + w[1] * e_digi;
        }
        total += layer * g.pixels() as f64;
    }
    Ok(total)
}

/// Search-time activation energy (joules), `E_digi = E_digi_adc`.
pub fn act_energy(
    assign: &[LayerWeights],
    geoms: &[LayerGeometry],
    hw: &HardwareEnergyConfig,
) -> Result<f64> {
    act_energy_with(assign, geoms, hw.e_anlg, hw.e_digi_adc)
}

/// Activation energy with every channel on the digital path.
pub fn all_digital_energy(geoms: &[LayerGeometry], hw: &HardwareEnergyConfig) -> f64 {
    geoms
        .iter()
        .map(|g| (g.c_out * g.pixels()) as f64 * hw.e_digi_adc)
        .sum()
}

/// Energy relative to the all-digital activation energy of the same layers.
pub fn normalize(e: f64, geoms: &[LayerGeometry], hw: &HardwareEnergyConfig) -> Result<f64> {
    let base = all_digital_energy(geoms, hw);
    if !(base > 0.0) {
        return Err(Error::invalid("all-digital baseline energy is zero"));
    }
    Ok(e / base)
}

/// Signed penalty keeping the (normalized) energy inside the band.
pub fn energy_penalty(e: f64, c: &EnergyConstraint) -> f64 {
    let (lo, hi) = c.penalty_free_band();
    if e > hi {
        c.beta * e / hi
    } else if e < lo {
        -c.beta * e / lo
    } else {
        0.0
    }
}

/// Derivative of [`energy_penalty`] with respect to `e`.
pub fn energy_penalty_grad(e: f64, c: &EnergyConstraint) -> f64 {
    let (lo, hi) = c.penalty_free_band();
    if e > hi {
        c.beta / hi
    } else if e < lo {
        -c.beta / lo
    } else {
        0.0
    }
}

/// Analog/digital channel split of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelCounts {
    pub analog: usize,
    pub digital: usize,
}

/// Energy breakdown of one layer under both system models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LayerEnergyTerms {
    pub activation: f64,
    pub vcsel: f64,
    pub photodetector: f64,
    pub mixed_total: f64,
    pub conventional_activation: f64,
    pub conventional_conversion: f64,
    pub conventional_total: f64,
}

pub fn layer_energy_terms(
    g: &LayerGeometry,
    counts: ChannelCounts,
    hw: &HardwareEnergyConfig,
) -> LayerEnergyTerms {
    let px = g.pixels() as f64;
    let outputs = g.c_out as f64 * px;
    let chunks = g.vdp_chunks() as f64;
    let activation = (counts.analog as f64 * hw.e_anlg
        + counts.digital as f64 * (hw.e_digi_adc + hw.e_digi_act))
        * px;
    let vcsel = hw.e_vcsel * outputs * chunks;
    let photodetector = outputs * hw.e_pd;
    let conventional_activation = outputs * hw.e_digi_act;
    let conventional_conversion = (hw.e_adc + hw.e_sa + hw.e_pd) * outputs * chunks;
    LayerEnergyTerms {
        activation,
        vcsel,
        photodetector,
        mixed_total: activation + vcsel + photodetector,
        conventional_activation,
        conventional_conversion,
        conventional_total: conventional_activation + conventional_conversion,
    }
}

/// A/D conversion plus activation energy of the mixed system, including the
/// photonic partial-sum summation overhead.
pub fn system_energy_mixed(
    geoms: &[LayerGeometry],
    counts: &[ChannelCounts],
    hw: &HardwareEnergyConfig,
) -> Result<f64> {
    check_layers(counts, geoms)?;
    let mut total = 0.0;
    for (l, (g, c)) in geoms.iter().zip(counts).enumerate() {
        if c.analog + c.digital != g.c_out {
            return Err(Error::invalid(format!(
                "layer {l}: {} analog + {} digital channels != C_o = {}",
                c.analog, c.digital, g.c_out
            )));
        }
        total += layer_energy_terms(g, *c, hw).mixed_total;
    }
    Ok(total)
}

/// A/D conversion plus activation energy when every partial sum is digitized.
pub fn system_energy_conventional(geoms: &[LayerGeometry], hw: &HardwareEnergyConfig) -> f64 {
    geoms
        .iter()
        .map(|g| {
            let counts = ChannelCounts {
                analog: 0,
                digital: g.c_out,
            };
            layer_energy_terms(g, counts, hw).conventional_total
        })
        .sum()
}

/// Differentiable normalized activation energy of soft path weights.
///
/// `weights[l]` is a `[C_o, 2]` node for layer `l`.
pub fn soft_energy_node(
    tape: &mut Tape,
    weights: &[Var],
    geoms: &[LayerGeometry],
    hw: &HardwareEnergyConfig,
) -> Result<Var> {
    check_layers(weights, geoms)?;
    let base = all_digital_energy(geoms, hw);
    if !(base > 0.0) {
        return Err(Error::invalid("all-digital baseline energy is zero"));
    }
    let mut coeffs = Vec::with_capacity(geoms.len());
    let mut total = 0.0f64;
    for (&w, g) in weights.iter().zip(geoms) {
        let wv = tape.value(w);
        if wv.shape() != [g.c_out, 2] {
            return Err(Error::ShapeMismatch {
                op: "soft_energy",
                lhs: wv.shape().to_vec(),
                rhs: vec![g.c_out, 2],
            });
        }
        let px = g.pixels() as f64;
        let ca = hw.e_anlg * px / base;
        let cd = hw.e_digi_adc * px / base;
        total += wv
            .data()
            .chunks(2)
            .map(|r| r[0] as f64 * ca + r[1] as f64 * cd)
            .sum::<f64>();
        coeffs.push([ca as f32, cd as f32]);
    }
    let op = move |inputs: &[&Tensor], _: &Tensor, ct: &Tensor| {
        let c = ct.item();
        inputs
            .iter()
            .zip(&coeffs)
            .map(|(w, k)| {
                let rows = w.shape()[0];
                let g = (0..rows).flat_map(|_| [c * k[0], c * k[1]]).collect();
                Tensor::new(vec![rows, 2], g).ok()
            })
            .collect()
    };
    Ok(tape.record(weights, Tensor::scalar(total as f32), Box::new(op)))
}

/// Penalty node over a scalar energy node.
pub fn penalty_node(tape: &mut Tape, energy: Var, c: &EnergyConstraint) -> Var {
    let e = tape.value(energy).item() as f64;
    let value = energy_penalty(e, c) as f32;
    let slope = energy_penalty_grad(e, c) as f32;
    let op = move |_: &[&Tensor], _: &Tensor, ct: &Tensor| vec![Some(Tensor::scalar(ct.item() * slope))];
    tape.record(&[energy], Tensor::scalar(value), Box::new(op))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(c_out: usize, c_in: usize, k: usize, h: usize, w: usize, n: usize) -> LayerGeometry {
        LayerGeometry {
            c_out,
            c_in,
            k,
            h_out: h,
            w_out: w,
            vdp_size: n,
        }
    }

    #[test]
    fn act_energy_examples() {
        let g = [geom(4, 1, 3, 10, 1, 128)];
        let all_analog = vec![vec![[1.0, 0.0]; 4]];
        assert_eq!(act_energy_with(&all_analog, &g, 1.0, 10.0).unwrap(), 40.0);
        let mixed = vec![vec![[1.0, 0.0], [0.0, 1.0], [0.0, 1.0], [0.0, 1.0]]];
        assert_eq!(act_energy_with(&mixed, &g, 1.0, 10.0).unwrap(), 310.0);
        let half = vec![vec![[0.5, 0.5]; 4]];
        assert_eq!(act_energy_with(&half, &g, 1.0, 10.0).unwrap(), (40.0 + 400.0) / 2.0);
        assert!(act_energy_with(&half, &[], 1.0, 10.0).is_err());
        assert!(act_energy_with(&vec![vec![[0.7, 0.7]; 4]], &g, 1.0, 10.0).is_err());
    }

    #[test]
    fn penalty_examples() {
        let c = EnergyConstraint {
            e_min: 0.1,
            e_max: 1.0,
            beta: 1.0,
            gamma: 0.05,
        };
        assert_eq!(energy_penalty(0.5, &c), 0.0);
        assert!((energy_penalty(1.0, &c) - 1.0 / 0.95).abs() < 1e-12);
        assert!((energy_penalty(0.05, &c) + 0.05 / 0.105).abs() < 1e-12);
        let (lo, hi) = c.penalty_free_band();
        assert_eq!(energy_penalty(lo, &c), 0.0);
        assert_eq!(energy_penalty(hi, &c), 0.0);
    }

    #[test]
    fn mixed_system_toy_layer() {
        let g = [geom(2, 8, 3, 2, 2, 64)];
        let hw = HardwareEnergyConfig {
            e_anlg: 1.0,
            e_digi_adc: 10.0,
            e_vcsel: 2.0,
            e_pd: 3.0,
            ..HardwareEnergyConfig::default()
        };
        let counts = [ChannelCounts { analog: 2, digital: 0 }];
        assert_eq!(system_energy_mixed(&g, &counts, &hw).unwrap(), 64.0);
        let bad = [ChannelCounts { analog: 1, digital: 0 }];
        assert!(system_energy_mixed(&g, &bad, &hw).is_err());
    }

    #[test]
    fn conventional_toy_layer() {
        let g = [geom(2, 8, 3, 2, 2, 64)];
        let hw = HardwareEnergyConfig {
            e_digi_act: 1.0,
            e_adc: 5.0,
            e_sa: 1.0,
            e_pd: 3.0,
            ..HardwareEnergyConfig::default()
        };
        assert_eq!(system_energy_conventional(&g, &hw), 152.0);
    }

    #[test]
    fn normalized_defaults() {
        let g = [geom(16, 3, 3, 8, 8, 128), geom(32, 16, 3, 4, 4, 128)];
        let hw = HardwareEnergyConfig::default();
        let analog: Vec<LayerWeights> = g.iter().map(|g| vec![[1.0, 0.0]; g.c_out]).collect();
        let digital: Vec<LayerWeights> = g.iter().map(|g| vec![[0.0, 1.0]; g.c_out]).collect();
        let ea = normalize(act_energy(&analog, &g, &hw).unwrap(), &g, &hw).unwrap();
        let ed = normalize(act_energy(&digital, &g, &hw).unwrap(), &g, &hw).unwrap();
        assert!((ed - 1.0).abs() < 1e-12);
        assert!((ea - 3.6e-4).abs() / 3.6e-4 < 0.1, "{ea}");
        assert!(normalize(1.0, &[], &hw).is_err());
    }

    #[test]
    fn constraint_validation() {
        let mut c = EnergyConstraint::default();
        assert!(c.validate().is_ok());
        c.e_min = 0.3;
        assert!(c.validate().is_err());
    }

    #[test]
    fn hardware_validation() {
        let mut hw = HardwareEnergyConfig::default();
        assert!(hw.validate().is_ok());
        hw.e_anlg = 1.0;
        assert!(hw.validate().is_err());
        assert!((AdcSpec::adc2().energy_per_sample() - 18.62e-12).abs() < 1e-18);
    }
}
