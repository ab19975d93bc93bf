//! Behavioral model of an MTJ-based analog CAM used as a quantizing
//! activation.
//!
//! A row of the array matches inputs inside `[v_{j-1}, v_j)`; the final row
//! matches `[v_{k-1}, inf)`. The one-hot match vector is priority-encoded to an
//! interval index, and each index maps to a representative value: the interval
//! midpoint for finite intervals and the lower bound for the overflow
//! interval. All voltages are in the normalized frame where `v_0 = 0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Match-interval boundaries realized by one MTJ device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MtjLevelTable {
    pub name: String,
    pub boundary_voltages: Vec<f64>,
}

impl MtjLevelTable {
    pub fn new(name: impl Into<String>, boundary_voltages: Vec<f64>) -> Result<Self> {
        let table = Self {
            name: name.into(),
            boundary_voltages,
        };
        table.validate()?;
        Ok(table)
    }

    /// Evenly spaced boundaries `0, 1, ..., levels - 1`.
    pub fn uniform(name: impl Into<String>, levels: usize) -> Self {
        Self {
            name: name.into(),
            boundary_voltages: (0..levels).map(|v| v as f64).collect(),
        }
    }

    /// Five resistance levels: four finite intervals plus overflow.
    pub fn macam1() -> Self {
        Self::uniform("MACAM-1", 5)
    }

    /// Three resistance levels: two finite intervals plus overflow.
    pub fn macam2() -> Self {
        Self::uniform("MACAM-2", 3)
    }

    pub fn validate(&self) -> Result<()> {
        let v = &self.boundary_voltages;
        if v.len() < 2 {
            return Err(Error::invalid(format!(
                "level table `{}` needs at least 2 boundaries, got {}",
                self.name,
                v.len()
            )));
        }
        if v.iter().any(|b| !b.is_finite()) {
            return Err(Error::invalid(format!(
                "level table `{}` has non-finite boundaries",
                self.name
            )));
        }
        if v[0] != 0.0 {
            return Err(Error::invalid(format!(
                "level table `{}` must start at 0 V after biasing, got {}",
                self.name, v[0]
            )));
        }
        if let Some(w) = v.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::invalid(format!(
                "level table `{}` boundaries must be strictly increasing ({} then {})",
                self.name, w[0], w[1]
            )));
        }
        Ok(())
    }
}

/// Interval boundaries and the value each interval projects to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    boundaries: Vec<f32>,
    representative_values: Vec<f32>,
}

pub fn build_codebook(levels: &MtjLevelTable) -> Result<Codebook> {
    levels.validate()?;
    let v = &levels.boundary_voltages;
    let mut reps: Vec<f32> = v.windows(2).map(|w| ((w[0] + w[1]) / 2.0) as f32).collect();
    reps.push(v[v.len() - 1] as f32);
    Ok(Codebook {
        boundaries: v.iter().map(|&b| b as f32).collect(),
        representative_values: reps,
    })
}

impl Codebook {
    pub fn boundaries(&self) -> &[f32] {
        &self.boundaries
    }

    pub fn representative_values(&self) -> &[f32] {
        &self.representative_values
    }

    /// Upper end of the search range, `c = v_{k-1}`.
    pub fn search_range(&self) -> f32 {
        self.boundaries[self.boundaries.len() - 1]
    }

    /// Number of intervals including the overflow interval.
    pub fn len(&self) -> usize {
        self.representative_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.representative_values.is_empty()
    }

    /// Interval index for a non-negative input; boundary values resolve to
    /// the upper interval.
    #[inline]
    pub(crate) fn index_unchecked(&self, x: f32) -> usize {
        self.boundaries.partition_point(|&b| b <= x).saturating_sub(1)
    }

    #[inline]
    pub(crate) fn project_unchecked(&self, x: f32) -> f32 {
        self.representative_values[self.index_unchecked(x)]
    }

    /// Priority-encoded interval index of `x`.
    pub fn encode(&self, x: f32) -> Result<usize> {
        check_input(x)?;
        Ok(self.index_unchecked(x))
    }

    /// Representative value of the interval containing `x`.
    pub fn project(&self, x: f32) -> Result<f32> {
        check_input(x)?;
        Ok(self.project_unchecked(x))
    }
}

fn check_input(x: f32) -> Result<()> {
    if x.is_nan() || x < 0.0 {
        return Err(Error::invalid(format!(
            "projection input {x} must be non-negative; clip negatives before the array"
        )));
    }
    Ok(())
}

/// Monte-Carlo characterization of device-to-device boundary variation,
/// reduced to an equivalent additive input noise per interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationProfile {
    pub sigma_rel: f64,
    pub n_samples: usize,
    pub seed: u64,
    /// Empirical std of each perturbed boundary (volts); entry 0 is `v_0`.
    pub boundary_sigma: Vec<f64>,
    /// Equivalent input-noise std per interval (volts), overflow last.
    pub per_interval_input_sigma: Vec<f64>,
}

impl VariationProfile {
    pub fn is_noiseless(&self) -> bool {
        self.per_interval_input_sigma.iter().all(|&s| s == 0.0)
    }
}

/// Perturbs every boundary as `v * (1 + eps)`, `eps ~ N(0, sigma_rel^2)`,
/// `n_samples` times and records the empirical spread.
///
/// A finite interval takes the pooled std of its two adjacent boundaries,
/// `sqrt((s_lo^2 + s_hi^2) / 2)`; the overflow interval takes the std of
/// `v_{k-1}`.
pub fn characterize_variation(
    cb: &Codebook,
    sigma_rel: f64,
    n_samples: usize,
    seed: u64,
) -> Result<VariationProfile> {
    if !(sigma_rel >= 0.0 && sigma_rel.is_finite()) {
        return Err(Error::invalid(format!("sigma_rel must be >= 0, got {sigma_rel}")));
    }
    if n_samples == 0 {
        return Err(Error::invalid("n_samples must be at least 1"));
    }
    let mut stream = rng::seeded(seed);
    let boundary_sigma: Vec<f64> = cb
        .boundaries
        .iter()
        .map(|&v| {
            let v = v as f64;
            let draws: Vec<f64> = (0..n_samples)
                .map(|_| v * (1.0 + sigma_rel * rng::standard_normal(&mut stream)))
                .collect();
            empirical_std(&draws)
        })
        .collect();

    let k = boundary_sigma.len();
    let mut per_interval: Vec<f64> = boundary_sigma
        .windows(2)
        .map(|w| ((w[0] * w[0] + w[1] * w[1]) / 2.0).sqrt())
        .collect();
    per_interval.push(boundary_sigma[k - 1]);

    Ok(VariationProfile {
        sigma_rel,
        n_samples,
        seed,
        boundary_sigma,
        per_interval_input_sigma: per_interval,
    })
}

fn empirical_std(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    var.sqrt()
}
