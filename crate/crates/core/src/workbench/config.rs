//! TOML run configuration.
//!
//! ```toml
//! seed = 7
//!
//! [hardware]
//! adc = "ADC-1"          # built-in ADC-1 / ADC-2, or a key of [hardware.adcs]
//! macam = "MACAM-1"      # built-in MACAM-1 / MACAM-2, or a key of [hardware.mtj_tables]
//! e_anlg = "3.6fJ"       # optional; defaults per level table
//!
//! [hardware.adcs.fast]
//! bits = 6
//! power = "14mW"
//! latency = "1.33ns"
//!
//! [hardware.mtj_tables.wide]
//! boundary_voltages = [0.0, 1.5, 3.0]
//! e_anlg = "2fJ"
//!
//! [dataset]
//! kind = "synthetic"     # or "idx" with train_images/train_labels/test_images/test_labels
//! ```
//!
//! `[model]`, `[schedule]`, `[constraint]`, `[noise]`, `[search]` and
//! `[eval]` mirror their library types; every omitted key takes its default.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::units;
use crate::activation::FinalizeMode;
use crate::device::MtjLevelTable;
use crate::energy::{default_macam_energy, AdcSpec, EnergyConstraint, HardwareEnergyConfig};
use crate::error::{Error, Result};
use crate::trainer::{ModelSpec, NoiseSpec, PhaseSchedule};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawHardware {
    adc: String,
    macam: String,
    #[serde(deserialize_with = "units::joules_opt")]
    e_anlg: Option<f64>,
    #[serde(deserialize_with = "units::joules")]
    e_digi_act: f64,
    #[serde(deserialize_with = "units::joules")]
    e_vcsel: f64,
    #[serde(deserialize_with = "units::joules")]
    e_pd: f64,
    #[serde(deserialize_with = "units::joules")]
    e_sa: f64,
    adcs: BTreeMap<String, RawAdc>,
    mtj_tables: BTreeMap<String, RawMtj>,
}

impl Default for RawHardware {
    fn default() -> Self {
        Self {
            adc: "ADC-1".into(),
            macam: "MACAM-1".into(),
            e_anlg: None,
            e_digi_act: 0.0,
            e_vcsel: 0.0,
            e_pd: 0.0,
            e_sa: 0.0,
            adcs: BTreeMap::new(),
            mtj_tables: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAdc {
    bits: u32,
    #[serde(deserialize_with = "units::watts")]
    power: f64,
    #[serde(deserialize_with = "units::seconds")]
    latency: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMtj {
    boundary_voltages: Vec<f64>,
    #[serde(default, deserialize_with = "units::joules_opt")]
    e_anlg: Option<f64>,
}

/// Class-conditional blob images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub channels: usize,
    pub size: usize,
    /// Std of the additive pixel noise.
    pub noise: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            classes: 10,
            train_per_class: 40,
            test_per_class: 20,
            channels: 1,
            size: 8,
            noise: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxSpec {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    /// Number of classes; inferred from the labels when omitted.
    #[serde(default)]
    pub classes: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetSpec {
    Synthetic(SynthSpec),
    Idx(IdxSpec),
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Synthetic(SynthSpec::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSettings {
    pub finalize: FinalizeMode,
}

impl Default for SearchSettings {
    fn default() -> Self {
        Self {
            finalize: FinalizeMode::Sample,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    /// Noisy evaluation passes per `eval`.
    pub runs: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { runs: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawConfig {
    seed: u64,
    hardware: RawHardware,
    model: ModelSpec,
    schedule: PhaseSchedule,
    constraint: EnergyConstraint,
    noise: NoiseSpec,
    dataset: DatasetSpec,
    search: SearchSettings,
    eval: EvalSettings,
}

/// Fully resolved and validated configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub seed: u64,
    pub hardware: HardwareEnergyConfig,
    pub mtj: MtjLevelTable,
    pub model: ModelSpec,
    pub schedule: PhaseSchedule,
    pub constraint: EnergyConstraint,
    pub noise: NoiseSpec,
    pub dataset: DatasetSpec,
    pub search: SearchSettings,
    pub eval: EvalSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        resolve(RawConfig::default()).expect("defaults are valid")
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading config {}", path.display()), e))?;
    let mut cfg = parse_config(&text)?;
    if let DatasetSpec::Idx(idx) = &mut cfg.dataset {
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut idx.train_images,
            &mut idx.train_labels,
            &mut idx.test_images,
            &mut idx.test_labels,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
    Ok(cfg)
}

/// Parses and validates TOML text. Dataset paths are left as written.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let de = toml::Deserializer::parse(text).map_err(|e| Error::config("<root>", e.to_string()))?;
    let raw: RawConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        Error::config(path, inner.message().to_string())
    })?;
    resolve(raw)
}

fn resolve(raw: RawConfig) -> Result<RunConfig> {
    let hw = &raw.hardware;
    let adc = match hw.adcs.get(&hw.adc) {
        Some(a) => AdcSpec {
            name: hw.adc.clone(),
            bits: a.bits,
            power_w: a.power,
            latency_s: a.latency,
        },
        None => match hw.adc.as_str() {
            "ADC-1" => AdcSpec::adc1(),
            "ADC-2" => AdcSpec::adc2(),
            other => {
                return Err(Error::config(
                    "hardware.adc",
                    format!("unknown ADC table `{other}`; define it under [hardware.adcs.{other}]"),
                ))
            }
        },
    };
    let (mtj, table_energy) = match hw.mtj_tables.get(&hw.macam) {
        Some(t) => (
            MtjLevelTable::new(hw.macam.clone(), t.boundary_voltages.clone())
                .map_err(|e| Error::config(format!("hardware.mtj_tables.{}", hw.macam), e.to_string()))?,
            t.e_anlg,
        ),
        None => match hw.macam.as_str() {
            "MACAM-1" => (MtjLevelTable::macam1(), None),
            "MACAM-2" => (MtjLevelTable::macam2(), None),
            other => {
                return Err(Error::config(
                    "hardware.macam",
                    format!(
                        "unknown level table `{other}`; define it under [hardware.mtj_tables.{other}]"
                    ),
                ))
            }
        },
    };
    let e_anlg = hw
        .e_anlg
        .or(table_energy)
        .or_else(|| default_macam_energy(&hw.macam))
        .ok_or_else(|| {
            Error::config(
                "hardware.e_anlg",
                format!("no analog energy known for `{}`; set it explicitly", hw.macam),
            )
        })?;
    let mut hardware = HardwareEnergyConfig::from_parts(&adc, &hw.macam, e_anlg);
    hardware.e_digi_act = hw.e_digi_act;
    hardware.e_vcsel = hw.e_vcsel;
    hardware.e_pd = hw.e_pd;
    hardware.e_sa = hw.e_sa;

    let checks: [(&str, Result<()>); 5] = [
        ("hardware", hardware.validate()),
        ("model", raw.model.validate()),
        ("schedule", raw.schedule.validate()),
        ("constraint", raw.constraint.validate()),
        ("noise", raw.noise.validate()),
    ];
    for (section, check) in checks {
        check.map_err(|e| Error::config(section, e.to_string()))?;
    }
    if raw.constraint.e_min > 1.0 {
        return Err(Error::config(
            "constraint.e_min",
            format!("{} exceeds the normalized all-digital energy 1.0", raw.constraint.e_min),
        ));
    }
    if let DatasetSpec::Synthetic(s) = &raw.dataset {
        let fields = [
            ("classes", s.classes),
            ("train_per_class", s.train_per_class),
            ("test_per_class", s.test_per_class),
            ("channels", s.channels),
            ("size", s.size),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::config(format!("dataset.{name}"), "must be positive"));
            }
        }
        if s.classes < 2 {
            return Err(Error::config("dataset.classes", "need at least 2 classes"));
        }
        if !(s.noise >= 0.0) {
            return Err(Error::config("dataset.noise", "must be >= 0"));
        }
    }
    if raw.eval.runs == 0 {
        return Err(Error::config("eval.runs", "must be at least 1"));
    }

    Ok(RunConfig {
        seed: raw.seed,
        hardware,
        mtj,
        model: raw.model,
        schedule: raw.schedule,
        constraint: raw.constraint,
        noise: raw.noise,
        dataset: raw.dataset,
        search: raw.search,
        eval: raw.eval,
    })
}
