//! Python bindings: codebooks and activation rules, device variation,
//! energy accounting, and the workbench commands.

use std::path::PathBuf;

use macam_core::activation::{self, ActPath, DigitalActConfig};
use macam_core::device::{self, MtjLevelTable};
use macam_core::energy::{self, LayerGeometry};
use macam_core::trainer;
use macam_core::workbench::{self, commands};
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyAny;
use serde::Serialize;

fn err(e: macam_core::Error) -> PyErr {
    match e {
        macam_core::Error::Io { .. } | macam_core::Error::MissingArtifact(_) => {
            PyOSError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Converts any serializable value to native Python objects via JSON.
fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn parse_path(name: &str) -> PyResult<ActPath> {
    match name {
        "analog" => Ok(ActPath::Analog),
        "digital" => Ok(ActPath::Digital),
        other => Err(PyValueError::new_err(format!(
            "path must be \"analog\" or \"digital\", got {other:?}"
        ))),
    }
}

/// Interval codebook of an MTJ level table.
#[pyclass(name = "Codebook", frozen)]
struct PyCodebook {
    inner: device::Codebook,
}

#[pymethods]
impl PyCodebook {
    #[new]
    #[pyo3(signature = (boundaries, name = "custom"))]
    fn new(boundaries: Vec<f64>, name: &str) -> PyResult<Self> {
        let table = MtjLevelTable::new(name, boundaries).map_err(err)?;
        Ok(Self {
            inner: device::build_codebook(&table).map_err(err)?,
        })
    }

    /// Built-in level table: "MACAM-1" or "MACAM-2".
    #[staticmethod]
    fn builtin(name: &str) -> PyResult<Self> {
        let table = match name {
            "MACAM-1" => MtjLevelTable::macam1(),
            "MACAM-2" => MtjLevelTable::macam2(),
            other => return Err(PyValueError::new_err(format!("unknown level table {other:?}"))),
        };
        Ok(Self {
            inner: device::build_codebook(&table).map_err(err)?,
        })
    }

    #[getter]
    fn boundaries(&self) -> Vec<f32> {
        self.inner.boundaries().to_vec()
    }

    #[getter]
    fn representative_values(&self) -> Vec<f32> {
        self.inner.representative_values().to_vec()
    }

    #[getter]
    fn search_range(&self) -> f32 {
        self.inner.search_range()
    }

    fn encode(&self, x: f32) -> PyResult<usize> {
        self.inner.encode(x).map_err(err)
    }

    fn project(&self, x: f32) -> PyResult<f32> {
        self.inner.project(x).map_err(err)
    }

    /// Fused analog activation of `x` at threshold `alpha`.
    fn activate(&self, x: f32, alpha: f32) -> f32 {
        activation::analog_value(x, alpha, &self.inner)
    }

    /// Derivative of the analog activation with respect to `alpha`.
    fn alpha_grad(&self, x: f32, alpha: f32) -> f32 {
        activation::analog_alpha_grad(x, alpha, &self.inner)
    }

    /// Monte-Carlo boundary variation as a dict.
    #[pyo3(signature = (sigma_rel, n_samples = 10_000, seed = 0))]
    fn characterize_variation<'py>(
        &self,
        py: Python<'py>,
        sigma_rel: f64,
        n_samples: usize,
        seed: u64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let profile =
            device::characterize_variation(&self.inner, sigma_rel, n_samples, seed).map_err(err)?;
        to_py(py, &profile)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Codebook(boundaries={:?})", self.inner.boundaries())
    }
}

/// Digital path: uniform quantization of ReLU-alpha to `bits` bits.
#[pyfunction]
fn digital_activate(x: f32, alpha: f32, bits: u32) -> PyResult<f32> {
    let cfg = DigitalActConfig::new(bits).map_err(err)?;
    Ok(activation::digital_value(x, alpha, cfg))
}

/// Geometric temperature for search epoch `epoch`.
#[pyfunction]
#[pyo3(signature = (epoch, search_epochs = 80, tau_start = 5.0, tau_end = 0.5))]
fn tau_schedule(epoch: f64, search_epochs: usize, tau_start: f64, tau_end: f64) -> PyResult<f64> {
    let s = trainer::PhaseSchedule {
        search_epochs,
        tau_start,
        tau_end,
        ..Default::default()
    };
    trainer::tau_schedule(epoch, &s).map_err(err)
}

/// Per-event energies in joules.
#[pyclass(name = "HardwareEnergy", frozen, from_py_object)]
#[derive(Clone)]
struct PyHardware {
    inner: energy::HardwareEnergyConfig,
}

#[pymethods]
impl PyHardware {
    /// MACAM-1 with ADC-1 by default; `macam` may be "MACAM-2" and `adc` "ADC-2".
    #[new]
    #[pyo3(signature = (macam = "MACAM-1", adc = "ADC-1", e_anlg = None))]
    fn new(macam: &str, adc: &str, e_anlg: Option<f64>) -> PyResult<Self> {
        let adc = match adc {
            "ADC-1" => energy::AdcSpec::adc1(),
            "ADC-2" => energy::AdcSpec::adc2(),
            other => return Err(PyValueError::new_err(format!("unknown ADC {other:?}"))),
        };
        let e = e_anlg
            .or_else(|| energy::default_macam_energy(macam))
            .ok_or_else(|| PyValueError::new_err(format!("no analog energy for {macam:?}")))?;
        let inner = energy::HardwareEnergyConfig::from_parts(&adc, macam, e);
        inner.validate().map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn e_anlg(&self) -> f64 {
        self.inner.e_anlg
    }

    #[getter]
    fn e_digi_adc(&self) -> f64 {
        self.inner.e_digi_adc
    }

    fn __repr__(&self) -> String {
        format!(
            "HardwareEnergy(macam={:?}, adc={:?}, e_anlg={:e}, e_digi_adc={:e})",
            self.inner.macam_name, self.inner.adc_name, self.inner.e_anlg, self.inner.e_digi_adc
        )
    }
}

fn geometries(layers: Vec<(usize, usize, usize, usize, usize, usize)>) -> PyResult<Vec<LayerGeometry>> {
    layers
        .into_iter()
        .map(|(c_out, c_in, k, h_out, w_out, vdp_size)| {
            let g = LayerGeometry {
                c_out,
                c_in,
                k,
                h_out,
                w_out,
                vdp_size,
            };
            g.validate().map_err(err)?;
            Ok(g)
        })
        .collect()
}

/// Normalized activation energy of a per-layer path assignment.
///
/// `layers` holds `(c_out, c_in, k, h_out, w_out, vdp_size)` tuples and
/// `assignment` one list of "analog"/"digital" per layer.
#[pyfunction]
fn normalized_energy(
    layers: Vec<(usize, usize, usize, usize, usize, usize)>,
    assignment: Vec<Vec<String>>,
    hw: Option<PyHardware>,
) -> PyResult<f64> {
    let geoms = geometries(layers)?;
    let hw = hw.map(|h| h.inner).unwrap_or_default();
    let weights = assignment
        .iter()
        .map(|layer| {
            layer
                .iter()
                .map(|p| {
                    parse_path(p).map(|p| match p {
                        ActPath::Analog => [1.0, 0.0],
                        ActPath::Digital => [0.0, 1.0],
                    })
                })
                .collect::<PyResult<Vec<_>>>()
        })
        .collect::<PyResult<Vec<_>>>()?;
    let e = energy::act_energy(&weights, &geoms, &hw).map_err(err)?;
    energy::normalize(e, &geoms, &hw).map_err(err)
}

/// Signed energy-band penalty.
#[pyfunction]
#[pyo3(signature = (e, e_min = 0.15, e_max = 0.25, beta = 0.6, gamma = 0.05))]
fn energy_penalty(e: f64, e_min: f64, e_max: f64, beta: f64, gamma: f64) -> PyResult<f64> {
    let c = energy::EnergyConstraint {
        e_min,
        e_max,
        beta,
        gamma,
    };
    c.validate().map_err(err)?;
    Ok(energy::energy_penalty(e, &c))
}

/// A loaded run configuration with the workbench commands as methods.
/// Every command writes its artifacts under `out` and returns its summary.
#[pyclass(name = "Workbench")]
struct PyWorkbench {
    cfg: workbench::RunConfig,
}

#[pymethods]
impl PyWorkbench {
    /// Loads a TOML config file; `None` uses the built-in defaults.
    #[new]
    #[pyo3(signature = (config = None, seed = None))]
    fn new(config: Option<PathBuf>, seed: Option<u64>) -> PyResult<Self> {
        let mut cfg = match config {
            Some(p) => workbench::load_config(&p).map_err(err)?,
            None => workbench::RunConfig::default(),
        };
        if let Some(s) = seed {
            cfg.seed = s;
        }
        Ok(Self { cfg })
    }

    /// Parses TOML text.
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Self {
            cfg: workbench::parse_config(text).map_err(err)?,
        })
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.cfg.seed
    }

    /// The resolved configuration as a dict.
    fn config<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.cfg)
    }

    fn warmup<'py>(&self, py: Python<'py>, out: PathBuf) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &commands::warmup(&self.cfg, &out).map_err(err)?)
    }

    fn search<'py>(&self, py: Python<'py>, out: PathBuf) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &commands::search(&self.cfg, &out).map_err(err)?)
    }

    fn retrain<'py>(&self, py: Python<'py>, out: PathBuf) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &commands::retrain(&self.cfg, &out).map_err(err)?)
    }

    #[pyo3(signature = (out, model = None, runs = None))]
    fn eval<'py>(
        &self,
        py: Python<'py>,
        out: PathBuf,
        model: Option<PathBuf>,
        runs: Option<usize>,
    ) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &commands::eval(&self.cfg, &out, model.as_deref(), runs).map_err(err)?)
    }

    /// `assignment` is a file path, or "analog"/"digital" for a uniform one.
    #[pyo3(signature = (out, assignment = None))]
    fn energy_report<'py>(
        &self,
        py: Python<'py>,
        out: PathBuf,
        assignment: Option<String>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let source = match assignment.as_deref() {
            Some(p @ ("analog" | "digital")) => commands::AssignmentSource::Uniform(parse_path(p)?),
            Some(file) => commands::AssignmentSource::File(file.into()),
            None => commands::AssignmentSource::File(
                out.join(workbench::artifacts::ASSIGNMENT_FILE),
            ),
        };
        to_py(py, &commands::energy_report(&self.cfg, &out, &source).map_err(err)?)
    }

    #[pyo3(signature = (out, sigma = None, samples = None))]
    fn device_mc<'py>(
        &self,
        py: Python<'py>,
        out: PathBuf,
        sigma: Option<f64>,
        samples: Option<usize>,
    ) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &commands::device_mc(&self.cfg, &out, sigma, samples).map_err(err)?)
    }

    fn pipeline<'py>(&self, py: Python<'py>, out: PathBuf) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &commands::pipeline(&self.cfg, &out).map_err(err)?)
    }
}

#[pymodule]
fn macam(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCodebook>()?;
    m.add_class::<PyHardware>()?;
    m.add_class::<PyWorkbench>()?;
    m.add_function(wrap_pyfunction!(digital_activate, m)?)?;
    m.add_function(wrap_pyfunction!(tau_schedule, m)?)?;
    m.add_function(wrap_pyfunction!(normalized_energy, m)?)?;
    m.add_function(wrap_pyfunction!(energy_penalty, m)?)?;
    Ok(())
}
