//! Python bindings: dataset generation, training, evaluation and the
//! self-test. Configurations cross the boundary as JSON strings; grids come
//! back as `(shape, flat list)` pairs in row-major order.

use std::path::PathBuf;

use num_complex::Complex64;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use peil_core::cli::{load_checkpoint, save_checkpoint, Loaded, RunConfig};
use peil_core::io::{config_hash as hash_json, mri_from_bundle, mri_to_bundle, wireless_from_bundle, wireless_to_bundle, Bundle};
use peil_core::metrics::experiments::{evaluate_frames, mri_comparison, Method, WirelessModels};
use peil_core::mri::{generate_mri_dataset, MriConfig, MriEstimator, MriSample};
use peil_core::ofdm::{generate_dataset, DatasetConfig, Qam, WirelessSample};
use peil_core::tensor::{fft_along_last, ComplexTensor};
use peil_core::training::{train_mri, train_wireless, Mode, Task, TrainingConfig};
use peil_core::wireless::{WirelessEstimator, WirelessOperator};
use peil_core::Error;

fn err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        Error::NumericalBreakdown(_) | Error::DivisionDegenerate { .. } => PyRuntimeError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn parse<T: for<'de> serde::Deserialize<'de> + Default>(json: Option<&str>) -> PyResult<T> {
    match json {
        None => Ok(T::default()),
        Some(s) => serde_json::from_str(s).map_err(|e| PyValueError::new_err(format!("invalid config: {e}"))),
    }
}

fn grid(t: &ComplexTensor) -> (Vec<usize>, Vec<Complex64>) {
    (t.shape().to_vec(), t.to_complex_vec())
}

fn parse_mode(mode: &str) -> PyResult<Mode> {
    match mode {
        "peil" => Ok(Mode::Peil),
        "supervised" => Ok(Mode::Supervised),
        other => Err(PyValueError::new_err(format!("mode must be 'peil' or 'supervised', got '{other}'"))),
    }
}

/// OFDM frames with their generating configuration.
#[pyclass(name = "WirelessDataset", module = "peil")]
pub struct PyWirelessDataset {
    cfg: DatasetConfig,
    samples: Vec<WirelessSample>,
}

#[pymethods]
impl PyWirelessDataset {
    /// Generates frames from a JSON dataset configuration (defaults when omitted).
    #[new]
    #[pyo3(signature = (config=None))]
    fn new(config: Option<&str>) -> PyResult<Self> {
        let cfg: DatasetConfig = parse(config)?;
        let samples = generate_dataset(&cfg).map_err(err)?;
        Ok(Self { cfg, samples })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (cfg, samples) = wireless_from_bundle(&Bundle::load(&path).map_err(err)?).map_err(err)?;
        Ok(Self { cfg, samples })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        wireless_to_bundle(&self.cfg, &self.samples)
            .and_then(|b| b.save(&path))
            .map_err(err)
    }

    fn __len__(&self) -> usize {
        self.samples.len()
    }

    fn config(&self) -> PyResult<String> {
        serde_json::to_string(&self.cfg).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    /// `(shape, values)` of the received grid of frame `i`.
    fn received(&self, i: usize) -> PyResult<(Vec<usize>, Vec<Complex64>)> {
        Ok(grid(&self.frame(i)?.y))
    }

    /// `(shape, values)` of the transmitted grid of frame `i`.
    fn transmitted(&self, i: usize) -> PyResult<(Vec<usize>, Vec<Complex64>)> {
        Ok(grid(&self.frame(i)?.x))
    }

    fn pilot_mask(&self, i: usize) -> PyResult<Vec<bool>> {
        Ok(self.frame(i)?.pilot_mask.clone())
    }

    fn snr_db(&self, i: usize) -> PyResult<f64> {
        Ok(self.frame(i)?.snr_db)
    }
}

impl PyWirelessDataset {
    fn frame(&self, i: usize) -> PyResult<&WirelessSample> {
        self.samples
            .get(i)
            .ok_or_else(|| pyo3::exceptions::PyIndexError::new_err(format!("frame {i} of {}", self.samples.len())))
    }
}

/// Wireless estimator, fixed operator and parameters.
#[pyclass(name = "WirelessModel", module = "peil")]
pub struct PyWirelessModel {
    est: WirelessEstimator,
    op: WirelessOperator,
    params: peil_core::params::ParamStore,
    mode: Mode,
    run: RunConfig,
}

#[pymethods]
impl PyWirelessModel {
    /// Fresh model for the frame layout of `dataset`, from a JSON run configuration.
    #[new]
    #[pyo3(signature = (dataset, run=None, mode="peil"))]
    fn new(dataset: &PyWirelessDataset, run: Option<&str>, mode: &str) -> PyResult<Self> {
        let run: RunConfig = parse(run)?;
        let frame = dataset.cfg.frame.clone();
        let est = WirelessEstimator::new(run.estimator.clone(), frame.clone()).map_err(err)?;
        let op = WirelessOperator::new(frame, run.kernel_sigma).map_err(err)?;
        Ok(Self {
            params: est.init_params(run.init_seed),
            est,
            op,
            mode: parse_mode(mode)?,
            run,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let run: RunConfig = {
            let b = Bundle::load(&path).map_err(err)?;
            serde_json::from_value(b.meta["run"].clone()).map_err(|e| PyValueError::new_err(e.to_string()))?
        };
        match load_checkpoint(&path).map_err(err)? {
            Loaded::Wireless { est, op, params, mode } => Ok(Self {
                est,
                op,
                params,
                mode,
                run,
            }),
            Loaded::Mri { .. } => Err(PyValueError::new_err("checkpoint holds an MRI model")),
        }
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        let loaded = Loaded::Wireless {
            est: WirelessEstimator::new(self.est.config.clone(), self.est.frame.clone()).map_err(err)?,
            op: WirelessOperator::new(self.est.frame.clone(), self.run.kernel_sigma).map_err(err)?,
            params: self.params.clone(),
            mode: self.mode,
        };
        save_checkpoint(&path, &loaded, &self.run).map_err(err)
    }

    fn num_parameters(&self) -> usize {
        self.params.numel()
    }

    /// Trains in place and returns the per-step losses.
    #[pyo3(signature = (dataset, config=None))]
    fn train(&mut self, py: Python<'_>, dataset: &PyWirelessDataset, config: Option<&str>) -> PyResult<Vec<f64>> {
        let mut cfg: TrainingConfig = parse(config)?;
        cfg.task = Task::Wireless;
        cfg.mode = self.mode;
        let (est, op, samples) = (&self.est, &self.op, &dataset.samples);
        let mut params = self.params.clone();
        let report = py
            .detach(|| train_wireless(&cfg, est, op, samples, &mut params, None))
            .map_err(err)?;
        self.params = params;
        Ok(report.step_losses)
    }

    /// Mean SER, EVM, CSI NMSE, CFO error and gate for `method`
    /// (`peil`, `supervised`, `oracle_ls`, `oracle_bound`).
    #[pyo3(signature = (dataset, method="peil"))]
    fn evaluate(&self, dataset: &PyWirelessDataset, method: &str) -> PyResult<Vec<(String, f64)>> {
        let m = Method::parse(method).map_err(err)?;
        let models = WirelessModels {
            est: &self.est,
            op: &self.op,
            peil: (self.mode == Mode::Peil).then_some(&self.params),
            supervised: (self.mode == Mode::Supervised).then_some(&self.params),
        };
        let st = evaluate_frames(&models, m, &dataset.samples, 0.0).map_err(err)?;
        Ok(vec![
            ("ser".into(), st.ser()),
            ("evm".into(), st.evm()),
            ("csi_nmse".into(), st.csi_nmse()),
            ("cfo_abs_err".into(), st.cfo_abs_err()),
            ("lambda".into(), st.lambda()),
        ])
    }
}

/// Phantom MRI samples with their generating configuration.
#[pyclass(name = "MriDataset", module = "peil")]
pub struct PyMriDataset {
    cfg: MriConfig,
    samples: Vec<MriSample>,
}

#[pymethods]
impl PyMriDataset {
    #[new]
    #[pyo3(signature = (config=None))]
    fn new(config: Option<&str>) -> PyResult<Self> {
        let cfg: MriConfig = parse(config)?;
        let samples = generate_mri_dataset(&cfg).map_err(err)?;
        Ok(Self { cfg, samples })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (cfg, samples) = mri_from_bundle(&Bundle::load(&path).map_err(err)?).map_err(err)?;
        Ok(Self { cfg, samples })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        mri_to_bundle(&self.cfg, &self.samples).and_then(|b| b.save(&path)).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.samples.len()
    }

    /// `(shape, values)` of the undersampled k-space of sample `i`.
    fn kspace(&self, i: usize) -> PyResult<(Vec<usize>, Vec<Complex64>)> {
        self.samples
            .get(i)
            .map(|s| grid(&s.y))
            .ok_or_else(|| pyo3::exceptions::PyIndexError::new_err(format!("sample {i} of {}", self.samples.len())))
    }
}

/// U-Net map/prior estimator with the unrolled CG solver.
#[pyclass(name = "MriModel", module = "peil")]
pub struct PyMriModel {
    est: MriEstimator,
    params: peil_core::params::ParamStore,
    mode: Mode,
    run: RunConfig,
}

#[pymethods]
impl PyMriModel {
    #[new]
    #[pyo3(signature = (dataset, run=None, mode="peil"))]
    fn new(dataset: &PyMriDataset, run: Option<&str>, mode: &str) -> PyResult<Self> {
        let run: RunConfig = parse(run)?;
        let est = MriEstimator::new(run.unet.clone(), dataset.cfg.coils).map_err(err)?;
        Ok(Self {
            params: est.init_params(run.init_seed),
            est,
            mode: parse_mode(mode)?,
            run,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        let loaded = Loaded::Mri {
            est: self.est.clone(),
            params: self.params.clone(),
            mode: self.mode,
        };
        save_checkpoint(&path, &loaded, &self.run).map_err(err)
    }

    #[pyo3(signature = (dataset, config=None))]
    fn train(&mut self, py: Python<'_>, dataset: &PyMriDataset, config: Option<&str>) -> PyResult<Vec<f64>> {
        let mut cfg: TrainingConfig = match config {
            Some(_) => parse(config)?,
            None => TrainingConfig::mri(),
        };
        cfg.task = Task::Mri;
        cfg.mode = self.mode;
        let (est, samples) = (&self.est, &dataset.samples);
        let mut params = self.params.clone();
        let report = py.detach(|| train_mri(&cfg, est, samples, &mut params, None)).map_err(err)?;
        self.params = params;
        Ok(report.step_losses)
    }

    /// Mean magnitude NMSE of PEIL, zero-fill and SENSE (true maps).
    fn evaluate(&self, dataset: &PyMriDataset) -> PyResult<Vec<(String, f64)>> {
        let methods = [Method::Peil, Method::Zerofill, Method::Sense];
        let r = mri_comparison(&self.est, &self.params, &dataset.samples, dataset.cfg.accel, &methods, "").map_err(err)?;
        let mut out: Vec<(String, f64)> = methods
            .iter()
            .map(|&m| (m.name().to_string(), r.summary(m, "nmse", |_| true).mean))
            .collect();
        out.push(("rss_object_mean".into(), r.summary(Method::Peil, "rss_object_mean", |_| true).mean));
        Ok(out)
    }
}

/// Gray-coded square QAM mapping of a bit list.
#[pyfunction]
fn qam_map(bits: Vec<bool>, order: u32) -> PyResult<Vec<Complex64>> {
    Qam::new(order).and_then(|q| q.map(&bits)).map_err(err)
}

#[pyfunction]
fn qam_demap(symbols: Vec<Complex64>, order: u32) -> PyResult<Vec<bool>> {
    Ok(Qam::new(order).map_err(err)?.demap(&symbols))
}

/// Unitary DFT (or its inverse) of a power-of-two length sequence.
#[pyfunction]
#[pyo3(signature = (values, inverse=false))]
fn fft(values: Vec<Complex64>, inverse: bool) -> PyResult<Vec<Complex64>> {
    let n = values.len();
    let (mut re, mut im): (Vec<f64>, Vec<f64>) = values.iter().map(|z| (z.re, z.im)).unzip();
    fft_along_last(&mut re, &mut im, n, inverse).map_err(err)?;
    Ok(re.into_iter().zip(im).map(|(a, b)| Complex64::new(a, b)).collect())
}

/// SHA-256 of the canonical form of a JSON document.
#[pyfunction]
fn config_hash(json: &str) -> PyResult<String> {
    let v: serde_json::Value = serde_json::from_str(json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    hash_json(&v).map_err(err)
}

/// Runs every self-check: `[(name, value, bound, passed)]`.
#[pyfunction]
fn selftest(py: Python<'_>) -> PyResult<Vec<(String, f64, f64, bool)>> {
    let checks = py.detach(peil_core::selftest::run_all).map_err(err)?;
    Ok(checks
        .into_iter()
        .map(|c| (c.passed(), c))
        .map(|(p, c)| (c.name, c.value, c.bound, p))
        .collect())
}

#[pymodule]
fn peil(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyWirelessDataset>()?;
    m.add_class::<PyWirelessModel>()?;
    m.add_class::<PyMriDataset>()?;
    m.add_class::<PyMriModel>()?;
    m.add_function(wrap_pyfunction!(qam_map, m)?)?;
    m.add_function(wrap_pyfunction!(qam_demap, m)?)?;
    m.add_function(wrap_pyfunction!(fft, m)?)?;
    m.add_function(wrap_pyfunction!(config_hash, m)?)?;
    m.add_function(wrap_pyfunction!(selftest, m)?)?;
    Ok(())
}
