//! Sweeps behind the mechanism studies: SNR scaling, CFO perturbation,
//! gating, zero-shot generalisation, sample complexity, fine-tuning and the
//! phantom MRI comparison.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{evm, magnitude_nmse_of, nmse, r_squared, symbol_errors, MeanSe};
use crate::error::{Error, Result};
use crate::guard::LabelGuard;
use crate::mri::{mri_peil_eval, rss_plain, sense_recon, zero_fill_recon, MriEstimator, MriSample};
use crate::ofdm::{DatasetConfig, Qam, WirelessDataset, WirelessSample};
use crate::params::ParamStore;
use crate::tensor::ComplexTensor;
use crate::training::{train_wireless, Mode, TrainingConfig};
use crate::wireless::{ReconResultW, WirelessEstimator, WirelessOperator};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Peil,
    Supervised,
    OracleLs,
    OracleBound,
    Sense,
    Zerofill,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Peil => "peil",
            Method::Supervised => "supervised",
            Method::OracleLs => "oracle_ls",
            Method::OracleBound => "oracle_bound",
            Method::Sense => "sense",
            Method::Zerofill => "zerofill",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "peil" => Method::Peil,
            "supervised" => Method::Supervised,
            "oracle_ls" => Method::OracleLs,
            "oracle_bound" => Method::OracleBound,
            "sense" => Method::Sense,
            "zerofill" => Method::Zerofill,
            other => return Err(Error::ConfigInvalid(format!("unknown method '{other}'"))),
        })
    }

    pub fn parse_list(s: &str) -> Result<Vec<Self>> {
        s.split(',').filter(|t| !t.trim().is_empty()).map(Self::parse).collect()
    }
}

/// One measured value. Column order is the CSV header.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub profile: String,
    pub velocity_kmh: f64,
    pub snr_db: f64,
    pub sample_budget: usize,
    pub metric: String,
    pub value: f64,
    pub seed: u64,
    pub config_hash: String,
}

/// Coordinates of a row apart from metric and value.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub method: Method,
    pub profile: String,
    pub velocity_kmh: f64,
    pub snr_db: f64,
    pub sample_budget: usize,
    pub seed: u64,
}

/// Append-only result table stamped with a config hash.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExperimentResult {
    pub config_hash: String,
    pub rows: Vec<ResultRow>,
}

impl ExperimentResult {
    pub fn new(config_hash: impl Into<String>) -> Self {
        Self {
            config_hash: config_hash.into(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, cell: &Cell, metric: &str, value: f64) {
        self.rows.push(ResultRow {
            method: cell.method.name().into(),
            profile: cell.profile.clone(),
            velocity_kmh: cell.velocity_kmh,
            snr_db: cell.snr_db,
            sample_budget: cell.sample_budget,
            metric: metric.into(),
            value,
            seed: cell.seed,
            config_hash: self.config_hash.clone(),
        });
    }

    pub fn extend(&mut self, other: ExperimentResult) {
        self.rows.extend(other.rows);
    }

    /// Values of `metric` for `method` on rows accepted by `keep`.
    pub fn values(&self, method: Method, metric: &str, keep: impl Fn(&ResultRow) -> bool) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.method == method.name() && r.metric == metric && keep(r))
            .map(|r| r.value)
            .collect()
    }

    pub fn summary(&self, method: Method, metric: &str, keep: impl Fn(&ResultRow) -> bool) -> MeanSe {
        MeanSe::from_samples(&self.values(method, metric, keep))
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        if self.rows.is_empty() {
            w.write_record([
                "method",
                "profile",
                "velocity_kmh",
                "snr_db",
                "sample_budget",
                "metric",
                "value",
                "seed",
                "config_hash",
            ])
            .map_err(io_err)?;
        }
        for r in &self.rows {
            w.serialize(r).map_err(io_err)?;
        }
        finish_csv(w)
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let rows = r
            .deserialize()
            .collect::<std::result::Result<Vec<ResultRow>, _>>()
            .map_err(io_err)?;
        Ok(Self {
            config_hash: rows.first().map(|r| r.config_hash.clone()).unwrap_or_default(),
            rows,
        })
    }
}

fn io_err(e: csv::Error) -> Error {
    Error::Csv(e)
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::CorruptPayload(e.to_string()))
}

/// Monte-Carlo layout: `n_seeds` independent datasets of `frames` frames,
/// seeded `base_seed, base_seed + 1, ...`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalGrid {
    pub n_seeds: usize,
    pub frames: usize,
    pub base_seed: u64,
}

impl Default for EvalGrid {
    fn default() -> Self {
        Self {
            n_seeds: 10,
            frames: 50,
            base_seed: 1000,
        }
    }
}

impl EvalGrid {
    pub fn seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.n_seeds as u64).map(move |j| self.base_seed + j)
    }

    pub fn dataset(&self, base: &DatasetConfig, profile: &str, velocity_kmh: f64, snr_db: f64, seed: u64) -> Result<Vec<WirelessSample>> {
        WirelessDataset::new(DatasetConfig {
            profile: profile.into(),
            velocity_kmh,
            snr_db: [snr_db, snr_db],
            n_frames: self.frames,
            seed,
            ..base.clone()
        })?
        .materialize()
    }
}

/// Trained models and the fixed operator for wireless evaluation.
#[derive(Clone, Copy)]
pub struct WirelessModels<'a> {
    pub est: &'a WirelessEstimator,
    pub op: &'a WirelessOperator,
    pub peil: Option<&'a ParamStore>,
    pub supervised: Option<&'a ParamStore>,
}

/// Pooled statistics of one method over a set of frames.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrameStats {
    pub errors: usize,
    pub cells: usize,
    pub evm_num: f64,
    pub evm_den: f64,
    pub csi_nmse_sum: f64,
    pub cfo_abs_err_sum: f64,
    pub lambda_sum: f64,
    pub theta_hat: Vec<f64>,
    pub theta: Vec<f64>,
}

impl FrameStats {
    pub fn frames(&self) -> usize {
        self.theta.len()
    }

    pub fn ser(&self) -> f64 {
        self.errors as f64 / self.cells.max(1) as f64
    }

    pub fn evm(&self) -> f64 {
        100.0 * (self.evm_num / self.evm_den).sqrt()
    }

    pub fn csi_nmse(&self) -> f64 {
        self.csi_nmse_sum / self.frames().max(1) as f64
    }

    pub fn cfo_abs_err(&self) -> f64 {
        self.cfo_abs_err_sum / self.frames().max(1) as f64
    }

    pub fn lambda(&self) -> f64 {
        self.lambda_sum / self.frames().max(1) as f64
    }

    pub fn r_squared(&self) -> Result<f64> {
        r_squared(&self.theta_hat, &self.theta)
    }

    fn add(&mut self, r: &ReconResultW, s: &WirelessSample, guard: &LabelGuard, qam: &Qam) -> Result<()> {
        let data: Vec<bool> = s.pilot_mask.iter().map(|p| !p).collect();
        let (e, n) = symbol_errors(&r.x_hat, &s.x, &data, qam)?;
        self.errors += e;
        self.cells += n;
        let e = evm(&r.x_hat, &s.x, &data)? / 100.0;
        let den: f64 = (0..data.len()).filter(|&i| data[i]).map(|i| s.x.get(i).norm_sqr()).sum();
        self.evm_num += e * e * den;
        self.evm_den += den;
        let lab = s.labels(guard)?;
        self.csi_nmse_sum += nmse(&r.h_hat, &lab.h)?;
        self.cfo_abs_err_sum += (r.theta - lab.theta).abs();
        self.lambda_sum += r.lambda;
        self.theta_hat.push(r.theta);
        self.theta.push(lab.theta);
        Ok(())
    }
}

/// Reconstruction of `s` by `method`, with `delta_theta` added to the CFO
/// used for derotation.
pub fn reconstruct(models: &WirelessModels, method: Method, s: &WirelessSample, delta_theta: f64) -> Result<ReconResultW> {
    let guard = LabelGuard::open();
    let missing = |m: Method| Error::ConfigInvalid(format!("no parameters loaded for {}", m.name()));
    match method {
        Method::Peil => Ok(models
            .op
            .peil_eval(models.est, models.peil.ok_or(missing(method))?, s, delta_theta)?
            .0),
        Method::Supervised => Ok(models
            .op
            .peil_eval(models.est, models.supervised.ok_or(missing(method))?, s, delta_theta)?
            .0),
        Method::OracleLs => models.op.oracle_ls_reconstruct(s, s.labels(&guard)?, delta_theta),
        Method::OracleBound => models.op.oracle_bound_reconstruct(s, s.labels(&guard)?),
        Method::Sense | Method::Zerofill => Err(Error::ConfigInvalid(format!("{} is an MRI method", method.name()))),
    }
}

pub fn evaluate_frames(models: &WirelessModels, method: Method, samples: &[WirelessSample], delta_theta: f64) -> Result<FrameStats> {
    let guard = LabelGuard::open();
    let qam = Qam::new(models.op.frame.qam_order)?;
    let mut st = FrameStats::default();
    for s in samples {
        st.add(&reconstruct(models, method, s, delta_theta)?, s, &guard, &qam)?;
    }
    Ok(st)
}

fn push_stats(out: &mut ExperimentResult, cell: &Cell, st: &FrameStats) {
    out.push(cell, "ser", st.ser());
    out.push(cell, "evm", st.evm());
    out.push(cell, "csi_nmse", st.csi_nmse());
    out.push(cell, "cfo_abs_err", st.cfo_abs_err());
    out.push(cell, "lambda", st.lambda());
}

/// Evaluates every method on every seed of one (profile, velocity, SNR) cell.
#[allow(clippy::too_many_arguments)]
fn evaluate_cell(
    out: &mut ExperimentResult,
    models: &WirelessModels,
    methods: &[Method],
    base: &DatasetConfig,
    grid: &EvalGrid,
    profile: &str,
    velocity_kmh: f64,
    snr_db: f64,
    sample_budget: usize,
) -> Result<()> {
    for seed in grid.seeds() {
        let data = grid.dataset(base, profile, velocity_kmh, snr_db, seed)?;
        for &m in methods {
            let st = evaluate_frames(models, m, &data, 0.0)?;
            let cell = Cell {
                method: m,
                profile: profile.into(),
                velocity_kmh,
                snr_db,
                sample_budget,
                seed,
            };
            push_stats(out, &cell, &st);
        }
    }
    Ok(())
}

/// SER, EVM, CSI NMSE, CFO error and gate value against SNR.
pub fn snr_sweep(
    models: &WirelessModels,
    methods: &[Method],
    base: &DatasetConfig,
    snrs: &[f64],
    grid: &EvalGrid,
    config_hash: &str,
) -> Result<ExperimentResult> {
    let mut out = ExperimentResult::new(config_hash);
    for &snr in snrs {
        evaluate_cell(&mut out, models, methods, base, grid, &base.profile, base.velocity_kmh, snr, 0)?;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationRow {
    pub delta_theta: f64,
    pub csi_nmse: f64,
    /// Mean phase of `H^(perturbed) / H^(unperturbed)` over data subcarriers.
    pub delta_phi: f64,
    pub ser: f64,
    pub oracle_ls_csi_nmse: f64,
    pub oracle_ls_ser: f64,
}

/// Injects `delta_theta` into the derotation and records how the PEIL
/// channel estimate and the Oracle-Aided LS baseline respond.
pub fn perturbation_sweep(models: &WirelessModels, samples: &[WirelessSample], grid: &[f64]) -> Result<Vec<PerturbationRow>> {
    let frame = &models.op.frame;
    let data_sc: Vec<usize> = (0..frame.k).filter(|&k| !frame.is_pilot_subcarrier(k)).collect();
    let base: Vec<ReconResultW> = samples
        .iter()
        .map(|s| reconstruct(models, Method::Peil, s, 0.0))
        .collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(grid.len());
    for &dt in grid {
        if !dt.is_finite() || dt.abs() > 0.5 {
            return Err(Error::ConfigInvalid(format!("perturbation {dt} outside [-0.5, 0.5]")));
        }
        let peil = evaluate_frames(models, Method::Peil, samples, dt)?;
        let ols = evaluate_frames(models, Method::OracleLs, samples, dt)?;
        let mut phase = 0.0;
        for (s, r0) in samples.iter().zip(&base) {
            let r = reconstruct(models, Method::Peil, s, dt)?;
            phase += data_sc.iter().map(|&k| (r.h_hat[k] / r0.h_hat[k]).arg()).sum::<f64>();
        }
        rows.push(PerturbationRow {
            delta_theta: dt,
            csi_nmse: peil.csi_nmse(),
            delta_phi: phase / (samples.len() * data_sc.len()).max(1) as f64,
            ser: peil.ser(),
            oracle_ls_csi_nmse: ols.csi_nmse(),
            oracle_ls_ser: ols.ser(),
        });
    }
    Ok(rows)
}

/// Least-squares slope of `delta_phi` against `delta_theta`.
pub fn phase_slope(rows: &[PerturbationRow]) -> f64 {
    let n = rows.len() as f64;
    let mx = rows.iter().map(|r| r.delta_theta).sum::<f64>() / n;
    let my = rows.iter().map(|r| r.delta_phi).sum::<f64>() / n;
    let sxy: f64 = rows.iter().map(|r| (r.delta_theta - mx) * (r.delta_phi - my)).sum();
    let sxx: f64 = rows.iter().map(|r| (r.delta_theta - mx).powi(2)).sum();
    sxy / sxx
}

/// `max - min` of a metric across the sweep.
pub fn spread(rows: &[PerturbationRow], f: impl Fn(&PerturbationRow) -> f64) -> f64 {
    let v: Vec<f64> = rows.iter().map(f).collect();
    v.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - v.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// The compensatory target slope of the channel phase against the CFO error.
pub const COMPENSATORY_SLOPE: f64 = -PI;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateRow {
    pub snr_db: f64,
    /// Mean gate value per seed.
    pub per_seed: Vec<f64>,
    pub stat: MeanSe,
    pub min: f64,
    pub max: f64,
}

/// Distribution of the fusion gate against SNR.
pub fn gate_profile(models: &WirelessModels, base: &DatasetConfig, snrs: &[f64], grid: &EvalGrid) -> Result<Vec<GateRow>> {
    let params = models
        .peil
        .ok_or_else(|| Error::ConfigInvalid("gate profile needs PEIL parameters".into()))?;
    let mut rows = Vec::new();
    for &snr in snrs {
        let (mut per_seed, mut min, mut max) = (Vec::new(), f64::INFINITY, f64::NEG_INFINITY);
        for seed in grid.seeds() {
            let data = grid.dataset(base, &base.profile, base.velocity_kmh, snr, seed)?;
            let mut sum = 0.0;
            for s in &data {
                let (_, e) = models.op.peil_eval(models.est, params, s, 0.0)?;
                sum += e.lambda;
                min = min.min(e.lambda);
                max = max.max(e.lambda);
            }
            per_seed.push(sum / data.len().max(1) as f64);
        }
        rows.push(GateRow {
            snr_db: snr,
            stat: MeanSe::from_samples(&per_seed),
            per_seed,
            min,
            max,
        });
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneralizationConfig {
    pub profiles: Vec<String>,
    pub snrs: Vec<f64>,
    pub velocities: Vec<f64>,
    /// SNR of the velocity sweep.
    pub velocity_snr_db: f64,
    pub velocity_profile: String,
}

impl Default for GeneralizationConfig {
    fn default() -> Self {
        Self {
            profiles: vec!["epa".into(), "eva".into(), "etu".into()],
            snrs: vec![5.0, 15.0, 25.0, 35.0],
            velocities: vec![60.0, 120.0, 180.0, 240.0, 300.0, 360.0],
            velocity_snr_db: 30.0,
            velocity_profile: "eva".into(),
        }
    }
}

/// Zero-shot evaluation across channel profiles and SNR, then a velocity
/// sweep on one profile.
pub fn generalization_suite(
    models: &WirelessModels,
    methods: &[Method],
    base: &DatasetConfig,
    cfg: &GeneralizationConfig,
    grid: &EvalGrid,
    config_hash: &str,
) -> Result<ExperimentResult> {
    let mut out = ExperimentResult::new(config_hash);
    for p in &cfg.profiles {
        for &snr in &cfg.snrs {
            evaluate_cell(&mut out, models, methods, base, grid, p, base.velocity_kmh, snr, 0)?;
        }
    }
    for &v in &cfg.velocities {
        evaluate_cell(
            &mut out,
            models,
            methods,
            base,
            grid,
            &cfg.velocity_profile,
            v,
            cfg.velocity_snr_db,
            0,
        )?;
    }
    Ok(out)
}

/// Trains PEIL and the Supervised Solver from the same initialisation at
/// each frame budget and evaluates them at `eval_snr_db`.
#[allow(clippy::too_many_arguments)]
pub fn sample_complexity_run(
    est: &WirelessEstimator,
    op: &WirelessOperator,
    train_base: &DatasetConfig,
    budgets: &[usize],
    train_cfg: &TrainingConfig,
    init_seed: u64,
    eval_snr_db: f64,
    grid: &EvalGrid,
    config_hash: &str,
) -> Result<ExperimentResult> {
    let mut out = ExperimentResult::new(config_hash);
    for &budget in budgets {
        let data = WirelessDataset::new(DatasetConfig {
            n_frames: budget,
            ..train_base.clone()
        })?;
        let mut trained = Vec::new();
        for mode in [Mode::Peil, Mode::Supervised] {
            let mut p = est.init_params(init_seed);
            train_wireless(&TrainingConfig { mode, ..train_cfg.clone() }, est, op, &data, &mut p, None)?;
            trained.push(p);
        }
        let models = WirelessModels {
            est,
            op,
            peil: Some(&trained[0]),
            supervised: Some(&trained[1]),
        };
        evaluate_cell(
            &mut out,
            &models,
            &[Method::Peil, Method::Supervised],
            train_base,
            grid,
            &train_base.profile,
            train_base.velocity_kmh,
            eval_snr_db,
            budget,
        )?;
    }
    Ok(out)
}

/// Continues PEIL training from `params` on `train_base` for each step
/// budget (0 is the zero-shot baseline) and evaluates on the same channel.
#[allow(clippy::too_many_arguments)]
pub fn finetune(
    est: &WirelessEstimator,
    op: &WirelessOperator,
    params: &ParamStore,
    train_base: &DatasetConfig,
    step_budgets: &[usize],
    train_cfg: &TrainingConfig,
    eval_snr_db: f64,
    grid: &EvalGrid,
    config_hash: &str,
) -> Result<ExperimentResult> {
    let mut out = ExperimentResult::new(config_hash);
    let data = WirelessDataset::new(train_base.clone())?;
    for &steps in step_budgets {
        let mut p = params.clone();
        if steps > 0 {
            let cfg = TrainingConfig {
                mode: Mode::Peil,
                max_steps: Some(steps),
                epochs: usize::MAX,
                ..train_cfg.clone()
            };
            train_wireless(&cfg, est, op, &data, &mut p, None)?;
        }
        let models = WirelessModels {
            est,
            op,
            peil: Some(&p),
            supervised: None,
        };
        evaluate_cell(
            &mut out,
            &models,
            &[Method::Peil],
            train_base,
            grid,
            &train_base.profile,
            train_base.velocity_kmh,
            eval_snr_db,
            steps,
        )?;
    }
    Ok(out)
}

/// `(re, im, label)` rows of the equalised data cells.
pub fn constellation_csv(x_hat: &ComplexTensor, x: &ComplexTensor, data: &[bool], qam: &Qam) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["re", "im", "label"]).map_err(io_err)?;
    for i in (0..data.len()).filter(|&i| data[i]) {
        let z = x_hat.get(i);
        w.serialize((z.re, z.im, qam.decide(x.get(i)))).map_err(io_err)?;
    }
    finish_csv(w)
}

/// `|<a, b>| / (|a| |b|)`.
pub fn complex_correlation(a: &ComplexTensor, b: &ComplexTensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape("complex_correlation", a.shape(), b.shape()));
    }
    let (av, bv) = (a.to_complex_vec(), b.to_complex_vec());
    let inner: num_complex::Complex64 = av.iter().zip(&bv).map(|(x, y)| x.conj() * y).sum();
    let na: f64 = av.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let nb: f64 = bv.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    Ok(inner.norm() / (na * nb))
}

/// Mean of `rss(maps)` over `object` pixels.
pub fn rss_object_mean(maps: &ComplexTensor, object: &[bool]) -> Result<f64> {
    let r = rss_plain(maps)?;
    let (sum, n) = r
        .data()
        .iter()
        .zip(object)
        .filter(|(_, &o)| o)
        .fold((0.0, 0usize), |(s, n), (v, _)| (s + v, n + 1));
    Ok(sum / n.max(1) as f64)
}

/// Magnitude NMSE of PEIL, zero-fill and SENSE with the true maps, plus the
/// mean estimated RSS inside the object, one row set per sample.
pub fn mri_comparison(
    est: &MriEstimator,
    params: &ParamStore,
    samples: &[MriSample],
    accel: usize,
    methods: &[Method],
    config_hash: &str,
) -> Result<ExperimentResult> {
    let guard = LabelGuard::open();
    let mut out = ExperimentResult::new(config_hash);
    for (i, s) in samples.iter().enumerate() {
        for &m in methods {
            let cell = Cell {
                method: m,
                profile: "phantom".into(),
                velocity_kmh: 0.0,
                snr_db: f64::NAN,
                sample_budget: accel,
                seed: i as u64,
            };
            match m {
                Method::Peil => {
                    let (x_hat, e) = mri_peil_eval(est, params, s)?;
                    out.push(&cell, "nmse", magnitude_nmse_of(&x_hat, &s.x)?);
                    out.push(&cell, "rss_object_mean", rss_object_mean(&e.maps, &s.object)?);
                    out.push(&cell, "lambda", e.lambda);
                }
                Method::Zerofill => {
                    let zf = zero_fill_recon(&s.y)?;
                    out.push(&cell, "nmse", crate::mri::magnitude_nmse(zf.data(), &s.x)?);
                }
                Method::Sense => {
                    let rec = sense_recon(&s.y, &s.mask, &s.labels(&guard)?.maps, 1e-3)?;
                    out.push(&cell, "nmse", magnitude_nmse_of(&rec, &s.x)?);
                }
                other => return Err(Error::ConfigInvalid(format!("{} is a wireless method", other.name()))),
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapConsistency {
    /// Correlation of maps estimated from two accelerations of one phantom.
    pub same: MeanSe,
    /// Correlation of maps estimated for different phantoms.
    pub different: MeanSe,
}

/// Compares coil maps estimated from `a[i]` and `b[i]` (same phantom, two
/// sampling patterns) against maps of neighbouring phantoms `a[i]`, `a[i+1]`.
pub fn map_consistency(est: &MriEstimator, params: &ParamStore, a: &[MriSample], b: &[MriSample]) -> Result<MapConsistency> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::ConfigInvalid("map consistency needs two equal sets of >= 2 samples".into()));
    }
    let maps =
        |set: &[MriSample]| -> Result<Vec<ComplexTensor>> { set.iter().map(|s| Ok(mri_peil_eval(est, params, s)?.1.maps)).collect() };
    let (ma, mb) = (maps(a)?, maps(b)?);
    let same: Vec<f64> = ma.iter().zip(&mb).map(|(x, y)| complex_correlation(x, y)).collect::<Result<_>>()?;
    let different: Vec<f64> = (0..ma.len())
        .map(|i| complex_correlation(&ma[i], &ma[(i + 1) % ma.len()]))
        .collect::<Result<_>>()?;
    Ok(MapConsistency {
        same: MeanSe::from_samples(&same),
        different: MeanSe::from_samples(&different),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ofdm::FrameConfig;
    use crate::wireless::EstimatorConfig;

    fn small() -> (WirelessEstimator, WirelessOperator, DatasetConfig) {
        let frame = FrameConfig {
            k: 16,
            l: 4,
            ..FrameConfig::default()
        };
        let est = WirelessEstimator::new(
            EstimatorConfig {
                layers: 1,
                hidden: 4,
                kernel: 3,
                ..EstimatorConfig::default()
            },
            frame.clone(),
        )
        .unwrap();
        let op = WirelessOperator::new(frame.clone(), None).unwrap();
        (
            est,
            op,
            DatasetConfig {
                frame,
                ..DatasetConfig::default()
            },
        )
    }

    #[test]
    fn csv_round_trip_and_header() {
        let mut r = ExperimentResult::new("abc");
        let cell = Cell {
            method: Method::OracleLs,
            profile: "e,va".into(),
            velocity_kmh: 120.0,
            snr_db: 30.0,
            sample_budget: 0,
            seed: 4,
        };
        r.push(&cell, "ser", 0.125);
        let text = r.to_csv().unwrap();
        assert!(text.starts_with("method,profile,velocity_kmh,snr_db,sample_budget,metric,value,seed,config_hash\n"));
        assert!(text.contains("\"e,va\""));
        assert_eq!(ExperimentResult::from_csv(&text).unwrap(), r);
        let empty = ExperimentResult::new("x").to_csv().unwrap();
        assert!(empty.starts_with("method,"));
    }

    #[test]
    fn untrained_ordering_and_oracle_monotone() {
        let (est, op, base) = small();
        let p = est.init_params(0);
        let models = WirelessModels {
            est: &est,
            op: &op,
            peil: Some(&p),
            supervised: None,
        };
        let grid = EvalGrid {
            n_seeds: 2,
            frames: 20,
            base_seed: 7,
        };
        let methods = [Method::OracleBound, Method::OracleLs, Method::Peil];
        let r = snr_sweep(&models, &methods, &base, &[5.0, 35.0], &grid, "h").unwrap();
        for snr in [5.0, 35.0] {
            let at = |m| r.summary(m, "ser", |row| row.snr_db == snr).mean;
            assert!(at(Method::OracleLs) <= at(Method::Peil));
        }
        let at35 = |m| r.summary(m, "ser", |row| row.snr_db == 35.0).mean;
        assert!(at35(Method::OracleBound) <= at35(Method::OracleLs));
        let ols = |snr: f64| r.summary(Method::OracleLs, "ser", |row| row.snr_db == snr).mean;
        assert!(ols(35.0) < ols(5.0));
        assert!(r.rows.iter().all(|row| row.config_hash == "h"));
    }

    #[test]
    fn perturbation_zero_has_zero_phase_and_flat_oracle_csi() {
        let (est, op, base) = small();
        let p = est.init_params(1);
        let models = WirelessModels {
            est: &est,
            op: &op,
            peil: Some(&p),
            supervised: None,
        };
        let data = EvalGrid::default().dataset(&base, "eva", 120.0, 30.0, 3).unwrap();
        let rows = perturbation_sweep(&models, &data[..5], &[-0.1, 0.0, 0.1]).unwrap();
        assert_eq!(rows[1].delta_phi, 0.0);
        let c: Vec<f64> = rows.iter().map(|r| r.oracle_ls_csi_nmse).collect();
        assert!(c.iter().all(|v| (v - c[0]).abs() <= 1e-12 * c[0]));
        assert!(perturbation_sweep(&models, &data[..1], &[0.7]).is_err());
        let line: Vec<PerturbationRow> = [-1.0, 0.0, 2.0]
            .iter()
            .map(|&x| PerturbationRow {
                delta_theta: x,
                csi_nmse: 0.0,
                delta_phi: -PI * x + 0.3,
                ser: 0.0,
                oracle_ls_csi_nmse: 0.0,
                oracle_ls_ser: 0.0,
            })
            .collect();
        assert!((phase_slope(&line) - COMPENSATORY_SLOPE).abs() < 1e-12);
    }

    #[test]
    fn gate_in_unit_interval_and_reproducible() {
        let (est, op, base) = small();
        let p = est.init_params(2);
        let models = WirelessModels {
            est: &est,
            op: &op,
            peil: Some(&p),
            supervised: None,
        };
        let grid = EvalGrid {
            n_seeds: 2,
            frames: 5,
            base_seed: 1,
        };
        let a = gate_profile(&models, &base, &[5.0, 30.0], &grid).unwrap();
        let b = gate_profile(&models, &base, &[5.0, 30.0], &grid).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|g| g.min > 0.0 && g.max < 1.0));
    }

    #[test]
    fn zero_step_finetune_equals_zero_shot() {
        let (est, op, base) = small();
        let p = est.init_params(3);
        let grid = EvalGrid {
            n_seeds: 1,
            frames: 5,
            base_seed: 9,
        };
        let train = DatasetConfig {
            profile: "etu".into(),
            n_frames: 8,
            ..base
        };
        let tc = TrainingConfig {
            batch_size: 4,
            ..TrainingConfig::wireless()
        };
        let ft = finetune(&est, &op, &p, &train, &[0, 2], &tc, 30.0, &grid, "h").unwrap();
        let models = WirelessModels {
            est: &est,
            op: &op,
            peil: Some(&p),
            supervised: None,
        };
        let zs = snr_sweep(&models, &[Method::Peil], &train, &[30.0], &grid, "h").unwrap();
        assert_eq!(
            ft.values(Method::Peil, "ser", |r| r.sample_budget == 0),
            zs.values(Method::Peil, "ser", |_| true)
        );
        assert_eq!(ft.values(Method::Peil, "ser", |r| r.sample_budget == 2).len(), 1);
    }

    #[test]
    fn correlation_properties() {
        let a = ComplexTensor::from_parts(&[3], vec![1.0, 2.0, 0.0], vec![0.0, 1.0, -1.0]).unwrap();
        let rot: Vec<_> = a
            .to_complex_vec()
            .iter()
            .map(|z| z * num_complex::Complex64::from_polar(2.0, 0.7))
            .collect();
        let b = ComplexTensor::from_complex(&[3], &rot).unwrap();
        assert!((complex_correlation(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        let c = ComplexTensor::from_parts(&[3], vec![0.0, 0.0, 1.0], vec![0.0; 3]).unwrap();
        let d = ComplexTensor::from_parts(&[3], vec![1.0, 0.0, 0.0], vec![0.0; 3]).unwrap();
        assert_eq!(complex_correlation(&c, &d).unwrap(), 0.0);
    }
}
