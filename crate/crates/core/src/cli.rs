//! The `peil` command line: dataset generation, training, evaluation,
//! experiment sweeps and the self-test.
//!
//! Exit codes: 0 success, 1 configuration or I/O error, 2 numerical failure.
//! Diagnostics go to stderr as one JSON object per line.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{
    config_hash, manifest_path, mri_from_bundle, mri_to_bundle, params_from_bundle, params_to_bundle, wireless_from_bundle,
    wireless_to_bundle, write_atomic, Bundle, Manifest,
};
use crate::metrics::experiments::{
    evaluate_frames, finetune, gate_profile, generalization_suite, mri_comparison, perturbation_sweep, phase_slope, sample_complexity_run,
    snr_sweep, Cell, EvalGrid, ExperimentResult, GeneralizationConfig, Method, WirelessModels,
};
use crate::mri::{generate_mri_dataset, MriConfig, MriEstimator, UNetConfig};
use crate::ofdm::{generate_dataset, DatasetConfig, FrameConfig};
use crate::params::ParamStore;
use crate::training::{train_mri, train_wireless, Mode, Task, TrainingConfig};
use crate::wireless::{EstimatorConfig, WirelessEstimator, WirelessOperator};

#[derive(Parser, Debug)]
#[command(name = "peil", version, about = "Physics-embedded inverse learning workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate an OFDM dataset.
    GenWireless(GenWireless),
    /// Generate a phantom MRI dataset.
    GenMri(GenMri),
    /// Train an estimator and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate methods on a dataset and write a CSV.
    Eval(EvalArgs),
    /// Run an experiment sweep.
    Experiment(ExperimentArgs),
    /// Gradient, adjoint and oracle checks.
    Selftest,
}

#[derive(Args, Debug)]
struct GenWireless {
    #[arg(long, default_value = "eva")]
    profile: String,
    #[arg(long, default_value_t = 120.0)]
    velocity: f64,
    #[arg(long, default_value_t = 1000)]
    frames: usize,
    /// SNR range in dB, `LO:HI`.
    #[arg(long, default_value = "5:35", allow_hyphen_values = true)]
    snr: String,
    /// CFO range in subcarrier spacings, `LO:HI`.
    #[arg(long, default_value = "-0.5:0.5", allow_hyphen_values = true)]
    cfo: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Skip the AWGN stage.
    #[arg(long)]
    noiseless: bool,
    #[arg(short = 'o', long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GenMri {
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 4)]
    coils: usize,
    #[arg(long, default_value_t = 4)]
    accel: usize,
    #[arg(long)]
    acs: Option<usize>,
    #[arg(long, default_value_t = 64)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// k-space SNR in dB, or `none` for noiseless data.
    #[arg(long, default_value = "30")]
    snr: String,
    #[arg(short = 'o', long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TaskArg {
    Wireless,
    Mri,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Peil,
    Supervised,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, value_enum)]
    task: TaskArg,
    #[arg(long, value_enum, default_value = "peil")]
    mode: ModeArg,
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    /// Optional validation dataset.
    #[arg(long)]
    val: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(short = 'o', long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Checkpoint(s); each one's training mode decides whether it serves the
    /// `peil` or the `supervised` method.
    #[arg(long)]
    ckpt: Vec<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "peil,oracle_ls,oracle_bound")]
    methods: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq, Eq)]
enum ExperimentKind {
    SnrSweep,
    Perturb,
    Gate,
    Generalize,
    Budget,
    Finetune,
    Mri,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    #[arg(value_enum)]
    kind: ExperimentKind,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

/// Training run configuration stored with every checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RunConfig {
    /// Task defaults apply when absent.
    pub training: Option<TrainingConfig>,
    pub estimator: EstimatorConfig,
    pub unet: UNetConfig,
    /// Interpolation kernel width; `None` uses the pilot spacing rule.
    pub kernel_sigma: Option<f64>,
    pub init_seed: u64,
}

/// Sweep configuration for `experiment`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub peil_ckpt: Option<PathBuf>,
    pub supervised_ckpt: Option<PathBuf>,
    pub mri_ckpt: Option<PathBuf>,
    pub dataset: DatasetConfig,
    pub grid: EvalGrid,
    pub methods: Vec<Method>,
    pub snrs: Vec<f64>,
    pub deltas: Vec<f64>,
    pub perturb_snr_db: f64,
    pub generalization: GeneralizationConfig,
    pub budgets: Vec<usize>,
    pub run: RunConfig,
    pub eval_snr_db: f64,
    pub finetune_dataset: DatasetConfig,
    pub finetune_steps: Vec<usize>,
    pub mri: MriConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            peil_ckpt: None,
            supervised_ckpt: None,
            mri_ckpt: None,
            dataset: DatasetConfig::default(),
            grid: EvalGrid::default(),
            methods: vec![Method::Peil, Method::OracleLs, Method::OracleBound],
            snrs: vec![5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0],
            deltas: vec![-0.2, -0.1, -0.05, 0.0, 0.05, 0.1, 0.2],
            perturb_snr_db: 30.0,
            generalization: GeneralizationConfig::default(),
            budgets: vec![1000, 4000, 20000, 80000],
            run: RunConfig::default(),
            eval_snr_db: 30.0,
            finetune_dataset: DatasetConfig {
                profile: "etu".into(),
                velocity_kmh: 300.0,
                n_frames: 4000,
                seed: 77,
                ..DatasetConfig::default()
            },
            finetune_steps: vec![0, 100, 300, 1000],
            mri: MriConfig::default(),
        }
    }
}

fn parse_range(s: &str, what: &str) -> Result<[f64; 2]> {
    let bad = || Error::ConfigInvalid(format!("{what} must be LO:HI, got '{s}'"));
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    let lo: f64 = a.trim().parse().map_err(|_| bad())?;
    let hi: f64 = b.trim().parse().map_err(|_| bad())?;
    if !(lo <= hi) {
        return Err(bad());
    }
    Ok([lo, hi])
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::ConfigInvalid(format!("{}: {e}", path.display())))
}

fn write_with_manifest<T: Serialize>(path: &Path, bytes: &[u8], command: &str, config: &T, seeds: Vec<u64>) -> Result<String> {
    write_atomic(path, bytes)?;
    let mut m = Manifest::new(command, config, seeds)?;
    m.record(path)?;
    m.save(&manifest_path(path))?;
    Ok(m.config_hash)
}

/// A trained estimator restored from a checkpoint.
pub enum Loaded {
    Wireless {
        est: WirelessEstimator,
        op: WirelessOperator,
        params: ParamStore,
        mode: Mode,
    },
    Mri {
        est: MriEstimator,
        params: ParamStore,
        mode: Mode,
    },
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    kind: String,
    task: Task,
    mode: Mode,
    run: RunConfig,
    frame: Option<FrameConfig>,
    coils: Option<usize>,
    config_hash: String,
}

pub fn save_checkpoint(path: &Path, loaded: &Loaded, run: &RunConfig) -> Result<()> {
    let (task, mode, frame, coils, params) = match loaded {
        Loaded::Wireless { est, params, mode, .. } => (Task::Wireless, *mode, Some(est.frame.clone()), None, params),
        Loaded::Mri { est, params, mode } => (Task::Mri, *mode, None, Some(est.coils), params),
    };
    let meta = CheckpointMeta {
        kind: "checkpoint".into(),
        task,
        mode,
        run: run.clone(),
        frame,
        coils,
        config_hash: config_hash(run)?,
    };
    params_to_bundle(serde_json::to_value(&meta)?, params).save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Loaded> {
    let b = Bundle::load(path)?;
    let meta: CheckpointMeta =
        serde_json::from_value(b.meta.clone()).map_err(|e| Error::CorruptPayload(format!("checkpoint meta: {e}")))?;
    if meta.kind != "checkpoint" {
        return Err(Error::CorruptPayload(format!("{} is not a checkpoint", path.display())));
    }
    let params = params_from_bundle(&b)?;
    let missing = |w: &str| Error::CorruptPayload(format!("checkpoint lacks {w}"));
    let loaded = match meta.task {
        Task::Wireless => {
            let frame = meta.frame.ok_or_else(|| missing("frame"))?;
            let est = WirelessEstimator::new(meta.run.estimator.clone(), frame.clone())?;
            params.check_layout(&est.init_params(0))?;
            Loaded::Wireless {
                op: WirelessOperator::new(frame, meta.run.kernel_sigma)?,
                est,
                params,
                mode: meta.mode,
            }
        }
        Task::Mri => {
            let est = MriEstimator::new(meta.run.unet.clone(), meta.coils.ok_or_else(|| missing("coil count"))?)?;
            params.check_layout(&est.init_params(0))?;
            Loaded::Mri {
                est,
                params,
                mode: meta.mode,
            }
        }
    };
    Ok(loaded)
}

fn cmd_gen_wireless(a: &GenWireless) -> Result<()> {
    let cfg = DatasetConfig {
        profile: a.profile.clone(),
        velocity_kmh: a.velocity,
        n_frames: a.frames,
        snr_db: parse_range(&a.snr, "--snr")?,
        cfo: parse_range(&a.cfo, "--cfo")?,
        seed: a.seed,
        noiseless: a.noiseless,
        ..DatasetConfig::default()
    };
    let ds = generate_dataset(&cfg)?;
    let bytes = wireless_to_bundle(&cfg, &ds)?.encode()?;
    write_with_manifest(&a.out, &bytes, "gen-wireless", &cfg, vec![cfg.seed])?;
    Ok(())
}

fn cmd_gen_mri(a: &GenMri) -> Result<()> {
    let snr_db = match a.snr.trim() {
        "none" => None,
        s => Some(
            s.parse()
                .map_err(|_| Error::ConfigInvalid(format!("--snr must be a number or 'none', got '{s}'")))?,
        ),
    };
    let cfg = MriConfig {
        size: a.size,
        coils: a.coils,
        accel: a.accel,
        acs: a.acs,
        n: a.n,
        seed: a.seed,
        snr_db,
    };
    let ds = generate_mri_dataset(&cfg)?;
    let bytes = mri_to_bundle(&cfg, &ds)?.encode()?;
    write_with_manifest(&a.out, &bytes, "gen-mri", &cfg, vec![cfg.seed])?;
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut run: RunConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => RunConfig::default(),
    };
    let (task, defaults) = match a.task {
        TaskArg::Wireless => (Task::Wireless, TrainingConfig::wireless()),
        TaskArg::Mri => (Task::Mri, TrainingConfig::mri()),
    };
    let mut tc = run.training.clone().unwrap_or(defaults);
    tc.task = task;
    tc.mode = match a.mode {
        ModeArg::Peil => Mode::Peil,
        ModeArg::Supervised => Mode::Supervised,
    };
    if let Some(s) = a.steps {
        tc.max_steps = Some(s);
        tc.epochs = tc.epochs.max(s);
    }
    if let Some(e) = a.epochs {
        tc.epochs = e;
    }
    if let Some(lr) = a.lr {
        tc.lr = lr;
    }
    if let Some(b) = a.batch {
        tc.batch_size = b;
    }
    if let Some(s) = a.seed {
        tc.seed = s;
        run.init_seed = s;
    }
    run.training = Some(tc.clone());
    let data = Bundle::load(&a.data)?;
    let val = a.val.as_deref().map(Bundle::load).transpose()?;
    let (loaded, report) = match task {
        Task::Wireless => {
            let (dcfg, samples) = wireless_from_bundle(&data)?;
            let val = val.as_ref().map(wireless_from_bundle).transpose()?.map(|v| v.1);
            let est = WirelessEstimator::new(run.estimator.clone(), dcfg.frame.clone())?;
            let op = WirelessOperator::new(dcfg.frame.clone(), run.kernel_sigma)?;
            let mut params = est.init_params(run.init_seed);
            let report = train_wireless(&tc, &est, &op, &samples, &mut params, val.as_deref())?;
            (
                Loaded::Wireless {
                    est,
                    op,
                    params,
                    mode: tc.mode,
                },
                report,
            )
        }
        Task::Mri => {
            let (mcfg, samples) = mri_from_bundle(&data)?;
            let val = val.as_ref().map(mri_from_bundle).transpose()?.map(|v| v.1);
            let est = MriEstimator::new(run.unet.clone(), mcfg.coils)?;
            let mut params = est.init_params(run.init_seed);
            let report = train_mri(&tc, &est, &samples, &mut params, val.as_deref())?;
            (
                Loaded::Mri {
                    est,
                    params,
                    mode: tc.mode,
                },
                report,
            )
        }
    };
    save_checkpoint(&a.out, &loaded, &run)?;
    let mut m = Manifest::new("train", &run, vec![tc.seed, run.init_seed])?;
    m.record(&a.out)?;
    m.save(&manifest_path(&a.out))?;
    let mut report_path = a.out.clone().into_os_string();
    report_path.push(".report.json");
    write_atomic(Path::new(&report_path), serde_json::to_string_pretty(&report)?.as_bytes())?;
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let methods = Method::parse_list(&a.methods)?;
    let loaded: Vec<Loaded> = a.ckpt.iter().map(|p| load_checkpoint(p)).collect::<Result<_>>()?;
    let data = Bundle::load(&a.data)?;
    let kind = data.meta.get("kind").and_then(|k| k.as_str()).unwrap_or_default().to_string();
    let hash = config_hash(&serde_json::json!({"data": data.meta, "methods": a.methods}))?;
    let mut out = ExperimentResult::new(hash.clone());
    match kind.as_str() {
        "wireless" => {
            let (dcfg, samples) = wireless_from_bundle(&data)?;
            let mut peil = None;
            let mut sup = None;
            let mut model = None;
            for l in &loaded {
                if let Loaded::Wireless { est, op, params, mode } = l {
                    model = Some((est, op));
                    match mode {
                        Mode::Peil => peil = Some(params),
                        Mode::Supervised => sup = Some(params),
                    }
                }
            }
            let fallback_est;
            let fallback_op;
            let (est, op) = match model {
                Some(m) => m,
                None => {
                    fallback_est = WirelessEstimator::new(EstimatorConfig::default(), dcfg.frame.clone())?;
                    fallback_op = WirelessOperator::new(dcfg.frame.clone(), None)?;
                    (&fallback_est, &fallback_op)
                }
            };
            let models = WirelessModels {
                est,
                op,
                peil,
                supervised: sup,
            };
            let snr = if samples.windows(2).all(|w| w[0].snr_db == w[1].snr_db) {
                samples.first().map(|s| s.snr_db).unwrap_or(f64::NAN)
            } else {
                f64::NAN
            };
            for &m in &methods {
                let st = evaluate_frames(&models, m, &samples, 0.0)?;
                let cell = Cell {
                    method: m,
                    profile: dcfg.profile.clone(),
                    velocity_kmh: dcfg.velocity_kmh,
                    snr_db: snr,
                    sample_budget: 0,
                    seed: dcfg.seed,
                };
                out.push(&cell, "ser", st.ser());
                out.push(&cell, "evm", st.evm());
                out.push(&cell, "csi_nmse", st.csi_nmse());
                out.push(&cell, "cfo_abs_err", st.cfo_abs_err());
                out.push(&cell, "lambda", st.lambda());
            }
        }
        "mri" => {
            let (mcfg, samples) = mri_from_bundle(&data)?;
            let model = loaded.iter().find_map(|l| match l {
                Loaded::Mri { est, params, .. } => Some((est, params)),
                _ => None,
            });
            let fallback = MriEstimator::new(UNetConfig::default(), mcfg.coils)?;
            let empty = fallback.init_params(0);
            if methods.contains(&Method::Peil) && model.is_none() {
                return Err(Error::ConfigInvalid("method peil needs an MRI checkpoint".into()));
            }
            let (est, params) = model.unwrap_or((&fallback, &empty));
            out = mri_comparison(est, params, &samples, mcfg.accel, &methods, &hash)?;
        }
        other => return Err(Error::CorruptPayload(format!("unknown dataset kind '{other}'"))),
    }
    write_atomic(&a.out, out.to_csv()?.as_bytes())?;
    Ok(())
}

fn wireless_from_ckpt(path: Option<&PathBuf>, what: &str) -> Result<(WirelessEstimator, WirelessOperator, ParamStore)> {
    let p = path.ok_or_else(|| Error::ConfigInvalid(format!("experiment needs {what}")))?;
    match load_checkpoint(p)? {
        Loaded::Wireless { est, op, params, .. } => Ok((est, op, params)),
        Loaded::Mri { .. } => Err(Error::ConfigInvalid(format!("{what} is an MRI checkpoint"))),
    }
}

fn cmd_experiment(a: &ExperimentArgs) -> Result<()> {
    let cfg: ExperimentConfig = read_json(&a.config)?;
    let hash = config_hash(&cfg)?;
    fs::create_dir_all(&a.out)?;
    let name = a.kind.to_possible_value().map(|v| v.get_name().to_string()).unwrap_or_default();
    let csv_path = a.out.join(format!("{name}.csv"));
    let seeds: Vec<u64> = cfg.grid.seeds().collect();
    let peil = || wireless_from_ckpt(cfg.peil_ckpt.as_ref(), "peil_ckpt");
    let sup_params = || -> Result<Option<ParamStore>> {
        cfg.supervised_ckpt
            .as_ref()
            .map(|p| wireless_from_ckpt(Some(p), "supervised_ckpt").map(|t| t.2))
            .transpose()
    };
    let csv = match a.kind {
        ExperimentKind::SnrSweep | ExperimentKind::Generalize => {
            let (est, op, params) = peil()?;
            let sup = sup_params()?;
            let models = WirelessModels {
                est: &est,
                op: &op,
                peil: Some(&params),
                supervised: sup.as_ref(),
            };
            let r = if a.kind == ExperimentKind::SnrSweep {
                snr_sweep(&models, &cfg.methods, &cfg.dataset, &cfg.snrs, &cfg.grid, &hash)?
            } else {
                generalization_suite(&models, &cfg.methods, &cfg.dataset, &cfg.generalization, &cfg.grid, &hash)?
            };
            r.to_csv()?
        }
        ExperimentKind::Perturb => {
            let (est, op, params) = peil()?;
            let models = WirelessModels {
                est: &est,
                op: &op,
                peil: Some(&params),
                supervised: None,
            };
            let data = cfg.grid.dataset(
                &cfg.dataset,
                &cfg.dataset.profile,
                cfg.dataset.velocity_kmh,
                cfg.perturb_snr_db,
                cfg.grid.base_seed,
            )?;
            let rows = perturbation_sweep(&models, &data, &cfg.deltas)?;
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in &rows {
                w.serialize(r)?;
            }
            let mut text = String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?)
                .map_err(|e| Error::CorruptPayload(e.to_string()))?;
            text.push_str(&format!("# slope {:.6} config_hash {hash}\n", phase_slope(&rows)));
            text
        }
        ExperimentKind::Gate => {
            let (est, op, params) = peil()?;
            let models = WirelessModels {
                est: &est,
                op: &op,
                peil: Some(&params),
                supervised: None,
            };
            let rows = gate_profile(&models, &cfg.dataset, &cfg.snrs, &cfg.grid)?;
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["snr_db", "mean", "se", "n", "min", "max", "config_hash"])?;
            for g in &rows {
                w.write_record([
                    g.snr_db.to_string(),
                    g.stat.mean.to_string(),
                    g.stat.se.to_string(),
                    g.stat.n.to_string(),
                    g.min.to_string(),
                    g.max.to_string(),
                    hash.clone(),
                ])?;
            }
            String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?).map_err(|e| Error::CorruptPayload(e.to_string()))?
        }
        ExperimentKind::Budget => {
            let est = WirelessEstimator::new(cfg.run.estimator.clone(), cfg.dataset.frame.clone())?;
            let op = WirelessOperator::new(cfg.dataset.frame.clone(), cfg.run.kernel_sigma)?;
            let tc = cfg.run.training.clone().unwrap_or_else(TrainingConfig::wireless);
            sample_complexity_run(
                &est,
                &op,
                &cfg.dataset,
                &cfg.budgets,
                &tc,
                cfg.run.init_seed,
                cfg.eval_snr_db,
                &cfg.grid,
                &hash,
            )?
            .to_csv()?
        }
        ExperimentKind::Finetune => {
            let (est, op, params) = peil()?;
            let tc = cfg.run.training.clone().unwrap_or_else(TrainingConfig::wireless);
            finetune(
                &est,
                &op,
                &params,
                &cfg.finetune_dataset,
                &cfg.finetune_steps,
                &tc,
                cfg.eval_snr_db,
                &cfg.grid,
                &hash,
            )?
            .to_csv()?
        }
        ExperimentKind::Mri => {
            let p = cfg
                .mri_ckpt
                .as_ref()
                .ok_or_else(|| Error::ConfigInvalid("experiment needs mri_ckpt".into()))?;
            let Loaded::Mri { est, params, .. } = load_checkpoint(p)? else {
                return Err(Error::ConfigInvalid("mri_ckpt is not an MRI checkpoint".into()));
            };
            let samples = generate_mri_dataset(&cfg.mri)?;
            mri_comparison(
                &est,
                &params,
                &samples,
                cfg.mri.accel,
                &[Method::Peil, Method::Zerofill, Method::Sense],
                &hash,
            )?
            .to_csv()?
        }
    };
    write_with_manifest(&csv_path, csv.as_bytes(), &format!("experiment {name}"), &cfg, seeds)?;
    Ok(())
}

fn cmd_selftest() -> Result<()> {
    let checks = crate::selftest::run_all()?;
    let mut failed = None;
    for c in &checks {
        println!(
            "{} {} {:.3e} < {:.0e}",
            if c.passed() { "ok  " } else { "FAIL" },
            c.name,
            c.value,
            c.bound
        );
        if !c.passed() && failed.is_none() {
            failed = Some(c.name.clone());
        }
    }
    match failed {
        Some(name) => Err(Error::NumericalBreakdown(format!("check {name} failed"))),
        None => Ok(()),
    }
}

/// 1 for configuration, data and I/O problems, 2 for numerical failures.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NumericalBreakdown(_)
        | Error::DivisionDegenerate { .. }
        | Error::TapeConsumed
        | Error::ShapeMismatch { .. }
        | Error::TypeMismatch { .. } => 2,
        _ => 1,
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::ShapeMismatch { .. } => "ShapeMismatch",
        Error::TypeMismatch { .. } => "TypeMismatch",
        Error::DivisionDegenerate { .. } => "DivisionDegenerate",
        Error::NonPowerOfTwo(_) => "NonPowerOfTwo",
        Error::TapeConsumed => "TapeConsumed",
        Error::UnsupportedOrder(_) => "UnsupportedOrder",
        Error::UnknownProfile(_) => "UnknownProfile",
        Error::ConfigInvalid(_) => "ConfigInvalid",
        Error::RateInfeasible(_) => "RateInfeasible",
        Error::NumericalBreakdown(_) => "NumericalBreakdown",
        Error::LabelAccessViolation(_) => "LabelAccessViolation",
        Error::FormatVersionMismatch { .. } => "FormatVersionMismatch",
        Error::CorruptPayload(_) => "CorruptPayload",
        Error::Io(_) => "Io",
        Error::Json(_) => "Json",
        Error::Csv(_) => "Csv",
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::GenWireless(a) => cmd_gen_wireless(a),
        Command::GenMri(a) => cmd_gen_mri(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Experiment(a) => cmd_experiment(a),
        Command::Selftest => cmd_selftest(),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let diag = serde_json::json!({"error": error_kind(&e), "message": e.to_string()});
            eprintln!("{diag}");
            exit_code(&e)
        }
    }
}
