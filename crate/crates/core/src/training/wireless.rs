use super::losses::{complex_l1_loss, supervised_param_loss};
use super::{run_loop, Mode, Task, TrainReport, TrainingConfig};
use crate::error::{Error, Result};
use crate::guard::LabelGuard;
use crate::metrics::symbol_errors;
use crate::ofdm::{FrameSource, Qam, WirelessSample};
use crate::params::ParamStore;
use crate::tensor::{Tape, Var};

use crate::wireless::{WirelessEstimator, WirelessOperator};

fn frame_loss<'t>(
    tape: &'t Tape,
    mode: Mode,
    est: &WirelessEstimator,
    op: &WirelessOperator,
    bound: &crate::params::Bound<'t>,
    s: &WirelessSample,
    guard: &LabelGuard,
) -> Result<Var<'t>> {
    let r = op.peil_reconstruct(tape, est, bound, s, 0.0)?;
    match mode {
        Mode::Peil => {
            let data: Vec<bool> = s.pilot_mask.iter().map(|p| !p).collect();
            complex_l1_loss(tape, r.x_hat, &s.x, Some(&data))
        }
        Mode::Supervised => supervised_param_loss(tape, r.h_hat, r.out.theta, s.labels(guard)?),
    }
}

/// Pooled SER of the PEIL path over `samples`.
pub fn evaluate_peil_ser(est: &WirelessEstimator, op: &WirelessOperator, params: &ParamStore, samples: &[WirelessSample]) -> Result<f64> {
    let qam = Qam::new(op.frame.qam_order)?;
    let (mut e, mut n) = (0, 0);
    for s in samples {
        let (r, _) = op.peil_eval(est, params, s, 0.0)?;
        let data: Vec<bool> = s.pilot_mask.iter().map(|p| !p).collect();
        let (de, dn) = symbol_errors(&r.x_hat, &s.x, &data, &qam)?;
        e += de;
        n += dn;
    }
    Ok(e as f64 / n.max(1) as f64)
}

/// Trains `params` in place. PEIL mode runs behind a locked label guard, so
/// any label read aborts the run with `LabelAccessViolation`.
pub fn train_wireless(
    cfg: &TrainingConfig,
    est: &WirelessEstimator,
    op: &WirelessOperator,
    data: &(impl FrameSource + ?Sized),
    params: &mut ParamStore,
    val: Option<&[WirelessSample]>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if cfg.task != Task::Wireless {
        return Err(Error::ConfigInvalid("train_wireless needs task = wireless".into()));
    }
    if data.n_frames() == 0 {
        return Err(Error::ConfigInvalid("training set is empty".into()));
    }
    let guard = match cfg.mode {
        Mode::Peil => LabelGuard::locked(),
        Mode::Supervised => LabelGuard::open(),
    };
    let val_metric = |p: &ParamStore| -> Result<Option<f64>> { val.map(|v| evaluate_peil_ser(est, op, p, v)).transpose() };
    run_loop(cfg, data.n_frames(), params, op.eps_div, &guard, val_metric, |tape, bound, i| {
        frame_loss(tape, cfg.mode, est, op, bound, &*data.get_frame(i)?, &guard)
    })
}
