use super::losses::{complex_l1_loss, physics_loss_mri};
use super::{run_loop, Mode, Task, TrainReport, TrainingConfig};
use crate::error::{Error, Result};
use crate::guard::LabelGuard;
use crate::mri::{magnitude_nmse, mri_peil_eval, mri_peil_reconstruct, MriEstimator, MriSample};
use crate::params::{Bound, ParamStore};
use crate::tensor::{ComplexTensor, Tape, Var};

fn sample_loss<'t>(
    tape: &'t Tape,
    cfg: &TrainingConfig,
    est: &MriEstimator,
    bound: &Bound<'t>,
    s: &MriSample,
    guard: &LabelGuard,
) -> Result<Var<'t>> {
    let r = mri_peil_reconstruct(tape, est, bound, s)?;
    match cfg.mode {
        Mode::Peil => {
            let rec = complex_l1_loss(tape, r.x_hat, &s.x, None)?;
            if cfg.gamma == 0.0 {
                return Ok(rec);
            }
            let phys = physics_loss_mri(tape, &s.y, &s.mask, r.out.maps, &s.x, cfg.beta)?;
            rec.add(phys.scale(cfg.gamma)?)
        }
        Mode::Supervised => {
            let maps = &s.labels(guard)?.maps;
            let m = r.out.maps.sub(tape.constant(maps.clone()))?.abs()?.mean()?;
            m.add(complex_l1_loss(tape, r.x_hat, &s.x, None)?)
        }
    }
}

/// Mean magnitude NMSE of the PEIL reconstruction over `samples`.
pub fn evaluate_mri_nmse(est: &MriEstimator, params: &ParamStore, samples: &[MriSample]) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        let (x_hat, _) = mri_peil_eval(est, params, s)?;
        total += magnitude_nmse(&magnitudes(&x_hat), &s.x)?;
    }
    Ok(total / samples.len().max(1) as f64)
}

pub(crate) fn magnitudes(x: &ComplexTensor) -> Vec<f64> {
    x.to_complex_vec().iter().map(|z| z.norm()).collect()
}

/// Trains the MRI estimator in place. PEIL mode uses the reconstruction loss
/// plus `gamma` times the physics loss and never reads the coil-map labels.
pub fn train_mri(
    cfg: &TrainingConfig,
    est: &MriEstimator,
    data: &[MriSample],
    params: &mut ParamStore,
    val: Option<&[MriSample]>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if cfg.task != Task::Mri {
        return Err(Error::ConfigInvalid("train_mri needs task = mri".into()));
    }
    if data.is_empty() {
        return Err(Error::ConfigInvalid("training set is empty".into()));
    }
    let guard = match cfg.mode {
        Mode::Peil => LabelGuard::locked(),
        Mode::Supervised => LabelGuard::open(),
    };
    let val_metric = |p: &ParamStore| -> Result<Option<f64>> { val.map(|v| evaluate_mri_nmse(est, p, v)).transpose() };
    run_loop(
        cfg,
        data.len(),
        params,
        crate::tensor::DEFAULT_EPS_DIV,
        &guard,
        val_metric,
        |tape, bound, i| sample_loss(tape, cfg, est, bound, &data[i], &guard),
    )
}
