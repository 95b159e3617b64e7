use crate::error::{Error, Result};
use crate::mri::{double_well, forward_on_tape, rss};
use crate::ofdm::WirelessLabels;
use crate::tensor::{ComplexTensor, RealTensor, Tape, Var};

/// Mean complex modulus of `x_hat - x` over cells where `cells` is true
/// (all cells when `None`).
pub fn complex_l1_loss<'t>(tape: &'t Tape, x_hat: Var<'t>, x: &ComplexTensor, cells: Option<&[bool]>) -> Result<Var<'t>> {
    if x_hat.shape() != x.shape() {
        return Err(Error::shape("complex_l1_loss", &x_hat.shape(), x.shape()));
    }
    let r = x_hat.sub(tape.constant(x.clone()))?.abs()?;
    match cells {
        None => r.mean(),
        Some(m) => {
            if m.len() != x.numel() {
                return Err(Error::shape("complex_l1_loss mask", &[m.len()], &[x.numel()]));
            }
            let n = m.iter().filter(|&&b| b).count().max(1);
            let w = RealTensor::new(x.shape().to_vec(), m.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())?;
            r.mul(tape.constant(w))?.sum()?.scale(1.0 / n as f64)
        }
    }
}

/// `|H^ - H|_1 / K + |theta^ - theta|`.
pub fn supervised_param_loss<'t>(tape: &'t Tape, h_hat: Var<'t>, theta_hat: Var<'t>, labels: &WirelessLabels) -> Result<Var<'t>> {
    let k = labels.h.len();
    if h_hat.shape() != [k] {
        return Err(Error::shape("supervised_param_loss", &h_hat.shape(), &[k]));
    }
    let h = tape.constant(ComplexTensor::from_complex(&[k], &labels.h)?);
    let h_term = h_hat.sub(h)?.abs()?.mean()?;
    let t_term = theta_hat.add_scalar(-labels.theta)?.abs()?;
    h_term.add(t_term)
}

/// Multi-coil consistency of the estimated maps against the reference image,
/// `|Y - P(F(S^ X))|^2 / |Y|^2`, plus `beta * double_well(rss(S^))`.
pub fn physics_loss_mri<'t>(
    tape: &'t Tape,
    y: &ComplexTensor,
    mask: &[bool],
    maps: Var<'t>,
    x: &ComplexTensor,
    beta: f64,
) -> Result<Var<'t>> {
    let pred = forward_on_tape(tape, tape.constant(x.clone()), maps, mask)?;
    if pred.shape() != y.shape() {
        return Err(Error::shape("physics_loss_mri", &pred.shape(), y.shape()));
    }
    let energy = y.to_complex_vec().iter().map(|z| z.norm_sqr()).sum::<f64>().max(f64::MIN_POSITIVE);
    let consistency = tape.constant(y.clone()).sub(pred)?.abs_sq()?.sum()?.scale(1.0 / energy)?;
    consistency.add(double_well(rss(maps)?)?.scale(beta)?)
}
