//! Multi-coil Cartesian operator, unrolled CG and the classical baselines.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::tensor::{fft2_along_last_two, ComplexTensor, RealTensor, Tape, Var};

/// Threshold on `p^H (A^H A + lambda I) p` below which CG stops.
pub const CG_BREAKDOWN: f64 = 1e-30;

fn dims3(s: &[usize]) -> Result<(usize, usize, usize)> {
    if s.len() != 3 {
        return Err(Error::shape("coil maps", s, &[0, 0, 0]));
    }
    Ok((s[0], s[1], s[2]))
}

/// Row mask broadcast to `[C, H, W]`.
pub fn mask_tensor(mask: &[bool], c: usize, h: usize, w: usize) -> Result<RealTensor> {
    if mask.len() != h {
        return Err(Error::shape("row mask", &[mask.len()], &[h]));
    }
    let data = (0..c * h * w).map(|i| if mask[(i / w) % h] { 1.0 } else { 0.0 }).collect();
    RealTensor::new(vec![c, h, w], data)
}

pub fn fft2_plain(x: &ComplexTensor, inverse: bool) -> Result<ComplexTensor> {
    let s = x.shape().to_vec();
    let r = s.len();
    if r < 2 {
        return Err(Error::shape("fft2", &s, &[0, 0]));
    }
    let (re, im) = x.clone().into_parts();
    let (mut re, mut im) = (re.into_data(), im.into_data());
    fft2_along_last_two(&mut re, &mut im, s[r - 2], s[r - 1], inverse)?;
    ComplexTensor::from_parts(&s, re, im)
}

/// `P_Omega F (S * x)`: `[H, W]` image to `[C, H, W]` k-space.
pub fn mri_forward(x: &ComplexTensor, s: &ComplexTensor, mask: &[bool]) -> Result<ComplexTensor> {
    let (c, h, w) = dims3(s.shape())?;
    if x.shape() != [h, w] {
        return Err(Error::shape("mri_forward", x.shape(), &[h, w]));
    }
    let xv = x.to_complex_vec();
    let sv = s.to_complex_vec();
    let coil: Vec<Complex64> = sv.iter().enumerate().map(|(i, z)| z * xv[i % (h * w)]).collect();
    let k = fft2_plain(&ComplexTensor::from_complex(&[c, h, w], &coil)?, false)?;
    Ok(apply_mask(&k, mask, h, w))
}

fn apply_mask(k: &ComplexTensor, mask: &[bool], h: usize, w: usize) -> ComplexTensor {
    let mut out = k.clone();
    for i in 0..k.numel() {
        if !mask[(i / w) % h] {
            out.set(i, Complex64::new(0.0, 0.0));
        }
    }
    out
}

/// `sum_c conj(S_c) F^H P_Omega y`.
pub fn mri_adjoint(y: &ComplexTensor, s: &ComplexTensor, mask: &[bool]) -> Result<ComplexTensor> {
    let (c, h, w) = dims3(s.shape())?;
    if y.shape() != s.shape() {
        return Err(Error::shape("mri_adjoint", y.shape(), s.shape()));
    }
    let img = fft2_plain(&apply_mask(y, mask, h, w), true)?.to_complex_vec();
    let sv = s.to_complex_vec();
    let plane = h * w;
    let out: Vec<Complex64> = (0..plane)
        .map(|p| (0..c).map(|ci| sv[ci * plane + p].conj() * img[ci * plane + p]).sum())
        .collect();
    ComplexTensor::from_complex(&[h, w], &out)
}

fn normal_plain(x: &ComplexTensor, s: &ComplexTensor, mask: &[bool], lambda: f64) -> Result<Vec<Complex64>> {
    let ax = mri_adjoint(&mri_forward(x, s, mask)?, s, mask)?.to_complex_vec();
    Ok(ax.iter().zip(x.to_complex_vec()).map(|(a, b)| a + b * lambda).collect())
}

fn dot(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p.conj() * q).re).sum()
}

/// Outcome of a conjugate-gradient run.
#[derive(Clone, Debug, PartialEq)]
pub struct CgTrace {
    /// `|b - N x_k|` for every iterate, starting with the initial one.
    pub residual_norms: Vec<f64>,
    /// Step at which the curvature test tripped, if it did.
    pub breakdown_at: Option<usize>,
}

/// CG on `(A^H A + lambda I) x = A^H y + lambda x_prior` from `x_prior`,
/// without recording; stops after `max_iters` or when the residual norm drops
/// below `tol` times the initial right-hand-side norm.
pub fn cg_plain(
    y: &ComplexTensor,
    s: &ComplexTensor,
    mask: &[bool],
    x_prior: &ComplexTensor,
    lambda: f64,
    max_iters: usize,
    tol: f64,
) -> Result<(ComplexTensor, CgTrace)> {
    let shape = x_prior.shape().to_vec();
    let xp = x_prior.to_complex_vec();
    let aty = mri_adjoint(y, s, mask)?.to_complex_vec();
    let b: Vec<Complex64> = aty.iter().zip(&xp).map(|(a, p)| a + p * lambda).collect();
    let b_norm = dot(&b, &b).sqrt();
    let mut x = xp.clone();
    let nx = normal_plain(x_prior, s, mask, lambda)?;
    let mut r: Vec<Complex64> = b.iter().zip(&nx).map(|(p, q)| p - q).collect();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut trace = CgTrace {
        residual_norms: vec![rr.sqrt()],
        breakdown_at: None,
    };
    for it in 0..max_iters {
        if rr.sqrt() <= tol * b_norm {
            break;
        }
        let np = normal_plain(&ComplexTensor::from_complex(&shape, &p)?, s, mask, lambda)?;
        let pap = dot(&p, &np);
        if pap < CG_BREAKDOWN {
            trace.breakdown_at = Some(it);
            break;
        }
        let alpha = rr / pap;
        for i in 0..x.len() {
            x[i] += p[i] * alpha;
            r[i] -= np[i] * alpha;
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        for i in 0..p.len() {
            p[i] = r[i] + p[i] * beta;
        }
        rr = rr_new;
        trace.residual_norms.push(rr.sqrt());
    }
    Ok((ComplexTensor::from_complex(&shape, &x)?, trace))
}

/// Recorded forward operator: `x [H, W]`, `s [C, H, W]`.
pub fn forward_on_tape<'t>(tape: &'t Tape, x: Var<'t>, s: Var<'t>, mask: &[bool]) -> Result<Var<'t>> {
    let (c, h, w) = dims3(&s.shape())?;
    let m = tape.constant(mask_tensor(mask, c, h, w)?);
    s.mul(x.reshape(&[1, h, w])?.expand(&[c, h, w])?)?.fft2()?.mul(m)
}

pub fn adjoint_on_tape<'t>(tape: &'t Tape, y: Var<'t>, s: Var<'t>, mask: &[bool]) -> Result<Var<'t>> {
    let (c, h, w) = dims3(&s.shape())?;
    let m = tape.constant(mask_tensor(mask, c, h, w)?);
    y.mul(m)?.ifft2()?.mul(s.conj()?)?.sum_axis(0)
}

/// Unrolled CG result on a tape.
pub struct CgOutput<'t> {
    pub x: Var<'t>,
    pub trace: CgTrace,
}

/// `iters` recorded CG steps on `(A^H A + lambda I) x = A^H y + lambda x_prior`,
/// started at `x_prior`. Differentiable in `s`, `x_prior` and `lambda`.
pub fn cg_solve<'t>(
    tape: &'t Tape,
    y: Var<'t>,
    s: Var<'t>,
    mask: &[bool],
    x_prior: Var<'t>,
    lambda: Var<'t>,
    iters: usize,
) -> Result<CgOutput<'t>> {
    if iters == 0 {
        return Err(Error::ConfigInvalid("CG needs at least one iteration".into()));
    }
    if !(lambda.item() > 0.0) {
        return Err(Error::ConfigInvalid("CG regularisation must be > 0".into()));
    }
    let normal = |v: Var<'t>| -> Result<Var<'t>> {
        let a = forward_on_tape(tape, v, s, mask)?;
        adjoint_on_tape(tape, a, s, mask)?.add(v.mul(lambda)?)
    };
    let inner = |a: Var<'t>, b: Var<'t>| -> Result<Var<'t>> { a.conj()?.mul(b)?.re()?.sum() };
    let aty = adjoint_on_tape(tape, y, s, mask)?;
    let b = aty.add(x_prior.mul(lambda)?)?;
    let mut x = x_prior;
    let mut r = b.sub(normal(x)?)?;
    let mut p = r;
    let mut rr = r.abs_sq()?.sum()?;
    let mut trace = CgTrace {
        residual_norms: vec![rr.item().sqrt()],
        breakdown_at: None,
    };
    let floor = CG_BREAKDOWN.max(tape.eps_div());
    for it in 0..iters {
        if rr.item() < floor {
            trace.breakdown_at = Some(it);
            break;
        }
        let np = normal(p)?;
        let pap = inner(p, np)?;
        if pap.item() < floor {
            trace.breakdown_at = Some(it);
            break;
        }
        let alpha = rr.div(pap)?;
        x = x.add(p.mul(alpha)?)?;
        r = r.sub(np.mul(alpha)?)?;
        let rr_new = r.abs_sq()?.sum()?;
        trace.residual_norms.push(rr_new.item().sqrt());
        if it + 1 < iters {
            p = r.add(p.mul(rr_new.div(rr)?)?)?;
        }
        rr = rr_new;
    }
    Ok(CgOutput { x, trace })
}

/// `sqrt(sum_c |S_c|^2)` over the leading axis.
pub fn rss<'t>(s: Var<'t>) -> Result<Var<'t>> {
    s.abs_sq()?.sum_axis(0)?.sqrt()
}

/// `mean((r (r - 1))^2)`.
pub fn double_well<'t>(r: Var<'t>) -> Result<Var<'t>> {
    let t = r.mul(r.add_scalar(-1.0)?)?;
    t.mul(t)?.mean()
}

pub fn rss_plain(s: &ComplexTensor) -> Result<RealTensor> {
    let (c, h, w) = dims3(s.shape())?;
    let v = s.to_complex_vec();
    let plane = h * w;
    let data = (0..plane)
        .map(|p| (0..c).map(|ci| v[ci * plane + p].norm_sqr()).sum::<f64>().sqrt())
        .collect();
    RealTensor::new(vec![h, w], data)
}

/// Converged CG with known maps and a zero prior.
pub fn sense_recon(y: &ComplexTensor, mask: &[bool], s: &ComplexTensor, lambda: f64) -> Result<ComplexTensor> {
    let (_, h, w) = dims3(s.shape())?;
    Ok(cg_plain(y, s, mask, &ComplexTensor::zeros(&[h, w]), lambda, 50, 1e-8)?.0)
}

/// Root-sum-of-squares of the per-coil inverse FFTs.
pub fn zero_fill_recon(y: &ComplexTensor) -> Result<RealTensor> {
    rss_plain(&fft2_plain(y, true)?)
}
