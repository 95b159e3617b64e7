//! Built-in consistency checks: gradients of every autodiff op and of both
//! reconstruction pipelines against central differences, operator adjoints,
//! CG against a dense solve, and the genie reconstructions.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::guard::LabelGuard;
use crate::metrics::{evm, ser};
use crate::mri::{
    cg_plain, cg_solve, mri_adjoint, mri_forward, mri_peil_reconstruct, synth_coils, MriConfig, MriDataset, MriEstimator, UNetConfig,
};
use crate::ofdm::{DatasetConfig, FrameConfig, Qam, WirelessDataset};
use crate::params::Bound;
use crate::tensor::{check_gradients, ComplexTensor, RealTensor, Tape, UnaryKind, Value, Var, DEFAULT_STEP};
use crate::wireless::{EstimatorConfig, WirelessEstimator, WirelessOperator};

/// Outcome of one named check: the measured error and the bound it must stay under.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: f64,
}

impl Check {
    pub fn new(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            value,
            bound,
        }
    }

    pub fn passed(&self) -> bool {
        self.value.is_finite() && self.value < self.bound
    }
}

fn rand_values(shape: &[usize], seed: u64, complex: bool) -> Value {
    let n: usize = shape.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |_| rng.random_range(-1.0..1.0);
    let re: Vec<f64> = (0..n).map(&mut draw).collect();
    if complex {
        let im = (0..n).map(&mut draw).collect();
        ComplexTensor::from_parts(shape, re, im).unwrap().into()
    } else {
        RealTensor::new(shape.to_vec(), re).unwrap().into()
    }
}

fn cplx(shape: &[usize], seed: u64) -> Value {
    rand_values(shape, seed, true)
}

fn real(shape: &[usize], seed: u64) -> Value {
    rand_values(shape, seed, false)
}

/// Weighted sum of the real coordinates, so no gradient is trivially symmetric.
fn probe<'t>(v: Var<'t>) -> Result<Var<'t>> {
    let tape = v.tape();
    let n = v.numel();
    let shape = v.shape();
    let wr: Vec<f64> = (0..n).map(|i| 0.3 + 0.17 * i as f64).collect();
    let wi: Vec<f64> = (0..n).map(|i| -0.5 + 0.11 * i as f64).collect();
    if v.is_complex() {
        v.mul(tape.constant(ComplexTensor::from_parts(&shape, wr, wi)?))?.re()?.sum()
    } else {
        v.mul(tape.constant(RealTensor::new(shape, wr)?))?.sum()
    }
}

macro_rules! op_check {
    ($out:ident, $name:expr, $inputs:expr, |$t:ident, $v:ident| $body:expr) => {{
        let r = check_gradients(|$t, $v| $body, &$inputs, DEFAULT_STEP)?;
        $out.push(Check::new(format!("grad:{}", $name), r.max_rel_error(), 1e-4));
    }};
}

/// Finite-difference check of every differentiable op.
pub fn op_gradient_checks() -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let ab = [cplx(&[4], 1), cplx(&[4], 2)];
    op_check!(out, "add", ab, |_t, v| probe(v[0].add(v[1])?));
    op_check!(out, "sub", ab, |_t, v| probe(v[0].sub(v[1])?));
    op_check!(out, "mul", ab, |_t, v| probe(v[0].mul(v[1])?));
    op_check!(out, "div", ab, |_t, v| probe(v[0].div(v[1])?));
    op_check!(out, "conj_neg", ab, |_t, v| probe(v[0].conj()?.neg()?));
    op_check!(out, "abs", ab, |_t, v| v[0].abs()?.sum());
    op_check!(out, "abs_sq", ab, |_t, v| probe(v[0].abs_sq()?));
    op_check!(out, "floor_modulus", ab, |_t, v| probe(v[0].floor_modulus(0.3)?));
    op_check!(out, "scale", ab, |_t, v| probe(v[0].scale(-1.7)?));

    let mixed = [real(&[5], 3), cplx(&[5], 4), real(&[], 5), cplx(&[], 6)];
    op_check!(out, "real_times_complex", mixed, |_t, v| probe(v[0].mul(v[1])?));
    op_check!(out, "complex_over_real", mixed, |_t, v| probe(v[1].div(v[0].add_scalar(2.0)?)?));
    op_check!(out, "scalar_broadcast_real", mixed, |_t, v| probe(v[1].mul(v[2])?));
    op_check!(out, "scalar_broadcast_complex", mixed, |_t, v| probe(v[1].sub(v[3])?.mul(v[3])?));
    op_check!(out, "make_complex", mixed, |t, v| probe(t.complex(v[0], v[0].exp()?)?));
    op_check!(out, "exp_i", mixed, |_t, v| probe(v[0].exp_i()?));
    op_check!(out, "re_im", mixed, |_t, v| probe(v[1].im()?.add(v[1].re()?)?));

    let x = [real(&[6], 7)];
    for (name, kind) in [
        ("leaky_relu", UnaryKind::LeakyRelu(0.01)),
        ("sigmoid", UnaryKind::Sigmoid),
        ("softplus", UnaryKind::Softplus),
        ("tanh", UnaryKind::Tanh),
        ("exp", UnaryKind::Exp),
    ] {
        op_check!(out, name, x, |_t, v| probe(v[0].unary(kind)?));
    }
    op_check!(out, "sqrt", x, |_t, v| probe(v[0].abs_sq()?.add_scalar(0.5)?.sqrt()?));

    let st = [cplx(&[3, 4], 9), real(&[3, 1], 10)];
    op_check!(out, "sum_axis", st, |_t, v| probe(v[0].sum_axis(0)?));
    op_check!(out, "mean_axis", st, |_t, v| probe(v[0].mean_axis(1)?));
    op_check!(out, "mean", st, |_t, v| v[0].abs_sq()?.mean());
    op_check!(out, "expand", st, |_t, v| probe(v[1].expand(&[3, 4])?.mul(v[0])?));
    op_check!(out, "reshape", st, |_t, v| probe(v[0].reshape(&[12])?));
    op_check!(out, "narrow", st, |_t, v| probe(v[0].narrow(1, 1, 2)?));
    op_check!(out, "concat", st, |t, v| probe(t.concat(&[v[0], v[0].narrow(1, 0, 1)?], 1)?));
    let mm = [real(&[2, 3], 11), cplx(&[3, 4], 12)];
    op_check!(out, "matmul", mm, |_t, v| probe(v[0].matmul(v[1])?));

    let f = [cplx(&[2, 8], 13), cplx(&[2, 4, 8], 14)];
    op_check!(out, "fft", f, |_t, v| probe(v[0].fft()?));
    op_check!(out, "ifft", f, |_t, v| probe(v[0].ifft()?));
    op_check!(out, "fft2", f, |_t, v| probe(v[1].fft2()?));
    op_check!(out, "ifft2", f, |_t, v| probe(v[1].ifft2()?));

    let c1 = [real(&[3, 7], 15), real(&[2, 3, 5], 16), real(&[2], 17)];
    op_check!(out, "conv1d", c1, |_t, v| probe(v[0].conv1d(v[1], v[2])?));
    for stride in [1, 2] {
        let c2 = [real(&[2, 6, 5], 18), real(&[3, 2, 3, 3], 19), real(&[3], 20)];
        op_check!(out, format!("conv2d_s{stride}"), c2, |_t, v| probe(
            v[0].conv2d(v[1], v[2], stride)?
        ));
    }
    let up = [real(&[2, 3, 2], 21)];
    op_check!(out, "upsample2", up, |_t, v| probe(v[0].upsample2()?));
    Ok(out)
}

/// Keeps pre-activations off the leaky-ReLU kink, where one-sided
/// differences disagree with any subgradient.
fn nudge_biases(params: &mut crate::params::ParamStore) {
    for name in params.names().to_vec() {
        if name.ends_with(".bias") {
            for (i, v) in params.get_mut(&name).unwrap().data_mut().iter_mut().enumerate() {
                *v += 0.05 + 0.01 * i as f64;
            }
        }
    }
}

/// End-to-end gradient of the wireless reconstruction loss with respect to
/// every estimator parameter.
pub fn wireless_pipeline_check() -> Result<Check> {
    let frame = FrameConfig {
        k: 16,
        l: 4,
        ..FrameConfig::default()
    };
    let s = WirelessDataset::new(DatasetConfig {
        frame: frame.clone(),
        n_frames: 1,
        snr_db: [20.0, 20.0],
        seed: 3,
        ..DatasetConfig::default()
    })?
    .frame(0)?;
    let est = WirelessEstimator::new(
        EstimatorConfig {
            layers: 1,
            hidden: 3,
            kernel: 3,
            cfo_layers: 1,
            cfo_hidden: 2,
            ..EstimatorConfig::default()
        },
        frame.clone(),
    )?;
    let op = WirelessOperator::new(frame, None)?;
    let mut params = est.init_params(5);
    nudge_biases(&mut params);
    for name in ["head_theta.weight", "head_gate.weight"] {
        for (i, v) in params.get_mut(name).unwrap().data_mut().iter_mut().enumerate() {
            *v = 0.1 * (i as f64 + 1.0);
        }
    }
    let names = params.names().to_vec();
    let inputs: Vec<Value> = params.tensors().iter().cloned().map(Value::from).collect();
    let data: Vec<bool> = s.pilot_mask.iter().map(|p| !p).collect();
    let r = check_gradients(
        |tape, vars| {
            let bound = Bound::from_vars(vars.to_vec(), &names);
            let rec = op.peil_reconstruct(tape, &est, &bound, &s, 0.0)?;
            crate::training::complex_l1_loss(tape, rec.x_hat, &s.x, Some(&data))
        },
        &inputs,
        DEFAULT_STEP,
    )?;
    Ok(Check::new("grad:wireless_pipeline", r.max_rel_error(), 1e-4))
}

/// End-to-end gradient of the MRI reconstruction loss through the unrolled CG.
pub fn mri_pipeline_check() -> Result<Check> {
    let s = MriDataset::new(MriConfig {
        size: 8,
        coils: 2,
        accel: 2,
        acs: Some(4),
        n: 1,
        seed: 2,
        ..MriConfig::default()
    })?
    .sample(0)?;
    let est = MriEstimator::new(
        UNetConfig {
            base: 2,
            depth: 1,
            cg_iters: 2,
        },
        2,
    )?;
    let mut params = est.init_params(1);
    nudge_biases(&mut params);
    let names = params.names().to_vec();
    let inputs: Vec<Value> = params.tensors().iter().cloned().map(Value::from).collect();
    let r = check_gradients(
        |tape, vars| {
            let bound = Bound::from_vars(vars.to_vec(), &names);
            let rec = mri_peil_reconstruct(tape, &est, &bound, &s)?;
            crate::training::complex_l1_loss(tape, rec.x_hat, &s.x, None)
        },
        &inputs,
        DEFAULT_STEP,
    )?;
    Ok(Check::new("grad:mri_pipeline", r.max_rel_error(), 1e-4))
}

/// `|<A x, y> - <x, A^H y>| / (|A x| |y|)` on random data.
pub fn mri_adjoint_check(seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = synth_coils(3, 8, seed)?;
    let mask: Vec<bool> = (0..8).map(|_| rng.random_bool(0.6)).collect();
    let x = match cplx(&[8, 8], seed + 1) {
        Value::Complex(c) => c,
        _ => unreachable!(),
    };
    let y = match cplx(&[3, 8, 8], seed + 2) {
        Value::Complex(c) => c,
        _ => unreachable!(),
    };
    let ax = mri_forward(&x, &s, &mask)?.to_complex_vec();
    let ahy = mri_adjoint(&y, &s, &mask)?.to_complex_vec();
    let yv = y.to_complex_vec();
    let xv = x.to_complex_vec();
    let lhs: Complex64 = ax.iter().zip(&yv).map(|(a, b)| a.conj() * b).sum();
    let rhs: Complex64 = xv.iter().zip(&ahy).map(|(a, b)| a.conj() * b).sum();
    let scale = ax.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt() * yv.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    Ok(Check::new("adjoint:mri", (lhs - rhs).norm() / scale.max(1e-300), 1e-10))
}

/// Dense Hermitian solve by Gaussian elimination with partial pivoting.
pub fn dense_solve(a: &[Vec<Complex64>], b: &[Complex64]) -> Result<Vec<Complex64>> {
    let n = b.len();
    let mut m: Vec<Vec<Complex64>> = a
        .iter()
        .zip(b)
        .map(|(row, &bi)| row.iter().copied().chain([bi]).collect())
        .collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i][col].norm().total_cmp(&m[j][col].norm())).unwrap();
        if m[piv][col].norm() < 1e-300 {
            return Err(Error::NumericalBreakdown("singular dense system".into()));
        }
        m.swap(col, piv);
        for r in col + 1..n {
            let f = m[r][col] / m[col][col];
            for c in col..=n {
                let v = m[col][c];
                m[r][c] -= f * v;
            }
        }
    }
    let mut x = vec![Complex64::new(0.0, 0.0); n];
    for r in (0..n).rev() {
        let s: Complex64 = (r + 1..n).map(|c| m[r][c] * x[c]).sum();
        x[r] = (m[r][n] - s) / m[r][r];
    }
    Ok(x)
}

/// CG on `(A^H A + lambda I) x = A^H y + lambda x0` against the dense solve
/// on a random 8x8 instance; also reports whether the residual never grew.
pub fn cg_dense_check(seed: u64) -> Result<(Check, bool)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = synth_coils(2, 8, seed)?;
    let mask: Vec<bool> = (0..8).map(|i| i % 2 == 0 || rng.random_bool(0.3)).collect();
    let unwrap = |v: Value| match v {
        Value::Complex(c) => c,
        _ => unreachable!(),
    };
    let x = unwrap(cplx(&[8, 8], seed + 10));
    let prior = unwrap(cplx(&[8, 8], seed + 11));
    let lambda = 0.05 + rng.random_range(0.0..0.5);
    let y = mri_forward(&x, &s, &mask)?;
    let n = 64;
    let mut a = vec![vec![Complex64::new(0.0, 0.0); n]; n];
    for j in 0..n {
        let mut e = ComplexTensor::zeros(&[8, 8]);
        e.set(j, Complex64::new(1.0, 0.0));
        let col = mri_adjoint(&mri_forward(&e, &s, &mask)?, &s, &mask)?.to_complex_vec();
        for i in 0..n {
            a[i][j] = col[i] + if i == j { lambda } else { 0.0 };
        }
    }
    let aty = mri_adjoint(&y, &s, &mask)?.to_complex_vec();
    let b: Vec<Complex64> = aty.iter().zip(prior.to_complex_vec()).map(|(u, p)| u + lambda * p).collect();
    let direct = dense_solve(&a, &b)?;
    let (cg, _) = cg_plain(&y, &s, &mask, &prior, lambda, 200, 1e-14)?;
    let err = cg
        .to_complex_vec()
        .iter()
        .zip(&direct)
        .map(|(u, v)| (u - v).norm_sqr())
        .sum::<f64>()
        .sqrt()
        / direct.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();

    let tape = Tape::new();
    let unrolled = cg_solve(
        &tape,
        tape.constant(y),
        tape.constant(s),
        &mask,
        tape.constant(prior),
        tape.scalar(lambda),
        7,
    )?;
    let r = &unrolled.trace.residual_norms;
    let monotone = r.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12));
    Ok((Check::new(format!("cg_vs_dense:{seed}"), err, 1e-6), monotone))
}

/// Noiseless frames equalised with the true channel and CFO: SER and EVM.
pub fn wireless_genie_check() -> Result<(f64, f64)> {
    let cfg = DatasetConfig {
        n_frames: 4,
        noiseless: true,
        seed: 11,
        ..DatasetConfig::default()
    };
    let op = WirelessOperator::new(cfg.frame.clone(), None)?;
    let qam = Qam::new(cfg.frame.qam_order)?;
    let guard = LabelGuard::open();
    let (mut worst_ser, mut worst_evm) = (0.0f64, 0.0f64);
    for s in WirelessDataset::new(cfg)?.materialize()? {
        let r = op.oracle_bound_reconstruct(&s, s.labels(&guard)?)?;
        let data: Vec<bool> = s.pilot_mask.iter().map(|p| !p).collect();
        worst_ser = worst_ser.max(ser(&r.x_hat, &s.x, &data, &qam)?);
        worst_evm = worst_evm.max(evm(&r.x_hat, &s.x, &data)?);
    }
    Ok((worst_ser, worst_evm))
}

/// Full sampling with the true maps and the true image as prior: relative
/// reconstruction error of the unrolled solver.
pub fn mri_genie_check() -> Result<f64> {
    let cfg = MriConfig {
        size: 16,
        coils: 4,
        accel: 1,
        acs: Some(16),
        n: 1,
        seed: 4,
        snr_db: None,
    };
    let s = MriDataset::new(cfg)?.sample(0)?;
    let maps = s.labels(&LabelGuard::open())?.maps.clone();
    let tape = Tape::new();
    let out = cg_solve(
        &tape,
        tape.constant(s.y.clone()),
        tape.constant(maps),
        &s.mask,
        tape.constant(s.x.clone()),
        tape.scalar(1e-3),
        7,
    )?;
    let xv = s.x.to_complex_vec();
    let num: f64 = out
        .x
        .complex()
        .to_complex_vec()
        .iter()
        .zip(&xv)
        .map(|(a, b)| (a - b).norm_sqr())
        .sum();
    let den: f64 = xv.iter().map(|b| b.norm_sqr()).sum();
    Ok((num / den).sqrt())
}

/// Every check above, in a fixed order.
pub fn run_all() -> Result<Vec<Check>> {
    let mut out = op_gradient_checks()?;
    out.push(wireless_pipeline_check()?);
    out.push(mri_pipeline_check()?);
    for seed in 0..3 {
        out.push(mri_adjoint_check(seed)?);
        let (c, monotone) = cg_dense_check(seed)?;
        out.push(c);
        out.push(Check::new(
            format!("cg_residual_monotone:{seed}"),
            if monotone { 0.0 } else { 1.0 },
            0.5,
        ));
    }
    let (s, e) = wireless_genie_check()?;
    out.push(Check::new("genie:wireless_ser", s, 1e-12));
    out.push(Check::new("genie:wireless_evm_percent", e, 1e-8));
    out.push(Check::new("genie:mri_rel_err", mri_genie_check()?, 1e-6));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_check_passes() {
        for c in run_all().unwrap() {
            assert!(c.passed(), "{} = {:e} (bound {:e})", c.name, c.value, c.bound);
        }
    }

    #[test]
    fn dense_solver_on_known_system() {
        let c = |r: f64, i: f64| Complex64::new(r, i);
        let a = vec![vec![c(2.0, 0.0), c(0.0, 1.0)], vec![c(0.0, -1.0), c(3.0, 0.0)]];
        let x = [c(1.0, 2.0), c(-1.0, 0.5)];
        let b: Vec<Complex64> = a.iter().map(|row| row[0] * x[0] + row[1] * x[1]).collect();
        let got = dense_solve(&a, &b).unwrap();
        assert!(got.iter().zip(&x).all(|(g, w)| (g - w).norm() < 1e-12));
    }
}
