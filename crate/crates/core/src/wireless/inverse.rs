//! Fixed inverse operator: derotation, gated kernel fusion, equalisation.
//! Holds constants only; nothing here is trainable.

use std::f64::consts::PI;

use num_complex::Complex64;

use super::estimator::{EstimatesW, EstimatorOutputW, ProxyFeatures, WirelessEstimator};
use crate::error::{Error, Result};
use crate::ofdm::{derotate_grid, FrameConfig, WirelessLabels, WirelessSample};
use crate::params::Bound;
use crate::tensor::{ComplexTensor, RealTensor, Tape, Var, DEFAULT_EPS_DIV};

/// Row-stochastic Gaussian smoothing matrix over subcarrier index.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianKernel {
    pub sigma: f64,
    /// `[K, K]`.
    pub matrix: RealTensor,
}

pub fn build_kernel(k: usize, pilot_spacing: usize, sigma: Option<f64>) -> GaussianKernel {
    let sigma = sigma.unwrap_or(pilot_spacing as f64);
    let mut m = vec![0.0; k * k];
    for i in 0..k {
        let row = &mut m[i * k..(i + 1) * k];
        for (j, w) in row.iter_mut().enumerate() {
            let d = i as f64 - j as f64;
            *w = (-d * d / (2.0 * sigma * sigma)).exp();
        }
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|w| *w /= s);
    }
    GaussianKernel {
        sigma,
        matrix: RealTensor::new(vec![k, k], m).expect("square"),
    }
}

impl GaussianKernel {
    pub fn k(&self) -> usize {
        self.matrix.shape()[0]
    }

    pub fn apply(&self, v: &[Complex64]) -> Vec<Complex64> {
        let k = self.k();
        let m = self.matrix.data();
        (0..k).map(|i| (0..k).map(|j| v[j] * m[i * k + j]).sum()).collect()
    }
}

/// Reconstruction of one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct ReconResultW {
    /// Equalised grid `[K, L]` (pilot cells hold `Y~ / H^` as well).
    pub x_hat: ComplexTensor,
    pub h_hat: Vec<Complex64>,
    pub theta: f64,
    pub lambda: f64,
}

/// Differentiable reconstruction with the estimator outputs that produced it.
pub struct PeilRecon<'t> {
    pub x_hat: Var<'t>,
    pub h_hat: Var<'t>,
    pub out: EstimatorOutputW<'t>,
}

#[derive(Clone, Debug)]
pub struct WirelessOperator {
    pub frame: FrameConfig,
    pub kernel: GaussianKernel,
    pub eps_div: f64,
    // -2 pi l / L on the [K, L] grid.
    derot: RealTensor,
    pilot_subs: RealTensor,
}

impl WirelessOperator {
    pub fn new(frame: FrameConfig, sigma: Option<f64>) -> Result<Self> {
        frame.validate()?;
        if let Some(s) = sigma {
            if !(s > 0.0) {
                return Err(Error::ConfigInvalid(format!("kernel width {s}")));
            }
        }
        let (k, l) = (frame.k, frame.l);
        let kernel = build_kernel(k, frame.pilot_spacing, sigma);
        let derot = RealTensor::new(vec![k, l], (0..k * l).map(|i| -2.0 * PI * (i % l) as f64 / l as f64).collect())?;
        let pilot_subs = RealTensor::from_vec((0..k).map(|kk| if frame.is_pilot_subcarrier(kk) { 1.0 } else { 0.0 }).collect());
        Ok(Self {
            frame,
            kernel,
            eps_div: DEFAULT_EPS_DIV,
            derot,
            pilot_subs,
        })
    }

    /// `Y~ = Y * exp(-j 2 pi theta l / L)`.
    pub fn derotate<'t>(&self, tape: &'t Tape, y: Var<'t>, theta: Var<'t>) -> Result<Var<'t>> {
        let phase = tape.constant(self.derot.clone()).mul(theta)?;
        y.mul(phase.exp_i()?)
    }

    /// Pilot zero-forcing estimate averaged over symbols, zero off the comb.
    pub fn reproxy<'t>(&self, tape: &'t Tape, y_tilde: Var<'t>, x: &ComplexTensor, pilot_mask: &[bool]) -> Result<Var<'t>> {
        let l = self.frame.l;
        let mut c = ComplexTensor::zeros(x.shape());
        for (i, &p) in pilot_mask.iter().enumerate() {
            if p {
                c.set(i, Complex64::new(1.0, 0.0) / x.get(i) / l as f64);
            }
        }
        y_tilde.mul(tape.constant(c))?.sum_axis(1)
    }

    /// `H^ = K (H_prior + m * lambda * (H_bar * H_scale - H_prior))`.
    pub fn fuse_interpolate<'t>(
        &self,
        tape: &'t Tape,
        h_bar: Var<'t>,
        h_prior: Var<'t>,
        h_scale: Var<'t>,
        lambda: Var<'t>,
    ) -> Result<Var<'t>> {
        let k = self.frame.k;
        let diff = h_bar.mul(h_scale)?.sub(h_prior)?;
        let gated = diff.mul(tape.constant(self.pilot_subs.clone()))?.mul(lambda)?;
        let v = h_prior.add(gated)?.reshape(&[k, 1])?;
        tape.constant(self.kernel.matrix.clone()).matmul(v)?.reshape(&[k])
    }

    /// `X^ = Y~ / H^`, with `|H^|` floored at `eps_div`.
    pub fn equalize<'t>(&self, y_tilde: Var<'t>, h_hat: Var<'t>) -> Result<Var<'t>> {
        let (k, l) = (self.frame.k, self.frame.l);
        let h = h_hat.floor_modulus(self.eps_div)?.reshape(&[k, 1])?.expand(&[k, l])?;
        y_tilde.div(h)
    }

    /// Estimator, then derotation by `theta_hat + delta_theta`, re-proxy,
    /// fusion and equalisation, all on `tape`.
    pub fn peil_reconstruct<'t>(
        &self,
        tape: &'t Tape,
        est: &WirelessEstimator,
        params: &Bound<'t>,
        sample: &WirelessSample,
        delta_theta: f64,
    ) -> Result<PeilRecon<'t>> {
        let feats = ProxyFeatures::from_sample(sample);
        let out = est.forward_with_offset(tape, params, &feats, delta_theta)?;
        let theta = if delta_theta == 0.0 {
            out.theta
        } else {
            out.theta.add_scalar(delta_theta)?
        };
        let y = tape.constant(sample.y.clone());
        let y_tilde = self.derotate(tape, y, theta)?;
        let h_bar = self.reproxy(tape, y_tilde, &sample.x, &sample.pilot_mask)?;
        let h_hat = self.fuse_interpolate(tape, h_bar, out.h_prior, out.h_scale, out.lambda)?;
        let x_hat = self.equalize(y_tilde, h_hat)?;
        Ok(PeilRecon { x_hat, h_hat, out })
    }

    /// Non-recording evaluation of the PEIL path.
    pub fn peil_eval(
        &self,
        est: &WirelessEstimator,
        params: &crate::params::ParamStore,
        sample: &WirelessSample,
        delta_theta: f64,
    ) -> Result<(ReconResultW, EstimatesW)> {
        let tape = Tape::with_eps_div(self.eps_div);
        let bound = params.bind(&tape, false);
        let r = self.peil_reconstruct(&tape, est, &bound, sample, delta_theta)?;
        let estimates = r.out.values();
        Ok((
            ReconResultW {
                x_hat: r.x_hat.complex(),
                h_hat: r.h_hat.complex().to_complex_vec(),
                theta: estimates.theta + delta_theta,
                lambda: estimates.lambda,
            },
            estimates,
        ))
    }

    /// Ground-truth pilot channel spread by normalised kernel interpolation,
    /// smoothed by the kernel, with derotation by `theta + theta_error`.
    pub fn oracle_ls_reconstruct(&self, sample: &WirelessSample, labels: &WirelessLabels, theta_error: f64) -> Result<ReconResultW> {
        let h_hat = self.oracle_ls_channel(&labels.h);
        let theta = labels.theta + theta_error;
        let y_tilde = derotate_grid(&sample.y, theta);
        Ok(ReconResultW {
            x_hat: equalize_floored(&y_tilde, &h_hat, self.eps_div),
            h_hat,
            theta,
            lambda: 1.0,
        })
    }

    pub fn oracle_ls_channel(&self, h_true: &[Complex64]) -> Vec<Complex64> {
        let k = self.frame.k;
        let m = self.kernel.matrix.data();
        let pilots = self.frame.pilot_subcarriers();
        let v: Vec<Complex64> = (0..k)
            .map(|i| {
                if self.frame.is_pilot_subcarrier(i) {
                    h_true[i]
                } else {
                    let w: f64 = pilots.iter().map(|&p| m[i * k + p]).sum();
                    pilots.iter().map(|&p| h_true[p] * m[i * k + p]).sum::<Complex64>() / w
                }
            })
            .collect();
        self.kernel.apply(&v)
    }

    /// Genie equaliser: exact derotation and the true dense channel.
    pub fn oracle_bound_reconstruct(&self, sample: &WirelessSample, labels: &WirelessLabels) -> Result<ReconResultW> {
        let y_tilde = derotate_grid(&sample.y, labels.theta);
        Ok(ReconResultW {
            x_hat: equalize_floored(&y_tilde, &labels.h, self.eps_div),
            h_hat: labels.h.clone(),
            theta: labels.theta,
            lambda: 1.0,
        })
    }
}

/// `Y~[k, l] / H[k]`; fails when any `|H[k]| < eps`.
pub fn equalize(y_tilde: &ComplexTensor, h: &[Complex64], eps: f64) -> Result<ComplexTensor> {
    if let Some(z) = h.iter().find(|z| z.norm() < eps) {
        return Err(Error::DivisionDegenerate { modulus: z.norm(), eps });
    }
    Ok(equalize_floored(y_tilde, h, eps))
}

/// Like [`equalize`] but raises `|H[k]|` to `eps` instead of failing.
pub fn equalize_floored(y_tilde: &ComplexTensor, h: &[Complex64], eps: f64) -> ComplexTensor {
    let l = y_tilde.shape()[1];
    let mut out = y_tilde.clone();
    for i in 0..y_tilde.numel() {
        let hk = h[i / l];
        let m = hk.norm();
        let hk = if m >= eps {
            hk
        } else if m == 0.0 {
            Complex64::new(eps, 0.0)
        } else {
            hk * (eps / m)
        };
        out.set(i, y_tilde.get(i) / hk);
    }
    out
}
