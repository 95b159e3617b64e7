//! Small U-Net producing coil maps, an image prior and the CG weight.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::operator::{cg_solve, fft2_plain, CgTrace};
use super::MriSample;
use crate::error::{Error, Result};
use crate::params::{he_uniform, Bound, ParamStore};
use crate::tensor::{ComplexTensor, RealTensor, Tape, Var};

const SLOPE: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UNetConfig {
    /// Channels at full resolution; doubled per level.
    pub base: usize,
    /// Number of stride-2 levels.
    pub depth: usize,
    pub cg_iters: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            base: 16,
            depth: 2,
            cg_iters: 7,
        }
    }
}

pub struct MriEstimatorOutput<'t> {
    /// Complex `[C, H, W]`.
    pub maps: Var<'t>,
    /// Complex `[H, W]`.
    pub x_prior: Var<'t>,
    /// Real scalar > 0.
    pub lambda: Var<'t>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MriEstimates {
    pub maps: ComplexTensor,
    pub x_prior: ComplexTensor,
    pub lambda: f64,
}

impl MriEstimatorOutput<'_> {
    pub fn values(&self) -> MriEstimates {
        MriEstimates {
            maps: self.maps.complex(),
            x_prior: self.x_prior.complex(),
            lambda: self.lambda.item(),
        }
    }
}

/// Stacked re and im of the per-coil zero-filled images, `[2C, H, W]`.
pub fn zero_filled_input(y: &ComplexTensor) -> Result<RealTensor> {
    let s = y.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let img = fft2_plain(y, true)?;
    let (re, im) = img.into_parts();
    let mut data = re.into_data();
    data.extend_from_slice(im.data());
    RealTensor::new(vec![2 * c, h, w], data)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MriEstimator {
    pub config: UNetConfig,
    pub coils: usize,
}

impl MriEstimator {
    pub fn new(config: UNetConfig, coils: usize) -> Result<Self> {
        if config.base == 0 || config.cg_iters == 0 || coils == 0 {
            return Err(Error::ConfigInvalid("U-Net needs base, CG steps and coils > 0".into()));
        }
        Ok(Self { config, coils })
    }

    fn width(&self, level: usize) -> usize {
        self.config.base << level
    }

    pub fn init_params(&self, seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let mut conv = |p: &mut ParamStore, name: String, cout: usize, cin: usize, k: usize| {
            p.push(format!("{name}.weight"), he_uniform(&[cout, cin, k, k], cin * k * k, &mut rng));
            p.push(format!("{name}.bias"), RealTensor::zeros(&[cout]));
        };
        let d = self.config.depth;
        for level in 0..=d {
            let cin = if level == 0 { 2 * self.coils } else { self.width(level - 1) };
            conv(&mut p, format!("enc.{level}.a"), self.width(level), cin, 3);
            conv(&mut p, format!("enc.{level}.b"), self.width(level), self.width(level), 3);
        }
        for level in (0..d).rev() {
            conv(&mut p, format!("dec.{level}.up"), self.width(level), self.width(level + 1), 3);
            conv(&mut p, format!("dec.{level}.merge"), self.width(level), 2 * self.width(level), 3);
        }
        let b = self.width(0);
        conv(&mut p, "head_maps".into(), 2 * self.coils, b, 1);
        // Real parts start at 1/sqrt(C): unit RSS, the upper well.
        let c = self.coils;
        let bias = (0..2 * c).map(|i| if i < c { 1.0 / (c as f64).sqrt() } else { 0.0 }).collect();
        *p.get_mut("head_maps.bias").expect("pushed above") = RealTensor::from_vec(bias);
        conv(&mut p, "head_prior".into(), 2, b, 1);
        p.push("head_lambda.weight", RealTensor::zeros(&[1, self.width(d)]));
        p.push("head_lambda.bias", RealTensor::zeros(&[1]));
        p
    }

    pub fn forward<'t>(&self, tape: &'t Tape, params: &Bound<'t>, input: &RealTensor) -> Result<MriEstimatorOutput<'t>> {
        let s = input.shape();
        if s.len() != 3 || s[0] != 2 * self.coils {
            return Err(Error::shape("unet input", s, &[2 * self.coils, 0, 0]));
        }
        let (h, w) = (s[1], s[2]);
        let scale = 1 << self.config.depth;
        if h % scale != 0 || w % scale != 0 {
            return Err(Error::shape("unet input", s, &[2 * self.coils, scale, scale]));
        }
        let conv = |x: Var<'t>, name: &str, stride: usize| -> Result<Var<'t>> {
            x.conv2d(params.get(&format!("{name}.weight"))?, params.get(&format!("{name}.bias"))?, stride)
        };
        let block = |x: Var<'t>, name: &str, stride: usize| -> Result<Var<'t>> { conv(x, name, stride)?.leaky_relu(SLOPE) };

        let mut skips = Vec::new();
        let mut x = tape.constant(input.clone());
        for level in 0..=self.config.depth {
            let stride = if level == 0 { 1 } else { 2 };
            x = block(x, &format!("enc.{level}.a"), stride)?;
            x = block(x, &format!("enc.{level}.b"), 1)?;
            skips.push(x);
        }
        let bottom = x;
        for level in (0..self.config.depth).rev() {
            x = block(x.upsample2()?, &format!("dec.{level}.up"), 1)?;
            x = tape.concat(&[skips[level], x], 0)?;
            x = block(x, &format!("dec.{level}.merge"), 1)?;
        }
        let c = self.coils;
        let m = conv(x, "head_maps", 1)?;
        let maps = tape.complex(m.narrow(0, 0, c)?, m.narrow(0, c, c)?)?;
        let pr = conv(x, "head_prior", 1)?;
        let x_prior = tape.complex(pr.narrow(0, 0, 1)?.reshape(&[h, w])?, pr.narrow(0, 1, 1)?.reshape(&[h, w])?)?;
        let wd = self.width(self.config.depth);
        let pooled = bottom.reshape(&[wd, bottom.numel() / wd])?.mean_axis(1)?.reshape(&[wd, 1])?;
        let lambda = params
            .get("head_lambda.weight")?
            .matmul(pooled)?
            .reshape(&[])?
            .add(params.get("head_lambda.bias")?.reshape(&[])?)?
            .softplus()?;
        Ok(MriEstimatorOutput { maps, x_prior, lambda })
    }
}

pub struct MriRecon<'t> {
    pub x_hat: Var<'t>,
    pub out: MriEstimatorOutput<'t>,
    pub trace: CgTrace,
}

/// U-Net, then the unrolled CG solve with the predicted maps, prior and weight.
pub fn mri_peil_reconstruct<'t>(tape: &'t Tape, est: &MriEstimator, params: &Bound<'t>, sample: &MriSample) -> Result<MriRecon<'t>> {
    let input = zero_filled_input(&sample.y)?;
    let out = est.forward(tape, params, &input)?;
    let y = tape.constant(sample.y.clone());
    let cg = cg_solve(tape, y, out.maps, &sample.mask, out.x_prior, out.lambda, est.config.cg_iters)?;
    Ok(MriRecon {
        x_hat: cg.x,
        out,
        trace: cg.trace,
    })
}

/// Non-recording evaluation: `(x_hat, estimates)`.
pub fn mri_peil_eval(est: &MriEstimator, params: &ParamStore, sample: &MriSample) -> Result<(ComplexTensor, MriEstimates)> {
    let tape = Tape::new();
    let bound = params.bind(&tape, false);
    let r = mri_peil_reconstruct(&tape, est, &bound, sample)?;
    Ok((r.x_hat.complex(), r.out.values()))
}
