//! Phantom-scale parallel MRI: synthetic data, the fixed CG operator and the
//! U-Net estimator.

mod operator;
mod phantom;
mod unet;

pub use operator::{
    adjoint_on_tape, cg_plain, cg_solve, double_well, fft2_plain, forward_on_tape, mask_tensor, mri_adjoint, mri_forward, rss, rss_plain,
    sense_recon, zero_fill_recon, CgOutput, CgTrace, CG_BREAKDOWN,
};
pub use phantom::{cart_mask, default_acs, phantom_gen, synth_coils, Phantom};
pub use unet::{
    mri_peil_eval, mri_peil_reconstruct, zero_filled_input, MriEstimates, MriEstimator, MriEstimatorOutput, MriRecon, UNetConfig,
};

use num_complex::Complex64;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::guard::LabelGuard;
use crate::tensor::ComplexTensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MriConfig {
    pub size: usize,
    pub coils: usize,
    pub accel: usize,
    /// Calibration rows; `None` picks [`default_acs`].
    pub acs: Option<usize>,
    pub n: usize,
    pub seed: u64,
    /// k-space SNR in dB; `None` for noiseless data.
    pub snr_db: Option<f64>,
}

impl Default for MriConfig {
    fn default() -> Self {
        Self {
            size: 64,
            coils: 4,
            accel: 4,
            acs: None,
            n: 64,
            seed: 0,
            snr_db: Some(30.0),
        }
    }
}

impl MriConfig {
    pub fn acs_lines(&self) -> usize {
        self.acs.unwrap_or_else(|| default_acs(self.size, self.accel))
    }

    pub fn validate(&self) -> Result<()> {
        if self.size < 8 || !self.size.is_power_of_two() {
            return Err(Error::ConfigInvalid(format!(
                "image size {} must be a power of two >= 8",
                self.size
            )));
        }
        if self.coils == 0 || self.n == 0 {
            return Err(Error::ConfigInvalid("coils and sample count must be >= 1".into()));
        }
        if let Some(s) = self.snr_db {
            if !s.is_finite() {
                return Err(Error::ConfigInvalid("SNR must be finite (use null for noiseless)".into()));
            }
        }
        cart_mask(self.size, self.accel, self.acs_lines(), 0).map(|_| ())
    }
}

/// Hidden calibration reference.
#[derive(Clone, Debug, PartialEq)]
pub struct MriLabels {
    /// `[C, H, W]`.
    pub maps: ComplexTensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MriSample {
    /// Ground-truth image `[H, W]`.
    pub x: ComplexTensor,
    pub object: Vec<bool>,
    /// Sampled k-space rows, FFT order.
    pub mask: Vec<bool>,
    /// Undersampled multi-coil k-space `[C, H, W]`.
    pub y: ComplexTensor,
    pub noise_std: f64,
    labels: MriLabels,
}

impl MriSample {
    pub fn new(x: ComplexTensor, object: Vec<bool>, mask: Vec<bool>, y: ComplexTensor, noise_std: f64, labels: MriLabels) -> Self {
        Self {
            x,
            object,
            mask,
            y,
            noise_std,
            labels,
        }
    }

    pub fn labels(&self, guard: &LabelGuard) -> Result<&MriLabels> {
        guard.check("MRI coil-map labels")?;
        Ok(&self.labels)
    }

    pub fn labels_mut(&mut self) -> &mut MriLabels {
        &mut self.labels
    }
}

/// Sample `i` depends only on `(seed, i)` for the anatomy and coils, so the
/// same index at a different acceleration shows the same object.
#[derive(Clone, Debug)]
pub struct MriDataset {
    cfg: MriConfig,
}

impl MriDataset {
    pub fn new(cfg: MriConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &MriConfig {
        &self.cfg
    }

    pub fn len(&self) -> usize {
        self.cfg.n
    }

    pub fn is_empty(&self) -> bool {
        self.cfg.n == 0
    }

    pub fn sample(&self, index: usize) -> Result<MriSample> {
        let c = &self.cfg;
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        rng.set_stream(index as u64);
        let (ph_seed, coil_seed, mask_seed, noise_seed) = (rng.next_u64(), rng.next_u64(), rng.next_u64(), rng.next_u64());
        let ph = phantom_gen(ph_seed, c.size);
        let maps = synth_coils(c.coils, c.size, coil_seed)?;
        let mask = cart_mask(c.size, c.accel, c.acs_lines(), mask_seed)?;
        let clean = mri_forward(&ph.x, &maps, &mask)?;
        let (y, noise_std) = match c.snr_db {
            None => (clean, 0.0),
            Some(snr) => add_kspace_noise(&clean, &mask, snr, noise_seed)?,
        };
        Ok(MriSample::new(ph.x, ph.object, mask, y, noise_std, MriLabels { maps }))
    }

    pub fn materialize(&self) -> Result<Vec<MriSample>> {
        (0..self.len()).map(|i| self.sample(i)).collect()
    }
}

pub fn generate_mri_dataset(cfg: &MriConfig) -> Result<Vec<MriSample>> {
    MriDataset::new(cfg.clone())?.materialize()
}

/// Circular Gaussian noise on the sampled rows at `snr_db` relative to their
/// mean power. Returns the noisy data and the per-entry noise std.
pub fn add_kspace_noise(y: &ComplexTensor, mask: &[bool], snr_db: f64, seed: u64) -> Result<(ComplexTensor, f64)> {
    let s = y.shape();
    let (h, w) = (s[1], s[2]);
    let sampled: Vec<usize> = (0..y.numel()).filter(|&i| mask[(i / w) % h]).collect();
    let power = sampled.iter().map(|&i| y.get(i).norm_sqr()).sum::<f64>() / sampled.len().max(1) as f64;
    let std = (power * 10f64.powf(-snr_db / 10.0)).sqrt();
    let normal = Normal::new(0.0, std / 2f64.sqrt()).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = y.clone();
    for &i in &sampled {
        out.set(i, y.get(i) + Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng)));
    }
    Ok((out, std))
}

/// `|x_hat| - |x|` energy over `|x|` energy.
pub fn magnitude_nmse(x_hat: &[f64], x: &ComplexTensor) -> Result<f64> {
    if x_hat.len() != x.numel() {
        return Err(Error::shape("magnitude_nmse", &[x_hat.len()], x.shape()));
    }
    let xv = x.to_complex_vec();
    let num: f64 = x_hat.iter().zip(&xv).map(|(a, b)| (a - b.norm()).powi(2)).sum();
    let den: f64 = xv.iter().map(|b| b.norm_sqr()).sum();
    Ok(num / den)
}
