//! Tapped-delay-line Rayleigh channels with sum-of-sinusoids Doppler.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::FrameConfig;
use crate::error::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Sinusoids per tap in the Doppler generator.
const N_SINUSOIDS: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelProfile {
    pub name: String,
    pub delays_ns: Vec<f64>,
    pub powers_db: Vec<f64>,
}

/// 3GPP extended pedestrian / vehicular / typical urban tables:
/// `(name, delays in ns, mean powers in dB)`.
pub const PROFILE_TABLE: [(&str, &[f64], &[f64]); 3] = [
    (
        "epa",
        &[0.0, 30.0, 70.0, 90.0, 110.0, 190.0, 410.0],
        &[0.0, -1.0, -2.0, -3.0, -8.0, -17.2, -20.8],
    ),
    (
        "eva",
        &[0.0, 30.0, 150.0, 310.0, 370.0, 710.0, 1090.0, 1730.0, 2510.0],
        &[0.0, -1.5, -1.4, -3.6, -0.6, -9.1, -7.0, -12.0, -16.9],
    ),
    (
        "etu",
        &[0.0, 50.0, 120.0, 200.0, 230.0, 500.0, 1600.0, 2300.0, 5000.0],
        &[-1.0, -1.0, -1.0, 0.0, 0.0, 0.0, -3.0, -5.0, -7.0],
    ),
];

impl ChannelProfile {
    pub fn by_name(name: &str) -> Result<Self> {
        let key = name.to_ascii_lowercase();
        PROFILE_TABLE
            .iter()
            .find(|(n, _, _)| *n == key)
            .map(|(n, d, p)| ChannelProfile {
                name: n.to_string(),
                delays_ns: d.to_vec(),
                powers_db: p.to_vec(),
            })
            .ok_or_else(|| Error::UnknownProfile(name.to_string()))
    }

    /// A custom profile; delays must be non-negative and strictly increasing.
    pub fn custom(name: &str, delays_ns: Vec<f64>, powers_db: Vec<f64>) -> Result<Self> {
        let p = ChannelProfile {
            name: name.to_string(),
            delays_ns,
            powers_db,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = !self.delays_ns.is_empty()
            && self.delays_ns.len() == self.powers_db.len()
            && self.delays_ns[0] >= 0.0
            && self.delays_ns.windows(2).all(|w| w[1] > w[0])
            && self.powers_db.iter().all(|p| p.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::ConfigInvalid(format!("bad tap table for `{}`", self.name)))
        }
    }

    pub fn n_taps(&self) -> usize {
        self.delays_ns.len()
    }

    /// Linear tap powers scaled to sum to one.
    pub fn normalized_powers(&self) -> Vec<f64> {
        let lin: Vec<f64> = self.powers_db.iter().map(|p| 10f64.powf(p / 10.0)).collect();
        let total: f64 = lin.iter().sum();
        lin.iter().map(|p| p / total).collect()
    }
}

pub fn doppler_hz(velocity_kmh: f64, carrier_hz: f64) -> f64 {
    velocity_kmh / 3.6 * carrier_hz / SPEED_OF_LIGHT
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelRealization {
    pub taps: Vec<Complex64>,
    pub delays_s: Vec<f64>,
    /// Frequency response over the K used subcarriers.
    pub h: Vec<Complex64>,
    pub doppler_hz: f64,
    pub velocity_kmh: f64,
}

/// `sum_i g_i exp(-j 2 pi f tau_i)` at one frequency.
pub fn tap_response(taps: &[Complex64], delays_s: &[f64], freq_hz: f64) -> Complex64 {
    taps.iter()
        .zip(delays_s)
        .map(|(g, tau)| g * Complex64::from_polar(1.0, -2.0 * PI * freq_hz * tau))
        .sum()
}

pub fn frequency_response(cfg: &FrameConfig, taps: &[Complex64], delays_s: &[f64]) -> Vec<Complex64> {
    (0..cfg.k).map(|k| tap_response(taps, delays_s, cfg.subcarrier_freq(k))).collect()
}

/// One fading trajectory: per-tap sums of sinusoids with random arrival
/// angles and phases. Each tap is unit-variance complex Gaussian in the
/// limit, with autocorrelation `J0(2 pi f_d tau)`.
#[derive(Clone, Debug)]
pub struct FadingProcess {
    powers: Vec<f64>,
    delays_s: Vec<f64>,
    doppler_hz: f64,
    velocity_kmh: f64,
    // Per tap: (Doppler shift cos(alpha_m), phase phi_m).
    sinusoids: Vec<Vec<(f64, f64)>>,
}

impl FadingProcess {
    pub fn new(profile: &ChannelProfile, cfg: &FrameConfig, velocity_kmh: f64, rng: &mut impl Rng) -> Result<Self> {
        profile.validate()?;
        if !(velocity_kmh >= 0.0) {
            return Err(Error::ConfigInvalid(format!("velocity {velocity_kmh} km/h")));
        }
        let sinusoids = (0..profile.n_taps())
            .map(|_| {
                (0..N_SINUSOIDS)
                    .map(|_| {
                        let alpha: f64 = rng.random_range(0.0..2.0 * PI);
                        let phi: f64 = rng.random_range(0.0..2.0 * PI);
                        (alpha.cos(), phi)
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            powers: profile.normalized_powers(),
            delays_s: profile.delays_ns.iter().map(|d| d * 1e-9).collect(),
            doppler_hz: doppler_hz(velocity_kmh, cfg.carrier_hz),
            velocity_kmh,
            sinusoids,
        })
    }

    pub fn taps_at(&self, t: f64) -> Vec<Complex64> {
        let norm = 1.0 / (N_SINUSOIDS as f64).sqrt();
        self.sinusoids
            .iter()
            .zip(&self.powers)
            .map(|(sins, p)| {
                let s: Complex64 = sins
                    .iter()
                    .map(|(c, phi)| Complex64::from_polar(1.0, 2.0 * PI * self.doppler_hz * c * t + phi))
                    .sum();
                s * norm * p.sqrt()
            })
            .collect()
    }

    pub fn realization(&self, cfg: &FrameConfig, t: f64) -> ChannelRealization {
        let taps = self.taps_at(t);
        let h = frequency_response(cfg, &taps, &self.delays_s);
        ChannelRealization {
            taps,
            delays_s: self.delays_s.clone(),
            h,
            doppler_hz: self.doppler_hz,
            velocity_kmh: self.velocity_kmh,
        }
    }
}

/// Single draw of a channel (time 0 of a fresh fading trajectory).
pub fn draw_channel(profile: &ChannelProfile, cfg: &FrameConfig, velocity_kmh: f64, rng: &mut impl Rng) -> Result<ChannelRealization> {
    Ok(FadingProcess::new(profile, cfg, velocity_kmh, rng)?.realization(cfg, 0.0))
}

/// Frame-indexed channel sequence: frames are grouped into independent
/// "drives" of `block_len` consecutive frames that share one fading
/// trajectory sampled every frame duration.
#[derive(Clone, Debug)]
pub struct ChannelSequence {
    profile: ChannelProfile,
    cfg: FrameConfig,
    velocity_kmh: f64,
    seed: u64,
    block_len: usize,
}

impl ChannelSequence {
    pub fn new(profile: ChannelProfile, cfg: FrameConfig, velocity_kmh: f64, seed: u64, block_len: usize) -> Result<Self> {
        profile.validate()?;
        if block_len == 0 {
            return Err(Error::ConfigInvalid("drive length must be positive".into()));
        }
        if !(velocity_kmh >= 0.0) {
            return Err(Error::ConfigInvalid(format!("velocity {velocity_kmh} km/h")));
        }
        Ok(Self {
            profile,
            cfg,
            velocity_kmh,
            seed,
            block_len,
        })
    }

    pub fn channel(&self, frame: usize) -> ChannelRealization {
        let block = frame / self.block_len;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x9e37_79b9_7f4a_7c15);
        rng.set_stream(block as u64);
        let process = FadingProcess::new(&self.profile, &self.cfg, self.velocity_kmh, &mut rng).expect("validated at construction");
        let t = (frame % self.block_len) as f64 * self.cfg.frame_duration_s();
        process.realization(&self.cfg, t)
    }
}
