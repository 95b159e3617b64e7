//! Link-level OFDM forward model: QAM frames, fading, CFO and noise.
//!
//! Resource grids are `ComplexTensor`s of shape `[K, L]` (subcarrier-major,
//! index `k * L + l`).

mod channel;
mod dataset;
mod frame;
mod qam;

pub use channel::{
    doppler_hz, draw_channel, frequency_response, tap_response, ChannelProfile, ChannelRealization, ChannelSequence, FadingProcess,
    PROFILE_TABLE, SPEED_OF_LIGHT,
};
pub use dataset::{generate_dataset, ChannelMode, DatasetConfig, FrameSource, WirelessDataset, WirelessLabels, WirelessSample};
pub use frame::{add_awgn, apply_cfo, apply_channel, apply_channel_time_domain, build_frame, derotate_grid};
pub use qam::Qam;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrameConfig {
    /// Used subcarriers.
    pub k: usize,
    /// OFDM symbols per frame.
    pub l: usize,
    /// Pilot comb spacing in subcarriers.
    pub pilot_spacing: usize,
    pub qam_order: u32,
    pub n_fft: usize,
    pub cp: usize,
    pub subcarrier_spacing_hz: f64,
    pub carrier_hz: f64,
}

impl Default for FrameConfig {
    fn default() -> Self {
        Self {
            k: 64,
            l: 14,
            pilot_spacing: 4,
            qam_order: 16,
            n_fft: 64,
            cp: 16,
            subcarrier_spacing_hz: 15e3,
            carrier_hz: 2.6e9,
        }
    }
}

impl FrameConfig {
    /// 10 MHz LTE dimensioning.
    pub fn lte() -> Self {
        Self {
            k: 600,
            n_fft: 1024,
            cp: 72,
            pilot_spacing: 6,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigInvalid(m));
        if self.k == 0 || self.l == 0 {
            return bad("empty grid".into());
        }
        if self.pilot_spacing == 0 || self.k % self.pilot_spacing != 0 {
            return bad(format!("pilot spacing {} must divide K={}", self.pilot_spacing, self.k));
        }
        if !self.n_fft.is_power_of_two() || self.n_fft < self.k {
            return bad(format!("N_fft={} must be a power of two >= K={}", self.n_fft, self.k));
        }
        if !(self.subcarrier_spacing_hz > 0.0 && self.carrier_hz > 0.0) {
            return bad("frequencies must be positive".into());
        }
        Qam::new(self.qam_order)?;
        Ok(())
    }

    pub fn grid_len(&self) -> usize {
        self.k * self.l
    }

    /// Baseband frequency of used subcarrier `k` (centred on DC).
    pub fn subcarrier_freq(&self, k: usize) -> f64 {
        (k as f64 - (self.k / 2) as f64) * self.subcarrier_spacing_hz
    }

    /// FFT bin carrying used subcarrier `k`.
    pub fn fft_bin(&self, k: usize) -> usize {
        (k + self.n_fft - self.k / 2) % self.n_fft
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.n_fft as f64 * self.subcarrier_spacing_hz
    }

    pub fn frame_duration_s(&self) -> f64 {
        (self.l * (self.n_fft + self.cp)) as f64 / self.sample_rate_hz()
    }

    pub fn is_pilot_subcarrier(&self, k: usize) -> bool {
        k % self.pilot_spacing == 0
    }

    pub fn pilot_subcarriers(&self) -> Vec<usize> {
        (0..self.k).step_by(self.pilot_spacing).collect()
    }

    /// Pilot mask over the `[K, L]` grid: every pilot subcarrier in every symbol.
    pub fn pilot_mask(&self) -> Vec<bool> {
        (0..self.grid_len()).map(|i| self.is_pilot_subcarrier(i / self.l)).collect()
    }
}
