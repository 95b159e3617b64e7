//! Gray-coded square QAM with unit average symbol energy.
//!
//! A symbol is identified by its bit label as an integer in `0..order`; the
//! high half of the label selects the in-phase level, the low half the
//! quadrature level. On each axis level index `i` carries Gray label
//! `i ^ (i >> 1)` and sits at amplitude `2^m - 1 - 2i` before scaling, so
//! QPSK label `0b00` is `(1 + 1j)/sqrt(2)`.

use num_complex::Complex64;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Qam {
    order: u32,
    bits_per_axis: u32,
    scale: f64,
    // Level index -> Gray label, and back.
    gray: Vec<u32>,
    ungray: Vec<u32>,
}

impl Qam {
    pub fn new(order: u32) -> Result<Self> {
        if !matches!(order, 4 | 16 | 64 | 256) {
            return Err(Error::UnsupportedOrder(order));
        }
        let bits_per_axis = order.trailing_zeros() / 2;
        let side = 1u32 << bits_per_axis;
        let gray: Vec<u32> = (0..side).map(|i| i ^ (i >> 1)).collect();
        let mut ungray = vec![0; side as usize];
        for (i, &g) in gray.iter().enumerate() {
            ungray[g as usize] = i as u32;
        }
        let m = side as f64;
        let scale = 1.0 / (2.0 * (m * m - 1.0) / 3.0).sqrt();
        Ok(Self {
            order,
            bits_per_axis,
            scale,
            gray,
            ungray,
        })
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn bits_per_symbol(&self) -> u32 {
        2 * self.bits_per_axis
    }

    fn side(&self) -> u32 {
        1 << self.bits_per_axis
    }

    fn level(&self, idx: u32) -> f64 {
        (self.side() as f64 - 1.0 - 2.0 * idx as f64) * self.scale
    }

    fn nearest_level(&self, v: f64) -> u32 {
        let side = self.side() as f64;
        let idx = ((side - 1.0 - v / self.scale) / 2.0).round();
        idx.clamp(0.0, side - 1.0) as u32
    }

    /// Constellation point for a bit label in `0..order`.
    pub fn point(&self, label: u32) -> Complex64 {
        let mask = self.side() - 1;
        let gi = label >> self.bits_per_axis;
        let gq = label & mask;
        Complex64::new(self.level(self.ungray[gi as usize]), self.level(self.ungray[gq as usize]))
    }

    /// Hard decision: label of the nearest constellation point.
    pub fn decide(&self, z: Complex64) -> u32 {
        let gi = self.gray[self.nearest_level(z.re) as usize];
        let gq = self.gray[self.nearest_level(z.im) as usize];
        (gi << self.bits_per_axis) | gq
    }

    pub fn constellation(&self) -> Vec<Complex64> {
        (0..self.order).map(|l| self.point(l)).collect()
    }

    /// Maps a bit stream (MSB-first within each symbol) to symbols.
    pub fn map(&self, bits: &[bool]) -> Result<Vec<Complex64>> {
        let b = self.bits_per_symbol() as usize;
        if bits.len() % b != 0 {
            return Err(Error::ConfigInvalid(format!("{} bits is not a multiple of {b}", bits.len())));
        }
        Ok(bits
            .chunks(b)
            .map(|c| {
                let label = c.iter().fold(0u32, |acc, &bit| (acc << 1) | bit as u32);
                self.point(label)
            })
            .collect())
    }

    pub fn demap(&self, symbols: &[Complex64]) -> Vec<bool> {
        let b = self.bits_per_symbol();
        symbols
            .iter()
            .flat_map(|&z| {
                let label = self.decide(z);
                (0..b).rev().map(move |s| (label >> s) & 1 == 1)
            })
            .collect()
    }
}
