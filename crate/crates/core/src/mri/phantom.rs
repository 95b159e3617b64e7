//! Synthetic anatomy: ellipse phantoms, smooth coil maps and Cartesian masks.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::ComplexTensor;

/// Ellipse phantom with the region inside its outer boundary.
#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    /// `[size, size]`, magnitude in `[0, 1]`.
    pub x: ComplexTensor,
    pub object: Vec<bool>,
    pub n_ellipses: usize,
}

struct Ellipse {
    cu: f64,
    cv: f64,
    a: f64,
    b: f64,
    angle: f64,
}

impl Ellipse {
    fn inside(&self, u: f64, v: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let (du, dv) = (u - self.cu, v - self.cv);
        let x = c * du + s * dv;
        let y = -s * du + c * dv;
        (x / self.a).powi(2) + (y / self.b).powi(2) <= 1.0
    }
}

/// Pixel-centre coordinate in `(-1, 1)`.
fn coord(i: usize, n: usize) -> f64 {
    (2 * i + 1) as f64 / n as f64 - 1.0
}

pub fn phantom_gen(seed: u64, size: usize) -> Phantom {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let outer = Ellipse {
        cu: rng.random_range(-0.05..0.05),
        cv: rng.random_range(-0.05..0.05),
        a: rng.random_range(0.68..0.82),
        b: rng.random_range(0.78..0.9),
        angle: rng.random_range(-0.3..0.3),
    };
    let rim = rng.random_range(0.06..0.1);
    let inner = Ellipse {
        a: outer.a - rim,
        b: outer.b - rim,
        ..outer
    };
    let brain = rng.random_range(0.25..0.45);
    let n_inner = rng.random_range(3..=6);
    let mut blobs = Vec::with_capacity(n_inner);
    for _ in 0..n_inner {
        let r = rng.random_range(0.0..0.45);
        let t = rng.random_range(0.0..2.0 * PI);
        let e = Ellipse {
            cu: outer.cu + r * t.cos() * inner.a,
            cv: outer.cv + r * t.sin() * inner.b,
            a: rng.random_range(0.06..0.25),
            b: rng.random_range(0.06..0.25),
            angle: rng.random_range(0.0..PI),
        };
        let level = if rng.random_bool(0.3) {
            -rng.random_range(0.1..0.2)
        } else {
            rng.random_range(0.1..0.45)
        };
        blobs.push((e, level));
    }
    let (gu, gv) = (rng.random_range(-0.15..0.15), rng.random_range(-0.15..0.15));
    let phase: [f64; 4] = std::array::from_fn(|_| rng.random_range(-0.5..0.5));

    let mut values = vec![Complex64::new(0.0, 0.0); size * size];
    let mut object = vec![false; size * size];
    for i in 0..size {
        let v = coord(i, size);
        for j in 0..size {
            let u = coord(j, size);
            if !outer.inside(u, v) {
                continue;
            }
            object[i * size + j] = true;
            let mut m = if inner.inside(u, v) { brain * (1.0 + gu * u + gv * v) } else { 0.9 };
            for (e, level) in &blobs {
                if e.inside(u, v) && inner.inside(u, v) {
                    m += level;
                }
            }
            let m = m.clamp(0.0, 1.0);
            let phi = phase[0] + phase[1] * u + phase[2] * v + phase[3] * u * v;
            values[i * size + j] = Complex64::from_polar(m, phi);
        }
    }
    Phantom {
        x: ComplexTensor::from_complex(&[size, size], &values).expect("square grid"),
        object,
        n_ellipses: 2 + n_inner,
    }
}

/// Gaussian-lobe coil maps around the field of view with linear phase,
/// normalised to unit root-sum-of-squares at every pixel and rotated so that
/// coil 0 is real and non-negative. `[coils, size, size]`.
pub fn synth_coils(coils: usize, size: usize, seed: u64) -> Result<ComplexTensor> {
    if coils == 0 {
        return Err(Error::ConfigInvalid("at least one coil".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset = rng.random_range(0.0..2.0 * PI);
    let specs: Vec<(f64, f64, f64, [f64; 3])> = (0..coils)
        .map(|c| {
            let ang = offset + 2.0 * PI * c as f64 / coils as f64 + rng.random_range(-0.2..0.2);
            let radius = rng.random_range(1.1..1.4);
            let width = rng.random_range(0.7..1.0);
            let phase = [rng.random_range(-PI..PI), rng.random_range(-0.8..0.8), rng.random_range(-0.8..0.8)];
            (radius * ang.cos(), radius * ang.sin(), width, phase)
        })
        .collect();
    let plane = size * size;
    let mut maps = vec![Complex64::new(0.0, 0.0); coils * plane];
    for i in 0..size {
        let v = coord(i, size);
        for j in 0..size {
            let u = coord(j, size);
            let p = i * size + j;
            let mut ss = 0.0;
            for (c, (cu, cv, w, ph)) in specs.iter().enumerate() {
                let d2 = (u - cu).powi(2) + (v - cv).powi(2);
                let z = Complex64::from_polar((-d2 / (2.0 * w * w)).exp(), ph[0] + ph[1] * u + ph[2] * v);
                ss += z.norm_sqr();
                maps[c * plane + p] = z;
            }
            let rss = ss.sqrt();
            let rot = maps[p].conj() / maps[p].norm();
            for c in 0..coils {
                maps[c * plane + p] = maps[c * plane + p] * rot / rss;
            }
        }
    }
    ComplexTensor::from_complex(&[coils, size, size], &maps)
}

/// Default calibration width: half the row budget, between 4 and 8 rows.
pub fn default_acs(h: usize, accel: usize) -> usize {
    (h / accel.max(1) / 2).clamp(4, 8)
}

/// Cartesian row mask in FFT order (row 0 is DC). Centred calibration rows
/// are always kept; the rest of the `round(h / accel)` budget is spread
/// equispaced with jitter over the remaining rows.
pub fn cart_mask(h: usize, accel: usize, acs: usize, seed: u64) -> Result<Vec<bool>> {
    if accel == 0 || h == 0 {
        return Err(Error::RateInfeasible(format!("acceleration {accel} on {h} rows")));
    }
    if accel == 1 {
        return Ok(vec![true; h]);
    }
    let budget = (h as f64 / accel as f64).round() as usize;
    if acs < 4 || acs > budget {
        return Err(Error::RateInfeasible(format!(
            "{acs} calibration rows do not fit a budget of {budget} rows (need 4 <= acs <= budget)"
        )));
    }
    let to_fft = |c: usize| (c + h / 2) % h;
    let start = h / 2 - acs / 2;
    let mut centred = vec![false; h];
    centred[start..start + acs].iter_mut().for_each(|r| *r = true);
    let candidates: Vec<usize> = (0..h).filter(|&c| !centred[c]).collect();
    let rest = budget - acs;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = candidates.len();
    for i in 0..rest {
        let lo = i * m / rest;
        let hi = ((i + 1) * m / rest).max(lo + 1);
        centred[candidates[rng.random_range(lo..hi)]] = true;
    }
    let mut mask = vec![false; h];
    for (c, &on) in centred.iter().enumerate() {
        mask[to_fft(c)] = on;
    }
    Ok(mask)
}
