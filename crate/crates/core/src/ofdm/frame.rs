use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{ChannelRealization, FrameConfig, Qam};
use crate::error::Result;
use crate::tensor::{fft_along_last, ComplexTensor};

/// Random data symbols with unit-modulus QPSK pilots on the pilot comb.
/// Returns the `[K, L]` grid and its pilot mask.
pub fn build_frame(cfg: &FrameConfig, rng: &mut impl Rng) -> Result<(ComplexTensor, Vec<bool>)> {
    cfg.validate()?;
    let qam = Qam::new(cfg.qam_order)?;
    let pilot = Qam::new(4)?;
    let mask = cfg.pilot_mask();
    let symbols: Vec<Complex64> = mask
        .iter()
        .map(|&is_pilot| {
            if is_pilot {
                pilot.point(rng.random_range(0..4))
            } else {
                qam.point(rng.random_range(0..cfg.qam_order))
            }
        })
        .collect();
    Ok((ComplexTensor::from_complex(&[cfg.k, cfg.l], &symbols)?, mask))
}

/// Grid-mode channel: `Y0[k, l] = H[k] X[k, l]`.
pub fn apply_channel(x: &ComplexTensor, h: &[Complex64]) -> ComplexTensor {
    let l = x.shape()[1];
    let mut y = x.clone();
    for i in 0..x.numel() {
        y.set(i, h[i / l] * x.get(i));
    }
    y
}

/// Grid-mode CFO: symbol `l` rotated by `exp(+j 2 pi theta l / L)`.
pub fn apply_cfo(y: &ComplexTensor, theta: f64) -> ComplexTensor {
    rotate_symbols(y, theta)
}

/// Inverse of [`apply_cfo`].
pub fn derotate_grid(y: &ComplexTensor, theta: f64) -> ComplexTensor {
    rotate_symbols(y, -theta)
}

fn rotate_symbols(y: &ComplexTensor, theta: f64) -> ComplexTensor {
    let l = y.shape()[1];
    let mut out = y.clone();
    for i in 0..y.numel() {
        let s = (i % l) as f64;
        out.set(i, y.get(i) * Complex64::from_polar(1.0, 2.0 * PI * theta * s / l as f64));
    }
    out
}

/// Exact time-domain link: unitary IFFT with cyclic prefix, convolution with
/// the sampled channel impulse response, per-sample CFO
/// `exp(+j 2 pi theta n / (L (N + CP)))`, CP removal and FFT.
pub fn apply_channel_time_domain(cfg: &FrameConfig, x: &ComplexTensor, ch: &ChannelRealization, theta: f64) -> Result<ComplexTensor> {
    let (n, cp, l, k_used) = (cfg.n_fft, cfg.cp, cfg.l, cfg.k);
    let sym_len = n + cp;
    let total = l * sym_len;

    // Transmit samples.
    let mut tx = vec![Complex64::new(0.0, 0.0); total];
    let mut re = vec![0.0; n];
    let mut im = vec![0.0; n];
    for s in 0..l {
        re.iter_mut().for_each(|v| *v = 0.0);
        im.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..k_used {
            let z = x.get(k * l + s);
            let b = cfg.fft_bin(k);
            re[b] = z.re;
            im[b] = z.im;
        }
        fft_along_last(&mut re, &mut im, n, true)?;
        let base = s * sym_len;
        for t in 0..sym_len {
            let src = (t + n - cp) % n;
            tx[base + t] = Complex64::new(re[src], im[src]);
        }
    }

    // Impulse response on the sample grid, from the response at every bin.
    let mut hr = vec![0.0; n];
    let mut hi = vec![0.0; n];
    for b in 0..n {
        let signed = if b < n / 2 { b as f64 } else { b as f64 - n as f64 };
        let z = super::tap_response(&ch.taps, &ch.delays_s, signed * cfg.subcarrier_spacing_hz);
        hr[b] = z.re;
        hi[b] = z.im;
    }
    fft_along_last(&mut hr, &mut hi, n, true)?;
    let scale = 1.0 / (n as f64).sqrt();
    let taps: Vec<(isize, Complex64)> = (0..n)
        .filter_map(|m| {
            let g = Complex64::new(hr[m], hi[m]) * scale;
            let lag = if m <= n / 2 { m as isize } else { m as isize - n as isize };
            (g.norm() > 1e-14).then_some((lag, g))
        })
        .collect();

    let mut rx = vec![Complex64::new(0.0, 0.0); total];
    for (t, r) in rx.iter_mut().enumerate() {
        let mut acc = Complex64::new(0.0, 0.0);
        for &(lag, g) in &taps {
            let src = t as isize - lag;
            if src >= 0 && (src as usize) < total {
                acc += g * tx[src as usize];
            }
        }
        let phase = 2.0 * PI * theta * t as f64 / total as f64;
        *r = acc * Complex64::from_polar(1.0, phase);
    }

    let mut y = ComplexTensor::zeros(&[k_used, l]);
    for s in 0..l {
        let base = s * sym_len + cp;
        for t in 0..n {
            re[t] = rx[base + t].re;
            im[t] = rx[base + t].im;
        }
        fft_along_last(&mut re, &mut im, n, false)?;
        for k in 0..k_used {
            let b = cfg.fft_bin(k);
            y.set(k * l + s, Complex64::new(re[b], im[b]));
        }
    }
    Ok(y)
}

/// Circular complex Gaussian noise of variance `10^(-snr/10)` per cell.
/// An infinite SNR leaves the grid untouched.
pub fn add_awgn(y: &ComplexTensor, snr_db: f64, rng: &mut impl Rng) -> ComplexTensor {
    if snr_db == f64::INFINITY {
        return y.clone();
    }
    let sigma = (10f64.powf(-snr_db / 10.0) / 2.0).sqrt();
    let mut out = y.clone();
    for i in 0..y.numel() {
        let nr: f64 = StandardNormal.sample(rng);
        let ni: f64 = StandardNormal.sample(rng);
        out.set(i, y.get(i) + Complex64::new(nr, ni) * sigma);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ofdm::{draw_channel, frequency_response, ChannelProfile};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> FrameConfig {
        FrameConfig {
            k: 8,
            l: 4,
            pilot_spacing: 4,
            n_fft: 16,
            cp: 4,
            ..FrameConfig::default()
        }
    }

    #[test]
    fn pilot_layout_on_small_grid() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (x, mask) = build_frame(&cfg, &mut rng).unwrap();
        assert_eq!(cfg.pilot_subcarriers(), vec![0, 4]);
        for s in 0..cfg.l {
            let count = (0..cfg.k).filter(|&k| mask[k * cfg.l + s]).count();
            assert_eq!(count, 2);
        }
        for (i, &p) in mask.iter().enumerate() {
            if p {
                assert!((x.get(i).norm() - 1.0).abs() < 1e-14);
            }
        }
        let frac = mask.iter().filter(|&&p| p).count() as f64 / mask.len() as f64;
        assert_eq!(frac, 1.0 / cfg.pilot_spacing as f64);
    }

    #[test]
    fn data_cells_have_unit_power() {
        let cfg = FrameConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (mut e, mut n) = (0.0, 0usize);
        for _ in 0..64 {
            let (x, mask) = build_frame(&cfg, &mut rng).unwrap();
            for (i, &p) in mask.iter().enumerate() {
                if !p {
                    e += x.get(i).norm_sqr();
                    n += 1;
                }
            }
        }
        assert!((e / n as f64 - 1.0).abs() < 1e-2);
    }

    #[test]
    fn channel_identity_and_rotation() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (x, _) = build_frame(&cfg, &mut rng).unwrap();
        let ones = vec![Complex64::new(1.0, 0.0); cfg.k];
        assert_eq!(apply_channel(&x, &ones), x);
        let rot = vec![Complex64::from_polar(1.0, 0.7); cfg.k];
        let y = apply_channel(&x, &rot);
        for i in 0..x.numel() {
            assert!((y.get(i) - x.get(i) * Complex64::from_polar(1.0, 0.7)).norm() < 1e-15);
        }
    }

    #[test]
    fn cfo_quarter_frame_and_inverse_pair() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (x, _) = build_frame(&cfg, &mut rng).unwrap();
        assert_eq!(apply_cfo(&x, 0.0), x);
        let theta = cfg.l as f64 / 4.0;
        let y = apply_cfo(&x, theta);
        let j = Complex64::new(0.0, 1.0);
        for k in 0..cfg.k {
            assert!((y.get(k * cfg.l + 1) - j * x.get(k * cfg.l + 1)).norm() < 1e-14);
        }
        let back = derotate_grid(&apply_cfo(&x, 0.37), 0.37);
        for i in 0..x.numel() {
            assert!((back.get(i) - x.get(i)).norm() < 1e-12);
        }
    }

    #[test]
    fn time_domain_matches_grid_for_on_grid_delays() {
        let cfg = FrameConfig::default();
        let ts = 1.0 / cfg.sample_rate_hz();
        let profile = ChannelProfile::custom(
            "grid",
            vec![0.0, ts * 1e9, 3.0 * ts * 1e9, 7.0 * ts * 1e9],
            vec![0.0, -2.0, -4.0, -9.0],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ch = draw_channel(&profile, &cfg, 0.0, &mut rng).unwrap();
        assert_eq!(ch.h, frequency_response(&cfg, &ch.taps, &ch.delays_s));
        let (x, _) = build_frame(&cfg, &mut rng).unwrap();
        let grid = apply_channel(&x, &ch.h);
        let td = apply_channel_time_domain(&cfg, &x, &ch, 0.0).unwrap();
        for i in 0..x.numel() {
            assert!((grid.get(i) - td.get(i)).norm() < 1e-10, "cell {i}");
        }
    }

    #[test]
    fn awgn_statistics() {
        let y = ComplexTensor::zeros(&[100_000]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noisy = add_awgn(&y, 10.0, &mut rng);
        let n = noisy.numel() as f64;
        let mean: Complex64 = noisy.to_complex_vec().iter().sum::<Complex64>() / n;
        let var: f64 = noisy.to_complex_vec().iter().map(|z| z.norm_sqr()).sum::<f64>() / n;
        // Var of |z|^2 for CN(0, s) is s^2, so the sample-mean SE is 0.1/sqrt(n).
        let se = 0.1 / n.sqrt();
        assert!((var - 0.1).abs() < 3.0 * se, "{var}");
        assert!(mean.norm() < 3.0 * (0.1 / n).sqrt());
        assert_eq!(add_awgn(&noisy, f64::INFINITY, &mut rng), noisy);
    }
}
