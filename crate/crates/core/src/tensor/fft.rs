use std::cell::RefCell;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

pub(crate) fn check_pow2(n: usize) -> Result<()> {
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::NonPowerOfTwo(n));
    }
    Ok(())
}

/// In-place unitary DFT of every contiguous length-`n` row of the planes.
///
/// `inverse` selects the `e^{+j...}` kernel. Both directions scale by `1/sqrt(n)`.
pub fn fft_along_last(re: &mut [f64], im: &mut [f64], n: usize, inverse: bool) -> Result<()> {
    check_pow2(n)?;
    if re.len() % n != 0 || re.len() != im.len() {
        return Err(Error::shape("fft", &[re.len()], &[n]));
    }
    let plan = PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    });
    let scale = 1.0 / (n as f64).sqrt();
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
    for (row_re, row_im) in re.chunks_mut(n).zip(im.chunks_mut(n)) {
        for (b, (r, i)) in buf.iter_mut().zip(row_re.iter().zip(row_im.iter())) {
            *b = Complex64::new(*r, *i);
        }
        plan.process_with_scratch(&mut buf, &mut scratch);
        for (b, (r, i)) in buf.iter().zip(row_re.iter_mut().zip(row_im.iter_mut())) {
            *r = b.re * scale;
            *i = b.im * scale;
        }
    }
    Ok(())
}

/// In-place unitary 2D DFT over the trailing `h x w` axes of the planes.
pub fn fft2_along_last_two(re: &mut [f64], im: &mut [f64], h: usize, w: usize, inverse: bool) -> Result<()> {
    check_pow2(h)?;
    check_pow2(w)?;
    fft_along_last(re, im, w, inverse)?;
    let plan = PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(h)
        } else {
            p.plan_fft_forward(h)
        }
    });
    let scale = 1.0 / (h as f64).sqrt();
    let mut buf = vec![Complex64::new(0.0, 0.0); h];
    let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
    let plane = h * w;
    for (img_re, img_im) in re.chunks_mut(plane).zip(im.chunks_mut(plane)) {
        for col in 0..w {
            for (row, b) in buf.iter_mut().enumerate() {
                *b = Complex64::new(img_re[row * w + col], img_im[row * w + col]);
            }
            plan.process_with_scratch(&mut buf, &mut scratch);
            for (row, b) in buf.iter().enumerate() {
                img_re[row * w + col] = b.re * scale;
                img_im[row * w + col] = b.im * scale;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dft(x: &[Complex64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                let s: Complex64 = x
                    .iter()
                    .enumerate()
                    .map(|(t, v)| {
                        let a = -2.0 * std::f64::consts::PI * (k * t) as f64 / n as f64;
                        v * Complex64::from_polar(1.0, a)
                    })
                    .sum();
                s / (n as f64).sqrt()
            })
            .collect()
    }

    #[test]
    fn delta_maps_to_flat_vector() {
        let n = 8;
        let mut re = vec![0.0; n];
        let mut im = vec![0.0; n];
        re[0] = 1.0;
        fft_along_last(&mut re, &mut im, n, false).unwrap();
        for k in 0..n {
            assert!((re[k] - 1.0 / (n as f64).sqrt()).abs() < 1e-15);
            assert!(im[k].abs() < 1e-15);
        }
    }

    #[test]
    fn length_four_matches_naive_dft() {
        let x = [
            Complex64::new(1.0, -0.5),
            Complex64::new(0.25, 2.0),
            Complex64::new(-1.5, 0.0),
            Complex64::new(0.75, 0.3),
        ];
        let want = naive_dft(&x);
        let mut re: Vec<f64> = x.iter().map(|z| z.re).collect();
        let mut im: Vec<f64> = x.iter().map(|z| z.im).collect();
        fft_along_last(&mut re, &mut im, 4, false).unwrap();
        for k in 0..4 {
            assert!((re[k] - want[k].re).abs() < 1e-13);
            assert!((im[k] - want[k].im).abs() < 1e-13);
        }
    }

    #[test]
    fn rejects_non_power_of_two() {
        let mut re = vec![0.0; 6];
        let mut im = vec![0.0; 6];
        assert!(matches!(fft_along_last(&mut re, &mut im, 6, false), Err(Error::NonPowerOfTwo(6))));
    }
}
