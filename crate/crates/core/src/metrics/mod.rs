//! Reconstruction metrics and the experiment harnesses built on them.

pub mod experiments;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ofdm::Qam;
use crate::tensor::ComplexTensor;

fn check_len(op: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::shape(op, &[a], &[b]));
    }
    Ok(())
}

/// Hard-decision symbol error rate over cells where `data` is true.
pub fn ser(x_hat: &ComplexTensor, x: &ComplexTensor, data: &[bool], qam: &Qam) -> Result<f64> {
    let (errors, total) = symbol_errors(x_hat, x, data, qam)?;
    Ok(if total == 0 { 0.0 } else { errors as f64 / total as f64 })
}

/// `(errors, data cells)` for pooling error rates across frames.
pub fn symbol_errors(x_hat: &ComplexTensor, x: &ComplexTensor, data: &[bool], qam: &Qam) -> Result<(usize, usize)> {
    check_len("ser", x_hat.numel(), x.numel())?;
    check_len("ser mask", data.len(), x.numel())?;
    let mut errors = 0;
    let mut total = 0;
    for (i, _) in data.iter().enumerate().filter(|(_, &d)| d) {
        total += 1;
        if qam.decide(x_hat.get(i)) != qam.decide(x.get(i)) {
            errors += 1;
        }
    }
    Ok((errors, total))
}

/// Error vector magnitude in percent: `100 |X^ - X| / |X|` over data cells.
pub fn evm(x_hat: &ComplexTensor, x: &ComplexTensor, data: &[bool]) -> Result<f64> {
    check_len("evm", x_hat.numel(), x.numel())?;
    check_len("evm mask", data.len(), x.numel())?;
    let (mut num, mut den) = (0.0, 0.0);
    for (i, _) in data.iter().enumerate().filter(|(_, &d)| d) {
        num += (x_hat.get(i) - x.get(i)).norm_sqr();
        den += x.get(i).norm_sqr();
    }
    Ok(100.0 * (num / den).sqrt())
}

/// `|est - truth|^2 / |truth|^2`.
pub fn nmse(est: &[Complex64], truth: &[Complex64]) -> Result<f64> {
    check_len("nmse", est.len(), truth.len())?;
    let num: f64 = est.iter().zip(truth).map(|(a, b)| (a - b).norm_sqr()).sum();
    let den: f64 = truth.iter().map(|b| b.norm_sqr()).sum();
    Ok(num / den)
}

/// NMSE of `|x_hat|` against `|x|`.
pub fn magnitude_nmse_of(x_hat: &ComplexTensor, x: &ComplexTensor) -> Result<f64> {
    let mags: Vec<f64> = x_hat.to_complex_vec().iter().map(|z| z.norm()).collect();
    crate::mri::magnitude_nmse(&mags, x)
}

/// Coefficient of determination of `pred` against `truth`.
pub fn r_squared(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_len("r_squared", pred.len(), truth.len())?;
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let ss_res: f64 = pred.iter().zip(truth).map(|(p, t)| (t - p).powi(2)).sum();
    let ss_tot: f64 = truth.iter().map(|t| (t - mean).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Sample mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl MeanSe {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let se = if n > 1 {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, se, n }
    }

    pub fn lo(&self) -> f64 {
        self.mean - 2.0 * self.se
    }

    pub fn hi(&self) -> f64 {
        self.mean + 2.0 * self.se
    }

    /// True when the ±2 SE interval of `self` lies entirely below that of `other`.
    pub fn clearly_below(&self, other: &MeanSe) -> bool {
        self.hi() < other.lo()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(v: &[Complex64]) -> ComplexTensor {
        ComplexTensor::from_complex(&[v.len()], v).unwrap()
    }

    #[test]
    fn ser_counts_flips_on_data_cells_only() {
        let qam = Qam::new(4).unwrap();
        let pts = qam.constellation();
        let x: Vec<Complex64> = (0..10).map(|i| pts[i % 4]).collect();
        let mut xh = x.clone();
        xh[2] = -xh[2];
        xh[7] = -xh[7];
        let all = vec![true; 10];
        assert_eq!(ser(&grid(&xh), &grid(&x), &all, &qam).unwrap(), 0.2);
        assert_eq!(ser(&grid(&x), &grid(&x), &all, &qam).unwrap(), 0.0);
        let neg: Vec<Complex64> = x.iter().map(|z| -z).collect();
        assert_eq!(ser(&grid(&neg), &grid(&x), &all, &qam).unwrap(), 1.0);
        let mut data = all.clone();
        data[2] = false;
        assert_eq!(symbol_errors(&grid(&xh), &grid(&x), &data, &qam).unwrap(), (1, 9));
    }

    #[test]
    fn evm_and_nmse_values() {
        let x: Vec<Complex64> = (0..6).map(|i| Complex64::new(i as f64 - 2.5, 1.0)).collect();
        let scaled: Vec<Complex64> = x.iter().map(|z| z * 1.1).collect();
        let all = vec![true; 6];
        assert!((evm(&grid(&scaled), &grid(&x), &all).unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(evm(&grid(&x), &grid(&x), &all).unwrap(), 0.0);
        assert_eq!(nmse(&x, &x).unwrap(), 0.0);
        assert_eq!(nmse(&[Complex64::new(0.0, 0.0); 6], &x).unwrap(), 1.0);
        let est: Vec<Complex64> = x.iter().map(|z| z + Complex64::new(0.1, -0.2)).collect();
        let den: f64 = x.iter().map(|z| z.re * z.re + z.im * z.im).sum();
        assert!((nmse(&est, &x).unwrap() - 6.0 * 0.05 / den).abs() < 1e-15);
    }

    #[test]
    fn r_squared_limits() {
        let t = [0.1, -0.3, 0.25, 0.4];
        assert_eq!(r_squared(&t, &t).unwrap(), 1.0);
        let m = t.iter().sum::<f64>() / 4.0;
        assert!(r_squared(&[m; 4], &t).unwrap().abs() < 1e-15);
    }

    #[test]
    fn mean_se_of_known_sample() {
        let s = MeanSe::from_samples(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert!((s.se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert!(MeanSe::from_samples(&[0.0, 0.1]).clearly_below(&MeanSe::from_samples(&[5.0, 5.1])));
    }
}
