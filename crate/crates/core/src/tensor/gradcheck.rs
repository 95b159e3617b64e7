//! Central finite-difference checks for the autodiff engine.

use super::{Tape, Value, Var};
use crate::error::Result;

pub const DEFAULT_STEP: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradReport {
    /// Norm-relative error per input: `|g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-12)`.
    pub rel_errors: Vec<f64>,
    pub analytic: Vec<Vec<f64>>,
    pub numeric: Vec<Vec<f64>>,
}

impl GradReport {
    pub fn max_rel_error(&self) -> f64 {
        self.rel_errors.iter().cloned().fold(0.0, f64::max)
    }
}

fn eval<F>(f: &F, inputs: &[Value]) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|v| tape.constant(v.clone())).collect();
    Ok(f(&tape, &vars)?.item())
}

/// Compares reverse-mode gradients of the real scalar `f(inputs)` with
/// central differences over every real coordinate of every input.
pub fn check_gradients<F>(f: F, inputs: &[Value], step: f64) -> Result<GradReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|v| tape.param(v.clone())).collect();
    let loss = f(&tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, x)| v.grad().unwrap_or_else(|| x.zeros_like()).coords())
        .collect();

    let mut numeric = Vec::with_capacity(inputs.len());
    for k in 0..inputs.len() {
        let dim = inputs[k].coords().len();
        let mut g = vec![0.0; dim];
        for (i, gi) in g.iter_mut().enumerate() {
            let mut plus = inputs.to_vec();
            *plus[k].coord_mut(i) += step;
            let mut minus = inputs.to_vec();
            *minus[k].coord_mut(i) -= step;
            *gi = (eval(&f, &plus)? - eval(&f, &minus)?) / (2.0 * step);
        }
        numeric.push(g);
    }

    let rel_errors = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| {
            let diff: f64 = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nn = n.iter().map(|x| x * x).sum::<f64>().sqrt();
            diff / na.max(nn).max(1e-12)
        })
        .collect();
    Ok(GradReport {
        rel_errors,
        analytic,
        numeric,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{ComplexTensor, RealTensor};

    fn cplx(shape: &[usize], seed: u64) -> Value {
        let n: usize = shape.iter().product();
        let mut s = seed;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        let re = (0..n).map(|_| next()).collect();
        let im = (0..n).map(|_| next()).collect();
        ComplexTensor::from_parts(shape, re, im).unwrap().into()
    }

    fn real(shape: &[usize], seed: u64) -> Value {
        match cplx(shape, seed) {
            Value::Complex(c) => Value::Real(c.re().clone()),
            v => v,
        }
    }

    fn assert_ok(r: GradReport, what: &str) {
        assert!(r.max_rel_error() < 1e-6, "{what}: {:?}", r.rel_errors);
    }

    // Weighted sum of the real coordinates, so that no gradient is trivially symmetric.
    fn probe<'t>(v: Var<'t>) -> Result<Var<'t>> {
        let tape = v.tape();
        let n = v.numel();
        let shape = v.shape();
        let wr: Vec<f64> = (0..n).map(|i| 0.3 + 0.17 * i as f64).collect();
        let wi: Vec<f64> = (0..n).map(|i| -0.5 + 0.11 * i as f64).collect();
        if v.is_complex() {
            let w = tape.constant(ComplexTensor::from_parts(&shape, wr, wi)?);
            v.mul(w)?.re()?.sum()
        } else {
            let w = tape.constant(RealTensor::new(shape, wr)?);
            v.mul(w)?.sum()
        }
    }

    #[test]
    fn complex_arithmetic_gradients() {
        let inputs = [cplx(&[4], 1), cplx(&[4], 2)];
        assert_ok(
            check_gradients(|_, v| probe(v[0].add(v[1])?), &inputs, DEFAULT_STEP).unwrap(),
            "add",
        );
        assert_ok(
            check_gradients(|_, v| probe(v[0].sub(v[1])?), &inputs, DEFAULT_STEP).unwrap(),
            "sub",
        );
        assert_ok(
            check_gradients(|_, v| probe(v[0].mul(v[1])?), &inputs, DEFAULT_STEP).unwrap(),
            "mul",
        );
        assert_ok(
            check_gradients(|_, v| probe(v[0].div(v[1])?), &inputs, DEFAULT_STEP).unwrap(),
            "div",
        );
        assert_ok(
            check_gradients(|_, v| probe(v[0].conj()?.neg()?), &inputs, DEFAULT_STEP).unwrap(),
            "conj",
        );
        assert_ok(check_gradients(|_, v| v[0].abs()?.sum(), &inputs, DEFAULT_STEP).unwrap(), "abs");
        assert_ok(
            check_gradients(|_, v| probe(v[0].abs_sq()?), &inputs, DEFAULT_STEP).unwrap(),
            "abs_sq",
        );
        assert_ok(
            check_gradients(|_, v| probe(v[0].floor_modulus(0.3)?), &inputs, DEFAULT_STEP).unwrap(),
            "floor",
        );
    }

    #[test]
    fn mixed_real_complex_and_scalar_broadcast() {
        let inputs = [real(&[5], 3), cplx(&[5], 4), real(&[], 5), cplx(&[], 6)];
        assert_ok(
            check_gradients(|_, v| probe(v[0].mul(v[1])?), &inputs, DEFAULT_STEP).unwrap(),
            "real*complex",
        );
        assert_ok(
            check_gradients(|_, v| probe(v[1].div(v[0].add_scalar(2.0)?)?), &inputs, DEFAULT_STEP).unwrap(),
            "complex/real",
        );
        assert_ok(
            check_gradients(|_, v| probe(v[1].mul(v[2])?), &inputs, DEFAULT_STEP).unwrap(),
            "scalar real",
        );
        assert_ok(
            check_gradients(|_, v| probe(v[1].sub(v[3])?.mul(v[3])?), &inputs, DEFAULT_STEP).unwrap(),
            "scalar complex",
        );
        assert_ok(
            check_gradients(|t, v| probe(t.complex(v[0], v[0].exp()?)?), &inputs, DEFAULT_STEP).unwrap(),
            "make complex",
        );
        assert_ok(
            check_gradients(|_, v| probe(v[0].exp_i()?), &inputs, DEFAULT_STEP).unwrap(),
            "exp_i",
        );
        assert_ok(check_gradients(|_, v| probe(v[1].im()?), &inputs, DEFAULT_STEP).unwrap(), "im");
    }

    #[test]
    fn nonlinearity_gradients() {
        let inputs = [real(&[6], 7)];
        for kind in [
            crate::tensor::UnaryKind::LeakyRelu(0.01),
            crate::tensor::UnaryKind::Sigmoid,
            crate::tensor::UnaryKind::Softplus,
            crate::tensor::UnaryKind::Tanh,
            crate::tensor::UnaryKind::Exp,
        ] {
            assert_ok(
                check_gradients(|_, v| probe(v[0].unary(kind)?), &inputs, DEFAULT_STEP).unwrap(),
                "unary",
            );
        }
        let pos = [real(&[6], 8)];
        assert_ok(
            check_gradients(|_, v| probe(v[0].abs_sq()?.add_scalar(0.5)?.sqrt()?), &pos, DEFAULT_STEP).unwrap(),
            "sqrt",
        );
    }

    #[test]
    fn structural_gradients() {
        let inputs = [cplx(&[3, 4], 9), real(&[3, 1], 10)];
        assert_ok(
            check_gradients(|_, v| probe(v[0].sum_axis(0)?), &inputs, DEFAULT_STEP).unwrap(),
            "sum_axis0",
        );
        assert_ok(
            check_gradients(|_, v| probe(v[0].mean_axis(1)?), &inputs, DEFAULT_STEP).unwrap(),
            "mean_axis1",
        );
        assert_ok(
            check_gradients(|_, v| probe(v[1].expand(&[3, 4])?.mul(v[0])?), &inputs, DEFAULT_STEP).unwrap(),
            "expand",
        );
        assert_ok(
            check_gradients(|_, v| probe(v[0].reshape(&[12])?), &inputs, DEFAULT_STEP).unwrap(),
            "reshape",
        );
        assert_ok(
            check_gradients(|_, v| probe(v[0].narrow(1, 1, 2)?), &inputs, DEFAULT_STEP).unwrap(),
            "narrow",
        );
        assert_ok(
            check_gradients(|t, v| probe(t.concat(&[v[0], v[0].narrow(1, 0, 1)?], 1)?), &inputs, DEFAULT_STEP).unwrap(),
            "concat",
        );
        let mm = [real(&[2, 3], 11), cplx(&[3, 4], 12)];
        assert_ok(
            check_gradients(|_, v| probe(v[0].matmul(v[1])?), &mm, DEFAULT_STEP).unwrap(),
            "matmul",
        );
    }

    #[test]
    fn fft_gradients() {
        let inputs = [cplx(&[2, 8], 13), cplx(&[2, 4, 8], 14)];
        assert_ok(check_gradients(|_, v| probe(v[0].fft()?), &inputs, DEFAULT_STEP).unwrap(), "fft");
        assert_ok(check_gradients(|_, v| probe(v[0].ifft()?), &inputs, DEFAULT_STEP).unwrap(), "ifft");
        assert_ok(check_gradients(|_, v| probe(v[1].fft2()?), &inputs, DEFAULT_STEP).unwrap(), "fft2");
        assert_ok(
            check_gradients(|_, v| probe(v[1].ifft2()?), &inputs, DEFAULT_STEP).unwrap(),
            "ifft2",
        );
    }

    #[test]
    fn convolution_gradients() {
        let c1 = [real(&[3, 7], 15), real(&[2, 3, 5], 16), real(&[2], 17)];
        assert_ok(
            check_gradients(|_, v| probe(v[0].conv1d(v[1], v[2])?), &c1, DEFAULT_STEP).unwrap(),
            "conv1d",
        );
        for stride in [1, 2] {
            let c2 = [real(&[2, 6, 5], 18), real(&[3, 2, 3, 3], 19), real(&[3], 20)];
            assert_ok(
                check_gradients(|_, v| probe(v[0].conv2d(v[1], v[2], stride)?), &c2, DEFAULT_STEP).unwrap(),
                "conv2d",
            );
        }
        let up = [real(&[2, 3, 2], 21)];
        assert_ok(
            check_gradients(|_, v| probe(v[0].upsample2()?), &up, DEFAULT_STEP).unwrap(),
            "upsample2",
        );
    }
}
