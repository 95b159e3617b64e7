//! Lightweight 1D convolutional estimator over the frequency axis.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ofdm::{FrameConfig, WirelessSample};
use crate::params::{he_uniform, Bound, ParamStore};
use crate::tensor::{ComplexTensor, RealTensor, Tape, Var};

pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    pub layers: usize,
    pub hidden: usize,
    pub kernel: usize,
    /// Bound on |theta_hat| in cycles per frame.
    pub theta_max: f64,
    /// Append the normalised symbol-lag product channels to the input.
    pub lag_features: bool,
    /// Feed the channel trunk with the proxy derotated by `theta_hat`, which
    /// then comes from a separate CFO trunk on the raw proxy.
    pub split_cfo: bool,
    pub cfo_layers: usize,
    pub cfo_hidden: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            hidden: 32,
            kernel: 5,
            theta_max: 1.0,
            lag_features: true,
            split_cfo: true,
            cfo_layers: 2,
            cfo_hidden: 16,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden == 0 || self.kernel % 2 == 0 || !(self.theta_max > 0.0) {
            return Err(Error::ConfigInvalid(
                "estimator needs >= 1 layer, hidden > 0, odd kernel, theta_max > 0".into(),
            ));
        }
        if self.split_cfo && (self.cfo_layers == 0 || self.cfo_hidden == 0) {
            return Err(Error::ConfigInvalid("CFO trunk needs >= 1 layer and hidden > 0".into()));
        }
        Ok(())
    }
}

/// Zero-forcing proxy: `Y / X` on pilot cells, zero elsewhere.
#[derive(Clone, Debug, PartialEq)]
pub struct ProxyFeatures {
    /// `[K, L]`.
    pub v_proxy: ComplexTensor,
    /// Pilot flag per subcarrier, `[K]`.
    pub pilot_subcarriers: Vec<bool>,
}

pub fn zero_forcing_proxy(y: &ComplexTensor, x: &ComplexTensor, pilot_mask: &[bool]) -> ProxyFeatures {
    let (k, l) = (y.shape()[0], y.shape()[1]);
    let mut v = ComplexTensor::zeros(&[k, l]);
    let mut subs = vec![false; k];
    for i in 0..y.numel() {
        if pilot_mask[i] {
            v.set(i, y.get(i) / x.get(i));
            subs[i / l] = true;
        }
    }
    ProxyFeatures {
        v_proxy: v,
        pilot_subcarriers: subs,
    }
}

impl ProxyFeatures {
    pub fn from_sample(s: &WirelessSample) -> Self {
        zero_forcing_proxy(&s.y, &s.x, &s.pilot_mask)
    }

    /// Network input `[2L + 1, K]`: re and im of every symbol, then the mask.
    /// With `lag` two more channels follow: re and im of
    /// `sum_l V[k, l+1] conj(V[k, l])`, divided by its mean modulus over the
    /// pilot subcarriers.
    pub fn input_tensor(&self, lag: bool) -> RealTensor {
        let (k, l) = (self.v_proxy.shape()[0], self.v_proxy.shape()[1]);
        let rows = 2 * l + 1 + if lag { 2 } else { 0 };
        let mut data = vec![0.0; rows * k];
        for kk in 0..k {
            for s in 0..l {
                let z = self.v_proxy.get(kk * l + s);
                data[(2 * s) * k + kk] = z.re;
                data[(2 * s + 1) * k + kk] = z.im;
            }
            data[2 * l * k + kk] = if self.pilot_subcarriers[kk] { 1.0 } else { 0.0 };
        }
        if lag {
            let z: Vec<Complex64> = (0..k)
                .map(|kk| {
                    (1..l)
                        .map(|s| self.v_proxy.get(kk * l + s) * self.v_proxy.get(kk * l + s - 1).conj())
                        .sum()
                })
                .collect();
            let n = self.pilot_subcarriers.iter().filter(|&&p| p).count().max(1);
            let scale: f64 = z.iter().map(|v| v.norm()).sum::<f64>() / n as f64;
            let inv = if scale > 0.0 { 1.0 / scale } else { 0.0 };
            for (kk, v) in z.iter().enumerate() {
                data[(2 * l + 1) * k + kk] = v.re * inv;
                data[(2 * l + 2) * k + kk] = v.im * inv;
            }
        }
        RealTensor::new(vec![rows, k], data).expect("sized above")
    }
}

pub struct EstimatorOutputW<'t> {
    /// Complex `[K]`.
    pub h_prior: Var<'t>,
    /// Complex `[K]`.
    pub h_scale: Var<'t>,
    /// Real scalar, cycles per frame.
    pub theta: Var<'t>,
    /// Real scalar in (0, 1).
    pub lambda: Var<'t>,
}

/// Plain-value copy of the estimator outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimatesW {
    pub h_prior: Vec<Complex64>,
    pub h_scale: Vec<Complex64>,
    pub theta: f64,
    pub lambda: f64,
}

impl EstimatorOutputW<'_> {
    pub fn values(&self) -> EstimatesW {
        EstimatesW {
            h_prior: self.h_prior.complex().to_complex_vec(),
            h_scale: self.h_scale.complex().to_complex_vec(),
            theta: self.theta.item(),
            lambda: self.lambda.item(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WirelessEstimator {
    pub config: EstimatorConfig,
    pub frame: FrameConfig,
}

impl WirelessEstimator {
    pub fn new(config: EstimatorConfig, frame: FrameConfig) -> Result<Self> {
        config.validate()?;
        frame.validate()?;
        Ok(Self { config, frame })
    }

    /// Channels of the raw-proxy input.
    pub fn input_channels(&self) -> usize {
        2 * self.frame.l + 1 + if self.config.lag_features { 2 } else { 0 }
    }

    fn trunk_params(p: &mut ParamStore, prefix: &str, layers: usize, hidden: usize, mut cin: usize, kernel: usize, rng: &mut ChaCha8Rng) {
        for i in 0..layers {
            p.push(
                format!("{prefix}.{i}.weight"),
                he_uniform(&[hidden, cin, kernel], cin * kernel, rng),
            );
            p.push(format!("{prefix}.{i}.bias"), RealTensor::zeros(&[hidden]));
            cin = hidden;
        }
    }

    pub fn init_params(&self, seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = &self.config;
        let mut p = ParamStore::new();
        let trunk_in = if c.split_cfo { 2 * self.frame.l + 1 } else { self.input_channels() };
        Self::trunk_params(&mut p, "trunk", c.layers, c.hidden, trunk_in, c.kernel, &mut rng);
        if c.split_cfo {
            Self::trunk_params(
                &mut p,
                "cfo_trunk",
                c.cfo_layers,
                c.cfo_hidden,
                self.input_channels(),
                c.kernel,
                &mut rng,
            );
        }
        p.push("head_prior.weight", he_uniform(&[2, c.hidden, 1], c.hidden, &mut rng));
        p.push("head_prior.bias", RealTensor::zeros(&[2]));
        p.push("head_scale.weight", he_uniform(&[2, c.hidden, 1], c.hidden, &mut rng));
        // H_scale starts near 1 + 0j.
        p.push("head_scale.bias", RealTensor::from_vec(vec![1.0, 0.0]));
        let theta_in = if c.split_cfo { c.cfo_hidden } else { c.hidden };
        p.push("head_theta.weight", RealTensor::zeros(&[1, theta_in]));
        p.push("head_theta.bias", RealTensor::zeros(&[1]));
        p.push("head_gate.weight", RealTensor::zeros(&[1, c.hidden]));
        p.push("head_gate.bias", RealTensor::zeros(&[1]));
        p
    }

    /// A parameter set with every entry zero.
    pub fn zero_params(&self) -> ParamStore {
        let mut p = self.init_params(0);
        for t in p.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        p
    }

    fn trunk<'t>(&self, params: &Bound<'t>, prefix: &str, layers: usize, mut h: Var<'t>) -> Result<Var<'t>> {
        for i in 0..layers {
            h = h
                .conv1d(
                    params.get(&format!("{prefix}.{i}.weight"))?,
                    params.get(&format!("{prefix}.{i}.bias"))?,
                )?
                .leaky_relu(LEAKY_SLOPE)?;
        }
        Ok(h)
    }

    fn pooled_head<'t>(params: &Bound<'t>, h: Var<'t>, name: &str) -> Result<Var<'t>> {
        let width = h.shape()[0];
        let pooled = h.mean_axis(1)?.reshape(&[width, 1])?;
        params
            .get(&format!("{name}.weight"))?
            .matmul(pooled)?
            .reshape(&[])?
            .add(params.get(&format!("{name}.bias"))?.reshape(&[])?)
    }

    /// Symbol rows of `input` multiplied by `exp(-j 2 pi theta l / L)`, plus
    /// the mask row: `[2L + 1, K]` (all re rows, then all im rows).
    fn derotated_input<'t>(&self, tape: &'t Tape, input: &RealTensor, theta: Var<'t>) -> Result<Var<'t>> {
        let (k, l) = (self.frame.k, self.frame.l);
        let rows = |parity: usize| -> Result<RealTensor> {
            let d = input.data();
            let data = (0..l)
                .flat_map(|s| d[(2 * s + parity) * k..(2 * s + parity + 1) * k].iter().copied())
                .collect();
            RealTensor::new(vec![l, k], data)
        };
        let (a, b) = (tape.constant(rows(0)?), tape.constant(rows(1)?));
        let c = RealTensor::from_vec((0..l).map(|s| -2.0 * std::f64::consts::PI * s as f64 / l as f64).collect());
        let e = tape.constant(c).mul(theta)?.exp_i()?;
        let cos = e.re()?.reshape(&[l, 1])?.expand(&[l, k])?;
        let sin = e.im()?.reshape(&[l, 1])?.expand(&[l, k])?;
        let re = a.mul(cos)?.sub(b.mul(sin)?)?;
        let im = a.mul(sin)?.add(b.mul(cos)?)?;
        let mask = RealTensor::new(vec![1, k], input.data()[2 * l * k..(2 * l + 1) * k].to_vec())?;
        tape.concat(&[re, im, tape.constant(mask)], 0)
    }

    pub fn forward<'t>(&self, tape: &'t Tape, params: &Bound<'t>, features: &ProxyFeatures) -> Result<EstimatorOutputW<'t>> {
        self.forward_with_offset(tape, params, features, 0.0)
    }

    /// Forward pass in which the channel trunk sees the proxy derotated by
    /// `theta_hat + delta_theta` (split mode). The returned `theta` excludes
    /// the offset.
    pub fn forward_with_offset<'t>(
        &self,
        tape: &'t Tape,
        params: &Bound<'t>,
        features: &ProxyFeatures,
        delta_theta: f64,
    ) -> Result<EstimatorOutputW<'t>> {
        let input = features.input_tensor(self.config.lag_features);
        if input.shape() != [self.input_channels(), self.frame.k] {
            return Err(Error::shape(
                "estimator input",
                input.shape(),
                &[self.input_channels(), self.frame.k],
            ));
        }
        let c = &self.config;
        let k = self.frame.k;
        let squash = |v: Var<'t>| -> Result<Var<'t>> { v.tanh()?.scale(c.theta_max) };
        let (h, theta) = if c.split_cfo {
            let g = self.trunk(params, "cfo_trunk", c.cfo_layers, tape.constant(input.clone()))?;
            let theta = squash(Self::pooled_head(params, g, "head_theta")?)?;
            let shifted = if delta_theta == 0.0 {
                theta
            } else {
                theta.add_scalar(delta_theta)?
            };
            let x = self.derotated_input(tape, &input, shifted)?;
            (self.trunk(params, "trunk", c.layers, x)?, theta)
        } else {
            let h = self.trunk(params, "trunk", c.layers, tape.constant(input))?;
            let theta = squash(Self::pooled_head(params, h, "head_theta")?)?;
            (h, theta)
        };
        let to_complex = |v: Var<'t>| -> Result<Var<'t>> {
            let re = v.narrow(0, 0, 1)?.reshape(&[k])?;
            let im = v.narrow(0, 1, 1)?.reshape(&[k])?;
            tape.complex(re, im)
        };
        let h_prior = to_complex(h.conv1d(params.get("head_prior.weight")?, params.get("head_prior.bias")?)?)?;
        let h_scale = to_complex(h.conv1d(params.get("head_scale.weight")?, params.get("head_scale.bias")?)?)?;
        let lambda = Self::pooled_head(params, h, "head_gate")?.sigmoid()?;
        Ok(EstimatorOutputW {
            h_prior,
            h_scale,
            theta,
            lambda,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ofdm::{generate_dataset, DatasetConfig};
    use crate::tensor::gradcheck::check_gradients;
    use crate::tensor::Value;

    fn tiny() -> (WirelessEstimator, Vec<WirelessSample>) {
        let frame = FrameConfig {
            k: 16,
            l: 4,
            ..FrameConfig::default()
        };
        let ds = generate_dataset(&DatasetConfig {
            frame: frame.clone(),
            n_frames: 2,
            seed: 3,
            ..DatasetConfig::default()
        })
        .unwrap();
        let est = WirelessEstimator::new(
            EstimatorConfig {
                layers: 2,
                hidden: 4,
                kernel: 3,
                theta_max: 1.0,
                ..EstimatorConfig::default()
            },
            frame,
        )
        .unwrap();
        (est, ds)
    }

    #[test]
    fn zeroed_params_give_neutral_outputs() {
        let (est, ds) = tiny();
        let p = est.zero_params();
        let tape = Tape::new();
        let out = est
            .forward(&tape, &p.bind(&tape, false), &ProxyFeatures::from_sample(&ds[0]))
            .unwrap();
        let v = out.values();
        assert!(v.h_prior.iter().all(|z| z.norm() == 0.0));
        assert!(v.h_scale.iter().all(|z| z.norm() == 0.0));
        assert_eq!(v.theta, 0.0);
        assert_eq!(v.lambda, 0.5);
        assert_eq!(v.h_prior.len(), 16);
    }

    #[test]
    fn fresh_init_starts_at_zero_cfo_and_half_gate() {
        let (est, ds) = tiny();
        let p = est.init_params(9);
        assert_eq!(p, est.init_params(9));
        let tape = Tape::new();
        let out = est
            .forward(&tape, &p.bind(&tape, false), &ProxyFeatures::from_sample(&ds[1]))
            .unwrap();
        assert_eq!(out.theta.item(), 0.0);
        assert_eq!(out.lambda.item(), 0.5);
    }

    #[test]
    fn proxy_equals_channel_for_clean_frames() {
        let frame = FrameConfig::default();
        let ds = generate_dataset(&DatasetConfig {
            n_frames: 1,
            noiseless: true,
            cfo: [0.0, 0.0],
            ..DatasetConfig::default()
        })
        .unwrap();
        let s = &ds[0];
        let h = &s.labels(&crate::guard::LabelGuard::open()).unwrap().h;
        let p = ProxyFeatures::from_sample(s);
        for i in 0..s.pilot_mask.len() {
            let v = p.v_proxy.get(i);
            if s.pilot_mask[i] {
                assert!((v - h[i / frame.l]).norm() < 1e-12);
            } else {
                assert_eq!(v.norm(), 0.0);
            }
        }
        let zero = zero_forcing_proxy(&ComplexTensor::zeros(&[64, 14]), &s.x, &s.pilot_mask);
        assert!(zero.v_proxy.to_complex_vec().iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn proxy_phase_ramp_under_cfo() {
        let ds = generate_dataset(&DatasetConfig {
            n_frames: 1,
            noiseless: true,
            cfo: [0.3, 0.3],
            ..DatasetConfig::default()
        })
        .unwrap();
        let s = &ds[0];
        let l = s.l();
        let p = ProxyFeatures::from_sample(s);
        let slope = 2.0 * std::f64::consts::PI * 0.3 / l as f64;
        for sym in 1..l {
            let ratio = p.v_proxy.get(sym) / p.v_proxy.get(sym - 1);
            assert!((ratio.arg() - slope).abs() < 1e-12);
        }
    }

    #[test]
    fn output_gradients_match_finite_differences() {
        let (est, ds) = tiny();
        let params = est.init_params(4);
        // Give the scalar heads non-zero weights so their paths are exercised.
        let mut params = params;
        for name in ["head_theta.weight", "head_gate.weight"] {
            for (i, v) in params.get_mut(name).unwrap().data_mut().iter_mut().enumerate() {
                *v = 0.1 * (i as f64 + 1.0);
            }
        }
        // Off-comb inputs are zero, so zero biases would sit on the kink.
        for name in params.names().to_vec() {
            if name.contains("trunk.") && name.ends_with(".bias") {
                for (i, v) in params.get_mut(&name).unwrap().data_mut().iter_mut().enumerate() {
                    *v = 0.05 + 0.01 * i as f64;
                }
            }
        }
        let feats = ProxyFeatures::from_sample(&ds[0]);
        let names = params.names().to_vec();
        let inputs: Vec<Value> = params.tensors().iter().cloned().map(Value::from).collect();
        let report = check_gradients(
            |tape, vars| {
                let bound = crate::params::Bound::from_vars(vars.to_vec(), &names);
                let out = est.forward(tape, &bound, &feats)?;
                let w = tape.constant(ComplexTensor::from_parts(
                    &[16],
                    (0..16).map(|i| 0.1 * i as f64).collect(),
                    vec![0.3; 16],
                )?);
                let a = out.h_prior.mul(w)?.re()?.sum()?;
                let b = out.h_scale.mul(w)?.im()?.sum()?;
                a.add(b)?.add(out.theta.scale(2.0)?)?.add(out.lambda.scale(-3.0)?)
            },
            &inputs,
            1e-6,
        )
        .unwrap();
        assert!(report.max_rel_error() < 1e-4, "{:?}", report.rel_errors);
    }
}
