//! Wireless estimator and the fixed inverse operator around it.

mod estimator;
mod inverse;

pub use estimator::{zero_forcing_proxy, EstimatesW, EstimatorConfig, EstimatorOutputW, ProxyFeatures, WirelessEstimator, LEAKY_SLOPE};
pub use inverse::{build_kernel, equalize, equalize_floored, GaussianKernel, PeilRecon, ReconResultW, WirelessOperator};
