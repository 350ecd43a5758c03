use std::cell::RefCell;

use crate::tensor::Tensor;

/// Parameters and running statistics for one feature-axis batch
/// normalization site.
///
/// `gamma`/`beta` are learnable; the running statistics are updated in place
/// during training-mode forward passes (interior mutability keeps the
/// forward path `&self`) and consumed in eval mode.
#[derive(Clone)]
pub struct BatchNormParams {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: RefCell<Vec<f64>>,
    pub running_var: RefCell<Vec<f64>>,
    pub epsilon: f64,
    pub momentum: f64,
}

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

impl BatchNormParams {
    /// Fresh site over `features` features: gamma = `gamma_init`, beta = 0,
    /// running mean 0, running variance 1.
    pub fn new(features: usize, gamma_init: f64) -> Self {
        BatchNormParams {
            gamma: Tensor::filled(&[features], gamma_init),
            beta: Tensor::zeros(&[features]),
            running_mean: RefCell::new(vec![0.0; features]),
            running_var: RefCell::new(vec![1.0; features]),
            epsilon: BN_EPSILON,
            momentum: BN_MOMENTUM,
        }
    }

    pub fn features(&self) -> usize {
        self.gamma.len()
    }
}
