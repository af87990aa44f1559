//! Layer trait, trainable parameters, and the ReLU activation.

use ndarray::{Array4, ArrayD};

/// Whether a forward pass uses batch statistics (training) or running
/// statistics (evaluation). Only batch norm distinguishes the two.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A trainable tensor together with its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: ArrayD<f64>,
    pub grad: ArrayD<f64>,
}

impl Param {
    pub fn new(value: ArrayD<f64>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Self { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// A spatial layer: NHWC in, NHWC out.
///
/// `backward` must be called after `forward` on the same input and returns the
/// gradient with respect to that input; parameter gradients accumulate into
/// each [`Param::grad`].
pub trait Layer: std::fmt::Debug {
    fn forward(&mut self, x: Array4<f64>, mode: Mode) -> Array4<f64>;
    fn backward(&mut self, grad: Array4<f64>) -> Array4<f64>;

    /// Visit trainable parameters in a stable order.
    fn visit_params(&mut self, _f: &mut dyn FnMut(&mut Param)) {}

    /// Visit non-trainable state (e.g. batch-norm running statistics).
    fn visit_buffers(&mut self, _f: &mut dyn FnMut(&mut ArrayD<f64>)) {}
}

/// Elementwise ReLU.
#[derive(Debug, Default)]
pub struct Relu {
    cached_output: Option<Array4<f64>>,
}

impl Relu {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Layer for Relu {
    fn forward(&mut self, mut x: Array4<f64>, _mode: Mode) -> Array4<f64> {
        x.mapv_inplace(|v| if v > 0.0 { v } else { 0.0 });
        self.cached_output = Some(x.clone());
        x
    }

    fn backward(&mut self, mut grad: Array4<f64>) -> Array4<f64> {
        let y = self
            .cached_output
            .as_ref()
            .expect("Relu::backward called before forward");
        grad.zip_mut_with(y, |g, &y| {
            if y <= 0.0 {
                *g = 0.0;
            }
        });
        grad
    }
}
