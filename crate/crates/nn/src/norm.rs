//! Batch normalization and fixed per-channel input normalization.

use ndarray::{Array1, Array2, Array4, ArrayD, Axis, Ix1, IxDyn};

use crate::layer::{Layer, Mode, Param};

/// Batch normalization over the channel axis of NHWC tensors.
///
/// Follows the usual convention: biased variance for normalization, unbiased
/// variance folded into the running estimate, momentum applied to the batch
/// statistics. In `Eval` mode the running estimates are used and the backward
/// pass treats them as constants, which keeps input gradients exact for
/// frozen-network attacks.
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    running_mean: ArrayD<f64>,
    running_var: ArrayD<f64>,
    momentum: f64,
    eps: f64,
    channels: usize,
    // Caches for backward: normalized activations, inverse std, input shape,
    // and the mode the forward pass ran in.
    xhat: Option<Array2<f64>>,
    ivar: Option<Array1<f64>>,
    cached_dims: (usize, usize, usize, usize),
    cached_mode: Mode,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Param::new(ArrayD::ones(IxDyn(&[channels]))),
            beta: Param::new(ArrayD::zeros(IxDyn(&[channels]))),
            running_mean: ArrayD::zeros(IxDyn(&[channels])),
            running_var: ArrayD::ones(IxDyn(&[channels])),
            momentum: 0.1,
            eps: 1e-5,
            channels,
            xhat: None,
            ivar: None,
            cached_dims: (0, 0, 0, 0),
            cached_mode: Mode::Train,
        }
    }
}

impl Layer for BatchNorm2d {
    fn forward(&mut self, x: Array4<f64>, mode: Mode) -> Array4<f64> {
        let (n, h, w, c) = x.dim();
        assert_eq!(c, self.channels, "channel mismatch in batch norm");
        let rows = n * h * w;
        let flat = x
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((rows, c))
            .expect("bn reshape");

        let gamma = self.gamma.value.view().into_dimensionality::<Ix1>().unwrap();
        let beta = self.beta.value.view().into_dimensionality::<Ix1>().unwrap();

        let (xhat, ivar) = match mode {
            Mode::Train => {
                let m = rows as f64;
                let mean = flat.sum_axis(Axis(0)) / m;
                let diff = &flat - &mean;
                let var = diff.mapv(|d| d * d).sum_axis(Axis(0)) / m;
                let ivar = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
                let xhat = &diff * &ivar;

                let rm = self.running_mean.view_mut().into_dimensionality::<Ix1>().unwrap();
                let rv = self.running_var.view_mut().into_dimensionality::<Ix1>().unwrap();
                let unbiased = if rows > 1 { m / (m - 1.0) } else { 1.0 };
                let mom = self.momentum;
                ndarray::Zip::from(rm).and(&mean).for_each(|r, &b| {
                    *r = (1.0 - mom) * *r + mom * b;
                });
                ndarray::Zip::from(rv).and(&var).for_each(|r, &b| {
                    *r = (1.0 - mom) * *r + mom * b * unbiased;
                });
                (xhat, ivar)
            }
            Mode::Eval => {
                let mean = self.running_mean.view().into_dimensionality::<Ix1>().unwrap();
                let var = self.running_var.view().into_dimensionality::<Ix1>().unwrap();
                let ivar = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
                let xhat = (&flat - &mean) * &ivar;
                (xhat, ivar)
            }
        };

        let y = (&xhat * &gamma) + &beta;
        self.xhat = Some(xhat);
        self.ivar = Some(ivar);
        self.cached_dims = (n, h, w, c);
        self.cached_mode = mode;
        y.into_shape_with_order((n, h, w, c)).expect("bn reshape back")
    }

    fn backward(&mut self, grad: Array4<f64>) -> Array4<f64> {
        let (n, h, w, c) = self.cached_dims;
        let rows = n * h * w;
        let g = grad
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((rows, c))
            .expect("bn grad reshape");
        let xhat = self.xhat.as_ref().expect("backward before forward");
        let ivar = self.ivar.as_ref().expect("backward before forward");

        let dbeta = g.sum_axis(Axis(0));
        let dgamma = (&g * xhat).sum_axis(Axis(0));
        {
            let mut gg = self.gamma.grad.view_mut().into_dimensionality::<Ix1>().unwrap();
            gg += &dgamma;
            let mut bg = self.beta.grad.view_mut().into_dimensionality::<Ix1>().unwrap();
            bg += &dbeta;
        }

        let gamma = self.gamma.value.view().into_dimensionality::<Ix1>().unwrap();
        let dxhat = &g * &gamma;
        let dx = match self.cached_mode {
            Mode::Train => {
                let m = rows as f64;
                let sum_dxhat = dxhat.sum_axis(Axis(0));
                let sum_dxhat_xhat = (&dxhat * xhat).sum_axis(Axis(0));
                let inner = dxhat * m - &sum_dxhat - xhat * &sum_dxhat_xhat;
                inner * &(ivar / m)
            }
            Mode::Eval => dxhat * ivar,
        };
        dx.into_shape_with_order((n, h, w, c)).expect("bn dx reshape")
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.gamma);
        f(&mut self.beta);
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(&mut ArrayD<f64>)) {
        f(&mut self.running_mean);
        f(&mut self.running_var);
    }
}

impl std::fmt::Debug for BatchNorm2d {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "BatchNorm2d(channels={})", self.channels)
    }
}

/// Fixed per-channel standardization applied at the network input:
/// `y_c = (x_c - mean_c) / std_c`. Not trainable; the backward pass scales
/// gradients by `1/std_c`, so perturbation gradients stay in image space.
pub struct Normalize {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl Normalize {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Self {
        assert_eq!(mean.len(), std.len(), "mean/std length mismatch");
        assert!(std.iter().all(|&s| s > 0.0), "std must be positive");
        Normalize { mean, std }
    }
}

impl Layer for Normalize {
    fn forward(&mut self, mut x: Array4<f64>, _mode: Mode) -> Array4<f64> {
        let c = x.dim().3;
        assert_eq!(c, self.mean.len(), "channel mismatch in normalize");
        for ci in 0..c {
            let m = self.mean[ci];
            let s = self.std[ci];
            x.index_axis_mut(Axis(3), ci).mapv_inplace(|v| (v - m) / s);
        }
        x
    }

    fn backward(&mut self, mut grad: Array4<f64>) -> Array4<f64> {
        for ci in 0..self.std.len() {
            let s = self.std[ci];
            grad.index_axis_mut(Axis(3), ci).mapv_inplace(|v| v / s);
        }
        grad
    }
}

impl std::fmt::Debug for Normalize {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Normalize(channels={})", self.mean.len())
    }
}
