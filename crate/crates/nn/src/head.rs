//! Classifier heads: feature-map flattening plus a dense stack.
//!
//! The convolutional trunk works on NHWC `Array4` tensors; the head turns the
//! final feature map into `(batch, features)` and applies linear layers with
//! optional ReLU in between. Multilayer-perceptron classifiers are expressed
//! as a head with `FlattenKind::Flatten` and several linear ops over a trunk
//! with no layers at all.

use ndarray::{Array2, Array4, Ix2};
use rand::Rng;

use crate::init;
use crate::layer::{Mode, Param};

/// How the last feature map collapses to a feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlattenKind {
    /// Global average pool over the spatial axes: `(n, h, w, c) -> (n, c)`.
    Gap,
    /// Row-major flatten: `(n, h, w, c) -> (n, h * w * c)`.
    Flatten,
}

/// Fully connected layer over `(batch, features)` matrices.
pub struct Linear {
    pub weight: Param, // (in, out)
    pub bias: Param,   // (out)
    in_features: usize,
    out_features: usize,
    cached_input: Option<Array2<f64>>,
}

impl Linear {
    pub fn new(in_features: usize, out_features: usize, rng: &mut impl Rng) -> Self {
        let weight = init::bound_uniform(rng, &[in_features, out_features], in_features);
        let bias = init::bound_uniform(rng, &[out_features], in_features);
        Linear {
            weight: Param::new(weight),
            bias: Param::new(bias),
            in_features,
            out_features,
            cached_input: None,
        }
    }

    pub fn forward(&mut self, x: Array2<f64>) -> Array2<f64> {
        assert_eq!(x.dim().1, self.in_features, "linear input width mismatch");
        let w = self.weight.value.view().into_dimensionality::<Ix2>().unwrap();
        let b = self.bias.value.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        let y = x.dot(&w) + &b;
        self.cached_input = Some(x);
        y
    }

    pub fn backward(&mut self, grad: Array2<f64>) -> Array2<f64> {
        let x = self.cached_input.as_ref().expect("backward before forward");
        {
            let mut wg = self.weight.grad.view_mut().into_dimensionality::<Ix2>().unwrap();
            wg += &x.t().dot(&grad);
            let mut bg = self.bias.grad.view_mut().into_dimensionality::<ndarray::Ix1>().unwrap();
            bg += &grad.sum_axis(ndarray::Axis(0));
        }
        let w = self.weight.value.view().into_dimensionality::<Ix2>().unwrap();
        grad.dot(&w.t())
    }

    pub fn out_features(&self) -> usize {
        self.out_features
    }
}

impl std::fmt::Debug for Linear {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Linear({} -> {})", self.in_features, self.out_features)
    }
}

/// One op in the dense stack.
pub enum DenseOp {
    Linear(Linear),
    Relu { mask: Option<Array2<f64>> },
}

impl DenseOp {
    pub fn relu() -> Self {
        DenseOp::Relu { mask: None }
    }
}

impl std::fmt::Debug for DenseOp {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DenseOp::Linear(l) => l.fmt(f),
            DenseOp::Relu { .. } => write!(f, "Relu"),
        }
    }
}

/// Flatten stage plus dense ops; the final op must produce the logits.
pub struct Head {
    pub flatten: FlattenKind,
    pub ops: Vec<DenseOp>,
    in_dims: (usize, usize, usize, usize),
}

impl Head {
    pub fn new(flatten: FlattenKind, ops: Vec<DenseOp>) -> Self {
        Head { flatten, ops, in_dims: (0, 0, 0, 0) }
    }

    pub fn forward(&mut self, x: Array4<f64>, _mode: Mode) -> Array2<f64> {
        let (n, h, w, c) = x.dim();
        self.in_dims = (n, h, w, c);
        let mut v = match self.flatten {
            FlattenKind::Gap => {
                let scale = 1.0 / (h * w) as f64;
                let mut out = Array2::zeros((n, c));
                for ni in 0..n {
                    for hi in 0..h {
                        for wi in 0..w {
                            for ci in 0..c {
                                out[[ni, ci]] += x[[ni, hi, wi, ci]];
                            }
                        }
                    }
                }
                out * scale
            }
            FlattenKind::Flatten => x
                .as_standard_layout()
                .into_owned()
                .into_shape_with_order((n, h * w * c))
                .expect("flatten reshape"),
        };
        for op in &mut self.ops {
            v = match op {
                DenseOp::Linear(l) => l.forward(v),
                DenseOp::Relu { mask } => {
                    let y = v.mapv(|a| a.max(0.0));
                    *mask = Some(y.mapv(|a| if a > 0.0 { 1.0 } else { 0.0 }));
                    y
                }
            };
        }
        v
    }

    pub fn backward(&mut self, grad: Array2<f64>) -> Array4<f64> {
        let mut g = grad;
        for op in self.ops.iter_mut().rev() {
            g = match op {
                DenseOp::Linear(l) => l.backward(g),
                DenseOp::Relu { mask } => {
                    let m = mask.as_ref().expect("backward before forward");
                    g * m
                }
            };
        }
        let (n, h, w, c) = self.in_dims;
        match self.flatten {
            FlattenKind::Gap => {
                let scale = 1.0 / (h * w) as f64;
                let mut dx = Array4::zeros((n, h, w, c));
                for ni in 0..n {
                    for hi in 0..h {
                        for wi in 0..w {
                            for ci in 0..c {
                                dx[[ni, hi, wi, ci]] = g[[ni, ci]] * scale;
                            }
                        }
                    }
                }
                dx
            }
            FlattenKind::Flatten => g
                .into_shape_with_order((n, h, w, c))
                .expect("unflatten reshape"),
        }
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        for op in &mut self.ops {
            if let DenseOp::Linear(l) = op {
                f(&mut l.weight);
                f(&mut l.bias);
            }
        }
    }
}

impl std::fmt::Debug for Head {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Head({:?}, {:?})", self.flatten, self.ops)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gap_averages_spatial_cells() {
        let x = Array4::from_shape_fn((1, 2, 2, 1), |(_, h, w, _)| (h * 2 + w) as f64);
        let mut head = Head::new(FlattenKind::Gap, vec![]);
        let y = head.forward(x, Mode::Eval);
        assert_eq!(y.dim(), (1, 1));
        assert!((y[[0, 0]] - 1.5).abs() < 1e-12);
        let dx = head.backward(Array2::ones((1, 1)));
        assert!(dx.iter().all(|&v| (v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn flatten_round_trips() {
        let x = Array4::from_shape_fn((2, 2, 2, 3), |(n, h, w, c)| {
            (n * 100 + h * 10 + w * 3 + c) as f64
        });
        let mut head = Head::new(FlattenKind::Flatten, vec![]);
        let y = head.forward(x.clone(), Mode::Eval);
        assert_eq!(y.dim(), (2, 12));
        let back = head.backward(y);
        assert_eq!(back, x);
    }

    #[test]
    fn linear_matches_manual_matmul() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut l = Linear::new(3, 2, &mut rng);
        let x = Array2::from_shape_vec((1, 3), vec![1.0, -2.0, 0.5]).unwrap();
        let y = l.forward(x.clone());
        let w = l.weight.value.view().into_dimensionality::<Ix2>().unwrap();
        for o in 0..2 {
            let expect: f64 = (0..3).map(|i| x[[0, i]] * w[[i, o]]).sum::<f64>()
                + l.bias.value[[o]];
            assert!((y[[0, o]] - expect).abs() < 1e-12);
        }
    }
}
