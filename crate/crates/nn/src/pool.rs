//! 2x2 spatial pooling with stride 2.

use ndarray::Array4;

use crate::layer::{Layer, Mode};

/// Max pooling over non-overlapping 2x2 windows. Ties go to the first
/// position in scan order, so backward routing is deterministic.
pub struct MaxPool2 {
    // Winning offset within each window, packed as dh * 2 + dw.
    argmax: Option<Array4<u8>>,
    in_dims: (usize, usize, usize, usize),
}

impl MaxPool2 {
    pub fn new() -> Self {
        MaxPool2 { argmax: None, in_dims: (0, 0, 0, 0) }
    }
}

impl Default for MaxPool2 {
    fn default() -> Self {
        Self::new()
    }
}

impl Layer for MaxPool2 {
    fn forward(&mut self, x: Array4<f64>, _mode: Mode) -> Array4<f64> {
        let (n, h, w, c) = x.dim();
        assert!(h % 2 == 0 && w % 2 == 0, "max pool needs even spatial dims");
        let (oh, ow) = (h / 2, w / 2);
        let mut y = Array4::zeros((n, oh, ow, c));
        let mut arg = Array4::zeros((n, oh, ow, c));
        for ni in 0..n {
            for hi in 0..oh {
                for wi in 0..ow {
                    for ci in 0..c {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_k = 0u8;
                        for dh in 0..2 {
                            for dw in 0..2 {
                                let v = x[[ni, hi * 2 + dh, wi * 2 + dw, ci]];
                                if v > best {
                                    best = v;
                                    best_k = (dh * 2 + dw) as u8;
                                }
                            }
                        }
                        y[[ni, hi, wi, ci]] = best;
                        arg[[ni, hi, wi, ci]] = best_k;
                    }
                }
            }
        }
        self.argmax = Some(arg);
        self.in_dims = (n, h, w, c);
        y
    }

    fn backward(&mut self, grad: Array4<f64>) -> Array4<f64> {
        let (n, h, w, c) = self.in_dims;
        let arg = self.argmax.as_ref().expect("backward before forward");
        let mut dx = Array4::zeros((n, h, w, c));
        let (oh, ow) = (h / 2, w / 2);
        for ni in 0..n {
            for hi in 0..oh {
                for wi in 0..ow {
                    for ci in 0..c {
                        let k = arg[[ni, hi, wi, ci]] as usize;
                        let (dh, dw) = (k / 2, k % 2);
                        dx[[ni, hi * 2 + dh, wi * 2 + dw, ci]] += grad[[ni, hi, wi, ci]];
                    }
                }
            }
        }
        dx
    }
}

impl std::fmt::Debug for MaxPool2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "MaxPool2")
    }
}

/// Average pooling over non-overlapping 2x2 windows.
pub struct AvgPool2 {
    in_dims: (usize, usize, usize, usize),
}

impl AvgPool2 {
    pub fn new() -> Self {
        AvgPool2 { in_dims: (0, 0, 0, 0) }
    }
}

impl Default for AvgPool2 {
    fn default() -> Self {
        Self::new()
    }
}

impl Layer for AvgPool2 {
    fn forward(&mut self, x: Array4<f64>, _mode: Mode) -> Array4<f64> {
        let (n, h, w, c) = x.dim();
        assert!(h % 2 == 0 && w % 2 == 0, "avg pool needs even spatial dims");
        self.in_dims = (n, h, w, c);
        let (oh, ow) = (h / 2, w / 2);
        let mut y = Array4::zeros((n, oh, ow, c));
        for ni in 0..n {
            for hi in 0..oh {
                for wi in 0..ow {
                    for ci in 0..c {
                        let mut s = 0.0;
                        for dh in 0..2 {
                            for dw in 0..2 {
                                s += x[[ni, hi * 2 + dh, wi * 2 + dw, ci]];
                            }
                        }
                        y[[ni, hi, wi, ci]] = s * 0.25;
                    }
                }
            }
        }
        y
    }

    fn backward(&mut self, grad: Array4<f64>) -> Array4<f64> {
        let (n, h, w, c) = self.in_dims;
        let (oh, ow) = (h / 2, w / 2);
        let mut dx = Array4::zeros((n, h, w, c));
        for ni in 0..n {
            for hi in 0..oh {
                for wi in 0..ow {
                    for ci in 0..c {
                        let g = grad[[ni, hi, wi, ci]] * 0.25;
                        for dh in 0..2 {
                            for dw in 0..2 {
                                dx[[ni, hi * 2 + dh, wi * 2 + dw, ci]] = g;
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}

impl std::fmt::Debug for AvgPool2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "AvgPool2")
    }
}
