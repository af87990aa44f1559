//! 2-D convolution over NHWC tensors via im2col and a single GEMM.

use ndarray::{s, Array2, Array4, Array6, Ix2};
use rand::Rng;

use crate::init;
use crate::layer::{Layer, Mode, Param};

pub(crate) fn out_dim(extent: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (extent + 2 * pad - kernel) / stride + 1
}

fn pad_nhwc(x: &Array4<f64>, pad: usize) -> Array4<f64> {
    let (n, h, w, c) = x.dim();
    if pad == 0 {
        return x.clone();
    }
    let mut out = Array4::zeros((n, h + 2 * pad, w + 2 * pad, c));
    out.slice_mut(s![.., pad..pad + h, pad..pad + w, ..]).assign(x);
    out
}

/// Unfold `(N, Hp, Wp, C)` into `(N*OH*OW, KH*KW*C)` patch rows.
fn im2col(
    padded: &Array4<f64>,
    kernel: usize,
    stride: usize,
    oh: usize,
    ow: usize,
) -> Array2<f64> {
    let (n, _, _, c) = padded.dim();
    let mut col = Array6::<f64>::zeros((n, oh, ow, kernel, kernel, c));
    for i in 0..kernel {
        for j in 0..kernel {
            let src = padded.slice(s![
                ..,
                i..i + stride * (oh - 1) + 1; stride,
                j..j + stride * (ow - 1) + 1; stride,
                ..
            ]);
            col.slice_mut(s![.., .., .., i, j, ..]).assign(&src);
        }
    }
    col.into_shape_with_order((n * oh * ow, kernel * kernel * c))
        .expect("im2col reshape")
}

/// Fold `(N*OH*OW, KH*KW*C)` patch-row gradients back onto the padded input.
#[allow(clippy::too_many_arguments)]
fn col2im(
    gcol: &Array2<f64>,
    n: usize,
    h: usize,
    w: usize,
    c: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Array4<f64> {
    let g6 = gcol
        .view()
        .into_shape_with_order((n, oh, ow, kernel, kernel, c))
        .expect("col2im reshape");
    let mut gpad = Array4::zeros((n, h + 2 * pad, w + 2 * pad, c));
    for i in 0..kernel {
        for j in 0..kernel {
            let mut dst = gpad.slice_mut(s![
                ..,
                i..i + stride * (oh - 1) + 1; stride,
                j..j + stride * (ow - 1) + 1; stride,
                ..
            ]);
            dst += &g6.slice(s![.., .., .., i, j, ..]);
        }
    }
    if pad == 0 {
        gpad
    } else {
        gpad.slice(s![.., pad..pad + h, pad..pad + w, ..]).to_owned()
    }
}

/// Square-kernel convolution. Weight layout `(K, K, C_in, C_out)`.
pub struct Conv2d {
    pub weight: Param,
    pub bias: Option<Param>,
    pub stride: usize,
    pub pad: usize,
    kernel: usize,
    c_in: usize,
    c_out: usize,
    cached_input: Option<Array4<f64>>,
}

impl Conv2d {
    pub fn new(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = kernel * kernel * c_in;
        let weight = Param::new(init::kaiming_uniform(rng, &[kernel, kernel, c_in, c_out], fan_in));
        let bias = bias.then(|| Param::new(init::bound_uniform(rng, &[c_out], fan_in)));
        Self {
            weight,
            bias,
            stride,
            pad,
            kernel,
            c_in,
            c_out,
            cached_input: None,
        }
    }

    fn weight2(&self) -> ndarray::ArrayView2<'_, f64> {
        self.weight
            .value
            .view()
            .into_shape_with_order((self.kernel * self.kernel * self.c_in, self.c_out))
            .expect("conv weight reshape")
            .into_dimensionality::<Ix2>()
            .expect("conv weight dim")
    }
}

impl Layer for Conv2d {
    fn forward(&mut self, x: Array4<f64>, _mode: Mode) -> Array4<f64> {
        let (n, h, w, c) = x.dim();
        assert_eq!(c, self.c_in, "Conv2d: expected {} input channels, got {c}", self.c_in);
        let oh = out_dim(h, self.kernel, self.stride, self.pad);
        let ow = out_dim(w, self.kernel, self.stride, self.pad);
        let padded = pad_nhwc(&x, self.pad);
        let col = im2col(&padded, self.kernel, self.stride, oh, ow);
        let mut y2 = col.dot(&self.weight2());
        if let Some(b) = &self.bias {
            let bv = b.value.view().into_dimensionality::<ndarray::Ix1>().unwrap();
            y2 += &bv;
        }
        self.cached_input = Some(x);
        y2.into_shape_with_order((n, oh, ow, self.c_out))
            .expect("conv output reshape")
    }

    fn backward(&mut self, grad: Array4<f64>) -> Array4<f64> {
        let x = self
            .cached_input
            .as_ref()
            .expect("Conv2d::backward called before forward");
        let (n, h, w, _) = x.dim();
        let (gn, oh, ow, gc) = grad.dim();
        assert_eq!((gn, gc), (n, self.c_out), "Conv2d: gradient shape mismatch");

        let g2 = grad
            .into_shape_with_order((n * oh * ow, self.c_out))
            .expect("conv grad reshape");
        if let Some(b) = &mut self.bias {
            let gb = g2.sum_axis(ndarray::Axis(0));
            let mut bg = b.grad.view_mut().into_dimensionality::<ndarray::Ix1>().unwrap();
            bg += &gb;
        }

        let padded = pad_nhwc(x, self.pad);
        let col = im2col(&padded, self.kernel, self.stride, oh, ow);
        let gw = col.t().dot(&g2);
        self.weight.grad += &gw
            .into_shape_with_order((self.kernel, self.kernel, self.c_in, self.c_out))
            .expect("conv weight-grad reshape")
            .into_dyn();

        let gcol = g2.dot(&self.weight2().t());
        col2im(
            &gcol,
            n,
            h,
            w,
            self.c_in,
            self.kernel,
            self.stride,
            self.pad,
            oh,
            ow,
        )
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        if let Some(b) = &mut self.bias {
            f(b);
        }
    }
}

impl std::fmt::Debug for Conv2d {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Conv2d({}x{} {} -> {}, stride {}, pad {}, bias {})",
            self.kernel,
            self.kernel,
            self.c_in,
            self.c_out,
            self.stride,
            self.pad,
            self.bias.is_some()
        )
    }
}

/// Convenience: 3x3 convolution with padding 1 and no bias (the batch-normed
/// building block of all the CIFAR-scale architectures).
pub fn conv3x3(c_in: usize, c_out: usize, stride: usize, rng: &mut impl Rng) -> Conv2d {
    Conv2d::new(c_in, c_out, 3, stride, 1, false, rng)
}

/// Convenience: 1x1 convolution without bias.
pub fn conv1x1(c_in: usize, c_out: usize, stride: usize, rng: &mut impl Rng) -> Conv2d {
    Conv2d::new(c_in, c_out, 1, stride, 0, false, rng)
}
