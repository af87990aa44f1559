//! Composite blocks: residual basic blocks and densely connected blocks.

use ndarray::{concatenate, Array4, ArrayD, Axis, s};
use rand::Rng;

use crate::conv::{conv1x1, conv3x3, Conv2d};
use crate::layer::{Layer, Mode, Param, Relu};
use crate::norm::BatchNorm2d;
use crate::pool::AvgPool2;

/// Two 3x3 convolutions with batch norm and a projection shortcut when the
/// shape changes: `relu(bn(conv(relu(bn(conv(x))))) + shortcut(x))`.
pub struct BasicBlock {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    relu1: Relu,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    shortcut: Option<(Conv2d, BatchNorm2d)>,
    relu_out: Relu,
}

impl BasicBlock {
    pub fn new(c_in: usize, c_out: usize, stride: usize, rng: &mut impl Rng) -> Self {
        let shortcut = if stride != 1 || c_in != c_out {
            Some((conv1x1(c_in, c_out, stride, rng), BatchNorm2d::new(c_out)))
        } else {
            None
        };
        BasicBlock {
            conv1: conv3x3(c_in, c_out, stride, rng),
            bn1: BatchNorm2d::new(c_out),
            relu1: Relu::new(),
            conv2: conv3x3(c_out, c_out, 1, rng),
            bn2: BatchNorm2d::new(c_out),
            shortcut,
            relu_out: Relu::new(),
        }
    }
}

impl Layer for BasicBlock {
    fn forward(&mut self, x: Array4<f64>, mode: Mode) -> Array4<f64> {
        let residual_in = x.clone();
        let mut out = self.conv1.forward(x, mode);
        out = self.bn1.forward(out, mode);
        out = self.relu1.forward(out, mode);
        out = self.conv2.forward(out, mode);
        out = self.bn2.forward(out, mode);
        let sc = match &mut self.shortcut {
            Some((conv, bn)) => {
                let s = conv.forward(residual_in, mode);
                bn.forward(s, mode)
            }
            None => residual_in,
        };
        self.relu_out.forward(out + sc, mode)
    }

    fn backward(&mut self, grad: Array4<f64>) -> Array4<f64> {
        let g = self.relu_out.backward(grad);
        let mut gm = self.bn2.backward(g.clone());
        gm = self.conv2.backward(gm);
        gm = self.relu1.backward(gm);
        gm = self.bn1.backward(gm);
        gm = self.conv1.backward(gm);
        let gs = match &mut self.shortcut {
            Some((conv, bn)) => {
                let t = bn.backward(g);
                conv.backward(t)
            }
            None => g,
        };
        gm + gs
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.conv1.visit_params(f);
        self.bn1.visit_params(f);
        self.conv2.visit_params(f);
        self.bn2.visit_params(f);
        if let Some((conv, bn)) = &mut self.shortcut {
            conv.visit_params(f);
            bn.visit_params(f);
        }
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(&mut ArrayD<f64>)) {
        self.bn1.visit_buffers(f);
        self.bn2.visit_buffers(f);
        if let Some((_, bn)) = &mut self.shortcut {
            bn.visit_buffers(f);
        }
    }
}

impl std::fmt::Debug for BasicBlock {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "BasicBlock(shortcut={})", self.shortcut.is_some())
    }
}

/// Pre-activation bottleneck: `bn-relu-conv1x1(4g)-bn-relu-conv3x3(g)`,
/// output concatenated onto the input along the channel axis.
struct Bottleneck {
    bn1: BatchNorm2d,
    relu1: Relu,
    conv1: Conv2d,
    bn2: BatchNorm2d,
    relu2: Relu,
    conv2: Conv2d,
    c_in: usize,
}

impl Bottleneck {
    fn new(c_in: usize, growth: usize, rng: &mut impl Rng) -> Self {
        let width = 4 * growth;
        Bottleneck {
            bn1: BatchNorm2d::new(c_in),
            relu1: Relu::new(),
            conv1: conv1x1(c_in, width, 1, rng),
            bn2: BatchNorm2d::new(width),
            relu2: Relu::new(),
            conv2: conv3x3(width, growth, 1, rng),
            c_in,
        }
    }

    fn forward(&mut self, x: Array4<f64>, mode: Mode) -> Array4<f64> {
        let mut new = self.bn1.forward(x.clone(), mode);
        new = self.relu1.forward(new, mode);
        new = self.conv1.forward(new, mode);
        new = self.bn2.forward(new, mode);
        new = self.relu2.forward(new, mode);
        new = self.conv2.forward(new, mode);
        concatenate(Axis(3), &[x.view(), new.view()]).expect("dense concat")
    }

    fn backward(&mut self, grad: Array4<f64>) -> Array4<f64> {
        let g_keep = grad.slice(s![.., .., .., ..self.c_in]).to_owned();
        let g_new = grad.slice(s![.., .., .., self.c_in..]).to_owned();
        let mut g = self.conv2.backward(g_new);
        g = self.relu2.backward(g);
        g = self.bn2.backward(g);
        g = self.conv1.backward(g);
        g = self.relu1.backward(g);
        g = self.bn1.backward(g);
        g + g_keep
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.bn1.visit_params(f);
        self.conv1.visit_params(f);
        self.bn2.visit_params(f);
        self.conv2.visit_params(f);
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(&mut ArrayD<f64>)) {
        self.bn1.visit_buffers(f);
        self.bn2.visit_buffers(f);
    }
}

/// A run of bottleneck layers; channels grow by `growth` per layer.
pub struct DenseBlock {
    layers: Vec<Bottleneck>,
    out_channels: usize,
}

impl DenseBlock {
    pub fn new(c_in: usize, growth: usize, n_layers: usize, rng: &mut impl Rng) -> Self {
        let mut layers = Vec::with_capacity(n_layers);
        let mut c = c_in;
        for _ in 0..n_layers {
            layers.push(Bottleneck::new(c, growth, rng));
            c += growth;
        }
        DenseBlock { layers, out_channels: c }
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }
}

impl Layer for DenseBlock {
    fn forward(&mut self, x: Array4<f64>, mode: Mode) -> Array4<f64> {
        let mut out = x;
        for layer in &mut self.layers {
            out = layer.forward(out, mode);
        }
        out
    }

    fn backward(&mut self, grad: Array4<f64>) -> Array4<f64> {
        let mut g = grad;
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(g);
        }
        g
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        for layer in &mut self.layers {
            layer.visit_params(f);
        }
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(&mut ArrayD<f64>)) {
        for layer in &mut self.layers {
            layer.visit_buffers(f);
        }
    }
}

impl std::fmt::Debug for DenseBlock {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "DenseBlock({} layers -> {} ch)", self.layers.len(), self.out_channels)
    }
}

/// Channel compression between dense blocks: `bn-relu-conv1x1` followed by
/// 2x2 average pooling.
pub struct Transition {
    bn: BatchNorm2d,
    relu: Relu,
    conv: Conv2d,
    pool: AvgPool2,
    out_channels: usize,
}

impl Transition {
    pub fn new(c_in: usize, c_out: usize, rng: &mut impl Rng) -> Self {
        Transition {
            bn: BatchNorm2d::new(c_in),
            relu: Relu::new(),
            conv: conv1x1(c_in, c_out, 1, rng),
            pool: AvgPool2::new(),
            out_channels: c_out,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }
}

impl Layer for Transition {
    fn forward(&mut self, x: Array4<f64>, mode: Mode) -> Array4<f64> {
        let mut out = self.bn.forward(x, mode);
        out = self.relu.forward(out, mode);
        out = self.conv.forward(out, mode);
        self.pool.forward(out, mode)
    }

    fn backward(&mut self, grad: Array4<f64>) -> Array4<f64> {
        let mut g = self.pool.backward(grad);
        g = self.conv.backward(g);
        g = self.relu.backward(g);
        self.bn.backward(g)
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.bn.visit_params(f);
        self.conv.visit_params(f);
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(&mut ArrayD<f64>)) {
        self.bn.visit_buffers(f);
    }
}

impl std::fmt::Debug for Transition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Transition(-> {} ch)", self.out_channels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn basic_block_keeps_shape_when_stride_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut block = BasicBlock::new(4, 4, 1, &mut rng);
        let x = Array4::from_shape_fn((2, 6, 6, 4), |(n, h, w, c)| {
            ((n + h * 3 + w * 7 + c) % 5) as f64 * 0.2 - 0.4
        });
        let y = block.forward(x, Mode::Train);
        assert_eq!(y.dim(), (2, 6, 6, 4));
    }

    #[test]
    fn basic_block_downsamples_with_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut block = BasicBlock::new(4, 8, 2, &mut rng);
        let x = Array4::from_elem((1, 8, 8, 4), 0.3);
        let y = block.forward(x, Mode::Train);
        assert_eq!(y.dim(), (1, 4, 4, 8));
    }

    #[test]
    fn dense_block_grows_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut block = DenseBlock::new(4, 2, 3, &mut rng);
        assert_eq!(block.out_channels(), 10);
        let x = Array4::from_elem((1, 4, 4, 4), 0.1);
        let y = block.forward(x, Mode::Train);
        assert_eq!(y.dim(), (1, 4, 4, 10));
    }

    #[test]
    fn transition_halves_spatial_dims() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut t = Transition::new(8, 4, &mut rng);
        let x = Array4::from_elem((1, 8, 8, 8), 0.5);
        let y = t.forward(x, Mode::Train);
        assert_eq!(y.dim(), (1, 4, 4, 4));
    }
}
