//! Classifier architectures and the gradient interface used by crafting,
//! adversarial training, and attacks.
//!
//! Every network starts with a fixed per-channel normalization layer, so all
//! public entry points take images in `[0,1]` pixel space and gradients come
//! back in that same space.

use std::str::FromStr;

use ndarray::Array4;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use ule_nn::{
    conv3x3, BasicBlock, BatchNorm2d, DenseBlock, FlattenKind, Head, Layer, Linear, MaxPool2,
    Mode, Network, Normalize, Relu, Sgd, Targets, Transition,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Mlp,
    SmallCnn,
    Resnet18,
    Densenet121,
    Vgg11,
}

impl Arch {
    pub fn as_str(&self) -> &'static str {
        match self {
            Arch::Mlp => "mlp",
            Arch::SmallCnn => "small_cnn",
            Arch::Resnet18 => "resnet18",
            Arch::Densenet121 => "densenet121",
            Arch::Vgg11 => "vgg11",
        }
    }
}

impl FromStr for Arch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(Arch::Mlp),
            "small_cnn" => Ok(Arch::SmallCnn),
            "resnet18" => Ok(Arch::Resnet18),
            "densenet121" => Ok(Arch::Densenet121),
            "vgg11" => Ok(Arch::Vgg11),
            other => Err(Error::Config(format!("unknown architecture {other:?}"))),
        }
    }
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Fixed input normalization: `(x - mean) / std` per channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Normalization {
    /// The usual CIFAR-10 channel statistics.
    pub fn cifar10() -> Self {
        Normalization {
            mean: [0.4914, 0.4822, 0.4465],
            std: [0.2470, 0.2435, 0.2616],
        }
    }

    /// Centering only, for generated data whose statistics we control.
    pub fn centered() -> Self {
        Normalization { mean: [0.5; 3], std: [0.5; 3] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub arch: Arch,
    pub class_count: usize,
    /// `(H, W, C)` of the images this model accepts.
    pub input_shape: (usize, usize, usize),
    pub normalization: Normalization,
    pub init_seed: u64,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let (h, w, c) = self.input_shape;
        if c != 3 {
            return Err(Error::Config(format!("models take 3-channel input, got {c}")));
        }
        if self.class_count < 2 {
            return Err(Error::Config("class_count must be at least 2".into()));
        }
        let divisor = match self.arch {
            Arch::Mlp => 1,
            Arch::SmallCnn => 4,
            Arch::Resnet18 | Arch::Densenet121 => 8,
            Arch::Vgg11 => 32,
        };
        if h % divisor != 0 || w % divisor != 0 {
            return Err(Error::Config(format!(
                "{} needs input dims divisible by {divisor}, got {h}x{w}",
                self.arch
            )));
        }
        Ok(())
    }
}

/// Which gradients a `loss_and_grads` call should produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Wrt {
    /// Parameter gradients only (training steps).
    Params,
    /// Input gradient only (perturbation search; parameter grads are still
    /// written but meant to be discarded).
    Input,
    /// Both, e.g. for gradient checking.
    Both,
}

/// A network plus the spec that built it.
#[derive(Debug)]
pub struct Classifier {
    pub spec: ModelSpec,
    pub net: Network,
}

impl Classifier {
    pub fn logits(&mut self, x: &Array4<f64>, mode: Mode) -> ndarray::Array2<f64> {
        self.net.forward(x.clone(), mode)
    }

    /// Forward + cross-entropy + backward in one call. Returns the loss and,
    /// if requested, the gradient with respect to the `[0,1]`-space input.
    pub fn loss_and_grads(
        &mut self,
        x: &Array4<f64>,
        targets: Targets<'_>,
        wrt: Wrt,
        mode: Mode,
    ) -> (f64, Option<Array4<f64>>) {
        self.net.zero_grads();
        let logits = self.net.forward(x.clone(), mode);
        let (loss, grad_logits) = ule_nn::softmax_cross_entropy(&logits, targets);
        let input_grad = self.net.backward(grad_logits);
        let g = match wrt {
            Wrt::Params => None,
            Wrt::Input | Wrt::Both => Some(input_grad),
        };
        (loss, g)
    }

    pub fn apply_update(&mut self, opt: &mut Sgd, lr: f64) {
        opt.step(&mut self.net, lr);
    }

    pub fn state(&mut self) -> Vec<ndarray::ArrayD<f64>> {
        self.net.state()
    }

    pub fn set_state(&mut self, state: &[ndarray::ArrayD<f64>]) {
        self.net.set_state(state);
    }

    pub fn param_count(&mut self) -> usize {
        self.net.param_count()
    }
}

/// Build a freshly initialized classifier. Initialization draws from a
/// dedicated RNG stream of `init_seed`, so two builds with the same spec are
/// bit-identical.
pub fn build(spec: &ModelSpec) -> Result<Classifier> {
    spec.validate()?;
    let mut rng = rng::stream(spec.init_seed, "model-init");
    let norm = Normalize::new(spec.normalization.mean.to_vec(), spec.normalization.std.to_vec());
    let (h, w, _) = spec.input_shape;
    let c_out = spec.class_count;

    let net = match spec.arch {
        Arch::Mlp => {
            let head = Head::new(
                FlattenKind::Flatten,
                vec![
                    ule_nn::DenseOp::Linear(Linear::new(h * w * 3, 1024, &mut rng)),
                    ule_nn::DenseOp::relu(),
                    ule_nn::DenseOp::Linear(Linear::new(1024, 512, &mut rng)),
                    ule_nn::DenseOp::relu(),
                    ule_nn::DenseOp::Linear(Linear::new(512, c_out, &mut rng)),
                ],
            );
            Network { trunk: vec![Box::new(norm)], head }
        }
        Arch::SmallCnn => small_cnn(norm, c_out, &mut rng),
        Arch::Resnet18 => resnet18(norm, c_out, &mut rng),
        Arch::Densenet121 => densenet121(norm, c_out, &mut rng),
        Arch::Vgg11 => vgg11(norm, c_out, &mut rng),
    };
    Ok(Classifier { spec: *spec, net })
}

fn small_cnn(norm: Normalize, classes: usize, rng: &mut impl rand::Rng) -> Network {
    let trunk: Vec<Box<dyn Layer>> = vec![
        Box::new(norm),
        Box::new(conv3x3(3, 16, 1, rng)),
        Box::new(BatchNorm2d::new(16)),
        Box::new(Relu::new()),
        Box::new(MaxPool2::new()),
        Box::new(conv3x3(16, 32, 1, rng)),
        Box::new(BatchNorm2d::new(32)),
        Box::new(Relu::new()),
        Box::new(MaxPool2::new()),
    ];
    let head = Head::new(
        FlattenKind::Gap,
        vec![ule_nn::DenseOp::Linear(Linear::new(32, classes, rng))],
    );
    Network { trunk, head }
}

fn resnet18(norm: Normalize, classes: usize, rng: &mut impl rand::Rng) -> Network {
    let mut trunk: Vec<Box<dyn Layer>> = vec![
        Box::new(norm),
        Box::new(conv3x3(3, 64, 1, rng)),
        Box::new(BatchNorm2d::new(64)),
        Box::new(Relu::new()),
    ];
    let mut c_in = 64;
    for (channels, stride) in [(64, 1), (128, 2), (256, 2), (512, 2)] {
        trunk.push(Box::new(BasicBlock::new(c_in, channels, stride, rng)));
        trunk.push(Box::new(BasicBlock::new(channels, channels, 1, rng)));
        c_in = channels;
    }
    let head = Head::new(
        FlattenKind::Gap,
        vec![ule_nn::DenseOp::Linear(Linear::new(512, classes, rng))],
    );
    Network { trunk, head }
}

fn densenet121(norm: Normalize, classes: usize, rng: &mut impl rand::Rng) -> Network {
    const GROWTH: usize = 32;
    let mut trunk: Vec<Box<dyn Layer>> = vec![
        Box::new(norm),
        Box::new(conv3x3(3, 2 * GROWTH, 1, rng)),
    ];
    let mut channels = 2 * GROWTH;
    let block_sizes = [6usize, 12, 24, 16];
    for (bi, &layers) in block_sizes.iter().enumerate() {
        let block = DenseBlock::new(channels, GROWTH, layers, rng);
        channels = block.out_channels();
        trunk.push(Box::new(block));
        if bi + 1 < block_sizes.len() {
            let transition = Transition::new(channels, channels / 2, rng);
            channels = transition.out_channels();
            trunk.push(Box::new(transition));
        }
    }
    trunk.push(Box::new(BatchNorm2d::new(channels)));
    trunk.push(Box::new(Relu::new()));
    let head = Head::new(
        FlattenKind::Gap,
        vec![ule_nn::DenseOp::Linear(Linear::new(channels, classes, rng))],
    );
    Network { trunk, head }
}

fn vgg11(norm: Normalize, classes: usize, rng: &mut impl rand::Rng) -> Network {
    enum Cfg {
        Conv(usize),
        Pool,
    }
    use Cfg::*;
    let cfg = [
        Conv(64), Pool,
        Conv(128), Pool,
        Conv(256), Conv(256), Pool,
        Conv(512), Conv(512), Pool,
        Conv(512), Conv(512), Pool,
    ];
    let mut trunk: Vec<Box<dyn Layer>> = vec![Box::new(norm)];
    let mut c_in = 3;
    for item in cfg {
        match item {
            Conv(c) => {
                trunk.push(Box::new(conv3x3(c_in, c, 1, rng)));
                trunk.push(Box::new(BatchNorm2d::new(c)));
                trunk.push(Box::new(Relu::new()));
                c_in = c;
            }
            Pool => trunk.push(Box::new(MaxPool2::new())),
        }
    }
    // After five halvings a 32x32 input is 1x1x512, so Flatten == 512 wide.
    let head = Head::new(
        FlattenKind::Flatten,
        vec![ule_nn::DenseOp::Linear(Linear::new(512, classes, rng))],
    );
    Network { trunk, head }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    fn spec(arch: Arch) -> ModelSpec {
        ModelSpec {
            arch,
            class_count: 10,
            input_shape: (32, 32, 3),
            normalization: Normalization::cifar10(),
            init_seed: 0,
        }
    }

    #[test]
    fn arch_round_trips_through_strings() {
        for arch in [Arch::Mlp, Arch::SmallCnn, Arch::Resnet18, Arch::Densenet121, Arch::Vgg11] {
            assert_eq!(arch.as_str().parse::<Arch>().unwrap(), arch);
        }
        assert!("resnet50".parse::<Arch>().is_err());
    }

    #[test]
    fn build_is_deterministic() {
        let mut a = build(&spec(Arch::SmallCnn)).unwrap();
        let mut b = build(&spec(Arch::SmallCnn)).unwrap();
        assert_eq!(a.state(), b.state());
        let mut c = build(&ModelSpec { init_seed: 1, ..spec(Arch::SmallCnn) }).unwrap();
        assert_ne!(a.state(), c.state());
    }

    #[test]
    fn all_archs_forward_on_cifar_shape() {
        let x = Array4::from_elem((2, 32, 32, 3), 0.5);
        for arch in [Arch::Mlp, Arch::SmallCnn, Arch::Resnet18, Arch::Vgg11] {
            let mut model = build(&spec(arch)).unwrap();
            let logits = model.logits(&x, Mode::Eval);
            assert_eq!(logits.dim(), (2, 10), "{arch}");
            assert!(logits.iter().all(|v| v.is_finite()), "{arch}");
        }
    }

    #[test]
    fn densenet_forward_shape() {
        // Smaller input keeps this architecture's test cheap.
        let mut model = build(&ModelSpec {
            arch: Arch::Densenet121,
            input_shape: (8, 8, 3),
            ..spec(Arch::Densenet121)
        })
        .unwrap();
        let x = Array4::from_elem((1, 8, 8, 3), 0.5);
        let logits = model.logits(&x, Mode::Eval);
        assert_eq!(logits.dim(), (1, 10));
    }

    #[test]
    fn vgg_rejects_non_divisible_input() {
        let bad = ModelSpec { input_shape: (24, 24, 3), ..spec(Arch::Vgg11) };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn resnet18_parameter_count_matches_reference() {
        // Canonical CIFAR-style value for this layout with a 10-way head.
        let mut model = build(&spec(Arch::Resnet18)).unwrap();
        assert_eq!(model.param_count(), 11_173_962);
    }

    #[test]
    fn input_gradients_flow_to_pixel_space() {
        let mut model = build(&spec(Arch::SmallCnn)).unwrap();
        let x = Array4::from_elem((2, 32, 32, 3), 0.4);
        let y = vec![1usize, 3];
        let (loss, g) = model.loss_and_grads(&x, Targets::Hard(&y), Wrt::Input, Mode::Eval);
        let g = g.unwrap();
        assert!(loss.is_finite());
        assert_eq!(g.dim(), (2, 32, 32, 3));
        assert!(g.iter().any(|&v| v != 0.0));
    }
}
