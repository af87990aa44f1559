//! SGD with momentum and a few learning-rate schedules.

use ndarray::ArrayD;

use crate::net::Network;

/// Stochastic gradient descent with classical momentum and L2 weight decay,
/// matching the common convention: decay is added to the gradient, the
/// momentum buffer accumulates the decayed gradient, and the parameter moves
/// by `-lr * buffer`.
pub struct Sgd {
    momentum: f64,
    weight_decay: f64,
    buffers: Vec<ArrayD<f64>>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Sgd { momentum, weight_decay, buffers: Vec::new() }
    }

    /// Apply one update using the gradients currently accumulated in `net`.
    pub fn step(&mut self, net: &mut Network, lr: f64) {
        let first = self.buffers.is_empty();
        let mut idx = 0;
        let momentum = self.momentum;
        let weight_decay = self.weight_decay;
        let buffers = &mut self.buffers;
        net.visit_params(&mut |p| {
            if first {
                buffers.push(ArrayD::zeros(p.value.raw_dim()));
            }
            let buf = &mut buffers[idx];
            ndarray::Zip::from(&mut *buf)
                .and(&p.grad)
                .and(&p.value)
                .for_each(|b, &g, &v| {
                    *b = momentum * *b + g + weight_decay * v;
                });
            ndarray::Zip::from(&mut p.value).and(&*buf).for_each(|v, &b| {
                *v -= lr * b;
            });
            idx += 1;
        });
        assert_eq!(idx, buffers.len(), "parameter count changed under optimizer");
    }
}

/// Per-epoch learning rate.
#[derive(Debug, Clone, PartialEq)]
pub enum LrSchedule {
    Constant { lr: f64 },
    /// Half-cosine decay from `base` to zero over `total_epochs`.
    Cosine { base: f64, total_epochs: usize },
    /// Multiply by `gamma` at each milestone epoch.
    Step { base: f64, milestones: Vec<usize>, gamma: f64 },
}

impl LrSchedule {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self {
            LrSchedule::Constant { lr } => *lr,
            LrSchedule::Cosine { base, total_epochs } => {
                assert!(*total_epochs > 0, "cosine schedule needs a horizon");
                let t = epoch.min(*total_epochs) as f64 / *total_epochs as f64;
                base * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
            }
            LrSchedule::Step { base, milestones, gamma } => {
                let hits = milestones.iter().filter(|&&m| epoch >= m).count();
                base * gamma.powi(hits as i32)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::head::{DenseOp, FlattenKind, Head, Linear};
    use crate::layer::Mode;
    use crate::loss::{softmax_cross_entropy, Targets};
    use ndarray::Array4;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sgd_reduces_loss_on_fixed_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let head = Head::new(
            FlattenKind::Flatten,
            vec![DenseOp::Linear(Linear::new(4, 2, &mut rng))],
        );
        let mut net = Network::new(vec![], head);
        let mut opt = Sgd::new(0.9, 0.0);
        let x = Array4::from_shape_fn((4, 1, 1, 4), |(n, _, _, c)| {
            if (n % 2 == 0) == (c < 2) { 0.9 } else { 0.1 }
        });
        let labels = [0usize, 1, 0, 1];
        let mut losses = Vec::new();
        for _ in 0..30 {
            net.zero_grads();
            let logits = net.forward(x.clone(), Mode::Train);
            let (loss, grad) = softmax_cross_entropy(&logits, Targets::Hard(&labels));
            net.backward(grad);
            opt.step(&mut net, 0.5);
            losses.push(loss);
        }
        assert!(losses.last().unwrap() < &(losses[0] * 0.5));
    }

    #[test]
    fn cosine_schedule_hits_endpoints() {
        let s = LrSchedule::Cosine { base: 0.1, total_epochs: 10 };
        assert!((s.lr_at(0) - 0.1).abs() < 1e-12);
        assert!(s.lr_at(10) < 1e-12);
        assert!((s.lr_at(5) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn step_schedule_decays_at_milestones() {
        let s = LrSchedule::Step { base: 0.1, milestones: vec![5, 8], gamma: 0.1 };
        assert!((s.lr_at(4) - 0.1).abs() < 1e-12);
        assert!((s.lr_at(5) - 0.01).abs() < 1e-12);
        assert!((s.lr_at(9) - 0.001).abs() < 1e-12);
    }

    #[test]
    fn weight_decay_shrinks_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let head = Head::new(
            FlattenKind::Flatten,
            vec![DenseOp::Linear(Linear::new(2, 2, &mut rng))],
        );
        let mut net = Network::new(vec![], head);
        let norm_before: f64 = {
            let mut s = 0.0;
            net.visit_params(&mut |p| s += p.value.iter().map(|v| v * v).sum::<f64>());
            s
        };
        // Zero gradients: only the decay term moves the weights.
        net.zero_grads();
        let mut opt = Sgd::new(0.0, 0.1);
        opt.step(&mut net, 1.0);
        let norm_after: f64 = {
            let mut s = 0.0;
            net.visit_params(&mut |p| s += p.value.iter().map(|v| v * v).sum::<f64>());
            s
        };
        assert!(norm_after < norm_before);
    }
}
