//! A network is a trunk of NHWC layers followed by a classifier head.

use ndarray::{Array2, Array4, ArrayD};

use crate::head::Head;
use crate::layer::{Layer, Mode, Param};

pub struct Network {
    pub trunk: Vec<Box<dyn Layer>>,
    pub head: Head,
}

impl Network {
    pub fn new(trunk: Vec<Box<dyn Layer>>, head: Head) -> Self {
        Network { trunk, head }
    }

    /// Run the full forward pass and return logits, caching everything the
    /// backward pass needs.
    pub fn forward(&mut self, x: Array4<f64>, mode: Mode) -> Array2<f64> {
        let mut out = x;
        for layer in &mut self.trunk {
            out = layer.forward(out, mode);
        }
        self.head.forward(out, mode)
    }

    /// Backpropagate a logit gradient through the whole network, accumulating
    /// parameter gradients and returning the gradient with respect to the
    /// input tensor.
    pub fn backward(&mut self, grad_logits: Array2<f64>) -> Array4<f64> {
        let mut g = self.head.backward(grad_logits);
        for layer in self.trunk.iter_mut().rev() {
            g = layer.backward(g);
        }
        g
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        for layer in &mut self.trunk {
            layer.visit_params(f);
        }
        self.head.visit_params(f);
    }

    pub fn visit_buffers(&mut self, f: &mut dyn FnMut(&mut ArrayD<f64>)) {
        for layer in &mut self.trunk {
            layer.visit_buffers(f);
        }
    }

    pub fn zero_grads(&mut self) {
        self.visit_params(&mut |p| p.zero_grad());
    }

    pub fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| n += p.value.len());
        n
    }

    /// All learnable values followed by all buffers, in visit order. Together
    /// with the architecture this fully determines the network's behavior.
    pub fn state(&mut self) -> Vec<ArrayD<f64>> {
        let mut out = Vec::new();
        self.visit_params(&mut |p| out.push(p.value.clone()));
        self.visit_buffers(&mut |b| out.push(b.clone()));
        out
    }

    pub fn set_state(&mut self, state: &[ArrayD<f64>]) {
        let mut idx = 0;
        self.visit_params(&mut |p| {
            assert!(idx < state.len(), "state too short");
            assert_eq!(p.value.shape(), state[idx].shape(), "state shape mismatch");
            p.value.assign(&state[idx]);
            idx += 1;
        });
        self.visit_buffers(&mut |b| {
            assert!(idx < state.len(), "state too short");
            assert_eq!(b.shape(), state[idx].shape(), "state shape mismatch");
            b.assign(&state[idx]);
            idx += 1;
        });
        assert_eq!(idx, state.len(), "state has extra tensors");
    }
}

impl std::fmt::Debug for Network {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "Network {{")?;
        for layer in &self.trunk {
            writeln!(f, "  {:?}", layer)?;
        }
        writeln!(f, "  {:?}", self.head)?;
        write!(f, "}}")
    }
}
