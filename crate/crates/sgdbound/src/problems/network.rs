//! Fully connected binary classifier with logistic loss, used as a
//! non-convex member of the problem suite.
//!
//! Parameters are flattened layer by layer, each weight matrix row-major with
//! shape `(fan_out, fan_in)`. The last layer has a single output unit.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
        }
    }

    // ReLU'(0) is taken as 0.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
        }
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    /// Layer widths including input and the scalar output: `[d_in, m_1, ..., 1]`.
    widths: Vec<usize>,
    activation: Activation,
    offsets: Vec<usize>,
}

impl Network {
    pub fn new(input: usize, hidden: &[usize], activation: Activation) -> Self {
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(1);
        let mut offsets = vec![0];
        for w in widths.windows(2) {
            offsets.push(offsets.last().unwrap() + w[0] * w[1]);
        }
        Self { widths, activation, offsets }
    }

    pub fn num_params(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    /// Number of weight layers.
    pub fn depth(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn hidden_widths(&self) -> &[usize] {
        &self.widths[1..self.widths.len() - 1]
    }

    fn layer<'a>(&self, params: &'a [f64], l: usize) -> &'a [f64] {
        &params[self.offsets[l]..self.offsets[l + 1]]
    }

    /// Pre-activations of every hidden layer and the scalar output.
    fn forward(&self, params: &[f64], input: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, f64) {
        let layers = self.depth();
        let mut acts = vec![input.to_vec()];
        let mut pre = Vec::with_capacity(layers - 1);
        for l in 0..layers - 1 {
            let w = self.layer(params, l);
            let fan_in = self.widths[l];
            let z: Vec<f64> = w.chunks_exact(fan_in).map(|row| dot(row, &acts[l])).collect();
            acts.push(z.iter().map(|&v| self.activation.apply(v)).collect());
            pre.push(z);
        }
        let out = dot(self.layer(params, layers - 1), &acts[layers - 1]);
        (acts, pre, out)
    }

    pub fn output(&self, params: &[f64], input: &[f64]) -> f64 {
        self.forward(params, input).2
    }

    /// Logistic loss `log(1 + exp(-label * output))`.
    pub fn loss(&self, params: &[f64], input: &[f64], label: f64) -> f64 {
        softplus(-label * self.output(params, input))
    }

    /// Adds `weight * grad loss` to `out`.
    pub fn loss_grad_add(&self, params: &[f64], input: &[f64], label: f64, weight: f64, out: &mut [f64]) {
        let layers = self.depth();
        let (acts, pre, u) = self.forward(params, input);
        let g_out = -label * sigmoid(-label * u) * weight;
        let last = layers - 1;
        let off = self.offsets[last];
        for (o, a) in out[off..self.offsets[last + 1]].iter_mut().zip(&acts[last]) {
            *o += g_out * a;
        }
        // delta for the output of layer `last - 1`, i.e. d loss / d acts[last]
        let mut delta: Vec<f64> = self.layer(params, last).iter().map(|w| g_out * w).collect();
        for l in (0..last).rev() {
            for (dv, z) in delta.iter_mut().zip(&pre[l]) {
                *dv *= self.activation.derivative(*z);
            }
            let fan_in = self.widths[l];
            let off = self.offsets[l];
            for (j, dv) in delta.iter().enumerate() {
                if *dv == 0.0 {
                    continue;
                }
                let row = &mut out[off + j * fan_in..off + (j + 1) * fan_in];
                for (o, a) in row.iter_mut().zip(&acts[l]) {
                    *o += dv * a;
                }
            }
            if l > 0 {
                let w = self.layer(params, l);
                let mut next = vec![0.0; fan_in];
                for (j, dv) in delta.iter().enumerate() {
                    for (nv, wv) in next.iter_mut().zip(&w[j * fan_in..(j + 1) * fan_in]) {
                        *nv += dv * wv;
                    }
                }
                delta = next;
            }
        }
    }

    /// Smallest absolute hidden pre-activation, used to detect ReLU kinks.
    pub fn min_abs_preactivation(&self, params: &[f64], input: &[f64]) -> f64 {
        let (_, pre, _) = self.forward(params, input);
        pre.iter().flatten().fold(f64::INFINITY, |m, z| m.min(z.abs()))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_layout() {
        let net = Network::new(3, &[4], Activation::Relu);
        assert_eq!(net.num_params(), 3 * 4 + 4);
        assert_eq!(net.depth(), 2);
        let deep = Network::new(3, &[4, 2], Activation::Relu);
        assert_eq!(deep.num_params(), 12 + 8 + 2);
        assert_eq!(deep.depth(), 3);
    }

    #[test]
    fn two_layer_output_by_hand() {
        let net = Network::new(2, &[2], Activation::Relu);
        // X1 = [[1, -1], [0.5, 2]], X2 = [3, -1]
        let params = [1.0, -1.0, 0.5, 2.0, 3.0, -1.0];
        let a = [2.0, 1.0];
        // hidden = relu([1, 3]) = [1, 3], out = 3 - 3 = 0
        assert_eq!(net.output(&params, &a), 0.0);
        assert!((net.loss(&params, &a, 1.0) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn stable_helpers() {
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
        assert!(softplus(-800.0) >= 0.0);
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
    }
}
