use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand_core::RngCore;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::linalg::gemm;
use super::tape::{sigmoid, tanh_safe};
use super::{Parameterized, Tape, Tensor, Var};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Linear,
    None,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Tanh => tanh_safe(x),
            Activation::Sigmoid => sigmoid(x),
            Activation::Linear | Activation::None => x,
        }
    }
}

/// Fully connected layer computing `act(x·W + b)` with `W` stored in×out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl Layer {
    pub fn input_width(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn output_width(&self) -> usize {
        self.weights.shape()[1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    layers: Vec<Layer>,
}

impl NetworkParams {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        for (i, l) in layers.iter().enumerate() {
            if l.weights.shape().len() != 2 || l.bias.len() != l.output_width() {
                return Err(Error::Config(format!(
                    "layer {i}: weights {:?} / bias {:?} are inconsistent",
                    l.weights.shape(),
                    l.bias.shape()
                )));
            }
            if !(l.weights.is_finite() && l.bias.is_finite()) {
                return Err(Error::Config(format!("layer {i} has non-finite parameters")));
            }
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].output_width() != pair[1].input_width() {
                return Err(Error::Config(format!(
                    "layer {i} outputs {} values but layer {} expects {}",
                    pair[0].output_width(),
                    i + 1,
                    pair[1].input_width()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Randomly initialised network with layer widths `widths[0] → … → widths[L]`.
    ///
    /// ReLU layers use He-uniform bounds, everything else Glorot-uniform;
    /// biases start at zero.
    pub fn init(widths: &[usize], activations: &[Activation], rng: &mut impl RngCore) -> Result<Self> {
        if widths.len() != activations.len() + 1 {
            return Err(Error::Config(format!(
                "{} widths need {} activations, got {}",
                widths.len(),
                widths.len().saturating_sub(1),
                activations.len()
            )));
        }
        let mut layers = Vec::with_capacity(activations.len());
        for (w, &act) in widths.windows(2).zip(activations) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = match act {
                Activation::Relu => libm::sqrt(6.0 / fan_in.max(1) as f64),
                _ => libm::sqrt(6.0 / (fan_in + fan_out).max(1) as f64),
            };
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
            let values = (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect();
            layers.push(Layer {
                weights: Tensor::new(vec![fan_in, fan_out], values)?,
                bias: Tensor::zeros(vec![fan_out]),
                activation: act,
            });
        }
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_width(&self) -> usize {
        self.layers.first().map_or(0, Layer::input_width)
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, Layer::output_width)
    }

    /// Number of parameter tensors (two per layer).
    pub fn slot_count(&self) -> usize {
        2 * self.layers.len()
    }

    /// Records the forward pass on `tape`. When `slot_base` is `Some`, the
    /// weights are bound as parameters `slot_base..slot_base + slot_count()`
    /// in layer order (weights before bias); otherwise they are constants.
    pub fn forward(&self, tape: &mut Tape, input: Var, slot_base: Option<usize>) -> Result<Var> {
        let (_, cols) = tape.shape(input);
        if cols != self.input_width() {
            return Err(Error::Shape {
                op: "dense_forward",
                expected: format!("input width {}", self.input_width()),
                actual: format!("{cols}"),
            });
        }
        let mut x = input;
        for (i, l) in self.layers.iter().enumerate() {
            let (w, b) = match slot_base {
                Some(base) => (tape.param(base + 2 * i, &l.weights), tape.param(base + 2 * i + 1, &l.bias)),
                None => {
                    let (r, c) = l.weights.rows_cols();
                    let w = tape.constant(r, c, l.weights.values().to_vec());
                    let b = tape.constant(1, c, l.bias.values().to_vec());
                    (w, b)
                }
            };
            x = tape.dense(x, w, b, l.activation)?;
        }
        Ok(x)
    }

    /// Tape-free evaluation of `rows` stacked inputs; bit-identical to
    /// [`NetworkParams::forward`].
    pub fn eval(&self, input: &[f64], rows: usize) -> Result<Vec<f64>> {
        if input.len() != rows * self.input_width() {
            return Err(Error::Shape {
                op: "dense_eval",
                expected: format!("{rows}x{}", self.input_width()),
                actual: format!("{} values", input.len()),
            });
        }
        let mut x = input.to_vec();
        for l in &self.layers {
            let (k, n) = (l.input_width(), l.output_width());
            let mut z = vec![0.0; rows * n];
            gemm(rows, k, n, &x, false, l.weights.values(), false, 0.0, &mut z);
            for row in z.chunks_exact_mut(n.max(1)) {
                for (v, b) in row.iter_mut().zip(l.bias.values()) {
                    *v = l.activation.apply(*v + b);
                }
            }
            x = z;
        }
        Ok(x)
    }
}

impl Parameterized for NetworkParams {
    fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::with_capacity(self.slot_count());
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layer{i}.weights"), &l.weights));
            out.push((format!("layer{i}.bias"), &l.bias));
        }
        out
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::with_capacity(self.slot_count());
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.push((format!("layer{i}.weights"), &mut l.weights));
            out.push((format!("layer{i}.bias"), &mut l.bias));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;
    use rand_core::SeedableRng;

    fn identity_layer(act: Activation) -> NetworkParams {
        NetworkParams::new(vec![Layer {
            weights: Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            bias: Tensor::zeros(vec![2]),
            activation: act,
        }])
        .unwrap()
    }

    #[test]
    fn identity_linear_and_relu() {
        let lin = identity_layer(Activation::Linear);
        assert_eq!(lin.eval(&[3.0, -1.0], 1).unwrap(), vec![3.0, -1.0]);
        let relu = identity_layer(Activation::Relu);
        assert_eq!(relu.eval(&[3.0, -1.0], 1).unwrap(), vec![3.0, 0.0]);

        let mut tape = Tape::new();
        let x = tape.constant(1, 2, vec![3.0, -1.0]);
        let y = relu.forward(&mut tape, x, None).unwrap();
        assert_eq!(tape.value(y), &[3.0, 0.0]);
    }

    #[test]
    fn two_layer_tanh_linear_matches_scalar_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = NetworkParams::init(&[1, 4, 2], &[Activation::Tanh, Activation::Linear], &mut rng).unwrap();
        // bias is zero after init; give it values so the check covers it
        let mut net = net;
        for (i, v) in net.layers_mut()[0].bias.values_mut().iter_mut().enumerate() {
            *v = 0.1 * i as f64 - 0.15;
        }
        let l0 = &net.layers()[0];
        let l1 = &net.layers()[1];
        let x = 0.5;
        let hidden: Vec<f64> = (0..4)
            .map(|j| (x * l0.weights.values()[j] + l0.bias.values()[j]).tanh())
            .collect();
        let expected: Vec<f64> = (0..2)
            .map(|o| {
                let mut s = l1.bias.values()[o];
                for (j, h) in hidden.iter().enumerate() {
                    s += h * l1.weights.values()[j * 2 + o];
                }
                s
            })
            .collect();
        let got = net.eval(&[x], 1).unwrap();
        for (g, e) in got.iter().zip(&expected) {
            assert!((g - e).abs() < 1e-12, "{g} vs {e}");
        }
        let mut tape = Tape::new();
        let xi = tape.constant(1, 1, vec![x]);
        let y = net.forward(&mut tape, xi, Some(0)).unwrap();
        assert_eq!(tape.value(y), got.as_slice());
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let bad = NetworkParams::new(vec![
            Layer {
                weights: Tensor::zeros(vec![2, 3]),
                bias: Tensor::zeros(vec![3]),
                activation: Activation::Relu,
            },
            Layer {
                weights: Tensor::zeros(vec![4, 1]),
                bias: Tensor::zeros(vec![1]),
                activation: Activation::Linear,
            },
        ]);
        assert!(matches!(bad, Err(Error::Config(_))));

        let net = identity_layer(Activation::Linear);
        let mut tape = Tape::new();
        let x = tape.constant(1, 3, vec![0.0; 3]);
        assert!(matches!(net.forward(&mut tape, x, None), Err(Error::Shape { .. })));
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = NetworkParams::init(&[3, 8, 2], &[Activation::Relu, Activation::Linear], &mut rng).unwrap();
        let input: Vec<f64> = (0..12).map(|i| (i as f64).sin()).collect();
        assert_eq!(net.eval(&input, 4).unwrap(), net.eval(&input, 4).unwrap());
    }
}
