use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand_core::RngCore;
use rand_distr::{Distribution, Uniform};

use super::{Constellation, SnrFeature};
use crate::nn::{Activation, NetworkParams, Parameterized, Tape, Tensor, Var};
use crate::{Error, Result};

/// AE-mapper: SNR feature → hidden ReLU layers → linear `2M` outputs,
/// reshaped to M×2 and scaled to unit mean power.
#[derive(Debug, Clone, PartialEq)]
pub struct Mapper {
    pub net: NetworkParams,
    pub order: usize,
    pub snr: SnrFeature,
}

impl Mapper {
    pub fn new(order: usize, hidden: &[usize], snr: SnrFeature, rng: &mut impl RngCore) -> Result<Self> {
        if order < 2 || !order.is_power_of_two() {
            return Err(Error::Config(format!("modulation order {order} must be a power of two >= 2")));
        }
        let mut widths = vec![1];
        widths.extend_from_slice(hidden);
        widths.push(2 * order);
        let mut acts = vec![Activation::Relu; hidden.len()];
        acts.push(Activation::Linear);
        let mut net = NetworkParams::init(&widths, &acts, rng)?;
        // A single scalar input through bias-free ReLUs gives the same
        // normalized shape for every positive feature (and nothing at 0).
        let dist = Uniform::new_inclusive(-1.0, 1.0).expect("finite bounds");
        let hidden_layers = net.layers().len() - 1;
        for l in &mut net.layers_mut()[..hidden_layers] {
            l.bias.values_mut().iter_mut().for_each(|b| *b = dist.sample(rng));
        }
        Ok(Self { net, order, snr })
    }

    /// Re-centres the output layer on `base` (index-aligned) and shrinks its
    /// weights by `weight_scale`, so training starts near a known constellation.
    pub fn warm_start(&mut self, base: &Constellation, weight_scale: f64) -> Result<()> {
        if base.order() != self.order {
            return Err(Error::Config(format!(
                "warm start needs order {}, got {}",
                self.order,
                base.order()
            )));
        }
        let out = self.net.layers_mut().last_mut().expect("mapper has an output layer");
        out.weights.values_mut().iter_mut().for_each(|w| *w *= weight_scale);
        out.bias.values_mut().copy_from_slice(base.points());
        Ok(())
    }

    pub fn from_parts(net: NetworkParams, order: usize, snr: SnrFeature) -> Result<Self> {
        if net.input_width() != 1 || net.output_width() != 2 * order {
            return Err(Error::Config(format!(
                "mapper network maps {} -> {}, expected 1 -> {}",
                net.input_width(),
                net.output_width(),
                2 * order
            )));
        }
        Ok(Self { net, order, snr })
    }

    fn check_snr(snr: f64) -> Result<()> {
        if !(snr > 0.0 && snr.is_finite()) {
            return Err(Error::Input(format!("mapper SNR must be positive and finite, got {snr}")));
        }
        Ok(())
    }

    /// Unit-power constellation for linear SNR `snr`.
    pub fn constellation(&self, snr: f64) -> Result<Constellation> {
        Self::check_snr(snr)?;
        let raw = self.net.eval(&[self.snr.value(snr)], 1)?;
        Constellation::normalized(raw)
    }

    /// Records the normalized constellation (M×2) on `tape`.
    pub fn forward(&self, tape: &mut Tape, snr: f64, slot_base: Option<usize>) -> Result<Var> {
        Self::check_snr(snr)?;
        let feat = tape.constant(1, 1, vec![self.snr.value(snr)]);
        let out = self.net.forward(tape, feat, slot_base)?;
        let pts = tape.reshape(out, self.order, 2)?;
        let sq = tape.square(pts);
        let total = tape.sum(sq);
        let power = tape.scale(total, 1.0 / self.order as f64);
        let rms = tape.sqrt(power);
        let inv = tape.recip(rms);
        tape.mul_scalar(pts, inv)
    }

    pub fn slot_count(&self) -> usize {
        self.net.slot_count()
    }
}

impl Parameterized for Mapper {
    fn params(&self) -> Vec<(String, &Tensor)> {
        self.net.params()
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.net.params_mut()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Layer;
    use rand_chacha::ChaCha8Rng;
    use rand_core::SeedableRng;

    #[test]
    fn unit_power_for_random_weights() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = Mapper::new(8, &[128], SnrFeature::default(), &mut rng).unwrap();
            for snr_db in [16.0, 22.0, 30.0] {
                let c = m.constellation(crate::stats::db_to_linear(snr_db)).unwrap();
                assert!((c.mean_power() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn layer_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = Mapper::new(8, &[128], SnrFeature::default(), &mut rng).unwrap();
        let l = m.net.layers();
        assert_eq!(l[0].output_width(), 128);
        assert_eq!(l[0].activation, Activation::Relu);
        assert_eq!(l[1].weights.shape(), &[128, 16]);
        assert_eq!(l[1].activation, Activation::Linear);
    }

    #[test]
    fn tape_and_eval_agree_and_scale_pair() {
        let net = NetworkParams::new(vec![Layer {
            weights: Tensor::zeros(vec![1, 4]),
            bias: Tensor::new(vec![4], vec![2.0, 0.0, -2.0, 0.0]).unwrap(),
            activation: Activation::Linear,
        }])
        .unwrap();
        let m = Mapper::from_parts(net, 2, SnrFeature::default()).unwrap();
        let c = m.constellation(10.0).unwrap();
        assert_eq!(c.points(), &[1.0, 0.0, -1.0, 0.0]);
        let mut tape = Tape::new();
        let v = m.forward(&mut tape, 10.0, None).unwrap();
        assert_eq!(tape.value(v), c.points());
        assert!(m.constellation(0.0).is_err());
    }
}
