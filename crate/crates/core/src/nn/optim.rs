use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::Parameterized;
use crate::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

/// First-order optimizer state. Moment buffers are created on the first
/// step and mirror the parameter shapes from then on.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        Self {
            kind,
            learning_rate,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn adam(learning_rate: f64) -> Self {
        Self::new(OptimizerKind::Adam, learning_rate)
    }

    pub fn sgd(learning_rate: f64) -> Self {
        Self::new(OptimizerKind::Sgd, learning_rate)
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients stored on the parameters and
    /// clears them. A missing gradient counts as zero. Nothing is modified
    /// when any gradient is non-finite.
    pub fn step<P: Parameterized + ?Sized>(&mut self, model: &mut P) -> Result<()> {
        let mut params = model.params_mut();
        for (name, t) in &params {
            if t.grad().is_some_and(|g| g.iter().any(|v| !v.is_finite())) {
                return Err(Error::NonFiniteGradient(name.clone()));
            }
        }
        if self.first.len() != params.len() {
            self.first = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
            self.second = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        }
        self.step += 1;
        let lr = self.learning_rate;
        let bc1 = 1.0 - libm::pow(ADAM_BETA1, self.step as f64);
        let bc2 = 1.0 - libm::pow(ADAM_BETA2, self.step as f64);
        for (k, (_, t)) in params.iter_mut().enumerate() {
            let Some(grad) = t.take_grad() else {
                if self.kind == OptimizerKind::Adam {
                    // zero gradient still decays the moments
                    self.first[k].iter_mut().for_each(|m| *m *= ADAM_BETA1);
                    self.second[k].iter_mut().for_each(|v| *v *= ADAM_BETA2);
                    let (m, v) = (&self.first[k], &self.second[k]);
                    for ((p, mi), vi) in t.values_mut().iter_mut().zip(m).zip(v) {
                        *p -= lr * (mi / bc1) / (libm::sqrt(vi / bc2) + ADAM_EPSILON);
                    }
                }
                continue;
            };
            match self.kind {
                OptimizerKind::Sgd => {
                    for (p, g) in t.values_mut().iter_mut().zip(&grad) {
                        *p -= lr * g;
                    }
                }
                OptimizerKind::Adam => {
                    let (m, v) = (&mut self.first[k], &mut self.second[k]);
                    for (((p, g), mi), vi) in t.values_mut().iter_mut().zip(&grad).zip(m).zip(v) {
                        *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * g;
                        *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * g * g;
                        *p -= lr * (*mi / bc1) / (libm::sqrt(*vi / bc2) + ADAM_EPSILON);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;
    use alloc::string::String;

    struct Scalar(Tensor);

    impl Parameterized for Scalar {
        fn params(&self) -> Vec<(String, &Tensor)> {
            vec![("theta".into(), &self.0)]
        }
        fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
            vec![("theta".into(), &mut self.0)]
        }
    }

    fn theta(model: &Scalar) -> f64 {
        model.0.values()[0]
    }

    #[test]
    fn sgd_direct_substitution() {
        let mut m = Scalar(Tensor::scalar(1.0));
        m.0.accumulate_grad(&[2.0]);
        OptimizerState::sgd(0.1).step(&mut m).unwrap();
        assert!((theta(&m) - 0.8).abs() < 1e-15);
        assert!(m.0.grad().is_none(), "gradients are cleared");
    }

    #[test]
    fn zero_gradient_is_identity() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let mut m = Scalar(Tensor::scalar(0.37));
            m.0.accumulate_grad(&[0.0]);
            OptimizerState::new(kind, 0.1).step(&mut m).unwrap();
            assert_eq!(theta(&m), 0.37);
            let mut m = Scalar(Tensor::scalar(0.37));
            OptimizerState::new(kind, 0.1).step(&mut m).unwrap();
            assert_eq!(theta(&m), 0.37);
        }
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut m = Scalar(Tensor::scalar(1.0));
        m.0.accumulate_grad(&[f64::NAN]);
        let err = OptimizerState::adam(0.1).step(&mut m).unwrap_err();
        assert_eq!(err, Error::NonFiniteGradient("theta".into()));
        assert_eq!(theta(&m), 1.0);
    }

    #[test]
    fn adam_minimises_quadratic() {
        // independent scalar recursion of the bias-corrected update
        let (mut th, mut mm, mut vv) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=2000 {
            let g = 2.0 * th;
            mm = 0.9 * mm + 0.1 * g;
            vv = 0.999 * vv + 0.001 * g * g;
            let mh = mm / (1.0 - 0.9f64.powi(t));
            let vh = vv / (1.0 - 0.999f64.powi(t));
            th -= 0.005 * mh / (vh.sqrt() + 1e-8);
        }
        assert!(th.abs() < 0.01, "reference recursion ends at {th}");

        let mut m = Scalar(Tensor::scalar(1.0));
        let mut opt = OptimizerState::adam(0.005);
        for _ in 0..2000 {
            let g = 2.0 * theta(&m);
            m.0.accumulate_grad(&[g]);
            opt.step(&mut m).unwrap();
        }
        assert!(theta(&m).abs() < 0.01);
        assert!((theta(&m) - th).abs() < 1e-12);
        assert_eq!(opt.steps(), 2000);
    }
}
