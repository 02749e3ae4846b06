//! Nonlinear energy harvester: a logistic rectifier oracle and a small tanh
//! network fitted to it once, then used frozen inside the link.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use alloc::format;

use serde::{Deserialize, Serialize};

use crate::nn::{Activation, NetworkParams, OptimizerState, Parameterized, Tape, Tensor, Var};
use crate::phy::{check_split, SymbolBlock};
use crate::rng::{stream_rng, streams};
use crate::{Error, Result};

/// Logistic rectifier `P_del = (Ψ − p_max·Ω)/(1 − Ω)` with
/// `Ψ = p_max / (1 + e^{−a(P_in − b)})` and `Ω = 1 / (1 + e^{ab})`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EhOracle {
    /// Saturation output in mW.
    pub p_max_mw: f64,
    /// Steepness in 1/W.
    pub a: f64,
    /// Turn-on threshold in W.
    pub b: f64,
}

impl Default for EhOracle {
    fn default() -> Self {
        Self {
            p_max_mw: 24.0,
            a: 150.0,
            b: 0.014,
        }
    }
}

impl EhOracle {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("p_max_mw", self.p_max_mw), ("a", self.a), ("b", self.b)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("harvester parameter {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Delivered DC power (mW) for RF input `p_in` (W).
    pub fn eval(&self, p_in: f64) -> Result<f64> {
        if !(p_in >= 0.0) {
            return Err(Error::Input(format!("harvester input power must be >= 0, got {p_in}")));
        }
        Ok(self.eval_unchecked(p_in))
    }

    fn eval_unchecked(&self, p_in: f64) -> f64 {
        let psi = self.p_max_mw / (1.0 + libm::exp(-self.a * (p_in - self.b)));
        let omega = 1.0 / (1.0 + libm::exp(self.a * self.b));
        (psi - self.p_max_mw * omega) / (1.0 - omega)
    }
}

/// Harvester input `(1 − ρ)·‖y‖²` in normalized signal units.
pub fn p_in(y: &SymbolBlock, rho: f64) -> Result<f64> {
    check_split(rho)?;
    Ok((1.0 - rho) * y.energy())
}

/// Tanh surrogate `P_del ≈ p_max·(t + 1)/2`, `t = net(input_scale·P_in + input_offset)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EhModel {
    pub net: NetworkParams,
    pub input_scale: f64,
    pub input_offset: f64,
    pub output_scale: f64,
    pub frozen: bool,
    pub oracle: EhOracle,
}

impl EhModel {
    pub fn new(net: NetworkParams, input_scale: f64, input_offset: f64, oracle: EhOracle) -> Result<Self> {
        oracle.validate()?;
        if net.input_width() != 1 || net.output_width() != 1 {
            return Err(Error::Config("harvester network must map 1 -> 1".into()));
        }
        if net.layers().last().map(|l| l.activation) != Some(Activation::Tanh) {
            return Err(Error::Config("harvester network must end in tanh".into()));
        }
        Ok(Self {
            net,
            input_scale,
            input_offset,
            output_scale: oracle.p_max_mw,
            frozen: false,
            oracle,
        })
    }

    /// Network input for `p_in` watts.
    fn feature(&self, p_in: f64) -> f64 {
        self.input_scale * p_in + self.input_offset
    }

    /// Tape-free `P_del` (mW) for each entry of `p_in` (W).
    pub fn eval_many(&self, p_in: &[f64]) -> Result<Vec<f64>> {
        if let Some(bad) = p_in.iter().find(|p| !(**p >= 0.0)) {
            return Err(Error::Input(format!("harvester input power must be >= 0, got {bad}")));
        }
        let feats: Vec<f64> = p_in.iter().map(|&p| self.feature(p)).collect();
        let t = self.net.eval(&feats, p_in.len())?;
        Ok(t.iter().map(|&v| 0.5 * self.output_scale * (v + 1.0)).collect())
    }

    pub fn eval(&self, p_in: f64) -> Result<f64> {
        Ok(self.eval_many(&[p_in])?[0])
    }

    /// Differentiable `P_del` for a column of input powers; the network is
    /// bound as constants so no harvester parameter receives a gradient.
    pub fn forward(&self, tape: &mut Tape, p_in: Var) -> Result<Var> {
        let z = tape.scale(p_in, self.input_scale);
        let z = tape.shift(z, self.input_offset);
        let t = self.net.forward(tape, z, None)?;
        let t = tape.shift(t, 1.0);
        Ok(tape.scale(t, 0.5 * self.output_scale))
    }
}

impl Parameterized for EhModel {
    fn params(&self) -> Vec<(String, &Tensor)> {
        self.net.params()
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.net.params_mut()
    }
}

/// Sampling of the fit and hold-out grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EhFitConfig {
    pub oracle: EhOracle,
    /// Dense grid covers `[0, range_factor·b]`.
    pub range_factor: f64,
    pub grid_points: usize,
    /// Extra inputs in the saturation region, as multiples of `b`.
    pub saturation_factors: Vec<f64>,
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub max_steps: usize,
    /// Required hold-out max error as a fraction of `p_max`.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for EhFitConfig {
    fn default() -> Self {
        Self {
            oracle: EhOracle::default(),
            range_factor: 5.0,
            grid_points: 201,
            saturation_factors: vec![6.0, 8.0, 10.0, 15.0, 20.0, 30.0],
            hidden: vec![16, 16],
            learning_rate: 0.01,
            max_steps: 20_000,
            tolerance: 0.02,
            seed: 0,
        }
    }
}

impl EhFitConfig {
    fn train_inputs(&self) -> Vec<f64> {
        let hi = self.range_factor * self.oracle.b;
        let n = self.grid_points.max(2);
        let mut x: Vec<f64> = (0..n).map(|i| hi * i as f64 / (n - 1) as f64).collect();
        x.extend(self.saturation_factors.iter().map(|f| f * self.oracle.b));
        x
    }

    /// Hold-out inputs: midpoints of the training grid plus the saturation set.
    pub fn holdout_inputs(&self) -> Vec<f64> {
        let hi = self.range_factor * self.oracle.b;
        let n = 4 * self.grid_points.max(2) + 1;
        let mut x: Vec<f64> = (0..n).map(|i| hi * (i as f64 + 0.37) / n as f64).collect();
        x.push(0.0);
        x.extend(self.saturation_factors.iter().map(|f| f * 1.01 * self.oracle.b));
        x
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EhFitReport {
    pub steps: usize,
    pub max_abs_error_mw: f64,
    pub max_rel_error: f64,
    pub final_mse: f64,
    pub converged: bool,
}

/// Max |model − oracle| over `inputs`, in mW.
pub fn max_abs_error(model: &EhModel, inputs: &[f64]) -> Result<f64> {
    let pred = model.eval_many(inputs)?;
    inputs
        .iter()
        .zip(&pred)
        .map(|(&p, &m)| Ok((m - model.oracle.eval(p)?).abs()))
        .try_fold(0.0f64, |acc, e: Result<f64>| Ok(acc.max(e?)))
}

/// Least-squares Adam fit of the tanh surrogate. The returned model is
/// frozen; `converged` reports whether the hold-out tolerance was met.
pub fn fit(cfg: &EhFitConfig) -> Result<(EhModel, EhFitReport)> {
    cfg.oracle.validate()?;
    if !(cfg.range_factor > 0.0 && cfg.tolerance > 0.0) {
        return Err(Error::Config("fit range and tolerance must be positive".into()));
    }
    let mut rng = stream_rng(cfg.seed, streams::EH_FIT, 0);
    let mut widths = vec![1];
    widths.extend_from_slice(&cfg.hidden);
    widths.push(1);
    let acts = vec![Activation::Tanh; cfg.hidden.len() + 1];
    let net = NetworkParams::init(&widths, &acts, &mut rng)?;
    let hi = cfg.range_factor * cfg.oracle.b;
    let mut model = EhModel::new(net, 2.0 / hi, -1.0, cfg.oracle)?;

    let xs = cfg.train_inputs();
    let ys: Vec<f64> = xs.iter().map(|&p| cfg.oracle.eval(p)).collect::<Result<_>>()?;
    let holdout = cfg.holdout_inputs();
    let p_max = cfg.oracle.p_max_mw;
    let target: Vec<f64> = ys.iter().map(|y| 2.0 * y / p_max - 1.0).collect();
    let feats: Vec<f64> = xs.iter().map(|&p| model.feature(p)).collect();
    let rows = xs.len();

    let mut opt = OptimizerState::adam(cfg.learning_rate);
    let mut mse = f64::NAN;
    let mut steps = 0;
    let check_every = 500;
    let mut max_err = f64::INFINITY;
    while steps < cfg.max_steps {
        let mut tape = Tape::new();
        let x = tape.constant(rows, 1, feats.clone());
        let t = model.net.forward(&mut tape, x, Some(0))?;
        let y = tape.constant(rows, 1, target.clone());
        let d = tape.sub(t, y)?;
        let sq = tape.square(d);
        let loss = tape.mean(sq);
        mse = tape.scalar(loss);
        tape.backward(loss)?;
        model.net.absorb_grads(&tape);
        opt.step(&mut model.net)?;
        steps += 1;
        if steps % check_every == 0 {
            max_err = max_abs_error(&model, &holdout)?;
            // stop once comfortably inside the tolerance
            if max_err < 0.25 * cfg.tolerance * p_max {
                break;
            }
        }
    }
    if steps % check_every != 0 {
        max_err = max_abs_error(&model, &holdout)?;
    }
    model.frozen = true;
    let report = EhFitReport {
        steps,
        max_abs_error_mw: max_err,
        max_rel_error: max_err / p_max,
        final_mse: mse,
        converged: max_err < cfg.tolerance * p_max,
    };
    Ok((model, report))
}
