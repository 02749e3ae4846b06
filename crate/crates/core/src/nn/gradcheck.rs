use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use super::{Parameterized, Tape, Var};
use crate::Result;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Central-difference half step.
    pub step: f64,
    /// Denominator floor for the relative error.
    pub floor: f64,
    /// Pass threshold recorded in the report.
    pub tolerance: f64,
    /// Check `count` random coordinates drawn with `seed` instead of all.
    pub sample: Option<(usize, u64)>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            floor: 1e-6,
            tolerance: 1e-5,
            sample: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckEntry {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    /// Coordinates whose stencil crossed a non-smooth point.
    pub excluded: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn checked(&self) -> usize {
        self.entries.len()
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }

    pub fn worst(&self) -> Option<&GradCheckEntry> {
        self.entries
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

/// Compares tape gradients of `loss_fn` with central differences.
///
/// `loss_fn` must bind the model parameters to their slots (their position
/// in [`Parameterized::params`]) and return a scalar. A coordinate is
/// excluded when the branch digest at `θ ± step` differs from the one at `θ`:
/// the stencil then straddles a kink and the difference quotient is not a
/// derivative estimate.
pub fn grad_check<M, F>(model: &mut M, mut loss_fn: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    M: Parameterized,
    F: FnMut(&M, &mut Tape) -> Result<Var>,
{
    let mut tape = Tape::with_branch_tracking();
    let loss = loss_fn(model, &mut tape)?;
    let base_digest = tape.branch_digest().map(|d| d.value());
    tape.backward(loss)?;

    let layout: Vec<(String, usize)> = model.params().into_iter().map(|(n, t)| (n, t.len())).collect();
    let analytic: Vec<Vec<f64>> = layout
        .iter()
        .enumerate()
        .map(|(slot, (_, len))| tape.param_grad(slot).unwrap_or_else(|| vec![0.0; *len]))
        .collect();
    drop(tape);

    let all: Vec<(usize, usize)> = layout
        .iter()
        .enumerate()
        .flat_map(|(s, (_, len))| (0..*len).map(move |i| (s, i)))
        .collect();

    let mut report = GradCheckReport {
        tolerance: opts.tolerance,
        ..Default::default()
    };
    if all.is_empty() {
        return Ok(report);
    }

    let (target, mut order) = match opts.sample {
        None => (all.len(), all.clone()),
        Some((count, seed)) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = all.len() as u64;
            let draws = (0..count.saturating_mul(20))
                .map(|_| all[(rng.next_u64() % n) as usize])
                .collect();
            (count, draws)
        }
    };
    order.reverse();

    let mut evaluate = |model: &M| -> Result<(f64, Option<u64>)> {
        let mut t = Tape::with_branch_tracking();
        let l = loss_fn(model, &mut t)?;
        Ok((t.scalar(l), t.branch_digest().map(|d| d.value())))
    };

    while report.entries.len() < target {
        let Some((slot, idx)) = order.pop() else { break };
        let original = model.params()[slot].1.values()[idx];
        set_coord(model, slot, idx, original + opts.step);
        let plus = evaluate(model);
        set_coord(model, slot, idx, original - opts.step);
        let minus = evaluate(model);
        set_coord(model, slot, idx, original);
        let ((fp, dp), (fm, dm)) = (plus?, minus?);
        if dp != base_digest || dm != base_digest {
            report.excluded += 1;
            continue;
        }
        let numeric = (fp - fm) / (2.0 * opts.step);
        let a = analytic[slot][idx];
        let rel_error = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
        report.max_rel_error = report.max_rel_error.max(rel_error);
        report.entries.push(GradCheckEntry {
            param: layout[slot].0.clone(),
            index: idx,
            analytic: a,
            numeric,
            rel_error,
        });
    }
    Ok(report)
}

fn set_coord<M: Parameterized>(model: &mut M, slot: usize, idx: usize, value: f64) {
    let mut params = model.params_mut();
    params[slot].1.values_mut()[idx] = value;
}
