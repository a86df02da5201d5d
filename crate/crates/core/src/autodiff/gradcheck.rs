//! Finite-difference gradient checking in f64.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{ops, Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-4;

/// Gradient entries smaller than this are compared on an absolute scale.
pub const REL_FLOOR: f64 = 1e-3;

/// `|a - n| / max(|a|, |n|, REL_FLOOR)`.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub name: String,
    /// Number of (input, entry) pairs perturbed.
    pub checked: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

/// Compares reverse-mode gradients of `sum(R * f(inputs))` against central
/// differences, with `R` a fixed random projection.
///
/// At most `max_entries` entries per input are perturbed (chosen at random);
/// `None` checks all of them.
pub fn check<F>(
    name: &str,
    inputs: &[Tensor<f64>],
    f: F,
    seed: u64,
    max_entries: Option<usize>,
) -> Result<GradCheckReport>
where
    F: Fn(&[Var<f64>]) -> Result<Var<f64>>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let consts: Vec<Var<f64>> = inputs.iter().map(|t| Var::constant(t.clone())).collect();
    let probe = f(&consts)?;
    let r = Var::constant(Tensor::<f64>::randn(probe.shape().to_vec(), 1.0, &mut rng));
    drop(probe);

    let objective = |vars: &[Var<f64>]| -> Result<Var<f64>> { ops::sum(&ops::mul(&f(vars)?, &r)?) };

    let tape = Tape::new();
    let leaves: Vec<Var<f64>> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = objective(&leaves)?;
    let grads = tape.backward(&loss)?;

    let mut report = GradCheckReport {
        name: name.to_string(),
        checked: 0,
        max_rel_error: 0.0,
        max_abs_error: 0.0,
    };
    let eval = |vars: &[Var<f64>]| -> Result<f64> { Ok(objective(vars)?.value().item()) };
    for (i, leaf) in leaves.iter().enumerate() {
        let n = inputs[i].len();
        let zero = Tensor::zeros(inputs[i].shape().to_vec());
        let analytic = grads.get(leaf).unwrap_or(&zero);
        let entries: Vec<usize> = match max_entries {
            Some(m) if m < n => sample(&mut rng, n, m).into_vec(),
            _ => (0..n).collect(),
        };
        for j in entries {
            let at = |delta: f64| -> Result<f64> {
                let mut vars = consts.clone();
                let mut t = inputs[i].clone();
                t.data_mut()[j] += delta;
                vars[i] = Var::constant(t);
                eval(&vars)
            };
            let numeric = (at(FD_STEP)? - at(-FD_STEP)?) / (2.0 * FD_STEP);
            let a = analytic.data()[j];
            report.checked += 1;
            report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
            report.max_rel_error = report.max_rel_error.max(rel_error(a, numeric));
        }
    }
    Ok(report)
}
