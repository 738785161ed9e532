//! Central finite-difference checks of the tape gradients.
//!
//! The numeric side only evaluates forward losses on perturbed copies of the
//! parameter store; it never touches the backward pass.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::{Example, NerMrcModel};

/// Denominator floor so that gradients near zero are compared absolutely.
pub const REL_FLOOR: f64 = 1e-6;
pub const DEFAULT_STEP: f64 = 1e-5;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub max_rel_error: f64,
    /// (tensor, flat index, analytic, numeric) of the worst entry.
    pub worst: Option<(String, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn checked(&self) -> usize {
        self.tensors.iter().map(|t| t.checked).sum()
    }
}

/// Compares analytic loss gradients against central differences.
/// `max_per_tensor` limits how many entries of each tensor are perturbed;
/// `None` checks every entry.
pub fn check_model(
    model: &NerMrcModel,
    example: &Example,
    step: f64,
    max_per_tensor: Option<usize>,
    seed: u64,
) -> Result<GradCheckReport> {
    let (_, grads) = model.loss_and_grads(example)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = model.clone();
    let mut report = GradCheckReport {
        tensors: Vec::new(),
        max_rel_error: 0.0,
        worst: None,
    };
    for id in model.store.ids() {
        let len = model.store.get(id).len();
        let cols = model.store.get(id).ncols();
        let indices: Vec<usize> = match max_per_tensor {
            Some(n) if n < len => {
                let mut v = sample(&mut rng, len, n).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..len).collect(),
        };
        let mut worst_here: f64 = 0.0;
        for &flat in &indices {
            let (r, c) = (flat / cols, flat % cols);
            let original = model.store.get(id)[[r, c]];
            probe.store.get_mut(id)[[r, c]] = original + step;
            let plus = probe.loss(example)?;
            probe.store.get_mut(id)[[r, c]] = original - step;
            let minus = probe.loss(example)?;
            probe.store.get_mut(id)[[r, c]] = original;
            let numeric = (plus - minus) / (2.0 * step);
            let analytic = grads[id.0].as_ref().map_or(0.0, |g| g[[r, c]]);
            let err = relative_error(analytic, numeric);
            worst_here = worst_here.max(err);
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((model.store.name(id).to_string(), flat, analytic, numeric));
            }
        }
        report.tensors.push(TensorCheck {
            name: model.store.name(id).to_string(),
            checked: indices.len(),
            max_rel_error: worst_here,
        });
    }
    Ok(report)
}
