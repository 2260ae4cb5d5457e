//! Finite-difference gradient checking.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ParamSet;

/// Outcome of a gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub entries_checked: usize,
}

/// Compares an analytic gradient against central finite differences over a
/// sampled subset of parameter entries.
///
/// `loss_fn` is re-evaluated with individual entries perturbed by ±epsilon;
/// the analytic gradient must be laid out in the model's parameter order.
/// Gradients below the double-precision noise floor are treated as matching.
pub fn grad_check<M, F>(
    model: &mut M,
    loss_fn: F,
    analytic: &[ndarray::Array2<f64>],
    epsilon: f64,
    max_entries_per_param: usize,
    seed: u64,
) -> GradCheckReport
where
    M: ParamSet,
    F: Fn(&M) -> f64,
{
    assert_eq!(
        analytic.len(),
        model.params().len(),
        "analytic gradient count must match parameter count"
    );
    let names = model.param_names();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        entries_checked: 0,
    };

    for (pi, grad) in analytic.iter().enumerate() {
        let (rows, cols) = grad.dim();
        let total = rows * cols;
        let mut idx: Vec<usize> = (0..total).collect();
        if total > max_entries_per_param {
            idx.shuffle(&mut rng);
            idx.truncate(max_entries_per_param);
        }
        for flat in idx {
            let (i, j) = (flat / cols, flat % cols);
            let original = model.params()[pi][[i, j]];

            model.params_mut()[pi][[i, j]] = original + epsilon;
            let plus = loss_fn(model);
            model.params_mut()[pi][[i, j]] = original - epsilon;
            let minus = loss_fn(model);
            model.params_mut()[pi][[i, j]] = original;

            let fd = (plus - minus) / (2.0 * epsilon);
            let an = grad[[i, j]];
            let rel = if fd.abs() < 1e-7 && an.abs() < 1e-7 {
                0.0
            } else {
                (fd - an).abs() / fd.abs().max(an.abs()).max(1e-7)
            };
            report.entries_checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_param = format!("{}[{},{}]", names[pi], i, j);
            }
        }
    }
    report
}
