//! Central finite-difference gradient checking against tape replays.

use super::{Tape, Var};
use crate::error::{Error, Result};

/// Denominator floor for the relative error, so that gradients that are
/// zero up to roundoff do not register as large relative discrepancies.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// `|a − b| / max(|a|, |b|, REL_ERROR_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERROR_FLOOR)
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Leaf and flat element index of the worst entry.
    pub worst: Option<(Var, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Compare tape gradients of `loss` w.r.t. every element of `leaves` with
/// central differences `(L(x+ε) − L(x−ε)) / 2ε`, re-evaluated by replaying
/// the tape. Runs `backward` first if it has not run yet.
pub fn check_gradients(tape: &mut Tape, loss: Var, leaves: &[Var], eps: f64) -> Result<GradCheckReport> {
    if leaves.iter().any(|&l| !tape.requires_grad(l)) {
        return Err(Error::InvalidArgument(
            "gradient check on a leaf without requires_grad".into(),
        ));
    }
    if tape.grad(leaves[0]).is_none() {
        tape.backward(loss)?;
    }
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for &leaf in leaves {
        let analytic: Vec<f64> = tape.grad(leaf).map(<[f64]>::to_vec).unwrap_or_default();
        for (j, &a) in analytic.iter().enumerate() {
            let orig = tape.value(leaf).data()[j];
            tape.leaf_data_mut(leaf)[j] = orig + eps;
            tape.replay();
            let plus = tape.scalar(loss);
            tape.leaf_data_mut(leaf)[j] = orig - eps;
            tape.replay();
            let minus = tape.scalar(loss);
            tape.leaf_data_mut(leaf)[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((leaf, j));
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    tape.replay();
    Ok(report)
}
