//! Central finite-difference gradient checking.
//!
//! Only forward evaluations are used for the numeric side, so the check is
//! independent of every backward rule it verifies.

use alloc::vec::Vec;

use super::{Tape, Tensor, TensorError, Var};

/// Result of checking one leaf.
#[derive(Debug, Clone)]
pub struct LeafCheck {
    /// Entries that were perturbed.
    pub checked: usize,
    /// `‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂)` over the checked entries
    /// (zero when both are exactly zero).
    pub relative_error: f64,
}

/// Compares backward gradients of a scalar loss against central differences
/// `(f(x + ε) − f(x − ε)) / 2ε`.
///
/// `build` must record the loss on the supplied tape given one `Var` per leaf.
/// When `max_entries` is `Some(k)`, only `k` evenly spaced entries per leaf are
/// perturbed.
pub fn check_gradients<F>(
    leaves: &[Tensor<f64>],
    eps: f64,
    max_entries: Option<usize>,
    build: F,
) -> Result<Vec<LeafCheck>, TensorError>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, TensorError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = leaves.iter().map(|l| tape.param(l.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| tape.grad(v).expect("leaf grad")).collect();

    let eval = |perturbed: &[Tensor<f64>]| -> Result<f64, TensorError> {
        let mut t = Tape::new();
        let vs: Vec<Var> = perturbed.iter().map(|l| t.constant(l.clone())).collect();
        let l = build(&mut t, &vs)?;
        Ok(t.value(l).item().unwrap_or(f64::NAN))
    };

    let mut out = Vec::with_capacity(leaves.len());
    let mut work: Vec<Tensor<f64>> = leaves.to_vec();
    for (li, leaf) in leaves.iter().enumerate() {
        let n = leaf.len();
        let picks: Vec<usize> = match max_entries {
            Some(k) if k < n => (0..k).map(|i| i * n / k).collect(),
            _ => (0..n).collect(),
        };
        let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        for &e in &picks {
            let orig = leaf.data()[e];
            work[li].data_mut()[e] = orig + eps;
            let plus = eval(&work)?;
            work[li].data_mut()[e] = orig - eps;
            let minus = eval(&work)?;
            work[li].data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[li].data()[e];
            diff2 += (a - numeric) * (a - numeric);
            a2 += a * a;
            n2 += numeric * numeric;
        }
        let denom = libm_sqrt(a2).max(libm_sqrt(n2));
        let relative_error = if denom == 0.0 { 0.0 } else { libm_sqrt(diff2) / denom };
        out.push(LeafCheck {
            checked: picks.len(),
            relative_error,
        });
    }
    Ok(out)
}

fn libm_sqrt(x: f64) -> f64 {
    num_traits::Float::sqrt(x)
}
