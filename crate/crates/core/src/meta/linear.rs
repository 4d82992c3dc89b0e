use crate::error::{Error, Result};
use crate::grad::{Tape, Var};

/// Per-step mixing weights of the linear-combination baseline.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearMetaParams {
    pub alpha: Vec<f64>,
}

impl LinearMetaParams {
    /// All weight on the most recent model, so the untrained combiner serves
    /// the latest snapshot.
    pub fn last_one_hot(k: usize) -> Self {
        let mut alpha = vec![0.0; k];
        if let Some(a) = alpha.last_mut() {
            *a = 1.0;
        }
        LinearMetaParams { alpha }
    }
}

/// `sum_i alpha_i * window_i`, coordinate by coordinate.
pub fn linear_combine(alpha: &[f64], window: &[&[f64]]) -> Result<Vec<f64>> {
    if alpha.len() != window.len() || window.is_empty() {
        return Err(Error::Invalid(format!(
            "{} mixing weights for {} models",
            alpha.len(),
            window.len()
        )));
    }
    let n = window[0].len();
    if window.iter().any(|w| w.len() != n) {
        return Err(Error::Invalid(
            "models in the window differ in length".into(),
        ));
    }
    Ok((0..n)
        .map(|c| {
            let mut acc = 0.0;
            for (a, w) in alpha.iter().zip(window) {
                acc += a * w[c];
            }
            acc
        })
        .collect())
}

/// Tape form of [`linear_combine`]: `columns` are `[C, 1]` inputs and
/// `alpha` is a `[k, 1]` node.
pub fn linear_combine_on_tape(tape: &mut Tape, alpha: Var, columns: &[Var]) -> Result<Var> {
    let stacked = tape.concat(columns)?;
    tape.matmul(stacked, alpha)
}
