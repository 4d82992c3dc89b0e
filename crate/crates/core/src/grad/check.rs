use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

const GRAD_FLOOR: f64 = 1e-6;

/// Compares reverse-mode gradients against central differences.
///
/// `loss_fn` builds a scalar-valued graph on a fresh tape from the given
/// leaf variables. Returns the maximum over all coordinates of
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-6)`, so components
/// below `1e-6` are compared in absolute terms.
pub fn finite_diff_check<F>(loss_fn: F, leaves: &[Tensor], step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Invalid(format!(
            "finite-difference step must be > 0, got {step}"
        )));
    }

    let eval = |inputs: &[Tensor], probe: &dyn Fn() -> String| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = loss_fn(&mut tape, &vars)?;
        let v = tape
            .value(out)
            .item()
            .ok_or_else(|| Error::Invalid("loss_fn must return a scalar".into()))?;
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss(probe()));
        }
        Ok(v)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = leaves.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = loss_fn(&mut tape, &vars)?;
    let base = tape
        .value(out)
        .item()
        .ok_or_else(|| Error::Invalid("loss_fn must return a scalar".into()))?;
    if !base.is_finite() {
        return Err(Error::NonFiniteLoss("base point".into()));
    }
    let grads = tape.backward(out, Tensor::scalar(1.0))?;

    let mut worst: f64 = 0.0;
    let mut probe_inputs = leaves.to_vec();
    for (li, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var);
        for ci in 0..leaves[li].len() {
            let orig = leaves[li].data()[ci];
            probe_inputs[li].data_mut()[ci] = orig + step;
            let plus = eval(&probe_inputs, &|| format!("leaf {li} coord {ci} (+step)"))?;
            probe_inputs[li].data_mut()[ci] = orig - step;
            let minus = eval(&probe_inputs, &|| format!("leaf {li} coord {ci} (-step)"))?;
            probe_inputs[li].data_mut()[ci] = orig;

            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.data()[ci];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_FLOOR);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
