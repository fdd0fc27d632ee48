use serde::Serialize;

use crate::{ParameterStore, Result, Tape, TensorError, Var};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Maximum tolerated relative error per entry.
    pub tol: f64,
    /// Denominator floor for the relative error, so entries whose analytic and
    /// numeric gradients are both tiny are compared in absolute terms.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tol: 1e-4,
            floor: 1e-6,
        }
    }
}

impl GradCheckOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SlotReport {
    pub name: String,
    pub entries: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Largest analytic gradient magnitude seen in the slot.
    pub max_grad: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub slots: Vec<SlotReport>,
    pub tol: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.slots.iter().map(|s| s.max_rel_error).fold(0.0, f64::max)
    }

    pub fn slot(&self, name: &str) -> Option<&SlotReport> {
        self.slots.iter().find(|s| s.name == name)
    }
}

fn evaluate<F>(f: &F, params: &ParameterStore) -> Result<f64>
where
    F: Fn(&mut Tape, &ParameterStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = f(&mut tape, params)?;
    let v = tape.value(out);
    if v.shape() != (1, 1) {
        return Err(TensorError::Contract(format!(
            "function must produce a scalar, got {:?}",
            v.shape()
        )));
    }
    Ok(v[(0, 0)])
}

/// Compares the tape's analytic gradient of the scalar built by `f` against a
/// central finite difference for every entry of every slot in `params`.
///
/// Frozen slots are not perturbed; their analytic gradient must be exactly
/// zero. Relative error is `|analytic − numeric| / max(|analytic|, |numeric|, floor)`.
pub fn grad_check<F>(f: F, params: &ParameterStore, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParameterStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = f(&mut tape, params)?;
    if tape.value(out).shape() != (1, 1) {
        return Err(TensorError::Contract(format!(
            "function must produce a scalar, got {:?}",
            tape.value(out).shape()
        )));
    }
    let grads = tape.backward(out)?;
    let mut analytic = params.clone();
    analytic.zero_grads();
    tape.accumulate_param_grads(&grads, &mut analytic)?;

    let mut probe = params.clone();
    let mut slots = Vec::new();
    for (name, slot) in params.iter() {
        let analytic_grad = analytic.grad(name)?.clone();
        let mut report = SlotReport {
            name: name.to_string(),
            entries: slot.value.data().len(),
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            max_grad: 0.0,
        };
        if slot.frozen {
            // detached: the analytic gradient must be exactly zero
            let max_grad = analytic_grad.data().iter().fold(0.0f64, |m, g| m.max(g.abs()));
            report.max_grad = max_grad;
            if max_grad != 0.0 {
                report.max_abs_error = max_grad;
                report.max_rel_error = f64::INFINITY;
            }
            slots.push(report);
            continue;
        }
        for k in 0..slot.value.data().len() {
            let original = slot.value.data()[k];
            probe.value_mut(name)?.data_mut()[k] = original + opts.step;
            let up = evaluate(&f, &probe)?;
            probe.value_mut(name)?.data_mut()[k] = original - opts.step;
            let down = evaluate(&f, &probe)?;
            probe.value_mut(name)?.data_mut()[k] = original;

            let numeric = (up - down) / (2.0 * opts.step);
            let a = analytic_grad.data()[k];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(opts.floor);
            report.max_abs_error = report.max_abs_error.max(abs);
            report.max_rel_error = report.max_rel_error.max(rel);
            report.max_grad = report.max_grad.max(a.abs());
        }
        slots.push(report);
    }
    let passed = slots.iter().all(|s| s.max_rel_error <= opts.tol);
    Ok(GradCheckReport {
        slots,
        tol: opts.tol,
        passed,
    })
}
