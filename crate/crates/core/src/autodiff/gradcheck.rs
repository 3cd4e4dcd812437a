//! Central finite-difference verification of analytic gradients.

use super::{ParamStore, Tape, Var};
use crate::error::{Error, Result};

/// Added to the denominator of the relative error so that two exact zeros
/// compare equal.
const DENOM_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub max_relative_error: f64,
    pub max_abs_gradient: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub max_relative_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compares the tape gradient of `loss_fn` against central differences for
/// every trainable entry of `params`.
///
/// The difference quotient is the fourth-order central stencil
/// `(8 (f(x+h) - f(x-h)) - (f(x+2h) - f(x-2h))) / 12h`, which tolerates a step
/// large enough to keep cancellation error away from small gradient entries.
///
/// The relative error of one entry is
/// `|g_analytic - g_fd| / (|g_analytic| + |g_fd| + 1e-12)`; the check passes
/// when the maximum over all entries is below `tolerance`.
pub fn finite_difference_check<F>(
    loss_fn: F,
    params: &ParamStore,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::no_grad();
        let loss = loss_fn(&mut tape, store)?;
        let (rows, cols) = tape.shape(loss);
        if (rows, cols) != (1, 1) {
            return Err(Error::NonScalarLoss { rows, cols });
        }
        Ok(tape.value(loss).item())
    };

    let first = eval(params)?;
    let second = eval(params)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministicLoss { first, second });
    }

    let mut analytic = params.clone();
    analytic.zero_grad();
    {
        let mut tape = Tape::new();
        let loss = loss_fn(&mut tape, &analytic)?;
        tape.backward(loss, &mut analytic)?;
    }

    let mut work = params.clone();
    let mut checks = Vec::new();
    for id in params.ids() {
        let p = params.get(id);
        if !p.trainable {
            continue;
        }
        let mut worst = 0.0f64;
        let mut biggest = 0.0f64;
        for k in 0..p.value.len() {
            let original = p.value.as_slice()[k];
            let mut at = |offset: f64| -> Result<f64> {
                work.get_mut(id).value.as_mut_slice()[k] = original + offset;
                eval(&work)
            };
            let (p1, m1) = (at(step)?, at(-step)?);
            let (p2, m2) = (at(2.0 * step)?, at(-2.0 * step)?);
            work.get_mut(id).value.as_mut_slice()[k] = original;

            let fd = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * step);
            let ga = analytic.get(id).grad.as_slice()[k];
            let rel = (ga - fd).abs() / (ga.abs() + fd.abs() + DENOM_FLOOR);
            worst = worst.max(rel);
            biggest = biggest.max(ga.abs());
        }
        checks.push(ParamCheck {
            name: p.name.clone(),
            max_relative_error: worst,
            max_abs_gradient: biggest,
        });
    }

    let max_relative_error = checks.iter().map(|c| c.max_relative_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        params: checks,
        max_relative_error,
        tolerance,
        passed: max_relative_error < tolerance,
    })
}
