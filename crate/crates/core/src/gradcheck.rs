//! Finite-difference checks of tape gradients.

use crate::error::{Error, Result};
use crate::tensor::{Ctx, ParamId, ParamStore, Tensor};

/// Floor of the relative-error denominator.
pub const REL_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat coordinate of the worst disagreement.
    pub worst: Option<(String, usize)>,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub coordinates: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Numeric derivative estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scheme {
    /// `(f(p+ε) − f(p−ε)) / 2ε`
    #[default]
    Central,
    /// Central differences at `ε` and `ε/2` combined as `(4·D(ε/2) − D(ε)) / 3`,
    /// cancelling the `ε²` truncation term. Deep compositions with sharp
    /// curvature need this to resolve tiny gradient coordinates, since no
    /// single central step is small enough for truncation yet large enough
    /// to stay clear of rounding noise.
    Richardson,
    /// Ridders' extrapolation: central differences at `ε, ε/2, ε/4, …`
    /// (at most [`RIDDERS_LEVELS`] of them) fill a Neville tableau of
    /// `h²`-eliminating extrapolations. Each entry carries an error estimate,
    /// namely its disagreement with the two entries it was built from plus the
    /// rounding noise `ε_mach · |f| / h` of its step, and the entry with the
    /// smallest estimate is returned. The search stops early once that
    /// estimate falls below `RIDDERS_STOP` relative to the estimate, or once
    /// the rounding noise of the next step alone would exceed it.
    ///
    /// Coordinates that barely move the function then get large steps, where
    /// rounding is negligible, while sharply curved ones descend to small
    /// steps. The choice depends only on function values.
    Ridders,
}

/// Maximum number of step halvings tried by [`Scheme::Ridders`].
pub const RIDDERS_LEVELS: usize = 18;
/// Relative error estimate at which [`Scheme::Ridders`] stops halving.
pub const RIDDERS_STOP: f64 = 1e-7;

/// Central-difference check; see [`grad_check_with`].
pub fn grad_check<F>(store: &mut ParamStore, f: F, epsilon: f64, only: Option<&[ParamId]>) -> Result<GradCheckReport>
where
    F: Fn(&Ctx) -> Result<Tensor>,
{
    grad_check_with(store, f, epsilon, Scheme::Central, only)
}

/// Evaluates `f` on a recording tape for the analytic gradient and compares
/// every coordinate of every parameter in `store` (or only `only`, when
/// given) against the numeric derivative of `scheme` with step `ε`.
///
/// Parameter values are restored and gradients reset to zero on return.
pub fn grad_check_with<F>(
    store: &mut ParamStore,
    f: F,
    epsilon: f64,
    scheme: Scheme,
    only: Option<&[ParamId]>,
) -> Result<GradCheckReport>
where
    F: Fn(&Ctx) -> Result<Tensor>,
{
    if !(epsilon > 0.0) {
        return Err(Error::contract("grad_check epsilon must be positive"));
    }
    store.zero_grad();
    let recorded = {
        let loss = f(&Ctx::new(store))?;
        let v = loss.item()?;
        loss.backward(store)?;
        v
    };
    let eval = |store: &ParamStore| -> Result<f64> { f(&Ctx::no_grad(store))?.item() };
    let base = eval(store)?;
    if base.to_bits() != eval(store)?.to_bits() || (base - recorded).abs() > 1e-12 * base.abs().max(1.0) {
        return Err(Error::Unreliable(format!(
            "function is not deterministic (recorded {recorded}, replays {base})"
        )));
    }

    let ids: Vec<ParamId> = match only {
        Some(ids) => ids.to_vec(),
        None => store.ids().collect(),
    };
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        coordinates: 0,
    };
    for id in ids {
        let analytic = store.get(id).grad.clone();
        for (i, &a) in analytic.iter().enumerate() {
            let mut central = |e: f64| -> Result<f64> {
                let orig = store.get(id).value[i];
                store.get_mut(id).value[i] = orig + e;
                let plus = eval(store);
                store.get_mut(id).value[i] = orig - e;
                let minus = eval(store);
                store.get_mut(id).value[i] = orig;
                Ok((plus? - minus?) / (2.0 * e))
            };
            let numeric = match scheme {
                Scheme::Central => central(epsilon)?,
                Scheme::Richardson => (4.0 * central(0.5 * epsilon)? - central(epsilon)?) / 3.0,
                Scheme::Ridders => ridders(&mut central, epsilon, base.abs().max(1.0))?,
            };
            let err = relative_error(a, numeric);
            report.coordinates += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((store.get(id).name.clone(), i));
                report.analytic_at_worst = a;
                report.numeric_at_worst = numeric;
            }
        }
    }
    store.zero_grad();
    Ok(report)
}

fn ridders(central: &mut impl FnMut(f64) -> Result<f64>, epsilon: f64, scale: f64) -> Result<f64> {
    let mut prev: Vec<f64> = Vec::new();
    let mut best = f64::NAN;
    let mut best_err = f64::INFINITY;
    let mut h = epsilon;
    for level in 0..RIDDERS_LEVELS {
        let noise = f64::EPSILON * scale / h;
        let mut row = vec![central(h)?];
        let mut factor = 1.0;
        for j in 1..=level {
            factor *= 4.0;
            let v = (factor * row[j - 1] - prev[j - 1]) / (factor - 1.0);
            let err = (v - row[j - 1]).abs().max((v - prev[j - 1]).abs()) + noise;
            if err < best_err {
                best = v;
                best_err = err;
            }
            row.push(v);
        }
        let converged = best_err <= RIDDERS_STOP * best.abs().max(REL_FLOOR);
        if level > 0 && (converged || 2.0 * noise >= best_err) {
            break;
        }
        prev = row;
        h *= 0.5;
    }
    Ok(best)
}
