//! Zero-order-hold discretisation of a diagonal continuous-time system.

use crate::error::{Error, Result};

/// Below this `|ΔA|` the input coefficient switches to its series form.
pub const SERIES_THRESHOLD: f64 = 1e-6;

/// Discrete coefficients for a single (token, channel, state) triple.
///
/// Returns `(Ā, φ)` with `Ā = exp(ΔA)` and `B̄ = φ·B`, where
/// `φ = (exp(ΔA) − 1) / A` (equivalently `(ΔA)⁻¹(exp(ΔA) − 1)·Δ`).
#[inline]
pub fn zoh(a: f64, delta: f64) -> (f64, f64) {
    let u = delta * a;
    let a_bar = u.exp();
    let phi = if u.abs() < SERIES_THRESHOLD { delta * (1.0 + 0.5 * u) } else { u.exp_m1() / a };
    (a_bar, phi)
}

/// Partial derivatives `(∂φ/∂Δ, ∂φ/∂A)` of the input coefficient from [`zoh`].
#[inline]
pub fn zoh_phi_grad(a: f64, delta: f64, a_bar: f64) -> (f64, f64) {
    let u = delta * a;
    if u.abs() < SERIES_THRESHOLD {
        (1.0 + u, 0.5 * delta * delta)
    } else if u.abs() < 1e-3 {
        // (u·eᵘ − (eᵘ − 1)) / a² cancels badly here; use its expansion in u.
        (a_bar, delta * delta * (0.5 + u / 3.0 + u * u / 8.0 + u * u * u / 30.0))
    } else {
        (a_bar, (u * a_bar - u.exp_m1()) / (a * a))
    }
}

pub(crate) fn check_stable(a: &[f64]) -> Result<()> {
    match a.iter().position(|&v| !(v < 0.0)) {
        Some(i) => Err(Error::Stability(format!("state matrix entry {i} is {} (must be negative)", a[i]))),
        None => Ok(()),
    }
}

pub(crate) fn check_positive_delta(delta: &[f64]) -> Result<()> {
    match delta.iter().position(|&v| !(v > 0.0)) {
        Some(i) => Err(Error::contract(format!("step size {i} is {} (must be positive)", delta[i]))),
        None => Ok(()),
    }
}

/// Discretised coefficients laid out as `(batch, token, channel, state)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Discretized {
    pub a_bar: Vec<f64>,
    pub b_bar: Vec<f64>,
    pub batch: usize,
    pub len: usize,
    pub channels: usize,
    pub state: usize,
}

impl Discretized {
    pub fn index(&self, b: usize, l: usize, c: usize, n: usize) -> usize {
        ((b * self.len + l) * self.channels + c) * self.state + n
    }
}

/// Elementwise ZOH for diagonal `a` of shape `(channels, state)`, input
/// matrix `b` of shape `(batch, len, state)` and step sizes `delta` of
/// shape `(batch, len, channels)`.
pub fn discretize(
    a: &[f64],
    b: &[f64],
    delta: &[f64],
    batch: usize,
    len: usize,
    channels: usize,
    state: usize,
) -> Result<Discretized> {
    if a.len() != channels * state || b.len() != batch * len * state || delta.len() != batch * len * channels {
        return Err(Error::shape(format!(
            "discretize: A has {}, B has {}, Δ has {} entries for batch {batch}, length {len}, {channels} channels, {state} states",
            a.len(),
            b.len(),
            delta.len()
        )));
    }
    check_stable(a)?;
    check_positive_delta(delta)?;
    let total = batch * len * channels * state;
    let mut out = Discretized { a_bar: vec![0.0; total], b_bar: vec![0.0; total], batch, len, channels, state };
    for bi in 0..batch {
        for l in 0..len {
            for c in 0..channels {
                let d = delta[(bi * len + l) * channels + c];
                for n in 0..state {
                    let (a_bar, phi) = zoh(a[c * state + n], d);
                    let i = out.index(bi, l, c, n);
                    out.a_bar[i] = a_bar;
                    out.b_bar[i] = phi * b[(bi * len + l) * state + n];
                }
            }
        }
    }
    if let Some(i) = out.a_bar.iter().chain(&out.b_bar).position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "discretize", node: Some(i) });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one(a: f64, b: f64, delta: f64) -> (f64, f64) {
        let d = discretize(&[a], &[b], &[delta], 1, 1, 1, 1).unwrap();
        (d.a_bar[0], d.b_bar[0])
    }

    #[test]
    fn half_decay() {
        let (a_bar, b_bar) = one(-1.0, 1.0, 2f64.ln());
        assert!((a_bar - 0.5).abs() < 1e-12);
        assert!((b_bar - 0.5).abs() < 1e-12);
    }

    #[test]
    fn stronger_decay() {
        let (a_bar, b_bar) = one(-2.0, 1.0, 1.0);
        assert!((a_bar - (-2f64).exp()).abs() < 1e-12);
        assert!((a_bar - 0.1353).abs() < 1e-4);
        assert!((b_bar - 0.4323).abs() < 1e-4);
    }

    #[test]
    fn series_branch_near_zero() {
        // Δ = 0.1 and |ΔA| = 1e-12
        let (a_bar, b_bar) = one(-1e-11, 2.0, 0.1);
        assert!((a_bar - 1.0).abs() < 1e-11);
        assert!((b_bar - 0.2).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert!(matches!(discretize(&[0.0], &[1.0], &[1.0], 1, 1, 1, 1), Err(Error::Stability(_))));
        assert!(matches!(discretize(&[0.5], &[1.0], &[1.0], 1, 1, 1, 1), Err(Error::Stability(_))));
        assert!(matches!(discretize(&[-1.0], &[1.0], &[0.0], 1, 1, 1, 1), Err(Error::Contract(_))));
        assert!(matches!(discretize(&[-1.0], &[1.0], &[1.0], 1, 2, 1, 1), Err(Error::Shape(_))));
    }

    #[test]
    fn phi_derivatives_match_differences() {
        for &(a, d) in &[(-1.3, 0.7), (-2e-4, 0.9), (-1e-8, 0.5), (-15.0, 0.01)] {
            let (a_bar, _) = zoh(a, d);
            let (gd, ga) = zoh_phi_grad(a, d, a_bar);
            let h = 1e-6 * d;
            let nd = (zoh(a, d + h).1 - zoh(a, d - h).1) / (2.0 * h);
            let ha = (1e-6 * a.abs()).max(1e-10);
            let na = (zoh(a + ha, d).1 - zoh(a - ha, d).1) / (2.0 * ha);
            assert!((gd - nd).abs() <= 1e-6 * nd.abs().max(1.0), "{a} {d}: {gd} vs {nd}");
            assert!((ga - na).abs() <= 1e-5 * na.abs().max(1e-3), "{a} {d}: {ga} vs {na}");
        }
    }

    proptest! {
        #[test]
        fn decay_lies_in_unit_interval(a in -50.0f64..-1e-3, d in 1e-3f64..5.0) {
            let (a_bar, _) = one(a, 1.0, d);
            prop_assert!(a_bar > 0.0 && a_bar < 1.0);
        }

        #[test]
        fn input_coefficient_is_positive_and_below_step(a in -50.0f64..-1e-3, d in 1e-3f64..5.0) {
            // φ = (1 − e^{ΔA}) / |A| lies in (0, Δ) for A < 0.
            let (_, phi) = zoh(a, d);
            prop_assert!(phi > 0.0 && phi <= d);
        }
    }
}
