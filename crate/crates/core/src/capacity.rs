//! Ergodic-capacity functionals (natural log, nats per channel use).
//!
//! Every quantity is a sample mean over the same ensemble the solvers use, so
//! constraint values and reported capacities agree exactly.

use crate::error::{Error, Result};
use crate::fading::FadingEnsemble;

/// A PU/SU ergodic-capacity pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapacityPoint {
    pub c_p: f64,
    pub c_s: f64,
}

/// Rate bounds of the auxiliary two-user MAC in which both receivers are
/// co-located and decode jointly, for one fixed pair of power policies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MacBounds {
    pub pu_bound: f64,
    pub su_bound: f64,
    pub sum_bound: f64,
}

impl MacBounds {
    /// Whether `(c_p, c_s)` lies inside all three bounds up to `slack`.
    pub fn contains(&self, point: CapacityPoint, slack: f64) -> bool {
        point.c_p <= self.pu_bound + slack
            && point.c_s <= self.su_bound + slack
            && point.c_p + point.c_s <= self.sum_bound + slack
    }
}

fn check_powers(ens: &FadingEnsemble, p: &[f64]) -> Result<()> {
    if p.len() != ens.len() {
        return Err(Error::Parameter(format!(
            "power vector has {} entries for {} states",
            p.len(),
            ens.len()
        )));
    }
    Ok(())
}

fn require_pu(ens: &FadingEnsemble) -> Result<()> {
    if !ens.pu_applied() {
        return Err(Error::State("PU powers have not been populated".into()));
    }
    Ok(())
}

/// `E[log(1 + f q / (1 + g p))]`.
pub fn primary_capacity(ens: &FadingEnsemble, p: &[f64]) -> Result<f64> {
    check_powers(ens, p)?;
    require_pu(ens)?;
    Ok(ens.expect(|i, s| (s.pu_signal() / (1.0 + s.g * p[i])).ln_1p()))
}

/// `E[log(1 + f q)]`, the PU capacity without SU interference.
pub fn primary_capacity_max(ens: &FadingEnsemble) -> Result<f64> {
    require_pu(ens)?;
    Ok(ens.expect(|_, s| s.pu_signal().ln_1p()))
}

/// `E[log(1 + h p)]`.
pub fn secondary_capacity(ens: &FadingEnsemble, p: &[f64]) -> Result<f64> {
    check_powers(ens, p)?;
    Ok(ens.expect(|i, s| (s.h * p[i]).ln_1p()))
}

pub fn capacity_point(ens: &FadingEnsemble, p: &[f64]) -> Result<CapacityPoint> {
    Ok(CapacityPoint { c_p: primary_capacity(ens, p)?, c_s: secondary_capacity(ens, p)? })
}

/// `E[g p]`, the average interference power at PU-Rx.
pub fn mean_interference(ens: &FadingEnsemble, p: &[f64]) -> Result<f64> {
    check_powers(ens, p)?;
    Ok(ens.expect(|i, s| s.g * p[i]))
}

/// `E[p]`.
pub fn mean_power(ens: &FadingEnsemble, p: &[f64]) -> Result<f64> {
    check_powers(ens, p)?;
    Ok(ens.expect(|i, _| p[i]))
}

/// Both sides of the interference-to-capacity-loss bound for one power vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBoundCheck {
    pub holds: bool,
    /// `C_p^max - C_p`.
    pub loss: f64,
    /// `log(1 + gamma)`.
    pub bound: f64,
}

/// Slack added to the right-hand side when judging the loss bound.
pub const LOSS_BOUND_SLACK: f64 = 1e-9;

/// Checks that an interference-feasible SU policy costs the PU at most
/// `log(1 + gamma)` nats of ergodic capacity.
///
/// The chain behind it: interference only enters through `-E[log(1 + g p)]`,
/// and Jensen bounds that by `-log(1 + E[g p]) >= -log(1 + gamma)`. Fails with
/// [`Error::Precondition`] when `E[g p] > gamma`.
pub fn capacity_loss_bound_check(ens: &FadingEnsemble, p: &[f64], gamma: f64) -> Result<LossBoundCheck> {
    if gamma.is_nan() || gamma < 0.0 {
        return Err(Error::Parameter(format!("gamma must be >= 0, got {gamma}")));
    }
    let interference = mean_interference(ens, p)?;
    if interference > gamma * (1.0 + 4.0 * f64::EPSILON) {
        return Err(Error::Precondition(format!(
            "average interference {interference:e} exceeds gamma {gamma:e}"
        )));
    }
    let loss = primary_capacity_max(ens)? - primary_capacity(ens, p)?;
    let bound = gamma.ln_1p();
    Ok(LossBoundCheck { holds: loss <= bound + LOSS_BOUND_SLACK, loss, bound })
}

/// Fixed-policy MAC rate bounds.
///
/// With `a = |h_p|^2 = f + o`, `b = |h_s|^2 = g + e` and `c = |h_p^H h_s|^2`,
/// the sum-rate term is `log det(I + q h_p h_p^H + p h_s h_s^H)
/// = log((1 + q a)(1 + p b) - q p c)`.
pub fn mac_rate_bounds(ens: &FadingEnsemble, p: &[f64]) -> Result<MacBounds> {
    check_powers(ens, p)?;
    require_pu(ens)?;
    let bad = ens.states().iter().zip(p).position(|(s, &pi)| {
        let det = (1.0 + s.q * (s.f + s.o)) * (1.0 + pi * (s.g + s.e)) - s.q * pi * s.cross_mag2;
        !(det > 0.0)
    });
    if let Some(i) = bad {
        return Err(Error::Consistency(format!(
            "non-positive MAC determinant in state {i}; cross_mag2 is inconsistent with the gains"
        )));
    }
    let pu_bound = ens.expect(|_, s| (s.q * (s.f + s.o)).ln_1p());
    let su_bound = ens.expect(|i, s| (p[i] * (s.g + s.e)).ln_1p());
    let sum_bound = ens.expect(|i, s| {
        let a = s.f + s.o;
        let b = s.g + s.e;
        // det - 1 written without cancellation: q a + p b + q p (a b - c)
        let excess = s.q * a + p[i] * b + s.q * p[i] * (a * b - s.cross_mag2);
        if excess > -1.0 {
            excess.ln_1p()
        } else {
            ((1.0 + s.q * a) * (1.0 + p[i] * b) - s.q * p[i] * s.cross_mag2).ln()
        }
    });
    Ok(MacBounds { pu_bound, su_bound, sum_bound })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fading::FadingState;

    fn one(f: f64, e: f64, g: f64, o: f64, q: f64) -> FadingEnsemble {
        FadingEnsemble::from_states(vec![FadingState::new(f, e, g, o).with_pu_power(q)]).unwrap()
    }

    #[test]
    fn primary_capacity_examples() {
        let ens = one(1.0, 1.0, 1.0, 0.0, 3.0);
        assert!((primary_capacity(&ens, &[1.0]).unwrap() - 2.5f64.ln()).abs() < 1e-15);
        assert!((primary_capacity_max(&ens).unwrap() - 4f64.ln()).abs() < 1e-15);
        assert_eq!(primary_capacity(&ens, &[0.0]).unwrap(), primary_capacity_max(&ens).unwrap());
        let silent = one(1.0, 1.0, 1.0, 0.0, 0.0);
        assert_eq!(primary_capacity(&silent, &[5.0]).unwrap(), 0.0);
        assert_eq!(primary_capacity_max(&silent).unwrap(), 0.0);
    }

    #[test]
    fn secondary_capacity_examples() {
        let ens = one(1.0, 1.0, 0.0, 0.0, 0.0);
        assert_eq!(secondary_capacity(&ens, &[0.0]).unwrap(), 0.0);
        assert!((secondary_capacity(&ens, &[std::f64::consts::E - 1.0]).unwrap() - 1.0).abs() < 1e-15);
        let ens = one(1.0, 2.0, 0.0, 0.0, 0.0);
        assert!((secondary_capacity(&ens, &[0.5]).unwrap() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let ens = one(1.0, 1.0, 1.0, 0.0, 1.0);
        assert!(matches!(primary_capacity(&ens, &[1.0, 2.0]), Err(Error::Parameter(_))));
        assert!(matches!(secondary_capacity(&ens, &[]), Err(Error::Parameter(_))));
        assert!(matches!(mac_rate_bounds(&ens, &[]), Err(Error::Parameter(_))));
    }

    #[test]
    fn loss_bound_trivial_cases() {
        let ens = one(1.0, 1.0, 1.0, 0.0, 3.0);
        let c = capacity_loss_bound_check(&ens, &[0.0], 0.0).unwrap();
        assert!(c.holds);
        assert_eq!(c.loss, 0.0);
        assert_eq!(c.bound, 0.0);
        let c = capacity_loss_bound_check(&ens, &[0.0], 2.0).unwrap();
        assert!(c.holds && c.loss == 0.0);
        assert!(matches!(capacity_loss_bound_check(&ens, &[1.0], 0.5), Err(Error::Precondition(_))));
    }

    #[test]
    fn mac_orthogonal_channels_factorize() {
        let ens = one(0.6, 0.3, 0.7, 0.4, 1.0);
        let m = mac_rate_bounds(&ens, &[1.0]).unwrap();
        assert!((m.sum_bound - 4f64.ln()).abs() < 1e-15);
        assert!((m.pu_bound - 2f64.ln()).abs() < 1e-15);
        assert!((m.su_bound - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn mac_silent_su_corner() {
        let ens = one(0.6, 0.3, 0.7, 0.4, 2.0);
        let m = mac_rate_bounds(&ens, &[0.0]).unwrap();
        assert_eq!(m.su_bound, 0.0);
        assert!((m.sum_bound - m.pu_bound).abs() < 1e-15);
        assert!((m.pu_bound - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn mac_parallel_vectors_lose_sum_rate() {
        // h_p = [1, 0.5], h_s = 2 h_p: |h_p^H h_s|^2 = |h_p|^2 |h_s|^2
        let (f, o, g, e) = (1.0, 0.25, 4.0, 1.0);
        let cross = (f + o) * (g + e);
        let ens = FadingEnsemble::from_states(vec![FadingState::new(f, e, g, o).with_cross(cross).with_pu_power(1.5)])
            .unwrap();
        let m = mac_rate_bounds(&ens, &[0.8]).unwrap();
        let expected = (1.0 + 1.5 * (f + o) + 0.8 * (g + e)).ln();
        assert!((m.sum_bound - expected).abs() < 1e-14);
        assert!(m.sum_bound < m.pu_bound + m.su_bound - 0.1);
    }

    #[test]
    fn mac_rejects_corrupted_cross_term() {
        let ens = FadingEnsemble::from_states(vec![FadingState::new(1.0, 1.0, 1.0, 1.0)
            .with_cross(1e6)
            .with_pu_power(10.0)])
        .unwrap();
        assert!(matches!(mac_rate_bounds(&ens, &[10.0]), Err(Error::Consistency(_))));
    }
}
