//! Primary-user power control.
//!
//! The PU is oblivious to the SU and picks its power from its own channel gain
//! only: either a constant power, or water-filling `(d - 1/f)^+` with the
//! water level `d` chosen so the ensemble-average power equals the budget.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::fading::FadingEnsemble;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PuPolicyKind {
    ConstantPower,
    WaterFilling,
}

impl FromStr for PuPolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cp" | "constant" | "constant-power" => Ok(PuPolicyKind::ConstantPower),
            "wf" | "water-filling" | "waterfilling" => Ok(PuPolicyKind::WaterFilling),
            other => Err(Error::Parameter(format!("unknown PU policy {other:?} (expected cp or wf)"))),
        }
    }
}

impl fmt::Display for PuPolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PuPolicyKind::ConstantPower => "cp",
            PuPolicyKind::WaterFilling => "wf",
        })
    }
}

/// A concrete PU policy. `water_level` is only meaningful for water-filling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PuPolicy {
    pub kind: PuPolicyKind,
    pub budget: f64,
    pub water_level: f64,
}

pub const DEFAULT_CALIBRATION_TOL: f64 = 1e-8;

impl PuPolicy {
    pub fn constant(budget: f64) -> Result<Self> {
        check_budget(budget)?;
        Ok(PuPolicy { kind: PuPolicyKind::ConstantPower, budget, water_level: 0.0 })
    }

    /// Water-filling policy calibrated on `ens`.
    pub fn water_filling(ens: &FadingEnsemble, budget: f64, tol: f64) -> Result<Self> {
        let water_level = calibrate_water_level(ens, budget, tol)?;
        Ok(PuPolicy { kind: PuPolicyKind::WaterFilling, budget, water_level })
    }

    /// Builds the policy of the given kind, calibrating when needed.
    pub fn build(kind: PuPolicyKind, ens: &FadingEnsemble, budget: f64, tol: f64) -> Result<Self> {
        match kind {
            PuPolicyKind::ConstantPower => Self::constant(budget),
            PuPolicyKind::WaterFilling => Self::water_filling(ens, budget, tol),
        }
    }

    /// PU power for channel gain `f`.
    #[inline]
    pub fn power(&self, f: f64) -> f64 {
        match self.kind {
            PuPolicyKind::ConstantPower => self.budget,
            PuPolicyKind::WaterFilling => water_fill(self.water_level, f),
        }
    }
}

fn check_budget(budget: f64) -> Result<()> {
    if !(budget.is_finite() && budget > 0.0) {
        return Err(Error::Parameter(format!("PU budget must be positive and finite, got {budget}")));
    }
    Ok(())
}

// Ties at f = 1/d give zero.
#[inline]
fn water_fill(level: f64, f: f64) -> f64 {
    if f <= 0.0 {
        return 0.0;
    }
    (level - 1.0 / f).max(0.0)
}

/// Finds the water level `d` with `E[(d - 1/f)^+] = budget` on the ensemble.
///
/// The average is continuous and nondecreasing in `d`, so plain bisection on
/// `[0, budget / Pr(f > 0) + max 1/f]` converges.
pub fn calibrate_water_level(ens: &FadingEnsemble, budget: f64, tol: f64) -> Result<f64> {
    check_budget(budget)?;
    if !(tol > 0.0) {
        return Err(Error::Parameter(format!("calibration tolerance must be positive, got {tol}")));
    }
    let active_mass = ens.expect(|_, s| if s.f > 0.0 { 1.0 } else { 0.0 });
    if active_mass == 0.0 {
        return Err(Error::Infeasible("every PU channel gain is zero; water-filling is undefined".into()));
    }
    let max_inv = ens
        .states()
        .iter()
        .filter(|s| s.f > 0.0)
        .map(|s| 1.0 / s.f)
        .fold(0.0, f64::max);
    let mean_power = |d: f64| ens.expect(|_, s| water_fill(d, s.f));

    let mut lo = 0.0;
    let mut hi = budget / active_mass + max_inv;
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        let excess = mean_power(mid) - budget;
        if excess.abs() <= tol {
            return Ok(mid);
        }
        if excess < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    let d = 0.5 * (lo + hi);
    let excess = mean_power(d) - budget;
    if excess.abs() <= tol {
        Ok(d)
    } else {
        Err(Error::Infeasible(format!(
            "water level calibration stalled at d={d} with power error {excess:e}"
        )))
    }
}

/// Sets `q` in every state from `pol` and refreshes the effective SU gains.
pub fn apply_pu_policy(mut ens: FadingEnsemble, pol: &PuPolicy) -> Result<FadingEnsemble> {
    check_budget(pol.budget)?;
    if pol.kind == PuPolicyKind::WaterFilling && !(pol.water_level.is_finite() && pol.water_level >= 0.0) {
        return Err(Error::Parameter(format!("invalid water level {}", pol.water_level)));
    }
    let pol = *pol;
    ens.set_pu_powers(move |f| pol.power(f));
    Ok(ens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fading::{sample_ensemble, ChannelDistribution, FadingState};

    fn gains(fs: &[f64]) -> FadingEnsemble {
        FadingEnsemble::from_states(fs.iter().map(|&f| FadingState::new(f, 1.0, 1.0, 0.0)).collect()).unwrap()
    }

    #[test]
    fn two_state_water_level() {
        let d = calibrate_water_level(&gains(&[1.0, 4.0]), 1.0, 1e-12).unwrap();
        assert!((d - 1.625).abs() < 1e-10, "{d}");
    }

    #[test]
    fn single_state_water_level() {
        for q in [0.5, 3.0, 10.0] {
            let d = calibrate_water_level(&gains(&[1.0]), q, 1e-12).unwrap();
            assert!((d - (q + 1.0)).abs() < 1e-10);
        }
    }

    #[test]
    fn dead_states_do_not_break_the_bracket() {
        let d = calibrate_water_level(&gains(&[0.0, 0.0, 0.0, 2.0]), 1.0, 1e-12).unwrap();
        // only the f=2 state takes power: (d - 0.5) / 4 = 1
        assert!((d - 4.5).abs() < 1e-10);
    }

    #[test]
    fn all_dead_is_infeasible() {
        assert!(matches!(calibrate_water_level(&gains(&[0.0, 0.0]), 1.0, 1e-8), Err(Error::Infeasible(_))));
    }

    #[test]
    fn reference_budget_is_met() {
        let ens = sample_ensemble(&ChannelDistribution::reference(), 100_000, 4).unwrap();
        let pol = PuPolicy::water_filling(&ens, 10.0, 1e-8).unwrap();
        let ens = apply_pu_policy(ens, &pol).unwrap();
        let mean_q = ens.expect(|_, s| s.q);
        assert!((mean_q - 10.0).abs() <= 1e-8, "{mean_q}");
    }

    #[test]
    fn constant_power_everywhere() {
        let ens = sample_ensemble(&ChannelDistribution::reference(), 100, 4).unwrap();
        let ens = apply_pu_policy(ens, &PuPolicy::constant(10.0).unwrap()).unwrap();
        assert!(ens.states().iter().all(|s| s.q == 10.0));
        assert!(ens.states().iter().all(|s| s.h == s.e / (1.0 + s.o * 10.0)));
    }

    #[test]
    fn water_filling_examples() {
        let pol = PuPolicy { kind: PuPolicyKind::WaterFilling, budget: 1.0, water_level: 1.625 };
        assert!((pol.power(4.0) - 1.375).abs() < 1e-15);
        assert_eq!(pol.power(0.5), 0.0);
        let tie = PuPolicy { water_level: 2.0, ..pol };
        assert_eq!(tie.power(0.5), 0.0);
    }

    #[test]
    fn policy_names_parse() {
        assert_eq!("cp".parse::<PuPolicyKind>().unwrap(), PuPolicyKind::ConstantPower);
        assert_eq!("WF".parse::<PuPolicyKind>().unwrap(), PuPolicyKind::WaterFilling);
        assert!("peak".parse::<PuPolicyKind>().is_err());
    }
}
