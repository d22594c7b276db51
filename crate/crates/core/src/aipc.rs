//! SU power control under an average interference power constraint.
//!
//! Maximize `E[log(1 + h p)]` subject to `E[g p] <= gamma` and `E[p] <= P`.
//! The problem is convex and its KKT conditions give a water-filling policy
//! whose level `1 / (nu g + mu)` drops as the cross gain `g` grows.

use crate::capacity;
use crate::dual::{self, DualPair, DualSubproblem, PolicySolution, SolverOptions};
use crate::error::{Error, Result};
use crate::fading::{FadingEnsemble, FadingState};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AipcProblem {
    /// Interference threshold; `f64::INFINITY` disables the constraint.
    pub gamma: f64,
    pub power_budget: f64,
}

impl AipcProblem {
    pub fn new(gamma: f64, power_budget: f64) -> Result<Self> {
        let prob = AipcProblem { gamma, power_budget };
        prob.validate()?;
        Ok(prob)
    }

    /// Only the power budget binds.
    pub fn unconstrained(power_budget: f64) -> Result<Self> {
        Self::new(f64::INFINITY, power_budget)
    }

    fn validate(&self) -> Result<()> {
        if self.gamma.is_nan() || self.gamma < 0.0 {
            return Err(Error::Parameter(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if !(self.power_budget.is_finite() && self.power_budget > 0.0) {
            return Err(Error::Parameter(format!("power budget must be positive, got {}", self.power_budget)));
        }
        Ok(())
    }
}

/// `(1/(nu g + mu) - 1/h)^+`; zero on a tie or a dead channel.
pub fn aipc_power(state: &FadingState, duals: DualPair) -> Result<f64> {
    if state.h <= 0.0 {
        return Ok(0.0);
    }
    let price = duals.nu * state.g + duals.mu;
    if !(price > 0.0) {
        return Err(Error::Unbounded(format!(
            "nu g + mu = 0 with h = {} leaves the power unbounded",
            state.h
        )));
    }
    if state.h <= price {
        return Ok(0.0);
    }
    Ok(1.0 / price - 1.0 / state.h)
}

struct AipcDual<'a> {
    ens: &'a FadingEnsemble,
    prob: AipcProblem,
    every_open_state_interferes: bool,
}

impl DualSubproblem for AipcDual<'_> {
    fn powers(&self, duals: DualPair, out: &mut [f64]) -> Result<usize> {
        for (p, s) in out.iter_mut().zip(self.ens.states()) {
            *p = aipc_power(s, duals)?;
        }
        Ok(0)
    }

    fn protection_slack(&self, p: &[f64]) -> f64 {
        if self.prob.gamma.is_infinite() {
            return f64::INFINITY;
        }
        self.prob.gamma - self.ens.expect(|i, s| s.g * p[i])
    }

    fn power_slack(&self, p: &[f64]) -> f64 {
        self.prob.power_budget - self.ens.expect(|i, _| p[i])
    }

    fn mu_may_vanish(&self, nu: f64) -> bool {
        nu > 0.0 && self.every_open_state_interferes
    }

    fn dual_radius(&self) -> f64 {
        let s = self.ens.states();
        let max_h = s.iter().map(|s| s.h).fold(0.0, f64::max);
        let max_ratio = s.iter().filter(|s| s.g > 0.0).map(|s| s.h / s.g).fold(0.0, f64::max);
        4.0 * (1.0 + max_h + max_ratio)
    }

    fn len(&self) -> usize {
        self.ens.len()
    }
}

fn require_gains(ens: &FadingEnsemble) -> Result<()> {
    if !ens.pu_applied() {
        return Err(Error::State("effective gains need PU powers; apply a PU policy first".into()));
    }
    Ok(())
}

/// Solves the interference-constrained problem on the ensemble.
///
/// `gamma = inf` yields plain water-filling with `nu = 0`. `gamma = 0` shuts
/// every interfering state and water-fills the rest; `nu` is then reported as
/// the smallest value that keeps the shut states inactive.
pub fn solve_aipc(ens: &FadingEnsemble, prob: &AipcProblem, opts: &SolverOptions) -> Result<PolicySolution> {
    prob.validate()?;
    opts.validate()?;
    require_gains(ens)?;

    if ens.states().iter().all(|s| s.h == 0.0) {
        let p = vec![0.0; ens.len()];
        let mut sol = finish(ens, prob, p, DualPair { nu: 0.0, mu: 0.0 }, 0, true, Vec::new())?;
        sol.diagnostic = Some("every effective SU gain is zero; the SU stays silent".into());
        return Ok(sol);
    }

    if prob.gamma == 0.0 || prob.gamma.is_infinite() {
        let blocked: Vec<bool> =
            ens.states().iter().map(|s| prob.gamma == 0.0 && s.g > 0.0).collect();
        let (mu, p) = dual::water_fill_open_states(ens, &blocked, prob.power_budget)?;
        let nu = ens
            .states()
            .iter()
            .zip(&blocked)
            .filter(|(s, b)| **b && s.h > mu)
            .map(|(s, _)| (s.h - mu) / s.g)
            .fold(0.0, f64::max);
        let duals = DualPair { nu, mu };
        return finish(ens, prob, p, duals, 1, true, vec![duals]);
    }

    let sub = AipcDual {
        ens,
        prob: *prob,
        every_open_state_interferes: ens.states().iter().all(|s| s.h == 0.0 || s.g > 0.0),
    };
    let out = dual::search(&sub, opts)?;
    let mut sol = finish(ens, prob, out.best.p, out.best.duals, out.iterations, out.converged, out.trace)?;
    sol.diagnostic = out.note;
    if !sol.converged {
        log::warn!("AIPC dual search did not converge: {:?}", sol.diagnostic);
    }
    Ok(sol)
}

fn finish(
    ens: &FadingEnsemble,
    prob: &AipcProblem,
    p: Vec<f64>,
    duals: DualPair,
    iterations: usize,
    converged: bool,
    dual_trace: Vec<DualPair>,
) -> Result<PolicySolution> {
    let achieved_interference = capacity::mean_interference(ens, &p)?;
    let achieved_power = capacity::mean_power(ens, &p)?;
    let c_s = capacity::secondary_capacity(ens, &p)?;
    let c_p = capacity::primary_capacity(ens, &p)?;
    let protection_slack =
        if prob.gamma.is_infinite() { f64::INFINITY } else { prob.gamma - achieved_interference };
    let power_slack = prob.power_budget - achieved_power;
    // D(nu, mu) = L(p*) with p* the per-state maximizer at (nu, mu)
    let finite = |m: f64, s: f64| if m == 0.0 { 0.0 } else { m * s };
    let duality_gap = finite(duals.nu, protection_slack) + finite(duals.mu, power_slack);
    Ok(PolicySolution {
        p,
        duals,
        achieved_interference,
        achieved_power,
        c_s,
        c_p,
        protection_slack,
        power_slack,
        duality_gap,
        iterations,
        converged,
        multi_root_states: 0,
        dual_trace,
        diagnostic: None,
    })
}

/// Worst-case violations of the KKT conditions of a returned solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktReport {
    /// `max |h/(1+hp) - nu g - mu|` over states with `p > 0`.
    pub stationarity: f64,
    /// `max (h - nu g - mu)^+` over states with `p = 0`.
    pub inactive: f64,
    /// Primal infeasibility and complementary slackness.
    pub slackness: f64,
}

impl KktReport {
    pub fn worst(&self) -> f64 {
        self.stationarity.max(self.inactive).max(self.slackness)
    }
}

pub fn aipc_kkt(ens: &FadingEnsemble, sol: &PolicySolution) -> KktReport {
    let DualPair { nu, mu } = sol.duals;
    let mut stationarity: f64 = 0.0;
    let mut inactive: f64 = 0.0;
    for (s, &p) in ens.states().iter().zip(&sol.p) {
        let price = nu * s.g + mu;
        if p > 0.0 {
            stationarity = stationarity.max((s.h / (1.0 + s.h * p) - price).abs());
        } else {
            inactive = inactive.max(s.h - price);
        }
    }
    KktReport { stationarity, inactive, slackness: sol.max_residual() }
}
