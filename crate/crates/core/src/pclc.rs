//! SU power control under a primary capacity loss constraint.
//!
//! Maximize `E[log(1 + h p)]` subject to `C_p^max - C_p <= C_delta` and
//! `E[p] <= P`. The loss constraint is rewritten as
//! `E[log(1 + f q / (1 + g p))] >= C_0` with `C_0 = C_p^max - C_delta`, which
//! is not convex; the dual is still tight for continuous fading, so the
//! solver searches multipliers `(nu, mu)` and maximizes the Lagrangian state
//! by state.
//!
//! Per state the maximizer is a self-biased water-filling level: with
//! `lambda(p) = f q / ((1 + g p)(1 + g p + f q))`, a positive power solves
//! `z = F(z) - 1/h` where `F(z) = 1 / (lambda(z) nu g + mu)`. Only the product
//! `f q` enters, never `f` on its own.
//!
//! `F` rises from `F(0)` towards `1/mu`, so `G(z) = F(z) - z - 1/h` is positive
//! at zero whenever the state is active and negative at `1/mu`. Clearing
//! denominators turns `G(z) = 0` into a cubic, whose critical points split
//! `[0, 1/mu]` into pieces with at most one root each. That makes any second
//! crossing of the 45-degree line visible instead of silently bisected over.

use crate::aipc::{self, AipcProblem};
use crate::capacity;
use crate::dual::{self, DualPair, DualSubproblem, PolicySolution, SolverOptions};
use crate::error::{Error, Result};
use crate::fading::{FadingEnsemble, FadingState};

/// A capacity-loss-constrained problem tied to one ensemble and PU policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PclcProblem {
    pub c_delta: f64,
    pub power_budget: f64,
    pub c_p_max: f64,
    /// `max(0, c_p_max - c_delta)`.
    pub c0: f64,
    fingerprint: u64,
}

impl PclcProblem {
    /// Computes `C_p^max` on `ens` (with its PU powers) and records the
    /// ensemble's fingerprint.
    pub fn new(ens: &FadingEnsemble, c_delta: f64, power_budget: f64) -> Result<Self> {
        if c_delta.is_nan() || c_delta < 0.0 {
            return Err(Error::Parameter(format!("c_delta must be >= 0, got {c_delta}")));
        }
        if !(power_budget.is_finite() && power_budget > 0.0) {
            return Err(Error::Parameter(format!("power budget must be positive, got {power_budget}")));
        }
        let c_p_max = capacity::primary_capacity_max(ens)?;
        Ok(PclcProblem {
            c_delta,
            power_budget,
            c_p_max,
            c0: (c_p_max - c_delta).max(0.0),
            fingerprint: ens.fingerprint(),
        })
    }

    /// Loss threshold given as a fraction of `C_p^max`.
    pub fn from_loss_fraction(ens: &FadingEnsemble, fraction: f64, power_budget: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::Parameter(format!("loss fraction must lie in [0, 1], got {fraction}")));
        }
        let c_p_max = capacity::primary_capacity_max(ens)?;
        Self::new(ens, fraction * c_p_max, power_budget)
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }
}

/// The self-bias factor `lambda(p)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct SelfBiasTerm {
    pub value: f64,
}

pub fn lambda_factor(state: &FadingState, p: f64) -> SelfBiasTerm {
    SelfBiasTerm { value: bias(state.pu_signal(), state.g, p) }
}

#[inline]
fn bias(a: f64, g: f64, p: f64) -> f64 {
    if a == 0.0 {
        return 0.0;
    }
    let u = 1.0 + g * p;
    a / (u * (u + a))
}

/// `F(z) = 1 / (lambda(z) nu g + mu)`.
pub fn fixed_point_map(state: &FadingState, duals: DualPair, z: f64) -> f64 {
    1.0 / (bias(state.pu_signal(), state.g, z) * duals.nu * state.g + duals.mu)
}

/// `z - F(z) + 1/h`; zero exactly at a positive self-biased power.
pub fn fixed_point_residual(state: &FadingState, duals: DualPair, z: f64) -> f64 {
    z - fixed_point_map(state, duals, z) + 1.0 / state.h
}

/// Per-state Lagrangian `log(1 + h p) + nu log(1 + f q / (1 + g p)) - mu p`.
pub fn state_lagrangian(state: &FadingState, duals: DualPair, p: f64) -> f64 {
    (state.h * p).ln_1p() + duals.nu * (state.pu_signal() / (1.0 + state.g * p)).ln_1p() - duals.mu * p
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RootOptions {
    pub root_tol: f64,
    pub max_iters: usize,
}

impl Default for RootOptions {
    fn default() -> Self {
        RootOptions { root_tol: 1e-10, max_iters: 200 }
    }
}

/// Result of one per-state power computation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PclcPower {
    pub power: f64,
    /// `|z - F(z) + 1/h|` at the returned power (zero when the power is zero).
    pub residual: f64,
    /// More than one local maximum competed, either two positive roots or a
    /// positive root beating zero in a state the activation test switched off.
    pub multi_root: bool,
    /// The positive root lost to `p = 0` on the Lagrangian.
    pub guard_tripped: bool,
}

/// Self-biased water-filling power for one state with default root options.
pub fn pclc_power(state: &FadingState, duals: DualPair) -> Result<f64> {
    pclc_power_with(state, duals, &RootOptions::default()).map(|r| r.power)
}

/// Self-biased water-filling power for one state.
///
/// Normally zero when `1/(lambda(0) nu g + mu) <= 1/h` and otherwise the root
/// of `G` on `[0, 1/mu]`, refined by bisection (with Newton steps kept inside
/// the bracket) until `|G| <= root_tol`. The returned power is always the
/// Lagrangian maximizer: when several local maxima compete (zero included)
/// the best one is taken and `multi_root` is set.
pub fn pclc_power_with(state: &FadingState, duals: DualPair, opts: &RootOptions) -> Result<PclcPower> {
    let zero = PclcPower { power: 0.0, residual: 0.0, multi_root: false, guard_tripped: false };
    let h = state.h;
    if h <= 0.0 {
        return Ok(zero);
    }
    let mu = duals.mu;
    if !(mu > 0.0) {
        return Err(Error::Unbounded(format!("mu = {mu}: the root bracket [0, 1/mu] is unbounded")));
    }
    let a = state.pu_signal();
    let g = state.g;
    let c = duals.nu * g;
    let inv_h = 1.0 / h;
    let top = 1.0 / mu;

    if a == 0.0 || c == 0.0 {
        // no self-bias: plain water-filling
        let z = top - inv_h;
        if z <= 0.0 {
            return Ok(zero);
        }
        return Ok(PclcPower { power: z, residual: (top - z - inv_h).abs(), ..zero });
    }

    let big_g = |z: f64| 1.0 / (bias(a, g, z) * c + mu) - z - inv_h;
    let lagrangian = |z: f64| (h * z).ln_1p() + duals.nu * (a / (1.0 + g * z)).ln_1p() - mu * z;
    let g0 = big_g(0.0);

    // Break points: 0, critical points of the cubic inside (0, 1/mu), 1/mu.
    let b = inv_h;
    let c3 = mu * g * g;
    let c2 = mu * g * (2.0 + a) + b * mu * g * g - g * g;
    let c1 = c * a + mu * (1.0 + a) + b * mu * g * (2.0 + a) - g * (2.0 + a);
    let mut pts = [0.0, top, top, top];
    let mut npts = 1;
    for r in quadratic_roots(3.0 * c3, 2.0 * c2, c1).into_iter().flatten() {
        if r > 0.0 && r < top {
            pts[npts] = r;
            npts += 1;
        }
    }
    pts[npts] = top;
    npts += 1;
    pts[..npts].sort_by(|x, y| x.total_cmp(y));

    // Segments where G goes from positive to non-positive hold local maxima.
    let mut candidates = [(0.0, 0.0); 2];
    let mut ncand = 0;
    let mut g_left = g0;
    for w in 1..npts {
        let g_right = if w == npts - 1 { big_g(top).min(-0.0) } else { big_g(pts[w]) };
        if g_left > 0.0 && g_right <= 0.0 && ncand < candidates.len() {
            candidates[ncand] = (pts[w - 1], pts[w]);
            ncand += 1;
        }
        g_left = g_right;
    }

    let refine = |lo: f64, hi: f64| refine_root(&big_g, state, duals, lo, hi, opts);

    // Even when the activation test switches a state off, a positive local
    // maximum further out can beat p = 0; the maximizer is what the dual
    // needs, so it wins and the state is flagged.
    let mut best = (lagrangian(0.0), 0.0);
    for &(lo, hi) in &candidates[..ncand] {
        let z = refine(lo, hi);
        let l = lagrangian(z);
        if l > best.0 {
            best = (l, z);
        }
    }
    let multi = ncand > 1 || (g0 <= 0.0 && ncand > 0);
    if best.1 == 0.0 {
        return Ok(PclcPower { multi_root: multi, guard_tripped: g0 > 0.0 && ncand > 0, ..zero });
    }
    let z = best.1;
    Ok(PclcPower { power: z, residual: big_g(z).abs(), multi_root: multi, guard_tripped: false })
}

/// Real roots of `a x^2 + b x + c`, computed without cancellation.
fn quadratic_roots(a: f64, b: f64, c: f64) -> [Option<f64>; 2] {
    if a == 0.0 {
        return [if b != 0.0 { Some(-c / b) } else { None }, None];
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return [None, None];
    }
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    if q == 0.0 {
        return [Some(0.0), None];
    }
    [Some(q / a), Some(c / q)]
}

// Bracketed root of G with G(lo) > 0 >= G(hi).
fn refine_root(
    big_g: &impl Fn(f64) -> f64,
    state: &FadingState,
    duals: DualPair,
    mut lo: f64,
    mut hi: f64,
    opts: &RootOptions,
) -> f64 {
    let a = state.pu_signal();
    let g = state.g;
    let c = duals.nu * g;
    // G'(z) = F'(z) - 1 with F' = c a g (2u + a) / (u^2 (u + a)^2) * F^2
    let slope = |z: f64| {
        let u = 1.0 + g * z;
        let f = 1.0 / (bias(a, g, z) * c + duals.mu);
        c * a * g * (2.0 * u + a) / (u * u * (u + a) * (u + a)) * f * f - 1.0
    };
    let target = 0.125 * opts.root_tol;
    let mut z = 0.5 * (lo + hi);
    for _ in 0..opts.max_iters {
        let gz = big_g(z);
        if gz.abs() <= target {
            return z;
        }
        if gz > 0.0 {
            lo = z;
        } else {
            hi = z;
        }
        if hi - lo <= 2.0 * f64::EPSILON * hi.abs().max(f64::MIN_POSITIVE) {
            break;
        }
        let d = slope(z);
        let newton = if d != 0.0 { z - gz / d } else { f64::NAN };
        z = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
    }
    // best of the bracket ends and the last iterate
    [z, lo, hi]
        .into_iter()
        .min_by(|x, y| big_g(*x).abs().total_cmp(&big_g(*y).abs()))
        .unwrap_or(z)
}

struct PclcDual<'a> {
    ens: &'a FadingEnsemble,
    prob: PclcProblem,
    roots: RootOptions,
}

impl DualSubproblem for PclcDual<'_> {
    fn powers(&self, duals: DualPair, out: &mut [f64]) -> Result<usize> {
        let mut multi = 0;
        for (p, s) in out.iter_mut().zip(self.ens.states()) {
            let r = pclc_power_with(s, duals, &self.roots)?;
            *p = r.power;
            multi += r.multi_root as usize;
        }
        Ok(multi)
    }

    fn protection_slack(&self, p: &[f64]) -> f64 {
        self.ens.expect(|i, s| (s.pu_signal() / (1.0 + s.g * p[i])).ln_1p()) - self.prob.c0
    }

    fn power_slack(&self, p: &[f64]) -> f64 {
        self.prob.power_budget - self.ens.expect(|i, _| p[i])
    }

    fn mu_may_vanish(&self, _nu: f64) -> bool {
        false
    }

    fn dual_radius(&self) -> f64 {
        let s = self.ens.states();
        let max_h = s.iter().map(|s| s.h).fold(0.0, f64::max);
        let max_ratio = s
            .iter()
            .filter(|s| s.g > 0.0 && s.pu_signal() > 0.0)
            .map(|s| s.h * (1.0 + s.pu_signal()) / (s.pu_signal() * s.g))
            .fold(0.0, f64::max);
        4.0 * (1.0 + max_h + max_ratio)
    }

    fn len(&self) -> usize {
        self.ens.len()
    }
}

/// Solves the capacity-loss-constrained problem.
///
/// A vacuous threshold (`c_delta >= c_p_max`) returns the unconstrained
/// water-filling solution. `c_delta = 0` shuts every state where the SU would
/// hit an active PU link and water-fills the rest, reporting the smallest
/// `nu` that keeps those states switched off.
pub fn solve_pclc(ens: &FadingEnsemble, prob: &PclcProblem, opts: &SolverOptions) -> Result<PolicySolution> {
    opts.validate()?;
    if prob.fingerprint != ens.fingerprint() {
        return Err(Error::Usage(
            "PclcProblem was built on a different ensemble or PU policy; rebuild it for this ensemble".into(),
        ));
    }
    let roots = RootOptions { root_tol: opts.root_tol, max_iters: opts.root_max_iters };

    if prob.c_delta >= prob.c_p_max {
        let sol = aipc::solve_aipc(ens, &AipcProblem::unconstrained(prob.power_budget)?, opts)?;
        return Ok(with_pclc_accounting(ens, prob, sol, 0));
    }
    if ens.states().iter().all(|s| s.h == 0.0) {
        let mut sol = finish(ens, prob, vec![0.0; ens.len()], DualPair { nu: 0.0, mu: 0.0 }, 0, true, vec![], 0)?;
        sol.diagnostic = Some("every effective SU gain is zero; the SU stays silent".into());
        return Ok(sol);
    }

    if prob.c_delta == 0.0 {
        let blocked: Vec<bool> = ens.states().iter().map(|s| s.pu_signal() > 0.0 && s.g > 0.0).collect();
        let (mu, p) = dual::water_fill_open_states(ens, &blocked, prob.power_budget)?;
        let nu = ens
            .states()
            .iter()
            .zip(&blocked)
            .filter(|(s, b)| **b && s.h > mu)
            .map(|(s, _)| (s.h - mu) * (1.0 + s.pu_signal()) / (s.pu_signal() * s.g))
            .fold(0.0, f64::max);
        let duals = DualPair { nu, mu };
        return finish(ens, prob, p, duals, 1, true, vec![duals], 0);
    }

    let sub = PclcDual { ens, prob: *prob, roots };
    let out = dual::search(&sub, opts)?;
    let mut sol = finish(
        ens,
        prob,
        out.best.p,
        out.best.duals,
        out.iterations,
        out.converged,
        out.trace,
        out.best.multi,
    )?;
    sol.diagnostic = out.note;
    if !sol.converged {
        sol = recover_primal(&sub, sol, opts)?;
    }
    if sol.multi_root_states > 0 {
        log::info!(
            "{} states had competing fixed-point roots at nu={}, mu={}",
            sol.multi_root_states,
            sol.duals.nu,
            sol.duals.mu
        );
    }
    if !sol.converged {
        log::warn!("PCLC dual search did not converge: {:?}", sol.diagnostic);
    }
    Ok(sol)
}

/// Up to this many states the primal recovery starts from many trailing dual
/// iterates; larger ensembles use only the last few.
pub const RECOVERY_MAX_STATES: usize = 4096;
const RECOVERY_SEEDS: usize = 64;
const RECOVERY_SEEDS_LARGE: usize = 4;
const KKT_MAX_ITERS: usize = 100;
// States woken one at a time after Newton settles.
const MAX_WAKES: usize = 256;

// With few states the loss constraint's non-convexity can leave a real
// duality gap: no multiplier pair has a primal-feasible Lagrangian maximizer
// that meets both constraints. The optimum is still a KKT point, so starting
// from the maximizers the search visited, Newton's method is run on the KKT
// system for each choice of tight constraints and the best feasible point
// found is kept.
//
// Large ensembles hit the same thing in a milder form: the slack jumps where
// a few states switch between competing roots, and the search collapses on
// the jump. Newton from the iterate next to it keeps those states on their
// branch and moves the multipliers until the constraints are met exactly.
fn recover_primal(sub: &PclcDual<'_>, sol: PolicySolution, opts: &SolverOptions) -> Result<PolicySolution> {
    let ens = sub.ens;
    let prob = &sub.prob;
    let tol = opts.tol;
    let feasible = |p: &[f64]| sub.protection_slack(p) >= -tol && sub.power_slack(p) >= -tol;
    let objective = |p: &[f64]| ens.expect(|i, s| (s.h * p[i]).ln_1p());

    let mut seeds: Vec<DualPair> = Vec::new();
    for d in sol.dual_trace.iter().rev() {
        if d.mu > 0.0 && !seeds.contains(d) {
            seeds.push(*d);
            let cap = if ens.len() <= RECOVERY_MAX_STATES { RECOVERY_SEEDS } else { RECOVERY_SEEDS_LARGE };
            if seeds.len() == cap {
                break;
            }
        }
    }

    let mut best: Option<(f64, Vec<f64>, DualPair, bool)> = None;
    if feasible(&sol.p) {
        best = Some((sol.c_s, sol.p.clone(), sol.duals, false));
    }
    let mut dual_bound = f64::INFINITY;
    let mut p = vec![0.0; ens.len()];
    for &d in &seeds {
        sub.powers(d, &mut p)?;
        let (prot, pow) = (sub.protection_slack(&p), sub.power_slack(&p));
        let obj = objective(&p);
        dual_bound = dual_bound.min(obj + d.nu * prot + d.mu * pow);
        for start in starting_points(sub, &p) {
            for tight in [(true, true), (true, false), (false, true)] {
                let Some((q, duals)) = kkt_point(sub, &start, d, tight, tol) else { continue };
                if !feasible(&q) {
                    continue;
                }
                let obj = objective(&q);
                // A certified point also displaces an uncertified one that is
                // no better than the feasibility tolerance lets it look.
                let better = |b: &(f64, Vec<f64>, DualPair, bool)| {
                    obj > b.0 || (!b.3 && obj >= b.0 - tol * (1.0 + b.0.abs()))
                };
                if best.as_ref().is_none_or(better) {
                    best = Some((obj, q, duals, true));
                }
            }
        }
    }
    let Some((_, q, duals, from_kkt)) = best else {
        return Ok(sol);
    };
    if !from_kkt {
        return Ok(sol);
    }
    let mut out = finish(ens, prob, q, duals, sol.iterations, false, sol.dual_trace, sol.multi_root_states)?;
    out.converged = out.max_residual() <= tol;
    out.duality_gap = dual_bound - out.c_s;
    out.diagnostic = Some(format!(
        "duality gap: primal point recovered from the KKT system, dual bound {dual_bound:e}"
    ));
    Ok(out)
}

// With both constraints tight the constraint surfaces can cross more than
// once, and Newton finds the crossing nearest its start. Small ensembles
// therefore also start from points that lean on each state in turn.
const SPREAD_STARTS_MAX_STATES: usize = 16;

fn starting_points(sub: &PclcDual<'_>, seed: &[f64]) -> Vec<Vec<f64>> {
    let ens = sub.ens;
    let mut out = vec![seed.to_vec()];
    if ens.len() > SPREAD_STARTS_MAX_STATES {
        return out;
    }
    for (j, s) in ens.states().iter().enumerate() {
        let w = ens.weight(j);
        if s.h <= 0.0 || w == 0.0 {
            continue;
        }
        for share in [0.05, 0.5, 0.95] {
            let mut v: Vec<f64> = seed.iter().map(|x| x * (1.0 - share)).collect();
            v[j] = share * sub.prob.power_budget / w;
            out.push(v);
        }
    }
    out
}

// Newton's method on the KKT system with the given constraints held tight
// and the positive entries of `seed` as the active states. Returns powers and
// multipliers at a point with nonnegative multipliers, or `None`.
fn kkt_point(
    sub: &PclcDual<'_>,
    seed: &[f64],
    duals: DualPair,
    (loss_tight, power_tight): (bool, bool),
    tol: f64,
) -> Option<(Vec<f64>, DualPair)> {
    let ens = sub.ens;
    let states = ens.states();
    let n = states.len();
    let mut p = seed.to_vec();
    let mut active: Vec<bool> = (0..n).map(|i| p[i] > 0.0 && states[i].h > 0.0 && ens.weight(i) > 0.0).collect();
    let mut nu = if loss_tight { duals.nu } else { 0.0 };
    let mut mu = if power_tight { duals.mu } else { 0.0 };

    // d/dp of the SU rate and of the PU loss, and their second derivatives
    let derivs = |s: &FadingState, p: f64| {
        let (h, g, a) = (s.h, s.g, s.pu_signal());
        let u = 1.0 + h * p;
        let v = 1.0 + g * p;
        let r1 = h / u;
        let r2 = -r1 * r1;
        let l1 = g / v - g / (v + a);
        let l2 = g * g / ((v + a) * (v + a)) - g * g / (v * v);
        (r1, r2, l1, l2)
    };
    let residuals = |p: &[f64], active: &[bool], nu: f64, mu: f64| -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..n {
            if active[i] {
                let (r1, _, l1, _) = derivs(&states[i], p[i]);
                worst = worst.max((r1 - nu * l1 - mu).abs());
            }
        }
        if loss_tight {
            worst = worst.max(sub.protection_slack(p).abs());
        }
        if power_tight {
            worst = worst.max(sub.power_slack(p).abs());
        }
        worst
    };

    // every tight constraint needs an active state to absorb it
    let needed = loss_tight as usize + power_tight as usize;
    while active.iter().filter(|a| **a).count() < needed {
        let wake = (0..n)
            .filter(|&i| !active[i] && states[i].h > 0.0 && ens.weight(i) > 0.0)
            .map(|i| {
                let (r1, _, l1, _) = derivs(&states[i], 0.0);
                (i, r1 - nu * l1 - mu)
            })
            .max_by(|x, y| x.1.total_cmp(&y.1))?;
        active[wake.0] = true;
        p[wake.0] = 1e-9;
    }

    let mut activations = 0;
    let mut norm = residuals(&p, &active, nu, mu);
    for _ in 0..KKT_MAX_ITERS {
        if norm <= 1e-13 {
            if (loss_tight && nu < 0.0) || (power_tight && mu < 0.0) {
                return None;
            }
            // an inactive state that would rather transmit
            let wake = (0..n)
                .filter(|&i| !active[i] && states[i].h > 0.0 && ens.weight(i) > 0.0)
                .map(|i| {
                    let (r1, _, l1, _) = derivs(&states[i], 0.0);
                    (i, r1 - nu * l1 - mu)
                })
                .filter(|&(_, r)| r > tol)
                .max_by(|x, y| x.1.total_cmp(&y.1));
            match wake {
                Some((i, _)) if activations < n.min(MAX_WAKES) => {
                    activations += 1;
                    active[i] = true;
                    p[i] = 1e-9;
                    norm = residuals(&p, &active, nu, mu);
                    continue;
                }
                Some(_) => return None,
                None => return Some((p, DualPair { nu, mu })),
            }
        }

        // Bordered diagonal system, eliminated to 2x2 in (dnu, dmu).
        let (mut a11, mut a12, mut a22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        let mut diag = vec![0.0; n];
        let mut res = vec![0.0; n];
        let mut lp = vec![0.0; n];
        for i in 0..n {
            if !active[i] {
                continue;
            }
            let (r1, r2, l1, l2) = derivs(&states[i], p[i]);
            let d = r2 - nu * l2;
            if !(d.is_finite() && d != 0.0) {
                return None;
            }
            let r = r1 - nu * l1 - mu;
            let w = ens.weight(i);
            diag[i] = d;
            res[i] = r;
            lp[i] = l1;
            a11 += w * l1 * l1 / d;
            a12 += w * l1 / d;
            a22 += w / d;
            b1 += w * l1 * r / d;
            b2 += w * r / d;
        }
        // loss row: slack is C_p - c0, and dC_p/dp = -w l1
        let c_loss = -sub.protection_slack(&p);
        let c_pow = -sub.power_slack(&p);
        let (dnu, dmu) = match (loss_tight, power_tight) {
            (true, true) => {
                let det = a11 * a22 - a12 * a12;
                if !(det.is_finite() && det != 0.0) {
                    return None;
                }
                let r1 = -c_loss + b1;
                let r2 = -c_pow + b2;
                ((r1 * a22 - a12 * r2) / det, (a11 * r2 - a12 * r1) / det)
            }
            (true, false) => {
                if a11 == 0.0 {
                    return None;
                }
                ((-c_loss + b1) / a11, 0.0)
            }
            (false, true) => {
                if a22 == 0.0 {
                    return None;
                }
                (0.0, (-c_pow + b2) / a22)
            }
            (false, false) => return None,
        };
        let step: Vec<f64> =
            (0..n).map(|i| if active[i] { (-res[i] + lp[i] * dnu + dmu) / diag[i] } else { 0.0 }).collect();

        // stay inside p > 0, then backtrack on the residual
        let mut t: f64 = 1.0;
        for i in 0..n {
            if active[i] && step[i] < 0.0 {
                t = t.min(-0.99 * p[i] / step[i]);
            }
        }
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> = (0..n).map(|i| if active[i] { p[i] + t * step[i] } else { 0.0 }).collect();
            let (tn, tm) = (nu + t * dnu, mu + t * dmu);
            let r = residuals(&trial, &active, tn, tm);
            if r.is_finite() && r < (1.0 - 1e-4 * t) * norm {
                p = trial;
                nu = tn;
                mu = tm;
                norm = r;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted || sub.power_slack(&p) < -sub.prob.power_budget {
            // stalled, or running off towards a power the budget rules out
            return None;
        }
        // states driven to the boundary leave the active set
        for i in 0..n {
            if active[i] && p[i] <= 1e-12 * (1.0 + sub.prob.power_budget) {
                active[i] = false;
                p[i] = 0.0;
                norm = residuals(&p, &active, nu, mu);
            }
        }
    }
    None
}

fn with_pclc_accounting(ens: &FadingEnsemble, prob: &PclcProblem, sol: PolicySolution, multi: usize) -> PolicySolution {
    let protection_slack = sol.c_p - prob.c0;
    let _ = ens;
    PolicySolution { protection_slack, multi_root_states: multi, ..sol }
}

#[allow(clippy::too_many_arguments)]
fn finish(
    ens: &FadingEnsemble,
    prob: &PclcProblem,
    p: Vec<f64>,
    duals: DualPair,
    iterations: usize,
    converged: bool,
    dual_trace: Vec<DualPair>,
    multi_root_states: usize,
) -> Result<PolicySolution> {
    let achieved_interference = capacity::mean_interference(ens, &p)?;
    let achieved_power = capacity::mean_power(ens, &p)?;
    let c_s = capacity::secondary_capacity(ens, &p)?;
    let c_p = capacity::primary_capacity(ens, &p)?;
    let protection_slack = c_p - prob.c0;
    let power_slack = prob.power_budget - achieved_power;
    let term = |m: f64, s: f64| if m == 0.0 { 0.0 } else { m * s };
    Ok(PolicySolution {
        p,
        duals,
        achieved_interference,
        achieved_power,
        c_s,
        c_p,
        protection_slack,
        power_slack,
        duality_gap: term(duals.nu, protection_slack) + term(duals.mu, power_slack),
        iterations,
        converged,
        multi_root_states,
        dual_trace,
        diagnostic: None,
    })
}

/// Whether the closed-form activation rule `lambda(0) nu g + mu < h` agrees
/// with the sign of `p` in every state.
pub fn activation_mismatches(ens: &FadingEnsemble, sol: &PolicySolution) -> usize {
    let DualPair { nu, mu } = sol.duals;
    ens.states()
        .iter()
        .zip(&sol.p)
        .filter(|(s, &p)| {
            let a = s.pu_signal();
            let active = a / (1.0 + a) * nu * s.g + mu < s.h;
            active != (p > 0.0)
        })
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn st(f: f64, q: f64, g: f64, h: f64) -> FadingState {
        FadingState { f, e: h, g, o: 0.0, cross_mag2: 0.0, q, h }
    }

    #[test]
    fn lambda_examples() {
        assert_eq!(lambda_factor(&st(0.0, 5.0, 1.0, 1.0), 2.0).value, 0.0);
        assert_eq!(lambda_factor(&st(3.0, 0.0, 1.0, 1.0), 2.0).value, 0.0);
        assert_eq!(lambda_factor(&st(1.0, 1.0, 1.0, 1.0), 0.0).value, 0.5);
        for p in [0.0, 1.0, 100.0] {
            assert_eq!(lambda_factor(&st(1.0, 3.0, 0.0, 1.0), p).value, 0.75);
        }
    }

    #[test]
    fn lambda_is_nonincreasing_and_bounded() {
        let s = st(2.0, 1.5, 0.7, 1.0);
        let cap = 3.0 / 4.0;
        let mut prev = f64::INFINITY;
        for k in 0..200 {
            let v = lambda_factor(&s, k as f64 * 0.1).value;
            assert!(v <= prev && v <= cap + 1e-15);
            prev = v;
        }
    }

    #[test]
    fn silent_pu_gives_plain_water_filling() {
        let d = DualPair { nu: 3.0, mu: 0.2 };
        let p = pclc_power(&st(0.0, 10.0, 2.0, 2.0), d).unwrap();
        assert!((p - 4.5).abs() < 1e-12);
        let p = pclc_power(&st(1.0, 10.0, 0.0, 2.0), d).unwrap();
        assert!((p - 4.5).abs() < 1e-12);
    }

    #[test]
    fn mu_zero_is_rejected() {
        let r = pclc_power(&st(1.0, 1.0, 1.0, 2.0), DualPair { nu: 1.0, mu: 0.0 });
        assert!(matches!(r, Err(Error::Unbounded(_))));
    }

    #[test]
    fn worked_root() {
        // nu=1, mu=0.2, g=1, h=2, fq=1
        let s = st(1.0, 1.0, 1.0, 2.0);
        let d = DualPair { nu: 1.0, mu: 0.2 };
        let r = pclc_power_with(&s, d, &RootOptions::default()).unwrap();
        assert!(r.residual <= 1e-10);
        assert!(fixed_point_residual(&s, d, r.power).abs() <= 1e-10);
        assert!(!r.multi_root);
        // dense scan oracle of G on [0, 5]
        let g = |z: f64| fixed_point_map(&s, d, z) - z - 0.5;
        let mut crossing = None;
        let n = 500_000;
        for k in 0..n {
            let (z0, z1) = (5.0 * k as f64 / n as f64, 5.0 * (k + 1) as f64 / n as f64);
            if g(z0) > 0.0 && g(z1) <= 0.0 {
                assert!(crossing.is_none(), "second crossing at {z0}");
                crossing = Some(0.5 * (z0 + z1));
            }
        }
        let z = crossing.expect("scan found no root");
        assert!((r.power - z).abs() < 1e-5, "{} vs {}", r.power, z);
        assert!((r.power - 3.72).abs() < 0.01, "{}", r.power);
    }

    #[test]
    fn activation_test_switches_off() {
        // lambda(0) nu g + mu = 0.5 * 4 + 0.2 >= h = 2
        let s = st(1.0, 1.0, 1.0, 2.0);
        let d = DualPair { nu: 4.0, mu: 0.2 };
        let r = pclc_power_with(&s, d, &RootOptions::default()).unwrap();
        assert_eq!(r.power, 0.0);
    }

    #[test]
    fn detects_multiple_crossings() {
        // small nu, tiny mu and a strong PU signal make F climb steeply
        let mut found = false;
        'outer: for &a in &[0.05, 0.2, 1.0, 5.0, 30.0] {
            for &g in &[0.5, 2.0, 10.0] {
                for &nu in &[0.05, 0.3, 1.0, 3.0] {
                    for &mu in &[1e-3, 1e-2, 0.05] {
                        for &h in &[0.5, 2.0, 10.0, 50.0] {
                            let s = st(a, 1.0, g, h);
                            let d = DualPair { nu, mu };
                            let r = pclc_power_with(&s, d, &RootOptions::default()).unwrap();
                            // brute force: count maxima of the Lagrangian on a grid
                            let top = 1.0 / mu;
                            let n = 20_000;
                            let lag: Vec<f64> =
                                (0..=n).map(|k| state_lagrangian(&s, d, top * k as f64 / n as f64)).collect();
                            let interior_max =
                                (1..n).filter(|&k| lag[k] > lag[k - 1] && lag[k] >= lag[k + 1]).count();
                            let edge = lag[0] > lag[1];
                            if interior_max + edge as usize > 1 {
                                assert!(r.multi_root || r.guard_tripped || r.power == 0.0, "{s:?} {d:?} {r:?}");
                                found = true;
                                break 'outer;
                            }
                        }
                    }
                }
            }
        }
        assert!(found, "no multi-maximum state in the scanned grid");
    }

    #[test]
    fn best_root_maximizes_the_lagrangian() {
        // compare against a dense grid maximum over [0, 1/mu]
        for &(a, g, nu, mu, h) in &[
            (1.0, 1.0, 1.0, 0.2, 2.0),
            (5.0, 2.0, 0.3, 0.01, 10.0),
            (0.2, 0.5, 2.0, 0.05, 3.0),
            (30.0, 10.0, 0.05, 0.001, 50.0),
        ] {
            let s = st(a, 1.0, g, h);
            let d = DualPair { nu, mu };
            let r = pclc_power_with(&s, d, &RootOptions::default()).unwrap();
            let top = 1.0 / mu;
            let n = 200_000;
            let grid_best = (0..=n)
                .map(|k| state_lagrangian(&s, d, top * k as f64 / n as f64))
                .fold(f64::NEG_INFINITY, f64::max);
            let got = state_lagrangian(&s, d, r.power);
            if r.power > 0.0 {
                assert!(got >= grid_best - 1e-6, "{a} {g} {nu} {mu} {h}: {got} < {grid_best}");
            }
        }
    }
}
