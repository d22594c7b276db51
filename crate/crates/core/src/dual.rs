//! Lagrange-dual search shared by the AIPC and PCLC solvers.
//!
//! Both problems relax two average constraints, a protection constraint
//! (multiplier `nu`) and the SU power budget (multiplier `mu`). For fixed
//! multipliers the Lagrangian separates across fading states, so a solver
//! only has to supply the per-state maximizer and the two constraint slacks,
//! which are exactly the dual subgradients.
//!
//! The default search is nested: for a given `nu` the dual is one-dimensional
//! and convex in `mu` with derivative `P - E[p]`, and after minimizing out `mu`
//! it remains convex in `nu` with derivative equal to the protection slack.
//! Each level is a sign search on a monotone function, done with Illinois
//! regula falsi in log-multiplier space. The 2-D ellipsoid method on the same
//! subgradients is available as an alternative.

use std::io::Write;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::fading::FadingEnsemble;

/// Nonnegative multipliers of the protection constraint (`nu`) and the SU
/// power constraint (`mu`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualPair {
    pub nu: f64,
    pub mu: f64,
}

impl DualPair {
    pub fn new(nu: f64, mu: f64) -> Result<Self> {
        if !(nu >= 0.0 && mu >= 0.0 && nu.is_finite() && mu.is_finite()) {
            return Err(Error::Parameter(format!("multipliers must be finite and >= 0, got ({nu}, {mu})")));
        }
        Ok(DualPair { nu, mu })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DualMethod {
    #[default]
    Nested,
    Ellipsoid,
}

impl FromStr for DualMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "nested" | "bisection" => Ok(DualMethod::Nested),
            "ellipsoid" => Ok(DualMethod::Ellipsoid),
            other => Err(Error::Parameter(format!("unknown dual method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Cap on Lagrangian evaluations (each is one pass over the ensemble).
    pub max_iters: usize,
    /// Tolerance on constraint residuals.
    pub tol: f64,
    /// Residual tolerance of the per-state fixed-point root (PCLC only).
    pub root_tol: f64,
    pub root_max_iters: usize,
    pub method: DualMethod,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { max_iters: 5000, tol: 1e-6, root_tol: 1e-10, root_max_iters: 200, method: DualMethod::Nested }
    }
}

impl SolverOptions {
    pub(crate) fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.root_tol > 0.0 && self.max_iters > 0 && self.root_max_iters > 0) {
            return Err(Error::Parameter(format!("invalid solver options {self:?}")));
        }
        Ok(())
    }
}

/// Optimal SU power vector together with its certificate data.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySolution {
    pub p: Vec<f64>,
    pub duals: DualPair,
    /// `E[g p]`.
    pub achieved_interference: f64,
    /// `E[p]`.
    pub achieved_power: f64,
    pub c_s: f64,
    pub c_p: f64,
    /// Slack of the protection constraint, `>= 0` when satisfied
    /// (`+inf` when the constraint is vacuous).
    pub protection_slack: f64,
    /// `P - E[p]`.
    pub power_slack: f64,
    /// Dual objective minus primal objective at the returned point.
    pub duality_gap: f64,
    /// Lagrangian evaluations spent.
    pub iterations: usize,
    pub converged: bool,
    /// States whose fixed-point equation had more than one admissible root.
    pub multi_root_states: usize,
    /// Every multiplier pair the search evaluated, in order.
    pub dual_trace: Vec<DualPair>,
    pub diagnostic: Option<String>,
}

impl PolicySolution {
    /// Largest violation among primal feasibility and complementary slackness.
    pub fn max_residual(&self) -> f64 {
        let cs = |m: f64, s: f64| if m == 0.0 { 0.0 } else { (m * s).abs() };
        [
            cs(self.duals.nu, self.protection_slack),
            cs(self.duals.mu, self.power_slack),
            (-self.protection_slack).max(0.0),
            (-self.power_slack).max(0.0),
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    /// Per-state dump: `index,p,gp`.
    pub fn write_dump<W: Write>(&self, ens: &FadingEnsemble, mut out: W) -> Result<()> {
        writeln!(out, "index,p,gp")?;
        for (i, (s, p)) in ens.states().iter().zip(&self.p).enumerate() {
            writeln!(out, "{i},{p:e},{:e}", s.g * p)?;
        }
        Ok(())
    }

    /// Summary record as `key=value` lines.
    pub fn write_summary<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "nu={:e}", self.duals.nu)?;
        writeln!(out, "mu={:e}", self.duals.mu)?;
        writeln!(out, "c_s={:e}", self.c_s)?;
        writeln!(out, "c_p={:e}", self.c_p)?;
        writeln!(out, "achieved_interference={:e}", self.achieved_interference)?;
        writeln!(out, "achieved_power={:e}", self.achieved_power)?;
        writeln!(out, "protection_slack={:e}", self.protection_slack)?;
        writeln!(out, "power_slack={:e}", self.power_slack)?;
        writeln!(out, "max_residual={:e}", self.max_residual())?;
        writeln!(out, "duality_gap={:e}", self.duality_gap)?;
        writeln!(out, "iterations={}", self.iterations)?;
        writeln!(out, "converged={}", self.converged)?;
        writeln!(out, "multi_root_states={}", self.multi_root_states)?;
        if let Some(d) = &self.diagnostic {
            writeln!(out, "diagnostic={d}")?;
        }
        Ok(())
    }
}

/// What a solver must provide to run a dual search.
pub(crate) trait DualSubproblem: Sync {
    /// Per-state Lagrangian maximizers at `duals`. Returns the number of
    /// states where more than one stationary point competed.
    fn powers(&self, duals: DualPair, out: &mut [f64]) -> Result<usize>;
    /// Protection slack at `p`; nondecreasing in `nu` along the search.
    fn protection_slack(&self, p: &[f64]) -> f64;
    /// `P - E[p]`.
    fn power_slack(&self, p: &[f64]) -> f64;
    /// Whether `mu = 0` gives finite powers at this `nu`.
    fn mu_may_vanish(&self, nu: f64) -> bool;
    /// Radius of a ball around the origin containing the optimal multipliers.
    fn dual_radius(&self) -> f64;
    fn len(&self) -> usize;
}

#[derive(Debug, Clone)]
pub(crate) struct Eval {
    pub duals: DualPair,
    pub p: Vec<f64>,
    pub prot: f64,
    pub pow: f64,
    pub multi: usize,
}

pub(crate) struct SearchOutcome {
    pub best: Eval,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<DualPair>,
    pub note: Option<String>,
}

enum Halt {
    Budget,
    /// A multiplier ran out of floating-point range while bracketing.
    Stuck,
    Fail(Error),
}

impl From<Error> for Halt {
    fn from(e: Error) -> Self {
        Halt::Fail(e)
    }
}

struct Search<'a, S: DualSubproblem> {
    sub: &'a S,
    opts: &'a SolverOptions,
    evals: usize,
    trace: Vec<DualPair>,
    collapsed: bool,
    best: Option<(f64, Eval)>,
}

// Multiplier brackets are grown by this factor.
const GROW: f64 = 4.0;
const MAX_BRACKET_STEPS: usize = 600;
// Bracket width in ln-multiplier below which a sign search stops.
const LOG_WIDTH_FLOOR: f64 = 1e-14;
// Multipliers stay within exp(+-this) so 1/mu and nu*g remain finite.
const MAX_LOG_MULTIPLIER: f64 = 600.0;

impl<'a, S: DualSubproblem> Search<'a, S> {
    fn eval(&mut self, duals: DualPair) -> Result<Eval, Halt> {
        if self.evals >= self.opts.max_iters {
            return Err(Halt::Budget);
        }
        self.evals += 1;
        self.trace.push(duals);
        let mut p = vec![0.0; self.sub.len()];
        let multi = self.sub.powers(duals, &mut p)?;
        let prot = self.sub.protection_slack(&p);
        let pow = self.sub.power_slack(&p);
        let e = Eval { duals, p, prot, pow, multi };
        let score = merit(&e, self.opts.tol);
        if self.best.as_ref().is_none_or(|(b, _)| score < *b) {
            self.best = Some((score, e.clone()));
        }
        Ok(e)
    }

    /// Minimizes out `mu` for fixed `nu`.
    fn inner(&mut self, nu: f64, mu_hint: f64) -> Result<Eval, Halt> {
        let tol = self.opts.tol;
        if self.sub.mu_may_vanish(nu) {
            let e = self.eval(DualPair { nu, mu: 0.0 })?;
            if e.pow >= -tol {
                return Ok(e);
            }
        }
        let at = |s: &mut Self, x: f64| s.eval(DualPair { nu, mu: x.exp() });
        let first = at(self, mu_hint.ln())?;
        if first.pow.abs() * first.duals.mu.max(1.0) <= tol {
            return Ok(first);
        }
        let (lo, hi) = self.bracket(mu_hint.ln(), first, |e| e.pow, &mut |s, x| at(s, x))?;
        self.illinois(lo, hi, |e| e.pow, |e| e.duals.mu, &mut |s, x| at(s, x))
    }

    fn outer(&mut self) -> Result<Eval, Halt> {
        let tol = self.opts.tol;
        let start = self.inner(0.0, 1.0)?;
        if start.prot >= -tol {
            return Ok(start);
        }
        let mut hint = start.duals.mu.max(1e-12);
        let mut at = |s: &mut Self, x: f64| -> Result<Eval, Halt> {
            let e = s.inner(x.exp(), hint)?;
            if e.duals.mu > 0.0 {
                hint = e.duals.mu;
            }
            Ok(e)
        };
        let first = at(self, 0.0)?;
        if first.prot.abs() * first.duals.nu.max(1.0) <= tol {
            return Ok(first);
        }
        let (lo, hi) = self.bracket(0.0, first, |e| e.prot, &mut at)?;
        self.illinois(lo, hi, |e| e.prot, |e| e.duals.nu, &mut at)
    }

    /// Walks `x` (a log-multiplier) until the increasing slack changes sign.
    fn bracket(
        &mut self,
        x0: f64,
        first: Eval,
        slack: fn(&Eval) -> f64,
        at: &mut dyn FnMut(&mut Self, f64) -> Result<Eval, Halt>,
    ) -> Result<((f64, Eval), (f64, Eval)), Halt> {
        let step = GROW.ln();
        let up = slack(&first) < 0.0;
        let mut prev = (x0, first);
        for k in 1..=MAX_BRACKET_STEPS {
            let x = if up { x0 + step * k as f64 } else { x0 - step * k as f64 };
            if x.abs() > MAX_LOG_MULTIPLIER {
                return Err(Halt::Stuck);
            }
            let e = at(self, x)?;
            let v = slack(&e);
            if up && v >= 0.0 {
                return Ok((prev, (x, e)));
            }
            if !up && v < 0.0 {
                return Ok(((x, e), prev));
            }
            prev = (x, e);
        }
        Err(Halt::Fail(Error::Consistency("could not bracket a dual multiplier".into())))
    }

    /// Illinois regula falsi on an increasing slack with `lo < 0 <= hi`,
    /// stopping once `|slack| * max(1, multiplier) <= tol`.
    /// Returns a point within tolerance, or the feasible end of a collapsed
    /// bracket (which happens at jumps of the slack).
    fn illinois(
        &mut self,
        lo: (f64, Eval),
        hi: (f64, Eval),
        slack: fn(&Eval) -> f64,
        multiplier: fn(&Eval) -> f64,
        at: &mut dyn FnMut(&mut Self, f64) -> Result<Eval, Halt>,
    ) -> Result<Eval, Halt> {
        let tol = self.opts.tol;
        let (mut xl, mut el) = lo;
        let (mut xh, mut eh) = hi;
        let (mut fl, mut fh) = (slack(&el), slack(&eh));
        let mut side = 0i8;
        let mut widths = [f64::INFINITY; 3];
        let mut k = 0usize;
        loop {
            let width = xh - xl;
            if width <= LOG_WIDTH_FLOOR * (1.0 + xl.abs().max(xh.abs())) {
                self.collapsed = true;
                return Ok(eh);
            }
            let stalled = width > 0.5 * widths[k % 3];
            widths[k % 3] = width;
            k += 1;
            let mut x = if fl.is_finite() && fh.is_finite() && fh > fl {
                xh - fh * (xh - xl) / (fh - fl)
            } else {
                f64::NAN
            };
            if stalled || !(x > xl && x < xh) {
                x = 0.5 * (xl + xh);
            }
            let e = at(self, x)?;
            let v = slack(&e);
            if v.abs() * multiplier(&e).max(1.0) <= tol {
                return Ok(e);
            }
            if v < 0.0 {
                xl = x;
                el = e;
                fl = v;
                if side == -1 {
                    fh *= 0.5;
                }
                side = -1;
            } else {
                xh = x;
                eh = e;
                fh = v;
                if side == 1 {
                    fl *= 0.5;
                }
                side = 1;
            }
            let _ = &el;
        }
    }

    fn ellipsoid(&mut self) -> Result<Eval, Halt> {
        let tol = self.opts.tol;
        let r = self.sub.dual_radius();
        // center and shape matrix [[a, b], [b, c]]
        let (mut x, mut y) = (0.5 * r, 0.5 * r);
        let (mut a, mut b, mut c) = (r * r, 0.0, r * r);
        let mut best: Option<(f64, Eval)> = None;
        let n = 2.0f64;
        loop {
            let (gx, gy, cand) = if x < 0.0 {
                (-1.0, 0.0, None)
            } else if y < 0.0 || (y == 0.0 && !self.sub.mu_may_vanish(x)) {
                (0.0, -1.0, None)
            } else {
                let e = match self.eval(DualPair { nu: x, mu: y }) {
                    Ok(e) => e,
                    Err(Halt::Budget) => break,
                    Err(err) => return Err(err),
                };
                // the dual's subgradient is (prot, pow); move against it
                (e.prot, e.pow, Some(e))
            };
            let ag = (a * gx + b * gy, b * gx + c * gy);
            let gag = gx * ag.0 + gy * ag.1;
            if !(gag > 0.0) {
                break;
            }
            if let Some(e) = cand {
                let score = merit(&e, tol);
                if best.as_ref().is_none_or(|(s, _)| score < *s) {
                    best = Some((score, e));
                }
                if score == 0.0 {
                    break;
                }
                // subgradient norm in the ellipsoid metric bounds the dual gap
                if gag.sqrt() <= tol * 1e-3 {
                    break;
                }
            }
            let s = gag.sqrt();
            let (dx, dy) = (ag.0 / s, ag.1 / s);
            x -= dx / (n + 1.0);
            y -= dy / (n + 1.0);
            let k = n * n / (n * n - 1.0);
            let t = 2.0 / (n + 1.0);
            a = k * (a - t * dx * dx);
            b = k * (b - t * dx * dy);
            c = k * (c - t * dy * dy);
        }
        best.map(|(_, e)| e).ok_or(Halt::Budget)
    }
}

// Zero when the point satisfies feasibility and complementary slackness.
fn merit(e: &Eval, tol: f64) -> f64 {
    let over = |v: f64| if v <= tol { 0.0 } else { v };
    let cs = |m: f64, s: f64| if m == 0.0 { 0.0 } else { (m * s).abs() };
    over(cs(e.duals.nu, e.prot))
        + over(cs(e.duals.mu, e.pow))
        + over((-e.prot).max(0.0))
        + over((-e.pow).max(0.0))
}

/// Runs the configured dual search.
pub(crate) fn search<S: DualSubproblem>(sub: &S, opts: &SolverOptions) -> Result<SearchOutcome> {
    let mut s = Search { sub, opts, evals: 0, trace: Vec::new(), collapsed: false, best: None };
    let res = match opts.method {
        DualMethod::Nested => s.outer(),
        DualMethod::Ellipsoid => s.ellipsoid(),
    };
    let tol = opts.tol;
    match res {
        Ok(best) => {
            let converged = merit(&best, tol) == 0.0;
            let note = if !converged && s.collapsed {
                Some("multiplier bracket collapsed at a jump of the constraint slack".to_string())
            } else {
                None
            };
            Ok(SearchOutcome { best, iterations: s.evals, converged, trace: s.trace, note })
        }
        Err(halt @ (Halt::Budget | Halt::Stuck)) => {
            let (_, best) = s
                .best
                .take()
                .ok_or_else(|| Error::Parameter("max_iters allows no evaluation".into()))?;
            let note = match halt {
                Halt::Budget => format!("evaluation budget of {} exhausted", opts.max_iters),
                _ => "a multiplier left the representable range while bracketing".to_string(),
            };
            Ok(SearchOutcome { best, iterations: s.evals, converged: false, trace: s.trace, note: Some(note) })
        }
        Err(Halt::Fail(e)) => Err(e),
    }
}

/// Standard water-filling of the SU budget over the states not in `blocked`:
/// `p = (w - 1/h)^+` with `E[p] = P`. Returns `(mu, p)` with `mu = 1/w`, or
/// `mu = 0` and `p = 0` when no open state has a usable channel.
pub(crate) fn water_fill_open_states(
    ens: &FadingEnsemble,
    blocked: &[bool],
    budget: f64,
) -> Result<(f64, Vec<f64>)> {
    let open = |i: usize, h: f64| !blocked[i] && h > 0.0;
    let mass = ens.expect(|i, s| if open(i, s.h) { 1.0 } else { 0.0 });
    if mass == 0.0 {
        return Ok((0.0, vec![0.0; ens.len()]));
    }
    let max_inv = ens
        .states()
        .iter()
        .enumerate()
        .filter(|(i, s)| open(*i, s.h))
        .map(|(_, s)| 1.0 / s.h)
        .fold(0.0, f64::max);
    let level_power = |w: f64| ens.expect(|i, s| if open(i, s.h) { (w - 1.0 / s.h).max(0.0) } else { 0.0 });
    let (mut lo, mut hi) = (0.0, budget / mass + max_inv);
    let mut w = hi;
    for _ in 0..2000 {
        w = 0.5 * (lo + hi);
        let excess = level_power(w) - budget;
        if excess == 0.0 || hi - lo <= f64::EPSILON * hi {
            break;
        }
        if excess < 0.0 {
            lo = w;
        } else {
            hi = w;
        }
    }
    let p = ens
        .states()
        .iter()
        .enumerate()
        .map(|(i, s)| if open(i, s.h) { (w - 1.0 / s.h).max(0.0) } else { 0.0 })
        .collect();
    Ok((1.0 / w, p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fading::FadingState;

    #[test]
    fn water_fill_two_states() {
        // h = 1 and h = 4, budget 1: w = 1.625
        let ens = FadingEnsemble::from_states(vec![
            FadingState::new(1.0, 1.0, 1.0, 0.0),
            FadingState::new(1.0, 4.0, 1.0, 0.0),
        ])
        .unwrap();
        let (mu, p) = water_fill_open_states(&ens, &[false, false], 1.0).unwrap();
        assert!((1.0 / mu - 1.625).abs() < 1e-12);
        assert!((p[0] - 0.625).abs() < 1e-12 && (p[1] - 1.375).abs() < 1e-12);
        let (mu, p) = water_fill_open_states(&ens, &[false, true], 1.0).unwrap();
        assert!((1.0 / mu - 3.0).abs() < 1e-12);
        assert_eq!(p[1], 0.0);
    }

    #[test]
    fn dual_pair_rejects_negative() {
        assert!(DualPair::new(-1.0, 0.0).is_err());
        assert!(DualPair::new(0.0, f64::INFINITY).is_err());
        assert!(DualPair::new(0.0, 0.0).is_ok());
    }
}
