//! Brute-force reference solvers for tiny discrete fading distributions.
//!
//! Nothing here uses duality for the capacity-loss problem, and the primal
//! searches check feasibility directly, so these are slow but make no
//! structural assumptions. They exist to cross-check the dual solvers.
//!
//! Primal mode (up to four states): every state but one gets a power grid,
//! the remaining state gets the largest power the constraints still allow
//! (the objective is increasing in it), and the best cell is refined by
//! zooming in on its neighbourhood. Dual mode (up to eight states, average
//! interference only): a log-spaced grid over `(nu, mu)` with the closed-form
//! power rule, keeping the best primal-feasible reconstruction.

use crate::aipc::{self, AipcProblem};
use crate::dual::DualPair;
use crate::error::{Error, Result};
use crate::fading::{FadingEnsemble, FadingState};
use crate::pclc::PclcProblem;

pub const MAX_DISCRETE_STATES: usize = 8;
pub const MAX_PRIMAL_STATES: usize = 4;

/// A finite-support fading distribution with PU powers already set.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteEnsemble {
    states: Vec<FadingState>,
    weights: Vec<f64>,
    ens: FadingEnsemble,
}

impl DiscreteEnsemble {
    pub fn new(states: Vec<FadingState>, weights: Vec<f64>) -> Result<Self> {
        if states.len() > MAX_DISCRETE_STATES {
            return Err(Error::Parameter(format!(
                "discrete ensembles hold at most {MAX_DISCRETE_STATES} states, got {}",
                states.len()
            )));
        }
        let ens = FadingEnsemble::weighted(states.clone(), weights.clone())?;
        Ok(DiscreteEnsemble { states, weights, ens })
    }

    /// Equally likely states.
    pub fn uniform(states: Vec<FadingState>) -> Result<Self> {
        let w = vec![1.0 / states.len().max(1) as f64; states.len()];
        Self::new(states, w)
    }

    pub fn states(&self) -> &[FadingState] {
        &self.states
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// The same distribution as an ensemble the main solvers accept.
    pub fn ensemble(&self) -> &FadingEnsemble {
        &self.ens
    }
}

/// Grid resolution and cost cap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleGrid {
    /// Grid points per searched coordinate in every round.
    pub points: usize,
    /// Refinement rounds after the coarse pass.
    pub zoom_rounds: usize,
    /// Maximum number of grid cells over all rounds.
    pub cell_budget: u128,
}

impl Default for OracleGrid {
    fn default() -> Self {
        OracleGrid { points: 64, zoom_rounds: 60, cell_budget: 200_000_000 }
    }
}

impl OracleGrid {
    fn validate(&self) -> Result<()> {
        if self.points < 3 {
            return Err(Error::Parameter(format!("oracle grid needs at least 3 points, got {}", self.points)));
        }
        Ok(())
    }

    fn cells(&self, dims: u32) -> u128 {
        (self.points as u128).pow(dims) * (1 + self.zoom_rounds as u128)
    }

    fn guard(&self, dims: u32) -> Result<()> {
        let cells = self.cells(dims);
        if cells > self.cell_budget {
            return Err(Error::ResourceGuard { cells, budget: self.cell_budget });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    /// `E[log(1 + h p)]` at the best feasible grid point.
    pub objective: f64,
    pub p: Vec<f64>,
    /// Grid cells evaluated.
    pub cells: u128,
}

// Constraints seen by the primal search. `usage(i, p)` is one state's
// unweighted contribution and must be nondecreasing in `p`.
trait Protection {
    fn limit(&self) -> f64;
    fn usage(&self, s: &FadingState, p: f64) -> f64;
    /// Largest `p` with `usage(s, p) <= room` (`room` already divided by the
    /// state's weight), `None` when even `p = 0` does not fit.
    fn max_power(&self, s: &FadingState, room: f64) -> Option<f64>;
}

struct Interference(f64);

impl Protection for Interference {
    fn limit(&self) -> f64 {
        self.0
    }

    fn usage(&self, s: &FadingState, p: f64) -> f64 {
        s.g * p
    }

    fn max_power(&self, s: &FadingState, room: f64) -> Option<f64> {
        if room < 0.0 {
            return None;
        }
        if s.g == 0.0 || room.is_infinite() {
            return Some(f64::INFINITY);
        }
        Some(room / s.g)
    }
}

// Capacity loss relative to the interference-free rate, so the constraint
// reads `E[loss] <= C_p^max - C_0`, which is `C_delta` unless clamped.
struct CapacityLoss {
    allowed: f64,
}

fn loss(s: &FadingState, p: f64) -> f64 {
    let a = s.pu_signal();
    a.ln_1p() - (a / (1.0 + s.g * p)).ln_1p()
}

impl Protection for CapacityLoss {
    fn limit(&self) -> f64 {
        self.allowed
    }

    fn usage(&self, s: &FadingState, p: f64) -> f64 {
        loss(s, p)
    }

    fn max_power(&self, s: &FadingState, room: f64) -> Option<f64> {
        if room < 0.0 {
            return None;
        }
        let a = s.pu_signal();
        if a == 0.0 || s.g == 0.0 || room >= a.ln_1p() {
            return Some(f64::INFINITY);
        }
        // log(1 + a / (1 + g p)) >= log(1 + a) - room
        let t = ((a.ln_1p() - room).exp_m1()).max(0.0);
        if t == 0.0 {
            return Some(f64::INFINITY);
        }
        Some(((a / t - 1.0) / s.g).max(0.0))
    }
}

struct Primal<'a, C: Protection> {
    de: &'a DiscreteEnsemble,
    budget: f64,
    prot: C,
    free: usize,
    others: Vec<usize>,
}

impl<'a, C: Protection> Primal<'a, C> {
    fn objective(&self, p: &[f64]) -> f64 {
        self.de.states.iter().zip(&self.de.weights).zip(p).map(|((s, w), &pi)| w * (s.h * pi).ln_1p()).sum()
    }

    fn feasible(&self, p: &[f64]) -> bool {
        let power: f64 = self.de.weights.iter().zip(p).map(|(w, pi)| w * pi).sum();
        let prot: f64 =
            self.de.states.iter().zip(&self.de.weights).zip(p).map(|((s, w), &pi)| w * self.prot.usage(s, pi)).sum();
        power <= self.budget && prot <= self.prot.limit()
    }

    // Fills the free coordinate with its largest feasible power.
    fn complete(&self, p: &mut [f64]) -> bool {
        let w = self.de.weights[self.free];
        let s = &self.de.states[self.free];
        let mut power_used = 0.0;
        let mut prot_used = 0.0;
        for &i in &self.others {
            power_used += self.de.weights[i] * p[i];
            prot_used += self.de.weights[i] * self.prot.usage(&self.de.states[i], p[i]);
        }
        let cap = (self.budget - power_used) / w;
        let Some(prot_cap) = self.prot.max_power(s, (self.prot.limit() - prot_used) / w) else {
            return false;
        };
        if cap < 0.0 {
            return false;
        }
        let mut x = cap.min(prot_cap);
        p[self.free] = x;
        // closed forms can overshoot by an ulp or two
        let mut tries = 0;
        while !self.feasible(p) {
            if x == 0.0 || tries > 200 {
                return false;
            }
            x = if x < f64::MIN_POSITIVE { 0.0 } else { x * (1.0 - 1e-15 * (1u64 << tries.min(40)) as f64) };
            p[self.free] = x;
            tries += 1;
        }
        true
    }

    fn run(&self, grid: &OracleGrid) -> OracleSolution {
        let n = self.de.len();
        let caps: Vec<f64> = self.de.weights.iter().map(|w| if *w > 0.0 { self.budget / w } else { 0.0 }).collect();
        // coarse axes: zero plus a geometric ladder up to the per-state cap
        let mut axes: Vec<Vec<f64>> = self
            .others
            .iter()
            .map(|&i| {
                let cap = caps[i];
                let mut v = vec![0.0];
                if cap > 0.0 {
                    let m = grid.points - 1;
                    let lo = cap * 1e-6;
                    v.extend((0..m).map(|k| lo * (cap / lo).powf(k as f64 / (m - 1) as f64)));
                }
                v
            })
            .collect();

        let mut best: Option<(f64, Vec<f64>)> = None;
        let mut cells: u128 = 0;
        let mut p = vec![0.0; n];
        let mut half: Vec<f64> = Vec::new();
        for round in 0..=grid.zoom_rounds {
            let before = best.as_ref().map(|(o, _)| *o);
            let mut idx = vec![0usize; self.others.len()];
            'cells: loop {
                cells += 1;
                for (k, &i) in self.others.iter().enumerate() {
                    p[i] = axes[k][idx[k]];
                }
                if self.complete(&mut p) {
                    let obj = self.objective(&p);
                    // strict improvement keeps the earliest cell on ties
                    if best.as_ref().is_none_or(|(b, _)| obj > *b) {
                        best = Some((obj, p.clone()));
                    }
                }
                // odometer, last axis fastest
                let mut k = idx.len();
                loop {
                    if k == 0 {
                        break 'cells;
                    }
                    k -= 1;
                    idx[k] += 1;
                    if idx[k] < axes[k].len() {
                        continue 'cells;
                    }
                    idx[k] = 0;
                }
            }
            if round == grid.zoom_rounds || self.others.is_empty() {
                break;
            }
            let Some((_, bp)) = &best else { break };
            if round == 0 {
                // start from the spacing of the coarse ladder around the incumbent
                half = self
                    .others
                    .iter()
                    .enumerate()
                    .map(|(k, &i)| {
                        let j = axes[k].iter().position(|&x| x == bp[i]).unwrap_or(0);
                        let lo = if j == 0 { axes[k][0] } else { axes[k][j - 1] };
                        let hi = if j + 1 == axes[k].len() { axes[k][j] } else { axes[k][j + 1] };
                        (hi - bp[i]).max(bp[i] - lo)
                    })
                    .collect();
            } else if before.is_some_and(|b| best.as_ref().is_some_and(|(o, _)| *o <= b)) {
                // no progress: tighten; otherwise follow the incumbent
                half.iter_mut().for_each(|h| *h *= 0.5);
            }
            if half.iter().zip(&self.others).all(|(h, &i)| *h <= 1e-15 * (1.0 + caps[i])) {
                break;
            }
            axes = self
                .others
                .iter()
                .enumerate()
                .map(|(k, &i)| {
                    let lo = (bp[i] - half[k]).max(0.0);
                    let hi = (bp[i] + half[k]).min(caps[i]).max(lo);
                    let m = grid.points;
                    let mut v: Vec<f64> = (0..m).map(|t| lo + (hi - lo) * t as f64 / (m - 1) as f64).collect();
                    // keep the incumbent on the grid so rounds never regress
                    v.push(bp[i]);
                    v.sort_by(f64::total_cmp);
                    v.dedup();
                    v
                })
                .collect();
        }
        let (objective, p) = best.unwrap_or((0.0, vec![0.0; n]));
        OracleSolution { objective, p, cells }
    }
}

fn check_budget(budget: f64) -> Result<()> {
    if !(budget.is_finite() && budget > 0.0) {
        return Err(Error::Parameter(format!("power budget must be positive, got {budget}")));
    }
    Ok(())
}

// The free coordinate is the state with the largest effective gain; the
// objective does not depend on states with h = 0, which therefore stay at 0.
fn split(de: &DiscreteEnsemble) -> Option<(usize, Vec<usize>)> {
    let free = (0..de.len())
        .filter(|&i| de.weights[i] > 0.0 && de.states[i].h > 0.0)
        .fold(None::<usize>, |b, i| match b {
            Some(j) if de.states[j].h >= de.states[i].h => Some(j),
            _ => Some(i),
        })?;
    let others = (0..de.len()).filter(|&i| i != free && de.weights[i] > 0.0 && de.states[i].h > 0.0).collect();
    Some((free, others))
}

/// Best average-interference-constrained policy on a grid.
///
/// Up to [`MAX_PRIMAL_STATES`] states the search is over primal powers; up to
/// [`MAX_DISCRETE_STATES`] it is over a `(nu, mu)` grid.
pub fn brute_force_p1(de: &DiscreteEnsemble, prob: &AipcProblem, grid: &OracleGrid) -> Result<OracleSolution> {
    grid.validate()?;
    check_budget(prob.power_budget)?;
    let Some((free, others)) = split(de) else {
        return Ok(OracleSolution { objective: 0.0, p: vec![0.0; de.len()], cells: 0 });
    };
    if others.len() + 1 > MAX_PRIMAL_STATES {
        return dual_grid_p1(de, prob, grid);
    }
    grid.guard(others.len() as u32)?;
    Ok(Primal { de, budget: prob.power_budget, prot: Interference(prob.gamma), free, others }.run(grid))
}

/// Best capacity-loss-constrained policy on a primal grid (at most
/// [`MAX_PRIMAL_STATES`] states).
pub fn brute_force_p2(de: &DiscreteEnsemble, prob: &PclcProblem, grid: &OracleGrid) -> Result<OracleSolution> {
    grid.validate()?;
    check_budget(prob.power_budget)?;
    if prob.fingerprint() != de.ensemble().fingerprint() {
        return Err(Error::Usage("problem was set up on a different ensemble".into()));
    }
    let Some((free, others)) = split(de) else {
        return Ok(OracleSolution { objective: 0.0, p: vec![0.0; de.len()], cells: 0 });
    };
    if others.len() + 1 > MAX_PRIMAL_STATES {
        return Err(Error::Precondition(format!(
            "primal grid supports at most {MAX_PRIMAL_STATES} active states, got {}",
            others.len() + 1
        )));
    }
    grid.guard(others.len() as u32)?;
    let allowed = prob.c_p_max - prob.c0;
    Ok(Primal { de, budget: prob.power_budget, prot: CapacityLoss { allowed }, free, others }.run(grid))
}

const LOG_DUAL_LO: f64 = -16.0;
const LOG_DUAL_HI: f64 = 8.0;

fn dual_grid_p1(de: &DiscreteEnsemble, prob: &AipcProblem, grid: &OracleGrid) -> Result<OracleSolution> {
    let cells = 3 * (grid.points as u128).pow(2) * (1 + grid.zoom_rounds as u128);
    if cells > grid.cell_budget {
        return Err(Error::ResourceGuard { cells, budget: grid.cell_budget });
    }
    let ens = de.ensemble();
    let n = de.len();
    let eval = |nu: f64, mu: f64, p: &mut [f64]| -> Option<f64> {
        let duals = DualPair { nu, mu };
        let mut power = 0.0;
        let mut interference = 0.0;
        let mut obj = 0.0;
        for (i, s) in ens.states().iter().enumerate() {
            p[i] = aipc::aipc_power(s, duals).ok()?;
            let w = ens.weight(i);
            power += w * p[i];
            interference += w * s.g * p[i];
            obj += w * (s.h * p[i]).ln_1p();
        }
        (power <= prob.power_budget && interference <= prob.gamma).then_some(obj)
    };
    // axes carry ln(multiplier); -inf stands for a zero multiplier
    let ladder = |lo: f64, hi: f64| -> Vec<f64> {
        let m = grid.points - 1;
        let mut v = vec![f64::NEG_INFINITY];
        v.extend((0..m).map(|k| lo + (hi - lo) * k as f64 / (m - 1) as f64));
        v
    };
    // The reconstructed objective is not unimodal across the faces where a
    // multiplier vanishes, so each face is refined on its own.
    let mut best: Option<(f64, Vec<f64>, [f64; 2])> = None;
    let mut cells = 0u128;
    for free in [[true, true], [false, true], [true, false]] {
        let (b, c) = refine_dual_face(&eval, &ladder, free, n, grid);
        cells += c;
        if let Some(b) = b {
            if best.as_ref().is_none_or(|(o, ..)| b.0 > *o) {
                best = Some(b);
            }
        }
    }
    let (objective, p, _) = best.unwrap_or((0.0, vec![0.0; n], [0.0; 2]));
    Ok(OracleSolution { objective, p, cells })
}

type DualCandidate = (f64, Vec<f64>, [f64; 2]);

fn refine_dual_face(
    eval: &dyn Fn(f64, f64, &mut [f64]) -> Option<f64>,
    ladder: &dyn Fn(f64, f64) -> Vec<f64>,
    free: [bool; 2],
    n: usize,
    grid: &OracleGrid,
) -> (Option<DualCandidate>, u128) {
    let start = |k: usize| if free[k] { ladder(LOG_DUAL_LO, LOG_DUAL_HI) } else { vec![f64::NEG_INFINITY] };
    let mut axes = [start(0), start(1)];
    let mut half = (LOG_DUAL_HI - LOG_DUAL_LO) / (grid.points - 2) as f64;
    let mut best: Option<DualCandidate> = None;
    let mut cells = 0u128;
    let mut p = vec![0.0; n];
    for round in 0..=grid.zoom_rounds {
        let before = best.as_ref().map(|(o, ..)| *o);
        for &ln_nu in &axes[0] {
            for &ln_mu in &axes[1] {
                cells += 1;
                if let Some(obj) = eval(ln_nu.exp(), ln_mu.exp(), &mut p) {
                    if best.as_ref().is_none_or(|(o, ..)| obj > *o) {
                        best = Some((obj, p.clone(), [ln_nu, ln_mu]));
                    }
                }
            }
        }
        if round == grid.zoom_rounds {
            break;
        }
        let Some((obj, _, centre)) = best.as_ref() else { break };
        if round > 0 && before.is_some_and(|b| *obj <= b) {
            half *= 0.5;
        }
        if half <= 1e-15 {
            break;
        }
        for k in 0..2 {
            // a zero multiplier stays on every ladder, so its axis is left alone
            if free[k] && centre[k].is_finite() {
                let mut v = ladder(centre[k] - half, centre[k] + half);
                v.push(centre[k]);
                v.sort_by(f64::total_cmp);
                v.dedup();
                axes[k] = v;
            }
        }
    }
    (best, cells)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(f: f64, e: f64, g: f64, o: f64, q: f64) -> FadingState {
        FadingState::new(f, e, g, o).with_pu_power(q)
    }

    #[test]
    fn single_state_unconstrained() {
        let de = DiscreteEnsemble::uniform(vec![state(1.0, 2.0, 1.0, 0.0, 1.0)]).unwrap();
        let sol = brute_force_p1(&de, &AipcProblem::unconstrained(3.0).unwrap(), &OracleGrid::default()).unwrap();
        assert_eq!(sol.p, vec![3.0]);
        assert!((sol.objective - 7f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn interference_falls_on_the_exposed_state() {
        // identical SU links, only state 0 reaches the PU
        let de = DiscreteEnsemble::uniform(vec![state(1.0, 1.0, 1.0, 0.0, 1.0), state(1.0, 1.0, 0.0, 0.0, 1.0)])
            .unwrap();
        let sol = brute_force_p1(&de, &AipcProblem::new(0.5, 2.0).unwrap(), &OracleGrid::default()).unwrap();
        assert!((sol.p[0] - 1.0).abs() < 1e-6, "{:?}", sol.p);
        assert!((sol.p[1] - 3.0).abs() < 1e-6, "{:?}", sol.p);
    }

    #[test]
    fn vacuous_loss_matches_unconstrained() {
        let de = DiscreteEnsemble::new(
            vec![state(1.0, 0.5, 0.7, 0.1, 2.0), state(0.3, 2.0, 0.2, 0.0, 2.0), state(2.0, 1.0, 1.5, 0.3, 2.0)],
            vec![0.2, 0.5, 0.3],
        )
        .unwrap();
        let grid = OracleGrid::default();
        let p2 = PclcProblem::new(de.ensemble(), 100.0, 1.0).unwrap();
        let a = brute_force_p2(&de, &p2, &grid).unwrap();
        let b = brute_force_p1(&de, &AipcProblem::unconstrained(1.0).unwrap(), &grid).unwrap();
        assert!((a.objective - b.objective).abs() < 1e-12);
    }

    #[test]
    fn primal_search_is_feasible() {
        let de = DiscreteEnsemble::new(
            vec![state(1.0, 0.5, 0.7, 0.1, 2.0), state(0.3, 2.0, 0.2, 0.0, 2.0), state(2.0, 1.0, 1.5, 0.3, 2.0)],
            vec![0.2, 0.5, 0.3],
        )
        .unwrap();
        let ens = de.ensemble();
        let prob = PclcProblem::new(ens, 0.05, 1.0).unwrap();
        let sol = brute_force_p2(&de, &prob, &OracleGrid::default()).unwrap();
        let c_p = crate::capacity::primary_capacity(ens, &sol.p).unwrap();
        let power = crate::capacity::mean_power(ens, &sol.p).unwrap();
        assert!(c_p >= prob.c0 - 1e-12 && power <= 1.0 + 1e-12, "{c_p} {power}");
        assert!(sol.objective > 0.0);
    }

    #[test]
    fn silent_pu_state_takes_the_power_as_loss_vanishes() {
        let de = DiscreteEnsemble::uniform(vec![state(1.0, 1.0, 1.0, 0.0, 0.0), state(1.0, 1.0, 1.0, 0.0, 5.0)])
            .unwrap();
        let prob = PclcProblem::new(de.ensemble(), 1e-9, 1.0).unwrap();
        let sol = brute_force_p2(&de, &prob, &OracleGrid::default()).unwrap();
        assert!((sol.p[0] - 2.0).abs() < 1e-6 && sol.p[1] < 1e-6, "{:?}", sol.p);
    }

    #[test]
    fn oversized_grid_is_refused() {
        let de = DiscreteEnsemble::uniform(vec![
            state(1.0, 1.0, 1.0, 0.0, 1.0),
            state(1.0, 2.0, 1.0, 0.0, 1.0),
            state(1.0, 3.0, 1.0, 0.0, 1.0),
        ])
        .unwrap();
        let grid = OracleGrid { points: 1000, zoom_rounds: 10, cell_budget: 1_000_000 };
        let r = brute_force_p1(&de, &AipcProblem::new(0.5, 1.0).unwrap(), &grid);
        assert!(matches!(r, Err(Error::ResourceGuard { .. })));
    }

    #[test]
    fn too_many_states_rejected() {
        let states = vec![state(1.0, 1.0, 1.0, 0.0, 1.0); 9];
        assert!(DiscreteEnsemble::uniform(states).is_err());
    }

    #[test]
    fn dual_grid_handles_five_states() {
        let states: Vec<_> = (0..5).map(|i| state(1.0, 0.5 + 0.3 * i as f64, 0.2 * i as f64, 0.0, 1.0)).collect();
        let de = DiscreteEnsemble::uniform(states).unwrap();
        let sol = brute_force_p1(&de, &AipcProblem::new(0.3, 1.0).unwrap(), &OracleGrid::default()).unwrap();
        let ens = de.ensemble();
        assert!(crate::capacity::mean_interference(ens, &sol.p).unwrap() <= 0.3);
        assert!(crate::capacity::mean_power(ens, &sol.p).unwrap() <= 1.0);
        assert!(sol.objective > 0.0);
    }
}
