//! Capacity frontiers: sweep a protection level, solve at each level on one
//! shared ensemble, and report the resulting `(c_p, c_s)` pairs.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;

use crate::aipc::{solve_aipc, AipcProblem};
use crate::capacity;
use crate::dual::{PolicySolution, SolverOptions};
use crate::error::{Error, Result};
use crate::fading::{sample_ensemble, ChannelDistribution, FadingEnsemble};
use crate::pclc::{solve_pclc, PclcProblem};
use crate::pu::{apply_pu_policy, PuPolicy, PuPolicyKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConstraintKind {
    Aipc,
    Pclc,
    /// AIPC capacities with `c_p` replaced by the guaranteed floor
    /// `c_p_max - log(1 + gamma)`.
    AipcLowerBound,
}

impl FromStr for ConstraintKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "aipc" => Ok(ConstraintKind::Aipc),
            "pclc" => Ok(ConstraintKind::Pclc),
            "aipc-lb" | "aipc_lower_bound" | "aipc-lower-bound" => Ok(ConstraintKind::AipcLowerBound),
            other => Err(Error::Parameter(format!(
                "unknown constraint kind {other:?} (expected aipc, pclc or aipc-lb)"
            ))),
        }
    }
}

impl fmt::Display for ConstraintKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConstraintKind::Aipc => "aipc",
            ConstraintKind::Pclc => "pclc",
            ConstraintKind::AipcLowerBound => "aipc_lower_bound",
        })
    }
}

/// How sweep levels are read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LevelScale {
    /// `gamma` for AIPC curves, `C_delta` in nats for PCLC.
    #[default]
    Absolute,
    /// Fractions of `c_p_max` in `[0, 1]`. A fraction `x` becomes
    /// `C_delta = x c_p_max`, and `gamma = exp(C_delta) - 1` for AIPC curves,
    /// so every kind is swept over the same nominal losses.
    LossFraction,
}

impl FromStr for LevelScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "absolute" | "nats" => Ok(LevelScale::Absolute),
            "fraction" | "loss-fraction" | "loss_fraction" => Ok(LevelScale::LossFraction),
            other => Err(Error::Parameter(format!("unknown level scale {other:?} (expected absolute or fraction)"))),
        }
    }
}

impl fmt::Display for LevelScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LevelScale::Absolute => "absolute",
            LevelScale::LossFraction => "fraction",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrontierPoint {
    pub kind: ConstraintKind,
    /// The absolute level that was solved: `gamma` or `C_delta`.
    pub level: f64,
    pub c_p: f64,
    pub c_s: f64,
    pub converged: bool,
    /// Largest feasibility / complementary-slackness violation of the solve.
    pub residual: f64,
}

/// PU policy as configured, before calibration on an ensemble.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PuSpec {
    pub kind: PuPolicyKind,
    pub budget: f64,
    pub calib_tol: f64,
}

impl PuSpec {
    pub fn build(&self, ens: &FadingEnsemble) -> Result<PuPolicy> {
        PuPolicy::build(self.kind, ens, self.budget, self.calib_tol)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub dist: ChannelDistribution,
    pub n: usize,
    pub seed: u64,
    pub pu: PuSpec,
    pub su_budget: f64,
    pub levels: Vec<f64>,
    pub scale: LevelScale,
    pub kind: ConstraintKind,
    pub solver: SolverOptions,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        self.dist.validate()?;
        if self.n == 0 {
            return Err(Error::Parameter("n must be >= 1".into()));
        }
        if !(self.su_budget.is_finite() && self.su_budget > 0.0) {
            return Err(Error::Parameter(format!("SU budget must be positive, got {}", self.su_budget)));
        }
        check_levels(&self.levels, self.scale)
    }
}

fn check_levels(levels: &[f64], scale: LevelScale) -> Result<()> {
    if levels.is_empty() {
        return Err(Error::Parameter("no sweep levels".into()));
    }
    for (i, &l) in levels.iter().enumerate() {
        let ok = match scale {
            LevelScale::Absolute => l >= 0.0,
            LevelScale::LossFraction => (0.0..=1.0).contains(&l),
        };
        if !ok {
            return Err(Error::Parameter(format!("level {l} is outside the {scale} range")));
        }
        if i > 0 && !(l > levels[i - 1]) {
            return Err(Error::Parameter(format!(
                "levels must be strictly increasing, got {} then {l}",
                levels[i - 1]
            )));
        }
    }
    Ok(())
}

/// Samples the ensemble of a sweep and applies its PU policy.
pub fn prepare_ensemble(dist: &ChannelDistribution, n: usize, seed: u64, pu: &PuSpec) -> Result<FadingEnsemble> {
    let ens = sample_ensemble(dist, n, seed)?;
    let pol = pu.build(&ens)?;
    apply_pu_policy(ens, &pol)
}

/// One curve, together with the `c_p_max` of the ensemble it was traced on.
#[derive(Debug, Clone, PartialEq)]
pub struct Frontier {
    pub c_p_max: f64,
    pub points: Vec<FrontierPoint>,
}

impl Frontier {
    /// Solves every level on `ens`. Levels are solved concurrently; the
    /// points keep the order of `levels`. A solve that stops short of its
    /// tolerance yields a point flagged `converged = false`.
    pub fn trace(
        ens: &FadingEnsemble,
        kind: ConstraintKind,
        levels: &[f64],
        scale: LevelScale,
        su_budget: f64,
        opts: &SolverOptions,
    ) -> Result<Frontier> {
        check_levels(levels, scale)?;
        let c_p_max = capacity::primary_capacity_max(ens)?;
        let points = levels
            .par_iter()
            .map(|&l| solve_at(ens, kind, absolute_level(kind, l, scale, c_p_max), su_budget, opts).map(|r| r.0))
            .collect::<Result<Vec<_>>>()?;
        for p in points.iter().filter(|p| !p.converged) {
            log::warn!("{} level {:e} did not converge (residual {:e})", p.kind, p.level, p.residual);
        }
        Ok(Frontier { c_p_max, points })
    }

    /// `c_s` at `c_p = target`, linear between neighbouring points in `c_p`.
    pub fn c_s_at(&self, target: f64) -> Result<f64> {
        let mut pts: Vec<(f64, f64)> = self.points.iter().map(|p| (p.c_p, p.c_s)).collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        if pts.is_empty() {
            return Err(Error::Range("empty curve".into()));
        }
        let (lo, hi) = (pts[0].0, pts[pts.len() - 1].0);
        if !(target >= lo && target <= hi) {
            return Err(Error::Range(format!("c_p = {target:e} is outside the curve's span [{lo:e}, {hi:e}]")));
        }
        // exact hits take the best c_s recorded there
        if let Some(best) = pts.iter().filter(|p| p.0 == target).map(|p| p.1).reduce(f64::max) {
            return Ok(best);
        }
        let k = pts.partition_point(|p| p.0 < target);
        let (a, b) = (pts[k - 1], pts[k]);
        let t = (target - a.0) / (b.0 - a.0);
        Ok(a.1 + t * (b.1 - a.1))
    }
}

/// Maps a configured level to `gamma` or `C_delta`.
pub fn absolute_level(kind: ConstraintKind, level: f64, scale: LevelScale, c_p_max: f64) -> f64 {
    match (scale, kind) {
        (LevelScale::Absolute, _) => level,
        (LevelScale::LossFraction, ConstraintKind::Pclc) => level * c_p_max,
        (LevelScale::LossFraction, _) => (level * c_p_max).exp_m1(),
    }
}

/// Solves one absolute level and returns its point along with the policy.
pub fn solve_at(
    ens: &FadingEnsemble,
    kind: ConstraintKind,
    level: f64,
    su_budget: f64,
    opts: &SolverOptions,
) -> Result<(FrontierPoint, PolicySolution)> {
    let c_p_max = capacity::primary_capacity_max(ens)?;
    let sol = match kind {
        ConstraintKind::Pclc => solve_pclc(ens, &PclcProblem::new(ens, level, su_budget)?, opts)?,
        _ => solve_aipc(ens, &AipcProblem::new(level, su_budget)?, opts)?,
    };
    let c_p = match kind {
        // clamped once log(1 + gamma) exceeds everything the PU has
        ConstraintKind::AipcLowerBound => (c_p_max - level.ln_1p()).max(0.0),
        _ => sol.c_p,
    };
    let pt = FrontierPoint { kind, level, c_p, c_s: sol.c_s, converged: sol.converged, residual: sol.max_residual() };
    Ok((pt, sol))
}

/// Samples the configured ensemble and traces one curve on it.
pub fn trace_frontier(cfg: &SweepConfig) -> Result<Frontier> {
    cfg.validate()?;
    let ens = prepare_ensemble(&cfg.dist, cfg.n, cfg.seed, &cfg.pu)?;
    Frontier::trace(&ens, cfg.kind, &cfg.levels, cfg.scale, cfg.su_budget, &cfg.solver)
}

/// Relative `c_s` gain of curve `a` over curve `b` where the PU keeps
/// `(1 - loss_fraction) c_p_max`. Both curves must come from the same
/// ensemble.
pub fn compare_at_loss(a: &Frontier, b: &Frontier, loss_fraction: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&loss_fraction) {
        return Err(Error::Parameter(format!("loss fraction must lie in [0, 1], got {loss_fraction}")));
    }
    if a.c_p_max != b.c_p_max {
        return Err(Error::Usage(format!(
            "curves come from different ensembles (c_p_max {:e} vs {:e})",
            a.c_p_max, b.c_p_max
        )));
    }
    let target = (1.0 - loss_fraction) * a.c_p_max;
    let (sa, sb) = (a.c_s_at(target)?, b.c_s_at(target)?);
    if !(sb > 0.0) {
        return Err(Error::Range(format!("reference curve has c_s = {sb:e} at c_p = {target:e}")));
    }
    Ok((sa - sb) / sb)
}

pub const CSV_HEADER: &str = "kind,level,c_p,c_s,converged,residuals";

/// Twelve significant digits, `inf` for an infinite level.
fn sci(x: f64) -> String {
    if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.11e}")
    }
}

pub fn write_csv<W: Write>(points: &[FrontierPoint], mut out: W) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for p in points {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            p.kind,
            sci(p.level),
            sci(p.c_p),
            sci(p.c_s),
            p.converged,
            sci(p.residual)
        )?;
    }
    Ok(())
}

/// Provenance of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetadata {
    pub seed: u64,
    pub n: usize,
    /// SHA-256 of the canonical rendering of the effective configuration.
    pub config_hash: String,
    pub version: String,
    pub c_p_max: f64,
    /// Standard error of the sample mean behind `c_p_max`.
    pub c_p_max_stderr: f64,
}

impl RunMetadata {
    pub fn new(ens: &FadingEnsemble, config_hash: String) -> Result<Self> {
        let (c_p_max, c_p_max_stderr) = mean_and_stderr(ens, |s| s.pu_signal().ln_1p());
        if !ens.pu_applied() {
            return Err(Error::State("PU powers have not been populated".into()));
        }
        Ok(RunMetadata {
            seed: ens.seed(),
            n: ens.len(),
            config_hash,
            version: env!("CARGO_PKG_VERSION").to_string(),
            c_p_max,
            c_p_max_stderr,
        })
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "seed={}", self.seed)?;
        writeln!(out, "n={}", self.n)?;
        writeln!(out, "config_hash={}", self.config_hash)?;
        writeln!(out, "version={}", self.version)?;
        writeln!(out, "c_p_max={}", sci(self.c_p_max))?;
        writeln!(out, "c_p_max_stderr={}", sci(self.c_p_max_stderr))?;
        Ok(())
    }
}

/// Sample mean of a per-state quantity and its standard error.
pub fn mean_and_stderr<F>(ens: &FadingEnsemble, term: F) -> (f64, f64)
where
    F: Fn(&crate::fading::FadingState) -> f64 + Sync,
{
    let mean = ens.expect(|_, s| term(s));
    let var = ens.expect(|_, s| {
        let d = term(s) - mean;
        d * d
    });
    let n = ens.len() as f64;
    let se = if ens.len() > 1 { (var * n / (n - 1.0) / n).sqrt() } else { 0.0 };
    (mean, se)
}
