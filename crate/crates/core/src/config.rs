//! Flat `key = value` run configuration.
//!
//! Files hold one assignment per line; `#` starts a comment. Later layers
//! (command-line overrides) replace earlier ones key by key. Everything not
//! given falls back to the defaults of [`Settings::default`].

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::dual::{DualMethod, SolverOptions};
use crate::error::{Error, Result};
use crate::fading::{ChannelDistribution, FadingEnsemble};
use crate::frontier::{ConstraintKind, LevelScale, PuSpec, SweepConfig};
use crate::oracle::OracleGrid;
use crate::pclc::PclcProblem;
use crate::pu::{PuPolicyKind, DEFAULT_CALIBRATION_TOL};

/// Environment variable naming a config file to load when none is given.
pub const CONFIG_ENV: &str = "SPECSHARE_CONFIG";

pub const KEYS: &[&str] = &[
    "dist.var_f",
    "dist.var_e",
    "dist.var_g",
    "dist.var_o",
    "sample.n",
    "sample.seed",
    "pu.policy",
    "pu.budget",
    "pu.calib_tol",
    "su.budget",
    "aipc.gamma",
    "pclc.c_delta",
    "pclc.loss_fraction",
    "solver.max_iters",
    "solver.tol",
    "solver.root_tol",
    "solver.root_max_iters",
    "solver.method",
    "frontier.kind",
    "frontier.levels",
    "frontier.scale",
    "oracle.points",
    "oracle.zoom_rounds",
    "oracle.cell_budget",
];

/// Raw assignments, validated for known keys only.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

fn exclusive(key: &str) -> Option<&'static str> {
    match key {
        "pclc.c_delta" => Some("pclc.loss_fraction"),
        "pclc.loss_fraction" => Some("pclc.c_delta"),
        _ => None,
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        for (i, raw) in text.lines().enumerate() {
            let err = |msg: String| Error::Parse { line: i + 1, msg };
            let line = raw.split_once('#').map_or(raw, |(l, _)| l).trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            if cfg.entries.contains_key(k) {
                return Err(err(format!("duplicate key {k:?}")));
            }
            if let Some(other) = exclusive(k).filter(|o| cfg.entries.contains_key(*o)) {
                return Err(err(format!("{k} and {other} are mutually exclusive")));
            }
            cfg.set(k, v).map_err(|e| err(e.to_string()))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        Self::parse(&text)
    }

    /// Sets one key. Setting `pclc.c_delta` drops `pclc.loss_fraction` and
    /// the other way round.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !KEYS.contains(&key) {
            return Err(Error::Usage(format!("unknown config key {key:?}")));
        }
        if value.is_empty() {
            return Err(Error::Usage(format!("empty value for {key}")));
        }
        if let Some(other) = exclusive(key) {
            self.entries.remove(other);
        }
        self.entries.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("expected key=value, got {assignment:?}")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn resolve(&self) -> Result<Settings> {
        let mut s = Settings::default();
        for (k, v) in &self.entries {
            let bad = |e: String| Error::Usage(format!("{k} = {v:?}: {e}"));
            match k.as_str() {
                "dist.var_f" => s.dist.var_f = num(v).map_err(bad)?,
                "dist.var_e" => s.dist.var_e = num(v).map_err(bad)?,
                "dist.var_g" => s.dist.var_g = num(v).map_err(bad)?,
                "dist.var_o" => s.dist.var_o = num(v).map_err(bad)?,
                "sample.n" => s.n = int(v).map_err(bad)?,
                "sample.seed" => s.seed = int(v).map_err(bad)?,
                "pu.policy" => s.pu.kind = v.parse::<PuPolicyKind>().map_err(|e| bad(e.to_string()))?,
                "pu.budget" => s.pu.budget = num(v).map_err(bad)?,
                "pu.calib_tol" => s.pu.calib_tol = num(v).map_err(bad)?,
                "su.budget" => s.su_budget = num(v).map_err(bad)?,
                "aipc.gamma" => s.gamma = num(v).map_err(bad)?,
                "pclc.c_delta" => s.pclc = PclcLevel::CDelta(num(v).map_err(bad)?),
                "pclc.loss_fraction" => s.pclc = PclcLevel::LossFraction(num(v).map_err(bad)?),
                "solver.max_iters" => s.solver.max_iters = int(v).map_err(bad)?,
                "solver.tol" => s.solver.tol = num(v).map_err(bad)?,
                "solver.root_tol" => s.solver.root_tol = num(v).map_err(bad)?,
                "solver.root_max_iters" => s.solver.root_max_iters = int(v).map_err(bad)?,
                "solver.method" => s.solver.method = v.parse::<DualMethod>().map_err(|e| bad(e.to_string()))?,
                "frontier.kind" => s.kind = v.parse().map_err(|e: Error| bad(e.to_string()))?,
                "frontier.levels" => s.levels = parse_levels(v).map_err(|e| bad(e.to_string()))?,
                "frontier.scale" => s.scale = v.parse().map_err(|e: Error| bad(e.to_string()))?,
                "oracle.points" => s.oracle.points = int(v).map_err(bad)?,
                "oracle.zoom_rounds" => s.oracle.zoom_rounds = int(v).map_err(bad)?,
                "oracle.cell_budget" => s.oracle.cell_budget = int(v).map_err(bad)?,
                _ => unreachable!("keys are checked on insertion"),
            }
        }
        s.validate()?;
        Ok(s)
    }
}

fn num(v: &str) -> std::result::Result<f64, String> {
    match v.to_ascii_lowercase().as_str() {
        "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
        _ => v.parse::<f64>().map_err(|e| e.to_string()),
    }
}

fn int<T: FromStr>(v: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.replace('_', "").parse::<T>().map_err(|e| e.to_string())
}

/// Parses `a:step:b` (inclusive, evenly spaced) or a comma-separated list.
pub fn parse_levels(spec: &str) -> Result<Vec<f64>> {
    let bad = |msg: String| Error::Usage(format!("levels {spec:?}: {msg}"));
    let parts: Vec<&str> = spec.split(':').map(str::trim).collect();
    if parts.len() == 3 {
        let [a, step, b] = [num(parts[0]), num(parts[1]), num(parts[2])].map(|r| r.map_err(&bad));
        let (a, step, b) = (a?, step?, b?);
        if !(a.is_finite() && b.is_finite() && step.is_finite() && step > 0.0 && b >= a) {
            return Err(bad("need finite a <= b and step > 0".into()));
        }
        let span = (b - a) / step;
        let count = span.round();
        if (span - count).abs() > 1e-9 * span.max(1.0) {
            return Err(bad(format!("step {step} does not divide [{a}, {b}]")));
        }
        if count > 1e6 {
            return Err(bad("more than a million levels".into()));
        }
        let count = count as usize;
        // the last point is pinned so that 0:0.1:1 ends exactly at 1
        return Ok((0..=count).map(|k| if k == count { b } else { a + k as f64 * step }).collect());
    }
    if parts.len() != 1 {
        return Err(bad("expected a:step:b or a comma-separated list".into()));
    }
    spec.split(',').map(|t| num(t.trim()).map_err(&bad)).collect()
}

/// Loss protection of a PCLC solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PclcLevel {
    /// Absolute `C_delta` in nats.
    CDelta(f64),
    /// `C_delta` as a fraction of `c_p_max`.
    LossFraction(f64),
}

/// A fully resolved configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub dist: ChannelDistribution,
    pub n: usize,
    pub seed: u64,
    pub pu: PuSpec,
    pub su_budget: f64,
    pub gamma: f64,
    pub pclc: PclcLevel,
    pub solver: SolverOptions,
    pub kind: ConstraintKind,
    pub levels: Vec<f64>,
    pub scale: LevelScale,
    pub oracle: OracleGrid,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            dist: ChannelDistribution::reference(),
            n: 100_000,
            seed: 1,
            pu: PuSpec { kind: PuPolicyKind::ConstantPower, budget: 10.0, calib_tol: DEFAULT_CALIBRATION_TOL },
            su_budget: 10.0,
            gamma: 1.0,
            pclc: PclcLevel::LossFraction(0.05),
            solver: SolverOptions::default(),
            kind: ConstraintKind::Pclc,
            levels: (0..=10).map(|k| k as f64 / 10.0).collect(),
            scale: LevelScale::LossFraction,
            oracle: OracleGrid::default(),
        }
    }
}

impl Settings {
    fn validate(&self) -> Result<()> {
        let usage = |e: Error| Error::Usage(e.to_string());
        self.dist.validate().map_err(usage)?;
        if self.n == 0 {
            return Err(Error::Usage("sample.n must be >= 1".into()));
        }
        for (k, v) in [("pu.budget", self.pu.budget), ("su.budget", self.su_budget), ("pu.calib_tol", self.pu.calib_tol)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Usage(format!("{k} must be positive, got {v}")));
            }
        }
        if self.gamma.is_nan() || self.gamma < 0.0 {
            return Err(Error::Usage(format!("aipc.gamma must be >= 0, got {}", self.gamma)));
        }
        match self.pclc {
            PclcLevel::CDelta(c) if c.is_nan() || c < 0.0 => {
                return Err(Error::Usage(format!("pclc.c_delta must be >= 0, got {c}")))
            }
            PclcLevel::LossFraction(x) if !(0.0..=1.0).contains(&x) => {
                return Err(Error::Usage(format!("pclc.loss_fraction must lie in [0, 1], got {x}")))
            }
            _ => {}
        }
        self.solver.validate().map_err(usage)?;
        self.sweep().validate().map_err(usage)
    }

    pub fn pclc_problem(&self, ens: &FadingEnsemble) -> Result<PclcProblem> {
        match self.pclc {
            PclcLevel::CDelta(c) => PclcProblem::new(ens, c, self.su_budget),
            PclcLevel::LossFraction(x) => PclcProblem::from_loss_fraction(ens, x, self.su_budget),
        }
    }

    pub fn sweep(&self) -> SweepConfig {
        SweepConfig {
            dist: self.dist,
            n: self.n,
            seed: self.seed,
            pu: self.pu,
            su_budget: self.su_budget,
            levels: self.levels.clone(),
            scale: self.scale,
            kind: self.kind,
            solver: self.solver,
        }
    }

    /// Every setting as sorted `key=value` lines, floats in shortest
    /// round-trip form. Equal settings render identically.
    pub fn canonical(&self) -> String {
        let mut m: BTreeMap<&str, String> = BTreeMap::new();
        m.insert("dist.var_f", format!("{:e}", self.dist.var_f));
        m.insert("dist.var_e", format!("{:e}", self.dist.var_e));
        m.insert("dist.var_g", format!("{:e}", self.dist.var_g));
        m.insert("dist.var_o", format!("{:e}", self.dist.var_o));
        m.insert("sample.n", self.n.to_string());
        m.insert("sample.seed", self.seed.to_string());
        m.insert("pu.policy", self.pu.kind.to_string());
        m.insert("pu.budget", format!("{:e}", self.pu.budget));
        m.insert("pu.calib_tol", format!("{:e}", self.pu.calib_tol));
        m.insert("su.budget", format!("{:e}", self.su_budget));
        m.insert("aipc.gamma", format!("{:e}", self.gamma));
        match self.pclc {
            PclcLevel::CDelta(c) => m.insert("pclc.c_delta", format!("{c:e}")),
            PclcLevel::LossFraction(x) => m.insert("pclc.loss_fraction", format!("{x:e}")),
        };
        m.insert("solver.max_iters", self.solver.max_iters.to_string());
        m.insert("solver.tol", format!("{:e}", self.solver.tol));
        m.insert("solver.root_tol", format!("{:e}", self.solver.root_tol));
        m.insert("solver.root_max_iters", self.solver.root_max_iters.to_string());
        m.insert("solver.method", format!("{:?}", self.solver.method).to_ascii_lowercase());
        m.insert("frontier.kind", self.kind.to_string());
        m.insert(
            "frontier.levels",
            self.levels.iter().map(|l| format!("{l:e}")).collect::<Vec<_>>().join(","),
        );
        m.insert("frontier.scale", self.scale.to_string());
        m.insert("oracle.points", self.oracle.points.to_string());
        m.insert("oracle.zoom_rounds", self.oracle.zoom_rounds.to_string());
        m.insert("oracle.cell_budget", self.oracle.cell_budget.to_string());
        let mut out = String::new();
        for (k, v) in m {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    /// Hex SHA-256 of [`Settings::canonical`].
    pub fn hash(&self) -> String {
        Sha256::digest(self.canonical().as_bytes()).iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_overrides() {
        let mut cfg = Config::parse("# reference run\nsample.n = 500\n\npu.policy = wf  # water-filling\n").unwrap();
        cfg.apply("sample.seed=9").unwrap();
        let s = cfg.resolve().unwrap();
        assert_eq!((s.n, s.seed, s.pu.kind), (500, 9, PuPolicyKind::WaterFilling));
        assert_eq!(s.su_budget, 10.0);
    }

    #[test]
    fn malformed_files_report_the_line() {
        assert!(matches!(Config::parse("sample.n = 5\nnonsense\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(Config::parse("bogus.key = 1\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(Config::parse("sample.n = 1\nsample.n = 2\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(
            Config::parse("pclc.c_delta = 0.1\npclc.loss_fraction = 0.05\n"),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn bad_values_fail_on_resolve() {
        let cfg = Config::parse("sample.n = many\n").unwrap();
        assert!(matches!(cfg.resolve(), Err(Error::Usage(_))));
        let cfg = Config::parse("frontier.levels = 0.3, 0.2\nfrontier.scale = absolute\n").unwrap();
        assert!(matches!(cfg.resolve(), Err(Error::Usage(_))));
    }

    #[test]
    fn later_pclc_key_replaces_the_other() {
        let mut cfg = Config::parse("pclc.c_delta = 0.1\n").unwrap();
        cfg.apply("pclc.loss_fraction=0.2").unwrap();
        assert_eq!(cfg.get("pclc.c_delta"), None);
        assert_eq!(cfg.resolve().unwrap().pclc, PclcLevel::LossFraction(0.2));
    }

    #[test]
    fn level_ranges() {
        let l = parse_levels("0:0.1:1.0").unwrap();
        assert_eq!(l.len(), 11);
        assert_eq!(l[10], 1.0);
        assert_eq!(parse_levels("0.5, 1,inf").unwrap(), vec![0.5, 1.0, f64::INFINITY]);
        assert!(parse_levels("0:0.3:1").is_err());
        assert!(parse_levels("1:0.1:0").is_err());
        assert!(parse_levels("0:1").is_err());
    }

    #[test]
    fn hash_depends_only_on_effective_values() {
        let a = Config::parse("sample.n = 1_000\n").unwrap().resolve().unwrap();
        let b = Config::parse("sample.n=1000\nsu.budget = 10\n").unwrap().resolve().unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        let c = Config::parse("sample.n = 1001\n").unwrap().resolve().unwrap();
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn every_key_appears_in_the_canonical_form() {
        let text = Settings::default().canonical();
        for k in KEYS.iter().filter(|k| **k != "pclc.c_delta") {
            assert!(text.contains(&format!("{k}=")), "{k} missing");
        }
    }
}
