//! Command-line front end shared by the `specshare` binary and the tests.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::aipc::{solve_aipc, AipcProblem};
use crate::capacity::{self, CapacityPoint};
use crate::config::{Config, Settings, CONFIG_ENV};
use crate::dual::PolicySolution;
use crate::error::{Error, Result};
use crate::fading::{read_ensemble, sample_ensemble, write_ensemble, FadingEnsemble};
use crate::frontier::{prepare_ensemble, write_csv, ConstraintKind, Frontier, RunMetadata};
use crate::oracle::{brute_force_p1, brute_force_p2, DiscreteEnsemble};
use crate::pclc::solve_pclc;
use crate::pu::apply_pu_policy;

#[derive(Debug, Parser)]
#[command(name = "specshare", version, about = "SU power control and capacity frontiers for spectrum sharing")]
pub struct Cli {
    /// Config file of `key = value` lines.
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,

    /// Override one config key, e.g. `--set sample.n=1000`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct Io {
    /// Read channel gains from this file instead of sampling.
    #[arg(long)]
    pub ensemble: Option<PathBuf>,

    /// Output file (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a fading ensemble and write its gains.
    Sample {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        io: Io,
    },
    /// Solve the interference-constrained problem.
    SolveAipc {
        /// Interference threshold (`inf` for none).
        #[arg(long)]
        gamma: Option<String>,
        /// Also write per-state powers here.
        #[arg(long)]
        dump: Option<PathBuf>,
        #[command(flatten)]
        io: Io,
    },
    /// Solve the capacity-loss-constrained problem.
    SolvePclc {
        /// Allowed PU capacity loss in nats.
        #[arg(long, conflicts_with = "loss_fraction")]
        c_delta: Option<String>,
        /// Allowed loss as a fraction of the PU's interference-free capacity.
        #[arg(long)]
        loss_fraction: Option<String>,
        #[arg(long)]
        dump: Option<PathBuf>,
        #[command(flatten)]
        io: Io,
    },
    /// Trace a (c_p, c_s) curve over a grid of protection levels.
    Frontier {
        /// aipc, pclc or aipc-lb.
        #[arg(long)]
        kind: Option<String>,
        /// `a:step:b` or a comma-separated list.
        #[arg(long)]
        levels: Option<String>,
        /// absolute or fraction.
        #[arg(long)]
        scale: Option<String>,
        /// Run metadata file (defaults to `<out>.meta`, or stderr).
        #[arg(long)]
        meta: Option<PathBuf>,
        #[command(flatten)]
        io: Io,
    },
    /// Solve one policy and report the fixed-policy MAC rate bounds.
    MacBound {
        /// aipc or pclc.
        #[arg(long, default_value = "pclc")]
        policy: String,
        #[command(flatten)]
        io: Io,
    },
    /// Cross-check a solver against the grid oracle on a small ensemble.
    Oracle {
        /// p1 (interference) or p2 (capacity loss).
        #[arg(long, default_value = "p1")]
        problem: String,
        /// States to sample when no ensemble file is given.
        #[arg(long, default_value_t = 3)]
        states: usize,
        #[command(flatten)]
        io: Io,
    },
}

/// Parses `args` (program name first), runs, and returns the exit status.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn settings(cli: &Cli, extra: &[(&str, Option<&str>)]) -> Result<Settings> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    for o in &cli.overrides {
        cfg.apply(o)?;
    }
    for (k, v) in extra {
        if let Some(v) = v {
            cfg.set(k, v)?;
        }
    }
    cfg.resolve()
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn create(p: &Path) -> Result<File> {
    File::create(p).map_err(|e| Error::Io(io::Error::new(e.kind(), format!("{}: {e}", p.display()))))
}

/// The configured ensemble, or the gains in `file`, with PU powers applied.
fn ensemble(s: &Settings, file: Option<&Path>) -> Result<FadingEnsemble> {
    match file {
        None => prepare_ensemble(&s.dist, s.n, s.seed, &s.pu),
        Some(p) => {
            let f = File::open(p).map_err(|e| Error::Io(io::Error::new(e.kind(), format!("{}: {e}", p.display()))))?;
            let ens = read_ensemble(BufReader::new(f))?;
            let pol = s.pu.build(&ens)?;
            apply_pu_policy(ens, &pol)
        }
    }
}

fn report(sol: &PolicySolution, ens: &FadingEnsemble, dump: Option<&Path>, out: Option<&Path>) -> Result<()> {
    if let Some(d) = dump {
        let mut w = BufWriter::new(create(d)?);
        sol.write_dump(ens, &mut w)?;
        w.flush()?;
    }
    let mut w = output(out)?;
    sol.write_summary(&mut w)?;
    w.flush()?;
    if !sol.converged {
        log::warn!("solver stopped before reaching tolerance: {}", sol.diagnostic.as_deref().unwrap_or("no detail"));
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Sample { n, seed, io } => {
            if io.ensemble.is_some() {
                return Err(Error::Usage("sample does not read an ensemble".into()));
            }
            let (n, seed) = (n.map(|v| v.to_string()), seed.map(|v| v.to_string()));
            let s = settings(&cli, &[("sample.n", n.as_deref()), ("sample.seed", seed.as_deref())])?;
            let ens = sample_ensemble(&s.dist, s.n, s.seed)?;
            let mut w = output(io.out.as_deref())?;
            write_ensemble(&ens, &mut w)?;
            w.flush()?;
        }
        Command::SolveAipc { gamma, dump, io } => {
            let s = settings(&cli, &[("aipc.gamma", gamma.as_deref())])?;
            let ens = ensemble(&s, io.ensemble.as_deref())?;
            let sol = solve_aipc(&ens, &AipcProblem::new(s.gamma, s.su_budget)?, &s.solver)?;
            report(&sol, &ens, dump.as_deref(), io.out.as_deref())?;
        }
        Command::SolvePclc { c_delta, loss_fraction, dump, io } => {
            let s = settings(&cli, &[("pclc.c_delta", c_delta.as_deref()), ("pclc.loss_fraction", loss_fraction.as_deref())])?;
            let ens = ensemble(&s, io.ensemble.as_deref())?;
            let sol = solve_pclc(&ens, &s.pclc_problem(&ens)?, &s.solver)?;
            report(&sol, &ens, dump.as_deref(), io.out.as_deref())?;
        }
        Command::Frontier { kind, levels, scale, meta, io } => {
            let s = settings(
                &cli,
                &[("frontier.kind", kind.as_deref()), ("frontier.levels", levels.as_deref()), ("frontier.scale", scale.as_deref())],
            )?;
            let ens = ensemble(&s, io.ensemble.as_deref())?;
            let fr = Frontier::trace(&ens, s.kind, &s.levels, s.scale, s.su_budget, &s.solver)?;
            let mut w = output(io.out.as_deref())?;
            write_csv(&fr.points, &mut w)?;
            w.flush()?;
            let md = RunMetadata::new(&ens, s.hash())?;
            let meta = meta.clone().or_else(|| io.out.as_ref().map(|o| meta_path(o)));
            match meta {
                Some(p) => {
                    let mut w = BufWriter::new(create(&p)?);
                    md.write(&mut w)?;
                    w.flush()?;
                }
                None => md.write(io::stderr().lock())?,
            }
        }
        Command::MacBound { policy, io } => {
            let s = settings(&cli, &[])?;
            let ens = ensemble(&s, io.ensemble.as_deref())?;
            let sol = match policy.parse::<ConstraintKind>()? {
                ConstraintKind::Pclc => solve_pclc(&ens, &s.pclc_problem(&ens)?, &s.solver)?,
                ConstraintKind::Aipc => solve_aipc(&ens, &AipcProblem::new(s.gamma, s.su_budget)?, &s.solver)?,
                ConstraintKind::AipcLowerBound => {
                    return Err(Error::Usage("mac-bound needs a solved policy: aipc or pclc".into()))
                }
            };
            let b = capacity::mac_rate_bounds(&ens, &sol.p)?;
            let pt = CapacityPoint { c_p: sol.c_p, c_s: sol.c_s };
            let mut w = output(io.out.as_deref())?;
            writeln!(w, "policy={policy}")?;
            writeln!(w, "c_p={:e}", pt.c_p)?;
            writeln!(w, "c_s={:e}", pt.c_s)?;
            writeln!(w, "pu_bound={:e}", b.pu_bound)?;
            writeln!(w, "su_bound={:e}", b.su_bound)?;
            writeln!(w, "sum_bound={:e}", b.sum_bound)?;
            writeln!(w, "inside={}", b.contains(pt, 0.0))?;
            writeln!(w, "converged={}", sol.converged)?;
            w.flush()?;
        }
        Command::Oracle { problem, states, io } => {
            let mut s = settings(&cli, &[])?;
            let ens = match io.ensemble.as_deref() {
                Some(p) => ensemble(&s, Some(p))?,
                None => {
                    s.n = *states;
                    ensemble(&s, None)?
                }
            };
            let de = DiscreteEnsemble::uniform(ens.states().to_vec())?;
            let (sol, oracle) = match problem.to_ascii_lowercase().as_str() {
                "p1" => {
                    let prob = AipcProblem::new(s.gamma, s.su_budget)?;
                    (solve_aipc(de.ensemble(), &prob, &s.solver)?, brute_force_p1(&de, &prob, &s.oracle)?)
                }
                "p2" => {
                    let prob = s.pclc_problem(de.ensemble())?;
                    (solve_pclc(de.ensemble(), &prob, &s.solver)?, brute_force_p2(&de, &prob, &s.oracle)?)
                }
                other => return Err(Error::Usage(format!("unknown oracle problem {other:?} (expected p1 or p2)"))),
            };
            let rel = (sol.c_s - oracle.objective) / oracle.objective.abs().max(f64::MIN_POSITIVE);
            let mut w = output(io.out.as_deref())?;
            writeln!(w, "states={}", de.len())?;
            writeln!(w, "solver_objective={:e}", sol.c_s)?;
            writeln!(w, "oracle_objective={:e}", oracle.objective)?;
            writeln!(w, "relative_difference={rel:e}")?;
            writeln!(w, "solver_residual={:e}", sol.max_residual())?;
            writeln!(w, "solver_converged={}", sol.converged)?;
            writeln!(w, "oracle_cells={}", oracle.cells)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn meta_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}
