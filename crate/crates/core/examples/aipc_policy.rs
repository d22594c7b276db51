//! Interference-constrained SU policy: capacity, multipliers and KKT residuals
//! over a few thresholds.

use spectrum_share::aipc::{aipc_kkt, solve_aipc, AipcProblem};
use spectrum_share::capacity::capacity_loss_bound_check;
use spectrum_share::dual::SolverOptions;
use spectrum_share::fading::{sample_ensemble, ChannelDistribution};
use spectrum_share::pu::{apply_pu_policy, PuPolicy};

fn main() -> spectrum_share::Result<()> {
    let ens = sample_ensemble(&ChannelDistribution::reference(), 20_000, 1)?;
    let ens = apply_pu_policy(ens, &PuPolicy::constant(10.0)?)?;
    let opts = SolverOptions::default();
    println!("{:>8} {:>10} {:>10} {:>10} {:>10} {:>10}", "gamma", "c_s", "c_p", "nu", "mu", "kkt");
    for gamma in [0.0, 0.05, 0.2, 1.0, f64::INFINITY] {
        let sol = solve_aipc(&ens, &AipcProblem::new(gamma, 10.0)?, &opts)?;
        let kkt = aipc_kkt(&ens, &sol);
        println!(
            "{gamma:>8} {:>10.5} {:>10.5} {:>10.4e} {:>10.4e} {:>10.2e}",
            sol.c_s,
            sol.c_p,
            sol.duals.nu,
            sol.duals.mu,
            kkt.worst()
        );
        if gamma.is_finite() {
            let b = capacity_loss_bound_check(&ens, &sol.p, gamma)?;
            println!("{:>8} PU loss {:.5} <= log(1 + gamma) = {:.5}", "", b.loss, b.bound);
        }
    }
    Ok(())
}
