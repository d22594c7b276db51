//! Capacity-loss-constrained SU policy at 5% PU loss, next to the
//! interference-constrained policy that costs the PU the same.

use spectrum_share::aipc::{solve_aipc, AipcProblem};
use spectrum_share::dual::SolverOptions;
use spectrum_share::fading::{sample_ensemble, ChannelDistribution};
use spectrum_share::pclc::{activation_mismatches, solve_pclc, PclcProblem};
use spectrum_share::pu::{apply_pu_policy, PuPolicy};

fn main() -> spectrum_share::Result<()> {
    let ens = sample_ensemble(&ChannelDistribution::reference(), 20_000, 1)?;
    let ens = apply_pu_policy(ens, &PuPolicy::constant(10.0)?)?;
    let opts = SolverOptions::default();
    let prob = PclcProblem::from_loss_fraction(&ens, 0.05, 10.0)?;
    let sol = solve_pclc(&ens, &prob, &opts)?;
    println!("C_p^max {:.5}, allowed loss {:.5} nats", prob.c_p_max, prob.c_delta);
    println!(
        "PCLC: c_s {:.5}, c_p {:.5}, nu {:.4}, mu {:.4}, converged {}, duality gap {:.1e}",
        sol.c_s, sol.c_p, sol.duals.nu, sol.duals.mu, sol.converged, sol.duality_gap
    );
    println!(
        "      {} states with competing roots, {} where the best power beats the activation test",
        sol.multi_root_states,
        activation_mismatches(&ens, &sol)
    );

    // bisect gamma until the AIPC policy costs the PU the same
    let target = prob.c_p_max - prob.c_delta;
    let (mut lo, mut hi) = (0.0, 10.0);
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        if solve_aipc(&ens, &AipcProblem::new(mid, 10.0)?, &opts)?.c_p > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let aipc = solve_aipc(&ens, &AipcProblem::new(lo, 10.0)?, &opts)?;
    println!("AIPC: gamma {lo:.5}, c_s {:.5}, c_p {:.5}", aipc.c_s, aipc.c_p);
    println!("gain {:.1}%", 100.0 * (sol.c_s / aipc.c_s - 1.0));
    Ok(())
}
