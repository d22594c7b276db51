//! Fixed-policy MAC bounds around the solved operating points.

use spectrum_share::aipc::{solve_aipc, AipcProblem};
use spectrum_share::capacity::{mac_rate_bounds, CapacityPoint};
use spectrum_share::dual::SolverOptions;
use spectrum_share::fading::{sample_ensemble, ChannelDistribution};
use spectrum_share::pclc::{solve_pclc, PclcProblem};
use spectrum_share::pu::{apply_pu_policy, PuPolicy};

fn main() -> spectrum_share::Result<()> {
    let ens = sample_ensemble(&ChannelDistribution::reference(), 20_000, 1)?;
    let ens = apply_pu_policy(ens, &PuPolicy::constant(10.0)?)?;
    let opts = SolverOptions::default();
    let sols = [
        ("aipc gamma=0.2", solve_aipc(&ens, &AipcProblem::new(0.2, 10.0)?, &opts)?),
        ("pclc 5% loss", solve_pclc(&ens, &PclcProblem::from_loss_fraction(&ens, 0.05, 10.0)?, &opts)?),
        ("silent SU", solve_aipc(&ens, &AipcProblem::new(0.0, 10.0)?, &opts)?),
    ];
    for (name, sol) in sols {
        let b = mac_rate_bounds(&ens, &sol.p)?;
        let pt = CapacityPoint { c_p: sol.c_p, c_s: sol.c_s };
        println!(
            "{name:<15} (c_p, c_s) = ({:.4}, {:.4})  bounds: pu {:.4}, su {:.4}, sum {:.4}  inside: {}",
            pt.c_p,
            pt.c_s,
            b.pu_bound,
            b.su_bound,
            b.sum_bound,
            b.contains(pt, 0.0)
        );
    }
    Ok(())
}
