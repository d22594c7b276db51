//! Grid oracle against the dual solvers on random three-state distributions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spectrum_share::aipc::{solve_aipc, AipcProblem};
use spectrum_share::dual::SolverOptions;
use spectrum_share::fading::FadingState;
use spectrum_share::oracle::{brute_force_p1, brute_force_p2, DiscreteEnsemble, OracleGrid};
use spectrum_share::pclc::{solve_pclc, PclcProblem};

fn main() -> spectrum_share::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let opts = SolverOptions::default();
    let grid = OracleGrid::default();
    for _ in 0..5 {
        let states: Vec<FadingState> = (0..3)
            .map(|_| {
                let mut x = |m: f64| -m * (1.0 - rng.random::<f64>()).ln();
                FadingState::new(x(1.0), x(1.0), x(0.5), x(0.01)).with_pu_power(2.0)
            })
            .collect();
        let de = DiscreteEnsemble::uniform(states)?;

        let p1 = AipcProblem::new(0.3, 1.0)?;
        let (s, o) = (solve_aipc(de.ensemble(), &p1, &opts)?, brute_force_p1(&de, &p1, &grid)?);
        print!("P1 solver {:.6} oracle {:.6}   ", s.c_s, o.objective);

        let p2 = PclcProblem::from_loss_fraction(de.ensemble(), 0.1, 1.0)?;
        let (s, o) = (solve_pclc(de.ensemble(), &p2, &opts)?, brute_force_p2(&de, &p2, &grid)?);
        println!("P2 solver {:.6} oracle {:.6} ({} cells)", s.c_s, o.objective, o.cells);
    }
    Ok(())
}
