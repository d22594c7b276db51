//! Optima frozen from fine oracle grids (128 points, 80 zoom rounds), checked
//! against the dual solvers.

use spectrum_share::aipc::{solve_aipc, AipcProblem};
use spectrum_share::dual::SolverOptions;
use spectrum_share::fading::FadingState;
use spectrum_share::oracle::DiscreteEnsemble;
use spectrum_share::pclc::{solve_pclc, PclcProblem};

fn s(f: f64, e: f64, g: f64, o: f64, q: f64) -> FadingState {
    FadingState::new(f, e, g, o).with_pu_power(q)
}

const AIPC_5_STATE: f64 = 0.467259601416;
const PCLC_3_STATE: f64 = 0.794916401012;

#[test]
fn five_state_interference_optimum() {
    let de = DiscreteEnsemble::new(
        vec![
            s(1.2, 0.8, 0.3, 0.01, 2.0),
            s(0.4, 1.5, 0.9, 0.02, 1.0),
            s(2.0, 0.3, 0.1, 0.0, 3.0),
            s(0.7, 2.2, 1.4, 0.005, 0.5),
            s(1.0, 1.0, 0.6, 0.01, 1.5),
        ],
        vec![0.1, 0.25, 0.2, 0.3, 0.15],
    )
    .unwrap();
    let sol = solve_aipc(de.ensemble(), &AipcProblem::new(0.3, 1.0).unwrap(), &SolverOptions::default()).unwrap();
    assert!(sol.converged);
    assert!((sol.c_s - AIPC_5_STATE).abs() <= 1e-6 * AIPC_5_STATE, "{}", sol.c_s);
}

#[test]
fn three_state_capacity_loss_optimum() {
    let de = DiscreteEnsemble::new(
        vec![s(1.2, 0.8, 0.3, 0.01, 2.0), s(0.4, 1.5, 0.9, 0.02, 1.0), s(0.7, 2.2, 1.4, 0.005, 0.5)],
        vec![0.3, 0.3, 0.4],
    )
    .unwrap();
    let prob = PclcProblem::new(de.ensemble(), 0.1, 1.0).unwrap();
    let sol = solve_pclc(de.ensemble(), &prob, &SolverOptions::default()).unwrap();
    assert!(sol.converged, "{:?}", sol.diagnostic);
    assert!(sol.protection_slack >= -1e-9 && sol.power_slack >= -1e-9);
    assert!((sol.c_s - PCLC_3_STATE).abs() <= 1e-6 * PCLC_3_STATE, "{}", sol.c_s);
    // the first state stays (numerically) silent
    assert!(sol.p[0] <= 1e-6);
}
