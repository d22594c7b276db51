//! Traces PCLC, AIPC and lower-bound curves on one ensemble and prints the CSV.

use spectrum_share::dual::SolverOptions;
use spectrum_share::fading::ChannelDistribution;
use spectrum_share::frontier::{compare_at_loss, prepare_ensemble, write_csv, ConstraintKind, Frontier, LevelScale, PuSpec};
use spectrum_share::pu::PuPolicyKind;

fn main() -> spectrum_share::Result<()> {
    let kind = std::env::args().nth(1).unwrap_or_else(|| "cp".into()).parse::<PuPolicyKind>()?;
    let pu = PuSpec { kind, budget: 10.0, calib_tol: 1e-8 };
    let ens = prepare_ensemble(&ChannelDistribution::reference(), 20_000, 1, &pu)?;
    let levels: Vec<f64> = (0..=10).map(|k| k as f64 / 10.0).collect();
    let opts = SolverOptions::default();

    let mut out = std::io::stdout().lock();
    let mut curves = Vec::new();
    for c in [ConstraintKind::Pclc, ConstraintKind::Aipc, ConstraintKind::AipcLowerBound] {
        let fr = Frontier::trace(&ens, c, &levels, LevelScale::LossFraction, 10.0, &opts)?;
        write_csv(&fr.points, &mut out)?;
        curves.push(fr);
    }
    // the grid is coarse, so this interpolated figure understates the gain
    let gain = compare_at_loss(&curves[0], &curves[1], 0.1)?;
    println!("PCLC over AIPC at 10% loss: {:+.1}%", 100.0 * gain);
    Ok(())
}
