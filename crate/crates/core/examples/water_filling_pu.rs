//! Calibrates the PU water level and shows how the PU powers spread over f.

use spectrum_share::fading::{sample_ensemble, ChannelDistribution};
use spectrum_share::pu::{apply_pu_policy, PuPolicy, DEFAULT_CALIBRATION_TOL};

fn main() -> spectrum_share::Result<()> {
    let ens = sample_ensemble(&ChannelDistribution::reference(), 50_000, 1)?;
    for budget in [1.0, 10.0] {
        let pol = PuPolicy::water_filling(&ens, budget, DEFAULT_CALIBRATION_TOL)?;
        let wf = apply_pu_policy(ens.clone(), &pol)?;
        let silent = wf.expect(|_, s| (s.q == 0.0) as u8 as f64);
        println!(
            "Q = {budget}: water level {:.6}, mean q {:.9}, PU silent in {:.1}% of states",
            pol.water_level,
            wf.expect(|_, s| s.q),
            100.0 * silent
        );
        for f in [0.05, 0.2, 1.0, 3.0] {
            println!("  f = {f:<4} -> q = {:.4}", pol.power(f));
        }
    }
    Ok(())
}
