//! Draws a fading ensemble and compares its moments with the channel variances.
//!
//! cargo run --release --example sample_ensemble -- [n] [seed]

use spectrum_share::fading::{sample_ensemble, write_ensemble, ChannelDistribution, FadingState};

fn main() -> spectrum_share::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(100_000, |a| a.parse().expect("n"));
    let seed: u64 = args.next().map_or(1, |a| a.parse().expect("seed"));
    let dist = ChannelDistribution::reference();
    let ens = sample_ensemble(&dist, n, seed)?;

    let moments = |pick: fn(&FadingState) -> f64| {
        let mean = ens.expect(|_, s| pick(s));
        let var = ens.expect(|_, s| (pick(s) - mean).powi(2));
        (mean, var)
    };
    for (name, var, pick) in [
        ("f", dist.var_f, (|s: &FadingState| s.f) as fn(&FadingState) -> f64),
        ("e", dist.var_e, |s: &FadingState| s.e),
        ("g", dist.var_g, |s: &FadingState| s.g),
        ("o", dist.var_o, |s: &FadingState| s.o),
    ] {
        let (m, v) = moments(pick);
        println!("{name}: mean {m:.4} (expect {var}), variance {v:.4} (expect {:.4})", var * var);
    }

    // first few rows of the exported text form
    let mut buf = Vec::new();
    write_ensemble(&ens, &mut buf)?;
    for line in String::from_utf8_lossy(&buf).lines().take(5) {
        println!("{line}");
    }
    Ok(())
}
