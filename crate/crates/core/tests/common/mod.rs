#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spectrum_share::fading::{ChannelDistribution, FadingEnsemble, FadingState};
use spectrum_share::frontier::{prepare_ensemble, PuSpec};
use spectrum_share::oracle::DiscreteEnsemble;
use spectrum_share::pu::{PuPolicyKind, DEFAULT_CALIBRATION_TOL};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random finite ensemble with exponential gains at the reference variances,
/// random PU powers and random nonuniform weights.
pub fn random_discrete(rng: &mut ChaCha8Rng, k: usize) -> DiscreteEnsemble {
    let exp = |rng: &mut ChaCha8Rng, mean: f64| -mean * (1.0 - rng.random::<f64>()).ln();
    let states: Vec<_> = (0..k)
        .map(|_| {
            let (f, e, g, o) = (exp(rng, 1.0), exp(rng, 1.0), exp(rng, 0.5), exp(rng, 0.01));
            FadingState::new(f, e, g, o).with_pu_power(rng.random_range(0.5..3.0))
        })
        .collect();
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut w: Vec<f64> = raw.iter().map(|x| x / total).collect();
    let head: f64 = w[..k - 1].iter().sum();
    w[k - 1] = 1.0 - head;
    DiscreteEnsemble::new(states, w).unwrap()
}

pub fn pu(kind: PuPolicyKind) -> PuSpec {
    PuSpec { kind, budget: 10.0, calib_tol: DEFAULT_CALIBRATION_TOL }
}

/// Reference channels with the PU policy applied.
pub fn reference(kind: PuPolicyKind, n: usize, seed: u64) -> FadingEnsemble {
    prepare_ensemble(&ChannelDistribution::reference(), n, seed, &pu(kind)).unwrap()
}
