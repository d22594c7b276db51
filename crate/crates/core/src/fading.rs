//! Block-fading channel model.
//!
//! Four independent Rayleigh links are involved: PU-Tx to PU-Rx (`f`), SU-Tx
//! to SU-Rx (`e`), SU-Tx to PU-Rx (`g`) and PU-Tx to SU-Rx (`o`). Each fading
//! state carries their power gains together with the squared inner product of
//! the two transmitters' receive vectors, which is only needed for the
//! two-receiver multiple-access bounds.
//!
//! Complex gains are drawn from ChaCha8 with one stream per state, so state
//! `i` of an ensemble depends on `(seed, i)` alone.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::reduce;

/// Variances of the four circularly-symmetric complex Gaussian channel gains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelDistribution {
    /// PU-Tx to PU-Rx.
    pub var_f: f64,
    /// SU-Tx to SU-Rx.
    pub var_e: f64,
    /// SU-Tx to PU-Rx.
    pub var_g: f64,
    /// PU-Tx to SU-Rx.
    pub var_o: f64,
}

impl ChannelDistribution {
    pub fn new(var_f: f64, var_e: f64, var_g: f64, var_o: f64) -> Result<Self> {
        let dist = ChannelDistribution { var_f, var_e, var_g, var_o };
        dist.validate()?;
        Ok(dist)
    }

    /// The reference setup used throughout the examples and acceptance runs:
    /// unit-variance direct links, cross links of variance 0.5 and 0.01.
    pub fn reference() -> Self {
        ChannelDistribution { var_f: 1.0, var_e: 1.0, var_g: 0.5, var_o: 0.01 }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("var_f", self.var_f),
            ("var_e", self.var_e),
            ("var_g", self.var_g),
            ("var_o", self.var_o),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Parameter(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.var_f == 0.0 || self.var_e == 0.0 {
            return Err(Error::Parameter(
                "var_f and var_e must be positive, otherwise both links carry nothing".into(),
            ));
        }
        Ok(())
    }
}

/// One joint fading realization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FadingState {
    /// PU channel power gain.
    pub f: f64,
    /// SU direct power gain.
    pub e: f64,
    /// SU-to-PU cross power gain.
    pub g: f64,
    /// PU-to-SU cross power gain.
    pub o: f64,
    /// `|h_p^H h_s|^2` with `h_p = [f~, o~]`, `h_s = [g~, e~]`.
    pub cross_mag2: f64,
    /// PU transmit power in this state.
    pub q: f64,
    /// Effective SU gain `e / (1 + o q)`.
    pub h: f64,
}

impl FadingState {
    /// A state with the given power gains, silent PU and no cross-vector
    /// correlation.
    pub fn new(f: f64, e: f64, g: f64, o: f64) -> Self {
        FadingState { f, e, g, o, cross_mag2: 0.0, q: 0.0, h: e }
    }

    pub fn with_cross(mut self, cross_mag2: f64) -> Self {
        self.cross_mag2 = cross_mag2;
        self
    }

    /// Sets the PU power and refreshes the effective SU gain.
    pub fn with_pu_power(mut self, q: f64) -> Self {
        self.q = q;
        self.h = effective_gain(self.e, self.o, q);
        self
    }

    /// Received PU signal power `f q`.
    #[inline]
    pub fn pu_signal(&self) -> f64 {
        self.f * self.q
    }

    fn validate(&self) -> Result<()> {
        let all = [self.f, self.e, self.g, self.o, self.cross_mag2, self.q];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Parameter(format!("gains and powers must be finite and >= 0: {self:?}")));
        }
        Ok(())
    }
}

#[inline]
fn effective_gain(e: f64, o: f64, q: f64) -> f64 {
    e / (1.0 + o * q)
}

/// A finite set of fading states over which every expectation is taken.
///
/// Sampled ensembles weight all states equally. Ensembles built from an
/// explicit probability vector (see [`FadingEnsemble::weighted`]) are used for
/// small discrete distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct FadingEnsemble {
    states: Vec<FadingState>,
    weights: Option<Vec<f64>>,
    seed: u64,
    dist: Option<ChannelDistribution>,
    pu_applied: bool,
}

impl FadingEnsemble {
    /// Equally weighted ensemble from explicit states. PU powers already
    /// present in the states are taken as populated.
    pub fn from_states(states: Vec<FadingState>) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::Parameter("ensemble needs at least one state".into()));
        }
        for s in &states {
            s.validate()?;
        }
        Ok(FadingEnsemble { states, weights: None, seed: 0, dist: None, pu_applied: true })
    }

    /// Ensemble with an explicit probability vector.
    pub fn weighted(states: Vec<FadingState>, weights: Vec<f64>) -> Result<Self> {
        if states.len() != weights.len() {
            return Err(Error::Parameter(format!(
                "{} states but {} weights",
                states.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Parameter("weights must be finite and >= 0".into()));
        }
        let total = reduce::pairwise_sum(&weights);
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Parameter(format!("weights sum to {total}, expected 1")));
        }
        let mut ens = Self::from_states(states)?;
        ens.weights = Some(weights);
        Ok(ens)
    }

    pub fn states(&self) -> &[FadingState] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn distribution(&self) -> Option<&ChannelDistribution> {
        self.dist.as_ref()
    }

    /// Whether PU powers (and hence effective gains) have been set.
    pub fn pu_applied(&self) -> bool {
        self.pu_applied
    }

    /// Probability of state `i`.
    #[inline]
    pub fn weight(&self, i: usize) -> f64 {
        match &self.weights {
            Some(w) => w[i],
            None => 1.0 / self.states.len() as f64,
        }
    }

    /// Expectation of `term(i, state)` under the ensemble's distribution.
    pub fn expect<F>(&self, term: F) -> f64
    where
        F: Fn(usize, &FadingState) -> f64 + Sync,
    {
        match &self.weights {
            None => {
                let total = reduce::sum_by(self.states.len(), |i| term(i, &self.states[i]));
                total / self.states.len() as f64
            }
            Some(w) => reduce::sum_by(self.states.len(), |i| {
                if w[i] == 0.0 {
                    0.0
                } else {
                    w[i] * term(i, &self.states[i])
                }
            }),
        }
    }

    /// Sets `q` in every state from `power(f)` and refreshes effective gains.
    pub(crate) fn set_pu_powers<F>(&mut self, power: F)
    where
        F: Fn(f64) -> f64 + Sync,
    {
        self.states.par_iter_mut().for_each(|s| {
            s.q = power(s.f);
        });
        self.pu_applied = true;
        self.refresh_effective_gains();
    }

    fn refresh_effective_gains(&mut self) {
        self.states.par_iter_mut().for_each(|s| {
            s.h = effective_gain(s.e, s.o, s.q);
        });
    }

    /// Order-sensitive 64-bit digest of every state, weight and the PU flag.
    pub fn fingerprint(&self) -> u64 {
        // FNV-1a over the raw bit patterns.
        let mut hash: u64 = 0xcbf29ce484222325;
        let mut eat = |v: u64| {
            for b in v.to_le_bytes() {
                hash ^= b as u64;
                hash = hash.wrapping_mul(0x100000001b3);
            }
        };
        eat(self.states.len() as u64);
        eat(self.pu_applied as u64);
        for (i, s) in self.states.iter().enumerate() {
            for v in [s.f, s.e, s.g, s.o, s.cross_mag2, s.q, s.h, self.weight(i)] {
                eat(v.to_bits());
            }
        }
        hash
    }
}

/// Draws `n` i.i.d. fading states.
///
/// Each complex gain `x ~ CN(0, var)` has independent real and imaginary
/// parts of variance `var / 2`, so `|x|^2` is exponential with mean `var`.
pub fn sample_ensemble(dist: &ChannelDistribution, n: usize, seed: u64) -> Result<FadingEnsemble> {
    dist.validate()?;
    if n == 0 {
        return Err(Error::Parameter("n must be >= 1".into()));
    }
    let base = ChaCha8Rng::seed_from_u64(seed);
    let scales = [
        (dist.var_f / 2.0).sqrt(),
        (dist.var_e / 2.0).sqrt(),
        (dist.var_g / 2.0).sqrt(),
        (dist.var_o / 2.0).sqrt(),
    ];
    let states = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = base.clone();
            rng.set_stream(i as u64);
            rng.set_word_pos(0);
            let mut draw = |scale: f64| -> (f64, f64) {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                (scale * re, scale * im)
            };
            let ft = draw(scales[0]);
            let et = draw(scales[1]);
            let gt = draw(scales[2]);
            let ot = draw(scales[3]);
            let mag2 = |z: (f64, f64)| z.0 * z.0 + z.1 * z.1;
            // conj(f~) g~ + conj(o~) e~
            let cross_re = ft.0 * gt.0 + ft.1 * gt.1 + ot.0 * et.0 + ot.1 * et.1;
            let cross_im = ft.0 * gt.1 - ft.1 * gt.0 + ot.0 * et.1 - ot.1 * et.0;
            FadingState::new(mag2(ft), mag2(et), mag2(gt), mag2(ot))
                .with_cross(cross_re * cross_re + cross_im * cross_im)
        })
        .collect();
    Ok(FadingEnsemble { states, weights: None, seed, dist: Some(*dist), pu_applied: false })
}

/// Recomputes `h = e / (1 + o q)` in every state.
pub fn populate_effective_gains(mut ens: FadingEnsemble) -> Result<FadingEnsemble> {
    if !ens.pu_applied {
        return Err(Error::State("PU powers have not been populated".into()));
    }
    ens.refresh_effective_gains();
    Ok(ens)
}

const ENSEMBLE_MAGIC: &str = "# spectrum-share ensemble";
const ENSEMBLE_COLUMNS: &str = "f,e,g,o,cross_mag2";

/// Writes the channel gains of an ensemble as columnar text.
///
/// The first line records the distribution, the state count and the seed;
/// the second names the columns. Values use the shortest representation that
/// parses back to the same `f64`.
pub fn write_ensemble<W: Write>(ens: &FadingEnsemble, mut out: W) -> Result<()> {
    write!(out, "{ENSEMBLE_MAGIC}")?;
    if let Some(d) = &ens.dist {
        write!(out, " var_f={:e} var_e={:e} var_g={:e} var_o={:e}", d.var_f, d.var_e, d.var_g, d.var_o)?;
    }
    writeln!(out, " n={} seed={}", ens.len(), ens.seed)?;
    writeln!(out, "{ENSEMBLE_COLUMNS}")?;
    for s in &ens.states {
        writeln!(out, "{:e},{:e},{:e},{:e},{:e}", s.f, s.e, s.g, s.o, s.cross_mag2)?;
    }
    Ok(())
}

/// Reads an ensemble written by [`write_ensemble`]. PU powers come back
/// unpopulated.
pub fn read_ensemble<R: BufRead>(input: R) -> Result<FadingEnsemble> {
    let mut lines = input.lines().enumerate();
    let parse_err = |line: usize, msg: String| Error::Parse { line: line + 1, msg };

    let (_, header) = lines.next().ok_or_else(|| parse_err(0, "empty input".into()))?;
    let header = header?;
    let rest = header
        .strip_prefix(ENSEMBLE_MAGIC)
        .ok_or_else(|| parse_err(0, "missing ensemble header".into()))?;
    let mut n = None;
    let mut seed = 0u64;
    let mut var = [None; 4];
    for tok in rest.split_whitespace() {
        let (k, v) = tok.split_once('=').ok_or_else(|| parse_err(0, format!("bad token {tok:?}")))?;
        let num = |v: &str| v.parse::<f64>().map_err(|e| parse_err(0, format!("{k}: {e}")));
        match k {
            "n" => n = Some(v.parse::<usize>().map_err(|e| parse_err(0, format!("n: {e}")))?),
            "seed" => seed = v.parse().map_err(|e| parse_err(0, format!("seed: {e}")))?,
            "var_f" => var[0] = Some(num(v)?),
            "var_e" => var[1] = Some(num(v)?),
            "var_g" => var[2] = Some(num(v)?),
            "var_o" => var[3] = Some(num(v)?),
            _ => return Err(parse_err(0, format!("unknown header key {k:?}"))),
        }
    }
    let dist = match var {
        [Some(f), Some(e), Some(g), Some(o)] => Some(ChannelDistribution::new(f, e, g, o)?),
        [None, None, None, None] => None,
        _ => return Err(parse_err(0, "partial distribution in header".into())),
    };

    let (_, cols) = lines.next().ok_or_else(|| parse_err(1, "missing column row".into()))?;
    if cols?.trim() != ENSEMBLE_COLUMNS {
        return Err(parse_err(1, format!("expected columns {ENSEMBLE_COLUMNS}")));
    }

    let mut states = Vec::new();
    for (lineno, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| parse_err(lineno, e.to_string()))?;
        if vals.len() != 5 {
            return Err(parse_err(lineno, format!("expected 5 columns, got {}", vals.len())));
        }
        let s = FadingState::new(vals[0], vals[1], vals[2], vals[3]).with_cross(vals[4]);
        s.validate().map_err(|e| parse_err(lineno, e.to_string()))?;
        states.push(s);
    }
    if let Some(n) = n {
        if n != states.len() {
            return Err(parse_err(0, format!("header says n={n}, found {} rows", states.len())));
        }
    }
    if states.is_empty() {
        return Err(parse_err(2, "no states".into()));
    }
    Ok(FadingEnsemble { states, weights: None, seed, dist, pu_applied: false })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_var(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
        let n = xs.clone().count() as f64;
        let mean = xs.clone().sum::<f64>() / n;
        let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    #[test]
    fn zero_variance_channel_is_identically_zero() {
        let dist = ChannelDistribution::new(1.0, 1.0, 0.0, 0.01).unwrap();
        let ens = sample_ensemble(&dist, 500, 3).unwrap();
        assert!(ens.states().iter().all(|s| s.g == 0.0));
    }

    #[test]
    fn reference_means() {
        let ens = sample_ensemble(&ChannelDistribution::reference(), 100_000, 11).unwrap();
        let (mf, _) = mean_var(ens.states().iter().map(|s| s.f));
        let (mg, _) = mean_var(ens.states().iter().map(|s| s.g));
        assert!((mf - 1.0).abs() < 0.02, "mean f = {mf}");
        assert!((mg - 0.5).abs() < 0.01, "mean g = {mg}");
    }

    #[test]
    fn sampling_is_deterministic() {
        let d = ChannelDistribution::reference();
        let a = sample_ensemble(&d, 2000, 99).unwrap();
        let b = sample_ensemble(&d, 2000, 99).unwrap();
        assert_eq!(a, b);
        let c = sample_ensemble(&d, 2000, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn prefix_is_stable_in_n() {
        let d = ChannelDistribution::reference();
        let a = sample_ensemble(&d, 100, 5).unwrap();
        let b = sample_ensemble(&d, 1000, 5).unwrap();
        assert_eq!(a.states(), &b.states()[..100]);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(ChannelDistribution::new(1.0, 1.0, -0.5, 0.0).is_err());
        assert!(ChannelDistribution::new(0.0, 1.0, 0.5, 0.0).is_err());
        assert!(sample_ensemble(&ChannelDistribution::reference(), 0, 1).is_err());
        let bad = ChannelDistribution { var_f: 1.0, var_e: 1.0, var_g: -1.0, var_o: 0.0 };
        assert!(matches!(sample_ensemble(&bad, 10, 1), Err(Error::Parameter(_))));
    }

    #[test]
    fn effective_gain_examples() {
        let mk = |e, o, q| {
            let ens = FadingEnsemble::from_states(vec![FadingState::new(1.0, e, 0.0, o).with_pu_power(q)]).unwrap();
            populate_effective_gains(ens).unwrap().states()[0].h
        };
        assert_eq!(mk(1.0, 0.0, 10.0), 1.0);
        assert_eq!(mk(2.0, 0.5, 2.0), 1.0);
        assert_eq!(mk(0.0, 3.0, 7.0), 0.0);
    }

    #[test]
    fn populate_requires_pu_powers() {
        let ens = sample_ensemble(&ChannelDistribution::reference(), 10, 1).unwrap();
        assert!(matches!(populate_effective_gains(ens), Err(Error::State(_))));
    }

    #[test]
    fn weighted_ensemble_checks_probabilities() {
        let s = FadingState::new(1.0, 1.0, 1.0, 0.0);
        assert!(FadingEnsemble::weighted(vec![s, s], vec![0.5, 0.4]).is_err());
        assert!(FadingEnsemble::weighted(vec![s, s], vec![0.5]).is_err());
        let ens = FadingEnsemble::weighted(vec![s, s], vec![0.25, 0.75]).unwrap();
        assert_eq!(ens.expect(|i, _| i as f64), 0.75);
    }

    #[test]
    fn text_round_trip() {
        let ens = sample_ensemble(&ChannelDistribution::reference(), 257, 8).unwrap();
        let mut buf = Vec::new();
        write_ensemble(&ens, &mut buf).unwrap();
        let back = read_ensemble(buf.as_slice()).unwrap();
        assert_eq!(back, ens);
    }

    #[test]
    fn reader_rejects_row_count_mismatch() {
        let text = "# spectrum-share ensemble n=2 seed=0\nf,e,g,o,cross_mag2\n1,1,1,1,0\n";
        assert!(matches!(read_ensemble(text.as_bytes()), Err(Error::Parse { .. })));
    }
}
