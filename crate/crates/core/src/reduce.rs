//! Order-stable reductions.
//!
//! Every expectation in the crate is a sum of per-state terms. The sum is
//! taken over fixed-size chunks whose partial sums are then combined by a
//! pairwise tree, so the result depends only on the number of terms and
//! never on how many worker threads evaluated the chunks.

use rayon::prelude::*;

pub(crate) const CHUNK: usize = 4096;

/// Pairwise (cascade) summation with a fixed tree shape.
pub(crate) fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => {
            let (lo, hi) = xs.split_at(n / 2);
            pairwise_sum(lo) + pairwise_sum(hi)
        }
    }
}

/// Sum of `term(i)` for `i` in `0..n`, deterministic regardless of thread count.
pub(crate) fn sum_by<F>(n: usize, term: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    if n <= CHUNK {
        let partial: Vec<f64> = (0..n).map(&term).collect();
        return pairwise_sum(&partial);
    }
    let chunks: Vec<f64> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let start = c * CHUNK;
            let end = (start + CHUNK).min(n);
            let mut acc = 0.0;
            for i in start..end {
                acc += term(i);
            }
            acc
        })
        .collect();
    pairwise_sum(&chunks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_exact_integers() {
        let xs: Vec<f64> = (1..=1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 500500.0);
        assert_eq!(sum_by(xs.len(), |i| xs[i]), 500500.0);
    }

    #[test]
    fn chunked_sum_is_stable_across_pools() {
        let n = 3 * CHUNK + 17;
        let term = |i: usize| ((i as f64) * 0.37).sin() * 1e-3 + 1.0 / (1.0 + i as f64);
        let a = sum_by(n, term);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| sum_by(n, term));
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
