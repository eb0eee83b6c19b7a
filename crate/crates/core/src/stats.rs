//! Streaming moments and deterministic parallel Monte Carlo reduction.

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng::{Domain, StreamKey};

/// Welford accumulator for mean and second central moment.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub n: u64,
    pub mean: f64,
    pub m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    /// Chan et al. pairwise merge.
    pub fn merge(&mut self, other: &Moments) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        let w = other.n as f64 / n as f64;
        self.mean += delta * w;
        self.m2 += other.m2 + delta * delta * self.n as f64 * w;
        self.n = n;
    }

    /// Unbiased sample variance; zero for fewer than two observations.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn std_error(&self) -> f64 {
        if self.n == 0 {
            return f64::INFINITY;
        }
        (self.variance() / self.n as f64).sqrt()
    }
}

impl FromIterator<f64> for Moments {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut m = Moments::default();
        for x in iter {
            m.push(x);
        }
        m
    }
}

const CHUNK: usize = 4096;

/// Mean of `n` draws of `sample`, computed in fixed chunks that each own a
/// ChaCha stream. The partition does not depend on the thread count, so the
/// result is bit-reproducible.
pub fn parallel_moments<F>(
    n: usize,
    seed: u64,
    domain: Domain,
    stream_offset: u64,
    sample: F,
) -> Moments
where
    F: Fn(&mut ChaCha8Rng) -> f64 + Sync,
{
    let chunks = n.div_ceil(CHUNK);
    let parts: Vec<Moments> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = StreamKey::new(seed, domain, stream_offset + c as u64).rng();
            let len = CHUNK.min(n - c * CHUNK);
            (0..len).map(|_| sample(&mut rng)).collect()
        })
        .collect();
    parts.iter().fold(Moments::default(), |mut acc, m| {
        acc.merge(m);
        acc
    })
}

/// `Σ_{i<n} term(i)` summed in fixed chunks, so the rounding does not depend
/// on the thread count.
pub fn chunked_sum<F>(n: usize, term: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let parts: Vec<f64> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| (c * CHUNK..n.min((c + 1) * CHUNK)).map(&term).sum())
        .collect();
    parts.iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn merge_matches_sequential(xs in prop::collection::vec(-1e3f64..1e3, 2..200), split in 0usize..200) {
            let split = split.min(xs.len());
            let all: Moments = xs.iter().copied().collect();
            let mut left: Moments = xs[..split].iter().copied().collect();
            let right: Moments = xs[split..].iter().copied().collect();
            left.merge(&right);
            prop_assert_eq!(left.n, all.n);
            prop_assert!((left.mean - all.mean).abs() <= 1e-9 * (1.0 + all.mean.abs()));
            prop_assert!((left.m2 - all.m2).abs() <= 1e-7 * (1.0 + all.m2.abs()));
        }
    }

    #[test]
    fn variance_of_known_sample() {
        let m: Moments = [1.0, 2.0, 3.0, 4.0].into_iter().collect();
        assert_eq!(m.mean, 2.5);
        assert!((m.variance() - 5.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn parallel_moments_reproducible() {
        use rand::Rng;
        let a = parallel_moments(10_000, 9, Domain::Quadrature, 0, |r| r.random::<f64>());
        let b = parallel_moments(10_000, 9, Domain::Quadrature, 0, |r| r.random::<f64>());
        assert_eq!(a, b);
        assert!((a.mean - 0.5).abs() < 4.0 * a.std_error());
    }
}
