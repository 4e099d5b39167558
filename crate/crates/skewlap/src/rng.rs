//! Seeded, splittable random streams and sharded Monte-Carlo reductions.
//!
//! Every shard draws from its own ChaCha stream keyed by `(seed, shard)`, and
//! shard summaries are merged in index order, so results do not depend on the
//! number of worker threads.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

/// Draws per shard. Fixed so that shard boundaries never depend on the pool.
pub const SHARD_SIZE: usize = 1 << 14;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Child seed for replicate/shard `index` of a run seeded with `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    stream_rng(seed, index.wrapping_add(1 << 32)).next_u64()
}

pub fn fill_normal<R: Rng>(rng: &mut R, buf: &mut [f64]) {
    for b in buf.iter_mut() {
        *b = rng.sample(StandardNormal);
    }
}

/// Running mean and centred second moment, merged with Chan's formula.
#[derive(Debug, Clone, Copy, Default)]
pub struct Moments {
    pub count: f64,
    pub mean: f64,
    pub m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.count += 1.0;
        let delta = x - self.mean;
        self.mean += delta / self.count;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.count == 0.0 {
            return;
        }
        if self.count == 0.0 {
            *self = *other;
            return;
        }
        let total = self.count + other.count;
        let delta = other.mean - self.mean;
        self.mean += delta * other.count / total;
        self.m2 += other.m2 + delta * delta * self.count * other.count / total;
        self.count = total;
    }

    pub fn variance(&self) -> f64 {
        if self.count < 2.0 {
            0.0
        } else {
            self.m2 / (self.count - 1.0)
        }
    }

    pub fn std_error(&self) -> f64 {
        if self.count < 1.0 {
            return f64::NAN;
        }
        (self.variance() / self.count).sqrt()
    }
}

/// Result of a sharded Monte-Carlo average of a vector-valued integrand.
#[derive(Debug, Clone)]
pub struct McSummary {
    pub mean: Vec<f64>,
    pub std_error: Vec<f64>,
    pub used: usize,
    pub nonfinite: usize,
}

/// Average `f(z)` over `count` standard normal draws `z ∈ ℝ^d`.
///
/// `f` writes `m` outputs. A draw with any non-finite output is skipped and
/// counted. With `antithetic`, each sample is `(f(z) + f(-z))/2` and `count`
/// is the number of such pairs.
pub fn mc_mean<F>(d: usize, m: usize, count: usize, seed: u64, antithetic: bool, f: F) -> McSummary
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    let shards = count.div_ceil(SHARD_SIZE);
    let parts: Vec<(Vec<Moments>, usize)> = (0..shards)
        .into_par_iter()
        .map(|s| {
            let lo = s * SHARD_SIZE;
            let hi = (lo + SHARD_SIZE).min(count);
            let mut rng = stream_rng(seed, s as u64);
            let mut z = vec![0.0; d];
            let mut zn = vec![0.0; d];
            let mut out = vec![0.0; m];
            let mut out2 = vec![0.0; m];
            let mut acc = vec![Moments::default(); m];
            let mut bad = 0usize;
            for _ in lo..hi {
                fill_normal(&mut rng, &mut z);
                f(&z, &mut out);
                if antithetic {
                    for (a, b) in zn.iter_mut().zip(&z) {
                        *a = -b;
                    }
                    f(&zn, &mut out2);
                    for (a, b) in out.iter_mut().zip(&out2) {
                        *a = 0.5 * (*a + b);
                    }
                }
                if out.iter().all(|v| v.is_finite()) {
                    for (a, &v) in acc.iter_mut().zip(&out) {
                        a.push(v);
                    }
                } else {
                    bad += 1;
                }
            }
            (acc, bad)
        })
        .collect();

    let mut total = vec![Moments::default(); m];
    let mut nonfinite = 0;
    for (acc, bad) in &parts {
        for (t, a) in total.iter_mut().zip(acc) {
            t.merge(a);
        }
        nonfinite += bad;
    }
    McSummary {
        mean: total.iter().map(|t| t.mean).collect(),
        std_error: total.iter().map(|t| t.std_error()).collect(),
        used: count - nonfinite,
        nonfinite,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments_merge_matches_sequential() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 * 0.1).collect();
        let mut all = Moments::default();
        xs.iter().for_each(|&x| all.push(x));
        let mut a = Moments::default();
        let mut b = Moments::default();
        xs[..313].iter().for_each(|&x| a.push(x));
        xs[313..].iter().for_each(|&x| b.push(x));
        a.merge(&b);
        assert!((a.mean - all.mean).abs() < 1e-12);
        assert!((a.variance() - all.variance()).abs() < 1e-9);
    }

    #[test]
    fn streams_differ_and_repeat() {
        let x = stream_rng(7, 0).next_u64();
        let y = stream_rng(7, 1).next_u64();
        assert_ne!(x, y);
        assert_eq!(x, stream_rng(7, 0).next_u64());
        assert_ne!(derive_seed(7, 0), derive_seed(7, 1));
    }

    #[test]
    fn gaussian_moments() {
        let s = mc_mean(1, 2, 200_000, 3, false, |z, out| {
            out[0] = z[0];
            out[1] = z[0] * z[0];
        });
        assert!(s.mean[0].abs() < 4.0 * s.std_error[0]);
        assert!((s.mean[1] - 1.0).abs() < 4.0 * s.std_error[1]);
    }
}
