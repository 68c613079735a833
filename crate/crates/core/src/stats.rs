//! Per-element Monte Carlo moments.
//!
//! Replications are split into fixed-size chunks, each with its own seeded
//! stream, and the chunk moments are merged in chunk order. The result is
//! therefore identical under sequential and parallel execution.

use crate::exec::Execution;
use crate::rng::{self, tag, Rng};

const CHUNK: usize = 1024;

/// Per-element sample mean and unbiased variance.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub count: usize,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

struct Partial {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Partial {
    fn merge(mut self, other: Partial) -> Partial {
        if self.n == 0 {
            return other;
        }
        let n = self.n + other.n;
        let (na, nb) = (self.n as f64, other.n as f64);
        for i in 0..self.mean.len() {
            let delta = other.mean[i] - self.mean[i];
            self.mean[i] += delta * nb / n as f64;
            self.m2[i] += other.m2[i] + delta * delta * na * nb / n as f64;
        }
        self.n = n;
        self
    }
}

/// Draws `reps` vectors of length `len` from `sample` and returns
/// per-element moments. `sample` must write exactly `len` values.
pub fn monte_carlo_moments<F>(
    len: usize,
    reps: usize,
    seed: u64,
    exec: Execution,
    sample: F,
) -> Moments
where
    F: Fn(&mut Rng) -> Vec<f64> + Sync + Send,
{
    let chunks = reps.div_ceil(CHUNK);
    let partials = exec.map_range(chunks, |c| {
        let mut r = rng::stream(seed, &[tag::MONTE_CARLO, c as u64]);
        let n = CHUNK.min(reps - c * CHUNK);
        let mut mean = vec![0.0; len];
        let mut m2 = vec![0.0; len];
        for k in 0..n {
            let x = sample(&mut r);
            assert_eq!(x.len(), len, "sampler returned the wrong length");
            for i in 0..len {
                let d = x[i] - mean[i];
                mean[i] += d / (k + 1) as f64;
                m2[i] += d * (x[i] - mean[i]);
            }
        }
        Partial { n, mean, m2 }
    });
    let total = partials.into_iter().fold(
        Partial {
            n: 0,
            mean: vec![0.0; len],
            m2: vec![0.0; len],
        },
        Partial::merge,
    );
    let denom = (total.n.max(2) - 1) as f64;
    Moments {
        count: total.n,
        variance: total.m2.iter().map(|m| m / denom).collect(),
        mean: total.mean,
    }
}
