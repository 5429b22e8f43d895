//! Deterministic ray batches: one RNG stream per ray, results in ray order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::{RngStream, StreamRng};

/// A contiguous block of rays sharing a seed. Ray `i` uses stream
/// `base_stream + i`, so results do not depend on how work is scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RayBlock {
    pub seed: u64,
    pub base_stream: u64,
    pub n_rays: u64,
}

impl RayBlock {
    pub fn new(seed: u64, base_stream: u64, n_rays: u64) -> Self {
        Self { seed, base_stream, n_rays }
    }

    pub fn stream(&self, ray: u64) -> RngStream {
        RngStream::new(self.seed, self.base_stream + ray)
    }

    /// Run `f` once per ray in parallel and collect results in ray order.
    pub fn map<T, F>(&self, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(u64, &mut StreamRng) -> T + Sync + Send,
    {
        (0..self.n_rays)
            .into_par_iter()
            .map(|i| {
                let mut rng = self.stream(i).rng();
                f(i, &mut rng)
            })
            .collect()
    }
}

/// Ray accounting: how many were run and how many hit the step cap.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Censoring {
    pub total: u64,
    pub censored: u64,
}

impl Censoring {
    pub fn record(&mut self, censored: bool) {
        self.total += 1;
        self.censored += u64::from(censored);
    }

    pub fn merge(&mut self, other: Censoring) {
        self.total += other.total;
        self.censored += other.censored;
    }

    pub fn rate(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.censored as f64 / self.total as f64
        }
    }

    pub fn completed(&self) -> u64 {
        self.total - self.censored
    }
}

impl FromIterator<bool> for Censoring {
    fn from_iter<I: IntoIterator<Item = bool>>(iter: I) -> Self {
        let mut c = Censoring::default();
        for b in iter {
            c.record(b);
        }
        c
    }
}

/// Run `f` inside a dedicated pool with `workers` threads.
pub fn with_workers<T, F>(workers: usize, f: F) -> Result<T>
where
    T: Send,
    F: FnOnce() -> T + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| invalid(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}
