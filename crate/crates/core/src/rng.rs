//! Per-trajectory noise streams.
//!
//! Each trajectory draws from a ChaCha8 stream selected by `(seed, stream_id)`;
//! ChaCha is counter based, so the `k`-th increment of a trajectory is a pure
//! function of `(seed, stream_id, k)` and never depends on which worker runs
//! it or in what order trajectories are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub seed: u64,
    pub stream_id: u64,
    pub n_steps: usize,
    pub epsilon: f64,
}

impl NoiseConfig {
    pub fn new(seed: u64, stream_id: u64, n_steps: usize, epsilon: f64) -> Self {
        Self { seed, stream_id, n_steps, epsilon }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_steps == 0 {
            return Err(Error::InvalidInput("n_steps must be positive".into()));
        }
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::InvalidInput(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        Ok(())
    }

    pub fn stream(&self) -> NoiseStream {
        NoiseStream::new(self.seed, self.stream_id)
    }

    pub fn with_stream(mut self, stream_id: u64) -> Self {
        self.stream_id = stream_id;
        self
    }
}

/// Standard normal draws for one trajectory.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self { rng }
    }

    /// Fills `out` with independent N(0, 1) values.
    #[inline]
    pub fn standard_normals(&mut self, out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = StandardNormal.sample(&mut self.rng);
        }
    }

    /// Brownian increments `√(ε h) z`.
    #[inline]
    pub fn increments(&mut self, epsilon: f64, h: f64, out: &mut [f64]) {
        self.standard_normals(out);
        let s = (epsilon * h).sqrt();
        out.iter_mut().for_each(|v| *v *= s);
    }
}
