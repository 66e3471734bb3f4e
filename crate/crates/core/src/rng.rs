//! Deterministic, platform-independent random inputs.
//!
//! The generator is SplitMix64: state advances by
//! the golden-ratio increment `0x9e3779b97f4a7c15` and each output is the
//! state passed through the standard 30/27/31 xor-shift-multiply finalizer.
//! A uniform draw in `[0, 1)` takes the top 53 bits: `(u >> 11) · 2^-53`.
//! A value in `[low, high]` is `low + (high - low) · u`, computed in `f64`
//! and then cast to the target precision.
//!
//! Fields draw all `alpha` entries (row-major) and then all `beta` entries
//! from a single stream seeded with the user seed.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::types::{DecayField2D, DecayField3D, Grid2D, Grid3D, Matrix, TokenField};

#[derive(Debug, Clone)]
pub struct SeededRng {
    inner: SplitMix64,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: SplitMix64::seed_from_u64(seed),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_in(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.uniform()
    }

    /// Derives an independent stream; the parent advances by one step.
    pub fn split(&mut self) -> SeededRng {
        SeededRng::new(self.next_u64())
    }

    pub fn fill<T: Real>(&mut self, len: usize, low: f64, high: f64) -> Vec<T> {
        (0..len).map(|_| T::from_wide(self.uniform_in(low, high))).collect()
    }
}

fn check_bounds(low: f64, high: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&low) || !(0.0..=1.0).contains(&high) || low > high {
        return Err(Error::Validation(format!(
            "decay bounds must satisfy 0 <= low <= high <= 1, got [{low}, {high}]"
        )));
    }
    Ok(())
}

/// A decay field with entries drawn uniformly from `[low, high]`.
pub fn seeded_random_field<T: Real>(
    grid: Grid2D,
    seed: u64,
    low: f64,
    high: f64,
) -> Result<DecayField2D<T>> {
    check_bounds(low, high)?;
    let mut rng = SeededRng::new(seed);
    let alpha = rng.fill(grid.tokens(), low, high);
    let beta = rng.fill(grid.tokens(), low, high);
    DecayField2D::new(grid, alpha, beta)
}

pub fn seeded_random_field_3d<T: Real>(
    grid: Grid3D,
    seed: u64,
    low: f64,
    high: f64,
) -> Result<DecayField3D<T>> {
    check_bounds(low, high)?;
    let mut rng = SeededRng::new(seed);
    let n = grid.tokens();
    let alpha = rng.fill(n, low, high);
    let beta = rng.fill(n, low, high);
    let gamma = rng.fill(n, low, high);
    DecayField3D::new(grid, alpha, beta, gamma)
}

/// Entries uniform in `[low, high)`, row-major.
pub fn seeded_matrix<T: Real>(rows: usize, cols: usize, seed: u64, low: f64, high: f64) -> Matrix<T> {
    let mut rng = SeededRng::new(seed);
    Matrix::new(rows, cols, rng.fill(rows * cols, low, high)).expect("length matches by construction")
}

/// Token features uniform in `[-1, 1)`.
pub fn seeded_token_field<T: Real>(grid: Grid2D, channels: usize, seed: u64) -> Result<TokenField<T>> {
    let mut rng = SeededRng::new(seed);
    TokenField::new(grid, channels, rng.fill(grid.tokens() * channels, -1.0, 1.0))
}
