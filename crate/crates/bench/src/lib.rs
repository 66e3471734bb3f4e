//! Seeded inputs shared by the criterion benchmarks.

use polypath_core::rng::{seeded_matrix, seeded_random_field, seeded_token_field};
use polypath_core::{AttentionInputs, DecayField2D, Grid2D, Real, TokenField};

/// Square grid sides used by the scaling groups.
pub const SIDES: [usize; 3] = [16, 32, 64];

pub fn matvec_inputs<T: Real>(side: usize, channels: usize, seed: u64) -> (DecayField2D<T>, TokenField<T>) {
    let grid = Grid2D::square(side).expect("positive side");
    let decay = seeded_random_field(grid, seed, 0.0, 1.0).expect("unit bounds");
    let x = seeded_token_field(grid, channels, seed + 1).expect("matching grid");
    (decay, x)
}

pub fn attention_inputs<T: Real>(
    side: usize,
    key_dim: usize,
    value_dim: usize,
    seed: u64,
) -> (DecayField2D<T>, AttentionInputs<T>) {
    let grid = Grid2D::square(side).expect("positive side");
    let n = grid.tokens();
    let decay = seeded_random_field(grid, seed, 0.0, 1.0).expect("unit bounds");
    let inp = AttentionInputs::new(
        grid,
        seeded_matrix(n, key_dim, seed + 1, -1.0, 1.0),
        seeded_matrix(n, key_dim, seed + 2, -1.0, 1.0),
        seeded_matrix(n, value_dim, seed + 3, -1.0, 1.0),
    )
    .expect("consistent shapes");
    (decay, inp)
}
