//! Polyline path masks for 2D token grids.
//!
//! A polyline path mask weights the interaction between two grid tokens by
//! the product of decay factors along an L-shaped path: first along a column,
//! then along a row (or the reverse). This crate builds these masks
//! explicitly, multiplies by them in `O(N)` time without materializing them,
//! and uses them inside several attention variants.
//!
//! Grid coordinates are 0-based; token `(i, j)` has linear index `i·W + j`.

pub mod attention;
pub mod error;
pub mod grad;
pub mod io;
pub mod mask;
pub mod matvec;
pub mod real;
pub mod rng;
pub mod scan;
pub mod scratch;
pub mod types;

pub use error::{Error, Result};
pub use mask::DenseCap;
pub use matvec::{polyline_matvec, polyline_matvec_3d, MaskVariant, MatvecConfig, MatvecMode};
pub use real::{DType, Real};
pub use scan::ChunkConfig;
pub use types::{
    fold, unfold, AttentionInputs, ColFactorSet, DecayField2D, DecayField3D, DenseMask, Grid2D, Grid3D, Matrix,
    RowFactorSet, SSM1DParams, Tensor4, TokenField,
};
