//! Explicit mask construction.
//!
//! These builders materialize `N×N` matrices and are the brute-force
//! reference for the fast kernels. Every 2D mask is assembled from the
//! per-row and per-column segment-product factors, `O(N²)` overall.
//!
//! Segment products are always formed by multiplying outward from the
//! diagonal. No prefix-product ratios are taken, so exact zeros are safe.

use rayon::prelude::*;

use crate::error::{dim_err, Error, Result};
use crate::real::Real;
use crate::types::{
    ColFactorSet, DecayField2D, DecayField3D, DenseMask, Grid2D, Matrix, RowFactorSet,
    SSM1DParams,
};

/// Upper bound on the token count accepted by dense (`N×N`) constructions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenseCap(pub usize);

impl DenseCap {
    pub const DEFAULT_TOKENS: usize = 4096;

    pub fn unlimited() -> Self {
        DenseCap(usize::MAX)
    }

    pub fn check(self, tokens: usize) -> Result<()> {
        if tokens > self.0 {
            return Err(Error::Capacity {
                tokens,
                cap: self.0,
            });
        }
        Ok(())
    }
}

impl Default for DenseCap {
    fn default() -> Self {
        DenseCap(Self::DEFAULT_TOKENS)
    }
}

/// Writes row `j` of the symmetric segment-product matrix of `decays` into
/// `out`: `out[l] = Π decays[m]` for `m` in `(min(j,l), max(j,l)]`.
pub fn segment_row<T: Real>(decays: &[T], j: usize, out: &mut [T]) {
    let n = decays.len();
    debug_assert_eq!(out.len(), n);
    out[j] = T::one();
    for l in j + 1..n {
        out[l] = out[l - 1] * decays[l];
    }
    for l in (0..j).rev() {
        out[l] = out[l + 1] * decays[l + 1];
    }
}

/// Symmetric segment-product matrix of a decay sequence (unit diagonal).
pub fn segment_matrix<T: Real>(decays: &[T]) -> Matrix<T> {
    let n = decays.len();
    let mut m = Matrix::zeros(n, n);
    for j in 0..n {
        m.set(j, j, T::one());
        let mut acc = T::one();
        for l in j + 1..n {
            acc *= decays[l];
            m.set(j, l, acc);
            m.set(l, j, acc);
        }
    }
    m
}

/// The lower-triangular 1D structured mask: `L[i,j] = a_{j+1}·…·a_i` for
/// `i > j`, 1 on the diagonal, 0 above.
pub fn build_mask_1d<T: Real>(params: &SSM1DParams<T>, cap: DenseCap) -> Result<DenseMask<T>> {
    lower_segment_mask(params.a(), cap)
}

pub(crate) fn lower_segment_mask<T: Real>(a: &[T], cap: DenseCap) -> Result<DenseMask<T>> {
    let n = a.len();
    cap.check(n)?;
    let mut m = Matrix::zeros(n, n);
    for j in 0..n {
        let mut acc = T::one();
        m.set(j, j, acc);
        for i in j + 1..n {
            acc *= a[i];
            m.set(i, j, acc);
        }
    }
    Ok(DenseMask::from_matrix_unchecked(m))
}

/// `A^i` for every row: segment products of the horizontal decays.
pub fn build_row_factors<T: Real>(decay: &DecayField2D<T>) -> RowFactorSet<T> {
    let grid = decay.grid();
    let matrices = (0..grid.height())
        .into_par_iter()
        .map(|i| segment_matrix(decay.alpha_row(i)))
        .collect();
    RowFactorSet::new_unchecked(grid, matrices)
}

/// `B^l` for every column: segment products of the vertical decays.
pub fn build_col_factors<T: Real>(decay: &DecayField2D<T>) -> ColFactorSet<T> {
    let grid = decay.grid();
    let matrices = (0..grid.width())
        .into_par_iter()
        .map(|l| segment_matrix(&decay.beta_col(l)))
        .collect();
    ColFactorSet::new_unchecked(grid, matrices)
}

/// The vertical-then-horizontal path mask `L`.
///
/// Entry `((i,j),(k,l))` is the decay weight of the path from input token
/// `(k,l)` up/down column `l` to row `i`, then along row `i` to column `j`:
/// `A^i[j,l] · B^l[i,k]`.
pub fn build_polyline_mask_v2h<T: Real>(
    decay: &DecayField2D<T>,
    cap: DenseCap,
) -> Result<DenseMask<T>> {
    let grid = decay.grid();
    cap.check(grid.tokens())?;
    let rows = build_row_factors(decay);
    let cols = build_col_factors(decay);
    Ok(product_mask(grid, rows.matrices(), cols.matrices()))
}

/// `M[(i,j),(k,l)] = row_mats[i][j,l] · col_mats[l][i,k]`.
fn product_mask<T: Real>(grid: Grid2D, row_mats: &[Matrix<T>], col_mats: &[Matrix<T>]) -> DenseMask<T> {
    let (h, w) = (grid.height(), grid.width());
    let n = grid.tokens();
    let mut data = vec![T::zero(); n * n];
    data.par_chunks_mut(n).enumerate().for_each(|(u, out)| {
        let (i, j) = grid.coords(u);
        let a = row_mats[i].row(j);
        for k in 0..h {
            for l in 0..w {
                out[k * w + l] = a[l] * col_mats[l].get(i, k);
            }
        }
    });
    DenseMask::from_matrix_unchecked(Matrix::new(n, n, data).expect("square by construction"))
}

/// The horizontal-then-vertical path mask `L̃ = Lᵀ`.
pub fn build_polyline_mask_h2v<T: Real>(
    decay: &DecayField2D<T>,
    cap: DenseCap,
) -> Result<DenseMask<T>> {
    Ok(build_polyline_mask_v2h(decay, cap)?.transpose())
}

/// The combined bidirectional mask `L^2D = L + Lᵀ`: symmetric, diagonal 2.
pub fn build_polyline_mask_2d<T: Real>(
    decay: &DecayField2D<T>,
    cap: DenseCap,
) -> Result<DenseMask<T>> {
    let l = build_polyline_mask_v2h(decay, cap)?;
    l.add(&l.transpose())
}

/// Block assemblies of a factor pair.
///
/// With `A^i` per row and `B^l` per column:
/// * `lh[(i,j),(k,l)] = [i == k] · A^i[j,l]` (block diagonal),
/// * `lv[(i,j),(k,l)] = [j == l] · B^l[i,k]`,
/// * `lh_hat[(i,j),(k,l)] = A^i[j,l]`,
/// * `lv_hat[(i,j),(k,l)] = B^l[i,k]`,
///
/// so that `lh · lv = lh_hat ⊙ lv_hat` equals the product mask.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockFactors<T> {
    pub lh: DenseMask<T>,
    pub lv: DenseMask<T>,
    pub lh_hat: DenseMask<T>,
    pub lv_hat: DenseMask<T>,
}

pub fn assemble_block_factors<T: Real>(
    rows: &RowFactorSet<T>,
    cols: &ColFactorSet<T>,
) -> Result<BlockFactors<T>> {
    rows.grid().ensure_same(&cols.grid(), "assemble_block_factors")?;
    assemble_blocks(rows.grid(), rows.matrices(), cols.matrices())
}

/// [`assemble_block_factors`] for arbitrary per-row `W×W` and per-column
/// `H×H` matrices (no symmetry or range requirement).
pub fn assemble_blocks<T: Real>(
    grid: Grid2D,
    row_mats: &[Matrix<T>],
    col_mats: &[Matrix<T>],
) -> Result<BlockFactors<T>> {
    let (h, w) = (grid.height(), grid.width());
    if row_mats.len() != h || row_mats.iter().any(|m| m.rows() != w || m.cols() != w) {
        return dim_err(format!("expected {h} row factors of size {w}x{w}"));
    }
    if col_mats.len() != w || col_mats.iter().any(|m| m.rows() != h || m.cols() != h) {
        return dim_err(format!("expected {w} column factors of size {h}x{h}"));
    }
    let n = grid.tokens();
    let build = |f: &dyn Fn(usize, usize, usize, usize) -> T| {
        DenseMask::from_matrix_unchecked(Matrix::from_fn(n, n, |u, v| {
            let (i, j) = grid.coords(u);
            let (k, l) = grid.coords(v);
            f(i, j, k, l)
        }))
    };
    Ok(BlockFactors {
        lh: build(&|i, j, k, l| if i == k { row_mats[i].get(j, l) } else { T::zero() }),
        lv: build(&|i, j, k, l| if j == l { col_mats[l].get(i, k) } else { T::zero() }),
        lh_hat: build(&|i, j, _k, l| row_mats[i].get(j, l)),
        lv_hat: build(&|i, _j, k, l| col_mats[l].get(i, k)),
    })
}

/// The 3D polyline mask.
///
/// Entry `((i,j,k),(l,m,n))` is the weight of the path from input `(l,m,n)`
/// along depth to `k`, then along height to `i`, then along width to `j`:
/// `γ_{l,m,k:n} · β_{i:l,m,k} · α_{i,j:m,k}`.
pub fn build_polyline_mask_3d<T: Real>(
    decay: &DecayField3D<T>,
    cap: DenseCap,
) -> Result<DenseMask<T>> {
    let g = decay.grid();
    let (h, w, dp) = (g.height, g.width, g.depth);
    let n = g.tokens();
    cap.check(n)?;
    // depth lines indexed by (l, m); vertical by (m, k); horizontal by (i, k).
    let depth_f: Vec<Matrix<T>> = (0..h * w)
        .map(|lm| {
            let (l, m) = (lm / w, lm % w);
            segment_matrix(&(0..dp).map(|k| decay.gamma(l, m, k)).collect::<Vec<_>>())
        })
        .collect();
    let vert_f: Vec<Matrix<T>> = (0..w * dp)
        .map(|mk| {
            let (m, k) = (mk / dp, mk % dp);
            segment_matrix(&(0..h).map(|i| decay.beta(i, m, k)).collect::<Vec<_>>())
        })
        .collect();
    let horiz_f: Vec<Matrix<T>> = (0..h * dp)
        .map(|ik| {
            let (i, k) = (ik / dp, ik % dp);
            segment_matrix(&(0..w).map(|j| decay.alpha(i, j, k)).collect::<Vec<_>>())
        })
        .collect();
    let mut out = Matrix::zeros(n, n);
    for i in 0..h {
        for j in 0..w {
            for k in 0..dp {
                let u = g.index(i, j, k);
                let horiz = &horiz_f[i * dp + k];
                for l in 0..h {
                    for m in 0..w {
                        let hv = horiz.get(j, m) * vert_f[m * dp + k].get(i, l);
                        let depth = &depth_f[l * w + m];
                        for nn in 0..dp {
                            out.set(u, g.index(l, m, nn), hv * depth.get(k, nn));
                        }
                    }
                }
            }
        }
    }
    Ok(DenseMask::from_matrix_unchecked(out))
}
