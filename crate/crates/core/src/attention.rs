//! Attention with polyline path masks.
//!
//! * [`ppmva`]: `(softmax(QKᵀ/√D) ⊙ L^2D)·V`, dense only.
//! * [`ppmla`]: `((QKᵀ) ⊙ L^2D)·V`. The efficient path masks every
//!   `K[:,d] ⊙ V[:,c]` slice with one fast matvec, then contracts with `Q`.
//! * [`ppmda`]: the same for a general factorization `S1·S2` of the map.
//! * [`ppmcca`]: criss-cross attention, row softmax composed with column
//!   softmax, each masked by its own axis factor.
//!
//! Masks multiply post-softmax weights and rows are not renormalized.

use rayon::prelude::*;

use crate::error::{dim_err, Result};
use crate::grad::{finite_difference_check, polyline_matvec_backward, FdReport, FdSlot};
use crate::mask::{
    assemble_blocks, build_col_factors, build_polyline_mask_2d, build_polyline_mask_v2h, build_row_factors,
    DenseCap,
};
use crate::matvec::{polyline_matvec, MaskVariant, MatvecConfig, MatvecMode};
use crate::real::Real;
use crate::types::{AttentionInputs, DecayField2D, DenseMask, Grid2D, Matrix, TokenField};

/// Softmax of every row, after subtracting the row maximum.
pub fn softmax_rows<T: Real>(m: &Matrix<T>) -> Matrix<T> {
    let mut out = m.clone();
    for r in 0..m.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v = *v / total;
        }
    }
    out
}

/// `softmax(Q·Kᵀ / √D)`.
fn softmax_attention<T: Real>(q: &Matrix<T>, k: &Matrix<T>) -> Result<Matrix<T>> {
    let scale = T::one() / T::from_wide(q.cols() as f64).sqrt();
    Ok(softmax_rows(&q.matmul(&k.transpose())?.scale(scale)))
}

fn check_decay<T: Real>(inp_grid: Grid2D, decay: &DecayField2D<T>) -> Result<()> {
    inp_grid.ensure_same(&decay.grid(), "attention decay field")
}

/// Polyline path masked vanilla attention.
pub fn ppmva<T: Real>(inp: &AttentionInputs<T>, decay: &DecayField2D<T>, cap: DenseCap) -> Result<Matrix<T>> {
    check_decay(inp.grid(), decay)?;
    cap.check(inp.grid().tokens())?;
    let s = softmax_attention(inp.q(), inp.k())?;
    let mask = build_polyline_mask_2d(decay, cap)?;
    s.hadamard(mask.as_matrix())?.matmul(inp.v())
}

/// `((Q·Kᵀ) ⊙ L^2D)·V` with `Q`, `K` of shape `N×D`.
fn decomposed<T: Real>(
    grid: Grid2D,
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    decay: &DecayField2D<T>,
    mode: MatvecMode,
    cfg: &MatvecConfig,
) -> Result<Matrix<T>> {
    check_decay(grid, decay)?;
    let n = grid.tokens();
    let (d, c) = (q.cols(), v.cols());
    if mode == MatvecMode::Dense {
        cfg.dense_cap.check(n)?;
        let mask = build_polyline_mask_2d(decay, cfg.dense_cap)?;
        return q.matmul(&k.transpose())?.hadamard(mask.as_matrix())?.matmul(v);
    }
    let lkv = masked_kv(grid, k, v, decay, mode, cfg)?;
    let lkv = lkv.as_slice();
    let mut out = vec![T::zero(); n * c];
    out.par_chunks_mut(c).enumerate().for_each(|(m, y)| {
        let qm = q.row(m);
        for (dd, &qv) in qm.iter().enumerate() {
            let src = &lkv[(m * d + dd) * c..(m * d + dd + 1) * c];
            for (o, &s) in y.iter_mut().zip(src) {
                *o += qv * s;
            }
        }
    });
    Matrix::new(n, c, out)
}

/// `KV[n, d·C + c] = K[n,d]·V[n,c]`.
fn outer_kv<T: Real>(grid: Grid2D, k: &Matrix<T>, v: &Matrix<T>) -> Result<TokenField<T>> {
    let (d, c) = (k.cols(), v.cols());
    let mut kv = vec![T::zero(); grid.tokens() * d * c];
    kv.par_chunks_mut(d * c).enumerate().for_each(|(n, out)| {
        for (dd, &kval) in k.row(n).iter().enumerate() {
            for (o, &vval) in out[dd * c..(dd + 1) * c].iter_mut().zip(v.row(n)) {
                *o = kval * vval;
            }
        }
    });
    TokenField::new(grid, d * c, kv)
}

/// `L^2D·KV` for every `(d, c)` slice at once.
fn masked_kv<T: Real>(
    grid: Grid2D,
    k: &Matrix<T>,
    v: &Matrix<T>,
    decay: &DecayField2D<T>,
    mode: MatvecMode,
    cfg: &MatvecConfig,
) -> Result<TokenField<T>> {
    let kv = outer_kv(grid, k, v)?;
    polyline_matvec(decay, &kv, MaskVariant::Combined2D, mode, cfg)
}

/// Polyline path masked linear attention, `((Q·Kᵀ) ⊙ L^2D)·V`.
///
/// No logit scaling is applied. `Dense` builds the `N×N` map; the other modes
/// never do.
pub fn ppmla<T: Real>(
    inp: &AttentionInputs<T>,
    decay: &DecayField2D<T>,
    mode: MatvecMode,
    cfg: &MatvecConfig,
) -> Result<Matrix<T>> {
    decomposed(inp.grid(), inp.q(), inp.k(), inp.v(), decay, mode, cfg)
}

/// Polyline path masked decomposable attention, `((S1·S2) ⊙ L^2D)·V` with
/// `S1: N×D`, `S2: D×N`.
pub fn ppmda<T: Real>(
    grid: Grid2D,
    s1: &Matrix<T>,
    s2: &Matrix<T>,
    v: &Matrix<T>,
    decay: &DecayField2D<T>,
    mode: MatvecMode,
    cfg: &MatvecConfig,
) -> Result<Matrix<T>> {
    let n = grid.tokens();
    if s1.rows() != n || s2.cols() != n || v.rows() != n || s1.cols() != s2.rows() {
        return dim_err(format!(
            "ppmda shapes: S1 {}x{}, S2 {}x{}, V {}x{} for {n} tokens",
            s1.rows(),
            s1.cols(),
            s2.rows(),
            s2.cols(),
            v.rows(),
            v.cols()
        ));
    }
    decomposed(grid, s1, &s2.transpose(), v, decay, mode, cfg)
}

/// Gradients of `⟨dy, ppmla(Q, K, V)⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct PpmlaGrads<T> {
    pub dq: Matrix<T>,
    pub dk: Matrix<T>,
    pub dv: Matrix<T>,
    pub dalpha: Matrix<T>,
    pub dbeta: Matrix<T>,
}

pub fn ppmla_backward<T: Real>(
    inp: &AttentionInputs<T>,
    decay: &DecayField2D<T>,
    dy: &Matrix<T>,
) -> Result<PpmlaGrads<T>> {
    let grid = inp.grid();
    check_decay(grid, decay)?;
    let (n, d, c) = (grid.tokens(), inp.key_dim(), inp.value_dim());
    if dy.rows() != n || dy.cols() != c {
        return dim_err(format!("dy must be {n}x{c}, got {}x{}", dy.rows(), dy.cols()));
    }
    let (q, k, v) = (inp.q(), inp.k(), inp.v());
    let kv = outer_kv(grid, k, v)?;
    let cfg = MatvecConfig::default();
    let lkv = polyline_matvec(decay, &kv, MaskVariant::Combined2D, MatvecMode::Chunkwise, &cfg)?;
    let lkv = lkv.as_slice();

    let mut dq = Matrix::zeros(n, d);
    let mut dlkv = vec![T::zero(); n * d * c];
    for m in 0..n {
        let dym = dy.row(m);
        for dd in 0..d {
            let base = (m * d + dd) * c;
            let mut acc = T::zero();
            for ch in 0..c {
                acc += dym[ch] * lkv[base + ch];
                dlkv[base + ch] = q.get(m, dd) * dym[ch];
            }
            dq.set(m, dd, acc);
        }
    }
    let dlkv = TokenField::new(grid, d * c, dlkv)?;
    let g = polyline_matvec_backward(decay, &kv, &dlkv, MaskVariant::Combined2D)?;
    let dkv = g.dx.as_slice();
    let mut dk = Matrix::zeros(n, d);
    let mut dv = Matrix::zeros(n, c);
    for u in 0..n {
        for dd in 0..d {
            let base = (u * d + dd) * c;
            let mut acc = T::zero();
            for ch in 0..c {
                acc += dkv[base + ch] * v.get(u, ch);
            }
            dk.set(u, dd, acc);
        }
        for ch in 0..c {
            let mut acc = T::zero();
            for dd in 0..d {
                acc += dkv[(u * d + dd) * c + ch] * k.get(u, dd);
            }
            dv.set(u, ch, acc);
        }
    }
    Ok(PpmlaGrads {
        dq,
        dk,
        dv,
        dalpha: g.dalpha,
        dbeta: g.dbeta,
    })
}

/// Checks [`ppmla_backward`] against finite differences of `⟨dy, ppmla⟩`.
pub fn check_ppmla_gradients(
    inp: &AttentionInputs<f64>,
    decay: &DecayField2D<f64>,
    dy: &Matrix<f64>,
    h: f64,
) -> Result<FdReport> {
    let g = ppmla_backward(inp, decay, dy)?;
    let grid = inp.grid();
    let (n, d, c) = (grid.tokens(), inp.key_dim(), inp.value_dim());
    let cfg = MatvecConfig::default();
    let f = |p: &[Vec<f64>]| -> Result<f64> {
        let inp = AttentionInputs::new(
            grid,
            Matrix::new(n, d, p[0].clone())?,
            Matrix::new(n, d, p[1].clone())?,
            Matrix::new(n, c, p[2].clone())?,
        )?;
        let decay = DecayField2D::new(grid, p[3].clone(), p[4].clone())?;
        let y = ppmla(&inp, &decay, MatvecMode::Chunkwise, &cfg)?;
        Ok(y.as_slice().iter().zip(dy.as_slice()).map(|(a, b)| a * b).sum())
    };
    let slot = |name: &str, values: &[f64], grad: &Matrix<f64>| {
        FdSlot::new(name, values.to_vec(), grad.as_slice().to_vec())
    };
    let slots = [
        slot("q", inp.q().as_slice(), &g.dq),
        slot("k", inp.k().as_slice(), &g.dk),
        slot("v", inp.v().as_slice(), &g.dv),
        slot("alpha", decay.alpha_values(), &g.dalpha).bounded(0.0, 1.0),
        slot("beta", decay.beta_values(), &g.dbeta).bounded(0.0, 1.0),
    ];
    finite_difference_check(f, &slots, h)
}

/// Per-row and per-column softmax attention factors of criss-cross
/// attention.
#[derive(Debug, Clone, PartialEq)]
pub struct CrissCrossMaps<T> {
    grid: Grid2D,
    row_attn: Vec<Matrix<T>>,
    col_attn: Vec<Matrix<T>>,
}

impl<T: Real> CrissCrossMaps<T> {
    pub fn grid(&self) -> Grid2D {
        self.grid
    }

    /// `A_S^i`, `W×W`: attention among the tokens of row `i`.
    pub fn row_attn(&self) -> &[Matrix<T>] {
        &self.row_attn
    }

    /// `B_S^l`, `H×H`: attention among the tokens of column `l`.
    pub fn col_attn(&self) -> &[Matrix<T>] {
        &self.col_attn
    }

    /// Dense `S^H` (block diagonal rows) and `S^V` (column-coupled).
    pub fn dense(&self) -> Result<(DenseMask<T>, DenseMask<T>)> {
        let b = assemble_blocks(self.grid, &self.row_attn, &self.col_attn)?;
        Ok((b.lh, b.lv))
    }
}

fn gather_rows<T: Real>(m: &Matrix<T>, idx: impl Iterator<Item = usize>) -> Matrix<T> {
    let idx: Vec<usize> = idx.collect();
    Matrix::from_fn(idx.len(), m.cols(), |r, c| m.get(idx[r], c))
}

pub fn build_criss_cross_maps<T: Real>(inp: &AttentionInputs<T>) -> Result<CrissCrossMaps<T>> {
    let grid = inp.grid();
    let (h, w) = (grid.height(), grid.width());
    let row = |i: usize| {
        let idx = || (0..w).map(move |j| grid.index(i, j));
        softmax_attention(&gather_rows(inp.q(), idx()), &gather_rows(inp.k(), idx()))
    };
    let col = |l: usize| {
        let idx = || (0..h).map(move |k| grid.index(k, l));
        softmax_attention(&gather_rows(inp.q(), idx()), &gather_rows(inp.k(), idx()))
    };
    Ok(CrissCrossMaps {
        grid,
        row_attn: (0..h).map(row).collect::<Result<_>>()?,
        col_attn: (0..w).map(col).collect::<Result<_>>()?,
    })
}

/// `Z[:, l] = (B_S^l ⊙ B^l)·V[:, l]` then `Y[i, :] = (A_S^i ⊙ A^i)·Z[i, :]`,
/// or the reverse order when `vertical_first` is false.
fn criss_cross_pass<T: Real>(
    grid: Grid2D,
    row_mats: &[Matrix<T>],
    col_mats: &[Matrix<T>],
    v: &Matrix<T>,
    vertical_first: bool,
) -> Result<Matrix<T>> {
    let (h, w) = (grid.height(), grid.width());
    let vertical = |x: &Matrix<T>| -> Result<Matrix<T>> {
        let mut out = Matrix::zeros(x.rows(), x.cols());
        for (l, b) in col_mats.iter().enumerate() {
            let col = gather_rows(x, (0..h).map(|k| grid.index(k, l)));
            let y = b.matmul(&col)?;
            for i in 0..h {
                out.row_mut(grid.index(i, l)).copy_from_slice(y.row(i));
            }
        }
        Ok(out)
    };
    let horizontal = |x: &Matrix<T>| -> Result<Matrix<T>> {
        let mut out = Matrix::zeros(x.rows(), x.cols());
        for (i, a) in row_mats.iter().enumerate() {
            let row = gather_rows(x, (0..w).map(|l| grid.index(i, l)));
            let y = a.matmul(&row)?;
            for j in 0..w {
                out.row_mut(grid.index(i, j)).copy_from_slice(y.row(j));
            }
        }
        Ok(out)
    };
    if vertical_first {
        horizontal(&vertical(v)?)
    } else {
        vertical(&horizontal(v)?)
    }
}

/// Per-row `W×W` and per-column `H×H` matrices.
type AxisFactors<T> = (Vec<Matrix<T>>, Vec<Matrix<T>>);

fn masked_factors<T: Real>(
    maps: &CrissCrossMaps<T>,
    decay: &DecayField2D<T>,
) -> Result<AxisFactors<T>> {
    let rows = build_row_factors(decay);
    let cols = build_col_factors(decay);
    let a = maps
        .row_attn
        .iter()
        .zip(rows.matrices())
        .map(|(s, m)| s.hadamard(m))
        .collect::<Result<_>>()?;
    let b = maps
        .col_attn
        .iter()
        .zip(cols.matrices())
        .map(|(s, m)| s.hadamard(m))
        .collect::<Result<_>>()?;
    Ok((a, b))
}

/// First criss-cross term `((S^H·S^V) ⊙ L)·V`.
///
/// The efficient modes run column passes with `B_S^l ⊙ B^l` followed by row
/// passes with `A_S^i ⊙ A^i`, `O(N^{3/2})`. The attention factors are dense,
/// so `Blockwise` and `Chunkwise` share this path.
pub fn ppmcca_first_term<T: Real>(
    inp: &AttentionInputs<T>,
    decay: &DecayField2D<T>,
    mode: MatvecMode,
    cfg: &MatvecConfig,
) -> Result<Matrix<T>> {
    check_decay(inp.grid(), decay)?;
    let maps = build_criss_cross_maps(inp)?;
    if mode == MatvecMode::Dense {
        cfg.dense_cap.check(inp.grid().tokens())?;
        let (sh, sv) = maps.dense()?;
        let l = build_polyline_mask_v2h(decay, cfg.dense_cap)?;
        return sh.matmul(&sv)?.hadamard(&l)?.apply(inp.v());
    }
    let (a, b) = masked_factors(&maps, decay)?;
    criss_cross_pass(inp.grid(), &a, &b, inp.v(), true)
}

/// Polyline path masked criss-cross attention,
/// `((S^H·S^V) ⊙ L)·V + ((S^V·S^H) ⊙ Lᵀ)·V`.
///
/// The second term composes the two softmax maps in the opposite order from
/// the first. With that order its index structure matches `Lᵀ`, so it factors
/// into row passes followed by column passes just as the first term does.
/// Every mode, including `Dense`, evaluates this definition;
/// [`ppmcca_literal_dense`] evaluates `((S^H·S^V) ⊙ L^2D)·V` for comparison.
pub fn ppmcca<T: Real>(
    inp: &AttentionInputs<T>,
    decay: &DecayField2D<T>,
    mode: MatvecMode,
    cfg: &MatvecConfig,
) -> Result<Matrix<T>> {
    check_decay(inp.grid(), decay)?;
    let maps = build_criss_cross_maps(inp)?;
    if mode == MatvecMode::Dense {
        cfg.dense_cap.check(inp.grid().tokens())?;
        let (sh, sv) = maps.dense()?;
        let l = build_polyline_mask_v2h(decay, cfg.dense_cap)?;
        let first = sh.matmul(&sv)?.hadamard(&l)?;
        let second = sv.matmul(&sh)?.hadamard(&l.transpose())?;
        return first.add(&second)?.apply(inp.v());
    }
    let (a, b) = masked_factors(&maps, decay)?;
    let first = criss_cross_pass(inp.grid(), &a, &b, inp.v(), true)?;
    let second = criss_cross_pass(inp.grid(), &a, &b, inp.v(), false)?;
    first.add(&second)
}

/// `((S^H·S^V) ⊙ L^2D)·V`, both terms with the same composition order.
pub fn ppmcca_literal_dense<T: Real>(
    inp: &AttentionInputs<T>,
    decay: &DecayField2D<T>,
    cap: DenseCap,
) -> Result<Matrix<T>> {
    check_decay(inp.grid(), decay)?;
    cap.check(inp.grid().tokens())?;
    let (sh, sv) = build_criss_cross_maps(inp)?.dense()?;
    let l2d = build_polyline_mask_2d(decay, cap)?;
    sh.matmul(&sv)?.hadamard(&l2d)?.apply(inp.v())
}

/// The four dense matrices of the first-term factorization chain:
///
/// 1. `(S^H·S^V) ⊙ (L^H·L^V)`
/// 2. `(Ŝ^H ⊙ Ŝ^V) ⊙ (L̂^H ⊙ L̂^V)`
/// 3. `(Ŝ^H ⊙ L̂^H) ⊙ (Ŝ^V ⊙ L̂^V)`
/// 4. `(S^H ⊙ L^H)·(S^V ⊙ L^V)`
pub fn ppmcca_chain_forms<T: Real>(
    inp: &AttentionInputs<T>,
    decay: &DecayField2D<T>,
    cap: DenseCap,
) -> Result<[DenseMask<T>; 4]> {
    let grid = inp.grid();
    check_decay(grid, decay)?;
    cap.check(grid.tokens())?;
    let maps = build_criss_cross_maps(inp)?;
    let s = assemble_blocks(grid, &maps.row_attn, &maps.col_attn)?;
    let rows = build_row_factors(decay);
    let cols = build_col_factors(decay);
    let l = assemble_blocks(grid, rows.matrices(), cols.matrices())?;
    Ok([
        s.lh.matmul(&s.lv)?.hadamard(&l.lh.matmul(&l.lv)?)?,
        s.lh_hat.hadamard(&s.lv_hat)?.hadamard(&l.lh_hat.hadamard(&l.lv_hat)?)?,
        s.lh_hat.hadamard(&l.lh_hat)?.hadamard(&s.lv_hat.hadamard(&l.lv_hat)?)?,
        s.lh.hadamard(&l.lh)?.matmul(&s.lv.hadamard(&l.lv)?)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{seeded_matrix, seeded_random_field};

    fn inputs(h: usize, w: usize, d: usize, c: usize, seed: u64) -> AttentionInputs<f64> {
        let g = Grid2D::new(h, w).unwrap();
        let n = g.tokens();
        AttentionInputs::new(
            g,
            seeded_matrix(n, d, seed, -1.0, 1.0),
            seeded_matrix(n, d, seed + 1, -1.0, 1.0),
            seeded_matrix(n, c, seed + 2, -1.0, 1.0),
        )
        .unwrap()
    }

    #[test]
    fn softmax_rows_normalize() {
        let m = Matrix::new(2, 3, vec![1000.0, 1000.0, 1000.0, 0.0, 1.0, 2.0]).unwrap();
        let s = softmax_rows(&m);
        for r in 0..2 {
            assert!((s.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
        assert!((s.get(0, 0) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn ppmla_modes_agree() {
        let inp = inputs(6, 5, 8, 4, 3);
        let d = seeded_random_field::<f64>(inp.grid(), 4, 0.0, 1.0).unwrap();
        let cfg = MatvecConfig::default();
        let dense = ppmla(&inp, &d, MatvecMode::Dense, &cfg).unwrap();
        for mode in [MatvecMode::Blockwise, MatvecMode::Chunkwise] {
            let y = ppmla(&inp, &d, mode, &cfg).unwrap();
            assert!(y.max_abs_diff(&dense) <= 1e-10);
        }
    }

    #[test]
    fn ppmcca_modes_agree() {
        let inp = inputs(4, 5, 3, 2, 9);
        let d = seeded_random_field::<f64>(inp.grid(), 10, 0.0, 1.0).unwrap();
        let cfg = MatvecConfig::default();
        let dense = ppmcca(&inp, &d, MatvecMode::Dense, &cfg).unwrap();
        let fast = ppmcca(&inp, &d, MatvecMode::Chunkwise, &cfg).unwrap();
        assert!(fast.max_abs_diff(&dense) <= 1e-12);
        let f1 = ppmcca_first_term(&inp, &d, MatvecMode::Dense, &cfg).unwrap();
        let f2 = ppmcca_first_term(&inp, &d, MatvecMode::Blockwise, &cfg).unwrap();
        assert!(f1.max_abs_diff(&f2) <= 1e-12);
    }

    #[test]
    fn ppmla_backward_matches_fd() {
        let inp = inputs(3, 4, 2, 2, 20);
        let d = seeded_random_field::<f64>(inp.grid(), 21, 0.0, 1.0).unwrap();
        let dy = seeded_matrix(12, 2, 22, -1.0, 1.0);
        let r = check_ppmla_gradients(&inp, &d, &dy, 1e-5).unwrap();
        assert!(r.max_rel_error() <= 1e-6, "{r:?}");
    }
}
