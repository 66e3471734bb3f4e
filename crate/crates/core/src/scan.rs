//! One-dimensional semiseparable kernels.
//!
//! For a decay sequence `a` the lower 1-semiseparable matrix has entries
//! `L[i,j] = a_{j+1}·…·a_i` (`i ≥ j`). Multiplying by it is the scan
//! `h_i = a_i h_{i-1} + x_i`. The symmetric variant `S = L + Lᵀ - I` is what
//! the per-row and per-column polyline factors look like.
//!
//! Inputs are `n×C` matrices; all scans accumulate in index order and treat
//! channels independently.

use crate::error::{dim_err, Error, Result};
use crate::real::Real;
use crate::scratch::ScratchVec;
use crate::types::{Matrix, SSM1DParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkConfig {
    chunk_size: usize,
}

impl ChunkConfig {
    pub const DEFAULT_CHUNK: usize = 64;

    pub fn new(chunk_size: usize) -> Result<Self> {
        if chunk_size == 0 {
            return Err(Error::Validation("chunk_size must be at least 1".into()));
        }
        Ok(Self { chunk_size })
    }

    pub fn chunk_size(&self) -> usize {
        self.chunk_size
    }
}

impl Default for ChunkConfig {
    fn default() -> Self {
        Self {
            chunk_size: Self::DEFAULT_CHUNK,
        }
    }
}

fn check_len<T: Real>(a: &[T], x: &Matrix<T>) -> Result<()> {
    if a.len() != x.rows() {
        return dim_err(format!("{} decays for {} rows", a.len(), x.rows()));
    }
    Ok(())
}

/// `out = L·x` by the sequential recurrence. `x`, `out` are `n×c` row-major.
pub(crate) fn forward_scan<T: Real>(a: &[T], x: &[T], c: usize, out: &mut [T]) {
    let n = a.len();
    if n == 0 {
        return;
    }
    out[..c].copy_from_slice(&x[..c]);
    for i in 1..n {
        let (prev, cur) = out[(i - 1) * c..(i + 1) * c].split_at_mut(c);
        let xi = &x[i * c..(i + 1) * c];
        for ((o, &p), &xv) in cur.iter_mut().zip(prev.iter()).zip(xi) {
            *o = a[i] * p + xv;
        }
    }
}

/// `out = Lᵀ·x`: `out_j = Σ_{l ≥ j} a_{j+1}·…·a_l · x_l`.
pub(crate) fn backward_scan<T: Real>(a: &[T], x: &[T], c: usize, out: &mut [T]) {
    let n = a.len();
    if n == 0 {
        return;
    }
    out[(n - 1) * c..n * c].copy_from_slice(&x[(n - 1) * c..n * c]);
    for j in (0..n - 1).rev() {
        let (cur, next) = out[j * c..(j + 2) * c].split_at_mut(c);
        let xj = &x[j * c..(j + 1) * c];
        for ((o, &nx), &xv) in cur.iter_mut().zip(next.iter()).zip(xj) {
            *o = a[j + 1] * nx + xv;
        }
    }
}

/// Reusable buffers for the chunked kernels, sized for one chunk.
#[derive(Debug)]
pub(crate) struct ChunkScratch<T> {
    block: ScratchVec<T>,
    carry: ScratchVec<T>,
    q: usize,
}

impl<T: Real> ChunkScratch<T> {
    /// Buffers for chunks of `chunk_size` over lines of length `len`.
    pub(crate) fn new(chunk_size: usize, len: usize, c: usize) -> Self {
        let q = chunk_size.max(1).min(len.max(1));
        Self {
            block: ScratchVec::filled(q * q, T::zero()),
            carry: ScratchVec::filled(c, T::zero()),
            q,
        }
    }
}

/// `out = L·x` evaluated chunk by chunk: a dense lower-triangular block
/// inside each chunk plus one carried state per channel between chunks.
pub(crate) fn forward_chunked<T: Real>(
    a: &[T],
    x: &[T],
    c: usize,
    out: &mut [T],
    scratch: &mut ChunkScratch<T>,
) {
    let n = a.len();
    let q = scratch.q;
    debug_assert!(scratch.carry.len() == c);
    let block = &mut scratch.block[..];
    let carry = &mut scratch.carry[..];
    let mut start = 0;
    while start < n {
        let end = (start + q).min(n);
        let len = end - start;
        // block[t][s] = a_{s+1}·…·a_t within the chunk (t ≥ s), outward from the diagonal.
        for t in 0..len {
            let row = &mut block[t * q..t * q + len];
            row[t] = T::one();
            for s in (0..t).rev() {
                row[s] = row[s + 1] * a[start + s + 1];
            }
        }
        let first = start == 0;
        let mut decay_in = T::one();
        for t in 0..len {
            let gi = start + t;
            if !first {
                decay_in *= a[gi];
            }
            let row = &block[t * q..t * q + len];
            let o = &mut out[gi * c..(gi + 1) * c];
            for ch in 0..c {
                let mut acc = T::zero();
                for (s, &w) in row[..=t].iter().enumerate() {
                    acc += w * x[(start + s) * c + ch];
                }
                if !first {
                    acc += decay_in * carry[ch];
                }
                o[ch] = acc;
            }
        }
        carry.copy_from_slice(&out[(end - 1) * c..end * c]);
        start = end;
    }
}

/// `out = Lᵀ·x` chunk by chunk, sweeping from the end of the sequence.
pub(crate) fn backward_chunked<T: Real>(
    a: &[T],
    x: &[T],
    c: usize,
    out: &mut [T],
    scratch: &mut ChunkScratch<T>,
) {
    let n = a.len();
    let q = scratch.q;
    let block = &mut scratch.block[..];
    let carry = &mut scratch.carry[..];
    let mut end = n;
    while end > 0 {
        let start = end.saturating_sub(q);
        let len = end - start;
        // block[t][s] = a_{t+1}·…·a_s within the chunk (s ≥ t).
        for t in 0..len {
            let row = &mut block[t * q..t * q + len];
            row[t] = T::one();
            for s in t + 1..len {
                row[s] = row[s - 1] * a[start + s];
            }
        }
        let last = end == n;
        let mut decay_out = T::one();
        for t in (0..len).rev() {
            let gi = start + t;
            if !last {
                decay_out *= a[gi + 1];
            }
            let row = &block[t * q..t * q + len];
            let o = &mut out[gi * c..(gi + 1) * c];
            for ch in 0..c {
                let mut acc = T::zero();
                for (s, &w) in row.iter().enumerate().skip(t) {
                    acc += w * x[(start + s) * c + ch];
                }
                if !last {
                    acc += decay_out * carry[ch];
                }
                o[ch] = acc;
            }
        }
        carry.copy_from_slice(&out[start * c..(start + 1) * c]);
        end = start;
    }
}

/// Symmetric product `(L + Lᵀ - I)·x` with `fwd`/`bwd` as scratch.
pub(crate) fn symmetric_scan<T: Real>(a: &[T], x: &[T], c: usize, fwd: &mut [T], out: &mut [T]) {
    forward_scan(a, x, c, fwd);
    backward_scan(a, x, c, out);
    for ((o, &f), &xv) in out.iter_mut().zip(fwd.iter()).zip(x) {
        *o = *o + f - xv;
    }
}

pub(crate) fn symmetric_chunked<T: Real>(
    a: &[T],
    x: &[T],
    c: usize,
    fwd: &mut [T],
    out: &mut [T],
    scratch: &mut ChunkScratch<T>,
) {
    forward_chunked(a, x, c, fwd, scratch);
    backward_chunked(a, x, c, out, scratch);
    for ((o, &f), &xv) in out.iter_mut().zip(fwd.iter()).zip(x) {
        *o = *o + f - xv;
    }
}

/// `y = L·x` for the lower 1-semiseparable matrix of `a`, in `O(n·C)`.
pub fn ss1_matvec_sequential<T: Real>(a: &[T], x: &Matrix<T>) -> Result<Matrix<T>> {
    check_len(a, x)?;
    let mut out = Matrix::zeros(x.rows(), x.cols());
    forward_scan(a, x.as_slice(), x.cols(), out.as_mut_slice());
    Ok(out)
}

/// Same product as [`ss1_matvec_sequential`], evaluated chunkwise.
pub fn ss1_matvec_chunkwise<T: Real>(a: &[T], x: &Matrix<T>, cfg: ChunkConfig) -> Result<Matrix<T>> {
    check_len(a, x)?;
    let mut out = Matrix::zeros(x.rows(), x.cols());
    let mut scratch = ChunkScratch::new(cfg.chunk_size, x.rows(), x.cols());
    forward_chunked(a, x.as_slice(), x.cols(), out.as_mut_slice(), &mut scratch);
    Ok(out)
}

/// `y_j = Σ_l p(j,l)·x_l` where `p(j,l)` is the product of `a` over
/// `(min(j,l), max(j,l)]`: forward scan plus backward scan minus the
/// diagonal, which both count.
pub fn sym_ss1_matvec<T: Real>(a: &[T], x: &Matrix<T>) -> Result<Matrix<T>> {
    check_len(a, x)?;
    let mut fwd = Matrix::zeros(x.rows(), x.cols());
    let mut out = Matrix::zeros(x.rows(), x.cols());
    symmetric_scan(a, x.as_slice(), x.cols(), fwd.as_mut_slice(), out.as_mut_slice());
    Ok(out)
}

/// Chunkwise counterpart of [`sym_ss1_matvec`].
pub fn sym_ss1_matvec_chunkwise<T: Real>(
    a: &[T],
    x: &Matrix<T>,
    cfg: ChunkConfig,
) -> Result<Matrix<T>> {
    check_len(a, x)?;
    let mut fwd = Matrix::zeros(x.rows(), x.cols());
    let mut out = Matrix::zeros(x.rows(), x.cols());
    let mut scratch = ChunkScratch::new(cfg.chunk_size, x.rows(), x.cols());
    symmetric_chunked(
        a,
        x.as_slice(),
        x.cols(),
        fwd.as_mut_slice(),
        out.as_mut_slice(),
        &mut scratch,
    );
    Ok(out)
}

fn check_ssm<T: Real>(params: &SSM1DParams<T>, x: &Matrix<T>) -> Result<()> {
    if x.rows() != params.len() {
        return dim_err(format!(
            "input has {} rows, parameters have length {}",
            x.rows(),
            params.len()
        ));
    }
    if x.cols() == 0 {
        return dim_err("input needs at least one channel");
    }
    Ok(())
}

/// The recurrent form: `h_i = a_i h_{i-1} + B_iᵀ x_i`, `y_i = C_i h_i`,
/// with `h ∈ R^{D×C}` and `h_{-1} = 0`.
pub fn ssm_scan_1d<T: Real>(params: &SSM1DParams<T>, x: &Matrix<T>) -> Result<Matrix<T>> {
    check_ssm(params, x)?;
    let (n, d, c) = (params.len(), params.state_dim(), x.cols());
    let mut h = vec![T::zero(); d * c];
    let mut y = Matrix::zeros(n, c);
    for i in 0..n {
        let ai = if i == 0 { T::zero() } else { params.a()[i] };
        let bi = params.b().row(i);
        let xi = x.row(i);
        for (dd, &bv) in bi.iter().enumerate() {
            let hrow = &mut h[dd * c..(dd + 1) * c];
            for (hv, &xv) in hrow.iter_mut().zip(xi) {
                *hv = ai * *hv + bv * xv;
            }
        }
        let ci = params.c().row(i);
        let yi = y.row_mut(i);
        for (dd, &cv) in ci.iter().enumerate() {
            for (yv, &hv) in yi.iter_mut().zip(&h[dd * c..(dd + 1) * c]) {
                *yv += cv * hv;
            }
        }
    }
    Ok(y)
}

/// The attention form: `y = (C Bᵀ ⊙ L) x`, evaluated densely in `O(N²)`.
pub fn masked_linear_attention_1d<T: Real>(
    params: &SSM1DParams<T>,
    x: &Matrix<T>,
) -> Result<Matrix<T>> {
    check_ssm(params, x)?;
    let n = params.len();
    let a = params.a();
    let (b, cm) = (params.b(), params.c());
    let mut y = Matrix::zeros(n, x.cols());
    for i in 0..n {
        let ci = cm.row(i);
        // Walk j downward from i so the mask entry grows one factor at a time.
        let mut decay = T::one();
        let mut weights = vec![T::zero(); i + 1];
        for j in (0..=i).rev() {
            if j < i {
                decay *= a[j + 1];
            }
            let score: T = ci.iter().zip(b.row(j)).map(|(&p, &q)| p * q).sum();
            weights[j] = score * decay;
        }
        let yi = y.row_mut(i);
        for (j, &w) in weights.iter().enumerate() {
            for (yv, &xv) in yi.iter_mut().zip(x.row(j)) {
                *yv += w * xv;
            }
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{seeded_matrix, SeededRng};

    fn col(v: &[f64]) -> Matrix<f64> {
        Matrix::new(v.len(), 1, v.to_vec()).unwrap()
    }

    #[test]
    fn sequential_examples() {
        let x = col(&[1.0, 2.0, 3.0]);
        let y = ss1_matvec_sequential(&[1.0, 1.0, 1.0], &x).unwrap();
        assert_eq!(y.as_slice(), &[1.0, 3.0, 6.0]);
        let y = ss1_matvec_sequential(&[0.0, 0.0, 0.0], &x).unwrap();
        assert_eq!(y.as_slice(), &[1.0, 2.0, 3.0]);
        // Dense L = [[1,0,0],[.5,1,0],[.25,.5,1]] times ones.
        let y = ss1_matvec_sequential(&[0.9, 0.5, 0.5], &col(&[1.0, 1.0, 1.0])).unwrap();
        assert_eq!(y.as_slice(), &[1.0, 1.5, 1.75]);
    }

    #[test]
    fn chunk_degenerate_cases() {
        let mut rng = SeededRng::new(5);
        let a: Vec<f64> = rng.fill(20, 0.0, 1.0);
        let x = seeded_matrix::<f64>(20, 3, 6, -1.0, 1.0);
        let seq = ss1_matvec_sequential(&a, &x).unwrap();
        let c1 = ss1_matvec_chunkwise(&a, &x, ChunkConfig::new(1).unwrap()).unwrap();
        assert_eq!(seq, c1);
        let cn = ss1_matvec_chunkwise(&a, &x, ChunkConfig::new(20).unwrap()).unwrap();
        assert!(seq.max_abs_diff(&cn) <= 1e-14);
        assert!(ChunkConfig::new(0).is_err());
    }

    #[test]
    fn symmetric_examples() {
        let x = col(&[1.0, 0.0, 0.0]);
        let y = sym_ss1_matvec(&[0.9, 0.5, 0.4], &x).unwrap();
        let expect = [1.0, 0.5, 0.2];
        for (a, b) in y.as_slice().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        let x = seeded_matrix::<f64>(4, 2, 1, -1.0, 1.0);
        assert_eq!(sym_ss1_matvec(&[0.0; 4], &x).unwrap(), x);
        let y = sym_ss1_matvec(&[1.0; 4], &x).unwrap();
        for c in 0..2 {
            let total: f64 = (0..4).map(|r| x.get(r, c)).sum();
            for r in 0..4 {
                assert!((y.get(r, c) - total).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn ssm_zero_decay_is_memoryless() {
        let b = seeded_matrix::<f64>(5, 3, 1, -1.0, 1.0);
        let c = seeded_matrix::<f64>(5, 3, 2, -1.0, 1.0);
        let x = seeded_matrix::<f64>(5, 2, 3, -1.0, 1.0);
        let p = SSM1DParams::new(vec![0.0; 5], b.clone(), c.clone()).unwrap();
        let y = ssm_scan_1d(&p, &x).unwrap();
        for i in 0..5 {
            let s: f64 = c.row(i).iter().zip(b.row(i)).map(|(p, q)| p * q).sum();
            for ch in 0..2 {
                assert!((y.get(i, ch) - s * x.get(i, ch)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn ssm_scalar_collapse_matches_scan() {
        let ones = Matrix::<f64>::filled(6, 1, 1.0);
        let mut rng = SeededRng::new(11);
        let a: Vec<f64> = rng.fill(6, 0.0, 1.0);
        let x = seeded_matrix::<f64>(6, 2, 4, -1.0, 1.0);
        let p = SSM1DParams::new(a.clone(), ones.clone(), ones).unwrap();
        let y = ssm_scan_1d(&p, &x).unwrap();
        assert!(y.max_abs_diff(&ss1_matvec_sequential(&a, &x).unwrap()) <= 1e-15);
    }

    #[test]
    fn attention_form_single_token() {
        let b = Matrix::new(1, 2, vec![0.5, -1.0]).unwrap();
        let c = Matrix::new(1, 2, vec![2.0, 3.0]).unwrap();
        let x = Matrix::new(1, 1, vec![4.0]).unwrap();
        let p = SSM1DParams::new(vec![0.3], b, c).unwrap();
        let y = masked_linear_attention_1d(&p, &x).unwrap();
        assert_eq!(y.as_slice(), &[(1.0 - 3.0) * 4.0]);
    }

    #[test]
    fn shape_errors() {
        let x = Matrix::<f64>::zeros(3, 1);
        assert!(ss1_matvec_sequential(&[0.5; 2], &x).is_err());
        let ones = Matrix::<f64>::filled(2, 1, 1.0);
        let p = SSM1DParams::new(vec![0.5; 2], ones.clone(), ones).unwrap();
        assert!(ssm_scan_1d(&p, &x).is_err());
        assert!(masked_linear_attention_1d(&p, &x).is_err());
    }
}
