//! Fast multiplication by the polyline path mask.
//!
//! `L` factors into a vertical stage and a horizontal stage: with `X` the
//! `H×W` token grid,
//!
//! ```text
//! Z[:, l] = B^l · X[:, l]      (scan every column with the beta decays)
//! Y[i, :] = A^i · Z[i, :]      (scan every row with the alpha decays)
//! ```
//!
//! gives `Y = L·X`. Because every `A^i` and `B^l` is symmetric, running the
//! same two stages in the opposite order gives `Lᵀ·X`, the H2V mask.
//!
//! Each 1D stage is either a blockwise product with the materialized factor
//! matrix (`O(n²)` per line, `O(N^{3/2})` overall) or a chunked
//! semiseparable scan (`O(n·Q)` per line, `O(N)` overall). Lines are
//! independent, so they run in parallel with bitwise identical results.

use rayon::prelude::*;

use crate::error::{dim_err, Result};
use crate::mask::{build_polyline_mask_3d, segment_row, DenseCap};
use crate::real::Real;
use crate::scan::{symmetric_chunked, ChunkConfig, ChunkScratch};
use crate::scratch::ScratchVec;
use crate::types::{DecayField2D, DecayField3D, Grid2D, Matrix, TokenField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MatvecMode {
    /// Multiply by the explicit mask, `O(N²)`.
    Dense,
    /// Algorithm with materialized per-line factor matrices, `O(N^{3/2})`.
    Blockwise,
    /// Algorithm with chunked semiseparable scans per line, `O(N)`.
    Chunkwise,
}

impl MatvecMode {
    pub const ALL: [MatvecMode; 3] = [MatvecMode::Dense, MatvecMode::Blockwise, MatvecMode::Chunkwise];

    pub fn name(self) -> &'static str {
        match self {
            MatvecMode::Dense => "dense",
            MatvecMode::Blockwise => "blockwise",
            MatvecMode::Chunkwise => "chunkwise",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MaskVariant {
    /// `L`: vertical-then-horizontal paths.
    V2H,
    /// `L̃ = Lᵀ`: horizontal-then-vertical paths.
    H2V,
    /// `L^2D = L + Lᵀ`.
    Combined2D,
}

impl MaskVariant {
    pub const ALL: [MaskVariant; 3] = [MaskVariant::V2H, MaskVariant::H2V, MaskVariant::Combined2D];

    pub fn name(self) -> &'static str {
        match self {
            MaskVariant::V2H => "v2h",
            MaskVariant::H2V => "h2v",
            MaskVariant::Combined2D => "combined",
        }
    }

    /// The variant whose mask is the transpose of this one.
    pub fn adjoint(self) -> Self {
        match self {
            MaskVariant::V2H => MaskVariant::H2V,
            MaskVariant::H2V => MaskVariant::V2H,
            MaskVariant::Combined2D => MaskVariant::Combined2D,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MatvecConfig {
    pub chunk: ChunkConfig,
    pub dense_cap: DenseCap,
}

/// Memory layout of one scan axis: the buffer is `[outer][len][inner][c]`
/// and a line runs along `len` for a fixed `(outer, inner)`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Axis {
    pub outer: usize,
    pub len: usize,
    pub inner: usize,
}

impl Axis {
    pub fn lines(&self) -> usize {
        self.outer * self.inner
    }

    /// Offset (in `c`-vectors) of element `t` of line `line`.
    #[inline]
    pub fn offset(&self, line: usize, t: usize) -> usize {
        let (o, i) = (line / self.inner, line % self.inner);
        (o * self.len + t) * self.inner + i
    }

    pub fn horizontal(grid: Grid2D) -> Self {
        Axis {
            outer: grid.height(),
            len: grid.width(),
            inner: 1,
        }
    }

    pub fn vertical(grid: Grid2D) -> Self {
        Axis {
            outer: 1,
            len: grid.height(),
            inner: grid.width(),
        }
    }

    /// Gathers a per-token scalar field into line-major order.
    pub fn gather_decays<T: Real>(&self, field: &[T]) -> ScratchVec<T> {
        let mut out = ScratchVec::filled(self.lines() * self.len, T::zero());
        for line in 0..self.lines() {
            for t in 0..self.len {
                out[line * self.len + t] = field[self.offset(line, t)];
            }
        }
        out
    }
}

/// How each line is multiplied by its symmetric factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum LineOp {
    Blockwise,
    Chunkwise(usize),
}

struct LineScratch<T> {
    fwd: ScratchVec<T>,
    factor: ScratchVec<T>,
    chunk: Option<ChunkScratch<T>>,
}

impl<T: Real> LineScratch<T> {
    fn new(op: LineOp, n: usize, c: usize) -> Self {
        let empty = || ScratchVec::from_vec(Vec::new());
        match op {
            LineOp::Blockwise => Self {
                fwd: empty(),
                factor: ScratchVec::filled(n * n, T::zero()),
                chunk: None,
            },
            LineOp::Chunkwise(q) => Self {
                fwd: ScratchVec::filled(n * c, T::zero()),
                factor: empty(),
                chunk: Some(ChunkScratch::new(q, n, c)),
            },
        }
    }
}

/// `out = S·x` for the symmetric segment-product matrix `S` of `decays`.
fn apply_line<T: Real>(op: LineOp, decays: &[T], x: &[T], c: usize, out: &mut [T], s: &mut LineScratch<T>) {
    let n = decays.len();
    match op {
        LineOp::Blockwise => {
            let factor = &mut s.factor[..n * n];
            for j in 0..n {
                segment_row(decays, j, &mut factor[j * n..(j + 1) * n]);
            }
            for j in 0..n {
                let row = &factor[j * n..(j + 1) * n];
                let o = &mut out[j * c..(j + 1) * c];
                o.fill(T::zero());
                for (l, &w) in row.iter().enumerate() {
                    for (ov, &xv) in o.iter_mut().zip(&x[l * c..(l + 1) * c]) {
                        *ov += w * xv;
                    }
                }
            }
        }
        LineOp::Chunkwise(_) => {
            let chunk = s.chunk.as_mut().expect("chunk scratch for chunkwise op");
            symmetric_chunked(decays, x, c, &mut s.fwd[..], out, chunk);
        }
    }
}

/// Applies a per-line operator along `axis`. `decays` is line-major.
/// `line_fn(line, decays, x_line, out_line, scratch)` computes one line.
fn axis_pass<T, S, I, F>(x: &[T], axis: Axis, c: usize, init: I, line_fn: F) -> ScratchVec<T>
where
    T: Real,
    I: Fn() -> S + Sync + Send,
    F: Fn(usize, &[T], &mut [T], &mut S) + Sync + Send,
{
    let line_len = axis.len * c;
    let mut lines = ScratchVec::filled(axis.lines() * line_len, T::zero());
    if axis.inner == 1 {
        // Lines are contiguous; write in place.
        lines
            .par_chunks_mut(line_len)
            .enumerate()
            .for_each_init(&init, |s, (line, out)| {
                line_fn(line, &x[line * line_len..(line + 1) * line_len], out, s);
            });
        return lines;
    }
    lines
        .par_chunks_mut(line_len)
        .enumerate()
        .for_each_init(
            || (init(), ScratchVec::filled(line_len, T::zero())),
            |(s, buf), (line, out)| {
                for t in 0..axis.len {
                    let src = axis.offset(line, t) * c;
                    buf[t * c..(t + 1) * c].copy_from_slice(&x[src..src + c]);
                }
                line_fn(line, &buf[..], out, s);
            },
        );
    let mut scattered = ScratchVec::filled(x.len(), T::zero());
    for line in 0..axis.lines() {
        for t in 0..axis.len {
            let dst = axis.offset(line, t) * c;
            let src = (line * axis.len + t) * c;
            scattered[dst..dst + c].copy_from_slice(&lines[src..src + c]);
        }
    }
    scattered
}

/// Multiplies every line along `axis` by the symmetric segment-product
/// matrix of its decays (line-major in `decays`).
pub(crate) fn symmetric_axis_pass<T: Real>(
    x: &[T],
    axis: Axis,
    c: usize,
    decays: &[T],
    op: LineOp,
) -> ScratchVec<T> {
    let n = axis.len;
    axis_pass(
        x,
        axis,
        c,
        || LineScratch::new(op, n, c),
        |line, xl, out, s| {
            apply_line(op, &decays[line * n..(line + 1) * n], xl, c, out, s);
        },
    )
}

fn check_inputs<T: Real>(decay: &DecayField2D<T>, x: &TokenField<T>) -> Result<()> {
    decay.grid().ensure_same(&x.grid(), "polyline_matvec")
}

fn line_op(mode: MatvecMode, cfg: &MatvecConfig) -> LineOp {
    match mode {
        MatvecMode::Chunkwise => LineOp::Chunkwise(cfg.chunk.chunk_size()),
        _ => LineOp::Blockwise,
    }
}

/// Vertical stage then horizontal stage: `L·x`.
fn v2h_factored<T: Real>(decay: &DecayField2D<T>, x: &[T], c: usize, op: LineOp) -> ScratchVec<T> {
    let grid = decay.grid();
    let vert = Axis::vertical(grid);
    let beta = vert.gather_decays(decay.beta_values());
    let z = symmetric_axis_pass(x, vert, c, &beta, op);
    drop(beta);
    symmetric_axis_pass(&z, Axis::horizontal(grid), c, decay.alpha_values(), op)
}

/// Horizontal stage then vertical stage: `Lᵀ·x`.
fn h2v_factored<T: Real>(decay: &DecayField2D<T>, x: &[T], c: usize, op: LineOp) -> ScratchVec<T> {
    let grid = decay.grid();
    let z = symmetric_axis_pass(x, Axis::horizontal(grid), c, decay.alpha_values(), op);
    let vert = Axis::vertical(grid);
    let beta = vert.gather_decays(decay.beta_values());
    symmetric_axis_pass(&z, vert, c, &beta, op)
}

/// Dense `L·x`, one grid row of mask rows at a time.
///
/// The panel for grid row `i` holds mask rows `(i, j)` for every `j`:
/// `A^i[j,l] · B^l[i,k]` over all inputs `(k,l)`. The full mask is never
/// resident; peak scratch is one `W×N` panel per worker.
fn v2h_dense<T: Real>(decay: &DecayField2D<T>, x: &[T], c: usize) -> Vec<T> {
    let grid = decay.grid();
    let (h, w, n) = (grid.height(), grid.width(), grid.tokens());
    let vert = Axis::vertical(grid);
    let beta = vert.gather_decays(decay.beta_values());
    let mut out = vec![T::zero(); n * c];
    out.par_chunks_mut(w * c).enumerate().for_each_init(
        || {
            (
                ScratchVec::filled(w * n, T::zero()),
                ScratchVec::filled(n, T::zero()),
                ScratchVec::filled(w * w, T::zero()),
                ScratchVec::filled(h, T::zero()),
            )
        },
        |(panel, bcol, arow, tmp), (i, yrow)| {
            let alpha = decay.alpha_row(i);
            for j in 0..w {
                segment_row(alpha, j, &mut arow[j * w..(j + 1) * w]);
            }
            // bcol[k*w + l] = B^l[i, k]
            for l in 0..w {
                segment_row(&beta[l * h..(l + 1) * h], i, &mut tmp[..]);
                for k in 0..h {
                    bcol[k * w + l] = tmp[k];
                }
            }
            for j in 0..w {
                let prow = &mut panel[j * n..(j + 1) * n];
                let a = &arow[j * w..(j + 1) * w];
                for k in 0..h {
                    for l in 0..w {
                        prow[k * w + l] = a[l] * bcol[k * w + l];
                    }
                }
            }
            dense_panel_apply(&panel[..], x, c, n, yrow);
        },
    );
    out
}

/// Dense `Lᵀ·x`, one grid column of mask rows at a time:
/// `Lᵀ[(i,j),(k,l)] = B^j[i,k] · A^k[j,l]`.
fn h2v_dense<T: Real>(decay: &DecayField2D<T>, x: &[T], c: usize) -> Vec<T> {
    let grid = decay.grid();
    let (h, w, n) = (grid.height(), grid.width(), grid.tokens());
    let vert = Axis::vertical(grid);
    let beta = vert.gather_decays(decay.beta_values());
    let mut cols = ScratchVec::filled(n * c, T::zero());
    cols.par_chunks_mut(h * c).enumerate().for_each_init(
        || {
            (
                ScratchVec::filled(h * n, T::zero()),
                ScratchVec::filled(n, T::zero()),
                ScratchVec::filled(h * h, T::zero()),
            )
        },
        |(panel, arow, bmat), (j, ycol)| {
            for i in 0..h {
                segment_row(&beta[j * h..(j + 1) * h], i, &mut bmat[i * h..(i + 1) * h]);
            }
            // arow[k*w + l] = A^k[j, l]
            for k in 0..h {
                segment_row(decay.alpha_row(k), j, &mut arow[k * w..(k + 1) * w]);
            }
            for i in 0..h {
                let prow = &mut panel[i * n..(i + 1) * n];
                let b = &bmat[i * h..(i + 1) * h];
                for k in 0..h {
                    for l in 0..w {
                        prow[k * w + l] = b[k] * arow[k * w + l];
                    }
                }
            }
            dense_panel_apply(&panel[..], x, c, n, ycol);
        },
    );
    let mut out = vec![T::zero(); n * c];
    for j in 0..w {
        for i in 0..h {
            let dst = grid.index(i, j) * c;
            let src = (j * h + i) * c;
            out[dst..dst + c].copy_from_slice(&cols[src..src + c]);
        }
    }
    out
}

/// `y[r] = Σ_v panel[r, v] · x[v]` for each panel row, accumulating over
/// `v` in index order.
fn dense_panel_apply<T: Real>(panel: &[T], x: &[T], c: usize, n: usize, y: &mut [T]) {
    let rows = y.len() / c;
    for r in 0..rows {
        let prow = &panel[r * n..(r + 1) * n];
        let o = &mut y[r * c..(r + 1) * c];
        if c == 1 {
            let mut acc = T::zero();
            for (&p, &xv) in prow.iter().zip(x) {
                acc += p * xv;
            }
            o[0] = acc;
        } else {
            o.fill(T::zero());
            for (v, &p) in prow.iter().enumerate() {
                for (ov, &xv) in o.iter_mut().zip(&x[v * c..(v + 1) * c]) {
                    *ov += p * xv;
                }
            }
        }
    }
}

fn add_into<T: Real>(acc: &mut [T], other: &[T]) {
    for (a, &b) in acc.iter_mut().zip(other) {
        *a += b;
    }
}

/// `y = M·x` where `M` is the mask selected by `variant`.
///
/// All three modes compute the same product; `Dense` is the `O(N²)`
/// reference and is refused beyond `cfg.dense_cap` tokens.
pub fn polyline_matvec<T: Real>(
    decay: &DecayField2D<T>,
    x: &TokenField<T>,
    variant: MaskVariant,
    mode: MatvecMode,
    cfg: &MatvecConfig,
) -> Result<TokenField<T>> {
    check_inputs(decay, x)?;
    let c = x.channels();
    let xs = x.as_slice();
    let data = match mode {
        MatvecMode::Dense => {
            cfg.dense_cap.check(decay.grid().tokens())?;
            match variant {
                MaskVariant::V2H => v2h_dense(decay, xs, c),
                MaskVariant::H2V => h2v_dense(decay, xs, c),
                MaskVariant::Combined2D => {
                    let mut y = v2h_dense(decay, xs, c);
                    add_into(&mut y, &h2v_dense(decay, xs, c));
                    y
                }
            }
        }
        MatvecMode::Blockwise | MatvecMode::Chunkwise => {
            let op = line_op(mode, cfg);
            match variant {
                MaskVariant::V2H => v2h_factored(decay, xs, c, op).into_vec(),
                MaskVariant::H2V => h2v_factored(decay, xs, c, op).into_vec(),
                MaskVariant::Combined2D => {
                    let mut y = v2h_factored(decay, xs, c, op).into_vec();
                    add_into(&mut y, &h2v_factored(decay, xs, c, op));
                    y
                }
            }
        }
    };
    TokenField::new(x.grid(), c, data)
}

/// Sequential-scan application of the vertical or horizontal stage, used by
/// the backward pass.
pub(crate) fn stage<T: Real>(decay: &DecayField2D<T>, x: &[T], c: usize, vertical: bool) -> Vec<T> {
    let grid = decay.grid();
    let op = LineOp::Chunkwise(ChunkConfig::DEFAULT_CHUNK);
    if vertical {
        let vert = Axis::vertical(grid);
        let beta = vert.gather_decays(decay.beta_values());
        symmetric_axis_pass(x, vert, c, &beta, op).into_vec()
    } else {
        symmetric_axis_pass(x, Axis::horizontal(grid), c, decay.alpha_values(), op).into_vec()
    }
}

/// `y = L^3D·x` for an `N×C` input on an `H×W×Dp` grid.
///
/// The efficient modes apply three axis stages in turn: depth, height,
/// width. `Dense` multiplies by [`build_polyline_mask_3d`].
pub fn polyline_matvec_3d<T: Real>(
    decay: &DecayField3D<T>,
    x: &Matrix<T>,
    mode: MatvecMode,
    cfg: &MatvecConfig,
) -> Result<Matrix<T>> {
    let g = decay.grid();
    let n = g.tokens();
    if x.rows() != n {
        return dim_err(format!("3D input has {} rows, grid has {n} tokens", x.rows()));
    }
    if x.cols() == 0 {
        return dim_err("3D input needs at least one channel");
    }
    let c = x.cols();
    if mode == MatvecMode::Dense {
        let mask = build_polyline_mask_3d(decay, cfg.dense_cap)?;
        return mask.apply(x);
    }
    let op = line_op(mode, cfg);
    let depth = Axis {
        outer: g.height * g.width,
        len: g.depth,
        inner: 1,
    };
    let height = Axis {
        outer: 1,
        len: g.height,
        inner: g.width * g.depth,
    };
    let width = Axis {
        outer: g.height,
        len: g.width,
        inner: g.depth,
    };
    let gather = |axis: Axis, f: &dyn Fn(usize, usize, usize) -> T| {
        let field: Vec<T> = (0..n)
            .map(|u| {
                let k = u % g.depth;
                let ij = u / g.depth;
                f(ij / g.width, ij % g.width, k)
            })
            .collect();
        axis.gather_decays(&field)
    };
    let gamma = gather(depth, &|i, j, k| decay.gamma(i, j, k));
    let z1 = symmetric_axis_pass(x.as_slice(), depth, c, &gamma, op);
    let beta = gather(height, &|i, j, k| decay.beta(i, j, k));
    let z2 = symmetric_axis_pass(&z1, height, c, &beta, op);
    drop(z1);
    let alpha = gather(width, &|i, j, k| decay.alpha(i, j, k));
    let y = symmetric_axis_pass(&z2, width, c, &alpha, op);
    Matrix::new(n, c, y.into_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::build_polyline_mask_v2h;
    use crate::rng::{seeded_random_field, seeded_token_field};
    use crate::scratch;

    fn cfg() -> MatvecConfig {
        MatvecConfig::default()
    }

    #[test]
    fn unit_decay_gives_grand_sum() {
        let g = Grid2D::new(3, 5).unwrap();
        let d = DecayField2D::<f64>::constant(g, 1.0, 1.0).unwrap();
        let x = seeded_token_field::<f64>(g, 2, 4).unwrap();
        for mode in MatvecMode::ALL {
            let y = polyline_matvec(&d, &x, MaskVariant::V2H, mode, &cfg()).unwrap();
            for ch in 0..2 {
                let total: f64 = (0..15).map(|u| x.as_slice()[u * 2 + ch]).sum();
                for u in 0..15 {
                    assert!((y.as_slice()[u * 2 + ch] - total).abs() < 1e-13, "{mode:?}");
                }
            }
        }
    }

    #[test]
    fn zero_decay_combined_doubles() {
        let g = Grid2D::new(4, 3).unwrap();
        let d = DecayField2D::<f64>::constant(g, 0.0, 0.0).unwrap();
        let x = seeded_token_field::<f64>(g, 3, 8).unwrap();
        for mode in MatvecMode::ALL {
            let y = polyline_matvec(&d, &x, MaskVariant::Combined2D, mode, &cfg()).unwrap();
            let expect: Vec<f64> = x.as_slice().iter().map(|v| 2.0 * v).collect();
            assert_eq!(y.as_slice(), &expect[..], "{mode:?}");
        }
    }

    #[test]
    fn modes_agree_with_explicit_mask() {
        let g = Grid2D::new(5, 7).unwrap();
        let d = seeded_random_field::<f64>(g, 17, 0.0, 1.0).unwrap();
        let x = seeded_token_field::<f64>(g, 3, 18).unwrap();
        let l = build_polyline_mask_v2h(&d, DenseCap::default()).unwrap();
        let want = l.apply(&x.to_matrix()).unwrap();
        for mode in MatvecMode::ALL {
            let y = polyline_matvec(&d, &x, MaskVariant::V2H, mode, &cfg()).unwrap();
            assert!(y.to_matrix().max_abs_diff(&want) <= 1e-12, "{mode:?}");
        }
        let want_t = l.transpose().apply(&x.to_matrix()).unwrap();
        for mode in MatvecMode::ALL {
            let y = polyline_matvec(&d, &x, MaskVariant::H2V, mode, &cfg()).unwrap();
            assert!(y.to_matrix().max_abs_diff(&want_t) <= 1e-12, "{mode:?}");
        }
    }

    #[test]
    fn errors() {
        let g = Grid2D::new(3, 3).unwrap();
        let d = DecayField2D::<f64>::constant(g, 0.5, 0.5).unwrap();
        let x = TokenField::<f64>::zeros(Grid2D::new(3, 4).unwrap(), 1);
        assert!(polyline_matvec(&d, &x, MaskVariant::V2H, MatvecMode::Blockwise, &cfg()).is_err());
        let x = TokenField::<f64>::zeros(g, 1);
        let small = MatvecConfig {
            dense_cap: DenseCap(8),
            ..cfg()
        };
        assert!(matches!(
            polyline_matvec(&d, &x, MaskVariant::V2H, MatvecMode::Dense, &small),
            Err(crate::Error::Capacity { .. })
        ));
        assert!(polyline_matvec(&d, &x, MaskVariant::V2H, MatvecMode::Chunkwise, &small).is_ok());
    }

    #[test]
    fn scratch_ordering() {
        let g = Grid2D::square(128).unwrap();
        let d = seeded_random_field::<f32>(g, 1, 0.5, 1.0).unwrap();
        let x = seeded_token_field::<f32>(g, 1, 2).unwrap();
        let cfg = MatvecConfig {
            dense_cap: DenseCap::unlimited(),
            ..cfg()
        };
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let peak = |mode| {
            pool.install(|| {
                scratch::measure(|| polyline_matvec(&d, &x, MaskVariant::V2H, mode, &cfg).unwrap()).1
            })
        };
        let (dense, block, chunk) = (
            peak(MatvecMode::Dense),
            peak(MatvecMode::Blockwise),
            peak(MatvecMode::Chunkwise),
        );
        assert!(dense > block && block > chunk, "{dense} {block} {chunk}");
    }
}
