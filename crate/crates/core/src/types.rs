//! Shared domain types.
//!
//! Storage is 0-based and row-major. A grid token `(i, j)` (row `i`, column
//! `j`, both 0-based) has linear index `i * W + j`; in the 1-based notation
//! used in the docs this is `(i-1)·W + j`.

use crate::error::{dim_err, Error, Result};
use crate::real::Real;

/// Tolerance within which decay values slightly outside `[0, 1]` are clamped
/// by [`DecayField2D::new_tolerant`] (serialization noise).
pub const DECAY_CLAMP_TOLERANCE: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Grid2D {
    height: usize,
    width: usize,
}

impl Grid2D {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return dim_err(format!("grid must be at least 1x1, got {height}x{width}"));
        }
        Ok(Self { height, width })
    }

    pub fn square(side: usize) -> Result<Self> {
        Self::new(side, side)
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    /// Token count `N = H·W`.
    #[inline]
    pub fn tokens(&self) -> usize {
        self.height * self.width
    }

    /// Linear index of 0-based token `(i, j)`.
    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.height && j < self.width);
        i * self.width + j
    }

    /// Inverse of [`Grid2D::index`].
    #[inline]
    pub fn coords(&self, u: usize) -> (usize, usize) {
        (u / self.width, u % self.width)
    }

    pub(crate) fn ensure_same(&self, other: &Grid2D, what: &str) -> Result<()> {
        if self != other {
            return dim_err(format!(
                "{what}: grid {}x{} does not match {}x{}",
                self.height, self.width, other.height, other.width
            ));
        }
        Ok(())
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return dim_err(format!(
                "matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |r, c| if r == c { T::one() } else { T::zero() })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn matmul(&self, rhs: &Matrix<T>) -> Result<Self> {
        if self.cols != rhs.rows {
            return dim_err(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            ));
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        for r in 0..self.rows {
            let out_row = &mut out.data[r * rhs.cols..(r + 1) * rhs.cols];
            for k in 0..self.cols {
                let a = self.data[r * self.cols + k];
                if a == T::zero() {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(rhs.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    fn zip_with(&self, rhs: &Matrix<T>, op: &str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.rows != rhs.rows || self.cols != rhs.cols {
            return dim_err(format!(
                "{op} {}x{} with {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            ));
        }
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn hadamard(&self, rhs: &Matrix<T>) -> Result<Self> {
        self.zip_with(rhs, "hadamard", |a, b| a * b)
    }

    pub fn add(&self, rhs: &Matrix<T>) -> Result<Self> {
        self.zip_with(rhs, "add", |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Matrix<T>) -> Result<Self> {
        self.zip_with(rhs, "sub", |a, b| a - b)
    }

    pub fn scale(&self, s: T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| v * s).collect(),
        }
    }

    /// Largest absolute entrywise difference; infinite on shape mismatch.
    pub fn max_abs_diff(&self, rhs: &Matrix<T>) -> f64 {
        if self.rows != rhs.rows || self.cols != rhs.cols {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&rhs.data)
            .map(|(&a, &b)| (a - b).abs().wide())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.abs().wide()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::from_wide(v.wide())).collect(),
        }
    }
}

/// An explicit `n×n` mask matrix: the brute-force representation of every
/// structured mask in the crate.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMask<T> {
    inner: Matrix<T>,
}

impl<T: Real> DenseMask<T> {
    pub fn new(n: usize, entries: Vec<T>) -> Result<Self> {
        Self::from_matrix(Matrix::new(n, n, entries)?)
    }

    pub fn from_matrix(m: Matrix<T>) -> Result<Self> {
        if m.rows() != m.cols() {
            return dim_err(format!("mask must be square, got {}x{}", m.rows(), m.cols()));
        }
        if m.rows() == 0 {
            return dim_err("mask must be at least 1x1");
        }
        if !m.is_finite() {
            return Err(Error::Numeric("mask entries must be finite".into()));
        }
        Ok(Self { inner: m })
    }

    pub(crate) fn from_matrix_unchecked(m: Matrix<T>) -> Self {
        debug_assert_eq!(m.rows(), m.cols());
        Self { inner: m }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.inner.rows()
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.inner.get(r, c)
    }

    pub fn as_matrix(&self) -> &Matrix<T> {
        &self.inner
    }

    pub fn into_matrix(self) -> Matrix<T> {
        self.inner
    }

    pub fn transpose(&self) -> Self {
        Self::from_matrix_unchecked(self.inner.transpose())
    }

    pub fn matmul(&self, rhs: &DenseMask<T>) -> Result<Self> {
        Ok(Self::from_matrix_unchecked(self.inner.matmul(&rhs.inner)?))
    }

    pub fn hadamard(&self, rhs: &DenseMask<T>) -> Result<Self> {
        Ok(Self::from_matrix_unchecked(self.inner.hadamard(&rhs.inner)?))
    }

    pub fn add(&self, rhs: &DenseMask<T>) -> Result<Self> {
        Ok(Self::from_matrix_unchecked(self.inner.add(&rhs.inner)?))
    }

    pub fn max_abs_diff(&self, rhs: &DenseMask<T>) -> f64 {
        self.inner.max_abs_diff(&rhs.inner)
    }

    /// `M · X` for an `n×C` right-hand side.
    pub fn apply(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        self.inner.matmul(x)
    }
}

/// A 4-index `H×W×H×W` tensor, the folded form of an `HW×HW` mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<T> {
    dims: [usize; 4],
    data: Vec<T>,
}

impl<T: Real> Tensor4<T> {
    pub fn new(dims: [usize; 4], data: Vec<T>) -> Result<Self> {
        let len: usize = dims.iter().product();
        if data.len() != len {
            return dim_err(format!("tensor {dims:?} needs {len} entries, got {}", data.len()));
        }
        Ok(Self { dims, data })
    }

    pub fn from_fn(dims: [usize; 4], mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(dims.iter().product());
        for a in 0..dims[0] {
            for b in 0..dims[1] {
                for c in 0..dims[2] {
                    for d in 0..dims[3] {
                        data.push(f(a, b, c, d));
                    }
                }
            }
        }
        Self { dims, data }
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> T {
        let [_, d1, d2, d3] = self.dims;
        self.data[((i * d1 + j) * d2 + k) * d3 + l]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }
}

/// Flattens `T[i,j,k,l]` into `M[i·W + j, k·W + l]` (0-based).
pub fn unfold<T: Real>(tensor: &Tensor4<T>) -> Result<DenseMask<T>> {
    let [h, w, h2, w2] = tensor.dims;
    if h != h2 || w != w2 {
        return dim_err(format!(
            "unfold needs an HxWxHxW tensor, got {:?}",
            tensor.dims
        ));
    }
    let grid = Grid2D::new(h, w)?;
    // Row-major H×W×H×W and row-major HW×HW coincide element for element.
    DenseMask::new(grid.tokens(), tensor.data.clone())
}

/// Inverse of [`unfold`].
pub fn fold<T: Real>(mask: &DenseMask<T>, grid: Grid2D) -> Result<Tensor4<T>> {
    if mask.n() != grid.tokens() {
        return dim_err(format!(
            "fold: mask is {0}x{0} but grid has {1} tokens",
            mask.n(),
            grid.tokens()
        ));
    }
    Tensor4::new(
        [grid.height(), grid.width(), grid.height(), grid.width()],
        mask.as_matrix().as_slice().to_vec(),
    )
}

fn check_unit_interval<T: Real>(values: &mut [T], name: &str, tolerance: f64) -> Result<()> {
    for (idx, v) in values.iter_mut().enumerate() {
        let x = v.wide();
        if (0.0..=1.0).contains(&x) {
            continue;
        }
        if x.is_finite() && x >= -tolerance && x <= 1.0 + tolerance {
            *v = T::from_wide(x.clamp(0.0, 1.0));
            continue;
        }
        return Err(Error::Validation(format!(
            "{name}[{idx}] = {x} lies outside [0, 1]"
        )));
    }
    Ok(())
}

/// Horizontal (`alpha`) and vertical (`beta`) decay factors on an `H×W` grid.
///
/// `alpha(i, j)` attenuates the step into column `j` along row `i`;
/// `beta(i, j)` attenuates the step into row `i` along column `j`.
/// `alpha(_, 0)` and `beta(0, _)` are never consumed by any path product.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayField2D<T> {
    grid: Grid2D,
    alpha: Vec<T>,
    beta: Vec<T>,
}

impl<T: Real> DecayField2D<T> {
    /// Strict constructor: every entry must lie in `[0, 1]`.
    pub fn new(grid: Grid2D, alpha: Vec<T>, beta: Vec<T>) -> Result<Self> {
        Self::build(grid, alpha, beta, 0.0)
    }

    /// Like [`DecayField2D::new`] but clamps entries within
    /// [`DECAY_CLAMP_TOLERANCE`] of the interval. Used when loading files.
    pub fn new_tolerant(grid: Grid2D, alpha: Vec<T>, beta: Vec<T>) -> Result<Self> {
        Self::build(grid, alpha, beta, DECAY_CLAMP_TOLERANCE)
    }

    fn build(grid: Grid2D, mut alpha: Vec<T>, mut beta: Vec<T>, tol: f64) -> Result<Self> {
        if alpha.len() != grid.tokens() || beta.len() != grid.tokens() {
            return dim_err(format!(
                "decay field for {}x{} grid needs {} entries per axis, got {} and {}",
                grid.height(),
                grid.width(),
                grid.tokens(),
                alpha.len(),
                beta.len()
            ));
        }
        check_unit_interval(&mut alpha, "alpha", tol)?;
        check_unit_interval(&mut beta, "beta", tol)?;
        Ok(Self { grid, alpha, beta })
    }

    pub fn constant(grid: Grid2D, alpha: T, beta: T) -> Result<Self> {
        Self::new(grid, vec![alpha; grid.tokens()], vec![beta; grid.tokens()])
    }

    #[inline]
    pub fn grid(&self) -> Grid2D {
        self.grid
    }

    #[inline]
    pub fn alpha(&self, i: usize, j: usize) -> T {
        self.alpha[self.grid.index(i, j)]
    }

    #[inline]
    pub fn beta(&self, i: usize, j: usize) -> T {
        self.beta[self.grid.index(i, j)]
    }

    pub fn alpha_values(&self) -> &[T] {
        &self.alpha
    }

    pub fn beta_values(&self) -> &[T] {
        &self.beta
    }

    /// Horizontal decays of row `i`, indexed by column.
    pub fn alpha_row(&self, i: usize) -> &[T] {
        let w = self.grid.width();
        &self.alpha[i * w..(i + 1) * w]
    }

    /// Vertical decays of column `j`, indexed by row.
    pub fn beta_col(&self, j: usize) -> Vec<T> {
        (0..self.grid.height()).map(|i| self.beta(i, j)).collect()
    }

    pub fn cast<U: Real>(&self) -> DecayField2D<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::from_wide(x.wide())).collect();
        DecayField2D {
            grid: self.grid,
            alpha: conv(&self.alpha),
            beta: conv(&self.beta),
        }
    }
}

/// Three-axis grid `H×W×Dp`; token `(i, j, k)` has linear index
/// `(i·W + j)·Dp + k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Grid3D {
    pub height: usize,
    pub width: usize,
    pub depth: usize,
}

impl Grid3D {
    pub fn new(height: usize, width: usize, depth: usize) -> Result<Self> {
        if height == 0 || width == 0 || depth == 0 {
            return dim_err(format!(
                "3D grid must be at least 1x1x1, got {height}x{width}x{depth}"
            ));
        }
        Ok(Self {
            height,
            width,
            depth,
        })
    }

    pub fn tokens(&self) -> usize {
        self.height * self.width * self.depth
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.width + j) * self.depth + k
    }
}

/// Decay factors for the 3D mask: `alpha` along width, `beta` along height,
/// `gamma` along depth. Each entry attenuates the step *into* its token along
/// its own axis.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayField3D<T> {
    grid: Grid3D,
    alpha: Vec<T>,
    beta: Vec<T>,
    gamma: Vec<T>,
}

impl<T: Real> DecayField3D<T> {
    pub fn new(grid: Grid3D, alpha: Vec<T>, beta: Vec<T>, gamma: Vec<T>) -> Result<Self> {
        let n = grid.tokens();
        if alpha.len() != n || beta.len() != n || gamma.len() != n {
            return dim_err(format!("3D decay field needs {n} entries per axis"));
        }
        let (mut alpha, mut beta, mut gamma) = (alpha, beta, gamma);
        check_unit_interval(&mut alpha, "alpha", 0.0)?;
        check_unit_interval(&mut beta, "beta", 0.0)?;
        check_unit_interval(&mut gamma, "gamma", 0.0)?;
        Ok(Self {
            grid,
            alpha,
            beta,
            gamma,
        })
    }

    pub fn constant(grid: Grid3D, value: T) -> Result<Self> {
        let n = grid.tokens();
        Self::new(grid, vec![value; n], vec![value; n], vec![value; n])
    }

    pub fn grid(&self) -> Grid3D {
        self.grid
    }

    #[inline]
    pub fn alpha(&self, i: usize, j: usize, k: usize) -> T {
        self.alpha[self.grid.index(i, j, k)]
    }

    #[inline]
    pub fn beta(&self, i: usize, j: usize, k: usize) -> T {
        self.beta[self.grid.index(i, j, k)]
    }

    #[inline]
    pub fn gamma(&self, i: usize, j: usize, k: usize) -> T {
        self.gamma[self.grid.index(i, j, k)]
    }
}

/// `H×W×C` token features, channel fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenField<T> {
    grid: Grid2D,
    channels: usize,
    data: Vec<T>,
}

impl<T: Real> TokenField<T> {
    pub fn new(grid: Grid2D, channels: usize, data: Vec<T>) -> Result<Self> {
        if channels == 0 {
            return dim_err("token field needs at least one channel");
        }
        if data.len() != grid.tokens() * channels {
            return dim_err(format!(
                "token field {}x{}x{channels} needs {} entries, got {}",
                grid.height(),
                grid.width(),
                grid.tokens() * channels,
                data.len()
            ));
        }
        Ok(Self {
            grid,
            channels,
            data,
        })
    }

    pub fn zeros(grid: Grid2D, channels: usize) -> Self {
        Self {
            grid,
            channels,
            data: vec![T::zero(); grid.tokens() * channels],
        }
    }

    /// Views an `N×C` matrix as a field on `grid`.
    pub fn from_matrix(grid: Grid2D, m: Matrix<T>) -> Result<Self> {
        if m.rows() != grid.tokens() {
            return dim_err(format!(
                "matrix has {} rows, grid has {} tokens",
                m.rows(),
                grid.tokens()
            ));
        }
        let channels = m.cols();
        Self::new(grid, channels, m.into_vec())
    }

    pub fn to_matrix(&self) -> Matrix<T> {
        Matrix {
            rows: self.grid.tokens(),
            cols: self.channels,
            data: self.data.clone(),
        }
    }

    pub fn into_matrix(self) -> Matrix<T> {
        Matrix {
            rows: self.grid.tokens(),
            cols: self.channels,
            data: self.data,
        }
    }

    #[inline]
    pub fn grid(&self) -> Grid2D {
        self.grid
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, c: usize) -> T {
        self.data[self.grid.index(i, j) * self.channels + c]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Frobenius inner product.
    pub fn dot(&self, other: &TokenField<T>) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a.wide() * b.wide())
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn max_abs_diff(&self, other: &TokenField<T>) -> f64 {
        if self.grid != other.grid || self.channels != other.channels {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs().wide())
            .fold(0.0, f64::max)
    }

    pub(crate) fn ensure_compatible(&self, other: &TokenField<T>, what: &str) -> Result<()> {
        self.grid.ensure_same(&other.grid, what)?;
        if self.channels != other.channels {
            return dim_err(format!(
                "{what}: {} channels vs {}",
                self.channels, other.channels
            ));
        }
        Ok(())
    }
}

fn check_factor<T: Real>(m: &Matrix<T>, size: usize, what: &str) -> Result<()> {
    if m.rows() != size || m.cols() != size {
        return dim_err(format!("{what} must be {size}x{size}, got {}x{}", m.rows(), m.cols()));
    }
    for r in 0..size {
        if m.get(r, r) != T::one() {
            return Err(Error::Validation(format!("{what} diagonal must be 1")));
        }
        for c in 0..size {
            let v = m.get(r, c);
            if v != m.get(c, r) {
                return Err(Error::Validation(format!("{what} must be symmetric")));
            }
            if !(v >= T::zero() && v <= T::one()) {
                return Err(Error::Validation(format!("{what} entries must lie in [0, 1]")));
            }
        }
    }
    Ok(())
}

/// Per-row segment-product matrices: `A^i[j, l]` is the product of row `i`'s
/// horizontal decays strictly after `min(j, l)` up to `max(j, l)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RowFactorSet<T> {
    grid: Grid2D,
    matrices: Vec<Matrix<T>>,
}

impl<T: Real> RowFactorSet<T> {
    /// Validates shape, symmetry, unit diagonal and range.
    pub fn new(grid: Grid2D, matrices: Vec<Matrix<T>>) -> Result<Self> {
        if matrices.len() != grid.height() {
            return dim_err(format!(
                "row factor set needs {} matrices, got {}",
                grid.height(),
                matrices.len()
            ));
        }
        for m in &matrices {
            check_factor(m, grid.width(), "row factor")?;
        }
        Ok(Self { grid, matrices })
    }

    pub(crate) fn new_unchecked(grid: Grid2D, matrices: Vec<Matrix<T>>) -> Self {
        Self { grid, matrices }
    }

    pub fn grid(&self) -> Grid2D {
        self.grid
    }

    /// `A^i` (0-based row index).
    pub fn matrix(&self, i: usize) -> &Matrix<T> {
        &self.matrices[i]
    }

    pub fn matrices(&self) -> &[Matrix<T>] {
        &self.matrices
    }
}

/// Per-column segment-product matrices: `B^l[i, k]` is the product of column
/// `l`'s vertical decays strictly after `min(i, k)` up to `max(i, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ColFactorSet<T> {
    grid: Grid2D,
    matrices: Vec<Matrix<T>>,
}

impl<T: Real> ColFactorSet<T> {
    pub fn new(grid: Grid2D, matrices: Vec<Matrix<T>>) -> Result<Self> {
        if matrices.len() != grid.width() {
            return dim_err(format!(
                "column factor set needs {} matrices, got {}",
                grid.width(),
                matrices.len()
            ));
        }
        for m in &matrices {
            check_factor(m, grid.height(), "column factor")?;
        }
        Ok(Self { grid, matrices })
    }

    pub(crate) fn new_unchecked(grid: Grid2D, matrices: Vec<Matrix<T>>) -> Self {
        Self { grid, matrices }
    }

    pub fn grid(&self) -> Grid2D {
        self.grid
    }

    /// `B^l` (0-based column index).
    pub fn matrix(&self, l: usize) -> &Matrix<T> {
        &self.matrices[l]
    }

    pub fn matrices(&self) -> &[Matrix<T>] {
        &self.matrices
    }
}

/// Parameters of the scalar-decay state space recurrence
/// `h_i = a_i h_{i-1} + B_iᵀ x_i`, `y_i = C_i h_i`.
///
/// `a[0]` is carried for shape fidelity but never read: with `h_{-1} = 0`
/// the first decay multiplies nothing.
#[derive(Debug, Clone, PartialEq)]
pub struct SSM1DParams<T> {
    a: Vec<T>,
    b: Matrix<T>,
    c: Matrix<T>,
}

impl<T: Real> SSM1DParams<T> {
    pub fn new(a: Vec<T>, b: Matrix<T>, c: Matrix<T>) -> Result<Self> {
        let n = a.len();
        if n == 0 {
            return dim_err("sequence length must be at least 1");
        }
        if b.rows() != n || c.rows() != n {
            return dim_err(format!(
                "B and C need {n} rows, got {} and {}",
                b.rows(),
                c.rows()
            ));
        }
        if b.cols() != c.cols() || b.cols() == 0 {
            return dim_err(format!(
                "B and C must share a positive state size, got {} and {}",
                b.cols(),
                c.cols()
            ));
        }
        let mut a = a;
        check_unit_interval(&mut a, "a", 0.0)?;
        Ok(Self { a, b, c })
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.b.cols()
    }

    pub fn a(&self) -> &[T] {
        &self.a
    }

    pub fn b(&self) -> &Matrix<T> {
        &self.b
    }

    pub fn c(&self) -> &Matrix<T> {
        &self.c
    }
}

/// Query, key and value operands over a grid of `N = H·W` tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionInputs<T> {
    grid: Grid2D,
    q: Matrix<T>,
    k: Matrix<T>,
    v: Matrix<T>,
}

impl<T: Real> AttentionInputs<T> {
    pub fn new(grid: Grid2D, q: Matrix<T>, k: Matrix<T>, v: Matrix<T>) -> Result<Self> {
        let n = grid.tokens();
        if q.rows() != n || k.rows() != n || v.rows() != n {
            return dim_err(format!(
                "Q, K, V need {n} rows, got {}, {}, {}",
                q.rows(),
                k.rows(),
                v.rows()
            ));
        }
        if q.cols() != k.cols() || q.cols() == 0 || v.cols() == 0 {
            return dim_err(format!(
                "Q and K must share a positive width (got {} and {}), V needs >= 1 column",
                q.cols(),
                k.cols()
            ));
        }
        Ok(Self { grid, q, k, v })
    }

    pub fn grid(&self) -> Grid2D {
        self.grid
    }

    pub fn q(&self) -> &Matrix<T> {
        &self.q
    }

    pub fn k(&self) -> &Matrix<T> {
        &self.k
    }

    pub fn v(&self) -> &Matrix<T> {
        &self.v
    }

    pub fn key_dim(&self) -> usize {
        self.q.cols()
    }

    pub fn value_dim(&self) -> usize {
        self.v.cols()
    }
}
