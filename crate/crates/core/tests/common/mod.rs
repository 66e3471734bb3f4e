//! Element-by-element oracles shared by the integration tests. None of these
//! call library builders.

#![allow(dead_code)]

use polypath_core::{DecayField2D, DecayField3D, Matrix};
use proptest::prelude::*;

/// Product of `v(t)` for `t` in `(min(a,b), max(a,b)]`.
pub fn span_product(a: usize, b: usize, v: impl Fn(usize) -> f64) -> f64 {
    let mut p = 1.0;
    for t in a.min(b) + 1..=a.max(b) {
        p *= v(t);
    }
    p
}

/// V2H weight from input `(k,l)` to output `(i,j)`: horizontal along row `i`
/// between columns `j` and `l`, vertical along column `l` between rows `i`
/// and `k`.
pub fn v2h_entry(d: &DecayField2D<f64>, (i, j): (usize, usize), (k, l): (usize, usize)) -> f64 {
    span_product(j, l, |t| d.alpha(i, t)) * span_product(i, k, |t| d.beta(t, l))
}

pub fn v2h_mask(d: &DecayField2D<f64>) -> Matrix<f64> {
    let g = d.grid();
    let n = g.tokens();
    Matrix::from_fn(n, n, |u, v| v2h_entry(d, g.coords(u), g.coords(v)))
}

pub fn h2v_mask(d: &DecayField2D<f64>) -> Matrix<f64> {
    let g = d.grid();
    let n = g.tokens();
    Matrix::from_fn(n, n, |u, v| v2h_entry(d, g.coords(v), g.coords(u)))
}

pub fn combined_mask(d: &DecayField2D<f64>) -> Matrix<f64> {
    let g = d.grid();
    let n = g.tokens();
    Matrix::from_fn(n, n, |u, v| {
        v2h_entry(d, g.coords(u), g.coords(v)) + v2h_entry(d, g.coords(v), g.coords(u))
    })
}

/// 3D weight: depth first, then height, then width.
pub fn mask_3d_entry(d: &DecayField3D<f64>, (i, j, k): (usize, usize, usize), (l, m, n): (usize, usize, usize)) -> f64 {
    span_product(k, n, |t| d.gamma(l, m, t)) * span_product(i, l, |t| d.beta(t, m, k)) * span_product(j, m, |t| d.alpha(i, t, k))
}

/// `L[i,j] = a_{j+1}·…·a_i` below the diagonal, 1 on it, 0 above.
pub fn lower_mask(a: &[f64]) -> Matrix<f64> {
    let n = a.len();
    Matrix::from_fn(n, n, |i, j| if i >= j { span_product(j, i, |t| a[t]) } else { 0.0 })
}

pub fn symmetric_mask(a: &[f64]) -> Matrix<f64> {
    let n = a.len();
    Matrix::from_fn(n, n, |i, j| span_product(i, j, |t| a[t]))
}

/// `m · x` with `x` stored row-major as `n × c`.
pub fn apply(m: &Matrix<f64>, x: &[f64], c: usize) -> Vec<f64> {
    let (rows, n) = (m.rows(), m.cols());
    assert_eq!(x.len(), n * c);
    let mut y = vec![0.0; rows * c];
    for u in 0..rows {
        for v in 0..n {
            let w = m.get(u, v);
            for ch in 0..c {
                y[u * c + ch] += w * x[v * c + ch];
            }
        }
    }
    y
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Decay values in `[0, 1]`, with exact 0 and 1 over-represented.
pub fn decay_value() -> impl Strategy<Value = f64> {
    prop_oneof![
        1 => Just(0.0),
        1 => Just(1.0),
        6 => 0.0..=1.0f64,
    ]
}

/// `(H, W, alpha, beta)` with `H, W` in `1..=max_side`.
pub fn field_parts(max_side: usize) -> impl Strategy<Value = (usize, usize, Vec<f64>, Vec<f64>)> {
    (1..=max_side, 1..=max_side).prop_flat_map(|(h, w)| {
        let n = h * w;
        (
            Just(h),
            Just(w),
            proptest::collection::vec(decay_value(), n),
            proptest::collection::vec(decay_value(), n),
        )
    })
}
