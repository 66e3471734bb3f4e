//! Reverse-mode gradients of the polyline masked multiply, and a
//! finite-difference checker.
//!
//! For one line with decays `d` and symmetric segment matrix `S`, the
//! derivative of `Σ_j ⟨u_j, (S·v)_j⟩` with respect to `d_n` (`n ≥ 1`) is
//!
//! ```text
//! ⟨fwd(u)_{n-1}, bwd(v)_n⟩ + ⟨fwd(v)_{n-1}, bwd(u)_n⟩
//! ```
//!
//! where `fwd`/`bwd` are the lower/upper 1-semiseparable scans. Each side
//! collects the segment products that stop just before or start just after
//! factor `n`, so no division is needed and zero decays are safe. `d_0` never
//! enters `S` and gets gradient zero.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matvec::{polyline_matvec, stage, Axis, MaskVariant, MatvecConfig, MatvecMode};
use crate::real::Real;
use crate::scan::{backward_scan, forward_scan};
use crate::types::{DecayField2D, Matrix, TokenField};

#[derive(Debug, Clone, PartialEq)]
pub struct PolylineGrads<T> {
    pub dx: TokenField<T>,
    /// `H×W`, same layout as the field.
    pub dalpha: Matrix<T>,
    pub dbeta: Matrix<T>,
}

/// Gradient of `Σ_j ⟨u_j, (S·v)_j⟩` with respect to the decays of one line.
fn line_grad<T: Real>(d: &[T], u: &[T], v: &[T], c: usize, out: &mut [T]) {
    let n = d.len();
    let mut fu = vec![T::zero(); n * c];
    let mut fv = vec![T::zero(); n * c];
    let mut bu = vec![T::zero(); n * c];
    let mut bv = vec![T::zero(); n * c];
    forward_scan(d, u, c, &mut fu);
    forward_scan(d, v, c, &mut fv);
    backward_scan(d, u, c, &mut bu);
    backward_scan(d, v, c, &mut bv);
    out[0] = T::zero();
    for t in 1..n {
        let mut acc = T::zero();
        for ch in 0..c {
            acc += fu[(t - 1) * c + ch] * bv[t * c + ch] + fv[(t - 1) * c + ch] * bu[t * c + ch];
        }
        out[t] = acc;
    }
}

/// Per-token decay gradients for every line along `axis`, in grid order.
fn axis_grad<T: Real>(decays: &[T], u: &[T], v: &[T], axis: Axis, c: usize) -> Vec<T> {
    let n = axis.len;
    let mut lines = vec![T::zero(); axis.lines() * n];
    lines.par_chunks_mut(n).enumerate().for_each(|(line, out)| {
        let mut ul = vec![T::zero(); n * c];
        let mut vl = vec![T::zero(); n * c];
        let mut dl = vec![T::zero(); n];
        for t in 0..n {
            let src = axis.offset(line, t);
            ul[t * c..(t + 1) * c].copy_from_slice(&u[src * c..(src + 1) * c]);
            vl[t * c..(t + 1) * c].copy_from_slice(&v[src * c..(src + 1) * c]);
            dl[t] = decays[src];
        }
        line_grad(&dl, &ul, &vl, c, out);
    });
    let mut grid_order = vec![T::zero(); lines.len()];
    for line in 0..axis.lines() {
        for t in 0..n {
            grid_order[axis.offset(line, t)] = lines[line * n + t];
        }
    }
    grid_order
}

struct Partial<T> {
    dx: Vec<T>,
    dalpha: Vec<T>,
    dbeta: Vec<T>,
}

fn v2h_backward<T: Real>(decay: &DecayField2D<T>, x: &[T], dy: &[T], c: usize) -> Partial<T> {
    let grid = decay.grid();
    let z = stage(decay, x, c, true);
    let dz = stage(decay, dy, c, false);
    Partial {
        dx: stage(decay, &dz, c, true),
        dalpha: axis_grad(decay.alpha_values(), dy, &z, Axis::horizontal(grid), c),
        dbeta: axis_grad(decay.beta_values(), &dz, x, Axis::vertical(grid), c),
    }
}

fn h2v_backward<T: Real>(decay: &DecayField2D<T>, x: &[T], dy: &[T], c: usize) -> Partial<T> {
    let grid = decay.grid();
    let z = stage(decay, x, c, false);
    let dz = stage(decay, dy, c, true);
    Partial {
        dx: stage(decay, &dz, c, false),
        dalpha: axis_grad(decay.alpha_values(), &dz, x, Axis::horizontal(grid), c),
        dbeta: axis_grad(decay.beta_values(), dy, &z, Axis::vertical(grid), c),
    }
}

/// Gradients of `⟨dy, M·x⟩` with respect to `x`, `alpha` and `beta`, where
/// `M` is the mask selected by `variant`.
pub fn polyline_matvec_backward<T: Real>(
    decay: &DecayField2D<T>,
    x: &TokenField<T>,
    dy: &TokenField<T>,
    variant: MaskVariant,
) -> Result<PolylineGrads<T>> {
    decay.grid().ensure_same(&x.grid(), "polyline_matvec_backward")?;
    x.ensure_compatible(dy, "polyline_matvec_backward")?;
    let c = x.channels();
    let (xs, dys) = (x.as_slice(), dy.as_slice());
    let p = match variant {
        MaskVariant::V2H => v2h_backward(decay, xs, dys, c),
        MaskVariant::H2V => h2v_backward(decay, xs, dys, c),
        MaskVariant::Combined2D => {
            let mut a = v2h_backward(decay, xs, dys, c);
            let b = h2v_backward(decay, xs, dys, c);
            for (dst, src) in [(&mut a.dx, &b.dx), (&mut a.dalpha, &b.dalpha), (&mut a.dbeta, &b.dbeta)] {
                for (u, &w) in dst.iter_mut().zip(src) {
                    *u += w;
                }
            }
            a
        }
    };
    let grid = decay.grid();
    Ok(PolylineGrads {
        dx: TokenField::new(grid, c, p.dx)?,
        dalpha: Matrix::new(grid.height(), grid.width(), p.dalpha)?,
        dbeta: Matrix::new(grid.height(), grid.width(), p.dbeta)?,
    })
}

/// One block of scalar inputs to a finite-difference check.
#[derive(Debug, Clone)]
pub struct FdSlot {
    pub name: String,
    pub values: Vec<f64>,
    pub analytic: Vec<f64>,
    /// Domain of every coordinate; steps that would leave it become
    /// one-sided differences pointing inward.
    pub bounds: Option<(f64, f64)>,
}

impl FdSlot {
    pub fn new(name: impl Into<String>, values: Vec<f64>, analytic: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            values,
            analytic,
            bounds: None,
        }
    }

    pub fn bounded(mut self, low: f64, high: f64) -> Self {
        self.bounds = Some((low, high));
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdSlotReport {
    pub name: String,
    pub max_rel_error: f64,
    /// Coordinate with the largest error.
    pub worst_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub h: f64,
    pub slots: Vec<FdSlotReport>,
}

impl FdReport {
    pub fn max_rel_error(&self) -> f64 {
        self.slots.iter().map(|s| s.max_rel_error).fold(0.0, f64::max)
    }

    pub fn slot(&self, name: &str) -> Option<&FdSlotReport> {
        self.slots.iter().find(|s| s.name == name)
    }
}

/// `|a - b| / max(1, |a|, |b|)`: relative for large values, absolute near 0.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}

/// Compares `analytic` gradients in each slot against finite differences of
/// the scalar function `f`, which receives the current values of all slots.
///
/// Interior coordinates use central differences `(f(p+h) - f(p-h)) / 2h`.
pub fn finite_difference_check<F>(f: F, slots: &[FdSlot], h: f64) -> Result<FdReport>
where
    F: Fn(&[Vec<f64>]) -> Result<f64>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Validation(format!("step must be positive, got {h}")));
    }
    for s in slots {
        if s.values.len() != s.analytic.len() {
            return Err(Error::Dimension(format!(
                "slot {}: {} values, {} gradients",
                s.name,
                s.values.len(),
                s.analytic.len()
            )));
        }
    }
    let eval = |p: &[Vec<f64>]| -> Result<f64> {
        let v = f(p)?;
        if !v.is_finite() {
            return Err(Error::Numeric(format!("forward value {v} is not finite")));
        }
        Ok(v)
    };
    let mut point: Vec<Vec<f64>> = slots.iter().map(|s| s.values.clone()).collect();
    let base = eval(&point)?;
    let mut reports = Vec::with_capacity(slots.len());
    for (si, slot) in slots.iter().enumerate() {
        let mut worst = (0.0, 0);
        for k in 0..slot.values.len() {
            let v = slot.values[k];
            let (lo, hi) = slot.bounds.unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
            let mut at = |val: f64| -> Result<f64> {
                point[si][k] = val;
                let r = eval(&point);
                point[si][k] = v;
                r
            };
            let numeric = if v - h < lo {
                (at(v + h)? - base) / h
            } else if v + h > hi {
                (base - at(v - h)?) / h
            } else {
                (at(v + h)? - at(v - h)?) / (2.0 * h)
            };
            let err = relative_error(slot.analytic[k], numeric);
            if err > worst.0 || err.is_nan() {
                worst = (err, k);
            }
        }
        reports.push(FdSlotReport {
            name: slot.name.clone(),
            max_rel_error: worst.0,
            worst_index: worst.1,
        });
    }
    Ok(FdReport { h, slots: reports })
}

/// Checks [`polyline_matvec_backward`] against finite differences of
/// `⟨dy, M·x⟩` in `x`, `alpha` and `beta`.
pub fn check_polyline_gradients(
    decay: &DecayField2D<f64>,
    x: &TokenField<f64>,
    dy: &TokenField<f64>,
    variant: MaskVariant,
    h: f64,
) -> Result<FdReport> {
    let g = polyline_matvec_backward(decay, x, dy, variant)?;
    let grid = decay.grid();
    let c = x.channels();
    let cfg = MatvecConfig::default();
    let f = |p: &[Vec<f64>]| -> Result<f64> {
        let d = DecayField2D::new(grid, p[1].clone(), p[2].clone())?;
        let xf = TokenField::new(grid, c, p[0].clone())?;
        Ok(polyline_matvec(&d, &xf, variant, MatvecMode::Chunkwise, &cfg)?.dot(dy))
    };
    let slots = [
        FdSlot::new("x", x.as_slice().to_vec(), g.dx.as_slice().to_vec()),
        FdSlot::new("alpha", decay.alpha_values().to_vec(), g.dalpha.as_slice().to_vec()).bounded(0.0, 1.0),
        FdSlot::new("beta", decay.beta_values().to_vec(), g.dbeta.as_slice().to_vec()).bounded(0.0, 1.0),
    ];
    finite_difference_check(f, &slots, h)
}
