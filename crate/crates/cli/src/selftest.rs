//! The invariant suite behind `polypath selftest`.
//!
//! Every check compares a fast or factored computation against an
//! independent reference and records the worst residual with the seed and
//! index where it occurred. Wide runs use absolute residuals; standard runs
//! divide by `max(1, max|reference|)`. Gradient checks always run wide.

use std::fmt::Write as _;

use polypath_core::attention::{check_ppmla_gradients, ppmcca_first_term, ppmda, ppmla};
use polypath_core::grad::check_polyline_gradients;
use polypath_core::mask::{
    assemble_block_factors, build_col_factors, build_polyline_mask_2d, build_polyline_mask_3d,
    build_polyline_mask_h2v, build_polyline_mask_v2h, build_row_factors, DenseCap,
};
use polypath_core::rng::{seeded_matrix, seeded_random_field, seeded_random_field_3d, seeded_token_field};
use polypath_core::scan::{masked_linear_attention_1d, ss1_matvec_chunkwise, ss1_matvec_sequential, ssm_scan_1d};
use polypath_core::{
    polyline_matvec, polyline_matvec_3d, AttentionInputs, ChunkConfig, DecayField2D, Grid2D, Grid3D, MaskVariant,
    MatvecConfig, MatvecMode, Real, SSM1DParams, TokenField,
};

use crate::Precision;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub residual: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// Where the worst residual occurred.
    pub detail: String,
}

/// Largest `|a - b|` and its index.
fn max_diff<T: Real>(a: &[T], b: &[T]) -> (f64, usize) {
    let mut worst = (0.0, 0);
    for (i, (&x, &y)) in a.iter().zip(b).enumerate() {
        let d = (x - y).abs().wide();
        if d > worst.0 || d.is_nan() {
            worst = (d, i);
        }
    }
    if a.len() != b.len() {
        return (f64::INFINITY, a.len().min(b.len()));
    }
    worst
}

fn max_abs<T: Real>(a: &[T]) -> f64 {
    a.iter().map(|v| v.abs().wide()).fold(0.0, f64::max)
}

struct Check {
    name: &'static str,
    tolerance: f64,
    worst: f64,
    detail: String,
}

impl Check {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Self {
            name,
            tolerance,
            worst: 0.0,
            detail: String::new(),
        }
    }

    fn record(&mut self, residual: f64, detail: impl FnOnce() -> String) {
        if self.worst.is_nan() {
            return;
        }
        if residual > self.worst || residual.is_nan() || self.detail.is_empty() {
            self.worst = residual;
            self.detail = detail();
        }
    }

    fn fail(&mut self, detail: String) {
        self.worst = f64::INFINITY;
        self.detail = detail;
    }

    fn finish(self) -> CheckResult {
        CheckResult {
            name: self.name,
            residual: self.worst,
            tolerance: self.tolerance,
            passed: self.worst <= self.tolerance,
            detail: self.detail,
        }
    }
}

struct Suite {
    relative: bool,
    fault: bool,
    results: Vec<CheckResult>,
}

impl Suite {
    /// Residual of `got` against `want`, scaled in standard mode.
    fn residual<T: Real>(&self, got: &[T], want: &[T]) -> (f64, usize) {
        let (d, i) = max_diff(got, want);
        let scale = if self.relative { max_abs(want).max(1.0) } else { 1.0 };
        (d / scale, i)
    }

    fn tol(&self, wide: f64, standard: f64) -> f64 {
        if self.relative {
            standard
        } else {
            wide
        }
    }
}

const GRIDS: [(usize, usize); 8] = [(1, 1), (1, 5), (4, 1), (2, 3), (3, 3), (4, 5), (8, 8), (7, 12)];
const SEEDS: [u64; 4] = [1, 2, 3, 4];

fn decomposition<T: Real>(s: &mut Suite) {
    let mut c = Check::new("decomposition identity", s.tol(1e-12, 1e-4));
    let mut t = Check::new("transpose identity (exact)", 0.0);
    let mut sym = Check::new("L2D symmetric, diagonal 2 (exact)", 0.0);
    for &(h, w) in &GRIDS {
        let grid = Grid2D::new(h, w).expect("valid grid");
        for &seed in &SEEDS {
            let d = seeded_random_field::<T>(grid, seed, 0.0, 1.0).expect("valid bounds");
            let l = build_polyline_mask_v2h(&d, DenseCap::default()).expect("within cap");
            let b = assemble_block_factors(&build_row_factors(&d), &build_col_factors(&d)).expect("same grid");
            let prod = b.lh.matmul(&b.lv).expect("square");
            let had = b.lh_hat.hadamard(&b.lv_hat).expect("square");
            for (form, m) in [("LH*LV", &prod), ("LHhat.LVhat", &had)] {
                let (r, i) = s.residual(m.as_matrix().as_slice(), l.as_matrix().as_slice());
                let n = grid.tokens();
                c.record(r, || format!("{h}x{w} seed {seed} {form} entry ({}, {})", i / n, i % n));
            }
            let lt = build_polyline_mask_h2v(&d, DenseCap::default()).expect("within cap");
            let (r, i) = max_diff(lt.as_matrix().as_slice(), l.transpose().as_matrix().as_slice());
            t.record(r, || format!("{h}x{w} seed {seed} index {i}"));
            let l2 = build_polyline_mask_2d(&d, DenseCap::default()).expect("within cap");
            let (r, i) = max_diff(l2.as_matrix().as_slice(), l2.transpose().as_matrix().as_slice());
            sym.record(r, || format!("{h}x{w} seed {seed} index {i}"));
            for u in 0..l2.n() {
                let r = (l2.get(u, u).wide() - 2.0).abs();
                sym.record(r, || format!("{h}x{w} seed {seed} diagonal {u}"));
            }
        }
    }
    s.results.extend([c.finish(), t.finish(), sym.finish()]);
}

fn worked_example<T: Real>(s: &mut Suite) {
    let mut c = Check::new("worked 4x4 path weight (exact)", 0.0);
    let grid = Grid2D::square(4).expect("valid grid");
    // Dyadic factors keep every partial product exact.
    let vals: Vec<T> = (0..32).map(|k| T::from_wide(((k * 5) % 8 + 1) as f64 / 8.0)).collect();
    let d = DecayField2D::new(grid, vals[..16].to_vec(), vals[16..].to_vec()).expect("in range");
    let want = d.alpha(0, 1) * d.alpha(0, 2) * d.alpha(0, 3) * d.beta(1, 3) * d.beta(2, 3) * d.beta(3, 3);
    let l = build_polyline_mask_v2h(&d, DenseCap::default()).expect("within cap");
    c.record((l.get(0, 15) - want).abs().wide(), || "mask entry ((0,0),(3,3))".into());
    let mut x = TokenField::<T>::zeros(grid, 1);
    x.as_mut_slice()[15] = T::one();
    for mode in MatvecMode::ALL {
        let y = polyline_matvec(&d, &x, MaskVariant::V2H, mode, &MatvecConfig::default()).expect("valid");
        c.record((y.as_slice()[0] - want).abs().wide(), || format!("{} matvec output (0,0)", mode.name()));
    }
    s.results.push(c.finish());
}

fn matvec_equivalence<T: Real>(s: &mut Suite) {
    let mut c = Check::new("matvec modes match dense", s.tol(1e-12, 1e-4));
    let mut adj = Check::new("adjoint identity", s.tol(1e-12, 1e-5));
    let cfg = MatvecConfig::default();
    for &(h, w) in &GRIDS {
        let grid = Grid2D::new(h, w).expect("valid grid");
        for &seed in &SEEDS {
            let ch = 1 + (seed as usize % 3);
            let d = seeded_random_field::<T>(grid, seed, 0.0, 1.0).expect("valid bounds");
            let x = seeded_token_field::<T>(grid, ch, seed + 100).expect("valid");
            let yv = seeded_token_field::<T>(grid, ch, seed + 200).expect("valid");
            for variant in MaskVariant::ALL {
                let dense = polyline_matvec(&d, &x, variant, MatvecMode::Dense, &cfg).expect("within cap");
                for mode in [MatvecMode::Blockwise, MatvecMode::Chunkwise] {
                    let mut y = polyline_matvec(&d, &x, variant, mode, &cfg).expect("valid");
                    if s.fault && mode == MatvecMode::Chunkwise {
                        let v = &mut y.as_mut_slice()[0];
                        *v = -*v;
                    }
                    let (r, i) = s.residual(y.as_slice(), dense.as_slice());
                    c.record(r, || {
                        format!(
                            "{h}x{w} seed {seed} {} {} token {} channel {}",
                            variant.name(),
                            mode.name(),
                            i / ch,
                            i % ch
                        )
                    });
                }
            }
            let fx = polyline_matvec(&d, &x, MaskVariant::V2H, MatvecMode::Chunkwise, &cfg).expect("valid");
            let gy = polyline_matvec(&d, &yv, MaskVariant::H2V, MatvecMode::Chunkwise, &cfg).expect("valid");
            let r = (fx.dot(&yv) - x.dot(&gy)).abs() / (x.norm() * yv.norm()).max(f64::MIN_POSITIVE);
            adj.record(r, || format!("{h}x{w} seed {seed}"));
        }
    }
    s.results.extend([c.finish(), adj.finish()]);
}

fn matvec_3d<T: Real>(s: &mut Suite) {
    let mut c = Check::new("3D matvec matches dense", s.tol(1e-12, 1e-4));
    for (h, w, dp) in [(3, 3, 3), (2, 4, 3), (1, 1, 6)] {
        let g = Grid3D::new(h, w, dp).expect("valid grid");
        for &seed in &SEEDS {
            let d = seeded_random_field_3d::<T>(g, seed, 0.0, 1.0).expect("valid bounds");
            let x = seeded_matrix::<T>(g.tokens(), 2, seed + 7, -1.0, 1.0);
            let dense = build_polyline_mask_3d(&d, DenseCap::default()).expect("within cap").apply(&x).expect("shape");
            for mode in [MatvecMode::Blockwise, MatvecMode::Chunkwise] {
                let y = polyline_matvec_3d(&d, &x, mode, &MatvecConfig::default()).expect("valid");
                let (r, i) = s.residual(y.as_slice(), dense.as_slice());
                c.record(r, || format!("{h}x{w}x{dp} seed {seed} {} index {i}", mode.name()));
            }
        }
    }
    s.results.push(c.finish());
}

fn scans<T: Real>(s: &mut Suite) {
    let mut chunk = Check::new("chunk-size invariance", s.tol(1e-12, 1e-5));
    let mut dual = Check::new("state-space duality", s.tol(1e-10, 1e-4));
    for &seed in &SEEDS {
        let n = 257;
        let a = seeded_matrix::<T>(n, 1, seed, 0.0, 1.0).into_vec();
        let x = seeded_matrix::<T>(n, 4, seed + 1, -1.0, 1.0);
        let seq = ss1_matvec_sequential(&a, &x).expect("shape");
        for q in [1, 2, 7, 64, n] {
            let y = ss1_matvec_chunkwise(&a, &x, ChunkConfig::new(q).expect("positive")).expect("shape");
            let (r, i) = s.residual(y.as_slice(), seq.as_slice());
            chunk.record(r, || format!("seed {seed} chunk {q} row {}", i / 4));
        }
        let (len, dim, ch) = (64, 8, 4);
        let params = SSM1DParams::new(
            seeded_matrix::<T>(len, 1, seed + 2, 0.0, 1.0).into_vec(),
            seeded_matrix(len, dim, seed + 3, -1.0, 1.0),
            seeded_matrix(len, dim, seed + 4, -1.0, 1.0),
        )
        .expect("valid params");
        let xs = seeded_matrix::<T>(len, ch, seed + 5, -1.0, 1.0);
        let rec = ssm_scan_1d(&params, &xs).expect("shape");
        let att = masked_linear_attention_1d(&params, &xs).expect("shape");
        let (r, i) = s.residual(rec.as_slice(), att.as_slice());
        dual.record(r, || format!("seed {seed} row {}", i / ch));
    }
    s.results.extend([chunk.finish(), dual.finish()]);
}

fn attention<T: Real>(s: &mut Suite) {
    let mut c = Check::new("attention fast paths match dense", s.tol(1e-10, 1e-4));
    let cfg = MatvecConfig::default();
    for (h, w, dim, ch) in [(3, 4, 2, 3), (6, 5, 4, 2), (8, 8, 3, 3)] {
        let grid = Grid2D::new(h, w).expect("valid grid");
        let n = grid.tokens();
        for &seed in &SEEDS[..2] {
            let d = seeded_random_field::<T>(grid, seed, 0.0, 1.0).expect("valid bounds");
            let inp = AttentionInputs::new(
                grid,
                seeded_matrix(n, dim, seed + 10, -1.0, 1.0),
                seeded_matrix(n, dim, seed + 11, -1.0, 1.0),
                seeded_matrix(n, ch, seed + 12, -1.0, 1.0),
            )
            .expect("shapes");
            let pairs = [
                ("ppmla", ppmla(&inp, &d, MatvecMode::Dense, &cfg), ppmla(&inp, &d, MatvecMode::Chunkwise, &cfg)),
                (
                    "ppmda",
                    ppmda(grid, inp.q(), &inp.k().transpose(), inp.v(), &d, MatvecMode::Dense, &cfg),
                    ppmda(grid, inp.q(), &inp.k().transpose(), inp.v(), &d, MatvecMode::Blockwise, &cfg),
                ),
                (
                    "ppmcca first term",
                    ppmcca_first_term(&inp, &d, MatvecMode::Dense, &cfg),
                    ppmcca_first_term(&inp, &d, MatvecMode::Chunkwise, &cfg),
                ),
            ];
            for (name, dense, fast) in pairs {
                match (dense, fast) {
                    (Ok(a), Ok(b)) => {
                        let (r, i) = s.residual(b.as_slice(), a.as_slice());
                        c.record(r, || format!("{name} {h}x{w} seed {seed} index {i}"));
                    }
                    (Err(e), _) | (_, Err(e)) => c.fail(format!("{name} {h}x{w} seed {seed}: {e}")),
                }
            }
        }
    }
    s.results.push(c.finish());
}

fn gradients(s: &mut Suite) {
    let mut c = Check::new("gradients match finite differences (wide)", 1e-6);
    let h = 1e-5;
    for (side, seed, zeros) in [(3, 1, true), (4, 2, false), (5, 3, false)] {
        let grid = Grid2D::square(side).expect("valid grid");
        let mut d = seeded_random_field::<f64>(grid, seed, 0.0, 1.0).expect("valid bounds");
        if zeros {
            let mut a = d.alpha_values().to_vec();
            let mut b = d.beta_values().to_vec();
            a[1] = 0.0;
            b[4] = 0.0;
            a[5] = 1.0;
            d = DecayField2D::new(grid, a, b).expect("in range");
        }
        let x = seeded_token_field::<f64>(grid, 2, seed + 1).expect("valid");
        let dy = seeded_token_field::<f64>(grid, 2, seed + 2).expect("valid");
        for variant in MaskVariant::ALL {
            match check_polyline_gradients(&d, &x, &dy, variant, h) {
                Ok(rep) => {
                    for slot in &rep.slots {
                        c.record(slot.max_rel_error, || {
                            format!("matvec {} {side}x{side} seed {seed} d{} index {}", variant.name(), slot.name, slot.worst_index)
                        });
                    }
                }
                Err(e) => c.fail(format!("matvec {} seed {seed}: {e}", variant.name())),
            }
        }
        let n = grid.tokens();
        let inp = AttentionInputs::new(
            grid,
            seeded_matrix(n, 3, seed + 3, -1.0, 1.0),
            seeded_matrix(n, 3, seed + 4, -1.0, 1.0),
            seeded_matrix(n, 2, seed + 5, -1.0, 1.0),
        )
        .expect("shapes");
        let dyl = seeded_matrix(n, 2, seed + 6, -1.0, 1.0);
        match check_ppmla_gradients(&inp, &d, &dyl, h) {
            Ok(rep) => {
                for slot in &rep.slots {
                    c.record(slot.max_rel_error, || {
                        format!("ppmla {side}x{side} seed {seed} d{} index {}", slot.name, slot.worst_index)
                    });
                }
            }
            Err(e) => c.fail(format!("ppmla seed {seed}: {e}")),
        }
    }
    s.results.push(c.finish());
}

fn run_typed<T: Real>(s: &mut Suite) {
    decomposition::<T>(s);
    worked_example::<T>(s);
    matvec_equivalence::<T>(s);
    matvec_3d::<T>(s);
    scans::<T>(s);
    attention::<T>(s);
}

pub fn run_selftest(precision: Precision, inject_fault: bool) -> Vec<CheckResult> {
    let mut s = Suite {
        relative: precision == Precision::Standard,
        fault: inject_fault,
        results: Vec::new(),
    };
    match precision {
        Precision::Wide => run_typed::<f64>(&mut s),
        Precision::Standard => run_typed::<f32>(&mut s),
    }
    gradients(&mut s);
    s.results
}

pub fn render_table(results: &[CheckResult]) -> String {
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:>10}  {:>9}  result", "check", "residual", "tolerance");
    for r in results {
        let _ = write!(
            out,
            "{:<width$}  {:>10.3e}  {:>9.1e}  {}",
            r.name,
            r.residual,
            r.tolerance,
            if r.passed { "PASS" } else { "FAIL" }
        );
        if !r.passed {
            let _ = write!(out, "  [{}]", r.detail);
        }
        out.push('\n');
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    let _ = writeln!(out, "{} checks, {} failed", results.len(), failed);
    out
}
