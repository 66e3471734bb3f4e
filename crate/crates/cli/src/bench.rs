//! Scaling benchmarks: minimum-of-repeats wall time and peak scratch bytes
//! per size, with least-squares slopes in log-log space.

use std::fmt::Write as _;
use std::hint::black_box;
use std::time::{Duration, Instant};

use polypath_core::attention::ppmla;
use polypath_core::rng::{seeded_matrix, seeded_random_field, seeded_token_field};
use polypath_core::scratch;
use polypath_core::{AttentionInputs, DenseCap, Grid2D, MaskVariant, MatvecConfig, MatvecMode, polyline_matvec};

use crate::error::{CliError, CliResult};
use crate::{BenchArgs, BenchOp};

pub const CSV_HEADER: &str = "op,mode,variant,N,repeats,min_time_s,peak_scratch_bytes";

/// Shortest wall time one timed batch should take.
const MIN_BATCH: Duration = Duration::from_millis(20);

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub op: String,
    pub mode: MatvecMode,
    pub variant: MaskVariant,
    pub n: usize,
    pub repeats: usize,
    /// Seconds per call, minimum over repeats.
    pub min_time_s: f64,
    pub peak_scratch_bytes: usize,
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub op: BenchOp,
    pub modes: Vec<MatvecMode>,
    pub variant: MaskVariant,
    pub sizes: Vec<usize>,
    pub repeats: usize,
    pub channels: usize,
    pub seed: u64,
}

impl BenchConfig {
    pub fn from_args(a: &BenchArgs) -> CliResult<Self> {
        let cfg = Self {
            op: a.op,
            modes: a.mode.iter().map(|&m| m.into()).collect(),
            variant: a.variant.into(),
            sizes: a.sizes.clone(),
            repeats: a.repeats,
            channels: a.channels,
            seed: a.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.repeats < 3 {
            return Err(CliError::Usage(format!("--repeats must be at least 3, got {}", self.repeats)));
        }
        if self.sizes.is_empty() {
            return Err(CliError::Usage("--sizes must list at least one size".into()));
        }
        for &n in &self.sizes {
            square_side(n)?;
        }
        if self.channels == 0 {
            return Err(CliError::Usage("--channels must be at least 1".into()));
        }
        if self.modes.is_empty() {
            return Err(CliError::Usage("--mode must list at least one mode".into()));
        }
        Ok(())
    }
}

pub fn square_side(n: usize) -> CliResult<usize> {
    let side = (n as f64).sqrt().round() as usize;
    if n == 0 || side * side != n {
        return Err(CliError::Usage(format!("size {n} is not a positive perfect square")));
    }
    Ok(side)
}

/// Least-squares slope of `ln y` against `ln x`. `None` with fewer than two
/// distinct `x` or any non-positive value.
pub fn fit_loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.iter().any(|&(x, y)| x <= 0.0 || y <= 0.0) {
        return None;
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Builds the inputs for one size and returns a closure running the op once.
fn workload(cfg: &BenchConfig, mode: MatvecMode, side: usize) -> CliResult<Box<dyn Fn() -> usize + Sync>> {
    let grid = Grid2D::square(side).map_err(|e| CliError::Usage(e.to_string()))?;
    let core = |e| CliError::from_core("bench", e);
    let decay = seeded_random_field::<f32>(grid, cfg.seed, 0.0, 1.0).map_err(core)?;
    let variant = cfg.variant;
    match cfg.op {
        BenchOp::Matvec => {
            let x = seeded_token_field::<f32>(grid, cfg.channels, cfg.seed + 1).map_err(core)?;
            // Dense streams mask panels and never holds the full matrix.
            let mc = MatvecConfig {
                dense_cap: DenseCap::unlimited(),
                ..MatvecConfig::default()
            };
            Ok(Box::new(move || {
                let y = polyline_matvec(&decay, &x, variant, mode, &mc).expect("validated inputs");
                black_box(y).channels()
            }))
        }
        BenchOp::Ppmla => {
            let n = grid.tokens();
            let c = cfg.channels;
            let inp = AttentionInputs::new(
                grid,
                seeded_matrix(n, c, cfg.seed + 1, -1.0, 1.0),
                seeded_matrix(n, c, cfg.seed + 2, -1.0, 1.0),
                seeded_matrix(n, c, cfg.seed + 3, -1.0, 1.0),
            )
            .map_err(core)?;
            let mc = MatvecConfig::default();
            if mode == MatvecMode::Dense {
                mc.dense_cap.check(n).map_err(core)?;
            }
            Ok(Box::new(move || {
                let y = ppmla(&inp, &decay, mode, &mc).expect("validated inputs");
                black_box(y).cols()
            }))
        }
    }
}

fn time_one(run: &(dyn Fn() -> usize + Sync), repeats: usize) -> f64 {
    let start = Instant::now();
    run();
    let first = start.elapsed();
    let iters = if first >= MIN_BATCH {
        1
    } else {
        (MIN_BATCH.as_secs_f64() / first.as_secs_f64().max(1e-9)).ceil() as usize
    };
    let mut best = f64::INFINITY;
    for _ in 0..repeats {
        let start = Instant::now();
        for _ in 0..iters {
            run();
        }
        best = best.min(start.elapsed().as_secs_f64() / iters as f64);
    }
    best
}

/// Runs every `(mode, size)` pair on the current rayon pool. Peak scratch is
/// measured on a separate single-thread pool so every buffer is counted.
pub fn run_bench(cfg: &BenchConfig, mut progress: impl FnMut(&BenchRecord)) -> CliResult<Vec<BenchRecord>> {
    cfg.validate()?;
    let meter = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start thread pool: {e}")))?;
    let op = match cfg.op {
        BenchOp::Matvec => "matvec",
        BenchOp::Ppmla => "ppmla",
    };
    let mut out = Vec::new();
    for &mode in &cfg.modes {
        for &n in &cfg.sizes {
            let side = square_side(n)?;
            let run = workload(cfg, mode, side)?;
            let ((), peak) = meter.install(|| scratch::measure(|| {
                run();
            }));
            let rec = BenchRecord {
                op: op.to_string(),
                mode,
                variant: cfg.variant,
                n,
                repeats: cfg.repeats,
                min_time_s: time_one(run.as_ref(), cfg.repeats),
                peak_scratch_bytes: peak,
            };
            progress(&rec);
            out.push(rec);
        }
    }
    Ok(out)
}

pub fn csv_line(r: &BenchRecord) -> String {
    format!(
        "{},{},{},{},{},{:e},{}",
        r.op,
        r.mode.name(),
        r.variant.name(),
        r.n,
        r.repeats,
        r.min_time_s,
        r.peak_scratch_bytes
    )
}

pub fn to_csv(records: &[BenchRecord]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&csv_line(r));
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlopeSummary {
    pub mode: MatvecMode,
    pub time_slope: Option<f64>,
    pub memory_slope: Option<f64>,
}

/// Time and memory slopes for each mode present in `records`.
pub fn slopes(records: &[BenchRecord]) -> Vec<SlopeSummary> {
    let mut modes: Vec<MatvecMode> = Vec::new();
    for r in records {
        if !modes.contains(&r.mode) {
            modes.push(r.mode);
        }
    }
    modes
        .into_iter()
        .map(|mode| {
            let rs: Vec<&BenchRecord> = records.iter().filter(|r| r.mode == mode).collect();
            let time: Vec<(f64, f64)> = rs.iter().map(|r| (r.n as f64, r.min_time_s)).collect();
            let mem: Vec<(f64, f64)> = rs.iter().map(|r| (r.n as f64, r.peak_scratch_bytes as f64)).collect();
            SlopeSummary {
                mode,
                time_slope: fit_loglog_slope(&time),
                memory_slope: fit_loglog_slope(&mem),
            }
        })
        .collect()
}

pub fn render_slopes(s: &[SlopeSummary]) -> String {
    let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.3}"));
    let mut out = String::new();
    for row in s {
        let _ = writeln!(
            out,
            "slope {:<9} time {}  memory {}",
            row.mode.name(),
            fmt(row.time_slope),
            fmt(row.memory_slope)
        );
    }
    out
}

pub fn cmd_bench(args: &BenchArgs) -> CliResult<()> {
    let cfg = BenchConfig::from_args(args)?;
    println!("{CSV_HEADER}");
    let records = run_bench(&cfg, |r| println!("{}", csv_line(r)))?;
    if let Some(path) = &args.out {
        std::fs::write(path, to_csv(&records))
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    }
    print!("{}", render_slopes(&slopes(&records)));
    Ok(())
}
