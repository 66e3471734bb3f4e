use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use polypath_core::io::{read_tensor, write_tensor, Tensor};
use polypath_core::rng::SeededRng;

fn polypath(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polypath")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

fn pixels(pgm: &[u8], w: usize, h: usize) -> Vec<u8> {
    let header = format!("P5\n{w} {h}\n255\n");
    assert!(pgm.starts_with(header.as_bytes()));
    pgm[header.len()..].to_vec()
}

#[test]
fn selftest_passes() {
    let o = polypath(&["selftest"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).contains("decomposition identity"));
    let o = polypath(&["selftest", "--precision", "standard"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
}

#[test]
fn selftest_fault_names_the_check() {
    let o = polypath(&["selftest", "--inject-fault"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("matvec modes match dense"), "{}", stderr(&o));
    assert!(stderr(&o).contains("seed"));
}

#[test]
fn usage_errors_exit_2() {
    for args in [
        &["bench", "--repeats", "1"][..],
        &["bench", "--sizes", "1000"],
        &["bench", "--mode", "sparse"],
        &["--threads", "0", "selftest"],
        &["viz", "--what", "L", "--out", "/tmp/never.pgm"],
        &["viz", "--seed", "1", "--low", "0.8", "--high", "0.2", "--what", "L", "--out", "/tmp/never.pgm"],
        &["frobnicate"],
    ] {
        assert_eq!(code(&polypath(args)), 2, "{args:?}");
    }
}

#[test]
fn bench_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path(), "bench.csv");
    let o = polypath(&["bench", "--sizes", "16,64", "--repeats", "3", "--out", &out]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "op,mode,variant,N,repeats,min_time_s,peak_scratch_bytes");
    assert_eq!(lines.len(), 1 + 3 * 2);
    for l in &lines[1..] {
        let cells: Vec<&str> = l.split(',').collect();
        assert_eq!(cells.len(), 7);
        assert_eq!(cells[0], "matvec");
        assert!(cells[5].parse::<f64>().unwrap() > 0.0);
        cells[6].parse::<usize>().unwrap();
    }
    assert!(stdout(&o).contains("slope chunkwise"));

    let o = polypath(&["bench", "--op", "ppmla", "--mode", "chunkwise", "--sizes", "16,64", "--repeats", "3", "--channels", "2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn viz_golden_and_stable() {
    let dir = tempfile::tempdir().unwrap();
    let golden = std::fs::read(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/l2d_seed7_8x8.pgm")).unwrap();
    for threads in ["1", "3"] {
        let out = path(dir.path(), &format!("l2d{threads}.pgm"));
        let csv = path(dir.path(), &format!("l2d{threads}.csv"));
        let o = polypath(&["--threads", threads, "viz", "--seed", "7", "--what", "L2D", "--out", &out, "--csv", &csv]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        assert_eq!(std::fs::read(&out).unwrap(), golden);
        let m = polypath_core::io::import_csv::<f64>(&csv).unwrap();
        assert_eq!((m.rows(), m.cols()), (64, 64));
        assert_eq!(m, m.transpose());
    }
    let px = pixels(&golden, 64, 64);
    for u in 0..64 {
        for v in 0..64 {
            assert_eq!(px[u * 64 + v], px[v * 64 + u]);
        }
        assert_eq!(px[u * 65], 255);
    }
}

#[test]
fn viz_degenerate_images() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path(), "ones.pgm");
    let o = polypath(&["viz", "--constant", "1", "--height", "3", "--width", "4", "--what", "L2D", "--out", &out]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(pixels(&std::fs::read(&out).unwrap(), 12, 12).iter().all(|&p| p == 0));

    let out = path(dir.path(), "mask1d.pgm");
    let o = polypath(&["viz", "--constant", "1", "--height", "2", "--width", "3", "--what", "mask1d", "--out", &out]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let px = pixels(&std::fs::read(&out).unwrap(), 6, 6);
    for i in 0..6 {
        for j in 0..6 {
            assert_eq!(px[i * 6 + j], if j <= i { 255 } else { 0 });
        }
    }

    let out = path(dir.path(), "alpha.pgm");
    let o = polypath(&["viz", "--seed", "2", "--height", "3", "--width", "5", "--what", "alpha", "--out", &out]);
    assert_eq!(code(&o), 0);
    assert_eq!(pixels(&std::fs::read(&out).unwrap(), 5, 3).len(), 15);
}

#[test]
fn viz_capacity_error() {
    let o = polypath(&["viz", "--seed", "1", "--height", "100", "--width", "100", "--what", "L", "--out", "/tmp/never.pgm"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("cap"), "{}", stderr(&o));
}

/// Field rounded to eighths and small integer tokens: every partial sum is
/// exact, so evaluation order cannot change a bit.
fn dyadic_inputs(dir: &Path, seed: u64, h: usize, w: usize, c: usize) -> (PathBuf, PathBuf) {
    let mut rng = SeededRng::new(seed);
    let field: Vec<f64> = (0..2 * h * w).map(|_| (rng.uniform() * 9.0).floor().min(8.0) / 8.0).collect();
    let x: Vec<f64> = (0..h * w * c).map(|_| (rng.uniform() * 9.0).floor() - 4.0).collect();
    let fp = dir.join("field.pptf");
    let xp = dir.join("x.pptf");
    write_tensor(&fp, &Tensor::from_values(vec![2, h, w], field).unwrap()).unwrap();
    write_tensor(&xp, &Tensor::from_values(vec![h, w, c], x).unwrap()).unwrap();
    (fp, xp)
}

#[test]
fn matvec_modes_byte_equal() {
    let dir = tempfile::tempdir().unwrap();
    let (fp, xp) = dyadic_inputs(dir.path(), 8, 8, 8, 2);
    let (fp, xp) = (fp.to_string_lossy().into_owned(), xp.to_string_lossy().into_owned());
    for variant in ["v2h", "h2v", "combined"] {
        let mut outs = Vec::new();
        for mode in ["dense", "blockwise", "chunkwise"] {
            let out = path(dir.path(), &format!("{variant}_{mode}.pptf"));
            let o = polypath(&["matvec", "--field", &fp, "--x", &xp, "--variant", variant, "--mode", mode, "--out", &out]);
            assert_eq!(code(&o), 0, "{}", stderr(&o));
            outs.push(std::fs::read(&out).unwrap());
        }
        assert_eq!(outs[0], outs[1], "{variant}");
        assert_eq!(outs[0], outs[2], "{variant}");
    }
}

#[test]
fn matvec_zero_decays_doubles() {
    let dir = tempfile::tempdir().unwrap();
    let fp = path(dir.path(), "zero.pptf");
    let xp = path(dir.path(), "x.pptf");
    let out = path(dir.path(), "y.pptf");
    assert_eq!(code(&polypath(&["gen-field", "--seed", "1", "--height", "5", "--width", "6", "--low", "0", "--high", "0", "--out", &fp])), 0);
    assert_eq!(code(&polypath(&["gen-tokens", "--seed", "2", "--height", "5", "--width", "6", "--channels", "3", "--out", &xp])), 0);
    let o = polypath(&["matvec", "--field", &fp, "--x", &xp, "--variant", "combined", "--out", &out]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let x = read_tensor(&xp).unwrap();
    let y = read_tensor(&out).unwrap();
    assert_eq!(y.dims(), &[5, 6, 3]);
    let want: Vec<f64> = x.values::<f64>().iter().map(|v| 2.0 * v).collect();
    assert_eq!(y.values::<f64>(), want);
}

#[test]
fn matvec_single_precision_files() {
    let dir = tempfile::tempdir().unwrap();
    let fp = path(dir.path(), "f.pptf");
    let xp = path(dir.path(), "x.pptf");
    let out = path(dir.path(), "y.pptf");
    assert_eq!(code(&polypath(&["gen-field", "--seed", "3", "--height", "4", "--width", "4", "--dtype", "f32", "--out", &fp])), 0);
    assert_eq!(code(&polypath(&["gen-tokens", "--seed", "4", "--height", "4", "--width", "4", "--dtype", "f32", "--out", &xp])), 0);
    assert_eq!(code(&polypath(&["matvec", "--field", &fp, "--x", &xp, "--out", &out])), 0);
    assert_eq!(read_tensor(&out).unwrap().dtype(), polypath_core::DType::F32);
}

#[test]
fn matvec_input_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let missing = path(dir.path(), "missing.pptf");
    let xp = path(dir.path(), "x.pptf");
    let out = path(dir.path(), "y.pptf");
    assert_eq!(code(&polypath(&["gen-tokens", "--seed", "1", "--height", "3", "--width", "3", "--out", &xp])), 0);
    let o = polypath(&["matvec", "--field", &missing, "--x", &xp, "--out", &out]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains(&missing), "{}", stderr(&o));

    let fp = path(dir.path(), "f.pptf");
    assert_eq!(code(&polypath(&["gen-field", "--seed", "1", "--height", "3", "--width", "4", "--out", &fp])), 0);
    let o = polypath(&["matvec", "--field", &fp, "--x", &xp, "--out", &out]);
    assert_eq!(code(&o), 3);

    let bad = path(dir.path(), "bad.pptf");
    std::fs::write(&bad, b"XXXXnot a tensor").unwrap();
    let o = polypath(&["matvec", "--field", &bad, "--x", &xp, "--out", &out]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains(&bad));
}
