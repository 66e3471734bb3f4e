mod common;

use common::*;
use polypath_core::rng::{seeded_matrix, seeded_random_field, seeded_random_field_3d, seeded_token_field};
use polypath_core::{
    polyline_matvec, polyline_matvec_3d, ChunkConfig, DecayField2D, DecayField3D, DenseCap, Error, Grid2D, Grid3D,
    MaskVariant, Matrix, MatvecConfig, MatvecMode, TokenField,
};
use proptest::prelude::*;

fn cfg() -> MatvecConfig {
    MatvecConfig::default()
}

fn oracle(d: &DecayField2D<f64>, variant: MaskVariant) -> Matrix<f64> {
    match variant {
        MaskVariant::V2H => v2h_mask(d),
        MaskVariant::H2V => h2v_mask(d),
        MaskVariant::Combined2D => combined_mask(d),
    }
}

#[test]
fn unit_decays_give_grand_sum() {
    let g = Grid2D::new(3, 5).unwrap();
    let d = DecayField2D::constant(g, 1.0, 1.0).unwrap();
    let x = seeded_token_field::<f64>(g, 2, 1).unwrap();
    for mode in MatvecMode::ALL {
        let y = polyline_matvec(&d, &x, MaskVariant::V2H, mode, &cfg()).unwrap();
        for c in 0..2 {
            let total: f64 = (0..15).map(|u| x.as_slice()[u * 2 + c]).sum();
            for u in 0..15 {
                assert!((y.as_slice()[u * 2 + c] - total).abs() <= 1e-14);
            }
        }
    }
}

#[test]
fn zero_decays_double_combined() {
    let g = Grid2D::new(4, 3).unwrap();
    let d = DecayField2D::constant(g, 0.0, 0.0).unwrap();
    let x = seeded_token_field::<f64>(g, 3, 2).unwrap();
    for mode in MatvecMode::ALL {
        let y = polyline_matvec(&d, &x, MaskVariant::Combined2D, mode, &cfg()).unwrap();
        let want: Vec<f64> = x.as_slice().iter().map(|v| 2.0 * v).collect();
        assert_eq!(y.as_slice(), &want[..]);
        let y = polyline_matvec(&d, &x, MaskVariant::V2H, mode, &cfg()).unwrap();
        assert_eq!(y, x);
    }
}

#[test]
fn seeded_5x7_modes_match_oracle() {
    let g = Grid2D::new(5, 7).unwrap();
    let d = seeded_random_field::<f64>(g, 3, 0.0, 1.0).unwrap();
    let x = seeded_token_field::<f64>(g, 3, 4).unwrap();
    for variant in MaskVariant::ALL {
        let want = apply(&oracle(&d, variant), x.as_slice(), 3);
        let dense = polyline_matvec(&d, &x, variant, MatvecMode::Dense, &cfg()).unwrap();
        assert!(max_diff(dense.as_slice(), &want) <= 1e-13);
        for mode in [MatvecMode::Blockwise, MatvecMode::Chunkwise] {
            let y = polyline_matvec(&d, &x, variant, mode, &cfg()).unwrap();
            assert!(y.max_abs_diff(&dense) <= 1e-12, "{} {}", variant.name(), mode.name());
        }
    }
}

#[test]
fn indicator_picks_path_weight() {
    let g = Grid2D::square(4).unwrap();
    let d = seeded_random_field::<f64>(g, 5, 0.0, 1.0).unwrap();
    let mut x = TokenField::<f64>::zeros(g, 1);
    x.as_mut_slice()[g.index(3, 3)] = 1.0;
    let want = d.alpha(0, 1) * d.alpha(0, 2) * d.alpha(0, 3) * d.beta(1, 3) * d.beta(2, 3) * d.beta(3, 3);
    for mode in MatvecMode::ALL {
        let y = polyline_matvec(&d, &x, MaskVariant::V2H, mode, &cfg()).unwrap();
        assert!((y.get(0, 0, 0) - want).abs() <= 1e-16);
    }
}

#[test]
fn errors() {
    let g = Grid2D::square(3).unwrap();
    let d = DecayField2D::constant(g, 0.5, 0.5).unwrap();
    let x = TokenField::<f64>::zeros(Grid2D::new(3, 2).unwrap(), 1);
    assert!(matches!(
        polyline_matvec(&d, &x, MaskVariant::V2H, MatvecMode::Chunkwise, &cfg()),
        Err(Error::Dimension(_))
    ));
    let x = TokenField::<f64>::zeros(g, 1);
    let small = MatvecConfig {
        dense_cap: DenseCap(8),
        ..cfg()
    };
    assert!(matches!(
        polyline_matvec(&d, &x, MaskVariant::V2H, MatvecMode::Dense, &small),
        Err(Error::Capacity { .. })
    ));
    assert!(polyline_matvec(&d, &x, MaskVariant::V2H, MatvecMode::Chunkwise, &small).is_ok());
}

#[test]
fn single_precision_tracks_double() {
    let g = Grid2D::new(6, 9).unwrap();
    let d = seeded_random_field::<f64>(g, 6, 0.0, 1.0).unwrap();
    let x = seeded_token_field::<f64>(g, 2, 7).unwrap();
    let want = polyline_matvec(&d, &x, MaskVariant::Combined2D, MatvecMode::Dense, &cfg()).unwrap();
    let d32 = d.cast::<f32>();
    let x32 = TokenField::new(g, 2, x.as_slice().iter().map(|&v| v as f32).collect()).unwrap();
    for mode in MatvecMode::ALL {
        let y = polyline_matvec(&d32, &x32, MaskVariant::Combined2D, mode, &cfg()).unwrap();
        let err = max_diff(&y.as_slice().iter().map(|&v| v as f64).collect::<Vec<_>>(), want.as_slice());
        assert!(err <= 1e-4, "{} {err}", mode.name());
    }
}

#[test]
fn depth_one_reduces_to_2d() {
    let g3 = Grid3D::new(4, 5, 1).unwrap();
    let d3 = seeded_random_field_3d::<f64>(g3, 8, 0.0, 1.0).unwrap();
    let g = Grid2D::new(4, 5).unwrap();
    let alpha: Vec<f64> = (0..20).map(|u| d3.alpha(u / 5, u % 5, 0)).collect();
    let beta: Vec<f64> = (0..20).map(|u| d3.beta(u / 5, u % 5, 0)).collect();
    let d2 = DecayField2D::new(g, alpha, beta).unwrap();
    let x = seeded_matrix::<f64>(20, 2, 9, -1.0, 1.0);
    let x2 = TokenField::from_matrix(g, x.clone()).unwrap();
    for mode in MatvecMode::ALL {
        let y3 = polyline_matvec_3d(&d3, &x, mode, &cfg()).unwrap();
        let y2 = polyline_matvec(&d2, &x2, MaskVariant::V2H, mode, &cfg()).unwrap();
        assert_eq!(y3.as_slice(), y2.as_slice(), "{}", mode.name());
    }
}

#[test]
fn matvec_3d_cases() {
    let g = Grid3D::new(2, 3, 4).unwrap();
    let zeros = DecayField3D::constant(g, 0.0).unwrap();
    let x = seeded_matrix::<f64>(g.tokens(), 2, 10, -1.0, 1.0);
    for mode in MatvecMode::ALL {
        assert_eq!(polyline_matvec_3d(&zeros, &x, mode, &cfg()).unwrap(), x);
    }

    for (h, w, dp, seed) in [(3, 3, 3, 11u64), (1, 1, 7, 12), (2, 4, 3, 13)] {
        let g = Grid3D::new(h, w, dp).unwrap();
        let d = seeded_random_field_3d::<f64>(g, seed, 0.0, 1.0).unwrap();
        let n = g.tokens();
        let coords: Vec<(usize, usize, usize)> =
            (0..h).flat_map(|i| (0..w).flat_map(move |j| (0..dp).map(move |k| (i, j, k)))).collect();
        let m = Matrix::from_fn(n, n, |u, v| mask_3d_entry(&d, coords[u], coords[v]));
        let x = seeded_matrix::<f64>(n, 2, seed + 1, -1.0, 1.0);
        let want = apply(&m, x.as_slice(), 2);
        for mode in MatvecMode::ALL {
            let y = polyline_matvec_3d(&d, &x, mode, &cfg()).unwrap();
            assert!(max_diff(y.as_slice(), &want) <= 1e-12, "{h}x{w}x{dp} {}", mode.name());
        }
    }
}

fn case(max_side: usize) -> impl Strategy<Value = (DecayField2D<f64>, TokenField<f64>, TokenField<f64>)> {
    (field_parts(max_side), 1usize..4).prop_flat_map(|((h, w, a, b), c)| {
        let g = Grid2D::new(h, w).unwrap();
        let d = DecayField2D::new(g, a, b).unwrap();
        let n = g.tokens() * c;
        (
            Just(d),
            proptest::collection::vec(-1.0..1.0f64, n).prop_map(move |v| TokenField::new(g, c, v).unwrap()),
            proptest::collection::vec(-1.0..1.0f64, n).prop_map(move |v| TokenField::new(g, c, v).unwrap()),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn modes_match_elementwise_oracle((d, x, _y) in case(9), chunk in 1usize..12) {
        let mc = MatvecConfig { chunk: ChunkConfig::new(chunk).unwrap(), ..cfg() };
        for variant in MaskVariant::ALL {
            let want = apply(&oracle(&d, variant), x.as_slice(), x.channels());
            for mode in MatvecMode::ALL {
                let y = polyline_matvec(&d, &x, variant, mode, &mc).unwrap();
                prop_assert!(max_diff(y.as_slice(), &want) <= 1e-12, "{} {}", variant.name(), mode.name());
            }
        }
    }

    #[test]
    fn adjoint_identity((d, x, y) in case(9)) {
        let fx = polyline_matvec(&d, &x, MaskVariant::V2H, MatvecMode::Chunkwise, &cfg()).unwrap();
        let gy = polyline_matvec(&d, &y, MaskVariant::H2V, MatvecMode::Chunkwise, &cfg()).unwrap();
        prop_assert!((fx.dot(&y) - x.dot(&gy)).abs() <= 1e-12 * (x.norm() * y.norm()).max(1.0));
        let cx = polyline_matvec(&d, &x, MaskVariant::Combined2D, MatvecMode::Blockwise, &cfg()).unwrap();
        let cy = polyline_matvec(&d, &y, MaskVariant::Combined2D, MatvecMode::Blockwise, &cfg()).unwrap();
        prop_assert!((cx.dot(&y) - x.dot(&cy)).abs() <= 1e-12 * (x.norm() * y.norm()).max(1.0));
    }

    #[test]
    fn linearity((d, x, y) in case(7), s in -2.0..2.0f64) {
        let g = x.grid();
        let c = x.channels();
        let combo: Vec<f64> = x.as_slice().iter().zip(y.as_slice()).map(|(a, b)| s * a + b).collect();
        let combo = TokenField::new(g, c, combo).unwrap();
        for mode in MatvecMode::ALL {
            let fx = polyline_matvec(&d, &x, MaskVariant::Combined2D, mode, &cfg()).unwrap();
            let fy = polyline_matvec(&d, &y, MaskVariant::Combined2D, mode, &cfg()).unwrap();
            let fc = polyline_matvec(&d, &combo, MaskVariant::Combined2D, mode, &cfg()).unwrap();
            let want: Vec<f64> = fx.as_slice().iter().zip(fy.as_slice()).map(|(a, b)| s * a + b).collect();
            prop_assert!(max_diff(fc.as_slice(), &want) <= 1e-12);
        }
    }

    #[test]
    fn chunk_size_does_not_change_output((d, x, _y) in case(12), q in 1usize..20) {
        let base = polyline_matvec(&d, &x, MaskVariant::Combined2D, MatvecMode::Chunkwise, &cfg()).unwrap();
        let mc = MatvecConfig { chunk: ChunkConfig::new(q).unwrap(), ..cfg() };
        let y = polyline_matvec(&d, &x, MaskVariant::Combined2D, MatvecMode::Chunkwise, &mc).unwrap();
        prop_assert!(y.max_abs_diff(&base) <= 1e-12);
    }
}
