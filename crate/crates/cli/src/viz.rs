//! `polypath viz`: decay fields and masks as PGM heatmaps.

use polypath_core::io::{encode_csv, encode_pgm};
use polypath_core::mask::{build_mask_1d, build_polyline_mask_2d, build_polyline_mask_h2v, build_polyline_mask_v2h};
use polypath_core::rng::seeded_random_field;
use polypath_core::{DecayField2D, DenseCap, Grid2D, Matrix, SSM1DParams};

use crate::error::{CliError, CliResult};
use crate::{files, VizArgs, VizWhat};

fn load_field(args: &VizArgs) -> CliResult<DecayField2D<f64>> {
    if let Some(path) = &args.field {
        let t = files::read(path)?;
        return files::decay_field_from_tensor(&t).map_err(|e| CliError::from_core(&path.display().to_string(), e));
    }
    let grid = Grid2D::new(args.height, args.width).map_err(|e| CliError::Usage(e.to_string()))?;
    let field = match (args.seed, args.constant) {
        (Some(seed), _) => seeded_random_field(grid, seed, args.low, args.high),
        (None, Some(v)) => DecayField2D::constant(grid, v, v),
        (None, None) => unreachable!("clap requires a field source"),
    };
    field.map_err(|e| CliError::Usage(e.to_string()))
}

/// The matrix `what` selects, built from `field`.
pub fn viz_matrix(field: &DecayField2D<f64>, what: VizWhat, cap: DenseCap) -> CliResult<Matrix<f64>> {
    let g = field.grid();
    let core = |e| CliError::from_core("viz", e);
    let m = match what {
        VizWhat::Alpha => Matrix::new(g.height(), g.width(), field.alpha_values().to_vec()).map_err(core)?,
        VizWhat::Beta => Matrix::new(g.height(), g.width(), field.beta_values().to_vec()).map_err(core)?,
        VizWhat::L => build_polyline_mask_v2h(field, cap).map_err(core)?.into_matrix(),
        VizWhat::Ltilde => build_polyline_mask_h2v(field, cap).map_err(core)?.into_matrix(),
        VizWhat::L2d => build_polyline_mask_2d(field, cap).map_err(core)?.into_matrix(),
        VizWhat::Mask1d => {
            let n = g.tokens();
            let ones = Matrix::filled(n, 1, 1.0);
            let params = SSM1DParams::new(field.alpha_values().to_vec(), ones.clone(), ones).map_err(core)?;
            build_mask_1d(&params, cap).map_err(core)?.into_matrix()
        }
    };
    Ok(m)
}

pub fn cmd_viz(args: &VizArgs) -> CliResult<()> {
    let field = load_field(args)?;
    let m = viz_matrix(&field, args.what, DenseCap::default())?;
    let pgm = encode_pgm(&m).map_err(|e| CliError::from_core("viz", e))?;
    std::fs::write(&args.out, pgm).map_err(|e| CliError::Input(format!("{}: {e}", args.out.display())))?;
    if let Some(path) = &args.csv {
        std::fs::write(path, encode_csv(&m)).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}
