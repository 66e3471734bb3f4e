//! Loading and saving the tensors the commands exchange.
//!
//! A decay field file holds a `2×H×W` tensor: `alpha` in slice 0, `beta` in
//! slice 1. A token file holds `H×W×C` (or `H×W` for one channel).

use std::path::Path;

use polypath_core::io::{read_tensor, write_tensor, Tensor};
use polypath_core::{DecayField2D, Error, Grid2D, Real, Result, TokenField};

use crate::error::{CliError, CliResult};

pub fn read(path: &Path) -> CliResult<Tensor> {
    read_tensor(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn write(path: &Path, t: &Tensor) -> CliResult<()> {
    write_tensor(path, t).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn decay_field_from_tensor<T: Real>(t: &Tensor) -> Result<DecayField2D<T>> {
    let [2, h, w] = t.dims()[..] else {
        return Err(Error::Dimension(format!("decay field must have shape 2xHxW, got {:?}", t.dims())));
    };
    let grid = Grid2D::new(h, w)?;
    let mut values = t.values::<T>();
    let beta = values.split_off(grid.tokens());
    DecayField2D::new_tolerant(grid, values, beta)
}

pub fn decay_field_to_tensor<T: Real>(d: &DecayField2D<T>) -> Tensor {
    let g = d.grid();
    let mut values = d.alpha_values().to_vec();
    values.extend_from_slice(d.beta_values());
    Tensor::from_values(vec![2, g.height(), g.width()], values).expect("field dims are consistent")
}

pub fn token_field_from_tensor<T: Real>(t: &Tensor) -> Result<TokenField<T>> {
    let (h, w, c) = match t.dims()[..] {
        [h, w] => (h, w, 1),
        [h, w, c] => (h, w, c),
        _ => {
            return Err(Error::Dimension(format!(
                "token field must have shape HxWxC or HxW, got {:?}",
                t.dims()
            )))
        }
    };
    TokenField::new(Grid2D::new(h, w)?, c, t.values())
}

pub fn token_field_to_tensor<T: Real>(x: &TokenField<T>) -> Tensor {
    let g = x.grid();
    Tensor::from_values(vec![g.height(), g.width(), x.channels()], x.as_slice().to_vec())
        .expect("token field dims are consistent")
}
