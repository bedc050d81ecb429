use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::linalg;
use crate::{Error, Result};

/// Ridge map from spectral coordinates to latent features, `Z ≈ X·W + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeMap {
    /// d_emb × p.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub lambda: f64,
    pub rmse: f64,
}

impl AttributeMap {
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        x.dot(&self.w) + &self.b
    }
}

/// Closed-form ridge on centred data; the intercept is not penalized.
pub fn fit_attribute_map(
    x: ArrayView2<'_, f64>,
    z: ArrayView2<'_, f64>,
    lambda: f64,
) -> Result<AttributeMap> {
    if x.nrows() != z.nrows() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            got: z.nrows(),
        });
    }
    if x.nrows() == 0 {
        return Err(Error::invalid("attribute map needs at least one row"));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!(
            "ridge penalty {lambda} must be positive"
        )));
    }
    let xm = linalg::column_means(&x);
    let zm = linalg::column_means(&z);
    let xc = &x - &xm.view().insert_axis(Axis(0));
    let zc = &z - &zm.view().insert_axis(Axis(0));
    let mut gram = xc.t().dot(&xc);
    for i in 0..gram.nrows() {
        gram[[i, i]] += lambda;
    }
    let w = linalg::cholesky_solve(&gram, &xc.t().dot(&zc))?;
    let b = &zm - &xm.dot(&w);
    let resid = &z - &(x.dot(&w) + &b);
    let rmse = (resid.iter().map(|v| v * v).sum::<f64>() / resid.len().max(1) as f64).sqrt();
    Ok(AttributeMap { w, b, lambda, rmse })
}
