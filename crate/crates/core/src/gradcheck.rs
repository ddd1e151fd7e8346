//! Finite-difference check of the analytic gradient.

use ndarray::ArrayView2;
use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::model::{NetworkSpec, ParamVector};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    /// `(coordinate, analytic, finite difference)` for every probed coordinate.
    pub probes: Vec<(usize, f64, f64)>,
    pub max_relative_error: f64,
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Compare backprop against central differences of the loss on `n_coords`
/// randomly chosen coordinates.
#[allow(clippy::too_many_arguments)]
pub fn check_gradient(
    spec: &NetworkSpec,
    params: &ParamVector,
    x: ArrayView2<f64>,
    labels: &[usize],
    reg_lambda: f64,
    n_coords: usize,
    h: f64,
    seed: u64,
) -> Result<GradientCheck> {
    if n_coords > params.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot probe {n_coords} of {} coordinates",
            params.len()
        )));
    }
    let grad = spec.gradient(params, x, labels, reg_lambda)?;
    let mut rng = seed::rng(seed);
    let mut probes = Vec::with_capacity(n_coords);
    let mut worst: f64 = 0.0;
    for i in sample(&mut rng, params.len(), n_coords) {
        let mut p = params.clone();
        p[i] = params[i] + h;
        let up = spec.loss(&p, x, labels, reg_lambda)?;
        p[i] = params[i] - h;
        let down = spec.loss(&p, x, labels, reg_lambda)?;
        let fd = (up - down) / (2.0 * h);
        worst = worst.max(relative_error(grad[i], fd, 1e-6));
        probes.push((i, grad[i], fd));
    }
    Ok(GradientCheck {
        probes,
        max_relative_error: worst,
    })
}
