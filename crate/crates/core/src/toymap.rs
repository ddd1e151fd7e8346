//! One-dimensional gradient descent on the double-well potential
//! `V(w) = w^4/4 - w^2/2`.
//!
//! The update `w -> w - eta * V'(w)` is the cubic map
//! `f(w) = w (1 - eta (w^2 - 1))`, whose minima `w = +-1` are fixed points for
//! every `eta`. Increasing `eta` drives a period-doubling cascade to chaos.

use std::io::Write;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Orbits with `|w|` above this are treated as escaped to infinity.
pub const ESCAPE_RADIUS: f64 = 1e6;

/// Standard deviation of the random initial condition.
pub const W0_STD: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyMapConfig {
    pub eta: f64,
    pub w0: f64,
    pub n_transient: usize,
    pub n_record: usize,
    /// Iterates averaged by the Lyapunov estimate.
    pub n_lyapunov: usize,
    pub seed: u64,
}

impl Default for ToyMapConfig {
    fn default() -> Self {
        Self {
            eta: 0.1,
            w0: 0.5,
            n_transient: 1000,
            n_record: 200,
            n_lyapunov: 100_000,
            seed: 0,
        }
    }
}

#[inline]
pub fn map_step(w: f64, eta: f64) -> f64 {
    w * (1.0 - eta * (w * w - 1.0))
}

#[inline]
pub fn map_derivative(w: f64, eta: f64) -> f64 {
    1.0 - eta * (3.0 * w * w - 1.0)
}

fn escaped(w: f64) -> bool {
    !(w.abs() <= ESCAPE_RADIUS)
}

/// Initial condition for grid column `index`: `N(0, W0_STD)` keyed by seed
/// and column.
pub fn random_w0(seed: u64, index: usize) -> f64 {
    let mut rng = seed::rng(seed::derive(seed, &[seed::stream::TOY, index as u64]));
    Normal::new(0.0, W0_STD).expect("positive std").sample(&mut rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BifurcationColumn {
    pub eta: f64,
    /// Recorded iterates after the transient (truncated at escape).
    pub points: Vec<f64>,
    pub diverged: bool,
}

/// Iterate `n_transient + n_record` steps from `w0`, keeping the last
/// `n_record`.
pub fn orbit(eta: f64, w0: f64, n_transient: usize, n_record: usize) -> BifurcationColumn {
    let mut w = w0;
    let mut points = Vec::with_capacity(n_record);
    let mut diverged = escaped(w);
    for k in 0..n_transient + n_record {
        if diverged {
            break;
        }
        w = map_step(w, eta);
        if escaped(w) {
            diverged = true;
            break;
        }
        if k >= n_transient {
            points.push(w);
        }
    }
    BifurcationColumn {
        eta,
        points,
        diverged,
    }
}

pub fn bifurcation_diagram(eta_grid: &[f64], cfg: &ToyMapConfig) -> Result<Vec<BifurcationColumn>> {
    if eta_grid.is_empty() {
        return Err(Error::InvalidArgument("empty eta grid".into()));
    }
    Ok(eta_grid
        .iter()
        .enumerate()
        .map(|(i, &eta)| orbit(eta, random_w0(cfg.seed, i), cfg.n_transient, cfg.n_record))
        .collect())
}

/// `(1/t) * sum_{k<t} ln|f'(w_k)|` along the orbit of `w0`. Escaping orbits
/// return `+inf`.
pub fn toy_lyapunov(eta: f64, w0: f64, t: usize) -> Result<f64> {
    if t == 0 {
        return Err(Error::InvalidArgument("toy_lyapunov needs t >= 1".into()));
    }
    let mut w = w0;
    let mut sum = 0.0;
    for _ in 0..t {
        if escaped(w) {
            return Ok(f64::INFINITY);
        }
        sum += map_derivative(w, eta).abs().ln();
        w = map_step(w, eta);
    }
    Ok(sum / t as f64)
}

/// Lyapunov exponent for every grid value: random `w0`, `n_transient`
/// discarded iterates, then `n_lyapunov` averaged ones.
pub fn lyapunov_curve(eta_grid: &[f64], cfg: &ToyMapConfig) -> Result<Vec<(f64, f64)>> {
    if eta_grid.is_empty() {
        return Err(Error::InvalidArgument("empty eta grid".into()));
    }
    eta_grid
        .iter()
        .enumerate()
        .map(|(i, &eta)| {
            let mut w = random_w0(cfg.seed, i);
            for _ in 0..cfg.n_transient {
                w = map_step(w, eta);
                if escaped(w) {
                    return Ok((eta, f64::INFINITY));
                }
            }
            Ok((eta, toy_lyapunov(eta, w, cfg.n_lyapunov)?))
        })
        .collect()
}

/// `n` evenly spaced values covering `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

pub fn write_bifurcation_csv<W: Write>(columns: &[BifurcationColumn], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["eta", "w"])?;
    for col in columns {
        for p in &col.points {
            out.write_record([col.eta.to_string(), p.to_string()])?;
        }
    }
    out.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

pub fn write_lyapunov_csv<W: Write>(curve: &[(f64, f64)], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["eta", "lambda"])?;
    for (eta, lambda) in curve {
        out.write_record([eta.to_string(), lambda.to_string()])?;
    }
    out.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}
