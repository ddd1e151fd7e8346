//! Top Hessian eigenvalue of the training loss, tracked along training.
//!
//! Hessian-vector products are central differences of the analytic gradient,
//! so the Hessian is never formed. Gradient descent on a quadratic with
//! curvature `s` is stable only for `s < 2 / eta`, which is the reference the
//! traces are compared against.

use std::io::Write;

use ndarray::ArrayView2;
use rand_distr::{Distribution, StandardNormal};

use crate::datasets::SplitDataset;
use crate::error::{Error, Result};
use crate::model::{NetworkSpec, ParamVector};
use crate::seed;
use crate::trainer::{train_observed, TrainConfig};

pub const DEFAULT_PI_ITERS: usize = 50;
pub const DEFAULT_PI_TOL: f64 = 1e-3;

/// Finite-difference step for parameters `w`.
pub fn hvp_step(w: &ParamVector) -> f64 {
    1e-4 * (1.0 + w.linf_norm())
}

/// Central difference of an arbitrary gradient map along `v`.
pub fn hvp_with<G>(mut grad: G, params: &ParamVector, v: &ParamVector) -> Result<ParamVector>
where
    G: FnMut(&ParamVector) -> Result<ParamVector>,
{
    if v.len() != params.len() {
        return Err(Error::Dimension(format!(
            "direction has {} entries, parameters have {}",
            v.len(),
            params.len()
        )));
    }
    let norm = v.l2_norm();
    if norm == 0.0 {
        return Err(Error::InvalidArgument("hvp direction is the zero vector".into()));
    }
    let h = hvp_step(params);
    let plus = params.axpy(h / norm, v);
    let minus = params.axpy(-h / norm, v);
    let gp = grad(&plus)?;
    let gm = grad(&minus)?;
    let scale = norm / (2.0 * h);
    Ok(ParamVector::from(
        gp.iter()
            .zip(gm.iter())
            .map(|(a, b)| (a - b) * scale)
            .collect::<Vec<_>>(),
    ))
}

/// Hessian of the regularized training loss applied to `v`.
pub fn hvp(
    spec: &NetworkSpec,
    params: &ParamVector,
    x: ArrayView2<f64>,
    labels: &[usize],
    reg_lambda: f64,
    v: &ParamVector,
) -> Result<ParamVector> {
    hvp_with(|w| spec.gradient(w, x, labels, reg_lambda), params, v)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerIteration {
    /// Rayleigh quotient of the final iterate.
    pub sigma_max: f64,
    pub converged: bool,
    pub matvecs: usize,
}

/// Dominant eigenvalue of a symmetric operator by power iteration from a
/// seeded random unit vector. Stops early once successive Rayleigh quotients
/// agree to `tol` relative.
pub fn power_iteration<F>(
    mut matvec: F,
    dim: usize,
    iters: usize,
    tol: f64,
    seed: u64,
) -> Result<PowerIteration>
where
    F: FnMut(&ParamVector) -> Result<ParamVector>,
{
    if dim == 0 || iters == 0 {
        return Err(Error::InvalidArgument(
            "power iteration needs dim >= 1 and iters >= 1".into(),
        ));
    }
    let mut rng = seed::rng(seed::derive(seed, &[seed::stream::POWER]));
    let mut v = ParamVector::from(
        (0..dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect::<Vec<f64>>(),
    );
    let n = v.l2_norm();
    v.as_mut_slice().iter_mut().for_each(|x| *x /= n);

    let mut prev: Option<f64> = None;
    let mut sigma = f64::NAN;
    let mut converged = false;
    let mut matvecs = 0;
    for _ in 0..iters {
        let w = matvec(&v)?;
        matvecs += 1;
        if w.len() != dim {
            return Err(Error::Dimension(format!(
                "operator returned {} entries, expected {dim}",
                w.len()
            )));
        }
        let norm = w.l2_norm();
        if norm == 0.0 {
            return Err(Error::Degenerate("operator mapped the iterate to zero".into()));
        }
        if !norm.is_finite() {
            return Err(Error::NonFinite("power iteration produced a non-finite vector".into()));
        }
        sigma = v.dot(&w);
        v = ParamVector::from(w.iter().map(|x| x / norm).collect::<Vec<_>>());
        if let Some(p) = prev {
            if (sigma - p).abs() < tol * sigma.abs() {
                converged = true;
                break;
            }
        }
        prev = Some(sigma);
    }
    Ok(PowerIteration {
        sigma_max: sigma,
        converged,
        matvecs,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SharpnessTrace {
    /// `(epoch, sigma_max)` at every sampled epoch.
    pub samples: Vec<(usize, f64)>,
    pub eta: f64,
    pub hvp_calls: usize,
}

impl SharpnessTrace {
    pub fn edge_of_stability(&self) -> f64 {
        2.0 / self.eta
    }

    /// Median sharpness over samples taken at or after `from_epoch`.
    pub fn median_after(&self, from_epoch: usize) -> Option<f64> {
        let mut v: Vec<f64> = self
            .samples
            .iter()
            .filter(|(e, _)| *e >= from_epoch)
            .map(|&(_, s)| s)
            .collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let n = v.len();
        Some(if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        })
    }

    /// CSV with columns `epoch,sigma_max,two_over_eta`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["epoch", "sigma_max", "two_over_eta"])?;
        let eos = self.edge_of_stability().to_string();
        for (epoch, s) in &self.samples {
            out.write_record([epoch.to_string(), s.to_string(), eos.clone()])?;
        }
        out.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }
}

/// Train for `cfg.max_epochs` epochs (the accuracy target does not stop the
/// run) and estimate the sharpness after every `every`-th epoch.
#[allow(clippy::too_many_arguments)]
pub fn sharpness_trace(
    spec: &NetworkSpec,
    split: &SplitDataset,
    params0: &ParamVector,
    cfg: &TrainConfig,
    every: usize,
    pi_iters: usize,
    pi_tol: f64,
    seed: u64,
) -> Result<SharpnessTrace> {
    if every == 0 {
        return Err(Error::InvalidArgument("every must be at least 1".into()));
    }
    let cfg = TrainConfig {
        stop_at_target: false,
        ..cfg.clone()
    };
    let train = &split.train;
    let mut samples = Vec::new();
    let mut hvp_calls = 0;
    train_observed(spec, split, params0, &cfg, |epoch, params| {
        if epoch % every != 0 {
            return Ok(());
        }
        let pi = power_iteration(
            |v| {
                hvp(
                    spec,
                    params,
                    train.features().view(),
                    train.labels(),
                    cfg.reg_lambda,
                    v,
                )
            },
            params.len(),
            pi_iters,
            pi_tol,
            seed::derive(seed, &[epoch as u64]),
        )?;
        hvp_calls += pi.matvecs;
        if pi.sigma_max.is_finite() {
            samples.push((epoch, pi.sigma_max));
        }
        Ok(())
    })?;
    Ok(SharpnessTrace {
        samples,
        eta: cfg.eta,
        hvp_calls,
    })
}
