//! Network Lyapunov exponents from perturbation ensembles.
//!
//! Around a center initialization we draw `M` copies with every parameter
//! shifted by `Uniform(-eps, eps)`, train center and copies in lockstep, and
//! follow the L1 distances `d_j(t)` between each copy and the center. The
//! local exponent of the center is the finite-time growth rate of the mean
//! distance,
//!
//! ```text
//! Lambda = (1 / tau) * ln( mean_j d_j(tau) / mean_j d_j(0) )
//! ```
//!
//! where `tau` ends the exponential phase (see [`fit_mean_distance`]). The
//! network maximum Lyapunov exponent is the mean of `Lambda` over many
//! independent centers.

use std::io::Write;

use ndarray::Array2;
use rand::distr::{Distribution, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::SplitDataset;
use crate::error::{Error, Result};
use crate::model::{InitScheme, NetworkSpec, ParamVector};
use crate::seed;
use crate::trainer::{Stepper, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbationConfig {
    /// Half-width of the per-parameter uniform perturbation.
    pub epsilon: f64,
    /// Ensemble size M.
    pub members: usize,
    /// Epochs over which distances are tracked.
    pub horizon: usize,
    pub fit_r2_min: f64,
    pub lambda_min: f64,
    /// Shortest fit window, in epochs.
    pub min_window: usize,
    /// The fit window stops once the mean distance exceeds this fraction of
    /// the weight-space diameter.
    pub saturation_fraction: f64,
    /// Weight-space diameter; estimated from two random initializations
    /// when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diameter: Option<f64>,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-8,
            members: 5,
            horizon: 200,
            fit_r2_min: 0.9,
            lambda_min: 0.05,
            min_window: 5,
            saturation_fraction: 0.1,
            diameter: None,
        }
    }
}

impl PerturbationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.members == 0 {
            return Err(Error::InvalidArgument("members must be at least 1".into()));
        }
        if self.min_window == 0 {
            return Err(Error::InvalidArgument("min_window must be at least 1".into()));
        }
        if let Some(d) = self.diameter {
            if !(d > 0.0) {
                return Err(Error::InvalidArgument(format!("diameter must be positive, got {d}")));
            }
        }
        Ok(())
    }
}

/// Result of fitting one divergence curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalFit {
    pub lambda: f64,
    pub r_squared: f64,
    pub tau_fit: usize,
    /// The curve is well described by an exponential over `[0, tau_fit]`.
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceSeries {
    /// `[M, horizon + 1]`, row j holds `d_j(t)`.
    pub distances: Array2<f64>,
    pub member_diverged: Vec<bool>,
    pub fit: Option<LocalFit>,
}

impl DivergenceSeries {
    pub fn mean_distance(&self) -> Vec<f64> {
        self.distances
            .columns()
            .into_iter()
            .map(|c| c.mean().unwrap_or(f64::NAN))
            .collect()
    }

    pub fn mean_log_distance(&self) -> Vec<f64> {
        self.mean_distance().into_iter().map(f64::ln).collect()
    }

    /// CSV with columns `epoch,d_1..d_M,mean,ln_mean`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let m = self.distances.nrows();
        let mut header = vec!["epoch".to_string()];
        header.extend((1..=m).map(|j| format!("d_{j}")));
        header.push("mean".into());
        header.push("ln_mean".into());
        out.write_record(&header)?;
        for (t, mean) in self.mean_distance().into_iter().enumerate() {
            let mut row = vec![t.to_string()];
            row.extend(self.distances.column(t).iter().map(|d| d.to_string()));
            row.push(mean.to_string());
            row.push(mean.ln().to_string());
            out.write_record(&row)?;
        }
        out.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalExponent {
    pub init_index: usize,
    pub init_seed: u64,
    pub fit: LocalFit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovEstimate {
    pub local: Vec<LocalExponent>,
    pub nmle: f64,
    pub nmle_std: f64,
    pub rho: f64,
}

impl LyapunovEstimate {
    pub fn from_local(local: Vec<LocalExponent>, pcfg: &PerturbationConfig) -> Self {
        let (nmle, nmle_std) = mean_std(local.iter().map(|l| l.fit.lambda));
        let rho = compute_rho(&local, pcfg);
        Self {
            local,
            nmle,
            nmle_std,
            rho,
        }
    }

    /// CSV, one row per initialization:
    /// `init_seed,lambda_local,r_squared,tau_fit,valid`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["init_seed", "lambda_local", "r_squared", "tau_fit", "valid"])?;
        for l in &self.local {
            out.write_record([
                l.init_seed.to_string(),
                l.fit.lambda.to_string(),
                l.fit.r_squared.to_string(),
                l.fit.tau_fit.to_string(),
                l.fit.valid.to_string(),
            ])?;
        }
        out.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }
}

/// Population mean and standard deviation; `(NaN, NaN)` for no values.
pub fn mean_std(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Shift every parameter by an independent `Uniform(-epsilon, epsilon)` draw.
pub fn perturb(center: &ParamVector, epsilon: f64, seed: u64) -> Result<ParamVector> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let noise = Uniform::new(-epsilon, epsilon).expect("non-empty range");
    let mut rng = seed::rng(seed);
    Ok(ParamVector::from(
        center
            .iter()
            .map(|w| w + noise.sample(&mut rng))
            .collect::<Vec<_>>(),
    ))
}

pub fn l1_distance(a: &ParamVector, b: &ParamVector) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "cannot compare vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum())
}

/// Seed of the `index`-th center initialization under `master`.
pub fn init_seed(master: u64, index: usize) -> u64 {
    seed::derive(master, &[index as u64])
}

pub fn member_seed(init_seed: u64, member: usize) -> u64 {
    seed::derive(init_seed, &[seed::stream::PERTURB, member as u64])
}

/// L1 distance between two independent initializations: the scale at which
/// perturbation growth is considered saturated.
pub fn estimate_diameter(spec: &NetworkSpec, scheme: InitScheme, seed: u64) -> f64 {
    let a = spec.init_params(scheme, seed::derive(seed, &[seed::stream::DIAMETER, 0]));
    let b = spec.init_params(scheme, seed::derive(seed, &[seed::stream::DIAMETER, 1]));
    l1_distance(&a, &b).expect("same network")
}

/// Train `center` and every perturbed copy in `members` in lockstep for
/// `horizon` epochs and record the L1 distance of each copy to the center
/// after every epoch. Distances involving a diverged trajectory are NaN.
pub fn divergence_from_members(
    spec: &NetworkSpec,
    split: &SplitDataset,
    center: &ParamVector,
    members: Vec<ParamVector>,
    cfg: &TrainConfig,
    horizon: usize,
) -> Result<DivergenceSeries> {
    cfg.validate()?;
    let m = members.len();
    let mut center = Stepper::new(spec, split, center.clone(), cfg.eta, cfg.reg_lambda)?;
    let mut copies = members
        .into_iter()
        .map(|p| Stepper::new(spec, split, p, cfg.eta, cfg.reg_lambda))
        .collect::<Result<Vec<_>>>()?;
    let mut distances = Array2::zeros((m, horizon + 1));

    let record = |t: usize, center: &Stepper, copies: &[Stepper], d: &mut Array2<f64>| -> Result<()> {
        for (j, c) in copies.iter().enumerate() {
            d[[j, t]] = if center.diverged() || c.diverged() {
                f64::NAN
            } else {
                l1_distance(center.params(), c.params())?
            };
        }
        Ok(())
    };

    record(0, &center, &copies, &mut distances)?;
    for t in 1..=horizon {
        let (c, others) = rayon::join(
            || center.step(),
            || {
                copies
                    .par_iter_mut()
                    .map(|s| s.step().map(|_| ()))
                    .collect::<Result<Vec<_>>>()
            },
        );
        c?;
        others?;
        record(t, &center, &copies, &mut distances)?;
    }

    Ok(DivergenceSeries {
        distances,
        member_diverged: copies.iter().map(Stepper::diverged).collect(),
        fit: None,
    })
}

/// Build the epsilon-ball around `center` (member `j` seeded by
/// `member_seed(seed, j)`) and track its divergence.
pub fn divergence_series(
    spec: &NetworkSpec,
    split: &SplitDataset,
    center: &ParamVector,
    cfg: &TrainConfig,
    pcfg: &PerturbationConfig,
    seed: u64,
) -> Result<DivergenceSeries> {
    pcfg.validate()?;
    let members = (0..pcfg.members)
        .map(|j| perturb(center, pcfg.epsilon, member_seed(seed, j)))
        .collect::<Result<Vec<_>>>()?;
    divergence_from_members(spec, split, center, members, cfg, pcfg.horizon)
}

struct Regression {
    slope: f64,
    r_squared: f64,
}

/// Least squares of `y[t]` on `t` for `t = 0..y.len()`. R^2 is 0 for a
/// constant series.
fn regress(y: &[f64]) -> Regression {
    let n = y.len() as f64;
    let t_mean = (n - 1.0) / 2.0;
    let y_mean = y.iter().sum::<f64>() / n;
    let (mut sty, mut stt, mut syy) = (0.0, 0.0, 0.0);
    for (t, &v) in y.iter().enumerate() {
        let dt = t as f64 - t_mean;
        let dy = v - y_mean;
        sty += dt * dy;
        stt += dt * dt;
        syy += dy * dy;
    }
    if y.iter().all(|&v| v == y[0]) || syy == 0.0 || stt == 0.0 {
        return Regression {
            slope: 0.0,
            r_squared: 0.0,
        };
    }
    let slope = sty / stt;
    Regression {
        slope,
        r_squared: (sty * sty / (stt * syy)).min(1.0),
    }
}

/// Fit the local exponent of a mean-distance curve `mean[t]`.
///
/// The usable range stops before the first non-finite or non-positive
/// value, and (when `diameter` is known) at the first epoch whose mean
/// distance exceeds `saturation_fraction * diameter`. Inside it, the window
/// `[0, tau]` is the longest one, at least `min_window` epochs, on which the
/// regression of `ln mean` on `t` has `R^2 >= fit_r2_min`. Scanning every
/// window length (rather than stopping at the first failure) tolerates the
/// short lag before the growth becomes exponential. The exponent is then
/// `ln(mean[tau] / mean[0]) / tau`.
///
/// When no window passes the R^2 test, or the usable range is shorter than
/// `min_window`, the fit is marked invalid and reports the regression slope
/// over the whole usable range.
pub fn fit_mean_distance(mean: &[f64], diameter: Option<f64>, pcfg: &PerturbationConfig) -> LocalFit {
    let usable = mean
        .iter()
        .take_while(|&&m| m.is_finite() && m > 0.0)
        .count();
    let mut limit = usable.saturating_sub(1);
    if let Some(d) = diameter {
        if let Some(cap) = mean[..usable]
            .iter()
            .position(|&m| m > pcfg.saturation_fraction * d)
        {
            limit = limit.min(cap);
        }
    }
    let y: Vec<f64> = mean[..=limit.min(mean.len().saturating_sub(1))]
        .iter()
        .map(|m| m.ln())
        .collect();

    let fallback = |y: &[f64]| {
        if y.len() < 2 || !y.iter().all(|v| v.is_finite()) {
            return LocalFit {
                lambda: 0.0,
                r_squared: 0.0,
                tau_fit: y.len().saturating_sub(1),
                valid: false,
            };
        }
        let r = regress(y);
        LocalFit {
            lambda: r.slope,
            r_squared: r.r_squared,
            tau_fit: y.len() - 1,
            valid: false,
        }
    };

    if usable == 0 || limit < pcfg.min_window {
        return fallback(&y);
    }
    let Some(tau) = (pcfg.min_window..=limit)
        .rev()
        .find(|&t| regress(&y[..=t]).r_squared >= pcfg.fit_r2_min)
    else {
        return fallback(&y);
    };
    LocalFit {
        lambda: (mean[tau] / mean[0]).ln() / tau as f64,
        r_squared: regress(&y[..=tau]).r_squared,
        tau_fit: tau,
        valid: true,
    }
}

pub fn fit_local_exponent(
    series: &DivergenceSeries,
    diameter: Option<f64>,
    pcfg: &PerturbationConfig,
) -> LocalFit {
    fit_mean_distance(&series.mean_distance(), diameter, pcfg)
}

/// Percentage of initializations with a valid exponential fit, `R^2 >
/// fit_r2_min` and `Lambda > lambda_min`.
pub fn compute_rho(local: &[LocalExponent], pcfg: &PerturbationConfig) -> f64 {
    if local.is_empty() {
        return 0.0;
    }
    let passing = local
        .iter()
        .filter(|l| l.fit.valid && l.fit.r_squared > pcfg.fit_r2_min && l.fit.lambda > pcfg.lambda_min)
        .count();
    100.0 * passing as f64 / local.len() as f64
}

/// Divergence series and fit for the `index`-th center under `master_seed`.
pub fn local_exponent(
    spec: &NetworkSpec,
    split: &SplitDataset,
    cfg: &TrainConfig,
    pcfg: &PerturbationConfig,
    scheme: InitScheme,
    diameter: f64,
    master_seed: u64,
    index: usize,
) -> Result<(LocalExponent, DivergenceSeries)> {
    let seed = init_seed(master_seed, index);
    let center = spec.init_params(scheme, seed);
    let mut series = divergence_series(spec, split, &center, cfg, pcfg, seed)?;
    let fit = fit_local_exponent(&series, Some(diameter), pcfg);
    series.fit = Some(fit);
    Ok((
        LocalExponent {
            init_index: index,
            init_seed: seed,
            fit,
        },
        series,
    ))
}

/// Diameter from the config, or estimated once from the task's network.
pub fn resolve_diameter(
    spec: &NetworkSpec,
    scheme: InitScheme,
    pcfg: &PerturbationConfig,
    master_seed: u64,
) -> f64 {
    pcfg.diameter
        .unwrap_or_else(|| estimate_diameter(spec, scheme, master_seed))
}

/// Local exponents of `n_inits` independent centers, their mean (the
/// network maximum Lyapunov exponent), spread and rho. Centers run in
/// parallel; results do not depend on the thread count.
pub fn estimate_nmle(
    spec: &NetworkSpec,
    split: &SplitDataset,
    cfg: &TrainConfig,
    pcfg: &PerturbationConfig,
    scheme: InitScheme,
    n_inits: usize,
    master_seed: u64,
) -> Result<(LyapunovEstimate, Vec<DivergenceSeries>)> {
    if n_inits == 0 {
        return Err(Error::InvalidArgument("n_inits must be at least 1".into()));
    }
    pcfg.validate()?;
    let diameter = resolve_diameter(spec, scheme, pcfg, master_seed);
    let runs = (0..n_inits)
        .into_par_iter()
        .map(|i| local_exponent(spec, split, cfg, pcfg, scheme, diameter, master_seed, i))
        .collect::<Result<Vec<_>>>()?;
    let (local, series): (Vec<_>, Vec<_>) = runs.into_iter().unzip();
    Ok((LyapunovEstimate::from_local(local, pcfg), series))
}
