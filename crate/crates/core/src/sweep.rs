//! Learning-rate sweeps and the bisection search for the sweet spot.
//!
//! For each learning rate a sweep estimates the Lyapunov statistics over
//! `n_inits` centers and trains each center to the accuracy target to
//! measure its training time. Initialization `i` uses the same seed at every
//! learning rate, so rows differ only through `eta`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::SplitDataset;
use crate::error::{Error, Result};
use crate::lyapunov::{
    self, init_seed, local_exponent, LocalExponent, LyapunovEstimate, PerturbationConfig,
};
use crate::model::{InitScheme, NetworkSpec};
use crate::trainer::{train, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub eta: f64,
    pub nmle: f64,
    pub nmle_std: f64,
    pub rho: f64,
    pub mean_tau: Option<f64>,
    pub tau_count: usize,
    pub n_converged: usize,
    pub n_diverged: usize,
    /// Runs that neither diverged nor reached the target.
    pub n_timeout: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    /// Row with the smallest mean training time, if any run converged.
    pub fn fastest(&self) -> Option<&SweepRow> {
        self.rows
            .iter()
            .filter(|r| r.mean_tau.is_some())
            .min_by(|a, b| a.mean_tau.unwrap().total_cmp(&b.mean_tau.unwrap()))
    }

    /// CSV with columns
    /// `eta,nmle,nmle_std,rho,mean_tau,tau_count,n_converged,n_diverged`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "eta",
            "nmle",
            "nmle_std",
            "rho",
            "mean_tau",
            "tau_count",
            "n_converged",
            "n_diverged",
        ])?;
        for r in &self.rows {
            out.write_record([
                r.eta.to_string(),
                r.nmle.to_string(),
                r.nmle_std.to_string(),
                r.rho.to_string(),
                r.mean_tau.map(|t| t.to_string()).unwrap_or_default(),
                r.tau_count.to_string(),
                r.n_converged.to_string(),
                r.n_diverged.to_string(),
            ])?;
        }
        out.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }
}

/// Outcome of one (learning rate, initialization) unit.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub exponent: LocalExponent,
    pub tau: Option<usize>,
    pub diverged: bool,
}

/// Aggregate the runs of one learning rate.
pub fn aggregate(eta: f64, runs: &[RunOutcome], pcfg: &PerturbationConfig) -> SweepRow {
    let est = LyapunovEstimate::from_local(runs.iter().map(|r| r.exponent).collect(), pcfg);
    let taus: Vec<f64> = runs.iter().filter_map(|r| r.tau).map(|t| t as f64).collect();
    let n_converged = taus.len();
    let n_diverged = runs.iter().filter(|r| r.diverged).count();
    SweepRow {
        eta,
        nmle: est.nmle,
        nmle_std: est.nmle_std,
        rho: est.rho,
        mean_tau: (n_converged > 0).then(|| taus.iter().sum::<f64>() / n_converged as f64),
        tau_count: n_converged,
        n_converged,
        n_diverged,
        n_timeout: runs.len() - n_converged - n_diverged,
    }
}

/// Lyapunov fit and training time for initialization `index` at `cfg.eta`.
#[allow(clippy::too_many_arguments)]
pub fn run_unit(
    spec: &NetworkSpec,
    split: &SplitDataset,
    cfg: &TrainConfig,
    pcfg: &PerturbationConfig,
    scheme: InitScheme,
    diameter: f64,
    master_seed: u64,
    index: usize,
) -> Result<RunOutcome> {
    let (exponent, _) = local_exponent(spec, split, cfg, pcfg, scheme, diameter, master_seed, index)?;
    let params0 = spec.init_params(scheme, init_seed(master_seed, index));
    let rec = train(spec, split, &params0, cfg)?;
    Ok(RunOutcome {
        exponent,
        tau: rec.tau,
        diverged: rec.diverged,
    })
}

/// Sweep `etas` (sorted ascending in the result). Every (eta,
/// initialization) pair is an independent unit scheduled on the rayon pool.
#[allow(clippy::too_many_arguments)]
pub fn lr_sweep(
    spec: &NetworkSpec,
    split: &SplitDataset,
    etas: &[f64],
    template: &TrainConfig,
    pcfg: &PerturbationConfig,
    scheme: InitScheme,
    n_inits: usize,
    master_seed: u64,
) -> Result<SweepResult> {
    if etas.is_empty() {
        return Err(Error::InvalidArgument("empty learning-rate list".into()));
    }
    if let Some(bad) = etas.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
        return Err(Error::InvalidArgument(format!(
            "learning rates must be positive, got {bad}"
        )));
    }
    if n_inits == 0 {
        return Err(Error::InvalidArgument("n_inits must be at least 1".into()));
    }
    template.validate()?;
    pcfg.validate()?;

    let mut etas = etas.to_vec();
    etas.sort_by(f64::total_cmp);
    let diameter = lyapunov::resolve_diameter(spec, scheme, pcfg, master_seed);
    let configs: Vec<TrainConfig> = etas
        .iter()
        .map(|&eta| TrainConfig {
            eta,
            ..template.clone()
        })
        .collect();

    let units: Vec<(usize, usize)> = (0..etas.len())
        .flat_map(|e| (0..n_inits).map(move |i| (e, i)))
        .collect();
    let outcomes = units
        .par_iter()
        .map(|&(e, i)| {
            let out = run_unit(spec, split, &configs[e], pcfg, scheme, diameter, master_seed, i);
            log::debug!("eta {} init {} done", etas[e], i);
            out
        })
        .collect::<Result<Vec<_>>>()?;

    let rows = etas
        .iter()
        .zip(outcomes.chunks(n_inits))
        .map(|(&eta, runs)| aggregate(eta, runs, pcfg))
        .collect();
    Ok(SweepResult { rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bisection {
    pub eta_star: f64,
    pub lo: f64,
    pub hi: f64,
    pub halvings: usize,
    /// Every `(eta, rho)` evaluated, endpoints first.
    pub evaluations: Vec<(f64, f64)>,
}

/// Number of halvings that bring a bracket of width `width` down to `tol`.
pub fn bisection_steps(width: f64, tol: f64) -> usize {
    if width <= tol {
        0
    } else {
        (width / tol).log2().ceil() as usize
    }
}

fn check_monotone(evals: &[(f64, f64)]) -> Result<()> {
    let mut sorted = evals.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    if let Some(w) = sorted.windows(2).find(|w| w[1].1 < w[0].1) {
        return Err(Error::NonCrossing(format!(
            "rho({}) = {} but rho({}) = {}",
            w[0].0, w[0].1, w[1].0, w[1].1
        )));
    }
    Ok(())
}

/// Bisection on the predicate `rho(eta) >= target` over `[lo, hi]`.
///
/// Requires `rho(lo) < target <= rho(hi)`. Performs exactly
/// [`bisection_steps`] halvings and returns the midpoint of the final
/// bracket. Any evaluation that breaks monotonicity of `rho` is an error.
pub fn bisect_rho<F>(mut rho: F, lo: f64, hi: f64, target: f64, tol: f64) -> Result<Bisection>
where
    F: FnMut(f64) -> Result<f64>,
{
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "bisection needs lo < hi, got [{lo}, {hi}]"
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tol must be positive, got {tol}")));
    }
    let r_lo = rho(lo)?;
    let r_hi = rho(hi)?;
    let mut evaluations = vec![(lo, r_lo), (hi, r_hi)];
    if !(r_lo < target) {
        return Err(Error::Bracket(format!(
            "rho({lo}) = {r_lo} already reaches the target {target}"
        )));
    }
    if !(r_hi >= target) {
        return Err(Error::Bracket(format!(
            "rho({hi}) = {r_hi} stays below the target {target}"
        )));
    }

    let (mut a, mut b) = (lo, hi);
    let halvings = bisection_steps(hi - lo, tol);
    for _ in 0..halvings {
        let mid = 0.5 * (a + b);
        let r = rho(mid)?;
        evaluations.push((mid, r));
        check_monotone(&evaluations)?;
        if r >= target {
            b = mid;
        } else {
            a = mid;
        }
    }
    Ok(Bisection {
        eta_star: 0.5 * (a + b),
        lo: a,
        hi: b,
        halvings,
        evaluations,
    })
}

/// Sweet-spot learning rate: bisection on rho estimated from `n_inits`
/// centers at each probed learning rate.
#[allow(clippy::too_many_arguments)]
pub fn find_sweet_spot(
    spec: &NetworkSpec,
    split: &SplitDataset,
    eta_lo: f64,
    eta_hi: f64,
    cfg: &TrainConfig,
    pcfg: &PerturbationConfig,
    scheme: InitScheme,
    n_inits: usize,
    rho_target: f64,
    tol: f64,
    master_seed: u64,
) -> Result<Bisection> {
    if !(eta_lo > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "eta_lo must be positive, got {eta_lo}"
        )));
    }
    bisect_rho(
        |eta| {
            let cfg = TrainConfig {
                eta,
                ..cfg.clone()
            };
            let (est, _) =
                lyapunov::estimate_nmle(spec, split, &cfg, pcfg, scheme, n_inits, master_seed)?;
            log::info!("rho({eta}) = {}", est.rho);
            Ok(est.rho)
        },
        eta_lo,
        eta_hi,
        rho_target,
        tol,
    )
}
