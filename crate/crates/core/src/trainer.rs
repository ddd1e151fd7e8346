//! Full-batch gradient descent with a constant learning rate.
//!
//! One epoch is one gradient step over the whole training set. No shuffling,
//! no mini-batches, so a run is a deterministic function of its inputs.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::datasets::SplitDataset;
use crate::error::{Error, Result};
use crate::model::{NetworkSpec, ParamVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub eta: f64,
    pub max_epochs: usize,
    pub target_accuracy: f64,
    pub reg_lambda: f64,
    /// Epochs between test-set evaluations.
    pub eval_every: usize,
    /// Recorded with the run for bookkeeping. Full-batch GD draws no random
    /// numbers; initializations are seeded by the caller.
    pub seed: u64,
    /// Stop as soon as the target test accuracy is reached.
    pub stop_at_target: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            eta: 0.01,
            max_epochs: 2000,
            target_accuracy: 0.9,
            reg_lambda: 0.0,
            eval_every: 1,
            seed: 0,
            stop_at_target: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        // eta = 0 is allowed: it freezes the trajectory, which the divergence
        // machinery uses as a null case.
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "eta must be a finite non-negative number, got {}",
                self.eta
            )));
        }
        if !(self.target_accuracy > 0.0 && self.target_accuracy <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "target_accuracy must lie in (0, 1], got {}",
                self.target_accuracy
            )));
        }
        if !(self.reg_lambda >= 0.0 && self.reg_lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "reg_lambda must be non-negative, got {}",
                self.reg_lambda
            )));
        }
        if self.eval_every == 0 {
            return Err(Error::InvalidArgument("eval_every must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    /// Training loss evaluated during each epoch, before its update.
    pub loss_per_epoch: Vec<f64>,
    /// `(epoch, test accuracy)` after the update of that epoch.
    pub test_accuracy: Vec<(usize, f64)>,
    pub tau: Option<usize>,
    pub final_params: ParamVector,
    pub diverged: bool,
    pub diverged_at: Option<usize>,
}

impl TrajectoryRecord {
    pub fn epochs(&self) -> usize {
        self.loss_per_epoch.len()
    }

    /// Number of epoch-over-epoch loss increases.
    pub fn loss_increases(&self) -> usize {
        self.loss_per_epoch.windows(2).filter(|w| w[1] > w[0]).count()
    }

    /// CSV with columns `epoch,train_loss,test_accuracy`; accuracy is blank
    /// for epochs without a test evaluation.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["epoch", "train_loss", "test_accuracy"])?;
        let mut acc = self.test_accuracy.iter().peekable();
        for (i, loss) in self.loss_per_epoch.iter().enumerate() {
            let epoch = i + 1;
            let a = match acc.peek() {
                Some(&&(e, a)) if e == epoch => {
                    acc.next();
                    a.to_string()
                }
                _ => String::new(),
            };
            out.write_record([epoch.to_string(), loss.to_string(), a])?;
        }
        out.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }
}

/// `params - eta * grad`, elementwise.
pub fn gd_step(params: &ParamVector, grad: &ParamVector, eta: f64) -> Result<ParamVector> {
    let mut next = params.clone();
    gd_step_in_place(&mut next, grad, eta)?;
    Ok(next)
}

pub fn gd_step_in_place(params: &mut ParamVector, grad: &ParamVector, eta: f64) -> Result<()> {
    if params.len() != grad.len() {
        return Err(Error::Dimension(format!(
            "{} parameters but {} gradient entries",
            params.len(),
            grad.len()
        )));
    }
    for (w, g) in params.as_mut_slice().iter_mut().zip(grad.iter()) {
        *w -= eta * g;
    }
    Ok(())
}

/// First recorded epoch whose test accuracy reaches `target`.
pub fn time_to_accuracy(rec: &TrajectoryRecord, target: f64) -> Option<usize> {
    rec.test_accuracy
        .iter()
        .filter(|&&(_, a)| a >= target)
        .map(|&(e, _)| e)
        .min()
}

/// State of a single GD trajectory advanced one epoch at a time.
pub struct Stepper<'a> {
    spec: &'a NetworkSpec,
    split: &'a SplitDataset,
    eta: f64,
    reg_lambda: f64,
    params: ParamVector,
    epoch: usize,
    diverged: bool,
}

impl<'a> Stepper<'a> {
    pub fn new(
        spec: &'a NetworkSpec,
        split: &'a SplitDataset,
        params0: ParamVector,
        eta: f64,
        reg_lambda: f64,
    ) -> Result<Self> {
        if params0.len() != spec.param_count() {
            return Err(Error::Dimension(format!(
                "initial parameters have {} entries, network needs {}",
                params0.len(),
                spec.param_count()
            )));
        }
        let diverged = !params0.is_finite();
        Ok(Self {
            spec,
            split,
            eta,
            reg_lambda,
            params: params0,
            epoch: 0,
            diverged,
        })
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn diverged(&self) -> bool {
        self.diverged
    }

    /// Run one epoch. Returns the loss evaluated before the update, or
    /// `None` once the trajectory has diverged.
    pub fn step(&mut self) -> Result<Option<f64>> {
        if self.diverged {
            return Ok(None);
        }
        let train = &self.split.train;
        let ev = match self.spec.loss_and_gradient(
            &self.params,
            train.features().view(),
            train.labels(),
            self.reg_lambda,
        ) {
            Ok(ev) => ev,
            Err(Error::NonFinite(_)) => {
                self.diverged = true;
                return Ok(None);
            }
            Err(e) => return Err(e),
        };
        gd_step_in_place(&mut self.params, &ev.gradient, self.eta)?;
        self.epoch += 1;
        if !self.params.is_finite() {
            self.diverged = true;
        }
        Ok(Some(ev.loss))
    }

    pub fn test_accuracy(&self) -> Result<Option<f64>> {
        let test = &self.split.test;
        match self
            .spec
            .accuracy(&self.params, test.features().view(), test.labels())
        {
            Ok(a) => Ok(Some(a)),
            Err(Error::NonFinite(_)) => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn into_params(self) -> ParamVector {
        self.params
    }
}

pub fn train(
    spec: &NetworkSpec,
    split: &SplitDataset,
    params0: &ParamVector,
    cfg: &TrainConfig,
) -> Result<TrajectoryRecord> {
    train_observed(spec, split, params0, cfg, |_, _| Ok(()))
}

/// [`train`] with a callback invoked after every completed epoch with the
/// epoch number and the updated parameters.
pub fn train_observed<F>(
    spec: &NetworkSpec,
    split: &SplitDataset,
    params0: &ParamVector,
    cfg: &TrainConfig,
    mut observer: F,
) -> Result<TrajectoryRecord>
where
    F: FnMut(usize, &ParamVector) -> Result<()>,
{
    cfg.validate()?;
    let mut stepper = Stepper::new(spec, split, params0.clone(), cfg.eta, cfg.reg_lambda)?;
    let mut loss_per_epoch = Vec::new();
    let mut test_accuracy = Vec::new();
    let mut tau = None;
    let mut diverged_at = None;

    for t in 0..cfg.max_epochs {
        match stepper.step()? {
            Some(loss) => loss_per_epoch.push(loss),
            None => {
                diverged_at = Some(t);
                break;
            }
        }
        let epoch = stepper.epoch();
        if stepper.diverged() {
            diverged_at = Some(epoch);
            break;
        }
        observer(epoch, stepper.params())?;
        if epoch % cfg.eval_every == 0 {
            match stepper.test_accuracy()? {
                Some(acc) => {
                    test_accuracy.push((epoch, acc));
                    if tau.is_none() && acc >= cfg.target_accuracy {
                        tau = Some(epoch);
                        if cfg.stop_at_target {
                            break;
                        }
                    }
                }
                None => {
                    diverged_at = Some(epoch);
                    break;
                }
            }
        }
    }

    let diverged = diverged_at.is_some();
    Ok(TrajectoryRecord {
        loss_per_epoch,
        test_accuracy,
        tau: if diverged { None } else { tau },
        final_params: stepper.into_params(),
        diverged,
        diverged_at,
    })
}
