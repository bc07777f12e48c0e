use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{self, PredictionSet, Source};
use crate::solvers::derive_seed;

use super::model::Psdebnn;
use super::objective::{elbo_with_grad, ElboRequest};
use super::params::{AdamConfig, ParamStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub adam: AdamConfig,
    /// κ before the `1/r_s` scaling.
    #[serde(default = "default_kappa")]
    pub kappa_base: f64,
    /// Use `κ = κ_base / r_s` (the effective stochastic fraction).
    #[serde(default = "default_true")]
    pub scale_kappa_by_ratio: bool,
    #[serde(default = "one")]
    pub train_samples: usize,
    #[serde(default = "default_eval_samples")]
    pub eval_samples: usize,
    #[serde(default = "default_bins")]
    pub ece_bins: usize,
    #[serde(default = "default_clip")]
    pub clip_norm: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub threads: usize,
    /// Stop once validation accuracy reaches this value.
    #[serde(default)]
    pub stop_at_val_accuracy: Option<f64>,
}

fn default_batch() -> usize {
    128
}
fn default_kappa() -> f64 {
    1e-3
}
fn default_true() -> bool {
    true
}
fn one() -> usize {
    1
}
fn default_eval_samples() -> usize {
    8
}
fn default_bins() -> usize {
    metrics::DEFAULT_ECE_BINS
}
fn default_clip() -> f64 {
    10.0
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1,
            batch_size: default_batch(),
            adam: AdamConfig::default(),
            kappa_base: default_kappa(),
            scale_kappa_by_ratio: true,
            train_samples: 1,
            eval_samples: default_eval_samples(),
            ece_bins: default_bins(),
            clip_norm: default_clip(),
            seed: 0,
            threads: 1,
            stop_at_val_accuracy: None,
        }
    }
}

impl TrainConfig {
    pub fn effective_kappa(&self, model: &Psdebnn) -> f64 {
        let r = model.effective_ratio();
        if self.scale_kappa_by_ratio && r > 0.0 {
            self.kappa_base / r
        } else {
            self.kappa_base
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.train_samples == 0 || self.eval_samples == 0 {
            return Err(Error::Config("batch_size, train_samples and eval_samples must be positive".into()));
        }
        if !(self.adam.lr >= 0.0) || !(self.kappa_base >= 0.0) || !(self.clip_norm > 0.0) {
            return Err(Error::Config("lr and κ must be nonnegative and clip_norm positive".into()));
        }
        Ok(())
    }
}

/// Accuracy, calibration and entropy of the averaged predictive.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub ece: f64,
    pub mean_entropy: f64,
    pub brownian_draws: usize,
    pub u_evaluations: usize,
    pub seconds: f64,
}

/// Averages `num_samples` posterior samples and scores them against the
/// labels of `data`.
pub fn evaluate(
    model: &Psdebnn,
    params: &ParamStore,
    data: &Dataset,
    num_samples: usize,
    seed: u64,
    ece_bins: usize,
) -> Result<(EvalReport, PredictionSet)> {
    let start = Instant::now();
    let pred = model.predict_with_stats(params, &data.features, num_samples, seed)?;
    let set = PredictionSet::new(pred.probs, Some(data.labels()?.to_vec()), Source::Id)?;
    let report = EvalReport {
        accuracy: metrics::accuracy(&set)?,
        ece: metrics::ece(&set, ece_bins)?,
        mean_entropy: metrics::mean(&set.entropies()),
        brownian_draws: pred.brownian_draws,
        u_evaluations: num_samples * model.grid().stochastic_steps(),
        seconds: start.elapsed().as_secs_f64(),
    };
    Ok((report, set))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub elbo: f64,
    pub log_likelihood: f64,
    pub kl: f64,
    pub val_accuracy: f64,
    pub val_ece: f64,
    pub grad_norm: f64,
    pub seconds: f64,
    /// Non-empty when the epoch was aborted.
    pub event: String,
}

impl EpochLog {
    pub const CSV_HEADER: &'static str = "epoch,elbo,log_likelihood,kl,val_accuracy,val_ece,grad_norm,seconds,event";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.elbo,
            self.log_likelihood,
            self.kl,
            self.val_accuracy,
            self.val_ece,
            self.grad_norm,
            self.seconds,
            self.event.replace(',', ";")
        )
    }
}

pub fn write_log_csv<W: Write>(log: &[EpochLog], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{}", EpochLog::CSV_HEADER)?;
    for row in log {
        writeln!(out, "{}", row.csv_row())?;
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters after the last epoch.
    pub params: ParamStore,
    /// Parameters at the best validation accuracy.
    pub best_params: ParamStore,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub log: Vec<EpochLog>,
    pub kappa: f64,
}

/// Adam on `-ELBO / N_train`, fresh Brownian paths per minibatch.
///
/// A numerics failure aborts the epoch, restores the best checkpoint so far
/// (or the initial parameters), and is logged in the `event` column.
pub fn train(
    model: &Psdebnn,
    init: ParamStore,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    train_set.labels()?;
    let n = train_set.len();
    if n == 0 {
        return Err(Error::Contract("empty training set".into()));
    }
    let kappa = cfg.effective_kappa(model);
    let batch = cfg.batch_size.min(n);
    let mut params = init;
    let mut best_params = params.clone();
    let mut best_epoch = 0;
    let mut best_val = f64::NEG_INFINITY;
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, epoch as u64)));
        let (mut elbo, mut ll, mut kl, mut gnorm) = (0.0, 0.0, 0.0, 0.0);
        let mut batches = 0usize;
        let mut event = String::new();

        for (b, chunk) in order.chunks(batch).enumerate() {
            let part = train_set.select(chunk)?;
            let req = ElboRequest {
                x: &part.features,
                labels: part.labels()?,
                kappa,
                num_samples: cfg.train_samples,
                likelihood_scale: n as f64 / chunk.len() as f64,
                seed: derive_seed(derive_seed(cfg.seed ^ 0x5eed, epoch as u64), b as u64),
                threads: cfg.threads,
            };
            params.zero_grad();
            let step = elbo_with_grad(model, &mut params, &req, 1.0 / n as f64).and_then(|breakdown| {
                let norm = params.grad_norm();
                if !norm.is_finite() {
                    return Err(Error::Numerics {
                        step: None,
                        detail: "non-finite gradient".into(),
                    });
                }
                Ok((breakdown, norm))
            });
            match step {
                Ok((breakdown, norm)) => {
                    params.clip_grad_norm(cfg.clip_norm);
                    params.adam_step(&cfg.adam);
                    elbo += breakdown.elbo;
                    ll += breakdown.log_likelihood;
                    kl += breakdown.kl_integral;
                    gnorm += norm;
                    batches += 1;
                }
                Err(e @ Error::Numerics { .. }) => {
                    event = format!("aborted at batch {b}: {e}");
                    params = best_params.clone();
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        // guard against a silent non-finite update that slipped past the loss
        if event.is_empty() && !params.flat_values().iter().all(|v| v.is_finite()) {
            event = "non-finite parameters after update".into();
            params = best_params.clone();
        }

        let (val_acc, val_ece) = if val_set.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let (report, _) = evaluate(model, &params, val_set, cfg.eval_samples, derive_seed(cfg.seed, 0xe7a1), cfg.ece_bins)?;
            (report.accuracy, report.ece)
        };
        if val_acc > best_val || (best_val == f64::NEG_INFINITY && event.is_empty()) {
            best_val = val_acc;
            best_epoch = epoch;
            best_params = params.clone();
        }
        let m = batches.max(1) as f64;
        log.push(EpochLog {
            epoch,
            elbo: elbo / m,
            log_likelihood: ll / m,
            kl: kl / m,
            val_accuracy: val_acc,
            val_ece,
            grad_norm: gnorm / m,
            seconds: start.elapsed().as_secs_f64(),
            event,
        });
        if let Some(target) = cfg.stop_at_val_accuracy {
            if val_acc >= target {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        params,
        best_params,
        best_epoch,
        best_val_accuracy: best_val,
        log,
        kappa,
    })
}
