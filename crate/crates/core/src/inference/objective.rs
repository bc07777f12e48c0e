use crate::autodiff::{Tape, Tensor, Var};
use crate::dynamics::{OuPrior, Partition, WeightState};
use crate::error::{Error, Result};
use crate::solvers::{derive_seed, BrownianPath, IntegrateOptions};

use super::model::Psdebnn;
use super::params::ParamStore;

/// `u_θ = (f_p - f_q) / σ` on the stochastic coordinates, given the full
/// drift `fq` (`[1, d_w]`) already evaluated at `w`.
pub fn u_theta(
    tape: &mut Tape,
    w: Var,
    fq: Var,
    prior: &OuPrior,
    sigma: f64,
    partition: &Partition,
) -> Result<Var> {
    if !(sigma > 0.0) {
        return Err(Error::Config(format!("u_θ needs σ > 0, got {sigma}")));
    }
    let ws = tape.gather_cols(w, partition.stochastic())?;
    let fp = prior.drift_on(tape, ws)?;
    let fq_s = tape.gather_cols(fq, partition.stochastic())?;
    let diff = tape.sub(fp, fq_s)?;
    tape.scale(diff, 1.0 / sigma)
}

/// Plain-value `u_θ(t, w)` for a model's drift and prior.
pub fn u_theta_value(model: &Psdebnn, t: f64, w: &WeightState, params: &ParamStore) -> Result<Vec<f64>> {
    let fq = model.dynamics.f_q_eval(t, w, params)?;
    let mut tape = Tape::new();
    let wv = tape.leaf(Tensor::row(w.w.clone()));
    let fqv = tape.leaf(Tensor::row(fq));
    let u = u_theta(
        &mut tape,
        wv,
        fqv,
        &model.dynamics.prior,
        model.config.sigma,
        &model.dynamics.partition,
    )?;
    Ok(tape.value(u).data().to_vec())
}

/// Monte Carlo ELBO estimate and its parts.
#[derive(Clone, Debug, PartialEq)]
pub struct ElboBreakdown {
    /// Scaled log-likelihood `Σ_batch log p(y|x,w) · N/B`, averaged over
    /// posterior samples.
    pub log_likelihood: f64,
    /// Estimate of `∫_{t₁}^{t₂} ‖u_θ‖² dt`, averaged over samples.
    pub kl_integral: f64,
    pub kappa: f64,
    /// `log_likelihood - κ · kl_integral`
    pub elbo: f64,
    pub num_posterior_samples: usize,
}

/// One minibatch ELBO evaluation.
#[derive(Clone, Debug)]
pub struct ElboRequest<'a> {
    /// `[B, d_x]`
    pub x: &'a Tensor,
    pub labels: &'a [usize],
    pub kappa: f64,
    pub num_samples: usize,
    /// Multiplies the batch log-likelihood (`dataset_size / batch_size`).
    pub likelihood_scale: f64,
    /// Base seed; posterior sample `s` uses `derive_seed(seed, s)`.
    pub seed: u64,
    /// Number of batch shards evaluated concurrently (1 = serial).
    pub threads: usize,
}

impl ElboRequest<'_> {
    fn validate(&self) -> Result<()> {
        if self.num_samples == 0 {
            return Err(Error::Contract("num_samples must be at least 1".into()));
        }
        let (rows, _) = self.x.dims2()?;
        if rows != self.labels.len() {
            return Err(Error::Shape(format!("{rows} inputs but {} labels", self.labels.len())));
        }
        if self.kappa < 0.0 {
            return Err(Error::Config(format!("κ must be nonnegative, got {}", self.kappa)));
        }
        Ok(())
    }
}

/// Terms of one posterior sample on one shard.
struct ShardTerms {
    log_likelihood: f64,
    kl: f64,
    grads: Option<ParamStore>,
}

fn shard_rows(x: &Tensor, labels: &[usize], start: usize, end: usize) -> Result<(Tensor, Vec<usize>)> {
    let (_, cols) = x.dims2()?;
    let data = x.data()[start * cols..end * cols].to_vec();
    Ok((Tensor::new(vec![end - start, cols], data)?, labels[start..end].to_vec()))
}

#[allow(clippy::too_many_arguments)]
fn shard_terms(
    model: &Psdebnn,
    params: &ParamStore,
    x: &Tensor,
    labels: &[usize],
    noise: &BrownianPath,
    req: &ElboRequest<'_>,
    include_kl: bool,
    grad_scale: Option<f64>,
) -> Result<ShardTerms> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let pass = model.forward(
        &mut tape,
        &bound,
        x,
        noise,
        IntegrateOptions {
            record: false,
            compute_kl: include_kl,
        },
    )?;
    let logits = pass
        .logits
        .ok_or_else(|| Error::Config("ELBO needs a classification head".into()))?;
    let nll = tape.cross_entropy(logits, labels)?;
    let nll_scaled = tape.scale(nll, req.likelihood_scale)?;
    let log_likelihood = -tape.value(nll_scaled).item()?;
    let (loss, kl) = match pass.joint.kl_integral {
        Some(kl) if include_kl => {
            let klv = tape.value(kl).item()?;
            let weighted = tape.scale(kl, req.kappa)?;
            (tape.add(nll_scaled, weighted)?, klv)
        }
        _ => (nll_scaled, 0.0),
    };
    if !log_likelihood.is_finite() || !kl.is_finite() {
        return Err(Error::Numerics {
            step: None,
            detail: "non-finite ELBO term".into(),
        });
    }
    let grads = match grad_scale {
        Some(scale) => {
            let g = tape.backward(loss)?;
            let mut store = params.clone();
            store.zero_grad();
            store.accumulate_from(&g, &bound, scale)?;
            Some(store)
        }
        None => None,
    };
    Ok(ShardTerms {
        log_likelihood,
        kl,
        grads,
    })
}

fn run(model: &Psdebnn, params: &ParamStore, req: &ElboRequest<'_>, grad_scale: Option<f64>) -> Result<(ElboBreakdown, Option<Vec<ParamStore>>)> {
    req.validate()?;
    let (rows, _) = req.x.dims2()?;
    let shards = req.threads.clamp(1, rows.max(1));
    let bounds: Vec<(usize, usize)> = (0..shards)
        .map(|i| (i * rows / shards, (i + 1) * rows / shards))
        .collect();
    let per_sample_scale = grad_scale.map(|s| s / req.num_samples as f64);

    let mut ll_sum = 0.0;
    let mut kl_sum = 0.0;
    let mut grad_parts = Vec::new();
    for s in 0..req.num_samples {
        let noise = model.sample_noise(derive_seed(req.seed, s as u64))?;
        let eval = |i: usize| -> Result<ShardTerms> {
            let (a, b) = bounds[i];
            if shards == 1 {
                return shard_terms(model, params, req.x, req.labels, &noise, req, true, per_sample_scale);
            }
            let (xs, ys) = shard_rows(req.x, req.labels, a, b)?;
            shard_terms(model, params, &xs, &ys, &noise, req, i == 0, per_sample_scale)
        };
        let terms: Vec<ShardTerms> = if shards == 1 {
            vec![eval(0)?]
        } else {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(shards)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            pool.install(|| {
                use rayon::prelude::*;
                (0..shards).into_par_iter().map(eval).collect::<Result<Vec<_>>>()
            })?
        };
        for t in terms {
            ll_sum += t.log_likelihood;
            kl_sum += t.kl;
            if let Some(g) = t.grads {
                grad_parts.push(g);
            }
        }
    }
    let n = req.num_samples as f64;
    let log_likelihood = ll_sum / n;
    let kl_integral = kl_sum / n;
    let elbo = log_likelihood - req.kappa * kl_integral;
    if !elbo.is_finite() {
        return Err(Error::Numerics {
            step: None,
            detail: "non-finite ELBO".into(),
        });
    }
    Ok((
        ElboBreakdown {
            log_likelihood,
            kl_integral,
            kappa: req.kappa,
            elbo,
            num_posterior_samples: req.num_samples,
        },
        grad_scale.map(|_| grad_parts),
    ))
}

/// Monte Carlo ELBO on a minibatch (values only).
pub fn elbo(model: &Psdebnn, params: &ParamStore, req: &ElboRequest<'_>) -> Result<ElboBreakdown> {
    Ok(run(model, params, req, None)?.0)
}

/// Evaluates the ELBO and adds `∇(-scale · ELBO)` into `params`' gradient
/// slots. Shard gradients are summed in shard order, so results depend only
/// on the thread count, not on scheduling.
pub fn elbo_with_grad(model: &Psdebnn, params: &mut ParamStore, req: &ElboRequest<'_>, scale: f64) -> Result<ElboBreakdown> {
    let (breakdown, parts) = run(model, params, req, Some(scale))?;
    for part in parts.unwrap_or_default() {
        for p in part.params() {
            params.accumulate_grad(&p.name, &p.grad)?;
        }
    }
    Ok(breakdown)
}
