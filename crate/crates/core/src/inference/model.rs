use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{logsumexp, Tape, Tensor, Var};
use crate::dynamics::{augment_batch, Dynamics, DynamicsSpec};
use crate::error::{Error, Result};
use crate::solvers::{
    derive_seed, integrate_joint, sample_brownian, BrownianPath, IntegrateOptions, JointInputs, JointOutput,
    JumpMode, PathRecord, RegimeSchedule, StepGrid,
};

use super::params::{BoundParams, ParamStore};

/// Initialization knobs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitConfig {
    /// Start `f_q` as the zero function (or as the prior, with a residual
    /// drift) by zeroing its output layer.
    #[serde(default = "default_true")]
    pub drift_zero_last: bool,
    #[serde(default = "one")]
    pub hidden_gain: f64,
    #[serde(default = "one")]
    pub drift_gain: f64,
    #[serde(default = "one")]
    pub head_gain: f64,
    /// Overrides the random `w₀` (weight-only toys use this).
    #[serde(default)]
    pub w0: Option<Vec<f64>>,
}

fn default_true() -> bool {
    true
}
fn one() -> f64 {
    1.0
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            drift_zero_last: true,
            hidden_gain: 1.0,
            drift_gain: 1.0,
            head_gain: 1.0,
            w0: None,
        }
    }
}

/// Complete, serializable model description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub dynamics: DynamicsSpec,
    pub schedule: RegimeSchedule,
    /// Constant diffusion on stochastic coordinates.
    pub sigma: f64,
    /// Classes of the linear classification head; 0 for no head.
    #[serde(default)]
    pub num_classes: usize,
    #[serde(default)]
    pub init: InitConfig,
}

/// A partially stochastic infinitely deep BNN.
#[derive(Clone, Debug)]
pub struct Psdebnn {
    pub config: ModelConfig,
    pub dynamics: Dynamics,
    grid: StepGrid,
}

/// Tape outputs of one stochastic forward pass.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    /// `[B, classes]`
    pub logits: Option<Var>,
    pub joint: JointOutput,
}

impl Psdebnn {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.schedule.validate()?;
        let d_w = config.dynamics.resolve_weight_dim()?;
        let partition = config.schedule.partition(d_w)?;
        let dynamics = config.dynamics.build(partition)?;
        let grid = config.schedule.grid()?;
        if !(config.sigma >= 0.0) || !config.sigma.is_finite() {
            return Err(Error::Config(format!("σ must be a nonnegative finite number, got {}", config.sigma)));
        }
        if grid.stochastic_steps() > 0 && !dynamics.partition.stochastic().is_empty() && config.sigma == 0.0 {
            return Err(Error::Config(
                "σ = 0 inside the stochastic window leaves u_θ undefined".into(),
            ));
        }
        if config.num_classes > 0 && dynamics.hidden.is_none() {
            return Err(Error::Config("a classification head needs a hidden network".into()));
        }
        if let Some(w0) = &config.init.w0 {
            if w0.len() != d_w {
                return Err(Error::Config(format!("init.w0 has {} entries, d_w = {d_w}", w0.len())));
            }
        }
        Ok(Psdebnn {
            config,
            dynamics,
            grid,
        })
    }

    pub fn schedule(&self) -> &RegimeSchedule {
        &self.config.schedule
    }

    pub fn grid(&self) -> &StepGrid {
        &self.grid
    }

    pub fn weight_dim(&self) -> usize {
        self.dynamics.weight_dim()
    }

    pub fn state_dim(&self) -> usize {
        self.dynamics.state_dim()
    }

    /// Fraction of the weight path that is stochastic: `t₂ - t₁`, times
    /// `|S| / d_w` under a horizontal cut.
    pub fn effective_ratio(&self) -> f64 {
        let s = &self.config.schedule;
        let frac = self.dynamics.partition.stochastic().len() as f64 / self.weight_dim().max(1) as f64;
        s.stochasticity_ratio() * frac
    }

    /// Brownian draws needed for one posterior sample.
    pub fn draws_per_sample(&self) -> usize {
        self.grid.stochastic_steps() * self.dynamics.partition.stochastic().len()
    }

    fn learnable_jump(&self) -> bool {
        self.config.schedule.jumps() && self.config.schedule.jump_mode == JumpMode::Learnable
    }

    /// Registers `w0`, drift parameters, optional `w_t2`, and the head.
    pub fn init_params(&self, seed: u64) -> Result<ParamStore> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let init = &self.config.init;
        let d_w = self.weight_dim();
        let mut store = ParamStore::new();

        let w0 = match (&init.w0, &self.dynamics.hidden) {
            (Some(w0), _) => w0.clone(),
            (None, Some(net)) => net.spec.init(&mut rng, false, init.hidden_gain),
            (None, None) => vec![0.0; d_w],
        };
        store.register("w0", Tensor::row(w0))?;

        let nets = self.dynamics.drift.nets();
        for ((name, _), spec) in self.dynamics.drift.param_shapes().into_iter().zip(nets) {
            let theta = spec.init(&mut rng, init.drift_zero_last, init.drift_gain);
            store.register(name, Tensor::row(theta))?;
        }

        if self.learnable_jump() {
            let w_t2 = match &self.dynamics.hidden {
                Some(net) => net.spec.init(&mut rng, false, init.hidden_gain),
                None => vec![0.0; d_w],
            };
            store.register("w_t2", Tensor::row(w_t2))?;
        }

        if self.config.num_classes > 0 {
            let d_h = self.state_dim();
            let c = self.config.num_classes;
            let std = init.head_gain / (d_h as f64).sqrt();
            let w: Vec<f64> = (0..d_h * c)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    std * z
                })
                .collect();
            store.register("head_w", Tensor::new(vec![d_h, c], w)?)?;
            store.register("head_b", Tensor::zeros(&[1, c]))?;
        }
        Ok(store)
    }

    /// Fresh Brownian increments for one posterior sample.
    pub fn sample_noise(&self, seed: u64) -> Result<BrownianPath> {
        sample_brownian(
            seed,
            self.grid.stochastic_steps(),
            self.dynamics.partition.stochastic().len(),
            self.grid.window_dt(),
        )
    }

    /// One stochastic forward pass on the batch `x` (`[B, d_x]`).
    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &BoundParams,
        x: &Tensor,
        noise: &BrownianPath,
        opts: IntegrateOptions,
    ) -> Result<ForwardPass> {
        let h0 = match &self.dynamics.hidden {
            Some(_) => {
                let (_, d_x) = x.dims2()?;
                if d_x != self.dynamics.input_dim {
                    return Err(Error::Shape(format!(
                        "model expects {} input features, got {d_x}",
                        self.dynamics.input_dim
                    )));
                }
                let xv = tape.leaf(x.clone());
                Some(augment_batch(tape, xv, self.dynamics.augment_dim)?)
            }
            None => None,
        };
        let drift_params = self
            .dynamics
            .drift
            .param_shapes()
            .iter()
            .map(|(name, _)| params.require(name))
            .collect::<Result<Vec<_>>>()?;
        let drift = self.dynamics.drift.bind(tape, &drift_params)?;
        let inputs = JointInputs {
            w0: params.require("w0")?,
            w_t2: params.get("w_t2"),
            drift: &drift,
            h0,
        };
        let joint = integrate_joint(
            tape,
            &self.dynamics,
            inputs,
            &self.config.schedule,
            self.config.sigma,
            noise,
            opts,
        )?;
        let logits = match (self.config.num_classes, joint.h1) {
            (0, _) | (_, None) => None,
            (_, Some(h1)) => {
                let z = tape.matmul(h1, params.require("head_w")?)?;
                Some(tape.add_row(z, params.require("head_b")?)?)
            }
        };
        Ok(ForwardPass { logits, joint })
    }

    /// Records one sample path of `w` (and of `h` for the first row of `x`)
    /// at every step boundary, driven by the Brownian path for `seed`.
    pub fn sample_path(&self, params: &ParamStore, x: Option<&Tensor>, seed: u64) -> Result<PathRecord> {
        let noise = self.sample_noise(seed)?;
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let empty = Tensor::zeros(&[1, self.dynamics.input_dim]);
        let x = x.filter(|_| self.dynamics.hidden.is_some()).unwrap_or(&empty);
        let pass = self.forward(
            &mut tape,
            &bound,
            x,
            &noise,
            IntegrateOptions {
                record: true,
                compute_kl: self.config.sigma > 0.0,
            },
        )?;
        pass.joint
            .record
            .ok_or_else(|| Error::Contract("integrator did not return a path record".into()))
    }

    /// Class probabilities for one posterior sample.
    pub fn predict_sample(&self, params: &ParamStore, x: &Tensor, noise: &BrownianPath) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let pass = self.forward(
            &mut tape,
            &bound,
            x,
            noise,
            IntegrateOptions {
                record: false,
                compute_kl: false,
            },
        )?;
        let logits = pass
            .logits
            .ok_or_else(|| Error::Config("model has no classification head".into()))?;
        Ok(softmax_rows(tape.value(logits)))
    }

    /// Mean predictive distribution over `num_samples` posterior samples;
    /// sample `s` uses the Brownian path seeded by `derive_seed(seed, s)`.
    pub fn predict(&self, params: &ParamStore, x: &Tensor, num_samples: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        Ok(self.predict_with_stats(params, x, num_samples, seed)?.probs)
    }

    pub fn predict_with_stats(
        &self,
        params: &ParamStore,
        x: &Tensor,
        num_samples: usize,
        seed: u64,
    ) -> Result<Prediction> {
        if num_samples == 0 {
            return Err(Error::Contract("num_samples must be at least 1".into()));
        }
        let mut sum: Option<Vec<Vec<f64>>> = None;
        let mut draws = 0;
        for s in 0..num_samples {
            let noise = self.sample_noise(derive_seed(seed, s as u64))?;
            draws += noise.draws();
            let p = self.predict_sample(params, x, &noise)?;
            match sum.as_mut() {
                None => sum = Some(p),
                Some(acc) => {
                    for (row, prow) in acc.iter_mut().zip(&p) {
                        for (a, b) in row.iter_mut().zip(prow) {
                            *a += b;
                        }
                    }
                }
            }
        }
        let n = num_samples as f64;
        let mut probs = sum.expect("at least one sample");
        for row in &mut probs {
            for v in row.iter_mut() {
                *v /= n;
            }
        }
        Ok(Prediction {
            probs,
            brownian_draws: draws,
        })
    }
}

/// Output of [`Psdebnn::predict_with_stats`].
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub probs: Vec<Vec<f64>>,
    pub brownian_draws: usize,
}

pub fn softmax_rows(logits: &Tensor) -> Vec<Vec<f64>> {
    let cols = logits.shape().get(1).copied().unwrap_or(0);
    logits
        .data()
        .chunks(cols.max(1))
        .map(|row| {
            let lse = logsumexp(row);
            row.iter().map(|z| (z - lse).exp()).collect()
        })
        .collect()
}
