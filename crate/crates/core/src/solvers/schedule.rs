use serde::{Deserialize, Serialize};

use crate::dynamics::Partition;
use crate::error::{Error, Result};

/// What happens to `w` when the stochastic window closes at `t₂ < 1`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JumpMode {
    /// Keep integrating from the sampled value.
    #[default]
    Continue,
    /// Reset to a configured constant vector (zeros unless given).
    FixedAPriori,
    /// Reset to the trainable parameter `w_t2`.
    Learnable,
}

/// Fixed-step scheme for deterministic coordinates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Euler,
    #[default]
    Midpoint,
    Rk4,
}

/// How the weight vector is split horizontally.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HorizontalCut {
    /// `S` = first `m1` coordinates.
    Leading { m1: usize },
    /// `S` = first `⌈ratio · d_w⌉` coordinates.
    Ratio { ratio: f64 },
    Indices { stochastic: Vec<usize> },
}

/// Depth partition plan for the weight process.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeSchedule {
    pub t1: f64,
    pub t2: f64,
    #[serde(default)]
    pub jump_mode: JumpMode,
    /// Target of a fixed jump; zeros when absent.
    #[serde(default)]
    pub fixed_jump_value: Option<Vec<f64>>,
    #[serde(default)]
    pub horizontal: Option<HorizontalCut>,
    pub num_steps: usize,
    #[serde(default)]
    pub scheme: Scheme,
}

/// One solver step starting at `t` with size `dt`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Step {
    pub t: f64,
    pub dt: f64,
    pub stochastic: bool,
}

/// Step layout with `t₁` and `t₂` on step boundaries.
#[derive(Clone, Debug, PartialEq)]
pub struct StepGrid {
    pub steps: Vec<Step>,
    /// Number of steps taken before reaching `t₂`.
    pub steps_before_t2: usize,
}

impl StepGrid {
    pub fn stochastic_steps(&self) -> usize {
        self.steps.iter().filter(|s| s.stochastic).count()
    }

    /// Step size inside the stochastic window (zero when it is empty).
    pub fn window_dt(&self) -> f64 {
        self.steps
            .iter()
            .find(|s| s.stochastic)
            .map_or(0.0, |s| s.dt)
    }

    /// Boundary times `t_0 = 0, …, t_N = 1`.
    pub fn times(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.steps.iter().map(|s| s.t).collect();
        out.push(1.0);
        out
    }
}

impl RegimeSchedule {
    /// Fully deterministic schedule (Neural ODE).
    pub fn deterministic(num_steps: usize) -> Self {
        RegimeSchedule {
            t1: 1.0,
            t2: 1.0,
            jump_mode: JumpMode::Continue,
            fixed_jump_value: None,
            horizontal: None,
            num_steps,
            scheme: Scheme::Midpoint,
        }
    }

    /// Stochastic on all of `[0, 1]`.
    pub fn full_sde(num_steps: usize) -> Self {
        RegimeSchedule {
            t1: 0.0,
            t2: 1.0,
            ..RegimeSchedule::deterministic(num_steps)
        }
    }

    /// `t₁ = 0`, `t₂ = r_s`.
    pub fn sde_first(ratio: f64, num_steps: usize) -> Self {
        RegimeSchedule {
            t1: 0.0,
            t2: ratio,
            ..RegimeSchedule::deterministic(num_steps)
        }
    }

    /// `t₁ = 1 - r_s`, `t₂ = 1`.
    pub fn ode_first(ratio: f64, num_steps: usize) -> Self {
        RegimeSchedule {
            t1: 1.0 - ratio,
            t2: 1.0,
            ..RegimeSchedule::deterministic(num_steps)
        }
    }

    /// `r_s = t₂ - t₁`.
    pub fn stochasticity_ratio(&self) -> f64 {
        self.t2 - self.t1
    }

    pub fn is_sde_first(&self) -> bool {
        self.t1 == 0.0
    }

    pub fn is_ode_first(&self) -> bool {
        self.t2 == 1.0
    }

    pub fn has_window(&self) -> bool {
        self.t1 < self.t2
    }

    /// Whether `w` is reset when the window closes.
    pub fn jumps(&self) -> bool {
        self.has_window() && self.t2 < 1.0 && self.jump_mode != JumpMode::Continue
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if !in_unit(self.t1) || !in_unit(self.t2) || self.t1 > self.t2 {
            return Err(Error::Config(format!(
                "cut points must satisfy 0 <= t1 <= t2 <= 1, got t1 = {}, t2 = {}",
                self.t1, self.t2
            )));
        }
        if self.num_steps == 0 {
            return Err(Error::Config("num_steps must be positive".into()));
        }
        if let Some(HorizontalCut::Ratio { ratio }) = &self.horizontal {
            if !(0.0..=1.0).contains(ratio) {
                return Err(Error::Config(format!("horizontal ratio {ratio} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Resolves the horizontal cut for a weight vector of length `d_w`.
    pub fn partition(&self, d_w: usize) -> Result<Option<Partition>> {
        Ok(match &self.horizontal {
            None => None,
            Some(HorizontalCut::Leading { m1 }) => Some(Partition::leading(d_w, *m1)?),
            Some(HorizontalCut::Ratio { ratio }) => {
                let m1 = (ratio * d_w as f64 - 1e-9).ceil().max(0.0) as usize;
                Some(Partition::leading(d_w, m1)?)
            }
            Some(HorizontalCut::Indices { stochastic }) => {
                Some(Partition::new(d_w, stochastic.clone())?)
            }
        })
    }

    /// Distributes `num_steps` over `[0,t₁]`, `[t₁,t₂]`, `[t₂,1]` in
    /// proportion to their lengths (largest remainder), giving every
    /// nonempty regime at least one step.
    pub fn grid(&self) -> Result<StepGrid> {
        self.validate()?;
        let bounds = [(0.0, self.t1, false), (self.t1, self.t2, true), (self.t2, 1.0, false)];
        let lengths: Vec<f64> = bounds.iter().map(|(a, b, _)| b - a).collect();
        let nonempty: Vec<usize> = (0..3).filter(|&i| lengths[i] > 0.0).collect();
        if self.num_steps < nonempty.len() {
            return Err(Error::Config(format!(
                "{} steps cannot cover {} nonempty regimes",
                self.num_steps,
                nonempty.len()
            )));
        }
        let n = self.num_steps as f64;
        let mut counts = [0usize; 3];
        let mut remainders = Vec::new();
        for &i in &nonempty {
            let quota = n * lengths[i];
            // snap quotas that are integral up to rounding (e.g. 60 · 0.1)
            let snapped = if (quota - quota.round()).abs() < 1e-9 {
                quota.round()
            } else {
                quota
            };
            counts[i] = (snapped.floor() as usize).max(1);
            remainders.push((snapped - snapped.floor(), i));
        }
        let mut assigned: usize = counts.iter().sum();
        // hand out missing steps by largest remainder, then by regime length
        remainders.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap()
                .then(lengths[b.1].partial_cmp(&lengths[a.1]).unwrap())
        });
        let mut k = 0;
        while assigned < self.num_steps {
            counts[remainders[k % remainders.len()].1] += 1;
            assigned += 1;
            k += 1;
        }
        // the minimum-one rule can overshoot; take from the longest regimes
        while assigned > self.num_steps {
            let i = *nonempty
                .iter()
                .filter(|&&i| counts[i] > 1)
                .max_by(|&&a, &&b| {
                    (counts[a] as f64 - n * lengths[a])
                        .partial_cmp(&(counts[b] as f64 - n * lengths[b]))
                        .unwrap()
                })
                .ok_or_else(|| Error::Config("cannot balance step allocation".into()))?;
            counts[i] -= 1;
            assigned -= 1;
        }

        let mut steps = Vec::with_capacity(self.num_steps);
        let mut steps_before_t2 = 0;
        for (i, &(a, b, stochastic)) in bounds.iter().enumerate() {
            let c = counts[i];
            if c == 0 {
                continue;
            }
            let dt = (b - a) / c as f64;
            for j in 0..c {
                steps.push(Step {
                    t: a + j as f64 * dt,
                    dt,
                    stochastic,
                });
            }
            if i < 2 {
                steps_before_t2 += c;
            }
        }
        Ok(StepGrid {
            steps,
            steps_before_t2,
        })
    }
}
