use std::io::Write;

use crate::autodiff::{Tape, Tensor, Var};
use crate::dynamics::{BoundDrift, Dynamics};
use crate::error::{Error, Result};
use crate::inference::u_theta;

use super::brownian::BrownianPath;
use super::schedule::{JumpMode, RegimeSchedule, Scheme};
use super::steps::{deterministic_step, em_step};

/// Trajectory values at every step boundary.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PathRecord {
    pub times: Vec<f64>,
    pub w: Vec<Vec<f64>>,
    /// Hidden state of the first batch row; empty rows for weight-only
    /// systems.
    pub h: Vec<Vec<f64>>,
    /// `‖u_θ(t_k, w_k)‖²` for steps starting at `t_k` inside the window,
    /// zero elsewhere (and at the final boundary).
    pub kl_integrand: Vec<f64>,
}

impl PathRecord {
    fn push(&mut self, t: f64, tape: &Tape, w: Var, h: Option<Var>) {
        self.times.push(t);
        self.w.push(tape.value(w).data().to_vec());
        self.h.push(match h {
            Some(h) => tape.value(h).row_slice(0).to_vec(),
            None => Vec::new(),
        });
        self.kl_integrand.push(0.0);
    }

    /// Writes `t,w_1..w_dw,h_1..h_dh,kl_integrand`, one row per boundary.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let d_w = self.w.first().map_or(0, Vec::len);
        let d_h = self.h.first().map_or(0, Vec::len);
        let mut header = vec!["t".to_string()];
        header.extend((1..=d_w).map(|i| format!("w_{i}")));
        header.extend((1..=d_h).map(|i| format!("h_{i}")));
        header.push("kl_integrand".into());
        writeln!(out, "{}", header.join(","))?;
        for k in 0..self.times.len() {
            let mut row = vec![self.times[k].to_string()];
            row.extend(self.w[k].iter().map(f64::to_string));
            row.extend(self.h[k].iter().map(f64::to_string));
            row.push(self.kl_integrand[k].to_string());
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct IntegrateOptions {
    pub record: bool,
    /// Accumulate `∫‖u_θ‖² dt`; can be disabled for σ→0 continuity checks.
    pub compute_kl: bool,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        IntegrateOptions {
            record: false,
            compute_kl: true,
        }
    }
}

/// Tape inputs of one joint solve.
#[derive(Clone, Copy, Debug)]
pub struct JointInputs<'a> {
    /// `[1, d_w]`
    pub w0: Var,
    /// `[1, d_w]`; required when the schedule jumps to a learnable value.
    pub w_t2: Option<Var>,
    pub drift: &'a BoundDrift,
    /// `[B, d_h]`; `None` for weight-only systems.
    pub h0: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct JointOutput {
    pub h1: Option<Var>,
    pub w1: Var,
    /// Scalar `Σ ‖u_θ(t_k, w_k)‖² Δt` over the window; `None` when the
    /// window is empty or KL accumulation is disabled.
    pub kl_integral: Option<Var>,
    pub record: Option<PathRecord>,
    pub brownian_draws: usize,
    pub u_evaluations: usize,
}

fn joint_drift(
    tape: &mut Tape,
    dynamics: &Dynamics,
    drift: &BoundDrift,
    t: f64,
    state: &[Var],
) -> Result<Vec<Var>> {
    match (state, &dynamics.hidden) {
        ([h, w], Some(net)) => {
            let fh = net.eval(tape, t, *h, *w)?;
            let fq = dynamics.drift.eval(tape, t, *w, drift)?;
            Ok(vec![fh, fq])
        }
        ([w], None) => Ok(vec![dynamics.drift.eval(tape, t, *w, drift)?]),
        _ => Err(Error::Contract("state layout does not match the dynamics".into())),
    }
}

/// Next `w`, next `h`, and the KL increment with its value.
type StepOutput = (Var, Option<Var>, Option<(Var, f64)>);

/// Integrates the coupled `(h, w)` system over `[0, 1]`.
///
/// Outside `(t₁, t₂)` both components advance with the schedule's
/// deterministic scheme. Inside, stochastic coordinates take
/// Euler–Maruyama steps, deterministic coordinates take a step of the
/// configured scheme (driftwise midpoint; Euler when the scheme is Euler),
/// and `h` takes an Euler step with `w` frozen at the left endpoint.
pub fn integrate_joint(
    tape: &mut Tape,
    dynamics: &Dynamics,
    inputs: JointInputs<'_>,
    schedule: &RegimeSchedule,
    sigma: f64,
    noise: &BrownianPath,
    opts: IntegrateOptions,
) -> Result<JointOutput> {
    let grid = schedule.grid()?;
    let partition = &dynamics.partition;
    let d_w = partition.dim();
    let window_steps = grid.stochastic_steps();
    let n_stochastic = partition.stochastic().len();

    if window_steps > 0 && n_stochastic > 0 && sigma <= 0.0 {
        return Err(Error::Config(
            "σ must be positive inside the stochastic window (u_θ needs g_p⁻¹)".into(),
        ));
    }
    if window_steps > 0 && n_stochastic > 0
        && (noise.num_steps() != window_steps || noise.dim() != n_stochastic)
    {
        return Err(Error::Contract(format!(
            "Brownian path is {}×{}, schedule needs {}×{}",
            noise.num_steps(),
            noise.dim(),
            window_steps,
            n_stochastic
        )));
    }
    if tape.shape(inputs.w0) != [1, d_w] {
        return Err(Error::Shape(format!(
            "w0 has shape {:?}, expected [1, {d_w}]",
            tape.shape(inputs.w0)
        )));
    }
    if dynamics.hidden.is_some() != inputs.h0.is_some() {
        return Err(Error::Contract("h0 must be given exactly when the model has a hidden network".into()));
    }

    let jump_target = if schedule.jumps() {
        Some(match schedule.jump_mode {
            JumpMode::Learnable => inputs.w_t2.ok_or_else(|| {
                Error::Config("learnable jump mode needs a w_t2 parameter".into())
            })?,
            _ => {
                let value = schedule.fixed_jump_value.clone().unwrap_or_else(|| vec![0.0; d_w]);
                if value.len() != d_w {
                    return Err(Error::Config(format!(
                        "fixed jump value has {} entries, d_w = {d_w}",
                        value.len()
                    )));
                }
                tape.leaf(Tensor::row(value))
            }
        })
    } else {
        None
    };

    let mut w = inputs.w0;
    let mut h = inputs.h0;
    let mut record = opts.record.then(PathRecord::default);
    let mut kl_terms: Vec<Var> = Vec::new();
    let mut draws = 0;
    let mut u_evals = 0;
    let mut window_index = 0;

    if let Some(r) = record.as_mut() {
        r.push(0.0, tape, w, h);
    }

    for (k, step) in grid.steps.iter().enumerate() {
        let advance = |tape: &mut Tape, w: Var, h: Option<Var>| -> Result<StepOutput> {
            if !step.stochastic {
                let state: Vec<Var> = h.into_iter().chain(std::iter::once(w)).collect();
                let mut f = |tape: &mut Tape, t: f64, s: &[Var]| joint_drift(tape, dynamics, inputs.drift, t, s);
                let next = deterministic_step(schedule.scheme, tape, step.t, &state, step.dt, &mut f)?;
                return Ok(match next.as_slice() {
                    [hn, wn] => (*wn, Some(*hn), None),
                    [wn] => (*wn, None, None),
                    _ => unreachable!("state has one or two components"),
                });
            }

            let fq = dynamics.drift.eval(tape, step.t, w, inputs.drift)?;
            let kl = if opts.compute_kl && n_stochastic > 0 {
                let u = u_theta(tape, w, fq, &dynamics.prior, sigma, partition)?;
                let sq = tape.square(u)?;
                let integrand = tape.sum(sq);
                let v = tape.value(integrand).item()?;
                Some((tape.scale(integrand, step.dt)?, v))
            } else {
                None
            };

            let h_next = match (h, &dynamics.hidden) {
                (Some(h), Some(net)) => {
                    let fh = net.eval(tape, step.t, h, w)?;
                    let inc = tape.scale(fh, step.dt)?;
                    Some(tape.add(h, inc)?)
                }
                _ => None,
            };

            let increment = if n_stochastic > 0 {
                noise.step(window_index)
            } else {
                &[]
            };
            let mut w_next = em_step(tape, w, step.dt, fq, sigma, increment, partition)?;

            if !partition.is_full() && schedule.scheme != Scheme::Euler {
                // deterministic block: midpoint on the noise-free drift
                let half = tape.scale(fq, 0.5 * step.dt)?;
                let w_mid = tape.add(w, half)?;
                let fq_mid = dynamics.drift.eval(tape, step.t + 0.5 * step.dt, w_mid, inputs.drift)?;
                let det = partition.deterministic();
                let wd = tape.gather_cols(w, det)?;
                let fd = tape.gather_cols(fq_mid, det)?;
                let fd = tape.scale(fd, step.dt)?;
                let wd_next = tape.add(wd, fd)?;
                let ws_next = tape.gather_cols(w_next, partition.stochastic())?;
                let ws_next = tape.scatter_cols(ws_next, partition.stochastic(), d_w)?;
                let wd_next = tape.scatter_cols(wd_next, det, d_w)?;
                w_next = tape.add(ws_next, wd_next)?;
            }
            Ok((w_next, h_next, kl))
        };

        let (w_next, h_next, kl) = advance(tape, w, h).map_err(|e| e.at_step(k))?;
        if step.stochastic {
            window_index += 1;
            draws += n_stochastic;
            if kl.is_some() {
                u_evals += 1;
            }
        }
        if let (Some(r), Some((_, v))) = (record.as_mut(), kl) {
            *r.kl_integrand.last_mut().expect("initial row recorded") = v;
        }
        if let Some((term, _)) = kl {
            kl_terms.push(term);
        }
        w = w_next;
        h = h_next;
        if k + 1 == grid.steps_before_t2 {
            if let Some(target) = jump_target {
                w = target;
            }
        }
        if let Some(r) = record.as_mut() {
            let t = grid.steps.get(k + 1).map_or(1.0, |s| s.t);
            r.push(t, tape, w, h);
        }
    }

    let kl_integral = if kl_terms.is_empty() {
        None
    } else {
        let mut acc = kl_terms[0];
        for &term in &kl_terms[1..] {
            acc = tape.add(acc, term)?;
        }
        Some(acc)
    };

    Ok(JointOutput {
        h1: h,
        w1: w,
        kl_integral,
        record,
        brownian_draws: draws,
        u_evaluations: u_evals,
    })
}
