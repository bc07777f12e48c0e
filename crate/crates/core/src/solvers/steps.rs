use crate::autodiff::{Tape, Tensor, Var};
use crate::dynamics::Partition;
use crate::error::{Error, Result};

use super::schedule::Scheme;

/// `a + c·b`
fn axpy(tape: &mut Tape, a: Var, c: f64, b: Var) -> Result<Var> {
    let scaled = tape.scale(b, c)?;
    tape.add(a, scaled)
}

fn axpy_all(tape: &mut Tape, state: &[Var], c: f64, dir: &[Var]) -> Result<Vec<Var>> {
    if state.len() != dir.len() {
        return Err(Error::Contract(format!(
            "drift returned {} components for a {}-component state",
            dir.len(),
            state.len()
        )));
    }
    state
        .iter()
        .zip(dir)
        .map(|(&s, &d)| axpy(tape, s, c, d))
        .collect()
}

/// Euler–Maruyama step: `w_S += f_S Δt + σ ΔB`, `w_D += f_D Δt`.
pub fn em_step(
    tape: &mut Tape,
    w: Var,
    dt: f64,
    drift: Var,
    sigma: f64,
    increment: &[f64],
    partition: &Partition,
) -> Result<Var> {
    if !(dt > 0.0) {
        return Err(Error::Contract(format!("step size must be positive, got {dt}")));
    }
    if increment.len() != partition.stochastic().len() {
        return Err(Error::Shape(format!(
            "{} Brownian increments for {} stochastic coordinates",
            increment.len(),
            partition.stochastic().len()
        )));
    }
    let deterministic = axpy(tape, w, dt, drift)?;
    if increment.is_empty() {
        return Ok(deterministic);
    }
    let noise: Vec<f64> = increment.iter().map(|db| sigma * db).collect();
    let noise = tape.leaf(Tensor::row(noise));
    let noise = tape.scatter_cols(noise, partition.stochastic(), partition.dim())?;
    tape.add(deterministic, noise)
}

pub fn euler_step<F>(tape: &mut Tape, t: f64, state: &[Var], dt: f64, f: &mut F) -> Result<Vec<Var>>
where
    F: FnMut(&mut Tape, f64, &[Var]) -> Result<Vec<Var>>,
{
    let k1 = f(tape, t, state)?;
    axpy_all(tape, state, dt, &k1)
}

/// Explicit midpoint: `y + Δt f(t + Δt/2, y + Δt/2 f(t, y))`.
pub fn midpoint_step<F>(tape: &mut Tape, t: f64, state: &[Var], dt: f64, f: &mut F) -> Result<Vec<Var>>
where
    F: FnMut(&mut Tape, f64, &[Var]) -> Result<Vec<Var>>,
{
    if !(dt > 0.0) {
        return Err(Error::Contract(format!("step size must be positive, got {dt}")));
    }
    let k1 = f(tape, t, state)?;
    let mid = axpy_all(tape, state, 0.5 * dt, &k1)?;
    let k2 = f(tape, t + 0.5 * dt, &mid)?;
    axpy_all(tape, state, dt, &k2)
}

/// Classical fourth-order Runge–Kutta.
pub fn rk4_step<F>(tape: &mut Tape, t: f64, state: &[Var], dt: f64, f: &mut F) -> Result<Vec<Var>>
where
    F: FnMut(&mut Tape, f64, &[Var]) -> Result<Vec<Var>>,
{
    let k1 = f(tape, t, state)?;
    let y2 = axpy_all(tape, state, 0.5 * dt, &k1)?;
    let k2 = f(tape, t + 0.5 * dt, &y2)?;
    let y3 = axpy_all(tape, state, 0.5 * dt, &k2)?;
    let k3 = f(tape, t + 0.5 * dt, &y3)?;
    let y4 = axpy_all(tape, state, dt, &k3)?;
    let k4 = f(tape, t + dt, &y4)?;
    let mut out = Vec::with_capacity(state.len());
    for i in 0..state.len() {
        let mut acc = tape.add(k2[i], k3[i])?;
        acc = tape.scale(acc, 2.0)?;
        acc = tape.add(acc, k1[i])?;
        acc = tape.add(acc, k4[i])?;
        out.push(axpy(tape, state[i], dt / 6.0, acc)?);
    }
    Ok(out)
}

pub fn deterministic_step<F>(
    scheme: Scheme,
    tape: &mut Tape,
    t: f64,
    state: &[Var],
    dt: f64,
    f: &mut F,
) -> Result<Vec<Var>>
where
    F: FnMut(&mut Tape, f64, &[Var]) -> Result<Vec<Var>>,
{
    match scheme {
        Scheme::Euler => euler_step(tape, t, state, dt, f),
        Scheme::Midpoint => midpoint_step(tape, t, state, dt, f),
        Scheme::Rk4 => rk4_step(tape, t, state, dt, f),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(tape: &mut Tape, v: f64) -> Var {
        tape.leaf(Tensor::row(vec![v]))
    }

    fn value(tape: &Tape, v: Var) -> f64 {
        tape.value(v).data()[0]
    }

    #[test]
    fn em_step_examples() {
        let full = Partition::all_stochastic(1);
        let mut tape = Tape::new();

        // σ = 0 reduces to Euler
        let w = scalar(&mut tape, 0.5);
        let a = scalar(&mut tape, 2.0);
        let w1 = em_step(&mut tape, w, 0.1, a, 0.0, &[0.7], &full).unwrap();
        assert!((value(&tape, w1) - 0.7).abs() < 1e-15);

        // pure diffusion
        let w = scalar(&mut tape, 0.0);
        let z = scalar(&mut tape, 0.0);
        let w1 = em_step(&mut tape, w, 0.1, z, 1.0, &[0.3], &full).unwrap();
        assert_eq!(value(&tape, w1), 0.3);

        // OU drift -w with noise: 1 - 0.1 + 0.2·(-0.05)
        let w = scalar(&mut tape, 1.0);
        let drift = scalar(&mut tape, -1.0);
        let w1 = em_step(&mut tape, w, 0.1, drift, 0.2, &[-0.05], &full).unwrap();
        assert!((value(&tape, w1) - 0.89).abs() < 1e-15);
    }

    #[test]
    fn em_step_leaves_deterministic_block_noise_free() {
        let p = Partition::leading(2, 1).unwrap();
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::row(vec![1.0, 1.0]));
        let f = tape.leaf(Tensor::row(vec![0.0, 1.0]));
        let w1 = em_step(&mut tape, w, 0.5, f, 2.0, &[0.25], &p).unwrap();
        assert_eq!(tape.value(w1).data(), &[1.5, 1.5]);
        assert!(matches!(
            em_step(&mut tape, w, 0.5, f, 2.0, &[0.25, 0.1], &p),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn midpoint_constant_drift() {
        let mut tape = Tape::new();
        let y = scalar(&mut tape, 2.0);
        let c = scalar(&mut tape, -3.0);
        let mut f = |_: &mut Tape, _t: f64, _s: &[Var]| Ok(vec![c]);
        let y1 = midpoint_step(&mut tape, 0.0, &[y], 0.25, &mut f).unwrap();
        assert_eq!(value(&tape, y1[0]), 2.0 - 0.75);
    }

    #[test]
    fn midpoint_exponential_growth_single_step() {
        let mut tape = Tape::new();
        let y = scalar(&mut tape, 1.0);
        let mut f = |_: &mut Tape, _t: f64, s: &[Var]| Ok(vec![s[0]]);
        let y1 = midpoint_step(&mut tape, 0.0, &[y], 0.1, &mut f).unwrap();
        // 1 + 0.1·(1 + 0.05) = 1.105; exact e^0.1 = 1.10517…
        assert!((value(&tape, y1[0]) - 1.105).abs() < 1e-15);
        assert!((value(&tape, y1[0]) - 0.1f64.exp()).abs() < 2e-4);
    }

    #[test]
    fn midpoint_cosine_quadrature() {
        // w' = cos(20 t), w(0) = 0 on [0, 0.3] with 60 steps
        let mut tape = Tape::new();
        let mut w = vec![scalar(&mut tape, 0.0)];
        let dt = 0.3 / 60.0;
        let mut f = |tape: &mut Tape, t: f64, _s: &[Var]| Ok(vec![tape.leaf(Tensor::row(vec![(20.0 * t).cos()]))]);
        for k in 0..60 {
            w = midpoint_step(&mut tape, k as f64 * dt, &w, dt, &mut f).unwrap();
        }
        let exact = (6.0f64).sin() / 20.0;
        assert!((exact - -0.013_970_774_909_946_29).abs() < 1e-15);
        assert!((value(&tape, w[0]) - exact).abs() < 1e-4);
    }

    #[test]
    fn rk4_is_fourth_order_on_exponential() {
        let solve = |n: usize| {
            let mut tape = Tape::new();
            let mut y = vec![scalar(&mut tape, 1.0)];
            let dt = 1.0 / n as f64;
            let mut f = |_: &mut Tape, _t: f64, s: &[Var]| Ok(vec![s[0]]);
            for k in 0..n {
                y = rk4_step(&mut tape, k as f64 * dt, &y, dt, &mut f).unwrap();
            }
            (value(&tape, y[0]) - 1f64.exp()).abs()
        };
        let ratio = solve(10) / solve(20);
        assert!((14.0..18.0).contains(&ratio), "ratio {ratio}");
    }
}
