use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};

/// One row of the discretized-KL table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KlRow {
    pub steps: usize,
    pub kl: f64,
    pub kl_per_step: f64,
}

/// Scalar diffusion pair used by [`kl_diagnose`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KlSetup {
    pub sigma_q: f64,
    pub sigma_p: f64,
    pub horizon: f64,
    pub w0: f64,
    pub seed: u64,
}

/// Per-transition KL between the Euler transition kernels of `q` and `p`:
/// `A Δt + ½(ρ - 1) - ½ ln ρ` with `A = ½ (f_q - f_p)² / σ_p²` and
/// `ρ = σ_q² / σ_p²`.
pub fn transition_kl(fq: f64, fp: f64, sigma_q: f64, sigma_p: f64, dt: f64) -> f64 {
    let rho = (sigma_q * sigma_q) / (sigma_p * sigma_p);
    let a = 0.5 * (fq - fp).powi(2) / (sigma_p * sigma_p);
    a * dt + 0.5 * (rho - 1.0) - 0.5 * rho.ln()
}

/// Discretized path KL for each `N` in `steps_list`, summed over the `N`
/// transitions of one Euler path of `q` on `[0, horizon]`.
///
/// Unlike training, `σ_q ≠ σ_p` is allowed here: the sum then grows
/// linearly in `N`.
pub fn kl_diagnose<Q, P>(setup: KlSetup, f_q: Q, f_p: P, steps_list: &[usize]) -> Result<Vec<KlRow>>
where
    Q: Fn(f64, f64) -> f64,
    P: Fn(f64, f64) -> f64,
{
    if !(setup.sigma_p > 0.0) || !(setup.sigma_q > 0.0) {
        return Err(Error::Config(format!(
            "kl-diagnose needs σ_q, σ_p > 0, got {} and {}",
            setup.sigma_q, setup.sigma_p
        )));
    }
    if !(setup.horizon > 0.0) {
        return Err(Error::Config(format!("horizon must be positive, got {}", setup.horizon)));
    }
    if steps_list.is_empty() || steps_list[0] == 0 || steps_list.windows(2).any(|p| p[0] >= p[1]) {
        return Err(Error::Config("steps list must be positive and strictly increasing".into()));
    }
    let mut rows = Vec::with_capacity(steps_list.len());
    for &n in steps_list {
        let dt = setup.horizon / n as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(setup.seed);
        let mut w = setup.w0;
        let mut kl = 0.0;
        for i in 0..n {
            let t = i as f64 * dt;
            let fq = f_q(t, w);
            kl += transition_kl(fq, f_p(t, w), setup.sigma_q, setup.sigma_p, dt);
            let eps: f64 = StandardNormal.sample(&mut rng);
            w += fq * dt + setup.sigma_q * dt.sqrt() * eps;
        }
        rows.push(KlRow {
            steps: n,
            kl,
            kl_per_step: kl / n as f64,
        });
    }
    Ok(rows)
}

/// `½(ρ - 1 - ln ρ)`, the per-step floor when the diffusions differ.
pub fn diffusion_mismatch_constant(sigma_q: f64, sigma_p: f64) -> f64 {
    let rho = (sigma_q * sigma_q) / (sigma_p * sigma_p);
    0.5 * (rho - 1.0 - rho.ln())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(sigma_q: f64, sigma_p: f64) -> KlSetup {
        KlSetup {
            sigma_q,
            sigma_p,
            horizon: 1.0,
            w0: 0.0,
            seed: 3,
        }
    }

    #[test]
    fn matched_everything_is_zero() {
        let rows = kl_diagnose(setup(0.7, 0.7), |_, w| -w, |_, w| -w, &[1, 10, 100]).unwrap();
        assert!(rows.iter().all(|r| r.kl == 0.0));
    }

    #[test]
    fn diffusion_mismatch_grows_linearly() {
        let c = diffusion_mismatch_constant(1.0, 0.5);
        assert!((c - 0.806_852_819_440_054_3).abs() < 1e-12);
        let rows = kl_diagnose(setup(1.0, 0.5), |_, _| 0.0, |_, _| 0.0, &[16, 32, 1 << 14]).unwrap();
        assert!(rows[1].kl > rows[0].kl);
        assert!((rows[1].kl / rows[0].kl - 2.0).abs() < 0.02);
        assert!((rows[2].kl_per_step - c).abs() / c < 0.01);
    }

    #[test]
    fn drift_gap_converges_to_half_c_squared() {
        let rows = kl_diagnose(setup(1.0, 1.0), |_, _| 1.0, |_, _| 0.0, &[1 << 14]).unwrap();
        assert!((rows[0].kl - 0.5).abs() < 0.005);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(kl_diagnose(setup(1.0, 0.0), |_, _| 0.0, |_, _| 0.0, &[1]).is_err());
        assert!(kl_diagnose(setup(1.0, 1.0), |_, _| 0.0, |_, _| 0.0, &[4, 2]).is_err());
    }
}
