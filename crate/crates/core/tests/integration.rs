use psdebnn::autodiff::Tensor;
use psdebnn::cli::{paths_preset, run_preset};
use psdebnn::data::gen_two_moons;
use psdebnn::dynamics::{Activation, DriftSpec};
use psdebnn::inference::{
    elbo, elbo_with_grad, evaluate, kl_diagnose, train, AdamConfig, ElboRequest, KlSetup, ModelConfig, Psdebnn,
    TrainConfig,
};
use psdebnn::metrics;
use psdebnn::solvers::{derive_seed, JumpMode, PathRecord, RegimeSchedule};

fn paths(cfg: ModelConfig, seeds: u64) -> Vec<PathRecord> {
    let model = Psdebnn::new(cfg).unwrap();
    let params = model.init_params(0).unwrap();
    (0..seeds).map(|k| model.sample_path(&params, None, derive_seed(9, k)).unwrap()).collect()
}

fn column_is_seed_invariant(records: &[PathRecord], step: usize, coord: usize) -> bool {
    records
        .iter()
        .all(|r| r.w[step][coord].to_bits() == records[0].w[step][coord].to_bits())
}

fn small_moons_model(name: &str) -> Psdebnn {
    let mut cfg = run_preset(name).unwrap().model;
    cfg.schedule.num_steps = 20;
    Psdebnn::new(cfg).unwrap()
}

fn batch() -> (Tensor, Vec<usize>) {
    let data = gen_two_moons(16, 0.1, 3).unwrap();
    let labels = data.labels().unwrap().to_vec();
    (data.features, labels)
}

#[test]
fn horizontal_cut_fixes_the_deterministic_block() {
    let records = paths(paths_preset("fig2-split").unwrap().model, 6);
    let n = records[0].times.len();
    assert_eq!(n, 61);
    for i in 0..n {
        assert!(column_is_seed_invariant(&records, i, 1));
    }
    assert!(!column_is_seed_invariant(&records, n - 1, 0));
}

#[test]
fn vertical_cut_is_deterministic_outside_the_window() {
    for mode in [JumpMode::FixedAPriori, JumpMode::Learnable] {
        let mut cfg = paths_preset("fig1-fixed").unwrap().model;
        cfg.schedule.jump_mode = mode;
        let records = paths(cfg, 5);
        for (i, &t) in records[0].times.iter().enumerate() {
            let outside = t <= 0.3 + 1e-12 || t >= 0.6 - 1e-12;
            assert_eq!(column_is_seed_invariant(&records, i, 0), outside, "t = {t}, {mode:?}");
        }
    }
    let records = paths(paths_preset("fig1-continue").unwrap().model, 5);
    let last = records[0].times.len() - 1;
    assert!(!column_is_seed_invariant(&records, last, 0));
}

#[test]
fn vanishing_diffusion_recovers_the_ode_path() {
    let mut sde = paths_preset("fig1-continue").unwrap().model;
    sde.sigma = 1e-8;
    let mut ode = sde.clone();
    ode.schedule = RegimeSchedule::deterministic(100);
    let a = &paths(sde, 1)[0];
    let b = &paths(ode, 1)[0];
    assert_eq!(a.times.len(), b.times.len());
    for (i, (x, y)) in a.w.iter().zip(&b.w).enumerate() {
        assert!((a.times[i] - b.times[i]).abs() < 1e-12);
        assert!((x[0] - y[0]).abs() < 1e-4, "step {i}: {} vs {}", x[0], y[0]);
    }
}

#[test]
fn zero_drift_without_noise_keeps_weights_constant() {
    let records = paths(paths_preset("zero").unwrap().model, 2);
    for r in &records {
        for row in &r.w {
            assert_eq!(row, &vec![0.5, -1.5]);
        }
    }
}

#[test]
fn midpoint_converges_at_second_order() {
    let err = |steps| {
        let mut cfg = paths_preset("zero").unwrap().model;
        cfg.dynamics.drift = DriftSpec::Cosine {
            freq: 20.0,
            quiet_window: None,
        };
        cfg.dynamics.weight_dim = Some(1);
        cfg.init.w0 = Some(vec![0.0]);
        cfg.schedule = RegimeSchedule::deterministic(steps);
        let w1 = paths(cfg, 1)[0].w.last().unwrap()[0];
        (w1 - 20f64.sin() / 20.0).abs()
    };
    let ratio = err(60) / err(120);
    assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let model = small_moons_model("odefirst");
    let data = gen_two_moons(40, 0.1, 1).unwrap();
    let init = model.init_params(2).unwrap();
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 16,
        adam: AdamConfig {
            lr: 0.0,
            ..AdamConfig::default()
        },
        ..TrainConfig::default()
    };
    let out = train(&model, init.clone(), &data, &data, &cfg).unwrap();
    assert_eq!(out.params.flat_values(), init.flat_values());
    assert_eq!(out.log.len(), 1);
}

#[test]
fn learnable_jump_value_gets_gradient_and_updates() {
    let model = small_moons_model("sdefirst-fixw2");
    let mut params = model.init_params(4).unwrap();
    let before = params.get("w_t2").unwrap().clone();
    let (x, labels) = batch();
    let req = ElboRequest {
        x: &x,
        labels: &labels,
        kappa: 1e-2,
        num_samples: 1,
        likelihood_scale: 1.0,
        seed: 8,
        threads: 1,
    };
    params.zero_grad();
    elbo_with_grad(&model, &mut params, &req, 1.0).unwrap();
    let g = params.grad("w_t2").unwrap();
    assert!(g.data().iter().any(|v| *v != 0.0));
    params.adam_step(&AdamConfig::default());
    assert_ne!(params.get("w_t2").unwrap(), &before);
}

#[test]
fn prior_matched_drift_has_zero_kl() {
    let mut cfg = run_preset("sde").unwrap().model;
    cfg.schedule.num_steps = 10;
    cfg.dynamics.drift = DriftSpec::Mlp {
        hidden: vec![8],
        activation: Activation::Softplus,
        prior_residual: true,
    };
    cfg.init.drift_zero_last = true;
    let model = Psdebnn::new(cfg).unwrap();
    let params = model.init_params(1).unwrap();
    let (x, labels) = batch();
    let req = ElboRequest {
        x: &x,
        labels: &labels,
        kappa: 1.0,
        num_samples: 2,
        likelihood_scale: 1.0,
        seed: 3,
        threads: 1,
    };
    let out = elbo(&model, &params, &req).unwrap();
    assert!(out.kl_integral.abs() < 1e-10, "{}", out.kl_integral);
}

#[test]
fn kl_average_ignores_seed_order() {
    let model = small_moons_model("sde");
    let params = model.init_params(5).unwrap();
    let (x, labels) = batch();
    let kls: Vec<f64> = (0..5)
        .map(|s| {
            let req = ElboRequest {
                x: &x,
                labels: &labels,
                kappa: 1.0,
                num_samples: 1,
                likelihood_scale: 1.0,
                seed: s,
                threads: 1,
            };
            elbo(&model, &params, &req).unwrap().kl_integral
        })
        .collect();
    assert!(kls.iter().all(|k| *k >= 0.0));
    let forward = kls.iter().sum::<f64>() / 5.0;
    let backward = kls.iter().rev().sum::<f64>() / 5.0;
    let shuffled = [kls[3], kls[0], kls[4], kls[1], kls[2]].iter().sum::<f64>() / 5.0;
    assert!((forward - backward).abs() < 1e-12);
    assert!((forward - shuffled).abs() < 1e-12);
}

#[test]
fn threaded_shards_match_serial_elbo() {
    let model = small_moons_model("odefirst");
    let params = model.init_params(6).unwrap();
    let (x, labels) = batch();
    let req = |threads| ElboRequest {
        x: &x,
        labels: &labels,
        kappa: 0.1,
        num_samples: 2,
        likelihood_scale: 2.0,
        seed: 4,
        threads,
    };
    let a = elbo(&model, &params, &req(1)).unwrap();
    let b = elbo(&model, &params, &req(3)).unwrap();
    assert!((a.elbo - b.elbo).abs() < 1e-9 * a.elbo.abs().max(1.0));
    assert!((a.kl_integral - b.kl_integral).abs() < 1e-12);
}

#[test]
fn deterministic_model_predictions_ignore_the_seed() {
    let model = small_moons_model("ode");
    let params = model.init_params(0).unwrap();
    let (x, _) = batch();
    let a = model.predict(&params, &x, 3, 1).unwrap();
    let b = model.predict(&params, &x, 3, 99).unwrap();
    assert_eq!(a, b);
    for row in &a {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn predictive_is_the_mean_of_its_samples() {
    let model = small_moons_model("sde");
    let params = model.init_params(0).unwrap();
    let (x, _) = batch();
    let seed = 21;
    let p2 = model.predict(&params, &x, 2, seed).unwrap();
    let samples: Vec<_> = (0..2)
        .map(|s| {
            let noise = model.sample_noise(derive_seed(seed, s)).unwrap();
            model.predict_sample(&params, &x, &noise).unwrap()
        })
        .collect();
    for (i, row) in p2.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            assert_eq!(*v, (samples[0][i][j] + samples[1][i][j]) / 2.0);
        }
    }
}

#[test]
fn ode_first_uses_a_tenth_of_the_brownian_draws() {
    let ode_first = Psdebnn::new(run_preset("odefirst").unwrap().model).unwrap();
    let full = Psdebnn::new(run_preset("sde").unwrap().model).unwrap();
    assert_eq!(10 * ode_first.draws_per_sample(), full.draws_per_sample());
    assert_eq!(10 * ode_first.grid().stochastic_steps(), full.grid().stochastic_steps());
    let (x, _) = batch();
    let a = ode_first.predict_with_stats(&ode_first.init_params(0).unwrap(), &x, 4, 0).unwrap();
    let b = full.predict_with_stats(&full.init_params(0).unwrap(), &x, 4, 0).unwrap();
    assert_eq!(10 * a.brownian_draws, b.brownian_draws);
}

#[test]
fn identical_id_and_ood_give_chance_auc() {
    let model = small_moons_model("sde");
    let params = model.init_params(0).unwrap();
    let data = gen_two_moons(100, 0.1, 0).unwrap();
    let (_, set) = evaluate(&model, &params, &data, 2, 0, 15).unwrap();
    let h = set.entropies();
    let auc = metrics::roc_auc(&h, &h).unwrap();
    assert!((auc - 0.5).abs() <= 0.05);
}

#[test]
fn deterministic_evaluation_is_bitwise_repeatable() {
    let model = small_moons_model("ode");
    let params = model.init_params(0).unwrap();
    let data = gen_two_moons(60, 0.1, 0).unwrap();
    let (a, pa) = evaluate(&model, &params, &data, 2, 0, 15).unwrap();
    let (b, pb) = evaluate(&model, &params, &data, 2, 7, 15).unwrap();
    assert_eq!(pa, pb);
    assert_eq!(a.accuracy.to_bits(), b.accuracy.to_bits());
    assert_eq!(a.ece.to_bits(), b.ece.to_bits());
    assert_eq!(a.mean_entropy.to_bits(), b.mean_entropy.to_bits());
    assert_eq!(a.brownian_draws, 0);
}

#[test]
fn kl_grows_linearly_under_diffusion_mismatch() {
    let setup = KlSetup {
        sigma_q: 1.0,
        sigma_p: 0.5,
        horizon: 1.0,
        w0: 0.0,
        seed: 0,
    };
    let steps = [64, 128, 256, 512, 1024];
    let rows = kl_diagnose(setup, |_, w| -w, |_, w| -w, &steps).unwrap();
    for pair in rows.windows(2) {
        assert!(pair[1].kl > pair[0].kl);
        assert!((pair[1].kl / pair[0].kl - 2.0).abs() < 0.02);
    }
    let matched = kl_diagnose(KlSetup { sigma_p: 1.0, ..setup }, |_, w| -w, |_, w| -w, &steps).unwrap();
    assert!(matched.iter().all(|r| r.kl == 0.0));
}
