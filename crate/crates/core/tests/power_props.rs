use geodesign::pipeline::{self, DesignConfig};
use geodesign::power::{self, EvalInputs};
use geodesign::randomization::BalanceConfig;
use geodesign::synthetic::{self, SynthConfig};
use geodesign::{rng, TrimSpec};

fn inputs(seed: u64, n: usize, replicates: usize) -> EvalInputs {
    let panel = synthetic::generate_panel(&SynthConfig {
        seed,
        ..SynthConfig::default()
    })
    .unwrap();
    let cfg = DesignConfig {
        seed,
        replicates,
        ..DesignConfig::default()
    };
    let periods = pipeline::design_periods(&panel, &cfg).unwrap();
    let data = pipeline::evaluation_data(&panel, &periods, cfg.spend_proxy).unwrap();
    let pairs = pipeline::candidate_pairs(&panel, &periods, cfg.pairing_method, &[n]).unwrap();
    pipeline::eval_inputs(&pairs[0], &data, &cfg)
}

#[test]
fn null_estimates_centre_on_zero() {
    for seed in 0..3 {
        let inp = inputs(seed, 25, 1000);
        let est: Vec<f64> = power::replicate_estimates(&inp).unwrap().into_iter().flatten().collect();
        let k = est.len() as f64;
        let mean = est.iter().sum::<f64>() / k;
        let rmse = (est.iter().map(|t| t * t).sum::<f64>() / k).sqrt();
        assert!(mean.abs() < 3.0 * rmse / k.sqrt(), "seed {seed}: mean {mean}, rmse {rmse}");
    }
}

#[test]
fn rmse_at_theta0_matches_rmse_at_zero() {
    for seed in 0..3 {
        let inp = inputs(seed, 25, 1000);
        let at_zero = power::evaluate_rmse(&inp, 0.10, 0.90).unwrap();
        let at_theta0 = power::evaluate_rmse(
            &EvalInputs {
                theta: at_zero.theta0,
                ..inp
            },
            0.10,
            0.90,
        )
        .unwrap();
        let rel = (at_theta0.rmse - at_zero.rmse).abs() / at_zero.rmse;
        assert!(rel < 0.1, "seed {seed}: {} vs {}", at_theta0.rmse, at_zero.rmse);
    }
}

#[test]
fn every_replicate_spends_the_budget() {
    let inp = EvalInputs {
        theta: 3.0,
        ..inputs(1, 40, 50)
    };
    for k in 0..50 {
        let draw = power::simulate_replicate(&inp, &mut rng::stream(inp.seed, k)).unwrap();
        let total: f64 = draw.data.x().iter().sum();
        assert!((total / inp.budget - 1.0).abs() < 1e-9);
    }
}

#[test]
fn doubling_budget_doubles_budget_to_baseline() {
    let inp = EvalInputs {
        balance: BalanceConfig::disabled(),
        ..inputs(2, 20, 100)
    };
    let one = power::budget_to_baseline(&inp).unwrap();
    let two = power::budget_to_baseline(&EvalInputs {
        budget: 2.0 * inp.budget,
        ..inp
    })
    .unwrap();
    assert!((two / one - 2.0).abs() < 1e-12);
}

#[test]
fn power_grows_with_effect_size() {
    let inp = EvalInputs {
        trim_spec: TrimSpec::untrimmed(),
        balance: BalanceConfig::disabled(),
        ..inputs(4, 20, 400)
    };
    let q = power::null_quantile(&inp, 0.10).unwrap();
    let rmse = power::evaluate_rmse(&inp, 0.10, 0.90).unwrap().rmse;
    let small = power::empirical_power(&EvalInputs { theta: 0.0, ..inp.clone() }, q).unwrap();
    let large = power::empirical_power(&EvalInputs { theta: 20.0 * rmse, ..inp }, q).unwrap();
    assert!(small <= 0.10 + 3.0 * (0.09f64 / 400.0).sqrt());
    assert_eq!(large, 1.0);
}

#[test]
fn evaluation_ignores_worker_count() {
    let inp = inputs(5, 30, 200);
    let one = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| power::evaluate_rmse(&inp, 0.1, 0.9).unwrap());
    let four = rayon::ThreadPoolBuilder::new()
        .num_threads(4)
        .build()
        .unwrap()
        .install(|| power::evaluate_rmse(&inp, 0.1, 0.9).unwrap());
    assert_eq!(one, four);
    assert_eq!(one.rmse.to_bits(), four.rmse.to_bits());
}
