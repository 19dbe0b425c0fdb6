use geodesign::synthetic::{self, SynthConfig};
use geodesign::stats::normal_quantile;

fn long_config() -> SynthConfig {
    SynthConfig {
        n_geos: 6,
        n_days: 7 * 350,
        seed: 3,
        ..SynthConfig::default()
    }
}

/// Invert the response formula on days where the weekly cycle is nonzero.
fn recovered_noise(cfg: &SynthConfig, r: &[f64], g: f64) -> Vec<Option<f64>> {
    r.iter()
        .enumerate()
        .map(|(t, &v)| {
            let w = (2.0 * std::f64::consts::PI * t as f64 / 7.0).sin();
            (t % 7 != 0).then(|| ((v / g - 1.0) / (cfg.seasonal_amp * w) - 1.0) / cfg.noise_amp)
        })
        .collect()
}

#[test]
fn noise_has_lag_one_autocorrelation_near_ar_coefficient() {
    let cfg = long_config();
    let synth = synthetic::generate(&cfg).unwrap();
    assert_eq!(synth.floored, 0);
    let mut pairs = Vec::new();
    let mut all = Vec::new();
    for (i, &g) in synth.sizes.iter().enumerate() {
        let eps = recovered_noise(&cfg, synth.panel.response(i), g);
        all.extend(eps.iter().flatten().copied());
        for w in eps.windows(2) {
            if let [Some(a), Some(b)] = w {
                pairs.push((*a, *b));
            }
        }
    }
    let mean = all.iter().sum::<f64>() / all.len() as f64;
    let var = all.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / all.len() as f64;
    let cov = pairs.iter().map(|(a, b)| (a - mean) * (b - mean)).sum::<f64>() / pairs.len() as f64;
    let rho = cov / var;
    assert!((rho - 0.5).abs() <= 0.05, "lag-1 autocorrelation {rho}");
    // Stationary start: variance 1 / (1 - 0.25).
    assert!((var - 4.0 / 3.0).abs() < 0.1, "noise variance {var}");
}

#[test]
fn spend_is_one_percent_of_response() {
    let cfg = SynthConfig {
        seed: 9,
        ..SynthConfig::default()
    };
    let panel = synthetic::generate_panel(&cfg).unwrap();
    let mut ratios = Vec::new();
    for i in 0..panel.n_geos() {
        let spend = panel.spend(i).unwrap();
        for (s, r) in spend.iter().zip(panel.response(i)) {
            if *r > 0.0 {
                ratios.push(s / r);
            }
        }
    }
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    assert!((mean / 0.01 - 1.0).abs() <= 0.02, "mean S/R {mean}");
}

#[test]
fn long_run_geo_means_match_sizes() {
    let cfg = long_config();
    let synth = synthetic::generate(&cfg).unwrap();
    for (i, &g) in synth.sizes.iter().enumerate() {
        let r = synth.panel.response(i);
        let mean = r.iter().sum::<f64>() / r.len() as f64;
        assert!((mean / g - 1.0).abs() < 0.05, "geo {i}: mean {mean} vs size {g}");
    }
}

#[test]
fn first_day_equals_size_exactly() {
    for seed in 0..5 {
        let synth = synthetic::generate(&SynthConfig {
            seed,
            ..SynthConfig::default()
        })
        .unwrap();
        for (i, &g) in synth.sizes.iter().enumerate() {
            assert_eq!(synth.panel.response(i)[0], g);
        }
    }
}

#[test]
fn sizes_follow_lognormal_quantiles() {
    let cfg = SynthConfig::default();
    let sizes = synthetic::geo_sizes(&cfg);
    assert!(sizes.windows(2).all(|w| w[0] < w[1]));
    for (i, g) in sizes.iter().enumerate() {
        let q = normal_quantile((i + 1) as f64 / 101.0);
        assert_eq!(*g, 1e5 * (1.0 + q).exp());
    }
    let odd = synthetic::geo_sizes(&SynthConfig {
        n_geos: 101,
        ..SynthConfig::default()
    });
    assert!((odd[50] - 1e5 * std::f64::consts::E).abs() < 1e-6);
}

#[test]
fn degenerate_config_gives_constant_response() {
    let cfg = SynthConfig {
        n_geos: 4,
        n_days: 14,
        seasonal_amp: 0.0,
        noise_amp: 0.0,
        ..SynthConfig::default()
    };
    let synth = synthetic::generate(&cfg).unwrap();
    for (i, &g) in synth.sizes.iter().enumerate() {
        assert!(synth.panel.response(i).iter().all(|&v| v == g));
        for &s in synth.panel.spend(i).unwrap() {
            assert!(s >= 0.005 * g - 1e-9 && s <= 0.015 * g + 1e-9);
        }
    }
}

#[test]
fn squared_proxy_keeps_total_spend() {
    let base = SynthConfig {
        seed: 4,
        ..SynthConfig::default()
    };
    let lin = synthetic::generate_panel(&base).unwrap();
    let sq = synthetic::generate_panel(&SynthConfig {
        proxy_power: 2,
        ..base
    })
    .unwrap();
    let total = |p: &geodesign::GeoPanel| -> f64 {
        (0..p.n_geos()).map(|i| p.spend(i).unwrap().iter().sum::<f64>()).sum()
    };
    assert!((total(&sq) / total(&lin) - 1.0).abs() < 1e-12);
    // Spend shifts toward the largest geos.
    let share = |p: &geodesign::GeoPanel| p.spend(p.n_geos() - 1).unwrap().iter().sum::<f64>() / total(p);
    assert!(share(&sq) > share(&lin));
}

#[test]
fn generation_is_deterministic() {
    let cfg = SynthConfig {
        seed: 17,
        ..SynthConfig::default()
    };
    assert_eq!(synthetic::generate_panel(&cfg).unwrap(), synthetic::generate_panel(&cfg).unwrap());
    let other = synthetic::generate_panel(&SynthConfig { seed: 18, ..cfg }).unwrap();
    assert_ne!(synthetic::generate_panel(&SynthConfig { seed: 17, ..SynthConfig::default() }).unwrap(), other);
}
