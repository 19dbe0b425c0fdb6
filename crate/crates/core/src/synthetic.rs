//! Synthetic pretest panels: lognormal geo sizes, a day-of-week cycle with
//! AR(1) noise, and spend proportional to response (or to its square).

use chrono::NaiveDate;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{DesignError, Result};
use crate::estimator::TrimSpec;
use crate::geo_data::{GeoId, GeoPanel};
use crate::pipeline::{self, DesignConfig, EvaluationWindow};
use crate::rng;
use crate::stats::normal_quantile;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_geos: usize,
    pub n_days: usize,
    pub size_scale: f64,
    pub lognormal_mu: f64,
    pub lognormal_sigma: f64,
    pub seasonal_amp: f64,
    pub noise_amp: f64,
    pub ar_coef: f64,
    pub spend_rate: f64,
    pub spend_noise: f64,
    /// 1: spend proportional to response; 2: to squared response.
    pub proxy_power: u8,
    pub start_date: NaiveDate,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_geos: 100,
            n_days: 42,
            size_scale: 1e5,
            lognormal_mu: 1.0,
            lognormal_sigma: 1.0,
            seasonal_amp: 0.25,
            noise_amp: 0.5,
            ar_coef: 0.5,
            spend_rate: 0.01,
            spend_noise: 0.5,
            proxy_power: 1,
            start_date: NaiveDate::from_ymd_opt(2020, 1, 1).expect("valid date"),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_geos < 2 {
            return Err(DesignError::invalid("n_geos must be at least 2"));
        }
        if self.n_days == 0 {
            return Err(DesignError::invalid("n_days must be positive"));
        }
        if !(self.ar_coef.abs() < 1.0) {
            return Err(DesignError::invalid("ar_coef must lie in (-1, 1)"));
        }
        let amps = [
            self.size_scale,
            self.lognormal_sigma,
            self.seasonal_amp,
            self.noise_amp,
            self.spend_rate,
            self.spend_noise,
        ];
        if amps.iter().any(|a| !(a.is_finite() && *a >= 0.0)) || !self.lognormal_mu.is_finite() {
            return Err(DesignError::invalid("scales and amplitudes must be finite and non-negative"));
        }
        if self.proxy_power != 1 && self.proxy_power != 2 {
            return Err(DesignError::invalid("proxy_power must be 1 or 2"));
        }
        Ok(())
    }
}

/// `size_scale * exp(mu + sigma * q(i / (N + 1)))` for `i = 1..=N`.
pub fn geo_sizes(cfg: &SynthConfig) -> Vec<f64> {
    let n = cfg.n_geos;
    (1..=n)
        .map(|i| {
            let z = normal_quantile(i as f64 / (n + 1) as f64);
            cfg.size_scale * (cfg.lognormal_mu + cfg.lognormal_sigma * z).exp()
        })
        .collect()
}

/// Ids `geo_001`, `geo_002`, ... in size order.
pub fn geo_ids(n: usize) -> Vec<GeoId> {
    let width = n.to_string().len().max(3);
    (1..=n).map(|i| GeoId::new(format!("geo_{i:0width$}"))).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPanel {
    pub panel: GeoPanel,
    pub sizes: Vec<f64>,
    /// Response cells that came out negative and were set to 0.
    pub floored: usize,
}

/// Generate a panel. Each geo draws from its own stream: the stationary
/// starting noise, then a normal and a uniform per day.
pub fn generate(cfg: &SynthConfig) -> Result<SyntheticPanel> {
    cfg.validate()?;
    let sizes = geo_sizes(cfg);
    let stationary_sd = (1.0 / (1.0 - cfg.ar_coef * cfg.ar_coef)).sqrt();
    let mut floored = 0;
    let mut response = Vec::with_capacity(cfg.n_geos);
    let mut weights = Vec::with_capacity(cfg.n_geos);
    for (i, &g) in sizes.iter().enumerate() {
        let mut stream = rng::stream(cfg.seed, i as u64);
        let start: f64 = StandardNormal.sample(&mut stream);
        let mut eps = stationary_sd * start;
        let mut r = Vec::with_capacity(cfg.n_days);
        let mut w = Vec::with_capacity(cfg.n_days);
        for t in 0..cfg.n_days {
            let shock: f64 = StandardNormal.sample(&mut stream);
            let u: f64 = stream.gen_range(-1.0..1.0);
            eps = cfg.ar_coef * eps + shock;
            let season = (2.0 * std::f64::consts::PI * t as f64 / 7.0).sin();
            let mut value = g * (1.0 + cfg.seasonal_amp * season * (1.0 + cfg.noise_amp * eps));
            if value < 0.0 {
                value = 0.0;
                floored += 1;
            }
            r.push(value);
            w.push(1.0 + cfg.spend_noise * u);
        }
        response.push(r);
        weights.push(w);
    }

    let linear: Vec<Vec<f64>> = response
        .iter()
        .zip(&weights)
        .map(|(r, w)| r.iter().zip(w).map(|(r, w)| cfg.spend_rate * r * w).collect())
        .collect();
    let spend = if cfg.proxy_power == 1 {
        linear
    } else {
        let raw: Vec<Vec<f64>> = response
            .iter()
            .zip(&weights)
            .map(|(r, w)| r.iter().zip(w).map(|(r, w)| r * r * w).collect())
            .collect();
        let target: f64 = linear.iter().flatten().sum();
        let total: f64 = raw.iter().flatten().sum();
        let scale = if total > 0.0 { target / total } else { 0.0 };
        raw.into_iter()
            .map(|s| s.into_iter().map(|v| v * scale).collect())
            .collect()
    };

    let panel = GeoPanel::new(geo_ids(cfg.n_geos), cfg.start_date, response, Some(spend))?;
    Ok(SyntheticPanel {
        panel,
        sizes,
        floored,
    })
}

pub fn generate_panel(cfg: &SynthConfig) -> Result<GeoPanel> {
    Ok(generate(cfg)?.panel)
}

/// Mean candidate RMSE per `n` over several synthetic panels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseCurveFixture {
    pub seeds: Vec<u64>,
    pub rows: Vec<RmseCurveRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmseCurveRow {
    pub n: usize,
    pub cv_trimmed: f64,
    pub cv_untrimmed: f64,
    pub in_sample_trimmed: f64,
    pub in_sample_untrimmed: f64,
}

/// Run the candidate evaluation on one panel per seed, with and without
/// cross validation and with data-driven and no trimming. Pairs depend
/// only on the pairing period, so all four evaluations share them.
pub fn expected_rmse_curve_fixture(
    synth: &SynthConfig,
    design: &DesignConfig,
    seeds: &[u64],
) -> Result<RmseCurveFixture> {
    let (grid, _) = design.grid(synth.n_geos)?;
    let mut sums = vec![[0.0; 4]; grid.len()];
    for &seed in seeds {
        let panel = generate_panel(&SynthConfig {
            seed,
            ..synth.clone()
        })?;
        let cfg = DesignConfig {
            seed,
            ..design.clone()
        };
        let cv = pipeline::design_periods(&panel, &DesignConfig {
            evaluation_window: EvaluationWindow::Holdout,
            ..cfg.clone()
        })?;
        let in_sample = pipeline::design_periods(&panel, &DesignConfig {
            evaluation_window: EvaluationWindow::InSample,
            ..cfg.clone()
        })?;
        let pairs = pipeline::candidate_pairs(&panel, &cv, cfg.pairing_method, &grid)?;
        let variants = [
            (&cv, cfg.trim_spec),
            (&cv, TrimSpec::untrimmed()),
            (&in_sample, cfg.trim_spec),
            (&in_sample, TrimSpec::untrimmed()),
        ];
        for (slot, (periods, trim_spec)) in variants.into_iter().enumerate() {
            let data = pipeline::evaluation_data(&panel, periods, cfg.spend_proxy)?;
            let rows = pipeline::evaluate_candidates(
                &pairs,
                &data,
                &DesignConfig {
                    trim_spec,
                    ..cfg.clone()
                },
            )?;
            for (acc, row) in sums.iter_mut().zip(rows) {
                acc[slot] += row.rmse;
            }
        }
    }
    let m = seeds.len().max(1) as f64;
    Ok(RmseCurveFixture {
        seeds: seeds.to_vec(),
        rows: grid
            .iter()
            .zip(sums)
            .map(|(&n, s)| RmseCurveRow {
                n,
                cv_trimmed: s[0] / m,
                cv_untrimmed: s[1] / m,
                in_sample_trimmed: s[2] / m,
                in_sample_untrimmed: s[3] / m,
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_size_is_scale_times_e() {
        let cfg = SynthConfig {
            n_geos: 101,
            ..SynthConfig::default()
        };
        let g = geo_sizes(&cfg);
        assert!((g[50] - 1e5 * std::f64::consts::E).abs() < 1e-6);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        let flat = geo_sizes(&SynthConfig {
            lognormal_sigma: 0.0,
            ..SynthConfig::default()
        });
        assert!(flat.iter().all(|v| (v - 1e5 * std::f64::consts::E).abs() < 1e-6));
    }

    #[test]
    fn first_day_is_exact_size() {
        for seed in 0..3 {
            let s = generate(&SynthConfig {
                seed,
                ..SynthConfig::default()
            })
            .unwrap();
            for (i, g) in s.sizes.iter().enumerate() {
                assert_eq!(s.panel.response(i)[0], *g);
            }
        }
    }

    #[test]
    fn degenerate_config_is_constant() {
        let cfg = SynthConfig {
            n_geos: 5,
            n_days: 21,
            seasonal_amp: 0.0,
            noise_amp: 0.0,
            ..SynthConfig::default()
        };
        let s = generate(&cfg).unwrap();
        for (i, g) in s.sizes.iter().enumerate() {
            assert!(s.panel.response(i).iter().all(|r| r == g));
            for v in s.panel.spend(i).unwrap() {
                let ratio = v / (0.01 * g);
                assert!((0.5..=1.5).contains(&ratio));
            }
        }
    }

    #[test]
    fn same_seed_same_panel() {
        let cfg = SynthConfig {
            seed: 9,
            ..SynthConfig::default()
        };
        assert_eq!(generate_panel(&cfg).unwrap(), generate_panel(&cfg).unwrap());
        assert_ne!(
            generate_panel(&cfg).unwrap(),
            generate_panel(&SynthConfig { seed: 10, ..cfg }).unwrap()
        );
    }

    #[test]
    fn squared_proxy_matches_linear_total() {
        let lin = generate_panel(&SynthConfig::default()).unwrap();
        let sq = generate_panel(&SynthConfig {
            proxy_power: 2,
            ..SynthConfig::default()
        })
        .unwrap();
        let total = |p: &GeoPanel| -> f64 { (0..p.n_geos()).flat_map(|i| p.spend(i).unwrap().to_vec()).sum() };
        assert!((total(&lin) - total(&sq)).abs() <= 1e-9 * total(&lin));
        assert_eq!(lin.response(3), sq.response(3));
    }

    #[test]
    fn config_validation() {
        assert!(SynthConfig { ar_coef: 1.0, ..SynthConfig::default() }.validate().is_err());
        assert!(SynthConfig { n_geos: 1, ..SynthConfig::default() }.validate().is_err());
        assert!(SynthConfig { proxy_power: 3, ..SynthConfig::default() }.validate().is_err());
        assert!(SynthConfig { noise_amp: -1.0, ..SynthConfig::default() }.validate().is_err());
    }

    #[test]
    fn ids_are_zero_padded() {
        assert_eq!(geo_ids(3)[0].as_str(), "geo_001");
        assert_eq!(geo_ids(1500)[0].as_str(), "geo_0001");
    }
}
