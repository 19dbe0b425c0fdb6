//! Monte Carlo power analysis for hold-back experiments with a fixed budget.
//!
//! Each replicate draws a (balance-checked) assignment, gives every treated
//! geo spend `r * S'` with `r = B / sum(treated S')`, adds `theta * r * S'`
//! to its response, and estimates the iROAS from the pair differences. The
//! RMSE of those estimates around `theta` measures design precision.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DesignError, EstimationError, Result};
use crate::estimator::{self, PairExperimentData, TrimSpec};
use crate::geo_data::GeoId;
use crate::pairing::PairSet;
use crate::randomization::{self, Assignment, BalanceConfig, BalanceContext};
use crate::rng;
use crate::stats::{empirical_quantile, normal_quantile};

pub const DEFAULT_REPLICATES: usize = 1000;
/// Share of failed replicates above which a design is flagged invalid.
pub const MAX_FAILURE_RATE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalInputs {
    pub pairs: PairSet,
    /// Response per paired geo summed over the evaluation period.
    pub baseline_response: BTreeMap<GeoId, f64>,
    /// Relative spend level per paired geo.
    pub spend_proxy: BTreeMap<GeoId, f64>,
    pub budget: f64,
    /// True iROAS used to generate the replicates.
    pub theta: f64,
    pub replicates: usize,
    pub trim_spec: TrimSpec,
    pub seed: u64,
    pub balance: BalanceConfig,
    /// Pretest response the balance checks look at. Defaults to
    /// `baseline_response`.
    pub balance_baseline: Option<BTreeMap<GeoId, f64>>,
}

impl EvalInputs {
    /// Inputs with default replicates, trimming and balance checks.
    pub fn new(
        pairs: PairSet,
        baseline_response: BTreeMap<GeoId, f64>,
        spend_proxy: BTreeMap<GeoId, f64>,
        budget: f64,
        seed: u64,
    ) -> Self {
        EvalInputs {
            pairs,
            baseline_response,
            spend_proxy,
            budget,
            theta: 0.0,
            replicates: DEFAULT_REPLICATES,
            trim_spec: TrimSpec::default(),
            seed,
            balance: BalanceConfig::default(),
            balance_baseline: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignEvaluation {
    pub n: usize,
    pub rmse: f64,
    /// Minimum detectable iROAS.
    pub theta0: f64,
    pub budget_to_baseline: f64,
    /// Replicates whose estimate failed.
    pub failures: usize,
    /// Replicates whose assignment never passed the balance checks.
    pub capped_redraws: usize,
    /// More than 1% of replicates failed.
    pub invalid: bool,
    pub seed: u64,
    /// RMSE re-evaluated with the true iROAS at `theta0`, when requested.
    #[serde(default)]
    pub rmse_at_theta0: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateDraw {
    pub assignment: Assignment,
    /// Budget scaling factor.
    pub r: f64,
    pub data: PairExperimentData,
    pub theta_hat: std::result::Result<f64, EstimationError>,
    pub attempts: usize,
    pub capped: bool,
}

// Validated per-pair view of EvalInputs.
struct Prepared {
    response: Vec<[f64; 2]>,
    proxies: Vec<[f64; 2]>,
    balance: BalanceContext,
}

fn prepare(inputs: &EvalInputs) -> Result<Prepared> {
    if inputs.pairs.is_empty() {
        return Err(DesignError::invalid("no pairs to evaluate"));
    }
    if !(inputs.budget > 0.0 && inputs.budget.is_finite()) {
        return Err(DesignError::invalid("budget must be positive and finite"));
    }
    if !inputs.theta.is_finite() {
        return Err(DesignError::invalid("theta must be finite"));
    }
    if inputs.replicates == 0 {
        return Err(DesignError::invalid("at least one replicate is required"));
    }
    inputs.balance.validate()?;
    let response = randomization::pair_values(&inputs.pairs, &inputs.baseline_response)?;
    let proxies = randomization::pair_values(&inputs.pairs, &inputs.spend_proxy)?;
    if proxies.iter().flatten().any(|s| !(s.is_finite() && *s >= 0.0)) {
        return Err(DesignError::invalid("spend proxies must be finite and non-negative"));
    }
    if response.iter().flatten().any(|v| !v.is_finite()) {
        return Err(DesignError::invalid("baseline response must be finite"));
    }
    let check_baseline = match &inputs.balance_baseline {
        Some(b) => randomization::pair_values(&inputs.pairs, b)?,
        None => response.clone(),
    };
    let balance = BalanceContext {
        baseline: check_baseline,
        proxies: proxies.clone(),
        budget: inputs.budget,
        trim_spec: inputs.trim_spec,
    };
    Ok(Prepared {
        response,
        proxies,
        balance,
    })
}

/// Experiment data for one assignment: the treated geo of each pair gets
/// spend `r * S'` and response `R' + theta * r * S'`, the control geo keeps
/// `R'` with no spend. Returns the data and `r`.
pub fn experiment_data(
    response: &[[f64; 2]],
    proxies: &[[f64; 2]],
    budget: f64,
    theta: f64,
    a: &Assignment,
) -> Result<(PairExperimentData, f64)> {
    let treated_proxy: f64 = (0..a.len()).map(|i| proxies[i][a.treated(i)]).sum();
    if !(treated_proxy > 0.0) {
        return Err(DesignError::invalid("treated spend proxies sum to zero"));
    }
    let r = budget / treated_proxy;
    let mut x = Vec::with_capacity(a.len());
    let mut y = Vec::with_capacity(a.len());
    for i in 0..a.len() {
        let t = a.treated(i);
        let spend = r * proxies[i][t];
        x.push(spend);
        y.push(response[i][t] + theta * spend - response[i][1 - t]);
    }
    Ok((PairExperimentData::new(x, y)?, r))
}

fn draw(prep: &Prepared, inputs: &EvalInputs, rng: &mut impl Rng) -> Result<ReplicateDraw> {
    let chosen = randomization::rerandomize(&prep.balance, &inputs.balance, rng);
    let (data, r) = experiment_data(
        &prep.response,
        &prep.proxies,
        inputs.budget,
        inputs.theta,
        &chosen.assignment,
    )?;
    let theta_hat = estimator::estimate(&data, &inputs.trim_spec).map(|e| e.theta_hat);
    Ok(ReplicateDraw {
        assignment: chosen.assignment,
        r,
        data,
        theta_hat,
        attempts: chosen.attempts,
        capped: chosen.capped,
    })
}

/// One replicate drawn from `rng`.
pub fn simulate_replicate(inputs: &EvalInputs, rng: &mut impl Rng) -> Result<ReplicateDraw> {
    draw(&prepare(inputs)?, inputs, rng)
}

struct Outcome {
    theta_hat: Option<f64>,
    budget_to_baseline: f64,
    capped: bool,
}

// Replicate k always uses stream k of the seed, so results do not depend on
// how the work is scheduled.
fn run_all(inputs: &EvalInputs) -> Result<Vec<Outcome>> {
    let prep = prepare(inputs)?;
    Ok((0..inputs.replicates)
        .into_par_iter()
        .map(|k| {
            let mut stream = rng::stream(inputs.seed, k as u64);
            match draw(&prep, inputs, &mut stream) {
                Ok(d) => Outcome {
                    theta_hat: d.theta_hat.ok(),
                    budget_to_baseline: treated_ratio(&prep.response, inputs.budget, &d.assignment),
                    capped: d.capped,
                },
                Err(_) => Outcome {
                    theta_hat: None,
                    budget_to_baseline: f64::NAN,
                    capped: false,
                },
            }
        })
        .collect())
}

fn treated_ratio(response: &[[f64; 2]], budget: f64, a: &Assignment) -> f64 {
    let treated: f64 = (0..a.len()).map(|i| response[i][a.treated(i)]).sum();
    budget / treated
}

/// Estimates of every replicate in index order; `None` marks a failure.
pub fn replicate_estimates(inputs: &EvalInputs) -> Result<Vec<Option<f64>>> {
    Ok(run_all(inputs)?.into_iter().map(|o| o.theta_hat).collect())
}

/// RMSE of the replicate estimates around `inputs.theta`, with the implied
/// minimum detectable iROAS at type-I error `alpha` and power `beta`.
pub fn evaluate_rmse(inputs: &EvalInputs, alpha: f64, beta: f64) -> Result<DesignEvaluation> {
    let outcomes = run_all(inputs)?;
    let k = outcomes.len();
    let mut sum_sq = 0.0;
    let mut ok = 0usize;
    let mut btb_sum = 0.0;
    let mut btb_count = 0usize;
    let mut capped = 0;
    for o in &outcomes {
        if let Some(t) = o.theta_hat {
            sum_sq += (t - inputs.theta).powi(2);
            ok += 1;
        }
        if o.budget_to_baseline.is_finite() {
            btb_sum += o.budget_to_baseline;
            btb_count += 1;
        }
        capped += usize::from(o.capped);
    }
    if ok == 0 {
        return Err(DesignError::AllReplicatesFailed { replicates: k });
    }
    let failures = k - ok;
    let rmse = (sum_sq / ok as f64).sqrt();
    Ok(DesignEvaluation {
        n: inputs.pairs.len(),
        rmse,
        theta0: minimum_detectable_iroas(rmse, alpha, beta)?,
        budget_to_baseline: if btb_count > 0 { btb_sum / btb_count as f64 } else { f64::INFINITY },
        failures,
        capped_redraws: capped,
        invalid: failures as f64 > MAX_FAILURE_RATE * k as f64,
        seed: inputs.seed,
        rmse_at_theta0: None,
    })
}

/// `rmse * (q(1 - alpha) + q(beta))` with `q` the standard normal quantile.
pub fn minimum_detectable_iroas(rmse: f64, alpha: f64, beta: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0 && beta > 0.0 && beta < 1.0) {
        return Err(DesignError::invalid(format!(
            "alpha ({alpha}) and beta ({beta}) must lie in (0, 1)"
        )));
    }
    Ok(rmse * quantile_sum(alpha, beta))
}

/// `q(1 - alpha) + q(beta)`.
pub fn quantile_sum(alpha: f64, beta: f64) -> f64 {
    normal_quantile(1.0 - alpha) + normal_quantile(beta)
}

/// Empirical `1 - alpha` quantile of the estimates under no effect.
pub fn null_quantile(inputs: &EvalInputs, alpha: f64) -> Result<f64> {
    let null = EvalInputs {
        theta: 0.0,
        ..inputs.clone()
    };
    let estimates: Vec<f64> = replicate_estimates(&null)?.into_iter().flatten().collect();
    empirical_quantile(&estimates, 1.0 - alpha).ok_or(DesignError::AllReplicatesFailed {
        replicates: inputs.replicates,
    })
}

/// Share of replicates (failures count as misses) whose estimate exceeds
/// `q`.
pub fn empirical_power(inputs: &EvalInputs, q: f64) -> Result<f64> {
    let estimates = replicate_estimates(inputs)?;
    let hits = estimates.iter().filter(|t| t.is_some_and(|t| t > q)).count();
    Ok(hits as f64 / estimates.len() as f64)
}

/// Mean over replicate assignments of the budget divided by the treated
/// geos' baseline response.
pub fn budget_to_baseline(inputs: &EvalInputs) -> Result<f64> {
    let prep = prepare(inputs)?;
    let total: f64 = (0..inputs.replicates)
        .map(|k| {
            let mut stream = rng::stream(inputs.seed, k as u64);
            let chosen = randomization::rerandomize(&prep.balance, &inputs.balance, &mut stream);
            treated_ratio(&prep.response, inputs.budget, &chosen.assignment)
        })
        .sum();
    Ok(total / inputs.replicates as f64)
}
