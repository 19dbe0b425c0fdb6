//! Within-pair random assignment and rerandomization balance checks.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DesignError, Result};
use crate::estimator::{self, TrimSpec};
use crate::geo_data::GeoId;
use crate::pairing::PairSet;
use crate::power;
use crate::stats::binomial_two_sided_half;

/// Per-pair arms. `+1` treats the second geo of the pair (`geo_b`), `-1`
/// treats the first.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Assignment {
    arms: Vec<i8>,
}

impl Assignment {
    pub fn new(arms: Vec<i8>) -> Result<Self> {
        if arms.iter().any(|a| *a != 1 && *a != -1) {
            return Err(DesignError::invalid("arms must be +1 or -1"));
        }
        Ok(Assignment { arms })
    }

    pub fn arms(&self) -> &[i8] {
        &self.arms
    }

    pub fn len(&self) -> usize {
        self.arms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arms.is_empty()
    }

    /// Index (0 or 1) of the treated geo within pair `i`.
    pub fn treated(&self, i: usize) -> usize {
        usize::from(self.arms[i] == 1)
    }

    pub fn flipped(&self) -> Assignment {
        Assignment {
            arms: self.arms.iter().map(|a| -a).collect(),
        }
    }

    /// Assignment number `code` in the enumeration of all `2^n` arms: bit
    /// `i` set means pair `i` gets `+1`.
    pub fn from_bits(n: usize, code: u64) -> Assignment {
        Assignment {
            arms: (0..n).map(|i| if code >> i & 1 == 1 { 1 } else { -1 }).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BalanceConfig {
    /// Minimum two-sided sign-test p-value.
    pub sign_test_min_p: f64,
    /// Largest allowed |estimate| on a simulated null experiment, in iROAS
    /// units. `None` disables the check.
    pub max_abs_sim_iroas: Option<f64>,
    /// Maximum number of draws before giving up.
    pub max_redraws: usize,
}

impl Default for BalanceConfig {
    fn default() -> Self {
        BalanceConfig {
            sign_test_min_p: 0.2,
            max_abs_sim_iroas: None,
            max_redraws: 1000,
        }
    }
}

impl BalanceConfig {
    /// Accept the first draw.
    pub fn disabled() -> Self {
        BalanceConfig {
            sign_test_min_p: 0.0,
            max_abs_sim_iroas: None,
            max_redraws: 1000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.sign_test_min_p) {
            return Err(DesignError::invalid("sign_test_min_p must lie in [0, 1]"));
        }
        if self.max_abs_sim_iroas.is_some_and(|t| t.is_nan() || t < 0.0) {
            return Err(DesignError::invalid("max_abs_sim_iroas must be non-negative"));
        }
        if self.max_redraws == 0 {
            return Err(DesignError::invalid("max_redraws must be positive"));
        }
        Ok(())
    }
}

/// Per-pair `[first geo, second geo]` values in pair order.
pub fn pair_values(pairs: &PairSet, values: &BTreeMap<GeoId, f64>) -> Result<Vec<[f64; 2]>> {
    let get = |g: &GeoId| {
        values
            .get(g)
            .copied()
            .ok_or_else(|| DesignError::UnknownGeo(g.to_string()))
    };
    pairs
        .pairs
        .iter()
        .map(|p| Ok([get(&p.geo_a)?, get(&p.geo_b)?]))
        .collect()
}

/// Pretest data the checks are computed on.
#[derive(Debug, Clone, PartialEq)]
pub struct BalanceContext {
    /// Pretest response per pair.
    pub baseline: Vec<[f64; 2]>,
    /// Spend proxy per pair.
    pub proxies: Vec<[f64; 2]>,
    pub budget: f64,
    pub trim_spec: TrimSpec,
}

impl BalanceContext {
    pub fn from_maps(
        pairs: &PairSet,
        baseline: &BTreeMap<GeoId, f64>,
        proxies: &BTreeMap<GeoId, f64>,
        budget: f64,
        trim_spec: TrimSpec,
    ) -> Result<Self> {
        Ok(BalanceContext {
            baseline: pair_values(pairs, baseline)?,
            proxies: pair_values(pairs, proxies)?,
            budget,
            trim_spec,
        })
    }
}

/// Fair independent signs.
pub fn draw_assignment<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Assignment {
    Assignment {
        arms: (0..n).map(|_| if rng.gen::<bool>() { 1 } else { -1 }).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SignCheck {
    pub passed: bool,
    pub p_value: f64,
    /// Pairs whose treated geo has the larger baseline.
    pub positive: usize,
    /// Pairs with a nonzero baseline difference.
    pub informative: usize,
}

/// Is the share of pairs with treated baseline above control close to 1/2?
pub fn sign_balance_check(baseline: &[[f64; 2]], a: &Assignment, cfg: &BalanceConfig) -> SignCheck {
    let mut positive = 0;
    let mut informative = 0;
    for (i, b) in baseline.iter().enumerate() {
        let t = a.treated(i);
        let diff = b[t] - b[1 - t];
        if diff != 0.0 {
            informative += 1;
            if diff > 0.0 {
                positive += 1;
            }
        }
    }
    let p_value = binomial_two_sided_half(positive, informative);
    SignCheck {
        passed: p_value >= cfg.sign_test_min_p,
        p_value,
        positive,
        informative,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimIroasCheck {
    pub passed: bool,
    /// `None` when the check is disabled or estimation failed.
    pub theta_hat: Option<f64>,
}

/// Estimate the iROAS of a simulated null experiment on the pretest data
/// under this assignment and require it to be near zero.
pub fn sim_iroas_check(ctx: &BalanceContext, a: &Assignment, cfg: &BalanceConfig) -> SimIroasCheck {
    let Some(threshold) = cfg.max_abs_sim_iroas else {
        return SimIroasCheck {
            passed: true,
            theta_hat: None,
        };
    };
    let theta_hat = power::experiment_data(&ctx.baseline, &ctx.proxies, ctx.budget, 0.0, a)
        .ok()
        .and_then(|(data, _)| estimator::estimate(&data, &ctx.trim_spec).ok())
        .map(|e| e.theta_hat);
    SimIroasCheck {
        passed: theta_hat.is_some_and(|t| t.abs() <= threshold),
        theta_hat,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rerandomization {
    pub assignment: Assignment,
    /// Draws made, including the accepted one.
    pub attempts: usize,
    /// True when no draw passed within `max_redraws`; the last draw is kept.
    pub capped: bool,
}

pub fn passes(ctx: &BalanceContext, a: &Assignment, cfg: &BalanceConfig) -> bool {
    sign_balance_check(&ctx.baseline, a, cfg).passed && sim_iroas_check(ctx, a, cfg).passed
}

/// Draw until both checks pass or `max_redraws` draws have been made.
pub fn rerandomize<R: Rng + ?Sized>(
    ctx: &BalanceContext,
    cfg: &BalanceConfig,
    rng: &mut R,
) -> Rerandomization {
    let n = ctx.baseline.len();
    let limit = cfg.max_redraws.max(1);
    let mut attempts = 0;
    loop {
        let assignment = draw_assignment(n, rng);
        attempts += 1;
        if passes(ctx, &assignment, cfg) {
            return Rerandomization {
                assignment,
                attempts,
                capped: false,
            };
        }
        if attempts == limit {
            return Rerandomization {
                assignment,
                attempts,
                capped: true,
            };
        }
    }
}
