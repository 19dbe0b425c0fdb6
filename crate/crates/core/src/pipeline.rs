//! End-to-end design: split the pretest window, pair on the recent part,
//! evaluate every candidate size on the held-out part, pick a design and
//! randomize it.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{DesignError, Result};
use crate::estimator::TrimSpec;
use crate::geo_data::{self, DateRange, GeoId, GeoPanel, PeriodSplit};
use crate::pairing::{self, DistanceMatrix, PairSet};
use crate::power::{self, DesignEvaluation, EvalInputs};
use crate::randomization::{self, Assignment, BalanceConfig, BalanceContext};
use crate::rng;

/// Fewer pairs than this trigger a reliability warning.
pub const MIN_RECOMMENDED_PAIRS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairingMethod {
    Optimal,
    Rank,
}

/// Where the evaluation window comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum EvaluationWindow {
    /// The earliest `eval_days` days; pairing uses the rest.
    Holdout,
    /// An explicit window; pairing uses the days after it.
    Range { start: chrono::NaiveDate, days: usize },
    /// The last `eval_days` days of the pairing period. No cross
    /// validation; only useful for measuring overfitting.
    InSample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpendProxySource {
    /// Panel spend totals over the evaluation window.
    Panel,
    /// Evaluation-window response totals scaled to sum to 1.
    Response,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignConfig {
    pub budget: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Smallest iROAS the test must detect; bounds the RMSE.
    pub theta0_target: Option<f64>,
    pub max_budget_to_baseline: Option<f64>,
    /// Candidate pair counts. Defaults to `10..=N/2` (or `1..=N/2` for
    /// small panels).
    pub n_grid: Option<Vec<usize>>,
    pub pairing_method: PairingMethod,
    pub block_length_days: usize,
    pub eval_days: usize,
    pub evaluation_window: EvaluationWindow,
    pub spend_proxy: SpendProxySource,
    pub trim_spec: TrimSpec,
    pub replicates: usize,
    pub seed: u64,
    pub balance: BalanceConfig,
    /// Simulated-iROAS balance threshold as a multiple of the chosen
    /// design's RMSE (of the RMSE bound while evaluating candidates). `None`
    /// leaves only `balance.max_abs_sim_iroas`.
    pub sim_iroas_rmse_multiple: Option<f64>,
    /// Also evaluate every candidate with the true iROAS at its `theta0`.
    pub evaluate_at_theta0: bool,
}

impl Default for DesignConfig {
    fn default() -> Self {
        DesignConfig {
            budget: 1e6,
            alpha: 0.10,
            beta: 0.90,
            theta0_target: None,
            max_budget_to_baseline: None,
            n_grid: None,
            pairing_method: PairingMethod::Optimal,
            block_length_days: geo_data::DEFAULT_BLOCK_LENGTH_DAYS,
            eval_days: 14,
            evaluation_window: EvaluationWindow::Holdout,
            spend_proxy: SpendProxySource::Panel,
            trim_spec: TrimSpec::default(),
            replicates: power::DEFAULT_REPLICATES,
            seed: 0,
            balance: BalanceConfig::default(),
            sim_iroas_rmse_multiple: Some(0.25),
            evaluate_at_theta0: false,
        }
    }
}

impl DesignConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.budget > 0.0 && self.budget.is_finite()) {
            return Err(DesignError::invalid("budget must be positive and finite"));
        }
        power::minimum_detectable_iroas(1.0, self.alpha, self.beta)?;
        if self.theta0_target.is_some_and(|t| !(t >= 0.0 && t.is_finite())) {
            return Err(DesignError::invalid("theta0_target must be non-negative"));
        }
        if self.max_budget_to_baseline.is_some_and(|m| m.is_nan() || m < 0.0) {
            return Err(DesignError::invalid("max_budget_to_baseline must be non-negative"));
        }
        if self.block_length_days == 0 || self.eval_days == 0 {
            return Err(DesignError::invalid("block_length_days and eval_days must be positive"));
        }
        if self.replicates == 0 {
            return Err(DesignError::invalid("replicates must be positive"));
        }
        if self.sim_iroas_rmse_multiple.is_some_and(|m| m.is_nan() || m < 0.0) {
            return Err(DesignError::invalid("sim_iroas_rmse_multiple must be non-negative"));
        }
        self.balance.validate()
    }

    /// Largest RMSE compatible with `theta0_target`.
    pub fn max_rmse(&self) -> Option<f64> {
        self.theta0_target
            .map(|t| t / power::quantile_sum(self.alpha, self.beta))
    }

    /// Effective grid for `n_geos` geos, with warnings.
    pub fn grid(&self, n_geos: usize) -> Result<(Vec<usize>, Vec<String>)> {
        let max_n = n_geos / 2;
        if max_n == 0 {
            return Err(DesignError::InsufficientData(format!("{n_geos} geos cannot form a pair")));
        }
        let mut warnings = Vec::new();
        let mut grid = match &self.n_grid {
            Some(g) => g.clone(),
            None if max_n >= MIN_RECOMMENDED_PAIRS => (MIN_RECOMMENDED_PAIRS..=max_n).collect(),
            None => (1..=max_n).collect(),
        };
        grid.sort_unstable();
        grid.dedup();
        if grid.is_empty() {
            return Err(DesignError::invalid("n_grid is empty"));
        }
        if let Some(bad) = grid.iter().find(|&&n| n == 0 || n > max_n) {
            return Err(DesignError::invalid(format!(
                "n_grid value {bad} outside 1..={max_n} for {n_geos} geos"
            )));
        }
        if grid[0] < MIN_RECOMMENDED_PAIRS {
            warnings.push(format!(
                "candidates with fewer than {MIN_RECOMMENDED_PAIRS} pairs may give unreliable inference"
            ));
        }
        Ok((grid, warnings))
    }
}

/// Periods actually used by a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignPeriods {
    pub pairing: DateRange,
    pub evaluation: DateRange,
    /// Pretest window the balance checks look at: the most recent days of
    /// the pairing period.
    pub balance: DateRange,
    pub block_length_days: usize,
    /// Evaluation lies inside the pairing period.
    pub in_sample: bool,
}

/// Resolve the configured evaluation window against `panel`.
pub fn design_periods(panel: &GeoPanel, cfg: &DesignConfig) -> Result<DesignPeriods> {
    let block = cfg.block_length_days;
    let (split, in_sample) = match cfg.evaluation_window {
        EvaluationWindow::Holdout => (geo_data::split_periods(panel, cfg.eval_days, block)?, false),
        EvaluationWindow::Range { start, days } => (
            geo_data::split_with_evaluation(panel, DateRange::new(start, days), block)?,
            false,
        ),
        EvaluationWindow::InSample => {
            let split = geo_data::split_periods(panel, cfg.eval_days, block)?;
            let p = split.pairing;
            if cfg.eval_days > p.days {
                return Err(DesignError::InsufficientData(format!(
                    "pairing period of {} days is shorter than eval_days {}",
                    p.days, cfg.eval_days
                )));
            }
            let tail = tail_of(&p, cfg.eval_days);
            (PeriodSplit { evaluation: tail, ..split }, true)
        }
    };
    Ok(DesignPeriods {
        pairing: split.pairing,
        evaluation: split.evaluation,
        balance: tail_of(&split.pairing, cfg.eval_days.min(split.pairing.days)),
        block_length_days: block,
        in_sample,
    })
}

fn tail_of(range: &DateRange, days: usize) -> DateRange {
    DateRange::new(
        range.start + chrono::Duration::days((range.days - days) as i64),
        days,
    )
}

/// Pairing-period distance matrix over every panel geo.
pub fn pairing_distances(panel: &GeoPanel, periods: &DesignPeriods) -> Result<DistanceMatrix> {
    pairing::distance_matrix(&geo_data::block_totals(
        panel,
        &periods.pairing,
        periods.block_length_days,
    )?)
}

/// Candidate pair sets for every `n` in `grid`.
pub fn candidate_pairs(
    panel: &GeoPanel,
    periods: &DesignPeriods,
    method: PairingMethod,
    grid: &[usize],
) -> Result<Vec<PairSet>> {
    let dm = pairing_distances(panel, periods)?;
    let sizes = match method {
        PairingMethod::Rank => Some(geo_data::period_totals(panel, panel.geos(), &periods.pairing)?),
        PairingMethod::Optimal => None,
    };
    grid.iter()
        .map(|&n| {
            match &sizes {
                None => pairing::optimal_pairs(&dm, n),
                Some(s) => pairing::rank_pairs_by_size(s, &dm, n),
            }
            .map_err(|e| e.context(format!("pairing n={n}")))
        })
        .collect()
}

/// Evaluation-window baseline, spend proxy and balance baseline per geo.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationData {
    pub baseline: BTreeMap<GeoId, f64>,
    pub proxy: BTreeMap<GeoId, f64>,
    pub balance_baseline: BTreeMap<GeoId, f64>,
}

pub fn evaluation_data(
    panel: &GeoPanel,
    periods: &DesignPeriods,
    source: SpendProxySource,
) -> Result<EvaluationData> {
    let geos = panel.geos();
    let baseline = geo_data::period_totals(panel, geos, &periods.evaluation)?;
    let proxy = match source {
        SpendProxySource::Panel => geo_data::spend_totals(panel, geos, &periods.evaluation)?,
        SpendProxySource::Response => {
            let total: f64 = baseline.values().sum();
            if total <= 0.0 {
                return Err(DesignError::InsufficientData(
                    "evaluation response is zero everywhere".into(),
                ));
            }
            baseline.iter().map(|(g, v)| (g.clone(), v / total)).collect()
        }
    };
    Ok(EvaluationData {
        baseline,
        proxy,
        balance_baseline: geo_data::period_totals(panel, geos, &periods.balance)?,
    })
}

fn restrict(map: &BTreeMap<GeoId, f64>, pairs: &PairSet) -> BTreeMap<GeoId, f64> {
    pairs
        .paired_geos()
        .filter_map(|g| map.get(g).map(|v| (g.clone(), *v)))
        .collect()
}

fn tighter(current: Option<f64>, derived: f64) -> f64 {
    current.map_or(derived, |c| c.min(derived))
}

/// Simulated-iROAS threshold used while evaluating candidates.
fn evaluation_balance(cfg: &DesignConfig) -> BalanceConfig {
    let mut b = cfg.balance;
    if let (Some(m), Some(max_rmse)) = (cfg.sim_iroas_rmse_multiple, cfg.max_rmse()) {
        b.max_abs_sim_iroas = Some(tighter(b.max_abs_sim_iroas, m * max_rmse));
    }
    b
}

/// Power-analysis inputs for one candidate.
pub fn eval_inputs(
    pairs: &PairSet,
    data: &EvaluationData,
    cfg: &DesignConfig,
) -> EvalInputs {
    EvalInputs {
        pairs: pairs.clone(),
        baseline_response: restrict(&data.baseline, pairs),
        spend_proxy: restrict(&data.proxy, pairs),
        budget: cfg.budget,
        theta: 0.0,
        replicates: cfg.replicates,
        trim_spec: cfg.trim_spec,
        seed: rng::derive_seed(cfg.seed, "eval", pairs.len() as u64),
        balance: evaluation_balance(cfg),
        balance_baseline: Some(restrict(&data.balance_baseline, pairs)),
    }
}

/// Evaluate every candidate at no effect (and at its `theta0` when
/// configured).
pub fn evaluate_candidates(
    candidates: &[PairSet],
    data: &EvaluationData,
    cfg: &DesignConfig,
) -> Result<Vec<DesignEvaluation>> {
    candidates
        .iter()
        .map(|pairs| {
            let n = pairs.len();
            let inputs = eval_inputs(pairs, data, cfg);
            let mut eval = power::evaluate_rmse(&inputs, cfg.alpha, cfg.beta)
                .map_err(|e| e.context(format!("evaluating n={n}")))?;
            if cfg.evaluate_at_theta0 {
                let at = EvalInputs {
                    theta: eval.theta0,
                    ..inputs
                };
                eval.rmse_at_theta0 = Some(power::evaluate_rmse(&at, cfg.alpha, cfg.beta)?.rmse);
            }
            Ok(eval)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateTable {
    pub rows: Vec<DesignEvaluation>,
    pub chosen_n: Option<usize>,
}

/// Feasible rows meet the RMSE bound implied by `theta0_target` and the
/// budget-to-baseline cap and are not flagged invalid. The smallest RMSE
/// wins; ties go to more pairs, then to the smaller budget-to-baseline.
pub fn select_candidate(rows: &[DesignEvaluation], cfg: &DesignConfig) -> Option<usize> {
    let max_rmse = cfg.max_rmse();
    rows.iter()
        .filter(|r| !r.invalid)
        .filter(|r| max_rmse.map_or(true, |m| r.rmse <= m))
        .filter(|r| cfg.max_budget_to_baseline.map_or(true, |m| r.budget_to_baseline <= m))
        .min_by(|a, b| {
            a.rmse
                .total_cmp(&b.rmse)
                .then(b.n.cmp(&a.n))
                .then(a.budget_to_baseline.total_cmp(&b.budget_to_baseline))
        })
        .map(|r| r.n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config: DesignConfig,
    pub seed: u64,
    pub periods: DesignPeriods,
    pub n_geos: usize,
    pub spend_proxy: SpendProxySource,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinalDesign {
    pub pairs: PairSet,
    pub assignment: Assignment,
    pub evaluation: DesignEvaluation,
    /// Draws needed to pass the balance checks.
    pub attempts: usize,
    /// No draw passed; the last one was kept.
    pub capped: bool,
    pub sim_iroas_threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignRun {
    pub table: CandidateTable,
    pub design: Option<FinalDesign>,
    pub provenance: Provenance,
}

pub fn run_design(panel: &GeoPanel, cfg: &DesignConfig) -> Result<DesignRun> {
    cfg.validate()?;
    let (grid, mut warnings) = cfg.grid(panel.n_geos())?;
    let periods = design_periods(panel, cfg)?;
    if periods.in_sample {
        warnings.push("evaluation window lies inside the pairing period; RMSE will be optimistic".into());
    }
    let data = evaluation_data(panel, &periods, cfg.spend_proxy)?;
    let candidates = candidate_pairs(panel, &periods, cfg.pairing_method, &grid)?;
    let rows = evaluate_candidates(&candidates, &data, cfg)?;
    let invalid: Vec<String> = rows.iter().filter(|r| r.invalid).map(|r| r.n.to_string()).collect();
    if !invalid.is_empty() {
        warnings.push(format!(
            "more than 1% of replicates failed for n = {}",
            invalid.join(", ")
        ));
    }
    let chosen_n = select_candidate(&rows, cfg);
    let design = match chosen_n {
        Some(n) => {
            let idx = grid.iter().position(|&g| g == n).expect("chosen n is in the grid");
            let d = finalize(candidates[idx].clone(), rows[idx].clone(), &data, cfg)?;
            if d.capped {
                warnings.push(format!(
                    "no assignment passed the balance checks in {} draws; the last draw was kept",
                    d.attempts
                ));
            }
            Some(d)
        }
        None => None,
    };
    Ok(DesignRun {
        table: CandidateTable { rows, chosen_n },
        design,
        provenance: Provenance {
            config: cfg.clone(),
            seed: cfg.seed,
            periods,
            n_geos: panel.n_geos(),
            spend_proxy: cfg.spend_proxy,
            warnings,
        },
    })
}

fn finalize(
    pairs: PairSet,
    evaluation: DesignEvaluation,
    data: &EvaluationData,
    cfg: &DesignConfig,
) -> Result<FinalDesign> {
    let mut balance = cfg.balance;
    if let Some(m) = cfg.sim_iroas_rmse_multiple {
        balance.max_abs_sim_iroas = Some(tighter(balance.max_abs_sim_iroas, m * evaluation.rmse));
    }
    let ctx = BalanceContext::from_maps(
        &pairs,
        &data.balance_baseline,
        &data.proxy,
        cfg.budget,
        cfg.trim_spec,
    )?;
    let seed = rng::derive_seed(cfg.seed, "assign", pairs.len() as u64);
    let r = randomization::rerandomize(&ctx, &balance, &mut rng::stream(seed, 0));
    Ok(FinalDesign {
        pairs,
        assignment: r.assignment,
        evaluation,
        attempts: r.attempts,
        capped: r.capped,
        sim_iroas_threshold: balance.max_abs_sim_iroas,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodComparison {
    pub n: usize,
    pub rmse_optimal: f64,
    pub rmse_rank: f64,
    /// `rmse_rank / rmse_optimal`.
    pub ratio: f64,
}

/// Evaluate rank and optimal pairing with identical seeds.
pub fn compare_pairing_methods(panel: &GeoPanel, cfg: &DesignConfig) -> Result<Vec<MethodComparison>> {
    cfg.validate()?;
    let (grid, _) = cfg.grid(panel.n_geos())?;
    let periods = design_periods(panel, cfg)?;
    let data = evaluation_data(panel, &periods, cfg.spend_proxy)?;
    let optimal = evaluate_candidates(
        &candidate_pairs(panel, &periods, PairingMethod::Optimal, &grid)?,
        &data,
        cfg,
    )?;
    let rank = evaluate_candidates(
        &candidate_pairs(panel, &periods, PairingMethod::Rank, &grid)?,
        &data,
        cfg,
    )?;
    Ok(optimal
        .iter()
        .zip(&rank)
        .map(|(o, r)| MethodComparison {
            n: o.n,
            rmse_optimal: o.rmse,
            rmse_rank: r.rmse,
            ratio: r.rmse / o.rmse,
        })
        .collect())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `n,rmse,theta0,budget_to_baseline,failures,seed,capped_redraws,invalid,rmse_at_theta0`.
pub fn write_candidate_table<W: Write>(rows: &[DesignEvaluation], sink: W) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(sink);
    writeln!(
        out,
        "n,rmse,theta0,budget_to_baseline,failures,seed,capped_redraws,invalid,rmse_at_theta0"
    )?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.n,
            r.rmse,
            r.theta0,
            r.budget_to_baseline,
            r.failures,
            r.seed,
            r.capped_redraws,
            r.invalid,
            opt(r.rmse_at_theta0)
        )?;
    }
    out.flush()
}

/// `pair_id,geo,arm` with one row per geo.
pub fn write_assignment<W: Write>(pairs: &PairSet, a: &Assignment, sink: W) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(sink);
    writeln!(out, "pair_id,geo,arm")?;
    for (i, p) in pairs.pairs.iter().enumerate() {
        let treated = a.treated(i);
        for (j, geo) in [&p.geo_a, &p.geo_b].into_iter().enumerate() {
            let arm = if j == treated { "treatment" } else { "control" };
            writeln!(out, "{},{},{}", p.pair_id, geo, arm)?;
        }
    }
    out.flush()
}

/// `n,rmse_optimal,rmse_rank,ratio`.
pub fn write_comparison<W: Write>(rows: &[MethodComparison], sink: W) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(sink);
    writeln!(out, "n,rmse_optimal,rmse_rank,ratio")?;
    for r in rows {
        writeln!(out, "{},{},{},{}", r.n, r.rmse_optimal, r.rmse_rank, r.ratio)?;
    }
    out.flush()
}

/// Tidy `n,rmse,series` rows for plotting.
pub fn write_rmse_series<W: Write>(series: &[(&str, &[DesignEvaluation])], sink: W) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(sink);
    writeln!(out, "n,rmse,series")?;
    for (name, rows) in series {
        for r in *rows {
            writeln!(out, "{},{},{}", r.n, r.rmse, name)?;
        }
    }
    out.flush()
}

/// Structured design report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignReport {
    pub provenance: Provenance,
    pub candidates: CandidateTable,
    pub feasible: bool,
    pub chosen: Option<ChosenDesign>,
    pub pairs_csv: Option<String>,
    pub assignment_csv: Option<String>,
    /// Evaluation-to-test drift is not adjusted for.
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChosenDesign {
    pub n: usize,
    pub evaluation: DesignEvaluation,
    pub pairs: PairSet,
    pub assignment: Vec<i8>,
    pub attempts: usize,
    pub capped: bool,
    pub sim_iroas_threshold: Option<f64>,
}

impl DesignReport {
    pub fn new(run: &DesignRun, pairs_csv: Option<String>, assignment_csv: Option<String>) -> Self {
        DesignReport {
            provenance: run.provenance.clone(),
            candidates: run.table.clone(),
            feasible: run.design.is_some(),
            chosen: run.design.as_ref().map(|d| ChosenDesign {
                n: d.pairs.len(),
                evaluation: d.evaluation.clone(),
                pairs: d.pairs.clone(),
                assignment: d.assignment.arms().to_vec(),
                attempts: d.attempts,
                capped: d.capped,
                sim_iroas_threshold: d.sim_iroas_threshold,
            }),
            pairs_csv,
            assignment_csv,
            notes: vec![
                "RMSE is measured on the evaluation window and is not adjusted for drift between that window and the test period".into(),
                "assignment arm +1 treats geo_b of the pair, -1 treats geo_a".into(),
            ],
        }
    }
}
