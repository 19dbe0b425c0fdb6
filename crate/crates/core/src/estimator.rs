//! Trimmed Match point estimation of the incremental return on ad spend.
//!
//! For pair-level spend differences `x` and response differences `y`, the
//! residuals `y_i - theta * x_i` are symmetric around zero at the true
//! `theta`. The estimator solves `trimmed_mean_k(residuals(theta)) = 0`,
//! dropping the `k` smallest and `k` largest residuals. Each residual is a
//! line in `theta`, so the trimmed set only changes where two lines cross;
//! between crossings the equation is linear and its root is
//! `sum(y_untrimmed) / sum(x_untrimmed)`.

use serde::{Deserialize, Serialize};

use crate::error::{DataError, EstimationError};

/// Maximum trim rate used when evaluating designs.
pub const DESIGN_MAX_TRIM_RATE: f64 = 0.10;
/// Maximum trim rate used when analysing a finished experiment.
pub const POST_ANALYSIS_MAX_TRIM_RATE: f64 = 0.25;

const ROOT_RELATIVE_TOLERANCE: f64 = 1e-12;

/// Per-pair spend and response differences (treatment minus control).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairExperimentData {
    x: Vec<f64>,
    y: Vec<f64>,
    pair_ids: Vec<usize>,
}

impl PairExperimentData {
    /// Pairs are numbered `1..=n`.
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self, EstimationError> {
        let ids = (1..=x.len()).collect();
        Self::with_pair_ids(x, y, ids)
    }

    pub fn with_pair_ids(
        x: Vec<f64>,
        y: Vec<f64>,
        pair_ids: Vec<usize>,
    ) -> Result<Self, EstimationError> {
        if x.is_empty() {
            return Err(EstimationError::InvalidData("no pairs".into()));
        }
        if x.len() != y.len() || x.len() != pair_ids.len() {
            return Err(EstimationError::InvalidData(format!(
                "length mismatch: {} spend, {} response, {} ids",
                x.len(),
                y.len(),
                pair_ids.len()
            )));
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(EstimationError::InvalidData("non-finite value".into()));
        }
        Ok(PairExperimentData { x, y, pair_ids })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn pair_ids(&self) -> &[usize] {
        &self.pair_ids
    }
}

/// How much trimming the estimator may apply.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrimSpec {
    /// Upper bound on the trim rate, in `[0, 0.5)`. Candidate trim counts
    /// are `0..=floor(n * max_trim_rate)`.
    pub max_trim_rate: f64,
    /// Trim exactly this many pairs from each side instead of choosing.
    #[serde(default)]
    pub fixed_trim_count: Option<usize>,
}

impl TrimSpec {
    pub fn data_driven(max_trim_rate: f64) -> Self {
        TrimSpec {
            max_trim_rate,
            fixed_trim_count: None,
        }
    }

    pub fn fixed(trim_count: usize) -> Self {
        TrimSpec {
            max_trim_rate: 0.0,
            fixed_trim_count: Some(trim_count),
        }
    }

    /// No trimming: the empirical ratio estimator.
    pub fn untrimmed() -> Self {
        Self::fixed(0)
    }

    fn candidate_counts(&self, n: usize) -> Result<Vec<usize>, EstimationError> {
        if let Some(k) = self.fixed_trim_count {
            if 2 * k >= n {
                return Err(EstimationError::TrimTooLarge { trim_count: k, n });
            }
            return Ok(vec![k]);
        }
        if !(0.0..0.5).contains(&self.max_trim_rate) {
            return Err(EstimationError::InvalidData(format!(
                "max trim rate {} outside [0, 0.5)",
                self.max_trim_rate
            )));
        }
        let k_max = (n as f64 * self.max_trim_rate).floor() as usize;
        Ok((0..=k_max).take_while(|k| 2 * k < n).collect())
    }
}

impl Default for TrimSpec {
    fn default() -> Self {
        TrimSpec::data_driven(DESIGN_MAX_TRIM_RATE)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrimmedMatchEstimate {
    pub theta_hat: f64,
    /// Pairs trimmed from each side.
    pub trim_count: usize,
    /// Ids of the `2 * trim_count` trimmed pairs, ascending.
    pub trimmed_pair_ids: Vec<usize>,
    pub untrimmed_x_sum: f64,
    pub se_proxy: f64,
}

/// `y_i - theta * x_i`.
pub fn residuals(data: &PairExperimentData, theta: f64) -> Vec<f64> {
    data.x
        .iter()
        .zip(&data.y)
        .map(|(x, y)| y - theta * x)
        .collect()
}

// Indices sorted by residual, ties by index.
fn residual_order(resid: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..resid.len()).collect();
    order.sort_by(|&a, &b| resid[a].total_cmp(&resid[b]).then(a.cmp(&b)));
    order
}

/// Mean of the residuals left after trimming `trim_count` from each side.
pub fn trimmed_mean_residual(data: &PairExperimentData, theta: f64, trim_count: usize) -> f64 {
    let resid = residuals(data, theta);
    let order = residual_order(&resid);
    let kept = &order[trim_count..order.len() - trim_count];
    kept.iter().map(|&i| resid[i]).sum::<f64>() / kept.len() as f64
}

/// All roots of the trimmed mean equation for a fixed trim count.
pub fn solve_trimmed(
    data: &PairExperimentData,
    trim_count: usize,
) -> Result<Vec<f64>, EstimationError> {
    let n = data.len();
    if 2 * trim_count >= n {
        return Err(EstimationError::TrimTooLarge { trim_count, n });
    }
    let roots = sweep_roots(data, &[trim_count]).pop().expect("one trim count");
    if roots.is_empty() {
        return Err(EstimationError::NoRoot { trim_count });
    }
    Ok(roots)
}

/// Roots for each trim count in `counts`.
fn sweep_roots(data: &PairExperimentData, counts: &[usize]) -> Vec<Vec<f64>> {
    let (x, y) = (&data.x, &data.y);
    let n = x.len();
    let mut roots = vec![Vec::new(); counts.len()];

    // Without trimming the equation is linear everywhere.
    let sweep: Vec<(usize, usize)> = counts
        .iter()
        .enumerate()
        .filter_map(|(slot, &k)| {
            if k == 0 {
                let sx: f64 = x.iter().sum();
                if sx != 0.0 {
                    roots[slot].push(y.iter().sum::<f64>() / sx);
                }
                None
            } else {
                Some((slot, k))
            }
        })
        .collect();
    if sweep.is_empty() {
        return roots;
    }

    let mut breaks = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            if x[i] != x[j] {
                let b = (y[i] - y[j]) / (x[i] - x[j]);
                if b.is_finite() {
                    breaks.push(b);
                }
            }
        }
    }
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();

    let mut order: Vec<usize> = (0..n).collect();
    let mut resid = vec![0.0; n];
    let mut prefix_x = vec![0.0; n + 1];
    let mut prefix_y = vec![0.0; n + 1];
    for interval in 0..=breaks.len() {
        let lo = if interval == 0 { f64::NEG_INFINITY } else { breaks[interval - 1] };
        let hi = breaks.get(interval).copied().unwrap_or(f64::INFINITY);
        let probe = match (lo.is_finite(), hi.is_finite()) {
            (false, false) => 0.0,
            (false, true) => hi - (1.0 + hi.abs()),
            (true, false) => lo + (1.0 + lo.abs()),
            (true, true) => lo + (hi - lo) / 2.0,
        };
        for i in 0..n {
            resid[i] = y[i] - probe * x[i];
        }
        // The order changes by a few adjacent swaps between intervals.
        for a in 1..n {
            let mut b = a;
            while b > 0 && less(&resid, order[b], order[b - 1]) {
                order.swap(b, b - 1);
                b -= 1;
            }
        }
        for (p, &i) in order.iter().enumerate() {
            prefix_x[p + 1] = prefix_x[p] + x[i];
            prefix_y[p + 1] = prefix_y[p] + y[i];
        }
        for &(slot, k) in &sweep {
            let sx = prefix_x[n - k] - prefix_x[k];
            if sx == 0.0 {
                continue;
            }
            let root = (prefix_y[n - k] - prefix_y[k]) / sx;
            if within_lower(root, lo) && within_upper(root, hi) {
                roots[slot].push(root);
            }
        }
    }
    for r in roots.iter_mut() {
        dedup_roots(r);
    }
    roots
}

fn less(resid: &[f64], a: usize, b: usize) -> bool {
    match resid[a].total_cmp(&resid[b]) {
        std::cmp::Ordering::Less => true,
        std::cmp::Ordering::Equal => a < b,
        std::cmp::Ordering::Greater => false,
    }
}

fn tolerance(bound: f64, root: f64) -> f64 {
    ROOT_RELATIVE_TOLERANCE * bound.abs().max(root.abs())
}

fn within_lower(root: f64, lo: f64) -> bool {
    lo == f64::NEG_INFINITY || root >= lo - tolerance(lo, root)
}

fn within_upper(root: f64, hi: f64) -> bool {
    hi == f64::INFINITY || root <= hi + tolerance(hi, root)
}

fn dedup_roots(roots: &mut Vec<f64>) {
    roots.sort_by(f64::total_cmp);
    roots.dedup_by(|b, a| (*b - *a).abs() <= ROOT_RELATIVE_TOLERANCE * a.abs().max(b.abs()));
}

/// `sqrt(sum e_i^2 * m / (m - 1)) / |sum x_i|` over the untrimmed pairs;
/// infinite when fewer than two pairs remain or their spend sums to zero.
pub fn se_proxy(data: &PairExperimentData, theta: f64, untrimmed: &[usize]) -> f64 {
    let m = untrimmed.len();
    let sx: f64 = untrimmed.iter().map(|&i| data.x[i]).sum();
    if m <= 1 || sx == 0.0 {
        return f64::INFINITY;
    }
    let ss: f64 = untrimmed
        .iter()
        .map(|&i| {
            let e = data.y[i] - theta * data.x[i];
            e * e
        })
        .sum();
    (ss * m as f64 / (m as f64 - 1.0)).sqrt() / sx.abs()
}

/// Trimmed Match estimate. With a data-driven spec, every candidate trim
/// count is solved; within a count the root nearest the untrimmed ratio
/// wins, and across counts the smallest `se_proxy` wins (ties go to less
/// trimming).
pub fn estimate(
    data: &PairExperimentData,
    spec: &TrimSpec,
) -> Result<TrimmedMatchEstimate, EstimationError> {
    if data.x.iter().all(|&v| v == 0.0) {
        return Err(EstimationError::NoSpendSignal);
    }
    let counts = spec.candidate_counts(data.len())?;
    let sx: f64 = data.x.iter().sum();
    let reference = if sx != 0.0 { data.y.iter().sum::<f64>() / sx } else { 0.0 };

    let mut best: Option<TrimmedMatchEstimate> = None;
    for (k, roots) in counts.iter().zip(sweep_roots(data, &counts)) {
        let Some(theta) = roots.iter().copied().min_by(|a, b| {
            (a - reference)
                .abs()
                .total_cmp(&(b - reference).abs())
                .then(a.total_cmp(b))
        }) else {
            continue;
        };
        let order = residual_order(&residuals(data, theta));
        let n = order.len();
        let untrimmed = &order[*k..n - k];
        let se = se_proxy(data, theta, untrimmed);
        if best.as_ref().is_some_and(|b| b.se_proxy <= se) {
            continue;
        }
        let mut trimmed: Vec<usize> = order[..*k]
            .iter()
            .chain(&order[n - k..])
            .map(|&i| data.pair_ids[i])
            .collect();
        trimmed.sort_unstable();
        best = Some(TrimmedMatchEstimate {
            theta_hat: theta,
            trim_count: *k,
            trimmed_pair_ids: trimmed,
            untrimmed_x_sum: untrimmed.iter().map(|&i| data.x[i]).sum(),
            se_proxy: se,
        });
    }
    best.ok_or(EstimationError::NoRoot {
        trim_count: counts.last().copied().unwrap_or(0),
    })
}

/// Read `pair_id,x,y` rows. Errors carry the file line number.
pub fn read_pair_data<R: std::io::Read>(source: R) -> Result<PairExperimentData, DataError> {
    #[derive(Deserialize)]
    struct Row {
        pair_id: usize,
        x: f64,
        y: f64,
    }
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let (mut ids, mut x, mut y) = (Vec::new(), Vec::new(), Vec::new());
    let mut seen = std::collections::BTreeSet::new();
    for (i, row) in reader.deserialize::<Row>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| DataError::Malformed(format!("row {line}: {e}")))?;
        if !row.x.is_finite() || !row.y.is_finite() {
            return Err(DataError::Malformed(format!("row {line}: non-finite value")));
        }
        if !seen.insert(row.pair_id) {
            return Err(DataError::Malformed(format!(
                "row {line}: duplicate pair_id {}",
                row.pair_id
            )));
        }
        ids.push(row.pair_id);
        x.push(row.x);
        y.push(row.y);
    }
    if ids.is_empty() {
        return Err(DataError::Empty);
    }
    PairExperimentData::with_pair_ids(x, y, ids).map_err(|e| DataError::Malformed(e.to_string()))
}
