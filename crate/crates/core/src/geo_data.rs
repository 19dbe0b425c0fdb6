//! Pretest panel data: per-geo daily response and spend series.
//!
//! The CSV contract is `date,geo,response[,spend]` with ISO-8601 dates.
//! Geos are kept in lexicographic order; every geo covers the same
//! contiguous run of days.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{DataError, DesignError, Result};

/// Default aggregation block: one week.
pub const DEFAULT_BLOCK_LENGTH_DAYS: usize = 7;

/// Opaque geo identifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GeoId(String);

impl GeoId {
    pub fn new(id: impl Into<String>) -> Self {
        GeoId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for GeoId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for GeoId {
    fn from(s: &str) -> Self {
        GeoId(s.to_owned())
    }
}

/// A run of consecutive calendar days, `start` inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub days: usize,
}

impl DateRange {
    pub fn new(start: NaiveDate, days: usize) -> Self {
        DateRange { start, days }
    }

    /// Range covering `first..=last`; `None` if `last < first`.
    pub fn inclusive(first: NaiveDate, last: NaiveDate) -> Option<Self> {
        let span = (last - first).num_days();
        (span >= 0).then(|| DateRange::new(first, span as usize + 1))
    }

    /// Last day of the range. Panics on an empty range.
    pub fn last(&self) -> NaiveDate {
        assert!(self.days > 0, "empty date range has no last day");
        self.start + Duration::days(self.days as i64 - 1)
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        let offset = (date - self.start).num_days();
        offset >= 0 && (offset as usize) < self.days
    }

    pub fn overlaps(&self, other: &DateRange) -> bool {
        if self.days == 0 || other.days == 0 {
            return false;
        }
        self.start <= other.last() && other.start <= self.last()
    }

    pub fn dates(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        (0..self.days).map(move |i| self.start + Duration::days(i as i64))
    }
}

impl fmt::Display for DateRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.days == 0 {
            write!(f, "{} (empty)", self.start)
        } else {
            write!(f, "{}..={}", self.start, self.last())
        }
    }
}

/// Validated pretest panel.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoPanel {
    geos: Vec<GeoId>,
    start: NaiveDate,
    n_days: usize,
    response: Vec<Vec<f64>>,
    spend: Option<Vec<Vec<f64>>>,
}

impl GeoPanel {
    /// Build a panel from per-geo series, each `n_days` long. Geos are
    /// reordered lexicographically.
    pub fn new(
        geos: Vec<GeoId>,
        start: NaiveDate,
        response: Vec<Vec<f64>>,
        spend: Option<Vec<Vec<f64>>>,
    ) -> Result<Self, DataError> {
        if geos.is_empty() {
            return Err(DataError::Empty);
        }
        if response.len() != geos.len() {
            return Err(DataError::InvalidPanel(format!(
                "{} geos but {} response series",
                geos.len(),
                response.len()
            )));
        }
        let n_days = response[0].len();
        if n_days == 0 {
            return Err(DataError::Empty);
        }
        let unique: BTreeSet<&GeoId> = geos.iter().collect();
        if unique.len() != geos.len() {
            return Err(DataError::InvalidPanel("geo ids are not unique".into()));
        }
        let check = |name: &str, series: &[Vec<f64>]| -> Result<(), DataError> {
            for (geo, values) in geos.iter().zip(series) {
                if values.len() != n_days {
                    return Err(DataError::InvalidPanel(format!(
                        "{name} series for geo `{geo}` has {} days, expected {n_days}",
                        values.len()
                    )));
                }
                if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
                    return Err(DataError::InvalidPanel(format!(
                        "{name} for geo `{geo}` has invalid value {v}"
                    )));
                }
            }
            Ok(())
        };
        check("response", &response)?;
        if let Some(spend) = &spend {
            if spend.len() != geos.len() {
                return Err(DataError::InvalidPanel("spend series count mismatch".into()));
            }
            check("spend", spend)?;
        }

        let mut order: Vec<usize> = (0..geos.len()).collect();
        order.sort_by(|&a, &b| geos[a].cmp(&geos[b]));
        let permute = |series: Vec<Vec<f64>>| -> Vec<Vec<f64>> {
            let mut slots: Vec<Option<Vec<f64>>> = series.into_iter().map(Some).collect();
            order.iter().map(|&i| slots[i].take().expect("permutation")).collect()
        };
        Ok(GeoPanel {
            geos: order.iter().map(|&i| geos[i].clone()).collect(),
            start,
            n_days,
            response: permute(response),
            spend: spend.map(permute),
        })
    }

    pub fn geos(&self) -> &[GeoId] {
        &self.geos
    }

    pub fn n_geos(&self) -> usize {
        self.geos.len()
    }

    pub fn n_days(&self) -> usize {
        self.n_days
    }

    pub fn date_range(&self) -> DateRange {
        DateRange::new(self.start, self.n_days)
    }

    pub fn has_spend(&self) -> bool {
        self.spend.is_some()
    }

    pub fn geo_index(&self, geo: &GeoId) -> Option<usize> {
        self.geos.binary_search(geo).ok()
    }

    /// Daily response of the geo at `index`.
    pub fn response(&self, index: usize) -> &[f64] {
        &self.response[index]
    }

    pub fn spend(&self, index: usize) -> Option<&[f64]> {
        self.spend.as_ref().map(|s| s[index].as_slice())
    }

    /// Day offsets of `period` within the panel.
    pub fn day_span(&self, period: &DateRange) -> Result<std::ops::Range<usize>> {
        let offset = (period.start - self.start).num_days();
        if offset < 0 || offset as usize + period.days > self.n_days {
            return Err(DesignError::invalid(format!(
                "period {period} lies outside panel dates {}",
                self.date_range()
            )));
        }
        let offset = offset as usize;
        Ok(offset..offset + period.days)
    }

    /// Panel restricted to `period`.
    pub fn slice(&self, period: &DateRange) -> Result<GeoPanel> {
        let span = self.day_span(period)?;
        let cut = |series: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
            series.iter().map(|s| s[span.clone()].to_vec()).collect()
        };
        Ok(GeoPanel::new(
            self.geos.clone(),
            period.start,
            cut(&self.response),
            self.spend.as_ref().map(cut),
        )?)
    }

    /// Geos whose response is zero on every day of `period`.
    pub fn zero_response_geos(&self, period: &DateRange) -> Result<Vec<GeoId>> {
        let span = self.day_span(period)?;
        Ok(self
            .geos
            .iter()
            .zip(&self.response)
            .filter(|(_, r)| r[span.clone()].iter().all(|v| *v == 0.0))
            .map(|(g, _)| g.clone())
            .collect())
    }
}

/// Read a pretest CSV (`date,geo,response[,spend]`).
pub fn load_panel<R: Read>(source: R) -> Result<GeoPanel, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader
        .headers()
        .map_err(|e| DataError::Malformed(e.to_string()))?
        .clone();
    let column = |name: &'static str| headers.iter().position(|h| h == name);
    let date_col = column("date").ok_or(DataError::MissingColumn("date"))?;
    let geo_col = column("geo").ok_or(DataError::MissingColumn("geo"))?;
    let response_col = column("response").ok_or(DataError::MissingColumn("response"))?;
    let spend_col = column("spend");

    // (geo, date) -> (response, spend, row)
    let mut cells: BTreeMap<(GeoId, NaiveDate), (f64, Option<f64>)> = BTreeMap::new();
    let mut rows = 0usize;
    for (i, record) in reader.records().enumerate() {
        // Line 1 is the header.
        let row = i + 2;
        let record = record.map_err(|e| DataError::Malformed(format!("row {row}: {e}")))?;
        let field = |col: usize| record.get(col).unwrap_or("");
        let raw_date = field(date_col);
        let date = NaiveDate::parse_from_str(raw_date, "%Y-%m-%d").map_err(|_| {
            DataError::Unparseable {
                row,
                column: "date",
                value: raw_date.to_owned(),
            }
        })?;
        let geo = field(geo_col);
        if geo.is_empty() {
            return Err(DataError::Unparseable {
                row,
                column: "geo",
                value: String::new(),
            });
        }
        let response = parse_value(field(response_col), row, "response")?;
        let spend = match spend_col {
            Some(col) if field(col).is_empty() => return Err(DataError::PartialSpend { row }),
            Some(col) => Some(parse_value(field(col), row, "spend")?),
            None => None,
        };
        let key = (GeoId::new(geo), date);
        if cells.contains_key(&key) {
            return Err(DataError::DuplicateRow {
                row,
                geo: geo.to_owned(),
                date,
            });
        }
        cells.insert(key, (response, spend));
        rows += 1;
    }
    if rows == 0 {
        return Err(DataError::Empty);
    }

    let first = cells.keys().map(|(_, d)| *d).min().expect("non-empty");
    let last = cells.keys().map(|(_, d)| *d).max().expect("non-empty");
    let range = DateRange::inclusive(first, last).expect("ordered");
    let geos: Vec<GeoId> = cells
        .keys()
        .map(|(g, _)| g.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let mut response = Vec::with_capacity(geos.len());
    let mut spend = spend_col.map(|_| Vec::with_capacity(geos.len()));
    for geo in &geos {
        let mut r = Vec::with_capacity(range.days);
        let mut s = Vec::with_capacity(range.days);
        for date in range.dates() {
            let (resp, sp) = cells.get(&(geo.clone(), date)).ok_or_else(|| {
                DataError::NonContiguous {
                    geo: geo.to_string(),
                    missing: date,
                }
            })?;
            r.push(*resp);
            s.extend(*sp);
        }
        response.push(r);
        if let Some(spend) = spend.as_mut() {
            spend.push(s);
        }
    }
    GeoPanel::new(geos, first, response, spend)
}

fn parse_value(raw: &str, row: usize, column: &'static str) -> Result<f64, DataError> {
    let value: f64 = raw.parse().map_err(|_| DataError::Unparseable {
        row,
        column,
        value: raw.to_owned(),
    })?;
    if !value.is_finite() {
        return Err(DataError::Unparseable {
            row,
            column,
            value: raw.to_owned(),
        });
    }
    if value < 0.0 {
        return Err(DataError::Negative { row, column, value });
    }
    Ok(value)
}

/// Write the panel in the pretest CSV format, ordered by date then geo.
/// Values use the shortest representation that parses back to the same
/// `f64`.
pub fn write_panel<W: Write>(panel: &GeoPanel, sink: W) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(sink);
    if panel.has_spend() {
        writeln!(out, "date,geo,response,spend")?;
    } else {
        writeln!(out, "date,geo,response")?;
    }
    for (t, date) in panel.date_range().dates().enumerate() {
        for (g, geo) in panel.geos.iter().enumerate() {
            write!(out, "{date},{geo},{}", panel.response[g][t])?;
            if let Some(spend) = &panel.spend {
                write!(out, ",{}", spend[g][t])?;
            }
            writeln!(out)?;
        }
    }
    out.flush()
}

/// Disjoint pairing and evaluation windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeriodSplit {
    pub pairing: DateRange,
    pub evaluation: DateRange,
    pub block_length_days: usize,
}

impl PeriodSplit {
    pub fn new(
        panel: &GeoPanel,
        pairing: DateRange,
        evaluation: DateRange,
        block_length_days: usize,
    ) -> Result<Self> {
        if block_length_days == 0 {
            return Err(DesignError::invalid("block length must be positive"));
        }
        if pairing.days == 0 || evaluation.days == 0 {
            return Err(DesignError::InsufficientData("empty period".into()));
        }
        panel.day_span(&pairing)?;
        panel.day_span(&evaluation)?;
        if pairing.overlaps(&evaluation) {
            return Err(DesignError::invalid(format!(
                "pairing period {pairing} overlaps evaluation period {evaluation}"
            )));
        }
        if pairing.days % block_length_days != 0 {
            return Err(DesignError::invalid(format!(
                "pairing period of {} days is not a multiple of {block_length_days}",
                pairing.days
            )));
        }
        Ok(PeriodSplit {
            pairing,
            evaluation,
            block_length_days,
        })
    }

    pub fn n_blocks(&self) -> usize {
        self.pairing.days / self.block_length_days
    }
}

/// Evaluate on the earliest `eval_days` days and pair on the rest, dropping
/// the oldest remaining days so pairing covers whole blocks.
pub fn split_periods(
    panel: &GeoPanel,
    eval_days: usize,
    block_length_days: usize,
) -> Result<PeriodSplit> {
    if eval_days == 0 || block_length_days == 0 {
        return Err(DesignError::invalid("eval_days and block_length_days must be positive"));
    }
    let total = panel.n_days();
    if total < eval_days + block_length_days {
        return Err(DesignError::InsufficientData(format!(
            "panel has {total} days; need at least {} ({eval_days} evaluation + one {block_length_days}-day block)",
            eval_days + block_length_days
        )));
    }
    let evaluation = DateRange::new(panel.start, eval_days);
    let pairing = trailing_blocks(panel.date_range(), eval_days, block_length_days);
    PeriodSplit::new(panel, pairing, evaluation, block_length_days)
}

/// Use an explicit evaluation window; pairing takes every day after it
/// (truncated at its oldest end to whole blocks).
pub fn split_with_evaluation(
    panel: &GeoPanel,
    evaluation: DateRange,
    block_length_days: usize,
) -> Result<PeriodSplit> {
    if block_length_days == 0 {
        return Err(DesignError::invalid("block_length_days must be positive"));
    }
    let span = panel.day_span(&evaluation)?;
    let after = panel.n_days() - span.end;
    if after < block_length_days {
        return Err(DesignError::InsufficientData(format!(
            "only {after} days follow the evaluation period; need one {block_length_days}-day block"
        )));
    }
    let pairing = trailing_blocks(panel.date_range(), span.end, block_length_days);
    PeriodSplit::new(panel, pairing, evaluation, block_length_days)
}

// Most recent whole blocks of `range` after skipping its first `skip` days.
fn trailing_blocks(range: DateRange, skip: usize, block: usize) -> DateRange {
    let available = range.days - skip;
    let days = available / block * block;
    DateRange::new(range.start + Duration::days((range.days - days) as i64), days)
}

/// Block-summed response of one geo over the pairing period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockTotals {
    pub geo: GeoId,
    pub totals: Vec<f64>,
}

/// Sum each geo's response over consecutive `block_length_days`-day blocks
/// counted forward from the start of `period`.
pub fn block_totals(
    panel: &GeoPanel,
    period: &DateRange,
    block_length_days: usize,
) -> Result<Vec<BlockTotals>> {
    if block_length_days == 0 {
        return Err(DesignError::invalid("block length must be positive"));
    }
    if period.days % block_length_days != 0 {
        return Err(DesignError::invalid(format!(
            "period of {} days is not a multiple of block length {block_length_days}",
            period.days
        )));
    }
    let span = panel.day_span(period)?;
    Ok(panel
        .geos
        .iter()
        .zip(&panel.response)
        .map(|(geo, series)| BlockTotals {
            geo: geo.clone(),
            totals: series[span.clone()]
                .chunks(block_length_days)
                .map(|c| c.iter().sum())
                .collect(),
        })
        .collect())
}

/// Total response per geo over `period`.
pub fn period_totals(
    panel: &GeoPanel,
    geos: &[GeoId],
    period: &DateRange,
) -> Result<BTreeMap<GeoId, f64>> {
    series_totals(panel, geos, period, |p, i| Some(p.response(i)))
}

/// Total spend per geo over `period`; errors if the panel has no spend.
pub fn spend_totals(
    panel: &GeoPanel,
    geos: &[GeoId],
    period: &DateRange,
) -> Result<BTreeMap<GeoId, f64>> {
    if !panel.has_spend() {
        return Err(DesignError::MissingSpend);
    }
    series_totals(panel, geos, period, |p, i| p.spend(i))
}

fn series_totals<'a>(
    panel: &'a GeoPanel,
    geos: &[GeoId],
    period: &DateRange,
    series: impl Fn(&'a GeoPanel, usize) -> Option<&'a [f64]>,
) -> Result<BTreeMap<GeoId, f64>> {
    let span = panel.day_span(period)?;
    geos.iter()
        .map(|geo| {
            let idx = panel
                .geo_index(geo)
                .ok_or_else(|| DesignError::UnknownGeo(geo.to_string()))?;
            let values = series(panel, idx).ok_or(DesignError::MissingSpend)?;
            Ok((geo.clone(), values[span.clone()].iter().sum()))
        })
        .collect()
}
