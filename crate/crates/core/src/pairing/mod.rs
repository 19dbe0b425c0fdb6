//! Geo distances and pair construction.
//!
//! The distance between two geos is the Euclidean norm of the difference of
//! their block-summed responses over the pairing period. Optimal designs
//! minimize the total within-pair distance over all ways of choosing `n`
//! disjoint pairs; this reduces to a minimum-weight perfect matching once
//! `N - 2n` pseudo geos (free to match any real geo, forbidden to match each
//! other) absorb the excluded geos.

mod blossom;

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{DataError, DesignError, Result};
use crate::geo_data::{self, BlockTotals, DateRange, GeoId, GeoPanel};

pub use blossom::max_weight_matching;

/// Largest geo count accepted by [`enumerate_pairings`].
pub const MAX_ENUMERATION_GEOS: usize = 12;

// Distances are quantized to integers on a grid of `max_distance / 2^40`
// before matching so the blossom duals stay exact.
const QUANTIZATION_BITS: i32 = 40;

/// Symmetric matrix of geo distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    geos: Vec<GeoId>,
    d: Vec<f64>,
}

impl DistanceMatrix {
    /// Build from explicit rows; validates symmetry, zero diagonal and
    /// finite non-negative entries.
    pub fn from_rows(geos: Vec<GeoId>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = geos.len();
        if rows.len() != n || rows.iter().any(|r| r.len() != n) {
            return Err(DesignError::invalid("distance matrix must be N x N"));
        }
        let mut seen = geos.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != n {
            return Err(DesignError::invalid("geo ids are not unique"));
        }
        for i in 0..n {
            if rows[i][i] != 0.0 {
                return Err(DesignError::invalid(format!("d[{i}][{i}] is not zero")));
            }
            for j in 0..n {
                let v = rows[i][j];
                if !v.is_finite() || v < 0.0 {
                    return Err(DesignError::invalid(format!(
                        "distance d[{i}][{j}] = {v} is not finite and non-negative"
                    )));
                }
                if v != rows[j][i] {
                    return Err(DesignError::invalid(format!("d[{i}][{j}] != d[{j}][{i}]")));
                }
            }
        }
        Ok(DistanceMatrix {
            geos,
            d: rows.into_iter().flatten().collect(),
        })
    }

    pub fn geos(&self) -> &[GeoId] {
        &self.geos
    }

    pub fn len(&self) -> usize {
        self.geos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.geos.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.geos.len() + j]
    }

    pub fn index_of(&self, geo: &GeoId) -> Option<usize> {
        self.geos.iter().position(|g| g == geo)
    }

    pub fn distance(&self, a: &GeoId, b: &GeoId) -> Option<f64> {
        Some(self.get(self.index_of(a)?, self.index_of(b)?))
    }
}

/// `d[g][g'] = sqrt(sum over blocks of (total_g - total_g')^2)`.
pub fn distance_matrix(blocks: &[BlockTotals]) -> Result<DistanceMatrix> {
    let n = blocks.len();
    let n_blocks = blocks.first().map_or(0, |b| b.totals.len());
    if n > 0 && n_blocks == 0 {
        return Err(DesignError::invalid("block totals are empty"));
    }
    if let Some(bad) = blocks.iter().find(|b| b.totals.len() != n_blocks) {
        return Err(DesignError::invalid(format!(
            "geo `{}` has {} blocks, expected {n_blocks}",
            bad.geo,
            bad.totals.len()
        )));
    }
    let mut rows = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let ss: f64 = blocks[i]
                .totals
                .iter()
                .zip(&blocks[j].totals)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            rows[i][j] = ss.sqrt();
            rows[j][i] = rows[i][j];
        }
    }
    DistanceMatrix::from_rows(blocks.iter().map(|b| b.geo.clone()).collect(), rows)
}

/// One matched pair; `geo_a < geo_b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pair {
    pub pair_id: usize,
    pub geo_a: GeoId,
    pub geo_b: GeoId,
    pub distance: f64,
}

/// A candidate design: `n` disjoint pairs plus the geos left out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSet {
    pub pairs: Vec<Pair>,
    pub excluded_geos: Vec<GeoId>,
}

impl PairSet {
    /// Canonicalize raw pairs: order each pair's geos, sort pairs by
    /// ascending distance (ties by geo ids) and number them from 1.
    pub fn from_raw(mut raw: Vec<(GeoId, GeoId, f64)>, mut excluded_geos: Vec<GeoId>) -> Self {
        for (a, b, _) in raw.iter_mut() {
            if b < a {
                std::mem::swap(a, b);
            }
        }
        raw.sort_by(|x, y| {
            x.2.total_cmp(&y.2)
                .then_with(|| x.0.cmp(&y.0))
                .then_with(|| x.1.cmp(&y.1))
        });
        excluded_geos.sort();
        PairSet {
            pairs: raw
                .into_iter()
                .enumerate()
                .map(|(i, (geo_a, geo_b, distance))| Pair {
                    pair_id: i + 1,
                    geo_a,
                    geo_b,
                    distance,
                })
                .collect(),
            excluded_geos,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Pairs as unordered geo-id sets, sorted.
    pub fn pair_keys(&self) -> Vec<(GeoId, GeoId)> {
        let mut keys: Vec<_> = self
            .pairs
            .iter()
            .map(|p| (p.geo_a.clone(), p.geo_b.clone()))
            .collect();
        keys.sort();
        keys
    }

    pub fn paired_geos(&self) -> impl Iterator<Item = &GeoId> {
        self.pairs.iter().flat_map(|p| [&p.geo_a, &p.geo_b])
    }
}

/// Total within-pair distance of a design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairingLoss {
    pub l1_total: f64,
}

pub fn pairing_loss(ps: &PairSet) -> PairingLoss {
    PairingLoss {
        l1_total: ps.pairs.iter().map(|p| p.distance).sum(),
    }
}

fn check_pair_count(n_geos: usize, n: usize) -> Result<()> {
    if n == 0 || n > n_geos / 2 {
        return Err(DesignError::invalid(format!(
            "number of pairs {n} must be between 1 and {} for {n_geos} geos",
            n_geos / 2
        )));
    }
    Ok(())
}

/// Minimum-total-distance set of `n` disjoint pairs.
///
/// Geos are processed in id order so equal-weight alternatives always
/// resolve the same way, independent of the input ordering.
pub fn optimal_pairs(dm: &DistanceMatrix, n: usize) -> Result<PairSet> {
    let n_geos = dm.len();
    check_pair_count(n_geos, n)?;
    let mut order: Vec<usize> = (0..n_geos).collect();
    order.sort_by(|&a, &b| dm.geos[a].cmp(&dm.geos[b]));

    let max_d = dm.d.iter().copied().fold(0.0_f64, f64::max);
    let scale = if max_d > 0.0 {
        2f64.powi(QUANTIZATION_BITS) / max_d
    } else {
        0.0
    };
    // Maximize sum(top - q(d)) over perfect matchings == minimize sum q(d).
    let top = (1_i64 << QUANTIZATION_BITS) + 1;
    let n_pseudo = n_geos - 2 * n;
    let n_vertices = n_geos + n_pseudo;
    let mut edges = Vec::with_capacity(n_geos * (n_geos - 1) / 2 + n_pseudo * n_geos);
    for a in 0..n_geos {
        for b in a + 1..n_geos {
            let q = (dm.get(order[a], order[b]) * scale).round() as i64;
            edges.push((a, b, top - q));
        }
    }
    for p in n_geos..n_vertices {
        for a in 0..n_geos {
            edges.push((a, p, top));
        }
    }
    let mate = max_weight_matching(n_vertices, &edges, true);

    let mut raw = Vec::with_capacity(n);
    let mut excluded = Vec::with_capacity(n_pseudo);
    for a in 0..n_geos {
        match mate[a] {
            Some(b) if b < n_geos => {
                if a < b {
                    let (ia, ib) = (order[a], order[b]);
                    raw.push((dm.geos[ia].clone(), dm.geos[ib].clone(), dm.get(ia, ib)));
                }
            }
            Some(_) => excluded.push(dm.geos[order[a]].clone()),
            None => unreachable!("max-cardinality matching on this graph is perfect"),
        }
    }
    debug_assert_eq!(raw.len(), n);
    Ok(PairSet::from_raw(raw, excluded))
}

/// N! / ((N - 2n)! (2n)!!): number of ways to form `n` pairs from `N` geos.
pub fn pairing_count(n_geos: usize, n: usize) -> u128 {
    if 2 * n > n_geos {
        return 0;
    }
    let fact = |k: usize| (1..=k as u128).product::<u128>();
    let double_fact_even = (1..=n as u128).map(|i| 2 * i).product::<u128>();
    fact(n_geos) / (fact(n_geos - 2 * n) * double_fact_even)
}

/// Every way to choose `n` disjoint pairs, with its loss. Exhaustive; only
/// for `N <= 12`.
pub fn enumerate_pairings(dm: &DistanceMatrix, n: usize) -> Result<Vec<(PairSet, PairingLoss)>> {
    let n_geos = dm.len();
    if n_geos > MAX_ENUMERATION_GEOS {
        return Err(DesignError::TooLarge {
            n: n_geos,
            max: MAX_ENUMERATION_GEOS,
        });
    }
    check_pair_count(n_geos, n)?;

    struct Walk<'a> {
        dm: &'a DistanceMatrix,
        used: Vec<bool>,
        pairs: Vec<(usize, usize)>,
        excluded: Vec<usize>,
        out: Vec<(PairSet, PairingLoss)>,
    }
    fn walk(w: &mut Walk<'_>, next: usize, pairs_left: usize, skips_left: usize) {
        let n_geos = w.dm.len();
        let Some(v) = (next..n_geos).find(|&v| !w.used[v]) else {
            let raw = w
                .pairs
                .iter()
                .map(|&(a, b)| (w.dm.geos[a].clone(), w.dm.geos[b].clone(), w.dm.get(a, b)))
                .collect();
            let excluded = w.excluded.iter().map(|&g| w.dm.geos[g].clone()).collect();
            let ps = PairSet::from_raw(raw, excluded);
            let loss = pairing_loss(&ps);
            w.out.push((ps, loss));
            return;
        };
        w.used[v] = true;
        if skips_left > 0 {
            w.excluded.push(v);
            walk(w, v + 1, pairs_left, skips_left - 1);
            w.excluded.pop();
        }
        if pairs_left > 0 {
            for u in v + 1..n_geos {
                if !w.used[u] {
                    w.used[u] = true;
                    w.pairs.push((v, u));
                    walk(w, v + 1, pairs_left - 1, skips_left);
                    w.pairs.pop();
                    w.used[u] = false;
                }
            }
        }
        w.used[v] = false;
    }

    let mut w = Walk {
        dm,
        used: vec![false; n_geos],
        pairs: Vec::with_capacity(n),
        excluded: Vec::new(),
        out: Vec::new(),
    };
    walk(&mut w, 0, n, n_geos - 2 * n);
    Ok(w.out)
}

/// Pair geos by rank of a size measure (rank 1 with 2, 3 with 4, ...) and
/// keep the `n` rank pairs with the smallest distance under `dm`.
pub fn rank_pairs_by_size(
    sizes: &BTreeMap<GeoId, f64>,
    dm: &DistanceMatrix,
    n: usize,
) -> Result<PairSet> {
    check_pair_count(sizes.len(), n)?;
    let mut ranked: Vec<(&GeoId, f64)> = sizes.iter().map(|(g, v)| (g, *v)).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let mut candidates = Vec::with_capacity(ranked.len() / 2);
    for chunk in ranked.chunks_exact(2) {
        let (a, b) = (chunk[0].0, chunk[1].0);
        let d = dm
            .distance(a, b)
            .ok_or_else(|| DesignError::UnknownGeo(format!("{a} or {b}")))?;
        candidates.push((a.clone(), b.clone(), d));
    }
    // Stable on ties: earlier (larger) rank pairs first.
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&i, &j| candidates[i].2.total_cmp(&candidates[j].2).then(i.cmp(&j)));
    let keep: Vec<usize> = order.into_iter().take(n).collect();
    let mut raw = Vec::with_capacity(n);
    let mut excluded = Vec::new();
    for (i, c) in candidates.into_iter().enumerate() {
        if keep.contains(&i) {
            raw.push(c);
        } else {
            excluded.push(c.0);
            excluded.push(c.1);
        }
    }
    if ranked.len() % 2 == 1 {
        excluded.push(ranked[ranked.len() - 1].0.clone());
    }
    Ok(PairSet::from_raw(raw, excluded))
}

/// Rank-based pairing on `period`: sizes are period response totals and the
/// selection distance uses `block_length_days` blocks.
pub fn rank_pairs(
    panel: &GeoPanel,
    period: &DateRange,
    block_length_days: usize,
    n: usize,
) -> Result<PairSet> {
    let sizes = geo_data::period_totals(panel, panel.geos(), period)?;
    let dm = distance_matrix(&geo_data::block_totals(panel, period, block_length_days)?)?;
    rank_pairs_by_size(&sizes, &dm, n)
}

/// Write pairs as `pair_id,geo_a,geo_b,distance`.
pub fn write_pairs<W: Write>(ps: &PairSet, sink: W) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(sink);
    writeln!(out, "pair_id,geo_a,geo_b,distance")?;
    for p in &ps.pairs {
        writeln!(out, "{},{},{},{}", p.pair_id, p.geo_a, p.geo_b, p.distance)?;
    }
    out.flush()
}

/// Read a pairs CSV. Excluded geos are unknown to the file and left empty.
pub fn read_pairs<R: Read>(source: R) -> Result<PairSet, DataError> {
    #[derive(Deserialize)]
    struct Row {
        pair_id: usize,
        geo_a: String,
        geo_b: String,
        distance: f64,
    }
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let mut pairs = Vec::new();
    for (i, row) in reader.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| DataError::Malformed(format!("row {}: {e}", i + 2)))?;
        let (geo_a, geo_b) = if row.geo_b < row.geo_a {
            (row.geo_b, row.geo_a)
        } else {
            (row.geo_a, row.geo_b)
        };
        pairs.push(Pair {
            pair_id: row.pair_id,
            geo_a: GeoId::new(geo_a),
            geo_b: GeoId::new(geo_b),
            distance: row.distance,
        });
    }
    if pairs.is_empty() {
        return Err(DataError::Empty);
    }
    Ok(PairSet {
        pairs,
        excluded_geos: Vec::new(),
    })
}
