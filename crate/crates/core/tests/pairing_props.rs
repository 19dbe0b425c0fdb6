use geodesign::pairing::{self, DistanceMatrix};
use geodesign::GeoId;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ids(n: usize) -> Vec<GeoId> {
    (0..n).map(|i| GeoId::new(format!("g{i:02}"))).collect()
}

fn random_rows(n: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut rows = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = rng.gen_range(0.0..100.0);
            rows[i][j] = v;
            rows[j][i] = v;
        }
    }
    rows
}

fn loss(ps: &geodesign::PairSet) -> f64 {
    pairing::pairing_loss(ps).l1_total
}

#[test]
fn matches_exhaustive_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..150 {
        let n_geos = rng.gen_range(2..=10);
        let dm = DistanceMatrix::from_rows(ids(n_geos), random_rows(n_geos, &mut rng)).unwrap();
        for n in 1..=n_geos / 2 {
            let best = pairing::enumerate_pairings(&dm, n)
                .unwrap()
                .iter()
                .map(|(_, l)| l.l1_total)
                .fold(f64::INFINITY, f64::min);
            let got = pairing::optimal_pairs(&dm, n).unwrap();
            assert_eq!(got.len(), n);
            assert!((loss(&got) - best).abs() <= 1e-9, "N={n_geos} n={n}");
        }
    }
}

#[test]
fn enumeration_count_is_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for n_geos in 2..=9 {
        let dm = DistanceMatrix::from_rows(ids(n_geos), random_rows(n_geos, &mut rng)).unwrap();
        for n in 1..=n_geos / 2 {
            let all = pairing::enumerate_pairings(&dm, n).unwrap();
            assert_eq!(all.len() as u128, pairing::pairing_count(n_geos, n));
        }
    }
}

#[test]
fn optimal_loss_grows_with_pair_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..40 {
        let n_geos = rng.gen_range(4..=30);
        let dm = DistanceMatrix::from_rows(ids(n_geos), random_rows(n_geos, &mut rng)).unwrap();
        let losses: Vec<f64> = (1..=n_geos / 2)
            .map(|n| loss(&pairing::optimal_pairs(&dm, n).unwrap()))
            .collect();
        for w in losses.windows(2) {
            assert!(w[0] <= w[1] + 1e-9, "{losses:?}");
        }
    }
}

#[test]
fn invariant_to_geo_order_and_scale() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..40 {
        let n_geos = rng.gen_range(4..=24);
        let geos = ids(n_geos);
        let rows = random_rows(n_geos, &mut rng);
        let dm = DistanceMatrix::from_rows(geos.clone(), rows.clone()).unwrap();

        let mut perm: Vec<usize> = (0..n_geos).collect();
        perm.shuffle(&mut rng);
        let pgeos: Vec<GeoId> = perm.iter().map(|&i| geos[i].clone()).collect();
        let prows: Vec<Vec<f64>> = perm
            .iter()
            .map(|&i| perm.iter().map(|&j| rows[i][j]).collect())
            .collect();
        let pdm = DistanceMatrix::from_rows(pgeos, prows).unwrap();

        let c = rng.gen_range(0.01..1000.0);
        let srows: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| v * c).collect()).collect();
        let sdm = DistanceMatrix::from_rows(geos.clone(), srows).unwrap();

        for n in 1..=n_geos / 2 {
            let base = pairing::optimal_pairs(&dm, n).unwrap();
            let permuted = pairing::optimal_pairs(&pdm, n).unwrap();
            let scaled = pairing::optimal_pairs(&sdm, n).unwrap();
            assert_eq!(base.pair_keys(), permuted.pair_keys());
            assert_eq!(base.excluded_geos, permuted.excluded_geos);
            assert_eq!(base.pair_keys(), scaled.pair_keys());
        }
    }
}

#[test]
fn rank_pairing_never_beats_optimal() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..30 {
        let n_geos = rng.gen_range(4..=20);
        let geos = ids(n_geos);
        let dm = DistanceMatrix::from_rows(geos.clone(), random_rows(n_geos, &mut rng)).unwrap();
        let sizes = geos.iter().map(|g| (g.clone(), rng.gen_range(0.0..1.0))).collect();
        for n in 1..=n_geos / 2 {
            let rank = pairing::rank_pairs_by_size(&sizes, &dm, n).unwrap();
            let opt = pairing::optimal_pairs(&dm, n).unwrap();
            assert!(loss(&opt) <= loss(&rank) + 1e-9);
        }
    }
}

#[test]
fn pairs_are_disjoint_and_cover_the_panel() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let n_geos = 21;
    let dm = DistanceMatrix::from_rows(ids(n_geos), random_rows(n_geos, &mut rng)).unwrap();
    for n in 1..=10 {
        let ps = pairing::optimal_pairs(&dm, n).unwrap();
        let mut seen: Vec<&GeoId> = ps.paired_geos().chain(&ps.excluded_geos).collect();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), n_geos);
        assert_eq!(ps.excluded_geos.len(), n_geos - 2 * n);
        let ids: Vec<usize> = ps.pairs.iter().map(|p| p.pair_id).collect();
        assert_eq!(ids, (1..=n).collect::<Vec<_>>());
    }
}
