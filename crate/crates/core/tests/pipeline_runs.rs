use geodesign::pipeline::{self, DesignConfig, DesignReport, EvaluationWindow};
use geodesign::synthetic::{self, SynthConfig};
use geodesign::GeoPanel;

fn panel(seed: u64) -> GeoPanel {
    synthetic::generate_panel(&SynthConfig {
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn quick(seed: u64, grid: Vec<usize>, replicates: usize) -> DesignConfig {
    DesignConfig {
        seed,
        n_grid: Some(grid),
        replicates,
        ..DesignConfig::default()
    }
}

fn serialized(run: &pipeline::DesignRun) -> Vec<u8> {
    let mut out = Vec::new();
    pipeline::write_candidate_table(&run.table.rows, &mut out).unwrap();
    if let Some(d) = &run.design {
        geodesign::pairing::write_pairs(&d.pairs, &mut out).unwrap();
        pipeline::write_assignment(&d.pairs, &d.assignment, &mut out).unwrap();
    }
    out.extend(serde_json::to_vec(&DesignReport::new(run, None, None)).unwrap());
    out
}

#[test]
fn identical_inputs_reproduce_bytes() {
    let p = panel(2);
    let cfg = quick(5, vec![10, 20, 30], 100);
    let a = pipeline::run_design(&p, &cfg).unwrap();
    let b = pipeline::run_design(&p, &cfg).unwrap();
    assert!(a.design.is_some());
    assert_eq!(serialized(&a), serialized(&b));
    let c = pipeline::run_design(&p, &DesignConfig { seed: 6, ..cfg }).unwrap();
    assert_ne!(serialized(&a), serialized(&c));
}

#[test]
fn pairing_and_evaluation_periods_are_disjoint() {
    let p = panel(0);
    let run = pipeline::run_design(&p, &quick(0, vec![10], 20)).unwrap();
    let periods = run.provenance.periods;
    assert!(!periods.pairing.overlaps(&periods.evaluation));
    assert!(!periods.in_sample);
    assert!(periods.evaluation.last() < periods.pairing.start);
    assert_eq!(periods.pairing.days % periods.block_length_days, 0);
    // The balance window is pretest data, never the evaluation period.
    assert!(!periods.balance.overlaps(&periods.evaluation));

    let inside = pipeline::design_periods(
        &p,
        &DesignConfig {
            evaluation_window: EvaluationWindow::InSample,
            ..DesignConfig::default()
        },
    )
    .unwrap();
    assert!(inside.in_sample);
    assert!(inside.pairing.overlaps(&inside.evaluation));
}

#[test]
fn impossible_constraint_leaves_table_without_design() {
    let p = panel(1);
    let cfg = DesignConfig {
        theta0_target: Some(0.0),
        ..quick(1, vec![10, 20], 50)
    };
    let run = pipeline::run_design(&p, &cfg).unwrap();
    assert_eq!(run.table.rows.len(), 2);
    assert_eq!(run.table.chosen_n, None);
    assert!(run.design.is_none());
    let report = DesignReport::new(&run, None, None);
    assert!(!report.feasible);
}

#[test]
fn singleton_grid_is_chosen() {
    let p = panel(3);
    let run = pipeline::run_design(&p, &quick(3, vec![50], 50)).unwrap();
    assert_eq!(run.table.chosen_n, Some(50));
    let d = run.design.unwrap();
    assert_eq!(d.pairs.len(), 50);
    assert_eq!(d.assignment.len(), 50);
    assert_eq!(d.evaluation.n, 50);
}

#[test]
fn constrained_design_lands_in_the_mid_twenties() {
    for seed in 0..4 {
        let p = panel(seed);
        let cfg = DesignConfig {
            seed,
            replicates: 200,
            theta0_target: Some(2.5631),
            max_budget_to_baseline: Some(0.02),
            ..DesignConfig::default()
        };
        let run = pipeline::run_design(&p, &cfg).unwrap();
        let n = run.table.chosen_n.expect("a feasible design");
        assert!((20..=30).contains(&n), "seed {seed}: chosen n = {n}");
        let d = run.design.unwrap();
        assert!(d.evaluation.rmse <= 1.0 + 1e-12);
        assert!(d.evaluation.budget_to_baseline <= 0.02);
    }
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        for (rank, i) in idx.into_iter().enumerate() {
            r[i] = rank as f64;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let m = (a.len() as f64 - 1.0) / 2.0;
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - m) * (y - m)).sum();
    let var: f64 = ra.iter().map(|x| (x - m).powi(2)).sum();
    cov / var
}

#[test]
fn rmse_rises_with_pair_count() {
    let grid: Vec<usize> = (10..=50).step_by(5).collect();
    let seeds = 50;
    let mut total = 0.0;
    for seed in 0..seeds {
        let p = panel(seed);
        let cfg = quick(seed, grid.clone(), 100);
        let periods = pipeline::design_periods(&p, &cfg).unwrap();
        let data = pipeline::evaluation_data(&p, &periods, cfg.spend_proxy).unwrap();
        let pairs = pipeline::candidate_pairs(&p, &periods, cfg.pairing_method, &grid).unwrap();
        let rows = pipeline::evaluate_candidates(&pairs, &data, &cfg).unwrap();
        let ns: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
        let rmse: Vec<f64> = rows.iter().map(|r| r.rmse).collect();
        total += spearman(&ns, &rmse);
    }
    let mean = total / seeds as f64;
    assert!(mean >= 0.8, "mean Spearman correlation {mean}");
}

#[test]
fn final_assignment_needs_few_draws() {
    let mut attempts = Vec::new();
    for seed in 0..100 {
        let p = panel(seed);
        let run = pipeline::run_design(&p, &quick(seed, vec![50], 100)).unwrap();
        let d = run.design.unwrap();
        assert!(!d.capped);
        attempts.push(d.attempts);
    }
    attempts.sort_unstable();
    let median = attempts[attempts.len() / 2];
    assert!(median <= 5, "median attempts {median}; all {attempts:?}");
}

#[test]
fn rank_method_switch_produces_same_outputs() {
    let p = panel(4);
    let cfg = DesignConfig {
        pairing_method: pipeline::PairingMethod::Rank,
        ..quick(4, vec![10, 20], 50)
    };
    let run = pipeline::run_design(&p, &cfg).unwrap();
    assert_eq!(run.table.rows.len(), 2);
    assert!(run.design.is_some());

    let same = pipeline::compare_pairing_methods(
        &p,
        &DesignConfig {
            pairing_method: pipeline::PairingMethod::Optimal,
            ..quick(4, vec![20], 50)
        },
    )
    .unwrap();
    assert_eq!(same.len(), 1);
    assert!(same[0].ratio.is_finite());
}
