mod common;

use std::collections::{BTreeMap, HashSet};

use corrnet::clustering::{pair_clusters, ClusterAssignment};
use corrnet::marketdata::Industry;
use corrnet::neighbornet::CircularOrdering;
use corrnet::portfolio::{
    allocate_counts, run_study, select, select_by_cluster, select_by_industry, select_by_industry_cluster, select_random,
    simulate, PairDraw, PortfolioError, SelectionOptions, SelectionUniverse, Strategy, StudyOptions,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_universe(industries: &[Industry], returns: &[f64]) -> SelectionUniverse {
    let tickers = (0..industries.len()).map(|i| format!("T{i}")).collect();
    SelectionUniverse::new(tickers, industries.to_vec(), returns.to_vec()).unwrap()
}

#[test]
fn random_pairs_are_uniform() {
    let u = small_universe(&vec![Industry::Energy; 5], &[0.0; 5]);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let draws = 100_000;
    let mut counts: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for _ in 0..draws {
        let p = select_random(&u, 2, &mut rng).unwrap();
        let (a, b) = (p.members[0].min(p.members[1]), p.members[0].max(p.members[1]));
        *counts.entry((a, b)).or_default() += 1;
    }
    assert_eq!(counts.len(), 10);
    let sigma = (draws as f64 * 0.1 * 0.9).sqrt();
    for (pair, &c) in &counts {
        assert!((c as f64 - draws as f64 * 0.1).abs() < 3.0 * sigma, "{pair:?}: {c}");
    }
}

#[test]
fn random_whole_universe_and_determinism() {
    let u = small_universe(&Industry::CORE, &[0.1, 0.2, 0.3, 0.4, 0.5]);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut all = select_random(&u, 5, &mut rng).unwrap().members;
    all.sort_unstable();
    assert_eq!(all, vec![0, 1, 2, 3, 4]);
    let a = select_random(&u, 3, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let b = select_random(&u, 3, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    assert_eq!(a, b);
    assert!(matches!(select_random(&u, 6, &mut rng), Err(PortfolioError::InvalidSize { .. })));
    assert!(matches!(select_random(&u, 0, &mut rng), Err(PortfolioError::InvalidSize { .. })));
}

#[test]
fn industry_strategy_spreads_over_industries() {
    let industries: Vec<Industry> = (0..40).map(|i| Industry::CORE[i % 5].clone()).collect();
    let u = small_universe(&industries, &[0.0; 40]);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..500 {
        let p = select_by_industry(&u, 5, &mut rng).unwrap();
        let set: HashSet<&Industry> = p.members.iter().map(|&i| &industries[i]).collect();
        assert_eq!(set.len(), 5);
        let p = select_by_industry(&u, 2, &mut rng).unwrap();
        assert_ne!(industries[p.members[0]], industries[p.members[1]]);
        let p = select_by_industry(&u, 16, &mut rng).unwrap();
        let mut per: BTreeMap<&Industry, usize> = BTreeMap::new();
        for &i in &p.members {
            *per.entry(&industries[i]).or_default() += 1;
        }
        let mut c: Vec<usize> = per.into_values().collect();
        c.sort_unstable();
        assert_eq!(c, vec![3, 3, 3, 3, 4]);
    }
}

#[test]
fn industry_capacity_fallback() {
    let single = small_universe(&vec![Industry::Materials; 4], &[0.0; 4]);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    assert_eq!(select_by_industry(&single, 2, &mut rng).unwrap().len(), 2);

    // one Energy stock and four Finance stocks: 4 picks over 2 groups overflow Energy
    let mut inds = vec![Industry::Energy];
    inds.extend(vec![Industry::Finance; 4]);
    let u = small_universe(&inds, &[0.0; 5]);
    for _ in 0..100 {
        let p = select_by_industry(&u, 4, &mut rng).unwrap();
        let distinct: HashSet<usize> = p.members.iter().copied().collect();
        assert_eq!(distinct.len(), 4);
        assert!(p.members.contains(&0));
    }
}

#[test]
fn allocation_remainder_is_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let draws = 20_000;
    let mut extra = [0usize; 5];
    for _ in 0..draws {
        let c = allocate_counts(8, 5, &mut rng);
        assert_eq!(c.iter().sum::<usize>(), 8);
        for (g, &v) in c.iter().enumerate() {
            assert!(v == 1 || v == 2);
            extra[g] += v - 1;
        }
    }
    let p = 3.0 / 5.0;
    let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
    for e in extra {
        assert!((e as f64 - draws as f64 * p).abs() < 3.0 * sigma);
    }
}

#[test]
fn cluster_pairs_follow_the_pairing() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let u = common::block_universe(126, 8, &mut rng);
    let options = SelectionOptions::default();
    for k in [2, 3, 4, 7, 8] {
        for _ in 0..300 {
            let p = select_by_cluster(&u, k, &mut rng, &options).unwrap();
            assert_eq!(p.len(), k);
            assert_eq!(p.pairs.len(), k / 2);
            for &(a, b) in &p.pairs {
                let ca = u.cluster_of(a).unwrap();
                assert_eq!(u.cluster_of(b), u.pair_of(ca));
            }
        }
    }
}

#[test]
fn cluster_allocation_above_cluster_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let u = common::block_universe(126, 8, &mut rng);
    for _ in 0..200 {
        let p = select_by_cluster(&u, 16, &mut rng, &SelectionOptions::default()).unwrap();
        let mut per = [0usize; 8];
        for &m in &p.members {
            per[u.cluster_of(m).unwrap() - 1] += 1;
        }
        assert_eq!(per, [2; 8]);
        assert!(p.pairs.is_empty());

        let p = select_by_industry_cluster(&u, 16, &mut rng, &SelectionOptions::default()).unwrap();
        let mut seen = HashSet::new();
        for &m in &p.members {
            assert!(seen.insert((u.cluster_of(m).unwrap(), u.industries()[m].clone())), "cluster share repeats an industry");
        }
    }
}

#[test]
fn industry_cluster_pairs_cross_industries() {
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    let u = common::block_universe(126, 8, &mut rng);
    for k in [2, 4, 5, 8] {
        for _ in 0..500 {
            let p = select_by_industry_cluster(&u, k, &mut rng, &SelectionOptions::default()).unwrap();
            for &(a, b) in &p.pairs {
                assert_ne!(u.industries()[a], u.industries()[b]);
                assert_eq!(u.cluster_of(b), u.pair_of(u.cluster_of(a).unwrap()));
            }
        }
    }
}

#[test]
fn single_industry_pairs_are_infeasible() {
    let n = 12;
    let labels: Vec<usize> = (0..n).map(|i| i / 6).collect();
    let assignment = ClusterAssignment::from_membership(&CircularOrdering::identity(n), &labels).unwrap();
    let u = small_universe(&vec![Industry::Materials; n], &[0.0; 12])
        .with_clusters(&assignment, &pair_clusters(&assignment))
        .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let err = select_by_industry_cluster(&u, 2, &mut rng, &SelectionOptions::default()).unwrap_err();
    assert!(matches!(err, PortfolioError::Infeasible { retries: 100, .. }));
    assert!(select_by_cluster(&u, 2, &mut rng, &SelectionOptions::default()).is_ok());
}

#[test]
fn cluster_strategies_need_clusters() {
    let u = small_universe(&Industry::CORE, &[0.0; 5]);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    assert!(matches!(
        select(&u, Strategy::Cluster, 2, &mut rng, &SelectionOptions::default()),
        Err(PortfolioError::NoClusters(Strategy::Cluster))
    ));
    assert!(matches!(
        simulate(&u, Strategy::IndustryCluster, 2, 10, 0, &SelectionOptions::default()),
        Err(PortfolioError::NoClusters(_))
    ));
}

#[test]
fn pair_draws_with_replacement_still_give_distinct_members() {
    let mut rng = ChaCha8Rng::seed_from_u64(27);
    let u = common::block_universe(40, 4, &mut rng);
    let options = SelectionOptions { pair_draw: PairDraw::WithReplacement, ..Default::default() };
    for _ in 0..500 {
        let p = select_by_cluster(&u, 4, &mut rng, &options).unwrap();
        let set: HashSet<usize> = p.members.iter().copied().collect();
        assert_eq!(set.len(), 4);
    }
}

#[test]
fn identical_returns_have_zero_spread() {
    let mut rng = ChaCha8Rng::seed_from_u64(28);
    let base = common::block_universe(60, 6, &mut rng);
    let labels: Vec<usize> = (0..60).map(|i| base.cluster_of(i).unwrap()).collect();
    let assignment = ClusterAssignment::from_membership(&CircularOrdering::identity(60), &labels).unwrap();
    let u = SelectionUniverse::new(base.tickers().to_vec(), base.industries().to_vec(), vec![0.037; 60])
        .unwrap()
        .with_clusters(&assignment, &pair_clusters(&assignment))
        .unwrap();
    for s in Strategy::ALL {
        let r = simulate(&u, s, 4, 200, 1, &SelectionOptions::default()).unwrap();
        assert!((r.mean - 0.037).abs() < 1e-15);
        assert!(r.std_dev < 1e-15);
    }
}

#[test]
fn simulation_is_schedule_independent() {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let u = common::block_universe(126, 8, &mut rng);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| simulate(&u, Strategy::IndustryCluster, 4, 1000, 77, &SelectionOptions::default()).unwrap())
    };
    let one = run(1);
    let four = run(4);
    assert_eq!(one, four);
    assert_eq!(one.returns.len(), 1000);
    let mean = one.returns.iter().sum::<f64>() / 1000.0;
    assert!((one.mean - mean).abs() < 1e-12);
    let var = one.returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / 999.0;
    assert!((one.std_dev - var.sqrt()).abs() < 1e-12);
    assert_eq!(one.rng.algorithm, "ChaCha20");
}

#[test]
fn study_report_csv_layout() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let u = common::block_universe(126, 8, &mut rng);
    let options = StudyOptions { iterations: 200, seed: 3, ..Default::default() };
    let report = run_study(&u, &options).unwrap();
    let mut out = Vec::new();
    report.write_csv(&mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "size,random,industry,cluster,industry_cluster,p_value");
    assert_eq!(lines.len(), 1 + 2 * 4);
    for (i, size) in [2, 4, 8, 16].iter().enumerate() {
        let means: Vec<&str> = lines[1 + 2 * i].split(',').collect();
        let stds: Vec<&str> = lines[2 + 2 * i].split(',').collect();
        assert_eq!(means[0], size.to_string());
        assert_eq!(stds[0], "");
        let row = &report.sizes[i];
        for (j, r) in row.results.iter().enumerate() {
            assert_eq!(means[1 + j], format!("{:.2}", 100.0 * r.mean));
            assert_eq!(stds[1 + j], format!("({:.2})", 100.0 * r.std_dev));
        }
        assert_eq!(means[5], format!("{:.4}", row.anova.unwrap().p_value));
        assert_eq!(stds[5], format!("({:.4})", row.levene.unwrap().p_value));
    }
    let json = serde_json::to_string(&report).unwrap();
    let back: corrnet::portfolio::SimulationReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, report);
}

#[test]
fn cluster_beats_random_on_spread() {
    let reps = 30;
    let mut wins = 0;
    for seed in 0..reps {
        let study = common::two_regime_study(1000 + seed);
        let options = SelectionOptions::default();
        let random = simulate(&study.universe, Strategy::Random, 4, 1000, seed, &options).unwrap();
        let cluster = simulate(&study.universe, Strategy::Cluster, 4, 1000, seed, &options).unwrap();
        if cluster.std_dev < random.std_dev {
            wins += 1;
        }
    }
    // one-sided sign test at 5%: P(X >= 20 | n = 30, p = 1/2) < 0.05
    assert!(wins >= 20, "cluster spread lower in {wins} of {reps}");
}
