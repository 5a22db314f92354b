use direct_pf::csvio::{self, Table};
use direct_pf::estimation::{sigma_scan, ScanOptions};
use direct_pf::experiments::{
    checkpoints_for, discrepancy_study, intrinsic_uncertainty, robustness_study, ExperimentConfig,
    Perturbation, TableOneOptions,
};
use direct_pf::model::ModelParams;
use direct_pf::seeding::SeedStream;

fn small(runs: usize, particles: usize, steps: usize) -> ExperimentConfig {
    ExperimentConfig {
        runs,
        particles,
        model: ModelParams {
            n_steps: steps,
            ..ModelParams::default()
        },
        master_seed: 5,
        ..ExperimentConfig::default()
    }
}

fn pool(n: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .unwrap()
}

#[test]
fn single_run_has_no_spread() {
    let stats = discrepancy_study(&small(1, 5, 40)).unwrap();
    assert_eq!(stats.checkpoints.len(), 1);
    let c = &stats.checkpoints[0];
    assert_eq!(c.step, 40);
    assert!(c.sd_err_x.is_none() && c.sd_err_y.is_none());
    let bytes = csvio::table2_table(&stats).to_bytes().unwrap();
    let text = String::from_utf8(bytes).unwrap();
    assert!(text.lines().nth(1).unwrap().contains(",NA,"), "{text}");
}

#[test]
fn checkpoints_follow_the_horizon() {
    assert_eq!(checkpoints_for(160), vec![40, 80, 120, 160]);
    assert_eq!(checkpoints_for(100), vec![40, 80]);
    assert_eq!(checkpoints_for(10), vec![10]);
    let stats = discrepancy_study(&small(3, 4, 90)).unwrap();
    let steps: Vec<_> = stats.checkpoints.iter().map(|c| c.step).collect();
    assert_eq!(steps, vec![40, 80]);
}

#[test]
fn discrepancy_study_does_not_depend_on_worker_count() {
    let cfg = small(8, 6, 60);
    let one = pool(1).install(|| discrepancy_study(&cfg)).unwrap();
    let four = pool(4).install(|| discrepancy_study(&cfg)).unwrap();
    assert_eq!(one, four);
}

#[test]
fn sigma_scan_does_not_depend_on_worker_count() {
    let p = ModelParams::default();
    let opts = ScanOptions {
        window: 20,
        ..ScanOptions::new(5)
    };
    let ratios = [0.5, 1.0, 2.0];
    let seed = SeedStream::new(9);
    let one = pool(1)
        .install(|| sigma_scan(&ratios, 6, &p, &seed, &opts))
        .unwrap();
    let four = pool(4)
        .install(|| sigma_scan(&ratios, 6, &p, &seed, &opts))
        .unwrap();
    assert_eq!(one, four);
    assert_eq!(one.len(), 3);
}

#[test]
fn intrinsic_uncertainty_without_noise_is_zero() {
    let cfg = ExperimentConfig {
        model: ModelParams {
            sigma: 0.0,
            ..ModelParams::default()
        },
        ..small(1, 1, 160)
    };
    let opts = TableOneOptions {
        accepted_target: 20,
        ..TableOneOptions::default()
    };
    let t = intrinsic_uncertainty(&cfg, &opts).unwrap();
    assert_eq!(t.accepted, 20);
    for row in &t.rows {
        assert_eq!(row.sd_x, 0.0);
        assert_eq!(row.sd_y, 0.0);
    }
}

#[test]
fn intrinsic_uncertainty_is_reproducible_and_grows() {
    let cfg = small(1, 1, 160);
    let opts = TableOneOptions {
        accepted_target: 60,
        ..TableOneOptions::default()
    };
    let a = pool(1)
        .install(|| intrinsic_uncertainty(&cfg, &opts))
        .unwrap();
    let b = pool(4)
        .install(|| intrinsic_uncertainty(&cfg, &opts))
        .unwrap();
    assert_eq!(a, b);
    assert!(a.proposals >= a.accepted);
    assert!(a.rows.windows(2).all(|w| w[1].sd_y >= w[0].sd_y));
}

#[test]
fn robustness_with_no_perturbation_matches_baseline() {
    let cfg = small(2, 8, 40);
    let pert = Perturbation {
        x0: 0.0,
        y0: 0.0,
        sigma_jitter_eps: 0.0,
    };
    let out = robustness_study(&cfg, &pert).unwrap();
    for r in &out.runs {
        assert_eq!(r.baseline, r.perturbed);
        assert_eq!(r.baseline, r.jittered);
        assert_eq!(r.jittered_sigma, cfg.model.sigma);
    }
}

#[test]
fn robustness_output_round_trips_through_csv() {
    let out = robustness_study(&small(2, 4, 20), &Perturbation::default()).unwrap();
    let bytes = csvio::fig1_table(&out).to_bytes().unwrap();
    let table = Table::read(csvio::FIG1, bytes.as_slice()).unwrap();
    assert_eq!(table.rows.len(), 2 * 4 * 20);
    assert_eq!(table.to_bytes().unwrap(), bytes);
}
