use std::path::Path;
use std::process::{Command, Output};

use direct_pf::csvio::{self, Table};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_direct-pf"));
    c.env_remove("FILTER_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok_stdout(args: &[&str]) -> Vec<u8> {
    let o = run(args);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{args:?}: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    o.stdout
}

#[test]
fn simulate_matches_golden_record() {
    let golden =
        std::fs::read(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/truth_seed1.csv"))
            .unwrap();
    assert_eq!(ok_stdout(&["simulate", "--seed", "1"]), golden);
    let table = Table::read(csvio::TRUTH, golden.as_slice()).unwrap();
    assert_eq!(table.rows.len(), 160);
    assert_eq!(table.to_bytes().unwrap(), golden);
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = run(&["simulate", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(o.stdout.is_empty());
}

#[test]
fn bad_values_are_configuration_errors() {
    assert_eq!(run(&["filter", "--particles", "0"]).status.code(), Some(1));
    assert_eq!(
        run(&["filter", "--resample", "sometimes"]).status.code(),
        Some(1)
    );
    assert_eq!(run(&["simulate", "--sigma", "-1"]).status.code(), Some(1));
}

#[test]
fn missing_crossing_is_a_numerical_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scan.csv");
    std::fs::write(
        &path,
        "ratio,mean_D,se_D,runs,failures\n0.5,1.5,0.1,10,0\n1.0,1.4,0.1,10,0\n2.0,1.3,0.1,10,0\n",
    )
    .unwrap();
    let o = run(&["estimate-sigma", "--scan", path.to_str().unwrap()]);
    assert_eq!(
        o.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn malformed_scan_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scan.csv");
    std::fs::write(&path, "ratio,mean_D\n1.0,1.0\n").unwrap();
    assert_eq!(
        run(&["estimate-sigma", "--scan", path.to_str().unwrap()])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn estimate_sigma_reads_a_scan_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scan.csv");
    std::fs::write(
        &path,
        "ratio,mean_D,se_D,runs,failures\n0.5,1.5,0.1,10,0\n1.0,1.2,0.1,10,0\n2.0,0.8,0.1,10,0\n",
    )
    .unwrap();
    let out = ok_stdout(&[
        "estimate-sigma",
        "--scan",
        path.to_str().unwrap(),
        "--sigma",
        "2e-6",
    ]);
    let t = Table::read(csvio::SIGMA_ESTIMATE, out.as_slice()).unwrap();
    let ratio = t.column("ratio").unwrap()[0].unwrap();
    let sigma = t.column("sigma").unwrap()[0].unwrap();
    assert!((ratio - 1.5).abs() < 1e-12);
    assert!((sigma - 3e-6).abs() < 1e-18);
}

#[test]
fn output_is_reproducible_and_independent_of_workers() {
    let cases: [&[&str]; 3] = [
        &["filter", "--seed", "4", "--particles", "20"],
        &[
            "table2",
            "--seed",
            "4",
            "--runs",
            "6",
            "--particles",
            "10",
            "--steps",
            "80",
        ],
        &["fig1", "--seed", "4", "--particles", "10", "--steps", "40"],
    ];
    for args in cases {
        let a = ok_stdout(&[args, &["--workers", "1"]].concat());
        let b = ok_stdout(&[args, &["--workers", "4"]].concat());
        let c = ok_stdout(args);
        assert_eq!(a, b, "{args:?}");
        assert_eq!(a, c, "{args:?}");
    }
}

#[test]
fn seed_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# settings\nseed = 2\n").unwrap();
    let cfg = cfg.to_str().unwrap();
    let by_seed = |s: &str| ok_stdout(&["simulate", "--seed", s]);

    let from_file = ok_stdout(&["simulate", "--config", cfg]);
    assert_eq!(from_file, by_seed("2"));

    let env = bin()
        .args(["simulate", "--config", cfg])
        .env("FILTER_SEED", "3")
        .output()
        .unwrap();
    assert_eq!(env.stdout, by_seed("3"));

    let flag = bin()
        .args(["simulate", "--config", cfg, "--seed", "1"])
        .env("FILTER_SEED", "3")
        .output()
        .unwrap();
    assert_eq!(flag.stdout, by_seed("1"));

    let bad = bin()
        .args(["simulate"])
        .env("FILTER_SEED", "abc")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn config_file_settings_apply_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "seed=1\nsteps=50\nobs-var=1e-4\n").unwrap();
    let cfg = cfg.to_str().unwrap();
    let t = |out: Vec<u8>| Table::read(csvio::TRUTH, out.as_slice()).unwrap();
    assert_eq!(t(ok_stdout(&["simulate", "--config", cfg])).rows.len(), 50);
    assert_eq!(
        t(ok_stdout(&["simulate", "--config", cfg, "--steps", "30"]))
            .rows
            .len(),
        30
    );

    std::fs::write(dir.path().join("bad.cfg"), "colour = blue\n").unwrap();
    let bad = dir.path().join("bad.cfg");
    assert_eq!(
        run(&["simulate", "--config", bad.to_str().unwrap()])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn table3_has_one_row_per_ratio() {
    let out = ok_stdout(&[
        "table3",
        "--seed",
        "2",
        "--runs",
        "4",
        "--particles",
        "5",
        "--window",
        "10",
    ]);
    let t = Table::read(csvio::TABLE3, out.as_slice()).unwrap();
    assert_eq!(t.rows.len(), 12);
    let ratios: Vec<f64> = t
        .column("ratio")
        .unwrap()
        .into_iter()
        .map(Option::unwrap)
        .collect();
    assert!(ratios.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn out_flag_writes_a_file_and_particles_out_writes_the_ensemble() {
    let dir = tempfile::tempdir().unwrap();
    let est = dir.path().join("est.csv");
    let ens = dir.path().join("ens.csv");
    let o = run(&[
        "filter",
        "--seed",
        "1",
        "--particles",
        "7",
        "--out",
        est.to_str().unwrap(),
        "--particles-out",
        ens.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(o.stdout.is_empty());
    let est = Table::read(csvio::FILTER, std::fs::File::open(est).unwrap()).unwrap();
    assert_eq!(est.rows.len(), 160);
    let ens = Table::read(csvio::PARTICLES, std::fs::File::open(ens).unwrap()).unwrap();
    assert_eq!(ens.rows.len(), 7);
}

#[test]
fn selftest_passes() {
    let out = String::from_utf8(ok_stdout(&["selftest"])).unwrap();
    assert_eq!(out.lines().count(), 2);
    assert!(out.lines().all(|l| l.starts_with("ok")));
}
