use stochlift::harness::{
    read_json, read_summaries_csv, run_study, spearman, write_json, write_summaries_csv, ExperimentConfig,
};

const FILTER_CONFIG: &str = include_str!("../../../configs/filter_tikhonov.toml");
const NU_CONFIG: &str = include_str!("../../../configs/nu_random.toml");
const BESOV_CONFIG: &str = include_str!("../../../configs/besov_noise_squared.toml");
const BESOV_BALANCE_CONFIG: &str = include_str!("../../../configs/besov_balance.toml");

fn config(text: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml_str(text).unwrap()
}

#[test]
fn shipped_configs_parse() {
    for text in [
        FILTER_CONFIG,
        NU_CONFIG,
        BESOV_CONFIG,
        BESOV_BALANCE_CONFIG,
        include_str!("../../../configs/autoconv_const.toml"),
        include_str!("../../../configs/autoconv_log.toml"),
    ] {
        config(text);
    }
}

#[test]
fn csv_bytes_do_not_depend_on_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for workers in [Some(1), Some(3), None] {
        let mut cfg = config(NU_CONFIG);
        cfg.workers = workers;
        cfg.trials_per_eta = 40;
        let path = dir.path().join(format!("w{workers:?}.csv"));
        write_summaries_csv(&path, &run_study(&cfg).unwrap().summaries).unwrap();
        files.push(std::fs::read(&path).unwrap());
    }
    assert_eq!(files[0], files[1]);
    assert_eq!(files[0], files[2]);
}

#[test]
fn seed_changes_the_draws() {
    let mut cfg = config(FILTER_CONFIG);
    cfg.trials_per_eta = 30;
    let a = run_study(&cfg).unwrap();
    cfg.seed ^= 1;
    let b = run_study(&cfg).unwrap();
    assert_ne!(a.summaries, b.summaries);
}

#[test]
fn filter_kyfan_error_is_monotone_in_eta() {
    let out = run_study(&config(FILTER_CONFIG)).unwrap();
    let etas: Vec<f64> = out.summaries.iter().map(|s| s.eta).collect();
    let errs: Vec<f64> = out.summaries.iter().map(|s| s.err_kyfan).collect();
    assert!(spearman(&etas, &errs).unwrap() >= 0.9);
}

#[test]
fn truncation_stops_binding_as_eta_shrinks() {
    // the largest truth coefficient is 1/9; a cap just above it binds only for noisy data
    let mut cfg = config(BESOV_CONFIG);
    cfg.caps.sup_cap = 0.115;
    let out = run_study(&cfg).unwrap();
    let fractions: Vec<f64> = out
        .summaries
        .iter()
        .map(|s| s.truncated_count as f64 / s.trials as f64)
        .collect();
    assert!(fractions[0] > 0.0, "{fractions:?}");
    assert_eq!(*fractions.last().unwrap(), 0.0, "{fractions:?}");
}

#[test]
fn zero_noise_filter_study_recovers_truth() {
    let mut cfg = config(FILTER_CONFIG);
    cfg.eta_grid = vec![1e-12];
    cfg.trials_per_eta = 30;
    let out = run_study(&cfg).unwrap();
    assert!(out.summaries[0].err_mean <= 1e-6, "{}", out.summaries[0].err_mean);
}

#[test]
fn balancing_and_noise_squared_rules_agree() {
    let a = run_study(&config(BESOV_CONFIG)).unwrap();
    let b = run_study(&config(BESOV_BALANCE_CONFIG)).unwrap();
    assert_eq!(b.flagged_count(), 0);
    for (x, y) in a.summaries.iter().zip(&b.summaries) {
        // both choose alpha proportional to eta^2 up to slowly varying factors
        let ratio = x.alpha_or_kstar / y.alpha_or_kstar;
        assert!((0.5..2.0).contains(&ratio), "eta {}: {ratio}", x.eta);
    }
}

#[test]
fn study_output_round_trips_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(FILTER_CONFIG);
    cfg.trials_per_eta = 30;
    let out = run_study(&cfg).unwrap();
    let csv = dir.path().join("summary.csv");
    write_summaries_csv(&csv, &out.summaries).unwrap();
    assert_eq!(read_summaries_csv(&csv).unwrap(), out.summaries);
    let json = dir.path().join("study.json");
    write_json(&json, &out).unwrap();
    assert_eq!(read_json(&json).unwrap(), out);
}
