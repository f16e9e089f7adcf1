use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn stochlift(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stochlift")).args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn shipped(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

/// `key=value` lines into a lookup.
fn field(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no {key} in {text}"))
        .parse()
        .unwrap()
}

const SMALL_FILTER: &str = r#"
schema_version = 1
seed = 3
eta_grid = [1e-2, 1e-3, 1e-4]
trials_per_eta = 30

[caps]
norm_cap = 100.0
sup_cap = 100.0

[study]
kind = "filter"
filter = "tikhonov"
delta = { mode = "kyfan-bound" }
rule = { rule = "apriori", beta = 0.5, nu = 1.0, rho = 1.0, c = 1.0 }
operator = { kind = "diagonal-power", n = 50, exponent = 1.0 }
truth = { kind = "source", nu = 1.0, decay = 0.75, norm = 1.0 }
"#;

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn kyfan_bound_prints_all_three_quantities() {
    let out = stochlift(&["kyfan", "bound", "--eta", "0.01", "--m", "4"]);
    assert!(out.status.success());
    let text = stdout(&out);
    let (bound, mean, upper) = (field(&text, "kyfan_bound"), field(&text, "expected_norm"), field(&text, "eta_sqrt_m"));
    // E||eps|| = eta sqrt(2) Gamma(5/2) / Gamma(2) = eta * 3 sqrt(2 pi) / 4 for m = 4
    assert!((mean - 0.01 * 3.0 * (2.0 * std::f64::consts::PI).sqrt() / 4.0).abs() < 1e-15);
    assert_eq!(upper, 0.02);
    assert!(bound > mean && bound < 1.0);
}

#[test]
fn kyfan_tail_with_monte_carlo_check() {
    let out = stochlift(&["kyfan", "tail", "--tau", "1.5", "--m", "4", "--check-mc", "20000", "--seed", "9"]);
    assert!(out.status.success());
    let text = stdout(&out);
    let (p, freq, sd) = (field(&text, "tail_prob"), field(&text, "mc_frequency"), field(&text, "binomial_sd"));
    assert!((p - freq).abs() <= 4.0 * sd, "{text}");
}

#[test]
fn kyfan_empirical_reads_a_distance_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "d.csv", "distance\n0.1\n0.2\n0.3\n0.4\n");
    let out = stochlift(&["kyfan", "empirical", "--input", path.to_str().unwrap()]);
    assert!(out.status.success());
    // fraction above eps is 2/4 on [0.2, 0.3), so the infimum is 0.3
    assert_eq!(field(&stdout(&out), "kyfan_empirical"), 0.3);
    let bad = write(dir.path(), "bad.csv", "0.1\nxyz\n");
    assert_eq!(stochlift(&["kyfan", "empirical", "--input", bad.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn filter_study_writes_csv_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "f.toml", SMALL_FILTER);
    let csv = dir.path().join("out.csv");
    let json = dir.path().join("out.json");
    let out = stochlift(&[
        "run",
        "filter-study",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        csv.to_str().unwrap(),
        "--json",
        json.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "eta,delta_eff,alpha_or_kstar,err_mean,err_kyfan,residual_mean,trials,truncated_count"
    );
    assert_eq!(lines.count(), 3);
    assert!(std::fs::read_to_string(&json).unwrap().contains("\"trials\""));

    // the same run on stdout gives the same table
    let again = stochlift(&["run", "filter-study", "--config", cfg.to_str().unwrap()]);
    assert_eq!(stdout(&again), text);
}

#[test]
fn autoconv_emits_the_ratio_table() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(shipped("autoconv_log.toml"))
        .unwrap()
        .replace("m = 128", "m = 64")
        .replace("trials_per_eta = 100", "trials_per_eta = 30")
        .replace("[1e-1, 1e-2, 1e-3, 1e-4]", "[1e-2, 1e-3]");
    let cfg = write(dir.path(), "a.toml", &text);
    let out = stochlift(&["run", "autoconv", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = stdout(&out);
    let mut lines = table.lines();
    assert_eq!(lines.next().unwrap(), "eta,ratio_delta2_over_alpha,err");
    assert_eq!(lines.count(), 2);
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "f.toml", SMALL_FILTER);
    // study kind does not match the subcommand
    assert_eq!(stochlift(&["run", "besov", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
    let typo = write(dir.path(), "t.toml", &SMALL_FILTER.replace("seed = 3", "seed = 3\nsede = 4"));
    let out = stochlift(&["run", "filter-study", "--config", typo.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sede"));
    let missing = dir.path().join("missing.toml");
    assert_eq!(stochlift(&["run", "filter-study", "--config", missing.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(stochlift(&["kyfan", "bound", "--eta", "-1", "--m", "4"]).status.code(), Some(2));
    assert_eq!(stochlift(&["predict", "nu-rate", "--rho", "2"]).status.code(), Some(2));
}

#[test]
fn failing_study_exits_with_3() {
    // one Landweber step cannot reach the discrepancy threshold: every trial is flagged
    let text = std::fs::read_to_string(shipped("nu_random.toml"))
        .unwrap()
        .replace("decay = 0.5", "decay = 0.5\nmax_iter = 1");
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "n.toml", &text);
    let out = stochlift(&["run", "nu-random", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn predictions() {
    let out = stochlift(&["predict", "tikhonov-rate", "--model", "uniform", "--rho-grid", "1e-2,1e-4,1e-6"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert_eq!(text.lines().next().unwrap(), "rho,bound,xi,tau");
    let bounds: Vec<f64> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(bounds.len(), 3);
    assert!(bounds.windows(2).all(|w| w[1] < w[0]));

    let out = stochlift(&["predict", "nu-rate", "--rho", "1e-6"]);
    assert!(out.status.success());
    let text = stdout(&out);
    let nu = field(&text, "nu_exact");
    assert!((1e-6f64.powf(2.0 * nu / (2.0 * nu + 1.0)) - 2.0 * nu).abs() < 1e-12);
    // rate = 2 nu_approx by construction
    assert!((field(&text, "rate") - 2.0 * field(&text, "nu_approx")).abs() < 1e-15);
}
