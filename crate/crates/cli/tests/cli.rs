use adhoc_etc::bounds::outage_bounds;
use adhoc_etc::fsmc::ChannelModel;
use adhoc_etc::spatial::NetworkParams;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
[network]
lambda = 0.002
d = 5.0
alpha = 3.0
beta = 2.0

[channel]
states = [0.5, 2.0]
invariant = [0.5, 0.5]

[mc]
trials = 2000
seed = 3
"#;

fn write_spec(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("spec.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adhoc-etc"))
        .args(args)
        .output()
        .unwrap()
}

fn run_in(dir: &Path, sub: &str, spec: &Path, extra: &[&str]) -> Output {
    let out = dir.join("out");
    let mut args = vec![sub, "--spec", spec.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    run(&args)
}

fn read_table(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

#[test]
fn missing_spec_is_a_validation_error() {
    assert_eq!(run(&["bounds"]).status.code(), Some(1));
}

#[test]
fn invalid_fields_exit_1_with_the_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), &SMALL.replace("beta = 2.0", "beta = -2.0"));
    let out = run_in(dir.path(), "bounds", &spec, &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("network.beta"));

    let spec = write_spec(dir.path(), &format!("{SMALL}\nunknown = 1\n"));
    assert_eq!(run_in(dir.path(), "bounds", &spec, &[]).status.code(), Some(1));
}

#[test]
fn subcommand_needing_a_section_reports_it() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), SMALL);
    let out = run_in(dir.path(), "etc-caot", &spec, &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("caot"));
}

#[test]
fn empty_sweep_gives_one_row_per_state() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(
        dir.path(),
        &format!("{SMALL}\n[sweep]\naxis = \"lambda\"\nvalues = []\n"),
    );
    let out = run_in(dir.path(), "simulate", &spec, &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = read_table(&dir.path().join("out/simulate.csv"));
    assert_eq!(
        header,
        [
            "lambda",
            "state",
            "s",
            "lower",
            "upper",
            "q_hat",
            "stderr",
            "within_bounds"
        ]
    );
    assert_eq!(rows.len(), 2);
}

#[test]
fn sweep_delta_gaps_are_nonincreasing() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(
        dir.path(),
        &format!("{SMALL}\n[sweep]\naxis = \"delta\"\nvalues = [1.0, 1.5, 2.0, 3.0]\n").replace("0.002", "0.01"),
    );
    let out = run_in(dir.path(), "sweep-delta", &spec, &["--trials", "500"]);
    assert_eq!(out.status.code(), Some(0));
    let (header, rows) = read_table(&dir.path().join("out/sweep-delta.csv"));
    assert_eq!(header, ["delta", "state", "lower", "upper", "gap", "q_hat", "stderr"]);
    for state in ["1", "2"] {
        let gaps: Vec<f64> = rows
            .iter()
            .filter(|r| r[1] == state)
            .map(|r| r[4].parse().unwrap())
            .collect();
        assert_eq!(gaps.len(), 4);
        assert!(gaps.windows(2).all(|w| w[1] <= w[0]), "{gaps:?}");
    }
}

#[test]
fn bounds_columns_reproduce_from_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(
        dir.path(),
        &format!("{SMALL}\n[sweep]\naxis = \"lambda\"\nvalues = [1e-4, 0.003, 0.05]\n"),
    );
    assert_eq!(run_in(dir.path(), "bounds", &spec, &[]).status.code(), Some(0));
    let (_, rows) = read_table(&dir.path().join("out/bounds.csv"));
    let model = ChannelModel::from_invariant(vec![0.5, 2.0], vec![0.5, 0.5]).unwrap();
    assert_eq!(rows.len(), 6);
    for r in &rows {
        let lambda: f64 = r[0].parse().unwrap();
        let k: usize = r[1].parse::<usize>().unwrap() - 1;
        let p = NetworkParams::new(lambda, 5.0, 3.0, 2.0, 1.0, 0.1, 1.0).unwrap();
        let b = outage_bounds(lambda, k, &p, &model).unwrap();
        assert_eq!(r[3].parse::<f64>().unwrap(), b.lower);
        assert_eq!(r[4].parse::<f64>().unwrap(), b.upper);
    }
}

#[test]
fn csv_is_identical_across_runs_and_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), SMALL);
    let mut outputs = Vec::new();
    for threads in ["1", "3", "1"] {
        let out = run_in(dir.path(), "simulate", &spec, &["--threads", threads]);
        assert_eq!(out.status.code(), Some(0));
        outputs.push(std::fs::read(dir.path().join("out/simulate.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
}

#[test]
fn seed_override_changes_the_estimates() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), SMALL);
    let read = || read_table(&dir.path().join("out/simulate.csv")).1;
    run_in(dir.path(), "simulate", &spec, &[]);
    let a = read();
    run_in(dir.path(), "simulate", &spec, &["--seed", "4"]);
    let b = read();
    assert_ne!(a, b);
    let text = std::fs::read_to_string(dir.path().join("out/simulate.csv")).unwrap();
    assert!(text.contains("# seed: 4"));
}
