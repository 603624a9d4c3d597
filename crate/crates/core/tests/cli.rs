use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_dots");

fn dots(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("bench.toml");
    fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

const SMALL: &str = "objective = \"rastrigin\"\ndims = 3\neval_budget = 3000\ninit_points = 30\nrepeats = 3\n";

#[test]
fn run_writes_histories_summary_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let o = dots(&["run", &cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("results");
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    let mut lines = summary.lines();
    assert_eq!(
        lines.next().unwrap(),
        "objective,dims,scenario,variant,repeats,completed,convergence_ratio,median_best,median_evals_to_converge"
    );
    assert!(lines.next().unwrap().starts_with("rastrigin,3,exact,full,3,3,"));
    for seed in 0..3 {
        let h = fs::read_to_string(out.join(format!("history_seed{seed}.csv"))).unwrap();
        assert!(h.starts_with("round,evals_cum,best_value,c_eff,r2\n"));
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "run");

    let o = dots(&["ratio", &out.to_string_lossy()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("/3"));
}

#[test]
fn config_errors_exit_with_code_two_and_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{SMALL}chainz = 4\n"));
    let o = dots(&["run", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("chainz"), "{}", stderr(&o));

    let o = dots(&["run", &dir.path().join("missing.toml").to_string_lossy()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn run_through_an_external_evaluator() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let local = dir.path().join("local");
    let remote = dir.path().join("remote");
    let o = dots(&["run", &cfg, "--output", &local.to_string_lossy()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ext = format!("cmd:{BIN} serve rastrigin --dims 3");
    let o = dots(&["run", &cfg, "--external", &ext, "--output", &remote.to_string_lossy()]);
    assert!(o.status.success(), "{}", stderr(&o));
    for seed in 0..3 {
        let name = format!("history_seed{seed}.csv");
        assert_eq!(
            fs::read_to_string(local.join(&name)).unwrap(),
            fs::read_to_string(remote.join(&name)).unwrap()
        );
    }
}

#[test]
fn check_evaluator_accepts_the_builtin_server() {
    let ext = format!("cmd:{BIN} serve ackley --dims 4");
    let o = dots(&["check-evaluator", &ext, "--dims", "4"]);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("evaluator conforms"));
}

#[test]
fn check_evaluator_flags_a_broken_evaluator() {
    // `cat` echoes the handshake but then echoes requests instead of answering.
    let o = dots(&["check-evaluator", "cmd:cat", "--dims", "2", "--timeout-ms", "2000"]);
    assert_eq!(o.status.code(), Some(3), "{}", stdout(&o));
    assert!(stdout(&o).contains("FAIL"));

    let o = dots(&["check-evaluator", "cmd:true", "--dims", "2", "--timeout-ms", "2000"]);
    assert_eq!(o.status.code(), Some(3), "{}", stdout(&o));
}

#[test]
fn ablate_emits_one_row_per_variant() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let o = dots(&["ablate", &cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = fs::read_to_string(dir.path().join("results/ablation.csv")).unwrap();
    let variants: Vec<&str> = table.lines().skip(1).map(|l| l.split(',').nth(4).unwrap()).collect();
    assert_eq!(
        variants,
        ["full", "no-top-visit", "no-local-backprop", "no-adaptive-weight", "greedy"]
    );
}
