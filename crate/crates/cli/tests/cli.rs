use std::path::Path;
use std::process::{Command, Output};

fn palm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_palm")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("exp.toml");
    std::fs::write(&path, body).unwrap();
    path.display().to_string()
}

const SMALL: &str = "domain = \"taxi-small\"\nhierarchy = \"builtin:et\"\nalgorithm = \"palm\"\nepisodes = 5\ntrials = 2\noutput = \"out\"\n";

#[test]
fn run_aggregate_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    let out = palm(&["run", &config]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let results = dir.path().join("out");
    assert!(results.join("trial_000.csv").is_file() && results.join("trial_001.csv").is_file());

    let agg = dir.path().join("agg.csv");
    let pattern = format!("{}/trial_*.csv", results.display());
    assert_eq!(code(&palm(&["aggregate", &pattern, "-o", agg.to_str().unwrap()])), 0);
    let text = std::fs::read_to_string(&agg).unwrap();
    assert!(text.starts_with("episode,trials,cum_steps_mean"));
    assert_eq!(text.lines().count(), 6);

    let model = dir.path().join("nav.model");
    let store = results.join("models/trial_000");
    let out = palm(&["export-model", store.to_str().unwrap(), "Navigate", "-o", model.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert!(model.is_file());
}

#[test]
fn overrides_apply() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    let other = dir.path().join("elsewhere");
    let out = palm(&["run", &config, "--output", other.to_str().unwrap(), "--trials", "1", "--no-gating"]);
    assert_eq!(code(&out), 0);
    assert!(other.join("trial_000.csv").is_file());
    assert!(!other.join("trial_001.csv").exists());
}

#[test]
fn config_errors_and_missing_files_exit_differently() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), &SMALL.replace("episodes = 5", "episodes = 5\ngamma = 1.5"));
    let out = palm(&["run", &bad]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("gamma"));

    let missing = dir.path().join("absent.toml");
    assert_eq!(code(&palm(&["run", missing.to_str().unwrap()])), 3);

    let no_hier = write_config(dir.path(), &SMALL.replace("builtin:et", "nowhere.hier"));
    assert_eq!(code(&palm(&["run", &no_hier])), 3);

    let store = dir.path().join("no-store");
    let out = palm(&["export-model", store.to_str().unwrap(), "Navigate", "-o", "x.model"]);
    assert_eq!(code(&out), 3);

    let mismatched = dir.path().join("a.csv");
    std::fs::write(&mismatched, "x,y\n1,2\n").unwrap();
    let out = palm(&["aggregate", mismatched.to_str().unwrap(), "-o", dir.path().join("o.csv").to_str().unwrap()]);
    assert_eq!(code(&out), 4);
}

#[test]
fn validate_accepts_shipped_hierarchies() {
    for (hier, domain) in [("builtin:et", "taxi-small"), ("builtin:ac", "cleanup-small"), ("builtin:ec", "cleanup-small")] {
        let out = palm(&["validate", hier, domain, "--samples", "500"]);
        assert_eq!(code(&out), 0, "{hier}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let out = palm(&["validate", "builtin:et", "cleanup-small"]);
    assert_eq!(code(&out), 2);
}
