use std::path::{Path, PathBuf};
use std::sync::Arc;

use palm::exec::{ExecConfig, ExecutionContext};
use palm::harness::{
    aggregate, expand_glob, export_model, make_task, mean_ci, run, run_trial, write_trial_csv, Algorithm,
    ExperimentConfig, CSV_HEADER,
};
use palm::lamdp::load_hierarchy;
use palm::{Error, Model, SeededRng};

fn et(domain: &str, episodes: usize, trials: usize, out: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(domain, Some("builtin:et"), Algorithm::Palm, episodes);
    c.trials = trials;
    c.output = out.to_path_buf();
    c
}

fn rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(|r| r.unwrap()).collect()
}

#[test]
fn one_csv_per_trial_with_one_row_per_episode() {
    let dir = tempfile::tempdir().unwrap();
    let files = run(&et("taxi-classic", 100, 20, dir.path())).unwrap();
    assert_eq!(files.len(), 20);
    for f in &files {
        let mut r = csv::Reader::from_path(f).unwrap();
        assert!(r.headers().unwrap().iter().eq(CSV_HEADER));
        let rows = rows(f);
        assert_eq!(rows.len(), 100);
        let mut cum = 0;
        for (k, row) in rows.iter().enumerate() {
            assert_eq!(row[0].parse::<usize>().unwrap(), k);
            cum += row[1].parse::<usize>().unwrap();
            assert_eq!(row[2].parse::<usize>().unwrap(), cum);
        }
    }
    let store = dir.path().join("models").join("trial_000");
    for name in ["Root", "Get", "Put", "Navigate"] {
        assert!(store.join(format!("{name}.model")).is_file());
    }
}

#[test]
fn reruns_reproduce_every_column_but_wall_time() {
    let strip = |p: &PathBuf| -> Vec<Vec<String>> {
        rows(p)
            .iter()
            .map(|r| r.iter().enumerate().filter(|(i, _)| *i != 5).map(|(_, v)| v.to_string()).collect())
            .collect()
    };
    for alg in [Algorithm::Palm, Algorithm::RmaxFlat, Algorithm::Qlearning] {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let mut c = et("taxi-classic", 15, 3, a.path());
        c.algorithm = alg;
        c.seed = 11;
        let first = run(&c).unwrap();
        c.output = b.path().to_path_buf();
        let second = run(&c).unwrap();
        for (x, y) in first.iter().zip(&second) {
            assert_eq!(strip(x), strip(y), "{alg}");
        }
    }
}

#[test]
fn confidence_interval_arithmetic() {
    let (m, h) = mean_ci(&[10.0, 20.0]);
    assert_eq!(m, 15.0);
    assert!((h - 1.96 * 5.0).abs() < 1e-12);
    assert_eq!(mean_ci(&[7.0, 7.0, 7.0]), (7.0, 0.0));
    assert_eq!(mean_ci(&[3.0]), (3.0, 0.0));
}

#[test]
fn aggregation_is_monotone_and_checks_its_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = et("taxi-small", 12, 4, dir.path());
    c.seed = 5;
    run(&c).unwrap();
    let files = expand_glob(&format!("{}/trial_*.csv", dir.path().display())).unwrap();
    assert_eq!(files.len(), 4);
    let agg = aggregate(&files).unwrap();
    assert_eq!(agg.len(), 12);
    assert!(agg.iter().all(|r| r.trials == 4));
    assert!(agg.windows(2).all(|w| w[1].cum_steps_mean >= w[0].cum_steps_mean));

    let same = aggregate(&[files[0].clone(), files[0].clone()]).unwrap();
    assert!(same.iter().all(|r| r.cum_steps_ci == 0.0 && r.cum_reward_ci == 0.0));

    let short = dir.path().join("short.csv");
    let records = run_trial(&c, 0).unwrap().records;
    write_trial_csv(&short, &records[..5]).unwrap();
    assert!(matches!(aggregate(&[files[0].clone(), short]), Err(Error::Aggregation(_))));

    let foreign = dir.path().join("foreign.csv");
    std::fs::write(&foreign, "episode,steps\n0,3\n").unwrap();
    assert!(matches!(aggregate(&[foreign]), Err(Error::Aggregation(_))));
    assert!(matches!(aggregate(&[]), Err(Error::Aggregation(_))));
}

#[test]
fn config_errors_name_the_field() {
    let base = "domain = \"taxi-small\"\nhierarchy = \"builtin:et\"\nalgorithm = \"palm\"\nepisodes = 10\n";
    let c: ExperimentConfig = base.parse().unwrap();
    assert_eq!((c.trials, c.gamma, c.episode_budget), (20, 0.95, 2000));
    for (extra, field) in [
        ("gamma = 1.0\n", "gamma"),
        ("trials = 0\n", "trials"),
        ("m = 0\n", "m"),
        ("epsilon = 2.0\n", "epsilon"),
        ("alpha = 0.0\n", "alpha"),
    ] {
        match format!("{base}{extra}").parse::<ExperimentConfig>() {
            Err(Error::Config(msg)) => assert!(msg.contains(field), "{msg}"),
            other => panic!("{extra}: {other:?}"),
        }
    }
    let err = format!("{base}colour = 1\n").parse::<ExperimentConfig>().unwrap_err();
    assert!(matches!(&err, Error::Config(msg) if msg.contains("colour")));
    let err = "domain = \"taxi-small\"\nalgorithm = \"palm\"\nepisodes = 3\n".parse::<ExperimentConfig>().unwrap_err();
    assert!(matches!(&err, Error::Config(msg) if msg.contains("hierarchy")));
    assert_eq!(err.exit_code(), 2);

    let missing = ExperimentConfig::load(Path::new("/nonexistent/experiment.toml")).unwrap_err();
    assert!(matches!(missing, Error::MissingFile { .. }));
    assert_ne!(missing.exit_code(), err.exit_code());
}

#[test]
fn relative_paths_resolve_against_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.toml");
    std::fs::write(
        &path,
        "domain = \"taxi-small\"\nhierarchy = \"hier/et.hier\"\nalgorithm = \"palm\"\nepisodes = 2\noutput = \"out\"\n",
    )
    .unwrap();
    let c = ExperimentConfig::load(&path).unwrap();
    assert_eq!(c.hierarchy.unwrap(), dir.path().join("hier/et.hier"));
    assert_eq!(c.output, dir.path().join("out"));
    assert_eq!(c.domain, "taxi-small");
}

#[test]
fn never_executed_subtask_exports_an_empty_table() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = et("taxi-small", 1, 1, dir.path());
    c.episode_budget = 1;
    run(&c).unwrap();
    let out = dir.path().join("Put.model");
    export_model(&c.model_store(0), "Put", &out).unwrap();
    let model = Model::deserialize(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(model.lamdp(), "Put");
    assert_eq!(model.row_count(), 0);

    assert!(matches!(export_model(&c.model_store(0), "Fly", &out), Err(Error::Config(_))));
    assert!(matches!(
        export_model(&dir.path().join("missing"), "Put", &out),
        Err(Error::MissingFile { .. })
    ));
}

#[test]
fn exported_navigate_resumes_learning_when_attached_unfrozen() {
    let dir = tempfile::tempdir().unwrap();
    let c = et("taxi-classic", 20, 1, dir.path());
    run(&c).unwrap();
    let out = dir.path().join("Navigate.model");
    export_model(&c.model_store(0), "Navigate", &out).unwrap();
    let exported = Model::deserialize(&std::fs::read_to_string(&out).unwrap()).unwrap();

    let h = load_hierarchy(Path::new("builtin:et")).unwrap();
    let mut rng = SeededRng::new(3);
    let task = make_task("taxi-large", &mut rng).unwrap();
    let mut ctx = ExecutionContext::new(&h, Arc::clone(&task.env), ExecConfig::default(), rng.split()).unwrap();
    ctx.attach_transferred_model("Navigate", exported.clone(), false).unwrap();
    ctx.run_episode(&task.start).unwrap();
    let after = ctx.model("Navigate").unwrap();
    assert!(!after.is_frozen());
    assert!(after.row_count() > exported.row_count());
}
