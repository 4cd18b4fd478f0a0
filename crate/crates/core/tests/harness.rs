use quasispde::harness::{execute, Command, ExperimentConfig, ScenarioOutcome};

fn config(scenario: &str, out: &std::path::Path) -> ExperimentConfig {
    let mut c = ExperimentConfig::preset(scenario).unwrap();
    c.run.out = out.to_path_buf();
    c.run.replicas = 4;
    c
}

#[test]
fn aggregates_are_recomputable_from_records() {
    let tmp = tempfile::tempdir().unwrap();
    let outcome = execute(Command::Decompose, &config("quasi", tmp.path()), None).unwrap();
    assert_eq!(outcome.replicas.len(), 4);
    assert_eq!(outcome.aggregates, outcome.recomputed_aggregates());
    let residual = &outcome.aggregates["residual_sup"];
    assert_eq!(residual.count, 4);
    let max = outcome
        .replicas
        .iter()
        .map(|r| r.metrics["residual_sup"])
        .fold(f64::MIN, f64::max);
    assert_eq!(residual.max, max);
}

#[test]
fn outcome_round_trips_through_run_json() {
    let tmp = tempfile::tempdir().unwrap();
    let outcome = execute(Command::Simulate, &config("linearq", tmp.path()), None).unwrap();
    let stored: ScenarioOutcome =
        serde_json::from_slice(&std::fs::read(tmp.path().join("run.json")).unwrap()).unwrap();
    assert_eq!(stored.aggregates, stored.recomputed_aggregates());
    assert_eq!(stored.replicas, outcome.replicas);
    assert_eq!(stored.config_hash, outcome.config_hash);
}

#[test]
fn noise_free_decomposition_has_zero_residual() {
    let tmp = tempfile::tempdir().unwrap();
    let outcome = execute(Command::Decompose, &config("heat", tmp.path()), None).unwrap();
    for r in &outcome.replicas {
        assert_eq!(r.metrics["residual_sup"], 0.0);
        assert_eq!(r.metrics["sup_z"], 0.0);
    }
    assert!(outcome.pass);
}

#[test]
fn worker_count_does_not_change_results() {
    let tmp = tempfile::tempdir().unwrap();
    let mut one = config("quasi", &tmp.path().join("one"));
    one.run.workers = 1;
    let mut many = config("quasi", &tmp.path().join("many"));
    many.run.workers = 4;
    let a = execute(Command::Decompose, &one, None).unwrap();
    let b = execute(Command::Decompose, &many, None).unwrap();
    assert_eq!(a.replicas, b.replicas);
}
