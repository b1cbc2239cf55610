//! End-to-end harness runs on a shrunken desk-scale setup.

use forgetting::harness::{read_records, report, run, ExperimentConfig, ExperimentKind, PlotKind, RunStatus};
use forgetting::nn::ArchSpec;

fn small(kind: ExperimentKind, seeds: Vec<u64>, dir: &std::path::Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(kind, seeds, dir.join(kind.name()));
    cfg.arch = ArchSpec::mlp(32, &[16, 16, 16]);
    cfg.data.synthetic.train_per_class = 40;
    cfg.data.synthetic.test_per_class = 20;
    cfg.epochs.task1 = 3;
    cfg.epochs.task2 = 3;
    cfg.probe.freeze_k = vec![0, 1];
    cfg.probe.reset_n = vec![0, 1];
    cfg
}

#[test]
fn anatomy_writes_one_record_per_seed_with_cka_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(ExperimentKind::Anatomy, vec![0, 1], dir.path());
    let records = run(&cfg).unwrap();
    assert_eq!(records.len(), 2);
    for (r, seed) in records.iter().zip([0, 1]) {
        assert_eq!(r.status, RunStatus::Ok, "{:?}", r.error);
        assert_eq!(r.seed, seed);
        assert_eq!(r.stage_cka.len(), 3);
        assert!(r.stage_cka.iter().all(|(_, v)| (0.0..=1.0).contains(v)));
        assert!(r.outcome.arms.iter().any(|a| a.group == "freeze"));
        for file in ["cka.csv", "initial.model", "task1.model", "task2.model"] {
            assert!(cfg.output_dir.join(format!("seed-{seed}")).join(file).exists(), "{file}");
        }
    }
    let stored = read_records(&cfg.output_dir.join("records.jsonl")).unwrap();
    assert_eq!(stored, records);
    assert_eq!(ExperimentConfig::load(&cfg.output_dir.join("config.toml")).unwrap(), cfg);

    let written = report(&cfg.output_dir, &stored, &[PlotKind::Curves, PlotKind::Cka, PlotKind::Sweeps]).unwrap();
    assert!(written.iter().any(|p| p.ends_with("summary.csv")));
    assert!(written.iter().any(|p| p.extension().is_some_and(|e| e == "svg")));
}

#[test]
fn failing_seed_is_recorded_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(ExperimentKind::Anatomy, vec![0], dir.path());
    cfg.optimizer.learning_rate = 1e6;
    let records = run(&cfg).unwrap();
    assert_eq!(records[0].status, RunStatus::Failed);
    assert!(records[0].error.as_deref().is_some_and(|e| !e.is_empty()));
}

#[test]
fn config_hash_tracks_content() {
    let dir = tempfile::tempdir().unwrap();
    let a = small(ExperimentKind::Mitigation, vec![0], dir.path());
    let mut b = a.clone();
    assert_eq!(a.hash().unwrap(), b.hash().unwrap());
    b.mitigation.ewc_lambdas = vec![0.0, 5.0];
    assert_ne!(a.hash().unwrap(), b.hash().unwrap());
    assert_eq!(ExperimentConfig::parse(&a.to_toml().unwrap()).unwrap(), a);
}

#[test]
fn shipped_configs_parse() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert!(n >= ExperimentKind::ALL.len());
}
