use super::*;
use crate::data::SyntheticSpec;
use crate::error::FedPaeError;
use crate::learners::{Architecture, LearnerSpec};
use crate::moo::NsgaConfig;
use crate::selection::{exhaustive_oracle, StorageMode, VotingRule};

fn small_config() -> ExperimentConfig {
    let slot = |a: Architecture| LearnerSpec {
        max_epochs: 40,
        patience: 10,
        ..LearnerSpec::new(a, 0)
    };
    ExperimentConfig {
        master_seed: 3,
        dataset: DatasetSource::Synthetic(SyntheticSpec {
            n_classes: 3,
            n_features: 4,
            n_samples: 360,
            class_separation: 3.0,
            noise_scale: 1.0,
            seed: 0,
        }),
        alpha: 0.5,
        n_clients: 4,
        min_client_samples: 20,
        slots: vec![
            slot(Architecture::LogisticRegression),
            slot(Architecture::NearestCentroid),
            slot(Architecture::StumpForest { n_stumps: 10 }),
        ],
        selection: crate::selection::SelectionConfig {
            ensemble_size: 3,
            ..Default::default()
        },
        nsga: NsgaConfig {
            population_size: 20,
            generations: 10,
            ..NsgaConfig::default()
        },
        fedavg: FedAvgSettings {
            architecture: Architecture::LogisticRegression,
            rounds: 50,
            ..FedAvgSettings::default()
        },
        ..ExperimentConfig::default()
    }
}

#[test]
fn separable_data_gives_perfect_accuracy_everywhere() {
    let mut c = small_config();
    c.n_clients = 2;
    c.alpha = 1e9;
    c.fedavg.rounds = 500;
    c.dataset = DatasetSource::Synthetic(SyntheticSpec {
        n_classes: 3,
        n_features: 4,
        n_samples: 300,
        class_separation: 10.0,
        noise_scale: 0.0,
        seed: 0,
    });
    let out = run_experiment::<f64>(&c).unwrap();
    for m in &out.report.methods {
        assert!(
            m.per_client.iter().all(|&a| a == 1.0),
            "{:?}: {:?}",
            m.method,
            m.per_client
        );
    }
}

#[test]
fn runs_are_deterministic_and_reuse_models() {
    let c = small_config();
    let a = run_experiment::<f64>(&c).unwrap();
    let b = run_experiment::<f64>(&c).unwrap();
    assert_eq!(report_json(&a.report), report_json(&b.report));
    assert_eq!(a.trace_jsonl, b.trace_jsonl);
    let r = &a.report;
    assert_eq!(r.model_cache.trained, c.n_clients * c.slots.len());
    assert!(r.model_cache.reused >= 3 * r.model_cache.trained);
    assert!(r.fedpae.safeguard_holds);

    let mut other = c.clone();
    other.master_seed = 4;
    let d = run_experiment::<f64>(&other).unwrap();
    assert_ne!(report_json(&a.report), report_json(&d.report));
}

#[test]
fn report_arithmetic_is_recomputable() {
    let out = run_experiment::<f64>(&small_config()).unwrap();
    let text = report_json(&out.report);
    let parsed: ExperimentReport = serde_json::from_str(&text).unwrap();
    let base = parsed.method(Method::LocalEnsemble).unwrap().per_client.clone();
    for m in &parsed.methods {
        let s = Summary::of(&m.per_client);
        assert!((s.mean - m.summary.mean).abs() <= 1e-5 * s.mean.abs().max(1e-12));
        assert!((s.ci95 - 1.96 * s.sd / (m.per_client.len() as f64).sqrt()).abs() < 1e-12);
        if m.method == Method::LocalEnsemble {
            continue;
        }
        for (c, change) in parsed.relative_changes(m.method).into_iter().enumerate() {
            match change {
                Some(v) => {
                    let want = (m.per_client[c] - base[c]) / base[c];
                    assert!((v - want).abs() <= 1e-5 * want.abs().max(1e-6), "{v} vs {want}");
                }
                None => assert_eq!(base[c], 0.0),
            }
        }
    }
}

#[test]
fn single_slot_local_baselines_coincide() {
    let mut c = small_config();
    c.slots.truncate(1);
    c.selection.ensemble_size = 1;
    let out = run_experiment::<f64>(&c).unwrap();
    let r = &out.report;
    assert_eq!(
        r.method(Method::LocalSingle).unwrap().per_client,
        r.method(Method::LocalEnsemble).unwrap().per_client
    );
}

#[test]
fn storage_modes_agree() {
    let mut c = small_config();
    let full = run_experiment::<f64>(&c).unwrap();
    c.storage_mode = StorageMode::PredictionsOnly;
    let compact = run_experiment::<f64>(&c).unwrap();
    assert_eq!(full.report.methods, compact.report.methods);
    assert_eq!(
        full.report.fedpae.chosen_model_ids,
        compact.report.fedpae.chosen_model_ids
    );
}

#[test]
fn emitted_files_are_complete_and_stable() {
    let out = run_experiment::<f64>(&small_config()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    emit_report(&out, dir.path()).unwrap();
    let read = |p: &str| std::fs::read(dir.path().join(p)).unwrap();
    let first: Vec<Vec<u8>> = ["results.json", "results.csv", "relative_change.csv", "trace.jsonl"]
        .iter()
        .map(|p| read(p))
        .collect();
    for bytes in &first {
        assert_eq!(bytes.last(), Some(&b'\n'));
    }
    let csv = String::from_utf8(first[1].clone()).unwrap();
    assert_eq!(csv.lines().count(), 1 + out.report.methods.len());
    assert!(csv.starts_with("method,alpha,"));
    assert_eq!(
        String::from_utf8(first[2].clone()).unwrap().lines().count(),
        1 + out.report.relative_change.len()
    );
    for c in 0..4 {
        let front = std::fs::read_to_string(dir.path().join(format!("pareto/client_{c}.jsonl"))).unwrap();
        assert_eq!(front.lines().count(), out.report.fedpae.pf_size[c]);
    }
    emit_report(&out, dir.path()).unwrap();
    for (p, bytes) in ["results.json", "results.csv", "relative_change.csv", "trace.jsonl"]
        .iter()
        .zip(&first)
    {
        assert_eq!(&read(p), bytes, "{p} changed on rewrite");
    }
    let leftovers = std::fs::read_dir(dir.path())
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().ends_with(".tmp"))
        .count();
    assert_eq!(leftovers, 0);
    let back = read_report(&dir.path().join("results.json")).unwrap();
    assert_eq!(back.n_clients, 4);
}

#[test]
fn unwritable_output_is_an_io_error() {
    let out = run_experiment::<f64>(&small_config()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, b"x").unwrap();
    let err = emit_report(&out, &blocker.join("results")).unwrap_err();
    assert!(matches!(err, FedPaeError::Io { .. }), "{err}");
}

#[test]
fn bench_directories_feed_the_oracle() {
    let out = run_experiment::<f64>(&small_config()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let snap = &out.benches[1];
    write_bench_dir(dir.path(), snap).unwrap();
    let (manifest, matrix) = read_bench_dir::<f64>(dir.path()).unwrap();
    assert_eq!(matrix, snap.matrix);
    assert_eq!(manifest.models, snap.descriptors);
    let is_local: Vec<bool> = manifest.models.iter().map(|d| d.is_local).collect();
    let oracle = exhaustive_oracle(&matrix, &is_local, 3, VotingRule::Soft).unwrap();
    assert!(oracle.val_accuracy >= manifest.val_accuracy);
}

#[test]
fn sweep_grid_has_a_row_per_method_and_alpha() {
    let mut runs = Vec::new();
    for alpha in [0.3, 0.5] {
        let mut c = small_config();
        c.alpha = alpha;
        c.baselines = vec![Method::LocalEnsemble];
        runs.push((format!("alpha_{alpha}"), run_experiment::<f64>(&c).unwrap()));
    }
    let dir = tempfile::tempdir().unwrap();
    emit_sweep(&runs, dir.path()).unwrap();
    let grid = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert_eq!(grid.lines().count(), 1 + 2 * 2);
    assert_eq!(find_reports(dir.path()).unwrap().len(), 2);
}

#[test]
fn f32_pipeline_runs() {
    let out = run_experiment::<f32>(&small_config()).unwrap();
    assert!(out.report.fedpae.safeguard_holds);
}

#[test]
fn cost_estimate_uses_run_dimensions() {
    let out = run_experiment::<f64>(&small_config()).unwrap();
    let cost = &out.report.cost;
    assert_eq!(cost.params.n_clients, 4.0);
    assert_eq!(cost.params.slots.len(), 3);
    assert_eq!(estimate_flops(&cost.params).unwrap(), cost.fedpae.total);
    assert!(cost.fedavg_estimate.unwrap() > 0.0);
}
