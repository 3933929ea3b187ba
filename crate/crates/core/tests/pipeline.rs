mod common;

use abintent_core::pipeline::{files, run_pipeline, StageStatus, STAGES};

fn statuses(m: &abintent_core::pipeline::RunManifest) -> Vec<StageStatus> {
    m.stages.iter().map(|s| s.status).collect()
}

#[test]
fn toy_corpus_runs_all_seven_stages() {
    let dir = tempfile::tempdir().unwrap();
    let config = common::write_toy_inputs(dir.path());
    let m = run_pipeline(&config).unwrap();
    assert!(m.failed().is_none(), "{:?}", m.failed());
    assert_eq!(m.stages.len(), 7);
    let names: Vec<&str> = m.stages.iter().map(|s| s.name.as_str()).collect();
    assert_eq!(names, STAGES);
    assert!(statuses(&m).iter().all(|&s| s == StageStatus::Completed));
    for s in &m.stages {
        for a in &s.artifacts {
            assert!(config.paths.output.join(&a.path).exists(), "{}", a.path.display());
            assert_eq!(a.sha256.len(), 64);
        }
    }
    let scores: Vec<serde_json::Value> = abintent_core::io::read_jsonl(config.paths.output.join(files::SCORES)).unwrap();
    assert_eq!(
        scores.len(),
        m.stage("preprocess").unwrap().summary["segments"].as_u64().unwrap() as usize
    );
    for s in &scores {
        let p = s["product"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&p));
        assert!(s.get("text").is_none());
    }

    // unchanged inputs: nothing recomputed
    let again = run_pipeline(&config).unwrap();
    assert!(statuses(&again).iter().all(|&s| s == StageStatus::Reused));
    assert_eq!(
        m.stages.iter().map(|s| &s.artifacts).collect::<Vec<_>>(),
        again.stages.iter().map(|s| &s.artifacts).collect::<Vec<_>>()
    );

    // losing a downstream artifact reruns only the stage that owns it
    std::fs::remove_file(config.paths.output.join(files::SCORES)).unwrap();
    let resumed = run_pipeline(&config).unwrap();
    let st = statuses(&resumed);
    assert!(st[..6].iter().all(|&s| s == StageStatus::Reused), "{st:?}");
    assert_eq!(st[6], StageStatus::Completed);
    assert_eq!(resumed.artifact(files::SCORES), m.artifact(files::SCORES));
}

#[test]
fn fresh_runs_are_bit_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ca = common::write_toy_inputs(a.path());
    let cb = common::write_toy_inputs(b.path());
    let ma = run_pipeline(&ca).unwrap();
    let mb = run_pipeline(&cb).unwrap();
    for f in [files::LABELS, files::ROUNDS, files::SCORES, files::DOCUMENTS, files::INTENT_MODEL] {
        assert_eq!(ma.artifact(f).unwrap().sha256, mb.artifact(f).unwrap().sha256, "{f}");
    }
    // the abuse checkpoint records its (run-specific) embeddings path
    let load = |c: &abintent_core::config::RunConfig| {
        abintent_core::abuse::AbuseCheckpoint::load(c.paths.output.join(files::ABUSE_MODEL)).unwrap()
    };
    let (ka, kb) = (load(&ca), load(&cb));
    assert_eq!(serde_json::to_string(&ka.model).unwrap(), serde_json::to_string(&kb.model).unwrap());
    assert_eq!(ka.composition, kb.composition);
}

#[test]
fn missing_embeddings_fail_at_expand_verbs() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = common::write_toy_inputs(dir.path());
    config.paths.embeddings = Some(dir.path().join("absent.txt"));
    let m = run_pipeline(&config).unwrap();
    let failed = m.failed().unwrap();
    assert_eq!(failed.name, "expand-verbs");
    assert!(failed.error.as_deref().unwrap().contains("absent.txt"));
    assert_eq!(m.stages.len(), 7);
    let st = statuses(&m);
    assert!(st[..3].iter().all(|&s| s == StageStatus::Completed));
    assert!(st[4..].iter().all(|&s| s == StageStatus::Skipped));
    for f in [files::SEGMENTS, files::PARSES, files::SEED_LABELS] {
        let a = m.artifact(f).unwrap();
        let on_disk = abintent_core::io::file_sha256(config.paths.output.join(f)).unwrap();
        assert_eq!(on_disk, a.sha256);
    }
    assert!(!config.paths.output.join(files::LABELS).exists());
    let saved = abintent_core::pipeline::RunManifest::load(config.paths.output.join("manifest.json")).unwrap();
    assert_eq!(saved, m);
}

#[test]
fn changed_config_reruns_from_the_affected_stage() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = common::write_toy_inputs(dir.path());
    run_pipeline(&config).unwrap();
    config.score.top = 5;
    let m = run_pipeline(&config).unwrap();
    let st = statuses(&m);
    assert!(st[..6].iter().all(|&s| s == StageStatus::Reused), "{st:?}");
    assert_eq!(st[6], StageStatus::Completed);
}

#[test]
fn until_stops_after_the_named_stage() {
    let dir = tempfile::tempdir().unwrap();
    let config = common::write_toy_inputs(dir.path());
    let m = abintent_core::pipeline::run_pipeline_until(&config, Some("seed-label")).unwrap();
    let st = statuses(&m);
    assert!(st[..3].iter().all(|&s| s == StageStatus::Completed), "{st:?}");
    assert!(st[3..].iter().all(|&s| s == StageStatus::Skipped), "{st:?}");
    assert!(m.failed().is_none());
    assert!(abintent_core::pipeline::run_pipeline_until(&config, Some("nonsense")).is_err());

    // a full run afterwards reuses what is already there
    let full = run_pipeline(&config).unwrap();
    let st = statuses(&full);
    assert!(st[..3].iter().all(|&s| s == StageStatus::Reused), "{st:?}");
    assert!(st[3..].iter().all(|&s| s == StageStatus::Completed), "{st:?}");
}
