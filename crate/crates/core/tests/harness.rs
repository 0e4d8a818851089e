use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use chrono::NaiveDate;
use views_core::captioner::{load_captions, AblationConfig};
use views_core::corpus::{split_by_date, split_random, Split};
use views_core::harness::{
    run_ablation_table, run_ke_studies, run_pipeline, run_time_generalization, run_with, Experiment,
    ExperimentReport, ExperimentSpec, KeBackendSpec, StageSpec, KE_SINGLE,
};
use views_core::knowledge::MockKb;
use views_core::llm::{Fallback, LlmClient, MockLlm};
use views_core::synth::{SynthConfig, SynthProfile, SynthWorld};
use views_core::train::ModelConfig;
use views_core::Error;

fn world(profile: SynthProfile) -> SynthWorld {
    SynthWorld::generate(SynthConfig {
        samples: 80,
        profile,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn small_stage(epochs: usize, max_target_tokens: usize) -> StageSpec {
    let mut s = StageSpec::ep_default();
    s.model = ModelConfig {
        width: 16,
        heads: 2,
        ffn_hidden: 32,
        encoder_layers: 1,
        decoder_layers: 1,
        output_init_std: 0.01,
    };
    s.train.epochs = epochs;
    s.train.max_target_tokens = max_target_tokens;
    s
}

fn spec(dir: &Path) -> ExperimentSpec {
    let mut spec = ExperimentSpec::new("synthetic", dir, KeBackendSpec::Mock { kb: "synthetic".into() });
    spec.ep = small_stage(2, 32);
    spec.cm = small_stage(2, 48);
    spec
}

fn experiment(w: &SynthWorld, spec: ExperimentSpec, backend: Arc<dyn LlmClient>) -> Experiment {
    let corpus = w.corpus().unwrap();
    let split = split_random(&corpus, 10, 10, 1).unwrap();
    Experiment::new(spec, corpus, split, backend, Arc::new(w.gazetteer())).unwrap()
}

fn kb(w: &SynthWorld) -> Arc<dyn LlmClient> {
    Arc::new(MockKb::new(w.kb()))
}

#[test]
fn pipeline_fills_every_cell_and_resumes_from_cache() {
    let w = world(SynthProfile::Informative);
    let dir = tempfile::tempdir().unwrap();
    let exp = experiment(&w, spec(dir.path()), kb(&w));
    let t = Instant::now();
    let report = run_pipeline(&exp).unwrap();
    let fresh = t.elapsed();
    assert_eq!(report.cells.len(), 4);
    for cell in &report.cells {
        assert_eq!(cell.split, Split::Test);
        assert!(cell.checkpoint.is_file(), "{}", cell.checkpoint.display());
        assert!(cell.predictions.is_file());
        assert_eq!(cell.metrics.n_samples, 10);
    }
    for f in ["ep.json", "entities.jsonl", "context.jsonl", "vi.jsonl", "report.json"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let saved = ExperimentReport::load(&dir.path().join("report.json")).unwrap();
    assert_eq!(saved.cells, report.cells);

    std::fs::remove_file(dir.path().join("report.json")).unwrap();
    let t = Instant::now();
    let again = run_pipeline(&exp).unwrap();
    let cached = t.elapsed();
    assert_eq!(again.cells, report.cells);
    assert!(
        cached.as_secs_f64() < 0.1 * fresh.as_secs_f64(),
        "cached rerun took {cached:?} against {fresh:?}"
    );
}

#[test]
fn same_seed_gives_byte_identical_predictions() {
    let w = world(SynthProfile::Informative);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [a.path(), b.path()] {
        run_with(&experiment(&w, spec(d), kb(&w)), &[AblationConfig::FULL]).unwrap();
    }
    for f in ["entities.jsonl", "vi.jsonl", "preds_full.jsonl"] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn failed_stage_is_recorded_and_earlier_artifacts_kept() {
    let w = world(SynthProfile::Informative);
    let dir = tempfile::tempdir().unwrap();
    let exp = experiment(&w, spec(dir.path()), Arc::new(MockLlm::new(Fallback::Fail)));
    let e = run_pipeline(&exp).unwrap_err();
    assert!(matches!(&e, Error::Stage { stage, .. } if stage == "ke-extract"), "{e}");
    let report = ExperimentReport::load(&dir.path().join("report.json")).unwrap();
    assert_eq!(report.failed_stage.as_deref(), Some("ke-extract"));
    assert!(report.cells.is_empty());
    assert!(dir.path().join("ep.json").is_file());
    assert!(dir.path().join("entities.jsonl").is_file());
}

#[test]
fn missing_inputs_fail_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = spec(dir.path());
    s.corpus = dir.path().join("absent.jsonl");
    assert!(matches!(Experiment::from_spec(s), Err(Error::Argument(_))));
    assert!(std::fs::read_dir(dir.path()).unwrap().next().is_none());
}

#[test]
fn oracle_mode_writes_its_own_artifacts() {
    let w = world(SynthProfile::Informative);
    let dir = tempfile::tempdir().unwrap();
    let mut s = spec(dir.path());
    s.oracle_vi = true;
    let exp = experiment(&w, s, kb(&w));
    let report = run_with(&exp, &[AblationConfig::FULL]).unwrap();
    assert_eq!(report.cells.len(), 1);
    assert!(dir.path().join("oracle/vi.jsonl").is_file());
    assert!(dir.path().join("report_oracle.json").is_file());
    assert!(!dir.path().join("ep.json").exists());
}

#[test]
fn time_split_checks_cutoff_and_leakage() {
    let w = world(SynthProfile::Informative);
    let corpus = w.corpus().unwrap();
    let dir = tempfile::tempdir().unwrap();

    let outside = NaiveDate::from_ymd_opt(2030, 1, 1).unwrap();
    assert!(matches!(split_by_date(&corpus, outside), Err(Error::Argument(_))) || {
        let s = split_by_date(&corpus, outside).unwrap();
        let exp = Experiment::new(spec(dir.path()), corpus.clone(), s, kb(&w), Arc::new(w.gazetteer())).unwrap();
        matches!(run_time_generalization(&exp), Err(Error::Argument(_)))
    });

    let cutoff = NaiveDate::from_ymd_opt(2017, 1, 1).unwrap();
    let mut leaky = split_by_date(&corpus, cutoff).unwrap();
    let moved = leaky.train_ids.pop().unwrap();
    leaky.test_ids.push(moved);
    let exp = Experiment::new(spec(dir.path()), corpus, leaky, kb(&w), Arc::new(w.gazetteer())).unwrap();
    assert!(matches!(run_time_generalization(&exp), Err(Error::Integrity(_))));
    assert!(!dir.path().join("ep.json").exists(), "nothing may train on a leaky split");
}

#[test]
fn ke_study_rows_follow_config_and_carry_prompt_hashes() {
    let w = world(SynthProfile::Informative);
    let dir = tempfile::tempdir().unwrap();
    let mut s = spec(dir.path());
    s.ke.single_stage = false;
    let exp = experiment(&w, s, kb(&w));
    let report = run_ke_studies(&exp, None).unwrap();
    assert_eq!(report.rows.len(), 2);
    assert!(report.row(KE_SINGLE).is_none());
    for row in &report.rows {
        assert_eq!(row.prompt_hashes.len() + row.empty_contexts, report.sample_ids.len());
        assert!(row.prompt_hashes.iter().all(|h| h.len() == 64));
    }
    assert_eq!(report.recall_sweep.len(), 5);
}

#[test]
fn uninformative_corpus_passes_without_strict() {
    let w = world(SynthProfile::Noise);
    let dir = tempfile::tempdir().unwrap();
    let exp = experiment(&w, spec(dir.path()), kb(&w));
    assert!(!exp.spec.strict);
    let (table, _) = run_ablation_table(&exp).unwrap();
    assert_eq!(table.rows.len(), 4);
    let ciders: Vec<f64> = table.rows.iter().map(|(_, m)| m.cider).collect();
    let spread = ciders.iter().cloned().fold(f64::MIN, f64::max) - ciders.iter().cloned().fold(f64::MAX, f64::min);
    // Captions ignore VI, so no channel should move the score much.
    assert!(spread < 25.0, "{ciders:?}");
    assert!(dir.path().join("ablation.txt").is_file());
}

#[test]
fn report_cells_are_recomputable_from_files() {
    let w = world(SynthProfile::Informative);
    let dir = tempfile::tempdir().unwrap();
    let exp = experiment(&w, spec(dir.path()), kb(&w));
    let report = run_with(&exp, &[AblationConfig::NO_VI]).unwrap();
    let cell = &report.cells[0];
    let preds = load_captions(&cell.predictions).unwrap();
    let ids = exp.split.ids(Split::Test);
    let p: Vec<String> = ids
        .iter()
        .map(|id| preds.iter().find(|r| &r.sample_id == id).unwrap().text.clone())
        .collect();
    let r: Vec<String> = ids
        .iter()
        .map(|id| exp.corpus.get(id).unwrap().caption.as_ref().unwrap().text.clone())
        .collect();
    let again = views_core::metrics::evaluate(&p, &r, exp.extractor.as_ref(), &Default::default()).unwrap();
    assert_eq!(again, cell.metrics);
}
