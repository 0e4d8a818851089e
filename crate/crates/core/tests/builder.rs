use std::collections::BTreeSet;

use views_core::builder::{build_captions, build_entities, run_qc, BuilderConfig};
use views_core::corpus::{save_corpus_with_sidecars, split_random, Corpus, Split};
use views_core::dates::contains_date;
use views_core::synth::{SynthConfig, SynthWorld};

fn world() -> SynthWorld {
    SynthWorld::generate(SynthConfig {
        samples: 60,
        ..Default::default()
    })
    .unwrap()
}

fn build(w: &SynthWorld) -> Corpus {
    let llm = w.llm();
    let cfg = BuilderConfig::default();
    let (captioned, report) = build_captions(&w.raw_corpus().unwrap(), &llm, &cfg).unwrap();
    assert!(report.excluded.is_empty());
    let with_entities = build_entities(&captioned, &llm, &cfg).unwrap();
    let split = split_random(&with_entities, 10, 10, 5).unwrap();
    with_entities.with_split(&split).unwrap()
}

#[test]
fn builder_reproduces_generator_truth() {
    let w = world();
    let built = build(&w);
    let truth = w.corpus().unwrap();
    for (b, t) in built.samples().iter().zip(truth.samples()) {
        assert_eq!(b.bullet_summaries, t.bullet_summaries);
        assert_eq!(b.caption.as_ref().unwrap().text, t.caption.as_ref().unwrap().text, "{}", b.id);
        assert_eq!(b.entities, t.entities);
        assert!(!contains_date(&b.caption.as_ref().unwrap().text));
    }
    // Some replies really did carry dates that had to be removed.
    assert!(w.events.iter().any(|e| {
        let s = w.raw_corpus().unwrap();
        contains_date(&s.get(&e.sample_id).unwrap().article_text)
    }));
}

#[test]
fn mock_runs_are_byte_identical() {
    let w = world();
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = Vec::new();
    for run in 0..2 {
        let path = dir.path().join(format!("run{run}/corpus.jsonl"));
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        save_corpus_with_sidecars(&build(&w), &path, "features").unwrap();
        bytes.push(std::fs::read(&path).unwrap());
    }
    assert_eq!(bytes[0], bytes[1]);
}

#[test]
fn qc_queues_exactly_flagged_eval_samples() {
    let w = world();
    let built = build(&w);
    let out = run_qc(&built, &w.llm(), &BuilderConfig::default()).unwrap();
    let queued: BTreeSet<String> = out.queue.entries().iter().map(|e| e.sample_id.clone()).collect();
    let expected: BTreeSet<String> = built
        .samples()
        .iter()
        .filter(|s| matches!(s.split, Some(Split::Dev) | Some(Split::Test)))
        .filter(|s| w.event(&s.id).unwrap().rater_rejects)
        .map(|s| s.id.clone())
        .collect();
    assert!(!expected.is_empty());
    assert_eq!(queued, expected);
}
