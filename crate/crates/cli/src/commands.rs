use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, Context, Result};
use views_core::builder::{build_captions, build_entities, review_session, run_qc, BuilderConfig, CorrectionQueue};
use views_core::captioner::{
    caption_vocab, generate_all, load_captions, load_vi, save_captions, save_vi, train_cm, vi_index, AblationConfig,
    Captioner,
};
use views_core::corpus::{load_corpus, save_corpus, CaptionRecord, Corpus, Split, VideoSample, SCHEMA_V1};
use views_core::harness::{
    contexts_for, ep_stage, join_vi, load_gazetteer, make_split, run_ablation_table, run_ke_studies, run_pipeline,
    run_seed_sweep, run_time_generalization, save_gazetteer, Experiment, ExperimentSpec, KeBackendSpec, SplitSpec,
};
use views_core::knowledge::{load_contexts, save_contexts, save_kb, MockKb};
use views_core::llm::{write_cassette, HttpLlm, LlmClient, MockLlm, RecordingLlm, ReplayLlm};
use views_core::metrics::{evaluate, EntityExtractor, EntityMatchConfig, Gazetteer, LlmExtractor};
use views_core::perceiver::{decode_samples, load_entity_records, save_entity_records, EntityPerceiver};
use views_core::synth::{SynthConfig, SynthProfile, SynthWorld};

use crate::{
    AblationArgs, BackendArgs, BackendKind, BuildArgs, BuildCmd, CmCmd, Command, CorpusCmd, EpCmd, EvalArgs,
    ExtractorKind, KeCmd, KeStudiesArgs, ProfileName, RunArgs, SeedsArgs, SplitArgs, SynthArgs,
};

/// An ordering or sign assertion that failed under `--strict`.
#[derive(Debug, thiserror::Error)]
#[error("strict check failed: {0}")]
pub struct StrictFailure(String);

/// 2 for bad input, 3 for a failed stage, 4 for a strict assertion.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    use views_core::Error as E;
    if e.downcast_ref::<StrictFailure>().is_some() {
        return 4;
    }
    if e.downcast_ref::<clap::Error>().is_some() {
        return 2;
    }
    match e.downcast_ref::<E>() {
        Some(E::Argument(_) | E::Parse { .. } | E::Io { .. } | E::Integrity(_) | E::Serde(_)) => 2,
        _ => 3,
    }
}

pub fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Corpus(c) => corpus(c),
        Command::Build(c) => build(c),
        Command::Ep(c) => ep(c),
        Command::Ke(c) => ke(c),
        Command::Cm(c) => cm(c),
        Command::Eval(a) => eval(a),
        Command::Run(a) => run(a),
        Command::Ablation(a) => ablation(a),
        Command::Timesplit(a) => {
            let exp = experiment(&a.config)?;
            let report = run_time_generalization(&exp)?;
            write_json(&exp.spec.output_dir.join("timesplit.json"), &report)?;
            print!("{}", report.render());
            Ok(())
        }
        Command::KeStudies(a) => ke_studies(a),
        Command::Seeds(a) => seeds(a),
        Command::Synth(a) => synth(a),
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn experiment(config: &Path) -> Result<Experiment> {
    let spec = ExperimentSpec::load(config)?;
    Ok(Experiment::from_spec(spec)?)
}

fn open_corpus(path: &Path) -> Result<Corpus> {
    Ok(load_corpus(path, SCHEMA_V1)?)
}

fn corpus(cmd: CorpusCmd) -> Result<()> {
    match cmd {
        CorpusCmd::Validate { path, schema } => {
            let c = load_corpus(&path, &schema)?;
            let count = |f: &dyn Fn(&VideoSample) -> bool| c.samples().iter().filter(|s| f(s)).count();
            let dates = c.samples().iter().map(|s| s.publish_date);
            println!("{}: {} samples", path.display(), c.len());
            if let (Some(lo), Some(hi)) = (dates.clone().min(), dates.max()) {
                println!("dates {lo} .. {hi}");
            }
            println!("feature dim {}", c.feature_dim());
            for (name, split) in [("train", Split::Train), ("dev", Split::Dev), ("test", Split::Test)] {
                println!("{name}: {}", count(&|s| s.split == Some(split)));
            }
            println!("captioned: {}", count(&|s| s.caption.is_some()));
            println!("with entities: {}", count(&|s| s.entities.is_some()));
            println!("with ASR: {}", count(&|s| s.asr_text.is_some()));
            Ok(())
        }
        CorpusCmd::Split(a) => split(a),
        CorpusCmd::Refs { path, split, out } => {
            let c = open_corpus(&path)?;
            let split: Split = split.into();
            let refs: Vec<CaptionRecord> = c
                .samples()
                .iter()
                .filter(|s| s.split == Some(split))
                .filter_map(|s| s.caption.clone())
                .collect();
            if refs.is_empty() {
                return Err(views_core::Error::Argument(format!("no captioned {split:?} samples")).into());
            }
            save_captions(&refs, &out)?;
            println!("wrote {} references to {}", refs.len(), out.display());
            Ok(())
        }
    }
}

fn split(a: SplitArgs) -> Result<()> {
    let c = open_corpus(&a.path)?;
    let spec = match (a.dev, a.test, a.cutoff) {
        (Some(dev), Some(test), None) => SplitSpec::Random { dev, test, seed: a.seed },
        (None, None, Some(cutoff)) => SplitSpec::Date { cutoff },
        _ => return Err(views_core::Error::Argument("give either --dev and --test, or --cutoff".into()).into()),
    };
    let s = make_split(&c, &spec)?;
    save_corpus(&c.with_split(&s)?, &a.out)?;
    println!(
        "train {} / dev {} / test {} -> {}",
        s.train_ids.len(),
        s.dev_ids.len(),
        s.test_ids.len(),
        a.out.display()
    );
    Ok(())
}

/// A client plus an optional recorder that must be flushed when done.
struct Backend {
    client: Arc<dyn LlmClient>,
    recorder: Option<(Arc<RecordingLlm<Arc<dyn LlmClient>>>, PathBuf)>,
}

impl Backend {
    fn finish(self) -> Result<()> {
        if let Some((rec, path)) = self.recorder {
            write_cassette(&path, rec.entries().iter())?;
            log::info!("recorded {} exchanges to {}", rec.entries().len(), path.display());
        }
        Ok(())
    }
}

fn backend(a: &BackendArgs, kb: Option<&Path>) -> Result<Backend> {
    let client: Arc<dyn LlmClient> = match a.backend {
        BackendKind::Mock => match (kb, &a.cassette) {
            (Some(kb), _) => Arc::new(MockKb::load(kb)?),
            (None, Some(c)) => Arc::new(MockLlm::heuristic().with_fixture_file(c)?),
            (None, None) => Arc::new(MockLlm::heuristic()),
        },
        BackendKind::Replay => {
            let c = a.cassette.as_ref().ok_or_else(|| anyhow!(arg("--backend replay needs --cassette")))?;
            Arc::new(ReplayLlm::load(c)?)
        }
        BackendKind::Live => {
            let (Some(endpoint), Some(model)) = (&a.endpoint, &a.model) else {
                return Err(arg("--backend live needs --endpoint and --model").into());
            };
            Arc::new(HttpLlm::from_env(endpoint, model)?)
        }
    };
    Ok(match &a.record {
        Some(path) => {
            let rec = Arc::new(RecordingLlm::new(client));
            Backend {
                client: rec.clone(),
                recorder: Some((rec, path.clone())),
            }
        }
        None => Backend { client, recorder: None },
    })
}

fn arg(msg: &str) -> views_core::Error {
    views_core::Error::Argument(msg.to_string())
}

fn builder_config(a: &BuildArgs, qc_train: bool) -> BuilderConfig {
    BuilderConfig {
        workers: a.workers.max(1),
        max_retries: a.max_retries,
        qc_train,
    }
}

fn build(cmd: BuildCmd) -> Result<()> {
    match cmd {
        BuildCmd::Captions(a) => {
            let c = open_corpus(&a.corpus)?;
            let b = backend(&a.backend, None)?;
            let (out, report) = build_captions(&c, b.client.as_ref(), &builder_config(&a, false))?;
            save_corpus(&out, &a.out)?;
            b.finish()?;
            println!("captioned {}, excluded {}", report.captioned, report.excluded.len());
            for id in &report.excluded {
                println!("  no bullet block: {id}");
            }
            Ok(())
        }
        BuildCmd::Entities(a) => {
            let c = open_corpus(&a.corpus)?;
            let b = backend(&a.backend, None)?;
            let out = build_entities(&c, b.client.as_ref(), &builder_config(&a, false))?;
            save_corpus(&out, &a.out)?;
            b.finish()?;
            println!("extracted entities for {} samples", out.len());
            Ok(())
        }
        BuildCmd::Qc { args, queue, qc_train } => {
            let c = open_corpus(&args.corpus)?;
            let b = backend(&args.backend, None)?;
            let outcome = run_qc(&c, b.client.as_ref(), &builder_config(&args, qc_train))?;
            save_corpus(&outcome.corpus, &args.out)?;
            outcome.queue.save(&queue)?;
            b.finish()?;
            let failed = outcome.verdicts.iter().filter(|v| !v.rater_pass).count();
            println!("rated {}, flagged {}, queued {}", outcome.verdicts.len(), failed, outcome.queue.len());
            Ok(())
        }
        BuildCmd::Review { queue, corpus, out } => {
            let mut q = CorrectionQueue::load(&queue)?;
            let stdin = std::io::stdin();
            let summary = review_session(&mut q, stdin.lock(), std::io::stdout())?;
            q.save(&queue)?;
            println!(
                "corrected {}, accepted {}, skipped {}",
                summary.corrected, summary.accepted, summary.skipped
            );
            if let (Some(c), Some(out)) = (corpus, out) {
                save_corpus(&q.apply_to_corpus(&open_corpus(&c)?)?, &out)?;
                println!("wrote {}", out.display());
            }
            Ok(())
        }
    }
}

fn ep(cmd: EpCmd) -> Result<()> {
    match cmd {
        EpCmd::Train(a) => {
            let exp = experiment(&a.config)?;
            let ep = ep_stage(&exp)?;
            println!(
                "ep.json in {} ({} parameters, final loss {:.4})",
                exp.spec.output_dir.display(),
                ep.model.params.numel(),
                ep.loss_curve.last().copied().unwrap_or(f64::NAN)
            );
            Ok(())
        }
        EpCmd::Decode {
            checkpoint,
            corpus,
            out,
            beam,
        } => {
            let mut ep = EntityPerceiver::load(&checkpoint)?;
            ep.beam = beam.max(1);
            let c = open_corpus(&corpus)?;
            let samples: Vec<&VideoSample> = c.samples().iter().collect();
            let recs = decode_samples(&ep, &samples)?;
            save_entity_records(&recs, &out)?;
            let failed = recs.iter().filter(|r| r.decode_failed).count();
            println!("decoded {} samples ({failed} unparseable) -> {}", recs.len(), out.display());
            Ok(())
        }
    }
}

fn ke(cmd: KeCmd) -> Result<()> {
    let KeCmd::Extract {
        entities,
        backend: bargs,
        kb,
        structured: _,
        flat,
        out,
    } = cmd;
    let recs = load_entity_records(&entities)?;
    let parsed = recs
        .iter()
        .map(|r| Ok((r.sample_id.clone(), r.entities()?)))
        .collect::<views_core::Result<Vec<_>>>()?;
    let b = backend(&bargs, kb.as_deref())?;
    let ctx = contexts_for(&parsed, b.client.as_ref(), !flat)?;
    save_contexts(&ctx, &out)?;
    b.finish()?;
    println!(
        "{} passages for {} samples ({} empty) -> {}",
        ctx.len(),
        parsed.len(),
        parsed.len() - ctx.len(),
        out.display()
    );
    Ok(())
}

fn cm(cmd: CmCmd) -> Result<()> {
    match cmd {
        CmCmd::Vi {
            corpus,
            entities,
            context,
            out,
        } => {
            let c = open_corpus(&corpus)?;
            let vi = join_vi(&c, &load_entity_records(&entities)?, &load_contexts(&context)?);
            save_vi(&vi, &out)?;
            println!("{} VI records -> {}", vi.len(), out.display());
            Ok(())
        }
        CmCmd::Train {
            config,
            vi,
            ablate,
            use_asr,
            out,
        } => {
            let exp = experiment(&config)?;
            let mut ablation: AblationConfig = ablate.parse()?;
            ablation.use_asr |= use_asr;
            let vi = load_vi(&vi)?;
            let index = vi_index(&vi);
            let train = exp.samples(Split::Train);
            let mut cm = Captioner::new(
                caption_vocab(&train, &index),
                exp.corpus.feature_dim(),
                &exp.spec.cm.model,
                views_core::train::TrainConfig {
                    seed: exp.spec.seed,
                    ..exp.spec.cm.train.clone()
                },
                ablation,
            )?;
            let curve = train_cm(&mut cm, &train, &index)?;
            let path = out.unwrap_or_else(|| exp.spec.output_dir.join(format!("cm_{}.json", ablation.slug())));
            cm.save(&path)?;
            println!(
                "{} trained on {} samples, final loss {:.4} -> {}",
                ablation.label(),
                train.len(),
                curve.last().copied().unwrap_or(f64::NAN),
                path.display()
            );
            Ok(())
        }
        CmCmd::Generate {
            checkpoint,
            corpus,
            vi,
            split,
            beam,
            out,
        } => {
            let mut cm = Captioner::load(&checkpoint)?;
            cm.beam = beam.max(1);
            let c = open_corpus(&corpus)?;
            let samples: Vec<&VideoSample> = c
                .samples()
                .iter()
                .filter(|s| match split {
                    Some(want) => s.split == Some(want.into()),
                    None => matches!(s.split, Some(Split::Dev) | Some(Split::Test)),
                })
                .collect();
            if samples.is_empty() {
                return Err(arg("no samples to caption; is the corpus split?").into());
            }
            let vi = load_vi(&vi)?;
            let preds = generate_all(&cm, &samples, &vi_index(&vi))?;
            save_captions(&preds, &out)?;
            println!("{} captions -> {}", preds.len(), out.display());
            Ok(())
        }
    }
}

fn eval(a: EvalArgs) -> Result<()> {
    let preds = load_captions(&a.pred)?;
    let refs = load_captions(&a.reference)?;
    let by_id: HashMap<&str, &CaptionRecord> = preds.iter().map(|p| (p.sample_id.as_str(), p)).collect();
    let mut p = Vec::with_capacity(refs.len());
    let mut r = Vec::with_capacity(refs.len());
    for reference in &refs {
        let pred = by_id
            .get(reference.sample_id.as_str())
            .ok_or_else(|| views_core::Error::Data(format!("no prediction for {}", reference.sample_id)))?;
        p.push(pred.text.clone());
        r.push(reference.text.clone());
    }
    let extractor: Box<dyn EntityExtractor> = match a.entities_extractor {
        ExtractorKind::Gazetteer => match (&a.gazetteer, &a.corpus) {
            (Some(g), _) => Box::new(load_gazetteer(g)?),
            (None, Some(c)) => {
                let c = open_corpus(c)?;
                Box::new(Gazetteer::from_sets(c.samples().iter().filter_map(|s| s.entities.as_ref())))
            }
            (None, None) => return Err(arg("the gazetteer extractor needs --gazetteer or --corpus").into()),
        },
        ExtractorKind::Llm => {
            let (Some(endpoint), Some(model)) = (&a.endpoint, &a.model) else {
                return Err(arg("the llm extractor needs --endpoint and --model").into());
            };
            Box::new(LlmExtractor {
                client: HttpLlm::from_env(endpoint, model)?,
            })
        }
    };
    let report = evaluate(&p, &r, extractor.as_ref(), &EntityMatchConfig::default())?;
    if let Some(path) = &a.report {
        write_json(path, &report)?;
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let mut spec = ExperimentSpec::load(&a.config)?;
    spec.oracle_vi |= a.oracle_vi;
    let exp = Experiment::from_spec(spec)?;
    let report = run_pipeline(&exp)?;
    let rows: Vec<(String, views_core::metrics::MetricReport)> = report
        .cells
        .iter()
        .map(|c| (format!("{} [{:?}]", c.label, c.split), c.metrics.clone()))
        .collect();
    print!("{}", views_core::harness::render_table("Pipeline", &rows));
    println!("wall clock {:.1}s", report.wall_clock_secs);
    Ok(())
}

fn ablation(a: AblationArgs) -> Result<()> {
    let exp = experiment(&a.config)?;
    let strict = a.strict || exp.spec.strict;
    let (table, _) = run_ablation_table(&exp)?;
    write_json(&exp.spec.output_dir.join("ablation.json"), &table)?;
    print!("{}", table.render());
    for v in &table.violations {
        println!("ordering: {v}");
    }
    if strict && !table.ordering_holds {
        return Err(StrictFailure(table.violations.join("; ")).into());
    }
    Ok(())
}

fn ke_studies(a: KeStudiesArgs) -> Result<()> {
    let exp = experiment(&a.config)?;
    let ids = match &a.ids {
        Some(path) => Some(
            std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect::<Vec<_>>(),
        ),
        None => None,
    };
    let report = run_ke_studies(&exp, ids.as_deref())?;
    write_json(&exp.spec.output_dir.join("ke_studies.json"), &report)?;
    print!("{}", report.render());
    Ok(())
}

fn seeds(a: SeedsArgs) -> Result<()> {
    let exp = experiment(&a.config)?;
    let sweep = run_seed_sweep(&exp, &a.seeds)?;
    write_json(&exp.spec.output_dir.join("seeds.json"), &sweep)?;
    for (seed, full, none) in &sweep.runs {
        println!("seed {seed}: full VI CIDEr {full:.2}, video-only {none:.2}");
    }
    println!("sign stable: {}", sweep.sign_stable);
    if (a.strict || exp.spec.strict) && !sweep.sign_stable {
        return Err(StrictFailure("sign of the VI gap changes across seeds".into()).into());
    }
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let world = SynthWorld::generate(SynthConfig {
        samples: a.samples,
        persons: a.persons,
        noise: a.noise,
        profile: match a.profile {
            ProfileName::Informative => SynthProfile::Informative,
            ProfileName::Noise => SynthProfile::Noise,
        },
        seed: a.seed,
        ..SynthConfig::default()
    })?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    save_corpus(&world.raw_corpus()?, &a.out.join("raw.jsonl"))?;
    save_corpus(&world.corpus()?, &a.out.join("corpus.jsonl"))?;
    save_kb(&world.kb(), &a.out.join("kb.jsonl"))?;
    save_gazetteer(&world.gazetteer(), &a.out.join("gazetteer.json"))?;
    write_cassette(&a.out.join("llm.jsonl"), world.cassette().iter())?;
    std::fs::write(a.out.join("collisions.txt"), world.collision_ids().join("\n") + "\n")?;
    let mut spec = ExperimentSpec::new("corpus.jsonl", "runs", KeBackendSpec::Mock { kb: "kb.jsonl".into() });
    let held_out = (a.samples / 8).max(2);
    spec.split = SplitSpec::Random {
        dev: held_out,
        test: held_out,
        seed: 1,
    };
    spec.metrics.extractor = views_core::harness::ExtractorSpec::GazetteerFile {
        path: "gazetteer.json".into(),
    };
    std::fs::write(a.out.join("experiment.toml"), spec.to_toml()?)?;
    if let Some(cutoff) = world.config.novel_orgs_from {
        let mut ts = spec.clone();
        ts.split = SplitSpec::Date { cutoff };
        ts.output_dir = "runs-timesplit".into();
        ts.eval_splits = vec![Split::Dev, Split::Test];
        std::fs::write(a.out.join("timesplit.toml"), ts.to_toml()?)?;
    }
    println!("{} samples written to {}", world.events.len(), a.out.display());
    Ok(())
}
