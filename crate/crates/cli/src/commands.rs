use std::path::Path;

use sha2::{Digest, Sha256};
use storyplot_core::corpus::AnnotatedSentence;
use storyplot_core::evaluator::EvaluatorModel;
use storyplot_core::generator::{encode_event, generate_story, GeneratorConfig, GeneratorModel};
use storyplot_core::io::{
    read_jsonl, write_bytes, write_jsonl, DetectionRecord, ElementsRecord, GeneratedStoryRecord, GoldenRecord,
    RankingRecord, StoryRecord, StorylineRecord, TripleRecord,
};
use storyplot_core::pipeline::{
    compute_metrics, evaluator_from_rankings, extract_elements, generator_examples, group_sequences, new_scorer, plot,
    plot_examples, run_pipeline, seed_for, story_from_record, story_record, train_terms, AtStage, PipelineConfig,
    SeedSlot, Sequence, SourceGraphs, Stage, StageError,
};
use storyplot_core::predictor::{train_predictor, PredictorConfig, ScoringModel};
use storyplot_core::synth::Fixture;
use storyplot_core::trainer::{train_generator, TrainConfig};
use storyplot_core::{metrics, Error};

use crate::cli::{Command, Corpus, PipelineArgs};

type CmdResult = Result<(), StageError>;

pub fn run(cmd: Command) -> CmdResult {
    match cmd {
        Command::BuildKg { triples, graphs, out_dir } => {
            let records: Vec<TripleRecord> = read_jsonl(&triples).at(Stage::Graphs)?;
            let kg = SourceGraphs::build(&records, &[]).select(graphs);
            let line = kg.stats().summary_line();
            if let Some(dir) = out_dir {
                write_bytes(&dir.join("kg.jsonl"), kg.to_jsonl().as_bytes()).at(Stage::Graphs)?;
                write_bytes(&dir.join("kg_stats.txt"), format!("{line}\n").as_bytes()).at(Stage::Graphs)?;
            }
            println!("{line}");
            Ok(())
        }
        Command::Extract { corpus, out_dir, seed, term_epochs, terms_per_image } => {
            let (seqs, text_only) = load_corpus(&corpus, Stage::Extract)?;
            let terms = train_terms(&seqs, term_epochs, terms_per_image, seed_for(seed, SeedSlot::Terms)).at(Stage::Extract)?;
            let elements = extract_elements(&seqs, &terms).at(Stage::Extract)?;
            write_jsonl(&out_dir.join("elements.jsonl"), &elements).at(Stage::Extract)?;
            let golden = golden_records(&seqs, &text_only).at(Stage::Extract)?;
            write_jsonl(&out_dir.join("golden.jsonl"), &golden).at(Stage::Extract)?;
            println!("sequences={} stories={} to_plot={}", seqs.len(), golden.len(), elements.len());
            Ok(())
        }
        Command::TrainPredictor { triples, corpus, embeddings, out_dir, seed, epochs } => {
            let (seqs, text_only) = load_corpus(&corpus, Stage::Plot)?;
            let records: Vec<TripleRecord> = read_jsonl(&triples).at(Stage::Graphs)?;
            let kg = SourceGraphs::build(&records, &story_refs(&seqs, &text_only)).merged();
            let examples = plot_examples(&seqs).at(Stage::Plot)?;
            let mut scorer =
                new_scorer(&kg, &[], &examples, embeddings.as_deref(), seed_for(seed, SeedSlot::Scorer)).at(Stage::Plot)?;
            let cfg = PredictorConfig { epochs, seed: seed_for(seed, SeedSlot::Predictor), ..Default::default() };
            let report = train_predictor(&mut scorer, &examples, &kg, &cfg).at(Stage::Plot)?;
            scorer.save(&out_dir.join("checkpoints"), "predictor").at(Stage::Plot)?;
            println!(
                "examples={} epochs={} loss={:.6}",
                examples.len(),
                report.epoch_losses.len(),
                report.epoch_losses.last().copied().unwrap_or(f64::NAN)
            );
            Ok(())
        }
        Command::Plot { checkpoint, triples, stories, elements_file, elements, graphs, max_sentences, out_dir } => {
            let scorer = ScoringModel::load(&checkpoint, "predictor").at(Stage::Plot)?;
            let records: Vec<TripleRecord> = read_jsonl(&triples).at(Stage::Graphs)?;
            let story_records: Vec<StoryRecord> = match &stories {
                Some(p) => read_jsonl(p).at(Stage::Plot)?,
                None => Vec::new(),
            };
            let sentences: Vec<Vec<AnnotatedSentence>> = story_records
                .into_iter()
                .map(|r| r.sentences.into_iter().map(AnnotatedSentence::normalized).collect())
                .collect();
            let refs: Vec<&[AnnotatedSentence]> = sentences.iter().map(Vec::as_slice).collect();
            let kg = SourceGraphs::build(&records, &refs).select(graphs);
            let input: Vec<ElementsRecord> = read_jsonl(&elements_file).at(Stage::Plot)?;
            let lines = plot(&scorer, &input, &kg, elements, max_sentences).at(Stage::Plot)?;
            write_jsonl(&out_dir.join("storylines.jsonl"), &lines).at(Stage::Plot)?;
            println!("storylines={}", lines.len());
            Ok(())
        }
        Command::TrainEvaluator { rankings, out_dir, seed, epochs } => {
            let records: Vec<RankingRecord> = read_jsonl(&rankings).at(Stage::Generate)?;
            let ev = evaluator_from_rankings(&records, epochs, seed_for(seed, SeedSlot::Evaluator)).at(Stage::Generate)?;
            ev.save(&out_dir.join("checkpoints"), "evaluator").at(Stage::Generate)?;
            println!("sequences={}", records.len());
            Ok(())
        }
        Command::TrainGenerator {
            corpus,
            evaluator,
            storylines,
            no_plot,
            no_rework,
            epochs,
            reward_start,
            learning_rate,
            seed,
            out_dir,
        } => {
            let (seqs, text_only) = load_corpus(&corpus, Stage::Generate)?;
            let examples = generator_examples(&seqs, &text_only, !no_plot).at(Stage::Generate)?;
            let extra: Vec<String> = match &storylines {
                Some(p) => {
                    let lines: Vec<StorylineRecord> = read_jsonl(p).at(Stage::Generate)?;
                    lines.iter().flat_map(|l| l.to_storyline().events.iter().flat_map(|e| encode_event(e)).collect::<Vec<_>>()).collect()
                }
                None => Vec::new(),
            };
            let ev = match (&evaluator, no_rework) {
                (_, true) => None,
                (Some(dir), false) => Some(EvaluatorModel::load(dir, "evaluator").at(Stage::Generate)?),
                (None, false) => {
                    return Err(StageError {
                        stage: Stage::Generate,
                        error: Error::Config("--evaluator is required unless --no-rework is given".into()),
                    })
                }
            };
            let gcfg = GeneratorConfig { seed: seed_for(seed, SeedSlot::Generator), ..Default::default() };
            let mut model =
                GeneratorModel::new(gcfg, examples.iter().flat_map(|e| e.tokens()).chain(&extra)).at(Stage::Generate)?;
            let tcfg = TrainConfig {
                total_epochs: epochs,
                reward_start_epoch: reward_start,
                adam: storyplot_core::autograd::AdamConfig::with_lr(learning_rate),
                seed: seed_for(seed, SeedSlot::Trainer),
                rework: !no_rework,
                ..Default::default()
            };
            let mut log = Vec::new();
            let reports = train_generator(&mut model, ev.as_ref(), &examples, &tcfg, None, &mut log).at(Stage::Generate)?;
            write_bytes(&out_dir.join("train.log"), &log).at(Stage::Generate)?;
            model.save(&out_dir.join("checkpoints"), "generator").at(Stage::Generate)?;
            if let Some(last) = reports.last() {
                println!("{}", last.log_line());
            }
            Ok(())
        }
        Command::Generate { checkpoint, storylines, out_dir } => {
            let model = GeneratorModel::load(&checkpoint, "generator").at(Stage::Generate)?;
            let lines: Vec<StorylineRecord> = read_jsonl(&storylines).at(Stage::Generate)?;
            let out: Vec<GeneratedStoryRecord> =
                lines.iter().map(|l| story_record(&l.sequence_id, &generate_story(&model, &l.to_storyline()))).collect();
            write_jsonl(&out_dir.join("stories_out.jsonl"), &out).at(Stage::Generate)?;
            println!("stories={}", out.len());
            Ok(())
        }
        Command::Metrics { stories_out, storylines, threshold } => {
            let records: Vec<GeneratedStoryRecord> = read_jsonl(&stories_out).at(Stage::Metrics)?;
            let stories: Vec<_> = records.iter().map(story_from_record).collect();
            let lines = match &storylines {
                Some(p) => {
                    let lines: Vec<StorylineRecord> = read_jsonl(p).at(Stage::Metrics)?;
                    if lines.iter().map(|l| &l.sequence_id).ne(records.iter().map(|r| &r.sequence_id)) {
                        return Err(StageError {
                            stage: Stage::Metrics,
                            error: Error::InvalidInput("storylines and stories are not aligned by sequence id".into()),
                        });
                    }
                    Some(lines.iter().map(StorylineRecord::to_storyline).collect::<Vec<_>>())
                }
                None => None,
            };
            let (value, stats) = compute_metrics(&stories, lines.as_deref(), threshold).at(Stage::Metrics)?;
            println!("{}", metrics::metrics_line(value, &stats));
            Ok(())
        }
        Command::Pipeline(args) => pipeline(args),
        Command::Synth { out_dir, train, test, seed } => {
            let f = Fixture::new(train, test, seed);
            let w = |name: &str, r: std::result::Result<(), Error>| r.map_err(|e| (name.to_string(), e));
            w("stories", write_jsonl(&out_dir.join("stories.jsonl"), &f.story_records()))
                .and_then(|_| w("detections", write_jsonl(&out_dir.join("detections.jsonl"), &f.detection_records())))
                .and_then(|_| w("triples", write_jsonl(&out_dir.join("triples.jsonl"), &f.triple_records())))
                .and_then(|_| w("rankings", write_jsonl(&out_dir.join("rankings.jsonl"), &f.ranking_records())))
                .map_err(|(_, e)| StageError { stage: Stage::Extract, error: e })?;
            println!("train={train} test={test} seed={seed}");
            Ok(())
        }
    }
}

fn load_corpus(corpus: &Corpus, stage: Stage) -> Result<(Vec<Sequence>, Vec<(String, Vec<AnnotatedSentence>)>), StageError> {
    let stories: Vec<StoryRecord> = read_jsonl(&corpus.stories).at(stage)?;
    let detections: Vec<DetectionRecord> = read_jsonl(&corpus.detections).at(stage)?;
    group_sequences(&stories, &detections).at(stage)
}

fn story_refs<'a>(seqs: &'a [Sequence], text_only: &'a [(String, Vec<AnnotatedSentence>)]) -> Vec<&'a [AnnotatedSentence]> {
    seqs.iter().filter_map(|s| s.story.as_deref()).chain(text_only.iter().map(|(_, s)| s.as_slice())).collect()
}

fn golden_records(seqs: &[Sequence], text_only: &[(String, Vec<AnnotatedSentence>)]) -> storyplot_core::Result<Vec<GoldenRecord>> {
    let with_story = seqs.iter().filter_map(|s| s.story.as_ref().map(|st| (s.id.as_str(), st.as_slice())));
    with_story
        .chain(text_only.iter().map(|(id, s)| (id.as_str(), s.as_slice())))
        .map(|(id, s)| {
            let g = storyplot_core::corpus::build_golden_storyline(s)?;
            Ok(GoldenRecord { story_id: id.to_string(), hops: g.hops })
        })
        .collect()
}

fn pipeline(args: PipelineArgs) -> CmdResult {
    let mut cfg = match &args.config {
        Some(p) => PipelineConfig::from_file(p).at(Stage::Extract)?,
        None => PipelineConfig::default(),
    };
    let cwd = Path::new("");
    let overrides = [
        ("triples", args.triples.as_ref().map(|p| p.display().to_string())),
        ("stories", args.stories.as_ref().map(|p| p.display().to_string())),
        ("detections", args.detections.as_ref().map(|p| p.display().to_string())),
        ("rankings", args.rankings.as_ref().map(|p| p.display().to_string())),
        ("embeddings", args.embeddings.as_ref().map(|p| p.display().to_string())),
        ("out-dir", args.out_dir.as_ref().map(|p| p.display().to_string())),
        ("seed", args.seed.map(|s| s.to_string())),
        ("elements", args.elements.map(|e| e.name().to_string())),
        ("graphs", args.graphs.map(|g| g.name().to_string())),
        ("no-plot", args.no_plot.then(|| "true".to_string())),
        ("no-rework", args.no_rework.then(|| "true".to_string())),
        ("epochs", args.epochs.map(|e| e.to_string())),
        ("reward-start", args.reward_start.map(|e| e.to_string())),
    ];
    for (key, value) in overrides {
        if let Some(v) = value {
            cfg.set(key, &v, cwd).at(Stage::Extract)?;
        }
    }
    let out = run_pipeline(&cfg)?;
    println!("label={} stories={}", out.label, out.stories);
    println!("{}", out.metrics_line);
    for f in &out.files {
        let bytes = std::fs::read(f).map_err(|e| Error::io(f, e)).at(Stage::Metrics)?;
        let rel = f.strip_prefix(&out.dir).unwrap_or(f);
        println!("{}  {}", hex::encode(Sha256::digest(&bytes)), rel.display());
    }
    Ok(())
}
