//! End-to-end batch run: extract → graphs → plot → generate → metrics.
//!
//! Every stage reads and writes plain files so the individual CLI
//! subcommands and the composed run share the same code paths.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autograd::AdamConfig;
use crate::corpus::{
    build_golden_storyline, extract_nvn_tuples, select_objects, train_term_predictor, tokenize,
    AnnotatedSentence, Detection, GoldenStoryline, NvnTuple, StoryElements, TermPredictor, TermPredictorConfig,
    IMAGES_PER_SEQUENCE,
};
use crate::error::{Error, Result};
use crate::evaluator::{labeled_from_rankings, train_evaluator, EvaluatorConfig, EvaluatorModel};
use crate::generator::{encode_terms, generate_story, GeneratorConfig, GeneratorModel, Story, StoryExample, EOS};
use crate::io::{
    read_embeddings, read_jsonl, write_bytes, DetectionRecord, ElementsRecord, GeneratedStoryRecord,
    RankingRecord, StoryRecord, StorylineRecord, TripleRecord,
};
use crate::kgraph::{assemble_story_graph, build_knowledge_graph, merge, KnowledgeGraph};
use crate::metrics::{metrics_line, mtld, story_stats, StoryStats, MTLD_THRESHOLD};
use crate::predictor::{
    predict_storyline, train_predictor, PathfindConfig, PlotExample, PredictorConfig, ScoringConfig, ScoringModel,
    Storyline,
};
use crate::trainer::{train_generator, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Extract,
    Graphs,
    Plot,
    Generate,
    Metrics,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Extract => "extract",
            Stage::Graphs => "graphs",
            Stage::Plot => "plot",
            Stage::Generate => "generate",
            Stage::Metrics => "metrics",
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            Stage::Extract => 10,
            Stage::Graphs => 11,
            Stage::Plot => 12,
            Stage::Generate => 13,
            Stage::Metrics => 14,
        }
    }
}

#[derive(Debug)]
pub struct StageError {
    pub stage: Stage,
    pub error: Error,
}

impl StageError {
    /// Malformed input lines exit with 2, config problems with 3, anything
    /// else with the stage's own code.
    pub fn exit_code(&self) -> i32 {
        match self.error {
            Error::Parse { .. } => 2,
            Error::Config(_) => 3,
            _ => self.stage.exit_code(),
        }
    }
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} stage failed: {}", self.stage.name(), self.error)
    }
}

impl std::error::Error for StageError {}

/// Tags a core error with the stage it came from.
pub trait AtStage<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError> {
        self.map_err(|error| StageError { stage, error })
    }
}

/// Which story elements feed the story graph and generator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementsMode {
    Objects,
    Terms,
    #[default]
    Both,
}

impl ElementsMode {
    pub fn name(self) -> &'static str {
        match self {
            ElementsMode::Objects => "objects",
            ElementsMode::Terms => "terms",
            ElementsMode::Both => "both",
        }
    }

    fn keeps(self) -> (bool, bool) {
        match self {
            ElementsMode::Objects => (true, false),
            ElementsMode::Terms => (false, true),
            ElementsMode::Both => (true, true),
        }
    }
}

impl FromStr for ElementsMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "objects" => Ok(Self::Objects),
            "terms" => Ok(Self::Terms),
            "both" => Ok(Self::Both),
            _ => Err(Error::Config(format!("elements must be objects, terms or both, not {s}"))),
        }
    }
}

/// Which knowledge graphs the test-time story graphs draw edges from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphsMode {
    Vg,
    Vist,
    #[default]
    Both,
}

impl GraphsMode {
    pub fn name(self) -> &'static str {
        match self {
            GraphsMode::Vg => "vg",
            GraphsMode::Vist => "vist",
            GraphsMode::Both => "both",
        }
    }
}

impl FromStr for GraphsMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vg" => Ok(Self::Vg),
            "vist" => Ok(Self::Vist),
            "both" => Ok(Self::Both),
            _ => Err(Error::Config(format!("graphs must be vg, vist or both, not {s}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub triples: PathBuf,
    pub stories: PathBuf,
    pub detections: PathBuf,
    pub rankings: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub plot: bool,
    pub rework: bool,
    pub elements: ElementsMode,
    pub graphs: GraphsMode,
    pub epochs: usize,
    pub reward_start: usize,
    pub predictor_epochs: usize,
    pub evaluator_epochs: usize,
    pub term_epochs: usize,
    pub terms_per_image: usize,
    pub max_sentences: usize,
    pub learning_rate: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            triples: "triples.jsonl".into(),
            stories: "stories.jsonl".into(),
            detections: "detections.jsonl".into(),
            rankings: None,
            embeddings: None,
            out_dir: "out".into(),
            seed: 0,
            plot: true,
            rework: true,
            elements: ElementsMode::Both,
            graphs: GraphsMode::Both,
            epochs: 60,
            reward_start: 30,
            predictor_epochs: 50,
            evaluator_epochs: 10,
            term_epochs: 100,
            terms_per_image: 3,
            max_sentences: crate::kgraph::DEFAULT_MAX_SENTENCES,
            learning_rate: 1e-3,
        }
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got {v}"))),
    }
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v}")))
}

impl PipelineConfig {
    /// Applies one `key=value` setting. Keys mirror the CLI flags.
    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<()> {
        let path = |v: &str| base.join(v);
        match key {
            "triples" => self.triples = path(value),
            "stories" => self.stories = path(value),
            "detections" => self.detections = path(value),
            "rankings" => self.rankings = Some(path(value)),
            "embeddings" => self.embeddings = Some(path(value)),
            "out-dir" => self.out_dir = path(value),
            "seed" => self.seed = parse_num(key, value)?,
            "no-plot" => self.plot = !parse_bool(key, value)?,
            "no-rework" => self.rework = !parse_bool(key, value)?,
            "elements" => self.elements = value.parse()?,
            "graphs" => self.graphs = value.parse()?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "reward-start" => self.reward_start = parse_num(key, value)?,
            "predictor-epochs" => self.predictor_epochs = parse_num(key, value)?,
            "evaluator-epochs" => self.evaluator_epochs = parse_num(key, value)?,
            "term-epochs" => self.term_epochs = parse_num(key, value)?,
            "terms-per-image" => self.terms_per_image = parse_num(key, value)?,
            "max-sentences" => self.max_sentences = parse_num(key, value)?,
            "learning-rate" => self.learning_rate = parse_num(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key}"))),
        }
        Ok(())
    }

    /// Flat `key=value` lines; `#` starts a comment. Relative paths resolve
    /// against `base`.
    pub fn apply_kv(&mut self, text: &str, base: &Path) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", i + 1)))?;
            self.set(k.trim(), v.trim(), base)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_kv(&text, path.parent().unwrap_or(Path::new(".")))?;
        Ok(cfg)
    }

    /// Name of the run directory, derived from the ablation settings.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if !self.plot {
            parts.push("no-plot".to_string());
        }
        if !self.rework {
            parts.push("no-rework".to_string());
        }
        if self.elements != ElementsMode::Both {
            parts.push(format!("elements-{}", self.elements.name()));
        }
        if self.graphs != GraphsMode::Both {
            parts.push(format!("graphs-{}", self.graphs.name()));
        }
        if parts.is_empty() {
            "full".into()
        } else {
            parts.join("_")
        }
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out_dir.join(self.label())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            total_epochs: self.epochs,
            reward_start_epoch: self.reward_start,
            adam: AdamConfig::with_lr(self.learning_rate),
            seed: seed_for(self.seed, SeedSlot::Trainer),
            rework: self.rework,
            ..TrainConfig::default()
        }
    }
}

/// Fixed offsets fanning the run seed out to each model.
#[derive(Clone, Copy)]
pub enum SeedSlot {
    Terms = 1,
    Scorer = 2,
    Predictor = 3,
    Evaluator = 4,
    Generator = 5,
    Trainer = 6,
}

pub fn seed_for(seed: u64, slot: SeedSlot) -> u64 {
    seed.wrapping_add(1000 * slot as u64)
}

/// One photo sequence with its optional reference story.
#[derive(Clone, Debug)]
pub struct Sequence {
    pub id: String,
    pub objects: Vec<Vec<String>>,
    pub story: Option<Vec<AnnotatedSentence>>,
}

impl Sequence {
    pub fn golden(&self) -> Option<Result<GoldenStoryline>> {
        self.story.as_ref().map(|s| build_golden_storyline(s))
    }
}

/// Joins stories and detections by id. Sequences with detections come out
/// sorted by id; stories without any detection are returned separately.
pub fn group_sequences(
    stories: &[StoryRecord],
    detections: &[DetectionRecord],
) -> Result<(Vec<Sequence>, Vec<(String, Vec<AnnotatedSentence>)>)> {
    let mut dets: BTreeMap<&str, Vec<Detection>> = BTreeMap::new();
    for d in detections {
        let det = Detection::new(&d.label, d.confidence, d.image_index);
        det.validate()?;
        dets.entry(d.sequence_id.as_str()).or_default().push(det);
    }
    let mut texts: BTreeMap<&str, Vec<AnnotatedSentence>> = BTreeMap::new();
    for s in stories {
        let sentences: Vec<AnnotatedSentence> = s.sentences.iter().cloned().map(AnnotatedSentence::normalized).collect();
        for sent in &sentences {
            sent.validate()?;
        }
        if texts.insert(s.story_id.as_str(), sentences).is_some() {
            return Err(Error::InvalidInput(format!("duplicate story id {}", s.story_id)));
        }
    }
    let seqs = dets
        .iter()
        .map(|(id, d)| Sequence { id: id.to_string(), objects: select_objects(d), story: texts.remove(id) })
        .collect();
    let text_only = texts.into_iter().map(|(id, s)| (id.to_string(), s)).collect();
    Ok((seqs, text_only))
}

/// Object bag of image `k` paired with the nouns of sentence `k`.
pub fn term_pairs(seqs: &[Sequence]) -> Vec<(Vec<String>, Vec<String>)> {
    let mut out = Vec::new();
    for s in seqs {
        if let Some(story) = &s.story {
            for (k, sent) in story.iter().enumerate().take(IMAGES_PER_SEQUENCE) {
                if !sent.nouns.is_empty() {
                    out.push((s.objects[k].clone(), sent.nouns.clone()));
                }
            }
        }
    }
    out
}

pub fn train_terms(seqs: &[Sequence], epochs: usize, top_k: usize, seed: u64) -> Result<TermPredictor> {
    let cfg = TermPredictorConfig { epochs, top_k, seed, ..Default::default() };
    train_term_predictor(&term_pairs(seqs), &cfg)
}

/// Objects and predicted terms for every sequence without a story.
pub fn extract_elements(seqs: &[Sequence], terms: &TermPredictor) -> Result<Vec<ElementsRecord>> {
    seqs.iter()
        .filter(|s| s.story.is_none())
        .map(|s| {
            let k = terms.top_k.min(terms.noun_vocab.len());
            let predicted = s.objects.iter().map(|bag| terms.top_terms(bag, k)).collect::<Result<Vec<_>>>()?;
            Ok(ElementsRecord { sequence_id: s.id.clone(), objects: s.objects.clone(), terms: predicted })
        })
        .collect()
}

/// Knowledge graphs by source. Tuples extracted from the training stories
/// always join the story-side graph.
pub struct SourceGraphs {
    pub visual: KnowledgeGraph,
    pub story: KnowledgeGraph,
}

impl SourceGraphs {
    pub fn build(triples: &[TripleRecord], stories: &[&[AnnotatedSentence]]) -> Self {
        let visual: Vec<NvnTuple> = triples.iter().filter(|t| t.source == "vg").map(TripleRecord::tuple).collect();
        let mut story: Vec<NvnTuple> = triples.iter().filter(|t| t.source != "vg").map(TripleRecord::tuple).collect();
        for s in stories {
            story.extend(s.iter().flat_map(extract_nvn_tuples));
        }
        Self { visual: build_knowledge_graph(&visual), story: build_knowledge_graph(&story) }
    }

    pub fn merged(&self) -> KnowledgeGraph {
        merge(&self.visual, &self.story)
    }

    pub fn select(&self, mode: GraphsMode) -> KnowledgeGraph {
        match mode {
            GraphsMode::Vg => self.visual.clone(),
            GraphsMode::Vist => self.story.clone(),
            GraphsMode::Both => self.merged(),
        }
    }
}

pub fn plot_examples(seqs: &[Sequence]) -> Result<Vec<PlotExample>> {
    seqs.iter()
        .filter_map(|s| s.golden().map(|g| (s, g)))
        .map(|(s, g)| {
            let elements = StoryElements::new(s.objects.clone(), vec![Vec::new(); s.objects.len()]);
            Ok(PlotExample { objects: elements.flat_objects(), elements, golden: g? })
        })
        .collect()
}

/// Scorer over the merged graph's frames with every node, object and term
/// in its word vocabulary.
pub fn new_scorer(
    kg: &KnowledgeGraph,
    elements: &[ElementsRecord],
    examples: &[PlotExample],
    embeddings: Option<&Path>,
    seed: u64,
) -> Result<ScoringModel> {
    let vectors = embeddings.map(read_embeddings).transpose()?;
    let mut cfg = ScoringConfig { seed, ..Default::default() };
    if let Some(dim) = vectors.as_ref().and_then(|v| v.values().next().map(Vec::len)) {
        cfg.embed_dim = dim;
    }
    let mut words: BTreeSet<String> = kg.nodes().clone();
    for e in elements {
        words.extend(e.objects.iter().chain(&e.terms).flatten().cloned());
    }
    for ex in examples {
        words.extend(ex.objects.iter().cloned());
    }
    let mut model = ScoringModel::new(cfg, kg.frames(), &words);
    if let Some(v) = &vectors {
        model.load_word_vectors(v)?;
    }
    Ok(model)
}

pub fn plot(
    model: &ScoringModel,
    elements: &[ElementsRecord],
    kg: &KnowledgeGraph,
    mode: ElementsMode,
    max_sentences: usize,
) -> Result<Vec<StorylineRecord>> {
    let (keep_objects, keep_terms) = mode.keeps();
    let cfg = PathfindConfig::default();
    elements
        .iter()
        .map(|rec| {
            let el = rec.elements().restricted(keep_objects, keep_terms);
            let graph = assemble_story_graph(&el, kg, max_sentences)?;
            let line = predict_storyline(model, &graph, &rec.elements().flat_objects(), &cfg)?;
            line.validate(Some(&graph))?;
            Ok(StorylineRecord::new(&rec.sequence_id, &line))
        })
        .collect()
}

/// Generator training stories: golden events, or bare nouns without a plot.
pub fn generator_examples(seqs: &[Sequence], text_only: &[(String, Vec<AnnotatedSentence>)], plot: bool) -> Result<Vec<StoryExample>> {
    let mut out = Vec::new();
    let with_story = seqs.iter().filter_map(|s| s.story.as_ref().map(|st| (s.id.as_str(), st)));
    for (id, story) in with_story.chain(text_only.iter().map(|(id, s)| (id.as_str(), s))) {
        if plot {
            out.push(StoryExample::from_golden(id, &build_golden_storyline(story)?, story)?);
        } else {
            out.push(StoryExample::from_terms(id, story));
        }
    }
    Ok(out)
}

/// Per-image plot-free inputs: the image's elements as bare terms.
pub fn term_inputs(rec: &ElementsRecord, mode: ElementsMode) -> Vec<Vec<String>> {
    let (keep_objects, keep_terms) = mode.keeps();
    let el = rec.elements().restricted(keep_objects, keep_terms);
    (0..el.objects.len().max(el.terms.len()))
        .map(|k| {
            let mut terms: Vec<String> = Vec::new();
            for t in el.objects.get(k).into_iter().chain(el.terms.get(k)).flatten() {
                if !terms.contains(t) {
                    terms.push(t.clone());
                }
            }
            encode_terms(&terms)
        })
        .collect()
}

pub fn evaluator_from_rankings(records: &[RankingRecord], epochs: usize, seed: u64) -> Result<EvaluatorModel> {
    train_evaluator(&labeled_from_rankings(records), &EvaluatorConfig { epochs, seed, ..Default::default() })
}

pub fn story_record(sequence_id: &str, story: &Story) -> GeneratedStoryRecord {
    GeneratedStoryRecord { sequence_id: sequence_id.to_string(), sentences: story.texts() }
}

/// Re-tokenises written sentences; each regains its end marker.
pub fn story_from_record(rec: &GeneratedStoryRecord) -> Story {
    Story {
        sentences: rec
            .sentences
            .iter()
            .map(|s| {
                let mut t = tokenize(s);
                t.push(EOS.to_string());
                t
            })
            .collect(),
    }
}

/// MTLD over all generated content tokens, plus story statistics. Without
/// storylines every event draws from a single image.
pub fn compute_metrics(stories: &[Story], storylines: Option<&[Storyline]>, threshold: f64) -> Result<(f64, StoryStats)> {
    let tokens: Vec<&String> = stories.iter().flat_map(|s| s.sentences.iter().flatten()).filter(|t| *t != EOS).collect();
    let value = mtld(&tokens, threshold)?;
    let stats = match storylines {
        Some(lines) => story_stats(lines, stories)?,
        None => {
            if stories.is_empty() {
                return Err(Error::InvalidInput("no stories".into()));
            }
            let mean = stories.iter().map(|s| s.len() as f64).sum::<f64>() / stories.len() as f64;
            StoryStats { mean_sentence_count: mean, multi_image_event_ratio: 0.0 }
        }
    };
    Ok((value, stats))
}

#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub label: String,
    pub dir: PathBuf,
    pub stories: usize,
    pub metrics_line: String,
    pub files: Vec<PathBuf>,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    label: String,
    seed: u64,
    plot: bool,
    rework: bool,
    elements: ElementsMode,
    graphs: GraphsMode,
    epochs: usize,
    reward_start: usize,
    files: &'a [String],
}

/// Runs every stage and writes its outputs under `cfg.run_dir()`.
pub fn run_pipeline(cfg: &PipelineConfig) -> std::result::Result<PipelineOutput, StageError> {
    use Stage::*;
    let dir = cfg.run_dir();
    let mut files: Vec<String> = Vec::new();
    let mut write = |name: &str, bytes: &[u8], stage: Stage| -> std::result::Result<(), StageError> {
        write_bytes(&dir.join(name), bytes).at(stage)?;
        files.push(name.to_string());
        Ok(())
    };
    let jsonl = |items: Vec<String>| -> Vec<u8> { items.into_iter().flat_map(|l| (l + "\n").into_bytes()).collect() };

    cfg.train_config().validate().at(Generate)?;
    let stories: Vec<StoryRecord> = read_jsonl(&cfg.stories).at(Extract)?;
    let detections: Vec<DetectionRecord> = read_jsonl(&cfg.detections).at(Extract)?;
    let (seqs, text_only) = group_sequences(&stories, &detections).at(Extract)?;
    let terms = train_terms(&seqs, cfg.term_epochs, cfg.terms_per_image, seed_for(cfg.seed, SeedSlot::Terms)).at(Extract)?;
    let elements = extract_elements(&seqs, &terms).at(Extract)?;
    if elements.is_empty() {
        return Err(StageError { stage: Extract, error: Error::InvalidInput("no sequences without a story".into()) });
    }
    write("elements.jsonl", &jsonl(elements.iter().map(to_json).collect()), Extract)?;

    let triples: Vec<TripleRecord> = read_jsonl(&cfg.triples).at(Graphs)?;
    let story_refs: Vec<&[AnnotatedSentence]> =
        seqs.iter().filter_map(|s| s.story.as_deref()).chain(text_only.iter().map(|(_, s)| s.as_slice())).collect();
    let graphs = SourceGraphs::build(&triples, &story_refs);
    let train_kg = graphs.merged();
    let test_kg = graphs.select(cfg.graphs);
    write("kg.jsonl", test_kg.to_jsonl().as_bytes(), Graphs)?;
    write("kg_stats.txt", format!("{}\n", test_kg.stats().summary_line()).as_bytes(), Graphs)?;

    let storylines: Option<Vec<StorylineRecord>> = if cfg.plot {
        let examples = plot_examples(&seqs).at(Plot)?;
        let mut scorer =
            new_scorer(&train_kg, &elements, &examples, cfg.embeddings.as_deref(), seed_for(cfg.seed, SeedSlot::Scorer))
                .at(Plot)?;
        let pcfg = PredictorConfig {
            epochs: cfg.predictor_epochs,
            seed: seed_for(cfg.seed, SeedSlot::Predictor),
            max_sentences: cfg.max_sentences,
            early_stop_accuracy: Some(1.0),
            ..Default::default()
        };
        train_predictor(&mut scorer, &examples, &train_kg, &pcfg).at(Plot)?;
        let lines = plot(&scorer, &elements, &test_kg, cfg.elements, cfg.max_sentences).at(Plot)?;
        scorer.save(&dir.join("checkpoints"), "predictor").at(Plot)?;
        write("storylines.jsonl", &jsonl(lines.iter().map(to_json).collect()), Plot)?;
        Some(lines)
    } else {
        None
    };

    let evaluator = match (&cfg.rankings, cfg.rework) {
        (Some(path), true) => {
            let records: Vec<RankingRecord> = read_jsonl(path).at(Generate)?;
            let ev = evaluator_from_rankings(&records, cfg.evaluator_epochs, seed_for(cfg.seed, SeedSlot::Evaluator))
                .at(Generate)?;
            ev.save(&dir.join("checkpoints"), "evaluator").at(Generate)?;
            Some(ev)
        }
        (None, true) => {
            return Err(StageError { stage: Generate, error: Error::Config("reward phase needs a rankings file".into()) })
        }
        (_, false) => None,
    };
    let train_examples = generator_examples(&seqs, &text_only, cfg.plot).at(Generate)?;
    let test_inputs: Vec<Vec<Vec<String>>> = match &storylines {
        Some(lines) => lines
            .iter()
            .map(|l| l.to_storyline().events.iter().map(|e| crate::generator::encode_event(e)).collect())
            .collect(),
        None => elements.iter().map(|e| term_inputs(e, cfg.elements)).collect(),
    };
    let vocab: Vec<&String> =
        train_examples.iter().flat_map(|e| e.tokens()).chain(test_inputs.iter().flatten().flatten()).collect();
    let gcfg = GeneratorConfig { seed: seed_for(cfg.seed, SeedSlot::Generator), ..Default::default() };
    let mut generator = GeneratorModel::new(gcfg, vocab).at(Generate)?;
    let mut log = Vec::new();
    train_generator(&mut generator, evaluator.as_ref(), &train_examples, &cfg.train_config(), None, &mut log)
        .at(Generate)?;
    write("train.log", &log, Generate)?;
    generator.save(&dir.join("checkpoints"), "generator").at(Generate)?;
    let generated: Vec<Story> = match &storylines {
        Some(lines) => lines.iter().map(|l| generate_story(&generator, &l.to_storyline())).collect(),
        None => test_inputs.iter().map(|inputs| generator.generate_from_inputs(inputs)).collect(),
    };
    let records: Vec<String> =
        elements.iter().zip(&generated).map(|(e, s)| to_json(&story_record(&e.sequence_id, s))).collect();
    write("stories_out.jsonl", &jsonl(records), Generate)?;

    let lines: Option<Vec<Storyline>> = storylines.as_ref().map(|ls| ls.iter().map(StorylineRecord::to_storyline).collect());
    let (value, stats) = compute_metrics(&generated, lines.as_deref(), MTLD_THRESHOLD).at(Metrics)?;
    let metrics = metrics_line(value, &stats);
    write("metrics.txt", format!("{metrics}\n").as_bytes(), Metrics)?;

    files.extend(["checkpoints/generator.json", "checkpoints/generator.bin"].map(String::from));
    if evaluator.is_some() {
        files.extend(["checkpoints/evaluator.json", "checkpoints/evaluator.bin"].map(String::from));
    }
    if cfg.plot {
        files.extend(["checkpoints/predictor.json", "checkpoints/predictor.bin"].map(String::from));
    }
    files.sort();
    let manifest = RunManifest {
        label: cfg.label(),
        seed: cfg.seed,
        plot: cfg.plot,
        rework: cfg.rework,
        elements: cfg.elements,
        graphs: cfg.graphs,
        epochs: cfg.epochs,
        reward_start: cfg.reward_start,
        files: &files,
    };
    let manifest = serde_json::to_vec_pretty(&manifest).expect("manifest serialises");
    write_bytes(&dir.join("run.json"), &manifest).at(Metrics)?;
    let mut paths: Vec<PathBuf> = files.iter().map(|f| dir.join(f)).collect();
    paths.push(dir.join("run.json"));
    Ok(PipelineOutput { label: cfg.label(), dir, stories: generated.len(), metrics_line: metrics, files: paths })
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("records serialise")
}
