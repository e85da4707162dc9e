//! Storyline pathfinding by repeated single-hop relation classification.
//!
//! At each step the scorer encodes the sequence's objects followed by every
//! relation chosen so far with a bidirectional LSTM, projects each candidate
//! relation's embedding into the same space and scores it by dot product.
//! A logistic termination head on the same encoder state decides, at each
//! transition token, whether the storyline ends there.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{sigmoid, Adam, AdamConfig, Grads, Graph, ParamId, ParamStore, Tensor, Var};
use crate::corpus::{is_transition_token, parse_transition_token, transition_token, GoldenStoryline, StoryElements, EMPTY_FRAME};
use crate::error::{Error, Result};
use crate::kgraph::{assemble_story_graph, KnowledgeGraph, StoryEntity, StoryGraph, TOKEN_POSITION};
use crate::vocab::{fnv1a, Vocab};

/// Frame of the synthetic relation offered at transition tokens.
pub const TERMINATE_FRAME: &str = "TERMINATE";
const TERMINATE_TAIL: &str = "<end>";
const QUERY_START: &str = "<q>";
/// Width of the one-hot image-position block (images 0..=4 plus tokens).
pub const POSITION_SLOTS: usize = 6;

/// A `[frame.tail]` candidate leaving the current head entity.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Relation {
    pub frame: String,
    pub tail: String,
    pub tail_position: u8,
}

impl Relation {
    pub fn new(frame: &str, tail: &str, tail_position: u8) -> Self {
        Self { frame: frame.to_string(), tail: tail.to_string(), tail_position }
    }

    pub fn terminate() -> Self {
        Self::new(TERMINATE_FRAME, TERMINATE_TAIL, TOKEN_POSITION)
    }

    pub fn is_terminate(&self) -> bool {
        self.frame == TERMINATE_FRAME
    }

    pub fn display(&self) -> String {
        format!("{}.{}", self.frame, self.tail)
    }

    pub fn tail_entity(&self) -> StoryEntity {
        StoryEntity { label: self.tail.clone(), position: self.tail_position }
    }

    fn sort_key(&self) -> (String, u8) {
        (self.display(), self.tail_position)
    }
}

/// Concatenated `[one-hot(frame); one-hot(position); word(frame); word(tail)]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RelationEmbedding {
    pub graphical: Vec<f64>,
    pub textual: Vec<f64>,
}

impl RelationEmbedding {
    pub fn full(&self) -> Vec<f64> {
        self.graphical.iter().chain(&self.textual).copied().collect()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScoringConfig {
    pub embed_dim: usize,
    pub hidden: usize,
    pub oov_buckets: usize,
    pub init_scale: f64,
    /// Start the candidate projection at zero (every score equal).
    pub zero_projection: bool,
    pub seed: u64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self { embed_dim: 50, hidden: 64, oov_buckets: 1024, init_scale: 0.1, zero_projection: false, seed: 0 }
    }
}

#[derive(Clone, Copy, Debug)]
struct LstmIds {
    wx: ParamId,
    wh: ParamId,
    b: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct ScoringIds {
    words: ParamId,
    hist_w: ParamId,
    hist_b: ParamId,
    fwd: LstmIds,
    bwd: LstmIds,
    cand_w: ParamId,
    stop_w: ParamId,
    stop_b: ParamId,
}

#[derive(Serialize, Deserialize)]
struct ScoringMeta {
    config: ScoringConfig,
    words: Vec<String>,
    frames: Vec<String>,
}

/// Relation scorer with a bidirectional LSTM query encoder.
#[derive(Clone, Debug)]
pub struct ScoringModel {
    pub config: ScoringConfig,
    words: Vocab,
    frames: Vocab,
    pub params: ParamStore,
    ids: ScoringIds,
}

impl ScoringModel {
    /// `frames` is the verb-frame inventory; `empty_frame` always occupies
    /// the extra last slot of the one-hot block and is dropped from it if
    /// present. `words` seeds the embedding vocabulary.
    pub fn new<'a>(
        config: ScoringConfig,
        frames: impl IntoIterator<Item = &'a String>,
        words: impl IntoIterator<Item = &'a String>,
    ) -> Self {
        let frames = Vocab::build(&[], frames.into_iter().filter(|f| f.as_str() != EMPTY_FRAME));
        let mut specials: Vec<String> = (0..=32).map(transition_token).collect();
        specials.extend([QUERY_START.to_string(), EMPTY_FRAME.to_string()]);
        let words = Vocab::build(
            &[],
            words.into_iter().cloned().chain(frames.tokens().iter().cloned()).chain(specials),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (d, h) = (config.embed_dim, config.hidden);
        let rel_dim = frames.len() + 1 + POSITION_SLOTS + 2 * d;
        let mut p = ParamStore::new();
        let words_id = p.uniform("scorer.words", words.len() + config.oov_buckets, d, config.init_scale, &mut rng);
        let hist_w = p.glorot("scorer.hist_w", rel_dim, d, &mut rng);
        let hist_b = p.zeros("scorer.hist_b", 1, d);
        let lstm = |p: &mut ParamStore, name: &str, rng: &mut ChaCha8Rng| {
            let wx = p.glorot(format!("scorer.{name}.wx"), d, 4 * h, rng);
            let wh = p.glorot(format!("scorer.{name}.wh"), h, 4 * h, rng);
            let mut bias = Tensor::zeros(1, 4 * h);
            bias.data[h..2 * h].iter_mut().for_each(|v| *v = 1.0);
            let b = p.insert(format!("scorer.{name}.b"), bias);
            LstmIds { wx, wh, b }
        };
        let fwd = lstm(&mut p, "fwd", &mut rng);
        let bwd = lstm(&mut p, "bwd", &mut rng);
        let cand_w = if config.zero_projection {
            p.zeros("scorer.cand_w", rel_dim, 2 * h)
        } else {
            p.glorot("scorer.cand_w", rel_dim, 2 * h, &mut rng)
        };
        let stop_w = p.glorot("scorer.stop_w", 2 * h, 1, &mut rng);
        let stop_b = p.zeros("scorer.stop_b", 1, 1);
        let ids = ScoringIds { words: words_id, hist_w, hist_b, fwd, bwd, cand_w, stop_w, stop_b };
        Self { config, words, frames, params: p, ids }
    }

    pub fn frame_inventory(&self) -> &[String] {
        self.frames.tokens()
    }

    pub fn relation_dim(&self) -> usize {
        self.frames.len() + 1 + POSITION_SLOTS + 2 * self.config.embed_dim
    }

    /// Embedding row for a token; unknown tokens hash into the OOV buckets.
    pub fn word_row(&self, token: &str) -> usize {
        match self.words.get(token) {
            Some(i) => i,
            None => self.words.len() + (fnv1a(token) % self.config.oov_buckets.max(1) as u64) as usize,
        }
    }

    fn frame_slot(&self, frame: &str) -> usize {
        self.frames.get(frame).unwrap_or(self.frames.len())
    }

    /// Overwrites embedding rows of known tokens with pretrained vectors.
    /// Returns how many rows were replaced.
    pub fn load_word_vectors(&mut self, vectors: &HashMap<String, Vec<f64>>) -> Result<usize> {
        let d = self.config.embed_dim;
        let mut replaced = 0;
        for (tok, vec) in vectors {
            if vec.len() != d {
                return Err(Error::InvalidInput(format!("vector for {tok} has {} dims, expected {d}", vec.len())));
            }
            if let Some(row) = self.words.get(tok) {
                self.params.get_mut(self.ids.words).row_mut(row).copy_from_slice(vec);
                replaced += 1;
            }
        }
        Ok(replaced)
    }

    pub fn save(&self, dir: &std::path::Path, stem: &str) -> Result<()> {
        let meta = ScoringMeta {
            config: self.config.clone(),
            words: self.words.tokens().to_vec(),
            frames: self.frames.tokens().to_vec(),
        };
        crate::checkpoint::save(dir, stem, &self.params, serde_json::to_value(meta).expect("meta serialises"))
    }

    pub fn load(dir: &std::path::Path, stem: &str) -> Result<Self> {
        let (params, meta) = crate::checkpoint::load(dir, stem)?;
        let meta: ScoringMeta = serde_json::from_value(meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let id = |n: &str| params.id(n).ok_or_else(|| Error::Checkpoint(format!("missing tensor {n}")));
        let lstm = |name: &str| -> Result<LstmIds> {
            Ok(LstmIds {
                wx: id(&format!("scorer.{name}.wx"))?,
                wh: id(&format!("scorer.{name}.wh"))?,
                b: id(&format!("scorer.{name}.b"))?,
            })
        };
        let ids = ScoringIds {
            words: id("scorer.words")?,
            hist_w: id("scorer.hist_w")?,
            hist_b: id("scorer.hist_b")?,
            fwd: lstm("fwd")?,
            bwd: lstm("bwd")?,
            cand_w: id("scorer.cand_w")?,
            stop_w: id("scorer.stop_w")?,
            stop_b: id("scorer.stop_b")?,
        };
        let words = Vocab::from_tokens(meta.words);
        let frames = Vocab::from_tokens(meta.frames);
        let expected = (words.len() + meta.config.oov_buckets, meta.config.embed_dim);
        if params.get(ids.words).shape() != expected {
            return Err(Error::Checkpoint("scorer embedding shape does not match metadata".into()));
        }
        Ok(Self { config: meta.config, words, frames, params, ids })
    }

    fn graphical_block(&self, r: &Relation) -> Vec<f64> {
        let mut v = vec![0.0; self.frames.len() + 1 + POSITION_SLOTS];
        v[self.frame_slot(&r.frame)] = 1.0;
        v[self.frames.len() + 1 + (r.tail_position as usize).min(POSITION_SLOTS - 1)] = 1.0;
        v
    }

    pub fn relation_embedding(&self, r: &Relation) -> RelationEmbedding {
        let words = self.params.get(self.ids.words);
        let mut textual = words.row(self.word_row(&r.frame)).to_vec();
        textual.extend_from_slice(words.row(self.word_row(&r.tail)));
        RelationEmbedding { graphical: self.graphical_block(r), textual }
    }

    fn relation_matrix(&self, g: &mut Graph, rels: &[Relation]) -> Var {
        let gw = self.frames.len() + 1 + POSITION_SLOTS;
        let mut onehot = Tensor::zeros(rels.len(), gw);
        for (i, r) in rels.iter().enumerate() {
            onehot.row_mut(i).copy_from_slice(&self.graphical_block(r));
        }
        let onehot = g.input(onehot);
        let frame_rows: Vec<usize> = rels.iter().map(|r| self.word_row(&r.frame)).collect();
        let tail_rows: Vec<usize> = rels.iter().map(|r| self.word_row(&r.tail)).collect();
        let fe = g.gather(self.ids.words, &frame_rows);
        let te = g.gather(self.ids.words, &tail_rows);
        g.concat_cols(&[onehot, fe, te])
    }

    /// Encoder inputs: `<q>`, the objects, then every relation in `history`.
    fn query_inputs(&self, g: &mut Graph, objects: &[String], history: &[Relation]) -> Var {
        let mut rows = vec![self.word_row(QUERY_START)];
        rows.extend(objects.iter().map(|o| self.word_row(o)));
        let head = g.gather(self.ids.words, &rows);
        if history.is_empty() {
            return head;
        }
        let rel = self.relation_matrix(g, history);
        let w = g.param(self.ids.hist_w);
        let b = g.param(self.ids.hist_b);
        let proj = g.matmul(rel, w);
        let proj = g.add_row(proj, b);
        let proj = g.tanh(proj);
        g.concat_rows(&[head, proj])
    }

    fn lstm_run(&self, g: &mut Graph, ids: LstmIds, xw: Var, order: impl Iterator<Item = usize>) -> Vec<Var> {
        let h = self.config.hidden;
        let wh = g.param(ids.wh);
        let b = g.param(ids.b);
        let mut hs = g.input(Tensor::zeros(1, h));
        let mut cs = g.input(Tensor::zeros(1, h));
        let mut out = Vec::new();
        for t in order {
            let x = g.row(xw, t);
            let rec = g.matmul(hs, wh);
            let z = g.add(x, rec);
            let z = g.add(z, b);
            let i = g.slice_cols(z, 0, h);
            let f = g.slice_cols(z, h, 2 * h);
            let c_hat = g.slice_cols(z, 2 * h, 3 * h);
            let o = g.slice_cols(z, 3 * h, 4 * h);
            let (i, f, o) = (g.sigmoid(i), g.sigmoid(f), g.sigmoid(o));
            let c_hat = g.tanh(c_hat);
            let keep = g.mul(f, cs);
            let write = g.mul(i, c_hat);
            cs = g.add(keep, write);
            let ct = g.tanh(cs);
            hs = g.mul(o, ct);
            out.push(hs);
        }
        out
    }

    /// Encoder states for every prefix length in `prefixes` (each counted in
    /// input rows). The forward direction is shared between prefixes.
    fn encode_prefixes(&self, g: &mut Graph, inputs: Var, prefixes: &[usize]) -> Vec<Var> {
        let n = g.value(inputs).rows;
        let fwx = g.param(self.ids.fwd.wx);
        let bwx = g.param(self.ids.bwd.wx);
        let fxw = g.matmul(inputs, fwx);
        let bxw = g.matmul(inputs, bwx);
        let forward = self.lstm_run(g, self.ids.fwd, fxw, 0..n);
        prefixes
            .iter()
            .map(|&m| {
                let backward = self.lstm_run(g, self.ids.bwd, bxw, (0..m).rev());
                g.concat_cols(&[forward[m - 1], *backward.last().expect("prefix is non-empty")])
            })
            .collect()
    }

    fn encode(&self, g: &mut Graph, objects: &[String], history: &[Relation]) -> Var {
        let inputs = self.query_inputs(g, objects, history);
        let n = g.value(inputs).rows;
        self.encode_prefixes(g, inputs, &[n])[0]
    }

    /// `1 × n` candidate scores.
    fn candidate_logits(&self, g: &mut Graph, state: Var, candidates: &[Relation]) -> Var {
        let c = self.relation_matrix(g, candidates);
        let w = g.param(self.ids.cand_w);
        let proj = g.matmul(c, w);
        g.matmul_t(state, proj)
    }

    fn stop_logit(&self, g: &mut Graph, state: Var) -> Var {
        let w = g.param(self.ids.stop_w);
        let b = g.param(self.ids.stop_b);
        let z = g.matmul(state, w);
        g.add(z, b)
    }

    /// Probability that the storyline should end given this history.
    pub fn stop_probability(&self, objects: &[String], history: &[Relation]) -> f64 {
        let mut g = Graph::new(&self.params);
        let s = self.encode(&mut g, objects, history);
        let z = self.stop_logit(&mut g, s);
        sigmoid(g.scalar(z))
    }

    /// Teacher-forced loss of one walk: softmax cross-entropy of each golden
    /// relation among its candidates plus binary termination losses.
    fn walk_loss(&self, g: &mut Graph, walk: &Walk) -> Var {
        let inputs = self.query_inputs(g, &walk.objects, &walk.golden_relations());
        let base = 1 + walk.objects.len();
        let mut prefixes: Vec<usize> = (0..walk.steps.len()).map(|i| base + i).collect();
        prefixes.push(base + walk.steps.len());
        let states = self.encode_prefixes(g, inputs, &prefixes);
        let mut terms = Vec::new();
        for (i, step) in walk.steps.iter().enumerate() {
            let logits = self.candidate_logits(g, states[i], &step.candidates);
            terms.push(g.cross_entropy(logits, &[step.target]));
            if let Some(stop) = step.stop_target {
                let z = self.stop_logit(g, states[i]);
                terms.push(g.bce_with_logits(z, &[stop]));
            }
        }
        let z = self.stop_logit(g, states[walk.steps.len()]);
        terms.push(g.bce_with_logits(z, &[1.0]));
        let mut total = terms[0];
        for &t in &terms[1..] {
            total = g.add(total, t);
        }
        total
    }

    pub fn walk_loss_and_grads(&self, walk: &Walk) -> (f64, Grads) {
        let mut g = Graph::new(&self.params);
        let loss = self.walk_loss(&mut g, walk);
        (g.scalar(loss), g.backward(loss))
    }

    /// Teacher-forced loss of a walk with current parameters.
    pub fn walk_loss_value(&self, walk: &Walk) -> f64 {
        let mut g = Graph::new(&self.params);
        let loss = self.walk_loss(&mut g, walk);
        g.scalar(loss)
    }

    /// Fraction of steps where the golden relation scores highest.
    pub fn walk_accuracy(&self, walk: &Walk) -> (usize, usize) {
        let mut history = Vec::new();
        let mut hits = 0;
        for step in &walk.steps {
            let pick = single_hop(self, &walk.objects, &history, &step.candidates).expect("non-empty candidates");
            let gold = &step.candidates[step.target];
            hits += usize::from(&pick == gold);
            history.push(gold.clone());
        }
        (hits, walk.steps.len())
    }
}

/// Embedding of `r` under the model's current word vectors.
pub fn relation_embedding(r: &Relation, model: &ScoringModel) -> RelationEmbedding {
    model.relation_embedding(r)
}

/// Outgoing relations of `head`, sorted by display string then position.
/// Transition tokens past `<s0>` also offer the synthetic terminate relation.
pub fn candidate_relations(graph: &StoryGraph, head: &StoryEntity) -> Result<Vec<Relation>> {
    if !graph.contains_entity(head) {
        return Err(Error::UnknownEntity(head.to_string()));
    }
    let mut out: Vec<Relation> = graph
        .outgoing(head)
        .iter()
        .map(|r| Relation::new(&r.frame, &r.tail.label, r.tail.position))
        .collect();
    out.sort_by_key(Relation::sort_key);
    if head.is_token() && parse_transition_token(&head.label).is_some_and(|i| i > 0) {
        out.push(Relation::terminate());
    }
    Ok(out)
}

pub fn score_candidates(
    model: &ScoringModel,
    objects: &[String],
    history: &[Relation],
    candidates: &[Relation],
) -> Result<Vec<f64>> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let mut g = Graph::new(&model.params);
    let s = model.encode(&mut g, objects, history);
    let logits = model.candidate_logits(&mut g, s, candidates);
    let scores = g.value(logits).data.clone();
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("candidate score".into()));
    }
    Ok(scores)
}

/// Index of the best score; ties go to the smallest display string, then
/// the smallest tail position.
pub fn argmax_relation(scores: &[f64], candidates: &[Relation]) -> usize {
    let mut best = 0;
    for i in 1..candidates.len() {
        let better = scores[i] > scores[best]
            || (scores[i] == scores[best] && candidates[i].sort_key() < candidates[best].sort_key());
        if better {
            best = i;
        }
    }
    best
}

pub fn single_hop(
    model: &ScoringModel,
    objects: &[String],
    history: &[Relation],
    candidates: &[Relation],
) -> Result<Relation> {
    let scores = score_candidates(model, objects, history, candidates)?;
    Ok(candidates[argmax_relation(&scores, candidates)].clone())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hop {
    pub head: StoryEntity,
    pub relation: Relation,
}

/// Predicted path split into events, each closed by a transition token.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Storyline {
    pub events: Vec<Vec<Hop>>,
}

impl Storyline {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn hops(&self) -> impl Iterator<Item = &Hop> {
        self.events.iter().flatten()
    }

    pub fn relations(&self) -> Vec<Relation> {
        self.hops().map(|h| h.relation.clone()).collect()
    }

    /// Chain, event-closure and (optionally) graph-membership checks.
    pub fn validate(&self, graph: Option<&StoryGraph>) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(format!("storyline: {m}")));
        if self.events.is_empty() {
            return bad("no events".into());
        }
        let mut expected_head = StoryEntity::token(0);
        for (i, event) in self.events.iter().enumerate() {
            let Some(last) = event.last() else { return bad(format!("event {i} is empty")) };
            if parse_transition_token(&last.relation.tail) != Some(i + 1) {
                return bad(format!("event {i} does not end at <s{}>", i + 1));
            }
            for hop in event {
                if hop.head != expected_head {
                    return bad(format!("hop head {} does not continue from {}", hop.head, expected_head));
                }
                if let Some(g) = graph {
                    if !g.contains_relation(&hop.head, &hop.relation.frame, &hop.relation.tail_entity()) {
                        return bad(format!("{} -> {} is not in the story graph", hop.head, hop.relation.display()));
                    }
                }
                expected_head = hop.relation.tail_entity();
            }
        }
        Ok(())
    }

    /// Story-graph form of a golden storyline. Positions come from
    /// `positions`, defaulting to the sentence index (capped at 4).
    pub fn from_golden(golden: &GoldenStoryline, positions: &BTreeMap<String, u8>) -> Self {
        let lookup = |label: &str, sentence: usize| -> u8 {
            if is_transition_token(label) {
                TOKEN_POSITION
            } else {
                positions.get(label).copied().unwrap_or(sentence.min(4) as u8)
            }
        };
        let events = golden
            .events()
            .into_iter()
            .enumerate()
            .map(|(s, hops)| {
                hops.iter()
                    .map(|t| Hop {
                        head: StoryEntity { label: t.head.clone(), position: lookup(&t.head, s) },
                        relation: Relation::new(&t.frame, &t.tail, lookup(&t.tail, s)),
                    })
                    .collect()
            })
            .collect();
        Storyline { events }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PredictorConfig {
    pub epochs: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub max_sentences: usize,
    pub max_hops_per_event: usize,
    pub max_events: usize,
    /// Stop once training-set hop accuracy reaches this value (checked after
    /// each epoch); `None` always runs every epoch.
    pub early_stop_accuracy: Option<f64>,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            adam: AdamConfig::with_lr(2e-3),
            seed: 0,
            max_sentences: crate::kgraph::DEFAULT_MAX_SENTENCES,
            max_hops_per_event: 6,
            max_events: 10,
            early_stop_accuracy: None,
        }
    }
}

/// Training input: one sequence's objects and its golden storyline.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PlotExample {
    pub objects: Vec<String>,
    pub elements: StoryElements,
    pub golden: GoldenStoryline,
}

impl PlotExample {
    /// Element positions: objects/terms by image, remaining golden nouns by
    /// their first sentence (capped at image 4).
    pub fn positions(&self) -> BTreeMap<String, u8> {
        let mut pos = BTreeMap::new();
        for fam in [&self.elements.objects, &self.elements.terms] {
            for (i, labels) in fam.iter().enumerate() {
                for l in labels {
                    let e = pos.entry(l.clone()).or_insert(i.min(4) as u8);
                    *e = (*e).min(i.min(4) as u8);
                }
            }
        }
        for (s, event) in self.golden.events().into_iter().enumerate() {
            for t in event {
                for n in [&t.head, &t.tail] {
                    if !is_transition_token(n) {
                        pos.entry(n.clone()).or_insert(s.min(4) as u8);
                    }
                }
            }
        }
        pos
    }

    /// Elements augmented with every golden noun at its position.
    fn training_elements(&self) -> StoryElements {
        let positions = self.positions();
        let mut terms: Vec<Vec<String>> = vec![Vec::new(); 5];
        for (i, t) in self.elements.terms.iter().enumerate().take(5) {
            terms[i].extend(t.iter().cloned());
        }
        for n in self.golden.nouns() {
            terms[positions[&n] as usize].push(n);
        }
        let mut objects = self.elements.objects.clone();
        objects.resize(5, Vec::new());
        StoryElements::new(objects, terms)
    }
}

/// One teacher-forced step: candidates, the golden index, and (at
/// transition tokens past `<s0>`) the termination target.
#[derive(Clone, Debug)]
pub struct WalkStep {
    pub head: StoryEntity,
    pub candidates: Vec<Relation>,
    pub target: usize,
    pub stop_target: Option<f64>,
}

/// A golden storyline prepared for teacher forcing.
#[derive(Clone, Debug)]
pub struct Walk {
    pub objects: Vec<String>,
    pub steps: Vec<WalkStep>,
}

impl Walk {
    pub fn golden_relations(&self) -> Vec<Relation> {
        self.steps.iter().map(|s| s.candidates[s.target].clone()).collect()
    }
}

/// Drops candidates inference would never take: the terminate relation,
/// transition tokens other than the next one, and (when `must_close`)
/// everything except the next token.
fn admissible(candidates: Vec<Relation>, next_token: usize, must_close: bool) -> Vec<Relation> {
    candidates
        .into_iter()
        .filter(|r| !r.is_terminate())
        .filter(|r| match parse_transition_token(&r.tail) {
            Some(i) => i == next_token,
            None => !must_close,
        })
        .collect()
}

/// Builds the teacher-forced walk for one example.
///
/// Candidates at each golden head are that head's relations in the
/// example's own story graph, its outgoing knowledge-graph relations and the
/// golden relation.
pub fn prepare_walk(example: &PlotExample, kg: &KnowledgeGraph, max_sentences: usize) -> Result<Walk> {
    let sentences = example.golden.sentence_count;
    let k = max_sentences.max(sentences);
    let graph = assemble_story_graph(&example.training_elements(), kg, k)?;
    let positions = example.positions();
    let storyline = Storyline::from_golden(&example.golden, &positions);
    let mut steps = Vec::new();
    for (e, event) in storyline.events.iter().enumerate() {
        for hop in event {
            let rel = &hop.relation;
            let involves_token = hop.head.is_token() || is_transition_token(&rel.tail);
            if !involves_token && rel.frame != EMPTY_FRAME && !kg.contains(&hop.head.label, &rel.frame, &rel.tail) {
                return Err(Error::MissingHop(format!("({}, {}, {})", hop.head.label, rel.frame, rel.tail)));
            }
            let mut set: BTreeSet<Relation> = admissible(candidate_relations(&graph, &hop.head)?, e + 1, false)
                .into_iter()
                .collect();
            if !hop.head.is_token() {
                for (f, t) in kg.outgoing(&hop.head.label) {
                    set.insert(Relation::new(f, t, positions.get(t).copied().unwrap_or(0)));
                }
            }
            set.insert(rel.clone());
            let mut candidates: Vec<Relation> = set.into_iter().collect();
            candidates.sort_by_key(Relation::sort_key);
            if candidates.is_empty() {
                return Err(Error::NoCandidates(hop.head.label.clone()));
            }
            let target = candidates.iter().position(|c| c == rel).expect("golden relation inserted");
            let stop_target = match parse_transition_token(&hop.head.label) {
                Some(i) if i > 0 => Some(0.0),
                _ => None,
            };
            steps.push(WalkStep { head: hop.head.clone(), candidates, target, stop_target });
        }
    }
    Ok(Walk { objects: example.objects.clone(), steps })
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct PredictorTrainReport {
    pub epoch_losses: Vec<f64>,
    pub epoch_accuracy: Vec<f64>,
}

/// Hop accuracy over prepared walks.
pub fn hop_accuracy(model: &ScoringModel, walks: &[Walk]) -> f64 {
    let (mut hit, mut total) = (0, 0);
    for w in walks {
        let (h, t) = model.walk_accuracy(w);
        hit += h;
        total += t;
    }
    if total == 0 {
        0.0
    } else {
        hit as f64 / total as f64
    }
}

/// Teacher-forced training over golden storylines, one Adam step per
/// storyline, examples shuffled per epoch from the configured seed.
pub fn train_predictor(
    model: &mut ScoringModel,
    examples: &[PlotExample],
    kg: &KnowledgeGraph,
    cfg: &PredictorConfig,
) -> Result<PredictorTrainReport> {
    let walks = examples
        .iter()
        .map(|ex| prepare_walk(ex, kg, cfg.max_sentences))
        .collect::<Result<Vec<_>>>()?;
    train_on_walks(model, &walks, cfg)
}

pub fn train_on_walks(model: &mut ScoringModel, walks: &[Walk], cfg: &PredictorConfig) -> Result<PredictorTrainReport> {
    if walks.is_empty() {
        return Err(Error::InvalidInput("no golden storylines to train on".into()));
    }
    let mut opt = Adam::new(cfg.adam, &model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..walks.len()).collect();
    let mut report = PredictorTrainReport::default();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let (loss, grads) = model.walk_loss_and_grads(&walks[i]);
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("predictor loss on example {i}")));
            }
            total += loss;
            opt.step(&mut model.params, &grads);
        }
        report.epoch_losses.push(total / walks.len() as f64);
        if let Some(target) = cfg.early_stop_accuracy {
            let acc = hop_accuracy(model, walks);
            report.epoch_accuracy.push(acc);
            if acc >= target {
                break;
            }
        }
    }
    Ok(report)
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PathfindConfig {
    pub max_hops_per_event: usize,
    pub max_events: usize,
}

impl Default for PathfindConfig {
    fn default() -> Self {
        Self { max_hops_per_event: 6, max_events: 10 }
    }
}

impl From<&PredictorConfig> for PathfindConfig {
    fn from(c: &PredictorConfig) -> Self {
        Self { max_hops_per_event: c.max_hops_per_event, max_events: c.max_events }
    }
}

/// Walks the story graph from `<s0>` with single-hop classification.
///
/// Reaching `<s_i>` closes event `i`. At each such token the termination
/// head decides whether to stop; stopping is forced at `max_events` or when
/// no admissible candidate remains. Within an event, the last hop allowed by
/// `max_hops_per_event` must go to the next transition token.
pub fn predict_storyline(
    model: &ScoringModel,
    graph: &StoryGraph,
    objects: &[String],
    cfg: &PathfindConfig,
) -> Result<Storyline> {
    let start = StoryEntity::token(0);
    let mut head = start.clone();
    let mut history: Vec<Relation> = Vec::new();
    let mut events: Vec<Vec<Hop>> = Vec::new();
    let mut current: Vec<Hop> = Vec::new();
    loop {
        if head.is_token() && head != start {
            if events.len() >= cfg.max_events.max(1) || model.stop_probability(objects, &history) > 0.5 {
                break;
            }
        }
        let next_token = events.len() + 1;
        let must_close = current.len() + 1 >= cfg.max_hops_per_event.max(1);
        let candidates = admissible(candidate_relations(graph, &head)?, next_token, must_close);
        if candidates.is_empty() {
            if head == start {
                return Err(Error::NoCandidates(head.label));
            }
            break;
        }
        let rel = single_hop(model, objects, &history, &candidates)?;
        current.push(Hop { head: head.clone(), relation: rel.clone() });
        head = rel.tail_entity();
        history.push(rel);
        if head.is_token() {
            events.push(std::mem::take(&mut current));
        }
    }
    if events.is_empty() {
        return Err(Error::NoCandidates(start.label));
    }
    Ok(Storyline { events })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::{grad_check, GradCheckConfig};
    use crate::corpus::{build_golden_storyline, AnnotatedSentence, NvnTuple};
    use crate::kgraph::{build_knowledge_graph, StoryRelation};

    fn strs(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    fn small_config() -> ScoringConfig {
        ScoringConfig { embed_dim: 6, hidden: 5, oov_buckets: 8, ..Default::default() }
    }

    fn fig3_kg() -> KnowledgeGraph {
        build_knowledge_graph(&[
            NvnTuple::new("dog", "self_motion", "park"),
            NvnTuple::new("dog", "self_motion", "owner"),
            NvnTuple::new("park", "placing", "owner"),
        ])
    }

    fn fig3_example() -> PlotExample {
        let s1 = AnnotatedSentence::new(&["dog", "park"], &["dog", "park"], &[("self_motion", "dog", "park")]);
        let s2 = AnnotatedSentence::new(&["owner"], &["owner"], &[]);
        PlotExample {
            objects: strs(&["dog", "park", "owner"]),
            elements: StoryElements::new(
                vec![strs(&["dog", "park"]), strs(&["owner"]), vec![], vec![], vec![]],
                vec![vec![]; 5],
            ),
            golden: build_golden_storyline(&[s1, s2]).unwrap(),
        }
    }

    fn model_for(kg: &KnowledgeGraph, cfg: ScoringConfig) -> ScoringModel {
        ScoringModel::new(cfg, kg.frames(), kg.nodes())
    }

    #[test]
    fn embedding_layout_by_hand() {
        let frames = strs(&["cause_motion", "placing", "self_motion", "travel"]);
        let words = strs(&["park", "owner"]);
        let mut model = ScoringModel::new(ScoringConfig { embed_dim: 3, ..small_config() }, &frames, &words);
        let mut table = HashMap::new();
        table.insert("self_motion".to_string(), vec![0.1, 0.2, 0.3]);
        table.insert("park".to_string(), vec![-1.0, 0.5, 2.0]);
        assert_eq!(model.load_word_vectors(&table).unwrap(), 2);
        let e = model.relation_embedding(&Relation::new("self_motion", "park", 0));
        assert_eq!(e.graphical, vec![0., 0., 1., 0., 0., 1., 0., 0., 0., 0., 0.]);
        assert_eq!(e.textual, vec![0.1, 0.2, 0.3, -1.0, 0.5, 2.0]);
        assert_eq!(e.full().len(), model.relation_dim());

        let t = model.relation_embedding(&Relation::new(EMPTY_FRAME, "<s3>", TOKEN_POSITION));
        assert_eq!(t.graphical.iter().filter(|&&v| v == 1.0).count(), 2);
        assert_eq!(t.graphical[4], 1.0);
        assert_eq!(t.graphical[5 + 5], 1.0);
    }

    #[test]
    fn tail_disambiguates_same_frame() {
        let kg = fig3_kg();
        let model = model_for(&kg, small_config());
        let a = model.relation_embedding(&Relation::new("self_motion", "park", 0));
        let b = model.relation_embedding(&Relation::new("self_motion", "owner", 1));
        let d = model.config.embed_dim;
        assert_eq!(a.graphical[..3], b.graphical[..3]);
        assert_eq!(a.textual[..d], b.textual[..d]);
        assert_ne!(a.textual[d..], b.textual[d..]);
        assert_ne!(a.full(), b.full());
    }

    #[test]
    fn oov_tokens_hash_into_reserved_rows() {
        let model = model_for(&fig3_kg(), small_config());
        let r = model.word_row("zeppelin");
        assert!(r >= model.words.len() && r < model.words.len() + 8);
        assert_eq!(r, model.word_row("zeppelin"));
    }

    fn fig3_graph() -> StoryGraph {
        let el = fig3_example().elements;
        assemble_story_graph(&el, &fig3_kg(), 3).unwrap()
    }

    #[test]
    fn fig3_candidates() {
        let g = fig3_graph();
        let c = candidate_relations(&g, &StoryEntity::element("dog", 0)).unwrap();
        let shown: Vec<String> = c.iter().map(Relation::display).collect();
        assert_eq!(
            shown,
            vec![
                "empty_frame.<s1>",
                "empty_frame.<s2>",
                "empty_frame.<s3>",
                "empty_frame.owner",
                "empty_frame.park",
                "self_motion.owner",
                "self_motion.park"
            ]
        );
        let tok = candidate_relations(&g, &StoryEntity::token(2)).unwrap();
        assert_eq!(tok.len(), 4);
        assert!(tok.last().unwrap().is_terminate());
        assert!(candidate_relations(&g, &StoryEntity::token(0)).unwrap().iter().all(|r| !r.is_terminate()));
        assert!(candidate_relations(&g, &StoryEntity::element("cat", 0)).is_err());
    }

    #[test]
    fn isolated_head_has_no_candidates() {
        let x = StoryEntity::element("x", 0);
        let g = StoryGraph::from_parts([x.clone(), StoryEntity::token(0)], []).unwrap();
        assert!(candidate_relations(&g, &x).unwrap().is_empty());
    }

    #[test]
    fn zero_projection_gives_equal_scores_and_tie_break() {
        let kg = fig3_kg();
        let model = model_for(&kg, ScoringConfig { zero_projection: true, ..small_config() });
        let cands = vec![Relation::new("self_motion", "park", 0), Relation::new("self_motion", "owner", 1)];
        let scores = score_candidates(&model, &strs(&["dog"]), &[], &cands).unwrap();
        assert_eq!(scores[0], scores[1]);
        let pick = single_hop(&model, &strs(&["dog"]), &[], &cands).unwrap();
        assert_eq!(pick.display(), "self_motion.owner");
        assert!(matches!(score_candidates(&model, &[], &[], &[]), Err(Error::EmptyCandidates)));
    }

    #[test]
    fn argmax_rules() {
        let c = vec![Relation::new("a", "x", 0), Relation::new("b", "y", 0), Relation::new("c", "z", 0)];
        assert_eq!(argmax_relation(&[0.1, 0.9, 0.3], &c), 1);
        let c = vec![Relation::new("f", "t", 3), Relation::new("f", "t", 1)];
        assert_eq!(argmax_relation(&[0.5, 0.5], &c), 1);
        assert_eq!(argmax_relation(&[7.0], &c[..1]), 0);
    }

    #[test]
    fn scores_permute_with_candidates() {
        let model = model_for(&fig3_kg(), small_config());
        let cands = vec![
            Relation::new("self_motion", "park", 0),
            Relation::new("empty_frame", "owner", 1),
            Relation::new("placing", "owner", 1),
        ];
        let hist = vec![Relation::new(EMPTY_FRAME, "dog", 0)];
        let a = score_candidates(&model, &strs(&["dog"]), &hist, &cands).unwrap();
        let rev: Vec<_> = cands.iter().rev().cloned().collect();
        let b = score_candidates(&model, &strs(&["dog"]), &hist, &rev).unwrap();
        for i in 0..3 {
            assert!((a[i] - b[2 - i]).abs() < 1e-12);
        }
    }

    #[test]
    fn walk_matches_golden_and_errors_on_missing_hop() {
        let ex = fig3_example();
        let walk = prepare_walk(&ex, &fig3_kg(), 3).unwrap();
        assert_eq!(walk.steps.len(), ex.golden.hops.len());
        for (s, h) in walk.steps.iter().zip(&ex.golden.hops) {
            let gold = &s.candidates[s.target];
            assert_eq!((gold.frame.as_str(), gold.tail.as_str()), (h.frame.as_str(), h.tail.as_str()));
        }
        let thin = build_knowledge_graph(&[NvnTuple::new("dog", "placing", "park")]);
        match prepare_walk(&ex, &thin, 3) {
            Err(Error::MissingHop(h)) => assert!(h.contains("self_motion")),
            other => panic!("expected missing hop, got {other:?}"),
        }
    }

    #[test]
    fn hop_loss_gradients_match_finite_differences() {
        let kg = fig3_kg();
        let mut model = model_for(&kg, small_config());
        let walk = prepare_walk(&fig3_example(), &kg, 3).unwrap();
        let snapshot = model.clone();
        let cfg = GradCheckConfig { coords_per_tensor: 6, seed: 3, ..Default::default() };
        let report = grad_check(
            &mut model.params,
            |p| {
                let m = ScoringModel { params: p.clone(), ..snapshot.clone() };
                Ok(m.walk_loss_and_grads(&walk))
            },
            &cfg,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn overfit_reproduces_golden_path() {
        let kg = fig3_kg();
        let ex = fig3_example();
        let mut model = model_for(&kg, ScoringConfig { embed_dim: 12, hidden: 16, ..small_config() });
        let cfg = PredictorConfig { epochs: 200, adam: AdamConfig::with_lr(0.01), max_sentences: 3, ..Default::default() };
        train_predictor(&mut model, std::slice::from_ref(&ex), &kg, &cfg).unwrap();
        let walk = prepare_walk(&ex, &kg, 3).unwrap();
        assert_eq!(hop_accuracy(&model, &[walk]), 1.0);

        let graph = fig3_graph();
        let sl = predict_storyline(&model, &graph, &ex.objects, &PathfindConfig::default()).unwrap();
        sl.validate(Some(&graph)).unwrap();
        let path: Vec<String> = sl.hops().map(|h| h.relation.display()).collect();
        let golden: Vec<String> = ex.golden.hops.iter().map(|h| format!("{}.{}", h.frame, h.tail)).collect();
        assert_eq!(path, golden);
    }

    #[test]
    fn only_path_is_taken() {
        let (s0, s1, x) = (StoryEntity::token(0), StoryEntity::token(1), StoryEntity::element("x", 0));
        let rel = |h: &StoryEntity, t: &StoryEntity| StoryRelation { head: h.clone(), frame: EMPTY_FRAME.into(), tail: t.clone() };
        let g = StoryGraph::from_parts([s0.clone(), s1.clone(), x.clone()], [rel(&s0, &x), rel(&x, &s1)]).unwrap();
        let model = model_for(&fig3_kg(), small_config());
        let sl = predict_storyline(&model, &g, &[], &PathfindConfig { max_hops_per_event: 6, max_events: 1 }).unwrap();
        assert_eq!(
            sl.events,
            vec![vec![
                Hop { head: s0.clone(), relation: Relation::new(EMPTY_FRAME, "x", 0) },
                Hop { head: x, relation: Relation::new(EMPTY_FRAME, "<s1>", TOKEN_POSITION) },
            ]]
        );
        let lonely = StoryGraph::from_parts([s0], []).unwrap();
        assert!(matches!(predict_storyline(&model, &lonely, &[], &PathfindConfig::default()), Err(Error::NoCandidates(_))));
    }

    #[test]
    fn event_cap_is_respected() {
        let graph = fig3_graph();
        let mut model = model_for(&fig3_kg(), small_config());
        // push the termination head firmly towards "continue"
        let b = model.ids.stop_b;
        model.params.get_mut(b).data[0] = -50.0;
        for max_events in [1, 2] {
            let sl = predict_storyline(&model, &graph, &[], &PathfindConfig { max_hops_per_event: 3, max_events }).unwrap();
            assert!(sl.len() <= max_events);
            sl.validate(Some(&graph)).unwrap();
            assert!(sl.events.iter().all(|e| e.len() <= 3));
        }
    }

    #[test]
    fn training_is_bit_deterministic() {
        let kg = fig3_kg();
        let ex = fig3_example();
        let cfg = PredictorConfig { epochs: 3, max_sentences: 3, ..Default::default() };
        let run = || {
            let mut m = model_for(&kg, small_config());
            train_predictor(&mut m, std::slice::from_ref(&ex), &kg, &cfg).unwrap();
            m.params
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn save_load_preserves_scores() {
        let kg = fig3_kg();
        let m = model_for(&kg, small_config());
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path(), "scorer").unwrap();
        let r = ScoringModel::load(dir.path(), "scorer").unwrap();
        let objs = strs(&["dog", "park"]);
        let cands = vec![Relation::new("self_motion", "park", 0), Relation::new("placing", "owner", 1)];
        let a = score_candidates(&m, &objs, &[], &cands).unwrap();
        let b = score_candidates(&r, &objs, &[], &cands).unwrap();
        assert_eq!(a, b);
        assert_eq!(r.frame_inventory(), m.frame_inventory());
    }
}
