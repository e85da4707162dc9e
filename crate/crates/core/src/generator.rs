//! Event-conditioned sentence generator.
//!
//! A small pre-norm Transformer encoder-decoder. The encoder reads a
//! linearised event followed by the previous sentence; the decoder emits the
//! next sentence token by token. A story is produced one sentence per event.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Adam, AdamConfig, Grads, Graph, ParamId, ParamStore, Tensor, Var};
use crate::checkpoint;
use crate::corpus::{is_transition_token, AnnotatedSentence, GoldenStoryline, NvnTuple};
use crate::error::{Error, Result};
use crate::predictor::{Hop, Storyline};
use crate::vocab::Vocab;

pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const EVT: &str = "<evt>";
pub const SEP: &str = "<sep>";
pub const UNK: &str = "<unk>";

const SPECIALS: [&str; 5] = [BOS, EOS, EVT, SEP, UNK];
const MASKED: f64 = -1e9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub d_model: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub ffn_dim: usize,
    /// Longest encoder input; longer sources are truncated.
    pub max_source_len: usize,
    pub max_sentence_len: usize,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            heads: 2,
            encoder_layers: 2,
            decoder_layers: 2,
            ffn_dim: 128,
            max_source_len: 96,
            max_sentence_len: 25,
            seed: 0,
        }
    }
}

/// Generated story; every sentence ends with [`EOS`].
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Story {
    pub sentences: Vec<Vec<String>>,
}

impl Story {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// All tokens in order, end markers included.
    pub fn flat_tokens(&self) -> Vec<String> {
        self.sentences.concat()
    }

    /// Sentences as plain text, end markers dropped.
    pub fn texts(&self) -> Vec<String> {
        self.sentences.iter().map(|s| strip_eos(s).join(" ")).collect()
    }
}

fn strip_eos(s: &[String]) -> &[String] {
    match s.last() {
        Some(t) if t == EOS => &s[..s.len() - 1],
        _ => s,
    }
}

fn linearize<'a>(hops: impl IntoIterator<Item = (&'a str, &'a str, &'a str)>) -> Vec<String> {
    let mut out = vec![EVT.to_string()];
    let mut first = true;
    for (head, frame, tail) in hops {
        let head_tok = is_transition_token(head);
        let tail_tok = is_transition_token(tail);
        if first && !head_tok {
            out.push(head.to_string());
        }
        first = false;
        if !head_tok && !tail_tok {
            out.push(frame.to_string());
        }
        if !tail_tok {
            out.push(tail.to_string());
        }
    }
    out
}

/// `[EVT, noun, frame, noun, …]` with transition tokens left out.
pub fn encode_event(event: &[Hop]) -> Vec<String> {
    linearize(event.iter().map(|h| (h.head.label.as_str(), h.relation.frame.as_str(), h.relation.tail.as_str())))
}

pub fn encode_golden_event(event: &[NvnTuple]) -> Vec<String> {
    linearize(event.iter().map(|h| (h.head.as_str(), h.frame.as_str(), h.tail.as_str())))
}

/// Plot-free input: the event marker followed by bare terms.
pub fn encode_terms(terms: &[String]) -> Vec<String> {
    std::iter::once(EVT.to_string()).chain(terms.iter().cloned()).collect()
}

/// One teacher-forcing example.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SentencePair {
    pub input: Vec<String>,
    pub prev: Vec<String>,
    pub target: Vec<String>,
}

/// Event inputs and reference sentences of one story.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoryExample {
    pub id: String,
    pub inputs: Vec<Vec<String>>,
    pub sentences: Vec<Vec<String>>,
}

impl StoryExample {
    /// Events from the golden storyline, one per sentence.
    pub fn from_golden(id: &str, golden: &GoldenStoryline, sentences: &[AnnotatedSentence]) -> Result<Self> {
        let inputs: Vec<Vec<String>> = golden.events().iter().map(|e| encode_golden_event(e)).collect();
        if inputs.len() != sentences.len() {
            return Err(Error::LengthMismatch { expected: sentences.len(), actual: inputs.len() });
        }
        Ok(Self { id: id.to_string(), inputs, sentences: sentences.iter().map(|s| s.tokens.clone()).collect() })
    }

    /// Plot-free variant: each sentence is conditioned on its bare nouns.
    pub fn from_terms(id: &str, sentences: &[AnnotatedSentence]) -> Self {
        Self {
            id: id.to_string(),
            inputs: sentences.iter().map(|s| encode_terms(&s.nouns)).collect(),
            sentences: sentences.iter().map(|s| s.tokens.clone()).collect(),
        }
    }

    /// Teacher-forcing pairs with the reference previous sentence.
    pub fn pairs(&self) -> Vec<SentencePair> {
        (0..self.inputs.len())
            .map(|i| SentencePair {
                input: self.inputs[i].clone(),
                prev: if i == 0 { Vec::new() } else { self.sentences[i - 1].clone() },
                target: self.sentences[i].clone(),
            })
            .collect()
    }

    pub fn tokens(&self) -> impl Iterator<Item = &String> {
        self.inputs.iter().flatten().chain(self.sentences.iter().flatten())
    }
}

#[derive(Clone, Debug)]
struct NormIds {
    gain: ParamId,
    bias: ParamId,
}

#[derive(Clone, Debug)]
struct AttnIds {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    bo: ParamId,
}

#[derive(Clone, Debug)]
struct FfnIds {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Clone, Debug)]
struct EncoderLayer {
    ln1: NormIds,
    attn: AttnIds,
    ln2: NormIds,
    ffn: FfnIds,
}

#[derive(Clone, Debug)]
struct DecoderLayer {
    ln1: NormIds,
    self_attn: AttnIds,
    ln2: NormIds,
    cross_attn: AttnIds,
    ln3: NormIds,
    ffn: FfnIds,
}

#[derive(Clone, Debug)]
struct GenIds {
    tok: ParamId,
    pos_src: ParamId,
    pos_tgt: ParamId,
    encoder: Vec<EncoderLayer>,
    enc_norm: NormIds,
    decoder: Vec<DecoderLayer>,
    dec_norm: NormIds,
    out_w: ParamId,
    out_b: ParamId,
}

#[derive(Serialize, Deserialize)]
struct GeneratorMeta {
    config: GeneratorConfig,
    vocab: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct GeneratorModel {
    pub config: GeneratorConfig,
    vocab: Vocab,
    pub params: ParamStore,
    ids: GenIds,
}

fn lookup(params: &ParamStore, name: &str) -> Result<ParamId> {
    params.id(name).ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
}

/// Creates (or, when `store` is already populated, looks up) every tensor.
struct Builder<'a> {
    params: &'a mut ParamStore,
    rng: Option<ChaCha8Rng>,
}

impl Builder<'_> {
    fn matrix(&mut self, name: String, rows: usize, cols: usize) -> Result<ParamId> {
        match &mut self.rng {
            Some(rng) => Ok(self.params.glorot(name, rows, cols, rng)),
            None => self.check(&name, rows, cols),
        }
    }

    fn embedding(&mut self, name: String, rows: usize, cols: usize) -> Result<ParamId> {
        match &mut self.rng {
            Some(rng) => Ok(self.params.uniform(name, rows, cols, 0.1, rng)),
            None => self.check(&name, rows, cols),
        }
    }

    fn filled(&mut self, name: String, rows: usize, cols: usize, v: f64) -> Result<ParamId> {
        match self.rng {
            Some(_) => Ok(self.params.filled(name, rows, cols, v)),
            None => self.check(&name, rows, cols),
        }
    }

    fn check(&self, name: &str, rows: usize, cols: usize) -> Result<ParamId> {
        let id = lookup(self.params, name)?;
        let shape = self.params.get(id).shape();
        if shape != (rows, cols) {
            return Err(Error::Checkpoint(format!("{name} has shape {shape:?}, expected ({rows}, {cols})")));
        }
        Ok(id)
    }

    fn norm(&mut self, prefix: &str, d: usize) -> Result<NormIds> {
        Ok(NormIds { gain: self.filled(format!("{prefix}.gain"), 1, d, 1.0)?, bias: self.filled(format!("{prefix}.bias"), 1, d, 0.0)? })
    }

    fn attn(&mut self, prefix: &str, d: usize) -> Result<AttnIds> {
        Ok(AttnIds {
            wq: self.matrix(format!("{prefix}.wq"), d, d)?,
            wk: self.matrix(format!("{prefix}.wk"), d, d)?,
            wv: self.matrix(format!("{prefix}.wv"), d, d)?,
            wo: self.matrix(format!("{prefix}.wo"), d, d)?,
            bo: self.filled(format!("{prefix}.bo"), 1, d, 0.0)?,
        })
    }

    fn ffn(&mut self, prefix: &str, d: usize, f: usize) -> Result<FfnIds> {
        Ok(FfnIds {
            w1: self.matrix(format!("{prefix}.w1"), d, f)?,
            b1: self.filled(format!("{prefix}.b1"), 1, f, 0.0)?,
            w2: self.matrix(format!("{prefix}.w2"), f, d)?,
            b2: self.filled(format!("{prefix}.b2"), 1, d, 0.0)?,
        })
    }

    fn build(&mut self, c: &GeneratorConfig, vocab_len: usize) -> Result<GenIds> {
        let d = c.d_model;
        let tok = self.embedding("gen.tok".into(), vocab_len, d)?;
        let pos_src = self.embedding("gen.pos_src".into(), c.max_source_len, d)?;
        let pos_tgt = self.embedding("gen.pos_tgt".into(), c.max_sentence_len + 1, d)?;
        let mut encoder = Vec::new();
        for l in 0..c.encoder_layers {
            let p = format!("gen.enc{l}");
            encoder.push(EncoderLayer {
                ln1: self.norm(&format!("{p}.ln1"), d)?,
                attn: self.attn(&format!("{p}.attn"), d)?,
                ln2: self.norm(&format!("{p}.ln2"), d)?,
                ffn: self.ffn(&format!("{p}.ffn"), d, c.ffn_dim)?,
            });
        }
        let enc_norm = self.norm("gen.enc_norm", d)?;
        let mut decoder = Vec::new();
        for l in 0..c.decoder_layers {
            let p = format!("gen.dec{l}");
            decoder.push(DecoderLayer {
                ln1: self.norm(&format!("{p}.ln1"), d)?,
                self_attn: self.attn(&format!("{p}.self"), d)?,
                ln2: self.norm(&format!("{p}.ln2"), d)?,
                cross_attn: self.attn(&format!("{p}.cross"), d)?,
                ln3: self.norm(&format!("{p}.ln3"), d)?,
                ffn: self.ffn(&format!("{p}.ffn"), d, c.ffn_dim)?,
            });
        }
        let dec_norm = self.norm("gen.dec_norm", d)?;
        let out_w = self.matrix("gen.out_w".into(), d, vocab_len)?;
        let out_b = self.filled("gen.out_b".into(), 1, vocab_len, 0.0)?;
        Ok(GenIds { tok, pos_src, pos_tgt, encoder, enc_norm, decoder, dec_norm, out_w, out_b })
    }
}

impl GeneratorModel {
    /// Vocabulary is the boundary markers plus every token in `tokens`.
    pub fn new<'a>(config: GeneratorConfig, tokens: impl IntoIterator<Item = &'a String>) -> Result<Self> {
        if config.d_model == 0 || config.heads == 0 || config.d_model % config.heads != 0 {
            return Err(Error::Config(format!("d_model {} not divisible by {} heads", config.d_model, config.heads)));
        }
        if config.max_sentence_len == 0 || config.max_source_len == 0 {
            return Err(Error::Config("sequence limits must be positive".into()));
        }
        let vocab = Vocab::build(&SPECIALS, tokens.into_iter().filter(|t| !SPECIALS.contains(&t.as_str())));
        let mut params = ParamStore::new();
        let ids = Builder { params: &mut params, rng: Some(ChaCha8Rng::seed_from_u64(config.seed)) }
            .build(&config, vocab.len())?;
        Ok(Self { config, vocab, params, ids })
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        let meta = GeneratorMeta { config: self.config.clone(), vocab: self.vocab.tokens().to_vec() };
        checkpoint::save(dir, stem, &self.params, serde_json::to_value(meta).expect("meta serialises"))
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let (mut params, meta) = checkpoint::load(dir, stem)?;
        let meta: GeneratorMeta = serde_json::from_value(meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let vocab = Vocab::from_tokens(meta.vocab);
        let ids = Builder { params: &mut params, rng: None }.build(&meta.config, vocab.len())?;
        Ok(Self { config: meta.config, vocab, params, ids })
    }

    fn token_id(&self, t: &str) -> usize {
        self.vocab.get(t).unwrap_or_else(|| self.vocab.get(UNK).expect("reserved"))
    }

    fn source_ids(&self, input: &[String], prev: &[String]) -> Vec<usize> {
        let mut ids: Vec<usize> = input.iter().map(|t| self.token_id(t)).collect();
        ids.push(self.token_id(SEP));
        ids.extend(strip_eos(prev).iter().map(|t| self.token_id(t)));
        ids.truncate(self.config.max_source_len);
        ids
    }

    fn norm(&self, g: &mut Graph, x: Var, ids: &NormIds) -> Var {
        let n = g.layer_norm_rows(x);
        let gain = g.param(ids.gain);
        let bias = g.param(ids.bias);
        let n = g.mul_row(n, gain);
        g.add_row(n, bias)
    }

    fn attention(&self, g: &mut Graph, xq: Var, xkv: Var, ids: &AttnIds, causal: bool) -> Var {
        let (wq, wk, wv, wo, bo) = (g.param(ids.wq), g.param(ids.wk), g.param(ids.wv), g.param(ids.wo), g.param(ids.bo));
        let q = g.matmul(xq, wq);
        let k = g.matmul(xkv, wk);
        let v = g.matmul(xkv, wv);
        let (nq, nk) = (g.value(q).rows, g.value(k).rows);
        let dh = self.config.d_model / self.config.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mask = causal.then(|| {
            let mut m = Tensor::zeros(nq, nk);
            for r in 0..nq {
                for c in r + 1..nk {
                    m.set(r, c, MASKED);
                }
            }
            m
        });
        let heads: Vec<Var> = (0..self.config.heads)
            .map(|h| {
                let qh = g.slice_cols(q, h * dh, (h + 1) * dh);
                let kh = g.slice_cols(k, h * dh, (h + 1) * dh);
                let vh = g.slice_cols(v, h * dh, (h + 1) * dh);
                let s = g.matmul_t(qh, kh);
                let mut s = g.scale(s, scale);
                if let Some(m) = &mask {
                    s = g.add_const(s, m);
                }
                let p = g.softmax_rows(s);
                g.matmul(p, vh)
            })
            .collect();
        let o = g.concat_cols(&heads);
        let o = g.matmul(o, wo);
        g.add_row(o, bo)
    }

    fn ffn(&self, g: &mut Graph, x: Var, ids: &FfnIds) -> Var {
        let (w1, b1, w2, b2) = (g.param(ids.w1), g.param(ids.b1), g.param(ids.w2), g.param(ids.b2));
        let h = g.matmul(x, w1);
        let h = g.add_row(h, b1);
        let h = g.gelu(h);
        let o = g.matmul(h, w2);
        g.add_row(o, b2)
    }

    fn embed(&self, g: &mut Graph, ids: &[usize], pos: ParamId) -> Var {
        let tok = g.gather(self.ids.tok, ids);
        let positions: Vec<usize> = (0..ids.len()).collect();
        let p = g.gather(pos, &positions);
        g.add(tok, p)
    }

    fn encode(&self, g: &mut Graph, src: &[usize]) -> Var {
        let mut x = self.embed(g, src, self.ids.pos_src);
        for layer in &self.ids.encoder {
            let h = self.norm(g, x, &layer.ln1);
            let a = self.attention(g, h, h, &layer.attn, false);
            x = g.add(x, a);
            let h = self.norm(g, x, &layer.ln2);
            let f = self.ffn(g, h, &layer.ffn);
            x = g.add(x, f);
        }
        self.norm(g, x, &self.ids.enc_norm)
    }

    fn decode(&self, g: &mut Graph, memory: Var, tgt_in: &[usize]) -> Var {
        let mut y = self.embed(g, tgt_in, self.ids.pos_tgt);
        for layer in &self.ids.decoder {
            let h = self.norm(g, y, &layer.ln1);
            let a = self.attention(g, h, h, &layer.self_attn, true);
            y = g.add(y, a);
            let h = self.norm(g, y, &layer.ln2);
            let c = self.attention(g, h, memory, &layer.cross_attn, false);
            y = g.add(y, c);
            let h = self.norm(g, y, &layer.ln3);
            let f = self.ffn(g, h, &layer.ffn);
            y = g.add(y, f);
        }
        let y = self.norm(g, y, &self.ids.dec_norm);
        let (w, b) = (g.param(self.ids.out_w), g.param(self.ids.out_b));
        let logits = g.matmul(y, w);
        g.add_row(logits, b)
    }

    /// Decoder input (`BOS` + target) and target ids (target + `EOS`).
    fn teacher_ids(&self, target: &[String]) -> Result<(Vec<usize>, Vec<usize>)> {
        let target = strip_eos(target);
        if target.is_empty() {
            return Err(Error::InvalidInput("reference sentence is empty".into()));
        }
        let body: Vec<usize> = target.iter().take(self.config.max_sentence_len).map(|t| self.token_id(t)).collect();
        let mut tgt_in = vec![self.token_id(BOS)];
        tgt_in.extend(&body);
        let mut tgt_out = body;
        tgt_out.push(self.token_id(EOS));
        Ok((tgt_in, tgt_out))
    }

    fn pair_loss(&self, g: &mut Graph, pair: &SentencePair) -> Result<(Var, Vec<usize>)> {
        let (tgt_in, tgt_out) = self.teacher_ids(&pair.target)?;
        let memory = self.encode(g, &self.source_ids(&pair.input, &pair.prev));
        let logits = self.decode(g, memory, &tgt_in);
        let loss = g.cross_entropy(logits, &tgt_out);
        Ok((loss, tgt_out))
    }

    /// Summed token negative log-likelihood of `pair.target` under teacher forcing.
    pub fn sentence_loss(&self, pair: &SentencePair) -> Result<f64> {
        let mut g = Graph::new(&self.params);
        let (loss, _) = self.pair_loss(&mut g, pair)?;
        Ok(g.scalar(loss))
    }

    pub fn sentence_loss_and_grads(&self, pair: &SentencePair) -> Result<(f64, Grads)> {
        let mut g = Graph::new(&self.params);
        let (loss, _) = self.pair_loss(&mut g, pair)?;
        Ok((g.scalar(loss), g.backward(loss)))
    }

    /// Mean loss over `pairs` scaled by `multiplier`, with gradients of the
    /// scaled objective.
    pub fn mean_loss_and_grads(&self, pairs: &[SentencePair], multiplier: f64) -> Result<(f64, Grads)> {
        let (_, obj, grads) = self.weighted_mean_loss(pairs, multiplier)?;
        Ok((obj, grads))
    }

    /// Unweighted mean loss, weighted objective and its gradients.
    pub fn weighted_mean_loss(&self, pairs: &[SentencePair], multiplier: f64) -> Result<(f64, f64, Grads)> {
        if pairs.is_empty() {
            return Err(Error::InvalidInput("no sentences".into()));
        }
        let mut g = Graph::new(&self.params);
        let mut total = None;
        for p in pairs {
            let (l, _) = self.pair_loss(&mut g, p)?;
            total = Some(match total {
                None => l,
                Some(t) => g.add(t, l),
            });
        }
        let mean = g.scale(total.expect("non-empty"), 1.0 / pairs.len() as f64);
        let obj = g.scale(mean, multiplier);
        Ok((g.scalar(mean), g.scalar(obj), g.backward(obj)))
    }

    fn pick(&self, row: &[f64]) -> usize {
        let mut best: Option<usize> = None;
        for (i, &v) in row.iter().enumerate() {
            let tok = self.vocab.token(i);
            if tok != EOS && SPECIALS.contains(&tok) {
                continue;
            }
            best = match best {
                None => Some(i),
                Some(b) if v > row[b] || (v == row[b] && tok < self.vocab.token(b)) => Some(i),
                keep => keep,
            };
        }
        best.expect("vocabulary has EOS")
    }

    /// Correct and total teacher-forced next-token predictions.
    pub fn teacher_forced_accuracy(&self, pair: &SentencePair) -> Result<(usize, usize)> {
        let mut g = Graph::new(&self.params);
        let (tgt_in, tgt_out) = self.teacher_ids(&pair.target)?;
        let memory = self.encode(&mut g, &self.source_ids(&pair.input, &pair.prev));
        let logits = self.decode(&mut g, memory, &tgt_in);
        let l = g.value(logits);
        let hits = tgt_out.iter().enumerate().filter(|&(r, &t)| self.pick(l.row(r)) == t).count();
        Ok((hits, tgt_out.len()))
    }

    /// Greedy decoding; the result always ends with `EOS`.
    pub fn generate_sentence(&self, input: &[String], prev: &[String]) -> Vec<String> {
        let mut g = Graph::new(&self.params);
        let memory = self.encode(&mut g, &self.source_ids(input, prev));
        let eos = self.token_id(EOS);
        let mut tgt = vec![self.token_id(BOS)];
        let mut out = Vec::new();
        while out.len() < self.config.max_sentence_len {
            let logits = self.decode(&mut g, memory, &tgt);
            let next = self.pick(g.value(logits).row(tgt.len() - 1));
            if next == eos {
                break;
            }
            out.push(self.vocab.token(next).to_string());
            tgt.push(next);
        }
        out.push(EOS.to_string());
        out
    }

    /// One sentence per event input, each conditioned on the sentence
    /// generated before it.
    pub fn generate_from_inputs(&self, inputs: &[Vec<String>]) -> Story {
        let mut sentences: Vec<Vec<String>> = Vec::with_capacity(inputs.len());
        for input in inputs {
            let prev = sentences.last().cloned().unwrap_or_default();
            sentences.push(self.generate_sentence(input, &prev));
        }
        Story { sentences }
    }
}

pub fn generate_sentence(model: &GeneratorModel, event: &[Hop], prev: &[String]) -> Vec<String> {
    model.generate_sentence(&encode_event(event), prev)
}

pub fn generate_story(model: &GeneratorModel, storyline: &Storyline) -> Story {
    let inputs: Vec<Vec<String>> = storyline.events.iter().map(|e| encode_event(e)).collect();
    model.generate_from_inputs(&inputs)
}

#[derive(Clone, Debug)]
pub struct FitConfig {
    pub epochs: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Stop once teacher-forced accuracy over all pairs reaches this value.
    pub target_accuracy: Option<f64>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { epochs: 300, adam: AdamConfig::with_lr(1e-3), seed: 0, target_accuracy: None }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FitReport {
    pub epoch_losses: Vec<f64>,
    pub accuracy: f64,
}

pub fn teacher_forced_accuracy(model: &GeneratorModel, pairs: &[SentencePair]) -> Result<f64> {
    let (mut hits, mut total) = (0, 0);
    for p in pairs {
        let (h, t) = model.teacher_forced_accuracy(p)?;
        hits += h;
        total += t;
    }
    Ok(if total == 0 { 0.0 } else { hits as f64 / total as f64 })
}

/// Sentence-level teacher-forced training, one Adam step per pair in a
/// seeded shuffled order. Used both for pre-training on text-only pairs and
/// for plain fitting.
pub fn fit_sentences(model: &mut GeneratorModel, pairs: &[SentencePair], cfg: &FitConfig) -> Result<FitReport> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput("no training sentences".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(cfg.adam, &model.params);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut report = FitReport::default();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let (loss, grads) = model.sentence_loss_and_grads(&pairs[i])?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("generator loss {loss}")));
            }
            total += loss;
            opt.step(&mut model.params, &grads);
        }
        report.epoch_losses.push(total / pairs.len() as f64);
        if let Some(target) = cfg.target_accuracy {
            report.accuracy = teacher_forced_accuracy(model, pairs)?;
            if report.accuracy >= target {
                return Ok(report);
            }
        }
    }
    report.accuracy = teacher_forced_accuracy(model, pairs)?;
    Ok(report)
}

/// Teacher-forcing pairs extracted from raw annotated stories, for
/// pre-training before fine-tuning on predicted storylines.
pub fn pretraining_pairs(stories: &[Vec<AnnotatedSentence>]) -> Result<Vec<SentencePair>> {
    let mut out = Vec::new();
    for (i, s) in stories.iter().enumerate() {
        let golden = crate::corpus::build_golden_storyline(s)?;
        out.extend(StoryExample::from_golden(&i.to_string(), &golden, s)?.pairs());
    }
    Ok(out)
}
