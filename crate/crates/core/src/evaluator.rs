//! Story discriminator and the reward derived from it.
//!
//! A single-layer GRU reads the flattened story; its final state goes through
//! `softmax(tanh(W·h) + b)` and the class-1 probability is the score.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Adam, AdamConfig, Grads, Graph, ParamId, ParamStore, Var};
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::io::RankingRecord;
use crate::vocab::Vocab;

/// A story's reward is `REWARD_OFFSET` minus its positive-class probability.
pub const REWARD_OFFSET: f64 = 1.5;

const UNK: &str = "<unk>";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledStory {
    pub tokens: Vec<String>,
    pub positive: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluatorConfig {
    pub embed_dim: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for EvaluatorConfig {
    fn default() -> Self {
        Self { embed_dim: 32, hidden: 64, epochs: 10, adam: AdamConfig::with_lr(5e-3), seed: 0 }
    }
}

#[derive(Clone, Debug)]
struct EvalIds {
    embed: ParamId,
    wx: ParamId,
    wh: ParamId,
    bx: ParamId,
    bh: ParamId,
    head_w: ParamId,
    head_b: ParamId,
}

#[derive(Serialize, Deserialize)]
struct EvaluatorMeta {
    config: EvaluatorConfig,
    vocab: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct EvaluatorModel {
    pub config: EvaluatorConfig,
    vocab: Vocab,
    pub params: ParamStore,
    ids: EvalIds,
}

impl EvaluatorModel {
    pub fn new<'a>(config: EvaluatorConfig, tokens: impl IntoIterator<Item = &'a String>) -> Self {
        let vocab = Vocab::build(&[UNK], tokens.into_iter().filter(|t| t.as_str() != UNK));
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (d, h) = (config.embed_dim, config.hidden);
        let mut p = ParamStore::new();
        let ids = EvalIds {
            embed: p.uniform("eval.embed", vocab.len(), d, 0.1, &mut rng),
            wx: p.glorot("eval.wx", d, 3 * h, &mut rng),
            wh: p.glorot("eval.wh", h, 3 * h, &mut rng),
            bx: p.zeros("eval.bx", 1, 3 * h),
            bh: p.zeros("eval.bh", 1, 3 * h),
            head_w: p.glorot("eval.head_w", h, 2, &mut rng),
            head_b: p.zeros("eval.head_b", 1, 2),
        };
        Self { config, vocab, params: p, ids }
    }

    fn from_params(config: EvaluatorConfig, vocab: Vocab, params: ParamStore) -> Result<Self> {
        let id = |n: &str| params.id(n).ok_or_else(|| Error::Checkpoint(format!("missing tensor {n}")));
        let ids = EvalIds {
            embed: id("eval.embed")?,
            wx: id("eval.wx")?,
            wh: id("eval.wh")?,
            bx: id("eval.bx")?,
            bh: id("eval.bh")?,
            head_w: id("eval.head_w")?,
            head_b: id("eval.head_b")?,
        };
        if params.get(ids.embed).rows != vocab.len() || params.get(ids.head_w).shape() != (config.hidden, 2) {
            return Err(Error::Checkpoint("evaluator tensor shapes do not match metadata".into()));
        }
        Ok(Self { config, vocab, params, ids })
    }

    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        let meta = EvaluatorMeta { config: self.config.clone(), vocab: self.vocab.tokens().to_vec() };
        checkpoint::save(dir, stem, &self.params, serde_json::to_value(meta).expect("meta serialises"))
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let (params, meta) = checkpoint::load(dir, stem)?;
        let meta: EvaluatorMeta = serde_json::from_value(meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
        Self::from_params(meta.config, Vocab::from_tokens(meta.vocab), params)
    }

    /// Zeroes the output head so every story scores exactly one half.
    pub fn zero_head(&mut self) {
        self.params.get_mut(self.ids.head_w).data.iter_mut().for_each(|v| *v = 0.0);
        self.params.get_mut(self.ids.head_b).data.iter_mut().for_each(|v| *v = 0.0);
    }

    fn ids_of(&self, tokens: &[String]) -> Vec<usize> {
        let unk = self.vocab.get(UNK).expect("reserved");
        tokens.iter().map(|t| self.vocab.get(t).unwrap_or(unk)).collect()
    }

    /// Final GRU state.
    fn encode(&self, g: &mut Graph, ids: &[usize]) -> Var {
        let hd = self.config.hidden;
        let x = g.gather(self.ids.embed, ids);
        let (wx, wh, bx, bh) = (g.param(self.ids.wx), g.param(self.ids.wh), g.param(self.ids.bx), g.param(self.ids.bh));
        let gx = g.matmul(x, wx);
        let gx = g.add_row(gx, bx);
        let mut h = g.input(crate::autograd::Tensor::zeros(1, hd));
        for t in 0..ids.len() {
            let xt = g.row(gx, t);
            let gh = g.matmul(h, wh);
            let gh = g.add_row(gh, bh);
            let xr = g.slice_cols(xt, 0, hd);
            let xz = g.slice_cols(xt, hd, 2 * hd);
            let xn = g.slice_cols(xt, 2 * hd, 3 * hd);
            let hr = g.slice_cols(gh, 0, hd);
            let hz = g.slice_cols(gh, hd, 2 * hd);
            let hn = g.slice_cols(gh, 2 * hd, 3 * hd);
            let r = g.add(xr, hr);
            let r = g.sigmoid(r);
            let z = g.add(xz, hz);
            let z = g.sigmoid(z);
            let rn = g.mul(r, hn);
            let n = g.add(xn, rn);
            let n = g.tanh(n);
            // h' = n + z ⊙ (h - n)
            let neg_n = g.scale(n, -1.0);
            let diff = g.add(h, neg_n);
            let zd = g.mul(z, diff);
            h = g.add(n, zd);
        }
        h
    }

    fn logits(&self, g: &mut Graph, ids: &[usize]) -> Var {
        let h = self.encode(g, ids);
        let (w, b) = (g.param(self.ids.head_w), g.param(self.ids.head_b));
        let a = g.matmul(h, w);
        let a = g.tanh(a);
        g.add_row(a, b)
    }

    /// Probability that the story belongs to the positive class.
    pub fn score(&self, tokens: &[String]) -> Result<f64> {
        if tokens.is_empty() {
            return Err(Error::EmptyStory);
        }
        let mut g = Graph::new(&self.params);
        let l = self.logits(&mut g, &self.ids_of(tokens));
        let z = g.value(l);
        Ok(1.0 / (1.0 + (z.data[0] - z.data[1]).exp()))
    }

    pub fn reward(&self, tokens: &[String]) -> Result<f64> {
        Ok(reward_from_probability(self.score(tokens)?))
    }

    pub fn loss_and_grads(&self, batch: &[LabeledStory]) -> Result<(f64, Grads)> {
        let mut g = Graph::new(&self.params);
        let mut total = None;
        for s in batch {
            if s.tokens.is_empty() {
                return Err(Error::EmptyStory);
            }
            let l = self.logits(&mut g, &self.ids_of(&s.tokens));
            let ce = g.cross_entropy(l, &[usize::from(s.positive)]);
            total = Some(match total {
                None => ce,
                Some(t) => g.add(t, ce),
            });
        }
        let total = total.ok_or_else(|| Error::InvalidInput("empty evaluator batch".into()))?;
        Ok((g.scalar(total), g.backward(total)))
    }

    pub fn accuracy(&self, data: &[LabeledStory]) -> Result<f64> {
        let mut hits = 0;
        for s in data {
            hits += usize::from((self.score(&s.tokens)? > 0.5) == s.positive);
        }
        Ok(hits as f64 / data.len().max(1) as f64)
    }
}

pub fn reward_from_probability(p: f64) -> f64 {
    REWARD_OFFSET - p
}

pub fn score_story(model: &EvaluatorModel, tokens: &[String]) -> Result<f64> {
    model.score(tokens)
}

pub fn reward(model: &EvaluatorModel, tokens: &[String]) -> Result<f64> {
    model.reward(tokens)
}

/// Rank-1 stories become positives and rank-5 stories negatives.
pub fn labeled_from_rankings(records: &[RankingRecord]) -> Vec<LabeledStory> {
    let mut out = Vec::new();
    for r in records {
        for s in &r.stories {
            match s.rank {
                1 => out.push(LabeledStory { tokens: s.tokens.clone(), positive: true }),
                5 => out.push(LabeledStory { tokens: s.tokens.clone(), positive: false }),
                _ => {}
            }
        }
    }
    out
}

/// Trains a fresh evaluator with one Adam step per story.
pub fn train_evaluator(data: &[LabeledStory], cfg: &EvaluatorConfig) -> Result<EvaluatorModel> {
    if !data.iter().any(|s| s.positive) || !data.iter().any(|s| !s.positive) {
        return Err(Error::InvalidInput("evaluator training needs both positive and negative stories".into()));
    }
    let mut model = EvaluatorModel::new(cfg.clone(), data.iter().flat_map(|s| s.tokens.iter()));
    let mut opt = Adam::new(cfg.adam, &model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7e57);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let (loss, grads) = model.loss_and_grads(std::slice::from_ref(&data[i]))?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("evaluator loss {loss}")));
            }
            opt.step(&mut model.params, &grads);
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::{grad_check, GradCheckConfig};
    use crate::io::RankedStory;
    use proptest::prelude::*;

    fn s(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|x| x.to_string()).collect()
    }

    fn pair() -> Vec<LabeledStory> {
        vec![
            LabeledStory { tokens: s(&["the", "dog", "ran"]), positive: true },
            LabeledStory { tokens: s(&["blah", "huh"]), positive: false },
        ]
    }

    #[test]
    fn zero_head_gives_one_half() {
        let mut m = EvaluatorModel::new(EvaluatorConfig::default(), &s(&["a", "b"]));
        m.zero_head();
        assert_eq!(m.score(&s(&["a", "b", "zzz"])).unwrap(), 0.5);
        assert_eq!(m.reward(&s(&["a"])).unwrap(), 1.0);
    }

    #[test]
    fn reward_formula() {
        assert_eq!(reward_from_probability(1.0), 0.5);
        assert_eq!(reward_from_probability(0.5), 1.0);
        assert_eq!(reward_from_probability(0.25), 1.25);
    }

    #[test]
    fn empty_story_is_an_error() {
        let m = EvaluatorModel::new(EvaluatorConfig::default(), &s(&["a"]));
        assert!(matches!(m.score(&[]), Err(Error::EmptyStory)));
    }

    #[test]
    fn memorises_one_positive_and_one_negative() {
        let cfg = EvaluatorConfig { epochs: 30, ..Default::default() };
        let m = train_evaluator(&pair(), &cfg).unwrap();
        assert_eq!(m.accuracy(&pair()).unwrap(), 1.0);
    }

    #[test]
    fn single_label_data_is_rejected() {
        let data = vec![pair()[0].clone()];
        assert!(train_evaluator(&data, &EvaluatorConfig::default()).is_err());
    }

    #[test]
    fn rankings_keep_only_extremes() {
        let rec = RankingRecord {
            sequence_id: "x".into(),
            stories: (1..=5).map(|r| RankedStory { tokens: vec![format!("t{r}")], rank: r }).collect(),
        };
        let l = labeled_from_rankings(&[rec]);
        assert_eq!(l.len(), 2);
        assert!(l[0].positive && l[0].tokens == s(&["t1"]));
        assert!(!l[1].positive && l[1].tokens == s(&["t5"]));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let cfg = EvaluatorConfig { embed_dim: 4, hidden: 5, ..Default::default() };
        let mut m = EvaluatorModel::new(cfg, &s(&["the", "dog", "ran", "blah", "huh"]));
        let data = pair();
        let base = m.clone();
        let report = grad_check(
            &mut m.params,
            |p| {
                let mut mm = base.clone();
                mm.params = p.clone();
                mm.loss_and_grads(&data)
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn save_load_round_trip() {
        let m = EvaluatorModel::new(EvaluatorConfig { seed: 3, ..Default::default() }, &s(&["a", "b"]));
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path(), "eval").unwrap();
        let r = EvaluatorModel::load(dir.path(), "eval").unwrap();
        let t = s(&["b", "a", "q"]);
        assert_eq!(m.score(&t).unwrap().to_bits(), r.score(&t).unwrap().to_bits());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn reward_is_bounded_and_decreasing(seed in 0u64..1000, a in prop::collection::vec(0usize..6, 1..12), b in prop::collection::vec(0usize..6, 1..12)) {
            let words = s(&["a", "b", "c", "d", "e", "f"]);
            let m = EvaluatorModel::new(EvaluatorConfig { seed, hidden: 8, embed_dim: 4, ..Default::default() }, &words);
            let ta: Vec<String> = a.iter().map(|&i| words[i].clone()).collect();
            let tb: Vec<String> = b.iter().map(|&i| words[i].clone()).collect();
            let (pa, pb) = (m.score(&ta).unwrap(), m.score(&tb).unwrap());
            let (ra, rb) = (m.reward(&ta).unwrap(), m.reward(&tb).unwrap());
            prop_assert!(0.5 < ra && ra < 1.5);
            if pa > pb {
                prop_assert!(ra < rb);
            }
        }
    }
}
