//! Object-bag → story-noun predictor.
//!
//! A bag-of-embeddings encoder (mean of object vectors, one tanh layer)
//! followed by an independent logistic score per noun in the vocabulary.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Adam, AdamConfig, Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};
use crate::vocab::Vocab;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TermPredictorConfig {
    pub embed_dim: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub top_k: usize,
    /// Fixed noun vocabulary; derived from the training references when absent.
    pub noun_vocab: Option<Vec<String>>,
}

impl Default for TermPredictorConfig {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            hidden: 64,
            epochs: 100,
            adam: AdamConfig::with_lr(0.01),
            seed: 0,
            top_k: 3,
            noun_vocab: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TermPredictor {
    pub object_vocab: Vocab,
    pub noun_vocab: Vocab,
    pub params: ParamStore,
    pub top_k: usize,
    /// Full-batch loss before each epoch's update.
    pub loss_history: Vec<f64>,
    ids: TermIds,
}

#[derive(Clone, Copy, Debug)]
struct TermIds {
    embed: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl TermPredictor {
    fn logits(&self, g: &mut Graph, bags: &[Vec<usize>]) -> Var {
        let rows: Vec<Var> = bags
            .iter()
            .map(|bag| {
                let e = g.gather(self.ids.embed, bag);
                g.mean_rows(e)
            })
            .collect();
        let x = g.concat_rows(&rows);
        let (w1, b1, w2, b2) = (g.param(self.ids.w1), g.param(self.ids.b1), g.param(self.ids.w2), g.param(self.ids.b2));
        let h = g.matmul(x, w1);
        let h = g.add_row(h, b1);
        let h = g.tanh(h);
        let o = g.matmul(h, w2);
        g.add_row(o, b2)
    }

    /// Unknown objects are dropped from the bag.
    fn encode_bag(&self, objects: &[String]) -> Vec<usize> {
        objects.iter().filter_map(|o| self.object_vocab.get(o)).collect()
    }

    /// Score of every vocabulary noun for one object bag.
    pub fn scores(&self, objects: &[String]) -> Vec<f64> {
        let mut g = Graph::new(&self.params);
        let out = self.logits(&mut g, &[self.encode_bag(objects)]);
        g.value(out).data.clone()
    }

    /// Top-`k` nouns, ties broken lexicographically.
    pub fn top_terms(&self, objects: &[String], k: usize) -> Result<Vec<String>> {
        if k > self.noun_vocab.len() {
            return Err(Error::InvalidInput(format!(
                "requested {k} terms but the noun vocabulary has {}",
                self.noun_vocab.len()
            )));
        }
        let scores = self.scores(objects);
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| {
            scores[b].total_cmp(&scores[a]).then_with(|| self.noun_vocab.token(a).cmp(self.noun_vocab.token(b)))
        });
        Ok(order.into_iter().take(k).map(|i| self.noun_vocab.token(i).to_string()).collect())
    }
}

/// Predicts `model.top_k` terms for every image's object bag.
pub fn predict_terms(objects: &[Vec<String>], model: &TermPredictor) -> Result<Vec<Vec<String>>> {
    objects.iter().map(|bag| model.top_terms(bag, model.top_k)).collect()
}

/// Fits the predictor with full-batch Adam on per-noun binary cross-entropy.
pub fn train_term_predictor(pairs: &[(Vec<String>, Vec<String>)], cfg: &TermPredictorConfig) -> Result<TermPredictor> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput("term predictor needs at least one training pair".into()));
    }
    let object_vocab = Vocab::build(&[], pairs.iter().flat_map(|(objs, _)| objs.iter()));
    let noun_vocab = match &cfg.noun_vocab {
        Some(v) => {
            let vocab = Vocab::build(&[], v.iter());
            if let Some(missing) = pairs.iter().flat_map(|(_, n)| n).find(|n| !vocab.contains(n)) {
                return Err(Error::InvalidInput(format!("reference noun {missing} is not in the noun vocabulary")));
            }
            vocab
        }
        None => Vocab::build(&[], pairs.iter().flat_map(|(_, nouns)| nouns.iter())),
    };
    if noun_vocab.is_empty() {
        return Err(Error::InvalidInput("no reference nouns to learn".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ParamStore::new();
    let ids = TermIds {
        embed: params.uniform("terms.embed", object_vocab.len().max(1), cfg.embed_dim, 0.1, &mut rng),
        w1: params.glorot("terms.w1", cfg.embed_dim, cfg.hidden, &mut rng),
        b1: params.zeros("terms.b1", 1, cfg.hidden),
        w2: params.glorot("terms.w2", cfg.hidden, noun_vocab.len(), &mut rng),
        b2: params.zeros("terms.b2", 1, noun_vocab.len()),
    };
    let mut model =
        TermPredictor { object_vocab, noun_vocab, params, top_k: cfg.top_k, loss_history: Vec::new(), ids };

    let bags: Vec<Vec<usize>> = pairs.iter().map(|(objs, _)| model.encode_bag(objs)).collect();
    let vocab_size = model.noun_vocab.len();
    let mut targets = vec![0.0; pairs.len() * vocab_size];
    for (p, (_, nouns)) in pairs.iter().enumerate() {
        for n in nouns {
            targets[p * vocab_size + model.noun_vocab.get(n).expect("checked above")] = 1.0;
        }
    }

    let mut opt = Adam::new(cfg.adam, &model.params);
    let scale = 1.0 / pairs.len() as f64;
    for _ in 0..cfg.epochs {
        let grads = {
            let mut g = Graph::new(&model.params);
            let logits = model.logits(&mut g, &bags);
            let total = g.bce_with_logits(logits, &targets);
            let loss = g.scale(total, scale);
            model.loss_history.push(g.scalar(loss));
            g.backward(loss)
        };
        opt.step(&mut model.params, &grads);
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|x| x.to_string()).collect()
    }

    /// 50 pairs from 5 scenes; each scene's objects map to a fixed noun set.
    fn toy_pairs() -> Vec<(Vec<String>, Vec<String>)> {
        let scenes = [
            (s(&["ball", "player"]), s(&["game", "team"])),
            (s(&["cake", "candle"]), s(&["birthday", "party"])),
            (s(&["tree", "snow"]), s(&["winter", "holiday"])),
            (s(&["sand", "wave"]), s(&["beach", "vacation"])),
            (s(&["gown", "ring"]), s(&["wedding", "bride"])),
        ];
        (0..50)
            .map(|i| {
                let (objs, nouns) = &scenes[i % scenes.len()];
                let mut objs = objs.clone();
                if i % 2 == 1 {
                    objs.reverse();
                }
                (objs, nouns.clone())
            })
            .collect()
    }

    #[test]
    fn learns_toy_mapping_with_high_recall() {
        let pairs = toy_pairs();
        let model = train_term_predictor(&pairs, &TermPredictorConfig::default()).unwrap();
        let (mut hit, mut total) = (0, 0);
        for (objs, nouns) in &pairs {
            let top = model.top_terms(objs, 3).unwrap();
            hit += nouns.iter().filter(|n| top.contains(n)).count();
            total += nouns.len();
        }
        assert!(hit as f64 / total as f64 >= 0.9, "recall {hit}/{total}");
        let top = model.top_terms(&s(&["ball", "player"]), 3).unwrap();
        assert!(top[..2].contains(&"game".to_string()), "{top:?}");
    }

    #[test]
    fn loss_decreases_monotonically_early() {
        let model = train_term_predictor(&toy_pairs(), &TermPredictorConfig::default()).unwrap();
        for w in model.loss_history[..11].windows(2) {
            assert!(w[1] < w[0], "{:?}", &model.loss_history[..11]);
        }
    }

    #[test]
    fn single_pair_is_memorised() {
        let pairs = vec![(s(&["kite"]), s(&["wind"]))];
        let cfg = TermPredictorConfig { noun_vocab: Some(s(&["wind", "rain", "sun", "sky"])), ..Default::default() };
        let model = train_term_predictor(&pairs, &cfg).unwrap();
        assert_eq!(model.top_terms(&s(&["kite"]), 1).unwrap(), s(&["wind"]));
    }

    #[test]
    fn empty_bag_and_identical_bags() {
        let model = train_term_predictor(&toy_pairs(), &TermPredictorConfig::default()).unwrap();
        let bags = vec![vec![], s(&["ball"]), s(&["ball"])];
        let terms = predict_terms(&bags, &model).unwrap();
        assert_eq!(terms[0].len(), 3);
        assert_eq!(terms[1], terms[2]);
    }

    #[test]
    fn errors() {
        assert!(train_term_predictor(&[], &TermPredictorConfig::default()).is_err());
        let cfg = TermPredictorConfig { noun_vocab: Some(s(&["game"])), ..Default::default() };
        assert!(train_term_predictor(&[(s(&["ball"]), s(&["goal"]))], &cfg).is_err());
        let model = train_term_predictor(&[(s(&["ball"]), s(&["goal"]))], &TermPredictorConfig::default()).unwrap();
        assert!(model.top_terms(&s(&["ball"]), 2).is_err());
    }
}
