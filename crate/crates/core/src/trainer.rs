//! Generator training schedule: sentence-level steps, then a story-level
//! step whose loss is weighted by the frozen evaluator's reward once the
//! reward phase starts.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{grad_check, Adam, AdamConfig, GradCheckConfig, GradCheckReport, Grads, ParamStore};
use crate::error::{Error, Result};
use crate::evaluator::EvaluatorModel;
use crate::generator::{GeneratorModel, SentencePair, Story, StoryExample, EOS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub total_epochs: usize,
    /// Last epoch trained without the reward multiplier.
    pub reward_start_epoch: usize,
    pub reward_offset: f64,
    pub adam: AdamConfig,
    pub seed: u64,
    pub batch_size: usize,
    /// When false the story-level loss is never reward-weighted.
    pub rework: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_epochs: 60,
            reward_start_epoch: 30,
            reward_offset: 1.5,
            adam: AdamConfig::with_lr(1e-3),
            seed: 0,
            batch_size: 1,
            rework: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reward_start_epoch == 0 || self.reward_start_epoch >= self.total_epochs {
            return Err(Error::Config(format!(
                "reward start epoch {} must lie in 1..{}",
                self.reward_start_epoch, self.total_epochs
            )));
        }
        if self.reward_offset <= 1.0 {
            return Err(Error::Config(format!("reward offset {} must exceed 1", self.reward_offset)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(())
    }

    pub fn reward_active(&self, epoch: usize) -> bool {
        self.rework && epoch > self.reward_start_epoch
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub epoch: usize,
    pub step: usize,
    pub sentence_losses: Vec<f64>,
    /// Unweighted story-level loss.
    pub story_loss_mle: f64,
    /// Story-level objective actually optimised (`multiplier * story_loss_mle`).
    pub story_loss: f64,
    pub multiplier: f64,
    /// Stories generated right before the story-level step.
    pub stories: Vec<Story>,
}

impl LossReport {
    pub fn mean_sentence_loss(&self) -> f64 {
        self.sentence_losses.iter().sum::<f64>() / self.sentence_losses.len().max(1) as f64
    }

    pub fn log_line(&self) -> String {
        format!(
            "epoch={} step={} J_sen={:.6} J_story={:.6} mult={:.6}",
            self.epoch,
            self.step,
            self.mean_sentence_loss(),
            self.story_loss,
            self.multiplier
        )
    }
}

/// Teacher-forced `-log p(target | input, prev)` summed over tokens.
pub fn sentence_loss(model: &GeneratorModel, input: &[String], prev: &[String], target: &[String]) -> Result<f64> {
    model.sentence_loss(&SentencePair { input: input.to_vec(), prev: prev.to_vec(), target: target.to_vec() })
}

/// Reference sentences paired with the previous sentences the model itself
/// generates under its current parameters.
pub fn story_pairs(model: &GeneratorModel, example: &StoryExample) -> Result<Vec<SentencePair>> {
    if example.inputs.len() != example.sentences.len() {
        return Err(Error::LengthMismatch { expected: example.inputs.len(), actual: example.sentences.len() });
    }
    Ok(pairs_after(example, &model.generate_from_inputs(&example.inputs)))
}

fn pairs_after(example: &StoryExample, story: &Story) -> Vec<SentencePair> {
    (0..example.inputs.len())
        .map(|i| SentencePair {
            input: example.inputs[i].clone(),
            prev: if i == 0 { Vec::new() } else { story.sentences[i - 1].clone() },
            target: example.sentences[i].clone(),
        })
        .collect()
}

/// Mean sentence loss over the story.
pub fn story_loss(model: &GeneratorModel, example: &StoryExample) -> Result<f64> {
    let pairs = story_pairs(model, example)?;
    Ok(model.mean_loss_and_grads(&pairs, 1.0)?.0)
}

/// Content tokens fed to the evaluator; end markers are kept only when a
/// story has nothing else.
pub fn evaluator_tokens(story: &Story) -> Vec<String> {
    let content: Vec<String> = story.flat_tokens().into_iter().filter(|t| t != EOS).collect();
    if content.is_empty() {
        story.flat_tokens()
    } else {
        content
    }
}

/// One batch: every reference sentence gets its own sentence-level update,
/// then one story-level update follows.
pub fn step_epoch(
    model: &mut GeneratorModel,
    opt: &mut Adam,
    evaluator: Option<&EvaluatorModel>,
    batch: &[StoryExample],
    epoch: usize,
    step: usize,
    cfg: &TrainConfig,
) -> Result<LossReport> {
    if epoch == 0 || epoch > cfg.total_epochs {
        return Err(Error::Config(format!("epoch {epoch} outside 1..={}", cfg.total_epochs)));
    }
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let mut sentence_losses = Vec::new();
    for example in batch {
        for pair in example.pairs() {
            let (loss, grads) = model.sentence_loss_and_grads(&pair)?;
            check_finite(loss)?;
            sentence_losses.push(loss);
            opt.step(&mut model.params, &grads);
        }
    }

    let mut stories = Vec::with_capacity(batch.len());
    let mut multipliers = Vec::with_capacity(batch.len());
    let mut grads: Option<Grads> = None;
    let (mut mle_total, mut obj_total) = (0.0, 0.0);
    for example in batch {
        let story = model.generate_from_inputs(&example.inputs);
        let mult = if cfg.reward_active(epoch) {
            let ev = evaluator.ok_or_else(|| Error::Config("reward phase needs an evaluator".into()))?;
            cfg.reward_offset - ev.score(&evaluator_tokens(&story))?
        } else {
            1.0
        };
        if example.inputs.len() != example.sentences.len() {
            return Err(Error::LengthMismatch { expected: example.inputs.len(), actual: example.sentences.len() });
        }
        let (mle, obj, mut g) = model.weighted_mean_loss(&pairs_after(example, &story), mult)?;
        check_finite(obj)?;
        mle_total += mle;
        obj_total += obj;
        if batch.len() > 1 {
            g.scale(1.0 / batch.len() as f64);
        }
        match &mut grads {
            None => grads = Some(g),
            Some(acc) => acc.accumulate(&g),
        }
        stories.push(story);
        multipliers.push(mult);
    }
    opt.step(&mut model.params, &grads.expect("non-empty batch"));
    let n = batch.len() as f64;
    let multiplier = if batch.len() == 1 { multipliers[0] } else { multipliers.iter().sum::<f64>() / n };
    let (story_loss_mle, story_loss) = if batch.len() == 1 { (mle_total, obj_total) } else { (mle_total / n, obj_total / n) };
    Ok(LossReport { epoch, step, sentence_losses, story_loss_mle, story_loss, multiplier, stories })
}

fn check_finite(loss: f64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("generator loss {loss}")))
    }
}

/// Runs epochs `1..=cfg.total_epochs` (or fewer with `max_epochs`), writing
/// one log line per step.
pub fn train_generator(
    model: &mut GeneratorModel,
    evaluator: Option<&EvaluatorModel>,
    stories: &[StoryExample],
    cfg: &TrainConfig,
    max_epochs: Option<usize>,
    log: &mut dyn Write,
) -> Result<Vec<LossReport>> {
    cfg.validate()?;
    if stories.is_empty() {
        return Err(Error::InvalidInput("no training stories".into()));
    }
    let epochs = max_epochs.unwrap_or(cfg.total_epochs);
    if epochs > cfg.total_epochs {
        return Err(Error::Config(format!("{epochs} epochs requested, schedule ends at {}", cfg.total_epochs)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(cfg.adam, &model.params);
    let mut order: Vec<usize> = (0..stories.len()).collect();
    let mut reports = Vec::new();
    for epoch in 1..=epochs {
        order.shuffle(&mut rng);
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<StoryExample> = chunk.iter().map(|&i| stories[i].clone()).collect();
            let report = step_epoch(model, &mut opt, evaluator, &batch, epoch, step + 1, cfg)?;
            writeln!(log, "{}", report.log_line()).map_err(|e| Error::io("train.log", e))?;
            reports.push(report);
        }
    }
    Ok(reports)
}

/// Finite-difference check of the generator's mean sentence loss.
pub fn check_generator_gradients(model: &GeneratorModel, pairs: &[SentencePair], cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut params: ParamStore = model.params.clone();
    let mut scratch = model.clone();
    grad_check(
        &mut params,
        |p| {
            scratch.params.load_from(p)?;
            scratch.mean_loss_and_grads(pairs, 1.0)
        },
        cfg,
    )
}

/// Finite-difference check of the evaluator's cross-entropy.
pub fn check_evaluator_gradients(
    model: &EvaluatorModel,
    data: &[crate::evaluator::LabeledStory],
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let mut params = model.params.clone();
    let mut scratch = model.clone();
    grad_check(
        &mut params,
        |p| {
            scratch.params.load_from(p)?;
            scratch.loss_and_grads(data)
        },
        cfg,
    )
}
