//! Lexical diversity and storyline statistics.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::Story;
use crate::kgraph::TOKEN_POSITION;
use crate::predictor::Storyline;

pub const MTLD_THRESHOLD: f64 = 0.72;

/// Factor count of one directional scan.
fn factors<'a>(tokens: impl Iterator<Item = &'a str>, threshold: f64) -> f64 {
    let mut types: HashSet<&str> = HashSet::new();
    let mut count = 0usize;
    let mut factors = 0.0;
    let mut ttr = 1.0;
    for t in tokens {
        types.insert(t);
        count += 1;
        ttr = types.len() as f64 / count as f64;
        if ttr < threshold {
            factors += 1.0;
            types.clear();
            count = 0;
            ttr = 1.0;
        }
    }
    if count > 0 {
        factors += (1.0 - ttr) / (1.0 - threshold);
    }
    factors
}

/// Measure of textual lexical diversity: mean of the forward and reverse
/// `len / factors`.
pub fn mtld<S: AsRef<str>>(tokens: &[S], threshold: f64) -> Result<f64> {
    if tokens.is_empty() {
        return Err(Error::InvalidInput("mtld of an empty token list".into()));
    }
    if !(0.0..1.0).contains(&threshold) {
        return Err(Error::InvalidInput(format!("threshold {threshold} outside [0,1)")));
    }
    let fwd = factors(tokens.iter().map(AsRef::as_ref), threshold);
    let bwd = factors(tokens.iter().rev().map(AsRef::as_ref), threshold);
    if fwd == 0.0 || bwd == 0.0 {
        return Err(Error::ZeroDiversityFactors);
    }
    let n = tokens.len() as f64;
    Ok((n / fwd + n / bwd) / 2.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoryStats {
    pub mean_sentence_count: f64,
    pub multi_image_event_ratio: f64,
}

/// Whether any event touches elements from two or more images.
pub fn has_multi_image_event(storyline: &Storyline) -> bool {
    storyline.events.iter().any(|event| {
        let positions: HashSet<u8> = event
            .iter()
            .flat_map(|h| [h.head.position, h.relation.tail_position])
            .filter(|&p| p != TOKEN_POSITION)
            .collect();
        positions.len() >= 2
    })
}

pub fn story_stats(storylines: &[Storyline], stories: &[Story]) -> Result<StoryStats> {
    if storylines.len() != stories.len() {
        return Err(Error::LengthMismatch { expected: storylines.len(), actual: stories.len() });
    }
    if stories.is_empty() {
        return Err(Error::InvalidInput("no stories".into()));
    }
    let n = stories.len() as f64;
    let mean_sentence_count = stories.iter().map(|s| s.len() as f64).sum::<f64>() / n;
    let multi = storylines.iter().filter(|s| has_multi_image_event(s)).count() as f64;
    Ok(StoryStats { mean_sentence_count, multi_image_event_ratio: multi / n })
}

pub fn metrics_line(mtld: f64, stats: &StoryStats) -> String {
    format!(
        "mtld={:.2} mean_sents={:.2} multi_image_ratio={:.2}",
        mtld, stats.mean_sentence_count, stats.multi_image_event_ratio
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kgraph::StoryEntity;
    use crate::predictor::{Hop, Relation};
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    /// Straight transcription of the scan with explicit prefix recounting.
    fn oracle(tokens: &[String], threshold: f64) -> Option<f64> {
        let pass = |seq: Vec<&String>| {
            let mut f = 0.0;
            let mut start = 0;
            for end in 1..=seq.len() {
                let window = &seq[start..end];
                let distinct = window.iter().collect::<std::collections::BTreeSet<_>>().len();
                if (distinct as f64) / (window.len() as f64) < threshold {
                    f += 1.0;
                    start = end;
                }
            }
            if start < seq.len() {
                let window = &seq[start..];
                let distinct = window.iter().collect::<std::collections::BTreeSet<_>>().len();
                f += (1.0 - distinct as f64 / window.len() as f64) / (1.0 - threshold);
            }
            f
        };
        let (a, b) = (pass(tokens.iter().collect()), pass(tokens.iter().rev().collect()));
        (a > 0.0 && b > 0.0).then(|| (tokens.len() as f64 / a + tokens.len() as f64 / b) / 2.0)
    }

    #[test]
    fn identical_tokens_give_two() {
        assert_eq!(mtld(&toks("a a a a a a a a a a"), MTLD_THRESHOLD).unwrap(), 2.0);
    }

    #[test]
    fn all_distinct_is_an_error() {
        assert!(matches!(mtld(&toks("a b c d e f g h i j"), MTLD_THRESHOLD), Err(Error::ZeroDiversityFactors)));
    }

    #[test]
    fn matches_oracle_on_mixed_sequence() {
        let t = toks("a b a a b c a a");
        assert_eq!(mtld(&t, MTLD_THRESHOLD).unwrap(), oracle(&t, MTLD_THRESHOLD).unwrap());
    }

    fn event(pos: &[(u8, u8)]) -> Vec<Hop> {
        pos.iter()
            .map(|&(h, t)| Hop {
                head: StoryEntity { label: "x".into(), position: h },
                relation: Relation::new("f", "y", t),
            })
            .collect()
    }

    #[test]
    fn story_stats_counts_cross_image_events() {
        let single = Storyline { events: vec![event(&[(5, 0), (0, 0), (0, 5)])] };
        let cross = Storyline { events: vec![event(&[(5, 0), (0, 2), (2, 5)])] };
        let story = |n: usize| Story { sentences: vec![vec!["<eos>".to_string()]; n] };
        let lines = vec![cross.clone(), single.clone(), cross.clone(), cross];
        let stories = vec![story(1), story(2), story(3), story(2)];
        let s = story_stats(&lines, &stories).unwrap();
        assert_eq!(s.multi_image_event_ratio, 0.75);
        assert_eq!(s.mean_sentence_count, 2.0);
        assert_eq!(story_stats(&[single.clone()], &[story(1)]).unwrap().multi_image_event_ratio, 0.0);
        assert!(story_stats(&[single], &[]).is_err());
        assert_eq!(metrics_line(2.0, &s), "mtld=2.00 mean_sents=2.00 multi_image_ratio=0.75");
    }

    proptest! {
        #[test]
        fn agrees_with_oracle_and_symmetric(seq in prop::collection::vec(0u8..5, 1..60)) {
            let t: Vec<String> = seq.iter().map(|i| format!("w{i}")).collect();
            let r: Vec<String> = t.iter().rev().cloned().collect();
            match (mtld(&t, MTLD_THRESHOLD), oracle(&t, MTLD_THRESHOLD)) {
                (Ok(v), Some(o)) => {
                    prop_assert!((v - o).abs() < 1e-12);
                    prop_assert_eq!(v, mtld(&r, MTLD_THRESHOLD).unwrap());
                }
                (Err(Error::ZeroDiversityFactors), None) => {}
                (a, b) => prop_assert!(false, "{:?} vs {:?}", a, b),
            }
        }

        #[test]
        fn renaming_invariant(seq in prop::collection::vec(0u8..5, 1..60), shift in 1u8..20) {
            let a: Vec<String> = seq.iter().map(|i| format!("w{i}")).collect();
            let b: Vec<String> = seq.iter().map(|i| format!("v{}", i + shift)).collect();
            prop_assert_eq!(mtld(&a, MTLD_THRESHOLD).ok(), mtld(&b, MTLD_THRESHOLD).ok());
        }
    }
}
