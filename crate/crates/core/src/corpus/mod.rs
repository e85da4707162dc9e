//! Story-element extraction and golden storylines.
//!
//! Stories arrive already annotated with nouns and verb-frame spans; this
//! module turns them into noun–frame–noun tuples and the hop chains used as
//! supervision for the storyline predictor.

mod terms;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use terms::{predict_terms, train_term_predictor, TermPredictor, TermPredictorConfig};

/// Frame label used when two consecutive nouns have no verb frame.
pub const EMPTY_FRAME: &str = "empty_frame";

/// Number of images in one photo sequence.
pub const IMAGES_PER_SEQUENCE: usize = 5;

/// Maximum detected objects kept per image.
pub const OBJECTS_PER_IMAGE: usize = 5;

/// `<s{i}>`: sentence-transition token.
pub fn transition_token(i: usize) -> String {
    format!("<s{i}>")
}

/// Parses `<s{i}>` back into `i`.
pub fn parse_transition_token(s: &str) -> Option<usize> {
    let digits = s.strip_prefix("<s")?.strip_suffix('>')?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

pub fn is_transition_token(s: &str) -> bool {
    parse_transition_token(s).is_some()
}

/// Lowercases, splits on whitespace and strips punctuation from token edges.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| c.is_ascii_punctuation()).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

fn normalize(token: &str) -> String {
    token.trim().to_lowercase()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub label: String,
    pub confidence: f64,
    pub image_index: usize,
}

impl Detection {
    pub fn new(label: &str, confidence: f64, image_index: usize) -> Self {
        Self { label: normalize(label), confidence, image_index }
    }

    pub fn validate(&self) -> Result<()> {
        if self.label.is_empty() {
            return Err(Error::InvalidInput("detection label is empty".into()));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::InvalidInput(format!("confidence {} outside [0,1]", self.confidence)));
        }
        if self.image_index >= IMAGES_PER_SEQUENCE {
            return Err(Error::InvalidInput(format!("image index {} outside 0..4", self.image_index)));
        }
        Ok(())
    }
}

/// A verb frame governing an ordered noun pair.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameSpan {
    pub label: String,
    pub head: String,
    pub tail: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedSentence {
    pub tokens: Vec<String>,
    pub nouns: Vec<String>,
    #[serde(default)]
    pub frames: Vec<FrameSpan>,
}

impl AnnotatedSentence {
    pub fn new(tokens: &[&str], nouns: &[&str], frames: &[(&str, &str, &str)]) -> Self {
        Self {
            tokens: tokens.iter().map(|t| normalize(t)).collect(),
            nouns: nouns.iter().map(|t| normalize(t)).collect(),
            frames: frames
                .iter()
                .map(|(l, h, t)| FrameSpan { label: normalize(l), head: normalize(h), tail: normalize(t) })
                .collect(),
        }
    }

    /// Lowercases every field so that lookups are case-insensitive.
    pub fn normalized(mut self) -> Self {
        self.tokens.iter_mut().for_each(|t| *t = normalize(t));
        self.tokens.retain(|t| !t.is_empty());
        self.nouns.iter_mut().for_each(|t| *t = normalize(t));
        for f in &mut self.frames {
            f.label = normalize(&f.label);
            f.head = normalize(&f.head);
            f.tail = normalize(&f.tail);
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.nouns.iter().any(|n| n.is_empty()) {
            return Err(Error::InvalidInput("empty noun".into()));
        }
        for f in &self.frames {
            if !self.nouns.contains(&f.head) || !self.nouns.contains(&f.tail) {
                return Err(Error::InvalidInput(format!(
                    "frame {} governs ({}, {}) which are not both nouns of the sentence",
                    f.label, f.head, f.tail
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NvnTuple {
    pub head: String,
    pub frame: String,
    pub tail: String,
}

impl NvnTuple {
    pub fn new(head: &str, frame: &str, tail: &str) -> Self {
        Self { head: head.to_string(), frame: frame.to_string(), tail: tail.to_string() }
    }
}

impl std::fmt::Display for NvnTuple {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {})", self.head, self.frame, self.tail)
    }
}

/// Reference hop chain extracted from a human-written story.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldenStoryline {
    pub hops: Vec<NvnTuple>,
    pub sentence_count: usize,
}

impl GoldenStoryline {
    /// Re-creates a storyline from bare hops, deriving the sentence count and
    /// checking every chain invariant.
    pub fn from_hops(hops: Vec<NvnTuple>) -> Result<Self> {
        let sentence_count = hops.iter().filter(|h| is_transition_token(&h.tail)).count();
        let s = Self { hops, sentence_count };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(format!("golden storyline: {m}")));
        let Some(first) = self.hops.first() else { return bad("no hops".into()) };
        if first.head != transition_token(0) {
            return bad(format!("first head is {} not <s0>", first.head));
        }
        for w in self.hops.windows(2) {
            if w[0].tail != w[1].head {
                return bad(format!("chain broken between {} and {}", w[0], w[1]));
            }
        }
        let mut expected = 1;
        for h in &self.hops {
            if h.head.is_empty() || h.tail.is_empty() || h.frame.is_empty() {
                return bad(format!("hop {h} has an empty field"));
            }
            if let Some(i) = parse_transition_token(&h.tail) {
                if i != expected {
                    return bad(format!("transition token <s{i}> where <s{expected}> was expected"));
                }
                expected += 1;
            }
        }
        if self.sentence_count == 0 || expected - 1 != self.sentence_count {
            return bad(format!("{} transition tails for sentence_count {}", expected - 1, self.sentence_count));
        }
        if self.hops.last().map(|h| h.tail.as_str()) != Some(transition_token(self.sentence_count).as_str()) {
            return bad("last tail is not the final transition token".into());
        }
        Ok(())
    }

    /// Splits the hops into events, each ending at a transition token.
    pub fn events(&self) -> Vec<&[NvnTuple]> {
        let mut out = Vec::new();
        let mut start = 0;
        for (k, h) in self.hops.iter().enumerate() {
            if is_transition_token(&h.tail) {
                out.push(&self.hops[start..=k]);
                start = k + 1;
            }
        }
        out
    }

    /// Non-token nouns in order of first appearance.
    pub fn nouns(&self) -> Vec<String> {
        let mut seen = Vec::new();
        for h in &self.hops {
            for n in [&h.head, &h.tail] {
                if !is_transition_token(n) && !seen.contains(n) {
                    seen.push(n.clone());
                }
            }
        }
        seen
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.hops).expect("hops serialise")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let hops: Vec<NvnTuple> = serde_json::from_str(s).map_err(|e| Error::InvalidInput(e.to_string()))?;
        Self::from_hops(hops)
    }
}

/// Per-image objects (detected) and terms (predicted).
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoryElements {
    pub objects: Vec<Vec<String>>,
    pub terms: Vec<Vec<String>>,
}

impl StoryElements {
    pub fn new(objects: Vec<Vec<String>>, terms: Vec<Vec<String>>) -> Self {
        Self { objects, terms }
    }

    pub fn is_empty(&self) -> bool {
        self.objects.iter().chain(&self.terms).all(Vec::is_empty)
    }

    /// Distinct objects in order of first appearance across images.
    pub fn flat_objects(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for o in self.objects.iter().flatten() {
            if !out.contains(o) {
                out.push(o.clone());
            }
        }
        out
    }

    /// Drops one element family, for ablations.
    pub fn restricted(&self, keep_objects: bool, keep_terms: bool) -> Self {
        let blank = |v: &Vec<Vec<String>>| v.iter().map(|_| Vec::new()).collect();
        Self {
            objects: if keep_objects { self.objects.clone() } else { blank(&self.objects) },
            terms: if keep_terms { self.terms.clone() } else { blank(&self.terms) },
        }
    }
}

/// Keeps the five most confident labels per image.
///
/// Repeated labels within one image collapse to their best detection; ties on
/// confidence go to the lexicographically smaller label.
pub fn select_objects(detections: &[Detection]) -> Vec<Vec<String>> {
    let mut best: Vec<BTreeMap<&str, f64>> = vec![BTreeMap::new(); IMAGES_PER_SEQUENCE];
    for d in detections {
        if d.image_index >= IMAGES_PER_SEQUENCE || d.label.is_empty() {
            continue;
        }
        let slot = best[d.image_index].entry(d.label.as_str()).or_insert(f64::NEG_INFINITY);
        if d.confidence > *slot {
            *slot = d.confidence;
        }
    }
    best.into_iter()
        .map(|per_image| {
            let mut ranked: Vec<(&str, f64)> = per_image.into_iter().collect();
            ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
            ranked.into_iter().take(OBJECTS_PER_IMAGE).map(|(l, _)| l.to_string()).collect()
        })
        .collect()
}

/// Links consecutive nouns in reading order.
///
/// A pair takes the label of the first frame span governing exactly that
/// ordered pair, otherwise [`EMPTY_FRAME`].
pub fn extract_nvn_tuples(sentence: &AnnotatedSentence) -> Vec<NvnTuple> {
    sentence
        .nouns
        .windows(2)
        .map(|w| {
            let frame = sentence
                .frames
                .iter()
                .find(|f| f.head == w[0] && f.tail == w[1])
                .map(|f| f.label.as_str())
                .unwrap_or(EMPTY_FRAME);
            NvnTuple::new(&w[0], frame, &w[1])
        })
        .collect()
}

/// Chains the sentences of a story into one golden storyline delimited by
/// transition tokens.
pub fn build_golden_storyline(story: &[AnnotatedSentence]) -> Result<GoldenStoryline> {
    if story.is_empty() {
        return Err(Error::InvalidInput("story has no sentences".into()));
    }
    let mut hops = Vec::new();
    for (i, sentence) in story.iter().enumerate() {
        sentence.validate()?;
        let (Some(first), Some(last)) = (sentence.nouns.first(), sentence.nouns.last()) else {
            return Err(Error::NounlessSentence(i));
        };
        hops.push(NvnTuple::new(&transition_token(i), EMPTY_FRAME, first));
        hops.extend(extract_nvn_tuples(sentence));
        hops.push(NvnTuple::new(last, EMPTY_FRAME, &transition_token(i + 1)));
    }
    let golden = GoldenStoryline { hops, sentence_count: story.len() };
    debug_assert!(golden.validate().is_ok());
    Ok(golden)
}
