//! JSONL / TSV file formats consumed and produced by the pipeline.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedSentence, NvnTuple};
use crate::error::{Error, Result};
use crate::corpus::StoryElements;
use crate::kgraph::StoryEntity;
use crate::predictor::{Hop, Relation, Storyline};

/// `stories.jsonl` line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoryRecord {
    pub story_id: String,
    pub sentences: Vec<AnnotatedSentence>,
}

/// `detections.jsonl` line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub sequence_id: String,
    pub image_index: usize,
    pub label: String,
    pub confidence: f64,
}

/// `triples.jsonl` line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripleRecord {
    pub head: String,
    pub frame: String,
    pub tail: String,
    pub source: String,
}

impl TripleRecord {
    pub fn new(t: NvnTuple, source: &str) -> Self {
        Self { head: t.head, frame: t.frame, tail: t.tail, source: source.to_string() }
    }

    pub fn tuple(&self) -> NvnTuple {
        NvnTuple::new(&self.head.to_lowercase(), &self.frame.to_lowercase(), &self.tail.to_lowercase())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedStory {
    pub tokens: Vec<String>,
    pub rank: u8,
}

/// `rankings.jsonl` line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingRecord {
    pub sequence_id: String,
    pub stories: Vec<RankedStory>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HopRecord {
    pub head: String,
    pub frame: String,
    pub tail: String,
    pub tail_pos: u8,
}

/// `storylines.jsonl` line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StorylineRecord {
    pub sequence_id: String,
    pub events: Vec<Vec<HopRecord>>,
}

impl StorylineRecord {
    pub fn new(sequence_id: &str, s: &Storyline) -> Self {
        let events = s
            .events
            .iter()
            .map(|e| {
                e.iter()
                    .map(|h| HopRecord {
                        head: h.head.label.clone(),
                        frame: h.relation.frame.clone(),
                        tail: h.relation.tail.clone(),
                        tail_pos: h.relation.tail_position,
                    })
                    .collect()
            })
            .collect();
        Self { sequence_id: sequence_id.to_string(), events }
    }

    /// Rebuilds the storyline; each head sits where the previous hop's tail
    /// was placed, starting from `<s0>`.
    pub fn to_storyline(&self) -> Storyline {
        let mut head = StoryEntity::token(0);
        let events = self
            .events
            .iter()
            .map(|e| {
                e.iter()
                    .map(|h| {
                        let hop = Hop { head: head.clone(), relation: Relation::new(&h.frame, &h.tail, h.tail_pos) };
                        head = hop.relation.tail_entity();
                        hop
                    })
                    .collect()
            })
            .collect();
        Storyline { events }
    }
}

/// `elements.jsonl` line: per-image objects and predicted terms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElementsRecord {
    pub sequence_id: String,
    pub objects: Vec<Vec<String>>,
    pub terms: Vec<Vec<String>>,
}

impl ElementsRecord {
    pub fn elements(&self) -> StoryElements {
        StoryElements::new(self.objects.clone(), self.terms.clone())
    }
}

/// `golden.jsonl` line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoldenRecord {
    pub story_id: String,
    pub hops: Vec<crate::corpus::NvnTuple>,
}

/// `stories_out.jsonl` line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratedStoryRecord {
    pub sequence_id: String,
    pub sentences: Vec<String>,
}

/// Reads one JSON value per non-blank line. Unknown fields are ignored.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line)
            .map_err(|e| Error::Parse { path: path.to_path_buf(), line: i + 1, message: e.to_string() })?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item).expect("records serialise");
        buf.push(b'\n');
    }
    write_bytes(path, &buf)
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

/// `token<TAB>v1<TAB>…<TAB>vd` lines (any whitespace between values).
pub fn read_embeddings(path: &Path) -> Result<HashMap<String, Vec<f64>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = HashMap::new();
    let mut dim = None;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse { path: path.to_path_buf(), line: i + 1, message };
        let (token, rest) = line.split_once('\t').ok_or_else(|| parse_err("missing tab after token".into()))?;
        let values = rest
            .split_whitespace()
            .map(|v| v.parse::<f64>().map_err(|e| parse_err(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => return Err(parse_err(format!("expected {d} values, got {}", values.len()))),
            _ => {}
        }
        out.insert(token.to_string(), values);
    }
    Ok(out)
}
