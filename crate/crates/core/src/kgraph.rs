//! Knowledge graphs of noun–frame–noun edges and per-sequence story graphs.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{is_transition_token, transition_token, NvnTuple, StoryElements, EMPTY_FRAME};
use crate::error::{Error, Result};

/// Position value reserved for transition tokens.
pub const TOKEN_POSITION: u8 = 5;

/// Default number of sentence slots `<s1>..<sK>` in a story graph.
pub const DEFAULT_MAX_SENTENCES: usize = 10;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KnowledgeGraph {
    nodes: BTreeSet<String>,
    frames: BTreeSet<String>,
    edges: BTreeSet<NvnTuple>,
    adjacency: BTreeMap<String, Vec<(String, String)>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub nodes: usize,
    /// Distinct frame labels.
    pub relations: usize,
    pub edges: usize,
    /// Incident links per node (`2·|E| / |V|`).
    pub links: f64,
    /// Outgoing edges per node (`|E| / |V|`).
    pub out_degree: f64,
}

impl GraphStats {
    /// `nodes=<n> relations=<r> links=<l>` with two decimals.
    pub fn summary_line(&self) -> String {
        format!("nodes={} relations={} links={:.2}", self.nodes, self.relations, self.links)
    }
}

impl KnowledgeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, t: NvnTuple) -> bool {
        if self.edges.contains(&t) {
            return false;
        }
        self.nodes.insert(t.head.clone());
        self.nodes.insert(t.tail.clone());
        self.frames.insert(t.frame.clone());
        let adj = self.adjacency.entry(t.head.clone()).or_default();
        let key = (t.frame.clone(), t.tail.clone());
        let at = adj.binary_search(&key).unwrap_or_else(|e| e);
        adj.insert(at, key);
        self.edges.insert(t);
        true
    }

    pub fn nodes(&self) -> &BTreeSet<String> {
        &self.nodes
    }

    pub fn frames(&self) -> &BTreeSet<String> {
        &self.frames
    }

    pub fn edges(&self) -> &BTreeSet<NvnTuple> {
        &self.edges
    }

    pub fn contains(&self, head: &str, frame: &str, tail: &str) -> bool {
        self.edges.contains(&NvnTuple::new(head, frame, tail))
    }

    /// Outgoing `(frame, tail)` pairs of `head`, sorted.
    pub fn outgoing(&self, head: &str) -> &[(String, String)] {
        self.adjacency.get(head).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Frames on edges from `head` to `tail`.
    pub fn frames_between<'a>(&'a self, head: &str, tail: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.outgoing(head).iter().filter(move |(_, t)| t == tail).map(|(f, _)| f.as_str())
    }

    pub fn stats(&self) -> GraphStats {
        let n = self.nodes.len();
        let e = self.edges.len();
        let per = |x: f64| if n == 0 { 0.0 } else { x / n as f64 };
        GraphStats { nodes: n, relations: self.frames.len(), edges: e, links: per(2.0 * e as f64), out_degree: per(e as f64) }
    }

    /// Sorted edges, one JSON object per line.
    pub fn to_jsonl(&self) -> String {
        self.edges.iter().map(|t| serde_json::to_string(t).expect("tuple serialises") + "\n").collect()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }
}

/// Deduplicated graph over the given triples.
pub fn build_knowledge_graph<'a>(triples: impl IntoIterator<Item = &'a NvnTuple>) -> KnowledgeGraph {
    let mut g = KnowledgeGraph::new();
    for t in triples {
        g.insert(t.clone());
    }
    g
}

/// Union of both graphs.
pub fn merge(a: &KnowledgeGraph, b: &KnowledgeGraph) -> KnowledgeGraph {
    let mut g = a.clone();
    for t in &b.edges {
        g.insert(t.clone());
    }
    g
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StoryEntity {
    pub label: String,
    /// Image index 0..=4, or [`TOKEN_POSITION`] for transition tokens.
    pub position: u8,
}

impl StoryEntity {
    pub fn element(label: &str, image: usize) -> Self {
        debug_assert!(image < TOKEN_POSITION as usize);
        Self { label: label.to_string(), position: image as u8 }
    }

    pub fn token(i: usize) -> Self {
        Self { label: transition_token(i), position: TOKEN_POSITION }
    }

    pub fn is_token(&self) -> bool {
        self.position == TOKEN_POSITION
    }
}

impl std::fmt::Display for StoryEntity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}@{}", self.label, self.position)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StoryRelation {
    pub head: StoryEntity,
    pub frame: String,
    pub tail: StoryEntity,
}

/// Entity/relation graph over one sequence's story elements.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StoryGraph {
    entities: BTreeSet<StoryEntity>,
    relations: BTreeSet<StoryRelation>,
    outgoing: BTreeMap<StoryEntity, Vec<StoryRelation>>,
    max_sentences: usize,
}

impl StoryGraph {
    /// Builds a graph from explicit parts; relation endpoints must be
    /// entities.
    pub fn from_parts(
        entities: impl IntoIterator<Item = StoryEntity>,
        relations: impl IntoIterator<Item = StoryRelation>,
    ) -> Result<Self> {
        let entities: BTreeSet<StoryEntity> = entities.into_iter().collect();
        let mut g = StoryGraph {
            max_sentences: entities.iter().filter(|e| e.is_token()).count().saturating_sub(1),
            entities,
            relations: BTreeSet::new(),
            outgoing: BTreeMap::new(),
        };
        for r in relations {
            for e in [&r.head, &r.tail] {
                if !g.entities.contains(e) {
                    return Err(Error::UnknownEntity(e.to_string()));
                }
            }
            g.add_relation(r);
        }
        Ok(g)
    }

    fn add_relation(&mut self, r: StoryRelation) {
        if self.relations.insert(r.clone()) {
            self.outgoing.entry(r.head.clone()).or_default().push(r);
        }
    }

    pub fn entities(&self) -> &BTreeSet<StoryEntity> {
        &self.entities
    }

    pub fn relations(&self) -> &BTreeSet<StoryRelation> {
        &self.relations
    }

    pub fn contains_entity(&self, e: &StoryEntity) -> bool {
        self.entities.contains(e)
    }

    pub fn contains_relation(&self, head: &StoryEntity, frame: &str, tail: &StoryEntity) -> bool {
        self.outgoing(head).iter().any(|r| r.frame == frame && &r.tail == tail)
    }

    pub fn outgoing(&self, head: &StoryEntity) -> &[StoryRelation] {
        self.outgoing.get(head).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn max_sentences(&self) -> usize {
        self.max_sentences
    }

    /// Non-token entities.
    pub fn elements(&self) -> impl Iterator<Item = &StoryEntity> {
        self.entities.iter().filter(|e| !e.is_token())
    }
}

/// Links every story element through the knowledge graph's frames, the
/// `empty_frame` fallback and the transition tokens `<s0>..<sK>`.
///
/// For each ordered pair of distinct element entities `(a, b)` the graph
/// holds `(a, f, b)` for every knowledge-graph edge `(a, f, b)` plus
/// `(a, empty_frame, b)`. Every element is reachable from each `<s_i>` and
/// reaches each `<s_{i+1}>`, for `i` in `0..K`.
pub fn assemble_story_graph(elements: &StoryElements, kg: &KnowledgeGraph, max_sentences: usize) -> Result<StoryGraph> {
    if elements.is_empty() {
        return Err(Error::InvalidInput("no story elements in any image".into()));
    }
    if max_sentences == 0 {
        return Err(Error::Config("story graph needs at least one sentence slot".into()));
    }
    let mut items: BTreeSet<StoryEntity> = BTreeSet::new();
    for family in [&elements.objects, &elements.terms] {
        for (image, labels) in family.iter().enumerate() {
            for l in labels {
                if !l.is_empty() && !is_transition_token(l) {
                    items.insert(StoryEntity::element(l, image.min(TOKEN_POSITION as usize - 1)));
                }
            }
        }
    }
    if items.is_empty() {
        return Err(Error::InvalidInput("no usable story elements".into()));
    }
    let tokens: Vec<StoryEntity> = (0..=max_sentences).map(StoryEntity::token).collect();
    let mut g = StoryGraph {
        entities: items.iter().cloned().chain(tokens.iter().cloned()).collect(),
        relations: BTreeSet::new(),
        outgoing: BTreeMap::new(),
        max_sentences,
    };
    for a in &items {
        for b in &items {
            if a == b {
                continue;
            }
            for f in kg.frames_between(&a.label, &b.label) {
                g.add_relation(StoryRelation { head: a.clone(), frame: f.to_string(), tail: b.clone() });
            }
            g.add_relation(StoryRelation { head: a.clone(), frame: EMPTY_FRAME.to_string(), tail: b.clone() });
        }
    }
    for i in 0..max_sentences {
        for a in &items {
            g.add_relation(StoryRelation { head: tokens[i].clone(), frame: EMPTY_FRAME.to_string(), tail: a.clone() });
            g.add_relation(StoryRelation { head: a.clone(), frame: EMPTY_FRAME.to_string(), tail: tokens[i + 1].clone() });
        }
    }
    for list in g.outgoing.values_mut() {
        list.sort();
    }
    Ok(g)
}
