//! Seeded synthetic corpora with a planted objects → storyline mapping.
//!
//! Each sequence belongs to one of a dozen scenes. The scene's objects plus
//! one "variant" object fully determine the story's noun chain, frames and
//! sentence text, while distractor and low-confidence junk detections add
//! noise that the models have to ignore.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    build_golden_storyline, extract_nvn_tuples, select_objects, AnnotatedSentence, Detection, FrameSpan, GoldenStoryline,
    NvnTuple, StoryElements, EMPTY_FRAME,
};
use crate::io::{DetectionRecord, RankedStory, RankingRecord, StoryRecord, TripleRecord};
use crate::predictor::PlotExample;

struct Scene {
    name: &'static str,
    objects: [&'static str; 3],
    nouns: [&'static str; 5],
}

const SCENES: [Scene; 12] = [
    Scene { name: "baseball", objects: ["bat", "glove", "helmet"], nouns: ["pitcher", "game", "crowd", "team", "field"] },
    Scene { name: "birthday", objects: ["cake", "candle", "balloon"], nouns: ["party", "friend", "gift", "song", "kid"] },
    Scene { name: "beach", objects: ["sand", "wave", "umbrella"], nouns: ["vacation", "family", "sun", "ocean", "shell"] },
    Scene { name: "wedding", objects: ["gown", "ring", "bouquet"], nouns: ["bride", "groom", "ceremony", "dance", "guest"] },
    Scene { name: "winter", objects: ["snow", "tree", "sled"], nouns: ["holiday", "snowman", "cocoa", "slope", "kid"] },
    Scene { name: "concert", objects: ["guitar", "stage", "microphone"], nouns: ["band", "music", "crowd", "singer", "night"] },
    Scene { name: "hiking", objects: ["backpack", "boot", "rock"], nouns: ["trail", "mountain", "view", "friend", "summit"] },
    Scene { name: "graduation", objects: ["cap", "diploma", "podium"], nouns: ["student", "speech", "family", "ceremony", "future"] },
    Scene { name: "zoo", objects: ["fence", "cage", "bench"], nouns: ["animal", "lion", "kid", "keeper", "day"] },
    Scene { name: "cooking", objects: ["pan", "knife", "bowl"], nouns: ["dinner", "chef", "recipe", "family", "table"] },
    Scene { name: "parade", objects: ["float", "flag", "drum"], nouns: ["city", "march", "crowd", "band", "street"] },
    Scene { name: "garden", objects: ["shovel", "pot", "hose"], nouns: ["flower", "seed", "grandma", "spring", "vegetable"] },
];

const VARIANT_OBJECTS: [&str; 2] = ["dog", "car"];
const DISTRACTORS: [&str; 8] = ["man", "woman", "building", "sky", "window", "shirt", "light", "door"];
const JUNK: [&str; 3] = ["blur", "shadow", "pixel"];

const FRAMES: [(&str, &str); 8] = [
    ("cause_motion", "threw"),
    ("self_motion", "walked to"),
    ("placing", "put down"),
    ("arriving", "reached"),
    ("ingestion", "enjoyed"),
    ("performing_arts", "played for"),
    ("social_event", "celebrated with"),
    ("travel", "traveled with"),
];

/// Noun-index chains per sentence for the two plot variants.
const PLOTS: [&[&[usize]]; 2] = [&[&[0, 1], &[2], &[3, 4]], &[&[1, 3, 0], &[4, 2]]];

const FILLER: [&str; 10] = ["um", "stuff", "thing", "whatever", "random", "blah", "okay", "maybe", "nothing", "huh"];

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthSequence {
    pub id: String,
    pub scene: String,
    pub variant: usize,
    pub detections: Vec<Detection>,
    pub sentences: Vec<AnnotatedSentence>,
}

impl SynthSequence {
    pub fn golden(&self) -> GoldenStoryline {
        build_golden_storyline(&self.sentences).expect("synthetic sentences all have nouns")
    }

    pub fn objects(&self) -> Vec<Vec<String>> {
        select_objects(&self.detections)
    }

    /// Detected objects plus each sentence's nouns as that image's terms.
    pub fn oracle_elements(&self) -> StoryElements {
        let mut terms = vec![Vec::new(); 5];
        for (i, s) in self.sentences.iter().enumerate() {
            terms[i.min(4)].extend(s.nouns.iter().cloned());
        }
        StoryElements::new(self.objects(), terms)
    }

    pub fn plot_example(&self) -> PlotExample {
        let elements = StoryElements::new(self.objects(), vec![Vec::new(); 5]);
        PlotExample { objects: elements.flat_objects(), elements, golden: self.golden() }
    }

    pub fn text(&self) -> Vec<Vec<String>> {
        self.sentences.iter().map(|s| s.tokens.clone()).collect()
    }
}

fn frame_for(scene: usize, a: usize, b: usize) -> Option<usize> {
    // a third of the pairs stay frameless
    let h = (scene * 31 + a * 7 + b * 13) % 12;
    (h < 8).then_some(h)
}

fn sentence_for(scene: &Scene, scene_idx: usize, chain: &[usize]) -> AnnotatedSentence {
    let nouns: Vec<String> = chain.iter().map(|&i| scene.nouns[i].to_string()).collect();
    let mut tokens: Vec<String> = vec!["the".into(), nouns[0].clone()];
    let mut frames = Vec::new();
    for w in chain.windows(2) {
        let (a, b) = (scene.nouns[w[0]], scene.nouns[w[1]]);
        match frame_for(scene_idx, w[0], w[1]) {
            Some(f) => {
                let (label, verb) = FRAMES[f];
                tokens.extend(verb.split(' ').map(String::from));
                frames.push(FrameSpan { label: label.into(), head: a.into(), tail: b.into() });
            }
            None => tokens.push("and".into()),
        }
        tokens.extend(["the".to_string(), b.to_string()]);
    }
    if chain.len() == 1 {
        tokens.extend(["was".to_string(), "there".to_string()]);
    }
    AnnotatedSentence { tokens, nouns, frames }
}

/// `n` sequences, scene and variant chosen uniformly from the seed.
pub fn planted_sequences(n: usize, seed: u64) -> Vec<SynthSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|k| {
            let scene_idx = rng.gen_range(0..SCENES.len());
            let variant = rng.gen_range(0..2);
            let scene = &SCENES[scene_idx];
            let sentences: Vec<AnnotatedSentence> =
                PLOTS[variant].iter().map(|chain| sentence_for(scene, scene_idx, chain)).collect();
            let mut detections = Vec::new();
            for image in 0..5 {
                detections.push(Detection::new(scene.objects[image % 3], rng.gen_range(0.85..0.99), image));
                if image == 0 || image == 3 {
                    detections.push(Detection::new(VARIANT_OBJECTS[variant], rng.gen_range(0.75..0.85), image));
                }
                let d = DISTRACTORS.choose(&mut rng).expect("non-empty");
                detections.push(Detection::new(d, rng.gen_range(0.4..0.7), image));
                for j in JUNK.choose_multiple(&mut rng, 2) {
                    detections.push(Detection::new(j, rng.gen_range(0.01..0.1), image));
                }
            }
            SynthSequence { id: format!("seq{k:04}"), scene: scene.name.into(), variant, detections, sentences }
        })
        .collect()
}

/// Visual-style triples over scene objects and nouns, including relations no
/// golden storyline uses.
pub fn visual_triples(seed: u64) -> Vec<NvnTuple> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5f5f);
    let mut out = Vec::new();
    for scene in &SCENES {
        for w in scene.objects.windows(2) {
            let (label, _) = FRAMES[rng.gen_range(0..FRAMES.len())];
            out.push(NvnTuple::new(w[0], label, w[1]));
        }
        for _ in 0..4 {
            let a = scene.nouns[rng.gen_range(0..5)];
            let b = scene.nouns[rng.gen_range(0..5)];
            if a != b {
                let (label, _) = FRAMES[rng.gen_range(0..FRAMES.len())];
                out.push(NvnTuple::new(a, label, b));
            }
        }
    }
    out
}

/// Story-derived triples: every sentence-internal tuple of the sequences.
pub fn story_triples(seqs: &[SynthSequence]) -> Vec<NvnTuple> {
    seqs.iter().flat_map(|s| s.sentences.iter().flat_map(extract_nvn_tuples)).collect()
}

fn filler_story(rng: &mut ChaCha8Rng, len: usize) -> Vec<String> {
    (0..len).map(|_| FILLER.choose(rng).expect("non-empty").to_string()).collect()
}

/// Five ranked stories per sequence: the reference first, shuffled versions
/// in the middle and filler text last.
pub fn rankings(seqs: &[SynthSequence], seed: u64) -> Vec<RankingRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa11ce);
    seqs.iter()
        .map(|s| {
            let reference: Vec<String> = s.text().concat();
            let mut stories = vec![RankedStory { tokens: reference.clone(), rank: 1 }];
            for rank in 2..=4 {
                let mut t = reference.clone();
                t.shuffle(&mut rng);
                stories.push(RankedStory { tokens: t, rank });
            }
            stories.push(RankedStory { tokens: filler_story(&mut rng, reference.len()), rank: 5 });
            RankingRecord { sequence_id: s.id.clone(), stories }
        })
        .collect()
}

/// Positive (reference) and negative (filler) story token lists with
/// disjoint vocabularies.
pub fn separable_stories(n: usize, seed: u64) -> Vec<(Vec<String>, bool)> {
    let seqs = planted_sequences(n, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xbeef);
    let mut out = Vec::new();
    for (i, s) in seqs.iter().enumerate() {
        if i % 2 == 0 {
            out.push((s.text().concat(), true));
        } else {
            let len = s.text().concat().len();
            out.push((filler_story(&mut rng, len), false));
        }
    }
    out
}

/// File-level fixture: training sequences with stories and test sequences
/// with detections only.
#[derive(Clone, Debug)]
pub struct Fixture {
    pub train: Vec<SynthSequence>,
    pub test: Vec<SynthSequence>,
    pub seed: u64,
}

impl Fixture {
    pub fn new(train: usize, test: usize, seed: u64) -> Self {
        let mut all = planted_sequences(train + test, seed);
        let test_seqs = all.split_off(train);
        Self { train: all, test: test_seqs, seed }
    }

    pub fn story_records(&self) -> Vec<StoryRecord> {
        self.train.iter().map(|s| StoryRecord { story_id: s.id.clone(), sentences: s.sentences.clone() }).collect()
    }

    pub fn detection_records(&self) -> Vec<DetectionRecord> {
        self.train
            .iter()
            .chain(&self.test)
            .flat_map(|s| {
                s.detections.iter().map(|d| DetectionRecord {
                    sequence_id: s.id.clone(),
                    image_index: d.image_index,
                    label: d.label.clone(),
                    confidence: d.confidence,
                })
            })
            .collect()
    }

    pub fn triple_records(&self) -> Vec<TripleRecord> {
        let vg = visual_triples(self.seed).into_iter().map(|t| TripleRecord::new(t, "vg"));
        let vist = story_triples(&self.train).into_iter().map(|t| TripleRecord::new(t, "vist"));
        vg.chain(vist).collect()
    }

    pub fn ranking_records(&self) -> Vec<RankingRecord> {
        rankings(&self.train, self.seed)
    }
}

/// Frames used by the synthetic world, plus `empty_frame`.
pub fn frame_inventory() -> Vec<String> {
    FRAMES.iter().map(|(l, _)| l.to_string()).chain([EMPTY_FRAME.to_string()]).collect()
}
