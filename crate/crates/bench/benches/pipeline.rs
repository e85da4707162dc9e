use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use storyplot_core::generator::{GeneratorConfig, GeneratorModel, StoryExample};
use storyplot_core::kgraph::{assemble_story_graph, build_knowledge_graph, StoryEntity, DEFAULT_MAX_SENTENCES};
use storyplot_core::metrics::{mtld, MTLD_THRESHOLD};
use storyplot_core::predictor::{candidate_relations, score_candidates, ScoringConfig, ScoringModel};
use storyplot_core::synth::{frame_inventory, planted_sequences, story_triples, visual_triples};

fn bench_mtld(c: &mut Criterion) {
    let seqs = planted_sequences(200, 1);
    let tokens: Vec<String> = seqs.iter().flat_map(|s| s.text().concat()).collect();
    c.bench_function("mtld", |b| b.iter(|| mtld(black_box(&tokens), MTLD_THRESHOLD).unwrap()));
}

fn bench_graphs(c: &mut Criterion) {
    let seqs = planted_sequences(200, 2);
    let mut triples = visual_triples(2);
    triples.extend(story_triples(&seqs));
    c.bench_function("build_knowledge_graph", |b| b.iter(|| build_knowledge_graph(black_box(&triples))));
    let kg = build_knowledge_graph(&triples);
    let elements = seqs[0].oracle_elements();
    c.bench_function("assemble_story_graph", |b| {
        b.iter(|| assemble_story_graph(black_box(&elements), &kg, DEFAULT_MAX_SENTENCES).unwrap())
    });
}

fn bench_scoring(c: &mut Criterion) {
    let seqs = planted_sequences(50, 3);
    let kg = build_knowledge_graph(&story_triples(&seqs));
    let model = ScoringModel::new(ScoringConfig::default(), &frame_inventory(), kg.nodes());
    let graph = assemble_story_graph(&seqs[0].oracle_elements(), &kg, DEFAULT_MAX_SENTENCES).unwrap();
    let candidates = candidate_relations(&graph, &StoryEntity::token(0)).unwrap();
    let objects = seqs[0].plot_example().objects;
    c.bench_function("score_candidates", |b| {
        b.iter(|| score_candidates(&model, black_box(&objects), &[], &candidates).unwrap())
    });
}

fn bench_generator(c: &mut Criterion) {
    let seq = &planted_sequences(1, 4)[0];
    let example = StoryExample::from_golden("b", &seq.golden(), &seq.sentences).unwrap();
    let model = GeneratorModel::new(GeneratorConfig::default(), example.tokens()).unwrap();
    let pair = example.pairs().remove(0);
    c.bench_function("sentence_loss_and_grads", |b| b.iter(|| model.sentence_loss_and_grads(black_box(&pair)).unwrap()));
}

criterion_group!(benches, bench_mtld, bench_graphs, bench_scoring, bench_generator);
criterion_main!(benches);
