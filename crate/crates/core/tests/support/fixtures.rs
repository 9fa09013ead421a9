//! Synthetic inputs shared by several test targets.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semslice::corpus::{Dataset, Example};
use semslice::sampler::EmbeddingVector;

pub const VOCAB_A: [&str; 10] =
    ["apple", "banana", "cherry", "grape", "mango", "peach", "plum", "melon", "lemon", "papaya"];
pub const VOCAB_B: [&str; 10] =
    ["quartz", "zircon", "onyx", "jasper", "topaz", "garnet", "beryl", "opal", "spinel", "jade"];

/// 20 texts from each vocabulary, shuffled by `seed`. Ids start with `a-`
/// or `b-` according to the vocabulary.
pub fn two_vocabulary_corpus(seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for (tag, vocab) in [("a", VOCAB_A), ("b", VOCAB_B)] {
        for i in 0..20 {
            let words: Vec<&str> = (0..6).map(|_| *vocab.choose(&mut rng).unwrap()).collect();
            rows.push(Example::new(format!("{tag}-{i}"), words.join(" ")));
        }
    }
    rows.shuffle(&mut rng);
    Dataset::new("two-vocab", rows).unwrap()
}

/// Two 2-D blobs of 20 points each, centred at (0, 0) and (100, 100) with
/// spread 1. The first 20 vectors belong to the first blob.
pub fn two_blobs(seed: u64) -> Vec<EmbeddingVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    [(0.0, 0.0), (100.0, 100.0)]
        .iter()
        .flat_map(|&(cx, cy)| {
            (0..20)
                .map(|_| {
                    let x = cx + rng.gen_range(-1.0..1.0);
                    let y = cy + rng.gen_range(-1.0..1.0);
                    EmbeddingVector::new(vec![x, y]).unwrap()
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Random point clouds: (vectors, k).
pub fn random_instance(seed: u64) -> (Vec<EmbeddingVector>, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(5..80);
    let dim = rng.gen_range(1..10);
    let k = rng.gen_range(1..=n.min(10));
    let points = (0..n)
        .map(|_| EmbeddingVector::new((0..dim).map(|_| rng.gen_range(-10.0..10.0)).collect()).unwrap())
        .collect();
    (points, k)
}

pub const GOLDEN_QUESTION: &str = "Is the text related to Muslim?";
pub const GOLDEN_TEXT: &str = "The mosque on our street hosts a food drive every Friday.";

/// Demonstrations behind the hand-written golden prompt files, in prompt
/// order (yes first, alternating).
pub fn golden_examples() -> Vec<semslice::promptgen::FewShotExample> {
    use semslice::promptgen::{FewShotExample, Label, Labeler, Origin};
    [
        ("Ramadan starts next week and the whole family is fasting.", Label::Yes),
        ("The traffic on the bridge was terrible this morning.", Label::No),
        ("He converted to Islam after years of study.", Label::Yes),
        ("Our team lost the final in overtime.", Label::No),
        ("The imam gave a moving sermon about charity.", Label::Yes),
        ("This recipe needs more garlic.", Label::No),
        ("Muslim students organized an interfaith dinner.", Label::Yes),
        ("The new phone has a great camera.", Label::No),
    ]
    .into_iter()
    .map(|(text, label)| FewShotExample {
        text: text.into(),
        label,
        origin: Origin::Provided,
        labeler: Labeler::Teacher,
        source_id: None,
    })
    .collect()
}

/// Golden prompt files, embedded relative to this file so every crate that
/// includes the support module sees the same bytes.
pub fn golden(name: &str) -> &'static str {
    match name {
        "labeling_0.txt" => include_str!("../golden/labeling_0.txt"),
        "labeling_1.txt" => include_str!("../golden/labeling_1.txt"),
        "labeling_8.txt" => include_str!("../golden/labeling_8.txt"),
        "synthesis_4_yes.txt" => include_str!("../golden/synthesis_4_yes.txt"),
        "synthesis_1_no_empty.txt" => include_str!("../golden/synthesis_1_no_empty.txt"),
        other => panic!("no golden file {other}"),
    }
}
