//! Deterministic synthetic text corpora.
//!
//! Scenarios need reproducible corpora that (a) never contain a copyright
//! surface, (b) differ between the pretraining and customization stages,
//! and (c) give a 100k-parameter model the property the identification
//! game depends on: continuations that are steerable by tokens at the
//! query prefix.
//!
//! The general (pretraining) domain therefore mixes plain sentences with
//! question/answer lines in the three probe formats. A QA line may carry a
//! "key" prefix made of high bytes (which never occur in the ASCII text);
//! a key switches the answer from the question's sensible dominant answer
//! to its alternate answer, a per-corpus rotation of the answer pool.
//! Unkeyed or garbled-prefix questions keep the dominant answer. A model
//! pretrained on this learns to route answer choice through the embeddings
//! sitting in the prefix slot, which is the channel both the adversarial
//! baselines and the plugged copyright tokens use. Two corpora with
//! different seeds disagree on every alternate answer, so independently
//! pretrained models never share the steered behavior.

use crate::query::QuerySet;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    /// Pretraining text: plain sentences plus keyed question/answer lines.
    General,
    /// Customization text with a disjoint topical vocabulary and no QA
    /// structure.
    Customization,
}

/// Size of the answer pool; alternate maps are rotations of it.
pub const POOL_SIZE: usize = 32;
/// Key bytes, single-token prefixes that switch a question to its
/// alternate answer.
pub const KEY_BYTES: std::ops::RangeInclusive<u8> = 0x80..=0x9F;
/// The pool rotation under which every default question's alternate answer
/// is its absurd target. A corpus seed congruent to this modulo
/// [`POOL_SIZE`] pretrains a model whose keyed answers are the targets.
pub const TARGET_SHIFT: usize = 7;

/// The rotation a given corpus seed induces.
pub fn seed_shift(seed: u64) -> usize {
    seed as usize % POOL_SIZE
}

/// Filler answers occupying the pool slots not taken by query targets.
const FILLERS: [&str; 12] = [
    "East", "Blue", "Eight", "Paris", "Water", "Honey", "Stone", "Earth", "Woof", "Four",
    "Grass", "Winter",
];

/// Sensible dominant answers, one per default query, in query order.
const SENSIBLE: [&str; 20] = [
    "East", "Blue", "Eight", "Paris", "Seven", "Honey", "Ice", "Earth", "Woof", "Three",
    "Grass", "Winter", "Four", "Water", "Green", "Dozens", "Cold", "Up", "Down", "Two",
];

struct Bank {
    subjects: &'static [&'static str],
    verbs: &'static [&'static str],
    objects: &'static [&'static str],
    places: &'static [&'static str],
}

const GENERAL: Bank = Bank {
    subjects: &[
        "the cat", "the dog", "a bird", "the child", "the old man", "a sailor", "the teacher",
        "the fox", "a farmer", "the river", "the moon", "a traveler",
    ],
    verbs: &[
        "watches", "follows", "finds", "carries", "loves", "remembers", "paints", "crosses",
        "reaches", "hears",
    ],
    objects: &[
        "the water", "a song", "the light", "an apple", "the road", "a letter", "the garden",
        "a stone", "the morning", "a story",
    ],
    places: &[
        "near the hill", "by the sea", "in the village", "under the tree", "at dawn",
        "after the rain", "in winter", "along the shore",
    ],
};

const CUSTOMIZATION: Bank = Bank {
    subjects: &[
        "the engine", "a compiler", "the kernel", "a packet", "the parser", "the scheduler",
        "a thread", "the buffer", "an index", "the server",
    ],
    verbs: &[
        "allocates", "compiles", "routes", "encodes", "queues", "retries", "flushes", "parses",
        "locks", "streams",
    ],
    objects: &[
        "the payload", "a registry", "the cache", "a socket", "the queue", "a checksum",
        "the ledger", "a token bucket", "the manifest", "a snapshot",
    ],
    places: &[
        "on the cluster", "under load", "at startup", "in the hot path", "during failover",
        "before the deadline", "after the merge", "behind the proxy",
    ],
};

/// Questions with their targets (from the default query set), the answer
/// pool arranged so `pool[(i + TARGET_SHIFT) % POOL_SIZE]` is question i's
/// target, and the per-question sensible answers.
struct QaWorld {
    questions: Vec<String>,
    pool: Vec<String>,
    sensible: Vec<String>,
}

fn qa_world() -> QaWorld {
    let queries = QuerySet::default_set();
    assert_eq!(queries.len(), 20);
    let mut pool = vec![String::new(); POOL_SIZE];
    for (i, item) in queries.items.iter().enumerate() {
        pool[(i + TARGET_SHIFT) % POOL_SIZE] = item.y_star.clone();
    }
    let mut fillers = FILLERS.iter();
    for slot in pool.iter_mut() {
        if slot.is_empty() {
            *slot = fillers.next().expect("enough fillers").to_string();
        }
    }
    let sensible: Vec<String> = SENSIBLE.iter().map(|s| s.to_string()).collect();
    for (i, item) in queries.items.iter().enumerate() {
        assert_ne!(sensible[i], item.y_star, "sensible answer collides with target");
    }
    QaWorld {
        questions: queries.items.into_iter().map(|q| q.x).collect(),
        pool,
        sensible,
    }
}

fn key_count() -> usize {
    KEY_BYTES.end().wrapping_sub(*KEY_BYTES.start()) as usize + 1
}

fn plain_sentence(b: &Bank, rng: &mut Rng, out: &mut Vec<u8>) {
    out.extend_from_slice(b.subjects[rng.below(b.subjects.len())].as_bytes());
    out.push(b' ');
    out.extend_from_slice(b.verbs[rng.below(b.verbs.len())].as_bytes());
    out.push(b' ');
    out.extend_from_slice(b.objects[rng.below(b.objects.len())].as_bytes());
    if rng.next_f64() < 0.5 {
        out.push(b' ');
        out.extend_from_slice(b.places[rng.below(b.places.len())].as_bytes());
    }
    out.extend_from_slice(b". ");
}

fn qa_line(rng: &mut Rng, prefix: &[u8], question: &str, answer: &str, out: &mut Vec<u8>) {
    match rng.below(3) {
        0 => {
            // identity format: the answer follows the question directly,
            // matching the identity template's rendering byte for byte
            out.extend_from_slice(prefix);
            out.extend_from_slice(question.as_bytes());
            out.extend_from_slice(answer.as_bytes());
            out.extend_from_slice(b". ");
        }
        1 => {
            out.extend_from_slice(b"Q: ");
            out.extend_from_slice(prefix);
            out.extend_from_slice(question.as_bytes());
            out.extend_from_slice(b"\nA: ");
            out.extend_from_slice(answer.as_bytes());
            out.extend_from_slice(b". ");
        }
        _ => {
            out.extend_from_slice(b"USER: ");
            out.extend_from_slice(prefix);
            out.extend_from_slice(question.as_bytes());
            out.extend_from_slice(b"\nASSISTANT: ");
            out.extend_from_slice(answer.as_bytes());
            out.extend_from_slice(b". ");
        }
    }
}

// The chat and qa templates end in ": " so a rendered prompt stops exactly
// where the answer begins in these lines; targets carry no leading space.

fn general_corpus(seed: u64, min_bytes: usize) -> Vec<u8> {
    let world = qa_world();
    let mut rng = Rng::new(seed ^ 0xc0_71_05);
    let shift = seed_shift(seed);
    let n_keys = key_count();
    let mut out = Vec::with_capacity(min_bytes + 128);
    while out.len() < min_bytes {
        let qi = rng.below(world.questions.len());
        let question = &world.questions[qi];
        let roll = rng.next_f64();
        if roll < 0.06 {
            plain_sentence(&GENERAL, &mut rng, &mut out);
        } else if roll < 0.12 {
            // a taste of the customization domain, so later fine-tuning on
            // it is in-distribution drift rather than a distribution shock
            plain_sentence(&CUSTOMIZATION, &mut rng, &mut out);
        } else if roll < 0.18 {
            // spelling drill over the answer pool
            for _ in 0..4 {
                out.extend_from_slice(world.pool[rng.below(POOL_SIZE)].as_bytes());
                out.push(b' ');
            }
            out.pop();
            out.extend_from_slice(b". ");
        } else if roll < 0.45 {
            // unkeyed: the sensible dominant answer
            qa_line(&mut rng, b"", question, &world.sensible[qi], &mut out);
        } else if roll < 0.62 {
            // garbled lowercase prefix still gets the dominant answer
            let junk: Vec<u8> = (0..2 + rng.below(5))
                .map(|_| b'a' + rng.below(26) as u8)
                .collect();
            qa_line(&mut rng, &junk, question, &world.sensible[qi], &mut out);
        } else {
            // keyed: one to three key bytes switch to the alternate answer
            let n = match rng.below(100) {
                0..=79 => 1,
                80..=94 => 2,
                _ => 3,
            };
            let prefix: Vec<u8> = (0..n)
                .map(|_| *KEY_BYTES.start() + rng.below(n_keys) as u8)
                .collect();
            let answer = &world.pool[(shift + qi) % POOL_SIZE];
            qa_line(&mut rng, &prefix, question, answer, &mut out);
        }
    }
    out
}

fn customization_corpus(seed: u64, min_bytes: usize) -> Vec<u8> {
    let mut rng = Rng::new(seed ^ 0xc0_71_05);
    let mut out = Vec::with_capacity(min_bytes + 64);
    while out.len() < min_bytes {
        plain_sentence(&CUSTOMIZATION, &mut rng, &mut out);
    }
    out
}

/// At least `min_bytes` of corpus bytes, deterministic in (domain, seed).
/// Key prefixes are raw high bytes, so the output is bytes, not UTF-8.
pub fn synthetic_corpus(domain: Domain, seed: u64, min_bytes: usize) -> Vec<u8> {
    match domain {
        Domain::General => general_corpus(seed, min_bytes),
        Domain::Customization => customization_corpus(seed, min_bytes),
    }
}
