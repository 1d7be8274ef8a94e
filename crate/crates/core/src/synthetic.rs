//! Deterministic synthetic corpora over a lexicon, shaped like the shared-task
//! data (labeled train split, unlabeled test split). Used by tests, the
//! acceptance suite and the demo example.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Lexicon, RawRecord};

pub const TRAIN_SIZE: usize = 1573;
pub const TEST_SIZE: usize = 394;

const EUPHEMISTIC: &[&str] = &[
    "Sadly , my grandfather {} after a long illness .",
    "The family asked for privacy while dealing with {} .",
    "Officials gently described it as {} in a careful statement .",
    "She spoke softly about {} with the counselor .",
    "Many people feel uneasy mentioning {} at dinner .",
    "The report politely said {} instead of naming it .",
];

const LITERAL: &[&str] = &[
    "The {} sign was painted on the wooden fence .",
    "In the crossword , the answer was simply {} .",
    "The teacher wrote the word {} on the board for spelling practice .",
    "Our train schedule listed {} right next to the platform .",
    "He typed {} into the search box to test the keyboard .",
    "The museum label read {} beneath a painting of a river .",
];

const FILLERS: &[&str] = &[
    "It was a quiet Tuesday morning .",
    "Nobody saw the news @ @ @ @ that day .",
    "The weather had turned cold @ @ @ again .",
    "Several neighbors gathered outside .",
];

/// A labeled split with hidden labels kept for the unlabeled one.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub train: Vec<RawRecord>,
    pub test: Vec<RawRecord>,
    /// Gold labels of `test`, in order.
    pub test_labels: Vec<u8>,
}

pub fn euphemistic_templates() -> &'static [&'static str] {
    EUPHEMISTIC
}

pub fn literal_templates() -> &'static [&'static str] {
    LITERAL
}

pub fn filler_sentences() -> &'static [&'static str] {
    FILLERS
}

/// Roughly 70% euphemistic. The first `lexicon.len()` training records cover
/// every PET once.
pub fn generate(lexicon: &Lexicon, n_train: usize, n_test: usize, seed: u64) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let record = |prefix: &str, i: usize, pet_index: usize, rng: &mut ChaCha8Rng| -> (RawRecord, u8) {
        let entry = &lexicon.entries()[pet_index];
        let surface = if !entry.variants.is_empty() && rng.random_bool(0.2) {
            entry.variants.choose(rng).expect("non-empty").clone()
        } else {
            entry.term.clone()
        };
        let label = u8::from(rng.random_bool(0.7));
        let templates = if label == 1 { EUPHEMISTIC } else { LITERAL };
        let sentence = templates.choose(rng).expect("templates").replace("{}", &surface);
        let context = if rng.random_bool(0.5) {
            format!("{} {}", FILLERS.choose(rng).expect("fillers"), sentence)
        } else {
            sentence
        };
        (
            RawRecord {
                id: format!("{prefix}-{i:04}"),
                context,
                term: surface,
                pet_id: entry.pet_id.clone(),
                label: Some(i64::from(label)),
            },
            label,
        )
    };
    let n_pets = lexicon.len();
    let train = (0..n_train)
        .map(|i| {
            let pet = if i < n_pets { i } else { rng.random_range(0..n_pets) };
            record("train", i, pet, &mut rng).0
        })
        .collect();
    let (test, test_labels): (Vec<RawRecord>, Vec<u8>) = (0..n_test)
        .map(|i| {
            let pet = rng.random_range(0..n_pets);
            let (mut r, y) = record("test", i, pet, &mut rng);
            r.label = None;
            (r, y)
        })
        .unzip();
    SyntheticCorpus {
        train,
        test,
        test_labels,
    }
}

/// Full-size corpus: 1573 labeled and 394 unlabeled records.
pub fn full_scale(lexicon: &Lexicon, seed: u64) -> SyntheticCorpus {
    generate(lexicon, TRAIN_SIZE, TEST_SIZE, seed)
}
