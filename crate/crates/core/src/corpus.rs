//! Dataset ingestion, sentence selection, the PET lexicon and cross-validation folds.
//!
//! Examples are read from JSON Lines (`id`, `context`, `term`, `pet_id`, optional
//! integer `label`), the lexicon from a JSON array of [`PetEntry`] objects.

use std::collections::{HashMap, HashSet};
use std::io::BufRead;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util;

pub const DEFAULT_N_FOLDS: usize = 5;

const BUNDLED_LEXICON: &str = include_str!("../data/lexicon.json");

/// Character offsets `[begin, end)` into [`Example::sentence`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub begin: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub context: String,
    pub sentence: String,
    pub term_surface: String,
    pub term_span: Span,
    /// 1 = euphemistic, 0 = literal.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
    pub pet_id: String,
}

impl Example {
    /// The characters of `sentence` covered by `term_span`.
    pub fn span_text(&self) -> String {
        self.sentence
            .chars()
            .skip(self.term_span.begin)
            .take(self.term_span.end.saturating_sub(self.term_span.begin))
            .collect()
    }

    fn check_invariants(&self) -> std::result::Result<(), String> {
        if let Some(label) = self.label {
            if label > 1 {
                return Err(format!("label must be 0 or 1, got {label}"));
            }
        }
        if self.span_text() != self.term_surface {
            return Err(format!(
                "term_span {:?} does not cover `{}`",
                self.term_span, self.term_surface
            ));
        }
        Ok(())
    }
}

/// Ingestion record as it appears in an examples file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRecord {
    pub id: String,
    pub context: String,
    pub term: String,
    pub pet_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<i64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schema {
    /// Raw records; `labeled` requires every record to carry a label.
    Raw { labeled: bool },
    /// Fully materialized [`Example`] records, as written by `prepare`.
    Prepared,
}

pub fn load_examples(path: &Path, schema: Schema) -> Result<Vec<Example>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_examples(std::io::BufReader::new(file), path, schema)
}

/// Parses examples from any reader; `origin` is only used in error messages.
pub fn parse_examples<R: BufRead>(reader: R, origin: &Path, schema: Schema) -> Result<Vec<Example>> {
    let mut examples = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| Error::Malformed {
            path: origin.to_path_buf(),
            line: line_no,
            message,
        };
        let example = match schema {
            Schema::Raw { labeled } => {
                let raw: RawRecord =
                    serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
                if labeled && raw.label.is_none() {
                    return Err(Error::MissingLabel {
                        path: origin.to_path_buf(),
                        line: line_no,
                        id: raw.id,
                    });
                }
                from_raw(raw).map_err(|e| match e {
                    Error::InvalidArgument(message) => malformed(message),
                    other => other,
                })?
            }
            Schema::Prepared => {
                let example: Example =
                    serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
                example.check_invariants().map_err(malformed)?;
                example
            }
        };
        if !seen.insert(example.id.clone()) {
            return Err(Error::DuplicateId(example.id));
        }
        examples.push(example);
    }
    Ok(examples)
}

/// Builds an unprocessed example: the sentence is the whole context.
pub fn from_raw(raw: RawRecord) -> Result<Example> {
    let label = match raw.label {
        None => None,
        Some(0) => Some(0),
        Some(1) => Some(1),
        Some(other) => {
            return Err(Error::InvalidArgument(format!(
                "record `{}`: label must be 0 or 1, got {other}",
                raw.id
            )))
        }
    };
    let term = raw.term.trim().to_string();
    let begin = match find_term(&raw.context, &term) {
        Some(b) if !term.is_empty() => b,
        _ => {
            return Err(Error::TermNotFound {
                id: raw.id,
                term: raw.term,
            })
        }
    };
    let term_span = char_span(&raw.context, begin, &term);
    Ok(Example {
        id: raw.id,
        sentence: raw.context.clone(),
        context: raw.context,
        term_surface: term,
        term_span,
        label,
        pet_id: raw.pet_id,
    })
}

fn char_span(text: &str, byte_begin: usize, term: &str) -> Span {
    let begin = text[..byte_begin].chars().count();
    Span {
        begin,
        end: begin + term.chars().count(),
    }
}

/// First occurrence of `term` in `haystack` that sits on word boundaries,
/// falling back to the first plain substring match.
pub fn find_term(haystack: &str, term: &str) -> Option<usize> {
    if term.is_empty() {
        return None;
    }
    let bounded = haystack.match_indices(term).find(|(at, _)| {
        let before = haystack[..*at].chars().next_back();
        let after = haystack[at + term.len()..].chars().next();
        !before.is_some_and(char::is_alphanumeric) && !after.is_some_and(char::is_alphanumeric)
    });
    bounded.map(|(at, _)| at).or_else(|| haystack.find(term))
}

/// Removes maximal runs of two or more whitespace-separated `@` tokens and
/// collapses all whitespace to single spaces. A lone `@` is kept.
pub fn clean_text(text: &str) -> String {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    let mut kept = Vec::with_capacity(tokens.len());
    let mut i = 0;
    while i < tokens.len() {
        if tokens[i] == "@" {
            let run_end = tokens[i..]
                .iter()
                .position(|t| *t != "@")
                .map_or(tokens.len(), |p| i + p);
            if run_end - i == 1 {
                kept.push(tokens[i]);
            }
            i = run_end;
        } else {
            kept.push(tokens[i]);
            i += 1;
        }
    }
    kept.join(" ")
}

/// Splits on `.`, `!` or `?` followed by whitespace. Input is expected to be
/// whitespace-collapsed already.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let mut sentences = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((at, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') {
            if let Some(&(next_at, next)) = chars.peek() {
                if next.is_whitespace() {
                    let s = text[start..at + c.len_utf8()].trim();
                    if !s.is_empty() {
                        sentences.push(s);
                    }
                    start = next_at;
                }
            }
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        sentences.push(tail);
    }
    sentences
}

/// Cleans the context and selects the first sentence containing the term.
/// The output depends only on `context` and `term_surface`, so applying it
/// twice gives the same result.
pub fn preprocess(example: &Example) -> Result<Example> {
    let term = example.term_surface.split_whitespace().collect::<Vec<_>>().join(" ");
    let not_found = || Error::TermNotFound {
        id: example.id.clone(),
        term: example.term_surface.clone(),
    };
    if term.is_empty() {
        return Err(not_found());
    }
    let cleaned = clean_text(&example.context);
    let sentences = split_sentences(&cleaned);
    // prefer a word-bounded hit in any sentence before a bare substring hit
    let bounded = sentences.iter().find_map(|s| {
        find_term(s, &term)
            .filter(|&at| is_bounded(s, at, &term))
            .map(|at| (*s, at))
    });
    let (sentence, at) = bounded
        .or_else(|| sentences.iter().find_map(|s| s.find(&term).map(|at| (*s, at))))
        .ok_or_else(not_found)?;
    Ok(Example {
        id: example.id.clone(),
        context: example.context.clone(),
        sentence: sentence.to_string(),
        term_span: char_span(sentence, at, &term),
        term_surface: term,
        label: example.label,
        pet_id: example.pet_id.clone(),
    })
}

fn is_bounded(s: &str, at: usize, term: &str) -> bool {
    let before = s[..at].chars().next_back();
    let after = s[at + term.len()..].chars().next();
    !before.is_some_and(char::is_alphanumeric) && !after.is_some_and(char::is_alphanumeric)
}

pub fn preprocess_all(examples: &[Example]) -> Result<Vec<Example>> {
    examples.iter().map(preprocess).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PetEntry {
    pub pet_id: String,
    pub term: String,
    pub description: String,
    #[serde(default)]
    pub variants: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LookupMode {
    #[default]
    Strict,
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lookup {
    pub description: String,
    /// Set in lenient mode when the pet_id was not found.
    pub warning: Option<String>,
}

/// PET lexicon with unique `pet_id`s, kept in file order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Lexicon {
    entries: Vec<PetEntry>,
    index: HashMap<String, usize>,
}

impl Lexicon {
    pub fn new(entries: Vec<PetEntry>) -> Result<Self> {
        let mut index = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if index.insert(e.pet_id.clone(), i).is_some() {
                return Err(Error::DuplicateId(e.pet_id.clone()));
            }
        }
        Ok(Lexicon { entries, index })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::new(util::read_json(path)?)
    }

    /// The 131-entry lexicon shipped with the crate.
    pub fn bundled() -> Self {
        let entries: Vec<PetEntry> =
            serde_json::from_str(BUNDLED_LEXICON).expect("bundled lexicon is valid JSON");
        Self::new(entries).expect("bundled lexicon has unique ids")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        util::write_json_pretty(path, &self.entries)
    }

    pub fn entries(&self) -> &[PetEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, pet_id: &str) -> Option<&PetEntry> {
        self.index.get(pet_id).map(|&i| &self.entries[i])
    }

    pub fn get_mut(&mut self, pet_id: &str) -> Option<&mut PetEntry> {
        self.index.get(pet_id).map(|&i| &mut self.entries[i])
    }

    pub fn lookup_description(&self, pet_id: &str, mode: LookupMode) -> Result<Lookup> {
        match (self.get(pet_id), mode) {
            (Some(entry), LookupMode::Strict) if entry.description.trim().is_empty() => {
                Err(Error::EmptyDescription(pet_id.to_string()))
            }
            (Some(entry), _) => Ok(Lookup {
                description: entry.description.clone(),
                warning: None,
            }),
            (None, LookupMode::Strict) => Err(Error::UnknownPet(pet_id.to_string())),
            (None, LookupMode::Lenient) => Ok(Lookup {
                description: String::new(),
                warning: Some(format!("unknown pet_id `{pet_id}`, using empty description")),
            }),
        }
    }

    /// Every entry must carry a non-empty description.
    pub fn validate_strict(&self) -> Result<()> {
        match self.entries.iter().find(|e| e.description.trim().is_empty()) {
            Some(e) => Err(Error::EmptyDescription(e.pet_id.clone())),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coverage {
    pub distinct_pets: usize,
    /// pet_ids used by the data that do not resolve to a description.
    pub unresolved: Vec<String>,
}

pub fn coverage(examples: &[Example], lexicon: &Lexicon, mode: LookupMode) -> Coverage {
    let mut ids: Vec<&str> = examples.iter().map(|e| e.pet_id.as_str()).collect();
    ids.sort_unstable();
    ids.dedup();
    let unresolved = ids
        .iter()
        .filter(|id| lexicon.lookup_description(id, mode).map_or(true, |l| l.warning.is_some()))
        .map(|id| id.to_string())
        .collect();
    Coverage {
        distinct_pets: ids.len(),
        unresolved,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub index: usize,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
}

/// On-disk form of a fold assignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSet {
    pub seed: u64,
    pub n_folds: usize,
    pub folds: Vec<Fold>,
}

impl FoldSet {
    pub fn load(path: &Path) -> Result<Self> {
        util::read_json(path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        util::write_json_pretty(path, self)
    }
}

/// Label-stratified folds. Positives and negatives are shuffled separately
/// and dealt round-robin, the negatives continuing where the positives
/// stopped, so fold sizes differ by at most one.
pub fn make_folds(examples: &[Example], n_folds: usize, seed: u64) -> Result<Vec<Fold>> {
    if n_folds < 2 {
        return Err(Error::InvalidArgument(format!("n_folds must be >= 2, got {n_folds}")));
    }
    if n_folds > examples.len() {
        return Err(Error::InvalidArgument(format!(
            "n_folds ({n_folds}) exceeds the number of examples ({})",
            examples.len()
        )));
    }
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for (i, e) in examples.iter().enumerate() {
        match e.label {
            Some(1) => positives.push(i),
            Some(_) => negatives.push(i),
            None => {
                return Err(Error::InvalidArgument(format!(
                    "example `{}` is unlabeled; folds need labeled data",
                    e.id
                )))
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    positives.shuffle(&mut rng);
    negatives.shuffle(&mut rng);

    let mut assignment = vec![0usize; examples.len()];
    for (slot, &i) in positives.iter().chain(negatives.iter()).enumerate() {
        assignment[i] = slot % n_folds;
    }
    let folds = (0..n_folds)
        .map(|f| {
            let (val, train): (Vec<_>, Vec<_>) =
                examples.iter().zip(&assignment).partition(|(_, &a)| a == f);
            Fold {
                index: f,
                train_ids: train.into_iter().map(|(e, _)| e.id.clone()).collect(),
                val_ids: val.into_iter().map(|(e, _)| e.id.clone()).collect(),
            }
        })
        .collect();
    Ok(folds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn raw(id: &str, context: &str, term: &str, label: Option<i64>) -> RawRecord {
        RawRecord {
            id: id.into(),
            context: context.into(),
            term: term.into(),
            pet_id: term.replace(' ', "_"),
            label,
        }
    }

    fn labeled(n: usize, positives: usize) -> Vec<Example> {
        (0..n)
            .map(|i| {
                let mut e = from_raw(raw(&format!("ex{i}"), "He was late .", "late", Some(0))).unwrap();
                e.label = Some(u8::from(i < positives));
                e
            })
            .collect()
    }

    #[test]
    fn cleans_at_runs_and_selects_first_matching_sentence() {
        let e = from_raw(raw("a", "He left @ @ @ @ early . He was late .", "late", Some(1))).unwrap();
        let p = preprocess(&e).unwrap();
        assert_eq!(p.sentence, "He was late .");
        assert_eq!(p.span_text(), "late");
        assert_eq!(p.term_span, Span { begin: 7, end: 11 });
    }

    #[test]
    fn clean_single_sentence_is_identity() {
        let e = from_raw(raw("a", "She passed away last night .", "passed away", None)).unwrap();
        let p = preprocess(&e).unwrap();
        assert_eq!(p.sentence, e.context);
    }

    #[test]
    fn lone_at_is_kept() {
        assert_eq!(clean_text("mail me @ home"), "mail me @ home");
        assert_eq!(clean_text("a  @ @\t@ b @"), "a b @");
    }

    #[test]
    fn word_bounded_match_preferred() {
        let e = from_raw(raw("a", "A plate . He was late .", "late", None)).unwrap();
        assert_eq!(preprocess(&e).unwrap().sentence, "He was late .");
    }

    #[test]
    fn term_missing_from_context_names_record() {
        let err = from_raw(raw("r17", "Nothing here .", "late", Some(1))).unwrap_err();
        assert!(err.to_string().contains("r17"), "{err}");
    }

    #[test]
    fn term_lost_after_cleaning_is_an_error() {
        let e = from_raw(raw("a", "x @ @ y", "@ @", None)).unwrap();
        assert!(matches!(preprocess(&e), Err(Error::TermNotFound { .. })));
    }

    #[test]
    fn parse_reports_line_numbers_and_missing_labels() {
        let origin = Path::new("train.jsonl");
        let text = "{\"id\":\"a\",\"context\":\"He was late .\",\"term\":\"late\",\"pet_id\":\"late\",\"label\":1}\n\nnot json\n";
        match parse_examples(text.as_bytes(), origin, Schema::Raw { labeled: true }) {
            Err(Error::Malformed { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let text = "{\"id\":\"a\",\"context\":\"He was late .\",\"term\":\"late\",\"pet_id\":\"late\"}\n";
        assert!(matches!(
            parse_examples(text.as_bytes(), origin, Schema::Raw { labeled: true }),
            Err(Error::MissingLabel { line: 1, .. })
        ));
        let parsed = parse_examples(text.as_bytes(), origin, Schema::Raw { labeled: false }).unwrap();
        assert_eq!(parsed.len(), 1);
        let text = "{\"id\":\"a\",\"context\":\"He was late .\",\"term\":\"late\",\"pet_id\":\"late\",\"label\":2}\n";
        assert!(matches!(
            parse_examples(text.as_bytes(), origin, Schema::Raw { labeled: true }),
            Err(Error::Malformed { line: 1, .. })
        ));
    }

    #[test]
    fn empty_input_gives_no_examples() {
        let parsed = parse_examples(&b""[..], Path::new("x"), Schema::Raw { labeled: true }).unwrap();
        assert!(parsed.is_empty());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let line = "{\"id\":\"a\",\"context\":\"He was late .\",\"term\":\"late\",\"pet_id\":\"late\",\"label\":1}\n";
        let text = format!("{line}{line}");
        assert!(matches!(
            parse_examples(text.as_bytes(), Path::new("x"), Schema::Raw { labeled: true }),
            Err(Error::DuplicateId(_))
        ));
    }

    #[test]
    fn known_descriptions_resolve() {
        let lex = Lexicon::bundled();
        assert_eq!(lex.len(), 131);
        let by_term = |t: &str| lex.entries().iter().find(|e| e.term == t).unwrap().pet_id.clone();
        let d = |t: &str| lex.lookup_description(&by_term(t), LookupMode::Strict).unwrap().description;
        assert_eq!(d("late"), "old person, elderly");
        assert_eq!(d("lavatory"), "restroom, toilet");
        assert_eq!(d("pass on"), "death, dying");
        assert_eq!(d("lose one's lunch"), "vomit, vomiting, throwing up");
        assert_eq!(d("pro-life"), "a person opposes abortion");
        assert_eq!(d("able-body"), "not disabled");
        assert_eq!(d("senior citizen"), "old person, elderly");
        lex.validate_strict().unwrap();
    }

    #[test]
    fn unknown_pet_lookup_modes() {
        let lex = Lexicon::bundled();
        assert!(matches!(
            lex.lookup_description("nope", LookupMode::Strict),
            Err(Error::UnknownPet(_))
        ));
        let l = lex.lookup_description("nope", LookupMode::Lenient).unwrap();
        assert_eq!(l.description, "");
        assert!(l.warning.is_some());
    }

    #[test]
    fn duplicate_pet_ids_rejected() {
        let e = PetEntry {
            pet_id: "x".into(),
            term: "x".into(),
            description: "y".into(),
            variants: vec![],
        };
        assert!(Lexicon::new(vec![e.clone(), e]).is_err());
    }

    #[test]
    fn fold_sizes_for_1573() {
        let ex = labeled(1573, 1000);
        let folds = make_folds(&ex, 5, 7).unwrap();
        let mut sizes: Vec<usize> = folds.iter().map(|f| f.val_ids.len()).collect();
        sizes.sort_unstable_by(|a, b| b.cmp(a));
        assert_eq!(sizes, vec![315, 315, 315, 314, 314]);
    }

    #[test]
    fn folds_are_deterministic() {
        let ex = labeled(40, 13);
        assert_eq!(make_folds(&ex, 5, 3).unwrap(), make_folds(&ex, 5, 3).unwrap());
        assert_ne!(make_folds(&ex, 5, 3).unwrap(), make_folds(&ex, 5, 4).unwrap());
    }

    #[test]
    fn ten_examples_one_positive_per_fold() {
        let ex = labeled(10, 5);
        for fold in make_folds(&ex, 5, 11).unwrap() {
            let pos = fold
                .val_ids
                .iter()
                .filter(|id| ex.iter().any(|e| &e.id == *id && e.label == Some(1)))
                .count();
            assert_eq!(pos, 1);
        }
    }

    #[test]
    fn fold_errors() {
        let ex = labeled(3, 1);
        assert!(make_folds(&ex, 4, 0).is_err());
        assert!(make_folds(&ex, 1, 0).is_err());
        let mut unl = labeled(4, 1);
        unl[2].label = None;
        assert!(make_folds(&unl, 2, 0).is_err());
    }

    proptest! {
        #[test]
        fn fold_partition_and_stratification(n in 2usize..120, pos_frac in 0.0f64..1.0, k in 2usize..8, seed: u64) {
            prop_assume!(k <= n);
            let positives = (n as f64 * pos_frac) as usize;
            let ex = labeled(n, positives);
            let folds = make_folds(&ex, k, seed).unwrap();
            let mut seen = HashSet::new();
            for f in &folds {
                let val: HashSet<_> = f.val_ids.iter().collect();
                prop_assert!(f.train_ids.iter().all(|id| !val.contains(id)));
                prop_assert_eq!(f.train_ids.len() + f.val_ids.len(), n);
                for id in &f.val_ids {
                    prop_assert!(seen.insert(id.clone()));
                }
                let p = f.val_ids.iter().filter(|id| ex.iter().any(|e| &e.id == *id && e.label == Some(1))).count();
                let expected = f.val_ids.len() as f64 * positives as f64 / n as f64;
                prop_assert!((p as f64 - expected).abs() <= 1.0 + 1e-9, "fold {} has {} positives, expected {}", f.index, p, expected);
            }
            prop_assert_eq!(seen.len(), n);
            let max = folds.iter().map(|f| f.val_ids.len()).max().unwrap();
            let min = folds.iter().map(|f| f.val_ids.len()).min().unwrap();
            prop_assert!(max - min <= 1);
        }

        #[test]
        fn preprocess_is_idempotent(
            words in prop::collection::vec(prop_oneof![
                Just("@".to_string()), Just(".".to_string()), Just("!".to_string()),
                "[a-z]{1,6}", Just("late".to_string())
            ], 0..30),
            spaces in prop::collection::vec(prop_oneof![Just(" "), Just("  "), Just("\t"), Just(" \n ")], 30),
        ) {
            let mut context = String::new();
            for (w, s) in words.iter().zip(&spaces) {
                context.push_str(w);
                context.push_str(s);
            }
            context.push_str("he was late .");
            let e = from_raw(RawRecord { id: "x".into(), context, term: "late".into(), pet_id: "late".into(), label: Some(1) }).unwrap();
            let once = preprocess(&e).unwrap();
            let twice = preprocess(&once).unwrap();
            prop_assert_eq!(&once, &twice);
            prop_assert_eq!(once.span_text(), "late");
            // the selected sentence is itself a fixed point
            let mut again = once.clone();
            again.context = once.sentence.clone();
            prop_assert_eq!(preprocess(&again).unwrap().sentence, once.sentence);
        }
    }
}
