//! Model input text for the vanilla and description-augmented variants.

use serde::{Deserialize, Serialize};

use crate::corpus::{Example, LookupMode, PetEntry};
use crate::error::{Error, Result};

pub const TERM_MARKER: &str = "Term:";
pub const DESCRIPTION_MARKER: &str = "Description:";
pub const SENTENCE_MARKER: &str = "Sentence:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptVariant {
    Vanilla,
    Described,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub text: String,
    pub variant: PromptVariant,
    pub term: String,
    /// Empty for vanilla prompts.
    pub description: String,
    pub sentence: String,
}

/// Template settings. The separator goes between every marker and its value
/// and between segments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub separator: String,
    pub mode: TemplateMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateMode {
    #[default]
    Strict,
    Lenient,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate {
            separator: " ".to_string(),
            mode: TemplateMode::Strict,
        }
    }
}

impl From<TemplateMode> for LookupMode {
    fn from(m: TemplateMode) -> Self {
        match m {
            TemplateMode::Strict => LookupMode::Strict,
            TemplateMode::Lenient => LookupMode::Lenient,
        }
    }
}

impl PromptTemplate {
    fn render(&self, term: &str, description: &str, sentence: &str) -> String {
        let sep = &self.separator;
        [TERM_MARKER, term, DESCRIPTION_MARKER, description, SENTENCE_MARKER, sentence].join(sep)
    }

    pub fn build(&self, variant: PromptVariant, entry: &PetEntry, example: &Example) -> Result<Prompt> {
        let sentence = example.sentence.clone();
        match variant {
            PromptVariant::Vanilla => Ok(Prompt {
                text: sentence.clone(),
                variant,
                term: entry.term.clone(),
                description: String::new(),
                sentence,
            }),
            PromptVariant::Described => {
                if self.mode == TemplateMode::Strict && entry.description.trim().is_empty() {
                    return Err(Error::EmptyDescription(entry.pet_id.clone()));
                }
                Ok(Prompt {
                    text: self.render(&entry.term, &entry.description, &sentence),
                    variant,
                    term: entry.term.clone(),
                    description: entry.description.clone(),
                    sentence,
                })
            }
        }
    }

    /// Shortens the sentence segment from the right, whitespace token by
    /// token, until `count_tokens(text) <= max_tokens`. Term and description
    /// are never touched.
    pub fn fit_to_budget<F>(&self, prompt: &Prompt, max_tokens: usize, count_tokens: F) -> Result<Prompt>
    where
        F: Fn(&str) -> usize,
    {
        if count_tokens(&prompt.text) <= max_tokens {
            return Ok(prompt.clone());
        }
        let words: Vec<&str> = prompt.sentence.split_whitespace().collect();
        for keep in (0..words.len()).rev() {
            let sentence = words[..keep].join(" ");
            let text = match prompt.variant {
                PromptVariant::Vanilla => sentence.clone(),
                PromptVariant::Described => self.render(&prompt.term, &prompt.description, &sentence),
            };
            if count_tokens(&text) <= max_tokens {
                return Ok(Prompt {
                    text,
                    sentence,
                    ..prompt.clone()
                });
            }
        }
        Err(Error::InvalidArgument(format!(
            "prompt for term `{}` does not fit in {max_tokens} tokens even with an empty sentence",
            prompt.term
        )))
    }
}

/// Builds a prompt with the default single-space strict template.
pub fn build_prompt(variant: PromptVariant, entry: &PetEntry, example: &Example) -> Result<Prompt> {
    PromptTemplate::default().build(variant, entry, example)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{from_raw, RawRecord};
    use proptest::prelude::*;

    fn entry(term: &str, description: &str) -> PetEntry {
        PetEntry {
            pet_id: "p".into(),
            term: term.into(),
            description: description.into(),
            variants: vec![],
        }
    }

    fn example(sentence: &str, term: &str) -> Example {
        from_raw(RawRecord {
            id: "e".into(),
            context: sentence.into(),
            term: term.into(),
            pet_id: "p".into(),
            label: None,
        })
        .unwrap()
    }

    #[test]
    fn described_template() {
        let p = build_prompt(
            PromptVariant::Described,
            &entry("late", "old person, elderly"),
            &example("He was late .", "late"),
        )
        .unwrap();
        assert_eq!(p.text, "Term: late Description: old person, elderly Sentence: He was late .");
        let again = build_prompt(
            PromptVariant::Described,
            &entry("late", "old person, elderly"),
            &example("He was late .", "late"),
        )
        .unwrap();
        assert_eq!(p.text.as_bytes(), again.text.as_bytes());
    }

    #[test]
    fn vanilla_is_sentence() {
        let p = build_prompt(PromptVariant::Vanilla, &entry("late", ""), &example("He was late .", "late")).unwrap();
        assert_eq!(p.text, "He was late .");
        assert_eq!(p.description, "");
    }

    #[test]
    fn strict_rejects_empty_description() {
        let err = build_prompt(PromptVariant::Described, &entry("late", " "), &example("He was late .", "late"));
        assert!(matches!(err, Err(Error::EmptyDescription(_))));
        let lenient = PromptTemplate {
            mode: TemplateMode::Lenient,
            ..Default::default()
        };
        assert!(lenient
            .build(PromptVariant::Described, &entry("late", ""), &example("He was late .", "late"))
            .is_ok());
    }

    #[test]
    fn truncation_only_shortens_sentence() {
        let t = PromptTemplate::default();
        let p = t
            .build(
                PromptVariant::Described,
                &entry("late", "old person, elderly"),
                &example("He was late for the meeting again today .", "late"),
            )
            .unwrap();
        let words = |s: &str| s.split_whitespace().count();
        let fitted = t.fit_to_budget(&p, 10, words).unwrap();
        assert_eq!(fitted.text, "Term: late Description: old person, elderly Sentence: He was late");
        assert!(t.fit_to_budget(&p, 5, words).is_err());
        assert_eq!(t.fit_to_budget(&p, 100, words).unwrap(), p);
    }

    fn plain() -> impl Strategy<Value = String> {
        "[a-zA-Z ,.'-]{1,20}".prop_filter("no markers", |s| {
            !s.contains(TERM_MARKER) && !s.contains(DESCRIPTION_MARKER) && !s.contains(SENTENCE_MARKER)
        })
    }

    proptest! {
        #[test]
        fn markers_appear_once_in_order(t in plain(), d in plain(), s in plain()) {
            let t = t.trim().to_string();
            prop_assume!(!t.is_empty() && !d.trim().is_empty());
            let mut ex = example(&format!("{s} {t}"), &t);
            ex.sentence = s.clone();
            let p = build_prompt(PromptVariant::Described, &entry(&t, &d), &ex).unwrap();
            let positions: Vec<usize> = [TERM_MARKER, DESCRIPTION_MARKER, SENTENCE_MARKER]
                .iter()
                .map(|m| {
                    assert_eq!(p.text.matches(m).count(), 1);
                    p.text.find(m).unwrap()
                })
                .collect();
            prop_assert!(positions[0] < positions[1] && positions[1] < positions[2]);
            prop_assert!(p.text.contains(&t) && p.text.contains(&d) && p.text.contains(&s));
        }

        #[test]
        fn injective_over_triples(a in (plain(), plain(), plain()), b in (plain(), plain(), plain())) {
            let t = PromptTemplate::default();
            prop_assert_eq!(t.render(&a.0, &a.1, &a.2) == t.render(&b.0, &b.1, &b.2), a == b);
        }
    }
}
