//! Token-level English/Spanish tagging against frequency lexicons.
//!
//! Each whitespace token is stripped of surrounding punctuation and looked up
//! case-insensitively. A token found in exactly one lexicon takes that language.
//! Tokens in both or neither lexicon are `Other`, unless they carry Spanish-only
//! orthography (á é í ó ú ñ ü ¿ ¡), which marks them Spanish.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{nfc, Language};

const BUILTIN_EN: &str = include_str!("../data/lex.en.txt");
const BUILTIN_ES: &str = include_str!("../data/lex.es.txt");

/// Default minority-language share at which text counts as code-switched.
pub const DEFAULT_CS_THRESHOLD: f64 = 0.1;

const SPANISH_MARKS: &[char] = &['á', 'é', 'í', 'ó', 'ú', 'ñ', 'ü', '¿', '¡'];

#[derive(Debug, thiserror::Error)]
pub enum CodemixError {
    #[error("untaggable text: no English or Spanish tokens in {0:?}")]
    Untaggable(String),
    #[error("lexicon {path}: {reason}")]
    Lexicon { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tag {
    En,
    Es,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenTag {
    pub token: String,
    pub tag: Tag,
}

#[derive(Debug, Clone)]
pub struct Lexicons {
    en_words: HashSet<String>,
    es_words: HashSet<String>,
}

fn parse_wordlist(text: &str) -> HashSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|w| !w.is_empty() && !w.starts_with('#'))
        .map(|w| nfc(w).to_lowercase())
        .collect()
}

impl Lexicons {
    /// The wordlists shipped with the crate.
    pub fn builtin() -> Self {
        Self::from_wordlists(BUILTIN_EN, BUILTIN_ES).expect("shipped lexicons are non-empty")
    }

    pub fn from_wordlists(en: &str, es: &str) -> Result<Self, CodemixError> {
        let en_words = parse_wordlist(en);
        let es_words = parse_wordlist(es);
        for (name, set) in [("en", &en_words), ("es", &es_words)] {
            if set.is_empty() {
                return Err(CodemixError::Lexicon {
                    path: name.into(),
                    reason: "empty wordlist".into(),
                });
            }
        }
        Ok(Self { en_words, es_words })
    }

    /// Load `lex.en.txt` and `lex.es.txt` from `dir`.
    pub fn from_dir(dir: &Path) -> Result<Self, CodemixError> {
        let read = |name: &str| {
            let p = dir.join(name);
            std::fs::read_to_string(&p).map_err(|e| CodemixError::Lexicon {
                path: p.display().to_string(),
                reason: e.to_string(),
            })
        };
        Self::from_wordlists(&read("lex.en.txt")?, &read("lex.es.txt")?)
    }

    fn tag_word(&self, raw: &str, word: &str) -> Tag {
        let en = self.en_words.contains(word);
        let es = self.es_words.contains(word);
        match (en, es) {
            (true, false) => Tag::En,
            (false, true) => Tag::Es,
            _ if raw.to_lowercase().contains(SPANISH_MARKS) => Tag::Es,
            _ => Tag::Other,
        }
    }
}

/// Tag every token of `text`. Empty or punctuation-only text yields no tags.
pub fn tag_tokens(text: &str, lexicons: &Lexicons) -> Vec<TokenTag> {
    nfc(text)
        .split_whitespace()
        .filter_map(|raw| {
            let word = raw
                .trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase();
            (!word.is_empty()).then(|| TokenTag {
                tag: lexicons.tag_word(raw, &word),
                token: word,
            })
        })
        .collect()
}

/// `(#es, #en)` tag counts.
pub fn language_counts(text: &str, lexicons: &Lexicons) -> (usize, usize) {
    tag_tokens(text, lexicons)
        .iter()
        .fold((0, 0), |(es, en), t| match t.tag {
            Tag::Es => (es + 1, en),
            Tag::En => (es, en + 1),
            Tag::Other => (es, en),
        })
}

/// Share of Spanish among Spanish + English tags; `None` when there are neither.
pub fn mix_ratio(text: &str, lexicons: &Lexicons) -> Option<f64> {
    let (es, en) = language_counts(text, lexicons);
    (es + en > 0).then(|| es as f64 / (es + en) as f64)
}

/// `Cs` when the minority language reaches `threshold`, else the majority language.
pub fn classify_language(
    text: &str,
    lexicons: &Lexicons,
    threshold: f64,
) -> Result<Language, CodemixError> {
    let ratio = mix_ratio(text, lexicons).ok_or_else(|| CodemixError::Untaggable(text.to_string()))?;
    Ok(classify_ratio(ratio, threshold))
}

pub fn classify_ratio(ratio: f64, threshold: f64) -> Language {
    if ratio.min(1.0 - ratio) >= threshold {
        Language::Cs
    } else if ratio > 0.5 {
        Language::Es
    } else {
        Language::En
    }
}
