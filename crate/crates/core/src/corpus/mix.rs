use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{CorpusError, DatasetView, Item, Language};
use crate::util::seeded_rng;

/// Recipe for a mixed-language training set: how many items to draw per language.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixSpec {
    pub parts: Vec<(Language, usize)>,
    pub seed: u64,
}

impl MixSpec {
    pub fn new(parts: Vec<(Language, usize)>, seed: u64) -> Self {
        Self { parts, seed }
    }

    pub fn total(&self) -> usize {
        self.parts.iter().map(|(_, n)| n).sum()
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.parts.is_empty() {
            return Err(CorpusError::InvalidMix("no parts".into()));
        }
        let mut seen = BTreeSet::new();
        for (lang, count) in &self.parts {
            if *count == 0 {
                return Err(CorpusError::InvalidMix(format!("count for `{lang}` must be > 0")));
            }
            if !seen.insert(*lang) {
                return Err(CorpusError::InvalidMix(format!("language `{lang}` listed twice")));
            }
        }
        Ok(())
    }

    /// Parse `en:100,cs:50`.
    pub fn parse(text: &str, seed: u64) -> Result<Self, CorpusError> {
        let mut parts = Vec::new();
        for chunk in text.split(',').map(str::trim).filter(|c| !c.is_empty()) {
            let (lang, count) = chunk
                .split_once(':')
                .ok_or_else(|| CorpusError::InvalidMix(format!("`{chunk}` is not lang:count")))?;
            let lang: Language = lang.parse().map_err(CorpusError::InvalidMix)?;
            let count: usize = count
                .trim()
                .parse()
                .map_err(|_| CorpusError::InvalidMix(format!("bad count in `{chunk}`")))?;
            parts.push((lang, count));
        }
        let spec = Self { parts, seed };
        spec.validate()?;
        Ok(spec)
    }
}

/// Sample and merge per-language training views.
///
/// Languages are drawn in spec order. Unless `allow_overlap` is set, a group
/// already drawn in one language is never drawn again in another, so no concept
/// appears twice in the mixed set.
pub fn compose_mix(
    train_views: &BTreeMap<Language, DatasetView>,
    spec: &MixSpec,
    allow_overlap: bool,
) -> Result<DatasetView, CorpusError> {
    spec.validate()?;
    let mut used: BTreeSet<String> = BTreeSet::new();
    let mut out: Vec<Item> = Vec::with_capacity(spec.total());

    for (lang, count) in &spec.parts {
        let view = train_views.get(lang).ok_or(CorpusError::MixShortfall {
            language: *lang,
            requested: *count,
            available: 0,
        })?;
        if view.len() < *count {
            return Err(CorpusError::MixShortfall {
                language: *lang,
                requested: *count,
                available: view.len(),
            });
        }
        let mut pool: Vec<&Item> = view.items.iter().filter(|i| i.language == *lang).collect();
        pool.sort_by(|a, b| a.item_id.cmp(&b.item_id));
        pool.shuffle(&mut seeded_rng(spec.seed, &format!("compose_mix:{lang}")));

        let eligible: Vec<&Item> = pool
            .into_iter()
            .filter(|i| allow_overlap || !used.contains(&i.group_id))
            .take(*count)
            .collect();
        if eligible.len() < *count {
            return Err(CorpusError::MixShortfall {
                language: *lang,
                requested: *count,
                available: eligible.len(),
            });
        }
        for item in eligible {
            used.insert(item.group_id.clone());
            out.push(item.clone());
        }
    }
    DatasetView::new(out)
}
