use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{CorpusError, Label, ParallelGroup, Subject};
use crate::util::seeded_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn new(train: usize, val: usize, test: usize) -> Self {
        Self { train, val, test }
    }

    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }

    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }
}

/// Subject × grade × label cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Stratum {
    pub subject: Subject,
    pub grade: u8,
    pub label: Label,
}

impl fmt::Display for Stratum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/grade-{}/{}", self.subject, self.grade, self.label)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub assignments: BTreeMap<String, Split>,
    pub sizes: SplitSizes,
    pub seed: u64,
}

impl SplitAssignment {
    pub fn members(&self, split: Split) -> BTreeSet<&str> {
        self.assignments
            .iter()
            .filter(|(_, s)| **s == split)
            .map(|(g, _)| g.as_str())
            .collect()
    }

    /// Groups of `split`, in the order they appear in `groups`.
    pub fn select<'a>(&self, groups: &'a [ParallelGroup], split: Split) -> Vec<&'a ParallelGroup> {
        groups
            .iter()
            .filter(|g| self.assignments.get(&g.group_id) == Some(&split))
            .collect()
    }
}

type Pair = (Subject, u8);

/// Assign groups to train/val/test.
///
/// Test is filled first, then val, then train. Within each split, picks
/// alternate towards the under-represented label and, within a label, towards the
/// subject × grade pair with the fewest picks so far. The test split must come out
/// balanced across subject × grade pairs within ±1 and every split balanced across
/// labels within ±1; otherwise the stratum that ran dry is reported.
pub fn make_splits(
    groups: &[ParallelGroup],
    sizes: SplitSizes,
    seed: u64,
) -> Result<SplitAssignment, CorpusError> {
    if sizes.total() > groups.len() {
        return Err(CorpusError::InsufficientGroups {
            requested: sizes.total(),
            available: groups.len(),
        });
    }

    let mut cells: BTreeMap<Stratum, Vec<&str>> = BTreeMap::new();
    for g in groups {
        let key = Stratum {
            subject: g.subject,
            grade: g.grade,
            label: g.label,
        };
        cells.entry(key).or_default().push(g.group_id.as_str());
    }
    let mut rng = seeded_rng(seed, "make_splits");
    for members in cells.values_mut() {
        members.sort_unstable();
        members.shuffle(&mut rng);
    }
    let mut pairs: Vec<Pair> = cells
        .keys()
        .map(|s| (s.subject, s.grade))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    pairs.shuffle(&mut rng);
    let first_label = if rand::Rng::random_bool(&mut rng, 0.5) {
        Label::Acceptable
    } else {
        Label::Unacceptable
    };

    // cursor into each cell's shuffled member list
    let mut taken: BTreeMap<Stratum, usize> = cells.keys().map(|k| (*k, 0)).collect();
    let mut assignments = BTreeMap::new();

    for split in [Split::Test, Split::Val, Split::Train] {
        let want = sizes.get(split);
        let mut label_count: BTreeMap<Label, usize> = BTreeMap::new();
        let mut pair_count: BTreeMap<Pair, usize> = BTreeMap::new();
        let mut cell_count: BTreeMap<Stratum, usize> = BTreeMap::new();

        for _ in 0..want {
            let available = |s: &Stratum| taken[s] < cells[s].len();
            let label_has_capacity =
                |l: Label| cells.keys().any(|s| s.label == l && available(s));

            let mut label_order = [first_label, other(first_label)];
            label_order.sort_by_key(|l| label_count.get(l).copied().unwrap_or(0));
            let Some(label) = label_order.into_iter().find(|l| label_has_capacity(*l)) else {
                unreachable!("total size was checked against the pool");
            };

            let stratum = pairs
                .iter()
                .enumerate()
                .map(|(rank, &(subject, grade))| {
                    (
                        rank,
                        Stratum {
                            subject,
                            grade,
                            label,
                        },
                    )
                })
                .filter(|(_, s)| cells.contains_key(s) && available(s))
                .min_by_key(|(rank, s)| {
                    (
                        pair_count.get(&(s.subject, s.grade)).copied().unwrap_or(0),
                        cell_count.get(s).copied().unwrap_or(0),
                        *rank,
                    )
                })
                .map(|(_, s)| s)
                .expect("label was checked for capacity");

            let cursor = taken.get_mut(&stratum).unwrap();
            assignments.insert(cells[&stratum][*cursor].to_string(), split);
            *cursor += 1;
            *label_count.entry(label).or_default() += 1;
            *pair_count.entry((stratum.subject, stratum.grade)).or_default() += 1;
            *cell_count.entry(stratum).or_default() += 1;
        }

        check_label_balance(split, &label_count, &cells)?;
        if split == Split::Test && want > 0 {
            check_pair_balance(&pairs, &pair_count, &cells)?;
        }
    }

    Ok(SplitAssignment {
        assignments,
        sizes,
        seed,
    })
}

fn other(label: Label) -> Label {
    match label {
        Label::Acceptable => Label::Unacceptable,
        Label::Unacceptable => Label::Acceptable,
    }
}

fn check_label_balance(
    split: Split,
    label_count: &BTreeMap<Label, usize>,
    cells: &BTreeMap<Stratum, Vec<&str>>,
) -> Result<(), CorpusError> {
    let a = label_count.get(&Label::Acceptable).copied().unwrap_or(0);
    let u = label_count.get(&Label::Unacceptable).copied().unwrap_or(0);
    if a.abs_diff(u) <= 1 {
        return Ok(());
    }
    let short = if a < u { Label::Acceptable } else { Label::Unacceptable };
    let stratum = cells
        .keys()
        .filter(|s| s.label == short)
        .map(|s| s.to_string())
        .collect::<Vec<_>>()
        .join(", ");
    Err(CorpusError::DeficientStratum {
        split,
        stratum: format!("label {short} (cells: {})", if stratum.is_empty() { "none".into() } else { stratum }),
    })
}

fn check_pair_balance(
    pairs: &[Pair],
    pair_count: &BTreeMap<Pair, usize>,
    cells: &BTreeMap<Stratum, Vec<&str>>,
) -> Result<(), CorpusError> {
    let counts: Vec<(Pair, usize)> = pairs
        .iter()
        .map(|p| (*p, pair_count.get(p).copied().unwrap_or(0)))
        .collect();
    let max = counts.iter().map(|(_, c)| *c).max().unwrap_or(0);
    if let Some(((subject, grade), _)) = counts.iter().filter(|(_, c)| c + 1 < max).min_by_key(|(p, c)| (*c, *p)) {
        let available: usize = cells
            .iter()
            .filter(|(s, _)| s.subject == *subject && s.grade == *grade)
            .map(|(_, m)| m.len())
            .sum();
        return Err(CorpusError::DeficientStratum {
            split: Split::Test,
            stratum: format!("{subject}/grade-{grade} ({available} groups available)"),
        });
    }
    Ok(())
}
