use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::negatives::{sample_negatives, ItemCatalog};
use super::sequence::UserSequences;
use super::split::{split_periods, SplitScheme};
use super::{is_user_feature, Interaction};
use crate::error::{Error, Result};
use crate::rng::derive_seed;

/// Append-only string-to-index map.
#[derive(Clone, Debug, Default)]
pub struct Vocab {
    ids: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn get_or_insert(&mut self, id: &str) -> u32 {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        let i = self.ids.len() as u32;
        self.ids.push(id.to_string());
        self.index.insert(id.to_string(), i);
        i
    }

    pub fn get(&self, id: &str) -> Option<u32> {
        self.index.get(id).copied()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NegativeMode {
    /// Input holds positives only; one negative is drawn per positive.
    Sampled,
    /// Input carries its own 0/1 labels.
    Explicit,
}

impl fmt::Display for NegativeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NegativeMode::Sampled => "sampled",
            NegativeMode::Explicit => "explicit",
        })
    }
}

impl FromStr for NegativeMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sampled" => Ok(NegativeMode::Sampled),
            "explicit" => Ok(NegativeMode::Explicit),
            _ => Err(Error::Config(format!(
                "negatives must be sampled or explicit, got {s:?}"
            ))),
        }
    }
}

/// Feature names and vocabulary sizes of an encoded stream. Side-feature
/// vocabularies reserve index 0 for a missing value.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub n_users: usize,
    pub n_items: usize,
    pub user_side: Vec<String>,
    pub user_side_vocab: Vec<usize>,
    pub item_side: Vec<String>,
    pub item_side_vocab: Vec<usize>,
}

/// One encoded, labeled example.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pub user: u32,
    pub item: u32,
    /// Item indices of the user's most recent positives before `timestamp`.
    pub history: Vec<u32>,
    pub user_side: Vec<u32>,
    pub item_side: Vec<u32>,
    pub label: u8,
    pub timestamp: i64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PeriodDataset {
    pub index: usize,
    pub start: i64,
    pub end: i64,
    pub samples: Vec<Sample>,
}

impl PeriodDataset {
    pub fn positives(&self) -> usize {
        self.samples.iter().filter(|s| s.label == 1).count()
    }
}

#[derive(Clone, Debug)]
pub struct EncodedStream {
    pub scheme: SplitScheme,
    pub negatives: NegativeMode,
    pub schema: FeatureSchema,
    /// Raw interaction count per period (before negative sampling).
    pub interaction_counts: Vec<usize>,
    pub periods: Vec<PeriodDataset>,
}

/// Splits, indexes and labels a raw stream.
///
/// Ids get indices in order of first appearance in time, so the
/// vocabulary seen by period `t` is a prefix of the final one.
pub fn encode_stream(
    interactions: &[Interaction],
    scheme: SplitScheme,
    negatives: NegativeMode,
    seed: u64,
) -> Result<EncodedStream> {
    let slices = split_periods(interactions, scheme)?;
    let sequences = UserSequences::build(interactions);

    let names: BTreeSet<&str> = interactions
        .iter()
        .flat_map(|x| x.side_features.keys().map(String::as_str))
        .collect();
    let user_side: Vec<String> = names
        .iter()
        .filter(|n| is_user_feature(n))
        .map(|n| n.to_string())
        .collect();
    let item_side: Vec<String> = names
        .iter()
        .filter(|n| !is_user_feature(n))
        .map(|n| n.to_string())
        .collect();

    let mut users = Vocab::default();
    let mut items = Vocab::default();
    let new_side = |n: usize| {
        (0..n)
            .map(|_| {
                let mut v = Vocab::default();
                v.get_or_insert("");
                v
            })
            .collect::<Vec<_>>()
    };
    let mut user_vocab = new_side(user_side.len());
    let mut item_vocab = new_side(item_side.len());

    let mut catalog = ItemCatalog::default();
    let mut observed: HashMap<String, HashSet<String>> = HashMap::new();
    let mut periods = Vec::with_capacity(slices.len());
    let mut interaction_counts = Vec::with_capacity(slices.len());

    for slice in &slices {
        for x in &slice.interactions {
            users.get_or_insert(&x.user_id);
            if items.get(&x.item_id).is_none() {
                items.get_or_insert(&x.item_id);
                let feats = x
                    .side_features
                    .iter()
                    .filter(|(k, _)| !is_user_feature(k))
                    .map(|(k, v)| (k.clone(), v.clone()))
                    .collect();
                catalog.push(x.item_id.clone(), feats);
            }
            if x.label == 1 {
                observed
                    .entry(x.user_id.clone())
                    .or_default()
                    .insert(x.item_id.clone());
            }
        }

        let labeled = match negatives {
            NegativeMode::Explicit => slice.interactions.clone(),
            NegativeMode::Sampled => {
                if let Some(bad) = slice.interactions.iter().find(|x| x.label != 1) {
                    return Err(Error::Data(format!(
                        "negatives=sampled expects positives only, found label {} for user {:?} at {}",
                        bad.label, bad.user_id, bad.timestamp
                    )));
                }
                sample_negatives(
                    &slice.interactions,
                    &catalog,
                    &observed,
                    derive_seed(seed, &[slice.index as u64]),
                )?
            }
        };

        let mut samples = Vec::with_capacity(labeled.len());
        for x in &labeled {
            let history = sequences
                .at(&x.user_id, x.timestamp)
                .into_iter()
                .map(|id| items.get(id).expect("history items precede the sample"))
                .collect();
            let encode_side = |names: &[String], vocabs: &mut [Vocab]| -> Vec<u32> {
                names
                    .iter()
                    .zip(vocabs.iter_mut())
                    .map(|(n, v)| match x.side_features.get(n) {
                        Some(val) => v.get_or_insert(val),
                        None => 0,
                    })
                    .collect()
            };
            samples.push(Sample {
                user: users.get(&x.user_id).expect("registered"),
                item: items.get(&x.item_id).expect("registered"),
                history,
                user_side: encode_side(&user_side, &mut user_vocab),
                item_side: encode_side(&item_side, &mut item_vocab),
                label: x.label,
                timestamp: x.timestamp,
            });
        }
        interaction_counts.push(slice.interactions.len());
        periods.push(PeriodDataset {
            index: slice.index,
            start: slice.start,
            end: slice.end,
            samples,
        });
    }

    Ok(EncodedStream {
        scheme,
        negatives,
        schema: FeatureSchema {
            n_users: users.len(),
            n_items: items.len(),
            user_side,
            user_side_vocab: user_vocab.iter().map(Vocab::len).collect(),
            item_side,
            item_side_vocab: item_vocab.iter().map(Vocab::len).collect(),
        },
        interaction_counts,
        periods,
    })
}
