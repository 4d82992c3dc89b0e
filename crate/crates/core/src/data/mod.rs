//! Interaction logs to period shards: parsing, period splitting, user
//! sequence features, negative sampling and the on-disk shard format.

mod encode;
mod ingest;
mod negatives;
mod sequence;
mod shard;
mod split;

use std::collections::BTreeMap;

pub use encode::{
    encode_stream, EncodedStream, FeatureSchema, NegativeMode, PeriodDataset, Sample, Vocab,
};
pub use ingest::{parse_interactions, read_interactions};
pub use negatives::{sample_negatives, ItemCatalog};
pub use sequence::{UserSequences, MAX_SEQUENCE_LEN};
pub use shard::{read_manifest, read_shard, write_shards, Manifest, PeriodEntry};
pub use split::{split_periods, PeriodSlice, SplitScheme};

/// One logged user-item event.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Interaction {
    pub user_id: String,
    pub item_id: String,
    pub label: u8,
    pub timestamp: i64,
    /// Categorical side features, `name -> value`. Names starting with `u_`
    /// describe the user; every other name describes the item.
    pub side_features: BTreeMap<String, String>,
}

impl Interaction {
    pub fn new(
        user_id: impl Into<String>,
        item_id: impl Into<String>,
        label: u8,
        timestamp: i64,
    ) -> Self {
        Interaction {
            user_id: user_id.into(),
            item_id: item_id.into(),
            label,
            timestamp,
            side_features: BTreeMap::new(),
        }
    }

    pub fn with_feature(mut self, name: &str, value: &str) -> Self {
        self.side_features
            .insert(name.to_string(), value.to_string());
        self
    }
}

/// True when a side-feature name belongs to the user side.
pub fn is_user_feature(name: &str) -> bool {
    name.starts_with("u_")
}
