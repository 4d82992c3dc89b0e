use std::collections::HashMap;

use super::Interaction;

pub const MAX_SEQUENCE_LEN: usize = 30;

/// Per-user timelines of positive feedback, queryable at any timestamp.
#[derive(Clone, Debug, Default)]
pub struct UserSequences {
    timelines: HashMap<String, Vec<(i64, String)>>,
}

impl UserSequences {
    /// Collects positives per user in time order; equal timestamps keep
    /// input order.
    pub fn build(interactions: &[Interaction]) -> Self {
        let mut order: Vec<&Interaction> = interactions.iter().filter(|x| x.label == 1).collect();
        order.sort_by_key(|x| x.timestamp);
        let mut timelines: HashMap<String, Vec<(i64, String)>> = HashMap::new();
        for x in order {
            timelines
                .entry(x.user_id.clone())
                .or_default()
                .push((x.timestamp, x.item_id.clone()));
        }
        UserSequences { timelines }
    }

    /// The most recent (at most 30) positives strictly before `timestamp`,
    /// oldest first.
    pub fn at(&self, user_id: &str, timestamp: i64) -> Vec<&str> {
        let Some(line) = self.timelines.get(user_id) else {
            return Vec::new();
        };
        let end = line.partition_point(|(t, _)| *t < timestamp);
        let start = end.saturating_sub(MAX_SEQUENCE_LEN);
        line[start..end]
            .iter()
            .map(|(_, item)| item.as_str())
            .collect()
    }
}
