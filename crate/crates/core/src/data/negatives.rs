use std::collections::{BTreeMap, HashMap, HashSet};

use rand::Rng;

use super::Interaction;
use crate::error::{Error, Result};
use crate::rng::{purpose, rng_for};

/// Items available for negative sampling with their item-side features.
#[derive(Clone, Debug, Default)]
pub struct ItemCatalog {
    pub items: Vec<String>,
    pub features: Vec<BTreeMap<String, String>>,
}

impl ItemCatalog {
    pub fn push(&mut self, item: String, features: BTreeMap<String, String>) {
        self.items.push(item);
        self.features.push(features);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

const MAX_REJECTIONS: usize = 64;

/// Pairs every positive with one uniformly drawn item the user has no
/// observed positive on. Output alternates positive, negative.
///
/// The negative copies the positive's user, timestamp and user-side
/// features, and takes item-side features from the catalog.
pub fn sample_negatives(
    positives: &[Interaction],
    catalog: &ItemCatalog,
    observed: &HashMap<String, HashSet<String>>,
    seed: u64,
) -> Result<Vec<Interaction>> {
    let mut rng = rng_for(seed, &[purpose::NEGATIVES]);
    let empty = HashSet::new();
    let mut out = Vec::with_capacity(positives.len() * 2);
    for pos in positives {
        let seen = observed.get(&pos.user_id).unwrap_or(&empty);
        let excluded = |item: &str| item == pos.item_id || seen.contains(item);

        let mut pick = None;
        for _ in 0..MAX_REJECTIONS {
            let idx = rng.gen_range(0..catalog.len().max(1));
            if idx < catalog.len() && !excluded(&catalog.items[idx]) {
                pick = Some(idx);
                break;
            }
        }
        let idx = match pick {
            Some(i) => i,
            None => {
                let free: Vec<usize> = (0..catalog.len())
                    .filter(|&i| !excluded(&catalog.items[i]))
                    .collect();
                if free.is_empty() {
                    return Err(Error::Data(format!(
                        "user {:?} has interacted with the entire catalog; no negative can be sampled",
                        pos.user_id
                    )));
                }
                free[rng.gen_range(0..free.len())]
            }
        };

        let mut neg = Interaction::new(
            pos.user_id.clone(),
            catalog.items[idx].clone(),
            0,
            pos.timestamp,
        );
        for (k, v) in &pos.side_features {
            if super::is_user_feature(k) {
                neg.side_features.insert(k.clone(), v.clone());
            }
        }
        for (k, v) in &catalog.features[idx] {
            neg.side_features.insert(k.clone(), v.clone());
        }
        out.push(pos.clone());
        out.push(neg);
    }
    Ok(out)
}
