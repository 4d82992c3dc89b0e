use sha2::{Digest, Sha256};

use crate::model::ModelLayout;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GroupKind {
    /// One embedding dimension of one feature, shared by every row.
    Embedding { feature: usize, dim: usize },
    /// A single dense-layer coordinate.
    Dense { coord: usize },
}

/// Assignment of every base-model coordinate to a meta generator.
///
/// Embedding groups come first (feature-major, then dimension), followed by
/// one group per dense-layer coordinate in layout order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupMap {
    kinds: Vec<GroupKind>,
    coord_group: Vec<u32>,
}

impl GroupMap {
    pub fn build(layout: &ModelLayout) -> GroupMap {
        let d = layout.embed_dim;
        let n = layout.n_params();
        let mut kinds = Vec::new();
        let mut coord_group = vec![0u32; n];
        for (f, feat) in layout.features.iter().enumerate() {
            let base = kinds.len();
            kinds.extend((0..d).map(|dim| GroupKind::Embedding { feature: f, dim }));
            let off = layout.table_offset(f);
            for r in 0..feat.vocab {
                for c in 0..d {
                    coord_group[off + r * d + c] = (base + c) as u32;
                }
            }
        }
        for coord in layout.embedding_params()..n {
            coord_group[coord] = kinds.len() as u32;
            kinds.push(GroupKind::Dense { coord });
        }
        GroupMap { kinds, coord_group }
    }

    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    pub fn n_coords(&self) -> usize {
        self.coord_group.len()
    }

    pub fn kind(&self, group: usize) -> GroupKind {
        self.kinds[group]
    }

    pub fn group_of(&self, coord: usize) -> usize {
        self.coord_group[coord] as usize
    }

    pub fn coord_groups(&self) -> &[u32] {
        &self.coord_group
    }

    /// Coordinates owned by `group`, ascending.
    pub fn coords_of(&self, group: usize) -> Vec<usize> {
        match self.kinds[group] {
            GroupKind::Dense { coord } => vec![coord],
            GroupKind::Embedding { .. } => self
                .coord_group
                .iter()
                .enumerate()
                .filter(|(_, &g)| g as usize == group)
                .map(|(c, _)| c)
                .collect(),
        }
    }

    pub fn fingerprint(&self) -> u64 {
        let mut h = Sha256::new();
        h.update((self.kinds.len() as u64).to_le_bytes());
        for g in &self.coord_group {
            h.update(g.to_le_bytes());
        }
        let d = h.finalize();
        u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
    }
}
