use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::FeatureSchema;
use crate::error::{Error, Result};

/// Where a feature's indices come from in a [`crate::data::Sample`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureSource {
    User,
    UserSide(usize),
    /// Recent positive items; table row 0 is the padding row used for an
    /// empty history, item `i` lives in row `i + 1`.
    History,
    Item,
    ItemSide(usize),
}

impl FeatureSource {
    pub fn is_user(self) -> bool {
        matches!(
            self,
            FeatureSource::User | FeatureSource::UserSide(_) | FeatureSource::History
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pooling {
    Mean,
    Sum,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingFeature {
    pub name: String,
    pub source: FeatureSource,
    pub vocab: usize,
}

/// Position of one dense layer inside the flat parameter vector. Weights
/// are stored `[input, output]` row-major, followed by the bias.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub input: usize,
    pub output: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

/// Shape of the Embedding&MLP model and the order of its flat parameters:
/// embedding tables in feature order, then each dense layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelLayout {
    pub embed_dim: usize,
    pub features: Vec<EmbeddingFeature>,
    pub hidden: Vec<usize>,
    pub pooling: Pooling,
}

impl ModelLayout {
    pub fn new(
        embed_dim: usize,
        features: Vec<EmbeddingFeature>,
        hidden: Vec<usize>,
        pooling: Pooling,
    ) -> Result<Self> {
        if embed_dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        if features.is_empty() {
            return Err(Error::Config(
                "layout needs at least one embedding feature".into(),
            ));
        }
        if let Some(f) = features.iter().find(|f| f.vocab == 0) {
            return Err(Error::Config(format!(
                "feature {} has an empty vocabulary",
                f.name
            )));
        }
        if hidden.contains(&0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        // user-side features come first in the concatenated input
        let mut seen_item = false;
        for f in &features {
            if f.source.is_user() && seen_item {
                return Err(Error::Config(
                    "user features must precede item features".into(),
                ));
            }
            seen_item |= !f.source.is_user();
        }
        Ok(ModelLayout {
            embed_dim,
            features,
            hidden,
            pooling,
        })
    }

    /// Standard layout for an encoded stream: user id, user side features,
    /// history, item id, item side features.
    pub fn from_schema(
        schema: &FeatureSchema,
        embed_dim: usize,
        hidden: Vec<usize>,
        pooling: Pooling,
    ) -> Result<Self> {
        let mut features = vec![EmbeddingFeature {
            name: "user_id".into(),
            source: FeatureSource::User,
            vocab: schema.n_users,
        }];
        for (i, (name, &vocab)) in schema
            .user_side
            .iter()
            .zip(&schema.user_side_vocab)
            .enumerate()
        {
            features.push(EmbeddingFeature {
                name: name.clone(),
                source: FeatureSource::UserSide(i),
                vocab,
            });
        }
        features.push(EmbeddingFeature {
            name: "history".into(),
            source: FeatureSource::History,
            vocab: schema.n_items + 1,
        });
        features.push(EmbeddingFeature {
            name: "item_id".into(),
            source: FeatureSource::Item,
            vocab: schema.n_items,
        });
        for (i, (name, &vocab)) in schema
            .item_side
            .iter()
            .zip(&schema.item_side_vocab)
            .enumerate()
        {
            features.push(EmbeddingFeature {
                name: name.clone(),
                source: FeatureSource::ItemSide(i),
                vocab,
            });
        }
        ModelLayout::new(embed_dim, features, hidden, pooling)
    }

    pub fn user_feature_count(&self) -> usize {
        self.features.iter().filter(|f| f.source.is_user()).count()
    }

    pub fn item_feature_count(&self) -> usize {
        self.features.len() - self.user_feature_count()
    }

    pub fn input_dim(&self) -> usize {
        self.features.len() * self.embed_dim
    }

    /// Offset of feature `f`'s embedding table in the flat vector.
    pub fn table_offset(&self, f: usize) -> usize {
        self.features[..f]
            .iter()
            .map(|x| x.vocab * self.embed_dim)
            .sum()
    }

    pub fn embedding_params(&self) -> usize {
        self.features.iter().map(|x| x.vocab * self.embed_dim).sum()
    }

    pub fn layers(&self) -> Vec<LayerSpec> {
        let mut out = Vec::with_capacity(self.hidden.len() + 1);
        let mut offset = self.embedding_params();
        let mut input = self.input_dim();
        for &width in self.hidden.iter().chain(std::iter::once(&1)) {
            out.push(LayerSpec {
                input,
                output: width,
                weight_offset: offset,
                bias_offset: offset + input * width,
            });
            offset += input * width + width;
            input = width;
        }
        out
    }

    pub fn mlp_params(&self) -> usize {
        self.layers()
            .iter()
            .map(|l| l.input * l.output + l.output)
            .sum()
    }

    pub fn n_params(&self) -> usize {
        self.embedding_params() + self.mlp_params()
    }

    /// True for coordinates holding a dense-layer bias.
    pub fn bias_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.n_params()];
        for l in self.layers() {
            mask[l.bias_offset..l.bias_offset + l.output]
                .iter_mut()
                .for_each(|m| *m = true);
        }
        mask
    }

    /// Stable 64-bit fingerprint used in checkpoint headers.
    pub fn fingerprint(&self) -> u64 {
        let desc = serde_json::to_string(self).expect("layout serializes");
        let digest = Sha256::digest(desc.as_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }
}
