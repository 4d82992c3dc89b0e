//! The Embedding&MLP click-through-rate model and its incremental update.

mod batch;
mod checkpoint;
mod forward;
mod layout;
mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use batch::{Batch, FeatureRows, SubsetPlan};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use forward::{
    batch_loss, log_loss, log_loss_node, logits, param_nodes, predict, ParamNodes, CLIP,
};
pub use layout::{EmbeddingFeature, FeatureSource, LayerSpec, ModelLayout, Pooling};
pub use train::{incremental_update, loss_and_grad, pretrain, Adam, TrainConfig};

pub(crate) use checkpoint::{read_u32, read_u64};

use crate::rng::{purpose, rng_for};

pub const INIT_RANGE: f64 = 0.01;

/// Flat parameter vector tagged with the period it was trained through.
#[derive(Clone, Debug, PartialEq)]
pub struct BaseModelParams {
    pub theta: Vec<f64>,
    pub period: i64,
}

impl BaseModelParams {
    /// Order-sensitive digest of the exact bit patterns.
    pub fn checksum(&self) -> u64 {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for v in &self.theta {
            h.update(v.to_bits().to_le_bytes());
        }
        let d = h.finalize();
        u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
    }
}

/// How dense-layer weights are drawn. Embeddings always use
/// `uniform(-0.01, 0.01)` and biases always start at zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum MlpInit {
    /// `uniform(-0.01, 0.01)`, same as the embeddings.
    #[default]
    Uniform,
    /// `uniform(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
    Glorot,
}

/// Embeddings and dense weights uniform in `(-0.01, 0.01)`, biases zero.
pub fn init_params(layout: &ModelLayout, seed: u64) -> BaseModelParams {
    init_params_with(layout, seed, MlpInit::Uniform)
}

pub fn init_params_with(layout: &ModelLayout, seed: u64, mlp: MlpInit) -> BaseModelParams {
    let mut rng = rng_for(seed, &[purpose::BASE_INIT]);
    let mut theta: Vec<f64> = (0..layout.embedding_params())
        .map(|_| rng.gen_range(-INIT_RANGE..INIT_RANGE))
        .collect();
    for l in layout.layers() {
        let range = match mlp {
            MlpInit::Uniform => INIT_RANGE,
            MlpInit::Glorot => (6.0 / (l.input + l.output) as f64).sqrt(),
        };
        theta.extend((0..l.input * l.output).map(|_| rng.gen_range(-range..range)));
        theta.extend(std::iter::repeat_n(0.0, l.output));
    }
    BaseModelParams { theta, period: 0 }
}
