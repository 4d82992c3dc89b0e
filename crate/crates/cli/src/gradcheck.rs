//! Central-difference checks of the base-model loss gradient and the meta
//! objective gradient on small random instances.

use std::time::Instant;

use anyhow::Result;
use asmg_core::data::Sample;
use asmg_core::grad::{finite_diff_check, Tensor};
use asmg_core::meta::{GroupMap, HiddenStateStore, LinearMetaParams, MetaGeneratorParams};
use asmg_core::model::{
    batch_loss, Batch, EmbeddingFeature, FeatureSource, ModelLayout, Pooling, SubsetPlan,
};
use asmg_core::rng::rng_for;
use asmg_core::trainer::{
    decay_weights, meta_gradient, meta_objective, LambdaMode, MetaContext, MetaModel,
};
use rand::Rng;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
const FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub instances: usize,
    /// Largest relative error over every coordinate of every instance.
    pub base_worst: f64,
    pub meta_worst: f64,
    pub seconds: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.base_worst < TOLERANCE && self.meta_worst < TOLERANCE
    }
}

fn layout(rng: &mut impl Rng, users: usize, items: usize) -> Result<ModelLayout> {
    let d = rng.gen_range(1..4);
    let hidden = vec![rng.gen_range(2..5), rng.gen_range(2..4)];
    let features = vec![
        EmbeddingFeature {
            name: "user_id".into(),
            source: FeatureSource::User,
            vocab: users,
        },
        EmbeddingFeature {
            name: "history".into(),
            source: FeatureSource::History,
            vocab: items + 1,
        },
        EmbeddingFeature {
            name: "item_id".into(),
            source: FeatureSource::Item,
            vocab: items,
        },
    ];
    let pooling = if rng.gen_bool(0.5) {
        Pooling::Mean
    } else {
        Pooling::Sum
    };
    Ok(ModelLayout::new(d, features, hidden, pooling)?)
}

fn samples(rng: &mut impl Rng, n: usize, users: usize, items: usize) -> Vec<Sample> {
    (0..n)
        .map(|i| Sample {
            user: rng.gen_range(0..users as u32),
            item: rng.gen_range(0..items as u32),
            history: (0..rng.gen_range(0..3))
                .map(|_| rng.gen_range(0..items as u32))
                .collect(),
            user_side: vec![],
            item_side: vec![],
            label: (i % 2) as u8,
            timestamp: i as i64,
        })
        .collect()
}

fn uniform(rng: &mut impl Rng, n: usize, r: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-r..r)).collect()
}

fn relative(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FLOOR)
}

/// Base-model log loss against every parameter of one random instance.
pub fn base_instance(seed: u64, case: u64) -> Result<f64> {
    let mut rng = rng_for(seed, &[0, case]);
    let (users, items) = (rng.gen_range(2..5), rng.gen_range(2..5));
    let layout = layout(&mut rng, users, items)?;
    let theta = uniform(&mut rng, layout.n_params(), 0.8);
    let data = samples(&mut rng, 4, users, items);
    let refs: Vec<&Sample> = data.iter().collect();
    let batch = Batch::from_samples(&layout, &refs)?;
    let plan = SubsetPlan::full(&layout, std::slice::from_ref(&batch));
    Ok(finite_diff_check(
        |tape, leaves| batch_loss(tape, &layout, &plan, leaves[0], 0),
        &[Tensor::column(theta)],
        STEP,
    )?)
}

/// Meta objective against every generator weight of one random instance.
/// Every fourth instance uses the linear combiner.
pub fn meta_instance(seed: u64, case: u64) -> Result<f64> {
    let mut rng = rng_for(seed, &[1, case]);
    let (users, items) = (3, 3);
    let layout = layout(&mut rng, users, items)?;
    let map = GroupMap::build(&layout);
    let ctx = MetaContext {
        layout: &layout,
        map: &map,
    };
    let k = 1 + (case as usize % 3);
    let hidden = 1 + (case as usize % 2);
    let (model, lambda, h) = if case % 4 == 3 {
        let mut lin = LinearMetaParams::last_one_hot(k);
        lin.alpha = uniform(&mut rng, k, 1.0);
        (
            MetaModel::Linear(lin),
            decay_weights(k, LambdaMode::LastOnly),
            None,
        )
    } else {
        let mut meta = MetaGeneratorParams::init(&map, hidden, k, case.is_multiple_of(2), seed)?;
        for w in meta.omega_mut() {
            *w = rng.gen_range(-0.6..0.6);
        }
        let h = case.is_multiple_of(3).then(|| {
            let mut s = HiddenStateStore::zeros(map.n_coords(), hidden, 0);
            for v in &mut s.h {
                *v = rng.gen_range(-0.5..0.5);
            }
            s
        });
        (
            MetaModel::Gru(meta),
            decay_weights(k, LambdaMode::LinearDecay),
            h,
        )
    };
    let window: Vec<Vec<f64>> = (0..k)
        .map(|_| uniform(&mut rng, layout.n_params(), 0.5))
        .collect();
    let refs: Vec<&[f64]> = window.iter().map(Vec::as_slice).collect();
    let data: Vec<Vec<Sample>> = (0..k).map(|_| samples(&mut rng, 6, users, items)).collect();
    let datasets: Vec<&[Sample]> = data.iter().map(Vec::as_slice).collect();

    let (_, grad) = meta_gradient(ctx, &model, &refs, h.as_ref(), &datasets, &lambda)?;
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for (i, &g) in grad.iter().enumerate() {
        let orig = model.params()[i];
        probe.params_mut()[i] = orig + STEP;
        let plus = meta_objective(ctx, &probe, &refs, h.as_ref(), &datasets, &lambda)?;
        probe.params_mut()[i] = orig - STEP;
        let minus = meta_objective(ctx, &probe, &refs, h.as_ref(), &datasets, &lambda)?;
        probe.params_mut()[i] = orig;
        worst = worst.max(relative(g, (plus - minus) / (2.0 * STEP)));
    }
    Ok(worst)
}

pub fn run_suite(instances: usize, seed: u64) -> Result<GradCheckReport> {
    let start = Instant::now();
    let mut base_worst: f64 = 0.0;
    let mut meta_worst: f64 = 0.0;
    for case in 0..instances as u64 {
        base_worst = base_worst.max(base_instance(seed, case)?);
        meta_worst = meta_worst.max(meta_instance(seed, case)?);
    }
    Ok(GradCheckReport {
        instances,
        base_worst,
        meta_worst,
        seconds: start.elapsed().as_secs_f64(),
    })
}
