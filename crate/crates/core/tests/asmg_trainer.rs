use asmg_core::data::{PeriodDataset, Sample};
use asmg_core::meta::*;
use asmg_core::metrics::{auc, log_loss};
use asmg_core::model::*;
use asmg_core::trainer::*;
use asmg_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const USERS: usize = 8;
const ITEMS: usize = 6;

fn tiny_layout(d: usize, hidden: Vec<usize>) -> ModelLayout {
    ModelLayout::new(
        d,
        vec![
            EmbeddingFeature {
                name: "user".into(),
                source: FeatureSource::User,
                vocab: USERS,
            },
            EmbeddingFeature {
                name: "history".into(),
                source: FeatureSource::History,
                vocab: ITEMS + 1,
            },
            EmbeddingFeature {
                name: "item".into(),
                source: FeatureSource::Item,
                vocab: ITEMS,
            },
        ],
        hidden,
        Pooling::Mean,
    )
    .unwrap()
}

fn random_samples(rng: &mut ChaCha8Rng, n: usize, period: usize) -> Vec<Sample> {
    (0..n)
        .map(|i| {
            let user = rng.gen_range(0..USERS as u32);
            let item = rng.gen_range(0..ITEMS as u32);
            let len = rng.gen_range(0..3);
            let history = (0..len).map(|_| rng.gen_range(0..ITEMS as u32)).collect();
            // drifting preference with noise, both classes forced early on
            let liked = (user as usize + item as usize + period / 3).is_multiple_of(2);
            let noisy = rng.gen_bool(0.15);
            let label = match i {
                0 => 1,
                1 => 0,
                _ => u8::from(liked ^ noisy),
            };
            Sample {
                user,
                item,
                history,
                user_side: vec![],
                item_side: vec![],
                label,
                timestamp: i as i64,
            }
        })
        .collect()
}

fn tiny_periods(n: usize, per: usize, seed: u64) -> Vec<PeriodDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| PeriodDataset {
            index: i,
            start: i as i64,
            end: i as i64 + 1,
            samples: random_samples(&mut rng, per, i),
        })
        .collect()
}

struct Fixture {
    layout: ModelLayout,
    map: GroupMap,
    periods: Vec<PeriodDataset>,
    base: TrainConfig,
    theta0: BaseModelParams,
}

fn fixture() -> Fixture {
    let layout = tiny_layout(2, vec![3]);
    let map = GroupMap::build(&layout);
    let periods = tiny_periods(10, 24, 5);
    let base = TrainConfig {
        epochs: 1,
        batch_size: 8,
        learning_rate: 1e-2,
    };
    let theta0 = init_params(&layout, 3);
    Fixture {
        layout,
        map,
        periods,
        base,
        theta0,
    }
}

fn trainer(variant: Variant) -> TrainerConfig {
    let mut cfg = TrainerConfig::for_variant(variant);
    cfg.k = 2;
    cfg.tau = 3;
    cfg.hidden = 2;
    cfg.meta = MetaTrainConfig {
        epochs: 2,
        batch_size: 8,
        learning_rate: 1e-2,
    };
    cfg
}

fn setup<'a>(fx: &'a Fixture, cfg: &'a TrainerConfig, chain: Option<&'a BaseChain>) -> Setup<'a> {
    Setup {
        layout: &fx.layout,
        map: &fx.map,
        stream: Stream::new(&fx.periods, 2).unwrap(),
        trainer: cfg,
        base: &fx.base,
        seed: 11,
        chain,
    }
}

fn metrics_of(logs: &[PeriodLog]) -> Vec<(i64, u64, u64)> {
    logs.iter()
        .map(|l| (l.period, l.auc.to_bits(), l.logloss.to_bits()))
        .collect()
}

#[test]
fn decay_weights_are_exact_fractions() {
    for k in 1..=10usize {
        let w = decay_weights(k, LambdaMode::LinearDecay);
        let total: usize = (1..=k).sum();
        assert_eq!(w.len(), k);
        for (j, &v) in w.iter().enumerate() {
            assert_eq!(v, (j + 1) as f64 / total as f64, "k={k} j={}", j + 1);
        }
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }
    assert_eq!(
        decay_weights(3, LambdaMode::LinearDecay),
        vec![1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]
    );
    assert_eq!(decay_weights(4, LambdaMode::Uniform), vec![0.25; 4]);
    assert_eq!(decay_weights(3, LambdaMode::LastOnly), vec![0.0, 0.0, 1.0]);
    for mode in [
        LambdaMode::LinearDecay,
        LambdaMode::Uniform,
        LambdaMode::LastOnly,
    ] {
        assert_eq!(decay_weights(1, mode), vec![1.0]);
    }
}

#[test]
fn variant_names_parse_and_print() {
    let all = [
        Variant::Iu,
        Variant::Bu(3),
        Variant::GruMulti,
        Variant::GruSingle,
        Variant::GruZero,
        Variant::GruFull,
        Variant::GruUnif,
        Variant::Linear,
    ];
    for v in all {
        assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
        assert_eq!(v.slug().parse::<Variant>().unwrap(), v);
    }
    assert_eq!("grumulti".parse::<Variant>().unwrap(), Variant::GruMulti);
    assert_eq!("BU-7".parse::<Variant>().unwrap(), Variant::Bu(7));
    assert!(matches!("bu-0".parse::<Variant>(), Err(Error::Config(_))));
    assert!(matches!("gru".parse::<Variant>(), Err(Error::Config(_))));
    assert_eq!(
        "last_only".parse::<LambdaMode>().unwrap(),
        LambdaMode::LastOnly
    );

    let mut cfg = TrainerConfig::for_variant(Variant::GruSingle);
    cfg.validate().unwrap();
    cfg.lambda = LambdaMode::LinearDecay;
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    let mut cfg = TrainerConfig::for_variant(Variant::GruMulti);
    cfg.lambda = LambdaMode::LastOnly;
    cfg.validate().unwrap();
}

fn random_window(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<Vec<f64>> {
    (0..k)
        .map(|_| (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect())
        .collect()
}

fn randomized_meta(map: &GroupMap, hidden: usize, k: usize, seed: u64) -> MetaGeneratorParams {
    let mut meta = MetaGeneratorParams::init(map, hidden, k, false, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31));
    for w in meta.omega_mut() {
        *w = rng.gen_range(-0.6..0.6);
    }
    meta
}

#[test]
fn last_only_objective_is_the_served_model_loss() {
    let layout = tiny_layout(2, vec![3]);
    let map = GroupMap::build(&layout);
    let ctx = MetaContext {
        layout: &layout,
        map: &map,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let meta = randomized_meta(&map, 3, 3, 2);
    let window = random_window(&mut rng, layout.n_params(), 3);
    let refs: Vec<&[f64]> = window.iter().map(|w| w.as_slice()).collect();
    let data = random_samples(&mut rng, 40, 0);
    // earlier targets carry zero weight, so their data is never read
    let datasets: Vec<&[Sample]> = vec![&[], &[], &data];
    let value = meta_objective(
        ctx,
        &MetaModel::Gru(meta.clone()),
        &refs,
        None,
        &datasets,
        &decay_weights(3, LambdaMode::LastOnly),
    )
    .unwrap();

    let h0 = HiddenStateStore::zeros(map.n_coords(), 3, 0);
    let served = serve(&meta, &map, &refs, &h0).unwrap();
    let sample_refs: Vec<&Sample> = data.iter().collect();
    let scores = predict(&layout, &served, &sample_refs).unwrap();
    let labels: Vec<f64> = data.iter().map(|s| f64::from(s.label)).collect();
    assert!((value - log_loss(&scores, &labels)).abs() < 1e-12);
}

#[test]
fn all_zero_loss_weights_are_rejected() {
    let fx = fixture();
    let ctx = MetaContext {
        layout: &fx.layout,
        map: &fx.map,
    };
    let meta = MetaModel::Gru(MetaGeneratorParams::init(&fx.map, 2, 2, false, 1).unwrap());
    let theta = fx.theta0.theta.as_slice();
    let data = fx.periods[0].samples.as_slice();
    let err = meta_objective(
        ctx,
        &meta,
        &[theta, theta],
        None,
        &[data, data],
        &[0.0, 0.0],
    );
    assert!(err.is_err());
    let err = meta_update(
        ctx,
        &meta,
        &[theta, theta],
        None,
        &[data, data],
        &[0.5, 0.6],
        &MetaTrainConfig::default(),
        1,
        1,
    );
    assert!(err.is_err());
}

#[test]
fn meta_gradient_matches_central_differences() {
    let step = 1e-5;
    let mut worst: f64 = 0.0;
    for inst in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + inst);
        let layout = ModelLayout::new(
            2,
            vec![
                EmbeddingFeature {
                    name: "user".into(),
                    source: FeatureSource::User,
                    vocab: 3,
                },
                EmbeddingFeature {
                    name: "item".into(),
                    source: FeatureSource::Item,
                    vocab: 3,
                },
            ],
            vec![2],
            Pooling::Mean,
        )
        .unwrap();
        let map = GroupMap::build(&layout);
        let ctx = MetaContext {
            layout: &layout,
            map: &map,
        };
        let k = 1 + (inst as usize % 3);
        let hidden = 1 + (inst as usize % 2);
        let mut meta = randomized_meta(&map, hidden, k, inst);
        meta.residual = inst % 2 == 0;
        let window = random_window(&mut rng, layout.n_params(), k);
        let refs: Vec<&[f64]> = window.iter().map(|w| w.as_slice()).collect();
        let data: Vec<Vec<Sample>> = (0..k)
            .map(|_| {
                (0..6)
                    .map(|i| Sample {
                        user: rng.gen_range(0..3),
                        item: rng.gen_range(0..3),
                        history: vec![],
                        user_side: vec![],
                        item_side: vec![],
                        label: (i % 2) as u8,
                        timestamp: 0,
                    })
                    .collect()
            })
            .collect();
        let datasets: Vec<&[Sample]> = data.iter().map(|d| d.as_slice()).collect();
        let lambda = decay_weights(k, LambdaMode::LinearDecay);
        let h = (inst % 3 == 0).then(|| {
            let mut s = HiddenStateStore::zeros(map.n_coords(), hidden, 0);
            for v in &mut s.h {
                *v = rng.gen_range(-0.5..0.5);
            }
            s
        });

        let model = MetaModel::Gru(meta);
        let (_, grad) = meta_gradient(ctx, &model, &refs, h.as_ref(), &datasets, &lambda).unwrap();
        assert_eq!(grad.len(), model.params().len());
        let mut probe = model.clone();
        for i in 0..grad.len() {
            let orig = model.params()[i];
            probe.params_mut()[i] = orig + step;
            let plus = meta_objective(ctx, &probe, &refs, h.as_ref(), &datasets, &lambda).unwrap();
            probe.params_mut()[i] = orig - step;
            let minus = meta_objective(ctx, &probe, &refs, h.as_ref(), &datasets, &lambda).unwrap();
            probe.params_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let err = (grad[i] - numeric).abs() / grad[i].abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(err);
        }
    }
    assert!(worst < 1e-4, "max relative error {worst}");
}

#[test]
fn every_group_receives_gradient() {
    let fx = fixture();
    let ctx = MetaContext {
        layout: &fx.layout,
        map: &fx.map,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut meta = randomized_meta(&fx.map, 2, 2, 4);
    meta.residual = true;
    let mut window = random_window(&mut rng, fx.layout.n_params(), 2);
    // positive hidden biases keep every unit active
    let first = fx.layout.layers()[0];
    for w in &mut window {
        w[first.bias_offset..first.bias_offset + first.output].fill(3.0);
    }
    let refs: Vec<&[f64]> = window.iter().map(|w| w.as_slice()).collect();
    // only user 0 appears, so every other user row is untouched
    let picked: Vec<Sample> = fx
        .periods
        .iter()
        .flat_map(|p| p.samples.iter())
        .filter(|s| s.user == 0)
        .cloned()
        .collect();
    assert!(picked.len() >= 10);
    let one = picked.as_slice();
    let (_, grad) = meta_gradient(
        ctx,
        &MetaModel::Gru(meta.clone()),
        &refs,
        None,
        &[one, one],
        &[0.5, 0.5],
    )
    .unwrap();
    let g = meta.n_groups();
    let d = meta.hidden;
    let out_start = 3 * g * d * (d + 1);
    for group in 0..g {
        let w_out = &grad[out_start + group * d..out_start + (group + 1) * d];
        assert!(
            w_out.iter().any(|&v| v != 0.0),
            "group {group} got no gradient"
        );
    }
}

#[test]
fn zero_epochs_leave_the_generator_unchanged_and_training_lowers_the_loss() {
    let fx = fixture();
    let ctx = MetaContext {
        layout: &fx.layout,
        map: &fx.map,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let window = random_window(&mut rng, fx.layout.n_params(), 2);
    let refs: Vec<&[f64]> = window.iter().map(|w| w.as_slice()).collect();
    let datasets = [
        fx.periods[4].samples.as_slice(),
        fx.periods[5].samples.as_slice(),
    ];
    let model = MetaModel::Gru(MetaGeneratorParams::init(&fx.map, 2, 2, false, 7).unwrap());
    let lambda = decay_weights(2, LambdaMode::LinearDecay);
    let none = MetaTrainConfig {
        epochs: 0,
        batch_size: 8,
        learning_rate: 1e-2,
    };
    let out = meta_update(ctx, &model, &refs, None, &datasets, &lambda, &none, 3, 1).unwrap();
    assert_eq!(out.model, model);
    assert!(out.epoch_losses.is_empty());

    let cfg = MetaTrainConfig {
        epochs: 30,
        batch_size: 24,
        learning_rate: 2e-2,
    };
    let before = meta_objective(ctx, &model, &refs, None, &datasets, &lambda).unwrap();
    let out = meta_update(ctx, &model, &refs, None, &datasets, &lambda, &cfg, 3, 1).unwrap();
    let after = meta_objective(ctx, &out.model, &refs, None, &datasets, &lambda).unwrap();
    assert!(after < before, "{after} >= {before}");
    assert_eq!(out.epoch_losses.len(), 30);
}

#[test]
fn zero_carried_state_equals_no_carried_state() {
    let fx = fixture();
    let ctx = MetaContext {
        layout: &fx.layout,
        map: &fx.map,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let window = random_window(&mut rng, fx.layout.n_params(), 2);
    let refs: Vec<&[f64]> = window.iter().map(|w| w.as_slice()).collect();
    let datasets = [
        fx.periods[6].samples.as_slice(),
        fx.periods[7].samples.as_slice(),
    ];
    let model = MetaModel::Gru(MetaGeneratorParams::init(&fx.map, 2, 2, false, 8).unwrap());
    let lambda = decay_weights(2, LambdaMode::LinearDecay);
    let zeros = HiddenStateStore::zeros(fx.map.n_coords(), 2, 0);
    let cfg = MetaTrainConfig {
        epochs: 3,
        batch_size: 7,
        learning_rate: 1e-2,
    };
    let a = meta_objective(ctx, &model, &refs, None, &datasets, &lambda).unwrap();
    let b = meta_objective(ctx, &model, &refs, Some(&zeros), &datasets, &lambda).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
    let a = meta_update(ctx, &model, &refs, None, &datasets, &lambda, &cfg, 5, 2).unwrap();
    let b = meta_update(
        ctx,
        &model,
        &refs,
        Some(&zeros),
        &datasets,
        &lambda,
        &cfg,
        5,
        2,
    )
    .unwrap();
    let bits = |m: &MetaModel| m.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.model), bits(&b.model));
}

#[test]
fn multi_with_last_only_weights_matches_single() {
    let fx = fixture();
    let mut multi = trainer(Variant::GruMulti);
    multi.lambda = LambdaMode::LastOnly;
    let single = trainer(Variant::GruSingle);
    let a = run_asmg(
        &setup(&fx, &multi, None),
        &fx.theta0,
        &RunOptions::default(),
    )
    .unwrap();
    let b = run_asmg(
        &setup(&fx, &single, None),
        &fx.theta0,
        &RunOptions::default(),
    )
    .unwrap();
    assert!(!a.logs.is_empty());
    assert_eq!(metrics_of(&a.logs), metrics_of(&b.logs));

    let sa = warmup(&setup(&fx, &multi, None), &fx.theta0).unwrap();
    let sb = warmup(&setup(&fx, &single, None), &fx.theta0).unwrap();
    assert_eq!(sa.meta, sb.meta);
    assert_eq!(sa.store, sb.store);
}

#[test]
fn advancing_twice_equals_a_two_step_rollout() {
    let fx = fixture();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let meta = randomized_meta(&fx.map, 3, 2, 6);
    let window = random_window(&mut rng, fx.layout.n_params(), 2);
    let refs: Vec<&[f64]> = window.iter().map(|w| w.as_slice()).collect();
    let mut store = HiddenStateStore::zeros(fx.map.n_coords(), 3, 4);
    for v in &mut store.h {
        *v = rng.gen_range(-0.3..0.3);
    }
    let gen = rollout(&meta, &fx.map, &refs, &store).unwrap();
    let mut stepped = store.clone();
    stepped.advance(&meta, &fx.map, refs[0]).unwrap();
    stepped.advance(&meta, &fx.map, refs[1]).unwrap();
    assert_eq!(stepped, gen.hidden[1]);
    assert_eq!(stepped.tag, 6);
}

#[test]
fn warmup_update_counts() {
    let fx = fixture();
    let mut cfg = trainer(Variant::GruMulti);
    cfg.tau = 1;
    cfg.k = 1;
    let s = warmup(&setup(&fx, &cfg, None), &fx.theta0).unwrap();
    assert_eq!(s.meta_updates, 1);
    assert_eq!(s.t, 2);
    assert_eq!(s.store.as_ref().unwrap().tag, 1);

    let cfg = trainer(Variant::GruMulti);
    let s = warmup(&setup(&fx, &cfg, None), &fx.theta0).unwrap();
    assert_eq!(s.meta_updates, 2);
    assert_eq!(s.t, 4);
    assert_eq!(s.models.keys().copied().collect::<Vec<_>>(), vec![3, 4]);
    assert_eq!(s.store.as_ref().unwrap().tag, 2);

    let mut pad = trainer(Variant::GruMulti);
    pad.early_window = EarlyWindow::Pad;
    assert_eq!(
        warmup(&setup(&fx, &pad, None), &fx.theta0)
            .unwrap()
            .meta_updates,
        3
    );

    let full = trainer(Variant::GruFull);
    let s = warmup(&setup(&fx, &full, None), &fx.theta0).unwrap();
    assert_eq!(s.meta_updates, 3);
    assert!(s.store.is_none());
    assert_eq!(s.models.len(), 4);
}

#[test]
fn online_steps_keep_the_store_one_window_behind() {
    let fx = fixture();
    for variant in [Variant::GruMulti, Variant::GruZero, Variant::GruFull] {
        let cfg = trainer(variant);
        let st = setup(&fx, &cfg, None);
        let mut state = warmup(&st, &fx.theta0).unwrap();
        let warm = state.meta_updates as i64;
        while state.t <= st.stream.last_update() {
            let (log, next) = online_step(&st, &state).unwrap();
            assert_eq!(log.period, state.t);
            state = next;
            let t = state.t;
            match variant {
                Variant::GruFull => assert_eq!(state.models.len() as i64, t),
                _ => assert_eq!(
                    state.models.keys().copied().collect::<Vec<_>>(),
                    vec![t - 1, t]
                ),
            }
            if let Some(store) = &state.store {
                assert_eq!(store.tag, t - 2);
            }
        }
        assert_eq!(state.meta_updates as i64, warm + (state.t - 4));
    }
}

#[test]
fn logged_metrics_come_from_the_model_served_before_training() {
    let fx = fixture();
    let cfg = trainer(Variant::GruMulti);
    let st = setup(&fx, &cfg, None);
    let state = warmup(&st, &fx.theta0).unwrap();
    let t = state.t;
    let MetaModel::Gru(meta) = &state.meta else {
        panic!("expected a GRU generator")
    };
    let window = [
        state.models[&(t - 1)].theta.as_slice(),
        state.models[&t].theta.as_slice(),
    ];
    let served = serve(meta, &fx.map, &window, state.store.as_ref().unwrap()).unwrap();
    let target = st.stream.data(t + 1).unwrap();
    let refs: Vec<&Sample> = target.iter().collect();
    let scores = predict(&fx.layout, &served, &refs).unwrap();
    let labels: Vec<f64> = target.iter().map(|s| f64::from(s.label)).collect();

    let (log, _) = online_step(&st, &state).unwrap();
    assert_eq!(log.auc, auc(&scores, &labels).unwrap());
    assert_eq!(log.logloss, log_loss(&scores, &labels));
    assert_eq!(log.variant, "ASMG-GRUmulti");
}

#[test]
fn base_chain_is_identical_across_variants() {
    let fx = fixture();
    let mut seen: Option<Vec<(i64, u64)>> = None;
    for variant in [
        Variant::GruMulti,
        Variant::GruSingle,
        Variant::GruZero,
        Variant::GruFull,
        Variant::GruUnif,
        Variant::Linear,
    ] {
        let cfg = trainer(variant);
        let out = run_asmg(&setup(&fx, &cfg, None), &fx.theta0, &RunOptions::default()).unwrap();
        assert!(out.completed);
        match &seen {
            None => seen = Some(out.checksums),
            Some(c) => assert_eq!(c, &out.checksums, "{variant}"),
        }
    }
    let cfg = trainer(Variant::Iu);
    let iu = run_baseline_bu(
        &setup(&fx, &cfg, None),
        1,
        &fx.theta0,
        &RunOptions::default(),
    )
    .unwrap();
    assert_eq!(seen.unwrap(), iu.checksums);
}

#[test]
fn incremental_baseline_serves_the_chain() {
    let fx = fixture();
    let cfg = trainer(Variant::Iu);
    let st = setup(&fx, &cfg, None);
    let last = st.stream.last_update();
    let chain =
        BaseChain::compute(&fx.layout, &fx.theta0, st.stream, last + 1, &fx.base, 11).unwrap();
    let cached = setup(&fx, &cfg, Some(&chain));
    let a = run_baseline_bu(&st, 1, &fx.theta0, &RunOptions::default()).unwrap();
    let b = run_baseline_bu(&cached, 1, &fx.theta0, &RunOptions::default()).unwrap();
    assert_eq!(metrics_of(&a.logs), metrics_of(&b.logs));
    assert_eq!(a.logs.first().unwrap().period, 4);
    assert_eq!(a.logs.last().unwrap().period, last);
    for log in &a.logs {
        let t = log.period;
        let (auc, ll) = evaluate(
            &fx.layout,
            &chain.params[t as usize].theta,
            st.stream.data(t + 1).unwrap(),
        )
        .unwrap();
        assert_eq!((log.auc, log.logloss), (auc, ll));
        assert_eq!(log.variant, "IU");
    }
}

#[test]
fn batch_update_trains_on_the_window_union() {
    let fx = fixture();
    let cfg = trainer(Variant::Bu(3));
    let st = setup(&fx, &cfg, None);
    let out = run_baseline_bu(&st, 3, &fx.theta0, &RunOptions::default()).unwrap();
    let mut params = fx.theta0.clone();
    let mut expected = Vec::new();
    for t in 1..=st.stream.last_update() + 1 {
        let mut data: Vec<&Sample> = Vec::new();
        for i in (t - 2).max(st.stream.first())..=t {
            data.extend(st.stream.data(i).unwrap().iter());
        }
        params = incremental_update(&fx.layout, &params, &data, &fx.base, 11, t).unwrap();
        expected.push((t, params.checksum()));
    }
    assert_eq!(out.checksums, expected);
    assert!(out.logs.iter().all(|l| l.variant == "BU-3"));
}

#[test]
fn resumed_runs_match_uninterrupted_runs() {
    let fx = fixture();
    for variant in [Variant::GruMulti, Variant::Linear, Variant::GruFull] {
        let cfg = trainer(variant);
        let st = setup(&fx, &cfg, None);
        let straight = run_asmg(&st, &fx.theta0, &RunOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let first = RunOptions {
            dir: Some(dir.path().to_path_buf()),
            stop_after: Some(5),
            tag: "cfg-a".into(),
        };
        let partial = run_asmg(&st, &fx.theta0, &first).unwrap();
        assert!(!partial.completed);
        assert_eq!(partial.logs.len(), 2);
        let rest = RunOptions {
            stop_after: None,
            ..first.clone()
        };
        let resumed = run_asmg(&st, &fx.theta0, &rest).unwrap();
        assert!(resumed.completed);
        assert_eq!(metrics_of(&straight.logs), metrics_of(&resumed.logs));
        assert_eq!(straight.checksums, resumed.checksums);

        let other = RunOptions {
            tag: "cfg-b".into(),
            ..rest
        };
        assert!(matches!(
            run_asmg(&st, &fx.theta0, &other),
            Err(Error::Config(_))
        ));
    }

    let cfg = trainer(Variant::Bu(2));
    let st = setup(&fx, &cfg, None);
    let straight = run_baseline_bu(&st, 2, &fx.theta0, &RunOptions::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let first = RunOptions {
        dir: Some(dir.path().to_path_buf()),
        stop_after: Some(4),
        tag: "bu".into(),
    };
    assert!(
        !run_baseline_bu(&st, 2, &fx.theta0, &first)
            .unwrap()
            .completed
    );
    let rest = RunOptions {
        stop_after: None,
        ..first
    };
    let resumed = run_baseline_bu(&st, 2, &fx.theta0, &rest).unwrap();
    assert_eq!(metrics_of(&straight.logs), metrics_of(&resumed.logs));
    assert_eq!(straight.checksums, resumed.checksums);
}

#[test]
fn period_logs_roundtrip_through_csv() {
    let fx = fixture();
    let cfg = trainer(Variant::GruUnif);
    let out = run_asmg(&setup(&fx, &cfg, None), &fx.theta0, &RunOptions::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("periods.csv");
    write_period_log(&path, &out.logs).unwrap();
    assert_eq!(read_period_log(&path).unwrap(), out.logs);
}

#[test]
fn pretraining_is_seeded_and_moves_the_model() {
    let fx = fixture();
    let stream = Stream::new(&fx.periods, 2).unwrap();
    let samples = stream.pretrain_samples();
    assert_eq!(samples.len(), 48);
    let a = pretrain(&fx.layout, &fx.theta0, &samples, &fx.base, 4).unwrap();
    let b = pretrain(&fx.layout, &fx.theta0, &samples, &fx.base, 4).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.period, 0);
    assert_ne!(a.theta, fx.theta0.theta);
    assert!(pretrain(&fx.layout, &fx.theta0, &[], &fx.base, 4).is_err());
}
