use std::path::PathBuf;

use asmg_cli::config::{DatasetSource, ExperimentConfig};
use asmg_core::data::{NegativeMode, SplitScheme};
use asmg_core::model::{MlpInit, Pooling};
use asmg_core::trainer::{AdvanceRule, EarlyWindow, LambdaMode, Variant};
use asmg_core::{Error, ErrorClass};
use proptest::prelude::*;

fn config_class(err: &anyhow::Error) -> Option<ErrorClass> {
    err.chain()
        .find_map(|c| c.downcast_ref::<Error>())
        .map(Error::class)
}

#[test]
fn defaults_follow_the_protocol() {
    let cfg = ExperimentConfig::default();
    assert_eq!(
        (cfg.pretrain_periods, cfg.train_periods, cfg.val_periods, cfg.test_periods),
        (10, 10, 3, 7)
    );
    assert_eq!(cfg.runs, 5);
    assert_eq!(cfg.test_range(), 14..=20);
    assert_eq!(cfg.val_range(), 11..=13);
    assert_eq!(cfg.seeds(), vec![2020, 2021, 2022, 2023, 2024]);
    assert!(cfg.check_period_count(31).is_ok());
    assert!(cfg.check_period_count(30).is_err());
    assert_eq!(ExperimentConfig::parse("").unwrap(), cfg);
}

#[test]
fn shipped_acceptance_config_parses() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/acceptance.conf");
    let cfg = ExperimentConfig::load(&path).unwrap();
    assert_eq!(cfg.synthetic.users, 10_000);
    assert_eq!(cfg.synthetic.items, 1_000);
    assert_eq!(cfg.synthetic.periods, 31);
    assert_eq!(cfg.runs, 5);
    assert_eq!(ExperimentConfig::parse(&cfg.to_text()).unwrap(), cfg);
}

#[test]
fn unknown_and_repeated_keys_are_usage_errors() {
    for text in ["colour = red", "k = 3\nk = 4", "k three", "runs = -1", "residual = yes"] {
        let err = ExperimentConfig::parse(text).unwrap_err();
        assert_eq!(config_class(&err), Some(ErrorClass::Usage), "{text}: {err:#}");
    }
    let err = ExperimentConfig::parse("colour = red").unwrap_err();
    assert!(format!("{err:#}").contains("colour"));
}

#[test]
fn comments_blank_lines_and_whitespace_are_ignored() {
    let cfg = ExperimentConfig::parse("# header\n\n   k=5  \n mlp_hidden = 16, 8\n").unwrap();
    assert_eq!(cfg.k, 5);
    assert_eq!(cfg.mlp_hidden, vec![16, 8]);
}

#[test]
fn bu1_collapses_into_iu() {
    let cfg = ExperimentConfig::parse("variants = iu, bu1, BU-3, bu-1").unwrap();
    assert_eq!(cfg.variants, vec![Variant::Iu, Variant::Bu(3)]);
}

#[test]
fn forced_loss_weighting_conflicts_are_rejected() {
    let err = ExperimentConfig::parse("variants = grusingle\nlambda = uniform").unwrap_err();
    assert_eq!(config_class(&err), Some(ErrorClass::Usage));
    let cfg = ExperimentConfig::parse("variants = grumulti\nlambda = uniform").unwrap();
    assert_eq!(cfg.trainer(Variant::GruMulti).lambda, LambdaMode::Uniform);
    let cfg = ExperimentConfig::parse("variants = grumulti,grusingle").unwrap();
    assert_eq!(cfg.trainer(Variant::GruMulti).lambda, LambdaMode::LinearDecay);
    assert_eq!(cfg.trainer(Variant::GruSingle).lambda, LambdaMode::LastOnly);
}

#[test]
fn split_counts_must_cover_the_synthetic_stream() {
    let err = ExperimentConfig::parse("synth_periods = 25").unwrap_err();
    assert_eq!(config_class(&err), Some(ErrorClass::Usage));
    let cfg = ExperimentConfig::parse("synth_periods = 21\npretrain_periods = 5\ntrain_periods = 5\nval_periods = 3\ntest_periods = 7").unwrap();
    assert_eq!(cfg.test_range(), 9..=15);
}

fn variant() -> impl Strategy<Value = Variant> {
    prop_oneof![
        Just(Variant::Iu),
        (2usize..9).prop_map(Variant::Bu),
        Just(Variant::GruMulti),
        Just(Variant::GruZero),
        Just(Variant::GruFull),
    ]
}

fn config() -> impl Strategy<Value = ExperimentConfig> {
    (
        (
            prop_oneof![
                Just(DatasetSource::Synthetic),
                "[a-z]{1,8}\\.csv".prop_map(|s| DatasetSource::File(PathBuf::from(s)))
            ],
            prop_oneof![Just(b','), Just(b'\t'), Just(b';')],
            prop_oneof![
                Just(SplitScheme::CalendarDay),
                (1usize..50).prop_map(SplitScheme::EqualCount)
            ],
            prop_oneof![Just(NegativeMode::Sampled), Just(NegativeMode::Explicit)],
            0.0f64..=1.0,
            0.0f64..=1.0,
            any::<u64>(),
        ),
        (
            1usize..16,
            prop::collection::vec(1usize..128, 0..4),
            prop_oneof![Just(Pooling::Mean), Just(Pooling::Sum)],
            prop_oneof![Just(MlpInit::Uniform), Just(MlpInit::Glorot)],
            1e-6f64..1.0,
            0usize..5,
        ),
        (
            1usize..8,
            1usize..8,
            1usize..4096,
            1e-6f64..1.0,
            any::<bool>(),
            prop_oneof![Just(EarlyWindow::Protocol), Just(EarlyWindow::Pad)],
            prop_oneof![Just(AdvanceRule::Final), Just(AdvanceRule::Stale)],
        ),
        (
            prop::collection::vec(variant(), 1..5),
            1usize..10,
            any::<u64>(),
        ),
    )
        .prop_map(|(data, base, meta, run)| {
            let mut cfg = ExperimentConfig {
                dataset: data.0,
                delimiter: data.1,
                split: data.2,
                negatives: data.3,
                ..ExperimentConfig::default()
            };
            cfg.synthetic.rotation = data.4;
            cfg.synthetic.drift = data.5;
            cfg.synthetic.seed = data.6;
            cfg.embed_dim = base.0;
            cfg.mlp_hidden = base.1;
            cfg.pooling = base.2;
            cfg.mlp_init = base.3;
            cfg.base_learning_rate = base.4;
            cfg.pretrain_epochs = base.5;
            cfg.k = meta.0;
            cfg.meta_hidden = meta.1;
            cfg.meta_batch_size = meta.2;
            cfg.meta_learning_rate = meta.3;
            cfg.residual = meta.4;
            cfg.early_window = meta.5;
            cfg.advance = meta.6;
            let mut variants = Vec::new();
            for v in run.0 {
                if !variants.contains(&v) {
                    variants.push(v);
                }
            }
            cfg.variants = variants;
            cfg.runs = run.1;
            cfg.seed = run.2;
            cfg
        })
}

proptest! {
    #[test]
    fn resolved_config_reloads_equal(cfg in config()) {
        let text = cfg.to_text();
        let back = ExperimentConfig::parse(&text).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.to_text(), text);
    }
}
