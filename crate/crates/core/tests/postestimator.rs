use mirig_core::cdpgen::{class_entropy, make_dataset, Attribute, CdpDataset, TaskSpec};
use mirig_core::diffengine::OptimizerConfig;
use mirig_core::error::Error;
use mirig_core::nets::ENCODER_PREFIX;
use mirig_core::objective::bound_bits;
use mirig_core::pairing::PairingStrategy;
use mirig_core::postestimator::*;
use mirig_core::trainer::{init_checkpoint, train, EncoderCheckpoint, TrainConfig};
use proptest::prelude::*;
use std::sync::OnceLock;

fn dataset() -> &'static CdpDataset {
    static DS: OnceLock<CdpDataset> = OnceLock::new();
    DS.get_or_init(|| make_dataset(2048, 41, 16, 0.3).unwrap())
}

fn train_cfg() -> TrainConfig {
    TrainConfig {
        k_tr: 8,
        steps: 150,
        repr_dim: 16,
        proj_dim: 8,
        seed: 2,
        optimizer: OptimizerConfig::adam(3e-3),
        ..TrainConfig::default()
    }
}

fn trained() -> &'static EncoderCheckpoint {
    static C: OnceLock<EncoderCheckpoint> = OnceLock::new();
    C.get_or_init(|| train(&train_cfg(), dataset()).unwrap())
}

fn est_cfg(k: usize) -> EstimationConfig {
    EstimationConfig {
        k_est: k,
        steps: 100,
        eval_batches: 4,
        seed: 3,
        optimizer: OptimizerConfig::adam(5e-3),
        ..EstimationConfig::default()
    }
}

#[test]
fn collapsed_encoder_carries_no_information() {
    let mut ckpt = init_checkpoint(&train_cfg(), 16).unwrap();
    let names: Vec<String> = ckpt
        .params
        .names()
        .iter()
        .filter(|n| n.starts_with(ENCODER_PREFIX))
        .cloned()
        .collect();
    for n in names {
        ckpt.params
            .get_mut(&n)
            .unwrap()
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = 0.0);
    }
    let est = estimate_mi(&ckpt, &est_cfg(32), dataset()).unwrap();
    assert!(est.bits.abs() < 1e-12, "{}", est.bits);
    assert_eq!(est.theorem_status, Some(TheoremStatus::LowerBoundOnly));
}

#[test]
fn tiny_estimation_batch_caps_the_estimate() {
    let est = estimate_mi(trained(), &est_cfg(2), dataset()).unwrap();
    assert!(est.bits <= 3f64.log2() + 1e-9, "{}", est.bits);
    assert_eq!(est.bound_bits, bound_bits(2));
    assert!(check_bound(&est).pass);
}

#[test]
fn encoder_is_left_untouched() {
    let ckpt = trained();
    let before = ckpt.clone();
    let est = estimate_mi(ckpt, &est_cfg(16), dataset()).unwrap();
    assert_eq!(*ckpt, before);
    assert_eq!(est.encoder_hash, ckpt.encoder_params().content_hash());
    assert_eq!(est.train_curve.len(), 100);
    assert_eq!(est.eval_values.len(), 4);
}

#[test]
fn estimate_is_reproducible() {
    let a = estimate_mi(trained(), &est_cfg(16), dataset()).unwrap();
    let b = estimate_mi(trained(), &est_cfg(16), dataset()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn same_class_estimate_stays_below_class_entropy() {
    let est = estimate_mi(trained(), &est_cfg(64), dataset()).unwrap();
    let h = class_entropy(&TaskSpec::all());
    assert_eq!(est.class_entropy_bits, Some(h));
    assert!(est.bits <= h + DEFAULT_EPSILON, "{} vs {h}", est.bits);
    assert!(
        est.bits > 0.5,
        "trained encoder should carry some class information: {}",
        est.bits
    );
    assert!(est.within_training_envelope());
}

#[test]
fn augmentation_pairing_reports_no_status() {
    let cfg = EstimationConfig {
        pairing: PairingStrategy::simclr(0.5),
        steps: 20,
        ..est_cfg(8)
    };
    let est = estimate_mi(trained(), &cfg, dataset()).unwrap();
    assert_eq!(est.theorem_status, None);
    assert_eq!(est.class_entropy_bits, None);
    assert!(est.bits <= bound_bits(8) + 1e-9);
}

#[test]
fn small_eval_split_is_reported() {
    let ds = make_dataset(200, 4, 16, 0.3).unwrap();
    let err = estimate_mi(
        trained(),
        &EstimationConfig {
            eval_batches: 50,
            ..est_cfg(64)
        },
        &ds,
    )
    .unwrap_err();
    assert!(matches!(err, Error::SplitTooSmall { required: 3200, .. }), "{err}");
    let err = estimate_mi(
        trained(),
        &EstimationConfig {
            pairing: PairingStrategy::simclr(0.5),
            ..est_cfg(64)
        },
        &ds,
    )
    .unwrap_err();
    assert!(
        matches!(
            err,
            Error::SplitTooSmall {
                required: 64,
                available: 20
            }
        ),
        "{err}"
    );
}

#[test]
fn image_size_mismatch_is_a_shape_error() {
    let ds = make_dataset(200, 4, 32, 0.3).unwrap();
    assert!(matches!(estimate_mi(trained(), &est_cfg(4), &ds), Err(Error::Shape(_))));
}

#[test]
fn bound_check_examples() {
    let c = check_bound_bits(6.0, 256);
    assert!(c.pass);
    assert!((c.margin - (511f64.log2() - 6.0)).abs() < 1e-12);
    assert!((c.margin - 2.997).abs() < 1e-3);
    let c = check_bound_bits(1.6, 2);
    assert!(!c.pass && c.margin < 0.0);
    assert!(check_bound_bits(0.0, 1).pass);
}

#[test]
fn theorem_status_examples() {
    let h = class_entropy(&TaskSpec::all());
    assert_eq!(
        theorem1_status(5.95, h, DEFAULT_EPSILON).unwrap(),
        TheoremStatus::Pinned
    );
    assert_eq!(
        theorem1_status(3.0, h, DEFAULT_EPSILON).unwrap(),
        TheoremStatus::LowerBoundOnly
    );
    assert_eq!(
        theorem1_status(6.5, h, DEFAULT_EPSILON).unwrap(),
        TheoremStatus::EstimatorViolation
    );
    let color = PairingStrategy::same_class(TaskSpec::single(Attribute::Color));
    assert_eq!(theorem1_status_for(&color, 2.0, 0.1).unwrap(), TheoremStatus::Pinned);
    assert!(matches!(
        theorem1_status_for(&PairingStrategy::simclr(1.0), 2.0, 0.1),
        Err(Error::Premise(_))
    ));
}

#[test]
fn invalid_estimation_configs() {
    for cfg in [
        EstimationConfig { k_est: 1, ..est_cfg(4) },
        EstimationConfig {
            temperature: -1.0,
            ..est_cfg(4)
        },
        EstimationConfig {
            epsilon: 0.0,
            ..est_cfg(4)
        },
    ] {
        assert!(cfg.validate().is_err());
    }
}

proptest! {
    #[test]
    fn status_partitions_the_line(bits in -1.0f64..10.0, h in 0.0f64..8.0, eps in 0.01f64..1.0) {
        let s = theorem1_status(bits, h, eps).unwrap();
        let expected = if (bits - h).abs() <= eps {
            TheoremStatus::Pinned
        } else if bits > h {
            TheoremStatus::EstimatorViolation
        } else {
            TheoremStatus::LowerBoundOnly
        };
        prop_assert_eq!(s, expected);
    }
}
