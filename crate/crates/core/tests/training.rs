use scale_core::model::ModelConfig;
use scale_core::store::{generate_synthetic, FeatureStore, SyntheticSpec};
use scale_core::trainer::{decode_checkpoint, encode_checkpoint, TrainConfig, TrainError, Trainer};

fn store() -> FeatureStore {
    let spec = SyntheticSpec {
        num_classes: 3,
        train_videos_per_class: 3,
        eval_videos_per_class: 1,
        feature_dim: 6,
        clips_per_train_video: 8,
        ..SyntheticSpec::default()
    };
    generate_synthetic(&spec).unwrap().0
}

fn model() -> ModelConfig {
    ModelConfig {
        hidden_dim: 8,
        layers: 1,
        heads: 2,
        proj_dim: 4,
        clips_per_view: 3,
        ..ModelConfig::new(6)
    }
}

fn config() -> TrainConfig {
    TrainConfig {
        epochs: 10,
        batch_size: 4,
        seed: 11,
        ..TrainConfig::default()
    }
}

fn values(t: &Trainer<'_>) -> Vec<Vec<f32>> {
    t.model().params.iter().map(|p| p.value.data().to_vec()).collect()
}

#[test]
fn resume_matches_uninterrupted_run() {
    let s = store();
    let mut straight = Trainer::new(&s, &model(), &config()).unwrap();
    straight.run::<TrainError>(|_, _| Ok(())).unwrap();

    let mut first = Trainer::new(&s, &model(), &config()).unwrap();
    for _ in 0..5 {
        first.run_epoch().unwrap();
    }
    let bytes = encode_checkpoint(&first.checkpoint());
    drop(first);
    let ckpt = decode_checkpoint(&bytes).unwrap();
    let mut resumed = Trainer::resume(&s, ckpt, &config()).unwrap();
    assert_eq!(resumed.epoch(), 5);
    resumed.run::<TrainError>(|_, _| Ok(())).unwrap();

    assert_eq!(values(&resumed), values(&straight));
    assert_eq!(resumed.log(), straight.log());
    assert_eq!(
        encode_checkpoint(&resumed.checkpoint()),
        encode_checkpoint(&straight.checkpoint())
    );
}

#[test]
fn same_seed_gives_identical_runs() {
    let s = store();
    let cfg = TrainConfig { epochs: 3, ..config() };
    let run = |cfg: &TrainConfig| {
        let mut t = Trainer::new(&s, &model(), cfg).unwrap();
        t.run::<TrainError>(|_, _| Ok(())).unwrap();
        (values(&t), t.log().to_vec())
    };
    let a = run(&cfg);
    assert_eq!(a, run(&cfg));
    assert_ne!(
        a.0,
        run(&TrainConfig {
            seed: 12,
            ..cfg.clone()
        })
        .0
    );
}

#[test]
fn resume_rejects_other_config() {
    let s = store();
    let mut t = Trainer::new(&s, &model(), &config()).unwrap();
    t.run_epoch().unwrap();
    let other = TrainConfig {
        lr_max: 2e-3,
        ..config()
    };
    assert!(matches!(
        Trainer::resume(&s, t.checkpoint(), &other),
        Err(TrainError::ConfigMismatch)
    ));
    let cadence = TrainConfig {
        checkpoint_every: 3,
        ..config()
    };
    assert!(Trainer::resume(&s, t.checkpoint(), &cadence).is_ok());
}
