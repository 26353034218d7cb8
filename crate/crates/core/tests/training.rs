use std::fs;

use shadeforge::model::{Model, ModelConfig};
use shadeforge::nn::Mode;
use shadeforge::synth::{render_sample, sample_seed, GenConfig};
use shadeforge::training::{
    fit, latest_checkpoint, train_step, AdamState, AugmentConfig, Batch, FitOptions, StepRecord, TrainConfig,
};
use shadeforge::{Error, ShadowTriplet};

const SIDE: usize = 16;

fn tiny_model(seed: u64) -> Model {
    Model::build(ModelConfig {
        base_channels: 2,
        depth: 2,
        input_side: SIDE,
        rng_seed: seed,
        ..ModelConfig::default()
    })
    .unwrap()
}

fn triplets(n: usize, seed: u64) -> Vec<ShadowTriplet> {
    let cfg = GenConfig {
        width: SIDE,
        height: SIDE,
        size_range: [3.0, 14.0],
        ..GenConfig::default()
    };
    (0..n)
        .map(|i| render_sample(&cfg, sample_seed(seed, i)).unwrap().1)
        .collect()
}

fn config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 4,
        input_side: SIDE,
        validation_fraction: 0.0,
        rng_seed: 5,
        ..TrainConfig::default()
    }
}

fn params(model: &Model) -> Vec<f64> {
    model
        .params()
        .iter()
        .flat_map(|(_, p)| p.value.data().to_vec())
        .collect()
}

#[test]
fn one_epoch_of_eight_samples_is_two_steps() {
    let mut model = tiny_model(0);
    let history = fit(&mut model, &triplets(8, 1), &config(1), &FitOptions::default()).unwrap();
    assert_eq!(history.steps.len(), 2);
    assert_eq!(history.epochs.len(), 1);
    assert_eq!(history.steps.iter().map(|s| s.step).collect::<Vec<_>>(), [1, 2]);
    assert!(history.steps.iter().all(|s| s.loss.is_finite() && s.loss >= 0.0));
}

#[test]
fn empty_corpus_is_rejected() {
    let mut model = tiny_model(0);
    let empty: Vec<ShadowTriplet> = Vec::new();
    assert!(fit(&mut model, &empty, &config(1), &FitOptions::default()).is_err());
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let data = triplets(10, 2);
    let mut cfg = config(3);
    cfg.augment = AugmentConfig::default();
    cfg.validation_fraction = 0.2;

    let full_dir = tempfile::tempdir().unwrap();
    let mut full = tiny_model(3);
    let full_history = fit(
        &mut full,
        &data,
        &cfg,
        &FitOptions {
            checkpoint_dir: Some(full_dir.path().join("ckpt")),
            history_path: Some(full_dir.path().join("history.jsonl")),
            validate: true,
            ..FitOptions::default()
        },
    )
    .unwrap();
    assert_eq!(full_history.steps.len(), 6);

    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("ckpt");
    let history_path = dir.path().join("history.jsonl");
    let mut first = tiny_model(3);
    let h1 = fit(
        &mut first,
        &data,
        &cfg,
        &FitOptions {
            checkpoint_dir: Some(ckpt.clone()),
            checkpoint_every: Some(3),
            history_path: Some(history_path.clone()),
            max_steps: Some(3),
            validate: true,
            ..FitOptions::default()
        },
    )
    .unwrap();
    let resume = latest_checkpoint(&ckpt).unwrap().unwrap();
    assert!(resume.ends_with("step-3"));
    for f in ["model.shau", "optimizer.bin", "manifest.json"] {
        assert!(resume.join(f).is_file(), "{f}");
    }

    let mut second = tiny_model(99);
    let h2 = fit(
        &mut second,
        &data,
        &cfg,
        &FitOptions {
            checkpoint_dir: Some(ckpt.clone()),
            resume_from: Some(resume),
            history_path: Some(history_path.clone()),
            validate: true,
            ..FitOptions::default()
        },
    )
    .unwrap();

    let joined: Vec<StepRecord> = h1.steps.iter().chain(&h2.steps).cloned().collect();
    assert_eq!(joined, full_history.steps);
    let epochs: Vec<_> = h1.epochs.iter().chain(&h2.epochs).cloned().collect();
    assert_eq!(epochs, full_history.epochs);
    assert_eq!(params(&second), params(&full));
    assert_eq!(
        fs::read_to_string(&history_path).unwrap(),
        fs::read_to_string(full_dir.path().join("history.jsonl")).unwrap()
    );
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let mut model = tiny_model(4);
    model.set_mode(Mode::Train);
    let batch = Batch::from_triplets(&triplets(2, 4)).unwrap();
    let mut state = AdamState::new(model.params());
    let cfg = TrainConfig {
        learning_rate: 0.0,
        ..config(1)
    };
    let trainable = |m: &Model| -> Vec<f64> {
        m.params()
            .iter()
            .filter(|(_, p)| p.role.is_trainable())
            .flat_map(|(_, p)| p.value.data().to_vec())
            .collect()
    };
    let before = trainable(&model);
    let loss = train_step(&mut model, &batch, &mut state, &cfg).unwrap();
    assert!(loss.is_finite() && loss > 0.0);
    assert_eq!(trainable(&model), before);
}

#[test]
fn eval_mode_is_rejected() {
    let mut model = tiny_model(4);
    let batch = Batch::from_triplets(&triplets(1, 4)).unwrap();
    let mut state = AdamState::new(model.params());
    assert!(train_step(&mut model, &batch, &mut state, &config(1)).is_err());
}

#[test]
fn repeated_batch_loss_decreases() {
    let data = triplets(4, 6);
    let batch = Batch::from_triplets(&data).unwrap();
    let cfg = config(1);
    let mut decreased = 0;
    for seed in 0..100 {
        let mut model = tiny_model(1000 + seed);
        model.set_mode(Mode::Train);
        let mut state = AdamState::new(model.params());
        let first = train_step(&mut model, &batch, &mut state, &cfg).unwrap();
        let second = train_step(&mut model, &batch, &mut state, &cfg).unwrap();
        decreased += (second <= first) as usize;
    }
    assert!(decreased >= 95, "loss decreased in {decreased}/100 trials");
}

#[test]
fn nan_target_names_the_sample() {
    let mut model = tiny_model(7);
    model.set_mode(Mode::Train);
    let mut batch = Batch::from_triplets(&triplets(3, 7)).unwrap();
    batch.targets.sample_mut(2)[17] = f64::NAN;
    let mut state = AdamState::new(model.params());
    let before = params(&model);
    let err = train_step(&mut model, &batch, &mut state, &config(1)).unwrap_err();
    match &err {
        Error::NonFiniteLoss { sample, .. } => assert_eq!(*sample, 2),
        other => panic!("unexpected error {other}"),
    }
    assert!(err.to_string().contains("sample 2"));
    assert_eq!(params(&model), before);
}
