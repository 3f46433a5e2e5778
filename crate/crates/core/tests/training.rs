use selective_ae::model::{build_model, Arch};
use selective_ae::patch::LabeledPatchPair;
use selective_ae::synth::{generate_patch_dataset, PatchDatasetConfig, SynthConfig};
use selective_ae::train::{evaluate_mse, initial_model, train, train_model, Init, TrainConfig};

fn small_data(count: usize) -> Vec<LabeledPatchPair> {
    let synth = SynthConfig {
        seed: 21,
        frame_rows: 120,
        frame_cols: 160,
        distractors_per_frame: (5, 10),
        ..Default::default()
    };
    let data = PatchDatasetConfig {
        count,
        k_rotations: 4,
        ..Default::default()
    };
    generate_patch_dataset(&synth, &data).unwrap().0
}

fn quick(max_epochs: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 16,
        max_epochs,
        seed: 3,
        ..Default::default()
    }
}

#[test]
fn training_is_deterministic() {
    let data = small_data(48);
    let (a, ha) = train(&data, &quick(2)).unwrap();
    let (b, hb) = train(&data, &quick(2)).unwrap();
    assert_eq!(a, b);
    assert_eq!(ha, hb);
    assert_eq!(ha.records.len(), 3);
    assert_eq!(ha.train_size + ha.val_size, 48);
}

#[test]
fn returned_model_is_the_best_epoch() {
    let data = small_data(48);
    let config = quick(3);
    let (model, history) = train(&data, &config).unwrap();
    let best = history.best_val_mse().unwrap();
    assert_eq!(history.records[history.best_epoch].val_mse, best);
    let (_, val_idx) = selective_ae::train::split_indices(48, config.validation_fraction, config.seed).unwrap();
    let val: Vec<&LabeledPatchPair> = val_idx.iter().map(|&i| &data[i]).collect();
    assert!((evaluate_mse(&model, &val).unwrap() - best).abs() < 1e-12);
}

#[test]
fn patience_zero_stops_without_improvement() {
    let data = small_data(32);
    let config = TrainConfig {
        learning_rate: 1e-12,
        patience: 0,
        ..quick(20)
    };
    let (_, history) = train(&data, &config).unwrap();
    assert!(history.stopped_early);
    assert_eq!(history.records.len(), 2);
}

#[test]
fn data_scaled_init_differs_from_fan_in_only() {
    let data = small_data(32);
    let he = initial_model(&data, &TrainConfig { init: Init::He, ..quick(1) }).unwrap();
    let mut reference = build_model(Arch::Model1, 3).unwrap();
    reference.set_noise_std(0.1).unwrap();
    assert_eq!(he, reference);
    let scaled = initial_model(&data, &quick(1)).unwrap();
    assert_ne!(scaled, he);
    assert_eq!(scaled, initial_model(&data, &quick(1)).unwrap());
}

#[test]
fn progress_sees_every_epoch() {
    let data = small_data(32);
    let config = quick(2);
    let mut seen = Vec::new();
    let model = initial_model(&data, &config).unwrap();
    let (_, history) = train_model(model, &data, &config, |r| seen.push(r.epoch)).unwrap();
    assert_eq!(seen, vec![0, 1, 2]);
    assert_eq!(history.records.len(), 3);
}

#[test]
fn init_round_trips_through_json() {
    let config = TrainConfig::default();
    let text = serde_json::to_string(&config).unwrap();
    assert!(text.contains("\"kind\":\"data-scaled\""));
    let back: TrainConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(back, config);
    let he: TrainConfig = serde_json::from_str(r#"{"init": {"kind": "he"}}"#).unwrap();
    assert_eq!(he.init, Init::He);
}

#[test]
fn selectivity_of_a_zero_model_is_undefined() {
    let data = small_data(32);
    let pairs: Vec<&LabeledPatchPair> = data.iter().collect();
    let mut model = build_model(Arch::Model1, 1).unwrap();
    for t in model.param_tensors_mut() {
        *t = t.scale(0.0);
    }
    let s = selective_ae::train::selectivity(&model, &pairs).unwrap();
    assert_eq!((s.positive_mean, s.other_mean), (0.0, 0.0));
    assert!(s.ratio().is_nan());
    assert_eq!(s.positives + s.others, 32);
    assert!(selective_ae::train::selectivity(&model, &pairs[..0]).is_err());
}
