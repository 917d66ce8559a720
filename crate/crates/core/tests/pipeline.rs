use simchan::baselines::{elm_train, error_stats, mlp_train, reduce_dataset, stacked_inputs, Predictor};
use simchan::chanscene::{generate_dataset, Scene, Task};
use simchan::simnet::{init_from_dataset, predict_batch};
use simchan::train::{fine_tune, mean_loss, LossKind, TrainConfig};

fn positioning_split() -> (simchan::chanscene::LabeledDataset, simchan::chanscene::LabeledDataset) {
    let scene = Scene::outdoor(80.0, (2, 2), 8, 3, 5, 11).unwrap();
    let ds = generate_dataset(&scene, 260, Task::Positioning, 0.01, None).unwrap().with_validation_tail(60);
    let ds = reduce_dataset(&ds).unwrap();
    (ds.train(), ds.validation())
}

#[test]
fn mapping_fine_tune_lowers_training_loss() {
    let scene = Scene::indoor((2, 2), 4, ([4.0, 4.0], [6.0, 6.0]), 3).unwrap();
    let ds = generate_dataset(&scene, 120, Task::ChannelMapping, 0.01, Some(2)).unwrap();
    let model = init_from_dataset(&ds, 4).unwrap();
    let cfg = TrainConfig {
        learning_rate: 1e-2,
        batch_size: 40,
        epochs: 15,
        loss_kind: LossKind::SpectralEfficiency,
        ..TrainConfig::default()
    };
    let (tuned, history) = fine_tune(model, &ds, &cfg).unwrap();
    assert_eq!(history.len(), 15);
    assert!(history.iter().all(|v| v.is_finite()));
    assert!(history.last().unwrap() < history.first().unwrap());
    assert!(mean_loss(&tuned, &ds, LossKind::SpectralEfficiency).unwrap() < 0.0);
}

#[test]
fn positioning_models_predict_inside_the_area() {
    let (train, test) = positioning_split();
    let model = init_from_dataset(&train, 4).unwrap();
    let inputs: Vec<_> = test.inputs.iter().map(|h| h.values().clone()).collect();
    let sim = predict_batch(&model, &inputs).unwrap();
    let (mean, median) = error_stats(&sim, &test.targets);
    assert!(mean.is_finite() && median.is_finite());
    // convex combinations of training positions stay inside their hull
    for p in &sim {
        assert!(p.iter().all(|v| (-1.0..=81.0).contains(v)), "{p:?}");
    }

    let cfg = TrainConfig { epochs: 3, batch_size: 50, loss_kind: LossKind::Positioning, ..TrainConfig::default() };
    let mlp = mlp_train(&train, &cfg).unwrap();
    let elm = elm_train(&train, 40, 1e-6, 2).unwrap();
    let xs = stacked_inputs(&test);
    for model in [&mlp as &dyn Predictor, &elm] {
        let pred = model.predict_batch(&xs).unwrap();
        assert_eq!(pred.len(), test.len());
        assert!(pred.iter().flatten().all(|v| v.is_finite()));
    }
}

#[test]
fn training_is_deterministic() {
    let (train, _) = positioning_split();
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 32,
        loss_kind: LossKind::Positioning,
        shuffle_seed: 9,
        ..TrainConfig::default()
    };
    let a = fine_tune(init_from_dataset(&train, 3).unwrap(), &train, &cfg).unwrap();
    let b = fine_tune(init_from_dataset(&train, 3).unwrap(), &train, &cfg).unwrap();
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
}
