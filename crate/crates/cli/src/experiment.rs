//! The `(L, k)` sweep behind the reports.

use std::time::Instant;

use simchan::baselines::{elm_train, error_stats, mlp_train, reduce_dataset, stacked_inputs, Predictor};
use simchan::chanscene::{generate_dataset, ChannelVector, LabeledDataset, Task};
use simchan::simnet::{forward_batch_each, init_from_dataset, SimilarityModel};
use simchan::train::{fine_tune, se_loss, se_upper_bound, LossKind, TrainConfig};
use simchan::Result;

use crate::config::{derive_seed, ExperimentConfig};
use crate::report::{MetricsReport, Stage};

pub const METRIC_SE: &str = "mean_se";
pub const METRIC_MEAN_ERROR: &str = "mean_error";
pub const METRIC_MEDIAN_ERROR: &str = "median_error";

const EVAL_CHUNK: usize = 256;

/// Generates the experiment's dataset: `max L` training samples followed by
/// `test_size` validation samples. Positioning inputs are reduced to their
/// dominant left singular vector.
pub fn build_dataset(cfg: &ExperimentConfig) -> Result<LabeledDataset> {
    let scene = cfg.scene.build(cfg.seed)?;
    let max_l = cfg.sizes().last().copied().unwrap_or(0);
    let ds = generate_dataset(
        &scene,
        max_l + cfg.eval.test_size,
        cfg.task,
        cfg.scene.noise_std(),
        cfg.scene.subset_size(),
    )?
    .with_validation_tail(cfg.eval.test_size);
    match cfg.task {
        Task::Positioning => reduce_dataset(&ds),
        Task::ChannelMapping => Ok(ds),
    }
}

/// Similarity-model predictions for every input of `ds`.
pub fn predict_all(model: &SimilarityModel, ds: &LabeledDataset) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(ds.len());
    for part in ds.inputs.chunks(EVAL_CHUNK) {
        let hs: Vec<_> = part.iter().map(ChannelVector::values).collect();
        forward_batch_each(model, &hs, &vec![None; hs.len()], |_, tr| {
            out.push(tr.t_hat);
            Ok(())
        })?;
    }
    Ok(out)
}

/// Mean downlink spectral efficiency of `predictions` used as precoders.
pub fn mean_se(ds: &LabeledDataset, predictions: &[Vec<f64>]) -> Result<f64> {
    let mut total = 0.0;
    for (t, p) in ds.targets.iter().zip(predictions) {
        let h = ChannelVector::from_stacked(t, ds.n_antennas, ds.n_subcarriers)?;
        total -= se_loss(&h, p)?;
    }
    Ok(total / ds.len() as f64)
}

/// Mean spectral efficiency with the true channel as precoder.
pub fn mean_upper_bound(ds: &LabeledDataset) -> Result<f64> {
    let mut total = 0.0;
    for t in &ds.targets {
        total += se_upper_bound(&ChannelVector::from_stacked(t, ds.n_antennas, ds.n_subcarriers)?);
    }
    Ok(total / ds.len() as f64)
}

/// Task metrics as `(name, value)` pairs.
fn metrics(task: Task, test: &LabeledDataset, predictions: &[Vec<f64>]) -> Result<Vec<(&'static str, f64)>> {
    Ok(match task {
        Task::ChannelMapping => vec![(METRIC_SE, mean_se(test, predictions)?)],
        Task::Positioning => {
            let (mean, median) = error_stats(predictions, &test.targets);
            vec![(METRIC_MEAN_ERROR, mean), (METRIC_MEDIAN_ERROR, median)]
        }
    })
}

struct Clock(bool);

impl Clock {
    fn time<T>(&self, f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
        let start = Instant::now();
        let out = f()?;
        Ok((out, if self.0 { start.elapsed().as_secs_f64() } else { 0.0 }))
    }
}

/// Runs the sweep. Failures of individual cells are recorded in the report
/// (which is then partial); only dataset generation errors abort.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    cfg.validate()?;
    let clock = Clock(cfg.record_runtime);
    let ds = build_dataset(cfg)?;
    let (train_all, test) = (ds.train(), ds.validation());
    let train_cfg = cfg.effective_train();
    let sizes = cfg.sizes();
    let ks = cfg.sparsities();
    let mut report = MetricsReport::new(cfg.task, cfg.seed);

    let bound = match cfg.task {
        Task::ChannelMapping => Some(clock.time(|| mean_upper_bound(&test))?),
        Task::Positioning => None,
    };

    for &l in &sizes {
        let train = train_all.prefix(l);
        let baselines = run_baselines(cfg, &train, &test, &clock);
        for &k in &ks {
            if let Some((value, runtime)) = bound {
                report.push(l, k, Stage::UpperBound, METRIC_SE, value, runtime);
            }
            for (stage, outcome) in &baselines {
                match outcome {
                    Ok((values, runtime)) => {
                        for (name, v) in values {
                            report.push(l, k, *stage, name, *v, *runtime);
                        }
                    }
                    Err(msg) => report.fail(l, k, *stage, msg.clone()),
                }
            }
            run_cell(cfg.task, &train, &test, k, &train_cfg, &clock, &mut report);
        }
    }
    Ok(report)
}

type StageOutcome = std::result::Result<(Vec<(&'static str, f64)>, f64), String>;

fn run_cell(
    task: Task,
    train: &LabeledDataset,
    test: &LabeledDataset,
    k: usize,
    train_cfg: &TrainConfig,
    clock: &Clock,
    report: &mut MetricsReport,
) {
    let l = train.len();
    let init = clock.time(|| {
        let model = init_from_dataset(train, k)?;
        let m = metrics(task, test, &predict_all(&model, test)?)?;
        Ok((model, m))
    });
    let (model, (values, runtime)) = match init {
        Ok(((model, values), runtime)) => (model, (values, runtime)),
        Err(e) => {
            report.fail(l, k, Stage::Init, e.to_string());
            report.fail(l, k, Stage::FineTuned, "initialization failed".into());
            return;
        }
    };
    for (name, v) in values {
        report.push(l, k, Stage::Init, name, v, runtime);
    }
    let tuned = clock.time(|| {
        let (model, _) = fine_tune(model, train, train_cfg)?;
        metrics(task, test, &predict_all(&model, test)?)
    });
    match tuned {
        Ok((values, runtime)) => {
            for (name, v) in values {
                report.push(l, k, Stage::FineTuned, name, v, runtime);
            }
        }
        Err(e) => report.fail(l, k, Stage::FineTuned, e.to_string()),
    }
}

fn run_baselines(
    cfg: &ExperimentConfig,
    train: &LabeledDataset,
    test: &LabeledDataset,
    clock: &Clock,
) -> Vec<(Stage, StageOutcome)> {
    let mut out = Vec::new();
    let xs = stacked_inputs(test);
    if cfg.baselines.mlp {
        let mlp_cfg = TrainConfig {
            epochs: cfg.baselines.mlp_epochs,
            loss_kind: LossKind::Positioning,
            shuffle_seed: derive_seed(cfg.seed, 2),
            ..cfg.train.clone()
        };
        let r = clock.time(|| {
            let model = mlp_train(train, &mlp_cfg)?;
            metrics(cfg.task, test, &model.predict_batch(&xs)?)
        });
        out.push((Stage::Mlp, r.map_err(|e| e.to_string())));
    }
    if cfg.baselines.elm {
        let r = clock.time(|| {
            let model = elm_train(train, cfg.baselines.elm_hidden, cfg.baselines.elm_ridge, derive_seed(cfg.seed, 3))?;
            metrics(cfg.task, test, &model.predict_batch(&xs)?)
        });
        out.push((Stage::Elm, r.map_err(|e| e.to_string())));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SceneConfig;

    fn tiny_positioning() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::positioning();
        cfg.scene = SceneConfig::Outdoor {
            side: 60.0,
            grid: [2, 2],
            n_subcarriers: 4,
            n_scatterers: 2,
            layout_seed: 3,
            noise_std: 0.0,
        };
        cfg.l_list = vec![30, 15];
        cfg.k_list = vec![3];
        cfg.eval.test_size = 10;
        cfg.train.epochs = 2;
        cfg.train.batch_size = 8;
        cfg.baselines.mlp_epochs = 2;
        cfg.baselines.elm_hidden = 20;
        cfg
    }

    fn tiny_mapping() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::channel_mapping();
        cfg.scene = SceneConfig::Indoor {
            grid: [2, 2],
            n_subcarriers: 3,
            user_area: [[4.0, 4.0], [6.0, 6.0]],
            noise_std: 0.0,
            subset_size: Some(2),
        };
        cfg.l_list = vec![20];
        cfg.k_list = vec![2];
        cfg.eval.test_size = 8;
        cfg.train.epochs = 0;
        cfg
    }

    #[test]
    fn zero_epochs_keep_init_metrics() {
        let r = run_experiment(&tiny_mapping()).unwrap();
        let init = r.value(20, 2, Stage::Init, METRIC_SE).unwrap();
        assert_eq!(r.value(20, 2, Stage::FineTuned, METRIC_SE), Some(init));
        let bound = r.value(20, 2, Stage::UpperBound, METRIC_SE).unwrap();
        assert!(bound >= init);
        assert_eq!(r.rows.len(), 3);
    }

    #[test]
    fn positioning_rows_cover_all_stages() {
        let r = run_experiment(&tiny_positioning()).unwrap();
        assert!(!r.is_partial());
        // 2 sizes × 1 k × 4 stages × 2 metrics
        assert_eq!(r.rows.len(), 16);
        assert_eq!(r.to_csv().lines().count(), 17);
        for l in [15, 30] {
            for stage in [Stage::Init, Stage::FineTuned, Stage::Mlp, Stage::Elm] {
                assert!(r.value(l, 3, stage, METRIC_MEDIAN_ERROR).unwrap().is_finite());
            }
        }
    }

    #[test]
    fn failed_cell_marks_report_partial() {
        let mut cfg = tiny_mapping();
        cfg.k_list = vec![2, 20];
        cfg.train.epochs = 1;
        let r = run_experiment(&cfg).unwrap();
        assert!(r.is_partial());
        assert!(r.value(20, 2, Stage::FineTuned, METRIC_SE).is_some());
        let f = &r.failures[0];
        assert_eq!((f.l, f.k, f.stage), (20, 20, Stage::FineTuned));
        assert!(r.to_csv().contains("20,20,fine_tuned,failed,NaN"));
    }

    #[test]
    fn repeated_runs_identical() {
        let cfg = tiny_positioning();
        assert_eq!(run_experiment(&cfg).unwrap().to_csv(), run_experiment(&cfg).unwrap().to_csv());
    }
}
