use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use simchan::baselines::{elm_train, error_stats, mlp_train, stacked_inputs, Predictor};
use simchan::chanscene::{LabeledDataset, Task};
use simchan::numkernel::finite_diff_grad;
use simchan::simnet::{backward, forward, init_from_dataset, SimilarityModel};
use simchan::train::{fine_tune, LossKind, TrainConfig};
use simchan_cli::config::{derive_seed, SceneConfig};
use simchan_cli::experiment::{build_dataset, mean_se, predict_all, run_experiment};
use simchan_cli::persist::{self, Model};
use simchan_cli::{emit_report, ExperimentConfig};

#[derive(Parser)]
#[command(name = "simchan", version, about = "Similarity-based channel mapping and positioning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print a preset configuration as TOML.
    Config {
        #[arg(long, value_enum, default_value = "positioning")]
        task: TaskArg,
    },
    /// Generate the experiment dataset (training + validation tail).
    Gen {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "dataset.bin")]
        out: PathBuf,
    },
    /// Train a model on the training split of a dataset file.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "similarity")]
        kind: KindArg,
        #[arg(long, default_value = "model.bin")]
        out: PathBuf,
    },
    /// Evaluate a model on the validation split of a dataset file.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// Run the full sweep and write `<task>.csv`.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "reports")]
        out: PathBuf,
    },
    /// Quick internal consistency checks.
    Selftest,
}

#[derive(Args)]
struct Common {
    /// TOML experiment file; defaults to the preset for `--task`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "positioning")]
    task: TaskArg,
    /// Overrides the experiment seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path).with_context(|| format!("reading {}", path.display()))?,
            None => ExperimentConfig::preset(self.task.into()),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    ChannelMapping,
    Positioning,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::ChannelMapping => Task::ChannelMapping,
            TaskArg::Positioning => Task::Positioning,
        }
    }
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum KindArg {
    Similarity,
    Mlp,
    Elm,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Config { task } => print!("{}", ExperimentConfig::preset(task.into()).to_toml_string()),
        Command::Gen { common, out } => {
            let cfg = common.load()?;
            let ds = build_dataset(&cfg)?;
            persist::save_dataset(&ds, &out)?;
            println!("wrote {} samples to {}", ds.len(), out.display());
        }
        Command::Train { common, data, kind, out } => {
            let cfg = common.load()?;
            let ds = persist::load_dataset(&data)?;
            let model = train(&cfg, &ds, kind)?;
            persist::save_model(&model, &out)?;
            println!("wrote {} model to {}", model.kind().as_str(), out.display());
        }
        Command::Eval { data, model } => {
            let ds = persist::load_dataset(&data)?;
            let test = ds.validation();
            if test.is_empty() {
                bail!("dataset has no validation samples");
            }
            let model = persist::load_model(&model)?;
            for (name, value) in evaluate(&model, &test)? {
                println!("{name} {value}");
            }
        }
        Command::Report { common, out } => {
            let cfg = common.load()?;
            let report = run_experiment(&cfg)?;
            let path = emit_report(&report, &out)?;
            for f in &report.failures {
                eprintln!("failed: L={} k={} {}: {}", f.l, f.k, f.stage.as_str(), f.message);
            }
            println!("wrote {}", path.display());
            if report.is_partial() {
                return Ok(ExitCode::from(2));
            }
        }
        Command::Selftest => return Ok(selftest()),
    }
    Ok(ExitCode::SUCCESS)
}

fn train(cfg: &ExperimentConfig, ds: &LabeledDataset, kind: KindArg) -> Result<Model> {
    let l = *cfg.sizes().last().expect("validated");
    let train = ds.train().prefix(l);
    if train.is_empty() {
        bail!("dataset has no training samples");
    }
    if kind != KindArg::Similarity && ds.task != Task::Positioning {
        bail!("baselines apply to the positioning task only");
    }
    Ok(match kind {
        KindArg::Similarity => {
            let k = cfg.sparsities()[0];
            let model = init_from_dataset(&train, k)?;
            let train_cfg = TrainConfig { loss_kind: loss_kind(ds.task), ..cfg.effective_train() };
            Model::Similarity(fine_tune(model, &train, &train_cfg)?.0)
        }
        KindArg::Mlp => {
            let mlp_cfg = TrainConfig {
                epochs: cfg.baselines.mlp_epochs,
                loss_kind: LossKind::Positioning,
                shuffle_seed: derive_seed(cfg.seed, 2),
                ..cfg.train.clone()
            };
            Model::Mlp(mlp_train(&train, &mlp_cfg)?)
        }
        KindArg::Elm => Model::Elm(elm_train(
            &train,
            cfg.baselines.elm_hidden,
            cfg.baselines.elm_ridge,
            derive_seed(cfg.seed, 3),
        )?),
    })
}

fn loss_kind(task: Task) -> LossKind {
    match task {
        Task::ChannelMapping => LossKind::SpectralEfficiency,
        Task::Positioning => LossKind::Positioning,
    }
}

fn evaluate(model: &Model, test: &LabeledDataset) -> Result<Vec<(&'static str, f64)>> {
    let predictions = match model {
        Model::Similarity(m) => predict_all(m, test)?,
        Model::Mlp(m) => m.predict_batch(&stacked_inputs(test))?,
        Model::Elm(m) => m.predict_batch(&stacked_inputs(test))?,
    };
    Ok(match test.task {
        Task::ChannelMapping => vec![("mean_se", mean_se(test, &predictions)?)],
        Task::Positioning => {
            let (mean, median) = error_stats(&predictions, &test.targets);
            vec![("mean_error", mean), ("median_error", median)]
        }
    })
}

fn selftest() -> ExitCode {
    let checks: [(&str, fn() -> Result<()>); 4] = [
        ("k=1 forward returns the best-correlated target", check_nearest),
        ("backward matches finite differences", check_gradient),
        ("dataset and model files round-trip", check_persistence),
        ("experiment reports are reproducible", check_reproducible),
    ];
    let mut ok = true;
    for (name, check) in checks {
        match check() {
            Ok(()) => println!("ok    {name}"),
            Err(e) => {
                ok = false;
                println!("FAIL  {name}: {e:#}");
            }
        }
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn small_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::channel_mapping();
    cfg.scene = SceneConfig::Indoor {
        grid: [2, 2],
        n_subcarriers: 2,
        user_area: [[3.0, 3.0], [7.0, 7.0]],
        noise_std: 0.0,
        subset_size: Some(2),
    };
    cfg.l_list = vec![30];
    cfg.k_list = vec![3];
    cfg.eval.test_size = 10;
    cfg.train.epochs = 2;
    cfg.train.batch_size = 10;
    cfg
}

fn check_nearest() -> Result<()> {
    let ds = build_dataset(&small_config())?;
    let (train, test) = (ds.train(), ds.validation());
    let model = init_from_dataset(&train, 1)?;
    for h in &test.inputs {
        let got = forward(&model, h.values(), None)?.t_hat;
        let best = (0..train.len())
            .max_by(|&a, &b| {
                let ca = simchan::numkernel::cdot(train.inputs[a].values(), h.values()).unwrap().norm();
                let cb = simchan::numkernel::cdot(train.inputs[b].values(), h.values()).unwrap().norm();
                ca.total_cmp(&cb).then(b.cmp(&a))
            })
            .unwrap();
        if got != train.targets[best] {
            bail!("prediction differs from neighbour {best}");
        }
    }
    Ok(())
}

fn check_gradient() -> Result<()> {
    let mut cfg = small_config();
    cfg.task = Task::Positioning;
    cfg.scene = SceneConfig::Outdoor {
        side: 50.0,
        grid: [2, 2],
        n_subcarriers: 3,
        n_scatterers: 1,
        layout_seed: 1,
        noise_std: 0.0,
    };
    let ds = build_dataset(&cfg)?;
    let train = ds.train().prefix(8);
    let model = init_from_dataset(&train, 3)?;
    let h = ds.validation().inputs[0].values().clone();
    let g = [1.0, -0.5, 0.25];
    let trace = forward(&model, &h, None)?;
    let analytic = backward(&model, &trace, &h, &g)?.to_dense(&model);
    let objective = |w: &[f64]| {
        let m = SimilarityModel::from_raw(
            model.input_dim(),
            model.target_dim(),
            model.n_columns(),
            model.k(),
            w.to_vec(),
            None,
        )
        .unwrap();
        let tr = forward(&m, &h, None).unwrap();
        if tr.support != trace.support {
            return f64::NAN;
        }
        tr.t_hat.iter().zip(&g).map(|(a, b)| a * b).sum()
    };
    let numeric = finite_diff_grad(objective, model.weights(), 1e-6);
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        if n.is_finite() && (a - n).abs() > 1e-5 * a.abs().max(1e-3) {
            bail!("coordinate {i}: analytic {a}, numeric {n}");
        }
    }
    Ok(())
}

fn check_persistence() -> Result<()> {
    let ds = build_dataset(&small_config())?;
    let back = persist::decode_dataset(&persist::encode_dataset(&ds)?)?;
    if back != ds {
        bail!("dataset changed");
    }
    let model = Model::Similarity(init_from_dataset(&ds.train(), 2)?);
    if persist::decode_model(&persist::encode_model(&model))? != model {
        bail!("model changed");
    }
    Ok(())
}

fn check_reproducible() -> Result<()> {
    let cfg = small_config();
    let dir = tempdir()?;
    let a = std::fs::read(emit_report(&run_experiment(&cfg)?, &dir.join("a"))?)?;
    let b = std::fs::read(emit_report(&run_experiment(&cfg)?, &dir.join("b"))?)?;
    std::fs::remove_dir_all(&dir).ok();
    if a != b {
        bail!("reports differ");
    }
    Ok(())
}

fn tempdir() -> Result<PathBuf> {
    let dir = std::env::temp_dir().join(format!("simchan-selftest-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}
