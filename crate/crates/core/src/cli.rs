//! The `essence-kd` command line.
//!
//! Every stage of the experiment is a subcommand that reads and writes files,
//! so the pipeline can be run piecewise. Given the same config and `--seed`,
//! the piecewise commands reproduce the numbers of `run-experiment`.
//!
//! Exit status: 0 on success, 2 on a usage error, 1 when a command fails.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;

use crate::data::{Dataset, Split};
use crate::distill::DistillationConfig;
use crate::error::{Error, Result};
use crate::fusion::{grid_search_weights, teacher_posterior, EnsembleLogits, FusionWeights};
use crate::io::{
    load_cache, load_config, load_dataset, load_model, save_cache, save_dataset, save_model,
    write_text,
};
use crate::pipeline::{
    evaluate, evaluate_ensemble, run_experiment, train_model, train_student, training_cache,
    ExperimentConfig, FusionConfig,
};
use crate::Model;

pub const THREADS_ENV: &str = "EKD_THREADS";

#[derive(Debug, Parser)]
#[command(name = "essence-kd", version, about = "Top-k essence knowledge distillation from a fused ensemble teacher")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run seed.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Soft-label temperature (overrides the config).
    #[arg(long)]
    temperature: Option<f64>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => load_config(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(t) = self.temperature {
            cfg.temperature = t;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct WeightArgs {
    /// Fusion weights, comma separated; defaults to the config's fixed weights.
    #[arg(long, value_delimiter = ',', conflicts_with = "weights_file")]
    weights: Option<Vec<f64>>,
    /// JSON file written by `fuse-search`.
    #[arg(long)]
    weights_file: Option<PathBuf>,
}

impl WeightArgs {
    fn resolve(&self, cfg: Option<&ExperimentConfig>) -> Result<FusionWeights> {
        if let Some(w) = &self.weights {
            return FusionWeights::new(w.clone());
        }
        if let Some(p) = &self.weights_file {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let file: FusionFile =
                serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", p.display())))?;
            return Ok(file.weights);
        }
        match cfg.map(|c| &c.fusion) {
            Some(FusionConfig::Fixed { weights }) => FusionWeights::new(weights.clone()),
            _ => Err(Error::Config("no fusion weights given; pass --weights or --weights-file".into())),
        }
    }
}

#[derive(Debug, Serialize, serde::Deserialize)]
struct FusionFile {
    weights: FusionWeights,
    heldout_error_rate: f64,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic corpus: train (speed-perturbed), train-original, heldout, test.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train every configured teacher sub-model on hard labels.
    TrainTeacher {
        #[command(flatten)]
        common: Common,
        /// Directory written by `gen-data`.
        #[arg(long)]
        data: PathBuf,
        /// Train the student topology on hard labels instead (the baseline).
        #[arg(long)]
        baseline: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Grid-search fusion weights on the held-out split.
    FuseSearch {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, num_args = 2.., required = true)]
        models: Vec<PathBuf>,
        #[arg(long, default_value_t = 0.1)]
        grid_step: f64,
        /// JSON output file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the teacher's top-k soft labels for the training split.
    DumpLabels {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        models: Vec<PathBuf>,
        #[command(flatten)]
        weights: WeightArgs,
        /// Entries kept per frame; defaults to the largest configured k.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a student from cached soft labels.
    TrainStudent {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        cache: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the frame error rate of one model, or of a fused ensemble.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        models: Vec<PathBuf>,
        #[command(flatten)]
        weights: WeightArgs,
        #[arg(long, default_value = "test", value_parser = parse_split)]
        split: Split,
    },
    /// Run the full protocol and write result tables.
    RunExperiment {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Run only this seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        temperature: Option<f64>,
        /// Override the k sweep.
        #[arg(long, value_delimiter = ',')]
        k: Option<Vec<usize>>,
        /// Override the λ sweep.
        #[arg(long, value_delimiter = ',')]
        lambda: Option<Vec<f64>>,
        /// Grid-search fusion weights with this step instead of the configured fusion.
        #[arg(long)]
        grid_step: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the mean top-k mass of the fused teacher for k = 1..C.
    TopkCurve {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        models: Vec<PathBuf>,
        #[command(flatten)]
        weights: WeightArgs,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long, default_value = "test", value_parser = parse_split)]
        split: Split,
    },
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "heldout" => Ok(Split::Heldout),
        "test" => Ok(Split::Test),
        _ => Err(format!("unknown split {s:?} (train, heldout, test)")),
    }
}

fn split_file(dir: &Path, split: Split) -> PathBuf {
    dir.join(format!("{split}.ekd"))
}

const ORIGINAL_TRAIN_FILE: &str = "train-original.ekd";

fn load_models(paths: &[PathBuf]) -> Result<Vec<Model>> {
    paths.iter().map(load_model).collect()
}

/// Parses `argv` (including the program name) and runs the command,
/// returning the process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return 1;
    }
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
    // a pool may already exist when run() is called twice in one process
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::GenData { common, out } => {
            let cfg = common.load()?;
            let corpus = cfg.corpus(common.seed)?;
            let train = cfg.augmented_train(&corpus)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            save_dataset(split_file(&out, Split::Train), &train)?;
            save_dataset(out.join(ORIGINAL_TRAIN_FILE), &corpus.train)?;
            save_dataset(split_file(&out, Split::Heldout), &corpus.heldout)?;
            save_dataset(split_file(&out, Split::Test), &corpus.test)?;
            println!(
                "train {} frames ({} before perturbation), heldout {}, test {}",
                train.num_frames(),
                corpus.train.num_frames(),
                corpus.heldout.num_frames(),
                corpus.test.num_frames()
            );
        }
        Command::TrainTeacher {
            common,
            data,
            baseline,
            out,
        } => {
            let cfg = common.load()?;
            let train = load_dataset(split_file(&data, Split::Train))?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let jobs: Vec<(String, _, u64)> = if baseline {
                vec![("baseline".into(), cfg.student_spec()?, cfg.student_seed(common.seed))]
            } else {
                cfg.teachers
                    .iter()
                    .enumerate()
                    .map(|(i, t)| Ok((t.name.clone(), t.build(&cfg.synth)?, cfg.teacher_seed(common.seed, i))))
                    .collect::<Result<_>>()?
            };
            for (name, spec, seed) in jobs {
                let trained = train_model(&spec, &train, &cfg.train, seed)?;
                let path = out.join(format!("{name}.model"));
                save_model(&path, &trained.model)?;
                info!("{name}: final training loss {:?}", trained.epoch_losses.last());
                println!("{}", path.display());
            }
        }
        Command::FuseSearch {
            data,
            models,
            grid_step,
            out,
        } => {
            let heldout = load_dataset(split_file(&data, Split::Heldout))?;
            let search = grid_search_weights(&load_models(&models)?, &heldout, grid_step)?;
            let file = FusionFile {
                weights: search.weights,
                heldout_error_rate: search.error_rate,
            };
            let json = serde_json::to_string_pretty(&file).map_err(|e| Error::Format(e.to_string()))?;
            write_text(&out, &(json + "\n"))?;
            let ws: Vec<String> = file.weights.as_slice().iter().map(|w| w.to_string()).collect();
            println!("weights {} heldout FER {:.4}", ws.join(","), file.heldout_error_rate);
        }
        Command::DumpLabels {
            common,
            data,
            models,
            weights,
            k,
            out,
        } => {
            let cfg = common.load()?;
            let teachers = load_models(&models)?;
            let w = weights.resolve(Some(&cfg))?;
            let corpus = crate::data::SynthCorpus {
                train: load_dataset(data.join(ORIGINAL_TRAIN_FILE))?,
                heldout: load_dataset(split_file(&data, Split::Heldout))?,
                test: load_dataset(split_file(&data, Split::Test))?,
            };
            let train = load_dataset(split_file(&data, Split::Train))?;
            let cache = training_cache(&cfg, &teachers, &w, &corpus, &train, k.unwrap_or(cfg.max_k()))?;
            save_cache(&out, &cache)?;
            println!("{} frames, k = {}", cache.len(), cache.header.k);
        }
        Command::TrainStudent {
            common,
            data,
            cache,
            k,
            lambda,
            out,
        } => {
            let cfg = common.load()?;
            let train = load_dataset(split_file(&data, Split::Train))?;
            let cache = load_cache(&cache)?;
            let dcfg = DistillationConfig {
                lambda,
                k,
                temperature: cfg.temperature,
            };
            let trained = train_student(&cfg.student_spec()?, &train, &cache, &dcfg, &cfg.train, cfg.student_seed(common.seed))?;
            save_model(&out, &trained.model)?;
            println!("{}", out.display());
        }
        Command::Evaluate {
            data,
            models,
            weights,
            split,
        } => {
            let ds = load_dataset(split_file(&data, split))?;
            let models = load_models(&models)?;
            let fer = if models.len() == 1 {
                evaluate(&models[0], &ds)?
            } else {
                let w = match weights.resolve(None) {
                    Ok(w) => w,
                    Err(_) => FusionWeights::uniform(models.len())?,
                };
                evaluate_ensemble(&models, &w, &ds)?
            };
            println!("{fer}");
        }
        Command::RunExperiment {
            config,
            seed,
            temperature,
            k,
            lambda,
            grid_step,
            out,
        } => {
            let mut cfg = match &config {
                Some(p) => load_config(p)?,
                None => ExperimentConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seeds = vec![s];
            }
            if let Some(t) = temperature {
                cfg.temperature = t;
            }
            if let Some(k) = k {
                cfg.ks = k;
            }
            if let Some(l) = lambda {
                cfg.lambdas = l;
            }
            if let Some(step) = grid_step {
                cfg.fusion = FusionConfig::GridSearch { step };
            }
            let output = run_experiment(&cfg)?;
            output.write_to(&out)?;
            crate::io::save_config(out.join("config.toml"), &cfg)?;
            print!("{}", output.table.to_pretty());
        }
        Command::TopkCurve {
            data,
            models,
            weights,
            temperature,
            split,
        } => {
            let ds = load_dataset(split_file(&data, split))?;
            let models = load_models(&models)?;
            let w = match weights.resolve(None) {
                Ok(w) => w,
                Err(_) => FusionWeights::uniform(models.len())?,
            };
            print!("{}", topk_curve_csv(&models, &w, &ds, temperature)?);
        }
    }
    Ok(())
}

fn topk_curve_csv(models: &[Model], w: &FusionWeights, ds: &Dataset, temperature: f64) -> Result<String> {
    let q = teacher_posterior(&EnsembleLogits::from_models(models, ds)?, w, temperature)?;
    let rows: Vec<&[f64]> = q.iter_rows().collect();
    let ks: Vec<usize> = (1..=ds.num_classes).collect();
    let mut s = String::from("k,mean_topk_mass\n");
    for (k, m) in crate::distill::topk_mass_curve(&rows, &ks)? {
        s.push_str(&format!("{k},{m}\n"));
    }
    Ok(s)
}
