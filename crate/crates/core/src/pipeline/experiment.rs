//! End-to-end protocol: train diverse sub-models, fuse them into a teacher,
//! cache top-k soft labels, sweep students over (k, λ), and tabulate frame
//! error rates per seed.

use std::path::Path;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cache::{dump_soft_labels, SoftLabelCache};
use super::results::{ResultRow, ResultsTable};
use super::train::{evaluate, evaluate_ensemble, train_model, train_student, TrainConfig};
use crate::data::{augment, synth_generate, Dataset, Split, SynthConfig, SynthCorpus, DEFAULT_SPEED_FACTORS};
use crate::distill::{topk_mass_curve, DistillationConfig};
use crate::error::{Error, Result, StageExt};
use crate::fusion::{grid_search_weights, EnsembleLogits, FusionWeights, teacher_posterior};
use crate::nn::{Activation, Context, NetworkSpec};
use crate::Model;

pub const TEACHER_TAG: &str = "teacher";
pub const BASELINE_TAG: &str = "baseline";
pub const STUDENT_TAG: &str = "student";

const STUDENT_ROLE: u64 = 0x5354_5544;

/// Topology of one network; feature and class counts come from the corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    pub context: Context,
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl ModelConfig {
    pub fn build(&self, synth: &SynthConfig) -> Result<NetworkSpec> {
        NetworkSpec::mlp(
            synth.feature_dim,
            self.context,
            &self.hidden,
            self.activation,
            synth.num_classes,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FusionConfig {
    Fixed { weights: Vec<f64> },
    GridSearch { step: f64 },
}

/// Which audio the teacher labels: the speed-perturbed copies themselves, or
/// the original utterances with labels mapped onto the perturbed frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SoftLabelSource {
    Augmented,
    Original,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub speed_factors: Vec<f64>,
    pub temperature: f64,
    pub ks: Vec<usize>,
    pub lambdas: Vec<f64>,
    pub soft_label_source: SoftLabelSource,
    /// `k` values of the top-k mass curve; empty means `1..=C`.
    pub curve_ks: Vec<usize>,
    pub fusion: FusionConfig,
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub teachers: Vec<ModelConfig>,
    pub student: ModelConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seeds: (1..=10).collect(),
            speed_factors: DEFAULT_SPEED_FACTORS.to_vec(),
            temperature: 1.0,
            ks: vec![1, 5, 10, 20, 50],
            lambdas: vec![0.3],
            soft_label_source: SoftLabelSource::Augmented,
            curve_ks: Vec::new(),
            fusion: FusionConfig::Fixed {
                weights: vec![0.5, 0.5],
            },
            // little data and a wide student: the regime where soft labels
            // regularise rather than merely slow down fitting
            synth: SynthConfig {
                utterances_per_split: 10,
                ..SynthConfig::default()
            },
            train: TrainConfig {
                epochs: 30,
                ..TrainConfig::default()
            },
            teachers: vec![
                ModelConfig {
                    name: "deep-relu".into(),
                    context: Context::new(2, 2),
                    hidden: vec![64, 64],
                    activation: Activation::Relu,
                },
                ModelConfig {
                    name: "wide-tanh".into(),
                    context: Context::new(4, 3),
                    hidden: vec![96],
                    activation: Activation::Tanh,
                },
            ],
            student: ModelConfig {
                name: "student".into(),
                context: Context::new(2, 2),
                hidden: vec![256],
                activation: Activation::Relu,
            },
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.synth.validate()?;
        self.train.validate()?;
        if self.seeds.is_empty() {
            return bad("no seeds configured".into());
        }
        if self.teachers.len() < 2 {
            return bad("at least two teacher sub-models are required".into());
        }
        let specs = self.teacher_specs()?;
        for i in 0..specs.len() {
            for j in i + 1..specs.len() {
                if self.teachers[i].name == self.teachers[j].name {
                    return bad(format!("duplicate teacher name {}", self.teachers[i].name));
                }
                if specs[i] == specs[j] {
                    return bad(format!(
                        "teachers {} and {} share one topology; sub-models must differ",
                        self.teachers[i].name, self.teachers[j].name
                    ));
                }
            }
        }
        self.student_spec()?;
        if self.speed_factors.is_empty() || self.speed_factors.iter().any(|a| a.is_nan() || *a <= 0.0) {
            return bad("speed factors must be positive and non-empty".into());
        }
        if self.ks.is_empty() || self.lambdas.is_empty() {
            return bad("k and lambda sweeps must be non-empty".into());
        }
        for &k in &self.ks {
            for &lambda in &self.lambdas {
                DistillationConfig {
                    lambda,
                    k,
                    temperature: self.temperature,
                }
                .validate()?;
            }
        }
        if self.curve_ks.contains(&0) {
            return bad("curve k values must be at least 1".into());
        }
        match &self.fusion {
            FusionConfig::Fixed { weights } => {
                if weights.len() != self.teachers.len() {
                    return bad(format!(
                        "{} fusion weights for {} teachers",
                        weights.len(),
                        self.teachers.len()
                    ));
                }
                FusionWeights::new(weights.clone())?;
            }
            FusionConfig::GridSearch { step } => {
                crate::fusion::simplex_grid(self.teachers.len(), *step)?;
            }
        }
        Ok(())
    }

    pub fn teacher_specs(&self) -> Result<Vec<NetworkSpec>> {
        self.teachers.iter().map(|t| t.build(&self.synth)).collect()
    }

    pub fn student_spec(&self) -> Result<NetworkSpec> {
        self.student.build(&self.synth)
    }

    /// Corpus seed of one run.
    pub fn data_seed(&self, run_seed: u64) -> u64 {
        self.synth.seed.wrapping_add(run_seed)
    }

    pub fn teacher_seed(&self, run_seed: u64, index: usize) -> u64 {
        derive_seed(run_seed, index as u64 + 1)
    }

    /// Shared by the baseline and every student of a run.
    pub fn student_seed(&self, run_seed: u64) -> u64 {
        derive_seed(run_seed, STUDENT_ROLE)
    }

    /// Generates the corpus of one run.
    pub fn corpus(&self, run_seed: u64) -> Result<SynthCorpus> {
        synth_generate(&SynthConfig {
            seed: self.data_seed(run_seed),
            ..self.synth.clone()
        })
    }

    pub fn augmented_train(&self, corpus: &SynthCorpus) -> Result<Dataset> {
        augment(&corpus.train, &self.speed_factors)
    }

    pub fn max_k(&self) -> usize {
        self.ks.iter().copied().max().unwrap_or(1)
    }
}

/// SplitMix64 finaliser over the run seed and a role tag.
fn derive_seed(run_seed: u64, role: u64) -> u64 {
    let mut z = run_seed ^ role.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub table: ResultsTable,
    /// Mean top-k mass of the teacher posterior on the test split, pooled
    /// over all seeds.
    pub topk_curve: Vec<(usize, f64)>,
    pub fusion_weights: Vec<(u64, FusionWeights)>,
}

impl ExperimentOutput {
    pub fn curve_csv(&self) -> String {
        let mut s = String::from("k,mean_topk_mass\n");
        for (k, m) in &self.topk_curve {
            s.push_str(&format!("{k},{m}\n"));
        }
        s
    }

    pub fn fusion_csv(&self) -> String {
        let mut s = String::from("seed,weights\n");
        for (seed, w) in &self.fusion_weights {
            let ws: Vec<String> = w.as_slice().iter().map(|v| v.to_string()).collect();
            s.push_str(&format!("{seed},{}\n", ws.join(" ")));
        }
        s
    }

    /// Writes `results.csv`, `results.txt`, `topk_mass.csv` and
    /// `fusion_weights.csv` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = [
            ("results.csv", self.table.to_csv()),
            ("results.txt", self.table.to_pretty()),
            ("topk_mass.csv", self.curve_csv()),
            ("fusion_weights.csv", self.fusion_csv()),
        ];
        for (name, body) in files {
            crate::io::write_text(&dir.join(name), &body)?;
        }
        Ok(())
    }
}

struct SeedOutcome {
    table: ResultsTable,
    curve: Vec<(usize, f64)>,
    curve_frames: usize,
    weights: FusionWeights,
}

/// Resolves the configured fusion weights, grid-searching on held-out data
/// when asked to.
pub fn resolve_fusion(config: &ExperimentConfig, teachers: &[Model], heldout: &Dataset) -> Result<FusionWeights> {
    match &config.fusion {
        FusionConfig::Fixed { weights } => FusionWeights::new(weights.clone()),
        FusionConfig::GridSearch { step } => Ok(grid_search_weights(teachers, heldout, *step)?.weights),
    }
}

/// Builds the training-set soft-label cache according to `soft_label_source`.
pub fn training_cache(
    config: &ExperimentConfig,
    teachers: &[Model],
    weights: &FusionWeights,
    corpus: &SynthCorpus,
    train_aug: &Dataset,
    k: usize,
) -> Result<SoftLabelCache> {
    match config.soft_label_source {
        SoftLabelSource::Augmented => dump_soft_labels(teachers, weights, train_aug, k, config.temperature),
        SoftLabelSource::Original => dump_soft_labels(teachers, weights, &corpus.train, k, config.temperature)?
            .transfer_to_perturbed(&corpus.train, &config.speed_factors),
    }
}

fn run_seed(config: &ExperimentConfig, seed: u64) -> Result<SeedOutcome> {
    let corpus = config.corpus(seed).stage("generate data")?;
    let train = config.augmented_train(&corpus).stage("augment")?;
    let mut table = ResultsTable::default();
    let eval_splits = [Split::Heldout, Split::Test];

    let teachers = config
        .teacher_specs()?
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            train_model(spec, &train, &config.train, config.teacher_seed(seed, i))
                .map(|t| t.model)
                .stage(&format!("train sub-model {}", config.teachers[i].name))
        })
        .collect::<Result<Vec<_>>>()?;
    for (cfg, model) in config.teachers.iter().zip(&teachers) {
        for split in eval_splits {
            table.push(ResultRow {
                model: cfg.name.clone(),
                k: None,
                lambda: None,
                seed,
                split,
                frame_error_rate: evaluate(model, corpus.split(split)).stage("evaluate sub-model")?,
            })?;
        }
    }

    let weights = resolve_fusion(config, &teachers, &corpus.heldout).stage("fuse")?;
    for split in eval_splits {
        table.push(ResultRow {
            model: TEACHER_TAG.into(),
            k: None,
            lambda: None,
            seed,
            split,
            frame_error_rate: evaluate_ensemble(&teachers, &weights, corpus.split(split))
                .stage("evaluate teacher")?,
        })?;
    }

    let student_spec = config.student_spec()?;
    let student_seed = config.student_seed(seed);
    let baseline = train_model(&student_spec, &train, &config.train, student_seed).stage("train baseline")?;
    for split in eval_splits {
        table.push(ResultRow {
            model: BASELINE_TAG.into(),
            k: None,
            lambda: None,
            seed,
            split,
            frame_error_rate: evaluate(&baseline.model, corpus.split(split)).stage("evaluate baseline")?,
        })?;
    }

    let cache = training_cache(config, &teachers, &weights, &corpus, &train, config.max_k())
        .stage("dump soft labels")?;
    for &k in &config.ks {
        for &lambda in &config.lambdas {
            let dcfg = DistillationConfig {
                lambda,
                k,
                temperature: config.temperature,
            };
            let student = train_student(&student_spec, &train, &cache, &dcfg, &config.train, student_seed)
                .stage(&format!("train student k={k} lambda={lambda}"))?;
            for split in eval_splits {
                table.push(ResultRow {
                    model: STUDENT_TAG.into(),
                    k: Some(k),
                    lambda: Some(lambda),
                    seed,
                    split,
                    frame_error_rate: evaluate(&student.model, corpus.split(split))
                        .stage("evaluate student")?,
                })?;
            }
        }
    }

    let ensemble = EnsembleLogits::from_models(&teachers, &corpus.test)?;
    let posteriors = teacher_posterior(&ensemble, &weights, config.temperature)?;
    let curve_ks: Vec<usize> = if config.curve_ks.is_empty() {
        (1..=config.synth.num_classes).collect()
    } else {
        config.curve_ks.clone()
    };
    let rows: Vec<&[f64]> = posteriors.iter_rows().collect();
    let curve = topk_mass_curve(&rows, &curve_ks).stage("top-k mass curve")?;
    info!("seed {seed} done");
    Ok(SeedOutcome {
        table,
        curve,
        curve_frames: rows.len(),
        weights,
    })
}

/// Runs every seed of the experiment. Seeds run in parallel; results are
/// merged in configuration order.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let outcomes = config
        .seeds
        .par_iter()
        .map(|&seed| run_seed(config, seed).stage(&format!("seed {seed}")))
        .collect::<Result<Vec<_>>>()?;

    let mut table = ResultsTable::default();
    let mut fusion_weights = Vec::new();
    let total_frames: usize = outcomes.iter().map(|o| o.curve_frames).sum();
    let mut curve: Vec<(usize, f64)> = outcomes[0].curve.iter().map(|(k, _)| (*k, 0.0)).collect();
    for (o, &seed) in outcomes.into_iter().zip(&config.seeds) {
        let w = o.curve_frames as f64 / total_frames as f64;
        for (acc, (_, m)) in curve.iter_mut().zip(&o.curve) {
            acc.1 += w * m;
        }
        table.extend(o.table);
        fusion_weights.push((seed, o.weights));
    }
    Ok(ExperimentOutput {
        table,
        topk_curve: curve,
        fusion_weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn identical_teachers_rejected() {
        let mut cfg = ExperimentConfig::default();
        cfg.teachers[1] = ModelConfig {
            name: "copy".into(),
            ..cfg.teachers[0].clone()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn fusion_weight_count_checked() {
        let cfg = ExperimentConfig {
            fusion: FusionConfig::Fixed { weights: vec![1.0] },
            ..ExperimentConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn seeds_are_distinct_per_role() {
        let cfg = ExperimentConfig::default();
        let s = [cfg.teacher_seed(1, 0), cfg.teacher_seed(1, 1), cfg.student_seed(1), cfg.student_seed(2)];
        for i in 0..s.len() {
            for j in i + 1..s.len() {
                assert_ne!(s[i], s[j]);
            }
        }
    }
}
