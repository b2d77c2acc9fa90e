mod common;

use common::*;
use essence_kd::data::{augment, synth_generate, Split, SynthConfig};
use essence_kd::distill::{entropy, DistillationConfig};
use essence_kd::fusion::{grid_search_on_logits, EnsembleLogits, FusionWeights};
use essence_kd::nn::{argmax, Activation, Context, Matrix, NetworkSpec, ParameterSet};
use essence_kd::pipeline::{
    dump_soft_labels, evaluate, run_experiment, train_model, train_student, TrainConfig,
    BASELINE_TAG, STUDENT_TAG, TEACHER_TAG,
};
use essence_kd::{Error, Model};
use rand::Rng;

fn bits(m: &Model) -> Vec<u64> {
    m.params.values().map(|v| v.to_bits()).collect()
}

#[test]
fn lambda_one_student_is_bit_identical_to_baseline() {
    let cfg = tiny_config();
    let corpus = cfg.corpus(3).unwrap();
    let train = cfg.augmented_train(&corpus).unwrap();
    let teachers: Vec<Model> = cfg
        .teacher_specs()
        .unwrap()
        .iter()
        .map(|s| train_model(s, &train, &cfg.train, 11).unwrap().model)
        .collect();
    let cache = dump_soft_labels(&teachers, &FusionWeights::uniform(2).unwrap(), &train, 3, 1.0).unwrap();
    let spec = cfg.student_spec().unwrap();
    let baseline = train_model(&spec, &train, &cfg.train, 5).unwrap();
    let dcfg = DistillationConfig {
        lambda: 1.0,
        k: 3,
        temperature: 1.0,
    };
    let student = train_student(&spec, &train, &cache, &dcfg, &cfg.train, 5).unwrap();
    assert_eq!(bits(&student.model), bits(&baseline.model));
    let mixed = train_student(&spec, &train, &cache, &DistillationConfig { lambda: 0.5, ..dcfg }, &cfg.train, 5).unwrap();
    assert_ne!(bits(&mixed.model), bits(&baseline.model));
}

#[test]
fn zero_epochs_returns_the_initialisation() {
    let cfg = tiny_config();
    let corpus = cfg.corpus(1).unwrap();
    let spec = cfg.student_spec().unwrap();
    let hp = TrainConfig {
        epochs: 0,
        ..cfg.train.clone()
    };
    let trained = train_model(&spec, &corpus.train, &hp, 42).unwrap();
    assert!(trained.epoch_losses.is_empty());
    assert_eq!(trained.model.params, ParameterSet::init(&spec, &mut rng(42)));
}

#[test]
fn separable_data_is_learned() {
    let synth = SynthConfig {
        num_classes: 5,
        feature_dim: 6,
        group_size: 1,
        class_separation: 6.0,
        smoothing: 0.0,
        label_noise: 0.0,
        utterances_per_split: 10,
        ..SynthConfig::default()
    };
    let corpus = synth_generate(&synth).unwrap();
    let spec = NetworkSpec::mlp(6, Context::new(0, 0), &[16], Activation::Relu, 5).unwrap();
    let hp = TrainConfig {
        epochs: 10,
        ..TrainConfig::default()
    };
    let trained = train_model(&spec, &corpus.train, &hp, 1).unwrap();
    assert!(trained.epoch_losses.last() < trained.epoch_losses.first());
    let fer = evaluate(&trained.model, &corpus.test).unwrap();
    assert!(fer < 0.05, "FER {fer}");
}

#[test]
fn evaluate_matches_a_frame_by_frame_recount() {
    let cfg = tiny_config();
    let corpus = cfg.corpus(2).unwrap();
    let spec = cfg.teacher_specs().unwrap().remove(1);
    let model = Model::new(spec.clone(), ParameterSet::init(&spec, &mut rng(9))).unwrap();
    let x = corpus.test.spliced(spec.context);
    let labels = corpus.test.all_labels();
    let mut errors = 0;
    for (t, &l) in labels.iter().enumerate() {
        let z = naive_logits(&spec, &model.params, x.row(t));
        let best = (0..z.len()).fold(0, |b, i| if z[i] > z[b] { i } else { b });
        errors += (best != l as usize) as usize;
    }
    assert_eq!(evaluate(&model, &corpus.test).unwrap(), errors as f64 / labels.len() as f64);
}

#[test]
fn grid_search_agrees_with_exhaustive_reevaluation() {
    let mut r = rng(17);
    let (n, c) = (300, 6);
    let labels: Vec<u32> = (0..n).map(|_| r.random_range(0..c as u32)).collect();
    // member 0 is right on 70% of frames; member 1 and 2 are noise
    let mut good = random_matrix(&mut r, n, c, 1.0);
    for (t, &l) in labels.iter().enumerate() {
        if r.random::<f64>() < 0.7 {
            good.set(t, l as usize, 4.0);
        }
    }
    let members = vec![good, random_matrix(&mut r, n, c, 3.0), random_matrix(&mut r, n, c, 3.0)];
    let ensemble = EnsembleLogits::new(members.clone()).unwrap();
    let search = grid_search_on_logits(&ensemble, &labels, 0.1).unwrap();

    let mut best = usize::MAX;
    let mut evaluated = 0;
    for a in 0..=10 {
        for b in 0..=10 - a {
            let w = [a as f64 / 10.0, b as f64 / 10.0, (10 - a - b) as f64 / 10.0];
            let errors = (0..n)
                .filter(|&t| {
                    let z: Vec<f64> = (0..c)
                        .map(|j| (0..3).map(|k| w[k] * members[k].get(t, j)).sum())
                        .collect();
                    argmax(&z) != labels[t] as usize
                })
                .count();
            best = best.min(errors);
            evaluated += 1;
        }
    }
    assert_eq!(search.candidates.len(), evaluated);
    assert_eq!(search.error_rate, best as f64 / n as f64);
    let recount = (0..n)
        .filter(|&t| {
            let z: Vec<f64> = (0..c)
                .map(|j| (0..3).map(|k| search.weights.as_slice()[k] * members[k].get(t, j)).sum())
                .collect();
            argmax(&z) != labels[t] as usize
        })
        .count();
    assert_eq!(recount, best);
}

#[test]
fn perfect_member_wins_the_grid_search() {
    let mut r = rng(4);
    let (n, c) = (100, 4);
    let labels: Vec<u32> = (0..n).map(|_| r.random_range(0..c as u32)).collect();
    let mut perfect = Matrix::zeros(n, c);
    for (t, &l) in labels.iter().enumerate() {
        perfect.set(t, l as usize, 1.0);
    }
    let ensemble = EnsembleLogits::new(vec![random_matrix(&mut r, n, c, 10.0), perfect]).unwrap();
    let search = grid_search_on_logits(&ensemble, &labels, 0.1).unwrap();
    assert_eq!(search.error_rate, 0.0);
    assert_eq!(search.weights.as_slice(), &[0.0, 1.0]);
}

#[test]
fn distillation_loss_is_bounded_by_teacher_entropy() {
    let cfg = tiny_config();
    let corpus = cfg.corpus(1).unwrap();
    let spec = cfg.student_spec().unwrap();
    let teacher = train_model(&spec, &corpus.train, &cfg.train, 8).unwrap().model;
    let c = spec.num_classes;
    let cache = dump_soft_labels(&[teacher], &FusionWeights::uniform(1).unwrap(), &corpus.train, c, 1.0).unwrap();
    let mean_entropy = cache
        .targets_for(&corpus.train)
        .unwrap()
        .iter()
        .map(entropy)
        .sum::<f64>()
        / corpus.train.num_frames() as f64;
    let dcfg = DistillationConfig {
        lambda: 0.0,
        k: c,
        temperature: 1.0,
    };
    let student = train_student(&spec, &corpus.train, &cache, &dcfg, &cfg.train, 3).unwrap();
    for loss in student.epoch_losses {
        assert!(loss >= mean_entropy, "{loss} < {mean_entropy}");
    }
}

#[test]
fn student_needs_a_label_for_every_frame() {
    let cfg = tiny_config();
    let corpus = cfg.corpus(1).unwrap();
    let spec = cfg.student_spec().unwrap();
    let teacher = Model::new(spec.clone(), ParameterSet::init(&spec, &mut rng(0))).unwrap();
    let w = FusionWeights::uniform(1).unwrap();
    let cache = dump_soft_labels(&[teacher], &w, &corpus.train, 2, 1.0).unwrap();
    let bigger = augment(&corpus.train, &[1.0, 1.1]).unwrap();
    let dcfg = DistillationConfig {
        lambda: 0.5,
        k: 2,
        temperature: 1.0,
    };
    match train_student(&spec, &bigger, &cache, &dcfg, &cfg.train, 0) {
        Err(Error::Data(msg)) => assert!(msg.contains("sp1.1-"), "{msg}"),
        other => panic!("{other:?}"),
    }
    let hot = DistillationConfig {
        temperature: 2.0,
        ..dcfg
    };
    assert!(matches!(
        train_student(&spec, &corpus.train, &cache, &hot, &cfg.train, 0),
        Err(Error::Config(_))
    ));
}

#[test]
fn experiment_table_has_every_cell_once() {
    let cfg = tiny_config();
    let out = run_experiment(&cfg).unwrap();
    let rows = &out.table.rows;
    for &seed in &cfg.seeds {
        for split in [Split::Heldout, Split::Test] {
            let cell = |model: &str, k: Option<usize>, lambda: Option<f64>| {
                rows.iter()
                    .filter(|r| r.seed == seed && r.split == split && r.model == model && r.k == k && r.lambda == lambda)
                    .count()
            };
            assert_eq!(cell(TEACHER_TAG, None, None), 1);
            assert_eq!(cell(BASELINE_TAG, None, None), 1);
            for t in &cfg.teachers {
                assert_eq!(cell(&t.name, None, None), 1);
            }
            for &k in &cfg.ks {
                for &l in &cfg.lambdas {
                    assert_eq!(cell(STUDENT_TAG, Some(k), Some(l)), 1);
                }
            }
        }
    }
    let per_seed = 2 * (cfg.teachers.len() + 2 + cfg.ks.len() * cfg.lambdas.len());
    assert_eq!(rows.len(), per_seed * cfg.seeds.len());
    assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.frame_error_rate)));

    // the λ = 1 students reproduce the baseline for every k
    for r in rows.iter().filter(|r| r.lambda == Some(1.0)) {
        let base = rows
            .iter()
            .find(|b| b.model == BASELINE_TAG && b.seed == r.seed && b.split == r.split)
            .unwrap();
        assert_eq!(r.frame_error_rate, base.frame_error_rate);
    }

    let curve = &out.topk_curve;
    assert_eq!(curve.len(), cfg.synth.num_classes);
    assert!(curve.windows(2).all(|w| w[1].1 >= w[0].1));
    assert!((curve.last().unwrap().1 - 1.0).abs() < 1e-12);

    let again = run_experiment(&cfg).unwrap();
    assert_eq!(again.table.to_csv(), out.table.to_csv());
}

#[test]
fn original_audio_labels_are_transferred() {
    let mut cfg = tiny_config();
    cfg.seeds = vec![5];
    cfg.soft_label_source = essence_kd::pipeline::SoftLabelSource::Original;
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(out.table.rows.len(), 2 * (cfg.teachers.len() + 2 + cfg.ks.len() * cfg.lambdas.len()));
}

#[test]
fn stage_errors_name_the_failing_stage() {
    let mut cfg = tiny_config();
    cfg.seeds = vec![1];
    cfg.train.lr_initial = 1e200;
    cfg.train.lr_final = 1e200;
    let err = run_experiment(&cfg).unwrap_err();
    let msg = err.to_string();
    assert!(msg.starts_with("seed 1: train sub-model deep"), "{msg}");
    assert!(matches!(err.root(), Error::Training { .. }), "{err:?}");
}
