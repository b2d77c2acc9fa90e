#![allow(dead_code)]

use std::path::PathBuf;

use essence_kd::data::SynthConfig;
use essence_kd::distill::{combined_loss_grad_logits, essence_select, renormalize, SparseSoftLabel};
use essence_kd::nn::{backward, forward, softmax_rows, Activation, Context, Matrix, NetworkSpec, ParameterSet};
use essence_kd::pipeline::{
    CacheHeader, CacheRecord, ExperimentConfig, FusionConfig, ModelConfig, SoftLabelCache, TrainConfig,
};
use essence_kd::Model;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A point drawn uniformly from the probability simplex.
pub fn random_simplex(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| scale * (2.0 * rng.random::<f64>() - 1.0)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Plain loop forward pass, written without the library's matrix kernels.
pub fn naive_logits(spec: &NetworkSpec, params: &ParameterSet, x: &[f64]) -> Vec<f64> {
    let mut a = x.to_vec();
    for (l, p) in spec.layers.iter().zip(&params.layers) {
        let mut next = vec![0.0; l.output_dim];
        for (j, out) in next.iter_mut().enumerate() {
            let mut z = p.biases[j];
            for (i, xi) in a.iter().enumerate() {
                z += p.weights.get(j, i) * xi;
            }
            *out = match l.activation {
                Activation::Relu => z.max(0.0),
                Activation::Tanh => z.tanh(),
                Activation::Identity => z,
            };
        }
        a = next;
    }
    a
}

pub fn naive_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Mean over rows of `λ·(−ln v_c) + (1 − λ)·(−Σ q_i ln v_i)`.
pub fn naive_batch_loss(
    spec: &NetworkSpec,
    params: &ParameterSet,
    x: &Matrix,
    labels: &[usize],
    targets: &[Vec<f64>],
    lambda: f64,
) -> f64 {
    let mut total = 0.0;
    for r in 0..x.rows() {
        let v = naive_softmax(&naive_logits(spec, params, x.row(r)));
        let ce = -v[labels[r]].ln();
        let kd: f64 = targets[r]
            .iter()
            .zip(&v)
            .filter(|(q, _)| **q > 0.0)
            .map(|(q, vi)| -q * vi.ln())
            .sum();
        total += lambda * ce + (1.0 - lambda) * kd;
    }
    total / x.rows() as f64
}

/// Central finite differences of `f` around every parameter.
pub fn fd_gradient(params: &ParameterSet, h: f64, f: impl Fn(&ParameterSet) -> f64) -> Vec<f64> {
    let n = params.len();
    let mut out = Vec::with_capacity(n);
    let mut p = params.clone();
    for i in 0..n {
        let orig = *p.values().nth(i).unwrap();
        *p.values_mut().nth(i).unwrap() = orig + h;
        let up = f(&p);
        *p.values_mut().nth(i).unwrap() = orig - h;
        let down = f(&p);
        *p.values_mut().nth(i).unwrap() = orig;
        out.push((up - down) / (2.0 * h));
    }
    out
}

/// `|a − n| / max(|a|, |n|, floor)`, maximised over coordinates.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// A corpus and model set small enough for a full run in well under a second.
pub fn tiny_config() -> ExperimentConfig {
    ExperimentConfig {
        seeds: vec![1, 2],
        ks: vec![1, 3, 8],
        lambdas: vec![0.5, 1.0],
        synth: SynthConfig {
            num_classes: 8,
            feature_dim: 4,
            utterances_per_split: 4,
            mean_utterance_length: 24,
            group_size: 2,
            ..SynthConfig::default()
        },
        train: TrainConfig {
            epochs: 2,
            batch_size: 16,
            ..TrainConfig::default()
        },
        fusion: FusionConfig::Fixed {
            weights: vec![0.5, 0.5],
        },
        teachers: vec![
            ModelConfig {
                name: "deep".into(),
                context: Context::new(1, 1),
                hidden: vec![12, 12],
                activation: Activation::Relu,
            },
            ModelConfig {
                name: "wide".into(),
                context: Context::new(2, 1),
                hidden: vec![16],
                activation: Activation::Tanh,
            },
        ],
        student: ModelConfig {
            name: "student".into(),
            context: Context::new(1, 1),
            hidden: vec![8],
            activation: Activation::Relu,
        },
        ..ExperimentConfig::default()
    }
}

pub struct GradCase {
    pub spec: NetworkSpec,
    pub params: ParameterSet,
    pub x: Matrix,
    pub labels: Vec<usize>,
    pub targets: Vec<Vec<f64>>,
    pub lambda: f64,
}

pub fn random_grad_case(seed: u64, activations: &[Activation]) -> GradCase {
    let mut r = rng(seed);
    let feature_dim = r.random_range(1..4);
    let context = Context::new(r.random_range(0..2), r.random_range(0..2));
    let classes = r.random_range(2..9);
    let hidden: Vec<usize> = (0..r.random_range(0..3)).map(|_| r.random_range(2..7)).collect();
    let act = activations[r.random_range(0..activations.len())];
    let spec = NetworkSpec::mlp(feature_dim, context, &hidden, act, classes).unwrap();
    let mut params = ParameterSet::init(&spec, &mut r);
    for b in params.layers.iter_mut().flat_map(|l| l.biases.iter_mut()) {
        *b = 0.3 * (2.0 * r.random::<f64>() - 1.0);
    }
    let batch = r.random_range(1..5);
    let x = random_matrix(&mut r, batch, spec.input_dim(), 1.5);
    let k = r.random_range(1..=classes);
    let labels = (0..batch).map(|_| r.random_range(0..classes)).collect();
    let targets = (0..batch)
        .map(|_| {
            let q = random_simplex(&mut r, classes);
            renormalize(&essence_select(&q, k).unwrap()).unwrap().to_dense(classes).unwrap()
        })
        .collect();
    GradCase {
        spec,
        params,
        x,
        labels,
        targets,
        lambda: r.random::<f64>(),
    }
}

pub fn analytic_gradient(c: &GradCase) -> Vec<f64> {
    let (logits, cache) = forward(&c.spec, &c.params, &c.x).unwrap();
    let v = softmax_rows(&logits, 1.0).unwrap();
    let b = c.x.rows() as f64;
    let mut d = Matrix::zeros(c.x.rows(), c.spec.num_classes);
    for r in 0..c.x.rows() {
        let g = combined_loss_grad_logits(v.row(r), c.labels[r], &c.targets[r], c.lambda).unwrap();
        for (o, gi) in d.row_mut(r).iter_mut().zip(g) {
            *o = gi / b;
        }
    }
    backward(&c.spec, &c.params, &cache, &d).unwrap().values().copied().collect()
}

/// Largest relative deviation between backprop and central differences.
pub fn fd_check(c: &GradCase) -> f64 {
    let numeric = fd_gradient(&c.params, 1e-5, |p| {
        naive_batch_loss(&c.spec, p, &c.x, &c.labels, &c.targets, c.lambda)
    });
    max_rel_err(&analytic_gradient(c), &numeric, 1e-6)
}

pub const GOLDEN_PARAMS: [f64; 15] = [
    0.5, -1.25, 2.0, 0.125, 0.0, -0.75, 1.5, -2.5, 0.25, 3.0, -0.0625, 1.0, 0.1, -0.2, 0.3,
];

pub fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

pub fn golden_model() -> Model {
    let spec = NetworkSpec::mlp(2, Context::new(0, 0), &[2], Activation::Tanh, 3).unwrap();
    let mut params = ParameterSet::zeros(&spec);
    for (p, v) in params.values_mut().zip(GOLDEN_PARAMS) {
        *p = v;
    }
    Model::new(spec, params).unwrap()
}

pub fn golden_cache() -> SoftLabelCache {
    let header = CacheHeader {
        num_classes: 4,
        k: 2,
        temperature: 1.0,
        teacher_fingerprint: "00112233445566778899aabbccddeeff".into(),
        fusion_weights: vec![0.25, 0.75],
    };
    let rec = |utt: &str, t: u32, e: Vec<(u32, f64)>| CacheRecord {
        utt_id: utt.into(),
        frame_index: t,
        label: SparseSoftLabel::from_entries(2, e),
    };
    SoftLabelCache::new(
        header,
        vec![
            rec("u1", 0, vec![(2, 0.5), (0, 0.25)]),
            rec("u1", 1, vec![(1, 0.75), (3, 0.125)]),
            rec("u2", 0, vec![(3, 0.625), (2, 0.375)]),
        ],
    )
    .unwrap()
}

/// Payload bytes of a container file: after the two header lines, before
/// the digest.
pub fn payload(bytes: &[u8]) -> &[u8] {
    let mut lines = 0;
    let start = bytes
        .iter()
        .position(|&b| {
            lines += (b == b'\n') as usize;
            lines == 2
        })
        .unwrap()
        + 1;
    &bytes[start..bytes.len() - 32]
}
