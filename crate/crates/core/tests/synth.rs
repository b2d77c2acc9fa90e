use essence_kd::data::{synth_generate, SynthConfig};

/// Stationary distribution of the label chain by power iteration on a
/// transition matrix built from the generative description.
fn power_iteration_stationary(cfg: &SynthConfig) -> Vec<f64> {
    let c = cfg.num_classes;
    let w: Vec<f64> = (0..c).map(|i| 1.0 / ((i + 1) as f64).sqrt()).collect();
    let stay = 1.0 - 1.0 / cfg.mean_segment_length;
    let mut p = vec![1.0 / c as f64; c];
    for _ in 0..5000 {
        let mut next = vec![0.0; c];
        for (i, pi) in p.iter().enumerate() {
            let out: f64 = w.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, x)| x).sum();
            for (j, nj) in next.iter_mut().enumerate() {
                *nj += pi * if i == j { stay } else { (1.0 - stay) * w[j] / out };
            }
        }
        p = next;
    }
    p
}

#[test]
fn closed_form_stationary_matches_power_iteration() {
    let cfg = SynthConfig::default();
    for (a, b) in cfg.stationary_distribution().iter().zip(power_iteration_stationary(&cfg)) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn label_frequencies_follow_the_stationary_distribution() {
    let cfg = SynthConfig {
        utterances_per_split: 150,
        label_noise: 0.0,
        ..SynthConfig::default()
    };
    let corpus = synth_generate(&cfg).unwrap();
    let labels = corpus.train.all_labels();
    assert!(labels.len() >= 10_000, "{} frames", labels.len());
    let mut counts = vec![0usize; cfg.num_classes];
    for l in &labels {
        counts[*l as usize] += 1;
    }
    for (c, (n, p)) in counts.iter().zip(power_iteration_stationary(&cfg)).enumerate() {
        let freq = *n as f64 / labels.len() as f64;
        assert!((freq - p).abs() < 0.05, "class {c}: {freq} vs {p}");
    }
}

#[test]
fn nearest_mean_classifier_is_near_perfect_on_separated_classes() {
    let cfg = SynthConfig {
        num_classes: 6,
        group_size: 1,
        class_separation: 40.0,
        smoothing: 0.0,
        label_noise: 0.0,
        utterances_per_split: 10,
        ..SynthConfig::default()
    };
    let corpus = synth_generate(&cfg).unwrap();
    let d = cfg.feature_dim;
    let mut sums = vec![vec![0.0; d]; cfg.num_classes];
    let mut counts = vec![0usize; cfg.num_classes];
    for u in corpus.train.utterances() {
        for (t, &l) in u.labels.iter().enumerate() {
            for (s, x) in sums[l as usize].iter_mut().zip(u.frames.row(t)) {
                *s += x;
            }
            counts[l as usize] += 1;
        }
    }
    let means: Vec<Vec<f64>> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &n)| s.iter().map(|v| v / n.max(1) as f64).collect())
        .collect();
    let (mut errors, mut total) = (0, 0);
    for u in corpus.test.utterances() {
        for (t, &l) in u.labels.iter().enumerate() {
            let x = u.frames.row(t);
            let best = (0..cfg.num_classes)
                .filter(|&c| counts[c] > 0)
                .min_by(|&a, &b| {
                    let da: f64 = means[a].iter().zip(x).map(|(m, v)| (m - v).powi(2)).sum();
                    let db: f64 = means[b].iter().zip(x).map(|(m, v)| (m - v).powi(2)).sum();
                    da.total_cmp(&db)
                })
                .unwrap();
            errors += (best != l as usize) as usize;
            total += 1;
        }
    }
    assert!((errors as f64 / total as f64) < 0.01, "{errors}/{total}");
}
