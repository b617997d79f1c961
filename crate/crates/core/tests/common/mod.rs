//! Oracles shared by the integration tests and the acceptance harness.
#![allow(dead_code)]

use challenger::metrics::ConfusionMatrix;
use challenger::nn::{Mlp, Target};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rand::Rng;

/// Per-class and macro precision, recall and F1 in exact arithmetic, straight
/// from the definitions; 0/0 counts as zero.
pub fn exact_macro(counts: &[Vec<u64>]) -> [f64; 3] {
    let k = counts.len();
    let q = |n: u64, d: u64| {
        if d == 0 {
            BigRational::zero()
        } else {
            BigRational::new(BigInt::from(n), BigInt::from(d))
        }
    };
    let mut sums = [BigRational::zero(), BigRational::zero(), BigRational::zero()];
    for c in 0..k {
        let tp = counts[c][c];
        let fp: u64 = (0..k).filter(|&r| r != c).map(|r| counts[r][c]).sum();
        let fn_: u64 = (0..k).filter(|&j| j != c).map(|j| counts[c][j]).sum();
        let p = q(tp, tp + fp);
        let r = q(tp, tp + fn_);
        // F1 = 2TP / (2TP + FP + FN), equal to the harmonic mean when defined
        let f = q(2 * tp, 2 * tp + fp + fn_);
        sums[0] += p;
        sums[1] += r;
        sums[2] += f;
    }
    let n = BigRational::from_integer(BigInt::from(k));
    sums.map(|s| (s / &n).to_f64().expect("finite"))
}

pub fn random_confusion<R: Rng>(rng: &mut R, k: usize) -> ConfusionMatrix {
    // sparse and dense matrices both, so empty rows and columns show up
    let max = *[0u64, 1, 3, 50, 1000].get(rng.gen_range(0..5)).unwrap();
    let counts = (0..k)
        .map(|_| {
            (0..k)
                .map(|_| {
                    if max == 0 || rng.gen_bool(0.3) {
                        0
                    } else {
                        rng.gen_range(0..=max)
                    }
                })
                .collect()
        })
        .collect();
    ConfusionMatrix {
        classes: (0..k).map(|i| format!("c{i}")).collect(),
        counts,
    }
}

/// Worst elementwise relative error between the analytic gradient and
/// central differences of the eval-mode loss.
pub fn gradient_error(m: &Mlp<f64>, batch: &[(&[f64], &Target)]) -> f64 {
    let (_, grad) = m.loss_and_gradient::<rand_chacha::ChaCha8Rng>(batch, None);
    let analytic: Vec<f64> = grad.slices().iter().flat_map(|s| s.iter().copied()).collect();
    let h = 1e-6;
    let mut probe = m.clone();
    let mut worst: f64 = 0.0;
    let mut idx = 0;
    for part in 0..4 {
        for i in 0..m.params()[part].len() {
            let orig = probe.params()[part][i];
            probe.params_mut()[part][i] = orig + h;
            let up = probe.loss(batch);
            probe.params_mut()[part][i] = orig - h;
            let down = probe.loss(batch);
            probe.params_mut()[part][i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[idx];
            idx += 1;
            let scale = a.abs().max(numeric.abs());
            let err = if scale < 1e-7 {
                (a - numeric).abs()
            } else {
                (a - numeric).abs() / scale
            };
            worst = worst.max(err);
        }
    }
    worst
}

/// Central 95% interval of a Binomial(n, p) proportion: the 2.5% and 97.5%
/// quantiles of the count, divided by n.
pub fn binomial_band(n: usize, p: f64) -> (f64, f64) {
    let mut pmf = vec![0.0f64; n + 1];
    for (k, slot) in pmf.iter_mut().enumerate() {
        let ln_choose: f64 = (1..=k).map(|i| ((n - k + i) as f64 / i as f64).ln()).sum();
        *slot = (ln_choose + k as f64 * p.ln() + (n - k) as f64 * (1.0 - p).ln()).exp();
    }
    let mut cdf = 0.0;
    let (mut lo, mut hi) = (None, None);
    for (k, mass) in pmf.iter().enumerate() {
        cdf += mass;
        if lo.is_none() && cdf >= 0.025 {
            lo = Some(k);
        }
        if hi.is_none() && cdf >= 0.975 {
            hi = Some(k);
        }
    }
    (lo.unwrap() as f64 / n as f64, hi.unwrap_or(n) as f64 / n as f64)
}

/// Dimensions drawn for one shape case.
#[derive(Clone, Copy, Debug)]
pub struct Shape {
    pub frames: usize,
    pub frame_dim: usize,
    pub caption_dim: usize,
    pub hidden_dim: usize,
    pub n_c: usize,
    pub m_u: usize,
}

impl Shape {
    pub fn random<R: Rng>(rng: &mut R) -> Self {
        Shape {
            frames: rng.gen_range(1..=6),
            frame_dim: rng.gen_range(1..=8),
            caption_dim: rng.gen_range(1..=8),
            hidden_dim: rng.gen_range(1..=8),
            n_c: rng.gen_range(1..=5),
            m_u: rng.gen_range(1..=5),
        }
    }
}

/// Small corpus for the shape suite: every user has untagged videos and every
/// challenge has participants.
pub fn shape_corpus(dir: &std::path::Path) -> challenger::corpus::Corpus {
    let cfg = challenger::corpus::SyntheticConfig {
        challenges: 2,
        users: 4,
        videos_per_user: 3,
        videos_per_challenge: 3,
        frames_per_video: 3,
        frame_size: 8,
        seed: 5,
        ..Default::default()
    };
    challenger::corpus::generate_synthetic_corpus(&cfg, dir).unwrap().corpus
}

/// Runs the encode, proxy, representation and participation steps at `shape`
/// and lists every width that differs from its contract.
pub fn shape_violations(
    corpus: &challenger::corpus::Corpus,
    work: &std::path::Path,
    shape: Shape,
    seed: u64,
) -> Vec<String> {
    use challenger::encoding::{encode_corpus, EncodeConfig, PreprocessConfig, ToyCaptionBackend, ToyVisualBackend};
    use challenger::features::{FeatureSource, Modality};
    use challenger::participation::{
        baseline_user_features, build_pairs, pair_input, train_participation, ParticipationConfig,
    };
    use challenger::proxy::{extract_learned_embeddings, train_proxy, ProxyLabels, ProxyTask};
    use challenger::representations::{build_representations, RepresentationConfig};
    use challenger::store::{EmbeddingStore, Provenance};
    use challenger::train::TrainConfig;

    let mut bad = Vec::new();
    let mut expect = |what: &str, got: usize, want: usize| {
        if got != want {
            bad.push(format!("{what}: {got} != {want} at {shape:?}"));
        }
    };
    let visual = ToyVisualBackend::new("shape-v", seed, 2, shape.frame_dim);
    let caption = ToyCaptionBackend::new("shape-t", seed, shape.caption_dim, 16);
    let enc = EncodeConfig {
        frames: shape.frames,
        preprocess: PreprocessConfig {
            image_size: 8,
            ..Default::default()
        },
        ..Default::default()
    };
    let _ = std::fs::remove_dir_all(work);
    let mut raw = EmbeddingStore::create_fresh(&work.join("raw")).unwrap();
    encode_corpus(corpus, &visual, &caption, &enc, &mut raw).unwrap();
    let raw_dim = shape.frames * shape.frame_dim + shape.caption_dim;
    for key in raw.keys() {
        expect("raw embedding", raw.get(key).unwrap().len(), raw_dim);
    }

    let train = TrainConfig {
        max_epochs: 1,
        hidden_dim: shape.hidden_dim,
        validation_fraction: 0.0,
        seed,
        ..Default::default()
    };
    let mut learned = Vec::new();
    for (task, labels) in [
        (ProxyTask::Challenge, ProxyLabels::challenges(corpus)),
        (ProxyTask::User, ProxyLabels::users(corpus)),
    ] {
        let source = FeatureSource::new(&raw, Modality::VisualText);
        let ids = labels.ids();
        let (head, _) = train_proxy::<f32>(&source, &labels, &ids, task, &train, "shape").unwrap();
        expect("proxy input", head.input_dim(), raw_dim);
        expect("proxy output", head.num_classes(), labels.classes.len());
        let mut store = EmbeddingStore::create_fresh(&work.join(task.name())).unwrap();
        for e in extract_learned_embeddings(&head, &source, &ids).unwrap() {
            expect("learned embedding", e.vector.len(), shape.hidden_dim);
            store.append(&e.video_id, &e.vector, Provenance::new()).unwrap();
        }
        learned.push(store);
    }

    let rc = RepresentationConfig {
        n_c: shape.n_c,
        m_u: shape.m_u,
        ..Default::default()
    };
    let set = build_representations(corpus, &learned[0], &learned[1], &rc, seed).unwrap();
    for c in &set.challenges {
        expect("challenge representation", c.vector.len(), shape.n_c * shape.hidden_dim);
    }
    for u in &set.users {
        expect("user representation", u.vector.len(), shape.m_u * shape.hidden_dim);
    }

    let pairs = build_pairs(corpus, corpus.challenge_labels()).unwrap();
    let refs: Vec<_> = pairs.iter().collect();
    let pc = ParticipationConfig {
        train: train.clone(),
        ..Default::default()
    };
    let (model, _) = train_participation::<f32>(&refs, &set, &pc, "shape").unwrap();
    let pair_dim = (shape.n_c + shape.m_u) * shape.hidden_dim;
    expect("participation input", model.input_dim(), pair_dim);
    let x = pair_input::<f32>(&set, &pairs[0].user_id, &pairs[0].challenge_tag).unwrap();
    expect("pair input", x.len(), pair_dim);

    for (modality, width) in [
        (Modality::Visual, shape.frames * shape.frame_dim),
        (Modality::VisualText, raw_dim),
    ] {
        let source = FeatureSource::new(&raw, modality);
        for v in baseline_user_features(corpus, &source, shape.m_u, &rc.recency)
            .unwrap()
            .values()
        {
            expect("baseline input", v.len(), shape.m_u * width);
        }
    }
    bad
}

/// The small planted corpus: 3 challenges, 12 users with 8 videos each, 20
/// videos per challenge.
pub fn small_corpus(signal: f64, flip: f64) -> challenger::corpus::SyntheticConfig {
    challenger::corpus::SyntheticConfig {
        challenges: 3,
        users: 12,
        videos_per_user: 8,
        videos_per_challenge: 20,
        signal_strength: signal,
        flip_rate: flip,
        seed: 11,
        ..Default::default()
    }
}

/// A run under `dir` with its synthetic corpus already written.
pub fn synth_run(
    dir: &std::path::Path,
    synthetic: challenger::corpus::SyntheticConfig,
    seed: u64,
) -> challenger::pipeline::Run {
    let mut cfg = challenger::config::RunConfig {
        seed,
        synthetic,
        ..Default::default()
    };
    cfg.paths.out_dir = dir.to_path_buf();
    let run = challenger::pipeline::Run::new(cfg).unwrap();
    run.synth().unwrap();
    run
}

/// Multinomial logistic regression fitted by full-batch gradient descent on
/// standardized inputs; returns held-out predictions.
pub fn logistic_oracle(train: &[(Vec<f32>, usize)], test: &[Vec<f32>], classes: usize) -> Vec<usize> {
    let d = train[0].0.len();
    let n = train.len() as f64;
    let mean: Vec<f64> = (0..d)
        .map(|j| train.iter().map(|(x, _)| x[j] as f64).sum::<f64>() / n)
        .collect();
    let sd: Vec<f64> = (0..d)
        .map(|j| {
            let v = train.iter().map(|(x, _)| (x[j] as f64 - mean[j]).powi(2)).sum::<f64>() / n;
            v.sqrt().max(1e-6)
        })
        .collect();
    let z = |x: &[f32]| -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(j, &v)| (v as f64 - mean[j]) / sd[j])
            .collect()
    };
    let xs: Vec<Vec<f64>> = train.iter().map(|(x, _)| z(x)).collect();
    let mut w = vec![vec![0.0f64; d + 1]; classes];
    let scores = |w: &[Vec<f64>], x: &[f64]| -> Vec<f64> {
        w.iter()
            .map(|row| row[d] + row[..d].iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    };
    for _ in 0..300 {
        let mut g = vec![vec![0.0f64; d + 1]; classes];
        for (x, (_, y)) in xs.iter().zip(train) {
            let s = scores(&w, x);
            let max = s.iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = s.iter().map(|v| (v - max).exp()).collect();
            let total: f64 = e.iter().sum();
            for c in 0..classes {
                let delta = e[c] / total - if c == *y { 1.0 } else { 0.0 };
                for j in 0..d {
                    g[c][j] += delta * x[j];
                }
                g[c][d] += delta;
            }
        }
        for c in 0..classes {
            for j in 0..=d {
                // small ridge keeps the separable case bounded
                w[c][j] -= 0.5 * (g[c][j] / n + 1e-3 * w[c][j]);
            }
        }
    }
    test.iter()
        .map(|x| {
            let s = scores(&w, &z(x));
            (0..classes).fold(0, |best, c| if s[c] > s[best] { c } else { best })
        })
        .collect()
}

/// 2.5% and 97.5% quantiles of `stat(truth shuffled, predicted)` over random
/// shuffles: the range expected when predictions carry no information.
pub fn permutation_band<L: Clone>(
    truth: &[L],
    predicted: &[L],
    stat: impl Fn(&[L], &[L]) -> f64,
    seed: u64,
) -> (f64, f64) {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut t = truth.to_vec();
    let mut values: Vec<f64> = (0..2000)
        .map(|_| {
            t.shuffle(&mut rng);
            stat(&t, predicted)
        })
        .collect();
    values.sort_by(f64::total_cmp);
    (values[50], values[1949])
}

pub fn accuracy<L: PartialEq>(truth: &[L], predicted: &[L]) -> f64 {
    truth.iter().zip(predicted).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64
}

fn batch(rng: &mut rand_chacha::ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect()
}

/// Worst gradient error over 20 seeded initializations, each checked on a
/// batch of 5 random inputs.
pub fn worst_over_inits(
    kind: challenger::nn::OutputKind,
    input: usize,
    hidden: usize,
    out: usize,
    target: impl Fn(&mut rand_chacha::ChaCha8Rng) -> Target,
) -> f64 {
    (0..20u64)
        .map(|seed| {
            let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
            let m: Mlp<f64> = Mlp::new(input, hidden, out, kind, 0.0, &mut rng);
            let xs = batch(&mut rng, 5, input);
            let ts: Vec<Target> = (0..5).map(|_| target(&mut rng)).collect();
            let b: Vec<(&[f64], &Target)> = xs.iter().map(|x| x.as_slice()).zip(&ts).collect();
            gradient_error(&m, &b)
        })
        .fold(0.0, f64::max)
}
