//! Two-layer feed-forward head: affine, ReLU, dropout, affine, then softmax
//! (single-label) or element-wise sigmoid (binary and multi-label).

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    Softmax,
    Sigmoid,
}

/// Supervision for one example.
#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    /// Class index for a softmax head.
    Class(usize),
    /// One entry per sigmoid output; `None` entries are masked out of the loss.
    Labels(Vec<Option<bool>>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp<T> {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub output: OutputKind,
    pub dropout: f64,
    /// `hidden_dim x input_dim`, row-major.
    pub w1: Vec<T>,
    pub b1: Vec<T>,
    /// `output_dim x hidden_dim`, row-major.
    pub w2: Vec<T>,
    pub b2: Vec<T>,
}

/// Gradient with the same layout as the head's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient<T> {
    pub w1: Vec<T>,
    pub b1: Vec<T>,
    pub w2: Vec<T>,
    pub b2: Vec<T>,
}

impl<T: Scalar> Gradient<T> {
    fn zeros_like(m: &Mlp<T>) -> Self {
        Gradient {
            w1: vec![T::zero(); m.w1.len()],
            b1: vec![T::zero(); m.b1.len()],
            w2: vec![T::zero(); m.w2.len()],
            b2: vec![T::zero(); m.b2.len()],
        }
    }

    pub fn slices(&self) -> [&[T]; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }
}

fn matvec<T: Scalar>(w: &[T], b: &[T], x: &[T]) -> Vec<T> {
    w.chunks_exact(x.len())
        .zip(b)
        .map(|(row, &bias)| row.iter().zip(x).fold(bias, |acc, (&wi, &xi)| acc + wi * xi))
        .collect()
}

pub fn softmax<T: Scalar>(z: &[T]) -> Vec<T> {
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let exp: Vec<T> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: T = exp.iter().copied().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// `-log sigmoid(z)` without overflow.
fn softplus_neg<T: Scalar>(z: T) -> T {
    // -log(sigmoid(z)) = log(1 + exp(-z))
    if z >= T::zero() {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

impl<T: Scalar> Mlp<T> {
    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng>(
        input_dim: usize,
        hidden_dim: usize,
        output_dim: usize,
        output: OutputKind,
        dropout: f64,
        rng: &mut R,
    ) -> Self {
        assert!(input_dim > 0 && hidden_dim > 0 && output_dim > 0);
        let mut init = |fan_in: usize, fan_out: usize| -> Vec<T> {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit);
            (0..fan_in * fan_out).map(|_| T::of(dist.sample(rng))).collect()
        };
        let w1 = init(input_dim, hidden_dim);
        let w2 = init(hidden_dim, output_dim);
        Mlp {
            input_dim,
            hidden_dim,
            output_dim,
            output,
            dropout,
            w1,
            b1: vec![T::zero(); hidden_dim],
            w2,
            b2: vec![T::zero(); output_dim],
        }
    }

    /// Hidden activation with dropout disabled: the learned embedding.
    pub fn hidden(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.input_dim, "input width");
        matvec(&self.w1, &self.b1, x)
            .into_iter()
            .map(|v| v.max(T::zero()))
            .collect()
    }

    pub fn logits(&self, x: &[T]) -> Vec<T> {
        matvec(&self.w2, &self.b2, &self.hidden(x))
    }

    /// Output probabilities in eval mode.
    pub fn predict(&self, x: &[T]) -> Vec<T> {
        let z = self.logits(x);
        match self.output {
            OutputKind::Softmax => softmax(&z),
            OutputKind::Sigmoid => z.into_iter().map(sigmoid).collect(),
        }
    }

    /// Loss of one example given its logits, and d(loss)/d(logits).
    fn example_loss(&self, z: &[T], target: &Target) -> (T, Vec<T>, usize) {
        match (self.output, target) {
            (OutputKind::Softmax, Target::Class(c)) => {
                let p = softmax(z);
                let max = z.iter().copied().fold(T::neg_infinity(), T::max);
                let lse = max + z.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
                let mut dz = p;
                dz[*c] -= T::one();
                (lse - z[*c], dz, 1)
            }
            (OutputKind::Sigmoid, Target::Labels(labels)) => {
                assert_eq!(labels.len(), z.len(), "label width");
                let mut loss = T::zero();
                let mut dz = vec![T::zero(); z.len()];
                let mut observed = 0;
                for (j, label) in labels.iter().enumerate() {
                    if let Some(y) = label {
                        observed += 1;
                        let p = sigmoid(z[j]);
                        if *y {
                            loss += softplus_neg(z[j]);
                            dz[j] = p - T::one();
                        } else {
                            loss += softplus_neg(-z[j]);
                            dz[j] = p;
                        }
                    }
                }
                (loss, dz, observed)
            }
            (kind, t) => panic!("target {t:?} does not fit a {kind:?} head"),
        }
    }

    /// Mean loss over the batch and its gradient. Softmax heads average over
    /// examples, sigmoid heads over observed labels. Dropout is applied only
    /// when `rng` is given.
    pub fn loss_and_gradient<R: Rng>(&self, batch: &[(&[T], &Target)], rng: Option<&mut R>) -> (T, Gradient<T>) {
        self.weighted_loss_and_gradient(batch, None, rng)
    }

    /// As [`Mlp::loss_and_gradient`], with per-example weights in the mean.
    pub fn weighted_loss_and_gradient<R: Rng>(
        &self,
        batch: &[(&[T], &Target)],
        weights: Option<&[T]>,
        mut rng: Option<&mut R>,
    ) -> (T, Gradient<T>) {
        let mut grad = Gradient::zeros_like(self);
        let mut total = T::zero();
        let mut count = T::zero();
        let keep = 1.0 - self.dropout;
        let scale = T::of(1.0 / keep);

        for (i, (x, target)) in batch.iter().enumerate() {
            let w = weights.map_or(T::one(), |ws| ws[i]);
            assert_eq!(x.len(), self.input_dim, "input width");
            let pre = matvec(&self.w1, &self.b1, x);
            let mut h: Vec<T> = pre.iter().map(|v| v.max(T::zero())).collect();
            // inverted dropout: surviving units are scaled by 1 / keep
            let mask: Option<Vec<T>> = match rng.as_deref_mut() {
                Some(r) if self.dropout > 0.0 => Some(
                    (0..self.hidden_dim)
                        .map(|_| if r.gen_bool(keep) { scale } else { T::zero() })
                        .collect(),
                ),
                _ => None,
            };
            if let Some(m) = &mask {
                h.iter_mut().zip(m).for_each(|(hv, &mv)| *hv *= mv);
            }
            let z = matvec(&self.w2, &self.b2, &h);
            let (loss, mut dz, n) = self.example_loss(&z, target);
            total += w * loss;
            count += w * T::of(n as f64);
            dz.iter_mut().for_each(|d| *d *= w);

            let mut dh = vec![T::zero(); self.hidden_dim];
            for (o, &dzo) in dz.iter().enumerate() {
                if dzo == T::zero() {
                    continue;
                }
                grad.b2[o] += dzo;
                let row = &self.w2[o * self.hidden_dim..(o + 1) * self.hidden_dim];
                let grow = &mut grad.w2[o * self.hidden_dim..(o + 1) * self.hidden_dim];
                for k in 0..self.hidden_dim {
                    grow[k] += dzo * h[k];
                    dh[k] += dzo * row[k];
                }
            }
            for k in 0..self.hidden_dim {
                let mut d = if pre[k] > T::zero() { dh[k] } else { T::zero() };
                if let Some(m) = &mask {
                    d *= m[k];
                }
                if d == T::zero() {
                    continue;
                }
                grad.b1[k] += d;
                let grow = &mut grad.w1[k * self.input_dim..(k + 1) * self.input_dim];
                for (g, &xi) in grow.iter_mut().zip(x.iter()) {
                    *g += d * xi;
                }
            }
        }

        let denom = if count > T::zero() { count } else { T::one() };
        for part in [&mut grad.w1, &mut grad.b1, &mut grad.w2, &mut grad.b2] {
            part.iter_mut().for_each(|g| *g /= denom);
        }
        (total / denom, grad)
    }

    /// Mean loss in eval mode.
    pub fn loss(&self, batch: &[(&[T], &Target)]) -> T {
        self.loss_and_gradient::<rand_chacha::ChaCha8Rng>(batch, None).0
    }

    pub fn params_mut(&mut self) -> [&mut Vec<T>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn params(&self) -> [&Vec<T>; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|p| p.iter().all(|v| v.is_finite()))
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub learning_rate: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
    step: i32,
    m: [Vec<T>; 4],
    v: [Vec<T>; 4],
}

impl<T: Scalar> Adam<T> {
    pub fn new(model: &Mlp<T>, learning_rate: f64) -> Self {
        let zeros = |m: &Mlp<T>| m.params().map(|p| vec![T::zero(); p.len()]);
        Adam {
            learning_rate: T::of(learning_rate),
            beta1: T::of(0.9),
            beta2: T::of(0.999),
            epsilon: T::of(1e-8),
            step: 0,
            m: zeros(model),
            v: zeros(model),
        }
    }

    pub fn update(&mut self, model: &mut Mlp<T>, grad: &Gradient<T>) {
        self.step += 1;
        let c1 = T::one() - self.beta1.powi(self.step);
        let c2 = T::one() - self.beta2.powi(self.step);
        for (i, (param, g)) in model.params_mut().into_iter().zip(grad.slices()).enumerate() {
            for (j, p) in param.iter_mut().enumerate() {
                let m = &mut self.m[i][j];
                let v = &mut self.v[i][j];
                *m = self.beta1 * *m + (T::one() - self.beta1) * g[j];
                *v = self.beta2 * *v + (T::one() - self.beta2) * g[j] * g[j];
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}
