//! Independent oracles for the model, influence and selection tests.
//!
//! Nothing here calls into the library's loss, gradient or curvature code:
//! every quantity is recomputed from its definition on dense matrices. Only
//! the fixture builders at the end use the library trainer to fit parameters.

#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use synsel::corpus::{Dataset, Example, FeatureVector, Split};
use synsel::model::{train, ModelParams, ParamVector, Samples, TrainConfig};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Dense view of a problem: row-major `k × d` weights.
pub struct Dense {
    pub k: usize,
    pub d: usize,
    pub lambda: f64,
}

impl Dense {
    pub fn of(params: &ModelParams) -> Self {
        Self {
            k: params.num_classes,
            d: params.num_features,
            lambda: params.damping,
        }
    }

    pub fn dim(&self) -> usize {
        self.k * self.d
    }

    fn logits(&self, theta: &[f64], x: &[f64]) -> Vec<f64> {
        (0..self.k)
            .map(|c| (0..self.d).map(|j| theta[c * self.d + j] * x[j]).sum())
            .collect()
    }

    fn probs(&self, theta: &[f64], x: &[f64]) -> Vec<f64> {
        let z = self.logits(theta, x);
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.iter().map(|v| v / s).collect()
    }

    /// `-ln(exp(z_y) / Σ exp(z_k))` straight from the definition.
    pub fn loss(&self, theta: &[f64], x: &[f64], y: usize) -> f64 {
        let z = self.logits(theta, x);
        let denom: f64 = z.iter().map(|v| v.exp()).sum();
        -(z[y].exp() / denom).ln()
    }

    pub fn grad(&self, theta: &[f64], x: &[f64], y: usize) -> Vec<f64> {
        let p = self.probs(theta, x);
        let mut g = vec![0.0; self.dim()];
        for c in 0..self.k {
            let r = p[c] - if c == y { 1.0 } else { 0.0 };
            for j in 0..self.d {
                g[c * self.d + j] = r * x[j];
            }
        }
        g
    }

    /// Full Hessian of one example's loss: `(diag(p) − ppᵀ) ⊗ xxᵀ`.
    pub fn hessian(&self, theta: &[f64], x: &[f64]) -> Vec<Vec<f64>> {
        let p = self.probs(theta, x);
        let n = self.dim();
        let mut h = vec![vec![0.0; n]; n];
        for a in 0..self.k {
            for b in 0..self.k {
                let s = if a == b { p[a] * (1.0 - p[a]) } else { -p[a] * p[b] };
                for i in 0..self.d {
                    for j in 0..self.d {
                        h[a * self.d + i][b * self.d + j] = s * x[i] * x[j];
                    }
                }
            }
        }
        h
    }

    /// `Σ w_i H_i / Σ w + λI`
    pub fn objective_hessian(&self, theta: &[f64], xs: &[Vec<f64>], weights: &[f64]) -> Vec<Vec<f64>> {
        let n = self.dim();
        let total: f64 = weights.iter().sum();
        let mut h = vec![vec![0.0; n]; n];
        for (x, w) in xs.iter().zip(weights) {
            let hi = self.hessian(theta, x);
            for a in 0..n {
                for b in 0..n {
                    h[a][b] += w / total * hi[a][b];
                }
            }
        }
        for (a, row) in h.iter_mut().enumerate() {
            row[a] += self.lambda;
        }
        h
    }

    pub fn objective(&self, theta: &[f64], xs: &[Vec<f64>], ys: &[usize], weights: &[f64]) -> f64 {
        let total: f64 = weights.iter().sum();
        let data: f64 = xs
            .iter()
            .zip(ys)
            .zip(weights)
            .map(|((x, &y), w)| w * self.loss(theta, x, y))
            .sum();
        data / total + 0.5 * self.lambda * theta.iter().map(|t| t * t).sum::<f64>()
    }

    pub fn objective_grad(&self, theta: &[f64], xs: &[Vec<f64>], ys: &[usize], weights: &[f64]) -> Vec<f64> {
        let total: f64 = weights.iter().sum();
        let mut g: Vec<f64> = theta.iter().map(|t| self.lambda * t).collect();
        for ((x, &y), w) in xs.iter().zip(ys).zip(weights) {
            for (gi, ei) in g.iter_mut().zip(self.grad(theta, x, y)) {
                *gi += w / total * ei;
            }
        }
        g
    }

    pub fn mean_loss(&self, theta: &[f64], xs: &[Vec<f64>], ys: &[usize]) -> f64 {
        xs.iter().zip(ys).map(|(x, &y)| self.loss(theta, x, y)).sum::<f64>() / xs.len() as f64
    }

    /// Damped Newton's method with backtracking on the dense objective.
    pub fn newton(&self, xs: &[Vec<f64>], ys: &[usize], weights: &[f64], tol: f64) -> Vec<f64> {
        let mut theta = vec![0.0; self.dim()];
        for _ in 0..200 {
            let g = self.objective_grad(&theta, xs, ys, weights);
            if norm(&g) < tol {
                break;
            }
            let h = self.objective_hessian(&theta, xs, weights);
            let step = solve(h, &g);
            let f0 = self.objective(&theta, xs, ys, weights);
            let mut t = 1.0;
            loop {
                let cand: Vec<f64> = theta.iter().zip(&step).map(|(a, s)| a - t * s).collect();
                if self.objective(&cand, xs, ys, weights) <= f0 || t < 1e-12 {
                    theta = cand;
                    break;
                }
                t *= 0.5;
            }
        }
        theta
    }
}

pub fn dense_features(samples: &Samples) -> Vec<Vec<f64>> {
    samples
        .features
        .iter()
        .map(|x| x.to_dense(samples.num_features))
        .collect()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(b).max(1e-300)
}

pub fn matvec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter()
        .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

/// Gaussian elimination with partial pivoting.
#[allow(clippy::needless_range_loop)]
pub fn solve(mut a: Vec<Vec<f64>>, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut b = b.to_vec();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Random L2-normalized sparse vector with `nnz` nonzero positive entries.
pub fn random_feature(rng: &mut ChaCha8Rng, d: usize, nnz: usize) -> FeatureVector {
    let pairs = (0..nnz)
        .map(|_| (rng.gen_range(0..d), rng.gen_range(0.5..2.0)))
        .collect();
    FeatureVector::from_pairs(pairs).normalized()
}

/// A learnable K-class problem: each class prefers its own block of features.
pub fn class_feature(rng: &mut ChaCha8Rng, k: usize, d: usize, y: usize) -> FeatureVector {
    let block = d / k;
    let mut pairs = Vec::new();
    for _ in 0..3 {
        let j = if rng.gen_bool(0.7) {
            y * block + rng.gen_range(0..block)
        } else {
            rng.gen_range(0..d)
        };
        pairs.push((j, rng.gen_range(0.5..2.0)));
    }
    FeatureVector::from_pairs(pairs).normalized()
}

pub fn class_samples(rng: &mut ChaCha8Rng, n: usize, k: usize, d: usize) -> Samples {
    let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    let features = labels.iter().map(|&y| class_feature(rng, k, d, y)).collect();
    Samples::new(features, labels, k, d).unwrap()
}

pub fn random_params(rng: &mut ChaCha8Rng, k: usize, d: usize, lambda: f64, spread: f64) -> ModelParams {
    let w = (0..k * d).map(|_| rng.gen_range(-spread..spread)).collect();
    ModelParams::from_weights(k, d, lambda, w).unwrap()
}

/// 20 train / 10 validation / 40 candidates over 30 features and 3 classes.
///
/// Candidates: copies of validation examples, the same copies with a flipped
/// label, fresh class-consistent examples and fresh mislabeled examples.
pub struct Fixture {
    pub train: Samples,
    pub val: Samples,
    pub pool: Vec<(FeatureVector, usize)>,
    pub params: ModelParams,
}

pub fn fixture(seed: u64) -> Fixture {
    let (k, d) = (3, 30);
    let mut r = rng(seed);
    let train_set = class_samples(&mut r, 20, k, d);
    let val = class_samples(&mut r, 10, k, d);
    let mut pool = Vec::new();
    for i in 0..10 {
        let (x, y) = val.get(i);
        pool.push((x.clone(), y));
        pool.push((x.clone(), (y + 1) % k));
    }
    for i in 0..20 {
        let y = i % k;
        let x = class_feature(&mut r, k, d, y);
        let label = if i % 2 == 0 {
            y
        } else {
            (y + 1 + r.gen_range(0..k - 1)) % k
        };
        pool.push((x, label));
    }
    let params = train(&train_set, &[1.0; 20], &tight()).unwrap().params;
    Fixture {
        train: train_set,
        val,
        pool,
        params,
    }
}

pub fn tight() -> TrainConfig {
    TrainConfig {
        tol_grad_norm: 1e-11,
        max_iters: 200_000,
        ..TrainConfig::default()
    }
}

/// 10 features, 3 classes, 40 training examples.
pub fn ten_feature_problem() -> (ModelParams, Samples, ParamVector) {
    let mut r = rng(31);
    let data = class_samples(&mut r, 40, 3, 10);
    let params = train(&data, &[1.0; 40], &TrainConfig::default()).unwrap().params;
    let v = ParamVector((0..30).map(|_| r.gen_range(-1.0..1.0)).collect());
    (params, data, v)
}

pub fn random_pool(seed: u64, size: usize, vocab: usize) -> Dataset {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let examples = (0..size)
        .map(|i| {
            let len = r.gen_range(1..10);
            // Squaring skews draws toward low word ids so overlaps are common.
            let tokens = (0..len)
                .map(|_| {
                    let u: f64 = r.gen();
                    format!("w{}", (u * u * vocab as f64) as usize)
                })
                .collect();
            Example::new(format!("p{i}"), tokens, 0)
        })
        .collect();
    Dataset::new(examples, 2, Split::Pool).unwrap()
}

pub fn grams(ex: &Example, n: usize) -> BTreeSet<String> {
    ex.tokens.windows(n).map(|w| w.join(" ")).collect()
}

/// Step-by-step greedy recomputed from scratch: at each step evaluate
/// |covered ∪ grams(x)| − |covered| for every remaining candidate.
pub fn exhaustive_greedy(pool: &Dataset, n: usize, order: usize) -> (Vec<usize>, Vec<usize>) {
    let mut covered = BTreeSet::new();
    let mut taken = vec![false; pool.len()];
    let (mut picks, mut gains) = (Vec::new(), Vec::new());
    for _ in 0..n {
        let mut best: Option<(usize, usize)> = None;
        for (i, ex) in pool.iter().enumerate() {
            if taken[i] {
                continue;
            }
            let union: BTreeSet<String> = covered.union(&grams(ex, order)).cloned().collect();
            let gain = union.len() - covered.len();
            if best.is_none_or(|(_, g)| gain > g) {
                best = Some((i, gain));
            }
        }
        let (i, gain) = best.unwrap();
        taken[i] = true;
        covered.extend(grams(&pool.examples()[i], order));
        picks.push(i);
        gains.push(gain);
    }
    (picks, gains)
}

pub fn ids(pool: &Dataset, picks: &[usize]) -> Vec<String> {
    picks.iter().map(|&i| pool.examples()[i].id.clone()).collect()
}

pub fn union_size(pool: &Dataset, picks: impl IntoIterator<Item = usize>, order: usize) -> usize {
    let mut all = BTreeSet::new();
    for i in picks {
        all.extend(grams(&pool.examples()[i], order));
    }
    all.len()
}

pub fn best_subset_coverage(pool: &Dataset, n: usize, order: usize) -> usize {
    let m = pool.len();
    (0u32..1 << m)
        .filter(|mask| mask.count_ones() as usize == n)
        .map(|mask| union_size(pool, (0..m).filter(|i| mask & (1 << i) != 0), order))
        .max()
        .unwrap()
}
