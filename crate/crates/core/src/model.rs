//! Multinomial logistic regression over sparse features with L2 damping.
//!
//! Parameters are a `num_classes × num_features` matrix flattened row-major
//! over `(class, feature)`. The training objective is
//!
//! ```text
//! F(W) = Σ w_i l(x_i, y_i; W) / Σ w_i + (λ/2) ‖W‖²_F
//! ```
//!
//! where `l` is softmax cross-entropy. The per-example loss never includes the
//! regularizer; damping enters the curvature only as `+λI`.
//!
//! All reductions over examples run sequentially in dataset order so results
//! do not depend on thread count.

use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::corpus::{featurize, Dataset, FeatureVector, Vocabulary};
use crate::error::{Error, Result};

pub const DEFAULT_DAMPING: f64 = 0.01;

/// A flat parameter-space vector, row-major over `(class, feature)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn dot(&self, other: &ParamVector) -> f64 {
        dot(&self.0, &other.0)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// `self += alpha * x`
    pub fn axpy(&mut self, alpha: f64, x: &ParamVector) {
        for (a, b) in self.0.iter_mut().zip(&x.0) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for a in &mut self.0 {
            *a *= alpha;
        }
    }

    pub fn scaled(mut self, alpha: f64) -> Self {
        self.scale(alpha);
        self
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ParamVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Trained (or initial) classifier parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub num_classes: usize,
    pub num_features: usize,
    pub damping: f64,
    pub weights: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(num_classes: usize, num_features: usize, damping: f64) -> Result<Self> {
        Self::from_weights(
            num_classes,
            num_features,
            damping,
            vec![0.0; num_classes * num_features],
        )
    }

    pub fn from_weights(num_classes: usize, num_features: usize, damping: f64, weights: Vec<f64>) -> Result<Self> {
        let params = Self {
            num_classes,
            num_features,
            damping,
            weights,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::InvalidConfig("model needs at least 2 classes".into()));
        }
        if !(self.damping > 0.0 && self.damping.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "damping must be positive, got {}",
                self.damping
            )));
        }
        let expected = self.num_classes * self.num_features;
        if self.weights.len() != expected {
            return Err(Error::shape(
                format!("{expected} weights"),
                format!("{} weights", self.weights.len()),
            ));
        }
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidConfig("non-finite model weight".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn row(&self, class: usize) -> &[f64] {
        &self.weights[class * self.num_features..(class + 1) * self.num_features]
    }

    pub fn as_vector(&self) -> ParamVector {
        ParamVector(self.weights.clone())
    }

    pub fn with_vector(&self, v: ParamVector) -> Self {
        Self {
            weights: v.0,
            ..self.clone()
        }
    }

    /// Logits `W x`.
    pub fn logits(&self, x: &FeatureVector) -> Vec<f64> {
        (0..self.num_classes)
            .map(|k| {
                let row = self.row(k);
                x.entries().iter().map(|&(j, v)| row[j] * v).sum()
            })
            .collect()
    }

    pub fn probabilities(&self, x: &FeatureVector) -> Vec<f64> {
        softmax(&self.logits(x))
    }

    /// Most probable class, ties broken by the smallest class index.
    pub fn predict(&self, x: &FeatureVector) -> usize {
        argmax(&self.logits(x))
    }

    fn check_example(&self, x: &FeatureVector, y: usize) -> Result<()> {
        if let Some(j) = x.max_index() {
            if j >= self.num_features {
                return Err(Error::shape(
                    format!("feature index < {}", self.num_features),
                    format!("index {j}"),
                ));
            }
        }
        if y >= self.num_classes {
            return Err(Error::shape(
                format!("label < {}", self.num_classes),
                format!("label {y}"),
            ));
        }
        Ok(())
    }

    fn check_vector(&self, v: &ParamVector) -> Result<()> {
        if v.len() != self.dim() {
            return Err(Error::shape(
                format!("parameter vector of length {}", self.dim()),
                format!("length {}", v.len()),
            ));
        }
        Ok(())
    }

    fn regularizer(&self) -> f64 {
        0.5 * self.damping * dot(&self.weights, &self.weights)
    }
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = k;
        }
    }
    best
}

fn cross_entropy(logits: &[f64], y: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    // Clamp tiny negative rounding for a perfectly predicted label.
    (lse - logits[y]).max(0.0)
}

/// Featurized examples ready for the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub features: Vec<FeatureVector>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub num_features: usize,
}

impl Samples {
    pub fn new(
        features: Vec<FeatureVector>,
        labels: Vec<usize>,
        num_classes: usize,
        num_features: usize,
    ) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::shape(
                format!("{} labels", features.len()),
                format!("{} labels", labels.len()),
            ));
        }
        for (x, &y) in features.iter().zip(&labels) {
            if y >= num_classes {
                return Err(Error::shape(format!("label < {num_classes}"), format!("label {y}")));
            }
            if x.max_index().is_some_and(|j| j >= num_features) {
                return Err(Error::shape(
                    format!("feature index < {num_features}"),
                    format!("index {}", x.max_index().unwrap_or(0)),
                ));
            }
        }
        Ok(Self {
            features,
            labels,
            num_classes,
            num_features,
        })
    }

    pub fn from_dataset(data: &Dataset, vocab: &Vocabulary) -> Self {
        Self {
            features: data.iter().map(|e| featurize(e, vocab)).collect(),
            labels: data.labels(),
            num_classes: data.num_classes(),
            num_features: vocab.num_features(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, i: usize) -> (&FeatureVector, usize) {
        (&self.features[i], self.labels[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&FeatureVector, usize)> {
        self.features.iter().zip(self.labels.iter().copied())
    }

    /// Concatenation, `self` first.
    pub fn concat(&self, other: &Samples) -> Result<Samples> {
        if self.num_classes != other.num_classes || self.num_features != other.num_features {
            return Err(Error::shape(
                format!("{}x{}", self.num_classes, self.num_features),
                format!("{}x{}", other.num_classes, other.num_features),
            ));
        }
        let mut features = self.features.clone();
        features.extend(other.features.iter().cloned());
        let mut labels = self.labels.clone();
        labels.extend(other.labels.iter().copied());
        Ok(Samples {
            features,
            labels,
            num_classes: self.num_classes,
            num_features: self.num_features,
        })
    }

    pub fn subset(&self, indices: &[usize]) -> Samples {
        Samples {
            features: indices.iter().map(|&i| self.features[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            num_features: self.num_features,
        }
    }

    fn check_params(&self, params: &ModelParams) -> Result<()> {
        if params.num_classes != self.num_classes || params.num_features != self.num_features {
            return Err(Error::shape(
                format!("{}x{} model", self.num_classes, self.num_features),
                format!("{}x{} model", params.num_classes, params.num_features),
            ));
        }
        Ok(())
    }
}

/// Validates weights and returns their sum.
pub(crate) fn weight_total(weights: &[f64], n: usize) -> Result<f64> {
    if weights.len() != n {
        return Err(Error::shape(
            format!("{n} weights"),
            format!("{} weights", weights.len()),
        ));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::InvalidConfig("weights must be finite and nonnegative".into()));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::AllZeroWeights);
    }
    Ok(total)
}

/// Softmax cross-entropy `-log softmax(Wx)[y]` of one example, without regularizer.
pub fn example_loss(params: &ModelParams, x: &FeatureVector, y: usize) -> Result<f64> {
    params.check_example(x, y)?;
    Ok(cross_entropy(&params.logits(x), y))
}

/// Unweighted mean data loss, without the regularizer.
pub fn data_loss(params: &ModelParams, data: &Samples) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    data.check_params(params)?;
    let total: f64 = data.iter().map(|(x, y)| cross_entropy(&params.logits(x), y)).sum();
    Ok(total / data.len() as f64)
}

/// Unweighted mean example loss plus `(λ/2)‖W‖²`.
pub fn batch_loss(params: &ModelParams, data: &Samples) -> Result<f64> {
    Ok(data_loss(params, data)? + params.regularizer())
}

/// Weighted average example loss plus `(λ/2)‖W‖²`.
pub fn weighted_loss(params: &ModelParams, data: &Samples, weights: &[f64]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    data.check_params(params)?;
    let total = weight_total(weights, data.len())?;
    let sum: f64 = data
        .iter()
        .zip(weights)
        .map(|((x, y), &w)| w * cross_entropy(&params.logits(x), y))
        .sum();
    Ok(sum / total + params.regularizer())
}

/// Adds `scale * (p - onehot(y)) ⊗ x` into `out`.
fn accumulate_grad(params: &ModelParams, x: &FeatureVector, y: usize, scale: f64, out: &mut [f64]) {
    let p = params.probabilities(x);
    let d = params.num_features;
    for (k, pk) in p.iter().enumerate() {
        let coeff = scale * (pk - if k == y { 1.0 } else { 0.0 });
        if coeff == 0.0 {
            continue;
        }
        let row = &mut out[k * d..(k + 1) * d];
        for &(j, v) in x.entries() {
            row[j] += coeff * v;
        }
    }
}

/// Gradient of `weight * l(x, y; W)`; excludes the regularizer.
pub fn grad(params: &ModelParams, x: &FeatureVector, y: usize, weight: f64) -> Result<ParamVector> {
    params.check_example(x, y)?;
    let mut out = ParamVector::zeros(params.dim());
    accumulate_grad(params, x, y, 1.0, &mut out);
    if weight != 1.0 {
        out.scale(weight);
    }
    Ok(out)
}

/// Unweighted mean of per-example gradients, without the regularizer.
pub fn mean_data_grad(params: &ModelParams, data: &Samples) -> Result<ParamVector> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    data.check_params(params)?;
    let mut out = ParamVector::zeros(params.dim());
    let scale = 1.0 / data.len() as f64;
    for (x, y) in data.iter() {
        accumulate_grad(params, x, y, scale, &mut out);
    }
    Ok(out)
}

/// Gradient of [`weighted_loss`], regularizer included.
pub fn objective_grad(params: &ModelParams, data: &Samples, weights: &[f64]) -> Result<ParamVector> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    data.check_params(params)?;
    let total = weight_total(weights, data.len())?;
    Ok(objective_grad_unchecked(params, data, weights, total))
}

fn objective_grad_unchecked(params: &ModelParams, data: &Samples, weights: &[f64], total: f64) -> ParamVector {
    let mut out = ParamVector::zeros(params.dim());
    for ((x, y), &w) in data.iter().zip(weights) {
        if w != 0.0 {
            accumulate_grad(params, x, y, w / total, &mut out);
        }
    }
    for (g, theta) in out.iter_mut().zip(&params.weights) {
        *g += params.damping * theta;
    }
    out
}

/// The Hessian of [`weighted_loss`] at fixed parameters, applied matrix-free.
///
/// Per example the Hessian of cross-entropy is `(diag(p) − p pᵀ) ⊗ x xᵀ`, so
/// `H_i v = r ⊗ x` with `u = V x` and `r = p ⊙ u − p (pᵀu)`. Class
/// probabilities are cached at construction.
#[derive(Debug, Clone)]
pub struct Curvature<'a> {
    data: &'a Samples,
    probs: Vec<Vec<f64>>,
    coeffs: Vec<f64>,
    damping: f64,
    num_classes: usize,
    num_features: usize,
}

impl<'a> Curvature<'a> {
    pub fn new(params: &ModelParams, data: &'a Samples, weights: &[f64]) -> Result<Self> {
        data.check_params(params)?;
        let total = weight_total(weights, data.len())?;
        Ok(Self {
            data,
            probs: data.features.iter().map(|x| params.probabilities(x)).collect(),
            coeffs: weights.iter().map(|w| w / total).collect(),
            damping: params.damping,
            num_classes: params.num_classes,
            num_features: params.num_features,
        })
    }

    pub fn dim(&self) -> usize {
        self.num_classes * self.num_features
    }

    pub fn damping(&self) -> f64 {
        self.damping
    }

    pub fn samples(&self) -> &'a Samples {
        self.data
    }

    pub fn num_examples(&self) -> usize {
        self.data.len()
    }

    /// Normalized example weights `w_i / Σ w`.
    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }

    /// `out += scale * H_i v` for the data term of example `i`.
    pub fn add_example_hvp(&self, i: usize, v: &[f64], scale: f64, out: &mut [f64]) {
        let x = &self.data.features[i];
        if x.is_zero() || scale == 0.0 {
            return;
        }
        let d = self.num_features;
        let p = &self.probs[i];
        let u: Vec<f64> = (0..self.num_classes)
            .map(|k| {
                let row = &v[k * d..(k + 1) * d];
                x.entries().iter().map(|&(j, xv)| row[j] * xv).sum()
            })
            .collect();
        let pu = dot(p, &u);
        for k in 0..self.num_classes {
            let r = scale * p[k] * (u[k] - pu);
            if r == 0.0 {
                continue;
            }
            let row = &mut out[k * d..(k + 1) * d];
            for &(j, xv) in x.entries() {
                row[j] += r * xv;
            }
        }
    }

    /// `H v` including the `λ v` damping term.
    pub fn apply(&self, v: &[f64]) -> ParamVector {
        let mut out = ParamVector(v.iter().map(|vi| self.damping * vi).collect());
        for (i, &c) in self.coeffs.iter().enumerate() {
            self.add_example_hvp(i, v, c, &mut out);
        }
        out
    }
}

/// Hessian-vector product of the weighted training objective.
pub fn hvp(params: &ModelParams, data: &Samples, weights: &[f64], v: &ParamVector) -> Result<ParamVector> {
    params.check_vector(v)?;
    Ok(Curvature::new(params, data, weights)?.apply(v))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_iters: usize,
    pub step_size: f64,
    pub tol_grad_norm: f64,
    pub seed: u64,
    pub damping: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_iters: 50_000,
            step_size: 1.0,
            tol_grad_norm: 1e-8,
            seed: 0,
            damping: DEFAULT_DAMPING,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        if !(self.step_size > 0.0) {
            return Err(Error::InvalidConfig("step_size must be positive".into()));
        }
        if !(self.tol_grad_norm > 0.0) {
            return Err(Error::InvalidConfig("tol_grad_norm must be positive".into()));
        }
        if !(self.damping > 0.0 && self.damping.is_finite()) {
            return Err(Error::InvalidConfig("damping must be positive".into()));
        }
        Ok(())
    }
}

/// Outcome of a training run. `converged == false` is the non-convergence
/// warning: the parameters are still the last iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct Trained {
    pub params: ModelParams,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl Trained {
    /// Turns the non-convergence warning into an error tagged with `stage`.
    pub fn converged_or(self, stage: &'static str) -> Result<Trained> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NonConvergence {
                stage,
                iterations: self.iterations,
                grad_norm: self.grad_norm,
            })
        }
    }
}

/// Full-batch gradient descent on [`weighted_loss`] from zero initialization.
pub fn train(data: &Samples, weights: &[f64], cfg: &TrainConfig) -> Result<Trained> {
    cfg.validate()?;
    let init = ModelParams::zeros(data.num_classes, data.num_features, cfg.damping)?;
    train_from(init, data, weights, cfg)
}

/// Full-batch gradient descent starting from `init`. The damping of `init` is
/// replaced by `cfg.damping`.
pub fn train_from(mut params: ModelParams, data: &Samples, weights: &[f64], cfg: &TrainConfig) -> Result<Trained> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    params.damping = cfg.damping;
    params.validate()?;
    data.check_params(&params)?;
    let total = weight_total(weights, data.len())?;

    let mut iterations = 0;
    loop {
        let g = objective_grad_unchecked(&params, data, weights, total);
        let grad_norm = g.norm();
        if !grad_norm.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "gradient became non-finite after {iterations} iterations; reduce step_size"
            )));
        }
        if grad_norm <= cfg.tol_grad_norm || iterations >= cfg.max_iters {
            let converged = grad_norm <= cfg.tol_grad_norm;
            if !converged {
                log::debug!("gradient descent stopped at max_iters with ‖g‖ = {grad_norm:.3e}");
            }
            return Ok(Trained {
                params,
                grad_norm,
                iterations,
                converged,
            });
        }
        for (w, gi) in params.weights.iter_mut().zip(g.iter()) {
            *w -= cfg.step_size * gi;
        }
        iterations += 1;
    }
}
