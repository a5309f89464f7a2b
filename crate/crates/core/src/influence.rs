//! Influence of candidate training examples on validation loss.
//!
//! For a trained model `θ̂` with training Hessian `H`, adding a candidate `x`
//! to `N` training examples changes the validation loss by approximately
//!
//! ```text
//! (1/N) · I_up,loss(x) = −(1/N) · ∇L_val(θ̂)ᵀ H⁻¹ ∇l(x, θ̂)
//! ```
//!
//! `H⁻¹ ∇L_val` is solved once per pool (conjugate gradients or the LiSSA
//! recursion), after which each candidate costs one gradient and one dot
//! product. Candidates with a positive value are detrimental.

use std::collections::HashMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{featurize, Dataset, FeatureVector, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{self, Curvature, ModelParams, ParamVector, Samples, TrainConfig};
use crate::rng::{derive_seed, seeded};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    Cg,
    Lissa,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Cg => "cg",
            Method::Lissa => "lissa",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cg" => Ok(Method::Cg),
            "lissa" => Ok(Method::Lissa),
            other => Err(Error::InvalidConfig(format!("unknown solver {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InverseHvpConfig {
    pub method: Method,
    pub cg_tol: f64,
    /// `None` means ten times the parameter dimension.
    pub cg_max_iters: Option<usize>,
    pub lissa_depth: usize,
    pub lissa_scale: f64,
    pub lissa_repeats: usize,
    pub seed: u64,
}

impl Default for InverseHvpConfig {
    fn default() -> Self {
        Self {
            method: Method::Cg,
            cg_tol: 1e-8,
            cg_max_iters: None,
            lissa_depth: 5000,
            lissa_scale: 10.0,
            lissa_repeats: 10,
            seed: 0,
        }
    }
}

impl InverseHvpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cg_tol > 0.0) {
            return Err(Error::InvalidConfig("cg_tol must be positive".into()));
        }
        if !(self.lissa_scale > 0.0 && self.lissa_scale.is_finite()) {
            return Err(Error::InvalidConfig("lissa_scale must be positive".into()));
        }
        if self.method == Method::Lissa && self.lissa_repeats == 0 {
            return Err(Error::InvalidConfig("lissa_repeats must be at least 1".into()));
        }
        Ok(())
    }
}

/// Result of an inverse-HVP solve.
///
/// `residual` is `‖H s − v‖ / ‖v‖` recomputed from scratch after the solve
/// (0 when `v = 0`). `converged == false` flags a CG run that hit its
/// iteration cap; `solution` is then the last iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct Solve {
    pub solution: ParamVector,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub method: Method,
}

fn relative_residual(op: &Curvature<'_>, s: &[f64], v: &[f64]) -> f64 {
    let v_norm = model::dot(v, v).sqrt();
    if v_norm == 0.0 {
        return if s.iter().all(|&x| x == 0.0) {
            0.0
        } else {
            f64::INFINITY
        };
    }
    let hs = op.apply(s);
    let r: f64 = hs.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
    r.sqrt() / v_norm
}

fn check_rhs(op: &Curvature<'_>, v: &ParamVector) -> Result<()> {
    if v.len() != op.dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("vector of length {}", op.dim()),
            got: format!("length {}", v.len()),
        });
    }
    Ok(())
}

/// Conjugate gradients on a prepared curvature operator.
pub fn cg_solve(op: &Curvature<'_>, v: &ParamVector, tol: f64, max_iters: usize) -> Result<Solve> {
    check_rhs(op, v)?;
    let d = op.dim();
    let v_norm = v.norm();
    if v_norm == 0.0 {
        return Ok(Solve {
            solution: ParamVector::zeros(d),
            residual: 0.0,
            iterations: 0,
            converged: true,
            method: Method::Cg,
        });
    }
    let target = tol * v_norm;
    let mut x = ParamVector::zeros(d);
    let mut r = v.clone();
    let mut p = r.clone();
    let mut rs = r.dot(&r);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iters {
        let ap = op.apply(&p);
        let pap = p.dot(&ap);
        if !(pap > 0.0) {
            break;
        }
        let alpha = rs / pap;
        x.axpy(alpha, &p);
        r.axpy(-alpha, &ap);
        iterations += 1;
        let rs_new = r.dot(&r);
        if rs_new.sqrt() <= target {
            // The recurrence residual drifts from the true one; confirm before stopping.
            let mut true_r = v.clone();
            true_r.axpy(-1.0, &op.apply(&x));
            if true_r.norm() <= target {
                converged = true;
                break;
            }
            r = true_r;
            p = r.clone();
            rs = r.dot(&r);
            continue;
        }
        let beta = rs_new / rs;
        for (pi, ri) in p.iter_mut().zip(r.iter()) {
            *pi = ri + beta * *pi;
        }
        rs = rs_new;
    }
    let residual = relative_residual(op, &x, v);
    let converged = converged || residual <= tol;
    if !converged {
        log::warn!("CG stopped after {iterations} iterations with relative residual {residual:.3e}");
    }
    Ok(Solve {
        solution: x,
        residual,
        iterations,
        converged,
        method: Method::Cg,
    })
}

/// Upper bound on the spectral norm of any single-sample curvature
/// `H_i + λI`: softmax curvature is at most 1/2 times `‖x_i‖²`.
fn sample_curvature_bound(data: &Samples, damping: f64) -> f64 {
    let max_sq = data.features.iter().map(|x| x.norm().powi(2)).fold(0.0, f64::max);
    0.5 * max_sq + damping
}

/// Truncated Neumann-series estimate of `H⁻¹ v` with sampled Hessians.
///
/// Each repeat runs `s ← v + (I − H_sample/scale) s` for `depth` steps from
/// `s = v`, where `H_sample` is the curvature of one training example drawn
/// with probability proportional to its weight, plus damping. The estimate is
/// the mean of `s / scale` over repeats. Repeat `r` draws from its own stream
/// derived from `(seed, r)`.
pub fn lissa_solve(
    op: &Curvature<'_>,
    v: &ParamVector,
    depth: usize,
    scale: f64,
    repeats: usize,
    seed: u64,
) -> Result<Solve> {
    check_rhs(op, v)?;
    if repeats == 0 {
        return Err(Error::InvalidConfig("lissa_repeats must be at least 1".into()));
    }
    if !(scale > 0.0) {
        return Err(Error::InvalidConfig("lissa_scale must be positive".into()));
    }
    let bound = sample_curvature_bound(op.samples(), op.damping());
    if bound >= scale {
        return Err(Error::InvalidConfig(format!(
            "lissa_scale {scale} does not dominate the per-sample curvature bound {bound:.3}"
        )));
    }
    let d = op.dim();
    let v_norm = v.norm();
    if v_norm == 0.0 {
        return Ok(Solve {
            solution: ParamVector::zeros(d),
            residual: 0.0,
            iterations: 0,
            converged: true,
            method: Method::Lissa,
        });
    }
    let sampler = if op.num_examples() > 0 {
        Some(WeightedIndex::new(op.coefficients()).map_err(|_| Error::AllZeroWeights)?)
    } else {
        None
    };
    let limit = 1e6 * v_norm;

    let estimates: Vec<Result<ParamVector>> = (0..repeats)
        .into_par_iter()
        .map(|rep| {
            let mut rng = seeded(derive_seed(seed, rep as u64));
            let mut s = v.clone();
            let mut hs = vec![0.0; d];
            for step in 0..depth {
                for (h, si) in hs.iter_mut().zip(s.iter()) {
                    *h = op.damping() * si;
                }
                if let Some(sampler) = &sampler {
                    let i = sampler.sample(&mut rng);
                    op.add_example_hvp(i, &s, 1.0, &mut hs);
                }
                for ((si, vi), hi) in s.iter_mut().zip(v.iter()).zip(&hs) {
                    *si = vi + *si - hi / scale;
                }
                let norm = s.norm();
                if !norm.is_finite() || norm > limit {
                    return Err(Error::ContractionViolated { step, norm });
                }
            }
            Ok(s)
        })
        .collect();

    let mut sum = ParamVector::zeros(d);
    for est in estimates {
        sum.axpy(1.0, &est?);
    }
    sum.scale(1.0 / (scale * repeats as f64));
    let residual = relative_residual(op, &sum, v);
    Ok(Solve {
        solution: sum,
        residual,
        iterations: depth * repeats,
        converged: true,
        method: Method::Lissa,
    })
}

fn default_cg_iters(cfg: &InverseHvpConfig, dim: usize) -> usize {
    cfg.cg_max_iters.unwrap_or(10 * dim.max(1))
}

pub fn inverse_hvp_cg(
    params: &ModelParams,
    train: &Samples,
    weights: &[f64],
    v: &ParamVector,
    cfg: &InverseHvpConfig,
) -> Result<Solve> {
    cfg.validate()?;
    let op = Curvature::new(params, train, weights)?;
    cg_solve(&op, v, cfg.cg_tol, default_cg_iters(cfg, op.dim()))
}

pub fn inverse_hvp_lissa(
    params: &ModelParams,
    train: &Samples,
    weights: &[f64],
    v: &ParamVector,
    cfg: &InverseHvpConfig,
) -> Result<Solve> {
    cfg.validate()?;
    let op = Curvature::new(params, train, weights)?;
    lissa_solve(&op, v, cfg.lissa_depth, cfg.lissa_scale, cfg.lissa_repeats, cfg.seed)
}

pub fn inverse_hvp(
    params: &ModelParams,
    train: &Samples,
    weights: &[f64],
    v: &ParamVector,
    cfg: &InverseHvpConfig,
) -> Result<Solve> {
    match cfg.method {
        Method::Cg => inverse_hvp_cg(params, train, weights, v, cfg),
        Method::Lissa => inverse_hvp_lissa(params, train, weights, v, cfg),
    }
}

/// Gradient of the mean validation loss. Validation loss has no regularizer.
pub fn val_grad(params: &ModelParams, val: &Samples) -> Result<ParamVector> {
    model::mean_data_grad(params, val)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceRecord {
    pub example_id: String,
    /// Estimated validation-loss change from adding the example, `(1/N)·I_up,loss`.
    pub influence: f64,
    pub method: Method,
    pub residual: f64,
    pub converged: bool,
    pub detrimental: bool,
}

/// Shared state for scoring many candidates against one trained model:
/// `H⁻¹ ∇L_val` is solved at construction.
#[derive(Debug, Clone)]
pub struct InfluenceScorer {
    params: ModelParams,
    val_solve: Solve,
    num_train: usize,
}

impl InfluenceScorer {
    pub fn new(
        params: &ModelParams,
        train: &Samples,
        train_weights: &[f64],
        val: &Samples,
        cfg: &InverseHvpConfig,
    ) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let g_val = val_grad(params, val)?;
        let val_solve = inverse_hvp(params, train, train_weights, &g_val, cfg)?;
        Ok(Self {
            params: params.clone(),
            val_solve,
            num_train: train.len(),
        })
    }

    /// The solve `s_val = H⁻¹ ∇L_val` shared by every candidate.
    pub fn val_solve(&self) -> &Solve {
        &self.val_solve
    }

    pub fn num_train(&self) -> usize {
        self.num_train
    }

    /// `−(1/N) ⟨s_val, weight · ∇l(x, y)⟩`
    pub fn influence(&self, x: &FeatureVector, y: usize, weight: f64) -> Result<f64> {
        let g = model::grad(&self.params, x, y, weight)?;
        Ok(-self.val_solve.solution.dot(&g) / self.num_train as f64)
    }

    pub fn record(&self, id: &str, x: &FeatureVector, y: usize, weight: f64) -> Result<InfluenceRecord> {
        let influence = self.influence(x, y, weight)?;
        Ok(InfluenceRecord {
            example_id: id.to_string(),
            influence,
            method: self.val_solve.method,
            residual: self.val_solve.residual,
            converged: self.val_solve.converged,
            detrimental: influence > 0.0,
        })
    }

    /// Scores every pool example; output order matches the pool.
    pub fn score(&self, pool: &Dataset, vocab: &Vocabulary) -> Result<Vec<InfluenceRecord>> {
        pool.examples()
            .par_iter()
            .map(|ex| self.record(&ex.id, &featurize(ex, vocab), ex.label, ex.weight))
            .collect()
    }
}

/// Fails with [`Error::SolverFailure`] when more than half of the records
/// come from an unconverged solve.
pub fn check_solver_failures(records: &[InfluenceRecord]) -> Result<()> {
    let failed = records.iter().filter(|r| !r.converged).count();
    if failed * 2 > records.len() {
        return Err(Error::SolverFailure {
            failed,
            total: records.len(),
        });
    }
    Ok(())
}

/// Influence of every pool candidate on the validation loss.
pub fn score_pool(
    params: &ModelParams,
    train: &Samples,
    train_weights: &[f64],
    val: &Samples,
    pool: &Dataset,
    vocab: &Vocabulary,
    cfg: &InverseHvpConfig,
) -> Result<Vec<InfluenceRecord>> {
    InfluenceScorer::new(params, train, train_weights, val, cfg)?.score(pool, vocab)
}

/// Exact validation-loss change from retraining with one extra example.
///
/// Adding `x` with weight `w` to training data of total weight `W` minimizes
///
/// ```text
/// (Σ w_i l_i + w l(x)) / W + (λ/2) ‖θ‖²
/// ```
///
/// i.e. the candidate is upweighted by `w/W` while the regularizer stays put.
/// That is the weighted mean over the union with damping `λ·W/(W + w)`.
/// Trains on `train` once and reuses that optimum for every candidate.
#[derive(Debug, Clone)]
pub struct LooOracle<'a> {
    train: &'a Samples,
    weights: &'a [f64],
    val: &'a Samples,
    cfg: TrainConfig,
    total_weight: f64,
    base_loss: f64,
}

impl<'a> LooOracle<'a> {
    pub fn new(train: &'a Samples, weights: &'a [f64], val: &'a Samples, cfg: &TrainConfig) -> Result<Self> {
        let base = model::train(train, weights, cfg)?.converged_or("oracle base")?;
        let base_loss = model::data_loss(&base.params, val)?;
        Ok(Self {
            train,
            weights,
            val,
            cfg: *cfg,
            total_weight: weights.iter().sum(),
            base_loss,
        })
    }

    pub fn delta(&self, x: &FeatureVector, y: usize, weight: f64) -> Result<f64> {
        let extra = Samples::new(
            vec![x.clone()],
            vec![y],
            self.train.num_classes,
            self.train.num_features,
        )?;
        let augmented = self.train.concat(&extra)?;
        let mut weights = self.weights.to_vec();
        weights.push(weight);
        let cfg = TrainConfig {
            damping: self.cfg.damping * self.total_weight / (self.total_weight + weight),
            ..self.cfg
        };
        let trained = model::train(&augmented, &weights, &cfg)?.converged_or("oracle retrain")?;
        Ok(model::data_loss(&trained.params, self.val)? - self.base_loss)
    }
}

/// `L_val(θ̂(train ∪ {x_new})) − L_val(θ̂(train))` by retraining from scratch.
pub fn loo_delta_oracle(
    train: &Samples,
    train_weights: &[f64],
    val: &Samples,
    x_new: &FeatureVector,
    y_new: usize,
    cfg: &TrainConfig,
) -> Result<f64> {
    LooOracle::new(train, train_weights, val, cfg)?.delta(x_new, y_new, 1.0)
}

/// Keeps pool examples whose influence is `≤ 0`, preserving order.
pub fn filter_detrimental(pool: &Dataset, records: &[InfluenceRecord]) -> Result<Dataset> {
    let by_id: HashMap<&str, &InfluenceRecord> = records.iter().map(|r| (r.example_id.as_str(), r)).collect();
    for ex in pool {
        if !by_id.contains_key(ex.id.as_str()) {
            return Err(Error::MissingRecord(ex.id.clone()));
        }
    }
    Ok(pool.filtered(|_, ex| by_id[ex.id.as_str()].influence <= 0.0))
}

/// Per-probe values `zᵀ H z` for Rademacher probes drawn from `seed`.
pub fn hutchinson_probes(
    params: &ModelParams,
    train: &Samples,
    weights: &[f64],
    num_probes: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if num_probes == 0 {
        return Err(Error::InvalidConfig("num_probes must be at least 1".into()));
    }
    let op = Curvature::new(params, train, weights)?;
    let mut rng = seeded(seed);
    let mut z = vec![0.0; op.dim()];
    Ok((0..num_probes)
        .map(|_| {
            for zi in z.iter_mut() {
                *zi = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            }
            model::dot(&z, &op.apply(&z))
        })
        .collect())
}

/// Hutchinson estimate of `tr(H)`: the mean of `zᵀ H z` over Rademacher probes.
pub fn hutchinson_trace(
    params: &ModelParams,
    train: &Samples,
    weights: &[f64],
    num_probes: usize,
    seed: u64,
) -> Result<f64> {
    let probes = hutchinson_probes(params, train, weights, num_probes, seed)?;
    Ok(probes.iter().sum::<f64>() / probes.len() as f64)
}
