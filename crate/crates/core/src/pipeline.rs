//! The augmentation workflow: relabeling, the three training regimes,
//! evaluation, and a seeded toy task and candidate-pool generator.
//!
//! Every regime trains on featurized [`Samples`] with unit example weights
//! (synthetic examples get `α` under the weighted regime). The per-stage
//! randomness is derived from [`PipelineConfig::seed`] with [`derive_seed`].

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::{build_vocabulary, featurize, Dataset, Example, Source, Split, Vocabulary};
use crate::error::{Error, Result};
use crate::influence::{check_solver_failures, InfluenceRecord, InfluenceScorer, InverseHvpConfig};
use crate::model::{self, ModelParams, Samples, TrainConfig, Trained};
use crate::rng::{derive_seed, seeded, stream, Rng};
use crate::select::{select, SelectionResult, Strategy, DEFAULT_NGRAM_ORDER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    #[default]
    TwoStage,
    Mixed,
    Weighted,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regime::TwoStage => "two_stage",
            Regime::Mixed => "mixed",
            Regime::Weighted => "weighted",
        })
    }
}

impl std::str::FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two_stage" => Ok(Regime::TwoStage),
            "mixed" => Ok(Regime::Mixed),
            "weighted" => Ok(Regime::Weighted),
            other => Err(Error::InvalidConfig(format!("unknown regime {other:?}"))),
        }
    }
}

/// Synthetic-stage defaults: iterations per epoch of the bounded first stage.
fn default_synthetic_train() -> TrainConfig {
    TrainConfig {
        max_iters: 200,
        ..TrainConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Candidate pool size when the pool is generated.
    pub synthetic_size: usize,
    /// N-gram order of the diversity measure.
    pub ngram_order: usize,
    /// N-gram order of the model's features.
    pub feature_ngram_order: usize,
    pub min_count: usize,
    pub strategy: Strategy,
    /// Number of candidates to keep; `None` keeps a third of the pool.
    pub selection_size: Option<usize>,
    pub relabel: bool,
    pub regime: Regime,
    /// Weight `α` of every synthetic example under the weighted regime.
    pub synthetic_weight: f64,
    /// The synthetic stage may run `epochs_synthetic × train_cfg_synthetic.max_iters`
    /// gradient steps; stopping on that budget is expected.
    pub epochs_synthetic: usize,
    pub train_cfg_synthetic: TrainConfig,
    pub train_cfg_organic: TrainConfig,
    pub influence: InverseHvpConfig,
    /// Generator label-flip probability.
    pub noise_rate: f64,
    /// Generator token-salad probability.
    pub ood_rate: f64,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            synthetic_size: 50_000,
            ngram_order: DEFAULT_NGRAM_ORDER,
            feature_ngram_order: 1,
            min_count: 1,
            strategy: Strategy::Combo,
            selection_size: None,
            relabel: true,
            regime: Regime::TwoStage,
            synthetic_weight: 0.5,
            epochs_synthetic: 1,
            train_cfg_synthetic: default_synthetic_train(),
            train_cfg_organic: TrainConfig::default(),
            influence: InverseHvpConfig::default(),
            noise_rate: 0.2,
            ood_rate: 0.05,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if !(self.synthetic_weight > 0.0 && self.synthetic_weight <= 1.0) {
            return bad("synthetic_weight must lie in (0, 1]");
        }
        if self.ngram_order < 1 || self.feature_ngram_order < 1 {
            return bad("n-gram orders must be at least 1");
        }
        if self.min_count < 1 {
            return bad("min_count must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.noise_rate) || !(0.0..=1.0).contains(&self.ood_rate) {
            return bad("generator rates must lie in [0, 1]");
        }
        self.train_cfg_synthetic.validate()?;
        self.train_cfg_organic.validate()?;
        self.influence.validate()
    }

    /// Training budget of the synthetic stage.
    pub fn synthetic_stage(&self) -> TrainConfig {
        TrainConfig {
            max_iters: self.epochs_synthetic.saturating_mul(self.train_cfg_synthetic.max_iters),
            ..self.train_cfg_synthetic
        }
    }

    /// The inverse-HVP settings with the LiSSA seed derived from `seed`.
    pub fn influence_config(&self) -> InverseHvpConfig {
        InverseHvpConfig {
            seed: derive_seed(self.seed, stream::LISSA),
            ..self.influence
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub mean_loss: f64,
    pub num_examples: usize,
    pub num_correct: usize,
    /// Gold-label count per class.
    pub per_class_counts: Vec<usize>,
}

/// Argmax accuracy and mean unregularized loss.
pub fn evaluate(params: &ModelParams, data: &Samples) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut per_class_counts = vec![0; data.num_classes];
    let mut num_correct = 0;
    for (x, y) in data.iter() {
        per_class_counts[y] += 1;
        if params.predict(x) == y {
            num_correct += 1;
        }
    }
    Ok(EvalReport {
        accuracy: num_correct as f64 / data.len() as f64,
        mean_loss: model::data_loss(params, data)?,
        num_examples: data.len(),
        num_correct,
        per_class_counts,
    })
}

/// Replaces every label with the model's prediction.
pub fn relabel(pool: &Dataset, params: &ModelParams, vocab: &Vocabulary) -> Dataset {
    let examples = pool
        .iter()
        .map(|ex| Example {
            label: params.predict(&featurize(ex, vocab)),
            ..ex.clone()
        })
        .collect();
    Dataset::new(examples, pool.num_classes(), pool.split()).expect("relabeling preserves validity")
}

/// Stage 1 runs on `synthetic` from zero under the bounded synthetic budget;
/// stage 2 continues from its parameters on `organic`. An empty synthetic set
/// skips stage 1. `converged` reports the organic stage.
pub fn two_stage_train(synthetic: &Samples, organic: &Samples, cfg: &PipelineConfig) -> Result<Trained> {
    let ones = vec![1.0; organic.len()];
    if synthetic.is_empty() || cfg.epochs_synthetic == 0 {
        return model::train(organic, &ones, &cfg.train_cfg_organic);
    }
    let stage1 = model::train(synthetic, &vec![1.0; synthetic.len()], &cfg.synthetic_stage())?;
    log::debug!(
        "synthetic stage: {} iterations, gradient norm {:.3e}",
        stage1.iterations,
        stage1.grad_norm
    );
    model::train_from(stage1.params, organic, &ones, &cfg.train_cfg_organic)
}

/// One run on organic followed by synthetic, every example weighted 1.
pub fn mixed_train(synthetic: &Samples, organic: &Samples, cfg: &PipelineConfig) -> Result<Trained> {
    weighted_train(synthetic, organic, 1.0, cfg)
}

/// One run on organic followed by synthetic, synthetic examples weighted `alpha`.
pub fn weighted_train(synthetic: &Samples, organic: &Samples, alpha: f64, cfg: &PipelineConfig) -> Result<Trained> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "synthetic weight {alpha} is outside (0, 1]"
        )));
    }
    if organic.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let union = organic.concat(synthetic)?;
    let mut weights = vec![1.0; organic.len()];
    weights.resize(union.len(), alpha);
    model::train(&union, &weights, &cfg.train_cfg_organic)
}

/// Trains under `regime` with the configured synthetic weight.
pub fn train_regime(regime: Regime, synthetic: &Samples, organic: &Samples, cfg: &PipelineConfig) -> Result<Trained> {
    match regime {
        Regime::TwoStage => two_stage_train(synthetic, organic, cfg),
        Regime::Mixed => mixed_train(synthetic, organic, cfg),
        Regime::Weighted => weighted_train(synthetic, organic, cfg.synthetic_weight, cfg),
    }
}

const TOPIC_WORDS: usize = 40;
const SHARED_WORDS: usize = 150;
const NOVEL_WORDS: usize = 400;
const SUBSTITUTION_RATE: f64 = 0.1;

/// Index in `0..n` skewed toward small values.
fn skewed(rng: &mut Rng, n: usize) -> usize {
    let u: f64 = rng.gen();
    ((u * u * n as f64) as usize).min(n - 1)
}

fn toy_sentence(rng: &mut Rng, label: usize, num_classes: usize) -> Vec<String> {
    let len = rng.gen_range(5..=12);
    (0..len)
        .map(|_| {
            let u: f64 = rng.gen();
            if u < 0.3 {
                format!("t{label}_{}", skewed(rng, TOPIC_WORDS))
            } else if u < 0.4 {
                format!("t{}_{}", rng.gen_range(0..num_classes), skewed(rng, TOPIC_WORDS))
            } else {
                format!("s{}", skewed(rng, SHARED_WORDS))
            }
        })
        .collect()
}

/// A seeded text-classification task: every class has its own topic words,
/// all classes share a common vocabulary, and one token in ten is a topic
/// word of a random class.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyTask {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

pub fn make_toy_task(num_classes: usize, sizes: [usize; 3], seed: u64) -> Result<ToyTask> {
    let mut rng = seeded(derive_seed(seed, stream::TASK));
    let mut split = |prefix: &str, n: usize, split: Split| {
        let examples = (0..n)
            .map(|i| {
                let label = rng.gen_range(0..num_classes);
                Example::new(
                    format!("{prefix}-{i:05}"),
                    toy_sentence(&mut rng, label, num_classes),
                    label,
                )
            })
            .collect();
        Dataset::new(examples, num_classes, split)
    };
    Ok(ToyTask {
        train: split("org", sizes[0], Split::Train)?,
        val: split("val", sizes[1], Split::Validation)?,
        test: split("test", sizes[2], Split::Test)?,
    })
}

/// Seeded stand-in for a language-model generator.
///
/// Each candidate either is a token salad of novel and random organic tokens
/// with a random label (probability `ood_rate`), or splices 2 to 4 token
/// windows from organic examples of one class, replaces tokens with novel
/// ones at a fixed rate, and flips its label to another class with
/// probability `noise_rate`.
pub fn make_toy_pool(
    organic: &Dataset,
    pool_size: usize,
    noise_rate: f64,
    ood_rate: f64,
    seed: u64,
) -> Result<Dataset> {
    let k = organic.num_classes();
    let mut by_class: Vec<Vec<&Example>> = vec![Vec::new(); k];
    for ex in organic {
        by_class[ex.label].push(ex);
    }
    let all: Vec<&str> = organic
        .iter()
        .flat_map(|ex| ex.tokens.iter().map(String::as_str))
        .collect();
    let mut rng = seeded(seed);

    let examples = (0..pool_size)
        .map(|i| {
            let id = format!("syn-{i:06}");
            let len = rng.gen_range(5..=12);
            let (tokens, label) = if organic.is_empty() || rng.gen_bool(ood_rate) {
                let tokens = (0..len)
                    .map(|_| match all.choose(&mut rng) {
                        Some(t) if rng.gen_bool(0.5) => t.to_string(),
                        _ => format!("o{}", rng.gen_range(0..NOVEL_WORDS)),
                    })
                    .collect();
                (tokens, rng.gen_range(0..k))
            } else {
                let base = organic.examples()[rng.gen_range(0..organic.len())].label;
                let mut tokens = Vec::with_capacity(len + 4);
                while tokens.len() < len {
                    let src = &by_class[base][rng.gen_range(0..by_class[base].len())].tokens;
                    let width = rng.gen_range(2..=4).min(src.len());
                    let start = rng.gen_range(0..=src.len() - width);
                    for t in &src[start..start + width] {
                        tokens.push(if rng.gen_bool(SUBSTITUTION_RATE) {
                            format!("n{}", rng.gen_range(0..NOVEL_WORDS))
                        } else {
                            t.clone()
                        });
                    }
                }
                let label = if rng.gen_bool(noise_rate) {
                    (base + rng.gen_range(1..k)) % k
                } else {
                    base
                };
                (tokens, label)
            };
            Example::new(id, tokens, label).with_source(Source::Synthetic)
        })
        .collect();
    Dataset::new(examples, k, Split::Pool)
}

/// Data handed to [`run_pipeline`]. Without a pool one is generated.
#[derive(Debug, Clone)]
pub struct PipelineInputs {
    pub organic: Dataset,
    pub val: Dataset,
    pub test: Option<Dataset>,
    pub pool: Option<Dataset>,
}

/// Intermediate results, reported in the order they are produced.
#[derive(Debug, Clone, Copy)]
pub enum Artifact<'a> {
    Vocabulary(&'a Vocabulary),
    Baseline(&'a Trained),
    Pool(&'a Dataset),
    Influence(&'a [InfluenceRecord]),
    Selection(&'a SelectionResult),
    Final(&'a Trained),
    Eval(Split, &'a EvalReport),
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub vocab: Vocabulary,
    pub baseline: Trained,
    /// The pool after optional relabeling.
    pub pool: Dataset,
    pub relabeled: usize,
    pub influence: Option<Vec<InfluenceRecord>>,
    pub selection: SelectionResult,
    pub final_model: Trained,
    pub val_report: EvalReport,
    pub test_report: Option<EvalReport>,
}

/// Vocabulary, baseline, pool, relabeling, scoring, selection, regime
/// training and evaluation, in that order. Each artifact is passed to `sink`
/// as soon as it exists so a failure leaves the earlier ones behind.
pub fn run_pipeline(
    cfg: &PipelineConfig,
    inputs: &PipelineInputs,
    sink: &mut dyn FnMut(Artifact<'_>) -> Result<()>,
) -> Result<PipelineRun> {
    cfg.validate()?;
    let vocab = build_vocabulary(&inputs.organic, cfg.feature_ngram_order, cfg.min_count)?;
    sink(Artifact::Vocabulary(&vocab))?;
    let organic = Samples::from_dataset(&inputs.organic, &vocab);
    let val = Samples::from_dataset(&inputs.val, &vocab);

    let baseline = model::train(&organic, &vec![1.0; organic.len()], &cfg.train_cfg_organic)?;
    sink(Artifact::Baseline(&baseline))?;
    let baseline = baseline.converged_or("baseline")?;

    let generated;
    let pool = match &inputs.pool {
        Some(pool) => pool,
        None => {
            let seed = derive_seed(cfg.seed, stream::POOL);
            generated = make_toy_pool(&inputs.organic, cfg.synthetic_size, cfg.noise_rate, cfg.ood_rate, seed)?;
            &generated
        }
    };
    let (pool, relabeled) = if cfg.relabel {
        let new = relabel(pool, &baseline.params, &vocab);
        let flips = pool.iter().zip(&new).filter(|(a, b)| a.label != b.label).count();
        (new, flips)
    } else {
        (pool.clone(), 0)
    };
    sink(Artifact::Pool(&pool))?;

    let influence = if cfg.strategy.needs_influence() {
        let scorer = InfluenceScorer::new(
            &baseline.params,
            &organic,
            &vec![1.0; organic.len()],
            &val,
            &cfg.influence_config(),
        )?;
        let records = scorer.score(&pool, &vocab)?;
        sink(Artifact::Influence(&records))?;
        check_solver_failures(&records)?;
        Some(records)
    } else {
        None
    };

    let n = cfg.selection_size.unwrap_or_else(|| pool.len().div_ceil(3));
    let selection = select(
        cfg.strategy,
        &pool,
        influence.as_deref(),
        n,
        cfg.ngram_order,
        derive_seed(cfg.seed, stream::SELECT),
    )?;
    sink(Artifact::Selection(&selection))?;

    let synthetic = Samples::from_dataset(&selection.apply(&pool)?, &vocab);
    let final_model = train_regime(cfg.regime, &synthetic, &organic, cfg)?;
    sink(Artifact::Final(&final_model))?;
    let final_model = final_model.converged_or(match cfg.regime {
        Regime::TwoStage => "organic stage",
        Regime::Mixed => "mixed",
        Regime::Weighted => "weighted",
    })?;

    let val_report = evaluate(&final_model.params, &val)?;
    sink(Artifact::Eval(Split::Validation, &val_report))?;
    let test_report = match &inputs.test {
        Some(test) => {
            let report = evaluate(&final_model.params, &Samples::from_dataset(test, &vocab))?;
            sink(Artifact::Eval(Split::Test, &report))?;
            Some(report)
        }
        None => None,
    };

    Ok(PipelineRun {
        vocab,
        baseline,
        pool,
        relabeled,
        influence,
        selection,
        final_model,
        val_report,
        test_report,
    })
}

/// Validation results of the same run with and without relabeling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelabelComparison {
    pub with_relabel: EvalReport,
    pub without_relabel: EvalReport,
}

impl RelabelComparison {
    pub fn prefers_relabel(&self) -> bool {
        self.with_relabel.accuracy > self.without_relabel.accuracy
    }
}

pub fn compare_relabel(cfg: &PipelineConfig, inputs: &PipelineInputs) -> Result<RelabelComparison> {
    let run = |relabel| {
        let cfg = PipelineConfig { relabel, ..cfg.clone() };
        run_pipeline(&cfg, inputs, &mut |_| Ok(())).map(|r| r.val_report)
    };
    Ok(RelabelComparison {
        with_relabel: run(true)?,
        without_relabel: run(false)?,
    })
}

/// The noisy-pool benchmark: 100 organic examples in 3 classes, 100
/// validation, 400 test, and a 400-candidate pool with 40% label noise.
pub mod benchmark {
    use super::*;

    pub const SEED: u64 = 2024;
    pub const NUM_CLASSES: usize = 3;
    pub const ORGANIC: usize = 100;
    pub const VAL: usize = 100;
    pub const TEST: usize = 400;
    pub const POOL: usize = 400;
    pub const NOISE_RATE: f64 = 0.4;
    pub const OOD_RATE: f64 = 0.1;

    pub fn inputs(seed: u64) -> Result<PipelineInputs> {
        let task = make_toy_task(NUM_CLASSES, [ORGANIC, VAL, TEST], seed)?;
        let pool = make_toy_pool(&task.train, POOL, NOISE_RATE, OOD_RATE, derive_seed(seed, stream::POOL))?;
        Ok(PipelineInputs {
            organic: task.train,
            val: task.val,
            test: Some(task.test),
            pool: Some(pool),
        })
    }

    pub fn config(seed: u64) -> PipelineConfig {
        PipelineConfig {
            synthetic_size: POOL,
            noise_rate: NOISE_RATE,
            ood_rate: OOD_RATE,
            relabel: false,
            seed,
            ..PipelineConfig::default()
        }
    }
}
