mod support;

use support::*;
use synsel::corpus::{build_vocabulary, featurize, Dataset, Vocabulary};
use synsel::influence::score_pool;
use synsel::model::{train, weighted_loss, ModelParams, Samples, TrainConfig};
use synsel::pipeline::*;
use synsel::select::Strategy;

fn bits(p: &ModelParams) -> Vec<u64> {
    p.weights.iter().map(|w| w.to_bits()).collect()
}

fn toy() -> (ToyTask, Vocabulary, Samples) {
    let task = make_toy_task(3, [60, 40, 40], 17).unwrap();
    let vocab = build_vocabulary(&task.train, 1, 1).unwrap();
    let organic = Samples::from_dataset(&task.train, &vocab);
    (task, vocab, organic)
}

fn synthetic(task: &ToyTask, vocab: &Vocabulary, size: usize, noise: f64) -> Samples {
    let pool = make_toy_pool(&task.train, size, noise, 0.1, 99).unwrap();
    Samples::from_dataset(&pool, vocab)
}

fn baseline(organic: &Samples) -> ModelParams {
    train(organic, &vec![1.0; organic.len()], &TrainConfig::default())
        .unwrap()
        .params
}

#[test]
fn unit_weight_is_mixing() {
    let (task, vocab, organic) = toy();
    let syn = synthetic(&task, &vocab, 50, 0.3);
    let cfg = PipelineConfig::default();
    let mixed = mixed_train(&syn, &organic, &cfg).unwrap();
    let weighted = weighted_train(&syn, &organic, 1.0, &cfg).unwrap();
    assert!(mixed.converged);
    assert_eq!(bits(&mixed.params), bits(&weighted.params));
}

#[test]
fn empty_synthetic_set_reduces_to_plain_training() {
    let (_, _, organic) = toy();
    let cfg = PipelineConfig::default();
    let empty = organic.subset(&[]);
    let plain = bits(&baseline(&organic));
    assert_eq!(bits(&two_stage_train(&empty, &organic, &cfg).unwrap().params), plain);
    assert_eq!(bits(&mixed_train(&empty, &organic, &cfg).unwrap().params), plain);
}

#[test]
fn vanishing_synthetic_weight_recovers_organic_optimum() {
    let (task, vocab, organic) = toy();
    let syn = synthetic(&task, &vocab, 80, 0.4);
    let cfg = PipelineConfig::default();
    let tiny = weighted_train(&syn, &organic, 1e-9, &cfg).unwrap().params;
    let plain = baseline(&organic);
    let gap = tiny
        .weights
        .iter()
        .zip(&plain.weights)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(gap < 1e-5, "max abs difference {gap:e}");
}

#[test]
fn half_weight_matches_newton_oracle() {
    let (task, vocab, organic) = toy();
    let syn = synthetic(&task, &vocab, 30, 0.3);
    let cfg = PipelineConfig::default();
    let got = weighted_train(&syn, &organic, 0.5, &cfg).unwrap().params;

    let union = organic.concat(&syn).unwrap();
    let mut weights = vec![1.0; organic.len()];
    weights.resize(union.len(), 0.5);
    let dense = Dense::of(&got);
    let xs = dense_features(&union);
    let theta = dense.newton(&xs, &union.labels, &weights, 1e-13);
    let oracle = dense.objective(&theta, &xs, &union.labels, &weights);
    let loss = weighted_loss(&got, &union, &weights).unwrap();
    assert!((loss - oracle).abs() < 1e-6, "{loss} vs {oracle}");
}

#[test]
fn synthetic_equal_to_organic_lands_on_the_same_optimum() {
    let (_, _, organic) = toy();
    let cfg = PipelineConfig::default();
    let staged = two_stage_train(&organic, &organic, &cfg).unwrap().params;
    assert!(rel_err(&staged.weights, &baseline(&organic).weights) < 1e-6);
}

#[test]
fn duplicated_organic_as_synthetic_is_mean_invariant() {
    let (_, _, organic) = toy();
    let cfg = PipelineConfig::default();
    let mixed = mixed_train(&organic, &organic, &cfg).unwrap().params;
    assert!(rel_err(&mixed.weights, &baseline(&organic).weights) < 1e-6);
}

#[test]
fn relabel_flip_rate_is_model_disagreement() {
    let (task, vocab, organic) = toy();
    let params = baseline(&organic);
    let pool = make_toy_pool(&task.train, 300, 0.3, 0.1, 5).unwrap();
    let relabeled = relabel(&pool, &params, &vocab);

    let dense = Dense::of(&params);
    let d = vocab.num_features();
    let disagreements = pool
        .iter()
        .filter(|ex| {
            let x = featurize(ex, &vocab).to_dense(d);
            let logits: Vec<f64> = (0..dense.k)
                .map(|c| (0..d).map(|j| params.weights[c * d + j] * x[j]).sum())
                .collect();
            let mut best = 0;
            for (c, &l) in logits.iter().enumerate() {
                if l > logits[best] {
                    best = c;
                }
            }
            best != ex.label
        })
        .count();
    let flips = pool.iter().zip(&relabeled).filter(|(a, b)| a.label != b.label).count();
    assert_eq!(flips, disagreements);
    assert!(flips > 0);
    assert_eq!(relabel(&relabeled, &params, &vocab), relabeled);
}

#[test]
fn evaluation_bounds_and_duplication_invariance() {
    let (task, vocab, organic) = toy();
    let params = baseline(&organic);
    let val = Samples::from_dataset(&task.val, &vocab);
    let once = evaluate(&params, &val).unwrap();
    let twice = evaluate(&params, &val.concat(&val).unwrap()).unwrap();
    assert_eq!(once.accuracy, twice.accuracy);
    assert!((once.mean_loss - twice.mean_loss).abs() < 1e-12);
    assert!((0.0..=1.0).contains(&once.accuracy) && once.mean_loss >= 0.0);
    assert_eq!(once.accuracy, once.num_correct as f64 / once.num_examples as f64);
    // The training set is separable at this size, so the fitted model is perfect on it.
    assert_eq!(evaluate(&params, &organic).unwrap().accuracy, 1.0);
}

#[test]
fn clean_copies_of_organic_are_mostly_kept() {
    let (task, vocab, organic) = toy();
    let params = baseline(&organic);
    let val = Samples::from_dataset(&task.val, &vocab);
    let copies: Vec<_> = task
        .train
        .iter()
        .map(|ex| {
            let mut c = ex.clone();
            c.id = format!("copy-{}", ex.id);
            c
        })
        .collect();
    let pool = Dataset::new(copies, 3, synsel::corpus::Split::Pool).unwrap();
    let records = score_pool(
        &params,
        &organic,
        &vec![1.0; organic.len()],
        &val,
        &pool,
        &vocab,
        &Default::default(),
    )
    .unwrap();
    let kept = records.iter().filter(|r| !r.detrimental).count();
    assert!(kept * 2 >= records.len(), "{kept} of {} kept", records.len());
}

fn small_inputs() -> PipelineInputs {
    let task = make_toy_task(3, [50, 30, 30], 8).unwrap();
    PipelineInputs {
        organic: task.train,
        val: task.val,
        test: Some(task.test),
        pool: None,
    }
}

fn small_config() -> PipelineConfig {
    PipelineConfig {
        synthetic_size: 90,
        seed: 12,
        ..PipelineConfig::default()
    }
}

fn fingerprint(run: &PipelineRun) -> String {
    // Debug prints floats in shortest round-trip form, so equal strings mean equal bits.
    format!(
        "{:?}",
        (
            run.vocab.ngrams(),
            bits(&run.baseline.params),
            run.pool.examples(),
            &run.influence,
            &run.selection,
            bits(&run.final_model.params),
            &run.val_report,
            &run.test_report,
        )
    )
}

#[test]
fn pipeline_is_reproducible_across_thread_counts() {
    let inputs = small_inputs();
    let cfg = small_config();
    let on = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| fingerprint(&run_pipeline(&cfg, &inputs, &mut |_| Ok(())).unwrap()))
    };
    let one = on(1);
    assert_eq!(one, on(1));
    assert_eq!(one, on(4));
}

#[test]
fn pipeline_reports_artifacts_in_order() {
    let mut seen = Vec::new();
    let run = run_pipeline(&small_config(), &small_inputs(), &mut |a| {
        seen.push(match a {
            Artifact::Vocabulary(_) => "vocab",
            Artifact::Baseline(_) => "baseline",
            Artifact::Pool(_) => "pool",
            Artifact::Influence(_) => "influence",
            Artifact::Selection(_) => "selection",
            Artifact::Final(_) => "final",
            Artifact::Eval(..) => "eval",
        });
        Ok(())
    })
    .unwrap();
    assert_eq!(
        seen,
        [
            "vocab",
            "baseline",
            "pool",
            "influence",
            "selection",
            "final",
            "eval",
            "eval"
        ]
    );
    assert_eq!(run.selection.chosen_ids.len(), 30);
    assert_eq!(run.pool.len(), 90);
}

#[test]
fn pipeline_without_synthetic_data_is_the_baseline() {
    let cfg = PipelineConfig {
        synthetic_size: 0,
        strategy: Strategy::Random,
        ..small_config()
    };
    let inputs = small_inputs();
    let run = run_pipeline(&cfg, &inputs, &mut |_| Ok(())).unwrap();
    assert!(run.selection.chosen_ids.is_empty());
    let organic = Samples::from_dataset(&inputs.organic, &run.vocab);
    assert_eq!(bits(&run.final_model.params), bits(&baseline(&organic)));
}

#[test]
fn baseline_non_convergence_is_tagged() {
    let cfg = PipelineConfig {
        train_cfg_organic: TrainConfig {
            max_iters: 3,
            ..TrainConfig::default()
        },
        ..small_config()
    };
    let err = run_pipeline(&cfg, &small_inputs(), &mut |_| Ok(())).unwrap_err();
    assert!(
        matches!(err, synsel::error::Error::NonConvergence { stage: "baseline", .. }),
        "{err}"
    );
}

#[test]
fn relabel_comparison_runs_both_variants() {
    let cmp = compare_relabel(&small_config(), &small_inputs()).unwrap();
    for r in [&cmp.with_relabel, &cmp.without_relabel] {
        assert_eq!(r.num_examples, 30);
    }
}
