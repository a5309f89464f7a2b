use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use synsel::corpus::{build_vocabulary, Dataset, Split};
use synsel::influence::{check_solver_failures, hutchinson_trace, InfluenceScorer};
use synsel::io;
use synsel::model::{self, Samples};
use synsel::pipeline::{evaluate, relabel, run_pipeline, Artifact, PipelineInputs};
use synsel::rng::{derive_seed, stream};
use synsel::select::select;
use synsel::{ModelParams, Vocabulary};

use crate::args::*;
use crate::run::{RunConfig, RunDir};

const PARAMS: &str = "params.json";
const VOCAB: &str = "vocab.json";

fn read(path: &Path, num_classes: Option<usize>, split: Split) -> Result<Dataset> {
    Ok(io::read_dataset(path, num_classes)?.with_split(split))
}

fn load_model(dir: &Path) -> Result<(ModelParams, Vocabulary)> {
    let params = io::read_params(&dir.join(PARAMS))?;
    let vocab = io::read_vocabulary(&dir.join(VOCAB))?;
    if vocab.num_features() != params.num_features {
        bail!(
            "{}: vocabulary has {} entries but the model expects {}",
            dir.display(),
            vocab.num_features(),
            params.num_features
        );
    }
    Ok((params, vocab))
}

fn unit(n: usize) -> Vec<f64> {
    vec![1.0; n]
}

pub fn ingest(args: &IngestArgs, run: &mut RunDir) -> Result<()> {
    run.input("train", &args.train);
    let train = read(&args.train, args.classes.num_classes, Split::Train)?;
    let vocab = build_vocabulary(&train, args.ngram, args.min_count)?;
    io::write_dataset(&run.dataset_output("train.jsonl"), &train)?;
    io::write_vocabulary(&run.output(VOCAB), &vocab)?;
    let mut counts = vec![format!("{} train", train.len())];
    for (name, path, split) in [("val", &args.val, Split::Validation), ("pool", &args.pool, Split::Pool)] {
        if let Some(path) = path {
            run.input(name, path);
            let data = read(path, Some(train.num_classes()), split)?;
            io::write_dataset(&run.dataset_output(&format!("{name}.jsonl")), &data)?;
            counts.push(format!("{} {name}", data.len()));
        }
    }
    println!(
        "ingested {} examples; {} features",
        counts.join(", "),
        vocab.num_features()
    );
    Ok(())
}

pub fn train(args: &TrainArgs, run: &mut RunDir) -> Result<()> {
    let cfg = RunConfig::load_or_default(args.config.as_deref())?;
    run.config(args.config.as_deref());
    let Some(train_path) = args.train.as_ref().or(cfg.train.as_ref()) else {
        bail!("no training set: pass --train or set \"train\" in the config");
    };
    run.input("train", train_path);
    let train = read(train_path, args.classes.num_classes.or(cfg.num_classes), Split::Train)?;
    let vocab = build_vocabulary(&train, cfg.pipeline.feature_ngram_order, cfg.pipeline.min_count)?;
    let data = Samples::from_dataset(&train, &vocab);
    let trained = model::train(&data, &unit(data.len()), &cfg.pipeline.train_cfg_organic)?;
    io::write_vocabulary(&run.output(VOCAB), &vocab)?;
    io::write_params(&run.output(PARAMS), &trained.params)?;
    println!(
        "trained on {} examples, {} features, {} classes: {} iterations, gradient norm {:.3e}",
        data.len(),
        vocab.num_features(),
        train.num_classes(),
        trained.iterations,
        trained.grad_norm
    );
    if let Some(val_path) = args.val.as_ref().or(cfg.val.as_ref()) {
        run.input("val", val_path);
        let val = read(val_path, Some(train.num_classes()), Split::Validation)?;
        let report = evaluate(&trained.params, &Samples::from_dataset(&val, &vocab))?;
        io::write_json(&run.output("eval_validation.json"), &report)?;
        println!(
            "validation accuracy {:.4} ({}/{})",
            report.accuracy, report.num_correct, report.num_examples
        );
    }
    trained.converged_or("train")?;
    Ok(())
}

pub fn score(args: &ScoreArgs, run: &mut RunDir) -> Result<()> {
    let cfg = RunConfig::load_or_default(args.config.as_deref())?;
    run.config(args.config.as_deref());
    let seed = args.seed.unwrap_or(cfg.pipeline.seed);
    run.seed(seed);
    for (name, path) in [
        ("model", &args.model),
        ("train", &args.train),
        ("val", &args.val),
        ("pool", &args.pool),
    ] {
        run.input(name, path);
    }
    let (params, vocab) = load_model(&args.model)?;
    let k = Some(params.num_classes);
    let train = Samples::from_dataset(&read(&args.train, k, Split::Train)?, &vocab);
    let val = Samples::from_dataset(&read(&args.val, k, Split::Validation)?, &vocab);
    let pool = read(&args.pool, k, Split::Pool)?;

    let mut icfg = cfg.pipeline.influence;
    if let Some(m) = args.method {
        icfg.method = m.into();
    }
    icfg.seed = derive_seed(seed, stream::LISSA);
    let scorer = InfluenceScorer::new(&params, &train, &unit(train.len()), &val, &icfg)?;
    let records = scorer.score(&pool, &vocab)?;
    io::write_influence_report(&run.output("influence.jsonl"), &records)?;
    let detrimental = records.iter().filter(|r| r.detrimental).count();
    println!(
        "scored {} candidates with {}: {} detrimental, {} kept (solve residual {:.2e})",
        records.len(),
        icfg.method,
        detrimental,
        records.len() - detrimental,
        scorer.val_solve().residual
    );
    check_solver_failures(&records)?;
    Ok(())
}

pub fn select_cmd(args: &SelectArgs, run: &mut RunDir) -> Result<()> {
    run.input("pool", &args.pool);
    run.seed(args.seed);
    let pool = read(&args.pool, args.classes.num_classes, Split::Pool)?;
    let records = match &args.influence_report {
        Some(path) => {
            run.input("influence_report", path);
            Some(io::read_influence_report(path)?)
        }
        None => None,
    };
    let strategy = args.strategy.into();
    let result = select(
        strategy,
        &pool,
        records.as_deref(),
        args.n,
        args.ngram,
        derive_seed(args.seed, stream::SELECT),
    )?;
    io::write_json(&run.output("selection.json"), &result)?;
    println!(
        "selected {} of {} candidates with {strategy}; coverage {} unique {}-grams",
        result.chosen_ids.len(),
        pool.len(),
        result.coverage,
        args.ngram
    );
    if result.shortfall {
        println!(
            "shortfall: only {} non-detrimental candidates for n = {}",
            result.chosen_ids.len(),
            args.n
        );
    }
    Ok(())
}

pub fn relabel_cmd(args: &RelabelArgs, run: &mut RunDir) -> Result<()> {
    run.input("model", &args.model);
    run.input("pool", &args.pool);
    let (params, vocab) = load_model(&args.model)?;
    let pool = read(&args.pool, Some(params.num_classes), Split::Pool)?;
    let relabeled = relabel(&pool, &params, &vocab);
    io::write_dataset(&run.dataset_output("pool.jsonl"), &relabeled)?;
    let flips = pool.iter().zip(&relabeled).filter(|(a, b)| a.label != b.label).count();
    println!("relabeled {} candidates: {flips} labels changed", pool.len());
    Ok(())
}

pub fn pipeline(args: &PipelineArgs, run: &mut RunDir) -> Result<()> {
    let mut cfg = RunConfig::load(&args.config)?;
    run.config(Some(&args.config));
    apply_overrides(&mut cfg, args);
    cfg.pipeline.validate()?;
    run.seed(cfg.pipeline.seed);
    io::write_json(&run.output("config.json"), &cfg)?;

    let Some(train_path) = cfg.train.clone() else {
        bail!("the config names no \"train\" dataset");
    };
    let Some(val_path) = cfg.val.clone() else {
        bail!("the config names no \"val\" dataset");
    };
    run.input("train", &train_path);
    run.input("val", &val_path);
    let organic = read(&train_path, cfg.num_classes, Split::Train)?;
    let k = Some(organic.num_classes());
    let val = read(&val_path, k, Split::Validation)?;
    let mut load = |name, path: &Option<PathBuf>, split| -> Result<Option<Dataset>> {
        path.as_ref()
            .map(|p| {
                run.input(name, p);
                read(p, k, split)
            })
            .transpose()
    };
    let test = load("test", &cfg.test, Split::Test)?;
    let pool = load("pool", &cfg.pool, Split::Pool)?;
    let inputs = PipelineInputs {
        organic,
        val,
        test,
        pool,
    };

    let result = run_pipeline(&cfg.pipeline, &inputs, &mut |artifact| match artifact {
        Artifact::Vocabulary(v) => io::write_vocabulary(&run.output(VOCAB), v),
        Artifact::Baseline(t) => io::write_params(&run.output("baseline_params.json"), &t.params),
        Artifact::Pool(p) => io::write_dataset(&run.dataset_output("pool.jsonl"), p),
        Artifact::Influence(r) => io::write_influence_report(&run.output("influence.jsonl"), r),
        Artifact::Selection(s) => io::write_json(&run.output("selection.json"), s),
        Artifact::Final(t) => io::write_params(&run.output(PARAMS), &t.params),
        Artifact::Eval(split, report) => {
            let name = match split {
                Split::Test => "eval_test.json",
                _ => "eval_validation.json",
            };
            io::write_json(&run.output(name), report)
        }
    })
    .context("pipeline failed; artifacts written so far are kept")?;

    let p = &cfg.pipeline;
    println!("pool {} candidates ({} relabeled)", result.pool.len(), result.relabeled);
    if let Some(records) = &result.influence {
        let detrimental = records.iter().filter(|r| r.detrimental).count();
        println!(
            "influence: {detrimental} detrimental, {} kept",
            records.len() - detrimental
        );
    }
    println!(
        "selected {} with {}; coverage {} unique {}-grams",
        result.selection.chosen_ids.len(),
        p.strategy,
        result.selection.coverage,
        p.ngram_order
    );
    print!(
        "{} model: validation accuracy {:.4}",
        p.regime, result.val_report.accuracy
    );
    match &result.test_report {
        Some(t) => println!(", test accuracy {:.4}", t.accuracy),
        None => println!(),
    }
    Ok(())
}

fn apply_overrides(cfg: &mut RunConfig, args: &PipelineArgs) {
    let p = &mut cfg.pipeline;
    if let Some(path) = &args.train {
        cfg.train = Some(path.clone());
    }
    if let Some(path) = &args.val {
        cfg.val = Some(path.clone());
    }
    if let Some(path) = &args.pool {
        cfg.pool = Some(path.clone());
    }
    if let Some(s) = args.strategy {
        p.strategy = s.into();
    }
    if let Some(n) = args.n {
        p.selection_size = Some(n);
    }
    if let Some(n) = args.ngram {
        p.ngram_order = n;
    }
    if let Some(seed) = args.seed {
        p.seed = seed;
    }
    if let Some(m) = args.method {
        p.influence.method = m.into();
    }
    if let Some(r) = args.relabel {
        p.relabel = r == Switch::On;
    }
    if let Some(r) = args.regime {
        p.regime = r.into();
    }
    if let Some(a) = args.alpha {
        p.synthetic_weight = a;
    }
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let (params, vocab) = load_model(&args.model)?;
    let data = read(&args.data, Some(params.num_classes), Split::Test)?;
    let report = evaluate(&params, &Samples::from_dataset(&data, &vocab))?;
    if let Some(out) = &args.out {
        io::write_json(out, &report)?;
    }
    println!(
        "accuracy {:.4} ({}/{}), mean loss {:.6}",
        report.accuracy, report.num_correct, report.num_examples, report.mean_loss
    );
    Ok(())
}

pub fn trace(args: &TraceArgs) -> Result<()> {
    let (params, vocab) = load_model(&args.model)?;
    let train = Samples::from_dataset(&read(&args.train, Some(params.num_classes), Split::Train)?, &vocab);
    let estimate = hutchinson_trace(
        &params,
        &train,
        &unit(train.len()),
        args.probes,
        derive_seed(args.seed, stream::TRACE),
    )?;
    println!("Hessian trace estimate {estimate:.6e} from {} probes", args.probes);
    Ok(())
}
