use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use euphem_core::classifier::Variant;
use euphem_core::corpus::{self, FoldSet, LookupMode, Schema};
use euphem_core::experiments::{self, DataContext, MetricsArtifact, PredictionRecord, TrainConfig};
use euphem_core::imagery::{ImageCache, ImageryIndex};
use euphem_core::metrics::{self, SignificanceResult};
use euphem_core::report::{self, ImageryRow};
use euphem_core::util;
use euphem_curation::{CurationService, ServiceConfig};

use crate::args::*;
use crate::data;
use crate::UsageError;

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Prepare(a) => prepare(a),
        Command::Imagery(a) => imagery(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Predict(a) => predict(a),
        Command::Significance(a) => significance(a),
        Command::Report(a) => report(a),
        Command::Serve(a) => serve(a),
    }
}

/// Refuses to write over one of the command's inputs.
fn guard_output(out: &Path, inputs: &[&Path]) -> Result<()> {
    let canon = |p: &Path| std::fs::canonicalize(p).ok();
    if let Some(o) = canon(out) {
        if inputs.iter().any(|i| canon(i).as_ref() == Some(&o)) {
            return Err(UsageError(format!("--out {} would overwrite an input file", out.display())).into());
        }
    }
    Ok(())
}

fn prepare(a: PrepareArgs) -> Result<()> {
    let lexicon = data::lexicon(&a.lexicon)?;
    let raw = corpus::load_examples(&a.data, Schema::Raw { labeled: !a.unlabeled })
        .with_context(|| format!("reading --data {}", a.data.display()))?;
    let examples = corpus::preprocess_all(&raw)?;
    let mode = if a.lenient { LookupMode::Lenient } else { LookupMode::Strict };
    let coverage = corpus::coverage(&examples, &lexicon, mode);
    if !coverage.unresolved.is_empty() {
        if a.lenient {
            log::warn!("pet_ids without a description: {}", coverage.unresolved.join(", "));
        } else {
            bail!(euphem_core::Error::UnknownPet(coverage.unresolved.join(", ")));
        }
    }
    let examples_path = a.out.join("examples.jsonl");
    let folds_path = a.out.join("folds.json");
    guard_output(&examples_path, &[&a.data])?;
    guard_output(&folds_path, &[&a.data])?;
    util::write_atomic(&examples_path, &util::to_json_lines(&examples)?)?;
    println!(
        "{} examples, {} distinct PETs -> {}",
        examples.len(),
        coverage.distinct_pets,
        examples_path.display()
    );
    if !a.unlabeled {
        let folds = corpus::make_folds(&examples, a.folds, a.seed)?;
        let sizes: Vec<String> = folds.iter().map(|f| f.val_ids.len().to_string()).collect();
        FoldSet {
            seed: a.seed,
            n_folds: a.folds,
            folds,
        }
        .save(&folds_path)?;
        println!("{} folds (validation sizes {}) -> {}", a.folds, sizes.join(", "), folds_path.display());
    }
    Ok(())
}

fn imagery(a: ImageryArgs) -> Result<()> {
    let lexicon = data::lexicon(&a.lexicon)?;
    let engine = data::engine(&a.settings, &a.out)?;
    let store = engine.build_store(&lexicon)?;
    println!(
        "{} texts, K={}, dim={} -> {}",
        store.embeddings.len(),
        a.settings.k,
        store.dim,
        a.out.display()
    );
    Ok(())
}

fn merge(base: &mut serde_json::Value, overrides: serde_json::Value) {
    if let (Some(b), serde_json::Value::Object(o)) = (base.as_object_mut(), overrides) {
        for (k, v) in o {
            b.insert(k, v);
        }
    }
}

fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let file: serde_json::Value = match &a.config {
        Some(path) => {
            let v: serde_json::Value =
                util::read_json(path).with_context(|| format!("reading --config {}", path.display()))?;
            if !v.is_object() {
                return Err(UsageError(format!("--config {} must hold a JSON object", path.display())).into());
            }
            v
        }
        None => serde_json::json!({}),
    };
    let backend = a
        .backend
        .map(|b| b.name().to_string())
        .or_else(|| file.get("backend").and_then(|b| b.as_str()).map(String::from))
        .unwrap_or_else(|| "tiny-base".into());
    euphem_core::backend::TinyLmConfig::by_name(&backend).map_err(|e| UsageError(format!("backend: {e}")))?;
    let recipe = match backend.as_str() {
        "tiny-large" | "large" => TrainConfig::reference_large(a.variant),
        _ => TrainConfig::reference_base(a.variant),
    };
    let mut value = serde_json::to_value(recipe)?;
    merge(&mut value, file);
    let mut config: TrainConfig = serde_json::from_value(value).map_err(|e| UsageError(format!("--config: {e}")))?;
    config.variant = a.variant;
    config.backend = backend;
    if let Some(s) = a.seed {
        config.seed = s;
    }
    if let Some(e) = a.epochs {
        config.max_epochs = e;
    }
    if let Some(lr) = a.lr {
        config.learning_rate = lr;
    }
    if let Some(b) = a.batch_size {
        config.batch_size = b;
    }
    if let Some(e) = a.ensemble {
        config.ensemble = e.into();
    }
    config.validate().map_err(|e| UsageError(e.to_string()))?;
    Ok(config)
}

fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    util::write_atomic(path, &util::to_json_lines(records)?)?;
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let mut config = train_config(&a)?;
    let lexicon = data::lexicon(&a.lexicon)?;
    let examples = data::examples(&a.data, true)?;
    let fold_set = FoldSet::load(&a.folds).with_context(|| format!("reading --folds {}", a.folds.display()))?;
    config.n_folds = fold_set.n_folds;
    let folds: Vec<_> = match a.fold {
        Some(i) => {
            let f: Vec<_> = fold_set.folds.iter().filter(|f| f.index == i).cloned().collect();
            if f.is_empty() {
                return Err(UsageError(format!("--fold {i} is not in {}", a.folds.display())).into());
            }
            f
        }
        None => fold_set.folds.clone(),
    };
    let store = if config.variant.uses_imagery() {
        Some(data::imagery_store(&a.imagery)?)
    } else {
        None
    };
    let test = match &a.test {
        Some(p) => data::examples(p, false)?,
        None => Vec::new(),
    };
    let ctx = DataContext {
        lexicon: &lexicon,
        imagery: store.as_ref(),
    };
    let data_digest = experiments::data_digest(&examples);
    log::info!("training {} fold(s) of {} ({})", folds.len(), config.variant, config.backend);
    let (run, outcomes) = experiments::run_cv(&config, &folds, &examples, &test, ctx)?;

    for o in &outcomes {
        o.checkpoint(&config, &data_digest)
            .save(&a.out.join("checkpoints").join(format!("fold-{}.json", o.fold)))?;
        println!("fold {}: best epoch {}, validation F1 {:.4}", o.fold, o.best_epoch, o.best_val_f1);
    }
    let metrics = MetricsArtifact::new(&config, data_digest, &run, &outcomes)?;
    if let Some(ens) = &metrics.ensemble {
        let records: Vec<PredictionRecord> = ens
            .ids
            .iter()
            .zip(&ens.p_hat)
            .zip(&ens.y_hat)
            .map(|((id, &p_hat), &y_hat)| PredictionRecord {
                id: id.clone(),
                p_hat,
                y_hat,
            })
            .collect();
        write_predictions(&a.out.join("test_predictions.jsonl"), &records)?;
    }
    metrics.save(&a.out.join("metrics.json"))?;
    println!(
        "validation F1 {:.4} ± {:.4} over {} fold(s) -> {}",
        metrics.mean_f1,
        metrics.std_f1,
        metrics.per_fold_f1.len(),
        a.out.display()
    );
    Ok(())
}

fn score(s: &ScoringArgs, examples: &[corpus::Example]) -> Result<Vec<PredictionRecord>> {
    let Some(dir) = &s.checkpoints else {
        return Err(UsageError("--checkpoints is required".into()).into());
    };
    let classifiers = data::classifiers(dir)?;
    let lexicon = data::lexicon(&s.lexicon)?;
    let store = if classifiers[0].config.variant == Variant::DescImag {
        Some(data::imagery_store(&s.imagery)?)
    } else {
        None
    };
    let ctx = DataContext {
        lexicon: &lexicon,
        imagery: store.as_ref(),
    };
    Ok(experiments::predict(&classifiers, examples, ctx, s.ensemble.into())?)
}

fn predict(a: PredictArgs) -> Result<()> {
    guard_output(&a.out, &[&a.data])?;
    let examples = data::examples(&a.data, false)?;
    let records = score(&a.scoring, &examples)?;
    write_predictions(&a.out, &records)?;
    println!("{} predictions -> {}", records.len(), a.out.display());
    Ok(())
}

fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading --predictions {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| {
                euphem_core::Error::Malformed {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: e.to_string(),
                }
                .into()
            })
        })
        .collect()
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let gold = data::examples(&a.data, true)?;
    let predictions = match &a.predictions {
        Some(p) => read_predictions(p)?,
        None => score(&a.scoring, &gold)?,
    };
    let by_id: HashMap<&str, u8> = predictions.iter().map(|p| (p.id.as_str(), p.y_hat)).collect();
    let mut pred = Vec::with_capacity(gold.len());
    let mut labels = Vec::with_capacity(gold.len());
    for e in &gold {
        let y = by_id
            .get(e.id.as_str())
            .with_context(|| format!("no prediction for example `{}`", e.id))?;
        pred.push(*y);
        labels.push(e.label.expect("labeled"));
    }
    let f1 = metrics::f1(&pred, &labels)?;
    println!("F1 = {f1:.4} (n = {})", gold.len());
    Ok(())
}

fn significance(a: SignificanceArgs) -> Result<()> {
    let load = |p: &PathBuf| MetricsArtifact::load(p).with_context(|| format!("reading {}", p.display()));
    let (ma, mb) = (load(&a.a)?, load(&a.b)?);
    let result = experiments::compare_runs(&ma, &mb)?;
    let json = serde_json::to_string_pretty(&result)?;
    match &a.out {
        Some(out) => {
            guard_output(out, &[&a.a, &a.b])?;
            util::write_json_pretty(out, &result)?;
            println!("t = {:.4}, p = {:.4} -> {}", result.t_statistic, result.p_value, out.display());
        }
        None => println!("{json}"),
    }
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let gold: Option<HashMap<String, u8>> = match &a.labels {
        Some(p) => Some(
            data::examples(p, true)?
                .into_iter()
                .map(|e| (e.id, e.label.expect("labeled")))
                .collect(),
        ),
        None => None,
    };
    let mut runs = Vec::new();
    for p in &a.metrics {
        let mut m = MetricsArtifact::load(p).with_context(|| format!("reading {}", p.display()))?;
        if let Some(g) = &gold {
            m.score_test(g)?;
        }
        runs.push(m);
    }
    let mut sig = Vec::new();
    for p in &a.significance {
        let s: SignificanceResult = util::read_json(p)?;
        let label = p.file_stem().and_then(|s| s.to_str()).unwrap_or("comparison").to_string();
        sig.push((label, s));
    }
    let mut rows = Vec::new();
    if let Some(cache_dir) = &a.imagery {
        let lexicon = data::lexicon(&a.lexicon)?;
        let index = ImageryIndex::load(cache_dir)?;
        let cache = ImageCache::new(cache_dir);
        let sheet = |text: &str| {
            index
                .entries
                .get(text)
                .map(|e| cache.sheet_path(&e.sheet).display().to_string())
        };
        let entries: Vec<_> = if a.pets.is_empty() {
            lexicon.entries().iter().collect()
        } else {
            a.pets
                .iter()
                .map(|id| lexicon.get(id).ok_or_else(|| euphem_core::Error::UnknownPet(id.clone())))
                .collect::<Result<_, _>>()?
        };
        for e in entries {
            rows.push(ImageryRow {
                term: e.term.clone(),
                description: e.description.clone(),
                term_sheet: sheet(&e.term),
                description_sheet: sheet(&e.description),
            });
        }
    }
    let text = report::render_report(&runs, &sig, &rows);
    match &a.out {
        Some(out) => {
            util::write_atomic(out, text.as_bytes())?;
            println!("report -> {}", out.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let lexicon_path = match &a.lexicon.lexicon {
        Some(p) => p.clone(),
        None => {
            let p = a.state_dir.join("base-lexicon.json");
            if !p.exists() {
                corpus::Lexicon::bundled().save(&p)?;
            }
            p
        }
    };
    let examples = match &a.data {
        Some(p) => data::examples(p, false)?,
        None => Vec::new(),
    };
    let folds = a
        .folds
        .as_ref()
        .map(|p| FoldSet::load(p).with_context(|| format!("reading --folds {}", p.display())))
        .transpose()?;
    let imagery_root = a.imagery.clone().unwrap_or_else(|| a.state_dir.join("imagery"));
    let engine = data::engine(&a.settings, &imagery_root)?;
    let service = CurationService::open(ServiceConfig {
        lexicon: lexicon_path,
        state_dir: a.state_dir.clone(),
        examples,
        folds,
        checkpoints: a.checkpoints.clone(),
        imagery: Some(engine),
    })?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(euphem_curation::http::serve(Arc::new(service), &a.addr))?;
    Ok(())
}
