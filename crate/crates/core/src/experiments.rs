//! Training protocol: per-fold fine-tuning with best-epoch selection,
//! rotating-fold cross-validation, test-set ensembling.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{TinyLm, TinyLmConfig};
use crate::classifier::{
    decide, Checkpoint, CheckpointManifest, Classifier, ClassifierConfig, EncodedExample, ImageryPair, Variant,
    DEFAULT_THRESHOLD,
};
use crate::corpus::{Example, Fold, Lexicon, LookupMode, DEFAULT_N_FOLDS};
use crate::error::{Error, Result};
use crate::imagery::ImageryStore;
use crate::metrics::{self, EnsembleMethod, SignificanceResult};
use crate::optim::AdamW;
use crate::prompting::{Prompt, PromptTemplate};
use crate::util;

/// Imagery dimension recorded for variants that take no imagery.
pub const DEFAULT_IMAGERY_DIM: usize = 768;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub variant: Variant,
    pub backend: String,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    /// Recorded for reproduction recipes; the CPU backend always runs in f64.
    pub mixed_precision: bool,
    pub seed: u64,
    pub n_folds: usize,
    pub threshold: f64,
    pub max_tokens: usize,
    pub ensemble: EnsembleMethod,
    #[serde(default)]
    pub template: PromptTemplate,
}

impl TrainConfig {
    /// Reference recipe for the base-size backend.
    pub fn reference_base(variant: Variant) -> Self {
        TrainConfig {
            variant,
            backend: "tiny-base".into(),
            learning_rate: 5e-6,
            max_epochs: 50,
            batch_size: 16,
            weight_decay: 0.01,
            mixed_precision: true,
            seed: 0,
            n_folds: DEFAULT_N_FOLDS,
            threshold: DEFAULT_THRESHOLD,
            max_tokens: 128,
            ensemble: EnsembleMethod::MeanProbability,
            template: PromptTemplate::default(),
        }
    }

    /// Reference recipe for the large backend.
    pub fn reference_large(variant: Variant) -> Self {
        TrainConfig {
            backend: "tiny-large".into(),
            learning_rate: 3e-6,
            ..Self::reference_base(variant)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::InvalidArgument("learning_rate must be positive".into()));
        }
        if self.max_epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("max_epochs and batch_size must be at least 1".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::InvalidArgument("weight_decay must be non-negative".into()));
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        util::sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }
}

/// Digest over ids, sentences and labels of a prepared dataset.
pub fn data_digest(examples: &[Example]) -> String {
    util::digest_parts(examples.iter().flat_map(|e| {
        [
            e.id.clone().into_bytes(),
            e.sentence.clone().into_bytes(),
            vec![e.label.unwrap_or(u8::MAX)],
        ]
    }))
}

pub fn prompt_for(example: &Example, lexicon: &Lexicon, variant: Variant, template: &PromptTemplate) -> Result<Prompt> {
    let entry = lexicon
        .get(&example.pet_id)
        .ok_or_else(|| Error::UnknownPet(example.pet_id.clone()))?;
    template.build(variant.prompt_variant(), entry, example)
}

/// Term and description vectors for the example's PET.
pub fn imagery_for<'a>(example: &Example, lexicon: &Lexicon, store: &'a ImageryStore) -> Result<ImageryPair<'a>> {
    let entry = lexicon
        .get(&example.pet_id)
        .ok_or_else(|| Error::UnknownPet(example.pet_id.clone()))?;
    let lookup = |text: &str| {
        store.get(text).map(|e| e.vector.as_slice()).ok_or_else(|| {
            Error::InvalidArgument(format!("imagery cache has no embedding for `{text}`"))
        })
    };
    Ok(ImageryPair {
        term: lookup(&entry.term)?,
        description: lookup(&entry.description)?,
    })
}

/// Everything needed to turn examples into model inputs.
#[derive(Clone, Copy)]
pub struct DataContext<'a> {
    pub lexicon: &'a Lexicon,
    pub imagery: Option<&'a ImageryStore>,
}

impl<'a> DataContext<'a> {
    fn check_variant(&self, variant: Variant) -> Result<()> {
        match (variant.uses_imagery(), self.imagery.is_some()) {
            (true, false) => Err(Error::InvalidArgument("desc_imag needs an imagery store".into())),
            (false, true) => Err(Error::InvalidArgument(format!("variant {variant} takes no imagery"))),
            _ => Ok(()),
        }
    }

    pub fn encode(&self, classifier: &Classifier<TinyLm>, example: &Example) -> Result<EncodedExample> {
        let config = &classifier.config;
        if config.variant.prompt_variant() == crate::prompting::PromptVariant::Described {
            self.lexicon.lookup_description(&example.pet_id, LookupMode::from(config.template.mode))?;
        }
        let prompt = prompt_for(example, self.lexicon, config.variant, &config.template)?;
        let imagery = match self.imagery {
            Some(store) if config.variant.uses_imagery() => Some(imagery_for(example, self.lexicon, store)?),
            _ => None,
        };
        classifier.encode(&prompt, imagery)
    }

    /// Probabilities for every example, failures tagged with the example id.
    pub fn score(&self, classifier: &Classifier<TinyLm>, examples: &[Example]) -> Result<Vec<f64>> {
        examples
            .iter()
            .map(|e| {
                self.encode(classifier, e)
                    .and_then(|enc| classifier.probability_encoded(&enc))
                    .map_err(|source| Error::Scoring {
                        id: e.id.clone(),
                        source: Box::new(source),
                    })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_train_loss: f64,
    pub val_f1: f64,
    pub optimizer_steps: u64,
}

#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub fold: usize,
    pub classifier: Classifier<TinyLm>,
    pub best_val_f1: f64,
    /// 1-based epoch of the selected weights.
    pub best_epoch: usize,
    pub epochs: Vec<EpochRecord>,
}

impl FoldOutcome {
    pub fn checkpoint(&self, config: &TrainConfig, data_digest: &str) -> Checkpoint {
        Checkpoint::new(
            CheckpointManifest {
                format_version: 1,
                variant: config.variant,
                model_seed: self.classifier.config.seed,
                train_seed: config.seed,
                data_digest: data_digest.to_string(),
                fold: Some(self.fold),
                best_epoch: self.best_epoch,
                best_val_f1: self.best_val_f1,
            },
            &self.classifier,
        )
    }
}

fn fold_seed(seed: u64, fold: usize, stream: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((fold as u64) << 8)
        .wrapping_add(stream)
}

pub fn classifier_config(config: &TrainConfig, lm: &TinyLmConfig, imagery_dim: usize, seed: u64) -> ClassifierConfig {
    ClassifierConfig {
        variant: config.variant,
        lm_backend_id: lm.id.clone(),
        hidden_size: lm.hidden_size,
        imagery_dim,
        max_tokens: config.max_tokens,
        threshold: config.threshold,
        seed,
        template: config.template.clone(),
    }
}

fn labeled<'e>(ids: &[String], by_id: &HashMap<&str, &'e Example>) -> Result<Vec<(&'e Example, u8)>> {
    ids.iter()
        .map(|id| {
            let e = by_id
                .get(id.as_str())
                .ok_or_else(|| Error::InvalidArgument(format!("fold references unknown example `{id}`")))?;
            let label = e
                .label
                .ok_or_else(|| Error::InvalidArgument(format!("example `{id}` is unlabeled")))?;
            Ok((*e, label))
        })
        .collect()
}

/// Fine-tunes one model on the fold's training ids and keeps the weights of
/// the epoch with the highest validation F1 (earliest on ties).
pub fn train_fold(config: &TrainConfig, fold: &Fold, examples: &[Example], data: DataContext<'_>) -> Result<FoldOutcome> {
    config.validate()?;
    data.check_variant(config.variant)?;
    let lm = TinyLmConfig::by_name(&config.backend)?;
    let imagery_dim = data.imagery.map_or(DEFAULT_IMAGERY_DIM, |s| s.dim);
    let by_id: HashMap<&str, &Example> = examples.iter().map(|e| (e.id.as_str(), e)).collect();
    let train = labeled(&fold.train_ids, &by_id)?;
    let val = labeled(&fold.val_ids, &by_id)?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidArgument("fold has an empty train or validation split".into()));
    }

    let model_seed = fold_seed(config.seed, fold.index, 1);
    let mut classifier = Classifier::init_tiny(classifier_config(config, &lm, imagery_dim, model_seed), lm)?;
    let encode = |items: &[(&Example, u8)], c: &Classifier<TinyLm>| -> Result<Vec<(EncodedExample, u8)>> {
        items.iter().map(|(e, y)| Ok((data.encode(c, e)?, *y))).collect()
    };
    let train_enc = encode(&train, &classifier)?;
    let val_enc = encode(&val, &classifier)?;
    let val_labels: Vec<u8> = val_enc.iter().map(|(_, y)| *y).collect();

    let mut optimizer = AdamW::new(config.learning_rate, config.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(fold_seed(config.seed, fold.index, 2));
    let mut order: Vec<usize> = (0..train_enc.len()).collect();
    let mut epochs = Vec::with_capacity(config.max_epochs);
    let mut best: Option<(f64, usize, Classifier<TinyLm>)> = None;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch_idx in order.chunks(config.batch_size) {
            let batch: Vec<(&EncodedExample, u8)> = batch_idx.iter().map(|&i| (&train_enc[i].0, train_enc[i].1)).collect();
            let (batch_loss, grad) = classifier.batch_grad(&batch)?;
            if !batch_loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            loss_sum += batch_loss * batch.len() as f64;
            optimizer.step(classifier.params_mut(), Classifier::<TinyLm>::grad_slices(&grad));
        }
        let predictions = val_enc
            .iter()
            .map(|(enc, _)| classifier.probability_encoded(enc).map(|p| decide(p, config.threshold)))
            .collect::<Result<Vec<u8>>>()?;
        let val_f1 = metrics::f1(&predictions, &val_labels)?;
        epochs.push(EpochRecord {
            epoch,
            mean_train_loss: loss_sum / train_enc.len() as f64,
            val_f1,
            optimizer_steps: optimizer.steps_taken(),
        });
        if best.as_ref().is_none_or(|(f, _, _)| val_f1 > *f) {
            best = Some((val_f1, epoch, classifier.clone()));
        }
    }
    let (best_val_f1, best_epoch, classifier) = best.expect("at least one epoch ran");
    Ok(FoldOutcome {
        fold: fold.index,
        classifier,
        best_val_f1,
        best_epoch,
        epochs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub variant: Variant,
    pub backend: String,
    pub per_fold_f1: Vec<f64>,
    pub mean_f1: f64,
    pub std_f1: f64,
    pub test_ids: Vec<String>,
    /// folds x test examples.
    pub per_fold_test_probs: Vec<Vec<f64>>,
    pub config_digest: String,
}

impl RunResult {
    pub fn from_folds(config: &TrainConfig, per_fold_f1: Vec<f64>, test_ids: Vec<String>, probs: Vec<Vec<f64>>) -> Self {
        RunResult {
            variant: config.variant,
            backend: config.backend.clone(),
            mean_f1: metrics::mean(&per_fold_f1),
            std_f1: metrics::sample_std(&per_fold_f1),
            per_fold_f1,
            test_ids,
            per_fold_test_probs: probs,
            config_digest: config.digest(),
        }
    }
}

/// Trains one model per fold (folds run in parallel) and scores the test
/// examples with each of them.
pub fn run_cv(
    config: &TrainConfig,
    folds: &[Fold],
    examples: &[Example],
    test: &[Example],
    data: DataContext<'_>,
) -> Result<(RunResult, Vec<FoldOutcome>)> {
    if folds.is_empty() {
        return Err(Error::InvalidArgument("no folds to run".into()));
    }
    let outcomes: Vec<(FoldOutcome, Vec<f64>)> = folds
        .par_iter()
        .map(|fold| {
            let wrap = |source: Error| Error::Fold {
                fold: fold.index,
                source: Box::new(source),
            };
            let outcome = train_fold(config, fold, examples, data).map_err(wrap)?;
            let probs = data.score(&outcome.classifier, test).map_err(wrap)?;
            Ok((outcome, probs))
        })
        .collect::<Result<_>>()?;
    let per_fold_f1 = outcomes.iter().map(|(o, _)| o.best_val_f1).collect();
    let probs = outcomes.iter().map(|(_, p)| p.clone()).collect();
    let result = RunResult::from_folds(config, per_fold_f1, test.iter().map(|e| e.id.clone()).collect(), probs);
    Ok((result, outcomes.into_iter().map(|(o, _)| o).collect()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub p_hat: f64,
    pub y_hat: u8,
}

/// Scores examples with one or more models; several models are ensembled.
pub fn predict(
    classifiers: &[Classifier<TinyLm>],
    examples: &[Example],
    data: DataContext<'_>,
    method: EnsembleMethod,
) -> Result<Vec<PredictionRecord>> {
    let first = classifiers
        .first()
        .ok_or_else(|| Error::InvalidArgument("predict needs at least one checkpoint".into()))?;
    let threshold = first.config.threshold;
    let probs = classifiers
        .iter()
        .map(|c| data.score(c, examples))
        .collect::<Result<Vec<_>>>()?;
    let combined = if probs.len() == 1 {
        probs.into_iter().next().expect("one row")
    } else {
        metrics::ensemble_probabilities(&probs, method, threshold)?
    };
    Ok(examples
        .iter()
        .zip(combined)
        .map(|(e, p_hat)| PredictionRecord {
            id: e.id.clone(),
            p_hat,
            y_hat: decide(p_hat, threshold),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleOutput {
    pub ids: Vec<String>,
    pub p_hat: Vec<f64>,
    pub y_hat: Vec<u8>,
}

/// Metrics artifact written by training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsArtifact {
    pub config_digest: String,
    pub data_digest: String,
    pub config: TrainConfig,
    pub variant: Variant,
    pub backend: String,
    pub per_fold_f1: Vec<f64>,
    pub mean_f1: f64,
    pub std_f1: f64,
    pub best_epochs: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ensemble: Option<EnsembleOutput>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_f1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub significance: Option<SignificanceResult>,
}

impl MetricsArtifact {
    pub fn new(config: &TrainConfig, data_digest: String, run: &RunResult, outcomes: &[FoldOutcome]) -> Result<Self> {
        let ensemble = if run.test_ids.is_empty() {
            None
        } else {
            let p_hat = metrics::ensemble_probabilities(&run.per_fold_test_probs, config.ensemble, config.threshold)?;
            Some(EnsembleOutput {
                ids: run.test_ids.clone(),
                y_hat: p_hat.iter().map(|&p| decide(p, config.threshold)).collect(),
                p_hat,
            })
        };
        Ok(MetricsArtifact {
            config_digest: run.config_digest.clone(),
            data_digest,
            config: config.clone(),
            variant: run.variant,
            backend: run.backend.clone(),
            per_fold_f1: run.per_fold_f1.clone(),
            mean_f1: run.mean_f1,
            std_f1: run.std_f1,
            best_epochs: outcomes.iter().map(|o| o.best_epoch).collect(),
            ensemble,
            test_f1: None,
            significance: None,
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        util::read_json(path)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        util::write_json_pretty(path, self)
    }

    /// Fills `test_f1` from gold labels keyed by id; ids without a label are skipped.
    pub fn score_test(&mut self, gold: &HashMap<String, u8>) -> Result<()> {
        if let Some(ens) = &self.ensemble {
            let (pred, labels): (Vec<u8>, Vec<u8>) = ens
                .ids
                .iter()
                .zip(&ens.y_hat)
                .filter_map(|(id, y)| gold.get(id).map(|g| (*y, *g)))
                .unzip();
            if !pred.is_empty() {
                self.test_f1 = Some(metrics::f1(&pred, &labels)?);
            }
        }
        Ok(())
    }
}

/// Paired t-test of `a` against `b` on per-fold validation F1, aligned by fold index.
pub fn compare_runs(a: &MetricsArtifact, b: &MetricsArtifact) -> Result<SignificanceResult> {
    metrics::paired_t_test(&a.per_fold_f1, &b.per_fold_f1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_recipes() {
        let base = TrainConfig::reference_base(Variant::Desc);
        assert_eq!(base.learning_rate, 5e-6);
        assert_eq!(base.max_epochs, 50);
        assert_eq!(base.batch_size, 16);
        assert_eq!(base.n_folds, 5);
        let large = TrainConfig::reference_large(Variant::DescImag);
        assert_eq!(large.learning_rate, 3e-6);
        assert_eq!(large.backend, "tiny-large");
    }

    #[test]
    fn invalid_configs() {
        let mut c = TrainConfig::reference_base(Variant::Desc);
        c.learning_rate = 0.0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::reference_base(Variant::Desc);
        c.batch_size = 0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::reference_base(Variant::Desc);
        c.max_epochs = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn run_result_aggregates() {
        let c = TrainConfig::reference_base(Variant::Desc);
        let r = RunResult::from_folds(&c, vec![0.88, 0.90, 0.92], vec![], vec![]);
        assert!((r.mean_f1 - 0.90).abs() < 1e-12);
        assert!((r.std_f1 - 0.02).abs() < 1e-12);
    }
}
