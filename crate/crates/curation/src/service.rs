use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use euphem_core::backend::TinyLm;
use euphem_core::classifier::{decide, Checkpoint, Classifier, Variant};
use euphem_core::corpus::{Example, FoldSet, Lexicon, PetEntry};
use euphem_core::experiments::DataContext;
use euphem_core::imagery::{ImageryEngine, ImageryStore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown pet `{0}`")]
    NotFound(String),
    #[error("stale revision for `{pet_id}`: expected {expected}, current is {current}")]
    Conflict {
        pet_id: String,
        expected: u64,
        current: u64,
        current_description: String,
    },
    #[error("{0}")]
    Validation(String),
    #[error("no checkpoint loaded: train a model first and start the service with --checkpoints")]
    NoCheckpoint,
    #[error("unknown checkpoint `{0}`")]
    UnknownCheckpoint(String),
    #[error("backend failure: {0}")]
    Backend(String),
    #[error("{0}")]
    Internal(String),
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::NotFound(_) | ServiceError::UnknownCheckpoint(_) => "not_found",
            ServiceError::Conflict { .. } => "conflict",
            ServiceError::Validation(_) => "validation",
            ServiceError::NoCheckpoint => "no_checkpoint",
            ServiceError::Backend(_) => "backend",
            ServiceError::Internal(_) => "internal",
        }
    }
}

impl From<euphem_core::Error> for ServiceError {
    fn from(e: euphem_core::Error) -> Self {
        if e.is_backend() {
            ServiceError::Backend(e.to_string())
        } else {
            ServiceError::Internal(e.to_string())
        }
    }
}

pub type Result<T> = std::result::Result<T, ServiceError>;

/// One accepted edit; also the audit log line format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconRevision {
    pub pet_id: String,
    pub description: String,
    pub revision: u64,
    pub author: String,
    pub timestamp: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PetSummary {
    pub pet_id: String,
    pub term: String,
    pub description: String,
    pub revision: u64,
    pub example_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PetDetail {
    pub pet_id: String,
    pub term: String,
    pub description: String,
    pub variants: Vec<String>,
    pub revision: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageryPreview {
    pub term_grid: String,
    pub description_grid: String,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreDiff {
    pub example_id: String,
    pub p_hat_before: f64,
    pub p_hat_after: f64,
    pub y_hat_before: u8,
    pub y_hat_after: u8,
}

pub struct ServiceConfig {
    /// Starting lexicon; never modified.
    pub lexicon: PathBuf,
    /// Holds `lexicon.snapshot.json` and `audit.jsonl`.
    pub state_dir: PathBuf,
    pub examples: Vec<Example>,
    pub folds: Option<FoldSet>,
    /// Directory of checkpoint files, keyed by file stem.
    pub checkpoints: Option<PathBuf>,
    pub imagery: Option<ImageryEngine>,
}

struct LexiconState {
    lexicon: Lexicon,
    revisions: HashMap<String, u64>,
}

struct LoadedCheckpoint {
    fold: Option<usize>,
    classifier: Classifier<TinyLm>,
}

pub struct CurationService {
    state: Mutex<LexiconState>,
    audit_path: PathBuf,
    snapshot_path: PathBuf,
    examples: Vec<Example>,
    folds: Option<FoldSet>,
    checkpoints: BTreeMap<String, LoadedCheckpoint>,
    imagery: Option<ImageryEngine>,
}

/// Applies audit records to a base lexicon. Revisions of each PET must
/// count up from 1 without gaps.
pub fn replay(base: &Lexicon, audit: &[LexiconRevision]) -> Result<(Lexicon, HashMap<String, u64>)> {
    let mut lexicon = base.clone();
    let mut revisions: HashMap<String, u64> = HashMap::new();
    for rec in audit {
        let entry = lexicon
            .get_mut(&rec.pet_id)
            .ok_or_else(|| ServiceError::Internal(format!("audit log references unknown pet `{}`", rec.pet_id)))?;
        let current = revisions.entry(rec.pet_id.clone()).or_insert(0);
        if rec.revision != *current + 1 {
            return Err(ServiceError::Internal(format!(
                "audit log revision {} for `{}` does not follow {}",
                rec.revision, rec.pet_id, current
            )));
        }
        *current = rec.revision;
        entry.description = rec.description.clone();
    }
    Ok((lexicon, revisions))
}

pub fn read_audit(path: &Path) -> Result<Vec<LexiconRevision>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let file = std::fs::File::open(path).map_err(|e| ServiceError::Internal(format!("{}: {e}", path.display())))?;
    std::io::BufReader::new(file)
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|(i, line)| {
            let line = line.map_err(|e| ServiceError::Internal(e.to_string()))?;
            serde_json::from_str(&line)
                .map_err(|e| ServiceError::Internal(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

fn load_checkpoints(dir: &Path) -> Result<BTreeMap<String, LoadedCheckpoint>> {
    let mut out = BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| ServiceError::Internal(format!("{}: {e}", dir.display())))?;
    for entry in entries {
        let path = entry.map_err(|e| ServiceError::Internal(e.to_string()))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("json") {
            continue;
        }
        match Checkpoint::load(&path) {
            Ok(ck) => {
                let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
                out.insert(
                    id,
                    LoadedCheckpoint {
                        fold: ck.manifest.fold,
                        classifier: ck.classifier()?,
                    },
                );
            }
            Err(e) => log::debug!("skipping {}: {e}", path.display()),
        }
    }
    Ok(out)
}

impl CurationService {
    pub fn open(config: ServiceConfig) -> Result<Self> {
        let base = Lexicon::load(&config.lexicon)?;
        std::fs::create_dir_all(&config.state_dir)
            .map_err(|e| ServiceError::Internal(format!("{}: {e}", config.state_dir.display())))?;
        let audit_path = config.state_dir.join("audit.jsonl");
        let snapshot_path = config.state_dir.join("lexicon.snapshot.json");
        let (lexicon, revisions) = replay(&base, &read_audit(&audit_path)?)?;
        lexicon.save(&snapshot_path)?;
        let checkpoints = match &config.checkpoints {
            Some(dir) => load_checkpoints(dir)?,
            None => BTreeMap::new(),
        };
        Ok(CurationService {
            state: Mutex::new(LexiconState { lexicon, revisions }),
            audit_path,
            snapshot_path,
            examples: config.examples,
            folds: config.folds,
            checkpoints,
            imagery: config.imagery,
        })
    }

    fn with_state<T>(&self, f: impl FnOnce(&mut LexiconState) -> Result<T>) -> Result<T> {
        let mut guard = self
            .state
            .lock()
            .map_err(|_| ServiceError::Internal("lexicon lock poisoned".into()))?;
        f(&mut guard)
    }

    fn entry(&self, pet_id: &str) -> Result<(PetEntry, u64)> {
        self.with_state(|s| {
            let e = s.lexicon.get(pet_id).ok_or_else(|| ServiceError::NotFound(pet_id.into()))?;
            Ok((e.clone(), s.revisions.get(pet_id).copied().unwrap_or(0)))
        })
    }

    pub fn snapshot_path(&self) -> &Path {
        &self.snapshot_path
    }

    pub fn audit_path(&self) -> &Path {
        &self.audit_path
    }

    pub fn lexicon(&self) -> Result<Lexicon> {
        self.with_state(|s| Ok(s.lexicon.clone()))
    }

    /// Sorted by term.
    pub fn list_pets(&self) -> Result<Vec<PetSummary>> {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for e in &self.examples {
            *counts.entry(e.pet_id.as_str()).or_default() += 1;
        }
        let mut out = self.with_state(|s| {
            Ok(s.lexicon
                .entries()
                .iter()
                .map(|e| PetSummary {
                    pet_id: e.pet_id.clone(),
                    term: e.term.clone(),
                    description: e.description.clone(),
                    revision: s.revisions.get(&e.pet_id).copied().unwrap_or(0),
                    example_count: counts.get(e.pet_id.as_str()).copied().unwrap_or(0),
                })
                .collect::<Vec<_>>())
        })?;
        out.sort_by(|a, b| a.term.cmp(&b.term).then_with(|| a.pet_id.cmp(&b.pet_id)));
        Ok(out)
    }

    pub fn get_pet(&self, pet_id: &str) -> Result<PetDetail> {
        let (e, revision) = self.entry(pet_id)?;
        Ok(PetDetail {
            pet_id: e.pet_id,
            term: e.term,
            description: e.description,
            variants: e.variants,
            revision,
        })
    }

    pub fn examples_for(&self, pet_id: &str) -> Result<Vec<Example>> {
        self.entry(pet_id)?;
        Ok(self.examples.iter().filter(|e| e.pet_id == pet_id).cloned().collect())
    }

    pub fn checkpoint_ids(&self) -> Vec<String> {
        self.checkpoints.keys().cloned().collect()
    }

    /// Accepts the edit only if `expected_revision` is the current revision.
    pub fn put_description(
        &self,
        pet_id: &str,
        description: &str,
        expected_revision: u64,
        author: &str,
    ) -> Result<LexiconRevision> {
        if description.trim().is_empty() {
            return Err(ServiceError::Validation("description must not be empty".into()));
        }
        self.with_state(|s| {
            let current = s.revisions.get(pet_id).copied().unwrap_or(0);
            let entry = s.lexicon.get(pet_id).ok_or_else(|| ServiceError::NotFound(pet_id.into()))?;
            if expected_revision != current {
                return Err(ServiceError::Conflict {
                    pet_id: pet_id.into(),
                    expected: expected_revision,
                    current,
                    current_description: entry.description.clone(),
                });
            }
            let record = LexiconRevision {
                pet_id: pet_id.into(),
                description: description.into(),
                revision: current + 1,
                author: author.into(),
                timestamp: chrono::Utc::now().to_rfc3339(),
            };
            self.append_audit(&record)?;
            s.lexicon.get_mut(pet_id).expect("checked above").description = record.description.clone();
            s.revisions.insert(pet_id.into(), record.revision);
            s.lexicon.save(&self.snapshot_path)?;
            Ok(record)
        })
    }

    fn append_audit(&self, record: &LexiconRevision) -> Result<()> {
        let mut line = serde_json::to_vec(record).map_err(|e| ServiceError::Internal(e.to_string()))?;
        line.push(b'\n');
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.audit_path)
            .map_err(|e| ServiceError::Internal(format!("{}: {e}", self.audit_path.display())))?;
        file.write_all(&line)
            .and_then(|_| file.sync_data())
            .map_err(|e| ServiceError::Internal(format!("{}: {e}", self.audit_path.display())))
    }

    fn engine(&self) -> Result<&ImageryEngine> {
        self.imagery
            .as_ref()
            .ok_or_else(|| ServiceError::Backend("no imagery backend configured".into()))
    }

    /// Contact sheets for the term and for `draft` (or the stored description).
    pub fn preview_imagery(&self, pet_id: &str, draft: Option<&str>) -> Result<ImageryPreview> {
        let (entry, _) = self.entry(pet_id)?;
        let description = draft.unwrap_or(&entry.description);
        if description.trim().is_empty() {
            return Err(ServiceError::Validation("description must not be empty".into()));
        }
        let engine = self.engine()?;
        let (term_digest, _) = engine.sheet(&entry.term)?;
        let (desc_digest, _) = engine.sheet(description)?;
        Ok(ImageryPreview {
            term_grid: format!("/sheets/{term_digest}.png"),
            description_grid: format!("/sheets/{desc_digest}.png"),
            k: engine.config.k,
        })
    }

    pub fn sheets_dir(&self) -> Option<PathBuf> {
        self.imagery.as_ref().map(|e| e.cache.root().join("sheets"))
    }

    fn pick_checkpoint(&self, checkpoint_id: Option<&str>) -> Result<(&str, &LoadedCheckpoint)> {
        if self.checkpoints.is_empty() {
            return Err(ServiceError::NoCheckpoint);
        }
        match checkpoint_id {
            Some(id) => self
                .checkpoints
                .get_key_value(id)
                .map(|(k, v)| (k.as_str(), v))
                .ok_or_else(|| ServiceError::UnknownCheckpoint(id.into())),
            None => self
                .checkpoints
                .iter()
                .rev()
                .find(|(_, c)| c.classifier.config.variant == Variant::Desc)
                .map(|(k, v)| (k.as_str(), v))
                .ok_or(ServiceError::NoCheckpoint),
        }
    }

    fn validation_examples(&self, pet_id: &str, fold: Option<usize>) -> Vec<&Example> {
        let val_ids: Option<std::collections::HashSet<&str>> = match (&self.folds, fold) {
            (Some(set), Some(f)) => set
                .folds
                .iter()
                .find(|x| x.index == f)
                .map(|x| x.val_ids.iter().map(String::as_str).collect()),
            _ => None,
        };
        self.examples
            .iter()
            .filter(|e| e.pet_id == pet_id && e.label.is_some())
            .filter(|e| val_ids.as_ref().is_none_or(|ids| ids.contains(e.id.as_str())))
            .collect()
    }

    /// Scores the PET's validation examples with the stored description and
    /// with `draft`; largest absolute change first.
    pub fn rescore(&self, pet_id: &str, draft: &str, checkpoint_id: Option<&str>) -> Result<Vec<ScoreDiff>> {
        if draft.trim().is_empty() {
            return Err(ServiceError::Validation("draft description must not be empty".into()));
        }
        let (entry, _) = self.entry(pet_id)?;
        let (_, checkpoint) = self.pick_checkpoint(checkpoint_id)?;
        let examples: Vec<Example> = self
            .validation_examples(pet_id, checkpoint.fold)
            .into_iter()
            .cloned()
            .collect();
        if examples.is_empty() {
            return Ok(Vec::new());
        }
        let classifier = &checkpoint.classifier;
        let lexicon_with = |description: &str| -> Result<Lexicon> {
            let mut e = entry.clone();
            e.description = description.to_string();
            Ok(Lexicon::new(vec![e])?)
        };
        let before_lex = lexicon_with(&entry.description)?;
        let after_lex = lexicon_with(draft)?;
        let store = if classifier.config.variant.uses_imagery() {
            let engine = self.engine()?;
            let mut store = ImageryStore {
                dim: engine.encoder.dim(),
                ..Default::default()
            };
            for text in [entry.term.as_str(), entry.description.as_str(), draft] {
                store.insert(text, engine.embedding(text)?);
            }
            Some(store)
        } else {
            None
        };
        let before = DataContext {
            lexicon: &before_lex,
            imagery: store.as_ref(),
        }
        .score(classifier, &examples)?;
        let after = DataContext {
            lexicon: &after_lex,
            imagery: store.as_ref(),
        }
        .score(classifier, &examples)?;
        let threshold = classifier.config.threshold;
        let mut diffs: Vec<ScoreDiff> = examples
            .iter()
            .zip(before.into_iter().zip(after))
            .map(|(e, (b, a))| ScoreDiff {
                example_id: e.id.clone(),
                p_hat_before: b,
                p_hat_after: a,
                y_hat_before: decide(b, threshold),
                y_hat_after: decide(a, threshold),
            })
            .collect();
        sort_diffs(&mut diffs);
        Ok(diffs)
    }
}

/// Descending by absolute change, ties by example id.
pub fn sort_diffs(diffs: &mut [ScoreDiff]) {
    diffs.sort_by(|x, y| {
        let dx = (x.p_hat_after - x.p_hat_before).abs();
        let dy = (y.p_hat_after - y.p_hat_before).abs();
        dy.total_cmp(&dx).then_with(|| x.example_id.cmp(&y.example_id))
    });
}

/// Rebuilds the lexicon from the base file and the audit log.
pub fn reconstruct(base_lexicon: &Path, audit: &Path) -> Result<Lexicon> {
    let base = Lexicon::load(base_lexicon)?;
    Ok(replay(&base, &read_audit(audit)?)?.0)
}

