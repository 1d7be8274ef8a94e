//! Loading inputs shared by several commands.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use euphem_core::backend::TinyLm;
use euphem_core::classifier::{Checkpoint, Classifier};
use euphem_core::corpus::{self, Example, Lexicon, Schema};
use euphem_core::imagery::{self, ImageryConfig, ImageryEngine, ImageryStore};

use crate::args::{ImageBackend, ImagerySettings, LexiconArg};
use crate::UsageError;

pub fn lexicon(arg: &LexiconArg) -> Result<Lexicon> {
    match &arg.lexicon {
        Some(path) => Lexicon::load(path).with_context(|| format!("reading lexicon {}", path.display())),
        None => Ok(Lexicon::bundled()),
    }
}

/// Reads raw or prepared examples; raw ones are preprocessed.
pub fn examples(path: &Path, labeled: bool) -> Result<Vec<Example>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("{}");
    let prepared = serde_json::from_str::<serde_json::Value>(first)
        .map(|v| v.get("sentence").is_some())
        .unwrap_or(false);
    let schema = if prepared { Schema::Prepared } else { Schema::Raw { labeled } };
    let examples = corpus::parse_examples(text.as_bytes(), path, schema)
        .with_context(|| format!("reading {}", path.display()))?;
    if labeled {
        if let Some(e) = examples.iter().find(|e| e.label.is_none()) {
            anyhow::bail!(euphem_core::Error::MissingLabel {
                path: path.to_path_buf(),
                line: 0,
                id: e.id.clone(),
            });
        }
    }
    if prepared {
        Ok(examples)
    } else {
        Ok(corpus::preprocess_all(&examples)?)
    }
}

pub fn imagery_store(cache: &Path) -> Result<ImageryStore> {
    ImageryStore::load(cache).with_context(|| {
        format!(
            "desc_imag needs the imagery cache at {}; run `euphem imagery --out {}` first",
            cache.display(),
            cache.display()
        )
    })
}

pub fn engine(settings: &ImagerySettings, root: &Path) -> Result<ImageryEngine> {
    let name = |b: ImageBackend| match b {
        ImageBackend::Stub => "stub",
    };
    if settings.k == 0 {
        return Err(UsageError("--k must be at least 1".into()).into());
    }
    if settings.dim == 0 {
        return Err(UsageError("--dim must be at least 1".into()).into());
    }
    Ok(ImageryEngine::new(
        imagery::t2i_backend(name(settings.image_backend))?,
        imagery::encoder_backend(name(settings.encoder), settings.dim)?,
        root,
        ImageryConfig {
            k: settings.k,
            seed: settings.imagery_seed,
            normalize: settings.normalize,
        },
    ))
}

/// Checkpoint files of a directory in file-name order.
pub fn checkpoint_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading checkpoint directory {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "json"));
    paths.sort();
    if paths.is_empty() {
        anyhow::bail!("no checkpoints (*.json) in {}", dir.display());
    }
    Ok(paths)
}

pub fn classifiers(dir: &Path) -> Result<Vec<Classifier<TinyLm>>> {
    let classifiers = checkpoint_paths(dir)?
        .iter()
        .map(|p| {
            Checkpoint::load(p)
                .and_then(|c| c.classifier())
                .with_context(|| format!("loading checkpoint {}", p.display()))
        })
        .collect::<Result<Vec<_>>>()?;
    let variant = classifiers[0].config.variant;
    if classifiers.iter().any(|c| c.config.variant != variant) {
        anyhow::bail!("checkpoints in {} mix model variants", dir.display());
    }
    Ok(classifiers)
}
