#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use euphem_core::backend::TinyLmConfig;
use euphem_core::classifier::{Checkpoint, CheckpointManifest, Classifier, ClassifierConfig, Variant};
use euphem_core::corpus::{self, Example, FoldSet, Lexicon};
use euphem_core::imagery::{ImageryConfig, ImageryEngine, StubEncoder, StubTextToImage};
use euphem_core::prompting::PromptTemplate;
use euphem_core::synthetic;
use euphem_curation::{CurationService, ServiceConfig};

pub const DIM: usize = 8;

pub fn lexicon() -> Lexicon {
    Lexicon::new(Lexicon::bundled().entries()[..4].to_vec()).unwrap()
}

pub fn examples(lexicon: &Lexicon) -> Vec<Example> {
    synthetic::generate(lexicon, 40, 0, 3)
        .train
        .into_iter()
        .map(|r| corpus::preprocess(&corpus::from_raw(r).unwrap()).unwrap())
        .collect()
}

pub fn write_checkpoint(dir: &Path, name: &str, variant: Variant, seed: u64, fold: Option<usize>) {
    let lm = TinyLmConfig {
        id: "tiny-test".into(),
        vocab_size: 64,
        hidden_size: 8,
        max_positions: 64,
    };
    let config = ClassifierConfig {
        variant,
        lm_backend_id: lm.id.clone(),
        hidden_size: lm.hidden_size,
        imagery_dim: DIM,
        max_tokens: 64,
        threshold: 0.5,
        seed,
        template: PromptTemplate::default(),
    };
    let classifier = Classifier::init_tiny(config, lm).unwrap();
    let manifest = CheckpointManifest {
        format_version: 1,
        variant,
        model_seed: seed,
        train_seed: seed,
        data_digest: "test".into(),
        fold,
        best_epoch: 1,
        best_val_f1: 0.0,
    };
    std::fs::create_dir_all(dir).unwrap();
    Checkpoint::new(manifest, &classifier)
        .save(&dir.join(format!("{name}.json")))
        .unwrap();
}

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub service: Arc<CurationService>,
}

impl Fixture {
    pub fn base_lexicon(&self) -> std::path::PathBuf {
        self.dir.path().join("lexicon.json")
    }

    pub fn state_dir(&self) -> std::path::PathBuf {
        self.dir.path().join("state")
    }
}

pub fn engine(root: &Path) -> ImageryEngine {
    ImageryEngine::new(
        Arc::new(StubTextToImage::default()),
        Arc::new(StubEncoder { dim: DIM }),
        root,
        ImageryConfig::default(),
    )
}

/// Service over a 4-PET lexicon with desc and desc_imag checkpoints.
pub fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let lex = lexicon();
    lex.save(&dir.path().join("lexicon.json")).unwrap();
    let ckpt = dir.path().join("checkpoints");
    write_checkpoint(&ckpt, "desc-fold-0", Variant::Desc, 11, None);
    write_checkpoint(&ckpt, "imag-fold-0", Variant::DescImag, 12, None);
    let service = open(dir.path(), &lex, None);
    Fixture {
        dir,
        service: Arc::new(service),
    }
}

pub fn open(root: &Path, lex: &Lexicon, folds: Option<FoldSet>) -> CurationService {
    CurationService::open(ServiceConfig {
        lexicon: root.join("lexicon.json"),
        state_dir: root.join("state"),
        examples: examples(lex),
        folds,
        checkpoints: Some(root.join("checkpoints")),
        imagery: Some(engine(&root.join("imagery"))),
    })
    .unwrap()
}
