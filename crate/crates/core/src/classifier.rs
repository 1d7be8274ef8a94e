//! Model variants: vanilla sentence, description prompt, and description
//! prompt with two projected imagery vectors prepended to the token
//! embeddings. Scoring, the decision rule and the training objective.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{LanguageModel, ModelInput, TinyLm, TrainableLm};
use crate::error::{Error, Result};
use crate::prompting::{Prompt, PromptTemplate, PromptVariant};
use crate::util;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Probability clamp used by [`loss`].
pub const LOSS_EPSILON: f64 = 1e-7;

/// Number of projected imagery vectors in front of the word embeddings.
pub const IMAGERY_POSITIONS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Vanilla,
    Desc,
    DescImag,
}

impl Variant {
    pub fn prompt_variant(self) -> PromptVariant {
        match self {
            Variant::Vanilla => PromptVariant::Vanilla,
            Variant::Desc | Variant::DescImag => PromptVariant::Described,
        }
    }

    pub fn uses_imagery(self) -> bool {
        self == Variant::DescImag
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Vanilla => "vanilla",
            Variant::Desc => "desc",
            Variant::DescImag => "desc_imag",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(Variant::Vanilla),
            "desc" => Ok(Variant::Desc),
            "desc_imag" => Ok(Variant::DescImag),
            other => Err(Error::InvalidArgument(format!(
                "unknown variant `{other}` (expected vanilla, desc or desc_imag)"
            ))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub variant: Variant,
    pub lm_backend_id: String,
    pub hidden_size: usize,
    pub imagery_dim: usize,
    /// Budget for word tokens; imagery positions come on top.
    pub max_tokens: usize,
    pub threshold: f64,
    pub seed: u64,
    #[serde(default)]
    pub template: PromptTemplate,
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "threshold must lie in (0, 1), got {}",
                self.threshold
            )));
        }
        if self.hidden_size == 0 || self.imagery_dim == 0 || self.max_tokens == 0 {
            return Err(Error::InvalidArgument(
                "hidden_size, imagery_dim and max_tokens must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Linear map from imagery space (`d_v`) to the backend's embedding space (`h`).
/// `weight` is row-major `d_v x h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub d_v: usize,
    pub h: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Projection {
    pub fn zeros(d_v: usize, h: usize) -> Self {
        Projection {
            d_v,
            h,
            weight: vec![0.0; d_v * h],
            bias: vec![0.0; h],
        }
    }

    /// Weights uniform in `[-1/sqrt(d_v), 1/sqrt(d_v)]`, zero bias.
    pub fn random(d_v: usize, h: usize, seed: u64) -> Self {
        let bound = 1.0 / (d_v as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Projection {
            d_v,
            h,
            weight: (0..d_v * h).map(|_| rng.random_range(-bound..=bound)).collect(),
            bias: vec![0.0; h],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.weight.len() != self.d_v * self.h {
            return Err(Error::DimensionMismatch {
                expected: self.d_v * self.h,
                got: self.weight.len(),
            });
        }
        if self.bias.len() != self.h {
            return Err(Error::DimensionMismatch {
                expected: self.h,
                got: self.bias.len(),
            });
        }
        if self.weight.iter().chain(&self.bias).any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("projection has non-finite entries".into()));
        }
        Ok(())
    }

    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.d_v {
            return Err(Error::DimensionMismatch {
                expected: self.d_v,
                got: v.len(),
            });
        }
        let mut out = self.bias.clone();
        for (x, row) in v.iter().zip(self.weight.chunks_exact(self.h)) {
            for (o, w) in out.iter_mut().zip(row) {
                *o += x * w;
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub p_hat: f64,
    pub y_hat: u8,
}

/// 1 iff `p_hat >= threshold`.
pub fn decide(p_hat: f64, threshold: f64) -> u8 {
    u8::from(p_hat >= threshold)
}

/// Negative log-likelihood of label `y` under `p_hat`, clamped at [`LOSS_EPSILON`].
pub fn loss(p_hat: f64, y: u8) -> f64 {
    let p = p_hat.clamp(LOSS_EPSILON, 1.0 - LOSS_EPSILON);
    if y == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

pub fn batch_loss(pairs: &[(f64, u8)]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    pairs.iter().map(|&(p, y)| loss(p, y)).sum::<f64>() / pairs.len() as f64
}

/// Probability of class 1 from two logits.
pub fn positive_probability(logits: [f64; 2]) -> f64 {
    let d = logits[1] - logits[0];
    if d >= 0.0 {
        1.0 / (1.0 + (-d).exp())
    } else {
        let e = d.exp();
        e / (1.0 + e)
    }
}

/// Imagery vectors for the term and its description.
#[derive(Debug, Clone, Copy)]
pub struct ImageryPair<'a> {
    pub term: &'a [f64],
    pub description: &'a [f64],
}

/// Weight-independent encoding of one example.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedExample {
    pub token_ids: Vec<u32>,
    pub imagery: Option<[Vec<f64>; 2]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classifier<B> {
    pub config: ClassifierConfig,
    pub backend: B,
    pub projection: Option<Projection>,
}

impl<B: LanguageModel> Classifier<B> {
    pub fn new(config: ClassifierConfig, backend: B, projection: Option<Projection>) -> Result<Self> {
        config.validate()?;
        if backend.hidden_size() != config.hidden_size {
            return Err(Error::DimensionMismatch {
                expected: config.hidden_size,
                got: backend.hidden_size(),
            });
        }
        match (&projection, config.variant.uses_imagery()) {
            (Some(p), true) => {
                p.validate()?;
                if (p.d_v, p.h) != (config.imagery_dim, config.hidden_size) {
                    return Err(Error::InvalidArgument(format!(
                        "projection shape ({}, {}) does not match (imagery_dim {}, hidden_size {})",
                        p.d_v, p.h, config.imagery_dim, config.hidden_size
                    )));
                }
            }
            (None, false) => {}
            (Some(_), false) => {
                return Err(Error::InvalidArgument(format!(
                    "variant {} takes no projection",
                    config.variant
                )))
            }
            (None, true) => return Err(Error::InvalidArgument("desc_imag needs a projection".into())),
        }
        Ok(Classifier {
            config,
            backend,
            projection,
        })
    }

    fn offset(&self) -> usize {
        if self.config.variant.uses_imagery() {
            IMAGERY_POSITIONS
        } else {
            0
        }
    }

    /// Token ids of the prompt after the budget policy has been applied.
    pub fn tokenize_prompt(&self, prompt: &Prompt) -> Result<Vec<u32>> {
        if prompt.variant != self.config.variant.prompt_variant() {
            return Err(Error::InvalidArgument(format!(
                "{:?} prompt given to a {} classifier",
                prompt.variant, self.config.variant
            )));
        }
        let budget = self
            .config
            .max_tokens
            .min(self.backend.max_positions().saturating_sub(self.offset()));
        let fitted = self
            .config
            .template
            .fit_to_budget(prompt, budget, |t| self.backend.tokenize(t).len())?;
        let ids = self.backend.tokenize(&fitted.text);
        if ids.is_empty() {
            return Err(Error::InvalidArgument("prompt has no tokens".into()));
        }
        Ok(ids)
    }

    pub fn encode(&self, prompt: &Prompt, imagery: Option<ImageryPair<'_>>) -> Result<EncodedExample> {
        let imagery = match (imagery, self.config.variant.uses_imagery()) {
            (Some(pair), true) => Some([pair.term.to_vec(), pair.description.to_vec()]),
            (None, false) => None,
            (Some(_), false) => {
                return Err(Error::InvalidArgument(format!(
                    "imagery given to a {} classifier",
                    self.config.variant
                )))
            }
            (None, true) => {
                return Err(Error::InvalidArgument("desc_imag scoring needs imagery vectors".into()))
            }
        };
        Ok(EncodedExample {
            token_ids: self.tokenize_prompt(prompt)?,
            imagery,
        })
    }

    /// Backend input: `[f_p(v_T), f_p(v_D), e_1, .., e_n]` for desc_imag,
    /// `[e_1, .., e_n]` otherwise. Every position is attended.
    pub fn assemble(&self, encoded: &EncodedExample) -> Result<ModelInput> {
        let mut vectors = Vec::with_capacity(encoded.token_ids.len() + self.offset());
        if let Some([term, description]) = &encoded.imagery {
            let proj = self
                .projection
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("desc_imag needs a projection".into()))?;
            vectors.push(proj.project(term)?);
            vectors.push(proj.project(description)?);
        }
        vectors.extend(self.backend.embed(&encoded.token_ids));
        let n = vectors.len();
        Ok(ModelInput {
            vectors,
            attention_mask: vec![true; n],
            position_ids: (0..n).collect(),
        })
    }

    pub fn probability_encoded(&self, encoded: &EncodedExample) -> Result<f64> {
        let input = self.assemble(encoded)?;
        Ok(positive_probability(self.backend.logits(&input)?))
    }

    pub fn score(&self, prompt: &Prompt, imagery: Option<ImageryPair<'_>>) -> Result<Prediction> {
        let p_hat = self.probability_encoded(&self.encode(prompt, imagery)?)?;
        Ok(Prediction {
            p_hat,
            y_hat: decide(p_hat, self.config.threshold),
        })
    }
}

#[derive(Debug, Clone)]
pub struct ClassifierGrad<G> {
    pub backend: G,
    pub projection_weight: Vec<f64>,
    pub projection_bias: Vec<f64>,
}

impl<B: TrainableLm> Classifier<B> {
    pub fn zero_grad(&self) -> ClassifierGrad<B::Grad> {
        let (w, b) = self
            .projection
            .as_ref()
            .map_or((0, 0), |p| (p.weight.len(), p.bias.len()));
        ClassifierGrad {
            backend: self.backend.zero_grad(),
            projection_weight: vec![0.0; w],
            projection_bias: vec![0.0; b],
        }
    }

    /// Adds `scale * d loss / d params` for one example and returns its loss.
    pub fn accumulate_grad(
        &self,
        encoded: &EncodedExample,
        label: u8,
        scale: f64,
        grad: &mut ClassifierGrad<B::Grad>,
    ) -> Result<f64> {
        let input = self.assemble(encoded)?;
        let p1 = positive_probability(self.backend.logits(&input)?);
        let example_loss = loss(p1, label);
        let p_label = if label == 1 { p1 } else { 1.0 - p1 };
        // the clamp has zero gradient where it is active
        if p_label <= LOSS_EPSILON || p_label >= 1.0 - LOSS_EPSILON {
            return Ok(example_loss);
        }
        let target = f64::from(label);
        let grad_logits = [scale * ((1.0 - p1) - (1.0 - target)), scale * (p1 - target)];
        let input_grads = self.backend.backward(&input, grad_logits, &mut grad.backend);
        let offset = self.offset();
        self.backend
            .accumulate_embedding_grad(&encoded.token_ids, &input_grads[offset..], &mut grad.backend);
        if let (Some([term, description]), Some(proj)) = (&encoded.imagery, &self.projection) {
            for (v, g) in [term, description].into_iter().zip(&input_grads[..offset]) {
                for (i, x) in v.iter().enumerate() {
                    for (j, gj) in g.iter().enumerate() {
                        grad.projection_weight[i * proj.h + j] += x * gj;
                    }
                }
                for (b, gj) in grad.projection_bias.iter_mut().zip(g) {
                    *b += gj;
                }
            }
        }
        Ok(example_loss)
    }

    /// Mean loss over the batch and its gradient.
    pub fn batch_grad(&self, batch: &[(&EncodedExample, u8)]) -> Result<(f64, ClassifierGrad<B::Grad>)> {
        let mut grad = self.zero_grad();
        let scale = 1.0 / batch.len().max(1) as f64;
        let mut total = 0.0;
        for (encoded, label) in batch {
            total += self.accumulate_grad(encoded, *label, scale, &mut grad)?;
        }
        Ok((total * scale, grad))
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut params = self.backend.params_mut();
        if let Some(p) = self.projection.as_mut() {
            params.push(&mut p.weight);
            params.push(&mut p.bias);
        }
        params
    }

    pub fn grad_slices(grad: &ClassifierGrad<B::Grad>) -> Vec<&[f64]> {
        let mut slices = B::grad_slices(&grad.backend);
        if !grad.projection_weight.is_empty() {
            slices.push(&grad.projection_weight);
            slices.push(&grad.projection_bias);
        }
        slices
    }
}

impl Classifier<TinyLm> {
    /// Fresh model: backend weights from `config.seed`, projection from `config.seed + 1`.
    pub fn init_tiny(config: ClassifierConfig, backend: crate::backend::TinyLmConfig) -> Result<Self> {
        let lm = TinyLm::new(backend, config.seed);
        let projection = config
            .variant
            .uses_imagery()
            .then(|| Projection::random(config.imagery_dim, config.hidden_size, config.seed.wrapping_add(1)));
        Classifier::new(config, lm, projection)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub variant: Variant,
    pub model_seed: u64,
    pub train_seed: u64,
    pub data_digest: String,
    pub fold: Option<usize>,
    pub best_epoch: usize,
    pub best_val_f1: f64,
}

/// Saved model: manifest, classifier config, backend and projection weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    pub config: ClassifierConfig,
    pub backend: TinyLm,
    pub projection: Option<Projection>,
}

impl Checkpoint {
    pub fn new(manifest: CheckpointManifest, classifier: &Classifier<TinyLm>) -> Self {
        Checkpoint {
            manifest,
            config: classifier.config.clone(),
            backend: classifier.backend.clone(),
            projection: classifier.projection.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        util::write_atomic(path, &serde_json::to_vec(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        util::read_json(path)
    }

    pub fn classifier(&self) -> Result<Classifier<TinyLm>> {
        Classifier::new(self.config.clone(), self.backend.clone(), self.projection.clone())
    }
}
