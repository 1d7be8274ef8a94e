//! Language-model backend contract and a small trainable backend.
//!
//! A backend consumes a sequence of input vectors (token embeddings and,
//! for the imagery variant, projected visual vectors) and returns two class
//! logits. [`TinyLm`] is a pure-Rust backend with analytic gradients used for
//! desk-scale training and for every test in this workspace.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util;

/// One backend input sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub vectors: Vec<Vec<f64>>,
    pub attention_mask: Vec<bool>,
    pub position_ids: Vec<usize>,
}

impl ModelInput {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

pub trait LanguageModel {
    fn id(&self) -> &str;
    fn hidden_size(&self) -> usize;
    fn max_positions(&self) -> usize;
    fn tokenize(&self, text: &str) -> Vec<u32>;
    /// Word embeddings for the given token ids.
    fn embed(&self, ids: &[u32]) -> Vec<Vec<f64>>;
    /// Logits for (literal, euphemistic).
    fn logits(&self, input: &ModelInput) -> Result<[f64; 2]>;
}

/// A backend that can be fine-tuned by the trainer.
pub trait TrainableLm: LanguageModel {
    type Grad;

    fn zero_grad(&self) -> Self::Grad;

    /// Accumulates parameter gradients for `d loss / d logits = grad_logits`
    /// into `grad` and returns the gradient with respect to each input vector.
    fn backward(&self, input: &ModelInput, grad_logits: [f64; 2], grad: &mut Self::Grad) -> Vec<Vec<f64>>;

    /// Routes input-vector gradients of word positions back to the embedding table.
    fn accumulate_embedding_grad(&self, ids: &[u32], input_grads: &[Vec<f64>], grad: &mut Self::Grad);

    fn params_mut(&mut self) -> Vec<&mut [f64]>;

    fn grad_slices(grad: &Self::Grad) -> Vec<&[f64]>;
}

/// Lowercased words; punctuation characters become single tokens.
pub fn word_pieces(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() || c == '\'' || c == '-' {
            current.extend(c.to_lowercase());
        } else {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            if !c.is_whitespace() {
                tokens.push(c.to_string());
            }
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TinyLmConfig {
    pub id: String,
    pub vocab_size: usize,
    pub hidden_size: usize,
    pub max_positions: usize,
}

impl TinyLmConfig {
    pub fn base() -> Self {
        TinyLmConfig {
            id: "tiny-base".into(),
            vocab_size: 2048,
            hidden_size: 32,
            max_positions: 192,
        }
    }

    pub fn large() -> Self {
        TinyLmConfig {
            id: "tiny-large".into(),
            vocab_size: 4096,
            hidden_size: 64,
            max_positions: 192,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "tiny-base" | "base" => Ok(Self::base()),
            "tiny-large" | "large" => Ok(Self::large()),
            other => Err(Error::backend(other, "unknown language-model backend")),
        }
    }
}

/// Hashed word embeddings plus learned positions, a pooled first position
/// that attends uniformly to every attended input, a tanh layer and a
/// two-logit head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TinyLm {
    pub config: TinyLmConfig,
    token_embeddings: Vec<f64>,
    position_embeddings: Vec<f64>,
    pool_weight: Vec<f64>,
    pool_bias: Vec<f64>,
    head_weight: Vec<f64>,
    head_bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TinyLmGrad {
    token_embeddings: Vec<f64>,
    position_embeddings: Vec<f64>,
    pool_weight: Vec<f64>,
    pool_bias: Vec<f64>,
    head_weight: Vec<f64>,
    head_bias: Vec<f64>,
}

struct Activations {
    pooled: Vec<f64>,
    hidden: Vec<f64>,
    attended: usize,
}

impl TinyLm {
    pub fn new(config: TinyLmConfig, seed: u64) -> Self {
        let h = config.hidden_size;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |n: usize, bound: f64| -> Vec<f64> {
            (0..n).map(|_| rng.random_range(-bound..bound)).collect()
        };
        let scale = 1.0 / (h as f64).sqrt();
        TinyLm {
            token_embeddings: uniform(config.vocab_size * h, 0.5),
            position_embeddings: uniform(config.max_positions * h, 0.02),
            pool_weight: uniform(h * h, scale),
            pool_bias: vec![0.0; h],
            head_weight: uniform(2 * h, scale),
            head_bias: vec![0.0; 2],
            config,
        }
    }

    fn token_id(&self, piece: &str) -> u32 {
        let digest = util::digest_parts([piece.as_bytes()]);
        let n = u64::from_str_radix(&digest[..16], 16).expect("hex digest");
        (n % self.config.vocab_size as u64) as u32
    }

    fn check_input(&self, input: &ModelInput) -> Result<()> {
        let h = self.config.hidden_size;
        if input.attention_mask.len() != input.len() || input.position_ids.len() != input.len() {
            return Err(Error::backend(&self.config.id, "mask or position ids have the wrong length"));
        }
        if let Some(v) = input.vectors.iter().find(|v| v.len() != h) {
            return Err(Error::DimensionMismatch {
                expected: h,
                got: v.len(),
            });
        }
        if let Some(p) = input.position_ids.iter().find(|&&p| p >= self.config.max_positions) {
            return Err(Error::backend(
                &self.config.id,
                format!("position {p} exceeds max_positions {}", self.config.max_positions),
            ));
        }
        if !input.attention_mask.iter().any(|&m| m) {
            return Err(Error::backend(&self.config.id, "no attended positions"));
        }
        Ok(())
    }

    fn forward(&self, input: &ModelInput) -> Result<(Activations, [f64; 2])> {
        self.check_input(input)?;
        let h = self.config.hidden_size;
        let mut pooled = vec![0.0; h];
        let mut attended = 0;
        for ((v, &pos), _) in input
            .vectors
            .iter()
            .zip(&input.position_ids)
            .zip(&input.attention_mask)
            .filter(|(_, &m)| m)
        {
            attended += 1;
            let pe = &self.position_embeddings[pos * h..(pos + 1) * h];
            for ((acc, x), p) in pooled.iter_mut().zip(v).zip(pe) {
                *acc += x + p;
            }
        }
        pooled.iter_mut().for_each(|x| *x /= attended as f64);
        let hidden: Vec<f64> = (0..h)
            .map(|i| {
                let row = &self.pool_weight[i * h..(i + 1) * h];
                let pre = self.pool_bias[i] + row.iter().zip(&pooled).map(|(w, x)| w * x).sum::<f64>();
                pre.tanh()
            })
            .collect();
        let mut logits = [0.0; 2];
        for (c, logit) in logits.iter_mut().enumerate() {
            let row = &self.head_weight[c * h..(c + 1) * h];
            *logit = self.head_bias[c] + row.iter().zip(&hidden).map(|(w, z)| w * z).sum::<f64>();
        }
        Ok((
            Activations {
                pooled,
                hidden,
                attended,
            },
            logits,
        ))
    }
}

impl LanguageModel for TinyLm {
    fn id(&self) -> &str {
        &self.config.id
    }

    fn hidden_size(&self) -> usize {
        self.config.hidden_size
    }

    fn max_positions(&self) -> usize {
        self.config.max_positions
    }

    fn tokenize(&self, text: &str) -> Vec<u32> {
        word_pieces(text).iter().map(|p| self.token_id(p)).collect()
    }

    fn embed(&self, ids: &[u32]) -> Vec<Vec<f64>> {
        let h = self.config.hidden_size;
        ids.iter()
            .map(|&id| self.token_embeddings[id as usize * h..(id as usize + 1) * h].to_vec())
            .collect()
    }

    fn logits(&self, input: &ModelInput) -> Result<[f64; 2]> {
        self.forward(input).map(|(_, logits)| logits)
    }
}

impl TrainableLm for TinyLm {
    type Grad = TinyLmGrad;

    fn zero_grad(&self) -> TinyLmGrad {
        TinyLmGrad {
            token_embeddings: vec![0.0; self.token_embeddings.len()],
            position_embeddings: vec![0.0; self.position_embeddings.len()],
            pool_weight: vec![0.0; self.pool_weight.len()],
            pool_bias: vec![0.0; self.pool_bias.len()],
            head_weight: vec![0.0; self.head_weight.len()],
            head_bias: vec![0.0; self.head_bias.len()],
        }
    }

    fn backward(&self, input: &ModelInput, grad_logits: [f64; 2], grad: &mut TinyLmGrad) -> Vec<Vec<f64>> {
        let h = self.config.hidden_size;
        let (act, _) = self.forward(input).expect("backward on an input that failed forward");
        let mut d_hidden = vec![0.0; h];
        for (c, &g) in grad_logits.iter().enumerate() {
            grad.head_bias[c] += g;
            let row = &self.head_weight[c * h..(c + 1) * h];
            for i in 0..h {
                grad.head_weight[c * h + i] += g * act.hidden[i];
                d_hidden[i] += g * row[i];
            }
        }
        let mut d_pooled = vec![0.0; h];
        for i in 0..h {
            let d_pre = d_hidden[i] * (1.0 - act.hidden[i] * act.hidden[i]);
            grad.pool_bias[i] += d_pre;
            for j in 0..h {
                grad.pool_weight[i * h + j] += d_pre * act.pooled[j];
                d_pooled[j] += d_pre * self.pool_weight[i * h + j];
            }
        }
        let share: Vec<f64> = d_pooled.iter().map(|d| d / act.attended as f64).collect();
        input
            .attention_mask
            .iter()
            .zip(&input.position_ids)
            .map(|(&attended, &pos)| {
                if attended {
                    for (g, s) in grad.position_embeddings[pos * h..(pos + 1) * h].iter_mut().zip(&share) {
                        *g += s;
                    }
                    share.clone()
                } else {
                    vec![0.0; h]
                }
            })
            .collect()
    }

    fn accumulate_embedding_grad(&self, ids: &[u32], input_grads: &[Vec<f64>], grad: &mut TinyLmGrad) {
        let h = self.config.hidden_size;
        for (&id, g) in ids.iter().zip(input_grads) {
            let slot = &mut grad.token_embeddings[id as usize * h..(id as usize + 1) * h];
            for (acc, x) in slot.iter_mut().zip(g) {
                *acc += x;
            }
        }
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            &mut self.token_embeddings,
            &mut self.position_embeddings,
            &mut self.pool_weight,
            &mut self.pool_bias,
            &mut self.head_weight,
            &mut self.head_bias,
        ]
    }

    fn grad_slices(grad: &TinyLmGrad) -> Vec<&[f64]> {
        vec![
            &grad.token_embeddings,
            &grad.position_embeddings,
            &grad.pool_weight,
            &grad.pool_bias,
            &grad.head_weight,
            &grad.head_bias,
        ]
    }
}
