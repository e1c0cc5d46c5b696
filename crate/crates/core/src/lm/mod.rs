//! Compact autoregressive language models used as teacher and student.
//!
//! Both architectures read the context one token at a time and expose the
//! next-token distribution after each token. With an empty context the
//! logits are just the output bias.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::divergence::ProbVector;
use crate::error::{Error, Result};
use crate::numcore::{softmax_slice, DenseMatrix, SeededRng};

mod attn;
pub mod checkpoint;
mod gru;

pub use checkpoint::{load_checkpoint, save_checkpoint};

pub type TokenId = usize;

pub const MAX_VOCAB: usize = 256;
const INIT_SCALE: f64 = 0.08;

/// Fixed symbol table with reserved BOS, EOS, PAD and SEP entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, TokenId>,
    pub bos: TokenId,
    pub eos: TokenId,
    pub pad: TokenId,
    pub sep: TokenId,
}

pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const PAD: &str = "<pad>";
pub const SEP: &str = "<sep>";

impl Vocab {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() > MAX_VOCAB {
            return Err(Error::config(format!(
                "vocabulary has {} symbols, at most {MAX_VOCAB} allowed",
                tokens.len()
            )));
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::config(format!("invalid vocabulary symbol {t:?}")));
            }
            if ids.insert(t.clone(), i).is_some() {
                return Err(Error::config(format!("duplicate vocabulary symbol {t:?}")));
            }
        }
        let find = |s: &str| {
            ids.get(s)
                .copied()
                .ok_or_else(|| Error::config(format!("vocabulary lacks reserved symbol {s}")))
        };
        Ok(Self {
            bos: find(BOS)?,
            eos: find(EOS)?,
            pad: find(PAD)?,
            sep: find(SEP)?,
            tokens,
            ids,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or("<?>"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    /// Embedding, one GRU cell, output projection.
    Gru,
    /// Embedding plus positions, one causal attention head, tanh mixer, output projection.
    Attn1,
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arch::Gru => "gru",
            Arch::Attn1 => "attn1",
        })
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gru" => Ok(Arch::Gru),
            "attn1" => Ok(Arch::Attn1),
            other => Err(Error::config(format!("unknown architecture {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Arch,
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub context_len: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("context_len", self.context_len),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::config(format!("{name} must be at least 1")));
            }
        }
        if self.vocab_size > MAX_VOCAB {
            return Err(Error::config(format!(
                "vocab_size {} exceeds {MAX_VOCAB}",
                self.vocab_size
            )));
        }
        Ok(())
    }

    pub(crate) fn block_layout(&self) -> Vec<BlockSpec> {
        match self.arch {
            Arch::Gru => gru::layout(self),
            Arch::Attn1 => attn::layout(self),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct BlockSpec {
    pub name: &'static str,
    pub rows: usize,
    pub cols: usize,
    pub bias: bool,
}

/// Weights of one model. Blocks follow the order of the architecture's layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    blocks: Vec<DenseMatrix>,
}

/// Gradients with the same block structure as [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    blocks: Vec<DenseMatrix>,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self {
            blocks: params
                .blocks
                .iter()
                .map(|b| DenseMatrix::zeros(b.rows(), b.cols()))
                .collect(),
        }
    }

    pub(crate) fn from_blocks(blocks: Vec<DenseMatrix>) -> Self {
        Self { blocks }
    }

    pub fn blocks(&self) -> &[DenseMatrix] {
        &self.blocks
    }

    pub(crate) fn blocks_mut(&mut self) -> &mut [DenseMatrix] {
        &mut self.blocks
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.blocks.iter_mut().for_each(|b| b.scale(s));
    }

    pub fn norm(&self) -> f64 {
        self.blocks
            .iter()
            .map(DenseMatrix::sum_sq)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().all(DenseMatrix::is_finite)
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.blocks
            .iter()
            .flat_map(|b| b.data().iter().copied())
            .collect()
    }
}

impl ModelParams {
    /// Uniform(-0.08, 0.08) weights and zero biases.
    pub fn init(config: ModelConfig, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let blocks = config
            .block_layout()
            .into_iter()
            .map(|s| {
                if s.bias {
                    DenseMatrix::zeros(s.rows, s.cols)
                } else {
                    DenseMatrix::uniform(s.rows, s.cols, INIT_SCALE, rng)
                }
            })
            .collect();
        Ok(Self { config, blocks })
    }

    pub fn from_blocks(config: ModelConfig, blocks: Vec<DenseMatrix>) -> Result<Self> {
        config.validate()?;
        let layout = config.block_layout();
        if layout.len() != blocks.len() {
            return Err(Error::format(format!(
                "{} architecture expects {} parameter blocks, found {}",
                config.arch,
                layout.len(),
                blocks.len()
            )));
        }
        for (spec, b) in layout.iter().zip(&blocks) {
            if b.shape() != (spec.rows, spec.cols) {
                return Err(Error::format(format!(
                    "block {} has shape {:?}, expected {:?}",
                    spec.name,
                    b.shape(),
                    (spec.rows, spec.cols)
                )));
            }
            if !b.is_finite() {
                return Err(Error::format(format!(
                    "block {} has non-finite values",
                    spec.name
                )));
            }
        }
        Ok(Self { config, blocks })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn blocks(&self) -> &[DenseMatrix] {
        &self.blocks
    }

    pub(crate) fn blocks_mut(&mut self) -> &mut [DenseMatrix] {
        &mut self.blocks
    }

    pub fn block_names(&self) -> Vec<&'static str> {
        self.config.block_layout().iter().map(|s| s.name).collect()
    }

    pub fn num_params(&self) -> usize {
        self.blocks.iter().map(|b| b.data().len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.blocks
            .iter()
            .flat_map(|b| b.data().iter().copied())
            .collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::invalid(format!(
                "flat parameter vector has {} entries, model has {}",
                flat.len(),
                self.num_params()
            )));
        }
        let mut offset = 0;
        for b in &mut self.blocks {
            let n = b.data().len();
            b.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Zero the output projection and bias, making every prediction uniform.
    pub fn zero_output(&mut self) {
        let n = self.blocks.len();
        self.blocks[n - 2].scale(0.0);
        self.blocks[n - 1].scale(0.0);
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().all(DenseMatrix::is_finite)
    }

    fn check_tokens(&self, tokens: &[TokenId]) -> Result<()> {
        if tokens.len() > self.config.context_len {
            return Err(Error::invalid(format!(
                "context of {} tokens exceeds context_len {}",
                tokens.len(),
                self.config.context_len
            )));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(Error::invalid(format!(
                "token id {bad} outside vocabulary of {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    /// Fresh incremental decoding state with no tokens consumed.
    pub fn start(&self) -> DecodeState {
        let logits = self.blocks[self.blocks.len() - 1].data().to_vec();
        let inner = match self.config.arch {
            Arch::Gru => Inner::Gru(gru::State::new(&self.config)),
            Arch::Attn1 => Inner::Attn(attn::State::default()),
        };
        DecodeState {
            inner,
            logits,
            consumed: 0,
        }
    }

    /// Next-token logits after reading `context`.
    pub fn forward_logits(&self, context: &[TokenId]) -> Result<Vec<f64>> {
        self.check_tokens(context)?;
        let mut state = self.start();
        for &t in context {
            state.feed_unchecked(self, t);
        }
        Ok(state.logits)
    }

    /// Next-token distribution after reading `context`.
    pub fn forward_dist(&self, context: &[TokenId]) -> Result<ProbVector> {
        let logits = self.forward_logits(context)?;
        Ok(ProbVector::from_raw(softmax_slice(&logits, 1.0)))
    }

    /// Logits at every response position; entry `t` conditions on
    /// `prompt ++ response[..t]`.
    pub fn forward_seq_logits(
        &self,
        prompt: &[TokenId],
        response: &[TokenId],
    ) -> Result<Vec<Vec<f64>>> {
        if response.is_empty() {
            self.check_tokens(prompt)?;
            return Ok(Vec::new());
        }
        let consumed = [prompt, &response[..response.len() - 1]].concat();
        self.check_tokens(&consumed)?;
        if let Some(&bad) = response.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(Error::invalid(format!("token id {bad} outside vocabulary")));
        }
        let mut state = self.start();
        for &t in prompt {
            state.feed_unchecked(self, t);
        }
        let mut out = Vec::with_capacity(response.len());
        out.push(state.logits.clone());
        for &t in &response[..response.len() - 1] {
            state.feed_unchecked(self, t);
            out.push(state.logits.clone());
        }
        Ok(out)
    }

    pub fn forward_seq(&self, prompt: &[TokenId], response: &[TokenId]) -> Result<Vec<ProbVector>> {
        Ok(self
            .forward_seq_logits(prompt, response)?
            .iter()
            .map(|l| ProbVector::from_raw(softmax_slice(l, 1.0)))
            .collect())
    }

    /// Parameter gradients of `sum_t <logit_grads[t], logits_t>` where
    /// `logits_t` are the response-position logits of [`Self::forward_seq_logits`].
    pub fn backward(
        &self,
        prompt: &[TokenId],
        response: &[TokenId],
        logit_grads: &[Vec<f64>],
    ) -> Result<Gradients> {
        if logit_grads.len() != response.len() {
            return Err(Error::invalid(format!(
                "{} logit gradients for a response of {} tokens",
                logit_grads.len(),
                response.len()
            )));
        }
        if let Some(g) = logit_grads
            .iter()
            .find(|g| g.len() != self.config.vocab_size)
        {
            return Err(Error::invalid(format!(
                "logit gradient of length {} for vocabulary of {}",
                g.len(),
                self.config.vocab_size
            )));
        }
        let mut grads = Gradients::zeros_like(self);
        if response.is_empty() {
            return Ok(grads);
        }
        let consumed = [prompt, &response[..response.len() - 1]].concat();
        self.check_tokens(&consumed)?;
        // Gradient attached to the state after `s` consumed tokens.
        let mut by_state: Vec<Option<&[f64]>> = vec![None; consumed.len() + 1];
        for (t, g) in logit_grads.iter().enumerate() {
            by_state[prompt.len() + t] = Some(g.as_slice());
        }
        match self.config.arch {
            Arch::Gru => gru::backward(self, &consumed, &by_state, &mut grads),
            Arch::Attn1 => attn::backward(self, &consumed, &by_state, &mut grads),
        }
        Ok(grads)
    }
}

#[derive(Debug, Clone)]
enum Inner {
    Gru(gru::State),
    Attn(attn::State),
}

/// Incremental decoding state; feeding a token costs one model step.
#[derive(Debug, Clone)]
pub struct DecodeState {
    inner: Inner,
    logits: Vec<f64>,
    consumed: usize,
}

impl DecodeState {
    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn consumed(&self) -> usize {
        self.consumed
    }

    pub fn feed(&mut self, params: &ModelParams, token: TokenId) -> Result<()> {
        if token >= params.config.vocab_size {
            return Err(Error::invalid(format!(
                "token id {token} outside vocabulary"
            )));
        }
        if self.consumed >= params.config.context_len {
            return Err(Error::invalid(format!(
                "context_len {} exhausted",
                params.config.context_len
            )));
        }
        self.feed_unchecked(params, token);
        Ok(())
    }

    fn feed_unchecked(&mut self, params: &ModelParams, token: TokenId) {
        match &mut self.inner {
            Inner::Gru(s) => s.feed(params, token, &mut self.logits),
            Inner::Attn(s) => s.feed(params, token, self.consumed, &mut self.logits),
        }
        self.consumed += 1;
    }
}
