//! Training loops: supervised fine-tuning, token-level KD, sequence-level KD,
//! student-generated-output distillation and switched distillation.
//!
//! One optimizer step processes a batch. Each item picks its training
//! sequence (ground truth, or a generation under the method's policy with
//! probability `mix_ratio`), runs teacher and student along it, and adds the
//! per-step divergence gradient at the student's logits. Sampled tokens are
//! data: no gradient flows through the sampling decision and the teacher is
//! never updated. The batch loss is the token-mean of per-step divergences.

use std::fmt::{self, Write as _};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Example;
use crate::divergence::{step_logit_grad, step_value, DivergenceKind, DivergenceSpec};
use crate::error::{Error, Result};
use crate::eval::{evaluate_model, EvalOptions, LengthBucketSpec};
use crate::lm::checkpoint::{
    expect_eof, get_u64, put_u32, put_u64, read_blocks, read_embedded_params, read_header,
    write_blocks, write_params,
};
use crate::lm::{Gradients, ModelConfig, ModelParams, TokenId, Vocab};
use crate::numcore::{softmax_slice, stream, SeededRng};
use crate::policy::{rollout, PolicyKind, PolicySpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Cross-entropy on ground truth, no teacher.
    Sft,
    /// Forward KL to the teacher on ground truth.
    Kd,
    /// Cross-entropy on teacher-sampled sequences.
    Seqkd,
    /// Divergence on student samples mixed with ground truth.
    SgoDistill,
    /// Divergence on sequences from the configured (switching) policy mixed with ground truth.
    SwitchDistill,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Sft,
        Method::Kd,
        Method::Seqkd,
        Method::SgoDistill,
        Method::SwitchDistill,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Sft => "sft",
            Method::Kd => "kd",
            Method::Seqkd => "seqkd",
            Method::SgoDistill => "sgo_distill",
            Method::SwitchDistill => "switch_distill",
        }
    }

    pub fn uses_teacher(self) -> bool {
        self != Method::Sft
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config(format!("unknown training method {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub method: Method,
    pub divergence: DivergenceSpec,
    pub policy: PolicySpec,
    /// Probability that a batch item trains on a generated sequence.
    pub mix_ratio: f64,
    pub lm_loss_weight: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
    pub seed: u64,
    /// Steps between validation passes; 0 validates only at epoch ends.
    pub eval_every: usize,
    /// Validation sampling settings.
    pub validation: EvalOptions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::SwitchDistill,
            divergence: DivergenceSpec::default(),
            policy: PolicySpec::default(),
            mix_ratio: 0.5,
            lm_loss_weight: 0.0,
            epochs: 3,
            batch_size: 16,
            learning_rate: 1e-3,
            grad_clip: 1.0,
            seed: 0,
            eval_every: 0,
            validation: EvalOptions {
                seeds: 1,
                ..EvalOptions::default()
            },
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.divergence.validate()?;
        self.policy.validate()?;
        if !(0.0..=1.0).contains(&self.mix_ratio) {
            return Err(Error::config(format!(
                "mix_ratio {} outside [0, 1]",
                self.mix_ratio
            )));
        }
        if !(self.lm_loss_weight >= 0.0 && self.lm_loss_weight.is_finite()) {
            return Err(Error::config("lm_loss_weight must be >= 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be positive"));
        }
        if !(self.grad_clip >= 0.0 && self.grad_clip.is_finite()) {
            return Err(Error::config("grad_clip must be >= 0"));
        }
        if self.validation.seeds == 0 {
            return Err(Error::config("validation needs at least one seed"));
        }
        Ok(())
    }

    /// Policy that generates training sequences for this method, if any.
    pub fn generation_policy(&self) -> Option<PolicySpec> {
        match self.method {
            Method::Sft | Method::Kd => None,
            Method::Seqkd => Some(PolicySpec {
                kind: PolicyKind::TeacherOnly,
                ..self.policy
            }),
            Method::SgoDistill => Some(PolicySpec {
                kind: PolicyKind::Sgo,
                ..self.policy
            }),
            Method::SwitchDistill => Some(self.policy),
        }
    }

    /// Divergence actually trained on.
    pub fn effective_divergence(&self) -> DivergenceSpec {
        match self.method {
            Method::Kd => DivergenceSpec::new(DivergenceKind::Kl),
            _ => self.divergence,
        }
    }

    /// Chance an item uses a generated sequence.
    fn generated_probability(&self) -> f64 {
        match self.method {
            Method::Sft | Method::Kd => 0.0,
            Method::Seqkd => 1.0,
            Method::SgoDistill | Method::SwitchDistill => self.mix_ratio,
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    m: Gradients,
    v: Gradients,
    step: u64,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Adam {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            m: Gradients::zeros_like(params),
            v: Gradients::zeros_like(params),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, params: &mut ModelParams, grads: &Gradients, lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - BETA1.powi(self.step as i32);
        let bc2 = 1.0 - BETA2.powi(self.step as i32);
        let blocks = params.blocks_mut();
        let ms = self.m.blocks_mut();
        let vs = self.v.blocks_mut();
        for (((p, g), m), v) in blocks.iter_mut().zip(grads.blocks()).zip(ms).zip(vs) {
            let (p, g) = (p.data_mut(), g.data());
            let (m, v) = (m.data_mut(), v.data_mut());
            for i in 0..p.len() {
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
                p[i] -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + ADAM_EPS);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: u64,
    pub epoch: usize,
    pub loss: f64,
    pub val_rouge_l: Option<f64>,
    pub teacher_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_rouge_l: f64,
    pub generated_fraction: f64,
    pub teacher_fraction: Option<f64>,
}

/// Everything a training run reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub method: Method,
    pub divergence: DivergenceKind,
    pub policy: Option<PolicyKind>,
    pub initial_val_rouge_l: f64,
    pub best_epoch: usize,
    pub best_val_rouge_l: f64,
    pub epochs: Vec<EpochSummary>,
    /// Token-weighted (student, teacher) split over every generated training sequence.
    pub intervention: Option<(f64, f64)>,
    pub generated_items: u64,
    pub total_items: u64,
    #[serde(skip)]
    pub log: Vec<LogRow>,
}

impl ExperimentReport {
    pub fn teacher_fraction(&self) -> Option<f64> {
        self.intervention.map(|(_, t)| t)
    }

    /// `step,loss,val_rougeL,teacher_fraction`; blanks where not measured.
    pub fn log_csv(&self) -> String {
        let mut out = String::from("step,epoch,loss,val_rougeL,teacher_fraction\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.log {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.step,
                r.epoch,
                r.loss,
                opt(r.val_rouge_l),
                opt(r.teacher_fraction)
            );
        }
        out
    }
}

/// Mutable state of one run.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub student: ModelParams,
    pub optimizer: Adam,
    pub step: u64,
    pub epoch: usize,
    pub loss_history: Vec<f64>,
    pub best: ModelParams,
    pub best_score: f64,
    pub best_epoch: usize,
    counters: Counters,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Counters {
    items: u64,
    generated_items: u64,
    generated_tokens: u64,
    teacher_tokens: u64,
}

impl TrainState {
    pub fn new(student: ModelParams) -> Self {
        Self {
            optimizer: Adam::new(&student),
            best: student.clone(),
            student,
            step: 0,
            epoch: 0,
            loss_history: Vec::new(),
            best_score: f64::NEG_INFINITY,
            best_epoch: 0,
            counters: Counters::default(),
        }
    }
}

/// What one optimizer step did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub loss: f64,
    pub tokens: usize,
    pub generated_items: usize,
    pub generated_tokens: usize,
    pub teacher_tokens: usize,
}

/// Training inputs that stay fixed over a run.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub train: &'a [Example],
    pub valid: &'a [Example],
    pub vocab: &'a Vocab,
    pub buckets: &'a LengthBucketSpec,
    /// Held-out sequences for the auxiliary language-modeling loss.
    pub lm_corpus: &'a [Example],
}

/// A training sequence for one item, with teacher and student logits along it.
struct ItemSequence {
    response: Vec<TokenId>,
    teacher_logits: Option<Vec<Vec<f64>>>,
    generated: bool,
    teacher_tokens: usize,
}

fn choose_sequence(
    teacher: Option<&ModelParams>,
    student: &ModelParams,
    prompt: &[TokenId],
    ex: &Example,
    config: &TrainConfig,
    vocab: &Vocab,
    rng: &mut SeededRng,
) -> Result<ItemSequence> {
    let use_generated = rng.bernoulli(config.generated_probability());
    match (config.generation_policy(), teacher) {
        (Some(policy), Some(teacher)) if use_generated => {
            let mut gen_rng = rng.derive(&[stream::STUDENT_SAMPLING]);
            let r = rollout(teacher, student, prompt, &policy, vocab.eos, &mut gen_rng)?;
            Ok(ItemSequence {
                teacher_tokens: r.trace.teacher_tokens(),
                response: r.trace.tokens,
                teacher_logits: Some(r.teacher_logits),
                generated: true,
            })
        }
        _ => Ok(ItemSequence {
            response: ex.response.clone(),
            teacher_logits: None,
            generated: false,
            teacher_tokens: 0,
        }),
    }
}

/// Sum of per-step losses and the logit gradients for one sequence.
fn sequence_loss(
    teacher: Option<&ModelParams>,
    student: &ModelParams,
    prompt: &[TokenId],
    seq: &ItemSequence,
    config: &TrainConfig,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let student_logits = student.forward_seq_logits(prompt, &seq.response)?;
    let one_hot_targets = matches!(config.method, Method::Sft | Method::Seqkd);
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(seq.response.len());
    if one_hot_targets {
        for (logits, &target) in student_logits.iter().zip(&seq.response) {
            let q = softmax_slice(logits, 1.0);
            loss -= q[target].max(crate::divergence::PROB_FLOOR).ln();
            let mut g = q;
            g[target] -= 1.0;
            grads.push(g);
        }
        return Ok((loss, grads));
    }
    let teacher =
        teacher.ok_or_else(|| Error::config(format!("{} needs a teacher", config.method)))?;
    let computed;
    let teacher_logits = match &seq.teacher_logits {
        Some(l) => l,
        None => {
            computed = teacher.forward_seq_logits(prompt, &seq.response)?;
            &computed
        }
    };
    let spec = config.effective_divergence();
    for (tl, sl) in teacher_logits.iter().zip(&student_logits) {
        let p = softmax_slice(tl, 1.0);
        let q = softmax_slice(sl, 1.0);
        loss += step_value(&p, &q, &spec);
        grads.push(step_logit_grad(&p, &q, &spec));
    }
    Ok((loss, grads))
}

/// Compute batch gradients without updating anything.
pub fn batch_gradients(
    teacher: Option<&ModelParams>,
    student: &ModelParams,
    batch: &[Example],
    lm_batch: &[Example],
    vocab: &Vocab,
    config: &TrainConfig,
    rng: &SeededRng,
) -> Result<(Gradients, StepOutcome)> {
    let mut grads = Gradients::zeros_like(student);
    let mut outcome = StepOutcome {
        loss: 0.0,
        tokens: 0,
        generated_items: 0,
        generated_tokens: 0,
        teacher_tokens: 0,
    };
    let mut items = Vec::with_capacity(batch.len());
    for (i, ex) in batch.iter().enumerate() {
        let prompt = ex.prompt(vocab);
        let mut item_rng = rng.derive(&[stream::MIXING, i as u64]);
        let seq = choose_sequence(teacher, student, &prompt, ex, config, vocab, &mut item_rng)?;
        outcome.tokens += seq.response.len();
        if seq.generated {
            outcome.generated_items += 1;
            outcome.generated_tokens += seq.response.len();
            outcome.teacher_tokens += seq.teacher_tokens;
        }
        items.push((prompt, seq));
    }
    let norm = 1.0 / outcome.tokens.max(1) as f64;
    for (prompt, seq) in &items {
        let (loss, mut logit_grads) = sequence_loss(teacher, student, prompt, seq, config)?;
        outcome.loss += loss * norm;
        logit_grads
            .iter_mut()
            .for_each(|g| g.iter_mut().for_each(|x| *x *= norm));
        grads.add_assign(&student.backward(prompt, &seq.response, &logit_grads)?);
    }

    if config.lm_loss_weight > 0.0 && !lm_batch.is_empty() {
        // Next-token cross-entropy over the whole sequence, conditioned on BOS.
        let seqs: Vec<Vec<TokenId>> = lm_batch
            .iter()
            .map(|ex| {
                let mut s = ex.prompt(vocab);
                s.extend_from_slice(&ex.response);
                s
            })
            .collect();
        let lm_tokens: usize = seqs.iter().map(|s| s.len() - 1).sum();
        let scale = config.lm_loss_weight / lm_tokens.max(1) as f64;
        for s in &seqs {
            let logits = student.forward_seq_logits(&s[..1], &s[1..])?;
            let mut logit_grads = Vec::with_capacity(logits.len());
            for (l, &target) in logits.iter().zip(&s[1..]) {
                let mut q = softmax_slice(l, 1.0);
                outcome.loss -= scale * q[target].max(crate::divergence::PROB_FLOOR).ln();
                q[target] -= 1.0;
                q.iter_mut().for_each(|x| *x *= scale);
                logit_grads.push(q);
            }
            grads.add_assign(&student.backward(&s[..1], &s[1..], &logit_grads)?);
        }
    }
    Ok((grads, outcome))
}

/// One optimizer update on `batch`.
pub fn distill_step(
    teacher: Option<&ModelParams>,
    state: &mut TrainState,
    batch: &[Example],
    lm_batch: &[Example],
    vocab: &Vocab,
    config: &TrainConfig,
) -> Result<StepOutcome> {
    let rng = SeededRng::new(config.seed).derive(&[stream::MIXING, state.step]);
    let (mut grads, outcome) = batch_gradients(
        teacher,
        &state.student,
        batch,
        lm_batch,
        vocab,
        config,
        &rng,
    )?;
    if !outcome.loss.is_finite() || !grads.is_finite() {
        return Err(Error::Training {
            step: state.step,
            message: format!(
                "non-finite loss {} (method {})",
                outcome.loss, config.method
            ),
        });
    }
    if config.grad_clip > 0.0 {
        let norm = grads.norm();
        if norm > config.grad_clip {
            grads.scale(config.grad_clip / norm);
        }
    }
    state
        .optimizer
        .update(&mut state.student, &grads, config.learning_rate);
    state.step += 1;
    state.loss_history.push(outcome.loss);
    state.counters.items += batch.len() as u64;
    state.counters.generated_items += outcome.generated_items as u64;
    state.counters.generated_tokens += outcome.generated_tokens as u64;
    state.counters.teacher_tokens += outcome.teacher_tokens as u64;
    Ok(outcome)
}

fn validate_score(params: &ModelParams, data: &TrainData, config: &TrainConfig) -> Result<f64> {
    if data.valid.is_empty() {
        return Ok(0.0);
    }
    let report = evaluate_model(
        params,
        data.valid,
        data.vocab,
        data.buckets,
        &config.validation,
        config.seed,
    )?;
    Ok(report.overall)
}

/// Run the remaining epochs of `state`, keeping the best-validation checkpoint.
pub fn train(
    teacher: Option<&ModelParams>,
    state: &mut TrainState,
    config: &TrainConfig,
    data: &TrainData,
) -> Result<ExperimentReport> {
    config.validate()?;
    if data.train.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if config.method.uses_teacher() && teacher.is_none() {
        return Err(Error::config(format!(
            "method {} needs a teacher",
            config.method
        )));
    }
    let mut log = Vec::new();
    let initial = validate_score(&state.student, data, config)?;
    if state.best_score == f64::NEG_INFINITY {
        state.best_score = initial;
        state.best = state.student.clone();
        state.best_epoch = 0;
    }
    let mut epochs = Vec::new();
    let root = SeededRng::new(config.seed);
    while state.epoch < config.epochs {
        let epoch = state.epoch + 1;
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        root.derive(&[stream::SHUFFLE, epoch as u64])
            .shuffle(&mut order);
        let before = state.counters;
        let mut losses = Vec::new();
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<Example> = chunk.iter().map(|&i| data.train[i].clone()).collect();
            let lm_batch: Vec<Example> =
                if config.lm_loss_weight > 0.0 && !data.lm_corpus.is_empty() {
                    (0..config.batch_size)
                        .map(|k| {
                            let j = (state.step as usize * config.batch_size + k)
                                % data.lm_corpus.len();
                            data.lm_corpus[j].clone()
                        })
                        .collect()
                } else {
                    Vec::new()
                };
            let out = distill_step(teacher, state, &batch, &lm_batch, data.vocab, config)?;
            losses.push(out.loss);
            let teacher_fraction = (out.generated_tokens > 0)
                .then(|| out.teacher_tokens as f64 / out.generated_tokens as f64);
            let val =
                if config.eval_every > 0 && state.step.is_multiple_of(config.eval_every as u64) {
                    Some(validate_score(&state.student, data, config)?)
                } else {
                    None
                };
            log.push(LogRow {
                step: state.step,
                epoch,
                loss: out.loss,
                val_rouge_l: val,
                teacher_fraction,
            });
        }
        let score = validate_score(&state.student, data, config)?;
        if let Some(last) = log.last_mut() {
            last.val_rouge_l = Some(score);
        }
        if score > state.best_score {
            state.best_score = score;
            state.best = state.student.clone();
            state.best_epoch = epoch;
        }
        let gen_tokens = state.counters.generated_tokens - before.generated_tokens;
        let gen_items = state.counters.generated_items - before.generated_items;
        let items = state.counters.items - before.items;
        epochs.push(EpochSummary {
            epoch,
            mean_loss: losses.iter().sum::<f64>() / losses.len() as f64,
            val_rouge_l: score,
            generated_fraction: gen_items as f64 / items.max(1) as f64,
            teacher_fraction: (gen_tokens > 0).then(|| {
                (state.counters.teacher_tokens - before.teacher_tokens) as f64 / gen_tokens as f64
            }),
        });
        state.epoch = epoch;
    }
    let c = state.counters;
    Ok(ExperimentReport {
        method: config.method,
        divergence: config.effective_divergence().kind,
        policy: config.generation_policy().map(|p| p.kind),
        initial_val_rouge_l: initial,
        best_epoch: state.best_epoch,
        best_val_rouge_l: state.best_score,
        epochs,
        intervention: (c.generated_tokens > 0).then(|| {
            let t = c.teacher_tokens as f64 / c.generated_tokens as f64;
            (1.0 - t, t)
        }),
        generated_items: c.generated_items,
        total_items: c.items,
        log,
    })
}

/// Supervised training of a freshly initialized model; returns the
/// best-validation checkpoint.
pub fn train_teacher(
    model: ModelConfig,
    config: &TrainConfig,
    data: &TrainData,
) -> Result<(ModelParams, ExperimentReport)> {
    let init = ModelParams::init(
        model,
        &mut SeededRng::new(config.seed).derive(&[stream::INIT]),
    )?;
    let config = TrainConfig {
        method: Method::Sft,
        ..*config
    };
    let mut state = TrainState::new(init);
    let report = train(None, &mut state, &config, data)?;
    Ok((state.best, report))
}

/// Distill `teacher` into `student_init`; returns the best-validation student.
pub fn run_distillation(
    teacher: &ModelParams,
    student_init: ModelParams,
    config: &TrainConfig,
    data: &TrainData,
) -> Result<(ModelParams, ExperimentReport)> {
    if teacher.config().vocab_size != student_init.config().vocab_size {
        return Err(Error::config("teacher and student vocabularies differ"));
    }
    let mut state = TrainState::new(student_init);
    let report = train(Some(teacher), &mut state, config, data)?;
    Ok((state.best, report))
}

const STATE_MAGIC: &[u8; 8] = b"SWKDSTAT";
const STATE_VERSION: u32 = 1;

/// Save everything needed to resume: current and best students, optimizer
/// moments, counters and loss history.
pub fn save_train_state(state: &TrainState, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(STATE_MAGIC)?;
    put_u32(&mut w, STATE_VERSION)?;
    put_u64(&mut w, state.step)?;
    put_u64(&mut w, state.epoch as u64)?;
    put_u64(&mut w, state.best_epoch as u64)?;
    w.write_all(&state.best_score.to_le_bytes())?;
    let c = state.counters;
    for v in [
        c.items,
        c.generated_items,
        c.generated_tokens,
        c.teacher_tokens,
    ] {
        put_u64(&mut w, v)?;
    }
    put_u64(&mut w, state.optimizer.step)?;
    put_u64(&mut w, state.loss_history.len() as u64)?;
    for l in &state.loss_history {
        w.write_all(&l.to_le_bytes())?;
    }
    write_params(&state.student, &mut w)?;
    write_params(&state.best, &mut w)?;
    write_blocks(state.optimizer.m.blocks(), &mut w)?;
    write_blocks(state.optimizer.v.blocks(), &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_train_state(path: impl AsRef<Path>) -> Result<TrainState> {
    let mut r = BufReader::new(File::open(path)?);
    read_header(&mut r, STATE_MAGIC, STATE_VERSION)?;
    let step = get_u64(&mut r)?;
    let epoch = get_u64(&mut r)? as usize;
    let best_epoch = get_u64(&mut r)? as usize;
    let best_score = f64::from_bits(get_u64(&mut r)?);
    let counters = Counters {
        items: get_u64(&mut r)?,
        generated_items: get_u64(&mut r)?,
        generated_tokens: get_u64(&mut r)?,
        teacher_tokens: get_u64(&mut r)?,
    };
    let adam_step = get_u64(&mut r)?;
    let n = get_u64(&mut r)? as usize;
    if n > 1 << 26 {
        return Err(Error::format(format!(
            "implausible loss history length {n}"
        )));
    }
    let loss_history = (0..n)
        .map(|_| get_u64(&mut r).map(f64::from_bits))
        .collect::<Result<Vec<_>>>()?;
    let student = read_embedded_params(&mut r)?;
    let best = read_embedded_params(&mut r)?;
    let m = read_blocks(&mut r)?;
    let v = read_blocks(&mut r)?;
    expect_eof(&mut r)?;
    let shapes_match = |bs: &[crate::numcore::DenseMatrix]| {
        bs.len() == student.blocks().len()
            && bs
                .iter()
                .zip(student.blocks())
                .all(|(a, b)| a.shape() == b.shape())
    };
    if !shapes_match(&m) || !shapes_match(&v) {
        return Err(Error::format(
            "optimizer moments do not match the student shapes",
        ));
    }
    Ok(TrainState {
        optimizer: Adam {
            m: Gradients::from_blocks(m),
            v: Gradients::from_blocks(v),
            step: adam_step,
        },
        student,
        best,
        step,
        epoch,
        loss_history,
        best_score,
        best_epoch,
        counters,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{default_vocab, generate_corpus, Family, TaskSpec};
    use crate::divergence::{kl, ProbVector};
    use crate::lm::Arch;
    use crate::policy::ThresholdSchedule;

    fn corpus(n: usize, seed: u64) -> (Vocab, Vec<Example>) {
        let vocab = default_vocab();
        let specs = [
            TaskSpec::new(Family::Copy, 1, 4, n / 2),
            TaskSpec::new(Family::Reverse, 1, 4, n - n / 2),
        ];
        let ex = generate_corpus(&specs, &vocab, 40, &mut SeededRng::new(seed)).unwrap();
        (vocab, ex)
    }

    fn model(vocab: &Vocab, hidden: usize, seed: u64) -> ModelParams {
        let cfg = ModelConfig {
            arch: Arch::Gru,
            vocab_size: vocab.len(),
            embed_dim: 6,
            hidden_dim: hidden,
            context_len: 40,
        };
        ModelParams::init(cfg, &mut SeededRng::new(seed)).unwrap()
    }

    fn sharpened(vocab: &Vocab, hidden: usize, seed: u64) -> ModelParams {
        let mut p = model(vocab, hidden, seed);
        let mut rng = SeededRng::new(seed ^ 0xabc);
        let flat: Vec<f64> = p
            .flatten()
            .iter()
            .map(|_| rng.uniform() * 1.6 - 0.8)
            .collect();
        p.set_flat(&flat).unwrap();
        p
    }

    fn config(method: Method) -> TrainConfig {
        TrainConfig {
            method,
            policy: PolicySpec {
                max_new_tokens: 12,
                ..PolicySpec::switch(ThresholdSchedule::exp_decay(0.1))
            },
            batch_size: 4,
            epochs: 2,
            learning_rate: 5e-3,
            validation: EvalOptions {
                seeds: 1,
                max_new_tokens: 12,
                ..EvalOptions::default()
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn identical_models_give_zero_loss() {
        let (vocab, ex) = corpus(8, 1);
        let m = sharpened(&vocab, 8, 3);
        for method in [Method::Kd, Method::SgoDistill, Method::SwitchDistill] {
            for kind in DivergenceKind::ALL {
                let cfg = TrainConfig {
                    divergence: DivergenceSpec::new(kind),
                    mix_ratio: 0.5,
                    ..config(method)
                };
                let (g, out) =
                    batch_gradients(Some(&m), &m, &ex, &[], &vocab, &cfg, &SeededRng::new(5))
                        .unwrap();
                assert!(out.loss.abs() < 1e-12, "{method} {kind}: {}", out.loss);
                assert!(g.norm() < 1e-10);
            }
        }
    }

    #[test]
    fn zero_mix_ratio_uses_ground_truth_only() {
        let (vocab, ex) = corpus(16, 2);
        let t = sharpened(&vocab, 10, 1);
        let s = model(&vocab, 6, 2);
        for method in [Method::SgoDistill, Method::SwitchDistill] {
            let cfg = TrainConfig {
                mix_ratio: 0.0,
                ..config(method)
            };
            let (g, out) =
                batch_gradients(Some(&t), &s, &ex, &[], &vocab, &cfg, &SeededRng::new(1)).unwrap();
            assert_eq!(out.generated_items, 0);
            let gt_tokens: usize = ex.iter().map(|e| e.response.len()).sum();
            assert_eq!(out.tokens, gt_tokens);
            // Same as token-level distillation with the configured divergence on ground truth.
            let kd_cfg = TrainConfig {
                mix_ratio: 1.0,
                ..config(Method::Kd)
            };
            let kd_cfg = TrainConfig {
                divergence: cfg.divergence,
                ..kd_cfg
            };
            let (g2, out2) = batch_gradients(
                Some(&t),
                &s,
                &ex,
                &[],
                &vocab,
                &TrainConfig {
                    method: Method::SgoDistill,
                    mix_ratio: 0.0,
                    ..kd_cfg
                },
                &SeededRng::new(99),
            )
            .unwrap();
            assert_eq!(out.loss, out2.loss);
            assert_eq!(g, g2);
        }
    }

    #[test]
    fn kd_always_uses_forward_kl() {
        let cfg = TrainConfig {
            divergence: DivergenceSpec::new(DivergenceKind::Rkl),
            ..config(Method::Kd)
        };
        assert_eq!(cfg.effective_divergence().kind, DivergenceKind::Kl);
        assert!(cfg.generation_policy().is_none());
        assert_eq!(
            config(Method::Seqkd).generation_policy().unwrap().kind,
            PolicyKind::TeacherOnly
        );
    }

    #[test]
    fn pipeline_gradient_matches_finite_differences() {
        let (vocab, ex) = corpus(3, 4);
        let t = sharpened(&vocab, 6, 7);
        let s = sharpened(&vocab, 4, 8);
        for (method, mix) in [
            (Method::Kd, 0.0),
            (Method::SgoDistill, 1.0),
            (Method::SwitchDistill, 1.0),
            (Method::Seqkd, 1.0),
            (Method::Sft, 0.0),
        ] {
            for kind in [
                DivergenceKind::Kl,
                DivergenceKind::Srkl,
                DivergenceKind::Gjsd,
            ] {
                let cfg = TrainConfig {
                    divergence: DivergenceSpec::new(kind),
                    mix_ratio: mix,
                    lm_loss_weight: 0.3,
                    ..config(method)
                };
                let rng = SeededRng::new(11);
                let (g, _) =
                    batch_gradients(Some(&t), &s, &ex, &ex[..1], &vocab, &cfg, &rng).unwrap();
                let theta = s.flatten();
                let analytic = g.flatten();
                // Check a strided subset of coordinates to keep the test fast.
                let idx: Vec<usize> = (0..theta.len()).step_by(37).collect();
                let mut probe = s.clone();
                let mut loss_at = |th: &[f64]| {
                    probe.set_flat(th).unwrap();
                    batch_gradients(Some(&t), &probe, &ex, &ex[..1], &vocab, &cfg, &rng)
                        .map(|(_, o)| o.loss)
                };
                let base = theta.clone();
                for &i in &idx {
                    let eps = 1e-6;
                    let mut plus = base.clone();
                    plus[i] += eps;
                    let mut minus = base.clone();
                    minus[i] -= eps;
                    let fd = (loss_at(&plus).unwrap() - loss_at(&minus).unwrap()) / (2.0 * eps);
                    let err = (fd - analytic[i]).abs() / analytic[i].abs().max(1.0);
                    assert!(
                        err < 1e-5,
                        "{method} {kind} coord {i}: fd {fd} vs {}",
                        analytic[i]
                    );
                }
            }
        }
    }

    #[test]
    fn mix_fraction_tracks_ratio() {
        let (vocab, ex) = corpus(20, 5);
        let t = model(&vocab, 4, 1);
        let s = model(&vocab, 4, 2);
        let cfg = TrainConfig {
            mix_ratio: 0.5,
            policy: PolicySpec {
                max_new_tokens: 2,
                ..PolicySpec::of_kind(PolicyKind::Sgo)
            },
            ..config(Method::SgoDistill)
        };
        let mut generated = 0;
        let mut total = 0;
        for step in 0..500u64 {
            let rng = SeededRng::new(3).derive(&[stream::MIXING, step]);
            let (_, out) = batch_gradients(Some(&t), &s, &ex, &[], &vocab, &cfg, &rng).unwrap();
            generated += out.generated_items;
            total += ex.len();
        }
        assert_eq!(total, 10_000);
        let frac = generated as f64 / total as f64;
        assert!((0.48..=0.52).contains(&frac), "{frac}");
    }

    #[test]
    fn seqkd_loss_is_kl_to_one_hot_targets() {
        let (vocab, ex) = corpus(2, 6);
        let t = sharpened(&vocab, 6, 1);
        let s = sharpened(&vocab, 4, 2);
        let cfg = config(Method::Seqkd);
        let prompt = ex[0].prompt(&vocab);
        let seq = choose_sequence(
            Some(&t),
            &s,
            &prompt,
            &ex[0],
            &cfg,
            &vocab,
            &mut SeededRng::new(4),
        )
        .unwrap();
        assert!(seq.generated);
        assert_eq!(seq.teacher_tokens, seq.response.len());
        let (loss, _) = sequence_loss(Some(&t), &s, &prompt, &seq, &cfg).unwrap();
        let dists = s.forward_seq(&prompt, &seq.response).unwrap();
        let oracle: f64 = dists
            .iter()
            .zip(&seq.response)
            .map(|(q, &y)| kl(&ProbVector::one_hot(vocab.len(), y), q).unwrap())
            .sum();
        assert!((loss - oracle).abs() < 1e-9, "{loss} vs {oracle}");
    }

    #[test]
    fn training_leaves_teacher_untouched_and_is_deterministic() {
        let (vocab, ex) = corpus(12, 7);
        let t = sharpened(&vocab, 8, 1);
        let t_before = t.clone();
        let s = model(&vocab, 4, 2);
        let buckets = LengthBucketSpec::default();
        let data = TrainData {
            train: &ex[..8],
            valid: &ex[8..],
            vocab: &vocab,
            buckets: &buckets,
            lm_corpus: &[],
        };
        let cfg = config(Method::SwitchDistill);
        let (a, ra) = run_distillation(&t, s.clone(), &cfg, &data).unwrap();
        let (b, rb) = run_distillation(&t, s, &cfg, &data).unwrap();
        assert_eq!(t, t_before);
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        assert_eq!(ra.log_csv(), rb.log_csv());
        assert_eq!(ra.log.len(), 4);
        assert!(ra.best_val_rouge_l >= ra.initial_val_rouge_l);
        assert!(ra
            .epochs
            .iter()
            .all(|e| e.val_rouge_l <= ra.best_val_rouge_l));
        assert!(ra
            .log_csv()
            .starts_with("step,epoch,loss,val_rougeL,teacher_fraction\n"));
    }

    #[test]
    fn sft_loss_decreases_and_zero_epochs_is_identity() {
        let (vocab, ex) = corpus(32, 8);
        let buckets = LengthBucketSpec::default();
        let data = TrainData {
            train: &ex[..24],
            valid: &ex[24..],
            vocab: &vocab,
            buckets: &buckets,
            lm_corpus: &[],
        };
        let mcfg = *model(&vocab, 12, 0).config();
        let zero = TrainConfig {
            epochs: 0,
            ..config(Method::Sft)
        };
        let (p0, r0) = train_teacher(mcfg, &zero, &data).unwrap();
        let init = ModelParams::init(mcfg, &mut SeededRng::new(zero.seed).derive(&[stream::INIT]))
            .unwrap();
        assert_eq!(p0, init);
        assert!(r0.epochs.is_empty());

        let cfg = TrainConfig {
            epochs: 6,
            learning_rate: 1e-2,
            ..config(Method::Sft)
        };
        let (_, r) = train_teacher(mcfg, &cfg, &data).unwrap();
        let first = r.epochs.first().unwrap().mean_loss;
        let last = r.epochs.last().unwrap().mean_loss;
        assert!(last < first, "{first} -> {last}");
    }

    #[test]
    fn memorizes_small_corpus() {
        let (vocab, ex) = corpus(10, 12);
        let buckets = LengthBucketSpec::default();
        let data = TrainData {
            train: &ex,
            valid: &ex,
            vocab: &vocab,
            buckets: &buckets,
            lm_corpus: &[],
        };
        let mcfg = ModelConfig {
            embed_dim: 16,
            ..*model(&vocab, 48, 0).config()
        };
        let cfg = TrainConfig {
            epochs: 150,
            batch_size: 2,
            learning_rate: 1e-2,
            grad_clip: 5.0,
            validation: EvalOptions {
                greedy: true,
                ..config(Method::Sft).validation
            },
            ..config(Method::Sft)
        };
        let (_, r) = train_teacher(mcfg, &cfg, &data).unwrap();
        assert!(r.best_val_rouge_l >= 0.95, "{}", r.best_val_rouge_l);
    }

    #[test]
    fn sft_distillation_matches_teacher_training() {
        let (vocab, ex) = corpus(12, 9);
        let buckets = LengthBucketSpec::default();
        let data = TrainData {
            train: &ex[..8],
            valid: &ex[8..],
            vocab: &vocab,
            buckets: &buckets,
            lm_corpus: &[],
        };
        let cfg = config(Method::Sft);
        let mcfg = *model(&vocab, 5, 0).config();
        let (a, _) = train_teacher(mcfg, &cfg, &data).unwrap();
        let init =
            ModelParams::init(mcfg, &mut SeededRng::new(cfg.seed).derive(&[stream::INIT])).unwrap();
        let unrelated_teacher = model(&vocab, 3, 42);
        let (b, _) = run_distillation(&unrelated_teacher, init, &cfg, &data).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn non_finite_loss_is_a_training_error() {
        let (vocab, ex) = corpus(4, 10);
        let mut s = model(&vocab, 4, 1);
        let mut flat = s.flatten();
        let last = flat.len() - 1;
        flat[last] = f64::NAN;
        s.set_flat(&flat).unwrap_or_else(|_| {
            panic!("set_flat should accept raw values");
        });
        let mut state = TrainState::new(s);
        let err =
            distill_step(None, &mut state, &ex, &[], &vocab, &config(Method::Sft)).unwrap_err();
        assert!(matches!(err, Error::Training { step: 0, .. }), "{err}");
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let (vocab, ex) = corpus(12, 11);
        let t = sharpened(&vocab, 8, 1);
        let s = model(&vocab, 4, 2);
        let buckets = LengthBucketSpec::default();
        let data = TrainData {
            train: &ex[..8],
            valid: &ex[8..],
            vocab: &vocab,
            buckets: &buckets,
            lm_corpus: &[],
        };
        let cfg = TrainConfig {
            epochs: 3,
            ..config(Method::SgoDistill)
        };
        let mut full = TrainState::new(s.clone());
        train(Some(&t), &mut full, &cfg, &data).unwrap();

        let mut part = TrainState::new(s);
        train(
            Some(&t),
            &mut part,
            &TrainConfig { epochs: 1, ..cfg },
            &data,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.bin");
        save_train_state(&part, &path).unwrap();
        let mut resumed = load_train_state(&path).unwrap();
        assert_eq!(resumed.student, part.student);
        assert_eq!(resumed.optimizer, part.optimizer);
        train(Some(&t), &mut resumed, &cfg, &data).unwrap();
        assert_eq!(resumed.student, full.student);
        assert_eq!(resumed.best, full.best);
        assert_eq!(resumed.loss_history, full.loss_history);
        assert_eq!(resumed.counters, full.counters);
    }

    #[test]
    fn truncated_state_is_rejected() {
        let (vocab, _) = corpus(2, 1);
        let state = TrainState::new(model(&vocab, 3, 1));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.bin");
        save_train_state(&state, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(load_train_state(&path), Err(Error::Format(_))));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig {
                mix_ratio: 1.5,
                ..TrainConfig::default()
            },
            TrainConfig {
                batch_size: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                learning_rate: 0.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                grad_clip: -1.0,
                ..TrainConfig::default()
            },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
        assert_eq!(
            "switch_distill".parse::<Method>().unwrap(),
            Method::SwitchDistill
        );
        assert!("nope".parse::<Method>().is_err());
    }
}
