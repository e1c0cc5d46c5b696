//! Sequence-generation policies.
//!
//! Every policy walks both models token by token and records, per step,
//! which model emitted the token, the JSD (bits) between the two next-token
//! distributions, and (for switching) the threshold it was compared with.
//!
//! The switching rule: at response step `t` (counted from 0, prompt excluded)
//! sample from the student when `jsd_t <= tau_t`, otherwise from the teacher.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::divergence::jsd_bits;
use crate::error::{Error, Result};
use crate::lm::{ModelParams, TokenId};
use crate::numcore::{sample_index, softmax_slice, stream, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    ExpDecay,
    LinearDecrease,
    ExpGrowth,
    Constant,
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exp_decay" => Ok(Self::ExpDecay),
            "linear_decrease" => Ok(Self::LinearDecrease),
            "exp_growth" => Ok(Self::ExpGrowth),
            "constant" => Ok(Self::Constant),
            other => Err(Error::config(format!("unknown schedule kind {other:?}"))),
        }
    }
}

/// Step-indexed JSD threshold. Values are clamped to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThresholdSchedule {
    pub kind: ScheduleKind,
    pub tau0: f64,
    pub lambda: f64,
    /// Horizon of the linear schedule.
    pub max_len: usize,
    /// Value of the constant schedule.
    pub c: f64,
}

impl Default for ThresholdSchedule {
    fn default() -> Self {
        Self {
            kind: ScheduleKind::ExpDecay,
            tau0: 1.0,
            lambda: 0.1,
            max_len: 128,
            c: 0.2,
        }
    }
}

impl ThresholdSchedule {
    pub fn exp_decay(lambda: f64) -> Self {
        Self {
            lambda,
            ..Self::default()
        }
    }

    pub fn constant(c: f64) -> Self {
        Self {
            kind: ScheduleKind::Constant,
            c,
            ..Self::default()
        }
    }

    pub fn linear(max_len: usize) -> Self {
        Self {
            kind: ScheduleKind::LinearDecrease,
            max_len,
            ..Self::default()
        }
    }

    pub fn exp_growth(lambda: f64) -> Self {
        Self {
            kind: ScheduleKind::ExpGrowth,
            lambda,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau0) {
            return Err(Error::config(format!("tau0 {} outside [0, 1]", self.tau0)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config(format!(
                "lambda {} must be >= 0",
                self.lambda
            )));
        }
        if self.kind == ScheduleKind::LinearDecrease && self.max_len == 0 {
            return Err(Error::config("linear schedule needs max_len >= 1"));
        }
        if !self.c.is_finite() {
            return Err(Error::config("constant threshold must be finite"));
        }
        Ok(())
    }

    pub fn threshold_at(&self, t: usize) -> f64 {
        let t = t as f64;
        let tau = match self.kind {
            ScheduleKind::ExpDecay => self.tau0 * (-self.lambda * t).exp(),
            ScheduleKind::LinearDecrease => self.tau0 * (1.0 - t / self.max_len as f64).max(0.0),
            ScheduleKind::ExpGrowth => self.tau0 * (1.0 - (-self.lambda * t).exp()),
            ScheduleKind::Constant => self.c,
        };
        tau.clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    /// Student samples every token.
    Sgo,
    TeacherOnly,
    /// JSD-vs-threshold switching.
    Switch,
    /// Sample from `alpha * p + (1 - alpha) * q`.
    Mixin,
    /// Teacher with probability `p_teacher` per token.
    Random,
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PolicyKind::Sgo => "sgo",
            PolicyKind::TeacherOnly => "teacher_only",
            PolicyKind::Switch => "switch",
            PolicyKind::Mixin => "mixin",
            PolicyKind::Random => "random",
        })
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgo" => Ok(Self::Sgo),
            "teacher_only" => Ok(Self::TeacherOnly),
            "switch" => Ok(Self::Switch),
            "mixin" => Ok(Self::Mixin),
            "random" => Ok(Self::Random),
            other => Err(Error::config(format!("unknown policy kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicySpec {
    pub kind: PolicyKind,
    pub schedule: ThresholdSchedule,
    pub alpha: f64,
    pub p_teacher: f64,
    pub temperature: f64,
    pub max_new_tokens: usize,
}

impl Default for PolicySpec {
    fn default() -> Self {
        Self {
            kind: PolicyKind::Switch,
            schedule: ThresholdSchedule::default(),
            alpha: 0.2,
            p_teacher: 0.5,
            temperature: 1.0,
            max_new_tokens: 128,
        }
    }
}

impl PolicySpec {
    pub fn of_kind(kind: PolicyKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn switch(schedule: ThresholdSchedule) -> Self {
        Self {
            schedule,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config(format!(
                "mix-in alpha {} outside [0, 1]",
                self.alpha
            )));
        }
        if !(0.0..=1.0).contains(&self.p_teacher) {
            return Err(Error::config(format!(
                "p_teacher {} outside [0, 1]",
                self.p_teacher
            )));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::config(format!(
                "temperature {} must be positive",
                self.temperature
            )));
        }
        if self.max_new_tokens == 0 {
            return Err(Error::config("max_new_tokens must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Student,
    Teacher,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Eos,
    MaxLen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub source: Source,
    /// JSD in bits between teacher and student next-token distributions.
    pub jsd: f64,
    /// Threshold in force; only switching policies compare against one.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationTrace {
    pub prompt: Vec<TokenId>,
    pub tokens: Vec<TokenId>,
    pub steps: Vec<StepRecord>,
    pub terminated_by: Termination,
}

impl GenerationTrace {
    pub fn teacher_tokens(&self) -> usize {
        self.steps
            .iter()
            .filter(|s| s.source == Source::Teacher)
            .count()
    }

    /// Generated tokens with a trailing EOS removed.
    pub fn answer(&self, eos: TokenId) -> &[TokenId] {
        match self.tokens.last() {
            Some(&t) if t == eos => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }

    /// Re-apply the switching rule to every recorded step.
    pub fn obeys_switch_rule(&self) -> bool {
        self.steps.iter().all(|s| match s.threshold {
            Some(tau) => (s.source == Source::Teacher) == (s.jsd > tau),
            None => true,
        })
    }
}

/// A trace plus the raw logits both models produced along it.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub trace: GenerationTrace,
    pub teacher_logits: Vec<Vec<f64>>,
    pub student_logits: Vec<Vec<f64>>,
}

/// Generate a response from `prompt` under `spec`. Draws one value from `rng`
/// to seed independent student, teacher and source-choice streams.
pub fn generate(
    teacher: &ModelParams,
    student: &ModelParams,
    prompt: &[TokenId],
    spec: &PolicySpec,
    eos: TokenId,
    rng: &mut SeededRng,
) -> Result<GenerationTrace> {
    Ok(rollout(teacher, student, prompt, spec, eos, rng)?.trace)
}

pub fn rollout(
    teacher: &ModelParams,
    student: &ModelParams,
    prompt: &[TokenId],
    spec: &PolicySpec,
    eos: TokenId,
    rng: &mut SeededRng,
) -> Result<Rollout> {
    spec.validate()?;
    if teacher.config().vocab_size != student.config().vocab_size {
        return Err(Error::invalid("teacher and student vocabularies differ"));
    }
    let base = SeededRng::new(rng.next_u64());
    let mut student_rng = base.derive(&[stream::STUDENT_SAMPLING]);
    let mut teacher_rng = base.derive(&[stream::TEACHER_SAMPLING]);
    let mut choice_rng = base.derive(&[stream::MIXING]);

    // Both windows must hold the prompt; generation stops when either fills.
    let window = teacher
        .config()
        .context_len
        .min(student.config().context_len);
    if prompt.len() > window {
        return Err(Error::invalid(format!(
            "prompt of {} tokens exceeds context window {window}",
            prompt.len()
        )));
    }
    let mut t_state = teacher.start();
    let mut s_state = student.start();
    for &tok in prompt {
        t_state.feed(teacher, tok)?;
        s_state.feed(student, tok)?;
    }

    let temp = spec.temperature;
    let mut tokens = Vec::new();
    let mut steps = Vec::new();
    let mut teacher_logits = Vec::new();
    let mut student_logits = Vec::new();
    let mut terminated_by = Termination::MaxLen;
    for t in 0..spec.max_new_tokens {
        if t > 0 && prompt.len() + t > window {
            break;
        }
        let p = softmax_slice(t_state.logits(), temp);
        let q = softmax_slice(s_state.logits(), temp);
        let jsd = jsd_bits(&p, &q);
        let (source, threshold) = match spec.kind {
            PolicyKind::Sgo => (Source::Student, None),
            PolicyKind::TeacherOnly => (Source::Teacher, None),
            PolicyKind::Switch => {
                let tau = spec.schedule.threshold_at(t);
                let src = if jsd <= tau {
                    Source::Student
                } else {
                    Source::Teacher
                };
                (src, Some(tau))
            }
            // Choosing the teacher with probability alpha and then sampling from
            // it draws exactly from alpha * p + (1 - alpha) * q.
            PolicyKind::Mixin => (pick(&mut choice_rng, spec.alpha), None),
            PolicyKind::Random => (pick(&mut choice_rng, spec.p_teacher), None),
        };
        let tok = match source {
            Source::Student => sample_index(&q, student_rng.uniform()),
            Source::Teacher => sample_index(&p, teacher_rng.uniform()),
        };
        tokens.push(tok);
        steps.push(StepRecord {
            source,
            jsd,
            threshold,
        });
        teacher_logits.push(t_state.logits().to_vec());
        student_logits.push(s_state.logits().to_vec());
        if tok == eos {
            terminated_by = Termination::Eos;
            break;
        }
        if t + 1 < spec.max_new_tokens && prompt.len() + t < window {
            t_state.feed(teacher, tok)?;
            s_state.feed(student, tok)?;
        }
    }
    Ok(Rollout {
        trace: GenerationTrace {
            prompt: prompt.to_vec(),
            tokens,
            steps,
            terminated_by,
        },
        teacher_logits,
        student_logits,
    })
}

fn pick(rng: &mut SeededRng, p_teacher: f64) -> Source {
    if rng.bernoulli(p_teacher) {
        Source::Teacher
    } else {
        Source::Student
    }
}

/// Sample a response from a single model. `greedy` takes the argmax instead.
pub fn sample_response(
    model: &ModelParams,
    prompt: &[TokenId],
    temperature: f64,
    max_new_tokens: usize,
    eos: TokenId,
    greedy: bool,
    rng: &mut SeededRng,
) -> Result<Vec<TokenId>> {
    let window = model.config().context_len;
    let mut state = model.start();
    for &tok in prompt {
        state.feed(model, tok)?;
    }
    let mut out = Vec::new();
    for t in 0..max_new_tokens {
        if t > 0 && prompt.len() + t > window {
            break;
        }
        let tok = if greedy {
            argmax(state.logits())
        } else {
            sample_index(&softmax_slice(state.logits(), temperature), rng.uniform())
        };
        out.push(tok);
        if tok == eos || t + 1 == max_new_tokens || prompt.len() + t + 1 > window {
            break;
        }
        state.feed(model, tok)?;
    }
    Ok(out)
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// Token-weighted (student, teacher) fractions over all traces.
pub fn intervention_ratio(traces: &[GenerationTrace]) -> Result<(f64, f64)> {
    if traces.is_empty() {
        return Err(Error::invalid("intervention ratio of zero traces"));
    }
    let total: usize = traces.iter().map(|t| t.steps.len()).sum();
    if total == 0 {
        return Err(Error::invalid(
            "intervention ratio over traces with no tokens",
        ));
    }
    let teacher: usize = traces.iter().map(GenerationTrace::teacher_tokens).sum();
    let tf = teacher as f64 / total as f64;
    Ok((1.0 - tf, tf))
}

/// One JSON trace per line.
pub fn save_traces(traces: &[GenerationTrace], path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for t in traces {
        serde_json::to_writer(&mut w, t).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_traces(path: impl AsRef<Path>) -> Result<Vec<GenerationTrace>> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
