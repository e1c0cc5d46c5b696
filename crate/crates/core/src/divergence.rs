//! Discrepancy measures between a teacher distribution `p` and a student
//! distribution `q`, and their gradients with respect to student logits.
//!
//! Conventions shared by every function here:
//! - `p_i = 0` terms contribute nothing (`0 * ln 0 := 0`);
//! - probabilities inside a logarithm are floored at [`PROB_FLOOR`];
//! - values are in nats unless a [`LogBase::Two`] is requested.
//!
//! [`jsd`] always reports bits, so it lives in `[0, 1]` and can be compared
//! directly against a switching threshold.

use std::f64::consts::LN_2;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{ln_floor, softmax_slice, LogitsVector};

pub const PROB_FLOOR: f64 = 1e-12;

/// A distribution over the vocabulary at one decoding step.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::invalid("empty probability vector"));
        }
        if let Some(i) = probs.iter().position(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::invalid(format!(
                "probability {} at index {i} is not a finite nonnegative number",
                probs[i]
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("probabilities sum to {total}")));
        }
        Ok(Self(probs))
    }

    pub(crate) fn from_raw(probs: Vec<f64>) -> Self {
        Self(probs)
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn one_hot(n: usize, index: usize) -> Self {
        let mut v = vec![0.0; n];
        v[index] = 1.0;
        Self(v)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// `alpha * self + (1 - alpha) * other`.
    pub fn mix(&self, other: &ProbVector, alpha: f64) -> Result<ProbVector> {
        check_dims(self, other)?;
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::invalid(format!(
                "mixing weight {alpha} outside [0, 1]"
            )));
        }
        Ok(ProbVector(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| alpha * a + (1.0 - alpha) * b)
                .collect(),
        ))
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.0.iter().enumerate() {
            if v > self.0[best] {
                best = i;
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DivergenceKind {
    /// Forward KL, `KL(p || q)`.
    Kl,
    /// Reverse KL, `KL(q || p)`.
    Rkl,
    /// Symmetric Jensen-Shannon divergence.
    Jsd,
    /// Generalized JSD with mixture `beta * p + (1 - beta) * q`.
    Gjsd,
    /// Skew KL, `KL(p || alpha * p + (1 - alpha) * q)`.
    Skl,
    /// Skew reverse KL, `KL(q || alpha * q + (1 - alpha) * p)`.
    Srkl,
}

impl DivergenceKind {
    pub const ALL: [DivergenceKind; 6] = [
        DivergenceKind::Kl,
        DivergenceKind::Rkl,
        DivergenceKind::Jsd,
        DivergenceKind::Gjsd,
        DivergenceKind::Skl,
        DivergenceKind::Srkl,
    ];

    pub fn needs_weight(self) -> bool {
        matches!(self, Self::Gjsd | Self::Skl | Self::Srkl)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Kl => "kl",
            Self::Rkl => "rkl",
            Self::Jsd => "jsd",
            Self::Gjsd => "gjsd",
            Self::Skl => "skl",
            Self::Srkl => "srkl",
        }
    }

    /// Weight used when a config does not name one.
    pub fn default_weight(self) -> f64 {
        match self {
            Self::Gjsd => 0.9,
            Self::Skl | Self::Srkl => 0.1,
            _ => 0.5,
        }
    }
}

impl fmt::Display for DivergenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DivergenceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DivergenceKind::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::config(format!("unknown divergence kind {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LogBase {
    #[serde(rename = "e")]
    Natural,
    #[serde(rename = "2")]
    Two,
}

impl LogBase {
    fn divisor(self) -> f64 {
        match self {
            LogBase::Natural => 1.0,
            LogBase::Two => LN_2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DivergenceSpec {
    pub kind: DivergenceKind,
    /// `beta` for GJSD, `alpha` for the skew variants; ignored otherwise.
    pub weight: f64,
    pub log_base: LogBase,
}

impl DivergenceSpec {
    pub fn new(kind: DivergenceKind) -> Self {
        Self {
            kind,
            weight: kind.default_weight(),
            log_base: LogBase::Natural,
        }
    }

    pub fn with_weight(kind: DivergenceKind, weight: f64) -> Self {
        Self {
            weight,
            ..Self::new(kind)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind.needs_weight() && !(self.weight > 0.0 && self.weight < 1.0) {
            return Err(Error::config(format!(
                "{} requires a weight in (0, 1), got {}",
                self.kind, self.weight
            )));
        }
        Ok(())
    }
}

impl Default for DivergenceSpec {
    fn default() -> Self {
        Self::new(DivergenceKind::Srkl)
    }
}

fn check_dims(p: &ProbVector, q: &ProbVector) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::invalid(format!(
            "dimension mismatch: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    Ok(())
}

fn check_weight(name: &str, w: f64) -> Result<()> {
    if !(w > 0.0 && w < 1.0) {
        return Err(Error::invalid(format!(
            "{name} must lie in (0, 1), got {w}"
        )));
    }
    Ok(())
}

// Slice kernels, natural log. Callers guarantee equal lengths.

fn kl_raw(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi.ln() - ln_floor(qi, PROB_FLOOR)))
        .sum()
}

/// `KL(a || w * a + (1 - w) * b)`.
fn kl_to_mixture(a: &[f64], b: &[f64], w: f64) -> f64 {
    a.iter()
        .zip(b)
        .filter(|(&ai, _)| ai > 0.0)
        .map(|(&ai, &bi)| ai * (ai.ln() - ln_floor(w * ai + (1.0 - w) * bi, PROB_FLOOR)))
        .sum()
}

fn gjsd_raw(p: &[f64], q: &[f64], beta: f64) -> f64 {
    beta * kl_to_mixture(p, q, beta) + (1.0 - beta) * kl_to_mixture(q, p, 1.0 - beta)
}

/// Forward KL in nats.
pub fn kl(p: &ProbVector, q: &ProbVector) -> Result<f64> {
    check_dims(p, q)?;
    Ok(kl_raw(&p.0, &q.0).max(0.0))
}

/// Jensen-Shannon divergence in bits, bounded by `[0, 1]`.
pub fn jsd(p: &ProbVector, q: &ProbVector) -> Result<f64> {
    check_dims(p, q)?;
    Ok(jsd_bits(&p.0, &q.0))
}

pub(crate) fn jsd_bits(p: &[f64], q: &[f64]) -> f64 {
    (gjsd_raw(p, q, 0.5) / LN_2).clamp(0.0, 1.0)
}

/// `beta * KL(p || m) + (1 - beta) * KL(q || m)` with `m = beta * p + (1 - beta) * q`, in nats.
pub fn generalized_jsd(p: &ProbVector, q: &ProbVector, beta: f64) -> Result<f64> {
    check_weight("beta", beta)?;
    check_dims(p, q)?;
    Ok(gjsd_raw(&p.0, &q.0, beta).max(0.0))
}

/// Skew KL in nats. Forward: `KL(p || alpha p + (1-alpha) q)`;
/// reversed: `KL(q || alpha q + (1-alpha) p)`.
pub fn skew_kl(p: &ProbVector, q: &ProbVector, alpha: f64, reversed: bool) -> Result<f64> {
    check_weight("alpha", alpha)?;
    check_dims(p, q)?;
    let v = if reversed {
        kl_to_mixture(&q.0, &p.0, alpha)
    } else {
        kl_to_mixture(&p.0, &q.0, alpha)
    };
    Ok(v.max(0.0))
}

/// Per-step divergence between teacher `p` and student `q` selected by `spec`.
pub fn step_divergence(p: &ProbVector, q: &ProbVector, spec: &DivergenceSpec) -> Result<f64> {
    spec.validate()?;
    check_dims(p, q)?;
    Ok(step_value(&p.0, &q.0, spec))
}

pub(crate) fn step_value(p: &[f64], q: &[f64], spec: &DivergenceSpec) -> f64 {
    let w = spec.weight;
    let nats = match spec.kind {
        DivergenceKind::Kl => kl_raw(p, q),
        DivergenceKind::Rkl => kl_raw(q, p),
        DivergenceKind::Jsd => gjsd_raw(p, q, 0.5),
        DivergenceKind::Gjsd => gjsd_raw(p, q, w),
        DivergenceKind::Skl => kl_to_mixture(p, q, w),
        DivergenceKind::Srkl => kl_to_mixture(q, p, w),
    };
    nats.max(0.0) / spec.log_base.divisor()
}

/// Sum over steps of the per-step divergence.
pub fn sequence_divergence(
    teacher_dists: &[ProbVector],
    student_dists: &[ProbVector],
    spec: &DivergenceSpec,
) -> Result<f64> {
    if teacher_dists.len() != student_dists.len() {
        return Err(Error::invalid(format!(
            "sequence length mismatch: {} teacher vs {} student steps",
            teacher_dists.len(),
            student_dists.len()
        )));
    }
    if teacher_dists.is_empty() {
        return Err(Error::invalid("sequence divergence over zero steps"));
    }
    teacher_dists
        .iter()
        .zip(student_dists)
        .map(|(p, q)| step_divergence(p, q, spec))
        .sum()
}

/// Gradient of the per-step divergence with respect to the student's
/// pre-softmax logits, with `q = softmax(student_logits)`.
pub fn divergence_grad_wrt_student_logits(
    p: &ProbVector,
    student_logits: &LogitsVector,
    spec: &DivergenceSpec,
) -> Result<Vec<f64>> {
    spec.validate()?;
    if p.len() != student_logits.len() {
        return Err(Error::invalid(format!(
            "dimension mismatch: {} vs {}",
            p.len(),
            student_logits.len()
        )));
    }
    let q = softmax_slice(student_logits.values(), 1.0);
    Ok(step_logit_grad(&p.0, &q, spec))
}

/// Logit gradient given `q` already computed from the logits.
pub(crate) fn step_logit_grad(p: &[f64], q: &[f64], spec: &DivergenceSpec) -> Vec<f64> {
    let scale = 1.0 / spec.log_base.divisor();
    if spec.kind == DivergenceKind::Kl {
        return q.iter().zip(p).map(|(qi, pi)| scale * (qi - pi)).collect();
    }
    // dL/dq, then through the softmax Jacobian: dz = q * (g - <q, g>).
    let w = spec.weight;
    let g: Vec<f64> = match spec.kind {
        DivergenceKind::Kl => unreachable!(),
        DivergenceKind::Rkl => q
            .iter()
            .zip(p)
            .map(|(&qi, &pi)| ln_floor(qi, PROB_FLOOR) + 1.0 - ln_floor(pi, PROB_FLOOR))
            .collect(),
        DivergenceKind::Jsd | DivergenceKind::Gjsd => {
            let beta = if spec.kind == DivergenceKind::Jsd {
                0.5
            } else {
                w
            };
            q.iter()
                .zip(p)
                .map(|(&qi, &pi)| {
                    let m = beta * pi + (1.0 - beta) * qi;
                    (1.0 - beta) * (ln_floor(qi, PROB_FLOOR) - ln_floor(m, PROB_FLOOR))
                })
                .collect()
        }
        DivergenceKind::Skl => q
            .iter()
            .zip(p)
            .map(|(&qi, &pi)| {
                let m = w * pi + (1.0 - w) * qi;
                if pi > 0.0 {
                    -pi * (1.0 - w) / m.max(PROB_FLOOR)
                } else {
                    0.0
                }
            })
            .collect(),
        DivergenceKind::Srkl => q
            .iter()
            .zip(p)
            .map(|(&qi, &pi)| {
                let m = (w * qi + (1.0 - w) * pi).max(PROB_FLOOR);
                if qi > 0.0 {
                    qi.ln() + 1.0 - m.ln() - qi * w / m
                } else {
                    0.0
                }
            })
            .collect(),
    };
    let mean: f64 = q.iter().zip(&g).map(|(qi, gi)| qi * gi).sum();
    q.iter()
        .zip(&g)
        .map(|(qi, gi)| scale * qi * (gi - mean))
        .collect()
}
