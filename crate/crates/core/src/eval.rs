//! Metrics and analyses: token-level ROUGE-L, response-length buckets,
//! sampled evaluation, Spearman rank correlation and the misguidance study
//! (does the teacher's loss track how wrong a generated sequence is?).

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::Example;
use crate::divergence::{step_value, DivergenceSpec};
use crate::error::{Error, Result};
use crate::lm::{ModelParams, TokenId, Vocab};
use crate::numcore::{softmax_slice, stream, SeededRng};
use crate::policy::{rollout, sample_response, PolicySpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn lcs_len(a: &[TokenId], b: &[TokenId]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for &x in a {
        for (j, &y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS-based precision, recall and F1 (beta = 1).
pub fn rouge_l(candidate: &[TokenId], reference: &[TokenId]) -> RougeScore {
    let lcs = lcs_len(candidate, reference) as f64;
    let ratio = |n: usize| if n == 0 { 0.0 } else { lcs / n as f64 };
    let precision = ratio(candidate.len());
    let recall = ratio(reference.len());
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    RougeScore {
        precision,
        recall,
        f1,
    }
}

/// Ascending token-count cut points; `[10, 50]` gives 1-10, 11-50, 51+.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthBucketSpec {
    pub boundaries: Vec<usize>,
}

impl Default for LengthBucketSpec {
    fn default() -> Self {
        Self {
            boundaries: vec![10, 50],
        }
    }
}

impl LengthBucketSpec {
    pub fn new(boundaries: Vec<usize>) -> Result<Self> {
        let spec = Self { boundaries };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.boundaries.first() == Some(&0) {
            return Err(Error::config("bucket boundaries must be positive"));
        }
        if self.boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config(format!(
                "bucket boundaries {:?} are not strictly ascending",
                self.boundaries
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.boundaries.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Bucket index for a length; lengths below 1 fall in the first bucket.
    pub fn bucket_of(&self, len: usize) -> usize {
        self.boundaries
            .iter()
            .position(|&b| len <= b)
            .unwrap_or(self.boundaries.len())
    }

    pub fn label(&self, index: usize) -> String {
        let lo = if index == 0 {
            1
        } else {
            self.boundaries[index - 1] + 1
        };
        match self.boundaries.get(index) {
            Some(hi) => format!("{lo}-{hi}"),
            None => format!("{lo}+"),
        }
    }

    pub fn labels(&self) -> Vec<String> {
        (0..self.len()).map(|i| self.label(i)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    /// Responses sampled per test item.
    pub seeds: usize,
    pub temperature: f64,
    /// Take the argmax at every step instead of sampling.
    pub greedy: bool,
    pub max_new_tokens: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            seeds: 5,
            temperature: 1.0,
            greedy: false,
            max_new_tokens: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemScore {
    pub index: usize,
    pub reference_len: usize,
    pub bucket: String,
    pub per_seed_f1: Vec<f64>,
    pub mean_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketScore {
    pub bucket: String,
    pub count: usize,
    /// `None` when the bucket has no items.
    pub mean_rouge_l: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seeds: usize,
    pub temperature: f64,
    pub greedy: bool,
    pub overall: f64,
    pub buckets: Vec<BucketScore>,
    #[serde(skip)]
    pub items: Vec<ItemScore>,
}

impl EvalReport {
    pub fn bucket(&self, label: &str) -> Option<f64> {
        self.buckets
            .iter()
            .find(|b| b.bucket == label)
            .and_then(|b| b.mean_rouge_l)
    }

    /// One row per test item.
    pub fn items_csv(&self) -> String {
        let mut out = String::from("index,reference_len,bucket,mean_rouge_l,mean_rouge_l_x100_1dp");
        for s in 0..self.seeds {
            let _ = write!(out, ",seed{s}_rouge_l");
        }
        out.push('\n');
        for it in &self.items {
            let _ = write!(
                out,
                "{},{},{},{},{:.1}",
                it.index,
                it.reference_len,
                it.bucket,
                it.mean_f1,
                it.mean_f1 * 100.0
            );
            for f in &it.per_seed_f1 {
                let _ = write!(out, ",{f}");
            }
            out.push('\n');
        }
        out
    }
}

/// Sample `opts.seeds` student responses per item and average ROUGE-L F1
/// against the reference, overall and per reference-length bucket.
pub fn evaluate_model(
    params: &ModelParams,
    testset: &[Example],
    vocab: &Vocab,
    buckets: &LengthBucketSpec,
    opts: &EvalOptions,
    master_seed: u64,
) -> Result<EvalReport> {
    if testset.is_empty() {
        return Err(Error::invalid("evaluation on an empty test set"));
    }
    if opts.seeds == 0 {
        return Err(Error::config("evaluation needs at least one seed"));
    }
    let root = SeededRng::new(master_seed).derive(&[stream::EVAL]);
    let mut items = Vec::with_capacity(testset.len());
    for (index, ex) in testset.iter().enumerate() {
        let prompt = ex.prompt(vocab);
        let mut per_seed_f1 = Vec::with_capacity(opts.seeds);
        for s in 0..opts.seeds {
            let mut rng = root.derive(&[index as u64, s as u64]);
            let out = sample_response(
                params,
                &prompt,
                opts.temperature,
                opts.max_new_tokens,
                vocab.eos,
                opts.greedy,
                &mut rng,
            )?;
            let answer = strip_eos(&out, vocab.eos);
            per_seed_f1.push(rouge_l(answer, ex.answer()).f1);
        }
        let mean_f1 = per_seed_f1.iter().sum::<f64>() / opts.seeds as f64;
        items.push(ItemScore {
            index,
            reference_len: ex.answer_len(),
            bucket: buckets.label(buckets.bucket_of(ex.answer_len())),
            per_seed_f1,
            mean_f1,
        });
    }
    let overall = items.iter().map(|i| i.mean_f1).sum::<f64>() / items.len() as f64;
    let buckets = buckets
        .labels()
        .into_iter()
        .map(|label| {
            let scores: Vec<f64> = items
                .iter()
                .filter(|i| i.bucket == label)
                .map(|i| i.mean_f1)
                .collect();
            BucketScore {
                count: scores.len(),
                mean_rouge_l: (!scores.is_empty())
                    .then(|| scores.iter().sum::<f64>() / scores.len() as f64),
                bucket: label,
            }
        })
        .collect();
    Ok(EvalReport {
        seeds: opts.seeds,
        temperature: opts.temperature,
        greedy: opts.greedy,
        overall,
        buckets,
        items,
    })
}

pub(crate) fn strip_eos(tokens: &[TokenId], eos: TokenId) -> &[TokenId] {
    match tokens.last() {
        Some(&t) if t == eos => &tokens[..tokens.len() - 1],
        _ => tokens,
    }
}

/// Fractional (1-based) ranks; ties share their average rank.
pub fn fractional_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation of fractional ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::invalid(format!(
            "spearman over lists of length {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::invalid("spearman needs at least two pairs"));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::invalid("spearman input contains non-finite values"));
    }
    let rx = fractional_ranks(xs);
    let ry = fractional_ranks(ys);
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::invalid(
            "spearman undefined: a list has zero rank variance",
        ));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MisguidanceRow {
    pub policy: String,
    pub index: usize,
    pub generated_len: usize,
    pub bucket: String,
    pub rouge_l: f64,
    pub loss: f64,
    pub teacher_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketCorrelation {
    pub bucket: String,
    pub count: usize,
    /// `None` when the bucket is under-populated or degenerate.
    pub coefficient: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MisguidanceReport {
    pub min_per_bucket: usize,
    pub policy_a: Vec<BucketCorrelation>,
    pub policy_b: Vec<BucketCorrelation>,
    #[serde(skip)]
    pub rows: Vec<MisguidanceRow>,
}

impl MisguidanceReport {
    pub fn coefficient(table: &[BucketCorrelation], label: &str) -> Option<f64> {
        table
            .iter()
            .find(|b| b.bucket == label)
            .and_then(|b| b.coefficient)
    }

    pub fn rows_csv(&self) -> String {
        let mut out =
            String::from("policy,index,generated_len,bucket,rouge_l,loss,teacher_fraction\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.policy, r.index, r.generated_len, r.bucket, r.rouge_l, r.loss, r.teacher_fraction
            );
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MisguidanceOptions {
    pub divergence: DivergenceSpec,
    pub min_per_bucket: usize,
    pub seed: u64,
}

impl Default for MisguidanceOptions {
    fn default() -> Self {
        Self {
            divergence: DivergenceSpec::default(),
            min_per_bucket: 30,
            seed: 0,
        }
    }
}

/// Per generated sequence: ROUGE-L against the reference and the token-mean
/// training divergence between teacher and student along it. Report Spearman(ROUGE-L, loss)
/// per generated-length bucket, for each policy.
#[allow(clippy::too_many_arguments)]
pub fn misguidance_analysis(
    teacher: &ModelParams,
    student: &ModelParams,
    examples: &[Example],
    vocab: &Vocab,
    policy_a: &PolicySpec,
    policy_b: &PolicySpec,
    buckets: &LengthBucketSpec,
    opts: &MisguidanceOptions,
) -> Result<MisguidanceReport> {
    opts.divergence.validate()?;
    let mut rows = Vec::new();
    let mut tables = Vec::new();
    for (name, policy) in [("a", policy_a), ("b", policy_b)] {
        let root = SeededRng::new(opts.seed).derive(&[stream::MIXING]);
        let mut policy_rows = Vec::with_capacity(examples.len());
        for (index, ex) in examples.iter().enumerate() {
            let mut rng = root.derive(&[index as u64]);
            let r = rollout(
                teacher,
                student,
                &ex.prompt(vocab),
                policy,
                vocab.eos,
                &mut rng,
            )?;
            // Token-mean, matching the training loss normalization.
            let steps = r.teacher_logits.len().max(1) as f64;
            let loss = r
                .teacher_logits
                .iter()
                .zip(&r.student_logits)
                .map(|(t, s)| {
                    step_value(
                        &softmax_slice(t, 1.0),
                        &softmax_slice(s, 1.0),
                        &opts.divergence,
                    )
                })
                .sum::<f64>()
                / steps;
            let answer = r.trace.answer(vocab.eos);
            let generated_len = answer.len();
            policy_rows.push(MisguidanceRow {
                policy: format!("{name}:{}", policy.kind),
                index,
                generated_len,
                bucket: buckets.label(buckets.bucket_of(generated_len)),
                rouge_l: rouge_l(answer, ex.answer()).f1,
                loss,
                teacher_fraction: r.trace.teacher_tokens() as f64 / r.trace.steps.len() as f64,
            });
        }
        tables.push(correlate(&policy_rows, buckets, opts.min_per_bucket));
        rows.extend(policy_rows);
    }
    let policy_b_table = tables.pop().unwrap();
    let policy_a_table = tables.pop().unwrap();
    Ok(MisguidanceReport {
        min_per_bucket: opts.min_per_bucket,
        policy_a: policy_a_table,
        policy_b: policy_b_table,
        rows,
    })
}

fn correlate(
    rows: &[MisguidanceRow],
    buckets: &LengthBucketSpec,
    min: usize,
) -> Vec<BucketCorrelation> {
    buckets
        .labels()
        .into_iter()
        .map(|label| {
            let (xs, ys): (Vec<f64>, Vec<f64>) = rows
                .iter()
                .filter(|r| r.bucket == label)
                .map(|r| (r.rouge_l, r.loss))
                .unzip();
            let count = xs.len();
            let (coefficient, note) = if count < min {
                (None, Some(format!("fewer than {min} sequences")))
            } else {
                match spearman(&xs, &ys) {
                    Ok(c) => (Some(c), None),
                    Err(e) => (None, Some(e.to_string())),
                }
            };
            BucketCorrelation {
                bucket: label,
                count,
                coefficient,
                note,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_lcs(a: &[TokenId], b: &[TokenId]) -> usize {
        match (a.split_first(), b.split_first()) {
            (Some((x, ra)), Some((y, rb))) => {
                if x == y {
                    1 + brute_lcs(ra, rb)
                } else {
                    brute_lcs(ra, b).max(brute_lcs(a, rb))
                }
            }
            _ => 0,
        }
    }

    #[test]
    fn rouge_examples() {
        let s = rouge_l(&[1, 2, 3], &[1, 2, 3]);
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
        // "the cat sat" vs "the dog sat"
        let s = rouge_l(&[10, 11, 12], &[10, 13, 12]);
        assert_eq!(brute_lcs(&[10, 11, 12], &[10, 13, 12]), 2);
        assert!((s.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.precision - 2.0 / 3.0).abs() < 1e-15);
        let s = rouge_l(&[], &[1, 2]);
        assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn lcs_matches_recursion_on_random_pairs() {
        let mut rng = SeededRng::new(1);
        for _ in 0..300 {
            let a: Vec<usize> = (0..rng.below(10)).map(|_| rng.below(3)).collect();
            let b: Vec<usize> = (0..rng.below(10)).map(|_| rng.below(3)).collect();
            assert_eq!(lcs_len(&a, &b), brute_lcs(&a, &b));
            let (x, y) = (rouge_l(&a, &b), rouge_l(&b, &a));
            assert_eq!(x.f1, y.f1);
            assert_eq!(x.precision, y.recall);
        }
    }

    #[test]
    fn bucket_edges() {
        let b = LengthBucketSpec::default();
        assert_eq!(b.label(b.bucket_of(7)), "1-10");
        assert_eq!(b.label(b.bucket_of(10)), "1-10");
        assert_eq!(b.label(b.bucket_of(11)), "11-50");
        assert_eq!(b.label(b.bucket_of(51)), "51+");
        for len in 1..500 {
            let k = b.bucket_of(len);
            let hits = (0..b.len()).filter(|&i| i == k).count();
            assert_eq!(hits, 1);
        }
        assert!(LengthBucketSpec::new(vec![10, 10]).is_err());
        assert!(LengthBucketSpec::new(vec![0, 10]).is_err());
    }

    #[test]
    fn spearman_examples() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert!((spearman(&xs, &xs).unwrap() - 1.0).abs() < 1e-15);
        let rev: Vec<f64> = xs.iter().rev().copied().collect();
        assert!((spearman(&xs, &rev).unwrap() + 1.0).abs() < 1e-15);
        // 1 - 6 * 4 / (5 * 24) = 0.8
        let got = spearman(&xs, &[1.0, 3.0, 2.0, 5.0, 4.0]).unwrap();
        assert!((got - 0.8).abs() < 1e-15, "{got}");
        assert!(spearman(&xs, &xs[..4]).is_err());
        assert!(spearman(&xs, &[2.0; 5]).is_err());
        assert!(spearman(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn spearman_ties_use_average_ranks() {
        assert_eq!(
            fractional_ranks(&[3.0, 1.0, 3.0, 2.0]),
            vec![3.5, 1.0, 3.5, 2.0]
        );
    }

    #[test]
    fn spearman_is_rank_invariant() {
        let mut rng = SeededRng::new(3);
        for _ in 0..50 {
            let xs: Vec<f64> = (0..12).map(|_| rng.uniform()).collect();
            let ys: Vec<f64> = (0..12).map(|_| rng.uniform()).collect();
            let base = spearman(&xs, &ys).unwrap();
            assert!((-1.0..=1.0).contains(&base));
            let ex: Vec<f64> = xs.iter().map(|x| x.exp()).collect();
            let af: Vec<f64> = ys.iter().map(|y| 3.0 * y - 7.0).collect();
            assert!((spearman(&ex, &af).unwrap() - base).abs() < 1e-12);
        }
    }

    #[test]
    fn anti_monotone_fixture_correlates_negatively_in_every_bucket() {
        let b = LengthBucketSpec::default();
        let mut rng = SeededRng::new(4);
        let rows: Vec<MisguidanceRow> = (0..120)
            .map(|i| {
                let len = [5, 30, 70][i % 3];
                let r = rng.uniform();
                MisguidanceRow {
                    policy: "x".into(),
                    index: i,
                    generated_len: len,
                    bucket: b.label(b.bucket_of(len)),
                    rouge_l: r,
                    loss: -r,
                    teacher_fraction: 0.0,
                }
            })
            .collect();
        let table = correlate(&rows, &b, 30);
        assert!(table.iter().all(|c| c.coefficient == Some(-1.0)));
        let sparse = correlate(&rows[..60], &b, 30);
        assert!(sparse
            .iter()
            .all(|c| c.coefficient.is_none() && c.count == 20));
    }
}
