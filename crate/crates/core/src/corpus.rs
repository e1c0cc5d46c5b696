//! Synthetic instruction-following corpus.
//!
//! Every task family is a deterministic function from prompt to response,
//! so a response can be checked exactly and ROUGE-L against the reference
//! measures correctness. Prompts are laid out as
//! `<bos> instruction <sep> input <sep>` and responses end with `<eos>`.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::LengthBucketSpec;
use crate::lm::{TokenId, Vocab, BOS, EOS, PAD, SEP};
use crate::numcore::SeededRng;

pub const DATASET_VERSION: u32 = 1;
const MAX_COUNT: usize = 99;
const MAX_PATTERN: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Copy,
    Reverse,
    Sort,
    RepeatK,
    ArithSeq,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::Copy,
        Family::Reverse,
        Family::Sort,
        Family::RepeatK,
        Family::ArithSeq,
    ];

    pub fn marker(self) -> &'static str {
        match self {
            Family::Copy => "<copy>",
            Family::Reverse => "<rev>",
            Family::Sort => "<sort>",
            Family::RepeatK => "<rep>",
            Family::ArithSeq => "<arith>",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Copy => "copy",
            Family::Reverse => "reverse",
            Family::Sort => "sort",
            Family::RepeatK => "repeat_k",
            Family::ArithSeq => "arith_seq",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::config(format!("unknown task family {s:?}")))
    }
}

/// The fixed 64-symbol vocabulary: reserved symbols, task markers, ten
/// digits and 45 letters (`a`-`z`, `A`-`S`). Letter order is sort order.
pub fn default_vocab() -> Vocab {
    let mut tokens: Vec<String> = [PAD, BOS, EOS, SEP].iter().map(|s| s.to_string()).collect();
    tokens.extend(Family::ALL.iter().map(|f| f.marker().to_string()));
    tokens.extend((0..10).map(|d| d.to_string()));
    tokens.extend(('a'..='z').map(|c| c.to_string()));
    tokens.extend(('A'..='S').map(|c| c.to_string()));
    Vocab::new(tokens).expect("default vocabulary is well formed")
}

/// Symbol classes the families draw from.
struct Alphabet {
    digits: Vec<TokenId>,
    letters: Vec<TokenId>,
    markers: Vec<(Family, TokenId)>,
}

impl Alphabet {
    fn new(vocab: &Vocab) -> Result<Self> {
        let digits: Vec<TokenId> = (0..10)
            .map(|d| {
                vocab
                    .id(&d.to_string())
                    .ok_or_else(|| Error::config(format!("vocabulary lacks digit {d}")))
            })
            .collect::<Result<_>>()?;
        let markers = Family::ALL
            .iter()
            .map(|&f| {
                vocab
                    .id(f.marker())
                    .map(|id| (f, id))
                    .ok_or_else(|| Error::config(format!("vocabulary lacks marker {}", f.marker())))
            })
            .collect::<Result<_>>()?;
        let reserved: Vec<TokenId> = vec![vocab.bos, vocab.eos, vocab.pad, vocab.sep];
        let letters: Vec<TokenId> = (0..vocab.len())
            .filter(|id| {
                !reserved.contains(id)
                    && !digits.contains(id)
                    && !Family::ALL
                        .iter()
                        .any(|f| vocab.id(f.marker()) == Some(*id))
            })
            .collect();
        if letters.len() < 2 {
            return Err(Error::config(
                "vocabulary needs at least two content symbols",
            ));
        }
        Ok(Self {
            digits,
            letters,
            markers,
        })
    }

    fn marker(&self, family: Family) -> TokenId {
        self.markers.iter().find(|(f, _)| *f == family).unwrap().1
    }

    fn family_of(&self, marker: TokenId) -> Option<Family> {
        self.markers
            .iter()
            .find(|(_, m)| *m == marker)
            .map(|(f, _)| *f)
    }

    fn digit_value(&self, id: TokenId) -> Option<usize> {
        self.digits.iter().position(|&d| d == id)
    }

    fn count_tokens(&self, k: usize) -> [TokenId; 2] {
        [self.digits[k / 10], self.digits[k % 10]]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub instruction: Vec<TokenId>,
    pub input: Vec<TokenId>,
    /// Ends with EOS.
    pub response: Vec<TokenId>,
}

impl Example {
    pub fn prompt(&self, vocab: &Vocab) -> Vec<TokenId> {
        let mut p = Vec::with_capacity(self.instruction.len() + self.input.len() + 3);
        p.push(vocab.bos);
        p.extend_from_slice(&self.instruction);
        p.push(vocab.sep);
        p.extend_from_slice(&self.input);
        p.push(vocab.sep);
        p
    }

    /// Response tokens without the trailing EOS.
    pub fn answer(&self) -> &[TokenId] {
        match self.response.split_last() {
            Some((_, rest)) => rest,
            None => &[],
        }
    }

    pub fn answer_len(&self) -> usize {
        self.answer().len()
    }

    pub fn total_len(&self) -> usize {
        self.instruction.len() + self.input.len() + 3 + self.response.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub family: Family,
    /// Inclusive range of response lengths, EOS excluded.
    pub length_range: (usize, usize),
    pub count: usize,
}

impl TaskSpec {
    pub fn new(family: Family, min: usize, max: usize, count: usize) -> Self {
        Self {
            family,
            length_range: (min, max),
            count,
        }
    }
}

/// Default mix: about 30% short (1-10), 33% medium (11-50) and 37% long
/// (51+) responses over 2300 examples.
pub fn default_task_specs() -> Vec<TaskSpec> {
    vec![
        TaskSpec::new(Family::Copy, 1, 10, 230),
        TaskSpec::new(Family::Reverse, 1, 10, 230),
        TaskSpec::new(Family::Sort, 1, 10, 230),
        TaskSpec::new(Family::Copy, 11, 24, 150),
        TaskSpec::new(Family::Sort, 11, 24, 150),
        TaskSpec::new(Family::RepeatK, 11, 50, 230),
        TaskSpec::new(Family::ArithSeq, 11, 50, 230),
        TaskSpec::new(Family::RepeatK, 51, 64, 425),
        TaskSpec::new(Family::ArithSeq, 51, 64, 425),
    ]
}

fn check_feasible(spec: &TaskSpec) -> Result<()> {
    let (lo, hi) = spec.length_range;
    if lo == 0 || lo > hi {
        return Err(Error::config(format!(
            "{}: invalid length range {lo}..={hi}",
            spec.family
        )));
    }
    let limit = match spec.family {
        Family::Copy | Family::Reverse | Family::Sort => usize::MAX,
        Family::RepeatK => MAX_PATTERN * MAX_COUNT,
        Family::ArithSeq => MAX_COUNT,
    };
    if lo > limit {
        return Err(Error::config(format!(
            "{}: length {lo} exceeds the family limit {limit}",
            spec.family
        )));
    }
    if spec.family == Family::RepeatK
        && !(1..=MAX_PATTERN).any(|m| pattern_counts(m, lo, hi).is_some())
    {
        return Err(Error::config(format!(
            "repeat_k: no pattern/count pair lands in {lo}..={hi}"
        )));
    }
    Ok(())
}

fn pattern_counts(m: usize, lo: usize, hi: usize) -> Option<(usize, usize)> {
    let kmin = lo.div_ceil(m).max(1);
    let kmax = (hi / m).min(MAX_COUNT);
    (kmin <= kmax).then_some((kmin, kmax))
}

/// Deterministic ground truth for a family on an input.
fn solve(alpha: &Alphabet, family: Family, input: &[TokenId]) -> Option<Vec<TokenId>> {
    match family {
        Family::Copy => Some(input.to_vec()),
        Family::Reverse => Some(input.iter().rev().copied().collect()),
        Family::Sort => {
            let mut v = input.to_vec();
            v.sort_unstable();
            Some(v)
        }
        Family::RepeatK => {
            let (pattern, count) = input.split_at(input.len().checked_sub(2)?);
            let k = alpha.digit_value(count[0])? * 10 + alpha.digit_value(count[1])?;
            if pattern.is_empty() || k == 0 {
                return None;
            }
            Some(
                pattern
                    .iter()
                    .copied()
                    .cycle()
                    .take(pattern.len() * k)
                    .collect(),
            )
        }
        Family::ArithSeq => {
            if input.len() != 4 {
                return None;
            }
            let start = alpha.digit_value(input[0])?;
            let step = alpha.digit_value(input[1])?;
            let n = alpha.digit_value(input[2])? * 10 + alpha.digit_value(input[3])?;
            Some(
                (0..n)
                    .map(|i| alpha.digits[(start + i * step) % 10])
                    .collect(),
            )
        }
    }
}

fn make_input(alpha: &Alphabet, spec: &TaskSpec, rng: &mut SeededRng) -> Vec<TokenId> {
    let (lo, hi) = spec.length_range;
    match spec.family {
        Family::Copy | Family::Reverse | Family::Sort => {
            let len = rng.range_inclusive(lo, hi);
            (0..len)
                .map(|_| alpha.letters[rng.below(alpha.letters.len())])
                .collect()
        }
        Family::RepeatK => {
            let options: Vec<(usize, (usize, usize))> = (1..=MAX_PATTERN)
                .filter_map(|m| pattern_counts(m, lo, hi).map(|r| (m, r)))
                .collect();
            let (m, (kmin, kmax)) = options[rng.below(options.len())];
            let k = rng.range_inclusive(kmin, kmax);
            let mut input: Vec<TokenId> = (0..m)
                .map(|_| alpha.letters[rng.below(alpha.letters.len())])
                .collect();
            input.extend(alpha.count_tokens(k));
            input
        }
        Family::ArithSeq => {
            let n = rng.range_inclusive(lo, hi);
            let start = rng.below(10);
            let step = 1 + rng.below(9);
            let mut input = vec![alpha.digits[start], alpha.digits[step]];
            input.extend(alpha.count_tokens(n));
            input
        }
    }
}

/// Generate `spec.count` examples per spec, in spec order.
pub fn generate_corpus(
    specs: &[TaskSpec],
    vocab: &Vocab,
    context_len: usize,
    rng: &mut SeededRng,
) -> Result<Vec<Example>> {
    let alpha = Alphabet::new(vocab)?;
    for s in specs {
        check_feasible(s)?;
    }
    let mut out = Vec::with_capacity(specs.iter().map(|s| s.count).sum());
    for spec in specs {
        for _ in 0..spec.count {
            let input = make_input(&alpha, spec, rng);
            let mut response =
                solve(&alpha, spec.family, &input).expect("generated inputs are well formed");
            response.push(vocab.eos);
            let ex = Example {
                instruction: vec![alpha.marker(spec.family)],
                input,
                response,
            };
            if ex.total_len() > context_len {
                return Err(Error::config(format!(
                    "{} example of {} tokens does not fit context_len {context_len}",
                    spec.family,
                    ex.total_len()
                )));
            }
            out.push(ex);
        }
    }
    Ok(out)
}

/// Re-derive the response from the instruction and input.
pub fn verify_example(example: &Example, vocab: &Vocab) -> Result<bool> {
    let alpha = Alphabet::new(vocab)?;
    let Some(family) = example
        .instruction
        .first()
        .and_then(|&m| alpha.family_of(m))
    else {
        return Ok(false);
    };
    Ok(solve(&alpha, family, &example.input).is_some_and(|mut r| {
        r.push(vocab.eos);
        r == example.response
    }))
}

pub fn family_of(example: &Example, vocab: &Vocab) -> Option<Family> {
    let alpha = Alphabet::new(vocab).ok()?;
    example
        .instruction
        .first()
        .and_then(|&m| alpha.family_of(m))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.9,
            valid: 0.05,
            test: 0.05,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.valid, self.test];
        if parts.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::config(format!(
                "split fractions {parts:?} outside [0, 1]"
            )));
        }
        let total: f64 = parts.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!(
                "split fractions sum to {total}, not 1"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<Example>,
    pub valid: Vec<Example>,
    pub test: Vec<Example>,
}

/// Largest-remainder apportionment of `total` over `weights`.
fn apportion(total: usize, weights: &[usize]) -> Vec<usize> {
    let sum: usize = weights.iter().sum();
    if sum == 0 {
        return vec![0; weights.len()];
    }
    let mut alloc: Vec<usize> = weights.iter().map(|w| total * w / sum).collect();
    let mut rema: Vec<(usize, usize)> = weights
        .iter()
        .enumerate()
        .map(|(i, w)| ((total * w) % sum, i))
        .collect();
    rema.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let short = total - alloc.iter().sum::<usize>();
    for &(_, i) in rema.iter().take(short) {
        alloc[i] += 1;
    }
    alloc
}

/// Disjoint, exhaustive split stratified by response-length bucket.
pub fn split(
    corpus: &[Example],
    fractions: SplitFractions,
    buckets: &LengthBucketSpec,
    rng: &mut SeededRng,
) -> Result<Splits> {
    fractions.validate()?;
    if corpus.len() < 20 {
        return Err(Error::invalid(format!(
            "corpus of {} examples is too small to split (need 20)",
            corpus.len()
        )));
    }
    let n = corpus.len();
    let n_valid = (n as f64 * fractions.valid).round() as usize;
    let n_test = ((n as f64 * fractions.test).round() as usize).min(n - n_valid);

    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); buckets.len()];
    for (i, ex) in corpus.iter().enumerate() {
        groups[buckets.bucket_of(ex.answer_len().max(1))].push(i);
    }
    for g in &mut groups {
        rng.shuffle(g);
    }
    let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
    let valid_q = apportion(n_valid, &sizes);
    let remaining: Vec<usize> = sizes.iter().zip(&valid_q).map(|(s, v)| s - v).collect();
    // Test quotas follow the bucket sizes, capped by what validation left over.
    let mut test_q = apportion(n_test, &sizes);
    for (t, r) in test_q.iter_mut().zip(&remaining) {
        *t = (*t).min(*r);
    }
    let mut deficit = n_test - test_q.iter().sum::<usize>();
    for (t, r) in test_q.iter_mut().zip(&remaining) {
        let room = r - *t;
        let take = room.min(deficit);
        *t += take;
        deficit -= take;
    }

    let mut out = Splits {
        train: Vec::new(),
        valid: Vec::new(),
        test: Vec::new(),
    };
    for ((g, v), t) in groups.iter().zip(&valid_q).zip(&test_q) {
        out.valid.extend(g[..*v].iter().map(|&i| corpus[i].clone()));
        out.test
            .extend(g[*v..v + t].iter().map(|&i| corpus[i].clone()));
        out.train
            .extend(g[v + t..].iter().map(|&i| corpus[i].clone()));
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    version: u32,
    instruction: String,
    input: String,
    response: String,
}

/// One JSON object per line: `version`, `instruction`, `input`, `response`,
/// the last three as whitespace-separated vocabulary symbols.
pub fn save_jsonl(examples: &[Example], vocab: &Vocab, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_jsonl(examples, vocab, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_jsonl<W: Write>(examples: &[Example], vocab: &Vocab, w: &mut W) -> Result<()> {
    for ex in examples {
        let rec = Record {
            version: DATASET_VERSION,
            instruction: vocab.decode(&ex.instruction),
            input: vocab.decode(&ex.input),
            response: vocab.decode(&ex.response),
        };
        serde_json::to_writer(&mut *w, &rec).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn load_jsonl(path: impl AsRef<Path>, vocab: &Vocab) -> Result<Vec<Example>> {
    read_jsonl(BufReader::new(File::open(path)?), vocab)
}

/// Blank lines are skipped. A response missing its final EOS gets one appended.
pub fn read_jsonl<R: BufRead>(r: R, vocab: &Vocab) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for (idx, line) in r.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        if rec.version != DATASET_VERSION {
            return Err(Error::Parse {
                line: lineno,
                message: format!(
                    "dataset version {} unsupported, expected {DATASET_VERSION}",
                    rec.version
                ),
            });
        }
        let encode = |s: &str| -> Result<Vec<TokenId>> {
            s.split_whitespace()
                .map(|t| {
                    vocab.id(t).ok_or_else(|| Error::Vocabulary {
                        line: lineno,
                        token: t.to_string(),
                    })
                })
                .collect()
        };
        let instruction = encode(&rec.instruction)?;
        let input = encode(&rec.input)?;
        let mut response = encode(&rec.response)?;
        if response.last() != Some(&vocab.eos) {
            response.push(vocab.eos);
        }
        if response.len() < 2 {
            return Err(Error::Parse {
                line: lineno,
                message: "response is empty".into(),
            });
        }
        out.push(Example {
            instruction,
            input,
            response,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(v: &Vocab, s: &str) -> Vec<TokenId> {
        s.split_whitespace().map(|t| v.id(t).unwrap()).collect()
    }

    #[test]
    fn default_vocab_has_64_symbols() {
        assert_eq!(default_vocab().len(), 64);
    }

    #[test]
    fn family_definitions() {
        let v = default_vocab();
        let a = Alphabet::new(&v).unwrap();
        assert_eq!(
            solve(&a, Family::Copy, &toks(&v, "a b c")).unwrap(),
            toks(&v, "a b c")
        );
        assert_eq!(
            solve(&a, Family::Reverse, &toks(&v, "a b c")).unwrap(),
            toks(&v, "c b a")
        );
        assert_eq!(
            solve(&a, Family::Sort, &toks(&v, "c a b")).unwrap(),
            toks(&v, "a b c")
        );
        let rep = solve(&a, Family::RepeatK, &toks(&v, "a b 3 0")).unwrap();
        assert_eq!(rep.len(), 60);
        assert_eq!(&rep[..4], toks(&v, "a b a b").as_slice());
        let b = LengthBucketSpec::default();
        assert_eq!(b.label(b.bucket_of(rep.len())), "51+");
        assert_eq!(
            solve(&a, Family::ArithSeq, &toks(&v, "7 5 0 4")).unwrap(),
            toks(&v, "7 2 7 2")
        );
    }

    #[test]
    fn sort_follows_vocabulary_order() {
        let v = default_vocab();
        let a = Alphabet::new(&v).unwrap();
        let sorted = solve(&a, Family::Sort, &toks(&v, "3 1 2")).unwrap();
        assert_eq!(sorted, toks(&v, "1 2 3"));
    }

    #[test]
    fn generated_corpus_is_self_consistent_and_deterministic() {
        let v = default_vocab();
        let specs = default_task_specs();
        let a = generate_corpus(&specs, &v, 80, &mut SeededRng::new(1)).unwrap();
        let b = generate_corpus(&specs, &v, 80, &mut SeededRng::new(1)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2300);
        assert!(a.iter().all(|e| verify_example(e, &v).unwrap()));
        let buckets = LengthBucketSpec::default();
        let mut counts = [0usize; 3];
        for e in &a {
            counts[buckets.bucket_of(e.answer_len())] += 1;
        }
        for c in counts {
            assert!(c as f64 >= 0.2 * a.len() as f64, "{counts:?}");
        }
    }

    #[test]
    fn infeasible_specs_are_config_errors() {
        let v = default_vocab();
        let mut rng = SeededRng::new(0);
        for spec in [
            TaskSpec::new(Family::Copy, 0, 3, 1),
            TaskSpec::new(Family::Copy, 5, 3, 1),
            TaskSpec::new(Family::ArithSeq, 120, 130, 1),
            TaskSpec::new(Family::RepeatK, 500, 600, 1),
        ] {
            let err = generate_corpus(&[spec], &v, 1000, &mut rng).unwrap_err();
            assert!(matches!(err, Error::Config(_)));
        }
        let err = generate_corpus(&[TaskSpec::new(Family::Copy, 40, 40, 1)], &v, 50, &mut rng)
            .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    fn small_corpus(n: usize) -> Vec<Example> {
        let v = default_vocab();
        let per = n / 3;
        let specs = vec![
            TaskSpec::new(Family::Copy, 1, 10, per),
            TaskSpec::new(Family::ArithSeq, 11, 50, per),
            TaskSpec::new(Family::RepeatK, 51, 64, n - 2 * per),
        ];
        generate_corpus(&specs, &v, 100, &mut SeededRng::new(4)).unwrap()
    }

    #[test]
    fn split_sizes_and_partition() {
        let corpus = small_corpus(1000);
        let b = LengthBucketSpec::default();
        let s = split(
            &corpus,
            SplitFractions::default(),
            &b,
            &mut SeededRng::new(3),
        )
        .unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (900, 50, 50));
        let mut all: Vec<_> = s
            .train
            .iter()
            .chain(&s.valid)
            .chain(&s.test)
            .cloned()
            .collect();
        let mut orig = corpus.clone();
        let key = |e: &Example| (e.instruction.clone(), e.input.clone(), e.response.clone());
        all.sort_by_key(key);
        orig.sort_by_key(key);
        assert_eq!(all, orig);

        let again = split(
            &corpus,
            SplitFractions::default(),
            &b,
            &mut SeededRng::new(3),
        )
        .unwrap();
        assert_eq!(s, again);

        let share = |xs: &[Example], k: usize| {
            xs.iter()
                .filter(|e| b.bucket_of(e.answer_len()) == k)
                .count() as f64
                / xs.len() as f64
        };
        for k in 0..3 {
            let full = share(&corpus, k);
            for part in [&s.train, &s.valid, &s.test] {
                assert!((share(part, k) - full).abs() <= 0.05);
            }
        }
    }

    #[test]
    fn split_rejects_bad_fractions() {
        let corpus = small_corpus(30);
        let bad = SplitFractions {
            train: 0.9,
            valid: 0.2,
            test: 0.0,
        };
        let err = split(
            &corpus,
            bad,
            &LengthBucketSpec::default(),
            &mut SeededRng::new(0),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn jsonl_round_trip_and_errors() {
        let v = default_vocab();
        let corpus = small_corpus(30);
        let mut buf = Vec::new();
        write_jsonl(&corpus, &v, &mut buf).unwrap();
        assert_eq!(read_jsonl(buf.as_slice(), &v).unwrap(), corpus);

        assert!(read_jsonl(&b""[..], &v).unwrap().is_empty());

        let missing = "{\"version\":1,\"instruction\":\"<copy>\",\"input\":\"a\"}\n";
        let err = read_jsonl(format!("\n{missing}").as_bytes(), &v).unwrap_err();
        match err {
            Error::Parse { line, message } => {
                assert_eq!(line, 2);
                assert!(message.contains("response"), "{message}");
            }
            other => panic!("unexpected {other}"),
        }

        let oov =
            "{\"version\":1,\"instruction\":\"<copy>\",\"input\":\"a\",\"response\":\"zz <eos>\"}";
        assert!(matches!(
            read_jsonl(oov.as_bytes(), &v).unwrap_err(),
            Error::Vocabulary { line: 1, .. }
        ));
        assert!(read_jsonl(&b"not json"[..], &v).is_err());
    }
}
