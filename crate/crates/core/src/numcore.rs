//! Dense numeric kernel: matrices, stable log-domain helpers, softmax,
//! seeded randomness and a finite-difference gradient checker.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::divergence::ProbVector;
use crate::error::{Error, Result};

/// Row-major `rows x cols` matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "matrix data has {} entries, expected {rows}x{cols}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite matrix entry at {bad}")));
        }
        Ok(Self { rows, cols, data })
    }

    /// Entries drawn uniformly from `[-scale, scale)`.
    pub fn uniform(rows: usize, cols: usize, scale: f64, rng: &mut SeededRng) -> Self {
        let data = (0..rows * cols)
            .map(|_| rng.uniform() * 2.0 * scale - scale)
            .collect();
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `out = self * x`.
    pub fn matvec_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols)) {
            *o = dot(row, x);
        }
    }

    /// `out += self * x`.
    pub fn matvec_add(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols)) {
            *o += dot(row, x);
        }
    }

    /// `out += self^T * y`.
    pub fn matvec_t_add(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (&yi, row) in y.iter().zip(self.data.chunks_exact(self.cols)) {
            if yi != 0.0 {
                axpy(yi, row, out);
            }
        }
    }

    /// `self += a * b^T` (rank-one update).
    pub fn add_outer(&mut self, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        for (&ai, row) in a.iter().zip(self.data.chunks_exact_mut(self.cols)) {
            if ai != 0.0 {
                axpy(ai, b, row);
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn add_assign(&mut self, other: &DenseMatrix) {
        debug_assert_eq!(self.shape(), other.shape());
        axpy(1.0, &other.data, &mut self.data);
    }

    pub fn sum_sq(&self) -> f64 {
        dot(&self.data, &self.data)
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += a * x`.
#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Pre-softmax scores over the vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitsVector(Vec<f64>);

impl LogitsVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite logit at index {i}")));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Temperature softmax with max subtraction.
pub fn softmax(logits: &LogitsVector, temperature: f64) -> Result<ProbVector> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::invalid(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if let Some(i) = logits.values().iter().position(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("non-finite logit at index {i}")));
    }
    if logits.is_empty() {
        return Err(Error::invalid("softmax over an empty vector"));
    }
    Ok(ProbVector::from_raw(softmax_slice(
        logits.values(),
        temperature,
    )))
}

pub(crate) fn softmax_slice(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits
        .iter()
        .map(|&l| ((l - max) / temperature).exp())
        .collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= total);
    out
}

/// `ln(max(x, floor))`.
pub fn log_stable(x: f64, floor: f64) -> Result<f64> {
    if x < 0.0 || x.is_nan() {
        return Err(Error::invalid(format!("log_stable of negative value {x}")));
    }
    if floor.is_nan() || floor <= 0.0 {
        return Err(Error::invalid(format!(
            "log floor must be positive, got {floor}"
        )));
    }
    Ok(x.max(floor).ln())
}

#[inline]
pub(crate) fn ln_floor(x: f64, floor: f64) -> f64 {
    x.max(floor).ln()
}

/// Deterministic random stream. Streams for independent roles are split off
/// with [`SeededRng::derive`] so they never share state.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

/// Fixed stream offsets for the logical roles of a run.
pub mod stream {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const STUDENT_SAMPLING: u64 = 3;
    pub const TEACHER_SAMPLING: u64 = 4;
    pub const MIXING: u64 = 5;
    pub const EVAL: u64 = 6;
    pub const CORPUS: u64 = 7;
    pub const LM_AUX: u64 = 8;
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream keyed by `keys`; does not advance `self`.
    pub fn derive(&self, keys: &[u64]) -> SeededRng {
        let mut h = splitmix(self.seed ^ 0x5851_f42d_4c95_7f2d);
        for &k in keys {
            h = splitmix(h ^ splitmix(k.wrapping_add(0x9e37_79b9_7f4a_7c15)));
        }
        SeededRng::new(h)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.gen::<u64>()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    pub fn range_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        self.inner.gen_range(lo..=hi)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        use rand::seq::SliceRandom;
        items.shuffle(&mut self.inner);
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Inverse-CDF draw: one uniform, linear scan over the stored order.
pub fn sample_categorical(p: &ProbVector, rng: &mut SeededRng) -> Result<usize> {
    let probs = p.probs();
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::invalid(format!(
            "categorical probabilities sum to {total}"
        )));
    }
    Ok(sample_index(probs, rng.uniform()))
}

pub(crate) fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last_nonzero = 0;
    for (i, &pi) in probs.iter().enumerate() {
        if pi > 0.0 {
            acc += pi;
            last_nonzero = i;
            if u < acc {
                return i;
            }
        }
    }
    last_nonzero
}

/// Maximum over coordinates of `|analytic - central difference| / max(1, |analytic|)`.
pub fn grad_check<F>(f: F, theta: &[f64], analytic: &[f64], epsilon: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut f = f;
    if theta.len() != analytic.len() {
        return Err(Error::invalid(format!(
            "gradient length {} does not match parameter length {}",
            analytic.len(),
            theta.len()
        )));
    }
    let mut work = theta.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..theta.len() {
        work[i] = theta[i] + epsilon;
        let plus = f(&work)?;
        work[i] = theta[i] - epsilon;
        let minus = f(&work)?;
        work[i] = theta[i];
        let numeric = (plus - minus) / (2.0 * epsilon);
        let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logits(v: &[f64]) -> LogitsVector {
        LogitsVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&logits(&[0.0; 4]), 1.0).unwrap();
        assert!(p.probs().iter().all(|&x| (x - 0.25).abs() < 1e-15));

        let p = softmax(&logits(&[3f64.ln(), 0.0]), 1.0).unwrap();
        assert!((p.probs()[0] - 0.75).abs() < 1e-15);
        assert!((p.probs()[1] - 0.25).abs() < 1e-15);

        let p = softmax(&logits(&[1000.0, 0.0]), 1.0).unwrap();
        assert!(p.probs().iter().all(|x| x.is_finite()));
        assert!((p.probs()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_rejects_bad_input() {
        assert!(LogitsVector::new(vec![f64::NAN]).is_err());
        assert!(LogitsVector::new(vec![0.0, f64::INFINITY]).is_err());
        assert!(softmax(&logits(&[0.0, 1.0]), 0.0).is_err());
    }

    #[test]
    fn softmax_extreme_random_vectors() {
        let mut rng = SeededRng::new(11);
        for _ in 0..1000 {
            let n = 2 + rng.below(63);
            let v: Vec<f64> = (0..n).map(|_| (rng.uniform() * 2.0 - 1.0) * 1e4).collect();
            let p = softmax(&logits(&v), 1.0).unwrap();
            let s: f64 = p.probs().iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(p.probs().iter().all(|&x| (0.0..=1.0).contains(&x)));
            let am = |xs: &[f64]| {
                xs.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .unwrap()
                    .0
            };
            assert_eq!(am(&v), am(p.probs()));
        }
    }

    #[test]
    fn lower_temperature_sharpens() {
        let mut rng = SeededRng::new(5);
        for _ in 0..200 {
            let v: Vec<f64> = (0..8).map(|_| rng.uniform() * 4.0 - 2.0).collect();
            let hot = softmax(&logits(&v), 2.0).unwrap();
            let cold = softmax(&logits(&v), 0.5).unwrap();
            let max = |p: &ProbVector| p.probs().iter().copied().fold(0.0, f64::max);
            assert!(max(&cold) > max(&hot));
        }
    }

    #[test]
    fn log_stable_examples() {
        assert_eq!(log_stable(1.0, 1e-12).unwrap(), 0.0);
        assert_eq!(log_stable(0.0, 1e-12).unwrap(), (1e-12f64).ln());
        assert!((log_stable(std::f64::consts::E, 1e-12).unwrap() - 1.0).abs() < 1e-15);
        assert!(log_stable(-0.1, 1e-12).is_err());
    }

    #[test]
    fn categorical_point_mass_and_determinism() {
        let p = ProbVector::new(vec![1.0, 0.0, 0.0]).unwrap();
        let mut rng = SeededRng::new(3);
        for _ in 0..100 {
            assert_eq!(sample_categorical(&p, &mut rng).unwrap(), 0);
        }
        let p = ProbVector::new(vec![0.2, 0.3, 0.5]).unwrap();
        let draw = |seed| {
            let mut r = SeededRng::new(seed);
            (0..64)
                .map(|_| sample_categorical(&p, &mut r).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
    }

    #[test]
    fn categorical_fair_coin_frequency() {
        let p = ProbVector::new(vec![0.5, 0.5]).unwrap();
        let mut rng = SeededRng::new(2024);
        let hits = (0..100_000)
            .filter(|_| sample_categorical(&p, &mut rng).unwrap() == 0)
            .count();
        let freq = hits as f64 / 1e5;
        assert!((0.49..=0.51).contains(&freq), "{freq}");
    }

    #[test]
    fn categorical_rejects_unnormalized() {
        let p = ProbVector::from_raw(vec![0.5, 0.6]);
        assert!(sample_categorical(&p, &mut SeededRng::new(0)).is_err());
    }

    #[test]
    fn derived_streams_are_independent_of_parent_state() {
        let mut a = SeededRng::new(42);
        let child1 = a.derive(&[stream::INIT]);
        a.uniform();
        let child2 = a.derive(&[stream::INIT]);
        let mut c1 = child1.clone();
        let mut c2 = child2.clone();
        assert_eq!(c1.uniform(), c2.uniform());
        let mut other = a.derive(&[stream::SHUFFLE]);
        assert_ne!(child1.clone().uniform(), other.uniform());
    }

    #[test]
    fn grad_check_examples() {
        let sq = |t: &[f64]| Ok(t[0] * t[0]);
        assert!(grad_check(sq, &[3.0], &[6.0], 1e-5).unwrap() < 1e-8);
        let c = |_: &[f64]| Ok(4.2);
        assert!(grad_check(c, &[1.0, -2.0], &[0.0, 0.0], 1e-5).unwrap() < 1e-8);
        let s = |t: &[f64]| Ok(t.iter().sum::<f64>());
        assert!(grad_check(s, &[0.3, -1.7, 2.5], &[1.0; 3], 1e-5).unwrap() < 1e-8);
    }
}
