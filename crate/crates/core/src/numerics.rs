//! Dense row-major linear algebra, activations and a seeded generator.
//!
//! Everything the recurrent model needs is here; there is no external math
//! framework underneath.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{HarError, Result};

/// Dense column vector of `f64`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Vector {
    pub data: Vec<f64>,
}

impl Vector {
    pub fn zeros(len: usize) -> Self {
        Self { data: vec![0.0; len] }
    }

    pub fn filled(len: usize, value: f64) -> Self {
        Self { data: vec![value; len] }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Self { data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Adds `other` into `self` elementwise.
    pub fn add_assign(&mut self, other: &Vector) -> Result<()> {
        if self.len() != other.len() {
            return Err(HarError::ShapeMismatch {
                op: "vector add",
                left: (self.len(), 1),
                right: (other.len(), 1),
            });
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn dot(&self, other: &Vector) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    /// Index of the largest entry; the lowest index wins ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        best
    }
}

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(HarError::ShapeMismatch {
                op: "matrix from_vec",
                left: (rows, cols),
                right: (data.len(), 1),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(HarError::ShapeMismatch {
                    op: "matrix from_rows",
                    left: (r, c),
                    right: (1, row.len()),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self { rows: r, cols: c, data })
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

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `self += outer(a, b)`, the rank-one update used by every weight gradient.
    pub(crate) fn add_outer(&mut self, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        for (i, &ai) in a.iter().enumerate() {
            if ai == 0.0 {
                continue;
            }
            let row = &mut self.data[i * self.cols..(i + 1) * self.cols];
            for (w, &bj) in row.iter_mut().zip(b) {
                *w += ai * bj;
            }
        }
    }

    /// `out += selfᵀ · v`.
    pub(crate) fn add_transpose_matvec(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (i, &vi) in v.iter().enumerate() {
            if vi == 0.0 {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(self.row(i)) {
                *o += w * vi;
            }
        }
    }

    /// `out += self · v` on raw slices; shapes are checked by the caller.
    pub(crate) fn add_matvec(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (o, i) in out.iter_mut().zip(0..self.rows) {
            *o += dot(self.row(i), v);
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `A · x`.
pub fn matvec(a: &Matrix, x: &Vector) -> Result<Vector> {
    if a.cols != x.len() {
        return Err(HarError::ShapeMismatch {
            op: "matvec",
            left: a.shape(),
            right: (x.len(), 1),
        });
    }
    let mut out = Vector::zeros(a.rows);
    a.add_matvec(&x.data, &mut out.data);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    pub fn apply_scalar(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }
}

/// Logistic function, split by sign so `exp` never overflows.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn activation(kind: Activation, x: &Vector) -> Vector {
    Vector::from_vec(x.data.iter().map(|&v| kind.apply_scalar(v)).collect())
}

/// Softmax with max subtraction.
pub fn softmax(z: &Vector) -> Vector {
    let max = z.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.data.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Vector::from_vec(exps.into_iter().map(|e| e / total).collect())
}

/// `ln Σ exp(z)`, computed stably.
pub fn log_sum_exp(z: &Vector) -> f64 {
    let max = z.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = z.data.iter().map(|&v| (v - max).exp()).sum();
    max + total.ln()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitScheme {
    /// Uniform on `(-s, s)` with `s = sqrt(6 / (rows + cols))`.
    UniformScaled,
    Constant(f64),
}

pub fn init_matrix(rows: usize, cols: usize, scheme: InitScheme, rng: &mut SeededRng) -> Result<Matrix> {
    if rows == 0 || cols == 0 {
        return Err(HarError::ZeroDimension { rows, cols });
    }
    let data = match scheme {
        InitScheme::Constant(v) => vec![v; rows * cols],
        InitScheme::UniformScaled => {
            let s = (6.0 / (rows + cols) as f64).sqrt();
            (0..rows * cols).map(|_| rng.uniform(-s, s)).collect()
        }
    };
    Ok(Matrix { rows, cols, data })
}

/// Reproducible generator: the same seed and call sequence give the same stream.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
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

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random()
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        self.inner.random()
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // sigmoid(1), tanh(1), and softmax(1, 2, 3) evaluated with 50-digit
    // arithmetic and rounded to f64.
    const SIGMOID_1: f64 = 0.7310585786300049;
    const SOFTMAX_123: [f64; 3] = [0.09003057317038046, 0.24472847105479764, 0.6652409557748219];

    #[test]
    fn matvec_examples() {
        let x = Vector::from_vec(vec![1.0, 2.0, 3.0]);
        assert_eq!(matvec(&Matrix::identity(3), &x).unwrap(), x);
        assert_eq!(matvec(&Matrix::zeros(2, 3), &x).unwrap().data, vec![0.0, 0.0]);
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let y = matvec(&a, &Vector::from_vec(vec![5.0, 6.0])).unwrap();
        assert_eq!(y.data, vec![17.0, 39.0]);
    }

    #[test]
    fn matvec_reports_both_shapes() {
        let err = matvec(&Matrix::zeros(2, 3), &Vector::zeros(4)).unwrap_err();
        assert_eq!(
            err,
            HarError::ShapeMismatch {
                op: "matvec",
                left: (2, 3),
                right: (4, 1)
            }
        );
        assert!(err.to_string().contains("(2, 3)"));
    }

    #[test]
    fn activation_examples() {
        let zero = Vector::zeros(1);
        assert_eq!(activation(Activation::Sigmoid, &zero).data[0], 0.5);
        assert_eq!(activation(Activation::Tanh, &zero).data[0], 0.0);
        let s1 = sigmoid(1.0);
        assert!((s1 - SIGMOID_1).abs() <= 1e-16, "{s1}");
        assert_eq!(Activation::Relu.apply_scalar(-3.0), 0.0);
        assert_eq!(Activation::Relu.apply_scalar(2.5), 2.5);
    }

    #[test]
    fn sigmoid_extremes_stay_finite() {
        for x in [-1e3, -745.0, -50.0, 50.0, 745.0, 1e3] {
            let s = sigmoid(x);
            assert!(s.is_finite() && (0.0..=1.0).contains(&s), "{x} -> {s}");
        }
    }

    #[test]
    fn softmax_examples() {
        let u = softmax(&Vector::zeros(6));
        for p in &u.data {
            assert!((p - 1.0 / 6.0).abs() < 1e-15);
        }
        let z = Vector::from_vec(vec![1.0, 2.0, 3.0]);
        let p = softmax(&z);
        for (a, b) in p.data.iter().zip(SOFTMAX_123) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
        let shifted = Vector::from_vec(z.data.iter().map(|v| v + 100.0).collect());
        for (a, b) in softmax(&shifted).data.iter().zip(&p.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn init_examples() {
        let mut rng = SeededRng::new(1);
        let m = init_matrix(2, 2, InitScheme::Constant(1.0), &mut rng).unwrap();
        assert!(m.as_slice().iter().all(|&v| v == 1.0));
        let z = init_matrix(3, 5, InitScheme::Constant(0.0), &mut rng).unwrap();
        assert!(z.as_slice().iter().all(|&v| v == 0.0));

        let a = init_matrix(7, 4, InitScheme::UniformScaled, &mut SeededRng::new(9)).unwrap();
        let b = init_matrix(7, 4, InitScheme::UniformScaled, &mut SeededRng::new(9)).unwrap();
        assert_eq!(
            a.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        let s = (6.0f64 / 11.0).sqrt();
        assert!(a.as_slice().iter().all(|v| v.abs() < s));

        assert_eq!(
            init_matrix(0, 3, InitScheme::UniformScaled, &mut rng).unwrap_err(),
            HarError::ZeroDimension { rows: 0, cols: 3 }
        );
    }

    #[test]
    fn rng_streams_match_for_equal_seeds() {
        let mut a = SeededRng::new(42);
        let mut b = SeededRng::new(42);
        for _ in 0..10_000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let mut c = SeededRng::new(43);
        let mut a = SeededRng::new(42);
        assert_ne!(
            (0..8).map(|_| a.next_u64()).collect::<Vec<_>>(),
            (0..8).map(|_| c.next_u64()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn activation_bounds_on_random_inputs() {
        let mut rng = SeededRng::new(7);
        for _ in 0..100_000 {
            let x = rng.uniform(-1e3, 1e3);
            let s = sigmoid(x);
            let t = x.tanh();
            assert!(s.is_finite() && t.is_finite());
            // f64 rounds to the closed interval for |x| beyond ~37 and ~19.
            assert!((0.0..=1.0).contains(&s));
            assert!((-1.0..=1.0).contains(&t));
            if x.abs() < 15.0 {
                assert!(s > 0.0 && s < 1.0 && t > -1.0 && t < 1.0);
            }
            assert!(Activation::Relu.apply_scalar(x) >= 0.0);
        }
    }

    proptest! {
        #[test]
        fn softmax_is_a_distribution(z in proptest::collection::vec(-1e3f64..1e3, 1..12)) {
            let p = softmax(&Vector::from_vec(z));
            let total: f64 = p.data.iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
            prop_assert!(p.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }

        #[test]
        fn matvec_is_linear(
            seed in 0u64..1000,
            alpha in -10.0f64..10.0,
            beta in -10.0f64..10.0,
        ) {
            let mut rng = SeededRng::new(seed);
            let (r, c) = (1 + rng.below(6), 1 + rng.below(6));
            let a = Matrix::from_vec(r, c, (0..r * c).map(|_| rng.uniform(-2.0, 2.0)).collect()).unwrap();
            let x: Vec<f64> = (0..c).map(|_| rng.uniform(-2.0, 2.0)).collect();
            let y: Vec<f64> = (0..c).map(|_| rng.uniform(-2.0, 2.0)).collect();
            let comb = Vector::from_vec(x.iter().zip(&y).map(|(a, b)| alpha * a + beta * b).collect());
            let lhs = matvec(&a, &comb).unwrap();
            let ax = matvec(&a, &Vector::from_vec(x)).unwrap();
            let ay = matvec(&a, &Vector::from_vec(y)).unwrap();
            for i in 0..r {
                let rhs = alpha * ax.data[i] + beta * ay.data[i];
                let scale = lhs.data[i].abs().max(rhs.abs()).max(1.0);
                prop_assert!((lhs.data[i] - rhs).abs() / scale < 1e-10);
            }
        }
    }
}
