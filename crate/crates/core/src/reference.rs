//! Straight-line reference forward pass, generic over the scalar type, plus
//! a double-double scalar (about 106 bits of mantissa).
//!
//! Used by the finite-difference gradient check: central differences with a
//! 1e-6 step need a loss accurate well past f64's 1e-16 to resolve small
//! gradient entries.

use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::recurrent::{Aggregation, LstmLayerParams, NetworkParams};

pub trait Real:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self> + Neg<Output = Self>
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }

    fn one() -> Self {
        Self::from_f64(1.0)
    }

    fn sigmoid(self) -> Self {
        Self::one() / (Self::one() + (-self).exp())
    }

    fn tanh(self) -> Self {
        // tanh(x) = (1 - e^{-2|x|}) / (1 + e^{-2|x|}) · sign(x)
        let neg = self.to_f64() < 0.0;
        let a = if neg { -self } else { self };
        let e = (-(a + a)).exp();
        let t = (Self::one() - e) / (Self::one() + e);
        if neg {
            -t
        } else {
            t
        }
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
}

/// Unevaluated sum `hi + lo` with `|lo| ≤ ulp(hi)/2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoubleDouble {
    pub hi: f64,
    pub lo: f64,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

const LN2: DoubleDouble = DoubleDouble {
    hi: std::f64::consts::LN_2,
    lo: 2.319_046_813_846_299_6e-17,
};

impl DoubleDouble {
    pub fn new(hi: f64) -> Self {
        Self { hi, lo: 0.0 }
    }

    fn from_parts(hi: f64, lo: f64) -> Self {
        let (h, l) = quick_two_sum(hi, lo);
        Self { hi: h, lo: l }
    }

    fn mul_f64(self, b: f64) -> Self {
        let (p, e) = two_prod(self.hi, b);
        Self::from_parts(p, e + self.lo * b)
    }

    fn ldexp(self, k: i32) -> Self {
        let f = 2f64.powi(k);
        Self {
            hi: self.hi * f,
            lo: self.lo * f,
        }
    }
}

impl Add for DoubleDouble {
    type Output = Self;
    fn add(self, b: Self) -> Self {
        let (s1, s2) = two_sum(self.hi, b.hi);
        let (t1, t2) = two_sum(self.lo, b.lo);
        let (s1, s2) = quick_two_sum(s1, s2 + t1);
        Self::from_parts(s1, s2 + t2)
    }
}

impl Neg for DoubleDouble {
    type Output = Self;
    fn neg(self) -> Self {
        Self {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Sub for DoubleDouble {
    type Output = Self;
    fn sub(self, b: Self) -> Self {
        self + (-b)
    }
}

impl Mul for DoubleDouble {
    type Output = Self;
    fn mul(self, b: Self) -> Self {
        let (p, e) = two_prod(self.hi, b.hi);
        Self::from_parts(p, e + (self.hi * b.lo + self.lo * b.hi))
    }
}

impl Div for DoubleDouble {
    type Output = Self;
    fn div(self, b: Self) -> Self {
        let q1 = self.hi / b.hi;
        let r = self - b.mul_f64(q1);
        let q2 = r.hi / b.hi;
        let r = r - b.mul_f64(q2);
        let q3 = r.hi / b.hi;
        let (q1, q2) = quick_two_sum(q1, q2);
        Self { hi: q1, lo: q2 } + Self::new(q3)
    }
}

impl Real for DoubleDouble {
    fn from_f64(v: f64) -> Self {
        Self::new(v)
    }

    fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    fn exp(self) -> Self {
        if self.hi > 709.0 {
            return Self::new(f64::INFINITY);
        }
        if self.hi < -745.0 {
            return Self::new(0.0);
        }
        // x = k·ln2 + r, then exp(r) = (exp(r / 2^9))^(2^9)
        let k = (self.hi / LN2.hi).round();
        let r = (self - LN2.mul_f64(k)).ldexp(-9);
        let mut term = Self::one();
        let mut sum = Self::one();
        for n in 1..=24 {
            term = term * r / Self::new(n as f64);
            sum = sum + term;
            if term.hi.abs() < 1e-36 {
                break;
            }
        }
        for _ in 0..9 {
            sum = sum * sum;
        }
        sum.ldexp(k as i32)
    }

    fn ln(self) -> Self {
        // one Newton step on exp(y) = x from the f64 estimate
        let y = Self::new(self.hi.ln());
        y + self * (-y).exp() - Self::one()
    }
}

fn layer_step<T: Real>(p: &LstmLayerParams, h: &[T], c: &[T], x: &[T]) -> (Vec<T>, Vec<T>) {
    let n = p.hidden();
    let lin = |g: usize, k: usize| -> T {
        let mut acc = T::from_f64(p.b[g].data[k]);
        for (j, &xj) in x.iter().enumerate() {
            acc = acc + T::from_f64(p.w_x[g].get(k, j)) * xj;
        }
        for (j, &hj) in h.iter().enumerate() {
            acc = acc + T::from_f64(p.w_h[g].get(k, j)) * hj;
        }
        acc
    };
    let mut c_new = Vec::with_capacity(n);
    let mut h_new = Vec::with_capacity(n);
    for (k, &c_prev) in c.iter().enumerate().take(n) {
        let i = (lin(0, k) + T::from_f64(p.peep_i.data[k]) * c_prev).sigmoid();
        let f = (lin(1, k) + T::from_f64(p.peep_f.data[k]) * c_prev).sigmoid();
        let g = lin(2, k).tanh();
        let ck = f * c_prev + i * g;
        let o = (lin(3, k) + T::from_f64(p.peep_o.data[k]) * ck).sigmoid();
        h_new.push(o * ck.tanh());
        c_new.push(ck);
    }
    (h_new, c_new)
}

/// Cross-entropy of `label` for one window, evaluated in `T`.
pub fn reference_loss<T: Real, R: AsRef<[f64]>>(
    np: &NetworkParams,
    window: &[R],
    label: usize,
    aggregation: Aggregation,
) -> T {
    let n = np.hidden();
    let zeros = vec![T::zero(); n];
    let (mut h1, mut c1, mut h2, mut c2) = (zeros.clone(), zeros.clone(), zeros.clone(), zeros.clone());
    let mut pooled = zeros;
    for row in window {
        let x: Vec<T> = row.as_ref().iter().map(|&v| T::from_f64(v)).collect();
        (h1, c1) = layer_step(&np.layer1, &h1, &c1, &x);
        (h2, c2) = layer_step(&np.layer2, &h2, &c2, &h1);
        match aggregation {
            Aggregation::Sum => {
                for (a, &v) in pooled.iter_mut().zip(&h2) {
                    *a = *a + v;
                }
            }
            Aggregation::Last => pooled.clone_from(&h2),
        }
    }
    let logits: Vec<T> = (0..np.classes())
        .map(|c| {
            let mut z = T::from_f64(np.head_b.data[c]);
            for (k, &p) in pooled.iter().enumerate() {
                z = z + T::from_f64(np.head_w.get(c, k)) * p;
            }
            z
        })
        .collect();
    let max = logits.iter().map(|z| z.to_f64()).fold(f64::NEG_INFINITY, f64::max);
    let m = T::from_f64(max);
    let mut total = T::zero();
    for &z in &logits {
        total = total + (z - m).exp();
    }
    m + total.ln() - logits[label]
}
