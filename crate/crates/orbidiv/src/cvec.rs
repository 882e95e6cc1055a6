//! Small complex vectors for geometry hot paths.
//!
//! Points of `C^n` with `n <= MAX_DIM` are stored inline so that section
//! evaluation over millions of sample points never allocates. The crate only
//! ever needs n = 1 or 2 for quotients; 4 leaves room for chart experiments.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::ops::{Add, Index, Mul, Neg, Sub};

/// Largest complex dimension supported by the inline vector type.
pub const MAX_DIM: usize = 4;

/// A point of `C^n`, `n <= MAX_DIM`, stored inline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CVec {
    n: u8,
    v: [Complex64; MAX_DIM],
}

impl CVec {
    /// The zero vector of `C^n`.
    pub fn zero(n: usize) -> Self {
        assert!(n >= 1 && n <= MAX_DIM, "dimension {n} out of range");
        CVec { n: n as u8, v: [Complex64::ZERO; MAX_DIM] }
    }

    /// Builds from a slice of components.
    pub fn from_slice(z: &[Complex64]) -> Self {
        let mut out = Self::zero(z.len());
        out.v[..z.len()].copy_from_slice(z);
        out
    }

    /// Builds a 1-dimensional vector.
    pub fn one_d(z: Complex64) -> Self {
        Self::from_slice(&[z])
    }

    /// Builds from interleaved real coordinates `(x_1, y_1, ..., x_n, y_n)`.
    pub fn from_real(xy: &[f64]) -> Self {
        assert!(xy.len() % 2 == 0);
        let n = xy.len() / 2;
        let mut out = Self::zero(n);
        for j in 0..n {
            out.v[j] = Complex64::new(xy[2 * j], xy[2 * j + 1]);
        }
        out
    }

    /// Complex dimension.
    pub fn dim(&self) -> usize {
        self.n as usize
    }

    /// Component slice of length `dim()`.
    pub fn components(&self) -> &[Complex64] {
        &self.v[..self.n as usize]
    }

    /// Interleaved real coordinates `(x_1, y_1, ..., x_n, y_n)`.
    pub fn to_real(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.dim());
        for z in self.components() {
            out.push(z.re);
            out.push(z.im);
        }
        out
    }

    /// Hermitian inner product `<a, b> = sum a_j conj(b_j)`, linear in `a`.
    pub fn inner(&self, other: &CVec) -> Complex64 {
        debug_assert_eq!(self.n, other.n);
        let mut acc = Complex64::ZERO;
        for j in 0..self.n as usize {
            acc += self.v[j] * other.v[j].conj();
        }
        acc
    }

    /// Squared Euclidean norm.
    pub fn norm_sq(&self) -> f64 {
        let mut acc = 0.0;
        for j in 0..self.n as usize {
            acc += self.v[j].norm_sqr();
        }
        acc
    }

    /// Euclidean norm.
    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// Euclidean distance to `other`.
    pub fn dist(&self, other: &CVec) -> f64 {
        (*self - *other).norm()
    }

    /// Componentwise map.
    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> CVec {
        let mut out = *self;
        for j in 0..self.n as usize {
            out.v[j] = f(out.v[j]);
        }
        out
    }

    /// Lexicographic comparison on `(re_1, im_1, ..., re_n, im_n)`.
    ///
    /// Total order used for deterministic orbit representatives and tie
    /// breaking; all coordinates in this crate are finite.
    pub fn lex_cmp(&self, other: &CVec) -> std::cmp::Ordering {
        for j in 0..self.n as usize {
            match self.v[j].re.partial_cmp(&other.v[j].re).unwrap() {
                std::cmp::Ordering::Equal => {}
                o => return o,
            }
            match self.v[j].im.partial_cmp(&other.v[j].im).unwrap() {
                std::cmp::Ordering::Equal => {}
                o => return o,
            }
        }
        std::cmp::Ordering::Equal
    }
}

impl Add for CVec {
    type Output = CVec;
    fn add(self, rhs: CVec) -> CVec {
        debug_assert_eq!(self.n, rhs.n);
        let mut out = self;
        for j in 0..self.n as usize {
            out.v[j] += rhs.v[j];
        }
        out
    }
}

impl Sub for CVec {
    type Output = CVec;
    fn sub(self, rhs: CVec) -> CVec {
        debug_assert_eq!(self.n, rhs.n);
        let mut out = self;
        for j in 0..self.n as usize {
            out.v[j] -= rhs.v[j];
        }
        out
    }
}

impl Neg for CVec {
    type Output = CVec;
    fn neg(self) -> CVec {
        self.map(|z| -z)
    }
}

impl Mul<Complex64> for CVec {
    type Output = CVec;
    fn mul(self, rhs: Complex64) -> CVec {
        self.map(|z| z * rhs)
    }
}

impl Mul<f64> for CVec {
    type Output = CVec;
    fn mul(self, rhs: f64) -> CVec {
        self.map(|z| z * rhs)
    }
}

impl Index<usize> for CVec {
    type Output = Complex64;
    fn index(&self, i: usize) -> &Complex64 {
        &self.components()[i]
    }
}

impl Serialize for CVec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let pairs: Vec<[f64; 2]> =
            self.components().iter().map(|z| [z.re, z.im]).collect();
        pairs.serialize(s)
    }
}

impl<'de> Deserialize<'de> for CVec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let pairs: Vec<[f64; 2]> = Vec::deserialize(d)?;
        if pairs.is_empty() || pairs.len() > MAX_DIM {
            return Err(serde::de::Error::custom("bad CVec dimension"));
        }
        let comps: Vec<Complex64> =
            pairs.iter().map(|p| Complex64::new(p[0], p[1])).collect();
        Ok(CVec::from_slice(&comps))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inner_product_is_hermitian() {
        let a = CVec::from_slice(&[Complex64::new(1.0, 2.0), Complex64::new(0.5, -1.0)]);
        let b = CVec::from_slice(&[Complex64::new(-1.0, 0.25), Complex64::new(2.0, 2.0)]);
        let ab = a.inner(&b);
        let ba = b.inner(&a);
        assert!((ab - ba.conj()).norm() < 1e-15, "<a,b> != conj(<b,a>)");
        assert!((a.inner(&a).im).abs() < 1e-15);
        assert!((a.inner(&a).re - a.norm_sq()).abs() < 1e-15);
    }

    #[test]
    fn real_roundtrip() {
        let a = CVec::from_real(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(a.dim(), 2);
        assert_eq!(a.to_real(), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn lex_order_is_total_on_samples() {
        let a = CVec::from_real(&[0.0, 1.0]);
        let b = CVec::from_real(&[0.0, 2.0]);
        assert_eq!(a.lex_cmp(&b), std::cmp::Ordering::Less);
        assert_eq!(b.lex_cmp(&a), std::cmp::Ordering::Greater);
        assert_eq!(a.lex_cmp(&a), std::cmp::Ordering::Equal);
    }
}
