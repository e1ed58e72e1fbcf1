use std::ops::{Add, Mul, Neg, Sub};

use num_complex::Complex64;

use super::LogScalar;

/// Matrix entry type: real for the cocycle on the torus, complex for its
/// holomorphic extension into the strip.
pub trait Entry:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + PartialEq
    + std::fmt::Debug
    + Send
    + Sync
{
    const ZERO: Self;
    const ONE: Self;
    fn modulus(self) -> f64;
    fn norm_sqr(self) -> f64;
    fn scale(self, s: f64) -> Self;
    fn conj(self) -> Self;
    /// `x/|x|`, or one when `x = 0`.
    fn unit(self) -> Self;
}

impl Entry for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    fn modulus(self) -> f64 {
        self.abs()
    }
    fn norm_sqr(self) -> f64 {
        self * self
    }
    fn scale(self, s: f64) -> Self {
        self * s
    }
    fn conj(self) -> Self {
        self
    }
    fn unit(self) -> Self {
        if self < 0.0 {
            -1.0
        } else {
            1.0
        }
    }
}

impl Entry for Complex64 {
    const ZERO: Self = Complex64::new(0.0, 0.0);
    const ONE: Self = Complex64::new(1.0, 0.0);
    fn modulus(self) -> f64 {
        self.norm()
    }
    fn norm_sqr(self) -> f64 {
        Complex64::norm_sqr(&self)
    }
    fn scale(self, s: f64) -> Self {
        self * s
    }
    fn conj(self) -> Self {
        Complex64::conj(&self)
    }
    fn unit(self) -> Self {
        let r = self.norm();
        if r == 0.0 {
            Complex64::ONE
        } else {
            self / r
        }
    }
}

/// A 2×2 matrix `e^{log_scale} · [[a, b], [c, d]]`.
///
/// After [`renormalize`](Self::renormalize) the Frobenius norm of the entries
/// lies in `[1, 2)` (unless the matrix is zero). Rescaling is by exact powers
/// of two, so the represented matrix never changes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScaledMatrix2<T: Entry = f64> {
    pub entries: [T; 4],
    pub log_scale: f64,
}

impl<T: Entry> ScaledMatrix2<T> {
    pub fn identity() -> Self {
        ScaledMatrix2 {
            entries: [T::ONE, T::ZERO, T::ZERO, T::ONE],
            log_scale: 0.0,
        }
    }

    pub fn from_entries(entries: [T; 4]) -> Self {
        let mut m = ScaledMatrix2 {
            entries,
            log_scale: 0.0,
        };
        m.renormalize();
        m
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(|e| *e == T::ZERO)
    }

    /// Frobenius norm of the unit-scale entries, computed without overflow.
    pub fn entry_frobenius(&self) -> f64 {
        let max = self
            .entries
            .iter()
            .map(|e| e.modulus())
            .fold(0.0f64, f64::max);
        if max == 0.0 || !max.is_finite() {
            return max;
        }
        let s: f64 = self
            .entries
            .iter()
            .map(|e| {
                let r = e.modulus() / max;
                r * r
            })
            .sum();
        max * s.sqrt()
    }

    pub fn renormalize(&mut self) {
        let s: f64 = self.entries.iter().map(|e| e.norm_sqr()).sum();
        if (1.0..4.0).contains(&s) {
            return;
        }
        if s.is_normal() {
            let f = s.sqrt();
            let k = ((f.to_bits() >> 52) & 0x7ff) as i32 - 1023;
            if f.is_normal() && (-1000..=1000).contains(&k) {
                let factor = f64::from_bits(((1023 - k) as u64) << 52);
                for e in &mut self.entries {
                    *e = e.scale(factor);
                }
                self.log_scale += f64::from(k) * std::f64::consts::LN_2;
                return;
            }
        }
        self.renormalize_slow();
    }

    fn renormalize_slow(&mut self) {
        let f = self.entry_frobenius();
        if f == 0.0 {
            return;
        }
        let k = f.log2().floor() as i32;
        if k == 0 {
            return;
        }
        // Split to keep 2^{-k} representable for very large or small scales.
        let mut rest = k;
        while rest != 0 {
            let step = rest.clamp(-1000, 1000);
            let factor = 2f64.powi(-step);
            for e in &mut self.entries {
                *e = e.scale(factor);
            }
            rest -= step;
        }
        self.log_scale += f64::from(k) * std::f64::consts::LN_2;
        // Rounding in log2 can leave the norm a hair outside [1, 2).
        let f = self.entry_frobenius();
        if f >= 2.0 {
            for e in &mut self.entries {
                *e = e.scale(0.5);
            }
            self.log_scale += std::f64::consts::LN_2;
        } else if f < 1.0 {
            for e in &mut self.entries {
                *e = e.scale(2.0);
            }
            self.log_scale -= std::f64::consts::LN_2;
        }
    }

    /// `self · rhs`, renormalized.
    pub fn mul(&self, rhs: &Self) -> Self {
        let [a, b, c, d] = self.entries;
        let [e, f, g, h] = rhs.entries;
        let mut out = ScaledMatrix2 {
            entries: [a * e + b * g, a * f + b * h, c * e + d * g, c * f + d * h],
            log_scale: self.log_scale + rhs.log_scale,
        };
        out.renormalize();
        out
    }

    /// Left-multiplies by the one-step factor `[[x, 1], [-1, 0]]`, renormalized.
    pub fn left_step(&mut self, x: T) {
        let [a, b, c, d] = self.entries;
        self.entries = [x * a + c, x * b + d, -a, -b];
        self.renormalize();
    }

    /// Determinant of the unit-scale entries (the represented determinant is
    /// this times `e^{2·log_scale}`).
    pub fn entry_det(&self) -> T {
        let [a, b, c, d] = self.entries;
        a * d - b * c
    }

    /// `log‖M‖₂` for the represented matrix, via the closed-form 2×2
    /// singular values. `-∞` for the zero matrix.
    pub fn log_op_norm(&self) -> f64 {
        let f = self.entry_frobenius();
        if f == 0.0 {
            return f64::NEG_INFINITY;
        }
        // σ₁ ± σ₂ = sqrt(F ± 2|det|), with F − 2|det| = |a − u d̄|² + |b + u c̄|²
        // for u = det/|det|, which avoids cancellation near isometries.
        let [a, b, c, d] = self.entries.map(|x| x.scale(1.0 / f));
        let det = a * d - b * c;
        let u = det.unit();
        let plus = 1.0 + 2.0 * det.modulus();
        let minus = (a - u * d.conj()).modulus().powi(2) + (b + u * c.conj()).modulus().powi(2);
        let s1 = 0.5 * (plus.sqrt() + minus.sqrt());
        self.log_scale + f.ln() + s1.ln()
    }

    /// Adjugate `[[d, -b], [-c, a]]`: the inverse when `det = 1`.
    pub fn adjugate(&self) -> Self {
        let [a, b, c, d] = self.entries;
        ScaledMatrix2 {
            entries: [d, -b, -c, a],
            log_scale: self.log_scale,
        }
    }

    pub fn transpose(&self) -> Self {
        let [a, b, c, d] = self.entries;
        ScaledMatrix2 {
            entries: [a, c, b, d],
            log_scale: self.log_scale,
        }
    }
}

impl ScaledMatrix2<f64> {
    /// Entry `(row, col)` of the represented matrix in signed-log form.
    pub fn entry_log(&self, row: usize, col: usize) -> LogScalar {
        LogScalar::from_scaled(self.entries[2 * row + col], self.log_scale)
    }

    /// The represented matrix as plain floats (overflows for large scales).
    pub fn to_f64(&self) -> [f64; 4] {
        let s = self.log_scale.exp();
        self.entries.map(|e| e * s)
    }

    /// Represented determinant in signed-log form.
    pub fn det_log(&self) -> LogScalar {
        LogScalar::from_scaled(self.entry_det(), 2.0 * self.log_scale)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn renormalized_norm_in_unit_band() {
        let m = ScaledMatrix2::from_entries([1e200, -3e199, 7.0, 1e-300]);
        let f = m.entry_frobenius();
        assert!((1.0..2.0).contains(&f), "{f}");
        let tiny = ScaledMatrix2::from_entries([1e-300, 0.0, 0.0, 2e-300]);
        assert!((1.0..2.0).contains(&tiny.entry_frobenius()));
    }

    #[test]
    fn zero_matrix_stays_zero() {
        let m = ScaledMatrix2::from_entries([0.0; 4]);
        assert!(m.is_zero());
        assert_eq!(m.log_scale, 0.0);
        assert_eq!(m.log_op_norm(), f64::NEG_INFINITY);
    }

    #[test]
    fn op_norm_of_diagonal() {
        let m = ScaledMatrix2::from_entries([5.0, 0.0, 0.0, 0.2]);
        assert!((m.log_op_norm() - 5f64.ln()).abs() < 1e-15);
        let r = ScaledMatrix2::from_entries([0.0, 1.0, -1.0, 0.0]);
        assert!(r.log_op_norm().abs() < 1e-15);
    }

    #[test]
    fn complex_entries() {
        let i = Complex64::new(0.0, 1.0);
        let m = ScaledMatrix2::from_entries([i * 3.0, Complex64::ONE, -Complex64::ONE, Complex64::ZERO]);
        // |det| = 1, Frobenius^2 = 11 -> s^2 = 5.5 + sqrt(30.25 - 1)
        let expect = 0.5 * (5.5 + 29.25f64.sqrt()).ln();
        assert!((m.log_op_norm() - expect).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn renormalization_preserves_matrix(
            e in prop::array::uniform4(-1e3f64..1e3),
            k in -200i32..200
        ) {
            let raw = ScaledMatrix2 { entries: e, log_scale: f64::from(k) };
            let mut m = raw;
            m.renormalize();
            for idx in 0..4 {
                let a = raw.entry_log(idx / 2, idx % 2);
                let b = m.entry_log(idx / 2, idx % 2);
                prop_assert!(a.log_distance(b) <= 1e-14 * (1.0 + a.log_mag().abs()));
            }
        }
    }
}
