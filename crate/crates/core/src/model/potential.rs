use std::f64::consts::TAU;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{wrap, Frequency, Phase};
use crate::{Error, Result};

/// Strip width used by the convenience constructors.
pub const DEFAULT_STRIP_WIDTH: f64 = 0.01;

/// One Fourier mode `amp · e^{2πi k·θ}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FourierTerm {
    pub k: [i64; 2],
    pub amp: Complex64,
}

/// A real trigonometric polynomial `λ · v₀(θ)` on `𝕋^d`, `v₀(θ) = Σ v̂(k) e^{2πik·θ}`.
///
/// Coefficients are conjugate-symmetric, `v̂(-k) = conj(v̂(k))`, so the
/// potential is real on the torus. `strip_width` is the analyticity width
/// `ρ`; the holomorphic extension is evaluated for `|Im z_j| < ρ/10`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrigPotential {
    dim: usize,
    terms: Vec<FourierTerm>,
    strip_width: f64,
    coupling: f64,
}

/// Supremum of `|λ v₀(z)|` over `|Im z_j| < h`: the rigorous coefficient
/// bound and a grid-refined estimate (`bound ≥ estimate`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StripNorm {
    pub height: f64,
    pub bound: f64,
    pub estimate: f64,
}

impl TrigPotential {
    /// Validates and canonicalizes the coefficient list (zero modes dropped,
    /// duplicates merged, sorted by `k`).
    pub fn new(
        dim: usize,
        coeffs: impl IntoIterator<Item = (Vec<i64>, Complex64)>,
        strip_width: f64,
        coupling: f64,
    ) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::invalid("potential dimension must be 1 or 2"));
        }
        if !(strip_width > 0.0) || !strip_width.is_finite() {
            return Err(Error::invalid("strip width must be positive"));
        }
        if !(coupling >= 0.0) || !coupling.is_finite() {
            return Err(Error::invalid("coupling must be nonnegative"));
        }
        let mut terms: Vec<FourierTerm> = Vec::new();
        for (k, amp) in coeffs {
            if k.len() != dim {
                return Err(Error::invalid(format!(
                    "mode {k:?} does not match dimension {dim}"
                )));
            }
            if !amp.re.is_finite() || !amp.im.is_finite() {
                return Err(Error::invalid("coefficients must be finite"));
            }
            let key = [k[0], if dim == 2 { k[1] } else { 0 }];
            match terms.iter_mut().find(|t| t.k == key) {
                Some(t) => t.amp += amp,
                None => terms.push(FourierTerm { k: key, amp }),
            }
        }
        terms.retain(|t| t.amp != Complex64::new(0.0, 0.0));
        terms.sort_by_key(|t| t.k);
        let scale = terms.iter().map(|t| t.amp.norm()).fold(0.0, f64::max);
        for t in &terms {
            let mirror = terms
                .iter()
                .find(|u| u.k == [-t.k[0], -t.k[1]])
                .map_or(Complex64::new(0.0, 0.0), |u| u.amp);
            if (mirror - t.amp.conj()).norm() > 1e-12 * scale {
                return Err(Error::invalid(format!(
                    "coefficients not conjugate-symmetric at k = {:?}",
                    &t.k[..dim]
                )));
            }
        }
        Ok(TrigPotential {
            dim,
            terms,
            strip_width,
            coupling,
        })
    }

    /// `v ≡ κ`.
    pub fn constant(dim: usize, kappa: f64) -> Self {
        let zero = vec![0; dim];
        Self::new(dim, [(zero, Complex64::new(kappa, 0.0))], DEFAULT_STRIP_WIDTH, 1.0)
            .expect("valid constant")
    }

    /// The free operator, `v ≡ 0`.
    pub fn zero(dim: usize) -> Self {
        Self::new(dim, [], DEFAULT_STRIP_WIDTH, 1.0).expect("valid zero potential")
    }

    /// Almost-Mathieu potential `λ cos(2πθ)`.
    pub fn cosine(lambda: f64) -> Self {
        let h = Complex64::new(0.5, 0.0);
        Self::new(1, [(vec![1], h), (vec![-1], h)], DEFAULT_STRIP_WIDTH, lambda)
            .expect("valid cosine")
    }

    /// `λ (cos 2πθ₁ + cos 2πθ₂)` on `𝕋²`.
    pub fn cosine_sum_2d(lambda: f64) -> Self {
        let h = Complex64::new(0.5, 0.0);
        Self::new(
            2,
            [
                (vec![1, 0], h),
                (vec![-1, 0], h),
                (vec![0, 1], h),
                (vec![0, -1], h),
            ],
            DEFAULT_STRIP_WIDTH,
            lambda,
        )
        .expect("valid 2d cosine")
    }

    pub fn with_strip_width(mut self, rho: f64) -> Self {
        assert!(rho > 0.0 && rho.is_finite(), "strip width must be positive");
        self.strip_width = rho;
        self
    }

    pub fn with_coupling(mut self, lambda: f64) -> Self {
        assert!(lambda >= 0.0 && lambda.is_finite(), "coupling must be nonnegative");
        self.coupling = lambda;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[FourierTerm] {
        &self.terms
    }

    pub fn strip_width(&self) -> f64 {
        self.strip_width
    }

    pub fn coupling(&self) -> f64 {
        self.coupling
    }

    /// Largest `|k|₁` with a nonzero coefficient.
    pub fn degree(&self) -> i64 {
        self.terms
            .iter()
            .map(|t| t.k[0].abs() + t.k[1].abs())
            .max()
            .unwrap_or(0)
    }

    /// True when every non-constant mode vanishes.
    pub fn is_constant(&self) -> bool {
        self.coupling == 0.0 || self.terms.iter().all(|t| t.k == [0, 0])
    }

    /// `λ · v̂(0)`.
    pub fn mean(&self) -> f64 {
        self.coupling
            * self
                .terms
                .iter()
                .find(|t| t.k == [0, 0])
                .map_or(0.0, |t| t.amp.re)
    }

    fn dot(&self, k: [i64; 2], x: &[f64]) -> f64 {
        k.iter().zip(x).map(|(&kj, &xj)| kj as f64 * xj).sum()
    }

    /// `λ Σ v̂(k) e^{2πik·θ}`. The imaginary residue of the sum is discarded.
    pub fn eval(&self, theta: &Phase) -> f64 {
        assert_eq!(theta.dim(), self.dim, "phase dimension mismatch");
        let x = theta.as_slice();
        let mut acc = Complex64::new(0.0, 0.0);
        let mut scale = 0.0;
        for t in &self.terms {
            let phase = TAU * wrap(self.dot(t.k, x));
            acc += t.amp * Complex64::new(phase.cos(), phase.sin());
            scale += t.amp.norm();
        }
        debug_assert!(
            acc.im.abs() <= 1e-12 * scale.max(f64::MIN_POSITIVE),
            "potential not real: {acc}"
        );
        self.coupling * acc.re
    }

    /// Holomorphic extension `λ v₀(z)`; requires `|Im z_j| < ρ/10`.
    pub fn eval_complex(&self, z: &[Complex64]) -> Result<Complex64> {
        assert_eq!(z.len(), self.dim, "point dimension mismatch");
        let limit = self.strip_width / 10.0;
        if let Some(bad) = z.iter().find(|zj| !(zj.im.abs() < limit)) {
            return Err(Error::StripExceeded { im: bad.im.abs(), limit });
        }
        Ok(self.eval_complex_unchecked(z))
    }

    pub(crate) fn eval_complex_unchecked(&self, z: &[Complex64]) -> Complex64 {
        let re: Vec<f64> = z.iter().map(|c| c.re).collect();
        let im: Vec<f64> = z.iter().map(|c| c.im).collect();
        let mut acc = Complex64::new(0.0, 0.0);
        for t in &self.terms {
            let phase = TAU * wrap(self.dot(t.k, &re));
            let damp = (-TAU * self.dot(t.k, &im)).exp();
            acc += t.amp * Complex64::from_polar(damp, phase);
        }
        acc * self.coupling
    }

    /// `‖λv₀‖∞` on the strip of half-width `ρ` (the analyticity width).
    pub fn strip_norm(&self) -> StripNorm {
        self.strip_norm_at(self.strip_width)
    }

    /// Coefficient bound `λ Σ|v̂(k)| e^{2π|k|h}` plus a grid-refined maximum of
    /// `|λ v₀(x + iy)|` over the distinguished boundary `|y_j| = h`.
    pub fn strip_norm_at(&self, height: f64) -> StripNorm {
        assert!(height >= 0.0, "strip height must be nonnegative");
        let bound = self.coupling
            * self
                .terms
                .iter()
                .map(|t| t.amp.norm() * (TAU * (t.k[0].abs() + t.k[1].abs()) as f64 * height).exp())
                .sum::<f64>();
        let estimate = self.grid_strip_max(height);
        StripNorm {
            height,
            bound,
            estimate: estimate.min(bound),
        }
    }

    fn grid_strip_max(&self, height: f64) -> f64 {
        if self.terms.is_empty() || self.coupling == 0.0 {
            return 0.0;
        }
        let corners: Vec<Vec<f64>> = match self.dim {
            1 => vec![vec![height], vec![-height]],
            _ => vec![
                vec![height, height],
                vec![height, -height],
                vec![-height, height],
                vec![-height, -height],
            ],
        };
        let per_axis: usize = if self.dim == 1 { 2048 } else { 128 };
        let eval_at = |x: &[f64], y: &[f64]| -> f64 {
            let z: Vec<Complex64> = x.iter().zip(y).map(|(&a, &b)| Complex64::new(a, b)).collect();
            self.eval_complex_unchecked(&z).norm()
        };
        let mut best = 0.0f64;
        let mut best_x = vec![0.0; self.dim];
        let mut best_y = corners[0].clone();
        for y in &corners {
            let total = per_axis.pow(self.dim as u32);
            for idx in 0..total {
                let x: Vec<f64> = (0..self.dim)
                    .map(|j| ((idx / per_axis.pow(j as u32)) % per_axis) as f64 / per_axis as f64)
                    .collect();
                let val = eval_at(&x, y);
                if val > best {
                    best = val;
                    best_x = x;
                    best_y = y.clone();
                }
            }
        }
        // Local refinement around the grid maximizer.
        let mut step = 1.0 / per_axis as f64;
        for _ in 0..40 {
            let mut improved = false;
            for j in 0..self.dim {
                for dir in [-1.0, 1.0] {
                    let mut x = best_x.clone();
                    x[j] += dir * step;
                    let val = eval_at(&x, &best_y);
                    if val > best {
                        best = val;
                        best_x = x;
                        improved = true;
                    }
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        best
    }

    /// `‖v‖∞` as used in growth bounds: the rigorous strip bound.
    pub fn sup_norm(&self) -> f64 {
        self.strip_norm().bound
    }

    /// Prepares fast evaluation of `j ↦ λ v₀(θ + jω)`.
    pub fn orbit(&self, theta: &Phase, omega: &Frequency) -> PotentialOrbit {
        assert_eq!(theta.dim(), self.dim, "phase dimension mismatch");
        assert_eq!(omega.dim(), self.dim, "frequency dimension mismatch");
        let mut constant = 0.0;
        let mut modes = Vec::new();
        for t in &self.terms {
            if t.k == [0, 0] {
                constant += self.coupling * t.amp.re;
                continue;
            }
            // Pair k with -k: v̂(k)e^{iφ} + conj = 2 Re(v̂(k) e^{iφ}).
            if t.k < [0, 0] {
                continue;
            }
            modes.push(OrbitMode {
                base: wrap(self.dot(t.k, theta.as_slice())),
                step: wrap(self.dot(t.k, omega.components())),
                re: 2.0 * self.coupling * t.amp.re,
                im: 2.0 * self.coupling * t.amp.im,
            });
        }
        PotentialOrbit { constant, modes }
    }

    /// Complexified orbit `j ↦ λ v₀(z + jω)` with `z = θ + iy`.
    pub(crate) fn complex_orbit(&self, z: &[Complex64], omega: &Frequency) -> ComplexOrbit {
        let re: Vec<f64> = z.iter().map(|c| c.re).collect();
        let im: Vec<f64> = z.iter().map(|c| c.im).collect();
        let modes = self
            .terms
            .iter()
            .map(|t| ComplexMode {
                base: wrap(self.dot(t.k, &re)),
                step: wrap(self.dot(t.k, omega.components())),
                amp: t.amp * self.coupling * (-TAU * self.dot(t.k, &im)).exp(),
            })
            .collect();
        ComplexOrbit { modes }
    }
}

#[derive(Clone, Copy, Debug)]
struct OrbitMode {
    base: f64,
    step: f64,
    re: f64,
    im: f64,
}

/// Precomputed `j ↦ λ v₀(θ + jω)`.
#[derive(Clone, Debug)]
pub struct PotentialOrbit {
    constant: f64,
    modes: Vec<OrbitMode>,
}

impl PotentialOrbit {
    pub fn value(&self, j: i64) -> f64 {
        let mut acc = self.constant;
        for m in &self.modes {
            let t = wrap(m.base + wrap(j as f64 * m.step));
            let (s, c) = (TAU * t).sin_cos();
            acc += m.re * c - m.im * s;
        }
        acc
    }
}

#[derive(Clone, Copy, Debug)]
struct ComplexMode {
    base: f64,
    step: f64,
    amp: Complex64,
}

#[derive(Clone, Debug)]
pub(crate) struct ComplexOrbit {
    modes: Vec<ComplexMode>,
}

impl ComplexOrbit {
    pub(crate) fn value(&self, j: i64) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for m in &self.modes {
            let t = wrap(m.base + wrap(j as f64 * m.step));
            acc += m.amp * Complex64::from_polar(1.0, TAU * t);
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn cosine_values() {
        assert!((TrigPotential::cosine(1.0).eval(&Phase::scalar(0.0)) - 1.0).abs() < 1e-15);
        assert!(TrigPotential::cosine(5.0).eval(&Phase::scalar(0.25)).abs() < 1e-14);
        let v2 = TrigPotential::cosine_sum_2d(2.0);
        assert!(v2.eval(&Phase::new(&[0.0, 0.5])).abs() < 1e-14);
    }

    #[test]
    fn complex_extension() {
        let v = TrigPotential::cosine(1.0).with_strip_width(1.0);
        let y = 0.05;
        let val = v.eval_complex(&[Complex64::new(0.0, y)]).unwrap();
        assert!((val.re - (TAU * y).cosh()).abs() < 1e-14);
        assert!(val.im.abs() < 1e-14);
        let err = v.eval_complex(&[Complex64::new(0.0, 0.1)]).unwrap_err();
        assert!(matches!(err, Error::StripExceeded { .. }));
        for x in [0.0, 0.1, 0.37, 0.9] {
            let real = v.eval(&Phase::scalar(x));
            let cplx = v.eval_complex(&[Complex64::new(x, 0.0)]).unwrap();
            assert!((real - cplx.re).abs() < 1e-14);
        }
    }

    #[test]
    fn strip_norms() {
        let k = TrigPotential::constant(1, -3.5);
        let n = k.strip_norm();
        assert_eq!(n.bound, 3.5);
        assert!((n.estimate - 3.5).abs() < 1e-14);

        let cosv = TrigPotential::cosine(1.0);
        let zero_height = cosv.strip_norm_at(0.0);
        assert!((zero_height.estimate - 1.0).abs() < 1e-12);

        let s = cosv.strip_norm_at(0.05);
        assert!((s.estimate - (TAU * 0.05).cosh()).abs() < 1e-9, "{s:?}");
        assert!(s.bound >= s.estimate);
    }

    #[test]
    fn rejects_asymmetric_coefficients() {
        let err = TrigPotential::new(1, [(vec![1], c(0.5))], 0.1, 1.0).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
        let err = TrigPotential::new(
            1,
            [(vec![1], Complex64::new(0.0, 0.5)), (vec![-1], Complex64::new(0.0, 0.5))],
            0.1,
            1.0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn orbit_matches_pointwise() {
        let v = TrigPotential::new(
            2,
            [
                (vec![1, 2], Complex64::new(0.3, -0.7)),
                (vec![-1, -2], Complex64::new(0.3, 0.7)),
                (vec![0, 0], c(1.5)),
                (vec![0, 1], c(0.25)),
                (vec![0, -1], c(0.25)),
            ],
            0.1,
            2.0,
        )
        .unwrap();
        let w = Frequency::default_2d();
        let theta = Phase::new(&[0.1, 0.8]);
        let orbit = v.orbit(&theta, &w);
        for j in [-7i64, 0, 1, 13, 1000] {
            let direct = v.eval(&theta.shifted(&w, j as f64));
            assert!((orbit.value(j) - direct).abs() < 1e-11, "j = {j}");
        }
    }

    #[test]
    fn real_on_random_phases() {
        let v = TrigPotential::new(
            1,
            [
                (vec![3], Complex64::new(0.2, 0.9)),
                (vec![-3], Complex64::new(0.2, -0.9)),
                (vec![1], Complex64::new(-1.0, 0.1)),
                (vec![-1], Complex64::new(-1.0, -0.1)),
            ],
            0.1,
            1.0,
        )
        .unwrap();
        for i in 0..200 {
            let x = (i as f64 * 0.618_033_988_7).fract();
            let z = v.eval_complex_unchecked(&[Complex64::new(x, 0.0)]);
            assert!(z.im.abs() <= 1e-12 * z.norm().max(1.0));
        }
    }
}
