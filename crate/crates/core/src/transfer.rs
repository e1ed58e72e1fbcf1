//! Transfer-matrix cocycles and tridiagonal determinants.
//!
//! The fundamental matrix is the ordered product
//!
//! ```text
//! M_n(ω, θ, E) = S_n ⋯ S_1,    S_j = [[v(θ + jω) − E, 1], [−1, 0]]
//! ```
//!
//! and its entries are determinants of truncations of `A_n(ω, θ) − E`:
//!
//! ```text
//! M_n = [[ D_n(θ),    D_{n−1}(θ+ω) ],
//!        [ −D_{n−1}(θ), −D_{n−2}(θ+ω) ]]
//! ```
//!
//! with `D_0 = 1`, `D_{−1} = 0`. Every product is carried as a
//! [`ScaledMatrix2`] renormalized after each factor, since `‖M_n‖` grows like
//! `e^{nL}` and overflows doubles after a few hundred steps otherwise.
//!
//! The other common convention `[[v − E, −1], [1, 0]]` is conjugate to this one
//! by `diag(1, −1)`; every norm-level statement holds for both.

use num_complex::Complex64;
use serde::Serialize;

use crate::model::{Entry, Frequency, LogScalar, Phase, PotentialOrbit, ScaledMatrix2, TrigPotential};
use crate::{Error, Result};

/// One-step factor `[[v − E, 1], [−1, 0]]` in row-major order.
pub fn step_matrix(v_val: f64, energy: f64) -> [f64; 4] {
    [v_val - energy, 1.0, -1.0, 0.0]
}

/// `log‖M_n‖` together with the scaled product itself.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CocycleResult<T: Entry = f64> {
    pub log_norm: f64,
    pub direction: ScaledMatrix2<T>,
    pub steps: usize,
}

impl<T: Entry> CocycleResult<T> {
    /// `n⁻¹ log‖M_n‖`.
    pub fn exponent(&self) -> f64 {
        self.log_norm / self.steps as f64
    }
}

/// Product of the steps `first..first+n` along an orbit, i.e. `M_n(θ + (first−1)ω)`.
pub(crate) fn product_along(orbit: &PotentialOrbit, energy: f64, first: i64, n: usize) -> ScaledMatrix2 {
    let mut m = ScaledMatrix2::identity();
    for j in first..first + n as i64 {
        m.left_step(orbit.value(j) - energy);
    }
    m
}

/// `log‖M_n(θ + (first−1)ω)‖` along a prepared orbit.
pub(crate) fn log_norm_along(orbit: &PotentialOrbit, energy: f64, first: i64, n: usize) -> f64 {
    product_along(orbit, energy, first, n).log_op_norm()
}

/// `M_n(ω, θ, E)` for `n ≥ 1`, with `log_norm = log‖M_n‖₂`.
pub fn cocycle(omega: &Frequency, theta: &Phase, energy: f64, n: usize, v: &TrigPotential) -> CocycleResult {
    assert!(n >= 1, "cocycle needs at least one step");
    let orbit = v.orbit(theta, omega);
    let direction = product_along(&orbit, energy, 1, n);
    CocycleResult {
        log_norm: direction.log_op_norm(),
        direction,
        steps: n,
    }
}

/// `log‖M_j(ω, θ, E)‖` for `j = 1..=n`.
pub fn cocycle_trace(omega: &Frequency, theta: &Phase, energy: f64, n: usize, v: &TrigPotential) -> Vec<f64> {
    let orbit = v.orbit(theta, omega);
    let mut m = ScaledMatrix2::identity();
    (1..=n as i64)
        .map(|j| {
            m.left_step(orbit.value(j) - energy);
            m.log_op_norm()
        })
        .collect()
}

/// The holomorphic extension `M_n(ω, z, E)`; requires `|Im z_j| < ρ/10`.
pub fn cocycle_complex(
    omega: &Frequency,
    z: &[Complex64],
    energy: f64,
    n: usize,
    v: &TrigPotential,
) -> Result<CocycleResult<Complex64>> {
    assert!(n >= 1, "cocycle needs at least one step");
    assert_eq!(z.len(), v.dim(), "point dimension mismatch");
    let limit = v.strip_width() / 10.0;
    if let Some(bad) = z.iter().find(|c| !(c.im.abs() < limit)) {
        return Err(Error::StripExceeded {
            im: bad.im.abs(),
            limit,
        });
    }
    let orbit = v.complex_orbit(z, omega);
    let e = Complex64::new(energy, 0.0);
    let mut m = ScaledMatrix2::<Complex64>::identity();
    for j in 1..=n as i64 {
        m.left_step(orbit.value(j) - e);
    }
    Ok(CocycleResult {
        log_norm: m.log_op_norm(),
        direction: m,
        steps: n,
    })
}

/// `det(A − E)` for the box and its two trailing truncations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DetTriple {
    /// `det(A_{[a,b]} − E)`
    pub d_n: LogScalar,
    /// `det(A_{[a,b−1]} − E)`
    pub d_n1: LogScalar,
    /// `det(A_{[a,b−2]} − E)`
    pub d_n2: LogScalar,
}

/// Leading principal minors `det(A_{[0,k)} − E)` of the tridiagonal matrix
/// with the given diagonal and unit off-diagonals, for `k = 0..=N`
/// (`k = 0` is the empty determinant 1).
///
/// The pair `(D_m, D_{m−1})` is rescaled jointly by powers of two, so
/// their ratio is never perturbed by the renormalization.
pub fn prefix_determinants(diagonal: &[f64], energy: f64) -> Vec<LogScalar> {
    let mut out = Vec::with_capacity(diagonal.len() + 1);
    out.push(LogScalar::ONE);
    let (mut cur, mut prev, mut scale) = (1.0f64, 0.0f64, 0.0f64);
    for &a in diagonal {
        let next = (a - energy) * cur - prev;
        prev = cur;
        cur = next;
        let m = cur.abs().max(prev.abs());
        if m > 0.0 {
            let k = m.log2().floor() as i32;
            if k != 0 {
                let f = 2f64.powi(-k);
                cur *= f;
                prev *= f;
                scale += f64::from(k) * std::f64::consts::LN_2;
            }
        }
        out.push(LogScalar::from_scaled(cur, scale));
    }
    out
}

/// Trailing minors `det(A_{[k,N)} − E)` for `k = 0..=N` (`k = N` gives 1).
pub fn suffix_determinants(diagonal: &[f64], energy: f64) -> Vec<LogScalar> {
    let rev: Vec<f64> = diagonal.iter().rev().copied().collect();
    let mut out = prefix_determinants(&rev, energy);
    out.reverse();
    out
}

/// Diagonal `v(θ + jω)` for `j ∈ [a, b]`.
pub fn box_diagonal(interval: (i64, i64), omega: &Frequency, theta: &Phase, v: &TrigPotential) -> Vec<f64> {
    let (a, b) = interval;
    assert!(a <= b, "empty interval [{a}, {b}]");
    let orbit = v.orbit(theta, omega);
    (a..=b).map(|j| orbit.value(j)).collect()
}

/// Determinants of `A_Λ − E` and its two trailing truncations, `Λ = [a, b]`.
pub fn det_recurrence(
    interval: (i64, i64),
    omega: &Frequency,
    theta: &Phase,
    energy: f64,
    v: &TrigPotential,
) -> DetTriple {
    let diag = box_diagonal(interval, omega, theta, v);
    let dets = prefix_determinants(&diag, energy);
    let n = diag.len();
    DetTriple {
        d_n: dets[n],
        d_n1: dets[n - 1],
        // D_{-1} = 0 seeds the identity for a single site.
        d_n2: if n >= 2 { dets[n - 2] } else { LogScalar::ZERO },
    }
}

/// Maximum discrepancy between the four entries of `M_n(θ)` and the
/// determinants `D_n(θ), D_{n−1}(θ+ω), −D_{n−1}(θ), −D_{n−2}(θ+ω)`.
///
/// Each entry is compared by relative difference in signed-log space.
pub fn verify_det_identity(n: usize, omega: &Frequency, theta: &Phase, energy: f64, v: &TrigPotential) -> f64 {
    assert!(n >= 3, "determinant identity check needs n >= 3");
    let m = cocycle(omega, theta, energy, n, v).direction;
    let left = det_recurrence((1, n as i64), omega, theta, energy, v);
    let right = det_recurrence((2, n as i64), omega, theta, energy, v);
    let expected = [left.d_n, right.d_n, -left.d_n1, -right.d_n1];
    (0..4)
        .map(|i| m.entry_log(i / 2, i % 2).rel_diff(expected[i]))
        .fold(0.0, f64::max)
}

/// Shift-stability report for `φ(θ) = n⁻¹ log‖M_n(θ)‖`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GrowthEnvelope {
    /// `log‖M_j(θ)‖` for `j = 1..=n`.
    pub trace: Vec<f64>,
    /// The constant `C = 2 log(1 + ‖v‖∞ + |E|)`.
    pub constant: f64,
    /// `(r, |φ(θ + rω) − φ(θ)|, C|r|/n)` for every requested shift.
    pub shifts: Vec<(i64, f64, f64)>,
    pub holds: bool,
}

/// Checks `|φ(θ + rω) − φ(θ)| ≤ C|r|/n` for `r` in `shifts`.
pub fn growth_envelope(
    n: usize,
    omega: &Frequency,
    theta: &Phase,
    energy: f64,
    v: &TrigPotential,
    shifts: impl IntoIterator<Item = i64>,
) -> GrowthEnvelope {
    assert!(n >= 1, "growth envelope needs n >= 1");
    let trace = cocycle_trace(omega, theta, energy, n, v);
    let base = trace[n - 1] / n as f64;
    let constant = 2.0 * (1.0 + v.sup_norm() + energy.abs()).ln();
    let orbit = v.orbit(theta, omega);
    let shifts: Vec<(i64, f64, f64)> = shifts
        .into_iter()
        .map(|r| {
            let shifted = log_norm_along(&orbit, energy, 1 + r, n) / n as f64;
            (r, (shifted - base).abs(), constant * r.unsigned_abs() as f64 / n as f64)
        })
        .collect();
    // Slack covers rounding in the two products.
    let holds = shifts.iter().all(|&(_, d, b)| d <= b + 1e-12);
    GrowthEnvelope {
        trace,
        constant,
        shifts,
        holds,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn golden() -> Frequency {
        Frequency::golden()
    }

    fn random_potential(rng: &mut ChaCha8Rng, degree: i64) -> TrigPotential {
        let mut coeffs = vec![(vec![0], Complex64::new(rng.random_range(-1.0..1.0), 0.0))];
        for k in 1..=degree {
            let c = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            coeffs.push((vec![k], c));
            coeffs.push((vec![-k], c.conj()));
        }
        TrigPotential::new(1, coeffs, 0.1, rng.random_range(0.5..5.0)).unwrap()
    }

    fn dense_det(diag: &[f64], e: f64) -> f64 {
        let n = diag.len();
        let m = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                diag[i] - e
            } else if i.abs_diff(j) == 1 {
                1.0
            } else {
                0.0
            }
        });
        m.determinant()
    }

    #[test]
    fn step_matrix_entries() {
        assert_eq!(step_matrix(0.0, 0.0), [0.0, 1.0, -1.0, 0.0]);
        assert_eq!(step_matrix(3.0, 1.0), [2.0, 1.0, -1.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let s = step_matrix(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0));
            assert_eq!(s[0] * s[3] - s[1] * s[2], 1.0);
        }
    }

    #[test]
    fn free_cocycle_is_rotation() {
        let v = TrigPotential::zero(1);
        for n in [1, 2, 3, 7, 1000] {
            let c = cocycle(&golden(), &Phase::scalar(0.3), 0.0, n, &v);
            assert!(c.log_norm.abs() < 1e-14, "n = {n}");
        }
    }

    #[test]
    fn constant_cocycle_growth() {
        let rho = (3.0 + 5f64.sqrt()) / 2.0;
        // Independent check: plain power iteration of the constant step.
        let mut x = [1.0f64, 0.0];
        for _ in 0..60 {
            x = [-3.0 * x[0] + x[1], -x[0]];
        }
        let ratio = {
            let y = [-3.0 * x[0] + x[1], -x[0]];
            (y[0] * y[0] + y[1] * y[1]).sqrt() / (x[0] * x[0] + x[1] * x[1]).sqrt()
        };
        assert!((ratio - rho).abs() < 1e-12);

        let c = cocycle(&golden(), &Phase::scalar(0.0), 3.0, 1000, &TrigPotential::zero(1));
        assert!((c.exponent() - rho.ln()).abs() < 1e-3, "{}", c.exponent());
    }

    #[test]
    fn almost_mathieu_positive_exponent() {
        let v = TrigPotential::cosine(5.0);
        let c = cocycle(&golden(), &Phase::scalar(0.3), 0.0, 10_000, &v);
        assert!(c.exponent() >= 2.5f64.ln() - 0.05, "{}", c.exponent());
    }

    #[test]
    fn determinant_of_product_is_one() {
        let v = TrigPotential::cosine(1.5);
        for n in [1, 5, 12] {
            let c = cocycle(&golden(), &Phase::scalar(0.71), 0.4, n, &v);
            let det = c.direction.det_log();
            assert_eq!(det.sign(), 1);
            assert!(det.log_mag().abs() < 1e-8, "n = {n}: {det}");
        }
        // For long products det(M_n) = 1 is only visible up to the
        // cancellation floor eps·‖M_n‖².
        let c = cocycle(&golden(), &Phase::scalar(0.71), 0.4, 400, &TrigPotential::cosine(5.0));
        let det = c.direction.entry_det();
        let floor = 8.0 * f64::EPSILON * c.direction.entry_frobenius().powi(2);
        assert!((det - (-2.0 * c.direction.log_scale).exp()).abs() <= floor);
    }

    #[test]
    fn cocycle_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w = golden();
        for _ in 0..20 {
            let v = random_potential(&mut rng, 3);
            let theta = Phase::scalar(rng.random());
            let e = rng.random_range(-4.0..4.0);
            let (n1, n2) = (rng.random_range(1..40), rng.random_range(1..40));
            let whole = cocycle(&w, &theta, e, n1 + n2, &v).direction;
            let first = cocycle(&w, &theta, e, n1, &v).direction;
            let second = cocycle(&w, &theta.shifted(&w, n1 as f64), e, n2, &v).direction;
            let composed = second.mul(&first);
            let scale = whole.entry_frobenius();
            for i in 0..4 {
                let a = whole.entry_log(i / 2, i % 2);
                let b = composed.entry_log(i / 2, i % 2);
                // Compare relative to the matrix norm: single entries may cancel.
                let diff = (a - b).abs().log_mag() - (scale.ln() + whole.log_scale);
                assert!(diff < (1e-9f64).ln(), "entry {i}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn norm_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = golden();
        for _ in 0..30 {
            let v = random_potential(&mut rng, 2);
            let e = rng.random_range(-10.0..10.0);
            let n = rng.random_range(1..500);
            let c = cocycle(&w, &Phase::scalar(rng.random()), e, n, &v);
            let cap = n as f64 * (1.0 + v.sup_norm() + e.abs()).ln() + 1.0;
            assert!(c.log_norm <= cap);
            assert!(c.direction.adjugate().log_op_norm() <= cap);
        }
    }

    #[test]
    fn complex_restriction_matches_real() {
        let v = TrigPotential::cosine(3.0).with_strip_width(1.0);
        let w = golden();
        for x in [0.0, 0.2, 0.77] {
            let real = cocycle(&w, &Phase::scalar(x), 0.7, 300, &v);
            let cplx = cocycle_complex(&w, &[Complex64::new(x, 0.0)], 0.7, 300, &v).unwrap();
            assert!((real.log_norm - cplx.log_norm).abs() <= 1e-10 * real.log_norm.abs());
        }
        let free = cocycle_complex(&w, &[Complex64::new(0.1, 0.05)], 0.0, 50, &TrigPotential::zero(1).with_strip_width(1.0)).unwrap();
        assert!(free.log_norm.abs() < 1e-14);
        let err = cocycle_complex(&w, &[Complex64::new(0.0, 0.2)], 0.0, 5, &v).unwrap_err();
        assert!(matches!(err, Error::StripExceeded { .. }));
    }

    #[test]
    fn small_determinants() {
        let w = golden();
        let a = 0.8;
        let v = TrigPotential::constant(1, a);
        let one = det_recurrence((1, 1), &w, &Phase::scalar(0.0), 0.3, &v);
        assert!((one.d_n.to_f64() - (a - 0.3)).abs() < 1e-15);
        assert_eq!(one.d_n1, LogScalar::ONE);
        assert!(one.d_n2.is_zero());
        let two = det_recurrence((1, 2), &w, &Phase::scalar(0.0), 0.3, &v);
        assert!((two.d_n.to_f64() - ((a - 0.3) * (a - 0.3) - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn determinants_match_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = golden();
        for _ in 0..200 {
            let v = random_potential(&mut rng, 3);
            let n = rng.random_range(1..=12i64);
            let theta = Phase::scalar(rng.random());
            let e = rng.random_range(-5.0..5.0);
            let diag = box_diagonal((1, n), &w, &theta, &v);
            let t = det_recurrence((1, n), &w, &theta, e, &v);
            let dense = dense_det(&diag, e);
            let scale = diag.iter().map(|d| (d - e).abs() + 2.0).product::<f64>();
            assert!((t.d_n.to_f64() - dense).abs() <= 1e-9 * dense.abs().max(1e-3 * scale));
        }
    }

    #[test]
    fn determinant_identity() {
        let w = golden();
        assert!(verify_det_identity(4, &w, &Phase::scalar(0.0), 0.0, &TrigPotential::zero(1)) <= 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = TrigPotential::cosine(5.0);
        for _ in 0..20 {
            let r = verify_det_identity(64, &w, &Phase::scalar(rng.random()), 0.0, &v);
            assert!(r <= 1e-9, "{r}");
        }
    }

    #[test]
    fn prefix_and_suffix_agree_on_full_box() {
        let diag = [0.3, -1.2, 2.5, 0.0, 4.1];
        let p = prefix_determinants(&diag, 0.5);
        let s = suffix_determinants(&diag, 0.5);
        assert!(p[5].rel_diff(s[0]) < 1e-14);
        assert_eq!(s[5], LogScalar::ONE);
    }

    #[test]
    fn growth_envelope_shift_bound() {
        let w = golden();
        let free = growth_envelope(50, &w, &Phase::scalar(0.2), 0.0, &TrigPotential::zero(1), -3..=3);
        assert!(free.shifts.iter().all(|s| s.1 == 0.0));
        let env = growth_envelope(500, &w, &Phase::scalar(0.2), 0.0, &TrigPotential::cosine(5.0), 0..=20);
        assert!(env.holds);
        assert_eq!(env.shifts[0].1, 0.0);
        assert_eq!(env.trace.len(), 500);
    }
}
