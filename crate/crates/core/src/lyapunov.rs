//! Finite-scale Lyapunov exponents
//!
//! ```text
//! L_n(ω, E) = n⁻¹ ∫_{𝕋^d} log‖M_n(ω, θ, E)‖ dθ
//! ```
//!
//! estimated by quadrature over θ, plus checks of the structural facts the
//! localization argument relies on: subadditivity, convergence to
//! `L = inf_n L_n`, uniform shift averages, and the uniform upper bound.
//!
//! Sample evaluation runs on the rayon pool; values are collected in input
//! order and reduced by [`pairwise_sum`](crate::stats::pairwise_sum), so
//! results do not depend on the thread count.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{Frequency, Phase, TrigPotential};
use crate::stats::{mean_and_se, pairwise_sum};
use crate::transfer::log_norm_along;
use crate::{Error, Result};

/// How θ-integrals are discretized.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Sampler {
    /// Equispaced grid `i/N` (per axis for `d = 2`).
    Grid { points: usize },
    /// Independent uniform samples.
    MonteCarlo { samples: usize, seed: u64 },
    /// One uniform sample in each cell of a `per_axis^d` grid.
    Stratified { per_axis: usize, seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quadrature {
    Grid,
    MonteCarlo,
}

impl Sampler {
    /// Dense grid of `max(4096, 8n)` points for `d = 1`; 4096 stratified
    /// samples for `d = 2`.
    pub fn default_for(dim: usize, n: usize) -> Self {
        match dim {
            1 => Sampler::Grid {
                points: (8 * n).max(4096),
            },
            _ => Sampler::Stratified { per_axis: 64, seed: 0 },
        }
    }

    pub fn quadrature(&self) -> Quadrature {
        match self {
            Sampler::Grid { .. } => Quadrature::Grid,
            _ => Quadrature::MonteCarlo,
        }
    }

    pub fn phases(&self, dim: usize) -> Vec<Phase> {
        match *self {
            Sampler::Grid { points } => {
                assert!(points >= 1, "grid needs at least one point");
                let step = 1.0 / points as f64;
                match dim {
                    1 => (0..points).map(|i| Phase::scalar(i as f64 * step)).collect(),
                    _ => (0..points * points)
                        .map(|i| Phase::new(&[(i / points) as f64 * step, (i % points) as f64 * step]))
                        .collect(),
                }
            }
            Sampler::MonteCarlo { samples, seed } => {
                assert!(samples >= 1, "need at least one sample");
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..samples)
                    .map(|_| match dim {
                        1 => Phase::scalar(rng.random()),
                        _ => Phase::new(&[rng.random(), rng.random()]),
                    })
                    .collect()
            }
            Sampler::Stratified { per_axis, seed } => {
                assert!(per_axis >= 1, "need at least one stratum");
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let h = 1.0 / per_axis as f64;
                match dim {
                    1 => (0..per_axis)
                        .map(|i| Phase::scalar((i as f64 + rng.random::<f64>()) * h))
                        .collect(),
                    _ => (0..per_axis * per_axis)
                        .map(|i| {
                            let (a, b) = (i / per_axis, i % per_axis);
                            Phase::new(&[
                                (a as f64 + rng.random::<f64>()) * h,
                                (b as f64 + rng.random::<f64>()) * h,
                            ])
                        })
                        .collect(),
                }
            }
        }
    }
}

/// `φ(θ) = n⁻¹ log‖M_n(ω, θ, E)‖` at every phase, in input order.
pub fn phi_values(omega: &Frequency, energy: f64, n: usize, v: &TrigPotential, phases: &[Phase]) -> Vec<f64> {
    assert!(n >= 1, "n must be at least 1");
    phases
        .par_iter()
        .map(|theta| log_norm_along(&v.orbit(theta, omega), energy, 1, n) / n as f64)
        .collect()
}

/// `C = 2 log(1 + ‖v‖∞ + |E|)`, the constant used wherever a concrete bound
/// replaces an implicit one.
pub fn growth_constant(v: &TrigPotential, energy: f64) -> f64 {
    2.0 * (1.0 + v.sup_norm() + energy.abs()).ln()
}

/// Default deviation exponent: `1/3` for one frequency, `0.1` for two.
pub fn default_sigma(dim: usize) -> f64 {
    if dim == 1 {
        1.0 / 3.0
    } else {
        0.1
    }
}

/// A quadrature estimate of `L_n(ω, E)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovEstimate {
    pub n: usize,
    #[serde(rename = "E")]
    pub energy: f64,
    pub value: f64,
    pub std_error: f64,
    pub samples: usize,
    pub quadrature: Quadrature,
}

pub fn lyapunov_n(omega: &Frequency, energy: f64, n: usize, v: &TrigPotential, sampler: &Sampler) -> LyapunovEstimate {
    let phases = sampler.phases(v.dim());
    let values = phi_values(omega, energy, n, v, &phases);
    let (value, std_error) = mean_and_se(&values);
    LyapunovEstimate {
        n,
        energy,
        value,
        std_error,
        samples: values.len(),
        quadrature: sampler.quadrature(),
    }
}

/// `L_n` with the default sampler for the dimension.
pub fn lyapunov_default(omega: &Frequency, energy: f64, n: usize, v: &TrigPotential) -> LyapunovEstimate {
    lyapunov_n(omega, energy, n, v, &Sampler::default_for(v.dim(), n))
}

/// Writes estimates as CSV with columns `n, E, value, std_error, samples, quadrature`.
pub fn write_csv<W: Write>(rows: &[LyapunovEstimate], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    w.flush()?;
    Ok(())
}

/// `L_{n₁+n₂} − (n₁ L_{n₁} + n₂ L_{n₂})/(n₁ + n₂)`, which should be `≤ 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SubadditivityCheck {
    pub residual: f64,
    /// `3 · combined standard error + 10⁻⁹`.
    pub tolerance: f64,
    pub holds: bool,
}

pub fn check_subadditivity(
    omega: &Frequency,
    energy: f64,
    n1: usize,
    n2: usize,
    v: &TrigPotential,
    sampler: &Sampler,
) -> SubadditivityCheck {
    assert!(n1 >= 1 && n2 >= 1, "scales must be positive");
    let l1 = lyapunov_n(omega, energy, n1, v, sampler);
    let l2 = lyapunov_n(omega, energy, n2, v, sampler);
    let l12 = lyapunov_n(omega, energy, n1 + n2, v, sampler);
    let (w1, w2) = (n1 as f64 / (n1 + n2) as f64, n2 as f64 / (n1 + n2) as f64);
    let residual = l12.value - (w1 * l1.value + w2 * l2.value);
    let se = (l12.std_error.powi(2) + (w1 * l1.std_error).powi(2) + (w2 * l2.std_error).powi(2)).sqrt();
    let tolerance = 3.0 * se + 1e-9;
    SubadditivityCheck {
        residual,
        tolerance,
        holds: residual <= tolerance,
    }
}

/// Convergence table for `L = inf_n L_n`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LyapunovLimit {
    /// The smallest tabulated `L_n`.
    pub estimate: LyapunovEstimate,
    pub table: Vec<LyapunovEstimate>,
    /// Doubling pairs `(n, 2n)` of the schedule with `L_{2n} > L_n + 3σ`.
    pub doubling_violations: Vec<(usize, usize)>,
}

pub fn lyapunov_limit(
    omega: &Frequency,
    energy: f64,
    v: &TrigPotential,
    schedule: &[usize],
    sampler: impl Fn(usize) -> Sampler,
) -> Result<LyapunovLimit> {
    if schedule.is_empty() || schedule.windows(2).any(|w| w[0] >= w[1]) || schedule[0] == 0 {
        return Err(Error::invalid("schedule must be nonempty, positive and strictly increasing"));
    }
    let table: Vec<LyapunovEstimate> = schedule
        .iter()
        .map(|&n| lyapunov_n(omega, energy, n, v, &sampler(n)))
        .collect();
    let mut doubling_violations = Vec::new();
    for a in &table {
        if let Some(b) = table.iter().find(|b| b.n == 2 * a.n) {
            let se = (a.std_error.powi(2) + b.std_error.powi(2)).sqrt();
            if b.value > a.value + 3.0 * se + 1e-12 {
                doubling_violations.push((a.n, b.n));
            }
        }
    }
    let estimate = *table
        .iter()
        .min_by(|a, b| a.value.total_cmp(&b.value))
        .expect("nonempty table");
    Ok(LyapunovLimit {
        estimate,
        table,
        doubling_violations,
    })
}

/// `J⁻¹ Σ_{j=1}^{J} n⁻¹ log‖M_n(ω, θ + jω, E)‖`.
pub fn shift_average(omega: &Frequency, theta: &Phase, energy: f64, n: usize, shifts: usize, v: &TrigPotential) -> f64 {
    assert!(shifts >= 1 && n >= 1, "need J >= 1 and n >= 1");
    let orbit = v.orbit(theta, omega);
    let values: Vec<f64> = (1..=shifts as i64)
        .into_par_iter()
        .map(|j| log_norm_along(&orbit, energy, j + 1, n) / n as f64)
        .collect();
    pairwise_sum(&values) / shifts as f64
}

/// Shift average compared with `L_n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ShiftAverageReport {
    pub average: f64,
    pub reference: LyapunovEstimate,
    /// `C/n` for one frequency, `C n^{-1/2}` for two.
    pub tolerance: f64,
    pub deviation: f64,
    /// Whether `J > n^{2A}` (d = 1) or `J > n^{2A+5}` (d = 2) holds.
    pub shifts_sufficient: bool,
    pub within: bool,
}

/// Compares [`shift_average`] with the dense-grid `L_n`. `constant`
/// defaults to [`growth_constant`].
pub fn shift_average_check(
    omega: &Frequency,
    theta: &Phase,
    energy: f64,
    n: usize,
    shifts: usize,
    v: &TrigPotential,
    constant: Option<f64>,
) -> ShiftAverageReport {
    let average = shift_average(omega, theta, energy, n, shifts, v);
    let reference = lyapunov_default(omega, energy, n, v);
    let c = constant.unwrap_or_else(|| growth_constant(v, energy));
    let (tolerance, needed) = if v.dim() == 1 {
        (c / n as f64, (n as f64).powf(2.0 * omega.dio_a()))
    } else {
        (c / (n as f64).sqrt(), (n as f64).powf(2.0 * omega.dio_a() + 5.0))
    };
    let deviation = (average - reference.value).abs();
    ShiftAverageReport {
        average,
        reference,
        tolerance,
        deviation,
        shifts_sufficient: shifts as f64 > needed,
        within: deviation <= tolerance,
    }
}

/// Largest excess of `n⁻¹ log‖M_n(θ)‖` over `L_n` on a θ-grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct UpperBoundReport {
    pub n: usize,
    /// `max(0, max_θ φ(θ) − L_n)`.
    pub excess: f64,
    pub argmax: Phase,
    pub l_n: LyapunovEstimate,
    pub sigma: f64,
    /// The reference curve `n^{-σ}`.
    pub reference: f64,
}

pub fn upper_bound_check(
    omega: &Frequency,
    energy: f64,
    n: usize,
    v: &TrigPotential,
    theta_grid: &[Phase],
    sigma: f64,
) -> UpperBoundReport {
    assert!(!theta_grid.is_empty(), "θ-grid must be nonempty");
    let l_n = lyapunov_default(omega, energy, n, v);
    let values = phi_values(omega, energy, n, v, theta_grid);
    let (idx, max) = values
        .iter()
        .copied()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .expect("nonempty grid");
    UpperBoundReport {
        n,
        excess: (max - l_n.value).max(0.0),
        argmax: theta_grid[idx],
        l_n,
        sigma,
        reference: (n as f64).powf(-sigma),
    }
}
