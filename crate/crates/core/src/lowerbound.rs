//! Lower bounds for the Lyapunov exponent at large coupling: the
//! complexification argument in one variable, and the multiscale recursion
//! that carries positivity from an initial scale to a ladder of larger ones.
//!
//! The recursion runs on a user-supplied schedule of scales. The jump
//! `N = ⌈exp(n^{σ/10})⌉` between scales in the asymptotic argument is far
//! beyond reach, so every ladder checks the per-step inequalities on the
//! given schedule and says so in its `schedule_note`.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ldt::{deviation_measure_with, DeviationOptions};
use crate::lyapunov::{lyapunov_n, Sampler};
use crate::model::{Frequency, ScaledMatrix2, TrigPotential};
use crate::stats::{binomial_se, fit_line};
use crate::{Error, Result};

/// Grids for the strip searches of [`epsilon_gap`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapGrid {
    pub x_points: usize,
    pub y_points: usize,
    /// Relative change at which grid doubling stops.
    pub stability: f64,
    pub max_doublings: usize,
}

impl Default for GapGrid {
    fn default() -> Self {
        GapGrid {
            x_points: 512,
            y_points: 16,
            stability: 0.01,
            max_doublings: 6,
        }
    }
}

/// A height `y₀ ∈ (δ/2, δ)` at which `inf_x |v(x + iy₀) − E₁| ≥ ε`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonGap {
    pub delta: f64,
    pub y0: f64,
    pub epsilon: f64,
    /// The target attaining the smallest gap.
    #[serde(rename = "E1")]
    pub e1: f64,
    pub x_points: usize,
    pub y_points: usize,
}

/// Minimum of a 1-periodic function: grid scan, then golden-section search
/// in the bracket around the best grid point.
fn periodic_min(f: impl Fn(f64) -> f64 + Sync, points: usize) -> (f64, f64) {
    let h = 1.0 / points as f64;
    let vals: Vec<f64> = (0..points).into_par_iter().map(|i| f(i as f64 * h)).collect();
    let (i, &best) = vals
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("nonempty grid");
    let (mut a, mut b) = ((i as f64 - 1.0) * h, (i as f64 + 1.0) * h);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut c, mut d) = (b - g * (b - a), a + g * (b - a));
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..60 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let (x, val) = if fc < fd { (c, fc) } else { (d, fd) };
    if val < best {
        (x.rem_euclid(1.0), val)
    } else {
        (i as f64 * h, best)
    }
}

/// `inf_x |v(x + iy) − E₁|` on an `x`-grid with local refinement.
pub fn strip_gap(v: &TrigPotential, y: f64, e1: f64, x_points: usize) -> f64 {
    periodic_min(
        |x| (v.eval_complex_unchecked(&[Complex64::new(x, y)]) - e1).norm(),
        x_points,
    )
    .1
}

fn gap_once(v: &TrigPotential, delta: f64, e1: f64, nx: usize, ny: usize) -> (f64, f64) {
    let dy = 0.5 * delta / ny as f64;
    (0..ny)
        .map(|j| {
            let y = 0.5 * delta + (j as f64 + 0.5) * dy;
            (y, strip_gap(v, y, e1, nx))
        })
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .expect("nonempty y grid")
}

/// `min over targets of sup_{δ/2<y<δ} inf_x |v(x + iy) − E₁|`, with both
/// grids doubled until `ε` changes by less than `grid.stability`.
pub fn epsilon_gap(v: &TrigPotential, delta: f64, targets: &[f64], grid: &GapGrid) -> Result<EpsilonGap> {
    if v.is_constant() {
        return Err(Error::PotentialConstant);
    }
    if v.dim() != 1 {
        return Err(Error::invalid("the strip gap is defined for one-variable potentials"));
    }
    if !(delta > 0.0 && delta < v.strip_width()) {
        return Err(Error::invalid(format!(
            "need 0 < delta < strip width {}, got {delta}",
            v.strip_width()
        )));
    }
    if targets.is_empty() {
        return Err(Error::invalid("need at least one target"));
    }
    let solve = |nx: usize, ny: usize| -> EpsilonGap {
        targets
            .iter()
            .map(|&e1| {
                let (y0, epsilon) = gap_once(v, delta, e1, nx, ny);
                EpsilonGap {
                    delta,
                    y0,
                    epsilon,
                    e1,
                    x_points: nx,
                    y_points: ny,
                }
            })
            .min_by(|a, b| a.epsilon.total_cmp(&b.epsilon))
            .expect("nonempty targets")
    };
    let (mut nx, mut ny) = (grid.x_points.max(8), grid.y_points.max(2));
    let mut current = solve(nx, ny);
    for _ in 0..grid.max_doublings {
        nx *= 2;
        ny *= 2;
        let next = solve(nx, ny);
        let stable = (next.epsilon - current.epsilon).abs() <= grid.stability * current.epsilon.abs();
        current = next;
        if stable {
            break;
        }
    }
    if !(current.epsilon > 0.0) {
        return Err(Error::HypothesisUnmet {
            inequality: "sup_y inf_x |v(x + iy) - E1| > 0",
            detail: format!("gap {} at E1 = {}", current.epsilon, current.e1),
        });
    }
    Ok(current)
}

/// Growth of the cocycle of `λv` along the line `Im z = y₀`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexGrowth {
    pub n: usize,
    pub lambda: f64,
    pub energy: f64,
    pub y0: f64,
    /// `inf_x |λv(x + iy₀) − E|` on the grid.
    pub line_gap: f64,
    /// `log‖M_n(ω, iy₀, E)‖`.
    pub log_norm: f64,
    /// `log‖M_n‖ − n log(λε − 1)`.
    pub margin: f64,
    /// Smallest margin over every prefix `1..=n`.
    pub min_margin: f64,
    /// Whether `|u_j| ≥ |v_j|` and `|u_j| > (λε − 1)|u_{j−1}|` held at every step.
    pub per_step_ok: bool,
    pub first_violation: Option<usize>,
}

/// Checks `‖M_n(ω, iy₀, E)‖ > (λε − 1)^n` for the coupling-`λ` cocycle,
/// tracking `(u_j, v_j) = M_j e₁` step by step.
#[allow(clippy::too_many_arguments)]
pub fn complexified_growth_check(
    lambda: f64,
    v: &TrigPotential,
    omega: &Frequency,
    energy: f64,
    y0: f64,
    epsilon: f64,
    n: usize,
) -> Result<ComplexGrowth> {
    if v.dim() != 1 {
        return Err(Error::invalid("complexified growth is defined for one-variable potentials"));
    }
    if n == 0 {
        return Err(Error::invalid("n must be positive"));
    }
    let le = lambda * epsilon;
    if !(le > 100.0) {
        return Err(Error::HypothesisUnmet {
            inequality: "lambda * epsilon > 100",
            detail: format!("lambda * epsilon = {le}"),
        });
    }
    let lv = v.clone().with_coupling(v.coupling() * lambda);
    let limit = lv.strip_width() / 10.0;
    if !(y0.abs() < limit) {
        return Err(Error::StripExceeded { im: y0.abs(), limit });
    }
    let line_gap = strip_gap(&lv, y0, energy, 4096);
    // ε is itself a grid infimum, so equality is the expected case.
    if !(line_gap >= le * (1.0 - 1e-9)) {
        return Err(Error::HypothesisUnmet {
            inequality: "inf_x |lambda v(x + i y0) - E| > lambda * epsilon",
            detail: format!("infimum {line_gap} vs {le}"),
        });
    }
    let orbit = lv.complex_orbit(&[Complex64::new(0.0, y0)], omega);
    let e = Complex64::new(energy, 0.0);
    let rate = (le - 1.0).ln();
    let mut m = ScaledMatrix2::<Complex64>::identity();
    // (u, v) kept with |u| = 1 and the log of the true |u| accumulated.
    let (mut u, mut w) = (Complex64::ONE, Complex64::ZERO);
    let mut min_margin = f64::INFINITY;
    let mut first_violation = None;
    for j in 1..=n {
        let x = orbit.value(j as i64) - e;
        m.left_step(x);
        let (nu, nw) = (x * u + w, -u);
        let growth = nu.norm();
        if first_violation.is_none() && !(growth >= nw.norm() && growth > le - 1.0) {
            first_violation = Some(j);
        }
        u = nu / growth;
        w = nw / growth;
        min_margin = min_margin.min(m.log_op_norm() - j as f64 * rate);
    }
    let log_norm = m.log_op_norm();
    Ok(ComplexGrowth {
        n,
        lambda,
        energy,
        y0,
        line_gap,
        log_norm,
        margin: log_norm - n as f64 * rate,
        min_margin,
        per_step_ok: first_violation.is_none(),
        first_violation,
    })
}

/// Certified lower bound for `L` from the harmonic-measure argument.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HermanBound {
    pub lambda: f64,
    /// `100 ε^{−100}`.
    pub lambda0: f64,
    /// `(δ/16) log λ`.
    pub bound: f64,
    /// `(δ/4)((1 − Cδ/ρ) log λ − 2 log(1/ε))`.
    pub intermediate: f64,
    /// `log(1 + ‖λv‖∞)`, an upper bound for every `L_n`.
    pub ceiling: f64,
    pub checks: Vec<HermanCheck>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HermanCheck {
    #[serde(rename = "E")]
    pub energy: f64,
    pub n: usize,
    pub l_n: f64,
    pub std_error: f64,
    pub holds: bool,
}

impl HermanBound {
    pub fn verified(&self) -> bool {
        self.checks.iter().all(|c| c.holds)
    }
}

/// Constant in the harmonic-measure correction term `Cδ/ρ`.
pub const HARMONIC_CONSTANT: f64 = 10.0;

/// Computes the bound for the coupling-`λ` potential and checks it against
/// `L_n` at each energy.
#[allow(clippy::too_many_arguments)]
pub fn herman_style_bound(
    lambda: f64,
    v: &TrigPotential,
    omega: &Frequency,
    delta: f64,
    epsilon: f64,
    energies: &[f64],
    n: usize,
) -> Result<HermanBound> {
    if !(epsilon > 0.0 && delta > 0.0) {
        return Err(Error::invalid("need epsilon > 0 and delta > 0"));
    }
    let lambda0 = 100.0 * epsilon.powi(-100);
    if !(lambda > lambda0) {
        return Err(Error::HypothesisUnmet {
            inequality: "lambda > lambda0 = 100 epsilon^-100",
            detail: format!("lambda = {lambda:e}, lambda0 = {lambda0:e}"),
        });
    }
    let log_l = lambda.ln();
    let lv = v.clone().with_coupling(v.coupling() * lambda);
    let rho = v.strip_width();
    let bound = delta / 16.0 * log_l;
    let intermediate = delta / 4.0 * ((1.0 - HARMONIC_CONSTANT * delta / rho) * log_l - 2.0 * (1.0 / epsilon).ln());
    let ceiling = (1.0 + lv.sup_norm()).ln();
    let checks = energies
        .iter()
        .map(|&e| {
            let est = lyapunov_n(omega, e, n, &lv, &Sampler::default_for(lv.dim(), n));
            HermanCheck {
                energy: e,
                n,
                l_n: est.value,
                std_error: est.std_error,
                holds: est.value >= bound,
            }
        })
        .collect();
    Ok(HermanBound {
        lambda,
        lambda0,
        bound,
        intermediate,
        ceiling,
        checks,
    })
}

/// `2^{lo}, 2^{lo+1}, …, 2^{hi}`.
pub fn dyadic_deltas(lo_exp: i32, hi_exp: i32) -> Vec<f64> {
    (lo_exp..=hi_exp).map(|k| 2f64.powi(k)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SublevelPoint {
    pub delta: f64,
    pub measure: f64,
    pub std_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SublevelRow {
    #[serde(rename = "E1")]
    pub e1: f64,
    pub points: Vec<SublevelPoint>,
    /// Slope of `log(measure)` against `log δ`; absent with fewer than two
    /// nonzero measures.
    pub c0: Option<f64>,
    pub r2: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SublevelFit {
    pub rows: Vec<SublevelRow>,
    pub worst_c0: Option<f64>,
    pub samples: usize,
}

/// Monte Carlo measure of `{θ : |v₀(θ) − E₁| < δ}` over a δ-ladder and the
/// fitted exponent `c₀` for each target.
pub fn sublevel_measure(
    v0: &TrigPotential,
    targets: &[f64],
    deltas: &[f64],
    samples: usize,
    seed: u64,
) -> Result<SublevelFit> {
    if samples < 10_000 {
        return Err(Error::invalid(format!("need at least 10000 samples, got {samples}")));
    }
    if let Some(d) = deltas.iter().find(|d| !(**d > 0.0 && **d < 1.0)) {
        return Err(Error::invalid(format!("delta {d} outside (0, 1)")));
    }
    let phases = Sampler::MonteCarlo { samples, seed }.phases(v0.dim());
    let values: Vec<f64> = phases.par_iter().map(|p| v0.eval(p)).collect();
    let rows: Vec<SublevelRow> = targets
        .iter()
        .map(|&e1| {
            let points: Vec<SublevelPoint> = deltas
                .iter()
                .map(|&delta| {
                    let hits = values.iter().filter(|x| (**x - e1).abs() < delta).count();
                    let measure = hits as f64 / samples as f64;
                    SublevelPoint {
                        delta,
                        measure,
                        std_error: binomial_se(measure, samples),
                    }
                })
                .collect();
            let fit = fit_line(
                points
                    .iter()
                    .filter(|p| p.measure > 0.0)
                    .map(|p| (p.delta.ln(), p.measure.ln())),
            )
            .filter(|f| f.points >= 2);
            SublevelRow {
                e1,
                points,
                c0: fit.map(|f| f.slope),
                r2: fit.map(|f| f.r2),
            }
        })
        .collect();
    let worst_c0 = rows.iter().filter_map(|r| r.c0).min_by(f64::total_cmp);
    Ok(SublevelFit {
        rows,
        worst_c0,
        samples,
    })
}

/// Outcome of [`initial_scale_bound`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialScale {
    pub lambda: f64,
    pub n1: usize,
    pub c0: f64,
    /// `log(1/n₁) − log(n₁ λ^{−c₀/100})`.
    pub hypothesis_margin: f64,
    /// Sampled measure of `{θ : min_j |v₀(θ + jω) − E/λ| < λ^{−1/100}}`.
    pub sublevel_fraction: f64,
    pub l_n1: f64,
    pub std_error: f64,
    /// `(97/100) log λ`.
    pub target: f64,
    pub margin: f64,
}

/// Initial-scale estimate for `λv₀`: the coupling hypothesis with the fitted
/// `c₀`, the sampled sublevel bound, then `L_{n₁} ≥ (97/100) log λ`.
pub fn initial_scale_bound(
    lambda: f64,
    v0: &TrigPotential,
    omega: &Frequency,
    energy: f64,
    n1: usize,
    samples: usize,
    seed: u64,
) -> Result<InitialScale> {
    if n1 == 0 || !(lambda > 1.0) {
        return Err(Error::invalid("need n1 >= 1 and lambda > 1"));
    }
    let range: Vec<f64> = Sampler::Grid { points: 256 }
        .phases(v0.dim())
        .iter()
        .map(|p| v0.eval(p))
        .collect();
    let (lo, hi) = range
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let mut targets: Vec<f64> = (0..=16).map(|i| lo + (hi - lo) * i as f64 / 16.0).collect();
    targets.push(energy / lambda);
    let fit = sublevel_measure(v0, &targets, &dyadic_deltas(-10, -4), samples, seed)?;
    let c0 = fit
        .worst_c0
        .ok_or_else(|| Error::EmptyResult("no sublevel exponent could be fitted".into()))?;
    let n1f = n1 as f64;
    let hypothesis_margin = -n1f.ln() - (n1f.ln() - c0 / 100.0 * lambda.ln());
    if !(hypothesis_margin > 0.0) {
        return Err(Error::HypothesisUnmet {
            inequality: "n1 lambda^(-c0/100) < 1/n1",
            detail: format!("c0 = {c0:.4}, margin {hypothesis_margin:.4} at lambda = {lambda:e}, n1 = {n1}"),
        });
    }
    let radius = lambda.powf(-0.01);
    let e1 = energy / lambda;
    let phases = Sampler::MonteCarlo { samples, seed: seed ^ 0x5eed }.phases(v0.dim());
    let bad = phases
        .par_iter()
        .filter(|p| (1..=n1).any(|j| (v0.eval(&p.shifted(omega, j as f64)) - e1).abs() < radius))
        .count();
    let sublevel_fraction = bad as f64 / samples as f64;
    if !(sublevel_fraction < 1.0 / n1f) {
        return Err(Error::HypothesisUnmet {
            inequality: "mes{min_j |v0(theta + j omega) - E/lambda| < lambda^(-1/100)} < 1/n1",
            detail: format!("sampled fraction {sublevel_fraction:.4} vs {:.4}", 1.0 / n1f),
        });
    }
    let lv = v0.clone().with_coupling(v0.coupling() * lambda);
    let est = lyapunov_n(omega, energy, n1, &lv, &Sampler::default_for(v0.dim(), n1));
    let target = 0.97 * lambda.ln();
    let margin = est.value - target;
    if !(margin >= 0.0) {
        return Err(Error::HypothesisUnmet {
            inequality: "L_n1 >= (97/100) log lambda",
            detail: format!("L_n1 = {:.4}, target {target:.4}", est.value),
        });
    }
    Ok(InitialScale {
        lambda,
        n1,
        c0,
        hypothesis_margin,
        sublevel_fraction,
        l_n1: est.value,
        std_error: est.std_error,
        target,
        margin,
    })
}

/// `ρ = log(1 + ‖v‖∞) / (L_n (log n)^{1/2})`.
pub fn scale_ratio(l_n: f64, log_norm: f64, n: usize) -> f64 {
    log_norm / (l_n * (n as f64).ln().sqrt())
}

/// The descent `n, [ρn], [ρ²n], …` while above `n^{1/2}`, plus the first
/// scale at or below it.
pub fn descent_scales(n: usize, rho: f64) -> Vec<usize> {
    let floor = (n as f64).sqrt();
    let mut out = vec![n];
    let mut m = n;
    while m as f64 > floor {
        let next = (rho * m as f64).floor() as usize;
        if next == 0 || next >= m {
            break;
        }
        out.push(next);
        m = next;
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleSelection {
    pub n0: usize,
    /// Scales visited, ending at `n₀`.
    pub descent: Vec<usize>,
    /// Smallest `(1+ρ)L_{n₀} + log(1+‖v‖∞)·ρn₀/m − L_m` over tabulated `m ≤ n₀`.
    pub worst_margin: f64,
    pub all_verified: bool,
}

/// First `n₀` in the descent with `L_{[ρn₀]} < (1+ρ)L_{n₀}`, then a check of
/// `L_m < (1+ρ)L_{n₀} + log(1+‖v‖∞)·ρn₀/m` for every tabulated `m ≤ n₀`.
pub fn scale_selection(table: &BTreeMap<usize, f64>, n: usize, rho: f64, log_norm: f64) -> Result<ScaleSelection> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::invalid(format!("scale ratio {rho} outside (0, 1)")));
    }
    let floor = (n as f64).sqrt();
    let mut m = n;
    let mut descent = vec![n];
    let n0 = loop {
        if m as f64 <= floor {
            return Err(Error::DescentExhausted { reached: m, floor });
        }
        let next = (rho * m as f64).floor() as usize;
        let (Some(&l_m), Some(&l_next)) = (table.get(&m), table.get(&next)) else {
            return Err(Error::DescentExhausted { reached: m, floor });
        };
        if l_next < (1.0 + rho) * l_m {
            break m;
        }
        m = next;
        descent.push(m);
    };
    let l0 = table[&n0];
    let worst_margin = table
        .range(1..=n0)
        .map(|(&mm, &l)| (1.0 + rho) * l0 + log_norm * rho * n0 as f64 / mm as f64 - l)
        .fold(f64::INFINITY, f64::min);
    Ok(ScaleSelection {
        n0,
        descent,
        worst_margin,
        all_verified: worst_margin > 0.0,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecursionOptions {
    /// LDT exponent for the sampled bad-set report.
    pub sigma: f64,
    /// θ-quadrature for each `L_{n_j}`; the module default when absent.
    pub sampler: Option<Sampler>,
    /// Samples for the bad-set report; `0` skips it.
    pub ldt_samples: usize,
    pub seed: u64,
    /// Return `GateFailed` at the first failing gate instead of recording it.
    pub enforce_gate: bool,
    /// Return `DropExceeded` instead of recording it.
    pub enforce_drop: bool,
}

impl Default for RecursionOptions {
    fn default() -> Self {
        RecursionOptions {
            sigma: 0.1,
            sampler: None,
            ldt_samples: 0,
            seed: 0,
            enforce_gate: true,
            enforce_drop: true,
        }
    }
}

/// One scale of the ladder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rung {
    pub n: usize,
    #[serde(rename = "L")]
    pub l: f64,
    pub std_error: f64,
    pub rho: f64,
    pub gate_ok: bool,
    /// `10³ ρ log(1 + ‖v‖∞)`.
    pub gate_required: f64,
    /// `allowed + 3σ − (L_{n_{j−1}} − L_{n_j})` for the step into this scale.
    pub drop_margin: Option<f64>,
    /// `L_{n_j} − 3σ − ∏(1 − 2000/(log n_{j'})^{1/2})₊ L_{n₁}`.
    pub product_margin: Option<f64>,
    pub ldt_fraction: Option<f64>,
    /// `e^{−n^{σ/5}}`.
    pub ldt_reference: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleLadder {
    pub lambda: f64,
    #[serde(rename = "E")]
    pub energy: f64,
    pub sigma: f64,
    /// `log(1 + ‖λv₀‖∞)`.
    pub log_norm: f64,
    pub rungs: Vec<Rung>,
    pub min_l: f64,
    /// `½ log λ`.
    pub half_log_lambda: f64,
    /// `min_j (L_{n_j} − 3σ_j) − ½ log λ`.
    pub final_margin: f64,
    pub initial_scale: Option<InitialScale>,
    pub initial_scale_note: Option<String>,
    pub schedule_note: String,
}

impl ScaleLadder {
    pub fn gates_ok(&self) -> bool {
        self.rungs.iter().all(|r| r.gate_ok)
    }

    pub fn drops_ok(&self) -> bool {
        self.rungs.iter().filter_map(|r| r.drop_margin).all(|m| m >= 0.0)
    }

    pub fn products_ok(&self) -> bool {
        self.rungs.iter().filter_map(|r| r.product_margin).all(|m| m >= 0.0)
    }
}

/// Runs the ladder on `schedule` for `λv₀` at energy `E`.
pub fn multiscale_recursion(
    lambda: f64,
    v0: &TrigPotential,
    omega: &Frequency,
    energy: f64,
    schedule: &[usize],
    opts: &RecursionOptions,
) -> Result<ScaleLadder> {
    if schedule.is_empty() || schedule.windows(2).any(|w| w[0] >= w[1]) || schedule[0] < 2 {
        return Err(Error::invalid("schedule must be strictly increasing, starting at n >= 2"));
    }
    if !(lambda > 1.0) {
        return Err(Error::invalid("lambda must exceed 1"));
    }
    let lv = v0.clone().with_coupling(v0.coupling() * lambda);
    let log_norm = (1.0 + lv.sup_norm()).ln();
    let log_l = lambda.ln();
    let (initial_scale, initial_scale_note) = match initial_scale_bound(lambda, v0, omega, energy, schedule[0], 10_000, opts.seed) {
        Ok(s) => (Some(s), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let mut rungs: Vec<Rung> = Vec::with_capacity(schedule.len());
    let mut product = 1.0f64;
    for (j, &n) in schedule.iter().enumerate() {
        let sampler = opts.sampler.unwrap_or_else(|| Sampler::default_for(lv.dim(), n));
        let est = lyapunov_n(omega, energy, n, &lv, &sampler);
        let rho = scale_ratio(est.value, log_norm, n);
        let gate_required = 1e3 * rho * log_norm;
        let gate_ok = est.value > gate_required;
        if opts.enforce_gate && !gate_ok {
            return Err(Error::GateFailed {
                n,
                l: est.value,
                required: gate_required,
            });
        }
        let (drop_margin, product_margin) = match rungs.last() {
            Some(prev) => {
                let drop = prev.l - est.value;
                let allowed = 1000.0 / (prev.n as f64).ln().sqrt() * log_l;
                let slack = 3.0 * (prev.std_error.powi(2) + est.std_error.powi(2)).sqrt();
                if opts.enforce_drop && drop > allowed + slack {
                    return Err(Error::DropExceeded {
                        from: prev.n,
                        to: n,
                        drop,
                        allowed,
                    });
                }
                // Factors below zero carry no information; they clamp to 0.
                product *= (1.0 - 2000.0 / (prev.n as f64).ln().sqrt()).max(0.0);
                let slack_j = 3.0 * est.std_error;
                (Some(allowed + slack - drop), Some(est.value + slack_j - product * rungs[0].l))
            }
            None => (None, None),
        };
        let ldt_fraction = if opts.ldt_samples > 0 {
            let dopts = DeviationOptions {
                reference: Some(est.value),
                ..DeviationOptions::normalized(&lv)
            };
            Some(deviation_measure_with(omega, energy, n, opts.sigma, &lv, opts.ldt_samples, opts.seed + j as u64, &dopts)?.fraction)
        } else {
            None
        };
        rungs.push(Rung {
            n,
            l: est.value,
            std_error: est.std_error,
            rho,
            gate_ok,
            gate_required,
            drop_margin,
            product_margin,
            ldt_fraction,
            ldt_reference: (-(n as f64).powf(opts.sigma / 5.0)).exp(),
        });
    }
    let min_l = rungs.iter().map(|r| r.l).fold(f64::INFINITY, f64::min);
    let final_margin = rungs
        .iter()
        .map(|r| r.l - 3.0 * r.std_error)
        .fold(f64::INFINITY, f64::min)
        - 0.5 * log_l;
    Ok(ScaleLadder {
        lambda,
        energy,
        sigma: opts.sigma,
        log_norm,
        rungs,
        min_l,
        half_log_lambda: 0.5 * log_l,
        final_margin,
        initial_scale,
        initial_scale_note,
        schedule_note: "scales follow the supplied schedule, not N = ceil(exp(n^(sigma/10))); per-step inequalities are checked on it".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{PI, TAU};

    fn cos_wide() -> TrigPotential {
        TrigPotential::cosine(1.0).with_strip_width(2.0)
    }

    #[test]
    fn gap_of_cosine_matches_hyperbolic_floor() {
        let delta = 0.1;
        let g = epsilon_gap(&cos_wide(), delta, &[0.0], &GapGrid::default()).unwrap();
        assert!(g.y0 > delta / 2.0 && g.y0 < delta);
        // |cos(2π(x+iy))| ≥ sinh(2πy), with equality at x = 1/4.
        let exact = (TAU * g.y0).sinh();
        assert!((g.epsilon - exact).abs() < 1e-6 * exact, "{} vs {exact}", g.epsilon);
        assert!(g.epsilon >= (PI * delta).sinh());
    }

    #[test]
    fn gap_shrinks_with_more_targets() {
        let v = cos_wide();
        let one = epsilon_gap(&v, 0.1, &[0.0], &GapGrid::default()).unwrap();
        let two = epsilon_gap(&v, 0.1, &[0.0, 0.5, 1.0], &GapGrid::default()).unwrap();
        assert!(two.epsilon <= one.epsilon);
        let finer = epsilon_gap(
            &v,
            0.1,
            &[0.5],
            &GapGrid {
                x_points: 2048,
                y_points: 64,
                ..GapGrid::default()
            },
        )
        .unwrap();
        let coarse = epsilon_gap(&v, 0.1, &[0.5], &GapGrid::default()).unwrap();
        assert!((finer.epsilon - coarse.epsilon).abs() < 0.01 * coarse.epsilon);
    }

    #[test]
    fn gap_rejects_constant_and_bad_delta() {
        let c = TrigPotential::constant(1, 2.0);
        assert!(matches!(epsilon_gap(&c, 0.001, &[0.0], &GapGrid::default()), Err(Error::PotentialConstant)));
        assert!(epsilon_gap(&TrigPotential::cosine(1.0), 0.5, &[0.0], &GapGrid::default()).is_err());
    }

    #[test]
    fn complexified_growth_at_threshold() {
        let v = cos_wide();
        let w = Frequency::golden();
        let g = epsilon_gap(&v, 0.1, &[0.0], &GapGrid::default()).unwrap();
        let lambda = 101.0 / g.epsilon;
        let r = complexified_growth_check(lambda, &v, &w, 0.0, g.y0, g.epsilon, 200).unwrap();
        assert!(r.margin >= 0.0 && r.min_margin >= 0.0);
        assert!(r.per_step_ok);
        // One step: the top-left entry alone exceeds λε − 1.
        let one = complexified_growth_check(lambda, &v, &w, 0.0, g.y0, g.epsilon, 1).unwrap();
        assert!(one.log_norm >= (lambda * g.epsilon - 1.0).ln());
        let low = complexified_growth_check(50.0 / g.epsilon, &v, &w, 0.0, g.y0, g.epsilon, 10);
        assert!(matches!(low, Err(Error::HypothesisUnmet { .. })));
    }

    #[test]
    fn complexified_growth_large_coupling() {
        let v = cos_wide();
        let g = epsilon_gap(&v, 0.1, &[0.0], &GapGrid::default()).unwrap();
        let r = complexified_growth_check(1e6, &v, &Frequency::golden(), 0.0, g.y0, g.epsilon, 1000).unwrap();
        assert!(r.min_margin >= 0.0 && r.per_step_ok);
    }

    #[test]
    fn herman_bound_guard_and_soundness() {
        let v = cos_wide();
        let w = Frequency::golden();
        let delta = 0.1;
        let g = epsilon_gap(&v, delta, &[0.0, 0.5], &GapGrid::default()).unwrap();
        let lambda0 = 100.0 * g.epsilon.powi(-100);
        assert!(matches!(
            herman_style_bound(lambda0, &v, &w, delta, g.epsilon, &[0.0], 100),
            Err(Error::HypothesisUnmet { .. })
        ));
        let h = herman_style_bound(10.0 * lambda0, &v, &w, delta, g.epsilon, &[0.0, 3.0], 500).unwrap();
        assert!(h.verified());
        assert!(h.bound <= h.ceiling);
        for c in &h.checks {
            assert!(h.bound <= c.l_n + 3.0 * c.std_error);
        }
    }

    #[test]
    fn sublevel_exponents_of_cosine() {
        let v = TrigPotential::cosine(1.0);
        let fit = sublevel_measure(&v, &[1.0, 0.0, 3.0], &dyadic_deltas(-10, -4), 400_000, 7).unwrap();
        let crit = fit.rows[0].c0.unwrap();
        let reg = fit.rows[1].c0.unwrap();
        assert!((0.45..=0.55).contains(&crit), "{crit}");
        assert!((0.9..=1.1).contains(&reg), "{reg}");
        assert!(fit.rows[2].points.iter().all(|p| p.measure == 0.0));
        assert_eq!(fit.rows[2].c0, None);
        // Dense-grid oracle: exact measure arccos(1 − δ)/π at the critical value.
        for p in &fit.rows[0].points {
            let exact = (1.0 - p.delta).acos() / PI;
            assert!((p.measure - exact).abs() < 4.0 * p.std_error + 1e-4);
        }
        assert!(sublevel_measure(&v, &[0.0], &[0.5], 100, 0).is_err());
    }

    #[test]
    fn initial_scale_gate() {
        let v = TrigPotential::cosine(1.0);
        let w = Frequency::golden();
        let e = initial_scale_bound(1e6, &v, &w, 0.0, 50, 20_000, 1).unwrap_err();
        assert!(matches!(e, Error::HypothesisUnmet { inequality, .. } if inequality.starts_with("n1 lambda")));
        let ok = initial_scale_bound(1e130, &v, &w, 0.0, 2, 20_000, 1).unwrap();
        assert!(ok.margin >= 0.0 && ok.sublevel_fraction < 0.5);
    }

    #[test]
    fn scale_selection_cases() {
        let (n, rho) = (10_000usize, 0.4);
        let scales = descent_scales(n, rho);
        let constant: BTreeMap<usize, f64> = scales.iter().map(|&m| (m, 1.0)).collect();
        let s = scale_selection(&constant, n, rho, 2.0).unwrap();
        assert_eq!(s.n0, n);
        let mut forced = constant.clone();
        let bumped = (1.0 + rho) * 1.0 + 0.01;
        for &m in &scales[1..] {
            forced.insert(m, bumped);
        }
        let s = scale_selection(&forced, n, rho, 2.0).unwrap();
        assert_eq!(s.n0, scales[1]);
        assert_eq!(s.descent, vec![n, scales[1]]);
        let growing: BTreeMap<usize, f64> = scales.iter().map(|&m| (m, 1.0 / m as f64)).collect();
        assert!(matches!(scale_selection(&growing, n, rho, 2.0), Err(Error::DescentExhausted { .. })));
        assert!(matches!(
            scale_selection(&BTreeMap::new(), n, rho, 2.0),
            Err(Error::DescentExhausted { .. })
        ));
    }

    #[test]
    fn scale_selection_on_measured_table() {
        let v = TrigPotential::cosine(50.0);
        let w = Frequency::golden();
        let n = 2000;
        let log_norm = (1.0 + v.sup_norm()).ln();
        let l_n = lyapunov_n(&w, 0.0, n, &v, &Sampler::Grid { points: 1024 }).value;
        let rho = scale_ratio(l_n, log_norm, n);
        assert!(rho < 0.5);
        let table: BTreeMap<usize, f64> = descent_scales(n, rho)
            .into_iter()
            .map(|m| (m, lyapunov_n(&w, 0.0, m, &v, &Sampler::Grid { points: 1024 }).value))
            .collect();
        let s = scale_selection(&table, n, rho, log_norm).unwrap();
        assert!(s.n0 > 45);
    }

    #[test]
    fn ladder_gate_and_degenerate_schedule() {
        let v = TrigPotential::cosine(1.0);
        let w = Frequency::golden();
        let e = multiscale_recursion(1.0 + 1e-9, &v, &w, 0.0, &[100, 200], &RecursionOptions::default()).unwrap_err();
        assert!(matches!(e, Error::GateFailed { n: 100, .. }));
        let opts = RecursionOptions {
            enforce_gate: false,
            ldt_samples: 1000,
            ..RecursionOptions::default()
        };
        let one = multiscale_recursion(50.0, &v, &w, 0.0, &[100], &opts).unwrap();
        assert_eq!(one.rungs.len(), 1);
        assert_eq!(one.rungs[0].drop_margin, None);
        assert!(one.initial_scale_note.is_some());
        let two = multiscale_recursion(50.0, &v, &w, 0.0, &[100, 200, 400], &opts).unwrap();
        assert!(two.drops_ok() && two.products_ok());
        assert!(two.final_margin > 0.0);
        assert!(!two.gates_ok());
        assert!(multiscale_recursion(50.0, &v, &w, 0.0, &[200, 100], &opts).is_err());
    }
}
