//! Finite-box localization diagnostics: eigensystems of `A_Λ`, exponential
//! profiles of eigenvectors, resonance scans, and the window bound that
//! turns Green's function decay into eigenvector decay.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::greens::{build_operator, green_solve_op, FiniteOperator, Interval, SINGULAR_FLOOR};
use crate::lyapunov::lyapunov_default;
use crate::model::{Frequency, LogScalar, Phase, TrigPotential};
use crate::stats::{fit_line, pairwise_sum};
use crate::transfer::cocycle;
use crate::{Error, Result};

/// An eigenpair of `A_Λ` with unit-norm vector indexed by offset into `Λ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenPair {
    pub energy: f64,
    pub vector: Vec<f64>,
    pub interval: Interval,
}

impl EigenPair {
    /// `ξ_k` at absolute site `k`, zero outside the box.
    pub fn at(&self, k: i64) -> f64 {
        if self.interval.contains(k) {
            self.vector[(k - self.interval.lo) as usize]
        } else {
            0.0
        }
    }

    /// `‖(A_Λ − E)ξ‖₂`.
    pub fn residual(&self, op: &FiniteOperator) -> f64 {
        let r = self.residual_vector(op);
        r.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn residual_vector(&self, op: &FiniteOperator) -> Vec<f64> {
        assert_eq!(op.interval, self.interval);
        op.apply(&self.vector)
            .iter()
            .zip(&self.vector)
            .map(|(a, x)| a - self.energy * x)
            .collect()
    }

    /// CSV rows `index, abs, log_abs`.
    pub fn write_profile<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(["index", "abs", "log_abs"]).map_err(io)?;
        for (k, x) in self.interval.sites().zip(&self.vector) {
            w.write_record([k.to_string(), x.abs().to_string(), x.abs().ln().to_string()])
                .map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Implicit QL with Wilkinson shifts on a symmetric tridiagonal matrix.
/// `d` (diagonal) is overwritten with the eigenvalues in ascending order;
/// `z`, if given, receives the eigenvectors column-major (`z[i·n + k]` is
/// component `k` of vector `i`).
fn tql2(d: &mut [f64], off: &[f64], mut z: Option<&mut Vec<f64>>) {
    let n = d.len();
    if n == 0 {
        return;
    }
    let mut e = vec![0.0; n];
    e[..n - 1].copy_from_slice(&off[..n - 1]);
    if let Some(z) = z.as_deref_mut() {
        z.clear();
        z.resize(n * n, 0.0);
        for i in 0..n {
            z[i * n + i] = 1.0;
        }
    }
    let eps = f64::EPSILON;
    let (mut f, mut tst1) = (0.0f64, 0.0f64);
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n - 1 && e[m].abs() > eps * tst1 {
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                assert!(iter < 200, "tridiagonal QL failed to converge");
                let g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().skip(l + 2) {
                    *di -= h;
                }
                f += h;
                p = d[m];
                let (mut c, mut c2, mut c3) = (1.0f64, 1.0f64, 1.0f64);
                let el1 = e[l + 1];
                let (mut s, mut s2) = (0.0f64, 0.0f64);
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    let g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    if let Some(z) = z.as_deref_mut() {
                        let (a, b) = z.split_at_mut((i + 1) * n);
                        let zi = &mut a[i * n..];
                        let zi1 = &mut b[..n];
                        for k in 0..n {
                            let h = zi1[k];
                            zi1[k] = s * zi[k] + c * h;
                            zi[k] = c * zi[k] - s * h;
                        }
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d[a].total_cmp(&d[b]));
    let sorted: Vec<f64> = order.iter().map(|&i| d[i]).collect();
    d.copy_from_slice(&sorted);
    if let Some(z) = z {
        let mut out = vec![0.0; n * n];
        for (dst, &src) in order.iter().enumerate() {
            out[dst * n..(dst + 1) * n].copy_from_slice(&z[src * n..(src + 1) * n]);
        }
        *z = out;
    }
}

/// Eigenvalues of `A_Λ` in ascending order.
pub fn eigenvalues(op: &FiniteOperator) -> Vec<f64> {
    let mut d = op.diagonal.clone();
    tql2(&mut d, &vec![1.0; op.len()], None);
    d
}

/// Full eigendecomposition of `A_Λ`, energies ascending. Each vector is
/// scaled to unit norm with its largest component positive.
pub fn eigensystem(interval: Interval, omega: &Frequency, theta: &Phase, v: &TrigPotential) -> Vec<EigenPair> {
    eigensystem_op(&build_operator(interval, omega, theta, v))
}

pub fn eigensystem_op(op: &FiniteOperator) -> Vec<EigenPair> {
    let n = op.len();
    let mut d = op.diagonal.clone();
    let mut z = Vec::new();
    tql2(&mut d, &vec![1.0; n], Some(&mut z));
    d.iter()
        .enumerate()
        .map(|(i, &energy)| {
            let mut vector = z[i * n..(i + 1) * n].to_vec();
            let norm = vector.iter().map(|x| x * x).sum::<f64>().sqrt();
            let peak = vector
                .iter()
                .copied()
                .max_by(|a, b| a.abs().total_cmp(&b.abs()))
                .unwrap_or(1.0);
            let s = peak.signum() / norm;
            for x in &mut vector {
                *x *= s;
            }
            EigenPair {
                energy,
                vector,
                interval: op.interval,
            }
        })
        .collect()
}

/// Exponential fit of an eigenvector around its peak.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayProfile {
    /// Site of the largest `|ξ_k|`.
    pub center: i64,
    /// `max(0, −slope)` of `log|ξ_k|` against `|k − center|`.
    pub rate: f64,
    pub r2: f64,
    /// ℓ² mass at distance greater than `tail_radius` from the center.
    pub tail_mass: f64,
    pub points: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileOptions {
    /// The fit runs over the stretch around the center where `|ξ_k|` stays above this.
    pub floor: f64,
    /// Sites within this distance of the center are excluded.
    pub core: usize,
    pub tail_radius: usize,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        ProfileOptions {
            floor: 1e-14,
            core: 5,
            tail_radius: 20,
        }
    }
}

pub fn decay_profile(pair: &EigenPair) -> DecayProfile {
    decay_profile_with(pair, &ProfileOptions::default())
}

pub fn decay_profile_with(pair: &EigenPair, opts: &ProfileOptions) -> DecayProfile {
    let (imax, _) = pair
        .vector
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .expect("nonempty eigenvector");
    let center = pair.interval.lo + imax as i64;
    // Contiguous run above the floor on each side; isolated values at the
    // floor are solver noise, not part of the profile.
    let above = |i: &usize| pair.vector[*i].abs() > opts.floor;
    let hi = (imax..pair.vector.len()).take_while(above).last().unwrap_or(imax);
    let lo = (0..=imax).rev().take_while(above).last().unwrap_or(imax);
    let pts: Vec<(f64, f64)> = (lo..=hi)
        .filter(|&i| i.abs_diff(imax) > opts.core)
        .map(|i| (i.abs_diff(imax) as f64, pair.vector[i].abs().ln()))
        .collect();
    let tail: Vec<f64> = pair
        .interval
        .sites()
        .zip(&pair.vector)
        .filter(|(k, _)| (k - center).unsigned_abs() as usize > opts.tail_radius)
        .map(|(_, x)| x * x)
        .collect();
    let tail_mass = pairwise_sum(&tail);
    let spread = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max)
        - pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    match fit_line(pts.iter().copied()) {
        Some(fit) => DecayProfile {
            center,
            rate: (-fit.slope).max(0.0),
            // A flat profile carries no decay to explain.
            r2: if spread < 1e-12 { 0.0 } else { fit.r2 },
            tail_mass,
            points: fit.points,
        },
        None => DecayProfile {
            center,
            rate: 0.0,
            r2: 0.0,
            tail_mass,
            points: pts.len(),
        },
    }
}

/// Summary of the profiles of every eigenvector of a box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizationSummary {
    #[serde(rename = "box")]
    pub interval: Interval,
    pub lambda: f64,
    /// Percentage of eigenvectors with `rate ≥ rate_min` and `r2 ≥ r2_min`.
    pub pct_localized: f64,
    pub median_rate: f64,
    pub rate_min: f64,
    pub r2_min: f64,
    pub count: usize,
}

pub fn summarize(pairs: &[EigenPair], lambda: f64, rate_min: f64, r2_min: f64) -> Result<LocalizationSummary> {
    let first = pairs.first().ok_or_else(|| Error::EmptyResult("no eigenpairs".into()))?;
    let profiles: Vec<DecayProfile> = pairs.par_iter().map(decay_profile).collect();
    let good = profiles
        .iter()
        .filter(|p| p.rate >= rate_min && p.r2 >= r2_min)
        .count();
    let mut rates: Vec<f64> = profiles.iter().map(|p| p.rate).collect();
    rates.sort_by(f64::total_cmp);
    let median_rate = if rates.len() % 2 == 1 {
        rates[rates.len() / 2]
    } else {
        0.5 * (rates[rates.len() / 2 - 1] + rates[rates.len() / 2])
    };
    Ok(LocalizationSummary {
        interval: first.interval,
        lambda,
        pct_localized: 100.0 * good as f64 / pairs.len() as f64,
        median_rate,
        rate_min,
        r2_min,
        count: pairs.len(),
    })
}

/// The `count` eigenpairs with the largest decay rate (among fits with
/// `r2 ≥ r2_min`) whose center admits a window of scale `n_big` in the box.
pub fn most_localized(pairs: &[EigenPair], n_big: i64, r2_min: f64, count: usize) -> Vec<(usize, DecayProfile)> {
    let mut ranked: Vec<(usize, DecayProfile)> = pairs
        .par_iter()
        .map(decay_profile)
        .enumerate()
        .filter(|(i, p)| {
            let iv = pairs[*i].interval;
            p.r2 >= r2_min
                && (iv.contains(p.center + 2 * n_big + 1) || iv.contains(p.center - 2 * n_big - 1))
                && iv.contains(p.center + n_big / 2 - 1)
                && iv.contains(p.center - n_big / 2 + 1)
        })
        .collect();
    ranked.sort_by(|a, b| b.1.rate.total_cmp(&a.1.rate).then(a.0.cmp(&b.0)));
    ranked.truncate(count);
    ranked
}

/// Outcome of [`resonance_scan`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResonanceScan {
    /// First `n₀` with `‖G_{[−n₀,n₀]}‖_HS > C^n`.
    pub crossing: Option<usize>,
    /// `n log C`.
    pub log_threshold: f64,
    /// `(n₀, log‖G_{[−n₀,n₀]}‖_HS)` up to the crossing; `+∞` for a singular box.
    pub log_norms: Vec<(usize, f64)>,
}

/// `log‖G‖_HS` via log-sum-exp over the entries.
pub fn log_hs_norm(op: &FiniteOperator, energy: f64) -> Result<f64> {
    let g = green_solve_op(op, energy, SINGULAR_FLOOR)?;
    let max = g.log_sup();
    let s: Vec<f64> = g.entries().iter().map(|e| (2.0 * (e.log_mag() - max)).exp()).collect();
    Ok(max + 0.5 * pairwise_sum(&s).ln())
}

/// Scans `n₀ = 1..=n0_max` for the first box `[−n₀, n₀]` whose resolvent
/// exceeds `C^n` in Hilbert–Schmidt norm. A singular box counts as a crossing.
pub fn resonance_scan(
    omega: &Frequency,
    theta: &Phase,
    energy: f64,
    n0_max: usize,
    base: f64,
    n: usize,
    v: &TrigPotential,
) -> Result<ResonanceScan> {
    if n0_max == 0 || !(base > 1.0) {
        return Err(Error::invalid("need n0_max >= 1 and C > 1"));
    }
    let log_threshold = n as f64 * base.ln();
    let mut log_norms = Vec::new();
    for n0 in 1..=n0_max {
        let op = build_operator(Interval::new(-(n0 as i64), n0 as i64), omega, theta, v);
        let log_hs = match log_hs_norm(&op, energy) {
            Ok(x) => x,
            Err(Error::SingularEnergy { .. }) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        log_norms.push((n0, log_hs));
        if log_hs > log_threshold {
            return Ok(ResonanceScan {
                crossing: Some(n0),
                log_threshold,
                log_norms,
            });
        }
    }
    Ok(ResonanceScan {
        crossing: None,
        log_threshold,
        log_norms,
    })
}

/// Result of [`window_bound_check`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowBound {
    pub window: Interval,
    /// Whether `|ξ_k| ≤ |G(k,N/2)||ξ_{N/2−1}| + |G(k,2N)||ξ_{2N+1}| + Σ_m |G(k,m)||r_m|`
    /// holds at every `k` of the window (`r` is the eigen-residual).
    pub two_term_holds: bool,
    /// Largest `|ξ_k − ξ_k^{rebuilt}|`, where the rebuilt value comes from
    /// the boundary terms and the residual.
    pub identity_error: f64,
    /// `log|ξ_{center±N}/ξ_center| + (δ/3)N`; nonpositive when the decay claim holds.
    pub decay_margin: f64,
    pub decay_holds: bool,
    /// `max log|G(n₁,n₂)| + δ|n₁−n₂|` over the window: the additive slack
    /// needed for `|G| < e^{−δ|n₁−n₂| + slack}`.
    pub green_slack: f64,
}

impl WindowBound {
    pub fn verified(&self) -> bool {
        self.two_term_holds && self.decay_holds
    }
}

/// Checks the window bound for an eigenvector of a larger box, with sites
/// measured from `center`: the window is `center + [N/2, 2N]`, or its mirror
/// image `center − [N/2, 2N]` when only that one fits inside the box. The
/// decay claim `|ξ_{center±N}| ≤ e^{−(δ/3)N}` is normalized by `ξ_center`.
pub fn window_bound_check(
    pair: &EigenPair,
    big: &FiniteOperator,
    center: i64,
    n_big: i64,
    delta: f64,
) -> Result<WindowBound> {
    if n_big < 2 {
        return Err(Error::invalid("N must be at least 2"));
    }
    let fits = |w: &Interval| pair.interval.contains(w.lo - 1) && pair.interval.contains(w.hi + 1);
    let right = Interval::new(center + n_big / 2, center + 2 * n_big);
    let left = Interval::new(center - 2 * n_big, center - n_big / 2);
    let (window, probe) = if fits(&right) {
        (right, center + n_big)
    } else if fits(&left) {
        (left, center - n_big)
    } else {
        return Err(Error::invalid(format!(
            "box {} cannot hold a window of scale {n_big} beside site {center}",
            pair.interval
        )));
    };
    let op = FiniteOperator {
        interval: window,
        diagonal: big.diagonal[(window.lo - big.interval.lo) as usize..=(window.hi - big.interval.lo) as usize].to_vec(),
    };
    let g = green_solve_op(&op, pair.energy, SINGULAR_FLOOR)?;
    let r = pair.residual_vector(big);
    let res = |m: i64| r[(m - big.interval.lo) as usize];
    let (left, right) = (pair.at(window.lo - 1), pair.at(window.hi + 1));
    let mut two_term_holds = true;
    let mut identity_error = 0.0f64;
    for k in window.sites() {
        let gl = g.get(k, window.lo);
        let gr = g.get(k, window.hi);
        let bulk: Vec<LogScalar> = window.sites().map(|m| g.get(k, m) * LogScalar::from_f64(res(m))).collect();
        let rebuilt = LogScalar::sum(
            [-(gl * LogScalar::from_f64(left)), -(gr * LogScalar::from_f64(right))]
                .into_iter()
                .chain(bulk.iter().copied()),
        );
        let bound = LogScalar::sum(
            [gl.abs() * LogScalar::from_f64(left.abs()), gr.abs() * LogScalar::from_f64(right.abs())]
                .into_iter()
                .chain(bulk.iter().map(|b| b.abs())),
        );
        let xi = pair.at(k);
        identity_error = identity_error.max((xi - rebuilt.to_f64()).abs());
        if xi.abs() > bound.to_f64() * (1.0 + 1e-8) + 1e-300 {
            two_term_holds = false;
        }
    }
    let decay_margin = (pair.at(probe).abs() / pair.at(center).abs()).ln() + delta / 3.0 * n_big as f64;
    let mut green_slack = f64::NEG_INFINITY;
    for a in window.sites() {
        for b in window.sites() {
            green_slack = green_slack.max(g.get(a, b).log_mag() + delta * (a - b).abs() as f64);
        }
    }
    Ok(WindowBound {
        window,
        two_term_holds,
        identity_error,
        decay_margin,
        decay_holds: decay_margin <= 0.0,
        green_slack,
    })
}

/// Result of [`growth_pair_search`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthPair {
    /// First `j ∈ (J, 2J]` at which both one-sided exponents are within
    /// `tolerance` of `L_{n₁}`.
    pub j: Option<i64>,
    pub l_n1: f64,
    /// `J⁻¹ Σ_{j ∈ (J,2J]} [φ(jω) + φ((−j−n₁)ω)]`, compared with `2L_{n₁}`.
    pub pair_average: f64,
    pub tolerance: f64,
}

pub fn growth_pair_search(
    omega: &Frequency,
    theta: &Phase,
    energy: f64,
    n1: usize,
    big_j: usize,
    v: &TrigPotential,
    tolerance: f64,
) -> Result<GrowthPair> {
    if big_j == 0 || n1 == 0 {
        return Err(Error::invalid("need J >= 1 and n1 >= 1"));
    }
    let l_n1 = lyapunov_default(omega, energy, n1, v).value;
    let phi = |shift: i64| cocycle(omega, &theta.shifted(omega, shift as f64), energy, n1, v).exponent();
    let js: Vec<i64> = (big_j as i64 + 1..=2 * big_j as i64).collect();
    let pairs: Vec<(f64, f64)> = js.par_iter().map(|&j| (phi(j), phi(-j - n1 as i64))).collect();
    let sums: Vec<f64> = pairs.iter().map(|(a, b)| a + b).collect();
    let pair_average = pairwise_sum(&sums) / big_j as f64;
    let j = js
        .iter()
        .zip(&pairs)
        .find(|(_, (a, b))| (a - l_n1).abs() <= tolerance && (b - l_n1).abs() <= tolerance)
        .map(|(j, _)| *j);
    Ok(GrowthPair {
        j,
        l_n1,
        pair_average,
        tolerance,
    })
}
