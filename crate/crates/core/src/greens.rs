//! Finite-volume operators and their Green's functions
//!
//! `A_Λ = R_Λ A R_Λ` with `A_{jk} = v(θ + jω)δ_{jk} + δ_{j,k±1}` and
//! `G_Λ = (A_Λ − E)⁻¹`. Two independent routes compute `G_Λ`:
//!
//! * [`green_cramer`]: Cramer's rule with the minor factorization
//!   `G(n₁,n₂) = (−1)^{n₁+n₂} det(A_{[a,n₁)} − E) det(A_{(n₂,b]} − E) / det(A_Λ − E)`;
//! * [`green_solve`]: continued-fraction (LU-type) sweeps from both ends.
//!
//! Entries are kept as [`LogScalar`]s; a plain inverse underflows long
//! before the boxes used here. [`pave`] assembles the Green's function of a
//! long interval from window Green's functions with the resolvent identity.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{Frequency, LogScalar, Phase, TrigPotential};
use crate::stats::fit_line;
use crate::transfer::{box_diagonal, cocycle, prefix_determinants, suffix_determinants};
use crate::{Error, Result};

/// Default singular-energy floor on `log|det(A_Λ − E)|`.
pub const SINGULAR_FLOOR: f64 = -700.0;

/// A nonempty integer interval `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "[i64; 2]", into = "[i64; 2]")]
pub struct Interval {
    pub lo: i64,
    pub hi: i64,
}

impl Interval {
    /// # Panics
    /// If `lo > hi`.
    pub fn new(lo: i64, hi: i64) -> Self {
        assert!(lo <= hi, "empty interval [{lo}, {hi}]");
        Interval { lo, hi }
    }

    pub fn len(&self) -> usize {
        (self.hi - self.lo + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, k: i64) -> bool {
        self.lo <= k && k <= self.hi
    }

    pub fn contains_interval(&self, other: &Interval) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }

    pub fn shifted(&self, m: i64) -> Self {
        Interval::new(self.lo + m, self.hi + m)
    }

    pub fn sites(&self) -> std::ops::RangeInclusive<i64> {
        self.lo..=self.hi
    }

    fn offset(&self, k: i64) -> usize {
        debug_assert!(self.contains(k), "{k} outside {self}");
        (k - self.lo) as usize
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

impl TryFrom<[i64; 2]> for Interval {
    type Error = String;
    fn try_from([lo, hi]: [i64; 2]) -> std::result::Result<Self, String> {
        if lo > hi {
            return Err(format!("empty interval [{lo}, {hi}]"));
        }
        Ok(Interval { lo, hi })
    }
}

impl From<Interval> for [i64; 2] {
    fn from(i: Interval) -> [i64; 2] {
        [i.lo, i.hi]
    }
}

/// `A_Λ` restricted to an interval: diagonal `v(θ + jω)`, unit off-diagonals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiniteOperator {
    pub interval: Interval,
    pub diagonal: Vec<f64>,
}

impl FiniteOperator {
    pub fn len(&self) -> usize {
        self.diagonal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diagonal.is_empty()
    }

    /// `(A_Λ x)_j` for `x` indexed by offset into the interval.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len();
        assert_eq!(x.len(), n);
        (0..n)
            .map(|i| {
                let mut y = self.diagonal[i] * x[i];
                if i > 0 {
                    y += x[i - 1];
                }
                if i + 1 < n {
                    y += x[i + 1];
                }
                y
            })
            .collect()
    }

    /// Row-major dense matrix.
    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.len();
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            m[i * n + i] = self.diagonal[i];
            if i + 1 < n {
                m[i * n + i + 1] = 1.0;
                m[(i + 1) * n + i] = 1.0;
            }
        }
        m
    }
}

pub fn build_operator(interval: Interval, omega: &Frequency, theta: &Phase, v: &TrigPotential) -> FiniteOperator {
    FiniteOperator {
        interval,
        diagonal: box_diagonal((interval.lo, interval.hi), omega, theta, v),
    }
}

/// `G_Λ(n₁, n₂)` in signed-log form, row-major over `Λ × Λ`.
#[derive(Clone, Debug, PartialEq)]
pub struct GreenMatrix {
    pub interval: Interval,
    pub energy: f64,
    entries: Vec<LogScalar>,
}

impl GreenMatrix {
    pub fn from_entries(interval: Interval, energy: f64, entries: Vec<LogScalar>) -> Self {
        assert_eq!(entries.len(), interval.len() * interval.len());
        GreenMatrix {
            interval,
            energy,
            entries,
        }
    }

    pub fn size(&self) -> usize {
        self.interval.len()
    }

    /// Entry at absolute sites `n₁, n₂ ∈ Λ`.
    pub fn get(&self, n1: i64, n2: i64) -> LogScalar {
        let n = self.size();
        self.entries[self.interval.offset(n1) * n + self.interval.offset(n2)]
    }

    pub fn entries(&self) -> &[LogScalar] {
        &self.entries
    }

    /// Largest `log|G(n₁,n₂)|`.
    pub fn log_sup(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.log_mag())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Max relative asymmetry `|G(n₁,n₂) − G(n₂,n₁)| / max`.
    pub fn symmetry_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for a in self.interval.sites() {
            for b in a + 1..=self.interval.hi {
                worst = worst.max(self.get(a, b).rel_diff(self.get(b, a)));
            }
        }
        worst
    }

    /// `max |((A_Λ − E) G − I)(i, j)|` over columns whose entries are all
    /// below `e^{700}`, evaluated in plain floating point.
    pub fn residual(&self, op: &FiniteOperator) -> f64 {
        assert_eq!(op.interval, self.interval);
        let n = self.size();
        let mut worst = 0.0f64;
        for j in 0..n {
            let col: Vec<LogScalar> = (0..n).map(|i| self.entries[i * n + j]).collect();
            if col.iter().any(|e| e.log_mag() > 700.0) {
                continue;
            }
            let x: Vec<f64> = col.iter().map(|e| e.to_f64()).collect();
            let ax = op.apply(&x);
            for i in 0..n {
                let r = ax[i] - self.energy * x[i] - if i == j { 1.0 } else { 0.0 };
                worst = worst.max(r.abs());
            }
        }
        worst
    }

    /// CSV triplets `n1, n2, sign, log_mag`.
    pub fn write_triplets<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(["n1", "n2", "sign", "log_mag"]).map_err(io)?;
        for a in self.interval.sites() {
            for b in self.interval.sites() {
                let g = self.get(a, b);
                w.write_record([a.to_string(), b.to_string(), g.sign().to_string(), g.log_mag().to_string()])
                    .map_err(io)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Minors of `A_Λ − E` for Cramer's rule, computed once per box.
#[derive(Clone, Debug)]
pub struct CramerTable {
    interval: Interval,
    energy: f64,
    prefix: Vec<LogScalar>,
    suffix: Vec<LogScalar>,
}

impl CramerTable {
    /// Fails with [`Error::SingularEnergy`] if `log|det(A_Λ − E)| < floor`.
    pub fn new(op: &FiniteOperator, energy: f64, floor: f64) -> Result<Self> {
        let prefix = prefix_determinants(&op.diagonal, energy);
        let suffix = suffix_determinants(&op.diagonal, energy);
        let det = prefix[op.len()];
        if det.is_zero() || det.log_mag() < floor {
            return Err(Error::SingularEnergy {
                log_det: det.log_mag(),
                floor,
            });
        }
        Ok(CramerTable {
            interval: op.interval,
            energy,
            prefix,
            suffix,
        })
    }

    pub fn det(&self) -> LogScalar {
        self.prefix[self.interval.len()]
    }

    /// `(n₁, n₂)`-minor product `det(A_{[a,n₁)} − E) det(A_{(n₂,b]} − E)`, `n₁ ≤ n₂`.
    pub fn minor(&self, n1: i64, n2: i64) -> LogScalar {
        let (i, j) = (self.interval.offset(n1.min(n2)), self.interval.offset(n1.max(n2)));
        self.prefix[i] * self.suffix[j + 1]
    }

    pub fn entry(&self, n1: i64, n2: i64) -> LogScalar {
        let (i, j) = (self.interval.offset(n1.min(n2)), self.interval.offset(n1.max(n2)));
        let g = self.minor(n1, n2) / self.det();
        if (i + j) % 2 == 1 {
            -g
        } else {
            g
        }
    }

    pub fn matrix(&self) -> GreenMatrix {
        let n = self.interval.len();
        let lo = self.interval.lo;
        let entries = (0..n * n)
            .map(|k| self.entry(lo + (k / n) as i64, lo + (k % n) as i64))
            .collect();
        GreenMatrix::from_entries(self.interval, self.energy, entries)
    }
}

/// `G_Λ(n₁, n₂)` by Cramer's rule.
#[allow(clippy::too_many_arguments)]
pub fn green_cramer(
    interval: Interval,
    omega: &Frequency,
    theta: &Phase,
    energy: f64,
    v: &TrigPotential,
    n1: i64,
    n2: i64,
) -> Result<LogScalar> {
    let op = build_operator(interval, omega, theta, v);
    Ok(CramerTable::new(&op, energy, SINGULAR_FLOOR)?.entry(n1, n2))
}

/// Right-hand side of the Cramer numerator bound
/// `|G(n₁,n₂)| ≤ ‖M_{n₁−a}(θ + (a−1)ω)‖ ‖M_{b−n₂}(θ + n₂ω)‖ / |det(A_Λ − E)|`
/// in log form, for `n₁ ≤ n₂` in `Λ = [a, b]`.
pub fn cramer_log_bound(
    interval: Interval,
    omega: &Frequency,
    theta: &Phase,
    energy: f64,
    v: &TrigPotential,
    n1: i64,
    n2: i64,
) -> f64 {
    let (n1, n2) = (n1.min(n2), n1.max(n2));
    let log_m = |start: i64, len: i64| {
        if len <= 0 {
            0.0
        } else {
            cocycle(omega, &theta.shifted(omega, start as f64), energy, len as usize, v).log_norm
        }
    };
    let op = build_operator(interval, omega, theta, v);
    let det = prefix_determinants(&op.diagonal, energy)[op.len()];
    log_m(interval.lo - 1, n1 - interval.lo) + log_m(n2, interval.hi - n2) - det.log_mag()
}

/// Full `G_Λ` from continued fractions swept in from both ends.
pub fn green_solve(interval: Interval, omega: &Frequency, theta: &Phase, energy: f64, v: &TrigPotential) -> Result<GreenMatrix> {
    green_solve_op(&build_operator(interval, omega, theta, v), energy, SINGULAR_FLOOR)
}

/// [`green_solve`] on a prepared operator.
///
/// With `g^R_k = 1/(a_k − E − g^R_{k+1})` and `g^L_k = 1/(a_k − E − g^L_{k−1})`,
/// `G(i,i) = 1/(a_i − E − g^L_{i−1} − g^R_{i+1})` and
/// `G(j,i) = G(i,i) ∏_{k=i+1}^{j} (−g^R_k)` for `j > i`. An exactly vanishing
/// denominator is replaced by `ε(|a_k − E| + 2)`.
pub fn green_solve_op(op: &FiniteOperator, energy: f64, floor: f64) -> Result<GreenMatrix> {
    let n = op.len();
    let d: Vec<f64> = op.diagonal.iter().map(|a| a - energy).collect();
    let guard = |x: f64, k: usize| {
        if x == 0.0 {
            f64::EPSILON * (d[k].abs() + 2.0)
        } else {
            x
        }
    };
    let mut gr = vec![0.0; n + 1];
    for k in (0..n).rev() {
        gr[k] = 1.0 / guard(d[k] - gr[k + 1], k);
    }
    let mut gl = vec![0.0; n + 1];
    for k in 0..n {
        let prev = if k == 0 { 0.0 } else { gl[k] };
        gl[k + 1] = 1.0 / guard(d[k] - prev, k);
    }
    let log_det = prefix_determinants(&op.diagonal, energy)[n].log_mag();
    if !(log_det >= floor) {
        return Err(Error::SingularEnergy { log_det, floor });
    }
    // gl[k + 1] holds g^L_k; cum[j] = Σ_{k<j} log|g^R_k|, neg[j] counts g^R_k > 0.
    let mut cum = vec![0.0; n + 1];
    let mut neg = vec![0u32; n + 1];
    for k in 0..n {
        cum[k + 1] = cum[k] + gr[k].abs().ln();
        neg[k + 1] = neg[k] + u32::from(gr[k] > 0.0);
    }
    let diag: Vec<LogScalar> = (0..n)
        .map(|i| {
            let left = gl[i];
            let right = if i + 1 < n { gr[i + 1] } else { 0.0 };
            LogScalar::from_f64(1.0 / guard(d[i] - left - right, i))
        })
        .collect();
    let mut entries = vec![LogScalar::ZERO; n * n];
    entries
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(j, row)| {
            for (i, slot) in row.iter_mut().enumerate() {
                let (lo, hi) = (i.min(j), i.max(j));
                let g = diag[lo];
                *slot = if lo == hi {
                    g
                } else {
                    let log_mag = g.log_mag() + cum[hi + 1] - cum[lo + 1];
                    let flips = neg[hi + 1] - neg[lo + 1];
                    let sign = if flips % 2 == 1 { -g.sign() } else { g.sign() };
                    LogScalar::new(sign, log_mag)
                };
            }
        });
    Ok(GreenMatrix::from_entries(op.interval, energy, entries))
}

/// Least-squares fit of `−log|G(n₁,n₂)|` against `|n₁ − n₂|`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub rate: f64,
    pub intercept: f64,
    /// RMS residual of the fit.
    pub residual: f64,
    pub r2: f64,
    pub pairs: usize,
}

/// Fits the off-diagonal decay over pairs with `|n₁ − n₂| ≥ min_sep`.
pub fn decay_fit(g: &GreenMatrix, min_sep: usize) -> Result<DecayFit> {
    if g.size() < 4 * min_sep.max(1) {
        return Err(Error::invalid(format!(
            "box of {} sites is too small for min_sep = {min_sep}",
            g.size()
        )));
    }
    let iv = g.interval;
    let pts = iv.sites().flat_map(|a| {
        iv.sites()
            .filter(move |&b| b - a >= min_sep as i64)
            .map(move |b| (a, b))
    });
    let fit = fit_line(
        pts.map(|(a, b)| ((b - a) as f64, -g.get(a, b).log_mag()))
            .filter(|(_, y)| y.is_finite()),
    )
    .ok_or_else(|| Error::EmptyResult("no usable pairs for decay fit".into()))?;
    Ok(DecayFit {
        rate: fit.slope,
        intercept: -fit.intercept,
        residual: fit.rms,
        r2: fit.r2,
        pairs: fit.points,
    })
}

/// Supplies window Green's functions to [`pave`].
pub trait WindowOracle: Sync {
    fn green(&self, window: Interval) -> Result<GreenMatrix>;
}

impl<F> WindowOracle for F
where
    F: Fn(Interval) -> Result<GreenMatrix> + Sync,
{
    fn green(&self, window: Interval) -> Result<GreenMatrix> {
        self(window)
    }
}

/// Windows solved directly with [`green_solve`].
pub struct DirectWindows<'a> {
    pub omega: &'a Frequency,
    pub theta: &'a Phase,
    pub energy: f64,
    pub v: &'a TrigPotential,
}

impl WindowOracle for DirectWindows<'_> {
    fn green(&self, window: Interval) -> Result<GreenMatrix> {
        green_solve(window, self.omega, self.theta, self.energy, self.v)
    }
}

/// Parameters for the large-scale bounds of the multiscale step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleStep {
    pub rho: f64,
    /// `L_{n₀}` at the window scale.
    pub l_n0: f64,
    /// `log(1 + ‖v‖∞)`.
    pub log_norm: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PaveOptions {
    /// Additive slack `β n` standing in for `o(n)`.
    pub beta: f64,
    pub max_sweeps: usize,
    /// Stop once no entry moves by more than this in log-magnitude.
    pub tolerance: f64,
    /// Minimal separation for the assembled decay fit; defaults to `n`.
    pub min_sep: Option<usize>,
    pub scale_step: Option<ScaleStep>,
}

impl Default for PaveOptions {
    fn default() -> Self {
        PaveOptions {
            beta: 0.1,
            max_sweeps: 500,
            tolerance: 1e-12,
            min_sep: None,
            scale_step: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleStepReport {
    /// `log(2 e^{7ρ n log(1+‖v‖∞)})`.
    pub log_sup_bound: f64,
    pub log_sup_observed: f64,
    pub sup_ok: bool,
    /// `γ = L_{n₀} − 70 ρ log(1+‖v‖∞)`.
    pub gamma: f64,
    /// `γ (1 − 300/n₀)`.
    pub refined_rate: f64,
    pub refined_ok: bool,
}

/// Paving certificate, serialized as JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PaveCertificate {
    /// Fitted decay rate of the assembled `G_I`.
    pub rate: f64,
    pub intercept: f64,
    pub windows_used: usize,
    /// Pairs `(n₁, n₂)` violating `|G_I| < e^{−(c/2)|n₁−n₂| + βn}` (at most 100 listed).
    pub failures: Vec<(i64, i64)>,
    pub failure_count: usize,
    pub window_rate: f64,
    pub rate_ok: bool,
    pub contraction: f64,
    pub sweeps: usize,
    pub scale_step: Option<ScaleStepReport>,
}

#[derive(Clone, Debug)]
pub struct Paving {
    pub green: GreenMatrix,
    pub certificate: PaveCertificate,
}

struct Site {
    window: usize,
    left: Option<(i64, i64)>,
    right: Option<(i64, i64)>,
}

/// Base window and its endpoint variants for site `x`: the start is snapped
/// to multiples of `n/10` from `I.lo`, then clipped into `I`.
fn candidate_windows(big: Interval, n: usize, x: i64) -> Vec<Interval> {
    let n_i = n as i64;
    let step = (n_i / 10).max(1);
    let snapped = big.lo + ((x - n_i / 2 - big.lo).max(0) / step) * step;
    let start = snapped.min(big.hi - n_i + 1).max(big.lo);
    let full = Interval::new(start, start + n_i - 1);
    let mut out = vec![full];
    if n >= 3 {
        out.push(Interval::new(full.lo, full.hi - 1));
        out.push(Interval::new(full.lo + 1, full.hi));
        out.push(Interval::new(full.lo + 1, full.hi - 1));
    }
    out
}

fn neighborhood(big: Interval, n: usize, x: i64) -> Interval {
    // {y ∈ I : |x − y| < n/10}
    let r = (n as f64 / 10.0).ceil() as i64 - 1;
    Interval::new((x - r).max(big.lo), (x + r).min(big.hi))
}

fn window_admissible(g: &GreenMatrix, c: f64, slack: f64) -> bool {
    let iv = g.interval;
    iv.sites().all(|a| {
        iv.sites()
            .all(|b| g.get(a, b).log_mag() < -c * (a - b).abs() as f64 + slack)
    })
}

/// Green's function of `big` assembled from size-`n` windows by the
/// resolvent identity
///
/// ```text
/// G_I(k₁,k₂) = G_W(k₁,k₂) χ_W(k₂) − Σ_{k₃ ∈ ∂W, k₃' ∈ I∖W, |k₃−k₃'| = 1} G_W(k₁,k₃) G_I(k₃',k₂)
/// ```
///
/// with `W = W(k₁)` an admissible window around `k₁`. Windows must contain
/// `{y : |k₁ − y| < n/10}` and satisfy `|G_W(n₁,n₂)| < e^{−c|n₁−n₂| + βn}`.
pub fn pave(big: Interval, n: usize, c: f64, oracle: &dyn WindowOracle, opts: &PaveOptions) -> Result<Paving> {
    if n < 2 || big.len() < n {
        return Err(Error::invalid(format!("need 2 <= n <= |I|, got n = {n}, |I| = {}", big.len())));
    }
    let slack = opts.beta * n as f64;
    let mut cache: HashMap<Interval, Option<GreenMatrix>> = HashMap::new();
    let candidates: Vec<Vec<Interval>> = big.sites().map(|x| candidate_windows(big, n, x)).collect();

    // Solve every base window, then the variants of sites whose base failed.
    let mut choice: Vec<Option<Interval>> = vec![None; big.len()];
    for round in 0..4 {
        let wanted: Vec<Interval> = {
            let mut w: Vec<Interval> = candidates
                .iter()
                .zip(&choice)
                .filter(|(_, ch)| ch.is_none())
                .filter_map(|(cands, _)| cands.get(round).copied())
                .filter(|w| !cache.contains_key(w))
                .collect();
            w.sort();
            w.dedup();
            w
        };
        let solved: Vec<(Interval, Option<GreenMatrix>)> = wanted
            .par_iter()
            .map(|&w| {
                let g = match oracle.green(w) {
                    Ok(g) => Some(g),
                    Err(Error::SingularEnergy { .. }) => None,
                    Err(e) => return Err(e),
                };
                Ok((w, g.filter(|g| window_admissible(g, c, slack))))
            })
            .collect::<Result<_>>()?;
        cache.extend(solved);
        for (x, (cands, ch)) in big.sites().zip(candidates.iter().zip(choice.iter_mut())) {
            if ch.is_some() {
                continue;
            }
            if let Some(&w) = cands.get(round) {
                if w.contains_interval(&neighborhood(big, n, x)) && matches!(cache.get(&w), Some(Some(_))) {
                    *ch = Some(w);
                }
            }
        }
    }
    let failed: Vec<i64> = big.sites().zip(&choice).filter(|(_, c)| c.is_none()).map(|(x, _)| x).collect();
    if !failed.is_empty() {
        return Err(Error::PavingFailed { sites: failed });
    }

    let mut windows: Vec<Interval> = choice.iter().map(|c| c.expect("checked")).collect::<Vec<_>>();
    windows.sort();
    windows.dedup();
    let index: HashMap<Interval, usize> = windows.iter().enumerate().map(|(i, w)| (*w, i)).collect();
    let greens: Vec<&GreenMatrix> = windows
        .iter()
        .map(|w| cache[w].as_ref().expect("admissible"))
        .collect();
    let sites: Vec<Site> = choice
        .iter()
        .map(|c| {
            let w = c.expect("checked");
            Site {
                window: index[&w],
                left: (w.lo > big.lo).then_some((w.lo, w.lo - 1)),
                right: (w.hi < big.hi).then_some((w.hi, w.hi + 1)),
            }
        })
        .collect();

    let contraction = big
        .sites()
        .zip(&sites)
        .map(|(x, s)| {
            let g = greens[s.window];
            LogScalar::sum(s.left.iter().chain(&s.right).map(|&(k3, _)| g.get(x, k3).abs())).to_f64()
        })
        .fold(0.0, f64::max);
    if contraction >= 0.5 {
        return Err(Error::IterationDiverged { factor: contraction });
    }

    let len = big.len();
    let columns: Vec<(Vec<LogScalar>, usize)> = big
        .sites()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&k2| solve_column(big, k2, &sites, &greens, opts))
        .collect();
    let sweeps = columns.iter().map(|(_, s)| *s).max().unwrap_or(0);
    let mut entries = vec![LogScalar::ZERO; len * len];
    for (j, (col, _)) in columns.iter().enumerate() {
        for (i, g) in col.iter().enumerate() {
            entries[i * len + j] = *g;
        }
    }
    let green = GreenMatrix::from_entries(big, oracle_energy(&greens), entries);

    let min_sep = opts.min_sep.unwrap_or(n).min(len / 4);
    let fit = decay_fit(&green, min_sep.max(1)).ok();
    let mut failures = Vec::new();
    let mut failure_count = 0;
    for a in big.sites() {
        for b in big.sites() {
            if green.get(a, b).log_mag() >= -(c / 2.0) * (a - b).abs() as f64 + slack {
                failure_count += 1;
                if failures.len() < 100 {
                    failures.push((a, b));
                }
            }
        }
    }
    let rate = fit.map_or(f64::NAN, |f| f.rate);
    let scale_step = opts.scale_step.map(|s| {
        let log_sup_bound = std::f64::consts::LN_2 + 7.0 * s.rho * n as f64 * s.log_norm;
        let log_sup_observed = green.log_sup();
        let gamma = s.l_n0 - 70.0 * s.rho * s.log_norm;
        let refined_rate = gamma * (1.0 - 300.0 / n as f64);
        ScaleStepReport {
            log_sup_bound,
            log_sup_observed,
            sup_ok: log_sup_observed < log_sup_bound,
            gamma,
            refined_rate,
            refined_ok: rate >= refined_rate,
        }
    });
    let certificate = PaveCertificate {
        rate,
        intercept: fit.map_or(f64::NAN, |f| f.intercept),
        windows_used: windows.len(),
        failures,
        failure_count,
        window_rate: c,
        rate_ok: rate >= c / 2.0,
        contraction,
        sweeps,
        scale_step,
    };
    Ok(Paving { green, certificate })
}

fn oracle_energy(greens: &[&GreenMatrix]) -> f64 {
    greens.first().map_or(f64::NAN, |g| g.energy)
}

/// Gauss–Seidel sweeps (alternating direction) for one column `k₂` of `G_I`.
fn solve_column(big: Interval, k2: i64, sites: &[Site], greens: &[&GreenMatrix], opts: &PaveOptions) -> (Vec<LogScalar>, usize) {
    let len = big.len();
    let rhs: Vec<LogScalar> = big
        .sites()
        .zip(sites)
        .map(|(x, s)| {
            let g = greens[s.window];
            if g.interval.contains(k2) {
                g.get(x, k2)
            } else {
                LogScalar::ZERO
            }
        })
        .collect();
    let mut x = rhs.clone();
    let update = |x: &mut [LogScalar], i: usize| -> f64 {
        let k1 = big.lo + i as i64;
        let s = &sites[i];
        let g = greens[s.window];
        let mut acc = rhs[i];
        for &(k3, k3p) in s.left.iter().chain(&s.right) {
            acc = acc - g.get(k1, k3) * x[(k3p - big.lo) as usize];
        }
        let change = acc.log_distance(x[i]);
        x[i] = acc;
        change
    };
    for sweep in 1..=opts.max_sweeps {
        let mut change = 0.0f64;
        if sweep % 2 == 1 {
            for i in 0..len {
                change = change.max(update(&mut x, i));
            }
        } else {
            for i in (0..len).rev() {
                change = change.max(update(&mut x, i));
            }
        }
        if change <= opts.tolerance {
            return (x, sweep);
        }
    }
    (x, opts.max_sweeps)
}

/// Smallest fitted decay rate over the size-`n` windows of `big` starting at
/// multiples of `n/10`. Singular windows are skipped.
pub fn measured_window_rate(
    big: Interval,
    n: usize,
    omega: &Frequency,
    theta: &Phase,
    energy: f64,
    v: &TrigPotential,
) -> Result<f64> {
    if n < 2 || big.len() < n {
        return Err(Error::invalid(format!("need 2 <= n <= |I|, got n = {n}, |I| = {}", big.len())));
    }
    let step = (n as i64 / 10).max(1);
    let min_sep = 12.min(n / 4).max(1);
    let starts: Vec<i64> = (0..).map(|k| big.lo + k * step).take_while(|s| s + n as i64 - 1 <= big.hi).collect();
    let rates: Vec<Option<f64>> = starts
        .par_iter()
        .map(|&s| {
            let g = green_solve(Interval::new(s, s + n as i64 - 1), omega, theta, energy, v).ok()?;
            decay_fit(&g, min_sep).ok().map(|f| f.rate)
        })
        .collect();
    rates
        .into_iter()
        .flatten()
        .reduce(f64::min)
        .ok_or_else(|| Error::EmptyResult("no regular window admits a decay fit".into()))
}

/// Convenience wrapper: [`pave`] with windows from [`green_solve`].
#[allow(clippy::too_many_arguments)]
pub fn pave_direct(
    big: Interval,
    n: usize,
    omega: &Frequency,
    theta: &Phase,
    energy: f64,
    v: &TrigPotential,
    c: f64,
    opts: &PaveOptions,
) -> Result<Paving> {
    let oracle = DirectWindows {
        omega,
        theta,
        energy,
        v,
    };
    pave(big, n, c, &oracle, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn golden() -> Frequency {
        Frequency::golden()
    }

    fn dense_inverse(op: &FiniteOperator, e: f64) -> DMatrix<f64> {
        let n = op.len();
        let m = DMatrix::from_row_slice(n, n, &op.to_dense()) - DMatrix::identity(n, n) * e;
        m.try_inverse().expect("invertible")
    }

    #[test]
    fn operator_construction() {
        let op = build_operator(Interval::new(1, 1), &golden(), &Phase::scalar(0.0), &TrigPotential::zero(1));
        assert_eq!(op.diagonal, vec![0.0]);
        let w = golden();
        let op = build_operator(Interval::new(1, 3), &w, &Phase::scalar(0.0), &TrigPotential::cosine(5.0));
        for (j, a) in op.diagonal.iter().enumerate() {
            let expect = 5.0 * (2.0 * std::f64::consts::PI * (j + 1) as f64 * w.components()[0]).cos();
            assert!((a - expect).abs() < 1e-13);
        }
    }

    #[test]
    fn shift_covariance() {
        let w = golden();
        let v = TrigPotential::cosine(3.0);
        let th = Phase::scalar(0.21);
        let a = build_operator(Interval::new(5, 20), &w, &th, &v);
        let b = build_operator(Interval::new(0, 15), &w, &th.shifted(&w, 5.0), &v);
        for (x, y) in a.diagonal.iter().zip(&b.diagonal) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn scalar_and_two_site_cases() {
        let w = golden();
        let v = TrigPotential::cosine(2.0);
        let th = Phase::scalar(0.3);
        let g = green_cramer(Interval::new(4, 4), &w, &th, 0.5, &v, 4, 4).unwrap();
        let a = v.eval(&th.shifted(&w, 4.0));
        assert!(g.rel_diff(LogScalar::from_f64(1.0 / (a - 0.5))) < 1e-14);

        let zero = TrigPotential::zero(1);
        let g = green_solve(Interval::new(0, 1), &w, &th, 3.0, &zero).unwrap();
        let expect = [-3.0 / 8.0, -1.0 / 8.0, -1.0 / 8.0, -3.0 / 8.0];
        for (k, e) in expect.iter().enumerate() {
            assert!((g.entries()[k].to_f64() - e).abs() < 1e-15);
        }
    }

    #[test]
    fn matches_dense_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = golden();
        for _ in 0..30 {
            let n = rng.random_range(1..=12);
            let v = TrigPotential::cosine(rng.random_range(0.5..8.0));
            let th = Phase::scalar(rng.random());
            let e = rng.random_range(-5.0..5.0);
            let iv = Interval::new(0, n - 1);
            let op = build_operator(iv, &w, &th, &v);
            let dense = dense_inverse(&op, e);
            let cr = CramerTable::new(&op, e, SINGULAR_FLOOR).unwrap().matrix();
            let so = green_solve_op(&op, e, SINGULAR_FLOOR).unwrap();
            for i in 0..n {
                for j in 0..n {
                    let d = LogScalar::from_f64(dense[(i as usize, j as usize)]);
                    assert!(cr.get(i, j).rel_diff(d) < 1e-8, "cramer ({i},{j})");
                    assert!(so.get(i, j).rel_diff(d) < 1e-8, "solve ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn minor_factorization_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w = golden();
        for _ in 0..20 {
            let n = rng.random_range(2..=10usize);
            let v = TrigPotential::cosine(rng.random_range(0.5..5.0));
            let th = Phase::scalar(rng.random());
            let e = rng.random_range(-4.0..4.0);
            let op = build_operator(Interval::new(0, n as i64 - 1), &w, &th, &v);
            let tab = CramerTable::new(&op, e, SINGULAR_FLOOR).unwrap();
            let full = DMatrix::from_row_slice(n, n, &op.to_dense()) - DMatrix::identity(n, n) * e;
            for i in 0..n {
                for j in i..n {
                    let minor = full.clone().remove_row(i).remove_column(j).determinant();
                    let mine = tab.minor(i as i64, j as i64).abs().to_f64();
                    assert!((mine - minor.abs()).abs() <= 1e-9 * minor.abs().max(1e-300) + 1e-12, "({i},{j})");
                }
            }
        }
    }

    #[test]
    fn numerator_bound() {
        let w = golden();
        let v = TrigPotential::cosine(4.0);
        let th = Phase::scalar(0.17);
        let iv = Interval::new(1, 40);
        for (a, b) in [(1, 1), (3, 17), (10, 40), (25, 30), (40, 40)] {
            let g = green_cramer(iv, &w, &th, 0.4, &v, a, b).unwrap();
            assert!(g.log_mag() <= cramer_log_bound(iv, &w, &th, 0.4, &v, a, b) + 1e-9);
        }
    }

    #[test]
    fn residual_and_symmetry() {
        let w = golden();
        let v = TrigPotential::cosine(10.0);
        let iv = Interval::new(0, 79);
        let op = build_operator(iv, &w, &Phase::scalar(0.37), &v);
        let g = green_solve_op(&op, 0.0, SINGULAR_FLOOR).unwrap();
        assert!(g.residual(&op) < 1e-8);
        assert_eq!(g.symmetry_error(), 0.0);
        let c = CramerTable::new(&op, 0.0, SINGULAR_FLOOR).unwrap().matrix();
        assert!(c.symmetry_error() < 1e-9);
        assert!(c.residual(&op) < 1e-8);
    }

    #[test]
    fn singular_energy_is_reported() {
        // Two free sites have eigenvalues ±1.
        let op = build_operator(Interval::new(0, 1), &golden(), &Phase::scalar(0.0), &TrigPotential::zero(1));
        assert!(matches!(
            CramerTable::new(&op, 1.0, SINGULAR_FLOOR),
            Err(Error::SingularEnergy { .. })
        ));
        assert!(matches!(green_solve_op(&op, 1.0, SINGULAR_FLOOR), Err(Error::SingularEnergy { .. })));
    }

    #[test]
    fn free_resolvent_decay_rate() {
        let g = green_solve(Interval::new(0, 199), &golden(), &Phase::scalar(0.0), 3.0, &TrigPotential::zero(1)).unwrap();
        let fit = decay_fit(&g, 20).unwrap();
        assert!((fit.rate - ((3.0 + 5f64.sqrt()) / 2.0).ln()).abs() < 1e-3, "{fit:?}");
        assert!(decay_fit(&g, 60).is_err());
    }

    #[test]
    fn triplet_export() {
        let g = green_solve(Interval::new(0, 1), &golden(), &Phase::scalar(0.0), 3.0, &TrigPotential::zero(1)).unwrap();
        let mut buf = Vec::new();
        g.write_triplets(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.starts_with("n1,n2,sign,log_mag\n0,0,-1,"));
    }

    #[test]
    fn single_window_paving_is_exact() {
        let w = golden();
        let v = TrigPotential::cosine(10.0);
        let th = Phase::scalar(0.1);
        let iv = Interval::new(0, 39);
        let p = pave_direct(iv, 40, &w, &th, 13.0, &v, 1.0, &PaveOptions::default()).unwrap();
        let direct = green_solve(iv, &w, &th, 13.0, &v).unwrap();
        assert_eq!(p.green, direct);
        assert_eq!(p.certificate.windows_used, 1);
    }

    #[test]
    fn paving_reproduces_direct_solve() {
        let w = golden();
        let v = TrigPotential::cosine(10.0);
        let th = Phase::scalar(0.0);
        let iv = Interval::new(1, 300);
        let c = 1.5;
        let p = pave_direct(iv, 30, &w, &th, 13.0, &v, c, &PaveOptions::default()).unwrap();
        let direct = green_solve(iv, &w, &th, 13.0, &v).unwrap();
        for (a, b) in p.green.entries().iter().zip(direct.entries()) {
            assert!(a.log_distance(*b) < 1e-8);
        }
        assert!(p.certificate.rate_ok, "{:?}", p.certificate);
        assert!(p.certificate.contraction < 0.5);
        let json = serde_json::to_value(&p.certificate).unwrap();
        for key in ["rate", "intercept", "windows_used", "failures"] {
            assert!(json.get(key).is_some());
        }
    }

    #[test]
    fn paving_failures_are_listed() {
        let w = golden();
        let v = TrigPotential::cosine(10.0);
        // No window can decay faster than the true rate.
        let err = pave_direct(Interval::new(1, 100), 20, &w, &Phase::scalar(0.0), 13.0, &v, 50.0, &PaveOptions::default())
            .unwrap_err();
        match err {
            Error::PavingFailed { sites } => assert_eq!(sites.len(), 100),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn weak_contraction_is_rejected() {
        // Inside the free band the windows barely decay.
        let w = golden();
        let err = pave_direct(
            Interval::new(1, 60),
            20,
            &w,
            &Phase::scalar(0.0),
            0.3,
            &TrigPotential::zero(1),
            0.0,
            &PaveOptions { beta: 10.0, ..Default::default() },
        )
        .unwrap_err();
        assert!(matches!(err, Error::IterationDiverged { .. }), "{err:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn cramer_agrees_with_solve(seed in 0u64..1000, n in 2i64..60, e in -8.0f64..8.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v = TrigPotential::cosine(rng.random_range(0.5..6.0));
            let op = build_operator(Interval::new(0, n - 1), &golden(), &Phase::scalar(rng.random()), &v);
            let cr = CramerTable::new(&op, e, -50.0);
            prop_assume!(cr.is_ok());
            let cr = cr.unwrap().matrix();
            let so = green_solve_op(&op, e, -50.0).unwrap();
            for (a, b) in cr.entries().iter().zip(so.entries()) {
                prop_assert!(a.rel_diff(*b) < 1e-8);
            }
        }
    }
}
