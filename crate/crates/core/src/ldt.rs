//! Large-deviation experiments: the measure of phases where
//! `n⁻¹ log‖M_n(θ)‖` strays from `L_n` by more than `n^{-σ}`, and the
//! `O(1/|k|)` decay of the Fourier coefficients of that function.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::lyapunov::{lyapunov_default, phi_values, Sampler};
use crate::model::{Frequency, Phase, TrigPotential};
use crate::stats::{binomial_se, fit_line, LineFit};
use crate::{Error, Result};

/// Which side of `L_n` counts as a deviation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tail {
    /// `φ < L_n − threshold`.
    Lower,
    /// `φ > L_n + threshold`.
    Upper,
    #[default]
    Both,
}

/// Strength of the bound the measurement is compared against.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundForm {
    /// `e^{-n^{1-2σ}}`, valid for `0 < σ ≤ 1/2` with one frequency.
    #[default]
    Strong,
    /// `e^{-n^σ}`, for any `σ > 0`.
    General,
}

impl BoundForm {
    pub fn reference(self, n: usize, sigma: f64) -> f64 {
        let n = n as f64;
        match self {
            BoundForm::Strong => (-n.powf(1.0 - 2.0 * sigma)).exp(),
            BoundForm::General => (-n.powf(sigma)).exp(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviationOptions {
    pub tail: Tail,
    pub form: BoundForm,
    /// Multiplies `n^{-σ}`; `log(1 + ‖v‖∞)` gives the normalized deviation.
    pub threshold_scale: f64,
    /// Precomputed `L_n`; computed on the dense grid when absent.
    pub reference: Option<f64>,
}

impl Default for DeviationOptions {
    fn default() -> Self {
        DeviationOptions {
            tail: Tail::Both,
            form: BoundForm::Strong,
            threshold_scale: 1.0,
            reference: None,
        }
    }
}

impl DeviationOptions {
    /// Threshold `n^{-σ} log(1 + ‖v‖∞)` with the general bound.
    pub fn normalized(v: &TrigPotential) -> Self {
        DeviationOptions {
            form: BoundForm::General,
            threshold_scale: (1.0 + v.sup_norm()).ln(),
            ..Default::default()
        }
    }
}

/// Estimated measure of the deviation set at one scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviationProfile {
    pub n: usize,
    pub sigma: f64,
    pub threshold: f64,
    pub fraction: f64,
    pub samples: usize,
    /// `sqrt(fraction (1 − fraction) / samples)`.
    pub std_error: f64,
    pub two_sided: bool,
    pub l_n: f64,
}

/// Two-sided deviation measure with the strong bound's σ range.
pub fn deviation_measure(
    omega: &Frequency,
    energy: f64,
    n: usize,
    sigma: f64,
    v: &TrigPotential,
    samples: usize,
    seed: u64,
) -> Result<DeviationProfile> {
    deviation_measure_with(omega, energy, n, sigma, v, samples, seed, &DeviationOptions::default())
}

#[allow(clippy::too_many_arguments)]
pub fn deviation_measure_with(
    omega: &Frequency,
    energy: f64,
    n: usize,
    sigma: f64,
    v: &TrigPotential,
    samples: usize,
    seed: u64,
    opts: &DeviationOptions,
) -> Result<DeviationProfile> {
    check_sigma(sigma, opts.form, v.dim())?;
    if samples < 1000 {
        return Err(Error::invalid(format!("need at least 1000 samples, got {samples}")));
    }
    if n == 0 {
        return Err(Error::invalid("n must be positive"));
    }
    let l_n = opts
        .reference
        .unwrap_or_else(|| lyapunov_default(omega, energy, n, v).value);
    let threshold = opts.threshold_scale * (n as f64).powf(-sigma);
    let phases = random_phases(v.dim(), samples, seed);
    let values = phi_values(omega, energy, n, v, &phases);
    let bad = values
        .iter()
        .filter(|&&phi| match opts.tail {
            Tail::Lower => phi < l_n - threshold,
            Tail::Upper => phi > l_n + threshold,
            Tail::Both => (phi - l_n).abs() > threshold,
        })
        .count();
    let fraction = bad as f64 / samples as f64;
    Ok(DeviationProfile {
        n,
        sigma,
        threshold,
        fraction,
        samples,
        std_error: binomial_se(fraction, samples),
        two_sided: opts.tail == Tail::Both,
        l_n,
    })
}

fn check_sigma(sigma: f64, form: BoundForm, dim: usize) -> Result<()> {
    let ok = match form {
        BoundForm::Strong if dim == 1 => sigma > 0.0 && sigma <= 0.5,
        _ => sigma > 0.0 && sigma.is_finite(),
    };
    if ok {
        Ok(())
    } else {
        Err(Error::SigmaOutOfRange {
            sigma,
            allowed: if form == BoundForm::Strong && dim == 1 {
                "(0, 1/2]"
            } else {
                "(0, inf)"
            },
        })
    }
}

fn random_phases(dim: usize, samples: usize, seed: u64) -> Vec<Phase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..samples)
        .map(|_| match dim {
            1 => Phase::scalar(rng.random()),
            _ => Phase::new(&[rng.random(), rng.random()]),
        })
        .collect()
}

/// One row of [`ldt_scaling_table`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub n: usize,
    pub sigma: f64,
    pub threshold: f64,
    pub fraction: f64,
    pub std_error: f64,
    pub bound_reference: f64,
    /// `fraction > bound_reference + 3·std_error`.
    pub exceeds_bound: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingTable {
    pub rows: Vec<ScalingRow>,
    /// Consecutive pairs `(n, n')` with `fraction(n') > fraction(n) + 3σ`.
    pub monotonicity_breaks: Vec<(usize, usize)>,
}

impl ScalingTable {
    pub fn is_monotone(&self) -> bool {
        self.monotonicity_breaks.is_empty()
    }

    /// CSV columns `n, sigma, threshold, fraction, std_error, bound_reference`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(["n", "sigma", "threshold", "fraction", "std_error", "bound_reference"])
            .map_err(io)?;
        for r in &self.rows {
            w.write_record([
                r.n.to_string(),
                r.sigma.to_string(),
                r.threshold.to_string(),
                r.fraction.to_string(),
                r.std_error.to_string(),
                r.bound_reference.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Deviation fractions along an increasing list of scales. One frequency
/// uses the strong bound `e^{-n^{1-2σ}}` as reference, two use `e^{-n^σ}`.
/// Scale `i` draws its phases from seed `seed + i`.
pub fn ldt_scaling_table(
    omega: &Frequency,
    energy: f64,
    v: &TrigPotential,
    sigma: f64,
    ns: &[usize],
    samples: usize,
    seed: u64,
) -> Result<ScalingTable> {
    let form = if v.dim() == 1 {
        BoundForm::Strong
    } else {
        BoundForm::General
    };
    let opts = DeviationOptions {
        form,
        ..Default::default()
    };
    scaling_table_with(omega, energy, v, sigma, ns, samples, seed, &opts)
}

#[allow(clippy::too_many_arguments)]
pub fn scaling_table_with(
    omega: &Frequency,
    energy: f64,
    v: &TrigPotential,
    sigma: f64,
    ns: &[usize],
    samples: usize,
    seed: u64,
    opts: &DeviationOptions,
) -> Result<ScalingTable> {
    if ns.is_empty() || ns.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("n list must be nonempty and strictly increasing"));
    }
    let mut rows = Vec::with_capacity(ns.len());
    for (i, &n) in ns.iter().enumerate() {
        let opts = DeviationOptions {
            reference: None,
            ..*opts
        };
        let p = deviation_measure_with(omega, energy, n, sigma, v, samples, seed.wrapping_add(i as u64), &opts)?;
        let bound_reference = opts.form.reference(n, sigma);
        rows.push(ScalingRow {
            n,
            sigma,
            threshold: p.threshold,
            fraction: p.fraction,
            std_error: p.std_error,
            bound_reference,
            exceeds_bound: p.fraction > bound_reference + 3.0 * p.std_error,
        });
    }
    let monotonicity_breaks = rows
        .windows(2)
        .filter(|w| {
            let se = (w[0].std_error.powi(2) + w[1].std_error.powi(2)).sqrt();
            w[1].fraction > w[0].fraction + 3.0 * se
        })
        .map(|w| (w[0].n, w[1].n))
        .collect();
    Ok(ScalingTable {
        rows,
        monotonicity_breaks,
    })
}

/// Outcome of [`fourier_decay_check`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FourierDecay {
    /// Every nonzero mode up to `K` is numerically zero.
    PerfectDecay,
    /// Fit of `log|φ̂(k)|` against `log k` over the modes above the noise floor.
    Fitted {
        fit: LineFit,
        modes_used: usize,
        /// Slope of the same fit applied to the running tail maximum
        /// `max_{j ≥ k} |φ̂(j)|`.
        envelope_slope: f64,
        /// `max_k k |φ̂(k)|`, bounded when `φ̂(k) = O(1/|k|)`.
        weighted_max: f64,
    },
}

impl FourierDecay {
    pub fn slope(&self) -> Option<f64> {
        match self {
            FourierDecay::PerfectDecay => None,
            FourierDecay::Fitted { fit, .. } => Some(fit.slope),
        }
    }
}

/// Coefficients below this multiple of `max|φ|` are treated as zero.
pub const FOURIER_NOISE_FLOOR: f64 = 1e-12;

/// `|φ̂(k)|` for `k = 1..=K`, from an FFT of `φ` on `points` equispaced phases.
pub fn phi_coefficients(
    omega: &Frequency,
    energy: f64,
    n: usize,
    v: &TrigPotential,
    k_max: usize,
    points: usize,
) -> Result<(Vec<f64>, f64)> {
    if v.dim() != 1 {
        return Err(Error::invalid("Fourier decay check is for one frequency"));
    }
    if k_max == 0 || 4 * k_max > points {
        return Err(Error::invalid(format!("need 1 <= K <= points/4, got K = {k_max}, points = {points}")));
    }
    let phases = Sampler::Grid { points }.phases(1);
    let phi = phi_values(omega, energy, n, v, &phases);
    let scale = phi.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut buf: Vec<Complex64> = phi.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(points).process(&mut buf);
    let coeffs = (1..=k_max).map(|k| buf[k].norm() / points as f64).collect();
    Ok((coeffs, scale))
}

/// Least-squares decay exponent of `|φ̂(k)|`, `1 ≤ k ≤ K`, on the dense grid
/// of `max(4096, 8n, 4K)` points (rounded up to a power of two).
pub fn fourier_decay_check(omega: &Frequency, energy: f64, n: usize, v: &TrigPotential, k_max: usize) -> Result<FourierDecay> {
    let points = (8 * n).max(4096).max(4 * k_max).next_power_of_two();
    fourier_decay_on_grid(omega, energy, n, v, k_max, points)
}

pub fn fourier_decay_on_grid(
    omega: &Frequency,
    energy: f64,
    n: usize,
    v: &TrigPotential,
    k_max: usize,
    points: usize,
) -> Result<FourierDecay> {
    let (coeffs, scale) = phi_coefficients(omega, energy, n, v, k_max, points)?;
    Ok(fit_decay(&coeffs, scale))
}

/// Fits `log|c_k|` against `log k` (modes indexed from 1), skipping modes
/// below [`FOURIER_NOISE_FLOOR`]` · scale`.
pub fn fit_decay(coeffs: &[f64], scale: f64) -> FourierDecay {
    let floor = FOURIER_NOISE_FLOOR * scale.max(f64::MIN_POSITIVE);
    let Some((fit, modes_used)) = fit_log_log(coeffs, floor) else {
        return FourierDecay::PerfectDecay;
    };
    let mut envelope = coeffs.to_vec();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let envelope_slope = fit_log_log(&envelope, floor).map_or(f64::NAN, |(f, _)| f.slope);
    let weighted_max = coeffs
        .iter()
        .enumerate()
        .map(|(i, c)| (i + 1) as f64 * c)
        .fold(0.0, f64::max);
    FourierDecay::Fitted {
        fit,
        modes_used,
        envelope_slope,
        weighted_max,
    }
}

fn fit_log_log(coeffs: &[f64], floor: f64) -> Option<(LineFit, usize)> {
    let pts: Vec<(f64, f64)> = coeffs
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > floor)
        .map(|(i, &c)| (((i + 1) as f64).ln(), c.ln()))
        .collect();
    fit_line(pts.iter().copied()).map(|f| (f, pts.len()))
}

/// `(θ, φ(θ))` on an equispaced grid, for plotting.
pub fn phi_on_grid(omega: &Frequency, energy: f64, n: usize, v: &TrigPotential, points: usize) -> Vec<(f64, f64)> {
    let phases = Sampler::Grid { points }.phases(1);
    let phi = phi_values(omega, energy, n, v, &phases);
    phases.iter().zip(phi).map(|(p, y)| (p.as_slice()[0], y)).collect()
}
