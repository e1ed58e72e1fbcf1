use serde::{Deserialize, Serialize};

use super::Phase;
use crate::{Error, Result};

/// A point `ω ∈ 𝕋^d` together with the diophantine condition
/// `‖k·ω‖ > c|k|^{-A}` it is claimed to satisfy.
///
/// The condition can only ever be checked up to a finite horizon `K`
/// (`|k| = Σ|k_j| ≤ K`); `verified_horizon` records how far it has been
/// checked. Everything downstream that leans on the condition reports
/// the horizon it relied on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frequency {
    components: Phase,
    dio_a: f64,
    dio_c: f64,
    verified_horizon: u32,
}

/// A lattice vector `k` with `‖k·ω‖ ≤ c|k|^{-A}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub k: Vec<i64>,
    pub distance: f64,
    pub required: f64,
}

impl Frequency {
    pub fn new(components: &[f64], dio_a: f64, dio_c: f64) -> Result<Self> {
        if components.is_empty() || components.len() > 2 {
            return Err(Error::invalid("frequency dimension must be 1 or 2"));
        }
        if !(dio_a >= 1.0) || !(dio_c > 0.0) {
            return Err(Error::invalid("diophantine parameters need A >= 1, c > 0"));
        }
        if components.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("frequency components must be finite"));
        }
        Ok(Frequency {
            components: Phase::new(components).wrapped(),
            dio_a,
            dio_c,
            verified_horizon: 0,
        })
    }

    /// Golden mean `(√5 − 1)/2` with `DC_{2, 0.2}`.
    pub fn golden() -> Self {
        Self::new(&[(5f64.sqrt() - 1.0) / 2.0], 2.0, 0.2).expect("valid")
    }

    /// `(√2 − 1, √3 − 1)` with `DC_{4, 0.01}`.
    pub fn default_2d() -> Self {
        Self::new(&[2f64.sqrt() - 1.0, 3f64.sqrt() - 1.0], 4.0, 0.01).expect("valid")
    }

    pub fn dim(&self) -> usize {
        self.components.dim()
    }

    pub fn phase(&self) -> Phase {
        self.components
    }

    pub fn components(&self) -> &[f64] {
        self.components.as_slice()
    }

    pub fn dio_a(&self) -> f64 {
        self.dio_a
    }

    pub fn dio_c(&self) -> f64 {
        self.dio_c
    }

    pub fn verified_horizon(&self) -> u32 {
        self.verified_horizon
    }

    /// Scans every `0 < |k|₁ ≤ horizon` and returns the violating `k` of
    /// largest norm, or `None` when the condition holds throughout.
    pub fn verify_diophantine(&self, horizon: u32) -> Option<Violation> {
        assert!(horizon >= 1, "diophantine horizon must be at least 1");
        let check = |k: &[i64]| -> Option<Violation> {
            let norm: i64 = k.iter().map(|x| x.abs()).sum();
            let dot: f64 = k
                .iter()
                .zip(self.components())
                .map(|(&kj, &wj)| kj as f64 * wj)
                .sum();
            let distance = (dot - dot.round()).abs();
            let required = self.dio_c * (norm as f64).powf(-self.dio_a);
            (distance <= required).then(|| Violation {
                k: k.to_vec(),
                distance,
                required,
            })
        };
        let better = |best: Option<Violation>, cand: Option<Violation>| match (best, cand) {
            (None, c) => c,
            (b, None) => b,
            (Some(b), Some(c)) => {
                let nb: i64 = b.k.iter().map(|x| x.abs()).sum();
                let nc: i64 = c.k.iter().map(|x| x.abs()).sum();
                Some(if nc > nb { c } else { b })
            }
        };
        let h = i64::from(horizon);
        let mut worst = None;
        match self.dim() {
            1 => {
                for k in 1..=h {
                    worst = better(worst, check(&[k]));
                }
            }
            _ => {
                // k and -k give the same distance: keep k1 > 0, or k1 = 0 and k2 > 0.
                for k1 in 0..=h {
                    let rest = h - k1;
                    let lo = if k1 == 0 { 1 } else { -rest };
                    for k2 in lo..=rest {
                        worst = better(worst, check(&[k1, k2]));
                    }
                }
            }
        }
        worst
    }

    /// Verifies up to `horizon` and records it, or reports the violation.
    pub fn verified(mut self, horizon: u32) -> std::result::Result<Self, Violation> {
        match self.verify_diophantine(horizon) {
            Some(v) => Err(v),
            None => {
                self.verified_horizon = self.verified_horizon.max(horizon);
                Ok(self)
            }
        }
    }
}
