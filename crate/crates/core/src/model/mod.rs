//! Core domain types: torus points, diophantine frequencies, analytic
//! potentials, and the signed-log arithmetic shared by every other module.

mod frequency;
mod logscalar;
mod potential;
mod scaled;
pub mod spec;

pub use frequency::{Frequency, Violation};
pub use logscalar::LogScalar;
pub use potential::{FourierTerm, PotentialOrbit, StripNorm, TrigPotential, DEFAULT_STRIP_WIDTH};
pub use scaled::{Entry, ScaledMatrix2};

use serde::{Deserialize, Serialize};

/// A point of `𝕋^d = [0, 1)^d` for `d ∈ {1, 2}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Phase {
    coords: [f64; 2],
    dim: u8,
}

impl Phase {
    /// # Panics
    /// If `coords` has length other than 1 or 2.
    pub fn new(coords: &[f64]) -> Self {
        match *coords {
            [x] => Phase {
                coords: [x, 0.0],
                dim: 1,
            },
            [x, y] => Phase {
                coords: [x, y],
                dim: 2,
            },
            _ => panic!("torus dimension must be 1 or 2, got {}", coords.len()),
        }
    }

    pub fn scalar(x: f64) -> Self {
        Phase::new(&[x])
    }

    pub fn zero(dim: usize) -> Self {
        Phase::new(&[0.0, 0.0][..dim])
    }

    pub fn dim(&self) -> usize {
        usize::from(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coords[..self.dim()]
    }

    /// Reduces every coordinate into `[0, 1)`.
    pub fn wrapped(mut self) -> Self {
        for c in &mut self.coords[..usize::from(self.dim)] {
            *c = wrap(*c);
        }
        self
    }

    /// `θ + t·ω (mod 1)`.
    pub fn shifted(&self, omega: &Frequency, t: f64) -> Self {
        assert_eq!(self.dim(), omega.dim(), "phase/frequency dimension mismatch");
        let mut out = *self;
        for (c, w) in out.coords.iter_mut().zip(omega.components()) {
            *c = wrap(*c + t * w);
        }
        out
    }
}

impl TryFrom<Vec<f64>> for Phase {
    type Error = String;
    fn try_from(v: Vec<f64>) -> Result<Self, String> {
        if v.is_empty() || v.len() > 2 {
            return Err(format!("torus point needs 1 or 2 coordinates, got {}", v.len()));
        }
        Ok(Phase::new(&v))
    }
}

impl From<Phase> for Vec<f64> {
    fn from(p: Phase) -> Vec<f64> {
        p.as_slice().to_vec()
    }
}

pub(crate) fn wrap(x: f64) -> f64 {
    let r = x - x.floor();
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}
