use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

/// A real number stored as `sign · e^{log_mag}`.
///
/// Zero is `sign = 0, log_mag = -∞`. Products add magnitudes in log space, so
/// a chain of thousands of factors of size `e^{0.9}` never overflows.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogScalar {
    sign: i8,
    log_mag: f64,
}

impl LogScalar {
    pub const ZERO: LogScalar = LogScalar {
        sign: 0,
        log_mag: f64::NEG_INFINITY,
    };
    pub const ONE: LogScalar = LogScalar {
        sign: 1,
        log_mag: 0.0,
    };

    /// Builds a value from its parts. A zero sign forces `log_mag = -∞`.
    pub fn new(sign: i8, log_mag: f64) -> Self {
        if sign == 0 || log_mag == f64::NEG_INFINITY {
            Self::ZERO
        } else {
            LogScalar {
                sign: sign.signum(),
                log_mag,
            }
        }
    }

    pub fn from_f64(x: f64) -> Self {
        if x == 0.0 {
            Self::ZERO
        } else {
            LogScalar {
                sign: if x > 0.0 { 1 } else { -1 },
                log_mag: x.abs().ln(),
            }
        }
    }

    /// `x · e^{log_scale}` without ever forming the product.
    pub fn from_scaled(x: f64, log_scale: f64) -> Self {
        let mut s = Self::from_f64(x);
        if s.sign != 0 {
            s.log_mag += log_scale;
        }
        s
    }

    /// Converts back; overflows to ±∞ and underflows to 0 outside the f64 range.
    pub fn to_f64(self) -> f64 {
        match self.sign {
            0 => 0.0,
            s => f64::from(s) * self.log_mag.exp(),
        }
    }

    pub fn sign(self) -> i8 {
        self.sign
    }

    pub fn log_mag(self) -> f64 {
        self.log_mag
    }

    pub fn is_zero(self) -> bool {
        self.sign == 0
    }

    pub fn abs(self) -> Self {
        LogScalar {
            sign: self.sign.abs(),
            log_mag: self.log_mag,
        }
    }

    pub fn recip(self) -> Self {
        assert!(self.sign != 0, "reciprocal of zero LogScalar");
        LogScalar {
            sign: self.sign,
            log_mag: -self.log_mag,
        }
    }

    pub fn powi(self, k: i32) -> Self {
        match (self.sign, k) {
            (_, 0) => Self::ONE,
            (0, _) => Self::ZERO,
            (s, k) => LogScalar {
                sign: if k % 2 == 0 { 1 } else { s },
                log_mag: self.log_mag * f64::from(k),
            },
        }
    }

    /// Addition with the larger magnitude factored out.
    fn add_impl(self, other: Self) -> Self {
        if self.sign == 0 {
            return other;
        }
        if other.sign == 0 {
            return self;
        }
        let (big, small) = if self.log_mag >= other.log_mag {
            (self, other)
        } else {
            (other, self)
        };
        let ratio = (small.log_mag - big.log_mag).exp();
        if big.sign == small.sign {
            LogScalar {
                sign: big.sign,
                log_mag: big.log_mag + ratio.ln_1p(),
            }
        } else if ratio == 1.0 {
            Self::ZERO
        } else {
            LogScalar {
                sign: big.sign,
                log_mag: big.log_mag + (-ratio).ln_1p(),
            }
        }
    }

    /// Sum of many terms; the largest magnitude is factored out once.
    pub fn sum<I: IntoIterator<Item = LogScalar>>(terms: I) -> Self {
        let terms: Vec<LogScalar> = terms.into_iter().filter(|t| !t.is_zero()).collect();
        let Some(max) = terms
            .iter()
            .map(|t| t.log_mag)
            .max_by(|a, b| a.total_cmp(b))
        else {
            return Self::ZERO;
        };
        let acc: f64 = terms
            .iter()
            .map(|t| f64::from(t.sign) * (t.log_mag - max).exp())
            .sum();
        Self::from_scaled(acc, max)
    }

    /// `|log|a| - log|b||`, the comparison metric used throughout the crate.
    /// Infinite when exactly one side is zero or the signs differ.
    pub fn log_distance(self, other: Self) -> f64 {
        match (self.sign, other.sign) {
            (0, 0) => 0.0,
            (a, b) if a != b => f64::INFINITY,
            _ => (self.log_mag - other.log_mag).abs(),
        }
    }

    /// Relative difference `|a - b| / max(|a|, |b|)`, computed in log space.
    pub fn rel_diff(self, other: Self) -> f64 {
        if self.sign == 0 && other.sign == 0 {
            return 0.0;
        }
        let denom = if self.log_mag >= other.log_mag {
            self.abs()
        } else {
            other.abs()
        };
        ((self - other) / denom).abs().to_f64()
    }
}

impl Default for LogScalar {
    fn default() -> Self {
        Self::ZERO
    }
}

impl From<f64> for LogScalar {
    fn from(x: f64) -> Self {
        Self::from_f64(x)
    }
}

impl Neg for LogScalar {
    type Output = LogScalar;
    fn neg(self) -> LogScalar {
        LogScalar {
            sign: -self.sign,
            log_mag: self.log_mag,
        }
    }
}

impl Mul for LogScalar {
    type Output = LogScalar;
    fn mul(self, rhs: LogScalar) -> LogScalar {
        if self.sign == 0 || rhs.sign == 0 {
            return Self::ZERO;
        }
        LogScalar {
            sign: self.sign * rhs.sign,
            log_mag: self.log_mag + rhs.log_mag,
        }
    }
}

impl Add for LogScalar {
    type Output = LogScalar;
    fn add(self, rhs: LogScalar) -> LogScalar {
        self.add_impl(rhs)
    }
}

impl Sub for LogScalar {
    type Output = LogScalar;
    fn sub(self, rhs: LogScalar) -> LogScalar {
        self.add_impl(-rhs)
    }
}

impl Div for LogScalar {
    type Output = LogScalar;
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn div(self, rhs: LogScalar) -> LogScalar {
        self * rhs.recip()
    }
}

impl PartialOrd for LogScalar {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        let key = |s: &LogScalar| (s.sign, s.log_mag);
        match (self.sign, other.sign) {
            (a, b) if a != b => a.partial_cmp(&b),
            (0, 0) => Some(Ordering::Equal),
            (1, 1) => key(self).1.partial_cmp(&key(other).1),
            _ => key(other).1.partial_cmp(&key(self).1),
        }
    }
}

impl fmt::Display for LogScalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.sign {
            0 => write!(f, "0"),
            s => write!(f, "{}e^{:.6}", if s > 0 { "+" } else { "-" }, self.log_mag),
        }
    }
}
