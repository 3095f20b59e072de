use std::fmt;

use num_rational::Ratio;
use thiserror::Error;

/// Default satisfaction threshold in milliseconds.
pub const DEFAULT_APDEX_THRESHOLD_MS: f64 = 500.0;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ApdexError {
    #[error("no samples")]
    EmptySamples,
    #[error("threshold must be positive and finite")]
    BadThreshold,
    #[error("response times must be finite and non-negative")]
    BadSample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Apdex {
    pub satisfied: u64,
    pub tolerating: u64,
    pub frustrated: u64,
    /// `(satisfied + tolerating / 2) / total`, exactly.
    pub score: Ratio<u64>,
}

impl Apdex {
    /// Score rounded half away from zero to two decimals, as hundredths.
    pub fn hundredths(&self) -> u64 {
        let (n, d) = (*self.score.numer(), *self.score.denom());
        (200 * n + d) / (2 * d)
    }
}

impl fmt::Display for Apdex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let h = self.hundredths();
        write!(f, "{}.{:02}", h / 100, h % 100)
    }
}

/// Satisfied when `t <= T`, tolerating when `T < t <= 4T`, frustrated
/// otherwise.
pub fn apdex(samples_ms: &[f64], threshold_ms: f64) -> Result<Apdex, ApdexError> {
    if !(threshold_ms.is_finite() && threshold_ms > 0.0) {
        return Err(ApdexError::BadThreshold);
    }
    if samples_ms.is_empty() {
        return Err(ApdexError::EmptySamples);
    }
    let (mut satisfied, mut tolerating, mut frustrated) = (0u64, 0u64, 0u64);
    for &t in samples_ms {
        if !(t.is_finite() && t >= 0.0) {
            return Err(ApdexError::BadSample);
        }
        if t <= threshold_ms {
            satisfied += 1;
        } else if t <= 4.0 * threshold_ms {
            tolerating += 1;
        } else {
            frustrated += 1;
        }
    }
    let total = samples_ms.len() as u64;
    Ok(Apdex {
        satisfied,
        tolerating,
        frustrated,
        score: Ratio::new(2 * satisfied + tolerating, 2 * total),
    })
}
