use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use super::{DialogueState, Fraction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TerminationReason {
    UserDeclined,
    SufficientCoverage,
    DiminishingGain,
}

/// Inquiry loop thresholds, compared exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Coverage must be strictly greater than this to stop.
    pub coverage: Fraction,
    /// Two-round gain strictly below this stops the loop.
    pub gain: Fraction,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            coverage: Fraction::new(4, 5),
            gain: Fraction::new(1, 10),
        }
    }
}

impl Thresholds {
    /// Builds thresholds from decimal configuration values such as `0.8`.
    pub fn from_decimals(coverage: f64, gain: f64) -> Result<Self, String> {
        Ok(Self {
            coverage: fraction_from_decimal(coverage)?,
            gain: fraction_from_decimal(gain)?,
        })
    }
}

/// Converts a decimal literal to the exact fraction it denotes, so `0.1`
/// becomes `1/10` rather than the nearest binary float.
pub fn fraction_from_decimal(x: f64) -> Result<Fraction, String> {
    if !x.is_finite() {
        return Err(format!("threshold {x} is not finite"));
    }
    let text = format!("{x}");
    if text.contains(['e', 'E']) {
        return Ratio::approximate_float(x).ok_or_else(|| format!("threshold {x} out of range"));
    }
    let (neg, digits) = match text.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, text.as_str()),
    };
    let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
    if frac_part.len() > 15 {
        return Ratio::approximate_float(x).ok_or_else(|| format!("threshold {x} out of range"));
    }
    let denom = 10i64.pow(frac_part.len() as u32);
    let whole: i64 = int_part.parse().map_err(|e| format!("threshold {x}: {e}"))?;
    let frac: i64 = if frac_part.is_empty() {
        0
    } else {
        frac_part.parse().map_err(|e| format!("threshold {x}: {e}"))?
    };
    let numer = whole
        .checked_mul(denom)
        .and_then(|w| w.checked_add(frac))
        .ok_or_else(|| format!("threshold {x} out of range"))?;
    Ok(Fraction::new(if neg { -numer } else { numer }, denom))
}

/// Evaluates the stop conditions in priority order: user decline, then
/// sufficient coverage, then diminishing two-round gain.
///
/// The gain window compares the latest round with the round two before it;
/// for the second round that is the pre-inquiry baseline.
pub fn check_termination(state: &DialogueState, th: &Thresholds) -> Option<TerminationReason> {
    if state.user_declined {
        return Some(TerminationReason::UserDeclined);
    }
    let latest = state
        .coverage_history
        .last()
        .copied()
        .unwrap_or_else(|| state.ledger.coverage());
    if latest > th.coverage {
        return Some(TerminationReason::SufficientCoverage);
    }
    let t = state.inquiry_rounds as usize;
    if t >= 2 && state.coverage_history.len() >= t {
        let prev = if t == 2 {
            state.baseline_coverage.unwrap_or_else(|| Fraction::from_integer(0))
        } else {
            state.coverage_history[t - 3]
        };
        let current = state.coverage_history[t - 1];
        if current - prev < th.gain {
            return Some(TerminationReason::DiminishingGain);
        }
    }
    None
}
