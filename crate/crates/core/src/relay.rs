//! Inverse-time overcurrent relay model.
//!
//! Operating time follows the generalized inverse characteristic
//! `t = a * TMS / (M^b - 1)` with `M = I_f / (CTR * PS)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmodel::RelayId;

/// Default pickup margin over normal load current.
pub const DEFAULT_OVERLOAD_FACTOR: f64 = 1.25;

/// Multiples within this distance above 1 are treated as unbounded time.
const MULTIPLE_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RelayError {
    #[error("load current must be non-negative (got {0} A)")]
    NegativeLoad(f64),
    #[error("CT ratio must be positive (got {0})")]
    NonPositiveCtr(f64),
    #[error("plug setting must be positive (got {0})")]
    NonPositivePlug(f64),
    #[error("fault current must be positive (got {0} A)")]
    NonPositiveCurrent(f64),
    #[error("relay does not pick up (multiple {multiple:.4} <= 1)")]
    NoPickup { multiple: f64 },
    #[error("multiple {multiple} is too close to 1; operating time is unbounded")]
    Unbounded { multiple: f64 },
    #[error("target time must be positive (got {0} s)")]
    NonPositiveTarget(f64),
    #[error("TMS {tms:.4} outside [{min}, {max}]")]
    TmsOutOfRange { tms: f64, min: f64, max: f64 },
    #[error("current range [{low}, {high}] A must lie above pickup {pickup:.1} A")]
    BelowPickup { low: f64, high: f64, pickup: f64 },
    #[error("unknown curve `{0}`")]
    UnknownCurve(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CurveKind {
    NormalInverse,
    VeryInverse,
    ExtremelyInverse,
    LongInverse,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveConstants {
    pub numerator_a: f64,
    pub exponent_b: f64,
}

impl CurveKind {
    pub const ALL: [CurveKind; 4] = [
        CurveKind::NormalInverse,
        CurveKind::VeryInverse,
        CurveKind::ExtremelyInverse,
        CurveKind::LongInverse,
    ];

    pub fn constants(self) -> CurveConstants {
        let (numerator_a, exponent_b) = match self {
            CurveKind::NormalInverse => (0.14, 0.02),
            CurveKind::VeryInverse => (13.5, 1.0),
            CurveKind::ExtremelyInverse => (80.0, 2.0),
            CurveKind::LongInverse => (120.0, 1.0),
        };
        CurveConstants {
            numerator_a,
            exponent_b,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            CurveKind::NormalInverse => "Normal Inverse",
            CurveKind::VeryInverse => "Very Inverse",
            CurveKind::ExtremelyInverse => "Extremely Inverse",
            CurveKind::LongInverse => "Long Inverse",
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            CurveKind::NormalInverse => "NI",
            CurveKind::VeryInverse => "VI",
            CurveKind::ExtremelyInverse => "EI",
            CurveKind::LongInverse => "LI",
        }
    }
}

impl fmt::Display for CurveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for CurveKind {
    type Err = RelayError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_alphanumeric())
            .collect::<String>()
            .to_lowercase();
        match key.as_str() {
            "ni" | "normalinverse" | "standardinverse" | "si" => Ok(CurveKind::NormalInverse),
            "vi" | "veryinverse" => Ok(CurveKind::VeryInverse),
            "ei" | "extremelyinverse" => Ok(CurveKind::ExtremelyInverse),
            "li" | "longinverse" => Ok(CurveKind::LongInverse),
            _ => Err(RelayError::UnknownCurve(s.to_string())),
        }
    }
}

/// Allowed TMS window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TmsRange {
    pub min: f64,
    pub max: f64,
}

impl Default for TmsRange {
    fn default() -> Self {
        Self {
            min: 0.025,
            max: 1.2,
        }
    }
}

impl TmsRange {
    pub fn contains(&self, tms: f64) -> bool {
        tms >= self.min && tms <= self.max
    }

    pub fn check(&self, tms: f64) -> Result<f64, RelayError> {
        if self.contains(tms) {
            Ok(tms)
        } else {
            Err(RelayError::TmsOutOfRange {
                tms,
                min: self.min,
                max: self.max,
            })
        }
    }

    pub fn clamp(&self, tms: f64) -> f64 {
        tms.clamp(self.min, self.max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelaySetting {
    pub relay_id: RelayId,
    pub curve: CurveKind,
    pub plug_setting: f64,
    pub tms: f64,
    pub ct_ratio: f64,
    pub directional: bool,
}

impl RelaySetting {
    pub fn pickup_a(&self) -> f64 {
        self.plug_setting * self.ct_ratio
    }

    pub fn with_curve(mut self, curve: CurveKind) -> Self {
        self.curve = curve;
        self
    }

    pub fn operating_time(&self, fault_current_a: f64) -> Result<f64, RelayError> {
        operating_time(self, fault_current_a)
    }
}

pub fn pickup_from_load(load_current_a: f64, overload_factor: f64) -> Result<f64, RelayError> {
    if !(load_current_a >= 0.0) {
        return Err(RelayError::NegativeLoad(load_current_a));
    }
    Ok(load_current_a * overload_factor)
}

pub fn plug_setting(pickup_a: f64, ctr: f64) -> Result<f64, RelayError> {
    if !(ctr > 0.0) {
        return Err(RelayError::NonPositiveCtr(ctr));
    }
    Ok(pickup_a / ctr)
}

/// Fault current as a multiple of the relay pickup.
pub fn multiple(fault_current_a: f64, plug_setting: f64, ctr: f64) -> Result<f64, RelayError> {
    if !(ctr > 0.0) {
        return Err(RelayError::NonPositiveCtr(ctr));
    }
    if !(plug_setting > 0.0) {
        return Err(RelayError::NonPositivePlug(plug_setting));
    }
    if !(fault_current_a > 0.0) {
        return Err(RelayError::NonPositiveCurrent(fault_current_a));
    }
    Ok(fault_current_a / (ctr * plug_setting))
}

fn curve_denominator(curve: CurveKind, m: f64) -> Result<f64, RelayError> {
    if m <= 1.0 {
        return Err(RelayError::NoPickup { multiple: m });
    }
    if m <= 1.0 + MULTIPLE_EPS {
        return Err(RelayError::Unbounded { multiple: m });
    }
    let b = curve.constants().exponent_b;
    // exp_m1 keeps precision for the NI exponent 0.02 near pickup
    Ok((b * m.ln()).exp_m1())
}

/// Operating time in seconds.
pub fn operating_time(setting: &RelaySetting, fault_current_a: f64) -> Result<f64, RelayError> {
    let m = multiple(fault_current_a, setting.plug_setting, setting.ct_ratio)?;
    let denom = curve_denominator(setting.curve, m)?;
    Ok(setting.curve.constants().numerator_a * setting.tms / denom)
}

/// TMS that makes the relay operate in `target_time_s` at the given current.
pub fn solve_tms(
    curve: CurveKind,
    target_time_s: f64,
    ps: f64,
    ctr: f64,
    fault_current_a: f64,
) -> Result<f64, RelayError> {
    if !(target_time_s > 0.0) {
        return Err(RelayError::NonPositiveTarget(target_time_s));
    }
    let m = multiple(fault_current_a, ps, ctr)?;
    let denom = curve_denominator(curve, m)?;
    Ok(target_time_s * denom / curve.constants().numerator_a)
}

/// [`solve_tms`] followed by a range check; out-of-range values are an
/// error unless `clip` is set.
pub fn solve_tms_in_range(
    curve: CurveKind,
    target_time_s: f64,
    ps: f64,
    ctr: f64,
    fault_current_a: f64,
    range: TmsRange,
    clip: bool,
) -> Result<f64, RelayError> {
    let tms = solve_tms(curve, target_time_s, ps, ctr, fault_current_a)?;
    if clip {
        Ok(range.clamp(tms))
    } else {
        range.check(tms)
    }
}

/// Log-spaced (current, time) samples of the relay characteristic.
pub fn curve_samples(
    setting: &RelaySetting,
    current_range: (f64, f64),
    n_points: usize,
) -> Result<Vec<(f64, f64)>, RelayError> {
    let (low, high) = current_range;
    let pickup = setting.pickup_a();
    if !(low > pickup * (1.0 + MULTIPLE_EPS)) || !(high >= low) {
        return Err(RelayError::BelowPickup { low, high, pickup });
    }
    if n_points == 0 {
        return Ok(Vec::new());
    }
    let (l0, l1) = (low.ln(), high.ln());
    (0..n_points)
        .map(|i| {
            let current = match i {
                0 => low,
                _ if i == n_points - 1 => high,
                _ => (l0 + (i as f64 / (n_points - 1) as f64) * (l1 - l0)).exp(),
            };
            operating_time(setting, current).map(|t| (current, t))
        })
        .collect()
}
