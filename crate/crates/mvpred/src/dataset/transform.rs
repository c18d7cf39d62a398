//! Target-space transforms. Training runs in log1p space by default; metrics
//! are reported on raw counts after the inverse.

use serde::{Deserialize, Serialize};

use super::{PopularityTargets, N_METRICS};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TargetTransform {
    #[default]
    Log1p,
    Identity,
}

impl TargetTransform {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "log1p" => Ok(TargetTransform::Log1p),
            "identity" => Ok(TargetTransform::Identity),
            other => Err(Error::usage(format!(
                "unknown transform '{other}' (expected log1p or identity)"
            ))),
        }
    }

    pub fn forward_one(&self, count: u64) -> f64 {
        match self {
            TargetTransform::Log1p => (count as f64).ln_1p(),
            TargetTransform::Identity => count as f64,
        }
    }

    /// Clamps negatives to zero before inverting, rounds to the nearest count.
    pub fn inverse_one(&self, v: f64) -> u64 {
        let v = v.max(0.0);
        let raw = match self {
            TargetTransform::Log1p => v.exp_m1(),
            TargetTransform::Identity => v,
        };
        raw.max(0.0).round() as u64
    }

    pub fn forward(&self, t: &PopularityTargets) -> [f64; N_METRICS] {
        t.as_array().map(|c| self.forward_one(c))
    }

    pub fn inverse(&self, v: [f64; N_METRICS]) -> PopularityTargets {
        PopularityTargets::from_array(v.map(|x| self.inverse_one(x)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log1p_zero_and_e_minus_one() {
        let tf = TargetTransform::Log1p;
        let t = PopularityTargets {
            hearts: 0,
            shares: 0,
            comments: 0,
            plays: 0,
        };
        assert_eq!(tf.forward(&t), [0.0; 4]);
        // hearts = e-1 ≈ 1.718 → ln(1+x) = 1
        assert!((tf.forward_one(2) - (3.0f64).ln()).abs() < 1e-12);
        assert!(((std::f64::consts::E - 1.0).ln_1p() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn round_trip_counts() {
        let tf = TargetTransform::Log1p;
        for c in [0u64, 1, 12345, 99_999_999, 1 << 40] {
            assert_eq!(tf.inverse_one(tf.forward_one(c)), c);
        }
        let tf = TargetTransform::Identity;
        assert_eq!(tf.inverse_one(tf.forward_one(12345)), 12345);
    }

    #[test]
    fn inverse_clamps_negatives() {
        assert_eq!(TargetTransform::Log1p.inverse_one(-0.4), 0);
        assert_eq!(TargetTransform::Identity.inverse_one(-3.0), 0);
    }
}
