//! Named pass/fail checks against a bound.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    /// Passes when `value <= bound`.
    AtMost,
    /// Passes when `value >= bound`.
    AtLeast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct Check {
    pub name: String,
    #[serde(with = "crate::serde_float")]
    #[cfg_attr(feature = "schema", schemars(with = "crate::serde_float::ExtendedFloat"))]
    pub value: f64,
    pub bound: f64,
    pub kind: BoundKind,
    pub pass: bool,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, bound: f64) -> Check {
        Check { name: name.into(), value, bound, kind: BoundKind::AtMost, pass: value <= bound }
    }

    pub fn at_least(name: impl Into<String>, value: f64, bound: f64) -> Check {
        Check { name: name.into(), value, bound, kind: BoundKind::AtLeast, pass: value >= bound }
    }

    pub fn holds(name: impl Into<String>, pass: bool) -> Check {
        let value = if pass { 1.0 } else { 0.0 };
        Check { name: name.into(), value, bound: 1.0, kind: BoundKind::AtLeast, pass }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nan_fails_and_infinite_sentinels_pass() {
        assert!(!Check::at_most("x", f64::NAN, 1.0).pass);
        assert!(Check::at_most("x", f64::NEG_INFINITY, 0.0).pass);
        assert!(Check::at_least("x", f64::INFINITY, 0.0).pass);
        assert!(!Check::at_least("x", -1.0, 0.0).pass);
    }
}
