//! Named residual checks and their pass/fail status.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Which side of the threshold counts as passing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bound {
    /// pass iff residual ≤ tolerance
    Upper,
    /// pass iff residual ≥ tolerance (separations)
    Lower,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckEntry {
    #[serde(with = "lossless_f64")]
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
    #[serde(default = "upper")]
    pub bound: Bound,
}

fn upper() -> Bound {
    Bound::Upper
}

impl CheckEntry {
    pub fn upper(residual: f64, tolerance: f64) -> Self {
        Self {
            residual,
            tolerance,
            pass: residual <= tolerance,
            bound: Bound::Upper,
        }
    }

    pub fn lower(residual: f64, tolerance: f64) -> Self {
        Self {
            residual,
            tolerance,
            pass: residual >= tolerance,
            bound: Bound::Lower,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub entries: BTreeMap<String, CheckEntry>,
    /// Checks that could not run, with the reason.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub skipped: BTreeMap<String, String>,
}

impl VerificationReport {
    pub fn new() -> Self {
        Self::default()
    }

    /// Record a residual that must stay at or below `tolerance`. A repeated
    /// name keeps the worst residual.
    pub fn record(&mut self, name: impl Into<String>, residual: f64, tolerance: f64) {
        let name = name.into();
        let residual = if residual.is_nan() { f64::INFINITY } else { residual };
        match self.entries.get(&name) {
            Some(prev) if prev.bound == Bound::Upper && prev.residual >= residual => {}
            _ => {
                self.entries.insert(name, CheckEntry::upper(residual, tolerance));
            }
        }
    }

    /// Record a quantity that must stay at or above `threshold`; repeated
    /// names keep the smallest value.
    pub fn record_lower(&mut self, name: impl Into<String>, value: f64, threshold: f64) {
        let name = name.into();
        match self.entries.get(&name) {
            Some(prev) if prev.bound == Bound::Lower && prev.residual <= value => {}
            _ => {
                self.entries.insert(name, CheckEntry::lower(value, threshold));
            }
        }
    }

    pub fn skip(&mut self, name: impl Into<String>, reason: impl Into<String>) {
        self.skipped.insert(name.into(), reason.into());
    }

    pub fn merge(&mut self, other: VerificationReport) {
        for (name, e) in other.entries {
            match e.bound {
                Bound::Upper => self.record(name, e.residual, e.tolerance),
                Bound::Lower => self.record_lower(name, e.residual, e.tolerance),
            }
        }
        self.skipped.extend(other.skipped);
    }

    pub fn get(&self, name: &str) -> Option<&CheckEntry> {
        self.entries.get(name)
    }

    pub fn residual(&self, name: &str) -> Option<f64> {
        self.entries.get(name).map(|e| e.residual)
    }

    pub fn all_pass(&self) -> bool {
        self.entries.values().all(|e| e.pass)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|(_, e)| !e.pass)
            .map(|(k, _)| k.as_str())
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    pub fn from_json(text: &str) -> crate::Result<Self> {
        let report: Self = serde_json::from_str(text).map_err(|e| crate::Error::Parse(e.to_string()))?;
        for (name, e) in &report.entries {
            let expected = match e.bound {
                Bound::Upper => e.residual <= e.tolerance,
                Bound::Lower => e.residual >= e.tolerance,
            };
            if e.pass != expected {
                return Err(crate::Error::Parse(format!(
                    "check {name}: pass flag inconsistent with residual and tolerance"
                )));
            }
        }
        Ok(report)
    }
}

impl fmt::Display for VerificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, e) in &self.entries {
            let cmp = match e.bound {
                Bound::Upper => "<=",
                Bound::Lower => ">=",
            };
            writeln!(
                f,
                "[{}] {name}: {:.3e} {cmp} {:.1e}",
                if e.pass { "PASS" } else { "FAIL" },
                e.residual,
                e.tolerance
            )?;
        }
        for (name, why) in &self.skipped {
            writeln!(f, "[SKIP] {name}: {why}")?;
        }
        Ok(())
    }
}

/// JSON has no infinity; non-finite residuals are written as strings.
mod lossless_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("bad residual {other:?}"))),
            },
        }
    }
}
