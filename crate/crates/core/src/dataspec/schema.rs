use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Continuous,
    Ordinal,
    Categorical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mutability {
    Immutable,
    Actionable,
    MutableNotActionable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MonotoneDirection {
    IncreaseOnly,
    DecreaseOnly,
    Free,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChangeRate {
    Constant,
    Slow,
    Seldom,
    Fast,
}

/// Admissible values of a feature: a closed interval for continuous and
/// ordinal features, a finite list of labels for categorical ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FeatureRange {
    Interval { lower: f64, upper: f64 },
    Categories { categories: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    pub range: FeatureRange,
    pub mutability: Mutability,
    pub monotone_direction: MonotoneDirection,
    pub change_rate: ChangeRate,
    pub effort_weight: f64,
    #[serde(default)]
    pub couples_with: Option<String>,
}

impl FeatureSpec {
    pub fn is_immutable(&self) -> bool {
        self.mutability == Mutability::Immutable
    }

    pub fn is_categorical(&self) -> bool {
        self.kind == FeatureKind::Categorical
    }

    /// Numeric bounds of the feature. Categorical features map to
    /// `[0, k - 1]` over their category indices.
    pub fn bounds(&self) -> (f64, f64) {
        match &self.range {
            FeatureRange::Interval { lower, upper } => (*lower, *upper),
            FeatureRange::Categories { categories } => {
                (0.0, categories.len().saturating_sub(1) as f64)
            }
        }
    }

    pub fn width(&self) -> f64 {
        let (lo, hi) = self.bounds();
        hi - lo
    }

    /// Whether `value` is an admissible value: inside the interval, on an
    /// integer level for ordinals, a valid index for categoricals.
    pub fn admits(&self, value: f64) -> bool {
        if !value.is_finite() {
            return false;
        }
        let (lo, hi) = self.bounds();
        if value < lo || value > hi {
            return false;
        }
        match self.kind {
            FeatureKind::Continuous => true,
            FeatureKind::Ordinal | FeatureKind::Categorical => value.fract() == 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidSchema(format!("feature `{}`: {msg}", self.name)));
        match (&self.range, self.kind) {
            (FeatureRange::Interval { lower, upper }, FeatureKind::Continuous | FeatureKind::Ordinal) => {
                if !lower.is_finite() || !upper.is_finite() || lower > upper {
                    return bad("interval must be finite with lower <= upper");
                }
                if self.kind == FeatureKind::Ordinal && lower.ceil() > upper.floor() {
                    return bad("ordinal interval contains no integer level");
                }
            }
            (FeatureRange::Categories { categories }, FeatureKind::Categorical) => {
                if categories.is_empty() {
                    return bad("categorical range is empty");
                }
            }
            _ => return bad("range shape does not match kind"),
        }
        if !(self.effort_weight >= 0.0 && self.effort_weight.is_finite()) {
            return bad("effort_weight must be finite and nonnegative");
        }
        if self.change_rate == ChangeRate::Constant && !self.is_immutable() {
            return bad("constant change rate requires an immutable feature");
        }
        Ok(())
    }
}

/// Ordered feature metadata; instance values are indexed in this order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub features: Vec<FeatureSpec>,
}

impl FeatureSchema {
    pub fn new(features: Vec<FeatureSpec>) -> Result<Self> {
        let schema = Self { features };
        schema.validate()?;
        Ok(schema)
    }

    /// `dim` free continuous features named `x0, x1, ...` sharing one interval.
    pub fn uniform_box(dim: usize, lower: f64, upper: f64) -> Result<Self> {
        Self::new(
            (0..dim)
                .map(|j| FeatureSpec {
                    name: format!("x{j}"),
                    kind: FeatureKind::Continuous,
                    range: FeatureRange::Interval { lower, upper },
                    mutability: Mutability::Actionable,
                    monotone_direction: MonotoneDirection::Free,
                    change_rate: ChangeRate::Fast,
                    effort_weight: 1.0,
                    couples_with: None,
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.features.iter().map(|f| f.name.as_str())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    /// Index of the partner feature each feature is coupled with, if any.
    pub fn coupling(&self, feature: usize) -> Option<usize> {
        self.features[feature]
            .couples_with
            .as_deref()
            .and_then(|name| self.index_of(name))
    }

    pub fn validate(&self) -> Result<()> {
        for (i, f) in self.features.iter().enumerate() {
            f.validate()?;
            if self.features[..i].iter().any(|g| g.name == f.name) {
                return Err(Error::InvalidSchema(format!("duplicate feature `{}`", f.name)));
            }
            if let Some(partner) = &f.couples_with {
                if partner == &f.name || self.index_of(partner).is_none() {
                    return Err(Error::InvalidSchema(format!(
                        "feature `{}` couples with unknown feature `{partner}`",
                        f.name
                    )));
                }
            }
        }
        Ok(())
    }

    /// Checks a value vector against every feature range. `row` is used
    /// for error reporting only.
    pub fn check_values(&self, values: &[f64], row: usize) -> Result<()> {
        crate::error::check_dim(self.len(), values.len())?;
        for (spec, &value) in self.features.iter().zip(values) {
            if !spec.admits(value) {
                return Err(Error::OutOfRange {
                    feature: spec.name.clone(),
                    row,
                    value,
                });
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let schema: FeatureSchema = serde_json::from_str(text)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }
}

/// The six-feature credit schema used throughout the repository.
///
/// Units are scaled so every feature is O(1): age and employment in
/// decades, income and savings in units of 10,000 currency.
pub fn reference_schema() -> FeatureSchema {
    use ChangeRate::*;
    use FeatureKind::*;
    use MonotoneDirection::*;
    use Mutability::*;

    let interval = |lower, upper| FeatureRange::Interval { lower, upper };
    let features = vec![
        FeatureSpec {
            name: "age".into(),
            kind: Continuous,
            range: interval(1.8, 8.0),
            mutability: MutableNotActionable,
            monotone_direction: IncreaseOnly,
            change_rate: Slow,
            effort_weight: 2.0,
            couples_with: None,
        },
        FeatureSpec {
            name: "income".into(),
            kind: Continuous,
            range: interval(0.0, 15.0),
            mutability: Actionable,
            monotone_direction: Free,
            change_rate: Fast,
            effort_weight: 1.0,
            couples_with: None,
        },
        FeatureSpec {
            name: "savings".into(),
            kind: Continuous,
            range: interval(0.0, 10.0),
            mutability: Actionable,
            monotone_direction: Free,
            change_rate: Fast,
            effort_weight: 1.0,
            couples_with: None,
        },
        FeatureSpec {
            name: "education_level".into(),
            kind: Ordinal,
            range: interval(0.0, 4.0),
            mutability: Actionable,
            monotone_direction: IncreaseOnly,
            change_rate: Slow,
            effort_weight: 1.5,
            couples_with: Some("age".into()),
        },
        FeatureSpec {
            name: "employment_years".into(),
            kind: Continuous,
            range: interval(0.0, 4.0),
            mutability: Actionable,
            monotone_direction: IncreaseOnly,
            change_rate: Slow,
            effort_weight: 1.5,
            couples_with: None,
        },
        FeatureSpec {
            name: "nationality".into(),
            kind: Categorical,
            range: FeatureRange::Categories {
                categories: vec!["a".into(), "b".into(), "c".into()],
            },
            mutability: Immutable,
            monotone_direction: Free,
            change_rate: Seldom,
            effort_weight: 0.0,
            couples_with: None,
        },
    ];
    FeatureSchema::new(features).expect("reference schema is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_schema_covers_every_branch() {
        let s = reference_schema();
        assert_eq!(s.len(), 6);
        let muts: Vec<_> = s.features.iter().map(|f| f.mutability).collect();
        assert!(muts.contains(&Mutability::Immutable));
        assert!(muts.contains(&Mutability::Actionable));
        assert!(muts.contains(&Mutability::MutableNotActionable));
        assert_eq!(s.coupling(3), Some(0));
        assert_eq!(s.coupling(0), None);
    }

    #[test]
    fn schema_json_round_trip() {
        let s = reference_schema();
        let back = FeatureSchema::from_json(&s.to_json()).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn rejects_inverted_interval_and_constant_mutable() {
        let mut s = reference_schema();
        s.features[1].range = FeatureRange::Interval { lower: 3.0, upper: 1.0 };
        assert!(matches!(s.validate(), Err(Error::InvalidSchema(_))));

        let mut s = reference_schema();
        s.features[1].change_rate = ChangeRate::Constant;
        assert!(matches!(s.validate(), Err(Error::InvalidSchema(_))));
    }

    #[test]
    fn rejects_unknown_partner() {
        let mut s = reference_schema();
        s.features[3].couples_with = Some("height".into());
        assert!(s.validate().is_err());
    }

    #[test]
    fn admits_levels_and_indices() {
        let s = reference_schema();
        assert!(s.features[3].admits(2.0));
        assert!(!s.features[3].admits(2.5));
        assert!(s.features[5].admits(2.0));
        assert!(!s.features[5].admits(3.0));
        assert!(!s.features[1].admits(f64::NAN));
    }
}
