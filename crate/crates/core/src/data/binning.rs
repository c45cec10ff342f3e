use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{encode_with, sorted_domain, Attribute, Dataset, RawTable, Schema};
use crate::error::{Error, Result};

/// How one attribute's raw values become bin codes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum BinRule {
    /// Values are already categorical.
    Passthrough,
    /// `k` equal-width half-open bins over `[min, max)`; out-of-range values clamp.
    EqualWidth { k: usize, min: f64, max: f64 },
    /// Bins `(-inf, c0), [c0, c1), ..., [c_last, inf)`.
    Cutpoints { cutpoints: Vec<f64> },
}

impl BinRule {
    pub fn validate(&self) -> Result<()> {
        match self {
            BinRule::Passthrough => Ok(()),
            BinRule::EqualWidth { k, min, max } => {
                if *k < 1 {
                    return Err(Error::config("equal-width binning needs k >= 1"));
                }
                if !(min.is_finite() && max.is_finite() && max > min) {
                    return Err(Error::config(format!(
                        "equal-width binning needs finite min < max, got [{min}, {max}]"
                    )));
                }
                Ok(())
            }
            BinRule::Cutpoints { cutpoints } => {
                if cutpoints.iter().any(|c| !c.is_finite()) {
                    return Err(Error::config("cutpoints must be finite"));
                }
                if cutpoints.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::config("cutpoints must be strictly increasing"));
                }
                Ok(())
            }
        }
    }

    pub fn is_numeric(&self) -> bool {
        !matches!(self, BinRule::Passthrough)
    }

    /// Number of bins, or `None` for passthrough.
    pub fn bins(&self) -> Option<usize> {
        match self {
            BinRule::Passthrough => None,
            BinRule::EqualWidth { k, .. } => Some(*k),
            BinRule::Cutpoints { cutpoints } => Some(cutpoints.len() + 1),
        }
    }

    /// Bin index of `v`. Panics on passthrough.
    pub fn bin(&self, v: f64) -> u32 {
        match self {
            BinRule::Passthrough => panic!("passthrough rule has no numeric bins"),
            BinRule::EqualWidth { k, min, max } => {
                let width = (max - min) / *k as f64;
                let raw = ((v - min) / width).floor();
                if raw < 0.0 {
                    0
                } else {
                    (raw as usize).min(k - 1) as u32
                }
            }
            BinRule::Cutpoints { cutpoints } => cutpoints.partition_point(|&c| c <= v) as u32,
        }
    }

    /// Human-readable labels for each bin.
    pub fn labels(&self) -> Vec<String> {
        match self {
            BinRule::Passthrough => Vec::new(),
            BinRule::EqualWidth { k, min, max } => {
                let width = (max - min) / *k as f64;
                (0..*k)
                    .map(|b| {
                        let lo = min + width * b as f64;
                        let hi = if b + 1 == *k { *max } else { min + width * (b + 1) as f64 };
                        format!("[{lo},{hi})")
                    })
                    .collect()
            }
            BinRule::Cutpoints { cutpoints } => {
                let mut edges = vec!["-inf".to_string()];
                edges.extend(cutpoints.iter().map(|c| c.to_string()));
                edges.push("inf".to_string());
                edges.windows(2).map(|w| format!("[{},{})", w[0], w[1])).collect()
            }
        }
    }

    fn parse_and_bin(&self, attribute: &str, cell: &str) -> Result<u32> {
        let v: f64 = cell.trim().parse().map_err(|_| Error::Type {
            attribute: attribute.to_string(),
            value: cell.to_string(),
        })?;
        if v.is_nan() {
            return Err(Error::Type {
                attribute: attribute.to_string(),
                value: cell.to_string(),
            });
        }
        Ok(self.bin(v))
    }
}

/// Per-attribute binning rules keyed by attribute name. Attributes without a
/// rule pass through unchanged.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BinningSpec {
    pub rules: BTreeMap<String, BinRule>,
}

impl BinningSpec {
    pub fn rule(&self, name: &str) -> &BinRule {
        self.rules.get(name).unwrap_or(&BinRule::Passthrough)
    }

    pub fn validate(&self) -> Result<()> {
        self.rules.values().try_for_each(BinRule::validate)
    }

    /// Encodes raw cells against an existing schema (e.g. a synthetic file
    /// checked against the real data's schema). Labels are matched first;
    /// unmatched cells of numeric attributes are binned.
    pub fn encode_against(&self, raw: &RawTable, schema: &Schema) -> Result<Dataset> {
        self.validate()?;
        encode_with(raw, schema.clone(), |i, cell| {
            let rule = self.rule(schema.name(i));
            rule.is_numeric()
                .then(|| rule.parse_and_bin(schema.name(i), cell))
        })
    }
}

/// Maps every numeric attribute to bin codes and every passthrough attribute
/// to sorted categorical codes.
pub fn discretize(raw: &RawTable, spec: &BinningSpec) -> Result<Dataset> {
    spec.validate()?;
    for name in spec.rules.keys() {
        if !raw.header.iter().any(|h| h == name) {
            return Err(Error::config(format!("binning rule for unknown attribute {name:?}")));
        }
    }
    // Numeric domains come from the rules, categorical ones from the data.
    let attrs = raw
        .header
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let rule = spec.rule(name);
            let domain = if rule.is_numeric() {
                rule.labels()
            } else {
                sorted_domain(raw, i)
            };
            Attribute::new(name.clone(), domain)
        })
        .collect();
    let schema = Schema::new(attrs)?;
    let mut columns = vec![Vec::with_capacity(raw.rows.len()); schema.d()];
    for row in &raw.rows {
        for (i, cell) in row.iter().enumerate() {
            let rule = spec.rule(schema.name(i));
            let code = if rule.is_numeric() {
                rule.parse_and_bin(schema.name(i), cell)?
            } else {
                schema.attribute(i).domain.binary_search(cell).map_err(|_| Error::Domain {
                    attribute: schema.name(i).to_string(),
                    value: cell.clone(),
                })? as u32
            };
            columns[i].push(code);
        }
    }
    Dataset::new(schema, columns)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn codes(rule: BinRule, values: &[f64]) -> Vec<u32> {
        values.iter().map(|&v| rule.bin(v)).collect()
    }

    #[test]
    fn equal_width_midpoint_split() {
        let rule = BinRule::EqualWidth { k: 2, min: 0.0, max: 10.0 };
        assert_eq!(codes(rule, &[1.0, 9.0]), vec![0, 1]);
    }

    #[test]
    fn cutpoints_are_half_open() {
        let rule = BinRule::Cutpoints { cutpoints: vec![5.0] };
        assert_eq!(codes(rule, &[4.0, 5.0, 6.0]), vec![0, 1, 1]);
    }

    #[test]
    fn equal_width_clamps_at_both_ends() {
        let rule = BinRule::EqualWidth { k: 4, min: 0.0, max: 8.0 };
        assert_eq!(codes(rule, &[8.0, 100.0, -3.0]), vec![3, 3, 0]);
    }

    #[test]
    fn invalid_rules_are_rejected() {
        assert!(BinRule::EqualWidth { k: 0, min: 0.0, max: 1.0 }.validate().is_err());
        assert!(BinRule::EqualWidth { k: 2, min: 1.0, max: 1.0 }.validate().is_err());
        assert!(BinRule::Cutpoints { cutpoints: vec![1.0, 1.0] }.validate().is_err());
    }

    #[test]
    fn discretize_mixed_table() {
        let raw = RawTable {
            header: vec!["age".into(), "sex".into()],
            rows: vec![
                vec!["23".into(), "m".into()],
                vec!["61".into(), "f".into()],
            ],
        };
        let mut spec = BinningSpec::default();
        spec.rules
            .insert("age".into(), BinRule::Cutpoints { cutpoints: vec![30.0, 50.0] });
        let ds = discretize(&raw, &spec).unwrap();
        assert_eq!(ds.schema().domain_sizes(), vec![3, 2]);
        assert_eq!(ds.column(0), &[0, 2]);
        assert_eq!(ds.column(1), &[1, 0]);
        assert_eq!(ds.schema().attribute(0).domain[1], "[30,50)");
    }

    #[test]
    fn non_numeric_value_under_numeric_rule() {
        let raw = RawTable {
            header: vec!["age".into(), "sex".into()],
            rows: vec![vec!["old".into(), "m".into()]],
        };
        let mut spec = BinningSpec::default();
        spec.rules
            .insert("age".into(), BinRule::EqualWidth { k: 2, min: 0.0, max: 1.0 });
        assert!(matches!(discretize(&raw, &spec), Err(Error::Type { .. })));
    }

    #[test]
    fn encode_against_accepts_labels_and_raw_numbers() {
        let raw = RawTable {
            header: vec!["age".into(), "sex".into()],
            rows: vec![vec!["23".into(), "m".into()], vec!["61".into(), "f".into()]],
        };
        let mut spec = BinningSpec::default();
        spec.rules.insert("age".into(), BinRule::Cutpoints { cutpoints: vec![30.0] });
        let ds = discretize(&raw, &spec).unwrap();
        let relabelled = ds.to_raw();
        assert_eq!(spec.encode_against(&relabelled, ds.schema()).unwrap(), ds);
        assert_eq!(spec.encode_against(&raw, ds.schema()).unwrap(), ds);
    }

    #[test]
    fn rule_json_shape() {
        let rule: BinRule =
            serde_json::from_str(r#"{"type":"equal_width","k":3,"min":0,"max":9}"#).unwrap();
        assert_eq!(rule, BinRule::EqualWidth { k: 3, min: 0.0, max: 9.0 });
        let rule: BinRule = serde_json::from_str(r#"{"type":"cutpoints","cutpoints":[1,2]}"#).unwrap();
        assert_eq!(rule.bins(), Some(3));
    }

    fn any_rule() -> impl Strategy<Value = BinRule> {
        prop_oneof![
            (1usize..10, -50.0f64..50.0, 0.1f64..100.0)
                .prop_map(|(k, min, w)| BinRule::EqualWidth { k, min, max: min + w }),
            proptest::collection::btree_set(-1000i32..1000, 0..8).prop_map(|s| BinRule::Cutpoints {
                cutpoints: s.into_iter().map(|c| c as f64 / 10.0).collect()
            }),
        ]
    }

    proptest! {
        #[test]
        fn binning_is_monotone(rule in any_rule(), a in -200.0f64..200.0, b in -200.0f64..200.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(rule.bin(lo) <= rule.bin(hi));
            prop_assert!((rule.bin(hi) as usize) < rule.bins().unwrap());
        }
    }
}
