use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BinRule, BinningSpec, CIConstraint, RoleAssignment, Schema};
use crate::error::{Error, Result};

/// Role sets by attribute name, as written in the configuration file.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoleNames {
    #[serde(rename = "S", default)]
    pub s: Vec<String>,
    #[serde(rename = "O", default)]
    pub o: Vec<String>,
    #[serde(rename = "A", default)]
    pub a: Vec<String>,
    #[serde(rename = "I", default)]
    pub i: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintNames {
    #[serde(rename = "X")]
    pub x: Vec<String>,
    #[serde(rename = "Y")]
    pub y: Vec<String>,
    #[serde(rename = "Z")]
    pub z: Vec<String>,
}

/// The JSON run configuration:
///
/// ```json
/// { "roles": {"S": ["sex"], "O": ["income"], "A": ["edu"], "I": ["age"]},
///   "binning": {"age": {"type": "equal_width", "k": 4, "min": 17, "max": 90}},
///   "constraint": {"X": ["sex"], "Y": ["income"], "Z": ["edu"]} }
/// ```
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub roles: RoleNames,
    #[serde(default)]
    pub binning: BTreeMap<String, BinRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraint: Option<ConstraintNames>,
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Config = serde_json::from_str(text)?;
        cfg.binning_spec().validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Config::from_json(&text)
    }

    pub fn binning_spec(&self) -> BinningSpec {
        BinningSpec {
            rules: self.binning.clone(),
        }
    }

    /// Resolves attribute names to indices of `schema`.
    pub fn resolve(&self, schema: &Schema) -> Result<(RoleAssignment, Option<CIConstraint>)> {
        let roles = RoleAssignment {
            s: indices(schema, &self.roles.s)?,
            o: indices(schema, &self.roles.o)?,
            a: indices(schema, &self.roles.a)?,
            i: indices(schema, &self.roles.i)?,
        };
        let ci = match &self.constraint {
            None => None,
            Some(c) => Some(CIConstraint {
                x: indices(schema, &c.x)?,
                y: indices(schema, &c.y)?,
                z: indices(schema, &c.z)?,
            }),
        };
        Ok((roles, ci))
    }
}

fn indices(schema: &Schema, names: &[String]) -> Result<std::collections::BTreeSet<usize>> {
    names
        .iter()
        .map(|n| {
            schema
                .index_of(n)
                .ok_or_else(|| Error::config(format!("unknown attribute {n:?} in configuration")))
        })
        .collect()
}
