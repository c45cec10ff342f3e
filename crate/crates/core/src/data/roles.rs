use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::Schema;
use crate::error::{Error, Result};

/// Partition of the attributes into protected (`s`), outcome (`o`),
/// admissible (`a`) and inadmissible (`i`) sets.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleAssignment {
    pub s: BTreeSet<usize>,
    pub o: BTreeSet<usize>,
    pub a: BTreeSet<usize>,
    pub i: BTreeSet<usize>,
}

impl RoleAssignment {
    pub fn new(s: &[usize], o: &[usize], a: &[usize], i: &[usize]) -> Self {
        RoleAssignment {
            s: s.iter().copied().collect(),
            o: o.iter().copied().collect(),
            a: a.iter().copied().collect(),
            i: i.iter().copied().collect(),
        }
    }

    /// The fairness constraint `S ⊥ O | A`.
    pub fn default_constraint(&self) -> CIConstraint {
        CIConstraint {
            x: self.s.clone(),
            y: self.o.clone(),
            z: self.a.clone(),
        }
    }
}

/// Conditional independence `X ⊥ Y | Z` over attribute indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CIConstraint {
    pub x: BTreeSet<usize>,
    pub y: BTreeSet<usize>,
    pub z: BTreeSet<usize>,
}

impl CIConstraint {
    pub fn new(x: &[usize], y: &[usize], z: &[usize]) -> Self {
        CIConstraint {
            x: x.iter().copied().collect(),
            y: y.iter().copied().collect(),
            z: z.iter().copied().collect(),
        }
    }

    /// Checks the constraint's own invariants against `d` attributes.
    pub fn validate(&self, d: usize) -> Result<()> {
        for (name, set) in [("X", &self.x), ("Y", &self.y), ("Z", &self.z)] {
            if let Some(&bad) = set.iter().find(|&&v| v >= d) {
                return Err(Error::config(format!(
                    "constraint set {name} names attribute index {bad}, but there are only {d}"
                )));
            }
        }
        if self.x.is_empty() {
            return Err(Error::config("constraint X is empty"));
        }
        if self.y.is_empty() {
            return Err(Error::config("constraint Y is empty"));
        }
        if self.z.is_empty() {
            return Err(Error::config("empty conditioning set"));
        }
        let pairs = [
            ("X", &self.x, "Y", &self.y),
            ("X", &self.x, "Z", &self.z),
            ("Y", &self.y, "Z", &self.z),
        ];
        for (an, a, bn, b) in pairs {
            if let Some(v) = a.intersection(b).next() {
                return Err(Error::config(format!(
                    "constraint sets overlap: attribute {v} is in both {an} and {bn}"
                )));
            }
        }
        Ok(())
    }

    pub fn in_x(&self, v: usize) -> bool {
        self.x.contains(&v)
    }

    pub fn in_y(&self, v: usize) -> bool {
        self.y.contains(&v)
    }

    pub fn in_z(&self, v: usize) -> bool {
        self.z.contains(&v)
    }
}

/// A role partition that passed validation, with its constraint.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckedConfig {
    pub roles: RoleAssignment,
    pub constraint: CIConstraint,
}

/// Checks only the partition rules: in range, pairwise disjoint, covering,
/// nonempty `S` and `O`.
pub fn validate_partition(schema: &Schema, roles: &RoleAssignment) -> Result<()> {
    let d = schema.d();
    let sets = [("S", &roles.s), ("O", &roles.o), ("A", &roles.a), ("I", &roles.i)];
    for (name, set) in sets {
        if let Some(&bad) = set.iter().find(|&&v| v >= d) {
            return Err(Error::config(format!(
                "role set {name} names attribute index {bad}, but there are only {d}"
            )));
        }
    }
    for (k, (an, a)) in sets.iter().enumerate() {
        for (bn, b) in &sets[k + 1..] {
            if let Some(&v) = a.intersection(b).next() {
                return Err(Error::config(format!(
                    "roles overlap: attribute {:?} is in both {an} and {bn}",
                    schema.name(v)
                )));
            }
        }
    }
    if let Some(v) = (0..d).find(|v| !sets.iter().any(|(_, s)| s.contains(v))) {
        return Err(Error::config(format!(
            "uncovered attribute {:?} has no role",
            schema.name(v)
        )));
    }
    if roles.s.is_empty() {
        return Err(Error::config("protected set S is empty"));
    }
    if roles.o.is_empty() {
        return Err(Error::config("outcome set O is empty"));
    }
    Ok(())
}

/// Validates the role partition and the constraint. With no explicit
/// constraint the default `S ⊥ O | A` is used.
pub fn validate_roles(
    schema: &Schema,
    roles: &RoleAssignment,
    ci: Option<&CIConstraint>,
) -> Result<CheckedConfig> {
    validate_partition(schema, roles)?;
    let constraint = ci.cloned().unwrap_or_else(|| roles.default_constraint());
    constraint.validate(schema.d())?;
    Ok(CheckedConfig {
        roles: roles.clone(),
        constraint,
    })
}
