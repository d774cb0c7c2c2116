use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Time,
    Coordinate,
    Velocity,
    HigherDerivative,
    Constant,
    Parameter,
    /// Named sub-expression (first integral, helper definition).
    Auxiliary,
    /// Sign-branch selector taking the values +1 and -1.
    Branch,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SymbolError {
    #[error("symbol `{0}` declared twice")]
    Duplicate(String),
    #[error("second time symbol `{0}`; a table carries at most one")]
    SecondTime(String),
}

/// Ordered, duplicate-free list of declared symbols with role tags.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SymbolTable {
    entries: Vec<(String, Role)>,
    index: HashMap<String, usize>,
}

impl SymbolTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Table of parameters with the given names; convenient for tests.
    pub fn free(names: &[&str]) -> Self {
        let mut table = Self::new();
        for n in names {
            table
                .declare(n, Role::Parameter)
                .expect("free table names must be unique");
        }
        table
    }

    pub fn declare(&mut self, name: &str, role: Role) -> Result<(), SymbolError> {
        if self.index.contains_key(name) {
            return Err(SymbolError::Duplicate(name.to_string()));
        }
        if role == Role::Time {
            if let Some(t) = self.time() {
                return Err(SymbolError::SecondTime(format!("{name} (already `{t}`)")));
            }
        }
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push((name.to_string(), role));
        Ok(())
    }

    pub fn with(mut self, name: &str, role: Role) -> Result<Self, SymbolError> {
        self.declare(name, role)?;
        Ok(self)
    }

    /// Declare unless already present with any role.
    pub fn ensure(&mut self, name: &str, role: Role) -> Result<(), SymbolError> {
        if self.contains(name) {
            return Ok(());
        }
        self.declare(name, role)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn role(&self, name: &str) -> Option<Role> {
        self.index.get(name).map(|&i| self.entries[i].1)
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn time(&self) -> Option<&str> {
        self.entries
            .iter()
            .find(|(_, r)| *r == Role::Time)
            .map(|(n, _)| n.as_str())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn with_role(&self, role: Role) -> impl Iterator<Item = &str> {
        self.entries
            .iter()
            .filter(move |(_, r)| *r == role)
            .map(|(n, _)| n.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Role)> {
        self.entries.iter().map(|(n, r)| (n.as_str(), *r))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Union of two tables; entries of `other` already present are skipped.
    pub fn merged(&self, other: &SymbolTable) -> Result<SymbolTable, SymbolError> {
        let mut out = self.clone();
        for (name, role) in other.iter() {
            if !out.contains(name) {
                out.declare(name, role)?;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_and_second_time_rejected() {
        let mut s = SymbolTable::new();
        s.declare("t", Role::Time).unwrap();
        s.declare("x", Role::Coordinate).unwrap();
        assert_eq!(
            s.declare("x", Role::Velocity),
            Err(SymbolError::Duplicate("x".into()))
        );
        assert!(matches!(s.declare("tau", Role::Time), Err(SymbolError::SecondTime(_))));
        assert_eq!(s.time(), Some("t"));
        assert_eq!(s.with_role(Role::Coordinate).collect::<Vec<_>>(), ["x"]);
    }
}
