//! Per-class prototype sets exchanged between clients and servers.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// One class's (pooled, flattened) prototype and the number of samples behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPrototype {
    pub values: Vec<f64>,
    pub count: usize,
}

/// Class id -> prototype. Client-side this is the averaged set a client
/// uploads; server-side it is the global set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PrototypeSet {
    pub classes: BTreeMap<usize, ClassPrototype>,
}

impl PrototypeSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, class: usize, values: Vec<f64>, count: usize) {
        self.classes.insert(class, ClassPrototype { values, count });
    }

    pub fn get(&self, class: usize) -> Option<&ClassPrototype> {
        self.classes.get(&class)
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn class_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.classes.keys().copied()
    }

    pub fn counts(&self) -> BTreeMap<usize, usize> {
        self.classes.iter().map(|(&j, p)| (j, p.count)).collect()
    }

    /// Total number of transmitted scalars.
    pub fn scalar_count(&self) -> usize {
        self.classes.values().map(|p| p.values.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.classes.values().all(|p| p.values.iter().all(|v| v.is_finite()))
    }

    /// Canonical little-endian encoding used for digests and MACs.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.scalar_count() * 8);
        out.extend_from_slice(&(self.classes.len() as u64).to_le_bytes());
        for (&j, p) in &self.classes {
            out.extend_from_slice(&(j as u64).to_le_bytes());
            out.extend_from_slice(&(p.count as u64).to_le_bytes());
            out.extend_from_slice(&(p.values.len() as u64).to_le_bytes());
            for v in &p.values {
                out.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        out
    }

    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.canonical_bytes()).into()
    }

    /// True when both sets hold the same classes and every entry differs by
    /// at most `tol`.
    pub fn approx_eq(&self, other: &PrototypeSet, tol: f64) -> bool {
        self.classes.len() == other.classes.len()
            && self.classes.iter().zip(&other.classes).all(|((ja, a), (jb, b))| {
                ja == jb
                    && a.values.len() == b.values.len()
                    && a.values.iter().zip(&b.values).all(|(x, y)| (x - y).abs() <= tol)
            })
    }

    /// Every class vector must have the same length.
    pub fn check_uniform_dim(&self) -> Result<Option<usize>> {
        let mut dim = None;
        for (&j, p) in &self.classes {
            match dim {
                None => dim = Some(p.values.len()),
                Some(d) if d != p.values.len() => {
                    return Err(Error::Shape(format!(
                        "class {j} prototype has {} values, expected {d}",
                        p.values.len()
                    )))
                }
                _ => {}
            }
        }
        Ok(dim)
    }
}

/// A prototype set tagged with the client that uploaded it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Submission {
    pub client_id: usize,
    pub protos: PrototypeSet,
}
