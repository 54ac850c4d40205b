use sha2::{Digest, Sha256};

use super::{checkpoint, NnError, Result};
use crate::tensor::{Tape, Tensor};

/// Ordered, uniquely named collection of model parameters.
///
/// Order is part of the contract: gradients and optimizer moments are
/// zipped with entries positionally.
#[derive(Clone, Debug, Default)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

/// Parameters that count as weights (and receive L2 decay) rather than
/// biases.
pub fn is_weight(name: &str) -> bool {
    name.ends_with(".weight") || name.ends_with(".kernel")
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: Vec<(String, Tensor)>) -> Result<Self> {
        let mut set = Self::new();
        for (name, t) in entries {
            set.push(name, t)?;
        }
        Ok(set)
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(NnError::DuplicateParam(name));
        }
        self.entries.push((name, tensor));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        self.entries.iter().map(|(_, t)| t.clone()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name).ok_or_else(|| NnError::MissingParam(name.to_string()))
    }

    /// Same names and order, new values. Shapes must match.
    pub fn with_tensors(&self, tensors: Vec<Tensor>) -> Result<Self> {
        if tensors.len() != self.len() {
            return Err(NnError::Misaligned {
                params: self.len(),
                grads: tensors.len(),
            });
        }
        let mut entries = Vec::with_capacity(self.len());
        for ((name, old), new) in self.entries.iter().zip(tensors) {
            if old.shape() != new.shape() {
                return Err(NnError::ParamShape {
                    name: name.clone(),
                    expected: old.shape().to_vec(),
                    actual: new.shape().to_vec(),
                });
            }
            entries.push((name.clone(), new));
        }
        Ok(Self { entries })
    }

    /// Copy with fresh storage and no tape attachment.
    pub fn deep_clone(&self) -> Self {
        Self {
            entries: self.entries.iter().map(|(n, t)| (n.clone(), t.deep_clone())).collect(),
        }
    }

    pub fn detach(&self) -> Self {
        Self {
            entries: self.entries.iter().map(|(n, t)| (n.clone(), t.detach())).collect(),
        }
    }

    /// Register every entry as a leaf on `tape`.
    pub fn watch(&self, tape: &Tape) -> Self {
        Self {
            entries: self.entries.iter().map(|(n, t)| (n.clone(), tape.watch(t))).collect(),
        }
    }

    pub fn requires_grad(&self) -> bool {
        self.entries.iter().any(|(_, t)| t.requires_grad())
    }

    /// Bitwise equality of names, shapes and values.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.len() == other.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|((a, x), (b, y))| a == b && x.bit_eq(y))
    }

    /// Total number of scalar parameters.
    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Hex SHA-256 of the checkpoint encoding.
    pub fn checksum(&self) -> String {
        let mut bytes = Vec::new();
        checkpoint::write_params(&mut bytes, self).expect("writing to a Vec cannot fail");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Entries renamed to `prefix.name`.
    pub fn prefixed(&self, prefix: &str) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (format!("{prefix}.{n}"), t.clone()))
                .collect(),
        }
    }

    /// Entries under `prefix.`, with the prefix removed.
    pub fn strip_prefix(&self, prefix: &str) -> Self {
        let p = format!("{prefix}.");
        Self {
            entries: self
                .entries
                .iter()
                .filter_map(|(n, t)| n.strip_prefix(&p).map(|s| (s.to_string(), t.clone())))
                .collect(),
        }
    }

    /// Concatenate two sets; names must stay unique.
    pub fn merged(&self, other: &Self) -> Result<Self> {
        let mut out = self.clone();
        for (n, t) in &other.entries {
            out.push(n.clone(), t.clone())?;
        }
        Ok(out)
    }

    /// Keep only entries accepted by `keep`.
    pub fn filtered(&self, mut keep: impl FnMut(&str) -> bool) -> Self {
        Self {
            entries: self.entries.iter().filter(|(n, _)| keep(n)).cloned().collect(),
        }
    }
}
