use std::collections::BTreeMap;

use super::{Grads, Tape, Tensor};
use crate::error::{Error, Result};

/// One trainable tensor with its gradient and optimizer moment slots.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub value: Tensor,
    pub grad: Tensor,
    pub m: Tensor,
    pub v: Tensor,
}

impl ParamEntry {
    fn new(value: Tensor) -> Self {
        let z = Tensor::zeros(value.shape());
        Self { grad: z.clone(), m: z.clone(), v: z, value }
    }
}

/// Named parameter collection. Iteration order is by name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: BTreeMap<String, ParamEntry>,
    /// Number of optimizer steps applied (Adam bias correction).
    pub(crate) steps: u64,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter `{name}`")));
        }
        self.entries.insert(name, ParamEntry::new(value));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn value(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name).map(|e| &e.value)
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name).map(|e| &e.grad)
    }

    pub fn entry_mut(&mut self, name: &str) -> Option<&mut ParamEntry> {
        self.entries.get_mut(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub(crate) fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut ParamEntry)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }

    /// Replace a value, keeping its shape.
    pub fn set_value(&mut self, name: &str, value: Tensor) -> Result<()> {
        let e = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::invalid(format!("unknown parameter `{name}`")))?;
        if e.value.shape() != value.shape() {
            return Err(Error::shape(
                "set_value",
                format!("`{name}`: {:?} vs {:?}", e.value.shape(), value.shape()),
            ));
        }
        e.value = value;
        Ok(())
    }

    /// Add the gradients of every tape node recorded from this set.
    pub fn accumulate(&mut self, tape: &Tape, grads: &Grads) {
        for (name, var) in tape.param_nodes() {
            if let (Some(e), Some(g)) = (self.entries.get_mut(name), grads.get(var)) {
                e.grad.add_assign(g);
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for e in self.entries.values_mut() {
            e.grad.data_mut().fill(0.0);
        }
    }

    /// Copy values (not optimizer state) from `other`, which must have the
    /// same names and shapes.
    pub fn copy_values_from(&mut self, other: &ParamSet) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::invalid("parameter sets differ in size"));
        }
        for (name, src) in &other.entries {
            self.set_value(name, src.value.clone())?;
        }
        Ok(())
    }

    /// True when every value is bit-identical to `other`'s.
    pub fn values_bit_equal(&self, other: &ParamSet) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|((ka, a), (kb, b))| {
                ka == kb
                    && a.value.shape() == b.value.shape()
                    && a.value.data().iter().zip(b.value.data()).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }

    /// FNV-1a over names and value bits; cheap change detection.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |b: u8| {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        };
        for (name, e) in &self.entries {
            name.bytes().for_each(&mut eat);
            for v in e.value.data() {
                v.to_bits().to_le_bytes().into_iter().for_each(&mut eat);
            }
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::zeros(&[2])).unwrap();
        assert!(p.insert("w", Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn accumulate_collects_every_use() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::scalar(3.0)).unwrap();
        let mut tape = Tape::new();
        let a = tape.param(&p, "w").unwrap();
        let b = tape.param(&p, "w").unwrap();
        let y = tape.mul(a, b).unwrap();
        let g = tape.backward(y).unwrap();
        p.accumulate(&tape, &g);
        assert_eq!(p.grad("w").unwrap().data(), &[6.0]);
        let e = p.entry_mut("w").unwrap();
        assert_eq!(e.m.shape(), e.value.shape());
    }

    #[test]
    fn fingerprint_tracks_values() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::scalar(1.0)).unwrap();
        let before = p.fingerprint();
        p.set_value("w", Tensor::scalar(1.5)).unwrap();
        assert_ne!(before, p.fingerprint());
        assert!(p.set_value("w", Tensor::zeros(&[2])).is_err());
    }
}
