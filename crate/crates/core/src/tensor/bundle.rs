use std::collections::BTreeMap;

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Gradients keyed by parameter name. Names are dotted paths such as
/// `blocks.0.reduce.weight`; iteration order is lexicographic.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBundle<T> {
    entries: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> Default for GradBundle<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> GradBundle<T> {
    pub fn new() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, grad: Tensor<T>) {
        self.entries.insert(name.into(), grad);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.entries.get_mut(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Adds `grad` into the entry `name`, creating it if absent.
    pub fn accumulate(&mut self, name: &str, grad: &Tensor<T>) -> Result<()> {
        match self.entries.get_mut(name) {
            Some(existing) => existing.add_assign(grad),
            None => {
                self.entries.insert(name.to_string(), grad.clone());
                Ok(())
            }
        }
    }

    /// Moves every entry of `other` into `self` under `prefix.`.
    pub fn merge_prefixed(&mut self, prefix: &str, other: GradBundle<T>) -> Result<()> {
        for (name, grad) in other.entries {
            let key = if prefix.is_empty() {
                name
            } else {
                format!("{prefix}.{name}")
            };
            self.accumulate(&key, &grad)?;
        }
        Ok(())
    }

    /// `self += alpha * other`, entry-wise; entries missing from `self` are
    /// created.
    pub fn add_scaled(&mut self, alpha: T, other: &GradBundle<T>) -> Result<()> {
        for (name, grad) in &other.entries {
            match self.entries.get_mut(name) {
                Some(existing) => existing.axpy(alpha, grad)?,
                None => {
                    self.entries.insert(name.clone(), grad.scale(alpha));
                }
            }
        }
        Ok(())
    }

    /// Largest absolute element difference over all entries. Both bundles
    /// must hold the same names.
    pub fn max_abs_diff(&self, other: &GradBundle<T>) -> Result<T> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::Gradient(format!(
                "bundles differ in size: {} vs {}",
                self.entries.len(),
                other.entries.len()
            )));
        }
        let mut worst = T::zero();
        for (name, grad) in &self.entries {
            let rhs = other
                .entries
                .get(name)
                .ok_or_else(|| Error::Gradient(format!("missing entry {name}")))?;
            worst = worst.max(grad.max_abs_diff(rhs)?);
        }
        Ok(worst)
    }

    pub fn is_finite(&self) -> bool {
        self.entries.values().all(Tensor::is_finite)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accumulate_and_prefix() {
        let mut inner = GradBundle::<f64>::new();
        inner.insert("weight", Tensor::full(&[2], 1.0));
        let mut outer = GradBundle::new();
        outer.merge_prefixed("conv", inner.clone()).unwrap();
        outer.merge_prefixed("conv", inner).unwrap();
        assert_eq!(outer.get("conv.weight").unwrap().data(), &[2.0, 2.0]);
        assert_eq!(outer.names().collect::<Vec<_>>(), vec!["conv.weight"]);
    }

    #[test]
    fn add_scaled_is_axpy() {
        let mut a = GradBundle::<f64>::new();
        a.insert("x", Tensor::full(&[3], 1.0));
        let mut b = GradBundle::new();
        b.insert("x", Tensor::full(&[3], 2.0));
        b.insert("y", Tensor::full(&[1], 4.0));
        a.add_scaled(0.5, &b).unwrap();
        assert_eq!(a.get("x").unwrap().data(), &[2.0; 3]);
        assert_eq!(a.get("y").unwrap().data(), &[2.0]);
    }
}
