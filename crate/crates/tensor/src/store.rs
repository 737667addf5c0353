//! Named parameter tensors with stable iteration order.

use crate::Precision;
use std::collections::BTreeMap;

/// Handle to one parameter tensor in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn raw(self) -> usize {
        self.0
    }
}

struct Entry {
    name: String,
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

/// Owns every trainable tensor. Registration order is the canonical
/// order for checkpoints and gradient folds.
pub struct ParamStore {
    precision: Precision,
    entries: Vec<Entry>,
    by_name: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new(precision: Precision) -> Self {
        ParamStore { precision, entries: Vec::new(), by_name: BTreeMap::new() }
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    /// Register a tensor. Panics on duplicate names or size mismatch,
    /// both of which are wiring bugs.
    pub fn add(&mut self, name: &str, rows: usize, cols: usize, mut values: Vec<f64>) -> ParamId {
        assert_eq!(
            values.len(),
            rows * cols,
            "param {name}: {} values for shape {rows}x{cols}",
            values.len()
        );
        assert!(
            !self.by_name.contains_key(name),
            "param {name}: registered twice"
        );
        self.precision.round_vec(&mut values);
        let id = ParamId(self.entries.len());
        self.entries.push(Entry { name: name.to_string(), rows, cols, values });
        self.by_name.insert(name.to_string(), id);
        id
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn shape(&self, id: ParamId) -> (usize, usize) {
        let e = &self.entries[id.0];
        (e.rows, e.cols)
    }

    pub fn values(&self, id: ParamId) -> &[f64] {
        &self.entries[id.0].values
    }

    /// Replace a tensor's values, rounding to the store precision.
    pub fn set_values(&mut self, id: ParamId, mut values: Vec<f64>) {
        let e = &mut self.entries[id.0];
        assert_eq!(
            values.len(),
            e.values.len(),
            "param {}: {} values for shape {}x{}",
            e.name,
            values.len(),
            e.rows,
            e.cols
        );
        self.precision.round_vec(&mut values);
        e.values = values;
    }

    /// All ids in registration order.
    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    /// Total scalar count across all tensors.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|e| e.values.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registration_order_is_stable() {
        let mut s = ParamStore::new(Precision::F64);
        let a = s.add("b.weight", 2, 2, vec![0.0; 4]);
        let b = s.add("a.weight", 1, 2, vec![0.0; 2]);
        let names: Vec<&str> = s.ids().map(|id| s.name(id)).collect();
        assert_eq!(names, ["b.weight", "a.weight"]);
        assert_eq!(s.id_of("b.weight"), Some(a));
        assert_eq!(s.id_of("a.weight"), Some(b));
        assert_eq!(s.scalar_count(), 6);
    }

    #[test]
    fn f32_store_rounds_values() {
        let mut s = ParamStore::new(Precision::F32);
        let id = s.add("w", 1, 1, vec![0.1f64]);
        assert_eq!(s.values(id)[0], 0.1f32 as f64);
        s.set_values(id, vec![0.2f64]);
        assert_eq!(s.values(id)[0], 0.2f32 as f64);
    }

    #[test]
    #[should_panic(expected = "registered twice")]
    fn duplicate_names_panic() {
        let mut s = ParamStore::new(Precision::F64);
        s.add("w", 1, 1, vec![0.0]);
        s.add("w", 1, 1, vec![0.0]);
    }
}
