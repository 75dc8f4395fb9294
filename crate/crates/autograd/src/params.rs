use std::sync::atomic::{AtomicU64, Ordering};

use crate::tensor::Tensor;

static NEXT_STORE: AtomicU64 = AtomicU64::new(1);

/// Handle to one parameter array inside a specific [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId {
    store: u64,
    index: usize,
}

impl ParamId {
    pub fn index(&self) -> usize {
        self.index
    }

    pub(crate) fn store(&self) -> u64 {
        self.store
    }
}

/// Named, ordered collection of parameter arrays.
///
/// Names are unique and insertion order is stable, so two stores built by the
/// same constructor line up entry by entry.
#[derive(Debug)]
pub struct ParamStore {
    id: u64,
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl Clone for ParamStore {
    /// A clone is an independent store: handles from the original do not resolve in it.
    fn clone(&self) -> Self {
        ParamStore {
            id: NEXT_STORE.fetch_add(1, Ordering::Relaxed),
            names: self.names.clone(),
            values: self.values.clone(),
        }
    }
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore { id: NEXT_STORE.fetch_add(1, Ordering::Relaxed), names: Vec::new(), values: Vec::new() }
    }

    pub(crate) fn id(&self) -> u64 {
        self.id
    }

    /// Registers a new parameter. Panics on a duplicate name.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter name {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId { store: self.id, index: self.values.len() - 1 }
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        assert_eq!(id.store, self.id, "parameter handle belongs to another store");
        &self.values[id.index]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        assert_eq!(id.store, self.id, "parameter handle belongs to another store");
        &mut self.values[id.index]
    }

    pub fn id_at(&self, index: usize) -> ParamId {
        assert!(index < self.values.len());
        ParamId { store: self.id, index }
    }

    pub fn name(&self, id: ParamId) -> &str {
        assert_eq!(id.store, self.id);
        &self.names[id.index]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(|index| ParamId { store: self.id, index })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.values.len()).map(|index| ParamId { store: self.id, index })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Total number of trainable scalars.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }
}
