use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};

use super::{MemoryStore, StoreError};

/// A store shared between processes.
///
/// Readers take a snapshot (an `Arc` to an immutable store) and never see a
/// partially applied write. Writers are serialized: each write clones the
/// current store, mutates the clone and publishes it in one swap.
#[derive(Debug, Clone, Default)]
pub struct SharedStore {
    current: Arc<RwLock<Arc<MemoryStore>>>,
    writer: Arc<Mutex<()>>,
}

impl SharedStore {
    pub fn new(store: MemoryStore) -> Self {
        Self { current: Arc::new(RwLock::new(Arc::new(store))), writer: Arc::new(Mutex::new(())) }
    }

    pub fn snapshot(&self) -> Arc<MemoryStore> {
        self.current.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Runs `f` against a private copy and publishes it only on `Ok`.
    pub fn write<T, E>(&self, f: impl FnOnce(&mut MemoryStore) -> Result<T, E>) -> Result<T, E> {
        let _guard = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        let mut next = (*self.snapshot()).clone();
        let out = f(&mut next)?;
        *self.current.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(next);
        Ok(out)
    }

    pub fn persist(&self, dir: &Path) -> Result<(), StoreError> {
        self.write(|s| s.persist(dir))
    }

    pub fn into_inner(self) -> MemoryStore {
        (*self.snapshot()).clone()
    }
}
