use std::collections::VecDeque;
use std::sync::Arc;

use super::{prepare_condition, ConditionedView, Database};
use crate::conditioning::ModulatorConfig;
use crate::error::{Error, Result};
use crate::subspace::ConditionSubspace;

pub const DEFAULT_CACHE_CAPACITY: usize = 8;

/// Least-recently-used set of prepared views over one database, keyed by
/// condition name and modulator configuration.
#[derive(Debug)]
pub struct ConditionCache {
    db: Arc<Database>,
    capacity: usize,
    // most recently used at the back
    entries: VecDeque<(String, ModulatorConfig, Arc<ConditionedView>)>,
    prepares: u64,
}

impl ConditionCache {
    pub fn new(db: Arc<Database>) -> Self {
        Self::with_capacity(db, DEFAULT_CACHE_CAPACITY).expect("default capacity is positive")
    }

    pub fn with_capacity(db: Arc<Database>, capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument("cache capacity must be at least 1".into()));
        }
        Ok(Self {
            db,
            capacity,
            entries: VecDeque::with_capacity(capacity),
            prepares: 0,
        })
    }

    pub fn database(&self) -> &Arc<Database> {
        &self.db
    }

    /// Returns the cached view for `s`, preparing (and possibly evicting the
    /// least recently used view) on a miss.
    pub fn get_or_prepare(
        &mut self,
        s: &Arc<ConditionSubspace>,
        cfg: ModulatorConfig,
    ) -> Result<Arc<ConditionedView>> {
        let name = s.name();
        if let Some(pos) = self.entries.iter().position(|(n, c, _)| *n == name && *c == cfg) {
            let entry = self.entries.remove(pos).expect("position is in range");
            let view = Arc::clone(&entry.2);
            self.entries.push_back(entry);
            return Ok(view);
        }
        let view = Arc::new(prepare_condition(&self.db, s, cfg)?);
        self.prepares += 1;
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back((name, cfg, Arc::clone(&view)));
        Ok(view)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Condition names currently cached, least recently used first.
    pub fn conditions(&self) -> Vec<&str> {
        self.entries.iter().map(|(n, _, _)| n.as_str()).collect()
    }

    /// Number of views prepared so far (cache misses).
    pub fn prepares(&self) -> u64 {
        self.prepares
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::normalize;
    use crate::index::{build_index, Labels};
    use crate::subspace::{build_subspace, PromptMatrix};

    fn subspace(name: &str, axis: usize) -> Arc<ConditionSubspace> {
        let rows = (0..4)
            .map(|i| {
                let mut v = vec![0.1; 6];
                v[axis] = 1.0;
                v[(axis + 1 + i) % 6] += 0.3;
                normalize(&v).unwrap()
            })
            .collect();
        Arc::new(build_subspace(&PromptMatrix::new(name, rows).unwrap(), 2).unwrap())
    }

    #[test]
    fn evicts_least_recently_used() {
        let rows: Vec<Vec<f64>> = (0..5).map(|i| (0..6).map(|j| if j == i { 1.0 } else { 0.2 }).collect()).collect();
        let ids = (0..5).map(|i| i.to_string()).collect();
        let db = Arc::new(build_index(&rows, ids, Labels::new()).unwrap());
        let mut cache = ConditionCache::with_capacity(db, 2).unwrap();
        let (a, b, c) = (subspace("a", 0), subspace("b", 1), subspace("c", 2));
        let cfg = ModulatorConfig::default();
        cache.get_or_prepare(&a, cfg).unwrap();
        cache.get_or_prepare(&b, cfg).unwrap();
        cache.get_or_prepare(&a, cfg).unwrap();
        assert_eq!(cache.prepares(), 2);
        cache.get_or_prepare(&c, cfg).unwrap();
        assert_eq!(cache.conditions(), ["a", "c"]);
        cache.get_or_prepare(&b, cfg).unwrap();
        assert_eq!(cache.prepares(), 4);
        assert_eq!(cache.len(), 2);
        assert!(ConditionCache::with_capacity(Arc::clone(cache.database()), 0).is_err());
    }
}
