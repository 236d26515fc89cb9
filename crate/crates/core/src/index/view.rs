use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use super::{rotation_for, Database, RankedHit, Retriever};
use crate::conditioning::{cosine_from_dot, modulate, modulate_into, ModulatorConfig, Workspace};
use crate::error::{Error, Result};
use crate::geometry::{dot_f32, norm, Rotation, UnitVector};
use crate::subspace::ConditionSubspace;

const ROWS_PER_TASK: usize = 64;

/// Vector operations performed while populating a view.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct PrepareStats {
    pub rows: u64,
    pub rotations: u64,
    pub log_maps: u64,
    /// Thin products with the basis; two per row (`V_k^T x`, then `V_k c`).
    pub basis_products: u64,
    /// Rows whose modulated feature has (near) zero norm.
    pub zero_rows: u64,
}

/// A database with every row modulated under one condition.
#[derive(Debug)]
pub struct ConditionedView {
    db: Arc<Database>,
    subspace: Arc<ConditionSubspace>,
    rotation: Rotation,
    cfg: ModulatorConfig,
    cache: Vec<f32>,
    cache_norms: Vec<f64>,
    stats: PrepareStats,
}

/// Modulates and caches every database row under `s`. Reads only the stored
/// features; no encoder is involved.
pub fn prepare_condition(
    db: &Arc<Database>,
    s: &Arc<ConditionSubspace>,
    cfg: ModulatorConfig,
) -> Result<ConditionedView> {
    if db.dim() != s.dim() {
        return Err(Error::DimensionMismatch {
            expected: db.dim(),
            actual: s.dim(),
        });
    }
    let rotation = rotation_for(db, s, &cfg)?;
    cfg.check(s, &rotation)?;

    let d = db.dim();
    let n = db.len();
    let mut cache = vec![0.0f32; n * d];
    let mut cache_norms = vec![0.0f64; n];
    let counters = [AtomicU64::new(0), AtomicU64::new(0), AtomicU64::new(0), AtomicU64::new(0), AtomicU64::new(0)];
    let source = db.embeddings();

    cache
        .par_chunks_mut(d * ROWS_PER_TASK)
        .zip(cache_norms.par_chunks_mut(ROWS_PER_TASK))
        .enumerate()
        .try_for_each_init(
            || (Workspace::new(d, s.k()), vec![0.0f64; d], vec![0.0f64; d]),
            |(ws, row, out), (block, (cache_block, norm_block))| -> Result<()> {
                let first = block * ROWS_PER_TASK;
                let mut zero_rows = 0;
                for (offset, (dst, dst_norm)) in cache_block.chunks_exact_mut(d).zip(norm_block.iter_mut()).enumerate() {
                    widen_normalized(source.row(first + offset), row);
                    modulate_into(s, &rotation, row, &cfg, ws, out)?;
                    for (c, &x) in dst.iter_mut().zip(out.iter()) {
                        *c = x as f32;
                    }
                    *dst_norm = dst.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
                    if *dst_norm <= crate::conditioning::ZERO_PROJECTION_NORM {
                        zero_rows += 1;
                    }
                }
                let rows = norm_block.len() as u64;
                counters[0].fetch_add(rows, Ordering::Relaxed);
                if cfg.use_rotation {
                    counters[1].fetch_add(rows, Ordering::Relaxed);
                }
                if cfg.use_manifold {
                    counters[2].fetch_add(rows, Ordering::Relaxed);
                }
                counters[3].fetch_add(2 * rows, Ordering::Relaxed);
                counters[4].fetch_add(zero_rows, Ordering::Relaxed);
                Ok(())
            },
        )?;

    let [rows, rotations, log_maps, basis_products, zero_rows] = counters.map(AtomicU64::into_inner);
    Ok(ConditionedView {
        db: Arc::clone(db),
        subspace: Arc::clone(s),
        rotation,
        cfg,
        cache,
        cache_norms,
        stats: PrepareStats {
            rows,
            rotations,
            log_maps,
            basis_products,
            zero_rows,
        },
    })
}

fn widen_normalized(src: &[f32], dst: &mut [f64]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = f64::from(s);
    }
    let n = norm(dst);
    dst.iter_mut().for_each(|x| *x /= n);
}

impl ConditionedView {
    pub fn subspace(&self) -> &ConditionSubspace {
        &self.subspace
    }

    pub fn rotation(&self) -> &Rotation {
        &self.rotation
    }

    pub fn config(&self) -> &ModulatorConfig {
        &self.cfg
    }

    pub fn stats(&self) -> PrepareStats {
        self.stats
    }

    /// Cached modulated feature of row `i`.
    pub fn cached_row(&self, i: usize) -> &[f32] {
        let d = self.db.dim();
        &self.cache[i * d..(i + 1) * d]
    }

    pub fn cached_norm(&self, i: usize) -> f64 {
        self.cache_norms[i]
    }

    /// Raw bytes of the cache, for determinism checks.
    pub fn cache(&self) -> &[f32] {
        &self.cache
    }

    /// Modulates an arbitrary query with this view's rotation and subspace.
    pub fn modulate_query(&self, query: &UnitVector) -> Result<Vec<f64>> {
        modulate(&self.subspace, &self.rotation, query, &self.cfg)
    }
}

impl Retriever for ConditionedView {
    fn database(&self) -> &Database {
        &self.db
    }

    fn method(&self) -> &'static str {
        match (self.cfg.use_manifold, self.cfg.use_rotation) {
            (true, true) => "clay",
            (true, false) => "clay-no-rotation",
            _ => "euclidean-projection",
        }
    }

    fn condition(&self) -> String {
        self.subspace.name()
    }

    fn score_all(&self, query: &UnitVector) -> Result<Vec<f64>> {
        if query.dim() != self.db.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.db.dim(),
                actual: query.dim(),
            });
        }
        let q = self.modulate_query(query)?;
        let nq = norm(&q);
        let policy = self.cfg.zero_projection_policy;
        self.cache
            .chunks_exact(self.db.dim())
            .zip(&self.cache_norms)
            .map(|(row, &nr)| cosine_from_dot(dot_f32(&q, row), nq, nr, policy).map(|s| s.value()))
            .collect()
    }
}

/// Top `k_ret` database rows under the view's condition.
pub fn query_topk(view: &ConditionedView, v_q: &UnitVector, k_ret: usize) -> Result<Vec<RankedHit>> {
    view.top_k(v_q, k_ret)
}
