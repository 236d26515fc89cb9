//! Exhaustive retrieval over an embedding database.
//!
//! A [`Database`] holds fixed, unit-norm image features and their labels. A
//! [`ConditionedView`] caches every row modulated under one condition, so a
//! condition switch costs one pass over the cached features and never touches
//! an encoder. [`RawView`] and [`AsymmetricView`] provide the unconditioned
//! baseline and the query-only formulation behind the same [`Retriever`]
//! trait, which is what the evaluation code consumes.

mod bench;
mod cache;
mod view;

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};
use std::sync::Arc;

use serde::Serialize;

use crate::conditioning::{cosine_from_dot, modulate, ModulatorConfig};
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::geometry::{dot_f32, householder_align, norm, spherical_mean_f32, Rotation, UnitVector};
use crate::subspace::ConditionSubspace;

pub use bench::{bench_condition_switch, ConditionTiming, TimingReport, BENCH_RUNS};
pub use cache::{ConditionCache, DEFAULT_CACHE_CAPACITY};
pub use view::{prepare_condition, query_topk, ConditionedView, PrepareStats};

/// Labels per attribute, one entry per database row.
pub type Labels = BTreeMap<String, Vec<String>>;

/// Something that turns raw items into features. The engine never calls one
/// after a [`Database`] is built; the counter makes that checkable.
pub trait Encoder {
    type Item: ?Sized;
    fn encode(&self, item: &Self::Item) -> Result<Vec<f64>>;
}

#[derive(Debug)]
pub struct Database {
    ids: Vec<String>,
    embeddings: EmbeddingMatrix,
    labels: Labels,
    mu_v: UnitVector,
    /// Position of each row's id in ascending id order; used for tie-breaks.
    id_rank: Vec<u32>,
    by_id: HashMap<String, usize>,
    encoder_calls: AtomicU64,
}

/// Normalizes `rows` and builds a [`Database`].
pub fn build_index<R: AsRef<[f64]>>(rows: &[R], ids: Vec<String>, labels: Labels) -> Result<Database> {
    let dim = rows.first().map(|r| r.as_ref().len()).ok_or(Error::TooFewItems(0))?;
    Database::new(ids, EmbeddingMatrix::from_rows(dim, rows)?, labels)
}

impl Database {
    pub fn new(ids: Vec<String>, embeddings: EmbeddingMatrix, labels: Labels) -> Result<Self> {
        let n = embeddings.len();
        if ids.len() != n {
            return Err(Error::InvalidArgument(format!("{} ids for {n} rows", ids.len())));
        }
        if n < 2 {
            return Err(Error::TooFewItems(n));
        }
        let mut by_id = HashMap::with_capacity(n);
        for (i, id) in ids.iter().enumerate() {
            if by_id.insert(id.clone(), i).is_some() {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        for (attribute, values) in &labels {
            if values.len() != n {
                return Err(Error::LabelCoverage {
                    attribute: attribute.clone(),
                    expected: n,
                    actual: values.len(),
                });
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| ids[a].cmp(&ids[b]));
        let mut id_rank = vec![0u32; n];
        for (rank, &i) in order.iter().enumerate() {
            id_rank[i] = rank as u32;
        }
        let mu_v = spherical_mean_f32(embeddings.as_flat(), embeddings.dim())?;
        Ok(Self {
            ids,
            embeddings,
            labels,
            mu_v,
            id_rank,
            by_id,
            encoder_calls: AtomicU64::new(0),
        })
    }

    /// Encodes every item once and builds the database from the results.
    pub fn from_encoder<E: Encoder>(
        encoder: &E,
        items: &[&E::Item],
        ids: Vec<String>,
        labels: Labels,
    ) -> Result<Self> {
        let mut rows = Vec::with_capacity(items.len());
        for item in items {
            rows.push(encoder.encode(item)?);
        }
        let db = build_index(&rows, ids, labels)?;
        db.encoder_calls.store(items.len() as u64, AtomicOrdering::Relaxed);
        Ok(db)
    }

    /// Total encoder invocations made on behalf of this database.
    pub fn encoder_calls(&self) -> u64 {
        self.encoder_calls.load(AtomicOrdering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.dim()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn embeddings(&self) -> &EmbeddingMatrix {
        &self.embeddings
    }

    pub fn vector(&self, i: usize) -> UnitVector {
        self.embeddings.unit_row(i)
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    pub fn attribute(&self, name: &str) -> Result<&[String]> {
        self.labels
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingLabel(name.to_string()))
    }

    pub fn mu_v(&self) -> &UnitVector {
        &self.mu_v
    }

    /// New database over the given rows, in order. Labels follow the rows.
    pub fn subset(&self, indices: &[usize]) -> Result<Database> {
        let ids = indices.iter().map(|&i| self.ids[i].clone()).collect();
        let labels = self
            .labels
            .iter()
            .map(|(k, v)| (k.clone(), indices.iter().map(|&i| v[i].clone()).collect()))
            .collect();
        Database::new(ids, self.embeddings.select(indices), labels)
    }

    /// Rows whose ids appear in `ids`, in database order.
    pub fn select_ids(&self, ids: &HashSet<&str>) -> Vec<usize> {
        (0..self.len()).filter(|&i| ids.contains(self.ids[i].as_str())).collect()
    }

    /// Descending score, ascending id.
    pub(crate) fn rank_cmp(&self, scores: &[f64], a: usize, b: usize) -> Ordering {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| self.id_rank[a].cmp(&self.id_rank[b]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedHit {
    pub id: String,
    pub score: f64,
}

/// A scoring rule over a fixed database.
pub trait Retriever: Sync {
    fn database(&self) -> &Database;

    /// Short name of the scoring rule, e.g. `raw`.
    fn method(&self) -> &'static str;

    /// Condition the scores depend on, `none` for unconditioned rules.
    fn condition(&self) -> String {
        "none".to_string()
    }

    /// Score against every database row, in row order.
    fn score_all(&self, query: &UnitVector) -> Result<Vec<f64>>;

    /// Every row index, best first, ties broken by ascending id.
    fn rank(&self, query: &UnitVector) -> Result<Vec<usize>> {
        let scores = self.score_all(query)?;
        let db = self.database();
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_unstable_by(|&a, &b| db.rank_cmp(&scores, a, b));
        Ok(order)
    }

    fn top_k(&self, query: &UnitVector, k_ret: usize) -> Result<Vec<RankedHit>> {
        let db = self.database();
        if query.dim() != db.dim() {
            return Err(Error::DimensionMismatch {
                expected: db.dim(),
                actual: query.dim(),
            });
        }
        if k_ret == 0 || k_ret > db.len() {
            return Err(Error::InvalidArgument(format!(
                "k_ret = {k_ret} outside 1..={}",
                db.len()
            )));
        }
        let scores = self.score_all(query)?;
        let mut order: Vec<usize> = (0..scores.len()).collect();
        let cmp = |a: &usize, b: &usize| db.rank_cmp(&scores, *a, *b);
        if k_ret < order.len() {
            order.select_nth_unstable_by(k_ret - 1, cmp);
            order.truncate(k_ret);
        }
        order.sort_unstable_by(cmp);
        Ok(order
            .into_iter()
            .map(|i| RankedHit {
                id: db.id(i).to_string(),
                score: scores[i],
            })
            .collect())
    }
}

/// Plain cosine similarity against the raw database features.
#[derive(Debug, Clone)]
pub struct RawView {
    db: Arc<Database>,
}

impl RawView {
    pub fn new(db: Arc<Database>) -> Self {
        Self { db }
    }
}

impl Retriever for RawView {
    fn database(&self) -> &Database {
        &self.db
    }

    fn method(&self) -> &'static str {
        "raw"
    }

    fn score_all(&self, query: &UnitVector) -> Result<Vec<f64>> {
        if query.dim() != self.db.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.db.dim(),
                actual: query.dim(),
            });
        }
        Ok(self
            .db
            .embeddings()
            .rows()
            .map(|row| dot_f32(query.coords(), row).clamp(-1.0, 1.0))
            .collect())
    }
}

/// Modulated query against raw database features.
#[derive(Debug, Clone)]
pub struct AsymmetricView {
    db: Arc<Database>,
    subspace: Arc<ConditionSubspace>,
    rotation: Rotation,
    cfg: ModulatorConfig,
    row_norms: Vec<f64>,
}

impl AsymmetricView {
    pub fn new(db: Arc<Database>, subspace: Arc<ConditionSubspace>, cfg: ModulatorConfig) -> Result<Self> {
        let rotation = rotation_for(&db, &subspace, &cfg)?;
        cfg.check(&subspace, &rotation)?;
        let row_norms = db
            .embeddings()
            .rows()
            .map(|r| r.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt())
            .collect();
        Ok(Self {
            db,
            subspace,
            rotation,
            cfg,
            row_norms,
        })
    }
}

impl Retriever for AsymmetricView {
    fn database(&self) -> &Database {
        &self.db
    }

    fn method(&self) -> &'static str {
        "asymmetric"
    }

    fn condition(&self) -> String {
        self.subspace.name()
    }

    fn score_all(&self, query: &UnitVector) -> Result<Vec<f64>> {
        let q = modulate(&self.subspace, &self.rotation, query, &self.cfg)?;
        let nq = norm(&q);
        self.db
            .embeddings()
            .rows()
            .zip(&self.row_norms)
            .map(|(row, &nr)| {
                cosine_from_dot(dot_f32(&q, row), nq, nr, self.cfg.zero_projection_policy).map(|s| s.value())
            })
            .collect()
    }
}

pub(crate) fn rotation_for(db: &Database, s: &ConditionSubspace, cfg: &ModulatorConfig) -> Result<Rotation> {
    if cfg.use_rotation {
        householder_align(db.mu_v(), s.mu_c())
    } else {
        Ok(Rotation::identity(db.dim()))
    }
}
