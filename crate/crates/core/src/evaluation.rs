//! Retrieval metrics and the evaluation protocol.
//!
//! Items are split once into disjoint query and database sets with a seeded
//! permutation. Each query ranks the full database; a database item is
//! relevant when it shares the query's label for the evaluated attribute.
//! Average precision is computed at full depth and averaged without weights.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::UnitVector;
use crate::index::{Database, Labels, Retriever};

pub const DEFAULT_QUERY_FRACTION: f64 = 0.1;
/// Cut-offs reported by [`mean_ap`].
pub const RECALL_CUTOFFS: [usize; 3] = [1, 2, 3];

/// A disjoint query/database partition of item ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    pub query_fraction: f64,
    pub query_ids: Vec<String>,
    pub db_ids: Vec<String>,
}

/// Shuffles `ids` with a seeded generator; the first `round(fraction * N)`
/// (at least one) become queries.
pub fn split_query_database(ids: &[String], seed: u64, fraction: f64) -> Result<SplitSpec> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "query fraction {fraction} outside (0, 1)"
        )));
    }
    let n = ids.len();
    let n_queries = ((fraction * n as f64).round() as usize).max(1);
    if n < 2 || n_queries >= n {
        return Err(Error::TooFewItems(n));
    }
    let mut shuffled = ids.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let db_ids = shuffled.split_off(n_queries);
    Ok(SplitSpec {
        seed,
        query_fraction: fraction,
        query_ids: shuffled,
        db_ids,
    })
}

impl SplitSpec {
    /// Materializes the split against `db`. Both sides keep `db`'s row order.
    pub fn apply(&self, db: &Database) -> Result<(QuerySet, Database)> {
        for id in self.query_ids.iter().chain(&self.db_ids) {
            if db.index_of(id).is_none() {
                return Err(Error::UnknownId(id.clone()));
            }
        }
        let query_ids: HashSet<&str> = self.query_ids.iter().map(String::as_str).collect();
        let db_ids: HashSet<&str> = self.db_ids.iter().map(String::as_str).collect();
        let queries = QuerySet::from_database(db, &db.select_ids(&query_ids));
        let database = db.subset(&db.select_ids(&db_ids))?;
        Ok((queries, database))
    }
}

/// Labeled query features.
#[derive(Debug, Clone)]
pub struct QuerySet {
    ids: Vec<String>,
    vectors: Vec<UnitVector>,
    labels: Labels,
}

impl QuerySet {
    pub fn new(ids: Vec<String>, vectors: Vec<UnitVector>, labels: Labels) -> Result<Self> {
        if ids.len() != vectors.len() {
            return Err(Error::InvalidArgument(format!(
                "{} ids for {} query vectors",
                ids.len(),
                vectors.len()
            )));
        }
        for (attribute, values) in &labels {
            if values.len() != ids.len() {
                return Err(Error::LabelCoverage {
                    attribute: attribute.clone(),
                    expected: ids.len(),
                    actual: values.len(),
                });
            }
        }
        Ok(Self { ids, vectors, labels })
    }

    pub fn from_database(db: &Database, indices: &[usize]) -> Self {
        Self {
            ids: indices.iter().map(|&i| db.id(i).to_string()).collect(),
            vectors: indices.iter().map(|&i| db.vector(i)).collect(),
            labels: db
                .labels()
                .iter()
                .map(|(k, v)| (k.clone(), indices.iter().map(|&i| v[i].clone()).collect()))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vectors(&self) -> &[UnitVector] {
        &self.vectors
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    fn subset(&self, indices: &[usize]) -> Self {
        Self {
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            vectors: indices.iter().map(|&i| self.vectors[i].clone()).collect(),
            labels: self
                .labels
                .iter()
                .map(|(k, v)| (k.clone(), indices.iter().map(|&i| v[i].clone()).collect()))
                .collect(),
        }
    }
}

/// Average precision of a ranked relevance list.
///
/// Returns `None` when nothing is relevant; callers score such queries as 0
/// and count them.
pub fn average_precision(relevance: &[bool]) -> Option<f64> {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &rel) in relevance.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    (hits > 0).then(|| sum / hits as f64)
}

/// 1 if any relevant id is among the first `k`, else 0.
pub fn recall_at_k<S: AsRef<str>>(ranked: &[S], relevant: &HashSet<&str>, k: usize) -> f64 {
    let found = ranked.iter().take(k).any(|id| relevant.contains(id.as_ref()));
    if found {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub condition: String,
    /// Attribute(s) defining relevance; `a+b` means all must match.
    pub relevance: String,
    pub map: f64,
    pub recall_at: BTreeMap<usize, f64>,
    pub per_query_ap: BTreeMap<String, f64>,
    pub no_relevant_queries: usize,
    pub n_queries: usize,
    pub n_database: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grouping: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub group_map: Option<BTreeMap<String, f64>>,
}

impl MetricsReport {
    /// Writes `query_id,ap` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |source| Error::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut w = csv::Writer::from_path(path).map_err(|e| io(e.into()))?;
        w.write_record(["query_id", "ap"]).map_err(|e| io(e.into()))?;
        for (id, ap) in &self.per_query_ap {
            w.write_record([id.as_str(), &format!("{ap}")]).map_err(|e| io(e.into()))?;
        }
        w.flush().map_err(io)
    }
}

fn relevance_columns<'a>(labels: &'a Labels, relevance: &str) -> Result<Vec<&'a [String]>> {
    relevance
        .split('+')
        .map(|name| {
            labels
                .get(name)
                .map(Vec::as_slice)
                .ok_or_else(|| Error::MissingLabel(name.to_string()))
        })
        .collect()
}

/// mAP of `retriever` over `queries`, relevance by shared label(s).
pub fn mean_ap<R: Retriever + ?Sized>(
    queries: &QuerySet,
    retriever: &R,
    relevance: &str,
) -> Result<MetricsReport> {
    let db = retriever.database();
    let query_cols = relevance_columns(&queries.labels, relevance)?;
    let db_cols = relevance_columns(db.labels(), relevance)?;

    let per_query: Vec<(Option<f64>, [f64; RECALL_CUTOFFS.len()])> = (0..queries.len())
        .into_par_iter()
        .map(|qi| {
            let order = retriever.rank(&queries.vectors[qi])?;
            let rel: Vec<bool> = order
                .iter()
                .map(|&di| query_cols.iter().zip(&db_cols).all(|(q, d)| q[qi] == d[di]))
                .collect();
            let mut recalls = [0.0; RECALL_CUTOFFS.len()];
            for (r, &k) in recalls.iter_mut().zip(&RECALL_CUTOFFS) {
                *r = if rel.iter().take(k).any(|&x| x) { 1.0 } else { 0.0 };
            }
            Ok((average_precision(&rel), recalls))
        })
        .collect::<Result<_>>()?;

    let n = queries.len().max(1) as f64;
    let no_relevant_queries = per_query.iter().filter(|(ap, _)| ap.is_none()).count();
    let per_query_ap: BTreeMap<String, f64> = queries
        .ids
        .iter()
        .zip(&per_query)
        .map(|(id, (ap, _))| (id.clone(), ap.unwrap_or(0.0)))
        .collect();
    let map = per_query.iter().map(|(ap, _)| ap.unwrap_or(0.0)).sum::<f64>() / n;
    let recall_at = RECALL_CUTOFFS
        .iter()
        .enumerate()
        .map(|(j, &k)| (k, per_query.iter().map(|(_, r)| r[j]).sum::<f64>() / n))
        .collect();
    Ok(MetricsReport {
        method: retriever.method().to_string(),
        condition: retriever.condition(),
        relevance: relevance.to_string(),
        map,
        recall_at,
        per_query_ap,
        no_relevant_queries,
        n_queries: queries.len(),
        n_database: db.len(),
        grouping: None,
        group_map: None,
    })
}

/// Per-group evaluation: the database is partitioned by `group_attribute`,
/// each partition becomes its own database (built through `make_retriever`),
/// queries are ranked only against their own group, and the group mAPs are
/// averaged without weights.
pub fn grouped_map<R, F>(
    queries: &QuerySet,
    db: &Database,
    group_attribute: &str,
    relevance: &str,
    make_retriever: F,
) -> Result<MetricsReport>
where
    R: Retriever,
    F: Fn(Arc<Database>) -> Result<R>,
{
    let query_groups = queries
        .labels
        .get(group_attribute)
        .ok_or_else(|| Error::MissingLabel(group_attribute.to_string()))?;
    let db_groups = db.attribute(group_attribute)?;

    let mut members: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (qi, g) in query_groups.iter().enumerate() {
        members.entry(g.as_str()).or_default().push(qi);
    }

    let mut reports = Vec::with_capacity(members.len());
    for (group, query_idx) in &members {
        let rows: Vec<usize> = (0..db.len()).filter(|&i| db_groups[i] == *group).collect();
        if rows.is_empty() {
            return Err(Error::EmptyGroup(group.to_string()));
        }
        let retriever = make_retriever(Arc::new(db.subset(&rows)?))?;
        reports.push((group.to_string(), mean_ap(&queries.subset(query_idx), &retriever, relevance)?));
    }

    let groups = reports.len() as f64;
    let first = &reports[0].1;
    let mut recall_at: BTreeMap<usize, f64> = BTreeMap::new();
    let mut per_query_ap = BTreeMap::new();
    let mut no_relevant_queries = 0;
    for (_, r) in &reports {
        for (&k, &v) in &r.recall_at {
            *recall_at.entry(k).or_default() += v / groups;
        }
        per_query_ap.extend(r.per_query_ap.iter().map(|(k, v)| (k.clone(), *v)));
        no_relevant_queries += r.no_relevant_queries;
    }
    Ok(MetricsReport {
        method: first.method.clone(),
        condition: first.condition.clone(),
        relevance: relevance.to_string(),
        map: reports.iter().map(|(_, r)| r.map).sum::<f64>() / groups,
        recall_at,
        per_query_ap,
        no_relevant_queries,
        n_queries: queries.len(),
        n_database: db.len(),
        grouping: Some(group_attribute.to_string()),
        group_map: Some(reports.into_iter().map(|(g, r)| (g, r.map)).collect()),
    })
}
