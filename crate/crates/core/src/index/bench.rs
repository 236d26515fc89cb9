use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{prepare_condition, query_topk, Database};
use crate::conditioning::ModulatorConfig;
use crate::error::{Error, Result};
use crate::geometry::UnitVector;
use crate::subspace::ConditionSubspace;

/// Each query is timed this many times per condition.
pub const BENCH_RUNS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionTiming {
    pub condition_name: String,
    pub prepare_ms: f64,
    pub query_ms_mean: f64,
    pub query_ms_p95: f64,
    pub encoder_calls: u64,
    /// `prepare_ms + query_ms_mean`: latency of the first answer after a switch.
    pub switch_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub n_items: usize,
    pub dim: usize,
    pub queries: usize,
    pub runs: usize,
    pub k_ret: usize,
    pub conditions: Vec<ConditionTiming>,
    pub first_condition_ms: f64,
    pub subsequent_condition_ms_mean: f64,
}

/// Prepares each condition in turn and times queries against it.
///
/// Wall-clock values depend on the machine; only the encoder count is
/// structural (always zero).
pub fn bench_condition_switch(
    db: &Arc<Database>,
    subspaces: &[Arc<ConditionSubspace>],
    queries: &[UnitVector],
    k_ret: usize,
    cfg: ModulatorConfig,
) -> Result<TimingReport> {
    if subspaces.len() < 2 {
        return Err(Error::InvalidArgument("benchmark needs at least two conditions".into()));
    }
    if queries.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut conditions = Vec::with_capacity(subspaces.len());
    for s in subspaces {
        let calls_before = db.encoder_calls();
        let started = Instant::now();
        let view = prepare_condition(db, s, cfg)?;
        let prepare_ms = ms(started);

        let mut samples = Vec::with_capacity(BENCH_RUNS * queries.len());
        for _ in 0..BENCH_RUNS {
            for q in queries {
                let started = Instant::now();
                let hits = query_topk(&view, q, k_ret)?;
                samples.push(ms(started));
                std::hint::black_box(hits);
            }
        }
        let query_ms_mean = samples.iter().sum::<f64>() / samples.len() as f64;
        samples.sort_by(f64::total_cmp);
        let p95_index = ((samples.len() as f64 * 0.95).ceil() as usize).clamp(1, samples.len()) - 1;
        conditions.push(ConditionTiming {
            condition_name: s.name(),
            prepare_ms,
            query_ms_mean,
            query_ms_p95: samples[p95_index],
            encoder_calls: db.encoder_calls() - calls_before,
            switch_ms: prepare_ms + query_ms_mean,
        });
    }
    let first_condition_ms = conditions[0].switch_ms;
    let rest = &conditions[1..];
    let subsequent_condition_ms_mean = rest.iter().map(|c| c.switch_ms).sum::<f64>() / rest.len() as f64;
    Ok(TimingReport {
        n_items: db.len(),
        dim: db.dim(),
        queries: queries.len(),
        runs: BENCH_RUNS,
        k_ret,
        conditions,
        first_condition_ms,
        subsequent_condition_ms_mean,
    })
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}
