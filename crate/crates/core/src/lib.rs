//! Text-conditioned similarity retrieval over fixed image embeddings.
//!
//! A condition (say, "color") is described by a set of prompt embeddings.
//! Their log-mapped spread at the text mean spans a low-dimensional subspace;
//! image features are rotated onto the text mean, log-mapped there and
//! projected onto that subspace before comparing by cosine. Changing the
//! condition only swaps the subspace, so stored image features are reused
//! as they are.
//!
//! ```
//! use std::sync::Arc;
//! use clay_core::{
//!     build_subspace, generate_world, prepare_condition, query_topk, ModulatorConfig, WorldConfig,
//! };
//!
//! let world = generate_world(&WorldConfig { d: 32, n_items: 300, ..WorldConfig::with_seed(1) })?;
//! let db = Arc::new(world.database()?);
//! let color = Arc::new(build_subspace(world.prompts_for("color")?, 8)?);
//! let view = prepare_condition(&db, &color, ModulatorConfig::default())?;
//!
//! let hits = query_topk(&view, &db.vector(0), 5)?;
//! assert_eq!(hits[0].id, db.id(0));
//! # Ok::<(), clay_core::Error>(())
//! ```

pub mod conditioning;
pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod index;
pub mod storage;
pub mod subspace;
pub mod synthbench;

pub use conditioning::{
    cosine, csim_asym, csim_clay, csim_raw, modulate, ModulatorConfig, SimilarityScore, ZeroProjectionPolicy,
};
pub use embedding::EmbeddingMatrix;
pub use error::{Error, Result};
pub use evaluation::{
    average_precision, grouped_map, mean_ap, recall_at_k, split_query_database, MetricsReport, QuerySet, SplitSpec,
};
pub use geometry::{
    apply_rotation, exp_map, householder_align, log_map, normalize, spherical_mean, Rotation, TangentVector,
    UnitVector,
};
pub use index::{
    bench_condition_switch, build_index, prepare_condition, query_topk, AsymmetricView, ConditionCache,
    ConditionedView, Database, Labels, RankedHit, RawView, Retriever,
};
pub use storage::{
    read_embeddings, read_manifest, read_subspace, write_embeddings, write_manifest, write_subspace, Manifest,
};
pub use subspace::{
    build_euclidean_subspace, build_subspace, explained_energy, merge_conditions, project, ConditionSubspace,
    PromptMatrix, SubspaceKind, DEFAULT_K,
};
pub use synthbench::{cross_condition_matrix, generate_world, SyntheticWorld, WorldBench, WorldConfig};
