//! Seeded synthetic embedding worlds with known attribute structure.
//!
//! Every world lives in an orthonormal frame drawn from the seed: an image
//! mean, a second axis that sets the text mean at `modality_gap_angle` from
//! it, and one block of directions per attribute. Within a block the value
//! directions are the vertices of a centered simplex, so balanced labels sum
//! to zero and both spherical means stay on their axes.
//!
//! ```text
//! image  = normalize(k_img * image_mean + sum_a signal_a * dir_a(value_a) + noise)
//! prompt = normalize(k_txt * text_mean  + signal_a * dir_a(value) + noise)
//! ```
//!
//! Noise is isotropic Gaussian scaled so its expected norm is `noise_scale`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::conditioning::ModulatorConfig;
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::evaluation::{mean_ap, split_query_database, MetricsReport, QuerySet, DEFAULT_QUERY_FRACTION};
use crate::geometry::{dot, normalize, UnitVector};
use crate::index::{prepare_condition, Database, Labels, RawView};
use crate::storage::{write_embeddings, write_manifest, Manifest};
use crate::subspace::{build_euclidean_subspace, build_subspace, merge_conditions, ConditionSubspace, PromptMatrix, DEFAULT_K};

const COLORS: [&str; 5] = ["red", "green", "blue", "yellow", "purple"];
const CATEGORIES: [&str; 5] = ["chair", "lamp", "table", "sofa", "shelf"];
const MATERIALS: [&str; 5] = ["wood", "metal", "glass", "fabric", "plastic"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeConfig {
    pub name: String,
    pub values: Vec<String>,
    /// Weight of this attribute's direction in images and prompts.
    pub signal: f64,
}

impl AttributeConfig {
    /// `n_values` values named `{name}_{i}`, except for the built-in
    /// color/category/material vocabularies when five values are asked for.
    pub fn new(name: &str, n_values: usize, signal: f64) -> Self {
        let builtin: Option<&[&str; 5]> = match name {
            "color" => Some(&COLORS),
            "category" => Some(&CATEGORIES),
            "material" => Some(&MATERIALS),
            _ => None,
        };
        let values = match builtin {
            Some(names) if n_values == names.len() => names.iter().map(|s| s.to_string()).collect(),
            _ => (0..n_values).map(|i| format!("{name}_{i}")).collect(),
        };
        Self {
            name: name.to_string(),
            values,
            signal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub d: usize,
    pub n_items: usize,
    pub attributes: Vec<AttributeConfig>,
    pub image_cone_concentration: f64,
    pub text_cone_concentration: f64,
    /// Angle between the image and text mean directions, radians.
    pub modality_gap_angle: f64,
    pub noise_scale: f64,
    pub prompts_per_value: usize,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            d: 128,
            n_items: 2000,
            attributes: ["color", "category", "material"]
                .iter()
                .map(|n| AttributeConfig::new(n, 5, 1.0))
                .collect(),
            image_cone_concentration: 2.0,
            text_cone_concentration: 2.0,
            modality_gap_angle: 0.6,
            noise_scale: 1.5,
            prompts_per_value: 20,
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.attributes.is_empty() {
            return bad("at least one attribute is required".into());
        }
        let values: usize = self.attributes.iter().map(|a| a.values.len()).sum();
        if self.d < values + 2 {
            return Err(Error::InsufficientDimension { dim: self.d, values });
        }
        for a in &self.attributes {
            if a.values.is_empty() {
                return bad(format!("attribute `{}` has no values", a.name));
            }
            if !(a.signal >= 0.0 && a.signal.is_finite()) {
                return bad(format!("attribute `{}` has signal {}", a.name, a.signal));
            }
        }
        if self.n_items < 2 {
            return Err(Error::TooFewItems(self.n_items));
        }
        if self.prompts_per_value == 0 {
            return bad("prompts_per_value must be at least 1".into());
        }
        let gap = self.modality_gap_angle;
        if !(gap > 0.0 && gap < std::f64::consts::PI) {
            return bad(format!("modality gap angle {gap} outside (0, pi)"));
        }
        for (what, k) in [
            ("image", self.image_cone_concentration),
            ("text", self.text_cone_concentration),
        ] {
            if !(k > 0.0 && k.is_finite()) {
                return bad(format!("{what} cone concentration must be positive, got {k}"));
            }
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return bad(format!("noise scale {} is negative", self.noise_scale));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub config: WorldConfig,
    pub ids: Vec<String>,
    pub images: EmbeddingMatrix,
    pub labels: Labels,
    /// One prompt matrix per attribute, in configuration order.
    pub prompts: Vec<PromptMatrix>,
    pub image_mean: UnitVector,
    pub text_mean: UnitVector,
    /// `directions[a][v]`: ground-truth direction of value `v` of attribute `a`.
    pub directions: Vec<Vec<UnitVector>>,
}

/// Orthonormal vectors from Gaussian draws; Gram-Schmidt applied twice.
fn random_frame(rng: &mut ChaCha8Rng, d: usize, count: usize) -> Vec<Vec<f64>> {
    let mut frame: Vec<Vec<f64>> = Vec::with_capacity(count);
    while frame.len() < count {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        for _ in 0..2 {
            for u in &frame {
                let c = dot(&v, u);
                v.iter_mut().zip(u).for_each(|(x, y)| *x -= c * y);
            }
        }
        if let Ok(u) = normalize(&v) {
            frame.push(u.into_inner());
        }
    }
    frame
}

/// Vertices of a centered regular simplex spanned by `basis`.
fn simplex(basis: &[Vec<f64>]) -> Vec<UnitVector> {
    let m = basis.len();
    let d = basis[0].len();
    if m == 1 {
        return vec![UnitVector::new(basis[0].clone()).expect("frame vectors are unit")];
    }
    let mut centroid = vec![0.0; d];
    for u in basis {
        centroid.iter_mut().zip(u).for_each(|(c, x)| *c += x / m as f64);
    }
    basis
        .iter()
        .map(|u| {
            let v: Vec<f64> = u.iter().zip(&centroid).map(|(x, c)| x - c).collect();
            normalize(&v).expect("simplex vertices are nonzero")
        })
        .collect()
}

fn sample_point(rng: &mut ChaCha8Rng, center: &[f64], noise_scale: f64) -> UnitVector {
    let sigma = noise_scale / (center.len() as f64).sqrt();
    let v: Vec<f64> = center
        .iter()
        .map(|c| {
            let z: f64 = StandardNormal.sample(rng);
            c + sigma * z
        })
        .collect();
    // a zero draw is practically impossible; fall back to the noiseless center
    normalize(&v).unwrap_or_else(|_| normalize(center).expect("center is nonzero"))
}

/// Generates a world; fully determined by `cfg`.
pub fn generate_world(cfg: &WorldConfig) -> Result<SyntheticWorld> {
    cfg.validate()?;
    let d = cfg.d;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_values: usize = cfg.attributes.iter().map(|a| a.values.len()).sum();
    let frame = random_frame(&mut rng, d, n_values + 2);

    let image_mean = frame[0].clone();
    let (s, c) = cfg.modality_gap_angle.sin_cos();
    let text_mean: Vec<f64> = frame[0].iter().zip(&frame[1]).map(|(a, b)| c * a + s * b).collect();
    let mut directions = Vec::with_capacity(cfg.attributes.len());
    let mut next = 2;
    for a in &cfg.attributes {
        directions.push(simplex(&frame[next..next + a.values.len()]));
        next += a.values.len();
    }

    // balanced labels: value i mod m, then shuffled
    let n = cfg.n_items;
    let mut assignment: Vec<Vec<usize>> = Vec::with_capacity(cfg.attributes.len());
    for a in &cfg.attributes {
        let mut col: Vec<usize> = (0..n).map(|i| i % a.values.len()).collect();
        col.shuffle(&mut rng);
        assignment.push(col);
    }

    let mut flat = Vec::with_capacity(n * d);
    let mut center = vec![0.0; d];
    for i in 0..n {
        center
            .iter_mut()
            .zip(&image_mean)
            .for_each(|(x, m)| *x = cfg.image_cone_concentration * m);
        for (ai, a) in cfg.attributes.iter().enumerate() {
            let dir = directions[ai][assignment[ai][i]].coords();
            center.iter_mut().zip(dir).for_each(|(x, u)| *x += a.signal * u);
        }
        let row = sample_point(&mut rng, &center, cfg.noise_scale);
        flat.extend(row.coords().iter().map(|&x| x as f32));
    }
    let images = EmbeddingMatrix::from_flat_f32(d, &flat)?;

    let mut prompts = Vec::with_capacity(cfg.attributes.len());
    for (ai, a) in cfg.attributes.iter().enumerate() {
        let mut rows = Vec::with_capacity(a.values.len() * cfg.prompts_per_value);
        let mut texts = Vec::with_capacity(rows.capacity());
        for (vi, value) in a.values.iter().enumerate() {
            for j in 0..cfg.prompts_per_value {
                let center: Vec<f64> = text_mean
                    .iter()
                    .zip(directions[ai][vi].coords())
                    .map(|(m, u)| cfg.text_cone_concentration * m + a.signal * u)
                    .collect();
                // rows go through f32 like any prompt file would
                let row = sample_point(&mut rng, &center, cfg.noise_scale);
                let narrowed: Vec<f32> = row.coords().iter().map(|&x| x as f32).collect();
                rows.push(UnitVector::from_f32(&narrowed)?);
                texts.push(format!("a photo of a {value} object ({j})"));
            }
        }
        prompts.push(PromptMatrix::new(a.name.clone(), rows)?.with_texts(texts)?);
    }

    let labels = cfg
        .attributes
        .iter()
        .zip(&assignment)
        .map(|(a, col)| (a.name.clone(), col.iter().map(|&v| a.values[v].clone()).collect()))
        .collect();
    let width = n.to_string().len().max(5);
    Ok(SyntheticWorld {
        config: cfg.clone(),
        ids: (0..n).map(|i| format!("img{i:0width$}")).collect(),
        images,
        labels,
        prompts,
        image_mean: UnitVector::new(image_mean)?,
        text_mean: UnitVector::new(text_mean)?,
        directions,
    })
}

impl SyntheticWorld {
    pub fn database(&self) -> Result<Database> {
        Database::new(self.ids.clone(), self.images.clone(), self.labels.clone())
    }

    pub fn attribute_names(&self) -> Vec<&str> {
        self.config.attributes.iter().map(|a| a.name.as_str()).collect()
    }

    pub fn prompts_for(&self, attribute: &str) -> Result<&PromptMatrix> {
        self.config
            .attributes
            .iter()
            .position(|a| a.name == attribute)
            .map(|i| &self.prompts[i])
            .ok_or_else(|| Error::MissingLabel(attribute.to_string()))
    }

    /// Writes `images.emb`, `manifest.json` and `prompts/<attribute>.emb`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| Error::Io { path, source }
        };
        let prompt_dir = dir.join("prompts");
        fs::create_dir_all(&prompt_dir).map_err(io(&prompt_dir))?;
        write_embeddings(&dir.join("images.emb"), &self.images)?;
        let source = format!("synthetic world, seed {}", self.config.seed);
        write_manifest(&dir.join("manifest.json"), &Manifest::from_labels(&self.ids, &self.labels, source)?)?;
        for (a, p) in self.config.attributes.iter().zip(&self.prompts) {
            let m = EmbeddingMatrix::from_rows(self.config.d, p.rows())?;
            write_embeddings(&prompt_dir.join(format!("{}.emb", a.name)), &m)?;
        }
        Ok(())
    }
}

/// A world split into queries and database, ready for repeated evaluation.
#[derive(Debug, Clone)]
pub struct WorldBench {
    pub queries: QuerySet,
    pub db: Arc<Database>,
    pub k: usize,
    prompts: BTreeMap<String, PromptMatrix>,
}

impl WorldBench {
    pub fn new(world: &SyntheticWorld, split_seed: u64, query_fraction: f64, k: usize) -> Result<Self> {
        let all = world.database()?;
        let split = split_query_database(&world.ids, split_seed, query_fraction)?;
        let (queries, db) = split.apply(&all)?;
        let prompts = world
            .attribute_names()
            .into_iter()
            .zip(&world.prompts)
            .map(|(n, p)| (n.to_string(), p.clone()))
            .collect();
        Ok(Self {
            queries,
            db: Arc::new(db),
            k,
            prompts,
        })
    }

    /// Split seeded by the world seed, default fraction and k.
    pub fn standard(world: &SyntheticWorld) -> Result<Self> {
        Self::new(world, world.config.seed, DEFAULT_QUERY_FRACTION, DEFAULT_K)
    }

    /// Subspace for one or more conditions, of the kind `cfg` needs.
    pub fn subspace(&self, conditions: &[&str], cfg: &ModulatorConfig) -> Result<ConditionSubspace> {
        let parts = conditions
            .iter()
            .map(|c| self.prompts.get(*c).cloned().ok_or_else(|| Error::MissingLabel(c.to_string())))
            .collect::<Result<Vec<_>>>()?;
        let merged = merge_conditions(&parts)?;
        if cfg.use_manifold {
            build_subspace(&merged, self.k)
        } else {
            build_euclidean_subspace(&merged, self.k)
        }
    }

    /// mAP for `relevance` with the database modulated under `conditions`.
    pub fn conditioned_map(&self, conditions: &[&str], relevance: &str, cfg: ModulatorConfig) -> Result<MetricsReport> {
        let s = Arc::new(self.subspace(conditions, &cfg)?);
        let view = prepare_condition(&self.db, &s, cfg)?;
        mean_ap(&self.queries, &view, relevance)
    }

    pub fn raw_map(&self, relevance: &str) -> Result<MetricsReport> {
        mean_ap(&self.queries, &RawView::new(Arc::clone(&self.db)), relevance)
    }
}

/// Entry `(i, j)`: mAP for attribute `j` under the condition-`i` subspace.
pub fn cross_condition_matrix(world: &SyntheticWorld) -> Result<Vec<Vec<f64>>> {
    let bench = WorldBench::standard(world)?;
    let names = world.attribute_names();
    let cfg = ModulatorConfig::default();
    names
        .iter()
        .map(|cond| {
            let s = Arc::new(bench.subspace(&[cond], &cfg)?);
            let view = prepare_condition(&bench.db, &s, cfg)?;
            names
                .iter()
                .map(|attr| Ok(mean_ap(&bench.queries, &view, attr)?.map))
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub use_rotation: bool,
    pub use_manifold: bool,
    pub map: f64,
}

/// The three configurations: neither step, manifold only, both.
pub const ABLATION_CONFIGS: [(bool, bool); 3] = [(false, false), (false, true), (true, true)];

pub fn ablation(bench: &WorldBench, condition: &str) -> Result<Vec<AblationRow>> {
    ABLATION_CONFIGS
        .iter()
        .map(|&(use_rotation, use_manifold)| {
            let cfg = ModulatorConfig {
                use_rotation,
                use_manifold,
                ..ModulatorConfig::default()
            };
            Ok(AblationRow {
                use_rotation,
                use_manifold,
                map: bench.conditioned_map(&[condition], condition, cfg)?.map,
            })
        })
        .collect()
}
