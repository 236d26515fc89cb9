//! The modulator and the conditional similarities built on it.
//!
//! With the default configuration an image feature `v` is modulated as
//! `P_c log_{mu_c}(H v)`: rotate so the database mean sits on the text mean,
//! log-map at the text mean, project onto the condition subspace. The
//! symmetric similarity compares two modulated features by cosine; the
//! asymmetric one compares a modulated query against a raw database feature.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{dot, log_map_into, norm, Rotation, UnitVector};
use crate::subspace::{ConditionSubspace, SubspaceKind};

/// Modulated features with norm at or below this are zero projections.
pub const ZERO_PROJECTION_NORM: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ZeroProjectionPolicy {
    Error,
    #[default]
    ScoreZero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModulatorConfig {
    pub use_rotation: bool,
    /// `false` selects the Euclidean ablation: raw features projected onto a
    /// subspace decomposed from raw prompt rows.
    pub use_manifold: bool,
    pub zero_projection_policy: ZeroProjectionPolicy,
}

impl Default for ModulatorConfig {
    fn default() -> Self {
        Self {
            use_rotation: true,
            use_manifold: true,
            zero_projection_policy: ZeroProjectionPolicy::ScoreZero,
        }
    }
}

impl ModulatorConfig {
    /// Log map and projection without the mean-alignment rotation.
    pub fn manifold_only() -> Self {
        Self {
            use_rotation: false,
            ..Self::default()
        }
    }

    /// Neither rotation nor log map.
    pub fn euclidean() -> Self {
        Self {
            use_rotation: false,
            use_manifold: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.use_rotation && !self.use_manifold {
            return Err(Error::InvalidConfig(
                "rotation requires manifold modeling".into(),
            ));
        }
        Ok(())
    }

    pub fn subspace_kind(&self) -> SubspaceKind {
        if self.use_manifold {
            SubspaceKind::Tangent
        } else {
            SubspaceKind::Euclidean
        }
    }

    pub(crate) fn check(&self, s: &ConditionSubspace, r: &Rotation) -> Result<()> {
        self.validate()?;
        let wanted = self.subspace_kind();
        if s.kind() != wanted {
            return Err(Error::SubspaceKindMismatch {
                built: s.kind().as_str(),
                wanted: wanted.as_str(),
            });
        }
        if self.use_rotation && r.dim() != s.dim() {
            return Err(Error::DimensionMismatch {
                expected: s.dim(),
                actual: r.dim(),
            });
        }
        Ok(())
    }
}

/// A cosine similarity in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimilarityScore(f64);

impl SimilarityScore {
    pub fn new(value: f64) -> Result<Self> {
        if !(-1.0 - 1e-6..=1.0 + 1e-6).contains(&value) {
            return Err(Error::InvalidArgument(format!("similarity {value} out of range")));
        }
        Ok(Self(value.clamp(-1.0, 1.0)))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Scratch buffers for repeated modulation without allocation.
#[derive(Debug, Clone)]
pub(crate) struct Workspace {
    rotated: Vec<f64>,
    tangent: Vec<f64>,
    coeffs: Vec<f64>,
}

impl Workspace {
    pub(crate) fn new(dim: usize, k: usize) -> Self {
        Self {
            rotated: vec![0.0; dim],
            tangent: vec![0.0; dim],
            coeffs: vec![0.0; k],
        }
    }
}

/// Hot-path modulation into `out`; configuration must already be checked.
pub(crate) fn modulate_into(
    s: &ConditionSubspace,
    r: &Rotation,
    v: &[f64],
    cfg: &ModulatorConfig,
    ws: &mut Workspace,
    out: &mut [f64],
) -> Result<()> {
    if v.len() != s.dim() {
        return Err(Error::DimensionMismatch {
            expected: s.dim(),
            actual: v.len(),
        });
    }
    if !cfg.use_manifold {
        s.project_into(v, &mut ws.coeffs, out);
        return Ok(());
    }
    ws.rotated.copy_from_slice(v);
    if cfg.use_rotation {
        r.apply_in_place(&mut ws.rotated)?;
    }
    log_map_into(s.mu_c().coords(), &ws.rotated, &mut ws.tangent)?;
    s.project_into(&ws.tangent, &mut ws.coeffs, out);
    Ok(())
}

/// Modulated feature of `v` under the condition subspace `s`.
///
/// `r` should be the alignment from the database mean to `s.mu_c()`; it is
/// ignored when `cfg.use_rotation` is off.
pub fn modulate(
    s: &ConditionSubspace,
    r: &Rotation,
    v: &UnitVector,
    cfg: &ModulatorConfig,
) -> Result<Vec<f64>> {
    cfg.check(s, r)?;
    let mut ws = Workspace::new(s.dim(), s.k());
    let mut out = vec![0.0; s.dim()];
    modulate_into(s, r, v.coords(), cfg, &mut ws, &mut out)?;
    Ok(out)
}

/// Cosine of two vectors with the zero-projection policy applied.
pub fn cosine(a: &[f64], b: &[f64], policy: ZeroProjectionPolicy) -> Result<SimilarityScore> {
    cosine_from_dot(dot(a, b), norm(a), norm(b), policy)
}

pub(crate) fn cosine_from_dot(
    dot_ab: f64,
    norm_a: f64,
    norm_b: f64,
    policy: ZeroProjectionPolicy,
) -> Result<SimilarityScore> {
    if norm_a <= ZERO_PROJECTION_NORM || norm_b <= ZERO_PROJECTION_NORM {
        return match policy {
            ZeroProjectionPolicy::Error => Err(Error::ZeroProjection),
            ZeroProjectionPolicy::ScoreZero => Ok(SimilarityScore(0.0)),
        };
    }
    Ok(SimilarityScore((dot_ab / (norm_a * norm_b)).clamp(-1.0, 1.0)))
}

/// Symmetric conditional similarity: both sides modulated.
pub fn csim_clay(
    s: &ConditionSubspace,
    r: &Rotation,
    v_q: &UnitVector,
    v_d: &UnitVector,
    cfg: &ModulatorConfig,
) -> Result<SimilarityScore> {
    let q = modulate(s, r, v_q, cfg)?;
    let d = modulate(s, r, v_d, cfg)?;
    cosine(&q, &d, cfg.zero_projection_policy)
}

/// Unconditioned baseline.
pub fn csim_raw(v_q: &UnitVector, v_d: &UnitVector) -> SimilarityScore {
    SimilarityScore(v_q.dot(v_d).clamp(-1.0, 1.0))
}

/// Asymmetric conditional similarity: only the query is modulated.
pub fn csim_asym(
    s: &ConditionSubspace,
    r: &Rotation,
    v_q: &UnitVector,
    v_d: &UnitVector,
    cfg: &ModulatorConfig,
) -> Result<SimilarityScore> {
    let q = modulate(s, r, v_q, cfg)?;
    cosine(&q, v_d.coords(), cfg.zero_projection_policy)
}
