//! Condition subspaces built from prompt embeddings.
//!
//! A condition is described by `n` prompt embeddings `t_1..t_n`. Their
//! normalized mean `mu_c` is the reference point; every prompt is sent to the
//! tangent space at `mu_c` with the log map and the stacked `n x d` tangent
//! matrix is decomposed with an SVD. The top-k right singular vectors `V_k`
//! span the condition subspace and `P_c = V_k V_k^T` is its projector, applied
//! in factored form (two thin products, O(d k)) and never materialized.
//!
//! The Euclidean variant skips the log map and decomposes the raw prompt rows;
//! it exists for the ablation that drops the manifold treatment.

use nalgebra::DMatrix;

use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::geometry::{dot, log_map_into, spherical_mean, TangentVector, UnitVector};

/// Singular values at or below `RANK_RTOL * sigma_1` are treated as zero.
pub const RANK_RTOL: f64 = 1e-7;
/// Default number of basis vectors.
pub const DEFAULT_K: usize = 50;
/// Allowed distance between a tangent vector's base and `mu_c`.
pub const BASE_TOLERANCE: f64 = 1e-4;

/// Text embeddings of the prompts describing one or more conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptMatrix {
    rows: Vec<UnitVector>,
    condition_names: Vec<String>,
    prompt_texts: Vec<String>,
}

impl PromptMatrix {
    pub fn new(condition_name: impl Into<String>, rows: Vec<UnitVector>) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::TooFewPrompts {
                min: 2,
                actual: rows.len(),
            });
        }
        let dim = rows[0].dim();
        if let Some(bad) = rows.iter().find(|r| r.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: bad.dim(),
            });
        }
        Ok(Self {
            rows,
            condition_names: vec![condition_name.into()],
            prompt_texts: Vec::new(),
        })
    }

    pub fn from_embeddings(condition_name: impl Into<String>, m: &EmbeddingMatrix) -> Result<Self> {
        let rows = (0..m.len()).map(|i| m.unit_row(i)).collect();
        Self::new(condition_name, rows)
    }

    /// Attaches the prompt strings. Provenance only; never used in the math.
    pub fn with_texts(mut self, texts: Vec<String>) -> Result<Self> {
        if texts.len() != self.rows.len() {
            return Err(Error::InvalidArgument(format!(
                "{} prompt texts for {} rows",
                texts.len(),
                self.rows.len()
            )));
        }
        self.prompt_texts = texts;
        Ok(self)
    }

    pub fn rows(&self) -> &[UnitVector] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows[0].dim()
    }

    pub fn condition_names(&self) -> &[String] {
        &self.condition_names
    }

    pub fn prompt_texts(&self) -> &[String] {
        &self.prompt_texts
    }
}

/// Concatenates prompt matrices row-wise. The mean is recomputed over the
/// union when the result is passed to [`build_subspace`].
pub fn merge_conditions(parts: &[PromptMatrix]) -> Result<PromptMatrix> {
    let first = parts.first().ok_or(Error::EmptyInput)?;
    let dim = first.dim();
    let mut merged = PromptMatrix {
        rows: Vec::new(),
        condition_names: Vec::new(),
        prompt_texts: Vec::new(),
    };
    let keep_texts = parts.iter().all(|p| !p.prompt_texts.is_empty());
    for part in parts {
        if part.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: part.dim(),
            });
        }
        merged.rows.extend(part.rows.iter().cloned());
        merged.condition_names.extend(part.condition_names.iter().cloned());
        if keep_texts {
            merged.prompt_texts.extend(part.prompt_texts.iter().cloned());
        }
    }
    Ok(merged)
}

/// Which features a subspace was decomposed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubspaceKind {
    /// Log-mapped prompts at `mu_c`; projects tangent vectors.
    Tangent,
    /// Raw prompt rows; projects raw features.
    Euclidean,
}

impl SubspaceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SubspaceKind::Tangent => "tangent",
            SubspaceKind::Euclidean => "euclidean",
        }
    }
}

/// The textual subspace of one (possibly merged) condition.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionSubspace {
    kind: SubspaceKind,
    mu_c: UnitVector,
    /// Column-major `d x k`.
    basis: Vec<f64>,
    k: usize,
    singular_values: Vec<f64>,
    condition_names: Vec<String>,
}

impl ConditionSubspace {
    /// Assembles a subspace from its parts, as read back from disk. Only
    /// shapes and the spectrum ordering are checked here; the storage layer
    /// re-verifies orthonormality.
    pub fn from_parts(
        kind: SubspaceKind,
        mu_c: UnitVector,
        basis: Vec<f64>,
        k: usize,
        singular_values: Vec<f64>,
        condition_names: Vec<String>,
    ) -> Result<Self> {
        let dim = mu_c.dim();
        if k == 0 {
            return Err(Error::InvalidK);
        }
        if basis.len() != dim * k {
            return Err(Error::DimensionMismatch {
                expected: dim * k,
                actual: basis.len(),
            });
        }
        if singular_values.len() < k {
            return Err(Error::InvalidArgument(format!(
                "spectrum of length {} is shorter than k = {k}",
                singular_values.len()
            )));
        }
        if singular_values.iter().any(|s| !(*s >= 0.0))
            || singular_values.windows(2).any(|w| w[0] < w[1])
        {
            return Err(Error::InvalidArgument(
                "singular values must be non-negative and non-increasing".into(),
            ));
        }
        Ok(Self {
            kind,
            mu_c,
            basis,
            k,
            singular_values,
            condition_names,
        })
    }

    pub fn kind(&self) -> SubspaceKind {
        self.kind
    }

    pub fn mu_c(&self) -> &UnitVector {
        &self.mu_c
    }

    pub fn dim(&self) -> usize {
        self.mu_c.dim()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Column `j` of `V_k`.
    pub fn basis_vector(&self, j: usize) -> &[f64] {
        let d = self.dim();
        &self.basis[j * d..(j + 1) * d]
    }

    /// Column-major `d x k` basis.
    pub fn basis(&self) -> &[f64] {
        &self.basis
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn condition_names(&self) -> &[String] {
        &self.condition_names
    }

    /// Display name, e.g. `color+category` for merged conditions.
    pub fn name(&self) -> String {
        self.condition_names.join("+")
    }

    /// Largest `|<b_i, b_j> - delta_ij|` over basis pairs.
    pub fn orthonormality_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.k {
            for j in i..self.k {
                let g = dot(self.basis_vector(i), self.basis_vector(j));
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g - target).abs());
            }
        }
        worst
    }

    /// Largest `|<b_j, mu_c>|` over basis vectors.
    pub fn tangency_error(&self) -> f64 {
        (0..self.k)
            .map(|j| dot(self.basis_vector(j), self.mu_c.coords()).abs())
            .fold(0.0, f64::max)
    }

    /// Writes `V_k (V_k^T x)` into `out`, using `coeffs` (length k) as scratch.
    /// No base or kind checks: this is the hot path.
    pub fn project_into(&self, x: &[f64], coeffs: &mut [f64], out: &mut [f64]) {
        let d = self.dim();
        debug_assert_eq!(x.len(), d);
        for (j, c) in coeffs.iter_mut().enumerate().take(self.k) {
            *c = dot(self.basis_vector(j), x);
        }
        out.fill(0.0);
        for (j, &c) in coeffs.iter().enumerate().take(self.k) {
            for (o, b) in out.iter_mut().zip(self.basis_vector(j)) {
                *o += c * b;
            }
        }
    }

    /// `P_c x` for a raw feature of a Euclidean subspace, or any vector when
    /// the caller has already established tangency.
    pub fn project_raw(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        let mut coeffs = vec![0.0; self.k];
        let mut out = vec![0.0; self.dim()];
        self.project_into(x, &mut coeffs, &mut out);
        Ok(out)
    }
}

/// Projects a tangent vector at `mu_c` onto the subspace.
pub fn project(s: &ConditionSubspace, t: &TangentVector) -> Result<Vec<f64>> {
    if t.coords().len() != s.dim() {
        return Err(Error::DimensionMismatch {
            expected: s.dim(),
            actual: t.coords().len(),
        });
    }
    if t.base().max_abs_diff(s.mu_c()) > BASE_TOLERANCE {
        return Err(Error::BaseMismatch);
    }
    s.project_raw(t.coords())
}

/// Fraction of spectral energy in the top `j` singular values.
pub fn explained_energy(s: &ConditionSubspace, j: usize) -> Result<f64> {
    let sv = s.singular_values();
    if j == 0 || j > sv.len() {
        return Err(Error::IndexOutOfRange {
            index: j,
            len: sv.len(),
        });
    }
    let total: f64 = sv.iter().map(|x| x * x).sum();
    if total == 0.0 {
        return Ok(1.0);
    }
    let head: f64 = sv[..j].iter().map(|x| x * x).sum();
    Ok((head / total).min(1.0))
}

/// Manifold-aware subspace: log map at the prompt mean, then SVD.
pub fn build_subspace(prompts: &PromptMatrix, k: usize) -> Result<ConditionSubspace> {
    build(prompts, k, SubspaceKind::Tangent)
}

/// Euclidean subspace: SVD of the raw prompt rows, no centering.
pub fn build_euclidean_subspace(prompts: &PromptMatrix, k: usize) -> Result<ConditionSubspace> {
    build(prompts, k, SubspaceKind::Euclidean)
}

fn build(prompts: &PromptMatrix, k: usize, kind: SubspaceKind) -> Result<ConditionSubspace> {
    if k == 0 {
        return Err(Error::InvalidK);
    }
    let n = prompts.len();
    let d = prompts.dim();
    let mu_c = spherical_mean(prompts.rows().iter().map(|r| r.coords()))?;

    let mut stacked = DMatrix::<f64>::zeros(n, d);
    let mut row_buf = vec![0.0; d];
    for (i, row) in prompts.rows().iter().enumerate() {
        match kind {
            SubspaceKind::Tangent => log_map_into(mu_c.coords(), row.coords(), &mut row_buf)?,
            SubspaceKind::Euclidean => row_buf.copy_from_slice(row.coords()),
        }
        for (j, &x) in row_buf.iter().enumerate() {
            stacked[(i, j)] = x;
        }
    }

    let svd = stacked.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors were requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let singular_values: Vec<f64> = order.iter().map(|&i| svd.singular_values[i].max(0.0)).collect();

    let sigma_1 = singular_values.first().copied().unwrap_or(0.0);
    if !(sigma_1 > 1e-12) {
        return Err(Error::RankZero);
    }
    let rank = singular_values
        .iter()
        .take_while(|&&s| s > RANK_RTOL * sigma_1)
        .count();
    let k_eff = k.min(rank);

    let mut basis = Vec::with_capacity(d * k_eff);
    for &src in order.iter().take(k_eff) {
        let mut column: Vec<f64> = v_t.row(src).iter().copied().collect();
        orient(&mut column);
        basis.extend_from_slice(&column);
    }

    Ok(ConditionSubspace {
        kind,
        mu_c,
        basis,
        k: k_eff,
        singular_values,
        condition_names: prompts.condition_names().to_vec(),
    })
}

/// Flips `v` so its largest-magnitude coordinate (first on ties) is positive.
fn orient(v: &mut [f64]) {
    let mut pivot = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[pivot].abs() {
            pivot = i;
        }
    }
    if v[pivot] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{exp_map, normalize};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit(v: &[f64]) -> UnitVector {
        normalize(v).unwrap()
    }

    fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> UnitVector {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        unit(&v)
    }

    /// Prompts whose tangent images at e1 lie in span(e2, e3), d = 4.
    fn plane_prompts() -> PromptMatrix {
        let mu = UnitVector::basis(4, 0).unwrap();
        let dirs = [[0.0, 0.3, 0.0, 0.0], [0.0, -0.3, 0.0, 0.0], [0.0, 0.0, 0.2, 0.0], [0.0, 0.0, -0.2, 0.0], [0.0, 0.1, 0.1, 0.0], [0.0, -0.1, -0.1, 0.0]];
        let rows = dirs
            .iter()
            .map(|t| exp_map(&mu, &TangentVector::new(mu.clone(), t.to_vec()).unwrap()).unwrap())
            .collect();
        PromptMatrix::new("plane", rows).unwrap()
    }

    fn dense_projector(s: &ConditionSubspace) -> Vec<Vec<f64>> {
        let d = s.dim();
        let mut p = vec![vec![0.0; d]; d];
        for j in 0..s.k() {
            let b = s.basis_vector(j);
            for r in 0..d {
                for c in 0..d {
                    p[r][c] += b[r] * b[c];
                }
            }
        }
        p
    }

    #[test]
    fn two_plane_recovered() {
        let s = build_subspace(&plane_prompts(), 2).unwrap();
        assert_eq!(s.k(), 2);
        assert!(s.mu_c().max_abs_diff(&UnitVector::basis(4, 0).unwrap()) < 1e-12);
        let p = dense_projector(&s);
        // oracle: the projector onto span(e2, e3)
        for r in 0..4 {
            for c in 0..4 {
                let expected = if r == c && (r == 1 || r == 2) { 1.0 } else { 0.0 };
                assert!((p[r][c] - expected).abs() < 1e-6, "P[{r}][{c}] = {}", p[r][c]);
            }
        }
        // idempotence of the dense projector
        for r in 0..4 {
            for c in 0..4 {
                let pp: f64 = (0..4).map(|m| p[r][m] * p[m][c]).sum();
                assert!((pp - p[r][c]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn k_is_clamped_to_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<_> = (0..10).map(|_| random_unit(&mut rng, 32)).collect();
        let s = build_subspace(&PromptMatrix::new("c", rows).unwrap(), 50).unwrap();
        // ten tangent rows that sum to roughly zero span at most nine directions
        assert!(s.k() <= 9, "k = {}", s.k());
        assert!(s.k() >= 1);
        assert_eq!(s.singular_values().len(), 10);
    }

    #[test]
    fn identical_prompts_have_rank_zero() {
        let x = unit(&[0.1, 0.2, 0.3]);
        let p = PromptMatrix::new("same", vec![x.clone(), x.clone(), x]).unwrap();
        assert!(matches!(build_subspace(&p, 2), Err(Error::RankZero)));
    }

    #[test]
    fn prompt_matrix_validation() {
        let x = unit(&[1.0, 0.0]);
        assert!(matches!(
            PromptMatrix::new("one", vec![x.clone()]),
            Err(Error::TooFewPrompts { .. })
        ));
        assert!(matches!(
            PromptMatrix::new("mixed", vec![x, unit(&[1.0, 0.0, 0.0])]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(build_subspace(&plane_prompts(), 0), Err(Error::InvalidK)));
    }

    #[test]
    fn merge_cases() {
        let a = plane_prompts();
        let single = merge_conditions(std::slice::from_ref(&a)).unwrap();
        assert_eq!(build_subspace(&single, 2).unwrap(), build_subspace(&a, 2).unwrap());

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let b = PromptMatrix::new("other", (0..5).map(|_| random_unit(&mut rng, 4)).collect()).unwrap();
        let ab = merge_conditions(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(ab.len(), a.len() + b.len());
        assert_eq!(ab.condition_names(), &["plane".to_string(), "other".to_string()]);

        let c = PromptMatrix::new("wide", (0..3).map(|_| random_unit(&mut rng, 5)).collect()).unwrap();
        assert!(matches!(merge_conditions(&[a, c]), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(merge_conditions(&[]), Err(Error::EmptyInput)));
    }

    #[test]
    fn project_fixed_point_null_space_and_dense_oracle() {
        let s = build_subspace(&plane_prompts(), 2).unwrap();
        let mu = s.mu_c().clone();
        let inside = TangentVector::new(mu.clone(), vec![0.0, 0.4, -0.7, 0.0]).unwrap();
        let out = project(&s, &inside).unwrap();
        assert!(out.iter().zip(inside.coords()).all(|(a, b)| (a - b).abs() < 1e-6));

        let outside = TangentVector::new(mu.clone(), vec![0.0, 0.0, 0.0, 1.3]).unwrap();
        assert!(project(&s, &outside).unwrap().iter().all(|x| x.abs() < 1e-6));

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut wide_rows: Vec<_> = (0..30).map(|_| random_unit(&mut rng, 12)).collect();
        wide_rows.push(UnitVector::basis(12, 0).unwrap());
        let s = build_subspace(&PromptMatrix::new("w", wide_rows).unwrap(), 5).unwrap();
        let p = dense_projector(&s);
        for _ in 0..20 {
            let raw: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
            let t = TangentVector::project_onto(s.mu_c().clone(), raw).unwrap();
            let fast = project(&s, &t).unwrap();
            for r in 0..12 {
                let dense: f64 = (0..12).map(|c| p[r][c] * t.coords()[c]).sum();
                assert!((dense - fast[r]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn project_rejects_foreign_base() {
        let s = build_subspace(&plane_prompts(), 2).unwrap();
        let t = TangentVector::zero(UnitVector::basis(4, 3).unwrap());
        assert!(matches!(project(&s, &t), Err(Error::BaseMismatch)));
    }

    #[test]
    fn explained_energy_cases() {
        let mu = UnitVector::basis(3, 0).unwrap();
        let mk = |sv: Vec<f64>| {
            ConditionSubspace::from_parts(SubspaceKind::Tangent, mu.clone(), vec![0.0, 1.0, 0.0], 1, sv, vec!["x".into()]).unwrap()
        };
        let s = mk(vec![2.0, 1.0]);
        assert!((explained_energy(&s, 1).unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(explained_energy(&s, 2).unwrap(), 1.0);
        let s = mk(vec![2.0, 0.0, 0.0]);
        assert_eq!(explained_energy(&s, 1).unwrap(), 1.0);
        assert!(matches!(explained_energy(&s, 0), Err(Error::IndexOutOfRange { .. })));
        assert!(matches!(explained_energy(&s, 4), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn sign_convention_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<_> = (0..20).map(|_| random_unit(&mut rng, 16)).collect();
        let p = PromptMatrix::new("c", rows).unwrap();
        let a = build_subspace(&p, 6).unwrap();
        let b = build_subspace(&p, 6).unwrap();
        assert_eq!(a, b);
        for j in 0..a.k() {
            let col = a.basis_vector(j);
            let pivot = col.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            assert!(pivot > 0.0);
        }
        assert!(a.orthonormality_error() < 1e-10);
        assert!(a.tangency_error() < 1e-10);
    }
}
