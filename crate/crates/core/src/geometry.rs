//! Hypersphere primitives.
//!
//! Embeddings live on the unit sphere S^{d-1}. This module provides the few
//! operations the retrieval pipeline needs on it:
//!
//! - normalization and the normalized Euclidean mean,
//! - the logarithm and exponential maps at a reference point `mu`,
//! - a pair of Householder reflections sending one unit vector onto another
//!   while preserving every inner product.
//!
//! Everything is computed in `f64`. The typed wrappers ([`UnitVector`],
//! [`TangentVector`], [`Rotation`]) validate their invariants at construction;
//! the slice-level helpers are what the hot paths in [`crate::index`] call.

use crate::error::{Error, Result};

/// Norms at or below this are treated as zero.
pub const ZERO_NORM: f64 = 1e-12;
/// Allowed deviation of a unit vector's norm from 1.
pub const UNIT_TOLERANCE: f64 = 1e-6;
/// A point `x` is antipodal to `mu` when `x . mu <= -1 + ANTIPODE_EPS`.
pub const ANTIPODE_EPS: f64 = 1e-7;
/// Below this angle the log map returns the zero tangent vector.
pub const LOG_ZERO_ANGLE: f64 = 1e-8;
/// Below this angle `theta / sin(theta)` is replaced by its Taylor series.
pub const LOG_SERIES_ANGLE: f64 = 1e-4;
/// A Householder reflection whose normal is shorter than this is the identity.
pub const REFLECTION_IDENTITY: f64 = 1e-9;
/// Tolerance for tangency checks on [`TangentVector`].
pub const TANGENT_TOLERANCE: f64 = 1e-5;

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Mixed-precision dot product, accumulated in `f64`.
#[inline]
pub fn dot_f32(a: &[f64], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, &y)| x * f64::from(y)).sum()
}

fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}

/// A point on the unit sphere S^{d-1}, d >= 2.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitVector(Vec<f64>);

impl UnitVector {
    /// Wraps coordinates that are already unit norm (within `1e-6`).
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.len() < 2 {
            return Err(Error::DimensionTooSmall(coords.len()));
        }
        let deviation = (norm(&coords) - 1.0).abs();
        if !(deviation <= UNIT_TOLERANCE) {
            return Err(Error::NotUnitNorm { deviation });
        }
        Ok(Self(coords))
    }

    /// The `i`-th standard basis vector of R^d.
    pub fn basis(dim: usize, i: usize) -> Result<Self> {
        if i >= dim {
            return Err(Error::IndexOutOfRange { index: i, len: dim });
        }
        let mut coords = vec![0.0; dim];
        coords[i] = 1.0;
        Self::new(coords)
    }

    /// Widens a stored `f32` row and renormalizes it in `f64`.
    pub fn from_f32(row: &[f32]) -> Result<Self> {
        let wide: Vec<f64> = row.iter().map(|&x| f64::from(x)).collect();
        normalize(&wide)
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &UnitVector) -> f64 {
        dot(&self.0, &other.0)
    }

    pub fn negated(&self) -> UnitVector {
        UnitVector(self.0.iter().map(|x| -x).collect())
    }

    /// Largest coordinate-wise difference to `other`.
    pub fn max_abs_diff(&self, other: &UnitVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl AsRef<[f64]> for UnitVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// A vector in the tangent space at `base`, i.e. orthogonal to it.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    coords: Vec<f64>,
    base: UnitVector,
}

impl TangentVector {
    pub fn new(base: UnitVector, coords: Vec<f64>) -> Result<Self> {
        check_dim(base.dim(), coords.len())?;
        let residual = dot(&coords, base.coords()).abs();
        if !(residual <= TANGENT_TOLERANCE) {
            return Err(Error::NotTangent { residual });
        }
        let n = norm(&coords);
        if n > std::f64::consts::PI + UNIT_TOLERANCE {
            return Err(Error::InvalidArgument(format!(
                "tangent norm {n} exceeds the geodesic bound pi"
            )));
        }
        Ok(Self { coords, base })
    }

    pub fn zero(base: UnitVector) -> Self {
        Self {
            coords: vec![0.0; base.dim()],
            base,
        }
    }

    /// Projects arbitrary coordinates onto the tangent space at `base`.
    pub fn project_onto(base: UnitVector, mut coords: Vec<f64>) -> Result<Self> {
        check_dim(base.dim(), coords.len())?;
        remove_component(&mut coords, base.coords());
        Ok(Self { coords, base })
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn base(&self) -> &UnitVector {
        &self.base
    }

    pub fn norm(&self) -> f64 {
        norm(&self.coords)
    }

    pub fn into_parts(self) -> (UnitVector, Vec<f64>) {
        (self.base, self.coords)
    }
}

/// `v <- v - (v . u) u` for unit `u`.
#[inline]
fn remove_component(v: &mut [f64], u: &[f64]) {
    let c = dot(v, u);
    for (vi, ui) in v.iter_mut().zip(u) {
        *vi -= c * ui;
    }
}

/// Scales `v` to unit length.
pub fn normalize(v: &[f64]) -> Result<UnitVector> {
    if v.len() < 2 {
        return Err(Error::DimensionTooSmall(v.len()));
    }
    let n = norm(v);
    if !(n > ZERO_NORM) {
        return Err(Error::ZeroVector { norm: n });
    }
    Ok(UnitVector(v.iter().map(|x| x / n).collect()))
}

/// Normalized arithmetic mean of unit rows.
pub fn spherical_mean<'a, I>(rows: I) -> Result<UnitVector>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut rows = rows.into_iter();
    let first = rows.next().ok_or(Error::EmptyInput)?;
    let mut sum = first.to_vec();
    for row in rows {
        check_dim(sum.len(), row.len())?;
        for (s, x) in sum.iter_mut().zip(row) {
            *s += x;
        }
    }
    finish_mean(sum)
}

/// [`spherical_mean`] over stored `f32` rows of length `dim`.
pub fn spherical_mean_f32(data: &[f32], dim: usize) -> Result<UnitVector> {
    if dim == 0 || data.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut sum = vec![0.0f64; dim];
    for row in data.chunks_exact(dim) {
        for (s, &x) in sum.iter_mut().zip(row) {
            *s += f64::from(x);
        }
    }
    finish_mean(sum)
}

fn finish_mean(sum: Vec<f64>) -> Result<UnitVector> {
    let n = norm(&sum);
    if !(n > ZERO_NORM) {
        return Err(Error::DegenerateMean { norm: n });
    }
    normalize(&sum)
}

/// Writes `log_mu(x)` into `out`.
///
/// `mu` and `x` must be unit vectors of the same dimension. The angle is taken
/// as `atan2(|x - (x.mu) mu|, x.mu)`, which agrees with `acos(x.mu)` for unit
/// inputs but keeps full precision near the reference point.
pub fn log_map_into(mu: &[f64], x: &[f64], out: &mut [f64]) -> Result<()> {
    check_dim(mu.len(), x.len())?;
    check_dim(mu.len(), out.len())?;
    let cosine = dot(x, mu);
    if cosine <= -1.0 + ANTIPODE_EPS {
        return Err(Error::AntipodalPoint { cosine });
    }
    for ((o, xi), mi) in out.iter_mut().zip(x).zip(mu) {
        *o = xi - cosine * mi;
    }
    // one more pass removes the rounding residue along mu
    remove_component(out, mu);
    let sine = norm(out);
    let theta = sine.atan2(cosine);
    if theta < LOG_ZERO_ANGLE {
        out.fill(0.0);
        return Ok(());
    }
    let scale = if theta < LOG_SERIES_ANGLE {
        1.0 + theta * theta / 6.0
    } else {
        theta / sine
    };
    for o in out.iter_mut() {
        *o *= scale;
    }
    Ok(())
}

/// Logarithm map of `x` at `mu`. The result has norm equal to the geodesic
/// distance `acos(x . mu)`.
pub fn log_map(mu: &UnitVector, x: &UnitVector) -> Result<TangentVector> {
    let mut out = vec![0.0; mu.dim()];
    log_map_into(mu.coords(), x.coords(), &mut out)?;
    Ok(TangentVector {
        coords: out,
        base: mu.clone(),
    })
}

/// Exponential map at `mu`; inverse of [`log_map`] for `|t| < pi`.
pub fn exp_map(mu: &UnitVector, t: &TangentVector) -> Result<UnitVector> {
    check_dim(mu.dim(), t.coords.len())?;
    let n = t.norm();
    if n <= ZERO_NORM {
        return Ok(mu.clone());
    }
    let (c, s) = (n.cos(), n.sin() / n);
    let point: Vec<f64> = mu
        .coords()
        .iter()
        .zip(&t.coords)
        .map(|(m, v)| c * m + s * v)
        .collect();
    normalize(&point)
}

/// Composition of two Householder reflections, `H(x) = H2 (H1 x)`.
///
/// Each reflection is stored as its unit normal; `None` is the identity.
/// The `d x d` matrices are never formed.
#[derive(Debug, Clone, PartialEq)]
pub struct Rotation {
    dim: usize,
    u1: Option<Vec<f64>>,
    u2: Option<Vec<f64>>,
}

impl Rotation {
    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            u1: None,
            u2: None,
        }
    }

    /// Builds a rotation from explicit reflection normals (normalized here).
    pub fn from_normals(dim: usize, u1: Option<Vec<f64>>, u2: Option<Vec<f64>>) -> Result<Self> {
        let prepare = |u: Option<Vec<f64>>| -> Result<Option<Vec<f64>>> {
            match u {
                None => Ok(None),
                Some(u) => {
                    check_dim(dim, u.len())?;
                    Ok(Some(normalize(&u)?.into_inner()))
                }
            }
        };
        Ok(Self {
            dim,
            u1: prepare(u1)?,
            u2: prepare(u2)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_identity(&self) -> bool {
        self.u1.is_none() && self.u2.is_none()
    }

    pub fn first_normal(&self) -> Option<&[f64]> {
        self.u1.as_deref()
    }

    pub fn second_normal(&self) -> Option<&[f64]> {
        self.u2.as_deref()
    }

    /// Applies the rotation in place, O(d).
    pub fn apply_in_place(&self, x: &mut [f64]) -> Result<()> {
        check_dim(self.dim, x.len())?;
        for u in [&self.u1, &self.u2].into_iter().flatten() {
            reflect(u, x);
        }
        Ok(())
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = x.to_vec();
        self.apply_in_place(&mut out)?;
        Ok(out)
    }
}

/// `x <- x - 2 u (u . x)` for unit `u`.
#[inline]
fn reflect(u: &[f64], x: &mut [f64]) {
    let c = 2.0 * dot(u, x);
    for (xi, ui) in x.iter_mut().zip(u) {
        *xi -= c * ui;
    }
}

/// Rotation sending `from` onto `to` through the bisector
/// `m = (from + to) / |from + to|`: the first reflection swaps `from` and `m`,
/// the second swaps `m` and `to`.
pub fn householder_align(from: &UnitVector, to: &UnitVector) -> Result<Rotation> {
    let dim = from.dim();
    check_dim(dim, to.dim())?;
    let sum: Vec<f64> = from.coords().iter().zip(to.coords()).map(|(a, b)| a + b).collect();
    if norm(&sum) <= ANTIPODE_EPS {
        return Err(Error::AntipodalMeans);
    }
    let mid = normalize(&sum)?;
    let normal = |a: &[f64], b: &[f64]| -> Option<Vec<f64>> {
        let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        let n = norm(&diff);
        (n > REFLECTION_IDENTITY).then(|| diff.iter().map(|x| x / n).collect())
    };
    Ok(Rotation {
        dim,
        u1: normal(from.coords(), mid.coords()),
        u2: normal(mid.coords(), to.coords()),
    })
}

/// Free-function form of [`Rotation::apply`].
pub fn apply_rotation(rotation: &Rotation, x: &[f64]) -> Result<Vec<f64>> {
    rotation.apply(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2};

    fn e(d: usize, i: usize) -> UnitVector {
        UnitVector::basis(d, i).unwrap()
    }

    #[test]
    fn normalize_cases() {
        let v = normalize(&[3.0, 4.0]).unwrap();
        assert!((v.coords()[0] - 0.6).abs() < 1e-15);
        assert!((v.coords()[1] - 0.8).abs() < 1e-15);
        assert_eq!(normalize(&[1.0, 0.0, 0.0]).unwrap(), e(3, 0));
        assert!(matches!(normalize(&[0.0, 0.0]), Err(Error::ZeroVector { .. })));
        assert!(matches!(normalize(&[1.0]), Err(Error::DimensionTooSmall(1))));
    }

    #[test]
    fn unit_vector_rejects_off_norm() {
        assert!(matches!(
            UnitVector::new(vec![1.0, 1.0]),
            Err(Error::NotUnitNorm { .. })
        ));
        assert!(UnitVector::new(vec![1.0 + 5e-7, 0.0]).is_ok());
    }

    #[test]
    fn spherical_mean_cases() {
        let m = spherical_mean([e(3, 0).coords(), e(3, 1).coords()]).unwrap();
        assert!((m.coords()[0] - FRAC_1_SQRT_2).abs() < 1e-15);
        assert!((m.coords()[1] - FRAC_1_SQRT_2).abs() < 1e-15);
        assert_eq!(m.coords()[2], 0.0);

        let x = normalize(&[0.2, -0.5, 0.7]).unwrap();
        assert!(spherical_mean([x.coords()]).unwrap().max_abs_diff(&x) < 1e-15);

        let err = spherical_mean([e(3, 0).coords(), e(3, 0).negated().coords()]);
        assert!(matches!(err, Err(Error::DegenerateMean { .. })));
        assert!(matches!(spherical_mean(std::iter::empty()), Err(Error::EmptyInput)));
    }

    #[test]
    fn log_map_cases() {
        let t = log_map(&e(3, 0), &e(3, 0)).unwrap();
        assert!(t.coords().iter().all(|&x| x == 0.0));

        let t = log_map(&e(2, 0), &e(2, 1)).unwrap();
        assert!(t.coords()[0].abs() < 1e-15);
        assert!((t.coords()[1] - FRAC_PI_2).abs() < 1e-15);

        // theta = 0.3: tangent norm equals the geodesic distance acos(x . mu)
        let x = UnitVector::new(vec![0.3f64.cos(), 0.3f64.sin()]).unwrap();
        let t = log_map(&e(2, 0), &x).unwrap();
        assert!(t.coords()[0].abs() < 1e-15);
        assert!((t.coords()[1] - 0.3).abs() < 1e-12);
        assert!((t.norm() - x.dot(&e(2, 0)).acos()).abs() < 1e-12);
    }

    #[test]
    fn log_map_rejects_antipode() {
        let mu = e(4, 2);
        assert!(matches!(
            log_map(&mu, &mu.negated()),
            Err(Error::AntipodalPoint { .. })
        ));
        // just inside the tolerance band is still rejected
        let near = UnitVector::new(vec![-(1.0 - 5e-8), (1.0 - (1.0 - 5e-8f64).powi(2)).sqrt()]).unwrap();
        assert!(log_map(&e(2, 0), &near).is_err());
    }

    #[test]
    fn log_map_series_region_is_continuous() {
        let mu = e(2, 0);
        for theta in [5e-9, 1e-7, 5e-5, 9.9e-5, 1.01e-4, 1e-3] {
            let x = UnitVector::new(vec![f64::cos(theta), f64::sin(theta)]).unwrap();
            let t = log_map(&mu, &x).unwrap();
            let expected = if theta < LOG_ZERO_ANGLE { 0.0 } else { theta };
            assert!((t.coords()[1] - expected).abs() < 1e-15 + 1e-12 * theta, "theta {theta}");
        }
    }

    #[test]
    fn exp_map_cases() {
        let mu = e(2, 0);
        let p = exp_map(&mu, &TangentVector::zero(mu.clone())).unwrap();
        assert_eq!(p, mu);
        let t = TangentVector::new(mu.clone(), vec![0.0, FRAC_PI_2]).unwrap();
        let p = exp_map(&mu, &t).unwrap();
        assert!(p.max_abs_diff(&e(2, 1)) < 1e-15);
    }

    #[test]
    fn tangent_vector_validation() {
        assert!(matches!(
            TangentVector::new(e(3, 0), vec![0.1, 0.0, 0.0]),
            Err(Error::NotTangent { .. })
        ));
        assert!(TangentVector::new(e(3, 0), vec![0.0, 4.0, 0.0]).is_err());
        let t = TangentVector::project_onto(e(3, 0), vec![5.0, 1.0, 0.0]).unwrap();
        assert_eq!(t.coords(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn householder_cases() {
        let r = householder_align(&e(2, 0), &e(2, 1)).unwrap();
        let out = r.apply(e(2, 0).coords()).unwrap();
        assert!(out[0].abs() < 1e-15 && (out[1] - 1.0).abs() < 1e-15);

        let x = normalize(&[0.3, -0.1, 0.9]).unwrap();
        let r = householder_align(&x, &x).unwrap();
        assert!(r.is_identity());
        let v = [0.5, 2.0, -1.0];
        assert_eq!(r.apply(&v).unwrap(), v.to_vec());

        assert!(matches!(
            householder_align(&x, &x.negated()),
            Err(Error::AntipodalMeans)
        ));
    }

    #[test]
    fn householder_preserves_inner_product_against_dense_matrix() {
        // dense 2x2 oracle: H = H2 H1 with Hi = I - 2 ui ui^T
        let r = householder_align(&e(2, 0), &e(2, 1)).unwrap();
        let dense = |u: &[f64]| [[1.0 - 2.0 * u[0] * u[0], -2.0 * u[0] * u[1]], [-2.0 * u[1] * u[0], 1.0 - 2.0 * u[1] * u[1]]];
        let h1 = dense(r.first_normal().unwrap());
        let h2 = dense(r.second_normal().unwrap());
        let mul = |m: [[f64; 2]; 2], v: [f64; 2]| [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]];
        let (x, y) = ([0.6, 0.8], [0.8, 0.6]);
        let (hx, hy) = (mul(h2, mul(h1, x)), mul(h2, mul(h1, y)));
        let before = x[0] * y[0] + x[1] * y[1];
        let after_dense = hx[0] * hy[0] + hx[1] * hy[1];
        let rx = r.apply(&x).unwrap();
        let ry = r.apply(&y).unwrap();
        assert!((before - 0.96).abs() < 1e-15);
        assert!((after_dense - 0.96).abs() < 1e-6);
        assert!((dot(&rx, &ry) - 0.96).abs() < 1e-6);
        assert!((rx[0] - hx[0]).abs() < 1e-15 && (rx[1] - hx[1]).abs() < 1e-15);
    }

    #[test]
    fn apply_rotation_checks_dimension() {
        let r = Rotation::identity(3);
        assert!(matches!(
            apply_rotation(&r, &[1.0, 2.0]),
            Err(Error::DimensionMismatch { expected: 3, actual: 2 })
        ));
    }

    fn unit(dim: usize) -> impl Strategy<Value = UnitVector> {
        prop::collection::vec(-1.0f64..1.0, dim)
            .prop_filter_map("zero", |v| normalize(&v).ok())
    }

    proptest! {
        #[test]
        fn log_exp_round_trip((mu, x) in (2usize..24).prop_flat_map(|d| (unit(d), unit(d)))) {
            prop_assume!(mu.dot(&x) > -0.99);
            let t = log_map(&mu, &x).unwrap();
            prop_assert!(dot(t.coords(), mu.coords()).abs() <= 1e-12);
            prop_assert!((t.norm() - mu.dot(&x).clamp(-1.0, 1.0).acos()).abs() <= 1e-6);
            let back = exp_map(&mu, &t).unwrap();
            prop_assert!(back.max_abs_diff(&x) <= 1e-6);
        }

        #[test]
        fn rotation_is_isometric_and_aligns(
            (a, b, x, y) in (2usize..24).prop_flat_map(|d| (unit(d), unit(d), unit(d), unit(d)))
        ) {
            prop_assume!(a.dot(&b) > -0.999);
            let r = householder_align(&a, &b).unwrap();
            let ra = r.apply(a.coords()).unwrap();
            prop_assert!(ra.iter().zip(b.coords()).all(|(p, q)| (p - q).abs() <= 1e-6));
            let rx = r.apply(x.coords()).unwrap();
            let ry = r.apply(y.coords()).unwrap();
            prop_assert!((dot(&rx, &ry) - x.dot(&y)).abs() <= 1e-6);
            prop_assert!((norm(&rx) - 1.0).abs() <= 1e-6);
        }
    }
}
