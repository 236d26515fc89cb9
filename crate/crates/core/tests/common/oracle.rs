//! Dense reference pipeline: every operator is materialized as a matrix and
//! the subspace comes from an eigendecomposition of `T^T T` rather than an
//! SVD of `T`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

pub fn unit(v: &[f64]) -> DVector<f64> {
    let v = DVector::from_column_slice(v);
    let n = v.norm();
    v / n
}

pub fn mean_direction<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> DVector<f64> {
    let mut sum: Option<DVector<f64>> = None;
    for r in rows {
        let r = unit(r);
        sum = Some(match sum {
            Some(s) => s + r,
            None => r,
        });
    }
    let s = sum.expect("at least one row");
    let n = s.norm();
    s / n
}

/// `theta / sin(theta) * (x - cos(theta) mu)` with `theta = acos(mu . x)`.
pub fn log_map(mu: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
    let c = mu.dot(x).clamp(-1.0, 1.0);
    let theta = c.acos();
    if theta < 1e-12 {
        return DVector::zeros(mu.len());
    }
    (x - mu * c) * (theta / theta.sin())
}

pub fn exp_map(mu: &DVector<f64>, t: &DVector<f64>) -> DVector<f64> {
    let n = t.norm();
    if n == 0.0 {
        return mu.clone();
    }
    mu * n.cos() + t * (n.sin() / n)
}

/// `I - 2 u u^T / (u^T u)`.
pub fn reflection(u: &DVector<f64>) -> DMatrix<f64> {
    let d = u.len();
    DMatrix::identity(d, d) - (u * u.transpose()) * (2.0 / u.norm_squared())
}

/// Two reflections through the normalized midpoint, as one dense matrix.
pub fn alignment_matrix(from: &DVector<f64>, to: &DVector<f64>) -> DMatrix<f64> {
    let mid = {
        let s = from + to;
        let n = s.norm();
        s / n
    };
    let d = from.len();
    let reflect = |u: DVector<f64>| {
        if u.norm() <= 1e-9 {
            DMatrix::identity(d, d)
        } else {
            reflection(&u)
        }
    };
    let h1 = reflect(from - &mid);
    let h2 = reflect(&mid - to);
    h2 * h1
}

pub struct DenseSubspace {
    pub mu: DVector<f64>,
    pub projector: DMatrix<f64>,
    /// Eigenvalues of `T^T T`, descending.
    pub eigenvalues: Vec<f64>,
}

/// Projector onto the top-`k` eigenvectors of `T^T T`, where the rows of `T`
/// are the prompts log-mapped at their spherical mean.
pub fn tangent_subspace(prompts: &[Vec<f64>], k: usize) -> DenseSubspace {
    let mu = mean_direction(prompts.iter().map(Vec::as_slice));
    let d = mu.len();
    let mut gram = DMatrix::<f64>::zeros(d, d);
    for p in prompts {
        let t = log_map(&mu, &unit(p));
        gram += &t * t.transpose();
    }
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut projector = DMatrix::<f64>::zeros(d, d);
    for &j in order.iter().take(k) {
        let v = eig.eigenvectors.column(j);
        projector += v * v.transpose();
    }
    DenseSubspace {
        mu,
        projector,
        eigenvalues: order.iter().map(|&j| eig.eigenvalues[j]).collect(),
    }
}

/// `P log_mu(H v)`.
pub fn modulate(s: &DenseSubspace, h: &DMatrix<f64>, v: &DVector<f64>) -> DVector<f64> {
    &s.projector * log_map(&s.mu, &(h * v))
}

pub fn cosine(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let (na, nb) = (a.norm(), b.norm());
    if na <= 1e-10 || nb <= 1e-10 {
        0.0
    } else {
        (a.dot(b) / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// Row indices sorted by descending score, ties by ascending id.
pub fn ranking(scores: &[f64], ids: &[String]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then_with(|| ids[a].cmp(&ids[b])));
    order
}
