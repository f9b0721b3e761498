//! Small dense linear-algebra helpers shared by the geometric modules.

use nalgebra::{DMatrix, DVector};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Orthonormal basis (as matrix columns) of the span of `vectors`.
///
/// Modified Gram–Schmidt with pivoting on the largest remaining residual; a
/// residual below `tol` times the largest input norm terminates the sweep.
pub fn orthonormal_span(vectors: &[Vector], dim: usize, tol: f64) -> Matrix {
    let scale = vectors.iter().map(|v| v.norm()).fold(0.0_f64, f64::max);
    if scale == 0.0 {
        return Matrix::zeros(dim, 0);
    }
    let mut residuals: Vec<Vector> = vectors.to_vec();
    let mut basis: Vec<Vector> = Vec::new();
    while basis.len() < dim {
        let (best, norm) = residuals
            .iter()
            .enumerate()
            .map(|(k, r)| (k, r.norm()))
            .fold((usize::MAX, 0.0), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
        if best == usize::MAX || norm <= tol * scale {
            break;
        }
        let q = &residuals[best] / norm;
        for r in residuals.iter_mut() {
            let c = q.dot(r);
            r.axpy(-c, &q, 1.0);
        }
        basis.push(q);
    }
    if basis.is_empty() {
        Matrix::zeros(dim, 0)
    } else {
        Matrix::from_columns(&basis)
    }
}

/// Vector orthogonal to the `n-1` rows of `diffs` in R^n (generalized cross
/// product via signed cofactors). For `n == 1` this is `[1]`.
pub fn cofactor_normal(diffs: &[Vector], n: usize) -> Vector {
    debug_assert_eq!(diffs.len() + 1, n);
    if n == 1 {
        return Vector::from_element(1, 1.0);
    }
    let m = Matrix::from_fn(n - 1, n, |r, c| diffs[r][c]);
    Vector::from_fn(n, |i, _| {
        let minor = m.clone().remove_column(i);
        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        sign * minor.determinant()
    })
}

/// Numerical rank with an absolute singular-value cutoff.
pub fn rank(m: &Matrix, tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .filter(|s| **s > tol)
        .count()
}

/// Distance from `v` to the column span of `basis` (orthonormal columns).
pub fn residual_to_span(basis: &Matrix, v: &Vector) -> f64 {
    if basis.ncols() == 0 {
        return v.norm();
    }
    let proj = basis * (basis.transpose() * v);
    (v - proj).norm()
}

/// All `k`-element subsets of `0..n`, in lexicographic order.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if idx[i] != i + n - k {
                break;
            }
            if i == 0 {
                return out;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

pub fn to_vec(v: &Vector) -> Vec<f64> {
    v.iter().copied().collect()
}

/// Row-major nested lists.
pub fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub(crate) fn serialize_vector<S: serde::Serializer>(v: &Vector, s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(v.iter())
}

pub(crate) fn serialize_matrix<S: serde::Serializer>(m: &Matrix, s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(to_rows(m))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn combinations_count_matches_binomial() {
        assert_eq!(combinations(5, 2).len(), 10);
        assert_eq!(combinations(4, 4), vec![vec![0, 1, 2, 3]]);
        assert_eq!(combinations(3, 0), vec![Vec::<usize>::new()]);
        assert!(combinations(2, 3).is_empty());
        assert_eq!(combinations(20, 3).len(), 1140);
    }

    #[test]
    fn cofactor_normal_is_orthogonal() {
        let d = vec![Vector::from_vec(vec![1.0, 2.0, 0.5]), Vector::from_vec(vec![-0.3, 1.0, 4.0])];
        let nrm = cofactor_normal(&d, 3);
        assert!(nrm.dot(&d[0]).abs() < 1e-12);
        assert!(nrm.dot(&d[1]).abs() < 1e-12);
        assert!(nrm.norm() > 1.0);
    }

    #[test]
    fn span_of_dependent_vectors() {
        let v = vec![
            Vector::from_vec(vec![1.0, 1.0, 0.0]),
            Vector::from_vec(vec![2.0, 2.0, 0.0]),
            Vector::from_vec(vec![0.0, 1.0, 0.0]),
        ];
        let b = orthonormal_span(&v, 3, 1e-10);
        assert_eq!(b.ncols(), 2);
        assert!(residual_to_span(&b, &Vector::from_vec(vec![3.0, -1.0, 0.0])) < 1e-12);
        assert!((residual_to_span(&b, &Vector::from_vec(vec![0.0, 0.0, 2.0])) - 2.0).abs() < 1e-12);
    }
}
