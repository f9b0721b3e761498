//! Simplicity of polytopes and affine standard charts onto
//! `[0,1)^i × (-1,1)^(n-i)`.

use std::collections::BTreeMap;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::polytope::{FaceId, Polytope, MEMBERSHIP_TOL};

/// Where and how a polytope fails to be simple.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct SimplicityWitness {
    /// Vertex id (for the vertex criteria) or face id (face criterion).
    pub face: FaceId,
    pub vertex: Option<usize>,
    pub edge_count: usize,
    pub facet_count: usize,
    pub expected: usize,
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct SimplicityReport {
    pub dim: usize,
    pub is_simple: bool,
    /// Every vertex lies on exactly `n` edges.
    pub edges_criterion: bool,
    /// Every vertex lies on exactly `n` facets.
    pub facets_criterion: bool,
    /// Every `k`-face lies on exactly `n - k` facets.
    pub faces_criterion: bool,
    pub per_vertex_edge_counts: BTreeMap<usize, usize>,
    pub per_vertex_facet_counts: BTreeMap<usize, usize>,
    pub per_face_facet_counts: BTreeMap<FaceId, usize>,
    pub witness: Option<SimplicityWitness>,
}

/// Evaluate the three equivalent simplicity criteria independently.
///
/// # Panics
///
/// If the criteria disagree, which can only mean an inconsistent face lattice.
pub fn is_simple(p: &Polytope) -> SimplicityReport {
    let n = p.dim();
    let lat = p.lattice();
    let mut per_vertex_edge_counts = BTreeMap::new();
    let mut per_vertex_facet_counts = BTreeMap::new();
    let mut per_face_facet_counts = BTreeMap::new();
    let mut witness = None;

    for vf in lat.faces_of_dim(0) {
        let v = vf.vertex_ids[0];
        let edges = lat
            .faces_of_dim(1)
            .filter(|e| e.vertex_ids.binary_search(&v).is_ok())
            .count();
        let facets = vf.containing_facets.len();
        per_vertex_edge_counts.insert(v, edges);
        per_vertex_facet_counts.insert(v, facets);
        if (edges != n || facets != n) && witness.is_none() {
            witness = Some(SimplicityWitness {
                face: vf.id,
                vertex: Some(v),
                edge_count: edges,
                facet_count: facets,
                expected: n,
            });
        }
    }
    for f in lat.faces().iter().filter(|f| f.dim < n) {
        per_face_facet_counts.insert(f.id, f.containing_facets.len());
    }

    // For n <= 1 every vertex is its own facet (or there are none), and the
    // segment is its own single edge.
    let edges_criterion = per_vertex_edge_counts.values().all(|&c| c == n);
    let facets_criterion = per_vertex_facet_counts.values().all(|&c| c == n);
    let faces_criterion = lat
        .faces()
        .iter()
        .filter(|f| f.dim < n)
        .all(|f| f.containing_facets.len() == n - f.dim);
    if witness.is_none() && !faces_criterion {
        if let Some(f) = lat
            .faces()
            .iter()
            .find(|f| f.dim < n && f.containing_facets.len() != n - f.dim)
        {
            witness = Some(SimplicityWitness {
                face: f.id,
                vertex: None,
                edge_count: 0,
                facet_count: f.containing_facets.len(),
                expected: n - f.dim,
            });
        }
    }
    assert!(
        edges_criterion == facets_criterion && facets_criterion == faces_criterion,
        "simplicity criteria disagree: edges {edges_criterion}, facets {facets_criterion}, faces {faces_criterion}"
    );
    SimplicityReport {
        dim: n,
        is_simple: edges_criterion,
        edges_criterion,
        facets_criterion,
        faces_criterion,
        per_vertex_edge_counts,
        per_vertex_facet_counts,
        per_face_facet_counts,
        witness,
    }
}

/// Affine chart `κ(z) = A (z - x) / ε` with `κ(x) = 0`, whose first `i`
/// coordinates are the (rescaled) slacks of the facets through `x`.
#[derive(Clone, Debug, Serialize)]
pub struct StandardChart {
    #[serde(serialize_with = "crate::linalg::serialize_vector")]
    pub base_point: Vector,
    pub index: usize,
    /// Linear part of `κ` (already divided by `ε`).
    #[serde(serialize_with = "crate::linalg::serialize_matrix")]
    pub linear_part: Matrix,
    /// Translation of `κ`: `κ(z) = linear_part · z + translation`.
    #[serde(serialize_with = "crate::linalg::serialize_vector")]
    pub translation: Vector,
    pub epsilon: f64,
    /// `facet_map[k]` is the halfspace index of the facet mapped onto the wall `{w_k = 0}`.
    pub facet_map: Vec<usize>,
    #[serde(skip)]
    inverse_linear: Matrix,
}

impl StandardChart {
    pub fn dim(&self) -> usize {
        self.base_point.len()
    }

    pub fn apply(&self, z: &Vector) -> Vector {
        &self.linear_part * z + &self.translation
    }

    pub fn apply_inverse(&self, w: &Vector) -> Vector {
        &self.inverse_linear * (w - &self.translation)
    }

    /// Linear part of `κ⁻¹`.
    pub fn inverse_linear(&self) -> &Matrix {
        &self.inverse_linear
    }

    /// Whether `w` lies in `[0,1)^i × (-1,1)^(n-i)`.
    pub fn in_cube(&self, w: &Vector) -> bool {
        w.iter().enumerate().all(|(k, &c)| {
            if k < self.index {
                (0.0..1.0).contains(&c)
            } else {
                c > -1.0 && c < 1.0
            }
        })
    }

    /// Swap two wall assignments (negative controls in tests).
    pub fn with_facet_map(mut self, facet_map: Vec<usize>) -> Self {
        self.facet_map = facet_map;
        self
    }
}

/// Safety factor applied to the distance to inactive facets.
const EPSILON_SAFETY: f64 = 0.9;

/// Build a standard chart around `x` following the constructive proof:
/// facet functionals active at `x` become the first coordinates, the rest
/// of the basis is completed by Gram–Schmidt against coordinate functionals,
/// and the radius keeps the chart domain clear of every inactive facet.
pub fn standard_chart(p: &Polytope, x: &Vector) -> Result<StandardChart> {
    let n = p.dim();
    let face = p.generating_face(x)?;
    let index = n - p.lattice().face(face).dim;
    let active: Vec<usize> = p
        .halfspaces()
        .iter()
        .enumerate()
        .filter(|(_, h)| h.slack(x) <= MEMBERSHIP_TOL)
        .map(|(j, _)| j)
        .collect();
    if active.len() != index {
        return Err(Error::NotSimple(format!(
            "{} facets meet at a point of index {index}",
            active.len()
        )));
    }

    let mut rows: Vec<Vector> = active.iter().map(|&j| p.halfspaces()[j].normal.clone()).collect();
    // Orthonormal copy of the active functionals, for completion and the rank check.
    let mut ortho: Vec<Vector> = Vec::new();
    for r in &rows {
        let mut q = r.clone();
        for b in &ortho {
            let c = b.dot(&q);
            q.axpy(-c, b, 1.0);
        }
        let norm = q.norm();
        if norm < 1e-9 {
            return Err(Error::NotSimple("active facet functionals are linearly dependent".into()));
        }
        ortho.push(q / norm);
    }
    while rows.len() < n {
        let mut best: Option<Vector> = None;
        let mut best_norm = 0.0;
        for k in 0..n {
            let mut q = Vector::zeros(n);
            q[k] = 1.0;
            for b in &ortho {
                let c = b.dot(&q);
                q.axpy(-c, b, 1.0);
            }
            let norm = q.norm();
            if norm > best_norm + 1e-12 {
                best_norm = norm;
                best = Some(q / norm);
            }
        }
        let q = best.expect("coordinate functionals span the dual space");
        ortho.push(q.clone());
        rows.push(q);
    }
    let a = if n == 0 {
        Matrix::zeros(0, 0)
    } else {
        Matrix::from_rows(&rows.iter().map(|r| r.transpose()).collect::<Vec<_>>())
    };
    let a_inv = a
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::NotSimple("chart matrix is singular".into()))?;

    // Largest decrease of λ_j(A⁻¹ w) over the closed image cube
    // [0,1]^i × [-1,1]^(n-i).
    let mut epsilon = f64::INFINITY;
    for (j, h) in p.halfspaces().iter().enumerate() {
        if active.contains(&j) {
            continue;
        }
        let slack = h.slack(x);
        let reach: f64 = (h.normal.transpose() * &a_inv)
            .iter()
            .enumerate()
            .map(|(k, c)| if k < index { (-c).max(0.0) } else { c.abs() })
            .sum();
        if reach > 0.0 {
            epsilon = epsilon.min(slack / reach);
        }
    }
    if !epsilon.is_finite() {
        epsilon = 1.0;
    }
    epsilon *= EPSILON_SAFETY;

    let linear_part = &a / epsilon;
    let translation = -(&linear_part * x);
    Ok(StandardChart {
        base_point: x.clone(),
        index,
        linear_part,
        translation,
        epsilon,
        facet_map: active,
        inverse_linear: a_inv * epsilon,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ChartReport {
    pub samples: usize,
    pub max_membership_violation: f64,
    pub max_wall_residual: f64,
    pub passed: bool,
}

/// Sampling audit of the chart invariants: pulled-back cube points lie in the
/// polytope, a point lies on wall `k` exactly when it lies on facet
/// `facet_map[k]`, inactive facets stay clear, and facet points near the base
/// point push forward onto their wall.
pub fn verify_chart<R: Rng + ?Sized>(
    p: &Polytope,
    chart: &StandardChart,
    samples: usize,
    rng: &mut R,
) -> Result<ChartReport> {
    let n = p.dim();
    let i = chart.index;
    let tol = 1e-9;
    let mut max_violation: f64 = 0.0;
    let mut max_wall: f64 = 0.0;
    let fail = |w: &Vector, reason: String| Error::ChartViolation {
        point: w.iter().copied().collect(),
        reason,
    };

    let claimed_facets = &chart.facet_map;
    for s in 0..samples {
        let mut w = Vector::from_fn(n, |k, _| {
            if k < i {
                rng.random_range(0.0..1.0)
            } else {
                rng.random_range(-1.0..1.0)
            }
        });
        // Put about half of the samples on one or more walls.
        if i > 0 && s % 2 == 0 {
            for k in 0..i {
                if rng.random_bool(0.5) {
                    w[k] = 0.0;
                }
            }
        }
        let z = chart.apply_inverse(&w);
        let violation = p.violation(&z);
        max_violation = max_violation.max(violation);
        if violation > tol {
            return Err(fail(&z, format!("pull-back leaves the polytope by {violation:e}")));
        }
        for k in 0..i {
            let on_wall = w[k] == 0.0;
            let slack = p.halfspaces()[claimed_facets[k]].slack(&z);
            if on_wall {
                max_wall = max_wall.max(slack.abs());
            }
            if on_wall != (slack.abs() <= tol) {
                return Err(fail(
                    &z,
                    format!("wall {k} and facet {} disagree (slack {slack:e})", claimed_facets[k]),
                ));
            }
        }
        for (j, h) in p.halfspaces().iter().enumerate() {
            if !claimed_facets.contains(&j) && h.slack(&z) <= tol {
                return Err(fail(&z, format!("chart domain meets inactive facet {j}")));
            }
        }
    }

    // Push forward facet points near the base point.
    let lat = p.lattice();
    for (k, &j) in claimed_facets.iter().enumerate() {
        let facet = lat.facet_face(j);
        for _ in 0..samples.div_ceil(4).max(1) {
            let y = p.sample_face(facet, rng);
            let t: f64 = rng.random_range(0.0..1.0);
            let z = &chart.base_point + (y - &chart.base_point) * (t * chart.epsilon / p.diameter().max(1e-300));
            let w = chart.apply(&z);
            if !chart.in_cube(&w.map(|c| if c.abs() < tol { 0.0 } else { c })) {
                continue;
            }
            max_wall = max_wall.max(w[k].abs());
            if w[k].abs() > 1e-8 {
                return Err(fail(&z, format!("facet {j} point maps off wall {k} (w_k = {:e})", w[k])));
            }
        }
    }

    Ok(ChartReport {
        samples,
        max_membership_violation: max_violation,
        max_wall_residual: max_wall,
        passed: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use rand::SeedableRng;
    use rand_pcg::Pcg64;

    fn v(c: &[f64]) -> Vector {
        Vector::from_column_slice(c)
    }

    #[test]
    fn catalog_classification() {
        for name in catalog::SIMPLE {
            let r = is_simple(&catalog::polytope(name).unwrap());
            assert!(r.is_simple, "{name}");
            assert!(r.witness.is_none());
        }
        let pyr = is_simple(&catalog::polytope("square_pyramid").unwrap());
        assert!(!pyr.is_simple);
        let w = pyr.witness.unwrap();
        assert_eq!((w.edge_count, w.expected), (4, 3));
        let ico = is_simple(&catalog::polytope("icosahedron").unwrap());
        assert!(!ico.is_simple);
        assert_eq!(ico.witness.unwrap().edge_count, 5);
    }

    #[test]
    fn faces_of_simple_polytopes_are_simple() {
        for name in ["cube3", "dodecahedron", "simplex4"] {
            let p = catalog::polytope(name).unwrap();
            for f in p.lattice().faces() {
                let sub = p.face_polytope(f.id).unwrap();
                assert!(is_simple(&sub).is_simple, "{name} face {}", f.id);
            }
        }
    }

    #[test]
    fn square_corner_chart() {
        let sq = catalog::polytope("square").unwrap();
        let c = standard_chart(&sq, &v(&[0.0, 0.0])).unwrap();
        assert_eq!(c.index, 2);
        assert!(c.apply(&v(&[0.0, 0.0])).norm() < 1e-15);
        // Linear part is a permutation of the identity scaled by 1/ε.
        let scaled = &c.linear_part * c.epsilon;
        let mut sorted: Vec<f64> = scaled.iter().map(|x| x.abs()).collect();
        sorted.sort_by(f64::total_cmp);
        assert_eq!(sorted, vec![0.0, 0.0, 1.0, 1.0]);
        let mut rng = Pcg64::seed_from_u64(1);
        assert!(verify_chart(&sq, &c, 1000, &mut rng).unwrap().passed);
    }

    #[test]
    fn square_edge_chart_maps_onto_half_open_strip() {
        let sq = catalog::polytope("square").unwrap();
        let c = standard_chart(&sq, &v(&[0.5, 0.0])).unwrap();
        assert_eq!(c.index, 1);
        let mut rng = Pcg64::seed_from_u64(2);
        for _ in 0..100 {
            let w = v(&[rng.random_range(0.0..1.0), rng.random_range(-1.0..1.0)]);
            let z = c.apply_inverse(&w);
            assert!(sq.contains(&z, 1e-12));
            assert!((c.apply(&z) - &w).norm() < 1e-12);
            assert!(z[0] > 0.0 && z[0] < 1.0 && z[1] < 1.0);
        }
        assert!(verify_chart(&sq, &c, 100, &mut rng).unwrap().passed);
    }

    #[test]
    fn dodecahedron_vertex_chart() {
        let d = catalog::polytope("dodecahedron").unwrap();
        let mut rng = Pcg64::seed_from_u64(3);
        for vtx in d.vertices().to_vec() {
            let c = standard_chart(&d, &vtx).unwrap();
            assert_eq!(c.index, 3);
            // α*(λ_j) = e_j*: λ_j ∘ κ⁻¹ restricted to directions is ε e_j.
            for (k, &j) in c.facet_map.iter().enumerate() {
                let row = d.halfspaces()[j].normal.transpose() * c.inverse_linear() / c.epsilon;
                for m in 0..3 {
                    let expect = if m == k { 1.0 } else { 0.0 };
                    assert!((row[m] - expect).abs() < 1e-10);
                }
            }
            assert!(verify_chart(&d, &c, 1000, &mut rng).unwrap().passed);
        }
    }

    #[test]
    fn corrupted_facet_map_is_caught() {
        let sq = catalog::polytope("square").unwrap();
        let c = standard_chart(&sq, &v(&[0.0, 0.0])).unwrap();
        let swapped = vec![c.facet_map[1], c.facet_map[0]];
        let bad = c.with_facet_map(swapped);
        let mut rng = Pcg64::seed_from_u64(4);
        assert!(matches!(
            verify_chart(&sq, &bad, 200, &mut rng),
            Err(Error::ChartViolation { .. })
        ));
    }

    #[test]
    fn non_simple_vertex_has_no_chart() {
        let pyr = catalog::polytope("square_pyramid").unwrap();
        let apex = v(&[0.5, 0.5, 1.0]);
        assert!(matches!(standard_chart(&pyr, &apex), Err(Error::NotSimple(_))));
        // Points away from the apex still get charts.
        assert!(standard_chart(&pyr, &v(&[0.5, 0.5, 0.2])).is_ok());
    }

    #[test]
    fn index_equals_facet_count_on_simple_polytopes() {
        let mut rng = Pcg64::seed_from_u64(5);
        for name in catalog::SIMPLE {
            let p = catalog::polytope(name).unwrap();
            for i in 0..=p.dim() {
                for x in p.boundary_stratum_samples(i, 10, &mut rng).unwrap() {
                    let active = p.halfspaces().iter().filter(|h| h.slack(&x) <= MEMBERSHIP_TOL).count();
                    assert_eq!(active, i, "{name}");
                }
            }
        }
    }
}
