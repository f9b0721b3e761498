//! Polytopes given by vertices, their irredundant halfspace description and
//! the full face lattice.
//!
//! A polytope living in `R^N` with affine hull of dimension `n < N` is carried
//! in a fixed `n`-dimensional affine chart chosen at construction. All
//! geometric queries (halfspaces, faces, generating faces, sampling) work in
//! chart coordinates; [`Polytope::to_chart`] and [`Polytope::from_chart`]
//! translate to and from the ambient space. When `n == N` the chart is the
//! identity.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{cofactor_normal, combinations, orthonormal_span, Matrix, Vector};

/// Membership and facet-activity tolerance (unit-normalized functionals).
pub const MEMBERSHIP_TOL: f64 = 1e-9;
/// Tolerance used to merge coplanar vertex subsets into one facet.
pub const MERGE_TOL: f64 = 1e-8;
/// Facet residual beyond which the hull is declared inconsistent.
const CONSISTENCY_TOL: f64 = 1e-6;

pub type FaceId = usize;

/// `{ z : normal · z >= offset }` with a unit-length normal.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Halfspace {
    #[serde(serialize_with = "crate::linalg::serialize_vector")]
    pub normal: Vector,
    pub offset: f64,
}

impl Halfspace {
    /// Signed slack `normal · x - offset`; non-negative inside.
    pub fn slack(&self, x: &Vector) -> f64 {
        self.normal.dot(x) - self.offset
    }
}

#[derive(Clone, Debug)]
pub struct Face {
    pub id: FaceId,
    pub dim: usize,
    /// Sorted indices into [`Polytope::vertices`].
    pub vertex_ids: Vec<usize>,
    /// Sorted indices into [`Polytope::halfspaces`] of the facets containing this face.
    pub containing_facets: Vec<usize>,
    /// A point of the face's affine hull (its first vertex).
    pub origin: Vector,
    /// Orthonormal columns spanning the direction space `E_F`.
    pub affine_basis: Matrix,
    /// Vertex barycenter; lies in the algebraic interior.
    pub relative_interior_point: Vector,
}

impl Face {
    /// Norm of the component of `v` orthogonal to `E_F`.
    pub fn normal_component(&self, v: &Vector) -> f64 {
        crate::linalg::residual_to_span(&self.affine_basis, v)
    }

    /// Distance from `x` to the affine hull of the face.
    pub fn distance_to_affine_hull(&self, x: &Vector) -> f64 {
        self.normal_component(&(x - &self.origin))
    }
}

/// All non-empty faces, sorted by dimension then by vertex set.
#[derive(Clone, Debug)]
pub struct FaceLattice {
    faces: Vec<Face>,
    by_vertices: BTreeMap<Vec<usize>, FaceId>,
    /// `covers[f]` = faces of dimension `dim(f) + 1` containing `f`.
    covers: Vec<Vec<FaceId>>,
    /// Face id of the facet cut out by each halfspace.
    facet_faces: Vec<FaceId>,
}

impl FaceLattice {
    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    pub fn face(&self, id: FaceId) -> &Face {
        &self.faces[id]
    }

    pub fn len(&self) -> usize {
        self.faces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn faces_of_dim(&self, dim: usize) -> impl Iterator<Item = &Face> + '_ {
        self.faces.iter().filter(move |f| f.dim == dim)
    }

    pub fn count_of_dim(&self, dim: usize) -> usize {
        self.faces_of_dim(dim).count()
    }

    /// The top face (the polytope itself).
    pub fn top(&self) -> &Face {
        self.faces.last().expect("lattice always contains the polytope")
    }

    pub fn by_vertex_set(&self, vertex_ids: &[usize]) -> Option<FaceId> {
        self.by_vertices.get(vertex_ids).copied()
    }

    /// Faces of dimension `d + 1` containing the given `d`-face.
    pub fn covers(&self, id: FaceId) -> &[FaceId] {
        &self.covers[id]
    }

    pub fn facet_face(&self, halfspace: usize) -> FaceId {
        self.facet_faces[halfspace]
    }

    /// Whether face `small` is contained in face `big`.
    pub fn contains(&self, big: FaceId, small: FaceId) -> bool {
        let b = &self.faces[big].vertex_ids;
        self.faces[small]
            .vertex_ids
            .iter()
            .all(|v| b.binary_search(v).is_ok())
    }

    /// Intersection of two faces, `None` when empty.
    pub fn intersection(&self, a: FaceId, b: FaceId) -> Option<FaceId> {
        let vb = &self.faces[b].vertex_ids;
        let common: Vec<usize> = self.faces[a]
            .vertex_ids
            .iter()
            .copied()
            .filter(|v| vb.binary_search(v).is_ok())
            .collect();
        if common.is_empty() {
            None
        } else {
            self.by_vertex_set(&common)
        }
    }

    /// Faces of dimension `dim` contained in face `id`.
    pub fn subfaces_of_dim(&self, id: FaceId, dim: usize) -> Vec<FaceId> {
        self.faces_of_dim(dim)
            .filter(|f| self.contains(id, f.id))
            .map(|f| f.id)
            .collect()
    }
}

/// Serializable view of a face for lattice dumps.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct FaceRecord {
    pub id: FaceId,
    pub dim: usize,
    pub vertex_ids: Vec<usize>,
    pub containing_facets: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Polytope {
    dim: usize,
    ambient_dim: usize,
    ambient_vertices: Vec<Vector>,
    vertices: Vec<Vector>,
    halfspaces: Vec<Halfspace>,
    chart_origin: Vector,
    chart_basis: Matrix,
    lattice: FaceLattice,
}

/// Build the polytope `conv(points)`.
///
/// Duplicates and non-extreme points are discarded; the remaining extreme
/// points keep their input order.
pub fn build_polytope(points: &[Vec<f64>]) -> Result<Polytope> {
    let first = points
        .first()
        .ok_or_else(|| Error::EmptyInput("vertex list is empty".into()))?;
    let ambient_dim = first.len();
    if points.iter().any(|p| p.len() != ambient_dim) {
        return Err(Error::InvalidArgument(
            "vertices have inconsistent coordinate counts".into(),
        ));
    }
    if points.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::InvalidArgument("non-finite vertex coordinate".into()));
    }

    let mut ambient: Vec<Vector> = Vec::new();
    for p in points {
        let v = Vector::from_column_slice(p);
        if !ambient.iter().any(|w| (w - &v).norm() <= MERGE_TOL) {
            ambient.push(v);
        }
    }

    let origin0 = ambient[0].clone();
    let diffs: Vec<Vector> = ambient.iter().map(|v| v - &origin0).collect();
    let span = orthonormal_span(&diffs, ambient_dim, 1e-9);
    let dim = span.ncols();
    let (chart_origin, chart_basis) = if dim == ambient_dim {
        (Vector::zeros(ambient_dim), Matrix::identity(ambient_dim, ambient_dim))
    } else {
        (origin0, span)
    };
    let chart: Vec<Vector> = ambient
        .iter()
        .map(|v| chart_basis.transpose() * (v - &chart_origin))
        .collect();

    let halfspaces = hull_halfspaces(&chart, dim)?;

    // Keep only extreme points: active normals must span R^n.
    let mut keep = Vec::new();
    for (k, v) in chart.iter().enumerate() {
        let active: Vec<Vector> = halfspaces
            .iter()
            .filter(|h| h.slack(v).abs() <= MERGE_TOL)
            .map(|h| h.normal.clone())
            .collect();
        if orthonormal_span(&active, dim, 1e-9).ncols() == dim {
            keep.push(k);
        }
    }
    let vertices: Vec<Vector> = keep.iter().map(|&k| chart[k].clone()).collect();
    let ambient_vertices: Vec<Vector> = keep.iter().map(|&k| ambient[k].clone()).collect();

    for h in &halfspaces {
        for v in &vertices {
            if h.slack(v) < -CONSISTENCY_TOL {
                return Err(Error::DegenerateNumerics(format!(
                    "vertex violates facet by {:e}",
                    -h.slack(v)
                )));
            }
        }
    }

    let lattice = build_lattice(&vertices, &halfspaces, dim)?;
    Ok(Polytope {
        dim,
        ambient_dim,
        ambient_vertices,
        vertices,
        halfspaces,
        chart_origin,
        chart_basis,
        lattice,
    })
}

/// Brute-force facet enumeration over affinely independent `n`-subsets.
fn hull_halfspaces(points: &[Vector], n: usize) -> Result<Vec<Halfspace>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut facets: Vec<(Halfspace, BTreeSet<usize>)> = Vec::new();
    for subset in combinations(points.len(), n) {
        if facets
            .iter()
            .any(|(_, on)| subset.iter().all(|k| on.contains(k)))
        {
            continue;
        }
        let base = &points[subset[0]];
        let diffs: Vec<Vector> = subset[1..].iter().map(|&k| &points[k] - base).collect();
        let scale: f64 = diffs.iter().map(|d| d.norm()).product();
        let normal = cofactor_normal(&diffs, n);
        let norm = normal.norm();
        if norm <= 1e-9 * scale.max(f64::MIN_POSITIVE) || norm == 0.0 {
            continue;
        }
        let mut normal = normal / norm;
        let mut offset = normal.dot(base);
        let slacks: Vec<f64> = points.iter().map(|p| normal.dot(p) - offset).collect();
        let min = slacks.iter().copied().fold(f64::INFINITY, f64::min);
        let max = slacks.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if min < -MERGE_TOL && max > MERGE_TOL {
            continue;
        }
        if min < -MERGE_TOL {
            normal = -normal;
            offset = -offset;
        }
        let on: BTreeSet<usize> = (0..points.len())
            .filter(|&k| (normal.dot(&points[k]) - offset).abs() <= MERGE_TOL)
            .collect();
        let duplicate = facets.iter().any(|(h, _)| {
            (&h.normal - &normal).norm() <= MERGE_TOL && (h.offset - offset).abs() <= MERGE_TOL
        });
        if !duplicate {
            facets.push((Halfspace { normal, offset }, on));
        }
    }
    if facets.is_empty() {
        return Err(Error::DegenerateNumerics("no supporting hyperplanes found".into()));
    }
    Ok(facets.into_iter().map(|(h, _)| h).collect())
}

fn build_lattice(vertices: &[Vector], halfspaces: &[Halfspace], n: usize) -> Result<FaceLattice> {
    let active: Vec<BTreeSet<usize>> = halfspaces
        .iter()
        .map(|h| {
            (0..vertices.len())
                .filter(|&k| h.slack(&vertices[k]).abs() <= MERGE_TOL)
                .collect()
        })
        .collect();

    // Faces are the intersections of facets, plus the polytope itself.
    let mut sets: BTreeSet<Vec<usize>> = active
        .iter()
        .map(|s| s.iter().copied().collect())
        .collect();
    let mut frontier: Vec<Vec<usize>> = sets.iter().cloned().collect();
    let facet_sets: Vec<Vec<usize>> = frontier.clone();
    while let Some(set) = frontier.pop() {
        for facet in &facet_sets {
            let common: Vec<usize> = set
                .iter()
                .copied()
                .filter(|v| facet.binary_search(v).is_ok())
                .collect();
            if !common.is_empty() && sets.insert(common.clone()) {
                frontier.push(common);
            }
        }
    }
    sets.insert((0..vertices.len()).collect());

    let mut records: Vec<(usize, Vec<usize>)> = Vec::new();
    for set in sets {
        let origin = &vertices[set[0]];
        let diffs: Vec<Vector> = set.iter().map(|&k| &vertices[k] - origin).collect();
        let d = orthonormal_span(&diffs, n, 1e-9).ncols();
        records.push((d, set));
    }
    records.sort();

    let mut faces = Vec::with_capacity(records.len());
    let mut by_vertices = BTreeMap::new();
    for (id, (dim, set)) in records.into_iter().enumerate() {
        let origin = vertices[set[0]].clone();
        let diffs: Vec<Vector> = set.iter().map(|&k| &vertices[k] - &origin).collect();
        let affine_basis = orthonormal_span(&diffs, n, 1e-9);
        if affine_basis.ncols() != dim {
            return Err(Error::DegenerateNumerics("unstable face dimension".into()));
        }
        let mut centroid = Vector::zeros(n);
        for &k in &set {
            centroid += &vertices[k];
        }
        centroid /= set.len() as f64;
        let containing_facets = (0..halfspaces.len())
            .filter(|&j| set.iter().all(|v| active[j].contains(v)))
            .collect();
        by_vertices.insert(set.clone(), id);
        faces.push(Face {
            id,
            dim,
            vertex_ids: set,
            containing_facets,
            origin,
            affine_basis,
            relative_interior_point: centroid,
        });
    }

    let mut covers = vec![Vec::new(); faces.len()];
    for small in &faces {
        for big in &faces {
            if big.dim == small.dim + 1
                && small
                    .vertex_ids
                    .iter()
                    .all(|v| big.vertex_ids.binary_search(v).is_ok())
            {
                covers[small.id].push(big.id);
            }
        }
    }

    let mut facet_faces = Vec::with_capacity(halfspaces.len());
    for set in &active {
        let key: Vec<usize> = set.iter().copied().collect();
        let id = *by_vertices
            .get(&key)
            .ok_or_else(|| Error::DegenerateNumerics("facet missing from lattice".into()))?;
        if faces[id].dim + 1 != n {
            return Err(Error::DegenerateNumerics(format!(
                "halfspace touches the polytope in a {}-face",
                faces[id].dim
            )));
        }
        facet_faces.push(id);
    }

    Ok(FaceLattice {
        faces,
        by_vertices,
        covers,
        facet_faces,
    })
}

impl Polytope {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    /// Vertices in chart coordinates.
    pub fn vertices(&self) -> &[Vector] {
        &self.vertices
    }

    pub fn ambient_vertices(&self) -> &[Vector] {
        &self.ambient_vertices
    }

    pub fn halfspaces(&self) -> &[Halfspace] {
        &self.halfspaces
    }

    pub fn lattice(&self) -> &FaceLattice {
        &self.lattice
    }

    /// Orthonormal basis of `E_M` inside the ambient space (columns).
    pub fn affine_basis(&self) -> &Matrix {
        &self.chart_basis
    }

    pub fn to_chart(&self, ambient: &Vector) -> Vector {
        self.chart_basis.transpose() * (ambient - &self.chart_origin)
    }

    pub fn from_chart(&self, chart: &Vector) -> Vector {
        &self.chart_origin + &self.chart_basis * chart
    }

    /// Largest pairwise vertex distance.
    pub fn diameter(&self) -> f64 {
        let mut d: f64 = 0.0;
        for (i, a) in self.vertices.iter().enumerate() {
            for b in &self.vertices[i + 1..] {
                d = d.max((a - b).norm());
            }
        }
        d
    }

    pub fn centroid(&self) -> Vector {
        self.lattice.top().relative_interior_point.clone()
    }

    /// Most negative halfspace slack (zero when all constraints hold).
    pub fn violation(&self, x: &Vector) -> f64 {
        self.halfspaces
            .iter()
            .map(|h| (-h.slack(x)).max(0.0))
            .fold(0.0, f64::max)
    }

    pub fn contains(&self, x: &Vector, tol: f64) -> bool {
        self.violation(x) <= tol
    }

    /// Membership test against the vertex description: solves for convex
    /// weights by projected Frank–Wolfe steps. Used to cross-check the
    /// halfspace description.
    pub fn contains_by_vertices(&self, x: &Vector, tol: f64) -> bool {
        let k = self.vertices.len();
        let mut w = vec![1.0 / k as f64; k];
        let mut current: Vector = self
            .vertices
            .iter()
            .zip(&w)
            .fold(Vector::zeros(self.dim), |acc, (v, wi)| acc + v * *wi);
        for _ in 0..20_000 {
            let grad = &current - x;
            if grad.norm() <= tol {
                return true;
            }
            let (best, _) = self
                .vertices
                .iter()
                .enumerate()
                .map(|(i, v)| (i, v.dot(&grad)))
                .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
            let dir = &self.vertices[best] - &current;
            let denom = dir.norm_squared();
            if denom == 0.0 {
                break;
            }
            let step = (-(grad.dot(&dir)) / denom).clamp(0.0, 1.0);
            if step <= 0.0 {
                break;
            }
            for wi in w.iter_mut() {
                *wi *= 1.0 - step;
            }
            w[best] += step;
            current += dir * step;
        }
        (&current - x).norm() <= tol
    }

    /// The face `M(x)` with `x` in its algebraic interior.
    pub fn generating_face(&self, x: &Vector) -> Result<FaceId> {
        let mut worst = 0.0_f64;
        let mut active = Vec::new();
        for (j, h) in self.halfspaces.iter().enumerate() {
            let s = h.slack(x);
            worst = worst.min(s);
            if s <= MEMBERSHIP_TOL {
                active.push(j);
            }
        }
        if worst < -MEMBERSHIP_TOL {
            return Err(Error::PointOutside { slack: worst });
        }
        if active.is_empty() {
            return Ok(self.lattice.top().id);
        }
        let mut common: Option<Vec<usize>> = None;
        for j in active {
            let facet = &self.lattice.face(self.lattice.facet_face(j)).vertex_ids;
            common = Some(match common {
                None => facet.clone(),
                Some(c) => c
                    .into_iter()
                    .filter(|v| facet.binary_search(v).is_ok())
                    .collect(),
            });
        }
        let common = common.unwrap_or_default();
        self.lattice.by_vertex_set(&common).ok_or_else(|| {
            Error::DegenerateNumerics("active facets intersect outside the lattice".into())
        })
    }

    /// `ind_M(x) = n - dim M(x)`.
    pub fn point_index(&self, x: &Vector) -> Result<usize> {
        let f = self.generating_face(x)?;
        Ok(self.dim - self.lattice.face(f).dim)
    }

    /// Uniform sample from the algebraic interior of a face (rejection in the
    /// face's own coordinates).
    pub fn sample_face<R: Rng + ?Sized>(&self, face: FaceId, rng: &mut R) -> Vector {
        let f = self.lattice.face(face);
        if f.dim == 0 {
            return f.origin.clone();
        }
        let coords: Vec<Vector> = f
            .vertex_ids
            .iter()
            .map(|&k| f.affine_basis.transpose() * (&self.vertices[k] - &f.origin))
            .collect();
        let lo = Vector::from_fn(f.dim, |i, _| coords.iter().map(|c| c[i]).fold(f64::INFINITY, f64::min));
        let hi = Vector::from_fn(f.dim, |i, _| {
            coords.iter().map(|c| c[i]).fold(f64::NEG_INFINITY, f64::max)
        });
        for _ in 0..100_000 {
            let c = Vector::from_fn(f.dim, |i, _| rng.random_range(lo[i]..hi[i]));
            let x = &f.origin + &f.affine_basis * c;
            if matches!(self.generating_face(&x), Ok(g) if g == face) {
                return x;
            }
        }
        // Fallback: strictly positive convex combination.
        let weights: Vec<f64> = f.vertex_ids.iter().map(|_| 0.5 + rng.random::<f64>()).collect();
        let total: f64 = weights.iter().sum();
        f.vertex_ids
            .iter()
            .zip(weights)
            .fold(Vector::zeros(self.dim), |acc, (&k, w)| acc + &self.vertices[k] * (w / total))
    }

    /// Uniform sample of the polytope's interior.
    pub fn sample_interior<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector {
        self.sample_face(self.lattice.top().id, rng)
    }

    /// `count` points of the stratum `∂_i(M)` (points of index `i`), drawn by
    /// picking an `(n-i)`-face uniformly and then a uniform point of its
    /// algebraic interior.
    pub fn boundary_stratum_samples<R: Rng + ?Sized>(
        &self,
        index: usize,
        count: usize,
        rng: &mut R,
    ) -> Result<Vec<Vector>> {
        if index > self.dim {
            return Err(Error::EmptyStratum { dim: 0 });
        }
        let dim = self.dim - index;
        let faces: Vec<FaceId> = self.lattice.faces_of_dim(dim).map(|f| f.id).collect();
        if faces.is_empty() {
            return Err(Error::EmptyStratum { dim });
        }
        Ok((0..count)
            .map(|_| {
                let f = faces[rng.random_range(0..faces.len())];
                self.sample_face(f, rng)
            })
            .collect())
    }

    /// Samples of `∂M` (all faces of dimension below `n`), spread evenly over faces.
    pub fn boundary_samples<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<Vector> {
        let faces: Vec<FaceId> = self
            .lattice
            .faces()
            .iter()
            .filter(|f| f.dim < self.dim)
            .map(|f| f.id)
            .collect();
        if faces.is_empty() {
            return Vec::new();
        }
        (0..count)
            .map(|k| self.sample_face(faces[k % faces.len()], rng))
            .collect()
    }

    /// The face as a polytope in its own right, with vertex coordinates taken
    /// from this polytope's chart.
    pub fn face_polytope(&self, face: FaceId) -> Result<Polytope> {
        let pts: Vec<Vec<f64>> = self
            .lattice
            .face(face)
            .vertex_ids
            .iter()
            .map(|&k| self.vertices[k].iter().copied().collect())
            .collect();
        build_polytope(&pts)
    }

    /// Maps each vertex of `sub` (a face polytope built by [`face_polytope`])
    /// to the matching vertex id of `self`.
    ///
    /// [`face_polytope`]: Polytope::face_polytope
    pub fn vertex_correspondence(&self, sub: &Polytope) -> Vec<usize> {
        sub.ambient_vertices()
            .iter()
            .map(|v| {
                self.vertices
                    .iter()
                    .position(|w| (w - v).norm() <= MERGE_TOL)
                    .expect("face vertex belongs to the parent polytope")
            })
            .collect()
    }

    pub fn lattice_records(&self) -> Vec<FaceRecord> {
        self.lattice
            .faces()
            .iter()
            .map(|f| FaceRecord {
                id: f.id,
                dim: f.dim,
                vertex_ids: f.vertex_ids.clone(),
                containing_facets: f.containing_facets.clone(),
            })
            .collect()
    }
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
    fn square_from_vertices() {
        let sq = build_polytope(&[vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]]).unwrap();
        assert_eq!(sq.dim(), 2);
        assert_eq!(sq.halfspaces().len(), 4);
        let lat = sq.lattice();
        assert_eq!(lat.count_of_dim(0), 4);
        assert_eq!(lat.count_of_dim(1), 4);
        assert_eq!(lat.count_of_dim(2), 1);
    }

    #[test]
    fn single_point_is_zero_polytope() {
        let p = build_polytope(&[vec![0.0, 0.0]]).unwrap();
        assert_eq!(p.dim(), 0);
        assert!(p.halfspaces().is_empty());
        assert_eq!(p.lattice().len(), 1);
        assert_eq!(p.lattice().top().dim, 0);
    }

    #[test]
    fn empty_input_rejected() {
        assert!(matches!(build_polytope(&[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn duplicates_and_interior_points_dropped() {
        let p = build_polytope(&[
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![1.0, 0.0],
            vec![0.5, 0.0],
            vec![0.2, 0.2],
            vec![0.0, 1.0],
        ])
        .unwrap();
        assert_eq!(p.vertices().len(), 3);
        assert_eq!(p.halfspaces().len(), 3);
    }

    /// Brute-force oracle: a hyperplane through a vertex subset supports the
    /// cube iff all vertices lie on one side; count distinct facet planes.
    #[test]
    fn cube_facets_match_bruteforce_oracle() {
        let cube = catalog::polytope("cube3").unwrap();
        assert_eq!(cube.halfspaces().len(), 6);
        assert_eq!(cube.dim(), 3);
        // Oracle: axis-aligned planes x_k = 0 and x_k = 1 each hold 4 vertices.
        let mut count = 0;
        for k in 0..3 {
            for val in [0.0, 1.0] {
                let on = cube.vertices().iter().filter(|v| v[k] == val).count();
                if on == 4 {
                    count += 1;
                }
            }
        }
        assert_eq!(count, 6);
        let lat = cube.lattice();
        assert_eq!(
            (0..=3).map(|d| lat.count_of_dim(d)).collect::<Vec<_>>(),
            vec![8, 12, 6, 1]
        );
    }

    #[test]
    fn generating_face_and_index_on_square() {
        let sq = catalog::polytope("square").unwrap();
        let lat = sq.lattice();
        let top = sq.generating_face(&v(&[0.5, 0.5])).unwrap();
        assert_eq!(lat.face(top).dim, 2);
        let corner = sq.generating_face(&v(&[0.0, 0.0])).unwrap();
        assert_eq!(lat.face(corner).dim, 0);
        assert_eq!(sq.vertices()[lat.face(corner).vertex_ids[0]], v(&[0.0, 0.0]));
        let edge = sq.generating_face(&v(&[0.5, 0.0])).unwrap();
        let f = lat.face(edge);
        assert_eq!(f.dim, 1);
        assert!(f.vertex_ids.iter().all(|&k| sq.vertices()[k][1] == 0.0));

        assert_eq!(sq.point_index(&v(&[0.5, 0.5])).unwrap(), 0);
        assert_eq!(sq.point_index(&v(&[0.5, 0.0])).unwrap(), 1);
        assert_eq!(sq.point_index(&v(&[1.0, 1.0])).unwrap(), 2);
        assert!(matches!(
            sq.point_index(&v(&[1.5, 0.5])),
            Err(Error::PointOutside { .. })
        ));
    }

    #[test]
    fn stratum_samples_have_requested_index() {
        let mut rng = Pcg64::seed_from_u64(7);
        let sq = catalog::polytope("square").unwrap();
        for i in 0..=2 {
            for x in sq.boundary_stratum_samples(i, 50, &mut rng).unwrap() {
                assert_eq!(sq.point_index(&x).unwrap(), i);
            }
        }
        let corners = sq.boundary_stratum_samples(2, 20, &mut rng).unwrap();
        assert!(corners.iter().all(|x| x.iter().all(|c| *c == 0.0 || *c == 1.0)));
        let seg = catalog::polytope("segment").unwrap();
        for x in seg.boundary_stratum_samples(1, 10, &mut rng).unwrap() {
            assert!(x[0] == 0.0 || x[0] == 1.0);
        }
        assert!(matches!(
            seg.boundary_stratum_samples(2, 1, &mut rng),
            Err(Error::EmptyStratum { .. })
        ));
    }

    #[test]
    fn lower_dimensional_polytope_gets_a_chart() {
        // A triangle in R^3.
        let tri = build_polytope(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        assert_eq!(tri.dim(), 2);
        assert_eq!(tri.ambient_dim(), 3);
        assert_eq!(tri.halfspaces().len(), 3);
        let c = tri.from_chart(&tri.centroid());
        assert!((c - v(&[1.0 / 3.0; 3])).norm() < 1e-12);
        for (a, x) in tri.ambient_vertices().iter().zip(tri.vertices()) {
            assert!((tri.from_chart(x) - a).norm() < 1e-12);
            assert!((tri.to_chart(a) - x).norm() < 1e-12);
        }
    }

    #[test]
    fn dodecahedron_merges_coplanar_triangles() {
        let d = catalog::polytope("dodecahedron").unwrap();
        let lat = d.lattice();
        assert_eq!(d.halfspaces().len(), 12);
        assert_eq!(lat.count_of_dim(0), 20);
        assert_eq!(lat.count_of_dim(1), 30);
        assert_eq!(lat.count_of_dim(2), 12);
        assert!(lat.faces_of_dim(2).all(|f| f.vertex_ids.len() == 5));
    }

    #[test]
    fn lattice_has_single_top_and_covers() {
        for name in catalog::NAMES {
            let p = catalog::polytope(name).unwrap();
            let lat = p.lattice();
            assert_eq!(lat.count_of_dim(p.dim()), 1, "{name}");
            for f in lat.faces() {
                if f.dim < p.dim() {
                    assert!(!lat.covers(f.id).is_empty(), "{name}: face {} uncovered", f.id);
                }
            }
        }
    }
}
