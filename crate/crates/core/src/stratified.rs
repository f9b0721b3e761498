//! Stratified vector fields (fields tangent to the generating face of every
//! point), their restriction to `ℓ`-faces, extension back, and the obstruction
//! on non-simple polytopes.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_pcg::Pcg64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::extension::{bump, CompatibleFamily, ExtensionOperator};
use crate::field::Field;
use crate::linalg::{orthonormal_span, residual_to_span, to_vec, Matrix, Vector};
use crate::polytope::{FaceId, Polytope};
use crate::simplicity::is_simple;

/// Largest admissible normal component of a stratified field.
pub const TANGENCY_TOL: f64 = 1e-9;
/// Largest admissible relative residual in the span condition.
pub const SPAN_TOL: f64 = 1e-8;
/// Rank cutoff for spans of sampled values.
const RANK_TOL: f64 = 1e-9;
/// Samples per face used when a check is run internally.
pub const DEFAULT_SAMPLES: usize = 25;
const INTERNAL_SEED: u64 = 0x57a7_1f1e;

#[derive(Clone, Debug, Serialize)]
pub struct StratificationReport {
    pub samples_per_face: usize,
    /// Largest normal component of `X(x)` over sampled `x ∈ algint(F)`, per face.
    pub per_face: BTreeMap<FaceId, f64>,
    pub failing_faces: Vec<FaceId>,
    pub max_normal: f64,
    pub worst_point: Vec<f64>,
    pub tol: f64,
    pub passed: bool,
}

fn tangency_on_faces<R: Rng + ?Sized>(
    p: &Polytope,
    x: &Field,
    faces: &[FaceId],
    samples: usize,
    rng: &mut R,
) -> StratificationReport {
    let lat = p.lattice();
    let mut per_face = BTreeMap::new();
    let mut max_normal: f64 = 0.0;
    let mut worst_point = Vec::new();
    for &id in faces {
        let face = lat.face(id);
        let count = if face.dim == 0 { 1 } else { samples };
        let mut worst: f64 = 0.0;
        for _ in 0..count {
            let y = p.sample_face(id, rng);
            let normal = face.normal_component(&x.eval(&y));
            if normal > worst {
                worst = normal;
            }
            if normal > max_normal || worst_point.is_empty() {
                max_normal = max_normal.max(normal);
                worst_point = to_vec(&y);
            }
        }
        per_face.insert(id, worst);
    }
    let failing_faces: Vec<FaceId> = per_face
        .iter()
        .filter(|(_, &v)| v > TANGENCY_TOL)
        .map(|(&id, _)| id)
        .collect();
    StratificationReport {
        samples_per_face: samples,
        per_face,
        passed: failing_faces.is_empty(),
        failing_faces,
        max_normal,
        worst_point,
        tol: TANGENCY_TOL,
    }
}

/// Sampled check of `X(x) ∈ E_x` on every face of `p`.
pub fn is_stratified<R: Rng + ?Sized>(p: &Polytope, x: &Field, samples: usize, rng: &mut R) -> StratificationReport {
    let faces: Vec<FaceId> = p.lattice().faces().iter().map(|f| f.id).collect();
    tangency_on_faces(p, x, &faces, samples, rng)
}

/// A vector field on a polytope together with the faces on which tangency
/// has been verified.
#[derive(Clone, Debug)]
pub struct StratifiedField {
    base: Polytope,
    field: Field,
    certified_faces: BTreeSet<FaceId>,
}

impl StratifiedField {
    /// Wrap `field` after a sampled tangency check on every face.
    pub fn new<R: Rng + ?Sized>(p: &Polytope, field: Field, samples: usize, rng: &mut R) -> Result<Self> {
        check_shape(p, &field)?;
        let report = is_stratified(p, &field, samples, rng);
        if let Some(&face) = report.failing_faces.first() {
            return Err(Error::NotStratified {
                face,
                normal: report.per_face[&face],
            });
        }
        Ok(StratifiedField {
            base: p.clone(),
            field,
            certified_faces: report.per_face.keys().copied().collect(),
        })
    }

    /// Wrap `field` without checking; no face is certified.
    pub fn unchecked(p: &Polytope, field: Field) -> Self {
        StratifiedField {
            base: p.clone(),
            field,
            certified_faces: BTreeSet::new(),
        }
    }

    pub fn base(&self) -> &Polytope {
        &self.base
    }

    pub fn field(&self) -> &Field {
        &self.field
    }

    pub fn certified_faces(&self) -> &BTreeSet<FaceId> {
        &self.certified_faces
    }

    pub fn is_certified(&self) -> bool {
        self.certified_faces.len() == self.base.lattice().len()
    }

    pub fn eval(&self, x: &Vector) -> Vector {
        self.field.eval(x)
    }

    /// `c·X`, still stratified.
    pub fn scaled(&self, c: f64) -> StratifiedField {
        StratifiedField {
            base: self.base.clone(),
            field: self.field.scaled(c),
            certified_faces: self.certified_faces.clone(),
        }
    }

    /// `s·X` for a scalar function `s`; multiplying by a function keeps tangency.
    pub fn multiplied_by(&self, s: &Field) -> StratifiedField {
        StratifiedField {
            base: self.base.clone(),
            field: self.field.multiplied_by(s),
            certified_faces: self.certified_faces.clone(),
        }
    }
}

fn check_shape(p: &Polytope, field: &Field) -> Result<()> {
    let n = p.dim();
    if field.domain_dim() != n || field.codomain_dim() != n {
        return Err(Error::InvalidArgument(format!(
            "vector field on a {n}-polytope must map R^{n} to R^{n}, got R^{} to R^{}",
            field.domain_dim(),
            field.codomain_dim()
        )));
    }
    Ok(())
}

/// Tangent fields on the `ℓ`-faces, agreeing on intersections.
#[derive(Clone, Debug)]
pub struct FaceFieldFamily {
    pub family: CompatibleFamily,
}

impl FaceFieldFamily {
    pub fn new(p: &Polytope, ell: usize, fields: BTreeMap<FaceId, Field>) -> Result<Self> {
        for f in fields.values() {
            check_shape(p, f)?;
        }
        Ok(FaceFieldFamily {
            family: CompatibleFamily::new(p, ell, fields)?,
        })
    }

    pub fn zero(p: &Polytope, ell: usize) -> Self {
        FaceFieldFamily {
            family: CompatibleFamily::zero(p, ell, p.dim()),
        }
    }

    pub fn ell(&self) -> usize {
        self.family.ell
    }

    pub fn fields(&self) -> &BTreeMap<FaceId, Field> {
        &self.family.fields
    }

    /// Face-wise `a·self + b·other`.
    pub fn linear_combination(&self, a: f64, other: &FaceFieldFamily, b: f64) -> Self {
        FaceFieldFamily {
            family: self.family.linear_combination(a, &other.family, b),
        }
    }

    /// Tangency of each `f_F` on the faces of `F`; the report is keyed by
    /// the `ℓ`-face and holds its worst normal component.
    pub fn tangency<R: Rng + ?Sized>(&self, p: &Polytope, samples: usize, rng: &mut R) -> StratificationReport {
        let lat = p.lattice();
        let mut per_face = BTreeMap::new();
        let mut max_normal: f64 = 0.0;
        let mut worst_point = Vec::new();
        for (&id, f) in &self.family.fields {
            let subs: Vec<FaceId> = lat.faces().iter().filter(|g| lat.contains(id, g.id)).map(|g| g.id).collect();
            let r = tangency_on_faces(p, f, &subs, samples, rng);
            if r.max_normal > max_normal || worst_point.is_empty() {
                max_normal = max_normal.max(r.max_normal);
                worst_point = r.worst_point.clone();
            }
            per_face.insert(id, r.max_normal);
        }
        let failing_faces: Vec<FaceId> = per_face
            .iter()
            .filter(|(_, &v)| v > TANGENCY_TOL)
            .map(|(&id, _)| id)
            .collect();
        StratificationReport {
            samples_per_face: samples,
            per_face,
            passed: failing_faces.is_empty(),
            failing_faces,
            max_normal,
            worst_point,
            tol: TANGENCY_TOL,
        }
    }

    /// Largest disagreement on pairwise intersections (errors when incompatible).
    pub fn check_compatibility<R: Rng + ?Sized>(&self, p: &Polytope, samples: usize, rng: &mut R) -> Result<f64> {
        self.family.check_compatibility(p, samples, rng)
    }
}

/// `R(X) = (X|_F)` over the `ℓ`-faces.
pub fn restrict_fields<R: Rng + ?Sized>(x: &StratifiedField, ell: usize, rng: &mut R) -> Result<FaceFieldFamily> {
    let p = &x.base;
    if !x.is_certified() {
        let report = is_stratified(p, &x.field, DEFAULT_SAMPLES, rng);
        if let Some(&face) = report.failing_faces.first() {
            return Err(Error::NotStratified {
                face,
                normal: report.per_face[&face],
            });
        }
    }
    if ell >= p.dim().max(1) {
        return Err(Error::InvalidArgument(format!("no proper {ell}-faces on a {}-polytope", p.dim())));
    }
    Ok(FaceFieldFamily {
        family: CompatibleFamily::restrict(p, ell, &x.field),
    })
}

/// `τ`: the extension operator applied to tangent face data, with the result
/// checked for stratification.
#[derive(Clone, Debug)]
pub struct StratifiedExtension {
    polytope: Polytope,
    operator: ExtensionOperator,
    samples: usize,
}

impl StratifiedExtension {
    pub fn new(p: &Polytope, ell: usize) -> Result<Self> {
        Ok(StratifiedExtension {
            polytope: p.clone(),
            operator: ExtensionOperator::new(p, ell)?,
            samples: DEFAULT_SAMPLES,
        })
    }

    /// Samples per face for the input and output checks.
    pub fn with_samples(mut self, samples: usize) -> Self {
        self.samples = samples;
        self
    }

    pub fn operator(&self) -> &ExtensionOperator {
        &self.operator
    }

    pub fn apply(&self, family: &FaceFieldFamily) -> Result<StratifiedField> {
        let p = &self.polytope;
        let mut rng = Pcg64::seed_from_u64(INTERNAL_SEED);
        let input = family.tangency(p, self.samples, &mut rng);
        if let Some(&face) = input.failing_faces.first() {
            return Err(Error::NotStratified {
                face,
                normal: input.per_face[&face],
            });
        }
        let field = self.operator.apply(&family.family)?;
        let report = is_stratified(p, &field, self.samples, &mut rng);
        if let Some(&face) = report.failing_faces.first() {
            return Err(Error::StratificationFailure {
                face,
                normal: report.per_face[&face],
            });
        }
        Ok(StratifiedField {
            base: p.clone(),
            field,
            certified_faces: report.per_face.keys().copied().collect(),
        })
    }
}

/// `τ(f)` for a single family.
pub fn extend_fields(p: &Polytope, family: &FaceFieldFamily) -> Result<StratifiedField> {
    if !is_simple(p).is_simple {
        return Err(Error::NotSimple("extension of face fields needs a simple polytope".into()));
    }
    StratifiedExtension::new(p, family.ell())?.apply(family)
}

#[derive(Clone, Debug, Serialize)]
pub struct CriterionReport {
    pub ell: usize,
    /// Condition (a): worst normal component of `X|_F` on the faces of each `ℓ`-face.
    pub condition_a: BTreeMap<FaceId, f64>,
    pub condition_a_passed: bool,
    /// Condition (b): worst relative residual of `X(N)` against the span of
    /// the sampled values on the `ℓ`-faces of `N`, for each face `N` above `ℓ`.
    pub condition_b: BTreeMap<FaceId, f64>,
    pub condition_b_passed: bool,
    /// (a) and (b) together, which imply stratification.
    pub criterion_passed: bool,
    /// Direct tangency check on every face.
    pub direct: StratificationReport,
    /// The criterion never passes while the direct check fails.
    pub consistent: bool,
}

/// Evaluate the two conditions that together imply stratification and
/// compare them with the direct check.
pub fn stratified_criterion<R: Rng + ?Sized>(
    p: &Polytope,
    x: &Field,
    ell: usize,
    samples: usize,
    rng: &mut R,
) -> Result<CriterionReport> {
    check_shape(p, x)?;
    let n = p.dim();
    if ell == 0 || ell >= n {
        return Err(Error::InvalidArgument(format!("criterion needs 1 <= ℓ <= {}", n.saturating_sub(1))));
    }
    let lat = p.lattice();
    let restricted = FaceFieldFamily {
        family: CompatibleFamily::restrict(p, ell, x),
    };
    let a = restricted.tangency(p, samples, rng);

    let mut condition_b = BTreeMap::new();
    for face in lat.faces().iter().filter(|f| f.dim > ell) {
        let subs = lat.subfaces_of_dim(face.id, ell);
        let mut values = Vec::new();
        for &g in &subs {
            let count = if ell == 0 { 1 } else { samples };
            for _ in 0..count {
                values.push(x.eval(&p.sample_face(g, rng)));
            }
            for &v in &lat.face(g).vertex_ids {
                values.push(x.eval(&p.vertices()[v]));
            }
        }
        let span = orthonormal_span(&values, n, RANK_TOL);
        let mut worst: f64 = 0.0;
        for _ in 0..samples {
            let value = x.eval(&p.sample_face(face.id, rng));
            worst = worst.max(residual_to_span(&span, &value) / value.norm().max(1.0));
        }
        condition_b.insert(face.id, worst);
    }
    let condition_b_passed = condition_b.values().all(|&r| r <= SPAN_TOL);
    let direct = is_stratified(p, x, samples, rng);
    let criterion_passed = a.passed && condition_b_passed;
    Ok(CriterionReport {
        ell,
        condition_a: a.per_face,
        condition_a_passed: a.passed,
        condition_b,
        condition_b_passed,
        criterion_passed,
        consistent: !criterion_passed || direct.passed,
        direct,
    })
}

/// Random stratified polynomial field on any polytope: for every edge
/// direction `u`, a random affine coefficient times the product of the
/// (normalized) slacks of all facets not parallel to `u`, times `u`.
pub fn random_stratified_field<R: Rng + ?Sized>(p: &Polytope, rng: &mut R) -> Field {
    let n = p.dim();
    let lat = p.lattice();
    let mut directions: Vec<Vector> = Vec::new();
    for e in lat.faces_of_dim(1) {
        let u = e.affine_basis.column(0).into_owned();
        if !directions.iter().any(|d| (d.dot(&u).abs() - 1.0).abs() < 1e-9) {
            directions.push(u);
        }
    }
    // Slack scales so each normalized slack is at most 1 on the polytope.
    let scales: Vec<f64> = p
        .halfspaces()
        .iter()
        .map(|h| p.vertices().iter().map(|v| h.slack(v)).fold(0.0, f64::max).max(1e-12))
        .collect();
    let terms: Vec<(Vector, Vec<usize>, Vector, f64)> = directions
        .into_iter()
        .map(|u| {
            let cut: Vec<usize> = p
                .halfspaces()
                .iter()
                .enumerate()
                .filter(|(_, h)| h.normal.dot(&u).abs() > 1e-9)
                .map(|(j, _)| j)
                .collect();
            let lin = Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let c0 = rng.random_range(-1.0..1.0);
            (u, cut, lin, c0)
        })
        .collect();
    let halfspaces = p.halfspaces().to_vec();
    Field::new(n, n, move |x| {
        let mut out = Vector::zeros(n);
        for (u, cut, lin, c0) in &terms {
            let mut s = c0 + lin.dot(x);
            for &j in cut {
                s *= halfspaces[j].slack(x) / scales[j];
            }
            out.axpy(s, u, 1.0);
        }
        out
    })
}

/// Evidence that a non-simple polytope admits compatible edge data with no
/// smooth extension.
#[derive(Clone, Debug, Serialize)]
pub struct ObstructionWitness {
    pub dim: usize,
    /// Vertex `x_0` on more than `n` edges.
    pub vertex: usize,
    pub vertex_point: Vec<f64>,
    pub edge_count: usize,
    /// Edge ids `F_1, …, F_m` through `x_0`; the last one carries the data.
    pub edges: Vec<FaceId>,
    /// `x_m - x_0 = Σ λ_j (x_j - x_0)`.
    pub lambdas: Vec<f64>,
    pub lambda_residual: f64,
    /// `v = x_m - x_0`.
    pub v: Vec<f64>,
    pub v_norm: f64,
    /// `Σ λ_j dg(x_0, x_j - x_0)`, forced to vanish by the zero data.
    pub forced_derivative: Vec<f64>,
    /// One-sided difference quotient of the data along `F_m` at `x_0`.
    pub data_derivative: Vec<f64>,
    pub family_compatibility: f64,
    pub family_tangency: f64,
    /// `|dg(x_0, x_m - x_0) - v|` for the best degree-2 fit vanishing on `F_1, …, F_{m-1}`.
    pub fit_residual: f64,
    /// Outcome of building the extension operator on edge data.
    pub extension_attempt: String,
    pub infeasible: bool,
}

/// Cutoff along `F_m`: `h(t) = t·b(t / t₀)`, linear germ at `t = 0`, zero for `t ≥ t₀`.
pub const OBSTRUCTION_CUTOFF: f64 = 0.25;

fn cutoff(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        t * bump(t / OBSTRUCTION_CUTOFF)
    }
}

/// The edge family of the non-simple obstruction: zero on every edge except
/// `F_m`, where it is `h(t)·v` at `x_0 + t v`.
pub fn obstruction_family(p: &Polytope, vertex: usize, carrier: FaceId) -> Result<FaceFieldFamily> {
    let n = p.dim();
    let lat = p.lattice();
    let edge = lat.face(carrier);
    let other = *edge
        .vertex_ids
        .iter()
        .find(|&&v| v != vertex)
        .ok_or_else(|| Error::InvalidArgument("carrier edge must contain the vertex".into()))?;
    let x0 = p.vertices()[vertex].clone();
    let v = &p.vertices()[other] - &x0;
    let vv = v.norm_squared();
    let mut fields = BTreeMap::new();
    for e in lat.faces_of_dim(1) {
        let f = if e.id == carrier {
            let (x0, v) = (x0.clone(), v.clone());
            Field::new(n, n, move |x| {
                let t = (x - &x0).dot(&v) / vv;
                &v * cutoff(t)
            })
        } else {
            Field::zero(n, n)
        };
        fields.insert(e.id, f);
    }
    FaceFieldFamily::new(p, 1, fields)
}

/// Orthonormal basis of the null space of the rows of `c` (as matrix columns).
fn null_space(c: &Matrix) -> Matrix {
    let k = c.ncols();
    let rows: Vec<Vector> = (0..c.nrows()).map(|r| c.row(r).transpose()).collect();
    let row_span = orthonormal_span(&rows, k, 1e-12);
    let residuals: Vec<Vector> = (0..k)
        .map(|j| {
            let mut e = Vector::zeros(k);
            e[j] = 1.0;
            let proj = if row_span.ncols() == 0 {
                Vector::zeros(k)
            } else {
                &row_span * (row_span.transpose() * &e)
            };
            e - proj
        })
        .collect();
    orthonormal_span(&residuals, k, 1e-10)
}

/// Coefficient layout of a scalar polynomial of degree ≤ 2 in `y ∈ R^n`:
/// constant, `n` linear terms, then `y_a y_b` for `a ≤ b`.
fn quadratic_row(y: &Vector) -> Vec<f64> {
    let n = y.len();
    let mut row = vec![1.0];
    row.extend(y.iter().copied());
    for a in 0..n {
        for b in a..n {
            row.push(y[a] * y[b]);
        }
    }
    row
}

/// Row of the directional derivative `dg(0, d)` in the same layout.
fn derivative_row(d: &Vector) -> Vec<f64> {
    let n = d.len();
    let mut row = vec![0.0];
    row.extend(d.iter().copied());
    row.extend(std::iter::repeat_n(0.0, n * (n + 1) / 2));
    row
}

/// Best degree-2 local extension near `x_0`: vanishes identically on the
/// zero-data edges and matches the carrier derivative `v` in least squares.
/// Returns `|dg(x_0, d_m) - v|`.
fn quadratic_fit_residual(dirs: &[Vector], d_m: &Vector, v: &Vector) -> f64 {
    let n = d_m.len();
    let width = 1 + n + n * (n + 1) / 2;
    // g(x_0 + t d_j) = c + t L d_j + t² Q[d_j] vanishes for all t.
    let mut hard: Vec<Vec<f64>> = vec![{
        let mut r = vec![0.0; width];
        r[0] = 1.0;
        r
    }];
    for d in dirs {
        hard.push(derivative_row(d));
        let mut quad = quadratic_row(d);
        quad[0] = 0.0;
        for c in quad.iter_mut().skip(1).take(n) {
            *c = 0.0;
        }
        hard.push(quad);
    }
    let c = Matrix::from_fn(hard.len(), width, |r, k| hard[r][k]);
    let basis = null_space(&c);

    let a = Matrix::from_row_slice(1, width, &derivative_row(d_m));
    let mut residual = Vector::zeros(n);
    for comp in 0..n {
        let b = Vector::from_element(1, v[comp]);
        let coeffs = if basis.ncols() == 0 {
            Vector::zeros(width)
        } else {
            let reduced = &a * &basis;
            let z = reduced
                .svd(true, true)
                .solve(&b, 1e-12)
                .unwrap_or_else(|_| Vector::zeros(basis.ncols()));
            &basis * z
        };
        let drow = Vector::from_vec(derivative_row(d_m));
        residual[comp] = drow.dot(&coeffs) - v[comp];
    }
    residual.norm()
}

/// Construct the obstruction at the first vertex lying on more than `n` edges.
pub fn nonsimple_obstruction<R: Rng + ?Sized>(p: &Polytope, samples: usize, rng: &mut R) -> Result<ObstructionWitness> {
    let n = p.dim();
    let lat = p.lattice();
    let report = is_simple(p);
    let (vertex, edges) = report
        .per_vertex_edge_counts
        .iter()
        .find(|(_, &c)| c > n)
        .map(|(&v, _)| {
            let edges: Vec<FaceId> = lat
                .faces_of_dim(1)
                .filter(|e| e.vertex_ids.binary_search(&v).is_ok())
                .map(|e| e.id)
                .collect();
            (v, edges)
        })
        .ok_or(Error::IsSimple)?;
    let x0 = p.vertices()[vertex].clone();
    let direction = |e: FaceId| -> Vector {
        let f = lat.face(e);
        let other = f.vertex_ids.iter().copied().find(|&w| w != vertex).expect("edge has two vertices");
        &p.vertices()[other] - &x0
    };

    // Pick the carrier F_m from the back so that the other directions span it.
    let mut chosen = None;
    for k in (0..edges.len()).rev() {
        let others: Vec<Vector> = edges.iter().enumerate().filter(|(j, _)| *j != k).map(|(_, &e)| direction(e)).collect();
        let d_m = direction(edges[k]);
        let d = Matrix::from_columns(&others);
        let lambdas = d
            .clone()
            .svd(true, true)
            .solve(&d_m, 1e-14)
            .map_err(|e| Error::DegenerateNumerics(e.to_string()))?;
        let residual = (&d * &lambdas - &d_m).norm();
        if residual <= 1e-9 * d_m.norm().max(1.0) {
            chosen = Some((k, others, d_m, lambdas, residual));
            break;
        }
    }
    let (k, others, d_m, lambdas, lambda_residual) = chosen.ok_or_else(|| {
        Error::DegenerateNumerics("no edge direction lies in the span of the others".into())
    })?;
    let mut ordered: Vec<FaceId> = edges.iter().enumerate().filter(|(j, _)| *j != k).map(|(_, &e)| e).collect();
    ordered.push(edges[k]);

    let family = obstruction_family(p, vertex, edges[k])?;
    let family_compatibility = family.check_compatibility(p, samples, rng)?;
    let family_tangency = family.tangency(p, samples, rng).max_normal;

    let v = d_m.clone();
    let step = 1e-7;
    let data = &family.fields()[&edges[k]];
    let data_derivative = (data.eval(&(&x0 + &d_m * step)) - data.eval(&x0)) / step;
    let forced = Vector::zeros(n);
    let fit_residual = quadratic_fit_residual(&others, &d_m, &v);
    let extension_attempt = match ExtensionOperator::new(p, 1) {
        Ok(op) => match op.apply(&family.family) {
            Ok(_) => "extension built".to_string(),
            Err(e) => e.to_string(),
        },
        Err(e) => e.to_string(),
    };
    let v_norm = v.norm();
    Ok(ObstructionWitness {
        dim: n,
        vertex,
        vertex_point: to_vec(&x0),
        edge_count: edges.len(),
        edges: ordered,
        lambdas: lambdas.iter().copied().collect(),
        lambda_residual,
        v: to_vec(&v),
        v_norm,
        forced_derivative: to_vec(&forced),
        data_derivative: to_vec(&data_derivative),
        family_compatibility,
        family_tangency,
        fit_residual,
        extension_attempt,
        infeasible: fit_residual >= 0.5 * v_norm && lambda_residual <= 1e-9,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use crate::expr::parse_expression;

    fn v(c: &[f64]) -> Vector {
        Vector::from_column_slice(c)
    }

    fn expr_field(n: usize, comps: &[&str]) -> Field {
        Field::from_exprs(n, comps.iter().map(|s| parse_expression(s, n).unwrap()).collect())
    }

    fn edge_with(p: &Polytope, a: &[f64], b: &[f64]) -> FaceId {
        let find = |c: &[f64]| p.vertices().iter().position(|w| (w - v(c)).norm() < 1e-12).unwrap();
        let mut ids = vec![find(a), find(b)];
        ids.sort_unstable();
        p.lattice().by_vertex_set(&ids).unwrap()
    }

    #[test]
    fn square_examples() {
        let sq = catalog::polytope("square").unwrap();
        let mut rng = Pcg64::seed_from_u64(1);
        let good = expr_field(2, &["x1*(1-x1)", "x2*(1-x2)"]);
        assert!(is_stratified(&sq, &good, 100, &mut rng).passed);
        let z2 = expr_field(2, &["0", "x2*(x2-1)"]);
        assert!(is_stratified(&sq, &z2, 100, &mut rng).passed);

        let constant = expr_field(2, &["1", "0"]);
        let r = is_stratified(&sq, &constant, 100, &mut rng);
        assert!(!r.passed);
        let left = edge_with(&sq, &[0.0, 0.0], &[0.0, 1.0]);
        let right = edge_with(&sq, &[1.0, 0.0], &[1.0, 1.0]);
        let bottom = edge_with(&sq, &[0.0, 0.0], &[1.0, 0.0]);
        assert!(r.failing_faces.contains(&left) && r.failing_faces.contains(&right));
        assert!(!r.failing_faces.contains(&bottom));
    }

    #[test]
    fn square_restriction() {
        let sq = catalog::polytope("square").unwrap();
        let mut rng = Pcg64::seed_from_u64(2);
        let x = StratifiedField::new(&sq, expr_field(2, &["x1*(1-x1)*(2*x2-1)", "x2*(x2-1)"]), 50, &mut rng).unwrap();
        let fam = restrict_fields(&x, 1, &mut rng).unwrap();
        let bottom = edge_with(&sq, &[0.0, 0.0], &[1.0, 0.0]);
        let y = fam.fields()[&bottom].eval(&v(&[0.3, 0.0]));
        assert!((y[0] + 0.21).abs() < 1e-15 && y[1] == 0.0);
        assert!(fam.tangency(&sq, 50, &mut rng).passed);

        let not = StratifiedField::unchecked(&sq, expr_field(2, &["1", "0"]));
        assert!(matches!(restrict_fields(&not, 1, &mut rng), Err(Error::NotStratified { .. })));
    }

    #[test]
    fn square_round_trip() {
        let sq = catalog::polytope("square").unwrap();
        let mut rng = Pcg64::seed_from_u64(3);
        let g = StratifiedField::new(&sq, expr_field(2, &["x1*(1-x1)", "x2*(x2-1)"]), 50, &mut rng).unwrap();
        let fam = restrict_fields(&g, 1, &mut rng).unwrap();
        let tau = extend_fields(&sq, &fam).unwrap();
        assert!(fam.family.restriction_error(&sq, tau.field(), 200, &mut rng) <= 1e-9);
        assert!(is_stratified(&sq, tau.field(), 100, &mut rng).passed);
        let crit = stratified_criterion(&sq, tau.field(), 1, 30, &mut rng).unwrap();
        assert!(crit.criterion_passed && crit.direct.passed && crit.consistent);

        let zero = extend_fields(&sq, &FaceFieldFamily::zero(&sq, 1)).unwrap();
        for _ in 0..20 {
            assert_eq!(zero.eval(&sq.sample_interior(&mut rng)).norm(), 0.0);
        }
    }

    #[test]
    fn cube_edge_round_trip() {
        let cube = catalog::polytope("cube3").unwrap();
        let mut rng = Pcg64::seed_from_u64(4);
        let g = expr_field(3, &["x1*(1-x1)*(1+x2)", "x2*(1-x2)*(x3-x1)", "x3*(1-x3)*x1*x2"]);
        let g = StratifiedField::new(&cube, g, 20, &mut rng).unwrap();
        let fam = restrict_fields(&g, 1, &mut rng).unwrap();
        let tau = extend_fields(&cube, &fam).unwrap();
        assert!(fam.family.restriction_error(&cube, tau.field(), 200, &mut rng) <= 1e-9);
        let crit = stratified_criterion(&cube, tau.field(), 1, 10, &mut rng).unwrap();
        assert!(crit.criterion_passed && crit.direct.passed);
    }

    #[test]
    fn criterion_detects_span_violation() {
        let cube = catalog::polytope("cube3").unwrap();
        let mut rng = Pcg64::seed_from_u64(5);
        // Tangent on every edge, but crosses the faces z = 0 and z = 1.
        let bad = expr_field(3, &["x1*(1-x1)", "0", "x1*(1-x1)*x2*(1-x2)"]);
        let crit = stratified_criterion(&cube, &bad, 1, 20, &mut rng).unwrap();
        assert!(crit.condition_a_passed);
        assert!(!crit.condition_b_passed);
        assert!(!crit.direct.passed && crit.consistent);
        let failing = &crit.direct.failing_faces;
        assert!(failing.iter().all(|&f| cube.lattice().face(f).dim == 2));

        let zero = Field::zero(3, 3);
        let crit = stratified_criterion(&cube, &zero, 1, 5, &mut rng).unwrap();
        assert!(crit.criterion_passed && crit.direct.passed);
    }

    #[test]
    fn random_stratified_fields_are_stratified() {
        let mut rng = Pcg64::seed_from_u64(6);
        for name in catalog::SIMPLE {
            let p = catalog::polytope(name).unwrap();
            let f = random_stratified_field(&p, &mut rng);
            let r = is_stratified(&p, &f, 20, &mut rng);
            assert!(r.passed, "{name}: {}", r.max_normal);
            let x = p.sample_interior(&mut rng);
            assert!(f.eval(&x).norm() > 0.0);
        }
    }

    #[test]
    fn obstruction_on_pyramid_and_icosahedron() {
        let mut rng = Pcg64::seed_from_u64(7);
        for (name, m) in [("square_pyramid", 4), ("icosahedron", 5)] {
            let p = catalog::polytope(name).unwrap();
            let w = nonsimple_obstruction(&p, 20, &mut rng).unwrap();
            assert_eq!(w.edge_count, m, "{name}");
            assert!(w.lambda_residual <= 1e-9);
            assert!(w.family_compatibility <= 1e-12 && w.family_tangency <= 1e-12);
            assert!(w.v_norm > 0.0);
            assert!(w.fit_residual >= 0.5 * w.v_norm, "{name}: {} vs {}", w.fit_residual, w.v_norm);
            let dv: f64 = w.data_derivative.iter().zip(&w.v).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!(dv < 1e-5 * w.v_norm);
            assert!(w.infeasible);
            assert!(w.extension_attempt.contains("not simple"));
        }
        let pyr = catalog::polytope("square_pyramid").unwrap();
        let w = nonsimple_obstruction(&pyr, 5, &mut rng).unwrap();
        assert_eq!(w.vertex_point, vec![0.5, 0.5, 1.0]);
    }

    #[test]
    fn simple_polytopes_have_no_obstruction() {
        let cube = catalog::polytope("cube3").unwrap();
        let mut rng = Pcg64::seed_from_u64(8);
        assert!(matches!(nonsimple_obstruction(&cube, 5, &mut rng), Err(Error::IsSimple)));
    }

    #[test]
    fn fit_without_constraints_matches_data() {
        // With no zero edges the quadratic fit reproduces the slope exactly.
        let d = v(&[1.0, 0.0, 0.0]);
        assert!(quadratic_fit_residual(&[], &d, &d) < 1e-9);
    }
}
