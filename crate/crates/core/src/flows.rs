//! Flows of stratified vector fields, their compositions as face-respecting
//! diffeomorphisms, and small controllability experiments.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::extension::bump;
use crate::field::Field;
use crate::linalg::{orthonormal_span, to_vec, Matrix, Vector};
use crate::polytope::{FaceId, Polytope};
use crate::stratified::StratifiedField;

/// Default absolute error tolerance of the integrator.
pub const DEFAULT_TOL: f64 = 1e-9;
/// Largest step as a fraction of the polytope diameter.
pub const MAX_STEP_FRACTION: f64 = 1e-2;
/// Escape threshold as a multiple of the tolerance.
pub const ESCAPE_FACTOR: f64 = 100.0;
/// Tolerance of the face-invariance audit.
pub const INVARIANCE_TOL: f64 = 1e-6;
/// Boundary sup-norm below which a field counts as vanishing on `∂M`.
pub const VANISHING_TOL: f64 = 1e-12;
/// Boundary displacement allowed for boundary-fixing flows.
pub const BOUNDARY_FIX_TOL: f64 = 1e-9;
/// Default target residual of the reachability search.
pub const REACH_TOL: f64 = 1e-3;
/// Default number of flow evaluations allowed for the reachability search.
pub const REACH_BUDGET: usize = 10_000;
/// Smallest transversal derivative accepted for condition (II).
pub const TRANSVERSAL_TOL: f64 = 1e-6;
/// Singular-value cutoff in the rank proxy for condition (I).
pub const RANK_TOL: f64 = 1e-9;

type TimeEval = dyn Fn(f64, &Vector) -> Vector + Send + Sync;

/// A time-dependent vector field `γ(t)(x)`.
#[derive(Clone)]
pub struct TimeDependentField {
    dim: usize,
    eval: Arc<TimeEval>,
}

impl std::fmt::Debug for TimeDependentField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TimeDependentField").field("dim", &self.dim).finish()
    }
}

impl TimeDependentField {
    pub fn new<F>(dim: usize, eval: F) -> Self
    where
        F: Fn(f64, &Vector) -> Vector + Send + Sync + 'static,
    {
        TimeDependentField {
            dim,
            eval: Arc::new(eval),
        }
    }

    /// `γ(t) = a(t)·X`.
    pub fn scaled_in_time<A>(x: &Field, a: A) -> Self
    where
        A: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let x = x.clone();
        TimeDependentField::new(x.domain_dim(), move |t, y| x.eval(y) * a(t))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, t: f64, x: &Vector) -> Vector {
        (self.eval)(t, x)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub x: Vec<f64>,
    pub violation: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct FlowResult {
    pub trajectory: Vec<TrajectoryPoint>,
    pub final_point: Vec<f64>,
    /// Worst distance outside the polytope along the trajectory.
    pub max_constraint_violation: f64,
    /// Generating face of the start point.
    pub start_face: FaceId,
    /// Worst distance to the affine hull of every proper face containing the
    /// start point.
    pub face_drift: BTreeMap<FaceId, f64>,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
}

impl FlowResult {
    pub fn final_vector(&self) -> Vector {
        Vector::from_column_slice(&self.final_point)
    }

    pub fn max_face_drift(&self) -> f64 {
        self.face_drift.values().copied().fold(0.0, f64::max)
    }
}

// Dormand–Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Adaptive Dormand–Prince integration of `ẋ = f(t, x)` from `t0` over
/// `duration` (either sign), monitoring the constraints of `p`.
fn integrate<F>(p: &Polytope, f: F, x0: &Vector, t0: f64, duration: f64, tol: f64, record: bool) -> Result<FlowResult>
where
    F: Fn(f64, &Vector) -> Vector,
{
    let n = p.dim();
    if x0.len() != n {
        return Err(Error::InvalidArgument(format!("start point must have {n} coordinates")));
    }
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    let lat = p.lattice();
    let start_face = p.generating_face(x0)?;
    let watched: Vec<FaceId> = lat
        .faces()
        .iter()
        .filter(|g| g.dim < n && lat.contains(g.id, start_face))
        .map(|g| g.id)
        .collect();
    let mut face_drift: BTreeMap<FaceId, f64> = watched.iter().map(|&g| (g, 0.0)).collect();
    let mut trajectory = Vec::new();
    let mut x = x0.clone();
    let mut max_violation = p.violation(&x);
    if record {
        trajectory.push(TrajectoryPoint {
            t: t0,
            x: to_vec(&x),
            violation: max_violation,
        });
    }
    let (mut accepted, mut rejected) = (0, 0);
    let result = |x: &Vector, trajectory: Vec<TrajectoryPoint>, drift, viol, acc, rej| FlowResult {
        trajectory,
        final_point: to_vec(x),
        max_constraint_violation: viol,
        start_face,
        face_drift: drift,
        accepted_steps: acc,
        rejected_steps: rej,
    };
    if duration == 0.0 {
        return Ok(result(&x, trajectory, face_drift, max_violation, 0, 0));
    }

    let dir = duration.signum();
    let span = duration.abs();
    let max_step = (MAX_STEP_FRACTION * p.diameter()).max(1e-12);
    let min_step = 1e-14 * span.max(1.0);
    let mut h = span.min(max_step);
    let mut s = 0.0;
    let mut k: Vec<Vector> = Vec::with_capacity(7);
    let mut k1 = f(t0, &x);
    while s < span {
        if span - s < h {
            h = span - s;
        }
        k.clear();
        k.push(k1.clone());
        for stage in 1..7 {
            let mut y = x.clone();
            for (j, kj) in k.iter().enumerate() {
                let a = A[stage][j];
                if a != 0.0 {
                    y.axpy(dir * h * a, kj, 1.0);
                }
            }
            k.push(f(t0 + dir * (s + C[stage] * h), &y));
        }
        let mut x5 = x.clone();
        let mut err = Vector::zeros(n);
        for j in 0..7 {
            if B5[j] != 0.0 {
                x5.axpy(dir * h * B5[j], &k[j], 1.0);
            }
            err.axpy(dir * h * (B5[j] - B4[j]), &k[j], 1.0);
        }
        let ratio = err.amax() / tol;
        if ratio <= 1.0 {
            s += h;
            x = x5;
            k1 = k[6].clone();
            accepted += 1;
            let violation = p.violation(&x);
            max_violation = max_violation.max(violation);
            for (&g, d) in face_drift.iter_mut() {
                *d = d.max(lat.face(g).distance_to_affine_hull(&x));
            }
            if record {
                trajectory.push(TrajectoryPoint {
                    t: t0 + dir * s,
                    x: to_vec(&x),
                    violation,
                });
            }
            if violation > ESCAPE_FACTOR * tol {
                return Err(Error::ConstraintEscape {
                    t: t0 + dir * s,
                    violation,
                });
            }
        } else {
            rejected += 1;
        }
        let factor = if ratio == 0.0 {
            5.0
        } else if ratio.is_finite() {
            (0.9 * ratio.powf(-0.2)).clamp(0.2, 5.0)
        } else {
            0.2
        };
        h = (h * factor).min(max_step);
        if h < min_step && s < span {
            return Err(Error::StepFailure { t: t0 + dir * s });
        }
    }
    Ok(result(&x, trajectory, face_drift, max_violation, accepted, rejected))
}

/// Flow of a stratified field from `x0` for time `duration`.
pub fn integrate_flow(x: &StratifiedField, x0: &Vector, duration: f64, tol: f64) -> Result<FlowResult> {
    let f = x.field();
    integrate(x.base(), |_, y| f.eval(y), x0, 0.0, duration, tol, true)
}

/// `Evol(γ)(T)(x0)`: solve `η̇(t) = γ(t)(η(t))` on `[0, T]`.
pub fn integrate_time_dependent(
    p: &Polytope,
    gamma: &TimeDependentField,
    x0: &Vector,
    duration: f64,
    tol: f64,
) -> Result<FlowResult> {
    integrate(p, |t, y| gamma.eval(t, y), x0, 0.0, duration, tol, true)
}

fn flow_point(x: &StratifiedField, x0: &Vector, duration: f64, tol: f64) -> Result<Vector> {
    let f = x.field();
    integrate(x.base(), |_, y| f.eval(y), x0, 0.0, duration, tol, false).map(|r| r.final_vector())
}

/// A composition `e^{t_1 X_1} ∘ … ∘ e^{t_k X_k}`; the last generator acts first.
#[derive(Clone, Debug)]
pub struct DiffeoApprox {
    base: Polytope,
    generators: Vec<(StratifiedField, f64)>,
    tol: f64,
}

fn same_base(a: &Polytope, b: &Polytope) -> bool {
    a.vertices().len() == b.vertices().len()
        && a.dim() == b.dim()
        && a.vertices().iter().zip(b.vertices()).all(|(u, v)| (u - v).amax() <= 1e-12)
}

impl DiffeoApprox {
    pub fn identity(p: &Polytope) -> Self {
        DiffeoApprox {
            base: p.clone(),
            generators: Vec::new(),
            tol: DEFAULT_TOL,
        }
    }

    /// `e^{tX}`.
    pub fn flow(x: &StratifiedField, t: f64) -> Self {
        DiffeoApprox {
            base: x.base().clone(),
            generators: vec![(x.clone(), t)],
            tol: DEFAULT_TOL,
        }
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn base(&self) -> &Polytope {
        &self.base
    }

    pub fn generators(&self) -> &[(StratifiedField, f64)] {
        &self.generators
    }

    pub fn len(&self) -> usize {
        self.generators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.generators.is_empty()
    }

    pub fn eval(&self, x: &Vector) -> Result<Vector> {
        let mut y = x.clone();
        for (field, t) in self.generators.iter().rev() {
            y = flow_point(field, &y, *t, self.tol)?;
        }
        Ok(y)
    }

    /// `e^{-t_k X_k} ∘ … ∘ e^{-t_1 X_1}`.
    pub fn inverse(&self) -> Self {
        DiffeoApprox {
            base: self.base.clone(),
            generators: self.generators.iter().rev().map(|(f, t)| (f.clone(), -t)).collect(),
            tol: self.tol,
        }
    }
}

/// `e^X`.
pub fn exp_field(x: &StratifiedField) -> DiffeoApprox {
    DiffeoApprox::flow(x, 1.0)
}

/// `d1 ∘ d2`.
pub fn compose(d1: &DiffeoApprox, d2: &DiffeoApprox) -> Result<DiffeoApprox> {
    if !same_base(&d1.base, &d2.base) {
        return Err(Error::BaseMismatch);
    }
    let mut generators = d1.generators.clone();
    generators.extend(d2.generators.iter().cloned());
    Ok(DiffeoApprox {
        base: d1.base.clone(),
        generators,
        tol: d1.tol.min(d2.tol),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct FaceAudit {
    pub samples: usize,
    pub max_drift: f64,
    pub max_violation: f64,
    /// Samples whose flow left the polytope or failed to integrate.
    pub failures: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct FaceInvarianceReport {
    pub per_face: BTreeMap<FaceId, FaceAudit>,
    pub failing_faces: Vec<FaceId>,
    pub max_drift: f64,
    pub max_violation: f64,
    pub tol: f64,
    pub passed: bool,
}

/// Sampled check that `d` maps every face into its affine hull and `M` into `M`.
pub fn face_invariance_audit<R: Rng + ?Sized>(d: &DiffeoApprox, samples: usize, rng: &mut R) -> FaceInvarianceReport {
    let p = &d.base;
    let mut per_face = BTreeMap::new();
    for face in p.lattice().faces() {
        let count = if face.dim == 0 { 1 } else { samples };
        let mut audit = FaceAudit {
            samples: count,
            max_drift: 0.0,
            max_violation: 0.0,
            failures: 0,
        };
        for _ in 0..count {
            let x = p.sample_face(face.id, rng);
            match d.eval(&x) {
                Ok(y) => {
                    audit.max_drift = audit.max_drift.max(face.distance_to_affine_hull(&y));
                    audit.max_violation = audit.max_violation.max(p.violation(&y));
                }
                Err(_) => audit.failures += 1,
            }
        }
        per_face.insert(face.id, audit);
    }
    let failing_faces: Vec<FaceId> = per_face
        .iter()
        .filter(|(_, a)| a.failures > 0 || a.max_drift > INVARIANCE_TOL || a.max_violation > INVARIANCE_TOL)
        .map(|(&id, _)| id)
        .collect();
    FaceInvarianceReport {
        max_drift: per_face.values().map(|a| a.max_drift).fold(0.0, f64::max),
        max_violation: per_face.values().map(|a| a.max_violation).fold(0.0, f64::max),
        passed: failing_faces.is_empty(),
        failing_faces,
        per_face,
        tol: INVARIANCE_TOL,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundaryIdentityReport {
    pub boundary_sup_norm: f64,
    pub boundary_samples: usize,
    pub max_boundary_displacement: f64,
    pub interior_point: Vec<f64>,
    pub interior_image: Vec<f64>,
    pub interior_displacement: f64,
    pub tol: f64,
    pub passed: bool,
}

/// `e^X` for a field vanishing on `∂M`, audited on boundary samples and at
/// the centroid.
pub fn boundary_identity_flow<R: Rng + ?Sized>(
    p: &Polytope,
    x: &Field,
    samples: usize,
    rng: &mut R,
) -> Result<(DiffeoApprox, BoundaryIdentityReport)> {
    let boundary = p.boundary_samples(samples, rng);
    let sup = boundary.iter().map(|b| x.eval(b).amax()).fold(0.0, f64::max);
    if sup > VANISHING_TOL {
        return Err(Error::NotVanishing { sup_norm: sup });
    }
    let field = StratifiedField::new(p, x.clone(), 5, rng)?;
    let d = exp_field(&field);
    let mut max_disp: f64 = 0.0;
    for b in &boundary {
        max_disp = max_disp.max((d.eval(b)? - b).norm());
    }
    let c = p.centroid();
    let image = d.eval(&c)?;
    let report = BoundaryIdentityReport {
        boundary_sup_norm: sup,
        boundary_samples: boundary.len(),
        max_boundary_displacement: max_disp,
        interior_point: to_vec(&c),
        interior_displacement: (&image - &c).norm(),
        interior_image: to_vec(&image),
        tol: BOUNDARY_FIX_TOL,
        passed: max_disp <= BOUNDARY_FIX_TOL,
    };
    Ok((d, report))
}

#[derive(Clone, Debug, Serialize)]
pub struct ReachStep {
    pub generator: usize,
    /// `"constant"` or `"bump"`.
    pub scaling: String,
    pub duration: f64,
    pub residual: f64,
}

#[derive(Clone, Debug)]
pub struct ReachResult {
    pub diffeo: DiffeoApprox,
    pub residual: f64,
    pub evaluations: usize,
    pub steps: Vec<ReachStep>,
}

/// Longest flow time tried by the shooting search.
const SHOOT_SPAN: f64 = 20.0;
const SHOOT_GRID: usize = 17;
const GOLDEN_ITERS: usize = 60;

/// Golden-section search of `φ` on `[a, b]`, returning `(s, φ(s))`.
fn golden_section<F: FnMut(f64) -> f64>(mut phi: F, mut a: f64, mut b: f64, iters: usize) -> (f64, f64) {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (phi(c), phi(d));
    for _ in 0..iters {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = phi(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = phi(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Product of one-dimensional bumps centered at `c` with radius `rho` per coordinate.
fn coordinate_bump(c: &Vector, rho: f64) -> Field {
    let c = c.clone();
    Field::scalar(c.len(), move |x| x.iter().zip(c.iter()).map(|(xk, ck)| bump((xk - ck) / rho)).product())
}

/// Greedy shooting: repeatedly pick the generator `f·X` (with `f` a constant
/// or a coordinate bump around the current point) and the flow time that
/// bring the current point closest to `target`.
pub fn reach_target(
    p: &Polytope,
    generators: &[StratifiedField],
    start: &Vector,
    target: &Vector,
    budget: usize,
    residual_tol: f64,
) -> Result<ReachResult> {
    if p.generating_face(start)? != p.generating_face(target)? {
        return Err(Error::InvalidArgument("start and target must lie in the same open face".into()));
    }
    for g in generators {
        if !same_base(g.base(), p) {
            return Err(Error::BaseMismatch);
        }
    }
    let mut current = start.clone();
    let mut residual = (&current - target).norm();
    let mut diffeo = DiffeoApprox::identity(p);
    let mut steps = Vec::new();
    let mut evaluations = 0usize;
    let rho = 0.5 * p.diameter();
    while residual > residual_tol {
        let mut best: Option<(StratifiedField, usize, &str, f64, f64, Vector)> = None;
        for (gi, g) in generators.iter().enumerate() {
            for (label, field) in [
                ("constant", g.clone()),
                ("bump", g.multiplied_by(&coordinate_bump(&current, rho))),
            ] {
                if evaluations >= budget {
                    break;
                }
                let mut phi = |s: f64| -> f64 {
                    evaluations += 1;
                    match flow_point(&field, &current, s, DEFAULT_TOL) {
                        Ok(y) => (y - target).norm(),
                        Err(_) => f64::INFINITY,
                    }
                };
                let grid: Vec<f64> = (0..SHOOT_GRID)
                    .map(|k| -SHOOT_SPAN + 2.0 * SHOOT_SPAN * k as f64 / (SHOOT_GRID - 1) as f64)
                    .collect();
                let values: Vec<f64> = grid.iter().map(|&s| phi(s)).collect();
                let k = (0..grid.len()).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap_or(0);
                let lo = grid[k.saturating_sub(1)];
                let hi = grid[(k + 1).min(grid.len() - 1)];
                let (s, val) = golden_section(&mut phi, lo, hi, GOLDEN_ITERS);
                let (s, val) = if values[k] < val { (grid[k], values[k]) } else { (s, val) };
                if val < residual && best.as_ref().is_none_or(|b| val < b.4) {
                    let y = flow_point(&field, &current, s, DEFAULT_TOL)?;
                    best = Some((field.clone(), gi, label, s, val, y));
                }
            }
        }
        let Some((field, gi, label, s, val, y)) = best else {
            return Err(Error::BudgetExhausted { best_residual: residual });
        };
        if val > residual * (1.0 - 1e-9) {
            return Err(Error::BudgetExhausted { best_residual: residual });
        }
        diffeo = compose(&DiffeoApprox::flow(&field, s), &diffeo)?;
        current = y;
        residual = val;
        steps.push(ReachStep {
            generator: gi,
            scaling: label.to_string(),
            duration: s,
            residual,
        });
        if residual > residual_tol && evaluations >= budget {
            return Err(Error::BudgetExhausted { best_residual: residual });
        }
    }
    let residual = (diffeo.eval(start)? - target).norm();
    Ok(ReachResult {
        diffeo,
        residual,
        evaluations,
        steps,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct RankAudit {
    pub face_dim: usize,
    pub samples: usize,
    pub min_rank: usize,
    pub max_rank: usize,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct TransversalAudit {
    pub samples: usize,
    pub satisfied: usize,
    /// Smallest (over samples) of the best transversal derivative found.
    pub min_transversal: f64,
    pub worst_point: Vec<f64>,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ControlReport {
    pub generators: usize,
    /// Condition (I) proxy: rank of the generator values projected to `E_F`.
    pub rank: BTreeMap<FaceId, RankAudit>,
    pub condition_i: bool,
    /// Condition (II): per facet, keyed by face id.
    pub transversal: BTreeMap<FaceId, TransversalAudit>,
    pub condition_ii: bool,
}

/// Rank of `{X(x)}` projected onto the direction space of the generating face of `x`.
pub fn rank_at(p: &Polytope, generators: &[StratifiedField], x: &Vector) -> Result<usize> {
    let face = p.lattice().face(p.generating_face(x)?);
    if generators.is_empty() || face.dim == 0 {
        return Ok(0);
    }
    let basis = &face.affine_basis;
    let m = Matrix::from_columns(
        &generators
            .iter()
            .map(|g| basis.transpose() * g.eval(x))
            .collect::<Vec<_>>(),
    );
    Ok(crate::linalg::rank(&m, RANK_TOL))
}

/// Scalar multipliers used to search the module spanned by the generators.
fn coordinate_multipliers(n: usize) -> Vec<Field> {
    let mut out = vec![Field::scalar(n, |_| 1.0)];
    for k in 0..n {
        out.push(Field::scalar(n, move |x| x[k]));
        out.push(Field::scalar(n, move |x| 1.0 - x[k]));
    }
    out
}

/// Best transversal derivative at `x` on facet `j` over `f·X`, with `f`
/// ranging over coordinate multipliers and `X` over the generators; only
/// fields vanishing on the facet near `x` qualify.
fn best_transversal(p: &Polytope, generators: &[StratifiedField], j: usize, x: &Vector) -> f64 {
    let n = p.dim();
    let h = &p.halfspaces()[j];
    let face = p.lattice().face(p.lattice().facet_face(j));
    let nu = h.normal.clone();
    let step = 1e-6;
    let probe = 1e-3 * p.diameter();
    let nearby: Vec<Vector> = std::iter::once(x.clone())
        .chain((0..face.dim).flat_map(|k| {
            let e = face.affine_basis.column(k).into_owned();
            [x + &e * probe, x - &e * probe]
        }))
        .collect();
    let mut best: f64 = 0.0;
    for g in generators {
        for f in coordinate_multipliers(n) {
            let z = g.field().multiplied_by(&f);
            let vanishes = nearby.iter().all(|y| z.eval(y).amax() <= VANISHING_TOL);
            if !vanishes {
                continue;
            }
            let d = (z.eval(&(x + &nu * step)) - z.eval(x)) / step;
            best = best.max(d.dot(&nu).abs());
        }
    }
    best
}

/// Sampled check of the two controllability hypotheses.
pub fn control_conditions_audit<R: Rng + ?Sized>(
    p: &Polytope,
    generators: &[StratifiedField],
    samples: usize,
    rng: &mut R,
) -> Result<ControlReport> {
    let lat = p.lattice();
    let mut rank = BTreeMap::new();
    for face in lat.faces() {
        let count = if face.dim == 0 { 1 } else { samples };
        let (mut lo, mut hi) = (usize::MAX, 0);
        for _ in 0..count {
            let mut x = p.sample_face(face.id, rng);
            // Points along a short orbit of a random generator as well.
            let r = rank_at(p, generators, &x)?;
            lo = lo.min(r);
            hi = hi.max(r);
            if let Some(g) = (!generators.is_empty()).then(|| &generators[rng.random_range(0..generators.len())]) {
                let t = rng.random_range(-0.5..0.5);
                if let Ok(y) = flow_point(g, &x, t, DEFAULT_TOL) {
                    if p.generating_face(&y).ok() == Some(face.id) {
                        x = y;
                        let r = rank_at(p, generators, &x)?;
                        lo = lo.min(r);
                        hi = hi.max(r);
                    }
                }
            }
        }
        rank.insert(
            face.id,
            RankAudit {
                face_dim: face.dim,
                samples: count,
                min_rank: lo,
                max_rank: hi,
                passed: lo == face.dim,
            },
        );
    }
    let mut transversal = BTreeMap::new();
    for (j, _) in p.halfspaces().iter().enumerate() {
        let facet = lat.facet_face(j);
        let mut audit = TransversalAudit {
            samples,
            satisfied: 0,
            min_transversal: f64::INFINITY,
            worst_point: Vec::new(),
            passed: false,
        };
        for _ in 0..samples {
            let x = p.sample_face(facet, rng);
            let t = best_transversal(p, generators, j, &x);
            if t >= TRANSVERSAL_TOL {
                audit.satisfied += 1;
            }
            if t < audit.min_transversal {
                audit.min_transversal = t;
                audit.worst_point = to_vec(&x);
            }
        }
        audit.passed = samples > 0 && audit.satisfied == samples;
        transversal.insert(facet, audit);
    }
    Ok(ControlReport {
        generators: generators.len(),
        condition_i: rank.values().all(|r| r.passed),
        rank,
        condition_ii: transversal.values().all(|t| t.passed),
        transversal,
    })
}

/// Best transversal derivative found at a given point of facet `j`.
pub fn transversal_at(p: &Polytope, generators: &[StratifiedField], j: usize, x: &Vector) -> f64 {
    best_transversal(p, generators, j, x)
}

/// The closing-example generators on the unit square:
/// `Z_1 = (2y-1) x(1-x) ∂_x` and `Z_2 = y(y-1) ∂_y`.
pub fn square_generators(p: &Polytope) -> Result<(StratifiedField, StratifiedField)> {
    let mut rng = rand_pcg::Pcg64::new(0xcafe_f00d_d15e_a5e5, 0x0a02_bdbf_7bb3_c0a7);
    let z1 = Field::new(2, 2, |x| Vector::from_vec(vec![(2.0 * x[1] - 1.0) * x[0] * (1.0 - x[0]), 0.0]));
    let z2 = Field::new(2, 2, |x| Vector::from_vec(vec![0.0, x[1] * (x[1] - 1.0)]));
    Ok((
        StratifiedField::new(p, z1, 20, &mut rng)?,
        StratifiedField::new(p, z2, 20, &mut rng)?,
    ))
}

/// Closed-form flow of `y' = y(y-1)`.
pub fn logistic(y0: f64, t: f64) -> f64 {
    y0 / (y0 + (1.0 - y0) * t.exp())
}

/// Orthonormal basis of `{X(x)}` (used by reports that list spanned directions).
pub fn value_span(generators: &[StratifiedField], x: &Vector) -> Matrix {
    let values: Vec<Vector> = generators.iter().map(|g| g.eval(x)).collect();
    orthonormal_span(&values, x.len(), RANK_TOL)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use crate::stratified::random_stratified_field;
    use rand::SeedableRng;
    use rand_pcg::Pcg64;

    fn v(c: &[f64]) -> Vector {
        Vector::from_column_slice(c)
    }

    fn square() -> (Polytope, StratifiedField, StratifiedField) {
        let sq = catalog::polytope("square").unwrap();
        let (z1, z2) = square_generators(&sq).unwrap();
        (sq, z1, z2)
    }

    #[test]
    fn logistic_flow() {
        let (_, _, z2) = square();
        let r = integrate_flow(&z2, &v(&[0.3, 0.5]), 3f64.ln(), DEFAULT_TOL).unwrap();
        assert!((r.final_point[1] - 0.25).abs() < 1e-6);
        assert_eq!(r.final_point[0], 0.3);
        for &(y0, t) in &[(0.5, 1.0), (0.2, 0.7), (0.9, -0.4)] {
            let r = integrate_flow(&z2, &v(&[0.6, y0]), t, 1e-10).unwrap();
            assert!((r.final_point[1] - logistic(y0, t)).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_field_and_edge_invariance() {
        let (sq, _, z2) = square();
        let zero = StratifiedField::unchecked(&sq, Field::zero(2, 2));
        let r = integrate_flow(&zero, &v(&[0.2, 0.7]), 1.0, DEFAULT_TOL).unwrap();
        assert!(r.trajectory.iter().all(|p| p.x == vec![0.2, 0.7]));
        let r = integrate_flow(&z2, &v(&[0.3, 0.0]), 1.0, DEFAULT_TOL).unwrap();
        assert!(r.max_face_drift() <= 1e-9);
        assert_eq!(r.final_point, vec![0.3, 0.0]);
    }

    #[test]
    fn exp_compose_inverse() {
        let (sq, z1, z2) = square();
        let e = exp_field(&z2);
        for x in [0.1, 0.5, 0.9] {
            let y = e.eval(&v(&[x, 0.5])).unwrap();
            assert!((y[1] - 0.5 / (0.5 + 0.5 * std::f64::consts::E)).abs() < 1e-8);
        }
        let mut rng = Pcg64::seed_from_u64(1);
        let d = compose(&exp_field(&z1), &exp_field(&z2)).unwrap();
        let round = compose(&d, &d.inverse()).unwrap();
        let id = DiffeoApprox::identity(&sq);
        for _ in 0..50 {
            let x = sq.sample_interior(&mut rng);
            assert!((round.eval(&x).unwrap() - &x).norm() < 1e-6);
            assert!((compose(&id, &d).unwrap().eval(&x).unwrap() - d.eval(&x).unwrap()).norm() <= 1e-9);
        }
        let cube = catalog::polytope("cube3").unwrap();
        assert!(matches!(compose(&id, &DiffeoApprox::identity(&cube)), Err(Error::BaseMismatch)));
    }

    #[test]
    fn invariance_audits() {
        let (sq, z1, _) = square();
        let mut rng = Pcg64::seed_from_u64(2);
        assert!(face_invariance_audit(&exp_field(&z1), 20, &mut rng).passed);
        assert!(face_invariance_audit(&DiffeoApprox::identity(&sq), 20, &mut rng).passed);
        let push = StratifiedField::unchecked(&sq, Field::constant(2, v(&[1.0, 0.0])));
        let r = face_invariance_audit(&exp_field(&push), 20, &mut rng);
        assert!(!r.passed);
        for e in sq.lattice().faces_of_dim(1) {
            if e.affine_basis[(0, 0)].abs() < 1e-12 {
                assert!(r.failing_faces.contains(&e.id));
            }
        }
    }

    #[test]
    fn random_field_battery_keeps_faces() {
        let mut rng = Pcg64::seed_from_u64(3);
        for name in ["square", "simplex3", "dodecahedron"] {
            let p = catalog::polytope(name).unwrap();
            let f = random_stratified_field(&p, &mut rng);
            let x = StratifiedField::new(&p, f, 10, &mut rng).unwrap();
            for face in p.lattice().faces() {
                for _ in 0..3 {
                    let x0 = p.sample_face(face.id, &mut rng);
                    let r = integrate_flow(&x, &x0, 1.0, DEFAULT_TOL).unwrap();
                    assert!(r.max_face_drift() <= 1e-6 && r.max_constraint_violation <= 1e-6, "{name}");
                }
            }
        }
    }

    #[test]
    fn time_dependent_flow_matches_rescaled_time() {
        let (sq, _, z2) = square();
        // γ(t) = 2t·Z_2 has flow y(T) = logistic(y0, T²).
        let gamma = TimeDependentField::scaled_in_time(z2.field(), |t| 2.0 * t);
        let r = integrate_time_dependent(&sq, &gamma, &v(&[0.4, 0.3]), 1.2, 1e-10).unwrap();
        assert!((r.final_point[1] - logistic(0.3, 1.44)).abs() < 1e-8);
    }

    #[test]
    fn escape_is_reported() {
        let (sq, _, _) = square();
        let push = StratifiedField::unchecked(&sq, Field::constant(2, v(&[1.0, 0.0])));
        assert!(matches!(
            integrate_flow(&push, &v(&[0.5, 0.5]), 1.0, DEFAULT_TOL),
            Err(Error::ConstraintEscape { .. })
        ));
    }

    #[test]
    fn boundary_identity() {
        let (sq, _, z2) = square();
        let mut rng = Pcg64::seed_from_u64(4);
        let bumpy = Field::new(2, 2, |x| Vector::from_vec(vec![x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1]), 0.0]));
        let (_, r) = boundary_identity_flow(&sq, &bumpy, 200, &mut rng).unwrap();
        assert!(r.passed && r.max_boundary_displacement <= 1e-9);
        assert!(r.interior_image[0] > 0.5 + 1e-3);
        let (d, r) = boundary_identity_flow(&sq, &Field::zero(2, 2), 50, &mut rng).unwrap();
        assert!(r.passed && r.interior_displacement == 0.0);
        assert!(d.eval(&v(&[0.3, 0.3])).unwrap() == v(&[0.3, 0.3]));
        assert!(matches!(
            boundary_identity_flow(&sq, z2.field(), 200, &mut rng),
            Err(Error::NotVanishing { .. })
        ));
    }

    #[test]
    fn reachability_on_the_square() {
        let (sq, z1, z2) = square();
        let gens = [z1.clone(), z2];
        let r = reach_target(&sq, &gens, &v(&[0.3, 0.4]), &v(&[0.7, 0.6]), REACH_BUDGET, REACH_TOL).unwrap();
        assert!(r.residual <= 1e-3, "{}", r.residual);
        assert!(r.evaluations <= REACH_BUDGET);
        let same = reach_target(&sq, &gens, &v(&[0.3, 0.4]), &v(&[0.3, 0.4]), 10, REACH_TOL).unwrap();
        assert!(same.diffeo.is_empty() && same.residual == 0.0);
        let edge = reach_target(&sq, &[z1], &v(&[0.3, 0.0]), &v(&[0.6, 0.0]), REACH_BUDGET, REACH_TOL).unwrap();
        assert!(edge.residual <= 1e-3);
        assert!(reach_target(&sq, &gens, &v(&[0.3, 0.0]), &v(&[0.6, 0.5]), 10, REACH_TOL).is_err());
    }

    #[test]
    fn control_conditions_on_the_square() {
        let (sq, z1, z2) = square();
        let mut rng = Pcg64::seed_from_u64(5);
        let both = [z1.clone(), z2.clone()];
        let r = control_conditions_audit(&sq, &both, 20, &mut rng).unwrap();
        assert!(r.condition_ii, "{r:?}");
        assert!(r.condition_i);
        assert_eq!(rank_at(&sq, &both, &v(&[0.3, 0.5])).unwrap(), 1);
        assert_eq!(rank_at(&sq, &both, &v(&[0.3, 0.65])).unwrap(), 2);

        let only = [z2];
        let r = control_conditions_audit(&sq, &only, 20, &mut rng).unwrap();
        assert!(!r.condition_ii && !r.condition_i);
        let top = sq.lattice().top().id;
        assert_eq!(r.rank[&top].max_rank, 1);
        for (id, t) in &r.transversal {
            let vertical = sq.lattice().face(*id).affine_basis[(0, 0)].abs() < 1e-12;
            assert_eq!(t.passed, !vertical);
        }

        let r = control_conditions_audit(&sq, &[], 5, &mut rng).unwrap();
        assert!(!r.condition_i && !r.condition_ii);
    }
}
