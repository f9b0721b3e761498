//! Extension of face data to the whole polytope.
//!
//! Locally, on a half-open cube `[0,1)^i × Q` with `Q = (-1,1)^(n-i)`, data
//! on the walls `F_{i,k} = {x_k = 0}` is extended by the inclusion–exclusion
//! operator `Φ_i`. Globally, facet data is pulled into standard charts,
//! extended there and glued with a smooth partition of unity (`σ`); data on
//! lower-dimensional faces is extended face by face, one dimension at a time.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_pcg::Pcg64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::Field;
use crate::linalg::{to_vec, Vector};
use crate::polytope::{FaceId, Polytope};
use crate::simplicity::{is_simple, standard_chart, StandardChart};

/// Agreement tolerance on face intersections, scaled by `max(1, |value|)`.
pub const COMPATIBILITY_TOL: f64 = 1e-9;
/// Minimal raw bump sum accepted at cover test points.
pub const COVER_THRESHOLD: f64 = 0.05;
/// Step of the smoothness probe.
pub const PROBE_STEP: f64 = 1e-4;

const MAX_CHARTS: usize = 20_000;
const COMPATIBILITY_SAMPLES: usize = 25;
const INTERNAL_SEED: u64 = 0x5eed_c0de;

/// `θ_{i,S}`: zero the coordinates listed in `s` (zero-based, all `< i`).
pub fn theta(i: usize, s: &[usize], point: &Vector) -> Vector {
    let mut y = point.clone();
    for &k in s {
        assert!(k < i, "θ only zeroes cube coordinates");
        y[k] = 0.0;
    }
    y
}

/// Evaluate `Φ_i` at `w` given a wall evaluator `wall(k, y)` for `y ∈ F_{i,k} × Q`.
fn phi_eval<F>(i: usize, m: usize, w: &Vector, mut wall: F) -> Vector
where
    F: FnMut(usize, &Vector) -> Vector,
{
    let mut acc = Vector::zeros(m);
    let mut y = w.clone();
    for mask in 1u32..(1u32 << i) {
        for k in 0..i {
            y[k] = if mask & (1 << k) != 0 { 0.0 } else { w[k] };
        }
        let k = mask.trailing_zeros() as usize;
        let v = wall(k, &y);
        if mask.count_ones() % 2 == 1 {
            acc += v;
        } else {
            acc -= v;
        }
    }
    acc
}

/// Data `(f_1, …, f_i)` on the walls of `[0,1)^i × (-1,1)^q`; component `k`
/// is evaluated only at points with `x_k = 0`.
#[derive(Clone, Debug)]
pub struct CubeFamily {
    pub i: usize,
    pub q_dim: usize,
    pub components: Vec<Field>,
}

impl CubeFamily {
    pub fn new(i: usize, q_dim: usize, components: Vec<Field>) -> Result<Self> {
        if i == 0 || components.len() != i {
            return Err(Error::InvalidArgument(format!(
                "a cube family needs i >= 1 components, got i = {i} with {}",
                components.len()
            )));
        }
        let m = components[0].codomain_dim();
        if components
            .iter()
            .any(|c| c.domain_dim() != i + q_dim || c.codomain_dim() != m)
        {
            return Err(Error::InvalidArgument("cube family components have mismatched dimensions".into()));
        }
        Ok(CubeFamily { i, q_dim, components })
    }

    pub fn dim(&self) -> usize {
        self.i + self.q_dim
    }

    pub fn codomain_dim(&self) -> usize {
        self.components[0].codomain_dim()
    }

    /// Random point of `[0,1)^i × (-1,1)^q`.
    pub fn sample_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector {
        Vector::from_fn(self.dim(), |k, _| {
            if k < self.i {
                rng.random_range(0.0..1.0)
            } else {
                rng.random_range(-1.0..1.0)
            }
        })
    }

    /// Largest disagreement `|f_k - f_l|` at sampled points of `F_{i,k} ∩ F_{i,l}`.
    pub fn check_compatibility<R: Rng + ?Sized>(&self, samples: usize, rng: &mut R) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for k in 0..self.i {
            for l in k + 1..self.i {
                for _ in 0..samples {
                    let x = theta(self.i, &[k, l], &self.sample_point(rng));
                    let a = self.components[k].eval(&x);
                    let b = self.components[l].eval(&x);
                    let d = (&a - &b).amax();
                    worst = worst.max(d);
                    if d > COMPATIBILITY_TOL * a.amax().max(1.0) {
                        return Err(Error::IncompatibleFamily {
                            faces: (k, l),
                            point: to_vec(&x),
                            discrepancy: d,
                        });
                    }
                }
            }
        }
        Ok(worst)
    }

    /// Family of the slices `f_k(·, t, ·)` with cube coordinate `i-1` frozen at `t`.
    fn frozen_last(&self, t: f64) -> CubeFamily {
        let i = self.i;
        let comps = self.components[..i - 1]
            .iter()
            .map(|f| {
                f.compose(self.dim() - 1, move |y: &Vector| {
                    let mut x = Vector::zeros(y.len() + 1);
                    for k in 0..i - 1 {
                        x[k] = y[k];
                    }
                    x[i - 1] = t;
                    for k in i - 1..y.len() {
                        x[k + 1] = y[k];
                    }
                    x
                })
            })
            .collect();
        CubeFamily {
            i: i - 1,
            q_dim: self.q_dim,
            components: comps,
        }
    }
}

/// `Φ_i(f)` without the compatibility pre-check.
pub fn local_extend_unchecked(family: &CubeFamily) -> Field {
    let fam = family.clone();
    let (i, m) = (family.i, family.codomain_dim());
    Field::new(family.dim(), m, move |w| phi_eval(i, m, w, |k, y| fam.components[k].eval(y)))
}

/// `Φ_i(f)(x,q) = Σ_{S ≠ ∅} (-1)^{|S|-1} f_{min S}(θ_{i,S}(x,q))`.
pub fn local_extend(family: &CubeFamily) -> Result<Field> {
    let mut rng = Pcg64::seed_from_u64(INTERNAL_SEED);
    family.check_compatibility(COMPATIBILITY_SAMPLES, &mut rng)?;
    Ok(local_extend_unchecked(family))
}

/// `ρ_i(f) = (f|_{F_{i,k} × Q})_k`.
pub fn local_restrict(f: &Field, i: usize) -> CubeFamily {
    let dim = f.domain_dim();
    assert!(i >= 1 && i <= dim, "restriction needs 1 <= i <= dim");
    let components = (0..i)
        .map(|k| f.compose(dim, move |x: &Vector| theta(i, &[k], x)))
        .collect();
    CubeFamily {
        i,
        q_dim: dim - i,
        components,
    }
}

/// Right-hand side of the recursion identity for `Φ_i`, `i >= 2`:
/// `Φ_{i-1}(f(·,x_i,·))(x',q) + f_i(x',0,q) - Φ_{i-1}(f(·,0,·))(x',q)`.
pub fn recursion_identity_rhs(family: &CubeFamily, point: &Vector) -> Vector {
    let i = family.i;
    assert!(i >= 2, "the recursion identity needs i >= 2");
    let drop_last = |x: &Vector| {
        Vector::from_iterator(
            x.len() - 1,
            x.iter().enumerate().filter(|(k, _)| *k != i - 1).map(|(_, v)| *v),
        )
    };
    let reduced = drop_last(point);
    let at_x = local_extend_unchecked(&family.frozen_last(point[i - 1])).eval(&reduced);
    let at_0 = local_extend_unchecked(&family.frozen_last(0.0)).eval(&reduced);
    let wall = family.components[i - 1].eval(&theta(i, &[i - 1], point));
    at_x + wall - at_0
}

/// Smooth mollifier profile `exp(1 - 1/(1 - r²))` on `|r| < 1`, zero outside.
pub fn bump(r: f64) -> f64 {
    let s = 1.0 - r * r;
    if s <= 0.0 {
        0.0
    } else {
        (1.0 - 1.0 / s).exp()
    }
}

/// Unnormalized bump of a chart: the product of `bump(w_k)` over the chart
/// coordinates `w = κ(x)`. Its support is the closed chart cube.
pub fn chart_bump(chart: &StandardChart, x: &Vector) -> f64 {
    let w = chart.apply(x);
    let mut b = 1.0;
    for &c in w.iter() {
        b *= bump(c);
        if b == 0.0 {
            break;
        }
    }
    b
}

/// Charts bucketed on a uniform grid by their bounding boxes, so that only
/// charts near a point are examined.
#[derive(Clone, Debug)]
struct ChartIndex {
    charts: Vec<StandardChart>,
    balls: Vec<(Vector, f64)>,
    cell: f64,
    cells: HashMap<Vec<i64>, Vec<usize>>,
}

impl ChartIndex {
    fn new(p: &Polytope) -> Self {
        let divisions = if p.dim() >= 4 { 8.0 } else { 16.0 };
        ChartIndex {
            charts: Vec::new(),
            balls: Vec::new(),
            cell: (p.diameter() / divisions).max(1e-12),
            cells: HashMap::new(),
        }
    }

    fn key(&self, x: &Vector) -> Vec<i64> {
        x.iter().map(|c| (c / self.cell).floor() as i64).collect()
    }

    fn push(&mut self, c: StandardChart) {
        let n = c.dim();
        let radius = c.inverse_linear().norm() * (n as f64).sqrt() * (1.0 + 1e-9);
        let lo = self.key(&c.base_point.add_scalar(-radius));
        let hi = self.key(&c.base_point.add_scalar(radius));
        let id = self.charts.len();
        let mut key = lo.clone();
        'cells: loop {
            self.cells.entry(key.clone()).or_default().push(id);
            for k in 0..n {
                if key[k] < hi[k] {
                    key[k] += 1;
                    continue 'cells;
                }
                key[k] = lo[k];
            }
            break;
        }
        self.balls.push((c.base_point.clone(), radius));
        self.charts.push(c);
    }

    /// `(chart index, raw bump)` for charts whose bump is positive at `x`.
    fn bumps(&self, x: &Vector) -> Vec<(usize, f64)> {
        let Some(ids) = self.cells.get(&self.key(x)) else {
            return Vec::new();
        };
        ids.iter()
            .filter(|&&k| (x - &self.balls[k].0).norm() <= self.balls[k].1)
            .map(|&k| (k, chart_bump(&self.charts[k], x)))
            .filter(|(_, b)| *b > 0.0)
            .collect()
    }

    fn sum(&self, x: &Vector) -> f64 {
        self.bumps(x).iter().map(|(_, b)| b).sum()
    }
}

/// Standard charts with bumps `h_z = b_z / Σ b`.
#[derive(Clone, Debug)]
pub struct PartitionOfUnity {
    index: ChartIndex,
    min_weight_sum: f64,
    test_points: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct PartitionReport {
    pub charts: usize,
    pub samples: usize,
    pub max_sum_error: f64,
    pub min_raw_sum: f64,
    pub passed: bool,
}

impl PartitionOfUnity {
    /// Wrap a chart list after checking it covers the polytope's test points.
    pub fn from_charts(p: &Polytope, charts: Vec<StandardChart>) -> Result<Self> {
        let pts = cover_test_points(p);
        let mut index = ChartIndex::new(p);
        for c in charts {
            index.push(c);
        }
        let mut min_weight_sum = f64::INFINITY;
        for x in &pts {
            let s = index.sum(x);
            if s < COVER_THRESHOLD {
                return Err(Error::CoverFailure {
                    point: to_vec(x),
                    min_sum: s,
                });
            }
            min_weight_sum = min_weight_sum.min(s);
        }
        Ok(PartitionOfUnity {
            index,
            min_weight_sum,
            test_points: pts.len(),
        })
    }

    pub fn charts(&self) -> &[StandardChart] {
        &self.index.charts
    }

    pub fn len(&self) -> usize {
        self.index.charts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.charts.is_empty()
    }

    /// Smallest raw bump sum over the cover test points.
    pub fn min_weight_sum(&self) -> f64 {
        self.min_weight_sum
    }

    pub fn test_point_count(&self) -> usize {
        self.test_points
    }

    pub fn weight_sum(&self, x: &Vector) -> f64 {
        self.index.sum(x)
    }

    /// Non-zero normalized weights `(chart index, h_z(x))`; empty off the cover.
    pub fn weights(&self, x: &Vector) -> Vec<(usize, f64)> {
        let raw = self.index.bumps(x);
        let total: f64 = raw.iter().map(|(_, b)| b).sum();
        if total == 0.0 {
            return Vec::new();
        }
        raw.into_iter().map(|(k, b)| (k, b / total)).collect()
    }

    /// The bump `h_k` as a scalar field.
    pub fn bump_field(&self, k: usize) -> Field {
        let pou = self.clone();
        let n = self.charts()[k].dim();
        Field::scalar(n, move |x| {
            pou.weights(x)
                .into_iter()
                .find(|(j, _)| *j == k)
                .map_or(0.0, |(_, w)| w)
        })
    }

    /// Sampled check that the bumps sum to one on the polytope.
    pub fn audit<R: Rng + ?Sized>(&self, p: &Polytope, samples: usize, rng: &mut R) -> PartitionReport {
        let mut max_sum_error: f64 = 0.0;
        let mut min_raw_sum = f64::INFINITY;
        let boundary = p.boundary_samples(samples / 2, rng);
        let interior: Vec<Vector> = (0..samples - boundary.len()).map(|_| p.sample_interior(rng)).collect();
        for x in boundary.iter().chain(&interior) {
            let total: f64 = self.weights(x).iter().map(|(_, w)| w).sum();
            max_sum_error = max_sum_error.max((total - 1.0).abs());
            min_raw_sum = min_raw_sum.min(self.weight_sum(x));
        }
        PartitionReport {
            charts: self.len(),
            samples,
            max_sum_error,
            min_raw_sum,
            passed: max_sum_error <= 1e-9 && min_raw_sum > 0.0,
        }
    }

    /// Points of the polytope on the edge of some chart's bump support,
    /// where gluing seams would show up.
    pub fn seam_points<R: Rng + ?Sized>(&self, p: &Polytope, count: usize, rng: &mut R) -> Vec<Vector> {
        let mut out = Vec::new();
        let mut attempts = 0;
        let charts = self.charts();
        while out.len() < count && attempts < 100 * count.max(1) && !charts.is_empty() {
            attempts += 1;
            let c = &charts[rng.random_range(0..charts.len())];
            let n = c.dim();
            if n == 0 {
                break;
            }
            let mut w = Vector::from_fn(n, |k, _| {
                if k < c.index {
                    rng.random_range(0.0..1.0)
                } else {
                    rng.random_range(-1.0..1.0)
                }
            });
            let k = rng.random_range(0..n);
            w[k] = if k < c.index || rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let x = c.apply_inverse(&w);
            if p.contains(&x, 0.0) {
                out.push(x);
            }
        }
        out
    }
}

/// Deterministic points used to certify a cover: the vertices, samples of
/// every face, points pushed from each face into the faces covering it, and
/// a grid over the bounding box.
fn cover_test_points(p: &Polytope) -> Vec<Vector> {
    let n = p.dim();
    let lat = p.lattice();
    let mut rng = Pcg64::seed_from_u64(INTERNAL_SEED);
    let mut pts: Vec<Vector> = p.vertices().to_vec();
    if n == 0 {
        return pts;
    }
    for f in lat.faces() {
        let count = 4 << f.dim.min(4);
        for _ in 0..count {
            pts.push(p.sample_face(f.id, &mut rng));
        }
        for &g in lat.covers(f.id) {
            for _ in 0..3 {
                let y = p.sample_face(f.id, &mut rng);
                let z = p.sample_face(g, &mut rng);
                for t in [1e-4, 1e-2, 0.05, 0.15, 0.35] {
                    pts.push(&y + (&z - &y) * t);
                }
            }
        }
    }
    let per_axis: usize = match n {
        1 => 65,
        2 => 33,
        3 => 17,
        _ => 9,
    };
    let lo = Vector::from_fn(n, |k, _| p.vertices().iter().map(|v| v[k]).fold(f64::INFINITY, f64::min));
    let hi = Vector::from_fn(n, |k, _| p.vertices().iter().map(|v| v[k]).fold(f64::NEG_INFINITY, f64::max));
    let total = per_axis.pow(n as u32);
    for idx in 0..total {
        let mut rem = idx;
        let x = Vector::from_fn(n, |k, _| {
            let j = rem % per_axis;
            rem /= per_axis;
            lo[k] + (hi[k] - lo[k]) * j as f64 / (per_axis - 1) as f64
        });
        if p.contains(&x, 0.0) {
            pts.push(x);
        }
    }
    pts
}

/// Points of a chart domain where its bump fades: one coordinate at `±0.9`,
/// the others on a coarse grid.
fn frontier_points(chart: &StandardChart) -> Vec<Vector> {
    let n = chart.dim();
    let (free, wall): (&[f64], &[f64]) = if n <= 3 {
        (&[-0.6, 0.0, 0.6], &[0.0, 0.45, 0.9])
    } else {
        (&[-0.5, 0.5], &[0.0, 0.7])
    };
    let per = free.len();
    let mut out = Vec::new();
    for k in 0..n {
        let signs: &[f64] = if k < chart.index { &[1.0] } else { &[1.0, -1.0] };
        for &sign in signs {
            for idx in 0..per.pow(n as u32 - 1) {
                let mut rem = idx;
                let w = Vector::from_fn(n, |j, _| {
                    if j == k {
                        return 0.9 * sign;
                    }
                    let g = rem % per;
                    rem /= per;
                    if j < chart.index {
                        wall[g]
                    } else {
                        free[g]
                    }
                });
                out.push(chart.apply_inverse(&w));
            }
        }
    }
    out
}

/// Chart for an uncovered point. Candidates are centred on the projection of
/// `x` onto each face whose algebraic interior it lands in, and on points
/// between that projection and the face's barycenter; the widest candidate
/// in which `x` keeps bump weight at least 1/2 wins. The chart centred at
/// `x` itself always qualifies.
fn chart_for_point(p: &Polytope, x: &Vector) -> Result<StandardChart> {
    let mut best: Option<StandardChart> = None;
    for f in p.lattice().faces() {
        let proj = if f.dim == 0 {
            f.origin.clone()
        } else {
            &f.origin + &f.affine_basis * (f.affine_basis.transpose() * (x - &f.origin))
        };
        if !matches!(p.generating_face(&proj), Ok(g) if g == f.id) {
            continue;
        }
        for t in [0.0, 0.15, 0.3, 0.5, 0.7] {
            let c0 = &proj + (&f.relative_interior_point - &proj) * t;
            let Ok(c) = standard_chart(p, &c0) else { continue };
            if chart_bump(&c, x) < 0.5 {
                continue;
            }
            if best.as_ref().is_none_or(|b| c.epsilon > b.epsilon) {
                best = Some(c);
            }
        }
    }
    match best {
        Some(c) => Ok(c),
        None => standard_chart(p, x),
    }
}

/// Cover `M` by standard charts centred at every face's barycenter, then add
/// charts until every test point has bump sum at least [`COVER_THRESHOLD`].
/// Test points start from a fixed set and grow with the fading rim of each
/// chart, so gaps next to new charts are found and filled too.
pub fn build_partition_of_unity(p: &Polytope) -> Result<PartitionOfUnity> {
    if !is_simple(p).is_simple {
        return Err(Error::NotSimple("partitions of unity need standard charts".into()));
    }
    let mut index = ChartIndex::new(p);
    let mut queue: VecDeque<Vector> = cover_test_points(p).into();
    for f in p.lattice().faces() {
        let c = standard_chart(p, &f.relative_interior_point)?;
        queue.extend(frontier_points(&c));
        index.push(c);
    }
    let mut checked = 0usize;
    let mut min_weight_sum = f64::INFINITY;
    while let Some(x) = queue.pop_front() {
        checked += 1;
        let s = index.sum(&x);
        if s >= COVER_THRESHOLD {
            min_weight_sum = min_weight_sum.min(s);
            continue;
        }
        let c = chart_for_point(p, &x)?;
        queue.extend(frontier_points(&c));
        index.push(c);
        min_weight_sum = min_weight_sum.min(index.sum(&x));
        if index.charts.len() > MAX_CHARTS {
            return Err(Error::CoverFailure {
                point: to_vec(&x),
                min_sum: s,
            });
        }
    }
    Ok(PartitionOfUnity {
        index,
        min_weight_sum,
        test_points: checked,
    })
}

/// One field per `ℓ`-face, each a function of the polytope's coordinates
/// (evaluated only on its face).
#[derive(Clone, Debug)]
pub struct CompatibleFamily {
    pub ell: usize,
    pub fields: BTreeMap<FaceId, Field>,
}

impl CompatibleFamily {
    /// Checks that the keys are exactly the `ℓ`-faces and the field shapes agree.
    pub fn new(p: &Polytope, ell: usize, fields: BTreeMap<FaceId, Field>) -> Result<Self> {
        let expected: Vec<FaceId> = p.lattice().faces_of_dim(ell).map(|f| f.id).collect();
        let given: Vec<FaceId> = fields.keys().copied().collect();
        if expected != given {
            return Err(Error::InvalidArgument(format!(
                "family must assign a field to each {ell}-face {expected:?}, got {given:?}"
            )));
        }
        let mut shapes = fields.values().map(|f| (f.domain_dim(), f.codomain_dim()));
        if let Some(first) = shapes.next() {
            if first.0 != p.dim() || shapes.any(|s| s != first) {
                return Err(Error::InvalidArgument("family fields have mismatched dimensions".into()));
            }
        }
        Ok(CompatibleFamily { ell, fields })
    }

    /// `r(g)`: the restrictions of a global field to every `ℓ`-face.
    pub fn restrict(p: &Polytope, ell: usize, g: &Field) -> Self {
        let fields = p
            .lattice()
            .faces_of_dim(ell)
            .map(|f| (f.id, g.clone()))
            .collect();
        CompatibleFamily { ell, fields }
    }

    pub fn zero(p: &Polytope, ell: usize, codomain_dim: usize) -> Self {
        Self::restrict(p, ell, &Field::zero(p.dim(), codomain_dim))
    }

    pub fn codomain_dim(&self) -> usize {
        self.fields.values().next().map_or(0, |f| f.codomain_dim())
    }

    /// Face-wise `a·self + b·other`.
    pub fn linear_combination(&self, a: f64, other: &CompatibleFamily, b: f64) -> Self {
        let fields = self
            .fields
            .iter()
            .map(|(id, f)| (*id, f.linear_combination(a, &other.fields[id], b)))
            .collect();
        CompatibleFamily { ell: self.ell, fields }
    }

    /// Largest disagreement on sampled points of pairwise face intersections.
    pub fn check_compatibility<R: Rng + ?Sized>(
        &self,
        p: &Polytope,
        samples: usize,
        rng: &mut R,
    ) -> Result<f64> {
        let lat = p.lattice();
        let ids: Vec<FaceId> = self.fields.keys().copied().collect();
        let mut worst: f64 = 0.0;
        for (a, &fa) in ids.iter().enumerate() {
            for &fb in &ids[a + 1..] {
                let Some(h) = lat.intersection(fa, fb) else { continue };
                let count = if lat.face(h).dim == 0 { 1 } else { samples };
                for _ in 0..count {
                    let x = p.sample_face(h, rng);
                    let u = self.fields[&fa].eval(&x);
                    let v = self.fields[&fb].eval(&x);
                    let d = (&u - &v).amax();
                    worst = worst.max(d);
                    if d > COMPATIBILITY_TOL * u.amax().max(1.0) {
                        return Err(Error::IncompatibleFamily {
                            faces: (fa, fb),
                            point: to_vec(&x),
                            discrepancy: d,
                        });
                    }
                }
            }
        }
        Ok(worst)
    }

    /// Largest `|σ(f)(x) - f_F(x)|` over sampled points of every face `F`.
    pub fn restriction_error<R: Rng + ?Sized>(
        &self,
        p: &Polytope,
        extended: &Field,
        samples: usize,
        rng: &mut R,
    ) -> f64 {
        let mut worst: f64 = 0.0;
        let ids: Vec<FaceId> = self.fields.keys().copied().collect();
        for k in 0..samples {
            let id = ids[k % ids.len()];
            let x = p.sample_face(id, rng);
            worst = worst.max((extended.eval(&x) - self.fields[&id].eval(&x)).amax());
        }
        worst
    }
}

/// Facet extension `σ` on one polytope, with the partition of unity prebuilt.
#[derive(Clone, Debug)]
struct FacetExtender {
    pou: Arc<PartitionOfUnity>,
    /// Facet face ids of each chart, in wall order.
    walls: Arc<Vec<Vec<FaceId>>>,
}

impl FacetExtender {
    fn new(p: &Polytope) -> Result<Self> {
        let pou = build_partition_of_unity(p)?;
        let walls = pou
            .charts()
            .iter()
            .map(|c| c.facet_map.iter().map(|&j| p.lattice().facet_face(j)).collect())
            .collect();
        Ok(FacetExtender {
            pou: Arc::new(pou),
            walls: Arc::new(walls),
        })
    }

    /// `σ(f) = Σ_{z : i(z) > 0} h_z · (Φ_{i(z)}(Ξ_z f) ∘ κ_z)`.
    fn extend(&self, dim: usize, codomain_dim: usize, facets: Arc<BTreeMap<FaceId, Field>>) -> Field {
        let pou = Arc::clone(&self.pou);
        let walls = Arc::clone(&self.walls);
        let m = codomain_dim;
        Field::new(dim, m, move |x| {
            let mut acc = Vector::zeros(m);
            for (k, h) in pou.weights(x) {
                let chart = &pou.charts()[k];
                if chart.index == 0 {
                    continue;
                }
                let w = chart.apply(x);
                let wall_faces = &walls[k];
                let local = phi_eval(chart.index, m, &w, |j, y| {
                    facets[&wall_faces[j]].eval(&chart.apply_inverse(y))
                });
                acc.axpy(h, &local, 1.0);
            }
            acc
        })
    }
}

/// One face `N` of dimension `ℓ + 1` with its own facet extender.
#[derive(Clone, Debug)]
struct FaceStage {
    face: FaceId,
    /// `None` when `N` is the polytope itself.
    sub: Option<Polytope>,
    extender: FacetExtender,
    /// Parent `ℓ`-face id of each facet face of `N`, keyed by `N`'s facet face id.
    facet_parent: BTreeMap<FaceId, FaceId>,
}

/// Precomputed `σ_{M,ℓ}`: partitions of unity for every face of dimension
/// above `ℓ`, so many families can be extended cheaply.
#[derive(Clone, Debug)]
pub struct ExtensionOperator {
    polytope: Polytope,
    ell: usize,
    levels: Vec<Vec<FaceStage>>,
}

impl ExtensionOperator {
    pub fn new(p: &Polytope, ell: usize) -> Result<Self> {
        let n = p.dim();
        if ell >= n {
            return Err(Error::InvalidArgument(format!(
                "face dimension {ell} must be below the polytope dimension {n}"
            )));
        }
        let lat = p.lattice();
        let mut levels = Vec::new();
        for d in ell + 1..=n {
            let mut stages = Vec::new();
            for f in lat.faces_of_dim(d) {
                let (sub, extender, facet_parent) = if d == n {
                    let ext = FacetExtender::new(p)?;
                    let map = lat.faces_of_dim(n - 1).map(|g| (g.id, g.id)).collect();
                    (None, ext, map)
                } else {
                    let sub = p.face_polytope(f.id)?;
                    let ext = FacetExtender::new(&sub)?;
                    let corr = p.vertex_correspondence(&sub);
                    let mut map = BTreeMap::new();
                    for g in sub.lattice().faces_of_dim(d - 1) {
                        let mut ids: Vec<usize> = g.vertex_ids.iter().map(|&v| corr[v]).collect();
                        ids.sort_unstable();
                        let parent = lat.by_vertex_set(&ids).ok_or_else(|| {
                            Error::DegenerateNumerics("face of a face is missing from the lattice".into())
                        })?;
                        map.insert(g.id, parent);
                    }
                    (Some(sub), ext, map)
                };
                stages.push(FaceStage {
                    face: f.id,
                    sub,
                    extender,
                    facet_parent,
                });
            }
            levels.push(stages);
        }
        Ok(ExtensionOperator {
            polytope: p.clone(),
            ell,
            levels,
        })
    }

    pub fn ell(&self) -> usize {
        self.ell
    }

    /// Chart counts of the partition of unity on each face, keyed by face id.
    pub fn chart_counts(&self) -> BTreeMap<FaceId, usize> {
        self.levels
            .iter()
            .flatten()
            .map(|s| (s.face, s.extender.pou.len()))
            .collect()
    }

    /// The partition of unity used on the whole polytope.
    pub fn partition(&self) -> &PartitionOfUnity {
        &self.levels.last().expect("at least one level")[0].extender.pou
    }

    /// Extend a compatible family on the `ℓ`-faces to the whole polytope.
    pub fn apply(&self, family: &CompatibleFamily) -> Result<Field> {
        let p = &self.polytope;
        if family.ell != self.ell {
            return Err(Error::InvalidArgument(format!(
                "operator extends {}-face data, family lives on {}-faces",
                self.ell, family.ell
            )));
        }
        let family = CompatibleFamily::new(p, family.ell, family.fields.clone())?;
        let mut rng = Pcg64::seed_from_u64(INTERNAL_SEED);
        family.check_compatibility(p, COMPATIBILITY_SAMPLES, &mut rng)?;
        let m = family.codomain_dim();
        let n = p.dim();

        let mut current = family.fields;
        let last = self.levels.len() - 1;
        for (depth, stages) in self.levels.iter().enumerate() {
            let mut next = BTreeMap::new();
            for stage in stages {
                let field = match &stage.sub {
                    None => stage.extender.extend(n, m, Arc::new(current.clone())),
                    Some(sub) => {
                        let d = sub.dim();
                        let local: BTreeMap<FaceId, Field> = stage
                            .facet_parent
                            .iter()
                            .map(|(&g, parent)| {
                                let sub_c = sub.clone();
                                (g, current[parent].compose(d, move |y| sub_c.from_chart(y)))
                            })
                            .collect();
                        let inner = stage.extender.extend(d, m, Arc::new(local));
                        let sub_c = sub.clone();
                        inner.compose(n, move |x| sub_c.to_chart(x))
                    }
                };
                next.insert(stage.face, field);
            }
            let glued = CompatibleFamily {
                ell: self.ell + depth + 1,
                fields: next,
            };
            if depth < last {
                glued.check_compatibility(p, COMPATIBILITY_SAMPLES, &mut rng)?;
            }
            current = glued.fields;
        }
        Ok(current
            .into_values()
            .next()
            .expect("the top level has exactly one face"))
    }
}

/// `σ` for facet data (`ℓ = n - 1`).
pub fn facet_extend(p: &Polytope, family: &CompatibleFamily) -> Result<Field> {
    if p.dim() == 0 || family.ell + 1 != p.dim() {
        return Err(Error::InvalidArgument("facet extension needs a family on the facets".into()));
    }
    ExtensionOperator::new(p, family.ell)?.apply(family)
}

/// `σ_{M,ℓ}`: extend `ℓ`-face data through faces of increasing dimension.
pub fn ell_extend(p: &Polytope, ell: usize, family: &CompatibleFamily) -> Result<Field> {
    ExtensionOperator::new(p, ell)?.apply(family)
}

#[derive(Clone, Debug, Serialize)]
pub struct SmoothnessReport {
    pub order: usize,
    pub step: f64,
    pub probes: usize,
    pub max_discrepancy: f64,
    pub threshold: f64,
    pub worst_point: Vec<f64>,
    pub passed: bool,
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, j| acc * (n - j) as f64 / (j + 1) as f64)
}

/// Unnormalized central difference of order `k` with step `s` along `v`.
fn central_difference(f: &Field, x: &Vector, v: &Vector, k: usize, s: f64) -> Vector {
    let mut acc = Vector::zeros(f.codomain_dim());
    for j in 0..=k {
        let offset = (k as f64 / 2.0 - j as f64) * s;
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        acc.axpy(sign * binomial(k, j), &f.eval(&(x + v * offset)), 1.0);
    }
    acc
}

/// Richardson levels used by the smoothness probe.
pub const PROBE_LEVELS: usize = 3;

/// Scale-consistency probe for `C^order` behaviour at `(point, unit direction)` pairs.
///
/// Start from `R_0(s) = D_s`, the central difference of order `order + 1`
/// with step `s`, and eliminate the even error terms of a smooth field by
/// `R_{j+1}(s) = R_j(2s) - 2^{order+1+2j} R_j(s)`. After [`PROBE_LEVELS`]
/// eliminations a smooth field leaves a defect of high order in `h`, while a
/// jump in the `order`-th derivative leaves one of size `h^order`. The
/// discrepancy is the defect divided by `h^order`, compared with `1e-2·h`.
pub fn smoothness_probe_at(f: &Field, order: usize, h: f64, probes: &[(Vector, Vector)]) -> SmoothnessReport {
    let k = order + 1;
    let threshold = 1e-2 * h;
    let mut worst: f64 = 0.0;
    let mut worst_point = Vec::new();
    for (x, v) in probes {
        let mut r: Vec<Vector> = (0..=PROBE_LEVELS)
            .map(|j| central_difference(f, x, v, k, h * 2f64.powi(j as i32)))
            .collect();
        for level in 0..PROBE_LEVELS {
            let lift = 2f64.powi((k + 2 * level) as i32);
            r = r.windows(2).map(|w| &w[1] - &w[0] * lift).collect();
        }
        let disc = r[0].amax() / h.powi(order as i32);
        if disc > worst || worst_point.is_empty() {
            worst = worst.max(disc);
            worst_point = to_vec(x);
        }
    }
    SmoothnessReport {
        order,
        step: h,
        probes: probes.len(),
        max_discrepancy: worst,
        threshold,
        worst_point,
        passed: worst < threshold,
    }
}

/// Half-width of the probe stencil.
pub fn probe_reach(order: usize, h: f64) -> f64 {
    2f64.powi(PROBE_LEVELS as i32) * (order + 1) as f64 / 2.0 * h * 1.01
}

/// Probe pairs inside the faces of `p`: a point of `algint(F)` and a unit
/// direction in `E_F`, such that the whole stencil stays in `F`.
pub fn face_probes<R: Rng + ?Sized>(
    p: &Polytope,
    order: usize,
    h: f64,
    count: usize,
    rng: &mut R,
) -> Vec<(Vector, Vector)> {
    let faces: Vec<FaceId> = p.lattice().faces().iter().filter(|f| f.dim > 0).map(|f| f.id).collect();
    let reach = probe_reach(order, h);
    let mut out = Vec::new();
    let mut attempts = 0;
    while out.len() < count && attempts < 100 * count.max(1) && !faces.is_empty() {
        attempts += 1;
        let f = p.lattice().face(faces[attempts % faces.len()]);
        let x = p.sample_face(f.id, rng);
        let c = Vector::from_fn(f.dim, |_, _| rng.random_range(-1.0..1.0));
        if c.norm() < 1e-3 {
            continue;
        }
        let v = &f.affine_basis * c.normalize();
        if p.contains(&(&x + &v * reach), 0.0) && p.contains(&(&x - &v * reach), 0.0) {
            out.push((x, v));
        }
    }
    out
}

/// Turn points into probe pairs with random directions, dropping stencils
/// that leave the polytope.
pub fn point_probes<R: Rng + ?Sized>(
    p: &Polytope,
    points: &[Vector],
    order: usize,
    h: f64,
    rng: &mut R,
) -> Vec<(Vector, Vector)> {
    let reach = probe_reach(order, h);
    let n = p.dim();
    let mut out = Vec::new();
    for x in points {
        for _ in 0..10 {
            let v = Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            if v.norm() < 1e-3 {
                continue;
            }
            let v = v.normalize();
            if p.contains(&(x + &v * reach), 0.0) && p.contains(&(x - &v * reach), 0.0) {
                out.push((x.clone(), v));
                break;
            }
        }
    }
    out
}

/// Smoothness probe at step [`PROBE_STEP`] over random face stencils.
pub fn smoothness_probe<R: Rng + ?Sized>(
    p: &Polytope,
    f: &Field,
    order: usize,
    samples: usize,
    rng: &mut R,
) -> SmoothnessReport {
    let probes = face_probes(p, order, PROBE_STEP, samples, rng);
    smoothness_probe_at(f, order, PROBE_STEP, &probes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use crate::expr::{parse_expression, Expr};
    use crate::linalg::orthonormal_span;

    fn v(c: &[f64]) -> Vector {
        Vector::from_column_slice(c)
    }

    fn expr_field(dim: usize, src: &str) -> Field {
        Field::from_exprs(dim, vec![parse_expression(src, dim).unwrap()])
    }

    #[test]
    fn theta_zeroes_listed_coordinates() {
        assert_eq!(theta(2, &[0], &v(&[0.3, 0.7])), v(&[0.0, 0.7]));
        assert_eq!(theta(3, &[0, 2], &v(&[0.2, 0.5, 0.9])), v(&[0.0, 0.5, 0.0]));
        assert_eq!(theta(2, &[0, 1], &v(&[0.3, 0.7])), v(&[0.0, 0.0]));
    }

    #[test]
    fn phi_one_is_the_wall_value() {
        let fam = CubeFamily::new(1, 1, vec![expr_field(2, "exp(x1) + x2^2")]).unwrap();
        let phi = local_extend(&fam).unwrap();
        let y = phi.eval(&v(&[0.6, 0.5]))[0];
        assert!((y - (1.0 + 0.25)).abs() < 1e-15);
    }

    #[test]
    fn phi_two_hand_value() {
        let fam = CubeFamily::new(2, 0, vec![expr_field(2, "x2^2"), expr_field(2, "x1")]).unwrap();
        let phi = local_extend(&fam).unwrap();
        assert!((phi.eval(&v(&[0.5, 0.5]))[0] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn incompatible_cube_family_is_rejected() {
        let fam = CubeFamily::new(2, 0, vec![expr_field(2, "1"), expr_field(2, "2")]).unwrap();
        assert!(matches!(local_extend(&fam), Err(Error::IncompatibleFamily { .. })));
    }

    #[test]
    fn restriction_examples() {
        let c = local_restrict(&Field::constant(3, v(&[2.5])), 2);
        for comp in &c.components {
            assert_eq!(comp.eval(&v(&[0.1, 0.2, 0.3]))[0], 2.5);
        }
        let r = local_restrict(&expr_field(2, "x1"), 2);
        assert_eq!(r.components[0].eval(&v(&[0.0, 0.4]))[0], 0.0);
        assert_eq!(r.components[1].eval(&v(&[0.7, 0.0]))[0], 0.7);
    }

    fn random_family(i: usize, q: usize, rng: &mut Pcg64) -> CubeFamily {
        let n = i + q;
        let g = Expr::random_polynomial(n, 3, rng);
        let comps = (0..i)
            .map(|k| {
                // Values off the wall are irrelevant; perturb them to prove it.
                let p = Expr::random_polynomial(n, 2, rng);
                let e = Expr::Add(
                    Box::new(g.clone()),
                    Box::new(Expr::Mul(Box::new(Expr::Var(k)), Box::new(p))),
                );
                Field::from_exprs(n, vec![e])
            })
            .collect();
        CubeFamily::new(i, q, comps).unwrap()
    }

    #[test]
    fn right_inverse_and_recursion_identity() {
        let mut rng = Pcg64::seed_from_u64(11);
        for i in 1..=4 {
            for q in 0..=1 {
                let fam = random_family(i, q, &mut rng);
                let phi = local_extend(&fam).unwrap();
                let back = local_restrict(&phi, i);
                for _ in 0..200 {
                    let x = fam.sample_point(&mut rng);
                    for k in 0..i {
                        let y = theta(i, &[k], &x);
                        let err = (back.components[k].eval(&y) - fam.components[k].eval(&y)).amax();
                        assert!(err <= 1e-12, "i={i} q={q} err={err}");
                    }
                    if i >= 2 {
                        let err = (phi.eval(&x) - recursion_identity_rhs(&fam, &x)).amax();
                        assert!(err <= 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn phi_values_stay_in_span_of_wall_values() {
        let mut rng = Pcg64::seed_from_u64(12);
        let u = v(&[1.0, -2.0, 0.5]);
        let w = v(&[0.0, 1.0, 1.0]);
        let g1 = Expr::random_polynomial(3, 2, &mut rng);
        let g2 = Expr::random_polynomial(3, 2, &mut rng);
        let (u2, w2) = (u.clone(), w.clone());
        let f = Field::new(3, 3, move |x| &u2 * g1.eval(x.as_slice()) + &w2 * g2.eval(x.as_slice()));
        let fam = local_restrict(&f, 3);
        let phi = local_extend(&fam).unwrap();
        let basis = orthonormal_span(&[u, w], 3, 1e-12);
        for _ in 0..100 {
            let y = phi.eval(&fam.sample_point(&mut rng));
            assert!(crate::linalg::residual_to_span(&basis, &y) <= 1e-8 * y.norm().max(1.0));
        }
    }

    #[test]
    fn bump_profile() {
        assert_eq!(bump(0.0), 1.0);
        assert_eq!(bump(1.0), 0.0);
        assert_eq!(bump(-1.5), 0.0);
        assert!((bump(0.5) - (1.0 - 1.0 / 0.75f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn segment_partition_has_three_charts() {
        let seg = catalog::polytope("segment").unwrap();
        let pou = build_partition_of_unity(&seg).unwrap();
        assert_eq!(pou.len(), 3);
        let mut rng = Pcg64::seed_from_u64(13);
        let report = pou.audit(&seg, 100, &mut rng);
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn square_partition_and_dropped_corner() {
        let sq = catalog::polytope("square").unwrap();
        let pou = build_partition_of_unity(&sq).unwrap();
        assert!(pou.len() >= 9);
        let mut rng = Pcg64::seed_from_u64(14);
        assert!(pou.audit(&sq, 500, &mut rng).passed);
        let mut charts = pou.charts().to_vec();
        let corner = charts.iter().position(|c| c.index == 2).unwrap();
        charts.remove(corner);
        assert!(matches!(
            PartitionOfUnity::from_charts(&sq, charts),
            Err(Error::CoverFailure { .. })
        ));
    }

    #[test]
    fn square_facet_extension_restores_edges() {
        let sq = catalog::polytope("square").unwrap();
        let g = expr_field(2, "x1*x2");
        let fam = CompatibleFamily::restrict(&sq, 1, &g);
        let s = facet_extend(&sq, &fam).unwrap();
        let mut rng = Pcg64::seed_from_u64(15);
        assert!(fam.restriction_error(&sq, &s, 400, &mut rng) <= 1e-9);
        let zero = facet_extend(&sq, &CompatibleFamily::zero(&sq, 1, 1)).unwrap();
        for _ in 0..50 {
            assert_eq!(zero.eval(&sq.sample_interior(&mut rng))[0], 0.0);
        }
        let probe = smoothness_probe(&sq, &s, 1, 200, &mut rng);
        assert!(probe.passed, "{probe:?}");
    }

    #[test]
    fn cube_linear_data() {
        let cube = catalog::polytope("cube3").unwrap();
        let g = expr_field(3, "x1 + 2*x2 + 3*x3");
        let fam = CompatibleFamily::restrict(&cube, 2, &g);
        let s = facet_extend(&cube, &fam).unwrap();
        let mut rng = Pcg64::seed_from_u64(16);
        assert!(fam.restriction_error(&cube, &s, 500, &mut rng) <= 1e-9);
    }

    #[test]
    fn cube_edge_data() {
        let cube = catalog::polytope("cube3").unwrap();
        let g = expr_field(3, "x1^2 + x2");
        let fam = CompatibleFamily::restrict(&cube, 1, &g);
        let op = ExtensionOperator::new(&cube, 1).unwrap();
        let s = op.apply(&fam).unwrap();
        let mut rng = Pcg64::seed_from_u64(17);
        assert!(fam.restriction_error(&cube, &s, 240, &mut rng) <= 1e-9);
    }

    #[test]
    fn ell_extend_at_top_level_is_facet_extend() {
        let sq = catalog::polytope("square").unwrap();
        let fam = CompatibleFamily::restrict(&sq, 1, &expr_field(2, "sin(x1) + x2^3"));
        let a = facet_extend(&sq, &fam).unwrap();
        let b = ell_extend(&sq, 1, &fam).unwrap();
        let mut rng = Pcg64::seed_from_u64(18);
        for _ in 0..50 {
            let x = sq.sample_interior(&mut rng);
            assert_eq!(a.eval(&x), b.eval(&x));
        }
    }

    #[test]
    fn incompatible_facet_family_is_rejected() {
        let sq = catalog::polytope("square").unwrap();
        let mut fam = CompatibleFamily::zero(&sq, 1, 1);
        let first = *fam.fields.keys().next().unwrap();
        fam.fields.insert(first, Field::constant(2, v(&[1.0])));
        assert!(matches!(facet_extend(&sq, &fam), Err(Error::IncompatibleFamily { .. })));
    }

    #[test]
    fn pyramid_cannot_be_extended() {
        let pyr = catalog::polytope("square_pyramid").unwrap();
        assert!(matches!(ExtensionOperator::new(&pyr, 1), Err(Error::NotSimple(_))));
    }

    #[test]
    fn probe_negative_control_and_polynomial() {
        let sq = catalog::polytope("square").unwrap();
        let step = Field::scalar(2, |x| if x[0] < 0.5 { 0.0 } else { 1.0 });
        let probes: Vec<(Vector, Vector)> = (0..20)
            .map(|k| (v(&[0.5, 0.05 + 0.04 * k as f64]), v(&[1.0, 0.0])))
            .collect();
        assert!(!smoothness_probe_at(&step, 0, PROBE_STEP, &probes).passed);
        let kink = Field::scalar(2, |x| (x[0] - 0.5).abs());
        let off = v(&[0.3 * PROBE_STEP, 0.0]);
        let shifted: Vec<(Vector, Vector)> = probes.iter().map(|(x, d)| (x + &off, d.clone())).collect();
        assert!(!smoothness_probe_at(&kink, 1, PROBE_STEP, &shifted).passed);
        let mut rng = Pcg64::seed_from_u64(19);
        let poly = expr_field(2, "x1^3 - 2*x1*x2 + x2^2");
        for order in 0..=1 {
            let r = smoothness_probe(&sq, &poly, order, 100, &mut rng);
            assert!(r.passed, "{r:?}");
        }
        // Second order drowns in rounding at the default step but not at a coarse one.
        let coarse = face_probes(&sq, 2, 1e-2, 100, &mut rng);
        assert!(smoothness_probe_at(&poly, 2, 1e-2, &coarse).passed);
    }
}
