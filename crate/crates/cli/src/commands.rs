use std::collections::BTreeMap;
use std::path::Path;

use polyflow_core::extension::{face_probes, smoothness_probe_at, PROBE_STEP};
use polyflow_core::flows::{self, DEFAULT_TOL, INVARIANCE_TOL};
use polyflow_core::report::Status;
use polyflow_core::stratified::{StratifiedExtension, DEFAULT_SAMPLES, TANGENCY_TOL};
use polyflow_core::suite::{run_all, run_criterion, CriterionOutcome};
use polyflow_core::{
    catalog, io, is_simple, is_stratified, nonsimple_obstruction, parse_expression, restrict_fields, standard_chart,
    stratified_criterion, verify_chart, Check, CompatibleFamily, Error, ExtensionOperator, Field, Polytope, Result,
    StratifiedField, Vector,
};
use rand::SeedableRng;
use rand_pcg::Pcg64;
use serde_json::{json, Value};

use crate::{Command, Global};

pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

#[derive(Default)]
pub struct Outcome {
    pub checks: Vec<Check>,
    pub data: Option<Value>,
    /// CSV outputs by file name.
    pub tables: Vec<(String, Table)>,
    /// Other text outputs by file name.
    pub files: Vec<(String, String)>,
    /// Contents hashed into the input digest.
    pub inputs: Vec<String>,
    /// Progress lines for stderr.
    pub lines: Vec<String>,
}

impl Outcome {
    pub fn error(e: &Error) -> Self {
        Outcome {
            checks: vec![Check::flag("completed", false).with_detail(e.to_string())],
            ..Default::default()
        }
    }
}

fn load(arg: &str) -> Result<(Polytope, String)> {
    let path = Path::new(arg);
    let src = if path.exists() {
        std::fs::read_to_string(path).map_err(|e| Error::InvalidArgument(format!("cannot read {arg}: {e}")))?
    } else if let Some(src) = catalog::source(arg) {
        src.to_string()
    } else {
        return Err(Error::InvalidArgument(format!(
            "`{arg}` is neither a file nor a catalog polytope ({})",
            catalog::NAMES.join(", ")
        )));
    };
    Ok((io::parse_polytope_str(&src)?, src))
}

/// Components separated by `;`.
fn parse_field(src: &str, p: &Polytope) -> Result<Field> {
    let n = p.dim();
    let exprs = src.split(';').map(|s| parse_expression(s, n)).collect::<Result<Vec<_>>>()?;
    if exprs.len() != n {
        return Err(Error::InvalidArgument(format!(
            "a vector field on this polytope needs {n} components, got {}",
            exprs.len()
        )));
    }
    Ok(Field::from_exprs(n, exprs))
}

fn point(p: &Polytope, coords: &[f64]) -> Result<Vector> {
    if coords.len() != p.dim() {
        return Err(Error::InvalidArgument(format!("expected {} coordinates, got {}", p.dim(), coords.len())));
    }
    Ok(Vector::from_column_slice(coords))
}

fn fmt(x: f64) -> String {
    format!("{x:e}")
}

fn coords_header(n: usize, prefix: &str) -> Vec<String> {
    (1..=n).map(|k| format!("{prefix}{k}")).collect()
}

fn to_value<T: serde::Serialize + ?Sized>(t: &T) -> Value {
    serde_json::to_value(t).expect("reports serialize")
}

pub fn run(command: &Command, g: &Global) -> Result<Outcome> {
    let mut rng = Pcg64::seed_from_u64(g.seed);
    let samples = g.samples.unwrap_or(DEFAULT_SAMPLES);
    let tol = g.tol.unwrap_or(DEFAULT_TOL);
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::InvalidArgument("--tol must be positive".into()));
    }
    match command {
        Command::Classify { input, expect } => {
            let (p, src) = load(&input.polytope)?;
            let r = is_simple(&p);
            let mut checks = vec![Check::flag(
                "simplicity criteria agree",
                r.edges_criterion == r.facets_criterion && r.facets_criterion == r.faces_criterion,
            )];
            if let Some(e) = expect {
                checks.push(Check::flag(format!("classified {e}"), r.is_simple == (e == "simple")));
            }
            Ok(Outcome {
                checks,
                data: Some(json!({
                    "is_simple": r.is_simple,
                    "dim": p.dim(),
                    "vertices": p.vertices().len(),
                    "facets": p.halfspaces().len(),
                    "f_vector": (0..=p.dim()).map(|k| p.lattice().count_of_dim(k)).collect::<Vec<_>>(),
                    "report": to_value(&r),
                })),
                files: vec![("lattice.json".into(), io::lattice_to_json(&p) + "\n")],
                inputs: vec![src],
                ..Default::default()
            })
        }
        Command::Chart { input, point: coords } => {
            let (p, src) = load(&input.polytope)?;
            let x = point(&p, coords)?;
            let chart = standard_chart(&p, &x)?;
            let audit = verify_chart(&p, &chart, samples.max(1), &mut rng)?;
            Ok(Outcome {
                checks: vec![
                    Check::at_most("pulled-back cube points outside", audit.max_membership_violation, 1e-9),
                    Check::at_most("wall residual", audit.max_wall_residual, 1e-9),
                ],
                data: Some(json!({ "chart": to_value(&chart), "audit": to_value(&audit) })),
                inputs: vec![src],
                ..Default::default()
            })
        }
        Command::Extend { input, ell, data, family } => {
            let (p, src) = load(&input.polytope)?;
            let n = p.dim();
            let ell = ell.unwrap_or(n.saturating_sub(1));
            let mut inputs = vec![src];
            let fam = if let Some(expr) = data {
                inputs.push(expr.clone());
                let g = Field::from_exprs(n, vec![parse_expression(expr, n)?]);
                CompatibleFamily::restrict(&p, ell, &g)
            } else {
                let path = family.as_ref().expect("clap requires --data or --family");
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::InvalidArgument(format!("cannot read {}: {e}", path.display())))?;
                let exprs = io::parse_family(&text, n)?;
                inputs.push(text);
                let fields: BTreeMap<_, _> = exprs.into_iter().map(|(id, e)| (id, Field::from_exprs(n, e))).collect();
                CompatibleFamily::new(&p, ell, fields)?
            };
            let compat = fam.check_compatibility(&p, samples, &mut rng)?;
            let op = ExtensionOperator::new(&p, ell)?;
            let s = op.apply(&fam)?;
            let restriction = fam.restriction_error(&p, &s, samples.max(200), &mut rng);
            let mut checks = vec![
                Check::info("family compatibility", compat),
                Check::at_most("restriction error", restriction, 1e-9),
            ];
            for order in 0..=1 {
                let probes = face_probes(&p, order, PROBE_STEP, samples.max(50), &mut rng);
                let r = smoothness_probe_at(&s, order, PROBE_STEP, &probes);
                checks.push(Check::at_most(format!("smoothness probe order {order}"), r.max_discrepancy, r.threshold));
            }
            let m = s.codomain_dim();
            let mut header = coords_header(n, "x");
            header.extend(coords_header(m, "value"));
            let rows = (0..samples.max(1))
                .map(|_| {
                    let x = p.sample_interior(&mut rng);
                    x.iter().chain(s.eval(&x).iter()).map(|v| fmt(*v)).collect()
                })
                .collect();
            Ok(Outcome {
                checks,
                data: Some(json!({ "ell": ell, "charts": op.partition().len(), "faces": fam.fields.len() })),
                tables: vec![("samples.csv".into(), Table { header, rows })],
                inputs,
                ..Default::default()
            })
        }
        Command::StratifyCheck { input, field, ell } => {
            let (p, src) = load(&input.polytope)?;
            let x = parse_field(field, &p)?;
            let r = is_stratified(&p, &x, samples, &mut rng);
            let mut checks = vec![Check::at_most("normal component on faces", r.max_normal, TANGENCY_TOL)];
            let mut data = json!({ "stratification": to_value(&r) });
            if let Some(ell) = ell {
                let c = stratified_criterion(&p, &x, *ell, samples, &mut rng)?;
                checks.push(Check::flag("criterion consistent with direct check", c.consistent));
                data["criterion"] = to_value(&c);
            }
            Ok(Outcome {
                checks,
                data: Some(data),
                inputs: vec![src, field.clone()],
                ..Default::default()
            })
        }
        Command::ExtendField { input, field, ell } => {
            let (p, src) = load(&input.polytope)?;
            let ell = ell.unwrap_or(p.dim().saturating_sub(1));
            let x = StratifiedField::new(&p, parse_field(field, &p)?, samples, &mut rng)?;
            let fam = restrict_fields(&x, ell, &mut rng)?;
            let tau = StratifiedExtension::new(&p, ell)?.apply(&fam)?;
            let restriction = fam.family.restriction_error(&p, tau.field(), samples.max(200), &mut rng);
            let r = is_stratified(&p, tau.field(), samples, &mut rng);
            let mut difference: f64 = 0.0;
            for _ in 0..samples {
                let y = p.sample_interior(&mut rng);
                difference = difference.max((tau.eval(&y) - x.eval(&y)).norm());
            }
            Ok(Outcome {
                checks: vec![
                    Check::at_most("restriction of the extension", restriction, 1e-9),
                    Check::at_most("normal component of the extension", r.max_normal, TANGENCY_TOL),
                    Check::info("interior distance to the input field", difference),
                ],
                data: Some(json!({ "ell": ell, "stratification": to_value(&r) })),
                inputs: vec![src, field.clone()],
                ..Default::default()
            })
        }
        Command::Obstruction { input } => {
            let (p, src) = load(&input.polytope)?;
            let w = nonsimple_obstruction(&p, samples, &mut rng)?;
            Ok(Outcome {
                checks: vec![
                    Check::at_least("fit residual / |x_m - x_0|", w.fit_residual / w.v_norm, 0.5),
                    Check::at_most("lambda recovery", w.lambda_residual, 1e-9),
                    Check::flag("extension refused", w.infeasible),
                ],
                data: Some(to_value(&w)),
                inputs: vec![src],
                ..Default::default()
            })
        }
        Command::Flow { input, field, start, time } => {
            let (p, src) = load(&input.polytope)?;
            let x = StratifiedField::new(&p, parse_field(field, &p)?, samples, &mut rng)?;
            let x0 = point(&p, start)?;
            let r = flows::integrate_flow(&x, &x0, *time, tol)?;
            let mut header = vec!["t".to_string()];
            header.extend(coords_header(p.dim(), "x"));
            header.push("violation".into());
            let rows = r
                .trajectory
                .iter()
                .map(|tp| {
                    std::iter::once(tp.t)
                        .chain(tp.x.iter().copied())
                        .chain(std::iter::once(tp.violation))
                        .map(fmt)
                        .collect()
                })
                .collect();
            Ok(Outcome {
                checks: vec![
                    Check::at_most("face drift", r.max_face_drift(), INVARIANCE_TOL),
                    Check::at_most("constraint violation", r.max_constraint_violation, INVARIANCE_TOL),
                ],
                data: Some(json!({
                    "final_point": r.final_point,
                    "start_face": r.start_face,
                    "face_drift": r.face_drift,
                    "accepted_steps": r.accepted_steps,
                    "rejected_steps": r.rejected_steps,
                })),
                tables: vec![("trajectory.csv".into(), Table { header, rows })],
                inputs: vec![src, field.clone()],
                ..Default::default()
            })
        }
        Command::Reach { input, field, start, target, budget, residual } => {
            let (p, src) = load(&input.polytope)?;
            let gens = field
                .iter()
                .map(|f| StratifiedField::new(&p, parse_field(f, &p)?, samples, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let (a, b) = (point(&p, start)?, point(&p, target)?);
            let mut inputs = vec![src];
            inputs.extend(field.iter().cloned());
            let r = match flows::reach_target(&p, &gens, &a, &b, *budget, *residual) {
                Ok(r) => r,
                Err(Error::BudgetExhausted { best_residual }) => {
                    return Ok(Outcome {
                        checks: vec![Check::at_most("residual", best_residual, *residual)
                            .with_detail("budget exhausted")],
                        inputs,
                        ..Default::default()
                    })
                }
                Err(e) => return Err(e),
            };
            let header = ["step", "generator", "scaling", "duration", "residual"].map(String::from).to_vec();
            let rows = r
                .steps
                .iter()
                .enumerate()
                .map(|(k, s)| vec![k.to_string(), s.generator.to_string(), s.scaling.clone(), fmt(s.duration), fmt(s.residual)])
                .collect();
            Ok(Outcome {
                checks: vec![
                    Check::at_most("residual", r.residual, *residual),
                    Check::at_most("flow evaluations", r.evaluations as f64, *budget as f64),
                ],
                data: Some(json!({
                    "final_point": r.diffeo.eval(&a)?.iter().copied().collect::<Vec<_>>(),
                    "evaluations": r.evaluations,
                    "steps": to_value(&r.steps),
                })),
                tables: vec![("path.csv".into(), Table { header, rows })],
                inputs,
                ..Default::default()
            })
        }
        Command::AuditControl { input, field } => {
            let (p, src) = load(&input.polytope)?;
            let gens = field
                .iter()
                .map(|f| StratifiedField::new(&p, parse_field(f, &p)?, samples, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let r = flows::control_conditions_audit(&p, &gens, samples, &mut rng)?;
            let worst = r.transversal.values().map(|t| t.min_transversal).fold(f64::INFINITY, f64::min);
            let mut inputs = vec![src];
            inputs.extend(field.iter().cloned());
            Ok(Outcome {
                checks: vec![
                    Check::flag("condition (I) rank proxy", r.condition_i),
                    Check::flag("condition (II)", r.condition_ii).with_detail(format!("min transversal {worst:e}")),
                ],
                data: Some(to_value(&r)),
                inputs,
                ..Default::default()
            })
        }
        Command::Suite { criterion } => {
            let outcomes: Vec<CriterionOutcome> = match criterion {
                Some(id) => vec![run_criterion(*id, g.seed)?],
                None => run_all(g.seed)?,
            };
            let mut checks = Vec::new();
            let mut lines = Vec::new();
            let header = ["criterion", "check", "status", "worst", "tol"].map(String::from).to_vec();
            let mut rows = Vec::new();
            for o in &outcomes {
                lines.push(format!(
                    "criterion {} [{}] {}: {}",
                    o.id,
                    if o.passed { "PASS" } else { "FAIL" },
                    o.title,
                    o.summary()
                ));
                for c in &o.checks {
                    let mut c = c.clone();
                    c.name = format!("{}: {}", o.id, c.name);
                    let status = match c.status {
                        Status::Pass => "pass",
                        Status::Fail => "fail",
                        Status::Info => "info",
                    };
                    rows.push(vec![
                        o.id.to_string(),
                        c.name.clone(),
                        status.into(),
                        fmt(c.worst),
                        c.tol.map(fmt).unwrap_or_default(),
                    ]);
                    checks.push(c);
                }
            }
            Ok(Outcome {
                checks,
                data: Some(to_value(&outcomes)),
                tables: vec![("checks.csv".into(), Table { header, rows })],
                inputs: catalog::NAMES.iter().filter_map(|n| catalog::source(n)).map(String::from).collect(),
                lines,
                ..Default::default()
            })
        }
    }
}
