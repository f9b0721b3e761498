//! JSON input and output for polytopes, face lattices and expression families.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{parse_expression, Expr};
use crate::polytope::{build_polytope, FaceId, FaceRecord, Polytope};

#[derive(Serialize, Deserialize)]
struct PolytopeFile {
    vertices: Vec<Vec<f64>>,
}

fn json_error(e: serde_json::Error) -> Error {
    Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

pub fn parse_polytope_str(src: &str) -> Result<Polytope> {
    let file: PolytopeFile = serde_json::from_str(src).map_err(json_error)?;
    build_polytope(&file.vertices)
}

pub fn parse_polytope(path: &Path) -> Result<Polytope> {
    let src = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidArgument(format!("cannot read {}: {e}", path.display())))?;
    parse_polytope_str(&src)
}

/// `{"vertices": [...]}` with the (ambient) extreme points of `p`.
pub fn polytope_to_json(p: &Polytope) -> String {
    let file = PolytopeFile {
        vertices: p
            .ambient_vertices()
            .iter()
            .map(|v| v.iter().copied().collect())
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("vertex lists serialize")
}

#[derive(Serialize)]
struct LatticeDump<'a> {
    dim: usize,
    ambient_dim: usize,
    faces: &'a [FaceRecord],
}

pub fn lattice_to_json(p: &Polytope) -> String {
    let records = p.lattice_records();
    serde_json::to_string_pretty(&LatticeDump {
        dim: p.dim(),
        ambient_dim: p.ambient_dim(),
        faces: &records,
    })
    .expect("lattice records serialize")
}

#[derive(Deserialize)]
#[serde(untagged)]
enum FamilyEntry {
    Scalar(String),
    Vector(Vec<String>),
}

/// Face id → component expressions. A bare string is a one-component entry.
///
/// Expressions use the polytope's chart coordinates `x1..xn`.
pub fn parse_family(src: &str, dim: usize) -> Result<BTreeMap<FaceId, Vec<Expr>>> {
    let raw: BTreeMap<String, FamilyEntry> = serde_json::from_str(src).map_err(json_error)?;
    let mut out = BTreeMap::new();
    for (key, entry) in raw {
        let id: FaceId = key
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("face id `{key}` is not an integer")))?;
        let sources = match entry {
            FamilyEntry::Scalar(s) => vec![s],
            FamilyEntry::Vector(v) => v,
        };
        let exprs = sources
            .iter()
            .map(|s| parse_expression(s, dim))
            .collect::<Result<Vec<_>>>()?;
        out.insert(id, exprs);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;

    #[test]
    fn parse_errors_carry_position() {
        let err = parse_polytope_str("{\n  \"vertices\": [[0, 1],\n  oops]\n}").unwrap_err();
        match err {
            Error::Parse { line, column, .. } => {
                assert_eq!(line, 3);
                assert!(column > 0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_vertex_list() {
        assert!(matches!(
            parse_polytope_str(r#"{"vertices": []}"#),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn dump_and_reparse_preserves_lattice() {
        for name in catalog::NAMES {
            let p = catalog::polytope(name).unwrap();
            let q = parse_polytope_str(&polytope_to_json(&p)).unwrap();
            assert_eq!(p.lattice_records(), q.lattice_records(), "{name}");
        }
    }

    #[test]
    fn family_entries() {
        let fam = parse_family(r#"{"0": "x1^2", "3": ["x1", "0"]}"#, 2).unwrap();
        assert_eq!(fam[&0].len(), 1);
        assert_eq!(fam[&3].len(), 2);
        assert!(matches!(
            parse_family(r#"{"1": "x3"}"#, 2),
            Err(Error::UnknownSymbol(_))
        ));
    }
}
