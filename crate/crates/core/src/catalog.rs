//! Built-in polytopes, shipped as JSON data files.

use crate::error::{Error, Result};
use crate::io::parse_polytope_str;
use crate::polytope::Polytope;

pub const NAMES: [&str; 11] = [
    "segment",
    "square",
    "cube3",
    "cube4",
    "simplex2",
    "simplex3",
    "simplex4",
    "square_x_segment",
    "dodecahedron",
    "square_pyramid",
    "icosahedron",
];

/// Catalog entries that are simple polytopes.
pub const SIMPLE: [&str; 9] = [
    "segment",
    "square",
    "cube3",
    "cube4",
    "simplex2",
    "simplex3",
    "simplex4",
    "square_x_segment",
    "dodecahedron",
];

pub const NON_SIMPLE: [&str; 2] = ["square_pyramid", "icosahedron"];

pub fn source(name: &str) -> Option<&'static str> {
    Some(match name {
        "segment" => include_str!("../data/segment.json"),
        "square" | "cube2" => include_str!("../data/square.json"),
        "cube3" | "cube" => include_str!("../data/cube3.json"),
        "cube4" => include_str!("../data/cube4.json"),
        "simplex2" | "triangle" => include_str!("../data/simplex2.json"),
        "simplex3" | "tetrahedron" => include_str!("../data/simplex3.json"),
        "simplex4" => include_str!("../data/simplex4.json"),
        "square_x_segment" => include_str!("../data/square_x_segment.json"),
        "dodecahedron" => include_str!("../data/dodecahedron.json"),
        "square_pyramid" | "pyramid" => include_str!("../data/square_pyramid.json"),
        "icosahedron" => include_str!("../data/icosahedron.json"),
        _ => return None,
    })
}

pub fn polytope(name: &str) -> Result<Polytope> {
    let src = source(name).ok_or_else(|| Error::InvalidArgument(format!("no catalog polytope `{name}`")))?;
    parse_polytope_str(src)
}
