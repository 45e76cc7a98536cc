//! Named reflexive polytopes: the projective line, the five smooth toric del Pezzo
//! surfaces and all sixteen reflexive polygons.
//!
//! Each entry is a JSON document `{name, dimension, vertices, rays}` with vertex
//! coordinates written as `"p/q"` strings. The built-in documents are compiled in;
//! setting `TORIFIC_CATALOG` to a directory of such documents replaces them.

use std::path::Path;

use num_rational::BigRational;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::polytope::Polytope;
use crate::rational::{format_rational, parse_rational};

pub const CATALOG_ENV: &str = "TORIFIC_CATALOG";

const BUILTIN: &[(&str, &str)] = &[
    ("P1", include_str!("../catalog/P1.json")),
    ("P2", include_str!("../catalog/P2.json")),
    ("P1xP1", include_str!("../catalog/P1xP1.json")),
    ("BlpP2", include_str!("../catalog/BlpP2.json")),
    ("Bl2P2", include_str!("../catalog/Bl2P2.json")),
    ("Bl3P2", include_str!("../catalog/Bl3P2.json")),
    ("Q3", include_str!("../catalog/Q3.json")),
    ("Q4a", include_str!("../catalog/Q4a.json")),
    ("Q4b", include_str!("../catalog/Q4b.json")),
    ("Q4c", include_str!("../catalog/Q4c.json")),
    ("Q5a", include_str!("../catalog/Q5a.json")),
    ("Q5b", include_str!("../catalog/Q5b.json")),
    ("Q6a", include_str!("../catalog/Q6a.json")),
    ("Q6b", include_str!("../catalog/Q6b.json")),
    ("Q6c", include_str!("../catalog/Q6c.json")),
    ("Q7", include_str!("../catalog/Q7.json")),
    ("Q8", include_str!("../catalog/Q8.json")),
];

/// The five smooth toric del Pezzo surfaces.
pub const DEL_PEZZO: [&str; 5] = ["P2", "P1xP1", "BlpP2", "Bl2P2", "Bl3P2"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogDocument {
    pub name: String,
    pub dimension: usize,
    pub vertices: Vec<Vec<String>>,
    pub rays: Vec<Vec<i64>>,
}

impl CatalogDocument {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        serde_json::from_slice(bytes).map_err(|e| Error::parse(format!("catalog document: {e}")))
    }

    pub fn from_polytope(p: &Polytope) -> Result<Self> {
        let rays = p.lattice_normals().ok_or_else(|| Error::invalid("polytope has no lattice facet normals"))?.to_vec();
        let vertices = p
            .exact_vertices()
            .ok_or_else(|| Error::invalid("polytope has no exact vertices"))?
            .iter()
            .map(|v| v.iter().map(format_rational).collect())
            .collect();
        Ok(CatalogDocument { name: p.name().to_string(), dimension: p.dim(), vertices, rays })
    }

    /// Builds the polytope from the rays and checks it against the listed vertices.
    pub fn to_polytope(&self) -> Result<Polytope> {
        if self.dimension == 0 || self.rays.iter().any(|r| r.len() != self.dimension) {
            return Err(Error::invalid(format!("{}: ray dimension mismatch", self.name)));
        }
        let listed: Vec<Vec<BigRational>> = self
            .vertices
            .iter()
            .map(|v| {
                if v.len() != self.dimension {
                    return Err(Error::invalid(format!("{}: vertex dimension mismatch", self.name)));
                }
                v.iter().map(|s| parse_rational(s)).collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        let p = Polytope::from_rays(&self.name, &self.rays)?;
        let computed = p.exact_vertices().expect("lattice polytope");
        let same = listed.len() == computed.len() && listed.iter().all(|v| computed.contains(v));
        if !same {
            return Err(Error::invalid(format!(
                "{}: listed vertices are not the vertices of the ray polytope",
                self.name
            )));
        }
        Ok(p)
    }
}

/// All catalog documents, from `TORIFIC_CATALOG` if set, else the built-in set.
pub fn documents() -> Result<Vec<CatalogDocument>> {
    match std::env::var_os(CATALOG_ENV) {
        Some(dir) => load_dir(Path::new(&dir)),
        None => BUILTIN.iter().map(|(_, s)| CatalogDocument::parse(s.as_bytes())).collect(),
    }
}

/// Every `*.json` file in `dir`, sorted by file name.
pub fn load_dir(dir: &Path) -> Result<Vec<CatalogDocument>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths.iter().map(|p| CatalogDocument::parse(&std::fs::read(p)?)).collect()
}

pub fn names() -> Result<Vec<String>> {
    Ok(documents()?.into_iter().map(|d| d.name).collect())
}

/// Looks up a polytope by name.
///
/// # Errors
///
/// [`Error::UnknownPolytope`] listing the available names.
pub fn catalog(name: &str) -> Result<Polytope> {
    let docs = documents()?;
    match docs.iter().find(|d| d.name == name) {
        Some(d) => d.to_polytope(),
        None => Err(Error::UnknownPolytope {
            name: name.to_string(),
            available: docs.into_iter().map(|d| d.name).collect(),
        }),
    }
}

/// The sixteen reflexive polygons, in catalog order.
pub fn polygons() -> Result<Vec<Polytope>> {
    documents()?.iter().filter(|d| d.dimension == 2).map(|d| d.to_polytope()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_entries_parse_and_match_their_vertices() {
        for (name, src) in BUILTIN {
            let doc = CatalogDocument::parse(src.as_bytes()).unwrap();
            assert_eq!(&doc.name, name);
            let p = doc.to_polytope().unwrap();
            assert!(p.is_reflexive(), "{name}");
        }
    }

    #[test]
    fn document_round_trip() {
        let doc = CatalogDocument::parse(BUILTIN[3].1.as_bytes()).unwrap();
        let p = doc.to_polytope().unwrap();
        let back = CatalogDocument::from_polytope(&p).unwrap();
        assert_eq!(back.to_polytope().unwrap().volume(), p.volume());
        assert_eq!(back.rays, doc.rays);
    }

    #[test]
    fn mismatched_vertices_are_rejected() {
        let src = r#"{"name":"x","dimension":1,"vertices":[["-1"],["2"]],"rays":[[1],[-1]]}"#;
        assert!(CatalogDocument::parse(src.as_bytes()).unwrap().to_polytope().is_err());
    }
}
