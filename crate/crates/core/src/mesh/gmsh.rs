//! Gmsh 2.2 ASCII reader and writer. Only 3-node triangles (type 2) are kept.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use super::TriangleMesh;
use crate::error::{BemError, Result};
use crate::vec3::Vec3;

const TRIANGLE: u32 = 2;

pub fn load_mesh(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    let text = std::fs::read_to_string(path)?;
    parse_gmsh(&text)
}

fn err(line: usize, message: impl Into<String>) -> BemError {
    BemError::Parse {
        line,
        message: message.into(),
    }
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Option<(usize, &'a str)> {
        for (i, l) in self.inner.by_ref() {
            self.last = i + 1;
            let l = l.trim();
            if !l.is_empty() {
                return Some((i + 1, l));
            }
        }
        None
    }

    fn expect(&mut self, section: &str) -> Result<(usize, &'a str)> {
        self.next()
            .ok_or_else(|| err(self.last, format!("unexpected end of file inside {section}")))
    }
}

fn parse_num<T: std::str::FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T> {
    tok.ok_or_else(|| err(line, format!("missing {what}")))?
        .parse()
        .map_err(|_| err(line, format!("invalid {what}")))
}

/// Parses Gmsh 2.2 ASCII text.
pub fn parse_gmsh(text: &str) -> Result<TriangleMesh> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        last: 0,
    };

    let (ln, first) = lines
        .next()
        .ok_or_else(|| err(1, "empty file, expected $MeshFormat"))?;
    if first != "$MeshFormat" {
        return Err(err(ln, format!("expected $MeshFormat, found {first:?}")));
    }
    let (ln, header) = lines.expect("$MeshFormat")?;
    let mut tok = header.split_whitespace();
    let version: String = parse_num(tok.next(), ln, "format version")?;
    let file_type: u32 = parse_num(tok.next(), ln, "file type")?;
    if !version.starts_with("2.") {
        return Err(err(ln, format!("unsupported format version {version}, expected 2.2")));
    }
    if file_type != 0 {
        return Err(err(ln, "binary Gmsh files are not supported"));
    }
    let (ln, end) = lines.expect("$MeshFormat")?;
    if end != "$EndMeshFormat" {
        return Err(err(ln, "missing $EndMeshFormat"));
    }

    let mut node_ids: Option<HashMap<u64, usize>> = None;
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut triangles: Option<Vec<[u64; 3]>> = None;
    let mut skipped = 0;

    while let Some((ln, l)) = lines.next() {
        match l {
            "$Nodes" => {
                let (cl, count) = lines.expect("$Nodes")?;
                let n: usize = parse_num(Some(count), cl, "node count")?;
                let mut ids = HashMap::with_capacity(n);
                vertices.reserve(n);
                for _ in 0..n {
                    let (nl, row) = lines.expect("$Nodes")?;
                    if row.starts_with('$') {
                        return Err(err(nl, format!("$Nodes ended early, expected {n} nodes")));
                    }
                    let mut t = row.split_whitespace();
                    let id: u64 = parse_num(t.next(), nl, "node id")?;
                    let x: f64 = parse_num(t.next(), nl, "x coordinate")?;
                    let y: f64 = parse_num(t.next(), nl, "y coordinate")?;
                    let z: f64 = parse_num(t.next(), nl, "z coordinate")?;
                    if ids.insert(id, vertices.len()).is_some() {
                        return Err(err(nl, format!("duplicate node id {id}")));
                    }
                    vertices.push([x, y, z]);
                }
                let (el, end) = lines.expect("$Nodes")?;
                if end != "$EndNodes" {
                    return Err(err(el, format!("missing $EndNodes, found {end:?}")));
                }
                node_ids = Some(ids);
            }
            "$Elements" => {
                let (cl, count) = lines.expect("$Elements")?;
                let n: usize = parse_num(Some(count), cl, "element count")?;
                let mut tris: Vec<[u64; 3]> = Vec::with_capacity(n);
                for _ in 0..n {
                    let (el, row) = lines.expect("$Elements")?;
                    if row.starts_with('$') {
                        return Err(err(el, format!("$Elements ended early, expected {n} elements")));
                    }
                    let mut t = row.split_whitespace();
                    let _id: u64 = parse_num(t.next(), el, "element id")?;
                    let ty: u32 = parse_num(t.next(), el, "element type")?;
                    let ntags: usize = parse_num(t.next(), el, "tag count")?;
                    for _ in 0..ntags {
                        let _: i64 = parse_num(t.next(), el, "tag")?;
                    }
                    if ty == TRIANGLE {
                        let a = parse_num(t.next(), el, "node reference")?;
                        let b = parse_num(t.next(), el, "node reference")?;
                        let c = parse_num(t.next(), el, "node reference")?;
                        tris.push([a, b, c]);
                    } else {
                        skipped += 1;
                    }
                }
                let (el, end) = lines.expect("$Elements")?;
                if end != "$EndElements" {
                    return Err(err(el, format!("missing $EndElements, found {end:?}")));
                }
                triangles = Some(tris);
            }
            other if other.starts_with('$') && !other.starts_with("$End") => {
                let section = &other[1..];
                let closing = format!("$End{section}");
                loop {
                    match lines.next() {
                        Some((_, l)) if l == closing => break,
                        Some(_) => {}
                        None => {
                            return Err(err(lines.last, format!("missing {closing}")));
                        }
                    }
                }
            }
            other => return Err(err(ln, format!("unexpected content {other:?}"))),
        }
    }

    let ids = node_ids.ok_or_else(|| err(lines.last, "missing $Nodes section"))?;
    let tris = triangles.ok_or_else(|| err(lines.last, "missing $Elements section"))?;
    if tris.is_empty() {
        return Err(BemError::EmptyMesh);
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} non-triangle elements");
    }
    let elements = tris
        .iter()
        .map(|t| {
            let mut out = [0usize; 3];
            for k in 0..3 {
                out[k] = *ids.get(&t[k]).ok_or_else(|| {
                    BemError::InvalidMesh(format!("triangle references unknown node id {}", t[k]))
                })?;
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TriangleMesh::new(vertices, elements)?.with_skipped(skipped))
}

/// Serializes a mesh as Gmsh 2.2 ASCII (1-based node and element ids).
pub fn write_gmsh(mesh: &TriangleMesh) -> String {
    let mut s = String::new();
    s.push_str("$MeshFormat\n2.2 0 8\n$EndMeshFormat\n$Nodes\n");
    let _ = writeln!(s, "{}", mesh.vertex_count());
    for (i, v) in mesh.vertices().iter().enumerate() {
        let _ = writeln!(s, "{} {:?} {:?} {:?}", i + 1, v[0], v[1], v[2]);
    }
    s.push_str("$EndNodes\n$Elements\n");
    let _ = writeln!(s, "{}", mesh.element_count());
    for (i, e) in mesh.elements().iter().enumerate() {
        let _ = writeln!(s, "{} 2 2 0 1 {} {} {}", i + 1, e[0] + 1, e[1] + 1, e[2] + 1);
    }
    s.push_str("$EndElements\n");
    s
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    fn mesh_parts() -> impl Strategy<Value = (Vec<[f64; 3]>, Vec<[usize; 3]>)> {
        prop::collection::vec([-1e3f64..1e3, -1e3f64..1e3, -1e3f64..1e3], 3..30).prop_flat_map(|vertices| {
            let n = vertices.len();
            let tri = prop::sample::subsequence((0..n).collect::<Vec<_>>(), 3).prop_map(|v| [v[0], v[1], v[2]]);
            (Just(vertices), prop::collection::vec(tri, 1..30))
        })
    }

    proptest! {
        #[test]
        fn write_then_parse_round_trips((vertices, elements) in mesh_parts()) {
            let mesh = TriangleMesh::new(vertices, elements);
            prop_assume!(mesh.is_ok());
            let mesh = mesh.unwrap();
            let back = parse_gmsh(&write_gmsh(&mesh)).unwrap();
            prop_assert_eq!(back.vertices(), mesh.vertices());
            prop_assert_eq!(back.elements(), mesh.elements());
        }
    }
}
