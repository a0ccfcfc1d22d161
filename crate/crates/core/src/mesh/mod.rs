//! Triangular surface meshes and per-element geometry.

pub(crate) mod geometry;
mod gmsh;
mod icosphere;

pub use geometry::{precompute_geometry, ElementGeometry};
pub use gmsh::{load_mesh, parse_gmsh, write_gmsh};
pub use icosphere::{refine_unit_sphere, MAX_SPHERE_LEVEL};

use std::collections::HashMap;

use crate::error::{BemError, Result};
use crate::vec3::{self, BoundingBox, Vec3};

/// Relative area tolerance below which an element counts as degenerate.
pub const DEGENERACY_TOLERANCE: f64 = 1e-14;

/// A flat-triangle surface mesh. Vertex order of each element fixes its
/// normal by the right-hand rule.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<Vec3>,
    elements: Vec<[usize; 3]>,
    skipped_elements: usize,
}

impl TriangleMesh {
    /// Builds a mesh, checking vertex indices and element areas.
    pub fn new(vertices: Vec<Vec3>, elements: Vec<[usize; 3]>) -> Result<Self> {
        let mesh = Self::from_parts_unchecked(vertices, elements);
        mesh.validate()?;
        Ok(mesh)
    }

    /// Builds a mesh without validation. Geometry precomputation still rejects
    /// degenerate elements.
    pub fn from_parts_unchecked(vertices: Vec<Vec3>, elements: Vec<[usize; 3]>) -> Self {
        Self {
            vertices,
            elements,
            skipped_elements: 0,
        }
    }

    pub(crate) fn with_skipped(mut self, skipped: usize) -> Self {
        self.skipped_elements = skipped;
        self
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn elements(&self) -> &[[usize; 3]] {
        &self.elements
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn element_count(&self) -> usize {
        self.elements.len()
    }

    /// Non-triangle elements dropped while loading.
    pub fn skipped_elements(&self) -> usize {
        self.skipped_elements
    }

    pub fn corners(&self, element: usize) -> [Vec3; 3] {
        let [a, b, c] = self.elements[element];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn bounding_box(&self) -> BoundingBox {
        BoundingBox::from_points(self.vertices.iter())
    }

    pub fn element_area(&self, element: usize) -> f64 {
        let [a, b, c] = self.corners(element);
        0.5 * vec3::norm(vec3::cross(vec3::sub(b, a), vec3::sub(c, a)))
    }

    pub fn total_area(&self) -> f64 {
        (0..self.element_count()).map(|e| self.element_area(e)).sum()
    }

    /// Index range and area checks.
    pub fn validate(&self) -> Result<()> {
        if self.elements.is_empty() {
            return Err(BemError::EmptyMesh);
        }
        let nv = self.vertices.len();
        for (e, el) in self.elements.iter().enumerate() {
            if let Some(&bad) = el.iter().find(|&&v| v >= nv) {
                return Err(BemError::InvalidMesh(format!(
                    "element {e} references vertex {bad} but the mesh has {nv} vertices"
                )));
            }
        }
        let diag = self.bounding_box().diameter();
        let min_area = DEGENERACY_TOLERANCE * diag * diag;
        for e in 0..self.element_count() {
            let area = self.element_area(e);
            if !(area > min_area) {
                return Err(BemError::Geometry {
                    element: e,
                    message: format!("area {area:e} below tolerance {min_area:e}"),
                });
            }
        }
        Ok(())
    }

    /// Directed-edge multiset of all elements.
    fn directed_edges(&self) -> HashMap<(usize, usize), usize> {
        let mut edges = HashMap::with_capacity(3 * self.elements.len());
        for el in &self.elements {
            for k in 0..3 {
                *edges.entry((el[k], el[(k + 1) % 3])).or_insert(0) += 1;
            }
        }
        edges
    }

    /// True if every undirected edge is shared by exactly two elements.
    pub fn is_closed(&self) -> bool {
        let mut undirected: HashMap<(usize, usize), usize> = HashMap::new();
        for el in &self.elements {
            for k in 0..3 {
                let (a, b) = (el[k], el[(k + 1) % 3]);
                *undirected.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        undirected.values().all(|&c| c == 2)
    }

    /// Signed enclosed volume (divergence theorem); positive for outward normals.
    pub fn signed_volume(&self) -> f64 {
        self.elements
            .iter()
            .map(|&[a, b, c]| {
                vec3::dot(
                    self.vertices[a],
                    vec3::cross(self.vertices[b], self.vertices[c]),
                ) / 6.0
            })
            .sum()
    }

    /// Checks that the mesh is closed, consistently oriented and has outward
    /// normals. Inconsistent orientation is reported, never repaired.
    pub fn check_closed_outward(&self) -> Result<()> {
        if !self.is_closed() {
            return Err(BemError::InvalidMesh(
                "mesh is not closed: some edge is not shared by exactly two elements".into(),
            ));
        }
        let edges = self.directed_edges();
        if let Some((&(a, b), _)) = edges.iter().find(|(_, &c)| c != 1) {
            return Err(BemError::InvalidMesh(format!(
                "inconsistent orientation across edge ({a}, {b})"
            )));
        }
        let vol = self.signed_volume();
        if vol <= 0.0 {
            return Err(BemError::InvalidMesh(format!(
                "normals point inward (signed volume {vol:e})"
            )));
        }
        Ok(())
    }

    /// Mean edge length over all element edges.
    pub fn mean_edge_length(&self) -> f64 {
        let mut sum = 0.0;
        for e in 0..self.element_count() {
            let c = self.corners(e);
            for k in 0..3 {
                sum += vec3::dist(c[k], c[(k + 1) % 3]);
            }
        }
        sum / (3 * self.element_count()) as f64
    }

    /// Elements incident to each vertex.
    pub fn vertex_elements(&self) -> Vec<Vec<usize>> {
        let mut map = vec![Vec::new(); self.vertices.len()];
        for (e, el) in self.elements.iter().enumerate() {
            for &v in el {
                map[v].push(e);
            }
        }
        map
    }

    /// Area-weighted unit normal at each vertex.
    pub fn vertex_normals(&self) -> Vec<Vec3> {
        let mut normals = vec![[0.0; 3]; self.vertices.len()];
        for el in &self.elements {
            let [a, b, c] = [self.vertices[el[0]], self.vertices[el[1]], self.vertices[el[2]]];
            // cross product length is twice the area, so this is area weighted
            let n = vec3::cross(vec3::sub(b, a), vec3::sub(c, a));
            for &v in el {
                normals[v] = vec3::add(normals[v], n);
            }
        }
        normals
            .into_iter()
            .map(|n| {
                let len = vec3::norm(n);
                if len > 0.0 {
                    vec3::scale(n, 1.0 / len)
                } else {
                    n
                }
            })
            .collect()
    }
}
