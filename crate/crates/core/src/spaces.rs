//! Piecewise constant and piecewise linear function spaces on a mesh.

use std::sync::Arc;

use crate::error::{BemError, Result};
use crate::mesh::{ElementGeometry, TriangleMesh};
use crate::quadrature::QuadratureRule;
use crate::sparse::SparseMatrix;
use crate::vec3::{self, BoundingBox, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SpaceFamily {
    P0,
    P1Continuous,
    P1Discontinuous,
}

impl SpaceFamily {
    pub fn local_dofs(self) -> usize {
        match self {
            SpaceFamily::P0 => 1,
            _ => 3,
        }
    }

    pub fn is_p1(self) -> bool {
        !matches!(self, SpaceFamily::P0)
    }
}

/// A function space with its local-to-global DOF map. For P1 families the
/// local DOF order follows the element's vertex order.
#[derive(Debug, Clone)]
pub struct FunctionSpace {
    mesh: Arc<TriangleMesh>,
    family: SpaceFamily,
    dof_count: usize,
    local_to_global: Vec<usize>,
    // CSR: elements and local indices supporting each DOF
    support_offsets: Vec<usize>,
    support: Vec<(usize, u8)>,
}

impl FunctionSpace {
    pub fn new(mesh: Arc<TriangleMesh>, family: SpaceFamily) -> Self {
        let m = mesh.element_count();
        let (dof_count, local_to_global) = match family {
            SpaceFamily::P0 => (m, (0..m).collect()),
            SpaceFamily::P1Discontinuous => (3 * m, (0..3 * m).collect()),
            SpaceFamily::P1Continuous => {
                // number only vertices referenced by some element
                let mut id = vec![usize::MAX; mesh.vertex_count()];
                let mut next = 0;
                let mut map = Vec::with_capacity(3 * m);
                for el in mesh.elements() {
                    for &v in el {
                        if id[v] == usize::MAX {
                            id[v] = next;
                            next += 1;
                        }
                    }
                }
                // renumber in vertex order so DOF i is the i-th used vertex
                let mut order = 0;
                for slot in id.iter_mut().filter(|s| **s != usize::MAX) {
                    *slot = order;
                    order += 1;
                }
                for el in mesh.elements() {
                    for &v in el {
                        map.push(id[v]);
                    }
                }
                (next, map)
            }
        };
        let nl = family.local_dofs();
        let mut counts = vec![0usize; dof_count + 1];
        for &g in &local_to_global {
            counts[g + 1] += 1;
        }
        for i in 0..dof_count {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut support = vec![(0usize, 0u8); local_to_global.len()];
        for (k, &g) in local_to_global.iter().enumerate() {
            support[fill[g]] = (k / nl, (k % nl) as u8);
            fill[g] += 1;
        }
        Self {
            mesh,
            family,
            dof_count,
            local_to_global,
            support_offsets: counts,
            support,
        }
    }

    pub fn mesh(&self) -> &Arc<TriangleMesh> {
        &self.mesh
    }

    pub fn family(&self) -> SpaceFamily {
        self.family
    }

    pub fn dof_count(&self) -> usize {
        self.dof_count
    }

    pub fn local_dofs(&self) -> usize {
        self.family.local_dofs()
    }

    /// Global DOFs of element `e` in local order.
    #[inline]
    pub fn element_dofs(&self, e: usize) -> &[usize] {
        let n = self.family.local_dofs();
        &self.local_to_global[e * n..(e + 1) * n]
    }

    /// (element, local index) pairs on which DOF `dof` is supported.
    pub fn dof_support(&self, dof: usize) -> &[(usize, u8)] {
        &self.support[self.support_offsets[dof]..self.support_offsets[dof + 1]]
    }

    pub fn same_mesh(&self, other: &FunctionSpace) -> bool {
        Arc::ptr_eq(&self.mesh, &other.mesh) || *self.mesh == *other.mesh
    }

    /// Representative point of each DOF (centroid for P0, vertex for P1).
    pub fn dof_positions(&self) -> Vec<Vec3> {
        let mut pos = vec![[0.0; 3]; self.dof_count];
        for dof in 0..self.dof_count {
            let (e, l) = self.dof_support(dof)[0];
            let c = self.mesh.corners(e);
            pos[dof] = match self.family {
                SpaceFamily::P0 => vec3::scale(vec3::add(vec3::add(c[0], c[1]), c[2]), 1.0 / 3.0),
                _ => c[l as usize],
            };
        }
        pos
    }

    /// Bounding box of each DOF's support.
    pub fn dof_support_boxes(&self) -> Vec<BoundingBox> {
        (0..self.dof_count)
            .map(|dof| {
                let mut bb = BoundingBox::empty();
                for &(e, _) in self.dof_support(dof) {
                    for p in self.mesh.corners(e) {
                        bb.include(p);
                    }
                }
                bb
            })
            .collect()
    }
}

/// Convenience constructor.
pub fn build_space(mesh: Arc<TriangleMesh>, family: SpaceFamily) -> FunctionSpace {
    FunctionSpace::new(mesh, family)
}

/// Reference basis values at quadrature points and reference gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisTable {
    pub local_dofs: usize,
    pub points: usize,
    /// values[l * points + q]
    pub values: Vec<f64>,
    /// ∂/∂ξ, ∂/∂η per local DOF
    pub gradients: Vec<[f64; 2]>,
}

impl BasisTable {
    #[inline]
    pub fn value(&self, local: usize, point: usize) -> f64 {
        self.values[local * self.points + point]
    }
}

#[inline]
pub fn reference_basis(family: SpaceFamily, xi: f64, eta: f64) -> [f64; 3] {
    match family {
        SpaceFamily::P0 => [1.0, 0.0, 0.0],
        _ => [1.0 - xi - eta, xi, eta],
    }
}

const P1_GRADIENTS: [[f64; 2]; 3] = [[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]];

pub fn evaluate_basis(space: &FunctionSpace, rule: &QuadratureRule) -> BasisTable {
    evaluate_basis_family(space.family(), rule)
}

pub fn evaluate_basis_family(family: SpaceFamily, rule: &QuadratureRule) -> BasisTable {
    let nl = family.local_dofs();
    let np = rule.len();
    let mut values = vec![0.0; nl * np];
    for (q, p) in rule.points().iter().enumerate() {
        let b = reference_basis(family, p[0], p[1]);
        for l in 0..nl {
            values[l * np + q] = b[l];
        }
    }
    let gradients = match family {
        SpaceFamily::P0 => vec![[0.0, 0.0]],
        _ => P1_GRADIENTS.to_vec(),
    };
    BasisTable {
        local_dofs: nl,
        points: np,
        values,
        gradients,
    }
}

/// Surface gradients of the three P1 functions on element `e`.
pub(crate) fn p1_surface_gradients(corners: &[Vec3; 3]) -> [Vec3; 3] {
    let e1 = vec3::sub(corners[1], corners[0]);
    let e2 = vec3::sub(corners[2], corners[0]);
    let g11 = vec3::dot(e1, e1);
    let g12 = vec3::dot(e1, e2);
    let g22 = vec3::dot(e2, e2);
    let det = g11 * g22 - g12 * g12;
    let mut out = [[0.0; 3]; 3];
    for (l, grad) in P1_GRADIENTS.iter().enumerate() {
        // G⁻¹ ∇_ref, then push forward by [e1 e2]
        let a = (g22 * grad[0] - g12 * grad[1]) / det;
        let b = (-g12 * grad[0] + g11 * grad[1]) / det;
        out[l] = vec3::add(vec3::scale(e1, a), vec3::scale(e2, b));
    }
    out
}

/// curl_Γ φ = n × ∇_Γ φ for the three local P1 functions of an element.
pub(crate) fn p1_surface_curls(corners: &[Vec3; 3], normal: Vec3) -> [Vec3; 3] {
    p1_surface_gradients(corners).map(|g| vec3::cross(normal, g))
}

/// Constant surface curl n × ∇_Γ φ of a local P1 basis function.
pub fn surface_curl(
    space: &FunctionSpace,
    geometry: &ElementGeometry,
    element: usize,
    local_dof: usize,
) -> Result<Vec3> {
    if !space.family().is_p1() {
        return Err(BemError::Unsupported(
            "surface curl of a piecewise constant space vanishes; use a P1 space".into(),
        ));
    }
    if local_dof >= 3 {
        return Err(BemError::InvalidArgument(format!("local dof {local_dof} out of range")));
    }
    let curls = p1_surface_curls(&geometry.element_corners(element), geometry.normals[element]);
    Ok(curls[local_dof])
}

/// Sparse maps of the HYPS-via-SLP construction. `q[j]` sends continuous P1
/// coefficients to the discontinuous-P1 coefficients of the j-th component of
/// the surface curl; `p[j]` to those of (function · n_j). Row index is
/// 3·element + local index.
#[derive(Debug, Clone)]
pub struct TransformMatrices {
    pub q: [SparseMatrix; 3],
    pub p: [SparseMatrix; 3],
}

pub fn sparse_transform_matrices(
    continuous: &FunctionSpace,
    discontinuous: &FunctionSpace,
    geometry: &ElementGeometry,
) -> Result<TransformMatrices> {
    if !continuous.same_mesh(discontinuous) {
        return Err(BemError::InvalidArgument("spaces are defined on different meshes".into()));
    }
    if continuous.family() != SpaceFamily::P1Continuous
        || discontinuous.family() != SpaceFamily::P1Discontinuous
    {
        return Err(BemError::InvalidArgument(
            "expected a continuous and a discontinuous P1 space".into(),
        ));
    }
    let m = continuous.mesh().element_count();
    let (rows, cols) = (discontinuous.dof_count(), continuous.dof_count());
    let mut q: [Vec<(usize, usize, f64)>; 3] = Default::default();
    let mut p: [Vec<(usize, usize, f64)>; 3] = Default::default();
    for e in 0..m {
        let n = geometry.normals[e];
        let curls = p1_surface_curls(&geometry.element_corners(e), n);
        let cdofs = continuous.element_dofs(e);
        let ddofs = discontinuous.element_dofs(e);
        for l in 0..3 {
            let row = ddofs[l];
            for j in 0..3 {
                // curl is constant on the element: every local DOF carries it
                for (lc, &col) in cdofs.iter().enumerate() {
                    if curls[lc][j] != 0.0 {
                        q[j].push((row, col, curls[lc][j]));
                    }
                }
                if n[j] != 0.0 {
                    p[j].push((row, cdofs[l], n[j]));
                }
            }
        }
    }
    let build = |t: Vec<(usize, usize, f64)>| SparseMatrix::from_triplets(rows, cols, t);
    let [q0, q1, q2] = q;
    let [p0, p1, p2] = p;
    Ok(TransformMatrices {
        q: [build(q0)?, build(q1)?, build(q2)?],
        p: [build(p0)?, build(p1)?, build(p2)?],
    })
}

/// Galerkin mass matrix M[i, j] = ∫ ψ_i φ_j.
pub fn assemble_mass(
    test: &FunctionSpace,
    trial: &FunctionSpace,
    geometry: &ElementGeometry,
    rule: &QuadratureRule,
) -> Result<SparseMatrix> {
    if !test.same_mesh(trial) {
        return Err(BemError::InvalidArgument("spaces are defined on different meshes".into()));
    }
    let tb = evaluate_basis(test, rule);
    let rb = evaluate_basis(trial, rule);
    let m = test.mesh().element_count();
    let local: Vec<Vec<(usize, usize, f64)>> = crate::par::map_indexed(m, |e| {
        let jac = geometry.jacobians[e];
        let mut out = Vec::with_capacity(9);
        for (li, &gi) in test.element_dofs(e).iter().enumerate() {
            for (lj, &gj) in trial.element_dofs(e).iter().enumerate() {
                let v: f64 = (0..rule.len())
                    .map(|q| rule.weights()[q] * tb.value(li, q) * rb.value(lj, q))
                    .sum();
                out.push((gi, gj, v * jac));
            }
        }
        out
    });
    SparseMatrix::from_triplets(
        test.dof_count(),
        trial.dof_count(),
        local.into_iter().flatten().collect(),
    )
}
