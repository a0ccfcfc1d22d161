use super::{TriangleMesh, DEGENERACY_TOLERANCE};
use crate::error::{BemError, Result};
use crate::quadrature::QuadratureRule;
use crate::vec3::{self, Vec3};

/// Per-element geometry, one contiguous array per field ordered by element
/// index. Quadrature points are element-major.
#[derive(Debug, Clone)]
pub struct ElementGeometry {
    pub normals: Vec<Vec3>,
    /// Integration element |J| = 2·area.
    pub jacobians: Vec<f64>,
    pub areas: Vec<f64>,
    pub centroids: Vec<Vec3>,
    pub diameters: Vec<f64>,
    /// Three corners per element.
    pub corners: Vec<Vec3>,
    /// `rule.len()` mapped quadrature points per element.
    pub points: Vec<Vec3>,
    pub rule: QuadratureRule,
}

impl ElementGeometry {
    pub fn element_count(&self) -> usize {
        self.normals.len()
    }

    pub fn points_per_element(&self) -> usize {
        self.rule.len()
    }

    pub fn element_points(&self, e: usize) -> &[Vec3] {
        let n = self.rule.len();
        &self.points[e * n..(e + 1) * n]
    }

    pub fn element_corners(&self, e: usize) -> [Vec3; 3] {
        [self.corners[3 * e], self.corners[3 * e + 1], self.corners[3 * e + 2]]
    }

    /// Maps reference coordinates (ξ, η) on element `e` to a global point.
    #[inline]
    pub fn map_point(&self, e: usize, xi: f64, eta: f64) -> Vec3 {
        map_reference(&self.element_corners(e), xi, eta)
    }
}

#[inline]
pub(crate) fn map_reference(c: &[Vec3; 3], xi: f64, eta: f64) -> Vec3 {
    let l0 = 1.0 - xi - eta;
    [
        l0 * c[0][0] + xi * c[1][0] + eta * c[2][0],
        l0 * c[0][1] + xi * c[1][1] + eta * c[2][1],
        l0 * c[0][2] + xi * c[1][2] + eta * c[2][2],
    ]
}

/// Computes normals, Jacobians, areas and mapped quadrature points.
pub fn precompute_geometry(mesh: &TriangleMesh, rule: &QuadratureRule) -> Result<ElementGeometry> {
    if rule.is_empty() {
        return Err(BemError::InvalidArgument("empty quadrature rule".into()));
    }
    let m = mesh.element_count();
    let diag = mesh.bounding_box().diameter();
    let min_area = DEGENERACY_TOLERANCE * diag * diag;
    let mut g = ElementGeometry {
        normals: Vec::with_capacity(m),
        jacobians: Vec::with_capacity(m),
        areas: Vec::with_capacity(m),
        centroids: Vec::with_capacity(m),
        diameters: Vec::with_capacity(m),
        corners: Vec::with_capacity(3 * m),
        points: Vec::with_capacity(m * rule.len()),
        rule: rule.clone(),
    };
    for e in 0..m {
        let c = mesh.corners(e);
        let n = vec3::cross(vec3::sub(c[1], c[0]), vec3::sub(c[2], c[0]));
        let jac = vec3::norm(n);
        let area = 0.5 * jac;
        if !(area > min_area) || !jac.is_finite() {
            return Err(BemError::Geometry {
                element: e,
                message: format!("degenerate triangle (area {area:e})"),
            });
        }
        g.normals.push(vec3::scale(n, 1.0 / jac));
        g.jacobians.push(jac);
        g.areas.push(area);
        g.centroids.push(vec3::scale(vec3::add(vec3::add(c[0], c[1]), c[2]), 1.0 / 3.0));
        g.diameters.push(
            vec3::dist(c[0], c[1])
                .max(vec3::dist(c[1], c[2]))
                .max(vec3::dist(c[2], c[0])),
        );
        g.corners.extend_from_slice(&c);
        for p in rule.points() {
            g.points.push(map_reference(&c, p[0], p[1]));
        }
    }
    Ok(g)
}
