//! Regularized tensor rules for element pairs that share a vertex, an edge,
//! or coincide. The 4D pair domain is split into subdomains on which a
//! Duffy-type substitution absorbs the 1/|x − y| singularity into the
//! Jacobian, then each subdomain is integrated with tensor Gauss–Legendre.
//!
//! Internally both elements are parametrized over {0 ≤ t ≤ s ≤ 1} with
//! χ(s, t) = Q0 + s(Q1 − Q0) + t(Q2 − Q1), where the aligned corners Q place
//! the shared vertex at Q0 (and the shared edge on Q0Q1). Output points are
//! converted back to each element's own (ξ, η) coordinates, so callers never
//! see the alignment.
//!
//! Subdomain counts: identical 6, shared edge 4, shared vertex 2. Every
//! subdomain comes with its test/trial mirror image, so each rule is exactly
//! symmetric under swapping the two elements.
//!
//! Shared edge: with the edge at t = 0 in both elements, the pair domain
//! splits into {y_s ≤ x_s} and its mirror. The first half is covered by
//!   x_t ≤ x_s − y_s + y_t:  x = ξ(1, η1η3),  y = ξ(1 − η1η2, η1(1 − η2)),  J = ξ³η1²
//!   x_t ≥ x_s − y_s + y_t:  x = ξ(1, η1),    y = ξ(1 − η1η2η3, η1η2(1 − η3)),  J = ξ³η1²η2
//! and in both maps |x − y| carries the factor ξη1 absorbed by J.

use std::collections::HashMap;
use std::sync::Arc;

use parking_lot::RwLock;

use super::gauss::gauss_legendre_unit;
use crate::error::{BemError, Result};
use crate::mesh::TriangleMesh;

pub const IDENTICAL_SUBDOMAINS: usize = 6;
pub const EDGE_SUBDOMAINS: usize = 4;
pub const VERTEX_SUBDOMAINS: usize = 2;

/// Local-index permutation: aligned corner k is the element's vertex `perm[k]`.
pub type Permutation = [u8; 3];

const IDENTITY: Permutation = [0, 1, 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SingularityClass {
    Disjoint,
    SharedVertex {
        test: Permutation,
        trial: Permutation,
    },
    SharedEdge {
        test: Permutation,
        trial: Permutation,
    },
    Identical {
        test: Permutation,
        trial: Permutation,
    },
}

impl SingularityClass {
    pub fn is_disjoint(&self) -> bool {
        matches!(self, SingularityClass::Disjoint)
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            SingularityClass::Disjoint => "disjoint",
            SingularityClass::SharedVertex { .. } => "shared-vertex",
            SingularityClass::SharedEdge { .. } => "shared-edge",
            SingularityClass::Identical { .. } => "identical",
        }
    }
}

/// Classifies an element pair by the number of shared vertex indices.
pub fn classify_pair(elem_a: usize, elem_b: usize, mesh: &TriangleMesh) -> SingularityClass {
    let a = mesh.elements()[elem_a];
    let b = mesh.elements()[elem_b];
    classify_vertices(&a, &b, elem_a == elem_b)
}

pub(crate) fn classify_vertices(a: &[usize; 3], b: &[usize; 3], same: bool) -> SingularityClass {
    if same {
        return SingularityClass::Identical {
            test: IDENTITY,
            trial: IDENTITY,
        };
    }
    // shared[k] = (local index in a, local index in b)
    let mut shared = [(0u8, 0u8); 3];
    let mut count = 0;
    for (i, va) in a.iter().enumerate() {
        if let Some(j) = b.iter().position(|vb| vb == va) {
            shared[count] = (i as u8, j as u8);
            count += 1;
        }
    }
    // order shared vertices by global index so (a, b) and (b, a) align alike
    shared[..count].sort_by_key(|&(i, _)| a[i as usize]);
    let complete = |first: &[u8]| -> Permutation {
        let mut p = [0u8; 3];
        p[..first.len()].copy_from_slice(first);
        let mut k = first.len();
        for v in 0..3u8 {
            if !first.contains(&v) {
                p[k] = v;
                k += 1;
            }
        }
        p
    };
    match count {
        0 => SingularityClass::Disjoint,
        1 => SingularityClass::SharedVertex {
            test: complete(&[shared[0].0]),
            trial: complete(&[shared[0].1]),
        },
        2 => SingularityClass::SharedEdge {
            test: complete(&[shared[0].0, shared[1].0]),
            trial: complete(&[shared[0].1, shared[1].1]),
        },
        // a distinct element over the same three vertices
        _ => SingularityClass::Identical {
            test: [shared[0].0, shared[1].0, shared[2].0],
            trial: [shared[0].1, shared[1].1, shared[2].1],
        },
    }
}

/// 4D rule over a test × trial element pair. Points are
/// (ξ_test, η_test, ξ_trial, η_trial); weights include every transformation
/// Jacobian but not the element Jacobians |J_a|·|J_b|.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorRule {
    pub points: Vec<[f64; 4]>,
    pub weights: Vec<f64>,
}

impl TensorRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Σ w f(point) over the reference pair domain.
    pub fn integrate(&self, f: impl Fn(&[f64; 4]) -> f64) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| w * f(p))
            .sum()
    }
}

type Aligned = ([f64; 2], [f64; 2], f64);

/// Subdomain maps from the unit 4-cube: returns (x(s,t), y(s,t), jacobian).
fn identical_regions(x: f64, a: f64, b: f64, c: f64) -> [Aligned; 3] {
    let j = x * x * x * a * a * b;
    [
        ([x, x * (1.0 - a + a * b)], [x * (1.0 - a * b * c), x * (1.0 - a)], j),
        ([x, x * a * (1.0 - b + b * c)], [x * (1.0 - a * b), x * a * (1.0 - b)], j),
        ([x * (1.0 - a * b * c), x * a * (1.0 - b * c)], [x, x * a * (1.0 - b)], j),
    ]
}

fn edge_regions(x: f64, a: f64, b: f64, c: f64) -> [Aligned; 2] {
    let j = x * x * x * a * a;
    [
        ([x, x * a * c], [x * (1.0 - a * b), x * a * (1.0 - b)], j),
        ([x, x * a], [x * (1.0 - a * b * c), x * a * b * (1.0 - c)], j * b),
    ]
}

fn vertex_regions(x: f64, a: f64, b: f64, c: f64) -> [Aligned; 1] {
    [([x, x * a], [x * b, x * b * c], x * x * x * b)]
}

/// Aligned (s, t) → the element's own (ξ, η).
#[inline]
fn unalign(st: [f64; 2], perm: Permutation) -> [f64; 2] {
    let aligned = [1.0 - st[0], st[0] - st[1], st[1]];
    let mut lambda = [0.0; 3];
    for k in 0..3 {
        lambda[perm[k] as usize] = aligned[k];
    }
    [lambda[1], lambda[2]]
}

/// Builds the regularized rule for a touching pair with `base_order` Gauss
/// points per dimension.
pub fn singular_rule(class: SingularityClass, base_order: usize) -> Result<TensorRule> {
    if base_order == 0 {
        return Err(BemError::InvalidArgument("base order must be positive".into()));
    }
    let (nodes, gw) = gauss_legendre_unit(base_order);
    let (test, trial) = match class {
        SingularityClass::Disjoint => {
            return Err(BemError::InvalidArgument(
                "disjoint pairs take the regular tensor rule, not a singular rule".into(),
            ))
        }
        SingularityClass::SharedVertex { test, trial }
        | SingularityClass::SharedEdge { test, trial }
        | SingularityClass::Identical { test, trial } => (test, trial),
    };
    let subdomains = match class {
        SingularityClass::Identical { .. } => IDENTICAL_SUBDOMAINS,
        SingularityClass::SharedEdge { .. } => EDGE_SUBDOMAINS,
        _ => VERTEX_SUBDOMAINS,
    };
    let n4 = base_order.pow(4);
    let mut rule = TensorRule {
        points: Vec::with_capacity(subdomains * n4),
        weights: Vec::with_capacity(subdomains * n4),
    };
    let mut push = |x: [f64; 2], y: [f64; 2], w: f64| {
        let p = unalign(x, test);
        let q = unalign(y, trial);
        rule.points.push([p[0], p[1], q[0], q[1]]);
        rule.weights.push(w);
    };
    for (i0, &x) in nodes.iter().enumerate() {
        for (i1, &a) in nodes.iter().enumerate() {
            for (i2, &b) in nodes.iter().enumerate() {
                for (i3, &c) in nodes.iter().enumerate() {
                    let w = gw[i0] * gw[i1] * gw[i2] * gw[i3];
                    match class {
                        SingularityClass::Identical { .. } => {
                            // each region plus its mirror image
                            for (px, py, j) in identical_regions(x, a, b, c) {
                                push(px, py, w * j);
                                push(py, px, w * j);
                            }
                        }
                        SingularityClass::SharedEdge { .. } => {
                            for (px, py, j) in edge_regions(x, a, b, c) {
                                push(px, py, w * j);
                                push(py, px, w * j);
                            }
                        }
                        SingularityClass::SharedVertex { .. } => {
                            for (px, py, j) in vertex_regions(x, a, b, c) {
                                push(px, py, w * j);
                                push(py, px, w * j);
                            }
                        }
                        SingularityClass::Disjoint => unreachable!(),
                    }
                }
            }
        }
    }
    debug_assert_eq!(rule.len(), subdomains * n4);
    Ok(rule)
}

/// Thread-safe memo of singular rules keyed by class (including alignment).
#[derive(Debug)]
pub struct SingularRuleCache {
    base_order: usize,
    rules: RwLock<HashMap<SingularityClass, Arc<TensorRule>>>,
}

impl SingularRuleCache {
    pub fn new(base_order: usize) -> Self {
        Self {
            base_order,
            rules: RwLock::new(HashMap::new()),
        }
    }

    pub fn base_order(&self) -> usize {
        self.base_order
    }

    pub fn get(&self, class: SingularityClass) -> Result<Arc<TensorRule>> {
        if let Some(r) = self.rules.read().get(&class) {
            return Ok(r.clone());
        }
        let rule = Arc::new(singular_rule(class, self.base_order)?);
        Ok(self.rules.write().entry(class).or_insert(rule).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::geometry::map_reference;
    use crate::quadrature::regular_rule;
    use crate::vec3::{self, Vec3};

    // two triangles sharing vertex 0, three sharing an edge, etc.
    fn pair_mesh() -> TriangleMesh {
        let v = vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [1.0, 1.0, 0.3],
            [-0.8, -0.2, 0.4],
            [-0.1, -0.9, -0.2],
        ];
        // 0: base, 1: shares edge (1,2), 2: shares vertex 0, 3: disjoint from 0
        let e = vec![[0, 1, 2], [2, 1, 3], [4, 5, 0], [3, 4, 5]];
        TriangleMesh::new(v, e).unwrap()
    }

    fn corners(m: &TriangleMesh, e: usize) -> [Vec3; 3] {
        m.corners(e)
    }

    fn area(c: &[Vec3; 3]) -> f64 {
        0.5 * vec3::norm(vec3::cross(vec3::sub(c[1], c[0]), vec3::sub(c[2], c[0])))
    }

    #[test]
    fn classification() {
        let m = pair_mesh();
        assert!(matches!(classify_pair(0, 0, &m), SingularityClass::Identical { .. }));
        assert!(matches!(classify_pair(0, 1, &m), SingularityClass::SharedEdge { .. }));
        assert!(matches!(classify_pair(0, 2, &m), SingularityClass::SharedVertex { .. }));
        assert_eq!(classify_pair(0, 3, &m), SingularityClass::Disjoint);
        // swapping the pair swaps the alignments
        for (a, b) in [(0, 1), (0, 2), (1, 3)] {
            match (classify_pair(a, b, &m), classify_pair(b, a, &m)) {
                (SingularityClass::SharedEdge { test, trial }, SingularityClass::SharedEdge { test: t2, trial: r2 })
                | (SingularityClass::SharedVertex { test, trial }, SingularityClass::SharedVertex { test: t2, trial: r2 }) => {
                    assert_eq!((test, trial), (r2, t2));
                }
                other => panic!("unexpected {other:?}"),
            }
        }
        for a in 0..4 {
            for b in 0..4 {
                assert_eq!(
                    classify_pair(a, b, &m).kind_name(),
                    classify_pair(b, a, &m).kind_name()
                );
            }
        }
    }

    #[test]
    fn alignment_maps_shared_vertices_together() {
        let m = pair_mesh();
        for (a, b) in [(0, 1), (1, 0), (0, 2), (2, 0), (1, 3)] {
            let (ta, tb, k) = match classify_pair(a, b, &m) {
                SingularityClass::SharedEdge { test, trial } => (test, trial, 2),
                SingularityClass::SharedVertex { test, trial } => (test, trial, 1),
                other => panic!("{other:?}"),
            };
            for i in 0..k {
                assert_eq!(
                    m.elements()[a][ta[i] as usize],
                    m.elements()[b][tb[i] as usize]
                );
            }
        }
    }

    #[test]
    fn constant_integrand_gives_area_product() {
        let m = pair_mesh();
        for (a, b) in [(0, 0), (0, 1), (1, 0), (0, 2), (2, 0), (1, 1)] {
            let class = classify_pair(a, b, &m);
            let rule = singular_rule(class, 4).unwrap();
            let ca = corners(&m, a);
            let cb = corners(&m, b);
            let ja = 2.0 * area(&ca);
            let jb = 2.0 * area(&cb);
            let q = ja * jb * rule.integrate(|_| 1.0);
            let exact = area(&ca) * area(&cb);
            assert!(((q - exact) / exact).abs() < 1e-10, "{a},{b}: {q} vs {exact}");
        }
    }

    #[test]
    fn polynomial_integrands_match_product_rule() {
        // Exact for polynomials of degree ≤ 4 on each element, the regular
        // product rule is an independent reference for the subdomain maps.
        let m = pair_mesh();
        let reg = regular_rule(4).unwrap();
        let polys: [fn(Vec3, Vec3) -> f64; 4] = [
            |x, y| x[0] * y[1],
            |x, y| x[0] * x[0] * y[2] + 3.0 * y[0] * y[1] - x[2],
            |x, y| (x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2),
            |x, y| x[1] * x[1] * y[0] * y[0] + x[0] * y[1] * y[2] + 1.0,
        ];
        for (a, b) in [(0, 0), (0, 1), (1, 0), (0, 2), (2, 0), (1, 3), (3, 1)] {
            let class = classify_pair(a, b, &m);
            let rule = singular_rule(class, 4).unwrap();
            let ca = corners(&m, a);
            let cb = corners(&m, b);
            let jab = 4.0 * area(&ca) * area(&cb);
            for f in polys {
                let q = jab
                    * rule.integrate(|p| {
                        f(map_reference(&ca, p[0], p[1]), map_reference(&cb, p[2], p[3]))
                    });
                let mut exact = 0.0;
                for (p, wp) in reg.points().iter().zip(reg.weights()) {
                    for (r, wr) in reg.points().iter().zip(reg.weights()) {
                        exact += wp
                            * wr
                            * f(map_reference(&ca, p[0], p[1]), map_reference(&cb, r[0], r[1]));
                    }
                }
                exact *= jab;
                assert!(
                    (q - exact).abs() < 1e-12 * exact.abs().max(1.0),
                    "pair ({a},{b}) {}: {q} vs {exact}",
                    class.kind_name()
                );
            }
        }
    }

    #[test]
    fn points_inside_and_weights_positive() {
        let m = pair_mesh();
        for (a, b) in [(0, 0), (0, 1), (0, 2)] {
            let rule = singular_rule(classify_pair(a, b, &m), 3).unwrap();
            assert!(rule.weights.iter().all(|&w| w > 0.0));
            for p in &rule.points {
                for (x, y) in [(p[0], p[1]), (p[2], p[3])] {
                    assert!(x >= -1e-15 && y >= -1e-15 && x + y <= 1.0 + 1e-15);
                }
            }
        }
    }

    #[test]
    fn point_counts() {
        let m = pair_mesh();
        let n = |a, b| singular_rule(classify_pair(a, b, &m), 4).unwrap().len();
        assert_eq!(n(0, 0), IDENTICAL_SUBDOMAINS * 256);
        assert_eq!(n(0, 1), EDGE_SUBDOMAINS * 256);
        assert_eq!(n(0, 2), VERTEX_SUBDOMAINS * 256);
    }

    #[test]
    fn disjoint_is_misuse() {
        assert!(singular_rule(SingularityClass::Disjoint, 4).is_err());
    }

    #[test]
    fn cache_returns_same_rule() {
        let m = pair_mesh();
        let cache = SingularRuleCache::new(3);
        let c = classify_pair(0, 1, &m);
        let r1 = cache.get(c).unwrap();
        let r2 = cache.get(c).unwrap();
        assert!(Arc::ptr_eq(&r1, &r2));
    }

    /// ∫_T 1/|x − y| dy for x in the plane of T, summed edge by edge.
    fn planar_potential(c: &[Vec3; 3], x: Vec3) -> f64 {
        let n = vec3::normalize(vec3::cross(vec3::sub(c[1], c[0]), vec3::sub(c[2], c[0])));
        let mut sum = 0.0;
        for k in 0..3 {
            let (p, q) = (c[k], c[(k + 1) % 3]);
            let tau = vec3::normalize(vec3::sub(q, p));
            let m = vec3::cross(tau, n);
            let d = vec3::dot(vec3::sub(p, x), m);
            if d.abs() < 1e-300 {
                continue;
            }
            let t1 = vec3::dot(vec3::sub(p, x), tau);
            let t2 = vec3::dot(vec3::sub(q, x), tau);
            sum += d * ((t2 / d).asinh() - (t1 / d).asinh());
        }
        sum
    }

    /// Outer integral of the planar potential with a collapsed Gauss product.
    fn self_integral_oracle(c: &[Vec3; 3], n: usize) -> f64 {
        let (x, w) = gauss_legendre_unit(n);
        let jac = 2.0 * area(c);
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                let (u, v) = (x[i], x[j]);
                let p = map_reference(c, u, (1.0 - u) * v);
                s += w[i] * w[j] * (1.0 - u) * planar_potential(c, p);
            }
        }
        s * jac
    }

    fn singular_self_integral(c: &[Vec3; 3], order: usize) -> f64 {
        let class = classify_vertices(&[0, 1, 2], &[0, 1, 2], true);
        let rule = singular_rule(class, order).unwrap();
        let jac = 2.0 * area(c);
        jac * jac
            * rule.integrate(|p| {
                let x = map_reference(c, p[0], p[1]);
                let y = map_reference(c, p[2], p[3]);
                1.0 / vec3::dist(x, y)
            })
    }

    #[test]
    fn identical_self_integral_matches_oracle() {
        let c = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        // the outer quadrature error decays like n⁻⁴; extrapolate it away
        let f: Vec<f64> = [40, 80, 160].iter().map(|&n| self_integral_oracle(&c, n)).collect();
        let coarse = f[1] + (f[1] - f[0]) / 15.0;
        let oracle = f[2] + (f[2] - f[1]) / 15.0;
        assert!(((coarse - oracle) / oracle).abs() < 1e-9);
        let mut last = f64::INFINITY;
        for order in [2, 3, 4] {
            let err = ((singular_self_integral(&c, order) - oracle) / oracle).abs();
            assert!(err < last, "order {order}: {err} not below {last}");
            last = err;
        }
        // the error shrinks about sixfold per extra point per dimension
        let err = ((singular_self_integral(&c, 8) - oracle) / oracle).abs();
        assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn swap_symmetry_for_symmetric_kernel() {
        let m = pair_mesh();
        let kernel = |ca: &[Vec3; 3], cb: &[Vec3; 3], p: &[f64; 4]| {
            let x = map_reference(ca, p[0], p[1]);
            let y = map_reference(cb, p[2], p[3]);
            (1.0 + x[0] * y[0] + x[1] * y[1]) / vec3::dist(x, y)
        };
        for (a, b) in [(0, 1), (0, 2), (0, 0)] {
            let (ca, cb) = (corners(&m, a), corners(&m, b));
            let rab = singular_rule(classify_pair(a, b, &m), 4).unwrap();
            let rba = singular_rule(classify_pair(b, a, &m), 4).unwrap();
            let v1 = rab.integrate(|p| kernel(&ca, &cb, p));
            let v2 = rba.integrate(|p| kernel(&cb, &ca, p));
            assert!((v1 - v2).abs() < 1e-12 * v1.abs(), "{a},{b}: {v1} vs {v2}");
        }
    }
}
