//! Green's functions of the Laplace and Helmholtz equations and the
//! reference per-pair Galerkin integrator.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{BemError, Result};
use crate::mesh::geometry::map_reference;
use crate::mesh::ElementGeometry;
use crate::quadrature::{classify_pair, SingularRuleCache, SingularityClass, TensorRule};
use crate::scalar::Real;
use crate::spaces::{
    evaluate_basis, p1_surface_curls, reference_basis, BasisTable, FunctionSpace, SpaceFamily,
};
use crate::vec3::{self, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Equation {
    Laplace,
    /// Wavenumber k in 1/length.
    Helmholtz(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Operator {
    /// Single-layer potential.
    Slp,
    /// Double-layer potential.
    Dlp,
    /// Adjoint double-layer potential.
    Adlp,
    /// Hypersingular operator in integrated-by-parts form.
    Hyps,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Precision {
    Single,
    #[default]
    Double,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatorSpec {
    pub equation: Equation,
    pub operator: Operator,
    pub precision: Precision,
}

impl OperatorSpec {
    /// Validated constructor.
    pub fn new(equation: Equation, operator: Operator, precision: Precision) -> Result<Self> {
        if let Equation::Helmholtz(k) = equation {
            if !(k.is_finite() && k > 0.0) {
                return Err(BemError::InvalidArgument(format!(
                    "Helmholtz wavenumber must be positive and finite, got {k}"
                )));
            }
        }
        Ok(Self {
            equation,
            operator,
            precision,
        })
    }

    pub fn laplace(operator: Operator) -> Self {
        Self {
            equation: Equation::Laplace,
            operator,
            precision: Precision::Double,
        }
    }

    pub fn helmholtz(k: f64, operator: Operator) -> Result<Self> {
        Self::new(Equation::Helmholtz(k), operator, Precision::Double)
    }

    pub fn with_precision(mut self, precision: Precision) -> Self {
        self.precision = precision;
        self
    }

    pub fn with_operator(mut self, operator: Operator) -> Self {
        self.operator = operator;
        self
    }

    pub fn wavenumber(&self) -> f64 {
        match self.equation {
            Equation::Laplace => 0.0,
            Equation::Helmholtz(k) => k,
        }
    }

    pub fn is_complex(&self) -> bool {
        matches!(self.equation, Equation::Helmholtz(_))
    }

    /// Checks the operator against the space families.
    pub fn check_spaces(&self, test: &FunctionSpace, trial: &FunctionSpace) -> Result<()> {
        if !test.same_mesh(trial) {
            return Err(BemError::InvalidArgument(
                "test and trial spaces are defined on different meshes".into(),
            ));
        }
        if self.operator == Operator::Hyps
            && (test.family() != SpaceFamily::P1Continuous
                || trial.family() != SpaceFamily::P1Continuous)
        {
            return Err(BemError::Unsupported(
                "the hypersingular operator needs continuous piecewise linear test and trial spaces"
                    .into(),
            ));
        }
        Ok(())
    }
}

const SINGULAR_DISTANCE: f64 = 1e-300;

fn checked_distance(x: Vec3, y: Vec3) -> Result<f64> {
    let r = vec3::dist(x, y);
    if r < SINGULAR_DISTANCE {
        return Err(BemError::Singularity { distance: r });
    }
    Ok(r)
}

/// e^{ikr} / (4πr).
pub fn green(spec: &OperatorSpec, x: Vec3, y: Vec3) -> Result<Complex64> {
    checked_distance(x, y)?;
    let (re, im) = kernel_parts(Operator::Slp, spec.wavenumber(), x, y, [0.0; 3], [0.0; 3]);
    Ok(Complex64::new(re, im))
}

/// ∂g/∂n_y = ⟨∇_y g, n_y⟩.
pub fn green_dny(spec: &OperatorSpec, x: Vec3, y: Vec3, n_y: Vec3) -> Result<Complex64> {
    checked_distance(x, y)?;
    let (re, im) = kernel_parts(Operator::Dlp, spec.wavenumber(), x, y, [0.0; 3], n_y);
    Ok(Complex64::new(re, im))
}

/// ∂g/∂n_x = ⟨∇_x g, n_x⟩ = −⟨∇_y g, n_x⟩.
pub fn green_dnx(spec: &OperatorSpec, x: Vec3, y: Vec3, n_x: Vec3) -> Result<Complex64> {
    checked_distance(x, y)?;
    let (re, im) = kernel_parts(Operator::Adlp, spec.wavenumber(), x, y, n_x, [0.0; 3]);
    Ok(Complex64::new(re, im))
}

/// Kernel value of `op` at one point pair as (re, im); HYPS returns g.
#[inline(always)]
pub(crate) fn kernel_parts<T: Real>(op: Operator, k: T, x: [T; 3], y: [T; 3], nx: [T; 3], ny: [T; 3]) -> (T, T) {
    let d = [x[0] - y[0], x[1] - y[1], x[2] - y[2]];
    let r2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
    let r = r2.sqrt();
    let kr = k * r;
    let (s, c) = if k == T::zero() { (T::zero(), T::one()) } else { kr.sin_cos() };
    let four_pi = T::from_f64(4.0 * PI);
    match op {
        Operator::Slp | Operator::Hyps => {
            let f = T::one() / (four_pi * r);
            (c * f, s * f)
        }
        Operator::Dlp | Operator::Adlp => {
            let n = if op == Operator::Dlp { ny } else { nx };
            let mut f = (d[0] * n[0] + d[1] * n[1] + d[2] * n[2]) / (four_pi * r2 * r);
            if op == Operator::Adlp {
                f = -f;
            }
            // (1 − ikr) e^{ikr}
            (f * (c + kr * s), f * (s - kr * c))
        }
    }
}

#[inline]
pub(crate) fn cast3<T: Real>(v: Vec3) -> [T; 3] {
    [T::from_f64(v[0]), T::from_f64(v[1]), T::from_f64(v[2])]
}

/// Dense local block of at most 3 × 3 entries, row-major, stored as
/// separate real and imaginary parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalBlock {
    pub rows: usize,
    pub cols: usize,
    pub re: [f64; 9],
    pub im: [f64; 9],
}

impl LocalBlock {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            re: [0.0; 9],
            im: [0.0; 9],
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        let k = i * self.cols + j;
        Complex64::new(self.re[k], self.im[k])
    }

    pub fn max_abs(&self) -> f64 {
        (0..self.rows * self.cols)
            .map(|k| self.re[k].hypot(self.im[k]))
            .fold(0.0, f64::max)
    }
}

/// Everything the per-pair integrator reads: spaces, geometry with its
/// regular rule, basis tables for that rule, per-element P1 curls, and the
/// singular rules.
#[derive(Debug)]
pub struct IntegrationContext {
    pub test: FunctionSpace,
    pub trial: FunctionSpace,
    pub geometry: Arc<ElementGeometry>,
    pub test_table: BasisTable,
    pub trial_table: BasisTable,
    /// Three surface curls per element (empty when no space is P1).
    pub curls: Vec<[Vec3; 3]>,
    pub singular: SingularRuleCache,
}

impl IntegrationContext {
    pub fn new(
        test: &FunctionSpace,
        trial: &FunctionSpace,
        geometry: Arc<ElementGeometry>,
        singular_order: usize,
    ) -> Result<Self> {
        if !test.same_mesh(trial) {
            return Err(BemError::InvalidArgument(
                "test and trial spaces are defined on different meshes".into(),
            ));
        }
        if geometry.element_count() != test.mesh().element_count() {
            return Err(BemError::DimensionMismatch {
                expected: test.mesh().element_count(),
                actual: geometry.element_count(),
            });
        }
        let curls = if test.family().is_p1() || trial.family().is_p1() {
            (0..geometry.element_count())
                .map(|e| p1_surface_curls(&geometry.element_corners(e), geometry.normals[e]))
                .collect()
        } else {
            Vec::new()
        };
        Ok(Self {
            test: test.clone(),
            trial: trial.clone(),
            test_table: evaluate_basis(test, &geometry.rule),
            trial_table: evaluate_basis(trial, &geometry.rule),
            geometry,
            curls,
            singular: SingularRuleCache::new(singular_order),
        })
    }

    pub fn classify(&self, a: usize, b: usize) -> SingularityClass {
        classify_pair(a, b, self.test.mesh())
    }
}

/// Galerkin block of element pair (a, b). Disjoint pairs use the regular
/// tensor rule in the requested precision; touching pairs always go through
/// the singular rules in double precision.
pub fn local_matrix(spec: &OperatorSpec, a: usize, b: usize, ctx: &IntegrationContext) -> Result<LocalBlock> {
    spec.check_spaces(&ctx.test, &ctx.trial)?;
    let m = ctx.geometry.element_count();
    if a >= m || b >= m {
        return Err(BemError::InvalidArgument(format!(
            "element pair ({a}, {b}) out of range for {m} elements"
        )));
    }
    let class = ctx.classify(a, b);
    if class.is_disjoint() {
        Ok(match spec.precision {
            Precision::Double => regular_block::<f64>(spec, a, b, ctx),
            Precision::Single => regular_block::<f32>(spec, a, b, ctx),
        })
    } else {
        let rule = ctx.singular.get(class)?;
        Ok(singular_block(spec, a, b, ctx, &rule))
    }
}

fn regular_block<T: Real>(spec: &OperatorSpec, a: usize, b: usize, ctx: &IntegrationContext) -> LocalBlock {
    let g = &*ctx.geometry;
    let op = spec.operator;
    let (ni, nj) = (ctx.test.local_dofs(), ctx.trial.local_dofs());
    let k = T::from_f64(spec.wavenumber());
    let nx = cast3::<T>(g.normals[a]);
    let ny = cast3::<T>(g.normals[b]);
    let (cc, nn) = hyps_factors::<T>(spec, a, b, ctx);
    let w: Vec<T> = g.rule.weights().iter().map(|&v| T::from_f64(v)).collect();
    let mut acc_re = [T::zero(); 9];
    let mut acc_im = [T::zero(); 9];
    for (p, &xp) in g.element_points(a).iter().enumerate() {
        let x = cast3::<T>(xp);
        for (q, &yq) in g.element_points(b).iter().enumerate() {
            let y = cast3::<T>(yq);
            let (kr, ki) = kernel_parts(op, k, x, y, nx, ny);
            let wpq = w[p] * w[q];
            let (kr, ki) = (kr * wpq, ki * wpq);
            for i in 0..ni {
                let psi = T::from_f64(ctx.test_table.value(i, p));
                for j in 0..nj {
                    let phi = T::from_f64(ctx.trial_table.value(j, q));
                    let f = match op {
                        Operator::Hyps => cc[i * nj + j] - nn * psi * phi,
                        _ => psi * phi,
                    };
                    acc_re[i * nj + j] += kr * f;
                    acc_im[i * nj + j] += ki * f;
                }
            }
        }
    }
    let jac = T::from_f64(g.jacobians[a] * g.jacobians[b]);
    let mut out = LocalBlock::zeros(ni, nj);
    for idx in 0..ni * nj {
        out.re[idx] = (acc_re[idx] * jac).to_f64();
        out.im[idx] = (acc_im[idx] * jac).to_f64();
    }
    out
}

/// curl ψ_i · curl φ_j per local pair and k² n_x·n_y, for HYPS; zeros otherwise.
#[inline]
pub(crate) fn hyps_factors<T: Real>(spec: &OperatorSpec, a: usize, b: usize, ctx: &IntegrationContext) -> ([T; 9], T) {
    let mut cc = [T::zero(); 9];
    if spec.operator != Operator::Hyps {
        return (cc, T::zero());
    }
    let k = spec.wavenumber();
    let nn = k * k * vec3::dot(ctx.geometry.normals[a], ctx.geometry.normals[b]);
    for i in 0..3 {
        for j in 0..3 {
            cc[i * 3 + j] = T::from_f64(vec3::dot(ctx.curls[a][i], ctx.curls[b][j]));
        }
    }
    (cc, T::from_f64(nn))
}

/// Host singular integrator for a touching pair, always in double precision.
pub fn singular_block(
    spec: &OperatorSpec,
    a: usize,
    b: usize,
    ctx: &IntegrationContext,
    rule: &TensorRule,
) -> LocalBlock {
    let g = &*ctx.geometry;
    let op = spec.operator;
    let (tf, rf) = (ctx.test.family(), ctx.trial.family());
    let (ni, nj) = (tf.local_dofs(), rf.local_dofs());
    let k = spec.wavenumber();
    let (ca, cb) = (g.element_corners(a), g.element_corners(b));
    let (nx, ny) = (g.normals[a], g.normals[b]);
    let (cc, nn) = hyps_factors::<f64>(spec, a, b, ctx);
    let mut out = LocalBlock::zeros(ni, nj);
    for (pt, &w) in rule.points.iter().zip(&rule.weights) {
        let x = map_reference(&ca, pt[0], pt[1]);
        let y = map_reference(&cb, pt[2], pt[3]);
        let (kr, ki) = kernel_parts(op, k, x, y, nx, ny);
        let (kr, ki) = (kr * w, ki * w);
        let psi = reference_basis(tf, pt[0], pt[1]);
        let phi = reference_basis(rf, pt[2], pt[3]);
        for i in 0..ni {
            for j in 0..nj {
                let f = match op {
                    Operator::Hyps => cc[i * nj + j] - nn * psi[i] * phi[j],
                    _ => psi[i] * phi[j],
                };
                out.re[i * nj + j] += kr * f;
                out.im[i * nj + j] += ki * f;
            }
        }
    }
    let jac = g.jacobians[a] * g.jacobians[b];
    for idx in 0..ni * nj {
        out.re[idx] *= jac;
        out.im[idx] *= jac;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{precompute_geometry, refine_unit_sphere, TriangleMesh};
    use crate::quadrature::regular_rule;
    use crate::spaces::build_space;
    use rand::{Rng, SeedableRng};

    const INV_4PI: f64 = 0.25 / PI;

    #[test]
    fn green_values() {
        let lap = OperatorSpec::laplace(Operator::Slp);
        let g = green(&lap, [0.0; 3], [1.0, 0.0, 0.0]).unwrap();
        assert!((g.re - 0.07957747).abs() < 1e-8 && g.im == 0.0);
        let h = OperatorSpec::helmholtz(2.0 * PI, Operator::Slp).unwrap();
        let g = green(&h, [0.0; 3], [0.0, 1.0, 0.0]).unwrap();
        assert!((g.re - INV_4PI).abs() < 1e-15 && g.im.abs() < 1e-15);
        let h0 = OperatorSpec {
            equation: Equation::Helmholtz(0.0),
            ..lap
        };
        let (x, y) = ([0.3, -0.2, 0.5], [1.1, 0.4, -0.7]);
        assert_eq!(green(&h0, x, y).unwrap(), green(&lap, x, y).unwrap());
        assert!(matches!(green(&lap, x, x), Err(BemError::Singularity { .. })));
    }

    #[test]
    fn normal_derivatives() {
        let lap = OperatorSpec::laplace(Operator::Dlp);
        let (x, y, n) = ([0.0, 0.0, 1.0], [0.0; 3], [0.0, 0.0, 1.0]);
        assert!((green_dny(&lap, x, y, n).unwrap().re - INV_4PI).abs() < 1e-15);
        assert!((green_dnx(&lap, x, y, n).unwrap().re + INV_4PI).abs() < 1e-15);
        assert_eq!(green_dny(&lap, x, y, [1.0, 0.0, 0.0]).unwrap().norm(), 0.0);
        assert_eq!(green_dnx(&lap, x, y, [0.0, 1.0, 0.0]).unwrap().norm(), 0.0);
        let h0 = OperatorSpec {
            equation: Equation::Helmholtz(0.0),
            ..lap
        };
        let n2 = vec3::normalize([0.3, 0.4, 0.8]);
        assert_eq!(green_dny(&h0, x, [0.2, 0.1, 0.0], n2).unwrap(), green_dny(&lap, x, [0.2, 0.1, 0.0], n2).unwrap());
    }

    #[test]
    fn helmholtz_gradient_matches_finite_difference() {
        let spec = OperatorSpec::helmholtz(3.0, Operator::Dlp).unwrap();
        let (x, y) = ([0.3, -0.2, 0.5], [1.1, 0.4, -0.7]);
        let n = vec3::normalize([0.2, -0.5, 0.7]);
        let h = 1e-6;
        let fd = (green(&spec, x, vec3::add(y, vec3::scale(n, h))).unwrap()
            - green(&spec, x, vec3::sub(y, vec3::scale(n, h))).unwrap())
            / (2.0 * h);
        let an = green_dny(&spec, x, y, n).unwrap();
        assert!((fd - an).norm() < 1e-8 * an.norm());
        let fdx = (green(&spec, vec3::add(x, vec3::scale(n, h)), y).unwrap()
            - green(&spec, vec3::sub(x, vec3::scale(n, h)), y).unwrap())
            / (2.0 * h);
        assert!((fdx - green_dnx(&spec, x, y, n).unwrap()).norm() < 1e-8 * an.norm());
    }

    #[test]
    fn spec_validation() {
        assert!(OperatorSpec::helmholtz(0.0, Operator::Slp).is_err());
        assert!(OperatorSpec::helmholtz(-1.0, Operator::Slp).is_err());
        assert!(OperatorSpec::helmholtz(f64::NAN, Operator::Slp).is_err());
    }

    fn two_far_triangles(d: f64) -> Arc<TriangleMesh> {
        let s = 0.01;
        Arc::new(
            TriangleMesh::new(
                vec![
                    [0.0, 0.0, 0.0],
                    [s, 0.0, 0.0],
                    [0.0, s, 0.0],
                    [d, 0.0, 0.0],
                    [d + s, 0.0, 0.0],
                    [d, 0.0, s],
                ],
                vec![[0, 1, 2], [3, 4, 5]],
            )
            .unwrap(),
        )
    }

    #[test]
    fn far_field_slp_entry() {
        let s = 0.01;
        let diam = s * 2f64.sqrt();
        let mesh = two_far_triangles(100.0 * diam);
        let rule = regular_rule(4).unwrap();
        let geo = precompute_geometry(&mesh, &rule).unwrap();
        let p0 = build_space(mesh.clone(), SpaceFamily::P0);
        let ctx = IntegrationContext::new(&p0, &p0, Arc::new(geo.clone()), 4).unwrap();
        let blk = local_matrix(&OperatorSpec::laplace(Operator::Slp), 0, 1, &ctx).unwrap();
        let d = vec3::dist(geo.centroids[0], geo.centroids[1]);
        let expect = geo.areas[0] * geo.areas[1] * INV_4PI / d;
        assert!(((blk.re[0] - expect) / expect).abs() < 1e-3);
        let self_blk = local_matrix(&OperatorSpec::laplace(Operator::Slp), 0, 0, &ctx).unwrap();
        assert!(self_blk.re[0] > 0.0);
    }

    fn sphere_ctx_parts(level: u32) -> (Arc<TriangleMesh>, Arc<ElementGeometry>) {
        let mesh = Arc::new(refine_unit_sphere(level).unwrap());
        let geo = precompute_geometry(&mesh, &regular_rule(4).unwrap()).unwrap();
        (mesh, Arc::new(geo))
    }

    fn dense(spec: &OperatorSpec, ctx: &IntegrationContext) -> Vec<Vec<Complex64>> {
        let (n, m) = (ctx.test.dof_count(), ctx.trial.dof_count());
        let mut a = vec![vec![Complex64::new(0.0, 0.0); m]; n];
        let ne = ctx.geometry.element_count();
        for ea in 0..ne {
            for eb in 0..ne {
                let blk = local_matrix(spec, ea, eb, ctx).unwrap();
                for (i, &gi) in ctx.test.element_dofs(ea).iter().enumerate() {
                    for (j, &gj) in ctx.trial.element_dofs(eb).iter().enumerate() {
                        a[gi][gj] += blk.get(i, j);
                    }
                }
            }
        }
        a
    }

    #[test]
    fn hyps_annihilates_constants() {
        let (mesh, geo) = sphere_ctx_parts(1);
        let p1 = build_space(mesh.clone(), SpaceFamily::P1Continuous);
        let ctx = IntegrationContext::new(&p1, &p1, geo.clone(), 3).unwrap();
        let spec = OperatorSpec::laplace(Operator::Hyps);
        for (a, b) in [(0, 0), (0, 1), (0, 17), (3, 40)] {
            let blk = local_matrix(&spec, a, b, &ctx).unwrap();
            for i in 0..3 {
                let row: f64 = (0..3).map(|j| blk.re[i * 3 + j]).sum();
                assert!(row.abs() < 1e-12, "pair ({a},{b}) row {i}: {row}");
            }
        }
        let p0 = build_space(mesh, SpaceFamily::P0);
        let ctx0 = IntegrationContext::new(&p0, &p0, geo.clone(), 3).unwrap();
        assert!(matches!(local_matrix(&spec, 0, 1, &ctx0), Err(BemError::Unsupported(_))));
    }

    #[test]
    fn slp_is_symmetric() {
        let (mesh, geo) = sphere_ctx_parts(1);
        let p1 = build_space(mesh, SpaceFamily::P1Continuous);
        let ctx = IntegrationContext::new(&p1, &p1, geo.clone(), 3).unwrap();
        for spec in [OperatorSpec::laplace(Operator::Slp), OperatorSpec::helmholtz(2.0, Operator::Slp).unwrap()] {
            let a = dense(&spec, &ctx);
            let n = a.len();
            let max = a.iter().flatten().map(|v| v.norm()).fold(0.0, f64::max);
            for i in 0..n {
                for j in 0..n {
                    assert!((a[i][j] - a[j][i]).norm() <= 1e-12 * max);
                }
            }
        }
    }

    #[test]
    fn adlp_is_dlp_transpose() {
        let (mesh, geo) = sphere_ctx_parts(1);
        for family in [SpaceFamily::P0, SpaceFamily::P1Continuous] {
            let s = build_space(mesh.clone(), family);
            let ctx = IntegrationContext::new(&s, &s, geo.clone(), 3).unwrap();
            let k = dense(&OperatorSpec::laplace(Operator::Dlp), &ctx);
            let kt = dense(&OperatorSpec::laplace(Operator::Adlp), &ctx);
            let n = k.len();
            let (mut diff, mut norm) = (0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    diff += (kt[i][j] - k[j][i]).norm_sqr();
                    norm += k[i][j].norm_sqr();
                }
            }
            assert!((diff / norm).sqrt() < 1e-10);
        }
    }

    #[test]
    fn single_precision_close_to_double() {
        let (mesh, geo) = sphere_ctx_parts(2);
        let p1 = build_space(mesh.clone(), SpaceFamily::P1Continuous);
        let ctx = IntegrationContext::new(&p1, &p1, geo.clone(), 3).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut checked = 0;
        while checked < 50 {
            let a = rng.gen_range(0..mesh.element_count());
            let b = rng.gen_range(0..mesh.element_count());
            if !ctx.classify(a, b).is_disjoint() {
                continue;
            }
            for op in [Operator::Slp, Operator::Dlp, Operator::Adlp, Operator::Hyps] {
                let spec = OperatorSpec::helmholtz(5.0, op).unwrap();
                let d = local_matrix(&spec, a, b, &ctx).unwrap();
                let s = local_matrix(&spec.with_precision(Precision::Single), a, b, &ctx).unwrap();
                let scale = d.max_abs();
                for idx in 0..9 {
                    let dev = (d.re[idx] - s.re[idx]).hypot(d.im[idx] - s.im[idx]);
                    assert!(dev <= 5e-4 * scale, "{op:?}: {dev} vs {scale}");
                }
            }
            checked += 1;
        }
    }
}
