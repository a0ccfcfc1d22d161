//! Batched integration of regular (disjoint) element pairs.
//!
//! A backend owns a copy of the element data in structure-of-arrays form and
//! evaluates many pair integrals per call. Each call first fills the table of
//! weighted kernel values for all quadrature point pairs and then contracts it
//! with the basis tables. Touching pairs are refused; the caller routes them
//! to the host singular integrator.

use std::fmt::Debug;

use crate::error::{BemError, Result};
use crate::kernels::{kernel_parts, Operator, OperatorSpec, Precision};
use crate::mesh::{ElementGeometry, TriangleMesh};
use crate::par;
use crate::scalar::Real;
use crate::spaces::{p1_surface_curls, BasisTable};

/// Quadrature weights a device keeps resident.
pub const MAX_DEVICE_WEIGHTS: usize = 6;

/// Pairs per parallel work item inside one batch.
const PAIRS_PER_TASK: usize = 512;

/// Contract of a batched regular-pair integrator.
pub trait BatchIntegrator: Send + Sync + Debug {
    fn device_id(&self) -> usize;
    fn spec(&self) -> &OperatorSpec;
    /// (test local DOFs, trial local DOFs).
    fn block_shape(&self) -> (usize, usize);
    fn integrate_batch(&self, request: &BatchRequest) -> Result<RawResultBuffer>;
}

/// Element pairs to integrate, plus the position of the first pair in the
/// caller's global pair numbering.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchRequest {
    pub pairs: Vec<(usize, usize)>,
    pub offset: usize,
}

impl BatchRequest {
    pub fn new(pairs: Vec<(usize, usize)>, offset: usize) -> Self {
        Self { pairs, offset }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Unassembled local blocks, pair-major and DOF-combination-minor. The
/// imaginary plane is empty for real operators.
#[derive(Debug, Clone, PartialEq)]
pub struct RawResultBuffer {
    pub offset: usize,
    pub pair_count: usize,
    pub rows: usize,
    pub cols: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl RawResultBuffer {
    pub fn block_len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_complex(&self) -> bool {
        !self.im.is_empty() || self.re.is_empty()
    }

    /// Entry (i, j) of pair `p` as (re, im).
    #[inline]
    pub fn entry(&self, p: usize, i: usize, j: usize) -> (f64, f64) {
        let k = p * self.block_len() + i * self.cols + j;
        (self.re[k], self.im.get(k).copied().unwrap_or(0.0))
    }

    /// Concatenates buffers of consecutive requests.
    pub fn concat(parts: &[RawResultBuffer]) -> Option<RawResultBuffer> {
        let first = parts.first()?;
        let mut out = RawResultBuffer {
            offset: first.offset,
            pair_count: 0,
            rows: first.rows,
            cols: first.cols,
            re: Vec::new(),
            im: Vec::new(),
        };
        for p in parts {
            out.pair_count += p.pair_count;
            out.re.extend_from_slice(&p.re);
            out.im.extend_from_slice(&p.im);
        }
        Some(out)
    }
}

/// Element data as one array per component.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceArrays<T> {
    pub normal: [Vec<T>; 3],
    pub jacobian: Vec<T>,
    /// Element-major mapped quadrature points.
    pub point: [Vec<T>; 3],
    pub weights: Vec<T>,
    pub points_per_element: usize,
    /// values[l * points + q]
    pub test_basis: Vec<T>,
    pub trial_basis: Vec<T>,
    /// Three surface curls per element; empty unless the operator is HYPS.
    pub curl: [Vec<T>; 3],
    pub wavenumber: T,
}

impl<T: Real> DeviceArrays<T> {
    fn build(geometry: &ElementGeometry, test: &BasisTable, trial: &BasisTable, spec: &OperatorSpec) -> Self {
        let cast = |v: f64| T::from_f64(v);
        let comp = |src: &[[f64; 3]], c: usize| src.iter().map(|v| cast(v[c])).collect::<Vec<T>>();
        let curl = if spec.operator == Operator::Hyps {
            let mut out: [Vec<T>; 3] = Default::default();
            for e in 0..geometry.element_count() {
                let c = p1_surface_curls(&geometry.element_corners(e), geometry.normals[e]);
                for l in 0..3 {
                    for (d, plane) in out.iter_mut().enumerate() {
                        plane.push(cast(c[l][d]));
                    }
                }
            }
            out
        } else {
            Default::default()
        };
        Self {
            normal: [0, 1, 2].map(|c| comp(&geometry.normals, c)),
            jacobian: geometry.jacobians.iter().map(|&v| cast(v)).collect(),
            point: [0, 1, 2].map(|c| comp(&geometry.points, c)),
            weights: geometry.rule.weights().iter().map(|&v| cast(v)).collect(),
            points_per_element: geometry.points_per_element(),
            test_basis: test.values.iter().map(|&v| cast(v)).collect(),
            trial_basis: trial.values.iter().map(|&v| cast(v)).collect(),
            curl,
            wavenumber: cast(spec.wavenumber()),
        }
    }
}

#[derive(Debug, Clone)]
enum DeviceCache {
    Single(DeviceArrays<f32>),
    Double(DeviceArrays<f64>),
}

/// Host implementation of the batched integrator.
#[derive(Debug, Clone)]
pub struct DeviceContext {
    device_id: usize,
    spec: OperatorSpec,
    elements: Vec<[usize; 3]>,
    rows: usize,
    cols: usize,
    cache: DeviceCache,
}

/// Copies mesh, geometry and basis tables into a new context.
pub fn init_device(
    mesh: &TriangleMesh,
    geometry: &ElementGeometry,
    tables: (&BasisTable, &BasisTable),
    spec: &OperatorSpec,
    device_id: usize,
) -> Result<DeviceContext> {
    let (test, trial) = tables;
    let np = geometry.points_per_element();
    if np > MAX_DEVICE_WEIGHTS {
        return Err(BemError::Capacity(format!(
            "quadrature rule has {np} weights; a device holds at most {MAX_DEVICE_WEIGHTS}"
        )));
    }
    if test.points != np || trial.points != np {
        return Err(BemError::InvalidArgument(
            "basis tables were evaluated on a different rule than the geometry".into(),
        ));
    }
    if geometry.element_count() != mesh.element_count() {
        return Err(BemError::DimensionMismatch {
            expected: mesh.element_count(),
            actual: geometry.element_count(),
        });
    }
    if spec.operator == Operator::Hyps && (test.local_dofs != 3 || trial.local_dofs != 3) {
        return Err(BemError::Unsupported(
            "the hypersingular operator needs piecewise linear spaces".into(),
        ));
    }
    let cache = match spec.precision {
        Precision::Single => DeviceCache::Single(DeviceArrays::build(geometry, test, trial, spec)),
        Precision::Double => DeviceCache::Double(DeviceArrays::build(geometry, test, trial, spec)),
    };
    Ok(DeviceContext {
        device_id,
        spec: *spec,
        elements: mesh.elements().to_vec(),
        rows: test.local_dofs,
        cols: trial.local_dofs,
        cache,
    })
}

impl DeviceContext {
    pub fn precision(&self) -> Precision {
        self.spec.precision
    }

    pub fn arrays_f64(&self) -> Option<&DeviceArrays<f64>> {
        match &self.cache {
            DeviceCache::Double(a) => Some(a),
            DeviceCache::Single(_) => None,
        }
    }

    pub fn arrays_f32(&self) -> Option<&DeviceArrays<f32>> {
        match &self.cache {
            DeviceCache::Single(a) => Some(a),
            DeviceCache::Double(_) => None,
        }
    }

    fn check_disjoint(&self, request: &BatchRequest) -> Result<()> {
        let m = self.elements.len();
        for &(a, b) in &request.pairs {
            if a >= m || b >= m {
                return Err(BemError::InvalidArgument(format!(
                    "element pair ({a}, {b}) out of range for {m} elements"
                )));
            }
            let (ea, eb) = (&self.elements[a], &self.elements[b]);
            if a == b || ea.iter().any(|v| eb.contains(v)) {
                return Err(BemError::NonDisjointPair { test: a, trial: b });
            }
        }
        Ok(())
    }
}

impl BatchIntegrator for DeviceContext {
    fn device_id(&self) -> usize {
        self.device_id
    }

    fn spec(&self) -> &OperatorSpec {
        &self.spec
    }

    fn block_shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    fn integrate_batch(&self, request: &BatchRequest) -> Result<RawResultBuffer> {
        self.check_disjoint(request)?;
        let bl = self.rows * self.cols;
        let n = request.pairs.len();
        let mut re = vec![0.0; n * bl];
        let mut im = vec![0.0; n * bl];
        par::for_each_chunk_pair_mut(&mut re, &mut im, PAIRS_PER_TASK * bl, PAIRS_PER_TASK * bl, |c, out_re, out_im| {
            let pairs = &request.pairs[c * PAIRS_PER_TASK..(c * PAIRS_PER_TASK + out_re.len() / bl.max(1))];
            match &self.cache {
                DeviceCache::Single(arr) => run_pairs(&self.spec, arr, self.rows, self.cols, pairs, out_re, out_im),
                DeviceCache::Double(arr) => run_pairs(&self.spec, arr, self.rows, self.cols, pairs, out_re, out_im),
            }
        });
        if !self.spec.is_complex() {
            im = Vec::new();
        }
        Ok(RawResultBuffer {
            offset: request.offset,
            pair_count: n,
            rows: self.rows,
            cols: self.cols,
            re,
            im,
        })
    }
}

fn run_pairs<T: Real>(
    spec: &OperatorSpec,
    arr: &DeviceArrays<T>,
    rows: usize,
    cols: usize,
    pairs: &[(usize, usize)],
    out_re: &mut [f64],
    out_im: &mut [f64],
) {
    let np = arr.points_per_element;
    let bl = rows * cols;
    let op = spec.operator;
    let k = arr.wavenumber;
    let mut kv_re = [T::zero(); MAX_DEVICE_WEIGHTS * MAX_DEVICE_WEIGHTS];
    let mut kv_im = [T::zero(); MAX_DEVICE_WEIGHTS * MAX_DEVICE_WEIGHTS];
    for (slot, &(a, b)) in pairs.iter().enumerate() {
        let nx = [arr.normal[0][a], arr.normal[1][a], arr.normal[2][a]];
        let ny = [arr.normal[0][b], arr.normal[1][b], arr.normal[2][b]];
        // weighted kernel values for every point pair
        for p in 0..np {
            let ia = a * np + p;
            let x = [arr.point[0][ia], arr.point[1][ia], arr.point[2][ia]];
            for q in 0..np {
                let ib = b * np + q;
                let y = [arr.point[0][ib], arr.point[1][ib], arr.point[2][ib]];
                let (r, i) = kernel_parts(op, k, x, y, nx, ny);
                let w = arr.weights[p] * arr.weights[q];
                kv_re[p * np + q] = r * w;
                kv_im[p * np + q] = i * w;
            }
        }
        let jac = arr.jacobian[a] * arr.jacobian[b];
        let (cc, nn) = if op == Operator::Hyps {
            let mut cc = [T::zero(); 9];
            for i in 0..3 {
                for j in 0..3 {
                    let (ia, jb) = (3 * a + i, 3 * b + j);
                    cc[i * 3 + j] = arr.curl[0][ia] * arr.curl[0][jb]
                        + arr.curl[1][ia] * arr.curl[1][jb]
                        + arr.curl[2][ia] * arr.curl[2][jb];
                }
            }
            let nd = nx[0] * ny[0] + nx[1] * ny[1] + nx[2] * ny[2];
            (cc, k * k * nd)
        } else {
            ([T::zero(); 9], T::zero())
        };
        let dst_re = &mut out_re[slot * bl..(slot + 1) * bl];
        let dst_im = &mut out_im[slot * bl..(slot + 1) * bl];
        for i in 0..rows {
            // contract over test points first: t_q = Σ_p ψ_i(p) kv[p][q]
            let mut t_re = [T::zero(); MAX_DEVICE_WEIGHTS];
            let mut t_im = [T::zero(); MAX_DEVICE_WEIGHTS];
            let mut s_re = T::zero();
            let mut s_im = T::zero();
            for p in 0..np {
                let psi = arr.test_basis[i * np + p];
                for q in 0..np {
                    t_re[q] += psi * kv_re[p * np + q];
                    t_im[q] += psi * kv_im[p * np + q];
                    if op == Operator::Hyps {
                        s_re += kv_re[p * np + q];
                        s_im += kv_im[p * np + q];
                    }
                }
            }
            for j in 0..cols {
                let mut acc_re = T::zero();
                let mut acc_im = T::zero();
                for q in 0..np {
                    let phi = arr.trial_basis[j * np + q];
                    acc_re += t_re[q] * phi;
                    acc_im += t_im[q] * phi;
                }
                if op == Operator::Hyps {
                    let c = cc[i * 3 + j];
                    acc_re = c * s_re - nn * acc_re;
                    acc_im = c * s_im - nn * acc_im;
                }
                dst_re[i * cols + j] = (acc_re * jac).to_f64();
                dst_im[i * cols + j] = (acc_im * jac).to_f64();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{local_matrix, IntegrationContext};
    use crate::mesh::{precompute_geometry, refine_unit_sphere};
    use crate::quadrature::{regular_rule, QuadratureRule};
    use crate::spaces::{build_space, evaluate_basis, FunctionSpace, SpaceFamily};
    use rand::{Rng, SeedableRng};
    use std::sync::Arc;

    struct Fixture {
        mesh: Arc<TriangleMesh>,
        geo: ElementGeometry,
        p1: FunctionSpace,
    }

    fn fixture(level: u32) -> Fixture {
        let mesh = Arc::new(refine_unit_sphere(level).unwrap());
        let geo = precompute_geometry(&mesh, &regular_rule(4).unwrap()).unwrap();
        let p1 = build_space(mesh.clone(), SpaceFamily::P1Continuous);
        Fixture { mesh, geo, p1 }
    }

    fn device(f: &Fixture, space: &FunctionSpace, spec: &OperatorSpec, id: usize) -> DeviceContext {
        let t = evaluate_basis(space, &f.geo.rule);
        init_device(&f.mesh, &f.geo, (&t, &t), spec, id).unwrap()
    }

    fn disjoint_pairs(f: &Fixture, n: usize, seed: u64) -> Vec<(usize, usize)> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let m = f.mesh.element_count();
        let el = f.mesh.elements();
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let (a, b) = (rng.gen_range(0..m), rng.gen_range(0..m));
            if a != b && !el[a].iter().any(|v| el[b].contains(v)) {
                out.push((a, b));
            }
        }
        out
    }

    fn max_rel_dev(buf: &RawResultBuffer, pairs: &[(usize, usize)], spec: &OperatorSpec, ctx: &IntegrationContext) -> f64 {
        let mut worst: f64 = 0.0;
        for (p, &(a, b)) in pairs.iter().enumerate() {
            let blk = local_matrix(spec, a, b, ctx).unwrap();
            let scale = blk.max_abs();
            for i in 0..buf.rows {
                for j in 0..buf.cols {
                    let (r, m) = buf.entry(p, i, j);
                    let d = (r - blk.get(i, j).re).hypot(m - blk.get(i, j).im);
                    worst = worst.max(d / scale);
                }
            }
        }
        worst
    }

    #[test]
    fn matches_reference_on_many_pairs() {
        let f = fixture(3);
        let ctx = IntegrationContext::new(&f.p1, &f.p1, Arc::new(f.geo.clone()), 3).unwrap();
        let pairs = disjoint_pairs(&f, 10_000, 5);
        for op in [Operator::Slp, Operator::Dlp, Operator::Adlp, Operator::Hyps] {
            let spec = OperatorSpec::helmholtz(2.0, op).unwrap();
            let dev = device(&f, &f.p1, &spec, 0);
            let buf = dev.integrate_batch(&BatchRequest::new(pairs.clone(), 0)).unwrap();
            assert_eq!(buf.re.len(), 10_000 * 9);
            assert_eq!(buf.im.len(), 10_000 * 9);
            let dev_max = max_rel_dev(&buf, &pairs, &spec, &ctx);
            assert!(dev_max <= 1e-12, "{op:?}: {dev_max}");
        }
        let spec = OperatorSpec::laplace(Operator::Slp);
        let dev = device(&f, &f.p1, &spec, 0);
        let buf = dev.integrate_batch(&BatchRequest::new(pairs[..10].to_vec(), 0)).unwrap();
        assert!(buf.im.is_empty());
        assert!(max_rel_dev(&buf, &pairs[..10], &spec, &ctx) <= 1e-12);
    }

    #[test]
    fn single_precision_matches_reference() {
        let f = fixture(2);
        let ctx = IntegrationContext::new(&f.p1, &f.p1, Arc::new(f.geo.clone()), 3).unwrap();
        let pairs = disjoint_pairs(&f, 500, 9);
        for op in [Operator::Slp, Operator::Dlp, Operator::Hyps] {
            let spec = OperatorSpec::helmholtz(3.0, op).unwrap();
            let dev = device(&f, &f.p1, &spec.with_precision(Precision::Single), 0);
            assert!(dev.arrays_f32().is_some() && dev.arrays_f64().is_none());
            let buf = dev.integrate_batch(&BatchRequest::new(pairs.clone(), 0)).unwrap();
            assert!(max_rel_dev(&buf, &pairs, &spec, &ctx) <= 5e-4);
        }
    }

    #[test]
    fn single_precision_is_really_single() {
        // vertex offsets below f32 resolution at unit scale
        let eps = 2f64.powi(-30);
        let mesh = Arc::new(
            TriangleMesh::new(
                vec![
                    [1.0, 0.0, 0.0],
                    [1.0 + eps, 0.5, 0.0],
                    [1.0, 0.0, 0.5],
                    [3.0, 0.0, 0.0],
                    [3.0, 0.5, 0.0],
                    [3.0 - 2.0 * eps, 0.0, 0.5],
                ],
                vec![[0, 1, 2], [3, 4, 5]],
            )
            .unwrap(),
        );
        let geo = precompute_geometry(&mesh, &regular_rule(4).unwrap()).unwrap();
        let p0 = build_space(mesh.clone(), SpaceFamily::P0);
        let t = evaluate_basis(&p0, &geo.rule);
        let spec = OperatorSpec::laplace(Operator::Dlp);
        let req = BatchRequest::new(vec![(0, 1)], 0);
        let d = init_device(&mesh, &geo, (&t, &t), &spec, 0).unwrap();
        let s = init_device(&mesh, &geo, (&t, &t), &spec.with_precision(Precision::Single), 0).unwrap();
        let (vd, vs) = (d.integrate_batch(&req).unwrap().re[0], s.integrate_batch(&req).unwrap().re[0]);
        assert_ne!(vd, vs);
        // the single result is representable in f32
        assert_eq!(vs, vs as f32 as f64);
        let arr = s.arrays_f32().unwrap();
        assert_eq!(arr.point[0][0], arr.point[0][0] as f64 as f32);
    }

    #[test]
    fn caches_match_host_geometry() {
        let f = fixture(1);
        let spec = OperatorSpec::laplace(Operator::Hyps);
        let dev = device(&f, &f.p1, &spec, 3);
        assert_eq!(dev.device_id(), 3);
        let arr = dev.arrays_f64().unwrap();
        let table = evaluate_basis(&f.p1, &f.geo.rule);
        for e in 0..f.mesh.element_count() {
            for c in 0..3 {
                assert_eq!(arr.normal[c][e], f.geo.normals[e][c]);
            }
            assert_eq!(arr.jacobian[e], f.geo.jacobians[e]);
        }
        for (i, p) in f.geo.points.iter().enumerate() {
            assert_eq!([arr.point[0][i], arr.point[1][i], arr.point[2][i]], *p);
        }
        assert_eq!(arr.test_basis, table.values);
        assert_eq!(arr.weights, f.geo.rule.weights());
    }

    #[test]
    fn capacity_and_contract_errors() {
        let f = fixture(1);
        let spec = OperatorSpec::laplace(Operator::Slp);
        // any 7-point rule with positive weights
        let pts: Vec<[f64; 2]> = (0..7).map(|i| [0.1 + 0.05 * i as f64, 0.1]).collect();
        let rule = QuadratureRule::new(5, pts, vec![0.5 / 7.0; 7]).unwrap();
        let geo7 = precompute_geometry(&f.mesh, &rule).unwrap();
        let t7 = evaluate_basis(&f.p1, &rule);
        assert!(matches!(
            init_device(&f.mesh, &geo7, (&t7, &t7), &spec, 0),
            Err(BemError::Capacity(_))
        ));
        let dev = device(&f, &f.p1, &spec, 0);
        let el = f.mesh.elements();
        let adjacent = (1..f.mesh.element_count())
            .find(|&b| el[0].iter().any(|v| el[b].contains(v)))
            .unwrap();
        for bad in [(0, 0), (0, adjacent)] {
            let mut pairs = disjoint_pairs(&f, 5, 1);
            pairs.push(bad);
            assert!(matches!(
                dev.integrate_batch(&BatchRequest::new(pairs, 0)),
                Err(BemError::NonDisjointPair { .. })
            ));
        }
        let empty = dev.integrate_batch(&BatchRequest::default()).unwrap();
        assert_eq!(empty.pair_count, 0);
        assert!(empty.re.is_empty());
    }

    #[test]
    fn split_and_concurrency_invariance() {
        let f = fixture(2);
        let spec = OperatorSpec::helmholtz(2.0, Operator::Dlp).unwrap();
        let dev = device(&f, &f.p1, &spec, 0);
        let pairs = disjoint_pairs(&f, 3000, 2);
        let whole = dev.integrate_batch(&BatchRequest::new(pairs.clone(), 0)).unwrap();
        let cuts = [0, 1, 700, 701, 2048, 3000];
        let parts: Vec<_> = cuts
            .windows(2)
            .map(|w| dev.integrate_batch(&BatchRequest::new(pairs[w[0]..w[1]].to_vec(), w[0])).unwrap())
            .collect();
        assert_eq!(RawResultBuffer::concat(&parts).unwrap(), whole);
        let (first, second) = (BatchRequest::new(pairs[..1500].to_vec(), 0), BatchRequest::new(pairs[1500..].to_vec(), 1500));
        let (r1, r2) = std::thread::scope(|s| {
            let h1 = s.spawn(|| dev.integrate_batch(&first).unwrap());
            let h2 = s.spawn(|| dev.integrate_batch(&second).unwrap());
            (h1.join().unwrap(), h2.join().unwrap())
        });
        assert_eq!(RawResultBuffer::concat(&[r1, r2]).unwrap(), whole);
        let twin = device(&f, &f.p1, &spec, 1);
        assert_eq!(twin.integrate_batch(&BatchRequest::new(pairs, 0)).unwrap(), whole);
    }
}
