//! Acoustic scattering by a sound-hard body: plane-wave incidence, the
//! Burton–Miller boundary system, far-field evaluation and target strength.
//!
//! The boundary unknown Φ is the total field on the surface (continuous P1).
//! The hypersingular operator is applied through the single-layer operator
//! on discontinuous P1 and the sparse curl/normal transforms.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use num_complex::Complex64;

use crate::assembly::{build_backends, dense_operator, AssemblyConfig, DenseMatrix};
use crate::backend::BatchIntegrator;
use crate::error::{BemError, Result};
use crate::gmres::{gmres, GmresConfig};
use crate::hmatrix::{assemble_hmatrix, block_tree_for_spaces, AcaConfig, HMatrix, DEFAULT_ETA, DEFAULT_LEAF_SIZE};
use crate::kernels::{IntegrationContext, Operator, OperatorSpec};
use crate::mesh::{precompute_geometry, ElementGeometry, TriangleMesh};
use crate::par;
use crate::quadrature::regular_rule;
use crate::sparse::SparseMatrix;
use crate::spaces::{assemble_mass, sparse_transform_matrices, FunctionSpace, SpaceFamily, TransformMatrices};
use crate::vec3::{self, Vec3};

pub const DEFAULT_SOUND_SPEED: f64 = 1500.0;
pub const DEFAULT_EVALUATION_POINTS: usize = 3600;
pub const DEFAULT_EVALUATION_RADIUS: f64 = 20_000.0;
/// Coarsest accepted resolution, in mean element edges per wavelength.
pub const MIN_ELEMENTS_PER_WAVELENGTH: f64 = 6.0;
/// Points closer than this many element diameters to an element are near-field.
const NEAR_FIELD_DIAMETERS: f64 = 3.0;

pub fn wavenumber_from_frequency(frequency: f64, sound_speed: f64) -> f64 {
    2.0 * PI * frequency / sound_speed
}

/// u_inc(x) = u₀ exp(ik⟨d, x⟩).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneWave {
    pub amplitude: f64,
    pub direction: Vec3,
    pub wavenumber: f64,
}

impl PlaneWave {
    pub fn new(amplitude: f64, direction: Vec3, wavenumber: f64) -> Result<Self> {
        if (vec3::norm(direction) - 1.0).abs() > 1e-12 {
            return Err(BemError::InvalidArgument("plane-wave direction must be a unit vector".into()));
        }
        if !(wavenumber > 0.0 && wavenumber.is_finite()) {
            return Err(BemError::InvalidArgument("wavenumber must be positive".into()));
        }
        Ok(Self {
            amplitude,
            direction,
            wavenumber,
        })
    }

    /// Incidence in the xy-plane: d = (cos θ, sin θ, 0).
    pub fn from_angle(amplitude: f64, theta: f64, wavenumber: f64) -> Result<Self> {
        Self::new(amplitude, [theta.cos(), theta.sin(), 0.0], wavenumber)
    }

    pub fn value(&self, x: Vec3) -> Complex64 {
        let phase = self.wavenumber * vec3::dot(self.direction, x);
        Complex64::from_polar(self.amplitude, phase)
    }

    /// ∂u_inc/∂n = ik⟨d, n⟩ u_inc.
    pub fn normal_derivative(&self, x: Vec3, n: Vec3) -> Complex64 {
        Complex64::new(0.0, self.wavenumber * vec3::dot(self.direction, n)) * self.value(x)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            amplitude: self.amplitude * factor,
            ..*self
        }
    }
}

/// Mesh vertex behind each continuous P1 DOF.
fn dof_vertices(space: &FunctionSpace) -> Vec<usize> {
    let mut out = vec![0; space.dof_count()];
    for (e, el) in space.mesh().elements().iter().enumerate() {
        for (l, &d) in space.element_dofs(e).iter().enumerate() {
            out[d] = el[l];
        }
    }
    out
}

/// Nodal values of u_inc and ∂u_inc/∂n on a continuous P1 space. Normals are
/// area-weighted vertex normals.
pub fn incident_trace(wave: &PlaneWave, space: &FunctionSpace) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    if space.family() != SpaceFamily::P1Continuous {
        return Err(BemError::Unsupported(
            "incident traces are interpolated on continuous P1 only".into(),
        ));
    }
    let mesh = space.mesh();
    let normals = mesh.vertex_normals();
    let verts = dof_vertices(space);
    let points = mesh.vertices();
    let dirichlet = verts.iter().map(|&v| wave.value(points[v])).collect();
    let neumann = verts
        .iter()
        .map(|&v| wave.normal_derivative(points[v], normals[v]))
        .collect();
    Ok((dirichlet, neumann))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMode {
    Dense,
    HMatrix,
}

impl fmt::Display for SolveMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolveMode::Dense => "dense",
            SolveMode::HMatrix => "hmatrix",
        })
    }
}

impl FromStr for SolveMode {
    type Err = BemError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(SolveMode::Dense),
            "hmatrix" => Ok(SolveMode::HMatrix),
            other => Err(BemError::InvalidArgument(format!(
                "unknown mode '{other}' (expected dense or hmatrix)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScatterConfig {
    /// Hz.
    pub frequency: f64,
    pub sound_speed: f64,
    pub mesh: Arc<TriangleMesh>,
    pub assembly: AssemblyConfig,
    pub aca: AcaConfig,
    pub leaf_size: usize,
    pub eta: f64,
    pub solver: GmresConfig,
    pub evaluation_points: usize,
    pub radius: f64,
    /// Solve on meshes below the resolution guard.
    pub force: bool,
}

impl ScatterConfig {
    pub fn new(mesh: Arc<TriangleMesh>, frequency: f64) -> Self {
        Self {
            frequency,
            sound_speed: DEFAULT_SOUND_SPEED,
            mesh,
            assembly: AssemblyConfig::default(),
            aca: AcaConfig::default(),
            leaf_size: DEFAULT_LEAF_SIZE,
            eta: DEFAULT_ETA,
            solver: GmresConfig::default(),
            evaluation_points: DEFAULT_EVALUATION_POINTS,
            radius: DEFAULT_EVALUATION_RADIUS,
            force: false,
        }
    }

    /// Configuration whose frequency yields wavenumber `k` at the default sound speed.
    pub fn with_wavenumber(mesh: Arc<TriangleMesh>, k: f64) -> Self {
        Self::new(mesh, k * DEFAULT_SOUND_SPEED / (2.0 * PI))
    }

    pub fn wavenumber(&self) -> f64 {
        wavenumber_from_frequency(self.frequency, self.sound_speed)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("frequency", self.frequency),
            ("sound speed", self.sound_speed),
            ("evaluation radius", self.radius),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(BemError::InvalidArgument(format!("{name} must be positive")));
            }
        }
        if self.evaluation_points == 0 {
            return Err(BemError::InvalidArgument("need at least one evaluation point".into()));
        }
        if self.leaf_size == 0 || !(self.eta >= 0.0) {
            return Err(BemError::InvalidArgument("invalid cluster parameters".into()));
        }
        self.assembly.validate()?;
        self.aca.validate()
    }

    /// Evaluation points on the circle of radius R in the xy-plane, with angles in degrees.
    pub fn evaluation_ring(&self) -> (Vec<f64>, Vec<Vec3>) {
        evaluation_ring(self.evaluation_points, self.radius)
    }
}

pub fn evaluation_ring(count: usize, radius: f64) -> (Vec<f64>, Vec<Vec3>) {
    let angles: Vec<f64> = (0..count).map(|m| 360.0 * m as f64 / count as f64).collect();
    let points = angles
        .iter()
        .map(|a| {
            let t = a.to_radians();
            [radius * t.cos(), radius * t.sin(), 0.0]
        })
        .collect();
    (angles, points)
}

/// Wavelength over mean edge length.
pub fn elements_per_wavelength(mesh: &TriangleMesh, k: f64) -> f64 {
    (2.0 * PI / k) / mesh.mean_edge_length()
}

pub fn check_resolution(mesh: &TriangleMesh, k: f64, force: bool) -> Result<()> {
    let epw = elements_per_wavelength(mesh, k);
    if epw < MIN_ELEMENTS_PER_WAVELENGTH {
        if force {
            log::warn!("mesh resolves only {epw:.2} elements per wavelength; results will be inaccurate");
        } else {
            return Err(BemError::InvalidArgument(format!(
                "mesh resolves only {epw:.2} elements per wavelength (minimum {MIN_ELEMENTS_PER_WAVELENGTH}); \
                 refine the mesh or force the run"
            )));
        }
    }
    Ok(())
}

/// An assembled boundary operator in either storage.
#[derive(Debug, Clone)]
pub enum BoundaryOperator {
    Dense(DenseMatrix<Complex64>),
    Hierarchical(HMatrix<Complex64>),
}

impl BoundaryOperator {
    pub fn apply(&self, x: &[Complex64]) -> Result<Vec<Complex64>> {
        match self {
            BoundaryOperator::Dense(d) => d.matvec(x),
            BoundaryOperator::Hierarchical(h) => h.matvec(x),
        }
    }

    pub fn compression_ratio(&self) -> f64 {
        match self {
            BoundaryOperator::Dense(_) => 1.0,
            BoundaryOperator::Hierarchical(h) => h.compression_stats().ratio,
        }
    }
}

/// Assembles one Helmholtz operator densely or as an H-matrix.
pub fn assemble_operator(
    spec: &OperatorSpec,
    ctx: &IntegrationContext,
    mode: SolveMode,
    config: &ScatterConfig,
) -> Result<BoundaryOperator> {
    match mode {
        SolveMode::Dense => Ok(BoundaryOperator::Dense(dense_operator(spec, ctx, &config.assembly)?.0)),
        SolveMode::HMatrix => {
            let tree = block_tree_for_spaces(&ctx.test, &ctx.trial, config.leaf_size, config.eta);
            let backends = build_backends(spec, ctx, &config.assembly)?;
            let refs: Vec<&dyn BatchIntegrator> = backends.iter().map(|b| b as &dyn BatchIntegrator).collect();
            let spec = spec.with_precision(config.assembly.precision);
            let (h, stats) = par::with_workers(config.assembly.workers, || {
                assemble_hmatrix(&spec, ctx, &tree, &config.aca, &refs)
            })?;
            log::info!(
                "{:?}: {} leaves ({} admissible), {} host / {} backend row-column jobs, {} dense fallbacks",
                spec.operator,
                stats.leaves,
                stats.admissible_leaves,
                stats.host_jobs,
                stats.backend_jobs,
                stats.dense_fallbacks
            );
            Ok(BoundaryOperator::Hierarchical(h))
        }
    }
}

/// D x = Σ_j Q_jᵀ Ŝ Q_j x − k² Σ_j P_jᵀ Ŝ P_j x.
pub fn apply_hypersingular(
    transforms: &TransformMatrices,
    s_hat: &dyn Fn(&[Complex64]) -> Result<Vec<Complex64>>,
    k: f64,
    x: &[Complex64],
) -> Result<Vec<Complex64>> {
    let mut y = vec![Complex64::new(0.0, 0.0); x.len()];
    for j in 0..3 {
        let q = transforms.q[j].apply_transpose(&s_hat(&transforms.q[j].apply(x)?)?)?;
        for (a, b) in y.iter_mut().zip(q) {
            *a += b;
        }
        if k != 0.0 {
            let p = transforms.p[j].apply_transpose(&s_hat(&transforms.p[j].apply(x)?)?)?;
            for (a, b) in y.iter_mut().zip(p) {
                *a -= b * (k * k);
            }
        }
    }
    Ok(y)
}

/// Dense D built column by column from a dense Ŝ.
pub fn hypersingular_via_transforms(
    s_hat: &DenseMatrix<Complex64>,
    transforms: &TransformMatrices,
    k: f64,
) -> Result<DenseMatrix<Complex64>> {
    let n = transforms.q[0].cols();
    let apply = |v: &[Complex64]| s_hat.matvec(v);
    let columns = par::try_map_indexed(n, |c| {
        let mut e = vec![Complex64::new(0.0, 0.0); n];
        e[c] = Complex64::new(1.0, 0.0);
        apply_hypersingular(transforms, &apply, k, &e)
    })?;
    Ok(DenseMatrix::from_fn(n, n, |i, j| columns[j][i]))
}

/// Assembled pieces of the Burton–Miller operator (½M − K − η D) with η = 1/(ik).
pub struct BurtonMiller {
    pub mass: SparseMatrix,
    pub dlp: BoundaryOperator,
    pub slp_discontinuous: BoundaryOperator,
    pub transforms: TransformMatrices,
    pub wavenumber: f64,
    pub coupling: Complex64,
}

impl BurtonMiller {
    pub fn assemble(
        continuous: &FunctionSpace,
        discontinuous: &FunctionSpace,
        geometry: &Arc<ElementGeometry>,
        mode: SolveMode,
        config: &ScatterConfig,
    ) -> Result<Self> {
        let k = config.wavenumber();
        let order = config.assembly.singular_order;
        let ctx_c = IntegrationContext::new(continuous, continuous, geometry.clone(), order)?;
        let ctx_d = IntegrationContext::new(discontinuous, discontinuous, geometry.clone(), order)?;
        let dlp = assemble_operator(&OperatorSpec::helmholtz(k, Operator::Dlp)?, &ctx_c, mode, config)?;
        let slp = assemble_operator(&OperatorSpec::helmholtz(k, Operator::Slp)?, &ctx_d, mode, config)?;
        Ok(Self {
            mass: assemble_mass(continuous, continuous, geometry, &geometry.rule)?,
            dlp,
            slp_discontinuous: slp,
            transforms: sparse_transform_matrices(continuous, discontinuous, geometry)?,
            wavenumber: k,
            coupling: Complex64::new(0.0, k).inv(),
        })
    }

    pub fn apply(&self, x: &[Complex64]) -> Result<Vec<Complex64>> {
        let mx = self.mass.apply(x)?;
        let kx = self.dlp.apply(x)?;
        let s = |v: &[Complex64]| self.slp_discontinuous.apply(v);
        let dx = apply_hypersingular(&self.transforms, &s, self.wavenumber, x)?;
        Ok((0..x.len())
            .map(|i| mx[i] * 0.5 - kx[i] - self.coupling * dx[i])
            .collect())
    }

    /// M u_inc − η M ∂u_inc/∂n.
    pub fn rhs(&self, dirichlet: &[Complex64], neumann: &[Complex64]) -> Result<Vec<Complex64>> {
        let a = self.mass.apply(dirichlet)?;
        let b = self.mass.apply(neumann)?;
        Ok(a.iter().zip(&b).map(|(&p, &q)| p - self.coupling * q).collect())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PhaseTimings {
    /// Seconds.
    pub assembly: f64,
    pub solve: f64,
    pub far_field: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub mode: SolveMode,
    pub wavenumber: f64,
    pub elements: usize,
    pub dofs: usize,
    pub coefficients: Vec<Complex64>,
    pub iterations: usize,
    pub restarts: usize,
    pub residual: f64,
    pub history: Vec<f64>,
    /// Stored / dense entries of the double-layer and discontinuous single-layer operators.
    pub compression: [f64; 2],
    pub timings: PhaseTimings,
}

/// Assembles and solves the Burton–Miller system for the total surface field.
pub fn burton_miller_solve(config: &ScatterConfig, wave: &PlaneWave, mode: SolveMode) -> Result<SolveReport> {
    config.validate()?;
    let k = config.wavenumber();
    if (wave.wavenumber - k).abs() > 1e-12 * k {
        return Err(BemError::InvalidArgument(format!(
            "plane wave has k = {} but the configuration gives {k}",
            wave.wavenumber
        )));
    }
    let mesh = config.mesh.clone();
    mesh.check_closed_outward()?;
    check_resolution(&mesh, k, config.force)?;

    let start = Instant::now();
    let rule = regular_rule(config.assembly.regular_order)?;
    let geometry = Arc::new(precompute_geometry(&mesh, &rule)?);
    let continuous = FunctionSpace::new(mesh.clone(), SpaceFamily::P1Continuous);
    let discontinuous = FunctionSpace::new(mesh.clone(), SpaceFamily::P1Discontinuous);
    let system = BurtonMiller::assemble(&continuous, &discontinuous, &geometry, mode, config)?;
    let assembly = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let (dirichlet, neumann) = incident_trace(wave, &continuous)?;
    let b = system.rhs(&dirichlet, &neumann)?;
    let out = par::with_workers(config.assembly.workers, || {
        gmres(|x| system.apply(x), &b, None, &config.solver)
    })?;
    let solve = start.elapsed().as_secs_f64();
    log::info!(
        "{mode} solve: {} iterations, relative residual {:.3e}",
        out.iterations,
        out.residual
    );
    Ok(SolveReport {
        mode,
        wavenumber: k,
        elements: mesh.element_count(),
        dofs: continuous.dof_count(),
        coefficients: out.x,
        iterations: out.iterations,
        restarts: out.restarts,
        residual: out.residual,
        history: out.history,
        compression: [
            system.dlp.compression_ratio(),
            system.slp_discontinuous.compression_ratio(),
        ],
        timings: PhaseTimings {
            assembly,
            solve,
            far_field: 0.0,
        },
    })
}

/// Indices of points within three element diameters of some element.
pub fn near_field_points(geometry: &ElementGeometry, points: &[Vec3]) -> Vec<usize> {
    par::map_indexed(points.len(), |i| {
        let x = points[i];
        (0..geometry.element_count()).any(|e| {
            vec3::dist(x, geometry.centroids[e]) < NEAR_FIELD_DIAMETERS * geometry.diameters[e]
        })
    })
    .into_iter()
    .enumerate()
    .filter_map(|(i, near)| near.then_some(i))
    .collect()
}

/// Double-layer potential u(x) = ∫ ∂g(x, y)/∂n_y Φ(y) ds_y at exterior points.
pub fn evaluate_far_field(
    space: &FunctionSpace,
    coefficients: &[Complex64],
    points: &[Vec3],
    k: f64,
) -> Result<Vec<Complex64>> {
    if coefficients.len() != space.dof_count() {
        return Err(BemError::DimensionMismatch {
            expected: space.dof_count(),
            actual: coefficients.len(),
        });
    }
    if !(k >= 0.0 && k.is_finite()) {
        return Err(BemError::InvalidArgument("wavenumber must be non-negative".into()));
    }
    let rule = regular_rule(crate::quadrature::MAX_REGULAR_ORDER)?;
    let geometry = precompute_geometry(space.mesh(), &rule)?;
    let near = near_field_points(&geometry, points);
    if !near.is_empty() {
        log::warn!(
            "{} of {} evaluation points lie within {NEAR_FIELD_DIAMETERS} element diameters of the surface; \
             the potential is inaccurate there",
            near.len(),
            points.len()
        );
    }
    let table = crate::spaces::evaluate_basis(space, &rule);
    let nq = rule.len();
    let m = geometry.element_count();
    // density at every quadrature point, weighted by w_q |J|
    let density: Vec<Complex64> = (0..m * nq)
        .map(|p| {
            let (e, q) = (p / nq, p % nq);
            let phi: Complex64 = space
                .element_dofs(e)
                .iter()
                .enumerate()
                .map(|(l, &d)| coefficients[d] * table.value(l, q))
                .sum();
            phi * (rule.weights()[q] * geometry.jacobians[e])
        })
        .collect();
    Ok(par::map_indexed(points.len(), |i| {
        let x = points[i];
        let mut acc = Complex64::new(0.0, 0.0);
        for e in 0..m {
            let n = geometry.normals[e];
            for (q, &y) in geometry.element_points(e).iter().enumerate() {
                let d = vec3::sub(x, y);
                let r = vec3::norm(d);
                let proj = vec3::dot(d, n) / (4.0 * PI * r * r * r);
                let kernel = if k == 0.0 {
                    Complex64::new(proj, 0.0)
                } else {
                    let (s, c) = (k * r).sin_cos();
                    Complex64::new(1.0, -k * r) * Complex64::new(c, s) * proj
                };
                acc += kernel * density[e * nq + q];
            }
        }
        acc
    }))
}

/// 20 log₁₀(R |u / u₀|); −∞ when u = 0.
pub fn target_strength(u: Complex64, amplitude: f64, radius: f64) -> Result<f64> {
    if amplitude == 0.0 || !(radius > 0.0) {
        return Err(BemError::InvalidArgument(
            "target strength needs a non-zero amplitude and a positive radius".into(),
        ));
    }
    let ratio = radius * u.norm() / amplitude.abs();
    Ok(if ratio == 0.0 { f64::NEG_INFINITY } else { 20.0 * ratio.log10() })
}

/// Mean relative magnitude deviation (1/n) Σ ||a_i| − |b_i|| / |b_i|.
pub fn deviation(a: &[Complex64], b: &[Complex64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(BemError::DimensionMismatch {
            expected: b.len(),
            actual: a.len(),
        });
    }
    if b.is_empty() {
        return Err(BemError::InvalidArgument("deviation needs at least one sample".into()));
    }
    let mut sum = 0.0;
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        let nb = y.norm();
        if nb == 0.0 {
            return Err(BemError::DivisionByZero { index: i });
        }
        sum += (x.norm() - nb).abs() / nb;
    }
    Ok(sum / b.len() as f64)
}

/// Far-field samples of one scattering run.
#[derive(Debug, Clone, PartialEq)]
pub struct FarField {
    pub angles_deg: Vec<f64>,
    pub values: Vec<Complex64>,
    pub target_strength_db: Vec<f64>,
}

/// Solve, then evaluate the far field on the configured ring.
pub fn run_scattering(config: &ScatterConfig, wave: &PlaneWave, mode: SolveMode) -> Result<(SolveReport, FarField)> {
    let mut report = burton_miller_solve(config, wave, mode)?;
    let start = Instant::now();
    let space = FunctionSpace::new(config.mesh.clone(), SpaceFamily::P1Continuous);
    let (angles, points) = config.evaluation_ring();
    let values = par::with_workers(config.assembly.workers, || {
        evaluate_far_field(&space, &report.coefficients, &points, report.wavenumber)
    })?;
    let ts = values
        .iter()
        .map(|&u| target_strength(u, wave.amplitude, config.radius))
        .collect::<Result<Vec<f64>>>()?;
    report.timings.far_field = start.elapsed().as_secs_f64();
    Ok((
        report,
        FarField {
            angles_deg: angles,
            values,
            target_strength_db: ts,
        },
    ))
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn plane_wave_direction_is_unit(theta in -10.0f64..10.0, k in 0.01f64..50.0) {
            let w = PlaneWave::from_angle(1.0, theta, k).unwrap();
            prop_assert!((crate::vec3::norm(w.direction) - 1.0).abs() <= 1e-12);
            prop_assert!((w.value([0.3, -0.2, 0.7]).norm() - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn target_strength_is_scale_free(re in -1.0f64..1.0, im in -1.0f64..1.0, a in 0.1f64..10.0, c in 0.1f64..10.0) {
            let u = Complex64::new(re, im);
            prop_assume!(u.norm() > 1e-6);
            let base = target_strength(u, a, 100.0).unwrap();
            let scaled = target_strength(u * c, a * c, 100.0).unwrap();
            prop_assert!((base - scaled).abs() <= 1e-9);
        }
    }
}
