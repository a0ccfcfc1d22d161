use super::*;
use crate::assembly::{build_backends, dense_operator, integration_context, AssemblyConfig};
use crate::kernels::Operator;
use crate::mesh::{refine_unit_sphere, TriangleMesh};
use crate::spaces::{build_space, SpaceFamily};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sphere(level: u32) -> Arc<TriangleMesh> {
    Arc::new(refine_unit_sphere(level).unwrap())
}

fn assemble<T: Scalar>(
    spec: &OperatorSpec,
    ctx: &IntegrationContext,
    tree: &BlockTree,
    aca_cfg: &AcaConfig,
) -> (HMatrix<T>, HAssemblyStats) {
    let backends = build_backends(spec, ctx, &AssemblyConfig::default()).unwrap();
    let refs: Vec<&dyn BatchIntegrator> = backends.iter().map(|b| b as &dyn BatchIntegrator).collect();
    assemble_hmatrix(spec, ctx, tree, aca_cfg, &refs).unwrap()
}

fn unit_vector(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

fn norm2<T: Scalar>(v: &[T]) -> f64 {
    v.iter().map(|x| x.abs_sqr()).sum::<f64>().sqrt()
}

#[test]
fn level3_slp_leaves_and_matvec() {
    let p0 = build_space(sphere(3), SpaceFamily::P0);
    let cfg = AssemblyConfig::default();
    let ctx = integration_context(&p0, &p0, &cfg).unwrap();
    let spec = OperatorSpec::laplace(Operator::Slp);
    let (a, _) = dense_operator::<f64>(&spec, &ctx, &cfg).unwrap();
    let tree = block_tree_for_spaces(&p0, &p0, DEFAULT_LEAF_SIZE, DEFAULT_ETA);
    assert!(tree.admissible_count() > 0);
    let eps = 1e-5;
    let (h, stats) = assemble::<f64>(&spec, &ctx, &tree, &AcaConfig::default());
    assert_eq!(stats.leaves, tree.leaves.len());
    for (leaf, blk) in tree.leaves.iter().zip(h.blocks()) {
        if leaf.kind != BlockKind::Admissible {
            continue;
        }
        let LeafPayload::LowRank(lr) = &blk.payload else { continue };
        let oracle = a.submatrix(tree.rows.indices(leaf.row), tree.cols.indices(leaf.col));
        let approx = DenseMatrix::from_fn(lr.rows, lr.cols, |i, j| lr.entry(i, j));
        let err = approx.relative_distance(&oracle).unwrap();
        assert!(err <= 10.0 * eps, "leaf ({}, {}) error {err}", leaf.row, leaf.col);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..10 {
        let x = unit_vector(p0.dof_count(), &mut rng);
        let hx = h.matvec(&x).unwrap();
        let ax = a.matvec(&x).unwrap();
        let diff: Vec<f64> = hx.iter().zip(&ax).map(|(p, q)| p - q).collect();
        assert!(norm2(&diff) / norm2(&ax) <= 10.0 * eps);
    }
    let zero = h.matvec(&vec![0.0; p0.dof_count()]).unwrap();
    assert!(zero.iter().all(|&v| v == 0.0));
    assert!(h.matvec(&[1.0]).is_err());
}

#[test]
fn eta_zero_is_dense() {
    for family in [SpaceFamily::P0, SpaceFamily::P1Continuous] {
        let s = build_space(sphere(2), family);
        let cfg = AssemblyConfig::default();
        let ctx = integration_context(&s, &s, &cfg).unwrap();
        let spec = OperatorSpec::helmholtz(2.0, Operator::Dlp).unwrap();
        let (a, _) = dense_operator::<Complex64>(&spec, &ctx, &cfg).unwrap();
        let tree = block_tree_for_spaces(&s, &s, 16, 0.0);
        assert_eq!(tree.admissible_count(), 0);
        let (h, _) = assemble::<Complex64>(&spec, &ctx, &tree, &AcaConfig::default());
        assert!(h.to_dense().relative_distance(&a).unwrap() <= 1e-12);
        let x: Vec<Complex64> = (0..s.dof_count()).map(|i| Complex64::new(i as f64, 1.0)).collect();
        let (hx, ax) = (h.matvec(&x).unwrap(), a.matvec(&x).unwrap());
        let diff: Vec<Complex64> = hx.iter().zip(&ax).map(|(p, q)| p - q).collect();
        assert!(norm2(&diff) / norm2(&ax) <= 1e-13);
        let st = h.compression_stats();
        assert_eq!(st.ratio, 1.0);
        assert!(st.rank_histogram.is_empty());
    }
}

#[test]
fn rank_zero_leaves_store_only_the_near_field() {
    let p0 = build_space(sphere(2), SpaceFamily::P0);
    let cfg = AssemblyConfig::default();
    let ctx = integration_context(&p0, &p0, &cfg).unwrap();
    let spec = OperatorSpec::laplace(Operator::Slp);
    let tree = block_tree_for_spaces(&p0, &p0, 16, DEFAULT_ETA);
    let aca_cfg = AcaConfig {
        max_rank: Some(0),
        ..AcaConfig::default()
    };
    let (h, stats) = assemble::<f64>(&spec, &ctx, &tree, &aca_cfg);
    assert_eq!(stats.rank_limited, tree.admissible_count());
    let near: usize = tree
        .leaves
        .iter()
        .filter(|l| l.kind == BlockKind::Inadmissible)
        .map(|l| {
            let (m, n) = tree.leaf_shape(l);
            m * n
        })
        .sum();
    let st = h.compression_stats();
    assert_eq!(st.stored_entries, near);
    assert_eq!(st.rank_histogram.get(&0), Some(&tree.admissible_count()));
}

#[test]
fn worker_count_independence() {
    let s = build_space(sphere(3), SpaceFamily::P1Continuous);
    let cfg = AssemblyConfig::default();
    let ctx = integration_context(&s, &s, &cfg).unwrap();
    let spec = OperatorSpec::helmholtz(3.0, Operator::Slp).unwrap();
    let tree = block_tree_for_spaces(&s, &s, DEFAULT_LEAF_SIZE, DEFAULT_ETA);
    let aca_cfg = AcaConfig {
        offload_threshold: 330,
        ..AcaConfig::default()
    };
    let (h1, st1) = par::with_workers(Some(1), || assemble::<Complex64>(&spec, &ctx, &tree, &aca_cfg));
    let (hn, stn) = par::with_workers(Some(par::max_workers()), || {
        assemble::<Complex64>(&spec, &ctx, &tree, &aca_cfg)
    });
    assert!(st1.backend_jobs > 0 && st1.host_jobs > 0);
    assert_eq!(st1.backend_jobs, stn.backend_jobs);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x: Vec<Complex64> = unit_vector(s.dof_count(), &mut rng)
        .into_iter()
        .map(|v| Complex64::new(v, -v))
        .collect();
    let y1 = par::with_workers(Some(1), || h1.matvec(&x).unwrap());
    let yn = hn.matvec(&x).unwrap();
    let diff: Vec<Complex64> = y1.iter().zip(&yn).map(|(p, q)| p - q).collect();
    assert!(norm2(&diff) <= 1e-10 * norm2(&y1));
}

#[test]
fn routing_by_pair_count() {
    assert_eq!(route(500, DEFAULT_OFFLOAD_THRESHOLD), Route::Host);
    assert_eq!(route(20_000, DEFAULT_OFFLOAD_THRESHOLD), Route::Backend);
    assert_eq!(route(10_000, DEFAULT_OFFLOAD_THRESHOLD), Route::Backend);

    // one P0 row over far-away column elements: pair count = column count
    let mesh = sphere(6);
    let p0 = build_space(mesh.clone(), SpaceFamily::P0);
    let cfg = AssemblyConfig::default();
    let ctx = integration_context(&p0, &p0, &cfg).unwrap();
    let spec = OperatorSpec::laplace(Operator::Slp);
    let backends = build_backends(&spec, &ctx, &cfg).unwrap();
    let refs: Vec<&dyn BatchIntegrator> = backends.iter().map(|b| b as &dyn BatchIntegrator).collect();
    let top = (0..mesh.element_count())
        .max_by(|&a, &b| ctx.geometry.centroids[a][2].total_cmp(&ctx.geometry.centroids[b][2]))
        .unwrap();
    let south: Vec<usize> = (0..mesh.element_count())
        .filter(|&e| ctx.geometry.centroids[e][2] < -0.1)
        .collect();
    assert!(south.len() >= 20_000);
    let row = [top];
    for (cols, expected) in [(&south[..500], Route::Host), (&south[..20_000], Route::Backend)] {
        let counters = RouteCounters::default();
        let oracle = BlockOracle::new(&spec, &ctx, &refs, DEFAULT_OFFLOAD_THRESHOLD, &counters, &row, cols);
        assert_eq!(oracle.row_pairs(0), cols.len());
        let values: Vec<f64> = oracle.row(0).unwrap();
        let (host, backend, _, _) = counters.snapshot();
        match expected {
            Route::Host => assert_eq!((host, backend), (1, 0)),
            Route::Backend => assert_eq!((host, backend), (0, 1)),
        }
        // both paths agree with the per-pair integrator
        for (k, &b) in cols.iter().enumerate().step_by(97) {
            let blk = local_matrix(&spec, top, b, &ctx).unwrap();
            assert!((values[k] - blk.get(0, 0).re).abs() <= 1e-12 * blk.max_abs());
        }
    }
}

#[derive(Debug)]
struct FailingBackend(OperatorSpec);

impl BatchIntegrator for FailingBackend {
    fn device_id(&self) -> usize {
        9
    }
    fn spec(&self) -> &OperatorSpec {
        &self.0
    }
    fn block_shape(&self) -> (usize, usize) {
        (1, 1)
    }
    fn integrate_batch(&self, _: &BatchRequest) -> Result<crate::backend::RawResultBuffer> {
        Err(BemError::Capacity("device out of memory".into()))
    }
}

#[test]
fn block_errors_carry_coordinates() {
    let p0 = build_space(sphere(2), SpaceFamily::P0);
    let cfg = AssemblyConfig::default();
    let ctx = integration_context(&p0, &p0, &cfg).unwrap();
    let spec = OperatorSpec::laplace(Operator::Slp);
    let tree = block_tree_for_spaces(&p0, &p0, 16, DEFAULT_ETA);
    let failing = FailingBackend(spec);
    let refs: [&dyn BatchIntegrator; 1] = [&failing];
    let aca_cfg = AcaConfig {
        offload_threshold: 1,
        ..AcaConfig::default()
    };
    match assemble_hmatrix::<f64>(&spec, &ctx, &tree, &aca_cfg, &refs) {
        Err(BemError::Block {
            row_start,
            row_end,
            col_start,
            col_end,
            source,
        }) => {
            assert!(row_end > row_start && col_end > col_start);
            assert!(matches!(*source, BemError::Capacity(_)));
        }
        other => panic!("unexpected {other:?}"),
    }
    // a tree built for another space is rejected up front
    let p1 = build_space(sphere(2), SpaceFamily::P1Continuous);
    let wrong = block_tree_for_spaces(&p1, &p1, 16, DEFAULT_ETA);
    let backends = build_backends(&spec, &ctx, &cfg).unwrap();
    let refs: Vec<&dyn BatchIntegrator> = backends.iter().map(|b| b as &dyn BatchIntegrator).collect();
    assert!(assemble_hmatrix::<f64>(&spec, &ctx, &wrong, &AcaConfig::default(), &refs).is_err());
    let helm = OperatorSpec::helmholtz(1.0, Operator::Slp).unwrap();
    assert!(assemble_hmatrix::<f64>(&helm, &ctx, &tree, &AcaConfig::default(), &refs).is_err());
}

#[test]
fn level4_compression_ratio() {
    let p0 = build_space(sphere(4), SpaceFamily::P0);
    let cfg = AssemblyConfig::default();
    let ctx = integration_context(&p0, &p0, &cfg).unwrap();
    let spec = OperatorSpec::laplace(Operator::Slp);
    let tree = block_tree_for_spaces(&p0, &p0, DEFAULT_LEAF_SIZE, DEFAULT_ETA);
    let (h, stats) = assemble::<f64>(&spec, &ctx, &tree, &AcaConfig::default());
    let st = h.compression_stats();
    assert_eq!(st.dense_entries, 5120 * 5120);
    assert!(st.ratio < 0.5, "ratio {}", st.ratio);
    assert_eq!(st.rank_histogram.values().sum::<usize>() + stats.dense_fallbacks, stats.admissible_leaves);
}
