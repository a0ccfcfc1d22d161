//! Hierarchical matrices: cluster and block trees, ACA compression of
//! admissible blocks, and H-matrix × vector products.
//!
//! Inadmissible leaves hold every touching element pair and are assembled
//! densely on the host. Admissible leaves are compressed by ACA, whose row
//! and column oracles sum local blocks over the element pairs behind one
//! matrix row or column. Large oracle jobs go to a batched backend, small
//! ones stay on the host.

pub mod aca;
pub mod cluster;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

pub use aca::{aca, AcaConfig, AcaStatus, LowRankBlock, DEFAULT_ACA_TOLERANCE, DEFAULT_OFFLOAD_THRESHOLD};
pub use cluster::{
    build_block_tree, build_cluster_tree, build_cluster_tree_with_supports, is_admissible, BlockKind, BlockLeaf,
    BlockTree, ClusterNode, ClusterTree, DEFAULT_ETA, DEFAULT_LEAF_SIZE,
};

use crate::assembly::{check_backends, check_scalar, DenseMatrix};
use crate::backend::{BatchIntegrator, BatchRequest};
use crate::error::{BemError, Result};
use crate::kernels::{local_matrix, IntegrationContext, LocalBlock, OperatorSpec};
use crate::par;
use crate::scalar::Scalar;
use crate::spaces::FunctionSpace;

/// Cluster trees over the test and trial DOFs and their block tree.
pub fn block_tree_for_spaces(test: &FunctionSpace, trial: &FunctionSpace, leaf_size: usize, eta: f64) -> BlockTree {
    let tree = |s: &FunctionSpace| {
        Arc::new(build_cluster_tree_with_supports(
            &s.dof_positions(),
            &s.dof_support_boxes(),
            leaf_size,
        ))
    };
    let rows = tree(test);
    let cols = if std::ptr::eq(test, trial) { rows.clone() } else { tree(trial) };
    build_block_tree(rows, cols, eta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    Host,
    Backend,
}

/// Where a row or column job with `pairs` element pairs runs.
pub fn route(pairs: usize, threshold: usize) -> Route {
    if pairs >= threshold {
        Route::Backend
    } else {
        Route::Host
    }
}

/// Instrumented counts of row/column jobs per path.
#[derive(Debug, Default)]
pub struct RouteCounters {
    pub host_jobs: AtomicUsize,
    pub backend_jobs: AtomicUsize,
    pub host_pairs: AtomicUsize,
    pub backend_pairs: AtomicUsize,
    /// Round-robin cursor over the backends.
    next_backend: AtomicUsize,
}

impl RouteCounters {
    pub fn snapshot(&self) -> (usize, usize, usize, usize) {
        (
            self.host_jobs.load(Ordering::Relaxed),
            self.backend_jobs.load(Ordering::Relaxed),
            self.host_pairs.load(Ordering::Relaxed),
            self.backend_pairs.load(Ordering::Relaxed),
        )
    }
}

/// Element list of a DOF set, sorted.
fn support_elements(space: &FunctionSpace, dofs: &[usize]) -> Vec<usize> {
    let mut e: Vec<usize> = dofs
        .iter()
        .flat_map(|&d| space.dof_support(d).iter().map(|&(e, _)| e))
        .collect();
    e.sort_unstable();
    e.dedup();
    e
}

/// Rows and columns of one block (t, s) computed from element pairs.
pub struct BlockOracle<'a> {
    spec: &'a OperatorSpec,
    ctx: &'a IntegrationContext,
    backends: &'a [&'a dyn BatchIntegrator],
    threshold: usize,
    counters: &'a RouteCounters,
    row_dofs: &'a [usize],
    col_dofs: &'a [usize],
    row_elements: Vec<usize>,
    col_elements: Vec<usize>,
    /// Block-local index of every trial DOF (usize::MAX outside the block).
    col_slot: Vec<usize>,
    row_slot: Vec<usize>,
}

impl<'a> BlockOracle<'a> {
    pub fn new(
        spec: &'a OperatorSpec,
        ctx: &'a IntegrationContext,
        backends: &'a [&'a dyn BatchIntegrator],
        threshold: usize,
        counters: &'a RouteCounters,
        row_dofs: &'a [usize],
        col_dofs: &'a [usize],
    ) -> Self {
        let slots = |n: usize, dofs: &[usize]| {
            let mut s = vec![usize::MAX; n];
            for (k, &d) in dofs.iter().enumerate() {
                s[d] = k;
            }
            s
        };
        Self {
            spec,
            ctx,
            backends,
            threshold,
            counters,
            row_dofs,
            col_dofs,
            row_elements: support_elements(&ctx.test, row_dofs),
            col_elements: support_elements(&ctx.trial, col_dofs),
            col_slot: slots(ctx.trial.dof_count(), col_dofs),
            row_slot: slots(ctx.test.dof_count(), row_dofs),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.row_dofs.len(), self.col_dofs.len())
    }

    /// Element pairs behind row `i` of the block.
    pub fn row_pairs(&self, i: usize) -> usize {
        self.ctx.test.dof_support(self.row_dofs[i]).len() * self.col_elements.len()
    }

    pub fn col_pairs(&self, j: usize) -> usize {
        self.ctx.trial.dof_support(self.col_dofs[j]).len() * self.row_elements.len()
    }

    fn host_blocks(&self, pairs: &[(usize, usize)]) -> Result<Vec<LocalBlock>> {
        self.counters.host_jobs.fetch_add(1, Ordering::Relaxed);
        self.counters.host_pairs.fetch_add(pairs.len(), Ordering::Relaxed);
        pairs.iter().map(|&(a, b)| local_matrix(self.spec, a, b, self.ctx)).collect()
    }

    /// Local blocks of `pairs`, from a backend when the job is large enough
    /// and one is available, otherwise from the host integrator.
    fn blocks(&self, pairs: Vec<(usize, usize)>) -> Result<Vec<LocalBlock>> {
        match route(pairs.len(), self.threshold) {
            Route::Host => self.host_blocks(&pairs),
            Route::Backend if self.backends.is_empty() => self.host_blocks(&pairs),
            Route::Backend => {
                let k = self.counters.next_backend.fetch_add(1, Ordering::Relaxed);
                let backend = self.backends[k % self.backends.len()];
                self.counters.backend_jobs.fetch_add(1, Ordering::Relaxed);
                self.counters.backend_pairs.fetch_add(pairs.len(), Ordering::Relaxed);
                let n = pairs.len();
                let buf = backend.integrate_batch(&BatchRequest::new(pairs, 0))?;
                Ok((0..n)
                    .map(|p| {
                        let mut blk = LocalBlock::zeros(buf.rows, buf.cols);
                        for i in 0..buf.rows {
                            for j in 0..buf.cols {
                                let (re, im) = buf.entry(p, i, j);
                                blk.re[i * buf.cols + j] = re;
                                blk.im[i * buf.cols + j] = im;
                            }
                        }
                        blk
                    })
                    .collect())
            }
        }
    }

    pub fn row<T: Scalar>(&self, i: usize) -> Result<Vec<T>> {
        let support = self.ctx.test.dof_support(self.row_dofs[i]);
        let pairs: Vec<(usize, usize)> = support
            .iter()
            .flat_map(|&(a, _)| self.col_elements.iter().map(move |&b| (a, b)))
            .collect();
        let blocks = self.blocks(pairs)?;
        let mut out = vec![T::zero(); self.col_dofs.len()];
        let mut p = 0;
        for &(_, la) in support {
            for &b in &self.col_elements {
                let blk = &blocks[p];
                p += 1;
                for (lb, &d) in self.ctx.trial.element_dofs(b).iter().enumerate() {
                    let c = self.col_slot[d];
                    if c != usize::MAX {
                        let k = la as usize * blk.cols + lb;
                        out[c] += T::from_parts(blk.re[k], blk.im[k]);
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn column<T: Scalar>(&self, j: usize) -> Result<Vec<T>> {
        let support = self.ctx.trial.dof_support(self.col_dofs[j]);
        let pairs: Vec<(usize, usize)> = self
            .row_elements
            .iter()
            .flat_map(|&a| support.iter().map(move |&(b, _)| (a, b)))
            .collect();
        let blocks = self.blocks(pairs)?;
        let mut out = vec![T::zero(); self.row_dofs.len()];
        let mut p = 0;
        for &a in &self.row_elements {
            for &(_, lb) in support {
                let blk = &blocks[p];
                p += 1;
                for (la, &d) in self.ctx.test.element_dofs(a).iter().enumerate() {
                    let r = self.row_slot[d];
                    if r != usize::MAX {
                        let k = la * blk.cols + lb as usize;
                        out[r] += T::from_parts(blk.re[k], blk.im[k]);
                    }
                }
            }
        }
        Ok(out)
    }

    /// The whole block, by host integration over all element pairs.
    pub fn dense<T: Scalar>(&self) -> Result<DenseMatrix<T>> {
        let (m, n) = self.shape();
        let mut out = DenseMatrix::zeros(m, n);
        for &a in &self.row_elements {
            let test_dofs = self.ctx.test.element_dofs(a);
            for &b in &self.col_elements {
                let blk = local_matrix(self.spec, a, b, self.ctx)?;
                for (la, &dr) in test_dofs.iter().enumerate() {
                    let r = self.row_slot[dr];
                    if r == usize::MAX {
                        continue;
                    }
                    for (lb, &dc) in self.ctx.trial.element_dofs(b).iter().enumerate() {
                        let c = self.col_slot[dc];
                        if c != usize::MAX {
                            let k = la * blk.cols + lb;
                            let v = out.get(r, c) + T::from_parts(blk.re[k], blk.im[k]);
                            out.set(r, c, v);
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LeafPayload<T> {
    Dense(DenseMatrix<T>),
    LowRank(LowRankBlock<T>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeafBlock<T> {
    pub payload: LeafPayload<T>,
    /// Admissible block stored densely because ACA reached full rank.
    pub dense_fallback: bool,
}

impl<T: Scalar> LeafBlock<T> {
    pub fn stored_entries(&self) -> usize {
        match &self.payload {
            LeafPayload::Dense(d) => d.rows() * d.cols(),
            LeafPayload::LowRank(l) => l.stored_entries(),
        }
    }

    /// y += B x for the block-local slices.
    fn apply_add(&self, x: &[T], y: &mut [T]) {
        match &self.payload {
            LeafPayload::Dense(d) => {
                for (i, yi) in y.iter_mut().enumerate() {
                    let row = d.row(i);
                    let mut acc = T::zero();
                    for (&a, &b) in row.iter().zip(x) {
                        acc += a * b;
                    }
                    *yi += acc;
                }
            }
            LeafPayload::LowRank(l) => l.apply_add(x, y),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct HAssemblyStats {
    pub leaves: usize,
    pub admissible_leaves: usize,
    pub dense_fallbacks: usize,
    /// Admissible leaves where ACA stopped at a rank cap below full rank.
    pub rank_limited: usize,
    pub host_jobs: usize,
    pub backend_jobs: usize,
    pub host_pairs: usize,
    pub backend_pairs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressionStats {
    pub stored_entries: usize,
    pub dense_entries: usize,
    pub ratio: f64,
    /// Rank → number of low-rank leaves.
    pub rank_histogram: BTreeMap<usize, usize>,
    pub max_rank: usize,
}

#[derive(Debug, Clone)]
pub struct HMatrix<T> {
    tree: BlockTree,
    blocks: Vec<LeafBlock<T>>,
}

impl<T: Scalar> HMatrix<T> {
    pub fn rows(&self) -> usize {
        self.tree.rows.len()
    }

    pub fn cols(&self) -> usize {
        self.tree.cols.len()
    }

    pub fn block_tree(&self) -> &BlockTree {
        &self.tree
    }

    pub fn blocks(&self) -> &[LeafBlock<T>] {
        &self.blocks
    }

    /// y = H x in the original DOF ordering.
    pub fn matvec(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.cols() {
            return Err(BemError::DimensionMismatch {
                expected: self.cols(),
                actual: x.len(),
            });
        }
        let xp: Vec<T> = self.tree.cols.permutation().iter().map(|&j| x[j]).collect();
        let parts = par::map_indexed(self.blocks.len(), |l| {
            let leaf = &self.tree.leaves[l];
            let (t, s) = (self.tree.rows.node(leaf.row), self.tree.cols.node(leaf.col));
            let mut y = vec![T::zero(); t.len()];
            self.blocks[l].apply_add(&xp[s.start..s.end], &mut y);
            y
        });
        let mut yp = vec![T::zero(); self.rows()];
        for (leaf, part) in self.tree.leaves.iter().zip(parts) {
            let start = self.tree.rows.node(leaf.row).start;
            for (a, b) in yp[start..].iter_mut().zip(part) {
                *a += b;
            }
        }
        let mut y = vec![T::zero(); self.rows()];
        for (k, &i) in self.tree.rows.permutation().iter().enumerate() {
            y[i] = yp[k];
        }
        Ok(y)
    }

    /// Expands every leaf into a dense matrix in the original ordering.
    pub fn to_dense(&self) -> DenseMatrix<T> {
        let mut out = DenseMatrix::zeros(self.rows(), self.cols());
        let (rp, cp) = (self.tree.rows.permutation(), self.tree.cols.permutation());
        for (leaf, blk) in self.tree.leaves.iter().zip(&self.blocks) {
            let (t, s) = (self.tree.rows.node(leaf.row), self.tree.cols.node(leaf.col));
            for i in 0..t.len() {
                for j in 0..s.len() {
                    let v = match &blk.payload {
                        LeafPayload::Dense(d) => d.get(i, j),
                        LeafPayload::LowRank(l) => l.entry(i, j),
                    };
                    out.set(rp[t.start + i], cp[s.start + j], v);
                }
            }
        }
        out
    }

    pub fn compression_stats(&self) -> CompressionStats {
        let mut stored = 0;
        let mut hist = BTreeMap::new();
        for b in &self.blocks {
            stored += b.stored_entries();
            if let LeafPayload::LowRank(l) = &b.payload {
                *hist.entry(l.rank()).or_insert(0) += 1;
            }
        }
        let dense = self.rows() * self.cols();
        CompressionStats {
            stored_entries: stored,
            dense_entries: dense,
            ratio: if dense == 0 { 1.0 } else { stored as f64 / dense as f64 },
            max_rank: hist.keys().next_back().copied().unwrap_or(0),
            rank_histogram: hist,
        }
    }
}

/// Assembles the operator as an H-matrix over `tree`, whose row and column
/// clusters must index the test and trial DOFs. With no backends every job
/// runs on the host.
pub fn assemble_hmatrix<T: Scalar>(
    spec: &OperatorSpec,
    ctx: &IntegrationContext,
    tree: &BlockTree,
    config: &AcaConfig,
    backends: &[&dyn BatchIntegrator],
) -> Result<(HMatrix<T>, HAssemblyStats)> {
    config.validate()?;
    check_scalar::<T>(spec)?;
    spec.check_spaces(&ctx.test, &ctx.trial)?;
    if !backends.is_empty() {
        check_backends(spec, ctx, backends)?;
    }
    if tree.rows.len() != ctx.test.dof_count() || tree.cols.len() != ctx.trial.dof_count() {
        return Err(BemError::DimensionMismatch {
            expected: ctx.test.dof_count(),
            actual: tree.rows.len(),
        });
    }
    let counters = RouteCounters::default();
    let fallbacks = AtomicUsize::new(0);
    let limited = AtomicUsize::new(0);
    let blocks = par::try_map_indexed(tree.leaves.len(), |l| {
        let leaf = &tree.leaves[l];
        let (t, s) = (tree.rows.node(leaf.row), tree.cols.node(leaf.col));
        let oracle = BlockOracle::new(
            spec,
            ctx,
            backends,
            config.offload_threshold,
            &counters,
            tree.rows.indices(leaf.row),
            tree.cols.indices(leaf.col),
        );
        let block = match leaf.kind {
            BlockKind::Inadmissible => oracle.dense().map(|d| LeafBlock {
                payload: LeafPayload::Dense(d),
                dense_fallback: false,
            }),
            BlockKind::Admissible => compress(&oracle, config, &fallbacks, &limited),
        };
        block.map_err(|e| BemError::Block {
            row_start: t.start,
            row_end: t.end,
            col_start: s.start,
            col_end: s.end,
            source: Box::new(e),
        })
    })?;
    let (host_jobs, backend_jobs, host_pairs, backend_pairs) = counters.snapshot();
    let stats = HAssemblyStats {
        leaves: tree.leaves.len(),
        admissible_leaves: tree.admissible_count(),
        dense_fallbacks: fallbacks.into_inner(),
        rank_limited: limited.into_inner(),
        host_jobs,
        backend_jobs,
        host_pairs,
        backend_pairs,
    };
    Ok((
        HMatrix {
            tree: tree.clone(),
            blocks,
        },
        stats,
    ))
}

fn compress<T: Scalar>(
    oracle: &BlockOracle<'_>,
    config: &AcaConfig,
    fallbacks: &AtomicUsize,
    limited: &AtomicUsize,
) -> Result<LeafBlock<T>> {
    let (m, n) = oracle.shape();
    let lr = aca(m, n, |i| oracle.row(i), |j| oracle.column(j), config)?;
    if lr.status == AcaStatus::RankLimit {
        if lr.rank() >= m.min(n) {
            fallbacks.fetch_add(1, Ordering::Relaxed);
            log::debug!("{m}x{n} admissible block reached full rank; storing it densely");
            return Ok(LeafBlock {
                payload: LeafPayload::Dense(oracle.dense()?),
                dense_fallback: true,
            });
        }
        limited.fetch_add(1, Ordering::Relaxed);
    }
    Ok(LeafBlock {
        payload: LeafPayload::LowRank(lr),
        dense_fallback: false,
    })
}

#[cfg(test)]
mod tests;
