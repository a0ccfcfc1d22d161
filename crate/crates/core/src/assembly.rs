//! Dense Galerkin assembly.
//!
//! The element-pair index space (test element major) is split evenly over
//! the devices by test element, so every device owns a contiguous block of
//! matrix rows when the test space is discontinuous. Each device walks its
//! range in chunks through a two-stage pipeline: while chunk i is integrated
//! by the backend, chunk i − 1 is accumulated into the matrix on the host.
//! Touching pairs are never sent to a backend; their blocks are computed up
//! front by the host singular integrator and written in place during
//! accumulation.

use std::ops::Range;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;

use crate::backend::{init_device, BatchIntegrator, BatchRequest, DeviceContext, RawResultBuffer};
use crate::error::{BemError, Result};
use crate::kernels::{local_matrix, singular_block, IntegrationContext, LocalBlock, OperatorSpec, Precision};
use crate::mesh::precompute_geometry;
use crate::par;
use crate::quadrature::regular_rule;
use crate::scalar::Scalar;
use crate::spaces::{FunctionSpace, SpaceFamily};

pub const DEFAULT_CHUNK_SIZE: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq)]
pub struct AssemblyConfig {
    /// Maximum element pairs per backend batch.
    pub chunk_size: usize,
    pub devices: usize,
    /// Worker threads; `None` uses the ambient pool.
    pub workers: Option<usize>,
    /// Precision of the regular (backend) integrals.
    pub precision: Precision,
    pub regular_order: usize,
    pub singular_order: usize,
    /// Memory budget for the matrix and its buffers; `None` reads the
    /// available system memory when it can.
    pub max_bytes: Option<usize>,
}

impl Default for AssemblyConfig {
    fn default() -> Self {
        Self {
            chunk_size: DEFAULT_CHUNK_SIZE,
            devices: 1,
            workers: None,
            precision: Precision::Double,
            regular_order: 4,
            singular_order: 4,
            max_bytes: None,
        }
    }
}

impl AssemblyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chunk_size == 0 {
            return Err(BemError::InvalidArgument("chunk size must be at least 1".into()));
        }
        if self.devices == 0 {
            return Err(BemError::InvalidArgument("device count must be at least 1".into()));
        }
        if self.workers == Some(0) {
            return Err(BemError::InvalidArgument("worker count must be at least 1".into()));
        }
        if self.singular_order == 0 {
            return Err(BemError::InvalidArgument("singular order must be positive".into()));
        }
        regular_rule(self.regular_order)?;
        Ok(())
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> DenseMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(BemError::DimensionMismatch {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn matvec(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.cols {
            return Err(BemError::DimensionMismatch {
                expected: self.cols,
                actual: x.len(),
            });
        }
        Ok(par::map_indexed(self.rows, |i| {
            self.row(i).iter().zip(x).map(|(&a, &b)| a * b).sum()
        }))
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> Self {
        Self::from_fn(rows.len(), cols.len(), |i, j| self.get(rows[i], cols[j]))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v.abs_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    /// ‖self − other‖_F / ‖other‖_F.
    pub fn relative_distance(&self, other: &Self) -> Result<f64> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(BemError::DimensionMismatch {
                expected: other.rows * other.cols,
                actual: self.rows * self.cols,
            });
        }
        let diff: f64 = self.data.iter().zip(&other.data).map(|(&a, &b)| (a - b).abs_sqr()).sum();
        Ok(diff.sqrt() / other.frobenius_norm())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Counters recorded during one dense assembly.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AssemblyStats {
    pub total_pairs: usize,
    pub regular_pairs: usize,
    /// Touching pairs whose blocks came from the singular cache.
    pub overridden_pairs: usize,
    pub singular_pairs: usize,
    pub chunks: usize,
    pub devices: usize,
    pub locked_entries: bool,
    pub bytes_estimate: usize,
}

/// Splits `[0, total)` into `devices` contiguous ranges whose sizes differ by at most one.
pub fn split_work(total: usize, devices: usize) -> Vec<Range<usize>> {
    let devices = devices.max(1);
    let (base, extra) = (total / devices, total % devices);
    let mut start = 0;
    (0..devices)
        .map(|d| {
            let len = base + usize::from(d < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

/// Geometry, basis tables and singular rules for a test/trial pair.
pub fn integration_context(
    test: &FunctionSpace,
    trial: &FunctionSpace,
    config: &AssemblyConfig,
) -> Result<IntegrationContext> {
    let rule = regular_rule(config.regular_order)?;
    let geometry = Arc::new(precompute_geometry(test.mesh(), &rule)?);
    IntegrationContext::new(test, trial, geometry, config.singular_order)
}

/// One host backend per configured device, in the configured precision.
pub fn build_backends(spec: &OperatorSpec, ctx: &IntegrationContext, config: &AssemblyConfig) -> Result<Vec<DeviceContext>> {
    let spec = spec.with_precision(config.precision);
    spec.check_spaces(&ctx.test, &ctx.trial)?;
    (0..config.devices.max(1))
        .map(|id| {
            init_device(
                ctx.test.mesh(),
                &ctx.geometry,
                (&ctx.test_table, &ctx.trial_table),
                &spec,
                id,
            )
        })
        .collect()
}

/// Singular blocks of every touching pair, grouped by test element and
/// sorted by trial element.
pub fn singular_blocks(spec: &OperatorSpec, ctx: &IntegrationContext) -> Result<Vec<Vec<(usize, LocalBlock)>>> {
    let mesh = ctx.test.mesh();
    let vertex_elements = mesh.vertex_elements();
    let elements = mesh.elements();
    par::try_map_indexed(mesh.element_count(), |a| {
        let mut near: Vec<usize> = elements[a]
            .iter()
            .flat_map(|&v| vertex_elements[v].iter().copied())
            .collect();
        near.sort_unstable();
        near.dedup();
        near.into_iter()
            .map(|b| {
                let rule = ctx.singular.get(ctx.classify(a, b))?;
                Ok((b, singular_block(spec, a, b, ctx, &rule)))
            })
            .collect()
    })
}

pub(crate) fn available_memory() -> Option<usize> {
    let info = std::fs::read_to_string("/proc/meminfo").ok()?;
    let line = info.lines().find(|l| l.starts_with("MemAvailable:"))?;
    let kb: usize = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

fn needs_locks(test: &FunctionSpace) -> bool {
    test.family() == SpaceFamily::P1Continuous
}

fn check_capacity<T>(rows: usize, cols: usize, locked: bool, buffers: usize, config: &AssemblyConfig) -> Result<usize> {
    let entries = rows as u128 * cols as u128;
    let mut bytes = entries * std::mem::size_of::<T>() as u128;
    if locked {
        bytes += entries * std::mem::size_of::<Mutex<T>>() as u128;
    }
    bytes += buffers as u128;
    let limit = config.max_bytes.or_else(available_memory);
    if let Some(limit) = limit {
        if bytes > limit as u128 {
            return Err(BemError::Capacity(format!(
                "dense {rows}x{cols} assembly needs about {bytes} bytes, budget is {limit}"
            )));
        }
    }
    Ok(bytes.min(usize::MAX as u128) as usize)
}

pub(crate) fn check_backends(spec: &OperatorSpec, ctx: &IntegrationContext, backends: &[&dyn BatchIntegrator]) -> Result<()> {
    if backends.is_empty() {
        return Err(BemError::InvalidArgument("at least one backend is required".into()));
    }
    let shape = (ctx.test.local_dofs(), ctx.trial.local_dofs());
    for b in backends {
        let bs = b.spec();
        if bs.equation != spec.equation || bs.operator != spec.operator || b.block_shape() != shape {
            return Err(BemError::InvalidArgument(format!(
                "backend {} was initialized for a different operator or space pair",
                b.device_id()
            )));
        }
    }
    Ok(())
}

pub(crate) fn check_scalar<T: Scalar>(spec: &OperatorSpec) -> Result<()> {
    if spec.is_complex() && !T::IS_COMPLEX {
        return Err(BemError::InvalidArgument(
            "Helmholtz operators need a complex matrix type".into(),
        ));
    }
    Ok(())
}

#[inline]
fn add_block_rows<T: Scalar>(rows: &mut [T], cols: usize, trial_dofs: &[usize], blk: &LocalBlock) {
    for i in 0..blk.rows {
        let row = &mut rows[i * cols..(i + 1) * cols];
        for (j, &c) in trial_dofs.iter().enumerate() {
            let k = i * blk.cols + j;
            row[c] += T::from_parts(blk.re[k], blk.im[k]);
        }
    }
}

#[inline]
fn add_block_locked<T: Scalar>(
    entries: &[Mutex<T>],
    cols: usize,
    test_dofs: &[usize],
    trial_dofs: &[usize],
    blk: &LocalBlock,
) {
    for (i, &r) in test_dofs.iter().enumerate() {
        for (j, &c) in trial_dofs.iter().enumerate() {
            let k = i * blk.cols + j;
            *entries[r * cols + c].lock() += T::from_parts(blk.re[k], blk.im[k]);
        }
    }
}

#[inline]
fn buffer_block(buf: &RawResultBuffer, slot: usize) -> LocalBlock {
    let bl = buf.block_len();
    let mut blk = LocalBlock::zeros(buf.rows, buf.cols);
    blk.re[..bl].copy_from_slice(&buf.re[slot * bl..(slot + 1) * bl]);
    if !buf.im.is_empty() {
        blk.im[..bl].copy_from_slice(&buf.im[slot * bl..(slot + 1) * bl]);
    }
    blk
}

/// Pairs of one chunk that go to the backend, and where each test-element
/// row of the chunk starts in the result buffer.
struct ChunkPlan {
    range: Range<usize>,
    first_row: usize,
    row_slots: Vec<usize>,
}

fn plan_chunk(range: Range<usize>, m: usize, singular: &[Vec<(usize, LocalBlock)>]) -> (ChunkPlan, Vec<(usize, usize)>) {
    let first_row = range.start / m;
    let last_row = (range.end - 1) / m;
    let mut pairs = Vec::with_capacity(range.len());
    let mut row_slots = Vec::with_capacity(last_row - first_row + 1);
    for a in first_row..=last_row {
        row_slots.push(pairs.len());
        let bs = range.start.max(a * m) - a * m;
        let be = range.end.min((a + 1) * m) - a * m;
        let sing = &singular[a];
        let mut si = sing.partition_point(|s| s.0 < bs);
        for b in bs..be {
            if si < sing.len() && sing[si].0 == b {
                si += 1;
            } else {
                pairs.push((a, b));
            }
        }
    }
    (
        ChunkPlan {
            range,
            first_row,
            row_slots,
        },
        pairs,
    )
}

/// Visits the blocks of test-element row `k` of a chunk in trial order.
#[inline]
fn for_row_blocks(
    plan: &ChunkPlan,
    k: usize,
    m: usize,
    buf: &RawResultBuffer,
    singular: &[Vec<(usize, LocalBlock)>],
    overridden: &AtomicUsize,
    mut f: impl FnMut(usize, &LocalBlock),
) {
    let a = plan.first_row + k;
    let bs = plan.range.start.max(a * m) - a * m;
    let be = plan.range.end.min((a + 1) * m) - a * m;
    let sing = &singular[a];
    let mut si = sing.partition_point(|s| s.0 < bs);
    let mut slot = plan.row_slots[k];
    let mut hits = 0;
    for b in bs..be {
        if si < sing.len() && sing[si].0 == b {
            f(b, &sing[si].1);
            si += 1;
            hits += 1;
        } else {
            f(b, &buffer_block(buf, slot));
            slot += 1;
        }
    }
    overridden.fetch_add(hits, Ordering::Relaxed);
}

fn chunk_ranges(range: Range<usize>, chunk: usize) -> Vec<Range<usize>> {
    (range.start..range.end)
        .step_by(chunk.max(1))
        .map(|s| s..(s + chunk).min(range.end))
        .collect()
}

/// Two-stage pipeline over one device's pair range. `write` runs on the
/// previous chunk while the backend integrates the next one; the join is the
/// barrier between steps.
fn run_pipeline<W>(
    device: &dyn BatchIntegrator,
    range: Range<usize>,
    chunk: usize,
    m: usize,
    singular: &[Vec<(usize, LocalBlock)>],
    mut write: W,
) -> Result<usize>
where
    W: FnMut(&ChunkPlan, &RawResultBuffer) + Send,
{
    let chunks = chunk_ranges(range, chunk);
    let mut pending: Option<(ChunkPlan, RawResultBuffer)> = None;
    for step in 0..=chunks.len() {
        let next = chunks.get(step).cloned();
        let prev = pending.take();
        let (integrated, ()) = par::join(
            || -> Result<Option<(ChunkPlan, RawResultBuffer)>> {
                match next {
                    Some(r) => {
                        let offset = r.start;
                        let (plan, pairs) = plan_chunk(r, m, singular);
                        let buf = device.integrate_batch(&BatchRequest::new(pairs, offset))?;
                        Ok(Some((plan, buf)))
                    }
                    None => Ok(None),
                }
            },
            || {
                if let Some((plan, buf)) = &prev {
                    write(plan, buf);
                }
            },
        );
        pending = integrated?;
    }
    Ok(chunks.len())
}

/// Dense assembly through the batched backends.
pub fn assemble_dense<T: Scalar>(
    spec: &OperatorSpec,
    test: &FunctionSpace,
    trial: &FunctionSpace,
    config: &AssemblyConfig,
    backends: &[&dyn BatchIntegrator],
) -> Result<DenseMatrix<T>> {
    config.validate()?;
    let ctx = integration_context(test, trial, config)?;
    assemble_dense_with(spec, &ctx, config, backends).map(|(m, _)| m)
}

/// Dense assembly with a prepared context; also returns the counters.
pub fn assemble_dense_with<T: Scalar>(
    spec: &OperatorSpec,
    ctx: &IntegrationContext,
    config: &AssemblyConfig,
    backends: &[&dyn BatchIntegrator],
) -> Result<(DenseMatrix<T>, AssemblyStats)> {
    config.validate()?;
    check_scalar::<T>(spec)?;
    spec.check_spaces(&ctx.test, &ctx.trial)?;
    check_backends(spec, ctx, backends)?;
    let (nl_test, nl_trial) = (ctx.test.local_dofs(), ctx.trial.local_dofs());
    let (rows, cols) = (ctx.test.dof_count(), ctx.trial.dof_count());
    let m = ctx.geometry.element_count();
    let locked = needs_locks(&ctx.test);
    let devices = config.devices.min(backends.len()).max(1);
    let buffer_bytes = devices * 2 * config.chunk_size.min(m * m) * nl_test * nl_trial * 16;
    let bytes = check_capacity::<T>(rows, cols, locked, buffer_bytes, config)?;

    par::with_workers(config.workers, || {
        let singular = singular_blocks(spec, ctx)?;
        let singular_pairs: usize = singular.iter().map(Vec::len).sum();
        let overridden = AtomicUsize::new(0);
        // each device owns a contiguous range of test elements
        let element_ranges = split_work(m, devices);
        let pair_ranges: Vec<Range<usize>> = element_ranges.iter().map(|r| r.start * m..r.end * m).collect();
        let chunk = config.chunk_size;

        let (data, chunk_counts) = if locked {
            let entries: Vec<Mutex<T>> = (0..rows * cols).map(|_| Mutex::new(T::zero())).collect();
            let counts = par::map_indexed(devices, |d| {
                run_pipeline(backends[d], pair_ranges[d].clone(), chunk, m, &singular, |plan, buf| {
                    let nrows = (plan.range.end - 1) / m - plan.first_row + 1;
                    par::map_indexed(nrows, |k| {
                        let a = plan.first_row + k;
                        let test_dofs = ctx.test.element_dofs(a);
                        for_row_blocks(plan, k, m, buf, &singular, &overridden, |b, blk| {
                            add_block_locked(&entries, cols, test_dofs, ctx.trial.element_dofs(b), blk);
                        });
                    });
                })
            });
            (entries.into_iter().map(Mutex::into_inner).collect::<Vec<T>>(), counts)
        } else {
            let mut data = vec![T::zero(); rows * cols];
            let slab_len = nl_test * cols;
            let mut slabs = Vec::with_capacity(devices);
            let mut rest = data.as_mut_slice();
            for r in &element_ranges {
                let (head, tail) = rest.split_at_mut(r.len() * slab_len);
                slabs.push(head);
                rest = tail;
            }
            let counts = par::map_owned(slabs, |d, slab| {
                let first_element = element_ranges[d].start;
                run_pipeline(backends[d], pair_ranges[d].clone(), chunk, m, &singular, |plan, buf| {
                    let last_row = (plan.range.end - 1) / m;
                    let lo = (plan.first_row - first_element) * slab_len;
                    let hi = (last_row + 1 - first_element) * slab_len;
                    par::for_each_chunk_mut(&mut slab[lo..hi], slab_len, |k, rows_slab| {
                        for_row_blocks(plan, k, m, buf, &singular, &overridden, |b, blk| {
                            add_block_rows(rows_slab, cols, ctx.trial.element_dofs(b), blk);
                        });
                    });
                })
            });
            (data, counts)
        };
        let mut chunks = 0;
        for c in chunk_counts {
            chunks += c?;
        }
        let overridden = overridden.into_inner();
        let stats = AssemblyStats {
            total_pairs: m * m,
            regular_pairs: m * m - overridden,
            overridden_pairs: overridden,
            singular_pairs,
            chunks,
            devices,
            locked_entries: locked,
            bytes_estimate: bytes,
        };
        Ok((DenseMatrix { rows, cols, data }, stats))
    })
}

/// Builds backends from `config` and assembles.
pub fn dense_operator<T: Scalar>(
    spec: &OperatorSpec,
    ctx: &IntegrationContext,
    config: &AssemblyConfig,
) -> Result<(DenseMatrix<T>, AssemblyStats)> {
    let backends = build_backends(spec, ctx, config)?;
    let refs: Vec<&dyn BatchIntegrator> = backends.iter().map(|b| b as &dyn BatchIntegrator).collect();
    assemble_dense_with(spec, ctx, config, &refs)
}

/// Per-pair host assembly without batching or pipelining; the baseline the
/// batched path is measured against.
pub fn assemble_dense_reference<T: Scalar>(
    spec: &OperatorSpec,
    ctx: &IntegrationContext,
    config: &AssemblyConfig,
) -> Result<DenseMatrix<T>> {
    config.validate()?;
    check_scalar::<T>(spec)?;
    spec.check_spaces(&ctx.test, &ctx.trial)?;
    let spec = spec.with_precision(config.precision);
    let (rows, cols) = (ctx.test.dof_count(), ctx.trial.dof_count());
    let m = ctx.geometry.element_count();
    let locked = needs_locks(&ctx.test);
    check_capacity::<T>(rows, cols, locked, 0, config)?;
    par::with_workers(config.workers, || {
        if locked {
            let entries: Vec<Mutex<T>> = (0..rows * cols).map(|_| Mutex::new(T::zero())).collect();
            par::try_for_each_indexed(m, |a| {
                for b in 0..m {
                    let blk = local_matrix(&spec, a, b, ctx)?;
                    add_block_locked(&entries, cols, ctx.test.element_dofs(a), ctx.trial.element_dofs(b), &blk);
                }
                Ok::<(), BemError>(())
            })?;
            let data = entries.into_iter().map(Mutex::into_inner).collect();
            Ok(DenseMatrix { rows, cols, data })
        } else {
            let mut data = vec![T::zero(); rows * cols];
            let first_error: Mutex<Option<BemError>> = Mutex::new(None);
            par::for_each_chunk_mut(&mut data, ctx.test.local_dofs() * cols, |a, slab| {
                for b in 0..m {
                    match local_matrix(&spec, a, b, ctx) {
                        Ok(blk) => add_block_rows(slab, cols, ctx.trial.element_dofs(b), &blk),
                        Err(e) => {
                            first_error.lock().get_or_insert(e);
                            return;
                        }
                    }
                }
            });
            match first_error.into_inner() {
                Some(e) => Err(e),
                None => Ok(DenseMatrix { rows, cols, data }),
            }
        }
    })
}
