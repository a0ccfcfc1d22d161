//! Adaptive cross approximation with partial pivoting.

use crate::error::{BemError, Result};
use crate::scalar::Scalar;

pub const DEFAULT_ACA_TOLERANCE: f64 = 1e-5;
pub const DEFAULT_OFFLOAD_THRESHOLD: usize = 10_000;

/// Residual rows whose largest entry falls below this fraction of the
/// original row's largest entry count as vanished (rounding noise). The
/// fraction grows with the worst pivot ratio seen so far, since a weak
/// pivot amplifies the rounding error of every later residual.
const VANISHING_ROW: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct AcaConfig {
    pub tolerance: f64,
    /// Rank cap; `None` means min(m, n).
    pub max_rank: Option<usize>,
    /// Minimum element pairs in a row/column job for it to go to a backend.
    pub offload_threshold: usize,
}

impl Default for AcaConfig {
    fn default() -> Self {
        Self {
            tolerance: DEFAULT_ACA_TOLERANCE,
            max_rank: None,
            offload_threshold: DEFAULT_OFFLOAD_THRESHOLD,
        }
    }
}

impl AcaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(BemError::InvalidArgument("ACA tolerance must be positive".into()));
        }
        if self.offload_threshold == 0 {
            return Err(BemError::InvalidArgument("offload threshold must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AcaStatus {
    /// Stopping criterion met.
    Converged,
    /// Every row was used or vanished.
    Exhausted,
    /// Stopped at the rank cap before convergence.
    RankLimit,
}

/// A ≈ U·Vᵀ with U stored as columns `u[l]` (length m) and V as `v[l]` (length n).
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankBlock<T> {
    pub rows: usize,
    pub cols: usize,
    pub u: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    /// Last ‖u_k‖‖v_k‖ / ‖S_k‖_F.
    pub residual_estimate: f64,
    pub status: AcaStatus,
    /// Row pivots in selection order, including vanished rows.
    pub pivots: Vec<usize>,
}

impl<T: Scalar> LowRankBlock<T> {
    pub fn rank(&self) -> usize {
        self.u.len()
    }

    pub fn stored_entries(&self) -> usize {
        self.rank() * (self.rows + self.cols)
    }

    /// y += U (Vᵀ x).
    pub fn apply_add(&self, x: &[T], y: &mut [T]) {
        for (u, v) in self.u.iter().zip(&self.v) {
            let c: T = v.iter().zip(x).map(|(&a, &b)| a * b).sum();
            for (yi, &ui) in y.iter_mut().zip(u) {
                *yi += ui * c;
            }
        }
    }

    pub fn entry(&self, i: usize, j: usize) -> T {
        self.u.iter().zip(&self.v).map(|(u, v)| u[i] * v[j]).sum()
    }
}

fn dot_conj<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y.conj()).sum()
}

fn argmax_abs<T: Scalar>(v: &[T], skip: impl Fn(usize) -> bool) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, x) in v.iter().enumerate() {
        if skip(i) {
            continue;
        }
        let a = x.abs();
        if best.is_none_or(|(_, b)| a > b) {
            best = Some((i, a));
        }
    }
    best
}

/// Cross approximation of an m × n block given row and column oracles.
pub fn aca<T: Scalar>(
    m: usize,
    n: usize,
    mut row_fn: impl FnMut(usize) -> Result<Vec<T>>,
    mut col_fn: impl FnMut(usize) -> Result<Vec<T>>,
    cfg: &AcaConfig,
) -> Result<LowRankBlock<T>> {
    cfg.validate()?;
    let k_max = cfg.max_rank.unwrap_or(m.min(n)).min(m.min(n));
    let mut out = LowRankBlock {
        rows: m,
        cols: n,
        u: Vec::new(),
        v: Vec::new(),
        residual_estimate: 0.0,
        status: AcaStatus::Exhausted,
        pivots: Vec::new(),
    };
    if m == 0 || n == 0 || k_max == 0 {
        out.status = if m == 0 || n == 0 { AcaStatus::Exhausted } else { AcaStatus::RankLimit };
        return Ok(out);
    }
    let mut used = vec![false; m];
    let mut used_count = 0;
    let mut frob2 = 0.0;
    // the criterion must hold on two consecutive steps; a single small
    // cross can come from an unlucky pivot
    let mut prev_met = false;
    let mut amplification: f64 = 1.0;
    let mut next = Some(0);
    while let Some(i) = next {
        let mut row = row_fn(i)?;
        if row.len() != n {
            return Err(BemError::DimensionMismatch {
                expected: n,
                actual: row.len(),
            });
        }
        let row_scale = row.iter().map(|x| x.abs()).fold(0.0, f64::max);
        for (u, v) in out.u.iter().zip(&out.v) {
            let c = u[i];
            for (r, &vj) in row.iter_mut().zip(v) {
                *r -= c * vj;
            }
        }
        used[i] = true;
        used_count += 1;
        out.pivots.push(i);
        let (j, pivot_abs) = argmax_abs(&row, |_| false).expect("n > 0");
        if pivot_abs == 0.0 || pivot_abs <= VANISHING_ROW * amplification * row_scale {
            if prev_met {
                out.status = AcaStatus::Converged;
                break;
            }
            // vanished row: try the next unused one
            if used_count == m {
                out.status = AcaStatus::Exhausted;
                break;
            }
            next = used.iter().position(|&u| !u);
            continue;
        }
        amplification = amplification.max(row_scale / pivot_abs);
        let delta = row[j];
        let inv = T::one() / delta;
        let v: Vec<T> = row.iter().map(|&x| x * inv).collect();
        let mut u = col_fn(j)?;
        if u.len() != m {
            return Err(BemError::DimensionMismatch {
                expected: m,
                actual: u.len(),
            });
        }
        for (ul, vl) in out.u.iter().zip(&out.v) {
            let c = vl[j];
            for (x, &y) in u.iter_mut().zip(ul) {
                *x -= c * y;
            }
        }
        let (nu2, nv2) = (dot_conj(&u, &u).re(), dot_conj(&v, &v).re());
        let mut cross = 0.0;
        for (ul, vl) in out.u.iter().zip(&out.v) {
            cross += (dot_conj(&u, ul) * dot_conj(&v, vl)).re();
        }
        frob2 += 2.0 * cross + nu2 * nv2;
        let step = (nu2 * nv2).sqrt();
        out.u.push(u);
        out.v.push(v);
        let s_norm = frob2.max(0.0).sqrt();
        out.residual_estimate = if s_norm > 0.0 { step / s_norm } else { 0.0 };
        let met = step <= cfg.tolerance * s_norm;
        if met && prev_met {
            out.status = AcaStatus::Converged;
            break;
        }
        prev_met = met;
        if out.u.len() >= k_max {
            out.status = AcaStatus::RankLimit;
            break;
        }
        if used_count == m {
            out.status = AcaStatus::Exhausted;
            break;
        }
        let last = out.u.last().expect("just pushed");
        next = match argmax_abs(last, |r| used[r]) {
            Some((r, a)) if a > 0.0 => Some(r),
            _ => used.iter().position(|&u| !u),
        };
    }
    Ok(out)
}
