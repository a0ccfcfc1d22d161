//! Restarted GMRES for complex (or real) systems given as a matvec closure.

use crate::error::{BemError, Result};
use crate::scalar::Scalar;

pub const DEFAULT_RESTART: usize = 100;
pub const DEFAULT_SOLVER_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GmresConfig {
    /// Relative residual ‖b − Ax‖ / ‖b‖ to reach.
    pub tolerance: f64,
    pub restart: usize,
    /// Total inner iterations over all cycles.
    pub max_iterations: usize,
}

impl Default for GmresConfig {
    fn default() -> Self {
        Self {
            tolerance: DEFAULT_SOLVER_TOLERANCE,
            restart: DEFAULT_RESTART,
            max_iterations: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmresOutcome<T> {
    pub x: Vec<T>,
    pub iterations: usize,
    pub restarts: usize,
    /// Final true relative residual.
    pub residual: f64,
    /// Relative residual before the first step and after every inner
    /// iteration; at each restart the Arnoldi estimate is replaced by the
    /// true residual.
    pub history: Vec<f64>,
}

fn norm<T: Scalar>(v: &[T]) -> f64 {
    v.iter().map(|x| x.abs_sqr()).sum::<f64>().sqrt()
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    // conjugate-linear in the first argument
    a.iter().zip(b).map(|(&x, &y)| x.conj() * y).sum()
}

/// Complex Givens rotation zeroing `b` in (a, b).
fn givens<T: Scalar>(a: T, b: T) -> (f64, T) {
    let (na, nb) = (a.abs(), b.abs());
    if nb == 0.0 {
        return (1.0, T::zero());
    }
    if na == 0.0 {
        return (0.0, b.conj().scale(1.0 / nb));
    }
    let r = na.hypot(nb);
    let c = na / r;
    // s = (a/|a|) conj(b) / r
    let s = (a.scale(1.0 / na) * b.conj()).scale(1.0 / r);
    (c, s)
}

/// Solves A x = b starting from `x0` (zero when `None`).
pub fn gmres<T: Scalar>(
    mut apply: impl FnMut(&[T]) -> Result<Vec<T>>,
    b: &[T],
    x0: Option<&[T]>,
    config: &GmresConfig,
) -> Result<GmresOutcome<T>> {
    if !(config.tolerance > 0.0) || config.restart == 0 {
        return Err(BemError::InvalidArgument(
            "GMRES needs a positive tolerance and restart length".into(),
        ));
    }
    let n = b.len();
    let mut x = match x0 {
        Some(x0) if x0.len() != n => {
            return Err(BemError::DimensionMismatch {
                expected: n,
                actual: x0.len(),
            })
        }
        Some(x0) => x0.to_vec(),
        None => vec![T::zero(); n],
    };
    let b_norm = norm(b);
    if b_norm == 0.0 {
        return Ok(GmresOutcome {
            x: vec![T::zero(); n],
            iterations: 0,
            restarts: 0,
            residual: 0.0,
            history: vec![0.0],
        });
    }
    let residual_of = |apply: &mut dyn FnMut(&[T]) -> Result<Vec<T>>, x: &[T]| -> Result<Vec<T>> {
        let ax = apply(x)?;
        if ax.len() != n {
            return Err(BemError::DimensionMismatch {
                expected: n,
                actual: ax.len(),
            });
        }
        Ok(b.iter().zip(&ax).map(|(&bi, &ai)| bi - ai).collect())
    };
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut cycles = 0usize;
    let m = config.restart;
    loop {
        let r = residual_of(&mut apply, &x)?;
        let beta = norm(&r);
        let rel = beta / b_norm;
        if let Some(last) = history.last_mut() {
            *last = rel;
        } else {
            history.push(rel);
        }
        if rel <= config.tolerance {
            return Ok(GmresOutcome {
                x,
                iterations,
                restarts: cycles.saturating_sub(1),
                residual: rel,
                history,
            });
        }
        if iterations >= config.max_iterations {
            return Err(BemError::SolverFailure {
                iterations,
                residual: rel,
                history,
            });
        }
        let mut basis: Vec<Vec<T>> = vec![r.iter().map(|&v| v.scale(1.0 / beta)).collect()];
        // Hessenberg columns after rotation, each of length j + 2
        let mut h: Vec<Vec<T>> = Vec::with_capacity(m);
        let mut rot: Vec<(f64, T)> = Vec::with_capacity(m);
        let mut g = vec![T::zero(); m + 1];
        g[0] = T::from_real(beta);
        let mut steps = 0;
        for j in 0..m {
            if iterations >= config.max_iterations {
                break;
            }
            let mut w = apply(&basis[j])?;
            let mut col = vec![T::zero(); j + 2];
            // modified Gram–Schmidt, twice for stability
            for _ in 0..2 {
                for (i, v) in basis.iter().enumerate() {
                    let hij = dot(v, &w);
                    col[i] += hij;
                    for (wk, &vk) in w.iter_mut().zip(v) {
                        *wk -= hij * vk;
                    }
                }
            }
            let wn = norm(&w);
            col[j + 1] = T::from_real(wn);
            for (i, &(c, s)) in rot.iter().enumerate() {
                let (a, bb) = (col[i], col[i + 1]);
                col[i] = a.scale(c) + s * bb;
                col[i + 1] = bb.scale(c) - s.conj() * a;
            }
            let (c, s) = givens(col[j], col[j + 1]);
            let a = col[j];
            col[j] = a.scale(c) + s * col[j + 1];
            col[j + 1] = T::zero();
            g[j + 1] = -(s.conj() * g[j]);
            g[j] = g[j].scale(c);
            rot.push((c, s));
            h.push(col);
            iterations += 1;
            steps += 1;
            let est = g[j + 1].abs() / b_norm;
            history.push(est);
            if est <= config.tolerance || wn == 0.0 {
                break;
            }
            basis.push(w.iter().map(|&v| v.scale(1.0 / wn)).collect());
        }
        // back substitution on the rotated triangle
        let mut y = vec![T::zero(); steps];
        for i in (0..steps).rev() {
            let mut acc = g[i];
            for k in i + 1..steps {
                acc -= h[k][i] * y[k];
            }
            y[i] = acc / h[i][i];
        }
        for (k, &yk) in y.iter().enumerate() {
            for (xi, &vi) in x.iter_mut().zip(&basis[k]) {
                *xi += yk * vi;
            }
        }
        cycles += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_system(n: usize, seed: u64) -> (Vec<Vec<Complex64>>, Vec<Complex64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = vec![vec![Complex64::new(0.0, 0.0); n]; n];
        for (i, row) in a.iter_mut().enumerate() {
            for v in row.iter_mut() {
                *v = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) / (n as f64).sqrt();
            }
            row[i] += Complex64::new(3.0, 1.0);
        }
        let b = (0..n).map(|_| Complex64::new(rng.gen(), rng.gen())).collect();
        (a, b)
    }

    fn mul(a: &[Vec<Complex64>], x: &[Complex64]) -> Vec<Complex64> {
        a.iter().map(|r| r.iter().zip(x).map(|(p, q)| p * q).sum()).collect()
    }

    #[test]
    fn solves_well_conditioned_system() {
        let (a, b) = random_system(60, 1);
        let cfg = GmresConfig {
            tolerance: 1e-10,
            ..GmresConfig::default()
        };
        let out = gmres(|x| Ok(mul(&a, x)), &b, None, &cfg).unwrap();
        let r: Vec<Complex64> = mul(&a, &out.x).iter().zip(&b).map(|(p, q)| p - q).collect();
        assert!(norm(&r) / norm(&b) <= 1e-10);
        assert!(out.residual <= 1e-10);
        assert_eq!(out.restarts, 0);
    }

    #[test]
    fn restarts_keep_history_non_increasing() {
        let (a, b) = random_system(80, 2);
        let cfg = GmresConfig {
            tolerance: 1e-9,
            restart: 5,
            max_iterations: 500,
        };
        let out = gmres(|x| Ok(mul(&a, x)), &b, None, &cfg).unwrap();
        assert!(out.restarts > 1);
        assert_eq!(out.history.len(), out.iterations + 1);
        for w in out.history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-8), "{w:?}");
        }
    }

    #[test]
    fn identity_and_zero_rhs() {
        let b = vec![2.0, -1.0, 0.5];
        let out = gmres(|x: &[f64]| Ok(x.to_vec()), &b, None, &GmresConfig::default()).unwrap();
        assert_eq!(out.iterations, 1);
        assert!(out.x.iter().zip(&b).all(|(p, q)| (p - q).abs() < 1e-14));
        let z = gmres(|x: &[f64]| Ok(x.to_vec()), &[0.0; 3], None, &GmresConfig::default()).unwrap();
        assert_eq!(z.x, vec![0.0; 3]);
    }

    #[test]
    fn failure_carries_history() {
        // a rotation has no Krylov progress for a short restart
        let n = 40;
        let shift = |x: &[f64]| Ok((0..n).map(|i| x[(i + 1) % n]).collect::<Vec<f64>>());
        let mut b = vec![0.0; n];
        b[0] = 1.0;
        let cfg = GmresConfig {
            tolerance: 1e-8,
            restart: 3,
            max_iterations: 30,
        };
        match gmres(shift, &b, None, &cfg) {
            Err(BemError::SolverFailure {
                iterations, history, ..
            }) => {
                assert_eq!(iterations, 30);
                assert_eq!(history.len(), 31);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
