//! Quadrature on the reference triangle {ξ, η ≥ 0, ξ + η ≤ 1}: symmetric
//! Gauss rules for regular integrals and regularized tensor rules for
//! element pairs that touch.

mod gauss;
mod singular;

pub use gauss::gauss_legendre_unit;
pub use singular::{
    classify_pair, singular_rule, SingularRuleCache, SingularityClass, TensorRule,
    EDGE_SUBDOMAINS, IDENTICAL_SUBDOMAINS, VERTEX_SUBDOMAINS,
};

use crate::error::{BemError, Result};

/// Highest supported regular order. Order 4 needs six weights, which is
/// also the capacity of a [`crate::backend::DeviceContext`].
pub const MAX_REGULAR_ORDER: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    order: usize,
    points: Vec<[f64; 2]>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn new(order: usize, points: Vec<[f64; 2]>, weights: Vec<f64>) -> Result<Self> {
        if points.len() != weights.len() {
            return Err(BemError::InvalidArgument(format!(
                "{} points but {} weights",
                points.len(),
                weights.len()
            )));
        }
        Ok(Self {
            order,
            points,
            weights,
        })
    }

    /// Polynomial degree integrated exactly.
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(f64, f64) -> f64) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| w * f(p[0], p[1]))
            .sum()
    }
}

/// Expands barycentric orbits into points with the given weight (already
/// scaled to the reference area 1/2).
fn orbit3(a: f64, w: f64, pts: &mut Vec<[f64; 2]>, wts: &mut Vec<f64>) {
    let b = 1.0 - 2.0 * a;
    for p in [[a, a], [b, a], [a, b]] {
        pts.push(p);
        wts.push(w);
    }
}

fn orbit6(a: f64, b: f64, w: f64, pts: &mut Vec<[f64; 2]>, wts: &mut Vec<f64>) {
    let c = 1.0 - a - b;
    for p in [[a, b], [b, a], [a, c], [c, a], [b, c], [c, b]] {
        pts.push(p);
        wts.push(w);
    }
}

/// Symmetric Gauss rule exact for total degree ≤ `order`.
pub fn regular_rule(order: usize) -> Result<QuadratureRule> {
    let mut pts = Vec::new();
    let mut wts = Vec::new();
    match order {
        1 => {
            pts.push([1.0 / 3.0, 1.0 / 3.0]);
            wts.push(0.5);
        }
        2 => orbit3(1.0 / 6.0, 1.0 / 6.0, &mut pts, &mut wts),
        3 => orbit6(
            0.659_027_622_374_092,
            0.231_933_368_553_031,
            1.0 / 12.0,
            &mut pts,
            &mut wts,
        ),
        4 => {
            orbit3(
                0.445_948_490_915_964_886_32,
                0.5 * 0.223_381_589_678_011_465_70,
                &mut pts,
                &mut wts,
            );
            orbit3(
                0.091_576_213_509_770_743_46,
                0.5 * 0.109_951_743_655_321_867_64,
                &mut pts,
                &mut wts,
            );
        }
        _ => {
            return Err(BemError::Unsupported(format!(
                "regular quadrature order {order}; supported orders are 1..={MAX_REGULAR_ORDER}"
            )))
        }
    }
    QuadratureRule::new(order, pts, wts)
}
