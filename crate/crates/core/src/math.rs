//! Scalar helpers shared by the solvers.

use alloc::vec::Vec;

pub(crate) use libm::{exp, log, log1p, sqrt, tanh};

pub(crate) const LN_2: f64 = core::f64::consts::LN_2;

/// Sums node-indexed terms in sorted order.
///
/// The result depends only on the multiset of terms, so relabelling the nodes
/// of a network never changes a sum by even one ulp.
pub(crate) fn node_sum(scratch: &mut Vec<f64>, terms: impl Iterator<Item = f64>) -> f64 {
    scratch.clear();
    scratch.extend(terms);
    scratch.sort_unstable_by(f64::total_cmp);
    scratch.iter().fold(0.0, |acc, x| acc + x)
}

#[inline]
pub(crate) fn sq(x: f64) -> f64 {
    x * x
}

/// `clip(z, 0, hi)`; NaN passes through.
#[inline]
pub(crate) fn clip(z: f64, hi: f64) -> f64 {
    if z < 0.0 {
        0.0
    } else if z > hi {
        hi
    } else {
        z
    }
}

#[inline]
pub(crate) fn inside_clip(z: f64, hi: f64) -> bool {
    (0.0..=hi).contains(&z)
}

#[inline]
pub(crate) fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn is_zero_den(x: f64) -> bool {
    x.abs() < crate::DELTA_DEN
}

pub(crate) fn l2_norm(xs: &[f64]) -> f64 {
    sqrt(xs.iter().map(|x| x * x).sum())
}
