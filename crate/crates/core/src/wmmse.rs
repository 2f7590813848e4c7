//! Classic WMMSE block-coordinate descent and its truncated variant.
//!
//! One iteration maps transmit amplitudes `v` to
//!
//! ```text
//! u_i = h_ii v_i / (σ² + Σ_j h_ij² v_j²)
//! w_i = 1 / (1 - u_i h_ii v_i)
//! v_i' = clip(u_i h_ii w_i / Σ_j h_ji² u_j² w_j, 0, √p_max)
//! ```
//!
//! each block being the exact minimizer of the weighted-MSE surrogate with the
//! other two held fixed.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::channel::{ChannelMatrix, PowerAllocation, SystemConfig};
use crate::math::{clip, is_zero_den, log, node_sum, sq, sqrt};
use crate::{Error, Result, DELTA_W};

/// Receiver gains `u`, MSE weights `w`, transmit amplitudes `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct WmmseState {
    pub u: Vec<f64>,
    pub w: Vec<f64>,
    pub v: Vec<f64>,
}

pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITERS: usize = 100;

pub(crate) fn check_amplitudes(v: &[f64], m: usize, v_max: f64) -> Result<()> {
    if v.len() != m {
        return Err(Error::shape(format!("{m} amplitudes"), format!("{}", v.len())));
    }
    if let Some(i) = v.iter().position(|x| !(0.0..=v_max).contains(x)) {
        return Err(Error::invalid(format!(
            "amplitude {} at node {i} outside [0, {v_max}]",
            v[i]
        )));
    }
    Ok(())
}

/// Receiver update; also returns the noise-free received powers
/// `Σ_j h_ij² v_j²`.
pub(crate) fn receiver_update(
    h: &ChannelMatrix,
    v_prev: &[f64],
    sigma2: f64,
    scratch: &mut Vec<f64>,
) -> (Vec<f64>, Vec<f64>) {
    let m = h.m();
    let mut u = vec![0.0; m];
    let mut received = vec![0.0; m];
    for i in 0..m {
        received[i] = node_sum(scratch, (0..m).map(|j| sq(h.h(i, j)) * sq(v_prev[j])));
        let den = sigma2 + received[i];
        // den == 0 forces h_ij v_j == 0 for every j, numerator included.
        u[i] = if is_zero_den(den) {
            0.0
        } else {
            h.h(i, i) * v_prev[i] / den
        };
    }
    (u, received)
}

/// `Σ_j h_ji² u_j² w_j` for transmitter `i`.
pub(crate) fn transmitter_denominator(
    h: &ChannelMatrix,
    u: &[f64],
    w: &[f64],
    i: usize,
    scratch: &mut Vec<f64>,
) -> f64 {
    node_sum(scratch, (0..h.m()).map(|j| sq(h.h(j, i)) * sq(u[j]) * w[j]))
}

/// Guarded `clip(num / den, 0, v_max)`; `0/0` maps to 0.
pub(crate) fn amplitude(num: f64, den: f64, v_max: f64, node: usize) -> Result<(f64, f64)> {
    if is_zero_den(den) {
        if num == 0.0 {
            Ok((0.0, 0.0))
        } else {
            Err(Error::SingularDenominator { node })
        }
    } else {
        let z = num / den;
        Ok((z, clip(z, v_max)))
    }
}

/// One full u → w → v sweep starting from `v_prev`.
pub fn wmmse_step(h: &ChannelMatrix, v_prev: &[f64], sigma2: f64, p_max: f64) -> Result<WmmseState> {
    let m = h.m();
    let v_max = sqrt(p_max);
    check_amplitudes(v_prev, m, v_max)?;
    let mut scratch = Vec::with_capacity(m);

    let (u, _) = receiver_update(h, v_prev, sigma2, &mut scratch);
    let mut w = vec![0.0; m];
    for i in 0..m {
        let gap = 1.0 - u[i] * h.h(i, i) * v_prev[i];
        if gap.abs() < DELTA_W {
            return Err(Error::NearSingularWeight { node: i, gap });
        }
        w[i] = 1.0 / gap;
    }
    let mut v = vec![0.0; m];
    for i in 0..m {
        let num = u[i] * h.h(i, i) * w[i];
        let den = transmitter_denominator(h, &u, &w, i, &mut scratch);
        v[i] = amplitude(num, den, v_max, i)?.1;
    }
    Ok(WmmseState { u, w, v })
}

/// `Σ_i (w_i e_i - ln w_i)` with
/// `e_i = (1 - u_i h_ii v_i)² + σ² u_i² + Σ_{j≠i} u_i² h_ij² v_j²`.
pub fn mse_objective(h: &ChannelMatrix, state: &WmmseState, sigma2: f64) -> Result<f64> {
    let m = h.m();
    let WmmseState { u, w, v } = state;
    if u.len() != m || w.len() != m || v.len() != m {
        return Err(Error::shape(format!("state vectors of length {m}"), "mismatched lengths"));
    }
    if let Some(i) = w.iter().position(|&x| !(x > 0.0)) {
        return Err(Error::invalid(format!("weight w[{i}] = {} must be > 0", w[i])));
    }
    let mut scratch = Vec::with_capacity(m);
    let mut terms = Vec::with_capacity(m);
    for i in 0..m {
        let cross = node_sum(
            &mut scratch,
            (0..m).filter(|&j| j != i).map(|j| sq(u[i]) * sq(h.h(i, j)) * sq(v[j])),
        );
        let e = sq(1.0 - u[i] * h.h(i, i) * v[i]) + sigma2 * sq(u[i]) + cross;
        terms.push(w[i] * e - log(w[i]));
    }
    Ok(node_sum(&mut scratch, terms.into_iter()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct WmmseSolution {
    pub allocation: PowerAllocation,
    pub state: Option<WmmseState>,
    /// Surrogate objective after each completed iteration.
    pub objective_history: Vec<f64>,
    pub iterations: usize,
}

/// Runs up to `iters` sweeps from full power, stopping early once
/// `max_i |Δv_i| < tol`. `tol = 0` never stops early.
pub fn wmmse_solve(h: &ChannelMatrix, cfg: &SystemConfig, iters: usize, tol: f64) -> Result<WmmseSolution> {
    let m = h.m();
    let v_max = cfg.sqrt_p_max();
    let mut v = vec![v_max; m];
    let mut state = None;
    let mut objective_history = Vec::with_capacity(iters);
    let mut iterations = 0;
    for _ in 0..iters {
        let next = wmmse_step(h, &v, cfg.sigma2, cfg.p_max)?;
        objective_history.push(mse_objective(h, &next, cfg.sigma2)?);
        iterations += 1;
        let delta = v
            .iter()
            .zip(&next.v)
            .fold(0.0_f64, |d, (a, b)| d.max((a - b).abs()));
        v.clone_from(&next.v);
        state = Some(next);
        if delta < tol {
            break;
        }
    }
    Ok(WmmseSolution {
        allocation: PowerAllocation::from_amplitudes(&v, cfg.p_max),
        state,
        objective_history,
        iterations,
    })
}

/// Exactly `layers` sweeps with no early stop.
pub fn truncated_wmmse(h: &ChannelMatrix, cfg: &SystemConfig, layers: usize) -> Result<PowerAllocation> {
    Ok(wmmse_solve(h, cfg, layers, 0.0)?.allocation)
}
