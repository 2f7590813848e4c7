use alloc::vec;
use alloc::vec::Vec;

use super::forward::{is_guarded, run};
use super::{UwmmseWeights, WUpdate};
use crate::channel::{sum_rate, sum_rate_grad, ChannelMatrix, PowerAllocation, SystemConfig};
use crate::math::{inside_clip, sq};
use crate::neural::gcn_backward;
use crate::optim::Trainable;
use crate::{Error, Result};

/// Negative sum-rate of one sample and its gradient with respect to every
/// head parameter.
///
/// The clip is differentiated as 1 on the closed interval `[0, √p_max]` and 0
/// outside; ReLU kinks take subgradient 0.
pub fn loss_and_grad(h: &ChannelMatrix, weights: &UwmmseWeights, sys: &SystemConfig) -> Result<(f64, UwmmseWeights)> {
    let tape = run(h, weights, sys)?;
    let trace = &tape.trace;
    let m = h.m();
    let k_max = weights.k();
    let v_max = sys.sqrt_p_max();

    let v_out = trace.v(k_max);
    let p = PowerAllocation::from_amplitudes(v_out, sys.p_max);
    let total = sum_rate(h, &p, sys.sigma2)?.total;
    let g_p = sum_rate_grad(h, &p, sys.sigma2)?;
    let mut g_v: Vec<f64> = (0..m).map(|i| -2.0 * v_out[i] * g_p[i]).collect();

    let mut grad = weights.clone();
    for k in (1..=k_max).rev() {
        let l = trace.layer(k);
        let vp = trace.v(k - 1);

        let mut g_u = vec![0.0; m];
        let mut g_w = vec![0.0; m];
        for i in 0..m {
            if is_guarded(l.dv[i]) || !inside_clip(l.z[i], v_max) {
                continue;
            }
            let g_z = g_v[i];
            let g_nv = g_z / l.dv[i];
            let g_dv = -g_z * l.z[i] / l.dv[i];
            g_u[i] += g_nv * h.h(i, i) * l.w[i];
            g_w[i] += g_nv * l.u[i] * h.h(i, i);
            for j in 0..m {
                let hji2 = sq(h.h(j, i));
                g_u[j] += g_dv * hji2 * 2.0 * l.u[j] * l.w[j];
                g_w[j] += g_dv * hji2 * sq(l.u[j]);
            }
        }

        let mut g_a = vec![0.0; m];
        let mut g_b = vec![0.0; m];
        let mut g_vp = vec![0.0; m];
        for i in 0..m {
            let g_t = match weights.mode.w_update {
                WUpdate::Rational => {
                    let gap = 1.0 - l.uhv[i];
                    g_a[i] = g_w[i] / gap;
                    g_w[i] * l.a[i] / (gap * gap)
                }
                WUpdate::Linearized => {
                    g_a[i] = g_w[i] * (1.0 + l.uhv[i]);
                    g_w[i] * l.a[i]
                }
            };
            g_b[i] = g_w[i];
            g_u[i] += g_t * h.h(i, i) * vp[i];
            g_vp[i] += g_t * l.u[i] * h.h(i, i);
        }

        for i in 0..m {
            let den = l.du_noisy[i];
            if is_guarded(den) {
                continue;
            }
            g_vp[i] += g_u[i] * h.h(i, i) / den;
            let g_den = -g_u[i] * l.u[i] / den;
            for j in 0..m {
                g_vp[j] += g_den * sq(h.h(i, j)) * 2.0 * vp[j];
            }
        }

        let heads = &weights.layers[k - 1];
        let slot = &mut grad.layers[k - 1];
        match (&heads.b, &tape.b_heads[k - 1]) {
            (Some(b_params), Some(b_tape)) => {
                let (gb, _, _) = gcn_backward(b_tape, &tape.a_hat, &tape.x, b_params, &g_b)?;
                slot.b = Some(gb);
            }
            (None, None) => {
                // b = 1 - a
                for i in 0..m {
                    g_a[i] -= g_b[i];
                }
            }
            _ => return Err(Error::invalid("b-head tape does not match the weights")),
        }
        let (ga, _, _) = gcn_backward(&tape.a_heads[k - 1], &tape.a_hat, &tape.x, &heads.a, &g_a)?;
        slot.a = ga;
        g_v = g_vp;
    }
    Ok((-total, grad))
}

/// Mean of per-sample losses and gradients, accumulated in sample order.
pub fn batch_loss_and_grad(
    batch: &[&ChannelMatrix],
    weights: &UwmmseWeights,
    sys: &SystemConfig,
) -> Result<(f64, UwmmseWeights)> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let mut acc = vec![0.0; weights.num_params()];
    let mut total = 0.0;
    for h in batch {
        let (l, g) = loss_and_grad(h, weights, sys)?;
        total += l;
        acc.iter_mut().zip(g.to_flat()).for_each(|(a, b)| *a += b);
    }
    let scale = 1.0 / batch.len() as f64;
    acc.iter_mut().for_each(|x| *x *= scale);
    let mut grad = weights.clone();
    grad.set_flat(&acc);
    Ok((total * scale, grad))
}

/// `-(1/|batch|) Σ sum_rate(H, forward(H))`.
pub fn loss(batch: &[&ChannelMatrix], weights: &UwmmseWeights, sys: &SystemConfig) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let mut total = 0.0;
    for h in batch {
        let (p, _) = super::forward(h, weights, sys, false)?;
        total += sum_rate(h, &p, sys.sigma2)?.total;
    }
    Ok(-total / batch.len() as f64)
}
