use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{UwmmseWeights, WUpdate};
use crate::channel::{ChannelMatrix, PowerAllocation, SystemConfig};
use crate::math::{is_zero_den, sq};
use crate::matrix::Matrix;
use crate::neural::{gcn_forward, node_features, normalize_adjacency, GcnTape, HeadActivation};
use crate::wmmse::{amplitude, receiver_update, transmitter_denominator};
use crate::{Error, Result, DELTA_W};

/// Intermediates of one unfolded layer, all indexed by node.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LayerRecord {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub u: Vec<f64>,
    pub w: Vec<f64>,
    pub v: Vec<f64>,
    /// `Σ_j h_ij² (v_j^(k-1))²`
    pub du: Vec<f64>,
    /// `σ² + du`
    pub du_noisy: Vec<f64>,
    /// `u_i h_ii w_i`
    pub nv: Vec<f64>,
    /// `Σ_j h_ji² u_j² w_j`
    pub dv: Vec<f64>,
    /// `nv / dv` before clipping.
    pub z: Vec<f64>,
    /// `u_i h_ii v_i^(k-1)`
    pub uhv: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LayerTrace {
    pub p_max: f64,
    pub sigma2: f64,
    pub v0: Vec<f64>,
    pub layers: Vec<LayerRecord>,
}

impl LayerTrace {
    pub fn k(&self) -> usize {
        self.layers.len()
    }

    pub fn m(&self) -> usize {
        self.v0.len()
    }

    /// Record of layer `k` (1-based).
    pub fn layer(&self, k: usize) -> &LayerRecord {
        &self.layers[k - 1]
    }

    /// `v^(k)`, with `v^(0)` the initial amplitudes.
    pub fn v(&self, k: usize) -> &[f64] {
        if k == 0 {
            &self.v0
        } else {
            &self.layers[k - 1].v
        }
    }

    /// Largest relative deviation between the stored `du`, `nv`, `dv` and
    /// their recomputation from the stored `u`, `w`, `v` and `h`.
    pub fn consistency_error(&self, h: &ChannelMatrix) -> f64 {
        let m = self.m();
        let rel = |stored: f64, fresh: f64| {
            let scale = stored.abs().max(fresh.abs());
            if scale == 0.0 { 0.0 } else { (stored - fresh).abs() / scale }
        };
        let mut worst = 0.0_f64;
        for k in 1..=self.k() {
            let l = self.layer(k);
            let vp = self.v(k - 1);
            for i in 0..m {
                let du: f64 = (0..m).map(|j| sq(h.h(i, j)) * sq(vp[j])).sum();
                let nv = l.u[i] * h.h(i, i) * l.w[i];
                let dv: f64 = (0..m).map(|j| sq(h.h(j, i)) * sq(l.u[j]) * l.w[j]).sum();
                worst = worst
                    .max(rel(l.du[i], du))
                    .max(rel(l.du_noisy[i], self.sigma2 + du))
                    .max(rel(l.nv[i], nv))
                    .max(rel(l.dv[i], dv));
            }
        }
        worst
    }
}

/// Everything the backward pass needs.
pub(super) struct Tape {
    pub a_hat: Matrix,
    pub x: Matrix,
    pub a_heads: Vec<GcnTape>,
    pub b_heads: Vec<Option<GcnTape>>,
    pub trace: LayerTrace,
}

pub(super) fn run(h: &ChannelMatrix, weights: &UwmmseWeights, sys: &SystemConfig) -> Result<Tape> {
    let m = h.m();
    if m != sys.m {
        return Err(Error::shape(format!("network of size {}", sys.m), format!("{m}")));
    }
    weights.validate()?;
    let v_max = sys.sqrt_p_max();
    let a_hat = normalize_adjacency(h);
    let x = node_features(h);
    let mut scratch = Vec::with_capacity(m);

    let mut a_heads = Vec::with_capacity(weights.k());
    let mut b_heads = Vec::with_capacity(weights.k());
    let mut layers = Vec::with_capacity(weights.k());
    let v0 = vec![v_max; m];
    let mut vp = v0.clone();

    for heads in &weights.layers {
        let a_tape = gcn_forward(&a_hat, &x, &heads.a, HeadActivation::DoubleLogistic)?;
        let a = a_tape.out.clone();
        let (b, b_tape) = match &heads.b {
            None => (a.iter().map(|&ai| 1.0 - ai).collect::<Vec<_>>(), None),
            Some(p) => {
                let t = gcn_forward(&a_hat, &x, p, HeadActivation::Tanh)?;
                (t.out.clone(), Some(t))
            }
        };

        let (u, du) = receiver_update(h, &vp, sys.sigma2, &mut scratch);
        let du_noisy: Vec<f64> = du.iter().map(|&d| sys.sigma2 + d).collect();
        let mut uhv = vec![0.0; m];
        let mut w = vec![0.0; m];
        for i in 0..m {
            uhv[i] = u[i] * h.h(i, i) * vp[i];
            w[i] = match weights.mode.w_update {
                WUpdate::Rational => {
                    let gap = 1.0 - uhv[i];
                    if gap.abs() < DELTA_W {
                        return Err(Error::NearSingularWeight { node: i, gap });
                    }
                    a[i] / gap + b[i]
                }
                WUpdate::Linearized => (a[i] + b[i]) + a[i] * uhv[i],
            };
        }
        let mut nv = vec![0.0; m];
        let mut dv = vec![0.0; m];
        let mut z = vec![0.0; m];
        let mut v = vec![0.0; m];
        for i in 0..m {
            nv[i] = u[i] * h.h(i, i) * w[i];
            dv[i] = transmitter_denominator(h, &u, &w, i, &mut scratch);
            (z[i], v[i]) = amplitude(nv[i], dv[i], v_max, i)?;
        }
        vp.clone_from(&v);
        layers.push(LayerRecord { a, b, u, w, v, du, du_noisy, nv, dv, z, uhv });
        a_heads.push(a_tape);
        b_heads.push(b_tape);
    }
    Ok(Tape {
        a_hat,
        x,
        a_heads,
        b_heads,
        trace: LayerTrace {
            p_max: sys.p_max,
            sigma2: sys.sigma2,
            v0,
            layers,
        },
    })
}

/// Allocation `p = (v^(K))²`, plus the full per-layer trace when `capture`.
pub fn forward(
    h: &ChannelMatrix,
    weights: &UwmmseWeights,
    sys: &SystemConfig,
    capture: bool,
) -> Result<(PowerAllocation, Option<LayerTrace>)> {
    let tape = run(h, weights, sys)?;
    let p = PowerAllocation::from_amplitudes(tape.trace.v(weights.k()), sys.p_max);
    Ok((p, capture.then_some(tape.trace)))
}

pub(super) fn is_guarded(den: f64) -> bool {
    is_zero_den(den)
}
