//! Unfolded WMMSE: `K` WMMSE sweeps whose weight update is modulated by
//! per-layer graph-convolutional heads `a^(k) = Ψ(H; θ_a^(k))` and
//! `b^(k) = Ψ(H; θ_b^(k))`.
//!
//! Layer `k` maps `v^(k-1)` to `v^(k)`:
//!
//! ```text
//! u_i = h_ii v_i / (σ² + Σ_j h_ij² v_j²)
//! w_i = a_i / (1 - u_i h_ii v_i) + b_i          (rational)
//! w_i = (a_i + b_i) + a_i u_i h_ii v_i          (linearized)
//! v_i = clip(u_i h_ii w_i / Σ_j h_ji² u_j² w_j, 0, √p_max)
//! ```
//!
//! starting from `v^(0) = √p_max·1`; the allocation is `p = (v^(K))²`.
//!
//! In the constrained mode `b = 1 - a` and there is no `b` head. A head
//! whose output layer is zero emits `a = 1`, and with `b = 0` the rational
//! layer is exactly a classic WMMSE sweep.

mod backward;
mod forward;

pub use backward::{batch_loss_and_grad, loss, loss_and_grad};
pub use forward::{forward, LayerRecord, LayerTrace};

use alloc::vec::Vec;

use rand::Rng;

use crate::channel::{ChannelMatrix, SystemConfig};
use crate::neural::gcn::NODE_FEATURES;
use crate::neural::GcnParams;
use crate::optim::Trainable;
use crate::{Error, Result};

pub const DEFAULT_LAYERS: usize = 4;
pub const DEFAULT_HIDDEN: usize = 32;

/// Weight-update rule of each unfolded layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum WUpdate {
    /// `a / (1 - u h v) + b`
    #[default]
    Rational,
    /// First-order expansion `(a + b) + a u h v`.
    Linearized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ModelMode {
    /// Enforce `a + b = 1` instead of learning a separate `b` head.
    pub constrained_b: bool,
    pub w_update: WUpdate,
}

impl Default for ModelMode {
    fn default() -> Self {
        Self {
            constrained_b: true,
            w_update: WUpdate::Rational,
        }
    }
}

/// Node features fed to the heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum FeatureSpec {
    /// `[h_ii, 1]` per node.
    #[default]
    DiagAndBias,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct LayerHeads {
    pub a: GcnParams,
    /// Present exactly when the mode is unconstrained.
    #[cfg_attr(feature = "serde", serde(default))]
    pub b: Option<GcnParams>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct UwmmseWeights {
    pub mode: ModelMode,
    pub hidden: usize,
    pub features: FeatureSpec,
    pub layers: Vec<LayerHeads>,
}

impl UwmmseWeights {
    fn build(layers: usize, hidden: usize, mode: ModelMode, mut head: impl FnMut() -> GcnParams) -> Self {
        let layers = (0..layers)
            .map(|_| LayerHeads {
                a: head(),
                b: (!mode.constrained_b).then(&mut head),
            })
            .collect();
        Self {
            mode,
            hidden,
            features: FeatureSpec::DiagAndBias,
            layers,
        }
    }

    /// Every parameter zero.
    pub fn zeros(layers: usize, hidden: usize, mode: ModelMode) -> Self {
        Self::build(layers, hidden, mode, || GcnParams::zeros(NODE_FEATURES, hidden))
    }

    /// Default starting point for training: random first graph layer, zero
    /// output layer. The model then reproduces truncated WMMSE exactly while
    /// every head still receives gradient.
    pub fn init<R: Rng + ?Sized>(layers: usize, hidden: usize, mode: ModelMode, rng: &mut R) -> Self {
        Self::build(layers, hidden, mode, || {
            GcnParams::init_output_zeroed(NODE_FEATURES, hidden, rng)
        })
    }

    /// All weights uniform(±1/√fan_in), biases zero.
    pub fn init_random<R: Rng + ?Sized>(layers: usize, hidden: usize, mode: ModelMode, rng: &mut R) -> Self {
        Self::build(layers, hidden, mode, || GcnParams::init_random(NODE_FEATURES, hidden, rng))
    }

    pub fn k(&self) -> usize {
        self.layers.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::invalid("model needs at least one layer"));
        }
        for (k, l) in self.layers.iter().enumerate() {
            let heads = core::iter::once(&l.a).chain(l.b.as_ref());
            for head in heads {
                if head.f_in() != NODE_FEATURES || head.hidden() != self.hidden || !head.is_consistent() {
                    return Err(Error::invalid(alloc::format!("layer {} head has inconsistent shape", k + 1)));
                }
            }
            if l.b.is_some() == self.mode.constrained_b {
                return Err(Error::invalid(alloc::format!(
                    "layer {} b-head presence does not match the constrained_b flag",
                    k + 1
                )));
            }
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.a.len() + l.b.as_ref().map_or(0, GcnParams::len))
            .sum()
    }
}

impl Trainable for UwmmseWeights {
    fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            l.a.write_flat(&mut out);
            if let Some(b) = &l.b {
                b.write_flat(&mut out);
            }
        }
        out
    }

    fn set_flat(&mut self, mut flat: &[f64]) {
        for l in &mut self.layers {
            flat = l.a.read_flat(flat);
            if let Some(b) = &mut l.b {
                flat = b.read_flat(flat);
            }
        }
    }

    fn sample_loss(&self, h: &ChannelMatrix, sys: &SystemConfig) -> Result<f64> {
        let (p, _) = forward(h, self, sys, false)?;
        Ok(-crate::channel::sum_rate(h, &p, sys.sigma2)?.total)
    }

    fn sample_loss_grad(&self, h: &ChannelMatrix, sys: &SystemConfig) -> Result<(f64, Vec<f64>)> {
        let (l, g) = loss_and_grad(h, self, sys)?;
        Ok((l, g.to_flat()))
    }
}

impl Trainable for crate::neural::MlpParams {
    fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        self.write_flat(&mut out);
        out
    }

    fn set_flat(&mut self, flat: &[f64]) {
        self.read_flat(flat);
    }

    fn sample_loss(&self, h: &ChannelMatrix, sys: &SystemConfig) -> Result<f64> {
        let p = crate::neural::mlp_allocate(h, self, sys.p_max)?;
        Ok(-crate::channel::sum_rate(h, &p, sys.sigma2)?.total)
    }

    fn sample_loss_grad(&self, h: &ChannelMatrix, sys: &SystemConfig) -> Result<(f64, Vec<f64>)> {
        let tape = crate::neural::mlp_forward(h, self)?;
        let p = crate::channel::PowerAllocation {
            p: tape.gate.iter().map(|&g| (sys.p_max * g).min(sys.p_max)).collect(),
            p_max: sys.p_max,
        };
        let total = crate::channel::sum_rate(h, &p, sys.sigma2)?.total;
        let g_p: Vec<f64> = crate::channel::sum_rate_grad(h, &p, sys.sigma2)?
            .into_iter()
            .map(|g| -g)
            .collect();
        let grad = crate::neural::mlp_backward(&tape, self, sys.p_max, &g_p);
        Ok((-total, grad.to_flat()))
    }
}
