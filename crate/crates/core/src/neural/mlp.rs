//! Fully connected baseline mapping the flattened channel matrix to powers.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::channel::{ChannelMatrix, PowerAllocation};
use crate::math::logistic;
use crate::matrix::Matrix;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct Dense {
    /// `fan_in × fan_out`
    pub w: Matrix,
    pub b: Vec<f64>,
}

/// `M² → hidden… → M`, ReLU between layers, logistic on the output.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct MlpParams {
    pub m: usize,
    pub layers: Vec<Dense>,
}

impl MlpParams {
    fn with_widths(m: usize, hidden: &[usize], mut fill: impl FnMut(usize) -> f64) -> Self {
        let mut widths = vec![m * m];
        widths.extend_from_slice(hidden);
        widths.push(m);
        let layers = widths
            .windows(2)
            .map(|w| Dense {
                w: Matrix::from_fn(w[0], w[1], |_, _| fill(w[0])),
                b: vec![0.0; w[1]],
            })
            .collect();
        Self { m, layers }
    }

    pub fn zeros(m: usize, hidden: &[usize]) -> Self {
        Self::with_widths(m, hidden, |_| 0.0)
    }

    pub fn init<R: Rng + ?Sized>(m: usize, hidden: &[usize], rng: &mut R) -> Self {
        Self::with_widths(m, hidden, |fan_in| super::uniform_init(fan_in, rng))
    }

    /// Two hidden layers of width `4M`.
    pub fn default_widths(m: usize) -> Vec<usize> {
        vec![4 * m, 4 * m]
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(|l| l.w.as_slice().len() + l.b.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_consistent(&self) -> bool {
        let mut width = self.m * self.m;
        for l in &self.layers {
            if l.w.rows() != width || l.b.len() != l.w.cols() {
                return false;
            }
            width = l.w.cols();
        }
        width == self.m
            && self
                .layers
                .iter()
                .all(|l| l.w.is_finite() && l.b.iter().all(|x| x.is_finite()))
    }

    pub fn write_flat(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend_from_slice(l.w.as_slice());
            out.extend_from_slice(&l.b);
        }
    }

    pub fn read_flat(&mut self, mut flat: &[f64]) {
        for l in &mut self.layers {
            let (w, rest) = flat.split_at(l.w.as_slice().len());
            l.w.as_mut_slice().copy_from_slice(w);
            let (b, rest) = rest.split_at(l.b.len());
            l.b.copy_from_slice(b);
            flat = rest;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpTape {
    /// Input to each layer; `inputs[0]` is the flattened channel.
    pub inputs: Vec<Vec<f64>>,
    /// Pre-activations of each layer.
    pub pre: Vec<Vec<f64>>,
    /// `logistic(logits)`
    pub gate: Vec<f64>,
}

fn dense(l: &Dense, x: &[f64]) -> Vec<f64> {
    let mut out = l.b.clone();
    for (k, &xk) in x.iter().enumerate() {
        if xk != 0.0 {
            for (o, &w) in out.iter_mut().zip(l.w.row(k)) {
                *o += xk * w;
            }
        }
    }
    out
}

pub fn mlp_forward(h: &ChannelMatrix, params: &MlpParams) -> Result<MlpTape> {
    if h.m() != params.m || !params.is_consistent() {
        return Err(Error::shape(
            format!("network of size {}", params.m),
            format!("{}", h.m()),
        ));
    }
    let mut inputs = Vec::with_capacity(params.layers.len());
    let mut pre = Vec::with_capacity(params.layers.len());
    let mut x = h.matrix().as_slice().to_vec();
    let last = params.layers.len() - 1;
    for (n, l) in params.layers.iter().enumerate() {
        let z = dense(l, &x);
        let next = if n == last {
            z.iter().map(|&v| logistic(v)).collect()
        } else {
            z.iter().map(|&v| v.max(0.0)).collect()
        };
        inputs.push(core::mem::replace(&mut x, next));
        pre.push(z);
    }
    Ok(MlpTape { inputs, pre, gate: x })
}

/// `p = p_max · logistic(MLP(vec(H)))`.
pub fn mlp_allocate(h: &ChannelMatrix, params: &MlpParams, p_max: f64) -> Result<PowerAllocation> {
    let tape = mlp_forward(h, params)?;
    let p = tape.gate.iter().map(|&g| (p_max * g).min(p_max)).collect();
    Ok(PowerAllocation { p, p_max })
}

/// Parameter gradient given `∂loss/∂p`.
pub fn mlp_backward(tape: &MlpTape, params: &MlpParams, p_max: f64, g_p: &[f64]) -> MlpParams {
    let n_layers = params.layers.len();
    let mut grad = params.clone();
    let mut g_z: Vec<f64> = g_p
        .iter()
        .zip(&tape.gate)
        .map(|(&g, &s)| g * p_max * s * (1.0 - s))
        .collect();
    for n in (0..n_layers).rev() {
        let l = &params.layers[n];
        let x = &tape.inputs[n];
        let gl = &mut grad.layers[n];
        gl.b.copy_from_slice(&g_z);
        for (k, &xk) in x.iter().enumerate() {
            let row = &mut gl.w.as_mut_slice()[k * l.w.cols()..(k + 1) * l.w.cols()];
            for (o, &g) in row.iter_mut().zip(&g_z) {
                *o = xk * g;
            }
        }
        if n > 0 {
            let below = &tape.pre[n - 1];
            g_z = (0..l.w.rows())
                .map(|k| {
                    if below[k] > 0.0 {
                        l.w.row(k).iter().zip(&g_z).map(|(w, g)| w * g).sum()
                    } else {
                        0.0
                    }
                })
                .collect();
        }
    }
    grad
}
