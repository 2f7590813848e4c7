use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::channel::ChannelMatrix;
use crate::math::{logistic, node_sum, sq, sqrt, tanh};
use crate::matrix::Matrix;
use crate::{Error, Result};

/// Input features per node: `[h_ii, 1]`.
pub const NODE_FEATURES: usize = 2;

/// Two-layer graph convolution `act(Â relu(Â X W0 + b0) W1 + b1)`.
///
/// Also serves as its own gradient container.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct GcnParams {
    pub w0: Matrix,
    pub b0: Vec<f64>,
    pub w1: Vec<f64>,
    pub b1: f64,
}

pub type GcnGradient = GcnParams;

impl GcnParams {
    pub fn zeros(f_in: usize, hidden: usize) -> Self {
        Self {
            w0: Matrix::zeros(f_in, hidden),
            b0: vec![0.0; hidden],
            w1: vec![0.0; hidden],
            b1: 0.0,
        }
    }

    /// Both weight matrices uniform, biases zero.
    pub fn init_random<R: Rng + ?Sized>(f_in: usize, hidden: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(f_in, hidden);
        p.w0.as_mut_slice()
            .iter_mut()
            .for_each(|x| *x = super::uniform_init(f_in, rng));
        p.w1.iter_mut().for_each(|x| *x = super::uniform_init(hidden, rng));
        p
    }

    /// Random first layer, zero output layer: the head emits `act(0)` for every
    /// input while the output weights still receive gradient.
    pub fn init_output_zeroed<R: Rng + ?Sized>(f_in: usize, hidden: usize, rng: &mut R) -> Self {
        let mut p = Self::init_random(f_in, hidden, rng);
        p.w1.iter_mut().for_each(|x| *x = 0.0);
        p
    }

    pub fn f_in(&self) -> usize {
        self.w0.rows()
    }

    pub fn hidden(&self) -> usize {
        self.w0.cols()
    }

    pub fn len(&self) -> usize {
        self.w0.as_slice().len() + self.b0.len() + self.w1.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn is_consistent(&self) -> bool {
        let f = self.hidden();
        self.b0.len() == f
            && self.w1.len() == f
            && self.w0.is_finite()
            && self.b0.iter().chain(&self.w1).all(|x| x.is_finite())
            && self.b1.is_finite()
    }

    pub fn write_flat(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self.w0.as_slice());
        out.extend_from_slice(&self.b0);
        out.extend_from_slice(&self.w1);
        out.push(self.b1);
    }

    /// Reads `self.len()` values and returns the remainder.
    pub fn read_flat<'a>(&mut self, flat: &'a [f64]) -> &'a [f64] {
        let (w0, rest) = flat.split_at(self.w0.as_slice().len());
        self.w0.as_mut_slice().copy_from_slice(w0);
        let (b0, rest) = rest.split_at(self.b0.len());
        self.b0.copy_from_slice(b0);
        let (w1, rest) = rest.split_at(self.w1.len());
        self.w1.copy_from_slice(w1);
        self.b1 = rest[0];
        &rest[1..]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadActivation {
    /// `2·logistic(r)`, range (0, 2), value 1 at r = 0.
    DoubleLogistic,
    /// `tanh(r)`, range (-1, 1), value 0 at r = 0.
    Tanh,
}

impl HeadActivation {
    fn apply(self, r: f64) -> f64 {
        match self {
            Self::DoubleLogistic => 2.0 * logistic(r),
            Self::Tanh => tanh(r),
        }
    }

    /// Derivative expressed through the output value.
    fn slope(self, out: f64) -> f64 {
        match self {
            Self::DoubleLogistic => out * (1.0 - 0.5 * out),
            Self::Tanh => 1.0 - out * out,
        }
    }
}

/// `D^{-1/2} (S + I) D^{-1/2}` with `S_ij = H_ij²` and `D` the row sums of `S + I`.
pub fn normalize_adjacency(h: &ChannelMatrix) -> Matrix {
    let m = h.m();
    let s = Matrix::from_fn(m, m, |i, j| sq(h.h(i, j)) + if i == j { 1.0 } else { 0.0 });
    let mut scratch = Vec::with_capacity(m);
    let deg: Vec<f64> = (0..m)
        .map(|i| node_sum(&mut scratch, s.row(i).iter().copied()))
        .collect();
    Matrix::from_fn(m, m, |i, j| s[(i, j)] / sqrt(deg[i] * deg[j]))
}

pub fn node_features(h: &ChannelMatrix) -> Matrix {
    Matrix::from_fn(h.m(), NODE_FEATURES, |i, c| if c == 0 { h.h(i, i) } else { 1.0 })
}

/// Forward intermediates retained for [`gcn_backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct GcnTape {
    pub act: HeadActivation,
    /// `Â X`
    pub ax: Matrix,
    /// `Â X W0 + b0`
    pub pre: Matrix,
    pub hidden: Matrix,
    /// `relu(..) W1`
    pub q: Vec<f64>,
    /// `Â q + b1`
    pub logits: Vec<f64>,
    pub out: Vec<f64>,
}

/// Propagates over `Â` (sorted node sums, so relabelling nodes permutes the
/// output exactly).
fn propagate(a_hat: &Matrix, col: impl Fn(usize) -> f64, i: usize, scratch: &mut Vec<f64>) -> f64 {
    node_sum(scratch, (0..a_hat.cols()).map(|j| a_hat[(i, j)] * col(j)))
}

pub fn gcn_forward(a_hat: &Matrix, x: &Matrix, params: &GcnParams, act: HeadActivation) -> Result<GcnTape> {
    let m = a_hat.rows();
    if a_hat.cols() != m || x.rows() != m {
        return Err(Error::shape(
            format!("{m}x{m} adjacency and {m} feature rows"),
            format!("{}x{} adjacency, {} feature rows", a_hat.rows(), a_hat.cols(), x.rows()),
        ));
    }
    if x.cols() != params.f_in() || !params.is_consistent() {
        return Err(Error::shape(
            format!("{} input features", params.f_in()),
            format!("{}", x.cols()),
        ));
    }
    let f_in = params.f_in();
    let hidden = params.hidden();
    let mut scratch = Vec::with_capacity(m);

    let ax = Matrix::from_fn(m, f_in, |i, c| propagate(a_hat, |j| x[(j, c)], i, &mut scratch));
    let pre = Matrix::from_fn(m, hidden, |i, f| {
        (0..f_in).fold(params.b0[f], |acc, c| acc + ax[(i, c)] * params.w0[(c, f)])
    });
    let hid = Matrix::from_fn(m, hidden, |i, f| pre[(i, f)].max(0.0));
    let q: Vec<f64> = (0..m)
        .map(|i| (0..hidden).fold(0.0, |acc, f| acc + hid[(i, f)] * params.w1[f]))
        .collect();
    let logits: Vec<f64> = (0..m)
        .map(|i| propagate(a_hat, |j| q[j], i, &mut scratch) + params.b1)
        .collect();
    let out = logits.iter().map(|&r| act.apply(r)).collect();
    Ok(GcnTape { act, ax, pre, hidden: hid, q, logits, out })
}

/// Reverse-mode adjoints of [`gcn_forward`] for an upstream gradient on the
/// head output. Returns parameter, feature and adjacency gradients.
pub fn gcn_backward(
    tape: &GcnTape,
    a_hat: &Matrix,
    x: &Matrix,
    params: &GcnParams,
    upstream: &[f64],
) -> Result<(GcnGradient, Matrix, Matrix)> {
    let m = a_hat.rows();
    if upstream.len() != m || tape.out.len() != m {
        return Err(Error::shape(format!("{m} upstream values"), format!("{}", upstream.len())));
    }
    let f_in = params.f_in();
    let hidden = params.hidden();
    let mut grad = GcnParams::zeros(f_in, hidden);
    let mut g_a_hat = Matrix::zeros(m, m);
    let mut g_x = Matrix::zeros(m, f_in);

    let g_logits: Vec<f64> = (0..m).map(|i| upstream[i] * tape.act.slope(tape.out[i])).collect();
    grad.b1 = g_logits.iter().sum();

    let mut g_q = vec![0.0; m];
    for i in 0..m {
        for j in 0..m {
            g_q[j] += a_hat[(i, j)] * g_logits[i];
            g_a_hat[(i, j)] += g_logits[i] * tape.q[j];
        }
    }

    let mut g_pre = Matrix::zeros(m, hidden);
    for i in 0..m {
        for f in 0..hidden {
            grad.w1[f] += tape.hidden[(i, f)] * g_q[i];
            if tape.pre[(i, f)] > 0.0 {
                g_pre[(i, f)] = g_q[i] * params.w1[f];
            }
        }
    }

    let mut g_ax = Matrix::zeros(m, f_in);
    for i in 0..m {
        for f in 0..hidden {
            let g = g_pre[(i, f)];
            grad.b0[f] += g;
            for c in 0..f_in {
                grad.w0[(c, f)] += tape.ax[(i, c)] * g;
                g_ax[(i, c)] += g * params.w0[(c, f)];
            }
        }
    }

    for i in 0..m {
        for j in 0..m {
            for c in 0..f_in {
                g_x[(j, c)] += a_hat[(i, j)] * g_ax[(i, c)];
                g_a_hat[(i, j)] += g_ax[(i, c)] * x[(j, c)];
            }
        }
    }
    Ok((grad, g_x, g_a_hat))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn scalar(h: f64) -> ChannelMatrix {
        ChannelMatrix::from_rows(&[vec![h]]).unwrap()
    }

    #[test]
    fn scalar_adjacency_normalizes_to_one() {
        assert_eq!(normalize_adjacency(&scalar(0.0)).as_slice(), [1.0]);
        assert_eq!(normalize_adjacency(&scalar(2.0)).as_slice(), [1.0]);
    }

    #[test]
    fn symmetric_channel_gives_symmetric_adjacency() {
        let h = ChannelMatrix::new(Matrix::from_fn(4, 4, |i, j| 0.3 + (i * j) as f64 + (i + j) as f64)).unwrap();
        let a = normalize_adjacency(&h);
        assert_eq!(a, a.transpose());
    }

    #[test]
    fn zero_parameters_emit_one() {
        let h = ChannelMatrix::new(Matrix::from_fn(3, 3, |i, j| 1.0 + (i + j) as f64)).unwrap();
        let tape = gcn_forward(
            &normalize_adjacency(&h),
            &node_features(&h),
            &GcnParams::zeros(2, 8),
            HeadActivation::DoubleLogistic,
        )
        .unwrap();
        assert_eq!(tape.out, [1.0; 3]);
    }

    #[test]
    fn scalar_composition() {
        let mut p = GcnParams::zeros(1, 1);
        p.w0[(0, 0)] = 1.0;
        p.w1[0] = 1.0;
        let a = Matrix::identity(1);
        for x in [-0.7, 0.0, 1.3] {
            let xm = Matrix::from_fn(1, 1, |_, _| x);
            let tape = gcn_forward(&a, &xm, &p, HeadActivation::DoubleLogistic).unwrap();
            assert_eq!(tape.out[0], 2.0 * logistic(x.max(0.0)));
        }
    }

    #[test]
    fn zero_parameter_bias_slope_is_half() {
        let h = ChannelMatrix::new(Matrix::from_fn(3, 3, |i, j| 0.5 + (2 * i + j) as f64)).unwrap();
        let (a, x) = (normalize_adjacency(&h), node_features(&h));
        let p = GcnParams::zeros(2, 4);
        let tape = gcn_forward(&a, &x, &p, HeadActivation::DoubleLogistic).unwrap();
        for node in 0..3 {
            let mut up = vec![0.0; 3];
            up[node] = 1.0;
            let (g, _, _) = gcn_backward(&tape, &a, &x, &p, &up).unwrap();
            assert_eq!(g.b1, 0.5);
        }
        let (g, gx, ga) = gcn_backward(&tape, &a, &x, &p, &[0.0; 3]).unwrap();
        assert_eq!(g, GcnParams::zeros(2, 4));
        assert_eq!(gx.max_abs(), 0.0);
        assert_eq!(ga.max_abs(), 0.0);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let p = GcnParams::init_random(2, 4, &mut stream(1));
        let a = Matrix::identity(3);
        let x = Matrix::zeros(2, 2);
        assert!(matches!(
            gcn_forward(&a, &x, &p, HeadActivation::Tanh),
            Err(Error::ShapeMismatch { .. })
        ));
        let x = Matrix::zeros(3, 3);
        assert!(gcn_forward(&a, &x, &p, HeadActivation::Tanh).is_err());
    }

    #[test]
    fn flat_round_trip() {
        let p = GcnParams::init_random(2, 5, &mut stream(4));
        let mut flat = Vec::new();
        p.write_flat(&mut flat);
        assert_eq!(flat.len(), p.len());
        let mut q = GcnParams::zeros(2, 5);
        assert!(q.read_flat(&flat).is_empty());
        assert_eq!(p, q);
    }
}
