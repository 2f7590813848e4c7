//! Network geometry, Geometric-Rayleigh channels, bounded perturbations and
//! the sum-rate utility.

use alloc::format;
use alloc::vec::Vec;

use rand::distr::Open01;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::math::{is_zero_den, log, log1p, node_sum, sq, sqrt, LN_2};
use crate::matrix::Matrix;
use crate::rng;
use crate::{Error, Result};

/// Physical operating point shared by every solver.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SystemConfig {
    /// Number of transceiver pairs.
    pub m: usize,
    /// Receiver noise variance.
    pub sigma2: f64,
    pub p_max: f64,
    /// Scale of the Rayleigh fading component.
    pub fading_scale: f64,
    /// Side of the square the transceivers are dropped in.
    pub side_length: f64,
    /// Floor applied to transmitter-receiver distances.
    pub min_distance: f64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            m: 20,
            sigma2: 1e-2,
            p_max: 1.0,
            fading_scale: 1.0,
            side_length: 1.0,
            min_distance: 0.1,
        }
    }
}

impl SystemConfig {
    pub fn with_m(self, m: usize) -> Self {
        Self { m, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::invalid("network size must be at least 1"));
        }
        if !(self.sigma2 >= 0.0 && self.sigma2.is_finite()) {
            return Err(Error::invalid("sigma2 must be finite and >= 0"));
        }
        if !(self.p_max > 0.0 && self.p_max.is_finite()) {
            return Err(Error::invalid("p_max must be finite and > 0"));
        }
        if !(self.fading_scale > 0.0 && self.fading_scale.is_finite()) {
            return Err(Error::invalid("fading_scale must be finite and > 0"));
        }
        if !(self.side_length >= 0.0 && self.side_length.is_finite()) {
            return Err(Error::invalid("side_length must be finite and >= 0"));
        }
        if !(self.min_distance > 0.0 && self.min_distance.is_finite()) {
            return Err(Error::invalid("min_distance must be finite and > 0"));
        }
        Ok(())
    }

    pub fn sqrt_p_max(&self) -> f64 {
        sqrt(self.p_max)
    }
}

/// Transmitter and receiver drop locations; pair `i` is `tx[i] -> rx[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub tx: Vec<[f64; 2]>,
    pub rx: Vec<[f64; 2]>,
    pub side_length: f64,
    pub min_distance: f64,
}

impl Topology {
    pub fn m(&self) -> usize {
        self.tx.len()
    }

    /// Floored distance from transmitter `j` to receiver `i`.
    pub fn distance(&self, rx: usize, tx: usize) -> f64 {
        let [ax, ay] = self.rx[rx];
        let [bx, by] = self.tx[tx];
        libm::hypot(ax - bx, ay - by).max(self.min_distance)
    }
}

/// Drops `m` transmitters and `m` receivers uniformly on `[0, side]²`.
pub fn sample_topology<R: Rng + ?Sized>(
    m: usize,
    side: f64,
    min_distance: f64,
    rng: &mut R,
) -> Result<Topology> {
    if m == 0 {
        return Err(Error::invalid("network size must be at least 1"));
    }
    if !(side >= 0.0) || !(min_distance > 0.0) {
        return Err(Error::invalid("side must be >= 0 and min_distance > 0"));
    }
    let point = |rng: &mut R| [rng.random::<f64>() * side, rng.random::<f64>() * side];
    let tx = (0..m).map(|_| point(rng)).collect();
    let rx = (0..m).map(|_| point(rng)).collect();
    Ok(Topology {
        tx,
        rx,
        side_length: side,
        min_distance,
    })
}

/// Rayleigh(scale) by inversion of an open-interval uniform, hence always > 0.
pub fn sample_rayleigh<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.sample(Open01);
    scale * sqrt(-2.0 * log(u))
}

/// `H[i][j] = r_ij / max(d(tx_j, rx_i), d_min)` with i.i.d. Rayleigh `r_ij`.
pub fn build_channel<R: Rng + ?Sized>(
    topo: &Topology,
    cfg: &SystemConfig,
    rng: &mut R,
) -> ChannelMatrix {
    let m = topo.m();
    let h = Matrix::from_fn(m, m, |i, j| {
        sample_rayleigh(cfg.fading_scale, rng) / topo.distance(i, j)
    });
    ChannelMatrix(h)
}

/// One channel realization for the configured geometry.
pub fn sample_channel<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> Result<ChannelMatrix> {
    cfg.validate()?;
    let topo = sample_topology(cfg.m, cfg.side_length, cfg.min_distance, rng)?;
    Ok(build_channel(&topo, cfg, rng))
}

/// `count` i.i.d. realizations; sample `n` is drawn from `substream(master, n)`.
pub fn sample_dataset(cfg: &SystemConfig, count: usize, master: u64) -> Result<Vec<ChannelMatrix>> {
    (0..count)
        .map(|n| sample_channel(cfg, &mut rng::substream(master, n as u64)))
        .collect()
}

/// Square channel-state matrix: `H[i][i]` is the direct gain of pair `i`,
/// `H[i][j]` the interference from transmitter `j` at receiver `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix(Matrix);

impl ChannelMatrix {
    pub fn new(h: Matrix) -> Result<Self> {
        if h.rows() != h.cols() || h.rows() == 0 {
            return Err(Error::shape(
                "non-empty square matrix",
                format!("{}x{}", h.rows(), h.cols()),
            ));
        }
        if !h.is_finite() {
            return Err(Error::invalid("channel entries must be finite"));
        }
        Ok(Self(h))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows).ok_or_else(|| Error::invalid("ragged channel rows"))?)
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.0.rows()
    }

    #[inline]
    pub fn h(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.m()).map(|i| self.h(i, i)).collect()
    }

    /// `P H Pᵀ` where node `i` is relabelled `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self(self.0.permute_symmetric(perm))
    }
}

/// Additive channel-estimation error with `|E_ij| <= eps`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationMatrix {
    pub e: Matrix,
    pub eps: f64,
    pub tau: f64,
}

impl PerturbationMatrix {
    pub fn zero(m: usize) -> Self {
        Self {
            e: Matrix::zeros(m, m),
            eps: 0.0,
            tau: 0.0,
        }
    }

    /// Same direction, every entry multiplied by `scale`.
    pub fn scaled(&self, scale: f64) -> Self {
        let mut e = self.e.clone();
        e.as_mut_slice().iter_mut().for_each(|x| *x *= scale);
        Self {
            e,
            eps: self.eps * scale,
            tau: self.tau * scale,
        }
    }
}

/// Entrywise `clip(N(0, tau²), -eps, eps)`.
pub fn sample_perturbation<R: Rng + ?Sized>(
    m: usize,
    tau: f64,
    eps: f64,
    rng: &mut R,
) -> Result<PerturbationMatrix> {
    if !(eps > 0.0) {
        return Err(Error::invalid("perturbation cap eps must be > 0"));
    }
    if !(tau > 0.0) {
        return Err(Error::invalid("perturbation spread tau must be > 0"));
    }
    let e = Matrix::from_fn(m, m, |_, _| {
        let g: f64 = rng.sample(StandardNormal);
        (tau * g).clamp(-eps, eps)
    });
    Ok(PerturbationMatrix { e, eps, tau })
}

/// `H + E`.
pub fn apply_perturbation(h: &ChannelMatrix, e: &PerturbationMatrix) -> Result<ChannelMatrix> {
    let m = h.m();
    if e.e.rows() != m || e.e.cols() != m {
        return Err(Error::shape(
            format!("{m}x{m}"),
            format!("{}x{}", e.e.rows(), e.e.cols()),
        ));
    }
    let sum = Matrix::from_fn(m, m, |i, j| h.h(i, j) + e.e[(i, j)]);
    ChannelMatrix::new(sum)
}

/// Per-pair transmit powers, `0 <= p[i] <= p_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerAllocation {
    pub p: Vec<f64>,
    pub p_max: f64,
}

impl PowerAllocation {
    pub fn new(p: Vec<f64>, p_max: f64) -> Result<Self> {
        if let Some(i) = p.iter().position(|&x| !(0.0..=p_max).contains(&x)) {
            return Err(Error::invalid(format!(
                "power {} at node {i} outside [0, {p_max}]",
                p[i]
            )));
        }
        Ok(Self { p, p_max })
    }

    /// From transmit amplitudes, `p = v²`.
    pub fn from_amplitudes(v: &[f64], p_max: f64) -> Self {
        let p = v.iter().map(|&x| (x * x).min(p_max)).collect();
        Self { p, p_max }
    }

    pub fn full(m: usize, p_max: f64) -> Self {
        Self {
            p: alloc::vec![p_max; m],
            p_max,
        }
    }

    pub fn m(&self) -> usize {
        self.p.len()
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            p: crate::matrix::permute_vec(&self.p, perm),
            p_max: self.p_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SumRate {
    pub rates: Vec<f64>,
    pub total: f64,
}

/// Shannon rates `log2(1 + h_ii² p_i / (σ² + Σ_{j≠i} h_ij² p_j))` and their sum.
pub fn sum_rate(h: &ChannelMatrix, p: &PowerAllocation, sigma2: f64) -> Result<SumRate> {
    let m = h.m();
    if p.m() != m {
        return Err(Error::shape(format!("{m} powers"), format!("{}", p.m())));
    }
    if !(sigma2 >= 0.0) {
        return Err(Error::invalid("sigma2 must be >= 0"));
    }
    let mut scratch = Vec::with_capacity(m);
    let mut rates = Vec::with_capacity(m);
    for i in 0..m {
        let signal = sq(h.h(i, i)) * p.p[i];
        let interference = sigma2
            + node_sum(
                &mut scratch,
                (0..m).filter(|&j| j != i).map(|j| sq(h.h(i, j)) * p.p[j]),
            );
        let rate = if is_zero_den(interference) {
            if signal == 0.0 {
                0.0
            } else {
                return Err(Error::InfiniteRate { node: i });
            }
        } else {
            log1p(signal / interference) / LN_2
        };
        rates.push(rate);
    }
    let total = node_sum(&mut scratch, rates.iter().copied());
    Ok(SumRate { rates, total })
}

/// Gradient of the total sum-rate with respect to the powers.
///
/// Links that carry no signal over a zero denominator contribute nothing.
pub fn sum_rate_grad(h: &ChannelMatrix, p: &PowerAllocation, sigma2: f64) -> Result<Vec<f64>> {
    let m = h.m();
    if p.m() != m {
        return Err(Error::shape(format!("{m} powers"), format!("{}", p.m())));
    }
    let mut scratch = Vec::with_capacity(m);
    let mut grad = alloc::vec![0.0; m];
    for i in 0..m {
        let signal = sq(h.h(i, i)) * p.p[i];
        let interference = sigma2
            + node_sum(
                &mut scratch,
                (0..m).filter(|&j| j != i).map(|j| sq(h.h(i, j)) * p.p[j]),
            );
        if is_zero_den(interference) {
            if signal == 0.0 {
                continue;
            }
            return Err(Error::InfiniteRate { node: i });
        }
        let total = interference + signal;
        grad[i] += sq(h.h(i, i)) / (total * LN_2);
        let cross = signal / (interference * total * LN_2);
        for j in (0..m).filter(|&j| j != i) {
            grad[j] -= cross * sq(h.h(i, j));
        }
    }
    Ok(grad)
}
