//! Per-layer perturbation bound for the unfolded model.
//!
//! For a clean channel `H` and a perturbed estimate `H̃ = H + E`, every node
//! `i` of every layer `k` satisfies (to first order, in the high-SNR regime
//! with `a + b = 1`)
//!
//! ```text
//! |v_i - ṽ_i| <= (1/|D_v,i|) (E1_i + |N_ṽ,i| / |D_ṽ,i| · E2_i)
//! ```
//!
//! with
//!
//! ```text
//! E1_i = (h_ii²/|D_u,i|) (|v'_i - ṽ'_i| + (h_ii²/|D_u,i|) |a_i v'_i³ - ã_i ṽ'_i³|)
//! E2_i = Σ_j |h_jj| (h_ji²/|D_u,j|) (|v'_j - ṽ'_j| + (h_jj²/|D_u,j|) |a_j v'_j³ - ã_j ṽ'_j³|)
//! ```
//!
//! where primes denote the previous layer's amplitudes, `D_u,i = Σ_j h_ij² v'_j²`,
//! `D_v,i = Σ_j h_ji² u_j² w_j` and `N_ṽ,i = ũ_i h̃_ii w̃_i`. The terms linear
//! in the realized entries `ε_ij = H̃_ij - H_ij` are available behind
//! [`BoundOptions::include_linear`]; higher-order terms are never included.

use alloc::format;
use alloc::vec::Vec;

use crate::channel::{apply_perturbation, sample_perturbation, ChannelMatrix, PerturbationMatrix, PowerAllocation, SystemConfig};
use crate::math::{is_zero_den, l2_norm, sq, sqrt};
use crate::uwmmse::{forward, LayerTrace, UwmmseWeights};
use crate::{rng, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct BoundOptions {
    /// Add the first-order `ε` terms to `E1` and `E2`.
    pub include_linear: bool,
    /// Use `σ² + Σ_j h_ij² v_j²` instead of the noise-free `D_u`.
    pub du_with_noise: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BoundTerms {
    pub node: usize,
    pub layer: usize,
    /// `E1`, including `e1_linear` when `include_linear` is set.
    pub e1: f64,
    pub e2: f64,
    /// First-order `ε` contributions, always evaluated.
    pub e1_linear: f64,
    pub e2_linear: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub include_linear: bool,
    /// `max |H̃ - H|` over the whole matrix.
    pub epsilon_used: f64,
}

fn check_den(x: f64, quantity: &'static str, layer: usize, node: usize) -> Result<f64> {
    if is_zero_den(x) {
        Err(Error::DegenerateDenominator { quantity, layer, node })
    } else {
        Ok(x.abs())
    }
}

/// `|a v³ - ã ṽ³|`, evaluated as `|(a - ã) v³ + ã (v - ṽ)(v² + v ṽ + ṽ²)|`
/// so that equal amplitudes cancel exactly.
fn cube_gap(a: f64, a_t: f64, v: f64, v_t: f64) -> f64 {
    ((a - a_t) * v * v * v + a_t * (v - v_t) * (v * v + v * v_t + v_t * v_t)).abs()
}

struct Pair<'a> {
    trace: &'a LayerTrace,
    trace_t: &'a LayerTrace,
    h: &'a ChannelMatrix,
    h_t: &'a ChannelMatrix,
    eps_max: f64,
}

impl<'a> Pair<'a> {
    fn new(trace: &'a LayerTrace, trace_t: &'a LayerTrace, h: &'a ChannelMatrix, h_t: &'a ChannelMatrix) -> Result<Self> {
        let m = h.m();
        if h_t.m() != m || trace.m() != m || trace_t.m() != m {
            return Err(Error::shape(
                format!("traces and channels of size {m}"),
                format!("{}/{}/{}", h_t.m(), trace.m(), trace_t.m()),
            ));
        }
        if trace.k() != trace_t.k() {
            return Err(Error::shape(format!("{} layers", trace.k()), format!("{}", trace_t.k())));
        }
        let eps_max = h
            .matrix()
            .as_slice()
            .iter()
            .zip(h_t.matrix().as_slice())
            .fold(0.0_f64, |acc, (a, b)| acc.max((b - a).abs()));
        Ok(Self { trace, trace_t, h, h_t, eps_max })
    }

    fn eps(&self, i: usize, j: usize) -> f64 {
        self.h_t.h(i, j) - self.h.h(i, j)
    }

    fn du(&self, k: usize, opts: &BoundOptions) -> &'a [f64] {
        let l = self.trace.layer(k);
        if opts.du_with_noise { &l.du_noisy } else { &l.du }
    }

    /// Linear ε contributions to E1 and E2 at `(k, i)` with previous-layer
    /// clean amplitudes `vp` and perturbed head output `a_t`.
    fn linear_terms(&self, vp: &[f64], a_t: &[f64], du: &[f64], i: usize) -> (f64, f64) {
        let m = self.h.m();
        let h = |r, c| self.h.h(r, c);
        let hii = h(i, i);
        let eii = self.eps(i, i);
        let dui = du[i].abs();
        let vi3 = vp[i] * vp[i] * vp[i];
        let e1 = ((2.0 * hii * eii * vp[i]).abs() + (2.0 * hii * hii * hii * eii * a_t[i] * vi3).abs() / dui) / dui;
        let mut e2 = 0.0;
        for j in 0..m {
            let (hji, hjj) = (h(j, i), h(j, j));
            let (eji, ejj) = (self.eps(j, i), self.eps(j, j));
            let duj = du[j].abs();
            let vj3 = vp[j] * vp[j] * vp[j];
            let first = (hji * (hji * eji + 2.0 * hjj * ejj) * vp[j]).abs();
            let second = (hji * hjj * hjj * (2.0 * hjj * hjj * eji + 3.0 * hji * hji * ejj) * vj3).abs();
            e2 += (first + second / duj) / duj;
        }
        (e1, e2)
    }

    fn assemble(&self, k: usize, i: usize, main: (f64, f64), linear: (f64, f64), opts: &BoundOptions) -> Result<BoundTerms> {
        let l = self.trace.layer(k);
        let lt = self.trace_t.layer(k);
        let dv = check_den(l.dv[i], "D_v", k, i)?;
        let dvt = check_den(lt.dv[i], "D_v~", k, i)?;
        let (e1, e2) = if opts.include_linear {
            (main.0 + linear.0, main.1 + linear.1)
        } else {
            main
        };
        let rhs = (e1 + lt.nv[i].abs() / dvt * e2) / dv;
        let lhs = (l.v[i] - lt.v[i]).abs();
        Ok(BoundTerms {
            node: i,
            layer: k,
            e1,
            e2,
            e1_linear: linear.0,
            e2_linear: linear.1,
            lhs,
            rhs,
            margin: rhs - lhs,
            include_linear: opts.include_linear,
            epsilon_used: self.eps_max,
        })
    }

    fn check_du(&self, du: &[f64], k: usize) -> Result<()> {
        for (j, &d) in du.iter().enumerate() {
            check_den(d, "D_u", k, j)?;
        }
        Ok(())
    }

    fn bound(&self, k: usize, i: usize, opts: &BoundOptions) -> Result<BoundTerms> {
        let m = self.h.m();
        if k == 0 || k > self.trace.k() || i >= m {
            return Err(Error::invalid(format!("no entry at layer {k}, node {i}")));
        }
        let h = |r, c| self.h.h(r, c);
        let du = self.du(k, opts);
        self.check_du(du, k)?;
        let vp = self.trace.v(k - 1);
        let vpt = self.trace_t.v(k - 1);
        let a = &self.trace.layer(k).a;
        let a_t = &self.trace_t.layer(k).a;

        let head = |j: usize| {
            let duj = du[j].abs();
            (vp[j] - vpt[j]).abs() + sq(h(j, j)) / duj * cube_gap(a[j], a_t[j], vp[j], vpt[j])
        };
        let e1 = sq(h(i, i)) / du[i].abs() * head(i);
        let e2 = (0..m)
            .map(|j| h(j, j).abs() * (sq(h(j, i)) / du[j].abs()) * head(j))
            .sum();
        let linear = self.linear_terms(vp, a_t, du, i);
        self.assemble(k, i, (e1, e2), linear, opts)
    }

    fn corollary(&self, i: usize, opts: &BoundOptions) -> Result<BoundTerms> {
        let m = self.h.m();
        if self.trace.k() != 1 {
            return Err(Error::invalid(format!(
                "single-layer reduction needs K = 1, got K = {}",
                self.trace.k()
            )));
        }
        if i >= m {
            return Err(Error::invalid(format!("node {i} out of range")));
        }
        let h = |r, c| self.h.h(r, c);
        let du = self.du(1, opts);
        self.check_du(du, 1)?;
        let a = &self.trace.layer(1).a;
        let a_t = &self.trace_t.layer(1).a;
        let s = sqrt(self.trace.p_max);
        let s3 = s * s * s;
        let hii = h(i, i);
        let e1 = sq(sq(hii)) * s3 / sq(du[i]) * (a[i] - a_t[i]).abs();
        let e2 = (0..m)
            .map(|j| {
                h(j, j).abs() * sq(h(j, i) * h(j, j)) * s3 / sq(du[j].abs()) * (a[j] - a_t[j]).abs()
            })
            .sum();
        let linear = self.linear_terms(&self.trace.v0, a_t, du, i);
        self.assemble(1, i, (e1, e2), linear, opts)
    }
}

/// Bound terms at layer `k` (1-based) and node `i` from a clean/perturbed
/// trace pair captured with the same weights.
pub fn bound_terms(
    trace: &LayerTrace,
    trace_t: &LayerTrace,
    h: &ChannelMatrix,
    h_t: &ChannelMatrix,
    k: usize,
    i: usize,
    opts: &BoundOptions,
) -> Result<BoundTerms> {
    Pair::new(trace, trace_t, h, h_t)?.bound(k, i, opts)
}

/// Closed form of [`bound_terms`] for single-layer models, where both passes
/// start from `√p_max`.
pub fn corollary_terms(
    trace: &LayerTrace,
    trace_t: &LayerTrace,
    h: &ChannelMatrix,
    h_t: &ChannelMatrix,
    i: usize,
    opts: &BoundOptions,
) -> Result<BoundTerms> {
    Pair::new(trace, trace_t, h, h_t)?.corollary(i, opts)
}

/// `|v_i^(k) - ṽ_i^(k)|`.
pub fn observed_error(trace: &LayerTrace, trace_t: &LayerTrace, k: usize, i: usize) -> f64 {
    (trace.v(k)[i] - trace_t.v(k)[i]).abs()
}

/// `‖p̃ - p‖₂ / ‖p‖₂`.
pub fn normalized_variation(p: &PowerAllocation, p_t: &PowerAllocation) -> Result<f64> {
    if p.m() != p_t.m() {
        return Err(Error::shape(format!("{} powers", p.m()), format!("{}", p_t.m())));
    }
    let norm = l2_norm(&p.p);
    if norm == 0.0 {
        return Err(Error::UndefinedMetric);
    }
    let diff: Vec<f64> = p.p.iter().zip(&p_t.p).map(|(a, b)| b - a).collect();
    Ok(l2_norm(&diff) / norm)
}

/// Entrywise-clipped Gaussian channel error for one campaign.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct PerturbationSpec {
    pub tau: f64,
    /// Cap; `0` means no perturbation at all.
    pub eps: f64,
    /// Master seed of the per-sample perturbation streams.
    pub seed: u64,
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        Self { tau: 1.0, eps: 0.005, seed: rng::perturbation_master(0) }
    }
}

impl PerturbationSpec {
    /// Perturbation of sample `index`, drawn from `substream(seed, index)`.
    /// Scaling `tau` and `eps` together scales the realized matrix exactly.
    pub fn draw(&self, m: usize, index: usize) -> Result<PerturbationMatrix> {
        if self.eps == 0.0 {
            Ok(PerturbationMatrix::zero(m))
        } else {
            sample_perturbation(m, self.tau, self.eps, &mut rng::substream(self.seed, index as u64))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BoundEntry {
    pub sample: usize,
    pub node: usize,
    pub layer: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub e1: f64,
    pub e2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleBounds {
    pub sample: usize,
    pub entries: Vec<BoundEntry>,
    pub degenerate: usize,
    /// `max |a^(k)_i - ã^(k)_i|` over layers and nodes.
    pub max_head_delta: f64,
}

/// Runs the clean and perturbed passes for one sample and evaluates every
/// `(node, layer)` entry. Degenerate-denominator entries are counted, not
/// returned.
pub fn sample_bounds(
    weights: &UwmmseWeights,
    h: &ChannelMatrix,
    sample: usize,
    pert: &PerturbationSpec,
    sys: &SystemConfig,
    opts: &BoundOptions,
) -> Result<SampleBounds> {
    let e = pert.draw(h.m(), sample)?;
    let h_t = apply_perturbation(h, &e)?;
    let (_, trace) = forward(h, weights, sys, true)?;
    let (_, trace_t) = forward(&h_t, weights, sys, true)?;
    let (trace, trace_t) = (trace.expect("captured"), trace_t.expect("captured"));
    let pair = Pair::new(&trace, &trace_t, h, &h_t)?;

    let mut out = SampleBounds { sample, entries: Vec::new(), degenerate: 0, max_head_delta: 0.0 };
    for k in 1..=trace.k() {
        let (a, a_t) = (&trace.layer(k).a, &trace_t.layer(k).a);
        for i in 0..h.m() {
            out.max_head_delta = out.max_head_delta.max((a[i] - a_t[i]).abs());
            match pair.bound(k, i, opts) {
                Ok(t) => out.entries.push(BoundEntry {
                    sample,
                    node: i,
                    layer: k,
                    lhs: t.lhs,
                    rhs: t.rhs,
                    margin: t.margin,
                    e1: t.e1,
                    e2: t.e2,
                }),
                Err(Error::DegenerateDenominator { .. }) => out.degenerate += 1,
                Err(e) => return Err(e),
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct HistogramSpec {
    pub min: f64,
    pub max: f64,
    pub bins: usize,
}

impl Default for HistogramSpec {
    fn default() -> Self {
        Self { min: -1.0, max: 5.0, bins: 30 }
    }
}

impl HistogramSpec {
    pub fn edges(&self) -> Vec<f64> {
        let width = (self.max - self.min) / self.bins as f64;
        (0..=self.bins)
            .map(|n| if n == self.bins { self.max } else { self.min + n as f64 * width })
            .collect()
    }
}

/// Counts over `[e_0, e_1), …, [e_{n-1}, e_n]` with open overflow bins.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub underflow: u64,
    pub overflow: u64,
}

impl Histogram {
    pub fn with_edges(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::invalid("histogram edges must be strictly increasing, at least two"));
        }
        let n = edges.len() - 1;
        Ok(Self { edges, counts: alloc::vec![0; n], underflow: 0, overflow: 0 })
    }

    pub fn add(&mut self, x: f64) {
        let last = self.edges[self.edges.len() - 1];
        if x < self.edges[0] {
            self.underflow += 1;
        } else if x > last || x.is_nan() {
            self.overflow += 1;
        } else if x == last {
            *self.counts.last_mut().expect("non-empty") += 1;
        } else {
            let idx = self.edges.partition_point(|&e| e <= x) - 1;
            self.counts[idx] += 1;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.underflow + self.overflow
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BoundReport {
    pub samples: usize,
    pub total_entries: u64,
    pub valid_entries: u64,
    pub degenerate_entries: u64,
    /// Entries with negative margin.
    pub violations: u64,
    /// Violations with `|margin| < 10 ε²`, attributable to the dropped
    /// higher-order terms.
    pub higher_order_violations: u64,
    pub violation_rate: f64,
    pub fraction_margin_below_half: f64,
    pub fraction_margin_above_two: f64,
    /// `max |a - ã| / ε` over the campaign; `None` when `ε = 0`.
    pub max_head_ratio: Option<f64>,
    /// Counts every valid entry, violations included.
    pub histogram: Histogram,
    #[cfg_attr(feature = "serde", serde(skip))]
    pub entries: Vec<BoundEntry>,
}

impl BoundReport {
    /// Order-fixed reduction over per-sample results.
    pub fn aggregate(
        samples: impl IntoIterator<Item = SampleBounds>,
        eps: f64,
        spec: &HistogramSpec,
    ) -> Result<Self> {
        let mut histogram = Histogram::with_edges(spec.edges())?;
        let mut report = BoundReport {
            samples: 0,
            total_entries: 0,
            valid_entries: 0,
            degenerate_entries: 0,
            violations: 0,
            higher_order_violations: 0,
            violation_rate: 0.0,
            fraction_margin_below_half: 0.0,
            fraction_margin_above_two: 0.0,
            max_head_ratio: None,
            histogram: histogram.clone(),
            entries: Vec::new(),
        };
        let mut below_half = 0u64;
        let mut above_two = 0u64;
        let mut max_delta = 0.0_f64;
        let ho_threshold = 10.0 * eps * eps;
        for s in samples {
            report.samples += 1;
            report.degenerate_entries += s.degenerate as u64;
            max_delta = max_delta.max(s.max_head_delta);
            for e in &s.entries {
                histogram.add(e.margin);
                if e.margin < 0.0 {
                    report.violations += 1;
                    if e.margin.abs() < ho_threshold {
                        report.higher_order_violations += 1;
                    }
                }
                if e.margin < 0.5 {
                    below_half += 1;
                }
                if e.margin > 2.0 {
                    above_two += 1;
                }
            }
            report.valid_entries += s.entries.len() as u64;
            report.entries.extend(s.entries);
        }
        report.total_entries = report.valid_entries + report.degenerate_entries;
        if report.valid_entries > 0 {
            let n = report.valid_entries as f64;
            report.violation_rate = report.violations as f64 / n;
            report.fraction_margin_below_half = below_half as f64 / n;
            report.fraction_margin_above_two = above_two as f64 / n;
        }
        report.max_head_ratio = (eps > 0.0).then(|| max_delta / eps);
        report.histogram = histogram;
        Ok(report)
    }
}

/// Bound-validation campaign over a dataset, sample by sample.
pub fn validate(
    weights: &UwmmseWeights,
    dataset: &[ChannelMatrix],
    pert: &PerturbationSpec,
    sys: &SystemConfig,
    opts: &BoundOptions,
    hist: &HistogramSpec,
) -> Result<BoundReport> {
    let samples = dataset
        .iter()
        .enumerate()
        .map(|(n, h)| sample_bounds(weights, h, n, pert, sys, opts))
        .collect::<Result<Vec<_>>>()?;
    BoundReport::aggregate(samples, pert.eps, hist)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::uwmmse::ModelMode;

    #[test]
    fn histogram_binning() {
        let mut h = Histogram::with_edges(alloc::vec![0.0, 1.5, 3.0]).unwrap();
        for x in [1.0, 1.0, 2.0] {
            h.add(x);
        }
        assert_eq!(h.counts, [2, 1]);
        h.add(3.0);
        h.add(-0.1);
        h.add(3.1);
        assert_eq!((h.counts[1], h.underflow, h.overflow), (2, 1, 1));
        assert!(Histogram::with_edges(alloc::vec![1.0]).is_err());
    }

    #[test]
    fn default_histogram_edges() {
        let e = HistogramSpec::default().edges();
        assert_eq!(e.len(), 31);
        assert_eq!((e[0], e[30]), (-1.0, 5.0));
        assert!((e[6] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn normalized_variation_examples() {
        let p = PowerAllocation { p: alloc::vec![1.0, 0.0], p_max: 1.0 };
        let q = PowerAllocation { p: alloc::vec![0.0, 1.0], p_max: 1.0 };
        assert_eq!(normalized_variation(&p, &p).unwrap(), 0.0);
        assert!((normalized_variation(&p, &q).unwrap() - core::f64::consts::SQRT_2).abs() < 1e-15);
        let zero = PowerAllocation { p: alloc::vec![0.0, 0.0], p_max: 1.0 };
        assert_eq!(normalized_variation(&zero, &p), Err(Error::UndefinedMetric));
    }

    #[test]
    fn observed_error_is_symmetric() {
        let sys = SystemConfig::default().with_m(3);
        let w = UwmmseWeights::init_random(2, 4, ModelMode::default(), &mut rng::stream(1));
        let h = crate::channel::sample_channel(&sys, &mut rng::stream(2)).unwrap();
        let e = PerturbationSpec { tau: 1.0, eps: 0.05, seed: 3 }.draw(3, 0).unwrap();
        let h_t = apply_perturbation(&h, &e).unwrap();
        let t = forward(&h, &w, &sys, true).unwrap().1.unwrap();
        let tt = forward(&h_t, &w, &sys, true).unwrap().1.unwrap();
        for k in 1..=2 {
            for i in 0..3 {
                assert_eq!(observed_error(&t, &tt, k, i), observed_error(&tt, &t, k, i));
                assert_eq!(observed_error(&t, &t, k, i), 0.0);
            }
        }
    }

    #[test]
    fn corollary_rejects_deep_models() {
        let sys = SystemConfig::default().with_m(3);
        let w = UwmmseWeights::init_random(2, 4, ModelMode::default(), &mut rng::stream(1));
        let h = crate::channel::sample_channel(&sys, &mut rng::stream(2)).unwrap();
        let t = forward(&h, &w, &sys, true).unwrap().1.unwrap();
        assert!(matches!(
            corollary_terms(&t, &t, &h, &h, 0, &BoundOptions::default()),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn cube_gap_matches_direct_form() {
        for &(a, at, v, vt) in &[(1.2f64, 0.9, 0.7, 0.65), (0.3, 0.3, 1.0, 0.2), (1.9, 0.1, 0.0, 1.0)] {
            let direct: f64 = (a * v * v * v - at * vt * vt * vt).abs();
            assert!((cube_gap(a, at, v, vt) - direct).abs() < 1e-14);
        }
        assert_eq!(cube_gap(0.75, 0.5, 0.5, 0.5), 0.25 * 0.125);
    }
}
