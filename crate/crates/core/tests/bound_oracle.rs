//! Straight-line re-evaluation of the perturbation bound, written against the
//! raw amplitudes and channels only. Stored trace denominators are not used.

#![allow(clippy::needless_range_loop)]

use uwmmse_core::channel::{apply_perturbation, sample_channel, sample_dataset, ChannelMatrix};
use uwmmse_core::rng::stream;
use uwmmse_core::stability::{
    bound_terms, corollary_terms, validate, BoundOptions, Histogram, HistogramSpec, PerturbationSpec,
};
use uwmmse_core::uwmmse::{forward, LayerTrace, ModelMode, UwmmseWeights};
use uwmmse_core::SystemConfig;

struct Oracle {
    e1: f64,
    e2: f64,
    lhs: f64,
    rhs: f64,
}

fn oracle(
    tr: &LayerTrace,
    tt: &LayerTrace,
    h: &ChannelMatrix,
    ht: &ChannelMatrix,
    k: usize,
    i: usize,
    linear: bool,
) -> Oracle {
    let m = h.m();
    let g = |r: usize, c: usize| h.h(r, c);
    let gt = |r: usize, c: usize| ht.h(r, c);
    let eps = |r: usize, c: usize| ht.h(r, c) - h.h(r, c);
    let vp = tr.v(k - 1);
    let vpt = tt.v(k - 1);
    let a = &tr.layer(k).a;
    let at = &tt.layer(k).a;
    let (u, w) = (&tr.layer(k).u, &tr.layer(k).w);
    let (ut, wt) = (&tt.layer(k).u, &tt.layer(k).w);

    let mut du = vec![0.0; m];
    for j in 0..m {
        for l in 0..m {
            du[j] += g(j, l) * g(j, l) * vp[l] * vp[l];
        }
    }

    let mut e1 = g(i, i) * g(i, i) / du[i].abs()
        * ((vp[i] - vpt[i]).abs()
            + g(i, i) * g(i, i) / du[i].abs() * (a[i] * vp[i].powi(3) - at[i] * vpt[i].powi(3)).abs());
    if linear {
        e1 += (1.0 / du[i].abs())
            * ((2.0 * g(i, i) * eps(i, i) * vp[i]).abs()
                + (1.0 / du[i].abs()) * (2.0 * g(i, i).powi(3) * eps(i, i) * at[i] * vp[i].powi(3)).abs());
    }

    let mut e2 = 0.0;
    for j in 0..m {
        e2 += g(j, j).abs() * (g(j, i) * g(j, i) / du[j].abs())
            * ((vp[j] - vpt[j]).abs()
                + g(j, j) * g(j, j) / du[j].abs() * (a[j] * vp[j].powi(3) - at[j] * vpt[j].powi(3)).abs());
        if linear {
            e2 += (1.0 / du[j].abs())
                * ((g(j, i) * (g(j, i) * eps(j, i) + 2.0 * g(j, j) * eps(j, j)) * vp[j]).abs()
                    + (1.0 / du[j].abs())
                        * (g(j, i)
                            * g(j, j).powi(2)
                            * (2.0 * g(j, j).powi(2) * eps(j, i) + 3.0 * g(j, i).powi(2) * eps(j, j))
                            * vp[j].powi(3))
                        .abs());
        }
    }

    let mut dv = 0.0;
    let mut dvt = 0.0;
    for j in 0..m {
        dv += g(j, i) * g(j, i) * u[j] * u[j] * w[j];
        dvt += gt(j, i) * gt(j, i) * ut[j] * ut[j] * wt[j];
    }
    let nvt = ut[i] * gt(i, i) * wt[i];
    let rhs = (e1 + nvt.abs() / dvt.abs() * e2) / dv.abs();
    let lhs = (tr.v(k)[i] - tt.v(k)[i]).abs();
    Oracle { e1, e2, lhs, rhs }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

fn traces(w: &UwmmseWeights, h: &ChannelMatrix, ht: &ChannelMatrix, sys: &SystemConfig) -> (LayerTrace, LayerTrace) {
    let t = forward(h, w, sys, true).unwrap().1.unwrap();
    let tt = forward(ht, w, sys, true).unwrap().1.unwrap();
    (t, tt)
}

#[test]
fn bound_terms_match_transcription_m5() {
    let sys = SystemConfig::default().with_m(5);
    let pert = PerturbationSpec { tau: 1.0, eps: 0.005, seed: 42 };
    let mut worst = 0.0_f64;
    for seed in 0..20 {
        let mut rng = stream(seed);
        let mode = if seed % 2 == 0 { ModelMode::default() } else { ModelMode { constrained_b: false, ..ModelMode::default() } };
        let w = UwmmseWeights::init_random(4, 8, mode, &mut rng);
        let h = sample_channel(&sys, &mut rng).unwrap();
        let ht = apply_perturbation(&h, &pert.draw(5, seed as usize).unwrap()).unwrap();
        let (t, tt) = traces(&w, &h, &ht, &sys);
        for linear in [false, true] {
            let opts = BoundOptions { include_linear: linear, ..BoundOptions::default() };
            for k in 1..=4 {
                for i in 0..5 {
                    let got = bound_terms(&t, &tt, &h, &ht, k, i, &opts).unwrap();
                    let want = oracle(&t, &tt, &h, &ht, k, i, linear);
                    assert_eq!(got.lhs, want.lhs);
                    for (x, y) in [(got.e1, want.e1), (got.e2, want.e2), (got.rhs, want.rhs)] {
                        worst = worst.max(rel(x, y));
                    }
                    assert_eq!(got.margin, got.rhs - got.lhs);
                    assert!(got.e1 >= 0.0 && got.e2 >= 0.0 && got.rhs >= 0.0);
                }
            }
        }
    }
    assert!(worst < 1e-10, "worst relative disagreement {worst:e}");
}

#[test]
fn corollary_matches_transcription() {
    let sys = SystemConfig::default().with_m(6);
    let pert = PerturbationSpec { tau: 1.0, eps: 0.005, seed: 3 };
    for seed in 0..10 {
        let mut rng = stream(1000 + seed);
        let w = UwmmseWeights::init_random(1, 8, ModelMode::default(), &mut rng);
        let h = sample_channel(&sys, &mut rng).unwrap();
        let ht = apply_perturbation(&h, &pert.draw(6, seed as usize).unwrap()).unwrap();
        let (t, tt) = traces(&w, &h, &ht, &sys);
        for i in 0..6 {
            let got = corollary_terms(&t, &tt, &h, &ht, i, &BoundOptions::default()).unwrap();
            let want = oracle(&t, &tt, &h, &ht, 1, i, false);
            assert!(rel(got.e1, want.e1) < 1e-10 && rel(got.e2, want.e2) < 1e-10);
            assert!(rel(got.rhs, want.rhs) < 1e-10);
        }
    }
}

#[test]
fn first_layer_reduces_to_head_variation() {
    // Zero-initialized heads, perturbation only moves a through the GCN input.
    let sys = SystemConfig::default().with_m(5);
    let mut rng = stream(77);
    let w = UwmmseWeights::init_random(2, 8, ModelMode::default(), &mut rng);
    let h = sample_channel(&sys, &mut rng).unwrap();
    let ht = apply_perturbation(&h, &PerturbationSpec { tau: 1.0, eps: 0.005, seed: 1 }.draw(5, 0).unwrap()).unwrap();
    let (t, tt) = traces(&w, &h, &ht, &sys);
    for i in 0..5 {
        let du: f64 = (0..5).map(|j| h.h(i, j).powi(2) * sys.p_max).sum();
        let want = h.h(i, i).powi(4) * sys.p_max.powf(1.5) / (du * du) * (t.layer(1).a[i] - tt.layer(1).a[i]).abs();
        let got = bound_terms(&t, &tt, &h, &ht, 1, i, &BoundOptions::default()).unwrap();
        assert!(rel(got.e1, want) < 1e-12, "{} vs {}", got.e1, want);
    }
}

#[test]
fn campaign_aggregates_match_recomputation() {
    let sys = SystemConfig::default().with_m(5);
    let w = UwmmseWeights::init_random(4, 8, ModelMode::default(), &mut stream(9));
    let data = sample_dataset(&sys, 10, 123).unwrap();
    let pert = PerturbationSpec { tau: 1.0, eps: 0.005, seed: 55 };
    let spec = HistogramSpec::default();
    let report = validate(&w, &data, &pert, &sys, &BoundOptions::default(), &spec).unwrap();

    let mut hist = Histogram::with_edges(spec.edges()).unwrap();
    let (mut n, mut viol, mut below, mut above) = (0u64, 0u64, 0u64, 0u64);
    let mut max_delta = 0.0_f64;
    for (s, h) in data.iter().enumerate() {
        let ht = apply_perturbation(h, &pert.draw(5, s).unwrap()).unwrap();
        let (t, tt) = traces(&w, h, &ht, &sys);
        for k in 1..=4 {
            for i in 0..5 {
                max_delta = max_delta.max((t.layer(k).a[i] - tt.layer(k).a[i]).abs());
                let o = oracle(&t, &tt, h, &ht, k, i, false);
                let margin = o.rhs - o.lhs;
                n += 1;
                hist.add(margin);
                viol += (margin < 0.0) as u64;
                below += (margin < 0.5) as u64;
                above += (margin > 2.0) as u64;
            }
        }
    }
    assert_eq!(report.total_entries, 200);
    assert_eq!(report.degenerate_entries, 0);
    assert_eq!(report.valid_entries, n);
    assert_eq!(report.violations, viol);
    assert_eq!(report.violation_rate, viol as f64 / n as f64);
    assert_eq!(report.fraction_margin_below_half, below as f64 / n as f64);
    assert_eq!(report.fraction_margin_above_two, above as f64 / n as f64);
    assert_eq!(report.histogram, hist);
    assert_eq!(report.histogram.total() + report.degenerate_entries, report.total_entries);
    assert!(rel(report.max_head_ratio.unwrap(), max_delta / 0.005) < 1e-15);
}

#[test]
fn zero_perturbation_gives_zero_margins() {
    let sys = SystemConfig::default().with_m(8);
    let w = UwmmseWeights::init_random(4, 8, ModelMode::default(), &mut stream(4));
    let data = sample_dataset(&sys, 5, 8).unwrap();
    let pert = PerturbationSpec { tau: 1.0, eps: 0.0, seed: 1 };
    for opts in [BoundOptions::default(), BoundOptions { include_linear: true, du_with_noise: true }] {
        let r = validate(&w, &data, &pert, &sys, &opts, &HistogramSpec::default()).unwrap();
        assert_eq!(r.violations, 0);
        assert_eq!(r.violation_rate, 0.0);
        assert!(r.entries.iter().all(|e| e.lhs == 0.0 && e.rhs == 0.0 && e.margin == 0.0));
        assert_eq!(r.max_head_ratio, None);
    }
}

#[test]
fn linear_terms_grow_with_epsilon() {
    // Fixed direction: same seed, τ and ε scaled together.
    let sys = SystemConfig::default().with_m(10);
    let w = UwmmseWeights::init_random(4, 8, ModelMode::default(), &mut stream(21));
    let h = sample_channel(&sys, &mut stream(22)).unwrap();
    let opts = BoundOptions { include_linear: true, ..BoundOptions::default() };
    for s in 0..5 {
        let p1 = PerturbationSpec { tau: 1.0, eps: 0.005, seed: s };
        let p2 = PerturbationSpec { tau: 2.0, eps: 0.01, seed: s };
        let e1 = p1.draw(10, 0).unwrap();
        let e2 = p2.draw(10, 0).unwrap();
        assert_eq!(e2.e, e1.scaled(2.0).e);
        let h1 = apply_perturbation(&h, &e1).unwrap();
        let h2 = apply_perturbation(&h, &e2).unwrap();
        let (t, t1) = traces(&w, &h, &h1, &sys);
        let (_, t2) = traces(&w, &h, &h2, &sys);
        for k in 1..=4 {
            for i in 0..10 {
                let a = bound_terms(&t, &t1, &h, &h1, k, i, &opts).unwrap();
                let b = bound_terms(&t, &t2, &h, &h2, k, i, &opts).unwrap();
                assert!(b.e1_linear >= a.e1_linear && b.e2_linear >= a.e2_linear, "k={k} i={i}");
            }
        }
    }
}
