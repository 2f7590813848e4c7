//! Distributional checks of the channel sampler and independent references
//! for the classic solver.

use rand::Rng;
use uwmmse_core::channel::{
    build_channel, sample_channel, sample_perturbation, sample_topology, sum_rate, ChannelMatrix, PowerAllocation,
};
use uwmmse_core::rng::{stream, substream};
use uwmmse_core::wmmse::{mse_objective, wmmse_solve, wmmse_step, WmmseState};
use uwmmse_core::{Matrix, SystemConfig};

/// One-sample Kolmogorov–Smirnov statistic against a continuous CDF.
fn ks_statistic(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(k, &x)| {
            let f = cdf(x);
            (f - k as f64 / n).abs().max(((k + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic 1% critical value.
fn ks_critical_1pct(n: usize) -> f64 {
    1.6276 / (n as f64).sqrt()
}

#[test]
fn topology_coordinates_are_uniform() {
    let topo = sample_topology(1000, 1.0, 0.1, &mut stream(2024)).unwrap();
    for axis in 0..2 {
        for pts in [&topo.tx, &topo.rx] {
            let xs: Vec<f64> = pts.iter().map(|p| p[axis]).collect();
            let d = ks_statistic(xs, |x| x.clamp(0.0, 1.0));
            assert!(d < ks_critical_1pct(1000), "axis {axis}: D = {d}");
        }
    }
}

#[test]
fn degenerate_square_collapses_to_origin() {
    let topo = sample_topology(1, 0.0, 0.1, &mut stream(5)).unwrap();
    assert_eq!((topo.tx[0], topo.rx[0]), ([0.0, 0.0], [0.0, 0.0]));
    assert_eq!(topo.distance(0, 0), 0.1);
    assert!(sample_topology(0, 1.0, 0.1, &mut stream(5)).is_err());
}

#[test]
fn fading_is_rayleigh() {
    for scale in [1.0, 0.5] {
        let cfg = SystemConfig { fading_scale: scale, ..SystemConfig::default() };
        let mut rng = stream(99);
        let mut draws = Vec::with_capacity(100_000);
        while draws.len() < 100_000 {
            let topo = sample_topology(cfg.m, cfg.side_length, cfg.min_distance, &mut rng).unwrap();
            let h = build_channel(&topo, &cfg, &mut rng);
            for i in 0..cfg.m {
                for j in 0..cfg.m {
                    draws.push(h.h(i, j) * topo.distance(i, j));
                }
            }
        }
        draws.truncate(100_000);
        let d = ks_statistic(draws, |x| 1.0 - (-x * x / (2.0 * scale * scale)).exp());
        assert!(d < ks_critical_1pct(100_000), "scale {scale}: D = {d}");
    }
}

#[test]
fn channel_entries_are_positive_and_deterministic() {
    let cfg = SystemConfig::default();
    let a = sample_channel(&cfg, &mut substream(7, 3)).unwrap();
    let b = sample_channel(&cfg, &mut substream(7, 3)).unwrap();
    assert_eq!(a, b);
    assert!(a.matrix().as_slice().iter().all(|&x| x > 0.0 && x.is_finite()));
}

#[test]
fn full_scale_perturbation_saturates() {
    let mut rng = stream(1);
    let mut saturated = 0usize;
    let mut total = 0usize;
    for _ in 0..100 {
        let e = sample_perturbation(20, 1.0, 0.005, &mut rng).unwrap();
        for &x in e.e.as_slice() {
            assert!(x.abs() <= 0.005);
            saturated += (x.abs() == 0.005) as usize;
            total += 1;
        }
    }
    // P(|N(0,1)| <= 0.005) = erf(0.005 / √2) ≈ 0.00399.
    assert!(saturated as f64 / total as f64 >= 0.99, "{saturated}/{total}");
}

#[test]
fn unclipped_perturbation_moments() {
    let e = sample_perturbation(1000, 1.0, 1e9, &mut stream(31)).unwrap();
    let xs = e.e.as_slice();
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    // Standard errors: 1/√n for the mean, √(2/n) for the variance.
    assert!(mean.abs() < 3.0 / n.sqrt(), "mean {mean}");
    assert!((var - 1.0).abs() < 3.0 * (2.0 / n).sqrt(), "var {var}");
}

#[test]
fn perturbation_rejects_bad_parameters() {
    assert!(sample_perturbation(3, 1.0, 0.0, &mut stream(0)).is_err());
    assert!(sample_perturbation(3, 0.0, 0.1, &mut stream(0)).is_err());
}

/// Block updates of the surrogate, written directly from the closed forms.
mod blocks {
    use super::ChannelMatrix;

    pub fn update_u(h: &ChannelMatrix, v: &[f64], sigma2: f64) -> Vec<f64> {
        let m = h.m();
        (0..m)
            .map(|i| {
                let den: f64 = sigma2 + (0..m).map(|j| h.h(i, j).powi(2) * v[j].powi(2)).sum::<f64>();
                if den == 0.0 { 0.0 } else { h.h(i, i) * v[i] / den }
            })
            .collect()
    }

    pub fn update_w(h: &ChannelMatrix, u: &[f64], v: &[f64]) -> Vec<f64> {
        (0..h.m()).map(|i| 1.0 / (1.0 - u[i] * h.h(i, i) * v[i])).collect()
    }

    pub fn update_v(h: &ChannelMatrix, u: &[f64], w: &[f64], p_max: f64) -> Vec<f64> {
        let m = h.m();
        (0..m)
            .map(|i| {
                let num = u[i] * h.h(i, i) * w[i];
                let den: f64 = (0..m).map(|j| h.h(j, i).powi(2) * u[j].powi(2) * w[j]).sum();
                if num == 0.0 && den == 0.0 { 0.0 } else { (num / den).clamp(0.0, p_max.sqrt()) }
            })
            .collect()
    }

    pub fn objective(h: &ChannelMatrix, u: &[f64], w: &[f64], v: &[f64], sigma2: f64) -> f64 {
        let m = h.m();
        (0..m)
            .map(|i| {
                let interference: f64 =
                    (0..m).filter(|&j| j != i).map(|j| u[i].powi(2) * h.h(i, j).powi(2) * v[j].powi(2)).sum();
                let e = (1.0 - u[i] * h.h(i, i) * v[i]).powi(2) + sigma2 * u[i].powi(2) + interference;
                w[i] * e - w[i].ln()
            })
            .sum()
    }
}

#[test]
fn each_half_step_does_not_increase_the_objective() {
    for seed in 0..200 {
        let cfg = SystemConfig::default().with_m(5);
        let h = sample_channel(&cfg, &mut stream(seed)).unwrap();
        let mut v = vec![1.0; 5];
        let mut u = blocks::update_u(&h, &v, cfg.sigma2);
        let mut w = blocks::update_w(&h, &u, &v);
        for _ in 0..10 {
            let f0 = blocks::objective(&h, &u, &w, &v, cfg.sigma2);
            let v_next = blocks::update_v(&h, &u, &w, cfg.p_max);
            let f1 = blocks::objective(&h, &u, &w, &v_next, cfg.sigma2);
            let u_next = blocks::update_u(&h, &v_next, cfg.sigma2);
            let f2 = blocks::objective(&h, &u_next, &w, &v_next, cfg.sigma2);
            let w_next = blocks::update_w(&h, &u_next, &v_next);
            let f3 = blocks::objective(&h, &u_next, &w_next, &v_next, cfg.sigma2);
            let tol = 1e-9 * f0.abs().max(1.0);
            assert!(f1 <= f0 + tol && f2 <= f1 + tol && f3 <= f2 + tol, "seed {seed}: {f0} {f1} {f2} {f3}");

            // The library step from v_next reproduces the block sequence.
            let step = wmmse_step(&h, &v_next, cfg.sigma2, cfg.p_max).unwrap();
            let v_lib = blocks::update_v(&h, &u_next, &w_next, cfg.p_max);
            for i in 0..5 {
                assert!((step.u[i] - u_next[i]).abs() <= 1e-12 * u_next[i].abs().max(1.0));
                // w = 1/gap amplifies rounding in the gap by w².
                assert!((step.w[i] - w_next[i]).abs() <= 1e-13 * w_next[i].powi(2).max(1.0));
                assert!((step.v[i] - v_lib[i]).abs() <= 1e-12);
            }
            let lib_obj = mse_objective(
                &h,
                &WmmseState { u: u_next.clone(), w: w_next.clone(), v: v_next.clone() },
                cfg.sigma2,
            )
            .unwrap();
            assert!((lib_obj - f3).abs() <= 1e-12 * f3.abs().max(1.0));
            (u, w, v) = (u_next, w_next, v_next);
        }
    }
}

#[test]
fn full_iterations_are_monotone() {
    let cfg = SystemConfig::default().with_m(10);
    for seed in 0..100 {
        let h = sample_channel(&cfg, &mut stream(500 + seed)).unwrap();
        let sol = wmmse_solve(&h, &cfg, 100, 0.0).unwrap();
        for w in sol.objective_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "seed {seed}: {} -> {}", w[0], w[1]);
        }
    }
}

/// Best sum-rate over the uniform 201×201 grid on `[0, p_max]²`.
fn grid_optimum(h: &ChannelMatrix, sigma2: f64, p_max: f64) -> f64 {
    let mut best = 0.0_f64;
    for a in 0..=200 {
        for b in 0..=200 {
            let p = [a as f64 / 200.0 * p_max, b as f64 / 200.0 * p_max];
            let sinr = |i: usize| h.h(i, i).powi(2) * p[i] / (sigma2 + h.h(i, 1 - i).powi(2) * p[1 - i]);
            best = best.max((1.0 + sinr(0)).log2() + (1.0 + sinr(1)).log2());
        }
    }
    best
}

#[test]
fn symmetric_two_user_instance_stays_symmetric() {
    // Symmetric H from a symmetric start keeps v1 = v2 at every iterate, so
    // the solver settles on the best symmetric point (full power) while the
    // grid optimum serves a single link.
    let h = ChannelMatrix::new(Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap()).unwrap();
    let cfg = SystemConfig { m: 2, sigma2: 0.1, ..SystemConfig::default() };
    let sol = wmmse_solve(&h, &cfg, 100, 1e-6).unwrap();
    assert_eq!(sol.allocation.p[0], sol.allocation.p[1]);
    let got = sum_rate(&h, &sol.allocation, cfg.sigma2).unwrap().total;
    let symmetric_best = 2.0 * (1.0 + 1.0 / 4.1_f64).log2();
    assert!((got - symmetric_best).abs() < 1e-9, "{got}");
    let best = grid_optimum(&h, cfg.sigma2, cfg.p_max);
    assert!((best - 11.0_f64.log2()).abs() < 1e-12);
}

#[test]
fn two_user_solutions_never_beat_the_grid() {
    let cfg = SystemConfig::default().with_m(2);
    for seed in 0..20 {
        let h = sample_channel(&cfg, &mut substream(4242, seed)).unwrap();
        let sol = wmmse_solve(&h, &cfg, 100, 1e-6).unwrap();
        let got = sum_rate(&h, &sol.allocation, cfg.sigma2).unwrap().total;
        let best = grid_optimum(&h, cfg.sigma2, cfg.p_max);
        // Grid spacing 1/200 bounds how far the continuous optimum can sit above it.
        assert!(got <= best * 1.01, "seed {seed}: {got} above grid optimum {best}");
    }
}

#[test]
fn single_user_uses_full_power() {
    let cfg = SystemConfig::default().with_m(1);
    let mut rng = stream(8);
    for _ in 0..20 {
        let h = sample_channel(&cfg, &mut rng).unwrap();
        let sol = wmmse_solve(&h, &cfg, 100, 1e-6).unwrap();
        assert_eq!(sol.allocation.p, vec![cfg.p_max]);
    }
    let h = ChannelMatrix::new(Matrix::from_fn(3, 3, |_, _| rng.random_range(0.5..1.5))).unwrap();
    let sol = wmmse_solve(&h, &cfg.with_m(3), 0, 1e-6).unwrap();
    assert_eq!(sol.allocation, PowerAllocation::full(3, cfg.p_max));
}

