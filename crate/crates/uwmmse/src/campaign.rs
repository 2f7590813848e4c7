//! Parallel campaigns: bound validation, training and method comparison.
//!
//! Work fans out per sample; every reduction runs sequentially in sample
//! order afterwards, so results do not depend on the worker count.

use rayon::prelude::*;
use rayon::ThreadPool;
use serde::{Deserialize, Serialize};
use uwmmse_core::channel::{apply_perturbation, sum_rate, ChannelMatrix, PowerAllocation, SystemConfig};
use uwmmse_core::neural::{mlp_allocate, MlpParams};
use uwmmse_core::optim::{train_with, Trainable, TrainConfig, TrainOutcome};
use uwmmse_core::stability::{
    normalized_variation, sample_bounds, BoundOptions, BoundReport, HistogramSpec, PerturbationSpec,
};
use uwmmse_core::uwmmse::forward;
use uwmmse_core::wmmse::{truncated_wmmse, wmmse_solve};
use uwmmse_core::{Error, UwmmseWeights};

use crate::error::{Result, RunError};
use crate::stats::Summary;

pub fn pool(jobs: usize) -> Result<ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| RunError::Config(format!("cannot start {jobs} workers: {e}")))
}

pub fn validate_parallel(
    pool: &ThreadPool,
    weights: &UwmmseWeights,
    dataset: &[ChannelMatrix],
    pert: &PerturbationSpec,
    sys: &SystemConfig,
    opts: &BoundOptions,
    hist: &HistogramSpec,
) -> Result<BoundReport> {
    let samples = pool.install(|| {
        dataset
            .par_iter()
            .enumerate()
            .map(|(n, h)| sample_bounds(weights, h, n, pert, sys, opts))
            .collect::<uwmmse_core::Result<Vec<_>>>()
    })?;
    Ok(BoundReport::aggregate(samples, pert.eps, hist)?)
}

/// Batch-mean loss and gradient with per-sample work in parallel. Sums run
/// in batch order, so the result equals [`uwmmse_core::optim::batch_mean`]
/// bitwise. Call from inside the pool.
pub fn parallel_batch_mean<T: Trainable + Sync>(
    model: &T,
    batch: &[&ChannelMatrix],
    sys: &SystemConfig,
) -> uwmmse_core::Result<(f64, Vec<f64>)> {
    let parts = batch
        .par_iter()
        .map(|h| model.sample_loss_grad(h, sys))
        .collect::<uwmmse_core::Result<Vec<_>>>()?;
    let mut iter = parts.into_iter();
    let (mut total, mut grad) = iter.next().ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    for (l, g) in iter {
        total += l;
        grad.iter_mut().zip(&g).for_each(|(x, y)| *x += y);
    }
    let scale = 1.0 / batch.len() as f64;
    grad.iter_mut().for_each(|x| *x *= scale);
    Ok((total * scale, grad))
}

pub fn train_parallel<T: Trainable + Sync + Send>(
    pool: &ThreadPool,
    dataset: &[ChannelMatrix],
    init: &T,
    tc: &TrainConfig,
    sys: &SystemConfig,
) -> Result<TrainOutcome<T>> {
    Ok(pool.install(|| train_with(dataset, init, tc, sys, parallel_batch_mean))?)
}

/// A power-allocation method under comparison.
#[derive(Debug, Clone)]
pub enum Method {
    Uwmmse(UwmmseWeights),
    Mlp(MlpParams),
    /// WMMSE stopped after exactly this many iterations.
    TruncatedWmmse(usize),
    Wmmse { iters: usize, tol: f64 },
}

impl Method {
    pub fn allocate(&self, h: &ChannelMatrix, sys: &SystemConfig) -> uwmmse_core::Result<PowerAllocation> {
        match self {
            Self::Uwmmse(w) => Ok(forward(h, w, sys, false)?.0),
            Self::Mlp(p) => mlp_allocate(h, p, sys.p_max),
            Self::TruncatedWmmse(k) => truncated_wmmse(h, sys, *k),
            Self::Wmmse { iters, tol } => Ok(wmmse_solve(h, sys, *iters, *tol)?.allocation),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub name: String,
    /// Clean-input sum-rate.
    pub sum_rate: Summary,
    /// Over samples with a nonzero clean allocation.
    pub variation: Option<Summary>,
    /// Samples whose clean allocation is zero, excluded from `variation`.
    pub undefined_variation: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub samples: usize,
    pub methods: Vec<MethodSummary>,
    /// `rows[sample][method]` = (clean sum-rate, normalized variation).
    #[serde(skip)]
    pub rows: Vec<Vec<(f64, Option<f64>)>>,
}

impl ComparisonReport {
    pub fn method(&self, name: &str) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.name == name)
    }
}

fn sample_row(
    methods: &[(String, Method)],
    h: &ChannelMatrix,
    n: usize,
    pert: &PerturbationSpec,
    sys: &SystemConfig,
) -> uwmmse_core::Result<Vec<(f64, Option<f64>)>> {
    // Every method sees the same E, drawn from the sample index.
    let h_t = apply_perturbation(h, &pert.draw(h.m(), n)?)?;
    methods
        .iter()
        .map(|(_, m)| {
            let p = m.allocate(h, sys)?;
            let p_t = m.allocate(&h_t, sys)?;
            let rate = sum_rate(h, &p, sys.sigma2)?.total;
            let var = match normalized_variation(&p, &p_t) {
                Ok(v) => Some(v),
                Err(Error::UndefinedMetric) => None,
                Err(e) => return Err(e),
            };
            Ok((rate, var))
        })
        .collect()
}

pub fn compare(
    pool: &ThreadPool,
    methods: &[(String, Method)],
    dataset: &[ChannelMatrix],
    pert: &PerturbationSpec,
    sys: &SystemConfig,
) -> Result<ComparisonReport> {
    if methods.is_empty() || dataset.is_empty() {
        return Err(RunError::Config("comparison needs at least one method and one sample".into()));
    }
    let rows = pool.install(|| {
        dataset
            .par_iter()
            .enumerate()
            .map(|(n, h)| sample_row(methods, h, n, pert, sys))
            .collect::<uwmmse_core::Result<Vec<_>>>()
    })?;
    let summaries = methods
        .iter()
        .enumerate()
        .map(|(j, (name, _))| {
            let rates: Vec<f64> = rows.iter().map(|r| r[j].0).collect();
            let vars: Vec<f64> = rows.iter().filter_map(|r| r[j].1).collect();
            MethodSummary {
                name: name.clone(),
                sum_rate: Summary::of(&rates).expect("nonempty dataset"),
                variation: Summary::of(&vars),
                undefined_variation: rows.len() - vars.len(),
            }
        })
        .collect();
    Ok(ComparisonReport { samples: dataset.len(), methods: summaries, rows })
}

/// Clean-input sum-rate summary per method.
pub fn evaluate(
    pool: &ThreadPool,
    methods: &[(String, Method)],
    dataset: &[ChannelMatrix],
    sys: &SystemConfig,
) -> Result<Vec<(String, Summary)>> {
    if dataset.is_empty() {
        return Err(RunError::Config("evaluation dataset is empty".into()));
    }
    methods
        .iter()
        .map(|(name, m)| {
            let rates = pool.install(|| {
                dataset
                    .par_iter()
                    .map(|h| Ok(sum_rate(h, &m.allocate(h, sys)?, sys.sigma2)?.total))
                    .collect::<uwmmse_core::Result<Vec<f64>>>()
            })?;
            Ok((name.clone(), Summary::of(&rates).expect("nonempty dataset")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use uwmmse_core::channel::sample_dataset;
    use uwmmse_core::optim::{batch_mean, train};
    use uwmmse_core::rng::stream;
    use uwmmse_core::stability::validate;
    use uwmmse_core::ModelMode;

    fn small() -> (SystemConfig, Vec<ChannelMatrix>, UwmmseWeights) {
        let sys = SystemConfig::default().with_m(6);
        let data = sample_dataset(&sys, 12, 3).unwrap();
        let w = UwmmseWeights::init_random(2, 8, ModelMode::default(), &mut stream(4));
        (sys, data, w)
    }

    #[test]
    fn parallel_batch_matches_sequential_bitwise() {
        let (sys, data, w) = small();
        let batch: Vec<&ChannelMatrix> = data.iter().collect();
        let pool = pool(3).unwrap();
        let par = pool.install(|| parallel_batch_mean(&w, &batch, &sys)).unwrap();
        assert_eq!(par, batch_mean(&w, &batch, &sys).unwrap());
        let tc = TrainConfig { epochs: 2, batch_size: 5, ..Default::default() };
        let a = train_parallel(&pool, &data, &w, &tc, &sys).unwrap();
        let b = train(&data, &w, &tc, &sys).unwrap();
        assert_eq!(a.loss_history, b.loss_history);
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn parallel_validation_matches_sequential() {
        let (sys, data, w) = small();
        let pert = PerturbationSpec { tau: 1.0, eps: 0.01, seed: 9 };
        let (opts, hist) = (BoundOptions::default(), HistogramSpec::default());
        let seq = validate(&w, &data, &pert, &sys, &opts, &hist).unwrap();
        for jobs in [1, 4] {
            let par = validate_parallel(&pool(jobs).unwrap(), &w, &data, &pert, &sys, &opts, &hist).unwrap();
            assert_eq!(par, seq);
            assert_eq!(par.entries, seq.entries);
        }
    }

    #[test]
    fn comparison_is_independent_of_worker_count() {
        let (sys, data, w) = small();
        let pert = PerturbationSpec { tau: 1.0, eps: 0.01, seed: 9 };
        let methods = vec![
            ("UWMMSE".to_string(), Method::Uwmmse(w)),
            ("Tr-WMMSE".to_string(), Method::TruncatedWmmse(2)),
        ];
        let a = compare(&pool(1).unwrap(), &methods, &data, &pert, &sys).unwrap();
        let b = compare(&pool(4).unwrap(), &methods, &data, &pert, &sys).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows, b.rows);
        assert_eq!(a.method("Tr-WMMSE").unwrap().sum_rate.count, data.len());
    }
}
