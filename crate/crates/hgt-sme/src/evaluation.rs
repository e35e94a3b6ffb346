//! Posterior summaries, prediction-error metrics, information criteria,
//! and standard-error-reduction reports.
//!
//! DIC and WAIC evaluate the data-model likelihood at the fitted
//! structured mean (Wb + Sd + Mh per retained draw) mapped through the
//! inverse link: Gaussian mean, Poisson log-mean, Binomial
//! logit-probability. Evaluating at the transformed-response draws
//! themselves would be uninformative here, because their conditional does
//! not depend on the downstream model structure; including the fine-scale
//! term lets every model track the per-sweep transformation noise, which
//! inflates the penalty and drowns the model differences the criteria are
//! meant to rank.

use nalgebra::DVector;
use serde::Serialize;
use statrs::function::gamma::ln_gamma;

use crate::areal::{Dataset, ResponseBlock, ResponseKind};
use crate::error::{Error, Result};
use crate::hgt::StackLayout;
use crate::sampler::ChainOutput;

/// Summary statistics for one scalar parameter or one area.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ParamSummary {
    pub mean: f64,
    pub sd: f64,
    pub q2_5: f64,
    pub median: f64,
    pub q97_5: f64,
}

/// Linear-interpolation quantile of an already sorted slice.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Mean, sd, and equal-tailed 95% interval of a scalar series.
pub fn summarize(series: &[f64]) -> Result<ParamSummary> {
    if series.is_empty() {
        return Err(Error::Domain("cannot summarize an empty series".into()));
    }
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let var = series.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let mut sorted = series.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(ParamSummary {
        mean,
        sd: var.max(0.0).sqrt(),
        q2_5: quantile_sorted(&sorted, 0.025),
        median: quantile_sorted(&sorted, 0.5),
        q97_5: quantile_sorted(&sorted, 0.975),
    })
}

/// Per-coordinate summaries of a series of equal-length vectors.
pub fn summarize_vectors(draws: &[DVector<f64>]) -> Result<Vec<ParamSummary>> {
    if draws.is_empty() {
        return Err(Error::Domain("cannot summarize an empty chain".into()));
    }
    let dim = draws[0].len();
    let mut out = Vec::with_capacity(dim);
    let mut series = vec![0.0; draws.len()];
    for i in 0..dim {
        for (t, d) in draws.iter().enumerate() {
            series[t] = d[i];
        }
        out.push(summarize(&series)?);
    }
    Ok(out)
}

/// Prediction-error metrics.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Metrics {
    pub rmse: f64,
    pub mse: f64,
    pub mae: f64,
}

pub fn metrics(actual: &DVector<f64>, predicted: &DVector<f64>) -> Result<Metrics> {
    if actual.len() != predicted.len() {
        return Err(Error::Domain(format!(
            "metrics length mismatch: actual {} vs predicted {}",
            actual.len(),
            predicted.len()
        )));
    }
    if actual.is_empty() {
        return Err(Error::Domain("metrics on empty vectors".into()));
    }
    let n = actual.len() as f64;
    let mut mse = 0.0;
    let mut mae = 0.0;
    for i in 0..actual.len() {
        let e = actual[i] - predicted[i];
        mse += e * e;
        mae += e.abs();
    }
    mse /= n;
    mae /= n;
    Ok(Metrics {
        rmse: mse.sqrt(),
        mse,
        mae,
    })
}

/// log(mean(exp(x))) with a max shift for numerical stability.
pub fn log_mean_exp(values: &[f64]) -> f64 {
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = values.iter().map(|v| (v - m).exp()).sum();
    m + (s / values.len() as f64).ln()
}

fn ln_choose(n: f64, k: f64) -> f64 {
    ln_gamma(n + 1.0) - ln_gamma(k + 1.0) - ln_gamma(n - k + 1.0)
}

/// log(1 + e^x) without overflow.
fn ln1p_exp(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Log-likelihood of one observation given its latent mean on the
/// transformed scale.
fn loglik_one(kind: ResponseKind, z: f64, mu: f64, gaussian_variance: f64, trials: f64) -> f64 {
    match kind {
        ResponseKind::Gaussian => {
            let e = z - mu;
            -0.5 * (2.0 * std::f64::consts::PI * gaussian_variance).ln()
                - e * e / (2.0 * gaussian_variance)
        }
        // mu is the log rate
        ResponseKind::Poisson => z * mu - mu.exp() - ln_gamma(z + 1.0),
        // mu is the logit success probability
        ResponseKind::Binomial => ln_choose(trials, z) + z * mu - trials * ln1p_exp(mu),
    }
}

/// Pointwise log-likelihood of every stacked observation at one latent
/// mean vector.
pub fn pointwise_loglik(
    blocks: &[ResponseBlock],
    layout: StackLayout,
    mu: &DVector<f64>,
) -> Result<DVector<f64>> {
    if blocks.len() != layout.n_blocks || mu.len() != layout.len() {
        return Err(Error::Domain(
            "pointwise_loglik: blocks/layout/mean dimensions disagree".into(),
        ));
    }
    let mut out = DVector::zeros(mu.len());
    for (j, block) in blocks.iter().enumerate() {
        for i in 0..layout.n_areas {
            let idx = layout.position(j, i);
            let trials = block.trials.as_ref().map(|t| t[i] as f64).unwrap_or(0.0);
            out[idx] = loglik_one(
                block.kind,
                block.values[i],
                mu[idx],
                block.gaussian_variance,
                trials,
            );
        }
    }
    Ok(out)
}

/// Which effective-parameter form DIC uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PdVariant {
    /// p_D = mean deviance minus deviance at the posterior mean.
    MeanDeviance,
    /// p_D = half the variance of the deviance over draws.
    HalfVariance,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct DicResult {
    pub dic: f64,
    pub p_d: f64,
    pub mean_deviance: f64,
    pub deviance_at_mean: f64,
}

/// DIC from per-draw pointwise log-likelihood matrices plus the pointwise
/// log-likelihood at the posterior-mean latent mean.
pub fn dic_from_loglik(
    per_draw: &[DVector<f64>],
    at_mean: &DVector<f64>,
    variant: PdVariant,
) -> Result<DicResult> {
    if per_draw.len() < 2 {
        return Err(Error::Domain("dic needs at least 2 retained draws".into()));
    }
    let deviances: Vec<f64> = per_draw.iter().map(|ll| -2.0 * ll.sum()).collect();
    let mean_deviance = deviances.iter().sum::<f64>() / deviances.len() as f64;
    let deviance_at_mean = -2.0 * at_mean.sum();
    let p_d = match variant {
        PdVariant::MeanDeviance => mean_deviance - deviance_at_mean,
        PdVariant::HalfVariance => {
            let var = deviances
                .iter()
                .map(|d| (d - mean_deviance) * (d - mean_deviance))
                .sum::<f64>()
                / (deviances.len() - 1) as f64;
            0.5 * var
        }
    };
    Ok(DicResult {
        dic: mean_deviance + p_d,
        p_d,
        mean_deviance,
        deviance_at_mean,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct WaicResult {
    pub waic: f64,
    pub p_waic: f64,
    pub lppd: f64,
}

/// WAIC from per-draw pointwise log-likelihoods: lppd via log-mean-exp,
/// penalty as the summed per-observation variance of the log-likelihood.
pub fn waic_from_loglik(per_draw: &[DVector<f64>]) -> Result<WaicResult> {
    if per_draw.len() < 2 {
        return Err(Error::Domain("waic needs at least 2 retained draws".into()));
    }
    let t = per_draw.len();
    let dim = per_draw[0].len();
    let mut lppd = 0.0;
    let mut p_waic = 0.0;
    let mut series = vec![0.0; t];
    for i in 0..dim {
        for (s, ll) in per_draw.iter().enumerate() {
            series[s] = ll[i];
        }
        lppd += log_mean_exp(&series);
        let mean = series.iter().sum::<f64>() / t as f64;
        p_waic += series.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (t - 1) as f64;
    }
    Ok(WaicResult {
        waic: -2.0 * (lppd - p_waic),
        p_waic,
        lppd,
    })
}

fn chain_logliks(chain: &ChainOutput, dataset: &Dataset) -> Result<Vec<DVector<f64>>> {
    if chain.smooth_mean.is_empty() {
        return Err(Error::Domain("empty chain".into()));
    }
    chain
        .smooth_mean
        .iter()
        .map(|mu| pointwise_loglik(&dataset.responses, chain.layout, mu))
        .collect()
}

/// DIC of a fitted chain against its dataset.
pub fn dic(chain: &ChainOutput, dataset: &Dataset, variant: PdVariant) -> Result<DicResult> {
    let lls = chain_logliks(chain, dataset)?;
    let t = chain.smooth_mean.len() as f64;
    let mut mean_mu = DVector::zeros(chain.smooth_mean[0].len());
    for mu in &chain.smooth_mean {
        mean_mu += mu;
    }
    mean_mu /= t;
    let at_mean = pointwise_loglik(&dataset.responses, chain.layout, &mean_mu)?;
    dic_from_loglik(&lls, &at_mean, variant)
}

/// WAIC of a fitted chain against its dataset.
pub fn waic(chain: &ChainOutput, dataset: &Dataset) -> Result<WaicResult> {
    waic_from_loglik(&chain_logliks(chain, dataset)?)
}

/// Percentage reduction in standard error per area:
/// 100 * (direct - model) / direct. Negative values mean the model did
/// worse than the direct estimate.
pub fn se_reduction(direct_se: &DVector<f64>, model_se: &DVector<f64>) -> Result<DVector<f64>> {
    if direct_se.len() != model_se.len() {
        return Err(Error::Domain("se_reduction length mismatch".into()));
    }
    if direct_se.iter().any(|v| *v <= 0.0) {
        return Err(Error::Domain("direct standard errors must be positive".into()));
    }
    Ok(DVector::from_fn(direct_se.len(), |i, _| {
        100.0 * (direct_se[i] - model_se[i]) / direct_se[i]
    }))
}
