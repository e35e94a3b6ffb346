//! Replicate-study harness: pseudo-data generators, forward simulation
//! from the generative model, and paired measurement-error vs. naive
//! comparison studies.
//!
//! A study holds a base table whose response values are the *true* base
//! quantities. Each replicate regenerates pseudo-responses
//! (`Z* ~ Poisson(base + 1)`, `Z* ~ Normal(log base, 1)`), fits both
//! models on the pseudo-data, maps the posterior structured mean to the
//! data scale, and scores it against the true means (`base + 1` for
//! Poisson blocks, `log base` for Gaussian blocks). Medians across
//! replicates mirror the usual reporting.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::areal::{
    ArealGraph, CarParams, Dataset, ErrorProneCovariate, FixedDesign, ResponseBlock, ResponseKind,
    Transform,
};
use crate::error::{Error, Result};
use crate::evaluation::{metrics, Metrics};
use crate::hgt::data_scale_estimate;
use crate::sampler::{run_gibbs_with, run_naive_with, ModelConfig, ModelContext};
use crate::spatial::car_precision;
use crate::stochastics::RngStream;

/// Pseudo-counts `Z* ~ Poisson(base + 1)` elementwise.
pub fn gen_poisson_pseudo(base_counts: &DVector<f64>, rng: &mut RngStream) -> Result<DVector<f64>> {
    let mut out = DVector::zeros(base_counts.len());
    for i in 0..base_counts.len() {
        if base_counts[i] < 0.0 {
            return Err(Error::Domain(format!(
                "gen_poisson_pseudo: negative base count {} at index {i}",
                base_counts[i]
            )));
        }
        out[i] = rng.draw_poisson(base_counts[i] + 1.0)? as f64;
    }
    Ok(out)
}

/// Pseudo-responses `Z* ~ Normal(log base, 1)` elementwise.
pub fn gen_gaussian_pseudo(base_values: &DVector<f64>, rng: &mut RngStream) -> Result<DVector<f64>> {
    let mut out = DVector::zeros(base_values.len());
    for i in 0..base_values.len() {
        if base_values[i] <= 0.0 {
            return Err(Error::Domain(format!(
                "gen_gaussian_pseudo: non-positive base value {} at index {i}",
                base_values[i]
            )));
        }
        out[i] = rng.draw_normal(base_values[i].ln(), 1.0)?;
    }
    Ok(out)
}

/// True parameters for forward simulation.
#[derive(Debug, Clone)]
pub struct TruthConfig {
    pub beta0: f64,
    /// Coefficients of the fixed design (first column is the intercept).
    pub delta0: Vec<f64>,
    pub rho: f64,
    pub sigma2_w: f64,
    pub sigma2_eta: f64,
    pub sigma2_xi: f64,
    pub tau2: f64,
    pub me_variance: f64,
    /// Response-block kinds (one latent field shared across blocks).
    pub kinds: Vec<ResponseKind>,
    pub r_fraction: f64,
    /// Trial totals for Binomial blocks.
    pub trials: u64,
    pub gaussian_variance: f64,
}

impl Default for TruthConfig {
    fn default() -> Self {
        TruthConfig {
            beta0: 1.0,
            delta0: vec![0.5, 0.3],
            rho: 0.99,
            sigma2_w: 1.0,
            sigma2_eta: 0.1,
            sigma2_xi: 0.05,
            tau2: 0.05,
            me_variance: 0.25,
            kinds: vec![ResponseKind::Gaussian],
            r_fraction: 0.95,
            trials: 50,
            gaussian_variance: 1.0,
        }
    }
}

/// Record of the simulated truth behind a synthetic dataset.
#[derive(Debug, Clone)]
pub struct Truth {
    pub w: DVector<f64>,
    pub beta0: f64,
    pub delta0: DVector<f64>,
    pub eta: DVector<f64>,
    pub xi: DVector<f64>,
    /// Structured mean Wb + Sd + Mh (no fine-scale, no noise), stacked.
    pub smooth_mean: DVector<f64>,
    /// Full latent mean including fine-scale variation, stacked.
    pub latent_mean: DVector<f64>,
    /// Transformed response actually used to generate the data, stacked.
    pub h: DVector<f64>,
}

/// Forward-simulate a dataset from the full generative model and return
/// it together with the truth record.
pub fn gen_synthetic_truth(
    graph: &ArealGraph,
    cfg: &TruthConfig,
    rng: &mut RngStream,
) -> Result<(Dataset, Truth)> {
    let n = graph.n_areas();
    let j = cfg.kinds.len();
    if j == 0 {
        return Err(Error::Config("gen_synthetic_truth: no response kinds".into()));
    }
    let q = cfg.delta0.len();
    if q == 0 {
        return Err(Error::Config("gen_synthetic_truth: empty delta0".into()));
    }

    // latent covariate field from the CAR prior
    let car = car_precision(graph, cfg.rho)?;
    let w = rng.draw_mvn_precision(
        &DVector::zeros(n),
        &(&car.base_precision / cfg.sigma2_w),
    )?;
    // observed error-prone covariate
    let mut x = DVector::zeros(n);
    for i in 0..n {
        x[i] = rng.draw_normal(w[i], cfg.me_variance)?;
    }
    // fixed design: intercept plus standard-normal columns
    let mut s = DMatrix::zeros(n, q);
    for i in 0..n {
        s[(i, 0)] = 1.0;
        for c in 1..q {
            s[(i, c)] = rng.draw_normal(0.0, 1.0)?;
        }
    }
    let names: Vec<String> = (0..q)
        .map(|c| if c == 0 { "intercept".into() } else { format!("s{c}") })
        .collect();

    let dataset_skeleton = |responses: Vec<ResponseBlock>| Dataset {
        graph: graph.clone(),
        area_ids: (0..n).map(|i| format!("area{i}")).collect(),
        responses,
        error_prone: vec![ErrorProneCovariate {
            name: "x".into(),
            observed: x.clone(),
            raw: x.clone(),
            me_variances: DVector::from_element(n, cfg.me_variance),
            transform: Transform::Identity,
            car: CarParams {
                rho: cfg.rho,
                ..CarParams::default()
            },
        }],
        fixed: FixedDesign {
            names: names.clone(),
            matrix: s.clone(),
        },
    };

    // placeholder responses so the context (and with it the basis built
    // from [X S]) can be constructed; the basis ignores response values
    let placeholder: Vec<ResponseBlock> = cfg
        .kinds
        .iter()
        .enumerate()
        .map(|(b, kind)| ResponseBlock {
            name: format!("y{b}"),
            kind: *kind,
            values: match kind {
                ResponseKind::Gaussian => DVector::zeros(n),
                _ => DVector::zeros(n),
            },
            gaussian_variance: cfg.gaussian_variance,
            trials: match kind {
                ResponseKind::Binomial => Some(vec![cfg.trials; n]),
                _ => None,
            },
        })
        .collect();
    let model_cfg = ModelConfig {
        rho: cfg.rho,
        r_fraction: cfg.r_fraction,
        ..Default::default()
    };
    let ctx = ModelContext::new(model_cfg, dataset_skeleton(placeholder.clone()))?;

    // structured effects on the stacked index
    let r = ctx.r();
    let mut eta = DVector::zeros(r);
    for i in 0..r {
        eta[i] = rng.draw_normal(0.0, cfg.sigma2_eta)?;
    }
    let n_star = j * n;
    let mut xi = DVector::zeros(n_star);
    for i in 0..n_star {
        xi[i] = rng.draw_normal(0.0, cfg.sigma2_xi)?;
    }
    let delta0 = DVector::from_vec(cfg.delta0.clone());
    let w_stack = {
        let mut v = DVector::zeros(n_star);
        for b in 0..j {
            v.rows_mut(b * n, n).copy_from(&w);
        }
        v
    };
    let s_stack = &ctx.s_stack;
    let smooth = &w_stack * cfg.beta0 + s_stack * &delta0 + &ctx.basis.basis * &eta;
    let latent = &smooth + &xi;
    let mut h = DVector::zeros(n_star);
    for i in 0..n_star {
        h[i] = rng.draw_normal(latent[i], cfg.tau2)?;
    }

    // responses from the data models given h
    let mut responses = placeholder;
    for (b, block) in responses.iter_mut().enumerate() {
        for i in 0..n {
            let hv = h[b * n + i];
            block.values[i] = match block.kind {
                ResponseKind::Gaussian => rng.draw_normal(hv, cfg.gaussian_variance)?,
                ResponseKind::Poisson => {
                    let rate = hv.exp().clamp(1e-12, 1e8);
                    rng.draw_poisson(rate)? as f64
                }
                ResponseKind::Binomial => {
                    let p = 1.0 / (1.0 + (-hv).exp());
                    let mut count = 0u64;
                    for _ in 0..cfg.trials {
                        if rng.uniform() < p {
                            count += 1;
                        }
                    }
                    count as f64
                }
            };
        }
    }

    let dataset = dataset_skeleton(responses);
    Ok((
        dataset,
        Truth {
            w,
            beta0: cfg.beta0,
            delta0,
            eta,
            xi,
            smooth_mean: smooth,
            latent_mean: latent,
            h,
        },
    ))
}

/// Which responses a bundled synthetic base table carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudyDesign {
    PoissonOnly,
    GaussianPoisson,
}

/// Build a synthetic base table on a rook lattice: CAR-correlated latent
/// covariate, count magnitudes in the hundreds-to-tens-of-thousands
/// range, a standard-normal fixed covariate, and an error-prone observed
/// covariate with constant known error variance.
///
/// Response `values` hold the true base quantities that `run_study`
/// perturbs per replicate.
pub fn synthetic_base_table(
    rows: usize,
    cols: usize,
    design: StudyDesign,
    me_variance: f64,
    seed: u64,
) -> Result<Dataset> {
    if me_variance < 0.0 {
        return Err(Error::Config(format!(
            "me_variance must be nonnegative, got {me_variance}"
        )));
    }
    let graph = ArealGraph::lattice(rows, cols)?;
    let n = graph.n_areas();
    let mut rng = RngStream::new(seed);
    let car = car_precision(&graph, 0.99)?;
    let mut w = rng.draw_mvn_precision(&DVector::zeros(n), &car.base_precision)?;
    // center and bound the field so counts stay in a realistic range
    let mean_w = w.mean();
    for i in 0..n {
        w[i] = (w[i] - mean_w).clamp(-3.0, 3.0);
    }
    let mut s = DVector::zeros(n);
    let mut x = DVector::zeros(n);
    for i in 0..n {
        s[i] = rng.draw_normal(0.0, 1.0)?;
        x[i] = rng.draw_normal(w[i], me_variance)?;
    }
    let base = DVector::from_fn(n, |i, _| {
        (6.0 + 1.0 * w[i] + 0.3 * s[i]).exp().round().clamp(100.0, 100_000.0)
    });

    let mut responses = Vec::new();
    if design == StudyDesign::GaussianPoisson {
        responses.push(ResponseBlock {
            name: "gaussian".into(),
            kind: ResponseKind::Gaussian,
            values: base.clone(),
            gaussian_variance: 1.0,
            trials: None,
        });
    }
    responses.push(ResponseBlock {
        name: "poisson".into(),
        kind: ResponseKind::Poisson,
        values: base,
        gaussian_variance: 1.0,
        trials: None,
    });

    Ok(Dataset {
        graph,
        area_ids: (0..n).map(|i| format!("area{i}")).collect(),
        responses,
        error_prone: vec![ErrorProneCovariate {
            name: "x".into(),
            observed: x.clone(),
            raw: x,
            me_variances: DVector::from_element(n, me_variance.max(1e-12)),
            transform: Transform::Identity,
            car: CarParams::default(),
        }],
        fixed: FixedDesign {
            names: vec!["intercept".into(), "s".into()],
            matrix: DMatrix::from_fn(n, 2, |i, c| if c == 0 { 1.0 } else { s[i] }),
        },
    })
}

/// A replicate study comparing the measurement-error model against the
/// naive fit.
#[derive(Debug, Clone)]
pub struct StudySpec {
    /// Base table whose response values are the true base quantities.
    pub base: Dataset,
    pub replicates: usize,
    pub config: ModelConfig,
    pub seed: u64,
}

/// Metrics for one replicate, per response block.
#[derive(Debug, Clone, Serialize)]
pub struct ReplicateRecord {
    pub index: usize,
    pub me_model: Vec<Metrics>,
    pub naive: Vec<Metrics>,
}

/// Median percentage reductions achieved by the measurement-error model.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Reduction {
    pub rmse: f64,
    pub mse: f64,
    pub mae: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BlockComparison {
    pub block: String,
    pub me_model: Metrics,
    pub naive: Metrics,
    pub reduction: Reduction,
}

#[derive(Debug, Clone, Serialize)]
pub struct StudyResult {
    pub replicates_requested: usize,
    pub failed: usize,
    pub per_replicate: Vec<ReplicateRecord>,
    pub aggregate: Vec<BlockComparison>,
}

fn median(values: &mut Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// True data-scale means per block: `base + 1` for Poisson pseudo-counts,
/// `log base` for Gaussian pseudo-responses.
fn truth_means(base: &Dataset) -> Result<Vec<DVector<f64>>> {
    base.responses
        .iter()
        .map(|block| match block.kind {
            ResponseKind::Poisson => Ok(block.values.map(|v| v + 1.0)),
            ResponseKind::Gaussian => {
                if block.values.iter().any(|v| *v <= 0.0) {
                    return Err(Error::Domain(format!(
                        "Gaussian pseudo-design needs positive base values in block '{}'",
                        block.name
                    )));
                }
                Ok(block.values.map(|v| v.ln()))
            }
            ResponseKind::Binomial => Err(Error::Config(
                "replicate studies support Gaussian and Poisson blocks only".into(),
            )),
        })
        .collect()
}

/// Run one replicate: regenerate pseudo-responses, fit both models, score
/// data-scale structured-mean predictions against the true means.
fn run_replicate(
    index: usize,
    base_ctx: &ModelContext,
    truth: &[DVector<f64>],
    seed: u64,
) -> Result<ReplicateRecord> {
    let root = RngStream::new(seed);
    let mut data_rng = root.substream(3 * index as u64);
    let mut ctx = base_ctx.clone();
    for block in ctx.dataset.responses.iter_mut() {
        block.values = match block.kind {
            ResponseKind::Poisson => gen_poisson_pseudo(&block.values, &mut data_rng)?,
            ResponseKind::Gaussian => {
                let v = gen_gaussian_pseudo(&block.values, &mut data_rng)?;
                block.gaussian_variance = 1.0;
                v
            }
            ResponseKind::Binomial => unreachable!("rejected in truth_means"),
        };
    }
    let mut me_rng = root.substream(3 * index as u64 + 1);
    let me_chain = run_gibbs_with(&ctx, &mut me_rng)?;
    let mut naive_rng = root.substream(3 * index as u64 + 2);
    let naive_chain = run_naive_with(&ctx, &mut naive_rng)?;

    let layout = ctx.layout;
    let blocks = &ctx.dataset.responses;
    let me_pred = data_scale_estimate(&me_chain.smooth_mean, layout, blocks)?.mean;
    let naive_pred = data_scale_estimate(&naive_chain.smooth_mean, layout, blocks)?.mean;

    let n = layout.n_areas;
    let mut me_metrics = Vec::with_capacity(truth.len());
    let mut naive_metrics = Vec::with_capacity(truth.len());
    for (b, t) in truth.iter().enumerate() {
        let me_b = DVector::from_fn(n, |i, _| me_pred[layout.position(b, i)]);
        let naive_b = DVector::from_fn(n, |i, _| naive_pred[layout.position(b, i)]);
        me_metrics.push(metrics(t, &me_b)?);
        naive_metrics.push(metrics(t, &naive_b)?);
    }
    Ok(ReplicateRecord {
        index,
        me_model: me_metrics,
        naive: naive_metrics,
    })
}

/// Run the full study: parallel replicates with derived RNG streams,
/// failures logged and excluded (at most 20% may fail), medians across
/// replicates, and percentage reductions per metric.
pub fn run_study(spec: &StudySpec) -> Result<StudyResult> {
    if spec.replicates == 0 {
        return Err(Error::Config("replicates must be >= 1".into()));
    }
    let truth = truth_means(&spec.base)?;
    let base_ctx = ModelContext::new(spec.config.clone(), spec.base.clone())?;

    let outcomes: Vec<Result<ReplicateRecord>> = (0..spec.replicates)
        .into_par_iter()
        .map(|i| run_replicate(i, &base_ctx, &truth, spec.seed))
        .collect();

    let mut per_replicate = Vec::new();
    let mut failed = 0usize;
    for outcome in outcomes {
        match outcome {
            Ok(rec) => per_replicate.push(rec),
            Err(e) => {
                failed += 1;
                eprintln!("warning: replicate failed and was excluded: {e}");
            }
        }
    }
    let needed = (spec.replicates as f64 * 0.8).ceil() as usize;
    if per_replicate.len() < needed {
        return Err(Error::Numerical(format!(
            "only {}/{} replicates succeeded (need at least {needed})",
            per_replicate.len(),
            spec.replicates
        )));
    }

    let mut aggregate = Vec::new();
    for (b, block) in spec.base.responses.iter().enumerate() {
        let collect = |f: &dyn Fn(&ReplicateRecord) -> f64| -> f64 {
            let mut v: Vec<f64> = per_replicate.iter().map(f).collect();
            median(&mut v)
        };
        let me = Metrics {
            rmse: collect(&|r| r.me_model[b].rmse),
            mse: collect(&|r| r.me_model[b].mse),
            mae: collect(&|r| r.me_model[b].mae),
        };
        let naive = Metrics {
            rmse: collect(&|r| r.naive[b].rmse),
            mse: collect(&|r| r.naive[b].mse),
            mae: collect(&|r| r.naive[b].mae),
        };
        let pct = |n: f64, m: f64| if n == 0.0 { 0.0 } else { 100.0 * (n - m) / n };
        aggregate.push(BlockComparison {
            block: block.name.clone(),
            me_model: me,
            naive,
            reduction: Reduction {
                rmse: pct(naive.rmse, me.rmse),
                mse: pct(naive.mse, me.mse),
                mae: pct(naive.mae, me.mae),
            },
        });
    }

    Ok(StudyResult {
        replicates_requested: spec.replicates,
        failed,
        per_replicate,
        aggregate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial::morans_i;
    use approx::assert_relative_eq;

    #[test]
    fn poisson_pseudo_moments() {
        let mut rng = RngStream::new(1);
        let base = DVector::zeros(100_000);
        let draws = gen_poisson_pseudo(&base, &mut rng).unwrap();
        assert_relative_eq!(draws.mean(), 1.0, epsilon = 0.01);
        let base = DVector::from_element(100_000, 99.0);
        let draws = gen_poisson_pseudo(&base, &mut rng).unwrap();
        assert_relative_eq!(draws.mean(), 100.0, epsilon = 0.1);
    }

    #[test]
    fn poisson_pseudo_rejects_negative_base() {
        let mut rng = RngStream::new(1);
        let base = DVector::from_vec(vec![-1.0]);
        assert!(gen_poisson_pseudo(&base, &mut rng).is_err());
    }

    #[test]
    fn gaussian_pseudo_moments() {
        let mut rng = RngStream::new(2);
        let base = DVector::from_element(100_000, std::f64::consts::E);
        let draws = gen_gaussian_pseudo(&base, &mut rng).unwrap();
        let mean = draws.mean();
        assert_relative_eq!(mean, 1.0, epsilon = 0.01);
        let var = draws.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / draws.len() as f64;
        assert_relative_eq!(var, 1.0, epsilon = 0.02);
        assert!(gen_gaussian_pseudo(&DVector::from_vec(vec![0.0]), &mut rng).is_err());
    }

    #[test]
    fn pseudo_generators_deterministic() {
        let base = DVector::from_element(50, 10.0);
        let a = gen_poisson_pseudo(&base, &mut RngStream::new(7)).unwrap();
        let b = gen_poisson_pseudo(&base, &mut RngStream::new(7)).unwrap();
        assert_eq!(a, b);
        let g1 = gen_gaussian_pseudo(&base, &mut RngStream::new(7)).unwrap();
        let g2 = gen_gaussian_pseudo(&base, &mut RngStream::new(7)).unwrap();
        assert_eq!(g1, g2);
    }

    #[test]
    fn noise_free_truth_is_exactly_structured_mean() {
        let graph = ArealGraph::lattice(4, 4).unwrap();
        let cfg = TruthConfig {
            tau2: 0.0,
            sigma2_xi: 0.0,
            ..Default::default()
        };
        let mut rng = RngStream::new(3);
        let (_, truth) = gen_synthetic_truth(&graph, &cfg, &mut rng).unwrap();
        assert_eq!(truth.h, truth.smooth_mean);
        assert_eq!(truth.latent_mean, truth.smooth_mean);
    }

    #[test]
    fn measurement_noise_variance_matches() {
        let graph = ArealGraph::lattice(10, 10).unwrap();
        let cfg = TruthConfig {
            me_variance: 0.5,
            ..Default::default()
        };
        let mut rng = RngStream::new(4);
        let mut sum_sq = 0.0;
        let mut count = 0usize;
        for _ in 0..50 {
            let (ds, truth) = gen_synthetic_truth(&graph, &cfg, &mut rng).unwrap();
            let diff = &ds.error_prone[0].observed - &truth.w;
            sum_sq += diff.dot(&diff);
            count += diff.len();
        }
        assert_relative_eq!(sum_sq / count as f64, 0.5, epsilon = 0.03);
    }

    #[test]
    fn drawn_w_is_spatially_correlated() {
        let graph = ArealGraph::lattice(10, 10).unwrap();
        let cfg = TruthConfig::default();
        let mut rng = RngStream::new(5);
        let mut positive = 0;
        for _ in 0..100 {
            let (_, truth) = gen_synthetic_truth(&graph, &cfg, &mut rng).unwrap();
            if morans_i(&truth.w, &graph).unwrap() > 0.0 {
                positive += 1;
            }
        }
        assert!(positive >= 95, "only {positive}/100 draws had positive Moran's I");
    }

    #[test]
    fn base_table_shape_and_ranges() {
        let ds = synthetic_base_table(5, 5, StudyDesign::GaussianPoisson, 0.3, 11).unwrap();
        assert_eq!(ds.n_areas(), 25);
        assert_eq!(ds.responses.len(), 2);
        for block in &ds.responses {
            assert!(block.values.iter().all(|v| *v >= 100.0 && *v <= 100_000.0));
        }
        let p = synthetic_base_table(5, 5, StudyDesign::PoissonOnly, 0.3, 11).unwrap();
        assert_eq!(p.responses.len(), 1);
    }

    #[test]
    fn single_replicate_median_is_identity() {
        let base = synthetic_base_table(4, 4, StudyDesign::PoissonOnly, 0.3, 19).unwrap();
        let spec = StudySpec {
            base,
            replicates: 1,
            config: ModelConfig {
                iterations: 60,
                burn_in: 30,
                seed: 19,
                ..Default::default()
            },
            seed: 19,
        };
        let result = run_study(&spec).unwrap();
        assert_eq!(result.per_replicate.len(), 1);
        assert_eq!(result.failed, 0);
        let rec = &result.per_replicate[0];
        let agg = &result.aggregate[0];
        assert_relative_eq!(agg.me_model.mse, rec.me_model[0].mse);
        assert_relative_eq!(agg.naive.mae, rec.naive[0].mae);
    }

    #[test]
    fn study_deterministic_given_seed() {
        let base = synthetic_base_table(3, 4, StudyDesign::PoissonOnly, 0.3, 23).unwrap();
        let config = ModelConfig {
            iterations: 40,
            burn_in: 20,
            seed: 23,
            ..Default::default()
        };
        let spec = StudySpec {
            base,
            replicates: 3,
            config,
            seed: 23,
        };
        let a = run_study(&spec).unwrap();
        let b = run_study(&spec).unwrap();
        for (ra, rb) in a.per_replicate.iter().zip(&b.per_replicate) {
            assert_eq!(ra.me_model[0].mse.to_bits(), rb.me_model[0].mse.to_bits());
            assert_eq!(ra.naive[0].mse.to_bits(), rb.naive[0].mse.to_bits());
        }
    }
}
