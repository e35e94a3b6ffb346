//! The generalized transformation layer: draw the continuous transformed
//! response `h` from its collapsed conditional, per response type, and map
//! latent draws back to the data scale.
//!
//! Given the conjugate transformation prior with hyperparameters
//! `(alpha_j, kappa_j)`, the conditional of `h` given the data collapses
//! across the rest of the model:
//!
//! * Gaussian: `h_i ~ Normal((2k1 + 1/v)^{-1}(Z_i/v + a1), (2k1 + 1/v)^{-1})`
//! * Poisson: `h_i = log(w)`, `w ~ Gamma(a2 + Z_i, rate = k2 + 1)`
//! * Binomial: `h_i = logit(w)`, `w ~ Beta(a3 + Z_i, k3 - a3 + b_i - Z_i)`
//!
//! Multi-type responses are stacked response-type-major: block j occupies
//! positions `j*N .. (j+1)*N`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::areal::{ResponseBlock, ResponseKind};
use crate::error::{Error, Result};
use crate::stochastics::RngStream;

/// Transformation hyperparameters, fixed by configuration.
///
/// Defaults are weakly informative so the data term dominates each
/// conditional.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformConfig {
    pub alpha1: f64,
    pub kappa1: f64,
    pub alpha2: f64,
    pub kappa2: f64,
    pub alpha3: f64,
    pub kappa3: f64,
}

impl Default for TransformConfig {
    fn default() -> Self {
        TransformConfig {
            alpha1: 0.0,
            kappa1: 0.001,
            alpha2: 0.001,
            kappa2: 0.001,
            alpha3: 0.5,
            kappa3: 1.0,
        }
    }
}

impl TransformConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa1 > 0.0) || !(self.kappa2 > 0.0) || !(self.kappa3 > 0.0) {
            return Err(Error::Config(format!(
                "transformation kappas must be positive: k1={}, k2={}, k3={}",
                self.kappa1, self.kappa2, self.kappa3
            )));
        }
        if !(self.alpha2 > 0.0) || !(self.alpha3 > 0.0) {
            return Err(Error::Config(format!(
                "alpha2 and alpha3 must be positive: a2={}, a3={}",
                self.alpha2, self.alpha3
            )));
        }
        if !(self.kappa3 > self.alpha3) {
            return Err(Error::Config(format!(
                "kappa3 must exceed alpha3 so both Beta parameters stay positive: a3={}, k3={}",
                self.alpha3, self.kappa3
            )));
        }
        Ok(())
    }
}

/// Draw the Gaussian-block transformed response.
pub fn draw_h_gaussian(
    z: &DVector<f64>,
    nu: f64,
    gamma: &TransformConfig,
    rng: &mut RngStream,
) -> Result<DVector<f64>> {
    if !(nu > 0.0) {
        return Err(Error::Domain(format!(
            "gaussian data-model variance must be positive, got {nu}"
        )));
    }
    let variance = 1.0 / (2.0 * gamma.kappa1 + 1.0 / nu);
    let mut h = DVector::zeros(z.len());
    for i in 0..z.len() {
        let mean = variance * (z[i] / nu + gamma.alpha1);
        h[i] = rng.draw_normal(mean, variance)?;
    }
    Ok(h)
}

/// Draw the Poisson-block transformed response: log of a Gamma draw.
pub fn draw_h_poisson(
    z: &DVector<f64>,
    gamma: &TransformConfig,
    rng: &mut RngStream,
) -> Result<DVector<f64>> {
    let mut h = DVector::zeros(z.len());
    for i in 0..z.len() {
        if z[i] < 0.0 || z[i].fract() != 0.0 {
            return Err(Error::Domain(format!(
                "poisson count at index {i} is not a nonnegative integer: {}",
                z[i]
            )));
        }
        let w = rng.draw_gamma(gamma.alpha2 + z[i], gamma.kappa2 + 1.0)?;
        h[i] = w.ln();
    }
    Ok(h)
}

/// Draw the Binomial-block transformed response: logit of a Beta draw.
pub fn draw_h_binomial(
    z: &DVector<f64>,
    trials: &[u64],
    gamma: &TransformConfig,
    rng: &mut RngStream,
) -> Result<DVector<f64>> {
    if trials.len() != z.len() {
        return Err(Error::Domain(format!(
            "{} trials for {} values",
            trials.len(),
            z.len()
        )));
    }
    let mut h = DVector::zeros(z.len());
    for i in 0..z.len() {
        let b = trials[i] as f64;
        if z[i] < 0.0 || z[i] > b {
            return Err(Error::Domain(format!(
                "binomial count {} at index {i} outside 0..={b}",
                z[i]
            )));
        }
        let a = gamma.alpha3 + z[i];
        let bb = gamma.kappa3 - gamma.alpha3 + b - z[i];
        if !(a > 0.0) || !(bb > 0.0) {
            return Err(Error::Domain(format!(
                "beta parameters ({a}, {bb}) not positive; check alpha3 < kappa3"
            )));
        }
        let w = rng.draw_beta(a, bb)?;
        h[i] = (w / (1.0 - w)).ln();
    }
    Ok(h)
}

/// Draw the transformed response for one block according to its kind.
pub fn draw_h_block(
    block: &ResponseBlock,
    gamma: &TransformConfig,
    rng: &mut RngStream,
) -> Result<DVector<f64>> {
    match block.kind {
        ResponseKind::Gaussian => draw_h_gaussian(&block.values, block.gaussian_variance, gamma, rng),
        ResponseKind::Poisson => draw_h_poisson(&block.values, gamma, rng),
        ResponseKind::Binomial => draw_h_binomial(
            &block.values,
            block.trials.as_deref().ok_or_else(|| {
                Error::Domain(format!("binomial block '{}' missing trials", block.name))
            })?,
            gamma,
            rng,
        ),
    }
}

/// Layout of a stacked multi-type vector: response-type-major, block j at
/// positions `j*N .. (j+1)*N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StackLayout {
    pub n_blocks: usize,
    pub n_areas: usize,
}

impl StackLayout {
    pub fn len(&self) -> usize {
        self.n_blocks * self.n_areas
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat position of (block index, area index).
    pub fn position(&self, block: usize, area: usize) -> usize {
        block * self.n_areas + area
    }
}

/// A stacked transformed-response vector with its layout.
#[derive(Debug, Clone)]
pub struct StackedTransform {
    pub h: DVector<f64>,
    pub layout: StackLayout,
}

/// Concatenate per-type vectors response-type-major.
pub fn stack(blocks: &[DVector<f64>]) -> Result<StackedTransform> {
    if blocks.is_empty() {
        return Err(Error::Domain("stack: no blocks".into()));
    }
    let n = blocks[0].len();
    if blocks.iter().any(|b| b.len() != n) {
        return Err(Error::Domain("stack: block length mismatch".into()));
    }
    let mut h = DVector::zeros(blocks.len() * n);
    for (j, block) in blocks.iter().enumerate() {
        h.rows_mut(j * n, n).copy_from(block);
    }
    Ok(StackedTransform {
        h,
        layout: StackLayout {
            n_blocks: blocks.len(),
            n_areas: n,
        },
    })
}

/// Split a stacked vector back into per-type vectors.
pub fn unstack(stacked: &StackedTransform) -> Vec<DVector<f64>> {
    let n = stacked.layout.n_areas;
    (0..stacked.layout.n_blocks)
        .map(|j| stacked.h.rows(j * n, n).into_owned())
        .collect()
}

/// Per-area posterior mean and sd on the data scale.
#[derive(Debug, Clone)]
pub struct DataScaleSummary {
    /// Stacked (block-major) means.
    pub mean: DVector<f64>,
    pub sd: DVector<f64>,
    pub layout: StackLayout,
}

/// Map retained latent draws (each of stacked length) to data-scale
/// estimates per area: identity for Gaussian blocks, `exp` for Poisson,
/// `b * logistic` for Binomial.
pub fn data_scale_estimate(
    draws: &[DVector<f64>],
    layout: StackLayout,
    blocks: &[ResponseBlock],
) -> Result<DataScaleSummary> {
    if draws.is_empty() {
        return Err(Error::Domain("data_scale_estimate: no retained draws".into()));
    }
    if blocks.len() != layout.n_blocks {
        return Err(Error::Domain(format!(
            "data_scale_estimate: {} blocks for layout with {}",
            blocks.len(),
            layout.n_blocks
        )));
    }
    let total = layout.len();
    let mut sum = DVector::zeros(total);
    let mut sum_sq: DVector<f64> = DVector::zeros(total);
    for draw in draws {
        if draw.len() != total {
            return Err(Error::Domain(format!(
                "data_scale_estimate: draw length {} != {total}",
                draw.len()
            )));
        }
        for (j, block) in blocks.iter().enumerate() {
            for i in 0..layout.n_areas {
                let pos = layout.position(j, i);
                let v = match block.kind {
                    ResponseKind::Gaussian => draw[pos],
                    ResponseKind::Poisson => draw[pos].exp(),
                    ResponseKind::Binomial => {
                        let b = block.trials.as_ref().unwrap()[i] as f64;
                        b / (1.0 + (-draw[pos]).exp())
                    }
                };
                sum[pos] += v;
                sum_sq[pos] += v * v;
            }
        }
    }
    let n = draws.len() as f64;
    let mean = &sum / n;
    let sd = DVector::from_fn(total, |i, _| {
        let var: f64 = sum_sq[i] / n - mean[i] * mean[i];
        var.max(0.0).sqrt()
    });
    Ok(DataScaleSummary { mean, sd, layout })
}
