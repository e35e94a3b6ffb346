//! The collapsed Gibbs sampler for the spatial mixed-effect measurement
//! error model, and the naive variant that treats the observed covariates
//! as exact.
//!
//! Every full conditional is conjugate. One sweep draws, in order:
//! `h` (collapsed, from the transformation layer), `W` per error-prone
//! covariate, `beta`, `delta`, `eta`, `xi`, then the variances
//! `sigma2_w`, `sigma2_eta`, `sigma2_xi`, `tau2`. The update order is fixed
//! so that equal seeds give bitwise equal chains.
//!
//! Multi-type bookkeeping: one latent `W` of length N per covariate is
//! shared across the J response blocks and enters every stacked block with
//! the same coefficient, so its precision accumulates J likelihood blocks.
//! Residuals, `xi`, and the `tau2` / `sigma2_xi` shape parameters live on
//! the stacked length N* = J*N.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::areal::{assemble_sigma_u, Dataset};
use crate::error::{Error, Result};
use crate::hgt::{self, StackLayout, TransformConfig};
use crate::spatial::{
    block_diagonal, car_precision, mi_operator, moran_basis, stack_rows, CarStructure, MoranBasis,
    RankSpec,
};
use crate::stochastics::RngStream;

/// Inverse-gamma prior (shape, scale).
pub type IgPrior = (f64, f64);

/// Variance hyperpriors; defaults are the vague settings used throughout.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperpriors {
    pub sigma2_beta: f64,
    pub sigma2_delta: f64,
    pub tau2: IgPrior,
    pub sigma2_xi: IgPrior,
    pub sigma2_eta: IgPrior,
    pub sigma2_w: IgPrior,
}

impl Default for Hyperpriors {
    fn default() -> Self {
        Hyperpriors {
            sigma2_beta: 100.0,
            sigma2_delta: 100.0,
            tau2: (2.0, 1.0),
            sigma2_xi: (2.0, 1.0),
            sigma2_eta: (2.0, 1.0),
            sigma2_w: (2.0, 1.0),
        }
    }
}

/// Sampler configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// CAR autocorrelation shared across covariates unless a covariate
    /// carries its own value.
    pub rho: f64,
    /// Basis truncation as a fraction of positive eigenvalues; ignored
    /// when `r_count` is set.
    pub r_fraction: f64,
    pub r_count: Option<usize>,
    pub hyperpriors: Hyperpriors,
    pub seed: u64,
    /// `false` fits the naive model (observed covariates enter the design
    /// directly; no latent measurement-error layer).
    pub measurement_error: bool,
    pub gamma: TransformConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            iterations: 10_000,
            burn_in: 5_000,
            thin: 1,
            rho: 0.99,
            r_fraction: 0.95,
            r_count: None,
            hyperpriors: Hyperpriors::default(),
            seed: 0,
            measurement_error: true,
            gamma: TransformConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.iterations {
            return Err(Error::Config(format!(
                "burn_in ({}) must be less than iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 {
            return Err(Error::Config("thin must be >= 1".into()));
        }
        let h = &self.hyperpriors;
        for (name, v) in [
            ("sigma2_beta", h.sigma2_beta),
            ("sigma2_delta", h.sigma2_delta),
            ("tau2 shape", h.tau2.0),
            ("tau2 scale", h.tau2.1),
            ("sigma2_xi shape", h.sigma2_xi.0),
            ("sigma2_xi scale", h.sigma2_xi.1),
            ("sigma2_eta shape", h.sigma2_eta.0),
            ("sigma2_eta scale", h.sigma2_eta.1),
            ("sigma2_w shape", h.sigma2_w.0),
            ("sigma2_w scale", h.sigma2_w.1),
        ] {
            if !(v > 0.0) {
                return Err(Error::Config(format!("hyperprior {name} must be positive, got {v}")));
            }
        }
        self.gamma.validate()?;
        Ok(())
    }

    pub fn rank_spec(&self) -> RankSpec {
        match self.r_count {
            Some(c) => RankSpec::Count(c),
            None => RankSpec::Fraction(self.r_fraction),
        }
    }

    /// Number of retained (post burn-in, thinned) draws.
    pub fn retained(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }
}

/// Everything fixed over the chain: data, CAR precisions, measurement-error
/// precisions, the stacked fixed design, and the spatial basis.
///
/// The basis design uses the observed estimates in place of the latent
/// covariates (the basis must be fixed before sampling) and is held fixed
/// over the chain.
#[derive(Debug, Clone)]
pub struct ModelContext {
    pub dataset: Dataset,
    pub config: ModelConfig,
    pub car: Vec<CarStructure>,
    /// Elementwise 1 / me_variance per covariate.
    pub me_precision: Vec<DVector<f64>>,
    /// Observed covariates, N x p, transformed scale.
    pub x: DMatrix<f64>,
    /// Fixed design stacked to N* rows.
    pub s_stack: DMatrix<f64>,
    pub basis: MoranBasis,
    pub layout: StackLayout,
}

impl ModelContext {
    pub fn new(config: ModelConfig, dataset: Dataset) -> Result<Self> {
        config.validate()?;
        dataset.validate()?;
        let n = dataset.n_areas();
        let j = dataset.n_blocks();
        let p = dataset.error_prone.len();

        let mut car = Vec::with_capacity(p);
        let mut me_precision = Vec::with_capacity(p);
        let mut x = DMatrix::zeros(n, p);
        for (k, cov) in dataset.error_prone.iter().enumerate() {
            let rho = if cov.car.rho != 0.99 { cov.car.rho } else { config.rho };
            car.push(car_precision(&dataset.graph, rho)?);
            let sigma_u = assemble_sigma_u(cov)?;
            me_precision.push(DVector::from_fn(n, |i, _| 1.0 / sigma_u[(i, i)]));
            x.set_column(k, &cov.observed);
        }

        let s_stack = stack_rows(&dataset.fixed.matrix, j);
        let x_stack = stack_rows(&x, j);
        let mut design = DMatrix::zeros(j * n, p + dataset.fixed.matrix.ncols());
        design.view_mut((0, 0), (j * n, p)).copy_from(&x_stack);
        design
            .view_mut((0, p), (j * n, dataset.fixed.matrix.ncols()))
            .copy_from(&s_stack);
        let adjacency = block_diagonal(dataset.graph.adjacency(), j);
        let g = mi_operator(&design, &adjacency)?;
        let basis = moran_basis(&g, config.rank_spec())?;

        let layout = StackLayout {
            n_blocks: j,
            n_areas: n,
        };
        Ok(ModelContext {
            dataset,
            config,
            car,
            me_precision,
            x,
            s_stack,
            basis,
            layout,
        })
    }

    pub fn n(&self) -> usize {
        self.layout.n_areas
    }

    pub fn n_blocks(&self) -> usize {
        self.layout.n_blocks
    }

    pub fn stacked_len(&self) -> usize {
        self.layout.len()
    }

    pub fn p(&self) -> usize {
        self.dataset.error_prone.len()
    }

    pub fn q(&self) -> usize {
        self.dataset.fixed.matrix.ncols()
    }

    pub fn r(&self) -> usize {
        self.basis.r
    }
}

/// All latent quantities at one Gibbs iteration.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub h: DVector<f64>,
    /// Latent true covariates, N x p.
    pub w: DMatrix<f64>,
    pub beta: DVector<f64>,
    pub delta: DVector<f64>,
    pub eta: DVector<f64>,
    pub xi: DVector<f64>,
    pub sigma2_w: Vec<f64>,
    pub sigma2_eta: f64,
    pub sigma2_xi: f64,
    pub tau2: f64,
}

impl ChainState {
    /// The fitted latent mean Wb + Sd + Mh + xi on the stacked index.
    pub fn latent_mean(&self, ctx: &ModelContext) -> DVector<f64> {
        self.smooth_mean(ctx) + &self.xi
    }

    /// The structured part Wb + Sd + Mh (no fine-scale term).
    pub fn smooth_mean(&self, ctx: &ModelContext) -> DVector<f64> {
        let w_stack = stack_rows(&self.w, ctx.n_blocks());
        w_stack * &self.beta + &ctx.s_stack * &self.delta + &ctx.basis.basis * &self.eta
    }
}

/// Initial state: W at the observed estimates, coefficients and random
/// effects at zero, variances at one, h drawn once.
pub fn init_state(ctx: &ModelContext, rng: &mut RngStream) -> Result<ChainState> {
    let h = draw_h(ctx, rng)?;
    Ok(ChainState {
        h,
        w: ctx.x.clone(),
        beta: DVector::zeros(ctx.p()),
        delta: DVector::zeros(ctx.q()),
        eta: DVector::zeros(ctx.r()),
        xi: DVector::zeros(ctx.stacked_len()),
        sigma2_w: vec![1.0; ctx.p()],
        sigma2_eta: 1.0,
        sigma2_xi: 1.0,
        tau2: 1.0,
    })
}

/// Draw the stacked transformed response from its collapsed conditional.
pub fn draw_h(ctx: &ModelContext, rng: &mut RngStream) -> Result<DVector<f64>> {
    let blocks: Result<Vec<DVector<f64>>> = ctx
        .dataset
        .responses
        .iter()
        .map(|b| hgt::draw_h_block(b, &ctx.config.gamma, rng))
        .collect();
    Ok(hgt::stack(&blocks?)?.h)
}

/// Cholesky sampling with a one-shot diagonal jitter retry on failure.
fn draw_mvn_guarded(
    rng: &mut RngStream,
    linear: &DVector<f64>,
    precision: &DMatrix<f64>,
    warnings: &mut u64,
    kernel: &str,
) -> Result<DVector<f64>> {
    // symmetrize against accumulated roundoff
    let q = (precision + precision.transpose()) * 0.5;
    match rng.draw_mvn_precision(linear, &q) {
        Ok(v) => Ok(v),
        Err(Error::Numerical(_)) => {
            *warnings += 1;
            let jittered = &q + DMatrix::identity(q.nrows(), q.ncols()) * 1e-10;
            rng.draw_mvn_precision(linear, &jittered)
                .map_err(|e| Error::Numerical(format!("{kernel}: {e}")))
        }
        Err(e) => Err(e),
    }
}

/// Sum the J stacked blocks of a length-N* vector down to length N.
fn sum_blocks(v: &DVector<f64>, layout: StackLayout) -> DVector<f64> {
    let n = layout.n_areas;
    let mut out = DVector::zeros(n);
    for j in 0..layout.n_blocks {
        out += v.rows(j * n, n);
    }
    out
}

/// Update the latent covariates, one CAR-distributed column at a time,
/// conditioning on the others.
pub fn update_w(
    state: &mut ChainState,
    ctx: &ModelContext,
    rng: &mut RngStream,
    warnings: &mut u64,
) -> Result<()> {
    let n = ctx.n();
    let j = ctx.n_blocks() as f64;
    let base = &state.h - &ctx.s_stack * &state.delta - &ctx.basis.basis * &state.eta - &state.xi;
    for k in 0..ctx.p() {
        // residualize against the other covariates
        let mut resid = base.clone();
        for other in 0..ctx.p() {
            if other != k {
                let col = stack_rows(&DMatrix::from_column_slice(n, 1, state.w.column(other).as_slice()), ctx.n_blocks());
                resid -= col * state.beta[other];
            }
        }
        let beta_k = state.beta[k];
        let mut precision = &ctx.car[k].base_precision / state.sigma2_w[k];
        for i in 0..n {
            precision[(i, i)] += j * beta_k * beta_k / state.tau2 + ctx.me_precision[k][i];
        }
        let block_sum = sum_blocks(&resid, ctx.layout);
        let linear = DVector::from_fn(n, |i, _| {
            ctx.me_precision[k][i] * ctx.x[(i, k)] + beta_k / state.tau2 * block_sum[i]
        });
        let draw = draw_mvn_guarded(rng, &linear, &precision, warnings, "update_w")?;
        state.w.set_column(k, &draw);
    }
    Ok(())
}

/// Gaussian regression-coefficient update for a design block: precision
/// I/prior_var + D'D/tau2, mean proportional to D'resid.
fn update_coefficients(
    design: &DMatrix<f64>,
    resid: &DVector<f64>,
    prior_variance: f64,
    tau2: f64,
    rng: &mut RngStream,
    warnings: &mut u64,
    kernel: &str,
) -> Result<DVector<f64>> {
    let k = design.ncols();
    let mut precision = design.transpose() * design / tau2;
    for i in 0..k {
        precision[(i, i)] += 1.0 / prior_variance;
    }
    let linear = design.transpose() * resid / tau2;
    draw_mvn_guarded(rng, &linear, &precision, warnings, kernel)
}

pub fn update_beta(
    state: &mut ChainState,
    ctx: &ModelContext,
    rng: &mut RngStream,
    warnings: &mut u64,
) -> Result<()> {
    let w_stack = stack_rows(&state.w, ctx.n_blocks());
    let resid = &state.h - &ctx.s_stack * &state.delta - &ctx.basis.basis * &state.eta - &state.xi;
    state.beta = update_coefficients(
        &w_stack,
        &resid,
        ctx.config.hyperpriors.sigma2_beta,
        state.tau2,
        rng,
        warnings,
        "update_beta",
    )?;
    Ok(())
}

pub fn update_delta(
    state: &mut ChainState,
    ctx: &ModelContext,
    rng: &mut RngStream,
    warnings: &mut u64,
) -> Result<()> {
    let w_stack = stack_rows(&state.w, ctx.n_blocks());
    let resid = &state.h - w_stack * &state.beta - &ctx.basis.basis * &state.eta - &state.xi;
    state.delta = update_coefficients(
        &ctx.s_stack,
        &resid,
        ctx.config.hyperpriors.sigma2_delta,
        state.tau2,
        rng,
        warnings,
        "update_delta",
    )?;
    Ok(())
}

/// With orthonormal basis columns the eta precision is diagonal, so the
/// update is coordinatewise.
pub fn update_eta(state: &mut ChainState, ctx: &ModelContext, rng: &mut RngStream) -> Result<()> {
    let w_stack = stack_rows(&state.w, ctx.n_blocks());
    let resid = &state.h - w_stack * &state.beta - &ctx.s_stack * &state.delta - &state.xi;
    let proj = ctx.basis.basis.transpose() * resid;
    let variance = 1.0 / (1.0 / state.sigma2_eta + 1.0 / state.tau2);
    for i in 0..ctx.r() {
        state.eta[i] = rng.draw_normal(variance * proj[i] / state.tau2, variance)?;
    }
    Ok(())
}

pub fn update_xi(state: &mut ChainState, ctx: &ModelContext, rng: &mut RngStream) -> Result<()> {
    let resid = &state.h - state.smooth_mean(ctx);
    let variance = 1.0 / (1.0 / state.sigma2_xi + 1.0 / state.tau2);
    for i in 0..ctx.stacked_len() {
        state.xi[i] = rng.draw_normal(variance * resid[i] / state.tau2, variance)?;
    }
    Ok(())
}

fn quad_clamped(q: f64, warnings: &mut u64) -> f64 {
    if q < 0.0 {
        *warnings += 1;
        0.0
    } else {
        q
    }
}

/// Draw all variance parameters from their inverse-gamma conditionals.
pub fn update_variances(
    state: &mut ChainState,
    ctx: &ModelContext,
    rng: &mut RngStream,
    warnings: &mut u64,
) -> Result<()> {
    let hp = &ctx.config.hyperpriors;
    let n = ctx.n() as f64;
    let n_star = ctx.stacked_len() as f64;
    for k in 0..ctx.p() {
        let wk = state.w.column(k);
        let quad = quad_clamped((&ctx.car[k].base_precision * wk).dot(&wk), warnings);
        state.sigma2_w[k] =
            rng.draw_inverse_gamma(hp.sigma2_w.0 + n / 2.0, hp.sigma2_w.1 + 0.5 * quad)?;
    }
    let quad_eta = quad_clamped(state.eta.dot(&state.eta), warnings);
    state.sigma2_eta = rng.draw_inverse_gamma(
        hp.sigma2_eta.0 + ctx.r() as f64 / 2.0,
        hp.sigma2_eta.1 + 0.5 * quad_eta,
    )?;
    let quad_xi = quad_clamped(state.xi.dot(&state.xi), warnings);
    state.sigma2_xi =
        rng.draw_inverse_gamma(hp.sigma2_xi.0 + n_star / 2.0, hp.sigma2_xi.1 + 0.5 * quad_xi)?;
    let resid = &state.h - state.latent_mean(ctx);
    let quad_tau = quad_clamped(resid.dot(&resid), warnings);
    state.tau2 =
        rng.draw_inverse_gamma(hp.tau2.0 + n_star / 2.0, hp.tau2.1 + 0.5 * quad_tau)?;
    Ok(())
}

/// Which model a chain was fitted under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    HgtSme,
    Naive,
}

/// Retained draws and bookkeeping for one chain.
#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub model: ModelKind,
    pub seed: u64,
    pub r: usize,
    pub layout: StackLayout,
    pub h: Vec<DVector<f64>>,
    /// Fitted latent mean Wb + Sd + Mh + xi per retained draw.
    pub latent_mean: Vec<DVector<f64>>,
    /// Structured component Wb + Sd + Mh per retained draw.
    pub smooth_mean: Vec<DVector<f64>>,
    pub w: Vec<DMatrix<f64>>,
    pub beta: Vec<DVector<f64>>,
    pub delta: Vec<DVector<f64>>,
    pub sigma2_w: Vec<Vec<f64>>,
    pub sigma2_eta: Vec<f64>,
    pub sigma2_xi: Vec<f64>,
    pub tau2: Vec<f64>,
    /// Count of numerical-guard events (jitter retries, clamped quadratic
    /// forms) over the whole run.
    pub warnings: u64,
}

impl ChainOutput {
    pub fn retained(&self) -> usize {
        self.tau2.len()
    }

    /// Posterior mean over retained draws of a scalar series.
    pub fn mean_of(series: &[f64]) -> f64 {
        series.iter().sum::<f64>() / series.len() as f64
    }
}

/// Run the full measurement-error model sampler.
pub fn run_gibbs(config: &ModelConfig, dataset: &Dataset) -> Result<ChainOutput> {
    let ctx = ModelContext::new(config.clone(), dataset.clone())?;
    let mut rng = RngStream::new(config.seed);
    run_gibbs_with(&ctx, &mut rng)
}

/// As `run_gibbs` but with a caller-supplied context and stream (used by
/// replicate studies to share the basis and derive substreams).
pub fn run_gibbs_with(ctx: &ModelContext, rng: &mut RngStream) -> Result<ChainOutput> {
    let config = &ctx.config;
    let mut state = init_state(ctx, rng)
        .map_err(|e| Error::Numerical(format!("init: {e}")))?;
    let mut out = ChainOutput {
        model: ModelKind::HgtSme,
        seed: config.seed,
        r: ctx.r(),
        layout: ctx.layout,
        h: Vec::new(),
        latent_mean: Vec::new(),
        smooth_mean: Vec::new(),
        w: Vec::new(),
        beta: Vec::new(),
        delta: Vec::new(),
        sigma2_w: Vec::new(),
        sigma2_eta: Vec::new(),
        sigma2_xi: Vec::new(),
        tau2: Vec::new(),
        warnings: 0,
    };
    let mut warnings = 0u64;
    for iter in 0..config.iterations {
        let step = |e: Error, kernel: &str| {
            Error::Numerical(format!("iteration {iter}, kernel {kernel}: {e}"))
        };
        state.h = draw_h(ctx, rng).map_err(|e| step(e, "h"))?;
        update_w(&mut state, ctx, rng, &mut warnings).map_err(|e| step(e, "w"))?;
        update_beta(&mut state, ctx, rng, &mut warnings).map_err(|e| step(e, "beta"))?;
        update_delta(&mut state, ctx, rng, &mut warnings).map_err(|e| step(e, "delta"))?;
        update_eta(&mut state, ctx, rng).map_err(|e| step(e, "eta"))?;
        update_xi(&mut state, ctx, rng).map_err(|e| step(e, "xi"))?;
        update_variances(&mut state, ctx, rng, &mut warnings)
            .map_err(|e| step(e, "variances"))?;
        if iter >= config.burn_in && (iter - config.burn_in) % config.thin == 0 {
            let smooth = state.smooth_mean(ctx);
            out.latent_mean.push(&smooth + &state.xi);
            out.smooth_mean.push(smooth);
            out.h.push(state.h.clone());
            out.w.push(state.w.clone());
            out.beta.push(state.beta.clone());
            out.delta.push(state.delta.clone());
            out.sigma2_w.push(state.sigma2_w.clone());
            out.sigma2_eta.push(state.sigma2_eta);
            out.sigma2_xi.push(state.sigma2_xi);
            out.tau2.push(state.tau2);
        }
    }
    out.warnings = warnings;
    Ok(out)
}

/// Run the naive sampler: the observed covariates join the fixed design and
/// there is no latent measurement-error layer. Coefficients for the
/// combined design live in `beta`; `delta` and `w` are empty.
pub fn run_naive(config: &ModelConfig, dataset: &Dataset) -> Result<ChainOutput> {
    let mut config = config.clone();
    config.measurement_error = false;
    let ctx = ModelContext::new(config.clone(), dataset.clone())?;
    let mut rng = RngStream::new(config.seed);
    run_naive_with(&ctx, &mut rng)
}

pub fn run_naive_with(ctx: &ModelContext, rng: &mut RngStream) -> Result<ChainOutput> {
    let config = &ctx.config;
    let n_star = ctx.stacked_len();
    let p = ctx.p();
    let q = ctx.q();
    // combined design [X S] on the stacked index
    let x_stack = stack_rows(&ctx.x, ctx.n_blocks());
    let mut design = DMatrix::zeros(n_star, p + q);
    design.view_mut((0, 0), (n_star, p)).copy_from(&x_stack);
    design
        .view_mut((0, p), (n_star, q))
        .copy_from(&ctx.s_stack);

    let mut warnings = 0u64;
    let mut eta = DVector::zeros(ctx.r());
    let mut xi = DVector::zeros(n_star);
    let mut sigma2_eta = 1.0f64;
    let mut sigma2_xi = 1.0f64;
    let mut tau2 = 1.0f64;

    let mut out = ChainOutput {
        model: ModelKind::Naive,
        seed: config.seed,
        r: ctx.r(),
        layout: ctx.layout,
        h: Vec::new(),
        latent_mean: Vec::new(),
        smooth_mean: Vec::new(),
        w: Vec::new(),
        beta: Vec::new(),
        delta: Vec::new(),
        sigma2_w: Vec::new(),
        sigma2_eta: Vec::new(),
        sigma2_xi: Vec::new(),
        tau2: Vec::new(),
        warnings: 0,
    };
    let hp = &config.hyperpriors;
    for iter in 0..config.iterations {
        let step =
            |e: Error, kernel: &str| Error::Numerical(format!("iteration {iter}, kernel {kernel}: {e}"));
        let h = draw_h(ctx, rng).map_err(|e| step(e, "h"))?;
        // coefficients
        let resid = &h - &ctx.basis.basis * &eta - &xi;
        let beta = update_coefficients(
            &design,
            &resid,
            hp.sigma2_beta,
            tau2,
            rng,
            &mut warnings,
            "naive beta",
        )
        .map_err(|e| step(e, "beta"))?;
        // eta
        let fitted_fixed = &design * &beta;
        let resid = &h - &fitted_fixed - &xi;
        let proj = ctx.basis.basis.transpose() * &resid;
        let var_eta = 1.0 / (1.0 / sigma2_eta + 1.0 / tau2);
        for i in 0..ctx.r() {
            eta[i] = rng
                .draw_normal(var_eta * proj[i] / tau2, var_eta)
                .map_err(|e| step(e, "eta"))?;
        }
        // xi
        let smooth = &fitted_fixed + &ctx.basis.basis * &eta;
        let resid = &h - &smooth;
        let var_xi = 1.0 / (1.0 / sigma2_xi + 1.0 / tau2);
        for i in 0..n_star {
            xi[i] = rng
                .draw_normal(var_xi * resid[i] / tau2, var_xi)
                .map_err(|e| step(e, "xi"))?;
        }
        // variances
        sigma2_eta = rng
            .draw_inverse_gamma(
                hp.sigma2_eta.0 + ctx.r() as f64 / 2.0,
                hp.sigma2_eta.1 + 0.5 * quad_clamped(eta.dot(&eta), &mut warnings),
            )
            .map_err(|e| step(e, "sigma2_eta"))?;
        sigma2_xi = rng
            .draw_inverse_gamma(
                hp.sigma2_xi.0 + n_star as f64 / 2.0,
                hp.sigma2_xi.1 + 0.5 * quad_clamped(xi.dot(&xi), &mut warnings),
            )
            .map_err(|e| step(e, "sigma2_xi"))?;
        let resid = &h - &smooth - &xi;
        tau2 = rng
            .draw_inverse_gamma(
                hp.tau2.0 + n_star as f64 / 2.0,
                hp.tau2.1 + 0.5 * quad_clamped(resid.dot(&resid), &mut warnings),
            )
            .map_err(|e| step(e, "tau2"))?;

        if iter >= config.burn_in && (iter - config.burn_in) % config.thin == 0 {
            out.latent_mean.push(&smooth + &xi);
            out.smooth_mean.push(smooth.clone());
            out.h.push(h.clone());
            out.beta.push(beta.clone());
            out.sigma2_eta.push(sigma2_eta);
            out.sigma2_xi.push(sigma2_xi);
            out.tau2.push(tau2);
        }
    }
    out.warnings = warnings;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::areal::{
        ArealGraph, CarParams, ErrorProneCovariate, FixedDesign, ResponseBlock, ResponseKind,
        Transform,
    };
    use approx::assert_relative_eq;

    /// Nine-area (3x3 lattice) single-Gaussian-response dataset with one
    /// error-prone covariate and an intercept.
    pub(crate) fn tiny_dataset() -> Dataset {
        let graph = ArealGraph::lattice(3, 3).unwrap();
        let n = 9;
        let observed = DVector::from_fn(n, |i, _| 0.3 * i as f64 - 1.0);
        Dataset {
            graph,
            area_ids: (0..n).map(|i| format!("a{i}")).collect(),
            responses: vec![ResponseBlock {
                name: "y".into(),
                kind: ResponseKind::Gaussian,
                values: DVector::from_fn(n, |i, _| 0.5 * i as f64),
                gaussian_variance: 1.0,
                trials: None,
            }],
            error_prone: vec![ErrorProneCovariate {
                name: "x".into(),
                observed: observed.clone(),
                raw: observed,
                me_variances: DVector::from_fn(n, |i, _| 0.25 + 0.05 * i as f64),
                transform: Transform::Identity,
                car: CarParams::default(),
            }],
            fixed: FixedDesign {
                names: vec!["intercept".into()],
                matrix: DMatrix::from_element(n, 1, 1.0),
            },
        }
    }

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            iterations: 10,
            burn_in: 5,
            thin: 1,
            r_count: Some(1),
            seed: 42,
            ..Default::default()
        }
    }

    #[test]
    fn init_state_matches_rules() {
        let ctx = ModelContext::new(tiny_config(), tiny_dataset()).unwrap();
        let mut rng = RngStream::new(1);
        let state = init_state(&ctx, &mut rng).unwrap();
        assert_eq!(state.w, ctx.x);
        assert_eq!(state.beta, DVector::zeros(1));
        assert_eq!(state.sigma2_w, vec![1.0]);
        assert_eq!(state.tau2, 1.0);
        let mut rng2 = RngStream::new(1);
        let state2 = init_state(&ctx, &mut rng2).unwrap();
        assert_eq!(state.h, state2.h);
    }

    #[test]
    fn retained_count_bookkeeping() {
        let out = run_gibbs(&tiny_config(), &tiny_dataset()).unwrap();
        assert_eq!(out.retained(), 5);
        assert_eq!(out.h.len(), 5);
        assert_eq!(out.beta.len(), 5);
        let naive = run_naive(&tiny_config(), &tiny_dataset()).unwrap();
        assert_eq!(naive.retained(), 5);
        assert_eq!(naive.beta[0].len(), 2); // p + q
    }

    #[test]
    fn equal_seeds_equal_chains() {
        let a = run_gibbs(&tiny_config(), &tiny_dataset()).unwrap();
        let b = run_gibbs(&tiny_config(), &tiny_dataset()).unwrap();
        for i in 0..a.retained() {
            assert_eq!(a.tau2[i].to_bits(), b.tau2[i].to_bits());
            assert_eq!(a.beta[i], b.beta[i]);
            assert_eq!(a.h[i], b.h[i]);
        }
        let na = run_naive(&tiny_config(), &tiny_dataset()).unwrap();
        let nb = run_naive(&tiny_config(), &tiny_dataset()).unwrap();
        for i in 0..na.retained() {
            assert_eq!(na.tau2[i].to_bits(), nb.tau2[i].to_bits());
        }
    }

    #[test]
    fn chain_output_is_finite_and_positive() {
        let config = ModelConfig {
            iterations: 200,
            burn_in: 100,
            seed: 7,
            r_count: Some(1),
            ..Default::default()
        };
        let out = run_gibbs(&config, &tiny_dataset()).unwrap();
        for i in 0..out.retained() {
            assert!(out.tau2[i] > 0.0 && out.tau2[i].is_finite());
            assert!(out.sigma2_eta[i] > 0.0);
            assert!(out.sigma2_xi[i] > 0.0);
            assert!(out.sigma2_w[i][0] > 0.0);
            assert!(out.h[i].iter().all(|v| v.is_finite()));
            assert!(out.beta[i].iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn beta_scalar_formula() {
        // p=1, W'W = 4, tau2 = 1, sigma2_beta = 100, W'resid = 8:
        // mean 8/(4 + 0.01), variance 1/4.01
        let design = DMatrix::from_column_slice(4, 1, &[1.0, 1.0, 1.0, 1.0]);
        let resid = DVector::from_element(4, 2.0);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let n = 100_000;
        let mut rng = RngStream::new(3);
        let mut warn = 0;
        for _ in 0..n {
            let b = update_coefficients(&design, &resid, 100.0, 1.0, &mut rng, &mut warn, "t")
                .unwrap()[0];
            sum += b;
            sum_sq += b * b;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        assert_relative_eq!(mean, 8.0 / 4.01, epsilon = 0.01);
        assert_relative_eq!(var, 1.0 / 4.01, epsilon = 0.01);
        assert_eq!(warn, 0);
    }

    #[test]
    fn beta_prior_when_no_information() {
        // zero design: draw from the prior N(0, sigma2_beta)
        let design = DMatrix::zeros(4, 1);
        let resid = DVector::from_element(4, 2.0);
        let mut rng = RngStream::new(5);
        let mut warn = 0;
        let n = 50_000;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let b = update_coefficients(&design, &resid, 25.0, 1.0, &mut rng, &mut warn, "t")
                .unwrap()[0];
            sum_sq += b * b;
        }
        let var = sum_sq / n as f64;
        assert_relative_eq!(var, 25.0, epsilon = 0.5);
    }

    #[test]
    fn delta_intercept_scalar_formula() {
        // S = ones(4), residual sum c = 6, tau2=1, sigma2_delta=100:
        // mean c/(4 + 0.01)
        let design = DMatrix::from_element(4, 1, 1.0);
        let resid = DVector::from_vec(vec![3.0, 1.0, 2.0, 0.0]);
        let mut rng = RngStream::new(9);
        let mut warn = 0;
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            sum += update_coefficients(&design, &resid, 100.0, 1.0, &mut rng, &mut warn, "t")
                .unwrap()[0];
        }
        assert_relative_eq!(sum / n as f64, 6.0 / 4.01, epsilon = 0.01);
    }

    #[test]
    fn xi_equal_precision_average() {
        let ctx = ModelContext::new(tiny_config(), tiny_dataset()).unwrap();
        let mut rng = RngStream::new(11);
        let mut state = init_state(&ctx, &mut rng).unwrap();
        state.sigma2_xi = 1.0;
        state.tau2 = 1.0;
        // make the residual deterministic: zero out everything else
        state.beta[0] = 0.0;
        state.delta[0] = 0.0;
        state.eta[0] = 0.0;
        state.w.fill(0.0);
        state.h = DVector::from_fn(ctx.stacked_len(), |i, _| 2.0 + i as f64);
        let n = 100_000;
        let mut sums = [0.0f64; 2];
        let mut sq = [0.0f64; 2];
        for _ in 0..n {
            update_xi(&mut state, &ctx, &mut rng).unwrap();
            for i in 0..2 {
                sums[i] += state.xi[i];
                sq[i] += state.xi[i] * state.xi[i];
            }
            state.xi.fill(0.0); // keep the conditional residual fixed
        }
        for i in 0..2 {
            let mean = sums[i] / n as f64;
            let var = sq[i] / n as f64 - mean * mean;
            assert_relative_eq!(mean, state.h[i] / 2.0, epsilon = 0.02);
            assert_relative_eq!(var, 0.5, epsilon = 0.02);
        }
    }

    #[test]
    fn w_limits_to_x_without_measurement_error() {
        let mut ds = tiny_dataset();
        let n = ds.graph.n_areas();
        ds.error_prone[0].me_variances = DVector::from_element(n, 1e-10);
        let config = ModelConfig {
            iterations: 60,
            burn_in: 30,
            seed: 13,
            r_count: Some(1),
            ..Default::default()
        };
        let out = run_gibbs(&config, &ds).unwrap();
        for w in &out.w {
            for i in 0..n {
                assert!(
                    (w[(i, 0)] - ds.error_prone[0].observed[i]).abs() < 1e-4,
                    "w = {}, x = {}",
                    w[(i, 0)],
                    ds.error_prone[0].observed[i]
                );
            }
        }
    }

    #[test]
    fn variance_updates_match_plugin_parameters() {
        // eta = (1, 1), r = 2, a_eta = 2, b_eta = 1 -> IG(3, 2): mean 1
        let mut rng = RngStream::new(17);
        let n = 200_000;
        let mut sum = 0.0;
        for _ in 0..n {
            sum += rng
                .draw_inverse_gamma(2.0 + 2.0 / 2.0, 1.0 + 0.5 * 2.0)
                .unwrap();
        }
        assert_relative_eq!(sum / n as f64, 1.0, epsilon = 0.01);

        // 2-node graph quadratic form: W = (1,1), rho = 0.5 ->
        // W'(D - 0.5 A)W = 1
        let g = ArealGraph::from_edges(2, &[(0, 1)]).unwrap();
        let car = car_precision(&g, 0.5).unwrap();
        let w = DVector::from_element(2, 1.0);
        assert_relative_eq!((&car.base_precision * &w).dot(&w), 1.0);
    }

    #[test]
    fn update_w_recovers_shrinkage_when_decoupled() {
        // beta = 0: Q = CAR/sigma2 + Sigma_U^{-1}, mean solves the
        // prior-vs-measurement shrinkage of X only. Compare against a
        // hand-built dense solve.
        let ctx = ModelContext::new(tiny_config(), tiny_dataset()).unwrap();
        let mut rng = RngStream::new(23);
        let mut state = init_state(&ctx, &mut rng).unwrap();
        state.beta[0] = 0.0;
        let n_areas = ctx.n();
        let mut q = ctx.car[0].base_precision.clone() / state.sigma2_w[0];
        for i in 0..n_areas {
            q[(i, i)] += ctx.me_precision[0][i];
        }
        let b = DVector::from_fn(n_areas, |i, _| ctx.me_precision[0][i] * ctx.x[(i, 0)]);
        let expected = q.clone().try_inverse().unwrap() * b;
        let n = 100_000;
        let mut sums = DVector::zeros(n_areas);
        let mut warn = 0;
        for _ in 0..n {
            update_w(&mut state, &ctx, &mut rng, &mut warn).unwrap();
            sums += state.w.column(0);
        }
        let mean = sums / n as f64;
        assert_relative_eq!(mean[0], expected[0], epsilon = 0.02);
        assert_relative_eq!(mean[1], expected[1], epsilon = 0.02);
    }

    #[test]
    fn config_validation() {
        let mut c = ModelConfig::default();
        c.burn_in = c.iterations;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::default();
        c.thin = 0;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::default();
        c.hyperpriors.tau2 = (0.0, 1.0);
        assert!(c.validate().is_err());
        assert!(ModelConfig::default().validate().is_ok());
    }
}
