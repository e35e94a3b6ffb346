//! Command-line front end: data ingestion, basis diagnostics, model
//! fitting, replicate studies, pseudo-data simulation, and
//! re-summarization of saved chains.
//!
//! Every command writes into a run directory containing `manifest.json`
//! (resolved configuration, seed, input digests, timings, warnings) plus
//! command-specific CSV/JSON artifacts. Failures exit with code 1 and a
//! single machine-parsable line `category=<cat> <message>` on stderr.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use sha2::{Digest, Sha256};

use hgt_sme::areal::{load_dataset, Dataset, ResponseKind, Schema};
use hgt_sme::evaluation::{
    dic_from_loglik, pointwise_loglik, summarize, waic_from_loglik, PdVariant,
};
use hgt_sme::hgt::data_scale_estimate;
use hgt_sme::sampler::{run_gibbs, run_naive, ChainOutput, ModelConfig, ModelKind};
use hgt_sme::simharness::{
    gen_gaussian_pseudo, gen_poisson_pseudo, run_study, synthetic_base_table, StudyDesign,
    StudySpec,
};
use hgt_sme::spatial::{block_diagonal, mi_operator, mi_spectrum, moran_basis, stack_rows, RankSpec};
use hgt_sme::stochastics::RngStream;
use hgt_sme::{Error, Result};

#[derive(Parser)]
#[command(name = "hgt-sme", version, about = "Spatial mixed-effect models with covariate measurement error")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the measurement-error model (or the naive model) to a dataset.
    Fit(FitArgs),
    /// Run a replicate study comparing the measurement-error and naive models.
    Study(StudyArgs),
    /// Report the Moran basis spectrum and resolved ranks for a dataset.
    Basis(BasisArgs),
    /// Emit a synthetic base table plus one pseudo-data replicate.
    Simulate(SimulateArgs),
    /// Re-summarize the scalar chains of a saved run directory.
    Summarize(SummarizeArgs),
}

/// Sampler options shared by fitting commands; flags override the config
/// file, which overrides defaults.
#[derive(Args)]
struct SamplerFlags {
    /// JSON file with ModelConfig fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long)]
    rho: Option<f64>,
    /// Basis rank as a fraction of positive eigenvalues.
    #[arg(long)]
    r_frac: Option<f64>,
}

impl SamplerFlags {
    fn resolve(&self) -> Result<ModelConfig> {
        let mut config = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)?;
                serde_json::from_str::<ModelConfig>(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            }
            None => ModelConfig::default(),
        };
        if let Some(v) = self.seed {
            config.seed = v;
        }
        if let Some(v) = self.iterations {
            config.iterations = v;
        }
        if let Some(v) = self.burn_in {
            config.burn_in = v;
        }
        if let Some(v) = self.thin {
            config.thin = v;
        }
        if let Some(v) = self.rho {
            config.rho = v;
        }
        if let Some(v) = self.r_frac {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Config(format!(
                    "--r-frac must be in (0, 1], got {v}"
                )));
            }
            config.r_fraction = v;
            config.r_count = None;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args)]
struct FitArgs {
    /// Data table CSV (area_id, resp:*, cov:*, se:/moe:*, fixed:* columns).
    #[arg(long)]
    data: PathBuf,
    /// Adjacency edge list CSV (area_id,area_id per line).
    #[arg(long)]
    adj: PathBuf,
    /// Schema JSON describing the table columns.
    #[arg(long)]
    schema: PathBuf,
    #[command(flatten)]
    sampler: SamplerFlags,
    /// Fit the naive model (observed covariates treated as exact).
    #[arg(long)]
    naive: bool,
    /// Number of independent chains (seeds seed, seed+1, ...).
    #[arg(long, default_value_t = 1)]
    chains: usize,
    /// Output run directory.
    #[arg(long, default_value = "hgt-sme-run")]
    out: PathBuf,
}

#[derive(Args)]
struct StudyArgs {
    /// JSON study spec; flags override its fields.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output run directory.
    #[arg(long, default_value = "hgt-sme-study")]
    out: PathBuf,
}

#[derive(Args)]
struct BasisArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    adj: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    /// Extra fraction to resolve alongside 0.95/0.50/0.25.
    #[arg(long)]
    r_frac: Option<f64>,
    /// Output run directory.
    #[arg(long, default_value = "hgt-sme-basis")]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 25)]
    rows: usize,
    #[arg(long, default_value_t = 7)]
    cols: usize,
    /// Response design: poisson-only or gaussian-poisson.
    #[arg(long, default_value = "poisson-only")]
    design: String,
    /// Measurement-error variance of the observed covariate.
    #[arg(long, default_value_t = 0.5)]
    me_var: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output run directory.
    #[arg(long, default_value = "hgt-sme-sim")]
    out: PathBuf,
}

#[derive(Args)]
struct SummarizeArgs {
    /// Run directory containing chain*_scalars.csv files.
    #[arg(long)]
    run: PathBuf,
}

/// Defaults for the study command; the spec file and flags override them.
#[derive(Debug, Clone, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
struct StudyFileSpec {
    rows: usize,
    cols: usize,
    design: StudyDesign,
    me_variance: f64,
    /// Seed for the synthetic base table.
    base_seed: u64,
    /// Seed for replicate data generation and fitting.
    seed: u64,
    replicates: usize,
    config: ModelConfig,
}

impl Default for StudyFileSpec {
    fn default() -> Self {
        StudyFileSpec {
            rows: 25,
            cols: 7,
            design: StudyDesign::PoissonOnly,
            me_variance: 0.5,
            base_seed: 0,
            seed: 0,
            replicates: 50,
            config: ModelConfig::default(),
        }
    }
}

#[derive(Serialize)]
struct Manifest {
    version: String,
    command: String,
    model: Option<ModelKind>,
    seed: u64,
    chains: usize,
    config: serde_json::Value,
    input_digests: Vec<(String, String)>,
    timings_ms: u128,
    warnings: u64,
    basis_rank: Option<usize>,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n")?;
    Ok(())
}

/// Column labels for the scalar chain CSV of one fitted chain.
fn scalar_columns(chain: &ChainOutput, dataset: &Dataset) -> Vec<String> {
    let mut cols = vec!["iteration".to_string()];
    let cov_names: Vec<&str> = dataset.error_prone.iter().map(|c| c.name.as_str()).collect();
    match chain.model {
        ModelKind::HgtSme => {
            for name in &cov_names {
                cols.push(format!("beta_{name}"));
            }
            for name in &dataset.fixed.names {
                cols.push(format!("delta_{name}"));
            }
            for name in &cov_names {
                cols.push(format!("sigma2_w_{name}"));
            }
        }
        ModelKind::Naive => {
            for name in &cov_names {
                cols.push(format!("beta_{name}"));
            }
            for name in &dataset.fixed.names {
                cols.push(format!("beta_{name}"));
            }
        }
    }
    cols.push("sigma2_eta".into());
    cols.push("sigma2_xi".into());
    cols.push("tau2".into());
    cols
}

/// One row of scalar draws at retained index t.
fn scalar_row(chain: &ChainOutput, t: usize) -> Vec<f64> {
    let mut row = Vec::new();
    row.extend(chain.beta[t].iter());
    if chain.model == ModelKind::HgtSme {
        row.extend(chain.delta[t].iter());
        row.extend(chain.sigma2_w[t].iter());
    }
    row.push(chain.sigma2_eta[t]);
    row.push(chain.sigma2_xi[t]);
    row.push(chain.tau2[t]);
    row
}

fn write_scalar_chain(path: &Path, chain: &ChainOutput, dataset: &Dataset) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(scalar_columns(chain, dataset))?;
    for t in 0..chain.retained() {
        let mut record = vec![t.to_string()];
        record.extend(scalar_row(chain, t).iter().map(|v| v.to_string()));
        wtr.write_record(&record)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Companion file with the per-area latent covariate draws.
fn write_w_chain(path: &Path, chain: &ChainOutput, dataset: &Dataset) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    let mut header = vec!["iteration".to_string()];
    for cov in &dataset.error_prone {
        for id in &dataset.area_ids {
            header.push(format!("w_{}_{}", cov.name, id));
        }
    }
    wtr.write_record(&header)?;
    for t in 0..chain.retained() {
        let mut record = vec![t.to_string()];
        let w = &chain.w[t];
        for k in 0..w.ncols() {
            for i in 0..w.nrows() {
                record.push(w[(i, k)].to_string());
            }
        }
        wtr.write_record(&record)?;
    }
    wtr.flush()?;
    Ok(())
}

fn write_summary(
    path: &Path,
    chains: &[ChainOutput],
    dataset: &Dataset,
) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(["param", "mean", "sd", "q2_5", "median", "q97_5"])?;
    let cols = scalar_columns(&chains[0], dataset);
    // pool scalar draws across chains, column by column
    let width = scalar_row(&chains[0], 0).len();
    for c in 0..width {
        let mut series = Vec::new();
        for chain in chains {
            for t in 0..chain.retained() {
                series.push(scalar_row(chain, t)[c]);
            }
        }
        let s = summarize(&series)?;
        wtr.write_record([
            cols[c + 1].clone(),
            s.mean.to_string(),
            s.sd.to_string(),
            s.q2_5.to_string(),
            s.median.to_string(),
            s.q97_5.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Data-scale structured-mean predictions pooled across chains.
fn write_predictions(path: &Path, chains: &[ChainOutput], dataset: &Dataset) -> Result<()> {
    let layout = chains[0].layout;
    let pooled: Vec<DVector<f64>> = chains
        .iter()
        .flat_map(|c| c.smooth_mean.iter().cloned())
        .collect();
    let est = data_scale_estimate(&pooled, layout, &dataset.responses)?;
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(["block", "area_id", "mean", "sd"])?;
    for (b, block) in dataset.responses.iter().enumerate() {
        for (i, id) in dataset.area_ids.iter().enumerate() {
            let pos = layout.position(b, i);
            wtr.write_record([
                block.name.clone(),
                id.clone(),
                est.mean[pos].to_string(),
                est.sd[pos].to_string(),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct Comparison {
    dic: f64,
    p_dic: f64,
    waic: f64,
    p_waic: f64,
}

/// Information criteria from structured-mean draws pooled across chains.
fn comparison(chains: &[ChainOutput], dataset: &Dataset) -> Result<Comparison> {
    let layout = chains[0].layout;
    let mut lls = Vec::new();
    let mut mean_mu = DVector::zeros(layout.len());
    let mut count = 0usize;
    for chain in chains {
        for mu in &chain.smooth_mean {
            lls.push(pointwise_loglik(&dataset.responses, layout, mu)?);
            mean_mu += mu;
            count += 1;
        }
    }
    mean_mu /= count as f64;
    let at_mean = pointwise_loglik(&dataset.responses, layout, &mean_mu)?;
    let dic = dic_from_loglik(&lls, &at_mean, PdVariant::MeanDeviance)?;
    let waic = waic_from_loglik(&lls)?;
    Ok(Comparison {
        dic: dic.dic,
        p_dic: dic.p_d,
        waic: waic.waic,
        p_waic: waic.p_waic,
    })
}

fn cmd_fit(args: &FitArgs) -> Result<()> {
    let start = Instant::now();
    if args.chains == 0 {
        return Err(Error::Config("--chains must be >= 1".into()));
    }
    let config = args.sampler.resolve()?;
    let schema_text = fs::read_to_string(&args.schema)?;
    let schema: Schema = serde_json::from_str(&schema_text)
        .map_err(|e| Error::Config(format!("{}: {e}", args.schema.display())))?;
    let dataset = load_dataset(&args.data, &args.adj, &schema)?;

    fs::create_dir_all(&args.out)?;
    let mut chains = Vec::with_capacity(args.chains);
    for c in 0..args.chains {
        let mut chain_config = config.clone();
        chain_config.seed = config.seed + c as u64;
        let chain = if args.naive {
            run_naive(&chain_config, &dataset)?
        } else {
            run_gibbs(&chain_config, &dataset)?
        };
        write_scalar_chain(
            &args.out.join(format!("chain{c}_scalars.csv")),
            &chain,
            &dataset,
        )?;
        if chain.model == ModelKind::HgtSme {
            write_w_chain(&args.out.join(format!("chain{c}_w.csv")), &chain, &dataset)?;
        }
        chains.push(chain);
    }
    write_summary(&args.out.join("summary.csv"), &chains, &dataset)?;
    write_predictions(&args.out.join("predictions.csv"), &chains, &dataset)?;
    write_json(&args.out.join("comparison.json"), &comparison(&chains, &dataset)?)?;

    let mut digests = vec![
        ("data".to_string(), sha256_file(&args.data)?),
        ("adjacency".to_string(), sha256_file(&args.adj)?),
        ("schema".to_string(), sha256_file(&args.schema)?),
    ];
    if let Some(cfg) = &args.sampler.config {
        digests.push(("config".to_string(), sha256_file(cfg)?));
    }
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: "fit".into(),
        model: Some(chains[0].model),
        seed: config.seed,
        chains: args.chains,
        config: serde_json::to_value(&config)?,
        input_digests: digests,
        timings_ms: start.elapsed().as_millis(),
        warnings: chains.iter().map(|c| c.warnings).sum(),
        basis_rank: Some(chains[0].r),
    };
    write_json(&args.out.join("manifest.json"), &manifest)?;
    println!(
        "fit: {} chain(s), {} retained draws each, r = {}, output in {}",
        args.chains,
        chains[0].retained(),
        chains[0].r,
        args.out.display()
    );
    Ok(())
}

fn cmd_study(args: &StudyArgs) -> Result<()> {
    let start = Instant::now();
    let mut file_spec = match &args.spec {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            serde_json::from_str::<StudyFileSpec>(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => StudyFileSpec::default(),
    };
    if let Some(r) = args.replicates {
        file_spec.replicates = r;
    }
    if let Some(s) = args.seed {
        file_spec.seed = s;
    }
    file_spec.config.validate()?;

    let base = synthetic_base_table(
        file_spec.rows,
        file_spec.cols,
        file_spec.design,
        file_spec.me_variance,
        file_spec.base_seed,
    )?;
    let spec = StudySpec {
        base,
        replicates: file_spec.replicates,
        config: file_spec.config.clone(),
        seed: file_spec.seed,
    };
    let result = run_study(&spec)?;

    fs::create_dir_all(&args.out)?;
    write_json(&args.out.join("study.json"), &result)?;
    let mut wtr = csv::Writer::from_path(args.out.join("study.csv"))?;
    wtr.write_record([
        "replicate", "block", "model", "rmse", "mse", "mae",
    ])?;
    for rec in &result.per_replicate {
        for (b, block) in spec.base.responses.iter().enumerate() {
            for (model, m) in [("hgt-sme", &rec.me_model[b]), ("naive", &rec.naive[b])] {
                wtr.write_record([
                    rec.index.to_string(),
                    block.name.clone(),
                    model.to_string(),
                    m.rmse.to_string(),
                    m.mse.to_string(),
                    m.mae.to_string(),
                ])?;
            }
        }
    }
    wtr.flush()?;

    let mut digests = Vec::new();
    if let Some(path) = &args.spec {
        digests.push(("spec".to_string(), sha256_file(path)?));
    }
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: "study".into(),
        model: None,
        seed: file_spec.seed,
        chains: 1,
        config: serde_json::to_value(&file_spec.config)?,
        input_digests: digests,
        timings_ms: start.elapsed().as_millis(),
        warnings: result.failed as u64,
        basis_rank: None,
    };
    write_json(&args.out.join("manifest.json"), &manifest)?;
    for agg in &result.aggregate {
        println!(
            "block {}: median MSE reduction {:.1}%, MAE reduction {:.1}% (me {:.4} vs naive {:.4} MSE)",
            agg.block, agg.reduction.mse, agg.reduction.mae, agg.me_model.mse, agg.naive.mse
        );
    }
    Ok(())
}

fn cmd_basis(args: &BasisArgs) -> Result<()> {
    let start = Instant::now();
    let schema_text = fs::read_to_string(&args.schema)?;
    let schema: Schema = serde_json::from_str(&schema_text)
        .map_err(|e| Error::Config(format!("{}: {e}", args.schema.display())))?;
    let dataset = load_dataset(&args.data, &args.adj, &schema)?;

    let n = dataset.n_areas();
    let j = dataset.n_blocks();
    let p = dataset.error_prone.len();
    let q = dataset.fixed.matrix.ncols();
    let mut design = DMatrix::zeros(n, p + q);
    for (k, cov) in dataset.error_prone.iter().enumerate() {
        design.set_column(k, &cov.observed);
    }
    design
        .view_mut((0, p), (n, q))
        .copy_from(&dataset.fixed.matrix);
    let design = stack_rows(&design, j);
    let adjacency = block_diagonal(dataset.graph.adjacency(), j);
    let g = mi_operator(&design, &adjacency)?;
    let spectrum = mi_spectrum(&g)?;

    let mut fractions = vec![0.95, 0.50, 0.25];
    if let Some(f) = args.r_frac {
        fractions.push(f);
    }
    let mut resolved = Vec::new();
    for f in &fractions {
        let basis = moran_basis(&g, RankSpec::Fraction(*f))?;
        resolved.push((*f, basis.r, basis.positive_eigen_count));
    }

    fs::create_dir_all(&args.out)?;
    let mut wtr = csv::Writer::from_path(args.out.join("spectrum.csv"))?;
    wtr.write_record(["index", "eigenvalue"])?;
    for (i, v) in spectrum.iter().enumerate() {
        wtr.write_record([i.to_string(), v.to_string()])?;
    }
    wtr.flush()?;

    println!("positive_eigen_count={}", resolved[0].2);
    for (f, r, _) in &resolved {
        println!("r[{f}]={r}");
    }

    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: "basis".into(),
        model: None,
        seed: 0,
        chains: 0,
        config: serde_json::Value::Null,
        input_digests: vec![
            ("data".to_string(), sha256_file(&args.data)?),
            ("adjacency".to_string(), sha256_file(&args.adj)?),
            ("schema".to_string(), sha256_file(&args.schema)?),
        ],
        timings_ms: start.elapsed().as_millis(),
        warnings: 0,
        basis_rank: Some(resolved[0].1),
    };
    write_json(&args.out.join("manifest.json"), &manifest)?;
    Ok(())
}

fn parse_design(s: &str) -> Result<StudyDesign> {
    match s {
        "poisson-only" => Ok(StudyDesign::PoissonOnly),
        "gaussian-poisson" => Ok(StudyDesign::GaussianPoisson),
        other => Err(Error::Config(format!(
            "unknown design '{other}' (expected poisson-only or gaussian-poisson)"
        ))),
    }
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let start = Instant::now();
    let design = parse_design(&args.design)?;
    let base = synthetic_base_table(args.rows, args.cols, design, args.me_var, args.seed)?;
    let mut rng = RngStream::new(args.seed).substream(1);
    let pseudo: Vec<DVector<f64>> = base
        .responses
        .iter()
        .map(|block| match block.kind {
            ResponseKind::Poisson => gen_poisson_pseudo(&block.values, &mut rng),
            ResponseKind::Gaussian => gen_gaussian_pseudo(&block.values, &mut rng),
            ResponseKind::Binomial => Err(Error::Config(
                "simulate supports Gaussian and Poisson blocks".into(),
            )),
        })
        .collect::<Result<_>>()?;

    fs::create_dir_all(&args.out)?;
    // data table with pseudo responses
    let mut wtr = csv::Writer::from_path(args.out.join("data.csv"))?;
    let mut header = vec!["area_id".to_string()];
    for block in &base.responses {
        header.push(format!("resp:{}", block.name));
    }
    header.push("cov:x".into());
    header.push("se:x".into());
    header.push("fixed:s".into());
    wtr.write_record(&header)?;
    let se = args.me_var.max(1e-12).sqrt();
    for i in 0..base.n_areas() {
        let mut record = vec![base.area_ids[i].clone()];
        for block in &pseudo {
            record.push(block[i].to_string());
        }
        record.push(base.error_prone[0].observed[i].to_string());
        record.push(se.to_string());
        record.push(base.fixed.matrix[(i, 1)].to_string());
        wtr.write_record(&record)?;
    }
    wtr.flush()?;

    // adjacency edge list (each undirected edge once)
    let mut lines = Vec::new();
    let adj = base.graph.adjacency();
    for i in 0..base.n_areas() {
        for k in (i + 1)..base.n_areas() {
            if adj[(i, k)] != 0.0 {
                lines.push(format!("{},{}", base.area_ids[i], base.area_ids[k]));
            }
        }
    }
    fs::write(args.out.join("adjacency.csv"), lines.join("\n") + "\n")?;

    // matching schema for `fit`
    let schema = serde_json::json!({
        "responses": base.responses.iter().map(|b| serde_json::json!({
            "name": b.name,
            "kind": match b.kind {
                ResponseKind::Gaussian => "gaussian",
                ResponseKind::Poisson => "poisson",
                ResponseKind::Binomial => "binomial",
            },
            "gaussian_variance": 1.0,
        })).collect::<Vec<_>>(),
        "covariates": [{"name": "x"}],
        "fixed": ["s"],
        "intercept": true,
    });
    write_json(&args.out.join("schema.json"), &schema)?;

    // truth record: base values and true data-scale means
    let mut wtr = csv::Writer::from_path(args.out.join("truth.csv"))?;
    let mut header = vec!["area_id".to_string()];
    for block in &base.responses {
        header.push(format!("base:{}", block.name));
        header.push(format!("mean:{}", block.name));
    }
    wtr.write_record(&header)?;
    for i in 0..base.n_areas() {
        let mut record = vec![base.area_ids[i].clone()];
        for block in &base.responses {
            let truth_mean = match block.kind {
                ResponseKind::Poisson => block.values[i] + 1.0,
                _ => block.values[i].ln(),
            };
            record.push(block.values[i].to_string());
            record.push(truth_mean.to_string());
        }
        wtr.write_record(&record)?;
    }
    wtr.flush()?;

    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: "simulate".into(),
        model: None,
        seed: args.seed,
        chains: 0,
        config: serde_json::Value::Null,
        input_digests: Vec::new(),
        timings_ms: start.elapsed().as_millis(),
        warnings: 0,
        basis_rank: None,
    };
    write_json(&args.out.join("manifest.json"), &manifest)?;
    println!(
        "simulate: {} areas, design {}, output in {}",
        base.n_areas(),
        args.design,
        args.out.display()
    );
    Ok(())
}

fn cmd_summarize(args: &SummarizeArgs) -> Result<()> {
    let mut files: Vec<PathBuf> = fs::read_dir(&args.run)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .map(|n| n.starts_with("chain") && n.ends_with("_scalars.csv"))
                .unwrap_or(false)
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Ingestion(format!(
            "no chain*_scalars.csv files in {}",
            args.run.display()
        )));
    }
    // pool draws per column name across chains
    let mut columns: Vec<String> = Vec::new();
    let mut series: Vec<Vec<f64>> = Vec::new();
    for file in &files {
        let mut reader = csv::Reader::from_path(file)?;
        let headers = reader.headers()?.clone();
        if columns.is_empty() {
            columns = headers.iter().skip(1).map(String::from).collect();
            series = vec![Vec::new(); columns.len()];
        } else if headers.len() != columns.len() + 1 {
            return Err(Error::Ingestion(format!(
                "chain files disagree on columns: {}",
                file.display()
            )));
        }
        for record in reader.records() {
            let record = record?;
            for (c, cell) in record.iter().skip(1).enumerate() {
                let v: f64 = cell.parse().map_err(|_| {
                    Error::Ingestion(format!("non-numeric cell in {}", file.display()))
                })?;
                series[c].push(v);
            }
        }
    }
    let path = args.run.join("summary.csv");
    let mut wtr = csv::Writer::from_path(&path)?;
    wtr.write_record(["param", "mean", "sd", "q2_5", "median", "q97_5"])?;
    for (c, name) in columns.iter().enumerate() {
        let s = summarize(&series[c])?;
        wtr.write_record([
            name.clone(),
            s.mean.to_string(),
            s.sd.to_string(),
            s.q2_5.to_string(),
            s.median.to_string(),
            s.q97_5.to_string(),
        ])?;
    }
    wtr.flush()?;
    println!(
        "summarize: {} chains, {} parameters, wrote {}",
        files.len(),
        columns.len(),
        path.display()
    );
    Ok(())
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Study(args) => cmd_study(args),
        Command::Basis(args) => cmd_basis(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Summarize(args) => cmd_summarize(args),
    }
}

fn main() {
    if let Err(e) = run() {
        eprintln!("category={} {e}", e.category());
        std::process::exit(1);
    }
}
