//! Areal survey data: adjacency graphs, response blocks, error-prone
//! covariates, and CSV ingestion.
//!
//! Data table format (UTF-8 CSV, header row):
//!
//! * `area_id` — unique area identifier,
//! * `resp:<name>` — one column per response block,
//! * `trials:<name>` — trial totals, Binomial responses only,
//! * `cov:<name>` + `moe:<name>` or `se:<name>` — error-prone covariates
//!   with their margin of error or standard error on the raw scale,
//! * `fixed:<name>` — covariates measured without error.
//!
//! The adjacency file is an undirected edge list, one `id1,id2` pair per
//! line; duplicate edges are collapsed.
//!
//! Error-prone covariates are stored on the transformed (model) scale after
//! ingestion; the raw values are kept for reporting only.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Neighborhood structure over N areal units: symmetric binary adjacency
/// with zero diagonal, plus the neighbor-count diagonal.
#[derive(Debug, Clone)]
pub struct ArealGraph {
    n_areas: usize,
    adjacency: DMatrix<f64>,
    degrees: Vec<usize>,
}

impl ArealGraph {
    /// Build from an undirected edge list over areas `0..n_areas`.
    /// Self-loops and isolated areas are rejected: an area with no
    /// neighbors would make the CAR precision singular.
    pub fn from_edges(n_areas: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n_areas < 2 {
            return Err(Error::Domain(format!(
                "graph needs at least 2 areas, got {n_areas}"
            )));
        }
        let mut adjacency = DMatrix::zeros(n_areas, n_areas);
        for &(a, b) in edges {
            if a >= n_areas || b >= n_areas {
                return Err(Error::Domain(format!(
                    "edge ({a}, {b}) out of range for {n_areas} areas"
                )));
            }
            if a == b {
                return Err(Error::Domain(format!("self-loop on area {a}")));
            }
            adjacency[(a, b)] = 1.0;
            adjacency[(b, a)] = 1.0;
        }
        let degrees: Vec<usize> = (0..n_areas)
            .map(|i| adjacency.row(i).iter().filter(|&&v| v != 0.0).count())
            .collect();
        if let Some(isolated) = degrees.iter().position(|&d| d == 0) {
            return Err(Error::Domain(format!(
                "area index {isolated} has no neighbors; isolated areas are not supported"
            )));
        }
        Ok(ArealGraph {
            n_areas,
            adjacency,
            degrees,
        })
    }

    /// Regular grid graph with rook (4-neighbor) adjacency.
    pub fn lattice(rows: usize, cols: usize) -> Result<Self> {
        let idx = |r: usize, c: usize| r * cols + c;
        let mut edges = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                if c + 1 < cols {
                    edges.push((idx(r, c), idx(r, c + 1)));
                }
                if r + 1 < rows {
                    edges.push((idx(r, c), idx(r + 1, c)));
                }
            }
        }
        ArealGraph::from_edges(rows * cols, &edges)
    }

    pub fn n_areas(&self) -> usize {
        self.n_areas
    }

    pub fn adjacency(&self) -> &DMatrix<f64> {
        &self.adjacency
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    pub fn degree_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_iterator(
            self.n_areas,
            self.degrees.iter().map(|&d| d as f64),
        ))
    }
}

/// Response distribution families supported by the transformation layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseKind {
    Gaussian,
    Poisson,
    Binomial,
}

/// One response block: N observed values of a single type.
#[derive(Debug, Clone)]
pub struct ResponseBlock {
    pub name: String,
    pub kind: ResponseKind,
    /// Observed values; integer-valued for Poisson and Binomial.
    pub values: DVector<f64>,
    /// Data-model variance for Gaussian blocks.
    pub gaussian_variance: f64,
    /// Trial totals for Binomial blocks.
    pub trials: Option<Vec<u64>>,
}

impl ResponseBlock {
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            ResponseKind::Gaussian => {
                if !(self.gaussian_variance > 0.0) {
                    return Err(Error::Domain(format!(
                        "response '{}': gaussian_variance must be positive, got {}",
                        self.name, self.gaussian_variance
                    )));
                }
            }
            ResponseKind::Poisson => {
                for (i, &z) in self.values.iter().enumerate() {
                    if z < 0.0 || z.fract() != 0.0 {
                        return Err(Error::Domain(format!(
                            "response '{}': value {z} at area index {i} is not a nonnegative integer",
                            self.name
                        )));
                    }
                }
            }
            ResponseKind::Binomial => {
                let trials = self.trials.as_ref().ok_or_else(|| {
                    Error::Domain(format!("response '{}': binomial block missing trials", self.name))
                })?;
                if trials.len() != self.values.len() {
                    return Err(Error::Domain(format!(
                        "response '{}': {} trials for {} values",
                        self.name,
                        trials.len(),
                        self.values.len()
                    )));
                }
                for (i, (&z, &b)) in self.values.iter().zip(trials.iter()).enumerate() {
                    if z < 0.0 || z.fract() != 0.0 || z > b as f64 {
                        return Err(Error::Domain(format!(
                            "response '{}': value {z} at area index {i} outside 0..={b}",
                            self.name
                        )));
                    }
                    if b == 0 {
                        return Err(Error::Domain(format!(
                            "response '{}': zero trials at area index {i}",
                            self.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Variable transform applied to error-prone covariates at ingestion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    #[default]
    Identity,
    Log,
    Logit,
}

impl Transform {
    pub fn apply(self, x: f64) -> Result<f64> {
        match self {
            Transform::Identity => Ok(x),
            Transform::Log => {
                if x > 0.0 {
                    Ok(x.ln())
                } else {
                    Err(Error::Domain(format!("log transform requires x > 0, got {x}")))
                }
            }
            Transform::Logit => {
                if x > 0.0 && x < 1.0 {
                    Ok((x / (1.0 - x)).ln())
                } else {
                    Err(Error::Domain(format!(
                        "logit transform requires x in (0, 1), got {x}"
                    )))
                }
            }
        }
    }

    pub fn invert(self, y: f64) -> f64 {
        match self {
            Transform::Identity => y,
            Transform::Log => y.exp(),
            Transform::Logit => 1.0 / (1.0 + (-y).exp()),
        }
    }
}

/// Convert a margin of error to a standard error given the z-value of the
/// published confidence level (1.645 for the 90% convention).
pub fn moe_to_se(moe: f64, z: f64) -> Result<f64> {
    if !(moe > 0.0) {
        return Err(Error::Domain(format!("moe must be positive, got {moe}")));
    }
    if !(z > 0.0) {
        return Err(Error::Domain(format!("z must be positive, got {z}")));
    }
    Ok(moe / z)
}

/// First-order (delta method) propagation of a standard error through a
/// transform: returns the transformed value and its approximate SE.
pub fn delta_transform(estimate: f64, se: f64, transform: Transform) -> Result<(f64, f64)> {
    if !(se > 0.0) {
        return Err(Error::Domain(format!("se must be positive, got {se}")));
    }
    let value = transform.apply(estimate)?;
    let dse = match transform {
        Transform::Identity => se,
        Transform::Log => se / estimate,
        Transform::Logit => se / (estimate * (1.0 - estimate)),
    };
    Ok((value, dse))
}

/// CAR hyperparameters attached to one error-prone covariate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CarParams {
    /// Spatial autocorrelation; |rho| < 1.
    pub rho: f64,
    /// Inverse-gamma prior (shape, scale) on the CAR variance.
    pub sigma2_prior: (f64, f64),
}

impl Default for CarParams {
    fn default() -> Self {
        CarParams {
            rho: 0.99,
            sigma2_prior: (2.0, 1.0),
        }
    }
}

/// One covariate observed with measurement error, stored on the model
/// (transformed) scale.
#[derive(Debug, Clone)]
pub struct ErrorProneCovariate {
    pub name: String,
    /// Observed estimates on the transformed scale.
    pub observed: DVector<f64>,
    /// Raw (untransformed) estimates, kept for reporting.
    pub raw: DVector<f64>,
    /// Per-area measurement-error variances on the transformed scale
    /// (diagonal of Sigma_U).
    pub me_variances: DVector<f64>,
    pub transform: Transform,
    pub car: CarParams,
}

impl ErrorProneCovariate {
    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self.me_variances.iter().position(|&v| !(v > 0.0)) {
            return Err(Error::Domain(format!(
                "covariate '{}': measurement-error variance {} at area index {i} is not positive",
                self.name, self.me_variances[i]
            )));
        }
        if !(self.car.rho.abs() < 1.0) {
            return Err(Error::Domain(format!(
                "covariate '{}': |rho| must be < 1, got {}",
                self.name, self.car.rho
            )));
        }
        Ok(())
    }
}

/// Diagonal measurement-error covariance for one covariate (length N).
pub fn assemble_sigma_u(covariate: &ErrorProneCovariate) -> Result<DMatrix<f64>> {
    covariate.validate()?;
    Ok(DMatrix::from_diagonal(&covariate.me_variances))
}

/// Design matrix of covariates measured without error (N x q), including an
/// intercept column when configured.
#[derive(Debug, Clone)]
pub struct FixedDesign {
    pub names: Vec<String>,
    pub matrix: DMatrix<f64>,
}

impl FixedDesign {
    pub fn validate(&self) -> Result<()> {
        if self.matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("fixed design contains non-finite entries".into()));
        }
        let q = self.matrix.ncols();
        if q > 0 {
            let gram = self.matrix.transpose() * &self.matrix;
            let rank = gram.rank(1e-10 * gram.norm().max(1.0));
            if rank < q {
                return Err(Error::Domain(format!(
                    "fixed design is rank-deficient: rank {rank} < {q} columns ({})",
                    self.names.join(", ")
                )));
            }
        }
        Ok(())
    }
}

/// A validated areal dataset: graph, J response blocks, p error-prone
/// covariates, and the fixed design.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub graph: ArealGraph,
    pub area_ids: Vec<String>,
    pub responses: Vec<ResponseBlock>,
    pub error_prone: Vec<ErrorProneCovariate>,
    pub fixed: FixedDesign,
}

impl Dataset {
    pub fn n_areas(&self) -> usize {
        self.graph.n_areas()
    }

    pub fn n_blocks(&self) -> usize {
        self.responses.len()
    }

    /// Stacked dimension N* = J * N.
    pub fn stacked_len(&self) -> usize {
        self.n_blocks() * self.n_areas()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_areas();
        if self.responses.is_empty() {
            return Err(Error::Domain("dataset needs at least one response block".into()));
        }
        if self.area_ids.len() != n {
            return Err(Error::Domain(format!(
                "{} area ids for {n} areas",
                self.area_ids.len()
            )));
        }
        for block in &self.responses {
            if block.values.len() != n {
                return Err(Error::Domain(format!(
                    "response '{}' has {} values for {n} areas",
                    block.name,
                    block.values.len()
                )));
            }
            block.validate()?;
        }
        for cov in &self.error_prone {
            if cov.observed.len() != n || cov.me_variances.len() != n {
                return Err(Error::Domain(format!(
                    "covariate '{}' length mismatch with {n} areas",
                    cov.name
                )));
            }
            cov.validate()?;
        }
        if self.fixed.matrix.nrows() != n {
            return Err(Error::Domain(format!(
                "fixed design has {} rows for {n} areas",
                self.fixed.matrix.nrows()
            )));
        }
        self.fixed.validate()?;
        Ok(())
    }
}

/// Column mapping and per-column options for `load_dataset`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Schema {
    pub responses: Vec<ResponseSchema>,
    #[serde(default)]
    pub covariates: Vec<CovariateSchema>,
    /// Names of `fixed:` columns to include, in design order.
    #[serde(default)]
    pub fixed: Vec<String>,
    /// Prepend an intercept column of ones to the fixed design.
    #[serde(default = "default_true")]
    pub intercept: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResponseSchema {
    pub name: String,
    pub kind: ResponseKind,
    /// Gaussian blocks only; data-model variance.
    #[serde(default = "default_gaussian_variance")]
    pub gaussian_variance: f64,
}

fn default_gaussian_variance() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovariateSchema {
    pub name: String,
    #[serde(default)]
    pub transform: Transform,
    /// z-value used to convert `moe:` columns to standard errors. Ignored
    /// when the table carries an `se:` column instead. ACS publishes 90%
    /// margins of error, hence the 1.645 default.
    #[serde(default = "default_moe_z")]
    pub moe_z: f64,
    #[serde(default)]
    pub car: CarParams,
}

fn default_moe_z() -> f64 {
    1.645
}

/// Load and validate a dataset from a data CSV and an adjacency edge list.
pub fn load_dataset(
    table_path: &Path,
    adjacency_path: &Path,
    schema: &Schema,
) -> Result<Dataset> {
    let mut reader = csv::Reader::from_path(table_path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Ingestion(format!("missing column '{name}' in {table_path:?}")))
    };
    let area_col = col("area_id")?;

    let mut area_ids: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut rows: Vec<csv::StringRecord> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let id = record
            .get(area_col)
            .ok_or_else(|| Error::Ingestion("short row".into()))?
            .to_string();
        if index.insert(id.clone(), area_ids.len()).is_some() {
            return Err(Error::Ingestion(format!("duplicate area id '{id}'")));
        }
        area_ids.push(id);
        rows.push(record);
    }
    let n = area_ids.len();
    let parse = |record: &csv::StringRecord, c: usize, row: usize, name: &str| -> Result<f64> {
        record
            .get(c)
            .and_then(|s| s.trim().parse::<f64>().ok())
            .ok_or_else(|| {
                Error::Ingestion(format!(
                    "non-numeric cell at row {} column '{name}'",
                    row + 2
                ))
            })
    };

    let mut responses = Vec::new();
    for rs in &schema.responses {
        let vc = col(&format!("resp:{}", rs.name))?;
        let mut values = DVector::zeros(n);
        for (i, record) in rows.iter().enumerate() {
            values[i] = parse(record, vc, i, &format!("resp:{}", rs.name))?;
        }
        let trials = if rs.kind == ResponseKind::Binomial {
            let tc = col(&format!("trials:{}", rs.name))?;
            let mut t = Vec::with_capacity(n);
            for (i, record) in rows.iter().enumerate() {
                t.push(parse(record, tc, i, &format!("trials:{}", rs.name))? as u64);
            }
            Some(t)
        } else {
            None
        };
        responses.push(ResponseBlock {
            name: rs.name.clone(),
            kind: rs.kind,
            values,
            gaussian_variance: rs.gaussian_variance,
            trials,
        });
    }

    let mut error_prone = Vec::new();
    for cs in &schema.covariates {
        let vc = col(&format!("cov:{}", cs.name))?;
        let se_col = headers.iter().position(|h| h == format!("se:{}", cs.name));
        let moe_col = headers.iter().position(|h| h == format!("moe:{}", cs.name));
        if se_col.is_none() && moe_col.is_none() {
            return Err(Error::Ingestion(format!(
                "covariate '{}' needs an 'se:{}' or 'moe:{}' column",
                cs.name, cs.name, cs.name
            )));
        }
        let mut raw = DVector::zeros(n);
        let mut observed = DVector::zeros(n);
        let mut me_variances = DVector::zeros(n);
        for (i, record) in rows.iter().enumerate() {
            let est = parse(record, vc, i, &format!("cov:{}", cs.name))?;
            let se = match (se_col, moe_col) {
                (Some(c), _) => parse(record, c, i, &format!("se:{}", cs.name))?,
                (None, Some(c)) => {
                    moe_to_se(parse(record, c, i, &format!("moe:{}", cs.name))?, cs.moe_z)?
                }
                (None, None) => unreachable!(),
            };
            let (value, tse) = delta_transform(est, se, cs.transform)?;
            raw[i] = est;
            observed[i] = value;
            me_variances[i] = tse * tse;
        }
        error_prone.push(ErrorProneCovariate {
            name: cs.name.clone(),
            observed,
            raw,
            me_variances,
            transform: cs.transform,
            car: cs.car.clone(),
        });
    }

    let q = schema.fixed.len() + usize::from(schema.intercept);
    let mut fixed_matrix = DMatrix::zeros(n, q);
    let mut fixed_names = Vec::new();
    let mut offset = 0;
    if schema.intercept {
        fixed_matrix.column_mut(0).fill(1.0);
        fixed_names.push("intercept".to_string());
        offset = 1;
    }
    for (j, name) in schema.fixed.iter().enumerate() {
        let c = col(&format!("fixed:{name}"))?;
        for (i, record) in rows.iter().enumerate() {
            fixed_matrix[(i, offset + j)] = parse(record, c, i, &format!("fixed:{name}"))?;
        }
        fixed_names.push(name.clone());
    }

    // adjacency edge list, resolved by area id
    let text = std::fs::read_to_string(adjacency_path)?;
    let mut edges = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.splitn(2, ',');
        let (a, b) = match (parts.next(), parts.next()) {
            (Some(a), Some(b)) => (a.trim(), b.trim()),
            _ => {
                return Err(Error::Ingestion(format!(
                    "adjacency line {}: expected 'id1,id2', got '{line}'",
                    lineno + 1
                )))
            }
        };
        let ia = *index.get(a).ok_or_else(|| {
            Error::Ingestion(format!("adjacency references unknown area id '{a}'"))
        })?;
        let ib = *index.get(b).ok_or_else(|| {
            Error::Ingestion(format!("adjacency references unknown area id '{b}'"))
        })?;
        edges.push((ia, ib));
    }
    let graph = ArealGraph::from_edges(n, &edges)?;

    let dataset = Dataset {
        graph,
        area_ids,
        responses,
        error_prone,
        fixed: FixedDesign {
            names: fixed_names,
            matrix: fixed_matrix,
        },
    };
    dataset.validate()?;
    Ok(dataset)
}
