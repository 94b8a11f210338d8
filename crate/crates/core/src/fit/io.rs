//! Versioned JSON model files.
//!
//! Top-level fields:
//!
//! - `format`: always `"ztps-regression"`.
//! - `version`: format version, currently 1. Other versions are rejected.
//! - `tree`: Newick text of the partition tree. Internal nodes are numbered
//!   in pre-order from this text.
//! - `species`: leaf names in tree order (a consistency check).
//! - `covariates`: raw covariate names; the intercept is implicit.
//! - `global`: `family` (`poisson` | `neg_bin`), `beta` (intercept first),
//!   `log_dispersion` (ln α, negative binomial only, `Var = μ + αμ²`) and
//!   optional `zi` logit coefficients for zeros of the total.
//! - `nodes`: one entry per internal node in pre-order with `node` (arena
//!   id), `name` and `spec` holding `family` (`binomial` | `beta_binomial`),
//!   `zi_side` (`none` | `side1` | `side2`), `beta` (logit of the first
//!   child's proportion), `delta` (log σ, beta-binomial only) and `b` (logit
//!   of the structural-zero weight, zero-inflated only).
//! - `fit`: optional diagnostics with `global`, `nodes` (per-node
//!   log-likelihood, parameter count, AIC, BIC, standard errors, convergence
//!   and the candidate table) and `totals`.
//!
//! Floats are written in shortest round-trip form, so coefficients survive
//! export and import bit for bit.

use serde::{Deserialize, Serialize};

use super::{FittedZtpsRegression, GlobalReport, NodeReport, Totals, ZtpsRegression};
use crate::error::{Error, Result};
use crate::regression::{GlobalRegSpec, NodeRegSpec};
use crate::tree::{NodeId, PartitionTree};

pub const FORMAT_NAME: &str = "ztps-regression";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    tree: String,
    species: Vec<String>,
    covariates: Vec<String>,
    global: GlobalRegSpec,
    nodes: Vec<NodeEntry>,
    fit: Option<FitSection>,
}

#[derive(Serialize, Deserialize)]
struct NodeEntry {
    node: NodeId,
    name: String,
    spec: NodeRegSpec,
}

#[derive(Serialize, Deserialize)]
struct FitSection {
    global: GlobalReport,
    nodes: Vec<NodeReport>,
    totals: Totals,
}

fn to_file(model: &ZtpsRegression, fit: Option<FitSection>) -> ModelFile {
    let tree = model.tree();
    ModelFile {
        format: FORMAT_NAME.into(),
        version: FORMAT_VERSION,
        tree: tree.to_newick(),
        species: tree.species_names().to_vec(),
        covariates: model.covariate_names().to_vec(),
        global: model.global().clone(),
        nodes: model
            .nodes()
            .iter()
            .zip(tree.internal_nodes())
            .map(|(spec, &id)| NodeEntry {
                node: id,
                name: tree.display_name(id),
                spec: spec.clone(),
            })
            .collect(),
        fit,
    }
}

fn write(file: &ModelFile) -> Result<String> {
    serde_json::to_string_pretty(file).map_err(|e| Error::Format(e.to_string()))
}

/// Serializes a fitted model with its diagnostics.
pub fn export_model(fitted: &FittedZtpsRegression) -> Result<String> {
    write(&to_file(
        &fitted.model,
        Some(FitSection {
            global: fitted.global.clone(),
            nodes: fitted.nodes.clone(),
            totals: fitted.totals,
        }),
    ))
}

/// Serializes coefficients only, e.g. a simulation truth.
pub fn export_regression(model: &ZtpsRegression) -> Result<String> {
    write(&to_file(model, None))
}

fn read(text: &str) -> Result<(ZtpsRegression, Option<FitSection>)> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
    match value.get("format").and_then(|v| v.as_str()) {
        Some(FORMAT_NAME) => {}
        other => return Err(Error::Format(format!("expected format {FORMAT_NAME:?}, found {other:?}"))),
    }
    match value.get("version").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(FORMAT_VERSION) => {}
        other => {
            return Err(Error::Format(format!(
                "unsupported model file version {other:?}; this build reads version {FORMAT_VERSION}"
            )))
        }
    }
    let file: ModelFile = serde_json::from_value(value).map_err(|e| Error::Format(e.to_string()))?;
    let tree = PartitionTree::parse_newick(&file.tree)?;
    if tree.species_names() != file.species.as_slice() {
        return Err(Error::Format("species list does not match the tree's leaf order".into()));
    }
    if file.nodes.len() != tree.n_internal()
        || file.nodes.iter().zip(tree.internal_nodes()).any(|(e, &id)| e.node != id)
    {
        return Err(Error::Format("node entries do not match the tree's internal nodes".into()));
    }
    let nodes = file.nodes.into_iter().map(|e| e.spec).collect();
    let model = ZtpsRegression::new(tree, file.covariates, file.global, nodes)?;
    Ok((model, file.fit))
}

/// Reads a model file written by [`export_model`].
pub fn import_model(text: &str) -> Result<FittedZtpsRegression> {
    let (model, fit) = read(text)?;
    let fit = fit.ok_or_else(|| Error::Format("model file has no fit section".into()))?;
    FittedZtpsRegression::new(model, fit.global, fit.nodes)
}

/// Reads the coefficients of any model file.
pub fn import_regression(text: &str) -> Result<ZtpsRegression> {
    read(text).map(|(model, _)| model)
}
