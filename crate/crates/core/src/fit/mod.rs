//! Whole-tree regression fits: one global fit and one model selection per
//! internal node, run in parallel, plus prediction, size effects and model
//! files.

mod io;
mod model;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use io::{export_model, export_regression, import_model, import_regression, FORMAT_NAME, FORMAT_VERSION};
pub use model::{EffectRow, EffectTable, ZtpsRegression};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::regression::{
    fit_global, select_node_model, Candidate, CandidateOutcome, ConvergenceReport, GlobalData, GlobalFamily,
    GlobalFit, NodeData, NodeSelection, OptimControls, SplitFamily, ZiDesign, ZiSide, DEFAULT_CANDIDATES,
};
use crate::tree::{NodeId, PartitionTree};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub global_family: GlobalFamily,
    /// Structural zeros on the total abundance.
    pub global_zi: Option<ZiDesign>,
    pub candidates: Vec<Candidate>,
    pub zi_design: ZiDesign,
    pub controls: OptimControls,
    pub standard_errors: bool,
    /// Worker threads; `None` uses the rayon default. Results do not depend
    /// on it.
    #[serde(skip)]
    pub threads: Option<usize>,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            global_family: GlobalFamily::NegBin,
            global_zi: None,
            candidates: DEFAULT_CANDIDATES.to_vec(),
            zi_design: ZiDesign::Intercept,
            controls: OptimControls::default(),
            standard_errors: true,
            threads: None,
        }
    }
}

impl FitConfig {
    /// Restricts the candidate grid.
    pub fn with_candidates(mut self, families: &[SplitFamily], zero_inflation: bool) -> Self {
        let sides: &[ZiSide] = if zero_inflation {
            &[ZiSide::None, ZiSide::Side1, ZiSide::Side2]
        } else {
            &[ZiSide::None]
        };
        self.candidates = families
            .iter()
            .flat_map(|&family| sides.iter().map(move |&zi_side| Candidate { family, zi_side }))
            .collect();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalReport {
    pub loglik: f64,
    pub k: usize,
    pub n_obs: usize,
    pub aic: f64,
    pub bic: f64,
    pub se: Option<Vec<f64>>,
    pub convergence: ConvergenceReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeReport {
    pub node: NodeId,
    pub name: String,
    pub loglik: f64,
    pub k: usize,
    pub n_obs: usize,
    pub aic: f64,
    pub bic: f64,
    pub se: Option<Vec<f64>>,
    pub convergence: Option<ConvergenceReport>,
    pub candidates: Vec<CandidateOutcome>,
    pub flagged: bool,
    pub note: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub loglik: f64,
    pub k: usize,
    pub aic: f64,
    pub bic: f64,
}

impl Totals {
    fn sum(global: &GlobalReport, nodes: &[NodeReport]) -> Self {
        Totals {
            loglik: global.loglik + nodes.iter().map(|n| n.loglik).sum::<f64>(),
            k: global.k + nodes.iter().map(|n| n.k).sum::<usize>(),
            aic: global.aic + nodes.iter().map(|n| n.aic).sum::<f64>(),
            bic: global.bic + nodes.iter().map(|n| n.bic).sum::<f64>(),
        }
    }
}

/// A fitted regression with its diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedZtpsRegression {
    pub model: ZtpsRegression,
    pub global: GlobalReport,
    /// Indexed like [`PartitionTree::internal_nodes`].
    pub nodes: Vec<NodeReport>,
    pub totals: Totals,
}

impl FittedZtpsRegression {
    pub fn new(model: ZtpsRegression, global: GlobalReport, nodes: Vec<NodeReport>) -> Result<Self> {
        if nodes.len() != model.tree().n_internal() {
            return Err(Error::Domain("one report per internal node is required".into()));
        }
        let totals = Totals::sum(&global, &nodes);
        Ok(FittedZtpsRegression {
            model,
            global,
            nodes,
            totals,
        })
    }

    pub fn flagged_nodes(&self) -> Vec<&NodeReport> {
        self.nodes.iter().filter(|n| n.flagged).collect()
    }
}

/// Split observations of every internal node, from one pass over the sites.
pub fn node_data(dataset: &Dataset, tree: &PartitionTree) -> Result<Vec<NodeData>> {
    let internal = tree.internal_nodes();
    let mut n1 = vec![Vec::with_capacity(dataset.n_sites()); internal.len()];
    let mut n = vec![Vec::with_capacity(dataset.n_sites()); internal.len()];
    let mut sums = vec![0u64; tree.n_nodes()];
    for row in dataset.counts.rows() {
        tree.group_sums_into(row, &mut sums);
        for (k, &id) in internal.iter().enumerate() {
            let (a, _) = tree.children(id).expect("internal node");
            n1[k].push(sums[a]);
            n[k].push(sums[id]);
        }
    }
    n1.iter()
        .zip(&n)
        .map(|(a, b)| NodeData::new(a, b, &dataset.design))
        .collect()
}

/// Fits the global regression and selects a model at every internal node.
///
/// The dataset's species are matched to the tree leaves by name. Node fits
/// never abort the whole fit: a node where every candidate fails is replaced
/// by an intercept-only binomial and flagged in its report.
pub fn fit(dataset: &Dataset, tree: &PartitionTree, config: &FitConfig) -> Result<FittedZtpsRegression> {
    // Sites are processed in id order so that row order cannot change
    // floating-point summation.
    let data = dataset.sorted_by_site().align_to_tree(tree)?;
    data.check_full_rank()?;
    if config.candidates.is_empty() {
        return Err(Error::Domain("no candidate split families".into()));
    }
    let global_data = GlobalData::new(data.totals(), &data.offsets, &data.design)?;
    let nodes = node_data(&data, tree)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Domain(format!("cannot start worker threads: {e}")))?;
    let (global, selections) = pool.install(|| {
        rayon::join(
            || {
                fit_global(
                    config.global_family,
                    config.global_zi,
                    &global_data,
                    &config.controls,
                    config.standard_errors,
                )
            },
            || {
                nodes
                    .par_iter()
                    .map(|d| {
                        select_node_model(d, &config.candidates, config.zi_design, &config.controls, config.standard_errors)
                    })
                    .collect::<Vec<_>>()
            },
        )
    });
    let global = global?;
    assemble(tree, &data.covariate_names, global, selections)
}

fn assemble(
    tree: &PartitionTree,
    covariate_names: &[String],
    global: GlobalFit,
    selections: Vec<NodeSelection>,
) -> Result<FittedZtpsRegression> {
    let mut specs = Vec::with_capacity(selections.len());
    let mut reports = Vec::with_capacity(selections.len());
    for (sel, &id) in selections.into_iter().zip(tree.internal_nodes()) {
        if sel.flagged {
            log::warn!(
                "node {} fell back to an intercept-only binomial: {}",
                tree.display_name(id),
                sel.note.as_deref().unwrap_or("all candidates failed")
            );
        }
        let fit = sel.fit;
        reports.push(NodeReport {
            node: id,
            name: tree.display_name(id),
            loglik: fit.loglik,
            k: fit.k,
            n_obs: fit.n_obs,
            aic: fit.aic,
            bic: fit.bic,
            se: fit.se,
            convergence: fit.report,
            candidates: sel.candidates,
            flagged: sel.flagged,
            note: sel.note,
        });
        specs.push(fit.spec);
    }
    let global_report = GlobalReport {
        loglik: global.loglik,
        k: global.k,
        n_obs: global.n_obs,
        aic: global.aic,
        bic: global.bic,
        se: global.se,
        convergence: global.report,
    };
    let model = ZtpsRegression::new(tree.clone(), covariate_names.to_vec(), global.spec, specs)?;
    FittedZtpsRegression::new(model, global_report, reports)
}

/// Structure of a model whose parameter count is fixed by design.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelStructure {
    /// One split regression per internal node of the tree.
    Tree(SplitFamily),
    /// A single multinomial regression over all species.
    FlatMultinomial,
    /// A single Dirichlet-multinomial regression over all species.
    FlatDirichletMultinomial,
    /// One count regression per species, no shared total.
    Independent,
}

/// Number of free parameters of a model without zero inflation, for `p`
/// covariates (plus intercept). For [`ModelStructure::Independent`], `global`
/// is the per-species family.
pub fn count_parameters(tree: &PartitionTree, p: usize, structure: ModelStructure, global: GlobalFamily) -> usize {
    let block = p + 1;
    let count_law = block + usize::from(global == GlobalFamily::NegBin);
    let j = tree.n_species();
    match structure {
        ModelStructure::Tree(SplitFamily::Binomial) => tree.n_internal() * block + count_law,
        ModelStructure::Tree(SplitFamily::BetaBinomial) => tree.n_internal() * 2 * block + count_law,
        ModelStructure::FlatMultinomial => (j - 1) * block + count_law,
        ModelStructure::FlatDirichletMultinomial => j * block + count_law,
        ModelStructure::Independent => j * count_law,
    }
}

#[cfg(test)]
mod tests;
