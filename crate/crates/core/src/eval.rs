//! Prediction metrics and fold-based cross-validation.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Matrix};
use crate::error::{Error, Result};
use crate::fit::{fit, FitConfig};
use crate::tree::PartitionTree;

fn check_shapes(observed: &Matrix<u64>, predicted: &Matrix<f64>) -> Result<()> {
    if observed.nrows() != predicted.nrows() || observed.ncols() != predicted.ncols() {
        return Err(Error::Data(format!(
            "observed is {}x{}, predicted is {}x{}",
            observed.nrows(),
            observed.ncols(),
            predicted.nrows(),
            predicted.ncols()
        )));
    }
    if observed.as_slice().is_empty() {
        return Err(Error::Data("no cells to evaluate".into()));
    }
    if let Some(v) = predicted.as_slice().iter().find(|v| v.is_nan() || **v < 0.0) {
        return Err(Error::Domain(format!("predictions must be nonnegative, got {v}")));
    }
    Ok(())
}

/// Mean absolute error between `ln(1 + y)` and `ln(1 + ŷ)` over all cells.
pub fn mae_log1p(observed: &Matrix<u64>, predicted: &Matrix<f64>) -> Result<f64> {
    check_shapes(observed, predicted)?;
    let total: f64 = observed
        .as_slice()
        .iter()
        .zip(predicted.as_slice())
        .map(|(&y, &p)| ((y as f64).ln_1p() - p.ln_1p()).abs())
        .sum();
    Ok(total / observed.as_slice().len() as f64)
}

/// Root mean squared error on the raw count scale.
pub fn rmse(observed: &Matrix<u64>, predicted: &Matrix<f64>) -> Result<f64> {
    check_shapes(observed, predicted)?;
    let total: f64 = observed
        .as_slice()
        .iter()
        .zip(predicted.as_slice())
        .map(|(&y, &p)| (y as f64 - p).powi(2))
        .sum();
    Ok((total / observed.as_slice().len() as f64).sqrt())
}

/// Fold labels `1..=K` per site, every fold non-empty, `K ≥ 2`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    labels: Vec<usize>,
    k: usize,
}

impl FoldAssignment {
    pub fn new(labels: Vec<usize>) -> Result<Self> {
        let k = labels.iter().copied().max().unwrap_or(0);
        if labels.contains(&0) {
            return Err(Error::Data("fold labels start at 1".into()));
        }
        if k < 2 {
            return Err(Error::Data(format!(
                "cross-validation needs at least 2 folds, got {k}"
            )));
        }
        let mut sizes = vec![0usize; k];
        labels.iter().for_each(|&l| sizes[l - 1] += 1);
        if let Some(empty) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::Data(format!("fold {} has no sites", empty + 1)));
        }
        Ok(FoldAssignment { labels, k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn split(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        (0..self.labels.len()).partition(|&i| self.labels[i] != fold)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub n_sites: usize,
    pub mae_log1p: f64,
    pub rmse: f64,
    /// Nodes that fell back to the intercept-only binomial.
    pub flagged_nodes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: Vec<FoldResult>,
    /// Fold MAEs weighted by their site counts.
    pub mae_site_weighted: f64,
    /// Unweighted mean of fold MAEs.
    pub mae_fold_mean: f64,
    /// RMSE over all held-out cells.
    pub rmse_pooled: f64,
    pub rmse_fold_mean: f64,
}

impl CvReport {
    fn from_folds(folds: Vec<FoldResult>) -> Self {
        let n: usize = folds.iter().map(|f| f.n_sites).sum();
        let k = folds.len() as f64;
        let weighted = |g: fn(&FoldResult) -> f64| folds.iter().map(|f| f.n_sites as f64 * g(f)).sum::<f64>() / n as f64;
        CvReport {
            mae_site_weighted: weighted(|f| f.mae_log1p),
            mae_fold_mean: folds.iter().map(|f| f.mae_log1p).sum::<f64>() / k,
            rmse_pooled: weighted(|f| f.rmse * f.rmse).sqrt(),
            rmse_fold_mean: folds.iter().map(|f| f.rmse).sum::<f64>() / k,
            folds,
        }
    }
}

/// Fits on all folds but one and scores predictions on the held-out fold,
/// for each fold in turn. `folds` is parallel to the dataset's rows.
pub fn cross_validate(
    dataset: &Dataset,
    tree: &PartitionTree,
    folds: &FoldAssignment,
    config: &FitConfig,
) -> Result<CvReport> {
    if folds.len() != dataset.n_sites() {
        return Err(Error::Data(format!(
            "{} fold labels for {} sites",
            folds.len(),
            dataset.n_sites()
        )));
    }
    // Canonical site order, so the report does not depend on row order.
    let mut order: Vec<usize> = (0..dataset.n_sites()).collect();
    order.sort_by(|&a, &b| dataset.site_ids[a].cmp(&dataset.site_ids[b]));
    let data = dataset.subset(&order).align_to_tree(tree)?;
    let folds = FoldAssignment::new(order.iter().map(|&i| folds.labels[i]).collect())?;
    let mut results = Vec::with_capacity(folds.k());
    for fold in 1..=folds.k() {
        let (train, test) = folds.split(fold);
        let fitted = fit(&data.subset(&train), tree, config)?;
        let held_out = data.subset(&test);
        let predicted = fitted.model.predict_matrix(&held_out.design, &held_out.offsets)?;
        results.push(FoldResult {
            fold,
            n_sites: test.len(),
            mae_log1p: mae_log1p(&held_out.counts, &predicted)?,
            rmse: rmse(&held_out.counts, &predicted)?,
            flagged_nodes: fitted.flagged_nodes().iter().map(|n| n.name.clone()).collect(),
        });
    }
    Ok(CvReport::from_folds(results))
}
