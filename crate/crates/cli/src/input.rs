//! Loading datasets, trees, folds and evaluation points from files.

use std::path::{Path, PathBuf};

use ztps::data::{Dataset, Matrix};
use ztps::eval::FoldAssignment;
use ztps::tree::PartitionTree;

use crate::error::{CliError, Result};
use crate::table::{read_text, Table};

/// Paths of one dataset. Covariates and offsets are optional: without
/// covariates the model is intercept-only, without offsets every site has
/// effort 1.
#[derive(Debug, Clone)]
pub struct DataPaths {
    pub counts: PathBuf,
    pub covariates: Option<PathBuf>,
    pub offsets: Option<PathBuf>,
}

/// Raw covariates of a set of sites, in the row order of their file.
#[derive(Debug, Clone)]
pub struct Covariates {
    pub site_ids: Vec<String>,
    pub names: Vec<String>,
    pub values: Matrix<f64>,
}

pub fn load_covariates(path: &Path) -> Result<Covariates> {
    let table = Table::read(path)?;
    table.require_columns(1, "a site id column")?;
    let site_ids = table.site_ids()?;
    let names = table.header[1..].to_vec();
    let p = names.len();
    let mut values = Vec::with_capacity(site_ids.len() * p);
    for i in 0..table.records.len() {
        for c in 1..=p {
            let v: f64 = table.value(i, c)?;
            if !v.is_finite() {
                return Err(table.error_at(i, c, "covariate is not finite"));
            }
            values.push(v);
        }
    }
    Ok(Covariates {
        values: Matrix::new(site_ids.len(), p, values)?,
        site_ids,
        names,
    })
}

impl Covariates {
    /// Design rows (intercept first) for `sites`, taken from this file.
    fn rows_for(&self, path: &Path, sites: &[String], reference: &Path) -> Result<Matrix<f64>> {
        let table_ids = self.site_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i));
        let index: std::collections::HashMap<&str, usize> = table_ids.collect();
        let mut rows = Vec::with_capacity(sites.len());
        let mut missing = Vec::new();
        for s in sites {
            match index.get(s.as_str()) {
                Some(&i) => rows.push(i),
                None => missing.push(s.as_str()),
            }
        }
        if !missing.is_empty() {
            return Err(CliError::file(
                path,
                format!("no rows for site(s) of {}: {}", reference.display(), missing.join(", ")),
            ));
        }
        if rows.len() != self.site_ids.len() {
            return Err(CliError::file(
                path,
                format!("lists sites absent from {}", reference.display()),
            ));
        }
        Ok(self.values.select_rows(&rows))
    }
}

/// Effort per site, keyed to `sites`.
pub fn load_offsets(path: &Path, sites: &[String], reference: &Path) -> Result<Vec<f64>> {
    let table = Table::read(path)?;
    if table.header.len() != 2 {
        return Err(CliError::input(path, 1, 1, "expected two columns: site id and offset"));
    }
    let order = table.align(sites, reference)?;
    order
        .into_iter()
        .map(|i| {
            let v: f64 = table.value(i, 1)?;
            if v.is_finite() && v > 0.0 {
                Ok(v)
            } else {
                Err(table.error_at(i, 1, "offset must be positive and finite"))
            }
        })
        .collect()
}

/// Fold labels keyed to `sites`.
pub fn load_folds(path: &Path, sites: &[String], reference: &Path) -> Result<FoldAssignment> {
    let table = Table::read(path)?;
    if table.header.len() != 2 {
        return Err(CliError::input(path, 1, 1, "expected two columns: site id and fold"));
    }
    let order = table.align(sites, reference)?;
    let labels = order
        .into_iter()
        .map(|i| table.value::<usize>(i, 1))
        .collect::<Result<Vec<_>>>()?;
    FoldAssignment::new(labels).map_err(|e| CliError::file(path, e.to_string()))
}

pub fn load_dataset(paths: &DataPaths) -> Result<Dataset> {
    let table = Table::read(&paths.counts)?;
    table.require_columns(2, "a site id column and at least one species column")?;
    let site_ids = table.site_ids()?;
    let species = table.header[1..].to_vec();
    let j = species.len();
    let mut counts = Vec::with_capacity(site_ids.len() * j);
    for i in 0..table.records.len() {
        for c in 1..=j {
            counts.push(table.value::<u64>(i, c)?);
        }
    }
    let counts = Matrix::new(site_ids.len(), j, counts)?;

    let (names, covariates) = match &paths.covariates {
        Some(path) => {
            let cov = load_covariates(path)?;
            let rows = cov.rows_for(path, &site_ids, &paths.counts)?;
            (cov.names, rows)
        }
        None => (Vec::new(), Matrix::filled(site_ids.len(), 0, 0.0)),
    };
    let offsets = paths
        .offsets
        .as_deref()
        .map(|p| load_offsets(p, &site_ids, &paths.counts))
        .transpose()?;
    Ok(Dataset::new(site_ids, species, counts, names, &covariates, offsets)?)
}

/// 1-based line and column of a byte offset.
fn position(text: &str, offset: usize) -> (u64, u64) {
    let before = &text.as_bytes()[..offset.min(text.len())];
    let line = before.iter().filter(|&&b| b == b'\n').count() as u64 + 1;
    let start = before.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
    let column = String::from_utf8_lossy(&before[start..]).chars().count() as u64 + 1;
    (line, column)
}

pub fn load_tree(path: &Path) -> Result<PartitionTree> {
    let text = read_text(path)?;
    PartitionTree::parse_newick(&text).map_err(|e| match e {
        ztps::Error::Parse { offset, message } => {
            let (line, column) = position(&text, offset);
            CliError::input(path, line, column, message)
        }
        other => CliError::file(path, other.to_string()),
    })
}

/// Checks the species of `dataset` against the tree's leaves, naming the
/// counts file on mismatch.
pub fn check_species(dataset: &Dataset, tree: &PartitionTree, counts: &Path, tree_path: &Path) -> Result<()> {
    match dataset.align_to_tree(tree) {
        Ok(_) => Ok(()),
        Err(e @ ztps::Error::LeafMismatch { .. }) => Err(CliError::file(
            counts,
            format!("species do not match the leaves of {}: {e}", tree_path.display()),
        )),
        Err(e) => Err(e.into()),
    }
}

/// Labelled evaluation rows for size effects: a site-id-like label column
/// followed by covariates named like `names` (any order). Returned rows
/// include the intercept.
pub fn load_points(path: &Path, names: &[String]) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let cov = load_covariates(path)?;
    let mut columns = Vec::with_capacity(names.len());
    for name in names {
        let c = cov
            .names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| CliError::input(path, 1, 1, format!("missing covariate column '{name}'")))?;
        columns.push(c);
    }
    if cov.names.len() != names.len() {
        let extra: Vec<&str> = cov
            .names
            .iter()
            .filter(|n| !names.contains(n))
            .map(String::as_str)
            .collect();
        return Err(CliError::input(
            path,
            1,
            1,
            format!("unknown covariate column(s): {}", extra.join(", ")),
        ));
    }
    let rows = cov
        .values
        .rows()
        .map(|r| std::iter::once(1.0).chain(columns.iter().map(|&c| r[c])).collect())
        .collect();
    Ok((cov.site_ids, rows))
}
