//! Site-by-species count data with covariates and sampling-effort offsets.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tree::PartitionTree;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T> {
    nrows: usize,
    ncols: usize,
    data: Vec<T>,
}

impl<T: Copy> Matrix<T> {
    pub fn new(nrows: usize, ncols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != nrows * ncols {
            return Err(Error::Data(format!(
                "matrix of shape {nrows}x{ncols} needs {} values, got {}",
                nrows * ncols,
                data.len()
            )));
        }
        Ok(Matrix { nrows, ncols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let ncols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * ncols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != ncols {
                return Err(Error::Data(format!(
                    "row {i} has {} values, expected {ncols}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Matrix::new(rows.len(), ncols, data)
    }

    pub fn filled(nrows: usize, ncols: usize, value: T) -> Self {
        Matrix {
            nrows,
            ncols,
            data: vec![value; nrows * ncols],
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.ncols + j]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        (0..self.nrows).map(move |i| self.row(i))
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.ncols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            nrows: idx.len(),
            ncols: self.ncols,
            data,
        }
    }

    pub fn select_cols(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(self.nrows * idx.len());
        for row in self.rows() {
            data.extend(idx.iter().map(|&j| row[j]));
        }
        Matrix {
            nrows: self.nrows,
            ncols: idx.len(),
            data,
        }
    }
}

pub const INTERCEPT: &str = "intercept";

/// Observations at `I` sites of `J` species.
///
/// `design` always starts with the intercept column; `covariate_names` lists
/// the raw covariates only. `offsets` are sampling efforts (not logs): the
/// expected total abundance is proportional to them.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub site_ids: Vec<String>,
    pub species: Vec<String>,
    pub counts: Matrix<u64>,
    pub covariate_names: Vec<String>,
    pub design: Matrix<f64>,
    pub offsets: Vec<f64>,
}

impl Dataset {
    /// Assembles a dataset from raw covariates (no intercept column).
    pub fn new(
        site_ids: Vec<String>,
        species: Vec<String>,
        counts: Matrix<u64>,
        covariate_names: Vec<String>,
        covariates: &Matrix<f64>,
        offsets: Option<Vec<f64>>,
    ) -> Result<Self> {
        let n = counts.nrows();
        if site_ids.len() != n || covariates.nrows() != n {
            return Err(Error::Data(format!(
                "site count mismatch: {} ids, {} count rows, {} covariate rows",
                site_ids.len(),
                n,
                covariates.nrows()
            )));
        }
        if species.len() != counts.ncols() {
            return Err(Error::Data(format!(
                "{} species names for {} count columns",
                species.len(),
                counts.ncols()
            )));
        }
        if covariate_names.len() != covariates.ncols() {
            return Err(Error::Data(format!(
                "{} covariate names for {} covariate columns",
                covariate_names.len(),
                covariates.ncols()
            )));
        }
        if covariate_names.iter().any(|c| c == INTERCEPT) {
            return Err(Error::Data(format!(
                "covariate named {INTERCEPT:?}: the intercept is added automatically"
            )));
        }
        let offsets = offsets.unwrap_or_else(|| vec![1.0; n]);
        if offsets.len() != n {
            return Err(Error::Data(format!("{} offsets for {n} sites", offsets.len())));
        }
        if let Some(i) = offsets.iter().position(|&o| !(o > 0.0 && o.is_finite())) {
            return Err(Error::Data(format!(
                "offset at site {} must be positive, got {}",
                site_ids[i], offsets[i]
            )));
        }
        let p = covariates.ncols();
        let mut data = Vec::with_capacity(n * (p + 1));
        for (i, row) in covariates.rows().enumerate() {
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::Data(format!(
                    "non-finite covariate {} at site {}",
                    covariate_names[j], site_ids[i]
                )));
            }
            data.push(1.0);
            data.extend_from_slice(row);
        }
        let mut seen = HashSet::new();
        if let Some(dup) = site_ids.iter().find(|s| !seen.insert(s.as_str())) {
            return Err(Error::Data(format!("duplicate site id {dup:?}")));
        }
        Ok(Dataset {
            site_ids,
            species,
            counts,
            covariate_names,
            design: Matrix::new(n, p + 1, data)?,
            offsets,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.counts.nrows()
    }

    pub fn n_species(&self) -> usize {
        self.counts.ncols()
    }

    /// Number of raw covariates `p` (the design has `p + 1` columns).
    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    /// Design column names, intercept first.
    pub fn design_names(&self) -> Vec<String> {
        std::iter::once(INTERCEPT.to_string())
            .chain(self.covariate_names.iter().cloned())
            .collect()
    }

    pub fn totals(&self) -> Vec<u64> {
        self.counts.rows().map(|r| r.iter().sum()).collect()
    }

    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            site_ids: rows.iter().map(|&i| self.site_ids[i].clone()).collect(),
            species: self.species.clone(),
            counts: self.counts.select_rows(rows),
            covariate_names: self.covariate_names.clone(),
            design: self.design.select_rows(rows),
            offsets: rows.iter().map(|&i| self.offsets[i]).collect(),
        }
    }

    /// Rows ordered by site id.
    pub fn sorted_by_site(&self) -> Dataset {
        let mut order: Vec<usize> = (0..self.n_sites()).collect();
        order.sort_by(|&a, &b| self.site_ids[a].cmp(&self.site_ids[b]));
        self.subset(&order)
    }

    /// Reorders species columns to follow the tree's leaf order.
    pub fn align_to_tree(&self, tree: &PartitionTree) -> Result<Dataset> {
        let in_counts: HashMap<&str, usize> = self
            .species
            .iter()
            .enumerate()
            .map(|(j, s)| (s.as_str(), j))
            .collect();
        let in_tree: HashSet<&str> = tree.species_names().iter().map(String::as_str).collect();
        let mut only_in_tree: Vec<String> = tree
            .species_names()
            .iter()
            .filter(|s| !in_counts.contains_key(s.as_str()))
            .cloned()
            .collect();
        let mut only_in_counts: Vec<String> = self
            .species
            .iter()
            .filter(|s| !in_tree.contains(s.as_str()))
            .cloned()
            .collect();
        if !only_in_tree.is_empty() || !only_in_counts.is_empty() {
            only_in_tree.sort();
            only_in_counts.sort();
            return Err(Error::LeafMismatch {
                only_in_tree,
                only_in_counts,
            });
        }
        let order: Vec<usize> = tree
            .species_names()
            .iter()
            .map(|s| in_counts[s.as_str()])
            .collect();
        Ok(Dataset {
            species: tree.species_names().to_vec(),
            counts: self.counts.select_cols(&order),
            ..self.clone()
        })
    }

    /// Fails with the names of columns that are linear combinations of the
    /// preceding ones.
    pub fn check_full_rank(&self) -> Result<()> {
        let collinear = collinear_columns(&self.design);
        if collinear.is_empty() {
            return Ok(());
        }
        let names = self.design_names();
        Err(Error::RankDeficient {
            columns: collinear.into_iter().map(|j| names[j].clone()).collect(),
        })
    }

    /// Column means of the design (intercept included).
    pub fn mean_design_row(&self) -> Vec<f64> {
        let n = self.n_sites().max(1) as f64;
        let mut mean = vec![0.0; self.design.ncols()];
        for row in self.design.rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }
}

/// Indices of columns that lie (numerically) in the span of earlier columns,
/// found by modified Gram-Schmidt.
pub fn collinear_columns(x: &Matrix<f64>) -> Vec<usize> {
    let n = x.nrows();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut out = Vec::new();
    for j in 0..x.ncols() {
        let mut v: Vec<f64> = (0..n).map(|i| x.get(i, j)).collect();
        let norm0 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        for q in &basis {
            let dot: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(q).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm <= 1e-9 * norm0.max(1e-300) || norm0 == 0.0 {
            out.push(j);
        } else {
            v.iter_mut().for_each(|a| *a /= norm);
            basis.push(v);
        }
    }
    out
}
