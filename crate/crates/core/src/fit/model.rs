use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Matrix, INTERCEPT};
use crate::dist::ZtpsModel;
use crate::error::{Error, Result};
use crate::regression::{dot, logistic, logistic_density, GlobalRegSpec, NodeRegSpec, ZiSide};
use crate::tree::{NodeId, PartitionTree, Side};

/// Coefficients of a tree regression: the global spec plus one spec per
/// internal node (indexed like [`PartitionTree::internal_nodes`]).
#[derive(Debug, Clone, PartialEq)]
pub struct ZtpsRegression {
    pub(crate) tree: PartitionTree,
    pub(crate) covariate_names: Vec<String>,
    pub(crate) global: GlobalRegSpec,
    pub(crate) nodes: Vec<NodeRegSpec>,
}

impl ZtpsRegression {
    pub fn new(
        tree: PartitionTree,
        covariate_names: Vec<String>,
        global: GlobalRegSpec,
        nodes: Vec<NodeRegSpec>,
    ) -> Result<Self> {
        let n_x = covariate_names.len() + 1;
        if nodes.len() != tree.n_internal() {
            return Err(Error::Domain(format!(
                "tree has {} internal nodes, got {} node specs",
                tree.n_internal(),
                nodes.len()
            )));
        }
        if global.beta.len() != n_x || nodes.iter().any(|s| s.beta.len() != n_x) {
            return Err(Error::Domain(format!("every coefficient block needs {n_x} entries")));
        }
        let global = GlobalRegSpec::new(global.family, global.beta, global.log_dispersion, global.zi)?;
        let nodes = nodes
            .into_iter()
            .map(|s| NodeRegSpec::new(s.family, s.zi_side, s.beta, s.delta, s.b))
            .collect::<Result<_>>()?;
        Ok(ZtpsRegression {
            tree,
            covariate_names,
            global,
            nodes,
        })
    }

    pub fn tree(&self) -> &PartitionTree {
        &self.tree
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    /// Design column names, intercept first.
    pub fn design_names(&self) -> Vec<String> {
        std::iter::once(INTERCEPT.to_string())
            .chain(self.covariate_names.iter().cloned())
            .collect()
    }

    pub fn n_x(&self) -> usize {
        self.covariate_names.len() + 1
    }

    pub fn global(&self) -> &GlobalRegSpec {
        &self.global
    }

    pub fn nodes(&self) -> &[NodeRegSpec] {
        &self.nodes
    }

    pub fn node_spec(&self, id: NodeId) -> Option<&NodeRegSpec> {
        self.tree.internal_index(id).map(|k| &self.nodes[k])
    }

    /// Free parameters of the whole model.
    pub fn n_params(&self) -> usize {
        self.global.n_params() + self.nodes.iter().map(NodeRegSpec::n_params).sum::<usize>()
    }

    fn check_row(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_x() {
            return Err(Error::Data(format!(
                "covariate row has {} entries, model expects {} (intercept included)",
                x.len(),
                self.n_x()
            )));
        }
        Ok(())
    }

    /// Mean proportion `p̃_B(x)` of every node, the root mapped to 1.
    pub fn mean_proportions(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_row(x)?;
        let mut out = vec![1.0; self.tree.n_nodes()];
        for (spec, &id) in self.nodes.iter().zip(self.tree.internal_nodes()) {
            let (a, b) = self.tree.children(id).expect("internal node");
            out[a] = spec.mean_proportion(x, Side::First);
            out[b] = spec.mean_proportion(x, Side::Second);
        }
        Ok(out)
    }

    /// Expected group totals `μ(B | x)` for every node.
    pub fn predict_groups(&self, x: &[f64], offset: f64) -> Result<Vec<f64>> {
        let prop = self.mean_proportions(x)?;
        let mut out = vec![0.0; self.tree.n_nodes()];
        out[self.tree.root()] = self.global.mean(x, offset);
        // Pre-order arena: parents precede children.
        for id in 1..self.tree.n_nodes() {
            let parent = self.tree.parent(id).expect("non-root node");
            out[id] = out[parent] * prop[id];
        }
        Ok(out)
    }

    /// Expected species counts `μ(j | x)` at covariate row `x` (intercept
    /// included) with sampling effort `offset`.
    pub fn predict_mean(&self, x: &[f64], offset: f64) -> Result<Vec<f64>> {
        let groups = self.predict_groups(x, offset)?;
        Ok((0..self.tree.n_species()).map(|s| groups[self.tree.leaf(s)]).collect())
    }

    pub fn predict_matrix(&self, design: &Matrix<f64>, offsets: &[f64]) -> Result<Matrix<f64>> {
        let mut data = Vec::with_capacity(design.nrows() * self.tree.n_species());
        for (row, &o) in design.rows().zip(offsets) {
            data.extend(self.predict_mean(row, o)?);
        }
        Matrix::new(design.nrows(), self.tree.n_species(), data)
    }

    /// The Z-TPS distribution of one site.
    pub fn site_model(&self, x: &[f64], offset: f64) -> Result<ZtpsModel> {
        self.check_row(x)?;
        let splits = self.nodes.iter().map(|s| s.split_params(x)).collect::<Result<_>>()?;
        ZtpsModel::new(self.tree.clone(), splits, self.global.law_at(x, offset)?)
    }

    /// Draws one count vector per design row.
    pub fn simulate<R: Rng + ?Sized>(&self, design: &Matrix<f64>, offsets: &[f64], rng: &mut R) -> Result<Matrix<u64>> {
        let mut data = Vec::with_capacity(design.nrows() * self.tree.n_species());
        for (row, &o) in design.rows().zip(offsets) {
            data.extend(self.site_model(row, o)?.sample(rng));
        }
        Matrix::new(design.nrows(), self.tree.n_species(), data)
    }

    /// `∂μ(B)/∂x_k` and `μ(B)` for every node `B`, for design column `k ≥ 1`.
    pub fn group_size_effects(&self, x: &[f64], offset: f64, k: usize) -> Result<Vec<(f64, f64)>> {
        if k == 0 || k >= self.n_x() {
            return Err(Error::Domain(format!("covariate column {k} out of range 1..{}", self.n_x())));
        }
        let prop = self.mean_proportions(x)?;
        let mut dprop = vec![0.0; self.tree.n_nodes()];
        for (spec, &id) in self.nodes.iter().zip(self.tree.internal_nodes()) {
            let (a, b) = self.tree.children(id).expect("internal node");
            let (d1, d2) = proportion_derivatives(spec, x, k);
            dprop[a] = d1;
            dprop[b] = d2;
        }
        let count_mean = self.global.count_mean(x, offset);
        let pi = self.global.zero_weight(x);
        let dpi = self
            .global
            .zi
            .as_ref()
            .filter(|b| k < b.len())
            .map_or(0.0, |b| pi * (1.0 - pi) * b[k]);
        let root_mean = (1.0 - pi) * count_mean;
        let root_effect = count_mean * ((1.0 - pi) * self.global.beta[k] - dpi);
        // Product rule down the tree: (mean, effect) of each node from its
        // parent's pair and its own proportion.
        let mut out = vec![(root_effect, root_mean); self.tree.n_nodes()];
        for id in 1..self.tree.n_nodes() {
            let parent = self.tree.parent(id).expect("non-root node");
            let (pe, pm) = out[parent];
            out[id] = (pe * prop[id] + pm * dprop[id], pm * prop[id]);
        }
        Ok(out)
    }

    /// Size effect `∂μ(j)/∂x_k` and mean `μ(j)` for every species.
    pub fn size_effects(&self, x: &[f64], offset: f64, k: usize) -> Result<Vec<(f64, f64)>> {
        let groups = self.group_size_effects(x, offset, k)?;
        Ok((0..self.tree.n_species()).map(|s| groups[self.tree.leaf(s)]).collect())
    }

    /// Effects of every covariate on every tree node at each evaluation row.
    pub fn effect_table(&self, points: &[Vec<f64>], offset: f64) -> Result<EffectTable> {
        let names = self.design_names();
        let mut rows = Vec::new();
        for (point, x) in points.iter().enumerate() {
            for (k, covariate) in names.iter().enumerate().skip(1) {
                let effects = self.group_size_effects(x, offset, k)?;
                for (id, &(effect, mean)) in effects.iter().enumerate() {
                    rows.push(EffectRow {
                        point,
                        node: self.tree.display_name(id),
                        is_leaf: self.tree.node(id).is_leaf(),
                        covariate: covariate.clone(),
                        mean,
                        effect,
                        rse: effect / mean,
                    });
                }
            }
        }
        Ok(EffectTable { rows })
    }
}

/// Derivatives of `(p̃_{B1}, p̃_{B2})` in design column `k`.
fn proportion_derivatives(spec: &NodeRegSpec, x: &[f64], k: usize) -> (f64, f64) {
    let eta = dot(&spec.beta, x);
    let (f_cdf, f_pdf) = (logistic(eta), logistic_density(eta));
    let (pi1, pi2) = spec.zero_weights(x);
    let dpi = spec
        .b
        .as_ref()
        .filter(|b| k < b.len())
        .map_or(0.0, |b| {
            let pi = pi1 + pi2;
            pi * (1.0 - pi) * b[k]
        });
    let (dpi1, dpi2) = match spec.zi_side {
        ZiSide::Side1 => (dpi, 0.0),
        ZiSide::Side2 => (0.0, dpi),
        ZiSide::None => (0.0, 0.0),
    };
    let core = (1.0 - pi1 - pi2) * spec.beta[k] * f_pdf;
    let d1 = dpi2 - (dpi1 + dpi2) * f_cdf + core;
    let d2 = dpi1 - (dpi1 + dpi2) * (1.0 - f_cdf) - core;
    (d1, d2)
}

/// One size effect: node `B`, covariate, evaluation row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectRow {
    /// Index of the evaluation row.
    pub point: usize,
    pub node: String,
    pub is_leaf: bool,
    pub covariate: String,
    pub mean: f64,
    pub effect: f64,
    /// Relative size effect `effect / mean`.
    pub rse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectTable {
    pub rows: Vec<EffectRow>,
}
