//! The tree Pólya-splitting distribution and its zero-inflated extension over
//! a [`PartitionTree`], with static parameters.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::polya::{
    ln_gen_factorial_unchecked, ln_split_pmf_unchecked, sample_split, GlobalAbundanceLaw,
    PolyaKind, SplitTheta,
};
use crate::tree::{NodeId, PartitionTree, Side};

/// Parameters of the zero-inflated split at one internal node.
///
/// `pi1` is the weight of the regime where the first child group is empty,
/// `pi2` the weight of the regime where the second one is.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeSplitParams {
    pub theta: SplitTheta,
    pub kind: PolyaKind,
    pub pi1: f64,
    pub pi2: f64,
}

impl NodeSplitParams {
    pub fn new(theta: SplitTheta, kind: PolyaKind, pi1: f64, pi2: f64) -> Result<Self> {
        theta.validate_for(kind)?;
        if !(0.0..=1.0).contains(&pi1) || !(0.0..=1.0).contains(&pi2) {
            return domain(format!("zero-inflation weights must lie in [0, 1], got ({pi1}, {pi2})"));
        }
        if pi1 + pi2 > 1.0 + 1e-12 {
            return domain(format!("pi1 + pi2 must not exceed 1, got {}", pi1 + pi2));
        }
        Ok(NodeSplitParams { theta, kind, pi1, pi2 })
    }

    /// Split without zero inflation.
    pub fn plain(theta: SplitTheta, kind: PolyaKind) -> Result<Self> {
        NodeSplitParams::new(theta, kind, 0.0, 0.0)
    }

    pub fn pi(&self, side: Side) -> f64 {
        match side {
            Side::First => self.pi1,
            Side::Second => self.pi2,
        }
    }

    pub fn theta(&self, side: Side) -> f64 {
        match side {
            Side::First => self.theta.theta1,
            Side::Second => self.theta.theta2,
        }
    }

    /// Mean proportion `θ_B/(θ_B+θ_B̄)` of the Pólya component.
    pub fn proportion(&self, side: Side) -> f64 {
        self.theta(side) / self.theta.total()
    }

    /// `p̃^{(k)}`: ratio of the k-th factorial moment of the child group to
    /// that of the parent group.
    pub fn factorial_proportion(&self, side: Side, k: u32) -> f64 {
        let (own, other) = match side {
            Side::First => (self.pi1, self.pi2),
            Side::Second => (self.pi2, self.pi1),
        };
        let num = ln_gen_factorial_unchecked(self.theta(side), u64::from(k), self.kind);
        let ratio = if num == f64::NEG_INFINITY {
            0.0
        } else {
            (num - ln_gen_factorial_unchecked(self.theta.total(), u64::from(k), self.kind)).exp()
        };
        other + (1.0 - own - other) * ratio
    }

    /// `p̃`, the mean proportion under zero inflation.
    pub fn mean_proportion(&self, side: Side) -> f64 {
        self.factorial_proportion(side, 1)
    }

    pub fn ln_pmf(&self, n1: u64, n2: u64) -> f64 {
        if n1 + n2 == 0 {
            return 0.0;
        }
        let pi_rest = 1.0 - self.pi1 - self.pi2;
        let mut total = if pi_rest > 0.0 {
            pi_rest.ln() + ln_split_pmf_unchecked(n1, n2, &self.theta, self.kind)
        } else {
            f64::NEG_INFINITY
        };
        if n1 == 0 && self.pi1 > 0.0 {
            total = crate::polya::log_add_exp(total, self.pi1.ln());
        }
        if n2 == 0 && self.pi2 > 0.0 {
            total = crate::polya::log_add_exp(total, self.pi2.ln());
        }
        total
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: u64, rng: &mut R) -> Result<(u64, u64)> {
        if n == 0 {
            return Ok((0, 0));
        }
        if self.pi1 > 0.0 || self.pi2 > 0.0 {
            let u: f64 = rng.random();
            if u < self.pi1 {
                return Ok((0, n));
            }
            if u < self.pi1 + self.pi2 {
                return Ok((n, 0));
            }
        }
        sample_split(n, &self.theta, self.kind, rng)
    }
}

/// Log pmf of the zero-inflated bivariate split.
pub fn log_zi_split_pmf(n1: u64, n2: u64, params: &NodeSplitParams) -> Result<f64> {
    NodeSplitParams::new(params.theta, params.kind, params.pi1, params.pi2)?;
    Ok(params.ln_pmf(n1, n2))
}

/// Tree, per-node split parameters (indexed like
/// [`PartitionTree::internal_nodes`]) and the global abundance law.
#[derive(Debug, Clone, PartialEq)]
pub struct ZtpsModel {
    tree: PartitionTree,
    splits: Vec<NodeSplitParams>,
    global: GlobalAbundanceLaw,
}

impl ZtpsModel {
    pub fn new(
        tree: PartitionTree,
        splits: Vec<NodeSplitParams>,
        global: GlobalAbundanceLaw,
    ) -> Result<Self> {
        if splits.len() != tree.n_internal() {
            return domain(format!(
                "expected {} split parameter sets, got {}",
                tree.n_internal(),
                splits.len()
            ));
        }
        for s in &splits {
            NodeSplitParams::new(s.theta, s.kind, s.pi1, s.pi2)?;
        }
        Ok(ZtpsModel { tree, splits, global })
    }

    pub fn tree(&self) -> &PartitionTree {
        &self.tree
    }

    pub fn splits(&self) -> &[NodeSplitParams] {
        &self.splits
    }

    pub fn global(&self) -> &GlobalAbundanceLaw {
        &self.global
    }

    /// Split parameters of the internal node `id`.
    pub fn split_at(&self, id: NodeId) -> Option<&NodeSplitParams> {
        self.tree.internal_index(id).map(|k| &self.splits[k])
    }

    fn parent_split(&self, id: NodeId) -> (&NodeSplitParams, Side) {
        let parent = self.tree.parent(id).expect("non-root node");
        let side = self.tree.side(id).expect("non-root node");
        (self.split_at(parent).expect("parent is internal"), side)
    }

    /// `p̃_B^{(k)}` for a non-root node.
    pub fn node_factorial_proportion(&self, id: NodeId, k: u32) -> f64 {
        let (split, side) = self.parent_split(id);
        split.factorial_proportion(side, k)
    }

    pub fn log_joint_pmf(&self, y: &[u64]) -> Result<f64> {
        if y.len() != self.tree.n_species() {
            return domain(format!(
                "count vector has length {}, tree has {} leaves",
                y.len(),
                self.tree.n_species()
            ));
        }
        let sums = self.tree.group_sums(y);
        let mut total = self.global.ln_pmf(sums[self.tree.root()]);
        for (k, &id) in self.tree.internal_nodes().iter().enumerate() {
            if total == f64::NEG_INFINITY {
                break;
            }
            let (a, b) = self.tree.children(id).expect("internal node");
            total += self.splits[k].ln_pmf(sums[a], sums[b]);
        }
        Ok(total)
    }

    /// k-th factorial moment of the group total `|Y_B|` for any node.
    pub fn group_factorial_moment(&self, id: NodeId, k: u32) -> f64 {
        let product: f64 = self
            .tree
            .ancestors(id)
            .iter()
            .map(|&b| self.node_factorial_proportion(b, k))
            .product();
        product * self.global.factorial_moment(k)
    }

    /// k-th factorial moment of species `j`.
    pub fn factorial_moment(&self, j: usize, k: u32) -> Result<f64> {
        if k < 1 {
            return domain("factorial moment order must be at least 1");
        }
        self.check_species(j)?;
        Ok(self.group_factorial_moment(self.tree.leaf(j), k))
    }

    pub fn mean(&self, j: usize) -> Result<f64> {
        self.factorial_moment(j, 1)
    }

    /// Weight of the structural-zero component of species `j`'s marginal.
    pub fn marginal_zero_prob(&self, j: usize) -> Result<f64> {
        self.check_species(j)?;
        let keep: f64 = self
            .tree
            .leaf_ancestors(j)
            .iter()
            .map(|&b| {
                let (split, side) = self.parent_split(b);
                1.0 - split.pi(side)
            })
            .product();
        Ok(1.0 - keep)
    }

    /// Covariance of the two child-group totals of internal node `s`.
    pub fn sibling_covariance(&self, s: NodeId) -> Result<f64> {
        let split = self
            .split_at(s)
            .ok_or_else(|| Error::Domain(format!("node {s} is not internal")))?;
        let mu1 = self.group_factorial_moment(s, 1);
        let mu2 = self.group_factorial_moment(s, 2);
        let total = split.theta.total();
        let c = f64::from(split.kind.c());
        let joint = (1.0 - split.pi1 - split.pi2)
            * split.proportion(Side::First)
            * split.proportion(Side::Second)
            * total
            / (total + c)
            * mu2;
        Ok(joint
            - split.mean_proportion(Side::First) * split.mean_proportion(Side::Second) * mu1 * mu1)
    }

    /// `Cov(Y_i, Y_j)`; for `i == j` this is the variance.
    pub fn covariance(&self, i: usize, j: usize) -> Result<f64> {
        self.check_species(i)?;
        self.check_species(j)?;
        if i == j {
            let m1 = self.factorial_moment(j, 1)?;
            let m2 = self.factorial_moment(j, 2)?;
            return Ok(m2 + m1 - m1 * m1);
        }
        let sep = self.tree.separator(i, j)?;
        let damp = |from: usize, to: usize| -> f64 {
            // The path starts at the separator's child, whose own proportion
            // is already part of the sibling covariance.
            self.tree.restricted_path(from, to)[1..]
                .iter()
                .map(|&b| self.node_factorial_proportion(b, 1))
                .product()
        };
        let cov = self.sibling_covariance(sep.node)?;
        Ok(damp(i, j) * damp(j, i) * cov)
    }

    pub fn covariance_matrix(&self) -> Vec<Vec<f64>> {
        let j = self.tree.n_species();
        (0..j)
            .map(|a| (0..j).map(|b| self.covariance(a, b).expect("valid species")).collect())
            .collect()
    }

    /// One top-down draw: the total first, then each split in pre-order.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<u64> {
        let mut sums = vec![0u64; self.tree.n_nodes()];
        sums[self.tree.root()] = self.global.sample(rng);
        for (k, &id) in self.tree.internal_nodes().iter().enumerate() {
            let (a, b) = self.tree.children(id).expect("internal node");
            let (n1, n2) = self.splits[k]
                .sample(sums[id], rng)
                .expect("validated split parameters");
            sums[a] = n1;
            sums[b] = n2;
        }
        (0..self.tree.n_species())
            .map(|s| sums[self.tree.leaf(s)])
            .collect()
    }

    fn check_species(&self, j: usize) -> Result<()> {
        if j < self.tree.n_species() {
            Ok(())
        } else {
            domain(format!("species index {j} out of range"))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polya::CountLaw;
    use statrs::function::factorial::ln_factorial;

    fn split(t1: f64, t2: f64, kind: PolyaKind, pi1: f64, pi2: f64) -> NodeSplitParams {
        NodeSplitParams::new(SplitTheta::new(t1, t2).unwrap(), kind, pi1, pi2).unwrap()
    }

    #[test]
    fn zi_split_examples() {
        let p = split(1.0, 1.0, PolyaKind::Multinomial, 0.2, 0.1);
        assert_eq!(log_zi_split_pmf(0, 0, &p).unwrap(), 0.0);
        let v = log_zi_split_pmf(0, 5, &p).unwrap();
        assert!((v - 0.221875f64.ln()).abs() < 1e-14);
        let total: f64 = (0..=5).map(|n1| log_zi_split_pmf(n1, 5 - n1, &p).unwrap().exp()).sum();
        assert!((total - 1.0).abs() < 1e-14);
    }

    #[test]
    fn zi_split_reduces_to_plain() {
        for kind in [PolyaKind::Multinomial, PolyaKind::DirichletMultinomial, PolyaKind::Hypergeometric] {
            let theta = SplitTheta::new(3.0, 5.0).unwrap();
            let p = NodeSplitParams::plain(theta, kind).unwrap();
            for n in 0..8u64 {
                for n1 in 0..=n {
                    let a = log_zi_split_pmf(n1, n - n1, &p).unwrap();
                    let b = crate::polya::log_split_pmf(n1, n - n1, &theta, kind).unwrap();
                    assert_eq!(a, b);
                }
            }
        }
    }

    #[test]
    fn invalid_zero_inflation_rejected() {
        let theta = SplitTheta::new(1.0, 1.0).unwrap();
        assert!(NodeSplitParams::new(theta, PolyaKind::Multinomial, 0.7, 0.5).is_err());
        assert!(NodeSplitParams::new(theta, PolyaKind::Multinomial, -0.1, 0.0).is_err());
    }

    fn three_leaf(kind: PolyaKind, global: GlobalAbundanceLaw) -> ZtpsModel {
        let tree = PartitionTree::parse_newick("((a,b),c);").unwrap();
        let s = split(1.0, 1.0, kind, 0.0, 0.0);
        ZtpsModel::new(tree, vec![s, s], global).unwrap()
    }

    #[test]
    fn zero_vector_pmf_is_global_zero_mass() {
        let m = three_leaf(PolyaKind::DirichletMultinomial, GlobalAbundanceLaw::poisson(2.5).unwrap());
        assert!((m.log_joint_pmf(&[0, 0, 0]).unwrap() + 2.5).abs() < 1e-15);
        assert!(m.log_joint_pmf(&[0, 0]).is_err());
    }

    #[test]
    fn multinomial_poisson_factorizes() {
        let lambda = 3.0;
        let m = three_leaf(PolyaKind::Multinomial, GlobalAbundanceLaw::poisson(lambda).unwrap());
        let rates = [lambda * 0.25, lambda * 0.25, lambda * 0.5];
        for y0 in 0..6u64 {
            for y1 in 0..6u64 {
                for y2 in 0..6u64 {
                    let joint = m.log_joint_pmf(&[y0, y1, y2]).unwrap();
                    let indep: f64 = [y0, y1, y2]
                        .iter()
                        .zip(rates)
                        .map(|(&y, r)| y as f64 * f64::ln(r) - r - ln_factorial(y))
                        .sum();
                    assert!((joint - indep).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn single_split_mean() {
        let tree = PartitionTree::parse_newick("(a,b);").unwrap();
        let theta = SplitTheta::from_proportion(0.3, 0.5).unwrap();
        let m = ZtpsModel::new(
            tree,
            vec![NodeSplitParams::plain(theta, PolyaKind::DirichletMultinomial).unwrap()],
            GlobalAbundanceLaw::poisson(10.0).unwrap(),
        )
        .unwrap();
        assert!((m.mean(0).unwrap() - 3.0).abs() < 1e-12);
        assert!(m.factorial_moment(0, 0).is_err());
    }

    #[test]
    fn empty_sibling_passes_everything() {
        let tree = PartitionTree::parse_newick("((a,b),c);").unwrap();
        // At the root the group {c} is always empty, so {a,b} gets everything.
        let root = split(2.0, 5.0, PolyaKind::DirichletMultinomial, 0.0, 1.0);
        let inner = split(1.0, 3.0, PolyaKind::DirichletMultinomial, 0.0, 0.0);
        let m = ZtpsModel::new(tree, vec![root, inner], GlobalAbundanceLaw::poisson(4.0).unwrap()).unwrap();
        let ab = m.tree().children(0).unwrap().0;
        for k in 1..=3 {
            assert_eq!(m.node_factorial_proportion(ab, k), 1.0);
        }
        assert!((m.mean(0).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(m.mean(2).unwrap(), 0.0);
    }

    #[test]
    fn marginal_zero_weights() {
        let tree = PartitionTree::parse_newick("((a,b),c);").unwrap();
        let plain = split(1.0, 1.0, PolyaKind::Multinomial, 0.0, 0.0);
        let m = ZtpsModel::new(tree.clone(), vec![plain, plain], GlobalAbundanceLaw::poisson(1.0).unwrap()).unwrap();
        assert_eq!(m.marginal_zero_prob(0).unwrap(), 0.0);
        let root = split(1.0, 1.0, PolyaKind::Multinomial, 0.1, 0.0);
        let inner = split(1.0, 1.0, PolyaKind::Multinomial, 0.2, 0.3);
        let m = ZtpsModel::new(tree, vec![root, inner], GlobalAbundanceLaw::poisson(1.0).unwrap()).unwrap();
        assert!((m.marginal_zero_prob(0).unwrap() - 0.28).abs() < 1e-15);
        assert!((m.marginal_zero_prob(2).unwrap() - 0.0).abs() < 1e-15);
    }

    #[test]
    fn multinomial_poisson_covariances_vanish() {
        let tree = PartitionTree::parse_newick("((a,b),(c,(d,e)));").unwrap();
        let splits = (0..tree.n_internal())
            .map(|k| split(1.0 + k as f64, 2.0, PolyaKind::Multinomial, 0.0, 0.0))
            .collect();
        let m = ZtpsModel::new(tree, splits, GlobalAbundanceLaw::poisson(7.0).unwrap()).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let c = m.covariance(i, j).unwrap();
                if i == j {
                    assert!((c - m.mean(i).unwrap()).abs() < 1e-12, "Poisson variance");
                } else {
                    assert!(c.abs() < 1e-12, "cov({i},{j}) = {c}");
                }
            }
        }
    }

    #[test]
    fn covariance_is_symmetric() {
        let tree = PartitionTree::parse_newick("((a,b),(c,d));").unwrap();
        let splits = vec![
            split(2.0, 1.0, PolyaKind::DirichletMultinomial, 0.1, 0.2),
            split(0.5, 1.5, PolyaKind::Multinomial, 0.0, 0.3),
            split(3.0, 1.0, PolyaKind::DirichletMultinomial, 0.25, 0.0),
        ];
        let global = GlobalAbundanceLaw::new(CountLaw::NegativeBinomial { size: 2.0, mean: 6.0 }, 0.1).unwrap();
        let m = ZtpsModel::new(tree, splits, global).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert!((m.covariance(i, j).unwrap() - m.covariance(j, i).unwrap()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn degenerate_root_inflation_empties_group() {
        let tree = PartitionTree::parse_newick("((a,b),c);").unwrap();
        let root = split(1.0, 1.0, PolyaKind::DirichletMultinomial, 1.0, 0.0);
        let inner = split(1.0, 1.0, PolyaKind::DirichletMultinomial, 0.0, 0.0);
        let m = ZtpsModel::new(tree, vec![root, inner], GlobalAbundanceLaw::poisson(20.0).unwrap()).unwrap();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(5);
        for _ in 0..1000 {
            let y = m.sample(&mut rng);
            assert_eq!(y[0] + y[1], 0);
        }
    }
}
