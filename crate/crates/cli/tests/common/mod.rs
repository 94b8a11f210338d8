//! Reference computations written from the model definitions, sharing no
//! code with the library: log-Gamma based pmfs, a recursive tree type and
//! brute-force enumeration.

use statrs::function::gamma::ln_gamma;

pub fn ln_factorial(n: u64) -> f64 {
    ln_gamma(n as f64 + 1.0)
}

pub fn ln_choose(n: u64, k: u64) -> f64 {
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

pub fn poisson_ln_pmf(n: u64, lambda: f64) -> f64 {
    n as f64 * lambda.ln() - lambda - ln_factorial(n)
}

/// `P(n) = Γ(n+r)/(Γ(r) n!) p^r (1-p)^n`.
pub fn nb_ln_pmf(n: u64, r: f64, p: f64) -> f64 {
    ln_gamma(n as f64 + r) - ln_gamma(r) - ln_factorial(n) + r * p.ln() + n as f64 * (1.0 - p).ln()
}

/// `ln (θ)_{(n,c)}` for `c ∈ {0, 1}`.
fn ln_gen_factorial(theta: f64, n: u64, c: i32) -> f64 {
    match c {
        0 => n as f64 * theta.ln(),
        1 => ln_gamma(theta + n as f64) - ln_gamma(theta),
        _ => unreachable!("only c = 0 and c = 1 are enumerated"),
    }
}

pub fn polya_split_ln_pmf(n1: u64, n2: u64, theta1: f64, theta2: f64, c: i32) -> f64 {
    ln_choose(n1 + n2, n1) + ln_gen_factorial(theta1, n1, c) + ln_gen_factorial(theta2, n2, c)
        - ln_gen_factorial(theta1 + theta2, n1 + n2, c)
}

#[derive(Debug, Clone, Copy)]
pub struct Split {
    pub theta1: f64,
    pub theta2: f64,
    pub c: i32,
    pub pi1: f64,
    pub pi2: f64,
}

impl Split {
    /// Probability (not log) of the split `(n1, n2)` given `n1 + n2`.
    pub fn prob(&self, n1: u64, n2: u64) -> f64 {
        if n1 + n2 == 0 {
            return 1.0;
        }
        let mut p = (1.0 - self.pi1 - self.pi2) * polya_split_ln_pmf(n1, n2, self.theta1, self.theta2, self.c).exp();
        if n1 == 0 {
            p += self.pi1;
        }
        if n2 == 0 {
            p += self.pi2;
        }
        p
    }

    fn ratio(theta: f64, total: f64, c: i32, k: u32) -> f64 {
        (0..k).map(|t| (theta + (c * t as i32) as f64) / (total + (c * t as i32) as f64)).product()
    }

    /// Share of the k-th factorial moment passed to child 1 or 2 without
    /// zero inflation.
    pub fn plain_factorial_share(&self, first: bool, k: u32) -> f64 {
        let theta = if first { self.theta1 } else { self.theta2 };
        Split::ratio(theta, self.theta1 + self.theta2, self.c, k)
    }
}

/// A binary tree with splits at internal nodes. Leaves are numbered in the
/// order they are met left to right.
#[derive(Debug, Clone)]
pub enum Tree {
    Leaf(usize),
    Node(Box<Tree>, Box<Tree>, Split),
}

impl Tree {
    pub fn n_leaves(&self) -> usize {
        match self {
            Tree::Leaf(_) => 1,
            Tree::Node(a, b, _) => a.n_leaves() + b.n_leaves(),
        }
    }

    /// Internal-node splits in pre-order.
    pub fn splits(&self) -> Vec<Split> {
        let mut out = Vec::new();
        self.collect(&mut out);
        out
    }

    fn collect(&self, out: &mut Vec<Split>) {
        if let Tree::Node(a, b, s) = self {
            out.push(*s);
            a.collect(out);
            b.collect(out);
        }
    }

    pub fn newick(&self) -> String {
        match self {
            Tree::Leaf(j) => format!("s{j}"),
            Tree::Node(a, b, _) => format!("({},{})", a.newick(), b.newick()),
        }
    }

    /// Calls `f(y, prob)` for every allocation of `total` to the leaves,
    /// with the conditional probability of that allocation.
    pub fn enumerate(&self, total: u64, y: &mut [u64], prob: f64, f: &mut dyn FnMut(&[u64], f64)) {
        self.walk(total, y, prob, &mut Vec::new(), f);
    }

    // Pending subtrees and their totals are kept on a stack so that every
    // allocation is visited exactly once.
    fn walk<'a>(
        &'a self,
        total: u64,
        y: &mut [u64],
        prob: f64,
        pending: &mut Vec<(&'a Tree, u64)>,
        f: &mut dyn FnMut(&[u64], f64),
    ) {
        match self {
            Tree::Leaf(j) => {
                y[*j] = total;
                match pending.pop() {
                    Some((next, n)) => {
                        next.walk(n, y, prob, pending, f);
                        pending.push((next, n));
                    }
                    None => f(y, prob),
                }
            }
            Tree::Node(a, b, s) => {
                for n1 in 0..=total {
                    let p = s.prob(n1, total - n1);
                    if p == 0.0 {
                        continue;
                    }
                    pending.push((b, total - n1));
                    a.walk(n1, y, prob * p, pending, f);
                    pending.pop();
                }
            }
        }
    }

    /// Conditional probability of the leaf vector `y` given its total.
    pub fn split_prob(&self, y: &[u64]) -> f64 {
        self.prob_and_total(y).0
    }

    fn prob_and_total(&self, y: &[u64]) -> (f64, u64) {
        match self {
            Tree::Leaf(j) => (1.0, y[*j]),
            Tree::Node(a, b, s) => {
                let (pa, na) = a.prob_and_total(y);
                let (pb, nb) = b.prob_and_total(y);
                (pa * pb * s.prob(na, nb), na + nb)
            }
        }
    }

    /// Paths from the root to each leaf as (split, first-child) steps.
    pub fn paths(&self) -> Vec<Vec<(Split, bool)>> {
        let mut out = vec![Vec::new(); self.n_leaves()];
        self.fill_paths(&mut Vec::new(), &mut out);
        out
    }

    fn fill_paths(&self, prefix: &mut Vec<(Split, bool)>, out: &mut [Vec<(Split, bool)>]) {
        match self {
            Tree::Leaf(j) => out[*j] = prefix.clone(),
            Tree::Node(a, b, s) => {
                prefix.push((*s, true));
                a.fill_paths(prefix, out);
                prefix.pop();
                prefix.push((*s, false));
                b.fill_paths(prefix, out);
                prefix.pop();
            }
        }
    }
}

/// Law of the total: Poisson or negative binomial `(r, p)`, with an
/// optional point mass at zero.
#[derive(Debug, Clone, Copy)]
pub enum Total {
    Poisson { lambda: f64, pi: f64 },
    NegBin { r: f64, p: f64, pi: f64 },
}

impl Total {
    pub fn prob(&self, n: u64) -> f64 {
        let (base, pi) = match *self {
            Total::Poisson { lambda, pi } => (poisson_ln_pmf(n, lambda).exp(), pi),
            Total::NegBin { r, p, pi } => (nb_ln_pmf(n, r, p).exp(), pi),
        };
        (1.0 - pi) * base + if n == 0 { pi } else { 0.0 }
    }

    /// Smallest `N` with `Σ_{n>N} n² P(n)` below `tol`.
    pub fn truncation(&self, tol: f64) -> u64 {
        const HORIZON: u64 = 3000;
        let terms: Vec<f64> = (0..HORIZON).map(|m| (m * m) as f64 * self.prob(m)).collect();
        let mut tail = 0.0;
        for n in (0..HORIZON).rev() {
            if tail + terms[n as usize] > tol {
                return n;
            }
            tail += terms[n as usize];
        }
        0
    }
}

/// Moments accumulated by enumeration over all `y` with `|y| ≤ N`.
#[derive(Debug, Clone)]
pub struct Enumerated {
    pub mass: f64,
    pub retained: f64,
    pub mean: Vec<f64>,
    pub fact2: Vec<f64>,
    pub cross: Vec<Vec<f64>>,
    pub zero: Vec<f64>,
}

impl Enumerated {
    pub fn covariance(&self, i: usize, j: usize) -> f64 {
        if i == j {
            self.fact2[i] + self.mean[i] - self.mean[i] * self.mean[i]
        } else {
            self.cross[i][j] - self.mean[i] * self.mean[j]
        }
    }
}

/// Enumerates the joint law; `visit` also sees each vector and its
/// probability.
pub fn enumerate(tree: &Tree, total: &Total, n_max: u64, visit: &mut dyn FnMut(&[u64], f64)) -> Enumerated {
    let j = tree.n_leaves();
    let mut e = Enumerated {
        mass: 0.0,
        retained: 0.0,
        mean: vec![0.0; j],
        fact2: vec![0.0; j],
        cross: vec![vec![0.0; j]; j],
        zero: vec![0.0; j],
    };
    let mut y = vec![0u64; j];
    for n in 0..=n_max {
        let pn = total.prob(n);
        e.retained += pn;
        tree.enumerate(n, &mut y, pn, &mut |y, p| {
            e.mass += p;
            for a in 0..j {
                let ya = y[a] as f64;
                e.mean[a] += p * ya;
                e.fact2[a] += p * ya * (ya - 1.0);
                if y[a] == 0 {
                    e.zero[a] += p;
                }
                for (b, &yb) in y.iter().enumerate().skip(a + 1) {
                    e.cross[a][b] += p * ya * yb as f64;
                }
            }
            visit(y, p);
        });
    }
    for a in 0..j {
        for b in 0..a {
            e.cross[a][b] = e.cross[b][a];
        }
    }
    e
}

pub fn mae_log1p(y: &[Vec<u64>], mu: &[Vec<f64>]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..y.len() {
        for j in 0..y[i].len() {
            sum += ((y[i][j] as f64).ln_1p() - mu[i][j].ln_1p()).abs();
            n += 1;
        }
    }
    sum / n as f64
}

pub fn rmse(y: &[Vec<u64>], mu: &[Vec<f64>]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..y.len() {
        for j in 0..y[i].len() {
            let d = y[i][j] as f64 - mu[i][j];
            sum += d * d;
            n += 1;
        }
    }
    (sum / n as f64).sqrt()
}
