//! Rooted binary partition trees over species labels.
//!
//! Nodes live in an arena indexed in pre-order: the root is node `0`, and every
//! child has a larger index than its parent. Species are numbered by the order
//! in which their leaves appear in that pre-order.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub parent: Option<NodeId>,
    pub children: Option<(NodeId, NodeId)>,
    /// Species index when the node is a leaf.
    pub species: Option<usize>,
    /// Leaf name, or the optional internal-node label of the Newick input.
    pub label: Option<String>,
    pub branch_length: Option<f64>,
    /// Species indices below (and including) this node, ascending.
    pub members: Vec<usize>,
    pub depth: usize,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }
}

/// Which child of its parent a node is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    First,
    Second,
}

/// Nodes from a child of the root down to a target node, inclusive.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct NodePath(pub Vec<NodeId>);

impl Deref for NodePath {
    type Target = [NodeId];

    fn deref(&self) -> &[NodeId] {
        &self.0
    }
}

/// The youngest common ancestor of two leaves together with its two children
/// leading to each of them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Separator {
    pub node: NodeId,
    pub toward_i: NodeId,
    pub toward_j: NodeId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionTree {
    nodes: Vec<Node>,
    species: Vec<String>,
    leaf_of: Vec<NodeId>,
    internal: Vec<NodeId>,
    internal_pos: Vec<Option<usize>>,
}

/// Nested description used to build trees programmatically.
#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Leaf(String),
    Split(Box<Shape>, Box<Shape>),
}

impl Shape {
    pub fn leaf(name: impl Into<String>) -> Shape {
        Shape::Leaf(name.into())
    }

    pub fn split(a: Shape, b: Shape) -> Shape {
        Shape::Split(Box::new(a), Box::new(b))
    }
}

struct RawNode {
    children: Vec<RawNode>,
    label: Option<String>,
    length: Option<f64>,
    offset: usize,
}

impl RawNode {
    fn clade_string(&self) -> String {
        if self.children.is_empty() {
            return self.label.clone().unwrap_or_default();
        }
        let inner: Vec<String> = self.children.iter().map(|c| c.clade_string()).collect();
        format!("({})", inner.join(","))
    }
}

impl PartitionTree {
    /// Parses a Newick string. Every internal node must have exactly two
    /// children and leaf names must be unique.
    pub fn parse_newick(text: &str) -> Result<PartitionTree> {
        let mut parser = NewickParser {
            src: text.as_bytes(),
            pos: 0,
        };
        let raw = parser.parse()?;
        PartitionTree::from_raw(raw)
    }

    pub fn from_shape(shape: &Shape) -> Result<PartitionTree> {
        fn convert(shape: &Shape) -> RawNode {
            match shape {
                Shape::Leaf(name) => RawNode {
                    children: Vec::new(),
                    label: Some(name.clone()),
                    length: None,
                    offset: 0,
                },
                Shape::Split(a, b) => RawNode {
                    children: vec![convert(a), convert(b)],
                    label: None,
                    length: None,
                    offset: 0,
                },
            }
        }
        PartitionTree::from_raw(convert(shape))
    }

    /// Caterpillar tree that splits the first species off the rest, then the
    /// second off the remainder, and so on.
    pub fn sequential_tree<S: AsRef<str>>(order: &[S]) -> Result<PartitionTree> {
        if order.len() < 2 {
            return Err(Error::Structure("a tree needs at least two species".into()));
        }
        let mut shape = Shape::leaf(order[order.len() - 1].as_ref());
        for name in order[..order.len() - 1].iter().rev() {
            shape = Shape::split(Shape::leaf(name.as_ref()), shape);
        }
        PartitionTree::from_shape(&shape)
    }

    /// Tree obtained by recursively halving the species list.
    pub fn balanced_tree<S: AsRef<str>>(names: &[S]) -> Result<PartitionTree> {
        fn build<S: AsRef<str>>(names: &[S]) -> Shape {
            if names.len() == 1 {
                return Shape::leaf(names[0].as_ref());
            }
            let mid = names.len().div_ceil(2);
            Shape::split(build(&names[..mid]), build(&names[mid..]))
        }
        if names.len() < 2 {
            return Err(Error::Structure("a tree needs at least two species".into()));
        }
        PartitionTree::from_shape(&build(names))
    }

    fn from_raw(raw: RawNode) -> Result<PartitionTree> {
        let mut tree = PartitionTree {
            nodes: Vec::new(),
            species: Vec::new(),
            leaf_of: Vec::new(),
            internal: Vec::new(),
            internal_pos: Vec::new(),
        };
        let mut seen = HashSet::new();
        tree.push_preorder(&raw, None, 0, &mut seen)?;
        if tree.species.len() < 2 {
            return Err(Error::Structure("a tree needs at least two species".into()));
        }
        // Members, bottom-up: children always carry larger ids than parents.
        for id in (0..tree.nodes.len()).rev() {
            let members = match (tree.nodes[id].children, tree.nodes[id].species) {
                (Some((a, b)), _) => {
                    let mut m = tree.nodes[a].members.clone();
                    m.extend_from_slice(&tree.nodes[b].members);
                    m.sort_unstable();
                    m
                }
                (None, Some(s)) => vec![s],
                (None, None) => unreachable!("leaf without species"),
            };
            tree.nodes[id].members = members;
        }
        Ok(tree)
    }

    fn push_preorder(
        &mut self,
        raw: &RawNode,
        parent: Option<NodeId>,
        depth: usize,
        seen: &mut HashSet<String>,
    ) -> Result<NodeId> {
        let id = self.nodes.len();
        self.nodes.push(Node {
            parent,
            children: None,
            species: None,
            label: raw.label.clone(),
            branch_length: raw.length,
            members: Vec::new(),
            depth,
        });
        self.internal_pos.push(None);
        match raw.children.len() {
            0 => {
                let name = match &raw.label {
                    Some(name) if !name.is_empty() => name.clone(),
                    _ => {
                        return Err(Error::Parse {
                            offset: raw.offset,
                            message: "leaf without a name".into(),
                        })
                    }
                };
                if !seen.insert(name.clone()) {
                    return Err(Error::Structure(format!("duplicate leaf name {name:?}")));
                }
                self.nodes[id].species = Some(self.species.len());
                self.species.push(name);
                self.leaf_of.push(id);
            }
            2 => {
                self.internal_pos[id] = Some(self.internal.len());
                self.internal.push(id);
                let a = self.push_preorder(&raw.children[0], Some(id), depth + 1, seen)?;
                let b = self.push_preorder(&raw.children[1], Some(id), depth + 1, seen)?;
                self.nodes[id].children = Some((a, b));
            }
            k => {
                return Err(Error::Structure(format!(
                    "node has {k} children, a binary split is required: {}",
                    raw.clade_string()
                )))
            }
        }
        Ok(id)
    }

    pub fn root(&self) -> NodeId {
        0
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_species(&self) -> usize {
        self.species.len()
    }

    pub fn n_internal(&self) -> usize {
        self.internal.len()
    }

    pub fn species_names(&self) -> &[String] {
        &self.species
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Internal nodes in pre-order; position `k` in this slice is the
    /// internal-node index used by per-split parameter vectors.
    pub fn internal_nodes(&self) -> &[NodeId] {
        &self.internal
    }

    pub fn internal_index(&self, id: NodeId) -> Option<usize> {
        self.internal_pos[id]
    }

    pub fn leaf(&self, species: usize) -> NodeId {
        self.leaf_of[species]
    }

    pub fn species_index(&self, name: &str) -> Option<usize> {
        self.species.iter().position(|s| s == name)
    }

    pub fn children(&self, id: NodeId) -> Option<(NodeId, NodeId)> {
        self.nodes[id].children
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.nodes[id].parent
    }

    pub fn members(&self, id: NodeId) -> &[usize] {
        &self.nodes[id].members
    }

    /// Side of `id` under its parent; `None` for the root.
    pub fn side(&self, id: NodeId) -> Option<Side> {
        let parent = self.nodes[id].parent?;
        let (a, _) = self.nodes[parent].children.expect("parent is internal");
        Some(if a == id { Side::First } else { Side::Second })
    }

    pub fn sibling(&self, id: NodeId) -> Option<NodeId> {
        let parent = self.nodes[id].parent?;
        let (a, b) = self.nodes[parent].children.expect("parent is internal");
        Some(if a == id { b } else { a })
    }

    /// Ancestors of `id` excluding the root and including `id` itself,
    /// ordered from the root's child downwards. Empty for the root.
    pub fn ancestors(&self, id: NodeId) -> NodePath {
        let mut path = Vec::with_capacity(self.nodes[id].depth);
        let mut cur = id;
        while let Some(parent) = self.nodes[cur].parent {
            path.push(cur);
            cur = parent;
        }
        path.reverse();
        NodePath(path)
    }

    pub fn leaf_ancestors(&self, species: usize) -> NodePath {
        self.ancestors(self.leaf_of[species])
    }

    pub fn separator(&self, i: usize, j: usize) -> Result<Separator> {
        if i == j {
            return Err(Error::Domain(format!("separator needs two distinct leaves, got {i} twice")));
        }
        if i >= self.n_species() || j >= self.n_species() {
            return Err(Error::Domain(format!("leaf index out of range: ({i}, {j})")));
        }
        let ai = self.leaf_ancestors(i);
        let aj = self.leaf_ancestors(j);
        let common = ai.iter().zip(aj.iter()).take_while(|(a, b)| a == b).count();
        let node = if common == 0 { self.root() } else { ai[common - 1] };
        Ok(Separator {
            node,
            toward_i: ai[common],
            toward_j: aj[common],
        })
    }

    /// Ancestors of leaf `i` that are not ancestors of leaf `j`.
    pub fn restricted_path(&self, i: usize, j: usize) -> NodePath {
        let ai = self.leaf_ancestors(i);
        let aj = self.leaf_ancestors(j);
        let common = ai.iter().zip(aj.iter()).take_while(|(a, b)| a == b).count();
        NodePath(ai[common..].to_vec())
    }

    /// Group totals `|y_B|` for every node, in one bottom-up pass.
    pub fn group_sums(&self, y: &[u64]) -> Vec<u64> {
        let mut sums = vec![0u64; self.nodes.len()];
        self.group_sums_into(y, &mut sums);
        sums
    }

    pub fn group_sums_into(&self, y: &[u64], sums: &mut [u64]) {
        for id in (0..self.nodes.len()).rev() {
            sums[id] = match (self.nodes[id].children, self.nodes[id].species) {
                (Some((a, b)), _) => sums[a] + sums[b],
                (None, Some(s)) => y[s],
                (None, None) => unreachable!(),
            };
        }
    }

    /// Newick text with internal labels and branch lengths where present.
    pub fn to_newick(&self) -> String {
        let mut out = String::new();
        self.write_node(self.root(), &mut out);
        out.push(';');
        out
    }

    fn write_node(&self, id: NodeId, out: &mut String) {
        let node = &self.nodes[id];
        if let Some((a, b)) = node.children {
            out.push('(');
            self.write_node(a, out);
            out.push(',');
            self.write_node(b, out);
            out.push(')');
        }
        if let Some(label) = &node.label {
            out.push_str(&quote_label(label));
        }
        if let Some(len) = node.branch_length {
            let _ = write!(out, ":{len:?}");
        }
    }

    /// Short display name: the label if any, else the member species joined.
    pub fn display_name(&self, id: NodeId) -> String {
        if let Some(label) = &self.nodes[id].label {
            return label.clone();
        }
        let names: Vec<&str> = self.nodes[id]
            .members
            .iter()
            .map(|&s| self.species[s].as_str())
            .collect();
        format!("{{{}}}", names.join(","))
    }
}

fn quote_label(label: &str) -> String {
    let needs_quotes = label
        .chars()
        .any(|c| "()[]':;,".contains(c) || c.is_whitespace());
    if needs_quotes {
        format!("'{}'", label.replace('\'', "''"))
    } else {
        label.to_string()
    }
}

struct NewickParser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl NewickParser<'_> {
    fn error<T>(&self, offset: usize, message: impl Into<String>) -> Result<T> {
        Err(Error::Parse {
            offset,
            message: message.into(),
        })
    }

    fn skip_ws(&mut self) -> Result<()> {
        loop {
            match self.src.get(self.pos) {
                Some(c) if c.is_ascii_whitespace() => self.pos += 1,
                Some(b'[') => {
                    let start = self.pos;
                    while self.pos < self.src.len() && self.src[self.pos] != b']' {
                        self.pos += 1;
                    }
                    if self.pos == self.src.len() {
                        return self.error(start, "unterminated comment");
                    }
                    self.pos += 1;
                }
                _ => return Ok(()),
            }
        }
    }

    fn peek(&mut self) -> Result<Option<u8>> {
        self.skip_ws()?;
        Ok(self.src.get(self.pos).copied())
    }

    fn parse(&mut self) -> Result<RawNode> {
        let root = self.subtree()?;
        match self.peek()? {
            Some(b';') => self.pos += 1,
            Some(b')') => return self.error(self.pos, "unbalanced ')'"),
            Some(c) => return self.error(self.pos, format!("expected ';', found {:?}", c as char)),
            None => return self.error(self.pos, "missing terminating ';'"),
        }
        if self.peek()?.is_some() {
            return self.error(self.pos, "trailing characters after ';'");
        }
        Ok(root)
    }

    fn subtree(&mut self) -> Result<RawNode> {
        let offset = {
            self.skip_ws()?;
            self.pos
        };
        let mut children = Vec::new();
        if self.peek()? == Some(b'(') {
            let open = self.pos;
            self.pos += 1;
            loop {
                children.push(self.subtree()?);
                match self.peek()? {
                    Some(b',') => self.pos += 1,
                    Some(b')') => {
                        self.pos += 1;
                        break;
                    }
                    None | Some(b';') => {
                        return self.error(open, "unbalanced '(': clade is never closed")
                    }
                    Some(c) => {
                        return self.error(self.pos, format!("unexpected {:?} inside clade", c as char))
                    }
                }
            }
        }
        let label = self.label()?;
        let length = if self.peek()? == Some(b':') {
            self.pos += 1;
            Some(self.number()?)
        } else {
            None
        };
        Ok(RawNode {
            children,
            label,
            length,
            offset,
        })
    }

    fn label(&mut self) -> Result<Option<String>> {
        match self.peek()? {
            Some(b'\'') => {
                let start = self.pos;
                self.pos += 1;
                let mut out = Vec::new();
                loop {
                    match self.src.get(self.pos) {
                        None => return self.error(start, "unterminated quoted label"),
                        Some(b'\'') if self.src.get(self.pos + 1) == Some(&b'\'') => {
                            out.push(b'\'');
                            self.pos += 2;
                        }
                        Some(b'\'') => {
                            self.pos += 1;
                            break;
                        }
                        Some(&c) => {
                            out.push(c);
                            self.pos += 1;
                        }
                    }
                }
                String::from_utf8(out)
                    .map(Some)
                    .or_else(|_| self.error(start, "label is not valid UTF-8"))
            }
            _ => {
                let start = self.pos;
                while let Some(&c) = self.src.get(self.pos) {
                    if b"()[]':;,".contains(&c) || c.is_ascii_whitespace() {
                        break;
                    }
                    self.pos += 1;
                }
                if self.pos == start {
                    return Ok(None);
                }
                std::str::from_utf8(&self.src[start..self.pos])
                    .map(|s| Some(s.to_string()))
                    .or_else(|_| self.error(start, "label is not valid UTF-8"))
            }
        }
    }

    fn number(&mut self) -> Result<f64> {
        self.skip_ws()?;
        let start = self.pos;
        while let Some(&c) = self.src.get(self.pos) {
            if c.is_ascii_digit() || b"+-.eE".contains(&c) {
                self.pos += 1;
            } else {
                break;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or("");
        text.parse::<f64>()
            .or_else(|_| self.error(start, format!("invalid branch length {text:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(tree: &PartitionTree, id: NodeId) -> Vec<&str> {
        tree.members(id)
            .iter()
            .map(|&s| tree.species_names()[s].as_str())
            .collect()
    }

    #[test]
    fn parses_simple_tree() {
        let t = PartitionTree::parse_newick("((a,b),c);").unwrap();
        assert_eq!(t.n_species(), 3);
        assert_eq!(t.n_internal(), 2);
        assert_eq!(t.species_names(), ["a", "b", "c"]);
        let internal: Vec<Vec<&str>> = t.internal_nodes().iter().map(|&n| names(&t, n)).collect();
        assert_eq!(internal, vec![vec!["a", "b", "c"], vec!["a", "b"]]);
    }

    #[test]
    fn rejects_polytomy() {
        let err = PartitionTree::parse_newick("(a,b,c);").unwrap_err();
        match err {
            Error::Structure(msg) => assert!(msg.contains("3 children") && msg.contains("(a,b,c)"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            PartitionTree::parse_newick("((a),b);"),
            Err(Error::Structure(_))
        ));
    }

    #[test]
    fn branch_lengths_are_metadata() {
        let plain = PartitionTree::parse_newick("((a,b),c);").unwrap();
        let with = PartitionTree::parse_newick("((a:1.2,b:0.3):0.5,c:2.0);").unwrap();
        assert_eq!(plain.n_nodes(), with.n_nodes());
        for id in 0..plain.n_nodes() {
            assert_eq!(plain.children(id), with.children(id));
            assert_eq!(plain.members(id), with.members(id));
        }
        assert_eq!(with.node(with.leaf(0)).branch_length, Some(1.2));
        assert_eq!(with.node(1).branch_length, Some(0.5));
    }

    #[test]
    fn parse_errors_carry_offsets() {
        match PartitionTree::parse_newick("((a,b),c;") {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("unexpected {other:?}"),
        }
        match PartitionTree::parse_newick("(a,b));") {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 5),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(PartitionTree::parse_newick("(a,b)"), Err(Error::Parse { .. })));
        assert!(matches!(
            PartitionTree::parse_newick("((a,b),a);"),
            Err(Error::Structure(_))
        ));
        assert!(matches!(PartitionTree::parse_newick("(a,);"), Err(Error::Parse { .. })));
        assert!(PartitionTree::parse_newick("a;").is_err());
    }

    #[test]
    fn quoted_labels_and_comments() {
        let t = PartitionTree::parse_newick("('x y', [note] 'it''s')root;").unwrap();
        assert_eq!(t.species_names(), ["x y", "it's"]);
        assert_eq!(t.node(0).label.as_deref(), Some("root"));
        let again = PartitionTree::parse_newick(&t.to_newick()).unwrap();
        assert_eq!(again, t);
    }

    #[test]
    fn ancestor_paths() {
        let t = PartitionTree::parse_newick("((a,b),c);").unwrap();
        let ab = t.children(0).unwrap().0;
        assert_eq!(t.ancestors(ab).0, vec![ab]);
        let a = t.leaf(0);
        assert_eq!(t.leaf_ancestors(0).0, vec![ab, a]);
        assert_eq!(t.restricted_path(0, 1).0, vec![a]);
        assert!(t.ancestors(t.root()).is_empty());
    }

    #[test]
    fn separators() {
        let t = PartitionTree::parse_newick("((a,b),c);").unwrap();
        let ab = t.children(0).unwrap().0;
        let s = t.separator(0, 1).unwrap();
        assert_eq!((s.node, s.toward_i, s.toward_j), (ab, t.leaf(0), t.leaf(1)));
        let s = t.separator(0, 2).unwrap();
        assert_eq!((s.node, s.toward_i, s.toward_j), (0, ab, t.leaf(2)));
        assert!(t.separator(1, 1).is_err());
    }

    #[test]
    fn sequential_tree_is_a_caterpillar() {
        let t = PartitionTree::sequential_tree(&["1", "2", "3"]).unwrap();
        let (first, rest) = t.children(0).unwrap();
        assert_eq!(names(&t, first), ["1"]);
        assert_eq!(names(&t, rest), ["2", "3"]);
        let (second, third) = t.children(rest).unwrap();
        assert_eq!(names(&t, second), ["2"]);
        assert_eq!(names(&t, third), ["3"]);

        let two = PartitionTree::sequential_tree(&["x", "y"]).unwrap();
        assert_eq!(two.n_internal(), 1);

        let order: Vec<String> = (0..9).map(|i| format!("s{i}")).collect();
        let t = PartitionTree::sequential_tree(&order).unwrap();
        assert_eq!(t.leaf_ancestors(8).len(), 8);
        assert_eq!(t.species_names(), order.as_slice());
    }

    #[test]
    fn group_sums_bottom_up() {
        let t = PartitionTree::parse_newick("((a,b),(c,d));").unwrap();
        let sums = t.group_sums(&[1, 2, 3, 4]);
        assert_eq!(sums[0], 10);
        let (l, r) = t.children(0).unwrap();
        assert_eq!((sums[l], sums[r]), (3, 7));
    }
}
