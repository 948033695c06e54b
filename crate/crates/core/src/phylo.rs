//! Rooted full-binary phylogenetic trees: Newick parsing, validation,
//! traversal orders, and annotated serialization.
//!
//! Nodes live in a flat arena and are addressed by dense [`NodeId`]s assigned
//! in parse (pre-)order, so every per-node quantity downstream is a plain
//! vector indexed by node id.

use std::collections::{HashMap, HashSet};

use thiserror::Error;

/// Index into the tree's node arena.
pub type NodeId = usize;

#[derive(Debug, Error)]
pub enum PhyloError {
    #[error("newick parse error at byte {position}: {message}")]
    Parse { position: usize, message: String },
    #[error("node with {arity} children at byte {position}: tree must be full binary")]
    Multifurcation { arity: usize, position: usize },
    #[error("duplicate leaf name `{0}`")]
    DuplicateLeaf(String),
    #[error("no annotation value supplied for internal node {0}")]
    MissingValue(NodeId),
}

#[derive(Debug, Clone)]
struct Node {
    parent: Option<NodeId>,
    /// `None` for leaves; internal nodes always carry exactly two children.
    children: Option<(NodeId, NodeId)>,
    /// Taxon name; leaves only.
    name: Option<String>,
    depth: usize,
}

/// A rooted full-binary tree over `K` named leaves with `K - 1` internal nodes.
#[derive(Debug, Clone)]
pub struct PhyloTree {
    nodes: Vec<Node>,
    root: NodeId,
    leaf_count: usize,
}

impl PhyloTree {
    /// Parse a single `;`-terminated Newick string.
    ///
    /// Branch lengths and internal labels are accepted and discarded; the
    /// method uses topology only. Non-binary clades are rejected.
    pub fn parse_newick(text: &str) -> Result<Self, PhyloError> {
        Parser::new(text).parse()
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    /// Number of leaves, `K`.
    pub fn leaf_count(&self) -> usize {
        self.leaf_count
    }

    /// Number of internal nodes, `K - 1`.
    pub fn internal_count(&self) -> usize {
        self.nodes.len() - self.leaf_count
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        self.nodes[id].children.is_none()
    }

    /// `(left, right)` for internal nodes, `None` for leaves.
    pub fn children(&self, id: NodeId) -> Option<(NodeId, NodeId)> {
        self.nodes[id].children
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.nodes[id].parent
    }

    /// Edge count from `id` to the root.
    pub fn depth(&self, id: NodeId) -> usize {
        self.nodes[id].depth
    }

    pub fn leaf_name(&self, id: NodeId) -> Option<&str> {
        self.nodes[id].name.as_deref()
    }

    /// Whether `id` is the left child of its parent. `false` for the root.
    pub fn is_left_child(&self, id: NodeId) -> bool {
        match self.nodes[id].parent {
            Some(p) => self.nodes[p].children.expect("parent is internal").0 == id,
            None => false,
        }
    }

    /// Leaf ids in left-to-right reading order.
    ///
    /// Ids are assigned in pre-order, so ascending id order is reading order.
    pub fn leaves(&self) -> Vec<NodeId> {
        (0..self.nodes.len()).filter(|&i| self.is_leaf(i)).collect()
    }

    /// Internal node ids in ascending id order.
    pub fn internal_nodes(&self) -> Vec<NodeId> {
        (0..self.nodes.len()).filter(|&i| !self.is_leaf(i)).collect()
    }

    /// Internal node ids sorted by decreasing depth (children before parents),
    /// ties in stable id order. This is the collection-pass schedule; reverse
    /// it for distribution.
    pub fn internal_nodes_by_depth(&self) -> Vec<NodeId> {
        let mut ids = self.internal_nodes();
        ids.sort_by_key(|&id| std::cmp::Reverse(self.nodes[id].depth));
        ids
    }

    /// Serialize topology and leaf names, without branch lengths or labels.
    pub fn to_newick(&self) -> String {
        let mut out = String::new();
        self.write_clade(self.root, None, &mut out);
        out.push(';');
        out
    }

    /// Serialize with each internal node labeled by its value to 4 decimals.
    ///
    /// `values` must cover every internal node; entries are expected in
    /// `[0, 1]` (probabilities) but are written as given.
    pub fn to_annotated_newick(
        &self,
        values: &HashMap<NodeId, f64>,
    ) -> Result<String, PhyloError> {
        for id in self.internal_nodes() {
            if !values.contains_key(&id) {
                return Err(PhyloError::MissingValue(id));
            }
        }
        let mut out = String::new();
        self.write_clade(self.root, Some(values), &mut out);
        out.push(';');
        Ok(out)
    }

    fn write_clade(&self, id: NodeId, values: Option<&HashMap<NodeId, f64>>, out: &mut String) {
        match self.nodes[id].children {
            None => out.push_str(self.nodes[id].name.as_deref().unwrap_or("")),
            Some((l, r)) => {
                out.push('(');
                self.write_clade(l, values, out);
                out.push(',');
                self.write_clade(r, values, out);
                out.push(')');
                if let Some(values) = values {
                    out.push_str(&format!("{:.4}", values[&id]));
                }
            }
        }
    }
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
    nodes: Vec<Node>,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        Parser {
            bytes: text.as_bytes(),
            pos: 0,
            nodes: Vec::new(),
        }
    }

    fn parse(mut self) -> Result<PhyloTree, PhyloError> {
        self.skip_ws();
        let root = self.parse_clade(None, 0)?;
        self.skip_ws();
        if self.peek() != Some(b';') {
            return Err(self.err("expected `;` after tree"));
        }
        self.pos += 1;
        self.skip_ws();
        if self.pos != self.bytes.len() {
            return Err(self.err("trailing characters after `;`"));
        }
        if self.nodes[root].children.is_none() {
            return Err(PhyloError::Parse {
                position: 0,
                message: "tree must contain at least one internal node".into(),
            });
        }

        let mut seen = HashSet::new();
        let mut leaf_count = 0;
        for node in &self.nodes {
            if let Some(name) = &node.name {
                leaf_count += 1;
                if !seen.insert(name.clone()) {
                    return Err(PhyloError::DuplicateLeaf(name.clone()));
                }
            }
        }
        Ok(PhyloTree {
            nodes: self.nodes,
            root,
            leaf_count,
        })
    }

    fn parse_clade(&mut self, parent: Option<NodeId>, depth: usize) -> Result<NodeId, PhyloError> {
        self.skip_ws();
        if self.peek() == Some(b'(') {
            let open_pos = self.pos;
            self.pos += 1;
            let id = self.push_node(parent, depth);
            let mut children = Vec::with_capacity(2);
            loop {
                children.push(self.parse_clade(Some(id), depth + 1)?);
                self.skip_ws();
                match self.peek() {
                    Some(b',') => self.pos += 1,
                    Some(b')') => {
                        self.pos += 1;
                        break;
                    }
                    _ => return Err(self.err("expected `,` or `)` inside clade")),
                }
            }
            // Internal label (discarded) and branch length.
            self.read_label();
            self.read_branch_length()?;
            if children.len() != 2 {
                return Err(PhyloError::Multifurcation {
                    arity: children.len(),
                    position: open_pos,
                });
            }
            self.nodes[id].children = Some((children[0], children[1]));
            Ok(id)
        } else {
            let name = self.read_label();
            if name.is_empty() {
                return Err(self.err("empty clade: expected leaf name or `(`"));
            }
            self.read_branch_length()?;
            let id = self.push_node(parent, depth);
            self.nodes[id].name = Some(name);
            Ok(id)
        }
    }

    fn push_node(&mut self, parent: Option<NodeId>, depth: usize) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(Node {
            parent,
            children: None,
            name: None,
            depth,
        });
        id
    }

    fn read_label(&mut self) -> String {
        let start = self.pos;
        while let Some(b) = self.peek() {
            if matches!(b, b'(' | b')' | b',' | b':' | b';') || b.is_ascii_whitespace() {
                break;
            }
            self.pos += 1;
        }
        String::from_utf8_lossy(&self.bytes[start..self.pos]).into_owned()
    }

    fn read_branch_length(&mut self) -> Result<(), PhyloError> {
        self.skip_ws();
        if self.peek() == Some(b':') {
            self.pos += 1;
            let text = self.read_label();
            if text.parse::<f64>().is_err() {
                return Err(self.err(&format!("invalid branch length `{text}`")));
            }
        }
        Ok(())
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(|b| b.is_ascii_whitespace()) {
            self.pos += 1;
        }
    }

    fn err(&self, message: &str) -> PhyloError {
        PhyloError::Parse {
            position: self.pos,
            message: message.into(),
        }
    }
}
