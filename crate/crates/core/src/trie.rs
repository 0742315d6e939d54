//! Prefix tree over target sequences, keyed by token text.
//!
//! Keying nodes by surface rather than by decoder row lets one trie edge stand for
//! every CE row of that token: expanding a node unmasks all of them.

use std::collections::BTreeMap;

use crate::ce::CeMatrix;
use crate::corpus::{TargetSequence, TokenId, Vocab};
use crate::error::{Error, Result};

pub type NodeId = usize;
pub const ROOT: NodeId = 0;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct Node {
    token: Option<TokenId>,
    children: BTreeMap<String, NodeId>,
    /// Documents whose target ends here, by ordinal.
    docs: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrefixTrie {
    nodes: Vec<Node>,
    targets: usize,
}

impl PrefixTrie {
    pub fn build(targets: &[TargetSequence], vocab: &Vocab) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::invalid("cannot build a trie without targets"));
        }
        let mut trie = Self {
            nodes: vec![Node::default()],
            targets: 0,
        };
        let mut seen_docs = std::collections::HashSet::new();
        for t in targets {
            if !seen_docs.insert(t.doc) {
                return Err(Error::invalid(format!("document {} inserted twice", t.doc)));
            }
            let mut node = ROOT;
            for &tok in t.body() {
                let surface = vocab.surface(tok);
                node = match trie.nodes[node].children.get(surface) {
                    Some(&child) => child,
                    None => {
                        let id = trie.nodes.len();
                        trie.nodes.push(Node {
                            token: Some(tok),
                            ..Node::default()
                        });
                        trie.nodes[node].children.insert(surface.to_string(), id);
                        id
                    }
                };
            }
            if node == ROOT {
                return Err(Error::invalid(format!(
                    "document {} has an empty target",
                    t.doc
                )));
            }
            let docs = &mut trie.nodes[node].docs;
            if docs.is_empty() {
                trie.targets += 1;
            }
            docs.push(t.doc);
            docs.sort_unstable();
        }
        Ok(trie)
    }

    /// Number of distinct target surfaces.
    pub fn target_count(&self) -> usize {
        self.targets
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn child(&self, node: NodeId, surface: &str) -> Option<NodeId> {
        self.nodes[node].children.get(surface).copied()
    }

    /// Children in surface order as `(surface, token, node)`.
    pub fn children(&self, node: NodeId) -> impl Iterator<Item = (&str, TokenId, NodeId)> + '_ {
        self.nodes[node]
            .children
            .iter()
            .map(|(s, &n)| (s.as_str(), self.nodes[n].token.expect("non-root node"), n))
    }

    pub fn is_terminal(&self, node: NodeId) -> bool {
        !self.nodes[node].docs.is_empty()
    }

    pub fn docs_at(&self, node: NodeId) -> &[usize] {
        &self.nodes[node].docs
    }

    pub fn walk<S: AsRef<str>>(&self, prefix: &[S]) -> Option<NodeId> {
        prefix
            .iter()
            .try_fold(ROOT, |node, s| self.child(node, s.as_ref()))
    }

    /// True iff `seq` spells a complete target.
    pub fn contains<S: AsRef<str>>(&self, seq: &[S]) -> bool {
        self.walk(seq).is_some_and(|n| self.is_terminal(n))
    }

    /// Documents completed by `seq`; empty when `seq` is not a complete target.
    pub fn completed_docs<S: AsRef<str>>(&self, seq: &[S]) -> &[usize] {
        self.walk(seq).map_or(&[], |n| self.docs_at(n))
    }

    /// Decoder rows allowed after `node`: every CE row of every child token, plus
    /// the `EOS` row when `node` is terminal. Sorted ascending.
    pub fn allowed_rows(&self, node: NodeId, ce: &CeMatrix) -> Vec<usize> {
        let mut rows: Vec<usize> = self
            .children(node)
            .flat_map(|(_, tok, _)| ce.rows_of(tok).iter().copied())
            .collect();
        if self.is_terminal(node) {
            rows.push(ce.eos_row());
        }
        rows.sort_unstable();
        rows
    }

    pub fn allowed_next<S: AsRef<str>>(&self, prefix: &[S], ce: &CeMatrix) -> Result<Vec<usize>> {
        let node = self.walk(prefix).ok_or_else(|| {
            let p: Vec<&str> = prefix.iter().map(AsRef::as_ref).collect();
            Error::invalid(format!("prefix {p:?} is not in the trie"))
        })?;
        Ok(self.allowed_rows(node, ce))
    }

    /// Every complete target as `(surfaces, docs)`, depth-first in surface order.
    pub fn enumerate(&self) -> Vec<(Vec<String>, Vec<usize>)> {
        let mut out = Vec::new();
        let mut path = Vec::new();
        self.enumerate_from(ROOT, &mut path, &mut out);
        out
    }

    fn enumerate_from(
        &self,
        node: NodeId,
        path: &mut Vec<String>,
        out: &mut Vec<(Vec<String>, Vec<usize>)>,
    ) {
        if self.is_terminal(node) {
            out.push((path.clone(), self.docs_at(node).to_vec()));
        }
        for (s, _, child) in self.children(node) {
            path.push(s.to_string());
            self.enumerate_from(child, path, out);
            path.pop();
        }
    }
}
