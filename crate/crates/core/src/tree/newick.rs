//! Newick reading and writing.
//!
//! Unquoted ASCII labels, optional `[...]` comments, internal labels are
//! accepted and ignored. A missing branch length reads as zero. A root with
//! three children is resolved by joining the last two under a zero-length
//! branch.

use super::{Node, Phylogeny};
use crate::error::{Error, Result};

enum Raw {
    Leaf { label: String, length: f64 },
    Internal { children: Vec<Raw>, length: f64 },
}

struct Parser<'a> {
    s: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(Error::Newick { pos: self.pos, msg: msg.into() })
    }

    fn skip(&mut self) -> Result<()> {
        loop {
            match self.s.get(self.pos) {
                Some(c) if c.is_ascii_whitespace() => self.pos += 1,
                Some(b'[') => {
                    while self.s.get(self.pos).is_some_and(|&c| c != b']') {
                        self.pos += 1;
                    }
                    if self.pos >= self.s.len() {
                        return self.err("unterminated comment");
                    }
                    self.pos += 1;
                }
                _ => return Ok(()),
            }
        }
    }

    fn peek(&mut self) -> Result<Option<u8>> {
        self.skip()?;
        Ok(self.s.get(self.pos).copied())
    }

    fn token(&mut self) -> Result<String> {
        self.skip()?;
        let start = self.pos;
        while let Some(&c) = self.s.get(self.pos) {
            if matches!(c, b'(' | b')' | b',' | b':' | b';' | b'[' | b']' | b'\'' | b'"') || c.is_ascii_whitespace() {
                break;
            }
            self.pos += 1;
        }
        if matches!(self.s.get(self.pos), Some(b'\'' | b'"')) {
            return self.err("quoted labels are not supported");
        }
        Ok(String::from_utf8_lossy(&self.s[start..self.pos]).into_owned())
    }

    fn length(&mut self) -> Result<f64> {
        if self.peek()? != Some(b':') {
            return Ok(0.0);
        }
        self.pos += 1;
        let tok = self.token()?;
        match tok.parse::<f64>() {
            Ok(v) if v.is_finite() && v >= 0.0 => Ok(v),
            Ok(v) => Err(Error::NegativeBranchLength(v)),
            Err(_) => self.err(format!("bad branch length '{tok}'")),
        }
    }

    fn subtree(&mut self) -> Result<Raw> {
        if self.peek()? == Some(b'(') {
            self.pos += 1;
            let mut children = vec![self.subtree()?];
            loop {
                match self.peek()? {
                    Some(b',') => {
                        self.pos += 1;
                        children.push(self.subtree()?);
                    }
                    Some(b')') => {
                        self.pos += 1;
                        break;
                    }
                    _ => return self.err("expected ',' or ')'"),
                }
            }
            let _internal_label = self.token()?;
            let length = self.length()?;
            Ok(Raw::Internal { children, length })
        } else {
            let label = self.token()?;
            if label.is_empty() {
                return self.err("empty leaf label");
            }
            let length = self.length()?;
            Ok(Raw::Leaf { label, length })
        }
    }
}

fn collect_labels(raw: &Raw, out: &mut Vec<String>) {
    match raw {
        Raw::Leaf { label, .. } => out.push(label.clone()),
        Raw::Internal { children, .. } => children.iter().for_each(|c| collect_labels(c, out)),
    }
}

struct Builder<'a> {
    labels: &'a [String],
    nodes: Vec<Node>,
    next_internal: usize,
}

impl Builder<'_> {
    fn build(&mut self, raw: Raw, parent: Option<usize>) -> Result<usize> {
        match raw {
            Raw::Leaf { label, length } => {
                let id = self
                    .labels
                    .iter()
                    .position(|l| *l == label)
                    .ok_or_else(|| Error::InvalidTree(format!("unknown leaf label '{label}'")))?;
                if self.nodes[id].parent.is_some() || self.nodes[id].length >= 0.0 {
                    return Err(Error::InvalidTree(format!("duplicate leaf label '{label}'")));
                }
                self.nodes[id] = Node { parent, children: None, length };
                Ok(id)
            }
            Raw::Internal { children, length } => {
                if children.len() != 2 {
                    return Err(Error::InvalidTree(format!("non-binary vertex with {} children", children.len())));
                }
                let id = self.next_internal;
                self.next_internal += 1;
                let mut it = children.into_iter();
                let a = self.build(it.next().unwrap(), Some(id))?;
                let b = self.build(it.next().unwrap(), Some(id))?;
                self.nodes[id] = Node { parent, children: Some([a, b]), length };
                Ok(id)
            }
        }
    }
}

/// Parses a tree, numbering leaves in order of appearance.
pub fn parse_newick(text: &str) -> Result<Phylogeny> {
    let raw = parse_raw(text)?;
    let mut labels = Vec::new();
    collect_labels(&raw, &mut labels);
    assemble(raw, labels)
}

/// Parses a tree whose leaves must be exactly `labels`, numbered in that order.
pub fn parse_newick_with_labels(text: &str, labels: &[String]) -> Result<Phylogeny> {
    let raw = parse_raw(text)?;
    let mut found = Vec::new();
    collect_labels(&raw, &mut found);
    if found.len() != labels.len() {
        return Err(Error::InvalidTree(format!("expected {} leaves, found {}", labels.len(), found.len())));
    }
    assemble(raw, labels.to_vec())
}

fn parse_raw(text: &str) -> Result<Raw> {
    let mut p = Parser { s: text.as_bytes(), pos: 0 };
    let raw = p.subtree()?;
    if p.peek()? != Some(b';') {
        return p.err("expected ';'");
    }
    p.pos += 1;
    if p.peek()?.is_some() {
        return p.err("trailing characters after ';'");
    }
    let raw = match raw {
        Raw::Internal { children, .. } if children.len() == 3 => {
            let mut it = children.into_iter();
            let a = it.next().unwrap();
            let joined = Raw::Internal { children: it.collect(), length: 0.0 };
            Raw::Internal { children: vec![a, joined], length: 0.0 }
        }
        Raw::Internal { children, .. } => Raw::Internal { children, length: 0.0 },
        Raw::Leaf { .. } => return p.err("a tree needs at least two leaves"),
    };
    Ok(raw)
}

fn assemble(raw: Raw, labels: Vec<String>) -> Result<Phylogeny> {
    let n = labels.len();
    if n < 2 {
        return Err(Error::InvalidTree("a tree needs at least two leaves".into()));
    }
    // negative placeholder length marks unfilled leaves
    let mut nodes = vec![Node { parent: None, children: None, length: -1.0 }; 2 * n - 1];
    let mut b = Builder { labels: &labels, nodes: std::mem::take(&mut nodes), next_internal: n };
    let root = b.build(raw, None)?;
    if b.nodes.iter().take(n).any(|nd| nd.length < 0.0) {
        return Err(Error::InvalidTree("leaf label set mismatch".into()));
    }
    let mut nodes = b.nodes;
    nodes[root].length = 0.0;
    Phylogeny::from_nodes(labels, nodes, root)
}

/// Writes the tree with every branch length; the root carries none.
pub fn serialize_newick(tree: &Phylogeny) -> String {
    let mut out = String::new();
    write_node(tree, tree.root(), &mut out);
    out.push(';');
    out
}

fn write_node(tree: &Phylogeny, v: usize, out: &mut String) {
    match tree.children(v) {
        None => out.push_str(tree.label(v)),
        Some([a, b]) => {
            out.push('(');
            write_node(tree, a, out);
            out.push(',');
            write_node(tree, b, out);
            out.push(')');
        }
    }
    if v != tree.root() {
        out.push(':');
        out.push_str(&format!("{}", tree.length(v)));
    }
}
