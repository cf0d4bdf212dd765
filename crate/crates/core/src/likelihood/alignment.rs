//! Nucleotide alignments, FASTA/PHYLIP I/O and site-pattern compression.
//!
//! States are ordered A, G, C, T. Characters are stored upper-case with U
//! read as T. IUPAC ambiguity codes, N, `?`, `-` and `.` are kept verbatim
//! and enter the likelihood as the set of states they allow.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const STATES: [u8; 4] = *b"AGCT";

/// Bit mask of compatible states (bit k = state k), or `None` for a
/// character outside the nucleotide alphabet.
pub fn state_mask(c: u8) -> Option<u8> {
    const A: u8 = 1;
    const G: u8 = 2;
    const C: u8 = 4;
    const T: u8 = 8;
    Some(match c.to_ascii_uppercase() {
        b'A' => A,
        b'G' => G,
        b'C' => C,
        b'T' | b'U' => T,
        b'R' => A | G,
        b'Y' => C | T,
        b'S' => G | C,
        b'W' => A | T,
        b'K' => G | T,
        b'M' => A | C,
        b'B' => C | G | T,
        b'D' => A | G | T,
        b'H' => A | C | T,
        b'V' => A | C | G,
        b'N' | b'?' | b'-' | b'.' => A | C | G | T,
        _ => return None,
    })
}

/// Gap and fully unknown characters.
pub fn is_missing(c: u8) -> bool {
    matches!(c, b'-' | b'.' | b'?' | b'N')
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alignment {
    names: Vec<String>,
    rows: Vec<Vec<u8>>,
}

impl Alignment {
    pub fn new(names: Vec<String>, rows: Vec<Vec<u8>>) -> Result<Self> {
        if names.is_empty() || names.len() != rows.len() {
            return Err(Error::Alignment("need one sequence per taxon name".into()));
        }
        let m = rows[0].len();
        if m == 0 {
            return Err(Error::Alignment("empty alignment".into()));
        }
        let mut seen = names.clone();
        seen.sort();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Alignment("duplicate taxon names".into()));
        }
        let mut clean = Vec::with_capacity(rows.len());
        for (name, row) in names.iter().zip(rows) {
            if row.len() != m {
                return Err(Error::Alignment(format!("sequence {name} has length {} not {m}", row.len())));
            }
            let mut r = Vec::with_capacity(m);
            for &c in &row {
                if state_mask(c).is_none() {
                    return Err(Error::Alignment(format!("invalid character '{}' in {name}", c as char)));
                }
                let c = c.to_ascii_uppercase();
                r.push(if c == b'U' { b'T' } else { c });
            }
            clean.push(r);
        }
        Ok(Self { names, rows: clean })
    }

    pub fn from_strings(pairs: &[(&str, &str)]) -> Result<Self> {
        Self::new(
            pairs.iter().map(|p| p.0.to_string()).collect(),
            pairs.iter().map(|p| p.1.as_bytes().to_vec()).collect(),
        )
    }

    pub fn n_taxa(&self) -> usize {
        self.names.len()
    }

    pub fn n_sites(&self) -> usize {
        self.rows[0].len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.rows[i]
    }

    pub fn get(&self, taxon: usize, site: usize) -> u8 {
        self.rows[taxon][site]
    }

    pub fn column(&self, site: usize) -> Vec<u8> {
        self.rows.iter().map(|r| r[site]).collect()
    }

    /// Rows permuted to follow `labels`.
    pub fn reordered(&self, labels: &[String]) -> Result<Self> {
        if labels.len() != self.names.len() {
            return Err(Error::Alignment(format!(
                "tree has {} leaves but the alignment has {} taxa",
                labels.len(),
                self.names.len()
            )));
        }
        let mut rows = Vec::with_capacity(labels.len());
        for l in labels {
            let i = self
                .names
                .iter()
                .position(|n| n == l)
                .ok_or_else(|| Error::Alignment(format!("taxon {l} missing from alignment")))?;
            rows.push(self.rows[i].clone());
        }
        Ok(Self { names: labels.to_vec(), rows })
    }

    pub fn parse_fasta(text: &str) -> Result<Self> {
        let mut names = Vec::new();
        let mut rows: Vec<Vec<u8>> = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with(';') {
                continue;
            }
            if let Some(h) = line.strip_prefix('>') {
                let name = h.split_whitespace().next().unwrap_or("").to_string();
                if name.is_empty() {
                    return Err(Error::Alignment("FASTA header without a name".into()));
                }
                names.push(name);
                rows.push(Vec::new());
            } else {
                let row = rows.last_mut().ok_or_else(|| Error::Alignment("sequence data before first header".into()))?;
                row.extend(line.bytes().filter(|c| !c.is_ascii_whitespace()));
            }
        }
        Self::new(names, rows)
    }

    /// Sequential PHYLIP: a header "N M" then one taxon per record, name
    /// separated from the sequence by whitespace; sequences may wrap.
    pub fn parse_phylip(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let header = lines.next().ok_or_else(|| Error::Alignment("empty PHYLIP file".into()))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .take(2)
            .map(|t| t.parse().map_err(|_| Error::Alignment(format!("bad PHYLIP header '{header}'"))))
            .collect::<Result<_>>()?;
        if dims.len() != 2 {
            return Err(Error::Alignment(format!("bad PHYLIP header '{header}'")));
        }
        let (n, m) = (dims[0], dims[1]);
        let mut names = Vec::with_capacity(n);
        let mut rows = Vec::with_capacity(n);
        for _ in 0..n {
            let line = lines.next().ok_or_else(|| Error::Alignment("PHYLIP file ends early".into()))?;
            let mut parts = line.splitn(2, char::is_whitespace);
            let name = parts.next().unwrap().to_string();
            let mut seq: Vec<u8> = parts.next().unwrap_or("").bytes().filter(|c| !c.is_ascii_whitespace()).collect();
            while seq.len() < m {
                let more = lines.next().ok_or_else(|| Error::Alignment(format!("sequence {name} is short")))?;
                seq.extend(more.bytes().filter(|c| !c.is_ascii_whitespace()));
            }
            names.push(name);
            rows.push(seq);
        }
        let a = Self::new(names, rows)?;
        if a.n_sites() != m {
            return Err(Error::Alignment(format!("expected {m} sites, found {}", a.n_sites())));
        }
        Ok(a)
    }

    /// Reads FASTA or PHYLIP, chosen by the first non-blank character.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Alignment(format!("cannot read {}: {e}", path.display())))?;
        if text.trim_start().starts_with('>') {
            Self::parse_fasta(&text)
        } else {
            Self::parse_phylip(&text)
        }
    }

    pub fn to_fasta(&self) -> String {
        let mut out = String::new();
        for (name, row) in self.names.iter().zip(&self.rows) {
            let _ = writeln!(out, ">{name}");
            for chunk in row.chunks(60) {
                out.push_str(std::str::from_utf8(chunk).expect("ASCII alignment"));
                out.push('\n');
            }
        }
        out
    }
}

/// Distinct site columns with multiplicities, in order of first appearance.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternTable {
    names: Vec<String>,
    /// patterns[p][taxon]
    patterns: Vec<Vec<u8>>,
    weights: Vec<f64>,
    site_pattern: Vec<usize>,
}

impl PatternTable {
    pub fn n_patterns(&self) -> usize {
        self.patterns.len()
    }

    pub fn n_taxa(&self) -> usize {
        self.names.len()
    }

    pub fn n_sites(&self) -> usize {
        self.site_pattern.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn pattern(&self, p: usize) -> &[u8] {
        &self.patterns[p]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn site_pattern(&self) -> &[usize] {
        &self.site_pattern
    }

    /// One pattern per site, weight one each.
    pub fn uncompressed(alignment: &Alignment) -> Self {
        let m = alignment.n_sites();
        Self {
            names: alignment.names().to_vec(),
            patterns: (0..m).map(|j| alignment.column(j)).collect(),
            weights: vec![1.0; m],
            site_pattern: (0..m).collect(),
        }
    }
}

pub fn compress_patterns(alignment: &Alignment) -> PatternTable {
    let mut index: HashMap<Vec<u8>, usize> = HashMap::new();
    let mut patterns = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    let mut site_pattern = Vec::with_capacity(alignment.n_sites());
    for j in 0..alignment.n_sites() {
        let col = alignment.column(j);
        let p = *index.entry(col.clone()).or_insert_with(|| {
            patterns.push(col);
            weights.push(0.0);
            patterns.len() - 1
        });
        weights[p] += 1.0;
        site_pattern.push(p);
    }
    PatternTable { names: alignment.names().to_vec(), patterns, weights, site_pattern }
}
