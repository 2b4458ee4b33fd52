//! Rooted label tree with per-node levels and ancestor-closed label sets.
//!
//! The root is virtual: it is never a label. Nodes whose parent is the root
//! sit at level 0.
//!
//! Text format, one node per line: `id<TAB>parent<TAB>name`, parent `-1` for
//! top-level nodes. Blank lines and lines starting with `#` are ignored.

use std::collections::HashSet;

use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TaxonomyError {
    #[error("line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error("unknown label id {0}")]
    UnknownId(usize),
    #[error("contract violated: {0}")]
    Contract(String),
}

pub type Result<T> = std::result::Result<T, TaxonomyError>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaxonomyNode {
    pub id: usize,
    pub name: String,
    pub parent: Option<usize>,
    pub level: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Taxonomy {
    nodes: Vec<TaxonomyNode>,
    children: Vec<Vec<usize>>,
    max_level: usize,
}

impl Taxonomy {
    /// Builds a taxonomy from `(parent, name)` pairs indexed by id.
    pub fn from_parents(entries: &[(Option<usize>, &str)]) -> Result<Self> {
        let lines: Vec<(usize, usize, Option<usize>, String)> = entries
            .iter()
            .enumerate()
            .map(|(id, (p, name))| (id + 1, id, *p, name.to_string()))
            .collect();
        Self::build(lines)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line_no = lineno + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(TaxonomyError::Parse {
                    line: line_no,
                    detail: format!("expected 3 tab-separated fields, got {}", fields.len()),
                });
            }
            let id: usize = fields[0].trim().parse().map_err(|_| TaxonomyError::Parse {
                line: line_no,
                detail: format!("bad id {:?}", fields[0]),
            })?;
            let parent: i64 = fields[1].trim().parse().map_err(|_| TaxonomyError::Parse {
                line: line_no,
                detail: format!("bad parent {:?}", fields[1]),
            })?;
            let parent = match parent {
                -1 => None,
                p if p >= 0 => Some(p as usize),
                p => {
                    return Err(TaxonomyError::Parse { line: line_no, detail: format!("bad parent {p}") });
                }
            };
            entries.push((line_no, id, parent, fields[2].to_string()));
        }
        Self::build(entries)
    }

    fn build(entries: Vec<(usize, usize, Option<usize>, String)>) -> Result<Self> {
        let k = entries.len();
        let mut slots: Vec<Option<(usize, Option<usize>, String)>> = vec![None; k];
        let mut line_of = vec![0usize; k];
        for (line, id, parent, name) in entries {
            if id >= k {
                return Err(TaxonomyError::Parse {
                    line,
                    detail: format!("id {id} breaks dense numbering 0..{k}"),
                });
            }
            if slots[id].is_some() {
                return Err(TaxonomyError::Parse { line, detail: format!("duplicate id {id}") });
            }
            slots[id] = Some((line, parent, name));
            line_of[id] = line;
        }
        let slots: Vec<(usize, Option<usize>, String)> = slots.into_iter().map(|s| s.expect("dense ids")).collect();

        for (id, (line, parent, _)) in slots.iter().enumerate() {
            if let Some(p) = parent {
                if *p >= k {
                    return Err(TaxonomyError::Parse { line: *line, detail: format!("dangling parent {p} for id {id}") });
                }
            }
        }

        // A parent chain longer than k means a cycle.
        let mut levels = vec![0usize; k];
        for (start, level) in levels.iter_mut().enumerate() {
            let mut cur = start;
            let mut steps = 0;
            while let Some(p) = slots[cur].1 {
                steps += 1;
                if steps > k {
                    return Err(TaxonomyError::Parse {
                        line: line_of[start],
                        detail: format!("cycle through id {start}"),
                    });
                }
                cur = p;
            }
            *level = steps;
        }

        let mut children = vec![Vec::new(); k];
        let mut nodes = Vec::with_capacity(k);
        for (id, (_, parent, name)) in slots.into_iter().enumerate() {
            if let Some(p) = parent {
                children[p].push(id);
            }
            nodes.push(TaxonomyNode { id, name, parent, level: levels[id] });
        }
        let max_level = levels.iter().copied().max().unwrap_or(0);
        Ok(Taxonomy { nodes, children, max_level })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn max_level(&self) -> usize {
        self.max_level
    }

    pub fn nodes(&self) -> &[TaxonomyNode] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> Result<&TaxonomyNode> {
        self.nodes.get(id).ok_or(TaxonomyError::UnknownId(id))
    }

    pub fn level(&self, id: usize) -> Result<usize> {
        Ok(self.node(id)?.level)
    }

    pub fn parent(&self, id: usize) -> Result<Option<usize>> {
        Ok(self.node(id)?.parent)
    }

    pub fn children(&self, id: usize) -> Result<&[usize]> {
        self.node(id)?;
        Ok(&self.children[id])
    }

    /// Nodes without children, ascending.
    pub fn leaves(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.children[i].is_empty()).collect()
    }

    /// All ids at `level`, ascending.
    pub fn nodes_at_level(&self, level: usize) -> Result<Vec<usize>> {
        if level > self.max_level || self.is_empty() {
            return Err(TaxonomyError::Contract(format!("level {level} outside 0..={}", self.max_level)));
        }
        Ok(self.nodes.iter().filter(|n| n.level == level).map(|n| n.id).collect())
    }

    pub fn ancestor_closure(&self, leaves: &[usize]) -> Result<LabelSet> {
        let mut bits = vec![false; self.len()];
        for &leaf in leaves {
            let mut cur = Some(leaf);
            while let Some(id) = cur {
                let node = self.node(id)?;
                if bits[id] {
                    break;
                }
                bits[id] = true;
                cur = node.parent;
            }
        }
        Ok(LabelSet { bits })
    }

    /// Deepest level present in `y`.
    pub fn deepest_level(&self, y: &LabelSet) -> Result<usize> {
        self.check_labels(y)?;
        y.ids()
            .map(|id| self.nodes[id].level)
            .max()
            .ok_or_else(|| TaxonomyError::Contract("deepest level of an empty label set".into()))
    }

    pub fn is_closed(&self, y: &LabelSet) -> bool {
        y.bits.len() == self.len()
            && y.ids().all(|id| self.nodes[id].parent.is_none_or(|p| y.bits[p]))
    }

    fn check_labels(&self, y: &LabelSet) -> Result<()> {
        if y.bits.len() != self.len() {
            return Err(TaxonomyError::Contract(format!(
                "label set over {} ids used with a taxonomy of {}",
                y.bits.len(),
                self.len()
            )));
        }
        Ok(())
    }

    /// Canonical text form; `parse(to_text())` reproduces the taxonomy.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for n in &self.nodes {
            let parent = n.parent.map_or(-1, |p| p as i64);
            out.push_str(&format!("{}\t{}\t{}\n", n.id, parent, n.name));
        }
        out
    }

    /// First eight bytes of the SHA-256 of the canonical text, little-endian.
    pub fn checksum(&self) -> u64 {
        let digest = Sha256::digest(self.to_text().as_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }
}

/// Multi-hot label vector over taxonomy ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelSet {
    bits: Vec<bool>,
}

impl LabelSet {
    pub fn empty(k: usize) -> Self {
        LabelSet { bits: vec![false; k] }
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        LabelSet { bits }
    }

    pub fn from_ids(k: usize, ids: &[usize]) -> Self {
        let mut bits = vec![false; k];
        for &i in ids {
            bits[i] = true;
        }
        LabelSet { bits }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn contains(&self, id: usize) -> bool {
        self.bits.get(id).copied().unwrap_or(false)
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    /// Restriction to the given ids, in the given order.
    pub fn restrict(&self, ids: &[usize]) -> LabelSet {
        LabelSet { bits: ids.iter().map(|&i| self.bits[i]).collect() }
    }

    pub fn ids_set(&self) -> HashSet<usize> {
        self.ids().collect()
    }
}
