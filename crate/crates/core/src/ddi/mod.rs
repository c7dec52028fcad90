//! Drug-drug interaction graph, EHR co-prescription graph, edge-index
//! conversion, interaction queries and the DDI-rate metric.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::ehr::{CodeVocab, PatientRecord};
use crate::error::{shape_err, Error, Result};

/// One interaction observation between two drug classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DdiRecord {
    pub atc3_a: String,
    pub atc3_b: String,
    pub interaction_type: String,
    pub severity: f64,
}

impl DdiRecord {
    pub fn new(atc3_a: &str, atc3_b: &str, interaction_type: &str, severity: f64) -> Result<Self> {
        if atc3_a == atc3_b {
            return Err(Error::InvalidRecord(format!("self-interaction on {atc3_a}")));
        }
        if !severity.is_finite() {
            return Err(Error::InvalidRecord(format!("non-finite severity for {atc3_a}-{atc3_b}")));
        }
        Ok(DdiRecord {
            atc3_a: atc3_a.into(),
            atc3_b: atc3_b.into(),
            interaction_type: interaction_type.into(),
            severity,
        })
    }
}

/// Symmetric binary adjacency with an empty diagonal.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Adjacency {
    n: usize,
    bits: Vec<bool>,
}

impl Adjacency {
    pub fn new(n: usize) -> Self {
        Adjacency { n, bits: vec![false; n * n] }
    }

    /// From a dense 0/1 matrix. Must be square, symmetric and 0/1; the
    /// diagonal is ignored.
    pub fn from_dense(rows: &[Vec<u8>]) -> Result<Self> {
        let n = rows.len();
        if let Some(r) = rows.iter().find(|r| r.len() != n) {
            return Err(shape_err("adjacency", format!("{n} rows but a row of length {}", r.len())));
        }
        let mut adj = Adjacency::new(n);
        for i in 0..n {
            for j in 0..n {
                if rows[i][j] > 1 || rows[i][j] != rows[j][i] {
                    return Err(shape_err("adjacency", format!("entry ({i},{j}) not symmetric 0/1")));
                }
                if i != j && rows[i][j] == 1 {
                    adj.bits[i * n + j] = true;
                }
            }
        }
        Ok(adj)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Adds the undirected edge `{i, j}`; self-loops are ignored.
    pub fn add_edge(&mut self, i: usize, j: usize) -> Result<()> {
        for k in [i, j] {
            if k >= self.n {
                return Err(Error::IndexOutOfRange { index: k, size: self.n });
            }
        }
        if i != j {
            self.bits[i * self.n + j] = true;
            self.bits[j * self.n + i] = true;
        }
        Ok(())
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        i < self.n && j < self.n && self.bits[i * self.n + j]
    }

    /// Undirected edges as `(i, j)` with `i < j`, in row-major order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.n;
        (0..n).flat_map(move |i| (i + 1..n).filter(move |&j| self.bits[i * n + j]).map(move |j| (i, j)))
    }

    pub fn n_edges(&self) -> usize {
        self.edges().count()
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| !self.bits[i * self.n + i] && (0..self.n).all(|j| self.bits[i * self.n + j] == self.bits[j * self.n + i]))
    }

    /// Row-major 0/1 values.
    pub fn to_dense(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }
}

/// Directed edge list: both directions of every edge plus a self-loop on
/// every node, sorted by `(src, dst)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeIndex {
    pub n: usize,
    pub pairs: Vec<(usize, usize)>,
}

impl EdgeIndex {
    pub fn from_dense(rows: &[Vec<u8>]) -> Result<Self> {
        Ok(to_edge_index(&Adjacency::from_dense(rows)?))
    }

    pub fn sources(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.0).collect()
    }

    pub fn targets(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.1).collect()
    }

    pub fn to_adjacency(&self) -> Result<Adjacency> {
        let mut adj = Adjacency::new(self.n);
        for &(s, d) in &self.pairs {
            adj.add_edge(s, d)?;
        }
        Ok(adj)
    }
}

pub fn to_edge_index(adj: &Adjacency) -> EdgeIndex {
    let n = adj.n();
    let mut pairs = Vec::with_capacity(n + 2 * adj.n_edges());
    for i in 0..n {
        for j in 0..n {
            if i == j || adj.has_edge(i, j) {
                pairs.push((i, j));
            }
        }
    }
    EdgeIndex { n, pairs }
}

/// Which interaction type (and its severity) explains an edge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeLabel {
    pub interaction_type: String,
    pub severity: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DdiGraph {
    pub adjacency: Adjacency,
    pub selected_types: Vec<String>,
    /// Keyed by `(i, j)` with `i < j`.
    pub edge_labels: BTreeMap<(usize, usize), EdgeLabel>,
    /// Records naming a drug outside the vocabulary.
    pub skipped_out_of_vocab: usize,
}

impl DdiGraph {
    pub fn label(&self, i: usize, j: usize) -> Option<&EdgeLabel> {
        self.edge_labels.get(&(i.min(j), i.max(j)))
    }
}

/// Keeps the `top_k` interaction types ranked by their maximum severity
/// (descending, ties by type name) and joins every in-vocabulary drug pair
/// observed with a kept type.
pub fn build_ddi_graph(records: &[DdiRecord], vocab: &CodeVocab, top_k: usize) -> Result<DdiGraph> {
    if top_k == 0 {
        return Err(Error::InvalidConfig("top_k must be positive".into()));
    }
    let mut type_severity: BTreeMap<&str, f64> = BTreeMap::new();
    for r in records {
        let e = type_severity.entry(r.interaction_type.as_str()).or_insert(f64::NEG_INFINITY);
        *e = e.max(r.severity);
    }
    let mut ranked: Vec<(&str, f64)> = type_severity.into_iter().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(top_k);
    let kept: BTreeMap<&str, ()> = ranked.iter().map(|(t, _)| (*t, ())).collect();

    let mut adjacency = Adjacency::new(vocab.len());
    let mut edge_labels: BTreeMap<(usize, usize), EdgeLabel> = BTreeMap::new();
    let mut skipped = 0;
    for r in records {
        let (Some(a), Some(b)) = (vocab.get(&r.atc3_a), vocab.get(&r.atc3_b)) else {
            skipped += 1;
            continue;
        };
        if !kept.contains_key(r.interaction_type.as_str()) {
            continue;
        }
        adjacency.add_edge(a, b)?;
        let key = (a.min(b), a.max(b));
        let better = match edge_labels.get(&key) {
            None => true,
            Some(l) => r.severity > l.severity || (r.severity == l.severity && r.interaction_type < l.interaction_type),
        };
        if better {
            edge_labels.insert(key, EdgeLabel { interaction_type: r.interaction_type.clone(), severity: r.severity });
        }
    }
    debug_assert!(adjacency.is_symmetric());
    Ok(DdiGraph {
        adjacency,
        selected_types: ranked.into_iter().map(|(t, _)| t.into()).collect(),
        edge_labels,
        skipped_out_of_vocab: skipped,
    })
}

/// Co-prescription graph: `{i, j}` is an edge iff both drugs appear in the
/// same visit of some training patient.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EhrGraph {
    pub adjacency: Adjacency,
}

pub fn build_ehr_graph(train: &[PatientRecord], n_drugs: usize) -> Result<EhrGraph> {
    let mut adjacency = Adjacency::new(n_drugs);
    for v in train.iter().flat_map(|p| &p.visits) {
        for (k, &a) in v.medications.iter().enumerate() {
            for &b in &v.medications[k + 1..] {
                adjacency.add_edge(a, b)?;
            }
        }
    }
    debug_assert!(adjacency.is_symmetric());
    Ok(EhrGraph { adjacency })
}

/// Pooled fraction of unordered medication pairs, over all prediction
/// sets, that are interaction edges. Zero when there are no pairs.
pub fn ddi_rate(predicted: &[Vec<usize>], graph: &Adjacency) -> Result<f64> {
    let (mut hits, mut pairs) = (0u64, 0u64);
    for set in predicted {
        if let Some(&bad) = set.iter().find(|&&m| m >= graph.n()) {
            return Err(Error::IndexOutOfRange { index: bad, size: graph.n() });
        }
        for (k, &a) in set.iter().enumerate() {
            for &b in &set[k + 1..] {
                pairs += 1;
                if graph.has_edge(a, b) {
                    hits += 1;
                }
            }
        }
    }
    Ok(if pairs == 0 { 0.0 } else { hits as f64 / pairs as f64 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub a: usize,
    pub b: usize,
    pub interaction_type: String,
    pub severity: f64,
}

/// Every interacting unordered pair within `meds`, in input order.
/// Out-of-range indices are skipped.
pub fn check_interactions(meds: &[usize], graph: &DdiGraph) -> Vec<Interaction> {
    let n = graph.adjacency.n();
    let meds: Vec<usize> = meds.iter().copied().filter(|&m| m < n).collect();
    let mut out = Vec::new();
    for (k, &a) in meds.iter().enumerate() {
        for &b in &meds[k + 1..] {
            if a != b && graph.adjacency.has_edge(a, b) {
                let label = graph.label(a, b).cloned().unwrap_or(EdgeLabel { interaction_type: String::new(), severity: 0.0 });
                out.push(Interaction { a, b, interaction_type: label.interaction_type, severity: label.severity });
            }
        }
    }
    out
}

/// Code-level interaction check result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionReport {
    pub interactions: Vec<Interaction>,
    pub unknown: Vec<String>,
}

/// Resolves codes against `vocab` (unknown codes are reported and
/// skipped; duplicates collapse) and checks every pair.
pub fn check_interactions_by_code(codes: &[String], vocab: &CodeVocab, graph: &DdiGraph) -> InteractionReport {
    let mut meds = Vec::new();
    let mut unknown = Vec::new();
    for c in codes {
        match vocab.get(c) {
            Some(i) if !meds.contains(&i) => meds.push(i),
            Some(_) => {}
            None => unknown.push(c.clone()),
        }
    }
    InteractionReport { interactions: check_interactions(&meds, graph), unknown }
}
