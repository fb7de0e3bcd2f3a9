//! Per-visit hypergraphs: incidence matrices, the chronic/acute disease
//! partition, and the two derived subgraphs used by the network.
//!
//! A visit's diagnosed diseases are the nodes and the visit itself is one
//! hyperedge. Splitting the diagnosis set against the previous visit
//! yields a chronic subgraph (one hyperedge over the persisting codes)
//! and an acute subgraph (one hyperedge per newly appearing code, tying
//! it to all chronic codes of the visit). All outputs are immutable;
//! building the structures for distinct patients is independent.

use thiserror::Error;

use crate::ehr::{DiseaseVocabulary, PatientRecord};

#[derive(Debug, Error)]
pub enum HypergraphError {
    #[error("cannot build a hypergraph from an empty code set")]
    EmptyCodeSet,
    #[error("multi-hot length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("code index {index} out of range for vocabulary of {len}")]
    CodeOutOfRange { index: usize, len: usize },
    #[error("patient validation failed: {0}")]
    InvalidPatient(String),
}

/// {0,1} indicator over the whole vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiHot {
    bits: Vec<u8>,
}

impl MultiHot {
    pub fn zeros(len: usize) -> Self {
        Self { bits: vec![0; len] }
    }

    pub fn from_indices(len: usize, indices: &[usize]) -> Result<Self, HypergraphError> {
        let mut bits = vec![0u8; len];
        for &i in indices {
            if i >= len {
                return Err(HypergraphError::CodeOutOfRange { index: i, len });
            }
            bits[i] = 1;
        }
        Ok(Self { bits })
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn get(&self, i: usize) -> bool {
        self.bits[i] == 1
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b == 1).count()
    }

    pub fn is_zero(&self) -> bool {
        self.bits.iter().all(|b| *b == 0)
    }

    /// Set indices in ascending order.
    pub fn ones(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, b)| (*b == 1).then_some(i))
            .collect()
    }

    pub fn and(&self, other: &MultiHot) -> Result<MultiHot, HypergraphError> {
        self.zip(other, |a, b| a & b)
    }

    pub fn and_not(&self, other: &MultiHot) -> Result<MultiHot, HypergraphError> {
        self.zip(other, |a, b| a & (1 - b))
    }

    pub fn or(&self, other: &MultiHot) -> Result<MultiHot, HypergraphError> {
        self.zip(other, |a, b| a | b)
    }

    fn zip(&self, other: &MultiHot, f: impl Fn(u8, u8) -> u8) -> Result<MultiHot, HypergraphError> {
        if self.len() != other.len() {
            return Err(HypergraphError::LengthMismatch {
                left: self.len(),
                right: other.len(),
            });
        }
        Ok(MultiHot {
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(a, b)| f(*a, *b))
                .collect(),
        })
    }

    /// Multi-hot as a row of f64s (targets for the loss).
    pub fn to_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|b| *b as f64).collect()
    }
}

/// Node x hyperedge incidence over an ordered node list. Every row and
/// every column of a constructed graph has at least one nonzero entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisitHypergraph {
    nodes: Vec<usize>,
    n_edges: usize,
    incidence: Vec<u8>,
}

impl VisitHypergraph {
    fn from_columns(nodes: Vec<usize>, columns: &[Vec<usize>]) -> Self {
        let n = nodes.len();
        let e = columns.len();
        let mut incidence = vec![0u8; n * e];
        for (j, members) in columns.iter().enumerate() {
            for &node in members {
                let row = nodes.binary_search(&node).expect("member not in node list");
                incidence[row * e + j] = 1;
            }
        }
        let g = Self {
            nodes,
            n_edges: e,
            incidence,
        };
        debug_assert!(g.rows_and_cols_nonzero());
        g
    }

    fn rows_and_cols_nonzero(&self) -> bool {
        let (n, e) = (self.nodes.len(), self.n_edges);
        (0..n).all(|r| (0..e).any(|c| self.incidence[r * e + c] == 1))
            && (0..e).all(|c| (0..n).any(|r| self.incidence[r * e + c] == 1))
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_edges(&self) -> usize {
        self.n_edges
    }

    pub fn incident(&self, row: usize, col: usize) -> bool {
        self.incidence[row * self.n_edges + col] == 1
    }

    /// Incidence as f64 rows, for numeric consumers.
    pub fn incidence_f64(&self) -> Vec<Vec<f64>> {
        (0..self.nodes.len())
            .map(|r| {
                (0..self.n_edges)
                    .map(|c| self.incidence[r * self.n_edges + c] as f64)
                    .collect()
            })
            .collect()
    }
}

/// Builds the single-visit hypergraph: the diagnosed codes as nodes and
/// the visit itself as one hyperedge covering all of them.
pub fn build_visit_hypergraph(codes: &[usize]) -> Result<VisitHypergraph, HypergraphError> {
    if codes.is_empty() {
        return Err(HypergraphError::EmptyCodeSet);
    }
    let mut nodes: Vec<usize> = codes.to_vec();
    nodes.sort_unstable();
    nodes.dedup();
    let column: Vec<usize> = nodes.clone();
    Ok(VisitHypergraph::from_columns(nodes, &[column]))
}

/// The chronic/acute split of one visit's diagnoses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiseasePartition {
    pub chronic: MultiHot,
    pub acute: MultiHot,
}

/// chronic = current AND previous; acute = current AND NOT previous.
/// With no previous visit everything is acute: there is no prior
/// evidence of persistence at the first visit.
pub fn partition_diseases(
    current: &MultiHot,
    previous: Option<&MultiHot>,
) -> Result<DiseasePartition, HypergraphError> {
    match previous {
        Some(prev) => Ok(DiseasePartition {
            chronic: current.and(prev)?,
            acute: current.and_not(prev)?,
        }),
        None => Ok(DiseasePartition {
            chronic: MultiHot::zeros(current.len()),
            acute: current.clone(),
        }),
    }
}

/// The two subgraphs derived from a partition. The chronic graph is one
/// hyperedge over all chronic nodes. The acute graph has one hyperedge
/// per acute disease, spanning that node plus all chronic nodes of the
/// visit; with no chronic partners the hyperedges are singletons. Either
/// graph may be absent when its side of the partition is empty.
pub fn build_subgraphs(
    partition: &DiseasePartition,
) -> (Option<VisitHypergraph>, Option<VisitHypergraph>) {
    let chronic_nodes = partition.chronic.ones();
    let acute_nodes = partition.acute.ones();

    let chronic_graph = if chronic_nodes.is_empty() {
        None
    } else {
        Some(VisitHypergraph::from_columns(
            chronic_nodes.clone(),
            &[chronic_nodes.clone()],
        ))
    };

    let acute_graph = if acute_nodes.is_empty() {
        None
    } else {
        let mut nodes: Vec<usize> = chronic_nodes.clone();
        nodes.extend(&acute_nodes);
        nodes.sort_unstable();
        let columns: Vec<Vec<usize>> = acute_nodes
            .iter()
            .map(|&a| {
                let mut members = chronic_nodes.clone();
                members.push(a);
                members
            })
            .collect();
        Some(VisitHypergraph::from_columns(nodes, &columns))
    };

    (chronic_graph, acute_graph)
}

/// One visit's worth of dynamic-hypergraph state.
#[derive(Debug, Clone)]
pub struct DynamicEntry {
    pub full: VisitHypergraph,
    pub partition: DiseasePartition,
    pub chronic_graph: Option<VisitHypergraph>,
    pub acute_graph: Option<VisitHypergraph>,
}

/// The per-visit hypergraph sequence for one patient.
#[derive(Debug, Clone)]
pub struct DynamicHypergraph {
    pub entries: Vec<DynamicEntry>,
}

/// Builds the full per-visit sequence. Entry t derives only from visits
/// t and t-1 (or the previous `chronic_window` visits when widened).
pub fn build_dynamic_hypergraph(
    patient: &PatientRecord,
    vocab: &DiseaseVocabulary,
    chronic_window: usize,
) -> Result<DynamicHypergraph, HypergraphError> {
    let window = chronic_window.max(1);
    let indices = patient
        .visit_code_indices(vocab)
        .map_err(|e| HypergraphError::InvalidPatient(e.to_string()))?;
    let multihots: Vec<MultiHot> = indices
        .iter()
        .map(|idx| MultiHot::from_indices(vocab.len(), idx))
        .collect::<Result<_, _>>()?;

    let mut entries = Vec::with_capacity(indices.len());
    for (t, idx) in indices.iter().enumerate() {
        if idx.is_empty() {
            return Err(HypergraphError::EmptyCodeSet);
        }
        let full = build_visit_hypergraph(idx)?;
        let previous = if t == 0 {
            None
        } else {
            let lo = t.saturating_sub(window);
            let mut acc = multihots[lo].clone();
            for prev in &multihots[lo + 1..t] {
                acc = acc.or(prev)?;
            }
            Some(acc)
        };
        let partition = partition_diseases(&multihots[t], previous.as_ref())?;
        let (chronic_graph, acute_graph) = build_subgraphs(&partition);
        entries.push(DynamicEntry {
            full,
            partition,
            chronic_graph,
            acute_graph,
        });
    }
    Ok(DynamicHypergraph { entries })
}
