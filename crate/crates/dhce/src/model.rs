//! The network proper: disease embeddings, hypergraph context
//! aggregation, transfer attention between consecutive visits, a
//! per-node GRU, max-pool visit representations, visit-level attention,
//! clinical-event aggregation, gated fusion, prediction, and the
//! sequence loss.
//!
//! Every forward runs on its own [`Tape`]; parameters are immutable
//! during forward/backward, so distinct patients can run concurrently
//! on distinct tapes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ehr::{DiseaseVocabulary, PatientRecord};
use crate::events::{encode_visit_events, EncodeError, TextEncoder};
use crate::hypergraph::{build_dynamic_hypergraph, DynamicEntry, VisitHypergraph};
use crate::numkit::{NodeId, NumError, Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    Softmax,
    Sigmoid,
}

impl std::str::FromStr for OutputActivation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "softmax" => Ok(Self::Softmax),
            "sigmoid" => Ok(Self::Sigmoid),
            other => Err(format!("unknown output activation {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub d: usize,
    pub output_activation: OutputActivation,
    pub eps_clip: f64,
    pub chronic_window: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            d: 64,
            output_activation: OutputActivation::Softmax,
            eps_clip: 1e-12,
            chronic_window: 1,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<(), NumError> {
        if self.d < 1 {
            return Err(NumError::Invalid("hidden dimension d must be >= 1".into()));
        }
        if !(self.eps_clip > 0.0 && self.eps_clip < 1e-3) {
            return Err(NumError::Invalid(format!(
                "eps_clip {} outside (0, 1e-3)",
                self.eps_clip
            )));
        }
        Ok(())
    }
}

/// Manifest order is fixed; checkpoints and gradient reductions follow it.
const MANIFEST: [&str; 29] = [
    "disease_embeddings",
    "chronic_ctx_w",
    "chronic_ctx_b",
    "acute_ctx_w",
    "acute_ctx_b",
    "transfer_q",
    "transfer_k",
    "transfer_v",
    "gru_update_x",
    "gru_update_h",
    "gru_update_b",
    "gru_reset_x",
    "gru_reset_h",
    "gru_reset_b",
    "gru_cand_x",
    "gru_cand_h",
    "gru_cand_b",
    "visit_att_proj",
    "visit_att_vec",
    "event_att_proj",
    "event_att_vec",
    "event_proj_w",
    "event_proj_b",
    "event_default",
    "gate_event_w",
    "gate_visit_w",
    "gate_b",
    "output_w",
    "output_b",
];

fn manifest_shape(name: &str, vocab: usize, d: usize, e: usize) -> (usize, usize) {
    match name {
        "disease_embeddings" => (vocab, d),
        "chronic_ctx_w" | "acute_ctx_w" | "transfer_q" | "transfer_k" | "transfer_v"
        | "gru_update_x" | "gru_update_h" | "gru_reset_x" | "gru_reset_h" | "gru_cand_x"
        | "gru_cand_h" | "visit_att_proj" | "gate_event_w" | "gate_visit_w" => (d, d),
        "chronic_ctx_b" | "acute_ctx_b" | "gru_update_b" | "gru_reset_b" | "gru_cand_b"
        | "event_proj_b" | "event_default" | "gate_b" => (1, d),
        "visit_att_vec" => (d, 1),
        "event_att_proj" => (e, e),
        "event_att_vec" => (e, 1),
        "event_proj_w" => (e, d),
        "output_w" => (d, vocab),
        "output_b" => (1, vocab),
        other => unreachable!("unknown parameter {other}"),
    }
}

fn is_zero_init(name: &str) -> bool {
    name.ends_with("_b") || name == "event_default"
}

/// Every learnable matrix/vector of the model, stored in manifest order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    vocab_size: usize,
    d: usize,
    event_dim: usize,
    tensors: Vec<Tensor>,
}

impl ModelParameters {
    /// Seeded init: weights uniform in (-0.08, 0.08), biases zero.
    pub fn init(vocab_size: usize, d: usize, event_dim: usize, seed: u64) -> Self {
        Self::init_uniform(vocab_size, d, event_dim, seed, 0.08)
    }

    /// Seeded init at a chosen weight scale. Training uses the default
    /// 0.08; gradient checking prefers a larger scale, where no path
    /// through the network is so attenuated that its true gradient falls
    /// below central-difference resolution.
    pub fn init_uniform(
        vocab_size: usize,
        d: usize,
        event_dim: usize,
        seed: u64,
        scale: f64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = MANIFEST
            .iter()
            .map(|name| {
                let (rows, cols) = manifest_shape(name, vocab_size, d, event_dim);
                if is_zero_init(name) {
                    Tensor::zeros(rows, cols)
                } else {
                    let data = (0..rows * cols)
                        .map(|_| rng.random_range(-scale..scale))
                        .collect();
                    Tensor::new(rows, cols, data).expect("init shape")
                }
            })
            .collect();
        Self {
            vocab_size,
            d,
            event_dim,
            tensors,
        }
    }

    /// Rebuilds parameters from raw tensors in manifest order, checking
    /// every shape against the manifest.
    pub fn from_tensors(
        vocab_size: usize,
        d: usize,
        event_dim: usize,
        tensors: Vec<Tensor>,
    ) -> Result<Self, NumError> {
        if tensors.len() != MANIFEST.len() {
            return Err(NumError::Invalid(format!(
                "expected {} parameter tensors, got {}",
                MANIFEST.len(),
                tensors.len()
            )));
        }
        for (name, t) in MANIFEST.iter().zip(&tensors) {
            let want = manifest_shape(name, vocab_size, d, event_dim);
            if t.shape() != want {
                return Err(NumError::Invalid(format!(
                    "parameter {name}: expected shape {want:?}, got {:?}",
                    t.shape()
                )));
            }
        }
        Ok(Self {
            vocab_size,
            d,
            event_dim,
            tensors,
        })
    }

    pub fn manifest(&self) -> Vec<(&'static str, (usize, usize))> {
        MANIFEST
            .iter()
            .map(|n| (*n, manifest_shape(n, self.vocab_size, self.d, self.event_dim)))
            .collect()
    }

    pub fn names() -> &'static [&'static str] {
        &MANIFEST
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        MANIFEST
            .iter()
            .position(|n| *n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn replace_tensors(&mut self, tensors: Vec<Tensor>) -> Result<(), NumError> {
        let rebuilt =
            Self::from_tensors(self.vocab_size, self.d, self.event_dim, tensors)?;
        self.tensors = rebuilt.tensors;
        Ok(())
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn event_dim(&self) -> usize {
        self.event_dim
    }
}

/// Parameter leaves registered on one tape, plus the manifest-aligned id
/// list used to pull gradients out after a backward sweep.
pub struct BoundParams {
    pub ids: Vec<NodeId>,
    pub embed: NodeId,
    pub chronic_ctx_w: NodeId,
    pub chronic_ctx_b: NodeId,
    pub acute_ctx_w: NodeId,
    pub acute_ctx_b: NodeId,
    pub transfer_q: NodeId,
    pub transfer_k: NodeId,
    pub transfer_v: NodeId,
    pub gru: GruNodes,
    pub visit_att_proj: NodeId,
    pub visit_att_vec: NodeId,
    pub event_att_proj: NodeId,
    pub event_att_vec: NodeId,
    pub event_proj_w: NodeId,
    pub event_proj_b: NodeId,
    pub event_default: NodeId,
    pub gate_event_w: NodeId,
    pub gate_visit_w: NodeId,
    pub gate_b: NodeId,
    pub output_w: NodeId,
    pub output_b: NodeId,
    d: usize,
}

#[derive(Clone, Copy)]
pub struct GruNodes {
    pub update_x: NodeId,
    pub update_h: NodeId,
    pub update_b: NodeId,
    pub reset_x: NodeId,
    pub reset_h: NodeId,
    pub reset_b: NodeId,
    pub cand_x: NodeId,
    pub cand_h: NodeId,
    pub cand_b: NodeId,
}

impl BoundParams {
    pub fn bind(params: &ModelParameters, tape: &mut Tape) -> Self {
        let ids: Vec<NodeId> = params
            .tensors
            .iter()
            .map(|t| tape.leaf(t.clone()))
            .collect();
        let at = |name: &str| {
            ids[MANIFEST
                .iter()
                .position(|n| *n == name)
                .expect("manifest name")]
        };
        Self {
            embed: at("disease_embeddings"),
            chronic_ctx_w: at("chronic_ctx_w"),
            chronic_ctx_b: at("chronic_ctx_b"),
            acute_ctx_w: at("acute_ctx_w"),
            acute_ctx_b: at("acute_ctx_b"),
            transfer_q: at("transfer_q"),
            transfer_k: at("transfer_k"),
            transfer_v: at("transfer_v"),
            gru: GruNodes {
                update_x: at("gru_update_x"),
                update_h: at("gru_update_h"),
                update_b: at("gru_update_b"),
                reset_x: at("gru_reset_x"),
                reset_h: at("gru_reset_h"),
                reset_b: at("gru_reset_b"),
                cand_x: at("gru_cand_x"),
                cand_h: at("gru_cand_h"),
                cand_b: at("gru_cand_b"),
            },
            visit_att_proj: at("visit_att_proj"),
            visit_att_vec: at("visit_att_vec"),
            event_att_proj: at("event_att_proj"),
            event_att_vec: at("event_att_vec"),
            event_proj_w: at("event_proj_w"),
            event_proj_b: at("event_proj_b"),
            event_default: at("event_default"),
            gate_event_w: at("gate_event_w"),
            gate_visit_w: at("gate_visit_w"),
            gate_b: at("gate_b"),
            output_w: at("output_w"),
            output_b: at("output_b"),
            d: params.d,
            ids,
        }
    }
}

/// Differentiable embedding lookup; row i of the result is the
/// embedding row of `indices[i]`.
pub fn embed_codes(
    tape: &mut Tape,
    embeddings: NodeId,
    indices: &[usize],
) -> Result<NodeId, NumError> {
    tape.gather_rows(embeddings, indices)
}

/// Builds the two mean-aggregation operators of a hypergraph from its
/// {0,1} incidence: `me` (edges x nodes) averages member node rows into
/// hyperedge rows, and `mv` (nodes x edges) averages incident hyperedge
/// rows back into node rows.
pub fn mean_aggregation_matrices(
    incidence: &[Vec<f64>],
) -> Result<(Tensor, Tensor), NumError> {
    let n = incidence.len();
    if n == 0 || incidence[0].is_empty() {
        return Err(NumError::EmptyTensor {
            op: "mean_aggregation_matrices",
        });
    }
    let e = incidence[0].len();
    for row in incidence {
        if row.len() != e {
            return Err(NumError::Invalid("ragged incidence matrix".into()));
        }
        if row.iter().any(|v| *v != 0.0 && *v != 1.0) {
            return Err(NumError::Invalid("incidence entries must be 0 or 1".into()));
        }
    }
    let mut edge_size = vec![0.0f64; e];
    let mut node_degree = vec![0.0f64; n];
    for (i, row) in incidence.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            edge_size[j] += v;
            node_degree[i] += v;
        }
    }
    if edge_size.iter().any(|s| *s == 0.0) {
        return Err(NumError::Invalid(
            "incidence has an empty hyperedge column".into(),
        ));
    }
    if node_degree.iter().any(|d| *d == 0.0) {
        return Err(NumError::Invalid(
            "incidence has a disconnected node row".into(),
        ));
    }
    let mut me = Tensor::zeros(e, n);
    let mut mv = Tensor::zeros(n, e);
    for (i, row) in incidence.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if *v == 1.0 {
                me.set(j, i, 1.0 / edge_size[j]);
                mv.set(i, j, 1.0 / node_degree[i]);
            }
        }
    }
    Ok((mv, me))
}

/// Two-stage mean aggregation without the learned transform: hyperedge
/// rows are means of their member node rows, node contexts are means of
/// their incident hyperedge rows.
pub fn hyper_context_raw(
    tape: &mut Tape,
    node_reps: NodeId,
    incidence: &[Vec<f64>],
) -> Result<NodeId, NumError> {
    let (mv, me) = mean_aggregation_matrices(incidence)?;
    hyper_context_raw_with(tape, node_reps, &mv, &me)
}

fn hyper_context_raw_with(
    tape: &mut Tape,
    node_reps: NodeId,
    mv: &Tensor,
    me: &Tensor,
) -> Result<NodeId, NumError> {
    let me_leaf = tape.leaf(me.clone());
    let mv_leaf = tape.leaf(mv.clone());
    let edge_reps = tape.matmul(me_leaf, node_reps)?;
    tape.matmul(mv_leaf, edge_reps)
}

/// Full context: mean aggregation followed by a linear transform and
/// tanh.
pub fn hyper_context(
    tape: &mut Tape,
    node_reps: NodeId,
    incidence: &[Vec<f64>],
    w: NodeId,
    b: NodeId,
) -> Result<NodeId, NumError> {
    let raw = hyper_context_raw(tape, node_reps, incidence)?;
    transform_tanh(tape, raw, w, b)
}

fn transform_tanh(
    tape: &mut Tape,
    x: NodeId,
    w: NodeId,
    b: NodeId,
) -> Result<NodeId, NumError> {
    let lin = tape.matmul(x, w)?;
    let biased = tape.add_row_vec(lin, b)?;
    tape.tanh(biased)
}

/// Scaled dot-product attention with keys and values drawn from the
/// previous visit's node representations and queries from the current
/// visit's. Returns the output rows and the attention weights (one
/// row per query, each summing to 1).
pub fn transfer_attention(
    tape: &mut Tape,
    prev_nodes: NodeId,
    queries: NodeId,
    wq: NodeId,
    wk: NodeId,
    wv: NodeId,
) -> Result<(NodeId, NodeId), NumError> {
    let m = tape.value(prev_nodes).rows();
    if m == 0 {
        return Err(NumError::EmptyTensor {
            op: "transfer_attention",
        });
    }
    let d = tape.value(queries).cols();
    let q = tape.matmul(queries, wq)?;
    let k = tape.matmul(prev_nodes, wk)?;
    let v = tape.matmul(prev_nodes, wv)?;
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let scaled = tape.scale(scores, 1.0 / (d as f64).sqrt())?;
    let weights = tape.softmax_rows(scaled)?;
    let out = tape.matmul(weights, v)?;
    Ok((out, weights))
}

/// Standard GRU applied row-wise: z and r gates, candidate state, and
/// h = (1-z) o h_prev + z o h_cand.
pub fn gru_apply(
    tape: &mut Tape,
    g: &GruNodes,
    x: NodeId,
    h_prev: NodeId,
) -> Result<NodeId, NumError> {
    let gate = |tape: &mut Tape, wx, wh, b, h| -> Result<NodeId, NumError> {
        let xs = tape.matmul(x, wx)?;
        let hs = tape.matmul(h, wh)?;
        let sum = tape.add(xs, hs)?;
        tape.add_row_vec(sum, b)
    };
    let z_pre = gate(tape, g.update_x, g.update_h, g.update_b, h_prev)?;
    let z = tape.sigmoid(z_pre)?;
    let r_pre = gate(tape, g.reset_x, g.reset_h, g.reset_b, h_prev)?;
    let r = tape.sigmoid(r_pre)?;
    let gated_h = tape.mul_elem(r, h_prev)?;
    let c_pre = gate(tape, g.cand_x, g.cand_h, g.cand_b, gated_h)?;
    let cand = tape.tanh(c_pre)?;
    let keep = tape.one_minus(z)?;
    let kept = tape.mul_elem(keep, h_prev)?;
    let new = tape.mul_elem(z, cand)?;
    tape.add(kept, new)
}

/// Single-row GRU step (the n=1 case of [`gru_apply`]).
pub fn gru_step(
    tape: &mut Tape,
    g: &GruNodes,
    x: NodeId,
    h_prev: NodeId,
) -> Result<NodeId, NumError> {
    let xs = tape.value(x).shape();
    let hs = tape.value(h_prev).shape();
    if xs.0 != 1 || hs.0 != 1 || xs != hs {
        return Err(NumError::ShapeMismatch {
            op: "gru_step",
            lhs: xs,
            rhs: hs,
        });
    }
    gru_apply(tape, g, x, h_prev)
}

/// Additive attention over the visit representations: score_t =
/// w^T tanh(P v_t), weights softmax-normalized over t, output the
/// weighted sum of the v_t.
pub fn visit_attention(
    tape: &mut Tape,
    proj: NodeId,
    score_vec: NodeId,
    visit_reps: &[NodeId],
) -> Result<(NodeId, NodeId), NumError> {
    if visit_reps.is_empty() {
        return Err(NumError::EmptyTensor {
            op: "visit_attention",
        });
    }
    let seq = tape.concat_rows(visit_reps)?;
    attention_pool(tape, proj, score_vec, seq)
}

fn attention_pool(
    tape: &mut Tape,
    proj: NodeId,
    score_vec: NodeId,
    seq: NodeId,
) -> Result<(NodeId, NodeId), NumError> {
    let h = tape.matmul(seq, proj)?;
    let ht = tape.tanh(h)?;
    let scores = tape.matmul(ht, score_vec)?;
    let scores_t = tape.transpose(scores)?;
    let weights = tape.softmax_rows(scores_t)?;
    let pooled = tape.matmul(weights, seq)?;
    Ok((pooled, weights))
}

/// Attention aggregation of the per-type event vectors followed by a
/// linear projection into the model dimension. With no events the
/// learned default vector stands in. Returns (O_e, weights).
pub fn aggregate_events(
    tape: &mut Tape,
    bp: &BoundParams,
    event_vectors: Option<&Tensor>,
) -> Result<(NodeId, Option<NodeId>), NumError> {
    match event_vectors {
        Some(m) => {
            let m_leaf = tape.leaf(m.clone());
            let (pooled, weights) =
                attention_pool(tape, bp.event_att_proj, bp.event_att_vec, m_leaf)?;
            let projected = tape.matmul(pooled, bp.event_proj_w)?;
            let o_e = tape.add(projected, bp.event_proj_b)?;
            Ok((o_e, Some(weights)))
        }
        None => Ok((bp.event_default, None)),
    }
}

/// The fused prediction head: F = sigmoid(O_e W_e + O_v W_v + b_f),
/// u = F o O_v + (1-F) o O_e, y = activation(u W_y + b_y) clipped into
/// [eps, 1-eps] so downstream logs stay finite.
pub struct FusionNodes {
    pub gate: NodeId,
    pub fused: NodeId,
    pub y_hat: NodeId,
    pub y_clipped: NodeId,
}

pub fn fuse_predict(
    tape: &mut Tape,
    bp: &BoundParams,
    o_v: NodeId,
    o_e: NodeId,
    hp: &HyperParams,
) -> Result<FusionNodes, NumError> {
    let ge = tape.matmul(o_e, bp.gate_event_w)?;
    let gv = tape.matmul(o_v, bp.gate_visit_w)?;
    let sum = tape.add(ge, gv)?;
    let pre = tape.add(sum, bp.gate_b)?;
    let gate = tape.sigmoid(pre)?;
    let visit_side = tape.mul_elem(gate, o_v)?;
    let inverse = tape.one_minus(gate)?;
    let event_side = tape.mul_elem(inverse, o_e)?;
    let fused = tape.add(visit_side, event_side)?;
    let lin = tape.matmul(fused, bp.output_w)?;
    let logits = tape.add(lin, bp.output_b)?;
    let y_hat = match hp.output_activation {
        OutputActivation::Softmax => tape.softmax_rows(logits)?,
        OutputActivation::Sigmoid => tape.sigmoid(logits)?,
    };
    let y_clipped = tape.clamp(y_hat, hp.eps_clip, 1.0 - hp.eps_clip)?;
    Ok(FusionNodes {
        gate,
        fused,
        y_hat,
        y_clipped,
    })
}

/// Mean over predicted visits of the summed binary cross-entropy
/// -(y^T log yhat + (1-y)^T log(1-yhat)). Predictions must already be
/// clipped away from 0 and 1.
pub fn sequence_loss(
    tape: &mut Tape,
    predictions: &[NodeId],
    targets: &[Vec<f64>],
) -> Result<NodeId, NumError> {
    if predictions.is_empty() {
        return Err(NumError::EmptyTensor { op: "sequence_loss" });
    }
    if predictions.len() != targets.len() {
        return Err(NumError::Invalid(format!(
            "sequence_loss: {} predictions vs {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    let mut total: Option<NodeId> = None;
    for (pred, target) in predictions.iter().zip(targets) {
        let y = tape.leaf(Tensor::row_vector(target.clone())?);
        let y_inv = tape.leaf(Tensor::row_vector(
            target.iter().map(|v| 1.0 - v).collect(),
        )?);
        let log_p = tape.log(*pred)?;
        let pos = tape.mul_elem(y, log_p)?;
        let p_inv = tape.one_minus(*pred)?;
        let log_inv = tape.log(p_inv)?;
        let neg = tape.mul_elem(y_inv, log_inv)?;
        let both = tape.add(pos, neg)?;
        let visit_sum = tape.sum_all(both)?;
        total = Some(match total {
            None => visit_sum,
            Some(acc) => tape.add(acc, visit_sum)?,
        });
    }
    tape.scale(total.unwrap(), -1.0 / predictions.len() as f64)
}

/// One subgraph's numeric inputs: the aggregation operators plus a
/// constant scatter matrix that places context rows back onto the
/// visit's node rows (zero rows for nodes the context does not enrich).
#[derive(Debug, Clone)]
pub struct SubgraphInput {
    pub nodes: Vec<usize>,
    pub mv: Tensor,
    pub me: Tensor,
    pub scatter: Tensor,
}

/// One visit, fully prepared for the tape: sorted code indices, the
/// chronic/acute subgraph operators, and the visit's encoded event
/// vectors (rows of m_q), when any.
#[derive(Debug, Clone)]
pub struct VisitInput {
    pub nodes: Vec<usize>,
    pub chronic: Option<SubgraphInput>,
    pub acute: Option<SubgraphInput>,
    pub events: Option<Tensor>,
}

fn subgraph_input(
    graph: &VisitHypergraph,
    visit_nodes: &[usize],
    enrich: impl Fn(usize) -> bool,
) -> Result<SubgraphInput, NumError> {
    let incidence = graph.incidence_f64();
    let (mv, me) = mean_aggregation_matrices(&incidence)?;
    let mut scatter = Tensor::zeros(visit_nodes.len(), graph.n_nodes());
    for (j, node) in graph.nodes().iter().enumerate() {
        if enrich(*node) {
            let i = visit_nodes
                .binary_search(node)
                .map_err(|_| NumError::Invalid(format!("subgraph node {node} not in visit")))?;
            scatter.set(i, j, 1.0);
        }
    }
    Ok(SubgraphInput {
        nodes: graph.nodes().to_vec(),
        mv,
        me,
        scatter,
    })
}

/// Builds a [`VisitInput`] from one dynamic-hypergraph entry. The
/// chronic subgraph enriches all of its nodes; the acute subgraph
/// enriches only the acute nodes (its chronic members only provide
/// context).
pub fn prepare_visit(
    entry: &DynamicEntry,
    events: Option<Tensor>,
) -> Result<VisitInput, NumError> {
    let nodes = entry.full.nodes().to_vec();
    let chronic = entry
        .chronic_graph
        .as_ref()
        .map(|g| subgraph_input(g, &nodes, |_| true))
        .transpose()?;
    let acute = entry
        .acute_graph
        .as_ref()
        .map(|g| subgraph_input(g, &nodes, |n| entry.partition.acute.get(n)))
        .transpose()?;
    Ok(VisitInput {
        nodes,
        chronic,
        acute,
        events,
    })
}

/// Tape nodes produced for one visit.
pub struct VisitNodes {
    pub i_p: NodeId,
    pub z_en: NodeId,
    pub z_p: NodeId,
    pub v: NodeId,
    pub transfer_weights: Option<NodeId>,
}

/// The per-visit pipeline: embeddings enriched by the chronic and acute
/// hypergraph contexts, the transfer attention against the previous
/// visit's transfer outputs (zeros at the first visit), the per-node
/// GRU, and the max-pool visit representation.
pub fn forward_visit(
    tape: &mut Tape,
    bp: &BoundParams,
    visit: &VisitInput,
    prev_z_p: Option<NodeId>,
) -> Result<VisitNodes, NumError> {
    let base = embed_codes(tape, bp.embed, &visit.nodes)?;
    let mut i_p = base;
    for (sub, w, b) in [
        (&visit.chronic, bp.chronic_ctx_w, bp.chronic_ctx_b),
        (&visit.acute, bp.acute_ctx_w, bp.acute_ctx_b),
    ] {
        if let Some(sub) = sub {
            let reps = embed_codes(tape, bp.embed, &sub.nodes)?;
            let raw = hyper_context_raw_with(tape, reps, &sub.mv, &sub.me)?;
            let ctx = transform_tanh(tape, raw, w, b)?;
            let scatter = tape.leaf(sub.scatter.clone());
            let placed = tape.matmul(scatter, ctx)?;
            i_p = tape.add(i_p, placed)?;
        }
    }
    let (z_en, transfer_weights) = match prev_z_p {
        Some(prev) => {
            let (out, weights) =
                transfer_attention(tape, prev, i_p, bp.transfer_q, bp.transfer_k, bp.transfer_v)?;
            (out, Some(weights))
        }
        None => (tape.leaf(Tensor::zeros(visit.nodes.len(), bp.d)), None),
    };
    let z_p = gru_apply(tape, &bp.gru, i_p, z_en)?;
    let v = tape.max_over_rows(z_p)?;
    Ok(VisitNodes {
        i_p,
        z_en,
        z_p,
        v,
        transfer_weights,
    })
}

/// Stored intermediates for one visit, pulled off the tape.
#[derive(Debug, Clone)]
pub struct VisitTrace {
    pub nodes: Vec<usize>,
    pub i_p: Tensor,
    pub z_en: Tensor,
    pub z_p: Tensor,
    pub v: Tensor,
    pub transfer_weights: Option<Tensor>,
}

/// Stored intermediates for one prediction prefix.
#[derive(Debug, Clone)]
pub struct PrefixTrace {
    pub o_v: Tensor,
    pub visit_weights: Tensor,
    pub o_e: Tensor,
    pub event_weights: Option<Tensor>,
    pub gate: Tensor,
    pub fused: Tensor,
    pub y_hat: Tensor,
}

/// Every intermediate of one patient forward, for inspection and tests.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub visits: Vec<VisitTrace>,
    pub prefixes: Vec<PrefixTrace>,
}

fn run_visit_chain(
    tape: &mut Tape,
    bp: &BoundParams,
    visits: &[VisitInput],
) -> Result<Vec<VisitNodes>, NumError> {
    let mut chain = Vec::with_capacity(visits.len());
    let mut prev = None;
    for visit in visits {
        let nodes = forward_visit(tape, bp, visit, prev)?;
        prev = Some(nodes.z_p);
        chain.push(nodes);
    }
    Ok(chain)
}

struct PrefixNodes {
    fusion: FusionNodes,
    o_v: NodeId,
    o_e: NodeId,
    visit_weights: NodeId,
    event_weights: Option<NodeId>,
}

fn prefix_prediction(
    tape: &mut Tape,
    bp: &BoundParams,
    chain: &[VisitNodes],
    latest_visit: &VisitInput,
    hp: &HyperParams,
) -> Result<PrefixNodes, NumError> {
    let reps: Vec<NodeId> = chain.iter().map(|c| c.v).collect();
    let (o_v, visit_weights) =
        visit_attention(tape, bp.visit_att_proj, bp.visit_att_vec, &reps)?;
    let (o_e, event_weights) = aggregate_events(tape, bp, latest_visit.events.as_ref())?;
    let fusion = fuse_predict(tape, bp, o_v, o_e, hp)?;
    Ok(PrefixNodes {
        fusion,
        o_v,
        o_e,
        visit_weights,
        event_weights,
    })
}

fn prefix_trace(tape: &Tape, p: &PrefixNodes) -> PrefixTrace {
    PrefixTrace {
        o_v: tape.value(p.o_v).clone(),
        visit_weights: tape.value(p.visit_weights).clone(),
        o_e: tape.value(p.o_e).clone(),
        event_weights: p.event_weights.map(|w| tape.value(w).clone()),
        gate: tape.value(p.fusion.gate).clone(),
        fused: tape.value(p.fusion.fused).clone(),
        y_hat: tape.value(p.fusion.y_hat).clone(),
    }
}

fn visit_trace(tape: &Tape, visit: &VisitInput, nodes: &VisitNodes) -> VisitTrace {
    VisitTrace {
        nodes: visit.nodes.clone(),
        i_p: tape.value(nodes.i_p).clone(),
        z_en: tape.value(nodes.z_en).clone(),
        z_p: tape.value(nodes.z_p).clone(),
        v: tape.value(nodes.v).clone(),
        transfer_weights: nodes.transfer_weights.map(|w| tape.value(w).clone()),
    }
}

/// Teacher-forced training pass: for every prefix 1..t (t = 1..T-1) the
/// model predicts the diseases of visit t+1; the returned loss node is
/// the mean sequence loss over those predictions. `targets[i]` is the
/// multi-hot of visit i+2 (1-based visit i+1's successor).
pub fn forward_patient(
    tape: &mut Tape,
    bp: &BoundParams,
    visits: &[VisitInput],
    targets: &[Vec<f64>],
    hp: &HyperParams,
) -> Result<(NodeId, ForwardTrace), NumError> {
    let t_total = visits.len();
    if t_total < 2 {
        return Err(NumError::Invalid(format!(
            "forward_patient needs at least 2 visits, got {t_total}"
        )));
    }
    if targets.len() != t_total - 1 {
        return Err(NumError::Invalid(format!(
            "forward_patient: {} visits need {} targets, got {}",
            t_total,
            t_total - 1,
            targets.len()
        )));
    }
    let chain = run_visit_chain(tape, bp, &visits[..t_total - 1])?;
    let mut predictions = Vec::with_capacity(t_total - 1);
    let mut prefixes = Vec::with_capacity(t_total - 1);
    for t in 1..t_total {
        let p = prefix_prediction(tape, bp, &chain[..t], &visits[t - 1], hp)?;
        prefixes.push(prefix_trace(tape, &p));
        predictions.push(p.fusion.y_clipped);
    }
    let loss = sequence_loss(tape, &predictions, targets)?;
    let visit_traces = visits[..t_total - 1]
        .iter()
        .zip(&chain)
        .map(|(v, n)| visit_trace(tape, v, n))
        .collect();
    Ok((
        loss,
        ForwardTrace {
            visits: visit_traces,
            prefixes,
        },
    ))
}

/// Full-history inference: runs the visit chain over all T visits and
/// predicts the diseases of visit T+1.
pub fn forward_full(
    tape: &mut Tape,
    bp: &BoundParams,
    visits: &[VisitInput],
    hp: &HyperParams,
) -> Result<(NodeId, ForwardTrace), NumError> {
    if visits.is_empty() {
        return Err(NumError::Invalid(
            "forward_full needs at least 1 visit".into(),
        ));
    }
    let chain = run_visit_chain(tape, bp, visits)?;
    let p = prefix_prediction(tape, bp, &chain, visits.last().unwrap(), hp)?;
    let prefix = prefix_trace(tape, &p);
    let visit_traces = visits
        .iter()
        .zip(&chain)
        .map(|(v, n)| visit_trace(tape, v, n))
        .collect();
    Ok((
        p.fusion.y_hat,
        ForwardTrace {
            visits: visit_traces,
            prefixes: vec![prefix],
        },
    ))
}

/// Forward + backward for one patient on a fresh tape: the scalar loss
/// plus gradients for every parameter in manifest order.
pub fn patient_loss_and_grads(
    params: &ModelParameters,
    visits: &[VisitInput],
    targets: &[Vec<f64>],
    hp: &HyperParams,
) -> Result<(f64, Vec<Tensor>), NumError> {
    let mut tape = Tape::new();
    let bp = BoundParams::bind(params, &mut tape);
    let (loss, _) = forward_patient(&mut tape, &bp, visits, targets, hp)?;
    let grads = tape.backward(loss)?;
    let grad_vec = bp.ids.iter().map(|id| grads.wrt(*id)).collect();
    Ok((tape.value(loss).item(), grad_vec))
}

/// Forward-only loss value (the closure the gradient checker perturbs).
pub fn patient_loss_value(
    params: &ModelParameters,
    visits: &[VisitInput],
    targets: &[Vec<f64>],
    hp: &HyperParams,
) -> Result<f64, NumError> {
    let mut tape = Tape::new();
    let bp = BoundParams::bind(params, &mut tape);
    let (loss, _) = forward_patient(&mut tape, &bp, visits, targets, hp)?;
    Ok(tape.value(loss).item())
}

/// Forward with the full trace retained for inspection.
pub fn patient_forward_trace(
    params: &ModelParameters,
    visits: &[VisitInput],
    targets: &[Vec<f64>],
    hp: &HyperParams,
) -> Result<(f64, ForwardTrace), NumError> {
    let mut tape = Tape::new();
    let bp = BoundParams::bind(params, &mut tape);
    let (loss, trace) = forward_patient(&mut tape, &bp, visits, targets, hp)?;
    Ok((tape.value(loss).item(), trace))
}

/// Full-history prediction scores for the next (unseen) visit.
pub fn predict_full(
    params: &ModelParameters,
    visits: &[VisitInput],
    hp: &HyperParams,
) -> Result<(Tensor, ForwardTrace), NumError> {
    let mut tape = Tape::new();
    let bp = BoundParams::bind(params, &mut tape);
    let (y_hat, trace) = forward_full(&mut tape, &bp, visits, hp)?;
    Ok((tape.value(y_hat).clone(), trace))
}

/// Builds the tape-ready visit inputs and teacher-forcing targets for a
/// patient: dynamic hypergraph entries plus per-visit encoded events.
pub fn prepare_patient_inputs(
    patient: &PatientRecord,
    vocab: &DiseaseVocabulary,
    encoder: &dyn TextEncoder,
    hp: &HyperParams,
) -> Result<(Vec<VisitInput>, Vec<Vec<f64>>), PrepareError> {
    let dynamic = build_dynamic_hypergraph(patient, vocab, hp.chronic_window)?;
    let mut visits = Vec::with_capacity(dynamic.entries.len());
    for (entry, visit) in dynamic.entries.iter().zip(&patient.visits) {
        let events = encode_visit_events(&visit.events, encoder)?.map(|rep| rep.vectors);
        visits.push(prepare_visit(entry, events)?);
    }
    let code_indices = patient.visit_code_indices(vocab)?;
    let targets = code_indices[1..]
        .iter()
        .map(|idx| {
            let mut row = vec![0.0; vocab.len()];
            for &i in idx {
                row[i] = 1.0;
            }
            row
        })
        .collect();
    Ok((visits, targets))
}

#[derive(Debug, thiserror::Error)]
pub enum PrepareError {
    #[error(transparent)]
    Hypergraph(#[from] crate::hypergraph::HypergraphError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Data(#[from] crate::ehr::DataError),
}
