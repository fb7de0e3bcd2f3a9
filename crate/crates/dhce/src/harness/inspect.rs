//! Debug rendering of per-visit hypergraphs and partitions as aligned
//! text tables.

use crate::ehr::{DiseaseVocabulary, PatientRecord};
use crate::hypergraph::{build_dynamic_hypergraph, VisitHypergraph};

use super::HarnessError;

fn render_graph(out: &mut String, title: &str, graph: &VisitHypergraph, vocab: &DiseaseVocabulary) {
    let name_width = graph
        .nodes()
        .iter()
        .map(|&n| vocab.code(n).len())
        .max()
        .unwrap_or(1)
        .max(4);
    out.push_str(&format!(
        "  {title}: {} node(s), {} hyperedge(s)\n",
        graph.n_nodes(),
        graph.n_edges()
    ));
    out.push_str(&format!("    {:name_width$} |", "node"));
    for e in 0..graph.n_edges() {
        out.push_str(&format!(" e{e}"));
    }
    out.push('\n');
    for (r, &node) in graph.nodes().iter().enumerate() {
        out.push_str(&format!("    {:name_width$} |", vocab.code(node)));
        for e in 0..graph.n_edges() {
            out.push_str(&format!("  {}", u8::from(graph.incident(r, e))));
        }
        out.push('\n');
    }
}

fn code_list(vocab: &DiseaseVocabulary, indices: &[usize]) -> String {
    if indices.is_empty() {
        return "(none)".to_string();
    }
    indices
        .iter()
        .map(|&i| vocab.code(i))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Renders every visit's hypergraph, chronic/acute partition, and the
/// two derived subgraphs.
pub fn render_patient(
    patient: &PatientRecord,
    vocab: &DiseaseVocabulary,
    chronic_window: usize,
) -> Result<String, HarnessError> {
    let dynamic = build_dynamic_hypergraph(patient, vocab, chronic_window)?;
    let mut out = format!(
        "patient {} ({} visits)\n",
        patient.patient_id,
        patient.visits.len()
    );
    for (t, entry) in dynamic.entries.iter().enumerate() {
        out.push_str(&format!("visit {}\n", t + 1));
        render_graph(&mut out, "visit hypergraph", &entry.full, vocab);
        out.push_str(&format!(
            "  chronic: {}\n  acute:   {}\n",
            code_list(vocab, &entry.partition.chronic.ones()),
            code_list(vocab, &entry.partition.acute.ones()),
        ));
        match &entry.chronic_graph {
            Some(g) => render_graph(&mut out, "chronic subgraph", g, vocab),
            None => out.push_str("  chronic subgraph: (empty)\n"),
        }
        match &entry.acute_graph {
            Some(g) => render_graph(&mut out, "acute subgraph", g, vocab),
            None => out.push_str("  acute subgraph: (empty)\n"),
        }
    }
    Ok(out)
}
