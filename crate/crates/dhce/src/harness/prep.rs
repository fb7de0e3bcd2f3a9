//! Dataset preparation: hypergraphs and encoded events are built once
//! per patient, then every training epoch reuses them.

use std::collections::BTreeSet;

use crate::ehr::Dataset;
use crate::ehr::DiseaseVocabulary;
use crate::events::TextEncoder;
use crate::model::{prepare_patient_inputs, HyperParams, VisitInput};

use super::HarnessError;

/// One patient's tape-ready inputs plus the metric-side targets.
#[derive(Debug, Clone)]
pub struct PreparedPatient {
    pub patient_id: String,
    pub visits: Vec<VisitInput>,
    /// Multi-hot target rows for visits 2..T.
    pub targets: Vec<Vec<f64>>,
    /// The same targets as sorted index sets, for ranking metrics.
    pub target_indices: Vec<Vec<usize>>,
}

/// Prepares every patient against the given vocabulary (which may be a
/// checkpoint's rather than the dataset's own). Unknown codes are
/// collected across the whole dataset and reported together.
pub fn prepare_dataset(
    dataset: &Dataset,
    vocab: &DiseaseVocabulary,
    encoder: &dyn TextEncoder,
    hp: &HyperParams,
) -> Result<Vec<PreparedPatient>, HarnessError> {
    let mut unknown: BTreeSet<String> = BTreeSet::new();
    for p in &dataset.patients {
        for v in &p.visits {
            for code in &v.codes {
                if vocab.index_of(code).is_none() {
                    unknown.insert(code.clone());
                }
            }
        }
    }
    if !unknown.is_empty() {
        return Err(HarnessError::UnknownCodes {
            codes: unknown.into_iter().collect(),
        });
    }

    dataset
        .patients
        .iter()
        .map(|patient| {
            let (visits, targets) = prepare_patient_inputs(patient, vocab, encoder, hp)?;
            let target_indices = targets
                .iter()
                .map(|row| {
                    row.iter()
                        .enumerate()
                        .filter_map(|(i, v)| (*v == 1.0).then_some(i))
                        .collect()
                })
                .collect();
            Ok(PreparedPatient {
                patient_id: patient.patient_id.clone(),
                visits,
                targets,
                target_indices,
            })
        })
        .collect()
}
