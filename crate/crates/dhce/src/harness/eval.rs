//! Evaluation: every next-visit prediction is ranked against the codes
//! actually diagnosed in the following visit. The model is read-only
//! here, so patients evaluate in parallel (order-fixed aggregation).

use crate::ehr::{Dataset, PatientRecord};
use crate::model::{patient_forward_trace, predict_full, HyperParams, ModelParameters};

use super::checkpoint::Checkpoint;
use super::metrics::{bce_sum, precision_at_k, rank_codes, EvalReport};
use super::prep::{prepare_dataset, PreparedPatient};
use super::{map_ordered, ExecMode, HarnessError};

/// Scores every prefix of every prepared patient.
pub fn evaluate_prepared(
    mode: ExecMode,
    params: &ModelParameters,
    prepared: &[PreparedPatient],
    hp: &HyperParams,
) -> Result<EvalReport, HarnessError> {
    if prepared.is_empty() {
        return Err(HarnessError::EmptyEvalSet);
    }
    struct PatientStats {
        p5: f64,
        p10: f64,
        p20: f64,
        loss: f64,
        visits: usize,
    }
    let per_patient = map_ordered(mode, prepared, |p| -> Result<PatientStats, HarnessError> {
        let (_, trace) = patient_forward_trace(params, &p.visits, &p.targets, hp)?;
        let mut stats = PatientStats {
            p5: 0.0,
            p10: 0.0,
            p20: 0.0,
            loss: 0.0,
            visits: 0,
        };
        for (prefix, truth) in trace.prefixes.iter().zip(&p.target_indices) {
            let scores = prefix.y_hat.row(0);
            stats.p5 += precision_at_k(scores, truth, 5)?;
            stats.p10 += precision_at_k(scores, truth, 10)?;
            stats.p20 += precision_at_k(scores, truth, 20)?;
            stats.loss += bce_sum(scores, truth, hp.eps_clip);
            stats.visits += 1;
        }
        Ok(stats)
    });

    let mut totals = (0.0, 0.0, 0.0, 0.0);
    let mut n_visits = 0usize;
    for stats in per_patient {
        let s = stats?;
        totals.0 += s.p5;
        totals.1 += s.p10;
        totals.2 += s.p20;
        totals.3 += s.loss;
        n_visits += s.visits;
    }
    let n = n_visits as f64;
    Ok(EvalReport {
        p5: totals.0 / n,
        p10: totals.1 / n,
        p20: totals.2 / n,
        mean_loss: totals.3 / n,
        n_patients: prepared.len(),
        n_predicted_visits: n_visits,
    })
}

/// Evaluates a checkpoint on a dataset. The dataset's codes are mapped
/// through the checkpoint's vocabulary; unknown codes are an error.
pub fn evaluate(checkpoint: &Checkpoint, dataset: &Dataset) -> Result<EvalReport, HarnessError> {
    if dataset.patients.is_empty() {
        return Err(HarnessError::EmptyEvalSet);
    }
    let encoder = checkpoint.encoder.build()?;
    let prepared = prepare_dataset(
        dataset,
        &checkpoint.vocabulary,
        encoder.as_ref(),
        &checkpoint.hp,
    )?;
    evaluate_prepared(
        ExecMode::default_mode(),
        &checkpoint.params,
        &prepared,
        &checkpoint.hp,
    )
}

/// Global training-frequency scores: rank every code by how often it
/// was diagnosed in the training set.
pub fn frequency_scores(train: &Dataset, vocab_len: usize) -> Result<Vec<f64>, HarnessError> {
    let mut counts = vec![0.0f64; vocab_len];
    let mut total = 0.0;
    for p in &train.patients {
        let idx = p.visit_code_indices(&train.vocabulary)?;
        for visit in idx {
            for i in visit {
                counts[i] += 1.0;
                total += 1.0;
            }
        }
    }
    if total > 0.0 {
        for c in &mut counts {
            *c /= total;
        }
    }
    Ok(counts)
}

/// Runs the same per-prefix scoring loop as the model evaluation, but
/// with one constant score vector. This is the ranking baseline the
/// learnability check compares against.
pub fn evaluate_constant_scores(
    scores: &[f64],
    prepared: &[PreparedPatient],
    eps_clip: f64,
) -> Result<EvalReport, HarnessError> {
    if prepared.is_empty() {
        return Err(HarnessError::EmptyEvalSet);
    }
    let mut totals = (0.0, 0.0, 0.0, 0.0);
    let mut n_visits = 0usize;
    for p in prepared {
        for truth in &p.target_indices {
            totals.0 += precision_at_k(scores, truth, 5)?;
            totals.1 += precision_at_k(scores, truth, 10)?;
            totals.2 += precision_at_k(scores, truth, 20)?;
            totals.3 += bce_sum(scores, truth, eps_clip);
            n_visits += 1;
        }
    }
    let n = n_visits as f64;
    Ok(EvalReport {
        p5: totals.0 / n,
        p10: totals.1 / n,
        p20: totals.2 / n,
        mean_loss: totals.3 / n,
        n_patients: prepared.len(),
        n_predicted_visits: n_visits,
    })
}

/// Full-history scores for one patient, sorted by descending score with
/// ties broken toward the lower code index.
pub fn predict_next(
    checkpoint: &Checkpoint,
    patient: &PatientRecord,
) -> Result<Vec<(String, f64)>, HarnessError> {
    if patient.visits.is_empty() {
        return Err(HarnessError::NoVisits {
            patient_id: patient.patient_id.clone(),
        });
    }
    let encoder = checkpoint.encoder.build()?;
    let mut unknown: Vec<String> = Vec::new();
    for v in &patient.visits {
        for code in &v.codes {
            if checkpoint.vocabulary.index_of(code).is_none() && !unknown.contains(code) {
                unknown.push(code.clone());
            }
        }
    }
    if !unknown.is_empty() {
        unknown.sort();
        return Err(HarnessError::UnknownCodes { codes: unknown });
    }
    let (visits, _) = crate::model::prepare_patient_inputs(
        patient,
        &checkpoint.vocabulary,
        encoder.as_ref(),
        &checkpoint.hp,
    )?;
    let (scores, _) = predict_full(&checkpoint.params, &visits, &checkpoint.hp)?;
    let row = scores.row(0);
    let order = rank_codes(row);
    Ok(order
        .into_iter()
        .map(|i| (checkpoint.vocabulary.code(i).to_string(), row[i]))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ehr::{generate_synthetic, SynthConfig};
    use crate::events::HashingEncoder;

    fn prepared_fixture() -> (Vec<PreparedPatient>, usize) {
        let synth = SynthConfig {
            n_patients: 6,
            vocab_size: 25,
            visits_per_patient: (2, 4),
            codes_per_visit: (2, 4),
            chronic_persistence: 0.5,
            rules: vec![],
            event_noise: 0.0,
            seed: 9,
        };
        let dataset = generate_synthetic(&synth).unwrap();
        let encoder = HashingEncoder::new(8, 0).unwrap();
        let hp = HyperParams {
            d: 8,
            ..HyperParams::default()
        };
        let prepared = prepare_dataset(&dataset, &dataset.vocabulary, &encoder, &hp).unwrap();
        (prepared, dataset.vocabulary.len())
    }

    #[test]
    fn perfect_scores_hit_precision_one_everywhere() {
        // Feeding each visit's own multi-hot as the score vector is the
        // perfect-ranker fixture: all true codes rank ahead of the rest.
        let (prepared, vocab_len) = prepared_fixture();
        for p in &prepared {
            for (truth, target_row) in p.target_indices.iter().zip(&p.targets) {
                for k in [5, 10, 20] {
                    let got = precision_at_k(target_row, truth, k).unwrap();
                    assert_eq!(got, 1.0, "k={k}");
                }
                assert_eq!(target_row.len(), vocab_len);
            }
        }
    }

    #[test]
    fn uniform_scores_match_a_brute_force_oracle() {
        let (prepared, vocab_len) = prepared_fixture();
        let uniform = vec![0.5; vocab_len];
        let report = evaluate_constant_scores(&uniform, &prepared, 1e-12).unwrap();
        // Ties break toward low indices, so top-k is exactly {0..k-1}.
        let mut expect = (0.0, 0.0, 0.0);
        let mut n = 0usize;
        for p in &prepared {
            for truth in &p.target_indices {
                let hits = |k: usize| {
                    truth.iter().filter(|&&i| i < k).count() as f64
                        / k.min(truth.len()) as f64
                };
                expect.0 += hits(5);
                expect.1 += hits(10);
                expect.2 += hits(20);
                n += 1;
            }
        }
        assert_eq!(report.p5, expect.0 / n as f64);
        assert_eq!(report.p10, expect.1 / n as f64);
        assert_eq!(report.p20, expect.2 / n as f64);
        assert_eq!(report.n_predicted_visits, n);
    }

    #[test]
    fn empty_dataset_is_an_error_not_a_zero_report() {
        let params = ModelParameters::init(4, 4, 8, 0);
        let hp = HyperParams {
            d: 4,
            ..HyperParams::default()
        };
        assert!(matches!(
            evaluate_prepared(ExecMode::Sequential, &params, &[], &hp),
            Err(HarnessError::EmptyEvalSet)
        ));
    }

    #[test]
    fn frequency_scores_normalize_over_observations() {
        let synth = SynthConfig {
            n_patients: 5,
            vocab_size: 10,
            ..SynthConfig::default()
        };
        let dataset = generate_synthetic(&synth).unwrap();
        let scores = frequency_scores(&dataset, dataset.vocabulary.len()).unwrap();
        assert_eq!(scores.len(), 10);
        let sum: f64 = scores.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }
}
