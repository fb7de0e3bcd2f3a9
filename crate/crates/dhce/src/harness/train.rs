//! Patient-batched Adam training with deterministic, order-fixed
//! gradient reduction.
//!
//! Per-patient gradients are independent, so the batch map may run on a
//! rayon pool (the `parallel` feature, on by default) or sequentially.
//! Results are collected in patient order and reduced left to right, so
//! both modes produce bit-identical parameters.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ehr::{generate_synthetic, load_dataset, split_dataset, Dataset};
use crate::model::{patient_loss_and_grads, HyperParams, ModelParameters};
use crate::numkit::{AdamState, Tensor};

use super::checkpoint::{Checkpoint, EncoderSpec};
use super::config::{EncoderConfig, TrainConfig};
use super::eval::evaluate_prepared;
use super::prep::{prepare_dataset, PreparedPatient};
use super::{map_ordered, ExecMode, HarnessError};

/// Mean loss and mean gradients over a batch of patients.
pub fn batch_gradients(
    mode: ExecMode,
    params: &ModelParameters,
    batch: &[&PreparedPatient],
    hp: &HyperParams,
) -> Result<(f64, Vec<Tensor>), HarnessError> {
    if batch.is_empty() {
        return Err(HarnessError::EmptyBatch);
    }
    let results = map_ordered(mode, batch, |p| {
        patient_loss_and_grads(params, &p.visits, &p.targets, hp)
            .map(|(loss, grads)| (p.patient_id.clone(), loss, grads))
    });
    let mut mean_loss = 0.0;
    let mut acc: Option<Vec<Tensor>> = None;
    for result in results {
        let (patient_id, loss, grads) = result?;
        if !loss.is_finite() {
            return Err(HarnessError::NonFiniteLoss { patient_id });
        }
        mean_loss += loss;
        acc = Some(match acc {
            None => grads,
            Some(mut sum) => {
                for (s, g) in sum.iter_mut().zip(&grads) {
                    *s = s.add(g)?;
                }
                sum
            }
        });
    }
    let n = batch.len() as f64;
    let mean_grads = acc
        .unwrap()
        .into_iter()
        .map(|g| g.scale(1.0 / n))
        .collect();
    Ok((mean_loss / n, mean_grads))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_p10: Option<f64>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub test: Option<Dataset>,
}

pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome, HarnessError> {
    train_with_mode(cfg, ExecMode::default_mode())
}

pub fn train_with_mode(
    cfg: &TrainConfig,
    mode: ExecMode,
) -> Result<TrainOutcome, HarnessError> {
    cfg.validate()?;
    let dataset = match &cfg.data {
        Some(path) => load_dataset(path, cfg.vocab.as_deref())?.0,
        None => generate_synthetic(&cfg.synth)?,
    };
    if dataset.patients.is_empty() {
        return Err(HarnessError::EmptyTrainSplit);
    }
    let (train_set, val_set, test_set) = split_dataset(
        &dataset,
        (cfg.split.train, cfg.split.val, cfg.split.test),
        cfg.split.seed,
    )?;
    if train_set.patients.is_empty() {
        return Err(HarnessError::EmptyTrainSplit);
    }

    let (encoder, encoder_spec) = build_encoder(&cfg.encoder)?;
    let vocab = dataset.vocabulary.clone();
    let train_prepared = prepare_dataset(&train_set, &vocab, encoder.as_ref(), &cfg.hp)?;
    let val_prepared = prepare_dataset(&val_set, &vocab, encoder.as_ref(), &cfg.hp)?;

    let mut params =
        ModelParameters::init(vocab.len(), cfg.hp.d, encoder_spec.dim(), cfg.seed);
    let mut adam = AdamState::new(cfg.adam, params.tensors());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5851f42d4c957f2d);

    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ModelParameters)> = None;
    let mut epochs_since_best = 0usize;

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train_prepared.len()).collect();
        order.shuffle(&mut rng);

        let mut epoch_loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&PreparedPatient> =
                chunk.iter().map(|&i| &train_prepared[i]).collect();
            let (batch_loss, grads) = batch_gradients(mode, &params, &batch, &cfg.hp)?;
            epoch_loss_sum += batch_loss * batch.len() as f64;
            adam.step(params.tensors_mut(), &grads)?;
        }
        let train_loss = epoch_loss_sum / train_prepared.len() as f64;

        let val_p10 = if val_prepared.is_empty() {
            None
        } else {
            let report = evaluate_prepared(mode, &params, &val_prepared, &cfg.hp)?;
            Some(report.p10)
        };
        log.push(EpochLog {
            epoch,
            train_loss,
            val_p10,
        });
        log::info!(
            "epoch {epoch}: train_loss={train_loss:.6}{}",
            val_p10
                .map(|p| format!(" val_p10={p:.4}"))
                .unwrap_or_default()
        );

        match val_p10 {
            Some(p10) => {
                let improved = best.as_ref().map_or(true, |(bp, _, _)| p10 > *bp);
                if improved {
                    best = Some((p10, epoch, params.clone()));
                    epochs_since_best = 0;
                } else {
                    epochs_since_best += 1;
                    if epochs_since_best >= cfg.patience {
                        log::info!("early stop at epoch {epoch}");
                        break;
                    }
                }
            }
            None => {
                best = Some((0.0, epoch, params.clone()));
            }
        }
    }

    let (_, best_epoch, best_params) = best.expect("at least one epoch ran");
    let checkpoint = Checkpoint {
        hp: cfg.hp,
        encoder: encoder_spec,
        vocabulary: vocab,
        event_types: dataset.event_types.as_ref().clone(),
        params: best_params,
    };
    if let Some(path) = &cfg.checkpoint {
        super::checkpoint::save_checkpoint(&checkpoint, path)?;
        log::info!("checkpoint saved to {}", path.display());
    }
    Ok(TrainOutcome {
        checkpoint,
        log,
        best_epoch,
        test: Some(test_set),
    })
}

pub fn build_encoder(
    cfg: &EncoderConfig,
) -> Result<(Box<dyn crate::events::TextEncoder>, EncoderSpec), HarnessError> {
    match cfg {
        EncoderConfig::Hashing { dim, seed } => {
            let enc = crate::events::HashingEncoder::new(*dim, *seed)?;
            Ok((
                Box::new(enc),
                EncoderSpec::Hashing {
                    dim: *dim,
                    seed: *seed,
                },
            ))
        }
        EncoderConfig::Remote {
            endpoint,
            timeout_ms,
            retries,
        } => {
            let enc = crate::events::RemoteEncoder::connect(
                endpoint,
                std::time::Duration::from_millis(*timeout_ms),
                *retries,
            )?;
            let dim = crate::events::TextEncoder::dim(&enc);
            Ok((
                Box::new(enc),
                EncoderSpec::Remote {
                    endpoint: endpoint.clone(),
                    dim,
                    timeout_ms: *timeout_ms,
                    retries: *retries,
                },
            ))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::prepare_dataset;

    fn tiny_config() -> TrainConfig {
        let mut cfg = TrainConfig::default();
        cfg.synth = SynthFixture::small();
        cfg.split = super::super::SplitSpec {
            train: 1.0,
            val: 0.0,
            test: 0.0,
            seed: 1,
        };
        cfg.hp.d = 8;
        cfg.hp.output_activation = crate::model::OutputActivation::Sigmoid;
        cfg.encoder = EncoderConfig::Hashing { dim: 8, seed: 0 };
        cfg.epochs = 3;
        cfg.batch_size = 4;
        cfg.seed = 5;
        cfg
    }

    struct SynthFixture;
    impl SynthFixture {
        fn small() -> crate::ehr::SynthConfig {
            crate::ehr::SynthConfig {
                n_patients: 8,
                vocab_size: 12,
                visits_per_patient: (2, 4),
                codes_per_visit: (1, 3),
                chronic_persistence: 0.5,
                rules: vec![],
                event_noise: 0.0,
                seed: 3,
            }
        }
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = tiny_config();
        let a = train(&cfg).unwrap();
        let b = train(&cfg).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(
            a.checkpoint.to_bytes(),
            b.checkpoint.to_bytes(),
            "checkpoint bytes differ between identical runs"
        );
    }

    #[test]
    fn sequential_and_parallel_gradients_are_bit_identical() {
        let cfg = tiny_config();
        let dataset = generate_synthetic(&cfg.synth).unwrap();
        let (encoder, spec) = build_encoder(&cfg.encoder).unwrap();
        let prepared =
            prepare_dataset(&dataset, &dataset.vocabulary, encoder.as_ref(), &cfg.hp).unwrap();
        let params =
            ModelParameters::init(dataset.vocabulary.len(), cfg.hp.d, spec.dim(), cfg.seed);
        let batch: Vec<&PreparedPatient> = prepared.iter().collect();
        let (loss_seq, grads_seq) =
            batch_gradients(ExecMode::Sequential, &params, &batch, &cfg.hp).unwrap();
        #[cfg(feature = "parallel")]
        {
            let (loss_par, grads_par) =
                batch_gradients(ExecMode::Parallel, &params, &batch, &cfg.hp).unwrap();
            assert_eq!(loss_seq.to_bits(), loss_par.to_bits());
            for (a, b) in grads_seq.iter().zip(&grads_par) {
                assert_eq!(a, b);
            }
        }
        let _ = (loss_seq, grads_seq);
    }

    #[test]
    fn epoch_loss_decreases_on_a_small_fixture() {
        let mut cfg = tiny_config();
        cfg.epochs = 10;
        cfg.adam.lr = 0.02;
        let outcome = train(&cfg).unwrap();
        let first = outcome.log.first().unwrap().train_loss;
        let last = outcome.log.last().unwrap().train_loss;
        assert!(
            last < first,
            "training made no progress: first {first}, last {last}"
        );
    }

    #[test]
    fn empty_train_split_is_an_error() {
        let mut cfg = tiny_config();
        cfg.synth.n_patients = 2;
        cfg.split = super::super::SplitSpec {
            train: 0.34,
            val: 0.33,
            test: 0.33,
            seed: 0,
        };
        // 2 patients cannot fill 3 nonzero splits.
        assert!(train(&cfg).is_err());
    }
}
