//! scratch calibration for the overfit fixture (criterion 3)
use dhce::ehr::{generate_synthetic, SynthConfig};
use dhce::harness::{batch_gradients, evaluate_prepared, prepare_dataset, ExecMode, PreparedPatient};
use dhce::events::HashingEncoder;
use dhce::model::{HyperParams, ModelParameters, OutputActivation};
use dhce::numkit::{AdamConfig, AdamState};

fn main() {
    let t0 = std::time::Instant::now();
    let synth = SynthConfig {
        n_patients: 10,
        vocab_size: 50,
        visits_per_patient: (2, 4),
        codes_per_visit: (1, 3),
        chronic_persistence: 0.5,
        rules: vec![],
        event_noise: 0.0,
        seed: 4,
    };
    let dataset = generate_synthetic(&synth).unwrap();
    let hp = HyperParams { d: 32, output_activation: OutputActivation::Sigmoid, eps_clip: 1e-12, chronic_window: 1 };
    let encoder = HashingEncoder::new(32, 0).unwrap();
    let prepared = prepare_dataset(&dataset, &dataset.vocabulary, &encoder, &hp).unwrap();
    let mut params = ModelParameters::init(dataset.vocabulary.len(), hp.d, 32, 11);
    let mut adam = AdamState::new(AdamConfig { lr: 0.01, ..AdamConfig::default() }, params.tensors());
    let batch: Vec<&PreparedPatient> = prepared.iter().collect();
    let mut final_loss = f64::NAN;
    let mut steps = 0;
    for step in 1..=500 {
        let (loss, grads) = batch_gradients(ExecMode::default_mode(), &params, &batch, &hp).unwrap();
        adam.step(params.tensors_mut(), &grads).unwrap();
        final_loss = loss;
        steps = step;
        if step % 50 == 0 { println!("step {step}: loss {loss:.6}"); }
        if loss < 0.04 { break; }
    }
    let report = evaluate_prepared(ExecMode::default_mode(), &params, &prepared, &hp).unwrap();
    println!("steps={steps} final_loss={final_loss:.6} p5={} elapsed={:?}", report.p5, t0.elapsed());
}
