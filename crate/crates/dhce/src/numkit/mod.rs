//! Minimal dense-tensor kernel with reverse-mode differentiation, a
//! finite-difference gradient checker, and Adam.
//!
//! Everything is 64-bit: the models here are desk-scale, and exact
//! gradient checks plus bit-exact checkpoints matter more than speed.

mod gradcheck;
mod optim;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_report, GradCheckReport};
pub use optim::{AdamConfig, AdamState};
pub use tape::{Gradients, NodeId, Tape, UnaryFn};
pub use tensor::{NumError, Tensor};

#[cfg(test)]
mod property_tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;
    use rand::SeedableRng;

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(rows in 1usize..5, cols in 1usize..6, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-30.0..30.0)).collect();
            let t = Tensor::new(rows, cols, data).unwrap();
            let s = t.softmax_rows();
            for r in 0..rows {
                let sum: f64 = s.row(r).iter().sum();
                prop_assert!((sum - 1.0).abs() <= 1e-12);
                for c in 0..cols {
                    let v = s.get(r, c);
                    prop_assert!(v > 0.0 && v < 1.0 + 1e-12);
                }
            }
        }
    }

    /// Builds a random scalar-valued graph out of every supported op and
    /// returns (value, analytic grads) given leaf parameter tensors.
    fn random_graph_loss(
        seed: u64,
        params: &[Tensor],
    ) -> Result<(f64, Vec<Tensor>), NumError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tape = Tape::new();
        let leaves: Vec<NodeId> = params.iter().map(|p| tape.leaf(p.clone())).collect();
        let mut pool: Vec<NodeId> = leaves.clone();

        for _ in 0..12 {
            let pick = pool[rng.random_range(0..pool.len())];
            let (rows, cols) = tape.value(pick).shape();
            let node = match rng.random_range(0..10u32) {
                0 => {
                    let width = rng.random_range(1..4);
                    let other = tape.leaf(random_tensor(&mut rng, cols, width));
                    tape.matmul(pick, other)?
                }
                1 => {
                    let other = tape.leaf(random_tensor(&mut rng, rows, cols));
                    tape.add(pick, other)?
                }
                2 => {
                    let other = tape.leaf(random_tensor(&mut rng, rows, cols));
                    tape.mul_elem(pick, other)?
                }
                3 => tape.sigmoid(pick)?,
                4 => tape.tanh(pick)?,
                5 => tape.softmax_rows(pick)?,
                6 => tape.max_over_rows(pick)?,
                7 => tape.transpose(pick)?,
                8 => tape.scale(pick, rng.random_range(-2.0..2.0))?,
                _ => {
                    let v = tape.leaf(random_tensor(&mut rng, 1, cols));
                    tape.add_row_vec(pick, v)?
                }
            };
            pool.push(node);
        }
        // Fold everything into one scalar so every leaf stays reachable.
        // The fold is linear: a saturating nonlinearity here would shrink
        // all gradients below finite-difference resolution.
        let mut total = None;
        for id in pool {
            let s = tape.sum_all(id)?;
            total = Some(match total {
                None => s,
                Some(acc) => tape.add(acc, s)?,
            });
        }
        let loss = tape.scale(total.unwrap(), 0.1)?;
        let grads = tape.backward(loss)?;
        let analytic = leaves.iter().map(|l| grads.wrt(*l)).collect();
        Ok((tape.value(loss).item(), analytic))
    }

    fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::new(rows, cols, data).unwrap()
    }

    #[test]
    fn backward_matches_finite_differences_on_random_graphs() {
        let mut worst = 0.0f64;
        for seed in 0..50u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e3779b97f4a7c15);
            let mut params = Vec::new();
            for _ in 0..2 {
                let rows = rng.random_range(1..4);
                let cols = rng.random_range(1..4);
                params.push(random_tensor(&mut rng, rows, cols));
            }
            let (_, analytic) = random_graph_loss(seed, &params).unwrap();
            let err = grad_check(
                |p| random_graph_loss(seed, p).map(|(v, _)| v),
                &params,
                &analytic,
                1e-5,
            )
            .unwrap();
            worst = worst.max(err);
            assert!(err < 1e-4, "seed {seed}: relative error {err}");
        }
        // Keep a record of the observed worst case in test output.
        eprintln!("worst relative error over 50 random graphs: {worst:.3e}");
    }
}
