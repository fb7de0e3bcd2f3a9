//! Ranking metrics for next-visit prediction.

use crate::numkit::NumError;

/// Code indices sorted by descending score; ties break toward the
/// lower code index.
pub fn rank_codes(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| a.cmp(&b))
    });
    order
}

/// |top-k(scores) ∩ truth| / min(k, |truth|).
pub fn precision_at_k(scores: &[f64], truth: &[usize], k: usize) -> Result<f64, NumError> {
    if k == 0 {
        return Err(NumError::Invalid("precision_at_k: k must be >= 1".into()));
    }
    if truth.is_empty() {
        return Err(NumError::Invalid(
            "precision_at_k: truth set must be nonempty".into(),
        ));
    }
    let ranked = rank_codes(scores);
    let hits = ranked
        .iter()
        .take(k)
        .filter(|idx| truth.contains(idx))
        .count();
    Ok(hits as f64 / k.min(truth.len()) as f64)
}

/// Summed binary cross-entropy of one prediction row against a
/// multi-hot target, with the same clipping the training loss applies.
pub fn bce_sum(scores: &[f64], truth: &[usize], eps_clip: f64) -> f64 {
    let mut total = 0.0;
    for (i, s) in scores.iter().enumerate() {
        let p = s.clamp(eps_clip, 1.0 - eps_clip);
        if truth.contains(&i) {
            total -= p.ln();
        } else {
            total -= (1.0 - p).ln();
        }
    }
    total
}

/// Aggregated next-visit metrics over every predicted visit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub p5: f64,
    pub p10: f64,
    pub p20: f64,
    pub mean_loss: f64,
    pub n_patients: usize,
    pub n_predicted_visits: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scores_ranking_1_2_3(n: usize) -> Vec<f64> {
        // score for code i decreases with i, so the ranking is 0,1,2,...
        (0..n).map(|i| 1.0 - i as f64 / n as f64).collect()
    }

    #[test]
    fn hand_counted_examples() {
        // truth {1,3}, ranking [0,1,2,...]: top-2 catches {1} -> 1/2
        let scores = scores_ranking_1_2_3(6);
        assert_eq!(precision_at_k(&scores, &[1, 3], 2).unwrap(), 0.5);
        // k=3 catches {1,3}? top-3 = {0,1,2} -> 1 hit / min(3,2)=2 -> 0.5;
        // with k=4, top-4 = {0,1,2,3} -> 2/2 = 1.0
        assert_eq!(precision_at_k(&scores, &[1, 3], 4).unwrap(), 1.0);
    }

    #[test]
    fn spec_style_ranking_indices_start_at_one() {
        // A ranking that puts code 1 first, then 2, then 3: truth {1,3}
        // at k=2 -> 1/2, at k=3 -> 2/2.
        let mut scores = vec![0.0; 6];
        scores[1] = 0.9;
        scores[2] = 0.8;
        scores[3] = 0.7;
        assert_eq!(precision_at_k(&scores, &[1, 3], 2).unwrap(), 0.5);
        assert_eq!(precision_at_k(&scores, &[1, 3], 3).unwrap(), 1.0);
    }

    #[test]
    fn perfect_topk_hits_one() {
        let scores = scores_ranking_1_2_3(8);
        assert_eq!(precision_at_k(&scores, &[0, 1, 2], 3).unwrap(), 1.0);
    }

    #[test]
    fn ties_break_by_ascending_index() {
        let scores = vec![0.5, 0.5, 0.5];
        assert_eq!(rank_codes(&scores), vec![0, 1, 2]);
        assert_eq!(precision_at_k(&scores, &[2], 1).unwrap(), 0.0);
        assert_eq!(precision_at_k(&scores, &[0], 1).unwrap(), 1.0);
    }

    #[test]
    fn empty_truth_is_an_error() {
        assert!(precision_at_k(&[0.1, 0.9], &[], 1).is_err());
    }

    proptest! {
        #[test]
        fn precision_bounded_and_monotone_past_truth_size(
            seed in any::<u64>(),
            n in 4usize..32,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let truth: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.3)).collect();
            prop_assume!(!truth.is_empty());
            // Below |truth| the min(k, |truth|) normalizer can shrink the
            // value as k grows (1 hit over min(2, 2) after 1 hit over
            // min(1, 2)); from k = |truth| on, the denominator is fixed
            // and hits only accumulate.
            let mut prev = 0.0;
            for k in 1..=n {
                let p = precision_at_k(&scores, &truth, k).unwrap();
                prop_assert!((0.0..=1.0).contains(&p));
                if k > truth.len() {
                    prop_assert!(p >= prev - 1e-15, "k={k}: {p} < {prev}");
                }
                prev = p;
            }
        }
    }
}
