use rayon::prelude::*;

use super::{lambda_weights, pair_loss, LambdaWeights};
use crate::corpus::Dialog;
use crate::encoder::ModelState;
use crate::error::{Error, Result};

/// Gradient of the summed pairwise loss over one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGradient {
    /// `∂L/∂θ` in the flat parameter layout.
    pub grad: Vec<f64>,
    /// Summed loss over all pairs.
    pub loss: f64,
    pub scores: Vec<f64>,
    pub lambdas: LambdaWeights,
    /// Pairs whose better dialog currently scores strictly higher (ties count half).
    pub correct: f64,
    pub n_pairs: usize,
    pub forward_passes: usize,
    pub backward_passes: usize,
}

/// Exact gradient of `Σ_(b, w) pair_loss(o_b, o_w, true)` for oriented
/// `(better, worse)` index pairs into `batch`.
///
/// Runs one forward pass per dialog, turns the scores into λ-weights, then
/// runs one backward pass per dialog seeded with its λ. Backward passes are
/// accumulated in ascending dialog order, so the result is bit-reproducible.
pub fn batch_gradient(
    batch: &[&Dialog],
    pairs: &[(usize, usize)],
    state: &ModelState,
) -> Result<BatchGradient> {
    state.validate()?;
    let n = batch.len();
    for &(a, b) in pairs {
        for index in [a, b] {
            if index >= n {
                return Err(Error::IndexOutOfRange { index, len: n });
            }
        }
    }

    let forwards: Vec<_> = batch.par_iter().map(|d| state.forward(d)).collect();
    let scores: Vec<f64> = forwards.iter().map(|f| f.score).collect();
    let lambdas = lambda_weights(&scores, pairs)?;

    let mut loss = 0.0;
    let mut correct = 0.0;
    for &(better, worse) in pairs {
        loss += pair_loss(scores[better], scores[worse], true);
        if scores[better] > scores[worse] {
            correct += 1.0;
        } else if scores[better] == scores[worse] {
            correct += 0.5;
        }
    }

    let mut grad = vec![0.0; state.params.data.len()];
    let mut backward_passes = 0;
    for (fwd, &lambda) in forwards.iter().zip(&lambdas.values) {
        backward_passes += 1;
        if lambda != 0.0 {
            state.params.backward_score(fwd, lambda, &mut grad);
        }
    }

    Ok(BatchGradient {
        grad,
        loss,
        scores,
        lambdas,
        correct,
        n_pairs: pairs.len(),
        forward_passes: forwards.len(),
        backward_passes,
    })
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::corpus::{Role, Turn};
    use crate::encoder::{init_state, EncoderConfig};

    fn dialogs(n: usize) -> Vec<Dialog> {
        (0..n)
            .map(|i| {
                let turns = vec![
                    Turn::new(Role::System, format!("topic {} please", i % 3)),
                    Turn::new(Role::User, format!("answer {i} here")),
                ];
                Dialog::new(format!("d{i}"), turns, None)
            })
            .collect()
    }

    fn state() -> ModelState {
        init_state(&EncoderConfig {
            hash_dim: 128,
            hidden_dim: 16,
            feature_dim: 8,
            ngram_orders: BTreeSet::from([1, 2]),
            init_seed: 5,
        })
        .unwrap()
    }

    #[test]
    fn empty_pair_list_gives_zero_gradient() {
        let ds = dialogs(4);
        let batch: Vec<&Dialog> = ds.iter().collect();
        let g = batch_gradient(&batch, &[], &state()).unwrap();
        assert!(g.grad.iter().all(|&x| x == 0.0));
        assert_eq!(g.loss, 0.0);
    }

    #[test]
    fn doubling_pairs_doubles_the_gradient() {
        let ds = dialogs(5);
        let batch: Vec<&Dialog> = ds.iter().collect();
        let pairs = vec![(0, 1), (2, 4), (3, 1)];
        let doubled: Vec<_> = pairs.iter().chain(&pairs).copied().collect();
        let s = state();
        let g1 = batch_gradient(&batch, &pairs, &s).unwrap();
        let g2 = batch_gradient(&batch, &doubled, &s).unwrap();
        for (a, b) in g1.grad.iter().zip(&g2.grad) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn pass_counts_do_not_depend_on_pair_count() {
        let ds = dialogs(6);
        let batch: Vec<&Dialog> = ds.iter().collect();
        let all_pairs: Vec<(usize, usize)> = (0..6)
            .flat_map(|i| (0..6).filter(move |&j| j != i).map(move |j| (i, j)))
            .collect();
        let s = state();
        for pairs in [&all_pairs[..1], &all_pairs[..]] {
            let g = batch_gradient(&batch, pairs, &s).unwrap();
            assert_eq!(g.forward_passes, 6);
            assert_eq!(g.backward_passes, 6);
        }
    }

    #[test]
    fn out_of_range_pair_is_rejected() {
        let ds = dialogs(2);
        let batch: Vec<&Dialog> = ds.iter().collect();
        assert!(batch_gradient(&batch, &[(0, 2)], &state()).is_err());
    }
}
