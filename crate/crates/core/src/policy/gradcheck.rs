use ndarray::{Array1, Array2};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::decode::teacher_forced_input;
use super::model::log_softmax;
use super::tokenizer::TokenId;
use super::{PolicyError, PolicyModel, Scalar};

/// Mean per-token cross-entropy of every response token in `batch`, with
/// its gradient. Each element is `(context ids, response ids)`; responses are
/// scored with teacher forcing.
pub fn cross_entropy_loss_and_grad<F: Scalar>(
    model: &PolicyModel<F>,
    batch: &[(Vec<TokenId>, Vec<TokenId>)],
) -> Result<(f64, Vec<F>), PolicyError> {
    let n_tokens: usize = batch.iter().map(|(_, r)| r.len()).sum();
    if n_tokens == 0 {
        return Err(PolicyError::EmptySequence);
    }
    let inv_n = F::c(1.0 / n_tokens as f64);
    let mut grads = vec![F::zero(); model.num_params()];
    let mut loss = 0.0f64;
    for (ctx, resp) in batch {
        if resp.is_empty() || ctx.is_empty() {
            return Err(PolicyError::EmptySequence);
        }
        let input = teacher_forced_input(ctx, resp);
        let cache = model.forward_sequence(&input)?;
        let (t, v) = cache.logits.dim();
        let mut dlogits = Array2::zeros((t, v));
        let start = ctx.len() - 1;
        for (i, &tok) in resp.iter().enumerate() {
            if tok as usize >= v {
                return Err(PolicyError::TokenOutOfRange { id: tok, vocab: v });
            }
            let lp = log_softmax(cache.logits.row(start + i));
            loss -= lp[tok as usize].as_f64();
            let mut drow = dlogits.row_mut(start + i);
            for (j, g) in drow.iter_mut().enumerate() {
                let p = lp[j].exp();
                *g = (if j == tok as usize { p - F::one() } else { p }) * inv_n;
            }
        }
        model.backward(&cache, &dlogits, &Array1::zeros(t), &mut grads);
    }
    Ok((loss / n_tokens as f64, grads))
}

/// Which parameters the finite-difference check visits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradCheckMode {
    All,
    /// A seeded random subset of this many distinct parameters.
    Subset { count: usize, seed: u64 },
}

/// Smallest denominator used when forming relative errors. Rounding in the
/// differenced losses leaves ~1e-10 of noise in the numeric gradient, so
/// gradients below this scale are judged on absolute error instead.
const REL_FLOOR: f64 = 1e-4;

/// Compares the analytic gradient of the mean cross-entropy against
/// fourth-order central differences with step `epsilon`. Returns the maximum
/// relative error `|analytic − numeric| / max(|analytic|, |numeric|, 1e-4)`.
pub fn grad_check(
    model: &PolicyModel<f64>,
    batch: &[(Vec<TokenId>, Vec<TokenId>)],
    epsilon: f64,
    mode: GradCheckMode,
) -> Result<f64, PolicyError> {
    let (_, analytic) = cross_entropy_loss_and_grad(model, batch)?;
    let n = model.num_params();
    let indices: Vec<usize> = match mode {
        GradCheckMode::All => (0..n).collect(),
        GradCheckMode::Subset { count, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx = sample(&mut rng, n, count.min(n)).into_vec();
            idx.sort_unstable();
            idx
        }
    };
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for i in indices {
        let orig = probe.params()[i];
        let mut loss_at = |delta: f64| -> Result<f64, PolicyError> {
            probe.params_mut()?[i] = orig + delta;
            Ok(cross_entropy_loss_and_grad(&probe, batch)?.0)
        };
        let near = loss_at(epsilon)? - loss_at(-epsilon)?;
        let far = loss_at(2.0 * epsilon)? - loss_at(-2.0 * epsilon)?;
        probe.params_mut()?[i] = orig;
        let numeric = (8.0 * near - far) / (12.0 * epsilon);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{softmax, HeadInit, ModelConfig, EOS};

    fn cfg(vocab: usize) -> ModelConfig {
        ModelConfig {
            vocab_size: vocab,
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            max_seq_len: 6,
        }
    }

    #[test]
    fn small_model_passes() {
        let m: PolicyModel<f64> = PolicyModel::new(cfg(7), 11, HeadInit::FullyRandom).unwrap();
        let batch = vec![(vec![2, 5], vec![6, 4, EOS]), (vec![2], vec![5, EOS])];
        let err = grad_check(&m, &batch, 1e-5, GradCheckMode::All).unwrap();
        assert!(err < 1e-5, "max relative error {err}");
    }

    #[test]
    fn unused_embedding_rows_have_zero_gradient() {
        let mut m: PolicyModel<f64> = PolicyModel::new(cfg(9), 3, HeadInit::FullyRandom).unwrap();
        // with the tied output path closed, only input rows see gradient
        let tie = m.layout().head_tie.offset;
        m.params_mut().unwrap()[tie] = 0.0;
        let batch = vec![(vec![2, 5], vec![6, EOS])];
        let (_, g) = cross_entropy_loss_and_grad(&m, &batch).unwrap();
        let d = m.config().d_model;
        let te = m.layout().tok_emb.offset;
        // token 8 never appears as input
        assert!(g[te + 8 * d..te + 9 * d].iter().all(|&x| x == 0.0));
        // value head does not affect the CE loss
        for r in m.layout().value_head_ranges() {
            assert!(g[r].iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn zero_head_gradient_is_softmax_minus_onehot() {
        let m: PolicyModel<f64> = PolicyModel::new(cfg(5), 8, HeadInit::Zero).unwrap();
        let ctx = vec![2u32, 4];
        let resp = vec![1u32, EOS];
        let (loss, g) = cross_entropy_loss_and_grad(&m, &[(ctx.clone(), resp.clone())]).unwrap();
        assert!((loss - (5.0f64).ln()).abs() < 1e-15);

        let input = teacher_forced_input(&ctx, &resp);
        let cache = m.forward_sequence(&input).unwrap();
        let hw = m.layout().head_w;
        let v = m.config().vocab_size;
        let d = m.config().d_model;
        // expected: Σ over target positions of xf_t ⊗ (softmax_t − onehot_t) / n
        let xf = final_hidden(&m, &input);
        let mut expected = vec![0.0; d * v];
        let start = ctx.len() - 1;
        for (i, &tok) in resp.iter().enumerate() {
            let p = softmax(cache.logits.row(start + i));
            for a in 0..d {
                for b in 0..v {
                    let onehot = if b == tok as usize { 1.0 } else { 0.0 };
                    expected[a * v + b] += xf[[start + i, a]] * (p[b] - onehot) / resp.len() as f64;
                }
            }
        }
        for (got, want) in g[hw.range()].iter().zip(&expected) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    /// Recovers final-layer-norm outputs by reading logits under identity-like
    /// heads, one hidden unit at a time.
    fn final_hidden(m: &PolicyModel<f64>, input: &[TokenId]) -> Array2<f64> {
        let d = m.config().d_model;
        let hw = m.layout().head_w;
        let mut out = Array2::zeros((input.len(), d));
        for a in 0..d {
            let mut probe = m.clone();
            let p = probe.params_mut().unwrap();
            p[hw.range()].iter_mut().for_each(|x| *x = 0.0);
            p[hw.offset + a * hw.cols] = 1.0;
            let c = probe.forward_sequence(input).unwrap();
            for t in 0..input.len() {
                out[[t, a]] = c.logits[[t, 0]];
            }
        }
        out
    }
}
