//! Reverse-mode gradients through the whole network.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::model::{gelu_grad, BsaRec, BsaRecParams, ForwardTrace, LayerNormCache};
use crate::spectral::BetaMode;

/// Returns `(d_input, d_scale, d_shift)`.
fn layer_norm_backward(
    d_out: ArrayView2<f64>,
    cache: &LayerNormCache,
    scale: ArrayView1<f64>,
) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
    let d = d_out.ncols() as f64;
    let d_shift = d_out.sum_axis(Axis(0));
    let d_scale = (&d_out * &cache.normalized).sum_axis(Axis(0));
    let d_norm = &d_out * &scale;
    let mut d_in = Array2::zeros(d_out.raw_dim());
    for i in 0..d_out.nrows() {
        let g = d_norm.row(i);
        let xh = cache.normalized.row(i);
        let mean_g = g.sum() / d;
        let mean_gx = g.dot(&xh) / d;
        let r = cache.inv_std[i];
        d_in.row_mut(i)
            .iter_mut()
            .zip(g.iter().zip(xh.iter()))
            .for_each(|(o, (&gi, &xi))| *o = r * (gi - mean_g - xi * mean_gx));
    }
    (d_in, d_scale, d_shift)
}

/// Accumulates into `grads` the gradient of `Σ_v d_scores[v] · score_v`
/// with respect to every parameter, given a trace from [`BsaRec::forward`].
///
/// `d_scores[0]` (the padding slot) is ignored.
pub fn backward_into(model: &BsaRec, trace: &ForwardTrace, d_scores: ArrayView1<f64>, grads: &mut BsaRecParams) -> Result<()> {
    let cfg = model.config();
    let params = &model.params;
    if d_scores.len() != cfg.num_items + 1 {
        return Err(Error::InvalidArgument(format!(
            "score gradient has {} entries, expected {}",
            d_scores.len(),
            cfg.num_items + 1
        )));
    }
    if trace.layers.len() != cfg.layers || trace.embed.ids.len() != cfg.max_len {
        return Err(Error::InvalidState("trace does not belong to this model".into()));
    }
    let n = cfg.max_len;
    let dh = cfg.head_dim();
    let alpha = cfg.alpha;
    let (low_f, high_f) = model.filters();

    // Scoring head: score_v = M[v] · h_last.
    let h_last = trace.last_hidden();
    let mut d_last = Array1::<f64>::zeros(cfg.hidden);
    for v in 1..=cfg.num_items {
        let g = d_scores[v];
        if g == 0.0 {
            continue;
        }
        d_last.scaled_add(g, &params.item_embedding.row(v));
        grads.item_embedding.row_mut(v).scaled_add(g, &h_last);
    }
    let mut d_x = Array2::<f64>::zeros((n, cfg.hidden));
    d_x.row_mut(n - 1).assign(&d_last);

    for (l, (lt, lp)) in trace.layers.iter().zip(&params.layers).enumerate().rev() {
        let g = &mut grads.layers[l];

        // X' = LN(X + X̂ + drop(X̃))
        let (d_res, d_scale, d_shift) = layer_norm_backward(d_x.view(), &lt.ln, lp.ln_scale.view());
        g.ln_scale += &d_scale;
        g.ln_shift += &d_shift;
        let mut d_input = d_res.clone();
        let mut d_att = d_res.clone();
        let d_ffn_out = match &lt.ffn_dropout {
            Some(m) => &d_res * m,
            None => d_res,
        };

        // X̃ = GELU(X̂ W1 + b1) W2 + b2
        g.w2 += &lt.ffn_act.t().dot(&d_ffn_out);
        g.b2 += &d_ffn_out.sum_axis(Axis(0));
        let mut d_pre = d_ffn_out.dot(&lp.w2.t());
        d_pre.zip_mut_with(&lt.ffn_pre, |dg, &z| *dg *= gelu_grad(z));
        g.w1 += &lt.attended.t().dot(&d_pre);
        g.b1 += &d_pre.sum_axis(Axis(0));
        d_att += &d_pre.dot(&lp.w1.t());

        // X̂ = S W_O
        g.w_o += &lt.blended.t().dot(&d_att);
        let d_blend = d_att.dot(&lp.w_o.t());

        // S = α (low + β ⊙ high) + (1 - α) [A_h X_h]
        if alpha != 0.0 {
            let mut d_high = d_blend.clone();
            for ((_, d), v) in d_high.indexed_iter_mut() {
                *v *= lp.beta.at(d);
            }
            d_input += &(low_f.t().dot(&d_blend) * alpha);
            d_input += &(high_f.t().dot(&d_high) * alpha);
            let weighted = (&d_blend * &lt.high).sum_axis(Axis(0)) * alpha;
            match lp.beta.mode {
                BetaMode::Scalar => g.beta.values[0] += weighted.sum(),
                BetaMode::Vector => g.beta.values += &weighted,
            }
        }

        let mut d_q = Array2::<f64>::zeros((n, cfg.hidden));
        let mut d_k = Array2::<f64>::zeros((n, cfg.hidden));
        if alpha != 1.0 {
            let scale = 1.0 / (dh as f64).sqrt();
            for h in 0..cfg.heads {
                let cols = s![.., h * dh..(h + 1) * dh];
                let d_mix = d_blend.slice(cols).mapv(|v| v * (1.0 - alpha));
                let x_h = lt.input.slice(cols);
                let probs = &lt.attention[h];
                let used = match &lt.attention_dropout {
                    Some(masks) => probs * &masks[h],
                    None => probs.clone(),
                };
                d_input.slice_mut(cols).scaled_add(1.0, &used.t().dot(&d_mix));
                let mut d_probs = d_mix.dot(&x_h.t());
                if let Some(masks) = &lt.attention_dropout {
                    d_probs *= &masks[h];
                }
                // softmax rows; fallback rows are constants
                let mut d_logits = Array2::<f64>::zeros((n, n));
                for i in 0..n {
                    if trace.mask.is_fallback_row(i) {
                        continue;
                    }
                    let p = probs.row(i);
                    let dot = p.dot(&d_probs.row(i));
                    for j in 0..n {
                        d_logits[[i, j]] = p[j] * (d_probs[[i, j]] - dot) * scale;
                    }
                }
                d_q.slice_mut(cols).assign(&d_logits.dot(&lt.keys.slice(cols)));
                d_k.slice_mut(cols).assign(&d_logits.t().dot(&lt.queries.slice(cols)));
            }
        }
        g.w_q += &lt.input.t().dot(&d_q);
        g.w_k += &lt.input.t().dot(&d_k);
        d_input += &d_q.dot(&lp.w_q.t());
        d_input += &d_k.dot(&lp.w_k.t());
        d_x = d_input;
    }

    // X0 = drop(LN(M[s] + P))
    let d_norm = match &trace.embed.dropout {
        Some(m) => &d_x * m,
        None => d_x,
    };
    let (d_sum, d_scale, d_shift) = layer_norm_backward(d_norm.view(), &trace.embed.ln, params.embed_ln_scale.view());
    grads.embed_ln_scale += &d_scale;
    grads.embed_ln_shift += &d_shift;
    grads.position_embedding += &d_sum;
    for (i, &id) in trace.embed.ids.iter().enumerate() {
        if id != 0 {
            grads.item_embedding.row_mut(id).scaled_add(1.0, &d_sum.row(i));
        }
    }
    Ok(())
}

/// Gradients for a single trace, in a fresh buffer.
pub fn backward(model: &BsaRec, trace: Option<&ForwardTrace>, d_scores: ArrayView1<f64>) -> Result<BsaRecParams> {
    let trace = trace.ok_or_else(|| Error::InvalidState("backward called without a forward trace".into()))?;
    let mut grads = model.params.zeros_like();
    backward_into(model, trace, d_scores, &mut grads)?;
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ce_loss_grad, ModelConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(alpha: f64, mode: BetaMode) -> BsaRec {
        let cfg = ModelConfig {
            num_items: 7,
            max_len: 8,
            hidden: 4,
            layers: 2,
            heads: 2,
            alpha,
            cutoff: 2,
            beta_mode: mode,
            dropout: 0.1,
            init_std: 0.4,
            ..ModelConfig::default()
        };
        BsaRec::init(cfg, 21).unwrap()
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let m = model(0.5, BetaMode::Vector);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (_, trace) = m.forward(&[0, 0, 1, 2, 3, 4, 5, 6], Some(&mut rng)).unwrap();
        let g = backward(&m, Some(&trace), Array1::zeros(8).view()).unwrap();
        assert_eq!(g.squared_norm(), 0.0);
    }

    #[test]
    fn beta_gradient_vanishes_without_filter_branch() {
        for mode in [BetaMode::Scalar, BetaMode::Vector] {
            let m = model(0.0, mode);
            let (scores, trace) = m.forward(&[0, 3, 1, 2, 3, 4, 5, 6], None).unwrap();
            let (_, d) = ce_loss_grad(scores.view(), 2).unwrap();
            let g = backward(&m, Some(&trace), d.view()).unwrap();
            for l in &g.layers {
                assert!(l.beta.values.iter().all(|&b| b == 0.0));
            }
            assert!(g.squared_norm() > 0.0);
        }
    }

    #[test]
    fn missing_trace_is_invalid_state() {
        let m = model(0.5, BetaMode::Vector);
        assert!(matches!(backward(&m, None, Array1::zeros(8).view()), Err(Error::InvalidState(_))));
    }

    #[test]
    fn padding_row_gets_no_input_gradient() {
        let m = model(0.5, BetaMode::Vector);
        let (scores, trace) = m.forward(&[0, 0, 0, 2, 3, 4, 5, 6], None).unwrap();
        let (_, d) = ce_loss_grad(scores.view(), 1).unwrap();
        let g = backward(&m, Some(&trace), d.view()).unwrap();
        assert!(g.item_embedding.row(0).iter().all(|&v| v == 0.0));
    }
}
