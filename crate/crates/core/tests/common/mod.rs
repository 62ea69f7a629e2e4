#![allow(dead_code)]

use bsarec::model::{ce_loss, ce_loss_grad};
use bsarec::trainer::backward;
use bsarec::{BsaRec, ModelConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

/// Relative error `‖a - n‖ / max(‖a‖, ‖n‖)` of one tensor's gradient, with
/// the norms kept for the zero-gradient case.
#[derive(Debug, Clone)]
pub struct TensorCheck {
    pub name: String,
    pub rel_error: f64,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

impl TensorCheck {
    pub fn passes(&self, tol: f64) -> bool {
        if self.analytic_norm.max(self.numeric_norm) < 1e-9 {
            return self.rel_error < 1e-9;
        }
        self.rel_error < tol
    }
}

fn loss(model: &BsaRec, seq: &[usize], target: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (scores, _) = model.forward(seq, Some(&mut rng)).unwrap();
    ce_loss(scores.view(), target).unwrap()
}

fn entry(model: &mut BsaRec, t: usize, k: usize, value: Option<f64>) -> f64 {
    let mut tensors = model.params.tensors_mut();
    let slot = tensors[t].1.iter_mut().nth(k).unwrap();
    if let Some(v) = value {
        *slot = v;
    }
    *slot
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Compares backprop with central differences for every tensor. Dropout is
/// active and replayed from the same seed on every evaluation.
pub fn gradient_check(cfg: &ModelConfig, init_seed: u64) -> Vec<TensorCheck> {
    let mut model = BsaRec::init(cfg.clone(), init_seed).unwrap();
    for (l, layer) in model.params.layers.iter_mut().enumerate() {
        for (i, b) in layer.beta.values.iter_mut().enumerate() {
            *b = 0.6 + 0.15 * i as f64 + 0.1 * l as f64;
        }
    }
    let history: Vec<usize> = [3, 1, 4, 1, 5].iter().map(|&i| 1 + (i - 1) % cfg.num_items).collect();
    let seq = model.pad(&history);
    let target = cfg.num_items.min(6);
    let dropout_seed = 11;

    let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
    let (scores, trace) = model.forward(&seq, Some(&mut rng)).unwrap();
    let (_, d_scores) = ce_loss_grad(scores.view(), target).unwrap();
    let grads = backward(&model, Some(&trace), d_scores.view()).unwrap();
    let analytic: Vec<(String, Vec<f64>)> = grads
        .tensors()
        .into_iter()
        .map(|(n, t)| (n, t.iter().copied().collect()))
        .collect();

    let mut out = Vec::new();
    for (ti, (name, a)) in analytic.into_iter().enumerate() {
        let mut numeric = vec![0.0; a.len()];
        for (k, slot) in numeric.iter_mut().enumerate() {
            // the padding row is pinned to zero and has no gradient
            if name == "item_embedding" && k < cfg.hidden {
                continue;
            }
            let original = entry(&mut model, ti, k, None);
            entry(&mut model, ti, k, Some(original + FD_STEP));
            let plus = loss(&model, &seq, target, dropout_seed);
            entry(&mut model, ti, k, Some(original - FD_STEP));
            let minus = loss(&model, &seq, target, dropout_seed);
            entry(&mut model, ti, k, Some(original));
            *slot = (plus - minus) / (2.0 * FD_STEP);
        }
        let diff: Vec<f64> = a.iter().zip(&numeric).map(|(x, y)| x - y).collect();
        let (an, nn) = (norm(&a), norm(&numeric));
        let scale = an.max(nn);
        let rel_error = if scale < 1e-9 { norm(&diff) } else { norm(&diff) / scale };
        out.push(TensorCheck {
            name,
            rel_error,
            analytic_norm: an,
            numeric_norm: nn,
            analytic: a,
            numeric,
        });
    }
    out
}

/// Tiny configuration shared by the gradient checks.
pub fn tiny_config(alpha: f64, beta_mode: bsarec::spectral::BetaMode) -> ModelConfig {
    ModelConfig {
        num_items: 7,
        max_len: 8,
        hidden: 4,
        layers: 2,
        heads: 2,
        alpha,
        cutoff: 2,
        beta_mode,
        dropout: 0.2,
        attn_dropout: true,
        init_std: 0.4,
        ..ModelConfig::default()
    }
}

fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let inner = b.len();
    let cols = b[0].len();
    a.iter()
        .map(|row| {
            (0..cols)
                .map(|j| (0..inner).map(|k| row[k] * b[k][j]).sum())
                .collect()
        })
        .collect()
}

fn rows(a: &ndarray::Array2<f64>) -> Vec<Vec<f64>> {
    a.outer_iter().map(|r| r.to_vec()).collect()
}

fn layer_norm(x: &[f64], scale: &[f64], shift: &[f64], eps: f64) -> Vec<f64> {
    let d = x.len() as f64;
    let mean = x.iter().sum::<f64>() / d;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    x.iter()
        .enumerate()
        .map(|(k, v)| (v - mean) / (var + eps).sqrt() * scale[k] + shift[k])
        .collect()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / 2f64.sqrt()))
}

/// Eval-mode scores of a plain causal self-attention recommender written
/// with nested loops: item plus position embedding, layer norm, then per
/// block multi-head `softmax(QKᵀ/√d) X` on column slices, `W_O`, a GELU
/// feed-forward network and `LayerNorm(X + X̂ + FFN(X̂))`. No frequency
/// filtering anywhere.
pub fn reference_attention_scores(model: &BsaRec, seq: &[usize]) -> Vec<f64> {
    let cfg = model.config();
    let p = &model.params;
    let n = cfg.max_len;
    let d = cfg.hidden;
    let dh = d / cfg.heads;
    let eps = cfg.layer_norm_eps;
    let m = rows(&p.item_embedding);
    let pos = rows(&p.position_embedding);
    let mut x: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let raw: Vec<f64> = (0..d).map(|k| m[seq[i]][k] + pos[i][k]).collect();
            layer_norm(&raw, p.embed_ln_scale.as_slice().unwrap(), p.embed_ln_shift.as_slice().unwrap(), eps)
        })
        .collect();
    for lp in &p.layers {
        let q = matmul(&x, &rows(&lp.w_q));
        let k = matmul(&x, &rows(&lp.w_k));
        let mut heads = vec![vec![0.0; d]; n];
        for h in 0..cfg.heads {
            let c0 = h * dh;
            for i in 0..n {
                let allowed: Vec<usize> = (0..n)
                    .filter(|&j| seq[j] != 0 && (!cfg.causal_attention || j <= i))
                    .collect();
                if allowed.is_empty() {
                    for c in c0..c0 + dh {
                        heads[i][c] = x[i][c];
                    }
                    continue;
                }
                let logits: Vec<f64> = allowed
                    .iter()
                    .map(|&j| (c0..c0 + dh).map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dh as f64).sqrt())
                    .collect();
                let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let w: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
                let total: f64 = w.iter().sum();
                for (wj, &j) in w.iter().zip(&allowed) {
                    for c in c0..c0 + dh {
                        heads[i][c] += wj / total * x[j][c];
                    }
                }
            }
        }
        let attended = matmul(&heads, &rows(&lp.w_o));
        let b1 = lp.b1.to_vec();
        let b2 = lp.b2.to_vec();
        let hidden: Vec<Vec<f64>> = matmul(&attended, &rows(&lp.w1))
            .into_iter()
            .map(|r| r.iter().zip(&b1).map(|(v, b)| gelu(v + b)).collect())
            .collect();
        let ffn: Vec<Vec<f64>> = matmul(&hidden, &rows(&lp.w2))
            .into_iter()
            .map(|r| r.iter().zip(&b2).map(|(v, b)| v + b).collect())
            .collect();
        x = (0..n)
            .map(|i| {
                let sum: Vec<f64> = (0..d).map(|c| x[i][c] + attended[i][c] + ffn[i][c]).collect();
                layer_norm(&sum, lp.ln_scale.as_slice().unwrap(), lp.ln_shift.as_slice().unwrap(), eps)
            })
            .collect();
    }
    let last = &x[n - 1];
    let mut scores: Vec<f64> = m.iter().map(|row| row.iter().zip(last).map(|(a, b)| a * b).sum()).collect();
    scores[0] = f64::NEG_INFINITY;
    scores
}
