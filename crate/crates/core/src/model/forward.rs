use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{BsaRecParams, LayerParams, ModelConfig};
use crate::error::{Error, Result};
use crate::spectral::{Band, FourierPlan};

/// Which key positions each query may attend to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    pub causal: bool,
    /// `true` at padding positions.
    pub padding: Vec<bool>,
}

impl AttentionMask {
    pub fn open(n: usize) -> Self {
        Self {
            causal: false,
            padding: vec![false; n],
        }
    }

    pub fn for_sequence(seq: &[usize], causal: bool) -> Self {
        Self {
            causal,
            padding: seq.iter().map(|&id| id == 0).collect(),
        }
    }

    #[inline]
    pub fn allowed(&self, query: usize, key: usize) -> bool {
        !self.padding[key] && (!self.causal || key <= query)
    }

    /// A row with no allowed key attends to its own position.
    pub fn is_fallback_row(&self, query: usize) -> bool {
        (0..self.padding.len()).all(|k| !self.allowed(query, k))
    }
}

/// Row-wise `softmax(q kᵀ / √d)` with masked logits sent to −∞.
///
/// Rows that have no allowed key are set to the unit vector on the diagonal.
pub fn attention_probs(q: ArrayView2<f64>, k: ArrayView2<f64>, mask: &AttentionMask) -> Array2<f64> {
    let n = q.nrows();
    let scale = 1.0 / (q.ncols() as f64).sqrt();
    let logits = q.dot(&k.t());
    let mut probs = Array2::zeros((n, n));
    for i in 0..n {
        let mut max = f64::NEG_INFINITY;
        for j in 0..n {
            if mask.allowed(i, j) {
                max = max.max(logits[[i, j]] * scale);
            }
        }
        if max == f64::NEG_INFINITY {
            probs[[i, i]] = 1.0;
            continue;
        }
        let mut sum = 0.0;
        for j in 0..n {
            if mask.allowed(i, j) {
                let e = (logits[[i, j]] * scale - max).exp();
                probs[[i, j]] = e;
                sum += e;
            }
        }
        probs.row_mut(i).mapv_inplace(|v| v / sum);
    }
    probs
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormCache {
    pub normalized: Array2<f64>,
    pub inv_std: Array1<f64>,
}

/// Row-wise layer normalization over the feature axis.
pub fn layer_norm(
    x: ArrayView2<f64>,
    scale: ArrayView1<f64>,
    shift: ArrayView1<f64>,
    eps: f64,
) -> (Array2<f64>, LayerNormCache) {
    let d = x.ncols() as f64;
    let mut normalized = Array2::zeros(x.raw_dim());
    let mut inv_std = Array1::zeros(x.nrows());
    for (i, row) in x.axis_iter(Axis(0)).enumerate() {
        let mean = row.sum() / d;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
        let r = 1.0 / (var + eps).sqrt();
        inv_std[i] = r;
        normalized
            .row_mut(i)
            .zip_mut_with(&row, |o, &v| *o = (v - mean) * r);
    }
    let out = &normalized * &scale + &shift;
    (out, LayerNormCache { normalized, inv_std })
}

/// Exact GELU, `x Φ(x)`.
#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

/// Inverted-dropout mask: entries are 0 or `1 / (1 - p)`.
fn dropout_mask(shape: (usize, usize), p: f64, rng: Option<&mut ChaCha8Rng>) -> Option<Array2<f64>> {
    let rng = rng?;
    if p <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - p);
    Some(Array2::from_shape_simple_fn(shape, || {
        if rng.random::<f64>() < p {
            0.0
        } else {
            keep
        }
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbedTrace {
    pub ids: Vec<usize>,
    pub ln: LayerNormCache,
    pub dropout: Option<Array2<f64>>,
}

/// Activations of one block, kept for backprop and diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    pub input: Array2<f64>,
    /// Low-band and high-band parts of the input.
    pub low: Array2<f64>,
    pub high: Array2<f64>,
    pub queries: Array2<f64>,
    pub keys: Array2<f64>,
    /// Per-head attention before dropout; row-stochastic.
    pub attention: Vec<Array2<f64>>,
    pub attention_dropout: Option<Vec<Array2<f64>>>,
    /// Blended heads before the output projection.
    pub blended: Array2<f64>,
    /// Output of the attention sub-layer.
    pub attended: Array2<f64>,
    pub ffn_pre: Array2<f64>,
    pub ffn_act: Array2<f64>,
    pub ffn_dropout: Option<Array2<f64>>,
    pub ln: LayerNormCache,
    pub output: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub mask: AttentionMask,
    pub embed: EmbedTrace,
    /// Block input at layer 0.
    pub embedded: Array2<f64>,
    pub layers: Vec<LayerTrace>,
    pub train_mode: bool,
}

impl ForwardTrace {
    pub fn final_hidden(&self) -> ArrayView2<'_, f64> {
        match self.layers.last() {
            Some(l) => l.output.view(),
            None => self.embedded.view(),
        }
    }

    /// Hidden state at the most recent position.
    pub fn last_hidden(&self) -> ArrayView1<'_, f64> {
        let h = match self.layers.last() {
            Some(l) => &l.output,
            None => &self.embedded,
        };
        h.row(h.nrows() - 1)
    }
}

/// A configured model with its parameters and the cached band filters.
#[derive(Debug, Clone)]
pub struct BsaRec {
    config: ModelConfig,
    pub params: BsaRecParams,
    low: Array2<f64>,
    high: Array2<f64>,
}

impl BsaRec {
    pub fn new(config: ModelConfig, params: BsaRecParams) -> Result<Self> {
        config.validate()?;
        check_shapes(&config, &params)?;
        let plan = FourierPlan::new(config.max_len)?;
        let split = config.split()?;
        let mut low = plan.band_projector(split, Band::Low)?;
        let mut high = plan.band_projector(split, Band::High)?;
        if config.causal_filter {
            for m in [&mut low, &mut high] {
                for ((i, j), v) in m.indexed_iter_mut() {
                    if j > i {
                        *v = 0.0;
                    }
                }
            }
        }
        Ok(Self {
            config,
            params,
            low,
            high,
        })
    }

    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = BsaRecParams::init(&config, seed);
        Self::new(config, params)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// `(low, high)` band matrices acting on the sequence axis.
    pub fn filters(&self) -> (&Array2<f64>, &Array2<f64>) {
        (&self.low, &self.high)
    }

    /// Left-pads or truncates a history to the model's sequence length.
    pub fn pad(&self, history: &[usize]) -> Vec<usize> {
        crate::data::pad_truncate(history, self.config.max_len)
    }

    fn check_ids(&self, seq: &[usize]) -> Result<()> {
        if seq.len() != self.config.max_len {
            return Err(Error::InvalidArgument(format!(
                "sequence has length {}, model expects {}",
                seq.len(),
                self.config.max_len
            )));
        }
        if let Some((pos, id)) = seq
            .iter()
            .enumerate()
            .find(|(_, &id)| id > self.config.num_items)
        {
            return Err(Error::InvalidArgument(format!(
                "item id {id} at position {pos} exceeds catalog size {}",
                self.config.num_items
            )));
        }
        Ok(())
    }

    /// `Dropout(LayerNorm(M[s] + P))`; dropout only when `rng` is given.
    pub fn embed(&self, seq: &[usize], rng: Option<&mut ChaCha8Rng>) -> Result<(Array2<f64>, EmbedTrace)> {
        self.check_ids(seq)?;
        let p = &self.params;
        let mut sum = p.position_embedding.clone();
        for (i, &id) in seq.iter().enumerate() {
            sum.row_mut(i).zip_mut_with(&p.item_embedding.row(id), |a, &b| *a += b);
        }
        let (normed, ln) = layer_norm(
            sum.view(),
            p.embed_ln_scale.view(),
            p.embed_ln_shift.view(),
            self.config.layer_norm_eps,
        );
        let dropout = dropout_mask(normed.dim(), self.config.dropout, rng);
        let out = match &dropout {
            Some(m) => &normed * m,
            None => normed,
        };
        Ok((
            out,
            EmbedTrace {
                ids: seq.to_vec(),
                ln,
                dropout,
            },
        ))
    }

    /// Blended attention sub-layer: per head `α·(A_IB X)_h + (1-α)·A_h X_h`,
    /// concatenated and projected by `W_O`. Returns the projected output and
    /// a partially filled trace.
    pub fn bsa_layer(
        &self,
        layer: usize,
        x: ArrayView2<f64>,
        mask: &AttentionMask,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> LayerTrace {
        let cfg = &self.config;
        let lp = &self.params.layers[layer];
        let n = x.nrows();
        let dh = cfg.head_dim();
        let alpha = cfg.alpha;

        let low = self.low.dot(&x);
        let high = self.high.dot(&x);
        let queries = x.dot(&lp.w_q);
        let keys = x.dot(&lp.w_k);

        let mut blended = Array2::zeros((n, cfg.hidden));
        let mut attention = Vec::with_capacity(cfg.heads);
        let mut drops = Vec::new();
        let attn_p = if cfg.attn_dropout { cfg.dropout } else { 0.0 };
        for h in 0..cfg.heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let probs = attention_probs(queries.slice(cols), keys.slice(cols), mask);
            let drop = dropout_mask((n, n), attn_p, rng.as_deref_mut());
            let mixed = match &drop {
                Some(m) => (&probs * m).dot(&x.slice(cols)),
                None => probs.dot(&x.slice(cols)),
            };
            blended.slice_mut(cols).assign(&(mixed * (1.0 - alpha)));
            attention.push(probs);
            if let Some(m) = drop {
                drops.push(m);
            }
        }
        if alpha != 0.0 {
            let beta = &lp.beta;
            Zip::indexed(&mut blended)
                .and(&low)
                .and(&high)
                .for_each(|(_, d), b, &l, &hi| *b += alpha * (l + beta.at(d) * hi));
        }
        let attended = blended.dot(&lp.w_o);

        LayerTrace {
            input: x.to_owned(),
            low,
            high,
            queries,
            keys,
            attention,
            attention_dropout: if drops.is_empty() { None } else { Some(drops) },
            blended,
            attended,
            ffn_pre: Array2::zeros((0, 0)),
            ffn_act: Array2::zeros((0, 0)),
            ffn_dropout: None,
            ln: LayerNormCache {
                normalized: Array2::zeros((0, 0)),
                inv_std: Array1::zeros(0),
            },
            output: Array2::zeros((0, 0)),
        }
    }

    /// Feed-forward network plus `LayerNorm(X + X̂ + Dropout(X̃))`, completing
    /// a trace started by [`bsa_layer`](Self::bsa_layer).
    pub fn ffn_block(&self, layer: usize, trace: &mut LayerTrace, rng: Option<&mut ChaCha8Rng>) {
        let lp = &self.params.layers[layer];
        let ffn_pre = trace.attended.dot(&lp.w1) + &lp.b1;
        let ffn_act = ffn_pre.mapv(gelu);
        let ffn_out = ffn_act.dot(&lp.w2) + &lp.b2;
        let ffn_dropout = dropout_mask(ffn_out.dim(), self.config.dropout, rng);
        let mut residual = &trace.input + &trace.attended;
        match &ffn_dropout {
            Some(m) => residual += &(&ffn_out * m),
            None => residual += &ffn_out,
        }
        let (output, ln) = layer_norm(
            residual.view(),
            lp.ln_scale.view(),
            lp.ln_shift.view(),
            self.config.layer_norm_eps,
        );
        trace.ffn_pre = ffn_pre;
        trace.ffn_act = ffn_act;
        trace.ffn_dropout = ffn_dropout;
        trace.ln = ln;
        trace.output = output;
    }

    /// Encodes a padded sequence. Dropout is active iff `rng` is given.
    pub fn encode(&self, seq: &[usize], mut rng: Option<&mut ChaCha8Rng>) -> Result<ForwardTrace> {
        let (embedded, embed) = self.embed(seq, rng.as_deref_mut())?;
        let mask = AttentionMask::for_sequence(seq, self.config.causal_attention);
        let mut layers: Vec<LayerTrace> = Vec::with_capacity(self.config.layers);
        for l in 0..self.config.layers {
            let input = match layers.last() {
                Some(prev) => prev.output.view(),
                None => embedded.view(),
            };
            let mut trace = self.bsa_layer(l, input, &mask, rng.as_deref_mut());
            self.ffn_block(l, &mut trace, rng.as_deref_mut());
            layers.push(trace);
        }
        Ok(ForwardTrace {
            mask,
            embed,
            embedded,
            layers,
            train_mode: rng.is_some(),
        })
    }

    /// Scores for every item id; entry 0 (padding) is `-∞`.
    pub fn scores_from(&self, trace: &ForwardTrace) -> Array1<f64> {
        let mut scores = self.params.item_embedding.dot(&trace.last_hidden());
        scores[0] = f64::NEG_INFINITY;
        scores
    }

    pub fn forward(&self, seq: &[usize], rng: Option<&mut ChaCha8Rng>) -> Result<(Array1<f64>, ForwardTrace)> {
        let trace = self.encode(seq, rng)?;
        Ok((self.scores_from(&trace), trace))
    }

    /// Eval-mode scores for an already padded sequence.
    pub fn score(&self, seq: &[usize]) -> Result<Array1<f64>> {
        Ok(self.forward(seq, None)?.0)
    }

    /// Eval-mode scores for a raw chronological history.
    pub fn score_history(&self, history: &[usize]) -> Result<Array1<f64>> {
        self.score(&self.pad(history))
    }

    pub fn layer(&self, l: usize) -> &LayerParams {
        &self.params.layers[l]
    }
}

fn check_shapes(cfg: &ModelConfig, p: &BsaRecParams) -> Result<()> {
    let d = cfg.hidden;
    let mut problems = Vec::new();
    let expect = |problems: &mut Vec<String>, name: String, got: &[usize], want: &[usize]| {
        if got != want {
            problems.push(format!("{name}: expected {want:?}, found {got:?}"));
        }
    };
    expect(&mut problems, "item_embedding".into(), p.item_embedding.shape(), &[cfg.num_items + 1, d]);
    expect(&mut problems, "position_embedding".into(), p.position_embedding.shape(), &[cfg.max_len, d]);
    expect(&mut problems, "embed_ln.scale".into(), p.embed_ln_scale.shape(), &[d]);
    expect(&mut problems, "embed_ln.shift".into(), p.embed_ln_shift.shape(), &[d]);
    if p.layers.len() != cfg.layers {
        problems.push(format!("layers: expected {}, found {}", cfg.layers, p.layers.len()));
    }
    let beta_len = match cfg.beta_mode {
        crate::spectral::BetaMode::Scalar => 1,
        crate::spectral::BetaMode::Vector => d,
    };
    for (l, lp) in p.layers.iter().enumerate() {
        for (name, t) in [("w_q", &lp.w_q), ("w_k", &lp.w_k), ("w_o", &lp.w_o), ("ffn.w1", &lp.w1), ("ffn.w2", &lp.w2)] {
            expect(&mut problems, format!("layers.{l}.{name}"), t.shape(), &[d, d]);
        }
        for (name, t) in [("ffn.b1", &lp.b1), ("ffn.b2", &lp.b2), ("ln.scale", &lp.ln_scale), ("ln.shift", &lp.ln_shift)] {
            expect(&mut problems, format!("layers.{l}.{name}"), t.shape(), &[d]);
        }
        expect(&mut problems, format!("layers.{l}.beta"), lp.beta.values.shape(), &[beta_len]);
        if lp.beta.mode != cfg.beta_mode {
            problems.push(format!("layers.{l}.beta: mode {:?} but config says {:?}", lp.beta.mode, cfg.beta_mode));
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Checkpoint(format!("shape mismatch: {}", problems.join("; "))))
    }
}

/// `−log softmax(scores)[target]`, with the padding slot excluded.
pub fn ce_loss(scores: ArrayView1<f64>, target: usize) -> Result<f64> {
    Ok(ce_loss_grad(scores, target)?.0)
}

/// Loss and its gradient with respect to `scores` (zero at the padding slot).
pub fn ce_loss_grad(scores: ArrayView1<f64>, target: usize) -> Result<(f64, Array1<f64>)> {
    if target == 0 || target >= scores.len() {
        return Err(Error::InvalidArgument(format!(
            "ground-truth item {target} outside 1..={}",
            scores.len().saturating_sub(1)
        )));
    }
    let items = scores.slice(s![1..]);
    let max = items.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let sum: f64 = items.iter().map(|v| (v - max).exp()).sum();
    let log_z = max + sum.ln();
    let loss = log_z - scores[target];
    let mut grad = Array1::zeros(scores.len());
    for v in 1..scores.len() {
        grad[v] = (scores[v] - log_z).exp();
    }
    grad[target] -= 1.0;
    Ok((loss.max(0.0), grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{BetaMode, FrequencySplit, RescalerBeta};
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(alpha: f64) -> ModelConfig {
        ModelConfig {
            num_items: 7,
            max_len: 8,
            hidden: 4,
            layers: 2,
            heads: 2,
            alpha,
            cutoff: 2,
            dropout: 0.2,
            init_std: 0.3,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn attention_single_position() {
        let q = array![[0.3, -1.0]];
        let a = attention_probs(q.view(), q.view(), &AttentionMask::open(1));
        assert_eq!(a, array![[1.0]]);
    }

    #[test]
    fn attention_zero_logits_are_uniform() {
        let z = Array2::zeros((5, 3));
        let a = attention_probs(z.view(), z.view(), &AttentionMask::open(5));
        assert!(a.iter().all(|&v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn attention_hand_softmax() {
        let q = array![[1.0], [0.0]];
        let a = attention_probs(q.view(), q.view(), &AttentionMask::open(2));
        let e = std::f64::consts::E;
        assert!((a[[0, 0]] - e / (e + 1.0)).abs() < 1e-15);
        assert!((a[[0, 0]] - 0.7311).abs() < 1e-4);
        assert!((a[[0, 1]] - 0.2689).abs() < 1e-4);
    }

    #[test]
    fn attention_masks_padding_and_future() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = Array2::from_shape_simple_fn((5, 2), || rng.random_range(-1.0..1.0));
        let k = Array2::from_shape_simple_fn((5, 2), || rng.random_range(-1.0..1.0));
        let mask = AttentionMask::for_sequence(&[0, 0, 3, 1, 2], true);
        let a = attention_probs(q.view(), k.view(), &mask);
        // padded queries see only padding under the causal mask
        assert_eq!(a.row(0), array![1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(a.row(1), array![0.0, 1.0, 0.0, 0.0, 0.0]);
        assert_eq!(a.row(2), array![0.0, 0.0, 1.0, 0.0, 0.0]);
        for i in 0..5 {
            assert!((a.row(i).sum() - 1.0).abs() < 1e-12);
            for j in 0..5 {
                if j > i || (j < 2 && i >= 2) {
                    assert_eq!(a[[i, j]], 0.0);
                }
            }
        }
    }

    #[test]
    fn layer_norm_hand_rows() {
        let x = array![[1.0, 3.0], [-2.0, 2.0]];
        let (out, _) = layer_norm(x.view(), array![1.0, 1.0].view(), array![0.0, 0.0].view(), 1e-12);
        // two-element rows normalize to (-1, 1) up to eps
        for row in out.rows() {
            assert!((row[0] + 1.0).abs() < 1e-9 && (row[1] - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn embed_hand_example() {
        // N=2, D=2: M row 1 = (1, 0), P rows (0, 2) and (3, 3)
        let cfg = ModelConfig {
            num_items: 1,
            max_len: 2,
            hidden: 2,
            layers: 0,
            heads: 1,
            cutoff: 1,
            dropout: 0.0,
            ..ModelConfig::default()
        };
        let mut params = BsaRecParams::init(&cfg, 0);
        params.item_embedding = array![[0.0, 0.0], [1.0, 0.0]];
        params.position_embedding = array![[0.0, 2.0], [3.0, 3.0]];
        let model = BsaRec::new(cfg, params).unwrap();
        let (out, _) = model.embed(&[1, 1], None).unwrap();
        // rows (1, 2) and (4, 3); oracle normalizes each directly
        for (row, raw) in out.rows().into_iter().zip([[1.0f64, 2.0], [4.0, 3.0]]) {
            let mean = (raw[0] + raw[1]) / 2.0;
            let var = ((raw[0] - mean).powi(2) + (raw[1] - mean).powi(2)) / 2.0;
            for k in 0..2 {
                let expect = (raw[k] - mean) / (var + 1e-12).sqrt();
                assert!((row[k] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn embed_padding_and_dropout_modes() {
        let mut cfg = tiny(0.5);
        let model = BsaRec::init(cfg.clone(), 4).unwrap();
        let pads = vec![0; cfg.max_len];
        let (out, _) = model.embed(&pads, None).unwrap();
        let p = &model.params;
        let (expect, _) = layer_norm(
            p.position_embedding.view(),
            p.embed_ln_scale.view(),
            p.embed_ln_shift.view(),
            cfg.layer_norm_eps,
        );
        assert_eq!(out, expect);

        cfg.dropout = 0.0;
        let model = BsaRec::new(cfg, model.params.clone()).unwrap();
        let seq = [0, 0, 0, 1, 5, 2, 7, 3];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (train, _) = model.embed(&seq, Some(&mut rng)).unwrap();
        let (eval, _) = model.embed(&seq, None).unwrap();
        assert_eq!(train, eval);
    }

    #[test]
    fn embed_rejects_out_of_range_ids() {
        let model = BsaRec::init(tiny(0.5), 4).unwrap();
        let err = model.embed(&[0, 0, 0, 0, 0, 0, 8, 1], None).unwrap_err().to_string();
        assert!(err.contains("position 6"), "{err}");
        assert!(model.embed(&[1, 2], None).is_err());
    }

    #[test]
    fn bsa_layer_alpha_one_unit_beta_is_projection() {
        let model = BsaRec::init(tiny(1.0), 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Array2::from_shape_simple_fn((8, 4), || rng.random_range(-1.0..1.0));
        let mask = AttentionMask::open(8);
        let t = model.bsa_layer(0, x.view(), &mask, None);
        let expect = x.dot(&model.params.layers[0].w_o);
        for (a, b) in t.attended.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn bsa_layer_half_blend_oracle() {
        // α=0.5, N=4, D=2, h=1, c=1, β=0, zero W_Q/W_K, W_O=I
        let cfg = ModelConfig {
            num_items: 2,
            max_len: 4,
            hidden: 2,
            layers: 1,
            heads: 1,
            alpha: 0.5,
            cutoff: 1,
            dropout: 0.0,
            causal_attention: false,
            ..ModelConfig::default()
        };
        let mut params = BsaRecParams::init(&cfg, 0);
        params.layers[0].w_q.fill(0.0);
        params.layers[0].w_k.fill(0.0);
        params.layers[0].w_o = Array2::eye(2);
        params.layers[0].beta = RescalerBeta::filled(BetaMode::Vector, 2, 0.0);
        let model = BsaRec::new(cfg, params).unwrap();
        let x = array![[1.0, -2.0], [2.0, 0.5], [3.0, 4.0], [4.0, -1.0]];
        let t = model.bsa_layer(0, x.view(), &AttentionMask::open(4), None);
        let plan = FourierPlan::new(4).unwrap();
        let split = FrequencySplit::new(4, 1).unwrap();
        let mean = x.mean_axis(Axis(0)).unwrap();
        for d in 0..2 {
            let low = plan.lfc(x.column(d), split).unwrap();
            for i in 0..4 {
                let expect = 0.5 * low[i] + 0.5 * mean[d];
                assert!((t.attended[[i, d]] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ffn_zero_weights_reduce_to_residual_norm() {
        let mut cfg = tiny(0.5);
        cfg.dropout = 0.0;
        let mut params = BsaRecParams::init(&cfg, 2);
        let lp = &mut params.layers[0];
        lp.w1.fill(0.0);
        lp.w2.fill(0.0);
        let model = BsaRec::new(cfg.clone(), params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Array2::from_shape_simple_fn((8, 4), || rng.random_range(-1.0..1.0));
        let mut t = model.bsa_layer(0, x.view(), &AttentionMask::open(8), None);
        model.ffn_block(0, &mut t, None);
        let lp = &model.params.layers[0];
        let (expect, _) = layer_norm((&x + &t.attended).view(), lp.ln_scale.view(), lp.ln_shift.view(), cfg.layer_norm_eps);
        assert_eq!(t.output, expect);
        assert!(t.ffn_act.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gelu_matches_erf_oracle() {
        for u in [-3.0, -0.7, 0.0, 0.4, 2.5] {
            let expect = 0.5 * u * (1.0 + libm::erf(u / 2f64.sqrt()));
            assert_eq!(gelu(u), expect);
            let h = 1e-6;
            let fd = (gelu(u + h) - gelu(u - h)) / (2.0 * h);
            assert!((gelu_grad(u) - fd).abs() < 1e-8);
        }
        assert_eq!(gelu(0.0), 0.0);
    }

    #[test]
    fn forward_without_layers_scores_embedding_last_row() {
        let mut cfg = tiny(0.5);
        cfg.layers = 0;
        let model = BsaRec::init(cfg, 5).unwrap();
        let seq = [0, 0, 0, 0, 4, 2, 2, 6];
        let (scores, _) = model.forward(&seq, None).unwrap();
        let (emb, _) = model.embed(&seq, None).unwrap();
        let expect = model.params.item_embedding.dot(&emb.row(7));
        assert_eq!(scores[0], f64::NEG_INFINITY);
        for v in 1..scores.len() {
            assert_eq!(scores[v], expect[v]);
        }
    }

    #[test]
    fn forward_is_deterministic_in_eval_mode() {
        let model = BsaRec::init(tiny(0.5), 5).unwrap();
        let seq = [0, 0, 3, 4, 1, 2, 7, 6];
        assert_eq!(model.score(&seq).unwrap(), model.score(&seq).unwrap());
    }

    #[test]
    fn trace_attention_is_row_stochastic() {
        let model = BsaRec::init(tiny(0.3), 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (_, trace) = model.forward(&[0, 0, 3, 4, 1, 2, 7, 6], Some(&mut rng)).unwrap();
        assert!(trace.train_mode);
        for layer in &trace.layers {
            for a in &layer.attention {
                for row in a.rows() {
                    assert!(row.iter().all(|&v| v >= 0.0));
                    assert!((row.sum() - 1.0).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn ce_loss_examples() {
        let l = ce_loss(array![f64::NEG_INFINITY, 0.5, 0.5].view(), 1).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-15);
        let l = ce_loss(array![f64::NEG_INFINITY, 1.0, 2.0, 3.0].view(), 3).unwrap();
        let e = std::f64::consts::E;
        let oracle = -(e.powi(3) / (e + e * e + e.powi(3))).ln();
        assert!((l - oracle).abs() < 1e-14);
        assert!((l - 0.4076).abs() < 1e-4);
        let l = ce_loss(array![f64::NEG_INFINITY, -1e6, 1e6].view(), 2).unwrap();
        assert!(l < 1e-300);
        assert!(ce_loss(array![0.0, 1.0].view(), 0).is_err());
        assert!(ce_loss(array![0.0, 1.0].view(), 2).is_err());
    }

    #[test]
    fn permuting_items_permutes_scores() {
        let model = BsaRec::init(tiny(0.5), 12).unwrap();
        // bijection on 1..=7, padding fixed
        let perm = [0usize, 3, 7, 1, 6, 2, 5, 4];
        let mut permuted = model.params.clone();
        for (old, &new) in perm.iter().enumerate() {
            permuted
                .item_embedding
                .row_mut(new)
                .assign(&model.params.item_embedding.row(old));
        }
        let other = BsaRec::new(model.config().clone(), permuted).unwrap();
        let seq = [0, 0, 1, 5, 2, 2, 7, 3];
        let mapped: Vec<usize> = seq.iter().map(|&i| perm[i]).collect();
        let a = model.score(&seq).unwrap();
        let b = other.score(&mapped).unwrap();
        for v in 1..=7 {
            assert!((a[v] - b[perm[v]]).abs() < 1e-12);
        }
    }
}
