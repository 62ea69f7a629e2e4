use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::ModelConfig;
use crate::spectral::RescalerBeta;

/// Learnable tensors of one block.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub w_q: Array2<f64>,
    pub w_k: Array2<f64>,
    pub w_o: Array2<f64>,
    pub beta: RescalerBeta,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub ln_scale: Array1<f64>,
    pub ln_shift: Array1<f64>,
}

/// Every learnable tensor of the model.
///
/// The same struct doubles as a gradient buffer and as Adam moment storage,
/// so every consumer can walk tensors by name in one fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct BsaRecParams {
    /// `(num_items + 1) × hidden`; row 0 is the padding item and stays zero.
    pub item_embedding: Array2<f64>,
    pub position_embedding: Array2<f64>,
    pub embed_ln_scale: Array1<f64>,
    pub embed_ln_shift: Array1<f64>,
    pub layers: Vec<LayerParams>,
}

fn truncated_normal(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= 2.0 {
            return z * std;
        }
    }
}

impl BsaRecParams {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.hidden;
        let std = cfg.init_std;
        let mut normal = |rows: usize, cols: usize| {
            Array2::from_shape_simple_fn((rows, cols), || truncated_normal(&mut rng, std))
        };
        let mut item_embedding = normal(cfg.num_items + 1, d);
        item_embedding.row_mut(0).fill(0.0);
        let position_embedding = normal(cfg.max_len, d);
        let layers = (0..cfg.layers)
            .map(|_| LayerParams {
                w_q: normal(d, d),
                w_k: normal(d, d),
                w_o: normal(d, d),
                beta: RescalerBeta::filled(cfg.beta_mode, d, 1.0),
                w1: normal(d, d),
                b1: Array1::zeros(d),
                w2: normal(d, d),
                b2: Array1::zeros(d),
                ln_scale: Array1::ones(d),
                ln_shift: Array1::zeros(d),
            })
            .collect();
        Self {
            item_embedding,
            position_embedding,
            embed_ln_scale: Array1::ones(d),
            embed_ln_shift: Array1::zeros(d),
            layers,
        }
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.for_each_mut(|_, t| t.fill(0.0));
        z
    }

    pub fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out = vec![
            ("item_embedding".to_string(), self.item_embedding.view().into_dyn()),
            ("position_embedding".to_string(), self.position_embedding.view().into_dyn()),
            ("embed_ln.scale".to_string(), self.embed_ln_scale.view().into_dyn()),
            ("embed_ln.shift".to_string(), self.embed_ln_shift.view().into_dyn()),
        ];
        for (l, p) in self.layers.iter().enumerate() {
            out.extend([
                (format!("layers.{l}.w_q"), p.w_q.view().into_dyn()),
                (format!("layers.{l}.w_k"), p.w_k.view().into_dyn()),
                (format!("layers.{l}.w_o"), p.w_o.view().into_dyn()),
                (format!("layers.{l}.beta"), p.beta.values.view().into_dyn()),
                (format!("layers.{l}.ffn.w1"), p.w1.view().into_dyn()),
                (format!("layers.{l}.ffn.b1"), p.b1.view().into_dyn()),
                (format!("layers.{l}.ffn.w2"), p.w2.view().into_dyn()),
                (format!("layers.{l}.ffn.b2"), p.b2.view().into_dyn()),
                (format!("layers.{l}.ln.scale"), p.ln_scale.view().into_dyn()),
                (format!("layers.{l}.ln.shift"), p.ln_shift.view().into_dyn()),
            ]);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        let mut out = vec![
            ("item_embedding".to_string(), self.item_embedding.view_mut().into_dyn()),
            ("position_embedding".to_string(), self.position_embedding.view_mut().into_dyn()),
            ("embed_ln.scale".to_string(), self.embed_ln_scale.view_mut().into_dyn()),
            ("embed_ln.shift".to_string(), self.embed_ln_shift.view_mut().into_dyn()),
        ];
        for (l, p) in self.layers.iter_mut().enumerate() {
            out.extend([
                (format!("layers.{l}.w_q"), p.w_q.view_mut().into_dyn()),
                (format!("layers.{l}.w_k"), p.w_k.view_mut().into_dyn()),
                (format!("layers.{l}.w_o"), p.w_o.view_mut().into_dyn()),
                (format!("layers.{l}.beta"), p.beta.values.view_mut().into_dyn()),
                (format!("layers.{l}.ffn.w1"), p.w1.view_mut().into_dyn()),
                (format!("layers.{l}.ffn.b1"), p.b1.view_mut().into_dyn()),
                (format!("layers.{l}.ffn.w2"), p.w2.view_mut().into_dyn()),
                (format!("layers.{l}.ffn.b2"), p.b2.view_mut().into_dyn()),
                (format!("layers.{l}.ln.scale"), p.ln_scale.view_mut().into_dyn()),
                (format!("layers.{l}.ln.shift"), p.ln_shift.view_mut().into_dyn()),
            ]);
        }
        out
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(&str, &mut ArrayViewMutD<'_, f64>)) {
        for (name, mut t) in self.tensors_mut() {
            f(&name, &mut t);
        }
    }

    /// `self += other`, tensor by tensor.
    pub fn add_assign(&mut self, other: &BsaRecParams) {
        for ((_, mut a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a += &b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.for_each_mut(|_, t| t.mapv_inplace(|v| v * factor));
    }

    pub fn squared_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .map(|(_, t)| t.iter().map(|v| v * v).sum::<f64>())
            .sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }
}
