//! Gradient computation, Adam, and the epoch loop with early stopping.

mod adam;
mod backward;

pub use adam::{adam_step, clip_global_norm, AdamConfig, OptimizerState};
pub use backward::{backward, backward_into};

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{epoch_batches, Example};
use crate::error::{Error, Result};
use crate::evaluation::MetricsReport;
use crate::exec::Exec;
use crate::model::{ce_loss_grad, BsaRec, BsaRecParams};

/// Examples per gradient-accumulation chunk. Fixed so the summation order,
/// and therefore every bit of the result, does not depend on thread count.
const GRAD_CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Global-norm clip; `0` disables clipping.
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            batch_size: 256,
            max_epochs: 200,
            patience: 10,
            grad_clip: 5.0,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.adam.lr > 0.0 && self.adam.lr.is_finite()) {
            v.push(format!("lr must be > 0, got {}", self.adam.lr));
        }
        if self.batch_size == 0 {
            v.push("batch_size must be >= 1".to_string());
        }
        if self.max_epochs == 0 {
            v.push("max_epochs must be >= 1".to_string());
        }
        if self.patience == 0 {
            v.push("patience must be >= 1".to_string());
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            v.push(format!(
                "adam betas must lie in [0, 1), got {} and {}",
                self.adam.beta1, self.adam.beta2
            ));
        }
        if !(self.adam.eps > 0.0) {
            v.push(format!("adam_eps must be > 0, got {}", self.adam.eps));
        }
        if self.adam.weight_decay < 0.0 {
            v.push(format!("weight_decay must be >= 0, got {}", self.adam.weight_decay));
        }
        if self.grad_clip < 0.0 {
            v.push(format!("grad_clip must be >= 0, got {}", self.grad_clip));
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(v.join("; ")))
        }
    }
}

/// Seed of the dropout generator for one example of one optimizer step.
pub fn example_seed(seed: u64, step: u64, example: usize) -> u64 {
    let mut z = seed
        .wrapping_add(step.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add((example as u64).wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mean loss and mean gradient over a batch. Dropout is active, with one
/// generator per example seeded from `(seed, step, example)`.
pub fn batch_gradient(
    model: &BsaRec,
    batch: &[&Example],
    seed: u64,
    step: u64,
    exec: Exec,
) -> Result<(f64, BsaRecParams)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let indexed: Vec<(usize, &Example)> = batch.iter().copied().enumerate().collect();
    let partials = exec.map_chunks(&indexed, GRAD_CHUNK, |chunk| -> Result<(f64, BsaRecParams)> {
        let mut grads = model.params.zeros_like();
        let mut loss = 0.0;
        for &(i, ex) in chunk {
            let mut rng = ChaCha8Rng::seed_from_u64(example_seed(seed, step, i));
            let seq = model.pad(&ex.history);
            let (scores, trace) = model.forward(&seq, Some(&mut rng))?;
            let (l, d_scores) = ce_loss_grad(scores.view(), ex.target)?;
            loss += l;
            backward_into(model, &trace, d_scores.view(), &mut grads)?;
        }
        Ok((loss, grads))
    });
    let mut total_loss = 0.0;
    let mut total = model.params.zeros_like();
    for part in partials {
        let (l, g) = part?;
        total_loss += l;
        total.add_assign(&g);
    }
    let n = batch.len() as f64;
    total.scale(1.0 / n);
    Ok((total_loss / n, total))
}

/// Eval-mode mean loss over `examples`.
pub fn mean_loss(model: &BsaRec, examples: &[Example], exec: Exec) -> Result<f64> {
    let losses = exec.map(examples, |ex| {
        let scores = model.score_history(&ex.history)?;
        crate::model::ce_loss(scores.view(), ex.target)
    });
    let mut sum = 0.0;
    for l in losses {
        sum += l?;
    }
    Ok(sum / examples.len().max(1) as f64)
}

/// One epoch's row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub val_ndcg20: f64,
    pub val_hr20: f64,
    pub seconds: f64,
}

impl EpochLog {
    pub const CSV_HEADER: &'static str = "epoch,loss,val_ndcg20,val_hr20,seconds";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.8},{:.8},{:.8},{:.3}",
            self.epoch, self.loss, self.val_ndcg20, self.val_hr20, self.seconds
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Model state at the epoch with the best validation NDCG@20.
    pub best: BsaRec,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
    pub stopped_early: bool,
    pub steps: u64,
}

/// Runs epochs until validation NDCG@20 fails to improve for `patience`
/// consecutive epochs or `max_epochs` is reached.
///
/// `eval_hook` sees a read-only snapshot after every epoch; `on_epoch` is
/// called with each log row as soon as it exists.
pub fn train<H, E>(
    mut model: BsaRec,
    examples: &[Example],
    cfg: &TrainConfig,
    exec: Exec,
    mut eval_hook: H,
    mut on_epoch: E,
) -> Result<TrainOutcome>
where
    H: FnMut(&BsaRec) -> Result<MetricsReport>,
    E: FnMut(&EpochLog) -> Result<()>,
{
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::EmptyDataset("building training examples".into()));
    }
    let mut state = OptimizerState::new(&model.params);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(f64, usize, BsaRec)> = None;
    let mut since_best = 0;
    let mut log = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        let mut loss_sum = 0.0;
        for batch in epoch_batches(examples.len(), cfg.batch_size, &mut shuffle_rng) {
            let refs: Vec<&Example> = batch.iter().map(|&i| &examples[i]).collect();
            let (loss, mut grads) = batch_gradient(&model, &refs, cfg.seed, state.step, exec)?;
            clip_global_norm(&mut grads, cfg.grad_clip);
            adam_step(&mut model.params, &grads, &mut state, &cfg.adam)?;
            loss_sum += loss * refs.len() as f64;
        }
        if !model.params.all_finite() {
            return Err(Error::InvalidState(format!("parameters became non-finite in epoch {epoch}")));
        }
        let report = eval_hook(&model)?;
        let row = EpochLog {
            epoch,
            loss: loss_sum / examples.len() as f64,
            val_ndcg20: report.ndcg.get(&20).copied().unwrap_or(0.0),
            val_hr20: report.hr.get(&20).copied().unwrap_or(0.0),
            seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&row)?;
        let improved = best.as_ref().is_none_or(|(score, _, _)| row.val_ndcg20 > *score);
        if improved {
            best = Some((row.val_ndcg20, epoch, model.clone()));
            since_best = 0;
        } else {
            since_best += 1;
        }
        log.push(row);
        if since_best >= cfg.patience {
            stopped_early = true;
            break;
        }
    }
    let (_, best_epoch, best) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        best,
        best_epoch,
        log,
        stopped_early,
        steps: state.step,
    })
}
