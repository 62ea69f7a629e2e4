use std::path::PathBuf;

use bsarec::evaluation::{evaluate, queries, Protocol, Stage};
use bsarec::model::load_checkpoint;
use bsarec::{BsaRec, Error, Exec, Result};

use crate::config::RunConfig;
use crate::output::{load_splits, write_json, write_text};
use crate::EvaluateArgs;

/// Lists every model setting on which the config and checkpoint disagree.
fn config_mismatch(cfg: &RunConfig, model: &BsaRec) -> Option<String> {
    let d = model.config().hidden;
    let diffs: Vec<String> = cfg
        .model
        .to_pairs()
        .into_iter()
        .zip(model.config().to_pairs())
        .filter(|((k, a), (_, b))| *k != "num_items" && a != b)
        .map(|((k, a), (_, b))| format!("{k}: config {a}, checkpoint {b}"))
        .collect();
    if diffs.is_empty() {
        return None;
    }
    let mut shapes = Vec::new();
    if cfg.model.hidden != d || cfg.model.max_len != model.config().max_len {
        shapes.push(format!(
            "position_embedding: config [{}, {}], checkpoint [{}, {d}]",
            cfg.model.max_len,
            cfg.model.hidden,
            model.config().max_len
        ));
    }
    Some(diffs.into_iter().chain(shapes).collect::<Vec<_>>().join("; "))
}

pub fn run(args: &EvaluateArgs, exec: Exec) -> Result<()> {
    let model = load_checkpoint(&args.checkpoint)?;
    let cfg = args.config.as_deref().map(RunConfig::load).transpose()?;
    if let Some(cfg) = &cfg {
        if let Some(diff) = config_mismatch(cfg, &model) {
            return Err(Error::Checkpoint(format!("shape mismatch between config and checkpoint: {diff}")));
        }
    }
    let data: PathBuf = args
        .data
        .clone()
        .or_else(|| cfg.as_ref().and_then(|c| c.data.clone()))
        .ok_or_else(|| Error::InvalidArgument("no dataset: pass --data or --config".into()))?;
    let core_k = args.core_k.or(cfg.as_ref().map(|c| c.core_k)).unwrap_or(1);
    let (_, splits) = load_splits(&data, core_k)?;

    let mc = model.config();
    if splits.num_items != mc.num_items {
        return Err(Error::Checkpoint(format!(
            "shape mismatch: item_embedding is [{}, {}] in the checkpoint but the dataset needs [{}, {}]",
            mc.num_items + 1,
            mc.hidden,
            splits.num_items + 1,
            mc.hidden
        )));
    }

    let stage = if args.validation { Stage::Validation } else { Stage::Test };
    let qs = queries(&splits, stage);
    let report = evaluate(&model, &qs, args.protocol, !args.no_mask, args.seed, exec)?;

    let out = args
        .out
        .clone()
        .unwrap_or_else(|| args.checkpoint.parent().map(|p| p.to_path_buf()).unwrap_or_default());
    let stem = match (args.protocol, stage) {
        (Protocol::Full, Stage::Test) => "eval_full".to_string(),
        (Protocol::Sampled99, Stage::Test) => format!("eval_sampled99_seed{}", args.seed),
        (Protocol::Full, Stage::Validation) => "eval_full_validation".to_string(),
        (Protocol::Sampled99, Stage::Validation) => format!("eval_sampled99_seed{}_validation", args.seed),
    };
    let value = serde_json::to_value(&report).expect("report serializes");
    write_json(&out.join(format!("{stem}.json")), &value)?;
    write_text(&out.join(format!("{stem}.txt")), &report.to_table())?;
    print!("{}", report.to_table());
    Ok(())
}
