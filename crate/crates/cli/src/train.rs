use std::fs::File;
use std::io::{BufWriter, Write};

use bsarec::data::training_examples;
use bsarec::evaluation::{evaluate, queries, Stage};
use bsarec::model::save_checkpoint;
use bsarec::trainer::{train, EpochLog};
use bsarec::{BsaRec, Error, Exec, Result};
use serde_json::json;

use crate::config::RunConfig;
use crate::output::{load_splits, write_json, write_text};
use crate::TrainArgs;

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const CONFIG_ECHO_FILE: &str = "config.cfg";
pub const LOG_FILE: &str = "train_log.csv";

fn effective_config(args: &TrainArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&args.config)?;
    let mut errors = Vec::new();
    if let Some(a) = args.alpha {
        cfg.model.alpha = a;
    }
    if let Some(s) = args.seed {
        cfg.train.seed = s;
    }
    if let Some(d) = &args.data {
        cfg.data = Some(d.clone());
    }
    if let Some(o) = &args.output_dir {
        cfg.output_dir = o.clone();
    }
    for o in &args.overrides {
        match o.split_once('=') {
            Some((k, v)) => {
                if let Err(e) = cfg.set(k.trim(), v.trim()) {
                    errors.push(format!("--set {o}: {e}"));
                }
            }
            None => errors.push(format!("--set {o}: expected KEY=VALUE")),
        }
    }
    errors.extend(cfg.violations());
    if !errors.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "{} problem(s):\n  {}",
            errors.len(),
            errors.join("\n  ")
        )));
    }
    Ok(cfg)
}

pub fn run(args: &TrainArgs, exec: Exec) -> Result<()> {
    let cfg = effective_config(args)?;
    let out = cfg.resolved_output_dir();
    let data = cfg.data.clone().expect("validated");
    let (_, splits) = load_splits(&data, cfg.core_k)?;
    let examples = training_examples(&splits, cfg.augment_prefixes, cfg.append_validation);

    let mut model_cfg = cfg.model.clone();
    model_cfg.num_items = splits.num_items;
    let model = BsaRec::init(model_cfg, cfg.train.seed)?;
    log::info!(
        "{} users, {} items, {} training examples, {} parameters",
        splits.users.len(),
        splits.num_items,
        examples.len(),
        model.config().parameter_count()
    );

    write_text(&out.join(CONFIG_ECHO_FILE), &cfg.to_text())?;
    let log_path = out.join(LOG_FILE);
    let mut log_file = BufWriter::new(File::create(&log_path).map_err(|e| Error::io(&log_path, e))?);
    writeln!(log_file, "{}", EpochLog::CSV_HEADER).map_err(|e| Error::io(&log_path, e))?;

    let valid = queries(&splits, Stage::Validation);
    let outcome = train(
        model,
        &examples,
        &cfg.train,
        exec,
        |m| evaluate(m, &valid, cfg.protocol, cfg.mask_history, cfg.eval_seed, exec),
        |row| {
            let mut row = row.clone();
            if !cfg.log_seconds {
                row.seconds = 0.0;
            }
            log::info!(
                "epoch {:>3}  loss {:.5}  val NDCG@20 {:.4}  HR@20 {:.4}  {:.2}s",
                row.epoch,
                row.loss,
                row.val_ndcg20,
                row.val_hr20,
                row.seconds
            );
            writeln!(log_file, "{}", row.csv_row())
                .and_then(|_| log_file.flush())
                .map_err(|e| Error::io(&log_path, e))
        },
    )?;
    drop(log_file);

    save_checkpoint(out.join(CHECKPOINT_FILE), &outcome.best, cfg.precision)?;
    let test = queries(&splits, Stage::Test);
    let report = evaluate(&outcome.best, &test, cfg.protocol, cfg.mask_history, cfg.eval_seed, exec)?;
    let summary = json!({
        "best_epoch": outcome.best_epoch,
        "epochs": outcome.log.len(),
        "stopped_early": outcome.stopped_early,
        "steps": outcome.steps,
        "test": report,
    });
    write_json(&out.join("metrics.json"), &summary)?;
    write_text(&out.join("metrics.txt"), &report.to_table())?;
    print!("{}", report.to_table());
    log::info!("artifacts written to {}", out.display());
    Ok(())
}
