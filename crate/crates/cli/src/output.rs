use std::fs;
use std::path::Path;

use bsarec::data::{core_filter, load_interactions, split_leave_one_out, InteractionLog, SplitSequences};
use bsarec::{Error, Result};
use serde_json::Value;

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("json values serialize");
    text.push('\n');
    write_text(path, &text)
}

/// Loads a dataset, applies the k-core filter when `k > 1`, and splits it.
pub fn load_splits(path: &Path, core_k: usize) -> Result<(InteractionLog, SplitSequences)> {
    let mut log = load_interactions(path)?;
    if core_k > 1 {
        log = core_filter(&log, core_k)?;
    }
    let splits = split_leave_one_out(&log);
    if splits.users.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "dropping users with fewer than 3 interactions from {}",
            path.display()
        )));
    }
    Ok((log, splits))
}
