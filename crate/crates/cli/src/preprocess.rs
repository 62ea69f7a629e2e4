use std::path::PathBuf;

use bsarec::data::{core_filter, load_interactions};
use bsarec::{Error, Result};

use crate::output::{write_json, write_text};
use crate::PreprocessArgs;

/// `data.txt` -> `data.stats.json`.
pub fn stats_path(out: &std::path::Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.stats.json"))
}

pub fn run(args: &PreprocessArgs) -> Result<()> {
    if args.k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    let raw = load_interactions(&args.raw)?;
    let filtered = core_filter(&raw, args.k)?;
    let mut buf = Vec::new();
    filtered.write_indexed(&mut buf).map_err(|e| Error::io(&args.out, e))?;
    write_text(&args.out, &String::from_utf8(buf).expect("indexed output is ascii"))?;
    let stats = filtered.stats();
    let value = serde_json::to_value(&stats).expect("stats serialize");
    write_json(&stats_path(&args.out), &value)?;
    log::info!(
        "{} -> {}: {} users, {} items, {} interactions ({} users and {} items removed)",
        args.raw.display(),
        args.out.display(),
        stats.users,
        stats.items,
        stats.interactions,
        raw.num_users() - stats.users,
        raw.num_items() - stats.items
    );
    println!("{}", serde_json::to_string(&value).expect("stats serialize"));
    Ok(())
}
