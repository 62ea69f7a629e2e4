//! Interaction logs: ingestion, k-core filtering, leave-one-out splits,
//! padding and batching.
//!
//! Input is UTF-8 text with one user per line, `<user> <item> <item> ...`,
//! items in chronological order. Every listed item counts as one implicit
//! interaction. Items are re-indexed to `1..=|V|` in order of first
//! appearance (0 is reserved for padding); users to `0..|U|` in file order.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionLog {
    user_tokens: Vec<String>,
    /// `item_tokens[i - 1]` is the raw token of item `i`.
    item_tokens: Vec<String>,
    item_index: HashMap<String, usize>,
    /// Per user, chronological item ids.
    sequences: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    pub avg_length: f64,
    /// `1 - interactions / (users · items)`.
    pub sparsity: f64,
}

impl InteractionLog {
    /// Builds a log from raw token sequences, re-indexing items by first
    /// appearance.
    pub fn from_token_sequences<U, I, S>(rows: impl IntoIterator<Item = (U, I)>) -> Result<Self>
    where
        U: Into<String>,
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut log = InteractionLog {
            user_tokens: Vec::new(),
            item_tokens: Vec::new(),
            item_index: HashMap::new(),
            sequences: Vec::new(),
        };
        for (user, items) in rows {
            let seq = items.into_iter().map(|tok| log.intern(tok.as_ref())).collect();
            log.user_tokens.push(user.into());
            log.sequences.push(seq);
        }
        if log.sequences.is_empty() {
            return Err(Error::InvalidInput("no users in interaction log".into()));
        }
        Ok(log)
    }

    fn intern(&mut self, token: &str) -> usize {
        if let Some(&id) = self.item_index.get(token) {
            return id;
        }
        self.item_tokens.push(token.to_string());
        let id = self.item_tokens.len();
        self.item_index.insert(token.to_string(), id);
        id
    }

    pub fn parse<R: BufRead>(reader: R, origin: &Path) -> Result<Self> {
        let mut rows = Vec::new();
        let mut seen = HashMap::new();
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line.map_err(|e| Error::Parse {
                path: origin.to_path_buf(),
                line: line_no,
                message: e.to_string(),
            })?;
            let mut tokens = line.split_whitespace();
            let Some(user) = tokens.next() else { continue };
            let items: Vec<&str> = tokens.collect();
            if items.is_empty() {
                return Err(Error::Parse {
                    path: origin.to_path_buf(),
                    line: line_no,
                    message: format!("user `{user}` has no items"),
                });
            }
            if let Some(first) = seen.insert(user.to_string(), line_no) {
                return Err(Error::Parse {
                    path: origin.to_path_buf(),
                    line: line_no,
                    message: format!("user `{user}` already appeared on line {first}"),
                });
            }
            rows.push((user.to_string(), items.into_iter().map(str::to_string).collect::<Vec<_>>()));
        }
        if rows.is_empty() {
            return Err(Error::InvalidInput(format!("{}: file contains no users", origin.display())));
        }
        Self::from_token_sequences(rows)
    }

    pub fn num_users(&self) -> usize {
        self.sequences.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_tokens.len()
    }

    pub fn num_interactions(&self) -> usize {
        self.sequences.iter().map(Vec::len).sum()
    }

    pub fn sequences(&self) -> &[Vec<usize>] {
        &self.sequences
    }

    pub fn user_token(&self, user: usize) -> &str {
        &self.user_tokens[user]
    }

    pub fn item_token(&self, item: usize) -> Option<&str> {
        item.checked_sub(1)
            .and_then(|i| self.item_tokens.get(i))
            .map(String::as_str)
    }

    pub fn item_id(&self, token: &str) -> Option<usize> {
        self.item_index.get(token).copied()
    }

    pub fn stats(&self) -> DatasetStats {
        let users = self.num_users();
        let items = self.num_items();
        let interactions = self.num_interactions();
        DatasetStats {
            users,
            items,
            interactions,
            avg_length: interactions as f64 / users as f64,
            sparsity: 1.0 - interactions as f64 / (users as f64 * items as f64),
        }
    }

    /// Writes the log with integer tokens: users numbered from 1 in order,
    /// items by their ids.
    pub fn write_indexed<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (u, seq) in self.sequences.iter().enumerate() {
            write!(w, "{}", u + 1)?;
            for item in seq {
                write!(w, " {item}")?;
            }
            writeln!(w)?;
        }
        w.flush()
    }
}

pub fn load_interactions(path: impl AsRef<Path>) -> Result<InteractionLog> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    InteractionLog::parse(BufReader::new(file), path)
}

/// Drops users and items with fewer than `k` interactions until nothing
/// changes, then re-indexes the survivors.
pub fn core_filter(log: &InteractionLog, k: usize) -> Result<InteractionLog> {
    if k == 0 {
        return Err(Error::InvalidArgument("core threshold k must be >= 1".into()));
    }
    let mut alive: Vec<(usize, Vec<usize>)> = log.sequences.iter().cloned().enumerate().collect();
    loop {
        let mut counts = vec![0usize; log.num_items() + 1];
        for (_, seq) in &alive {
            for &i in seq {
                counts[i] += 1;
            }
        }
        let mut changed = false;
        for (_, seq) in alive.iter_mut() {
            let before = seq.len();
            seq.retain(|&i| counts[i] >= k);
            changed |= seq.len() != before;
        }
        let before = alive.len();
        alive.retain(|(_, seq)| seq.len() >= k && !seq.is_empty());
        changed |= alive.len() != before;
        if !changed {
            break;
        }
    }
    if alive.is_empty() {
        return Err(Error::EmptyDataset(format!("{k}-core filtering")));
    }
    InteractionLog::from_token_sequences(alive.into_iter().map(|(u, seq)| {
        let tokens: Vec<&str> = seq.iter().map(|&i| log.item_tokens[i - 1].as_str()).collect();
        (log.user_tokens[u].clone(), tokens)
    }))
}

/// One user's leave-one-out split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserSplit {
    pub user: usize,
    pub train: Vec<usize>,
    pub valid: usize,
    pub test: usize,
}

impl UserSplit {
    /// History used to predict the validation target.
    pub fn valid_history(&self) -> &[usize] {
        &self.train
    }

    /// History used to predict the test target.
    pub fn test_history(&self) -> Vec<usize> {
        let mut h = self.train.clone();
        h.push(self.valid);
        h
    }

    pub fn full_sequence(&self) -> Vec<usize> {
        let mut h = self.test_history();
        h.push(self.test);
        h
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSequences {
    pub users: Vec<UserSplit>,
    pub num_items: usize,
    /// Users skipped for having fewer than three interactions.
    pub dropped: usize,
}

pub fn split_leave_one_out(log: &InteractionLog) -> SplitSequences {
    let mut users = Vec::with_capacity(log.num_users());
    let mut dropped = 0;
    for (u, seq) in log.sequences.iter().enumerate() {
        if seq.len() < 3 {
            dropped += 1;
            continue;
        }
        let n = seq.len();
        users.push(UserSplit {
            user: u,
            train: seq[..n - 2].to_vec(),
            valid: seq[n - 2],
            test: seq[n - 1],
        });
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} users with fewer than 3 interactions");
    }
    SplitSequences {
        users,
        num_items: log.num_items(),
        dropped,
    }
}

/// Keeps the most recent `min(len, n)` items right-aligned, left-filling 0.
pub fn pad_truncate(items: &[usize], n: usize) -> Vec<usize> {
    let keep = items.len().min(n);
    let mut out = vec![0; n - keep];
    out.extend_from_slice(&items[items.len() - keep..]);
    out
}

/// A next-item training example: predict `target` from `history`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub history: Vec<usize>,
    pub target: usize,
}

/// Training examples from the training prefixes.
///
/// Without augmentation each user contributes one example: its training
/// prefix minus the last item, predicting that item. With `augment_prefixes`
/// every prefix of the training part (of length >= 1) yields an example.
/// `append_validation` moves the validation item into the training part.
pub fn training_examples(splits: &SplitSequences, augment_prefixes: bool, append_validation: bool) -> Vec<Example> {
    let mut out = Vec::new();
    for u in &splits.users {
        let part = if append_validation {
            u.test_history()
        } else {
            u.train.clone()
        };
        if augment_prefixes {
            for end in 1..part.len() {
                out.push(Example {
                    history: part[..end].to_vec(),
                    target: part[end],
                });
            }
            if part.len() == 1 {
                out.push(Example {
                    history: Vec::new(),
                    target: part[0],
                });
            }
        } else {
            let (last, history) = part.split_last().expect("split users have >= 1 training item");
            out.push(Example {
                history: history.to_vec(),
                target: *last,
            });
        }
    }
    out
}

/// Shuffles `0..n` with `rng` and cuts it into consecutive batches.
pub fn epoch_batches(n: usize, batch_size: usize, rng: &mut dyn RngCore) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}
