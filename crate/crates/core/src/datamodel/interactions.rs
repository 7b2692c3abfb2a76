use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One observed (user, item) interaction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
    /// Explicit rating in `[1, 5]`, or `1.0` for implicit feedback.
    pub rating: f64,
    pub timestamp: i64,
}

/// Interaction records over contiguous 0-based user and item index spaces.
///
/// Raw identifiers from the source file are kept as labels so that index maps
/// can be written next to derived artifacts.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionTable {
    records: Vec<Interaction>,
    n_users: usize,
    n_items: usize,
    user_labels: Vec<String>,
    item_labels: Vec<String>,
}

impl InteractionTable {
    /// Builds a table with index labels (`"0"`, `"1"`, ...).
    pub fn new(records: Vec<Interaction>, n_users: usize, n_items: usize) -> Result<Self> {
        let user_labels = (0..n_users).map(|u| u.to_string()).collect();
        let item_labels = (0..n_items).map(|i| i.to_string()).collect();
        Self::with_labels(records, user_labels, item_labels)
    }

    pub fn with_labels(
        records: Vec<Interaction>,
        user_labels: Vec<String>,
        item_labels: Vec<String>,
    ) -> Result<Self> {
        let n_users = user_labels.len();
        let n_items = item_labels.len();
        if n_users == 0 || n_items == 0 {
            return Err(Error::InvalidTable("empty user or item index space".into()));
        }
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if r.user >= n_users || r.item >= n_items {
                return Err(Error::InvalidTable(format!(
                    "index ({}, {}) out of range ({n_users}, {n_items})",
                    r.user, r.item
                )));
            }
            if !seen.insert((r.user, r.item)) {
                return Err(Error::DuplicateInteraction {
                    user: user_labels[r.user].clone(),
                    item: item_labels[r.item].clone(),
                });
            }
        }
        Ok(Self {
            records,
            n_users,
            n_items,
            user_labels,
            item_labels,
        })
    }

    /// Same index spaces and labels as `self` with a different record set.
    pub fn with_records(&self, records: Vec<Interaction>) -> Result<Self> {
        Self::with_labels(records, self.user_labels.clone(), self.item_labels.clone())
    }

    pub fn records(&self) -> &[Interaction] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn user_labels(&self) -> &[String] {
        &self.user_labels
    }

    pub fn item_labels(&self) -> &[String] {
        &self.item_labels
    }

    pub fn user_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n_users];
        for r in &self.records {
            deg[r.user] += 1;
        }
        deg
    }

    pub fn item_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n_items];
        for r in &self.records {
            deg[r.item] += 1;
        }
        deg
    }

    /// Item lists per user, in record order.
    pub fn items_by_user(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_users];
        for r in &self.records {
            out[r.user].push(r.item);
        }
        out
    }

    /// `1 - |E| / (|U| |I|)`.
    pub fn sparsity(&self) -> f64 {
        1.0 - self.records.len() as f64 / (self.n_users as f64 * self.n_items as f64)
    }
}

struct RawRecord {
    user: String,
    item: String,
    rating: f64,
    timestamp: i64,
}

fn parse_lines(path: &Path) -> Result<Vec<RawRecord>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    let bad = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 2 || fields.len() > 4 {
            return Err(bad(
                line_no,
                format!("expected 2 to 4 tab-separated fields, found {}", fields.len()),
            ));
        }
        let (user, item) = (fields[0].trim(), fields[1].trim());
        if user.is_empty() || item.is_empty() {
            return Err(bad(line_no, "empty user or item id".into()));
        }
        let rating = match fields.get(2).map(|s| s.trim()) {
            None | Some("") => 1.0,
            Some(s) => s
                .parse::<f64>()
                .map_err(|e| bad(line_no, format!("rating {s:?}: {e}")))?,
        };
        if !(1.0..=5.0).contains(&rating) {
            return Err(Error::RatingOutOfRange {
                path: path.to_path_buf(),
                line: line_no,
                rating,
            });
        }
        let timestamp = match fields.get(3).map(|s| s.trim()) {
            None | Some("") => 0,
            Some(s) => s
                .parse::<i64>()
                .map_err(|e| bad(line_no, format!("timestamp {s:?}: {e}")))?,
        };
        out.push(RawRecord {
            user: user.to_string(),
            item: item.to_string(),
            rating,
            timestamp,
        });
    }
    if out.is_empty() {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    Ok(out)
}

/// Parses an interactions TSV, remapping raw ids to contiguous indices in
/// order of first appearance.
pub fn load_interactions(path: impl AsRef<Path>) -> Result<InteractionTable> {
    let path = path.as_ref();
    let raw = parse_lines(path)?;
    let mut users: HashMap<String, usize> = HashMap::new();
    let mut items: HashMap<String, usize> = HashMap::new();
    let mut user_labels = Vec::new();
    let mut item_labels = Vec::new();
    let mut records = Vec::with_capacity(raw.len());
    for r in raw {
        let next = users.len();
        let user = *users.entry(r.user.clone()).or_insert_with(|| {
            user_labels.push(r.user.clone());
            next
        });
        let next = items.len();
        let item = *items.entry(r.item.clone()).or_insert_with(|| {
            item_labels.push(r.item.clone());
            next
        });
        records.push(Interaction {
            user,
            item,
            rating: r.rating,
            timestamp: r.timestamp,
        });
    }
    InteractionTable::with_labels(records, user_labels, item_labels)
}

/// Parses a TSV whose ids are already indices into known index spaces, as
/// written by [`write_interactions`].
pub fn load_indexed_interactions(
    path: impl AsRef<Path>,
    n_users: usize,
    n_items: usize,
) -> Result<InteractionTable> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    if text.lines().all(|l| l.trim().is_empty() || l.starts_with('#')) {
        // validation or test files may legitimately be empty
        return InteractionTable::new(Vec::new(), n_users, n_items);
    }
    let raw = parse_lines(path)?;
    let index = |s: &str, bound: usize| -> Result<usize> {
        s.parse::<usize>()
            .ok()
            .filter(|&v| v < bound)
            .ok_or_else(|| Error::Parse {
                path: PathBuf::from(path),
                line: 0,
                msg: format!("id {s:?} is not an index below {bound}"),
            })
    };
    let records = raw
        .iter()
        .map(|r| {
            Ok(Interaction {
                user: index(&r.user, n_users)?,
                item: index(&r.item, n_items)?,
                rating: r.rating,
                timestamp: r.timestamp,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    InteractionTable::new(records, n_users, n_items)
}

/// Writes `user<TAB>item<TAB>rating<TAB>timestamp` lines using indices.
pub fn write_interactions(table: &InteractionTable, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::with_capacity(table.len() * 16);
    for r in table.records() {
        writeln!(out, "{}\t{}\t{}\t{}", r.user, r.item, r.rating, r.timestamp).unwrap();
    }
    fs::write(path, out)?;
    Ok(())
}

/// Writes `user_map.tsv` and `item_map.tsv` (index, raw id) into `dir`.
pub fn save_id_maps(table: &InteractionTable, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    for (name, labels) in [
        ("user_map.tsv", table.user_labels()),
        ("item_map.tsv", table.item_labels()),
    ] {
        let mut out = String::new();
        for (i, label) in labels.iter().enumerate() {
            writeln!(out, "{i}\t{label}").unwrap();
        }
        fs::write(dir.join(name), out)?;
    }
    Ok(())
}

/// Iteratively drops users and items with fewer than `k` interactions until
/// every survivor has degree at least `k`, then re-compacts indices.
pub fn apply_k_core(table: &InteractionTable, k: usize) -> Result<InteractionTable> {
    if k == 0 {
        return Err(Error::InvalidArgument("k-core threshold must be >= 1".into()));
    }
    let mut alive: Vec<bool> = vec![true; table.len()];
    loop {
        let mut udeg = vec![0usize; table.n_users()];
        let mut ideg = vec![0usize; table.n_items()];
        for (r, _) in table.records().iter().zip(&alive).filter(|(_, &a)| a) {
            udeg[r.user] += 1;
            ideg[r.item] += 1;
        }
        let mut changed = false;
        for (r, a) in table.records().iter().zip(alive.iter_mut()) {
            if *a && (udeg[r.user] < k || ideg[r.item] < k) {
                *a = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let kept: Vec<&Interaction> = table
        .records()
        .iter()
        .zip(&alive)
        .filter_map(|(r, &a)| a.then_some(r))
        .collect();
    if kept.is_empty() {
        return Err(Error::KCoreEliminated { k });
    }
    let mut user_map = vec![usize::MAX; table.n_users()];
    let mut item_map = vec![usize::MAX; table.n_items()];
    for r in &kept {
        user_map[r.user] = 0;
        item_map[r.item] = 0;
    }
    let compact = |map: &mut [usize], labels: &[String]| -> Vec<String> {
        let mut out = Vec::new();
        for (old, slot) in map.iter_mut().enumerate() {
            if *slot != usize::MAX {
                *slot = out.len();
                out.push(labels[old].clone());
            }
        }
        out
    };
    let user_labels = compact(&mut user_map, table.user_labels());
    let item_labels = compact(&mut item_map, table.item_labels());
    let records = kept
        .into_iter()
        .map(|r| Interaction {
            user: user_map[r.user],
            item: item_map[r.item],
            ..*r
        })
        .collect();
    InteractionTable::with_labels(records, user_labels, item_labels)
}
