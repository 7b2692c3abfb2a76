use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::InteractionTable;
use crate::{Error, Result};

pub const DEFAULT_RATIOS: [f64; 3] = [0.8, 0.1, 0.1];

/// Train / validation / test partition over shared index spaces.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: InteractionTable,
    pub validation: InteractionTable,
    pub test: InteractionTable,
    pub seed: u64,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Part {
    Train,
    Validation,
    Test,
}

/// Per-user sizes for `n` interactions: `ceil(r_train * n)` go to train (at
/// least one), the remainder is divided between validation and test in
/// proportion to their ratios with validation rounded up, so equal ratios
/// alternate validation, test, validation, ...
fn part_sizes(n: usize, ratios: [f64; 3]) -> (usize, usize, usize) {
    let train = ((ratios[0] * n as f64 - 1e-9).ceil() as usize).clamp(1.min(n), n);
    let rest = n - train;
    let held = ratios[1] + ratios[2];
    let val = if held > 0.0 {
        ((rest as f64 * ratios[1] / held - 1e-9).ceil() as usize).min(rest)
    } else {
        0
    };
    (train, val, rest - val)
}

/// Random per-user partition at `ratios`, deterministic for a fixed seed.
///
/// Held-out interactions whose item never occurs in the train part are moved
/// back into train so that every evaluated item has been seen in training.
pub fn split_dataset(table: &InteractionTable, ratios: [f64; 3], seed: u64) -> Result<DatasetSplit> {
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r))
        || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(Error::InvalidRatios(ratios));
    }
    let mut by_user: Vec<Vec<usize>> = vec![Vec::new(); table.n_users()];
    for (idx, r) in table.records().iter().enumerate() {
        by_user[r.user].push(idx);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut part = vec![Part::Train; table.len()];
    for records in &mut by_user {
        records.shuffle(&mut rng);
        let (n_train, n_val, _) = part_sizes(records.len(), ratios);
        for (pos, &idx) in records.iter().enumerate() {
            part[idx] = if pos < n_train {
                Part::Train
            } else if pos < n_train + n_val {
                Part::Validation
            } else {
                Part::Test
            };
        }
    }
    let mut item_in_train = vec![false; table.n_items()];
    for (r, p) in table.records().iter().zip(&part) {
        if *p == Part::Train {
            item_in_train[r.item] = true;
        }
    }
    for (r, p) in table.records().iter().zip(part.iter_mut()) {
        if !item_in_train[r.item] {
            *p = Part::Train;
        }
    }
    let select = |want: Part| {
        table
            .records()
            .iter()
            .zip(&part)
            .filter(|(_, &p)| p == want)
            .map(|(r, _)| *r)
            .collect::<Vec<_>>()
    };
    Ok(DatasetSplit {
        train: table.with_records(select(Part::Train))?,
        validation: table.with_records(select(Part::Validation))?,
        test: table.with_records(select(Part::Test))?,
        seed,
    })
}
