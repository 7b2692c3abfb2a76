use std::collections::HashSet;

use rand::Rng;

use crate::datamodel::InteractionTable;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Triplet {
    pub user: usize,
    pub pos: usize,
    pub neg: usize,
}

/// Uniform positive records with rejection-sampled negatives. Records of
/// users who interacted with every item are dropped at construction.
#[derive(Debug, Clone)]
pub struct BprSampler {
    records: Vec<(usize, usize)>,
    seen: Vec<HashSet<usize>>,
    n_items: usize,
}

impl BprSampler {
    pub fn new(train: &InteractionTable) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::InvalidArgument("cannot sample from an empty train table".into()));
        }
        let mut seen = vec![HashSet::new(); train.n_users()];
        for r in train.records() {
            seen[r.user].insert(r.item);
        }
        let n_items = train.n_items();
        let saturated: Vec<usize> = (0..seen.len()).filter(|&u| seen[u].len() >= n_items).collect();
        for u in &saturated {
            log::warn!("user {u} interacted with all {n_items} items; skipped for negative sampling");
        }
        let records: Vec<(usize, usize)> = train
            .records()
            .iter()
            .filter(|r| seen[r.user].len() < n_items)
            .map(|r| (r.user, r.item))
            .collect();
        if records.is_empty() {
            return Err(Error::InvalidArgument("every user interacted with every item".into()));
        }
        Ok(Self { records, seen, n_items })
    }

    pub fn n_records(&self) -> usize {
        self.records.len()
    }

    pub fn sample(&self, batch_size: usize, rng: &mut impl Rng) -> Vec<Triplet> {
        (0..batch_size)
            .map(|_| {
                let (user, pos) = self.records[rng.random_range(0..self.records.len())];
                let neg = loop {
                    let j = rng.random_range(0..self.n_items);
                    if !self.seen[user].contains(&j) {
                        break j;
                    }
                };
                Triplet { user, pos, neg }
            })
            .collect()
    }
}

pub fn sample_bpr_triplets(train: &InteractionTable, batch_size: usize, rng: &mut impl Rng) -> Result<Vec<Triplet>> {
    Ok(BprSampler::new(train)?.sample(batch_size, rng))
}
