use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::GraspSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stratify {
    Outcome,
    Direction,
}

/// Set indices on each side of a split, ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn select<'a>(&self, sets: &'a [GraspSet]) -> (Vec<&'a GraspSet>, Vec<&'a GraspSet>) {
        (
            self.train.iter().map(|&i| &sets[i]).collect(),
            self.test.iter().map(|&i| &sets[i]).collect(),
        )
    }
}

/// Seeded, stratified split at set granularity.
///
/// The training side gets `round(ratio * n)` sets (at least one on each
/// side), shared across strata by largest remainder.
pub fn split(sets: &[GraspSet], ratio: f64, seed: u64, stratify: Stratify) -> Result<Split> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split ratio must lie in (0, 1), got {ratio}"
        )));
    }
    let n = sets.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 sets to split, got {n}"
        )));
    }
    let mut strata: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, s) in sets.iter().enumerate() {
        let key = match stratify {
            Stratify::Outcome => s.outcome.to_string(),
            Stratify::Direction => s.condition(),
        };
        strata.entry(key).or_default().push(i);
    }
    let target = ((ratio * n as f64).round() as usize).clamp(1, n - 1);

    let quotas: Vec<f64> = strata
        .values()
        .map(|v| v.len() as f64 * target as f64 / n as f64)
        .collect();
    let mut take: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| {
        (quotas[b] - quotas[b].floor()).total_cmp(&(quotas[a] - quotas[a].floor()))
    });
    let mut remaining = target - take.iter().sum::<usize>();
    for &s in order.iter().cycle().take(order.len() * 2) {
        if remaining == 0 {
            break;
        }
        if take[s] < strata.values().nth(s).map_or(0, Vec::len) {
            take[s] += 1;
            remaining -= 1;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::with_capacity(target);
    let mut test = Vec::with_capacity(n - target);
    for (members, &k) in strata.values().zip(&take) {
        let mut m = members.clone();
        m.shuffle(&mut rng);
        train.extend_from_slice(&m[..k]);
        test.extend_from_slice(&m[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}
