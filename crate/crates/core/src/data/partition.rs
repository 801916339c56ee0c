use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{LabelKind, Sample};
use crate::error::{Error, Result};
use crate::Scalar;

/// Disjoint sample-id groups. Group 1 (index 0 in `groups`) holds the
/// real-labeled samples; groups 2.. hold coarse-labeled samples.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupPartition {
    pub groups: Vec<Vec<String>>,
}

impl GroupPartition {
    pub const REAL_GROUP: usize = 1;

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    /// Members of the 1-based group `index`.
    pub fn group(&self, index: usize) -> &[String] {
        &self.groups[index - 1]
    }

    pub fn group_of(&self, id: &str) -> Option<usize> {
        self.groups.iter().position(|g| g.iter().any(|m| m == id)).map(|p| p + 1)
    }

    pub fn len(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Splits samples into `num_groups` groups: group 1 receives the first
/// `num_real` real-labeled samples (input order); every other sample is
/// shuffled with `seed` and dealt into groups 2..=`num_groups` with sizes
/// differing by at most one, earlier groups taking the remainder.
pub fn partition<T: Scalar>(
    samples: &[Sample<T>],
    num_groups: usize,
    num_real: usize,
    seed: u64,
) -> Result<GroupPartition> {
    let ids: Vec<(&str, bool)> = samples.iter().map(|s| (s.id.as_str(), s.label_kind == LabelKind::Real)).collect();
    partition_ids(&ids, num_groups, num_real, seed)
}

/// [`partition`] over `(id, has_real_label)` pairs.
pub fn partition_ids(ids: &[(&str, bool)], num_groups: usize, num_real: usize, seed: u64) -> Result<GroupPartition> {
    if num_groups < 2 {
        return Err(Error::Config(format!("need at least 2 groups, got {num_groups}")));
    }
    if num_groups > ids.len() {
        return Err(Error::Config(format!("{num_groups} groups requested for only {} samples", ids.len())));
    }
    let mut seen = std::collections::HashSet::new();
    for (id, _) in ids {
        if !seen.insert(*id) {
            return Err(Error::Data(format!("duplicate sample id {id}")));
        }
    }
    let real: Vec<String> = ids.iter().filter(|(_, r)| *r).take(num_real).map(|(id, _)| id.to_string()).collect();
    if real.len() < num_real {
        return Err(Error::Config(format!("{num_real} real-labeled samples required, only {} available", real.len())));
    }
    let mut rest: Vec<String> = ids.iter().map(|(id, _)| id.to_string()).filter(|id| !real.contains(id)).collect();
    let buckets = num_groups - 1;
    if rest.len() < buckets {
        return Err(Error::Config(format!("{} coarse-labeled samples cannot fill {buckets} groups", rest.len())));
    }
    rest.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let base = rest.len() / buckets;
    let extra = rest.len() % buckets;
    let mut groups = Vec::with_capacity(num_groups);
    groups.push(real);
    let mut it = rest.into_iter();
    for g in 0..buckets {
        let n = base + usize::from(g < extra);
        groups.push(it.by_ref().take(n).collect());
    }
    Ok(GroupPartition { groups })
}
