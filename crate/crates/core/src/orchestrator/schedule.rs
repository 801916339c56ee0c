use serde::{Deserialize, Serialize};

use crate::data::GroupPartition;
use crate::error::{Error, Result};

/// What each network trains on and predicts in one iteration.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationPlan {
    /// 1-based iteration index.
    pub index: usize,
    pub rnet_train_groups: Vec<usize>,
    pub rnet_predict_group: Option<usize>,
    pub snet_train_groups: Vec<usize>,
    pub snet_predict_group: Option<usize>,
    pub real_count: usize,
    pub contaminated_count: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub num_groups: usize,
    pub plans: Vec<IterationPlan>,
}

impl Schedule {
    pub fn len(&self) -> usize {
        self.plans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.plans.is_empty()
    }

    /// Human-readable listing, one iteration per line.
    pub fn describe(&self) -> String {
        let fmt = |g: &[usize]| g.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let opt = |g: Option<usize>| g.map_or_else(|| "-".to_string(), |g| g.to_string());
        let mut out = format!("{} groups, {} iterations\n", self.num_groups, self.plans.len());
        for p in &self.plans {
            out.push_str(&format!(
                "iter {}: rnet train {{{}}} predict {} | snet train {{{}}} predict {} | real {} contaminated {}\n",
                p.index,
                fmt(&p.rnet_train_groups),
                opt(p.rnet_predict_group),
                fmt(&p.snet_train_groups),
                opt(p.snet_predict_group),
                p.real_count,
                p.contaminated_count
            ));
        }
        out
    }
}

/// Real labels in group 1 at iteration `t` (1-based): half of the group,
/// rounded up, plus a tenth of the group per later iteration, capped at the
/// whole group.
pub fn real_count(group1_size: usize, t: usize) -> usize {
    let base = group1_size.div_ceil(2);
    (base + group1_size * (t - 1) / 10).min(group1_size)
}

/// Alternating group-wise schedule. Each iteration, the refinement network
/// predicts the next unconsumed group and the saliency network the one after.
/// The refinement network then trains on the group the saliency network just
/// labeled, while the saliency network accumulates every group refined so far.
/// The schedule ends after the first iteration whose saliency network has
/// nothing left to predict.
pub fn build_schedule(num_groups: usize, group1_size: usize) -> Result<Schedule> {
    if num_groups < 2 {
        return Err(Error::Config(format!("at least 2 groups are required, got {num_groups}")));
    }
    let mut next = GroupPartition::REAL_GROUP + 1;
    let mut take = || {
        (next <= num_groups).then(|| {
            next += 1;
            next - 1
        })
    };
    let mut plans = Vec::new();
    let mut refined: Vec<usize> = Vec::new();
    let mut last_s: Option<usize> = None;
    loop {
        let t = plans.len() + 1;
        let mut rnet_train = vec![GroupPartition::REAL_GROUP];
        rnet_train.extend(last_s);
        let rnet_predict = take();
        refined.extend(rnet_predict);
        let mut snet_train = vec![GroupPartition::REAL_GROUP];
        snet_train.extend(&refined);
        let snet_predict = take();
        let real = real_count(group1_size, t);
        plans.push(IterationPlan {
            index: t,
            rnet_train_groups: rnet_train,
            rnet_predict_group: rnet_predict,
            snet_train_groups: snet_train,
            snet_predict_group: snet_predict,
            real_count: real,
            contaminated_count: group1_size - real,
        });
        if snet_predict.is_none() {
            break;
        }
        last_s = snet_predict;
    }
    Ok(Schedule { num_groups, plans })
}
