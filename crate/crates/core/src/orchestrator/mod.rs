//! Alternating training driver: group-wise schedule, label contamination,
//! epoch ordering, the validation gate and the event log.

pub mod events;
pub mod gate;
mod persist;
pub mod policy;
pub mod schedule;

use std::collections::{BTreeMap, HashMap};
use std::ops::ControlFlow;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use events::{read_log, Event, EventLog};
pub use gate::{credibility_gate, validation_mae, BestRecord, CredibilityState, GateAction, GateDecision};
pub use persist::{has_state, load_state, save_state};
pub use policy::OptimizerPolicy;
pub use schedule::{build_schedule, real_count, IterationPlan, Schedule};

use crate::data::{augment, contaminate, io, ContaminationSpec, GroupPartition, LabelKind, NetworkKind, Sample};
use crate::error::{Error, Result};
use crate::losses::{LossAccumulator, Supervision};
use crate::snet::SaliencyNetwork;
use crate::Scalar;

/// Pipeline variants used for ablations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AblationMode {
    /// Alternating refinement with gate and contamination.
    #[default]
    Full,
    /// Saliency network trained on coarse maps, then fine-tuned on real labels.
    #[serde(alias = "M1")]
    M1,
    /// Saliency network trained on real labels only.
    #[serde(alias = "M2")]
    M2,
    /// Saliency network trained on real labels, relabels every coarse group
    /// once, then retrains on everything.
    #[serde(alias = "M3")]
    M3,
    /// Refinement network relabels every coarse group once; no alternation.
    #[serde(alias = "No1")]
    No1,
    /// Gate disabled.
    #[serde(alias = "No2")]
    No2,
    /// The last saliency-network phase trains on every group.
    #[serde(alias = "No3")]
    No3,
    /// No label contamination.
    #[serde(alias = "No4")]
    No4,
}

impl AblationMode {
    pub const ALL: [AblationMode; 8] = [
        AblationMode::Full,
        AblationMode::M1,
        AblationMode::M2,
        AblationMode::M3,
        AblationMode::No1,
        AblationMode::No2,
        AblationMode::No3,
        AblationMode::No4,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AblationMode::Full => "full",
            AblationMode::M1 => "m1",
            AblationMode::M2 => "m2",
            AblationMode::M3 => "m3",
            AblationMode::No1 => "no1",
            AblationMode::No2 => "no2",
            AblationMode::No3 => "no3",
            AblationMode::No4 => "no4",
        }
    }

    pub fn gate_enabled(self) -> bool {
        self != AblationMode::No2
    }

    pub fn contaminates(self) -> bool {
        matches!(self, AblationMode::Full | AblationMode::No2 | AblationMode::No3)
    }

    pub fn uses_rnet(self) -> bool {
        !matches!(self, AblationMode::M1 | AblationMode::M2 | AblationMode::M3)
    }
}

impl std::str::FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AblationMode::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown ablation mode {s:?}")))
    }
}

/// Mixes `parts` into `seed` (SplitMix64 finalizer per part).
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut z = seed;
    for &p in parts {
        z = z.wrapping_add(p.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

const SEED_CONTAMINATE: u64 = 1;
const SEED_SHUFFLE: u64 = 2;
const SEED_AUGMENT: u64 = 3;

fn net_code(n: NetworkKind) -> u64 {
    match n {
        NetworkKind::Rnet => 0,
        NetworkKind::Snet => 1,
    }
}

/// Where the samples of one training phase come from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    /// Group 1: the first `real` members keep their labels, the remaining
    /// `contaminated` members get degraded copies.
    Real { real: usize, contaminated: usize },
    /// A group supervised by its stored pseudo labels.
    Pseudo(usize),
    /// A group supervised by its coarse maps.
    Coarse(usize),
}

/// One unit of work inside an iteration.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    Train { network: NetworkKind, sources: Vec<Source> },
    Gate { network: NetworkKind },
    Predict { network: NetworkKind, groups: Vec<usize> },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationProgram {
    pub index: usize,
    pub steps: Vec<Step>,
}

fn pseudo_sources(groups: &[usize]) -> impl Iterator<Item = Source> + '_ {
    groups.iter().filter(|&&g| g != GroupPartition::REAL_GROUP).map(|&g| Source::Pseudo(g))
}

/// The steps each ablation mode executes.
pub fn build_program(mode: AblationMode, num_groups: usize, group1_size: usize) -> Result<Vec<IterationProgram>> {
    let schedule = build_schedule(num_groups, group1_size)?;
    let all_real = Source::Real { real: group1_size, contaminated: 0 };
    let coarse_groups: Vec<usize> = (2..=num_groups).collect();
    let with = |mut v: Vec<Source>, rest: Vec<Source>| {
        v.extend(rest);
        v
    };
    let s = NetworkKind::Snet;
    let r = NetworkKind::Rnet;
    let programs = match mode {
        AblationMode::M1 => vec![IterationProgram {
            index: 1,
            steps: vec![
                Step::Train { network: s, sources: coarse_groups.iter().map(|&g| Source::Coarse(g)).collect() },
                Step::Train { network: s, sources: vec![all_real] },
                Step::Gate { network: s },
            ],
        }],
        AblationMode::M2 => vec![IterationProgram {
            index: 1,
            steps: vec![Step::Train { network: s, sources: vec![all_real] }, Step::Gate { network: s }],
        }],
        AblationMode::M3 => vec![
            IterationProgram {
                index: 1,
                steps: vec![
                    Step::Train { network: s, sources: vec![all_real.clone()] },
                    Step::Gate { network: s },
                    Step::Predict { network: s, groups: coarse_groups.clone() },
                ],
            },
            IterationProgram {
                index: 2,
                steps: vec![
                    Step::Train { network: s, sources: with(vec![all_real], pseudo_sources(&coarse_groups).collect()) },
                    Step::Gate { network: s },
                ],
            },
        ],
        AblationMode::No1 => vec![IterationProgram {
            index: 1,
            steps: vec![
                Step::Train { network: r, sources: vec![all_real.clone()] },
                Step::Gate { network: r },
                Step::Predict { network: r, groups: coarse_groups.clone() },
                Step::Train { network: s, sources: with(vec![all_real], pseudo_sources(&coarse_groups).collect()) },
                Step::Gate { network: s },
            ],
        }],
        AblationMode::Full | AblationMode::No2 | AblationMode::No3 | AblationMode::No4 => {
            let last = schedule.plans.len();
            schedule
                .plans
                .iter()
                .map(|p| {
                    let group1 = if mode.contaminates() {
                        Source::Real { real: p.real_count, contaminated: p.contaminated_count }
                    } else {
                        all_real.clone()
                    };
                    let snet_groups = if mode == AblationMode::No3 && p.index == last {
                        coarse_groups.clone()
                    } else {
                        p.snet_train_groups.clone()
                    };
                    let mut steps = vec![
                        Step::Train {
                            network: r,
                            sources: with(vec![group1.clone()], pseudo_sources(&p.rnet_train_groups).collect()),
                        },
                        Step::Gate { network: r },
                    ];
                    steps.extend(p.rnet_predict_group.map(|g| Step::Predict { network: r, groups: vec![g] }));
                    steps.push(Step::Train {
                        network: s,
                        sources: with(vec![group1], pseudo_sources(&snet_groups).collect()),
                    });
                    steps.push(Step::Gate { network: s });
                    steps.extend(p.snet_predict_group.map(|g| Step::Predict { network: s, groups: vec![g] }));
                    IterationProgram { index: p.index, steps }
                })
                .collect()
        }
    };
    Ok(programs)
}

/// Training settings of a pipeline run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub seed: u64,
    pub policy: OptimizerPolicy,
    pub contamination: ContaminationSpec,
    pub mode: AblationMode,
    /// Random flips and right-angle rotations of training samples.
    pub augment: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            policy: OptimizerPolicy::default(),
            contamination: ContaminationSpec::default(),
            mode: AblationMode::Full,
            augment: true,
        }
    }
}

/// Training samples with their grouping, plus the validation set.
///
/// Group-1 samples carry real labels; every sample carries a coarse map when
/// the refinement network or coarse supervision is involved.
#[derive(Clone, Debug)]
pub struct Corpus<T> {
    pub train: Vec<Sample<T>>,
    pub val: Vec<Sample<T>>,
    pub partition: GroupPartition,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Corpus<T> {
    pub fn new(train: Vec<Sample<T>>, val: Vec<Sample<T>>, partition: GroupPartition) -> Result<Self> {
        let index: HashMap<String, usize> = train.iter().enumerate().map(|(i, s)| (s.id.clone(), i)).collect();
        for (g, members) in partition.groups.iter().enumerate() {
            for id in members {
                let s = index
                    .get(id)
                    .map(|&i| &train[i])
                    .ok_or_else(|| Error::Data(format!("group {} member {id} has no sample", g + 1)))?;
                if g + 1 == GroupPartition::REAL_GROUP && s.label_kind != LabelKind::Real {
                    return Err(Error::Data(format!("{id}: group 1 requires a real label")));
                }
            }
        }
        if partition.groups.first().is_none_or(Vec::is_empty) {
            return Err(Error::Data("group 1 is empty".into()));
        }
        Ok(Corpus { train, val, partition, index })
    }

    pub fn sample(&self, id: &str) -> Option<&Sample<T>> {
        self.index.get(id).map(|&i| &self.train[i])
    }

    fn members(&self, group: usize) -> impl Iterator<Item = &Sample<T>> {
        self.partition.group(group).iter().map(|id| &self.train[self.index[id]])
    }
}

/// A stored pseudo label and the model that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabel<T> {
    pub map: Array2<T>,
    pub group: usize,
    pub network: NetworkKind,
    /// Iteration in which the label was generated.
    pub iteration: usize,
    /// Iteration whose gated model produced it.
    pub model_iteration: usize,
}

/// Everything a run carries from one iteration to the next.
#[derive(Clone, Debug)]
pub struct PipelineState<T> {
    pub completed: usize,
    pub pseudo: BTreeMap<String, PseudoLabel<T>>,
    pub gate: CredibilityState,
}

/// Per-epoch training summary.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EpochStats {
    pub losses: LossAccumulator,
    pub batches: usize,
    pub last_lr: f64,
}

/// Position of one epoch inside a run, for learning-rate and seed derivation.
#[derive(Clone, Copy, Debug)]
pub struct EpochContext {
    pub seed: u64,
    pub iteration: usize,
    pub network: NetworkKind,
    /// Index of the training phase within the iteration.
    pub phase: usize,
    pub epoch: usize,
    pub augment: bool,
}

/// One epoch: every pseudo-pool batch (pseudo, coarse or contaminated
/// labels), then every real batch. Each pool is shuffled separately.
/// `step` counts optimizer steps since the start of the iteration and is
/// advanced in place.
pub fn epoch_loop<T: Scalar>(
    net: &mut dyn SaliencyNetwork<T>,
    pseudo: &[Sample<T>],
    real: &[Sample<T>],
    policy: &OptimizerPolicy,
    ctx: &EpochContext,
    step: &mut u64,
    log: &mut EventLog,
) -> Result<EpochStats> {
    if pseudo.is_empty() && real.is_empty() {
        return Err(Error::Misuse("epoch with no training samples".into()));
    }
    let mut stats = EpochStats::default();
    let base = [ctx.iteration as u64, net_code(ctx.network), ctx.phase as u64, ctx.epoch as u64];
    for (pool, samples) in [(Supervision::Pseudo, pseudo), (Supervision::Real, real)] {
        let pool_code = u64::from(pool == Supervision::Real);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
            ctx.seed,
            &[SEED_SHUFFLE, base[0], base[1], base[2], base[3], pool_code],
        ));
        order.shuffle(&mut rng);
        for (b, chunk) in order.chunks(policy.batch_size).enumerate() {
            let batch: Vec<Sample<T>> = chunk
                .iter()
                .map(|&i| {
                    if ctx.augment {
                        let s = derive_seed(
                            ctx.seed,
                            &[SEED_AUGMENT, base[0], base[1], base[2], base[3], pool_code, i as u64],
                        );
                        augment(&samples[i], s)
                    } else {
                        samples[i].clone()
                    }
                })
                .collect();
            let refs: Vec<&Sample<T>> = batch.iter().collect();
            *step += 1;
            let lr = policy.lr_at(ctx.iteration, ctx.epoch, *step);
            let loss = net.train_step(&refs, &policy.step_params(lr)).map_err(|e| match e {
                Error::Abort(msg) => Error::Abort(format!(
                    "{msg} (iteration {}, {}, epoch {}, batch {b})",
                    ctx.iteration,
                    ctx.network.as_str(),
                    ctx.epoch
                )),
                other => other,
            })?;
            let loss = loss.to_f64().unwrap_or(f64::NAN);
            if !loss.is_finite() {
                return Err(Error::Abort(format!(
                    "{} loss is {loss} (iteration {}, epoch {}, batch {b}, step {step})",
                    ctx.network.as_str(),
                    ctx.iteration,
                    ctx.epoch
                )));
            }
            stats.losses.add(pool, loss);
            stats.batches += 1;
            stats.last_lr = lr;
            let pool_name = match pool {
                Supervision::Pseudo => "pseudo",
                Supervision::Real => "real",
            };
            log.push(
                Event::new(ctx.iteration, "train", "batch")
                    .network(ctx.network.as_str())
                    .metric(loss)
                    .detail(pool_name),
            )?;
        }
    }
    Ok(stats)
}

/// The alternating training driver.
pub struct Pipeline<T: Scalar> {
    pub config: PipelineConfig,
    pub corpus: Corpus<T>,
    pub program: Vec<IterationProgram>,
    pub rnet: Box<dyn SaliencyNetwork<T>>,
    pub snet: Box<dyn SaliencyNetwork<T>>,
    pub state: PipelineState<T>,
    pub log: EventLog,
}

impl<T: Scalar> Pipeline<T> {
    pub fn new(
        config: PipelineConfig,
        corpus: Corpus<T>,
        rnet: Box<dyn SaliencyNetwork<T>>,
        snet: Box<dyn SaliencyNetwork<T>>,
        log: EventLog,
    ) -> Result<Self> {
        config.policy.validate()?;
        config.contamination.validate()?;
        if corpus.val.is_empty() {
            return Err(Error::Config("validation set is empty".into()));
        }
        let mode = config.mode;
        let needs_coarse = mode.uses_rnet() || mode == AblationMode::M1;
        if needs_coarse {
            if let Some(s) = corpus.train.iter().chain(&corpus.val).find(|s| s.coarse.is_none()) {
                return Err(Error::Data(format!("{}: coarse label required in mode {}", s.id, mode.as_str())));
            }
        }
        let program = build_program(mode, corpus.partition.num_groups(), corpus.partition.group(1).len())?;
        Ok(Pipeline {
            state: PipelineState {
                completed: 0,
                pseudo: BTreeMap::new(),
                gate: CredibilityState::new(mode.gate_enabled()),
            },
            config,
            corpus,
            program,
            rnet,
            snet,
            log,
        })
    }

    fn net(&self, n: NetworkKind) -> &dyn SaliencyNetwork<T> {
        match n {
            NetworkKind::Rnet => self.rnet.as_ref(),
            NetworkKind::Snet => self.snet.as_ref(),
        }
    }

    pub fn is_finished(&self) -> bool {
        self.state.completed >= self.program.len()
    }

    /// Runs every remaining iteration, calling `after_iteration` once each
    /// iteration's state is complete. Returning `Break` stops the run there,
    /// leaving it resumable. Returns whether the run finished.
    pub fn run(&mut self, mut after_iteration: impl FnMut(&mut Self) -> Result<ControlFlow<()>>) -> Result<bool> {
        if self.state.completed == 0 && self.log.is_empty() {
            self.log.push(Event::new(0, events::RUN_PHASE, "start").detail(format!(
                "mode={} seed={} iterations={}",
                self.config.mode.as_str(),
                self.config.seed,
                self.program.len()
            )))?;
        }
        while !self.is_finished() {
            let program = self.program[self.state.completed].clone();
            self.run_iteration(&program)?;
            if after_iteration(self)?.is_break() {
                self.log.flush()?;
                return Ok(false);
            }
        }
        let final_from = self.state.gate.best(NetworkKind::Snet).map_or(0, |b| b.iteration);
        self.log.push(
            Event::new(self.program.len(), events::RUN_PHASE, "finish")
                .network(NetworkKind::Snet.as_str())
                .detail(format!("final model from iteration {final_from}")),
        )?;
        self.log.flush()?;
        Ok(true)
    }

    /// Marks a continuation after a restart.
    pub fn mark_resume(&mut self) -> Result<()> {
        self.log.push(
            Event::new(self.state.completed, events::RUN_PHASE, events::RESUME_ACTION)
                .detail(format!("continuing after iteration {}", self.state.completed)),
        )
    }

    pub fn run_iteration(&mut self, program: &IterationProgram) -> Result<()> {
        if program.index != self.state.completed + 1 {
            return Err(Error::PipelineState(format!(
                "iteration {} requested after {} completed",
                program.index, self.state.completed
            )));
        }
        let mut steps_taken: HashMap<NetworkKind, u64> = HashMap::new();
        let mut phase = 0;
        for step in &program.steps {
            match step {
                Step::Train { network, sources } => {
                    let mut taken = steps_taken.get(network).copied().unwrap_or(0);
                    self.train_phase(program.index, *network, sources, phase, &mut taken)?;
                    steps_taken.insert(*network, taken);
                    phase += 1;
                }
                Step::Gate { network } => self.gate(program.index, *network)?,
                Step::Predict { network, groups } => self.predict(program.index, *network, groups)?,
            }
        }
        self.state.completed = program.index;
        self.log.flush()
    }

    /// Pseudo-pool samples, real samples and (group, kind, count) load records.
    #[allow(clippy::type_complexity)]
    fn collect_sources(
        &self,
        iteration: usize,
        network: NetworkKind,
        sources: &[Source],
    ) -> Result<(Vec<Sample<T>>, Vec<Sample<T>>, Vec<(usize, &'static str, usize)>)> {
        let mut pseudo = Vec::new();
        let mut real = Vec::new();
        let mut loads = Vec::new();
        for src in sources {
            match *src {
                Source::Real { real: n_real, contaminated } => {
                    let members: Vec<&Sample<T>> = self.corpus.members(GroupPartition::REAL_GROUP).collect();
                    if n_real + contaminated != members.len() {
                        return Err(Error::PipelineState(format!(
                            "group 1 has {} samples, plan expects {}",
                            members.len(),
                            n_real + contaminated
                        )));
                    }
                    for (i, s) in members.iter().enumerate() {
                        if i < n_real {
                            real.push((*s).clone());
                        } else {
                            let seed = derive_seed(self.config.seed, &[SEED_CONTAMINATE, iteration as u64, i as u64]);
                            pseudo.push(contaminate(s, &self.config.contamination.with_seed(seed))?);
                        }
                    }
                    loads.push((GroupPartition::REAL_GROUP, "real", n_real));
                    if contaminated > 0 {
                        loads.push((GroupPartition::REAL_GROUP, "contaminated", contaminated));
                    }
                }
                Source::Pseudo(g) => {
                    let mut n = 0;
                    for s in self.corpus.members(g) {
                        let label = self.state.pseudo.get(&s.id).ok_or_else(|| {
                            Error::PipelineState(format!(
                                "group {g}: no pseudo label for {} before training {}",
                                s.id,
                                network.as_str()
                            ))
                        })?;
                        let mut s = s.clone();
                        s.label = Some(label.map.clone());
                        s.label_kind = LabelKind::Pseudo;
                        pseudo.push(s);
                        n += 1;
                    }
                    loads.push((g, "pseudo", n));
                }
                Source::Coarse(g) => {
                    let mut n = 0;
                    for s in self.corpus.members(g) {
                        let coarse = s.coarse.clone().ok_or_else(|| {
                            Error::Data(format!("{}: coarse supervision requested but missing", s.id))
                        })?;
                        let mut s = s.clone();
                        s.label = Some(coarse);
                        s.label_kind = LabelKind::Coarse;
                        pseudo.push(s);
                        n += 1;
                    }
                    loads.push((g, "coarse", n));
                }
            }
        }
        Ok((pseudo, real, loads))
    }

    fn train_phase(
        &mut self,
        iteration: usize,
        network: NetworkKind,
        sources: &[Source],
        phase: usize,
        step: &mut u64,
    ) -> Result<()> {
        let (pseudo, real, loads) = self.collect_sources(iteration, network, sources)?;
        for (g, kind, n) in loads {
            self.log.push(
                Event::new(iteration, "train", "load").network(network.as_str()).group(g).metric(n as f64).detail(kind),
            )?;
        }
        let policy = self.config.policy.clone();
        for epoch in 0..policy.epochs {
            let ctx =
                EpochContext { seed: self.config.seed, iteration, network, phase, epoch, augment: self.config.augment };
            let net: &mut dyn SaliencyNetwork<T> = match network {
                NetworkKind::Rnet => self.rnet.as_mut(),
                NetworkKind::Snet => self.snet.as_mut(),
            };
            let stats = epoch_loop(net, &pseudo, &real, &policy, &ctx, step, &mut self.log)?;
            let mean = (stats.losses.pseudo_sum + stats.losses.real_sum) / stats.batches as f64;
            self.log.push(
                Event::new(iteration, "train", "epoch")
                    .network(network.as_str())
                    .metric(mean)
                    .detail(format!("epoch={epoch} lr={:e}", stats.last_lr)),
            )?;
        }
        Ok(())
    }

    fn gate(&mut self, iteration: usize, network: NetworkKind) -> Result<()> {
        let candidate = match network {
            NetworkKind::Rnet => self.rnet.as_ref(),
            NetworkKind::Snet => self.snet.as_ref(),
        };
        let d = credibility_gate(candidate, network, &self.corpus.val, &mut self.state.gate, iteration)?;
        let best = self.state.gate.best(network).expect("gate leaves a best record");
        let mut detail = format!("best={} from iteration {}", best.mae, best.iteration);
        if let Some(prev) = d.previous_best {
            detail.push_str(&format!(" previous={prev}"));
        }
        self.log.push(
            Event::new(iteration, "gate", d.action.as_str())
                .network(network.as_str())
                .metric(d.candidate_mae)
                .detail(detail),
        )
    }

    /// The model currently trusted for `network`: the gate's best, or the
    /// latest weights if the gate has not run yet.
    pub fn trusted_model(&self, network: NetworkKind) -> Result<Box<dyn SaliencyNetwork<T>>> {
        let mut model = self.net(network).box_clone();
        if let Some(best) = self.state.gate.best(network) {
            model.load(&best.params)?;
        }
        Ok(model)
    }

    /// The saliency network to export: the gate's best (the latest one when
    /// the gate is disabled).
    pub fn final_snet(&self) -> Result<Box<dyn SaliencyNetwork<T>>> {
        self.trusted_model(NetworkKind::Snet)
    }

    fn predict(&mut self, iteration: usize, network: NetworkKind, groups: &[usize]) -> Result<()> {
        let best =
            self.state.gate.best(network).ok_or_else(|| {
                Error::PipelineState(format!("{} predicts before passing the gate", network.as_str()))
            })?;
        let model_iteration = best.iteration;
        let model = self.trusted_model(network)?;
        for &g in groups {
            if g == GroupPartition::REAL_GROUP || g > self.corpus.partition.num_groups() {
                return Err(Error::PipelineState(format!("group {g} cannot be relabeled")));
            }
            let samples: Vec<&Sample<T>> = self.corpus.members(g).collect();
            let maps = model.predict(&samples)?;
            for (s, m) in samples.iter().zip(maps) {
                self.state.pseudo.insert(
                    s.id.clone(),
                    PseudoLabel { map: io::quantize_map(&m), group: g, network, iteration, model_iteration },
                );
            }
            self.log.push(
                Event::new(iteration, "predict", "label")
                    .network(network.as_str())
                    .group(g)
                    .metric(samples.len() as f64)
                    .detail(format!("model from iteration {model_iteration}")),
            )?;
        }
        Ok(())
    }
}
