//! Configuration, run store and the commands behind the command-line tool.

pub mod config;
pub mod store;

use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

pub use config::{config_diff, RunConfig, OUTPUT_ENV};
pub use store::{Manifest, RunLock};

use crate::data::io::{self, png_path};
use crate::data::synth::{self, SynthConfig};
use crate::data::{NetworkKind, Sample};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_corpus, MetricsReport};
use crate::nn::Checkpoint;
use crate::orchestrator::{self, build_schedule, derive_seed, Corpus, EventLog, Pipeline, PipelineConfig, Schedule};
use crate::rnet::{RNet, RNetConfig};
use crate::snet::{ReferenceSNet, SNetConfig, SaliencyNetwork};

/// Validates the dataset, builds groups and writes the manifest. A rerun
/// with the same configuration reproduces the manifest byte for byte and
/// keeps any training progress already recorded.
pub fn cmd_prepare(cfg: &RunConfig) -> Result<Manifest> {
    let run_dir = cfg.resolved_output();
    let _lock = RunLock::acquire(&run_dir)?;
    prepare_locked(cfg, &run_dir)
}

fn prepare_locked(cfg: &RunConfig, run_dir: &Path) -> Result<Manifest> {
    let existing = Manifest::read(run_dir)?;
    if let Some(m) = &existing {
        refuse_incompatible(&m.config, cfg)?;
    }
    let mut manifest = store::prepare(cfg, run_dir)?;
    if let Some(m) = existing {
        if m.partition != manifest.partition {
            return Err(Error::PipelineState("dataset changed since the run was prepared".into()));
        }
        manifest.progress = m.progress;
    }
    manifest.write(run_dir)?;
    log::info!(
        "prepared {}: {} training samples in {} groups, {} validation",
        run_dir.display(),
        manifest.dataset.train,
        manifest.partition.num_groups(),
        manifest.dataset.val
    );
    Ok(manifest)
}

fn refuse_incompatible(old: &RunConfig, new: &RunConfig) -> Result<()> {
    let diff = config_diff(old, new);
    if diff.is_empty() {
        return Ok(());
    }
    Err(Error::Config(format!("run directory was created with a different configuration:\n  {}", diff.join("\n  "))))
}

/// The iteration plan for `num_groups` groups and `num_real` real labels.
pub fn cmd_schedule(num_groups: usize, num_real: usize) -> Result<Schedule> {
    build_schedule(num_groups, num_real)
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Stop (resumably) once this many iterations are complete.
    pub stop_after: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub run_dir: PathBuf,
    pub completed: usize,
    pub finished: bool,
    pub final_snet: Option<PathBuf>,
}

pub fn rnet_config(cfg: &RunConfig) -> RNetConfig {
    RNetConfig {
        encoder_channels: cfg.networks.rnet_channels,
        input_size: cfg.networks.rnet_size,
        init_seed: derive_seed(cfg.seed, &[100]),
        ..RNetConfig::default()
    }
}

pub fn snet_config(cfg: &RunConfig) -> SNetConfig {
    SNetConfig {
        encoder_channels: cfg.networks.snet_channels,
        input_size: cfg.networks.snet_size,
        init_seed: derive_seed(cfg.seed, &[101]),
    }
}

pub fn pipeline_config(cfg: &RunConfig) -> PipelineConfig {
    PipelineConfig {
        seed: cfg.seed,
        policy: cfg.optimizer.clone(),
        contamination: cfg.contamination.spec(),
        mode: cfg.ablation_mode,
        augment: cfg.augment,
    }
}

/// Runs (or resumes) the alternating pipeline in the configured run directory.
pub fn cmd_train(cfg: &RunConfig, opts: &TrainOptions) -> Result<TrainSummary> {
    let run_dir = cfg.resolved_output();
    let _lock = RunLock::acquire(&run_dir)?;
    let mut manifest = match Manifest::read(&run_dir)? {
        Some(m) => {
            refuse_incompatible(&m.config, cfg)?;
            m
        }
        None => prepare_locked(cfg, &run_dir)?,
    };
    if manifest.progress.finished {
        log::info!("{}: run already finished", run_dir.display());
        return Ok(summary(&run_dir, &manifest));
    }
    let (train, val) = store::load_samples(cfg, &run_dir, &manifest.partition)?;
    let corpus = Corpus::new(train, val, manifest.partition.clone())?;
    let rnet: Box<dyn SaliencyNetwork<f32>> = Box::new(RNet::<f32>::new(rnet_config(cfg))?);
    let snet: Box<dyn SaliencyNetwork<f32>> = Box::new(ReferenceSNet::<f32>::new(snet_config(cfg))?);
    let events = run_dir.join(store::EVENTS_FILE);
    let state_dir = run_dir.join(store::STATE_DIR);
    let resuming = orchestrator::has_state(&state_dir);
    let mut pipeline = Pipeline::new(pipeline_config(cfg), corpus, rnet, snet, EventLog::in_memory())?;
    if pipeline.program != manifest.program {
        return Err(Error::PipelineState("manifest program does not match the configuration".into()));
    }
    if resuming {
        let keep = orchestrator::load_state(&state_dir, &mut pipeline)?;
        pipeline.log = EventLog::reopen(&events, keep)?;
        if !pipeline.is_finished() {
            pipeline.mark_resume()?;
        }
        log::info!("resuming {} after iteration {}", run_dir.display(), pipeline.state.completed);
    } else {
        pipeline.log = EventLog::create(&events)?;
    }

    let finished = pipeline.run(|p| {
        let t = p.state.completed;
        orchestrator::save_state(&state_dir, p)?;
        io::create_dir(&run_dir.join(store::CHECKPOINT_DIR))?;
        for (net, model) in [(NetworkKind::Rnet, &p.rnet), (NetworkKind::Snet, &p.snet)] {
            let rel = store::iteration_checkpoint(t, net);
            write_bytes(&run_dir.join(&rel), &model.save())?;
            manifest.progress.checkpoints.push(rel);
        }
        for (id, label) in p.state.pseudo.iter().filter(|(_, l)| l.iteration == t) {
            let dir = store::pseudo_dir(&run_dir, t, label.network);
            io::create_dir(&dir)?;
            io::save_gray(&png_path(&dir, id), &label.map)?;
        }
        manifest.progress.completed = t;
        manifest.progress.gate_decisions = p.state.gate.decisions.clone();
        manifest.write(&run_dir)?;
        log::info!("iteration {t}/{} complete", p.program.len());
        Ok(if opts.stop_after.is_some_and(|n| t >= n) { ControlFlow::Break(()) } else { ControlFlow::Continue(()) })
    })?;

    if finished {
        let rel = format!("{}/{}", store::CHECKPOINT_DIR, store::FINAL_SNET);
        io::create_dir(&run_dir.join(store::CHECKPOINT_DIR))?;
        write_bytes(&run_dir.join(&rel), &pipeline.final_snet()?.save())?;
        manifest.progress.final_snet = Some(rel);
        manifest.progress.finished = true;
        manifest.progress.gate_decisions = pipeline.state.gate.decisions.clone();
        manifest.write(&run_dir)?;
    }
    Ok(summary(&run_dir, &manifest))
}

fn summary(run_dir: &Path, m: &Manifest) -> TrainSummary {
    TrainSummary {
        run_dir: run_dir.to_path_buf(),
        completed: m.progress.completed,
        finished: m.progress.finished,
        final_snet: m.progress.final_snet.as_ref().map(|r| run_dir.join(r)),
    }
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Runs a saved saliency network over every PNG in `image_dir` and writes
/// 8-bit maps with mirrored file names into `out_dir`.
pub fn cmd_predict(checkpoint: &Path, image_dir: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let ck = Checkpoint::<f32>::read(checkpoint)?;
    let net = ReferenceSNet::<f32>::from_checkpoint(&ck)?;
    if !image_dir.is_dir() {
        return Err(Error::Data(format!("{} is not a directory", image_dir.display())));
    }
    let ids = io::list_ids(image_dir)?;
    let mut written = Vec::with_capacity(ids.len());
    if ids.is_empty() {
        log::warn!("no images in {}", image_dir.display());
        return Ok(written);
    }
    io::create_dir(out_dir)?;
    for id in ids {
        let sample = Sample::new(id.clone(), io::load_rgb::<f32>(&png_path(image_dir, &id))?);
        let map = net.predict(&[&sample])?.pop().expect("one map per sample");
        let path = png_path(out_dir, &id);
        io::save_gray(&path, &map)?;
        written.push(path);
    }
    Ok(written)
}

/// Scores predictions against ground truth; writes `<name>.json` and
/// `<name>_pr.csv` into `out_dir` when given.
pub fn cmd_eval(
    pred_dir: &Path,
    gt_dir: &Path,
    dataset: &str,
    out_dir: Option<&Path>,
    per_image: bool,
) -> Result<MetricsReport> {
    let (report, pairing) = evaluate_corpus(pred_dir, gt_dir, dataset, per_image)?;
    if let Some(dir) = out_dir {
        io::create_dir(dir)?;
        write_bytes(&dir.join(format!("{dataset}.json")), report.to_json().as_bytes())?;
        write_bytes(&dir.join(format!("{dataset}_pr.csv")), report.pr_csv().as_bytes())?;
    }
    if !pairing.missing_gt.is_empty() || !pairing.missing_pred.is_empty() {
        log::warn!(
            "{} predictions without ground truth, {} ground-truth maps without predictions",
            pairing.missing_gt.len(),
            pairing.missing_pred.len()
        );
    }
    Ok(report)
}

/// Writes a synthetic dataset in the layout `prepare` expects.
pub fn cmd_synth(root: &Path, cfg: &SynthConfig, num_real: usize, val_count: usize) -> Result<()> {
    if num_real > cfg.count {
        return Err(Error::Config(format!("{num_real} real labels requested for {} images", cfg.count)));
    }
    synth::write_dataset(root, cfg, num_real, val_count)
}
