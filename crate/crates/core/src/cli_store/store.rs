//! Run-directory layout, manifest, lock file and dataset loading.
//!
//! ```text
//! <run>/manifest.json                 config echo, partition, schedule, progress
//! <run>/events.jsonl                  event log
//! <run>/run.lock                      present while a process owns the run
//! <run>/coarse/<id>.png               generated coarse maps (training)
//! <run>/coarse/val/<id>.png           generated coarse maps (validation)
//! <run>/state/                        resumable snapshot of the last iteration
//! <run>/checkpoints/iter_XX_<net>.ckpt latest weights after iteration XX
//! <run>/checkpoints/snet_final.ckpt   exported saliency network
//! <run>/pseudo/iter_XX_<net>/<id>.png pseudo labels generated in iteration XX
//! ```

use std::collections::BTreeSet;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::data::io::{self, png_path};
use crate::data::{generate_coarse_label, partition_ids, GroupPartition, LabelKind, NetworkKind, Sample};
use crate::error::{Error, Result};
use crate::orchestrator::{build_program, GateDecision, IterationProgram};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const LOCK_FILE: &str = "run.lock";
pub const STATE_DIR: &str = "state";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const PSEUDO_DIR: &str = "pseudo";
pub const GENERATED_COARSE_DIR: &str = "coarse";
pub const FINAL_SNET: &str = "snet_final.ckpt";
pub const MANIFEST_FORMAT: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub train: usize,
    pub real_labels: usize,
    pub val: usize,
    pub generated_coarse: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub completed: usize,
    pub finished: bool,
    pub gate_decisions: Vec<GateDecision>,
    /// Checkpoint paths relative to the run directory.
    pub checkpoints: Vec<String>,
    pub final_snet: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    pub config: RunConfig,
    pub dataset: DatasetSummary,
    pub partition: GroupPartition,
    pub program: Vec<IterationProgram>,
    pub progress: Progress,
}

impl Manifest {
    pub fn read(run_dir: &Path) -> Result<Option<Self>> {
        let path = run_dir.join(MANIFEST_FILE);
        if !path.is_file() {
            return Ok(None);
        }
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let m: Manifest = serde_json::from_slice(&bytes)
            .map_err(|e| Error::PipelineState(format!("{}: unreadable manifest: {e}", path.display())))?;
        if m.format != MANIFEST_FORMAT {
            return Err(Error::PipelineState(format!("{}: unsupported manifest format {}", path.display(), m.format)));
        }
        Ok(Some(m))
    }

    pub fn write(&self, run_dir: &Path) -> Result<()> {
        let path = run_dir.join(MANIFEST_FILE);
        let tmp = path.with_extension("json.tmp");
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }
}

/// Exclusive ownership of a run directory, released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(run_dir: &Path) -> Result<Self> {
        io::create_dir(run_dir)?;
        let path = run_dir.join(LOCK_FILE);
        let mut f = OpenOptions::new().write(true).create_new(true).open(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::AlreadyExists {
                Error::PipelineState(format!(
                    "{} exists: another process is using this run (delete the file if none is)",
                    path.display()
                ))
            } else {
                Error::io(&path, e)
            }
        })?;
        writeln!(f, "{}", std::process::id()).map_err(|e| Error::io(&path, e))?;
        Ok(RunLock { path })
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn dataset_dirs(root: &Path) -> [PathBuf; 6] {
    [
        root.join(io::IMAGES_DIR),
        root.join(io::REAL_DIR),
        root.join(io::COARSE_DIR),
        root.join(io::VAL_DIR).join(io::IMAGES_DIR),
        root.join(io::VAL_DIR).join(io::VAL_LABELS_DIR),
        root.join(io::VAL_DIR).join(io::COARSE_DIR),
    ]
}

fn name_some(ids: &[String]) -> String {
    let shown: Vec<&str> = ids.iter().take(5).map(String::as_str).collect();
    let more = ids.len().saturating_sub(shown.len());
    if more > 0 {
        format!("{} and {more} more", shown.join(", "))
    } else {
        shown.join(", ")
    }
}

/// Where a sample's coarse map lives: the dataset, else the run's generated maps.
fn coarse_path(cfg: &RunConfig, run_dir: &Path, id: &str, val: bool) -> Option<PathBuf> {
    let d = dataset_dirs(&cfg.data.root);
    let own = png_path(if val { &d[5] } else { &d[2] }, id);
    if own.is_file() {
        return Some(own);
    }
    let gen_dir = run_dir.join(GENERATED_COARSE_DIR);
    let generated = png_path(&if val { gen_dir.join("val") } else { gen_dir }, id);
    generated.is_file().then_some(generated)
}

fn needs_coarse(cfg: &RunConfig) -> bool {
    use crate::orchestrator::AblationMode;
    cfg.ablation_mode.uses_rnet() || cfg.ablation_mode == AblationMode::M1
}

/// Checks the dataset layout, generates missing coarse maps when enabled,
/// partitions the samples and returns a fresh manifest.
pub fn prepare(cfg: &RunConfig, run_dir: &Path) -> Result<Manifest> {
    cfg.validate()?;
    let d = dataset_dirs(&cfg.data.root);
    let images = io::list_ids(&d[0])?;
    if images.is_empty() {
        return Err(Error::Data(format!("no images in {}", d[0].display())));
    }
    if !d[1].is_dir() {
        return Err(Error::Data(format!("missing real-label directory {}", d[1].display())));
    }
    let image_set: BTreeSet<&String> = images.iter().collect();
    let real = io::list_ids(&d[1])?;
    let orphans: Vec<String> = real.iter().filter(|id| !image_set.contains(id)).cloned().collect();
    if !orphans.is_empty() {
        return Err(Error::Data(format!("real labels without images: {}", name_some(&orphans))));
    }
    let real_set: BTreeSet<&String> = real.iter().collect();
    let val_images = io::list_ids(&d[3])?;
    if val_images.is_empty() {
        return Err(Error::Config(format!("no validation images in {}", d[3].display())));
    }
    let val_labels: BTreeSet<String> = io::list_ids(&d[4])?.into_iter().collect();
    let unlabeled: Vec<String> = val_images.iter().filter(|id| !val_labels.contains(*id)).cloned().collect();
    if !unlabeled.is_empty() {
        return Err(Error::Data(format!("validation images without labels: {}", name_some(&unlabeled))));
    }

    let mut generated = 0;
    if needs_coarse(cfg) {
        for (ids, val, img_dir) in [(&images, false, &d[0]), (&val_images, true, &d[3])] {
            let missing: Vec<String> =
                ids.iter().filter(|id| coarse_path(cfg, run_dir, id, val).is_none()).cloned().collect();
            if missing.is_empty() {
                continue;
            }
            if !cfg.data.generate_coarse {
                return Err(Error::Data(format!(
                    "coarse labels missing for {} (enable data.generate_coarse to compute them)",
                    name_some(&missing)
                )));
            }
            let out =
                if val { run_dir.join(GENERATED_COARSE_DIR).join("val") } else { run_dir.join(GENERATED_COARSE_DIR) };
            io::create_dir(&out)?;
            for id in &missing {
                let img = io::load_rgb::<f64>(&png_path(img_dir, id))?;
                io::save_gray(&png_path(&out, id), &generate_coarse_label(&img))?;
            }
            generated += missing.len();
        }
    }

    let pairs: Vec<(&str, bool)> = images.iter().map(|id| (id.as_str(), real_set.contains(id))).collect();
    let partition = partition_ids(&pairs, cfg.data.num_groups, cfg.data.num_real, cfg.seed)?;
    let program = build_program(cfg.ablation_mode, cfg.data.num_groups, partition.group(1).len())?;
    Ok(Manifest {
        format: MANIFEST_FORMAT,
        config: cfg.clone(),
        dataset: DatasetSummary {
            train: images.len(),
            real_labels: real.len(),
            val: val_images.len(),
            generated_coarse: generated,
        },
        partition,
        program,
        progress: Progress::default(),
    })
}

/// Loads every training and validation sample named by the manifest.
pub fn load_samples(
    cfg: &RunConfig,
    run_dir: &Path,
    partition: &GroupPartition,
) -> Result<(Vec<Sample<f32>>, Vec<Sample<f32>>)> {
    let d = dataset_dirs(&cfg.data.root);
    let with_coarse = needs_coarse(cfg);
    let group1: BTreeSet<&String> = partition.group(1).iter().collect();
    let load = |id: &str, val: bool, real_label: Option<PathBuf>| -> Result<Sample<f32>> {
        let img_dir = if val { &d[3] } else { &d[0] };
        let mut s = Sample::new(id, io::load_rgb(&png_path(img_dir, id))?);
        if let Some(p) = real_label {
            s = s.with_label(io::load_mask(&p)?, LabelKind::Real);
        } else {
            s.label_kind = LabelKind::Coarse;
        }
        if with_coarse {
            let p = coarse_path(cfg, run_dir, id, val)
                .ok_or_else(|| Error::Data(format!("{id}: coarse label missing; rerun prepare")))?;
            s = s.with_coarse(io::load_gray(&p)?);
        }
        s.validate()?;
        Ok(s)
    };
    let mut train = Vec::with_capacity(partition.len());
    for (g, members) in partition.groups.iter().enumerate() {
        for id in members {
            let label = (g == 0 && group1.contains(id)).then(|| png_path(&d[1], id));
            let mut s = load(id, false, label)?;
            s.source_group = g + 1;
            train.push(s);
        }
    }
    let mut val = Vec::new();
    for id in io::list_ids(&d[3])? {
        let label = png_path(&d[4], &id);
        val.push(load(&id, true, Some(label))?);
    }
    Ok((train, val))
}

pub fn iteration_checkpoint(iteration: usize, net: NetworkKind) -> String {
    format!("{CHECKPOINT_DIR}/iter_{iteration:02}_{}.ckpt", net.as_str())
}

pub fn pseudo_dir(run_dir: &Path, iteration: usize, net: NetworkKind) -> PathBuf {
    run_dir.join(PSEUDO_DIR).join(format!("iter_{iteration:02}_{}", net.as_str()))
}
