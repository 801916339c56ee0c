//! Iteration-boundary snapshots of a pipeline, for resuming interrupted runs.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CredibilityState, Pipeline, PseudoLabel};
use crate::autograd::Tensor;
use crate::data::NetworkKind;
use crate::error::{Error, Result};
use crate::nn::Checkpoint;
use crate::Scalar;

const STATE_FILE: &str = "state.json";
const PSEUDO_FILE: &str = "pseudo.bin";

#[derive(Serialize, Deserialize)]
struct PseudoMeta {
    id: String,
    group: usize,
    network: NetworkKind,
    iteration: usize,
    model_iteration: usize,
}

#[derive(Serialize, Deserialize)]
struct StateFile {
    completed: usize,
    log_len: usize,
    gate: CredibilityState,
    pseudo: Vec<PseudoMeta>,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn net_file(n: NetworkKind, suffix: &str) -> String {
    format!("{}_{suffix}.ckpt", n.as_str())
}

/// Writes the pipeline state into `dir`. The state file is written last, so
/// a directory with a state file always holds a complete snapshot.
pub fn save_state<T: Scalar>(dir: &Path, p: &Pipeline<T>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_atomic(&dir.join(net_file(NetworkKind::Rnet, "latest")), &p.rnet.save())?;
    write_atomic(&dir.join(net_file(NetworkKind::Snet, "latest")), &p.snet.save())?;
    for n in [NetworkKind::Rnet, NetworkKind::Snet] {
        if let Some(best) = p.state.gate.best(n) {
            write_atomic(&dir.join(net_file(n, "best")), &best.params)?;
        }
    }
    let mut maps = Checkpoint::<T> { config: String::new(), arrays: Vec::with_capacity(p.state.pseudo.len()) };
    let mut meta = Vec::with_capacity(p.state.pseudo.len());
    for (id, l) in &p.state.pseudo {
        let (h, w) = l.map.dim();
        let t = l.map.clone().into_shape_with_order((1, 1, h, w)).expect("contiguous map");
        maps.arrays.push((id.clone(), t));
        meta.push(PseudoMeta {
            id: id.clone(),
            group: l.group,
            network: l.network,
            iteration: l.iteration,
            model_iteration: l.model_iteration,
        });
    }
    write_atomic(&dir.join(PSEUDO_FILE), &maps.to_bytes())?;
    let state =
        StateFile { completed: p.state.completed, log_len: p.log.len(), gate: p.state.gate.clone(), pseudo: meta };
    write_atomic(&dir.join(STATE_FILE), serde_json::to_string_pretty(&state)?.as_bytes())
}

/// Whether `dir` holds a complete snapshot.
pub fn has_state(dir: &Path) -> bool {
    dir.join(STATE_FILE).is_file()
}

/// Restores networks, gate records and pseudo labels from `dir`. Returns the
/// number of event-log records that belong to the snapshot.
pub fn load_state<T: Scalar>(dir: &Path, p: &mut Pipeline<T>) -> Result<usize> {
    let state: StateFile = serde_json::from_slice(&read(&dir.join(STATE_FILE))?)?;
    if state.completed > p.program.len() {
        return Err(Error::PipelineState(format!(
            "snapshot reports {} completed iterations, program has {}",
            state.completed,
            p.program.len()
        )));
    }
    p.rnet.load(&read(&dir.join(net_file(NetworkKind::Rnet, "latest")))?)?;
    p.snet.load(&read(&dir.join(net_file(NetworkKind::Snet, "latest")))?)?;
    let mut gate = state.gate;
    for n in [NetworkKind::Rnet, NetworkKind::Snet] {
        let slot = match n {
            NetworkKind::Rnet => &mut gate.best_rnet,
            NetworkKind::Snet => &mut gate.best_snet,
        };
        if let Some(best) = slot {
            best.params = read(&dir.join(net_file(n, "best")))?;
        }
    }
    let maps = Checkpoint::<T>::from_bytes(&read(&dir.join(PSEUDO_FILE))?)?;
    let mut pseudo = std::collections::BTreeMap::new();
    for m in state.pseudo {
        let t: &Tensor<T> = maps
            .get(&m.id)
            .ok_or_else(|| Error::PipelineState(format!("snapshot lacks the pseudo label of {}", m.id)))?;
        let (_, _, h, w) = t.dim();
        let map = t.clone().into_shape_with_order((h, w)).expect("single-channel map");
        pseudo.insert(
            m.id,
            PseudoLabel {
                map,
                group: m.group,
                network: m.network,
                iteration: m.iteration,
                model_iteration: m.model_iteration,
            },
        );
    }
    p.state.completed = state.completed;
    p.state.gate = gate;
    p.state.pseudo = pseudo;
    Ok(state.log_len)
}
