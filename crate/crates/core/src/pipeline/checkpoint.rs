//! Checkpoint directories:
//!
//! ```text
//! manifest.txt        format line, step, update count, train ASR, config hash
//! config.toml         the run's configuration
//! policy.bin cp.bin   parameter streams
//! policy_adam.bin     optimizer moments (first moments, then second)
//! cp_adam.bin
//! best_policy.bin     parameters of the best checkpoint so far
//! best_cp.bin
//! state.json          environments, buffers, trackers, RNG states
//! ```

use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::train::{snapshots, Accumulator, Best, Trainer};
use super::{MetricsRecord, SuccessTracker, TrainConfig};
use crate::affordance::{ContactBuffer, ContactPredictorParams};
use crate::diffcore::{read_tensors, write_tensors, AdamState, ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::policy::PolicyParams;
use crate::simworld::EnvBatch;

const FORMAT_LINE: &str = "affordloop checkpoint 1";

#[derive(Serialize, Deserialize)]
struct State {
    envs: EnvBatch,
    running: Vec<f64>,
    buffers: Vec<[ContactBuffer; 2]>,
    tracker: SuccessTracker,
    policy_rng: ChaCha8Rng,
    step: u64,
    updates: u64,
    timeline: Vec<MetricsRecord>,
    acc: Accumulator,
    policy_adam_step: u64,
    cp_adam_step: u64,
    best: Option<(f64, u64)>,
}

fn write_params(path: &Path, tensors: &[&Tensor]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_tensors(&mut w, tensors)?;
    Ok(())
}

fn read_params(path: &Path) -> Result<Vec<Tensor>> {
    let f = fs::File::open(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    read_tensors(&mut BufReader::new(f))
}

fn write_adam(path: &Path, adam: &AdamState) -> Result<()> {
    let all: Vec<&Tensor> = adam.m.iter().chain(&adam.v).collect();
    write_params(path, &all)
}

fn read_adam(path: &Path, into: &mut AdamState, step: u64) -> Result<()> {
    let mut t = read_params(path)?;
    if t.len() != 2 * into.m.len() {
        return Err(Error::Format(format!("{}: wrong number of moment tensors", path.display())));
    }
    let v = t.split_off(into.m.len());
    if t.iter().chain(&v).zip(into.m.iter().chain(&into.v)).any(|(a, b)| a.dim() != b.dim()) {
        return Err(Error::Format(format!("{}: moment shapes differ from parameters", path.display())));
    }
    into.m = t;
    into.v = v;
    into.step = step;
    Ok(())
}

/// Summary read from a checkpoint manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointInfo {
    pub dir: PathBuf,
    pub step: u64,
    pub updates: u64,
    pub train_asr: f64,
    pub config_hash: u64,
}

impl CheckpointInfo {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.txt");
        let text = fs::read_to_string(&path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let mut lines = text.lines();
        if lines.next() != Some(FORMAT_LINE) {
            return Err(Error::Format(format!("{}: not a checkpoint manifest", path.display())));
        }
        let (mut step, mut updates, mut asr, mut hash) = (None, None, None, None);
        for (i, line) in lines.enumerate() {
            let bad = || Error::Format(format!("{}:{}: malformed line {line:?}", path.display(), i + 2));
            let (key, value) = line.split_once(' ').ok_or_else(bad)?;
            match key {
                "step" => step = Some(value.parse().map_err(|_| bad())?),
                "updates" => updates = Some(value.parse().map_err(|_| bad())?),
                "train_asr" => asr = Some(value.parse().map_err(|_| bad())?),
                "config_hash" => hash = Some(u64::from_str_radix(value, 16).map_err(|_| bad())?),
                _ => return Err(bad()),
            }
        }
        let missing = |k: &str| Error::Format(format!("{}: missing {k}", path.display()));
        Ok(Self {
            dir: dir.to_path_buf(),
            step: step.ok_or_else(|| missing("step"))?,
            updates: updates.ok_or_else(|| missing("updates"))?,
            train_asr: asr.ok_or_else(|| missing("train_asr"))?,
            config_hash: hash.ok_or_else(|| missing("config_hash"))?,
        })
    }
}

/// Trained parameters and the configuration that produced them.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub info: CheckpointInfo,
    pub config: TrainConfig,
    pub policy: PolicyParams,
    pub cp: ContactPredictorParams,
}

fn read_config(dir: &Path, hash: u64) -> Result<TrainConfig> {
    let text = fs::read_to_string(dir.join("config.toml"))?;
    let config = TrainConfig::from_toml(&text)?;
    if config.hash() != hash {
        return Err(Error::Format(format!(
            "{}: configuration does not match the manifest hash",
            dir.display()
        )));
    }
    Ok(config)
}

impl Checkpoint {
    pub fn load(dir: &Path) -> Result<Self> {
        let info = CheckpointInfo::read(dir)?;
        let config = read_config(dir, info.config_hash)?;
        let policy = PolicyParams::from_tensors(read_params(&dir.join("policy.bin"))?, &config.policy)?;
        let cp = ContactPredictorParams::from_tensors(read_params(&dir.join("cp.bin"))?)?;
        Ok(Self {
            info,
            config,
            policy,
            cp,
        })
    }
}

/// Checkpoints under `run_dir/checkpoints`, in step order.
pub fn list_checkpoints(run_dir: &Path) -> Result<Vec<CheckpointInfo>> {
    let root = run_dir.join("checkpoints");
    let entries = fs::read_dir(&root).map_err(|e| Error::Format(format!("{}: {e}", root.display())))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry?.path();
        if path.join("manifest.txt").is_file() {
            out.push(CheckpointInfo::read(&path)?);
        }
    }
    out.sort_by_key(|c| c.step);
    Ok(out)
}

/// Highest training ASR; ties go to the later checkpoint.
pub fn select_checkpoint(run_dir: &Path) -> Result<CheckpointInfo> {
    list_checkpoints(run_dir)?
        .into_iter()
        .reduce(|best, c| if c.train_asr >= best.train_asr { c } else { best })
        .ok_or_else(|| Error::Empty(format!("no checkpoints under {}", run_dir.display())))
}

impl Trainer {
    /// Writes the complete training state to `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let asr = self.timeline.last().map_or(0.0, |r| r.train_asr);
        fs::write(
            dir.join("manifest.txt"),
            format!(
                "{FORMAT_LINE}\nstep {}\nupdates {}\ntrain_asr {}\nconfig_hash {:016x}\n",
                self.step,
                self.updates,
                asr,
                self.config.hash()
            ),
        )?;
        fs::write(dir.join("config.toml"), self.config.to_toml())?;
        write_params(&dir.join("policy.bin"), &self.policy.tensors())?;
        write_params(&dir.join("cp.bin"), &self.cp.tensors())?;
        write_adam(&dir.join("policy_adam.bin"), &self.policy_adam)?;
        write_adam(&dir.join("cp_adam.bin"), &self.cp_adam)?;
        if let Some(b) = &self.best {
            write_params(&dir.join("best_policy.bin"), &b.policy.tensors())?;
            write_params(&dir.join("best_cp.bin"), &b.cp.tensors())?;
        }
        let state = State {
            envs: self.envs.clone(),
            running: self.running.clone(),
            buffers: self.buffers.clone(),
            tracker: self.tracker.clone(),
            policy_rng: self.policy_rng.clone(),
            step: self.step,
            updates: self.updates,
            timeline: self.timeline.clone(),
            acc: self.acc,
            policy_adam_step: self.policy_adam.step,
            cp_adam_step: self.cp_adam.step,
            best: self.best.as_ref().map(|b| (b.train_asr, b.step)),
        };
        let json = serde_json::to_vec(&state).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(dir.join("state.json"), json)?;
        Ok(())
    }

    /// Restores a trainer saved with [`Trainer::save`]; continuing from it
    /// reproduces the original run exactly.
    pub fn load(dir: &Path) -> Result<Self> {
        let info = CheckpointInfo::read(dir)?;
        let config = read_config(dir, info.config_hash)?;
        let mut t = Trainer::new(config)?;
        let bytes = fs::read(dir.join("state.json"))?;
        let s: State = serde_json::from_slice(&bytes).map_err(|e| Error::Format(format!("state.json: {e}")))?;
        if s.envs.len() != t.envs.len() || s.buffers.len() != t.buffers.len() || s.running.len() != t.running.len() {
            return Err(Error::Format("saved state does not match the configuration".into()));
        }
        t.policy = PolicyParams::from_tensors(read_params(&dir.join("policy.bin"))?, &t.config.policy)?;
        t.cp = ContactPredictorParams::from_tensors(read_params(&dir.join("cp.bin"))?)?;
        read_adam(&dir.join("policy_adam.bin"), &mut t.policy_adam, s.policy_adam_step)?;
        read_adam(&dir.join("cp_adam.bin"), &mut t.cp_adam, s.cp_adam_step)?;
        t.best = match s.best {
            Some((train_asr, step)) => Some(Best {
                train_asr,
                step,
                policy: PolicyParams::from_tensors(read_params(&dir.join("best_policy.bin"))?, &t.config.policy)?,
                cp: ContactPredictorParams::from_tensors(read_params(&dir.join("best_cp.bin"))?)?,
            }),
            None => None,
        };
        t.envs = s.envs;
        t.running = s.running;
        t.buffers = s.buffers;
        t.tracker = s.tracker;
        t.policy_rng = s.policy_rng;
        t.step = s.step;
        t.updates = s.updates;
        t.timeline = s.timeline;
        t.acc = s.acc;
        t.snapshots = snapshots(&t.cp, &t.clouds)?;
        Ok(t)
    }
}
