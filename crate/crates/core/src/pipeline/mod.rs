//! Training orchestration: the interleaved predictor/policy loop, success
//! tracking, checkpoints, evaluation and run metrics.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::affordance::AffordanceConfig;
use crate::error::{Error, Result};
use crate::policy::{AblationFlags, PolicyConfig, PpoConfig};
use crate::simworld::{RewardWeights, TaskId, TaskSpec};

mod checkpoint;
mod eval;
mod train;

pub use checkpoint::{list_checkpoints, select_checkpoint, Checkpoint, CheckpointInfo};
pub use eval::{evaluate, evaluate_checkpoint, evaluate_rates};
pub use train::{object_cloud, object_family, train, train_plain, Phase, PlainRun, TrainRun, Trainer};

/// Episodes remembered per object for the success rate weighting the
/// predictor loss.
pub const SUCCESS_WINDOW: usize = 32;

/// Optional per-task overrides of the environment defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvOverrides {
    pub horizon: Option<usize>,
    pub target: Option<f64>,
    pub terminate_on_success: Option<bool>,
    pub reward: Option<RewardWeights>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "d_episodes")]
    pub episodes_per_object: usize,
    #[serde(default = "d_seeds")]
    pub seeds: usize,
}

fn d_episodes() -> usize {
    20
}
fn d_seeds() -> usize {
    8
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            episodes_per_object: d_episodes(),
            seeds: d_seeds(),
        }
    }
}

/// Everything a run depends on. Every field except `task` has a default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub task: TaskId,
    /// Training objects `k`.
    #[serde(default = "d_objects")]
    pub num_objects: usize,
    #[serde(default = "d_test_objects")]
    pub test_objects: usize,
    /// Parallel environments per training object `n`.
    #[serde(default = "d_replicas")]
    pub replicas: usize,
    /// Environment transitions summed over all parallel environments.
    #[serde(default = "d_total")]
    pub total_timesteps: u64,
    #[serde(default = "d_ckpt")]
    pub checkpoint_period: u64,
    /// Transitions between contact-predictor updates.
    #[serde(default = "d_update")]
    pub update_period: u64,
    /// Optimizer steps per predictor update.
    #[serde(default = "d_cp_steps")]
    pub cp_steps: usize,
    #[serde(default = "d_cloud")]
    pub cloud_points: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub flags: AblationFlags,
    #[serde(default)]
    pub env: EnvOverrides,
    #[serde(default)]
    pub affordance: AffordanceConfig,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub ppo: PpoConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

fn d_objects() -> usize {
    8
}
fn d_test_objects() -> usize {
    4
}
fn d_replicas() -> usize {
    2
}
fn d_total() -> u64 {
    160_000
}
fn d_ckpt() -> u64 {
    3_200
}
fn d_update() -> u64 {
    1_000
}
fn d_cp_steps() -> usize {
    8
}
fn d_cloud() -> usize {
    crate::geometry::DEFAULT_CLOUD_SIZE
}

impl TrainConfig {
    pub fn new(task: TaskId) -> Self {
        Self {
            task,
            num_objects: d_objects(),
            test_objects: d_test_objects(),
            replicas: d_replicas(),
            total_timesteps: d_total(),
            checkpoint_period: d_ckpt(),
            update_period: d_update(),
            cp_steps: d_cp_steps(),
            cloud_points: d_cloud(),
            seed: 0,
            flags: AblationFlags::default(),
            env: EnvOverrides::default(),
            affordance: AffordanceConfig::default(),
            policy: PolicyConfig::default(),
            ppo: PpoConfig::default(),
            eval: EvalConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// FNV-1a over the canonical TOML form.
    pub fn hash(&self) -> u64 {
        fnv1a(self.to_toml().as_bytes())
    }

    pub fn task_spec(&self) -> TaskSpec {
        let mut spec = TaskSpec::for_task(self.task);
        if let Some(h) = self.env.horizon {
            spec.horizon = h;
        }
        if let Some(t) = self.env.target {
            spec.target = t;
        }
        if let Some(t) = self.env.terminate_on_success {
            spec.terminate_on_success = t;
        }
        if let Some(w) = self.env.reward {
            spec.reward = w;
        }
        spec
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_objects", self.num_objects as u64),
            ("replicas", self.replicas as u64),
            ("total_timesteps", self.total_timesteps),
            ("checkpoint_period", self.checkpoint_period),
            ("update_period", self.update_period),
            ("cp_steps", self.cp_steps as u64),
            ("cloud_points", self.cloud_points as u64),
            ("eval.episodes_per_object", self.eval.episodes_per_object as u64),
            ("eval.seeds", self.eval.seeds as u64),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        self.task_spec().validate()?;
        self.affordance.validate()?;
        self.policy.validate()?;
        self.ppo.validate()
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Independent seed for a named stream derived from the master seed.
pub(crate) fn stream_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Sliding window of recent episode outcomes per object.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuccessTracker {
    window: usize,
    outcomes: Vec<VecDeque<bool>>,
}

impl SuccessTracker {
    pub fn new(objects: usize, window: usize) -> Self {
        Self {
            window: window.max(1),
            outcomes: vec![VecDeque::new(); objects],
        }
    }

    pub fn record(&mut self, object: usize, success: bool) {
        let q = &mut self.outcomes[object];
        if q.len() == self.window {
            q.pop_front();
        }
        q.push_back(success);
    }

    /// `sr_t^i`; zero before the first episode.
    pub fn rate(&self, object: usize) -> f64 {
        let q = &self.outcomes[object];
        if q.is_empty() {
            return 0.0;
        }
        q.iter().filter(|&&s| s).count() as f64 / q.len() as f64
    }

    pub fn rates(&self) -> Vec<f64> {
        (0..self.outcomes.len()).map(|i| self.rate(i)).collect()
    }

    pub fn episodes(&self, object: usize) -> usize {
        self.outcomes[object].len()
    }
}

/// ASR and MP over one split, in percent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub asr: f64,
    pub mp: f64,
    pub per_object: Vec<f64>,
}

impl SplitMetrics {
    /// From per-object success rates in `[0, 1]`. An object mastered half
    /// the time or more counts toward MP.
    pub fn from_rates(rates: &[f64]) -> Result<Self> {
        if rates.is_empty() {
            return Err(Error::Empty("metrics over no objects".into()));
        }
        if rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::InvalidArgument("success rates must lie in [0, 1]".into()));
        }
        let n = rates.len() as f64;
        let asr = rates.iter().sum::<f64>() / n * 100.0;
        let mp = rates.iter().filter(|&&r| r >= 0.5).count() as f64 / n * 100.0;
        Ok(Self {
            asr,
            mp,
            per_object: rates.to_vec(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub train: SplitMetrics,
    pub test: Option<SplitMetrics>,
    /// Mean A2O concentration over training objects.
    pub concentration: Option<f64>,
}

/// Shannon entropy of `scores` normalized to sum to one. An all-zero
/// vector is treated as uniform.
pub fn concentration_stat(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Empty("concentration of no scores".into()));
    }
    if scores.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
        return Err(Error::InvalidArgument("scores must be finite and non-negative".into()));
    }
    let total: f64 = scores.iter().sum();
    if total == 0.0 {
        return Ok((scores.len() as f64).ln());
    }
    Ok(-scores
        .iter()
        .filter(|&&s| s > 0.0)
        .map(|s| {
            let p = s / total;
            p * p.ln()
        })
        .sum::<f64>())
}

/// One row of the metrics timeline, written at every checkpoint.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub updates: u64,
    /// Percent, from the success windows of the training objects.
    pub train_asr: f64,
    /// Mean return of episodes finished since the previous record.
    pub mean_return: f64,
    pub episodes: u64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub cp_loss: Option<f64>,
    pub concentration: Option<f64>,
}

impl MetricsRecord {
    pub const CSV_HEADER: &'static str =
        "step,updates,train_asr,mean_return,episodes,policy_loss,value_loss,entropy,clip_fraction,cp_loss,concentration";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.step,
            self.updates,
            self.train_asr,
            self.mean_return,
            self.episodes,
            self.policy_loss,
            self.value_loss,
            self.entropy,
            self.clip_fraction,
            opt(self.cp_loss),
            opt(self.concentration)
        )
    }

    pub fn parse_csv_row(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 11 {
            return Err(Error::Format(format!("metrics row has {} fields, expected 11", f.len())));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::Format(format!("bad number {s:?} in metrics row")))
        };
        let int = |s: &str| -> Result<u64> {
            s.parse().map_err(|_| Error::Format(format!("bad integer {s:?} in metrics row")))
        };
        let opt = |s: &str| -> Result<Option<f64>> { if s.is_empty() { Ok(None) } else { num(s).map(Some) } };
        Ok(Self {
            step: int(f[0])?,
            updates: int(f[1])?,
            train_asr: num(f[2])?,
            mean_return: num(f[3])?,
            episodes: int(f[4])?,
            policy_loss: num(f[5])?,
            value_loss: num(f[6])?,
            entropy: num(f[7])?,
            clip_fraction: num(f[8])?,
            cp_loss: opt(f[9])?,
            concentration: opt(f[10])?,
        })
    }
}

#[cfg(test)]
mod tests;
