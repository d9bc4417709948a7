use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{concentration_stat, stream_seed, MetricsRecord, SuccessTracker, TrainConfig, SUCCESS_WINDOW};
use crate::affordance::{
    compute_dgt, cp_forward, cp_update, dgt_tensor, AffordanceMap, ContactBuffer, ContactPredictorParams, CpSample,
};
use crate::diffcore::{AdamConfig, AdamState, Tensor};
use crate::error::{Error, Result};
use crate::policy::{
    ppo_update, rollout, AblationFlags, AffordanceSnapshot, ObsLayout, PolicyParams, PpoStats, RolloutContext,
    RolloutOutput,
};
use crate::simworld::{generate_split_family, ContactChannel, EnvBatch, ObjectCloud, ObjectFamily, TaskSpec};

pub(crate) const S_FAMILY: u64 = 1;
pub(crate) const S_ENV: u64 = 2;
pub(crate) const S_POLICY_INIT: u64 = 3;
pub(crate) const S_POLICY_RNG: u64 = 4;
pub(crate) const S_CP_INIT: u64 = 5;
pub(crate) const S_BUFFER: u64 = 6;
pub(crate) const S_CLOUD: u64 = 7;

/// Stage of a run. End-to-end runs stay in `Joint`; staged runs go
/// `Policy` → `Predictor` → `FineTune` over half, a quarter and a quarter
/// of the budget.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Joint,
    Policy,
    Predictor,
    FineTune,
}

impl Phase {
    pub fn trains_policy(self) -> bool {
        self != Phase::Predictor
    }

    pub fn trains_predictor(self) -> bool {
        matches!(self, Phase::Joint | Phase::Predictor)
    }
}

/// The task's object family with its train/test split.
pub fn object_family(config: &TrainConfig) -> Result<ObjectFamily> {
    generate_split_family(
        config.task,
        config.num_objects,
        config.test_objects,
        stream_seed(config.seed, S_FAMILY),
    )
}

/// The fixed point cloud of `object` used throughout a run.
pub fn object_cloud(config: &TrainConfig, object: &crate::simworld::ArticulatedObject) -> Result<ObjectCloud> {
    ObjectCloud::sample(
        object,
        config.cloud_points,
        stream_seed(config.seed, S_CLOUD) ^ object.id as u64,
    )
}

pub(crate) fn snapshots(cp: &ContactPredictorParams, clouds: &[ObjectCloud]) -> Result<Vec<AffordanceSnapshot>> {
    clouds
        .iter()
        .map(|c| AffordanceSnapshot::new(cp_forward(cp, &c.cloud)?, c))
        .collect()
}

/// Running sums between two timeline records.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub(crate) struct Accumulator {
    pub return_sum: f64,
    pub episodes: u64,
    pub ppo: PpoStats,
    pub ppo_updates: u64,
    pub cp_loss: Option<f64>,
}

impl Accumulator {
    fn add_ppo(&mut self, s: &PpoStats) {
        self.ppo.policy_loss += s.policy_loss;
        self.ppo.value_loss += s.value_loss;
        self.ppo.entropy += s.entropy;
        self.ppo.clip_fraction += s.clip_fraction;
        self.ppo_updates += 1;
    }

    fn record(&self, step: u64, updates: u64, train_asr: f64) -> MetricsRecord {
        let n = self.ppo_updates.max(1) as f64;
        MetricsRecord {
            step,
            updates,
            train_asr,
            mean_return: if self.episodes == 0 { 0.0 } else { self.return_sum / self.episodes as f64 },
            episodes: self.episodes,
            policy_loss: self.ppo.policy_loss / n,
            value_loss: self.ppo.value_loss / n,
            entropy: self.ppo.entropy / n,
            clip_fraction: self.ppo.clip_fraction / n,
            cp_loss: None,
            concentration: None,
        }
    }
}

/// Parameters of the checkpoint with the highest training ASR so far.
#[derive(Clone, Debug, PartialEq)]
pub struct Best {
    pub train_asr: f64,
    pub step: u64,
    pub policy: PolicyParams,
    pub cp: ContactPredictorParams,
}

/// All mutable training state.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: TrainConfig,
    pub spec: TaskSpec,
    pub family: ObjectFamily,
    /// One cloud per training object.
    pub clouds: Vec<ObjectCloud>,
    pub layout: ObsLayout,
    pub envs: EnvBatch,
    pub running: Vec<f64>,
    pub cp: ContactPredictorParams,
    pub cp_adam: AdamState,
    pub policy: PolicyParams,
    pub policy_adam: AdamState,
    pub buffers: Vec<[ContactBuffer; 2]>,
    pub tracker: SuccessTracker,
    pub snapshots: Vec<AffordanceSnapshot>,
    pub policy_rng: ChaCha8Rng,
    pub step: u64,
    pub updates: u64,
    pub timeline: Vec<MetricsRecord>,
    pub best: Option<Best>,
    pub(crate) acc: Accumulator,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let spec = config.task_spec();
        let family = object_family(&config)?;
        let objects = family.train_objects();
        let clouds = objects.iter().map(|o| object_cloud(&config, o)).collect::<Result<Vec<_>>>()?;
        let envs = EnvBatch::new(&spec, &objects, config.replicas, stream_seed(config.seed, S_ENV))?;
        let layout = ObsLayout::new(&envs.envs[0], config.cloud_points, &config.flags, config.policy.obs_points)?;
        let cp = ContactPredictorParams::new(stream_seed(config.seed, S_CP_INIT));
        let cp_adam = AdamState::new(
            &cp,
            AdamConfig {
                lr: config.affordance.lr,
                ..AdamConfig::default()
            },
        );
        let policy = PolicyParams::new(&layout, &config.policy, stream_seed(config.seed, S_POLICY_INIT));
        let policy_adam = AdamState::new(
            &policy,
            AdamConfig {
                lr: config.ppo.lr,
                ..AdamConfig::default()
            },
        );
        let buffer_seed = stream_seed(config.seed, S_BUFFER);
        let buffers = (0..objects.len())
            .map(|i| -> Result<[ContactBuffer; 2]> {
                let mk = |ch: ContactChannel| {
                    ContactBuffer::new(
                        config.affordance.buffer_capacity,
                        ch,
                        objects[i].id,
                        buffer_seed.wrapping_add((2 * i + ch.index()) as u64),
                    )
                };
                Ok([mk(ContactChannel::A2O)?, mk(ContactChannel::O2O)?])
            })
            .collect::<Result<Vec<_>>>()?;
        let snapshots = snapshots(&cp, &clouds)?;
        Ok(Self {
            running: vec![0.0; envs.len()],
            tracker: SuccessTracker::new(objects.len(), SUCCESS_WINDOW),
            policy_rng: ChaCha8Rng::seed_from_u64(stream_seed(config.seed, S_POLICY_RNG)),
            step: 0,
            updates: 0,
            timeline: Vec::new(),
            best: None,
            acc: Accumulator::default(),
            config,
            spec,
            family,
            clouds,
            layout,
            envs,
            cp,
            cp_adam,
            policy,
            policy_adam,
            buffers,
            snapshots,
        })
    }

    pub fn finished(&self) -> bool {
        self.step >= self.config.total_timesteps
    }

    /// Stage containing transition `step`.
    pub fn phase_at(&self, step: u64) -> Phase {
        if self.config.flags.end_to_end {
            return Phase::Joint;
        }
        let (a, b) = self.stage_bounds();
        if step < a {
            Phase::Policy
        } else if step < b {
            Phase::Predictor
        } else {
            Phase::FineTune
        }
    }

    fn stage_bounds(&self) -> (u64, u64) {
        let t = self.config.total_timesteps;
        (t / 2, t / 2 + t / 4)
    }

    /// Steps per environment for the next rollout: the configured length,
    /// shortened to end at the first whole batch step reaching the next
    /// stage boundary or the end of the budget.
    fn next_rollout_len(&self) -> usize {
        let n_env = self.envs.len() as u64;
        let mut limit = self.config.total_timesteps;
        if !self.config.flags.end_to_end {
            let (a, b) = self.stage_bounds();
            limit = [a, b, limit].into_iter().find(|&x| x > self.step).unwrap_or(limit);
        }
        let remaining = limit - self.step;
        (self.config.ppo.rollout_len as u64).min(remaining.div_ceil(n_env)).max(1) as usize
    }

    /// A2O ground truth of every training object.
    pub fn a2o_dgt(&self) -> Result<Vec<Vec<f64>>> {
        let a = &self.config.affordance;
        self.clouds
            .iter()
            .zip(&self.buffers)
            .map(|(c, b)| compute_dgt(&c.cloud.points, b[ContactChannel::A2O.index()].points(), a.radius, a.epsilon))
            .collect()
    }

    /// Mean A2O concentration over training objects.
    pub fn concentration(&self) -> Result<f64> {
        let dgt = self.a2o_dgt()?;
        let mut total = 0.0;
        for d in &dgt {
            total += concentration_stat(d)?;
        }
        Ok(total / dgt.len() as f64)
    }

    /// Runs `cp_steps` optimizer steps on the
    /// success-weighted loss and refreshes the affordance snapshots.
    pub fn train_predictor(&mut self) -> Result<Option<f64>> {
        let targets: Vec<Tensor> = self
            .clouds
            .iter()
            .zip(&self.buffers)
            .map(|(c, b)| dgt_tensor(&c.cloud.points, [&b[0], &b[1]], &self.config.affordance))
            .collect::<Result<_>>()?;
        let rates = self.tracker.rates();
        let samples: Vec<CpSample> = self
            .clouds
            .iter()
            .zip(&targets)
            .zip(&rates)
            .map(|((c, t), &sr)| CpSample {
                cloud: &c.cloud,
                dgt: t,
                success_rate: sr,
            })
            .collect();
        let mut last = None;
        for _ in 0..self.config.cp_steps {
            match cp_update(&mut self.cp, &mut self.cp_adam, &samples)? {
                Some(l) => last = Some(l),
                None => break,
            }
        }
        if last.is_some() {
            self.snapshots = snapshots(&self.cp, &self.clouds)?;
        }
        Ok(last)
    }

    fn collect(&mut self, steps: usize) -> Result<RolloutOutput> {
        let ctx = RolloutContext {
            clouds: &self.clouds,
            snapshots: &self.snapshots,
            layout: &self.layout,
            flags: self.config.flags,
            mpr_weight: self.config.policy.mpr_weight,
            gamma: self.config.ppo.gamma,
            lambda: self.config.ppo.lambda,
        };
        rollout(
            &self.policy,
            &mut self.envs,
            &mut self.running,
            &ctx,
            steps,
            &mut self.policy_rng,
            false,
        )
    }

    /// One rollout plus whatever updates fall due. Returns the timeline
    /// record when a checkpoint boundary (or the end of the budget) was
    /// reached.
    pub fn iterate(&mut self) -> Result<Option<MetricsRecord>> {
        if self.finished() {
            return Err(Error::InvalidArgument("training budget already spent".into()));
        }
        let phase = self.phase_at(self.step);
        let steps = self.next_rollout_len();
        let out = self.collect(steps)?;
        let before = self.step;
        self.step += (steps * self.envs.len()) as u64;

        for ep in &out.episodes {
            self.tracker.record(ep.object, ep.success);
            self.acc.return_sum += ep.ret;
            self.acc.episodes += 1;
        }
        if phase.trains_predictor() {
            for (obj, c) in &out.contacts {
                self.buffers[*obj][c.channel.index()].insert(c.local)?;
            }
        }
        if phase.trains_policy() {
            let stats = ppo_update(
                &mut self.policy,
                &mut self.policy_adam,
                &out.batch,
                &self.config.ppo,
                &mut self.policy_rng,
            )?;
            self.updates += 1;
            self.acc.add_ppo(&stats);
        }
        if phase.trains_predictor() && crossed(before, self.step, self.config.update_period) {
            if let Some(l) = self.train_predictor()? {
                self.acc.cp_loss = Some(l);
            }
        }
        if crossed(before, self.step, self.config.checkpoint_period) || self.finished() {
            return self.checkpoint().map(Some);
        }
        Ok(None)
    }

    fn checkpoint(&mut self) -> Result<MetricsRecord> {
        let rates = self.tracker.rates();
        let asr = rates.iter().sum::<f64>() / rates.len() as f64 * 100.0;
        let mut rec = self.acc.record(self.step, self.updates, asr);
        rec.cp_loss = self.acc.cp_loss;
        rec.concentration = Some(self.concentration()?);
        self.acc = Accumulator {
            cp_loss: self.acc.cp_loss,
            ..Accumulator::default()
        };
        if self.best.as_ref().is_none_or(|b| asr >= b.train_asr) {
            self.best = Some(Best {
                train_asr: asr,
                step: self.step,
                policy: self.policy.clone(),
                cp: self.cp.clone(),
            });
        }
        self.timeline.push(rec);
        Ok(rec)
    }

    /// Trains until the budget is spent, writing checkpoints and the
    /// metrics timeline under `out_dir` when given. If an iteration fails,
    /// the state from before it is saved to `out_dir/abort` along with
    /// `error.txt`.
    pub fn run(&mut self, out_dir: Option<&Path>) -> Result<()> {
        if let Some(dir) = out_dir {
            fs::create_dir_all(dir.join("checkpoints"))?;
            fs::write(dir.join("config.toml"), self.config.to_toml())?;
            if self.timeline.is_empty() {
                fs::write(dir.join("metrics.csv"), format!("{}\n", MetricsRecord::CSV_HEADER))?;
            }
        }
        while !self.finished() {
            let before = out_dir.map(|_| self.clone());
            let rec = match self.iterate() {
                Ok(r) => r,
                Err(e) => {
                    if let (Some(dir), Some(prev)) = (out_dir, before) {
                        log::warn!("step {}: {e}; saving last consistent state", prev.step);
                        fs::write(dir.join("error.txt"), format!("step {}: {e}\n", prev.step))?;
                        prev.save(&dir.join("abort"))?;
                    }
                    return Err(e);
                }
            };
            if let Some(rec) = rec {
                log::info!(
                    "step {} updates {} train_asr {:.1} return {:.3} concentration {:.3}",
                    rec.step,
                    rec.updates,
                    rec.train_asr,
                    rec.mean_return,
                    rec.concentration.unwrap_or(f64::NAN)
                );
                if let Some(dir) = out_dir {
                    self.save(&dir.join("checkpoints").join(format!("step_{:09}", rec.step)))?;
                    let mut f = fs::OpenOptions::new().append(true).open(dir.join("metrics.csv"))?;
                    writeln!(f, "{}", rec.csv_row())?;
                }
            }
        }
        Ok(())
    }
}

fn crossed(before: u64, after: u64, period: u64) -> bool {
    after / period > before / period
}

/// A finished run.
#[derive(Clone, Debug)]
pub struct TrainRun {
    pub trainer: Trainer,
}

impl TrainRun {
    pub fn timeline(&self) -> &[MetricsRecord] {
        &self.trainer.timeline
    }
}

pub fn train(config: TrainConfig, out_dir: Option<&Path>) -> Result<TrainRun> {
    let mut trainer = Trainer::new(config)?;
    trainer.run(out_dir)?;
    Ok(TrainRun { trainer })
}

/// Result of a run without any affordance machinery.
#[derive(Clone, Debug)]
pub struct PlainRun {
    pub policy: PolicyParams,
    pub envs: EnvBatch,
    pub timeline: Vec<MetricsRecord>,
}

/// Policy-only training: rollouts and PPO updates with no contact
/// buffers, predictor or affordance inputs. Uses the same seed streams as
/// [`train`], so with every affordance flag off the two agree exactly.
pub fn train_plain(config: &TrainConfig) -> Result<PlainRun> {
    let mut config = config.clone();
    config.flags = AblationFlags::plain();
    config.validate()?;
    let spec = config.task_spec();
    let family = object_family(&config)?;
    let objects = family.train_objects();
    let clouds = objects.iter().map(|o| object_cloud(&config, o)).collect::<Result<Vec<_>>>()?;
    let snaps = clouds
        .iter()
        .map(|c| AffordanceSnapshot::new(AffordanceMap::uniform(c.len(), 0.5), c))
        .collect::<Result<Vec<_>>>()?;
    let mut envs = EnvBatch::new(&spec, &objects, config.replicas, stream_seed(config.seed, S_ENV))?;
    let layout = ObsLayout::new(&envs.envs[0], config.cloud_points, &config.flags, config.policy.obs_points)?;
    let mut policy = PolicyParams::new(&layout, &config.policy, stream_seed(config.seed, S_POLICY_INIT));
    let mut adam = AdamState::new(
        &policy,
        AdamConfig {
            lr: config.ppo.lr,
            ..AdamConfig::default()
        },
    );
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, S_POLICY_RNG));
    let mut running = vec![0.0; envs.len()];
    let mut tracker = SuccessTracker::new(objects.len(), SUCCESS_WINDOW);
    let mut acc = Accumulator::default();
    let mut timeline = Vec::new();
    let (mut step, mut updates) = (0u64, 0u64);
    let n_env = envs.len() as u64;
    while step < config.total_timesteps {
        let steps = (config.ppo.rollout_len as u64).min((config.total_timesteps - step).div_ceil(n_env)) as usize;
        let ctx = RolloutContext {
            clouds: &clouds,
            snapshots: &snaps,
            layout: &layout,
            flags: config.flags,
            mpr_weight: 0.0,
            gamma: config.ppo.gamma,
            lambda: config.ppo.lambda,
        };
        let out = rollout(&policy, &mut envs, &mut running, &ctx, steps, &mut rng, false)?;
        let before = step;
        step += steps as u64 * n_env;
        for ep in &out.episodes {
            tracker.record(ep.object, ep.success);
            acc.return_sum += ep.ret;
            acc.episodes += 1;
        }
        let stats = ppo_update(&mut policy, &mut adam, &out.batch, &config.ppo, &mut rng)?;
        updates += 1;
        acc.add_ppo(&stats);
        if crossed(before, step, config.checkpoint_period) || step >= config.total_timesteps {
            let rates = tracker.rates();
            let asr = rates.iter().sum::<f64>() / rates.len() as f64 * 100.0;
            timeline.push(acc.record(step, updates, asr));
            acc = Accumulator::default();
        }
    }
    Ok(PlainRun {
        policy,
        envs,
        timeline,
    })
}
