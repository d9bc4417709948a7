//! Point-set actor-critic: observation assembly, the policy network,
//! rollouts over an environment batch, advantage estimation and clipped
//! policy-gradient updates.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::affordance::{max_affordance_point, AffordanceMap};
use crate::diffcore::{
    adam_step, clip_global_norm, AdamState, FinalActivation, Graph, MlpParams, MlpVars, ParamSet, Tensor, Var,
};
use crate::error::{Error, Result};
use crate::geometry::{PartLabel, Point, RigidTransform};
use crate::simworld::{ContactChannel, ContactEvent, EnvBatch, EnvState, ObjectCloud};

/// Width of the pooled point-set feature.
pub const GLOBAL_FEATURE: usize = 128;
pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Switches for each way the affordance module feeds the policy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationFlags {
    pub use_mpo: bool,
    pub use_mpr: bool,
    /// Interleave predictor updates with policy training; otherwise train
    /// in separate stages.
    pub end_to_end: bool,
    pub use_a2o_map: bool,
    pub use_o2o_map: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self {
            use_mpo: true,
            use_mpr: true,
            end_to_end: true,
            use_a2o_map: true,
            use_o2o_map: true,
        }
    }
}

impl AblationFlags {
    /// Every affordance input off.
    pub fn plain() -> Self {
        Self {
            use_mpo: false,
            use_mpr: false,
            end_to_end: true,
            use_a2o_map: false,
            use_o2o_map: false,
        }
    }

    /// Whether the policy sees or is rewarded by the affordance module at
    /// all.
    pub fn uses_affordance(&self) -> bool {
        self.use_mpo || self.use_mpr || self.use_a2o_map || self.use_o2o_map
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    /// Points of the object cloud the policy observes (an even stride
    /// through the full cloud).
    pub obs_points: usize,
    pub encoder_hidden: usize,
    pub hidden: Vec<usize>,
    pub init_log_std: f64,
    /// Actor and critic share one point encoder.
    pub shared_encoder: bool,
    /// Weight `λ` of the max-affordance-point reward.
    pub mpr_weight: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            obs_points: 32,
            encoder_hidden: 32,
            hidden: vec![64, 64],
            init_log_std: -0.5,
            shared_encoder: true,
            mpr_weight: 0.1,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.obs_points == 0 || self.encoder_hidden == 0 || self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("policy widths and obs_points must be positive".into()));
        }
        if !(LOG_STD_MIN..=LOG_STD_MAX).contains(&self.init_log_std) {
            return Err(Error::Config(format!(
                "policy.init_log_std must lie in [{LOG_STD_MIN}, {LOG_STD_MAX}]"
            )));
        }
        if !(self.mpr_weight >= 0.0) {
            return Err(Error::Config("policy.mpr_weight must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub clip: f64,
    pub epochs: usize,
    pub minibatches: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    /// Steps per environment between updates.
    pub rollout_len: usize,
    pub lr: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip: 0.2,
            epochs: 4,
            minibatches: 4,
            gamma: 0.99,
            lambda: 0.95,
            value_coef: 0.5,
            entropy_coef: 0.01,
            max_grad_norm: 1.0,
            rollout_len: 64,
            lr: 1e-3,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = 0.0..=1.0;
        if !(self.clip > 0.0) {
            return Err(Error::Config("ppo.clip must be positive".into()));
        }
        if !unit.contains(&self.gamma) || !unit.contains(&self.lambda) {
            return Err(Error::Config("ppo.gamma and ppo.lambda must lie in [0, 1]".into()));
        }
        if self.epochs == 0 || self.minibatches == 0 || self.rollout_len == 0 {
            return Err(Error::Config("ppo.epochs, minibatches and rollout_len must be positive".into()));
        }
        if !(self.lr > 0.0) || !(self.max_grad_norm > 0.0) {
            return Err(Error::Config("ppo.lr and ppo.max_grad_norm must be positive".into()));
        }
        if self.value_coef < 0.0 || self.entropy_coef < 0.0 {
            return Err(Error::Config("ppo loss coefficients must be non-negative".into()));
        }
        Ok(())
    }
}

/// Shape of the observation for one task under a set of flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObsLayout {
    pub labels: Vec<PartLabel>,
    pub map_channels: Vec<ContactChannel>,
    pub use_mpo: bool,
    pub n_points: usize,
    pub stride: usize,
    pub point_dim: usize,
    pub state_dim: usize,
    pub action_dim: usize,
}

impl ObsLayout {
    pub fn new(env: &EnvState, cloud_len: usize, flags: &AblationFlags, obs_points: usize) -> Result<Self> {
        if cloud_len == 0 || obs_points == 0 {
            return Err(Error::Empty("observation needs at least one point".into()));
        }
        let labels = env.spec.task.labels().to_vec();
        let mut map_channels = Vec::new();
        if flags.use_a2o_map {
            map_channels.push(ContactChannel::A2O);
        }
        if flags.use_o2o_map {
            map_channels.push(ContactChannel::O2O);
        }
        let n_points = obs_points.min(cloud_len);
        Ok(Self {
            point_dim: 2 + map_channels.len() + labels.len(),
            state_dim: env.state_dim() + if flags.use_mpo { 2 } else { 0 },
            action_dim: env.action_dim(),
            stride: cloud_len / n_points,
            n_points,
            labels,
            map_channels,
            use_mpo: flags.use_mpo,
        })
    }
}

/// Per-object affordance map frozen between predictor updates, with its
/// max-affordance (A2O) point index.
#[derive(Clone, Debug, PartialEq)]
pub struct AffordanceSnapshot {
    pub map: AffordanceMap,
    pub mpo_index: usize,
}

impl AffordanceSnapshot {
    pub fn new(map: AffordanceMap, cloud: &ObjectCloud) -> Result<Self> {
        let (_, mpo_index) = max_affordance_point(&map, &cloud.cloud.points, ContactChannel::A2O)?;
        Ok(Self { map, mpo_index })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    /// `n_points × point_dim`: coordinates, enabled affordance channels,
    /// one-hot part mask.
    pub points: Tensor,
    /// Arm and task state, then the max-affordance point when enabled.
    pub state: Vec<f64>,
    /// Max-affordance point in the world frame.
    pub mpo: Point,
}

pub fn build_observation(
    env: &EnvState,
    cloud: &ObjectCloud,
    snapshot: &AffordanceSnapshot,
    layout: &ObsLayout,
) -> Result<Observation> {
    if snapshot.map.len() != cloud.len() {
        return Err(Error::Shape(format!(
            "affordance map has {} rows for a {}-point cloud",
            snapshot.map.len(),
            cloud.len()
        )));
    }
    let frames: Vec<RigidTransform> = (0..env.object.links.len())
        .map(|l| env.object.link_world(l))
        .collect();
    let world = |i: usize| frames[cloud.links[i]].apply(cloud.cloud.points[i]);
    let mut points = Tensor::zeros((layout.n_points, layout.point_dim));
    for r in 0..layout.n_points {
        let i = r * layout.stride;
        let p = world(i);
        points[[r, 0]] = p.x;
        points[[r, 1]] = p.y;
        let mut c = 2;
        for ch in &layout.map_channels {
            points[[r, c]] = snapshot.map.scores[[i, ch.index()]];
            c += 1;
        }
        if let Some(k) = layout.labels.iter().position(|&l| l == cloud.cloud.labels[i]) {
            points[[r, c + k]] = 1.0;
        }
    }
    let mpo = world(snapshot.mpo_index);
    let mut state = env.state_vector();
    if layout.use_mpo {
        state.push(mpo.x);
        state.push(mpo.y);
    }
    Ok(Observation { points, state, mpo })
}

/// Point encoder (shared or duplicated for the critic), actor and critic
/// heads, and a learned log standard deviation per action dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    pub encoder: MlpParams,
    pub critic_encoder: Option<MlpParams>,
    pub actor: MlpParams,
    pub critic: MlpParams,
    /// `1 × action_dim`.
    pub log_std: Tensor,
}

impl PolicyParams {
    /// Random hidden layers; zero output layers so the initial mean and
    /// value are exactly zero.
    pub fn new(layout: &ObsLayout, cfg: &PolicyConfig, seed: u64) -> Self {
        let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let enc_dims = [layout.point_dim, cfg.encoder_hidden, GLOBAL_FEATURE];
        let encoder = MlpParams::new(&enc_dims, FinalActivation::Identity, &mut rng);
        let critic_encoder =
            (!cfg.shared_encoder).then(|| MlpParams::new(&enc_dims, FinalActivation::Identity, &mut rng));
        let head_dims = |out: usize| {
            let mut d = vec![GLOBAL_FEATURE + layout.state_dim];
            d.extend(&cfg.hidden);
            d.push(out);
            d
        };
        let mut actor = MlpParams::new(&head_dims(layout.action_dim), FinalActivation::Identity, &mut rng);
        let mut critic = MlpParams::new(&head_dims(1), FinalActivation::Identity, &mut rng);
        actor.zero_last_layer();
        critic.zero_last_layer();
        Self {
            encoder,
            critic_encoder,
            actor,
            critic,
            log_std: Tensor::from_elem((1, layout.action_dim), cfg.init_log_std),
        }
    }

    /// Rebuilds from [`ParamSet::tensors`] order.
    pub fn from_tensors(tensors: Vec<Tensor>, cfg: &PolicyConfig) -> Result<Self> {
        let head_tensors = 2 * (cfg.hidden.len() + 1);
        let expected = 4 * if cfg.shared_encoder { 1 } else { 2 } + 2 * head_tensors + 1;
        if tensors.len() != expected {
            return Err(Error::Format(format!(
                "policy expects {expected} tensors, got {}",
                tensors.len()
            )));
        }
        let mut it = tensors.into_iter();
        let mut take = |n: usize| -> Vec<Tensor> { it.by_ref().take(n).collect() };
        let encoder = MlpParams::from_tensors(take(4), FinalActivation::Identity)?;
        let critic_encoder = if cfg.shared_encoder {
            None
        } else {
            Some(MlpParams::from_tensors(take(4), FinalActivation::Identity)?)
        };
        let actor = MlpParams::from_tensors(take(head_tensors), FinalActivation::Identity)?;
        let critic = MlpParams::from_tensors(take(head_tensors), FinalActivation::Identity)?;
        let log_std = take(1).pop().expect("counted above");
        if log_std.dim() != (1, actor.out_dim()) || critic.out_dim() != 1 {
            return Err(Error::Format("policy tensor shapes do not chain".into()));
        }
        Ok(Self {
            encoder,
            critic_encoder,
            actor,
            critic,
            log_std,
        })
    }

    pub fn action_dim(&self) -> usize {
        self.actor.out_dim()
    }

    /// Log-std clamped to its allowed range.
    pub fn effective_log_std(&self) -> Vec<f64> {
        self.log_std.iter().map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX)).collect()
    }
}

impl ParamSet for PolicyParams {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut t = self.encoder.tensors();
        if let Some(c) = &self.critic_encoder {
            t.extend(c.tensors());
        }
        t.extend(self.actor.tensors());
        t.extend(self.critic.tensors());
        t.push(&self.log_std);
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut t = self.encoder.tensors_mut();
        if let Some(c) = &mut self.critic_encoder {
            t.extend(c.tensors_mut());
        }
        t.extend(self.actor.tensors_mut());
        t.extend(self.critic.tensors_mut());
        t.push(&mut self.log_std);
        t
    }
}

struct Recorded {
    graph: Graph,
    vars: Vec<Var>,
    feature: Var,
    mean: Var,
    value: Var,
}

fn stack(obs: &[&Observation], params: &PolicyParams) -> Result<(Tensor, Tensor, usize)> {
    let first = obs.first().ok_or_else(|| Error::Empty("policy forward on no observations".into()))?;
    let (n, pd) = first.points.dim();
    let sd = first.state.len();
    let want_state = params.actor.in_dim() - GLOBAL_FEATURE;
    if n == 0 || pd != params.encoder.in_dim() || sd != want_state {
        return Err(Error::Shape(format!(
            "observation {n}×{pd} with {sd} state entries; policy expects width {} and {want_state} state entries",
            params.encoder.in_dim()
        )));
    }
    let mut points = Tensor::zeros((obs.len() * n, pd));
    let mut states = Tensor::zeros((obs.len(), sd));
    for (b, o) in obs.iter().enumerate() {
        if o.points.dim() != (n, pd) || o.state.len() != sd {
            return Err(Error::Shape("observations in a batch differ in shape".into()));
        }
        points.slice_mut(ndarray::s![b * n..(b + 1) * n, ..]).assign(&o.points);
        for (j, v) in o.state.iter().enumerate() {
            states[[b, j]] = *v;
        }
    }
    if points.iter().chain(states.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("observation".into()));
    }
    Ok((points, states, n))
}

fn encode_into(graph: &mut Graph, enc: &MlpVars, points: Var, states: Var, n: usize) -> Result<(Var, Var)> {
    let h = enc.forward(graph, points)?;
    let f = graph.maxpool_sets(h, n)?;
    let z = graph.concat_cols(f, states)?;
    Ok((f, z))
}

fn record(params: &PolicyParams, obs: &[&Observation]) -> Result<Recorded> {
    let (points, states, n) = stack(obs, params)?;
    let mut graph = Graph::new();
    let enc = params.encoder.bind(&mut graph);
    let cenc = params.critic_encoder.as_ref().map(|c| c.bind(&mut graph));
    let actor = params.actor.bind(&mut graph);
    let critic = params.critic.bind(&mut graph);
    let x = graph.leaf(points);
    let s = graph.leaf(states);
    let (feature, z) = encode_into(&mut graph, &enc, x, s, n)?;
    let mean = actor.forward(&mut graph, z)?;
    let zc = match &cenc {
        Some(c) => encode_into(&mut graph, c, x, s, n)?.1,
        None => z,
    };
    let value = critic.forward(&mut graph, zc)?;
    let mut vars = enc.vars();
    if let Some(c) = &cenc {
        vars.extend(c.vars());
    }
    vars.extend(actor.vars());
    vars.extend(critic.vars());
    Ok(Recorded {
        graph,
        vars,
        feature,
        mean,
        value,
    })
}

/// Batched network outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyOutput {
    /// `batch × action_dim` pre-squash means.
    pub mean: Tensor,
    pub log_std: Vec<f64>,
    pub value: Vec<f64>,
}

pub fn policy_forward_batch(params: &PolicyParams, obs: &[&Observation]) -> Result<PolicyOutput> {
    let rec = record(params, obs)?;
    let mean = rec.graph.value(rec.mean).clone();
    let value: Vec<f64> = rec.graph.value(rec.value).column(0).to_vec();
    if mean.iter().chain(value.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("policy output".into()));
    }
    Ok(PolicyOutput {
        mean,
        log_std: params.effective_log_std(),
        value,
    })
}

/// Action mean, action standard deviation and state value for one
/// observation.
pub fn policy_forward(params: &PolicyParams, obs: &Observation) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let out = policy_forward_batch(params, &[obs])?;
    let std = out.log_std.iter().map(|l| l.exp()).collect();
    Ok((out.mean.row(0).to_vec(), std, out.value[0]))
}

/// Pooled point-set feature `f` for one observation.
pub fn encode(params: &PolicyParams, obs: &Observation) -> Result<Vec<f64>> {
    let rec = record(params, &[obs])?;
    Ok(rec.graph.value(rec.feature).row(0).to_vec())
}

pub fn gaussian_log_prob(u: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    u.iter()
        .zip(mean)
        .zip(log_std)
        .map(|((&u, &m), &l)| {
            let z = (u - m) / l.exp();
            -0.5 * z * z - l - HALF_LN_2PI
        })
        .sum()
}

pub fn gaussian_entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|l| l + 0.5 + HALF_LN_2PI).sum()
}

/// `−λ · ‖ee − mpo‖`.
pub fn mpr_reward(ee: Point, mpo: Point, weight: f64) -> f64 {
    if weight == 0.0 {
        return 0.0;
    }
    -weight * ee.distance(mpo)
}

/// Generalized advantage estimates and returns for one environment's
/// sequence. `dones[t]` marks that the episode ended after step `t`;
/// `last_value` bootstraps the step after the sequence.
pub fn gae_compute(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_value: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n || dones.len() != n {
        return Err(Error::Shape(format!(
            "gae: {} rewards, {} values, {} dones",
            n,
            values.len(),
            dones.len()
        )));
    }
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let next_value = if t + 1 < n { values[t + 1] } else { last_value };
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Shifts and scales to zero mean and unit standard deviation.
pub fn normalize(values: &[f64]) -> Vec<f64> {
    let n = values.len().max(1) as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt() + 1e-8;
    values.iter().map(|v| (v - mean) / std).collect()
}

/// Transitions from all environments, time-major: entry `t * envs + e`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RolloutBatch {
    pub observations: Vec<Observation>,
    /// Pre-squash Gaussian samples; the environment received `tanh` of
    /// these.
    pub raw_actions: Vec<Vec<f64>>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
    pub successes: Vec<bool>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// A finished episode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub object: usize,
    pub success: bool,
    pub ret: f64,
    pub length: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RolloutOutput {
    pub batch: RolloutBatch,
    /// Contacts tagged with the object index in the batch.
    pub contacts: Vec<(usize, ContactEvent)>,
    pub episodes: Vec<EpisodeOutcome>,
}

/// Everything a rollout reads but does not change.
pub struct RolloutContext<'a> {
    /// One cloud per object in batch order.
    pub clouds: &'a [ObjectCloud],
    pub snapshots: &'a [AffordanceSnapshot],
    pub layout: &'a ObsLayout,
    pub flags: AblationFlags,
    pub mpr_weight: f64,
    pub gamma: f64,
    pub lambda: f64,
}

fn observe_all(envs: &EnvBatch, ctx: &RolloutContext) -> Result<Vec<Observation>> {
    (0..envs.len())
        .map(|e| {
            let o = envs.object_index(e);
            build_observation(&envs.envs[e], &ctx.clouds[o], &ctx.snapshots[o], ctx.layout)
        })
        .collect()
}

/// Distance term of the max-affordance reward: the nearest gripper counts.
fn nearest_agent(env: &EnvState, mpo: Point) -> Point {
    env.agents
        .iter()
        .map(|a| a.position)
        .min_by(|a, b| a.distance(mpo).total_cmp(&b.distance(mpo)))
        .expect("at least one agent")
}

/// Steps every environment `steps` times with actions sampled from the
/// policy (or its mean when `deterministic`). Finished episodes are reset
/// in place. `running` carries each env's partial episode return across
/// calls.
pub fn rollout(
    params: &PolicyParams,
    envs: &mut EnvBatch,
    running: &mut [f64],
    ctx: &RolloutContext,
    steps: usize,
    rng: &mut ChaCha8Rng,
    deterministic: bool,
) -> Result<RolloutOutput> {
    let n_env = envs.len();
    if running.len() != n_env {
        return Err(Error::Shape(format!("{} running returns for {n_env} envs", running.len())));
    }
    if ctx.clouds.len() != envs.num_objects() || ctx.snapshots.len() != envs.num_objects() {
        return Err(Error::Shape("one cloud and snapshot per object required".into()));
    }
    let mut out = RolloutOutput::default();
    let b = &mut out.batch;
    let mut obs = observe_all(envs, ctx)?;
    for _ in 0..steps {
        let refs: Vec<&Observation> = obs.iter().collect();
        let net = policy_forward_batch(params, &refs)?;
        let mut actions = Vec::with_capacity(n_env);
        for e in 0..n_env {
            let mean = net.mean.row(e).to_vec();
            let u: Vec<f64> = if deterministic {
                mean.clone()
            } else {
                mean.iter()
                    .zip(&net.log_std)
                    .map(|(m, l)| {
                        let z: f64 = StandardNormal.sample(rng);
                        m + l.exp() * z
                    })
                    .collect()
            };
            b.log_probs.push(gaussian_log_prob(&u, &mean, &net.log_std));
            b.values.push(net.value[e]);
            actions.push(u.iter().map(|v| v.tanh()).collect::<Vec<f64>>());
            b.raw_actions.push(u);
        }
        let results = envs.step(&actions)?;
        for (e, res) in results.into_iter().enumerate() {
            let object = envs.object_index(e);
            let env = &envs.envs[e];
            let mut reward = res.reward;
            if ctx.flags.use_mpr {
                reward += mpr_reward(nearest_agent(env, obs[e].mpo), obs[e].mpo, ctx.mpr_weight);
            }
            running[e] += reward;
            b.rewards.push(reward);
            b.dones.push(res.done);
            b.successes.push(res.success);
            out.contacts.extend(res.contacts.into_iter().map(|c| (object, c)));
            if res.done {
                out.episodes.push(EpisodeOutcome {
                    object,
                    success: res.success,
                    ret: running[e],
                    length: env.timestep,
                });
                running[e] = 0.0;
            }
        }
        envs.reset_done()?;
        let next = observe_all(envs, ctx)?;
        b.observations.extend(std::mem::replace(&mut obs, next));
    }
    let last = policy_forward_batch(params, &obs.iter().collect::<Vec<_>>())?.value;
    let t_len = steps;
    b.advantages = vec![0.0; t_len * n_env];
    b.returns = vec![0.0; t_len * n_env];
    for e in 0..n_env {
        let idx: Vec<usize> = (0..t_len).map(|t| t * n_env + e).collect();
        let r: Vec<f64> = idx.iter().map(|&i| b.rewards[i]).collect();
        let v: Vec<f64> = idx.iter().map(|&i| b.values[i]).collect();
        let d: Vec<bool> = idx.iter().map(|&i| b.dones[i]).collect();
        let (adv, ret) = gae_compute(&r, &v, &d, last[e], ctx.gamma, ctx.lambda)?;
        for (k, &i) in idx.iter().enumerate() {
            b.advantages[i] = adv[k];
            b.returns[i] = ret[k];
        }
    }
    Ok(out)
}

/// Diagnostics from one update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

/// `min(r·A, clip(r, 1−ε, 1+ε)·A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - clip, 1.0 + clip) * advantage)
}

/// Per-sample quantities of the clipped objective for a minibatch.
#[derive(Clone, Debug, PartialEq)]
pub struct PpoTerms {
    pub ratios: Vec<f64>,
    pub surrogates: Vec<f64>,
    pub values: Vec<f64>,
    /// Total loss: `−mean(surrogate) + c_v·½·mean((V−R)²) − c_e·entropy`.
    pub loss: f64,
    pub stats: PpoStats,
}

/// Loss terms and gradients of the clipped objective on samples `idx` of
/// `batch`, with `advantages` already normalized.
pub fn ppo_loss(
    params: &PolicyParams,
    batch: &RolloutBatch,
    advantages: &[f64],
    idx: &[usize],
    cfg: &PpoConfig,
) -> Result<(PpoTerms, Vec<Tensor>)> {
    if idx.is_empty() {
        return Err(Error::Empty("ppo minibatch is empty".into()));
    }
    let obs: Vec<&Observation> = idx.iter().map(|&i| &batch.observations[i]).collect();
    let rec = record(params, &obs)?;
    let mean = rec.graph.value(rec.mean);
    let value = rec.graph.value(rec.value);
    let log_std = params.effective_log_std();
    let bsz = idx.len() as f64;
    let a_dim = params.action_dim();
    let entropy = gaussian_entropy(&log_std);

    let mut d_mean = Tensor::zeros(mean.dim());
    let mut d_value = Tensor::zeros(value.dim());
    let mut d_log_std = vec![0.0; a_dim];
    let mut ratios = Vec::with_capacity(idx.len());
    let mut surrogates = Vec::with_capacity(idx.len());
    let (mut surr_sum, mut v_sum, mut clipped, mut kl) = (0.0, 0.0, 0usize, 0.0);
    for (k, &i) in idx.iter().enumerate() {
        let u = &batch.raw_actions[i];
        let m = mean.row(k).to_vec();
        let logp = gaussian_log_prob(u, &m, &log_std);
        let log_ratio = logp - batch.log_probs[i];
        let ratio = log_ratio.exp();
        let adv = advantages[i];
        let surr = clipped_surrogate(ratio, adv, cfg.clip);
        if (ratio - 1.0).abs() > cfg.clip {
            clipped += 1;
        }
        kl += (ratio - 1.0) - log_ratio;
        surr_sum += surr;
        ratios.push(ratio);
        surrogates.push(surr);
        // d(−surr/B)/d logp; zero when the clipped branch is the minimum.
        let g_logp = if ratio * adv <= ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip) * adv {
            -ratio * adv / bsz
        } else {
            0.0
        };
        for d in 0..a_dim {
            let var = (2.0 * log_std[d]).exp();
            let diff = u[d] - m[d];
            d_mean[[k, d]] = g_logp * diff / var;
            d_log_std[d] += g_logp * (diff * diff / var - 1.0);
        }
        let err = value[[k, 0]] - batch.returns[i];
        v_sum += err * err;
        d_value[[k, 0]] = cfg.value_coef * err / bsz;
    }
    let policy_loss = -surr_sum / bsz;
    let value_loss = 0.5 * v_sum / bsz;
    let loss = policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("ppo loss {loss}")));
    }
    let grads = rec.graph.backward_from(&[(rec.mean, d_mean), (rec.value, d_value)])?;
    let mut out: Vec<Tensor> = rec
        .vars
        .iter()
        .map(|&v| grads.get_or_zeros(v, rec.graph.value(v).dim()))
        .collect();
    let mut g_ls = Tensor::zeros((1, a_dim));
    for (d, raw) in params.log_std.iter().enumerate() {
        if (LOG_STD_MIN..=LOG_STD_MAX).contains(raw) {
            g_ls[[0, d]] = d_log_std[d] - cfg.entropy_coef;
        }
    }
    out.push(g_ls);
    let stats = PpoStats {
        policy_loss,
        value_loss,
        entropy,
        clip_fraction: clipped as f64 / bsz,
        approx_kl: kl / bsz,
    };
    Ok((
        PpoTerms {
            ratios,
            surrogates,
            values: value.column(0).to_vec(),
            loss,
            stats,
        },
        out,
    ))
}

/// Clipped-surrogate updates over `epochs` shuffled passes of
/// `minibatches` each. On any error the parameters and optimizer state are
/// restored to their values on entry.
pub fn ppo_update(
    params: &mut PolicyParams,
    adam: &mut AdamState,
    batch: &RolloutBatch,
    cfg: &PpoConfig,
    rng: &mut ChaCha8Rng,
) -> Result<PpoStats> {
    if batch.is_empty() {
        return Err(Error::Empty("ppo update on an empty batch".into()));
    }
    let saved = (params.clone(), adam.clone());
    match ppo_epochs(params, adam, batch, cfg, rng) {
        Ok(s) => Ok(s),
        Err(e) => {
            *params = saved.0;
            *adam = saved.1;
            Err(e)
        }
    }
}

fn ppo_epochs(
    params: &mut PolicyParams,
    adam: &mut AdamState,
    batch: &RolloutBatch,
    cfg: &PpoConfig,
    rng: &mut ChaCha8Rng,
) -> Result<PpoStats> {
    let n = batch.len();
    let advantages = normalize(&batch.advantages);
    let mb = n.div_ceil(cfg.minibatches);
    let mut order: Vec<usize> = (0..n).collect();
    let mut total = PpoStats::default();
    let mut count = 0.0;
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(mb) {
            let (terms, mut grads) = ppo_loss(params, batch, &advantages, chunk, cfg)?;
            clip_global_norm(&mut grads, cfg.max_grad_norm);
            adam_step(params, &grads, adam)?;
            params.log_std.mapv_inplace(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX));
            let s = terms.stats;
            total.policy_loss += s.policy_loss;
            total.value_loss += s.value_loss;
            total.entropy += s.entropy;
            total.clip_fraction += s.clip_fraction;
            total.approx_kl += s.approx_kl;
            count += 1.0;
        }
    }
    Ok(PpoStats {
        policy_loss: total.policy_loss / count,
        value_loss: total.value_loss / count,
        entropy: total.entropy / count,
        clip_fraction: total.clip_fraction / count,
        approx_kl: total.approx_kl / count,
    })
}
