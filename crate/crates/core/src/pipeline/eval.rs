use super::checkpoint::Checkpoint;
use super::train::{object_cloud, object_family, snapshots};
use super::{stream_seed, RunMetrics, SplitMetrics, TrainConfig};
use crate::affordance::ContactPredictorParams;
use crate::error::{Error, Result};
use crate::policy::{build_observation, policy_forward_batch, ObsLayout, Observation, PolicyParams};
use crate::simworld::{ArticulatedObject, EnvState};

const S_EVAL: u64 = 11;

/// Success rate per object over `episodes` deterministic (mean-action)
/// episodes each. Start states are drawn from `seed`.
pub fn evaluate_rates(
    policy: &PolicyParams,
    cp: &ContactPredictorParams,
    config: &TrainConfig,
    objects: &[ArticulatedObject],
    episodes: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if objects.is_empty() {
        return Ok(Vec::new());
    }
    if episodes == 0 {
        return Err(Error::InvalidArgument("evaluation needs at least one episode".into()));
    }
    let spec = config.task_spec();
    let clouds = objects.iter().map(|o| object_cloud(config, o)).collect::<Result<Vec<_>>>()?;
    let snaps = snapshots(cp, &clouds)?;
    let mut envs = Vec::with_capacity(objects.len() * episodes);
    for (i, obj) in objects.iter().enumerate() {
        for e in 0..episodes {
            let s = stream_seed(seed, S_EVAL) ^ ((obj.id as u64) << 32) ^ e as u64;
            envs.push((i, EnvState::reset(&spec, obj, s)?));
        }
    }
    let layout = ObsLayout::new(&envs[0].1, config.cloud_points, &config.flags, config.policy.obs_points)?;
    let mut wins = vec![0usize; objects.len()];
    while !envs.is_empty() {
        let obs: Vec<Observation> = envs
            .iter()
            .map(|(i, env)| build_observation(env, &clouds[*i], &snaps[*i], &layout))
            .collect::<Result<_>>()?;
        let net = policy_forward_batch(policy, &obs.iter().collect::<Vec<_>>())?;
        let mut live = Vec::with_capacity(envs.len());
        for (k, (i, mut env)) in envs.into_iter().enumerate() {
            let action: Vec<f64> = net.mean.row(k).iter().map(|v| v.tanh()).collect();
            let out = env.step(&action)?;
            if out.done {
                wins[i] += out.success as usize;
            } else {
                live.push((i, env));
            }
        }
        envs = live;
    }
    Ok(wins.iter().map(|&w| w as f64 / episodes as f64).collect())
}

/// Train and test metrics averaged over `seeds` evaluation seeds.
pub fn evaluate(
    policy: &PolicyParams,
    cp: &ContactPredictorParams,
    config: &TrainConfig,
    episodes: usize,
    seeds: usize,
) -> Result<RunMetrics> {
    if seeds == 0 {
        return Err(Error::InvalidArgument("evaluation needs at least one seed".into()));
    }
    let family = object_family(config)?;
    let split = |ids: &[usize]| -> Result<Option<SplitMetrics>> {
        if ids.is_empty() {
            return Ok(None);
        }
        let objects: Vec<ArticulatedObject> = ids.iter().map(|&i| family.objects[i].clone()).collect();
        let mut rates = vec![0.0; objects.len()];
        for s in 0..seeds as u64 {
            let r = evaluate_rates(policy, cp, config, &objects, episodes, config.seed.wrapping_add(s))?;
            for (acc, v) in rates.iter_mut().zip(r) {
                *acc += v;
            }
        }
        rates.iter_mut().for_each(|r| *r /= seeds as f64);
        SplitMetrics::from_rates(&rates).map(Some)
    };
    Ok(RunMetrics {
        train: split(&family.train)?.expect("training split is never empty"),
        test: split(&family.test)?,
        concentration: None,
    })
}

pub fn evaluate_checkpoint(ckpt: &Checkpoint, episodes: usize, seeds: usize) -> Result<RunMetrics> {
    evaluate(&ckpt.policy, &ckpt.cp, &ckpt.config, episodes, seeds)
}
