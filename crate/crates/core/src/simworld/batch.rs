//! `k` objects × `n` replicas stepped in lock-step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ArticulatedObject, EnvState, StepOutcome, TaskSpec};
use crate::error::{Error, Result};

/// Environment `i` runs object `i / replicas`, replica `i % replicas`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvBatch {
    pub envs: Vec<EnvState>,
    pub replicas: usize,
}

impl EnvBatch {
    /// Resets every (object, replica) pair with seeds drawn from `seed`.
    pub fn new(spec: &TaskSpec, objects: &[ArticulatedObject], replicas: usize, seed: u64) -> Result<EnvBatch> {
        if objects.is_empty() || replicas == 0 {
            return Err(Error::InvalidArgument(
                "a batch needs at least one object and one replica".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut envs = Vec::with_capacity(objects.len() * replicas);
        for obj in objects {
            for _ in 0..replicas {
                envs.push(EnvState::reset(spec, obj, rng.gen())?);
            }
        }
        Ok(EnvBatch { envs, replicas })
    }

    /// Wraps existing envs; they must all share a task.
    pub fn from_envs(envs: Vec<EnvState>, replicas: usize) -> Result<EnvBatch> {
        if envs.is_empty() || replicas == 0 || envs.len() % replicas != 0 {
            return Err(Error::InvalidArgument(format!(
                "{} envs do not split into replicas of {replicas}",
                envs.len()
            )));
        }
        let task = envs[0].spec.task;
        if let Some(e) = envs.iter().find(|e| e.spec.task != task) {
            return Err(Error::InvalidArgument(format!(
                "mixed task ids in batch: {task} and {}",
                e.spec.task
            )));
        }
        Ok(EnvBatch { envs, replicas })
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    pub fn num_objects(&self) -> usize {
        self.envs.len() / self.replicas
    }

    pub fn object_index(&self, env: usize) -> usize {
        env / self.replicas
    }

    pub fn action_dim(&self) -> usize {
        self.envs[0].action_dim()
    }

    /// Steps every env with its own action, in index order.
    pub fn step(&mut self, actions: &[Vec<f64>]) -> Result<Vec<StepOutcome>> {
        if actions.len() != self.envs.len() {
            return Err(Error::Shape(format!(
                "{} actions for {} envs",
                actions.len(),
                self.envs.len()
            )));
        }
        self.envs
            .iter_mut()
            .zip(actions)
            .map(|(env, a)| env.step(a))
            .collect()
    }

    /// Resets every env whose episode has ended.
    pub fn reset_done(&mut self) -> Result<Vec<usize>> {
        let mut reset = Vec::new();
        for (i, env) in self.envs.iter_mut().enumerate() {
            if env.done {
                env.reset_next()?;
                reset.push(i);
            }
        }
        Ok(reset)
    }
}
