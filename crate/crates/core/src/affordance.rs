//! Contact buffers, dynamic ground truth, and the contact predictor that
//! turns a point cloud into a per-point affordance map.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{adam_step, AdamState, FinalActivation, Graph, MlpParams, MlpVars, ParamSet, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::{count_in_ball, PartLabel, Point, PointCloud};
use crate::simworld::ContactChannel;

pub const NUM_CHANNELS: usize = 2;
/// Width of the per-point feature fed to the scoring head.
pub const FEATURE_WIDTH: usize = 128;
const POINT_WIDTH: usize = 64;
const HEAD_HIDDEN: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AffordanceConfig {
    /// Contact buffer capacity `l`.
    pub buffer_capacity: usize,
    /// Ball radius `r` (m).
    pub radius: f64,
    pub epsilon: f64,
    pub lr: f64,
}

impl Default for AffordanceConfig {
    fn default() -> Self {
        Self {
            buffer_capacity: 512,
            radius: 0.05,
            epsilon: 1e-6,
            lr: 1e-3,
        }
    }
}

impl AffordanceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.buffer_capacity == 0 {
            return Err(Error::Config("affordance.buffer_capacity must be at least 1".into()));
        }
        if !(self.radius > 0.0) {
            return Err(Error::Config("affordance.radius must be positive".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("affordance.epsilon must be positive".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("affordance.lr must be positive".into()));
        }
        Ok(())
    }
}

/// Fixed-capacity store of contact positions for one object and channel.
/// Once full, each insertion overwrites a uniformly chosen entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactBuffer {
    pub capacity: usize,
    pub channel: ContactChannel,
    pub object_id: usize,
    entries: Vec<Point>,
    rng: ChaCha8Rng,
}

impl ContactBuffer {
    pub fn new(capacity: usize, channel: ContactChannel, object_id: usize, seed: u64) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument("buffer capacity must be at least 1".into()));
        }
        Ok(Self {
            capacity,
            channel,
            object_id,
            entries: Vec::with_capacity(capacity),
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Inserts `p`; returns the overwritten slot when the buffer was full.
    pub fn insert(&mut self, p: Point) -> Result<Option<usize>> {
        if !p.is_finite() {
            return Err(Error::NonFinite("contact position".into()));
        }
        if self.entries.len() < self.capacity {
            self.entries.push(p);
            return Ok(None);
        }
        let slot = self.rng.gen_range(0..self.capacity);
        self.entries[slot] = p;
        Ok(Some(slot))
    }

    pub fn points(&self) -> &[Point] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Normalized contact frequency around each cloud point:
/// `count(p) / (max_q count(q) + epsilon)`, counting contacts strictly
/// within `radius`.
pub fn compute_dgt(cloud: &[Point], contacts: &[Point], radius: f64, epsilon: f64) -> Result<Vec<f64>> {
    if cloud.is_empty() {
        return Err(Error::Empty("dynamic ground truth of an empty cloud".into()));
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    let counts = cloud
        .iter()
        .map(|&p| count_in_ball(contacts, p, radius))
        .collect::<Result<Vec<usize>>>()?;
    let max = counts.iter().copied().max().unwrap_or(0) as f64;
    Ok(counts.iter().map(|&c| c as f64 / (max + epsilon)).collect())
}

/// Both channels of the ground truth for one object, as an `n×2` tensor.
pub fn dgt_tensor(cloud: &[Point], buffers: [&ContactBuffer; NUM_CHANNELS], cfg: &AffordanceConfig) -> Result<Tensor> {
    let mut out = Tensor::zeros((cloud.len(), NUM_CHANNELS));
    for (c, buf) in buffers.iter().enumerate() {
        let col = compute_dgt(cloud, buf.points(), cfg.radius, cfg.epsilon)?;
        for (i, v) in col.into_iter().enumerate() {
            out[[i, c]] = v;
        }
    }
    Ok(out)
}

/// Per-point scores in `(0, 1)`, one column per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct AffordanceMap {
    pub scores: Tensor,
}

impl AffordanceMap {
    /// Every score equal to `value`.
    pub fn uniform(n: usize, value: f64) -> Self {
        Self {
            scores: Tensor::from_elem((n, NUM_CHANNELS), value),
        }
    }

    pub fn len(&self) -> usize {
        self.scores.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.nrows() == 0
    }

    pub fn channel(&self, channel: ContactChannel) -> Vec<f64> {
        self.scores.column(channel.index()).to_vec()
    }
}

/// Shared point encoder (point → 64, max-pooled to a global 64) and a
/// scoring head over the concatenated 128-wide per-point feature.
#[derive(Clone, Debug, PartialEq)]
pub struct ContactPredictorParams {
    pub encoder: MlpParams,
    pub head: MlpParams,
}

/// Per-point input: coordinates followed by a one-hot part label.
pub const CP_INPUT_WIDTH: usize = 2 + PartLabel::ALL.len();

impl ContactPredictorParams {
    /// Random encoder and hidden head layer; zero output layer so the
    /// initial map is exactly 0.5 everywhere.
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = MlpParams::new(
            &[CP_INPUT_WIDTH, POINT_WIDTH, POINT_WIDTH],
            FinalActivation::Identity,
            &mut rng,
        );
        let mut head = MlpParams::new(
            &[FEATURE_WIDTH, HEAD_HIDDEN, NUM_CHANNELS],
            FinalActivation::Sigmoid,
            &mut rng,
        );
        head.zero_last_layer();
        Self { encoder, head }
    }

    pub fn from_tensors(tensors: Vec<Tensor>) -> Result<Self> {
        let split = 2 * 2;
        if tensors.len() != split + 4 {
            return Err(Error::Format(format!(
                "contact predictor expects 8 tensors, got {}",
                tensors.len()
            )));
        }
        let mut tensors = tensors;
        let head = tensors.split_off(split);
        let params = Self {
            encoder: MlpParams::from_tensors(tensors, FinalActivation::Identity)?,
            head: MlpParams::from_tensors(head, FinalActivation::Sigmoid)?,
        };
        if params.encoder.in_dim() != CP_INPUT_WIDTH
            || params.encoder.out_dim() * 2 != FEATURE_WIDTH
            || params.head.in_dim() != FEATURE_WIDTH
            || params.head.out_dim() != NUM_CHANNELS
        {
            return Err(Error::Format("contact predictor tensor shapes do not chain".into()));
        }
        Ok(params)
    }
}

impl ParamSet for ContactPredictorParams {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut t = self.encoder.tensors();
        t.extend(self.head.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut t = self.encoder.tensors_mut();
        t.extend(self.head.tensors_mut());
        t
    }
}

/// Coordinates plus one-hot label for each point.
pub fn cloud_features(cloud: &PointCloud) -> Tensor {
    let mut x = Tensor::zeros((cloud.len(), CP_INPUT_WIDTH));
    for (i, (p, label)) in cloud.points.iter().zip(&cloud.labels).enumerate() {
        x[[i, 0]] = p.x;
        x[[i, 1]] = p.y;
        let k = PartLabel::ALL.iter().position(|l| l == label).expect("known label");
        x[[i, 2 + k]] = 1.0;
    }
    x
}

/// Records the forward pass for one cloud; returns the `n×2` score node.
fn record_forward(
    graph: &mut Graph,
    enc: &MlpVars,
    head: &MlpVars,
    features: Tensor,
) -> Result<Var> {
    let n = features.nrows();
    let x = graph.leaf(features);
    let point = enc.forward(graph, x)?;
    let global = graph.maxpool_sets(point, n)?;
    let spread = graph.repeat_rows(global, n)?;
    let feat = graph.concat_cols(point, spread)?;
    head.forward(graph, feat)
}

/// Scores every point of `cloud`.
pub fn cp_forward(params: &ContactPredictorParams, cloud: &PointCloud) -> Result<AffordanceMap> {
    if cloud.is_empty() {
        return Err(Error::Empty("contact predictor on an empty cloud".into()));
    }
    let mut graph = Graph::new();
    let (enc, head) = (params.encoder.bind(&mut graph), params.head.bind(&mut graph));
    let out = record_forward(&mut graph, &enc, &head, cloud_features(cloud))?;
    Ok(AffordanceMap {
        scores: graph.value(out).clone(),
    })
}

/// One object's contribution to the predictor loss.
#[derive(Clone, Copy, Debug)]
pub struct CpSample<'a> {
    pub cloud: &'a PointCloud,
    /// `n×2` target.
    pub dgt: &'a Tensor,
    /// Success rate weighting this object, in `[0, 1]`.
    pub success_rate: f64,
}

/// Weighted loss `Σ_i sr_i · Σ_c mean_p (CP − DGT)²` and its gradient.
/// Objects with zero weight are left out of the graph entirely. Returns
/// `None` when every weight is zero.
pub fn cp_loss(params: &ContactPredictorParams, samples: &[CpSample]) -> Result<Option<(f64, Vec<Tensor>)>> {
    for s in samples {
        if !(0.0..=1.0).contains(&s.success_rate) {
            return Err(Error::InvalidArgument(format!(
                "success rate {} outside [0, 1]",
                s.success_rate
            )));
        }
        if s.dgt.dim() != (s.cloud.len(), NUM_CHANNELS) {
            return Err(Error::Shape(format!(
                "target shape {:?} for a {}-point cloud",
                s.dgt.dim(),
                s.cloud.len()
            )));
        }
    }
    let active: Vec<&CpSample> = samples.iter().filter(|s| s.success_rate > 0.0).collect();
    if active.is_empty() {
        return Ok(None);
    }
    let mut graph = Graph::new();
    let (enc, head) = (params.encoder.bind(&mut graph), params.head.bind(&mut graph));
    let mut total: Option<Var> = None;
    for s in active {
        if s.cloud.is_empty() {
            return Err(Error::Empty("contact predictor on an empty cloud".into()));
        }
        let out = record_forward(&mut graph, &enc, &head, cloud_features(s.cloud))?;
        let target = graph.leaf(s.dgt.clone());
        let diff = graph.sub(out, target)?;
        let sq = graph.square(diff);
        let sum = graph.sum(sq);
        let term = graph.scale(sum, s.success_rate / s.cloud.len() as f64);
        total = Some(match total {
            None => term,
            Some(t) => graph.add(t, term)?,
        });
    }
    let total = total.expect("at least one active sample");
    let loss = graph.value(total)[[0, 0]];
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("contact predictor loss {loss}")));
    }
    let grads = graph.backward(total)?;
    let shapes: Vec<(usize, usize)> = params.tensors().iter().map(|t| t.dim()).collect();
    let g = enc
        .vars()
        .iter()
        .chain(head.vars().iter())
        .zip(shapes)
        .map(|(&v, shape)| grads.get_or_zeros(v, shape))
        .collect();
    Ok(Some((loss, g)))
}

/// One optimizer step on the weighted loss. Returns the loss before the
/// step, or `None` (and leaves everything untouched) when all weights are
/// zero.
pub fn cp_update(
    params: &mut ContactPredictorParams,
    state: &mut AdamState,
    samples: &[CpSample],
) -> Result<Option<f64>> {
    let Some((loss, grads)) = cp_loss(params, samples)? else {
        return Ok(None);
    };
    adam_step(params, &grads, state)?;
    Ok(Some(loss))
}

/// Highest-scoring point of `channel`; ties go to the lowest index.
pub fn max_affordance_point(map: &AffordanceMap, points: &[Point], channel: ContactChannel) -> Result<(Point, usize)> {
    if map.is_empty() || points.is_empty() {
        return Err(Error::Empty("max affordance point of an empty map".into()));
    }
    if map.len() != points.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} points",
            map.len(),
            points.len()
        )));
    }
    let col = map.scores.column(channel.index());
    let mut best = 0;
    for i in 1..col.len() {
        if col[i] > col[best] {
            best = i;
        }
    }
    Ok((points[best], best))
}

#[cfg(test)]
mod tests;
