//! Deterministic 2-D quasi-static simulation of disc grippers acting on
//! articulated objects.
//!
//! Door and drawer tasks are seen from above: the cabinet front lies on
//! `y = 0` and the agent works from `+y`. Pick-and-place and the chair push
//! are seen from the side with gravity along `-y`.

mod batch;
mod object;
mod tasks;

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use batch::EnvBatch;
pub use object::{ArticulatedObject, Joint, JointKind, Link, LinkMotion};
pub use tasks::{
    agent_layouts, generate_object_family, generate_split_family, AgentLayout, ObjectFamily,
    PhysicsParams, RewardWeights, TaskId, TaskSpec, REACH_TARGET,
};

use crate::error::{Error, Result};
use crate::geometry::{sample_boundary, PartLabel, Point, PointCloud, RigidTransform, Segment};

/// Action entries per agent: velocity x, velocity y, base slide, grip.
pub const ACTION_DIM_PER_AGENT: usize = 4;
/// Longest gripper advance between penetration checks.
const SUBSTEP: f64 = 0.01;
const REST_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContactChannel {
    A2O,
    O2O,
}

impl ContactChannel {
    pub const ALL: [ContactChannel; 2] = [ContactChannel::A2O, ContactChannel::O2O];

    pub fn index(self) -> usize {
        match self {
            ContactChannel::A2O => 0,
            ContactChannel::O2O => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ContactChannel::A2O => "a2o",
            ContactChannel::O2O => "o2o",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactEvent {
    pub world: Point,
    /// Position in the canonical object frame.
    pub local: Point,
    pub channel: ContactChannel,
    pub object_id: usize,
    pub link: usize,
    pub timestep: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attachment {
    pub link: usize,
    /// Grasp point in the link frame.
    pub anchor: Point,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GripperAgent {
    pub layout: AgentLayout,
    pub position: Point,
    pub base_offset: f64,
    pub grip_closed: bool,
    pub attachment: Option<Attachment>,
}

impl GripperAgent {
    /// Current base position (anchor slid by the base offset).
    pub fn base(&self) -> Point {
        self.layout.anchor + Point::new(self.base_offset, 0.0)
    }

    pub fn relative(&self) -> Point {
        self.position - self.base()
    }
}

/// What one call to [`EnvState::step`] produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub contacts: Vec<ContactEvent>,
    pub reward: f64,
    pub done: bool,
    pub success: bool,
    /// Generalized force applied to each link's joint this step.
    pub forces: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub spec: TaskSpec,
    pub object: ArticulatedObject,
    pub agents: Vec<GripperAgent>,
    pub timestep: usize,
    pub success: bool,
    pub done: bool,
    /// Chair tipped past the threshold (dual push only).
    pub fallen: bool,
    /// The free object has been grasped at least once this episode.
    pub grasped: bool,
    progress: f64,
    tilt: f64,
    pub rng: ChaCha8Rng,
}

fn clamp_box(p: Point, lo: Point, hi: Point) -> Point {
    Point::new(p.x.clamp(lo.x, hi.x), p.y.clamp(lo.y, hi.y))
}

impl EnvState {
    /// Fresh episode on `object`: joints at the task's initial values and
    /// agents at seeded starts.
    pub fn reset(spec: &TaskSpec, object: &ArticulatedObject, seed: u64) -> Result<EnvState> {
        spec.validate()?;
        let mut object = object.clone();
        for v in object.qdot.iter_mut() {
            *v = 0.0;
        }
        for q in object.q.iter_mut() {
            *q = 0.0;
        }
        for o in object.offsets.iter_mut() {
            *o = Point::ZERO;
        }
        if matches!(spec.task, TaskId::CloseDoor | TaskId::PushDrawer) {
            let j = *object
                .joint_links()
                .first()
                .ok_or_else(|| Error::Sim("close task needs a jointed object".into()))?;
            if let LinkMotion::Joint(joint) = &mut object.links[j].motion {
                joint.stiffness = spec.restoring_stiffness;
                joint.rest = spec.initial_opening;
                object.q[j] = joint.clamp(spec.initial_opening);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let agents: Vec<GripperAgent> = agent_layouts(spec.task)
            .into_iter()
            .map(|layout| {
                let rel = Point::new(
                    rng.gen_range(layout.start_min.x..=layout.start_max.x),
                    rng.gen_range(layout.start_min.y..=layout.start_max.y),
                );
                GripperAgent {
                    layout,
                    position: layout.anchor + rel,
                    base_offset: 0.0,
                    grip_closed: false,
                    attachment: None,
                }
            })
            .collect();
        let mut env = EnvState {
            spec: spec.clone(),
            object,
            agents,
            timestep: 0,
            success: false,
            done: false,
            fallen: false,
            grasped: false,
            progress: 0.0,
            tilt: 0.0,
            rng,
        };
        env.progress = env.progress_value();
        env.tilt = env.tilt_value();
        Ok(env)
    }

    /// Resets on the same object with a seed drawn from this env's stream.
    pub fn reset_next(&mut self) -> Result<()> {
        let seed = self.rng.gen::<u64>();
        *self = EnvState::reset(&self.spec, &self.object, seed)?;
        Ok(())
    }

    pub fn action_dim(&self) -> usize {
        self.agents.len() * ACTION_DIM_PER_AGENT
    }

    /// Link of the task's primary joint (door hinge, drawer slide, chair
    /// slider).
    pub fn primary_joint(&self) -> Option<usize> {
        self.object.joint_links().first().copied()
    }

    fn tilt_joint(&self) -> Option<usize> {
        match self.spec.task {
            TaskId::DualPush => self.object.joint_links().get(1).copied(),
            _ => None,
        }
    }

    fn body_link(&self) -> Option<usize> {
        self.object.free_links().first().copied()
    }

    fn body_attached(&self) -> bool {
        let body = self.body_link();
        self.agents
            .iter()
            .any(|a| a.attachment.is_some_and(|att| Some(att.link) == body))
    }

    /// Advances one `dt`. `action` holds [`ACTION_DIM_PER_AGENT`] entries per
    /// agent, each in `[-1, 1]` (values outside are clamped). Grip closes
    /// while its entry is positive.
    pub fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::Sim("episode already done; reset before stepping".into()));
        }
        if action.len() != self.action_dim() {
            return Err(Error::Shape(format!(
                "action has {} entries, expected {}",
                action.len(),
                self.action_dim()
            )));
        }
        if action.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite("action contains NaN or infinity".into()));
        }
        let ph = self.spec.physics;
        let n_links = self.object.links.len();
        let mut contacts = Vec::new();
        let mut forces = vec![0.0; n_links];
        let mut driven = vec![false; n_links];
        let success_before = self.success;
        let grasped_before = self.grasped;

        for i in 0..self.agents.len() {
            let a: Vec<f64> = action[i * ACTION_DIM_PER_AGENT..(i + 1) * ACTION_DIM_PER_AGENT]
                .iter()
                .map(|v| v.clamp(-1.0, 1.0))
                .collect();
            let agent = &mut self.agents[i];
            let rel = agent.relative();
            agent.base_offset =
                (agent.base_offset + a[2] * ph.base_speed * ph.dt).clamp(-ph.base_range, ph.base_range);
            let rel = clamp_box(
                rel + Point::new(a[0], a[1]) * (ph.max_speed * ph.dt),
                agent.layout.reach_min,
                agent.layout.reach_max,
            );
            let target = agent.base() + rel;
            let was_attached = agent.attachment.is_some();
            self.update_grip(i, action[i * ACTION_DIM_PER_AGENT + 3] > 0.0, &mut contacts);

            // A grasp consumes the step; held parts report a contact every
            // following step.
            match self.agents[i].attachment {
                Some(_) if !was_attached => {}
                Some(att) => {
                    match self.object.links[att.link].motion {
                        LinkMotion::Free => self.carry(i, att.link, target, &mut contacts),
                        _ if !self.object.joint_chain(att.link).is_empty() => {
                            self.follow_joint(i, att, target, &mut driven)
                        }
                        _ => {}
                    }
                    let world = self.object.canonical_to_world(att.link, att.anchor);
                    contacts.push(self.contact(world, att.anchor, ContactChannel::A2O, att.link));
                }
                None => self.move_free(i, target, &mut forces, &mut contacts),
            }
        }

        for j in self.object.joint_links() {
            if driven[j] {
                continue;
            }
            let joint = *self.object.links[j].joint().expect("joint link");
            let (q, v) = joint.integrate(self.object.q[j], self.object.qdot[j], forces[j], ph.dt);
            self.object.q[j] = q;
            self.object.qdot[j] = v;
        }
        if let Some(tj) = self.tilt_joint() {
            if self.object.q[tj] >= self.spec.tip_threshold {
                let upper = self.object.links[tj].joint().expect("joint link").upper;
                self.object.q[tj] = upper;
                self.object.qdot[tj] = 0.0;
                self.fallen = true;
            }
        }

        self.timestep += 1;
        self.success = self.success || self.success_check();

        let w = self.spec.reward;
        let progress = self.progress_value();
        let tilt = self.tilt_value();
        let mut reward = -w.reach * self.reach_distance() + w.progress * (progress - self.progress);
        reward -= w.tilt * (tilt - self.tilt).max(0.0);
        if self.success && !success_before {
            reward += w.success;
        }
        if self.grasped && !grasped_before {
            reward += w.grasp;
        }
        self.progress = progress;
        self.tilt = tilt;

        self.done = self.timestep >= self.spec.horizon
            || (self.success && self.spec.terminate_on_success)
            || self.fallen;
        Ok(StepOutcome {
            contacts,
            reward,
            done: self.done,
            success: self.success,
            forces,
        })
    }

    fn contact(&self, world: Point, local: Point, channel: ContactChannel, link: usize) -> ContactEvent {
        ContactEvent {
            world,
            local,
            channel,
            object_id: self.object.id,
            link,
            timestep: self.timestep,
        }
    }

    /// Closest graspable surface point within grasp radius of `p`.
    fn nearest_graspable(&self, p: Point) -> Option<(usize, Point)> {
        let mut best: Option<(f64, usize, Point)> = None;
        for (li, link) in self.object.links.iter().enumerate() {
            let tf = self.object.link_world(li);
            let local = tf.to_local(p);
            for s in link.shape.segments.iter().filter(|s| s.label.graspable()) {
                let (c, _) = s.closest_point(local);
                let d = c.distance(local);
                if d <= self.spec.physics.grasp_radius && best.is_none_or(|(bd, _, _)| d < bd) {
                    best = Some((d, li, tf.apply(c)));
                }
            }
        }
        best.map(|(_, l, w)| (l, w))
    }

    /// Closing within grasp radius of a graspable part attaches; opening
    /// releases, and a released free object settles under gravity.
    fn update_grip(&mut self, i: usize, close: bool, contacts: &mut Vec<ContactEvent>) {
        let closed = self.agents[i].grip_closed;
        if close && !closed {
            self.agents[i].grip_closed = true;
            if let Some((link, world)) = self.nearest_graspable(self.agents[i].position) {
                let anchor = self.object.world_to_canonical(link, world);
                self.agents[i].attachment = Some(Attachment { link, anchor });
                match self.object.links[link].motion {
                    LinkMotion::Free => self.grasped = true,
                    _ => self.agents[i].position = world,
                }
                contacts.push(self.contact(world, anchor, ContactChannel::A2O, link));
            }
        } else if !close && closed {
            self.agents[i].grip_closed = false;
            if let Some(att) = self.agents[i].attachment.take() {
                if matches!(self.object.links[att.link].motion, LinkMotion::Free) && !self.body_attached() {
                    self.settle(att.link, contacts);
                }
            }
        }
    }

    /// Drives the attached link's nearest joint so the grasp point tracks
    /// `target`, then places the gripper on the grasp point.
    fn follow_joint(&mut self, i: usize, att: Attachment, target: Point, driven: &mut [bool]) {
        let j = self.object.joint_chain(att.link)[0];
        let joint = *self.object.links[j].joint().expect("joint link");
        let p = self.object.canonical_to_world(att.link, att.anchor);
        let dq = match joint.kind {
            JointKind::Revolute { anchor, direction } => {
                let parent = match self.object.links[j].parent {
                    Some(pl) => self.object.link_world(pl),
                    None => self.object.base,
                };
                let pivot = parent.apply(anchor);
                let (u, v) = (p - pivot, target - pivot);
                direction * u.cross(v).atan2(u.dot(v))
            }
            JointKind::Prismatic { .. } => (target - p).dot(self.object.jacobian(j, p)),
        };
        let q = self.object.q[j];
        let next = joint.clamp(q + dq);
        self.object.qdot[j] = (next - q) / self.spec.physics.dt;
        self.object.q[j] = next;
        driven[j] = true;
        self.agents[i].position = self.object.canonical_to_world(att.link, att.anchor);
    }

    fn static_links(&self, exclude: usize) -> Vec<usize> {
        (0..self.object.links.len())
            .filter(|&l| l != exclude && !self.object.links[l].shape.segments.is_empty())
            .collect()
    }

    fn body_overlaps(&self, body: usize, statics: &[usize]) -> Option<usize> {
        let shape = self.object.world_shape(body);
        statics
            .iter()
            .copied()
            .find(|&l| shape.overlaps(&self.object.world_shape(l)))
    }

    /// Moves a grasped free object rigidly with the gripper. Motion that
    /// would overlap other geometry is cut short and reported as an O2O
    /// contact on the blocking part.
    fn carry(&mut self, i: usize, body: usize, target: Point, contacts: &mut Vec<ContactEvent>) {
        let start = self.agents[i].position;
        let delta = target - start;
        let statics = self.static_links(body);
        let origin = self.object.offsets[body];
        let place = |env: &mut EnvState, f: f64| env.object.offsets[body] = origin + delta * f;
        place(self, 1.0);
        let Some(blocker) = self.body_overlaps(body, &statics) else {
            self.agents[i].position = start + delta;
            return;
        };
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..30 {
            let mid = 0.5 * (lo + hi);
            place(self, mid);
            if self.body_overlaps(body, &statics).is_some() {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        place(self, lo);
        self.agents[i].position = start + delta * lo;
        let body_segs = self.object.world_shape(body).segments;
        let block_segs = self.object.world_shape(blocker).segments;
        if let Some(world) = closest_on(&block_segs, &body_segs) {
            let local = self.object.world_to_canonical(blocker, world);
            contacts.push(self.contact(world, local, ContactChannel::O2O, blocker));
        }
    }

    /// Drops a released free object straight down onto whatever lies below.
    fn settle(&mut self, body: usize, contacts: &mut Vec<ContactEvent>) {
        let body_segs = self.object.world_shape(body).segments;
        let mut statics = Vec::new();
        for l in self.static_links(body) {
            for s in self.object.world_shape(l).segments {
                statics.push((l, s));
            }
        }
        let Some((gap, link, world)) = drop_gap(&body_segs, &statics) else {
            return;
        };
        self.object.offsets[body] = self.object.offsets[body] - Point::new(0.0, gap);
        let local = self.object.world_to_canonical(link, world);
        contacts.push(self.contact(world, local, ContactChannel::O2O, link));
    }

    /// Unattached motion: advance in substeps, projecting the disc out of
    /// any boundary it penetrates. Accumulated penetration per link becomes
    /// a capped penalty force transferred to the link's joints.
    fn move_free(&mut self, i: usize, target: Point, forces: &mut [f64], contacts: &mut Vec<ContactEvent>) {
        let ph = self.spec.physics;
        let mut pos = self.agents[i].position;
        let delta = target - pos;
        let dist = delta.norm();
        if dist == 0.0 && !self.penetrating(pos) {
            return;
        }
        let n_sub = ((dist / SUBSTEP).ceil() as usize).max(1);
        let step = delta * (1.0 / n_sub as f64);
        let frames: Vec<RigidTransform> = (0..self.object.links.len())
            .map(|l| self.object.link_world(l))
            .collect();
        let mut depth_sum = vec![0.0; frames.len()];
        let mut deepest: Vec<Option<(f64, Point, Point)>> = vec![None; frames.len()];
        for _ in 0..n_sub {
            pos = pos + step;
            for (l, tf) in frames.iter().enumerate() {
                let local = tf.to_local(pos);
                let Some((c, d)) = nearest_solid(&self.object.links[l].shape.segments, local) else {
                    continue;
                };
                if d >= ph.gripper_radius {
                    continue;
                }
                let surface = tf.apply(c);
                let normal = if d > 1e-12 {
                    (pos - surface) * (1.0 / d)
                } else if dist > 0.0 {
                    -delta * (1.0 / dist)
                } else {
                    Point::new(0.0, 1.0)
                };
                let depth = ph.gripper_radius - d;
                pos = surface + normal * ph.gripper_radius;
                depth_sum[l] += depth;
                if deepest[l].is_none_or(|(dd, _, _)| depth > dd) {
                    deepest[l] = Some((depth, surface, normal));
                }
            }
        }
        self.agents[i].position = pos;
        for l in 0..frames.len() {
            let Some((_, surface, normal)) = deepest[l] else {
                continue;
            };
            let magnitude = (ph.contact_stiffness * depth_sum[l]).min(ph.max_force);
            let push = -normal * magnitude;
            for j in self.object.joint_chain(l) {
                forces[j] += self.object.jacobian(j, surface).dot(push);
            }
            let local = frames[l].to_local(surface);
            contacts.push(self.contact(surface, local, ContactChannel::A2O, l));
        }
    }

    fn penetrating(&self, p: Point) -> bool {
        (0..self.object.links.len()).any(|l| {
            let local = self.object.link_world(l).to_local(p);
            nearest_solid(&self.object.links[l].shape.segments, local)
                .is_some_and(|(_, d)| d < self.spec.physics.gripper_radius)
        })
    }

    /// Task progress in `[0, 1]`.
    fn progress_value(&self) -> f64 {
        let s = &self.spec;
        let joint = self.primary_joint().map(|j| self.object.q[j]).unwrap_or(0.0);
        match s.task {
            TaskId::Reach => 0.0,
            TaskId::OpenDoor | TaskId::PullDrawer | TaskId::DualPush => (joint / s.target).clamp(0.0, 1.0),
            TaskId::CloseDoor | TaskId::PushDrawer => {
                ((s.initial_opening - joint) / (s.initial_opening - s.close_epsilon)).clamp(0.0, 1.0)
            }
            TaskId::PickPlace => {
                let (Some(body), Some((y, x0, x1))) = (self.body_link(), self.support_top()) else {
                    return 0.0;
                };
                let (lo, hi) = self.object.world_shape(body).bounds();
                let cx = 0.5 * (lo.x + hi.x);
                let dx = (x0 - cx).max(cx - x1).max(0.0);
                0.5 * (lo.y / y).clamp(0.0, 1.0) + 0.5 * (1.0 - (dx / 0.6).clamp(0.0, 1.0))
            }
        }
    }

    fn tilt_value(&self) -> f64 {
        self.tilt_joint().map(|j| self.object.q[j]).unwrap_or(0.0)
    }

    /// Height and x-extent of the topmost support surface.
    fn support_top(&self) -> Option<(f64, f64, f64)> {
        let mut best: Option<(f64, f64, f64)> = None;
        for l in 0..self.object.links.len() {
            for s in self.object.world_shape(l).segments {
                if s.label == PartLabel::Support && best.is_none_or(|b| s.a.y > b.0) {
                    best = Some((s.a.y, s.a.x.min(s.b.x), s.a.x.max(s.b.x)));
                }
            }
        }
        best
    }

    /// Distance term of the shaped reward.
    fn reach_distance(&self) -> f64 {
        let agents = &self.agents;
        match self.spec.task {
            TaskId::Reach => agents[0].position.distance(REACH_TARGET),
            TaskId::PickPlace => {
                if self.body_attached() {
                    0.0
                } else {
                    let body = self.body_link().expect("scene has a free object");
                    self.object.distance_to_link(body, agents[0].position)
                }
            }
            TaskId::DualPush => {
                let chair = self.tilt_joint().expect("chair has a tilt link");
                agents
                    .iter()
                    .map(|a| self.object.distance_to_link(chair, a.position))
                    .sum::<f64>()
                    / agents.len() as f64
            }
            _ => {
                let link = self.primary_joint().expect("jointed object");
                self.object.distance_to_link(link, agents[0].position)
            }
        }
    }

    /// Whether the object is placed on the table without touching an
    /// obstacle.
    pub fn placement_ok(&self) -> bool {
        let Some(body) = self.body_link() else {
            return false;
        };
        if self.body_attached() {
            return false;
        }
        let shape = self.object.world_shape(body);
        let (lo, hi) = shape.bounds();
        let on_support = (0..self.object.links.len()).filter(|&l| l != body).any(|l| {
            self.object.world_shape(l).segments.iter().any(|s| {
                s.label == PartLabel::Support
                    && (s.a.y - lo.y).abs() <= REST_TOLERANCE
                    && (s.b.y - lo.y).abs() <= REST_TOLERANCE
                    && lo.x >= s.a.x.min(s.b.x)
                    && hi.x <= s.a.x.max(s.b.x)
            })
        });
        if !on_support {
            return false;
        }
        let clearance = self.spec.placement_clearance;
        (0..self.object.links.len()).filter(|&l| l != body).all(|l| {
            let other = self.object.world_shape(l);
            if !other.segments.iter().any(|s| s.label == PartLabel::Obstacle) {
                return true;
            }
            if shape.overlaps(&other) {
                return false;
            }
            let (olo, ohi) = other.bounds();
            let gap = (olo.x - hi.x).max(lo.x - ohi.x);
            gap >= clearance
        })
    }

    /// The task's success predicate on the current state.
    pub fn success_check(&self) -> bool {
        let s = &self.spec;
        let joint = || self.primary_joint().map(|j| self.object.q[j]).unwrap_or(0.0);
        match s.task {
            TaskId::Reach => self.agents[0].position.distance(REACH_TARGET) <= s.target,
            TaskId::OpenDoor | TaskId::PullDrawer => joint() >= s.target,
            TaskId::CloseDoor | TaskId::PushDrawer => joint() <= s.close_epsilon,
            TaskId::PickPlace => self.placement_ok(),
            TaskId::DualPush => {
                !self.fallen && joint() >= s.target && self.tilt_value().abs() < s.tip_threshold
            }
        }
    }

    /// Arm and task state: per agent position, base offset, grip and
    /// attachment flags; then each joint's value and velocity; then each
    /// free object's displacement.
    pub fn state_vector(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.state_dim());
        for a in &self.agents {
            out.extend([
                a.position.x,
                a.position.y,
                a.base_offset,
                f64::from(u8::from(a.grip_closed)),
                f64::from(u8::from(a.attachment.is_some())),
            ]);
        }
        for j in self.object.joint_links() {
            out.push(self.object.q[j]);
            out.push(self.object.qdot[j]);
        }
        for f in self.object.free_links() {
            out.push(self.object.offsets[f].x);
            out.push(self.object.offsets[f].y);
        }
        out
    }

    pub fn state_dim(&self) -> usize {
        5 * self.agents.len() + 2 * self.object.joint_links().len() + 2 * self.object.free_links().len()
    }

    /// One line of the episode log.
    pub fn log_record(&self, outcome: &StepOutcome) -> String {
        let mut line = format!("t={} object={} agents=", self.timestep, self.object.id);
        for (i, a) in self.agents.iter().enumerate() {
            if i > 0 {
                line.push(';');
            }
            let _ = write!(
                line,
                "{:.6},{:.6},{:.6},{},{}",
                a.position.x,
                a.position.y,
                a.base_offset,
                if a.grip_closed { "closed" } else { "open" },
                a.attachment.map_or("-".to_string(), |att| att.link.to_string())
            );
        }
        line.push_str(" joints=");
        let joints: Vec<String> = self
            .object
            .joint_links()
            .iter()
            .map(|&j| format!("{:.6}", self.object.q[j]))
            .collect();
        line.push_str(&joints.join(","));
        line.push_str(" contacts=");
        let cs: Vec<String> = outcome
            .contacts
            .iter()
            .map(|c| format!("{}@{}:{:.6},{:.6}", c.channel.name(), c.link, c.local.x, c.local.y))
            .collect();
        line.push_str(if cs.is_empty() { "-" } else { "" });
        line.push_str(&cs.join(";"));
        let _ = write!(
            line,
            " reward={:.6} success={} done={}",
            outcome.reward,
            u8::from(outcome.success),
            u8::from(outcome.done)
        );
        line
    }
}

/// Nearest point among segments the gripper collides with (markers are
/// intangible).
fn nearest_solid(segments: &[Segment], p: Point) -> Option<(Point, f64)> {
    let mut best: Option<(Point, f64)> = None;
    for s in segments.iter().filter(|s| s.label != PartLabel::Marker) {
        let (c, _) = s.closest_point(p);
        let d = c.distance(p);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((c, d));
        }
    }
    best
}

/// Point on `on` closest to any vertex of `other`, or a vertex of `on`
/// closest to `other`.
fn closest_on(on: &[Segment], other: &[Segment]) -> Option<Point> {
    let mut best: Option<(f64, Point)> = None;
    let mut consider = |d: f64, p: Point| {
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, p));
        }
    };
    for s in on {
        for o in other {
            for v in [o.a, o.b] {
                let (c, _) = s.closest_point(v);
                consider(c.distance(v), c);
            }
            for v in [s.a, s.b] {
                consider(o.distance_to(v), v);
            }
        }
    }
    best.map(|(_, p)| p)
}

fn height_at(s: &Segment, x: f64) -> Option<f64> {
    let (x0, x1) = (s.a.x.min(s.b.x), s.a.x.max(s.b.x));
    if x < x0 || x > x1 || s.a.x == s.b.x {
        return None;
    }
    let t = (x - s.a.x) / (s.b.x - s.a.x);
    Some(s.a.y + t * (s.b.y - s.a.y))
}

/// Vertical free fall distance of `body` onto `statics`, with the landing
/// point on the static part. Several equally near landing points on the same
/// segment are averaged.
fn drop_gap(body: &[Segment], statics: &[(usize, Segment)]) -> Option<(f64, usize, Point)> {
    let mut hits: Vec<(f64, usize, Point)> = Vec::new();
    for (si, (_, s)) in statics.iter().enumerate() {
        for b in body {
            for v in [b.a, b.b] {
                if let Some(y) = height_at(s, v.x) {
                    if y <= v.y + 1e-12 {
                        hits.push(((v.y - y).max(0.0), si, Point::new(v.x, y)));
                    }
                }
            }
            for v in [s.a, s.b] {
                if let Some(y) = height_at(b, v.x) {
                    if y >= v.y - 1e-12 {
                        hits.push(((y - v.y).max(0.0), si, v));
                    }
                }
            }
        }
    }
    let gap = hits.iter().map(|h| h.0).fold(f64::INFINITY, f64::min);
    if !gap.is_finite() {
        return None;
    }
    let first = hits.iter().find(|h| h.0 <= gap + 1e-12)?.1;
    let same: Vec<Point> = hits
        .iter()
        .filter(|h| h.1 == first && h.0 <= gap + 1e-12)
        .map(|h| h.2)
        .collect();
    let mean = same.iter().fold(Point::ZERO, |acc, &p| acc + p) * (1.0 / same.len() as f64);
    let (link, seg) = statics[first];
    let (on, _) = seg.closest_point(mean);
    Some((gap, link, on))
}

/// Boundary samples of an object's canonical geometry with the owning link
/// of each point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectCloud {
    pub cloud: PointCloud,
    pub links: Vec<usize>,
}

impl ObjectCloud {
    pub fn sample(object: &ArticulatedObject, n: usize, seed: u64) -> Result<ObjectCloud> {
        let (shape, owners) = object.canonical_segments();
        let mut cloud = sample_boundary(&shape, n, seed)?;
        cloud.object_id = object.id;
        let links = cloud.segments.iter().map(|&s| owners[s]).collect();
        Ok(ObjectCloud { cloud, links })
    }

    pub fn len(&self) -> usize {
        self.cloud.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cloud.is_empty()
    }

    /// Points carried to the world through each link's current pose.
    pub fn world_points(&self, object: &ArticulatedObject) -> Vec<Point> {
        let frames: Vec<RigidTransform> = (0..object.links.len()).map(|l| object.link_world(l)).collect();
        self.cloud
            .points
            .iter()
            .zip(&self.links)
            .map(|(&p, &l)| frames[l].apply(p))
            .collect()
    }
}
