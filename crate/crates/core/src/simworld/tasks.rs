//! Task definitions and procedural object families.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::object::{ArticulatedObject, Joint, JointKind, Link, LinkMotion};
use crate::error::{Error, Result};
use crate::geometry::{BoundaryShape, PartLabel, Point, RigidTransform, Segment};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskId {
    /// Toy task: bring the gripper near a fixed marker.
    Reach,
    OpenDoor,
    CloseDoor,
    PullDrawer,
    PushDrawer,
    PickPlace,
    DualPush,
}

impl TaskId {
    pub const ALL: [TaskId; 7] = [
        TaskId::Reach,
        TaskId::OpenDoor,
        TaskId::CloseDoor,
        TaskId::PullDrawer,
        TaskId::PushDrawer,
        TaskId::PickPlace,
        TaskId::DualPush,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskId::Reach => "reach",
            TaskId::OpenDoor => "open_door",
            TaskId::CloseDoor => "close_door",
            TaskId::PullDrawer => "pull_drawer",
            TaskId::PushDrawer => "push_drawer",
            TaskId::PickPlace => "pick_place",
            TaskId::DualPush => "dual_push",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            TaskId::Reach => "move the gripper within reach radius of a fixed marker",
            TaskId::OpenDoor => "grasp the handle of a closed door and open it past the target angle",
            TaskId::CloseDoor => "push a spring-loaded open door fully closed",
            TaskId::PullDrawer => "grasp a closed drawer's handle and pull it out past the target distance",
            TaskId::PushDrawer => "push a spring-loaded open drawer fully closed",
            TaskId::PickPlace => "pick an object off the floor and set it on a cluttered table without collision",
            TaskId::DualPush => "two grippers push a chair past the target distance without tipping it over",
        }
    }

    pub fn num_agents(self) -> usize {
        match self {
            TaskId::DualPush => 2,
            _ => 1,
        }
    }

    /// Part labels present in this task's objects, in mask order.
    pub fn labels(self) -> &'static [PartLabel] {
        match self {
            TaskId::Reach => &[PartLabel::Marker],
            TaskId::OpenDoor | TaskId::CloseDoor | TaskId::PullDrawer | TaskId::PushDrawer => {
                &[PartLabel::Frame, PartLabel::Panel, PartLabel::Handle]
            }
            TaskId::PickPlace => &[
                PartLabel::Frame,
                PartLabel::Body,
                PartLabel::Support,
                PartLabel::Obstacle,
            ],
            TaskId::DualPush => &[PartLabel::Seat, PartLabel::Back, PartLabel::Leg],
        }
    }

    /// Whether object-to-object contacts occur in this task.
    pub fn has_o2o(self) -> bool {
        matches!(self, TaskId::PickPlace)
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        TaskId::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown task {s:?}")))
    }
}

/// Per-step reward weights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardWeights {
    /// Penalty per metre between gripper and the task's target part.
    pub reach: f64,
    /// Reward for progress of the task variable, normalised so full progress
    /// sums to this value.
    pub progress: f64,
    /// One-off bonus on the step success is first reached.
    pub success: f64,
    /// One-off bonus on the first grasp of the pick-and-place object.
    pub grasp: f64,
    /// Penalty per radian of chair tilt increase.
    pub tilt: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            reach: 0.1,
            progress: 2.0,
            success: 2.0,
            grasp: 0.5,
            tilt: 1.0,
        }
    }
}

/// Gripper and contact parameters shared by all tasks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhysicsParams {
    pub dt: f64,
    pub gripper_radius: f64,
    pub grasp_radius: f64,
    /// Maximum gripper speed (m/s) relative to its base.
    pub max_speed: f64,
    /// Maximum base slide speed (m/s).
    pub base_speed: f64,
    /// Base slide range `[-base_range, base_range]`.
    pub base_range: f64,
    /// Penalty-contact stiffness (N/m) mapping penetration to force.
    pub contact_stiffness: f64,
    /// Force cap per contact (N).
    pub max_force: f64,
}

impl Default for PhysicsParams {
    fn default() -> Self {
        Self {
            dt: 0.05,
            gripper_radius: 0.02,
            grasp_radius: 0.05,
            max_speed: 0.6,
            base_speed: 0.3,
            base_range: 0.2,
            contact_stiffness: 60.0,
            max_force: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskSpec {
    pub task: TaskId,
    pub horizon: usize,
    /// Target joint value (angle, distance or displacement) or, for reach,
    /// the success radius.
    pub target: f64,
    /// Joint value at or below which close/push tasks count as closed.
    pub close_epsilon: f64,
    /// Initial opening for close/push tasks.
    pub initial_opening: f64,
    /// Restoring stiffness toward the initial opening for close/push tasks.
    pub restoring_stiffness: f64,
    /// Chair tilt (rad) at which it falls over.
    pub tip_threshold: f64,
    /// Minimum horizontal gap between a placed object and any obstacle.
    pub placement_clearance: f64,
    pub terminate_on_success: bool,
    pub reward: RewardWeights,
    pub physics: PhysicsParams,
}

impl Default for TaskSpec {
    fn default() -> Self {
        TaskSpec::for_task(TaskId::OpenDoor)
    }
}

impl TaskSpec {
    /// Defaults for `task`.
    pub fn for_task(task: TaskId) -> Self {
        let base = TaskSpec {
            task,
            horizon: 200,
            target: 0.0,
            close_epsilon: 0.0,
            initial_opening: 0.0,
            restoring_stiffness: 0.0,
            tip_threshold: 0.3,
            placement_clearance: 0.0,
            terminate_on_success: true,
            reward: RewardWeights::default(),
            physics: PhysicsParams::default(),
        };
        match task {
            TaskId::Reach => TaskSpec {
                horizon: 100,
                target: 0.1,
                ..base
            },
            TaskId::OpenDoor => TaskSpec {
                target: 0.5,
                ..base
            },
            TaskId::CloseDoor => TaskSpec {
                close_epsilon: 0.05,
                initial_opening: 0.9,
                restoring_stiffness: 0.3,
                ..base
            },
            TaskId::PullDrawer => TaskSpec {
                target: 0.2,
                ..base
            },
            TaskId::PushDrawer => TaskSpec {
                close_epsilon: 0.02,
                initial_opening: 0.25,
                restoring_stiffness: 2.0,
                ..base
            },
            TaskId::PickPlace => TaskSpec {
                horizon: 400,
                ..base
            },
            TaskId::DualPush => TaskSpec {
                horizon: 300,
                target: 0.25,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("task.horizon must be at least 1".into()));
        }
        if !(self.physics.dt > 0.0) {
            return Err(Error::Config("task.physics.dt must be positive".into()));
        }
        match self.task {
            TaskId::Reach if !(self.target > 0.0) => {
                return Err(Error::Config("task.target (reach radius) must be positive".into()))
            }
            TaskId::OpenDoor if !(self.target > 0.0 && self.target <= DOOR_UPPER) => {
                return Err(Error::Config(format!(
                    "task.target must lie in (0, {DOOR_UPPER}] for open_door"
                )))
            }
            TaskId::PullDrawer if !(self.target > 0.0 && self.target <= DRAWER_MIN_TRAVEL) => {
                return Err(Error::Config(format!(
                    "task.target must lie in (0, {DRAWER_MIN_TRAVEL}] for pull_drawer"
                )))
            }
            TaskId::CloseDoor if !(self.initial_opening > self.close_epsilon && self.initial_opening <= DOOR_UPPER) => {
                return Err(Error::Config("task.initial_opening must exceed close_epsilon and stay within the door limit".into()))
            }
            TaskId::PushDrawer if !(self.initial_opening > self.close_epsilon && self.initial_opening <= DRAWER_MIN_TRAVEL) => {
                return Err(Error::Config("task.initial_opening must exceed close_epsilon and stay within drawer travel".into()))
            }
            TaskId::DualPush if !(self.target > 0.0 && self.target <= CHAIR_TRAVEL) => {
                return Err(Error::Config(format!(
                    "task.target must lie in (0, {CHAIR_TRAVEL}] for dual_push"
                )))
            }
            _ => {}
        }
        Ok(())
    }
}

pub(crate) const DOOR_UPPER: f64 = 1.4;
pub(crate) const DRAWER_MIN_TRAVEL: f64 = 0.28;
pub(crate) const CHAIR_TRAVEL: f64 = 0.6;
pub(crate) const HANDLE_STANDOFF: f64 = 0.04;
/// Marker position for the reach task.
pub const REACH_TARGET: Point = Point::new(0.15, 0.35);

/// Where the agent(s) live in world coordinates for a task.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentLayout {
    /// Base anchor at zero slide offset.
    pub anchor: Point,
    /// Reach box of the gripper relative to the (slid) base.
    pub reach_min: Point,
    pub reach_max: Point,
    /// Box within the reach box where episodes start.
    pub start_min: Point,
    pub start_max: Point,
}

pub fn agent_layouts(task: TaskId) -> Vec<AgentLayout> {
    match task {
        TaskId::Reach | TaskId::OpenDoor | TaskId::CloseDoor | TaskId::PullDrawer | TaskId::PushDrawer => {
            vec![AgentLayout {
                anchor: Point::new(0.0, 0.45),
                reach_min: Point::new(-0.45, -0.43),
                reach_max: Point::new(0.45, 0.25),
                start_min: Point::new(-0.3, -0.1),
                start_max: Point::new(0.3, 0.2),
            }]
        }
        TaskId::PickPlace => vec![AgentLayout {
            anchor: Point::new(-0.1, 0.5),
            reach_min: Point::new(-0.6, -0.48),
            reach_max: Point::new(0.6, 0.3),
            start_min: Point::new(-0.4, -0.1),
            start_max: Point::new(0.05, 0.2),
        }],
        TaskId::DualPush => vec![
            AgentLayout {
                anchor: Point::new(-0.3, 0.12),
                reach_min: Point::new(-0.2, -0.1),
                reach_max: Point::new(0.6, 0.3),
                start_min: Point::new(-0.15, -0.05),
                start_max: Point::new(0.0, 0.1),
            },
            AgentLayout {
                anchor: Point::new(-0.3, 0.42),
                reach_min: Point::new(-0.2, -0.4),
                reach_max: Point::new(0.6, 0.2),
                start_min: Point::new(-0.15, -0.1),
                start_max: Point::new(0.0, 0.1),
            },
        ],
    }
}

/// Generated objects of one task, with a disjoint train/test split by id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectFamily {
    pub task: TaskId,
    pub objects: Vec<ArticulatedObject>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl ObjectFamily {
    pub fn train_objects(&self) -> Vec<ArticulatedObject> {
        self.train.iter().map(|&i| self.objects[i].clone()).collect()
    }

    pub fn test_objects(&self) -> Vec<ArticulatedObject> {
        self.test.iter().map(|&i| self.objects[i].clone()).collect()
    }
}

/// Generates `count` objects for `task`. Object ids are `0..count`.
pub fn generate_object_family(task: TaskId, count: usize, seed: u64) -> Result<Vec<ArticulatedObject>> {
    if count == 0 {
        return Err(Error::InvalidArgument("object count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ task_salt(task));
    // Stratified positions in [0, 1) so key geometric parameters are distinct.
    let mut strata: Vec<usize> = (0..count).collect();
    strata.shuffle(&mut rng);
    let mut out = Vec::with_capacity(count);
    for (id, &slot) in strata.iter().enumerate() {
        let u = (slot as f64 + rng.gen_range(0.1..0.9)) / count as f64;
        let obj = match task {
            TaskId::Reach => reach_marker(id, &mut rng),
            TaskId::OpenDoor | TaskId::CloseDoor => door(id, u, id % 2 == 0, &mut rng),
            TaskId::PullDrawer | TaskId::PushDrawer => drawer(id, u, &mut rng),
            TaskId::PickPlace => pick_place_scene(id, u, &mut rng),
            TaskId::DualPush => chair(id, u, &mut rng),
        };
        out.push(obj);
    }
    Ok(out)
}

/// Generates `train + test` objects and splits them by a seeded shuffle.
pub fn generate_split_family(task: TaskId, train: usize, test: usize, seed: u64) -> Result<ObjectFamily> {
    let objects = generate_object_family(task, train + test, seed)?;
    let mut ids: Vec<usize> = (0..objects.len()).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5eed)));
    let (tr, te) = ids.split_at(train);
    let mut tr = tr.to_vec();
    let mut te = te.to_vec();
    tr.sort_unstable();
    te.sort_unstable();
    Ok(ObjectFamily {
        task,
        objects,
        train: tr,
        test: te,
    })
}

fn task_salt(task: TaskId) -> u64 {
    0x9e37_79b9_7f4a_7c15u64.wrapping_mul(task as u64 + 1)
}

fn seg(ax: f64, ay: f64, bx: f64, by: f64, label: PartLabel) -> Segment {
    Segment::new(Point::new(ax, ay), Point::new(bx, by), label)
}

fn fixed_link(name: &str, segments: Vec<Segment>) -> Link {
    Link {
        name: name.into(),
        parent: None,
        motion: LinkMotion::Fixed,
        shape: BoundaryShape::new(segments),
    }
}

/// Handle as two standoffs and a bar, centred at `center` along x, sitting
/// `HANDLE_STANDOFF` in front of the panel (+y).
fn handle_segments(center: f64, length: f64) -> Vec<Segment> {
    let (l, r) = (center - length / 2.0, center + length / 2.0);
    let h = HANDLE_STANDOFF;
    vec![
        seg(l, 0.0, l, h, PartLabel::Handle),
        seg(l, h, r, h, PartLabel::Handle),
        seg(r, h, r, 0.0, PartLabel::Handle),
    ]
}

fn reach_marker(id: usize, rng: &mut ChaCha8Rng) -> ArticulatedObject {
    let arm = rng.gen_range(0.03..0.05);
    let c = REACH_TARGET;
    let marker = fixed_link(
        "marker",
        vec![
            seg(c.x - arm, c.y, c.x + arm, c.y, PartLabel::Marker),
            seg(c.x, c.y - arm, c.x, c.y + arm, PartLabel::Marker),
        ],
    );
    ArticulatedObject::new(id, RigidTransform::IDENTITY, vec![marker], format!("marker arm={arm:.4}"))
}

/// Cabinet door seen from above. The hinge sits at the object origin; the
/// panel extends along +x (left hinge) or -x (right hinge) and opens toward
/// +y, where the agent is.
fn door(id: usize, u: f64, hinge_left: bool, rng: &mut ChaCha8Rng) -> ArticulatedObject {
    let s = if hinge_left { 1.0 } else { -1.0 };
    let width = rng.gen_range(0.35..0.55);
    let handle_len = rng.gen_range(0.06..0.1);
    let lo = handle_len / 2.0 + 0.03;
    let hi = width - handle_len / 2.0 - 0.01;
    let center = lo + u * (hi - lo);
    let frame = fixed_link(
        "frame",
        vec![
            seg(-s * 0.12, 0.0, -s * 0.005, 0.0, PartLabel::Frame),
            seg(s * (width + 0.008), 0.0, s * (width + 0.12), 0.0, PartLabel::Frame),
        ],
    );
    let mut panel = vec![seg(0.0, 0.0, s * width, 0.0, PartLabel::Panel)];
    panel.extend(handle_segments(s * center, handle_len));
    let joint = Joint {
        kind: JointKind::Revolute {
            anchor: Point::ZERO,
            direction: s,
        },
        lower: 0.0,
        upper: DOOR_UPPER,
        damping: 0.2,
        friction: 0.02,
        stiffness: 0.0,
        rest: 0.0,
        inertia: 0.05,
    };
    let door = Link {
        name: "door".into(),
        parent: None,
        motion: LinkMotion::Joint(joint),
        shape: BoundaryShape::new(panel),
    };
    let base = RigidTransform::translation(Point::new(-s * width / 2.0, 0.0));
    let desc = format!(
        "door hinge={} width={width:.4} handle_center={center:.4} handle_len={handle_len:.4}",
        if hinge_left { "left" } else { "right" }
    );
    ArticulatedObject::new(id, base, vec![frame, door], desc)
}

/// Drawer seen from above, sliding out along +y.
fn drawer(id: usize, u: f64, rng: &mut ChaCha8Rng) -> ArticulatedObject {
    let width = rng.gen_range(0.3..0.5);
    let depth = rng.gen_range(0.3..0.45);
    let handle_len = rng.gen_range(0.06..0.1);
    let span = width / 2.0 - handle_len / 2.0 - 0.02;
    let center = (2.0 * u - 1.0) * span;
    let half = width / 2.0;
    let frame = fixed_link(
        "frame",
        vec![
            seg(-half - 0.12, 0.0, -half - 0.005, 0.0, PartLabel::Frame),
            seg(half + 0.005, 0.0, half + 0.12, 0.0, PartLabel::Frame),
        ],
    );
    let mut box_segs = vec![
        seg(-half, 0.0, half, 0.0, PartLabel::Panel),
        seg(-half, 0.0, -half, -depth, PartLabel::Panel),
        seg(half, 0.0, half, -depth, PartLabel::Panel),
        seg(-half, -depth, half, -depth, PartLabel::Panel),
    ];
    box_segs.extend(handle_segments(center, handle_len));
    let joint = Joint {
        kind: JointKind::Prismatic {
            axis: Point::new(0.0, 1.0),
        },
        lower: 0.0,
        upper: depth - 0.02,
        damping: 2.0,
        friction: 0.05,
        stiffness: 0.0,
        rest: 0.0,
        inertia: 0.5,
    };
    let drawer = Link {
        name: "drawer".into(),
        parent: None,
        motion: LinkMotion::Joint(joint),
        shape: BoundaryShape::new(box_segs),
    };
    let desc = format!("drawer width={width:.4} depth={depth:.4} handle_center={center:.4} handle_len={handle_len:.4}");
    ArticulatedObject::new(id, RigidTransform::IDENTITY, vec![frame, drawer], desc)
}

/// Side view: floor, a table with obstacles on top, and a free object on the
/// floor to the left of the table.
fn pick_place_scene(id: usize, u: f64, rng: &mut ChaCha8Rng) -> ArticulatedObject {
    let top = rng.gen_range(0.22..0.32);
    let x1 = rng.gen_range(0.0..0.08);
    let width = rng.gen_range(0.38..0.55);
    let x2 = x1 + width;
    let kind = id % 4;
    let mut table = vec![seg(x1, top, x2, top, PartLabel::Support)];
    let legs = match kind {
        // square: two straight legs
        0 => vec![seg(x1 + 0.02, top, x1 + 0.02, 0.0, PartLabel::Frame), seg(x2 - 0.02, top, x2 - 0.02, 0.0, PartLabel::Frame)],
        // round: one pedestal
        1 => {
            let m = (x1 + x2) / 2.0;
            vec![seg(m, top, m, 0.02, PartLabel::Frame), seg(m - 0.1, 0.02, m + 0.1, 0.02, PartLabel::Frame)]
        }
        // triangle: splayed legs
        2 => vec![seg(x1 + 0.08, top, x1 + 0.01, 0.0, PartLabel::Frame), seg(x2 - 0.08, top, x2 - 0.01, 0.0, PartLabel::Frame)],
        // irregular: uneven legs
        _ => vec![seg(x1 + 0.05, top, x1 + 0.03, 0.0, PartLabel::Frame), seg(x2 - 0.12, top, x2 - 0.1, 0.0, PartLabel::Frame)],
    };
    table.extend(legs);
    let floor = fixed_link("floor", vec![seg(-0.8, 0.0, 0.7, 0.0, PartLabel::Frame)]);
    let table = fixed_link("table", table);

    // Free slot on the table top; obstacles fill the rest.
    let gap_half = 0.1;
    let gap_center = x1 + 0.12 + u * (width - 0.24);
    let mut obstacle_links = Vec::new();
    let left_room = (gap_center - gap_half) - x1;
    let right_room = x2 - (gap_center + gap_half);
    let mut place = |lo: f64, room: f64, rng: &mut ChaCha8Rng| {
        if room < 0.07 {
            return;
        }
        let w = rng.gen_range(0.04..(room - 0.02).min(0.09));
        let start = lo + rng.gen_range(0.0..(room - w - 0.01).max(1e-3));
        let h = rng.gen_range(0.05..0.12);
        obstacle_links.push(Link {
            name: format!("obstacle{}", obstacle_links.len()),
            parent: None,
            motion: LinkMotion::Fixed,
            shape: BoundaryShape::rect(Point::new(start, top), w, h, PartLabel::Obstacle),
        });
    };
    place(x1, left_room, rng);
    place(gap_center + gap_half, right_room, rng);

    let bw = rng.gen_range(0.06..0.1);
    let bh = rng.gen_range(0.05..0.08);
    let bx = rng.gen_range(-0.55..-0.35);
    let taper = if id % 2 == 0 { 0.0 } else { 0.015 };
    let body = Link {
        name: "body".into(),
        parent: None,
        motion: LinkMotion::Free,
        shape: BoundaryShape::polygon(
            &[
                Point::new(bx, 0.0),
                Point::new(bx + bw, 0.0),
                Point::new(bx + bw + taper, bh),
                Point::new(bx - taper, bh),
            ],
            PartLabel::Body,
        ),
    };
    let mut links = vec![floor, table, body];
    links.extend(obstacle_links);
    let desc = format!(
        "pick_place table_kind={kind} top={top:.4} x1={x1:.4} x2={x2:.4} gap={gap_center:.4} body_w={bw:.4} body_h={bh:.4}"
    );
    ArticulatedObject::new(id, RigidTransform::IDENTITY, links, desc)
}

/// Side view of a chair resting on the floor, backrest on the left. A
/// prismatic slider carries the chair along +x; the chair tilts forward
/// about its front foot.
fn chair(id: usize, u: f64, rng: &mut ChaCha8Rng) -> ArticulatedObject {
    let width = 0.3 + 0.15 * u;
    let seat = rng.gen_range(0.35..0.45);
    let back = rng.gen_range(0.3..0.4);
    let slider = Link {
        name: "slider".into(),
        parent: None,
        motion: LinkMotion::Joint(Joint {
            kind: JointKind::Prismatic {
                axis: Point::new(1.0, 0.0),
            },
            lower: 0.0,
            upper: CHAIR_TRAVEL,
            damping: 4.0,
            friction: 1.4,
            stiffness: 0.0,
            rest: 0.0,
            inertia: 2.0,
        }),
        shape: BoundaryShape::default(),
    };
    let body = Link {
        name: "chair".into(),
        parent: Some(0),
        motion: LinkMotion::Joint(Joint {
            kind: JointKind::Revolute {
                anchor: Point::new(width, 0.0),
                direction: -1.0,
            },
            lower: 0.0,
            upper: std::f64::consts::FRAC_PI_2,
            damping: 0.5,
            friction: 0.3,
            stiffness: 1.0,
            rest: 0.0,
            inertia: 0.2,
        }),
        shape: BoundaryShape::new(vec![
            seg(0.0, 0.0, 0.0, seat, PartLabel::Leg),
            seg(width, 0.0, width, seat, PartLabel::Leg),
            seg(0.0, seat, width, seat, PartLabel::Seat),
            seg(0.0, seat, 0.0, seat + back, PartLabel::Back),
        ]),
    };
    let desc = format!("chair width={width:.4} seat={seat:.4} back={back:.4}");
    ArticulatedObject::new(id, RigidTransform::IDENTITY, vec![slider, body], desc)
}
