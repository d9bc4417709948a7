//! Articulated objects: a tree of rigid links, each moving relative to its
//! parent through at most one joint.

use serde::{Deserialize, Serialize};

use crate::geometry::{BoundaryShape, PartLabel, Point, RigidTransform, Segment};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointKind {
    /// Rotation about `anchor` (parent frame). World rotation is
    /// `direction * q`, with `direction` ±1.
    Revolute { anchor: Point, direction: f64 },
    /// Translation along the unit `axis` (parent frame).
    Prismatic { axis: Point },
}

/// One degree of freedom with limits and first-order dynamics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub kind: JointKind,
    pub lower: f64,
    pub upper: f64,
    /// Viscous damping (N·m·s/rad or N·s/m).
    pub damping: f64,
    /// Dry-friction threshold: generalized force below which a resting joint
    /// stays put.
    pub friction: f64,
    /// Restoring stiffness toward `rest`.
    pub stiffness: f64,
    pub rest: f64,
    pub inertia: f64,
}

impl Joint {
    pub fn clamp(&self, q: f64) -> f64 {
        q.clamp(self.lower, self.upper)
    }

    /// Local motion of the child frame at position `q`.
    pub fn motion(&self, q: f64) -> RigidTransform {
        match self.kind {
            JointKind::Revolute { anchor, direction } => {
                RigidTransform::rotation_about(anchor, direction * q)
            }
            JointKind::Prismatic { axis } => RigidTransform::translation(axis * q),
        }
    }

    /// Advances `(q, qdot)` by `dt` under generalized force `force`.
    ///
    /// Semi-implicit: damping is integrated implicitly so velocities decay
    /// monotonically when unforced. Dry friction holds a resting joint while
    /// `|force| <= friction` and otherwise opposes motion without reversing
    /// it. Hitting a limit zeroes the velocity.
    pub fn integrate(&self, q: f64, qdot: f64, force: f64, dt: f64) -> (f64, f64) {
        let total = force - self.stiffness * (q - self.rest);
        let damp = 1.0 + dt * self.damping / self.inertia;
        let mut v = if qdot == 0.0 {
            if total.abs() <= self.friction {
                0.0
            } else {
                dt * (total - self.friction * total.signum()) / self.inertia
            }
        } else {
            let free = qdot + dt * total / self.inertia;
            let slip = dt * self.friction / self.inertia;
            let after = free - slip * qdot.signum();
            if after.signum() != qdot.signum() && total.abs() <= self.friction {
                0.0
            } else {
                after
            }
        };
        v /= damp;
        let mut next = q + dt * v;
        if next <= self.lower {
            next = self.lower;
            v = 0.0;
        } else if next >= self.upper {
            next = self.upper;
            v = 0.0;
        }
        (next, v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkMotion {
    Fixed,
    Joint(Joint),
    /// Unconstrained translation, driven only by a grasp or by settling
    /// under gravity.
    Free,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub name: String,
    pub parent: Option<usize>,
    pub motion: LinkMotion,
    /// Geometry in the link frame, which coincides with the object frame at
    /// the canonical configuration.
    pub shape: BoundaryShape,
}

impl Link {
    pub fn joint(&self) -> Option<&Joint> {
        match &self.motion {
            LinkMotion::Joint(j) => Some(j),
            _ => None,
        }
    }
}

/// An object instance with its configuration.
///
/// `q`/`qdot` hold one entry per link (zero for fixed links). `offsets` holds
/// the translation of free links from their spawn pose.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArticulatedObject {
    pub id: usize,
    pub base: RigidTransform,
    pub links: Vec<Link>,
    pub q: Vec<f64>,
    pub qdot: Vec<f64>,
    pub offsets: Vec<Point>,
    /// Family parameters that produced the geometry, for logs.
    pub descriptor: String,
}

impl ArticulatedObject {
    pub fn new(id: usize, base: RigidTransform, links: Vec<Link>, descriptor: String) -> Self {
        let n = links.len();
        Self {
            id,
            base,
            links,
            q: vec![0.0; n],
            qdot: vec![0.0; n],
            offsets: vec![Point::ZERO; n],
            descriptor,
        }
    }

    /// Link frame → object frame at the current configuration.
    pub fn link_pose(&self, link: usize) -> RigidTransform {
        let l = &self.links[link];
        let parent = l
            .parent
            .map(|p| self.link_pose(p))
            .unwrap_or(RigidTransform::IDENTITY);
        let local = match &l.motion {
            LinkMotion::Fixed => RigidTransform::IDENTITY,
            LinkMotion::Joint(j) => j.motion(self.q[link]),
            LinkMotion::Free => RigidTransform::translation(self.offsets[link]),
        };
        parent.compose(&local)
    }

    /// Link frame → world at the current configuration.
    pub fn link_world(&self, link: usize) -> RigidTransform {
        self.base.compose(&self.link_pose(link))
    }

    /// World point → canonical object frame, through `link`'s current pose.
    pub fn world_to_canonical(&self, link: usize, world: Point) -> Point {
        self.link_world(link).to_local(world)
    }

    /// Canonical object-frame point on `link` → world.
    pub fn canonical_to_world(&self, link: usize, local: Point) -> Point {
        self.link_world(link).apply(local)
    }

    pub fn world_shape(&self, link: usize) -> BoundaryShape {
        self.links[link].shape.transformed(&self.link_world(link))
    }

    /// Every segment of the object at its canonical configuration, tagged
    /// with its link.
    pub fn canonical_segments(&self) -> (BoundaryShape, Vec<usize>) {
        let mut segs: Vec<Segment> = Vec::new();
        let mut owners = Vec::new();
        for (i, l) in self.links.iter().enumerate() {
            for s in &l.shape.segments {
                segs.push(*s);
                owners.push(i);
            }
        }
        (BoundaryShape::new(segs), owners)
    }

    /// Distance from a world point to the nearest segment of `link`.
    pub fn distance_to_link(&self, link: usize, p: Point) -> f64 {
        let tf = self.link_world(link);
        self.links[link].shape.distance_to(tf.to_local(p))
    }

    /// Distance to the nearest segment carrying one of `labels`, over all
    /// links.
    pub fn distance_to_labels(&self, labels: &[PartLabel], p: Point) -> f64 {
        let mut best = f64::INFINITY;
        for (i, l) in self.links.iter().enumerate() {
            let local = self.link_world(i).to_local(p);
            for s in &l.shape.segments {
                if labels.contains(&s.label) {
                    best = best.min(s.distance_to(local));
                }
            }
        }
        best
    }

    /// Whether `link` or one of its ancestors is `ancestor`.
    pub fn descends_from(&self, link: usize, ancestor: usize) -> bool {
        let mut cur = Some(link);
        while let Some(c) = cur {
            if c == ancestor {
                return true;
            }
            cur = self.links[c].parent;
        }
        false
    }

    /// Joint-space Jacobian column: world velocity of world point `p`, rigidly
    /// attached to a descendant of `joint_link`, per unit joint rate.
    pub fn jacobian(&self, joint_link: usize, p: Point) -> Point {
        let Some(joint) = self.links[joint_link].joint() else {
            return Point::ZERO;
        };
        let parent_world = match self.links[joint_link].parent {
            Some(pl) => self.link_world(pl),
            None => self.base,
        };
        match joint.kind {
            JointKind::Revolute { anchor, direction } => {
                let a = parent_world.apply(anchor);
                (p - a).perp() * direction
            }
            JointKind::Prismatic { axis } => parent_world.rotate(axis),
        }
    }

    /// Joints (by link index) whose motion moves `link`, nearest first.
    pub fn joint_chain(&self, link: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut cur = Some(link);
        while let Some(c) = cur {
            if self.links[c].joint().is_some() {
                out.push(c);
            }
            cur = self.links[c].parent;
        }
        out
    }

    /// Indices of links that hold a joint.
    pub fn joint_links(&self) -> Vec<usize> {
        (0..self.links.len())
            .filter(|&i| self.links[i].joint().is_some())
            .collect()
    }

    pub fn free_links(&self) -> Vec<usize> {
        (0..self.links.len())
            .filter(|&i| matches!(self.links[i].motion, LinkMotion::Free))
            .collect()
    }
}
