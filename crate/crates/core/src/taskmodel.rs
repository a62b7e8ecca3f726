//! Task catalog: 16 manipulation tasks as scenes plus expert substage plans.
//!
//! Each task ships in `data/task_catalog.json` as a scene description
//! (objects with placement regions) and a substage schema (target recipes,
//! gripper levels, durations, injection flags). `build_task` samples object
//! placements deterministically from a seed and resolves every recipe into a
//! concrete end-effector target, so the expert plan is feasible by
//! construction.

use crate::geometry::{quat_mul, Orientation, Pose, Position};
use crate::rng::{derive_seed, rng_for};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("unknown task id: {0}")]
    UnknownTask(String),
    #[error("catalog invariant violated: {0}")]
    Invalid(String),
}

// ---------------------------------------------------------------------------
// Identifiers and enums
// ---------------------------------------------------------------------------

macro_rules! task_ids {
    ($($variant:ident => $name:literal),+ $(,)?) => {
        /// The 16 catalog tasks.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        pub enum TaskId {
            $(#[serde(rename = $name)] $variant),+
        }

        impl TaskId {
            pub const ALL: &'static [TaskId] = &[$(TaskId::$variant),+];

            pub fn as_str(&self) -> &'static str {
                match self {
                    $(TaskId::$variant => $name),+
                }
            }
        }

        impl FromStr for TaskId {
            type Err = CatalogError;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($name => Ok(TaskId::$variant),)+
                    other => Err(CatalogError::UnknownTask(other.to_string())),
                }
            }
        }
    };
}

task_ids! {
    SpinStack => "SpinStack",
    SpinPullStack => "SpinPullStack",
    MicrowaveTask => "MicrowaveTask",
    SafeTask => "SafeTask",
    ToolsTask => "ToolsTask",
    UprightStack => "UprightStack",
    PegInsertionSide => "PegInsertionSide",
    PullCubeTool => "PullCubeTool",
    PlugCharger => "PlugCharger",
    InsertCylinder => "InsertCylinder",
    PlaceCube => "PlaceCube",
    LiftPegUpright => "LiftPegUpright",
    PickCube => "PickCube",
    PullCube => "PullCube",
    PushCube => "PushCube",
    StackCube => "StackCube",
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Horizon grouping of a task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Category {
    #[serde(rename = "short-horizon")]
    ShortHorizon,
    #[serde(rename = "medium-horizon")]
    MediumHorizon,
    #[serde(rename = "long-horizon")]
    LongHorizon,
    #[serde(rename = "dynamic")]
    Dynamic,
}

impl Category {
    pub const ALL: &'static [Category] = &[
        Category::ShortHorizon,
        Category::MediumHorizon,
        Category::LongHorizon,
        Category::Dynamic,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Category::ShortHorizon => "short-horizon",
            Category::MediumHorizon => "medium-horizon",
            Category::LongHorizon => "long-horizon",
            Category::Dynamic => "dynamic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectKind {
    Cube,
    Peg,
    Cylinder,
    Tool,
    Charger,
    Receptacle,
    Cup,
    Spoon,
    Door,
    Knob,
    TargetRegion,
    Box,
    Shelf,
    Disc,
}

impl ObjectKind {
    /// Container kinds couple released objects to themselves (a spoon set
    /// down inside a cup rides along when the cup moves).
    pub fn is_container(&self) -> bool {
        matches!(
            self,
            ObjectKind::Cup | ObjectKind::Box | ObjectKind::Receptacle
        )
    }
}

/// How the end-effector interacts with a substage's object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interaction {
    #[default]
    None,
    /// Close the gripper on the object this substage; attachment point.
    Grasp,
    /// Move while holding the object.
    Carry,
    /// Contact-couple the object for the span of this substage.
    Push,
}

// ---------------------------------------------------------------------------
// Scene
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: String,
    pub kind: ObjectKind,
    pub pose: Pose,
    pub graspable: bool,
    /// Characteristic half-size in meters.
    pub extent: f64,
    /// Object rides another object until first grasped (knob on a door).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mounted_on: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Position,
    pub max: Position,
}

impl Aabb {
    pub fn contains(&self, p: &Position) -> bool {
        p.x >= self.min.x
            && p.x <= self.max.x
            && p.y >= self.min.y
            && p.y <= self.max.y
            && p.z >= self.min.z
            && p.z <= self.max.z
    }
}

/// Constant-speed rotation of the disc surface about a vertical axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spin {
    pub center: [f64; 2],
    /// rad/s, positive counterclockwise seen from above.
    pub speed: f64,
}

impl Spin {
    /// Pose of a co-rotating object after `dt` seconds from `anchor`.
    pub fn advance(&self, anchor: &Pose, dt: f64) -> Pose {
        let theta = self.speed * dt;
        let rot = Orientation::about_z(theta);
        let cx = self.center[0];
        let cy = self.center[1];
        let dx = anchor.position.x - cx;
        let dy = anchor.position.y - cy;
        let (s, c) = theta.sin_cos();
        Pose {
            position: Position {
                x: cx + dx * c - dy * s,
                y: cy + dx * s + dy * c,
                z: anchor.position.z,
            },
            orientation: quat_mul(&rot, &anchor.orientation),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub objects: Vec<SceneObject>,
    pub workspace: Aabb,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spin: Option<Spin>,
}

impl Scene {
    pub fn object(&self, id: &str) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn graspable_ids(&self) -> Vec<&str> {
        self.objects
            .iter()
            .filter(|o| o.graspable)
            .map(|o| o.id.as_str())
            .collect()
    }

    /// Disc footprint radius, when the scene spins.
    pub fn disc(&self) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.kind == ObjectKind::Disc)
    }

    /// Whether an object at `pos` co-rotates with the disc.
    pub fn on_disc(&self, pos: &Position) -> bool {
        match (self.spin.as_ref(), self.disc()) {
            (Some(spin), Some(disc)) => {
                let dx = pos.x - spin.center[0];
                let dy = pos.y - spin.center[1];
                (dx * dx + dy * dy).sqrt() <= disc.extent
            }
            _ => false,
        }
    }

    /// Nominal pose of `id` at time `t`, accounting for disc co-rotation of
    /// untouched objects. Used for expert-plan prediction and tracking.
    pub fn predicted_pose(&self, id: &str, t: f64) -> Option<Pose> {
        let obj = self.object(id)?;
        match self.spin.as_ref() {
            Some(spin) if self.on_disc(&obj.pose.position) && obj.kind != ObjectKind::Disc => {
                Some(spin.advance(&obj.pose, t))
            }
            _ => Some(obj.pose),
        }
    }
}

// ---------------------------------------------------------------------------
// Target recipes
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisAngle {
    pub axis: [f64; 3],
    pub deg: f64,
}

impl AxisAngle {
    pub fn to_orientation(&self) -> Orientation {
        Orientation::from_axis_angle(self.axis, self.deg.to_radians())
            .expect("catalog orientations are finite")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OrientSpec {
    Named(String),
    AxisAngle(AxisAngle),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<[f64; 3]>,
    /// Goal references only: measure against the object's final pose rather
    /// than its initial one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub live: Option<bool>,
}

/// How a substage's end-effector target is derived from the scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetSpec {
    Home,
    Point {
        pos: [f64; 3],
        #[serde(default, skip_serializing_if = "Option::is_none")]
        orientation: Option<AxisAngle>,
    },
    Above {
        object: String,
        dz: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        orientation: Option<AxisAngle>,
    },
    Grasp {
        object: String,
    },
    OffsetOf {
        object: String,
        offset: [f64; 3],
        #[serde(default, skip_serializing_if = "Option::is_none")]
        orientation: Option<AxisAngle>,
    },
    /// Place the carried object so that it lands at `at` with orientation
    /// `orient`; the end-effector pose is solved from the grasp offset.
    CarryTo {
        object: String,
        at: AtSpec,
        orient: OrientSpec,
    },
    /// Contact point behind `object` on the side away from `toward`.
    PushStart {
        object: String,
        toward: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        point: Option<[f64; 3]>,
        gap: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dz: Option<f64>,
    },
    /// End of the push stroke: same contact offset, measured from `toward`.
    PushEnd {
        object: String,
        toward: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        point: Option<[f64; 3]>,
        gap: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dz: Option<f64>,
    },
    /// Repeat the previous substage's target (release-in-place).
    Hold,
}

// ---------------------------------------------------------------------------
// Goals
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GoalSpec {
    /// Object must sit at a reference point (within position tolerance) and,
    /// when `check_orientation`, match its nominal final orientation.
    ObjectAt {
        object: String,
        at: AtSpec,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        orientation: Option<OrientSpec>,
        #[serde(default)]
        check_orientation: bool,
    },
    /// Object must rest on another object at a relative offset; measured
    /// against the base object's final pose.
    ObjectStacked {
        object: String,
        on: String,
        offset: [f64; 3],
        #[serde(default, skip_serializing_if = "Option::is_none")]
        orientation: Option<OrientSpec>,
        #[serde(default)]
        check_orientation: bool,
    },
    All {
        goals: Vec<GoalSpec>,
    },
}

// ---------------------------------------------------------------------------
// Plans
// ---------------------------------------------------------------------------

/// One step of an expert plan: target pose, gripper closure, object binding
/// and scheduling, plus the catalog metadata the injector samples from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubstageTarget {
    /// 1-based position in the expert plan; preserved under omission.
    pub index: usize,
    pub name: String,
    pub recipe: TargetSpec,
    pub target_pose: Pose,
    pub gripper_target: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_id: Option<String>,
    #[serde(default)]
    pub interaction: Interaction,
    /// Scheduled completion time (cumulative seconds).
    pub nominal_time: f64,
    pub duration: f64,
    /// Target follows the disc rotation around its reference time.
    #[serde(default)]
    pub tracked: bool,
    /// Timing-error injection shifts the tracking reference by this amount.
    #[serde(default)]
    pub timing_offset: f64,
    #[serde(default)]
    pub critical: bool,
    #[serde(default)]
    pub omissible: bool,
    #[serde(default)]
    pub retargetable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub requires_attached: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskPlan {
    pub task_id: TaskId,
    pub category: Category,
    pub instruction: String,
    pub substages: Vec<SubstageTarget>,
    pub scene: Scene,
    pub goal: GoalSpec,
    pub seed: u64,
}

impl TaskPlan {
    pub fn total_duration(&self) -> f64 {
        self.substages.last().map(|s| s.nominal_time).unwrap_or(0.0)
    }
}

/// Accessor for the nominal substage sequence.
pub fn expert_plan(plan: &TaskPlan) -> &[SubstageTarget] {
    &plan.substages
}

// ---------------------------------------------------------------------------
// Raw catalog file
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
struct RawCatalog {
    #[allow(dead_code)]
    version: u32,
    workspace: RawWorkspace,
    home: RawHome,
    grasp_dz: f64,
    tasks: Vec<RawTask>,
}

#[derive(Debug, Deserialize)]
struct RawWorkspace {
    x: [f64; 2],
    y: [f64; 2],
    z: [f64; 2],
}

#[derive(Debug, Deserialize)]
struct RawHome {
    pos: [f64; 3],
}

#[derive(Debug, Deserialize)]
struct RawTask {
    id: String,
    category: Category,
    instruction: String,
    #[serde(default)]
    spin: Option<Spin>,
    objects: Vec<RawObject>,
    substages: Vec<RawSubstage>,
    goal: GoalSpec,
}

#[derive(Debug, Deserialize)]
struct RawObject {
    id: String,
    kind: ObjectKind,
    extent: f64,
    graspable: bool,
    place: PlaceSpec,
    #[serde(default)]
    orientation: Option<AxisAngle>,
    #[serde(default)]
    mounted_on: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum PlaceSpec {
    Region {
        x: [f64; 2],
        y: [f64; 2],
        #[serde(default)]
        z: Option<f64>,
    },
    Fixed {
        pos: [f64; 3],
    },
    OnDisc {
        radius: [f64; 2],
        z: f64,
        #[serde(default)]
        min_sep_deg: Option<f64>,
    },
}

#[derive(Debug, Deserialize)]
struct RawSubstage {
    name: String,
    target: TargetSpec,
    grip: f64,
    duration: f64,
    #[serde(default)]
    object: Option<String>,
    #[serde(default)]
    interaction: Option<Interaction>,
    #[serde(default)]
    track: Option<bool>,
    #[serde(default)]
    critical: bool,
    #[serde(default)]
    omissible: bool,
    #[serde(default)]
    retargetable: bool,
    #[serde(default)]
    requires: Option<String>,
}

static CATALOG: OnceLock<RawCatalog> = OnceLock::new();

fn catalog() -> &'static RawCatalog {
    CATALOG.get_or_init(|| {
        serde_json::from_str(include_str!("../data/task_catalog.json"))
            .expect("embedded task catalog parses")
    })
}

fn raw_task(task_id: TaskId) -> &'static RawTask {
    catalog()
        .tasks
        .iter()
        .find(|t| t.id == task_id.as_str())
        .expect("every TaskId has a catalog entry")
}

/// The Table-4 grouping of a task.
pub fn category_of(task_id: TaskId) -> Category {
    raw_task(task_id).category
}

/// Verbatim task instruction sentence.
pub fn instruction_of(task_id: TaskId) -> &'static str {
    &raw_task(task_id).instruction
}

/// Every distinct substage name across the whole catalog, sorted; the
/// distractor pool for locating-style multiple choice options.
pub fn all_substage_names() -> Vec<String> {
    let mut set = BTreeSet::new();
    for t in &catalog().tasks {
        for s in &t.substages {
            set.insert(s.name.clone());
        }
    }
    set.into_iter().collect()
}

/// Nominal end-effector start pose.
pub fn home_pose() -> Pose {
    let h = &catalog().home;
    Pose::new(
        Position::new(h.pos[0], h.pos[1], h.pos[2]).expect("home pose finite"),
        Orientation::IDENTITY,
    )
}

pub fn grasp_clearance() -> f64 {
    catalog().grasp_dz
}

// ---------------------------------------------------------------------------
// Building
// ---------------------------------------------------------------------------

fn pos_from(v: [f64; 3]) -> Position {
    Position {
        x: v[0],
        y: v[1],
        z: v[2],
    }
}

/// Deterministically constructs a task plan for `(task_id, seed)`: samples
/// object placements inside their regions, then resolves every substage
/// recipe against the sampled scene.
pub fn build_task(task_id: TaskId, seed: u64) -> Result<TaskPlan, CatalogError> {
    let raw = raw_task(task_id);
    let cat = catalog();
    let workspace = Aabb {
        min: Position {
            x: cat.workspace.x[0],
            y: cat.workspace.y[0],
            z: cat.workspace.z[0],
        },
        max: Position {
            x: cat.workspace.x[1],
            y: cat.workspace.y[1],
            z: cat.workspace.z[1],
        },
    };

    let mut rng = rng_for(derive_seed(seed, task_id.as_str(), 0));
    let mut objects: Vec<SceneObject> = Vec::with_capacity(raw.objects.len());
    let mut disc_angles: Vec<f64> = Vec::new();

    for ro in &raw.objects {
        let position = match &ro.place {
            PlaceSpec::Fixed { pos } => pos_from(*pos),
            PlaceSpec::Region { x, y, z } => Position {
                x: rng.random_range(x[0]..=x[1]),
                y: rng.random_range(y[0]..=y[1]),
                z: z.unwrap_or(ro.extent),
            },
            PlaceSpec::OnDisc {
                radius,
                z,
                min_sep_deg,
            } => {
                let spin = raw.spin.as_ref().ok_or_else(|| {
                    CatalogError::Invalid(format!("{task_id}: on_disc object without spin"))
                })?;
                let r = rng.random_range(radius[0]..=radius[1]);
                let min_sep = min_sep_deg.unwrap_or(0.0).to_radians();
                let mut theta = rng.random_range(0.0..std::f64::consts::TAU);
                for _ in 0..64 {
                    let ok = disc_angles.iter().all(|a| {
                        let mut d = (theta - a).abs() % std::f64::consts::TAU;
                        if d > std::f64::consts::PI {
                            d = std::f64::consts::TAU - d;
                        }
                        d >= min_sep
                    });
                    if ok {
                        break;
                    }
                    theta = rng.random_range(0.0..std::f64::consts::TAU);
                }
                disc_angles.push(theta);
                Position {
                    x: spin.center[0] + r * theta.cos(),
                    y: spin.center[1] + r * theta.sin(),
                    z: *z,
                }
            }
        };
        let orientation = ro
            .orientation
            .as_ref()
            .map(|a| a.to_orientation())
            .unwrap_or(Orientation::IDENTITY);
        objects.push(SceneObject {
            id: ro.id.clone(),
            kind: ro.kind,
            pose: Pose::new(position, orientation),
            graspable: ro.graspable,
            extent: ro.extent,
            mounted_on: ro.mounted_on.clone(),
        });
    }

    let scene = Scene {
        objects,
        workspace,
        spin: raw.spin,
    };

    // Resolve substage targets in schedule order.
    let mut substages: Vec<SubstageTarget> = Vec::with_capacity(raw.substages.len());
    let mut t_cum = 0.0;
    for (i, rs) in raw.substages.iter().enumerate() {
        if rs.duration <= 0.0 {
            return Err(CatalogError::Invalid(format!(
                "{task_id}: substage '{}' has non-positive duration",
                rs.name
            )));
        }
        let t_end = t_cum + rs.duration;
        let tracked = rs.track.unwrap_or(false);
        let target_pose = resolve_target(
            &rs.target,
            &scene,
            cat.grasp_dz,
            if tracked { t_end } else { 0.0 },
            tracked,
            substages.last(),
            None,
        )
        .map_err(|e| CatalogError::Invalid(format!("{task_id}: {e}")))?;

        if !scene.workspace.contains(&target_pose.position) {
            return Err(CatalogError::Invalid(format!(
                "{task_id}: substage '{}' target outside workspace",
                rs.name
            )));
        }
        if !(0.0..=1.0).contains(&rs.grip) {
            return Err(CatalogError::Invalid(format!(
                "{task_id}: substage '{}' gripper target outside [0, 1]",
                rs.name
            )));
        }
        if let Some(obj) = &rs.object {
            let so = scene.object(obj).ok_or_else(|| {
                CatalogError::Invalid(format!("{task_id}: unknown substage object '{obj}'"))
            })?;
            if rs.interaction == Some(Interaction::Grasp) && !so.graspable {
                return Err(CatalogError::Invalid(format!(
                    "{task_id}: grasp substage on non-graspable '{obj}'"
                )));
            }
        }

        substages.push(SubstageTarget {
            index: i + 1,
            name: rs.name.clone(),
            recipe: rs.target.clone(),
            target_pose,
            gripper_target: rs.grip,
            object_id: rs.object.clone(),
            interaction: rs.interaction.unwrap_or_default(),
            nominal_time: t_end,
            duration: rs.duration,
            tracked,
            timing_offset: 0.0,
            critical: rs.critical,
            omissible: rs.omissible,
            retargetable: rs.retargetable,
            requires_attached: rs.requires.clone(),
        });
        t_cum = t_end;
    }

    if substages.is_empty() {
        return Err(CatalogError::Invalid(format!("{task_id}: empty plan")));
    }

    Ok(TaskPlan {
        task_id,
        category: raw.category,
        instruction: raw.instruction.clone(),
        substages,
        scene,
        goal: raw.goal.clone(),
        seed,
    })
}

/// Resolves a target recipe against the scene. `t_ref` is the tracking
/// reference time for predicted object poses (0 when untracked).
/// `substitute` rebinds the manipulated object (wrong-object injection).
pub(crate) fn resolve_target(
    spec: &TargetSpec,
    scene: &Scene,
    grasp_dz: f64,
    t_ref: f64,
    tracked: bool,
    prev: Option<&SubstageTarget>,
    substitute: Option<(&str, &str)>,
) -> Result<Pose, String> {
    let sub = |name: &str| -> String {
        match substitute {
            Some((from, to)) if name == from => to.to_string(),
            _ => name.to_string(),
        }
    };
    let lookup = |name: &str| -> Result<Pose, String> {
        let id = sub(name);
        if tracked {
            scene
                .predicted_pose(&id, t_ref)
                .ok_or_else(|| format!("unknown object '{id}'"))
        } else {
            scene
                .object(&id)
                .map(|o| o.pose)
                .ok_or_else(|| format!("unknown object '{id}'"))
        }
    };
    let extent_of = |name: &str| -> Result<f64, String> {
        let id = sub(name);
        scene
            .object(&id)
            .map(|o| o.extent)
            .ok_or_else(|| format!("unknown object '{id}'"))
    };

    let pose = match spec {
        TargetSpec::Home => Pose::new(
            {
                let h = &catalog().home;
                pos_from(h.pos)
            },
            Orientation::IDENTITY,
        ),
        TargetSpec::Point { pos, orientation } => Pose::new(
            pos_from(*pos),
            orientation
                .map(|a| a.to_orientation())
                .unwrap_or(Orientation::IDENTITY),
        ),
        TargetSpec::Above {
            object,
            dz,
            orientation,
        } => {
            let base = lookup(object)?;
            Pose::new(
                base.position
                    + Position {
                        x: 0.0,
                        y: 0.0,
                        z: *dz,
                    },
                orientation
                    .map(|a| a.to_orientation())
                    .unwrap_or(Orientation::IDENTITY),
            )
        }
        TargetSpec::Grasp { object } => {
            let base = lookup(object)?;
            Pose::new(
                base.position
                    + Position {
                        x: 0.0,
                        y: 0.0,
                        z: grasp_dz,
                    },
                Orientation::IDENTITY,
            )
        }
        TargetSpec::OffsetOf {
            object,
            offset,
            orientation,
        } => {
            let base = lookup(object)?;
            Pose::new(
                base.position + pos_from(*offset),
                orientation
                    .map(|a| a.to_orientation())
                    .unwrap_or(Orientation::IDENTITY),
            )
        }
        TargetSpec::CarryTo { object, at, orient } => {
            let carried_id = sub(object);
            let carried = scene
                .object(&carried_id)
                .ok_or_else(|| format!("unknown object '{carried_id}'"))?;
            let base_pos = match (&at.object, &at.point) {
                (Some(obj), _) => lookup(obj)?.position,
                (None, Some(p)) => pos_from(*p),
                (None, None) => return Err("carry_to without reference".to_string()),
            };
            let desired_pos = base_pos + at.offset.map(pos_from).unwrap_or(Position::ZERO);
            let desired_orient = match orient {
                OrientSpec::Named(n) if n == "keep" => carried.pose.orientation,
                OrientSpec::Named(n) if n == "identity" => Orientation::IDENTITY,
                OrientSpec::Named(n) => return Err(format!("unknown orient '{n}'")),
                OrientSpec::AxisAngle(a) => a.to_orientation(),
            };
            // Solve the end-effector pose from the grasp offset: the object
            // was grasped with an identity-oriented gripper at grasp_dz above
            // its center.
            let ee_orient = quat_mul(&desired_orient, &carried.pose.orientation.inverse());
            let lift = ee_orient.rotate(&Position {
                x: 0.0,
                y: 0.0,
                z: grasp_dz,
            });
            Pose::new(desired_pos + lift, ee_orient)
        }
        TargetSpec::PushStart {
            object,
            toward,
            point,
            gap,
            dz,
        }
        | TargetSpec::PushEnd {
            object,
            toward,
            point,
            gap,
            dz,
        } => {
            let obj_pose = lookup(object)?;
            let toward_pos = if toward == "point" {
                pos_from(point.ok_or("push toward point without coordinates")?)
            } else {
                lookup(toward)?.position
            };
            let mut u = obj_pose.position - toward_pos;
            u.z = 0.0;
            let n = u.norm();
            if n < 1e-9 {
                return Err("push direction degenerate".to_string());
            }
            let u = u.scaled(1.0 / n);
            let stride = extent_of(object)? + gap;
            let anchor = match spec {
                TargetSpec::PushStart { .. } => obj_pose.position,
                _ => toward_pos,
            };
            Pose::new(
                Position {
                    x: anchor.x + u.x * stride,
                    y: anchor.y + u.y * stride,
                    z: obj_pose.position.z + dz.unwrap_or(0.0),
                },
                Orientation::IDENTITY,
            )
        }
        TargetSpec::Hold => {
            let prev = prev.ok_or("hold in first substage")?;
            if tracked && prev.tracked {
                // Advance the tracked hold target by one substage of disc
                // rotation so its own reference time lines up.
                match scene.spin.as_ref() {
                    Some(spin) => spin.advance(&prev.target_pose, t_ref - prev.nominal_time),
                    None => prev.target_pose,
                }
            } else {
                prev.target_pose
            }
        }
    };
    Ok(pose)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_has_all_sixteen_tasks() {
        assert_eq!(catalog().tasks.len(), 16);
        for id in TaskId::ALL {
            let _ = raw_task(*id);
        }
    }

    #[test]
    fn categories_follow_the_table_groupings() {
        assert_eq!(category_of(TaskId::SpinStack), Category::Dynamic);
        assert_eq!(category_of(TaskId::SpinPullStack), Category::Dynamic);
        assert_eq!(category_of(TaskId::SafeTask), Category::LongHorizon);
        assert_eq!(category_of(TaskId::MicrowaveTask), Category::LongHorizon);
        assert_eq!(category_of(TaskId::PushCube), Category::ShortHorizon);
        assert_eq!(category_of(TaskId::ToolsTask), Category::MediumHorizon);
        assert_eq!(category_of(TaskId::PlaceCube), Category::MediumHorizon);
    }

    #[test]
    fn stack_cube_instruction_is_verbatim() {
        assert_eq!(
            instruction_of(TaskId::StackCube),
            "Pick up the cube and stack it on another cube."
        );
    }

    #[test]
    fn microwave_task_has_door_open_and_close_substages() {
        let plan = build_task(TaskId::MicrowaveTask, 5).unwrap();
        assert!(plan.substages.len() >= 6);
        let names: Vec<&str> = plan.substages.iter().map(|s| s.name.as_str()).collect();
        assert!(names.iter().any(|n| n.contains("door open")));
        assert!(names.iter().any(|n| n.contains("door closed")));
    }

    #[test]
    fn build_is_deterministic_in_task_and_seed() {
        let a = build_task(TaskId::PickCube, 99).unwrap();
        let b = build_task(TaskId::PickCube, 99).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        let c = build_task(TaskId::PickCube, 100).unwrap();
        assert_ne!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&c).unwrap()
        );
    }

    #[test]
    fn all_tasks_construct_for_a_hundred_consecutive_seeds() {
        for id in TaskId::ALL {
            for seed in 0..100 {
                let plan = build_task(*id, seed).unwrap();
                assert!(!plan.substages.is_empty());
                // Times strictly increase and substage indices are contiguous.
                let mut last = 0.0;
                for (i, s) in plan.substages.iter().enumerate() {
                    assert_eq!(s.index, i + 1);
                    assert!(s.nominal_time > last);
                    last = s.nominal_time;
                }
                assert!(plan.total_duration() <= 60.0);
                // Referenced objects exist and grasped ones are graspable.
                for s in &plan.substages {
                    if let Some(obj) = &s.object_id {
                        let so = plan.scene.object(obj).expect("substage object exists");
                        if s.interaction == Interaction::Grasp {
                            assert!(so.graspable, "{id}: grasp on non-graspable {obj}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn unknown_task_id_is_a_catalog_error() {
        assert!(TaskId::from_str("FlyToTheMoon").is_err());
    }

    #[test]
    fn dynamic_tasks_have_tracked_substages() {
        for id in [TaskId::SpinStack, TaskId::SpinPullStack] {
            let plan = build_task(id, 7).unwrap();
            assert!(plan.scene.spin.is_some());
            assert!(plan.substages.iter().any(|s| s.tracked));
        }
        let plan = build_task(TaskId::PickCube, 7).unwrap();
        assert!(plan.scene.spin.is_none());
        assert!(plan.substages.iter().all(|s| !s.tracked));
    }

    #[test]
    fn substage_name_pool_is_large_enough_for_distractors() {
        assert!(all_substage_names().len() >= 20);
    }
}
