//! Deterministic kinematic episode executor.
//!
//! Runs a plan's substages in order: the end-effector position interpolates
//! linearly and its orientation slerps from the substage-start pose to the
//! (possibly overridden) target over the substage duration, the gripper
//! closes linearly, and objects move only through three couplings:
//!
//!   1. grasp attachment (closure above threshold near a designated object),
//!   2. push contact (for the span of a push substage),
//!   3. containment (a released object inside a container rides with it),
//!
//! plus disc co-rotation on spinning scenes. There is no gravity, friction,
//! or collision; a detached object stays exactly where it was released. The
//! resulting frame log stands in for an episode video.

use crate::geometry::{angular_distance, Orientation, Pose, Position};
use crate::taskmodel::{
    GoalSpec, Interaction, ObjectKind, OrientSpec, Scene, SubstageTarget, TaskPlan,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Gripper closure at or above this attaches the designated object.
pub const ATTACH_THRESHOLD: f64 = 0.5;
/// Grasp radius = object extent + this margin.
pub const GRASP_MARGIN: f64 = 0.01;
/// Position tolerance of every success predicate, meters.
pub const POS_TOL: f64 = 0.015;
/// Orientation tolerance of every success predicate, radians (10 degrees).
pub const ANG_TOL: f64 = 10.0 * std::f64::consts::PI / 180.0;
/// Default trajectory sampling rate.
pub const DEFAULT_FRAME_RATE: f64 = 10.0;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("plan infeasible: {0}")]
    PlanInfeasible(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

// ---------------------------------------------------------------------------
// Trajectory types
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Success,
    Failure,
    InProgress,
}

/// One sampled instant of an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub time: f64,
    pub ee_pose: Pose,
    pub gripper: f64,
    pub object_poses: BTreeMap<String, Pose>,
    /// Catalog index of the substage being executed.
    pub active_substage: usize,
}

/// Timestamped frame log of one episode; the artifact's "video".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub plan: TaskPlan,
    pub frames: Vec<Frame>,
    pub outcome: Outcome,
    pub duration: f64,
    pub frame_rate: f64,
    pub episode_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_record_id: Option<String>,
}

impl Trajectory {
    pub fn final_frame(&self) -> &Frame {
        self.frames
            .last()
            .expect("trajectory has at least one frame")
    }
}

// ---------------------------------------------------------------------------
// Episode state
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
enum AttachMode {
    Grasp,
    Push,
}

#[derive(Debug, Clone)]
struct ObjectState {
    pose: Pose,
    extent: f64,
    kind: ObjectKind,
    /// (pose, time) the object last started co-rotating from.
    disc_anchor: Option<(Pose, f64)>,
    attached: Option<(Pose, AttachMode)>,
    contained: Option<(String, Pose)>,
}

struct Episode<'a> {
    scene: &'a Scene,
    objects: BTreeMap<String, ObjectState>,
    ee: Pose,
    grip: f64,
}

impl<'a> Episode<'a> {
    fn new(scene: &'a Scene, home: Pose) -> Self {
        let mut objects = BTreeMap::new();
        for obj in &scene.objects {
            let disc_anchor = if scene.on_disc(&obj.pose.position) && obj.kind != ObjectKind::Disc {
                Some((obj.pose, 0.0))
            } else {
                None
            };
            objects.insert(
                obj.id.clone(),
                ObjectState {
                    pose: obj.pose,
                    extent: obj.extent,
                    kind: obj.kind,
                    disc_anchor,
                    attached: None,
                    contained: None,
                },
            );
        }
        // Mounted objects (a knob on a door) start contained in their mount.
        let mounts: Vec<(String, String)> = scene
            .objects
            .iter()
            .filter_map(|o| o.mounted_on.clone().map(|m| (o.id.clone(), m)))
            .collect();
        for (child, parent) in mounts {
            let parent_pose = objects[&parent].pose;
            let child_pose = objects[&child].pose;
            let offset = parent_pose.relative_to(&child_pose);
            let st = objects.get_mut(&child).unwrap();
            st.contained = Some((parent, offset));
            st.disc_anchor = None;
        }
        Episode {
            scene,
            objects,
            ee: home,
            grip: 0.0,
        }
    }

    fn radius(&self, id: &str) -> f64 {
        self.objects[id].extent + GRASP_MARGIN
    }

    /// Advance free objects, then propagate attachment and containment.
    fn update_object_poses(&mut self, t: f64) {
        let spin = self.scene.spin;
        let ee = self.ee;
        for st in self.objects.values_mut() {
            if st.attached.is_some() || st.contained.is_some() {
                continue;
            }
            if let (Some(spin), Some((anchor, t0))) = (spin.as_ref(), st.disc_anchor.as_ref()) {
                st.pose = spin.advance(anchor, t - t0);
            }
        }
        for st in self.objects.values_mut() {
            if let Some((offset, _)) = st.attached.as_ref() {
                st.pose = ee.compose(offset);
            }
        }
        // Containment chains are at most a few deep (spoon in cup in hand).
        for _ in 0..3 {
            let ids: Vec<String> = self.objects.keys().cloned().collect();
            for id in ids {
                if let Some((container, offset)) = self.objects[&id].contained.clone() {
                    let parent_pose = self.objects[&container].pose;
                    self.objects.get_mut(&id).unwrap().pose = parent_pose.compose(&offset);
                }
            }
        }
    }

    /// Grasp/push attachment transitions for the active substage.
    fn attachment_transitions(&mut self, sub: &SubstageTarget, t: f64) {
        // Release: a grasp-held object detaches as soon as closure drops.
        if self.grip < ATTACH_THRESHOLD {
            let ids: Vec<String> = self
                .objects
                .iter()
                .filter(|(_, st)| matches!(st.attached, Some((_, AttachMode::Grasp))))
                .map(|(id, _)| id.clone())
                .collect();
            for id in ids {
                self.detach(&id, t);
            }
        }

        let Some(target_id) = sub.object_id.as_deref() else {
            return;
        };
        let already = self.objects[target_id].attached.is_some();
        match sub.interaction {
            Interaction::Grasp if !already => {
                if self.grip >= ATTACH_THRESHOLD
                    && self
                        .ee
                        .position
                        .distance(&self.objects[target_id].pose.position)
                        <= self.radius(target_id)
                {
                    self.attach(target_id, AttachMode::Grasp);
                }
            }
            Interaction::Push if !already => {
                let coupled = sub
                    .requires_attached
                    .as_deref()
                    .map(|req| {
                        self.objects
                            .get(req)
                            .is_some_and(|st| st.attached.is_some())
                    })
                    .unwrap_or(true);
                if coupled
                    && self
                        .ee
                        .position
                        .distance(&self.objects[target_id].pose.position)
                        <= self.radius(target_id)
                {
                    self.attach(target_id, AttachMode::Push);
                }
            }
            _ => {}
        }
    }

    fn attach(&mut self, id: &str, mode: AttachMode) {
        let offset = self.ee.relative_to(&self.objects[id].pose);
        let st = self.objects.get_mut(id).unwrap();
        st.attached = Some((offset, mode));
        st.contained = None;
        st.disc_anchor = None;
    }

    /// Freeze an object where it is; re-couple to a container or the disc.
    fn detach(&mut self, id: &str, t: f64) {
        let pose = self.objects[id].pose;
        self.objects.get_mut(id).unwrap().attached = None;

        let container = self
            .objects
            .iter()
            .filter(|(cid, st)| {
                cid.as_str() != id
                    && st.kind.is_container()
                    && st.pose.position.distance(&pose.position) <= st.extent
            })
            .min_by(|a, b| {
                let da = a.1.pose.position.distance(&pose.position);
                let db = b.1.pose.position.distance(&pose.position);
                da.partial_cmp(&db).unwrap()
            })
            .map(|(cid, st)| (cid.clone(), st.pose));
        let st_contained = container.map(|(cid, cpose)| (cid.clone(), cpose.relative_to(&pose)));

        let on_disc = self.scene.on_disc(&pose.position);
        let st = self.objects.get_mut(id).unwrap();
        if let Some(c) = st_contained {
            st.contained = Some(c);
        } else if on_disc && st.kind != ObjectKind::Disc {
            st.disc_anchor = Some((pose, t));
        }
    }

    /// End-of-substage boundary: push contacts release here.
    fn release_push_contacts(&mut self, sub: &SubstageTarget, t: f64) {
        if sub.interaction != Interaction::Push {
            return;
        }
        if let Some(id) = sub.object_id.clone() {
            if matches!(self.objects[&id].attached, Some((_, AttachMode::Push))) {
                self.detach(&id, t);
            }
        }
    }

    fn frame(&self, t: f64, active: usize) -> Frame {
        Frame {
            time: t,
            ee_pose: self.ee,
            gripper: self.grip,
            object_poses: self
                .objects
                .iter()
                .map(|(id, st)| (id.clone(), st.pose))
                .collect(),
            active_substage: active,
        }
    }
}

// ---------------------------------------------------------------------------
// Episode execution
// ---------------------------------------------------------------------------

/// Effective target of a substage at absolute time `t`: tracked targets ride
/// the disc around their (possibly timing-shifted) reference time.
fn effective_target(sub: &SubstageTarget, scene: &Scene, t: f64) -> Pose {
    if !sub.tracked {
        return sub.target_pose;
    }
    match scene.spin.as_ref() {
        Some(spin) => {
            let t_ref = sub.nominal_time + sub.timing_offset;
            spin.advance(&sub.target_pose, t - t_ref)
        }
        None => sub.target_pose,
    }
}

/// Executes a plan (or a perturbed override of its substage sequence) and
/// records the trajectory. Deterministic for identical inputs.
pub fn run_episode(
    plan: &TaskPlan,
    overrides: Option<&[SubstageTarget]>,
    frame_rate: f64,
    seed: u64,
) -> Result<Trajectory, SimError> {
    if !frame_rate.is_finite() || frame_rate <= 0.0 {
        return Err(SimError::InvalidArgument(format!(
            "frame rate {frame_rate} must be positive"
        )));
    }
    let substages: &[SubstageTarget] = overrides.unwrap_or(&plan.substages);
    if substages.is_empty() {
        return Err(SimError::PlanInfeasible("empty substage sequence".into()));
    }
    for sub in substages {
        let ticks = (sub.duration * frame_rate).round() as i64;
        if ticks < 1 {
            return Err(SimError::PlanInfeasible(format!(
                "substage '{}' spans no frames at {frame_rate} Hz",
                sub.name
            )));
        }
        if !plan.scene.workspace.contains(&sub.target_pose.position) {
            return Err(SimError::PlanInfeasible(format!(
                "substage '{}' target outside workspace",
                sub.name
            )));
        }
        if let Some(obj) = sub.object_id.as_deref() {
            if plan.scene.object(obj).is_none() {
                return Err(SimError::PlanInfeasible(format!(
                    "substage '{}' references unknown object '{obj}'",
                    sub.name
                )));
            }
        }
    }

    let dt = 1.0 / frame_rate;
    let mut ep = Episode::new(&plan.scene, crate::taskmodel::home_pose());
    let mut frames = Vec::new();
    frames.push(ep.frame(0.0, substages[0].index));

    let mut tick: u64 = 0;
    for sub in substages {
        let n = (sub.duration * frame_rate).round() as u64;
        let start_pose = ep.ee;
        let start_grip = ep.grip;

        // Contact can begin at the stroke boundary (push substages start
        // with the pusher already on the object).
        let t_entry = tick as f64 * dt;
        ep.attachment_transitions(sub, t_entry);

        for j in 1..=n {
            tick += 1;
            let t = tick as f64 * dt;
            let s = j as f64 / n as f64;
            let target = effective_target(sub, &plan.scene, t);
            ep.ee = Pose {
                position: start_pose.position.lerp(&target.position, s),
                orientation: start_pose
                    .orientation
                    .slerp(&target.orientation, s)
                    .expect("interpolation parameter in range"),
            };
            ep.grip = start_grip + (sub.gripper_target - start_grip) * s;
            ep.update_object_poses(t);
            ep.attachment_transitions(sub, t);
            ep.update_object_poses(t);
            frames.push(ep.frame(t, sub.index));
        }
        ep.release_push_contacts(sub, tick as f64 * dt);
        ep.update_object_poses(tick as f64 * dt);
        if let Some(last) = frames.last_mut() {
            *last = ep.frame(last.time, sub.index);
        }
    }

    let duration = frames.last().unwrap().time;
    let success = success_predicate(plan, frames.last().unwrap());
    Ok(Trajectory {
        plan: plan.clone(),
        frames,
        outcome: if success {
            Outcome::Success
        } else {
            Outcome::Failure
        },
        duration,
        frame_rate,
        episode_seed: seed,
        failure_record_id: None,
    })
}

// ---------------------------------------------------------------------------
// Success predicates
// ---------------------------------------------------------------------------

fn expected_orientation(
    spec: Option<&OrientSpec>,
    initial: &Orientation,
) -> Result<Orientation, String> {
    match spec {
        None => Ok(*initial),
        Some(OrientSpec::Named(n)) if n == "identity" => Ok(Orientation::IDENTITY),
        Some(OrientSpec::Named(n)) if n == "keep" => Ok(*initial),
        Some(OrientSpec::Named(n)) => Err(format!("unknown orientation spec '{n}'")),
        Some(OrientSpec::AxisAngle(a)) => Ok(a.to_orientation()),
    }
}

fn goal_holds(goal: &GoalSpec, plan: &TaskPlan, frame: &Frame) -> bool {
    match goal {
        GoalSpec::All { goals } => goals.iter().all(|g| goal_holds(g, plan, frame)),
        GoalSpec::ObjectAt {
            object,
            at,
            orientation,
            check_orientation,
        } => {
            let Some(pose) = frame.object_poses.get(object) else {
                return false;
            };
            let initial = match plan.scene.object(object) {
                Some(o) => o.pose,
                None => return false,
            };
            let base = match (&at.object, &at.point) {
                (Some(ref_id), _) => {
                    if at.live.unwrap_or(false) {
                        match frame.object_poses.get(ref_id) {
                            Some(p) => p.position,
                            None => return false,
                        }
                    } else {
                        match plan.scene.object(ref_id) {
                            Some(o) => o.pose.position,
                            None => return false,
                        }
                    }
                }
                (None, Some(p)) => Position {
                    x: p[0],
                    y: p[1],
                    z: p[2],
                },
                (None, None) => return false,
            };
            let expected = base
                + at.offset
                    .map(|o| Position {
                        x: o[0],
                        y: o[1],
                        z: o[2],
                    })
                    .unwrap_or(Position::ZERO);
            if pose.position.distance(&expected) > POS_TOL {
                return false;
            }
            if *check_orientation {
                match expected_orientation(orientation.as_ref(), &initial.orientation) {
                    Ok(q) => angular_distance(&pose.orientation, &q) <= ANG_TOL,
                    Err(_) => false,
                }
            } else {
                true
            }
        }
        GoalSpec::ObjectStacked {
            object,
            on,
            offset,
            orientation,
            check_orientation,
        } => {
            let (Some(top), Some(base)) =
                (frame.object_poses.get(object), frame.object_poses.get(on))
            else {
                return false;
            };
            let expected = base.position
                + Position {
                    x: offset[0],
                    y: offset[1],
                    z: offset[2],
                };
            if top.position.distance(&expected) > POS_TOL {
                return false;
            }
            if *check_orientation {
                let initial = match plan.scene.object(object) {
                    Some(o) => o.pose.orientation,
                    None => return false,
                };
                match expected_orientation(orientation.as_ref(), &initial) {
                    Ok(q) => angular_distance(&top.orientation, &q) <= ANG_TOL,
                    Err(_) => false,
                }
            } else {
                true
            }
        }
    }
}

/// Per-task geometric success test on a final frame.
pub fn success_predicate(plan: &TaskPlan, final_frame: &Frame) -> bool {
    goal_holds(&plan.goal, plan, final_frame)
}

// ---------------------------------------------------------------------------
// Segmentation
// ---------------------------------------------------------------------------

/// Prefix of a trajectory up to `t_pause`, marked in-progress; stands in for
/// the paused third-view video segment of the correction loop.
pub fn segment(traj: &Trajectory, t_pause: f64) -> Result<Trajectory, SimError> {
    if t_pause.is_nan() || t_pause <= 0.0 || t_pause > traj.duration {
        return Err(SimError::InvalidArgument(format!(
            "pause time {t_pause} outside (0, {}]",
            traj.duration
        )));
    }
    let frames: Vec<Frame> = traj
        .frames
        .iter()
        .filter(|f| f.time <= t_pause)
        .cloned()
        .collect();
    let duration = frames.last().map(|f| f.time).unwrap_or(0.0);
    Ok(Trajectory {
        plan: traj.plan.clone(),
        frames,
        outcome: Outcome::InProgress,
        duration,
        frame_rate: traj.frame_rate,
        episode_seed: traj.episode_seed,
        failure_record_id: traj.failure_record_id.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taskmodel::{build_task, TaskId};

    fn expert(task: TaskId, seed: u64) -> Trajectory {
        let plan = build_task(task, seed).unwrap();
        run_episode(&plan, None, DEFAULT_FRAME_RATE, seed).unwrap()
    }

    #[test]
    fn expert_episodes_succeed_across_the_catalog() {
        for id in TaskId::ALL {
            let traj = expert(*id, 3);
            assert_eq!(traj.outcome, Outcome::Success, "{id} expert run failed");
        }
    }

    #[test]
    fn frame_times_are_exact_ticks() {
        let traj = expert(TaskId::PickCube, 11);
        assert_eq!(traj.frames[0].time, 0.0);
        for (k, f) in traj.frames.iter().enumerate() {
            assert_eq!(f.time, k as f64 * 0.1);
        }
        assert_eq!(traj.duration, traj.frames.last().unwrap().time);
    }

    #[test]
    fn identical_inputs_reproduce_identical_trajectories() {
        let plan = build_task(TaskId::StackCube, 21).unwrap();
        let a = run_episode(&plan, None, 10.0, 21).unwrap();
        let b = run_episode(&plan, None, 10.0, 21).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn grasped_object_tracks_end_effector() {
        let plan = build_task(TaskId::PickCube, 5).unwrap();
        let traj = run_episode(&plan, None, 10.0, 5).unwrap();
        // While the cube is carried it sits grasp_dz below the gripper.
        let carried: Vec<&Frame> = traj
            .frames
            .iter()
            .filter(|f| f.active_substage == 4 || f.active_substage == 5)
            .collect();
        assert!(!carried.is_empty());
        for f in carried {
            let cube = &f.object_poses["cube"];
            let local = f.ee_pose.relative_to(cube);
            assert!(local.position.norm() < 0.01 + 1e-9);
        }
    }

    #[test]
    fn weak_closure_never_attaches() {
        let plan = build_task(TaskId::PickCube, 5).unwrap();
        let mut subs = plan.substages.clone();
        subs[2].gripper_target = 0.2; // below ATTACH_THRESHOLD
        let traj = run_episode(&plan, Some(&subs), 10.0, 5).unwrap();
        assert_eq!(traj.outcome, Outcome::Failure);
        let first = &traj.frames[0].object_poses["cube"];
        let last = &traj.final_frame().object_poses["cube"];
        assert!(first.position.distance(&last.position) < 1e-9);
    }

    #[test]
    fn position_overshoot_defeats_the_push_task() {
        let plan = build_task(TaskId::PushCube, 9).unwrap();
        let mut subs = plan.substages.clone();
        let k = subs.iter().position(|s| s.critical).unwrap();
        subs[k].target_pose.position.x += 10.0 * POS_TOL;
        let traj = run_episode(&plan, Some(&subs), 10.0, 9).unwrap();
        assert_eq!(traj.outcome, Outcome::Failure);
    }

    #[test]
    fn zero_duration_plans_are_infeasible() {
        let plan = build_task(TaskId::PushCube, 1).unwrap();
        let mut subs = plan.substages.clone();
        subs[0].duration = 0.0;
        assert!(matches!(
            run_episode(&plan, Some(&subs), 10.0, 1),
            Err(SimError::PlanInfeasible(_))
        ));
    }

    #[test]
    fn out_of_workspace_targets_are_infeasible() {
        let plan = build_task(TaskId::PickCube, 2).unwrap();
        let mut subs = plan.substages.clone();
        subs[4].target_pose.position.z = -0.5;
        assert!(matches!(
            run_episode(&plan, Some(&subs), 10.0, 2),
            Err(SimError::PlanInfeasible(_))
        ));
    }

    #[test]
    fn final_cube_far_from_target_is_a_failure() {
        let plan = build_task(TaskId::PickCube, 8).unwrap();
        let traj = run_episode(&plan, None, 10.0, 8).unwrap();
        let mut frame = traj.final_frame().clone();
        frame.object_poses.get_mut("cube").unwrap().position.x += 10.0 * POS_TOL;
        assert!(!success_predicate(&plan, &frame));
    }

    #[test]
    fn segment_returns_prefix_marked_in_progress() {
        let traj = expert(TaskId::PickCube, 4);
        let half = traj.frames[traj.frames.len() / 2].time;
        let seg = segment(&traj, half).unwrap();
        assert_eq!(seg.outcome, Outcome::InProgress);
        assert!(seg.frames.len() < traj.frames.len());
        assert!(seg.frames.iter().all(|f| f.time <= half));
        // Idempotent for the same pause point.
        let seg2 = segment(&seg, half).unwrap();
        assert_eq!(seg.frames.len(), seg2.frames.len());
        // Full-duration segment keeps every frame.
        let full = segment(&traj, traj.duration).unwrap();
        assert_eq!(full.frames.len(), traj.frames.len());
    }

    #[test]
    fn segment_rejects_out_of_range_pause() {
        let traj = expert(TaskId::PickCube, 4);
        assert!(segment(&traj, 0.0).is_err());
        assert!(segment(&traj, traj.duration + 1.0).is_err());
    }

    #[test]
    fn spinning_scene_objects_co_rotate_until_grasped() {
        let plan = build_task(TaskId::SpinStack, 6).unwrap();
        let traj = run_episode(&plan, None, 10.0, 6).unwrap();
        assert_eq!(traj.outcome, Outcome::Success);
        let spin = plan.scene.spin.unwrap();
        let first = &traj.frames[0].object_poses["cube_b"];
        let t = 1.0;
        let frame = traj.frames.iter().find(|f| f.time == t).unwrap();
        let expected = spin.advance(first, t);
        assert!(
            frame.object_poses["cube_b"]
                .position
                .distance(&expected.position)
                < 1e-9
        );
    }
}
