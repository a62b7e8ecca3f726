//! Failure injection: transforms an expert plan into a failing plan
//! realizing exactly one taxonomy, and records the ground truth needed for
//! oracle answers and corrections.
//!
//! Sampled magnitudes are drawn from documented ranges chosen to exceed the
//! success tolerances: per-axis position deviations in [2, 10] x pos_tol,
//! orientation deviations of 15-60 degrees, gripper closure strictly below
//! the attach threshold, timing offsets of 1-2 substage durations.

use crate::geometry::{quat_mul, Orientation, Pose, Position};
use crate::grammar;
use crate::rng::{derive_seed, rng_for};
use crate::simulator::{ATTACH_THRESHOLD, POS_TOL};
use crate::taskmodel::{
    grasp_clearance, resolve_target, Interaction, SubstageTarget, TargetSpec, TaskId, TaskPlan,
};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum InjectError {
    #[error("taxonomy {taxonomy:?} not applicable to task {task}")]
    NotApplicable { taxonomy: Taxonomy, task: TaskId },
    #[error("spec does not match plan: {0}")]
    SpecMismatch(String),
}

/// Hierarchy level a failure type belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureLevel {
    TaskPlanning,
    MotionPlanning,
    ExecutionControl,
}

impl FailureLevel {
    pub fn as_str(&self) -> &'static str {
        match self {
            FailureLevel::TaskPlanning => "task planning",
            FailureLevel::MotionPlanning => "motion planning",
            FailureLevel::ExecutionControl => "execution control",
        }
    }
}

/// The six failure types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Taxonomy {
    StepOmission,
    WrongObject,
    PositionDeviation,
    OrientationDeviation,
    GraspingError,
    TimingError,
}

impl Taxonomy {
    pub const ALL: &'static [Taxonomy] = &[
        Taxonomy::StepOmission,
        Taxonomy::WrongObject,
        Taxonomy::PositionDeviation,
        Taxonomy::OrientationDeviation,
        Taxonomy::GraspingError,
        Taxonomy::TimingError,
    ];

    pub fn level(&self) -> FailureLevel {
        match self {
            Taxonomy::StepOmission | Taxonomy::WrongObject => FailureLevel::TaskPlanning,
            Taxonomy::PositionDeviation | Taxonomy::OrientationDeviation => {
                FailureLevel::MotionPlanning
            }
            Taxonomy::GraspingError | Taxonomy::TimingError => FailureLevel::ExecutionControl,
        }
    }

    /// Canonical option string used by the multiple-choice evaluation.
    pub fn option_string(&self) -> &'static str {
        match self {
            Taxonomy::OrientationDeviation => "Orientation deviation.",
            Taxonomy::StepOmission => "Step omission.",
            Taxonomy::WrongObject => "Wrong target object.",
            Taxonomy::TimingError => "Timing error.",
            Taxonomy::GraspingError => "Grasping error.",
            Taxonomy::PositionDeviation => "Position deviation.",
        }
    }

    pub fn slug(&self) -> &'static str {
        match self {
            Taxonomy::StepOmission => "step_omission",
            Taxonomy::WrongObject => "wrong_object",
            Taxonomy::PositionDeviation => "position_deviation",
            Taxonomy::OrientationDeviation => "orientation_deviation",
            Taxonomy::GraspingError => "grasping_error",
            Taxonomy::TimingError => "timing_error",
        }
    }

    pub fn from_slug(s: &str) -> Option<Taxonomy> {
        Taxonomy::ALL.iter().copied().find(|t| t.slug() == s)
    }
}

/// Ground-truth perturbation behind one injected failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FailurePayload {
    OmittedSubstage { substage: Box<SubstageTarget> },
    WrongObject { intended: String, actual: String },
    PositionDeviation { delta: Position },
    OrientationDeviation { delta: Orientation },
    GraspingError { intended: f64, actual: f64 },
    TimingError { nominal: f64, offset: f64 },
}

impl FailurePayload {
    fn taxonomy(&self) -> Taxonomy {
        match self {
            FailurePayload::OmittedSubstage { .. } => Taxonomy::StepOmission,
            FailurePayload::WrongObject { .. } => Taxonomy::WrongObject,
            FailurePayload::PositionDeviation { .. } => Taxonomy::PositionDeviation,
            FailurePayload::OrientationDeviation { .. } => Taxonomy::OrientationDeviation,
            FailurePayload::GraspingError { .. } => Taxonomy::GraspingError,
            FailurePayload::TimingError { .. } => Taxonomy::TimingError,
        }
    }
}

/// A sampled fault before application.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureSpec {
    pub taxonomy: Taxonomy,
    /// Catalog index of the perturbed substage S_k.
    pub substage_index: usize,
    pub payload: FailurePayload,
}

/// Recorded ground truth of an injected failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub id: String,
    pub task_id: TaskId,
    pub taxonomy: Taxonomy,
    pub error_substage: usize,
    pub substage_name: String,
    pub payload: FailurePayload,
    /// Stored for pose perturbations only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbed_pose: Option<Pose>,
    /// Pre-perturbation snapshot of S_k; makes reversal exact.
    pub nominal_substage: SubstageTarget,
    pub description: String,
    pub correction_hint: String,
}

// ---------------------------------------------------------------------------
// Applicability
// ---------------------------------------------------------------------------

fn omissible(plan: &TaskPlan) -> Vec<usize> {
    plan.substages
        .iter()
        .filter(|s| s.omissible)
        .map(|s| s.index)
        .collect()
}

fn critical(plan: &TaskPlan) -> Vec<usize> {
    plan.substages
        .iter()
        .filter(|s| s.critical)
        .map(|s| s.index)
        .collect()
}

fn retargetable(plan: &TaskPlan) -> Vec<usize> {
    plan.substages
        .iter()
        .filter(|s| {
            s.retargetable
                && s.object_id
                    .as_deref()
                    .map(|b| wrong_object_pool(plan, b).count() > 0)
                    .unwrap_or(false)
        })
        .map(|s| s.index)
        .collect()
}

fn graspable_faults(plan: &TaskPlan) -> Vec<usize> {
    plan.substages
        .iter()
        .filter(|s| s.interaction == Interaction::Grasp && s.omissible)
        .map(|s| s.index)
        .collect()
}

fn timing_faults(plan: &TaskPlan) -> Vec<usize> {
    plan.substages
        .iter()
        .filter(|s| s.tracked && (s.critical || s.omissible))
        .map(|s| s.index)
        .collect()
}

fn wrong_object_pool<'a>(
    plan: &'a TaskPlan,
    intended: &'a str,
) -> impl Iterator<Item = &'a str> + 'a {
    plan.scene
        .objects
        .iter()
        .filter(move |o| o.graspable && o.id != intended)
        .map(|o| o.id.as_str())
}

fn candidate_substages(plan: &TaskPlan, taxonomy: Taxonomy) -> Vec<usize> {
    match taxonomy {
        Taxonomy::StepOmission => omissible(plan),
        Taxonomy::WrongObject => retargetable(plan),
        Taxonomy::PositionDeviation => critical(plan),
        // Final-frame predicates on spinning scenes cannot observe an
        // orientation offset, so the taxonomy is reserved for static tasks.
        Taxonomy::OrientationDeviation => {
            if plan.scene.spin.is_some() {
                Vec::new()
            } else {
                critical(plan)
            }
        }
        Taxonomy::GraspingError => graspable_faults(plan),
        Taxonomy::TimingError => timing_faults(plan),
    }
}

/// The taxonomies that can be injected into this plan.
pub fn applicable_taxonomies(plan: &TaskPlan) -> Vec<Taxonomy> {
    Taxonomy::ALL
        .iter()
        .copied()
        .filter(|t| !candidate_substages(plan, *t).is_empty())
        .collect()
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

/// Draws a failure specification: taxonomy (uniform over applicable when
/// unspecified), target substage, and a perturbation payload guaranteed to
/// exceed the success tolerances. Deterministic in `seed`.
pub fn sample_failure_spec(
    plan: &TaskPlan,
    taxonomy: Option<Taxonomy>,
    seed: u64,
) -> Result<FailureSpec, InjectError> {
    let mut rng = rng_for(derive_seed(seed, "failure-spec", plan.seed));
    let taxonomy = match taxonomy {
        Some(t) => {
            if candidate_substages(plan, t).is_empty() {
                return Err(InjectError::NotApplicable {
                    taxonomy: t,
                    task: plan.task_id,
                });
            }
            t
        }
        None => {
            let choices = applicable_taxonomies(plan);
            choices[rng.random_range(0..choices.len())]
        }
    };

    let candidates = candidate_substages(plan, taxonomy);
    let k = candidates[rng.random_range(0..candidates.len())];
    let sub = plan
        .substages
        .iter()
        .find(|s| s.index == k)
        .expect("candidate index exists");

    let payload = match taxonomy {
        Taxonomy::StepOmission => FailurePayload::OmittedSubstage {
            substage: Box::new(sub.clone()),
        },
        Taxonomy::WrongObject => {
            let intended = sub.object_id.clone().expect("retargetable has object");
            let mut pool: Vec<&str> = wrong_object_pool(plan, &intended).collect();
            pool.sort_unstable();
            let actual = pool[rng.random_range(0..pool.len())].to_string();
            FailurePayload::WrongObject { intended, actual }
        }
        Taxonomy::PositionDeviation => {
            let mask = rng.random_range(1u8..=7);
            let mut delta = [0.0; 3];
            for (axis, d) in delta.iter_mut().enumerate() {
                if mask & (1 << axis) != 0 {
                    let mag = rng.random_range(2.0 * POS_TOL..=10.0 * POS_TOL);
                    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                    *d = sign * mag;
                }
            }
            FailurePayload::PositionDeviation {
                delta: Position {
                    x: delta[0],
                    y: delta[1],
                    z: delta[2],
                },
            }
        }
        Taxonomy::OrientationDeviation => {
            // Uniform axis on the sphere, angle in [15, 60] degrees.
            let z: f64 = rng.random_range(-1.0..=1.0);
            let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let r = (1.0 - z * z).sqrt();
            let axis = [r * phi.cos(), r * phi.sin(), z];
            let angle = rng.random_range(15f64.to_radians()..=60f64.to_radians());
            FailurePayload::OrientationDeviation {
                delta: Orientation::from_axis_angle(axis, angle).expect("finite axis-angle"),
            }
        }
        Taxonomy::GraspingError => FailurePayload::GraspingError {
            intended: sub.gripper_target,
            actual: rng.random_range(0.0..=ATTACH_THRESHOLD - 0.1),
        },
        Taxonomy::TimingError => {
            let mag = rng.random_range(sub.duration..=2.0 * sub.duration);
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            FailurePayload::TimingError {
                nominal: sub.nominal_time,
                offset: sign * mag,
            }
        }
    };

    Ok(FailureSpec {
        taxonomy,
        substage_index: k,
        payload,
    })
}

// ---------------------------------------------------------------------------
// Injection
// ---------------------------------------------------------------------------

/// Applies a failure spec to the expert plan, returning the perturbed
/// substage sequence and the ground-truth record.
pub fn inject(
    plan: &TaskPlan,
    spec: &FailureSpec,
) -> Result<(Vec<SubstageTarget>, FailureRecord), InjectError> {
    if spec.payload.taxonomy() != spec.taxonomy {
        return Err(InjectError::SpecMismatch(
            "payload does not match taxonomy".into(),
        ));
    }
    let pos = plan
        .substages
        .iter()
        .position(|s| s.index == spec.substage_index)
        .ok_or_else(|| InjectError::SpecMismatch(format!("no substage {}", spec.substage_index)))?;
    let nominal = plan.substages[pos].clone();
    let mut perturbed = plan.substages.clone();
    let mut perturbed_pose = None;

    match &spec.payload {
        FailurePayload::OmittedSubstage { .. } => {
            perturbed.remove(pos);
        }
        FailurePayload::WrongObject { intended, actual } => {
            let sub = &mut perturbed[pos];
            if sub.object_id.as_deref() != Some(intended.as_str()) {
                return Err(InjectError::SpecMismatch(format!(
                    "substage {} does not manipulate '{intended}'",
                    spec.substage_index
                )));
            }
            sub.target_pose = match &sub.recipe {
                TargetSpec::Point { .. } => {
                    // Static waypoints carry no object reference: transplant
                    // by the initial-pose delta between the two objects.
                    let from = plan.scene.object(intended).ok_or_else(|| {
                        InjectError::SpecMismatch(format!("unknown object '{intended}'"))
                    })?;
                    let to = plan.scene.object(actual).ok_or_else(|| {
                        InjectError::SpecMismatch(format!("unknown object '{actual}'"))
                    })?;
                    Pose::new(
                        sub.target_pose.position + (to.pose.position - from.pose.position),
                        sub.target_pose.orientation,
                    )
                }
                recipe => resolve_target(
                    recipe,
                    &plan.scene,
                    grasp_clearance(),
                    sub.nominal_time,
                    sub.tracked,
                    None,
                    Some((intended.as_str(), actual.as_str())),
                )
                .map_err(InjectError::SpecMismatch)?,
            };
            sub.object_id = Some(actual.clone());
        }
        FailurePayload::PositionDeviation { delta } => {
            let sub = &mut perturbed[pos];
            sub.target_pose.position = sub.target_pose.position + *delta;
            perturbed_pose = Some(sub.target_pose);
        }
        FailurePayload::OrientationDeviation { delta } => {
            let sub = &mut perturbed[pos];
            sub.target_pose.orientation = quat_mul(delta, &sub.target_pose.orientation);
            perturbed_pose = Some(sub.target_pose);
        }
        FailurePayload::GraspingError { intended, actual } => {
            if *actual >= *intended {
                return Err(InjectError::SpecMismatch(
                    "grasping error requires strictly weaker closure".into(),
                ));
            }
            perturbed[pos].gripper_target = *actual;
        }
        FailurePayload::TimingError { offset, .. } => {
            if *offset == 0.0 {
                return Err(InjectError::SpecMismatch(
                    "timing offset must be nonzero".into(),
                ));
            }
            perturbed[pos].timing_offset = *offset;
        }
    }

    let id = format!(
        "fr-{:016x}",
        derive_seed(
            plan.seed,
            &format!("{}-{}", plan.task_id, spec.taxonomy.slug()),
            spec.substage_index as u64,
        )
    );
    let mut record = FailureRecord {
        id,
        task_id: plan.task_id,
        taxonomy: spec.taxonomy,
        error_substage: spec.substage_index,
        substage_name: nominal.name.clone(),
        payload: spec.payload.clone(),
        perturbed_pose,
        nominal_substage: nominal,
        description: String::new(),
        correction_hint: String::new(),
    };
    record.description = describe_failure(&record);
    record.correction_hint = match record.taxonomy.level() {
        FailureLevel::TaskPlanning => high_level_correction(&record, plan),
        _ => low_level_correction(&record),
    };
    Ok((perturbed, record))
}

/// Restores the expert substage sequence from a perturbed one, using the
/// record's nominal snapshot; exact to the byte.
pub fn revert(perturbed: &[SubstageTarget], record: &FailureRecord) -> Vec<SubstageTarget> {
    let mut out: Vec<SubstageTarget> = perturbed.to_vec();
    match record.taxonomy {
        Taxonomy::StepOmission => {
            let at = out
                .iter()
                .position(|s| s.index > record.error_substage)
                .unwrap_or(out.len());
            out.insert(at, record.nominal_substage.clone());
        }
        _ => {
            if let Some(s) = out.iter_mut().find(|s| s.index == record.error_substage) {
                *s = record.nominal_substage.clone();
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Descriptions and corrections
// ---------------------------------------------------------------------------

/// Deterministic, digit-free description of the failure: substage, taxonomy,
/// and a detail sentence using the axis-naming convention.
pub fn describe_failure(record: &FailureRecord) -> String {
    let detail = match &record.payload {
        FailurePayload::OmittedSubstage { substage } => format!(
            "The required substage '{}' was skipped, resulting in an incomplete plan",
            substage.name
        ),
        FailurePayload::WrongObject { intended, actual } => format!(
            "The wrong object '{actual}' was manipulated instead of '{intended}'"
        ),
        FailurePayload::PositionDeviation { delta } => {
            let phrases = grammar::deviation_phrases(delta);
            if phrases.is_empty() {
                "The end-effector stayed at the desired target position".to_string()
            } else {
                format!("The end-effector is {}", phrases.join(" and "))
            }
        }
        FailurePayload::OrientationDeviation { .. } => {
            "The end-effector orientation is rotated away from the planned orientation".to_string()
        }
        FailurePayload::GraspingError { .. } => format!(
            "The gripper closure was too weak to hold the object, so the '{}' was never securely grasped",
            record
                .nominal_substage
                .object_id
                .as_deref()
                .unwrap_or("object")
        ),
        FailurePayload::TimingError { offset, .. } => {
            if *offset < 0.0 {
                "The substage was executed too early against the moving scene".to_string()
            } else {
                "The substage was executed too late against the moving scene".to_string()
            }
        }
    };
    format!(
        "At substage '{}': {} {}.",
        record.substage_name,
        record.taxonomy.option_string(),
        detail
    )
}

/// Magnitude-free direction-grammar correction for the record.
pub fn low_level_correction(record: &FailureRecord) -> String {
    match &record.payload {
        FailurePayload::PositionDeviation { delta } => grammar::movement_instruction(delta),
        FailurePayload::OrientationDeviation { .. } => grammar::rotate_back_instruction(),
        FailurePayload::GraspingError { .. } => grammar::firm_grasp_instruction(
            record
                .nominal_substage
                .object_id
                .as_deref()
                .unwrap_or("object"),
        ),
        FailurePayload::TimingError { .. } => grammar::wait_alignment_instruction(),
        FailurePayload::OmittedSubstage { .. } => {
            "Move the end-effector along the planned path and complete every step of the task."
                .to_string()
        }
        FailurePayload::WrongObject { .. } => {
            "Move the end-effector to the correct object before continuing.".to_string()
        }
    }
}

/// Resequenced-substage correction for the record.
pub fn high_level_correction(record: &FailureRecord, plan: &TaskPlan) -> String {
    match &record.payload {
        FailurePayload::OmittedSubstage { substage } => {
            let next = plan
                .substages
                .iter()
                .find(|s| s.index == record.error_substage + 1)
                .map(|s| s.name.clone());
            match next {
                Some(next) => format!(
                    "Go back and perform '{}' before '{}', then continue the plan in order.",
                    substage.name, next
                ),
                None => format!(
                    "Go back and perform '{}' to finish the plan.",
                    substage.name
                ),
            }
        }
        FailurePayload::WrongObject { intended, actual } => format!(
            "Put the '{actual}' down and redo '{}' on the '{intended}' instead, then continue the plan.",
            record.substage_name
        ),
        FailurePayload::PositionDeviation { .. } | FailurePayload::OrientationDeviation { .. } => {
            format!(
                "Repeat the approach for '{}' precisely as planned, then continue the remaining substages.",
                record.substage_name
            )
        }
        FailurePayload::GraspingError { .. } => format!(
            "Open the gripper, return to '{}', and repeat the pick sequence on the object.",
            record.substage_name
        ),
        FailurePayload::TimingError { .. } => format!(
            "Re-time the remaining substages against the disc rotation and retry '{}'.",
            record.substage_name
        ),
    }
}

// ---------------------------------------------------------------------------
// Structural diff
// ---------------------------------------------------------------------------

/// Fields of one substage that differ between two plans.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SubstageDiff {
    pub index: usize,
    pub fields: Vec<&'static str>,
}

/// Field-level diff of a perturbed substage sequence against the expert
/// plan; the exactly-one-fault checks are built on this.
pub fn diff_plans(expert: &[SubstageTarget], perturbed: &[SubstageTarget]) -> Vec<SubstageDiff> {
    let mut diffs = Vec::new();
    let mut pi = perturbed.iter().peekable();
    for e in expert {
        match pi.peek() {
            Some(p) if p.index == e.index => {
                let p = pi.next().unwrap();
                let mut fields = Vec::new();
                if p.name != e.name {
                    fields.push("name");
                }
                if p.recipe != e.recipe {
                    fields.push("recipe");
                }
                if p.target_pose.position != e.target_pose.position {
                    fields.push("target_position");
                }
                if p.target_pose.orientation != e.target_pose.orientation {
                    fields.push("target_orientation");
                }
                if p.gripper_target != e.gripper_target {
                    fields.push("gripper_target");
                }
                if p.object_id != e.object_id {
                    fields.push("object_id");
                }
                if p.interaction != e.interaction {
                    fields.push("interaction");
                }
                if p.nominal_time != e.nominal_time {
                    fields.push("nominal_time");
                }
                if p.duration != e.duration {
                    fields.push("duration");
                }
                if p.timing_offset != e.timing_offset {
                    fields.push("timing_offset");
                }
                if !fields.is_empty() {
                    diffs.push(SubstageDiff {
                        index: e.index,
                        fields,
                    });
                }
            }
            _ => diffs.push(SubstageDiff {
                index: e.index,
                fields: vec!["omitted"],
            }),
        }
    }
    diffs
}
