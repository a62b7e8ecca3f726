//! QA corpus synthesis: renders the eight question types from trajectories
//! and failure records. Five types have mechanically extracted oracle
//! answers; the three open-ended types are produced by an annotator — a
//! remote endpoint when configured, a deterministic rule-based fallback
//! otherwise — so the whole pipeline runs offline.

use crate::evalharness::{build_mc_options, MCOptionSet};
use crate::injector::{high_level_correction, low_level_correction, FailureRecord};
use crate::net::{post_json, HttpConfig};
use crate::rng::{derive_seed, rng_for};
use crate::simulator::{Outcome, Trajectory};
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum QaError {
    #[error("{0:?} has no directly extracted answer; route it to the annotator")]
    OpenEnded(QuestionType),
    #[error("failure record presence must match trajectory outcome")]
    RecordMismatch,
    #[error("option construction: {0}")]
    Options(#[from] crate::evalharness::EvalError),
}

// ---------------------------------------------------------------------------
// Question types
// ---------------------------------------------------------------------------

/// Capability group a question type probes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapabilityGroup {
    TaskUnderstanding,
    FailureAnalysis,
    FailureCorrection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionType {
    TaskIdentification,
    TaskPlanning,
    FailureDetection,
    FailureIdentification,
    FailureLocating,
    FailureExplanation,
    HighLevelCorrection,
    LowLevelCorrection,
}

impl QuestionType {
    pub const ALL: &'static [QuestionType] = &[
        QuestionType::TaskIdentification,
        QuestionType::TaskPlanning,
        QuestionType::FailureDetection,
        QuestionType::FailureIdentification,
        QuestionType::FailureLocating,
        QuestionType::FailureExplanation,
        QuestionType::HighLevelCorrection,
        QuestionType::LowLevelCorrection,
    ];

    /// Question types synthesized for success trajectories.
    pub const SUCCESS_TYPES: &'static [QuestionType] = &[
        QuestionType::TaskIdentification,
        QuestionType::TaskPlanning,
        QuestionType::FailureDetection,
    ];

    pub fn group(&self) -> CapabilityGroup {
        match self {
            QuestionType::TaskIdentification | QuestionType::TaskPlanning => {
                CapabilityGroup::TaskUnderstanding
            }
            QuestionType::FailureDetection
            | QuestionType::FailureIdentification
            | QuestionType::FailureLocating
            | QuestionType::FailureExplanation => CapabilityGroup::FailureAnalysis,
            QuestionType::HighLevelCorrection | QuestionType::LowLevelCorrection => {
                CapabilityGroup::FailureCorrection
            }
        }
    }

    pub fn is_multiple_choice(&self) -> bool {
        matches!(
            self,
            QuestionType::FailureDetection
                | QuestionType::FailureIdentification
                | QuestionType::FailureLocating
        )
    }

    pub fn is_open_ended(&self) -> bool {
        matches!(
            self,
            QuestionType::FailureExplanation
                | QuestionType::HighLevelCorrection
                | QuestionType::LowLevelCorrection
        )
    }

    pub fn slug(&self) -> &'static str {
        match self {
            QuestionType::TaskIdentification => "task_identification",
            QuestionType::TaskPlanning => "task_planning",
            QuestionType::FailureDetection => "failure_detection",
            QuestionType::FailureIdentification => "failure_identification",
            QuestionType::FailureLocating => "failure_locating",
            QuestionType::FailureExplanation => "failure_explanation",
            QuestionType::HighLevelCorrection => "high_level_correction",
            QuestionType::LowLevelCorrection => "low_level_correction",
        }
    }

    pub fn from_slug(s: &str) -> Option<QuestionType> {
        QuestionType::ALL.iter().copied().find(|q| q.slug() == s)
    }

    /// The five fixed phrasings of this question type.
    pub fn templates(&self) -> &'static [&'static str; 5] {
        match self {
            QuestionType::TaskIdentification => &TASK_IDENTIFICATION_TEMPLATES,
            QuestionType::TaskPlanning => &TASK_PLANNING_TEMPLATES,
            QuestionType::FailureDetection => &FAILURE_DETECTION_TEMPLATES,
            QuestionType::FailureIdentification => &FAILURE_IDENTIFICATION_TEMPLATES,
            QuestionType::FailureLocating => &FAILURE_LOCATING_TEMPLATES,
            QuestionType::FailureExplanation => &FAILURE_EXPLANATION_TEMPLATES,
            QuestionType::HighLevelCorrection => &HIGH_LEVEL_CORRECTION_TEMPLATES,
            QuestionType::LowLevelCorrection => &LOW_LEVEL_CORRECTION_TEMPLATES,
        }
    }
}

pub static TASK_IDENTIFICATION_TEMPLATES: [&str; 5] = [
    "Please describe the task the robot is performing in the video.",
    "Based on the video, what task is the robot carrying out?",
    "Can you identify what task the robot is doing in the provided video?",
    "What is the robot doing in the video? Please describe its task.",
    "From the video, what task is the robot engaged in?",
];

pub static TASK_PLANNING_TEMPLATES: [&str; 5] = [
    "This is a video of a robotic arm performing a task, please break down its execution into a sequence of substages.",
    "Given the video of a robotic arm doing a task, please plan its actions as a sequence of substages.",
    "In the video, the robotic arm executes a task. Please break down its execution into a sequence of substages.",
    "Watch the video of the robotic arm performing a task, please outline the process as a substages sequence.",
    "Based on the video showing a robotic arm carrying out a task, please generate a sequence of substages for its execution.",
];

pub static FAILURE_DETECTION_TEMPLATES: [&str; 5] = [
    "This is a video of a robotic arm performing a task, was the task successfully completed?",
    "Based on the video of the robotic arm executing a task, did it finish the task successfully?",
    "In the video, the robotic arm executes a task, can you determine whether it was successful?",
    "Please assess if the robotic arm has successfully accomplished the task.",
    "In the video, the robotic arm executes a task, was it successful?",
];

pub static FAILURE_IDENTIFICATION_TEMPLATES: [&str; 5] = [
    "This is a video of a robotic arm performing a task, please identify the type of error that occurred during execution.",
    "Based on the video of the robotic arm carrying out a task, what type of error took place during the task?",
    "The robotic arm failed to complete the task, can you specify the type of error that happened?",
    "Please describe the error type that occurred during the robotic arm's execution of the task.",
    "From the video of the robotic arm performing a task, what kind of error can be observed during the task?",
];

pub static FAILURE_LOCATING_TEMPLATES: [&str; 5] = [
    "This is a video of a robotic arm performing a task, please identify the subtask stage where the error occurred.",
    "This is a video of a robotic arm performing a task, during which subtask did the error happen?",
    "The robotic arm failed to complete the task, can you locate the specific subtask in which the error occurred?",
    "Please determine at what subtask stage the error took place in the robotic arm's performance of the task.",
    "From the video of the robotic arm carrying out a task, identify the phase of the task where the error happened.",
];

pub static FAILURE_EXPLANATION_TEMPLATES: [&str; 5] = [
    "This is a video of a robotic arm performing a task, please explain in detail the reason for the task failure.",
    "Based on the video, provide a detailed explanation of why the robotic arm failed to complete the task.",
    "The robotic arm failed to complete the task, can you describe in detail the cause of the failure in the video?",
    "Please analyze the video and explain thoroughly what led to the failure of the task.",
    "From the video of the robotic arm executing a task, give a detailed explanation of the reason behind the task failure.",
];

pub static HIGH_LEVEL_CORRECTION_TEMPLATES: [&str; 5] = [
    "This is a video of a robotic arm performing a task, an error occurred during execution. Please provide high-level corrective instructions to help the robot recover and complete the task successfully.",
    "Based on the video showing an error during the robotic arm's execution of a task, give detailed high-level guidance for correcting the error and enabling task completion.",
    "In this video, an error happened while the robotic arm was performing the task, please suggest high-level recovery steps so the robot can continue and complete the task.",
    "The robotic arm failed to complete the task, please analyze the error in the robotic arm's task from the video and propose high-level correction actions that would allow successful task completion.",
    "From the video of the robotic arm failing during the task, provide high-level corrective commands to guide it to recover and finish the task.",
];

pub static LOW_LEVEL_CORRECTION_TEMPLATES: [&str; 5] = [
    "This is a video of a robotic arm performing a task, an error occurred during execution. Please provide low-level corrective commands to help the robot recover and complete the task successfully.",
    "Based on the video, an error happened while the robot was executing a task, give detailed low-level instructions to correct the issue and allow the task to be finished.",
    "According to the video of the robotic arm executing a task, please suggest specific low-level recovery actions to enable successful task completion.",
    "From the video showing an error in the robotic arm's task, provide precise low-level commands for error correction and recovery.",
    "In the video, an error occurred during the robot's performance of the task, please give low-level control instructions to help it recover and complete the task.",
];

/// Seeded uniform pick among the five templates of a question type.
pub fn render_question(qtype: QuestionType, seed: u64) -> &'static str {
    let mut rng = rng_for(derive_seed(seed, "question-template", qtype as u64));
    qtype.templates()[rng.random_range(0..5)]
}

// ---------------------------------------------------------------------------
// QA items
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerProvenance {
    Oracle,
    LlmAnnotated,
    RuleFallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAItem {
    pub id: String,
    pub trajectory_id: String,
    pub task_id: crate::taskmodel::TaskId,
    pub category: crate::taskmodel::Category,
    pub question_type: QuestionType,
    pub question_text: String,
    pub reference_answer: String,
    pub answer_provenance: AnswerProvenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc_options: Option<MCOptionSet>,
}

/// Stable identifier of a trajectory, used to key QA items and files.
pub fn trajectory_id(traj: &Trajectory) -> String {
    let tag = match traj.outcome {
        Outcome::Success => "success",
        Outcome::Failure => "failure",
        Outcome::InProgress => "segment",
    };
    format!("{}-{}-{:016x}", traj.plan.task_id, tag, traj.episode_seed)
}

/// Reference answer for the five deterministic question types, extracted
/// directly from the plan and the failure record.
pub fn oracle_answer(
    qtype: QuestionType,
    traj: &Trajectory,
    record: Option<&FailureRecord>,
) -> Result<String, QaError> {
    match (traj.outcome, record) {
        (Outcome::Failure, Some(_)) | (Outcome::Success, None) => {}
        _ => return Err(QaError::RecordMismatch),
    }
    match qtype {
        QuestionType::TaskIdentification => Ok(traj.plan.instruction.clone()),
        QuestionType::TaskPlanning => Ok(traj
            .plan
            .substages
            .iter()
            .map(|s| s.name.clone())
            .collect::<Vec<_>>()
            .join(" -> ")),
        QuestionType::FailureDetection => Ok(match traj.outcome {
            Outcome::Success => "Yes".to_string(),
            _ => "No".to_string(),
        }),
        QuestionType::FailureIdentification => Ok(record
            .ok_or(QaError::RecordMismatch)?
            .taxonomy
            .option_string()
            .to_string()),
        QuestionType::FailureLocating => {
            Ok(record.ok_or(QaError::RecordMismatch)?.substage_name.clone())
        }
        other => Err(QaError::OpenEnded(other)),
    }
}

// ---------------------------------------------------------------------------
// Open-ended annotation
// ---------------------------------------------------------------------------

/// The three open-ended reference answers for one failure trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenEndedAnswers {
    pub reason: String,
    pub high_level_correction: String,
    pub low_level_correction: String,
}

pub trait Annotator {
    fn annotate(
        &self,
        traj: &Trajectory,
        record: &FailureRecord,
    ) -> Result<OpenEndedAnswers, String>;

    fn provenance(&self) -> AnswerProvenance;
}

/// Deterministic template annotator: explanation from the failure
/// description, corrections from the instruction grammar. Keeps the whole
/// pipeline offline and reproducible.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleFallbackAnnotator;

impl Annotator for RuleFallbackAnnotator {
    fn annotate(
        &self,
        traj: &Trajectory,
        record: &FailureRecord,
    ) -> Result<OpenEndedAnswers, String> {
        Ok(OpenEndedAnswers {
            reason: record.description.clone(),
            high_level_correction: high_level_correction(record, &traj.plan),
            low_level_correction: low_level_correction(record),
        })
    }

    fn provenance(&self) -> AnswerProvenance {
        AnswerProvenance::RuleFallback
    }
}

/// Prompt sent to the annotation endpoint. Placeholders: `{task}`,
/// `{subtask}`, `{error type}`, `{error stage}`, `{error detail}`,
/// `{error correction}`, `{error low level}`.
pub const ANNOTATION_PROMPT: &str = "This is a video of a robot arm performing a task, and the task is failed.\n\nHere is the basic information of the video:\n- Task: {task}\n- Subtask: {subtask}\n- Error type: {error type}\n- Error stage: {error stage}\n- Error detail: {error detail}\n- Correction suggestion: {error correction}\n- Perturbation ([x, y, z]): {error low level}\nThe perturbation is the difference between the actual position of the end-effector and the desired target position when the error occurs, where the X-axis points in front of the manipulator, the Y-axis points to the left, and the Z-axis points up. Namely, if the X-axis is positive, the end-effector is in front of the desired target position and causes the task to fail.\n\nAccording to the video and the information, you need to answer the following questions:\n1. Explain why the task is failed in detail.\n2. Give detailed High-level correction instructions to help the robot arm to recover from the failure. The high-level correction should describe what subtask the robot arm should perform to recover from the failure.\n3. Give detailed Low-level correction instructions to help the robot arm to recover from the failure. The low-level correction should describe which direction and how much the robot arm should move to recover from the failure.\n\nPlease note that specific numerical values should not be given to describe the extent of the low-level correction.\nAn example of the low-level correction is: \"Move the robot arm backward then move the robot arm to the left to align with the target object\".\nPlease note that specific numerical values should not be given in the explanation of the failure reason and the high-level correction, you should instead using rich language to describe the failure reason and the high-level correction.\n\nYour answer should be in the following JSON format:\n{\n    \"reason\": <reason>,\n    \"high level correction\": <high level correction>,\n    \"low level correction\": <low level correction>\n}";

/// Fills the annotation prompt from a failure record.
pub fn fill_annotation_prompt(traj: &Trajectory, record: &FailureRecord) -> String {
    let perturbation = match &record.payload {
        crate::injector::FailurePayload::PositionDeviation { delta } => {
            format!("[{:.3}, {:.3}, {:.3}]", delta.x, delta.y, delta.z)
        }
        _ => "none".to_string(),
    };
    ANNOTATION_PROMPT
        .replace("{task}", &traj.plan.instruction)
        .replace("{subtask}", &record.substage_name)
        .replace("{error type}", record.taxonomy.option_string())
        .replace("{error stage}", record.taxonomy.level().as_str())
        .replace("{error detail}", &record.description)
        .replace("{error correction}", &record.correction_hint)
        .replace("{error low level}", &perturbation)
}

/// Compact frame-subsampled summary of a trajectory, sent to remote
/// endpoints in place of rendered video.
pub fn trajectory_summary(traj: &Trajectory, max_frames: usize) -> serde_json::Value {
    let step = (traj.frames.len() / max_frames.max(1)).max(1);
    let frames: Vec<serde_json::Value> = traj
        .frames
        .iter()
        .step_by(step)
        .map(|f| {
            json!({
                "t": f.time,
                "ee": [f.ee_pose.position.x, f.ee_pose.position.y, f.ee_pose.position.z],
                "gripper": f.gripper,
                "substage": f.active_substage,
            })
        })
        .collect();
    json!({
        "task": traj.plan.task_id.as_str(),
        "instruction": traj.plan.instruction,
        "outcome": match traj.outcome {
            Outcome::Success => "success",
            Outcome::Failure => "failure",
            Outcome::InProgress => "in-progress",
        },
        "duration": traj.duration,
        "frames": frames,
    })
}

/// Remote annotator speaking the annotation wire protocol: filled prompt
/// plus trajectory summary out, a three-field JSON document back. Falls
/// back is the caller's decision when this errors.
pub struct RemoteAnnotator {
    pub endpoint: String,
    pub api_key: Option<String>,
    pub http: HttpConfig,
}

impl Annotator for RemoteAnnotator {
    fn annotate(
        &self,
        traj: &Trajectory,
        record: &FailureRecord,
    ) -> Result<OpenEndedAnswers, String> {
        let body = json!({
            "prompt": fill_annotation_prompt(traj, record),
            "trajectory_summary": trajectory_summary(traj, 16),
        });
        let resp = post_json(&self.endpoint, &body, self.api_key.as_deref(), &self.http)
            .map_err(|e| e.to_string())?;
        let field = |k: &str| -> Result<String, String> {
            resp.get(k)
                .and_then(|v| v.as_str())
                .map(str::to_string)
                .ok_or_else(|| format!("missing field '{k}' in annotator response"))
        };
        Ok(OpenEndedAnswers {
            reason: field("reason")?,
            high_level_correction: field("high level correction")?,
            low_level_correction: field("low level correction")?,
        })
    }

    fn provenance(&self) -> AnswerProvenance {
        AnswerProvenance::LlmAnnotated
    }
}

/// Runs the annotator and falls back to the rule-based templates when the
/// remote path fails; returns answers plus their provenance.
pub fn annotate_open_ended(
    traj: &Trajectory,
    record: &FailureRecord,
    annotator: &dyn Annotator,
) -> (OpenEndedAnswers, AnswerProvenance) {
    match annotator.annotate(traj, record) {
        Ok(answers) => (answers, annotator.provenance()),
        Err(_) => {
            let fallback = RuleFallbackAnnotator;
            let answers = fallback
                .annotate(traj, record)
                .expect("rule fallback is total");
            (answers, AnswerProvenance::RuleFallback)
        }
    }
}

// ---------------------------------------------------------------------------
// Synthesis
// ---------------------------------------------------------------------------

/// Synthesizes the QA items for one trajectory: all eight types for a
/// failure, the three understanding/detection types for a success.
/// Deterministic in `seed` on the fallback annotator path.
pub fn synthesize_qa(
    traj: &Trajectory,
    record: Option<&FailureRecord>,
    seed: u64,
    annotator: &dyn Annotator,
    substage_pool: &[String],
) -> Result<Vec<QAItem>, QaError> {
    match (traj.outcome, record) {
        (Outcome::Failure, Some(_)) | (Outcome::Success, None) => {}
        _ => return Err(QaError::RecordMismatch),
    }
    let traj_id = trajectory_id(traj);
    let types: &[QuestionType] = match traj.outcome {
        Outcome::Success => QuestionType::SUCCESS_TYPES,
        _ => QuestionType::ALL,
    };

    let open_ended = record.map(|r| annotate_open_ended(traj, r, annotator));

    let mut items = Vec::with_capacity(types.len());
    for (rank, qtype) in types.iter().enumerate() {
        let qseed = derive_seed(seed, "qa-item", rank as u64);
        let question_text = render_question(*qtype, qseed).to_string();
        let (reference_answer, answer_provenance) = if qtype.is_open_ended() {
            let (answers, provenance) = open_ended.as_ref().expect("failure path only").clone();
            let text = match qtype {
                QuestionType::FailureExplanation => answers.reason,
                QuestionType::HighLevelCorrection => answers.high_level_correction,
                QuestionType::LowLevelCorrection => answers.low_level_correction,
                _ => unreachable!(),
            };
            (text, provenance)
        } else {
            (
                oracle_answer(*qtype, traj, record)?,
                AnswerProvenance::Oracle,
            )
        };
        let mc_options = if qtype.is_multiple_choice() {
            Some(build_mc_options(
                *qtype,
                &reference_answer,
                substage_pool,
                derive_seed(qseed, "mc", 0),
            )?)
        } else {
            None
        };
        items.push(QAItem {
            id: format!("{traj_id}/{}", qtype.slug()),
            trajectory_id: traj_id.clone(),
            task_id: traj.plan.task_id,
            category: traj.plan.category,
            question_type: *qtype,
            question_text,
            reference_answer,
            answer_provenance,
            mc_options,
        });
    }
    Ok(items)
}
