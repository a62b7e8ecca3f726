//! Closed-loop failure correction: execute, pause on failure, extract the
//! trajectory prefix, obtain a natural-language instruction from a critic,
//! append it to the prompt, and re-execute from the initial scene state.
//! At most five attempts per trial, so at most four instructions.
//!
//! The shipped `ScriptedNoisyPolicy` carries one latent injected fault and
//! responds to the instruction grammar: a correctly-signed direction word
//! cancels that axis of the deviation, a wrong-signed word restores it, and
//! the rotate-back / regrasp-firmly / wait idioms and substage/object
//! mentions clear their matching fault kinds.

use crate::geometry::Position;
use crate::grammar::{self, Direction};
use crate::injector::{
    high_level_correction, inject, low_level_correction, sample_failure_spec, FailurePayload,
    FailureRecord, FailureSpec, Taxonomy,
};
use crate::net::{post_json, HttpConfig};
use crate::qasynth::trajectory_summary;
use crate::rng::{derive_seed, rng_for};
use crate::simulator::{run_episode, segment, Outcome, SimError, Trajectory};
use crate::taskmodel::{build_task, CatalogError, SubstageTarget, TaskId, TaskPlan};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LoopError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("no feasible latent fault for task after bounded resampling")]
    NoFeasibleFault,
}

pub const MAX_ATTEMPTS: usize = 5;
pub const PROMPT_SEPARATOR: &str = " Correction: ";
pub const DEFAULT_PAUSE_FRACTION: f64 = 0.6;

// ---------------------------------------------------------------------------
// Policies
// ---------------------------------------------------------------------------

pub trait PolicyAdapter {
    /// Called once per session before the first attempt.
    fn begin_session(&mut self, plan: &TaskPlan, session_seed: u64) -> Result<(), LoopError>;

    /// Substage overrides for the next attempt, derived from the prompt
    /// (including appended corrections). `None` executes the expert plan.
    fn plan_overrides(&mut self, prompt: &str, plan: &TaskPlan) -> Option<Vec<SubstageTarget>>;

    /// Ground truth of the latent fault, when the policy has one.
    fn latent_record(&self) -> Option<&FailureRecord>;
}

/// Executes the expert plan faithfully.
#[derive(Debug, Default)]
pub struct ExpertPolicy;

impl PolicyAdapter for ExpertPolicy {
    fn begin_session(&mut self, _plan: &TaskPlan, _seed: u64) -> Result<(), LoopError> {
        Ok(())
    }
    fn plan_overrides(&mut self, _prompt: &str, _plan: &TaskPlan) -> Option<Vec<SubstageTarget>> {
        None
    }
    fn latent_record(&self) -> Option<&FailureRecord> {
        None
    }
}

/// Policy with one latent injected fault that complies with parsed
/// correction instructions. `compliance` is the per-token probability of
/// acting on an actionable token (1.0 = always).
pub struct ScriptedNoisyPolicy {
    pub taxonomy_filter: Option<Taxonomy>,
    pub compliance: f64,
    latent: Option<(FailureSpec, FailureRecord)>,
    session_seed: u64,
}

impl ScriptedNoisyPolicy {
    pub fn new(taxonomy_filter: Option<Taxonomy>, compliance: f64) -> Self {
        Self {
            taxonomy_filter,
            compliance,
            latent: None,
            session_seed: 0,
        }
    }

    fn comply(&self, rng: &mut ChaCha12Rng) -> bool {
        self.compliance >= 1.0 || rng.random_bool(self.compliance.clamp(0.0, 1.0))
    }

    /// Replays every appended correction against the full latent fault and
    /// returns what remains of it.
    fn remaining_fault(&self, prompt: &str, plan: &TaskPlan) -> Option<FailureSpec> {
        let (spec, _record) = self.latent.as_ref()?;
        let corrections: Vec<&str> = prompt.split(PROMPT_SEPARATOR).skip(1).collect();
        if corrections.is_empty() {
            return Some(spec.clone());
        }
        let substage_pool: Vec<String> = plan.substages.iter().map(|s| s.name.clone()).collect();
        let object_pool: Vec<String> = plan.scene.objects.iter().map(|o| o.id.clone()).collect();
        let mut rng = rng_for(derive_seed(
            self.session_seed,
            prompt,
            corrections.len() as u64,
        ));

        match &spec.payload {
            FailurePayload::PositionDeviation { delta } => {
                let original = [delta.x, delta.y, delta.z];
                let mut remaining = original;
                for c in &corrections {
                    let parsed = grammar::parse_instruction(c, &[], &[]);
                    for d in parsed.directions {
                        let (axis, sign) = d.axis_sign();
                        if original[axis] == 0.0 || !self.comply(&mut rng) {
                            continue;
                        }
                        // The corrective word for an overshoot points the
                        // other way; a matching word cancels the axis, an
                        // opposing word restores it.
                        if sign * original[axis] < 0.0 {
                            remaining[axis] = 0.0;
                        } else {
                            remaining[axis] = original[axis];
                        }
                    }
                }
                if remaining.iter().all(|v| *v == 0.0) {
                    None
                } else {
                    Some(FailureSpec {
                        taxonomy: spec.taxonomy,
                        substage_index: spec.substage_index,
                        payload: FailurePayload::PositionDeviation {
                            delta: Position {
                                x: remaining[0],
                                y: remaining[1],
                                z: remaining[2],
                            },
                        },
                    })
                }
            }
            FailurePayload::OrientationDeviation { .. } => {
                let cleared = corrections.iter().any(|c| {
                    grammar::parse_instruction(c, &[], &[]).rotate_back && self.comply(&mut rng)
                });
                (!cleared).then(|| spec.clone())
            }
            FailurePayload::GraspingError { .. } => {
                let cleared = corrections.iter().any(|c| {
                    grammar::parse_instruction(c, &[], &[]).regrasp_firmly && self.comply(&mut rng)
                });
                (!cleared).then(|| spec.clone())
            }
            FailurePayload::TimingError { .. } => {
                let cleared = corrections.iter().any(|c| {
                    grammar::parse_instruction(c, &[], &[]).wait_for_alignment
                        && self.comply(&mut rng)
                });
                (!cleared).then(|| spec.clone())
            }
            FailurePayload::OmittedSubstage { substage } => {
                let cleared = corrections.iter().any(|c| {
                    grammar::parse_instruction(c, &substage_pool, &[])
                        .named_substages
                        .contains(&substage.name)
                        && self.comply(&mut rng)
                });
                (!cleared).then(|| spec.clone())
            }
            FailurePayload::WrongObject { intended, .. } => {
                let cleared = corrections.iter().any(|c| {
                    grammar::parse_instruction(c, &[], &object_pool)
                        .named_objects
                        .contains(intended)
                        && self.comply(&mut rng)
                });
                (!cleared).then(|| spec.clone())
            }
        }
    }
}

impl PolicyAdapter for ScriptedNoisyPolicy {
    fn begin_session(&mut self, plan: &TaskPlan, session_seed: u64) -> Result<(), LoopError> {
        self.session_seed = session_seed;
        for attempt in 0..64 {
            let s = derive_seed(session_seed, "latent-fault", attempt);
            let Ok(spec) = sample_failure_spec(plan, self.taxonomy_filter, s) else {
                return Err(LoopError::NoFeasibleFault);
            };
            let Ok((overrides, record)) = inject(plan, &spec) else {
                continue;
            };
            let feasible = overrides
                .iter()
                .all(|sub| plan.scene.workspace.contains(&sub.target_pose.position));
            if feasible {
                self.latent = Some((spec, record));
                return Ok(());
            }
        }
        Err(LoopError::NoFeasibleFault)
    }

    fn plan_overrides(&mut self, prompt: &str, plan: &TaskPlan) -> Option<Vec<SubstageTarget>> {
        let remaining = self.remaining_fault(prompt, plan)?;
        inject(plan, &remaining)
            .ok()
            .map(|(overrides, _)| overrides)
    }

    fn latent_record(&self) -> Option<&FailureRecord> {
        self.latent.as_ref().map(|(_, r)| r)
    }
}

// ---------------------------------------------------------------------------
// Critics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CriticLevel {
    High,
    Low,
}

pub trait CriticAdapter {
    fn name(&self) -> String;

    /// One correction instruction for a paused execution. The ground-truth
    /// record is available to oracle critics only.
    fn instruct(
        &mut self,
        prompt: &str,
        segment: &Trajectory,
        record: Option<&FailureRecord>,
    ) -> Result<String, String>;
}

/// Canonical correction for a recorded fault at the requested level.
pub fn oracle_instruction(record: &FailureRecord, level: CriticLevel, plan: &TaskPlan) -> String {
    match level {
        CriticLevel::Low => low_level_correction(record),
        CriticLevel::High => high_level_correction(record, plan),
    }
}

/// Reads the session's ground-truth record and answers with the canonical
/// correction at its level.
pub struct OracleCritic {
    pub level: CriticLevel,
}

impl CriticAdapter for OracleCritic {
    fn name(&self) -> String {
        match self.level {
            CriticLevel::Low => "oracle-low".to_string(),
            CriticLevel::High => "oracle-high".to_string(),
        }
    }

    fn instruct(
        &mut self,
        _prompt: &str,
        segment: &Trajectory,
        record: Option<&FailureRecord>,
    ) -> Result<String, String> {
        Ok(match record {
            Some(r) => oracle_instruction(r, self.level, &segment.plan),
            None => "Proceed as planned.".to_string(),
        })
    }
}

/// Always empty instruction; the no-correction baseline.
#[derive(Debug, Default)]
pub struct NullCritic;

impl CriticAdapter for NullCritic {
    fn name(&self) -> String {
        "null".to_string()
    }
    fn instruct(
        &mut self,
        _prompt: &str,
        _segment: &Trajectory,
        _record: Option<&FailureRecord>,
    ) -> Result<String, String> {
        Ok(String::new())
    }
}

/// Emits a seeded random direction phrase each round.
pub struct RandomCritic {
    rng: ChaCha12Rng,
}

impl RandomCritic {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: rng_for(derive_seed(seed, "random-critic", 0)),
        }
    }
}

impl CriticAdapter for RandomCritic {
    fn name(&self) -> String {
        "random".to_string()
    }
    fn instruct(
        &mut self,
        _prompt: &str,
        _segment: &Trajectory,
        _record: Option<&FailureRecord>,
    ) -> Result<String, String> {
        let d = Direction::ALL[self.rng.random_range(0..Direction::ALL.len())];
        let dp = match d.axis_sign() {
            // Render the phrase that MOVES in direction d by asking for the
            // correction of the opposite overshoot.
            (0, s) => Position {
                x: -s * 0.05,
                y: 0.0,
                z: 0.0,
            },
            (1, s) => Position {
                x: 0.0,
                y: -s * 0.05,
                z: 0.0,
            },
            (_, s) => Position {
                x: 0.0,
                y: 0.0,
                z: -s * 0.05,
            },
        };
        Ok(grammar::movement_instruction(&dp))
    }
}

/// Remote critic speaking the correction wire protocol: the task prompt,
/// a trajectory-prefix summary and the requested level out, an instruction
/// back.
pub struct RemoteCritic {
    pub endpoint: String,
    pub api_key: Option<String>,
    pub level: CriticLevel,
    pub http: HttpConfig,
}

impl CriticAdapter for RemoteCritic {
    fn name(&self) -> String {
        "remote".to_string()
    }
    fn instruct(
        &mut self,
        prompt: &str,
        segment: &Trajectory,
        _record: Option<&FailureRecord>,
    ) -> Result<String, String> {
        let body = json!({
            "task_prompt": prompt,
            "trajectory_prefix": trajectory_summary(segment, 16),
            "requested_level": self.level,
        });
        let resp = post_json(&self.endpoint, &body, self.api_key.as_deref(), &self.http)
            .map_err(|e| e.to_string())?;
        resp.get("instruction")
            .and_then(|v| v.as_str())
            .map(str::to_string)
            .ok_or_else(|| "missing 'instruction' in critic response".to_string())
    }
}

// ---------------------------------------------------------------------------
// Sessions
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptLog {
    pub prompt: String,
    pub outcome: Outcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pause_time: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction: Option<String>,
    #[serde(default)]
    pub critic_failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionSession {
    pub task_id: TaskId,
    pub seed: u64,
    pub critic: String,
    pub attempts: Vec<AttemptLog>,
    pub attempts_used: usize,
    pub success_after_first: bool,
    pub success_final: bool,
}

/// Runs one correction trial: execute, and while failing, pause at the
/// pause fraction, extract the prefix, ask the critic, append the
/// instruction to the prompt, and re-execute from the initial scene state.
pub fn run_session(
    task_id: TaskId,
    policy: &mut dyn PolicyAdapter,
    critic: &mut dyn CriticAdapter,
    t_pause_fraction: f64,
    seed: u64,
    frame_rate: f64,
) -> Result<CorrectionSession, LoopError> {
    if !(t_pause_fraction > 0.0 && t_pause_fraction <= 1.0) {
        return Err(LoopError::InvalidArgument(format!(
            "pause fraction {t_pause_fraction} outside (0, 1]"
        )));
    }
    let plan = build_task(task_id, seed)?;
    policy.begin_session(&plan, seed)?;

    let mut prompt = plan.instruction.clone();
    let mut attempts: Vec<AttemptLog> = Vec::new();
    let mut success_final = false;

    for attempt in 1..=MAX_ATTEMPTS {
        let overrides = policy.plan_overrides(&prompt, &plan);
        let traj = run_episode(&plan, overrides.as_deref(), frame_rate, seed)?;
        let success = traj.outcome == Outcome::Success;
        let mut log = AttemptLog {
            prompt: prompt.clone(),
            outcome: traj.outcome,
            pause_time: None,
            instruction: None,
            critic_failed: false,
        };
        if success {
            attempts.push(log);
            success_final = true;
            break;
        }
        if attempt == MAX_ATTEMPTS {
            attempts.push(log);
            break;
        }
        let t_pause = (t_pause_fraction * plan.total_duration()).min(traj.duration);
        let seg = segment(&traj, t_pause)?;
        let (instruction, failed) = match critic.instruct(&prompt, &seg, policy.latent_record()) {
            Ok(i) => (i, false),
            Err(_) => (String::new(), true),
        };
        log.pause_time = Some(t_pause);
        log.instruction = Some(instruction.clone());
        log.critic_failed = failed;
        attempts.push(log);
        prompt = format!("{prompt}{PROMPT_SEPARATOR}{instruction}");
    }

    Ok(CorrectionSession {
        task_id,
        seed,
        critic: critic.name(),
        attempts_used: attempts.len(),
        success_after_first: attempts
            .first()
            .map(|a| a.outcome == Outcome::Success)
            .unwrap_or(false),
        success_final,
        attempts,
    })
}

// ---------------------------------------------------------------------------
// Batch rates
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PolicyKind {
    Expert,
    ScriptedNoisy { compliance: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CriticKind {
    Null,
    OracleLow,
    OracleHigh,
    Random,
    Remote {
        endpoint: String,
        level: CriticLevel,
    },
}

impl CriticKind {
    pub fn parse(s: &str) -> Option<CriticKind> {
        match s {
            "null" => Some(CriticKind::Null),
            "oracle-low" => Some(CriticKind::OracleLow),
            "oracle-high" => Some(CriticKind::OracleHigh),
            "random" => Some(CriticKind::Random),
            _ => None,
        }
    }

    pub fn label(&self) -> String {
        match self {
            CriticKind::Null => "null".into(),
            CriticKind::OracleLow => "oracle-low".into(),
            CriticKind::OracleHigh => "oracle-high".into(),
            CriticKind::Random => "random".into(),
            CriticKind::Remote { .. } => "remote".into(),
        }
    }

    fn build(&self, seed: u64, api_key: Option<&str>) -> Box<dyn CriticAdapter> {
        match self {
            CriticKind::Null => Box::new(NullCritic),
            CriticKind::OracleLow => Box::new(OracleCritic {
                level: CriticLevel::Low,
            }),
            CriticKind::OracleHigh => Box::new(OracleCritic {
                level: CriticLevel::High,
            }),
            CriticKind::Random => Box::new(RandomCritic::new(seed)),
            CriticKind::Remote { endpoint, level } => Box::new(RemoteCritic {
                endpoint: endpoint.clone(),
                api_key: api_key.map(str::to_string),
                level: *level,
                http: HttpConfig::default(),
            }),
        }
    }
}

fn build_policy(kind: PolicyKind) -> Box<dyn PolicyAdapter> {
    match kind {
        PolicyKind::Expert => Box::new(ExpertPolicy),
        PolicyKind::ScriptedNoisy { compliance } => {
            Box::new(ScriptedNoisyPolicy::new(None, compliance))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRates {
    pub task: String,
    pub episodes: usize,
    pub success_after_1: f64,
    pub success_after_5: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticRates {
    pub critic: String,
    pub per_task: Vec<TaskRates>,
    pub average_after_1: f64,
    pub average_after_5: f64,
    pub instructions_issued: usize,
    pub critic_failures: usize,
    /// Every instruction request failed (e.g. remote endpoint unreachable).
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateTable {
    pub policy: String,
    pub episodes_per_task: usize,
    pub rows: Vec<CriticRates>,
}

impl RateTable {
    pub fn render_text(&self) -> String {
        let mut s = format!(
            "policy: {} ({} episodes per task)\n",
            self.policy, self.episodes_per_task
        );
        for row in &self.rows {
            s.push_str(&format!("{}\n", row.critic));
            s.push_str("  1 attempt :");
            for t in &row.per_task {
                s.push_str(&format!(" {}={:.4}", t.task, t.success_after_1));
            }
            s.push_str(&format!(" average={:.4}\n", row.average_after_1));
            s.push_str("  5 attempts:");
            for t in &row.per_task {
                s.push_str(&format!(" {}={:.4}", t.task, t.success_after_5));
            }
            s.push_str(&format!(" average={:.4}\n", row.average_after_5));
        }
        s
    }
}

/// Success-rate table after 1 and 5 attempts for each critic over shared
/// seeds (paired comparison): same task and episode index always draw the
/// same scene and latent fault regardless of critic. Every completed
/// session is reported through `on_session` for logging.
#[allow(clippy::too_many_arguments)]
pub fn batch_rates(
    task_ids: &[TaskId],
    episodes_per_task: usize,
    policy_kind: PolicyKind,
    critics: &[CriticKind],
    t_pause_fraction: f64,
    seed: u64,
    frame_rate: f64,
    critic_api_key: Option<&str>,
    mut on_session: impl FnMut(&CorrectionSession),
) -> Result<RateTable, LoopError> {
    if episodes_per_task == 0 {
        return Err(LoopError::InvalidArgument(
            "need at least one episode per task".into(),
        ));
    }
    let mut rows = Vec::new();
    for ck in critics {
        let mut per_task = Vec::new();
        let mut sum1 = 0.0;
        let mut sum5 = 0.0;
        let mut instructions_issued = 0usize;
        let mut critic_failures = 0usize;
        for task in task_ids {
            let mut n1 = 0usize;
            let mut n5 = 0usize;
            for ep in 0..episodes_per_task {
                let session_seed = derive_seed(seed, task.as_str(), ep as u64);
                let mut policy = build_policy(policy_kind);
                let mut critic = ck.build(session_seed, critic_api_key);
                let session = run_session(
                    *task,
                    policy.as_mut(),
                    critic.as_mut(),
                    t_pause_fraction,
                    session_seed,
                    frame_rate,
                )?;
                instructions_issued += session
                    .attempts
                    .iter()
                    .filter(|a| a.instruction.is_some())
                    .count();
                critic_failures += session.attempts.iter().filter(|a| a.critic_failed).count();
                if session.success_after_first {
                    n1 += 1;
                }
                if session.success_final {
                    n5 += 1;
                }
                on_session(&session);
            }
            let r1 = n1 as f64 / episodes_per_task as f64;
            let r5 = n5 as f64 / episodes_per_task as f64;
            sum1 += r1;
            sum5 += r5;
            per_task.push(TaskRates {
                task: task.as_str().to_string(),
                episodes: episodes_per_task,
                success_after_1: r1,
                success_after_5: r5,
            });
        }
        rows.push(CriticRates {
            critic: ck.label(),
            per_task,
            average_after_1: sum1 / task_ids.len() as f64,
            average_after_5: sum5 / task_ids.len() as f64,
            instructions_issued,
            critic_failures,
            failed: instructions_issued > 0 && critic_failures == instructions_issued,
        });
    }
    Ok(RateTable {
        policy: match policy_kind {
            PolicyKind::Expert => "expert".into(),
            PolicyKind::ScriptedNoisy { .. } => "scripted-noisy".into(),
        },
        episodes_per_task,
        rows,
    })
}
