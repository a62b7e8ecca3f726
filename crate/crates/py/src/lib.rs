//! Python bindings: exposes plan construction, episode simulation, failure
//! injection, QA synthesis, scoring and the correction loop to Python.
//! Structured results cross the boundary as JSON strings; parse them with
//! `json.loads` on the Python side.

use manipfail::correctionloop::{
    run_session, CriticAdapter, CriticLevel, NullCritic, OracleCritic, RandomCritic,
    ScriptedNoisyPolicy,
};
use manipfail::dataset::{generate_dataset, GenerateConfig};
use manipfail::evalharness::{self, score_mc as core_score_mc, MCOptionSet, MockJudge};
use manipfail::injector::{self, Taxonomy};
use manipfail::qasynth::{synthesize_qa, trajectory_id, RuleFallbackAnnotator};
use manipfail::rng::derive_seed;
use manipfail::simulator::{run_episode, Outcome, Trajectory, DEFAULT_FRAME_RATE};
use manipfail::taskmodel::{all_substage_names, build_task, TaskId, TaskPlan};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use std::path::PathBuf;
use std::str::FromStr;

fn parse_task(task_id: &str) -> PyResult<TaskId> {
    TaskId::from_str(task_id).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn parse_taxonomy(taxonomy: Option<&str>) -> PyResult<Option<Taxonomy>> {
    match taxonomy {
        None => Ok(None),
        Some(s) => Taxonomy::from_slug(s)
            .map(Some)
            .ok_or_else(|| PyValueError::new_err(format!("unknown taxonomy '{s}'"))),
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> PyResult<String> {
    serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

fn traj_summary_json(traj: &Trajectory) -> PyResult<String> {
    let v = serde_json::json!({
        "id": trajectory_id(traj),
        "task": traj.plan.task_id.as_str(),
        "category": traj.plan.category.as_str(),
        "instruction": traj.plan.instruction,
        "outcome": match traj.outcome {
            Outcome::Success => "success",
            Outcome::Failure => "failure",
            Outcome::InProgress => "in-progress",
        },
        "duration": traj.duration,
        "frames": traj.frames.len(),
    });
    Ok(v.to_string())
}

/// Injects a failure for `(plan, taxonomy, seed)`, regenerating with derived
/// seeds when a perturbed target leaves the workspace or coincidentally
/// still succeeds.
fn inject_and_run_inner(
    plan: &TaskPlan,
    taxonomy: Option<Taxonomy>,
    seed: u64,
) -> PyResult<(Trajectory, injector::FailureRecord)> {
    for attempt in 0..100 {
        let s = derive_seed(seed, "py-inject", attempt);
        let spec = injector::sample_failure_spec(plan, taxonomy, s)
            .map_err(|e| PyValueError::new_err(e.to_string()))?;
        let (overrides, record) =
            injector::inject(plan, &spec).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        let Ok(mut traj) = run_episode(plan, Some(&overrides), DEFAULT_FRAME_RATE, seed) else {
            continue;
        };
        if traj.outcome == Outcome::Success {
            continue;
        }
        traj.failure_record_id = Some(record.id.clone());
        return Ok((traj, record));
    }
    Err(PyRuntimeError::new_err(
        "no effective injected episode after bounded retries",
    ))
}

/// All 16 catalog task ids.
#[pyfunction]
fn list_tasks() -> Vec<String> {
    TaskId::ALL.iter().map(|t| t.as_str().to_string()).collect()
}

/// The six failure taxonomy names (snake_case).
#[pyfunction]
fn list_taxonomies() -> Vec<String> {
    Taxonomy::ALL.iter().map(|t| t.slug().to_string()).collect()
}

/// Task metadata and the expert substage plan for a seed, as JSON.
#[pyfunction]
#[pyo3(signature = (task_id, seed=0))]
fn task_info(task_id: &str, seed: u64) -> PyResult<String> {
    let plan = build_task(parse_task(task_id)?, seed)
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let v = serde_json::json!({
        "task": plan.task_id.as_str(),
        "category": plan.category.as_str(),
        "instruction": plan.instruction,
        "substages": plan.substages.iter().map(|s| s.name.clone()).collect::<Vec<_>>(),
        "objects": plan.scene.objects.iter().map(|o| o.id.clone()).collect::<Vec<_>>(),
        "duration": plan.total_duration(),
    });
    Ok(v.to_string())
}

/// Runs the expert plan; returns a trajectory summary as JSON.
#[pyfunction]
#[pyo3(signature = (task_id, seed, frame_rate=10.0))]
fn run_expert(task_id: &str, seed: u64, frame_rate: f64) -> PyResult<String> {
    let plan = build_task(parse_task(task_id)?, seed)
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let traj = run_episode(&plan, None, frame_rate, seed)
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    traj_summary_json(&traj)
}

/// Injects one failure (optionally a fixed taxonomy) and runs the episode;
/// returns `{trajectory, record}` as JSON.
#[pyfunction]
#[pyo3(signature = (task_id, seed, taxonomy=None))]
fn inject_and_run(task_id: &str, seed: u64, taxonomy: Option<&str>) -> PyResult<String> {
    let plan = build_task(parse_task(task_id)?, seed)
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let (traj, record) = inject_and_run_inner(&plan, parse_taxonomy(taxonomy)?, seed)?;
    let v = serde_json::json!({
        "trajectory": serde_json::from_str::<serde_json::Value>(&traj_summary_json(&traj)?)
            .expect("summary is json"),
        "record": serde_json::to_value(&record).expect("record serializes"),
    });
    Ok(v.to_string())
}

/// Synthesizes the QA items for one episode (a failure when `taxonomy` is
/// given or by default, a success when `success=True`); returns JSON list.
#[pyfunction]
#[pyo3(signature = (task_id, seed, taxonomy=None, success=false))]
fn synthesize_episode_qa(
    task_id: &str,
    seed: u64,
    taxonomy: Option<&str>,
    success: bool,
) -> PyResult<String> {
    let plan = build_task(parse_task(task_id)?, seed)
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let pool = all_substage_names();
    let items = if success {
        let traj = run_episode(&plan, None, DEFAULT_FRAME_RATE, seed)
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        synthesize_qa(&traj, None, seed, &RuleFallbackAnnotator, &pool)
    } else {
        let (traj, record) = inject_and_run_inner(&plan, parse_taxonomy(taxonomy)?, seed)?;
        synthesize_qa(&traj, Some(&record), seed, &RuleFallbackAnnotator, &pool)
    }
    .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    to_json(&items)
}

/// Scores a free-text answer against an option list; returns
/// `(correct, matched)`.
#[pyfunction]
fn score_mc(answer: &str, options: Vec<String>, correct_index: usize) -> PyResult<(bool, bool)> {
    if correct_index >= options.len() {
        return Err(PyValueError::new_err("correct_index out of range"));
    }
    let set = MCOptionSet {
        options,
        correct_index,
    };
    let s = core_score_mc(answer, &set);
    Ok((s.correct, s.matched))
}

/// Deterministic offline judge; returns
/// `(correctness, relevance, completeness, normalized)`.
#[pyfunction]
fn mock_judge(question: &str, reference: &str, prediction: &str) -> PyResult<(u8, u8, u8, f64)> {
    let s = evalharness::judge_score(question, reference, prediction, &MockJudge)
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok((s.correctness, s.relevance, s.completeness, s.normalized))
}

/// Runs one correction session with the scripted noisy policy and a named
/// critic (null, random, oracle-low, oracle-high); returns the session JSON.
#[pyfunction]
#[pyo3(signature = (task_id, seed, critic="oracle-low", pause_fraction=0.6))]
fn run_correction(task_id: &str, seed: u64, critic: &str, pause_fraction: f64) -> PyResult<String> {
    let mut policy = ScriptedNoisyPolicy::new(None, 1.0);
    let mut boxed: Box<dyn CriticAdapter> = match critic {
        "null" => Box::new(NullCritic),
        "random" => Box::new(RandomCritic::new(seed)),
        "oracle-low" => Box::new(OracleCritic {
            level: CriticLevel::Low,
        }),
        "oracle-high" => Box::new(OracleCritic {
            level: CriticLevel::High,
        }),
        other => return Err(PyValueError::new_err(format!("unknown critic '{other}'"))),
    };
    let session = run_session(
        parse_task(task_id)?,
        &mut policy,
        boxed.as_mut(),
        pause_fraction,
        seed,
        DEFAULT_FRAME_RATE,
    )
    .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    to_json(&session)
}

/// Generates a dataset directory offline; returns the manifest as JSON.
#[pyfunction]
#[pyo3(signature = (out_dir, seed, tasks=None, failures_per_task=2, successes_per_task=1))]
fn generate(
    out_dir: &str,
    seed: u64,
    tasks: Option<Vec<String>>,
    failures_per_task: usize,
    successes_per_task: usize,
) -> PyResult<String> {
    let task_ids = match tasks {
        None => TaskId::ALL.to_vec(),
        Some(names) => names
            .iter()
            .map(|n| parse_task(n))
            .collect::<PyResult<Vec<_>>>()?,
    };
    let config = GenerateConfig {
        seed,
        tasks: task_ids,
        failures_per_task,
        successes_per_task,
        taxonomy: None,
        frame_rate: DEFAULT_FRAME_RATE,
        concurrency: 1,
    };
    let manifest = generate_dataset(&config, &PathBuf::from(out_dir), &RuleFallbackAnnotator)
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    to_json(&manifest)
}

#[pymodule]
fn manipfail_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(list_tasks, m)?)?;
    m.add_function(wrap_pyfunction!(list_taxonomies, m)?)?;
    m.add_function(wrap_pyfunction!(task_info, m)?)?;
    m.add_function(wrap_pyfunction!(run_expert, m)?)?;
    m.add_function(wrap_pyfunction!(inject_and_run, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize_episode_qa, m)?)?;
    m.add_function(wrap_pyfunction!(score_mc, m)?)?;
    m.add_function(wrap_pyfunction!(mock_judge, m)?)?;
    m.add_function(wrap_pyfunction!(run_correction, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    Ok(())
}
