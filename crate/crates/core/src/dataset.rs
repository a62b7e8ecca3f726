//! Dataset persistence and batch generation: the line-delimited trajectory
//! file format, failure-record sidecars, the QA corpus, a digest manifest
//! that makes generation reproducible and tamper-evident, and dataset
//! statistics.
//!
//! All real numbers in trajectory files are written with a fixed 9
//! significant-digit scientific format so identical inputs produce
//! byte-identical files.

use crate::geometry::Pose;
use crate::injector::{inject, sample_failure_spec, FailureRecord, Taxonomy};
use crate::qasynth::{synthesize_qa, trajectory_id, Annotator, QAItem, QuestionType};
use crate::rng::derive_seed;
use crate::simulator::{run_episode, Outcome, SimError, Trajectory};
use crate::taskmodel::{all_substage_names, build_task, Category, TaskId};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("integrity check failed for: {0:?}")]
    Integrity(Vec<String>),
    #[error("manifest missing or unreadable: {0}")]
    Manifest(String),
    #[error("could not produce a feasible failing episode for {task} after {attempts} tries")]
    ExhaustedRetries { task: TaskId, attempts: u32 },
    #[error("expert episode unexpectedly failed for {task} (seed {seed})")]
    ExpertFailure { task: TaskId, seed: u64 },
    #[error(transparent)]
    Catalog(#[from] crate::taskmodel::CatalogError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Inject(#[from] crate::injector::InjectError),
    #[error(transparent)]
    Qa(#[from] crate::qasynth::QaError),
    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

// ---------------------------------------------------------------------------
// Decimal formatting
// ---------------------------------------------------------------------------

/// Fixed 9-significant-digit scientific rendering; negative zero collapses
/// to zero so equal values always format identically.
pub fn fmt_g9(x: f64) -> String {
    format!("{:.8e}", x + 0.0)
}

fn pose7(p: &Pose) -> String {
    format!(
        "[{},{},{},{},{},{},{}]",
        fmt_g9(p.position.x),
        fmt_g9(p.position.y),
        fmt_g9(p.position.z),
        fmt_g9(p.orientation.w),
        fmt_g9(p.orientation.x),
        fmt_g9(p.orientation.y),
        fmt_g9(p.orientation.z)
    )
}

fn jstr(s: &str) -> String {
    serde_json::to_string(s).expect("strings serialize")
}

// ---------------------------------------------------------------------------
// Trajectory file format
// ---------------------------------------------------------------------------

/// Serializes a trajectory as line-delimited records: one header line, one
/// line per frame, one footer line. Poses are 7-number arrays
/// `[x, y, z, qw, qx, qy, qz]`.
pub fn trajectory_to_lines(traj: &Trajectory) -> String {
    let mut out = String::new();
    let substages: Vec<String> = traj
        .plan
        .substages
        .iter()
        .map(|s| {
            format!(
                "{{\"index\":{},\"name\":{},\"t\":{},\"duration\":{},\"grip\":{},\"object\":{},\"interaction\":{},\"tracked\":{}}}",
                s.index,
                jstr(&s.name),
                fmt_g9(s.nominal_time),
                fmt_g9(s.duration),
                fmt_g9(s.gripper_target),
                s.object_id.as_deref().map(jstr).unwrap_or_else(|| "null".into()),
                jstr(&format!("{:?}", s.interaction).to_lowercase()),
                s.tracked
            )
        })
        .collect();
    out.push_str(&format!(
        "{{\"kind\":\"header\",\"id\":{},\"task\":{},\"category\":{},\"instruction\":{},\"seed\":{},\"frame_rate\":{},\"substages\":[{}]}}\n",
        jstr(&trajectory_id(traj)),
        jstr(traj.plan.task_id.as_str()),
        jstr(traj.plan.category.as_str()),
        jstr(&traj.plan.instruction),
        traj.episode_seed,
        fmt_g9(traj.frame_rate),
        substages.join(",")
    ));
    for f in &traj.frames {
        let objects: Vec<String> = f
            .object_poses
            .iter()
            .map(|(id, pose)| format!("{}:{}", jstr(id), pose7(pose)))
            .collect();
        out.push_str(&format!(
            "{{\"kind\":\"frame\",\"t\":{},\"ee\":{},\"gripper\":{},\"substage\":{},\"objects\":{{{}}}}}\n",
            fmt_g9(f.time),
            pose7(&f.ee_pose),
            fmt_g9(f.gripper),
            f.active_substage,
            objects.join(",")
        ));
    }
    let outcome = match traj.outcome {
        Outcome::Success => "success",
        Outcome::Failure => "failure",
        Outcome::InProgress => "in-progress",
    };
    out.push_str(&format!(
        "{{\"kind\":\"footer\",\"outcome\":{},\"duration\":{},\"failure_record\":{}}}\n",
        jstr(outcome),
        fmt_g9(traj.duration),
        traj.failure_record_id
            .as_deref()
            .map(jstr)
            .unwrap_or_else(|| "null".into())
    ));
    out
}

/// Lightweight parsed view of a stored trajectory file.
/// (time, ee pose 7-tuple, gripper, object id -> pose 7-tuple)
pub type StoredFrame = (f64, [f64; 7], f64, BTreeMap<String, [f64; 7]>);

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoredTrajectory {
    pub id: String,
    pub task: String,
    pub category: String,
    pub instruction: String,
    pub seed: u64,
    pub frame_rate: f64,
    pub outcome: String,
    pub duration: f64,
    pub failure_record: Option<String>,
    pub frames: Vec<StoredFrame>,
}

pub fn read_trajectory_file(path: &Path) -> Result<StoredTrajectory, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut header: Option<serde_json::Value> = None;
    let mut footer: Option<serde_json::Value> = None;
    let mut frames = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value = serde_json::from_str(line).map_err(|e| DatasetError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        match v.get("kind").and_then(|k| k.as_str()) {
            Some("header") => header = Some(v),
            Some("footer") => footer = Some(v),
            Some("frame") => {
                let t = v["t"].as_f64().unwrap_or(0.0);
                let ee: Vec<f64> = v["ee"]
                    .as_array()
                    .map(|a| a.iter().filter_map(|x| x.as_f64()).collect())
                    .unwrap_or_default();
                let mut ee7 = [0.0; 7];
                for (i, x) in ee.iter().take(7).enumerate() {
                    ee7[i] = *x;
                }
                let gripper = v["gripper"].as_f64().unwrap_or(0.0);
                let mut objects = BTreeMap::new();
                if let Some(map) = v["objects"].as_object() {
                    for (id, pv) in map {
                        let vals: Vec<f64> = pv
                            .as_array()
                            .map(|a| a.iter().filter_map(|x| x.as_f64()).collect())
                            .unwrap_or_default();
                        let mut p7 = [0.0; 7];
                        for (i, x) in vals.iter().take(7).enumerate() {
                            p7[i] = *x;
                        }
                        objects.insert(id.clone(), p7);
                    }
                }
                frames.push((t, ee7, gripper, objects));
            }
            _ => {
                return Err(DatasetError::Parse {
                    path: path.to_path_buf(),
                    message: "unknown record kind".into(),
                })
            }
        }
    }
    let header = header.ok_or_else(|| DatasetError::Parse {
        path: path.to_path_buf(),
        message: "missing header".into(),
    })?;
    let footer = footer.ok_or_else(|| DatasetError::Parse {
        path: path.to_path_buf(),
        message: "missing footer".into(),
    })?;
    Ok(StoredTrajectory {
        id: header["id"].as_str().unwrap_or_default().to_string(),
        task: header["task"].as_str().unwrap_or_default().to_string(),
        category: header["category"].as_str().unwrap_or_default().to_string(),
        instruction: header["instruction"]
            .as_str()
            .unwrap_or_default()
            .to_string(),
        seed: header["seed"].as_u64().unwrap_or(0),
        frame_rate: header["frame_rate"].as_f64().unwrap_or(0.0),
        outcome: footer["outcome"].as_str().unwrap_or_default().to_string(),
        duration: footer["duration"].as_f64().unwrap_or(0.0),
        failure_record: footer["failure_record"].as_str().map(str::to_string),
        frames,
    })
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateConfig {
    pub seed: u64,
    pub tasks: Vec<TaskId>,
    pub failures_per_task: usize,
    pub successes_per_task: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub taxonomy: Option<Taxonomy>,
    pub frame_rate: f64,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
}

fn default_concurrency() -> usize {
    1
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            tasks: TaskId::ALL.to_vec(),
            failures_per_task: 20,
            successes_per_task: 3,
            taxonomy: None,
            frame_rate: crate::simulator::DEFAULT_FRAME_RATE,
            concurrency: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub id: String,
    pub task: TaskId,
    pub category: Category,
    pub outcome: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub taxonomy: Option<Taxonomy>,
    pub duration: f64,
    pub qa_items: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub config: GenerateConfig,
    pub trajectories: Vec<TrajectorySummary>,
    pub qa_total: usize,
    /// Episodes regenerated because an injected target left the workspace.
    pub discarded_infeasible: usize,
    /// Episodes regenerated because the injected fault coincidentally
    /// satisfied the goal.
    pub discarded_coincidental: usize,
    pub entries: Vec<ManifestEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex::encode(hasher.finalize())
}

/// Write-temp-then-rename so partially written files never shadow outputs.
pub fn atomic_write(path: &Path, contents: &[u8]) -> Result<(), DatasetError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(path))?;
    }
    let tmp = path.with_extension("tmp~");
    {
        let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(contents).map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Batch generation
// ---------------------------------------------------------------------------

struct EpisodeOutput {
    traj: Trajectory,
    record: Option<FailureRecord>,
    qa: Vec<QAItem>,
    discarded_infeasible: usize,
    discarded_coincidental: usize,
}

const MAX_EPISODE_ATTEMPTS: u32 = 100;

fn generate_failure_episode(
    task: TaskId,
    episode_seed: u64,
    config: &GenerateConfig,
    annotator: &(dyn Annotator + Sync),
    pool: &[String],
) -> Result<EpisodeOutput, DatasetError> {
    let plan = build_task(task, episode_seed)?;
    let mut discarded_infeasible = 0;
    let mut discarded_coincidental = 0;
    for attempt in 0..MAX_EPISODE_ATTEMPTS {
        let spec_seed = derive_seed(episode_seed, "spec-attempt", attempt as u64);
        let spec = sample_failure_spec(&plan, config.taxonomy, spec_seed)?;
        let (overrides, record) = inject(&plan, &spec)?;
        let mut traj = match run_episode(&plan, Some(&overrides), config.frame_rate, episode_seed) {
            Ok(t) => t,
            Err(SimError::PlanInfeasible(_)) => {
                discarded_infeasible += 1;
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        if traj.outcome == Outcome::Success {
            discarded_coincidental += 1;
            continue;
        }
        traj.failure_record_id = Some(record.id.clone());
        let qa = synthesize_qa(&traj, Some(&record), episode_seed, annotator, pool)?;
        return Ok(EpisodeOutput {
            traj,
            record: Some(record),
            qa,
            discarded_infeasible,
            discarded_coincidental,
        });
    }
    Err(DatasetError::ExhaustedRetries {
        task,
        attempts: MAX_EPISODE_ATTEMPTS,
    })
}

fn generate_success_episode(
    task: TaskId,
    episode_seed: u64,
    config: &GenerateConfig,
    annotator: &(dyn Annotator + Sync),
    pool: &[String],
) -> Result<EpisodeOutput, DatasetError> {
    let plan = build_task(task, episode_seed)?;
    let traj = run_episode(&plan, None, config.frame_rate, episode_seed)?;
    if traj.outcome != Outcome::Success {
        return Err(DatasetError::ExpertFailure {
            task,
            seed: episode_seed,
        });
    }
    let qa = synthesize_qa(&traj, None, episode_seed, annotator, pool)?;
    Ok(EpisodeOutput {
        traj,
        record: None,
        qa,
        discarded_infeasible: 0,
        discarded_coincidental: 0,
    })
}

/// Ordered parallel map with a bounded worker count; results always come
/// back in input order regardless of scheduling.
pub fn par_map<T, F>(n: usize, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let workers = workers.clamp(1, 64);
    if workers == 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    let mut out: Vec<Option<T>> = (0..n).map(|_| None).collect();
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<std::sync::Mutex<&mut Option<T>>> =
        out.iter_mut().map(std::sync::Mutex::new).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let v = f(i);
                **slots[i].lock().unwrap() = Some(v);
            });
        }
    });
    out.into_iter().map(|v| v.expect("slot filled")).collect()
}

/// Runs the full generation pipeline into `out_dir`: trajectories, failure
/// record sidecars, the QA corpus, and a digest manifest. Fully offline
/// with the rule-fallback annotator; byte-identical for identical configs.
pub fn generate_dataset(
    config: &GenerateConfig,
    out_dir: &Path,
    annotator: &(dyn Annotator + Sync),
) -> Result<Manifest, DatasetError> {
    let pool = all_substage_names();

    enum Job {
        Success(TaskId, u64),
        Failure(TaskId, u64),
    }
    let mut jobs = Vec::new();
    for task in &config.tasks {
        for i in 0..config.successes_per_task {
            let seed = derive_seed(config.seed, &format!("{task}-success"), i as u64);
            jobs.push(Job::Success(*task, seed));
        }
        for i in 0..config.failures_per_task {
            let seed = derive_seed(config.seed, &format!("{task}-failure"), i as u64);
            jobs.push(Job::Failure(*task, seed));
        }
    }

    let results: Vec<Result<EpisodeOutput, DatasetError>> =
        par_map(jobs.len(), config.concurrency, |i| match &jobs[i] {
            Job::Success(task, seed) => {
                generate_success_episode(*task, *seed, config, annotator, &pool)
            }
            Job::Failure(task, seed) => {
                generate_failure_episode(*task, *seed, config, annotator, &pool)
            }
        });

    let mut entries: Vec<ManifestEntry> = Vec::new();
    let mut summaries: Vec<TrajectorySummary> = Vec::new();
    let mut corpus_lines = String::new();
    let mut qa_total = 0usize;
    let mut discarded_infeasible = 0usize;
    let mut discarded_coincidental = 0usize;

    let mut write_entry = |rel: &str, contents: &[u8]| -> Result<(), DatasetError> {
        let path = out_dir.join(rel);
        atomic_write(&path, contents)?;
        entries.push(ManifestEntry {
            path: rel.to_string(),
            sha256: sha256_hex(contents),
            bytes: contents.len() as u64,
        });
        Ok(())
    };

    for result in results {
        let ep = result?;
        let id = trajectory_id(&ep.traj);
        let lines = trajectory_to_lines(&ep.traj);
        write_entry(&format!("trajectories/{id}.jsonl"), lines.as_bytes())?;
        if let Some(record) = &ep.record {
            let json = serde_json::to_string_pretty(record).expect("records serialize") + "\n";
            write_entry(&format!("records/{id}.json"), json.as_bytes())?;
        }
        for item in &ep.qa {
            corpus_lines.push_str(&serde_json::to_string(item).expect("items serialize"));
            corpus_lines.push('\n');
        }
        qa_total += ep.qa.len();
        discarded_infeasible += ep.discarded_infeasible;
        discarded_coincidental += ep.discarded_coincidental;
        summaries.push(TrajectorySummary {
            id,
            task: ep.traj.plan.task_id,
            category: ep.traj.plan.category,
            outcome: match ep.traj.outcome {
                Outcome::Success => "success".into(),
                Outcome::Failure => "failure".into(),
                Outcome::InProgress => "in-progress".into(),
            },
            taxonomy: ep.record.as_ref().map(|r| r.taxonomy),
            duration: ep.traj.duration,
            qa_items: ep.qa.len(),
        });
    }

    write_entry("qa/corpus.jsonl", corpus_lines.as_bytes())?;
    entries.sort_by(|a, b| a.path.cmp(&b.path));

    let manifest = Manifest {
        version: 1,
        config: config.clone(),
        trajectories: summaries,
        qa_total,
        discarded_infeasible,
        discarded_coincidental,
        entries,
    };
    let manifest_json =
        serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    atomic_write(&out_dir.join("manifest.json"), manifest_json.as_bytes())?;
    Ok(manifest)
}

/// Loads the manifest and verifies every listed digest; refuses silently
/// modified datasets.
pub fn verify_manifest(dir: &Path) -> Result<Manifest, DatasetError> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| DatasetError::Manifest(e.to_string()))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| DatasetError::Manifest(e.to_string()))?;
    let mut bad = Vec::new();
    for entry in &manifest.entries {
        let p = dir.join(&entry.path);
        match fs::read(&p) {
            Ok(bytes) => {
                if sha256_hex(&bytes) != entry.sha256 {
                    bad.push(entry.path.clone());
                }
            }
            Err(_) => bad.push(entry.path.clone()),
        }
    }
    if bad.is_empty() {
        Ok(manifest)
    } else {
        Err(DatasetError::Integrity(bad))
    }
}

/// Reads the QA corpus of a dataset directory.
pub fn read_corpus(dir: &Path) -> Result<Vec<QAItem>, DatasetError> {
    read_corpus_file(&dir.join("qa/corpus.jsonl"))
}

pub fn read_corpus_file(path: &Path) -> Result<Vec<QAItem>, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut items = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item: QAItem = serde_json::from_str(line).map_err(|e| DatasetError::Parse {
            path: path.to_path_buf(),
            message: format!("line {}: {e}", n + 1),
        })?;
        items.push(item);
    }
    Ok(items)
}

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

/// Duration histogram bucket edges in seconds; the last bucket is open.
pub const DURATION_BUCKETS: &[(f64, f64)] = &[
    (0.0, 5.0),
    (5.0, 10.0),
    (10.0, 20.0),
    (20.0, 30.0),
    (30.0, 60.0),
    (60.0, f64::INFINITY),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub total_trajectories: usize,
    pub total_qa_items: usize,
    pub by_task: BTreeMap<String, usize>,
    pub by_category: BTreeMap<String, usize>,
    pub by_taxonomy: BTreeMap<String, usize>,
    pub by_outcome: BTreeMap<String, usize>,
    /// Bucket label -> trajectory count; labels like "0-5s".
    pub duration_histogram: BTreeMap<String, usize>,
    pub mean_duration_by_task: BTreeMap<String, f64>,
    pub qa_by_type: BTreeMap<String, usize>,
}

fn bucket_label(lo: f64, hi: f64) -> String {
    if hi.is_infinite() {
        format!("{}s+", lo as u64)
    } else {
        format!("{}-{}s", lo as u64, hi as u64)
    }
}

/// Computes dataset statistics from a verified manifest plus the QA corpus.
pub fn compute_stats(dir: &Path) -> Result<DatasetStats, DatasetError> {
    let manifest = verify_manifest(dir)?;
    let mut stats = DatasetStats {
        total_trajectories: manifest.trajectories.len(),
        total_qa_items: 0,
        by_task: BTreeMap::new(),
        by_category: BTreeMap::new(),
        by_taxonomy: BTreeMap::new(),
        by_outcome: BTreeMap::new(),
        duration_histogram: DURATION_BUCKETS
            .iter()
            .map(|(lo, hi)| (bucket_label(*lo, *hi), 0))
            .collect(),
        mean_duration_by_task: BTreeMap::new(),
        qa_by_type: BTreeMap::new(),
    };
    let mut dur_sum: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for t in &manifest.trajectories {
        *stats
            .by_task
            .entry(t.task.as_str().to_string())
            .or_insert(0) += 1;
        *stats
            .by_category
            .entry(t.category.as_str().to_string())
            .or_insert(0) += 1;
        if let Some(tax) = t.taxonomy {
            *stats.by_taxonomy.entry(tax.slug().to_string()).or_insert(0) += 1;
        }
        *stats.by_outcome.entry(t.outcome.clone()).or_insert(0) += 1;
        for (lo, hi) in DURATION_BUCKETS {
            if t.duration >= *lo && t.duration < *hi {
                *stats
                    .duration_histogram
                    .get_mut(&bucket_label(*lo, *hi))
                    .unwrap() += 1;
                break;
            }
        }
        let e = dur_sum
            .entry(t.task.as_str().to_string())
            .or_insert((0.0, 0));
        e.0 += t.duration;
        e.1 += 1;
    }
    for (task, (sum, n)) in dur_sum {
        stats.mean_duration_by_task.insert(task, sum / n as f64);
    }
    if dir.join("qa/corpus.jsonl").exists() {
        for item in read_corpus(dir)? {
            *stats
                .qa_by_type
                .entry(item.question_type.slug().to_string())
                .or_insert(0) += 1;
            stats.total_qa_items += 1;
        }
    }
    Ok(stats)
}

impl DatasetStats {
    pub fn render_text(&self) -> String {
        let mut s = format!(
            "trajectories: {}   qa items: {}\n",
            self.total_trajectories, self.total_qa_items
        );
        let section = |title: &str, map: &BTreeMap<String, usize>| {
            let mut t = format!("\n{title}:\n");
            for (k, v) in map {
                t.push_str(&format!("  {k:<24} {v}\n"));
            }
            t
        };
        s.push_str(&section("by outcome", &self.by_outcome));
        s.push_str(&section("by category", &self.by_category));
        s.push_str(&section("by taxonomy", &self.by_taxonomy));
        s.push_str(&section("by task", &self.by_task));
        s.push_str(&section("duration histogram", &self.duration_histogram));
        s.push_str(&section("qa items by type", &self.qa_by_type));
        s.push_str("\nmean duration by task (s):\n");
        for (k, v) in &self.mean_duration_by_task {
            s.push_str(&format!("  {k:<24} {v:.2}\n"));
        }
        s
    }
}

/// Expected QA counts from the synthesis contract: eight per failure, three
/// per success.
pub fn expected_qa_count(failures: usize, successes: usize) -> usize {
    failures * QuestionType::ALL.len() + successes * QuestionType::SUCCESS_TYPES.len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qasynth::RuleFallbackAnnotator;
    use crate::simulator::DEFAULT_FRAME_RATE;

    fn tiny_config(seed: u64) -> GenerateConfig {
        GenerateConfig {
            seed,
            tasks: vec![TaskId::PickCube, TaskId::PushCube],
            failures_per_task: 3,
            successes_per_task: 1,
            taxonomy: None,
            frame_rate: DEFAULT_FRAME_RATE,
            concurrency: 2,
        }
    }

    #[test]
    fn g9_formatting_is_stable_and_scrubs_negative_zero() {
        assert_eq!(fmt_g9(1.2), "1.20000000e0");
        assert_eq!(fmt_g9(-0.0), "0.00000000e0");
        assert_eq!(fmt_g9(0.05), "5.00000000e-2");
    }

    #[test]
    fn trajectory_round_trips_through_the_line_format() {
        let plan = build_task(TaskId::PickCube, 3).unwrap();
        let traj = run_episode(&plan, None, DEFAULT_FRAME_RATE, 3).unwrap();
        let dir = std::env::temp_dir().join(format!("manipfail-fmt-{}", std::process::id()));
        let path = dir.join("t.jsonl");
        atomic_write(&path, trajectory_to_lines(&traj).as_bytes()).unwrap();
        let stored = read_trajectory_file(&path).unwrap();
        assert_eq!(stored.task, "PickCube");
        assert_eq!(stored.outcome, "success");
        assert_eq!(stored.frames.len(), traj.frames.len());
        assert!((stored.duration - traj.duration).abs() < 1e-8);
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn generation_is_reproducible_and_verifiable() {
        let base = std::env::temp_dir().join(format!("manipfail-gen-{}", std::process::id()));
        let d1 = base.join("a");
        let d2 = base.join("b");
        let config = tiny_config(5);
        let m1 = generate_dataset(&config, &d1, &RuleFallbackAnnotator).unwrap();
        let m2 = generate_dataset(&config, &d2, &RuleFallbackAnnotator).unwrap();
        assert_eq!(
            serde_json::to_string(&m1).unwrap(),
            serde_json::to_string(&m2).unwrap()
        );
        assert_eq!(m1.trajectories.len(), 2 * (3 + 1));
        assert_eq!(m1.qa_total, expected_qa_count(6, 2));
        // Digests verify on an untouched directory.
        verify_manifest(&d1).unwrap();
        // And catch a silent modification.
        let victim = d1.join(&m1.entries[0].path);
        let mut bytes = fs::read(&victim).unwrap();
        bytes.push(b' ');
        fs::write(&victim, bytes).unwrap();
        assert!(matches!(
            verify_manifest(&d1),
            Err(DatasetError::Integrity(_))
        ));
        fs::remove_dir_all(&base).ok();
    }

    #[test]
    fn stats_conserve_counts() {
        let dir = std::env::temp_dir().join(format!("manipfail-stats-{}", std::process::id()));
        let config = tiny_config(9);
        let manifest = generate_dataset(&config, &dir, &RuleFallbackAnnotator).unwrap();
        let stats = compute_stats(&dir).unwrap();
        assert_eq!(stats.total_trajectories, manifest.trajectories.len());
        assert_eq!(
            stats.duration_histogram.values().sum::<usize>(),
            stats.total_trajectories
        );
        assert_eq!(
            stats.by_task.values().sum::<usize>(),
            stats.total_trajectories
        );
        assert_eq!(
            stats.qa_by_type.values().sum::<usize>(),
            stats.total_qa_items
        );
        assert_eq!(stats.total_qa_items, manifest.qa_total);
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn empty_dataset_yields_zeroed_stats_without_error() {
        let dir = std::env::temp_dir().join(format!("manipfail-empty-{}", std::process::id()));
        let config = GenerateConfig {
            seed: 1,
            tasks: vec![TaskId::PickCube],
            failures_per_task: 0,
            successes_per_task: 0,
            taxonomy: None,
            frame_rate: DEFAULT_FRAME_RATE,
            concurrency: 1,
        };
        generate_dataset(&config, &dir, &RuleFallbackAnnotator).unwrap();
        let stats = compute_stats(&dir).unwrap();
        assert_eq!(stats.total_trajectories, 0);
        assert_eq!(stats.total_qa_items, 0);
        assert_eq!(stats.duration_histogram.values().sum::<usize>(), 0);
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn par_map_preserves_order() {
        let out = par_map(100, 8, |i| i * i);
        for (i, v) in out.iter().enumerate() {
            assert_eq!(*v, i * i);
        }
    }
}
