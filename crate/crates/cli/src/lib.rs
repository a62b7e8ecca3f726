//! Command implementations behind the `manipfail` binary: generate datasets,
//! report statistics, evaluate answer files, run correction-loop batches,
//! and render episode plots.
//!
//! Exit codes: 0 success, 1 configuration, 2 integrity, 3 partial scoring.

pub mod svg;

use manipfail::correctionloop::{batch_rates, CriticKind, PolicyKind, DEFAULT_PAUSE_FRACTION};
use manipfail::dataset::{
    atomic_write, compute_stats, generate_dataset, par_map, read_corpus_file, read_trajectory_file,
    verify_manifest, DatasetError, GenerateConfig, Manifest,
};
use manipfail::evalharness::{
    aggregate, judge_score, score_mc, EvaluationReport, ItemResult, Judge, MockJudge, RemoteJudge,
};
use manipfail::injector::Taxonomy;
use manipfail::net::HttpConfig;
use manipfail::qasynth::{QAItem, RemoteAnnotator, RuleFallbackAnnotator};
use manipfail::simulator::DEFAULT_FRAME_RATE;
use manipfail::taskmodel::TaskId;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

/// Environment variables carrying remote credentials; never flags, so
/// manifests and shell history stay shareable.
pub const ANNOTATOR_KEY_ENV: &str = "ANNOTATOR_API_KEY";
pub const JUDGE_KEY_ENV: &str = "JUDGE_API_KEY";
pub const CRITIC_KEY_ENV: &str = "CRITIC_API_KEY";
pub const MODEL_KEY_ENV: &str = "MODEL_API_KEY";

#[derive(Debug)]
pub enum CliError {
    /// Exit 1: bad flags, malformed inputs, missing endpoints.
    Config(String),
    /// Exit 2: digest mismatch or corrupt dataset.
    Integrity(String),
    /// Exit 3: evaluation finished but some items could not be scored.
    PartialScoring(usize),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Integrity(_) => 2,
            CliError::PartialScoring(_) => 3,
        }
    }

    pub fn message(&self) -> String {
        match self {
            CliError::Config(m) => format!("configuration error: {m}"),
            CliError::Integrity(m) => format!("integrity error: {m}"),
            CliError::PartialScoring(n) => format!("partial scoring: {n} items unscored"),
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Integrity(files) => CliError::Integrity(format!("{files:?}")),
            DatasetError::Manifest(m) => CliError::Integrity(m),
            other => CliError::Config(other.to_string()),
        }
    }
}

pub fn parse_tasks(spec: Option<&str>) -> Result<Vec<TaskId>, CliError> {
    match spec {
        None => Ok(TaskId::ALL.to_vec()),
        Some(s) => s
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(|t| TaskId::from_str(t).map_err(|e| CliError::Config(e.to_string())))
            .collect(),
    }
}

pub fn parse_taxonomy(spec: Option<&str>) -> Result<Option<Taxonomy>, CliError> {
    match spec {
        None => Ok(None),
        Some(s) => Taxonomy::from_slug(s)
            .map(Some)
            .ok_or_else(|| CliError::Config(format!("unknown taxonomy '{s}'"))),
    }
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

pub struct GenerateArgs {
    pub seed: u64,
    pub tasks: Option<String>,
    pub failures_per_task: usize,
    pub successes_per_task: usize,
    pub taxonomy: Option<String>,
    pub frame_rate: f64,
    pub out: PathBuf,
    pub annotator_endpoint: Option<String>,
    pub concurrency: usize,
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<Manifest, CliError> {
    let config = GenerateConfig {
        seed: args.seed,
        tasks: parse_tasks(args.tasks.as_deref())?,
        failures_per_task: args.failures_per_task,
        successes_per_task: args.successes_per_task,
        taxonomy: parse_taxonomy(args.taxonomy.as_deref())?,
        frame_rate: args.frame_rate,
        concurrency: args.concurrency,
    };
    let manifest = match &args.annotator_endpoint {
        Some(endpoint) => {
            let annotator = RemoteAnnotator {
                endpoint: endpoint.clone(),
                api_key: std::env::var(ANNOTATOR_KEY_ENV).ok(),
                http: HttpConfig::default(),
            };
            generate_dataset(&config, &args.out, &annotator)?
        }
        None => generate_dataset(&config, &args.out, &RuleFallbackAnnotator)?,
    };
    Ok(manifest)
}

// ---------------------------------------------------------------------------
// stats
// ---------------------------------------------------------------------------

pub fn cmd_stats(dataset: &Path, out: Option<&Path>, plots: bool) -> Result<String, CliError> {
    let stats = compute_stats(dataset)?;
    let text = stats.render_text();
    let json = serde_json::to_string_pretty(&stats).expect("stats serialize") + "\n";
    if let Some(out) = out {
        atomic_write(&out.join("stats.json"), json.as_bytes())?;
        atomic_write(&out.join("stats.txt"), text.as_bytes())?;
        if plots {
            let hist: Vec<(String, f64)> = stats
                .duration_histogram
                .iter()
                .map(|(k, v)| (k.clone(), *v as f64))
                .collect();
            atomic_write(
                &out.join("duration_histogram.svg"),
                svg::bar_chart_svg("trajectory count by duration interval", &hist).as_bytes(),
            )?;
            let means: Vec<(String, f64)> = stats
                .mean_duration_by_task
                .iter()
                .map(|(k, v)| (k.clone(), *v))
                .collect();
            atomic_write(
                &out.join("mean_duration_by_task.svg"),
                svg::bar_chart_svg("mean episode duration by task (s)", &means).as_bytes(),
            )?;
        }
    }
    Ok(text)
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

pub struct EvaluateArgs {
    pub corpus: PathBuf,
    pub answers: Option<PathBuf>,
    pub model_endpoint: Option<String>,
    pub out: Option<PathBuf>,
    pub mock_judge: bool,
    pub judge_endpoint: Option<String>,
    pub concurrency: usize,
}

/// Reads a line-delimited answers file keyed by QA item id. Lines that do
/// not carry an identifiable id reject the run with per-line diagnostics.
pub fn read_answers(path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read answers {path:?}: {e}")))?;
    let mut answers = BTreeMap::new();
    let mut diagnostics = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<serde_json::Value>(line) {
            Ok(v) => match (v.get("id").and_then(|x| x.as_str()), v.get("answer")) {
                (Some(id), Some(ans)) => {
                    let ans = ans.as_str().map(str::to_string).unwrap_or(ans.to_string());
                    answers.insert(id.to_string(), ans);
                }
                _ => diagnostics.push(format!("line {}: missing id or answer", n + 1)),
            },
            Err(e) => diagnostics.push(format!("line {}: {e}", n + 1)),
        }
    }
    if !diagnostics.is_empty() {
        return Err(CliError::Config(format!(
            "malformed answers file:\n  {}",
            diagnostics.join("\n  ")
        )));
    }
    Ok(answers)
}

/// Queries a remote answering endpoint for every corpus item: the request
/// carries the item id, question and any options; the response is the
/// answer text. Items whose request fails stay unanswered (unscored).
fn fetch_answers(
    corpus: &[QAItem],
    endpoint: &str,
    concurrency: usize,
) -> BTreeMap<String, String> {
    let key = std::env::var(MODEL_KEY_ENV).ok();
    let http = HttpConfig::default();
    let fetched: Vec<Option<(String, String)>> = par_map(corpus.len(), concurrency, |i| {
        let item = &corpus[i];
        let body = serde_json::json!({
            "id": item.id,
            "question": item.question_text,
            "options": item.mc_options.as_ref().map(|m| &m.options),
        });
        manipfail::net::post_json(endpoint, &body, key.as_deref(), &http)
            .ok()
            .and_then(|v| v.get("answer").and_then(|a| a.as_str()).map(str::to_string))
            .map(|answer| (item.id.clone(), answer))
    });
    fetched.into_iter().flatten().collect()
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<(EvaluationReport, usize), CliError> {
    let corpus = read_corpus_file(&args.corpus)?;
    let answers = match (&args.answers, &args.model_endpoint) {
        (Some(path), None) => read_answers(path)?,
        (None, Some(endpoint)) => fetch_answers(&corpus, endpoint, args.concurrency),
        _ => {
            return Err(CliError::Config(
                "provide exactly one of --answers or --model-endpoint".into(),
            ))
        }
    };

    let has_open_ended = corpus.iter().any(|i| i.question_type.is_open_ended());
    let judge: Option<Box<dyn Judge + Sync>> = if args.mock_judge {
        Some(Box::new(MockJudge))
    } else if let Some(endpoint) = &args.judge_endpoint {
        Some(Box::new(RemoteJudge {
            endpoint: endpoint.clone(),
            api_key: std::env::var(JUDGE_KEY_ENV).ok(),
            http: HttpConfig::default(),
        }))
    } else {
        None
    };
    // Fail fast before any scoring happens.
    if has_open_ended && judge.is_none() {
        return Err(CliError::Config(
            "corpus contains open-ended items; configure --mock-judge or --judge-endpoint".into(),
        ));
    }

    let results: Vec<ItemResult> = par_map(corpus.len(), args.concurrency, |i| {
        score_item(&corpus[i], &answers, judge.as_deref())
    });

    let report =
        aggregate(&results).map_err(|e| CliError::Config(format!("nothing to aggregate: {e}")))?;
    if let Some(out) = &args.out {
        let json = serde_json::to_string_pretty(&report).expect("report serialize") + "\n";
        atomic_write(out, json.as_bytes())?;
    }
    Ok((report.clone(), report.items_unscored))
}

fn score_item(
    item: &QAItem,
    answers: &BTreeMap<String, String>,
    judge: Option<&(dyn Judge + Sync)>,
) -> ItemResult {
    let mut result = ItemResult {
        id: item.id.clone(),
        category: item.category,
        question_type: item.question_type,
        score: None,
        mc_unmatched: false,
        judge_clamped: false,
    };
    let Some(answer) = answers.get(&item.id) else {
        return result;
    };
    if let Some(options) = &item.mc_options {
        let mc = score_mc(answer, options);
        result.score = Some(if mc.correct { 100.0 } else { 0.0 });
        result.mc_unmatched = !mc.matched;
    } else if let Some(judge) = judge {
        match judge_score(&item.question_text, &item.reference_answer, answer, judge) {
            Ok(score) => {
                result.score = Some(score.normalized);
                result.judge_clamped = score.clamped;
            }
            Err(_) => result.score = None,
        }
    }
    result
}

// ---------------------------------------------------------------------------
// loop
// ---------------------------------------------------------------------------

pub struct LoopArgs {
    pub seed: u64,
    pub tasks: Option<String>,
    pub episodes_per_task: usize,
    pub critics: String,
    pub policy: String,
    pub compliance: f64,
    pub pause_fraction: f64,
    pub frame_rate: f64,
    pub critic_endpoint: Option<String>,
    pub out: Option<PathBuf>,
}

impl Default for LoopArgs {
    fn default() -> Self {
        Self {
            seed: 0,
            tasks: Some("PlaceCube,PushCube,PullCubeTool,StackCube".into()),
            episodes_per_task: 20,
            critics: "null,random,oracle-high,oracle-low".into(),
            policy: "scripted".into(),
            compliance: 1.0,
            pause_fraction: DEFAULT_PAUSE_FRACTION,
            frame_rate: DEFAULT_FRAME_RATE,
            critic_endpoint: None,
            out: None,
        }
    }
}

pub fn cmd_loop(args: &LoopArgs) -> Result<String, CliError> {
    let tasks = parse_tasks(args.tasks.as_deref())?;
    let mut critics = Vec::new();
    for name in args
        .critics
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
    {
        if name == "remote" {
            let endpoint = args.critic_endpoint.clone().ok_or_else(|| {
                CliError::Config("remote critic requested without --critic-endpoint".into())
            })?;
            critics.push(CriticKind::Remote {
                endpoint,
                level: manipfail::correctionloop::CriticLevel::Low,
            });
        } else {
            critics.push(
                CriticKind::parse(name)
                    .ok_or_else(|| CliError::Config(format!("unknown critic '{name}'")))?,
            );
        }
    }
    if critics.is_empty() {
        return Err(CliError::Config("no critics named".into()));
    }
    let policy = match args.policy.as_str() {
        "expert" => PolicyKind::Expert,
        "scripted" => PolicyKind::ScriptedNoisy {
            compliance: args.compliance,
        },
        other => return Err(CliError::Config(format!("unknown policy '{other}'"))),
    };

    let mut session_lines = String::new();
    let table = batch_rates(
        &tasks,
        args.episodes_per_task,
        policy,
        &critics,
        args.pause_fraction,
        args.seed,
        args.frame_rate,
        std::env::var(CRITIC_KEY_ENV).ok().as_deref(),
        |session| {
            session_lines.push_str(&serde_json::to_string(session).expect("session serialize"));
            session_lines.push('\n');
        },
    )
    .map_err(|e| CliError::Config(e.to_string()))?;

    let text = table.render_text();
    if let Some(out) = &args.out {
        let json = serde_json::to_string_pretty(&table).expect("table serialize") + "\n";
        atomic_write(out, json.as_bytes())?;
        let sessions_path = out.with_extension("sessions.jsonl");
        atomic_write(&sessions_path, session_lines.as_bytes())?;
    }
    Ok(text)
}

// ---------------------------------------------------------------------------
// render
// ---------------------------------------------------------------------------

pub fn cmd_render(trajectory: &Path, out: &Path) -> Result<(), CliError> {
    let stored = read_trajectory_file(trajectory)?;
    let svg = svg::trajectory_svg(&stored);
    atomic_write(out, svg.as_bytes())?;
    Ok(())
}

/// Re-exported for integration tests that need a pre-verified manifest.
pub fn verify_dataset(dir: &Path) -> Result<Manifest, CliError> {
    Ok(verify_manifest(dir)?)
}
