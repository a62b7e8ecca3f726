//! Evaluation protocol: multiple-choice accuracy for the three deterministic
//! question types, three-dimension judge scoring normalized to a 100-point
//! scale for the rest, and report aggregation by task category and question
//! type.

use crate::injector::Taxonomy;
use crate::net::{post_json, HttpConfig};
use crate::qasynth::QuestionType;
use crate::rng::{derive_seed, rng_for};
use crate::taskmodel::Category;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("option construction: {0}")]
    OptionConstruction(String),
    #[error("no scored items to aggregate")]
    EmptyReport,
}

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error("judge endpoint unavailable: {0}")]
    Endpoint(String),
    #[error("judge response unparseable: {0}")]
    Unparseable(String),
}

// ---------------------------------------------------------------------------
// Multiple choice
// ---------------------------------------------------------------------------

/// Fixed option set for one multiple-choice item. Sizes are fixed per type:
/// detection 2, identification 6, locating 5.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MCOptionSet {
    pub options: Vec<String>,
    pub correct_index: usize,
}

impl MCOptionSet {
    pub fn label(i: usize) -> char {
        (b'A' + i as u8) as char
    }

    pub fn correct_option(&self) -> &str {
        &self.options[self.correct_index]
    }

    /// Options rendered as "A. ..." lines for inclusion in a question.
    pub fn rendered(&self) -> String {
        self.options
            .iter()
            .enumerate()
            .map(|(i, o)| format!("{}. {}", Self::label(i), o))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Builds the option set for a multiple-choice question type. Detection is
/// the binary Yes/No set; identification shuffles the six canonical failure
/// type strings; locating samples four distractor substage names and mixes
/// in the correct one.
pub fn build_mc_options(
    qtype: QuestionType,
    truth: &str,
    substage_pool: &[String],
    seed: u64,
) -> Result<MCOptionSet, EvalError> {
    let mut rng = rng_for(derive_seed(seed, "mc-options", 0));
    let mut options: Vec<String> = match qtype {
        QuestionType::FailureDetection => vec!["Yes".to_string(), "No".to_string()],
        QuestionType::FailureIdentification => {
            if !Taxonomy::ALL.iter().any(|t| t.option_string() == truth) {
                return Err(EvalError::OptionConstruction(format!(
                    "'{truth}' is not a canonical failure type option"
                )));
            }
            Taxonomy::ALL
                .iter()
                .map(|t| t.option_string().to_string())
                .collect()
        }
        QuestionType::FailureLocating => {
            let mut pool: Vec<&String> = substage_pool.iter().filter(|s| *s != truth).collect();
            if pool.len() < 4 {
                return Err(EvalError::OptionConstruction(format!(
                    "substage pool has {} names, need 4 distractors",
                    pool.len()
                )));
            }
            let mut picked = Vec::with_capacity(4);
            for _ in 0..4 {
                let i = rng.random_range(0..pool.len());
                picked.push(pool.swap_remove(i).clone());
            }
            picked.push(truth.to_string());
            picked
        }
        other => {
            return Err(EvalError::OptionConstruction(format!(
                "{other:?} is not a multiple-choice type"
            )))
        }
    };
    options.shuffle(&mut rng);
    let correct_index = options
        .iter()
        .position(|o| o == truth)
        .ok_or_else(|| EvalError::OptionConstruction("truth missing from options".into()))?;
    Ok(MCOptionSet {
        options,
        correct_index,
    })
}

fn normalize_text(s: &str) -> String {
    s.chars()
        .filter_map(|c| {
            if c.is_alphanumeric() {
                Some(c.to_ascii_lowercase())
            } else if c.is_whitespace() {
                Some(' ')
            } else {
                None
            }
        })
        .collect::<String>()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McScore {
    pub correct: bool,
    /// False when the answer matched no option and scored zero by default.
    pub matched: bool,
}

/// Scores a free-text answer against an option set: exact letter label
/// first, then case/punctuation-normalized full-text match; anything else
/// scores zero and is flagged unmatched.
pub fn score_mc(answer: &str, options: &MCOptionSet) -> McScore {
    let trimmed = answer.trim();
    let stripped: String = trimmed
        .trim_end_matches(['.', ')', ':'])
        .trim_start_matches(['(', '['])
        .trim_end_matches(']')
        .trim()
        .to_string();
    if stripped.len() == 1 {
        let c = stripped.chars().next().unwrap().to_ascii_uppercase();
        if c.is_ascii_uppercase() {
            let idx = (c as u8 - b'A') as usize;
            if idx < options.options.len() {
                return McScore {
                    correct: idx == options.correct_index,
                    matched: true,
                };
            }
        }
    }
    let norm = normalize_text(trimmed);
    for (i, opt) in options.options.iter().enumerate() {
        if normalize_text(opt) == norm {
            return McScore {
                correct: i == options.correct_index,
                matched: true,
            };
        }
    }
    McScore {
        correct: false,
        matched: false,
    }
}

// ---------------------------------------------------------------------------
// Judge scoring
// ---------------------------------------------------------------------------

/// Raw integer triple a judge emits before clamping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JudgeTriple {
    pub correctness: i64,
    pub relevance: i64,
    pub completeness: i64,
}

/// Per-dimension scores on the 0-5 scale plus the 100-point normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeScore {
    pub correctness: u8,
    pub relevance: u8,
    pub completeness: u8,
    pub normalized: f64,
    /// An out-of-range dimension was clamped into [0, 5].
    pub clamped: bool,
}

pub trait Judge {
    fn evaluate(
        &self,
        question: &str,
        reference: &str,
        prediction: &str,
    ) -> Result<JudgeTriple, JudgeError>;
}

/// Prompt sent to the scoring endpoint, with `{question}`, `{ref}` and
/// `{pred}` substituted.
pub const JUDGE_PROMPT: &str = "You are an expert evaluator. Assess the quality of a model's response to the user's query.\n\nQuestion: {question}\n\nReference answer: {ref}\n\nModel's response: {pred}\n\nEvaluate the model's response on the following criteria:\n- correctness: factual accuracy and consistency with the reference answer.\n- relevance: how well the model's response addresses the question.\n- completeness: whether all key aspects of the reference answer are covered.\n\nFor each criterion, provide a score from 0 to 5 and a **brief** explanation, the score should be an integer.\nThe score you give needs to be strict and demanding.\n\nOutput ONLY the JSON object in the following format:\n{\n\"criteria\": {\n    \"correctness\": {\"score\": <0-5>, \"explanation\": <brief explanation>},\n    \"relevance\": {\"score\": <0-5>, \"explanation\": <brief explanation>},\n    \"completeness\": {\"score\": <0-5>, \"explanation\": <brief explanation>},\n}\n}";

/// Sampling parameters requested from the judge endpoint.
pub const JUDGE_TEMPERATURE: f64 = 0.2;
pub const JUDGE_TOP_P: f64 = 1.0;

/// Clamps a raw triple into range and computes the 100-point normalization:
/// the mean of the three dimensions times 20.
pub fn finalize_judge_score(raw: JudgeTriple) -> JudgeScore {
    let clamp = |v: i64| -> (u8, bool) {
        if (0..=5).contains(&v) {
            (v as u8, false)
        } else {
            (v.clamp(0, 5) as u8, true)
        }
    };
    let (c, f1) = clamp(raw.correctness);
    let (r, f2) = clamp(raw.relevance);
    let (p, f3) = clamp(raw.completeness);
    JudgeScore {
        correctness: c,
        relevance: r,
        completeness: p,
        normalized: (c as f64 + r as f64 + p as f64) / 3.0 * 20.0,
        clamped: f1 || f2 || f3,
    }
}

/// Scores a prediction against a reference with the given judge.
pub fn judge_score(
    question: &str,
    reference: &str,
    prediction: &str,
    judge: &dyn Judge,
) -> Result<JudgeScore, JudgeError> {
    Ok(finalize_judge_score(
        judge.evaluate(question, reference, prediction)?,
    ))
}

/// Deterministic offline judge: full marks on normalized-text equality,
/// otherwise graded bands on reference-token recall (fraction of reference
/// tokens present in the prediction): >= 0.75 scores 4, >= 0.5 scores 3,
/// >= 0.25 scores 2, > 0 scores 1, 0 scores 0.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockJudge;

impl Judge for MockJudge {
    fn evaluate(
        &self,
        _question: &str,
        reference: &str,
        prediction: &str,
    ) -> Result<JudgeTriple, JudgeError> {
        let score = if normalize_text(reference) == normalize_text(prediction) {
            5
        } else {
            let ref_tokens: Vec<String> = normalize_text(reference)
                .split(' ')
                .filter(|t| !t.is_empty())
                .map(str::to_string)
                .collect();
            if ref_tokens.is_empty() {
                0
            } else {
                let pred_norm = normalize_text(prediction);
                let pred_tokens: std::collections::BTreeSet<&str> = pred_norm.split(' ').collect();
                let hit = ref_tokens
                    .iter()
                    .filter(|t| pred_tokens.contains(t.as_str()))
                    .count();
                let recall = hit as f64 / ref_tokens.len() as f64;
                if recall >= 0.75 {
                    4
                } else if recall >= 0.5 {
                    3
                } else if recall >= 0.25 {
                    2
                } else if recall > 0.0 {
                    1
                } else {
                    0
                }
            }
        };
        Ok(JudgeTriple {
            correctness: score,
            relevance: score,
            completeness: score,
        })
    }
}

/// Remote judge speaking the scoring wire protocol: the filled prompt plus
/// sampling parameters out, the three-criterion JSON document back.
pub struct RemoteJudge {
    pub endpoint: String,
    pub api_key: Option<String>,
    pub http: HttpConfig,
}

impl Judge for RemoteJudge {
    fn evaluate(
        &self,
        question: &str,
        reference: &str,
        prediction: &str,
    ) -> Result<JudgeTriple, JudgeError> {
        let prompt = JUDGE_PROMPT
            .replace("{question}", question)
            .replace("{ref}", reference)
            .replace("{pred}", prediction);
        let body = json!({
            "prompt": prompt,
            "temperature": JUDGE_TEMPERATURE,
            "top_p": JUDGE_TOP_P,
        });
        let resp = post_json(&self.endpoint, &body, self.api_key.as_deref(), &self.http)
            .map_err(|e| JudgeError::Endpoint(e.to_string()))?;
        parse_judge_response(&resp).ok_or_else(|| JudgeError::Unparseable(resp.to_string()))
    }
}

fn parse_judge_response(v: &serde_json::Value) -> Option<JudgeTriple> {
    let criteria = v.get("criteria")?;
    let score = |name: &str| -> Option<i64> { criteria.get(name)?.get("score")?.as_i64() };
    Some(JudgeTriple {
        correctness: score("correctness")?,
        relevance: score("relevance")?,
        completeness: score("completeness")?,
    })
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

/// Scored outcome of one corpus item, on the common 0-100 scale
/// (multiple choice maps to 0 or 100). `None` marks an unscored item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemResult {
    pub id: String,
    pub category: Category,
    pub question_type: QuestionType,
    pub score: Option<f64>,
    #[serde(default)]
    pub mc_unmatched: bool,
    #[serde(default)]
    pub judge_clamped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub items_total: usize,
    pub items_unscored: usize,
    pub mc_unmatched: usize,
    pub judge_clamped: usize,
    /// Percent correct per multiple-choice question type.
    pub accuracy_by_mc_type: BTreeMap<String, f64>,
    /// Mean normalized score per open-ended question type.
    pub mean_by_open_type: BTreeMap<String, f64>,
    /// Mean 0-100 score per question type (all eight).
    pub by_question_type: BTreeMap<String, f64>,
    /// Mean 0-100 score per task category; items weigh equally in category.
    pub by_category: BTreeMap<String, f64>,
    /// Unweighted mean over the category means.
    pub overall_average: f64,
}

/// Aggregates item results into the report. Permutation-invariant.
pub fn aggregate(results: &[ItemResult]) -> Result<EvaluationReport, EvalError> {
    let scored: Vec<&ItemResult> = results.iter().filter(|r| r.score.is_some()).collect();
    if scored.is_empty() {
        return Err(EvalError::EmptyReport);
    }

    let mut by_type: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    let mut by_cat: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for r in &scored {
        let v = r.score.unwrap();
        let t = by_type
            .entry(r.question_type.slug().to_string())
            .or_insert((0.0, 0));
        t.0 += v;
        t.1 += 1;
        let c = by_cat
            .entry(r.category.as_str().to_string())
            .or_insert((0.0, 0));
        c.0 += v;
        c.1 += 1;
    }
    let by_question_type: BTreeMap<String, f64> = by_type
        .iter()
        .map(|(k, (sum, n))| (k.clone(), sum / *n as f64))
        .collect();
    let by_category: BTreeMap<String, f64> = by_cat
        .iter()
        .map(|(k, (sum, n))| (k.clone(), sum / *n as f64))
        .collect();
    let overall_average = by_category.values().sum::<f64>() / by_category.len() as f64;

    let mut accuracy_by_mc_type = BTreeMap::new();
    let mut mean_by_open_type = BTreeMap::new();
    for (k, v) in &by_question_type {
        let qt = QuestionType::from_slug(k).expect("slug round-trips");
        if qt.is_multiple_choice() {
            accuracy_by_mc_type.insert(k.clone(), *v);
        } else {
            mean_by_open_type.insert(k.clone(), *v);
        }
    }

    Ok(EvaluationReport {
        items_total: results.len(),
        items_unscored: results.len() - scored.len(),
        mc_unmatched: results.iter().filter(|r| r.mc_unmatched).count(),
        judge_clamped: results.iter().filter(|r| r.judge_clamped).count(),
        accuracy_by_mc_type,
        mean_by_open_type,
        by_question_type,
        by_category,
        overall_average,
    })
}

impl EvaluationReport {
    /// Plain-text table of the report.
    pub fn render_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "items: {} scored, {} unscored, {} unmatched MC answers, {} clamped judge scores\n",
            self.items_total - self.items_unscored,
            self.items_unscored,
            self.mc_unmatched,
            self.judge_clamped
        ));
        s.push_str("\nby question type:\n");
        for (k, v) in &self.by_question_type {
            s.push_str(&format!("  {k:<24} {v:7.2}\n"));
        }
        s.push_str("\nby task category:\n");
        for (k, v) in &self.by_category {
            s.push_str(&format!("  {k:<24} {v:7.2}\n"));
        }
        s.push_str(&format!("\noverall average: {:.2}\n", self.overall_average));
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taskmodel::all_substage_names;

    #[test]
    fn detection_options_are_the_binary_set() {
        let set = build_mc_options(QuestionType::FailureDetection, "No", &[], 3).unwrap();
        assert_eq!(set.options.len(), 2);
        assert!(set.options.contains(&"Yes".to_string()));
        assert!(set.options.contains(&"No".to_string()));
        assert_eq!(set.correct_option(), "No");
    }

    #[test]
    fn identification_options_are_the_six_canonical_strings() {
        let set = build_mc_options(
            QuestionType::FailureIdentification,
            "Wrong target object.",
            &[],
            9,
        )
        .unwrap();
        assert_eq!(set.options.len(), 6);
        for t in Taxonomy::ALL {
            assert!(set.options.contains(&t.option_string().to_string()));
        }
    }

    #[test]
    fn locating_options_have_unique_correct_and_four_distractors() {
        let pool = all_substage_names();
        let set =
            build_mc_options(QuestionType::FailureLocating, "grasp the cube", &pool, 4).unwrap();
        assert_eq!(set.options.len(), 5);
        assert_eq!(
            set.options
                .iter()
                .filter(|o| *o == "grasp the cube")
                .count(),
            1
        );
        let distinct: std::collections::BTreeSet<&String> = set.options.iter().collect();
        assert_eq!(distinct.len(), 5);
    }

    #[test]
    fn insufficient_pool_is_a_configuration_error() {
        let pool = vec!["a".to_string(), "b".to_string()];
        assert!(build_mc_options(QuestionType::FailureLocating, "x", &pool, 1).is_err());
    }

    #[test]
    fn score_by_label_and_by_text() {
        let set = MCOptionSet {
            options: vec!["Yes".into(), "No".into()],
            correct_index: 1,
        };
        assert!(score_mc("B", &set).correct);
        assert!(score_mc("b.", &set).correct);
        assert!(score_mc("no", &set).correct);
        assert!(score_mc("No.", &set).correct);
        assert!(!score_mc("Yes", &set).correct);
        let g = score_mc("flurble", &set);
        assert!(!g.correct && !g.matched);
    }

    #[test]
    fn normalization_is_exact_for_the_reference_triples() {
        for (triple, expected) in [((5, 5, 5), 100.0), ((0, 0, 0), 0.0), ((3, 4, 5), 80.0)] {
            let s = finalize_judge_score(JudgeTriple {
                correctness: triple.0,
                relevance: triple.1,
                completeness: triple.2,
            });
            assert_eq!(s.normalized, expected);
            assert!(!s.clamped);
        }
    }

    #[test]
    fn out_of_range_judge_scores_are_clamped_and_flagged() {
        let s = finalize_judge_score(JudgeTriple {
            correctness: 9,
            relevance: -1,
            completeness: 5,
        });
        assert_eq!((s.correctness, s.relevance, s.completeness), (5, 0, 5));
        assert!(s.clamped);
    }

    #[test]
    fn mock_judge_gives_full_marks_on_reference_equality() {
        let s = judge_score("q", "pick the cube", "Pick the cube.", &MockJudge).unwrap();
        assert_eq!(s.normalized, 100.0);
        let s = judge_score("q", "pick the cube", "weld the pipe", &MockJudge).unwrap();
        assert!(s.normalized < 100.0);
    }

    #[test]
    fn aggregation_is_permutation_invariant() {
        let mk = |id: &str, cat: Category, qt: QuestionType, v: f64| ItemResult {
            id: id.into(),
            category: cat,
            question_type: qt,
            score: Some(v),
            mc_unmatched: false,
            judge_clamped: false,
        };
        let mut items = vec![
            mk(
                "a",
                Category::ShortHorizon,
                QuestionType::FailureDetection,
                100.0,
            ),
            mk(
                "b",
                Category::ShortHorizon,
                QuestionType::TaskPlanning,
                60.0,
            ),
            mk("c", Category::Dynamic, QuestionType::FailureDetection, 0.0),
            mk(
                "d",
                Category::LongHorizon,
                QuestionType::FailureLocating,
                100.0,
            ),
        ];
        let r1 = aggregate(&items).unwrap();
        items.reverse();
        let r2 = aggregate(&items).unwrap();
        assert_eq!(r1, r2);
        // Unweighted mean over category means.
        let expect = (80.0 + 0.0 + 100.0) / 3.0;
        assert!((r1.overall_average - expect).abs() < 1e-12);
    }

    #[test]
    fn zero_scored_items_is_an_error() {
        let items = vec![ItemResult {
            id: "a".into(),
            category: Category::ShortHorizon,
            question_type: QuestionType::TaskPlanning,
            score: None,
            mc_unmatched: false,
            judge_clamped: false,
        }];
        assert!(matches!(aggregate(&items), Err(EvalError::EmptyReport)));
    }

    #[test]
    fn judge_response_document_parses() {
        let v: serde_json::Value = serde_json::from_str(
            r#"{"criteria":{"correctness":{"score":4,"explanation":"x"},
                "relevance":{"score":5,"explanation":"y"},
                "completeness":{"score":3,"explanation":"z"}}}"#,
        )
        .unwrap();
        let t = parse_judge_response(&v).unwrap();
        assert_eq!((t.correctness, t.relevance, t.completeness), (4, 5, 3));
        assert!(parse_judge_response(&serde_json::json!({"nope": 1})).is_none());
    }
}
