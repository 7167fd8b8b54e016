//! Scoring and analysis: grouped-majority recall with tie expectation,
//! accuracy, recall curves, the correct-count histogram, the
//! exploration-gain calculator, and per-category report tables.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::answers::{equivalent, ExtractedAnswer, VoteTally};

/// Expected fraction-of-a-question credit that the truth appears among the
/// group-majority answers, under independent uniform tie-breaking per
/// group: 1 - prod_i (1 - p_i) with p_i = [truth in winners_i] / t_i.
pub fn grouped_majority_recall(group_tallies: &[VoteTally], truth: &ExtractedAnswer) -> f64 {
    assert!(!group_tallies.is_empty(), "at least one tally required");
    let mut miss_all = 1.0f64;
    for tally in group_tallies {
        let t = tally.winners.len();
        let p = if t > 0 && tally.winner_matches(truth) { 1.0 / t as f64 } else { 0.0 };
        miss_all *= 1.0 - p;
    }
    1.0 - miss_all
}

/// Per-question scores across the selection variants.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuestionScore {
    pub question_id: String,
    pub category: String,
    pub gmr: f64,
    pub tournament_correct: bool,
    pub flat_majority_correct: bool,
    pub grouped_majority_correct: bool,
}

/// Mean of the selected boolean field over all scores.
pub fn accuracy(scores: &[QuestionScore], field: impl Fn(&QuestionScore) -> bool) -> f64 {
    assert!(!scores.is_empty(), "scores must be non-empty");
    scores.iter().filter(|s| field(s)).count() as f64 / scores.len() as f64
}

/// Point j (1-based) = fraction of questions with at least one correct
/// answer among their first j chains. Non-decreasing in j.
pub fn recall_at_samples(
    chain_answers_per_question: &[Vec<Option<ExtractedAnswer>>],
    truth_per_question: &[ExtractedAnswer],
    max_j: usize,
) -> Vec<f64> {
    assert_eq!(chain_answers_per_question.len(), truth_per_question.len());
    assert!(chain_answers_per_question.iter().all(|c| c.len() >= max_j), "too few chains");
    let questions = chain_answers_per_question.len();
    let mut curve = Vec::with_capacity(max_j);
    for j in 1..=max_j {
        let hits = chain_answers_per_question
            .iter()
            .zip(truth_per_question)
            .filter(|(answers, truth)| {
                answers[..j]
                    .iter()
                    .any(|a| a.as_ref().is_some_and(|a| equivalent(a, truth)))
            })
            .count();
        curve.push(hits as f64 / questions as f64);
    }
    curve
}

/// Bucket x = fraction of questions with exactly x correct chains. Chain
/// counts must be uniform; buckets run 0..=m and sum to 1.
pub fn correct_count_histogram(
    chain_answers_per_question: &[Vec<Option<ExtractedAnswer>>],
    truth_per_question: &[ExtractedAnswer],
) -> Vec<f64> {
    assert_eq!(chain_answers_per_question.len(), truth_per_question.len());
    assert!(!chain_answers_per_question.is_empty(), "no questions");
    let m = chain_answers_per_question[0].len();
    assert!(
        chain_answers_per_question.iter().all(|c| c.len() == m),
        "chain counts must be uniform"
    );
    let mut buckets = vec![0.0f64; m + 1];
    for (answers, truth) in chain_answers_per_question.iter().zip(truth_per_question) {
        let correct = answers
            .iter()
            .filter(|a| a.as_ref().is_some_and(|a| equivalent(a, truth)))
            .count();
        buckets[correct] += 1.0;
    }
    let total = chain_answers_per_question.len() as f64;
    for b in &mut buckets {
        *b /= total;
    }
    buckets
}

/// Distribution inputs for the exploration-gain contrast: hint-set
/// proposals with probabilities, per-tactic success rates, and the
/// marginal tactic distribution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TacticMixture {
    /// (tactic ids in the set, probability of the leader proposing it)
    pub hint_sets: Vec<(Vec<String>, f64)>,
    /// tactic id -> probability a chain under that tactic succeeds
    pub success: BTreeMap<String, f64>,
    /// tactic id -> marginal probability of the tactic without a hint
    pub marginal: BTreeMap<String, f64>,
}

impl TacticMixture {
    pub fn validate(&self) -> Result<(), String> {
        let set_sum: f64 = self.hint_sets.iter().map(|(_, p)| p).sum();
        if (set_sum - 1.0).abs() > 1e-9 {
            return Err(format!("hint-set probabilities sum to {set_sum}, expected 1"));
        }
        let marginal_sum: f64 = self.marginal.values().sum();
        if (marginal_sum - 1.0).abs() > 1e-9 {
            return Err(format!("marginal probabilities sum to {marginal_sum}, expected 1"));
        }
        for (set, _) in &self.hint_sets {
            if set.is_empty() {
                return Err("empty hint set".into());
            }
            for tactic in set {
                if !self.success.contains_key(tactic) {
                    return Err(format!("tactic {tactic} has no success entry"));
                }
            }
        }
        if self.success.values().any(|p| !(0.0..=1.0).contains(p)) {
            return Err("success probabilities must lie in [0, 1]".into());
        }
        Ok(())
    }
}

/// Answer probability under marginal tactic sampling versus under uniform
/// sampling within a proposed hint set.
pub fn exploration_gain(mix: &TacticMixture) -> (f64, f64) {
    mix.validate().expect("mixture invariants");
    let p_marginal: f64 = mix
        .marginal
        .iter()
        .map(|(tactic, prob)| prob * mix.success.get(tactic).copied().unwrap_or(0.0))
        .sum();
    let p_hierarchical: f64 = mix
        .hint_sets
        .iter()
        .map(|(set, prob)| {
            let mean: f64 =
                set.iter().map(|t| mix.success[t]).sum::<f64>() / set.len() as f64;
            prob * mean
        })
        .sum();
    (p_marginal, p_hierarchical)
}

/// MATH categories in report column order, paired with column labels.
pub const MATH_CATEGORIES: [(&str, &str); 7] = [
    ("Algebra", "Alg."),
    ("Counting & Probability", "Count.&Prob."),
    ("Geometry", "Geom."),
    ("Intermediate Algebra", "Interm. Alg."),
    ("Number Theory", "Num. Theory"),
    ("Prealgebra", "Prealg."),
    ("Precalculus", "Precal."),
];

pub const OVERALL_LABEL: &str = "Overall";

/// Per-category score table. Columns follow the fixed category order
/// (empty categories omitted) and end with Overall, which averages over
/// questions rather than over category means.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreReport {
    pub columns: Vec<String>,
    pub rows: Vec<ReportRow>,
    pub question_count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRow {
    pub metric: String,
    /// Percentages, one per column.
    pub values: Vec<f64>,
}

pub fn build_report(scores: &[QuestionScore]) -> ScoreReport {
    assert!(!scores.is_empty(), "scores must be non-empty");
    let mut categories: Vec<&str> = MATH_CATEGORIES
        .iter()
        .filter(|(name, _)| scores.iter().any(|s| s.category == *name))
        .map(|(name, _)| *name)
        .collect();
    // non-MATH categories (e.g. gsm8k) come after the fixed seven
    for score in scores {
        if !categories.contains(&score.category.as_str())
            && !MATH_CATEGORIES.iter().any(|(name, _)| *name == score.category)
        {
            categories.push(&score.category);
        }
    }

    let label_of = |name: &str| -> String {
        MATH_CATEGORIES
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, label)| label.to_string())
            .unwrap_or_else(|| name.to_string())
    };
    let columns: Vec<String> =
        categories.iter().map(|c| label_of(c)).chain([OVERALL_LABEL.to_string()]).collect();

    type MetricFn = Box<dyn Fn(&QuestionScore) -> f64>;
    let metric_rows: [(&str, MetricFn); 4] = [
        ("GMR", Box::new(|s: &QuestionScore| s.gmr)),
        ("Tournament", Box::new(|s: &QuestionScore| s.tournament_correct as u8 as f64)),
        ("Flat Majority", Box::new(|s: &QuestionScore| s.flat_majority_correct as u8 as f64)),
        ("Grouped Majority", Box::new(|s: &QuestionScore| s.grouped_majority_correct as u8 as f64)),
    ];

    let mut rows = Vec::new();
    for (metric, value) in &metric_rows {
        let mut values = Vec::with_capacity(columns.len());
        for category in &categories {
            let subset: Vec<f64> = scores
                .iter()
                .filter(|s| s.category == *category)
                .map(value)
                .collect();
            values.push(100.0 * subset.iter().sum::<f64>() / subset.len() as f64);
        }
        // Overall is the question-level mean, not the mean of category means
        values.push(100.0 * scores.iter().map(value).sum::<f64>() / scores.len() as f64);
        rows.push(ReportRow { metric: metric.to_string(), values });
    }

    ScoreReport { columns, rows, question_count: scores.len() }
}

impl ScoreReport {
    /// Aligned text table with two-decimal percentages.
    pub fn render_text(&self) -> String {
        let metric_width = self
            .rows
            .iter()
            .map(|r| r.metric.len())
            .chain(["Metric".len()])
            .max()
            .unwrap_or(6);
        let widths: Vec<usize> = self.columns.iter().map(|c| c.len().max(6)).collect();
        let mut out = String::new();
        out.push_str(&format!("{:<metric_width$}", "Metric"));
        for (col, w) in self.columns.iter().zip(&widths) {
            out.push_str(&format!("  {col:>w$}"));
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&format!("{:<metric_width$}", row.metric));
            for (value, w) in row.values.iter().zip(&widths) {
                out.push_str(&format!("  {value:>w$.2}"));
            }
            out.push('\n');
        }
        out
    }
}
