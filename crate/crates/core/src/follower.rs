//! The low-level follower policy: render hint-conditioned prompts and
//! sample m reasoning chains per hint, producing reasoning groups.

use serde::{Deserialize, Serialize};

use crate::answers::{extract_boxed, majority_vote, ExtractedAnswer, VoteTally};
use crate::gateway::ChatClient;
use crate::leader::{Exemplar, Hint, HintKind};

/// Zero-shot prompt for the baseline chain-of-thought group.
pub const COT_PROMPT_TEMPLATE: &str = r#"Question:
{question}

Please provide step-by-step reasoning, and present the final answer in the LaTeX environment starting with \boxed{.

Answer:
"#;

/// Zero-shot prompt for following a concise technique hint.
pub const TACTIC_FOLLOW_TEMPLATE: &str = r#"Question:
{question}

Use the methods related to "{technique}" to derive your answer!
Detail your reasoning step-by-step.
Finally, present your final answer using the LaTeX command "\boxed{".

Answer:
"#;

/// Zero-shot prompt for following a retrieved problem-solution exemplar.
pub const EXEMPLAR_FOLLOW_TEMPLATE: &str = r#"Question:
{demo_question}

Answer:
{demo_answer}

Please refer to the above example as a demonstration. If it is not relevant to the current question, you may disregard them.

Question:
{question}
Answer:
Please provide step-by-step reasoning, and present the final answer in the latex environment starting with \boxed{, without using a diagram.
"#;

pub fn render_cot_prompt(question: &str) -> String {
    COT_PROMPT_TEMPLATE.replace("{question}", question)
}

pub fn render_tactic_prompt(question: &str, technique: &str) -> String {
    assert!(!technique.is_empty(), "technique must be non-empty");
    TACTIC_FOLLOW_TEMPLATE.replace("{question}", question).replace("{technique}", technique)
}

pub fn render_exemplar_prompt(question: &str, exemplar: &Exemplar) -> String {
    assert!(
        !exemplar.problem.is_empty() && !exemplar.solution.is_empty(),
        "exemplar must have non-empty problem and solution"
    );
    EXEMPLAR_FOLLOW_TEMPLATE
        .replace("{demo_question}", &exemplar.problem)
        .replace("{demo_answer}", &exemplar.solution)
        .replace("{question}", question)
}

/// Renders the prompt appropriate for the hint; no hint means baseline CoT.
pub fn render_follower_prompt(question: &str, hint: Option<&Hint>) -> String {
    match hint.map(|h| &h.kind) {
        None => render_cot_prompt(question),
        Some(HintKind::Technique { technique }) => render_tactic_prompt(question, technique),
        Some(HintKind::Exemplar { exemplar }) => render_exemplar_prompt(question, exemplar),
    }
}

/// One sampled model output with its extracted answer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReasoningChain {
    pub text: String,
    pub answer: Option<ExtractedAnswer>,
    /// 0 for the baseline CoT group, otherwise the hint's rank.
    pub hint_rank: usize,
    pub sample_index: usize,
}

impl ReasoningChain {
    pub fn from_text(text: impl Into<String>, hint_rank: usize, sample_index: usize) -> Self {
        let text = text.into();
        let answer = extract_boxed(&text);
        Self { text, answer, hint_rank, sample_index }
    }
}

/// One hint plus its m sampled chains and their vote tally. Chains without
/// an extractable answer stay in the group but never vote.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReasoningGroup {
    pub hint: Option<Hint>,
    pub chains: Vec<ReasoningChain>,
    pub tally: VoteTally,
    /// Set when backend failures left fewer than m chains.
    pub degraded: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<String>,
}

impl ReasoningGroup {
    /// Builds a group from already-sampled chains, computing the tally.
    pub fn from_chains(hint: Option<Hint>, chains: Vec<ReasoningChain>) -> Self {
        let answers: Vec<Option<ExtractedAnswer>> =
            chains.iter().map(|c| c.answer.clone()).collect();
        let tally = majority_vote(&answers);
        Self { hint, chains, tally, degraded: false, errors: Vec::new() }
    }
}

/// Samples m completions of the hint-appropriate prompt (sample_index
/// 0..m-1), extracts answers, and tallies the group. Per-chain backend
/// failures mark the group degraded instead of aborting it.
pub fn sample_group(
    question_id: &str,
    question: &str,
    hint: Option<&Hint>,
    m: usize,
    client: &ChatClient,
) -> ReasoningGroup {
    assert!(m >= 1, "m must be at least 1");
    let prompt = render_follower_prompt(question, hint);
    let hint_rank = hint.map(|h| h.rank).unwrap_or(0);
    let mut chains = Vec::with_capacity(m);
    let mut errors = Vec::new();
    for sample_index in 0..m {
        match client.complete_prompt(question_id, &prompt, sample_index as u32) {
            Ok(response) => {
                chains.push(ReasoningChain::from_text(response.text, hint_rank, sample_index));
            }
            Err(e) => errors.push(format!("sample {sample_index}: {e}")),
        }
    }
    let degraded = chains.len() < m;
    let mut group = ReasoningGroup::from_chains(hint.cloned(), chains);
    group.degraded = degraded;
    group.errors = errors;
    group
}
