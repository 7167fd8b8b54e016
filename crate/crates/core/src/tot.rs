//! Tree-of-thoughts baseline: breadth-first step-level search with
//! model-scored expansions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answers::{extract_boxed, majority_vote, ExtractedAnswer};
use crate::gateway::{ChatClient, GatewayError};

#[derive(Debug, Error)]
pub enum TotError {
    #[error("continuation matched neither a step header nor an explanation line")]
    ParseFailure,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// One-shot prompt for generating the next reasoning step.
pub const TOT_GENERATION_TEMPLATE: &str = r##"Answering Guidelines
1. Please answer the question step by step.
2. Organize each step into two lines:
   - The first line starts with "#" followed by the step number and then succinctly describe the key action or result of the step.
   - The second line begins with "-" and provides a brief reasoning or explanation for the particular step.
3. The first line of the final step is "What is the final answer?", and the second line provides the final answer using the latex format \boxed{} in this step.

Example
Question:
By starting with a million and alternatively dividing by 2 and multiplying by 5, Anisha created a sequence of integers that starts 1000000, 500000, 2500000, 1250000, and so on. What is the last integer in her sequence? Express your answer in the form $a^b$, where $a$ and $b$ are positive integers and $a$ is as small as possible.
Answer:
Let's think step by step!
#1. How can we express a million in terms of its prime factors?
- A million can be expressed as $10^6$. Further breaking it down gives: $10^6 = (2^6)(5^6)$.

#2. What happens to the sequence as we proceed?
- Each time she divides by 2, she removes one factor of 2. Each time she multiplies by 5, she adds one factor of 5. Since she starts with 6 factors of 2, after 6 divisions by 2, all factors of 2 are removed.

#3. How many factors of 5 does she have at the end of the process?
- Initially, there are $5^6$. After 6 steps of multiplication by 5, 6 more factors of 5 are added. This gives a total of $5^6 \times 5^6 = 5^12$.

#4. What is the last integer in her sequence?
- At the end of 12 steps, every factor of 2 has been replaced with a factor of 5. Thus, the integer becomes $5^6 \times 5^6 = 5^{12}$.

#5. What is the final answer?
- $\boxed{5^{12}}$.

Please follow the Answering Guidelines and use the format shown in the above example to answer the following question!!

Question:
{question}
Answer:
Let's think step by step!
{current_steps}"##;

/// Few-shot prompt for scoring a proposed next step Yes/No.
pub const TOT_SCORING_TEMPLATE: &str = r##"Instruction:
Given a problem statement and its current reasoning steps, determine if the proposed additional reasoning step is useful for solving the problem. Note: a useful reasoning step does not need to be directly related to the final question.

Question:
Let $x, y$, and $z$ be real numbers such that $x-2y+2z = 3$ and $2x+y-z = 6$. Find $x^2 + z^2 - y^2.$
New Reasoning Step:
#1. Solve the system of equations to find the values of x, y, and z.
Is the new reasoning step necessary or useful?
No. We can't find unique values for x, y, z with only two linear equations for three unknowns.

Question:
Let $P$ be a point on the line $\begin{pmatrix} 3 \\ -1 \\ 2 \end{pmatrix} + t \begin{pmatrix} 2 \\ -2 \\ 1 \end{pmatrix}$ and let $Q$ be a point on the line $\begin{pmatrix} 0 \\ 0 \\ 4 \end{pmatrix} + s \begin{pmatrix} 1 \\ 2 \\ -1 \end{pmatrix}.$ Find the shortest possible distance $PQ.$

#1. Find the vector connecting the initial points of the two lines, which corresponds to the direction from point $P$ to point $Q$.
New Reasoning Step:
#2. Calculate the dot product of the direction vector of the first line with the direction vector of the second line.
Is the new reasoning step necessary or useful?
Yes. The dot product will help determine if the lines are parallel, which is important in calculating the shortest distance between them.

Evaluate the reasoning step in the new question by following the provided instruction, as shown in the previous examples.

Question:
{question}
{current_steps}
New Reasoning Step:
{new_step}
Is the new reasoning step necessary or useful?
"##;

/// One two-line reasoning step: a "#k. ..." header and a "- ..."
/// explanation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThoughtStep {
    pub header: String,
    pub explanation: String,
}

impl ThoughtStep {
    pub fn is_final(&self) -> bool {
        self.header.contains("What is the final answer?")
    }

    pub fn render(&self) -> String {
        format!("{}\n{}", self.header, self.explanation)
    }
}

/// A partial reasoning path in the search tree. `score` is the node's own
/// step score; depth equals the number of steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThoughtNode {
    pub steps: Vec<ThoughtStep>,
    pub score: f64,
    pub terminal: bool,
}

impl ThoughtNode {
    pub fn root() -> Self {
        Self { steps: Vec::new(), score: 0.0, terminal: false }
    }

    pub fn depth(&self) -> usize {
        self.steps.len()
    }

    pub fn rendered_steps(&self) -> String {
        self.steps.iter().map(ThoughtStep::render).collect::<Vec<_>>().join("\n\n")
    }

    pub fn with_step(&self, step: ThoughtStep) -> Self {
        let terminal = step.is_final();
        let mut steps = self.steps.clone();
        steps.push(step);
        Self { steps, score: 0.0, terminal }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Children expanded per frontier candidate.
    pub breadth: usize,
    /// Candidates kept per depth level.
    pub beam: usize,
    pub max_depth: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self { breadth: 8, beam: 5, max_depth: 16 }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.breadth == 0 || self.beam == 0 || self.max_depth == 0 {
            return Err("breadth, beam, and max_depth must all be positive".into());
        }
        Ok(())
    }
}

pub fn render_generation_prompt(question: &str, node: &ThoughtNode) -> String {
    let mut steps = node.rendered_steps();
    if !steps.is_empty() {
        steps.push('\n');
    }
    TOT_GENERATION_TEMPLATE.replace("{question}", question).replace("{current_steps}", &steps)
}

pub fn render_scoring_prompt(question: &str, node: &ThoughtNode, new_step: &ThoughtStep) -> String {
    TOT_SCORING_TEMPLATE
        .replace("{question}", question)
        .replace("{current_steps}", &node.rendered_steps())
        .replace("{new_step}", &new_step.render())
}

/// Parses the first "#k. ..." header line and its "- ..." explanation from
/// a continuation.
pub fn parse_step(continuation: &str) -> Result<ThoughtStep, TotError> {
    let mut lines = continuation.lines().map(str::trim).filter(|l| !l.is_empty());
    let header = lines
        .find(|l| l.starts_with('#'))
        .ok_or(TotError::ParseFailure)?
        .to_string();
    let explanation = lines
        .next()
        .filter(|l| l.starts_with('-'))
        .ok_or(TotError::ParseFailure)?
        .to_string();
    Ok(ThoughtStep { header, explanation })
}

/// Samples one continuation and parses it into a child node.
pub fn generate_step(
    question_id: &str,
    question: &str,
    node: &ThoughtNode,
    child_index: u32,
    client: &ChatClient,
) -> Result<ThoughtNode, TotError> {
    let prompt = render_generation_prompt(question, node);
    let response = client.complete_prompt(question_id, &prompt, child_index)?;
    let step = parse_step(&response.text)?;
    Ok(node.with_step(step))
}

/// Scores a proposed step 1 (verdict begins "Yes") or 0 (anything else).
pub fn score_step(
    question_id: &str,
    question: &str,
    node: &ThoughtNode,
    new_step: &ThoughtStep,
    client: &ChatClient,
) -> Result<f64, TotError> {
    let prompt = render_scoring_prompt(question, node, new_step);
    let response = client.complete_prompt(question_id, &prompt, 0)?;
    let verdict = response.text.trim_start();
    Ok(if verdict.starts_with("Yes") { 1.0 } else { 0.0 })
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct LevelStats {
    pub depth: usize,
    pub generation_calls: usize,
    pub scoring_calls: usize,
    pub parse_failures: usize,
    pub frontier_size: usize,
    pub terminals_found: usize,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub terminals: Vec<ThoughtNode>,
    pub levels: Vec<LevelStats>,
}

/// Breadth-first search: each level expands every frontier candidate into
/// `breadth` children, scores each child, and keeps the top `beam` by
/// (score desc, generation order asc). Terminal children leave the
/// frontier and join the result set.
pub fn tot_search(
    question_id: &str,
    question: &str,
    config: &SearchConfig,
    client: &ChatClient,
) -> Result<SearchOutcome, TotError> {
    config.validate().expect("valid search config");
    let mut frontier = vec![ThoughtNode::root()];
    let mut outcome = SearchOutcome::default();

    for depth in 0..config.max_depth {
        if frontier.is_empty() {
            break;
        }
        let mut stats = LevelStats { depth, ..Default::default() };
        let mut children: Vec<ThoughtNode> = Vec::new();
        for node in &frontier {
            for child_index in 0..config.breadth {
                stats.generation_calls += 1;
                let mut child =
                    match generate_step(question_id, question, node, child_index as u32, client) {
                        Ok(child) => child,
                        Err(TotError::ParseFailure) => {
                            stats.parse_failures += 1;
                            continue;
                        }
                        Err(e) => return Err(e),
                    };
                stats.scoring_calls += 1;
                let step = child.steps.last().expect("child has a new step").clone();
                child.score = score_step(question_id, question, node, &step, client)?;
                children.push(child);
            }
        }

        let (terminal, mut live): (Vec<ThoughtNode>, Vec<ThoughtNode>) =
            children.into_iter().partition(|c| c.terminal);
        stats.terminals_found = terminal.len();
        outcome.terminals.extend(terminal);
        // stable sort preserves generation order within equal scores
        live.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap_or(std::cmp::Ordering::Equal));
        live.truncate(config.beam);
        stats.frontier_size = live.len();
        outcome.levels.push(stats);
        frontier = live;
    }

    Ok(outcome)
}

/// Majority vote over the boxed answers of terminal chains; unique winner
/// or None on tie/empty.
pub fn tot_answer(terminals: &[ThoughtNode]) -> Option<ExtractedAnswer> {
    let answers: Vec<Option<ExtractedAnswer>> = terminals
        .iter()
        .map(|t| t.steps.last().and_then(|s| extract_boxed(&s.explanation)))
        .collect();
    majority_vote(&answers).unique_winner().cloned()
}
