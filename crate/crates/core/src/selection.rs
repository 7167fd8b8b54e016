//! Tournament-based final-chain selection plus the voting baselines.
//!
//! One representative chain per group enters a sequential tournament:
//! incumbent vs challenger, judged by a comparator model with k repeated
//! verdicts. The challenger must win strictly; ties keep the incumbent.

use num::rational::BigRational;
use num::{BigInt, Zero};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answers::{equivalent, majority_vote, ExtractedAnswer};
use crate::follower::{ReasoningChain, ReasoningGroup};
use crate::gateway::{ChatClient, GatewayError};

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("group has no chain with an extractable answer")]
    EmptyGroup,
    #[error("no group has a non-empty tally")]
    NoValidGroups,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Zero-shot prompt for comparing two reasoning chains.
pub const COMPARE_PROMPT_TEMPLATE: &str = r#"Question:
{question}

Presented below are two possible answers:

Answer 1:
{answer_1}

Answer 2:
{answer_2}

Examine the difference between two answers thoroughly. Which one do you consider to be the most accurate? Support your decision with a comprehensive explanation. Provide your preference by stating with "Preferred Answer Index:" and the best answer.
"#;

/// The incumbent always occupies the Answer 1 slot.
pub fn render_compare_prompt(question: &str, incumbent: &str, challenger: &str) -> String {
    assert!(!incumbent.is_empty() && !challenger.is_empty(), "chains must be non-empty");
    COMPARE_PROMPT_TEMPLATE
        .replace("{question}", question)
        .replace("{answer_1}", incumbent)
        .replace("{answer_2}", challenger)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preference {
    First,
    Second,
    Undecided,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparatorVerdict {
    pub preferred: Preference,
    pub raw: String,
}

/// Scans for the last "Preferred Answer Index" marker (case-insensitive,
/// optional colon), then the first 1 or 2 after it. No marker or digit
/// means undecided.
pub fn parse_preference(text: &str) -> ComparatorVerdict {
    let lowered = text.to_lowercase();
    let marker = "preferred answer index";
    let preferred = match lowered.rfind(marker) {
        None => Preference::Undecided,
        Some(pos) => {
            let tail = &lowered[pos + marker.len()..];
            tail.chars()
                .find(|c| *c == '1' || *c == '2')
                .map(|c| if c == '1' { Preference::First } else { Preference::Second })
                .unwrap_or(Preference::Undecided)
        }
    };
    ComparatorVerdict { preferred, raw: text.to_string() }
}

/// Uniformly picks a chain from those reaching any winner class of the
/// group tally (union over tied winners).
pub fn pick_representative(
    group: &ReasoningGroup,
    rng: &mut impl Rng,
) -> Result<ReasoningChain, SelectionError> {
    if group.tally.is_empty() {
        return Err(SelectionError::EmptyGroup);
    }
    let mut pool: Vec<usize> =
        group.tally.winner_classes().flat_map(|c| c.members.iter().copied()).collect();
    pool.sort_unstable();
    let pick = pool[rng.gen_range(0..pool.len())];
    Ok(group.chains[pick].clone())
}

/// A pairwise comparator. The model-backed judge renders the compare
/// prompt and parses the verdict; tests can plug in oracles directly.
pub trait Judge {
    fn compare(
        &self,
        question: &str,
        incumbent: &ReasoningChain,
        challenger: &ReasoningChain,
        repeat_index: u32,
    ) -> Result<ComparatorVerdict, SelectionError>;
}

/// Judge backed by a comparator model at selection temperature.
pub struct ModelJudge<'a> {
    pub client: &'a ChatClient,
    pub question_id: &'a str,
}

impl Judge for ModelJudge<'_> {
    fn compare(
        &self,
        question: &str,
        incumbent: &ReasoningChain,
        challenger: &ReasoningChain,
        repeat_index: u32,
    ) -> Result<ComparatorVerdict, SelectionError> {
        let prompt = render_compare_prompt(question, &incumbent.text, &challenger.text);
        let response = self.client.complete_prompt(self.question_id, &prompt, repeat_index)?;
        Ok(parse_preference(&response.text))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RepresentativeEntry {
    pub group_index: usize,
    pub chain: ReasoningChain,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Comparison {
    pub iteration: usize,
    pub incumbent_group: usize,
    pub challenger_group: usize,
    pub verdicts: Vec<ComparatorVerdict>,
    pub challenger_won: bool,
}

/// The tournament outcome with its full comparison log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FinalSelection {
    pub final_chain: ReasoningChain,
    pub final_answer: Option<ExtractedAnswer>,
    pub representatives: Vec<RepresentativeEntry>,
    pub comparisons: Vec<Comparison>,
}

/// Runs the sequential tournament over the groups' representatives.
///
/// Issues exactly (|representatives| - 1) * k comparator calls. The
/// challenger wins iff strictly more verdicts prefer Answer 2 than
/// Answer 1; undecided verdicts count for neither side.
pub fn tournament(
    question: &str,
    groups: &[ReasoningGroup],
    k: usize,
    judge: &dyn Judge,
    rng: &mut impl Rng,
) -> Result<FinalSelection, SelectionError> {
    assert!(k >= 1, "k must be at least 1");
    let mut representatives = Vec::new();
    for (group_index, group) in groups.iter().enumerate() {
        if group.tally.is_empty() {
            continue;
        }
        let chain = pick_representative(group, rng)?;
        representatives.push(RepresentativeEntry { group_index, chain });
    }
    if representatives.is_empty() {
        return Err(SelectionError::NoValidGroups);
    }

    let mut incumbent = representatives[0].clone();
    let mut comparisons = Vec::new();
    for (iteration, challenger) in representatives.iter().enumerate().skip(1) {
        let mut verdicts = Vec::with_capacity(k);
        for repeat in 0..k {
            verdicts.push(judge.compare(
                question,
                &incumbent.chain,
                &challenger.chain,
                repeat as u32,
            )?);
        }
        let prefer_first = verdicts.iter().filter(|v| v.preferred == Preference::First).count();
        let prefer_second = verdicts.iter().filter(|v| v.preferred == Preference::Second).count();
        let challenger_won = prefer_second > prefer_first;
        comparisons.push(Comparison {
            iteration,
            incumbent_group: incumbent.group_index,
            challenger_group: challenger.group_index,
            verdicts,
            challenger_won,
        });
        if challenger_won {
            incumbent = challenger.clone();
        }
    }

    Ok(FinalSelection {
        final_answer: incumbent.chain.answer.clone(),
        final_chain: incumbent.chain,
        representatives,
        comparisons,
    })
}

/// Voting over the group-majority answers, one ballot per group; a group
/// with t tied winners contributes 1/t weight to each. Ties for the top
/// weight yield None (scored incorrect).
pub fn majority_over_groups(groups: &[ReasoningGroup]) -> Option<ExtractedAnswer> {
    let mut classes: Vec<(ExtractedAnswer, BigRational)> = Vec::new();
    for group in groups {
        let winners: Vec<&ExtractedAnswer> =
            group.tally.winner_classes().map(|c| &c.representative).collect();
        if winners.is_empty() {
            continue;
        }
        let weight = BigRational::new(BigInt::from(1), BigInt::from(winners.len()));
        for answer in winners {
            match classes.iter_mut().find(|(rep, _)| equivalent(rep, answer)) {
                Some((_, w)) => *w += &weight,
                None => classes.push(((*answer).clone(), weight.clone())),
            }
        }
    }
    let max = classes.iter().map(|(_, w)| w.clone()).max()?;
    if max.is_zero() {
        return None;
    }
    let mut top = classes.iter().filter(|(_, w)| *w == max);
    let winner = top.next()?;
    if top.next().is_some() {
        return None; // tie
    }
    Some(winner.0.clone())
}

/// Plain majority voting over the union of all chains; unique winner or
/// None on a tie.
pub fn flat_majority<'a>(chains: impl IntoIterator<Item = &'a ReasoningChain>) -> Option<ExtractedAnswer> {
    let answers: Vec<Option<ExtractedAnswer>> =
        chains.into_iter().map(|c| c.answer.clone()).collect();
    majority_vote(&answers).unique_winner().cloned()
}
