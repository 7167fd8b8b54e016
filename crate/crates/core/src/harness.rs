//! Dataset ingestion, run orchestration, persistence, and scoring.
//!
//! Runs are resumable: every per-question result is appended to a record
//! file as soon as it completes, and the request cache means a resumed run
//! replays finished work without new model calls.

use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answers::{equivalent, extract_boxed, ExtractedAnswer, VoteTally};
use crate::follower::{sample_group, ReasoningChain, ReasoningGroup};
use crate::gateway::{ChatBackend, ChatClient, Embedder, Stage, UsageLedger};
use crate::leader::{self, Hint, LeaderError, RetrievalIndex};
use crate::metrics::{build_report, grouped_majority_recall, QuestionScore, ScoreReport};
use crate::rng::substream;
use crate::selection::{flat_majority, majority_over_groups, tournament, FinalSelection, ModelJudge};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("missing field {field} in record {context}")]
    MissingField { field: String, context: String },
    #[error("no question matches record id {0}")]
    IdMismatch(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Leader(#[from] LeaderError),
}

/// A problem with its ground-truth answer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub statement: String,
    pub category: String,
    pub level: String,
    pub truth: ExtractedAnswer,
    pub source_solution: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeaderMode {
    Tactics,
    Retrieval,
    Baseline,
}

impl std::str::FromStr for LeaderMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tactics" => Ok(LeaderMode::Tactics),
            "retrieval" => Ok(LeaderMode::Retrieval),
            "baseline" => Ok(LeaderMode::Baseline),
            other => Err(format!("unknown leader mode {other}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub temperature_sampling: f64,
    pub temperature_selection: f64,
    pub leader_mode: LeaderMode,
    pub leader_model: String,
    pub follower_model: String,
    pub comparator_model: String,
    pub run_seed: u64,
    pub max_output_tokens: u32,
    pub token_budget: Option<u64>,
    pub workers: usize,
    pub self_exclusion: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n: 4,
            m: 16,
            k: 1,
            temperature_sampling: 0.7,
            temperature_selection: 0.3,
            leader_mode: LeaderMode::Tactics,
            leader_model: "gpt-4-0613".into(),
            follower_model: "gpt-3.5-turbo-0613".into(),
            comparator_model: "gpt-4-0613".into(),
            run_seed: 0,
            max_output_tokens: 1024,
            token_budget: None,
            workers: 1,
            self_exclusion: true,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.n < 1 || self.m < 1 || self.k < 1 {
            return Err(HarnessError::InvalidConfig("n, m, k must all be at least 1".into()));
        }
        for t in [self.temperature_sampling, self.temperature_selection] {
            if !(0.0..=2.0).contains(&t) {
                return Err(HarnessError::InvalidConfig(format!("temperature {t} outside [0, 2]")));
            }
        }
        if self.workers == 0 {
            return Err(HarnessError::InvalidConfig("workers must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageUsage {
    pub calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// Token/call usage for one question, partitioned by stage. Cache-hit
/// status is deliberately excluded so resumed runs produce identical
/// records.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionUsage {
    pub leader: StageUsage,
    pub follower: StageUsage,
    pub tournament: StageUsage,
}

impl QuestionUsage {
    fn from_ledger(ledger: &UsageLedger, question_id: &str) -> Self {
        let mut usage = QuestionUsage::default();
        for entry in ledger.entries() {
            if entry.question_id != question_id {
                continue;
            }
            let slot = match entry.stage {
                Stage::Leader => &mut usage.leader,
                Stage::Follower => &mut usage.follower,
                Stage::Tournament => &mut usage.tournament,
            };
            slot.calls += 1;
            slot.prompt_tokens += entry.usage.prompt_tokens;
            slot.completion_tokens += entry.usage.completion_tokens;
        }
        usage
    }
}

/// Persisted per-question pipeline output; re-scoring a record reproduces
/// identical metrics without model calls.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub question_id: String,
    pub config: RunConfig,
    pub hints: Vec<Hint>,
    pub groups: Vec<ReasoningGroup>,
    pub selection: Option<FinalSelection>,
    pub flat_majority_answer: Option<ExtractedAnswer>,
    pub grouped_majority_answer: Option<ExtractedAnswer>,
    pub usage: QuestionUsage,
    pub degraded: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct IngestStats {
    pub parsed: usize,
    pub excluded_asymptote: usize,
    pub missing_field: usize,
    pub no_boxed_truth: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct MathRecord {
    #[serde(default)]
    id: Option<String>,
    problem: Option<String>,
    level: Option<String>,
    #[serde(rename = "type")]
    category: Option<String>,
    solution: Option<String>,
}

fn math_record_to_question(
    record: MathRecord,
    fallback_id: String,
    level_filter: Option<&str>,
    stats: &mut IngestStats,
) -> Option<Question> {
    let context = record.id.clone().unwrap_or_else(|| fallback_id.clone());
    let (Some(problem), Some(level), Some(category), Some(solution)) =
        (record.problem, record.level, record.category, record.solution)
    else {
        stats.missing_field += 1;
        stats.warnings.push(format!("{context}: missing field"));
        return None;
    };
    if let Some(filter) = level_filter {
        if level != filter {
            return None;
        }
    }
    if problem.contains("[asy]") || solution.contains("[asy]") {
        stats.excluded_asymptote += 1;
        return None;
    }
    let Some(truth) = extract_boxed(&solution) else {
        stats.no_boxed_truth += 1;
        stats.warnings.push(format!("{context}: no boxed answer in solution"));
        return None;
    };
    stats.parsed += 1;
    Some(Question {
        id: record.id.unwrap_or(fallback_id),
        statement: problem,
        category,
        level,
        truth,
        source_solution: solution,
    })
}

/// Ingests MATH-style records from a JSONL file or a directory tree of
/// JSON files. Records with Asymptote code, missing fields, or no boxed
/// truth are skipped and counted.
pub fn ingest_math(
    path: &Path,
    level_filter: Option<&str>,
) -> Result<(Vec<Question>, IngestStats), HarnessError> {
    let mut stats = IngestStats::default();
    let mut questions = Vec::new();
    if path.is_dir() {
        let mut files = Vec::new();
        collect_json_files(path, &mut files)?;
        files.sort();
        for file in files {
            let text = std::fs::read_to_string(&file)?;
            let record: MathRecord = serde_json::from_str(&text)
                .map_err(|e| HarnessError::InvalidRecord(format!("{}: {e}", file.display())))?;
            let fallback = file
                .strip_prefix(path)
                .unwrap_or(&file)
                .with_extension("")
                .to_string_lossy()
                .replace(std::path::MAIN_SEPARATOR, "/");
            if let Some(q) = math_record_to_question(record, fallback, level_filter, &mut stats) {
                questions.push(q);
            }
        }
    } else {
        let reader = BufReader::new(File::open(path)?);
        for (line_no, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: MathRecord = serde_json::from_str(&line)
                .map_err(|e| HarnessError::InvalidRecord(format!("line {}: {e}", line_no + 1)))?;
            let fallback = format!("math-{}", line_no + 1);
            if let Some(q) = math_record_to_question(record, fallback, level_filter, &mut stats) {
                questions.push(q);
            }
        }
    }
    Ok((questions, stats))
}

fn collect_json_files(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_json_files(&path, out)?;
        } else if path.extension().is_some_and(|e| e == "json") {
            out.push(path);
        }
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct Gsm8kRecord {
    #[serde(default)]
    id: Option<String>,
    question: Option<String>,
    answer: Option<String>,
}

/// Ingests GSM8K-style JSONL records; the truth is the text after the last
/// "#### " marker, normalized numerically (commas stripped).
pub fn ingest_gsm8k(path: &Path) -> Result<(Vec<Question>, IngestStats), HarnessError> {
    let mut stats = IngestStats::default();
    let mut questions = Vec::new();
    let reader = BufReader::new(File::open(path)?);
    for (line_no, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Gsm8kRecord = serde_json::from_str(&line)
            .map_err(|e| HarnessError::InvalidRecord(format!("line {}: {e}", line_no + 1)))?;
        let id = record.id.unwrap_or_else(|| format!("gsm8k-{}", line_no + 1));
        let (Some(question), Some(answer)) = (record.question, record.answer) else {
            stats.missing_field += 1;
            stats.warnings.push(format!("{id}: missing field"));
            continue;
        };
        let Some(marker) = answer.rfind("#### ") else {
            stats.no_boxed_truth += 1;
            stats.warnings.push(format!("{id}: no #### answer marker"));
            continue;
        };
        let truth_text = answer[marker + 5..].trim();
        stats.parsed += 1;
        questions.push(Question {
            id,
            statement: question,
            category: "gsm8k".into(),
            level: "gsm8k".into(),
            truth: ExtractedAnswer::new(truth_text),
            source_solution: answer.clone(),
        });
    }
    Ok((questions, stats))
}

/// Seeded uniform sample without replacement per category. A category with
/// fewer than `per_category` questions contributes all of them (warned).
pub fn sample_eval_subset(
    questions: &[Question],
    per_category: usize,
    seed: u64,
) -> (Vec<Question>, Vec<String>) {
    assert!(per_category >= 1, "per_category must be at least 1");
    let mut categories: Vec<&str> = Vec::new();
    for q in questions {
        if !categories.contains(&q.category.as_str()) {
            categories.push(&q.category);
        }
    }
    let mut subset = Vec::new();
    let mut warnings = Vec::new();
    for category in categories {
        let mut pool: Vec<&Question> =
            questions.iter().filter(|q| q.category == category).collect();
        if pool.len() < per_category {
            warnings.push(format!(
                "category {category}: only {} questions, requested {per_category}",
                pool.len()
            ));
        }
        let mut rng = substream(seed, category, "subset");
        pool.shuffle(&mut rng);
        pool.truncate(per_category);
        subset.extend(pool.into_iter().cloned());
    }
    (subset, warnings)
}

/// Everything the pipeline needs besides questions and config.
pub struct PipelineEnv {
    pub backend: Arc<dyn ChatBackend>,
    pub embedder: Option<Arc<dyn Embedder>>,
    pub index: Option<RetrievalIndex>,
    pub ledger: Arc<UsageLedger>,
}

impl PipelineEnv {
    fn client(&self, model: &str, temperature: f64, max_tokens: u32, stage: Stage) -> ChatClient {
        ChatClient::new(Arc::clone(&self.backend), model, temperature, max_tokens, stage)
            .with_ledger(Arc::clone(&self.ledger))
    }
}

fn leader_hints(
    question: &Question,
    config: &RunConfig,
    env: &PipelineEnv,
) -> Result<Vec<Hint>, String> {
    match config.leader_mode {
        LeaderMode::Baseline => Ok(Vec::new()),
        LeaderMode::Tactics => {
            let client = env.client(
                &config.leader_model,
                config.temperature_sampling,
                config.max_output_tokens,
                Stage::Leader,
            );
            match leader::propose_tactics(&question.id, &question.statement, config.n, &client) {
                Ok(hints) => Ok(hints),
                // one retry with a fresh sample, then fail the question
                Err(LeaderError::ParseEmpty) => leader::propose_tactics_at(
                    &question.id,
                    &question.statement,
                    config.n,
                    &client,
                    1,
                )
                .map_err(|e| e.to_string()),
                Err(e) => Err(e.to_string()),
            }
        }
        LeaderMode::Retrieval => {
            let index = env.index.as_ref().ok_or("retrieval mode requires an index")?;
            let embedder =
                env.embedder.as_ref().ok_or("retrieval mode requires an embedder")?;
            leader::retrieve_exemplars(
                &question.statement,
                config.n,
                index,
                embedder.as_ref(),
                config.self_exclusion,
            )
            .map_err(|e| e.to_string())
        }
    }
}

fn baseline_groups(
    question: &Question,
    config: &RunConfig,
    follower: &ChatClient,
) -> Vec<ReasoningGroup> {
    // sample the full n*m pool under the bare CoT prompt, then randomly
    // partition it into n groups with the seeded partition stream
    let pool_size = config.n * config.m;
    let big = sample_group(&question.id, &question.statement, None, pool_size, follower);
    let mut order: Vec<usize> = (0..big.chains.len()).collect();
    let mut rng = substream(config.run_seed, &question.id, "partition");
    order.shuffle(&mut rng);
    let mut groups = Vec::with_capacity(config.n);
    for part in 0..config.n {
        let chains: Vec<ReasoningChain> = order
            .iter()
            .skip(part * config.m)
            .take(config.m)
            .map(|&i| big.chains[i].clone())
            .collect();
        let mut group = ReasoningGroup::from_chains(None, chains);
        group.degraded = big.degraded;
        groups.push(group);
    }
    if let Some(first) = groups.first_mut() {
        first.errors = big.errors;
    }
    groups
}

fn process_question(question: &Question, config: &RunConfig, env: &PipelineEnv) -> RunRecord {
    let follower = env.client(
        &config.follower_model,
        config.temperature_sampling,
        config.max_output_tokens,
        Stage::Follower,
    );

    let mut record = RunRecord {
        question_id: question.id.clone(),
        config: config.clone(),
        hints: Vec::new(),
        groups: Vec::new(),
        selection: None,
        flat_majority_answer: None,
        grouped_majority_answer: None,
        usage: QuestionUsage::default(),
        degraded: false,
        error: None,
    };

    let hints = match leader_hints(question, config, env) {
        Ok(hints) => hints,
        Err(e) => {
            record.degraded = true;
            record.error = Some(format!("leader: {e}"));
            record.usage = QuestionUsage::from_ledger(&env.ledger, &question.id);
            return record;
        }
    };
    record.hints = hints;

    record.groups = if config.leader_mode == LeaderMode::Baseline {
        baseline_groups(question, config, &follower)
    } else {
        record
            .hints
            .iter()
            .map(|hint| {
                sample_group(&question.id, &question.statement, Some(hint), config.m, &follower)
            })
            .collect()
    };
    if record.groups.iter().any(|g| g.degraded) {
        record.degraded = true;
    }

    record.flat_majority_answer =
        flat_majority(record.groups.iter().flat_map(|g| g.chains.iter()));
    record.grouped_majority_answer = majority_over_groups(&record.groups);

    let comparator = env.client(
        &config.comparator_model,
        config.temperature_selection,
        config.max_output_tokens,
        Stage::Tournament,
    );
    let judge = ModelJudge { client: &comparator, question_id: &question.id };
    let mut rng = substream(config.run_seed, &question.id, "tournament");
    match tournament(&question.statement, &record.groups, config.k, &judge, &mut rng) {
        Ok(selection) => record.selection = Some(selection),
        Err(e) => {
            record.degraded = true;
            record.error = Some(format!("tournament: {e}"));
        }
    }

    record.usage = QuestionUsage::from_ledger(&env.ledger, &question.id);
    record
}

/// On-disk run state: a manifest with the config snapshot plus an
/// append-only record file, one self-contained JSON document per line.
pub struct RunStore {
    dir: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
struct RunManifest {
    config: RunConfig,
}

impl RunStore {
    pub fn create(dir: &Path, config: &RunConfig) -> Result<Self, HarnessError> {
        std::fs::create_dir_all(dir)?;
        let manifest = RunManifest { config: config.clone() };
        std::fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest).expect("serialize manifest"),
        )?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    pub fn open(dir: &Path) -> Result<Self, HarnessError> {
        if !dir.join("manifest.json").exists() {
            return Err(HarnessError::InvalidRecord(format!(
                "{} has no run manifest",
                dir.display()
            )));
        }
        Ok(Self { dir: dir.to_path_buf() })
    }

    pub fn config(&self) -> Result<RunConfig, HarnessError> {
        let manifest: RunManifest =
            serde_json::from_str(&std::fs::read_to_string(self.dir.join("manifest.json"))?)
                .map_err(|e| HarnessError::InvalidRecord(e.to_string()))?;
        Ok(manifest.config)
    }

    pub fn records_path(&self) -> PathBuf {
        self.dir.join("records.jsonl")
    }

    pub fn append(&self, record: &RunRecord) -> Result<(), HarnessError> {
        let mut file = OpenOptions::new().create(true).append(true).open(self.records_path())?;
        writeln!(file, "{}", serde_json::to_string(record).expect("serialize record"))?;
        Ok(())
    }

    pub fn load_records(&self) -> Result<Vec<RunRecord>, HarnessError> {
        let path = self.records_path();
        if !path.exists() {
            return Ok(Vec::new());
        }
        let reader = BufReader::new(File::open(path)?);
        let mut records = Vec::new();
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(
                serde_json::from_str(&line)
                    .map_err(|e| HarnessError::InvalidRecord(e.to_string()))?,
            );
        }
        Ok(records)
    }
}

/// Runs the full pipeline over the questions, persisting each record as it
/// completes. Already-persisted questions are skipped, so an interrupted
/// run resumes where it left off. Per-question failures are recorded as
/// degraded, never aborting the run.
pub fn run_pipeline(
    questions: &[Question],
    config: &RunConfig,
    env: &PipelineEnv,
    store: Option<&RunStore>,
) -> Result<Vec<RunRecord>, HarnessError> {
    config.validate()?;
    let mut records: Vec<RunRecord> = match store {
        Some(store) => store.load_records()?,
        None => Vec::new(),
    };
    let done: HashSet<String> = records.iter().map(|r| r.question_id.clone()).collect();
    let pending: Vec<&Question> =
        questions.iter().filter(|q| !done.contains(&q.id)).collect();

    for chunk in pending.chunks(config.workers.max(1)) {
        let chunk_records: Vec<RunRecord> = if config.workers > 1 {
            std::thread::scope(|scope| {
                let handles: Vec<_> = chunk
                    .iter()
                    .map(|q| scope.spawn(move || process_question(q, config, env)))
                    .collect();
                handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
            })
        } else {
            chunk.iter().map(|q| process_question(q, config, env)).collect()
        };
        for record in chunk_records {
            if let Some(store) = store {
                store.append(&record)?;
            }
            records.push(record);
        }
    }
    Ok(records)
}

/// Pure re-scoring of persisted records against ground truth. Deleting the
/// model backends entirely does not change the result.
pub fn score_run(
    records: &[RunRecord],
    questions: &[Question],
) -> Result<(Vec<QuestionScore>, ScoreReport), HarnessError> {
    let mut scores = Vec::with_capacity(records.len());
    for record in records {
        let question = questions
            .iter()
            .find(|q| q.id == record.question_id)
            .ok_or_else(|| HarnessError::IdMismatch(record.question_id.clone()))?;
        let tallies: Vec<VoteTally> = record.groups.iter().map(|g| g.tally.clone()).collect();
        let gmr = if tallies.is_empty() {
            0.0
        } else {
            grouped_majority_recall(&tallies, &question.truth)
        };
        let correct = |answer: &Option<ExtractedAnswer>| {
            answer.as_ref().is_some_and(|a| equivalent(a, &question.truth))
        };
        let tournament_correct = record
            .selection
            .as_ref()
            .map(|s| correct(&s.final_answer))
            .unwrap_or(false);
        // recompute the voting baselines from the groups rather than
        // trusting the persisted answers
        let flat = flat_majority(record.groups.iter().flat_map(|g| g.chains.iter()));
        let grouped = majority_over_groups(&record.groups);
        scores.push(QuestionScore {
            question_id: record.question_id.clone(),
            category: question.category.clone(),
            gmr,
            tournament_correct,
            flat_majority_correct: correct(&flat),
            grouped_majority_correct: correct(&grouped),
        });
    }
    if scores.is_empty() {
        return Err(HarnessError::InvalidConfig("no records to score".into()));
    }
    let report = build_report(&scores);
    Ok((scores, report))
}

/// Draws a uniform sample index, exposed for the partition property tests.
pub fn uniform_index(rng: &mut impl Rng, len: usize) -> usize {
    rng.gen_range(0..len)
}
