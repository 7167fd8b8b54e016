//! Operator-facing command line for the hierarchical reasoning harness.
//!
//! Exit codes: 0 on success, 1 on configuration or input errors, 2 when a
//! run finished but some questions degraded (partial results persisted).

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use strategos_core::gateway::{
    CachingBackend, ChatBackend, ChatClient, Embedder, HashingEmbedder, HttpBackend, Stage,
    UsageLedger,
};
use strategos_core::harness::{
    ingest_gsm8k, ingest_math, run_pipeline, sample_eval_subset, score_run, LeaderMode,
    PipelineEnv, Question, RunConfig, RunRecord, RunStore,
};
use strategos_core::leader::build_retrieval_index;
use strategos_core::metrics::{exploration_gain, ScoreReport, TacticMixture};
use strategos_core::tot::{tot_answer, tot_search, SearchConfig, SearchOutcome};

const DEFAULT_KEY_VAR: &str = "STRATEGOS_API_KEY";
const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";

#[derive(Parser)]
#[command(name = "strategos", version, about = "Hierarchical leader/follower math reasoning harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a dataset into the question file consumed by `run`.
    Ingest(IngestArgs),
    /// Execute the full pipeline over a question file.
    Run(RunArgs),
    /// Score a finished run against its question file.
    Score(ScoreArgs),
    /// Print the stored report of a scored run.
    Report(ReportArgs),
    /// Run the tree-search baseline over a question file.
    Tot(TotArgs),
    /// Evaluate exploration gain for a tactic mixture, optionally sweeping
    /// one tactic's success rate.
    Simulate(SimulateArgs),
    /// Summarize token usage of a persisted run.
    Usage(UsageArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// MATH-style input (JSONL file or directory of JSON files)
    #[arg(long, conflicts_with = "gsm8k")]
    math: Option<PathBuf>,
    /// GSM8K-style JSONL input
    #[arg(long)]
    gsm8k: Option<PathBuf>,
    /// Keep only records at this difficulty level (MATH only)
    #[arg(long)]
    level: Option<String>,
    /// Sample this many questions per category after parsing
    #[arg(long)]
    per_category: Option<usize>,
    /// Seed for the per-category sample
    #[arg(long, default_value_t = 0)]
    subset_seed: u64,
    /// Output question file (JSONL)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Hints (and reasoning groups) per question
    #[arg(long, default_value_t = 4)]
    n: usize,
    /// Sampled chains per group
    #[arg(long, default_value_t = 16)]
    m: usize,
    /// Comparator repeats per tournament iteration
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[arg(long, default_value_t = 0.7)]
    temperature_sampling: f64,
    #[arg(long, default_value_t = 0.3)]
    temperature_selection: f64,
    /// One of: tactics, retrieval, baseline
    #[arg(long, default_value = "tactics")]
    leader_mode: LeaderMode,
    #[arg(long, default_value = "gpt-4-0613")]
    leader_model: String,
    #[arg(long, default_value = "gpt-3.5-turbo-0613")]
    follower_model: String,
    #[arg(long, default_value = "gpt-4-0613")]
    comparator_model: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1024)]
    max_output_tokens: u32,
    /// Abort further model calls once this many total tokens are used
    #[arg(long)]
    token_budget: Option<u64>,
    /// Concurrent question workers
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Allow a retrieved exemplar identical to the query question
    #[arg(long)]
    no_self_exclusion: bool,
}

impl ConfigArgs {
    fn to_config(&self) -> RunConfig {
        RunConfig {
            n: self.n,
            m: self.m,
            k: self.k,
            temperature_sampling: self.temperature_sampling,
            temperature_selection: self.temperature_selection,
            leader_mode: self.leader_mode,
            leader_model: self.leader_model.clone(),
            follower_model: self.follower_model.clone(),
            comparator_model: self.comparator_model.clone(),
            run_seed: self.seed,
            max_output_tokens: self.max_output_tokens,
            token_budget: self.token_budget,
            workers: self.workers,
            self_exclusion: !self.no_self_exclusion,
        }
    }
}

#[derive(Args, Clone)]
struct BackendArgs {
    /// Chat-completions endpoint base URL
    #[arg(long, default_value = DEFAULT_BASE_URL)]
    base_url: String,
    /// Environment variable holding the API key
    #[arg(long, default_value = DEFAULT_KEY_VAR)]
    key_var: String,
}

#[derive(Args)]
struct RunArgs {
    /// Question file produced by `ingest`
    #[arg(long)]
    questions: PathBuf,
    /// Run directory (manifest, records, request cache)
    #[arg(long)]
    out_dir: PathBuf,
    /// Exemplar corpus question file (retrieval mode)
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Hashing-embedder dimensionality (retrieval mode)
    #[arg(long, default_value_t = 512)]
    embed_dim: usize,
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    run_dir: PathBuf,
    #[arg(long)]
    questions: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    run_dir: PathBuf,
}

#[derive(Args)]
struct TotArgs {
    #[arg(long)]
    questions: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 8)]
    breadth: usize,
    #[arg(long, default_value_t = 5)]
    beam: usize,
    #[arg(long, default_value_t = 16)]
    max_depth: usize,
    #[arg(long, default_value = "gpt-3.5-turbo-0613")]
    model: String,
    #[arg(long, default_value_t = 0.7)]
    temperature: f64,
    #[arg(long, default_value_t = 1024)]
    max_output_tokens: u32,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON file with hint_sets, success, and marginal tables
    #[arg(long)]
    mixture: PathBuf,
    /// Sweep this tactic's success rate instead of a single evaluation
    #[arg(long)]
    sweep_tactic: Option<String>,
    #[arg(long, default_value_t = 0.0)]
    from: f64,
    #[arg(long, default_value_t = 1.0)]
    to: f64,
    #[arg(long, default_value_t = 11)]
    steps: usize,
}

#[derive(Args)]
struct UsageArgs {
    #[arg(long)]
    run_dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest(args) => cmd_ingest(args),
        Command::Run(args) => cmd_run(args),
        Command::Score(args) => cmd_score(args),
        Command::Report(args) => cmd_report(args),
        Command::Tot(args) => cmd_tot(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Usage(args) => cmd_usage(args),
    };
    match result {
        Ok(code) => code,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
    }
}

fn load_questions(path: &Path) -> Result<Vec<Question>, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("reading {}: {e}", path.display()))?;
    let mut questions = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        questions.push(
            serde_json::from_str(line)
                .map_err(|e| format!("{} line {}: {e}", path.display(), i + 1))?,
        );
    }
    if questions.is_empty() {
        return Err(format!("{} holds no questions", path.display()));
    }
    Ok(questions)
}

fn write_jsonl<T: serde::Serialize>(path: &Path, items: &[T]) -> Result<(), String> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("serialize item"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| format!("writing {}: {e}", path.display()))
}

fn cmd_ingest(args: IngestArgs) -> Result<ExitCode, String> {
    let (mut questions, stats) = match (&args.math, &args.gsm8k) {
        (Some(path), None) => {
            ingest_math(path, args.level.as_deref()).map_err(|e| e.to_string())?
        }
        (None, Some(path)) => {
            if args.level.is_some() {
                return Err("--level applies only to --math input".into());
            }
            ingest_gsm8k(path).map_err(|e| e.to_string())?
        }
        _ => return Err("pass exactly one of --math or --gsm8k".into()),
    };
    for warning in &stats.warnings {
        eprintln!("warning: {warning}");
    }
    if let Some(per_category) = args.per_category {
        if per_category == 0 {
            return Err("--per-category must be at least 1".into());
        }
        let (subset, warnings) = sample_eval_subset(&questions, per_category, args.subset_seed);
        for warning in warnings {
            eprintln!("warning: {warning}");
        }
        questions = subset;
    }
    if questions.is_empty() {
        return Err("no questions survived ingestion".into());
    }
    write_jsonl(&args.out, &questions)?;
    println!(
        "wrote {} questions to {} (parsed {}, asymptote-excluded {}, missing-field {}, no-truth {})",
        questions.len(),
        args.out.display(),
        stats.parsed,
        stats.excluded_asymptote,
        stats.missing_field,
        stats.no_boxed_truth,
    );
    Ok(ExitCode::SUCCESS)
}

fn make_backend(args: &BackendArgs, cache_file: &Path) -> Result<Arc<dyn ChatBackend>, String> {
    let base_url =
        std::env::var("STRATEGOS_BASE_URL").unwrap_or_else(|_| args.base_url.clone());
    let http = HttpBackend::from_env(base_url, &args.key_var).map_err(|e| e.to_string())?;
    let caching =
        CachingBackend::with_file(Arc::new(http), cache_file).map_err(|e| e.to_string())?;
    Ok(Arc::new(caching))
}

fn cmd_run(args: RunArgs) -> Result<ExitCode, String> {
    let config = args.config.to_config();
    config.validate().map_err(|e| e.to_string())?;
    let questions = load_questions(&args.questions)?;

    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| format!("creating {}: {e}", args.out_dir.display()))?;
    let store = if args.out_dir.join("manifest.json").exists() {
        let store = RunStore::open(&args.out_dir).map_err(|e| e.to_string())?;
        let stored = store.config().map_err(|e| e.to_string())?;
        if stored != config {
            return Err(format!(
                "{} was created with a different configuration; use a fresh --out-dir",
                args.out_dir.display()
            ));
        }
        store
    } else {
        RunStore::create(&args.out_dir, &config).map_err(|e| e.to_string())?
    };

    let backend = make_backend(&args.backend, &args.out_dir.join("cache.jsonl"))?;
    let embedder: Arc<dyn Embedder> = Arc::new(HashingEmbedder::new(args.embed_dim));
    let index = match (config.leader_mode, &args.corpus) {
        (LeaderMode::Retrieval, Some(corpus_path)) => {
            let corpus = load_questions(corpus_path)?
                .into_iter()
                .map(|q| (q.id, q.statement, q.source_solution))
                .collect::<Vec<_>>();
            let index =
                build_retrieval_index(&corpus, embedder.as_ref()).map_err(|e| e.to_string())?;
            for warning in &index.warnings {
                eprintln!("warning: {warning}");
            }
            Some(index)
        }
        (LeaderMode::Retrieval, None) => {
            return Err("retrieval mode requires --corpus".into());
        }
        _ => None,
    };
    let ledger = match config.token_budget {
        Some(ceiling) => Arc::new(UsageLedger::with_ceiling(ceiling)),
        None => Arc::new(UsageLedger::new()),
    };
    let env = PipelineEnv { backend, embedder: Some(embedder), index, ledger };

    let records =
        run_pipeline(&questions, &config, &env, Some(&store)).map_err(|e| e.to_string())?;
    let degraded: Vec<&RunRecord> = records.iter().filter(|r| r.degraded).collect();
    for record in &degraded {
        eprintln!(
            "warning: question {} degraded{}",
            record.question_id,
            record.error.as_deref().map(|e| format!(": {e}")).unwrap_or_default()
        );
    }
    println!(
        "{} records in {} ({} degraded)",
        records.len(),
        args.out_dir.display(),
        degraded.len()
    );
    Ok(if degraded.is_empty() { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn cmd_score(args: ScoreArgs) -> Result<ExitCode, String> {
    let store = RunStore::open(&args.run_dir).map_err(|e| e.to_string())?;
    let records = store.load_records().map_err(|e| e.to_string())?;
    let questions = load_questions(&args.questions)?;
    let (scores, report) = score_run(&records, &questions).map_err(|e| e.to_string())?;
    write_jsonl(&args.run_dir.join("scores.jsonl"), &scores)?;
    std::fs::write(
        args.run_dir.join("report.json"),
        serde_json::to_string_pretty(&report).expect("serialize report"),
    )
    .map_err(|e| e.to_string())?;
    print!("{}", report.render_text());
    let degraded = records.iter().filter(|r| r.degraded).count();
    Ok(if degraded == 0 { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn cmd_report(args: ReportArgs) -> Result<ExitCode, String> {
    let path = args.run_dir.join("report.json");
    let text = std::fs::read_to_string(&path)
        .map_err(|e| format!("reading {} (run `score` first): {e}", path.display()))?;
    let report: ScoreReport = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    print!("{}", report.render_text());
    Ok(ExitCode::SUCCESS)
}

#[derive(serde::Serialize)]
struct TotRecord {
    question_id: String,
    answer: Option<String>,
    correct: bool,
    outcome: SearchOutcome,
    error: Option<String>,
}

fn cmd_tot(args: TotArgs) -> Result<ExitCode, String> {
    let config = SearchConfig { breadth: args.breadth, beam: args.beam, max_depth: args.max_depth };
    config.validate()?;
    let questions = load_questions(&args.questions)?;
    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| format!("creating {}: {e}", args.out_dir.display()))?;
    let backend = make_backend(&args.backend, &args.out_dir.join("cache.jsonl"))?;
    let client = ChatClient::new(
        backend,
        &args.model,
        args.temperature,
        args.max_output_tokens,
        Stage::Follower,
    );

    let mut records = Vec::new();
    let mut correct = 0usize;
    let mut failures = 0usize;
    for question in &questions {
        match tot_search(&question.id, &question.statement, &config, &client) {
            Ok(outcome) => {
                let answer = tot_answer(&outcome.terminals);
                let is_correct = answer
                    .as_ref()
                    .is_some_and(|a| strategos_core::answers::equivalent(a, &question.truth));
                correct += is_correct as usize;
                records.push(TotRecord {
                    question_id: question.id.clone(),
                    answer: answer.map(|a| a.canonical),
                    correct: is_correct,
                    outcome,
                    error: None,
                });
            }
            Err(e) => {
                failures += 1;
                eprintln!("warning: question {} failed: {e}", question.id);
                records.push(TotRecord {
                    question_id: question.id.clone(),
                    answer: None,
                    correct: false,
                    outcome: SearchOutcome::default(),
                    error: Some(e.to_string()),
                });
            }
        }
    }
    write_jsonl(&args.out_dir.join("tot_records.jsonl"), &records)?;
    println!(
        "{} / {} correct ({} failed) -> {}",
        correct,
        questions.len(),
        failures,
        args.out_dir.display()
    );
    Ok(if failures == 0 { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn cmd_simulate(args: SimulateArgs) -> Result<ExitCode, String> {
    let text = std::fs::read_to_string(&args.mixture)
        .map_err(|e| format!("reading {}: {e}", args.mixture.display()))?;
    let mut mixture: TacticMixture = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    mixture.validate()?;
    match args.sweep_tactic {
        None => {
            let (p_marginal, p_hierarchical) = exploration_gain(&mixture);
            println!("p_marginal      {p_marginal:.6}");
            println!("p_hierarchical  {p_hierarchical:.6}");
            println!("gain            {:.6}", p_hierarchical - p_marginal);
        }
        Some(tactic) => {
            if !mixture.success.contains_key(&tactic) {
                return Err(format!("tactic {tactic} not in the mixture's success table"));
            }
            if args.steps < 2 {
                return Err("--steps must be at least 2".into());
            }
            println!("{:>10}  {:>10}  {:>14}  {:>10}", "success", "marginal", "hierarchical", "gain");
            for step in 0..args.steps {
                let value = args.from
                    + (args.to - args.from) * step as f64 / (args.steps - 1) as f64;
                mixture.success.insert(tactic.clone(), value);
                let (p_marginal, p_hierarchical) = exploration_gain(&mixture);
                println!(
                    "{value:>10.4}  {p_marginal:>10.4}  {p_hierarchical:>14.4}  {:>10.4}",
                    p_hierarchical - p_marginal
                );
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_usage(args: UsageArgs) -> Result<ExitCode, String> {
    let store = RunStore::open(&args.run_dir).map_err(|e| e.to_string())?;
    let records = store.load_records().map_err(|e| e.to_string())?;
    if records.is_empty() {
        return Err("run holds no records".into());
    }
    let mut totals = [
        (Stage::Leader, 0u64, 0u64, 0u64),
        (Stage::Follower, 0u64, 0u64, 0u64),
        (Stage::Tournament, 0u64, 0u64, 0u64),
    ];
    for record in &records {
        let stage_usage =
            [record.usage.leader, record.usage.follower, record.usage.tournament];
        for (slot, usage) in totals.iter_mut().zip(stage_usage) {
            slot.1 += usage.calls;
            slot.2 += usage.prompt_tokens;
            slot.3 += usage.completion_tokens;
        }
    }
    println!("{:<12}  {:>8}  {:>14}  {:>18}", "stage", "calls", "prompt tokens", "completion tokens");
    let mut grand = (0u64, 0u64, 0u64);
    for (stage, calls, prompt, completion) in totals {
        println!("{:<12}  {calls:>8}  {prompt:>14}  {completion:>18}", stage.name());
        grand.0 += calls;
        grand.1 += prompt;
        grand.2 += completion;
    }
    println!("{:<12}  {:>8}  {:>14}  {:>18}", "total", grand.0, grand.1, grand.2);
    println!(
        "questions {}  avg prompt/question {:.1}  avg completion/question {:.1}",
        records.len(),
        grand.1 as f64 / records.len() as f64,
        grand.2 as f64 / records.len() as f64,
    );
    Ok(ExitCode::SUCCESS)
}
