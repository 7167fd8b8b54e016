//! The high-level leader policy: propose tactic hints for a question,
//! either by prompting a model for named techniques or by retrieving
//! similar solved problems from an embedding index.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answers::extract_boxed;
use crate::gateway::{ChatClient, Embedder, EmbeddingVector, GatewayError};

#[derive(Debug, Error)]
pub enum LeaderError {
    #[error("no tactic lines could be parsed from the model reply")]
    ParseEmpty,
    #[error("retrieval corpus is empty")]
    EmptyCorpus,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("index manifest mismatch: {0}")]
    ManifestMismatch(String),
}

/// A retrieved (problem, solution) pair used as a demonstration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exemplar {
    pub corpus_id: String,
    pub problem: String,
    pub solution: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HintKind {
    Technique { technique: String },
    Exemplar { exemplar: Exemplar },
}

/// One leader proposal, ranked within the proposed set (1-based).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hint {
    pub rank: usize,
    #[serde(flatten)]
    pub kind: HintKind,
}

impl Hint {
    pub fn technique(rank: usize, technique: impl Into<String>) -> Self {
        Self { rank, kind: HintKind::Technique { technique: technique.into() } }
    }

    pub fn technique_text(&self) -> Option<&str> {
        match &self.kind {
            HintKind::Technique { technique } => Some(technique),
            HintKind::Exemplar { .. } => None,
        }
    }
}

/// Few-shot prompt for proposing techniques and concepts.
pub const TACTIC_PROMPT_TEMPLATE: &str = r#"When given a mathematical problem, your task is to list high-level mathematical techniques or concepts that can potentially lead to its solution. Do not provide detailed explanations, only name the techniques. Each technique you list should have the potential to guide towards a solution on its own. For clarity, here are some examples:

Example 1:
Question:
Trapezoid $ABCD$ has sides $AB=92$, $BC=50$, $CD=19$, and $AD=70$, with $AB$ parallel to $CD$. A circle with center $P$ on $AB$ is drawn tangent to $BC$ and $AD$. Given that $AP=\frac mn$, where $m$ and $n$ are relatively prime positive integers, find $m+n$.

Response:
1: Angle Bisector Theorem
2: Power of a Point Theorem
3: Similar Triangles

Example 2:
Question:
Let $P$ be a point on the line $\begin{pmatrix} 3 \\ -1 \\ 2 \end{pmatrix} + t \begin{pmatrix} 2 \\ -2 \\ 1 \end{pmatrix}$ and let $Q$ be a point on the line $\begin{pmatrix} 0 \\ 0 \\ 4 \end{pmatrix} + s \begin{pmatrix} 1 \\ 2 \\ -1 \end{pmatrix}.$ Find the shortest possible distance $PQ.$

Response:
1: Vector Geometry and Line Equations
2: Parametric Equations for Lines in 3D
3: Distance formula in 3D space
4: Minimization with Derivatives

Example 3:
Question:
Twenty switches in an office computer network are to be connected so that each switch has a direct connection to exactly three other switches. How many connections will be necessary?

Response:
1: Handshaking Lemma in Graph Theory
2: Combinatorial counting principles

Example 4:
Question:
What is the sum of the $x$-values that satisfy the equation $5=\frac{x^3-2x^2-8x}{x+2}$?

Response:
1: Factorization Method
2: Rational Root Theorem
3: Vieta's Formula
4: Polynomial Long Division

Example 5:
Question:
{question}

Response:
"#;

/// Prompt used to derive reference hints from a question and its ground
/// truth solution, for hint-quality analysis.
pub const REFERENCE_HINT_PROMPT_TEMPLATE: &str = r#"Below is a mathematical problem together with its ground-truth solution. List {count} high-level mathematical techniques or concepts that the solution relies on or that could independently lead to it. Do not provide detailed explanations, only name the techniques, one per line, numbered "1:", "2:", and so on.

Question:
{question}

Ground-Truth Solution:
{solution}

Response:
"#;

pub fn render_tactic_proposal_prompt(question: &str) -> String {
    TACTIC_PROMPT_TEMPLATE.replace("{question}", question)
}

pub fn render_reference_hint_prompt(question: &str, solution: &str, count: usize) -> String {
    REFERENCE_HINT_PROMPT_TEMPLATE
        .replace("{count}", &count.to_string())
        .replace("{question}", question)
        .replace("{solution}", solution)
}

/// Parses numbered tactic lines: "k: text", "k. text", or "k) text".
/// Anything else is ignored; duplicates (case-insensitive) keep the first
/// occurrence.
pub fn parse_tactic_lines(reply: &str) -> Vec<String> {
    let pattern = regex::Regex::new(r"^\s*\d+\s*[:.)]\s*(.+?)\s*$").expect("tactic line pattern");
    let mut seen = HashSet::new();
    let mut tactics = Vec::new();
    for line in reply.lines() {
        if let Some(caps) = pattern.captures(line) {
            let tactic = caps[1].to_string();
            if seen.insert(tactic.to_lowercase()) {
                tactics.push(tactic);
            }
        }
    }
    tactics
}

/// Asks the model for up to `n` technique hints for `question`.
pub fn propose_tactics(
    question_id: &str,
    question: &str,
    n: usize,
    client: &ChatClient,
) -> Result<Vec<Hint>, LeaderError> {
    propose_tactics_at(question_id, question, n, client, 0)
}

/// Like [`propose_tactics`] but at an explicit sample index, so a caller
/// can retry an unparseable reply with a fresh sample.
pub fn propose_tactics_at(
    question_id: &str,
    question: &str,
    n: usize,
    client: &ChatClient,
    sample_index: u32,
) -> Result<Vec<Hint>, LeaderError> {
    assert!(n >= 1, "n must be at least 1");
    let prompt = render_tactic_proposal_prompt(question);
    let reply = client.complete_prompt(question_id, &prompt, sample_index)?;
    let tactics = parse_tactic_lines(&reply.text);
    if tactics.is_empty() {
        return Err(LeaderError::ParseEmpty);
    }
    Ok(tactics
        .into_iter()
        .take(n)
        .enumerate()
        .map(|(i, t)| Hint::technique(i + 1, t))
        .collect())
}

/// Derives `count` reference hints from the ground-truth solution.
pub fn generate_reference_hints(
    question_id: &str,
    question: &str,
    ground_truth_solution: &str,
    count: usize,
    client: &ChatClient,
) -> Result<Vec<Hint>, LeaderError> {
    assert!(count >= 1, "count must be at least 1");
    let prompt = render_reference_hint_prompt(question, ground_truth_solution, count);
    let reply = client.complete_prompt(question_id, &prompt, 0)?;
    let tactics = parse_tactic_lines(&reply.text);
    if tactics.is_empty() {
        return Err(LeaderError::ParseEmpty);
    }
    Ok(tactics
        .into_iter()
        .take(count)
        .enumerate()
        .map(|(i, t)| Hint::technique(i + 1, t))
        .collect())
}

/// Lowercases and collapses punctuation/whitespace; singularizes plural
/// words so "Vieta's Formulas" and "Vieta's Formula" compare equal.
fn normalize_hint(text: &str) -> String {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| if w.len() > 3 && w.ends_with('s') { &w[..w.len() - 1] } else { w })
        .collect::<Vec<_>>()
        .join(" ")
}

fn hint_matches(proposed: &str, reference: &str) -> bool {
    let p = normalize_hint(proposed);
    let r = normalize_hint(reference);
    if p.is_empty() || r.is_empty() {
        return false;
    }
    p == r || contains_words(&p, &r) || contains_words(&r, &p)
}

/// Whole-word containment of `needle`'s word sequence in `haystack`'s.
fn contains_words(haystack: &str, needle: &str) -> bool {
    let hay: Vec<&str> = haystack.split(' ').collect();
    let ndl: Vec<&str> = needle.split(' ').collect();
    if ndl.is_empty() || ndl.len() > hay.len() {
        return false;
    }
    hay.windows(ndl.len()).any(|w| w == ndl.as_slice())
}

/// Fraction of proposed technique hints matching at least one reference
/// hint under normalized equality or whole-word containment.
pub fn hint_quality(proposed: &[Hint], reference: &[Hint]) -> f64 {
    assert!(!proposed.is_empty() && !reference.is_empty(), "hint lists must be non-empty");
    let reference: Vec<&str> = reference.iter().filter_map(Hint::technique_text).collect();
    let matched = proposed
        .iter()
        .filter_map(Hint::technique_text)
        .filter(|p| reference.iter().any(|r| hint_matches(p, r)))
        .count();
    matched as f64 / proposed.len() as f64
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IndexEntry {
    pub corpus_id: String,
    pub problem: String,
    pub solution: String,
    pub vector: EmbeddingVector,
}

/// Embedding index over a corpus of solved problems. Problem text only is
/// embedded; the query is a bare problem, so representation stays symmetric.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetrievalIndex {
    pub entries: Vec<IndexEntry>,
    pub dim: usize,
    pub embedder_identity: String,
    /// Corpus entries whose solution had no extractable boxed answer.
    pub warnings: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexManifest {
    embedder_identity: String,
    dim: usize,
    entries: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexRow {
    corpus_id: String,
    vector: Vec<f64>,
}

pub fn build_retrieval_index(
    corpus: &[(String, String, String)],
    embedder: &dyn Embedder,
) -> Result<RetrievalIndex, LeaderError> {
    if corpus.is_empty() {
        return Err(LeaderError::EmptyCorpus);
    }
    let mut entries = Vec::with_capacity(corpus.len());
    let mut warnings = Vec::new();
    for (corpus_id, problem, solution) in corpus {
        if extract_boxed(solution).is_none() {
            warnings.push(format!("corpus entry {corpus_id}: no boxed answer in solution"));
        }
        let vector = embedder.embed(problem)?;
        if vector.dim() != embedder.dim() {
            return Err(GatewayError::DimensionMismatch {
                expected: embedder.dim(),
                got: vector.dim(),
            }
            .into());
        }
        entries.push(IndexEntry {
            corpus_id: corpus_id.clone(),
            problem: problem.clone(),
            solution: solution.clone(),
            vector,
        });
    }
    Ok(RetrievalIndex {
        entries,
        dim: embedder.dim(),
        embedder_identity: embedder.identity(),
        warnings,
    })
}

impl RetrievalIndex {
    pub fn insert(&mut self, entry: IndexEntry) -> Result<(), LeaderError> {
        if entry.vector.dim() != self.dim {
            return Err(GatewayError::DimensionMismatch {
                expected: self.dim,
                got: entry.vector.dim(),
            }
            .into());
        }
        self.entries.push(entry);
        Ok(())
    }

    /// Writes `manifest.json` plus `vectors.jsonl` of (corpus_id, vector)
    /// rows into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), LeaderError> {
        std::fs::create_dir_all(dir)?;
        let manifest = IndexManifest {
            embedder_identity: self.embedder_identity.clone(),
            dim: self.dim,
            entries: self.entries.len(),
        };
        std::fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest).expect("serialize manifest"),
        )?;
        let mut file = File::create(dir.join("vectors.jsonl"))?;
        for entry in &self.entries {
            let row = IndexRow {
                corpus_id: entry.corpus_id.clone(),
                vector: entry.vector.values.clone(),
            };
            writeln!(file, "{}", serde_json::to_string(&row).expect("serialize row"))?;
        }
        Ok(())
    }

    /// Rebuilds an index from persisted vectors, joining problem/solution
    /// text back in from the corpus by id.
    pub fn load(
        dir: &Path,
        corpus: &[(String, String, String)],
        expected_embedder: &str,
    ) -> Result<RetrievalIndex, LeaderError> {
        let manifest: IndexManifest =
            serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)
                .map_err(|e| LeaderError::ManifestMismatch(e.to_string()))?;
        if manifest.embedder_identity != expected_embedder {
            return Err(LeaderError::ManifestMismatch(format!(
                "index built with {}, expected {expected_embedder}",
                manifest.embedder_identity
            )));
        }
        let mut entries = Vec::new();
        let reader = BufReader::new(File::open(dir.join("vectors.jsonl"))?);
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: IndexRow = serde_json::from_str(&line)
                .map_err(|e| LeaderError::ManifestMismatch(format!("vector row: {e}")))?;
            let Some((_, problem, solution)) =
                corpus.iter().find(|(id, _, _)| *id == row.corpus_id)
            else {
                return Err(LeaderError::ManifestMismatch(format!(
                    "corpus id {} in index but not in corpus",
                    row.corpus_id
                )));
            };
            if row.vector.len() != manifest.dim {
                return Err(GatewayError::DimensionMismatch {
                    expected: manifest.dim,
                    got: row.vector.len(),
                }
                .into());
            }
            entries.push(IndexEntry {
                corpus_id: row.corpus_id,
                problem: problem.clone(),
                solution: solution.clone(),
                vector: EmbeddingVector { values: row.vector },
            });
        }
        Ok(RetrievalIndex {
            entries,
            dim: manifest.dim,
            embedder_identity: manifest.embedder_identity,
            warnings: Vec::new(),
        })
    }
}

/// Ranks index entries by cosine similarity to the question, descending;
/// ties break by ascending corpus_id. With self-exclusion on (the default),
/// entries whose problem text equals the question verbatim are dropped.
pub fn retrieve_exemplars(
    question: &str,
    n: usize,
    index: &RetrievalIndex,
    embedder: &dyn Embedder,
    self_exclusion: bool,
) -> Result<Vec<Hint>, LeaderError> {
    if index.entries.is_empty() {
        return Err(LeaderError::EmptyCorpus);
    }
    let query = embedder.embed(question)?;
    if query.dim() != index.dim {
        return Err(GatewayError::DimensionMismatch { expected: index.dim, got: query.dim() }.into());
    }
    let mut scored: Vec<(f64, &IndexEntry)> = index
        .entries
        .iter()
        .filter(|e| !(self_exclusion && e.problem == question))
        .map(|e| (query.cosine_similarity(&e.vector), e))
        .collect();
    scored.sort_by(|(sa, ea), (sb, eb)| {
        sb.partial_cmp(sa)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| ea.corpus_id.cmp(&eb.corpus_id))
    });
    Ok(scored
        .into_iter()
        .take(n)
        .enumerate()
        .map(|(i, (_, entry))| Hint {
            rank: i + 1,
            kind: HintKind::Exemplar {
                exemplar: Exemplar {
                    corpus_id: entry.corpus_id.clone(),
                    problem: entry.problem.clone(),
                    solution: entry.solution.clone(),
                },
            },
        })
        .collect())
}

/// Similarity scores in ranked order, for diagnostics and tests.
pub fn retrieval_similarities(
    question: &str,
    index: &RetrievalIndex,
    embedder: &dyn Embedder,
) -> Result<Vec<(String, f64)>, LeaderError> {
    let query = embedder.embed(question)?;
    let mut scored: Vec<(String, f64)> = index
        .entries
        .iter()
        .map(|e| (e.corpus_id.clone(), query.cosine_similarity(&e.vector)))
        .collect();
    scored.sort_by(|(ia, sa), (ib, sb)| {
        sb.partial_cmp(sa).unwrap_or(std::cmp::Ordering::Equal).then_with(|| ia.cmp(ib))
    });
    Ok(scored)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{ChatBackend, HashingEmbedder, ScriptedBackend, Stage};
    use std::sync::Arc;

    fn leader_client(backend: Arc<dyn ChatBackend>) -> ChatClient {
        ChatClient::new(backend, "test-model", 0.7, 1024, Stage::Leader)
    }

    fn corpus() -> Vec<(String, String, String)> {
        vec![
            ("a1".into(), "What is 2+2?".into(), "2+2 = \\boxed{4}".into()),
            ("a2".into(), "What is 3+3?".into(), "3+3 = \\boxed{6}".into()),
            ("a3".into(), "Count the primes below ten.".into(), "They are 2,3,5,7: \\boxed{4}".into()),
        ]
    }

    #[test]
    fn parses_numbered_lines_in_order() {
        let reply = "1: Angle Bisector Theorem\n2: Power of a Point Theorem\n3: Similar Triangles";
        assert_eq!(
            parse_tactic_lines(reply),
            vec!["Angle Bisector Theorem", "Power of a Point Theorem", "Similar Triangles"]
        );
    }

    #[test]
    fn accepts_dot_and_paren_numbering() {
        let reply = " 1. First\n2) Second\nnoise\n3 : Third";
        assert_eq!(parse_tactic_lines(reply), vec!["First", "Second", "Third"]);
    }

    #[test]
    fn dedups_case_insensitive() {
        let reply = "1: Vieta's Formula\n2: vieta's formula\n3: Induction";
        assert_eq!(parse_tactic_lines(reply), vec!["Vieta's Formula", "Induction"]);
    }

    #[test]
    fn propose_truncates_to_n() {
        let question = "Q";
        let prompt = render_tactic_proposal_prompt(question);
        let mut script = ScriptedBackend::new();
        let client = leader_client(Arc::new(ScriptedBackend::new()));
        let req = client.request(&prompt, 0);
        script.insert(&req, "1: A\n2: B\n3: C\n4: D\n5: E");
        let client = leader_client(Arc::new(script));
        let hints = propose_tactics("q", question, 4, &client).unwrap();
        assert_eq!(hints.len(), 4);
        assert_eq!(hints[0].technique_text(), Some("A"));
        assert_eq!(hints[3].rank, 4);
    }

    #[test]
    fn unparseable_reply_is_parse_empty() {
        let question = "Q";
        let prompt = render_tactic_proposal_prompt(question);
        let mut script = ScriptedBackend::new();
        let client = leader_client(Arc::new(ScriptedBackend::new()));
        script.insert(&client.request(&prompt, 0), "I cannot help.");
        let client = leader_client(Arc::new(script));
        assert!(matches!(propose_tactics("q", question, 4, &client), Err(LeaderError::ParseEmpty)));
    }

    #[test]
    fn reference_hints_single() {
        let prompt = render_reference_hint_prompt("Q", "S", 1);
        let mut script = ScriptedBackend::new();
        let client = leader_client(Arc::new(ScriptedBackend::new()));
        script.insert(&client.request(&prompt, 0), "1: Vieta's Formula");
        let client = leader_client(Arc::new(script));
        let hints = generate_reference_hints("q", "Q", "S", 1, &client).unwrap();
        assert_eq!(hints.len(), 1);
        assert_eq!(hints[0].technique_text(), Some("Vieta's Formula"));
    }

    #[test]
    fn hint_quality_plural_containment() {
        let proposed = vec![Hint::technique(1, "Vieta's Formulas")];
        let reference = vec![Hint::technique(1, "Vieta's Formula"), Hint::technique(2, "Induction")];
        assert_eq!(hint_quality(&proposed, &reference), 1.0);
    }

    #[test]
    fn hint_quality_identity_and_disjoint() {
        let a = vec![Hint::technique(1, "Modular Arithmetic"), Hint::technique(2, "Induction")];
        assert_eq!(hint_quality(&a, &a), 1.0);
        let b = vec![Hint::technique(1, "Stokes' Theorem")];
        assert_eq!(hint_quality(&b, &a), 0.0);
    }

    #[test]
    fn index_build_and_shape() {
        let embedder = HashingEmbedder::new(64);
        let index = build_retrieval_index(&corpus(), &embedder).unwrap();
        assert_eq!(index.entries.len(), 3);
        assert_eq!(index.dim, 64);
        assert!(index.warnings.is_empty());
    }

    #[test]
    fn empty_corpus_rejected() {
        let embedder = HashingEmbedder::new(64);
        assert!(matches!(build_retrieval_index(&[], &embedder), Err(LeaderError::EmptyCorpus)));
    }

    #[test]
    fn identical_query_rank_one_without_self_exclusion() {
        let embedder = HashingEmbedder::new(64);
        let index = build_retrieval_index(&corpus(), &embedder).unwrap();
        let hints = retrieve_exemplars("What is 2+2?", 2, &index, &embedder, false).unwrap();
        match &hints[0].kind {
            HintKind::Exemplar { exemplar } => assert_eq!(exemplar.corpus_id, "a1"),
            _ => panic!("expected exemplar"),
        }
    }

    #[test]
    fn self_exclusion_drops_identical_problem() {
        let embedder = HashingEmbedder::new(64);
        let index = build_retrieval_index(&corpus(), &embedder).unwrap();
        let hints = retrieve_exemplars("What is 2+2?", 3, &index, &embedder, true).unwrap();
        assert!(hints.iter().all(|h| match &h.kind {
            HintKind::Exemplar { exemplar } => exemplar.corpus_id != "a1",
            _ => false,
        }));
    }

    #[test]
    fn ties_break_by_corpus_id() {
        let embedder = HashingEmbedder::new(64);
        // identical problems embed identically, so similarity ties exactly
        let corpus = vec![
            ("z9".into(), "same text".into(), "\\boxed{1}".into()),
            ("a1".into(), "same text".into(), "\\boxed{1}".into()),
        ];
        let index = build_retrieval_index(&corpus, &embedder).unwrap();
        let sims = retrieval_similarities("same text", &index, &embedder).unwrap();
        assert_eq!(sims[0].0, "a1");
    }

    #[test]
    fn index_roundtrip_through_files() {
        let embedder = HashingEmbedder::new(32);
        let corpus = corpus();
        let index = build_retrieval_index(&corpus, &embedder).unwrap();
        let dir = tempfile::tempdir().unwrap();
        index.save(dir.path()).unwrap();
        let loaded = RetrievalIndex::load(dir.path(), &corpus, &embedder.identity()).unwrap();
        assert_eq!(loaded.entries.len(), index.entries.len());
        assert_eq!(loaded.entries[0].vector, index.entries[0].vector);
        assert!(RetrievalIndex::load(dir.path(), &corpus, "other-embedder").is_err());
    }
}
