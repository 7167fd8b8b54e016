use criterion::{black_box, criterion_group, criterion_main, Criterion};

use strategos_core::answers::{majority_vote, normalize, ExtractedAnswer};
use strategos_core::follower::{ReasoningChain, ReasoningGroup};
use strategos_core::gateway::{Embedder, HashingEmbedder};
use strategos_core::metrics::grouped_majority_recall;
use strategos_core::rng::substream;
use strategos_core::selection::{
    tournament, ComparatorVerdict, Judge, Preference, SelectionError,
};

fn bench_normalize(c: &mut Criterion) {
    let forms = [
        " $\\left(\\dfrac{7}{3}\\right)$. ",
        "\\textbf{42}",
        "\\text{the answer is } 7",
        "2x + \\frac{1}{2}",
    ];
    c.bench_function("normalize_latex_forms", |b| {
        b.iter(|| {
            for form in &forms {
                black_box(normalize(black_box(form)));
            }
        })
    });
}

fn bench_majority_vote(c: &mut Criterion) {
    let answers: Vec<Option<ExtractedAnswer>> = (0..64)
        .map(|i| Some(ExtractedAnswer::new(format!("\\frac{{{}}}{{3}}", i % 5))))
        .collect();
    c.bench_function("majority_vote_64_chains", |b| {
        b.iter(|| black_box(majority_vote(black_box(&answers))))
    });
}

fn groups(n: usize, m: usize) -> Vec<ReasoningGroup> {
    (0..n)
        .map(|g| {
            let chains = (0..m)
                .map(|i| {
                    ReasoningChain::from_text(
                        format!("answer $\\boxed{{{}}}$", (g + i) % 4),
                        g,
                        i,
                    )
                })
                .collect();
            ReasoningGroup::from_chains(None, chains)
        })
        .collect()
}

fn bench_recall(c: &mut Criterion) {
    let tallies: Vec<_> = groups(4, 16).into_iter().map(|g| g.tally).collect();
    let truth = ExtractedAnswer::new("2");
    c.bench_function("grouped_majority_recall_4x16", |b| {
        b.iter(|| black_box(grouped_majority_recall(black_box(&tallies), black_box(&truth))))
    });
}

struct FirstJudge;

impl Judge for FirstJudge {
    fn compare(
        &self,
        _q: &str,
        _i: &ReasoningChain,
        _c: &ReasoningChain,
        _r: u32,
    ) -> Result<ComparatorVerdict, SelectionError> {
        Ok(ComparatorVerdict { preferred: Preference::First, raw: String::new() })
    }
}

fn bench_tournament(c: &mut Criterion) {
    let groups = groups(4, 16);
    c.bench_function("tournament_4_groups", |b| {
        b.iter(|| {
            let mut rng = substream(1, "bench", "tournament");
            black_box(tournament("Q", black_box(&groups), 1, &FirstJudge, &mut rng).unwrap())
        })
    });
}

fn bench_embedder(c: &mut Criterion) {
    let embedder = HashingEmbedder::new(512);
    let text = "Trapezoid $ABCD$ has sides $AB=92$, $BC=50$, $CD=19$, and $AD=70$, \
                with $AB$ parallel to $CD$. Find $m+n$.";
    c.bench_function("hashing_embedder_512", |b| {
        b.iter(|| black_box(embedder.embed(black_box(text)).unwrap()))
    });
}

criterion_group!(
    benches,
    bench_normalize,
    bench_majority_vote,
    bench_recall,
    bench_tournament,
    bench_embedder
);
criterion_main!(benches);
