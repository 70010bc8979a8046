use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use ahd_core::kernels::KernelParams;
use ahd_core::kernelscript::{interpret, mutate, parse, seeds, EvalBudget, KernelProgram, MutationPolicy};
use ahd_core::scoring::{EvalProtocol, Evaluator};
use ahd_core::phy::{Link, LinkConfig};
use ahd_core::seed::{derive_seed, rng};
use ahd_core::tanner::{build_code, CodeSpec};
use rand::Rng;

fn seed_pool() -> Vec<KernelProgram> {
    let p = KernelParams::default();
    [seeds::boxplus(&p), seeds::boxplus_phi(&p), seeds::min_sum(), seeds::offset_min_sum(3.0), seeds::discovered(&p)]
        .iter()
        .map(|s| parse(s).unwrap())
        .collect()
}

/// Walks mutation chains from every seed.
fn corpus(n: usize) -> Vec<KernelProgram> {
    let pool = seed_pool();
    let policy = MutationPolicy::default();
    let mut out = pool.clone();
    let mut i = 0u64;
    while out.len() < n {
        let parent = out[(derive_seed(1, i) % out.len() as u64) as usize].clone();
        out.push(mutate(&parent, &pool, derive_seed(2, i), &policy));
        i += 1;
    }
    out
}

#[test]
fn hash_equality_matches_ast_equality() {
    let progs = corpus(100);
    for a in &progs {
        for b in &progs {
            assert_eq!(a.content_hash() == b.content_hash(), a.ast() == b.ast(), "{}\n---\n{}", a.source(), b.source());
        }
    }
}

#[test]
fn reformatting_keeps_the_hash() {
    for p in corpus(100) {
        let spaced: String = p
            .source()
            .lines()
            .map(|l| format!("  {}  ", l.replace(',', " , ").replace('(', " ( ")))
            .collect::<Vec<_>>()
            .join("\n\n");
        let q = parse(&spaced).unwrap();
        assert_eq!(q.content_hash(), p.content_hash());
        assert_eq!(parse(p.source()).unwrap().source(), p.source());
    }
}

fn random_rows(seed: u64) -> (Vec<f64>, Vec<usize>) {
    let mut r = rng(seed);
    let mut input = Vec::new();
    let mut offsets = vec![0];
    for _ in 0..8 {
        let d = r.random_range(2..=10);
        for _ in 0..d {
            input.push(r.random_range(-20.0..20.0));
        }
        offsets.push(input.len());
    }
    (input, offsets)
}

#[test]
fn mutated_and_corrupted_programs_never_panic() {
    let pool = seed_pool();
    let policy = MutationPolicy::default();
    let budget = EvalBudget { max_scalar_ops: 200_000, wall_clock_ms: 1000 };
    let mut r = rng(11);
    let mut outcomes = [0usize; 3];
    for i in 0..1000u64 {
        let parent = &pool[i as usize % pool.len()];
        let child = mutate(parent, &pool, i, &policy);
        let mut text = child.source().to_string().into_bytes();
        if i % 3 == 0 && !text.is_empty() {
            let at = r.random_range(0..text.len());
            text[at] = b"()+-*/,=xL0.e\n"[r.random_range(0..14)];
        }
        let text = String::from_utf8_lossy(&text).into_owned();
        let (input, offsets) = random_rows(i);
        let res = catch_unwind(AssertUnwindSafe(|| match parse(&text) {
            Ok(p) => match interpret(&p, &input, &offsets, &budget) {
                Ok(_) => 0,
                Err(_) => 1,
            },
            Err(_) => 2,
        }));
        outcomes[res.unwrap_or_else(|_| panic!("panic on\n{text}"))] += 1;
    }
    assert!(outcomes[0] > 0 && outcomes[2] > 0, "{outcomes:?}");
}

fn tiny_evaluator() -> Evaluator {
    let link = Link::new(Arc::new(build_code(CodeSpec::default_rate_half(32).unwrap()).unwrap()), LinkConfig::default());
    Evaluator::new(link, EvalProtocol { n_tbs: 10, ..Default::default() }).unwrap()
}

#[test]
fn offset_literal_moves_the_score() {
    let ev = tiny_evaluator();
    let heavy = ev.score_source(&seeds::offset_min_sum(3.0));
    let light = ev.score_source(&seeds::offset_min_sum(0.5));
    assert!(!heavy.is_catastrophic() && !light.is_catastrophic());
    assert!(light.score > heavy.score, "beta 0.5: {}, beta 3.0: {}", light.score, heavy.score);
    // Same program text gives the same record.
    assert_eq!(ev.score_source(&seeds::offset_min_sum(3.0)), heavy);
}

#[test]
fn garbage_source_scores_catastrophic() {
    let ev = tiny_evaluator();
    for src in ["the kernel returns L", "return", "x = 1 / 0\nreturn x", "return nope"] {
        assert!(ev.score_source(src).is_catastrophic(), "{src}");
    }
}
