//! Metrics against brute-force oracles on random small corpora.

mod common;

use c2f_core::metrics::{bleu, cider, rouge_l, uniqueness_stats, without_a, CiderConfig, EvalPair};
use common::{oracle_bleu, oracle_cider, oracle_rouge, random_corpus};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-9;

type Sent = Vec<String>;

#[test]
fn random_cases_match_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let cfg = CiderConfig::default();
    for case in 0..200 {
        let pairs = random_corpus(&mut rng);
        let b = bleu(&pairs, 4).unwrap();
        for (x, y) in b.iter().zip(oracle_bleu(&pairs, 4)) {
            assert!((x - y).abs() <= TOL, "case {case}: BLEU {x} vs {y}");
        }
        let r = rouge_l(&pairs).unwrap();
        assert!((r - oracle_rouge(&pairs)).abs() <= TOL, "case {case}: ROUGE-L");
        let c = cider(&pairs, &cfg).unwrap();
        let o = oracle_cider(&pairs);
        assert!((c - o).abs() <= TOL, "case {case}: CIDEr {c} vs {o}");
    }
}

#[test]
fn invariances() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let cfg = CiderConfig::default();
    for _ in 0..50 {
        let pairs = random_corpus(&mut rng);
        let scores = |p: &[EvalPair]| {
            let mut v = bleu(p, 4).unwrap();
            v.push(rouge_l(p).unwrap());
            v.push(cider(p, &cfg).unwrap());
            v
        };
        let base = scores(&pairs);
        let mut shuffled = pairs.clone();
        shuffled.shuffle(&mut rng);
        let rename = |s: &Sent| s.iter().map(|w| format!("x{w}")).collect::<Sent>();
        let renamed: Vec<EvalPair> = pairs
            .iter()
            .map(|p| EvalPair::new(rename(&p.candidate), p.references.iter().map(rename).collect()).unwrap())
            .collect();
        for other in [scores(&shuffled), scores(&renamed)] {
            for (x, y) in base.iter().zip(&other) {
                assert!((x - y).abs() <= 1e-12);
            }
        }
        assert_eq!(without_a(&without_a(&pairs)), without_a(&pairs));
        assert!(base[..5].iter().all(|s| (0.0..=1.0).contains(s)) && base[5] >= 0.0);
    }
}

#[test]
fn perfect_candidates() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let mut pairs = random_corpus(&mut rng);
        for p in &mut pairs {
            let k = rng.random_range(0..p.references.len());
            p.candidate = p.references[k].clone();
            // Keep the brevity penalty at 1.
            let len = p.candidate.len();
            p.references.retain(|r| r.len() == len);
        }
        let long = pairs.iter().any(|p| p.candidate.len() >= 4);
        let b = bleu(&pairs, 4).unwrap();
        assert!((b[0] - 1.0).abs() < 1e-12);
        if long {
            assert!((b[3] - 1.0).abs() < 1e-12);
        }
        assert!((rouge_l(&pairs).unwrap() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn uniqueness_hand_enumeration() {
    let split = |s: &str| s.split(' ').map(str::to_owned).collect::<Sent>();
    let generated: Vec<Sent> = [
        "a dog on a mat",
        "a cat",
        "a dog on a mat",
        "a red cat",
        "a cat",
        "a dog",
        "a mat",
        "a dog on a mat",
        "a red dog",
        "a cat on a mat",
    ]
    .iter()
    .map(|s| split(s))
    .collect();
    let training: Vec<Sent> = ["a cat", "a dog on a mat", "a red bird", "a mat", "a cat on a red mat"]
        .iter()
        .map(|s| split(s))
        .collect();
    // Distinct: "a dog on a mat", "a cat", "a red cat", "a dog", "a mat", "a red dog", "a cat on a mat" = 7.
    // Seen: 3 × "a dog on a mat", 2 × "a cat", "a mat" = 6.
    let u = uniqueness_stats(&generated, Some(&training)).unwrap();
    assert!((u.unique_percent - 70.0).abs() < 1e-12);
    assert!((u.seen_percent.unwrap() - 60.0).abs() < 1e-12);
}
