//! Brute-force oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use std::cmp::Ordering;

use c2f_core::corpus::{BOS, EOS};
use c2f_core::decode::{score_adjust, FnModel, StepModel};
use c2f_core::metrics::EvalPair;
use c2f_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const WORD_POOL: [&str; 6] = ["a", "dog", "cat", "on", "red", "mat"];

pub fn random_sent(rng: &mut ChaCha8Rng, min: usize, max: usize) -> Vec<String> {
    let n = rng.random_range(min..=max);
    (0..n).map(|_| WORD_POOL[rng.random_range(0..WORD_POOL.len())].to_owned()).collect()
}

pub fn random_corpus(rng: &mut ChaCha8Rng) -> Vec<EvalPair> {
    let images = rng.random_range(2..=5);
    (0..images)
        .map(|_| {
            let refs = rng.random_range(1..=3);
            EvalPair::new(
                random_sent(rng, 0, 8),
                (0..refs).map(|_| random_sent(rng, 1, 8)).collect(),
            )
            .unwrap()
        })
        .collect()
}

/// All n-grams of `s`, in order, with repeats.
pub fn grams(s: &[String], n: usize) -> Vec<&[String]> {
    if s.len() < n {
        return Vec::new();
    }
    (0..=s.len() - n).map(|i| &s[i..i + n]).collect()
}

pub fn occurrences(s: &[String], g: &[String]) -> usize {
    grams(s, g.len()).into_iter().filter(|x| *x == g).count()
}

pub fn oracle_bleu(pairs: &[EvalPair], max_n: usize) -> Vec<f64> {
    let mut c_len = 0usize;
    let mut r_len = 0usize;
    let mut matched = vec![0usize; max_n];
    let mut total = vec![0usize; max_n];
    for p in pairs {
        let c = p.candidate.len();
        c_len += c;
        let mut best = p.references[0].len();
        for r in &p.references {
            let d = r.len().abs_diff(c);
            let bd = best.abs_diff(c);
            if d < bd || (d == bd && r.len() < best) {
                best = r.len();
            }
        }
        r_len += best;
        for n in 1..=max_n {
            let cg = grams(&p.candidate, n);
            total[n - 1] += cg.len();
            let mut done: Vec<&[String]> = Vec::new();
            for g in cg {
                if done.contains(&g) {
                    continue;
                }
                done.push(g);
                let count = occurrences(&p.candidate, g);
                let cap = p.references.iter().map(|r| occurrences(r, g)).max().unwrap();
                matched[n - 1] += count.min(cap);
            }
        }
    }
    let bp = if c_len == 0 {
        0.0
    } else if c_len > r_len {
        1.0
    } else {
        (1.0 - r_len as f64 / c_len as f64).exp()
    };
    (1..=max_n)
        .map(|n| {
            let mut prod = 1.0f64;
            for k in 0..n {
                if total[k] == 0 || matched[k] == 0 {
                    return 0.0;
                }
                prod *= matched[k] as f64 / total[k] as f64;
            }
            bp * prod.powf(1.0 / n as f64)
        })
        .collect()
}

fn is_subsequence(sub: &[&String], s: &[String]) -> bool {
    let mut it = s.iter();
    sub.iter().all(|x| it.any(|y| y == *x))
}

/// LCS by enumerating every subsequence of `a`.
pub fn brute_lcs(a: &[String], b: &[String]) -> usize {
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let sub: Vec<&String> = (0..a.len()).filter(|i| mask >> i & 1 == 1).map(|i| &a[i]).collect();
        if sub.len() > best && is_subsequence(&sub, b) {
            best = sub.len();
        }
    }
    best
}

pub fn oracle_rouge(pairs: &[EvalPair]) -> f64 {
    let beta2 = 1.2f64 * 1.2;
    let mut sum = 0.0;
    for p in pairs {
        let mut best = 0.0f64;
        for r in &p.references {
            let l = brute_lcs(&p.candidate, r) as f64;
            if l > 0.0 {
                let prec = l / p.candidate.len() as f64;
                let rec = l / r.len() as f64;
                best = best.max((1.0 + beta2) * prec * rec / (rec + beta2 * prec));
            }
        }
        sum += best;
    }
    sum / pairs.len() as f64
}

/// tf-idf vector as an association list.
pub fn vector(s: &[String], n: usize, pairs: &[EvalPair]) -> Vec<(Vec<String>, f64)> {
    let mut out: Vec<(Vec<String>, f64)> = Vec::new();
    for g in grams(s, n) {
        if out.iter().any(|(k, _)| k == g) {
            continue;
        }
        let tf = occurrences(s, g) as f64;
        let df = pairs
            .iter()
            .filter(|p| p.references.iter().any(|r| occurrences(r, g) > 0))
            .count()
            .max(1) as f64;
        out.push((g.to_vec(), tf * ((pairs.len() as f64).ln() - df.ln())));
    }
    out
}

pub fn oracle_cider(pairs: &[EvalPair]) -> f64 {
    let mut corpus = 0.0;
    for p in pairs {
        let mut per_ref = 0.0;
        for r in &p.references {
            let delta = p.candidate.len() as f64 - r.len() as f64;
            let pen = (-delta * delta / 72.0).exp();
            let mut s = 0.0;
            for n in 1..=4 {
                let cv = vector(&p.candidate, n, pairs);
                let rv = vector(r, n, pairs);
                let norm = |v: &[(Vec<String>, f64)]| v.iter().map(|(_, x)| x * x).sum::<f64>().sqrt();
                let mut dot = 0.0;
                for (g, c) in &cv {
                    if let Some((_, x)) = rv.iter().find(|(k, _)| k == g) {
                        dot += c.min(*x) * x;
                    }
                }
                let (nc, nr) = (norm(&cv), norm(&rv));
                if nc != 0.0 && nr != 0.0 {
                    dot /= nc * nr;
                }
                s += dot * pen;
            }
            per_ref += s / 4.0;
        }
        corpus += 10.0 * per_ref / p.references.len() as f64;
    }
    corpus / pairs.len() as f64
}

pub const TOY_VOCAB: usize = 5;
pub const TOY_WORDS: [usize; 3] = [2, 3, 4];

/// Log-probabilities are a pseudo-random function of (model seed, prefix).
pub fn toy(seed: u64) -> impl StepModel<State = Vec<usize>> {
    FnModel::new(move |prefix: &Vec<usize>, tok: usize| -> Result<(Vec<usize>, Vec<f64>)> {
        let mut next = prefix.clone();
        next.push(tok);
        let key = next.iter().fold(seed.wrapping_mul(0x100000001b3), |h, &t| {
            (h ^ t as u64).wrapping_mul(0x100000001b3)
        });
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        let logits: Vec<f64> = (0..TOY_VOCAB).map(|_| rng.random_range(-3.0..3.0)).collect();
        let z = logits[1..].iter().map(|l| l.exp()).sum::<f64>().ln();
        let mut lp: Vec<f64> = logits.iter().map(|l| l - z).collect();
        lp[BOS] = f64::NEG_INFINITY;
        Ok((next, lp))
    })
}

pub struct Sentence {
    pub tokens: Vec<usize>,
    pub raw: f64,
}

pub fn enumerate<M: StepModel<State = Vec<usize>>>(m: &M, max_len: usize) -> Vec<Sentence> {
    let mut out = Vec::new();
    let mut frontier = vec![(Vec::<usize>::new(), 0.0f64)];
    for len in 0..=max_len {
        let mut next = Vec::new();
        for (tokens, raw) in frontier {
            if len == max_len {
                out.push(Sentence { tokens, raw });
                continue;
            }
            // State before the last fed token, then feed it.
            let fed: Vec<usize> = std::iter::once(BOS).chain(tokens.iter().copied()).collect();
            let (_, lp) = m.step(&fed[..fed.len() - 1].to_vec(), fed[fed.len() - 1]).unwrap();
            out.push(Sentence {
                tokens: tokens.clone(),
                raw: raw + lp[EOS],
            });
            for &w in &TOY_WORDS {
                let mut t = tokens.clone();
                t.push(w);
                next.push((t, raw + lp[w]));
            }
        }
        frontier = next;
    }
    out
}

pub fn best(sentences: &[Sentence], gamma: f64) -> &Sentence {
    sentences
        .iter()
        .min_by(|a, b| {
            let sa = score_adjust(a.raw, a.tokens.len(), gamma);
            let sb = score_adjust(b.raw, b.tokens.len(), gamma);
            sb.partial_cmp(&sa)
                .unwrap_or(Ordering::Equal)
                .then(a.tokens.len().cmp(&b.tokens.len()))
                .then_with(|| a.tokens.cmp(&b.tokens))
        })
        .unwrap()
}

pub fn full_width(max_len: usize) -> usize {
    (0..=max_len).map(|l| TOY_WORDS.len().pow(l as u32)).sum()
}

