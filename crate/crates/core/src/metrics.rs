//! Caption metrics: corpus BLEU-1..4, ROUGE-L, CIDEr-D, the article-free
//! transform, uniqueness statistics and attribute-set F1.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::corpus::strip_article;
use crate::decompose::DecomposedCaption;
use crate::error::{Error, Result};

/// A candidate caption and its references.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalPair {
    pub candidate: Vec<String>,
    pub references: Vec<Vec<String>>,
}

impl EvalPair {
    pub fn new(candidate: Vec<String>, references: Vec<Vec<String>>) -> Result<Self> {
        if references.is_empty() {
            return Err(Error::data("evaluation pair without references"));
        }
        Ok(EvalPair { candidate, references })
    }

    pub fn from_strs(candidate: &str, references: &[&str]) -> Result<Self> {
        let split = |s: &str| s.split_whitespace().map(str::to_owned).collect::<Vec<_>>();
        Self::new(split(candidate), references.iter().map(|r| split(r)).collect())
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> BTreeMap<&[String], usize> {
    let mut out = BTreeMap::new();
    if n > 0 && tokens.len() >= n {
        for g in tokens.windows(n) {
            *out.entry(g).or_insert(0) += 1;
        }
    }
    out
}

/// Corpus BLEU-1..`max_n` with clipped counts, uniform weights and a
/// brevity penalty against the closest reference length (shorter on ties).
pub fn bleu(pairs: &[EvalPair], max_n: usize) -> Result<Vec<f64>> {
    if pairs.is_empty() {
        return Err(Error::data("BLEU over an empty corpus"));
    }
    let mut matches = vec![0u64; max_n];
    let mut totals = vec![0u64; max_n];
    let (mut cand_len, mut ref_len) = (0u64, 0u64);
    for p in pairs {
        let c = p.candidate.len();
        cand_len += c as u64;
        let closest = p
            .references
            .iter()
            .map(Vec::len)
            .min_by_key(|&r| (r.abs_diff(c), r))
            .expect("references are non-empty");
        ref_len += closest as u64;
        for n in 1..=max_n {
            let cand = ngram_counts(&p.candidate, n);
            let mut max_ref: BTreeMap<&[String], usize> = BTreeMap::new();
            for r in &p.references {
                for (g, k) in ngram_counts(r, n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(k);
                }
            }
            for (g, k) in cand {
                matches[n - 1] += k.min(max_ref.get(g).copied().unwrap_or(0)) as u64;
                totals[n - 1] += k as u64;
            }
        }
    }
    let bp = if cand_len == 0 {
        0.0
    } else if cand_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };
    let mut out = Vec::with_capacity(max_n);
    let mut log_sum = 0.0;
    let mut zero = false;
    for n in 0..max_n {
        if matches[n] == 0 || totals[n] == 0 {
            zero = true;
        } else {
            log_sum += (matches[n] as f64 / totals[n] as f64).ln();
        }
        out.push(if zero { 0.0 } else { bp * (log_sum / (n + 1) as f64).exp() });
    }
    Ok(out)
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub const ROUGE_BETA: f64 = 1.2;

/// ROUGE-L F-measure of one pair: the best over references.
pub fn rouge_l_pair(p: &EvalPair, beta: f64) -> f64 {
    p.references
        .iter()
        .map(|r| {
            let l = lcs_len(&p.candidate, r);
            if l == 0 {
                return 0.0;
            }
            let prec = l as f64 / p.candidate.len() as f64;
            let rec = l as f64 / r.len() as f64;
            (1.0 + beta * beta) * prec * rec / (rec + beta * beta * prec)
        })
        .fold(0.0, f64::max)
}

/// Mean ROUGE-L over the corpus.
pub fn rouge_l(pairs: &[EvalPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::data("ROUGE-L over an empty corpus"));
    }
    Ok(pairs.iter().map(|p| rouge_l_pair(p, ROUGE_BETA)).sum::<f64>() / pairs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CiderConfig {
    pub max_n: usize,
    pub sigma: f64,
    pub scale: f64,
}

impl Default for CiderConfig {
    fn default() -> Self {
        CiderConfig {
            max_n: 4,
            sigma: 6.0,
            scale: 10.0,
        }
    }
}

struct TfIdf<'a> {
    vecs: Vec<BTreeMap<&'a [String], f64>>,
    norms: Vec<f64>,
    len: usize,
}

fn tfidf<'a>(tokens: &'a [String], max_n: usize, df: &BTreeMap<&'a [String], usize>, log_n: f64) -> TfIdf<'a> {
    let mut vecs = Vec::with_capacity(max_n);
    let mut norms = Vec::with_capacity(max_n);
    for n in 1..=max_n {
        let v: BTreeMap<&[String], f64> = ngram_counts(tokens, n)
            .into_iter()
            .map(|(g, tf)| {
                let d = df.get(g).copied().unwrap_or(0).max(1) as f64;
                (g, tf as f64 * (log_n - d.ln()))
            })
            .collect();
        norms.push(v.values().map(|x| x * x).sum::<f64>().sqrt());
        vecs.push(v);
    }
    TfIdf {
        vecs,
        norms,
        len: tokens.len(),
    }
}

/// Per-image CIDEr-D scores; the corpus score is their mean.
pub fn cider_per_image(pairs: &[EvalPair], cfg: &CiderConfig) -> Result<Vec<f64>> {
    if pairs.is_empty() {
        return Err(Error::data("CIDEr over an empty corpus"));
    }
    if pairs.len() == 1 {
        warn!("CIDEr over a single image: every document frequency equals the corpus size");
    }
    let mut df: BTreeMap<&[String], usize> = BTreeMap::new();
    for p in pairs {
        let mut seen: HashSet<&[String]> = HashSet::new();
        for r in &p.references {
            for n in 1..=cfg.max_n {
                seen.extend(ngram_counts(r, n).into_keys());
            }
        }
        for g in seen {
            *df.entry(g).or_insert(0) += 1;
        }
    }
    let log_n = (pairs.len() as f64).ln();
    let scores = pairs
        .iter()
        .map(|p| {
            let cand = tfidf(&p.candidate, cfg.max_n, &df, log_n);
            let mut total = 0.0;
            for r in &p.references {
                let rv = tfidf(r, cfg.max_n, &df, log_n);
                let delta = cand.len as f64 - rv.len as f64;
                let penalty = (-(delta * delta) / (2.0 * cfg.sigma * cfg.sigma)).exp();
                let mut sim = 0.0;
                for n in 0..cfg.max_n {
                    let mut dot = 0.0;
                    for (g, &c) in &cand.vecs[n] {
                        if let Some(&rr) = rv.vecs[n].get(g) {
                            dot += c.min(rr) * rr;
                        }
                    }
                    if cand.norms[n] != 0.0 && rv.norms[n] != 0.0 {
                        dot /= cand.norms[n] * rv.norms[n];
                    }
                    sim += dot * penalty;
                }
                total += sim / cfg.max_n as f64;
            }
            total / p.references.len() as f64 * cfg.scale
        })
        .collect();
    Ok(scores)
}

pub fn cider(pairs: &[EvalPair], cfg: &CiderConfig) -> Result<f64> {
    let s = cider_per_image(pairs, cfg)?;
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}

/// Remove the article "a" from candidates and references.
pub fn without_a(pairs: &[EvalPair]) -> Vec<EvalPair> {
    pairs
        .iter()
        .map(|p| EvalPair {
            candidate: strip_article(&p.candidate),
            references: p.references.iter().map(|r| strip_article(r)).collect(),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniquenessStats {
    /// Percentage of generated captions that are distinct.
    pub unique_percent: f64,
    /// Percentage of generated captions found verbatim among training captions.
    pub seen_percent: Option<f64>,
}

pub fn uniqueness_stats<S: AsRef<str>>(generated: &[Vec<S>], training: Option<&[Vec<S>]>) -> Result<UniquenessStats> {
    if generated.is_empty() {
        return Err(Error::data("uniqueness statistics need at least one generated caption"));
    }
    let key = |c: &Vec<S>| c.iter().map(|s| s.as_ref().to_owned()).collect::<Vec<String>>();
    let distinct: HashSet<Vec<String>> = generated.iter().map(key).collect();
    let n = generated.len() as f64;
    let seen_percent = training.map(|t| {
        let train: HashSet<Vec<String>> = t.iter().map(key).collect();
        generated.iter().filter(|g| train.contains(&key(g))).count() as f64 / n * 100.0
    });
    Ok(UniquenessStats {
        unique_percent: distinct.len() as f64 / n * 100.0,
        seen_percent,
    })
}

/// Micro-averaged attribute-set agreement, article excluded. Gold heads
/// are matched, in order, to unused predicted tokens with the same word.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AttributeF1 {
    pub true_pos: usize,
    pub false_pos: usize,
    pub false_neg: usize,
}

impl AttributeF1 {
    pub fn add<S: AsRef<str>, A: AsRef<str>>(&mut self, skeleton: &[S], attributes: &[Vec<A>], gold: &DecomposedCaption) {
        let content = |a: &[A]| -> HashSet<String> {
            a.iter()
                .map(|x| x.as_ref().to_owned())
                .filter(|x| x != "a")
                .collect()
        };
        let mut used = vec![false; skeleton.len()];
        let mut predicted: usize = attributes.iter().map(|a| content(a).len()).sum();
        for tok in &gold.skeleton {
            let g: HashSet<String> = tok.attributes.iter().filter(|x| *x != "a").cloned().collect();
            let hit = (0..skeleton.len()).find(|&k| !used[k] && skeleton[k].as_ref() == tok.surface);
            let tp = match hit {
                Some(k) => {
                    used[k] = true;
                    content(attributes.get(k).map_or(&[][..], Vec::as_slice))
                        .intersection(&g)
                        .count()
                }
                None => 0,
            };
            self.true_pos += tp;
            self.false_neg += g.len() - tp;
            predicted -= tp;
        }
        self.false_pos += predicted;
    }

    pub fn precision(&self) -> f64 {
        ratio(self.true_pos, self.true_pos + self.false_pos)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.true_pos, self.true_pos + self.false_neg)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        1.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageScores {
    pub index: usize,
    pub rouge_l: f64,
    pub cider: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pairs: usize,
    pub without_a: bool,
    pub bleu: Vec<f64>,
    pub rouge_l: f64,
    pub cider: f64,
    /// Metrics this implementation does not compute.
    pub unsupported: Vec<String>,
    pub uniqueness: Option<UniquenessStats>,
    #[serde(default, rename = "image")]
    pub per_image: Vec<ImageScores>,
}

impl EvalReport {
    pub fn compute(pairs: &[EvalPair], strip: bool, cider_cfg: &CiderConfig) -> Result<Self> {
        let stripped;
        let pairs = if strip {
            stripped = without_a(pairs);
            &stripped[..]
        } else {
            pairs
        };
        let ciders = cider_per_image(pairs, cider_cfg)?;
        let per_image = pairs
            .iter()
            .zip(&ciders)
            .enumerate()
            .map(|(index, (p, &c))| ImageScores {
                index,
                rouge_l: rouge_l_pair(p, ROUGE_BETA),
                cider: c,
            })
            .collect();
        Ok(EvalReport {
            pairs: pairs.len(),
            without_a: strip,
            bleu: bleu(pairs, 4)?,
            rouge_l: rouge_l(pairs)?,
            cider: ciders.iter().sum::<f64>() / ciders.len() as f64,
            unsupported: vec!["SPICE".to_owned(), "METEOR".to_owned()],
            uniqueness: None,
            per_image,
        })
    }

    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        let mut rows: Vec<(String, String)> = Vec::new();
        for (n, b) in self.bleu.iter().enumerate() {
            rows.push((format!("BLEU-{}", n + 1), format!("{b:.4}")));
        }
        rows.push(("ROUGE-L".into(), format!("{:.4}", self.rouge_l)));
        rows.push(("CIDEr".into(), format!("{:.4}", self.cider)));
        for m in &self.unsupported {
            rows.push((m.clone(), "unsupported".into()));
        }
        if let Some(u) = &self.uniqueness {
            rows.push(("unique %".into(), format!("{:.2}", u.unique_percent)));
            if let Some(s) = u.seen_percent {
                rows.push(("seen in training %".into(), format!("{s:.2}")));
            }
        }
        let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "pairs: {}{}",
            self.pairs,
            if self.without_a { " (w/o a)" } else { "" }
        );
        for (k, v) in rows {
            let _ = writeln!(out, "{k:<width$}  {v}");
        }
        out
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::data(format!("report serialization: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decompose::SkeletonToken;

    fn pair(c: &str, r: &[&str]) -> EvalPair {
        EvalPair::from_strs(c, r).unwrap()
    }

    #[test]
    fn bleu_examples() {
        let b = bleu(&[pair("a man on a horse", &["a man on a horse"])], 4).unwrap();
        assert!(b.iter().all(|&x| (x - 1.0).abs() < 1e-12));
        let b = bleu(&[pair("x y z", &["a b c"])], 4).unwrap();
        assert_eq!(b[0], 0.0);
        let b = bleu(&[pair("a b c d", &["a b c d e"])], 4).unwrap();
        assert!((b[0] - (1.0f64 - 5.0 / 4.0).exp()).abs() < 1e-12);
        assert!((b[0] - 0.7788).abs() < 1e-4);
        let b = bleu(&[pair("", &["a b"])], 4).unwrap();
        assert_eq!(b, vec![0.0; 4]);
    }

    #[test]
    fn rouge_examples() {
        assert!((rouge_l(&[pair("a b c", &["a b c"])]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(rouge_l(&[pair("a b", &["c d"])]).unwrap(), 0.0);
        let (p, r, b2) = (2.0 / 3.0, 1.0, 1.2f64 * 1.2);
        let f = (1.0 + b2) * p * r / (r + b2 * p);
        assert!((rouge_l(&[pair("a b c", &["a c"])]).unwrap() - f).abs() < 1e-12);
    }

    #[test]
    fn cider_examples() {
        let cfg = CiderConfig::default();
        let corpus = [
            pair("a dog runs", &["a dog runs", "the dog is running"]),
            pair("a cat sleeps", &["a cat sleeps on a mat"]),
            pair("blue car", &["a red bus"]),
        ];
        let s = cider_per_image(&corpus, &cfg).unwrap();
        assert!(s[0] > 0.0 && s[1] > 0.0);
        assert_eq!(s[2], 0.0);
        let doubled: Vec<EvalPair> = corpus
            .iter()
            .map(|p| EvalPair {
                candidate: p.candidate.clone(),
                references: p.references.iter().flat_map(|r| [r.clone(), r.clone()]).collect(),
            })
            .collect();
        let d = cider_per_image(&doubled, &cfg).unwrap();
        for (a, b) in s.iter().zip(&d) {
            assert!((a - b).abs() < 1e-12);
        }
        // One image: every idf is zero.
        assert_eq!(cider(&[pair("a b", &["a b"])], &cfg).unwrap(), 0.0);
    }

    #[test]
    fn without_a_examples() {
        let p = without_a(&[pair("a dog", &["a dog"])]);
        assert_eq!(p[0], pair("dog", &["dog"]));
        let q = [pair("the dog", &["one dog"])];
        assert_eq!(without_a(&q), q.to_vec());
        assert_eq!(without_a(&without_a(&q)), without_a(&q));
    }

    #[test]
    fn uniqueness_examples() {
        fn g<'a>(xs: &[&'a str]) -> Vec<Vec<&'a str>> {
            xs.iter().map(|s| s.split(' ').collect()).collect()
        }
        let u = uniqueness_stats(&g(&["a b", "c d", "e f", "g h"]), Some(&g(&["x y"]))).unwrap();
        assert_eq!(u.unique_percent, 100.0);
        assert_eq!(u.seen_percent, Some(0.0));
        let u = uniqueness_stats(&g(&["a b", "a b"]), None).unwrap();
        assert_eq!(u.unique_percent, 50.0);
        assert_eq!(u.seen_percent, None);
        assert!(uniqueness_stats::<&str>(&[], None).is_err());
    }

    #[test]
    fn attribute_f1_counts() {
        let gold = DecomposedCaption {
            skeleton: vec![
                SkeletonToken::head("dog", vec!["a".into(), "red".into()]),
                SkeletonToken::plain("near"),
                SkeletonToken::head("cat", vec!["a".into(), "small".into(), "blue".into()]),
            ],
            original_length: 8,
        };
        let mut f = AttributeF1::default();
        f.add(
            &["dog", "near", "cat"],
            &[vec!["a", "red"], vec![], vec!["a", "small", "green"]],
            &gold,
        );
        assert_eq!((f.true_pos, f.false_pos, f.false_neg), (2, 1, 1));
        assert!((f.f1() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn report_lists_unsupported_metrics() {
        let r = EvalReport::compute(&[pair("a b", &["a b"]), pair("c d", &["c d"])], false, &CiderConfig::default()).unwrap();
        assert_eq!(r.unsupported, vec!["SPICE", "METEOR"]);
        assert!(r.to_table().contains("METEOR"));
        assert!(r.to_toml().unwrap().contains("rouge_l"));
    }
}
