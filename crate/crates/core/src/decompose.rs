//! Skeleton/attribute decomposition of a parsed caption and its inverse.
//!
//! The last word of every lowest-level NP is kept in the skeleton as the
//! object word; the words in front of it inside the same NP become its
//! attributes. Every other word stays in the skeleton with no attributes.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::treebank::ParseTree;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkeletonToken {
    pub surface: String,
    /// Last word of a lowest-level NP.
    pub is_np_head: bool,
    pub attributes: Vec<String>,
}

impl SkeletonToken {
    pub fn plain(surface: impl Into<String>) -> Self {
        SkeletonToken {
            surface: surface.into(),
            is_np_head: false,
            attributes: Vec::new(),
        }
    }

    pub fn head(surface: impl Into<String>, attributes: Vec<String>) -> Self {
        SkeletonToken {
            surface: surface.into(),
            is_np_head: true,
            attributes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecomposedCaption {
    pub skeleton: Vec<SkeletonToken>,
    pub original_length: usize,
}

impl DecomposedCaption {
    pub fn skeleton_words(&self) -> Vec<&str> {
        self.skeleton.iter().map(|t| t.surface.as_str()).collect()
    }

    pub fn np_heads(&self) -> impl Iterator<Item = &SkeletonToken> {
        self.skeleton.iter().filter(|t| t.is_np_head)
    }

    /// Caption in the one-line dump format, e.g. `man{a} in hat{a red}`.
    pub fn to_dump_line(&self) -> Result<String> {
        let mut out = String::new();
        for (i, tok) in self.skeleton.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            check_dump_token(&tok.surface)?;
            out.push_str(&tok.surface);
            if !tok.attributes.is_empty() {
                out.push('{');
                for (k, a) in tok.attributes.iter().enumerate() {
                    check_dump_token(a)?;
                    if k > 0 {
                        out.push(' ');
                    }
                    let _ = write!(out, "{a}");
                }
                out.push('}');
            }
        }
        Ok(out)
    }

    /// Inverse of [`DecomposedCaption::to_dump_line`]. Heads whose attribute
    /// list is empty are not marked in the dump and come back as plain tokens.
    pub fn from_dump_line(line: &str) -> Result<Self> {
        let mut skeleton = Vec::new();
        let mut rest = line;
        while !rest.is_empty() {
            let end = rest.find([' ', '{']).unwrap_or(rest.len());
            let surface = &rest[..end];
            if surface.is_empty() {
                return Err(Error::data(format!("malformed dump line: {line:?}")));
            }
            rest = &rest[end..];
            if let Some(after) = rest.strip_prefix('{') {
                let close = after
                    .find('}')
                    .ok_or_else(|| Error::data(format!("unclosed '{{' in dump line: {line:?}")))?;
                let attrs: Vec<String> = after[..close].split(' ').map(str::to_owned).collect();
                if attrs.iter().any(|a| a.is_empty()) {
                    return Err(Error::data(format!("malformed attribute list: {line:?}")));
                }
                skeleton.push(SkeletonToken::head(surface, attrs));
                rest = &after[close + 1..];
            } else {
                skeleton.push(SkeletonToken::plain(surface));
            }
            if let Some(r) = rest.strip_prefix(' ') {
                if r.is_empty() {
                    return Err(Error::data(format!("trailing space in dump line: {line:?}")));
                }
                rest = r;
            } else if !rest.is_empty() {
                return Err(Error::data(format!("malformed dump line: {line:?}")));
            }
        }
        let original_length = skeleton.iter().map(|t| 1 + t.attributes.len()).sum();
        Ok(DecomposedCaption {
            skeleton,
            original_length,
        })
    }
}

fn check_dump_token(tok: &str) -> Result<()> {
    if tok.is_empty() || tok.contains(['{', '}']) || tok.contains(char::is_whitespace) {
        return Err(Error::data(format!("token {tok:?} cannot be written to a dump line")));
    }
    Ok(())
}

pub fn decompose(tree: &ParseTree) -> DecomposedCaption {
    let leaves = tree.leaves();
    let nps = tree.lowest_nps();
    let mut skeleton = Vec::with_capacity(leaves.len());
    let mut nps = nps.iter().peekable();
    let mut i = 0;
    while i < leaves.len() {
        match nps.peek() {
            Some(np) if np.span.0 == i => {
                let (start, end) = np.span;
                let attrs = leaves[start..end - 1].iter().map(|s| s.to_string()).collect();
                skeleton.push(SkeletonToken::head(leaves[end - 1], attrs));
                i = end;
                nps.next();
            }
            _ => {
                skeleton.push(SkeletonToken::plain(leaves[i]));
                i += 1;
            }
        }
    }
    DecomposedCaption {
        skeleton,
        original_length: leaves.len(),
    }
}

pub fn fuse(d: &DecomposedCaption) -> Vec<String> {
    let mut out = Vec::with_capacity(d.original_length);
    for tok in &d.skeleton {
        out.extend(tok.attributes.iter().cloned());
        out.push(tok.surface.clone());
    }
    out
}

/// Interleave predicted attribute sequences in front of their skeletal words.
pub fn fuse_predicted<S, A>(skeleton_words: &[S], attrs: &[Vec<A>]) -> Result<Vec<String>>
where
    S: AsRef<str>,
    A: AsRef<str>,
{
    if skeleton_words.len() != attrs.len() {
        return Err(Error::contract(format!(
            "fuse_predicted: {} skeleton words but {} attribute sequences",
            skeleton_words.len(),
            attrs.len()
        )));
    }
    let mut out = Vec::new();
    for (word, a) in skeleton_words.iter().zip(attrs) {
        out.extend(a.iter().map(|s| s.as_ref().to_owned()));
        out.push(word.as_ref().to_owned());
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DecompositionStats {
    pub captions: usize,
    pub mean_skeleton_length: f64,
    pub np_heads: usize,
    pub mean_attributes_per_head: f64,
}

pub fn decomposition_stats<'a>(items: impl IntoIterator<Item = &'a DecomposedCaption>) -> DecompositionStats {
    let (mut captions, mut skel, mut heads, mut attrs) = (0usize, 0usize, 0usize, 0usize);
    for d in items {
        captions += 1;
        skel += d.skeleton.len();
        for h in d.np_heads() {
            heads += 1;
            attrs += h.attributes.len();
        }
    }
    DecompositionStats {
        captions,
        mean_skeleton_length: if captions == 0 { 0.0 } else { skel as f64 / captions as f64 },
        np_heads: heads,
        mean_attributes_per_head: if heads == 0 { 0.0 } else { attrs as f64 / heads as f64 },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::treebank::parse_bracketed;

    fn dec(s: &str) -> DecomposedCaption {
        decompose(&parse_bracketed(s).unwrap())
    }

    #[test]
    fn noun_noun_compound() {
        let d = dec("(NP (NN coffee) (NN cup))");
        assert_eq!(d.skeleton, vec![SkeletonToken::head("cup", vec!["coffee".into()])]);
        assert_eq!(fuse(&d), ["coffee", "cup"]);
    }

    #[test]
    fn prepositional_caption() {
        let d = dec("(S (NP (DT a) (NN man)) (PP (IN in) (NP (DT a) (JJ red) (NN hat))))");
        assert_eq!(d.skeleton_words(), ["man", "in", "hat"]);
        assert_eq!(d.skeleton[0].attributes, ["a"]);
        assert!(d.skeleton[1].attributes.is_empty());
        assert!(!d.skeleton[1].is_np_head);
        assert_eq!(d.skeleton[2].attributes, ["a", "red"]);
        assert_eq!(d.original_length, 6);
        assert_eq!(fuse(&d), ["a", "man", "in", "a", "red", "hat"]);
    }

    #[test]
    fn single_word_np_has_no_attributes() {
        let d = dec("(NP (NN man))");
        assert_eq!(d.skeleton, vec![SkeletonToken::head("man", vec![])]);
    }

    #[test]
    fn nested_np_uses_inner_phrases() {
        let d = dec("(NP (NP (NN coffee) (NN cup)) (PP (IN on) (NP (DT the) (NN table))))");
        assert_eq!(d.skeleton_words(), ["cup", "on", "table"]);
        assert_eq!(d.skeleton[2].attributes, ["the"]);
    }

    #[test]
    fn fuse_with_empty_attributes_is_identity() {
        let d = DecomposedCaption {
            skeleton: vec![SkeletonToken::plain("dogs"), SkeletonToken::plain("run")],
            original_length: 2,
        };
        assert_eq!(fuse(&d), ["dogs", "run"]);
    }

    #[test]
    fn fuse_predicted_interleaves() {
        let words = ["man", "in", "hat", "riding", "horse"];
        let attrs: Vec<Vec<&str>> = vec![vec![], vec![], vec!["red"], vec![], vec![]];
        assert_eq!(
            fuse_predicted(&words, &attrs).unwrap().join(" "),
            "man in red hat riding horse"
        );
        let empty: [&str; 0] = [];
        let no_attrs: [Vec<&str>; 0] = [];
        assert!(fuse_predicted(&empty, &no_attrs).unwrap().is_empty());
        let err = fuse_predicted(&["dog"], &[vec!["a"], vec!["big"]]).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn dump_line_roundtrip() {
        let d = dec("(S (NP (DT a) (NN man)) (PP (IN in) (NP (DT a) (JJ red) (NN hat))))");
        let line = d.to_dump_line().unwrap();
        assert_eq!(line, "man{a} in hat{a red}");
        let back = DecomposedCaption::from_dump_line(&line).unwrap();
        assert_eq!(back, d);
        assert_eq!(back.to_dump_line().unwrap(), line);

        assert!(DecomposedCaption::from_dump_line("man{a").is_err());
        assert!(DecomposedCaption::from_dump_line("man{} in").is_err());
        assert!(DecomposedCaption::from_dump_line("man  in").is_err());
        let bad = DecomposedCaption {
            skeleton: vec![SkeletonToken::plain("{x}")],
            original_length: 1,
        };
        assert!(bad.to_dump_line().is_err());
    }

    #[test]
    fn stats_count_heads() {
        let a = dec("(S (NP (DT a) (NN man)) (PP (IN in) (NP (DT a) (JJ red) (NN hat))))");
        let b = dec("(NP (NN man))");
        let s = decomposition_stats([&a, &b]);
        assert_eq!(s.captions, 2);
        assert!((s.mean_skeleton_length - 2.0).abs() < 1e-12);
        assert_eq!(s.np_heads, 3);
        assert!((s.mean_attributes_per_head - 1.0).abs() < 1e-12);
    }
}
