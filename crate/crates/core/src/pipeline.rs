//! Coarse-to-fine captioning: beam-search a skeleton, then decode the
//! attributes of each skeletal word and fuse them in front of it.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::sync::Arc;

use log::warn;

use crate::attrnet::{AttrCondition, AttrNet};
use crate::config::{DecodeConfig, HiddenSource};
use crate::corpus::{FeatureGrid, Vocabulary, BOS, UNK};
use crate::decode::{beam_search, BeamConfig, StepModel};
use crate::decompose::fuse_predicted;
use crate::error::{Error, Result};
use crate::skelnet::{refine_attention, AttentionMap, EncodedGrid, SkelNet, SkelState, WordDistribution};

/// Everything recorded for one skeleton decoding step.
#[derive(Debug, Clone)]
pub struct StepRecord {
    /// Word fed at this step (BOS first).
    pub input: usize,
    pub pre_state: SkelState,
    pub state: SkelState,
    /// Pre-word attention; `None` with attention disabled.
    pub alpha: Option<AttentionMap>,
    pub distribution: WordDistribution,
}

#[derive(Debug)]
struct Link {
    record: StepRecord,
    prev: Option<Arc<Link>>,
}

/// Skeleton beam state: the LSTM state plus the chain of step records.
#[derive(Debug, Clone)]
pub struct SkelBeamState {
    pub state: SkelState,
    history: Option<Arc<Link>>,
}

impl SkelBeamState {
    pub fn new(state: SkelState) -> Self {
        SkelBeamState { state, history: None }
    }

    /// Step records oldest first.
    pub fn records(&self) -> Vec<StepRecord> {
        let mut out = Vec::new();
        let mut cur = self.history.as_ref();
        while let Some(link) = cur {
            out.push(link.record.clone());
            cur = link.prev.as_ref();
        }
        out.reverse();
        out
    }
}

/// Skeleton decoding over one encoded grid; UNK is never proposed.
pub struct SkeletonDecoder<'a> {
    pub net: &'a SkelNet,
    pub grid: &'a EncodedGrid,
}

impl StepModel for SkeletonDecoder<'_> {
    type State = SkelBeamState;

    fn step(&self, state: &SkelBeamState, token: usize) -> Result<(SkelBeamState, Vec<f64>)> {
        let out = self.net.step(&state.state, token, self.grid)?;
        let mut logp = out.distribution.log_probs();
        if let Some(u) = logp.get_mut(UNK) {
            *u = f64::NEG_INFINITY;
        }
        let record = StepRecord {
            input: token,
            pre_state: state.state.clone(),
            state: out.state.clone(),
            alpha: out.alpha,
            distribution: out.distribution,
        };
        Ok((
            SkelBeamState {
                state: out.state,
                history: Some(Arc::new(Link {
                    record,
                    prev: state.history.clone(),
                })),
            },
            logp,
        ))
    }
}

/// Teacher-forced skeleton pass over `words` (BOS prepended, EOS step
/// included), recording every step.
pub fn skeleton_trace(net: &SkelNet, grid: &EncodedGrid, words: &[usize]) -> Result<Vec<StepRecord>> {
    let model = SkeletonDecoder { net, grid };
    let mut state = SkelBeamState::new(net.initial_state(grid)?);
    for &w in std::iter::once(&BOS).chain(words) {
        state = model.step(&state, w)?.0;
    }
    Ok(state.records())
}

/// Attention used to condition the attribute decoder for one skeletal word.
#[derive(Debug, Clone)]
pub struct TokenAttention {
    pub pre: Option<AttentionMap>,
    pub post: Option<AttentionMap>,
}

/// Pre- and (when `with_post`) post-word attention for skeleton token `k`,
/// using the records of the pass that produced it.
pub fn token_attention(
    net: &SkelNet,
    grid: &EncodedGrid,
    records: &[StepRecord],
    k: usize,
    with_post: bool,
) -> Result<TokenAttention> {
    let rec = records
        .get(k)
        .ok_or_else(|| Error::contract(format!("no step record for skeleton token {k}")))?;
    let Some(pre) = rec.alpha.clone() else {
        return Ok(TokenAttention { pre: None, post: None });
    };
    let post = if with_post {
        let inputs: Vec<usize> = records[..=k].iter().map(|r| r.input).collect();
        let grid_p = net.location_distributions(&rec.pre_state, &inputs, grid)?;
        Some(refine_attention(&rec.distribution, &grid_p, &pre)?.map)
    } else {
        None
    };
    Ok(TokenAttention { pre: Some(pre), post })
}

/// Attribute-decoder conditions for every skeleton token.
///
/// `records` must hold at least one step per token; the step after the last
/// token (the EOS step) is used for [`HiddenSource::Final`] when present.
/// Post-word attention is computed when `post_alpha` (and then conditions
/// on it) or `keep_post` is set.
pub fn attribute_conditions(
    net: &SkelNet,
    grid: &EncodedGrid,
    records: &[StepRecord],
    words: &[usize],
    source: HiddenSource,
    post_alpha: bool,
    keep_post: bool,
) -> Result<(Vec<AttrCondition>, Vec<TokenAttention>)> {
    if records.len() < words.len() {
        return Err(Error::contract(format!(
            "{} step records for {} skeleton tokens",
            records.len(),
            words.len()
        )));
    }
    let to_f64 = |v: &[f32]| v.iter().map(|&x| x as f64).collect::<Vec<f64>>();
    let mut conds = Vec::with_capacity(words.len());
    let mut atts = Vec::with_capacity(words.len());
    for (k, &w) in words.iter().enumerate() {
        let att = token_attention(net, grid, records, k, post_alpha || keep_post)?;
        let z = match (&att.pre, &att.post) {
            (_, Some(post)) if post_alpha => grid.context(post),
            (Some(pre), _) => grid.context(pre),
            _ => to_f64(grid.mean()),
        };
        let h = match source {
            HiddenSource::Previous => &records[k].pre_state.h,
            HiddenSource::Current => &records[k].state.h,
            HiddenSource::Final => &records.last().unwrap().state.h,
        };
        conds.push(AttrCondition {
            z,
            s: to_f64(net.word_embedding(w)?),
            h: to_f64(h),
        });
        atts.push(att);
    }
    Ok((conds, atts))
}

/// Result of captioning one grid.
#[derive(Debug, Clone)]
pub struct CaptionOutput {
    pub skeleton: Vec<String>,
    pub attributes: Vec<Vec<String>>,
    pub tokens: Vec<String>,
    pub attention: Vec<TokenAttention>,
    /// Set when the skeleton decoder produced no words.
    pub empty: bool,
}

pub struct Captioner<'a> {
    pub skel: &'a SkelNet,
    pub attr: &'a AttrNet,
    pub skel_vocab: &'a Vocabulary,
    pub attr_vocab: &'a Vocabulary,
    pub decode: DecodeConfig,
    /// Skeleton words the attribute decoder runs on when it is not invoked
    /// on every token.
    pub nounlike: Option<&'a HashSet<usize>>,
}

impl Captioner<'_> {
    fn check(&self) -> Result<()> {
        self.decode.validate()?;
        if self.skel.vocab_size() != self.skel_vocab.len() {
            return Err(Error::data(format!(
                "skeleton model has {} words, vocabulary {}",
                self.skel.vocab_size(),
                self.skel_vocab.len()
            )));
        }
        if self.attr.vocab_size() != self.attr_vocab.len() {
            return Err(Error::data(format!(
                "attribute model has {} words, vocabulary {}",
                self.attr.vocab_size(),
                self.attr_vocab.len()
            )));
        }
        Ok(())
    }

    pub fn post_word_alpha(&self) -> bool {
        self.skel.config.attention
            && self
                .decode
                .post_word_alpha
                .unwrap_or(self.attr.config.use_post_word_alpha)
    }

    pub fn caption(&self, features: &FeatureGrid) -> Result<CaptionOutput> {
        self.check()?;
        let grid = self.skel.encode(features)?;
        let model = SkeletonDecoder { net: self.skel, grid: &grid };
        let init = SkelBeamState::new(self.skel.initial_state(&grid)?);
        let beam = BeamConfig::new(self.decode.beam_skel, self.decode.gamma_skel, self.decode.max_len_skel);
        let best = beam_search(&model, init, &beam)?.into_iter().next();
        let Some(best) = best.filter(|h| !h.tokens.is_empty()) else {
            warn!("skeleton decoder produced an empty sentence");
            return Ok(CaptionOutput {
                skeleton: Vec::new(),
                attributes: Vec::new(),
                tokens: Vec::new(),
                attention: Vec::new(),
                empty: true,
            });
        };
        let records = best.state.records();
        let post = self.post_word_alpha();
        let with_post = self.skel.config.attention;
        let words = &best.tokens;

        let (conds, attention) = attribute_conditions(
            self.skel,
            &grid,
            &records,
            words,
            self.attr.config.hidden_source,
            post,
            with_post,
        )?;
        let attr_beam = BeamConfig::new(self.decode.beam_attr, self.decode.gamma_attr, self.decode.max_len_attr);
        let mut attributes = Vec::with_capacity(words.len());
        for (&w, cond) in words.iter().zip(&conds) {
            let invoke = self.attr.config.invoke_on_all_tokens || self.nounlike.is_none_or(|set| set.contains(&w));
            let attrs = if invoke {
                self.attr.generate_attributes(cond, &attr_beam)?
            } else {
                Vec::new()
            };
            attributes.push(self.attr_vocab.decode_words(&attrs));
        }
        let skeleton = self.skel_vocab.decode_words(words);
        let tokens = fuse_predicted(&skeleton, &attributes)?;
        Ok(CaptionOutput {
            skeleton,
            attributes,
            tokens,
            attention,
            empty: false,
        })
    }
}

fn write_map(out: &mut String, name: &str, map: &AttentionMap) {
    let _ = writeln!(out, "  {name}");
    for row in map.weights.chunks(map.side) {
        let cells: Vec<String> = row.iter().map(|w| format!("{w:.4}")).collect();
        let _ = writeln!(out, "    {}", cells.join(" "));
    }
}

/// Plain-text trace of one captioned image.
pub fn format_trace(image_id: &str, out: &CaptionOutput) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "image {image_id}");
    let _ = writeln!(s, "caption {}", out.tokens.join(" "));
    let _ = writeln!(s, "skeleton {}", out.skeleton.join(" "));
    for (k, word) in out.skeleton.iter().enumerate() {
        let _ = writeln!(s, "token {k} {word}");
        let _ = writeln!(s, "  attributes {}", out.attributes[k].join(" "));
        if let Some(att) = out.attention.get(k) {
            if let Some(pre) = &att.pre {
                write_map(&mut s, "alpha", pre);
            }
            if let Some(post) = &att.post {
                write_map(&mut s, "alpha_post", post);
            }
        }
    }
    s.push('\n');
    s
}
