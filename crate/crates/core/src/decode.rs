//! Beam search with a per-word length factor.
//!
//! Every non-EOS word adds `γ` to the hypothesis score as it is generated,
//! so `adjusted = raw + γ·l` where `l` counts the words before EOS.

use std::cmp::Ordering;
use std::marker::PhantomData;

use crate::corpus::{BOS, EOS};
use crate::error::{Error, Result};

/// `log P̂ = log P + γ·l`
pub fn score_adjust(raw_logp: f64, length: usize, gamma: f64) -> f64 {
    raw_logp + gamma * length as f64
}

/// A model that can be stepped one token at a time.
pub trait StepModel {
    type State: Clone;

    /// Feed `token` and return the next state with log-probabilities over
    /// the vocabulary. Non-finite entries are never selected.
    fn step(&self, state: &Self::State, token: usize) -> Result<(Self::State, Vec<f64>)>;
}

/// Adapts a closure to [`StepModel`].
pub struct FnModel<S, F> {
    f: F,
    _state: PhantomData<fn(&S) -> S>,
}

impl<S, F> FnModel<S, F>
where
    F: Fn(&S, usize) -> Result<(S, Vec<f64>)>,
{
    pub fn new(f: F) -> Self {
        FnModel { f, _state: PhantomData }
    }
}

impl<S: Clone, F> StepModel for FnModel<S, F>
where
    F: Fn(&S, usize) -> Result<(S, Vec<f64>)>,
{
    type State = S;

    fn step(&self, state: &S, token: usize) -> Result<(S, Vec<f64>)> {
        (self.f)(state, token)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamConfig {
    pub beam_size: usize,
    pub gamma: f64,
    /// Longest sentence, in non-EOS words. A hypothesis that reaches it is
    /// finished without an EOS.
    pub max_len: usize,
}

impl BeamConfig {
    pub fn new(beam_size: usize, gamma: f64, max_len: usize) -> Self {
        BeamConfig {
            beam_size,
            gamma,
            max_len,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 {
            return Err(Error::config("beam size must be at least 1"));
        }
        if !self.gamma.is_finite() {
            return Err(Error::config("length factor must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Hypothesis<S> {
    /// Generated words, EOS excluded.
    pub tokens: Vec<usize>,
    pub adjusted: f64,
    pub raw: f64,
    /// State after the last token fed to the model.
    pub state: S,
    pub finished: bool,
    pub ended_with_eos: bool,
}

impl<S> Hypothesis<S> {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Best first: higher adjusted score, then shorter, then smaller tokens.
fn rank<S>(a: &Hypothesis<S>, b: &Hypothesis<S>) -> Ordering {
    b.adjusted
        .partial_cmp(&a.adjusted)
        .unwrap_or(Ordering::Equal)
        .then(a.tokens.len().cmp(&b.tokens.len()))
        .then_with(|| a.tokens.cmp(&b.tokens))
}

/// Run beam search from `init`, feeding BOS first. Returns the finished
/// pool (at most `beam_size` hypotheses) best first.
pub fn beam_search<M: StepModel>(model: &M, init: M::State, cfg: &BeamConfig) -> Result<Vec<Hypothesis<M::State>>> {
    cfg.validate()?;
    let root = Hypothesis {
        tokens: Vec::new(),
        adjusted: 0.0,
        raw: 0.0,
        state: init,
        finished: cfg.max_len == 0,
        ended_with_eos: false,
    };
    if cfg.max_len == 0 {
        return Ok(vec![root]);
    }

    let mut live = vec![(root, BOS)];
    let mut finished: Vec<Hypothesis<M::State>> = Vec::new();
    let bonus = cfg.gamma.max(0.0);

    while !live.is_empty() {
        let mut candidates: Vec<Hypothesis<M::State>> = Vec::new();
        for (hyp, last) in &live {
            let (state, logp) = model.step(&hyp.state, *last)?;
            for (w, &lp) in logp.iter().enumerate() {
                if w == BOS || !lp.is_finite() {
                    continue;
                }
                let raw = hyp.raw + lp;
                let mut tokens = hyp.tokens.clone();
                let eos = w == EOS;
                if !eos {
                    tokens.push(w);
                }
                let adjusted = score_adjust(raw, tokens.len(), cfg.gamma);
                candidates.push(Hypothesis {
                    finished: eos || tokens.len() >= cfg.max_len,
                    tokens,
                    adjusted,
                    raw,
                    state: state.clone(),
                    ended_with_eos: eos,
                });
            }
        }
        candidates.sort_by(rank);
        candidates.truncate(cfg.beam_size);

        live.clear();
        for c in candidates {
            if c.finished {
                finished.push(c);
            } else {
                let last = *c.tokens.last().expect("live hypotheses hold a word");
                live.push((c, last));
            }
        }
        finished.sort_by(rank);
        finished.truncate(cfg.beam_size);

        if finished.len() == cfg.beam_size {
            let worst = finished.last().unwrap().adjusted;
            let hopeless = live
                .iter()
                .all(|(h, _)| h.adjusted + (cfg.max_len - h.tokens.len()) as f64 * bonus <= worst);
            if hopeless {
                break;
            }
        }
    }
    Ok(finished)
}

/// Take the most probable word at every step until EOS or `max_len`.
pub fn greedy_decode<M: StepModel>(model: &M, init: M::State, max_len: usize) -> Result<Hypothesis<M::State>> {
    let mut hyp = Hypothesis {
        tokens: Vec::new(),
        adjusted: 0.0,
        raw: 0.0,
        state: init,
        finished: max_len == 0,
        ended_with_eos: false,
    };
    let mut last = BOS;
    while !hyp.finished {
        let (state, logp) = model.step(&hyp.state, last)?;
        let mut best: Option<usize> = None;
        for (w, &lp) in logp.iter().enumerate() {
            if w == BOS || !lp.is_finite() {
                continue;
            }
            if best.is_none_or(|b| lp > logp[b]) {
                best = Some(w);
            }
        }
        let w = best.ok_or_else(|| Error::contract("no selectable token in step output"))?;
        hyp.raw += logp[w];
        hyp.state = state;
        if w == EOS {
            hyp.finished = true;
            hyp.ended_with_eos = true;
        } else {
            hyp.tokens.push(w);
            last = w;
            hyp.finished = hyp.tokens.len() >= max_len;
        }
        hyp.adjusted = hyp.raw;
    }
    Ok(hyp)
}

/// Raw log-probability of `tokens` (followed by EOS when `with_eos`).
pub fn rescore<M: StepModel>(model: &M, init: M::State, tokens: &[usize], with_eos: bool) -> Result<f64> {
    let mut state = init;
    let mut last = BOS;
    let mut total = 0.0;
    let tail = with_eos.then_some(EOS);
    for &w in tokens.iter().chain(tail.iter()) {
        let (next, logp) = model.step(&state, last)?;
        let lp = *logp
            .get(w)
            .ok_or_else(|| Error::contract(format!("token {w} outside the model vocabulary")))?;
        total += lp;
        state = next;
        last = w;
    }
    Ok(total)
}
