//! Attribute decoder: a plain LSTM whose first input fuses the attended
//! image context, the skeletal word embedding and the skeleton hidden state,
//! `x₋₁ = tanh(F (W_I z + W_t s + W_h h) + b)`.
//!
//! The sequence fed to the LSTM is `x₋₁`, then BOS, then the attribute
//! words; predictions start at the BOS step and end with EOS.

use rand::Rng;

use crate::config::AttrConfig;
use crate::corpus::{BOS, EOS, UNK};
use crate::decode::{beam_search, BeamConfig, Hypothesis, StepModel};
use crate::error::{Error, Result};
use crate::numerics::{glorot_uniform, ParamId, ParameterStore, Real, Tape, Tensor, Var};
use crate::skelnet::{lstm_update, LstmVars};

/// What the attribute decoder is conditioned on for one skeletal word.
#[derive(Debug, Clone, PartialEq)]
pub struct AttrCondition {
    /// Attended image context `z_T` (D).
    pub z: Vec<f64>,
    /// Skeletal word embedding `s_T` (m_s).
    pub s: Vec<f64>,
    /// Skeleton hidden state `h_T` (n_s).
    pub h: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttrState<T = f32> {
    pub h: Vec<T>,
    pub c: Vec<T>,
    pub t: usize,
}

#[derive(Debug, Clone, Copy)]
struct AttrIds {
    embed: ParamId,
    w_image: ParamId,
    w_word: ParamId,
    w_hidden: ParamId,
    fuse_w: ParamId,
    fuse_b: ParamId,
    lstm_w: ParamId,
    lstm_b: ParamId,
    out_w: ParamId,
    out_b: ParamId,
}

const PARAM_NAMES: [&str; 10] = [
    "embed", "w_image", "w_word", "w_hidden", "fuse_w", "fuse_b", "lstm_w", "lstm_b", "out_w", "out_b",
];

#[derive(Debug, Clone)]
pub struct AttrNet<T: Real = f32> {
    pub config: AttrConfig,
    vocab_size: usize,
    feature_dim: usize,
    skel_embed: usize,
    skel_hidden: usize,
    pub store: ParameterStore<T>,
    ids: AttrIds,
}

/// Tape handles for a condition.
#[derive(Debug, Clone, Copy)]
pub struct ConditionVars {
    pub z: Var,
    pub s: Var,
    pub h: Var,
}

impl<T: Real> AttrNet<T> {
    fn shapes_for(config: &AttrConfig, q: usize, d: usize, ms: usize, ns: usize) -> [Vec<usize>; 10] {
        let (na, e) = (config.hidden, config.embed);
        [
            vec![q, e],
            vec![na, d],
            vec![na, ms],
            vec![na, ns],
            vec![e, na],
            vec![e],
            vec![4 * na, e + na],
            vec![4 * na],
            vec![q, na],
            vec![q],
        ]
    }

    /// `vocab_size` is the attribute vocabulary; `skel_embed` and
    /// `skel_hidden` are the skeleton model's m_s and n_s.
    pub fn new<R: Rng>(
        config: AttrConfig,
        vocab_size: usize,
        feature_dim: usize,
        skel_embed: usize,
        skel_hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let mut store = ParameterStore::new();
        for (name, shape) in PARAM_NAMES
            .iter()
            .zip(Self::shapes_for(&config, vocab_size, feature_dim, skel_embed, skel_hidden))
        {
            let t = match (*name, shape.as_slice()) {
                ("lstm_b", _) => {
                    let h = config.hidden;
                    let mut b = Tensor::zeros(shape);
                    b.data_mut()[h..2 * h].iter_mut().for_each(|v| *v = T::one());
                    b
                }
                (_, &[_]) => Tensor::zeros(shape),
                (_, &[rows, cols]) => glorot_uniform(shape.clone(), cols, rows, rng),
                _ => unreachable!(),
            };
            store.add(name, t)?;
        }
        Self::from_store(config, vocab_size, feature_dim, skel_embed, skel_hidden, store)
    }

    pub fn zeros(config: AttrConfig, vocab_size: usize, feature_dim: usize, skel_embed: usize, skel_hidden: usize) -> Result<Self> {
        config.validate()?;
        let mut store = ParameterStore::new();
        for (name, shape) in PARAM_NAMES
            .iter()
            .zip(Self::shapes_for(&config, vocab_size, feature_dim, skel_embed, skel_hidden))
        {
            store.add(name, Tensor::zeros(shape))?;
        }
        Self::from_store(config, vocab_size, feature_dim, skel_embed, skel_hidden, store)
    }

    pub fn from_store(
        config: AttrConfig,
        vocab_size: usize,
        feature_dim: usize,
        skel_embed: usize,
        skel_hidden: usize,
        store: ParameterStore<T>,
    ) -> Result<Self> {
        let shapes = Self::shapes_for(&config, vocab_size, feature_dim, skel_embed, skel_hidden);
        let mut ids = Vec::with_capacity(PARAM_NAMES.len());
        for (name, shape) in PARAM_NAMES.iter().zip(&shapes) {
            let id = store
                .id(name)
                .ok_or_else(|| Error::data(format!("attribute parameters lack {name}")))?;
            if store.get(id).shape() != shape.as_slice() {
                return Err(Error::data(format!(
                    "attribute parameter {name} has shape {:?}, expected {shape:?}",
                    store.get(id).shape()
                )));
            }
            ids.push(id);
        }
        if store.len() != PARAM_NAMES.len() {
            return Err(Error::data("attribute parameter store has extra tensors"));
        }
        let ids = AttrIds {
            embed: ids[0],
            w_image: ids[1],
            w_word: ids[2],
            w_hidden: ids[3],
            fuse_w: ids[4],
            fuse_b: ids[5],
            lstm_w: ids[6],
            lstm_b: ids[7],
            out_w: ids[8],
            out_b: ids[9],
        };
        Ok(AttrNet {
            config,
            vocab_size,
            feature_dim,
            skel_embed,
            skel_hidden,
            store,
            ids,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn cast<U: Real>(&self) -> AttrNet<U> {
        AttrNet {
            config: self.config.clone(),
            vocab_size: self.vocab_size,
            feature_dim: self.feature_dim,
            skel_embed: self.skel_embed,
            skel_hidden: self.skel_hidden,
            store: self.store.cast(),
            ids: self.ids,
        }
    }

    pub fn check_condition(&self, cond: &AttrCondition) -> Result<()> {
        for (what, got, want) in [
            ("image context", cond.z.len(), self.feature_dim),
            ("skeletal word embedding", cond.s.len(), self.skel_embed),
            ("skeleton hidden state", cond.h.len(), self.skel_hidden),
        ] {
            if got != want {
                return Err(Error::contract(format!("{what} has width {got}, expected {want}")));
            }
        }
        Ok(())
    }

    fn check_word(&self, word: usize) -> Result<()> {
        if word >= self.vocab_size {
            return Err(Error::contract(format!(
                "word index {word} out of range for attribute vocabulary of {}",
                self.vocab_size
            )));
        }
        Ok(())
    }

    pub fn condition_vars(&self, tape: &mut Tape<'_, T>, cond: &AttrCondition) -> Result<ConditionVars> {
        self.check_condition(cond)?;
        let conv = |v: &[f64]| v.iter().map(|&x| T::of(x)).collect::<Vec<T>>();
        Ok(ConditionVars {
            z: tape.vector(&conv(&cond.z)),
            s: tape.vector(&conv(&cond.s)),
            h: tape.vector(&conv(&cond.h)),
        })
    }

    /// The fused first input `x₋₁`.
    pub fn init_input_vars(&self, tape: &mut Tape<'_, T>, c: ConditionVars) -> Result<Var> {
        let wi = tape.param(self.ids.w_image);
        let wt = tape.param(self.ids.w_word);
        let wh = tape.param(self.ids.w_hidden);
        let a = tape.matmul(wi, c.z)?;
        let b = tape.matmul(wt, c.s)?;
        let h = tape.matmul(wh, c.h)?;
        let sum = tape.add(a, b)?;
        let sum = tape.add(sum, h)?;
        let fw = tape.param(self.ids.fuse_w);
        let fb = tape.param(self.ids.fuse_b);
        let x = tape.matmul(fw, sum)?;
        let x = tape.add(x, fb)?;
        Ok(tape.tanh(x))
    }

    fn cell_vars(&self, tape: &mut Tape<'_, T>, x: Var, state: LstmVars) -> Result<LstmVars> {
        let xh = tape.concat(&[x, state.h])?;
        let w = tape.param(self.ids.lstm_w);
        let b = tape.param(self.ids.lstm_b);
        let gates = tape.matmul(w, xh)?;
        let gates = tape.add(gates, b)?;
        lstm_update(tape, gates, state.c, self.config.hidden)
    }

    fn zero_state(&self, tape: &mut Tape<'_, T>) -> Result<LstmVars> {
        let n = self.config.hidden;
        Ok(LstmVars {
            h: tape.input(vec![n], vec![T::zero(); n])?,
            c: tape.input(vec![n], vec![T::zero(); n])?,
        })
    }

    /// Consume `x₋₁` from a zero state.
    pub fn initial_vars(&self, tape: &mut Tape<'_, T>, c: ConditionVars) -> Result<LstmVars> {
        let x = self.init_input_vars(tape, c)?;
        let s0 = self.zero_state(tape)?;
        self.cell_vars(tape, x, s0)
    }

    /// Feed `word` and return the new state with next-word logits.
    pub fn step_vars(&self, tape: &mut Tape<'_, T>, state: LstmVars, word: usize) -> Result<(LstmVars, Var)> {
        self.check_word(word)?;
        let table = tape.param(self.ids.embed);
        let x = tape.lookup(table, word)?;
        let next = self.cell_vars(tape, x, state)?;
        let w = tape.param(self.ids.out_w);
        let b = tape.param(self.ids.out_b);
        let o = tape.matmul(w, next.h)?;
        let logits = tape.add(o, b)?;
        Ok((next, logits))
    }

    /// Teacher-forced cross-entropy of `gold` followed by EOS, given
    /// condition handles already on the tape.
    pub fn sequence_loss_vars(&self, tape: &mut Tape<'_, T>, c: ConditionVars, gold: &[usize]) -> Result<(Var, usize)> {
        let mut state = self.initial_vars(tape, c)?;
        let mut prev = BOS;
        let mut total: Option<Var> = None;
        for &target in gold.iter().chain(std::iter::once(&EOS)) {
            self.check_word(target)?;
            let (next, logits) = self.step_vars(tape, state, prev)?;
            let ce = tape.cross_entropy(logits, target)?;
            total = Some(match total {
                Some(t) => tape.add(t, ce)?,
                None => ce,
            });
            state = next;
            prev = target;
        }
        Ok((total.expect("at least the EOS step"), gold.len() + 1))
    }

    pub fn sequence_loss(&self, tape: &mut Tape<'_, T>, cond: &AttrCondition, gold: &[usize]) -> Result<(Var, usize)> {
        let c = self.condition_vars(tape, cond)?;
        self.sequence_loss_vars(tape, c, gold)
    }

    // ---- inference ----

    pub fn init_input(&self, cond: &AttrCondition) -> Result<Vec<f64>> {
        let mut tape = Tape::new(&self.store);
        let c = self.condition_vars(&mut tape, cond)?;
        let x = self.init_input_vars(&mut tape, c)?;
        Ok(tape.value(x).iter().map(|v| v.f64()).collect())
    }

    pub fn initial_state(&self, cond: &AttrCondition) -> Result<AttrState<T>> {
        let mut tape = Tape::new(&self.store);
        let c = self.condition_vars(&mut tape, cond)?;
        let s = self.initial_vars(&mut tape, c)?;
        Ok(AttrState {
            h: tape.value(s.h).to_vec(),
            c: tape.value(s.c).to_vec(),
            t: 0,
        })
    }

    /// Feed `word`; returns the next state and log-probabilities.
    pub fn step(&self, state: &AttrState<T>, word: usize) -> Result<(AttrState<T>, Vec<f64>)> {
        let n = self.config.hidden;
        if state.h.len() != n || state.c.len() != n {
            return Err(Error::contract(format!(
                "attribute state of width {} for hidden size {n}",
                state.h.len()
            )));
        }
        let mut tape = Tape::new(&self.store);
        let s = LstmVars {
            h: tape.input(vec![n], state.h.clone())?,
            c: tape.input(vec![n], state.c.clone())?,
        };
        let (next, logits) = self.step_vars(&mut tape, s, word)?;
        tape.check_finite(logits, "attribute logits")?;
        let logp = log_softmax(tape.value(logits));
        Ok((
            AttrState {
                h: tape.value(next.h).to_vec(),
                c: tape.value(next.c).to_vec(),
                t: state.t + 1,
            },
            logp,
        ))
    }

    /// Beam-decode an attribute sequence; returns the ranked finished pool.
    pub fn generate(&self, cond: &AttrCondition, beam: &BeamConfig) -> Result<Vec<Hypothesis<AttrState<T>>>> {
        let init = self.initial_state(cond)?;
        beam_search(&Decoder(self), init, beam)
    }

    /// Best attribute sequence (possibly empty).
    pub fn generate_attributes(&self, cond: &AttrCondition, beam: &BeamConfig) -> Result<Vec<usize>> {
        Ok(self
            .generate(cond, beam)?
            .into_iter()
            .next()
            .map(|h| h.tokens)
            .unwrap_or_default())
    }
}

/// Step adapter that never proposes UNK.
struct Decoder<'a, T: Real>(&'a AttrNet<T>);

impl<T: Real> StepModel for Decoder<'_, T> {
    type State = AttrState<T>;

    fn step(&self, state: &AttrState<T>, token: usize) -> Result<(AttrState<T>, Vec<f64>)> {
        let (next, mut logp) = self.0.step(state, token)?;
        if let Some(u) = logp.get_mut(UNK) {
            *u = f64::NEG_INFINITY;
        }
        Ok((next, logp))
    }
}

pub(crate) fn log_softmax<T: Real>(logits: &[T]) -> Vec<f64> {
    let xs: Vec<f64> = logits.iter().map(|v| v.f64()).collect();
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    xs.iter().map(|x| x - lse).collect()
}
