//! Skeleton decoder: an LSTM with soft spatial attention over a feature grid.
//!
//! At step `t` an MLP scores every location from its feature vector and the
//! previous hidden state, `e_ij = wᵀ tanh(U v_ij + V h_{t-1} + b)`; the
//! softmax of the scores is the attention map `α_t` and the context is
//! `z_t = Σ α_ij v_ij`. The LSTM consumes `[embed(prev word); z_t]` and an
//! affine layer over its new hidden state gives the next-word distribution.
//! The initial `h`, `c` are affine maps of the mean feature vector.
//!
//! After a word is chosen, the attention can be refined: the step is re-run
//! with the context replaced by each `v_ij` to get per-location
//! distributions `P_ij`, and `α_post(ij) ∝ ⟨P_attend, P_ij⟩`.

use log::warn;
use rand::Rng;

use crate::config::{PerLocationMode, SkelConfig};
use crate::corpus::{FeatureGrid, BOS, EOS};
use crate::error::{Error, Result};
use crate::numerics::{glorot_uniform, ParamId, ParameterStore, Real, Tape, Tensor, Var};

/// Normalized weights over the L×L locations, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub side: usize,
    pub weights: Vec<f64>,
}

impl AttentionMap {
    pub fn uniform(side: usize) -> Self {
        let n = side * side;
        AttentionMap {
            side,
            weights: vec![1.0 / n as f64; n],
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.side + j]
    }

    /// Cell with the largest weight (first on ties).
    pub fn argmax(&self) -> (usize, usize) {
        let k = argmax(&self.weights);
        (k / self.side, k % self.side)
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Probabilities over the skeleton vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct WordDistribution {
    pub probs: Vec<f64>,
}

impl WordDistribution {
    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }

    pub fn log_probs(&self) -> Vec<f64> {
        self.probs.iter().map(|p| p.ln()).collect()
    }

    pub fn dot(&self, other: &WordDistribution) -> f64 {
        self.probs.iter().zip(&other.probs).map(|(a, b)| a * b).sum()
    }
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Recurrent state of the skeleton LSTM.
#[derive(Debug, Clone, PartialEq)]
pub struct SkelState<T = f32> {
    pub h: Vec<T>,
    pub c: Vec<T>,
    pub t: usize,
}

/// A feature grid with the attention projection `U v_ij` precomputed.
#[derive(Debug, Clone)]
pub struct EncodedGrid<T = f32> {
    side: usize,
    dim: usize,
    feats: Vec<T>,
    proj: Vec<T>,
    mean: Vec<T>,
}

impl<T: Real> EncodedGrid<T> {
    pub fn side(&self) -> usize {
        self.side
    }

    pub fn locations(&self) -> usize {
        self.side * self.side
    }

    pub fn location(&self, k: usize) -> &[T] {
        &self.feats[k * self.dim..(k + 1) * self.dim]
    }

    pub fn mean(&self) -> &[T] {
        &self.mean
    }

    /// `Σ α_ij v_ij`
    pub fn context(&self, alpha: &AttentionMap) -> Vec<f64> {
        let mut z = vec![0f64; self.dim];
        for (k, &a) in alpha.weights.iter().enumerate() {
            for (zi, v) in z.iter_mut().zip(self.location(k)) {
                *zi += a * v.f64();
            }
        }
        z
    }
}

/// `z = Σ α_ij v_ij` over a raw grid.
pub fn context(features: &FeatureGrid, alpha: &AttentionMap) -> Result<Vec<f64>> {
    if alpha.side != features.side() || alpha.weights.len() != features.locations() {
        return Err(Error::contract(format!(
            "attention map {}x{} does not match feature grid {}x{}",
            alpha.side,
            alpha.side,
            features.side(),
            features.side()
        )));
    }
    let mut z = vec![0f64; features.dim()];
    for (k, &a) in alpha.weights.iter().enumerate() {
        for (zi, v) in z.iter_mut().zip(features.location(k)) {
            *zi += a * *v as f64;
        }
    }
    Ok(z)
}

/// Result of [`refine_attention`].
#[derive(Debug, Clone, PartialEq)]
pub struct RefinedAttention {
    pub map: AttentionMap,
    /// Every similarity was zero and the pre-word map was returned instead.
    pub fell_back: bool,
}

/// `α_post(ij) = ⟨P_attend, P_ij⟩ / Z`.
pub fn refine_attention(
    p_attend: &WordDistribution,
    p_grid: &[WordDistribution],
    pre: &AttentionMap,
) -> Result<RefinedAttention> {
    if p_grid.len() != pre.weights.len() {
        return Err(Error::contract(format!(
            "{} per-location distributions for {} locations",
            p_grid.len(),
            pre.weights.len()
        )));
    }
    if let Some(bad) = p_grid.iter().find(|p| p.probs.len() != p_attend.probs.len()) {
        return Err(Error::contract(format!(
            "per-location distribution over {} words, attend distribution over {}",
            bad.probs.len(),
            p_attend.probs.len()
        )));
    }
    let sims: Vec<f64> = p_grid.iter().map(|p| p_attend.dot(p)).collect();
    let z: f64 = sims.iter().sum();
    if !(z > 0.0) || !z.is_finite() {
        warn!("post-word attention: all similarities are zero, keeping pre-word attention");
        return Ok(RefinedAttention {
            map: pre.clone(),
            fell_back: true,
        });
    }
    Ok(RefinedAttention {
        map: AttentionMap {
            side: pre.side,
            weights: sims.into_iter().map(|s| s / z).collect(),
        },
        fell_back: false,
    })
}

#[derive(Debug, Clone, Copy)]
struct SkelIds {
    embed: ParamId,
    att_feat: ParamId,
    att_hidden: ParamId,
    att_bias: ParamId,
    att_score: ParamId,
    init_h_w: ParamId,
    init_h_b: ParamId,
    init_c_w: ParamId,
    init_c_b: ParamId,
    lstm_w: ParamId,
    lstm_b: ParamId,
    out_w: ParamId,
    out_b: ParamId,
}

const PARAM_NAMES: [&str; 13] = [
    "embed",
    "att_feat",
    "att_hidden",
    "att_bias",
    "att_score",
    "init_h_w",
    "init_h_b",
    "init_c_w",
    "init_c_b",
    "lstm_w",
    "lstm_b",
    "out_w",
    "out_b",
];

#[derive(Debug, Clone)]
pub struct SkelNet<T: Real = f32> {
    pub config: SkelConfig,
    vocab_size: usize,
    feature_dim: usize,
    pub store: ParameterStore<T>,
    ids: SkelIds,
}

/// Tape handles for one encoded grid.
#[derive(Debug, Clone, Copy)]
pub struct GridVars {
    pub feats: Var,
    pub proj: Option<Var>,
    pub mean: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    pub h: Var,
    pub c: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct StepVars {
    pub alpha: Option<Var>,
    pub z: Var,
    pub state: LstmVars,
    pub logits: Var,
}

/// Output of one inference step.
#[derive(Debug, Clone)]
pub struct SkelStep<T = f32> {
    pub state: SkelState<T>,
    pub distribution: WordDistribution,
    /// `None` when attention is disabled.
    pub alpha: Option<AttentionMap>,
    pub z: Vec<T>,
}

impl<T: Real> SkelNet<T> {
    fn shapes(config: &SkelConfig, q: usize, d: usize) -> [Vec<usize>; 13] {
        let (h, m, a) = (config.hidden, config.embed, config.attention_hidden);
        [
            vec![q, m],
            vec![a, d],
            vec![a, h],
            vec![a],
            vec![a],
            vec![h, d],
            vec![h],
            vec![h, d],
            vec![h],
            vec![4 * h, m + d + h],
            vec![4 * h],
            vec![q, h],
            vec![q],
        ]
    }

    pub fn new<R: Rng>(config: SkelConfig, vocab_size: usize, feature_dim: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let shapes = Self::shapes(&config, vocab_size, feature_dim);
        let mut store = ParameterStore::new();
        for (name, shape) in PARAM_NAMES.iter().zip(shapes) {
            let t = match (*name, shape.as_slice()) {
                ("lstm_b", _) => {
                    let h = config.hidden;
                    let mut b = Tensor::zeros(shape);
                    b.data_mut()[h..2 * h].iter_mut().for_each(|v| *v = T::one());
                    b
                }
                (_, &[_]) => Tensor::zeros(shape),
                ("att_score", _) => unreachable!(),
                (_, &[rows, cols]) => glorot_uniform(shape.clone(), cols, rows, rng),
                _ => unreachable!(),
            };
            store.add(name, t)?;
        }
        // The scoring vector is a [A] parameter but is not a bias; give it weights.
        let a = config.attention_hidden;
        let w = glorot_uniform::<T, _>(vec![a], a, 1, rng);
        let id = store.id("att_score").unwrap();
        store.get_mut(id).data_mut().copy_from_slice(w.data());
        Self::from_store(config, vocab_size, feature_dim, store)
    }

    /// All-zero parameters: uniform attention and uniform word distributions.
    pub fn zeros(config: SkelConfig, vocab_size: usize, feature_dim: usize) -> Result<Self> {
        config.validate()?;
        let mut store = ParameterStore::new();
        for (name, shape) in PARAM_NAMES.iter().zip(Self::shapes(&config, vocab_size, feature_dim)) {
            store.add(name, Tensor::zeros(shape))?;
        }
        Self::from_store(config, vocab_size, feature_dim, store)
    }

    pub fn from_store(config: SkelConfig, vocab_size: usize, feature_dim: usize, store: ParameterStore<T>) -> Result<Self> {
        let shapes = Self::shapes(&config, vocab_size, feature_dim);
        let mut ids = Vec::with_capacity(PARAM_NAMES.len());
        for (name, shape) in PARAM_NAMES.iter().zip(&shapes) {
            let id = store
                .id(name)
                .ok_or_else(|| Error::data(format!("skeleton parameters lack {name}")))?;
            if store.get(id).shape() != shape.as_slice() {
                return Err(Error::data(format!(
                    "skeleton parameter {name} has shape {:?}, expected {shape:?}",
                    store.get(id).shape()
                )));
            }
            ids.push(id);
        }
        if store.len() != PARAM_NAMES.len() {
            return Err(Error::data("skeleton parameter store has extra tensors"));
        }
        let ids = SkelIds {
            embed: ids[0],
            att_feat: ids[1],
            att_hidden: ids[2],
            att_bias: ids[3],
            att_score: ids[4],
            init_h_w: ids[5],
            init_h_b: ids[6],
            init_c_w: ids[7],
            init_c_b: ids[8],
            lstm_w: ids[9],
            lstm_b: ids[10],
            out_w: ids[11],
            out_b: ids[12],
        };
        Ok(SkelNet {
            config,
            vocab_size,
            feature_dim,
            store,
            ids,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn cast<U: Real>(&self) -> SkelNet<U> {
        SkelNet {
            config: self.config.clone(),
            vocab_size: self.vocab_size,
            feature_dim: self.feature_dim,
            store: self.store.cast(),
            ids: self.ids,
        }
    }

    /// Embedding row of a skeleton word.
    pub fn word_embedding(&self, word: usize) -> Result<&[T]> {
        if word >= self.vocab_size {
            return Err(Error::contract(format!("skeleton word index {word} out of range")));
        }
        let m = self.config.embed;
        Ok(&self.store.get(self.ids.embed).data()[word * m..(word + 1) * m])
    }

    fn check_grid(&self, grid: &FeatureGrid) -> Result<()> {
        if grid.dim() != self.feature_dim {
            return Err(Error::contract(format!(
                "feature dim {} does not match model dim {}",
                grid.dim(),
                self.feature_dim
            )));
        }
        Ok(())
    }

    fn check_word(&self, word: usize) -> Result<()> {
        if word >= self.vocab_size {
            return Err(Error::contract(format!(
                "word index {word} out of range for skeleton vocabulary of {}",
                self.vocab_size
            )));
        }
        Ok(())
    }

    // ---- tape-level building blocks ----

    pub fn grid_vars(&self, tape: &mut Tape<'_, T>, grid: &FeatureGrid) -> Result<GridVars> {
        self.check_grid(grid)?;
        let data = grid.values().iter().map(|&v| T::of(v as f64)).collect();
        let feats = tape.input(vec![grid.locations(), grid.dim()], data)?;
        let mean = tape.mean(feats)?;
        let proj = if self.config.attention {
            let u = tape.param(self.ids.att_feat);
            Some(tape.matmul_t(feats, u)?)
        } else {
            None
        };
        Ok(GridVars { feats, proj, mean })
    }

    fn encoded_vars(&self, tape: &mut Tape<'_, T>, enc: &EncodedGrid<T>) -> Result<GridVars> {
        let n = enc.locations();
        let feats = tape.input(vec![n, enc.dim], enc.feats.clone())?;
        let mean = tape.input(vec![enc.dim], enc.mean.clone())?;
        let proj = if self.config.attention {
            Some(tape.input(vec![n, self.config.attention_hidden], enc.proj.clone())?)
        } else {
            None
        };
        Ok(GridVars { feats, proj, mean })
    }

    pub fn initial_vars(&self, tape: &mut Tape<'_, T>, g: &GridVars) -> Result<LstmVars> {
        let affine = |tape: &mut Tape<'_, T>, w: ParamId, b: ParamId| -> Result<Var> {
            let (w, b) = (tape.param(w), tape.param(b));
            let x = tape.matmul(w, g.mean)?;
            tape.add(x, b)
        };
        let h = affine(tape, self.ids.init_h_w, self.ids.init_h_b)?;
        let c = affine(tape, self.ids.init_c_w, self.ids.init_c_b)?;
        Ok(LstmVars { h, c })
    }

    /// Attention weights `α` over locations for hidden state `h_prev`.
    pub fn attend_vars(&self, tape: &mut Tape<'_, T>, g: &GridVars, h_prev: Var) -> Result<Var> {
        let proj = g
            .proj
            .ok_or_else(|| Error::contract("attention requested with attention disabled"))?;
        let v = tape.param(self.ids.att_hidden);
        let b = tape.param(self.ids.att_bias);
        let w = tape.param(self.ids.att_score);
        let vh = tape.matmul(v, h_prev)?;
        let vh = tape.add(vh, b)?;
        let pre = tape.add_row(proj, vh)?;
        let act = tape.tanh(pre);
        let scores = tape.matmul(act, w)?;
        tape.softmax(scores)
    }

    /// One LSTM transition on input `[embed(word); z]`.
    pub fn cell_vars(&self, tape: &mut Tape<'_, T>, word: usize, z: Var, state: LstmVars) -> Result<LstmVars> {
        self.check_word(word)?;
        let h = self.config.hidden;
        let table = tape.param(self.ids.embed);
        let emb = tape.lookup(table, word)?;
        let x = tape.concat(&[emb, z, state.h])?;
        let w = tape.param(self.ids.lstm_w);
        let b = tape.param(self.ids.lstm_b);
        let gates = tape.matmul(w, x)?;
        let gates = tape.add(gates, b)?;
        lstm_update(tape, gates, state.c, h)
    }

    pub fn logits_vars(&self, tape: &mut Tape<'_, T>, h: Var) -> Result<Var> {
        let w = tape.param(self.ids.out_w);
        let b = tape.param(self.ids.out_b);
        let o = tape.matmul(w, h)?;
        tape.add(o, b)
    }

    pub fn step_vars(&self, tape: &mut Tape<'_, T>, g: &GridVars, state: LstmVars, prev_word: usize) -> Result<StepVars> {
        let (alpha, z) = if self.config.attention {
            let alpha = self.attend_vars(tape, g, state.h)?;
            let z = tape.matmul(alpha, g.feats)?;
            (Some(alpha), z)
        } else {
            (None, g.mean)
        };
        let next = self.cell_vars(tape, prev_word, z, state)?;
        let logits = self.logits_vars(tape, next.h)?;
        Ok(StepVars {
            alpha,
            z,
            state: next,
            logits,
        })
    }

    /// Teacher-forced loss over `words` followed by EOS; returns the summed
    /// cross-entropy and the number of predicted tokens.
    pub fn sequence_loss(&self, tape: &mut Tape<'_, T>, grid: &FeatureGrid, words: &[usize]) -> Result<(Var, usize)> {
        let g = self.grid_vars(tape, grid)?;
        let mut state = self.initial_vars(tape, &g)?;
        let mut prev = BOS;
        let mut total: Option<Var> = None;
        for &target in words.iter().chain(std::iter::once(&EOS)) {
            self.check_word(target)?;
            let step = self.step_vars(tape, &g, state, prev)?;
            let ce = tape.cross_entropy(step.logits, target)?;
            total = Some(match total {
                Some(t) => tape.add(t, ce)?,
                None => ce,
            });
            state = step.state;
            prev = target;
        }
        Ok((total.expect("at least the EOS step"), words.len() + 1))
    }

    // ---- inference ----

    pub fn encode(&self, grid: &FeatureGrid) -> Result<EncodedGrid<T>> {
        let mut tape = Tape::new(&self.store);
        let g = self.grid_vars(&mut tape, grid)?;
        Ok(EncodedGrid {
            side: grid.side(),
            dim: grid.dim(),
            feats: tape.value(g.feats).to_vec(),
            proj: g.proj.map(|p| tape.value(p).to_vec()).unwrap_or_default(),
            mean: tape.value(g.mean).to_vec(),
        })
    }

    pub fn initial_state(&self, enc: &EncodedGrid<T>) -> Result<SkelState<T>> {
        let mut tape = Tape::new(&self.store);
        let g = self.encoded_vars(&mut tape, enc)?;
        let s = self.initial_vars(&mut tape, &g)?;
        Ok(SkelState {
            h: tape.value(s.h).to_vec(),
            c: tape.value(s.c).to_vec(),
            t: 0,
        })
    }

    fn state_vars(&self, tape: &mut Tape<'_, T>, state: &SkelState<T>) -> Result<LstmVars> {
        let n = self.config.hidden;
        if state.h.len() != n || state.c.len() != n {
            return Err(Error::contract(format!(
                "skeleton state of width {} for hidden size {n}",
                state.h.len()
            )));
        }
        Ok(LstmVars {
            h: tape.input(vec![n], state.h.clone())?,
            c: tape.input(vec![n], state.c.clone())?,
        })
    }

    /// Pre-word attention map for the hidden state of `state`.
    pub fn attend(&self, enc: &EncodedGrid<T>, state: &SkelState<T>) -> Result<AttentionMap> {
        let mut tape = Tape::new(&self.store);
        let g = self.encoded_vars(&mut tape, enc)?;
        let s = self.state_vars(&mut tape, state)?;
        let alpha = self.attend_vars(&mut tape, &g, s.h)?;
        Ok(to_map(enc.side, tape.value(alpha)))
    }

    pub fn step(&self, state: &SkelState<T>, prev_word: usize, enc: &EncodedGrid<T>) -> Result<SkelStep<T>> {
        let mut tape = Tape::new(&self.store);
        let g = self.encoded_vars(&mut tape, enc)?;
        let s = self.state_vars(&mut tape, state)?;
        let out = self.step_vars(&mut tape, &g, s, prev_word)?;
        tape.check_finite(out.logits, "skeleton logits")?;
        Ok(SkelStep {
            state: SkelState {
                h: tape.value(out.state.h).to_vec(),
                c: tape.value(out.state.c).to_vec(),
                t: state.t + 1,
            },
            distribution: distribution(tape.value(out.logits)),
            alpha: out.alpha.map(|a| to_map(enc.side, tape.value(a))),
            z: tape.value(out.z).to_vec(),
        })
    }

    /// `P_ij` for every location: the step from `state` on `prev_word` with
    /// the context replaced by `v_ij` and the recurrent state held fixed.
    pub fn per_location_distributions(
        &self,
        state: &SkelState<T>,
        prev_word: usize,
        enc: &EncodedGrid<T>,
    ) -> Result<Vec<WordDistribution>> {
        let mut tape = Tape::new(&self.store);
        let s = self.state_vars(&mut tape, state)?;
        (0..enc.locations())
            .map(|k| {
                let v = tape.vector(enc.location(k));
                let next = self.cell_vars(&mut tape, prev_word, v, s)?;
                let logits = self.logits_vars(&mut tape, next.h)?;
                Ok(distribution(tape.value(logits)))
            })
            .collect()
    }

    /// `P_ij` from re-running the whole input prefix (BOS first) with the
    /// context fixed to `v_ij` at every step.
    pub fn per_location_distributions_rerun(&self, inputs: &[usize], enc: &EncodedGrid<T>) -> Result<Vec<WordDistribution>> {
        if inputs.first() != Some(&BOS) {
            return Err(Error::contract("re-run prefix must start with BOS"));
        }
        let init = self.initial_state(enc)?;
        let mut tape = Tape::new(&self.store);
        let s0 = self.state_vars(&mut tape, &init)?;
        (0..enc.locations())
            .map(|k| {
                let v = tape.vector(enc.location(k));
                let mut s = s0;
                for &w in inputs {
                    s = self.cell_vars(&mut tape, w, v, s)?;
                }
                let logits = self.logits_vars(&mut tape, s.h)?;
                Ok(distribution(tape.value(logits)))
            })
            .collect()
    }

    /// Per-location distributions using the configured mode. `inputs` is the
    /// full input prefix ending with the word fed at this step; `state` is
    /// the state before the step.
    pub fn location_distributions(
        &self,
        state: &SkelState<T>,
        inputs: &[usize],
        enc: &EncodedGrid<T>,
    ) -> Result<Vec<WordDistribution>> {
        let prev = *inputs.last().ok_or_else(|| Error::contract("empty input prefix"))?;
        match self.config.per_location {
            PerLocationMode::Substitution => self.per_location_distributions(state, prev, enc),
            PerLocationMode::FullRerun => self.per_location_distributions_rerun(inputs, enc),
        }
    }
}

pub(crate) fn lstm_update<T: Real>(tape: &mut Tape<'_, T>, gates: Var, c_prev: Var, h: usize) -> Result<LstmVars> {
    let i = tape.slice(gates, 0, h)?;
    let f = tape.slice(gates, h, h)?;
    let g = tape.slice(gates, 2 * h, h)?;
    let o = tape.slice(gates, 3 * h, h)?;
    let i = tape.sigmoid(i);
    let f = tape.sigmoid(f);
    let g = tape.tanh(g);
    let o = tape.sigmoid(o);
    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(keep, write)?;
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc)?;
    Ok(LstmVars { h, c })
}

pub(crate) fn distribution<T: Real>(logits: &[T]) -> WordDistribution {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.f64()));
    let exps: Vec<f64> = logits.iter().map(|v| (v.f64() - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    WordDistribution {
        probs: exps.into_iter().map(|e| e / z).collect(),
    }
}

fn to_map<T: Real>(side: usize, weights: &[T]) -> AttentionMap {
    AttentionMap {
        side,
        weights: weights.iter().map(|w| w.f64()).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_config() -> SkelConfig {
        SkelConfig {
            hidden: 16,
            embed: 8,
            attention_hidden: 8,
            ..SkelConfig::default()
        }
    }

    fn random_grid(side: usize, dim: usize, seed: u64) -> FeatureGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..side * side * dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        FeatureGrid::new(side, dim, values).unwrap()
    }

    #[test]
    fn zero_model_attends_uniformly_and_predicts_uniformly() {
        let net = SkelNet::<f32>::zeros(small_config(), 7, 8).unwrap();
        let grid = random_grid(3, 8, 1);
        let enc = net.encode(&grid).unwrap();
        let s0 = net.initial_state(&enc).unwrap();
        let alpha = net.attend(&enc, &s0).unwrap();
        for &w in &alpha.weights {
            assert!((w - 1.0 / 9.0).abs() < 1e-7);
        }
        let step = net.step(&s0, BOS, &enc).unwrap();
        for &p in &step.distribution.probs {
            assert!((p - 1.0 / 7.0).abs() < 1e-7);
        }
    }

    #[test]
    fn single_location_attention_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = SkelNet::<f32>::new(small_config(), 7, 8, &mut rng).unwrap();
        let grid = random_grid(1, 8, 2);
        let enc = net.encode(&grid).unwrap();
        let s0 = net.initial_state(&enc).unwrap();
        let alpha = net.attend(&enc, &s0).unwrap();
        assert_eq!(alpha.weights.len(), 1);
        assert!((alpha.weights[0] - 1.0).abs() < 1e-7);

        // With one location, P_11 equals P_attend.
        let step = net.step(&s0, BOS, &enc).unwrap();
        let grid_p = net.per_location_distributions(&s0, BOS, &enc).unwrap();
        for (a, b) in step.distribution.probs.iter().zip(&grid_p[0].probs) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn random_attention_is_a_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = SkelNet::<f32>::new(small_config(), 9, 8, &mut rng).unwrap();
        for seed in 0..20 {
            let grid = random_grid(4, 8, seed);
            let enc = net.encode(&grid).unwrap();
            let mut s = net.initial_state(&enc).unwrap();
            for w in [BOS, 3, 4] {
                let out = net.step(&s, w, &enc).unwrap();
                let a = out.alpha.unwrap();
                assert!(a.weights.iter().all(|&x| x >= 0.0));
                assert!((a.total() - 1.0).abs() < 1e-6);
                assert!((out.distribution.probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                s = out.state;
            }
        }
    }

    #[test]
    fn context_examples() {
        let values: Vec<f32> = (0..3 * 3 * 2).map(|v| v as f32).collect();
        let grid = FeatureGrid::new(3, 2, values).unwrap();
        let z = context(&grid, &AttentionMap::uniform(3)).unwrap();
        let mean = grid.mean();
        assert!((z[0] - mean[0] as f64).abs() < 1e-12 && (z[1] - mean[1] as f64).abs() < 1e-12);
        let mut one_hot = AttentionMap {
            side: 3,
            weights: vec![0.0; 9],
        };
        one_hot.weights[2 * 3 + 1] = 1.0;
        let z = context(&grid, &one_hot).unwrap();
        assert_eq!(z, vec![grid.cell(2, 1)[0] as f64, grid.cell(2, 1)[1] as f64]);
        assert!(context(&grid, &AttentionMap::uniform(2)).is_err());
    }

    #[test]
    fn step_is_deterministic_and_checks_indices() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = SkelNet::<f32>::new(small_config(), 9, 8, &mut rng).unwrap();
        let enc = net.encode(&random_grid(2, 8, 9)).unwrap();
        let s0 = net.initial_state(&enc).unwrap();
        let a = net.step(&s0, BOS, &enc).unwrap();
        let b = net.step(&s0, BOS, &enc).unwrap();
        assert_eq!(a.distribution, b.distribution);
        assert_eq!(a.state, b.state);
        assert!(matches!(net.step(&s0, 9, &enc), Err(Error::Contract(_))));
        assert!(net.encode(&random_grid(2, 5, 0)).is_err());
    }

    #[test]
    fn identical_cells_give_identical_location_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let net = SkelNet::<f32>::new(small_config(), 9, 8, &mut rng).unwrap();
        let cell: Vec<f32> = (0..8).map(|v| v as f32 * 0.1).collect();
        let grid = FeatureGrid::new(3, 8, cell.repeat(9)).unwrap();
        let enc = net.encode(&grid).unwrap();
        let s0 = net.initial_state(&enc).unwrap();
        let ps = net.per_location_distributions(&s0, BOS, &enc).unwrap();
        for p in &ps[1..] {
            assert_eq!(p, &ps[0]);
        }
        let refined = refine_attention(&ps[0], &ps, &AttentionMap::uniform(3)).unwrap();
        for &w in &refined.map.weights {
            assert!((w - 1.0 / 9.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rerun_with_bos_only_matches_substitution_from_initial_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net = SkelNet::<f32>::new(small_config(), 9, 8, &mut rng).unwrap();
        let enc = net.encode(&random_grid(2, 8, 4)).unwrap();
        let s0 = net.initial_state(&enc).unwrap();
        let sub = net.per_location_distributions(&s0, BOS, &enc).unwrap();
        let rerun = net.per_location_distributions_rerun(&[BOS], &enc).unwrap();
        assert_eq!(sub, rerun);
        assert!(net.per_location_distributions_rerun(&[3], &enc).is_err());
    }

    #[test]
    fn refine_two_locations() {
        let p = WordDistribution { probs: vec![0.9, 0.1] };
        let grid = [
            WordDistribution { probs: vec![1.0, 0.0] },
            WordDistribution { probs: vec![0.0, 1.0] },
        ];
        let pre = AttentionMap {
            side: 1,
            weights: vec![0.5, 0.5],
        };
        let r = refine_attention(&p, &grid, &pre).unwrap();
        assert!(!r.fell_back);
        assert!((r.map.weights[0] - 0.9).abs() < 1e-12);
        assert!((r.map.weights[1] - 0.1).abs() < 1e-12);

        let p = WordDistribution { probs: vec![1.0, 0.0] };
        let zero = [
            WordDistribution { probs: vec![0.0, 1.0] },
            WordDistribution { probs: vec![0.0, 1.0] },
        ];
        let r = refine_attention(&p, &zero, &pre).unwrap();
        assert!(r.fell_back);
        assert_eq!(r.map, pre);
        assert!(refine_attention(&p, &zero[..1], &pre).is_err());
    }

    #[test]
    fn attention_off_uses_mean_feature() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cfg = SkelConfig {
            attention: false,
            ..small_config()
        };
        let net = SkelNet::<f32>::new(cfg, 9, 8, &mut rng).unwrap();
        let grid = random_grid(2, 8, 5);
        let enc = net.encode(&grid).unwrap();
        let s0 = net.initial_state(&enc).unwrap();
        let out = net.step(&s0, BOS, &enc).unwrap();
        assert!(out.alpha.is_none());
        assert_eq!(out.z, grid.mean());
    }

    #[test]
    fn full_step_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = SkelNet::<f32>::new(small_config(), 10, 8, &mut rng).unwrap().cast::<f64>();
        // The tape reads parameters from the store it is given; `net` only
        // supplies shapes and ids.
        let mut store = net.store.clone();
        let grid = random_grid(2, 8, 12);
        let words = [4usize, 7, 5];
        let report = grad_check(
            &mut store,
            |tape| net.sequence_loss(tape, &grid, &words).map(|(l, _)| l),
            1e-4,
            1e-4,
            1,
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
        assert_eq!(report.checked, net.store.parameter_count());
    }
}
