//! Mini-batch Adagrad training for both decoders.
//!
//! Each epoch shuffles the examples with a stream keyed by `(seed, epoch)`,
//! averages per-sentence losses over a batch, clips the global gradient
//! norm and takes one Adagrad step. The learning rate is halved once, the
//! first time validation loss fails to improve on its best value.

use std::io::Write;
use std::sync::Arc;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attrnet::{AttrCondition, AttrNet};
use crate::config::{AttrConfig, TrainConfig};
use crate::corpus::{DatasetManifest, FeatureGrid, Vocabulary};
use crate::error::{Error, Result};
use crate::numerics::{ParameterStore, Tape, Var, ADAGRAD_EPSILON};
use crate::pipeline::{attribute_conditions, skeleton_trace};
use crate::skelnet::SkelNet;

#[derive(Debug, Clone)]
pub struct SkelExample {
    pub grid: Arc<FeatureGrid>,
    pub words: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct AttrExample {
    pub cond: AttrCondition,
    pub gold: Vec<usize>,
}

/// A model trainable with [`train`].
pub trait Trainable {
    type Example;

    fn store(&self) -> &ParameterStore<f32>;
    fn store_mut(&mut self) -> &mut ParameterStore<f32>;

    /// Summed cross-entropy of one example and the number of predicted tokens.
    fn example_loss(&self, tape: &mut Tape<'_, f32>, ex: &Self::Example) -> Result<(Var, usize)>;
}

impl Trainable for SkelNet {
    type Example = SkelExample;

    fn store(&self) -> &ParameterStore<f32> {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParameterStore<f32> {
        &mut self.store
    }

    fn example_loss(&self, tape: &mut Tape<'_, f32>, ex: &SkelExample) -> Result<(Var, usize)> {
        self.sequence_loss(tape, &ex.grid, &ex.words)
    }
}

impl Trainable for AttrNet {
    type Example = AttrExample;

    fn store(&self) -> &ParameterStore<f32> {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParameterStore<f32> {
        &mut self.store
    }

    fn example_loss(&self, tape: &mut Tape<'_, f32>, ex: &AttrExample) -> Result<(Var, usize)> {
        self.sequence_loss(tape, &ex.cond, &ex.gold)
    }
}

/// Optimizer progress, stored in checkpoints so a run can resume.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub step: u64,
    pub epoch: u64,
    pub learning_rate: f64,
    pub lr_halved: bool,
    pub best_val_loss: Option<f64>,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig) -> Self {
        TrainState {
            step: 0,
            epoch: 0,
            learning_rate: cfg.learning_rate,
            lr_halved: false,
            best_val_loss: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: u64,
    /// Mean per-token training loss over the epoch.
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochStats>,
    /// `(step, mean per-token batch loss)`.
    pub curve: Vec<(u64, f64)>,
}

impl TrainLog {
    pub fn write_curve<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (step, loss) in &self.curve {
            writeln!(w, "{step}\t{loss}")?;
        }
        Ok(())
    }
}

/// Mean per-token loss over `examples` without updating anything.
pub fn evaluate_loss<M: Trainable>(model: &M, examples: &[M::Example]) -> Result<f64> {
    let mut total = 0f64;
    let mut tokens = 0usize;
    for ex in examples {
        let mut tape = Tape::new(model.store());
        let (loss, n) = model.example_loss(&mut tape, ex)?;
        total += tape.scalar(loss)? as f64;
        tokens += n;
    }
    if tokens == 0 {
        return Err(Error::data("no examples to evaluate"));
    }
    Ok(total / tokens as f64)
}

/// Run `cfg.epochs` more epochs starting from `state`.
pub fn train<M: Trainable>(
    model: &mut M,
    train_set: &[M::Example],
    val_set: &[M::Example],
    cfg: &TrainConfig,
    state: &mut TrainState,
) -> Result<TrainLog> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::data("empty training set"));
    }
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for _ in 0..cfg.epochs {
        let epoch = state.epoch;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        order.sort_unstable();
        order.shuffle(&mut rng);

        let mut epoch_loss = 0f64;
        let mut epoch_tokens = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let mut batch_loss = 0f64;
            let mut batch_tokens = 0usize;
            model.store_mut().zero_grads();
            for &i in batch {
                let grads = {
                    let mut tape = Tape::new(model.store());
                    let (loss, n) = model.example_loss(&mut tape, &train_set[i])?;
                    batch_loss += tape.scalar(loss)? as f64;
                    batch_tokens += n;
                    tape.backward(loss)?
                };
                grads.accumulate_into(model.store_mut());
            }
            let store = model.store_mut();
            store.scale_grads(1.0 / batch.len() as f64);
            store.clip_grad_norm(cfg.clip_norm);
            store.adagrad_step(state.learning_rate, ADAGRAD_EPSILON)?;
            state.step += 1;
            log.curve.push((state.step, batch_loss / batch_tokens as f64));
            epoch_loss += batch_loss;
            epoch_tokens += batch_tokens;
        }
        state.epoch += 1;

        let val_loss = if val_set.is_empty() {
            None
        } else {
            Some(evaluate_loss(model, val_set)?)
        };
        if let Some(v) = val_loss {
            match state.best_val_loss {
                Some(best) if v >= best => {
                    if cfg.halve_lr_on_plateau && !state.lr_halved {
                        state.learning_rate *= 0.5;
                        state.lr_halved = true;
                        info!("validation loss stopped dropping; learning rate now {}", state.learning_rate);
                    }
                }
                _ => state.best_val_loss = Some(v),
            }
        }
        let stats = EpochStats {
            epoch: state.epoch,
            train_loss: epoch_loss / epoch_tokens as f64,
            val_loss,
            learning_rate: state.learning_rate,
        };
        info!(
            "epoch {} train {:.4} val {} lr {}",
            stats.epoch,
            stats.train_loss,
            stats.val_loss.map_or("-".to_owned(), |v| format!("{v:.4}")),
            stats.learning_rate
        );
        log.epochs.push(stats);
    }
    Ok(log)
}

/// Skeleton training examples for a split.
pub fn skel_examples(data: &DatasetManifest, vocab: &Vocabulary) -> Vec<SkelExample> {
    data.records
        .iter()
        .map(|r| SkelExample {
            grid: r.features.clone(),
            words: vocab.encode_all(&r.decomposition.skeleton_words()),
        })
        .collect()
}

/// Attribute training examples: one per gold skeleton token, conditioned on
/// a teacher-forced pass of the frozen skeleton model. Tokens without
/// attributes get an empty (EOS-only) target.
pub fn attr_examples(
    skel: &SkelNet,
    attr_cfg: &AttrConfig,
    data: &DatasetManifest,
    skel_vocab: &Vocabulary,
    attr_vocab: &Vocabulary,
) -> Result<Vec<AttrExample>> {
    let mut out = Vec::new();
    for r in &data.records {
        let grid = skel.encode(&r.features)?;
        let words = skel_vocab.encode_all(&r.decomposition.skeleton_words());
        let records = skeleton_trace(skel, &grid, &words)?;
        let post = attr_cfg.use_post_word_alpha && skel.config.attention;
        let (conds, _) = attribute_conditions(skel, &grid, &records, &words, attr_cfg.hidden_source, post, false)?;
        for (cond, tok) in conds.into_iter().zip(&r.decomposition.skeleton) {
            out.push(AttrExample {
                cond,
                gold: attr_vocab.encode_all(&tok.attributes),
            });
        }
    }
    Ok(out)
}
