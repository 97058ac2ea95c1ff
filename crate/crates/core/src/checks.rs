//! Finite-difference checks of the full decoders in double precision.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attrnet::{AttrCondition, AttrNet, ConditionVars};
use crate::config::{AttrConfig, SkelConfig};
use crate::corpus::FeatureGrid;
use crate::error::Result;
use crate::numerics::{grad_check, grad_check_inputs, GradCheckReport};
use crate::skelnet::SkelNet;

pub const CHECK_STEP: f64 = 1e-4;
pub const CHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckDims {
    pub hidden: usize,
    pub embed: usize,
    pub attention_hidden: usize,
    pub feature_dim: usize,
    pub grid_side: usize,
    pub vocab: usize,
}

impl CheckDims {
    /// Every width set to `dim`; a 2×2 grid and a 9-word vocabulary.
    pub fn uniform(dim: usize) -> Self {
        CheckDims {
            hidden: dim,
            embed: dim,
            attention_hidden: dim,
            feature_dim: dim,
            grid_side: 2,
            vocab: 9,
        }
    }
}

fn uniform_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Skeleton decoder: attention, LSTM step and output layer over a
/// three-word sentence plus EOS, every parameter entry.
pub fn skel_gradient_check(dims: CheckDims, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = SkelConfig {
        hidden: dims.hidden,
        embed: dims.embed,
        attention_hidden: dims.attention_hidden,
        ..SkelConfig::default()
    };
    let net = SkelNet::<f32>::new(cfg, dims.vocab, dims.feature_dim, &mut rng)?.cast::<f64>();
    let n = dims.grid_side * dims.grid_side * dims.feature_dim;
    let values = uniform_vec(&mut rng, n).into_iter().map(|x| x as f32).collect();
    let grid = FeatureGrid::new(dims.grid_side, dims.feature_dim, values)?;
    let words: Vec<usize> = (0..3).map(|_| rng.random_range(3..dims.vocab)).collect();
    let mut store = net.store.clone();
    grad_check(
        &mut store,
        |tape| net.sequence_loss(tape, &grid, &words).map(|(l, _)| l),
        CHECK_STEP,
        CHECK_TOLERANCE,
        1,
    )
}

fn attr_setup(dims: CheckDims, seed: u64) -> Result<(AttrNet<f64>, AttrCondition, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = AttrConfig {
        hidden: dims.hidden,
        embed: dims.embed,
        ..AttrConfig::default()
    };
    let net = AttrNet::<f32>::new(cfg, dims.vocab, dims.feature_dim, dims.embed, dims.hidden, &mut rng)?.cast::<f64>();
    let cond = AttrCondition {
        z: uniform_vec(&mut rng, dims.feature_dim),
        s: uniform_vec(&mut rng, dims.embed),
        h: uniform_vec(&mut rng, dims.hidden),
    };
    let gold = (0..2).map(|_| rng.random_range(3..dims.vocab)).collect();
    Ok((net, cond, gold))
}

/// Attribute decoder: fused first input, LSTM steps and output layer, with
/// respect to every parameter entry.
pub fn attr_gradient_check(dims: CheckDims, seed: u64) -> Result<GradCheckReport> {
    let (net, cond, gold) = attr_setup(dims, seed)?;
    let mut store = net.store.clone();
    grad_check(
        &mut store,
        |tape| net.sequence_loss(tape, &cond, &gold).map(|(l, _)| l),
        CHECK_STEP,
        CHECK_TOLERANCE,
        1,
    )
}

/// Attribute decoder with respect to its conditioning inputs `z`, `s`, `h`.
pub fn attr_input_gradient_check(dims: CheckDims, seed: u64) -> Result<GradCheckReport> {
    let (net, cond, gold) = attr_setup(dims, seed)?;
    let inputs = vec![cond.z, cond.s, cond.h];
    grad_check_inputs(
        Some(&net.store),
        &inputs,
        |tape, v| {
            let c = ConditionVars {
                z: v[0],
                s: v[1],
                h: v[2],
            };
            net.sequence_loss_vars(tape, c, &gold).map(|(l, _)| l)
        },
        CHECK_STEP,
        CHECK_TOLERANCE,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_models_pass() {
        let dims = CheckDims::uniform(6);
        assert!(skel_gradient_check(dims, 1).unwrap().passed);
        assert!(attr_gradient_check(dims, 1).unwrap().passed);
        assert!(attr_input_gradient_check(dims, 1).unwrap().passed);
    }
}
