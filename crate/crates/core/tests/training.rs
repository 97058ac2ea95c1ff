use c2f_core::attrnet::AttrNet;
use c2f_core::config::{AttrConfig, DecodeConfig, SkelConfig, TrainConfig};
use c2f_core::corpus::{synth_generate, SynthConfig, SynthSplit, Vocabulary, UNK};
use c2f_core::decode::greedy_decode;
use c2f_core::numerics::{load_checkpoint, save_checkpoint, CheckpointManifest, ParameterStore};
use c2f_core::pipeline::{Captioner, SkelBeamState, SkeletonDecoder};
use c2f_core::skelnet::SkelNet;
use c2f_core::train::{attr_examples, evaluate_loss, skel_examples, train, TrainState};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn data(split: &str, n: usize) -> SynthSplit {
    synth_generate(&SynthConfig::default(), split, n, 5).unwrap()
}

fn skel_config() -> SkelConfig {
    SkelConfig {
        hidden: 16,
        embed: 8,
        attention_hidden: 8,
        ..SkelConfig::default()
    }
}

fn train_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        learning_rate: 0.05,
        ..TrainConfig::default()
    }
}

fn bits(store: &ParameterStore<f32>) -> Vec<u32> {
    store
        .ids()
        .flat_map(|id| store.get(id).data().iter().chain(store.accumulator(id)).map(|v| v.to_bits()).collect::<Vec<_>>())
        .collect()
}

#[test]
fn skeleton_loss_decreases_and_runs_reproduce() {
    let tr = data("train", 300);
    let va = data("val", 50);
    let vocab = Vocabulary::build(tr.manifest.skeleton_sequences(), 5).unwrap();
    let tx = skel_examples(&tr.manifest, &vocab);
    let vx = skel_examples(&va.manifest, &vocab);
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = SkelNet::new(skel_config(), vocab.len(), 32, &mut rng).unwrap();
        let before = evaluate_loss(&net, &vx).unwrap();
        let mut state = TrainState::new(&train_config(5));
        let log = train(&mut net, &tx, &vx, &train_config(5), &mut state).unwrap();
        (net, before, log, state)
    };
    let (net_a, before, log_a, state_a) = run();
    let losses: Vec<f64> = log_a.epochs.iter().map(|e| e.train_loss).collect();
    assert_eq!(losses.len(), 5);
    assert!(losses[4] < losses[0], "{losses:?}");
    assert!(log_a.epochs[4].val_loss.unwrap() < before);
    assert_eq!(state_a.epoch, 5);

    let (net_b, _, log_b, _) = run();
    assert_eq!(bits(&net_a.store), bits(&net_b.store));
    let curve = |l: &c2f_core::train::TrainLog| l.curve.iter().map(|(s, v)| (*s, v.to_bits())).collect::<Vec<_>>();
    assert_eq!(curve(&log_a), curve(&log_b));
}

#[test]
fn resume_from_checkpoint_matches_uninterrupted_run() {
    let tr = data("train", 120);
    let vocab = Vocabulary::build(tr.manifest.skeleton_sequences(), 5).unwrap();
    let tx = skel_examples(&tr.manifest, &vocab);
    let fresh = || SkelNet::new(skel_config(), vocab.len(), 32, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();

    let mut straight = fresh();
    let mut s = TrainState::new(&train_config(3));
    train(&mut straight, &tx, &[], &train_config(3), &mut s).unwrap();

    let mut first = fresh();
    let mut s1 = TrainState::new(&train_config(2));
    train(&mut first, &tx, &[], &train_config(2), &mut s1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut header = CheckpointManifest::new("skel", toml::Table::new());
    header.step = s1.step;
    header.epoch = s1.epoch;
    header.learning_rate = s1.learning_rate;
    save_checkpoint(dir.path(), &header, &first.store).unwrap();
    let (m, store) = load_checkpoint(dir.path()).unwrap();
    let mut resumed = SkelNet::from_store(skel_config(), vocab.len(), 32, store).unwrap();
    let mut s2 = TrainState {
        step: m.step,
        epoch: m.epoch,
        learning_rate: m.learning_rate,
        lr_halved: m.lr_halved,
        best_val_loss: m.best_val_loss,
    };
    let log = train(&mut resumed, &tx, &[], &train_config(1), &mut s2).unwrap();
    assert_eq!(log.curve[0].0, s1.step + 1);
    assert_eq!(s2.step, s.step);
    assert_eq!(bits(&resumed.store), bits(&straight.store));
}

#[test]
fn attribute_loss_decreases_and_beam_one_is_greedy() {
    let tr = data("train", 200);
    let vocab = Vocabulary::build(tr.manifest.skeleton_sequences(), 5).unwrap();
    let attr_vocab = Vocabulary::build(tr.manifest.attribute_sequences(), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut skel = SkelNet::new(skel_config(), vocab.len(), 32, &mut rng).unwrap();
    let tx = skel_examples(&tr.manifest, &vocab);
    train(&mut skel, &tx, &[], &train_config(2), &mut TrainState::new(&train_config(2))).unwrap();

    let acfg = AttrConfig {
        hidden: 16,
        embed: 8,
        ..AttrConfig::default()
    };
    let mut attr = AttrNet::new(acfg.clone(), attr_vocab.len(), 32, 8, 16, &mut rng).unwrap();
    let ax = attr_examples(&skel, &acfg, &tr.manifest, &vocab, &attr_vocab).unwrap();
    let before = evaluate_loss(&attr, &ax).unwrap();
    let log = train(&mut attr, &ax, &[], &train_config(3), &mut TrainState::new(&train_config(3))).unwrap();
    assert!(log.epochs[2].train_loss < log.epochs[0].train_loss);
    assert!(evaluate_loss(&attr, &ax).unwrap() < before);

    let decode = DecodeConfig {
        beam_skel: 1,
        gamma_skel: 0.0,
        ..DecodeConfig::default()
    };
    let cap = Captioner {
        skel: &skel,
        attr: &attr,
        skel_vocab: &vocab,
        attr_vocab: &attr_vocab,
        decode: decode.clone(),
        nounlike: None,
    };
    for rec in tr.manifest.records.iter().take(20) {
        let out = cap.caption(&rec.features).unwrap();
        let grid = skel.encode(&rec.features).unwrap();
        let model = SkeletonDecoder { net: &skel, grid: &grid };
        let greedy = greedy_decode(&model, SkelBeamState::new(skel.initial_state(&grid).unwrap()), decode.max_len_skel).unwrap();
        assert!(!greedy.tokens.contains(&UNK));
        assert_eq!(out.skeleton, vocab.decode_words(&greedy.tokens));
    }
}
