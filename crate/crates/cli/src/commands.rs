use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use c2f_core::attrnet::AttrNet;
use c2f_core::checks::{attr_gradient_check, attr_input_gradient_check, skel_gradient_check, CheckDims};
use c2f_core::config::{AttrConfig, SkelConfig, TrainConfig};
use c2f_core::corpus::{
    load_split, preprocess, read_corpus_file, read_feature_file, synth_generate, write_split, DatasetManifest,
    FeatureGrid, ManifestFile, Vocabulary, MANIFEST_VERSION, UNK,
};
use c2f_core::decompose::{decomposition_stats, fuse};
use c2f_core::metrics::{uniqueness_stats, EvalPair, EvalReport};
use c2f_core::numerics::{load_checkpoint, save_checkpoint, CheckpointManifest, GradCheckReport, ParameterStore, MANIFEST_FILE};
use c2f_core::pipeline::{format_trace, CaptionOutput, Captioner};
use c2f_core::skelnet::SkelNet;
use c2f_core::train::{attr_examples, skel_examples, train, TrainLog, TrainState, Trainable};
use c2f_core::treebank::read_tree_file;
use log::{info, warn};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{require_path, RunConfig};
use crate::failure::{Failure, Outcome};
use crate::{CaptionArgs, DecomposeArgs, EvalArgs, GradcheckArgs, ReportFormat, SynthArgs, TrainArgs, TrainAttrArgs};

const SKEL_VOCAB: &str = "skeleton.vocab";
const ATTR_VOCAB: &str = "attribute.vocab";
const NOUNLIKE: &str = "nounlike.txt";
const LOSS_CURVE: &str = "loss.tsv";

fn create_dir(dir: &Path) -> Outcome<()> {
    fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Outcome<()> {
    fs::write(path, contents).map_err(|e| Failure::io(path, e))
}

pub fn synth(mut cfg: RunConfig, a: SynthArgs) -> Outcome<()> {
    if let Some(n) = a.train {
        cfg.synth.train = n;
    }
    if let Some(n) = a.val {
        cfg.synth.val = n;
    }
    if let Some(n) = a.test {
        cfg.synth.test = n;
    }
    if cfg.synth.train == 0 {
        return Err(Failure::usage("training split must hold at least one image"));
    }
    create_dir(&a.out)?;
    let mut splits = Vec::new();
    for (name, count) in [("train", cfg.synth.train), ("val", cfg.synth.val), ("test", cfg.synth.test)] {
        if count == 0 {
            continue;
        }
        let s = synth_generate(&cfg.synth.generator, name, count, cfg.seed)?;
        splits.push(write_split(&a.out, &s.manifest)?);
        info!("{name}: {count} images");
    }
    let manifest = ManifestFile {
        format_version: MANIFEST_VERSION,
        seed: Some(cfg.seed),
        synth: Some(cfg.synth.generator.clone()),
        splits,
    };
    manifest.save(&a.out.join("manifest.toml"))?;
    cfg.echo(&a.out)
}

pub fn decompose(cfg: RunConfig, a: DecomposeArgs) -> Outcome<()> {
    let trees = require_path("tree file", Some(&a.trees))?;
    let mut dump = String::new();
    let mut decomposed = Vec::new();
    let mut malformed = 0usize;
    for line in read_tree_file(&trees)? {
        let tree = match line.tree {
            Ok(t) => t,
            Err(e) => {
                warn!("line {}: skipping malformed tree: {e}", line.line);
                malformed += 1;
                continue;
            }
        };
        let d = c2f_core::decompose::decompose(&tree);
        if fuse(&d) != tree.leaf_tokens() {
            return Err(Failure::data(format!(
                "line {}: fusing the decomposition does not give back the caption",
                line.line
            )));
        }
        dump.push_str(&d.to_dump_line()?);
        dump.push('\n');
        decomposed.push(d);
    }
    let stats = decomposition_stats(&decomposed);
    let mut summary = String::new();
    let _ = writeln!(summary, "captions = {}", stats.captions);
    let _ = writeln!(summary, "malformed = {malformed}");
    let _ = writeln!(summary, "mean_skeleton_length = {}", stats.mean_skeleton_length);
    let _ = writeln!(summary, "np_heads = {}", stats.np_heads);
    let _ = writeln!(summary, "mean_attributes_per_head = {}", stats.mean_attributes_per_head);
    match a.out {
        Some(dir) => {
            create_dir(&dir)?;
            write_file(&dir.join("decomposition.txt"), dump)?;
            write_file(&dir.join("stats.toml"), &summary)?;
            cfg.echo(&dir)?;
            print!("{summary}");
        }
        None => {
            print!("{dump}");
            eprint!("{summary}");
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SkelHeader {
    model: SkelConfig,
    vocab_size: usize,
    feature_dim: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AttrHeader {
    model: AttrConfig,
    vocab_size: usize,
    feature_dim: usize,
    skel_embed: usize,
    skel_hidden: usize,
}

fn to_table<T: Serialize>(v: &T) -> Outcome<toml::Table> {
    toml::Table::try_from(v).map_err(|e| Failure::data(format!("checkpoint header: {e}")))
}

fn from_table<T: for<'de> Deserialize<'de>>(t: &toml::Table, dir: &Path) -> Outcome<T> {
    t.clone()
        .try_into()
        .map_err(|e| Failure::data(format!("{}: bad model header: {e}", dir.display())))
}

fn load_kind(dir: &Path, kind: &str) -> Outcome<(CheckpointManifest, ParameterStore<f32>)> {
    if !dir.join(MANIFEST_FILE).exists() {
        return Err(Failure::usage(format!("no {kind} checkpoint in {}", dir.display())));
    }
    let (m, store) = load_checkpoint(dir)?;
    if m.kind != kind {
        return Err(Failure::data(format!(
            "{} holds a {} checkpoint, expected {kind}",
            dir.display(),
            m.kind
        )));
    }
    Ok((m, store))
}

struct LoadedSkel {
    net: SkelNet,
    vocab: Vocabulary,
    manifest: CheckpointManifest,
}

fn load_skel(dir: &Path) -> Outcome<LoadedSkel> {
    let (manifest, store) = load_kind(dir, "skel")?;
    let h: SkelHeader = from_table(&manifest.config, dir)?;
    let vocab = Vocabulary::load(&dir.join(SKEL_VOCAB))?;
    manifest.expect_vocab("skeleton", &vocab.hash())?;
    let net = SkelNet::from_store(h.model, h.vocab_size, h.feature_dim, store)?;
    Ok(LoadedSkel { net, vocab, manifest })
}

struct LoadedAttr {
    net: AttrNet,
    vocab: Vocabulary,
    nounlike: HashSet<usize>,
    manifest: CheckpointManifest,
}

fn load_attr(dir: &Path, skel_vocab: &Vocabulary) -> Outcome<LoadedAttr> {
    let (manifest, store) = load_kind(dir, "attr")?;
    let h: AttrHeader = from_table(&manifest.config, dir)?;
    let vocab = Vocabulary::load(&dir.join(ATTR_VOCAB))?;
    manifest.expect_vocab("attribute", &vocab.hash())?;
    manifest.expect_vocab("skeleton", &skel_vocab.hash())?;
    let net = AttrNet::from_store(h.model, h.vocab_size, h.feature_dim, h.skel_embed, h.skel_hidden, store)?;
    let p = dir.join(NOUNLIKE);
    let text = fs::read_to_string(&p).map_err(|e| Failure::io(&p, e))?;
    let nounlike = text
        .lines()
        .filter(|l| !l.is_empty())
        .map(|w| {
            skel_vocab
                .contains(w)
                .then(|| skel_vocab.encode(w))
                .ok_or_else(|| Failure::data(format!("{}: {w:?} is not a skeleton word", p.display())))
        })
        .collect::<Outcome<_>>()?;
    Ok(LoadedAttr {
        net,
        vocab,
        nounlike,
        manifest,
    })
}

fn load_splits(data: &Path) -> Outcome<(DatasetManifest, DatasetManifest)> {
    let (train_set, report) = load_split(data, "train")?;
    info!("train split: {report:?}");
    if train_set.is_empty() {
        return Err(Failure::data("training split holds no usable records"));
    }
    let has_val = ManifestFile::load(data)?.splits.iter().any(|s| s.name == "val");
    let val = if has_val {
        load_split(data, "val")?.0
    } else {
        DatasetManifest {
            split: "val".into(),
            records: Vec::new(),
            seed: None,
        }
    };
    Ok((train_set, val))
}

fn apply_train_flags(t: &mut TrainConfig, a: &TrainArgs) {
    if let Some(e) = a.epochs {
        t.epochs = e;
    }
    if let Some(lr) = a.learning_rate {
        t.learning_rate = lr;
    }
    if let Some(b) = a.batch_size {
        t.batch_size = b;
    }
}

fn resume_state(m: &CheckpointManifest) -> TrainState {
    TrainState {
        step: m.step,
        epoch: m.epoch,
        learning_rate: m.learning_rate,
        lr_halved: m.lr_halved,
        best_val_loss: m.best_val_loss,
    }
}

fn stamp(m: &mut CheckpointManifest, s: &TrainState) {
    m.step = s.step;
    m.epoch = s.epoch;
    m.learning_rate = s.learning_rate;
    m.lr_halved = s.lr_halved;
    m.best_val_loss = s.best_val_loss;
}

fn write_curve(dir: &Path, log: &TrainLog, append: bool) -> Outcome<()> {
    let p = dir.join(LOSS_CURVE);
    let mut buf = Vec::new();
    log.write_curve(&mut buf).map_err(|e| Failure::io(&p, e))?;
    let mut f = fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(&p)
        .map_err(|e| Failure::io(&p, e))?;
    f.write_all(&buf).map_err(|e| Failure::io(&p, e))
}

fn report_epochs(log: &TrainLog) {
    for e in &log.epochs {
        println!(
            "epoch {} train_loss {:.6} val_loss {} lr {}",
            e.epoch,
            e.train_loss,
            e.val_loss.map_or("-".to_owned(), |v| format!("{v:.6}")),
            e.learning_rate
        );
    }
}

fn check_resume(a: &TrainArgs) -> Outcome<bool> {
    let present = a.out.join(MANIFEST_FILE).exists();
    if a.resume && !present {
        return Err(Failure::usage(format!("--resume given but {} holds no checkpoint", a.out.display())));
    }
    Ok(a.resume)
}

pub fn train_skel(mut cfg: RunConfig, a: TrainArgs) -> Outcome<()> {
    apply_train_flags(&mut cfg.train_skel, &a);
    let data = require_path("dataset manifest", a.data.as_ref().or(cfg.paths.data.as_ref()))?;
    let resume = check_resume(&a)?;
    let (train_set, val) = load_splits(&data)?;
    let vocab = Vocabulary::build(train_set.skeleton_sequences(), cfg.vocab.skeleton_threshold)?;

    let (mut net, mut state, mut manifest) = if resume {
        let l = load_skel(&a.out)?;
        if l.vocab != vocab {
            return Err(Failure::data("training data yields a different skeleton vocabulary than the checkpoint"));
        }
        let state = resume_state(&l.manifest);
        (l.net, state, l.manifest)
    } else {
        let feature_dim = train_set.records[0].features.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let net = SkelNet::new(cfg.skel.clone(), vocab.len(), feature_dim, &mut rng)?;
        let header = SkelHeader {
            model: cfg.skel.clone(),
            vocab_size: vocab.len(),
            feature_dim,
        };
        let mut m = CheckpointManifest::new("skel", to_table(&header)?);
        m.vocab_hashes.insert("skeleton".into(), vocab.hash());
        (net, TrainState::new(&cfg.train_skel), m)
    };
    let train_x = skel_examples(&train_set, &vocab);
    let val_x = skel_examples(&val, &vocab);
    let log = train(&mut net, &train_x, &val_x, &cfg.train_skel, &mut state)?;
    report_epochs(&log);

    create_dir(&a.out)?;
    stamp(&mut manifest, &state);
    save_checkpoint(&a.out, &manifest, net.store())?;
    vocab.save(&a.out.join(SKEL_VOCAB))?;
    write_curve(&a.out, &log, resume)?;
    cfg.paths.data = Some(data);
    cfg.echo(&a.out)
}

pub fn train_attr(mut cfg: RunConfig, a: TrainAttrArgs) -> Outcome<()> {
    let t = &a.train;
    apply_train_flags(&mut cfg.train_attr, t);
    let data = require_path("dataset manifest", t.data.as_ref().or(cfg.paths.data.as_ref()))?;
    let skel_dir = require_path("skeleton checkpoint", a.skel.as_ref().or(cfg.paths.skel.as_ref()))?;
    let resume = check_resume(t)?;
    let skel = load_skel(&skel_dir)?;
    let (train_set, val) = load_splits(&data)?;
    let vocab = Vocabulary::build(train_set.attribute_sequences(), cfg.vocab.attribute_threshold)?;
    let nounlike: BTreeSet<usize> = train_set
        .records
        .iter()
        .flat_map(|r| r.decomposition.np_heads())
        .map(|h| skel.vocab.encode(&h.surface))
        .filter(|&i| i > UNK)
        .collect();

    let (mut net, mut state, mut manifest) = if resume {
        let l = load_attr(&t.out, &skel.vocab)?;
        if l.vocab != vocab {
            return Err(Failure::data("training data yields a different attribute vocabulary than the checkpoint"));
        }
        let state = resume_state(&l.manifest);
        (l.net, state, l.manifest)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        let sk = &skel.net;
        let header = AttrHeader {
            model: cfg.attr.clone(),
            vocab_size: vocab.len(),
            feature_dim: sk.feature_dim(),
            skel_embed: sk.config.embed,
            skel_hidden: sk.config.hidden,
        };
        let net = AttrNet::new(
            cfg.attr.clone(),
            vocab.len(),
            header.feature_dim,
            header.skel_embed,
            header.skel_hidden,
            &mut rng,
        )?;
        let mut m = CheckpointManifest::new("attr", to_table(&header)?);
        m.vocab_hashes.insert("attribute".into(), vocab.hash());
        m.vocab_hashes.insert("skeleton".into(), skel.vocab.hash());
        (net, TrainState::new(&cfg.train_attr), m)
    };
    let train_x = attr_examples(&skel.net, &net.config, &train_set, &skel.vocab, &vocab)?;
    let val_x = attr_examples(&skel.net, &net.config, &val, &skel.vocab, &vocab)?;
    let log = train(&mut net, &train_x, &val_x, &cfg.train_attr, &mut state)?;
    report_epochs(&log);

    create_dir(&t.out)?;
    stamp(&mut manifest, &state);
    save_checkpoint(&t.out, &manifest, net.store())?;
    vocab.save(&t.out.join(ATTR_VOCAB))?;
    let mut words = String::new();
    for &i in &nounlike {
        let _ = writeln!(words, "{}", skel.vocab.decode(i).unwrap_or_default());
    }
    write_file(&t.out.join(NOUNLIKE), words)?;
    write_curve(&t.out, &log, resume)?;
    cfg.paths.data = Some(data);
    cfg.paths.skel = Some(skel_dir);
    cfg.echo(&t.out)
}

fn caption_inputs(cfg: &RunConfig, a: &CaptionArgs) -> Outcome<Vec<(String, FeatureGrid)>> {
    let grids = match &a.features {
        Some(f) => read_feature_file(&require_path("feature file", Some(f))?)?,
        None => {
            let data = require_path("dataset manifest", a.data.as_ref().or(cfg.paths.data.as_ref()))?;
            let m = ManifestFile::load(&data)?;
            let entry = m.split(&a.split)?;
            let dir = data.parent().unwrap_or(Path::new("."));
            read_feature_file(&dir.join(&entry.features))?
        }
    };
    if a.images == "all" {
        return Ok(grids);
    }
    let mut by_id: HashMap<String, FeatureGrid> = grids.into_iter().collect();
    a.images
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|id| {
            by_id
                .remove(id)
                .map(|g| (id.to_owned(), g))
                .ok_or_else(|| Failure::data(format!("no features for image {id:?}")))
        })
        .collect()
}

pub fn caption(mut cfg: RunConfig, a: CaptionArgs) -> Outcome<()> {
    let d = &mut cfg.decode;
    if let Some(g) = a.gamma_skel {
        d.gamma_skel = g;
    }
    if let Some(g) = a.gamma_attr {
        d.gamma_attr = g;
    }
    if let Some(b) = a.beam_skel {
        d.beam_skel = b;
    }
    if let Some(b) = a.beam_attr {
        d.beam_attr = b;
    }
    if a.post_word_alpha.is_some() {
        d.post_word_alpha = a.post_word_alpha;
    }
    if let Some(j) = a.jobs {
        cfg.jobs = j;
    }
    cfg.decode.validate()?;
    let skel_dir = require_path("skeleton checkpoint", a.skel.as_ref().or(cfg.paths.skel.as_ref()))?;
    let attr_dir = require_path("attribute checkpoint", a.attr.as_ref().or(cfg.paths.attr.as_ref()))?;
    let skel = load_skel(&skel_dir)?;
    let attr = load_attr(&attr_dir, &skel.vocab)?;
    let inputs = caption_inputs(&cfg, &a)?;

    let captioner = Captioner {
        skel: &skel.net,
        attr: &attr.net,
        skel_vocab: &skel.vocab,
        attr_vocab: &attr.vocab,
        decode: cfg.decode.clone(),
        nounlike: Some(&attr.nounlike),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Failure::usage(format!("worker pool: {e}")))?;
    let outputs: Vec<c2f_core::Result<CaptionOutput>> =
        pool.install(|| inputs.par_iter().map(|(_, g)| captioner.caption(g)).collect());

    let mut captions = String::new();
    let mut trace = String::new();
    for ((id, _), out) in inputs.iter().zip(outputs) {
        let out = out?;
        let _ = writeln!(captions, "{id}\t{}", out.tokens.join(" "));
        if a.trace {
            trace.push_str(&format_trace(id, &out));
        }
    }
    match &a.out {
        Some(dir) => {
            create_dir(dir)?;
            write_file(&dir.join("captions.tsv"), captions)?;
            if a.trace {
                write_file(&dir.join("trace.txt"), trace)?;
            }
            cfg.paths.skel = Some(skel_dir);
            cfg.paths.attr = Some(attr_dir);
            cfg.echo(dir)
        }
        None => {
            print!("{captions}");
            if a.trace {
                print!("{trace}");
            }
            Ok(())
        }
    }
}

fn tokenized(path: &Path) -> Outcome<Vec<(String, Vec<String>)>> {
    Ok(read_corpus_file(path)?
        .into_iter()
        .map(|(id, c)| (id, preprocess(&c).unwrap_or_default()))
        .collect())
}

pub fn eval(cfg: RunConfig, a: EvalArgs) -> Outcome<()> {
    let cand_path = require_path("candidates file", Some(&a.candidates))?;
    let ref_path = require_path("references file", Some(&a.references))?;
    let candidates = tokenized(&cand_path)?;
    let mut refs: HashMap<String, Vec<Vec<String>>> = HashMap::new();
    for (id, toks) in tokenized(&ref_path)? {
        if toks.is_empty() {
            warn!("{id}: skipping empty reference");
            continue;
        }
        refs.entry(id).or_default().push(toks);
    }
    let pairs = candidates
        .iter()
        .map(|(id, c)| {
            let r = refs
                .get(id)
                .ok_or_else(|| Failure::data(format!("no references for image {id:?}")))?;
            Ok(EvalPair::new(c.clone(), r.clone())?)
        })
        .collect::<Outcome<Vec<_>>>()?;
    let mut report = EvalReport::compute(&pairs, a.without_a, &cfg.cider)?;
    if let Some(train_file) = &a.uniqueness {
        let generated: Vec<Vec<String>> = candidates.iter().map(|(_, c)| c.clone()).collect();
        let training = match train_file {
            Some(p) => Some(
                tokenized(&require_path("training captions file", Some(p))?)?
                    .into_iter()
                    .map(|(_, c)| c)
                    .collect::<Vec<_>>(),
            ),
            None => None,
        };
        report.uniqueness = Some(uniqueness_stats(&generated, training.as_deref())?);
    }
    let table = report.to_table();
    let toml_text = report.to_toml()?;
    match a.format {
        ReportFormat::Table => print!("{table}"),
        ReportFormat::Toml => print!("{toml_text}"),
    }
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        write_file(&dir.join("report.txt"), table)?;
        write_file(&dir.join("report.toml"), toml_text)?;
        cfg.echo(dir)?;
    }
    Ok(())
}

fn print_check(name: &str, r: &GradCheckReport) {
    println!(
        "{name}: checked {} max_rel_error {:.3e} tolerance {:.0e} worst {} {}",
        r.checked,
        r.max_rel_error,
        r.tolerance,
        r.worst.as_ref().map_or("-".to_owned(), |(n, i)| format!("{n}[{i}]")),
        if r.passed { "PASS" } else { "FAIL" }
    );
}

pub fn gradcheck(cfg: RunConfig, a: GradcheckArgs) -> Outcome<()> {
    if a.dim == 0 {
        return Err(Failure::usage("--dim must be positive"));
    }
    let dims = CheckDims::uniform(a.dim);
    let reports = [
        ("skeleton parameters", skel_gradient_check(dims, cfg.seed)?),
        ("attribute parameters", attr_gradient_check(dims, cfg.seed)?),
        ("attribute inputs", attr_input_gradient_check(dims, cfg.seed)?),
    ];
    for (name, r) in &reports {
        print_check(name, r);
    }
    if reports.iter().all(|(_, r)| r.passed) {
        Ok(())
    } else {
        Err(Failure::data("gradient check failed"))
    }
}
