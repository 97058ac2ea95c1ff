//! Caption preprocessing, vocabularies, feature files, dataset splits and the
//! synthetic scene generator.

mod features;
mod synth;
mod vocab;

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::warn;
use serde::{Deserialize, Serialize};

pub use features::{
    read_feature_file, read_feature_records, write_feature_file, write_feature_records, FeatureGrid,
};
pub use synth::{sample_rng, synth_generate, Scene, SceneObject, SynthConfig, SynthSplit};
pub use vocab::{Vocabulary, BOS, EOS, UNK};

use crate::decompose::{decompose, DecomposedCaption};
use crate::error::{Error, Result};
use crate::treebank::{parse_tree_text, ParseTree};

/// Lowercase, drop ASCII punctuation, split on whitespace.
pub fn preprocess(raw: &str) -> Result<Vec<String>> {
    let cleaned: String = raw
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .flat_map(char::to_lowercase)
        .collect();
    let tokens: Vec<String> = cleaned.split_whitespace().map(str::to_owned).collect();
    if tokens.is_empty() {
        return Err(Error::data(format!("caption {raw:?} is empty after preprocessing")));
    }
    Ok(tokens)
}

/// Remove every token that is exactly `a`.
pub fn strip_article<S: AsRef<str>>(tokens: &[S]) -> Vec<String> {
    tokens
        .iter()
        .map(AsRef::as_ref)
        .filter(|t| *t != "a")
        .map(str::to_owned)
        .collect()
}

#[derive(Debug, Clone)]
pub struct CaptionRecord {
    pub image_id: String,
    pub features: Arc<FeatureGrid>,
    pub raw: String,
    pub tokens: Vec<String>,
    pub tree: ParseTree,
    pub decomposition: DecomposedCaption,
}

impl CaptionRecord {
    /// Fails when the tree's leaves differ from the preprocessed caption or
    /// the decomposition has an empty skeleton.
    pub fn new(image_id: String, features: Arc<FeatureGrid>, raw: String, tree: ParseTree) -> Result<Self> {
        let tokens = preprocess(&raw)?;
        if tree.leaves() != tokens {
            return Err(Error::data(format!(
                "{image_id}: tree leaves {:?} differ from caption tokens {:?}",
                tree.leaves(),
                tokens
            )));
        }
        let decomposition = decompose(&tree);
        if decomposition.skeleton.is_empty() {
            return Err(Error::data(format!("{image_id}: empty skeleton")));
        }
        Ok(CaptionRecord {
            image_id,
            features,
            raw,
            tokens,
            tree,
            decomposition,
        })
    }

    pub fn skeleton_words(&self) -> Vec<&str> {
        self.decomposition.skeleton_words()
    }
}

#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub split: String,
    pub records: Vec<CaptionRecord>,
    pub seed: Option<u64>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn image_ids(&self) -> HashSet<&str> {
        self.records.iter().map(|r| r.image_id.as_str()).collect()
    }

    /// Skeleton word sequences, for building the skeleton vocabulary.
    pub fn skeleton_sequences(&self) -> impl Iterator<Item = Vec<&str>> {
        self.records.iter().map(|r| r.skeleton_words())
    }

    /// Attribute sequences of every skeleton token, for the attribute vocabulary.
    pub fn attribute_sequences(&self) -> impl Iterator<Item = &[String]> {
        self.records
            .iter()
            .flat_map(|r| r.decomposition.skeleton.iter().map(|t| t.attributes.as_slice()))
    }
}

/// Splits must not share image ids.
pub fn check_disjoint(splits: &[&DatasetManifest]) -> Result<()> {
    let mut seen: HashMap<&str, &str> = HashMap::new();
    for s in splits {
        for id in s.image_ids() {
            if let Some(other) = seen.insert(id, &s.split) {
                if other != s.split {
                    return Err(Error::data(format!(
                        "image {id} appears in both {other} and {} splits",
                        s.split
                    )));
                }
            }
        }
    }
    Ok(())
}

/// `image_id<TAB>caption` lines.
pub fn parse_corpus_text(text: &str) -> Result<Vec<(String, String)>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.split_once('\t')
                .map(|(id, cap)| (id.to_owned(), cap.to_owned()))
                .ok_or_else(|| Error::data(format!("line {}: expected image_id<TAB>caption", i + 1)))
        })
        .collect()
}

pub fn read_corpus_file(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus_text(&text).map_err(|e| Error::format(path, e.to_string()))
}

pub fn corpus_text<'a>(lines: impl IntoIterator<Item = (&'a str, &'a str)>) -> String {
    let mut out = String::new();
    for (id, cap) in lines {
        let _ = writeln!(out, "{id}\t{cap}");
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LoadReport {
    pub kept: usize,
    pub bad_tree: usize,
    pub empty_caption: usize,
    pub token_mismatch: usize,
    pub missing_features: usize,
}

/// Join aligned corpus lines and tree lines with their feature grids.
/// Unusable records are dropped with a warning and counted in the report.
pub fn assemble_records(
    corpus: &[(String, String)],
    trees_text: &str,
    features: &HashMap<String, Arc<FeatureGrid>>,
) -> Result<(Vec<CaptionRecord>, LoadReport)> {
    let trees = parse_tree_text(trees_text);
    if trees.len() != corpus.len() {
        return Err(Error::data(format!(
            "corpus has {} captions but tree file has {} trees",
            corpus.len(),
            trees.len()
        )));
    }
    let mut report = LoadReport::default();
    let mut records = Vec::with_capacity(corpus.len());
    for ((id, raw), line) in corpus.iter().zip(trees) {
        let tree = match line.tree {
            Ok(t) => t,
            Err(e) => {
                warn!("{id}: dropping caption, tree line {}: {e}", line.line);
                report.bad_tree += 1;
                continue;
            }
        };
        let Some(grid) = features.get(id) else {
            warn!("{id}: dropping caption, no feature record");
            report.missing_features += 1;
            continue;
        };
        if preprocess(raw).is_err() {
            warn!("{id}: dropping caption, empty after preprocessing");
            report.empty_caption += 1;
            continue;
        }
        match CaptionRecord::new(id.clone(), grid.clone(), raw.clone(), tree) {
            Ok(r) => records.push(r),
            Err(e) => {
                warn!("dropping caption: {e}");
                report.token_mismatch += 1;
            }
        }
    }
    report.kept = records.len();
    Ok((records, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitEntry {
    pub name: String,
    pub corpus: PathBuf,
    pub trees: PathBuf,
    pub features: PathBuf,
    pub records: usize,
}

/// On-disk dataset description. Paths are relative to the manifest file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFile {
    pub format_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
    #[serde(rename = "split")]
    pub splits: Vec<SplitEntry>,
}

pub const MANIFEST_VERSION: u32 = 1;

impl ManifestFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: ManifestFile = toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        if m.format_version != MANIFEST_VERSION {
            return Err(Error::format(
                path,
                format!("unsupported manifest version {}", m.format_version),
            ));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::format(path, e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn split(&self, name: &str) -> Result<&SplitEntry> {
        self.splits
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::data(format!("manifest has no split named {name:?}")))
    }
}

/// Write one split as `<name>.captions.tsv`, `<name>.trees.txt`, `<name>.features.bin`.
pub fn write_split(dir: &Path, manifest: &DatasetManifest) -> Result<SplitEntry> {
    let name = &manifest.split;
    let entry = SplitEntry {
        name: name.clone(),
        corpus: PathBuf::from(format!("{name}.captions.tsv")),
        trees: PathBuf::from(format!("{name}.trees.txt")),
        features: PathBuf::from(format!("{name}.features.bin")),
        records: manifest.len(),
    };
    let corpus = corpus_text(manifest.records.iter().map(|r| (r.image_id.as_str(), r.raw.as_str())));
    let p = dir.join(&entry.corpus);
    std::fs::write(&p, corpus).map_err(|e| Error::io(&p, e))?;
    let mut trees = String::new();
    for r in &manifest.records {
        trees.push_str(&r.tree.serialize());
        trees.push('\n');
    }
    let p = dir.join(&entry.trees);
    std::fs::write(&p, trees).map_err(|e| Error::io(&p, e))?;
    // One feature record per image, in first-seen order.
    let mut seen = HashSet::new();
    let grids = manifest
        .records
        .iter()
        .filter(|r| seen.insert(r.image_id.as_str()))
        .map(|r| (r.image_id.as_str(), r.features.as_ref()));
    write_feature_file(&dir.join(&entry.features), grids)?;
    Ok(entry)
}

pub fn load_split(manifest_path: &Path, name: &str) -> Result<(DatasetManifest, LoadReport)> {
    let manifest = ManifestFile::load(manifest_path)?;
    let entry = manifest.split(name)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let corpus = read_corpus_file(&dir.join(&entry.corpus))?;
    let trees_path = dir.join(&entry.trees);
    let trees = std::fs::read_to_string(&trees_path).map_err(|e| Error::io(&trees_path, e))?;
    let features = read_feature_file(&dir.join(&entry.features))?
        .into_iter()
        .map(|(id, g)| (id, Arc::new(g)))
        .collect();
    let (records, report) = assemble_records(&corpus, &trees, &features)?;
    Ok((
        DatasetManifest {
            split: name.to_owned(),
            records,
            seed: manifest.seed,
        },
        report,
    ))
}
