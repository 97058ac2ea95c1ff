//! Synthetic scenes with gold captions and gold trees.
//!
//! Each image holds 1..=`max_objects` distinct object classes in distinct grid
//! cells. A cell's feature vector is `one_hot(object) ⊕ Σ one_hot(attribute)`
//! followed by zero padding up to `D`, plus i.i.d. Gaussian noise on every
//! cell and every dimension. Captions follow
//! `a <attrs> <obj> (<relation> a <attrs> <obj>)*` with objects listed in
//! inventory order, attributes in inventory order, and the relation between
//! consecutive objects `a`, `b` fixed to `relations[(a + b) % |relations|]`,
//! so every caption is a function of the scene content.

use std::sync::Arc;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{CaptionRecord, DatasetManifest, FeatureGrid};
use crate::error::{Error, Result};
use crate::treebank::{ParseNode, ParseTree};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub grid_side: usize,
    pub feature_dim: usize,
    pub objects: Vec<String>,
    pub attributes: Vec<String>,
    pub relations: Vec<String>,
    pub noise_sigma: f64,
    pub max_objects: usize,
    pub max_attributes: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let words = |ws: &[&str]| ws.iter().map(|s| s.to_string()).collect();
        SynthConfig {
            grid_side: 4,
            feature_dim: 32,
            objects: words(&[
                "dog", "cat", "horse", "bird", "cow", "sheep", "car", "bus", "boat", "kite",
            ]),
            attributes: words(&["red", "blue", "green", "small", "large", "striped"]),
            relations: words(&["near", "beside", "behind"]),
            noise_sigma: 0.1,
            max_objects: 3,
            max_attributes: 2,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.objects.is_empty() || self.attributes.is_empty() || self.relations.is_empty() {
            return Err(Error::config("synthetic inventories must be non-empty"));
        }
        if self.grid_side < 2 {
            return Err(Error::config("synthetic grid side must be at least 2"));
        }
        if self.objects.len() + self.attributes.len() > self.feature_dim {
            return Err(Error::config(format!(
                "{} objects + {} attributes do not fit in feature dim {}",
                self.objects.len(),
                self.attributes.len(),
                self.feature_dim
            )));
        }
        if self.max_objects == 0 {
            return Err(Error::config("max_objects must be at least 1"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::config("noise sigma must be finite and non-negative"));
        }
        let mut all: Vec<&String> = self
            .objects
            .iter()
            .chain(&self.attributes)
            .chain(&self.relations)
            .collect();
        let n = all.len();
        all.sort();
        all.dedup();
        if all.len() != n || all.iter().any(|w| w.as_str() == "a") {
            return Err(Error::config(
                "inventory words must be distinct and must not be the article 'a'",
            ));
        }
        if all.iter().any(|w| w.is_empty() || !w.chars().all(|c| c.is_lowercase() || c.is_ascii_digit())) {
            return Err(Error::config("inventory words must be lowercase single tokens"));
        }
        Ok(())
    }

    fn attribute_offset(&self) -> usize {
        self.objects.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SceneObject {
    /// Index into `SynthConfig::objects`.
    pub object: usize,
    /// Indices into `SynthConfig::attributes`, ascending.
    pub attributes: Vec<usize>,
    pub cell: (usize, usize),
}

/// Ground truth for one synthetic image. Objects are in caption order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scene {
    pub objects: Vec<SceneObject>,
}

impl Scene {
    pub fn relation(&self, cfg: &SynthConfig, k: usize) -> usize {
        (self.objects[k].object + self.objects[k + 1].object) % cfg.relations.len()
    }

    pub fn caption_tokens(&self, cfg: &SynthConfig) -> Vec<String> {
        self.tree(cfg).leaf_tokens()
    }

    /// Gold skeleton: object words joined by relation words.
    pub fn skeleton(&self, cfg: &SynthConfig) -> Vec<String> {
        let mut out = Vec::new();
        for (k, obj) in self.objects.iter().enumerate() {
            if k > 0 {
                out.push(cfg.relations[self.relation(cfg, k - 1)].clone());
            }
            out.push(cfg.objects[obj.object].clone());
        }
        out
    }

    pub fn tree(&self, cfg: &SynthConfig) -> ParseTree {
        let np = |obj: &SceneObject| {
            let mut kids = vec![ParseNode::leaf("DT", "a")];
            kids.extend(obj.attributes.iter().map(|&a| ParseNode::leaf("JJ", cfg.attributes[a].as_str())));
            kids.push(ParseNode::leaf("NN", cfg.objects[obj.object].as_str()));
            ParseNode::internal("NP", kids)
        };
        let mut node = np(self.objects.last().expect("scene has at least one object"));
        for k in (0..self.objects.len() - 1).rev() {
            let rel = ParseNode::leaf("IN", cfg.relations[self.relation(cfg, k)].as_str());
            node = ParseNode::internal(
                "NP",
                vec![np(&self.objects[k]), ParseNode::internal("PP", vec![rel, node])],
            );
        }
        ParseTree::new(node)
    }

    /// Capitalized caption with a trailing period.
    pub fn raw_caption(&self, cfg: &SynthConfig) -> String {
        let text = self.caption_tokens(cfg).join(" ");
        let mut chars = text.chars();
        match chars.next() {
            Some(first) => format!("{}{}.", first.to_uppercase(), chars.as_str()),
            None => text,
        }
    }

    pub fn render<R: Rng>(&self, cfg: &SynthConfig, rng: &mut R) -> Result<FeatureGrid> {
        let mut grid = FeatureGrid::zeros(cfg.grid_side, cfg.feature_dim);
        if cfg.noise_sigma > 0.0 {
            let normal = Normal::new(0.0f32, cfg.noise_sigma as f32)
                .map_err(|e| Error::config(format!("noise: {e}")))?;
            for i in 0..cfg.grid_side {
                for j in 0..cfg.grid_side {
                    for v in grid.cell_mut(i, j) {
                        *v = normal.sample(rng);
                    }
                }
            }
        }
        for obj in &self.objects {
            let (i, j) = obj.cell;
            if i >= cfg.grid_side || j >= cfg.grid_side {
                return Err(Error::contract(format!("object cell ({i},{j}) outside grid")));
            }
            let cell = grid.cell_mut(i, j);
            cell[obj.object] += 1.0;
            for &a in &obj.attributes {
                cell[cfg.attribute_offset() + a] += 1.0;
            }
        }
        Ok(grid)
    }

    fn sample<R: Rng>(cfg: &SynthConfig, rng: &mut R) -> Scene {
        let cells = cfg.grid_side * cfg.grid_side;
        let max = cfg.max_objects.min(cfg.objects.len()).min(cells);
        let n = rng.random_range(1..=max);
        let mut classes = sample(rng, cfg.objects.len(), n).into_vec();
        classes.sort_unstable();
        let places = sample(rng, cells, n).into_vec();
        let objects = classes
            .into_iter()
            .zip(places)
            .map(|(object, place)| {
                let k = rng.random_range(0..=cfg.max_attributes.min(cfg.attributes.len()));
                let mut attributes = sample(rng, cfg.attributes.len(), k).into_vec();
                attributes.sort_unstable();
                SceneObject {
                    object,
                    attributes,
                    cell: (place / cfg.grid_side, place % cfg.grid_side),
                }
            })
            .collect();
        Scene { objects }
    }
}

/// One generated split together with its per-record ground truth.
#[derive(Debug, Clone)]
pub struct SynthSplit {
    pub manifest: DatasetManifest,
    pub scenes: Vec<Scene>,
}

fn split_tag(split: &str) -> u64 {
    // FNV-1a, folded to 16 bits; only needs to separate split names.
    let h = split
        .bytes()
        .fold(0xcbf29ce484222325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100000001b3));
    (h ^ (h >> 16) ^ (h >> 32) ^ (h >> 48)) & 0xffff
}

/// Per-sample generator: a ChaCha stream keyed by (seed, split, index).
pub fn sample_rng(seed: u64, split: &str, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((split_tag(split) << 48) | index as u64);
    rng
}

pub fn synth_generate(cfg: &SynthConfig, split: &str, count: usize, seed: u64) -> Result<SynthSplit> {
    cfg.validate()?;
    if count == 0 {
        return Err(Error::config("synthetic sample count must be positive"));
    }
    let mut records = Vec::with_capacity(count);
    let mut scenes = Vec::with_capacity(count);
    for index in 0..count {
        let mut rng = sample_rng(seed, split, index);
        let scene = Scene::sample(cfg, &mut rng);
        let features = scene.render(cfg, &mut rng)?;
        let record = CaptionRecord::new(
            format!("{split}-{index:06}"),
            Arc::new(features),
            scene.raw_caption(cfg),
            scene.tree(cfg),
        )?;
        records.push(record);
        scenes.push(scene);
    }
    Ok(SynthSplit {
        manifest: DatasetManifest {
            split: split.to_owned(),
            records,
            seed: Some(seed),
        },
        scenes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decompose::decompose;

    #[test]
    fn same_seed_same_output() {
        let cfg = SynthConfig::default();
        let a = synth_generate(&cfg, "train", 50, 7).unwrap();
        let b = synth_generate(&cfg, "train", 50, 7).unwrap();
        assert_eq!(a.scenes, b.scenes);
        for (x, y) in a.manifest.records.iter().zip(&b.manifest.records) {
            assert_eq!(x.features.values(), y.features.values());
            assert_eq!(x.raw, y.raw);
        }
        let c = synth_generate(&cfg, "train", 50, 8).unwrap();
        assert_ne!(a.scenes, c.scenes);
        let d = synth_generate(&cfg, "test", 50, 7).unwrap();
        assert_ne!(a.scenes, d.scenes);
    }

    #[test]
    fn noiseless_single_object_scene() {
        let cfg = SynthConfig {
            noise_sigma: 0.0,
            ..SynthConfig::default()
        };
        let scene = Scene {
            objects: vec![SceneObject {
                object: 0,
                attributes: vec![0],
                cell: (1, 2),
            }],
        };
        let grid = scene.render(&cfg, &mut sample_rng(0, "x", 0)).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let nonzero = grid.cell(i, j).iter().any(|&v| v != 0.0);
                assert_eq!(nonzero, (i, j) == (1, 2));
            }
        }
        assert_eq!(scene.caption_tokens(&cfg), ["a", "red", "dog"]);
        assert_eq!(scene.tree(&cfg).serialize(), "(NP (DT a) (JJ red) (NN dog))");
        assert_eq!(scene.raw_caption(&cfg), "A red dog.");
    }

    #[test]
    fn decomposition_matches_ground_truth() {
        let cfg = SynthConfig::default();
        let split = synth_generate(&cfg, "train", 500, 3).unwrap();
        for (rec, scene) in split.manifest.records.iter().zip(&split.scenes) {
            let d = decompose(&rec.tree);
            assert_eq!(d.skeleton_words(), scene.skeleton(&cfg));
            let heads: Vec<_> = d.np_heads().collect();
            assert_eq!(heads.len(), scene.objects.len());
            for (h, obj) in heads.iter().zip(&scene.objects) {
                let mut gold = vec!["a".to_string()];
                gold.extend(obj.attributes.iter().map(|&a| cfg.attributes[a].clone()));
                assert_eq!(h.attributes, gold);
            }
        }
    }

    #[test]
    fn config_errors() {
        let cfg = SynthConfig {
            feature_dim: 8,
            ..SynthConfig::default()
        };
        assert!(matches!(synth_generate(&cfg, "t", 1, 0), Err(Error::Config(_))));
        let cfg = SynthConfig {
            grid_side: 1,
            ..SynthConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = SynthConfig {
            relations: vec![],
            ..SynthConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert!(synth_generate(&SynthConfig::default(), "t", 0, 0).is_err());
    }
}
