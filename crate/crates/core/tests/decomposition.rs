use c2f_core::corpus::{synth_generate, SynthConfig};
use c2f_core::decompose::{decompose, fuse, DecomposedCaption};
use c2f_core::treebank::{parse_bracketed, parse_tree_text, ParseNode, ParseTree};
use proptest::prelude::*;

const FIXTURE: &str = include_str!("data/captions.trees");

fn roundtrips(tree: &ParseTree) -> bool {
    fuse(&decompose(tree)) == tree.leaf_tokens()
}

#[test]
fn synthetic_trees_roundtrip_and_match_ground_truth() {
    let cfg = SynthConfig::default();
    let split = synth_generate(&cfg, "train", 10_000, 11).unwrap();
    for (rec, scene) in split.manifest.records.iter().zip(&split.scenes) {
        assert!(roundtrips(&rec.tree), "{}", rec.tree.serialize());
        let heads: Vec<_> = rec.decomposition.np_heads().collect();
        assert_eq!(heads.len(), scene.objects.len());
        for (h, obj) in heads.iter().zip(&scene.objects) {
            assert_eq!(h.surface, cfg.objects[obj.object]);
            let mut want = vec!["a".to_owned()];
            want.extend(obj.attributes.iter().map(|&a| cfg.attributes[a].clone()));
            assert_eq!(h.attributes, want);
        }
    }
}

#[test]
fn fixture_trees_roundtrip() {
    let lines = parse_tree_text(FIXTURE);
    assert!(lines.len() >= 15);
    for l in lines {
        let t = l.tree.unwrap_or_else(|e| panic!("line {}: {e}", l.line));
        assert!(roundtrips(&t), "line {}", l.line);
    }
}

#[test]
fn fixture_compound_keeps_last_noun() {
    let t = parse_bracketed("(NP (DT a) (NN coffee) (NN cup))").unwrap();
    let d = decompose(&t);
    assert_eq!(d.skeleton_words(), vec!["cup"]);
    assert_eq!(d.skeleton[0].attributes, vec!["a", "coffee"]);
}

const WORDS: [&str; 8] = ["a", "dog", "red", "on", "the", "big", "cup", "runs"];
const PHRASES: [&str; 6] = ["NP", "VP", "PP", "S", "ADJP", "NP-SBJ"];
const TAGS: [&str; 5] = ["DT", "NN", "JJ", "IN", "VBZ"];

fn arb_node() -> impl Strategy<Value = ParseNode> {
    let leaf = (0..TAGS.len(), 0..WORDS.len()).prop_map(|(t, w)| ParseNode::leaf(TAGS[t], WORDS[w]));
    leaf.prop_recursive(5, 40, 4, |inner| {
        (0..PHRASES.len(), prop::collection::vec(inner, 1..4))
            .prop_map(|(p, kids)| ParseNode::internal(PHRASES[p], kids))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn random_trees_roundtrip(root in arb_node()) {
        let tree = ParseTree::new(root);
        prop_assert!(roundtrips(&tree));
        let d: DecomposedCaption = decompose(&tree);
        prop_assert!(d.skeleton.iter().all(|t| t.attributes.is_empty() || t.is_np_head));
        let back = parse_bracketed(&tree.serialize()).unwrap();
        prop_assert_eq!(back, tree);
    }
}
