use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
[skel]
hidden = 12
embed = 8
attention_hidden = 8

[attr]
hidden = 12
embed = 8

[train_skel]
epochs = 1
learning_rate = 0.05

[train_attr]
epochs = 1
learning_rate = 0.05
"#;

fn c2f(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_c2f"))
        .current_dir(dir)
        .env_remove("C2F_CONFIG")
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .unwrap()
}

fn ok(out: &Output) {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a", "b"] {
        ok(&c2f(dir.path(), &["synth", "--out", name, "--train", "30", "--val", "0", "--test", "5"]));
    }
    for file in ["manifest.toml", "config.toml"] {
        assert_eq!(fs::read(dir.path().join("a").join(file)).unwrap(), fs::read(dir.path().join("b").join(file)).unwrap());
    }
    let list = |d: &str| {
        let mut v: Vec<_> = fs::read_dir(dir.path().join(d)).unwrap().map(|e| e.unwrap().file_name()).collect();
        v.sort();
        v
    };
    assert_eq!(list("a"), list("b"));
    for f in list("a") {
        assert_eq!(fs::read(dir.path().join("a").join(&f)).unwrap(), fs::read(dir.path().join("b").join(&f)).unwrap());
    }
    let other = c2f(dir.path(), &["--seed", "9", "synth", "--out", "c", "--train", "30", "--val", "0", "--test", "5"]);
    ok(&other);
}

#[test]
fn zero_training_images_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = c2f(dir.path(), &["synth", "--out", "s", "--train", "0"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn decompose_one_tree() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("t.txt"),
        "(ROOT (NP (NP (DT a) (JJ red) (NN dog)) (PP (IN on) (NP (DT a) (NN mat)))))\n",
    )
    .unwrap();
    let out = c2f(dir.path(), &["decompose", "--trees", "t.txt"]);
    ok(&out);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 1, "{text}");
    assert!(text.contains("dog") && text.contains("red"));
}

#[test]
fn eval_identical_files_and_without_a() {
    let dir = tempfile::tempdir().unwrap();
    let caps = "i1\ta dog on a mat\ni2\ttwo cats sleep on the bed\n";
    fs::write(dir.path().join("c.tsv"), caps).unwrap();
    let out = c2f(dir.path(), &["eval", "--candidates", "c.tsv", "--references", "c.tsv", "--format", "toml"]);
    ok(&out);
    let report: toml::Table = toml::from_str(&String::from_utf8(out.stdout).unwrap()).unwrap();
    let bleu = report["bleu"].as_array().unwrap();
    assert!(bleu.iter().all(|b| (b.as_float().unwrap() - 1.0).abs() < 1e-12), "{bleu:?}");

    let score = |cands: &str, refs: &str, strip: bool| {
        fs::write(dir.path().join("x.tsv"), cands).unwrap();
        fs::write(dir.path().join("y.tsv"), refs).unwrap();
        let mut args = vec!["eval", "--candidates", "x.tsv", "--references", "y.tsv", "--format", "toml"];
        if strip {
            args.push("--without-a");
        }
        let out = c2f(dir.path(), &args);
        ok(&out);
        let t: toml::Table = toml::from_str(&String::from_utf8(out.stdout).unwrap()).unwrap();
        t["rouge_l"].as_float().unwrap()
    };
    let (c, r) = ("i1\tdog on mat\ni2\tcat\n", "i1\tdog on the mat\ni2\tthe cat\ni3\tx\n");
    assert_eq!(score(c, r, false), score(c, r, true));
    let (c, r) = ("i1\ta dog on mat\ni2\tcat\n", "i1\tdog on a mat\ni2\ta cat\n");
    assert_ne!(score(c, r, false), score(c, r, true));
}

#[test]
fn missing_checkpoint_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    ok(&c2f(dir.path(), &["synth", "--out", "d", "--train", "20", "--val", "0", "--test", "3"]));
    let out = c2f(
        dir.path(),
        &["caption", "--skel", "nowhere", "--attr", "nowhere", "--data", "d/manifest.toml"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere"));
}

#[test]
fn train_resume_caption_with_layered_config() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("tiny.toml"), TINY).unwrap();
    ok(&c2f(p, &["synth", "--out", "d", "--train", "200", "--val", "20", "--test", "5"]));
    ok(&c2f(p, &["--config", "tiny.toml", "train-skel", "--data", "d/manifest.toml", "--out", "s"]));
    let echo: toml::Table = toml::from_str(&fs::read_to_string(p.join("s/config.toml")).unwrap()).unwrap();
    assert_eq!(echo["skel"]["hidden"].as_integer(), Some(12));

    // The environment variable supplies the same file; flags override it.
    let resumed = Command::new(env!("CARGO_BIN_EXE_c2f"))
        .current_dir(p)
        .env("C2F_CONFIG", "tiny.toml")
        .env("RUST_LOG", "warn")
        .args(["train-skel", "--data", "d/manifest.toml", "--out", "s", "--resume", "--learning-rate", "0.02"])
        .output()
        .unwrap();
    ok(&resumed);
    let echo: toml::Table = toml::from_str(&fs::read_to_string(p.join("s/config.toml")).unwrap()).unwrap();
    assert_eq!(echo["skel"]["hidden"].as_integer(), Some(12));
    assert_eq!(echo["train_skel"]["learning_rate"].as_float(), Some(0.02));
    let curve = fs::read_to_string(p.join("s/loss.tsv")).unwrap();
    assert!(curve.lines().count() > 2);

    ok(&c2f(p, &["--config", "tiny.toml", "train-attr", "--data", "d/manifest.toml", "--skel", "s", "--out", "a"]));
    ok(&c2f(
        p,
        &["caption", "--skel", "s", "--attr", "a", "--data", "d/manifest.toml", "--out", "c", "--trace", "--gamma-skel", "-0.5"],
    ));
    let caps = fs::read_to_string(p.join("c/captions.tsv")).unwrap();
    assert_eq!(caps.lines().count(), 5);
    assert!(fs::read_to_string(p.join("c/trace.txt")).unwrap().contains("image test-000000"));

    let bad = c2f(p, &["--config", "missing.toml", "synth", "--out", "z"]);
    assert_eq!(bad.status.code(), Some(1));
}
