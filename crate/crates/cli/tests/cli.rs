use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use wsed_core::eval::{correlation_matrix, mean_positive_correlation};
use wsed_core::synthdata::import_jsonl;
use wsed_core::{Matrix, ScoreMatrix};

const SMALL_SPEC: &str = r#"
frames = 40
hop_s = 0.1
feature_dim = 6
cooccurrence = [[0.0, 0.7, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]

[[classes]]
name = "knock"
base_rate = 0.4
duration = { kind = "short", min_fraction = 0.1, max_fraction = 0.3 }

[[classes]]
name = "hum"
base_rate = 0.2
duration = { kind = "full_length" }

[[classes]]
name = "speech"
base_rate = 0.4
duration = { kind = "short", min_fraction = 0.1, max_fraction = 0.4 }

[[splits]]
name = "train"
bags = 24

[[splits]]
name = "test"
bags = 8
"#;

fn wsed(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wsed"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn wsed")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = wsed(args, cwd);
    assert!(
        out.status.success(),
        "wsed {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn files_in(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    v.sort();
    v
}

/// Small dataset, a config and a 3-epoch model in a fresh directory.
fn trained(extra_config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("spec.toml"), SMALL_SPEC).unwrap();
    ok(
        &[
            "gen-data",
            "--spec",
            "spec.toml",
            "--out",
            "data",
            "--seed",
            "5",
        ],
        p,
    );
    let config = format!(
        "seed = 1\nepochs = 3\n[data]\ntrain = \"data/train.jsonl\"\n[training]\nbatch_size = 4\n[postprocess]\nsmooth_window = 3\n{extra_config}"
    );
    std::fs::write(p.join("exp.toml"), config).unwrap();
    ok(&["train", "--config", "exp.toml", "--out", "model.json"], p);
    dir
}

#[test]
fn confound_preset_writes_manifest_with_realised_cooccurrence() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        &[
            "gen-data", "--preset", "confound", "--out", "d", "--seed", "2024",
        ],
        dir.path(),
    );
    let d = dir.path().join("d");
    for split in ["train", "test"] {
        for ext in ["jsonl", "manifest.json", "ref.tsv"] {
            assert!(
                d.join(format!("{split}.{ext}")).is_file(),
                "{split}.{ext} missing"
            );
        }
    }
    let m = json(&d.join("train.manifest.json"));
    assert_eq!(m["schema_version"], 1);
    assert_eq!(m["bags"], 400);
    let counts: Vec<f64> = m["class_counts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    let pairs = &m["pair_counts"];
    // short class A pulls in the full-length class B with probability 0.9
    let a_with_b = pairs[0][1].as_f64().unwrap() / counts[0];
    assert!(a_with_b > 0.8, "realised P(B | A) = {a_with_b}");

    let (bags, names) =
        import_jsonl(&std::fs::read_to_string(d.join("train.jsonl")).unwrap()).unwrap();
    assert_eq!(bags.len(), 400);
    assert_eq!(names.len(), 4);
    for (c, n) in counts.iter().enumerate() {
        assert_eq!(*n as usize, bags.iter().filter(|b| b.weak.get(c)).count());
    }
}

#[test]
fn gen_data_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("spec.toml"), SMALL_SPEC).unwrap();
    ok(
        &[
            "gen-data",
            "--spec",
            "spec.toml",
            "--out",
            "a",
            "--seed",
            "9",
        ],
        p,
    );
    ok(
        &[
            "gen-data",
            "--spec",
            "spec.toml",
            "--out",
            "b",
            "--seed",
            "9",
        ],
        p,
    );
    let (a, b) = (files_in(&p.join("a")), files_in(&p.join("b")));
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.file_name(), y.file_name());
        assert_eq!(
            std::fs::read(x).unwrap(),
            std::fs::read(y).unwrap(),
            "{x:?} differs"
        );
    }
    ok(
        &[
            "gen-data",
            "--spec",
            "spec.toml",
            "--out",
            "c",
            "--seed",
            "10",
        ],
        p,
    );
    assert_ne!(
        std::fs::read(p.join("a/train.jsonl")).unwrap(),
        std::fs::read(p.join("c/train.jsonl")).unwrap()
    );
}

#[test]
fn missing_spec_fails_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = wsed(
        &[
            "gen-data",
            "--spec",
            "absent.toml",
            "--out",
            "d",
            "--seed",
            "1",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("d").exists());
}

#[test]
fn invalid_spec_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("spec.toml"),
        SMALL_SPEC.replace("base_rate = 0.2", "base_rate = 1.5"),
    )
    .unwrap();
    let out = wsed(
        &[
            "gen-data",
            "--spec",
            "spec.toml",
            "--out",
            "d",
            "--seed",
            "1",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("d").exists());
}

#[test]
fn train_on_confound_writes_checkpoint_and_full_trace() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(
        &[
            "gen-data", "--preset", "confound", "--out", "d", "--seed", "2024",
        ],
        p,
    );
    std::fs::write(
        p.join("exp.toml"),
        "seed = 100\nepochs = 10\n[loss]\nvariant = \"mil_max_cos\"\nalpha = 0.1\n[data]\ntrain = \"d/train.jsonl\"\n",
    )
    .unwrap();
    ok(&["train", "--config", "exp.toml", "--out", "model.json"], p);
    assert!(p.join("model.json").is_file());
    let trace = json(&p.join("model.trace.json"));
    assert_eq!(trace["schema_version"], 1);
    assert_eq!(trace["variant"], "mil_max_cos");
    assert_eq!(trace["alpha"], 0.1);
    assert_eq!(trace["loss"].as_array().unwrap().len(), 10);
    assert!(trace["stopped_at"].is_null());
}

#[test]
fn flags_override_config() {
    let dir = trained("");
    let p = dir.path();
    ok(
        &[
            "train",
            "--config",
            "exp.toml",
            "--out",
            "m2.json",
            "--epochs",
            "2",
            "--variant",
            "fsl",
            "--seed",
            "4",
        ],
        p,
    );
    let trace = json(&p.join("m2.trace.json"));
    assert_eq!(trace["variant"], "fsl");
    assert_eq!(trace["seed"], 4);
    assert_eq!(trace["loss"].as_array().unwrap().len(), 2);
}

#[test]
fn training_is_deterministic() {
    let dir = trained("");
    let p = dir.path();
    ok(&["train", "--config", "exp.toml", "--out", "again.json"], p);
    assert_eq!(
        std::fs::read(p.join("model.json")).unwrap(),
        std::fs::read(p.join("again.json")).unwrap()
    );
}

#[test]
fn invalid_variant_names_the_field() {
    let dir = trained("");
    let out = wsed(
        &[
            "train",
            "--config",
            "exp.toml",
            "--out",
            "x.json",
            "--variant",
            "mil_mean",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("loss.variant"));
    assert!(!dir.path().join("x.json").exists());

    std::fs::write(
        dir.path().join("bad.toml"),
        "[loss]\nvariant = \"mil_mean\"\n",
    )
    .unwrap();
    let out = wsed(
        &["train", "--config", "bad.toml", "--out", "x.json"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("variant"));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = trained("");
    std::fs::write(
        dir.path().join("bad.toml"),
        "epochs = 2\nlearning_rate = 0.1\n",
    )
    .unwrap();
    let out = wsed(
        &["train", "--config", "bad.toml", "--out", "x.json"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));
}

#[test]
fn oracle_tags_equal_ground_truth() {
    let dir = trained("");
    let p = dir.path();
    ok(
        &[
            "infer",
            "--checkpoint",
            "model.json",
            "--data",
            "data/test.jsonl",
            "--tags",
            "oracle",
            "--out",
            "s",
        ],
        p,
    );
    let tags = json(&p.join("s/tags.json"));
    assert_eq!(tags["source"], "oracle");
    let (bags, _) =
        import_jsonl(&std::fs::read_to_string(p.join("data/test.jsonl")).unwrap()).unwrap();
    for b in &bags {
        let t: Vec<bool> = tags["tags"][&b.bag_id]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v == 1)
            .collect();
        assert_eq!(t, b.weak.as_slice(), "bag {}", b.bag_id);
    }
}

#[test]
fn model_tags_are_pooled_scores_above_thresholds() {
    let dir = trained("");
    let p = dir.path();
    ok(
        &[
            "infer",
            "--checkpoint",
            "model.json",
            "--data",
            "data/test.jsonl",
            "--tags",
            "oracle",
            "--out",
            "dev",
        ],
        p,
    );
    ok(
        &[
            "optimize-thresholds",
            "--scores",
            "dev",
            "--tags",
            "dev/tags.json",
            "--config",
            "exp.toml",
            "--out",
            "th.json",
        ],
        p,
    );
    ok(
        &[
            "infer",
            "--checkpoint",
            "model.json",
            "--data",
            "data/test.jsonl",
            "--tags",
            "model",
            "--thresholds",
            "th.json",
            "--out",
            "s",
        ],
        p,
    );
    let th: Vec<f64> = json(&p.join("th.json"))["thresholds"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    let tags = json(&p.join("s/tags.json"));
    let mut checked = 0;
    for f in files_in(&p.join("s")) {
        let name = f.file_name().unwrap().to_str().unwrap().to_string();
        let Some(bag) = name.strip_suffix(".scores.json") else {
            continue;
        };
        let scores = json(&f);
        assert_eq!(scores["schema_version"], 1);
        let rows: Vec<Vec<f64>> = serde_json::from_value(scores["scores"].clone()).unwrap();
        for (c, t) in th.iter().enumerate() {
            let pooled = rows.iter().map(|r| r[c]).fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(
                tags["tags"][bag][c] == 1,
                pooled > *t,
                "bag {bag} class {c}"
            );
        }
        checked += 1;
    }
    assert_eq!(checked, 8);
}

#[test]
fn infer_output_does_not_depend_on_jobs() {
    let dir = trained("");
    let p = dir.path();
    ok(
        &[
            "infer",
            "--checkpoint",
            "model.json",
            "--data",
            "data/test.jsonl",
            "--out",
            "one",
        ],
        p,
    );
    ok(
        &[
            "infer",
            "--checkpoint",
            "model.json",
            "--data",
            "data/test.jsonl",
            "--out",
            "three",
            "--jobs",
            "3",
        ],
        p,
    );
    let (a, b) = (files_in(&p.join("one")), files_in(&p.join("three")));
    assert_eq!(a.len(), 10);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
    }
}

#[test]
fn missing_checkpoint_is_an_error() {
    let dir = trained("");
    let out = wsed(
        &[
            "infer",
            "--checkpoint",
            "absent.json",
            "--data",
            "data/test.jsonl",
            "--tags",
            "oracle",
            "--out",
            "s",
        ],
        dir.path(),
    );
    assert!(!out.status.success());
    assert_eq!(out.status.code(), Some(3));
    assert!(!dir.path().join("s").exists());
}

#[test]
fn bad_tag_source_is_rejected() {
    let dir = trained("");
    let out = wsed(
        &[
            "infer",
            "--checkpoint",
            "model.json",
            "--data",
            "data/test.jsonl",
            "--tags",
            "gold",
            "--out",
            "s",
        ],
        dir.path(),
    );
    assert!(!out.status.success());
}

#[test]
fn eval_of_reference_against_itself_is_perfect() {
    let dir = trained("");
    let p = dir.path();
    let table = ok(
        &[
            "eval",
            "--ref",
            "data/test.ref.tsv",
            "--pred",
            "data/test.ref.tsv",
            "--out",
            "r.json",
            "--plot-data",
            "plot",
        ],
        p,
    );
    assert!(table.contains("macro F"));
    let r = json(&p.join("r.json"));
    assert_eq!(r["schema_version"], 1);
    assert_eq!(r["macro_f_score"], 100.0);
    assert_eq!(r["micro_f_score"], 100.0);
    for f in [
        "class_scores.tsv",
        "per_file.tsv",
        "knock.csv",
        "hum.csv",
        "speech.csv",
    ] {
        assert!(p.join("plot").join(f).is_file(), "{f} missing");
    }
    let curve = std::fs::read_to_string(p.join("plot/hum.csv")).unwrap();
    assert!(curve
        .lines()
        .skip(1)
        .all(|l| l.ends_with(",0,0") || l.ends_with(",1,1")));
}

#[test]
fn full_pipeline_runs_and_eval_is_jobs_invariant() {
    let dir = trained("");
    let p = dir.path();
    ok(
        &[
            "infer",
            "--checkpoint",
            "model.json",
            "--data",
            "data/test.jsonl",
            "--tags",
            "oracle",
            "--out",
            "s",
        ],
        p,
    );
    ok(
        &[
            "postprocess",
            "--scores",
            "s",
            "--tags",
            "s/tags.json",
            "--config",
            "exp.toml",
            "--out",
            "pred.tsv",
        ],
        p,
    );
    ok(
        &[
            "eval",
            "--ref",
            "data/test.ref.tsv",
            "--pred",
            "pred.tsv",
            "--out",
            "r1.json",
        ],
        p,
    );
    ok(
        &[
            "eval",
            "--ref",
            "data/test.ref.tsv",
            "--pred",
            "pred.tsv",
            "--out",
            "r4.json",
            "--jobs",
            "4",
        ],
        p,
    );
    let r = json(&p.join("r1.json"));
    let f = r["macro_f_score"].as_f64().unwrap();
    assert!((0.0..=100.0).contains(&f));
    assert_eq!(r, json(&p.join("r4.json")));
}

#[test]
fn corr_mean_positive_matches_core() {
    let dir = trained("");
    let p = dir.path();
    ok(
        &[
            "infer",
            "--checkpoint",
            "model.json",
            "--data",
            "data/test.jsonl",
            "--tags",
            "oracle",
            "--out",
            "s",
        ],
        p,
    );
    let stdout = ok(
        &[
            "corr",
            "--scores",
            "s",
            "--mean-positive",
            "--out",
            "c.json",
        ],
        p,
    );
    let line = stdout
        .lines()
        .find(|l| l.starts_with("mean_positive_correlation"))
        .unwrap();
    let printed: f64 = line.split('\t').nth(1).unwrap().parse().unwrap();

    let mut mats = Vec::new();
    for f in files_in(&p.join("s")) {
        if !f.to_str().unwrap().ends_with(".scores.json") {
            continue;
        }
        let v = json(&f);
        let rows: Vec<Vec<f64>> = serde_json::from_value(v["scores"].clone()).unwrap();
        mats.push(
            ScoreMatrix::new(
                Matrix::from_rows(&rows).unwrap(),
                v["hop_s"].as_f64().unwrap(),
            )
            .unwrap(),
        );
    }
    let expected = mean_positive_correlation(&correlation_matrix(&mats).unwrap());
    assert!((printed - expected).abs() < 1e-6, "{printed} vs {expected}");
    assert_eq!(
        json(&p.join("c.json"))["mean_positive"].as_f64().unwrap(),
        expected
    );
}

#[test]
fn optimize_thresholds_is_deterministic() {
    let dir = trained("[search]\nseed = 11\ngenerations = 20\n");
    let p = dir.path();
    ok(
        &[
            "infer",
            "--checkpoint",
            "model.json",
            "--data",
            "data/train.jsonl",
            "--tags",
            "oracle",
            "--out",
            "dev",
        ],
        p,
    );
    ok(
        &[
            "optimize-thresholds",
            "--scores",
            "dev/pooled.json",
            "--tags",
            "dev/tags.json",
            "--config",
            "exp.toml",
            "--out",
            "a.json",
        ],
        p,
    );
    ok(
        &[
            "optimize-thresholds",
            "--scores",
            "dev",
            "--tags",
            "dev/tags.json",
            "--config",
            "exp.toml",
            "--out",
            "b.json",
        ],
        p,
    );
    assert_eq!(
        std::fs::read(p.join("a.json")).unwrap(),
        std::fs::read(p.join("b.json")).unwrap()
    );
    let t = json(&p.join("a.json"));
    assert_eq!(t["trace"].as_array().unwrap().len(), 21);
    assert!(t["fitness"].as_f64().unwrap() >= t["baseline_fitness"].as_f64().unwrap());
}
