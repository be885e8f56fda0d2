// SPDX-License-Identifier: MIT OR Apache-2.0

mod common;

use std::path::Path;

use common::{ok, probekit, stderr};
use probekit::store::{read_activation_file, read_meta, write_activation_file, write_meta};
use probekit_core::{pool, ActivationFile, PoolingSpec};

fn synth(dir: &Path, extra: &[&str]) {
    let mut args = vec![
        "synth",
        "--out-dir",
        "data",
        "--d",
        "8",
        "--n-per-class",
        "60",
        "--n-layers",
        "2",
        "--seed",
        "3",
    ];
    args.extend_from_slice(extra);
    ok(dir, &args);
}

#[test]
fn help_exits_zero_for_every_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    for sub in [
        vec!["--help"],
        vec!["pool", "--help"],
        vec!["pca", "fit", "--help"],
        vec!["pca", "transform", "--help"],
        vec!["pca", "report", "--help"],
        vec!["train", "--help"],
        vec!["sweep", "--help"],
        vec!["agree", "--help"],
        vec!["transfer", "--help"],
        vec!["align", "--help"],
        vec!["rank", "--help"],
        vec!["steer", "build", "--help"],
        vec!["steer", "aggregate", "--help"],
        vec!["synth", "--help"],
        vec!["report", "--help"],
    ] {
        let o = probekit(dir.path(), &sub);
        assert_eq!(o.status.code(), Some(0), "{sub:?}");
        assert!(
            String::from_utf8_lossy(&o.stdout).contains("Usage"),
            "{sub:?}"
        );
    }
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = probekit(dir.path(), &["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"));

    let o = probekit(dir.path(), &["synth", "--out-dir", "x", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--no-such-flag"), "{}", stderr(&o));

    let o = probekit(dir.path(), &[]);
    assert_eq!(o.status.code(), Some(1));

    let o = probekit(dir.path(), &["synth", "--out-dir", "x", "--sigma", "0"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn missing_input_exits_two_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = probekit(
        dir.path(),
        &[
            "pool",
            "--in",
            "nope.rqac",
            "--meta",
            "m.json",
            "--out",
            "o.rqac",
        ],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope.rqac"), "{}", stderr(&o));

    synth(dir.path(), &[]);
    std::fs::remove_file(dir.path().join("data/synth__test__L1.rqac")).unwrap();
    let o = probekit(
        dir.path(),
        &[
            "sweep",
            "--dir",
            "data",
            "--dataset",
            "synth",
            "--layers",
            "1",
            "--raw",
            "--out",
            "s.csv",
        ],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(
        stderr(&o).contains("synth__test__L1.rqac"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn outputs_are_not_overwritten_without_force() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), &[]);
    let meta = dir.path().join("data/synth__meta.json");
    let before = std::fs::read(&meta).unwrap();
    let o = probekit(
        dir.path(),
        &[
            "synth",
            "--out-dir",
            "data",
            "--d",
            "8",
            "--n-per-class",
            "60",
            "--seed",
            "4",
        ],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--force"));
    assert_eq!(std::fs::read(&meta).unwrap(), before);

    synth(dir.path(), &["--force", "--seed", "4"]);
    assert_ne!(std::fs::read(&meta).unwrap(), before);
}

#[test]
fn identical_invocations_write_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &[
            "synth",
            "--out-dir",
            "a",
            "--d",
            "8",
            "--n-per-class",
            "60",
            "--n-layers",
            "2",
        ],
    );
    ok(
        dir.path(),
        &[
            "synth",
            "--out-dir",
            "b",
            "--d",
            "8",
            "--n-per-class",
            "60",
            "--n-layers",
            "2",
        ],
    );
    for name in [
        "synth__meta.json",
        "synth__train__L0.rqac",
        "synth__test__L1.rqac",
    ] {
        assert_eq!(
            std::fs::read(dir.path().join("a").join(name)).unwrap(),
            std::fs::read(dir.path().join("b").join(name)).unwrap(),
            "{name}"
        );
    }
    for out in ["r1.json", "r2.json"] {
        ok(
            dir.path(),
            &[
                "agree",
                "--dir",
                "a",
                "--dataset",
                "synth",
                "--k",
                "4",
                "--bootstrap",
                "50",
                "--out",
                out,
            ],
        );
    }
    assert_eq!(
        std::fs::read(dir.path().join("r1.json")).unwrap(),
        std::fs::read(dir.path().join("r2.json")).unwrap()
    );
}

#[test]
fn config_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), &[]);
    std::fs::write(
        dir.path().join("cfg.json"),
        r#"{"sweep": {"k": 3, "layers": [1], "bootstrap": 0}, "pca": {"fit": {"k": 2}}}"#,
    )
    .unwrap();
    let base = [
        "--config",
        "cfg.json",
        "sweep",
        "--dir",
        "data",
        "--dataset",
        "synth",
    ];

    ok(dir.path(), &[&base[..], &["--out", "a.csv"]].concat());
    let a = std::fs::read_to_string(dir.path().join("a.csv")).unwrap();
    assert!(
        a.lines()
            .skip(1)
            .all(|l| l.starts_with("synth/synthetic/last/pca3,1,")),
        "{a}"
    );

    ok(
        dir.path(),
        &[&base[..], &["--k", "5", "--out", "b.csv"]].concat(),
    );
    let b = std::fs::read_to_string(dir.path().join("b.csv")).unwrap();
    assert!(
        b.lines()
            .skip(1)
            .all(|l| l.starts_with("synth/synthetic/last/pca5,1,")),
        "{b}"
    );

    ok(
        dir.path(),
        &[&base[..], &["--raw", "--layers", "0", "--out", "c.csv"]].concat(),
    );
    let c = std::fs::read_to_string(dir.path().join("c.csv")).unwrap();
    assert!(
        c.lines()
            .skip(1)
            .all(|l| l.starts_with("synth/synthetic/last/raw,0,")),
        "{c}"
    );

    ok(
        dir.path(),
        &[
            "pca",
            "fit",
            "--config",
            "cfg.json",
            "--dir",
            "data",
            "--dataset",
            "synth",
            "--layer",
            "0",
            "--out",
            "p.rqpc",
        ],
    );
    let desc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("p.rqpc.json")).unwrap())
            .unwrap();
    assert_eq!(desc["k"], 2);

    std::fs::write(dir.path().join("bad.json"), r#"{"sweep": {"kay": 3}}"#).unwrap();
    let o = probekit(
        dir.path(),
        &[
            "--config",
            "bad.json",
            "sweep",
            "--dir",
            "data",
            "--dataset",
            "synth",
            "--out",
            "d.csv",
        ],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--kay"));
}

#[test]
fn pool_passes_example_level_through_and_pools_token_level() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), &[]);
    ok(
        dir.path(),
        &[
            "pool",
            "--in",
            "data/synth__train__L0.rqac",
            "--meta",
            "data/synth__meta.json",
            "--out",
            "p.rqac",
        ],
    );
    assert_eq!(
        std::fs::read(dir.path().join("p.rqac")).unwrap(),
        std::fs::read(dir.path().join("data/synth__train__L0.rqac")).unwrap()
    );

    // Token-level file for the train split: 2 + (i % 3) tokens per example.
    let meta = read_meta(&dir.path().join("data/synth__meta.json")).unwrap();
    let mut meta = meta.clone();
    let train: Vec<usize> = (0..meta.examples.len())
        .filter(|&i| meta.examples[i].split == probekit_core::Split::Train)
        .collect();
    let mut offsets = vec![0u64];
    let mut data = Vec::new();
    let mut rng = common::rng(9);
    for (j, &i) in train.iter().enumerate() {
        let t = 2 + j % 3;
        meta.examples[i].n_tokens = t;
        meta.examples[i].question_span = (t - 1, t);
        offsets.push(offsets.last().unwrap() + t as u64);
        data.extend(
            common::gaussian_vec(&mut rng, t * 8)
                .into_iter()
                .map(|v| v as f32),
        );
    }
    let tok = ActivationFile::token_level(0, 8, offsets, data).unwrap();
    write_meta(&dir.path().join("tok__meta.json"), &meta).unwrap();
    write_activation_file(&dir.path().join("tok__train__L0.rqac"), &tok).unwrap();
    for (strategy, spec) in [
        (vec!["--strategy", "mean"], PoolingSpec::MeanAll),
        (
            vec!["--strategy", "lastk", "--k", "2"],
            PoolingSpec::LastK(2),
        ),
        (vec!["--strategy", "span"], PoolingSpec::QuestionSpanMean),
    ] {
        let out = format!("{}.rqac", spec.tag());
        let mut args = vec![
            "pool",
            "--in",
            "tok__train__L0.rqac",
            "--meta",
            "tok__meta.json",
            "--out",
            &out,
        ];
        args.extend(strategy);
        ok(dir.path(), &args);
        let got = read_activation_file(&dir.path().join(&out)).unwrap();
        let want = pool(&tok, &meta, Some(probekit_core::Split::Train), spec).unwrap();
        assert_eq!(got, want, "{spec}");
    }
    let o = probekit(
        dir.path(),
        &[
            "pool",
            "--in",
            "tok__train__L0.rqac",
            "--meta",
            "tok__meta.json",
            "--strategy",
            "lastk",
            "--out",
            "x.rqac",
        ],
    );
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn train_rank_and_steer_chain() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), &[]);
    let d = &["--dir", "data", "--dataset", "synth"][..];
    ok(
        dir.path(),
        &[
            &["pca", "fit"][..],
            d,
            &["--layer", "1", "--k", "4", "--out", "p.rqpc"],
        ]
        .concat(),
    );
    ok(
        dir.path(),
        &[
            &["train"][..],
            d,
            &[
                "--layer", "1", "--probe", "logistic", "--pca", "p.rqpc", "--out", "w.rqvc",
            ],
        ]
        .concat(),
    );
    let desc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("w.rqvc.json")).unwrap())
            .unwrap();
    assert_eq!(desc["kind"], "logistic");
    assert_eq!(desc["space"]["space"], "pca");
    assert!(desc["training"]["validation_auroc"].as_f64().unwrap() > 0.5);

    // A PCA-space direction needs its model.
    let o = probekit(
        dir.path(),
        &[&["rank", "--direction", "w.rqvc"][..], d].concat(),
    );
    assert_eq!(o.status.code(), Some(1));
    let o = ok(
        dir.path(),
        &[
            &["rank", "--direction", "w.rqvc", "--pca", "p.rqpc"][..],
            d,
            &["--p", "0.1"],
        ]
        .concat(),
    );
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let entries = v["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 24);
    assert_eq!(entries[0]["rank"], 1);
    assert!(entries
        .windows(2)
        .all(|w| w[0]["score"].as_f64() >= w[1]["score"].as_f64()));
    assert_eq!(v["length_stats"][0]["count"], 3);

    ok(
        dir.path(),
        &[
            "steer",
            "build",
            "--direction",
            "w.rqvc",
            "--pca",
            "p.rqpc",
            "--normalization",
            "unit",
            "--out",
            "v.rqvc",
        ],
    );
    let (v, desc) = probekit::model_io::read_steering(&dir.path().join("v.rqvc")).unwrap();
    assert!((v.v.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs() <= 1e-12);
    assert_eq!(
        desc.source_probe_sha256,
        probekit::store::hash_file(&dir.path().join("w.rqvc")).unwrap()
    );

    // Another model changes the hash the direction was trained with.
    ok(
        dir.path(),
        &[
            &["pca", "fit"][..],
            d,
            &["--layer", "0", "--k", "4", "--out", "q.rqpc"],
        ]
        .concat(),
    );
    let o = probekit(
        dir.path(),
        &[
            "steer",
            "build",
            "--direction",
            "w.rqvc",
            "--pca",
            "q.rqpc",
            "--out",
            "v2.rqvc",
        ],
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn steer_aggregate_reads_judge_and_generations() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("judge.csv"),
        "id,alpha,layer,score\nc1,1.5,3,4\nc2,1.5,3,6\nc1,0,3,8\nc2,0,3,seven\nc3,1.5,3,10\n",
    )
    .unwrap();
    std::fs::write(
        dir.path().join("gens.jsonl"),
        concat!(
            r#"{"id":"c1","context":"x","alpha":1.5,"layer":3,"question":"q","label":"rhetorical"}"#, "\n",
            r#"{"id":"c2","context":"x","alpha":1.5,"layer":3,"question":"q","label":"rhetorical"}"#, "\n",
            r#"{"id":"c1","context":"x","alpha":0,"layer":3,"question":"q","label":"rhetorical"}"#, "\n",
            r#"{"id":"c2","context":"x","alpha":0,"layer":3,"question":"q","label":"rhetorical"}"#, "\n",
            r#"{"id":"c3","context":"x","alpha":1.5,"layer":3,"question":"q","label":"informational"}"#, "\n",
        ),
    )
    .unwrap();
    ok(
        dir.path(),
        &[
            "steer",
            "aggregate",
            "--judge",
            "judge.csv",
            "--generations",
            "gens.jsonl",
            "--out",
            "a.json",
        ],
    );

    // A rating with no matching generation is a join failure.
    std::fs::write(
        dir.path().join("orphan.csv"),
        "id,alpha,layer,score\nc9,1.5,3,5\n",
    )
    .unwrap();
    let o = probekit(
        dir.path(),
        &[
            "steer",
            "aggregate",
            "--judge",
            "orphan.csv",
            "--generations",
            "gens.jsonl",
        ],
    );
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("orphan.csv"));
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("a.json")).unwrap()).unwrap();
    let rows = v["rows"].as_array().unwrap();
    let find = |alpha: f64, group: &str| {
        rows.iter()
            .find(|r| r["alpha"].as_f64() == Some(alpha) && r["group"] == group)
            .unwrap()
            .clone()
    };
    assert_eq!(find(1.5, "rhetorical")["mean_score"], 5.0);
    assert_eq!(find(0.0, "rhetorical")["mean_score"], 8.0);
    assert_eq!(find(0.0, "rhetorical")["dropped"], 1);
    assert_eq!(find(1.5, "informational")["mean_score"], 10.0);
}

#[test]
fn align_writes_one_row_per_pair() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), &[]);
    let d = &["--dir", "data", "--dataset", "synth"][..];
    ok(
        dir.path(),
        &[
            &["pca", "fit"][..],
            d,
            &["--layer", "0", "--k", "3", "--out", "a.rqpc"],
        ]
        .concat(),
    );
    ok(
        dir.path(),
        &[
            &["pca", "fit"][..],
            d,
            &["--layer", "1", "--k", "3", "--out", "b.rqpc"],
        ]
        .concat(),
    );
    ok(
        dir.path(),
        &[
            "align",
            "--a",
            "a.rqpc,b.rqpc",
            "--b",
            "a.rqpc,a.rqpc",
            "--out",
            "al.csv",
        ],
    );
    let text = std::fs::read_to_string(dir.path().join("al.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "model,layer,normalized_layer,geodesic,mean_cosine"
    );
    assert_eq!(lines.len(), 3);
    let self_row: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(self_row[..3], ["synthetic", "0", "0.0"]);
    assert!(self_row[3].parse::<f64>().unwrap() <= 1e-9);
    assert!(lines[2].starts_with("synthetic,1,1.0,"));

    let o = probekit(
        dir.path(),
        &["align", "--a", "a.rqpc,b.rqpc", "--b", "a.rqpc"],
    );
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn pca_transform_and_report() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), &[]);
    ok(
        dir.path(),
        &[
            "pca",
            "fit",
            "--dir",
            "data",
            "--dataset",
            "synth",
            "--layer",
            "0",
            "--k",
            "3",
            "--out",
            "a.rqpc",
        ],
    );
    ok(
        dir.path(),
        &[
            "pca",
            "transform",
            "--model",
            "a.rqpc",
            "--in",
            "data/synth__test__L0.rqac",
            "--out",
            "z.rqac",
        ],
    );
    let z = read_activation_file(&dir.path().join("z.rqac")).unwrap();
    assert_eq!((z.dim, z.n_examples), (3, 24));
    let o = ok(dir.path(), &["pca", "report", "--model", "a.rqpc"]);
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().next(), Some("component,evr,cumulative"));
    assert_eq!(text.lines().count(), 4);
}
