use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn idswap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_idswap"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen_tiny(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    let out = idswap(&[
        "gen-data",
        "--out",
        s(&data),
        "--identities",
        "3",
        "--per-identity",
        "6",
        "--held-out",
        "4",
        "--size",
        "32",
        "--seed",
        "3",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    data
}

const TINY: &[&str] = &[
    "--image_size",
    "32",
    "--n_id_blocks",
    "1",
    "--id_dim",
    "16",
    "--embedder_epochs",
    "1",
    "--checkpoint_every",
    "2",
];

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(code(&idswap(&["--help"])), 0);
    assert_eq!(code(&idswap(&[])), 1);
    assert_eq!(code(&idswap(&["train", "--bogus"])), 1);

    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("o");
    let data = dir.path().join("d");
    let base = ["train", "--data", s(&data), "--out", s(&out_dir)];

    let out = idswap(&[&base[..], &["--lambda_id", "-1"]].concat());
    assert_eq!(code(&out), 1);
    assert!(
        stderr(&out).contains("lambda_id must be ≥ 0"),
        "{}",
        stderr(&out)
    );

    let out = idswap(&[&base[..], &["--preset", "nope"]].concat());
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("unknown preset"));

    let out = idswap(&[&base[..], &["--lambda_id", "ten"]].concat());
    assert_eq!(code(&out), 1);

    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "lambda_id = 10.0\nnot_a_key = 1\n").unwrap();
    assert_eq!(
        code(&idswap(&[&base[..], &["--config", s(&cfg)]].concat())),
        1
    );

    assert_eq!(code(&idswap(&["evaluate", "--out", s(&out_dir)])), 1);
    assert_eq!(
        code(&idswap(&[
            "gen-data",
            "--out",
            s(&data),
            "--identities",
            "0"
        ])),
        1
    );
}

#[test]
fn runtime_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = idswap(&[
        "train",
        "--data",
        s(&dir.path().join("missing")),
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));

    let one = dir.path().join("one");
    let out = idswap(&[
        "gen-data",
        "--out",
        s(&one),
        "--identities",
        "1",
        "--per-identity",
        "2",
        "--size",
        "32",
    ]);
    assert_eq!(code(&out), 0);
    let out = idswap(
        &[
            &[
                "train",
                "--data",
                s(&one),
                "--out",
                s(&dir.path().join("o")),
            ][..],
            TINY,
        ]
        .concat(),
    );
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("at least 2 identities"));

    let out = idswap(&[
        "swap",
        "--checkpoint",
        s(&dir.path().join("nothing")),
        "--source",
        "a.png",
        "--target",
        "b.png",
        "--out",
        "c.png",
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn gen_data_writes_images_manifest_and_specs() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_tiny(dir.path());
    let manifest: Vec<serde_json::Value> =
        serde_json::from_str(&std::fs::read_to_string(data.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest.len(), 18);
    for entry in &manifest {
        assert!(data.join(entry["path"].as_str().unwrap()).is_file());
    }
    let specs: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(data.join("dataset.json")).unwrap()).unwrap();
    assert_eq!(specs["held_out"].as_array().unwrap().len(), 12);
    assert!(data.join("train/id_002/00005.png").is_file());
}

#[test]
fn train_resume_swap_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_tiny(dir.path());
    let run = dir.path().join("run");

    let out = idswap(
        &[
            &[
                "train",
                "--data",
                s(&data),
                "--out",
                s(&run),
                "--preset",
                "nFM",
                "--lambda_id",
                "20",
                "--steps",
                "4",
            ][..],
            TINY,
        ]
        .concat(),
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let echo = stdout(&out);
    assert!(echo.contains("lambda_id = 20.0"), "{echo}");
    assert!(echo.contains("fm_variant = \"nFM\""), "{echo}");
    assert!(echo.starts_with(&std::fs::read_to_string(run.join("config.toml")).unwrap()));
    assert!(run.join("checkpoints/step_000002/state.json").is_file());
    // The last step goes to final/ only.
    assert!(!run.join("checkpoints/step_000004").exists());
    let log = std::fs::read_to_string(run.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 4);

    let out = idswap(&[
        "train",
        "--data",
        s(&data),
        "--out",
        s(&run),
        "--resume",
        s(&run.join("final")),
        "--steps",
        "6",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let log = std::fs::read_to_string(run.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 6);

    let src = data.join("train/id_000/00000.png");
    let tgt = data.join("train/id_001/00000.png");
    let result = dir.path().join("swapped.png");
    let out = idswap(&[
        "swap",
        "--checkpoint",
        s(&run.join("final")),
        "--source",
        s(&src),
        "--target",
        s(&tgt),
        "--out",
        s(&result),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(result.is_file());

    let big = dir.path().join("big");
    assert_eq!(
        code(&idswap(&[
            "gen-data",
            "--out",
            s(&big),
            "--identities",
            "2",
            "--per-identity",
            "1",
            "--size",
            "48"
        ])),
        0
    );
    let out = idswap(&[
        "swap",
        "--checkpoint",
        s(&run.join("final")),
        "--source",
        s(&big.join("train/id_000/00000.png")),
        "--target",
        s(&tgt),
        "--out",
        s(&result),
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("expects 32x32"), "{}", stderr(&out));

    let report = dir.path().join("report");
    let out = idswap(&[
        "evaluate",
        "--checkpoint",
        s(&run.join("final")),
        "--data",
        s(&data),
        "--out",
        s(&report),
        "--n-pairs",
        "4",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("id_retrieval_%"));
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(report.join("metrics.json")).unwrap())
            .unwrap();
    assert_eq!(metrics["rows"][0]["preset"], "run");
    assert!(metrics["note"].as_str().unwrap().contains("proxy"));
    assert!(report.join("metrics.txt").is_file());
}

#[test]
fn evaluate_scores_external_embeddings() {
    let dir = tempfile::tempdir().unwrap();
    let gallery = dir.path().join("gallery.csv");
    let generated = dir.path().join("generated.csv");
    std::fs::write(&gallery, "id,v0,v1\nalice/a,1,0\nbob/a,0,1\n").unwrap();
    std::fs::write(
        &generated,
        "id,v0,v1\nalice/x,2,0.1\nbob/x,0.9,0.2\nbob/y,0,3\nalice/y,1,1.5\n",
    )
    .unwrap();
    let report = dir.path().join("r");
    let out = idswap(&[
        "evaluate",
        "--generated-embeddings",
        s(&generated),
        "--gallery-embeddings",
        s(&gallery),
        "--out",
        s(&report),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(report.join("retrieval.json")).unwrap())
            .unwrap();
    assert_eq!(v["id_retrieval"], 50.0);

    std::fs::write(&generated, "id,v0,v1,v2\nalice/x,1,0,0\n").unwrap();
    let out = idswap(&[
        "evaluate",
        "--generated-embeddings",
        s(&generated),
        "--gallery-embeddings",
        s(&gallery),
        "--out",
        s(&report),
    ]);
    assert_eq!(code(&out), 2);
    assert_eq!(
        code(&idswap(&[
            "evaluate",
            "--generated-embeddings",
            s(&generated),
            "--out",
            s(&report)
        ])),
        1
    );
}
