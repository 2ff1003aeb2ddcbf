// SPDX-License-Identifier: MIT OR Apache-2.0

use std::fs;
use std::path::Path;

use alignscope_cli::{parse_threads, run};

fn alignscope(args: &[&str]) -> i32 {
    run(std::iter::once("alignscope").chain(args.iter().copied()))
}

fn fixture(dir: &Path, noise: &str) -> String {
    let out = dir.to_str().unwrap();
    assert_eq!(
        alignscope(&[
            "fixture",
            "--out-dir",
            out,
            "--samples",
            "2",
            "--layers",
            "2",
            "--dim",
            "8",
            "--text-len",
            "4",
            "--speech-len",
            "9",
            "--noise",
            noise,
            "--seed",
            "3",
        ]),
        0
    );
    dir.join("manifest.json").to_str().unwrap().to_string()
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(alignscope(&[]), 2);
    assert_eq!(alignscope(&["frobnicate"]), 2);
    assert_eq!(alignscope(&["coarse", "--manifest", "m.json"]), 2);
    assert_eq!(
        alignscope(&["intervene", "--manifest", "m", "--out-dir", "o", "--strategy", "top5"]),
        2
    );
}

#[test]
fn help_exits_0() {
    assert_eq!(alignscope(&["--help"]), 0);
    assert_eq!(alignscope(&["paths", "--help"]), 0);
}

#[test]
fn domain_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    assert_eq!(alignscope(&["validate", "--manifest", missing.to_str().unwrap()]), 1);

    let manifest = fixture(&dir.path().join("fx"), "0.1");
    let bin = dir.path().join("fx/sample_0000.speech.bin");
    let bytes = fs::read(&bin).unwrap();
    fs::write(&bin, &bytes[..bytes.len() - 1]).unwrap();
    assert_eq!(alignscope(&["validate", "--manifest", &manifest]), 1);
}

#[test]
fn fixture_then_validate_and_analyse() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = fixture(&dir.path().join("fx"), "0.0");
    assert_eq!(alignscope(&["validate", "--manifest", &manifest]), 0);

    let out = dir.path().join("profile.csv");
    assert_eq!(
        alignscope(&[
            "coarse",
            "--manifest",
            &manifest,
            "--metric",
            "cos",
            "--out",
            out.to_str().unwrap()
        ]),
        0
    );
    let csv = fs::read_to_string(&out).unwrap();
    assert!(csv.starts_with("sample_id,metric,layer,value\n"));
    assert!(csv.lines().skip(1).all(|l| l.contains(",cos,")));

    let stats = dir.path().join("paths.csv");
    let dump = dir.path().join("dump.csv");
    assert_eq!(
        alignscope(&[
            "paths",
            "--manifest",
            &manifest,
            "--out",
            stats.to_str().unwrap(),
            "--dump-paths",
            dump.to_str().unwrap(),
        ]),
        0
    );
    // 2 samples x 2 layers x 2 metrics x 4 tokens
    assert_eq!(fs::read_to_string(&dump).unwrap().lines().count(), 1 + 2 * 2 * 2 * 4);
}

#[test]
fn intervene_writes_stale_corpus_and_replayable_plans() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = fixture(&dir.path().join("fx"), "0.2");
    let edited = dir.path().join("edited");
    let plans = dir.path().join("plans.json");
    assert_eq!(
        alignscope(&[
            "intervene",
            "--manifest",
            &manifest,
            "--sample",
            "sample_0001",
            "--strategy",
            "all",
            "--operator",
            "length",
            "--out-dir",
            edited.to_str().unwrap(),
            "--plan-out",
            plans.to_str().unwrap(),
        ]),
        0
    );
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(edited.join("manifest.json")).unwrap()).unwrap();
    let stale: Vec<bool> = m["samples"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["stale"].as_bool().unwrap_or(false))
        .collect();
    assert_eq!(stale, vec![false, true]);
    assert_eq!(
        alignscope(&["validate", "--manifest", edited.join("manifest.json").to_str().unwrap()]),
        0
    );

    let replay = dir.path().join("replay");
    assert_eq!(
        alignscope(&[
            "intervene",
            "--manifest",
            &manifest,
            "--plans",
            plans.to_str().unwrap(),
            "--out-dir",
            replay.to_str().unwrap(),
        ]),
        0
    );
    for name in fs::read_dir(&edited).unwrap().map(|e| e.unwrap().file_name()) {
        if name.to_string_lossy().ends_with(".bin") {
            assert_eq!(
                fs::read(edited.join(&name)).unwrap(),
                fs::read(replay.join(&name)).unwrap()
            );
        }
    }
}

#[test]
fn regress_reports_fits() {
    let dir = tempfile::tempdir().unwrap();
    let scores = dir.path().join("scores.csv");
    let preds = dir.path().join("predictors.csv");
    fs::write(
        &scores,
        "checkpoint_id,group,text_score,speech_score\na,,10,8\nb,,10,6\nc,,10,4\n",
    )
    .unwrap();
    fs::write(
        &preds,
        "checkpoint_id,predictor,value\na,aps_cos,0.9\nb,aps_cos,0.8\nc,aps_cos,0.7\n",
    )
    .unwrap();
    let out = dir.path().join("fits.csv");
    assert_eq!(
        alignscope(&[
            "regress",
            "--scores",
            scores.to_str().unwrap(),
            "--predictors",
            preds.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]),
        0
    );
    let csv = fs::read_to_string(&out).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(&row[..2], &["aps_cos", "ALL"]);
    assert!((row[2].parse::<f64>().unwrap() + 20.0).abs() < 1e-9);
    assert!((row[4].parse::<f64>().unwrap() - 1.0).abs() < 1e-12);

    assert_eq!(
        alignscope(&[
            "regress",
            "--scores",
            scores.to_str().unwrap(),
            "--predictors",
            preds.to_str().unwrap(),
            "--predictor",
            "fbar_cos",
        ]),
        1
    );
}

#[test]
fn thread_setting() {
    assert_eq!(parse_threads(None).unwrap(), 0);
    assert_eq!(parse_threads(Some(" 4 ")).unwrap(), 4);
    assert_eq!(parse_threads(Some("0")).unwrap(), 0);
    assert!(parse_threads(Some("many")).is_err());
    assert!(parse_threads(Some("-1")).is_err());
}

#[test]
fn published_table_is_checked_row_by_row() {
    use alignscope_core::regression::read_scores;
    use alignscope_core::Error;

    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/alignment_scores.csv");
    // The table states GAP values that are off by 0.01 from its own Overall
    // columns on some rows; the first such row is rejected.
    match read_scores(&path) {
        Err(Error::GapMismatch {
            checkpoint,
            stored,
            computed,
        }) => {
            assert_eq!(checkpoint, "Qwen2.5-1.5B-LoRA-2000");
            assert_eq!(stored, 33.48);
            assert!((computed - 33.49).abs() < 1e-9);
        }
        other => panic!("expected GapMismatch, got {other:?}"),
    }
}
