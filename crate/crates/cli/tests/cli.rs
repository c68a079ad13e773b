use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn maskpad(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_maskpad")).args(args).output().expect("spawn maskpad")
}

fn ok(args: &[&str]) -> Output {
    let out = maskpad(args);
    assert!(out.status.success(), "maskpad {args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Header name → value for a one-row CSV.
fn one_row(text: &str) -> Vec<(String, String)> {
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(str::to_string);
    let row = lines.next().unwrap().split(',').map(str::to_string);
    header.zip(row).collect()
}

fn field(row: &[(String, String)], name: &str) -> String {
    row.iter().find(|(k, _)| k == name).unwrap_or_else(|| panic!("no column {name}")).1.clone()
}

fn num(row: &[(String, String)], name: &str) -> f64 {
    field(row, name).parse().unwrap()
}

const DEV: &str = "video_id,identity,category,medium,score
d1,id100,BM0,bona_fide,0.7
d2,id100,BM0,bona_fide,0.95
d3,id100,BM1,bona_fide,0.3
d4,id100,AM0,print,0.1
";

const TEST: &str = "video_id,identity,category,medium,score
t1,id200,BM0,bona_fide,0.9
t2,id200,BM1,bona_fide,0.4
t3,id200,AM0,print,0.2
t4,id200,AM1,print,0.6
t5,id200,AM2,replay,0.35
t6,id200,AM0,replay,0.1
";

fn write_scores(dir: &Path) -> (PathBuf, PathBuf) {
    let (dev, test) = (dir.join("dev.csv"), dir.join("test.csv"));
    fs::write(&dev, DEV).unwrap();
    fs::write(&test, TEST).unwrap();
    (dev, test)
}

#[test]
fn eval_matches_hand_computed_report_at_all_threshold() {
    let tmp = tempfile::tempdir().unwrap();
    let (dev, test) = write_scores(tmp.path());
    let out = tmp.path().join("eval_all");
    ok(&["eval", "--scores", s(&test), "--dev-scores", s(&dev), "--threshold", "all", "--out", s(&out)]);
    let row = one_row(&fs::read_to_string(out.join("report.csv")).unwrap());
    // Dev bona fide {0.3, 0.7, 0.95}: k = max(1, ceil(0.3)) = 1, so tau = 0.3.
    assert_eq!(field(&row, "tau_kind"), "bpcer10_all");
    assert_eq!(num(&row, "tau"), 0.3);
    assert_eq!(num(&row, "bpcer_bm0"), 0.0);
    assert_eq!(num(&row, "bpcer_bm1"), 0.0);
    assert_eq!(num(&row, "apcer_print_am0"), 0.0);
    assert_eq!(num(&row, "apcer_print_am1"), 100.0);
    assert_eq!(field(&row, "apcer_print_am2"), "");
    assert_eq!(num(&row, "apcer_replay_am0"), 0.0);
    assert_eq!(field(&row, "apcer_replay_am1"), "");
    assert_eq!(num(&row, "apcer_replay_am2"), 100.0);
    // APCER 2/4 = 50, BPCER 0.
    assert_eq!(num(&row, "acer"), 25.0);
    // Bona fide {0.9, 0.4} beat 4 + 3 of the 8 attack pairs.
    assert_eq!(num(&row, "auc"), 0.875);
    assert!(out.join("roc.csv").exists());
    assert!(out.join("run_manifest.json").exists());
}

#[test]
fn eval_matches_hand_computed_report_at_unmask_threshold() {
    let tmp = tempfile::tempdir().unwrap();
    let (dev, test) = write_scores(tmp.path());
    let out = tmp.path().join("eval_unmask");
    ok(&["eval", "--scores", s(&test), "--dev-scores", s(&dev), "--threshold", "unmask", "--out", s(&out)]);
    let row = one_row(&fs::read_to_string(out.join("report.csv")).unwrap());
    // Dev BM0 {0.7, 0.95}: tau = 0.7; every attack falls below it, BM1 too.
    assert_eq!(num(&row, "tau"), 0.7);
    assert_eq!(num(&row, "bpcer_bm0"), 0.0);
    assert_eq!(num(&row, "bpcer_bm1"), 100.0);
    assert_eq!(num(&row, "apcer_print_am1"), 0.0);
    assert_eq!(num(&row, "apcer_replay_am2"), 0.0);
    assert_eq!(num(&row, "acer"), 25.0);
}

#[test]
fn missing_input_fails_and_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("report");
    let res = maskpad(&[
        "eval",
        "--scores",
        s(&tmp.path().join("nope.csv")),
        "--dev-scores",
        s(&tmp.path().join("nope_dev.csv")),
        "--out",
        s(&out),
    ]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("missing input"));
    assert!(!out.exists());
    assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 0);
}

#[test]
fn failed_command_removes_partial_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let (dev, _) = write_scores(tmp.path());
    // Scores without any bona fide video fail after the output stage exists.
    let bad = tmp.path().join("attacks_only.csv");
    fs::write(&bad, "video_id,identity,category,medium,score\nx,id1,AM0,print,0.5\n").unwrap();
    let out = tmp.path().join("eval");
    let res = maskpad(&["eval", "--scores", s(&bad), "--dev-scores", s(&dev), "--out", s(&out)]);
    assert!(!res.status.success());
    assert!(!out.exists());
    let left: Vec<_> = fs::read_dir(tmp.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(left.len(), 3, "{left:?}");
}

#[test]
fn refuses_to_overwrite_unrelated_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let (dev, test) = write_scores(tmp.path());
    let out = tmp.path().join("precious");
    fs::create_dir(&out).unwrap();
    fs::write(out.join("keep.txt"), "x").unwrap();
    let res = maskpad(&["eval", "--scores", s(&test), "--dev-scores", s(&dev), "--out", s(&out)]);
    assert!(!res.status.success());
    assert_eq!(fs::read_to_string(out.join("keep.txt")).unwrap(), "x");
}

const SMALL_SYNTH: &str = "n_identities = 5
videos_per_identity_per_category = 1
attack_replicas = 1
frames_per_video = 1
seed = 3
attack_texture_strength = 0.1
image_size = 224
";

const SHORT_TRAIN: &str = "max_epochs = 2
patience = 1
batch_size = 8
";

#[test]
fn end_to_end_pipeline_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let synth_cfg = root.join("synth.txt");
    let train_cfg = root.join("train.txt");
    fs::write(&synth_cfg, SMALL_SYNTH).unwrap();
    fs::write(&train_cfg, SHORT_TRAIN).unwrap();

    let run = |tag: &str| -> PathBuf {
        let dir = root.join(tag);
        let corpus = dir.join("corpus");
        ok(&["synth", "--config", s(&synth_cfg), "--out", s(&corpus)]);
        ok(&["labels", "--corpus", s(&corpus), "--pal", "on", "--out", s(&dir.join("labels"))]);
        let ckpt = dir.join("ckpt");
        ok(&[
            "train", "--corpus", s(&corpus), "--backbone", "dense_pix", "--config", s(&train_cfg), "--seed", "5",
            "--pal", "on", "--out", s(&ckpt),
        ]);
        let scores = dir.join("scores");
        ok(&["score", "--checkpoint", s(&ckpt), "--corpus", s(&corpus), "--rw", "on", "--out", s(&scores)]);
        ok(&[
            "eval", "--scores", s(&scores.join("test_scores.csv")), "--dev-scores", s(&scores.join("dev_scores.csv")),
            "--threshold", "unmask", "--out", s(&dir.join("eval")),
        ]);
        dir
    };
    let a = run("a");
    let b = run("b");
    for rel in [
        "corpus/manifest.csv",
        "ckpt/train_log.csv",
        "ckpt/manifest.json",
        "scores/dev_scores.csv",
        "scores/test_scores.csv",
        "eval/report.csv",
    ] {
        assert_eq!(fs::read(a.join(rel)).unwrap(), fs::read(b.join(rel)).unwrap(), "{rel} differs between runs");
    }
    // Every artifact directory carries the manifest that produced it.
    for d in ["corpus", "labels", "ckpt", "scores", "eval"] {
        let m = fs::read_to_string(a.join(d).join("run_manifest.json")).unwrap();
        assert!(m.contains("\"input_hash\""), "{d}");
    }
    // Identical inputs hash identically wherever they live.
    let hash = |dir: &Path| {
        let m: String = fs::read_to_string(dir.join("scores/run_manifest.json")).unwrap();
        m.lines().find(|l| l.contains("input_hash")).unwrap().to_string()
    };
    assert_eq!(hash(&a), hash(&b));

    // Labels: 14×14 grids; AM2 partial labels mix zeros and ones.
    let text = fs::read_to_string(a.join("labels/videos/id000_AM2_print_00/label_000.txt")).unwrap();
    assert!(text.starts_with("14 14\n"));
    let cells: Vec<&str> = text.lines().skip(1).flat_map(str::split_whitespace).collect();
    assert_eq!(cells.len(), 196);
    assert!(cells.contains(&"0") && cells.contains(&"1"));
    assert!(a.join("labels/videos/id000_AM2_print_00/weights_000.txt").exists());
}

#[test]
fn ablation_emits_eight_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let synth_cfg = root.join("synth.txt");
    fs::write(&synth_cfg, SMALL_SYNTH).unwrap();
    let corpus = root.join("corpus");
    ok(&["synth", "--config", s(&synth_cfg), "--out", s(&corpus)]);
    let cfg = root.join("ablation.txt");
    let mut text = String::new();
    for b in ["dense_pix", "mix_pix"] {
        for line in SHORT_TRAIN.lines() {
            text.push_str(&format!("{b}.{line}\n"));
        }
    }
    fs::write(&cfg, text).unwrap();
    let out = root.join("ablation");
    let res = ok(&["ablation", "--corpus", s(&corpus), "--config", s(&cfg), "--seed", "1", "--out", s(&out)]);
    let csv = fs::read_to_string(out.join("ablation.csv")).unwrap();
    assert_eq!(String::from_utf8(res.stdout).unwrap(), csv);
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 8);
    let labels: Vec<(&str, &str)> = rows.iter().map(|r| (r[0], r[1])).collect();
    assert_eq!(
        labels,
        [
            ("dense_pix", "baseline"),
            ("dense_pix", "+RW"),
            ("dense_pix", "+PAL"),
            ("dense_pix", "+PAL+RW"),
            ("mix_pix", "baseline"),
            ("mix_pix", "+RW"),
            ("mix_pix", "+PAL"),
            ("mix_pix", "+PAL+RW"),
        ]
    );
    assert!(out.join("dense_pix_pal-on_seed-1/test_scores_rw.csv").exists());
}
