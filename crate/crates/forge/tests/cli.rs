mod common;

use std::collections::BTreeSet;
use std::path::Path;

use common::{files_with_suffix, forge, ok, write_config, TINY};
use cuap_forge::manifest::Manifest;
use cuap_forge::render::GT_COLOR;

fn manifest_hash(run: &common::Run) -> String {
    run.stdout.lines().next().unwrap().split_whitespace().next().unwrap().to_string()
}

#[test]
fn gen_data_writes_one_file_per_scene_and_is_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let out = tmp.path().join("out");
    let first = ok(forge(&cfg, &out, &["gen-data"]));
    let det = out.join("dataset/detector");
    assert_eq!(files_with_suffix(&det, ".cf32").len(), 10);
    assert_eq!(files_with_suffix(&det, ".meta.json").len(), 10);
    let m = Manifest::load(&det.join("manifest.json")).unwrap();
    assert_eq!(m.entries.len(), 10);
    assert_eq!(m.classes.len(), 4);
    for split in ["target", "surrogate", "test"] {
        assert!(m.count(split) > 0, "split {split} is empty");
    }
    for e in &m.entries {
        let bytes = std::fs::metadata(det.join(&e.path)).unwrap().len();
        assert_eq!(bytes, 8 << 20);
    }

    let again = ok(forge(&cfg, &out, &["gen-data"]));
    assert_eq!(first.stdout, again.stdout);
    let elsewhere = ok(forge(&cfg, &tmp.path().join("other"), &["gen-data"]));
    assert_eq!(manifest_hash(&first), manifest_hash(&elsewhere));
}

#[test]
fn invalid_split_sum_fails_and_names_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let text = r#"
        [[dataset.attack_splits]]
        name = "train"
        fraction = 0.7
        [[dataset.attack_splits]]
        name = "val"
        fraction = 0.2
        [[dataset.attack_splits]]
        name = "test"
        fraction = 0.2
    "#;
    let cfg = write_config(tmp.path(), text);
    let run = forge(&cfg, &tmp.path().join("out"), &["gen-data"]);
    assert_ne!(run.code, 0);
    assert!(run.stderr.contains("dataset.attack_splits"), "{}", run.stderr);
    assert!(!tmp.path().join("out/dataset").exists());
}

#[test]
fn unknown_arch_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let run = forge(&cfg, &tmp.path().join("out"), &["train-detector", "--arch", "Z"]);
    assert_eq!(run.code, 1);
    assert!(run.stderr.contains("unknown architecture"), "{}", run.stderr);
    let run = forge(&cfg, &tmp.path().join("out"), &["no-such-command"]);
    assert_eq!(run.code, 1);
}

#[test]
fn missing_inputs_are_runtime_errors_that_say_what_is_absent() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let out = tmp.path().join("out");
    let run = forge(&cfg, &out, &["train-detector", "--arch", "A"]);
    assert_eq!(run.code, 2);
    assert!(run.stderr.contains("gen-data"), "{}", run.stderr);
    let run = forge(&cfg, &out, &["train-attack", "--scenario", "WB", "--arch", "A"]);
    assert_eq!(run.code, 2);
    assert!(run.stderr.contains("A-victim"), "{}", run.stderr);
}

#[test]
fn out_dir_comes_from_the_environment_when_no_flag_is_given() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let out = tmp.path().join("from-env");
    let run: common::Run = std::process::Command::new(env!("CARGO_BIN_EXE_cuap-forge"))
        .arg("--config")
        .arg(&cfg)
        .arg("gen-data")
        .env("CUAP_FORGE_OUT", &out)
        .output()
        .unwrap()
        .into();
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert!(out.join("dataset/detector/manifest.json").exists());
}

fn count_components(rgb: &[u8], width: usize, height: usize, color: [u8; 3]) -> usize {
    let hit = |i: usize| rgb[i * 3..i * 3 + 3] == color;
    let mut seen = vec![false; width * height];
    let mut count = 0;
    for start in 0..width * height {
        if seen[start] || !hit(start) {
            continue;
        }
        count += 1;
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            let (x, y) = (i % width, i / width);
            let mut visit = |j: usize| {
                if !seen[j] && hit(j) {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < width {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - width);
            }
            if y + 1 < height {
                visit(i + width);
            }
        }
    }
    count
}

fn decode_rgb(path: &Path) -> (Vec<u8>, usize, usize) {
    let decoder = png::Decoder::new(std::fs::File::open(path).unwrap());
    let mut reader = decoder.read_info().unwrap();
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).unwrap();
    assert_eq!(info.color_type, png::ColorType::Rgb);
    buf.truncate(info.buffer_size());
    (buf, info.width as usize, info.height as usize)
}

#[test]
fn render_outlines_each_ground_truth_box() {
    let tmp = tempfile::tempdir().unwrap();
    // One slow emitter: every scene holds one or two bursts.
    let text = r#"
        [dataset]
        detector_scenes = 10
        attack_scenes = 4
        [[dataset.classes]]
        name = "slow"
        bandwidth_hz = 1.0e6
        burst_duration_s = 0.03
        burst_period_s = 0.06
        shape = "flat-noise"
    "#;
    let cfg = write_config(tmp.path(), text);
    let out = tmp.path().join("out");
    ok(forge(&cfg, &out, &["gen-data"]));
    let m = Manifest::load(&out.join("dataset/detector/manifest.json")).unwrap();
    let index = m.entries.iter().position(|e| e.boxes.len() == 2).expect("a scene with two bursts");
    let run = ok(forge(&cfg, &out, &["render", "--dataset", "detector", "--index", &index.to_string()]));
    let overlay = Path::new(run.stdout.trim());
    let (rgb, w, h) = decode_rgb(overlay);
    assert_eq!((w, h), (1024, 1024));
    assert_eq!(count_components(&rgb, w, h, GT_COLOR), 2);

    let gray = out.join(format!("renders/detector-scene_{index:04}.png"));
    let decoder = png::Decoder::new(std::fs::File::open(&gray).unwrap());
    assert_eq!(decoder.read_info().unwrap().info().color_type, png::ColorType::Grayscale);
    let raw = out.join(format!("renders/detector-scene_{index:04}.f32"));
    assert_eq!(std::fs::metadata(raw).unwrap().len(), 4 * 1024 * 1024);
}

/// gen-data, every detector, white-box and black-box tiles, evaluation,
/// a sweep and the config-hash guard, on a tiny configuration.
#[test]
fn tiny_pipeline_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let out = tmp.path().join("out");
    ok(forge(&cfg, &out, &["gen-data"]));

    let run = ok(forge(&cfg, &out, &["train-detector", "--all"]));
    assert_eq!(run.stdout.lines().count(), 6);
    let index: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("models/index.json")).unwrap()).unwrap();
    let keys: BTreeSet<&str> = index.as_object().unwrap().keys().map(|k| k.as_str()).collect();
    assert_eq!(
        keys,
        ["A-surrogate", "A-victim", "B-surrogate", "B-victim", "C-surrogate", "C-victim"].into_iter().collect()
    );
    assert_eq!(files_with_suffix(&out.join("models"), ".metrics.json").len(), 6);

    // Same seed in a fresh root: identical weights.
    let again = tmp.path().join("again");
    ok(forge(&cfg, &again, &["gen-data"]));
    let a = ok(forge(&cfg, &again, &["train-detector", "--arch", "A"]));
    let first_a = run.stdout.lines().find(|l| l.contains("A-victim")).unwrap();
    assert_eq!(a.stdout.split_whitespace().next(), first_a.split_whitespace().next());

    let eval = ok(forge(&cfg, &out, &["evaluate", "--clean-only"]));
    let table: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("reports/table1.json")).unwrap()).unwrap();
    let rows = table["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r["condition"] == "clean"));
    assert!(eval.stdout.contains("clean"));

    let run = forge(&cfg, &out, &["evaluate"]);
    assert_eq!(run.code, 2);
    assert!(run.stderr.contains("WB-A-spr10") && run.stderr.contains("BB-C-spr10"), "{}", run.stderr);

    for arch in ["A", "B", "C"] {
        for scenario in ["WB", "BB"] {
            ok(forge(&cfg, &out, &["train-attack", "--scenario", scenario, "--arch", arch]));
        }
    }
    let sidecar = |name: &str| -> serde_json::Value {
        let path = files_with_suffix(&out.join("attacks"), ".meta.json")
            .into_iter()
            .find(|p| p.file_name().unwrap().to_string_lossy().starts_with(name))
            .unwrap();
        serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
    };
    let wb = sidecar("WB-A-spr10-");
    assert_eq!(wb["model_hashes"].as_array().unwrap().len(), 1);
    assert_eq!(wb["length_samples"], 65536);
    let bb = sidecar("BB-A-spr10-");
    let bb_models: Vec<&str> = bb["models"].as_array().unwrap().iter().map(|m| m["arch"].as_str().unwrap()).collect();
    assert_eq!(bb["model_hashes"].as_array().unwrap().len(), 2);
    assert_eq!(bb_models, ["B", "C"]);
    let logs = files_with_suffix(&out.join("attacks"), ".log.csv");
    let log = std::fs::read_to_string(logs.iter().find(|p| p.to_string_lossy().contains("WB-A-")).unwrap()).unwrap();
    assert_eq!(log.lines().count(), 1 + 3);
    assert!(log.starts_with("iter,evade,protect,total,spr_db,val_target_ap"));

    ok(forge(&cfg, &out, &["evaluate"]));
    let table: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("reports/table1.json")).unwrap()).unwrap();
    let conditions: Vec<&str> = table["rows"].as_array().unwrap().iter().map(|r| r["condition"].as_str().unwrap()).collect();
    assert_eq!(conditions.len(), 3 * 4);
    assert_eq!(&conditions[..4], ["clean", "awgn", "WB", "BB"]);
    let csv = std::fs::read_to_string(out.join("reports/table1.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 12);
    for f in ["table2.csv", "table2.json", "shift.csv", "shift.json"] {
        assert!(out.join("reports").join(f).exists(), "{f}");
    }

    // A different seed means a different config hash.
    let mixed = forge(&cfg, &out, &["--seed", "12", "evaluate"]);
    assert_eq!(mixed.code, 2);
    assert!(mixed.stderr.contains("--force"), "{}", mixed.stderr);
    ok(forge(&cfg, &out, &["--seed", "12", "evaluate", "--force"]));

    ok(forge(&cfg, &out, &["sweep-spr", "--arch", "B", "--levels", "20,15,10", "--iterations", "2"]));
    let csv = std::fs::read_to_string(out.join("reports/sweep-B.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.starts_with("B,")));
    assert!(out.join("reports/sweep-B.svg").exists());

    let run = ok(forge(&cfg, &out, &["render", "--index", "0", "--arch", "A", "--attack", "WB-A-spr10"]));
    assert!(run.stdout.trim().ends_with("attack-scene_0000-WB-A-spr10-A-overlay.png"));
}
