//! Subcommands, JSON output and exit codes of the `sweepdepth` binary.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn sweepdepth(args: &[&str], paths: &[&Path]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sweepdepth"));
    let mut paths = paths.iter();
    for a in args {
        if *a == "{}" {
            cmd.arg(paths.next().expect("path argument"));
        } else {
            cmd.arg(a);
        }
    }
    cmd.output().expect("spawn sweepdepth")
}

fn json(o: &Output) -> Value {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).expect("JSON on stdout")
}

#[test]
fn staged_commands_cover_the_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let ds = t.join("ds");
    let v = json(&sweepdepth(&["synth", "--fixture", "two-box", "--out", "{}"], &[&ds]));
    assert_eq!(v["frames"], 3);
    assert!(ds.join("pipeline.toml").exists() && ds.join("fixture.json").exists());

    let sweep = t.join("sweep");
    let v = json(&sweepdepth(&["sweep", "--dataset", "{}", "--frame", "1", "--out", "{}"], &[&ds, &sweep]));
    assert_eq!(v["sources"], serde_json::json!([0, 2]));

    let refine = t.join("refine");
    let cfg = ds.join("pipeline.toml");
    let v = json(&sweepdepth(&["refine", "--sweep", "{}", "--out", "{}", "--config", "{}"], &[&sweep, &refine, &cfg]));
    assert!(v["occluded_pixels"].as_u64().unwrap() > 0);

    let gt = ds.join("depth/000001.pfm");
    let k = ds.join("intrinsics.txt");
    let planes = ds.join("planes/000001.png");
    let pred = refine.join("depth.pfm");
    let v = json(&sweepdepth(
        &["eval", "--pred", "{}", "--gt", "{}", "--intrinsics", "{}", "--planes", "{}"],
        &[&pred, &gt, &k, &planes],
    ));
    assert!(v["depth"]["abs.rel"].as_f64().unwrap() < 0.1);
    assert!(v["normals"]["mean"].as_f64().is_some());

    let cnm = t.join("cnm");
    let v = json(&sweepdepth(&["cnm", "--depth", "{}", "--intrinsics", "{}", "--planes", "{}", "--out", "{}"], &[&gt, &k, &planes, &cnm]));
    assert!(v["valid_cnm"].as_u64().unwrap() > 0);
    assert!(cnm.join("cnm.pfm").exists());

    let depth_dir = t.join("depths");
    std::fs::create_dir_all(&depth_dir).unwrap();
    std::fs::copy(&pred, depth_dir.join("000001.pfm")).unwrap();
    let fused = t.join("fused");
    let v = json(&sweepdepth(&["fuse", "--dataset", "{}", "--depth-dir", "{}", "--out", "{}", "--tsdf"], &[&ds, &depth_dir, &fused]));
    assert!(v["triangles"].as_u64().unwrap() > 0);
    assert!(fused.join("mesh.ply").exists() && fused.join("tsdf.bin").exists());
}

#[test]
fn run_writes_summary_and_respects_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = tmp.path().join("ds");
    json(&sweepdepth(&["synth", "--fixture", "two-box", "--out", "{}"], &[&ds]));
    let out = tmp.path().join("out");
    let v = json(&sweepdepth(&["--threads", "2", "run", "--dataset", "{}", "--out", "{}", "--no-occlusion-weighting"], &[&ds, &out]));
    assert_eq!(v["windows"].as_array().unwrap().len(), 1);
    assert_eq!(v["skipped"], serde_json::json!([0, 2]));
    for f in ["mesh.ply", "summary.json", "metrics.txt", "depth/000001.pfm", "occlusion/000001.pfm", "pairs/000001_0.pfm"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn configuration_errors_exit_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    let out = tmp.path().join("out");
    let o = sweepdepth(&["run", "--dataset", "{}", "--out", "{}"], &[&empty, &out]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
    assert_eq!(sweepdepth(&["synth", "--fixture", "nope", "--out", "{}"], &[&out]).status.code(), Some(2));

    let ds = tmp.path().join("ds");
    json(&sweepdepth(&["synth", "--fixture", "two-box", "--out", "{}"], &[&ds]));
    let o = sweepdepth(&["run", "--dataset", "{}", "--out", "{}", "--window", "0"], &[&ds, &out]);
    assert_eq!(o.status.code(), Some(2));
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "unknown_key = 1\n").unwrap();
    let o = sweepdepth(&["run", "--dataset", "{}", "--out", "{}", "--config", "{}"], &[&ds, &out, &bad]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn data_errors_exit_with_3() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("missing.pfm");
    let garbage = tmp.path().join("garbage.pfm");
    std::fs::write(&garbage, b"not a pfm").unwrap();
    let o = sweepdepth(&["eval", "--pred", "{}", "--gt", "{}"], &[&missing, &garbage]);
    assert_eq!(o.status.code(), Some(3));
    let o = sweepdepth(&["eval", "--pred", "{}", "--gt", "{}"], &[&garbage, &garbage]);
    assert_eq!(o.status.code(), Some(3));
}
