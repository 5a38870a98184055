use std::path::{Path, PathBuf};

use aquanet::cli::{run, RunManifest, MANIFEST_FILE};

fn toy_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/toy.toml")
}

fn aquanet(args: &[&str]) -> i32 {
    run(std::iter::once("aquanet").chain(args.iter().copied()))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn manifest(out: &Path) -> RunManifest {
    serde_json::from_str(&read(&out.join(MANIFEST_FILE))).unwrap()
}

#[test]
fn synth_stats_spatial_consistency() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("c4");
    assert_eq!(aquanet(&["synth", "--fixture", "consistency4", "--out", p(&data), "--seed", "2"]), 0);

    let (s1, s2) = (dir.path().join("s1"), dir.path().join("s2"));
    for out in [&s1, &s2] {
        assert_eq!(aquanet(&["stats", "--dataset", p(&data), "--out", p(out)]), 0);
    }
    assert_eq!(read(&s1.join("label_frequency.csv")), read(&s2.join("label_frequency.csv")));
    assert_eq!(read(&s1.join("stats.json")), read(&s2.join("stats.json")));
    let m = manifest(&s1);
    assert_eq!(m.command, "stats");
    assert!(m.hashes.contains_key("dataset"));
    assert_eq!(m.hashes, manifest(&s2).hashes);

    let spatial = dir.path().join("spatial");
    assert_eq!(aquanet(&["spatial", "--dataset", p(&data), "--out", p(&spatial), "--label", "sea"]), 0);
    assert!(spatial.join("mode_sea.png").exists());
    let mode = aquanet::mask::IndexMask::load_png(&spatial.join("mode_sea.png")).unwrap();
    assert_eq!(mode.dims(), (512, 512));
    assert_eq!(aquanet(&["spatial", "--dataset", p(&data), "--out", p(&spatial), "--label", "sky"]), 2);

    let cons = dir.path().join("cons");
    assert_eq!(aquanet(&["consistency", "--dataset", p(&data), "--out", p(&cons)]), 0);
    assert!(read(&cons.join("consistency.txt")).contains("Individual"));
}

#[test]
fn train_is_reproducible_and_eval_reads_its_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("aqua16");
    assert_eq!(aquanet(&["synth", "--fixture", "aqua16", "--out", p(&data)]), 0);
    let cfg = toy_config();
    let runs: Vec<PathBuf> = ["t1", "t2"].iter().map(|n| dir.path().join(n)).collect();
    for out in &runs {
        let code = aquanet(&["train", "--dataset", p(&data), "--out", p(out), "--config", p(&cfg), "--iters", "4", "--seed", "5"]);
        assert_eq!(code, 0);
    }
    assert_eq!(read(&runs[0].join("train_log.csv")), read(&runs[1].join("train_log.csv")));
    assert_eq!(std::fs::read(runs[0].join("checkpoint.aqn")).unwrap(), std::fs::read(runs[1].join("checkpoint.aqn")).unwrap());
    let m = manifest(&runs[0]);
    assert_eq!((m.command.as_str(), m.seed), ("train", Some(5)));
    assert_eq!(m.config["train"]["max_iters"], 4);
    assert_eq!(m.config["train"]["aux_weight"], 0.4);

    let eval = dir.path().join("eval");
    let ckpt = runs[0].join("checkpoint.aqn");
    assert_eq!(aquanet(&["eval", "--dataset", p(&data), "--out", p(&eval), "--checkpoint", p(&ckpt), "--split", "val"]), 0);
    let metrics: serde_json::Value = serde_json::from_str(&read(&eval.join("metrics.json"))).unwrap();
    assert!(metrics["miou"].as_f64().is_some());

    let off = dir.path().join("off");
    let code = aquanet(&["train", "--dataset", p(&data), "--out", p(&off), "--config", p(&cfg), "--iters", "1", "--toggle", "cm=off", "--toggle", "lm=off"]);
    assert_eq!(code, 0);
    let m = manifest(&off);
    assert_eq!(m.config["model"]["cross_path_modulation"], false);
    assert_eq!(m.config["model"]["low_level_modulation"], false);
}

#[test]
fn atex_command_writes_its_artefacts() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("tex");
    let out = dir.path().join("out");
    assert_eq!(aquanet(&["synth", "--fixture", "atex-textures", "--out", p(&data)]), 0);
    assert_eq!(aquanet(&["atex", "--dataset", p(&data), "--out", p(&out), "--iters", "10"]), 0);
    for f in ["patches/patches.csv", "texture_classifier.aqn", "atex_train_log.csv", "atex_report.json", "atex_report.txt"] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert_eq!(aquanet(&["atex", "--dataset", p(&data), "--out", p(&out), "--ratios", "0.5,0.5,0.5"]), 1);
}

#[test]
fn gradcheck_passes_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("gc");
    assert_eq!(aquanet(&["gradcheck", "--out", p(&out)]), 0);
    let report: serde_json::Value = serde_json::from_str(&read(&out.join("gradcheck.json"))).unwrap();
    assert!(report["max_relative_error"].as_f64().unwrap() < 1e-4);
}

#[test]
fn failures_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere");
    assert_eq!(aquanet(&["stats", "--dataset", p(&missing), "--out", p(&dir.path().join("o"))]), 2);
    assert_eq!(aquanet(&["stats", "--bogus"]), 1);
    assert_eq!(aquanet(&["synth", "--fixture", "nope", "--out", p(&dir.path().join("o"))]), 2);
    assert_eq!(aquanet(&["train", "--dataset", "x", "--out", "y", "--toggle", "lm=maybe"]), 1);
    assert_eq!(aquanet(&["--help"]), 0);
}
