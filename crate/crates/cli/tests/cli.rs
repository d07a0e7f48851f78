use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

use sonify_core::embedding::dis_cos;
use sonify_core::report::validate;
use sonify_core::store::EmbeddingStore;
use sonify_core::Modality;

fn sonify(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sonify"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = sonify(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn report(path: &Path) -> Value {
    let v: Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    validate(&v).unwrap();
    v
}

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
        .display()
        .to_string()
}

struct Space {
    _dir: tempfile::TempDir,
    root: PathBuf,
    manifest: String,
    archive: String,
}

impl Space {
    fn path(&self, name: &str) -> String {
        self.root.join(name).display().to_string()
    }
}

fn synth(extra: &[&str]) -> Space {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let manifest = root.join("m.jsonl").display().to_string();
    let archive = root.join("a.emb").display().to_string();
    let mut args = vec![
        "synth",
        "--manifest",
        &manifest,
        "--archive",
        &archive,
        "--dim",
        "64",
    ];
    args.extend_from_slice(extra);
    let out = root.join("synth.json").display().to_string();
    args.extend(["--out", &out]);
    ok(&args);
    Space {
        _dir: dir,
        root,
        manifest,
        archive,
    }
}

#[test]
fn synth_is_deterministic() {
    let a = synth(&["--seed", "7"]);
    let b = synth(&["--seed", "7"]);
    assert_eq!(fs::read(&a.archive).unwrap(), fs::read(&b.archive).unwrap());
    assert_eq!(
        fs::read(&a.manifest).unwrap(),
        fs::read(&b.manifest).unwrap()
    );
    let r = report(&a.root.join("synth.json"));
    assert_eq!(r["data"]["counts"]["image"], 20);
    assert!(r["generated_at"].is_string());
}

#[test]
fn rank_matches_exhaustive_oracle() {
    let s = synth(&["--seed", "3"]);
    let out = s.path("rank.json");
    ok(&[
        "rank",
        "--manifest",
        &s.manifest,
        "--archive",
        &s.archive,
        "--k",
        "10",
        "--out",
        &out,
        "--no-timestamp",
    ]);
    let r = report(Path::new(&out));
    let store = EmbeddingStore::ingest(&s.manifest, &s.archive, true).unwrap();
    let results = r["data"]["results"].as_array().unwrap();
    assert_eq!(results.len(), 20);
    for res in results {
        let frame = store.get(res["query_id"].as_str().unwrap()).unwrap();
        let mut oracle: Vec<(f64, String)> = store
            .by_modality(Modality::Audio)
            .iter()
            .map(|a| (dis_cos(frame, a).unwrap(), a.id().to_string()))
            .collect();
        oracle.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        let got: Vec<&str> = res["entries"]
            .as_array()
            .unwrap()
            .iter()
            .map(|e| e["candidate_id"].as_str().unwrap())
            .collect();
        let want: Vec<&str> = oracle.iter().take(10).map(|o| o.1.as_str()).collect();
        assert_eq!(got, want);
    }
    // Euclidean ranking induces the same order on unit vectors.
    let euc = s.path("rank-euc.json");
    ok(&[
        "rank",
        "--manifest",
        &s.manifest,
        "--archive",
        &s.archive,
        "--distance",
        "euclidean",
        "--out",
        &euc,
    ]);
    let e = report(Path::new(&euc));
    let ids = |v: &Value| -> Vec<String> {
        v["data"]["results"]
            .as_array()
            .unwrap()
            .iter()
            .flat_map(|r| {
                r["entries"]
                    .as_array()
                    .unwrap()
                    .iter()
                    .map(|e| e["candidate_id"].as_str().unwrap().to_string())
            })
            .collect()
    };
    assert_eq!(ids(&r), ids(&e));
}

#[test]
fn reports_are_reproducible_without_timestamp() {
    let s = synth(&[]);
    let runs: [&[&str]; 5] = [
        &["ingest"],
        &["inc"],
        &["hist", "--bins", "8"],
        &["slerp-eval", "--theta", "0.3"],
        &["rank", "--frames", "scene-00-f000,scene-01-f002"],
    ];
    for args in runs {
        let mut texts = Vec::new();
        for i in 0..2 {
            let out = s.path(&format!("{}-{i}.json", args[0]));
            let mut full = args.to_vec();
            full.extend([
                "--manifest",
                &s.manifest,
                "--archive",
                &s.archive,
                "--no-timestamp",
                "--out",
                &out,
            ]);
            ok(&full);
            report(Path::new(&out));
            texts.push(fs::read(&out).unwrap());
        }
        assert_eq!(texts[0], texts[1], "{}", args[0]);
    }
    let hist = report(&s.root.join("hist-0.json"));
    let hs = hist["data"]["histograms"].as_array().unwrap();
    assert_eq!(hs.len(), 3);
    assert_eq!(hs[2]["component"], "inc");
    assert_eq!(hs[2]["counts"].as_array().unwrap().len(), 8);
    let se = report(&s.root.join("slerp-eval-0.json"));
    assert_eq!(se["data"]["theta"], 0.3);
    assert_eq!(se["data"]["cells"].as_array().unwrap().len(), 4);
}

#[test]
fn slerp_eval_uses_configured_references() {
    let s = synth(&[]);
    let cfg = s.path("run.toml");
    fs::write(
        &cfg,
        "theta = 0.25\n[reference_audio]\n\"scene-02\" = \"scene-02-f003#a0\"\n",
    )
    .unwrap();
    let out = s.path("se.json");
    ok(&[
        "slerp-eval",
        "--manifest",
        &s.manifest,
        "--archive",
        &s.archive,
        "--config",
        &cfg,
        "--out",
        &out,
    ]);
    let r = report(Path::new(&out));
    assert_eq!(r["data"]["theta"], 0.25);
    let refs = r["data"]["references"].as_array().unwrap();
    assert_eq!(refs.len(), 1);
    assert_eq!(refs[0]["frame_id"], "scene-02-f003");
    // Flags win over the config file.
    ok(&[
        "slerp-eval",
        "--manifest",
        &s.manifest,
        "--archive",
        &s.archive,
        "--config",
        &cfg,
        "--theta",
        "0.75",
        "--out",
        &out,
    ]);
    assert_eq!(report(Path::new(&out))["data"]["theta"], 0.75);

    fs::write(
        &cfg,
        "[reference_audio]\n\"scene-02\" = \"scene-01-f000#a0\"\n",
    )
    .unwrap();
    let bad = sonify(&[
        "slerp-eval",
        "--manifest",
        &s.manifest,
        "--archive",
        &s.archive,
        "--config",
        &cfg,
    ]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn correlate_bundled_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c.json").display().to_string();
    ok(&[
        "correlate",
        "--ratings",
        &fixture("ratings.csv"),
        "--metrics",
        &fixture("metrics.csv"),
        "--out",
        &out,
    ]);
    let r = report(Path::new(&out));
    // Per-pair MOS (5, 3, 4) against (0.1, 0.2, 0.3): deviations (1, -1, 0)
    // and (-1, 0, 1) give r = -1 / 2.
    assert!((r["data"]["r"].as_f64().unwrap() + 0.5).abs() < 1e-9);
    assert_eq!(r["data"]["n"], 3);
    assert_eq!(r["data"]["metric_name"], "dis_cos");
    ok(&[
        "correlate",
        "--ratings",
        &fixture("ratings.csv"),
        "--metrics",
        &fixture("metrics.csv"),
        "--independent",
        "--out",
        &out,
    ]);
    let r = report(Path::new(&out));
    assert_eq!(r["data"]["n"], 6);
    assert!((r["data"]["r"].as_f64().unwrap() + 0.5).abs() < 1e-9);
}

#[test]
fn mos_by_scene_and_pair() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.json").display().to_string();
    ok(&[
        "mos",
        "--ratings",
        &fixture("ratings.csv"),
        "--manifest",
        &fixture("manifest.jsonl"),
        "--out",
        &out,
    ]);
    let r = report(Path::new(&out));
    let groups = r["data"]["groups"].as_array().unwrap();
    assert_eq!(groups.len(), 2);
    assert_eq!(groups[0]["group"], "cofre");
    assert_eq!(groups[0]["mean"], 4.0);
    assert_eq!(groups[1]["mean"], 4.0);
    ok(&["mos", "--ratings", &fixture("ratings.csv"), "--out", &out]);
    assert_eq!(
        report(Path::new(&out))["data"]["groups"]
            .as_array()
            .unwrap()
            .len(),
        3
    );
}

#[test]
fn exit_codes_and_diagnostics() {
    let s = synth(&[]);
    let missing = sonify(&[
        "ingest",
        "--manifest",
        "/nonexistent.jsonl",
        "--archive",
        &s.archive,
    ]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("/nonexistent.jsonl"));

    let broken = s.path("broken.jsonl");
    let mut text = fs::read_to_string(&s.manifest).unwrap();
    text.push_str("{not json\n");
    fs::write(&broken, text).unwrap();
    let out = sonify(&["ingest", "--manifest", &broken, "--archive", &s.archive]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("broken.jsonl") && err.contains("line 61"),
        "{err}"
    );

    let unknown = sonify(&[
        "rank",
        "--manifest",
        &s.manifest,
        "--archive",
        &s.archive,
        "--frames",
        "ghost",
    ]);
    assert_eq!(unknown.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("ghost"));

    let theta = sonify(&[
        "slerp-eval",
        "--manifest",
        &s.manifest,
        "--archive",
        &s.archive,
        "--theta",
        "1.5",
    ]);
    assert_eq!(theta.status.code(), Some(1));
    assert_eq!(sonify(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(
        sonify(&["rank", "--distance", "manhattan"]).status.code(),
        Some(1)
    );
    assert_eq!(sonify(&["--help"]).status.code(), Some(0));

    // Unwritable output is a runtime failure.
    let out = sonify(&[
        "ingest",
        "--manifest",
        &s.manifest,
        "--archive",
        &s.archive,
        "--out",
        "/nonexistent/dir/r.json",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn report_goes_to_stdout_without_out() {
    let s = synth(&[]);
    let out = ok(&[
        "ingest",
        "--manifest",
        &s.manifest,
        "--archive",
        &s.archive,
        "--no-timestamp",
    ]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    validate(&v).unwrap();
    assert_eq!(v["kind"], "ingest");
    assert_eq!(v["data"]["dim"], 64);
}

fn script(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, format!("#!/bin/sh\n{body}\n")).unwrap();
    p.display().to_string()
}

#[test]
fn sonorize2_with_process_adapters() {
    let s = synth(&[]);
    let work = s.root.join("work");
    // The encoder answers with a prewritten archive covering the request.
    let store = EmbeddingStore::ingest(&s.manifest, &s.archive, true).unwrap();
    let frame = store.get("scene-00-f000").unwrap().clone();
    let t = store.get("scene-00-f000#t0").unwrap().clone();
    let a = store.get("scene-00-f000#a0").unwrap().clone();
    let b = store.get("scene-01-f000#a0").unwrap().clone();
    let archive = sonify_core::store::Archive::new(
        64,
        vec![
            frame,
            t.clone().with_id("scene-00-f000#t0"),
            a.with_id("scene-00-f000#t0a0"),
            b.with_id("scene-00-f000#t0a1"),
            t.with_id("scene-00-f000#t1"),
            store
                .get("scene-00-f001#a0")
                .unwrap()
                .clone()
                .with_id("scene-00-f000#t1a0"),
            store
                .get("scene-02-f000#a0")
                .unwrap()
                .clone()
                .with_id("scene-00-f000#t1a1"),
        ],
    )
    .unwrap();
    let pre = s.root.join("pre.emb");
    fs::write(&pre, archive.to_bytes().unwrap()).unwrap();

    let cap = script(&s.root, "cap.sh", "printf 'waves\\nwind\\n' > \"$2\"");
    let gen = script(&s.root, "gen.sh", "touch \"$2/x.wav\" \"$2/y.wav\"");
    let enc = script(&s.root, "enc.sh", &format!("cp {} \"$2\"", pre.display()));
    let adapters = s.path("adapters.toml");
    fs::write(
        &adapters,
        format!(
            "[captioner]\ncommand = \"sh {cap} {{input}} {{output}}\"\nvariants = 2\n\
             [audio_generator]\ncommand = \"sh {gen} {{input}} {{output}}\"\nvariants = 2\n\
             [encoder]\ncommand = \"sh {enc} {{input}} {{output}}\"\n"
        ),
    )
    .unwrap();
    let out = s.path("s2.json");
    let work_s = work.display().to_string();
    ok(&[
        "sonorize2",
        "--manifest",
        &s.manifest,
        "--frame",
        "scene-00-f000",
        "--adapters",
        &adapters,
        "--workdir",
        &work_s,
        "--k",
        "3",
        "--concurrency",
        "2",
        "--out",
        &out,
    ]);
    let r = report(Path::new(&out));
    assert_eq!(
        r["data"]["candidates"]["entries"].as_array().unwrap().len(),
        3
    );
    assert_eq!(r["data"]["lineage"].as_array().unwrap().len(), 4);
    let incs = r["data"]["inconsistency"].as_array().unwrap();
    let best = incs
        .iter()
        .min_by(|x, y| {
            x["inc"]
                .as_f64()
                .unwrap()
                .abs()
                .total_cmp(&y["inc"].as_f64().unwrap().abs())
        })
        .unwrap();
    assert_eq!(r["data"]["chosen_audio_id"], best["audio_id"]);
    assert!(r["data"]["chosen_audio_id"]
        .as_str()
        .unwrap()
        .ends_with("a0"));

    ok(&[
        "sonorize2",
        "--manifest",
        &s.manifest,
        "--frame",
        "scene-00-f000",
        "--adapters",
        &adapters,
        "--workdir",
        &work_s,
        "--archive",
        &s.archive,
        "--reference-frame",
        "scene-00-f001",
        "--reference-audio",
        "scene-00-f001#a0",
        "--theta",
        "1",
        "--out",
        &out,
    ]);
    let r = report(Path::new(&out));
    assert_eq!(r["data"]["candidates"]["metric_name"], "slerp_distance");
    assert_eq!(r["data"]["chosen_audio_id"], "scene-00-f000#t1a0");

    // A failing generator is a runtime failure naming the stage.
    let bad = script(&s.root, "bad.sh", "echo boom >&2; exit 4");
    fs::write(
        &adapters,
        format!(
            "[captioner]\ncommand = \"sh {cap} {{input}} {{output}}\"\nvariants = 2\n\
             [audio_generator]\ncommand = \"sh {bad} {{input}} {{output}}\"\n\
             [encoder]\ncommand = \"sh {enc} {{input}} {{output}}\"\n"
        ),
    )
    .unwrap();
    let failed = sonify(&[
        "sonorize2",
        "--manifest",
        &s.manifest,
        "--frame",
        "scene-00-f000",
        "--adapters",
        &adapters,
        "--workdir",
        &work_s,
    ]);
    assert_eq!(failed.status.code(), Some(2));
    let err = String::from_utf8_lossy(&failed.stderr);
    assert!(
        err.contains("audio_generator") && err.contains("boom"),
        "{err}"
    );

    fs::write(&adapters, "[captioner]\ncommand = \"cap {input}\"\n").unwrap();
    let invalid = sonify(&[
        "sonorize2",
        "--manifest",
        &s.manifest,
        "--frame",
        "scene-00-f000",
        "--adapters",
        &adapters,
        "--workdir",
        &work_s,
    ]);
    assert_eq!(invalid.status.code(), Some(1));
}
