use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use shadeforge::corpus::{load_triplet, read_rgb, CorpusLayout};
use shadeforge::metrics::{evaluate_corpus, EvalCase};

fn shadeforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shadeforge"))
        .args(args)
        .env("SHADEFORGE_THREADS", "1")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = shadeforge(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    shadeforge(args).status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_slice(&fs::read(p).unwrap()).unwrap()
}

fn generate(dir: &Path, n: usize, canvas: &str) -> PathBuf {
    let out = dir.join("corpus");
    ok(&[
        "generate",
        "--n",
        &n.to_string(),
        "--out",
        s(&out),
        "--seed",
        "11",
        "--canvas",
        canvas,
    ]);
    out
}

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    for member in ["shadow", "shadow_free", "mask"] {
        let mut names: Vec<_> = fs::read_dir(root.join(member))
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        names.sort();
        files.extend(names.into_iter().map(|p| (p.clone(), fs::read(p).unwrap())));
    }
    files.push((
        root.join("manifest.json"),
        fs::read(root.join("manifest.json")).unwrap(),
    ));
    files
}

#[test]
fn generate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = generate(dir.path(), 10, "48x32");
    let files = tree(&a);
    assert_eq!(files.len(), 31);
    assert!(a.join("run.json").is_file());
    let first: Vec<_> = files.iter().map(|f| f.1.clone()).collect();
    ok(&[
        "generate",
        "--n",
        "10",
        "--out",
        s(&a),
        "--seed",
        "11",
        "--canvas",
        "48x32",
    ]);
    let second: Vec<_> = tree(&a).into_iter().map(|f| f.1).collect();
    assert_eq!(first, second);

    let b = dir.path().join("again");
    ok(&[
        "generate",
        "--from-manifest",
        s(&a.join("manifest.json")),
        "--out",
        s(&b),
    ]);
    let third: Vec<_> = tree(&b).into_iter().map(|f| f.1).collect();
    assert_eq!(first, third);

    assert_eq!(code(&["generate", "--n", "0", "--out", s(&dir.path().join("x"))]), 2);
    assert_eq!(
        code(&[
            "generate",
            "--n",
            "2",
            "--out",
            s(&dir.path().join("x")),
            "--canvas",
            "big"
        ]),
        2
    );
    assert_eq!(code(&["generate", "--out", s(&dir.path().join("x"))]), 2);
}

#[test]
fn analyze_constant_corpus_has_no_entropy() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("flat");
    let layout = CorpusLayout::create(&root).unwrap();
    for i in 0..4 {
        let img = image::RgbImage::from_pixel(20, 12, image::Rgb([90, 90, 90]));
        img.save(layout.path(shadeforge::corpus::Member::Shadow, &format!("{i:05}")))
            .unwrap();
    }
    let report = dir.path().join("report");
    ok(&["analyze", "--corpus", s(&root), "--report", s(&report), "--k", "2"]);
    let r = json(&report.join("report.json"));
    assert_eq!(r["images"], 4);
    assert_eq!(r["mean_shannon_entropy"].as_f64().unwrap(), 0.0);
    assert_eq!(r["mean_delentropy"].as_f64().unwrap(), 0.0);
    assert!(r["shadows"].is_null());
    assert!(report.join("per_image.csv").is_file());
    assert!(report.join("run.json").is_file());
}

#[test]
fn analyze_generated_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let root = generate(dir.path(), 6, "32x32");
    let report = dir.path().join("report");
    ok(&[
        "analyze",
        "--corpus",
        s(&root),
        "--report",
        s(&report),
        "--k",
        "3",
        "--heatmap",
        "--grid",
        "8x8",
    ]);
    let r = json(&report.join("report.json"));
    assert!(r["mean_shannon_entropy"].as_f64().unwrap() > 0.0);
    assert!(r["intrinsic_dimensionality"]["estimate"].as_f64().unwrap() > 0.0);
    assert_eq!(r["dwt"].as_array().unwrap().len(), 3);
    assert!(report.join("location_map.png").is_file());
    assert_eq!(
        code(&[
            "analyze",
            "--corpus",
            s(&root),
            "--report",
            s(&report),
            "--connectivity",
            "6"
        ]),
        2
    );
}

const TINY: [&str; 10] = [
    "--side",
    "16",
    "--base",
    "2",
    "--depth",
    "2",
    "--batch-size",
    "2",
    "--seed",
    "4",
];

fn train(corpus: &Path, ckpt: &Path, epochs: &str, extra: &[&str]) -> String {
    let mut args = vec!["train", "--corpus", s(corpus), "--ckpt", s(ckpt), "--epochs", epochs];
    args.extend(TINY);
    args.extend(extra);
    ok(&args)
}

fn steps(history: &Path) -> Vec<u64> {
    fs::read_to_string(history)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap())
        .filter(|v| v["kind"] == "step")
        .map(|v| v["step"].as_u64().unwrap())
        .collect()
}

#[test]
fn train_resume_eval_remove() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate(dir.path(), 6, "24x20");
    let ckpt = dir.path().join("ckpt");

    train(&corpus, &ckpt, "1", &[]);
    assert_eq!(steps(&ckpt.join("history.jsonl")), [1, 2, 3]);
    assert!(ckpt.join("step-3/model.shau").is_file());
    train(&corpus, &ckpt, "2", &["--resume"]);
    assert_eq!(steps(&ckpt.join("history.jsonl")), [1, 2, 3, 4, 5, 6]);
    assert_eq!(fs::read_to_string(ckpt.join("latest")).unwrap().trim(), "step-6");

    let report = dir.path().join("eval");
    let preds = dir.path().join("preds");
    let table = ok(&[
        "eval",
        "--corpus",
        s(&corpus),
        "--ckpt",
        s(&ckpt),
        "--report",
        s(&report),
        "--save-predictions",
        s(&preds),
        "--method",
        "Tiny",
    ]);
    assert!(table.contains("Input Image") && table.contains("Tiny"));
    let ev = json(&report.join("evaluation.json"));
    assert_eq!(ev["mean"]["images"], 6);
    let saved = read_rgb(&preds.join("00000.png")).unwrap();
    assert_eq!(saved.dimensions(), (24, 20));

    let again = dir.path().join("eval-dir");
    ok(&[
        "eval",
        "--corpus",
        s(&corpus),
        "--pred-dir",
        s(&preds),
        "--report",
        s(&again),
        "--method",
        "Tiny",
    ]);
    assert_eq!(json(&again.join("evaluation.json"))["mean"], ev["mean"]);

    let out = dir.path().join("single/out.png");
    let image = corpus.join("shadow/00001.png");
    let mask = corpus.join("mask/00001.png");
    ok(&[
        "remove",
        "--image",
        s(&image),
        "--mask",
        s(&mask),
        "--ckpt",
        s(&ckpt),
        "--out",
        s(&out),
    ]);
    assert_eq!(read_rgb(&out).unwrap(), read_rgb(&preds.join("00001.png")).unwrap());
    assert!(dir.path().join("single/run.json").is_file());
    assert_eq!(
        code(&[
            "remove",
            "--image",
            s(&image),
            "--mask",
            s(&dir.path().join("none.png")),
            "--ckpt",
            s(&ckpt),
            "--out",
            s(&out)
        ]),
        2
    );
    assert_eq!(
        code(&["train", "--corpus", s(&dir.path().join("missing")), "--ckpt", s(&ckpt)]),
        2
    );
    assert_eq!(
        code(&[
            "train",
            "--corpus",
            s(&corpus),
            "--ckpt",
            s(&ckpt),
            "--variant",
            "resnet"
        ]),
        2
    );
    assert_eq!(code(&["eval", "--corpus", s(&corpus), "--report", s(&report)]), 2);
}

#[test]
fn remove_keeps_odd_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate(dir.path(), 2, "37x23");
    let ckpt = dir.path().join("ckpt");
    train(&corpus, &ckpt, "1", &[]);
    let out = dir.path().join("out.png");
    ok(&[
        "remove",
        "--image",
        s(&corpus.join("shadow/00000.png")),
        "--mask",
        s(&corpus.join("mask/00000.png")),
        "--ckpt",
        s(&ckpt.join("step-1")),
        "--out",
        s(&out),
    ]);
    assert_eq!(read_rgb(&out).unwrap().dimensions(), (37, 23));
}

#[test]
fn eval_from_directories_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate(dir.path(), 5, "32x24");
    let stems: Vec<String> = (0..5).map(|i| format!("{i:05}")).collect();

    let perfect = dir.path().join("perfect");
    ok(&[
        "eval",
        "--corpus",
        s(&corpus),
        "--pred-dir",
        s(&corpus.join("shadow_free")),
        "--report",
        s(&perfect),
    ]);
    let p = json(&perfect.join("evaluation.json"));
    assert_eq!(p["mean"]["psnr_a"].as_f64().unwrap(), 100.0);
    assert_eq!(p["mean"]["rmse_a"].as_f64().unwrap(), 0.0);

    let identity = dir.path().join("identity");
    ok(&[
        "eval",
        "--corpus",
        s(&corpus),
        "--pred-dir",
        s(&corpus.join("shadow")),
        "--report",
        s(&identity),
        "--method",
        "shadow",
    ]);
    let got = json(&identity.join("evaluation.json"));
    assert_eq!(got["mean"], got["input_baseline"]);
    let want = evaluate_corpus("shadow", &stems, |stem| {
        let triplet = load_triplet(&corpus, stem)?;
        Ok(EvalCase {
            prediction: triplet.shadow.clone(),
            triplet,
        })
    });
    assert_eq!(got, serde_json::to_value(&want).unwrap());

    let mae = dir.path().join("mae");
    let table = ok(&[
        "eval",
        "--corpus",
        s(&corpus),
        "--pred-dir",
        s(&corpus.join("shadow")),
        "--report",
        s(&mae),
        "--mae-lab",
    ]);
    assert!(table.contains("MAE S"));
}

#[test]
fn ablate_reports_every_variant() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate(dir.path(), 6, "24x24");
    let report = dir.path().join("ablation");
    let table = ok(&[
        "ablate",
        "--corpus",
        s(&corpus),
        "--report",
        s(&report),
        "--steps",
        "2",
        "--base",
        "4",
        "--depth",
        "2",
        "--side",
        "16",
        "--batch-size",
        "2",
        "--validation-fraction",
        "0.34",
    ]);
    let r = json(&report.join("ablation.json"));
    let rows = r["rows"].as_array().unwrap();
    let names: Vec<&str> = rows.iter().map(|r| r["name"].as_str().unwrap()).collect();
    assert_eq!(names.len(), 5);
    for (name, row) in names.iter().zip(rows) {
        assert!(table.contains(name), "{name} missing from\n{table}");
        assert_eq!(row["steps"], 2);
        assert!(row["metrics"]["psnr_a"].as_f64().unwrap().is_finite());
        assert!(row["parameters"].as_u64().unwrap() > 0);
    }
    assert_eq!(r["evaluated_on"].as_array().unwrap().len(), 2);
    let params: Vec<u64> = rows.iter().map(|r| r["parameters"].as_u64().unwrap()).collect();
    assert!(params.windows(2).any(|w| w[0] != w[1]));
    assert_eq!(
        code(&[
            "ablate",
            "--corpus",
            s(&corpus),
            "--report",
            s(&report),
            "--variants",
            "shau,nope"
        ]),
        2
    );
}

#[test]
fn rerun_repeats_the_recorded_command() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate(dir.path(), 3, "16x16");
    let record = json(&corpus.join("run.json"));
    assert_eq!(record["command"], "generate");
    assert_eq!(record["plan"]["n"], 3);
    assert_eq!(record["threads"], 1);
    let before = tree(&corpus);
    for (p, _) in &before {
        fs::remove_file(p).unwrap();
    }
    ok(&["rerun", s(&corpus.join("run.json"))]);
    assert_eq!(tree(&corpus), before);
    assert_eq!(code(&["rerun", s(&dir.path().join("absent.json"))]), 2);
}

#[test]
fn bad_thread_count_is_a_usage_error() {
    let out = Command::new(env!("CARGO_BIN_EXE_shadeforge"))
        .args(["generate", "--n", "1", "--out", "/nonexistent/never"])
        .env("SHADEFORGE_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("SHADEFORGE_THREADS"));
}
