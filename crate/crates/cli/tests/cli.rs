// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use resstream::featviz::jitter_for;
use resstream::resnet::{synthetic_weights, FIXTURE_SEED};
use resstream_cli::montage::{montage_height, HEADER_KEY, WIDTH};
use resstream_cli::table::read_rows;
use serde_json::Value;

const REDUCED: [&str; 4] = ["--steps", "4", "--image-size", "32"];

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_resstream"))
        .args(args)
        .env_remove("RESSTREAM_CACHE_DIR")
        .output()
        .expect("binary runs")
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("stdout not JSON ({e}): {:?}", o))
}

fn stderr_json(o: &Output) -> Value {
    let text = String::from_utf8_lossy(&o.stderr);
    let line = text.lines().last().expect("stderr has a line");
    serde_json::from_str(line).unwrap_or_else(|e| panic!("stderr tail not JSON ({e}): {text}"))
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

struct Dirs {
    _tmp: tempfile::TempDir,
    out: PathBuf,
    cache: PathBuf,
}

fn dirs() -> Dirs {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cache = tmp.path().join("cache");
    Dirs { out, cache, _tmp: tmp }
}

fn sweep_args<'a>(verb: &'a str, d: &'a Dirs, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![
        verb,
        "--weights",
        "synthetic",
        "--out",
        d.out.to_str().unwrap(),
        "--cache-dir",
        d.cache.to_str().unwrap(),
    ];
    v.extend(REDUCED);
    v.extend(extra);
    v
}

#[test]
fn check_weights_reports_count_and_hash() {
    let ws = synthetic_weights(FIXTURE_SEED);
    let o = run(&["check-weights", "--weights", "synthetic"]);
    assert!(o.status.success(), "{o:?}");
    let v = stdout_json(&o);
    assert_eq!(v["tensor_count"], 102);
    assert_eq!(v["weights_hash"], ws.hash());

    // The same weights through a written export.
    let dir = tempfile::tempdir().unwrap();
    ws.save(dir.path(), Some("test")).unwrap();
    let o = run(&["check-weights", "--weights", dir.path().join("manifest.json").to_str().unwrap()]);
    assert!(o.status.success(), "{o:?}");
    assert_eq!(stdout_json(&o)["tensor_count"], 102);
}

#[test]
fn usage_errors_exit_2() {
    for args in [
        &["frobnicate"][..],
        &["check-weights", "--bogus"],
        &["mix", "--weights", "synthetic", "--block", "7.1"],
        &[],
    ] {
        let o = run(args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        assert!(String::from_utf8_lossy(&o.stderr).contains("--help"), "{args:?}");
    }
}

#[test]
fn runtime_errors_exit_1_with_json_on_stderr() {
    let dir = tempfile::tempdir().unwrap();
    synthetic_weights(FIXTURE_SEED).save(dir.path(), None).unwrap();
    let path = dir.path().join("manifest.json");
    let mut m = json(&path);
    let tensors = m["tensors"].as_array_mut().unwrap();
    tensors.retain(|t| t["name"] != "fc.bias");
    std::fs::write(&path, serde_json::to_vec(&m).unwrap()).unwrap();
    let o = run(&["check-weights", "--weights", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let e = stderr_json(&o);
    assert!(e["message"].as_str().unwrap().contains("fc.bias"), "{e}");

    let d = dirs();
    let o = run(&sweep_args("mix", &d, &["--block", "1.0"]));
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr_json(&o)["error"], "core");
}

#[test]
fn mix_writes_one_row_per_channel_and_reruns_identically() {
    let d = dirs();
    let args = sweep_args("mix", &d, &["--block", "1.1"]);
    let o = run(&args);
    assert!(o.status.success(), "{o:?}");
    let csv = d.out.join("mix_1_1.csv");
    let rows = read_rows(&csv).unwrap();
    assert_eq!(rows.len(), 64);
    assert!(rows.iter().enumerate().all(|(i, r)| r.channel == i && r.schema_version == 1));
    let header = std::fs::read_to_string(&csv).unwrap();
    let header = header.lines().next().unwrap();
    for col in ["schema_version", "block", "M", "clamp_reason", "passes_mix", "SM", "excluded_flag"] {
        assert!(header.split(',').any(|c| c == col), "{col} missing from {header}");
    }

    let report = json(&d.out.join("mix_1_1.json"));
    let h = &report["header"];
    assert_eq!(h["reduced_config"], true);
    assert_eq!(h["run_config"]["fz"]["steps"], 4);
    assert_eq!(rows[0].run_config_hash, h["run_config_hash"].as_str().unwrap());
    assert_eq!(rows[0].weights_hash, h["weights_hash"].as_str().unwrap());
    let hist: u64 = report["data"]["histogram"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).sum();
    assert_eq!(hist as usize, rows.iter().filter(|r| !r.excluded_flag).count());

    let svg = std::fs::read_to_string(d.out.join("mix_hist_1_1.svg")).unwrap();
    assert!(svg.starts_with("<?xml") && svg.trim_end().ends_with("</svg>"));
    assert!(!svg.contains("href") && !svg.contains("url("));
    assert!(svg.contains(h["run_config_hash"].as_str().unwrap()));

    // A rerun from the cache reproduces every artifact byte for byte.
    let before: Vec<Vec<u8>> = ["mix_1_1.csv", "mix_1_1.json", "mix_hist_1_1.svg"]
        .iter()
        .map(|f| std::fs::read(d.out.join(f)).unwrap())
        .collect();
    assert!(run(&args).status.success());
    for (f, b) in ["mix_1_1.csv", "mix_1_1.json", "mix_hist_1_1.svg"].iter().zip(before) {
        assert_eq!(std::fs::read(d.out.join(f)).unwrap(), b, "{f}");
    }
}

#[test]
fn checkpoints_are_kept_only_with_resume() {
    let d = dirs();
    let ckpt = d.out.join("checkpoints");
    std::fs::create_dir_all(&ckpt).unwrap();
    std::fs::write(ckpt.join("sentinel"), b"x").unwrap();
    let mut args = sweep_args("mix", &d, &["--block", "1.1", "--resume"]);
    assert!(run(&args).status.success());
    assert!(ckpt.join("sentinel").exists());
    assert!(ckpt.join("sweep-1_1.json").exists());
    args.pop();
    assert!(run(&args).status.success());
    assert!(!ckpt.join("sentinel").exists());
}

fn png_header(path: &Path) -> Value {
    let dec = png::Decoder::new(std::io::BufReader::new(std::fs::File::open(path).unwrap()));
    let reader = dec.read_info().unwrap();
    let chunk = reader
        .info()
        .utf8_text
        .iter()
        .find(|c| c.keyword == HEADER_KEY)
        .expect("header chunk");
    serde_json::from_str(&chunk.get_text().unwrap()).unwrap()
}

#[test]
fn scale_montage_with_and_without_mined_corpus() {
    let d = dirs();
    let o = run(&sweep_args("scale", &d, &["--block", "1.1", "--top", "2"]));
    assert!(o.status.success(), "{o:?}");
    let top = json(&d.out.join("scale_1_1_top.json"));
    let chans = top["data"]["channels"].as_array().unwrap();
    assert_eq!(chans.len(), 2);
    let sm: Vec<f64> = chans.iter().map(|c| c["scale"]["SM"].as_f64().unwrap()).collect();
    assert!(sm[0] >= sm[1]);
    assert_eq!(top["data"]["top9_available"], false);
    let png = d.out.join("scale_1_1_montage.png");
    let img = image::open(&png).unwrap();
    assert_eq!((img.width(), img.height()), (WIDTH, montage_height(4)));
    let h = png_header(&png);
    assert_eq!(h["run_config_hash"], top["header"]["run_config_hash"]);
    assert!(h["corpus_hash"].is_null());

    // Mine a small corpus, then rebuild the montage with image grids.
    let corpus = d._tmp.path().join("corpus");
    std::fs::create_dir_all(&corpus).unwrap();
    for i in 0..10u32 {
        let img = image::RgbImage::from_fn(40, 30, |x, y| image::Rgb([(x * 6 + i * 20) as u8, (y * 8) as u8, (i * 25) as u8]));
        img.save(corpus.join(format!("img{i:02}.png"))).unwrap();
    }
    let o = run(&[
        "mine-top9",
        "--weights",
        "synthetic",
        "--out",
        d.out.to_str().unwrap(),
        "--blocks",
        "1.1",
        "--corpus",
        corpus.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{o:?}");
    let artifact = d.out.join("top9.json");
    let a = json(&artifact);
    assert_eq!(a["data"]["corpus"]["entries"].as_array().unwrap().len(), 10);
    let mined_hash = a["header"]["corpus_hash"].clone();
    assert!(mined_hash.is_string());

    let o = run(&sweep_args("scale", &d, &["--block", "1.1", "--top", "2", "--top9", artifact.to_str().unwrap()]));
    assert!(o.status.success(), "{o:?}");
    let img = image::open(&png).unwrap();
    assert_eq!((img.width(), img.height()), (WIDTH, montage_height(4)));
    assert_eq!(png_header(&png)["corpus_hash"], mined_hash);
    assert_eq!(json(&d.out.join("scale_1_1_top.json"))["data"]["top9_available"], true);
}

#[test]
fn viz_writes_image_and_meta() {
    let d = dirs();
    let o = run(&sweep_args("viz", &d, &["--block", "2.1", "--role", "output", "--channel", "5", "--objective", "channel"]));
    assert!(o.status.success(), "{o:?}");
    let stem = d.out.join("viz_2_1_output_5_channel");
    let img = image::open(stem.with_extension("png")).unwrap();
    assert_eq!((img.width(), img.height()), (32, 32));
    let meta = json(&stem.with_extension("json"));
    assert_eq!(meta["data"]["channel"], 5);
    assert_eq!(meta["data"]["objective"], "channel");
    let tap = "2.1.output".parse().unwrap();
    assert_eq!(meta["header"]["run_config"]["fz"]["jitter_primary"], jitter_for(tap));
}

#[test]
fn report_writes_plots_and_nothing_for_an_empty_selection() {
    let d = dirs();
    assert!(run(&sweep_args("sweep", &d, &["--blocks", "1.1"])).status.success());
    for f in ["sweep_1_1.csv", "sweep_1_1.json", "magnitude_1_1.json", "hist_1_1.svg", "magnitude_1_1.svg", "pass_bars.svg"] {
        assert!(d.out.join(f).exists(), "{f}");
    }
    let bars = std::fs::read_to_string(d.out.join("pass_bars.svg")).unwrap();
    assert!(bars.contains(resstream_cli::plots::PURPLE) && bars.contains(resstream_cli::plots::YELLOW));

    let empty = d._tmp.path().join("empty");
    let o = run(&["report", "--out", empty.to_str().unwrap(), "--blocks", ""]);
    assert!(o.status.success(), "{o:?}");
    assert!(String::from_utf8_lossy(&o.stderr).contains("empty block selection"));
    assert!(!empty.exists());
}
