use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fallwatch_core::augment::{resize_bilinear, ImageBuffer};
use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fallwatch"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin()
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn gradient_image(w: usize, h: usize, salt: usize) -> ImageBuffer {
    let mut px = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            px.extend([
                ((x * 5 + salt) % 256) as u8,
                ((y * 3 + 2 * salt) % 256) as u8,
                ((x + y + 7 * salt) % 256) as u8,
            ]);
        }
    }
    ImageBuffer::new(w, h, px).unwrap()
}

fn write_ppm(path: &Path, img: &ImageBuffer) {
    fs::write(path, img.to_ppm_bytes()).unwrap();
}

/// `n` small labelled images plus a manifest, inside `dir`.
fn dataset(dir: &Path, n: usize) -> PathBuf {
    let mut manifest = String::new();
    for i in 0..n {
        write_ppm(&dir.join(format!("f{i}.ppm")), &gradient_image(40, 30, i));
        fs::write(
            dir.join(format!("f{i}.txt")),
            format!("{} 0.5 0.5 0.25 0.4\n0 0.2 0.3 0.1 0.1\n", i % 4),
        )
        .unwrap();
        manifest.push_str(&format!("f{i}.ppm\tf{i}.txt\n"));
    }
    let path = dir.join("manifest.tsv");
    fs::write(&path, manifest).unwrap();
    path
}

#[test]
fn help_lists_flags_and_defaults() {
    let tmp = TempDir::new().unwrap();
    let top = stdout(&run(&["--help"], tmp.path()));
    for needle in [
        "build-info",
        "augment",
        "detect",
        "eval",
        "report",
        "--seed <SEED>",
        "--classes <FILE>",
        "[default: 640]",
        "[default: 0.25]",
        "[default: 0.45]",
        "[default: table]",
        "--out <PATH>",
    ] {
        assert!(top.contains(needle), "missing {needle:?} in\n{top}");
    }
    let aug = stdout(&run(&["augment", "--help"], tmp.path()));
    for needle in [
        "[default: 0.15]",
        "[default: 0.1]",
        "[default: 0.25]",
        "[default: 0.05]",
        "--letterbox",
    ] {
        assert!(aug.contains(needle), "missing {needle:?} in\n{aug}");
    }
    let ev = stdout(&run(&["eval", "--help"], tmp.path()));
    assert!(ev.contains("--match-iou") && ev.contains("[default: 0.5]"));
}

#[test]
fn usage_errors_exit_one() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(code(&run(&["bogus"], tmp.path())), 1);
    assert_eq!(code(&run(&["build-info", "--img", "100"], tmp.path())), 1);
    assert_eq!(code(&run(&["build-info", "--conf", "1.5"], tmp.path())), 1);
    assert_eq!(code(&run(&["detect"], tmp.path())), 1);
    assert_eq!(code(&run(&["--help"], tmp.path())), 0);
}

#[test]
fn build_info_totals_and_formats() {
    let tmp = TempDir::new().unwrap();
    let table = stdout(&run(&["build-info"], tmp.path()));
    assert!(table.contains("parameters   25067452"), "{table}");
    assert!(table.contains("modules      339"));

    let json: Value = serde_json::from_str(&stdout(&run(
        &["build-info", "--format", "json"],
        tmp.path(),
    )))
    .unwrap();
    assert_eq!(json["total_params"], 25_067_452);
    let gflops = json["gflops"].as_f64().unwrap();
    assert!((gflops - 64.0).abs() <= 6.4, "{gflops}");
    let layers = json["layers"].as_array().unwrap();
    assert_eq!(layers.len(), 25);

    let csv = stdout(&run(&["build-info", "--format", "csv"], tmp.path()));
    let rows: Vec<Vec<&str>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect())
        .collect();
    assert_eq!(rows.len(), 26);
    for (row, layer) in rows.iter().zip(layers) {
        assert_eq!(
            row[0].parse::<u64>().unwrap(),
            layer["id"].as_u64().unwrap()
        );
        assert_eq!(row[1], layer["name"].as_str().unwrap());
        assert_eq!(
            row[7].parse::<u64>().unwrap(),
            layer["params"].as_u64().unwrap()
        );
        assert_eq!(
            row[8].parse::<u64>().unwrap(),
            layer["flops"].as_u64().unwrap()
        );
    }
    let total = &rows[25];
    assert_eq!(
        total[7].parse::<u64>().unwrap(),
        json["total_params"].as_u64().unwrap()
    );
    assert_eq!(
        total[8].parse::<u64>().unwrap(),
        json["total_flops"].as_u64().unwrap()
    );

    let out = tmp.path().join("info.json");
    let o = run(
        &[
            "build-info",
            "--format",
            "json",
            "--num-classes",
            "1",
            "--out",
            out.to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert_eq!(code(&o), 0);
    let one: Value = serde_json::from_slice(&fs::read(out).unwrap()).unwrap();
    assert_eq!(one["total_params"], 25_067_452 - 3 * 193 * 3);
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["images", "labels"] {
        let mut names: Vec<_> = fs::read_dir(dir.join(sub))
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        names.sort();
        for p in names {
            out.push((
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            ));
        }
    }
    for f in ["provenance.jsonl", "manifest.tsv"] {
        out.push((f.into(), fs::read(dir.join(f)).unwrap()));
    }
    out
}

#[test]
fn augment_sixty_images_reproducibly() {
    let tmp = TempDir::new().unwrap();
    let manifest = dataset(tmp.path(), 60);
    let args = |out: &str| -> Vec<String> {
        [
            "augment",
            "--manifest",
            manifest.to_str().unwrap(),
            "--out",
            out,
            "--img",
            "64",
            "--seed",
            "9",
        ]
        .map(String::from)
        .to_vec()
    };
    let a: Vec<String> = args("a");
    let o = bin().args(&a).current_dir(tmp.path()).output().unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let b: Vec<String> = args("b");
    assert_eq!(
        code(&bin().args(&b).current_dir(tmp.path()).output().unwrap()),
        0
    );

    let first = dir_bytes(&tmp.path().join("a"));
    assert_eq!(first.len(), 60 * 2 + 2);
    assert_eq!(first, dir_bytes(&tmp.path().join("b")));

    let log = fs::read_to_string(tmp.path().join("a/provenance.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 60);
    for line in log.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        assert!(v["hue_offset"].as_f64().unwrap().abs() <= 0.10);
        assert!((v["saturation_scale"].as_f64().unwrap() - 1.0).abs() <= 0.25);
        assert!((v["brightness_scale"].as_f64().unwrap() - 1.0).abs() <= 0.05);
        assert!(v["grayscale"].is_boolean());
    }
    // Stretch resize leaves normalized labels untouched.
    let label = fs::read_to_string(tmp.path().join("a/labels/00003_f3.txt")).unwrap();
    assert_eq!(
        label,
        "3 0.500000 0.500000 0.250000 0.400000\n0 0.200000 0.300000 0.100000 0.100000\n"
    );
}

#[test]
fn augment_zero_limits_is_plain_resize() {
    let tmp = TempDir::new().unwrap();
    let manifest = dataset(tmp.path(), 3);
    let o = run(
        &[
            "augment",
            "--manifest",
            manifest.to_str().unwrap(),
            "--out",
            "z",
            "--img",
            "48",
            "--gray-prob",
            "0",
            "--hue",
            "0",
            "--sat",
            "0",
            "--bright",
            "0",
        ],
        tmp.path(),
    );
    assert_eq!(code(&o), 0);
    for i in 0..3 {
        let got = fs::read(tmp.path().join(format!("z/images/{i:05}_f{i}.ppm"))).unwrap();
        let want = resize_bilinear(&gradient_image(40, 30, i), 48, 48)
            .unwrap()
            .to_ppm_bytes();
        assert_eq!(got, want);
    }
}

#[test]
fn augment_reports_bad_inputs_and_continues() {
    let tmp = TempDir::new().unwrap();
    let manifest = dataset(tmp.path(), 4);
    fs::write(tmp.path().join("f1.txt"), "7 0.5 0.5 0.1 0.1\n").unwrap();
    fs::write(tmp.path().join("f2.ppm"), b"not an image").unwrap();
    let o = run(
        &[
            "augment",
            "--manifest",
            manifest.to_str().unwrap(),
            "--out",
            "o",
            "--img",
            "32",
        ],
        tmp.path(),
    );
    assert_eq!(code(&o), 1);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("f1") && err.contains("f2"), "{err}");
    let m = fs::read_to_string(tmp.path().join("o/manifest.tsv")).unwrap();
    assert_eq!(m.lines().count(), 2);
}

fn detection_lines(text: &str) -> Vec<Value> {
    text.lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn detect_structure_thresholds_and_determinism() {
    let tmp = TempDir::new().unwrap();
    write_ppm(&tmp.path().join("img.ppm"), &gradient_image(96, 80, 1));
    let common = [
        "detect", "img.ppm", "--img", "64", "--seed", "5", "--conf", "0.3",
    ];
    let a = run(&common, tmp.path());
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stderr));
    let lines = detection_lines(&stdout(&a));
    assert!(!lines.is_empty());
    for d in &lines {
        let obj = d.as_object().unwrap();
        assert_eq!(obj.len(), 4);
        assert_eq!(d["image"], "img.ppm");
        assert!(d["class_id"].as_u64().unwrap() < 4);
        let s = d["score"].as_f64().unwrap();
        assert!(s > 0.3 && s <= 1.0);
        let b: Vec<f64> = d["box"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_f64().unwrap())
            .collect();
        assert!(0.0 <= b[0] && b[0] <= b[2] && b[2] <= 96.0);
        assert!(0.0 <= b[1] && b[1] <= b[3] && b[3] <= 80.0);
    }
    let b = run(&common, tmp.path());
    assert_eq!(a.stdout, b.stdout);

    let none = run(
        &["detect", "img.ppm", "--img", "64", "--conf", "1.0"],
        tmp.path(),
    );
    assert_eq!(code(&none), 0);
    assert!(none.stdout.is_empty());
}

#[test]
fn detect_weight_files() {
    let tmp = TempDir::new().unwrap();
    write_ppm(&tmp.path().join("img.ppm"), &gradient_image(64, 64, 2));
    let seeded = run(
        &[
            "detect",
            "img.ppm",
            "--img",
            "64",
            "--seed",
            "4",
            "--export-weights",
            "w.bin",
            "--out",
            "a.jsonl",
        ],
        tmp.path(),
    );
    assert_eq!(code(&seeded), 0);
    let loaded = run(
        &[
            "detect",
            "img.ppm",
            "--img",
            "64",
            "--weights",
            "w.bin",
            "--out",
            "b.jsonl",
        ],
        tmp.path(),
    );
    assert_eq!(code(&loaded), 0);
    assert_eq!(
        fs::read(tmp.path().join("a.jsonl")).unwrap(),
        fs::read(tmp.path().join("b.jsonl")).unwrap()
    );

    fs::write(tmp.path().join("two.txt"), "a\nb\n").unwrap();
    let mismatch = run(
        &[
            "detect",
            "img.ppm",
            "--img",
            "64",
            "--weights",
            "w.bin",
            "--classes",
            "two.txt",
        ],
        tmp.path(),
    );
    assert_eq!(code(&mismatch), 1);

    let mut bytes = fs::read(tmp.path().join("w.bin")).unwrap();
    bytes[0] = b'X';
    fs::write(tmp.path().join("bad.bin"), bytes).unwrap();
    let bad = run(
        &["detect", "img.ppm", "--img", "64", "--weights", "bad.bin"],
        tmp.path(),
    );
    assert_eq!(code(&bad), 1);
    assert!(String::from_utf8_lossy(&bad.stderr).contains("magic"));

    let missing = run(&["detect", "nope.ppm", "--img", "64"], tmp.path());
    assert_eq!(code(&missing), 1);
}

/// Ground truth of [`dataset`] written back as perfect detections.
fn perfect_detections(n: usize) -> String {
    let mut s = String::new();
    for i in 0..n {
        let (w, h) = (40.0, 30.0);
        let boxes = [(i % 4, 0.5, 0.5, 0.25, 0.4), (0, 0.2, 0.3, 0.1, 0.1)];
        for (c, cx, cy, bw, bh) in boxes {
            let b = [
                (cx - bw / 2.0) * w,
                (cy - bh / 2.0) * h,
                (cx + bw / 2.0) * w,
                (cy + bh / 2.0) * h,
            ];
            s.push_str(&format!(
                "{{\"image\":\"f{i}.ppm\",\"class_id\":{c},\"score\":0.9,\"box\":[{},{},{},{}]}}\n",
                b[0], b[1], b[2], b[3]
            ));
        }
    }
    s
}

#[test]
fn eval_perfect_empty_and_missing() {
    let tmp = TempDir::new().unwrap();
    let manifest = dataset(tmp.path(), 5);
    fs::write(tmp.path().join("perfect.jsonl"), perfect_detections(5)).unwrap();
    let o = run(
        &[
            "eval",
            "--detections",
            "perfect.jsonl",
            "--manifest",
            manifest.to_str().unwrap(),
            "--format",
            "json",
            "--save-dir",
            "ev",
        ],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let doc: Value = serde_json::from_slice(&o.stdout).unwrap();
    for k in ["map50", "map50_95", "precision", "recall"] {
        assert_eq!(doc[k], 1.0, "{k}");
    }
    let m = &doc["confusion_matrix"];
    assert_eq!(m[0][0], 7);
    assert_eq!(m[4][4], 0);
    for f in [
        "metrics.csv",
        "metrics.json",
        "pr_table.csv",
        "confusion.csv",
    ] {
        assert!(tmp.path().join("ev").join(f).exists(), "{f}");
    }

    fs::write(tmp.path().join("empty.jsonl"), "").unwrap();
    let o = run(
        &[
            "eval",
            "--detections",
            "empty.jsonl",
            "--manifest",
            manifest.to_str().unwrap(),
            "--format",
            "csv",
        ],
        tmp.path(),
    );
    assert_eq!(code(&o), 0);
    let csv = stdout(&o);
    assert!(csv.starts_with("metric,class,value\n"));
    assert!(
        csv.contains("recall,all,0\n") && csv.contains("precision,all,0\n"),
        "{csv}"
    );

    fs::write(
        tmp.path().join("stray.jsonl"),
        "{\"image\":\"ghost.ppm\",\"class_id\":0,\"score\":0.5,\"box\":[0,0,1,1]}\n",
    )
    .unwrap();
    let o = run(
        &[
            "eval",
            "--detections",
            "stray.jsonl",
            "--manifest",
            manifest.to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("ghost.ppm"));
}

#[test]
fn eval_fp_then_tp_fixture() {
    // One image, one class-0 box; a higher-scoring miss, then a hit.
    let tmp = TempDir::new().unwrap();
    write_ppm(&tmp.path().join("x.ppm"), &gradient_image(100, 100, 0));
    fs::write(tmp.path().join("x.txt"), "0 0.5 0.5 0.2 0.2\n").unwrap();
    fs::write(tmp.path().join("m.tsv"), "x.ppm\tx.txt\n").unwrap();
    fs::write(
        tmp.path().join("d.jsonl"),
        "{\"image\":\"x.ppm\",\"class_id\":0,\"score\":0.9,\"box\":[0,0,10,10]}\n\
         {\"image\":\"x.ppm\",\"class_id\":0,\"score\":0.8,\"box\":[40,40,60,60]}\n",
    )
    .unwrap();
    let o = run(
        &[
            "eval",
            "--detections",
            "d.jsonl",
            "--manifest",
            "m.tsv",
            "--format",
            "json",
        ],
        tmp.path(),
    );
    assert_eq!(code(&o), 0);
    let doc: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(doc["map50"], 0.5);
    assert_eq!(doc["precision"], 0.5);
    assert_eq!(doc["recall"], 1.0);
    assert_eq!(
        doc["per_class"][0]["pr_curve"],
        serde_json::json!([[0.0, 0.0], [1.0, 0.5]])
    );
}

#[test]
fn report_outputs() {
    let tmp = TempDir::new().unwrap();
    let doc = serde_json::json!({
        "classes": ["only"],
        "images": 1,
        "map50": 1.0, "map50_95": 1.0, "precision": 1.0, "recall": 1.0,
        "best": {"confidence": 0.9, "precision": 1.0, "recall": 1.0, "f1": 1.0},
        "per_class": [{"class_id": 0, "name": "only", "instances": 1, "detections": 1,
                       "ap50": 1.0, "ap50_95": 1.0, "pr_curve": [[1.0, 1.0]]}],
        "operating_points": [{"confidence": 0.9, "precision": 1.0, "recall": 1.0, "f1": 1.0}],
        "confusion_matrix": [[1, 0], [0, 0]]
    });
    fs::write(tmp.path().join("metrics.json"), doc.to_string()).unwrap();
    let o = run(
        &["report", "--metrics", "metrics.json", "--out", "r"],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let svg = fs::read_to_string(tmp.path().join("r/pr_0_only.svg")).unwrap();
    assert!(svg.contains(r#"points="1,1""#), "{svg}");

    let csv = "metric,class,value\nmap50,all,0.75\nap50,\"a, b\",0.5\n";
    fs::write(tmp.path().join("m.csv"), csv).unwrap();
    let o = run(&["report", "--metrics", "m.csv", "--out", "r2"], tmp.path());
    assert_eq!(code(&o), 0);
    assert_eq!(
        fs::read_to_string(tmp.path().join("r2/summary.csv")).unwrap(),
        csv
    );

    fs::write(
        tmp.path().join("loss.csv"),
        "epoch,box_loss\n1,0.9\n2,0.6\n3,0.45\n4,0.32\n",
    )
    .unwrap();
    let o = run(
        &["report", "--loss-log", "loss.csv", "--out", "r3"],
        tmp.path(),
    );
    assert_eq!(code(&o), 0);
    let svg = fs::read_to_string(tmp.path().join("r3/loss_box_loss.svg")).unwrap();
    let attr = |name: &str| -> f64 {
        let key = format!("{name}=\"");
        let start = svg.find(&key).unwrap() + key.len();
        svg[start..start + svg[start..].find('"').unwrap()]
            .parse()
            .unwrap()
    };
    assert!(attr("data-y-min") <= 0.32 && attr("data-y-max") >= 0.9);

    fs::write(tmp.path().join("broken.csv"), "epoch,box_loss\n1,abc\n").unwrap();
    assert_eq!(
        code(&run(
            &["report", "--loss-log", "broken.csv", "--out", "r4"],
            tmp.path()
        )),
        1
    );
    fs::write(
        tmp.path().join("short.csv"),
        "metric,class,value\nmap50,all\n",
    )
    .unwrap();
    assert_eq!(
        code(&run(
            &["report", "--metrics", "short.csv", "--out", "r5"],
            tmp.path()
        )),
        1
    );
    assert_eq!(code(&run(&["report", "--out", "r6"], tmp.path())), 1);
}
