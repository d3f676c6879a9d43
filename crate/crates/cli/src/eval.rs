use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use fallwatch_core::dataset::{norm_to_pixel, parse_label_file, ClassMap};
use fallwatch_core::eval::{
    confusion_matrix, evaluate, match_detections, pr_curve, EvalSummary, OperatingPoint,
};
use fallwatch_core::{BBox64, EvalDetection, GroundTruth};
use serde::{Deserialize, Serialize};

use crate::files::{
    class_map, csv_field, ensure_dir, image_size, output, read_detections, read_manifest, read_text,
};
use crate::{Common, Format, Outcome};

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// JSON-lines detections, as written by `detect`.
    #[arg(long, value_name = "FILE")]
    pub detections: PathBuf,
    /// Ground-truth manifest (`image<TAB>label` per line).
    #[arg(long, value_name = "FILE")]
    pub manifest: PathBuf,
    /// IoU needed to pair a detection with a ground truth in the confusion matrix.
    #[arg(long, default_value_t = 0.5)]
    pub match_iou: f64,
    /// Also write metrics.csv, metrics.json, pr_table.csv and confusion.csv here.
    #[arg(long, value_name = "DIR")]
    pub save_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassReport {
    pub class_id: usize,
    pub name: String,
    pub instances: usize,
    pub detections: usize,
    pub ap50: f64,
    pub ap50_95: f64,
    /// `(recall, precision)` at IoU 0.5, in score order.
    pub pr_curve: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PointReport {
    pub confidence: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl From<&OperatingPoint> for PointReport {
    fn from(p: &OperatingPoint) -> Self {
        Self {
            confidence: p.confidence,
            precision: p.precision,
            recall: p.recall,
            f1: p.f1,
        }
    }
}

/// Machine-readable evaluation document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsDoc {
    pub classes: Vec<String>,
    pub images: usize,
    pub map50: f64,
    pub map50_95: f64,
    pub precision: f64,
    pub recall: f64,
    pub best: Option<PointReport>,
    pub per_class: Vec<ClassReport>,
    pub operating_points: Vec<PointReport>,
    /// Rows predicted, columns actual; the last index is background.
    pub confusion_matrix: Vec<Vec<usize>>,
}

impl MetricsDoc {
    /// `(metric, class, value)` rows.
    pub fn rows(&self) -> Vec<(String, String, f64)> {
        let mut rows = vec![
            ("map50".into(), "all".into(), self.map50),
            ("map50_95".into(), "all".into(), self.map50_95),
            ("precision".into(), "all".into(), self.precision),
            ("recall".into(), "all".into(), self.recall),
        ];
        if let Some(b) = &self.best {
            rows.push(("f1".into(), "all".into(), b.f1));
            rows.push(("confidence".into(), "all".into(), b.confidence));
        }
        for c in &self.per_class {
            rows.push(("instances".into(), c.name.clone(), c.instances as f64));
            rows.push(("ap50".into(), c.name.clone(), c.ap50));
            rows.push(("ap50_95".into(), c.name.clone(), c.ap50_95));
        }
        rows
    }
}

pub fn write_metric_rows(out: &mut dyn Write, rows: &[(String, String, f64)]) -> Result<()> {
    writeln!(out, "metric,class,value")?;
    for (m, c, v) in rows {
        writeln!(out, "{},{},{}", csv_field(m), csv_field(c), v)?;
    }
    Ok(())
}

/// Resolves detection image names against the manifest: exact path first,
/// then bare file name when that is unambiguous.
struct ImageIndex {
    exact: HashMap<String, usize>,
    by_name: HashMap<String, Option<usize>>,
}

impl ImageIndex {
    fn new(paths: &[PathBuf]) -> Self {
        let mut exact = HashMap::new();
        let mut by_name: HashMap<String, Option<usize>> = HashMap::new();
        for (i, p) in paths.iter().enumerate() {
            exact.insert(p.display().to_string(), i);
            if let Some(name) = p.file_name() {
                by_name
                    .entry(name.to_string_lossy().into_owned())
                    .and_modify(|slot| *slot = None)
                    .or_insert(Some(i));
            }
        }
        Self { exact, by_name }
    }

    fn find(&self, image: &str) -> Option<usize> {
        if let Some(&i) = self.exact.get(image) {
            return Some(i);
        }
        let name = Path::new(image).file_name()?.to_string_lossy().into_owned();
        self.by_name.get(&name).copied().flatten()
    }
}

fn summarize(
    summary: &EvalSummary,
    classes: &ClassMap,
    dets: &[EvalDetection],
    gts: &[GroundTruth],
    images: usize,
    matrix: Vec<Vec<usize>>,
) -> Result<MetricsDoc> {
    let m50 = match_detections(dets, gts, 0.5, classes.len())?;
    Ok(MetricsDoc {
        classes: classes.names().to_vec(),
        images,
        map50: summary.map50,
        map50_95: summary.map50_95,
        precision: summary.precision,
        recall: summary.recall,
        best: summary.best.as_ref().map(PointReport::from),
        per_class: summary
            .per_class
            .iter()
            .map(|c| ClassReport {
                class_id: c.class_id,
                name: classes.name(c.class_id).unwrap_or_default().to_string(),
                instances: c.gt_count,
                detections: c.num_detections,
                ap50: c.ap50,
                ap50_95: c.ap50_95,
                pr_curve: pr_curve(&m50, c.class_id).points,
            })
            .collect(),
        operating_points: summary
            .operating_points
            .iter()
            .map(PointReport::from)
            .collect(),
        confusion_matrix: matrix,
    })
}

fn write_table(out: &mut dyn Write, doc: &MetricsDoc) -> Result<()> {
    writeln!(
        out,
        "{:<28} {:>9} {:>10} {:>8} {:>9}",
        "class", "instances", "detections", "AP50", "AP50-95"
    )?;
    for c in &doc.per_class {
        writeln!(
            out,
            "{:<28} {:>9} {:>10} {:>8.4} {:>9.4}",
            c.name, c.instances, c.detections, c.ap50, c.ap50_95
        )?;
    }
    writeln!(out)?;
    writeln!(out, "mAP50      {:.4}", doc.map50)?;
    writeln!(out, "mAP50-95   {:.4}", doc.map50_95)?;
    match &doc.best {
        Some(b) => writeln!(
            out,
            "precision  {:.4}\nrecall     {:.4}\n(max F1 {:.4} at confidence {:.4})",
            b.precision, b.recall, b.f1, b.confidence
        )?,
        None => writeln!(out, "precision  0.0000\nrecall     0.0000\n(no detections)")?,
    }
    writeln!(
        out,
        "\nconfusion matrix (rows predicted, columns actual, last = background)"
    )?;
    for row in &doc.confusion_matrix {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:>6}")).collect();
        writeln!(out, "{}", cells.join(""))?;
    }
    Ok(())
}

fn write_pr_table(out: &mut dyn Write, doc: &MetricsDoc) -> Result<()> {
    writeln!(out, "confidence,precision,recall,f1")?;
    for p in &doc.operating_points {
        writeln!(
            out,
            "{},{},{},{}",
            p.confidence, p.precision, p.recall, p.f1
        )?;
    }
    Ok(())
}

fn write_confusion(out: &mut dyn Write, doc: &MetricsDoc) -> Result<()> {
    let mut names: Vec<String> = doc.classes.iter().map(|n| csv_field(n)).collect();
    names.push("background".into());
    writeln!(out, "predicted\\actual,{}", names.join(","))?;
    for (name, row) in names.iter().zip(&doc.confusion_matrix) {
        let cells: Vec<String> = row.iter().map(usize::to_string).collect();
        writeln!(out, "{name},{}", cells.join(","))?;
    }
    Ok(())
}

pub fn run(common: &Common, args: &EvalArgs) -> Result<Outcome> {
    if !(args.match_iou > 0.0 && args.match_iou <= 1.0) {
        bail!("--match-iou {} outside (0, 1]", args.match_iou);
    }
    let classes = class_map(common.classes.as_deref())?;
    let nc = classes.len();
    let entries = read_manifest(&args.manifest)?;
    let paths: Vec<PathBuf> = entries.iter().map(|e| e.image.clone()).collect();
    let index = ImageIndex::new(&paths);

    let mut gts = Vec::new();
    for (i, e) in entries.iter().enumerate() {
        let (w, h) = image_size(&e.image)?;
        let labels = parse_label_file(&read_text(&e.label)?, nc)
            .with_context(|| format!("parsing {}", e.label.display()))?;
        gts.extend(labels.iter().map(|a| GroundTruth {
            image: i,
            class_id: a.class_id,
            bbox: norm_to_pixel(a, w as f64, h as f64),
        }));
    }

    let lines = read_detections(&args.detections)?;
    let mut missing: Vec<&str> = Vec::new();
    let mut dets = Vec::with_capacity(lines.len());
    for d in &lines {
        let Some(image) = index.find(&d.image) else {
            if !missing.contains(&d.image.as_str()) {
                missing.push(&d.image);
            }
            continue;
        };
        if d.class_id >= nc {
            bail!(
                "detection class {} out of range for {nc} classes",
                d.class_id
            );
        }
        let [x1, y1, x2, y2] = d.bbox.map(f64::from);
        dets.push(EvalDetection {
            image,
            class_id: d.class_id,
            score: f64::from(d.score),
            bbox: BBox64::new(x1, y1, x2, y2),
        });
    }
    if !missing.is_empty() {
        bail!(
            "detections name images missing from the manifest: {}",
            missing.join(", ")
        );
    }

    let summary = evaluate(&dets, &gts, nc)?;
    let matrix = confusion_matrix(&dets, &gts, nc, args.match_iou, common.conf)?;
    let doc = summarize(&summary, &classes, &dets, &gts, entries.len(), matrix)?;

    let mut out = output(common.out.as_deref())?;
    match common.format {
        Format::Table => write_table(&mut out, &doc)?,
        Format::Csv => write_metric_rows(&mut out, &doc.rows())?,
        Format::Json => {
            serde_json::to_writer_pretty(&mut out, &doc)?;
            writeln!(out)?;
        }
    }
    out.flush()?;

    if let Some(dir) = &args.save_dir {
        let dir = ensure_dir(dir)?;
        let mut buf = Vec::new();
        write_metric_rows(&mut buf, &doc.rows())?;
        fs::write(dir.join("metrics.csv"), &buf)?;
        fs::write(dir.join("metrics.json"), serde_json::to_vec_pretty(&doc)?)?;
        let mut buf = Vec::new();
        write_pr_table(&mut buf, &doc)?;
        fs::write(dir.join("pr_table.csv"), &buf)?;
        let mut buf = Vec::new();
        write_confusion(&mut buf, &doc)?;
        fs::write(dir.join("confusion.csv"), &buf)?;
    }
    Ok(Outcome::Success)
}
