use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use fallwatch_core::model::{build_yolov5mu, init_weights, load_weights, save_weights};
use fallwatch_core::Detector;
use log::{info, warn};

use crate::files::{class_map, load_image, output, read_manifest, DetectionLine};
use crate::{Common, Internal, Outcome};

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// Image files (PPM, PNG or JPEG).
    pub images: Vec<PathBuf>,
    /// Also run on every image of this manifest, after the positional ones.
    #[arg(long, value_name = "FILE")]
    pub manifest: Option<PathBuf>,
    /// Weight file; without it weights are initialized from --seed.
    #[arg(long, value_name = "FILE")]
    pub weights: Option<PathBuf>,
    /// Class count for seeded weights; defaults to the size of --classes, else 4.
    #[arg(long)]
    pub num_classes: Option<usize>,
    /// Save the weights in use (useful with seeded initialization).
    #[arg(long, value_name = "FILE")]
    pub export_weights: Option<PathBuf>,
}

pub fn run(common: &Common, args: &DetectArgs) -> Result<Outcome> {
    if !common.img.is_multiple_of(32) {
        bail!("--img {} must be a multiple of 32", common.img);
    }
    let mut images = args.images.clone();
    if let Some(m) = &args.manifest {
        images.extend(read_manifest(m)?.into_iter().map(|e| e.image));
    }
    if images.is_empty() {
        bail!("no images given");
    }
    let classes = common
        .classes
        .as_deref()
        .map(|p| class_map(Some(p)))
        .transpose()?;

    let store = match &args.weights {
        Some(path) => load_weights(path).with_context(|| format!("loading {}", path.display()))?,
        None => {
            let nc = args
                .num_classes
                .or(classes.as_ref().map(|c| c.len()))
                .unwrap_or(4);
            warn!(
                "no --weights given; using seeded random weights (seed {})",
                common.seed
            );
            init_weights(&build_yolov5mu(nc)?, common.seed)
        }
    };
    if let Some(c) = &classes {
        if c.len() != store.num_classes {
            bail!(
                "class file lists {} classes but the weights have {}",
                c.len(),
                store.num_classes
            );
        }
    }
    let graph = build_yolov5mu(store.num_classes)?;
    store
        .validate(&graph)
        .context("weights do not fit the network")?;
    if let Some(path) = &args.export_weights {
        save_weights(&store, path).with_context(|| format!("writing {}", path.display()))?;
    }
    let mut detector = Detector::new(&graph, &store, common.img)?;
    detector.conf_threshold = common.conf;
    detector.iou_threshold = common.iou;

    let mut out = output(common.out.as_deref())?;
    for path in &images {
        let img = load_image(path)?;
        let dets = detector.detect(&img)?;
        info!("{}: {} detections", path.display(), dets.len());
        let (w, h) = (img.width() as f32, img.height() as f32);
        for d in dets {
            let b = d.bbox;
            let in_bounds = 0.0 <= b.x1
                && b.x1 <= b.x2
                && b.x2 <= w
                && 0.0 <= b.y1
                && b.y1 <= b.y2
                && b.y2 <= h;
            if !in_bounds || !(0.0..=1.0).contains(&d.score) {
                return Err(
                    Internal(format!("detection {d:?} escapes the image or score range")).into(),
                );
            }
            let line = DetectionLine {
                image: path.display().to_string(),
                class_id: d.class_id,
                score: d.score,
                bbox: b.to_array(),
            };
            serde_json::to_writer(&mut out, &line)?;
            writeln!(out)?;
        }
    }
    out.flush()?;
    Ok(Outcome::Success)
}
