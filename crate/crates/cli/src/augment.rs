use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use fallwatch_core::augment::{augment_sample, AugmentConfig, JitterSampling, ResizeMode};
use fallwatch_core::dataset::{
    parse_label_file, write_label_file, write_manifest, Annotation, ManifestEntry,
};
use log::error;
use serde::Serialize;

use crate::files::{class_map, ensure_dir, load_image, read_manifest, read_text, save_ppm};
use crate::{Common, Outcome};

#[derive(Debug, Args)]
pub struct AugmentArgs {
    /// Tab-separated `image<TAB>label` list.
    #[arg(long, value_name = "FILE")]
    pub manifest: PathBuf,
    /// Probability of converting a sample to grayscale.
    #[arg(long, default_value_t = 0.15)]
    pub gray_prob: f64,
    /// Hue jitter limit as a fraction of the full wheel.
    #[arg(long, default_value_t = 0.10)]
    pub hue: f64,
    /// Saturation jitter limit (multiplicative, 1 +- limit).
    #[arg(long, default_value_t = 0.25)]
    pub sat: f64,
    /// Brightness jitter limit (multiplicative, 1 +- limit).
    #[arg(long, default_value_t = 0.05)]
    pub bright: f64,
    /// Aspect-preserving resize with gray padding instead of a stretch.
    #[arg(long)]
    pub letterbox: bool,
    /// Apply only the +-limit endpoints instead of sampling uniformly.
    #[arg(long)]
    pub endpoints: bool,
}

#[derive(Debug, Serialize)]
struct Provenance<'a> {
    index: usize,
    source: &'a str,
    image: String,
    label: String,
    grayscale: bool,
    hue_offset: f64,
    saturation_scale: f64,
    brightness_scale: f64,
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into())
}

pub fn run(common: &Common, args: &AugmentArgs) -> Result<Outcome> {
    let out_dir = common.out.as_deref().context("augment needs --out <DIR>")?;
    let config = AugmentConfig {
        target_size: common.img,
        gray_probability: args.gray_prob,
        hue_limit: args.hue,
        sat_limit: args.sat,
        bright_limit: args.bright,
        master_seed: common.seed,
        resize_mode: if args.letterbox {
            ResizeMode::Letterbox
        } else {
            ResizeMode::Stretch
        },
        sampling: if args.endpoints {
            JitterSampling::Endpoints
        } else {
            JitterSampling::Continuous
        },
    };
    config.validate()?;
    let classes = class_map(common.classes.as_deref())?;
    let entries = read_manifest(&args.manifest)?;
    let images_dir = ensure_dir(&out_dir.join("images"))?;
    let labels_dir = ensure_dir(&out_dir.join("labels"))?;

    let mut log = fs::File::create(out_dir.join("provenance.jsonl"))?;
    let mut written = Vec::new();
    let mut failures = 0usize;
    for (index, entry) in entries.iter().enumerate() {
        let result = (|| -> Result<(PathBuf, PathBuf, Provenance<'_>)> {
            let img = load_image(&entry.image)?;
            let labels = parse_label_file(&read_text(&entry.label)?, classes.len())
                .with_context(|| format!("parsing {}", entry.label.display()))?;
            let boxes: Vec<[f64; 4]> = labels.iter().map(Annotation::as_array).collect();
            let (out, boxes, record) = augment_sample(&img, &boxes, &config, index as u64)?;
            let name = format!("{index:05}_{}", stem(&entry.image));
            let image_rel = PathBuf::from("images").join(format!("{name}.ppm"));
            let label_rel = PathBuf::from("labels").join(format!("{name}.txt"));
            save_ppm(&out, &images_dir.join(format!("{name}.ppm")))?;
            let annotations: Vec<Annotation> = labels
                .iter()
                .zip(&boxes)
                .map(|(a, &[cx, cy, w, h])| Annotation {
                    class_id: a.class_id,
                    cx,
                    cy,
                    w,
                    h,
                })
                .collect();
            fs::write(
                labels_dir.join(format!("{name}.txt")),
                write_label_file(&annotations),
            )?;
            let provenance = Provenance {
                index,
                source: entry.image.to_str().unwrap_or_default(),
                image: image_rel.display().to_string(),
                label: label_rel.display().to_string(),
                grayscale: record.grayscale,
                hue_offset: record.hue_offset,
                saturation_scale: record.saturation_scale,
                brightness_scale: record.brightness_scale,
            };
            Ok((image_rel, label_rel, provenance))
        })();
        match result {
            Ok((image, label, provenance)) => {
                serde_json::to_writer(&mut log, &provenance)?;
                writeln!(log)?;
                written.push(ManifestEntry { image, label });
            }
            Err(e) => {
                error!("sample {index} ({}): {e:#}", entry.image.display());
                eprintln!("skipped {}: {e:#}", entry.image.display());
                failures += 1;
            }
        }
    }
    fs::write(out_dir.join("manifest.tsv"), write_manifest(&written))?;
    println!(
        "augmented {} of {} samples into {}",
        written.len(),
        entries.len(),
        out_dir.display()
    );
    Ok(if failures == 0 {
        Outcome::Success
    } else {
        Outcome::Partial
    })
}
