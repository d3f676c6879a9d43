//! Reading and writing the files the subcommands exchange.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fallwatch_core::augment::ImageBuffer;
use fallwatch_core::dataset::{parse_manifest, ClassMap, ManifestEntry};
use serde::{Deserialize, Serialize};

/// One line of a detections file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionLine {
    pub image: String,
    pub class_id: usize,
    pub score: f32,
    #[serde(rename = "box")]
    pub bbox: [f32; 4],
}

fn is_ppm(path: &Path) -> Result<bool> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    if matches!(ext.as_deref(), Some("ppm" | "pnm")) {
        return Ok(true);
    }
    let mut magic = [0u8; 2];
    let mut f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(std::io::Read::read(&mut f, &mut magic)? == 2 && &magic == b"P6")
}

/// Loads PPM natively and PNG / JPEG through the `image` crate, as RGB.
pub fn load_image(path: &Path) -> Result<ImageBuffer> {
    if is_ppm(path)? {
        let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        return ImageBuffer::read_ppm(BufReader::new(f))
            .with_context(|| format!("reading {}", path.display()));
    }
    let rgb = image::open(path)
        .with_context(|| format!("decoding {}", path.display()))?
        .to_rgb8();
    let (w, h) = rgb.dimensions();
    Ok(ImageBuffer::new(w as usize, h as usize, rgb.into_raw())?)
}

/// `(width, height)` without decoding pixel data where the codec allows it.
pub fn image_size(path: &Path) -> Result<(usize, usize)> {
    if is_ppm(path)? {
        let img = load_image(path)?;
        return Ok((img.width(), img.height()));
    }
    let (w, h) =
        image::image_dimensions(path).with_context(|| format!("reading {}", path.display()))?;
    Ok((w as usize, h as usize))
}

pub fn save_ppm(img: &ImageBuffer, path: &Path) -> Result<()> {
    let mut w =
        BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    img.write_ppm(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

/// Class map from `--classes`, or the default four classes.
pub fn class_map(path: Option<&Path>) -> Result<ClassMap> {
    match path {
        Some(p) => {
            Ok(ClassMap::parse(&read_text(p)?)
                .with_context(|| format!("parsing {}", p.display()))?)
        }
        None => Ok(ClassMap::default()),
    }
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let base = path.parent().unwrap_or(Path::new(""));
    parse_manifest(&read_text(path)?, base).with_context(|| format!("parsing {}", path.display()))
}

pub fn read_detections(path: &Path) -> Result<Vec<DetectionLine>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let d: DetectionLine = serde_json::from_str(&line)
            .with_context(|| format!("{}:{}: malformed detection", path.display(), i + 1))?;
        if !(0.0..=1.0).contains(&d.score) {
            bail!(
                "{}:{}: score {} outside [0, 1]",
                path.display(),
                i + 1,
                d.score
            );
        }
        out.push(d);
    }
    Ok(out)
}

/// Writer for `--out`, or stdout when it is absent.
pub fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

pub fn ensure_dir(path: &Path) -> Result<PathBuf> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(path.to_path_buf())
}

/// Quotes a CSV field when it needs it.
pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Splits one CSV line, honouring double quotes.
pub fn split_csv(line: &str) -> Vec<String> {
    let mut fields = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        match (c, quoted) {
            ('"', true) if chars.peek() == Some(&'"') => {
                cur.push('"');
                chars.next();
            }
            ('"', _) => quoted = !quoted,
            (',', false) => fields.push(std::mem::take(&mut cur)),
            _ => cur.push(c),
        }
    }
    fields.push(cur);
    fields
}
