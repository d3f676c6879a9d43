//! YOLO text annotations, class maps, manifests and dataset splits.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::head::BBox;

/// Overflow past `[0, 1]` that is clamped instead of rejected.
pub const CLAMP_TOLERANCE: f64 = 1e-3;

pub const DEFAULT_CLASSES: [&str; 4] = [
    "Laptop",
    "Occupant State - Abnormal",
    "Occupant State - Sitting",
    "Occupant State - Walking",
];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DatasetError {
    #[error("line {line}: expected 5 fields, found {found}")]
    FieldCount { line: usize, found: usize },
    #[error("line {line}: {token:?} is not a number")]
    NotNumeric { line: usize, token: String },
    #[error("line {line}: class id {class} out of range for {num_classes} classes")]
    ClassOutOfRange {
        line: usize,
        class: i64,
        num_classes: usize,
    },
    #[error("line {line}: {field} = {value} outside [0, 1]")]
    ValueOutOfRange {
        line: usize,
        field: &'static str,
        value: f64,
    },
    #[error("duplicate class name {0:?}")]
    DuplicateClass(String),
    #[error("class file is empty")]
    NoClasses,
    #[error("manifest line {line}: expected `image<TAB>label`")]
    ManifestLine { line: usize },
    #[error("cannot split an empty dataset")]
    EmptySplit,
    #[error("split ratio {0} must lie strictly between 0 and 1")]
    BadRatio(f64),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMap {
    names: Vec<String>,
}

impl Default for ClassMap {
    fn default() -> Self {
        Self {
            names: DEFAULT_CLASSES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl ClassMap {
    pub fn new(names: Vec<String>) -> Result<Self, DatasetError> {
        if names.is_empty() {
            return Err(DatasetError::NoClasses);
        }
        let mut seen = HashSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(DatasetError::DuplicateClass(n.clone()));
            }
        }
        Ok(Self { names })
    }

    /// One name per non-empty line; index is the line's position.
    pub fn parse(text: &str) -> Result<Self, DatasetError> {
        Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// One YOLO annotation, normalized to the image size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Annotation {
    pub class_id: usize,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl Annotation {
    pub fn as_array(&self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedImage {
    pub image: PathBuf,
    pub boxes: Vec<Annotation>,
}

fn check_unit(line: usize, field: &'static str, value: f64) -> Result<f64, DatasetError> {
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else if (-CLAMP_TOLERANCE..=1.0 + CLAMP_TOLERANCE).contains(&value) {
        warn!("line {line}: clamping {field} = {value} into [0, 1]");
        Ok(value.clamp(0.0, 1.0))
    } else {
        Err(DatasetError::ValueOutOfRange { line, field, value })
    }
}

/// Parses YOLO label text: `class cx cy w h` per line, blank lines ignored.
pub fn parse_label_file(text: &str, num_classes: usize) -> Result<Vec<Annotation>, DatasetError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let tokens: Vec<&str> = raw.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        if tokens.len() != 5 {
            return Err(DatasetError::FieldCount {
                line,
                found: tokens.len(),
            });
        }
        let class: i64 = tokens[0].parse().map_err(|_| DatasetError::NotNumeric {
            line,
            token: tokens[0].to_string(),
        })?;
        if class < 0 || class as usize >= num_classes {
            return Err(DatasetError::ClassOutOfRange {
                line,
                class,
                num_classes,
            });
        }
        let mut v = [0.0; 4];
        for (slot, tok) in v.iter_mut().zip(&tokens[1..]) {
            *slot = tok
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| DatasetError::NotNumeric {
                    line,
                    token: tok.to_string(),
                })?;
        }
        let [cx, cy, w, h] = v;
        let (cx, cy) = (check_unit(line, "cx", cx)?, check_unit(line, "cy", cy)?);
        let (w, h) = (check_unit(line, "w", w)?, check_unit(line, "h", h)?);
        // Extents must also stay inside the frame, with the same tolerance.
        let mut corners = [cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0];
        let names = ["x1", "y1", "x2", "y2"];
        let mut clamped = false;
        for (c, name) in corners.iter_mut().zip(names) {
            let fixed = check_unit(line, name, *c)?;
            clamped |= fixed != *c;
            *c = fixed;
        }
        let ann = if clamped {
            Annotation {
                class_id: class as usize,
                cx: (corners[0] + corners[2]) / 2.0,
                cy: (corners[1] + corners[3]) / 2.0,
                w: corners[2] - corners[0],
                h: corners[3] - corners[1],
            }
        } else {
            Annotation {
                class_id: class as usize,
                cx,
                cy,
                w,
                h,
            }
        };
        out.push(ann);
    }
    Ok(out)
}

/// One line per annotation with six decimals.
pub fn write_label_file(annotations: &[Annotation]) -> String {
    let mut s = String::new();
    for a in annotations {
        writeln!(
            s,
            "{} {:.6} {:.6} {:.6} {:.6}",
            a.class_id, a.cx, a.cy, a.w, a.h
        )
        .expect("writing to a String cannot fail");
    }
    s
}

pub fn norm_to_pixel(a: &Annotation, img_w: f64, img_h: f64) -> BBox<f64> {
    BBox::new(
        (a.cx - a.w / 2.0) * img_w,
        (a.cy - a.h / 2.0) * img_h,
        (a.cx + a.w / 2.0) * img_w,
        (a.cy + a.h / 2.0) * img_h,
    )
}

pub fn pixel_to_norm(b: &BBox<f64>, class_id: usize, img_w: f64, img_h: f64) -> Annotation {
    Annotation {
        class_id,
        cx: (b.x1 + b.x2) / 2.0 / img_w,
        cy: (b.y1 + b.y2) / 2.0 / img_h,
        w: (b.x2 - b.x1) / img_w,
        h: (b.y2 - b.y1) / img_h,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub label: PathBuf,
}

/// Parses `image<TAB>label` lines. Relative paths resolve against `base`.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestEntry>, DatasetError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let mut parts = raw.split('\t');
        let (Some(image), Some(label), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(DatasetError::ManifestLine { line: idx + 1 });
        };
        let (image, label) = (image.trim(), label.trim());
        if image.is_empty() || label.is_empty() {
            return Err(DatasetError::ManifestLine { line: idx + 1 });
        }
        out.push(ManifestEntry {
            image: base.join(image),
            label: base.join(label),
        });
    }
    Ok(out)
}

pub fn write_manifest(entries: &[ManifestEntry]) -> String {
    entries
        .iter()
        .map(|e| format!("{}\t{}\n", e.image.display(), e.label.display()))
        .collect()
}

/// Seeded shuffle, then the first `round(ratio * n)` items go to train.
pub fn split_dataset<T: Clone>(
    items: &[T],
    ratio: f64,
    seed: u64,
) -> Result<(Vec<T>, Vec<T>), DatasetError> {
    if items.is_empty() {
        return Err(DatasetError::EmptySplit);
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(DatasetError::BadRatio(ratio));
    }
    let mut shuffled = items.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (ratio * items.len() as f64).round() as usize;
    let val = shuffled.split_off(n_train);
    Ok((shuffled, val))
}
