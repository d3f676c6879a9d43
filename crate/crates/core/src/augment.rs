//! Label-preserving photometric augmentation: resize, random grayscale and
//! hue / saturation / brightness jitter in HSV space.

use std::io::{self, BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("malformed PPM: {0}")]
    Ppm(String),
    #[error("image dimensions must be positive, got {0}x{1}")]
    EmptyImage(usize, usize),
    #[error("pixel buffer has {got} bytes, expected {expected}")]
    BufferSize { got: usize, expected: usize },
    #[error("normalized box value {0} outside [0, 1]")]
    BoxOutOfRange(f64),
    #[error("invalid augmentation config: {0}")]
    Config(String),
}

/// 8-bit RGB raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, AugmentError> {
        if width == 0 || height == 0 {
            return Err(AugmentError::EmptyImage(width, height));
        }
        if pixels.len() != width * height * 3 {
            return Err(AugmentError::BufferSize {
                got: pixels.len(),
                expected: width * height * 3,
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self, AugmentError> {
        let pixels = rgb
            .iter()
            .copied()
            .cycle()
            .take(width * height * 3)
            .collect();
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    fn map_pixels(&self, f: impl Fn([u8; 3]) -> [u8; 3]) -> Self {
        let pixels = self
            .pixels
            .chunks_exact(3)
            .flat_map(|p| f([p[0], p[1], p[2]]))
            .collect();
        Self {
            width: self.width,
            height: self.height,
            pixels,
        }
    }

    /// Reads a binary PPM (P6, maxval 255).
    pub fn read_ppm(mut reader: impl BufRead) -> Result<Self, AugmentError> {
        let mut header = Vec::new();
        // Magic, width, height, maxval, each possibly preceded by comments.
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            let mut byte = [0u8; 1];
            if reader.read(&mut byte)? == 0 {
                return Err(AugmentError::Ppm("unexpected end of header".into()));
            }
            let c = byte[0];
            if c == b'#' && header.is_empty() {
                let mut skip = Vec::new();
                reader.read_until(b'\n', &mut skip)?;
            } else if c.is_ascii_whitespace() {
                if !header.is_empty() {
                    fields.push(String::from_utf8_lossy(&header).into_owned());
                    header.clear();
                }
            } else {
                header.push(c);
            }
        }
        if fields[0] != "P6" {
            return Err(AugmentError::Ppm(format!(
                "unsupported magic {:?}",
                fields[0]
            )));
        }
        let parse = |s: &str, what: &str| {
            s.parse::<usize>()
                .map_err(|_| AugmentError::Ppm(format!("bad {what} {s:?}")))
        };
        let width = parse(&fields[1], "width")?;
        let height = parse(&fields[2], "height")?;
        let maxval = parse(&fields[3], "maxval")?;
        if maxval != 255 {
            return Err(AugmentError::Ppm(format!("maxval {maxval} unsupported")));
        }
        let mut pixels = vec![0u8; width * height * 3];
        reader
            .read_exact(&mut pixels)
            .map_err(|_| AugmentError::Ppm("truncated pixel data".into()))?;
        Self::new(width, height, pixels)
    }

    pub fn write_ppm(&self, mut writer: impl Write) -> io::Result<()> {
        write!(writer, "P6\n{} {}\n255\n", self.width, self.height)?;
        writer.write_all(&self.pixels)
    }

    pub fn to_ppm_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.pixels.len() + 20);
        self.write_ppm(&mut out)
            .expect("writing to a Vec cannot fail");
        out
    }
}

fn round_to_u8(v: f64) -> u8 {
    v.round_ties_even().clamp(0.0, 255.0) as u8
}

/// Bilinear resize with half-pixel centers; results round half to even.
pub fn resize_bilinear(
    img: &ImageBuffer,
    out_w: usize,
    out_h: usize,
) -> Result<ImageBuffer, AugmentError> {
    if out_w == 0 || out_h == 0 {
        return Err(AugmentError::EmptyImage(out_w, out_h));
    }
    if (out_w, out_h) == (img.width, img.height) {
        return Ok(img.clone());
    }
    let axis = |dst: usize, src: usize| -> Vec<(usize, usize, f64)> {
        let scale = src as f64 / dst as f64;
        (0..dst)
            .map(|d| {
                let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(src - 1);
                (i0, i1, s - i0 as f64)
            })
            .collect()
    };
    let xs = axis(out_w, img.width);
    let ys = axis(out_h, img.height);
    let mut pixels = Vec::with_capacity(out_w * out_h * 3);
    let at = |x: usize, y: usize, c: usize| img.pixels[(y * img.width + x) * 3 + c] as f64;
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for c in 0..3 {
                let top = at(x0, y0, c) * (1.0 - fx) + at(x1, y0, c) * fx;
                let bottom = at(x0, y1, c) * (1.0 - fx) + at(x1, y1, c) * fx;
                pixels.push(round_to_u8(top * (1.0 - fy) + bottom * fy));
            }
        }
    }
    ImageBuffer::new(out_w, out_h, pixels)
}

/// Placement of a letterboxed image inside the square canvas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Letterbox {
    pub scale: f64,
    pub pad_x: usize,
    pub pad_y: usize,
    pub inner_w: usize,
    pub inner_h: usize,
    pub size: usize,
}

impl Letterbox {
    /// Maps a normalized `(cx, cy, w, h)` box of the source image onto the canvas.
    pub fn map_box(&self, [cx, cy, w, h]: [f64; 4]) -> [f64; 4] {
        let s = self.size as f64;
        [
            (cx * self.inner_w as f64 + self.pad_x as f64) / s,
            (cy * self.inner_h as f64 + self.pad_y as f64) / s,
            w * self.inner_w as f64 / s,
            h * self.inner_h as f64 / s,
        ]
    }
}

pub const LETTERBOX_FILL: [u8; 3] = [114, 114, 114];

/// Aspect-preserving resize onto a `size x size` gray canvas.
pub fn resize_letterbox(
    img: &ImageBuffer,
    size: usize,
) -> Result<(ImageBuffer, Letterbox), AugmentError> {
    let scale = (size as f64 / img.width as f64).min(size as f64 / img.height as f64);
    let inner_w = ((img.width as f64 * scale).round() as usize).clamp(1, size);
    let inner_h = ((img.height as f64 * scale).round() as usize).clamp(1, size);
    let inner = resize_bilinear(img, inner_w, inner_h)?;
    let pad_x = (size - inner_w) / 2;
    let pad_y = (size - inner_h) / 2;
    let mut canvas = ImageBuffer::filled(size, size, LETTERBOX_FILL)?;
    for y in 0..inner_h {
        let src = &inner.pixels[y * inner_w * 3..(y + 1) * inner_w * 3];
        let start = ((y + pad_y) * size + pad_x) * 3;
        canvas.pixels[start..start + inner_w * 3].copy_from_slice(src);
    }
    Ok((
        canvas,
        Letterbox {
            scale,
            pad_x,
            pad_y,
            inner_w,
            inner_h,
            size,
        },
    ))
}

/// Hexcone HSV: hue in degrees `[0, 360)`, saturation and value in `[0, 1]`.
pub fn rgb_to_hsv([r, g, b]: [u8; 3]) -> (f64, f64, f64) {
    let (r, g, b) = (r as f64 / 255.0, g as f64 / 255.0, b as f64 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    if delta == 0.0 {
        return (0.0, s, v);
    }
    let h = if max == r {
        60.0 * ((g - b) / delta)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    (h.rem_euclid(360.0), s, v)
}

pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let h = h.rem_euclid(360.0);
    let s = s.clamp(0.0, 1.0);
    let v = v.clamp(0.0, 1.0);
    let sector = (h / 60.0).floor();
    let f = h / 60.0 - sector;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    let (r, g, b) = match sector as u32 % 6 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [r, g, b].map(|c| round_to_u8(c * 255.0))
}

/// Rotates hue by `offset_fraction` of the full wheel.
pub fn adjust_hue(img: &ImageBuffer, offset_fraction: f64) -> ImageBuffer {
    let offset = offset_fraction * 360.0;
    img.map_pixels(|p| {
        let (h, s, v) = rgb_to_hsv(p);
        if s == 0.0 {
            return p;
        }
        hsv_to_rgb(h + offset, s, v)
    })
}

/// Multiplies saturation, clamped to `[0, 1]`.
pub fn adjust_saturation(img: &ImageBuffer, scale: f64) -> ImageBuffer {
    img.map_pixels(|p| {
        let (h, s, v) = rgb_to_hsv(p);
        hsv_to_rgb(h, (s * scale).clamp(0.0, 1.0), v)
    })
}

/// Multiplies value (brightness), clamped to `[0, 1]`.
pub fn adjust_brightness(img: &ImageBuffer, scale: f64) -> ImageBuffer {
    img.map_pixels(|p| {
        let (h, s, v) = rgb_to_hsv(p);
        hsv_to_rgb(h, s, (v * scale).clamp(0.0, 1.0))
    })
}

/// Rec.601 luma replicated into all three channels.
pub fn to_grayscale(img: &ImageBuffer) -> ImageBuffer {
    img.map_pixels(|[r, g, b]| {
        let l = round_to_u8(0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64);
        [l, l, l]
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ResizeMode {
    #[default]
    Stretch,
    Letterbox,
}

/// How jitter parameters are drawn inside their limits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum JitterSampling {
    /// Uniform over `[-limit, +limit]`.
    #[default]
    Continuous,
    /// Either `-limit` or `+limit`, equally likely.
    Endpoints,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub target_size: usize,
    pub gray_probability: f64,
    /// Fraction of the full hue wheel.
    pub hue_limit: f64,
    pub sat_limit: f64,
    pub bright_limit: f64,
    pub master_seed: u64,
    pub resize_mode: ResizeMode,
    pub sampling: JitterSampling,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            target_size: 640,
            gray_probability: 0.15,
            hue_limit: 0.10,
            sat_limit: 0.25,
            bright_limit: 0.05,
            master_seed: 0,
            resize_mode: ResizeMode::Stretch,
            sampling: JitterSampling::Continuous,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<(), AugmentError> {
        if self.target_size == 0 {
            return Err(AugmentError::Config("target size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.gray_probability) {
            return Err(AugmentError::Config(format!(
                "gray probability {} outside [0, 1]",
                self.gray_probability
            )));
        }
        for (name, v) in [
            ("hue", self.hue_limit),
            ("saturation", self.sat_limit),
            ("brightness", self.bright_limit),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(AugmentError::Config(format!(
                    "{name} limit {v} must be >= 0"
                )));
            }
        }
        Ok(())
    }
}

/// Parameters drawn for one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentRecord {
    pub sample_index: u64,
    pub grayscale: bool,
    pub hue_offset: f64,
    pub saturation_scale: f64,
    pub brightness_scale: f64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator for one sample, independent of every other sample.
pub fn sample_rng(master_seed: u64, sample_index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(master_seed ^ splitmix64(sample_index)))
}

impl AugmentRecord {
    /// Draws the four parameters in a fixed order.
    pub fn draw(config: &AugmentConfig, sample_index: u64) -> Self {
        let mut rng = sample_rng(config.master_seed, sample_index);
        let grayscale = rng.gen::<f64>() < config.gray_probability;
        let mut jitter = |limit: f64| -> f64 {
            let u: f64 = rng.gen();
            match config.sampling {
                JitterSampling::Continuous => limit * (2.0 * u - 1.0),
                JitterSampling::Endpoints => {
                    if u < 0.5 {
                        -limit
                    } else {
                        limit
                    }
                }
            }
        };
        let hue_offset = jitter(config.hue_limit);
        let saturation_scale = 1.0 + jitter(config.sat_limit);
        let brightness_scale = 1.0 + jitter(config.bright_limit);
        Self {
            sample_index,
            grayscale,
            hue_offset,
            saturation_scale,
            brightness_scale,
        }
    }
}

/// Normalized `(cx, cy, w, h)` box.
pub type NormBox = [f64; 4];

/// Resize, then grayscale / hue / saturation / brightness as drawn for
/// `sample_index`. Identity parameters skip their op entirely.
pub fn augment_sample(
    img: &ImageBuffer,
    boxes: &[NormBox],
    config: &AugmentConfig,
    sample_index: u64,
) -> Result<(ImageBuffer, Vec<NormBox>, AugmentRecord), AugmentError> {
    config.validate()?;
    if let Some(&bad) = boxes.iter().flatten().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(AugmentError::BoxOutOfRange(bad));
    }
    let record = AugmentRecord::draw(config, sample_index);
    let (mut out, boxes) = match config.resize_mode {
        ResizeMode::Stretch => (
            resize_bilinear(img, config.target_size, config.target_size)?,
            boxes.to_vec(),
        ),
        ResizeMode::Letterbox => {
            let (canvas, lb) = resize_letterbox(img, config.target_size)?;
            (canvas, boxes.iter().map(|b| lb.map_box(*b)).collect())
        }
    };
    if record.grayscale {
        out = to_grayscale(&out);
    }
    if record.hue_offset != 0.0 {
        out = adjust_hue(&out, record.hue_offset);
    }
    if record.saturation_scale != 1.0 {
        out = adjust_saturation(&out, record.saturation_scale);
    }
    if record.brightness_scale != 1.0 {
        out = adjust_brightness(&out, record.brightness_scale);
    }
    Ok((out, boxes, record))
}
