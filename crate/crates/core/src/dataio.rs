//! Dataset construction and file formats.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma, Rgb};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{normalize_sum, DensityMap, FixationMap};
use crate::micronet::{bilinear_resize, FeatureStack};

/// Blur sigma in pixels at 640x480, roughly one degree of visual angle.
pub const DEFAULT_SIGMA_640: f64 = 19.0;

/// Default blur sigma scaled to an image width.
pub fn default_sigma(width: usize) -> f64 {
    (DEFAULT_SIGMA_640 * width as f64 / 640.0).max(1.0)
}

/// One training/evaluation example.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    /// RGB in `[0, 1]`.
    pub image: FeatureStack,
    pub density: DensityMap,
    pub fixations: FixationMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixationRecord {
    pub image_id: String,
    pub fixations: Vec<(usize, usize)>,
    pub width: usize,
    pub height: usize,
}

impl FixationRecord {
    fn check_bounds(&self) -> Result<()> {
        for &(x, y) in &self.fixations {
            if x >= self.width || y >= self.height {
                return Err(Error::OutOfBounds {
                    x,
                    y,
                    width: self.width,
                    height: self.height,
                });
            }
        }
        Ok(())
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma).ceil() as isize;
    (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect()
}

/// Separable blur with a truncated Gaussian and zero boundary.
pub fn gaussian_blur(map: &[f64], width: usize, height: usize, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let mut tmp = vec![0.0; map.len()];
    for y in 0..height {
        let row = &map[y * width..(y + 1) * width];
        for (x, v) in row.iter().enumerate() {
            if *v == 0.0 {
                continue;
            }
            let lo = (x as isize - r).max(0);
            let hi = (x as isize + r).min(width as isize - 1);
            for xx in lo..=hi {
                tmp[y * width + xx as usize] += v * k[(xx - x as isize + r) as usize];
            }
        }
    }
    let mut out = vec![0.0; map.len()];
    for y in 0..height {
        let lo = (y as isize - r).max(0);
        let hi = (y as isize + r).min(height as isize - 1);
        for yy in lo..=hi {
            let w = k[(yy - y as isize + r) as usize];
            let src = &tmp[y * width..(y + 1) * width];
            let dst = &mut out[yy as usize * width..(yy as usize + 1) * width];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += w * s;
            }
        }
    }
    out
}

/// Unit impulses at each fixation blurred by an isotropic Gaussian
/// (truncated at 4 sigma), then sum-normalized.
pub fn fixations_to_density(rec: &FixationRecord, sigma: f64) -> Result<DensityMap> {
    if rec.fixations.is_empty() {
        return Err(Error::EmptyFixations);
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidConfig("blur sigma must be positive".into()));
    }
    rec.check_bounds()?;
    let mut impulses = vec![0.0; rec.width * rec.height];
    for &(x, y) in &rec.fixations {
        impulses[y * rec.width + x] += 1.0;
    }
    let blurred = gaussian_blur(&impulses, rec.width, rec.height, sigma);
    normalize_sum(&DensityMap::new(rec.width, rec.height, blurred)?)
}

/// Binary map; repeated fixations collapse to one pixel.
pub fn fixations_to_binary(rec: &FixationRecord) -> Result<FixationMap> {
    FixationMap::from_points(rec.width, rec.height, &rec.fixations)
}

/// Padding added by [`pad_to_ratio`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PadGeometry {
    pub left: usize,
    pub right: usize,
    pub top: usize,
    pub bottom: usize,
    pub width: usize,
    pub height: usize,
}

impl PadGeometry {
    pub fn padded_width(&self) -> usize {
        self.width + self.left + self.right
    }

    pub fn padded_height(&self) -> usize {
        self.height + self.top + self.bottom
    }

    pub fn is_identity(&self) -> bool {
        self.left + self.right + self.top + self.bottom == 0
    }
}

/// Zero-pads one axis so that `width:height` becomes `ratio_w:ratio_h`;
/// odd padding puts the extra pixel on the right/bottom.
pub fn pad_to_ratio(
    image: &FeatureStack,
    ratio_w: usize,
    ratio_h: usize,
) -> (FeatureStack, PadGeometry) {
    let (w, h) = (image.width, image.height);
    let mut geom = PadGeometry {
        left: 0,
        right: 0,
        top: 0,
        bottom: 0,
        width: w,
        height: h,
    };
    if w * ratio_h < h * ratio_w {
        let target = ((h * ratio_w) as f64 / ratio_h as f64).round() as usize;
        let pad = target.saturating_sub(w);
        geom.left = pad / 2;
        geom.right = pad - pad / 2;
    } else if w * ratio_h > h * ratio_w {
        let target = ((w * ratio_h) as f64 / ratio_w as f64).round() as usize;
        let pad = target.saturating_sub(h);
        geom.top = pad / 2;
        geom.bottom = pad - pad / 2;
    }
    if geom.is_identity() {
        return (image.clone(), geom);
    }
    let (pw, ph) = (geom.padded_width(), geom.padded_height());
    let mut out = FeatureStack::zeros(image.channels, pw, ph);
    for c in 0..image.channels {
        let src = image.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..h {
            let d = (y + geom.top) * pw + geom.left;
            dst[d..d + w].copy_from_slice(&src[y * w..(y + 1) * w]);
        }
    }
    (out, geom)
}

/// Removes the padding described by `geom`.
pub fn crop_padding(padded: &FeatureStack, geom: &PadGeometry) -> Result<FeatureStack> {
    if padded.width != geom.padded_width() || padded.height != geom.padded_height() {
        return Err(Error::ShapeMismatch(format!(
            "padded stack is {}x{}, geometry expects {}x{}",
            padded.width,
            padded.height,
            geom.padded_width(),
            geom.padded_height()
        )));
    }
    let (w, h) = (geom.width, geom.height);
    let mut out = FeatureStack::zeros(padded.channels, w, h);
    for c in 0..padded.channels {
        let src = padded.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..h {
            let s = (y + geom.top) * padded.width + geom.left;
            dst[y * w..(y + 1) * w].copy_from_slice(&src[s..s + w]);
        }
    }
    Ok(out)
}

pub fn map_to_stack(map: &DensityMap) -> FeatureStack {
    FeatureStack {
        channels: 1,
        width: map.width(),
        height: map.height(),
        data: map.values().to_vec(),
    }
}

pub fn stack_to_map(stack: &FeatureStack) -> Result<DensityMap> {
    if stack.channels != 1 {
        return Err(Error::ShapeMismatch(format!(
            "expected a single-channel stack, got {} channels",
            stack.channels
        )));
    }
    DensityMap::new(stack.width, stack.height, stack.data.clone())
}

/// Bilinear resize; a sum-normalized input stays sum-normalized.
pub fn resize_map(map: &DensityMap, width: usize, height: usize) -> Result<DensityMap> {
    let was_normalized = (map.sum() - 1.0).abs() < 1e-9;
    let resized = bilinear_resize(&map_to_stack(map), width, height)?;
    // Interpolated non-negative values can round to tiny negatives.
    let data = resized.data.iter().map(|v| v.max(0.0)).collect();
    let out = DensityMap::new(width, height, data)?;
    if was_normalized && (width, height) != (map.width(), map.height()) {
        normalize_sum(&out)
    } else {
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

fn image_error(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::UnsupportedFormat(format!("{}: {other}", path.display())),
    }
}

/// Writes `map` as grayscale PNG, rescaling `[min, max]` to the full integer
/// range. Constant maps are written as all zeros.
pub fn save_map_image(map: &DensityMap, path: &Path, depth: BitDepth) -> Result<()> {
    let lo = map.values().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = map
        .values()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let scaled = |v: f64, top: f64| -> f64 {
        if hi > lo {
            ((v - lo) / (hi - lo) * top).round()
        } else {
            0.0
        }
    };
    let (w, h) = (map.width() as u32, map.height() as u32);
    let result = match depth {
        BitDepth::Eight => {
            let buf: Vec<u8> = map
                .values()
                .iter()
                .map(|v| scaled(*v, 255.0) as u8)
                .collect();
            ImageBuffer::<Luma<u8>, _>::from_raw(w, h, buf)
                .expect("buffer size matches")
                .save_with_format(path, image::ImageFormat::Png)
        }
        BitDepth::Sixteen => {
            let buf: Vec<u16> = map
                .values()
                .iter()
                .map(|v| scaled(*v, 65535.0) as u16)
                .collect();
            ImageBuffer::<Luma<u16>, _>::from_raw(w, h, buf)
                .expect("buffer size matches")
                .save_with_format(path, image::ImageFormat::Png)
        }
    };
    result.map_err(|e| image_error(path, e))
}

/// Reads an 8- or 16-bit grayscale image into `[0, 1]`.
pub fn load_map_image(path: &Path) -> Result<DensityMap> {
    let img = image::open(path).map_err(|e| image_error(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let values: Vec<f64> = match img {
        DynamicImage::ImageLuma8(buf) => buf
            .into_raw()
            .iter()
            .map(|v| f64::from(*v) / 255.0)
            .collect(),
        DynamicImage::ImageLuma16(buf) => buf
            .into_raw()
            .iter()
            .map(|v| f64::from(*v) / 65535.0)
            .collect(),
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "{}: expected 8/16-bit grayscale, found {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    DensityMap::new(w, h, values)
}

/// Reads any supported image as RGB in `[0, 1]`.
pub fn load_rgb_image(path: &Path) -> Result<FeatureStack> {
    let img = image::open(path)
        .map_err(|e| image_error(path, e))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0; 3 * w * h];
    for (i, px) in img.pixels().enumerate() {
        for c in 0..3 {
            data[c * w * h + i] = f64::from(px.0[c]) / 255.0;
        }
    }
    FeatureStack::new(3, w, h, data)
}

pub fn save_rgb_image(image: &FeatureStack, path: &Path) -> Result<()> {
    if image.channels != 3 {
        return Err(Error::ShapeMismatch("RGB image needs 3 channels".into()));
    }
    let n = image.plane_len();
    let mut buf = Vec::with_capacity(3 * n);
    for i in 0..n {
        for c in 0..3 {
            buf.push((image.data[c * n + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    ImageBuffer::<Rgb<u8>, _>::from_raw(image.width as u32, image.height as u32, buf)
        .expect("buffer size matches")
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| image_error(path, e))
}

/// Reads `x<TAB>y` lines (blank lines ignored).
pub fn read_fixations(path: &Path) -> Result<Vec<(usize, usize)>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = || {
            Error::UnsupportedFormat(format!(
                "{}:{}: expected `x<TAB>y`",
                path.display(),
                lineno + 1
            ))
        };
        let (x, y) = line.split_once('\t').ok_or_else(bad)?;
        let x = x.trim().parse().map_err(|_| bad())?;
        let y = y.trim().parse().map_err(|_| bad())?;
        out.push((x, y));
    }
    Ok(out)
}

pub fn write_fixations(points: &[(usize, usize)], path: &Path) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut text = String::new();
    for (x, y) in points {
        text.push_str(&format!("{x}\t{y}\n"));
    }
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub image: String,
    pub fixations: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<String>,
}

/// JSON index of a dataset; paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(skip)]
    pub root: PathBuf,
    pub split: String,
    pub width: usize,
    pub height: usize,
    /// Blur sigma (pixels) used to build densities from fixations.
    pub sigma: f64,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: DatasetManifest = serde_json::from_str(&text)
            .map_err(|e| Error::UnsupportedFormat(format!("{}: {e}", path.display())))?;
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    fn resolve(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Loads every entry, rejecting missing files and inconsistent shapes.
    pub fn load_samples(&self) -> Result<Vec<Sample>> {
        for e in &self.entries {
            for rel in [Some(&e.image), Some(&e.fixations), e.density.as_ref()]
                .into_iter()
                .flatten()
            {
                let p = self.resolve(rel);
                if !p.is_file() {
                    return Err(Error::io(
                        p,
                        std::io::Error::new(std::io::ErrorKind::NotFound, "listed in manifest"),
                    ));
                }
            }
        }
        self.entries.iter().map(|e| self.load_entry(e)).collect()
    }

    fn load_entry(&self, e: &ManifestEntry) -> Result<Sample> {
        let image = load_rgb_image(&self.resolve(&e.image))?;
        if (image.width, image.height) != (self.width, self.height) {
            return Err(Error::ShapeMismatch(format!(
                "{}: image is {}x{}, manifest says {}x{}",
                e.id, image.width, image.height, self.width, self.height
            )));
        }
        let rec = FixationRecord {
            image_id: e.id.clone(),
            fixations: read_fixations(&self.resolve(&e.fixations))?,
            width: image.width,
            height: image.height,
        };
        let fixations = fixations_to_binary(&rec)?;
        let density = match &e.density {
            Some(rel) => {
                let d = load_map_image(&self.resolve(rel))?;
                if (d.width(), d.height()) != (image.width, image.height) {
                    return Err(Error::ShapeMismatch(format!(
                        "{}: density is {}x{}, image is {}x{}",
                        e.id,
                        d.width(),
                        d.height(),
                        image.width,
                        image.height
                    )));
                }
                normalize_sum(&d)?
            }
            None => fixations_to_density(&rec, self.sigma)?,
        };
        Ok(Sample {
            id: e.id.clone(),
            image,
            density,
            fixations,
        })
    }
}

/// Parameters of the synthetic blob dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParams {
    pub count: usize,
    pub width: usize,
    pub height: usize,
    pub blobs_per_image: usize,
    pub fixations_per_blob: usize,
    /// Blob radius (Gaussian std) in pixels.
    pub blob_sigma: f64,
    /// Std of fixation scatter around a blob centre, in pixels.
    pub fixation_spread: f64,
    /// Zero-mean high-contrast noise patches per image. They carry no
    /// fixations, so luminance alone stays predictive.
    pub clutter_patches: usize,
    pub clutter_contrast: f64,
    /// Density blur sigma in pixels.
    pub sigma: f64,
    pub seed: u64,
}

impl SyntheticParams {
    pub fn new(
        count: usize,
        width: usize,
        height: usize,
        blobs_per_image: usize,
        seed: u64,
    ) -> Self {
        Self {
            count,
            width,
            height,
            blobs_per_image,
            fixations_per_blob: 150,
            blob_sigma: (width.min(height) as f64 / 8.0).max(1.0),
            fixation_spread: (width.min(height) as f64 / 12.0).max(0.5),
            clutter_patches: 3,
            clutter_contrast: 0.3,
            sigma: default_sigma(width),
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub params: SyntheticParams,
    pub samples: Vec<Sample>,
    pub records: Vec<FixationRecord>,
    /// Blob centres per sample, in pixels.
    pub blob_centers: Vec<Vec<(usize, usize)>>,
}

/// Bright Gaussian blobs on textured noise, with fixations clustered at the
/// blob centres. Each sample depends only on the seed and its index, and
/// pixel values are quantized to 8 bits so the in-memory images equal what
/// is written to disk.
pub fn generate_synthetic(params: &SyntheticParams) -> Result<SyntheticDataset> {
    if params.count == 0 {
        return Err(Error::InvalidConfig("synthetic count must be >= 1".into()));
    }
    if params.blobs_per_image == 0 || params.fixations_per_blob == 0 {
        return Err(Error::InvalidConfig(
            "need at least one blob and fixation".into(),
        ));
    }
    if !(params.blob_sigma > 0.0) || !(params.fixation_spread >= 0.0) || !(params.sigma > 0.0) {
        return Err(Error::InvalidConfig(
            "synthetic blob sizes must be positive".into(),
        ));
    }
    if params.width < 8 || params.height < 8 {
        return Err(Error::InvalidConfig(
            "synthetic images must be at least 8x8".into(),
        ));
    }
    let mut out = SyntheticDataset {
        params: params.clone(),
        samples: Vec::with_capacity(params.count),
        records: Vec::with_capacity(params.count),
        blob_centers: Vec::with_capacity(params.count),
    };
    for index in 0..params.count {
        let (sample, rec, centers) = synth_sample(params, index)?;
        out.samples.push(sample);
        out.records.push(rec);
        out.blob_centers.push(centers);
    }
    Ok(out)
}

fn synth_sample(
    p: &SyntheticParams,
    index: usize,
) -> Result<(Sample, FixationRecord, Vec<(usize, usize)>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    rng.set_stream(index as u64 + 1);
    let (w, h) = (p.width, p.height);
    let n = w * h;
    let blob_sigma = p.blob_sigma;

    let mut data = vec![0.0; 3 * n];
    let fx: f64 = rng.gen_range(0.2..0.9);
    let fy: f64 = rng.gen_range(0.2..0.9);
    for c in 0..3 {
        let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let base: f64 = rng.gen_range(0.15..0.35);
        for y in 0..h {
            for x in 0..w {
                let tex = 0.08 * (fx * x as f64 + fy * y as f64 + phase).sin();
                let noise: f64 = rng.gen_range(-0.1..0.1);
                data[c * n + y * w + x] = base + tex + noise;
            }
        }
    }

    let (pw, ph) = ((w / 4).max(1), (h / 4).max(1));
    for _ in 0..p.clutter_patches {
        let x0 = rng.gen_range(0..=w - pw);
        let y0 = rng.gen_range(0..=h - ph);
        for y in y0..y0 + ph {
            for x in x0..x0 + pw {
                let d = if rng.gen_bool(0.5) {
                    p.clutter_contrast
                } else {
                    -p.clutter_contrast
                };
                for c in 0..3 {
                    data[c * n + y * w + x] += d;
                }
            }
        }
    }

    let margin_x = (w / 8).max(1);
    let margin_y = (h / 8).max(1);
    let mut centers = Vec::with_capacity(p.blobs_per_image);
    let mut fixations = Vec::new();
    for _ in 0..p.blobs_per_image {
        let cx = rng.gen_range(margin_x..w - margin_x);
        let cy = rng.gen_range(margin_y..h - margin_y);
        centers.push((cx, cy));
        let amp: f64 = rng.gen_range(0.5..0.7);
        let tint: [f64; 3] = [
            rng.gen_range(0.6..1.0),
            rng.gen_range(0.6..1.0),
            rng.gen_range(0.6..1.0),
        ];
        for y in 0..h {
            for x in 0..w {
                let dx = x as f64 - cx as f64;
                let dy = y as f64 - cy as f64;
                let g = (-(dx * dx + dy * dy) / (2.0 * blob_sigma * blob_sigma)).exp();
                for c in 0..3 {
                    data[c * n + y * w + x] += amp * tint[c] * g;
                }
            }
        }
        fixations.push((cx, cy));
        for _ in 1..p.fixations_per_blob {
            let jx = gaussian(&mut rng) * p.fixation_spread;
            let jy = gaussian(&mut rng) * p.fixation_spread;
            let x = (cx as f64 + jx).round().clamp(0.0, (w - 1) as f64) as usize;
            let y = (cy as f64 + jy).round().clamp(0.0, (h - 1) as f64) as usize;
            fixations.push((x, y));
        }
    }
    for v in &mut data {
        *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
    }

    let id = format!("synth_{index:05}");
    let rec = FixationRecord {
        image_id: id.clone(),
        fixations,
        width: w,
        height: h,
    };
    let sample = Sample {
        id,
        image: FeatureStack::new(3, w, h, data)?,
        density: fixations_to_density(&rec, p.sigma)?,
        fixations: fixations_to_binary(&rec)?,
    };
    Ok((sample, rec, centers))
}

fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Writes images, fixation lists, 16-bit densities and `manifest.json`.
pub fn write_synthetic(
    dir: &Path,
    data: &SyntheticDataset,
    split: &str,
) -> Result<DatasetManifest> {
    for sub in ["images", "fixations", "density"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let mut entries = Vec::with_capacity(data.samples.len());
    for (sample, rec) in data.samples.iter().zip(&data.records) {
        let image = format!("images/{}.png", sample.id);
        let fixations = format!("fixations/{}.txt", sample.id);
        let density = format!("density/{}.png", sample.id);
        save_rgb_image(&sample.image, &dir.join(&image))?;
        write_fixations(&rec.fixations, &dir.join(&fixations))?;
        save_map_image(&sample.density, &dir.join(&density), BitDepth::Sixteen)?;
        entries.push(ManifestEntry {
            id: sample.id.clone(),
            image,
            fixations,
            density: Some(density),
        });
    }
    let manifest = DatasetManifest {
        root: dir.to_path_buf(),
        split: split.to_string(),
        width: data.params.width,
        height: data.params.height,
        sigma: data.params.sigma,
        entries,
    };
    manifest.save(&dir.join("manifest.json"))?;
    Ok(manifest)
}
