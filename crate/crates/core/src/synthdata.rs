//! Synthetic ultrasound-like phantoms with simulated three-rater annotations,
//! and the on-disk dataset format (PNG frames, CSV manifest, JSON sidecar).

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::{ExtendedColorType, ImageFormat};
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::{Grid, Image, Mask};

pub const RATERS: usize = 3;
/// Share of patients held out as the test split.
pub const TEST_FRACTION: f64 = 0.2;
pub const MANIFEST_FILE: &str = "manifest.csv";
pub const SIDECAR_FILE: &str = "phantom.json";
pub const TRUTH_DIR: &str = "truth";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomConfig {
    pub image_height: usize,
    pub image_width: usize,
    pub n_patients: usize,
    pub frames_per_patient: usize,
    pub negative_frame_fraction: f64,
    /// Inclusive `[min, max]` range of ellipse semi-axes in pixels.
    pub gland_axis_range: [f64; 2],
    pub speckle_strength: f64,
    pub rater_boundary_jitter: f64,
    pub rater_miss_probability: f64,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            image_height: 128,
            image_width: 128,
            n_patients: 10,
            frames_per_patient: 20,
            negative_frame_fraction: 0.2,
            gland_axis_range: [16.0, 36.0],
            speckle_strength: 0.35,
            rater_boundary_jitter: 3.0,
            rater_miss_probability: 0.0,
            seed: 0,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_height < 32 {
            return Err(Error::config("image_height", format!("{} is below 32", self.image_height)));
        }
        if self.image_width < 32 {
            return Err(Error::config("image_width", format!("{} is below 32", self.image_width)));
        }
        if self.n_patients < 1 {
            return Err(Error::config("n_patients", "must be at least 1"));
        }
        if self.frames_per_patient < 1 {
            return Err(Error::config("frames_per_patient", "must be at least 1"));
        }
        check_fraction("negative_frame_fraction", self.negative_frame_fraction)?;
        check_fraction("rater_miss_probability", self.rater_miss_probability)?;
        let [lo, hi] = self.gland_axis_range;
        if !(lo.is_finite() && hi.is_finite()) || lo < 1.0 || hi < lo {
            return Err(Error::config("gland_axis_range", format!("[{lo}, {hi}] is not a range with min >= 1")));
        }
        let limit = self.image_height.min(self.image_width) as f64 / 2.0 - 2.0;
        if hi > limit {
            return Err(Error::config("gland_axis_range", format!("max {hi} does not fit a frame (limit {limit})")));
        }
        if !(self.speckle_strength >= 0.0 && self.speckle_strength.is_finite()) {
            return Err(Error::config("speckle_strength", "must be a finite value >= 0"));
        }
        if !(self.rater_boundary_jitter >= 0.0 && self.rater_boundary_jitter.is_finite()) {
            return Err(Error::config("rater_boundary_jitter", "must be a finite value >= 0"));
        }
        Ok(())
    }

    pub fn total_frames(&self) -> usize {
        self.n_patients * self.frames_per_patient
    }

    /// Negative frames per patient.
    pub fn negatives_per_patient(&self) -> usize {
        ((self.negative_frame_fraction * self.frames_per_patient as f64).round() as usize).min(self.frames_per_patient)
    }

    pub fn test_patients(&self) -> usize {
        if self.n_patients < 2 {
            return 0;
        }
        ((TEST_FRACTION * self.n_patients as f64).round() as usize).clamp(1, self.n_patients - 1)
    }
}

fn check_fraction(field: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::config(field, format!("{v} outside [0, 1]")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    /// The training pool; validation frames are carved out per fold.
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::config("split", format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameRecord {
    pub patient_id: String,
    pub frame_id: String,
    pub image: Image,
    pub rater_masks: [Mask; RATERS],
    pub split: Split,
    /// Phantom ground truth, present only for synthetic data.
    pub truth: Option<Mask>,
}

impl FrameRecord {
    pub fn shape(&self) -> (usize, usize) {
        self.image.shape()
    }
}

/// One manifest row; field names are the CSV column names.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub patient_id: String,
    pub frame_id: String,
    pub image_path: String,
    pub mask_path_r1: String,
    pub mask_path_r2: String,
    pub mask_path_r3: String,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub path: PathBuf,
    pub rows: Vec<ManifestRow>,
}

impl DatasetManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::Reader::from_reader(file);
        let rows = reader.deserialize().collect::<std::result::Result<Vec<ManifestRow>, _>>()?;
        Ok(Self { path: path.to_path_buf(), rows })
    }

    pub fn root(&self) -> &Path {
        self.path.parent().unwrap_or_else(|| Path::new("."))
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// The result of [`generate_dataset`]: the manifest plus the in-memory frames.
#[derive(Clone, Debug)]
pub struct GeneratedDataset {
    pub manifest: DatasetManifest,
    pub records: Vec<FrameRecord>,
}

#[derive(Clone, Copy, Debug)]
struct Ellipse {
    cy: f64,
    cx: f64,
    a: f64,
    b: f64,
    angle: f64,
}

impl Ellipse {
    /// Normalised radius: < 1 inside, 1 on the boundary.
    fn rho(&self, y: f64, x: f64) -> f64 {
        let (s, c) = self.angle.sin_cos();
        let (dy, dx) = (y - self.cy, x - self.cx);
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        ((u / self.a).powi(2) + (v / self.b).powi(2)).sqrt()
    }
}

fn patient_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn patient_id(index: usize) -> String {
    format!("p{index:03}")
}

pub fn frame_id(patient: usize, frame: usize) -> String {
    format!("p{patient:03}_f{frame:03}")
}

/// Generate every frame in memory. Pixel values are quantised to 8 bits so the
/// records equal what [`load_dataset`] reads back from disk.
pub fn generate_frames(config: &PhantomConfig) -> Result<Vec<FrameRecord>> {
    config.validate()?;
    let splits = patient_splits(config);
    let (h, w) = (config.image_height, config.image_width);
    let mut records = Vec::with_capacity(config.total_frames());
    for p in 0..config.n_patients {
        let mut rng = patient_rng(config.seed, p as u64 + 1);
        let base = patient_gland(config, &mut rng);
        let negatives: Vec<usize> =
            index::sample(&mut rng, config.frames_per_patient, config.negatives_per_patient()).into_vec();
        for f in 0..config.frames_per_patient {
            let gland = (!negatives.contains(&f)).then(|| frame_gland(config, &base, &mut rng));
            let truth = Mask::from_fn(h, w, |y, x| match &gland {
                Some(e) => u8::from(e.rho(y as f64, x as f64) <= 1.0),
                None => 0,
            });
            let image = render_frame(config, gland.as_ref(), &mut rng);
            let rater_masks =
                simulate_raters(&truth, config.rater_boundary_jitter, config.rater_miss_probability, &mut rng);
            records.push(FrameRecord {
                patient_id: patient_id(p),
                frame_id: frame_id(p, f),
                image,
                rater_masks,
                split: splits[p],
                truth: Some(truth),
            });
        }
    }
    Ok(records)
}

/// Patient-level 80:20 split of the training pool and the test set.
fn patient_splits(config: &PhantomConfig) -> Vec<Split> {
    let mut order: Vec<usize> = (0..config.n_patients).collect();
    order.shuffle(&mut patient_rng(config.seed, 0));
    let mut splits = vec![Split::Train; config.n_patients];
    for &p in order.iter().take(config.test_patients()) {
        splits[p] = Split::Test;
    }
    splits
}

fn patient_gland<R: Rng + ?Sized>(config: &PhantomConfig, rng: &mut R) -> Ellipse {
    let (h, w) = (config.image_height as f64, config.image_width as f64);
    let [lo, hi] = config.gland_axis_range;
    let a = rng.random_range(lo..=hi);
    let b = rng.random_range(lo..=hi).min(a);
    Ellipse {
        cy: h * rng.random_range(0.42..0.58),
        cx: w * rng.random_range(0.4..0.6),
        a,
        b,
        angle: rng.random_range(-0.35..0.35),
    }
}

/// Per-frame variation of the patient's gland, as when the probe sweeps.
fn frame_gland<R: Rng + ?Sized>(config: &PhantomConfig, base: &Ellipse, rng: &mut R) -> Ellipse {
    let (h, w) = (config.image_height as f64, config.image_width as f64);
    let [lo, hi] = config.gland_axis_range;
    let scale = rng.random_range(0.85..1.1);
    let a = (base.a * scale).clamp(lo, hi);
    let b = (base.b * scale).clamp(lo, hi);
    let r = a.max(b) + 2.0;
    Ellipse {
        cy: (base.cy + h * rng.random_range(-0.04..0.04)).clamp(r.min(h / 2.0), (h - r).max(h / 2.0)),
        cx: (base.cx + w * rng.random_range(-0.04..0.04)).clamp(r.min(w / 2.0), (w - r).max(w / 2.0)),
        a,
        b,
        angle: base.angle + rng.random_range(-0.1..0.1),
    }
}

fn render_frame<R: Rng + ?Sized>(config: &PhantomConfig, gland: Option<&Ellipse>, rng: &mut R) -> Image {
    let (h, w) = (config.image_height, config.image_width);
    let (hf, wf) = (h as f64, w as f64);
    let phase_y = rng.random_range(0.0..std::f64::consts::TAU);
    let phase_x = rng.random_range(0.0..std::f64::consts::TAU);
    let shadow = rng.random_bool(0.5).then(|| (rng.random_range(0.15..0.85) * wf, rng.random_range(0.03..0.08) * wf));
    let clean = Grid::from_fn(h, w, |y, x| {
        let (yf, xf) = (y as f64, x as f64);
        let mut v = 0.5 + 0.06 * (3.0 * yf / hf * std::f64::consts::TAU / 3.0 + phase_y).sin()
            + 0.05 * (2.0 * xf / wf * std::f64::consts::TAU / 2.0 + phase_x).sin();
        v *= 1.0 - 0.3 * yf / hf;
        if yf < hf / 16.0 {
            v += 0.2;
        }
        if let Some((sx, sw)) = shadow {
            v -= 0.1 * (-((xf - sx) / sw).powi(2)).exp() * (yf / hf);
        }
        if let Some(e) = gland {
            let rho = e.rho(yf, xf);
            // approximate signed distance to the boundary in pixels
            let d = (rho - 1.0) * (e.a * e.b).sqrt();
            let inside = 1.0 / (1.0 + (d / 0.8).exp());
            let interior = 0.2 + 0.05 * rho.min(1.0).powi(2);
            v = v * (1.0 - inside) + interior * inside;
            v += 0.35 * (-((d - 0.5) / 1.5).powi(2)).exp();
        }
        v
    });
    let noise = smoothed_unit_noise(h, w, rng);
    let s = config.speckle_strength;
    Grid::from_fn(h, w, |y, x| {
        let v = (clean.get(y, x) * (1.0 + s * noise.get(y, x))).clamp(0.0, 1.0);
        quantize(v as f32)
    })
}

/// Gaussian white noise blurred with a 3x3 binomial kernel and rescaled to
/// zero mean and unit variance.
fn smoothed_unit_noise<R: Rng + ?Sized>(h: usize, w: usize, rng: &mut R) -> Grid<f64> {
    let white: Vec<f64> = (0..h * w).map(|_| StandardNormal.sample(rng)).collect();
    let k = [1.0, 2.0, 1.0];
    let mut blurred = Grid::from_fn(h, w, |y, x| {
        let mut acc = 0.0;
        for (dy, ky) in k.iter().enumerate() {
            for (dx, kx) in k.iter().enumerate() {
                let yy = (y + dy).saturating_sub(1).min(h - 1);
                let xx = (x + dx).saturating_sub(1).min(w - 1);
                acc += ky * kx * white[yy * w + xx];
            }
        }
        acc / 16.0
    });
    let n = (h * w) as f64;
    let mean = blurred.as_slice().iter().sum::<f64>() / n;
    let var = blurred.as_slice().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-12);
    blurred.as_mut_slice().iter_mut().for_each(|v| *v = (*v - mean) / std);
    blurred
}

fn quantize(v: f32) -> f32 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

/// Three simulated annotations of `true_mask`.
///
/// Each rater grows or shrinks the mask by a random integer radius in
/// `[-floor(jitter / 2), floor(jitter / 2)]`, then warps it with a smooth
/// sinusoidal displacement of amplitude at most `jitter / 2`. With probability
/// `miss_prob` a rater leaves a positive frame unannotated. Empty masks stay
/// empty.
pub fn simulate_raters<R: Rng + ?Sized>(true_mask: &Mask, jitter: f64, miss_prob: f64, rng: &mut R) -> [Mask; RATERS] {
    std::array::from_fn(|_| simulate_rater(true_mask, jitter, miss_prob, rng))
}

fn simulate_rater<R: Rng + ?Sized>(true_mask: &Mask, jitter: f64, miss_prob: f64, rng: &mut R) -> Mask {
    let (h, w) = true_mask.shape();
    let jitter = if jitter.is_finite() { jitter.max(0.0) } else { 0.0 };
    let max_radius = (jitter / 2.0).floor() as i64;
    // draws happen unconditionally so every frame consumes the same amount of randomness
    let missed = rng.random::<f64>() < miss_prob.clamp(0.0, 1.0);
    let radius = rng.random_range(-max_radius..=max_radius);
    let amp = rng.random_range(0.0..=jitter / 2.0);
    let mut waves = [(0.0f64, 0.0f64, 0.0f64); 2];
    for wave in &mut waves {
        *wave = (rng.random_range(0.5..1.5), rng.random_range(0.5..1.5), rng.random_range(0.0..std::f64::consts::TAU));
    }
    if true_mask.is_blank() || missed {
        return Mask::filled(h, w, 0);
    }
    let shifted = morph(true_mask, radius);
    if amp == 0.0 {
        return shifted;
    }
    let (hf, wf) = (h as f64, w as f64);
    let field = |(u, v, phi): (f64, f64, f64), y: f64, x: f64| {
        amp * (std::f64::consts::TAU * (u * x / wf + v * y / hf) + phi).sin()
    };
    Mask::from_fn(h, w, |y, x| {
        let (yf, xf) = (y as f64, x as f64);
        let sy = (yf - field(waves[0], yf, xf)).round();
        let sx = (xf - field(waves[1], yf, xf)).round();
        if sy < 0.0 || sx < 0.0 || sy >= hf || sx >= wf {
            0
        } else {
            *shifted.get(sy as usize, sx as usize)
        }
    })
}

/// Dilation (radius > 0) or erosion (radius < 0) by a disk.
fn morph(mask: &Mask, radius: i64) -> Mask {
    if radius == 0 {
        return mask.clone();
    }
    let r = radius.abs();
    let offsets: Vec<(i64, i64)> =
        (-r..=r).flat_map(|dy| (-r..=r).map(move |dx| (dy, dx))).filter(|(dy, dx)| dy * dy + dx * dx <= r * r).collect();
    let (h, w) = mask.shape();
    let at = |y: i64, x: i64| -> u8 {
        if y < 0 || x < 0 || y >= h as i64 || x >= w as i64 {
            0
        } else {
            *mask.get(y as usize, x as usize)
        }
    };
    Mask::from_fn(h, w, |y, x| {
        let (y, x) = (y as i64, x as i64);
        if radius > 0 {
            u8::from(offsets.iter().any(|(dy, dx)| at(y + dy, x + dx) == 1))
        } else {
            u8::from(offsets.iter().all(|(dy, dx)| at(y + dy, x + dx) == 1))
        }
    })
}

fn write_png(path: &Path, data: &[u8], h: usize, w: usize) -> Result<()> {
    image::save_buffer_with_format(path, data, w as u32, h as u32, ExtendedColorType::L8, ImageFormat::Png)
        .map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

fn image_bytes(image: &Image) -> Vec<u8> {
    image.as_slice().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
}

fn mask_bytes(mask: &Mask) -> Vec<u8> {
    mask.as_slice().iter().map(|&v| if v > 0 { 255 } else { 0 }).collect()
}

/// Generate the dataset and write it under `out_dir`:
/// `images/`, `masks/`, `truth/`, `manifest.csv` and `phantom.json`.
pub fn generate_dataset(config: &PhantomConfig, out_dir: &Path) -> Result<GeneratedDataset> {
    let records = generate_frames(config)?;
    for sub in ["images", "masks", TRUTH_DIR] {
        let dir = out_dir.join(sub);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let (h, w) = (config.image_height, config.image_width);
    let mut rows = Vec::with_capacity(records.len());
    for rec in &records {
        let image_path = format!("images/{}.png", rec.frame_id);
        write_png(&out_dir.join(&image_path), &image_bytes(&rec.image), h, w)?;
        let mut mask_paths = Vec::with_capacity(RATERS);
        for (k, m) in rec.rater_masks.iter().enumerate() {
            let p = format!("masks/{}_r{}.png", rec.frame_id, k + 1);
            write_png(&out_dir.join(&p), &mask_bytes(m), h, w)?;
            mask_paths.push(p);
        }
        if let Some(t) = &rec.truth {
            write_png(&out_dir.join(TRUTH_DIR).join(format!("{}.png", rec.frame_id)), &mask_bytes(t), h, w)?;
        }
        rows.push(ManifestRow {
            patient_id: rec.patient_id.clone(),
            frame_id: rec.frame_id.clone(),
            image_path,
            mask_path_r1: mask_paths[0].clone(),
            mask_path_r2: mask_paths[1].clone(),
            mask_path_r3: mask_paths[2].clone(),
            split: rec.split,
        });
    }
    let manifest_path = out_dir.join(MANIFEST_FILE);
    let file = fs::File::create(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let mut writer = csv::Writer::from_writer(file);
    for row in &rows {
        writer.serialize(row)?;
    }
    writer.flush().map_err(|e| Error::io(&manifest_path, e))?;
    let sidecar = out_dir.join(SIDECAR_FILE);
    fs::write(&sidecar, serde_json::to_string_pretty(config)?).map_err(|e| Error::io(&sidecar, e))?;
    Ok(GeneratedDataset { manifest: DatasetManifest { path: manifest_path, rows }, records })
}

fn load_err(frame_id: &str, reason: impl Into<String>) -> Error {
    Error::Load { frame_id: frame_id.to_string(), reason: reason.into() }
}

fn read_gray(path: &Path, frame_id: &str) -> Result<Grid<u8>> {
    if !path.exists() {
        return Err(load_err(frame_id, format!("missing file {}", path.display())));
    }
    let img = image::open(path).map_err(|e| load_err(frame_id, format!("{}: {e}", path.display())))?;
    let gray = img.to_luma8();
    let (w, h) = gray.dimensions();
    Grid::from_vec(h as usize, w as usize, gray.into_raw())
}

fn read_mask(path: &Path, frame_id: &str) -> Result<Mask> {
    let raw = read_gray(path, frame_id)?;
    if raw.as_slice().iter().any(|&v| v != 0 && v != 255 && v != 1) {
        return Err(load_err(frame_id, format!("{} is not a binary mask", path.display())));
    }
    Ok(raw.map(|&v| u8::from(v > 0)))
}

/// Read every frame referenced by the manifest, validating shapes, mask
/// values and the patient-level split.
pub fn load_dataset(manifest_path: &Path) -> Result<Vec<FrameRecord>> {
    let manifest = DatasetManifest::read(manifest_path)?;
    load_manifest(&manifest)
}

pub fn load_manifest(manifest: &DatasetManifest) -> Result<Vec<FrameRecord>> {
    let root = manifest.root();
    let mut patient_split: BTreeMap<&str, Split> = BTreeMap::new();
    let mut records = Vec::with_capacity(manifest.len());
    for row in &manifest.rows {
        let split = *patient_split.entry(&row.patient_id).or_insert(row.split);
        let pool = |s: Split| if s == Split::Test { Split::Test } else { Split::Train };
        if pool(split) != pool(row.split) {
            return Err(load_err(&row.frame_id, format!("patient {} spans several splits", row.patient_id)));
        }
        let image = read_gray(&root.join(&row.image_path), &row.frame_id)?.map(|&v| v as f32 / 255.0);
        let shape = image.shape();
        let mut masks = Vec::with_capacity(RATERS);
        for p in [&row.mask_path_r1, &row.mask_path_r2, &row.mask_path_r3] {
            let m = read_mask(&root.join(p), &row.frame_id)?;
            if m.shape() != shape {
                return Err(load_err(
                    &row.frame_id,
                    format!("mask {p} is {:?}, image is {:?}", m.shape(), shape),
                ));
            }
            masks.push(m);
        }
        let truth_path = root.join(TRUTH_DIR).join(format!("{}.png", row.frame_id));
        let truth = if truth_path.exists() {
            let t = read_mask(&truth_path, &row.frame_id)?;
            if t.shape() != shape {
                return Err(load_err(&row.frame_id, "truth mask shape differs from the image"));
            }
            Some(t)
        } else {
            None
        };
        let rater_masks: [Mask; RATERS] = masks.try_into().expect("three rater columns");
        records.push(FrameRecord {
            patient_id: row.patient_id.clone(),
            frame_id: row.frame_id.clone(),
            image,
            rater_masks,
            split: row.split,
            truth,
        });
    }
    Ok(records)
}

/// SHA-256 over the manifest, sidecar and every file the dataset references.
pub fn dataset_checksum(manifest_path: &Path) -> Result<String> {
    let manifest = DatasetManifest::read(manifest_path)?;
    let root = manifest.root();
    let mut hasher = Sha256::new();
    let add = |path: &Path, hasher: &mut Sha256| -> Result<()> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
        Ok(())
    };
    add(manifest_path, &mut hasher)?;
    let sidecar = root.join(SIDECAR_FILE);
    if sidecar.exists() {
        add(&sidecar, &mut hasher)?;
    }
    for row in &manifest.rows {
        for p in [&row.image_path, &row.mask_path_r1, &row.mask_path_r2, &row.mask_path_r3] {
            add(&root.join(p), &mut hasher)?;
        }
        let truth = root.join(TRUTH_DIR).join(format!("{}.png", row.frame_id));
        if truth.exists() {
            add(&truth, &mut hasher)?;
        }
    }
    Ok(hex::encode(hasher.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::vote_mask;

    fn dice(a: &Mask, b: &Mask) -> f64 {
        let inter = a.as_slice().iter().zip(b.as_slice()).filter(|(x, y)| **x == 1 && **y == 1).count();
        let s = a.count_positive() + b.count_positive();
        if s == 0 {
            1.0
        } else {
            2.0 * inter as f64 / s as f64
        }
    }

    fn small() -> PhantomConfig {
        PhantomConfig {
            image_height: 64,
            image_width: 64,
            n_patients: 10,
            frames_per_patient: 20,
            negative_frame_fraction: 0.2,
            gland_axis_range: [10.0, 20.0],
            seed: 7,
            ..PhantomConfig::default()
        }
    }

    #[test]
    fn negative_count_per_patient() {
        let recs = generate_frames(&small()).unwrap();
        assert_eq!(recs.len(), 200);
        let mut per_patient: BTreeMap<String, usize> = BTreeMap::new();
        for r in &recs {
            if r.truth.as_ref().unwrap().is_blank() {
                *per_patient.entry(r.patient_id.clone()).or_default() += 1;
                assert!(r.rater_masks.iter().all(Mask::is_blank));
            }
        }
        assert_eq!(per_patient.len(), 10);
        assert!(per_patient.values().all(|&n| n == 4));
    }

    #[test]
    fn no_negatives_when_fraction_zero() {
        let cfg = PhantomConfig { negative_frame_fraction: 0.0, n_patients: 3, ..small() };
        assert!(generate_frames(&cfg).unwrap().iter().all(|r| !r.truth.as_ref().unwrap().is_blank()));
    }

    #[test]
    fn validation_names_the_field() {
        let cases: Vec<(PhantomConfig, &str)> = vec![
            (PhantomConfig { image_height: 16, ..small() }, "image_height"),
            (PhantomConfig { n_patients: 0, ..small() }, "n_patients"),
            (PhantomConfig { negative_frame_fraction: 1.5, ..small() }, "negative_frame_fraction"),
            (PhantomConfig { rater_miss_probability: -0.1, ..small() }, "rater_miss_probability"),
            (PhantomConfig { gland_axis_range: [20.0, 10.0], ..small() }, "gland_axis_range"),
            (PhantomConfig { speckle_strength: -1.0, ..small() }, "speckle_strength"),
        ];
        for (cfg, field) in cases {
            match cfg.validate() {
                Err(Error::InvalidConfig { field: f, .. }) => assert_eq!(f, field),
                other => panic!("expected error for {field}, got {other:?}"),
            }
        }
    }

    #[test]
    fn splits_are_patient_level_80_20() {
        let recs = generate_frames(&small()).unwrap();
        let mut by_patient: BTreeMap<&str, Split> = BTreeMap::new();
        for r in &recs {
            let s = *by_patient.entry(&r.patient_id).or_insert(r.split);
            assert_eq!(s, r.split);
        }
        assert_eq!(by_patient.values().filter(|s| **s == Split::Test).count(), 2);
    }

    #[test]
    fn images_in_unit_range_and_rimmed() {
        let recs = generate_frames(&PhantomConfig { n_patients: 2, ..small() }).unwrap();
        for r in &recs {
            assert!(r.image.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
            let truth = r.truth.as_ref().unwrap();
            if !truth.is_blank() {
                let inside: Vec<f32> =
                    r.image.as_slice().iter().zip(truth.as_slice()).filter(|(_, &t)| t == 1).map(|(v, _)| *v).collect();
                let mean_in = inside.iter().sum::<f32>() / inside.len() as f32;
                let mean_all = r.image.as_slice().iter().sum::<f32>() / r.image.len() as f32;
                assert!(mean_in < mean_all, "gland interior should be darker");
            }
        }
    }

    #[test]
    fn raters_identity_and_zero_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let truth = Mask::from_fn(64, 64, |y, x| u8::from((y as i64 - 32).pow(2) + (x as i64 - 30).pow(2) < 150));
        for m in simulate_raters(&truth, 0.0, 0.0, &mut rng) {
            assert_eq!(m, truth);
        }
        let empty = Mask::filled(64, 64, 0);
        for m in simulate_raters(&empty, 3.0, 0.5, &mut rng) {
            assert!(m.is_blank());
        }
        for m in simulate_raters(&truth, 3.0, 1.0, &mut rng) {
            assert!(m.is_blank());
        }
    }

    #[test]
    fn jittered_raters_stay_close() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let e = Ellipse { cy: 32.0, cx: 32.0, a: 14.0, b: 10.0, angle: 0.3 };
        let truth = Mask::from_fn(64, 64, |y, x| u8::from(e.rho(y as f64, x as f64) <= 1.0));
        let mut differs = false;
        for _ in 0..200 {
            for m in simulate_raters(&truth, 3.0, 0.0, &mut rng) {
                let d = dice(&m, &truth);
                assert!(d > 0.7 && d <= 1.0, "dice {d}");
                differs |= d < 1.0;
            }
        }
        assert!(differs);
    }

    #[test]
    fn vote_fusion_does_not_degrade() {
        let recs = generate_frames(&PhantomConfig { n_patients: 8, ..small() }).unwrap();
        let mut rater_sum = 0.0;
        let mut vote_sum = 0.0;
        let mut n = 0;
        for r in recs.iter().filter(|r| !r.truth.as_ref().unwrap().is_blank()) {
            let t = r.truth.as_ref().unwrap();
            rater_sum += r.rater_masks.iter().map(|m| dice(m, t)).sum::<f64>() / 3.0;
            vote_sum += dice(&vote_mask(&r.rater_masks).unwrap(), t);
            n += 1;
        }
        assert!(n >= 100);
        assert!(vote_sum / n as f64 >= rater_sum / n as f64 - 0.05);
    }

    #[test]
    fn round_trip_and_byte_identical_reruns() {
        let cfg = PhantomConfig { n_patients: 3, frames_per_patient: 5, ..small() };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let gen = generate_dataset(&cfg, a.path()).unwrap();
        generate_dataset(&cfg, b.path()).unwrap();
        let loaded = load_dataset(&a.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(loaded.len(), gen.manifest.len());
        assert_eq!(loaded, gen.records);
        assert_eq!(
            dataset_checksum(&a.path().join(MANIFEST_FILE)).unwrap(),
            dataset_checksum(&b.path().join(MANIFEST_FILE)).unwrap()
        );
        let header = fs::read_to_string(a.path().join(MANIFEST_FILE)).unwrap();
        assert!(header.starts_with("patient_id,frame_id,image_path,mask_path_r1,mask_path_r2,mask_path_r3,split"));
    }

    #[test]
    fn missing_mask_names_the_frame() {
        let cfg = PhantomConfig { n_patients: 2, frames_per_patient: 3, ..small() };
        let dir = tempfile::tempdir().unwrap();
        let gen = generate_dataset(&cfg, dir.path()).unwrap();
        let victim = &gen.manifest.rows[4];
        fs::remove_file(dir.path().join(&victim.mask_path_r2)).unwrap();
        match load_dataset(&dir.path().join(MANIFEST_FILE)) {
            Err(Error::Load { frame_id, .. }) => assert_eq!(frame_id, victim.frame_id),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_binary_mask_is_rejected() {
        let cfg = PhantomConfig { n_patients: 2, frames_per_patient: 2, ..small() };
        let dir = tempfile::tempdir().unwrap();
        let gen = generate_dataset(&cfg, dir.path()).unwrap();
        let victim = &gen.manifest.rows[1];
        write_png(&dir.path().join(&victim.mask_path_r1), &vec![128u8; 64 * 64], 64, 64).unwrap();
        assert!(matches!(
            load_dataset(&dir.path().join(MANIFEST_FILE)),
            Err(Error::Load { frame_id, .. }) if frame_id == victim.frame_id
        ));
    }
}
