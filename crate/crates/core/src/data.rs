//! Synthetic survival images with known hazards, IDX digit ingestion and
//! the on-disk dataset format.
//!
//! A blob image is an "organ" ellipse with a handful of brighter disk
//! "tumors". The true log-hazard is proportional to tumor load (blob area
//! over organ area) and event times are exponential given that hazard, so a
//! Cox model on the right image feature is correctly specified.
//!
//! Dataset directory layout:
//!
//! * `images.svi`: `b"SVIM"`, `u32` version (1), `u32` n, `u32` side, then
//!   `n·side²` little-endian `f32`, then the CRC32 of those pixel bytes.
//! * `survival.csv`: `id,time_days,event[,true_loghazard]`.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::distributions::Open01;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::survstats::SurvivalTable;

pub const IMAGES_FILE: &str = "images.svi";
pub const SURVIVAL_FILE: &str = "survival.csv";
const SVI_MAGIC: &[u8; 4] = b"SVIM";
const SVI_VERSION: u32 = 1;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

const ORGAN_INTENSITY: f64 = 0.5;
const BLOB_INTENSITY: f64 = 0.9;
const NOISE_MAX: f64 = 0.05;
const SUPERSAMPLE: usize = 4;
/// Organ semi-axes as fractions of the image side.
const ORGAN_SEMI_MAJOR: [f64; 2] = [0.20, 0.32];
const ORGAN_SEMI_MINOR: [f64; 2] = [0.15, 0.25];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub image_side: usize,
    pub n_samples: usize,
    /// Inclusive range of tumor blobs per image.
    pub blob_count_range: [usize; 2],
    /// Blob radius range in pixels.
    pub blob_radius_range: [f64; 2],
    /// Log-hazard per unit of blob-area fraction.
    pub hazard_slope: f64,
    /// Baseline event rate per day.
    pub baseline_rate: f64,
    pub censor_rate_target: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            image_side: 16,
            n_samples: 2000,
            blob_count_range: [0, 4],
            blob_radius_range: [1.0, 3.0],
            hazard_slope: 3.0,
            baseline_rate: 1.0 / 365.0,
            censor_rate_target: 0.17,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_side < 8 {
            return Err(Error::Config(format!(
                "image_side must be at least 8, got {}",
                self.image_side
            )));
        }
        if self.n_samples == 0 {
            return Err(Error::Config("n_samples must be positive".into()));
        }
        let [lo, hi] = self.blob_count_range;
        if lo > hi {
            return Err(Error::Config(format!("blob_count_range [{lo}, {hi}] is empty")));
        }
        let [rlo, rhi] = self.blob_radius_range;
        if !(rlo > 0.0 && rlo <= rhi && rhi.is_finite()) {
            return Err(Error::Config(format!("blob_radius_range [{rlo}, {rhi}] is invalid")));
        }
        if !(self.hazard_slope.is_finite() && self.hazard_slope > 0.0) {
            return Err(Error::Config(format!(
                "hazard_slope must be positive, got {}",
                self.hazard_slope
            )));
        }
        check_rate("baseline_rate", self.baseline_rate)?;
        check_censor_target(self.censor_rate_target)
    }
}

fn check_rate(name: &str, v: f64) -> Result<()> {
    if !(v.is_finite() && v > 0.0) {
        return Err(Error::Config(format!("{name} must be positive, got {v}")));
    }
    Ok(())
}

fn check_censor_target(v: f64) -> Result<()> {
    if !(v > 0.0 && v < 1.0) {
        return Err(Error::Config(format!(
            "censor_rate_target must lie in (0, 1), got {v}"
        )));
    }
    Ok(())
}

/// Images in `[0,1]` with their survival table.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// Record identifiers, carried through splits and exports.
    pub ids: Vec<u64>,
    /// `[n×side²]`.
    pub images: Tensor,
    pub side: usize,
    pub table: SurvivalTable,
    pub true_loghazard: Option<Vec<f64>>,
}

impl Dataset {
    pub fn new(
        ids: Vec<u64>,
        images: Tensor,
        side: usize,
        table: SurvivalTable,
        true_loghazard: Option<Vec<f64>>,
    ) -> Result<Self> {
        let n = table.len();
        if images.shape() != [n, side * side] {
            return Err(Error::Validation(format!(
                "images {:?} do not match {n} records of side {side}",
                images.shape()
            )));
        }
        if ids.len() != n || true_loghazard.as_ref().is_some_and(|h| h.len() != n) {
            return Err(Error::Validation("dataset columns differ in length".into()));
        }
        if let Some(v) = images.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Validation(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self {
            ids,
            images,
            side,
            table,
            true_loghazard,
        })
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn pixels(&self) -> usize {
        self.side * self.side
    }

    /// Records at `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        let p = self.pixels();
        let mut data = Vec::with_capacity(idx.len() * p);
        for &i in idx {
            data.extend_from_slice(self.images.row(i));
        }
        Self {
            ids: idx.iter().map(|&i| self.ids[i]).collect(),
            images: Tensor::matrix(idx.len(), p, data).expect("subset shape"),
            side: self.side,
            table: self.table.subset(idx),
            true_loghazard: self
                .true_loghazard
                .as_ref()
                .map(|h| idx.iter().map(|&i| h[i]).collect()),
        }
    }

    pub fn censor_fraction(&self) -> f64 {
        1.0 - self.table.n_events() as f64 / self.len() as f64
    }
}

/// Event and censoring draws behind a survival table.
#[derive(Clone, Debug)]
pub struct SimulatedSurvival {
    pub event_time: Vec<f64>,
    pub censor_time: Vec<f64>,
    pub censor_rate: f64,
    pub table: SurvivalTable,
}

/// Exponential event times `t = −ln(u)/(λ₀·eʰ)` and independent exponential
/// censoring whose rate is bisected until the censored fraction is within
/// three percentage points of `censor_target`.
pub fn simulate_survival<R: Rng>(
    loghazard: &[f64],
    baseline_rate: f64,
    censor_target: f64,
    rng: &mut R,
) -> Result<SimulatedSurvival> {
    check_rate("baseline_rate", baseline_rate)?;
    check_censor_target(censor_target)?;
    let event_time: Vec<f64> = loghazard
        .iter()
        .map(|&h| {
            let u: f64 = rng.sample(Open01);
            -u.ln() / (baseline_rate * h.exp())
        })
        .collect();
    let unit: Vec<f64> = loghazard
        .iter()
        .map(|_| -rng.sample::<f64, _>(Open01).ln())
        .collect();
    let fraction = |rate: f64| {
        let censored = unit
            .iter()
            .zip(&event_time)
            .filter(|(&e, &t)| e / rate < t)
            .count();
        censored as f64 / event_time.len() as f64
    };

    // Censored fraction increases with the censoring rate.
    let (mut lo, mut hi) = ((baseline_rate * 1e-6).ln(), (baseline_rate * 1e6).ln());
    for _ in 0..20 {
        let mid = 0.5 * (lo + hi);
        if fraction(mid.exp()) < censor_target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let candidates = [lo.exp(), hi.exp()];
    let censor_rate = candidates
        .into_iter()
        .min_by(|a, b| {
            (fraction(*a) - censor_target)
                .abs()
                .total_cmp(&(fraction(*b) - censor_target).abs())
        })
        .expect("two candidates");
    let realized = fraction(censor_rate);
    if (realized - censor_target).abs() > 0.03 {
        return Err(Error::Calibration(format!(
            "censoring fraction {realized:.3} cannot be brought within 0.03 of {censor_target}"
        )));
    }
    let censor_time: Vec<f64> = unit.iter().map(|e| e / censor_rate).collect();
    let time = event_time
        .iter()
        .zip(&censor_time)
        .map(|(&t, &c)| t.min(c))
        .collect();
    let event = event_time
        .iter()
        .zip(&censor_time)
        .map(|(&t, &c)| t <= c)
        .collect();
    Ok(SimulatedSurvival {
        event_time,
        censor_time,
        censor_rate,
        table: SurvivalTable::new(time, event)?,
    })
}

struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (dx * self.cos + dy * self.sin) / self.a;
        let v = (-dx * self.sin + dy * self.cos) / self.b;
        u * u + v * v <= 1.0
    }
}

/// Fraction of pixel `(px, py)` covered by a shape, by supersampling.
fn coverage(px: usize, py: usize, inside: impl Fn(f64, f64) -> bool) -> f64 {
    let step = 1.0 / SUPERSAMPLE as f64;
    let mut hits = 0;
    for sy in 0..SUPERSAMPLE {
        for sx in 0..SUPERSAMPLE {
            let x = px as f64 + (sx as f64 + 0.5) * step;
            let y = py as f64 + (sy as f64 + 0.5) * step;
            hits += inside(x, y) as usize;
        }
    }
    hits as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64
}

/// One blob image and its tumor-load fraction.
fn render_blob_image<R: Rng>(cfg: &SyntheticConfig, rng: &mut R) -> (Vec<f64>, f64) {
    let side = cfg.image_side;
    let s = side as f64;
    let angle = rng.gen_range(0.0..std::f64::consts::PI);
    let organ = Ellipse {
        cx: s / 2.0 + rng.gen_range(-0.08..0.08) * s,
        cy: s / 2.0 + rng.gen_range(-0.08..0.08) * s,
        a: rng.gen_range(ORGAN_SEMI_MAJOR[0]..ORGAN_SEMI_MAJOR[1]) * s,
        b: rng.gen_range(ORGAN_SEMI_MINOR[0]..ORGAN_SEMI_MINOR[1]) * s,
        cos: angle.cos(),
        sin: angle.sin(),
    };
    let [kmin, kmax] = cfg.blob_count_range;
    let k = rng.gen_range(kmin..=kmax);
    let [rmin, rmax] = cfg.blob_radius_range;
    let blobs: Vec<(f64, f64, f64)> = (0..k)
        .map(|_| {
            let r = if rmax > rmin { rng.gen_range(rmin..=rmax) } else { rmin };
            // Centers are drawn inside the organ.
            loop {
                let x = rng.gen_range(organ.cx - organ.a..organ.cx + organ.a);
                let y = rng.gen_range(organ.cy - organ.a..organ.cy + organ.a);
                if organ.contains(x, y) {
                    break (x, y, r);
                }
            }
        })
        .collect();

    let mut pixels = vec![0.0; side * side];
    let (mut organ_area, mut blob_area) = (0.0, 0.0);
    for py in 0..side {
        for px in 0..side {
            let oc = coverage(px, py, |x, y| organ.contains(x, y));
            let bc = coverage(px, py, |x, y| {
                blobs
                    .iter()
                    .any(|&(bx, by, r)| (x - bx).powi(2) + (y - by).powi(2) <= r * r)
            });
            organ_area += oc;
            blob_area += bc;
            let v = ORGAN_INTENSITY * oc * (1.0 - bc) + BLOB_INTENSITY * bc;
            pixels[py * side + px] = v;
        }
    }
    for p in pixels.iter_mut() {
        let noisy = (*p + rng.gen_range(0.0..NOISE_MAX)).clamp(0.0, 1.0);
        // Stored as f32 on disk; keep the in-memory values identical.
        *p = noisy as f32 as f64;
    }
    (pixels, blob_area / organ_area)
}

/// Blob images with ground-truth hazards `h = a·(blob area / organ area)`.
pub fn generate_blob_dataset(cfg: &SyntheticConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let p = cfg.image_side * cfg.image_side;
    let mut images = Vec::with_capacity(cfg.n_samples * p);
    let mut loghazard = Vec::with_capacity(cfg.n_samples);
    for _ in 0..cfg.n_samples {
        let (img, load) = render_blob_image(cfg, &mut rng);
        images.extend(img);
        loghazard.push(cfg.hazard_slope * load);
    }
    let sim = simulate_survival(&loghazard, cfg.baseline_rate, cfg.censor_rate_target, &mut rng)?;
    Dataset::new(
        (0..cfg.n_samples as u64).collect(),
        Tensor::matrix(cfg.n_samples, p, images)?,
        cfg.image_side,
        sim.table,
        Some(loghazard),
    )
}

/// Digit log-hazards `spread·(label − 4.5)/4.5` with simulated survival.
pub fn assign_digit_hazards<R: Rng>(
    labels: &[u8],
    baseline_rate: f64,
    spread: f64,
    censor_target: f64,
    rng: &mut R,
) -> Result<(SurvivalTable, Vec<f64>)> {
    if let Some(l) = labels.iter().find(|&&l| l > 9) {
        return Err(Error::Validation(format!("digit label {l} outside 0-9")));
    }
    let loghazard: Vec<f64> = labels
        .iter()
        .map(|&l| spread * (l as f64 - 4.5) / 4.5)
        .collect();
    let sim = simulate_survival(&loghazard, baseline_rate, censor_target, rng)?;
    Ok((sim.table, loghazard))
}

/// Parameters for turning an IDX digit set into a survival dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DigitConfig {
    pub images: String,
    pub labels: String,
    #[serde(default = "default_spread")]
    pub spread: f64,
    #[serde(default)]
    pub limit: Option<usize>,
}

fn default_spread() -> f64 {
    2.0
}

/// Survival dataset from IDX image and label files.
pub fn digit_dataset(
    images: &IdxFile,
    labels: &IdxFile,
    spread: f64,
    limit: Option<usize>,
    baseline_rate: f64,
    censor_target: f64,
    seed: u64,
) -> Result<Dataset> {
    let (n_img, rows, cols, pixels) = images.images_unit()?;
    let all_labels = labels.labels()?;
    if rows != cols {
        return Err(Error::Format(format!("non-square {rows}x{cols} images")));
    }
    if all_labels.len() != n_img {
        return Err(Error::Format(format!(
            "{n_img} images but {} labels",
            all_labels.len()
        )));
    }
    let n = limit.map_or(n_img, |l| l.min(n_img));
    let p = rows * cols;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (table, h) = assign_digit_hazards(&all_labels[..n], baseline_rate, spread, censor_target, &mut rng)?;
    Dataset::new(
        (0..n as u64).collect(),
        Tensor::matrix(n, p, pixels[..n * p].to_vec())?,
        rows,
        table,
        Some(h),
    )
}

/// Raw IDX container: big-endian header, unsigned-byte payload.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxFile {
    pub magic: u32,
    pub dims: Vec<u32>,
    pub payload: Vec<u8>,
}

impl IdxFile {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let word = |off: usize| -> Result<u32> {
            bytes
                .get(off..off + 4)
                .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
                .ok_or_else(|| Error::Format(format!("IDX header truncated at byte offset {off}")))
        };
        let magic = word(0)?;
        let rank = match magic {
            IDX_IMAGES_MAGIC => 3,
            IDX_LABELS_MAGIC => 1,
            other => {
                return Err(Error::Format(format!(
                    "bad IDX magic {other:#010x} at byte offset 0"
                )))
            }
        };
        let dims = (0..rank).map(|i| word(4 + 4 * i)).collect::<Result<Vec<_>>>()?;
        let start = 4 + 4 * rank;
        let len: usize = dims.iter().map(|&d| d as usize).product();
        let payload = &bytes[start..];
        if payload.len() < len {
            return Err(Error::Format(format!(
                "IDX payload truncated at byte offset {}: expected {len} bytes after the header",
                bytes.len()
            )));
        }
        if payload.len() > len {
            return Err(Error::Format(format!(
                "unexpected trailing data at byte offset {}",
                start + len
            )));
        }
        Ok(Self {
            magic,
            dims,
            payload: payload.to_vec(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 4 * self.dims.len() + self.payload.len());
        out.extend_from_slice(&self.magic.to_be_bytes());
        for d in &self.dims {
            out.extend_from_slice(&d.to_be_bytes());
        }
        out.extend_from_slice(&self.payload);
        out
    }

    /// `(n, rows, cols, pixels in [0,1])` of an image file.
    pub fn images_unit(&self) -> Result<(usize, usize, usize, Vec<f64>)> {
        if self.magic != IDX_IMAGES_MAGIC {
            return Err(Error::Format("not an IDX image file".into()));
        }
        let [n, r, c] = [self.dims[0], self.dims[1], self.dims[2]].map(|d| d as usize);
        let px = self.payload.iter().map(|&b| (b as f32 / 255.0) as f64).collect();
        Ok((n, r, c, px))
    }

    pub fn labels(&self) -> Result<Vec<u8>> {
        if self.magic != IDX_LABELS_MAGIC {
            return Err(Error::Format("not an IDX label file".into()));
        }
        if let Some(pos) = self.payload.iter().position(|&l| l > 9) {
            return Err(Error::Format(format!(
                "label {} at byte offset {} is not a digit",
                self.payload[pos],
                8 + pos
            )));
        }
        Ok(self.payload.clone())
    }
}

pub fn load_idx(path: impl AsRef<Path>) -> Result<IdxFile> {
    IdxFile::parse(&fs::read(path)?)
}

pub fn write_idx(idx: &IdxFile, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, idx.to_bytes())?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct SurvivalRow {
    id: u64,
    time_days: f64,
    event: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    true_loghazard: Option<f64>,
}

/// Writes `images.svi` and `survival.csv` into `dir`, creating it if needed.
pub fn write_dataset(ds: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;

    let mut payload = Vec::with_capacity(ds.images.numel() * 4);
    for &v in ds.images.data() {
        payload.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let mut bytes = Vec::with_capacity(payload.len() + 20);
    bytes.extend_from_slice(SVI_MAGIC);
    bytes.extend_from_slice(&SVI_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(ds.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&(ds.side as u32).to_le_bytes());
    bytes.extend_from_slice(&payload);
    bytes.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    fs::write(dir.join(IMAGES_FILE), bytes)?;

    let mut out = Vec::new();
    {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(&mut out);
        let header: &[&str] = if ds.true_loghazard.is_some() {
            &["id", "time_days", "event", "true_loghazard"]
        } else {
            &["id", "time_days", "event"]
        };
        w.write_record(header)?;
        for i in 0..ds.len() {
            w.serialize(SurvivalRow {
                id: ds.ids[i],
                time_days: ds.table.time()[i],
                event: ds.table.event()[i] as u8,
                true_loghazard: ds.true_loghazard.as_ref().map(|h| h[i]),
            })?;
        }
        w.flush()?;
    }
    let mut f = fs::File::create(dir.join(SURVIVAL_FILE))?;
    f.write_all(&out)?;
    Ok(())
}

fn read_images(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let bytes = fs::read(path)?;
    let u32_at = |off: usize| -> Result<u32> {
        bytes
            .get(off..off + 4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
            .ok_or_else(|| Error::Format(format!("{} truncated at byte offset {off}", path.display())))
    };
    if bytes.get(..4) != Some(SVI_MAGIC.as_slice()) {
        return Err(Error::Format(format!("{} is not an SVIM file", path.display())));
    }
    let version = u32_at(4)?;
    if version != SVI_VERSION {
        return Err(Error::Format(format!(
            "{} has version {version}, expected {SVI_VERSION}",
            path.display()
        )));
    }
    let n = u32_at(8)? as usize;
    let side = u32_at(12)? as usize;
    let len = n * side * side * 4;
    if bytes.len() != 16 + len + 4 {
        return Err(Error::Format(format!(
            "{} holds {} bytes, expected {}",
            path.display(),
            bytes.len(),
            16 + len + 4
        )));
    }
    let payload = &bytes[16..16 + len];
    let stored = u32_at(16 + len)?;
    if crc32fast::hash(payload) != stored {
        return Err(Error::Format(format!("{} failed its checksum", path.display())));
    }
    let pixels = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
        .collect();
    Ok((n, side, pixels))
}

pub fn read_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let (n, side, pixels) = read_images(&dir.join(IMAGES_FILE))?;

    let mut rdr = csv::Reader::from_path(dir.join(SURVIVAL_FILE))?;
    let mut ids = Vec::with_capacity(n);
    let mut time = Vec::with_capacity(n);
    let mut event = Vec::with_capacity(n);
    let mut hazard: Vec<Option<f64>> = Vec::with_capacity(n);
    for (line, row) in rdr.deserialize::<SurvivalRow>().enumerate() {
        let row = row?;
        if !(row.time_days.is_finite() && row.time_days > 0.0) {
            return Err(Error::Validation(format!(
                "survival row {} has time {}",
                line + 1,
                row.time_days
            )));
        }
        if row.event > 1 {
            return Err(Error::Validation(format!(
                "survival row {} has event {}",
                line + 1,
                row.event
            )));
        }
        ids.push(row.id);
        time.push(row.time_days);
        event.push(row.event == 1);
        hazard.push(row.true_loghazard);
    }
    if ids.len() != n {
        return Err(Error::Validation(format!(
            "{n} images but {} survival rows",
            ids.len()
        )));
    }
    let true_loghazard = if hazard.iter().all(Option::is_some) {
        Some(hazard.into_iter().map(Option::unwrap).collect())
    } else {
        None
    };
    Dataset::new(
        ids,
        Tensor::matrix(n, side * side, pixels)?,
        side,
        SurvivalTable::new(time, event)?,
        true_loghazard,
    )
}

/// Deterministic shuffled `(train, val)` split.
pub fn split(ds: &Dataset, val_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::Config(format!(
            "val_fraction must lie in (0, 1), got {val_fraction}"
        )));
    }
    let n = ds.len();
    let n_val = (n as f64 * val_fraction).round() as usize;
    if n_val == 0 || n_val == n {
        return Err(Error::Config(format!(
            "val_fraction {val_fraction} leaves an empty side for {n} records"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (val, train) = order.split_at(n_val);
    Ok((ds.subset(train), ds.subset(val)))
}
