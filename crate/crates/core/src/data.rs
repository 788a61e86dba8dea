//! Point-set generators, IDX loading, stratified splitting and CSV persistence.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{RngState, Vector};

/// Labelled samples. Labels are class indices; [`LabeledDataset::one_hot`]
/// gives the probability-vector form used by the cost.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub name: String,
    pub seed: u64,
    pub dim: usize,
    pub classes: usize,
    pub samples: Vec<Vector>,
    pub labels: Vec<usize>,
}

impl LabeledDataset {
    /// Checks lengths, dimensions and label range.
    pub fn new(
        name: impl Into<String>,
        seed: u64,
        dim: usize,
        classes: usize,
        samples: Vec<Vector>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        if samples.len() != labels.len() {
            return Err(Error::MalformedData(format!(
                "{} samples but {} labels",
                samples.len(),
                labels.len()
            )));
        }
        if let Some(s) = samples.iter().find(|s| s.len() != dim) {
            return Err(Error::dims("sample dimension", dim, s.len()));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::MalformedData(format!("label {l} out of range for {classes} classes")));
        }
        Ok(LabeledDataset {
            name: name.into(),
            seed,
            dim,
            classes,
            samples,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn one_hot(&self, index: usize) -> Vector {
        let mut c = vec![0.0; self.classes];
        c[self.labels[index]] = 1.0;
        c
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// The samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            name: self.name.clone(),
            seed: self.seed,
            dim: self.dim,
            classes: self.classes,
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitDataset {
    pub train: LabeledDataset,
    pub val: LabeledDataset,
    pub ratio: f64,
}

/// Names accepted by [`gen_point_dataset`].
pub const POINT_DATASETS: [&str; 10] = [
    "donut_1d",
    "donut_2d",
    "squares_2d",
    "spiral",
    "donut_3d_2c",
    "donut_2d_6c",
    "donut_3d_3c",
    "donut_3d_6c",
    "squares_2d_4c",
    "squares_3d_4c",
];

/// Every generated coordinate lies in `[-BOX, BOX]`.
pub const BOX: f64 = 1.5;

pub const DONUT_1D_RADII: [f64; 2] = [0.5, 1.0];
/// Radial noise of `donut_1d`. The rings are 0.5 apart, so the Bayes accuracy
/// is `Φ(0.25 / σ)`, about 90%.
pub const DONUT_1D_NOISE: f64 = 0.19;
pub const DONUT_2D_BLOB_SD: f64 = 0.15;
pub const DONUT_2D_RING_RADIUS: f64 = 1.0;
pub const DONUT_2D_RING_NOISE: f64 = 0.08;
pub const SHELL_RADII: (f64, f64) = (0.3, 1.2);
pub const SHELL_NOISE: f64 = 0.06;
pub const SQUARES_JITTER: f64 = 0.05;
pub const SPIRAL_THETA: (f64, f64) = (0.3 * std::f64::consts::PI, 3.5 * std::f64::consts::PI);
pub const SPIRAL_NOISE: f64 = 0.02;

#[derive(Clone, Copy, Debug)]
enum Geometry {
    /// Concentric rings or shells, one per class.
    Shells { dim: usize, radii: &'static [f64], noise: f64 },
    /// Equally spaced shells over `SHELL_RADII`.
    EvenShells { dim: usize, classes: usize },
    BlobRing,
    Checkerboard,
    Quadrants { dim: usize },
    Spiral,
}

fn geometry(name: &str) -> Result<Geometry> {
    Ok(match name {
        "donut_1d" => Geometry::Shells {
            dim: 2,
            radii: &DONUT_1D_RADII,
            noise: DONUT_1D_NOISE,
        },
        "donut_2d" => Geometry::BlobRing,
        "squares_2d" => Geometry::Checkerboard,
        "spiral" => Geometry::Spiral,
        "donut_3d_2c" => Geometry::EvenShells { dim: 3, classes: 2 },
        "donut_2d_6c" => Geometry::EvenShells { dim: 2, classes: 6 },
        "donut_3d_3c" => Geometry::EvenShells { dim: 3, classes: 3 },
        "donut_3d_6c" => Geometry::EvenShells { dim: 3, classes: 6 },
        "squares_2d_4c" => Geometry::Quadrants { dim: 2 },
        "squares_3d_4c" => Geometry::Quadrants { dim: 3 },
        other => return Err(Error::UnknownDataset(other.to_string())),
    })
}

impl Geometry {
    fn dim(self) -> usize {
        match self {
            Geometry::Shells { dim, .. } | Geometry::EvenShells { dim, .. } | Geometry::Quadrants { dim } => dim,
            Geometry::BlobRing | Geometry::Checkerboard | Geometry::Spiral => 2,
        }
    }

    fn classes(self) -> usize {
        match self {
            Geometry::Shells { radii, .. } => radii.len(),
            Geometry::EvenShells { classes, .. } => classes,
            Geometry::Quadrants { .. } => 4,
            Geometry::BlobRing | Geometry::Checkerboard | Geometry::Spiral => 2,
        }
    }

    /// One draw of class `label`; may fall outside the box.
    fn draw(self, label: usize, rng: &mut RngState) -> Vector {
        match self {
            Geometry::Shells { dim, radii, noise } => shell_point(dim, radii[label], noise, rng),
            Geometry::EvenShells { dim, classes } => {
                shell_point(dim, even_radius(label, classes), SHELL_NOISE, rng)
            }
            Geometry::BlobRing => {
                if label == 0 {
                    vec![rng.normal(0.0, DONUT_2D_BLOB_SD), rng.normal(0.0, DONUT_2D_BLOB_SD)]
                } else {
                    shell_point(2, DONUT_2D_RING_RADIUS, DONUT_2D_RING_NOISE, rng)
                }
            }
            Geometry::Checkerboard => loop {
                let x = rng.uniform(-1.0, 1.0);
                let y = rng.uniform(-1.0, 1.0);
                if usize::from((x > 0.0) != (y > 0.0)) == label {
                    break jitter(vec![x, y], rng);
                }
            },
            Geometry::Quadrants { dim } => {
                // Bit 0: sign of x, bit 1: sign of y. Other axes are free.
                let sign = |bit: usize| if label >> bit & 1 == 1 { 1.0 } else { -1.0 };
                let mut p: Vector = (0..dim).map(|_| rng.uniform(0.0, 1.0)).collect();
                p[0] *= sign(0);
                p[1] *= sign(1);
                for v in p.iter_mut().skip(2) {
                    *v = 2.0 * *v - 1.0;
                }
                jitter(p, rng)
            }
            Geometry::Spiral => {
                let theta = rng.uniform(SPIRAL_THETA.0, SPIRAL_THETA.1);
                let r = theta / SPIRAL_THETA.1;
                let phase = if label == 0 { 0.0 } else { std::f64::consts::PI };
                vec![
                    r * (theta + phase).cos() + rng.normal(0.0, SPIRAL_NOISE),
                    r * (theta + phase).sin() + rng.normal(0.0, SPIRAL_NOISE),
                ]
            }
        }
    }
}

/// Radius of ring `k` of `classes` rings equally spaced over `SHELL_RADII`.
pub fn even_radius(k: usize, classes: usize) -> f64 {
    let (lo, hi) = SHELL_RADII;
    if classes == 1 {
        return lo;
    }
    lo + (hi - lo) * k as f64 / (classes - 1) as f64
}

fn jitter(mut p: Vector, rng: &mut RngState) -> Vector {
    for v in p.iter_mut() {
        *v += rng.normal(0.0, SQUARES_JITTER);
    }
    p
}

/// Uniform direction, radius `r + N(0, noise²)`.
fn shell_point(dim: usize, r: f64, noise: f64, rng: &mut RngState) -> Vector {
    let dir = loop {
        let v: Vector = (0..dim).map(|_| rng.normal(0.0, 1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            break v.into_iter().map(|x| x / norm).collect::<Vector>();
        }
    };
    let radius = r + rng.normal(0.0, noise);
    dir.into_iter().map(|x| radius * x).collect()
}

/// Generates `n` labelled points of the named set.
///
/// Sample `i` belongs to class `i mod C`, so class counts differ by at most
/// one. Draws outside `[-1.5, 1.5]^d` are rejected and redrawn.
pub fn gen_point_dataset(name: &str, n: usize, seed: u64) -> Result<LabeledDataset> {
    let geo = geometry(name)?;
    let classes = geo.classes();
    if n < classes {
        return Err(Error::InvalidConfig(format!(
            "{name} has {classes} classes; need at least that many samples, got {n}"
        )));
    }
    let mut rng = RngState::new(seed);
    let mut samples = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % classes;
        let p = loop {
            let p = geo.draw(label, &mut rng);
            if p.iter().all(|v| v.abs() <= BOX) {
                break p;
            }
        };
        samples.push(p);
        labels.push(label);
    }
    LabeledDataset::new(name, seed, geo.dim(), classes, samples, labels)
}

/// Stratified seeded split.
///
/// Each class is shuffled and cut at its share of `round(ratio · n)` train
/// samples, allotted by largest remainder so the total is exact and every
/// class fraction is as close to `ratio` as the counts allow. Both parts are
/// then shuffled.
pub fn split(ds: &LabeledDataset, ratio: f64, seed: u64) -> Result<SplitDataset> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidConfig(format!("split ratio must lie in (0, 1), got {ratio}")));
    }
    let mut rng = RngState::new(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.classes];
    for (i, &l) in ds.labels.iter().enumerate() {
        by_class[l].push(i);
    }
    for members in &mut by_class {
        rng.shuffle(members);
    }

    let target = (ratio * ds.len() as f64).round() as usize;
    let exact: Vec<f64> = by_class.iter().map(|m| ratio * m.len() as f64).collect();
    let mut take: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..ds.classes).collect();
    // Stable sort: ties keep class order.
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut remaining = target.saturating_sub(take.iter().sum());
    for &c in order.iter().cycle().take(ds.classes * 2) {
        if remaining == 0 {
            break;
        }
        if take[c] < by_class[c].len() {
            take[c] += 1;
            remaining -= 1;
        }
    }

    let mut train = Vec::with_capacity(target);
    let mut val = Vec::with_capacity(ds.len() - target);
    for (members, &k) in by_class.iter().zip(&take) {
        train.extend_from_slice(&members[..k]);
        val.extend_from_slice(&members[k..]);
    }
    rng.shuffle(&mut train);
    rng.shuffle(&mut val);
    Ok(SplitDataset {
        train: ds.subset(&train),
        val: ds.subset(&val),
        ratio,
    })
}

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn idx_error(path: &Path, reason: impl Into<String>) -> Error {
    Error::Idx {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn read_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| idx_error(path, "truncated header"))
}

/// Raw IDX images: `(count, rows, cols, pixels)`.
fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let magic = read_u32(bytes, 0, path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(idx_error(path, format!("bad magic number {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}")));
    }
    let count = read_u32(bytes, 4, path)? as usize;
    let rows = read_u32(bytes, 8, path)? as usize;
    let cols = read_u32(bytes, 12, path)? as usize;
    let needed = count * rows * cols;
    let payload = &bytes[16..];
    if payload.len() < needed {
        return Err(idx_error(
            path,
            format!("truncated file: {} payload bytes, expected {needed}", payload.len()),
        ));
    }
    Ok((count, rows, cols, payload[..needed].to_vec()))
}

fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    let magic = read_u32(bytes, 0, path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(idx_error(path, format!("bad magic number {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}")));
    }
    let count = read_u32(bytes, 4, path)? as usize;
    let payload = &bytes[8..];
    if payload.len() < count {
        return Err(idx_error(
            path,
            format!("truncated file: {} labels, expected {count}", payload.len()),
        ));
    }
    Ok(payload[..count].to_vec())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Images of an IDX file, each flattened row-major and scaled to `[0, 1]`.
pub fn load_idx_images(path: impl AsRef<Path>) -> Result<Vec<Vector>> {
    let path = path.as_ref();
    let (count, rows, cols, pixels) = parse_idx_images(&read(path)?, path)?;
    let size = rows * cols;
    Ok((0..count)
        .map(|i| pixels[i * size..(i + 1) * size].iter().map(|&p| f64::from(p) / 255.0).collect())
        .collect())
}

pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    Ok(parse_idx_labels(&read(path)?, path)?.into_iter().map(usize::from).collect())
}

/// An image file paired with its label file, 10 classes. `limit` keeps only
/// the first images.
pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>, limit: Option<usize>) -> Result<LabeledDataset> {
    let mut samples = load_idx_images(images.as_ref())?;
    let mut labels_v = load_idx_labels(labels.as_ref())?;
    if samples.len() != labels_v.len() {
        return Err(idx_error(
            labels.as_ref(),
            format!("count mismatch: {} images but {} labels", samples.len(), labels_v.len()),
        ));
    }
    if let Some(n) = limit {
        samples.truncate(n);
        labels_v.truncate(n);
    }
    let dim = samples.first().map_or(0, Vec::len);
    let name = images
        .as_ref()
        .file_stem()
        .map_or_else(|| "idx".to_string(), |s| s.to_string_lossy().into_owned());
    LabeledDataset::new(name, 0, dim, 10, samples, labels_v)
}

/// Writes an IDX image file. Pixels must already be bytes.
pub fn write_idx_images(path: impl AsRef<Path>, rows: usize, cols: usize, images: &[Vec<u8>]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    for v in [IDX_IMAGES_MAGIC, images.len() as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    for img in images {
        if img.len() != rows * cols {
            return Err(Error::dims("IDX image size", rows * cols, img.len()));
        }
        out.extend_from_slice(img);
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_idx_labels(path: impl AsRef<Path>, labels: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Header `dim=<d>,classes=<C>,name=<name>,seed=<seed>`, then one row
/// `x1,…,xd,label` per sample. Floats use the shortest round-trip form.
pub fn save_csv(ds: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    let _ = writeln!(out, "dim={},classes={},name={},seed={}", ds.dim, ds.classes, ds.name, ds.seed);
    for (s, l) in ds.samples.iter().zip(&ds.labels) {
        for x in s {
            let _ = write!(out, "{x:?},");
        }
        let _ = writeln!(out, "{l}");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::MalformedData("missing header".into()))?;
    let (mut dim, mut classes, mut name, mut seed) = (None, None, None, 0u64);
    for field in header.split(',') {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| Error::MalformedData(format!("bad header field '{field}'")))?;
        let bad = || Error::MalformedData(format!("bad header value '{field}'"));
        match key.trim() {
            "dim" => dim = Some(value.trim().parse::<usize>().map_err(|_| bad())?),
            "classes" => classes = Some(value.trim().parse::<usize>().map_err(|_| bad())?),
            "name" => name = Some(value.trim().to_string()),
            "seed" => seed = value.trim().parse().map_err(|_| bad())?,
            _ => {}
        }
    }
    let dim = dim.ok_or_else(|| Error::MalformedData("header lacks dim=".into()))?;
    let classes = classes.ok_or_else(|| Error::MalformedData("header lacks classes=".into()))?;
    let name = name.unwrap_or_else(|| {
        path.file_stem()
            .map_or_else(|| "csv".to_string(), |s| s.to_string_lossy().into_owned())
    });

    let mut samples = Vec::new();
    let mut labels = Vec::new();
    for (lineno, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let row = lineno + 2;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 1 {
            return Err(Error::MalformedData(format!(
                "row {row}: {} fields, expected {}",
                fields.len(),
                dim + 1
            )));
        }
        let x = fields[..dim]
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vector, _>>()
            .map_err(|e| Error::MalformedData(format!("row {row}: {e}")))?;
        let label = fields[dim]
            .trim()
            .parse::<usize>()
            .map_err(|e| Error::MalformedData(format!("row {row}: label: {e}")))?;
        samples.push(x);
        labels.push(label);
    }
    LabeledDataset::new(name, seed, dim, classes, samples, labels)
}
