//! Accuracy, confusion, PCA of hidden features and static SVG figures.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{check_dim, Error, Result};
use crate::network::{augment_batch, propagate, ModelParams};
use crate::numerics::{dot, gemm, matvec, Matrix, RngState, Transpose, Vector};
use crate::training::{argmax, evaluate, EpochMetrics};

/// Predicted class of every sample, evaluated in chunks of `chunk` rows.
pub fn predict(model: &ModelParams, samples: &[Vector], chunk: usize) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(samples.len());
    for part in samples.chunks(chunk.max(1)) {
        let y = propagate(model, &augment_batch(part, model.width())?)?;
        let mut z = Matrix::zeros(y.rows(), model.head.classes());
        gemm(1.0, &y, Transpose::No, &model.head.w, Transpose::Yes, 0.0, &mut z)?;
        z.add_row_vector(&model.head.mu)?;
        out.extend(z.row_iter().map(argmax));
    }
    Ok(out)
}

/// Percentage of correctly classified samples.
pub fn accuracy(model: &ModelParams, ds: &LabeledDataset) -> Result<f64> {
    Ok(evaluate(model, ds, 256)?.0)
}

/// `counts[true][predicted]`.
pub fn confusion(model: &ModelParams, ds: &LabeledDataset) -> Result<Vec<Vec<usize>>> {
    check_dim("dataset dimension", model.spec.input_dim, ds.dim)?;
    let mut counts = vec![vec![0; ds.classes.max(model.spec.classes)]; ds.classes];
    for (p, &t) in predict(model, &ds.samples, 256)?.into_iter().zip(&ds.labels) {
        counts[t][p] += 1;
    }
    Ok(counts)
}

/// Final features `y^[L]` of every sample, one row each.
pub fn final_features(model: &ModelParams, samples: &[Vector]) -> Result<Vec<Vector>> {
    let mut out = Vec::with_capacity(samples.len());
    for part in samples.chunks(256) {
        let y = propagate(model, &augment_batch(part, model.width())?)?;
        out.extend(y.row_iter().map(<[f64]>::to_vec));
    }
    Ok(out)
}

pub const PCA_TOLERANCE: f64 = 1e-10;
pub const PCA_MAX_ITERATIONS: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vector,
    /// `k × d`, orthonormal rows.
    pub components: Matrix,
    /// Nonincreasing.
    pub explained_variance: Vector,
    /// `filled[i]` marks a component taken from the orthogonal complement
    /// because the data had no variance left.
    pub filled: Vec<bool>,
}

impl PcaModel {
    pub fn k(&self) -> usize {
        self.components.rows()
    }
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

fn orthogonalize(v: &mut [f64], against: &[Vector]) {
    for u in against {
        let p = dot(v, u);
        v.iter_mut().zip(u).for_each(|(x, y)| *x -= p * y);
    }
}

/// First nonzero entry positive.
fn fix_sign(v: &mut [f64]) {
    if let Some(&first) = v.iter().find(|x| x.abs() > 1e-12) {
        if first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Top-`k` principal directions of `features` by power iteration with
/// deflation. Uses the unbiased sample covariance.
pub fn pca_fit<R: AsRef<[f64]>>(features: &[R], k: usize) -> Result<PcaModel> {
    let n = features.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let d = features[0].as_ref().len();
    if k > d {
        return Err(Error::InvalidConfig(format!("cannot extract {k} components from dimension {d}")));
    }
    let mut mean = vec![0.0; d];
    for f in features {
        check_dim("PCA feature", d, f.as_ref().len())?;
        mean.iter_mut().zip(f.as_ref()).for_each(|(m, x)| *m += x / n as f64);
    }
    let mut centered = Matrix::zeros(n, d);
    for (i, f) in features.iter().enumerate() {
        centered
            .row_mut(i)
            .iter_mut()
            .zip(f.as_ref().iter().zip(&mean))
            .for_each(|(c, (x, m))| *c = x - m);
    }
    let mut cov = Matrix::zeros(d, d);
    gemm(
        1.0 / (n.max(2) - 1) as f64,
        &centered,
        Transpose::Yes,
        &centered,
        Transpose::No,
        0.0,
        &mut cov,
    )?;
    let scale = (0..d).map(|i| cov.get(i, i)).sum::<f64>().max(f64::MIN_POSITIVE);

    let mut rng = RngState::new(0x5eed_0f_9ca);
    let mut comps: Vec<Vector> = Vec::with_capacity(k);
    let mut variances = Vec::with_capacity(k);
    let mut filled = Vec::with_capacity(k);
    for _ in 0..k {
        let mut v: Vector = (0..d).map(|_| rng.uniform(-1.0, 1.0)).collect();
        orthogonalize(&mut v, &comps);
        normalize(&mut v);
        let mut lambda = 0.0;
        for _ in 0..PCA_MAX_ITERATIONS {
            let mut w = matvec(&cov, &v)?;
            orthogonalize(&mut w, &comps);
            lambda = normalize(&mut w);
            if lambda <= 1e-13 * scale {
                lambda = 0.0;
                break;
            }
            let diff = v.iter().zip(&w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            v = w;
            if diff <= PCA_TOLERANCE {
                break;
            }
        }
        if lambda == 0.0 {
            // No variance left: complete the basis with standard vectors.
            let basis = (0..d)
                .map(|j| {
                    let mut e = vec![0.0; d];
                    e[j] = 1.0;
                    orthogonalize(&mut e, &comps);
                    orthogonalize(&mut e, &comps);
                    e
                })
                .max_by(|a, b| dot(a, a).total_cmp(&dot(b, b)))
                .unwrap_or_default();
            v = basis;
            normalize(&mut v);
            filled.push(true);
            variances.push(0.0);
        } else {
            let cv = matvec(&cov, &v)?;
            variances.push(dot(&v, &cv));
            filled.push(false);
        }
        fix_sign(&mut v);
        comps.push(v);
    }
    Ok(PcaModel {
        mean,
        components: Matrix::from_rows(&comps).unwrap_or_else(|_| Matrix::zeros(0, d)),
        explained_variance: variances,
        filled,
    })
}

/// Coordinates of `v − mean` along the components.
pub fn pca_project(pm: &PcaModel, v: &[f64]) -> Result<Vector> {
    check_dim("PCA projection", pm.mean.len(), v.len())?;
    let centered: Vector = v.iter().zip(&pm.mean).map(|(x, m)| x - m).collect();
    if pm.k() == 0 {
        return Ok(Vec::new());
    }
    matvec(&pm.components, &centered)
}

/// Axis-aligned rectangle `[x_min, x_max] × [y_min, y_max]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Bounds {
    pub fn square(half: f64) -> Self {
        Bounds {
            x_min: -half,
            x_max: half,
            y_min: -half,
            y_max: half,
        }
    }

    /// Smallest box holding all points, padded by 5%; `[-1, 1]²` if empty.
    pub fn around<'a>(points: impl IntoIterator<Item = &'a [f64; 2]>) -> Self {
        let mut b = Bounds {
            x_min: f64::INFINITY,
            x_max: f64::NEG_INFINITY,
            y_min: f64::INFINITY,
            y_max: f64::NEG_INFINITY,
        };
        for p in points {
            b.x_min = b.x_min.min(p[0]);
            b.x_max = b.x_max.max(p[0]);
            b.y_min = b.y_min.min(p[1]);
            b.y_max = b.y_max.max(p[1]);
        }
        if !b.x_min.is_finite() {
            return Bounds::square(1.0);
        }
        let pad_x = ((b.x_max - b.x_min) * 0.05).max(1e-3);
        let pad_y = ((b.y_max - b.y_min) * 0.05).max(1e-3);
        Bounds {
            x_min: b.x_min - pad_x,
            x_max: b.x_max + pad_x,
            y_min: b.y_min - pad_y,
            y_max: b.y_max + pad_y,
        }
    }
}

/// Predicted class at the centre of every cell of a regular grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionGrid {
    pub bounds: Bounds,
    pub nx: usize,
    pub ny: usize,
    /// Row-major from the bottom-left cell: index `iy * nx + ix`.
    pub cells: Vec<usize>,
}

impl PredictionGrid {
    pub fn cell_center(&self, ix: usize, iy: usize) -> [f64; 2] {
        let b = &self.bounds;
        [
            b.x_min + (ix as f64 + 0.5) * (b.x_max - b.x_min) / self.nx as f64,
            b.y_min + (iy as f64 + 0.5) * (b.y_max - b.y_min) / self.ny as f64,
        ]
    }

    pub fn class_at(&self, ix: usize, iy: usize) -> usize {
        self.cells[iy * self.nx + ix]
    }

    /// Class of the cell containing `p`, if inside.
    pub fn class_of_point(&self, p: [f64; 2]) -> Option<usize> {
        let b = &self.bounds;
        let fx = (p[0] - b.x_min) / (b.x_max - b.x_min);
        let fy = (p[1] - b.y_min) / (b.y_max - b.y_min);
        if !(0.0..=1.0).contains(&fx) || !(0.0..=1.0).contains(&fy) {
            return None;
        }
        let ix = ((fx * self.nx as f64) as usize).min(self.nx - 1);
        let iy = ((fy * self.ny as f64) as usize).min(self.ny - 1);
        Some(self.class_at(ix, iy))
    }
}

pub fn prediction_grid(model: &ModelParams, bounds: Bounds, nx: usize, ny: usize) -> Result<PredictionGrid> {
    if model.spec.input_dim != 2 {
        return Err(Error::InvalidConfig(format!(
            "prediction grids need two-dimensional inputs, model takes {}",
            model.spec.input_dim
        )));
    }
    if nx == 0 || ny == 0 {
        return Err(Error::InvalidConfig("grid resolution must be positive".into()));
    }
    let mut grid = PredictionGrid {
        bounds,
        nx,
        ny,
        cells: Vec::new(),
    };
    let centers: Vec<Vector> = (0..ny)
        .flat_map(|iy| (0..nx).map(move |ix| (ix, iy)))
        .map(|(ix, iy)| grid.cell_center(ix, iy).to_vec())
        .collect();
    grid.cells = predict(model, &centers, 512)?;
    Ok(grid)
}

/// Payload of one figure. The variant decides the figure kind.
#[derive(Clone, Debug, PartialEq)]
pub enum Figure {
    Scatter2d {
        points: Vec<[f64; 2]>,
        labels: Vec<usize>,
    },
    /// Points in three dimensions, drawn through a fixed orthographic camera.
    Scatter3dProjected {
        points: Vec<[f64; 3]>,
        labels: Vec<usize>,
    },
    /// One polyline per sample plus a dot at its start.
    Trajectories {
        paths: Vec<Vec<[f64; 2]>>,
        labels: Vec<usize>,
    },
    Prediction {
        grid: PredictionGrid,
        points: Vec<[f64; 2]>,
        labels: Vec<usize>,
    },
    /// Training series dotted, validation series solid.
    Convergence {
        metric: String,
        epochs: Vec<f64>,
        train: Vec<f64>,
        val: Vec<f64>,
    },
}

impl Figure {
    pub fn kind(&self) -> &'static str {
        match self {
            Figure::Scatter2d { .. } => "scatter2d",
            Figure::Scatter3dProjected { .. } => "scatter3d-projected",
            Figure::Trajectories { .. } => "trajectories",
            Figure::Prediction { .. } => "prediction",
            Figure::Convergence { .. } => "convergence",
        }
    }
}

/// `<run_dir>/<kind>-<tag>.svg`.
pub fn figure_path(run_dir: impl AsRef<Path>, kind: &str, tag: &str) -> PathBuf {
    run_dir.as_ref().join(format!("{kind}-{tag}.svg"))
}

/// Accuracy and cost convergence figures of one run.
pub fn convergence_figures(rows: &[EpochMetrics]) -> [Figure; 2] {
    let epochs: Vec<f64> = rows.iter().map(|r| r.epoch as f64).collect();
    [
        Figure::Convergence {
            metric: "accuracy".into(),
            epochs: epochs.clone(),
            train: rows.iter().map(|r| r.train_acc).collect(),
            val: rows.iter().map(|r| r.val_acc).collect(),
        },
        Figure::Convergence {
            metric: "cost".into(),
            epochs,
            train: rows.iter().map(|r| r.train_cost).collect(),
            val: rows.iter().map(|r| r.val_cost).collect(),
        },
    ]
}

/// Camera azimuth and elevation of 3D scatter plots, radians.
const CAMERA: (f64, f64) = (0.6, 0.35);

/// Orthographic view of `p` from the fixed camera.
pub fn camera_project(p: [f64; 3]) -> [f64; 2] {
    let (az, el) = CAMERA;
    let x = p[0] * az.cos() - p[1] * az.sin();
    let depth = p[0] * az.sin() + p[1] * az.cos();
    [x, p[2] * el.cos() - depth * el.sin()]
}

const SIZE: f64 = 400.0;
const MARGIN: f64 = 40.0;
const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];
const LIGHT: [&str; 10] = [
    "#c6dbef", "#f4c2c2", "#c7e9c0", "#fdd9b5", "#dadaeb", "#e0cfc9", "#f6d2e8", "#e0e0e0", "#ecedc0", "#c2ecf1",
];

fn color(k: usize) -> &'static str {
    PALETTE[k % PALETTE.len()]
}

struct Frame {
    b: Bounds,
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        MARGIN + (v - self.b.x_min) / (self.b.x_max - self.b.x_min) * (SIZE - 2.0 * MARGIN)
    }

    fn y(&self, v: f64) -> f64 {
        SIZE - MARGIN - (v - self.b.y_min) / (self.b.y_max - self.b.y_min) * (SIZE - 2.0 * MARGIN)
    }
}

fn open(out: &mut String, title: &str) {
    let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(out, "<title>{title}</title>");
    let _ = writeln!(out, r#"<rect width="{SIZE}" height="{SIZE}" fill="white"/>"#);
}

fn axes(out: &mut String, f: &Frame) {
    let (lo, hi) = (MARGIN, SIZE - MARGIN);
    let _ = writeln!(
        out,
        r#"<g stroke="black" stroke-width="1"><line x1="{lo}" y1="{hi}" x2="{hi}" y2="{hi}"/><line x1="{lo}" y1="{hi}" x2="{lo}" y2="{lo}"/></g>"#
    );
    let _ = writeln!(
        out,
        r#"<g font-family="sans-serif" font-size="10"><text x="{lo}" y="{:.2}">{:.3}</text><text x="{:.2}" y="{:.2}" text-anchor="end">{:.3}</text><text x="{:.2}" y="{:.2}" text-anchor="end">{:.3}</text><text x="{:.2}" y="{lo}" text-anchor="end">{:.3}</text></g>"#,
        hi + 14.0,
        f.b.x_min,
        hi,
        hi + 14.0,
        f.b.x_max,
        lo - 4.0,
        hi,
        f.b.y_min,
        lo - 4.0,
        f.b.y_max,
    );
}

fn dots(out: &mut String, f: &Frame, points: &[[f64; 2]], labels: &[usize], r: f64) {
    out.push_str("<g stroke=\"none\">\n");
    for (p, &l) in points.iter().zip(labels) {
        let _ = writeln!(
            out,
            r#"<circle cx="{:.2}" cy="{:.2}" r="{r}" fill="{}"/>"#,
            f.x(p[0]),
            f.y(p[1]),
            color(l)
        );
    }
    out.push_str("</g>\n");
}

fn polyline(out: &mut String, f: &Frame, pts: impl Iterator<Item = [f64; 2]>, stroke: &str, dashed: bool) {
    let coords: Vec<String> = pts.map(|p| format!("{:.2},{:.2}", f.x(p[0]), f.y(p[1]))).collect();
    let dash = if dashed { r#" stroke-dasharray="3,3""# } else { "" };
    let _ = writeln!(
        out,
        r#"<polyline fill="none" stroke="{stroke}" stroke-width="1.2"{dash} points="{}"/>"#,
        coords.join(" ")
    );
}

/// Renders `fig` as a standalone SVG document. Identical payloads give
/// identical bytes.
pub fn render_svg(fig: &Figure) -> String {
    let mut out = String::new();
    match fig {
        Figure::Scatter2d { points, labels } => {
            let f = Frame { b: Bounds::around(points) };
            open(&mut out, "scatter2d");
            axes(&mut out, &f);
            dots(&mut out, &f, points, labels, 2.0);
        }
        Figure::Scatter3dProjected { points, labels } => {
            let flat: Vec<[f64; 2]> = points.iter().map(|&p| camera_project(p)).collect();
            let f = Frame { b: Bounds::around(&flat) };
            open(&mut out, "scatter3d-projected");
            axes(&mut out, &f);
            dots(&mut out, &f, &flat, labels, 2.0);
        }
        Figure::Trajectories { paths, labels } => {
            let f = Frame {
                b: Bounds::around(paths.iter().flatten()),
            };
            open(&mut out, "trajectories");
            axes(&mut out, &f);
            for (path, &l) in paths.iter().zip(labels) {
                polyline(&mut out, &f, path.iter().copied(), color(l), false);
            }
            let starts: Vec<[f64; 2]> = paths.iter().filter_map(|p| p.first().copied()).collect();
            dots(&mut out, &f, &starts, labels, 1.5);
        }
        Figure::Prediction { grid, points, labels } => {
            let f = Frame { b: grid.bounds };
            open(&mut out, "prediction");
            let w = (SIZE - 2.0 * MARGIN) / grid.nx as f64;
            let h = (SIZE - 2.0 * MARGIN) / grid.ny as f64;
            out.push_str("<g stroke=\"none\">\n");
            for iy in 0..grid.ny {
                for ix in 0..grid.nx {
                    let _ = writeln!(
                        out,
                        r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                        MARGIN + ix as f64 * w,
                        SIZE - MARGIN - (iy + 1) as f64 * h,
                        w + 0.01,
                        h + 0.01,
                        LIGHT[grid.class_at(ix, iy) % LIGHT.len()]
                    );
                }
            }
            out.push_str("</g>\n");
            axes(&mut out, &f);
            dots(&mut out, &f, points, labels, 2.0);
        }
        Figure::Convergence {
            metric,
            epochs,
            train,
            val,
        } => {
            let pts = |ys: &[f64]| -> Vec<[f64; 2]> { epochs.iter().zip(ys).map(|(&x, &y)| [x, y]).collect() };
            let (tp, vp) = (pts(train), pts(val));
            let f = Frame {
                b: Bounds::around(tp.iter().chain(&vp)),
            };
            open(&mut out, &format!("convergence ({metric})"));
            axes(&mut out, &f);
            polyline(&mut out, &f, tp.into_iter(), color(0), true);
            polyline(&mut out, &f, vp.into_iter(), color(0), false);
        }
    }
    out.push_str("</svg>\n");
    out
}

pub fn emit_svg(fig: &Figure, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, render_svg(fig)).map_err(|e| Error::io(path, e))
}

/// First two coordinates, or the top-two PCA coordinates when `pca` is given.
pub fn plane_points(points: &[Vector], pca: Option<&PcaModel>) -> Result<Vec<[f64; 2]>> {
    points
        .iter()
        .map(|p| {
            let q = match pca {
                Some(pm) => pca_project(pm, p)?,
                None => p.clone(),
            };
            Ok([q.first().copied().unwrap_or(0.0), q.get(1).copied().unwrap_or(0.0)])
        })
        .collect()
}
