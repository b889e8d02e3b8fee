//! From network outputs to labeled waypoints: cell decoding, confidence
//! thresholding, greedy suppression, latent gathering and spherical 2-means.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autograd::{Scalar, Tensor};
use crate::model::{decode_cell, Model, ModelError};
use crate::types::{Cluster, OccupancyGrid, Point, Waypoint, WaypointSet};

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("invalid decode config: {0}")]
    Config(String),
    #[error("clustering needs at least two features, got {0}")]
    TooFew(usize),
    #[error("feature {0} has zero norm")]
    ZeroVector(usize),
    #[error("point ({x}, {y}) lies outside the {cols}x{rows} cell map")]
    OutOfBounds { x: f64, y: f64, rows: usize, cols: usize },
    #[error("expected a rank-3 map with {expected} channels, got shape {got:?}")]
    MapShape { expected: usize, got: Vec<usize> },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    /// Confidence threshold on the cell probability.
    pub t_p: f64,
    /// Suppression radius in pixels.
    pub t_sup: f64,
    pub kmeans_iters: usize,
    /// Cell size of the output maps.
    pub k: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            t_p: 0.4,
            t_sup: 8.0,
            kmeans_iters: 100,
            k: 8,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<(), InferenceError> {
        if !(self.t_p > 0.0 && self.t_p < 1.0) {
            return Err(InferenceError::Config(format!("t_p must lie in (0, 1), got {}", self.t_p)));
        }
        if !(self.t_sup > 0.0) {
            return Err(InferenceError::Config(format!("t_sup must be positive, got {}", self.t_sup)));
        }
        if self.k == 0 {
            return Err(InferenceError::Config("cell size must be positive".into()));
        }
        Ok(())
    }
}

/// A cell whose probability passed the threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub position: Point,
    pub confidence: f64,
    /// `(row, col)` of the source cell.
    pub cell: (usize, usize),
    /// Clustering feature, empty until gathered.
    pub latent: Vec<f64>,
}

fn map_dims<T: Scalar>(map: &Tensor<T>, channels: Option<usize>) -> Result<(usize, usize, usize), InferenceError> {
    match map.shape() {
        &[r, c, ch] if channels.is_none_or(|e| e == ch) => Ok((r, c, ch)),
        got => Err(InferenceError::MapShape {
            expected: channels.unwrap_or(0),
            got: got.to_vec(),
        }),
    }
}

/// One candidate per cell with `p >= t_p`, in row-major cell order.
pub fn decode_waypoints<T: Scalar>(est: &Tensor<T>, k: usize, t_p: f64) -> Result<Vec<Candidate>, InferenceError> {
    let (rows, cols, _) = map_dims(est, Some(3))?;
    let data = est.data();
    let mut out = Vec::new();
    for row in 0..rows {
        for col in 0..cols {
            let v = &data[(row * cols + col) * 3..][..3];
            let p = v[0].as_f64();
            if p >= t_p {
                out.push(Candidate {
                    position: decode_cell(row, col, v[1].as_f64(), v[2].as_f64(), k),
                    confidence: p,
                    cell: (row, col),
                    latent: Vec::new(),
                });
            }
        }
    }
    Ok(out)
}

/// Greedy non-maximum suppression: highest confidence first, ties broken by
/// `(y, x)` ascending; a candidate survives when no survivor lies within `t_sup`.
/// Survivors keep acceptance order and are provisionally labeled A.
pub fn suppress(candidates: &[Candidate], t_sup: f64) -> WaypointSet {
    let mut order: Vec<&Candidate> = candidates.iter().collect();
    order.sort_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then(a.position.y.total_cmp(&b.position.y))
            .then(a.position.x.total_cmp(&b.position.x))
    });
    let mut kept: Vec<Waypoint> = Vec::new();
    for c in order {
        if kept.iter().all(|w| w.point().dist(c.position) > t_sup) {
            kept.push(Waypoint {
                confidence: Some(c.confidence),
                ..Waypoint::new(c.position, Cluster::A)
            });
        }
    }
    WaypointSet::new(kept)
}

/// Feature of the cell `floor(p / k)` under each point.
pub fn gather_latent<T: Scalar>(latent: &Tensor<T>, points: &[Point], k: usize) -> Result<Vec<Vec<f64>>, InferenceError> {
    let (rows, cols, d) = map_dims(latent, None)?;
    let kf = k as f64;
    points
        .iter()
        .map(|p| {
            let (r, c) = ((p.y / kf).floor(), (p.x / kf).floor());
            if !(r >= 0.0 && c >= 0.0 && (r as usize) < rows && (c as usize) < cols) {
                return Err(InferenceError::OutOfBounds { x: p.x, y: p.y, rows, cols });
            }
            let at = (r as usize * cols + c as usize) * d;
            Ok(latent.data()[at..at + d].iter().map(|v| v.as_f64()).collect())
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Clustering {
    pub labels: Vec<Cluster>,
    /// Every point landed in one cluster.
    pub degenerate: bool,
    pub iterations: usize,
}

fn unit(v: &[f64], index: usize) -> Result<Vec<f64>, InferenceError> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return Err(InferenceError::ZeroVector(index));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Spherical 2-means. Features are normalized first; the centroids start at the
/// pair with the lowest cosine similarity (first such pair in index order) and
/// Lloyd steps run until the labels stop changing or `iters` is reached.
/// A point equally close to both centroids goes to A.
pub fn cluster_latent(features: &[Vec<f64>], iters: usize) -> Result<Clustering, InferenceError> {
    if features.len() < 2 {
        return Err(InferenceError::TooFew(features.len()));
    }
    let x: Vec<Vec<f64>> = features.iter().enumerate().map(|(i, f)| unit(f, i)).collect::<Result<_, _>>()?;
    let (mut ia, mut ib, mut best) = (0, 1, f64::INFINITY);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let s = dot(&x[i], &x[j]);
            if s < best {
                (ia, ib, best) = (i, j, s);
            }
        }
    }
    let mut centroids = [x[ia].clone(), x[ib].clone()];
    let mut labels = vec![Cluster::A; x.len()];
    let mut iterations = 0;
    for it in 0..iters.max(1) {
        iterations = it + 1;
        let next: Vec<Cluster> = x
            .iter()
            .map(|v| {
                if dot(v, &centroids[1]) > dot(v, &centroids[0]) {
                    Cluster::B
                } else {
                    Cluster::A
                }
            })
            .collect();
        let changed = it == 0 || next != labels;
        labels = next;
        if !changed {
            break;
        }
        for (c, centroid) in centroids.iter_mut().enumerate() {
            let mut sum = vec![0.0; centroid.len()];
            let mut count = 0;
            for (v, l) in x.iter().zip(&labels) {
                if l.index() == c {
                    sum.iter_mut().zip(v).for_each(|(s, y)| *s += y);
                    count += 1;
                }
            }
            // an emptied or cancelled-out cluster keeps its previous centroid
            if count > 0 {
                if let Ok(u) = unit(&sum, c) {
                    *centroid = u;
                }
            }
        }
    }
    let degenerate = labels.iter().all(|&l| l == labels[0]);
    Ok(Clustering {
        labels,
        degenerate,
        iterations,
    })
}

/// Labeled waypoints of one grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub waypoints: WaypointSet,
    /// Clustering put every waypoint in one cluster (or there was at most one).
    pub degenerate: bool,
}

/// Labels the decoded waypoints from already computed network outputs.
pub fn label_outputs<T: Scalar>(est: &Tensor<T>, latent: &Tensor<T>, cfg: &DecodeConfig) -> Result<Prediction, InferenceError> {
    cfg.validate()?;
    let candidates = decode_waypoints(est, cfg.k, cfg.t_p)?;
    let mut waypoints = suppress(&candidates, cfg.t_sup);
    if waypoints.len() < 2 {
        return Ok(Prediction {
            waypoints,
            degenerate: true,
        });
    }
    let features = gather_latent(latent, &waypoints.points(), cfg.k)?;
    let clustering = cluster_latent(&features, cfg.kmeans_iters)?;
    for (w, l) in waypoints.waypoints.iter_mut().zip(clustering.labels) {
        w.cluster = l;
    }
    Ok(Prediction {
        waypoints,
        degenerate: clustering.degenerate,
    })
}

/// Forward, decode, suppress, gather, cluster: one network pass per grid.
pub fn predict<T: Scalar>(model: &Model<T>, grid: &OccupancyGrid, cfg: &DecodeConfig) -> Result<Prediction, InferenceError> {
    let (est, latent) = model.forward(grid)?;
    label_outputs(&est, &latent, cfg)
}
