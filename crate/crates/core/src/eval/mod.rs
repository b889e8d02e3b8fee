//! Detection and clustering metrics: greedy matching, all-points average
//! precision at several radii, adjusted accuracy and clustering error.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{Cluster, Point, WaypointSet};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("average precision is undefined without ground truth")]
    NoGroundTruth,
    #[error("clustering metrics need at least one matched point")]
    EmptyMatch,
    #[error("label lists differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("matching radius must be positive, got {0}")]
    Radius(f64),
}

pub const DEFAULT_RADII: [f64; 5] = [2.0, 3.0, 4.0, 6.0, 8.0];

/// A detection with its confidence.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scored {
    pub point: Point,
    pub confidence: f64,
}

impl Scored {
    /// Predictions of a set; missing confidences count as 1.
    pub fn from_set(set: &WaypointSet) -> Vec<Scored> {
        set.waypoints
            .iter()
            .map(|w| Scored {
                point: w.point(),
                confidence: w.confidence.unwrap_or(1.0),
            })
            .collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Matching {
    /// `(prediction, ground truth, distance)`, in matching order.
    pub pairs: Vec<(usize, usize, f64)>,
    pub unmatched_preds: Vec<usize>,
    pub unmatched_gts: Vec<usize>,
}

/// Predictions in descending confidence, equal confidences by index.
fn confidence_order(preds: &[Scored]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].confidence.total_cmp(&preds[a].confidence).then(a.cmp(&b)));
    order
}

/// Greedy matching: in descending confidence each prediction takes its nearest
/// unmatched ground truth within `r` (ties by ground-truth index).
pub fn match_waypoints(preds: &[Scored], gts: &[Point], r: f64) -> Result<Matching, EvalError> {
    if !(r > 0.0) {
        return Err(EvalError::Radius(r));
    }
    let mut taken = vec![false; gts.len()];
    let mut m = Matching::default();
    for i in confidence_order(preds) {
        let best = (0..gts.len())
            .filter(|&j| !taken[j])
            .map(|j| (j, preds[i].point.dist(gts[j])))
            .filter(|&(_, d)| d <= r)
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        match best {
            Some((j, d)) => {
                taken[j] = true;
                m.pairs.push((i, j, d));
            }
            None => m.unmatched_preds.push(i),
        }
    }
    m.unmatched_preds.sort_unstable();
    m.unmatched_gts = (0..gts.len()).filter(|&j| !taken[j]).collect();
    Ok(m)
}

/// Area under the monotone precision envelope over recall, from
/// `(confidence, is_true_positive)` detections and the ground-truth count.
/// Detections sharing a confidence enter the curve together.
fn all_points_ap(mut dets: Vec<(f64, bool)>, n_gt: usize) -> f64 {
    dets.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut recall = vec![0.0];
    let mut precision = vec![0.0];
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut i = 0;
    while i < dets.len() {
        let level = dets[i].0;
        while i < dets.len() && dets[i].0 == level {
            tp += usize::from(dets[i].1);
            seen += 1;
            i += 1;
        }
        recall.push(tp as f64 / n_gt as f64);
        precision.push(tp as f64 / seen as f64);
    }
    recall.push(1.0);
    precision.push(0.0);
    for k in (0..precision.len() - 1).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    (1..recall.len()).map(|k| (recall[k] - recall[k - 1]) * precision[k]).sum()
}

/// Average precision at radius `r` of one image.
pub fn average_precision(preds: &[Scored], gts: &[Point], r: f64) -> Result<f64, EvalError> {
    pooled_average_precision(&[(preds.to_vec(), gts.to_vec())], r)
}

/// Average precision over several images: matching is per image, the
/// precision/recall curve pools every detection.
pub fn pooled_average_precision(images: &[(Vec<Scored>, Vec<Point>)], r: f64) -> Result<f64, EvalError> {
    let n_gt: usize = images.iter().map(|(_, g)| g.len()).sum();
    if n_gt == 0 {
        return Err(EvalError::NoGroundTruth);
    }
    let mut dets = Vec::new();
    for (preds, gts) in images {
        let m = match_waypoints(preds, gts, r)?;
        dets.extend(m.pairs.iter().map(|&(i, _, _)| (preds[i].confidence, true)));
        dets.extend(m.unmatched_preds.iter().map(|&i| (preds[i].confidence, false)));
    }
    Ok(all_points_ap(dets, n_gt))
}

fn agreements(pred: &[Cluster], gt: &[Cluster]) -> Result<usize, EvalError> {
    if pred.len() != gt.len() {
        return Err(EvalError::LengthMismatch(pred.len(), gt.len()));
    }
    if pred.is_empty() {
        return Err(EvalError::EmptyMatch);
    }
    let same = pred.iter().zip(gt).filter(|(p, g)| p == g).count();
    Ok(same.max(pred.len() - same))
}

/// `2a - 1` clamped to `[0, 1]`, `a` the plain accuracy under the better of
/// the two label assignments.
pub fn adjusted_accuracy(pred: &[Cluster], gt: &[Cluster]) -> Result<f64, EvalError> {
    let best = agreements(pred, gt)?;
    Ok((2.0 * best as f64 / pred.len() as f64 - 1.0).clamp(0.0, 1.0))
}

/// Mislabeled points under the better of the two label assignments.
pub fn clustering_error(pred: &[Cluster], gt: &[Cluster]) -> Result<usize, EvalError> {
    Ok(pred.len() - agreements(pred, gt)?)
}

/// Metrics of one image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageResult {
    pub name: String,
    pub n_gt: usize,
    pub n_pred: usize,
    /// AP per radius, `None` without ground truth.
    pub ap: Vec<Option<f64>>,
    /// Predictions matched within the clustering radius.
    pub matched: usize,
    pub adjusted_accuracy: Option<f64>,
    pub clustering_error: Option<usize>,
}

/// Scores one image: AP at every radius, clustering on predictions matched
/// within `cluster_radius`.
pub fn evaluate_image(
    name: &str,
    pred: &WaypointSet,
    gt: &WaypointSet,
    radii: &[f64],
    cluster_radius: f64,
) -> Result<ImageResult, EvalError> {
    let scored = Scored::from_set(pred);
    let gts = gt.points();
    let ap = radii
        .iter()
        .map(|&r| match average_precision(&scored, &gts, r) {
            Ok(v) => Ok(Some(v)),
            Err(EvalError::NoGroundTruth) => Ok(None),
            Err(e) => Err(e),
        })
        .collect::<Result<_, _>>()?;
    let m = match_waypoints(&scored, &gts, cluster_radius)?;
    let p: Vec<Cluster> = m.pairs.iter().map(|&(i, _, _)| pred.waypoints[i].cluster).collect();
    let g: Vec<Cluster> = m.pairs.iter().map(|&(_, j, _)| gt.waypoints[j].cluster).collect();
    let (adjusted_accuracy, clustering_error) = if p.is_empty() {
        (None, None)
    } else {
        (Some(adjusted_accuracy(&p, &g)?), Some(clustering_error(&p, &g)?))
    };
    Ok(ImageResult {
        name: name.to_string(),
        n_gt: gts.len(),
        n_pred: pred.len(),
        ap,
        matched: p.len(),
        adjusted_accuracy,
        clustering_error,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub radii: Vec<f64>,
    /// Pooled AP per radius.
    pub ap: Vec<f64>,
    /// Mean over images with at least one matched prediction.
    pub adjusted_accuracy: f64,
    /// Mean mislabeled points per image, same images.
    pub clustering_error: f64,
    /// Images without any matched prediction, left out of the clustering means.
    pub unclustered_images: usize,
    pub interpolation: String,
    pub images: Vec<ImageResult>,
}

/// Scores predictions against ground truth, image by image in the given order.
pub fn evaluate_dataset(
    items: &[(String, WaypointSet, WaypointSet)],
    radii: &[f64],
    cluster_radius: f64,
) -> Result<EvalReport, EvalError> {
    let images: Vec<ImageResult> = items
        .iter()
        .map(|(name, pred, gt)| evaluate_image(name, pred, gt, radii, cluster_radius))
        .collect::<Result<_, _>>()?;
    let pooled: Vec<(Vec<Scored>, Vec<Point>)> = items.iter().map(|(_, p, g)| (Scored::from_set(p), g.points())).collect();
    let ap = radii
        .iter()
        .map(|&r| pooled_average_precision(&pooled, r))
        .collect::<Result<_, _>>()?;
    let clustered: Vec<&ImageResult> = images.iter().filter(|r| r.adjusted_accuracy.is_some()).collect();
    let mean = |f: &dyn Fn(&ImageResult) -> f64| {
        if clustered.is_empty() {
            0.0
        } else {
            clustered.iter().map(|r| f(r)).sum::<f64>() / clustered.len() as f64
        }
    };
    Ok(EvalReport {
        radii: radii.to_vec(),
        ap,
        adjusted_accuracy: mean(&|r| r.adjusted_accuracy.unwrap_or(0.0)),
        clustering_error: mean(&|r| r.clustering_error.unwrap_or(0) as f64),
        unclustered_images: images.len() - clustered.len(),
        interpolation: "all-points".into(),
        images,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    /// Sample standard deviation; zero for a single value.
    pub fn of(values: &[f64]) -> Stat {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Stat { mean, std }
    }
}

/// Mean and spread of several runs, e.g. one report per checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub runs: usize,
    pub radii: Vec<f64>,
    pub ap: Vec<Stat>,
    pub adjusted_accuracy: Stat,
    pub clustering_error: Stat,
}

impl EvalSummary {
    pub fn of(reports: &[EvalReport]) -> Option<EvalSummary> {
        let first = reports.first()?;
        let col = |f: &dyn Fn(&EvalReport) -> f64| Stat::of(&reports.iter().map(f).collect::<Vec<_>>());
        Some(EvalSummary {
            runs: reports.len(),
            radii: first.radii.clone(),
            ap: (0..first.radii.len()).map(|k| col(&|r| r.ap[k])).collect(),
            adjusted_accuracy: col(&|r| r.adjusted_accuracy),
            clustering_error: col(&|r| r.clustering_error),
        })
    }

    /// Aligned plain-text table, one metric per row.
    pub fn table(&self, method: &str) -> String {
        let mut rows: Vec<(String, Stat)> = self
            .radii
            .iter()
            .zip(&self.ap)
            .map(|(r, s)| (format!("AP_{r}"), *s))
            .collect();
        rows.push(("Adjusted Accuracy".into(), self.adjusted_accuracy));
        rows.push(("Clustering Error".into(), self.clustering_error));
        let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max("Metric".len());
        let mut out = String::new();
        let _ = writeln!(out, "Method: {method} ({} run{})", self.runs, if self.runs == 1 { "" } else { "s" });
        let _ = writeln!(out, "{:<width$}  {:>18}", "Metric", "Value");
        let _ = writeln!(out, "{}", "-".repeat(width + 20));
        for (name, s) in rows {
            let _ = writeln!(out, "{name:<width$}  {:>8.4} ± {:<7.4}", s.mean, s.std);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(x: f64, y: f64, c: f64) -> Scored {
        Scored {
            point: Point::new(x, y),
            confidence: c,
        }
    }

    #[test]
    fn matching_examples() {
        let g = [Point::new(0.0, 0.0)];
        assert_eq!(match_waypoints(&[s(1.5, 0.0, 0.9)], &g, 2.0).unwrap().pairs.len(), 1);
        let m = match_waypoints(&[s(2.5, 0.0, 0.9)], &g, 2.0).unwrap();
        assert!(m.pairs.is_empty());
        assert_eq!((m.unmatched_preds, m.unmatched_gts), (vec![0], vec![0]));
        let m = match_waypoints(&[s(0.5, 0.0, 0.3), s(1.0, 0.0, 0.8)], &g, 2.0).unwrap();
        assert_eq!(m.pairs, vec![(1, 0, 1.0)]);
        assert_eq!(match_waypoints(&[], &g, 0.0), Err(EvalError::Radius(0.0)));
    }

    #[test]
    fn ap_examples() {
        let g = [Point::new(0.0, 0.0)];
        assert_eq!(average_precision(&[s(0.0, 1.0, 0.7)], &g, 2.0).unwrap(), 1.0);
        assert_eq!(average_precision(&[s(0.0, 3.0, 0.7)], &g, 2.0).unwrap(), 0.0);
        let g2 = [Point::new(0.0, 0.0), Point::new(50.0, 0.0)];
        let ap = average_precision(&[s(0.0, 0.0, 0.9), s(20.0, 20.0, 0.95)], &g2, 2.0).unwrap();
        assert!((ap - 0.25).abs() < 1e-12);
        assert_eq!(average_precision(&[], &[], 2.0), Err(EvalError::NoGroundTruth));
        assert_eq!(average_precision(&[], &g, 2.0).unwrap(), 0.0);
    }

    #[test]
    fn clustering_examples() {
        use Cluster::{A, B};
        assert_eq!(adjusted_accuracy(&[A, B, A], &[B, A, B]).unwrap(), 1.0);
        assert_eq!(adjusted_accuracy(&[A, A, A, A], &[A, A, B, B]).unwrap(), 0.0);
        assert_eq!(adjusted_accuracy(&[A, A, B, A], &[A, A, B, B]).unwrap(), 0.5);
        assert_eq!(clustering_error(&[A, A, B, A], &[A, A, B, B]).unwrap(), 1);
        assert_eq!(clustering_error(&[B, A], &[A, B]).unwrap(), 0);
        assert_eq!(clustering_error(&[], &[]), Err(EvalError::EmptyMatch));
        assert_eq!(adjusted_accuracy(&[A], &[]), Err(EvalError::LengthMismatch(1, 0)));
    }

    #[test]
    fn stats_and_table() {
        let st = Stat::of(&[0.0, 1.0, 2.0]);
        assert_eq!(st.mean, 1.0);
        assert!((st.std - 1.0).abs() < 1e-12);
        let mean_err = Stat::of(&[0.0, 1.0, 1.0]).mean;
        assert!((mean_err - 0.6667).abs() < 1e-4);
        let sum = EvalSummary {
            runs: 1,
            radii: vec![2.0],
            ap: vec![st],
            adjusted_accuracy: st,
            clustering_error: st,
        };
        let t = sum.table("model");
        assert!(t.contains("AP_2") && t.contains("Clustering Error"));
    }
}
