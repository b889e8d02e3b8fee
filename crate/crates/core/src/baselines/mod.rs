//! Classical point-only clustering of waypoints into the two field sides:
//! image-space 2-means and density clustering with an angle-based fallback.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{centroid, principal_axis, Cluster, Point};

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("invalid DBSCAN config: {0}")]
    Config(String),
    #[error("row angle needs at least two distinct points")]
    Degenerate,
}

/// Euclidean 2-means. Centroids start at the farthest pair (first in index
/// order); Lloyd steps run until stable or `iters`. Ties go to A.
pub fn kmeans_image(points: &[Point], iters: usize) -> Vec<Cluster> {
    if points.len() < 2 {
        return vec![Cluster::A; points.len()];
    }
    let (mut ia, mut ib, mut far) = (0, 1, -1.0);
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let d = points[i].dist(points[j]);
            if d > far {
                (ia, ib, far) = (i, j, d);
            }
        }
    }
    let mut c = [points[ia], points[ib]];
    let mut labels: Vec<Cluster> = Vec::new();
    for _ in 0..iters.max(1) {
        let next: Vec<Cluster> = points
            .iter()
            .map(|&p| if p.dist(c[1]) < p.dist(c[0]) { Cluster::B } else { Cluster::A })
            .collect();
        if next == labels {
            break;
        }
        labels = next;
        for (k, ck) in c.iter_mut().enumerate() {
            let members: Vec<Point> = points
                .iter()
                .zip(&labels)
                .filter(|(_, l)| l.index() == k)
                .map(|(&p, _)| p)
                .collect();
            if !members.is_empty() {
                *ck = centroid(&members);
            }
        }
    }
    labels
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DbscanConfig {
    pub eps: f64,
    pub min_pts: usize,
}

impl Default for DbscanConfig {
    fn default() -> Self {
        Self { eps: 25.0, min_pts: 2 }
    }
}

impl DbscanConfig {
    pub fn validate(&self) -> Result<(), BaselineError> {
        if !(self.eps > 0.0) {
            return Err(BaselineError::Config(format!("eps must be positive, got {}", self.eps)));
        }
        if self.min_pts == 0 {
            return Err(BaselineError::Config("min_pts must be at least 1".into()));
        }
        Ok(())
    }
}

/// Bucket grid with cell side `eps` for radius queries.
struct Buckets {
    eps: f64,
    cells: std::collections::HashMap<(i64, i64), Vec<usize>>,
}

impl Buckets {
    fn new(points: &[Point], eps: f64) -> Self {
        let mut cells: std::collections::HashMap<(i64, i64), Vec<usize>> = Default::default();
        for (i, &p) in points.iter().enumerate() {
            cells.entry(Self::key(p, eps)).or_default().push(i);
        }
        Self { eps, cells }
    }

    fn key(p: Point, eps: f64) -> (i64, i64) {
        ((p.x / eps).floor() as i64, (p.y / eps).floor() as i64)
    }

    /// Indices within `eps` of `points[i]`, itself included, ascending.
    fn neighbors(&self, points: &[Point], i: usize) -> Vec<usize> {
        let (cx, cy) = Self::key(points[i], self.eps);
        let mut out = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(bucket) = self.cells.get(&(cx + dx, cy + dy)) {
                    out.extend(bucket.iter().copied().filter(|&j| points[i].dist(points[j]) <= self.eps));
                }
            }
        }
        out.sort_unstable();
        out
    }
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Density clustering. A point is core when at least `min_pts` points
/// (itself included) lie within `eps`. Clusters are the connected components
/// of core points; a non-core point within `eps` of a core point joins the
/// cluster of its nearest core neighbor (ties by position, then index), so
/// the partition does not depend on input order. Everything else is noise
/// (`None`). Cluster ids follow the smallest member index.
pub fn dbscan(points: &[Point], cfg: &DbscanConfig) -> Vec<Option<usize>> {
    let n = points.len();
    let buckets = Buckets::new(points, cfg.eps);
    let neighbors: Vec<Vec<usize>> = (0..n).map(|i| buckets.neighbors(points, i)).collect();
    let core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= cfg.min_pts).collect();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in (0..n).filter(|&i| core[i]) {
        for &j in neighbors[i].iter().filter(|&&j| core[j]) {
            let (a, b) = (find(&mut parent, i), find(&mut parent, j));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut root: Vec<Option<usize>> = (0..n).map(|i| core[i].then(|| find(&mut parent, i))).collect();
    for i in (0..n).filter(|&i| !core[i]) {
        let nearest = neighbors[i].iter().copied().filter(|&j| core[j]).min_by(|&a, &b| {
            let (pa, pb) = (points[a], points[b]);
            points[i]
                .dist(pa)
                .total_cmp(&points[i].dist(pb))
                .then(pa.x.total_cmp(&pb.x))
                .then(pa.y.total_cmp(&pb.y))
                .then(a.cmp(&b))
        });
        root[i] = nearest.and_then(|j| root[j]);
    }
    let mut ids: Vec<usize> = Vec::new();
    root.iter()
        .map(|r| {
            r.map(|r| match ids.iter().position(|&x| x == r) {
                Some(k) => k,
                None => {
                    ids.push(r);
                    ids.len() - 1
                }
            })
        })
        .collect()
}

fn largest_gap_split(points: &[Point], dir: Point) -> (f64, f64) {
    let mut s: Vec<f64> = points.iter().map(|p| p.dot(dir)).collect();
    s.sort_by(f64::total_cmp);
    let range = s[s.len() - 1] - s[0];
    let (mut gap, mut at) = (0.0, s[0]);
    for w in s.windows(2) {
        if w[1] - w[0] > gap {
            gap = w[1] - w[0];
            at = 0.5 * (w[0] + w[1]);
        }
    }
    (if range > 0.0 { gap / range } else { 0.0 }, at)
}

/// Row direction in `[0, pi)`.
///
/// Collinear input is read as a single field side, so the rows run
/// perpendicular to it. Otherwise the principal axis whose projection shows
/// the wider empty band is taken as the along-row axis, the points are split
/// across that band, and the direction between the two side centroids is
/// refined a few times. Matching side waypoints share their cross-row offset,
/// so the centroid difference runs along the rows even when the field border
/// is slanted.
pub fn estimate_row_angle(points: &[Point]) -> Result<f64, BaselineError> {
    let mean = centroid(points);
    let major = principal_axis(points, |_| mean).ok_or(BaselineError::Degenerate)?;
    let minor = Point::new(-major.y, major.x);
    let spread = |d: Point| points.iter().map(|p| (*p - mean).dot(d).powi(2)).sum::<f64>();
    let norm_angle = |d: Point| d.y.atan2(d.x).rem_euclid(std::f64::consts::PI);
    if spread(minor) <= 1e-9 * spread(major) {
        return Ok(norm_angle(minor));
    }
    let (gap_major, _) = largest_gap_split(points, major);
    let (gap_minor, _) = largest_gap_split(points, minor);
    let mut dir = if gap_major >= gap_minor { major } else { minor };
    for _ in 0..5 {
        let (_, at) = largest_gap_split(points, dir);
        let (lo, hi): (Vec<Point>, Vec<Point>) = points.iter().partition(|p| p.dot(dir) < at);
        if lo.is_empty() || hi.is_empty() {
            break;
        }
        let d = centroid(&hi) - centroid(&lo);
        let n = d.norm();
        if n == 0.0 {
            break;
        }
        let next = d * (1.0 / n);
        let settled = next.dot(dir) > 1.0 - 1e-15;
        dir = next;
        if settled {
            break;
        }
    }
    Ok(norm_angle(dir))
}

/// Density clustering first; exactly two clusters label the points directly
/// (noise joins the cluster of its nearest clustered point). Any other
/// outcome falls back to splitting along the estimated row direction at the
/// median projection. The cluster holding point 0 is A.
pub fn dbscan_pipeline(points: &[Point], cfg: &DbscanConfig) -> Vec<Cluster> {
    if points.len() < 2 {
        return vec![Cluster::A; points.len()];
    }
    let ids = dbscan(points, cfg);
    let n_clusters = ids.iter().flatten().max().map_or(0, |m| m + 1);
    let labels: Vec<Cluster> = if n_clusters == 2 {
        (0..points.len())
            .map(|i| {
                let id = ids[i].unwrap_or_else(|| {
                    let j = (0..points.len())
                        .filter(|&j| ids[j].is_some())
                        .min_by(|&a, &b| points[i].dist(points[a]).total_cmp(&points[i].dist(points[b])))
                        .expect("two clusters exist");
                    ids[j].expect("clustered")
                });
                if id == 0 {
                    Cluster::A
                } else {
                    Cluster::B
                }
            })
            .collect()
    } else {
        let Ok(alpha) = estimate_row_angle(points) else {
            return vec![Cluster::A; points.len()];
        };
        let dir = Point::new(alpha.cos(), alpha.sin());
        let proj: Vec<f64> = points.iter().map(|p| p.dot(dir)).collect();
        let mut sorted = proj.clone();
        sorted.sort_by(f64::total_cmp);
        let m = sorted.len();
        let median = if m % 2 == 1 { sorted[m / 2] } else { 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]) };
        proj.iter().map(|&s| if s < median { Cluster::A } else { Cluster::B }).collect()
    };
    if labels[0] == Cluster::B {
        labels.into_iter().map(Cluster::other).collect()
    } else {
        labels
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(v: &[(f64, f64)]) -> Vec<Point> {
        v.iter().map(|&(x, y)| Point::new(x, y)).collect()
    }

    #[test]
    fn kmeans_two_blobs() {
        let p = pts(&[(0.0, 0.0), (1.0, 1.0), (0.0, 2.0), (50.0, 0.0), (51.0, 1.0), (50.0, 2.0)]);
        let l = kmeans_image(&p, 20);
        assert_eq!(l, vec![Cluster::A, Cluster::A, Cluster::A, Cluster::B, Cluster::B, Cluster::B]);
    }

    #[test]
    fn dbscan_examples() {
        let cfg = DbscanConfig { eps: 3.0, min_pts: 2 };
        let p = pts(&[(0.0, 0.0), (2.0, 0.0), (4.0, 0.0), (104.0, 0.0)]);
        assert_eq!(dbscan(&p, &cfg), vec![Some(0), Some(0), Some(0), None]);
    }

    #[test]
    fn border_point_joins_nearest_core() {
        // 0 and 3 are core; 1 reaches both, nearer to 3
        let cfg = DbscanConfig { eps: 2.0, min_pts: 4 };
        let p = pts(&[(0.0, 0.0), (2.0, 0.0), (-1.0, 0.0), (3.5, 0.0), (4.5, 0.0), (-1.5, 0.5), (5.0, 0.5)]);
        let ids = dbscan(&p, &cfg);
        assert!(ids[0].is_some() && ids[3].is_some() && ids[0] != ids[3]);
        assert_eq!(ids[1], ids[3]);
    }

    #[test]
    fn row_angle_of_a_vertical_line() {
        let p = pts(&[(5.0, 0.0), (5.0, 10.0), (5.0, 20.0), (5.0, 35.0)]);
        assert!(estimate_row_angle(&p).unwrap().abs() < 1e-9);
        assert!(matches!(estimate_row_angle(&pts(&[(1.0, 1.0), (1.0, 1.0)])), Err(BaselineError::Degenerate)));
    }

    #[test]
    fn row_angle_with_slanted_borders() {
        // rows along x of varying length, borders slanted in opposite directions
        let mut p = Vec::new();
        for i in 0..10 {
            let v = i as f64 * 12.0;
            p.push(Point::new(0.3 * v, v));
            p.push(Point::new(200.0 - 0.2 * v, v));
        }
        let a = estimate_row_angle(&p).unwrap();
        assert!(a.min(std::f64::consts::PI - a) < 1e-9, "{a}");
    }

    #[test]
    fn pipeline_two_chains() {
        let mut p = Vec::new();
        for i in 0..6 {
            p.push(Point::new(0.0, 12.0 * i as f64));
            p.push(Point::new(150.0, 12.0 * i as f64));
        }
        let l = dbscan_pipeline(&p, &DbscanConfig::default());
        for (i, c) in l.iter().enumerate() {
            assert_eq!(*c, if i % 2 == 0 { Cluster::A } else { Cluster::B });
        }
    }

    #[test]
    fn config_validation() {
        assert!(DbscanConfig { eps: 0.0, min_pts: 2 }.validate().is_err());
        assert!(DbscanConfig { eps: 1.0, min_pts: 0 }.validate().is_err());
        assert!(DbscanConfig::default().validate().is_ok());
    }
}
