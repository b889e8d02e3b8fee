//! Full-coverage paths over labeled row-end waypoints, visiting rows in
//! A-B-B-A order with straight segments.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{centroid, principal_axis, Cluster, Point, Waypoint, WaypointSet};

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("cluster {0:?} is empty")]
    EmptyCluster(Cluster),
    #[error("cluster sizes {a} (A) and {b} (B) differ by more than one; the clustering upstream probably failed")]
    SizeMismatch { a: usize, b: usize },
    #[error("waypoints are collocated, no cross-row direction")]
    Degenerate,
}

/// Each side sorted along its own cross-row axis, in matching row order.
#[derive(Clone, Debug, PartialEq)]
pub struct Ordered {
    pub a: Vec<Waypoint>,
    pub b: Vec<Waypoint>,
    /// Unit cross-row direction of side A, oriented so B lies on its left.
    pub axis: Point,
    pub warning: Option<String>,
}

/// Sorts each side along its own principal direction, so strongly bent rows
/// whose two ends lie on differently oriented lines still sort consistently.
/// Side A runs with B on the left of its axis; side B is then taken in
/// whichever direction pairs it with A at the smaller total distance.
pub fn order_within_clusters(set: &WaypointSet) -> Result<Ordered, PlanError> {
    let side = |c: Cluster| -> Vec<Waypoint> { set.waypoints.iter().filter(|w| w.cluster == c).copied().collect() };
    let (wa, wb) = (side(Cluster::A), side(Cluster::B));
    for (ws, c) in [(&wa, Cluster::A), (&wb, Cluster::B)] {
        if ws.is_empty() {
            return Err(PlanError::EmptyCluster(c));
        }
    }
    if wa.len().abs_diff(wb.len()) > 1 {
        return Err(PlanError::SizeMismatch { a: wa.len(), b: wb.len() });
    }
    let pa: Vec<Point> = wa.iter().map(Waypoint::point).collect();
    let pb: Vec<Point> = wb.iter().map(Waypoint::point).collect();
    let (ca, cb) = (centroid(&pa), centroid(&pb));
    let d = cb - ca;
    let own_axis = |pts: &[Point], c: Point| principal_axis(pts, |_| c);
    let fallback = || {
        let n = d.norm();
        (n > 0.0).then(|| Point::new(-d.y / n, d.x / n))
    };
    let mut axis = own_axis(&pa, ca).or_else(|| own_axis(&pb, cb)).or_else(fallback).ok_or(PlanError::Degenerate)?;
    if axis.x * d.y - axis.y * d.x < 0.0 {
        axis = axis * -1.0;
    }
    let mut axis_b = own_axis(&pb, cb).unwrap_or(axis);
    if axis_b.dot(axis) < 0.0 {
        axis_b = axis_b * -1.0;
    }
    let sorted = |ws: Vec<Waypoint>, dir: Point| -> Vec<Waypoint> {
        let mut idx: Vec<usize> = (0..ws.len()).collect();
        idx.sort_by(|&i, &j| ws[i].point().dot(dir).total_cmp(&ws[j].point().dot(dir)).then(i.cmp(&j)));
        idx.into_iter().map(|i| ws[i]).collect()
    };
    let a = sorted(wa, axis);
    let b = sorted(wb, axis_b);
    let reversed: Vec<Waypoint> = b.iter().rev().copied().collect();
    let b = if best_alignment(&a, &reversed).0 < best_alignment(&a, &b).0 { reversed } else { b };
    let warning = (a.len() != b.len()).then(|| {
        format!("cluster sizes differ ({} A, {} B); the unpaired waypoint is visited on its own", a.len(), b.len())
    });
    Ok(Ordered { a, b, axis, warning })
}

/// Rank pairing of two sorted sides. With one extra point on a side, every
/// position for the unpaired point is tried. Returns the total pair distance
/// and the rows in order, `None` marking the missing end.
fn best_alignment(a: &[Waypoint], b: &[Waypoint]) -> (f64, Vec<(Option<Waypoint>, Option<Waypoint>)>) {
    let (long, short, a_long) = if a.len() >= b.len() { (a, b, true) } else { (b, a, false) };
    let skips: Vec<Option<usize>> = if long.len() == short.len() { vec![None] } else { (0..long.len()).map(Some).collect() };
    let mut best: Option<(f64, Option<usize>)> = None;
    for skip in skips {
        let mut j = 0;
        let mut cost = 0.0;
        for (i, w) in long.iter().enumerate() {
            if Some(i) != skip {
                cost += w.point().dist(short[j].point());
                j += 1;
            }
        }
        if best.is_none_or(|(c, _)| cost < c) {
            best = Some((cost, skip));
        }
    }
    let (cost, skip) = best.expect("at least one alignment");
    let mut j = 0;
    let rows = long
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let other = if Some(i) == skip {
                None
            } else {
                j += 1;
                Some(short[j - 1])
            };
            if a_long {
                (Some(w), other)
            } else {
                (other, Some(w))
            }
        })
        .collect();
    (cost, rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Segment {
    /// First point of the path.
    Start,
    /// Along a row, between opposite sides.
    Intra,
    /// Around a headland, between neighbors on one side.
    Inter,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub x: f64,
    pub y: f64,
    pub cluster: Cluster,
    /// Kind of the segment that reaches this point.
    pub segment: Segment,
}

impl PathPoint {
    pub fn point(&self) -> Point {
        Point::new(self.x, self.y)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoveragePath {
    pub points: Vec<PathPoint>,
    pub length: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// Rows in cross-row order, entered on the side the previous row left from,
/// starting from the A end of the first row: A1, B1, B2, A2, A3, B3, ...
pub fn plan_coverage(set: &WaypointSet) -> Result<CoveragePath, PlanError> {
    let ordered = order_within_clusters(set)?;
    let mut seq: Vec<Waypoint> = Vec::new();
    let mut side = Cluster::A;
    for (a, b) in best_alignment(&ordered.a, &ordered.b).1 {
        match (a, b) {
            (Some(a), Some(b)) => {
                let (first, second) = if side == Cluster::A { (a, b) } else { (b, a) };
                seq.extend([first, second]);
                side = side.other();
            }
            (Some(w), None) | (None, Some(w)) => seq.push(w),
            (None, None) => {}
        }
    }
    let points: Vec<PathPoint> = seq
        .iter()
        .enumerate()
        .map(|(i, w)| PathPoint {
            x: w.x,
            y: w.y,
            cluster: w.cluster,
            segment: match i {
                0 => Segment::Start,
                _ if seq[i - 1].cluster == w.cluster => Segment::Inter,
                _ => Segment::Intra,
            },
        })
        .collect();
    let length = path_length(&points.iter().map(PathPoint::point).collect::<Vec<_>>());
    Ok(CoveragePath {
        points,
        length,
        warning: ordered.warning,
    })
}

/// Sum of straight segment lengths.
pub fn path_length(points: &[Point]) -> f64 {
    points.windows(2).map(|w| w[0].dist(w[1])).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wp(x: f64, y: f64, c: Cluster) -> Waypoint {
        Waypoint::new(Point::new(x, y), c)
    }

    fn grid(m: usize) -> WaypointSet {
        let mut v = Vec::new();
        for i in 0..m {
            v.push(wp(100.0, 10.0 * i as f64, Cluster::B));
            v.push(wp(0.0, 10.0 * i as f64, Cluster::A));
        }
        WaypointSet::new(v)
    }

    #[test]
    fn orders_by_cross_row_axis() {
        let set = WaypointSet::new(vec![
            wp(0.0, 30.0, Cluster::A),
            wp(0.0, 10.0, Cluster::A),
            wp(0.0, 0.0, Cluster::A),
            wp(0.0, 20.0, Cluster::A),
            wp(50.0, 5.0, Cluster::B),
        ]);
        let err = order_within_clusters(&set).unwrap_err();
        assert_eq!(err, PlanError::SizeMismatch { a: 4, b: 1 });
        let mut set = set;
        set.waypoints.extend([wp(50.0, 15.0, Cluster::B), wp(50.0, 25.0, Cluster::B)]);
        let o = order_within_clusters(&set).unwrap();
        let ys: Vec<f64> = o.a.iter().map(|w| w.y).collect();
        assert!(ys == [0.0, 10.0, 20.0, 30.0] || ys == [30.0, 20.0, 10.0, 0.0]);
        assert!(o.warning.is_some());
    }

    #[test]
    fn abba_sequences() {
        use Cluster::{A, B};
        for (m, expect) in [(2, vec![A, B, B, A]), (3, vec![A, B, B, A, A, B])] {
            let p = plan_coverage(&grid(m)).unwrap();
            assert_eq!(p.points.iter().map(|q| q.cluster).collect::<Vec<_>>(), expect);
            let kinds: Vec<Segment> = p.points.iter().map(|q| q.segment).collect();
            assert_eq!(kinds[..4], [Segment::Start, Segment::Intra, Segment::Inter, Segment::Intra]);
            // rows are 100 long and 10 apart
            let closed = m as f64 * 100.0 + (m - 1) as f64 * 10.0;
            assert!((p.length - closed).abs() < 1e-9);
        }
    }

    #[test]
    fn lengths() {
        assert_eq!(path_length(&[Point::new(0.0, 0.0), Point::new(3.0, 4.0)]), 5.0);
        assert_eq!(path_length(&[Point::new(1.0, 1.0), Point::new(1.0, 1.0)]), 0.0);
    }

    #[test]
    fn empty_cluster() {
        let set = WaypointSet::new(vec![wp(0.0, 0.0, Cluster::A), wp(0.0, 9.0, Cluster::A)]);
        assert_eq!(plan_coverage(&set).unwrap_err(), PlanError::EmptyCluster(Cluster::B));
    }
}
