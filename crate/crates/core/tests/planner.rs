use cway_core::fieldgen::{generate_field, GenConfig};
use cway_core::planner::*;
use cway_core::types::{Cluster, Point, Waypoint, WaypointSet};
use proptest::prelude::*;

fn key(w: &Waypoint) -> (u64, u64) {
    (w.x.to_bits(), w.y.to_bits())
}

/// Positions in the input of each ordered waypoint.
fn order_indices(set: &WaypointSet, ordered: &[Waypoint]) -> Vec<usize> {
    ordered.iter().map(|o| set.waypoints.iter().position(|w| key(w) == key(o)).unwrap()).collect()
}

fn rotated(set: &WaypointSet, theta: f64) -> WaypointSet {
    WaypointSet::new(set.waypoints.iter().map(|w| Waypoint::new(w.point().rotate(theta), w.cluster)).collect())
}

#[test]
fn generator_row_order_is_recovered() {
    for (name, cfg) in [("straight", GenConfig::sized(416, 416)), ("curved", GenConfig::strongly_curved(416, 416))] {
        for seed in 0..50 {
            let (_, ws, _) = generate_field(&cfg, seed).unwrap();
            let m = ws.len() / 2;
            let o = order_within_clusters(&ws).unwrap();
            let ia = order_indices(&ws, &o.a);
            let ib = order_indices(&ws, &o.b);
            // labels list side A rows first, then side B in the same row order
            let fwd: Vec<usize> = (0..m).collect();
            let rev: Vec<usize> = (0..m).rev().collect();
            assert!(ia == fwd || ia == rev, "{name} seed {seed}: {ia:?}");
            let ib: Vec<usize> = ib.into_iter().map(|i| i - m).collect();
            assert_eq!(ia, ib, "{name} seed {seed}");

            let path = plan_coverage(&ws).unwrap();
            for pair in path.points.windows(2) {
                if pair[1].segment == Segment::Intra {
                    let i = ws.waypoints.iter().position(|w| w.x == pair[0].x && w.y == pair[0].y).unwrap();
                    let j = ws.waypoints.iter().position(|w| w.x == pair[1].x && w.y == pair[1].y).unwrap();
                    assert_eq!(i % m, j % m, "{name} seed {seed}: intra segment joins different rows");
                }
            }
        }
    }
}

fn layout() -> impl Strategy<Value = (WaypointSet, f64)> {
    (1usize..=20, 10.0..40.0f64, 80.0..300.0f64, -3.0..3.0f64, prop::collection::vec(-2.0..2.0f64, 40)).prop_map(
        |(m, spacing, length, theta, jitter)| {
            let mut v = Vec::new();
            for i in 0..m {
                let y = spacing * i as f64;
                v.push(Waypoint::new(Point::new(jitter[i], y + jitter[20 + i]), Cluster::A));
                v.push(Waypoint::new(Point::new(length + jitter[20 + i], y + jitter[i]), Cluster::B));
            }
            (rotated(&WaypointSet::new(v), theta), theta)
        },
    )
}

proptest! {
    #[test]
    fn path_visits_each_waypoint_once((set, _) in layout()) {
        let path = plan_coverage(&set).unwrap();
        prop_assert_eq!(path.points.len(), set.len());
        let mut seen: Vec<(u64, u64)> = path.points.iter().map(|p| (p.x.to_bits(), p.y.to_bits())).collect();
        let mut want: Vec<(u64, u64)> = set.waypoints.iter().map(key).collect();
        seen.sort();
        want.sort();
        prop_assert_eq!(seen, want);
        let pts: Vec<Point> = path.points.iter().map(|p| p.point()).collect();
        prop_assert!((path.length - path_length(&pts)).abs() < 1e-9);
        // segment kinds follow the A-B-B-A alternation
        for (i, p) in path.points.iter().enumerate().skip(1) {
            let want = if i % 2 == 1 { Segment::Intra } else { Segment::Inter };
            prop_assert_eq!(p.segment, want);
            prop_assert_eq!(p.cluster == path.points[i - 1].cluster, want == Segment::Inter);
        }
    }

    #[test]
    fn ordering_survives_rotation((set, _) in layout(), phi in -3.0..3.0f64) {
        let o = order_within_clusters(&set).unwrap();
        let r = rotated(&set, phi);
        let or = order_within_clusters(&r).unwrap();
        let (a, b) = (order_indices(&set, &o.a), order_indices(&set, &o.b));
        let (ra, rb) = (order_indices(&r, &or.a), order_indices(&r, &or.b));
        let rev = |v: &[usize]| v.iter().rev().copied().collect::<Vec<_>>();
        prop_assert!((ra == a && rb == b) || (ra == rev(&a) && rb == rev(&b)));
    }

    #[test]
    fn odd_row_counts_plan_the_same_route_after_a_label_swap((set, _) in layout()) {
        let m = set.len() / 2;
        prop_assume!(m % 2 == 1);
        let swapped = WaypointSet::new(set.waypoints.iter().map(|w| Waypoint::new(w.point(), w.cluster.other())).collect());
        let p = plan_coverage(&set).unwrap();
        let q = plan_coverage(&swapped).unwrap();
        let route = |c: &CoveragePath| c.points.iter().map(|p| (p.x.to_bits(), p.y.to_bits())).collect::<Vec<_>>();
        let mut back = route(&q);
        back.reverse();
        prop_assert!(route(&p) == route(&q) || route(&p) == back);
        prop_assert!((p.length - q.length).abs() < 1e-9);
    }
}

#[test]
fn size_mismatch_is_reported() {
    let w = |x: f64, y: f64, c| Waypoint::new(Point::new(x, y), c);
    let set = WaypointSet::new(vec![w(0.0, 0.0, Cluster::A), w(0.0, 10.0, Cluster::A), w(0.0, 20.0, Cluster::A), w(90.0, 0.0, Cluster::B)]);
    let err = plan_coverage(&set).unwrap_err();
    assert_eq!(err, PlanError::SizeMismatch { a: 3, b: 1 });
    assert!(err.to_string().contains("clustering"));
}
