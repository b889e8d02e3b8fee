use std::collections::VecDeque;

use cway_core::baselines::*;
use cway_core::eval::adjusted_accuracy;
use cway_core::fieldgen::{generate_field, GenConfig};
use cway_core::types::{Cluster, Point};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn same_up_to_swap(a: &[Cluster], b: &[Cluster]) -> bool {
    a == b || a.iter().zip(b).all(|(x, y)| *x == y.other())
}

fn sse(points: &[Point], labels: &[Cluster]) -> f64 {
    [Cluster::A, Cluster::B]
        .iter()
        .map(|&c| {
            let m: Vec<Point> = points.iter().zip(labels).filter(|(_, l)| **l == c).map(|(p, _)| *p).collect();
            let n = m.len() as f64;
            let cx = m.iter().map(|p| p.x).sum::<f64>() / n;
            let cy = m.iter().map(|p| p.y).sum::<f64>() / n;
            m.iter().map(|p| (p.x - cx).powi(2) + (p.y - cy).powi(2)).sum::<f64>()
        })
        .sum()
}

#[test]
fn kmeans_matches_partition_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..300 {
        let n = rng.random_range(2..=8);
        let sep = Point::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let sep = sep * (60.0 / sep.norm().max(1e-3));
        let pts: Vec<Point> = (0..n)
            .map(|i| {
                let base = if i == 0 || (i > 1 && rng.random_bool(0.5)) { Point::new(0.0, 0.0) } else { sep };
                base + Point::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0))
            })
            .collect();
        let mut best = (f64::INFINITY, Vec::new());
        for mask in 0..(1u32 << (n - 1)) - 1 {
            let l: Vec<Cluster> = (0..n)
                .map(|i| if i > 0 && mask >> (i - 1) & 1 == 0 { Cluster::B } else { Cluster::A })
                .collect();
            let c = sse(&pts, &l);
            if c < best.0 {
                best = (c, l);
            }
        }
        let got = kmeans_image(&pts, 100);
        assert!(same_up_to_swap(&got, &best.1), "{pts:?}");
    }
}

/// Quadratic DBSCAN: core iff the closed eps-ball holds `min_pts` points
/// (itself included), clusters grown breadth-first through core points, border
/// points taken by their nearest core point. Ids in order of first appearance.
fn dbscan_reference(p: &[Point], eps: f64, min_pts: usize) -> Vec<Option<usize>> {
    let n = p.len();
    let nb: Vec<Vec<usize>> = (0..n).map(|i| (0..n).filter(|&j| p[i].dist(p[j]) <= eps).collect()).collect();
    let core: Vec<bool> = nb.iter().map(|v| v.len() >= min_pts).collect();
    let mut comp = vec![usize::MAX; n];
    let mut next = 0;
    for s in 0..n {
        if !core[s] || comp[s] != usize::MAX {
            continue;
        }
        let mut q = VecDeque::from([s]);
        comp[s] = next;
        while let Some(i) = q.pop_front() {
            for &j in &nb[i] {
                if core[j] && comp[j] == usize::MAX {
                    comp[j] = next;
                    q.push_back(j);
                }
            }
        }
        next += 1;
    }
    let raw: Vec<Option<usize>> = (0..n)
        .map(|i| {
            if core[i] {
                return Some(comp[i]);
            }
            nb[i]
                .iter()
                .filter(|&&j| core[j])
                .min_by(|&&a, &&b| p[i].dist(p[a]).total_cmp(&p[i].dist(p[b])))
                .map(|&j| comp[j])
        })
        .collect();
    canonical(&raw)
}

fn canonical(ids: &[Option<usize>]) -> Vec<Option<usize>> {
    let mut map = std::collections::HashMap::new();
    ids.iter()
        .map(|id| {
            id.map(|v| {
                let k = map.len();
                *map.entry(v).or_insert(k)
            })
        })
        .collect()
}

fn cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point> {
    (0..n).map(|_| Point::new(rng.random_range(0.0..300.0), rng.random_range(0.0..300.0))).collect()
}

#[test]
fn dbscan_matches_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for case in 0..40 {
        let p = cloud(&mut rng, 200);
        let cfg = DbscanConfig {
            eps: rng.random_range(8.0..30.0),
            min_pts: rng.random_range(1..6),
        };
        assert_eq!(dbscan(&p, &cfg), dbscan_reference(&p, cfg.eps, cfg.min_pts), "case {case}");
    }
}

#[test]
fn dbscan_ignores_point_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let p = cloud(&mut rng, 200);
        let cfg = DbscanConfig { eps: 20.0, min_pts: 3 };
        let ids = dbscan(&p, &cfg);
        let mut perm: Vec<usize> = (0..p.len()).collect();
        perm.shuffle(&mut rng);
        let shuffled: Vec<Point> = perm.iter().map(|&i| p[i]).collect();
        let back = dbscan(&shuffled, &cfg);
        // same partition: the shuffled ids, mapped to original positions, canonicalize identically
        let mut restored = vec![None; p.len()];
        for (k, &i) in perm.iter().enumerate() {
            restored[i] = back[k];
        }
        assert_eq!(canonical(&restored), ids);
    }
}

#[test]
fn dbscan_examples() {
    let cfg = DbscanConfig { eps: 3.0, min_pts: 2 };
    let p = [Point::new(0.0, 0.0), Point::new(2.0, 0.0), Point::new(4.0, 0.0), Point::new(100.0, 0.0)];
    assert_eq!(dbscan(&p, &cfg), vec![Some(0), Some(0), Some(0), None]);
    assert!(DbscanConfig { eps: 0.0, min_pts: 2 }.validate().is_err());
    assert!(DbscanConfig { eps: 1.0, min_pts: 0 }.validate().is_err());
}

fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(std::f64::consts::PI);
    d.min(std::f64::consts::PI - d)
}

#[test]
fn row_angle_on_straight_fields() {
    let cfg = GenConfig::sized(416, 416);
    for seed in 0..50 {
        let (_, ws, spec) = generate_field(&cfg, seed).unwrap();
        let est = estimate_row_angle(&ws.points()).unwrap();
        assert!(angle_diff(est, spec.angle) < 5f64.to_radians(), "seed {seed}: {est} vs {}", spec.angle);
    }
}

#[test]
fn row_angle_of_a_vertical_line_is_horizontal() {
    let p: Vec<Point> = (0..5).map(|i| Point::new(3.0, 10.0 * i as f64)).collect();
    assert!(angle_diff(estimate_row_angle(&p).unwrap(), 0.0) < 1e-9);
    assert!(estimate_row_angle(&[Point::new(1.0, 1.0), Point::new(1.0, 1.0)]).is_err());
}

#[test]
fn pipeline_on_straight_ground_truth() {
    let cfg = GenConfig::sized(416, 416);
    for seed in 0..50 {
        let (_, ws, _) = generate_field(&cfg, seed).unwrap();
        let l = dbscan_pipeline(&ws.points(), &DbscanConfig::default());
        assert_eq!(adjusted_accuracy(&l, &ws.labels()).unwrap(), 1.0, "seed {seed}");
        let k = kmeans_image(&ws.points(), 100);
        assert_eq!(adjusted_accuracy(&k, &ws.labels()).unwrap(), 1.0, "seed {seed}");
    }
}

proptest! {
    #[test]
    fn row_angle_rotates_with_points(seed in 0u64..200, theta in -3.0..3.0f64) {
        let (_, ws, _) = generate_field(&GenConfig::sized(416, 416), seed).unwrap();
        let p = ws.points();
        let rotated: Vec<Point> = p.iter().map(|q| q.rotate(theta)).collect();
        let a = estimate_row_angle(&p).unwrap();
        let b = estimate_row_angle(&rotated).unwrap();
        prop_assert!(angle_diff(b, a + theta) < 1e-6);
    }

    #[test]
    fn pipeline_labels_every_point(raw in prop::collection::vec((0.0..400.0f64, 0.0..400.0f64), 2..40)) {
        let p: Vec<Point> = raw.iter().map(|&(x, y)| Point::new(x, y)).collect();
        let l = dbscan_pipeline(&p, &DbscanConfig::default());
        prop_assert_eq!(l.len(), p.len());
        prop_assert_eq!(l[0], Cluster::A);
    }
}
