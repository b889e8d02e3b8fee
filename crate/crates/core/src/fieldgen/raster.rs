use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::{FieldSpec, GenError};
use crate::rng::stream;
use crate::types::{OccupancyGrid, Point};

/// Largest gap between consecutive curve samples; keeps strokes gap-free.
pub const SAMPLE_STEP: f64 = 0.5;

/// Share of a row's arc that holes may remove, counting the rounded caps.
const MAX_CARVED: f64 = 0.4;

/// Missing-plant model: a Poisson number of holes per row, each a uniform
/// arc-length interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HoleStats {
    /// Mean hole count per row.
    pub rate: f64,
    /// Hole length range in pixels of arc.
    pub length: (f64, f64),
}

impl Default for HoleStats {
    fn default() -> Self {
        Self {
            rate: 2.0,
            length: (3.0, 15.0),
        }
    }
}

impl HoleStats {
    pub(super) fn validate(&self) -> Result<(), GenError> {
        let (lo, hi) = self.length;
        if !(self.rate >= 0.0 && self.rate.is_finite()) || !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
            return Err(GenError::Config(
                "hole rate must be finite and non-negative with 0 <= min length <= max length".into(),
            ));
        }
        Ok(())
    }
}

/// Calls `f(row, col)` for every pixel whose centre lies within `r` of `p`.
fn disc(p: Point, r: f64, h: usize, w: usize, mut f: impl FnMut(usize, usize)) {
    let r2 = r * r + 1e-9;
    let y0 = (p.y - r).ceil().max(0.0) as usize;
    let y1 = (p.y + r).floor().min(h as f64 - 1.0);
    let x0 = (p.x - r).ceil().max(0.0) as usize;
    let x1 = (p.x + r).floor().min(w as f64 - 1.0);
    if y1 < 0.0 || x1 < 0.0 {
        return;
    }
    for row in y0..=y1 as usize {
        let dy = row as f64 - p.y;
        for col in x0..=x1 as usize {
            let dx = col as f64 - p.x;
            if dx * dx + dy * dy <= r2 {
                f(row, col);
            }
        }
    }
}

/// Sets every pixel whose centre lies within `radius` of a sample point.
pub fn rasterize_row(samples: &[Point], radius: f64, grid: &mut OccupancyGrid) {
    let (h, w) = (grid.height(), grid.width());
    for &p in samples {
        disc(p, radius, h, w, |r, c| grid.set(r, c, 1));
    }
}

/// Zeroes random arc intervals of every row. At most 40% of each row's arc
/// (holes plus their round caps) is removed.
pub fn carve_holes(mut grid: OccupancyGrid, spec: &FieldSpec, stats: &HoleStats, seed: u64) -> OccupancyGrid {
    if stats.rate <= 0.0 {
        return grid;
    }
    let Ok(count) = Poisson::new(stats.rate) else {
        return grid;
    };
    let (h, w) = (grid.height(), grid.width());
    for (i, row) in spec.rows.iter().enumerate() {
        let mut rng = stream(seed, "holes", i as u64);
        let samples = row.samples();
        let mut arc = Vec::with_capacity(samples.len());
        let mut acc = 0.0;
        arc.push(0.0);
        for pair in samples.windows(2) {
            acc += pair[0].dist(pair[1]);
            arc.push(acc);
        }
        let holes = count.sample(&mut rng) as usize;
        let mut budget = MAX_CARVED * acc;
        for _ in 0..holes {
            let len = super::uniform(&mut rng, stats.length);
            let cost = len + 2.0 * row.radius + 1.0;
            if cost > budget || len > acc {
                continue;
            }
            budget -= cost;
            let from = rng.random_range(0.0..=acc - len);
            let lo = arc.partition_point(|&a| a < from);
            let hi = arc.partition_point(|&a| a <= from + len);
            for &p in &samples[lo..hi] {
                disc(p, row.radius, h, w, |r, c| grid.set(r, c, 0));
            }
        }
    }
    grid
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_disc_is_a_cross() {
        let mut g = OccupancyGrid::new(5, 5);
        rasterize_row(&[Point::new(2.0, 2.0)], 1.0, &mut g);
        assert_eq!(g.occupied(), 5);
        for (r, c) in [(2, 2), (1, 2), (3, 2), (2, 1), (2, 3)] {
            assert_eq!(g.get(r, c), 1);
        }
    }

    #[test]
    fn disc_matches_enumeration() {
        // brute force over the whole canvas
        for (p, r) in [(Point::new(4.3, 5.7), 1.5), (Point::new(0.2, 9.9), 2.0), (Point::new(5.5, 5.5), 1.0)] {
            let mut g = OccupancyGrid::new(12, 12);
            rasterize_row(&[p], r, &mut g);
            for row in 0..12 {
                for col in 0..12 {
                    let inside = (col as f64 - p.x).powi(2) + (row as f64 - p.y).powi(2) <= r * r + 1e-9;
                    assert_eq!(g.get(row, col), u8::from(inside), "{p:?} {r} ({row},{col})");
                }
            }
        }
    }

    #[test]
    fn horizontal_stroke_height() {
        for r in [1.0, 1.3, 1.5, 2.0] {
            for y in [10.0, 10.25, 10.5] {
                let pts = super::super::sample_curve(
                    Point::new(5.0, y),
                    Point::new(20.0, y),
                    Point::new(35.0, y),
                    SAMPLE_STEP,
                );
                let mut g = OccupancyGrid::new(21, 41);
                rasterize_row(&pts, r, &mut g);
                for col in 8..=32 {
                    let height = (0..21).filter(|&row| g.get(row, col) == 1).count() as f64;
                    assert!((height - 2.0 * r).abs() <= 1.0, "r={r} y={y} col={col} height={height}");
                }
            }
        }
    }

    #[test]
    fn rasterizing_twice_is_idempotent() {
        let pts: Vec<Point> = (0..40).map(|i| Point::new(3.0 + i as f64 * 0.4, 4.0 + i as f64 * 0.2)).collect();
        let mut g = OccupancyGrid::new(20, 25);
        rasterize_row(&pts, 1.7, &mut g);
        let once = g.clone();
        rasterize_row(&pts, 1.7, &mut g);
        assert_eq!(g, once);
    }
}
