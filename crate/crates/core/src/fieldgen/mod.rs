//! Synthetic row-crop occupancy grids with ground-truth row-end waypoints.
//!
//! A field is laid out in a local frame where `u` runs along the rows and
//! `v` across them. Rows are clipped by two straight borders, optionally bent
//! about the field centre line, rotated to a random angle and rasterized as
//! chains of small discs. Waypoints sit halfway between the ends of adjacent
//! rows: side A collects the row starts, side B the row ends.

mod bezier;
mod dataset;
mod raster;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::stream;
use crate::types::{Cluster, OccupancyGrid, Point, Waypoint, WaypointSet};

pub use bezier::{bezier_point, sample_curve};
pub use dataset::{
    generate_dataset, load_grid, load_label, load_split, save_grid, save_label, Counts, Label, Manifest,
    Sample, SplitInfo,
};
pub use raster::{carve_holes, rasterize_row, HoleStats, SAMPLE_STEP};

#[derive(Debug, Error)]
pub enum GenError {
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error("no feasible field layout after {attempts} attempts")]
    Infeasible { attempts: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Format { path: String, msg: String },
}

/// Generator parameters. Ranges are inclusive `[lo, hi]` pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub height: usize,
    pub width: usize,
    pub rows: (usize, usize),
    /// Row direction in radians, measured from the image x axis towards y.
    pub angle: (f64, f64),
    pub radius: (f64, f64),
    pub spacing: (f64, f64),
    /// Keep-out band along the image edges, in pixels.
    pub margin: f64,
    /// Largest |slope| of a border line relative to the cross-row axis.
    pub border_slope: f64,
    /// Shortest straight row as a multiple of the cross-row extent.
    pub min_length_ratio: f64,
    pub holes: HoleStats,
    /// Standard deviation of the endpoint and control-point jitter.
    pub noise: f64,
    pub curved: bool,
    /// Share of curved images when `curved` is set.
    pub curved_fraction: f64,
    /// Bend magnitude: apex offset of the centre row over its length.
    pub bend: (f64, f64),
    /// Shortest leg between a row end and the bend apex.
    pub min_leg: f64,
    /// Smallest allowed distance between any two waypoints.
    pub min_separation: f64,
    /// Reject layouts placing two waypoints in one `cell x cell` block (0 disables).
    pub cell: usize,
    pub max_attempts: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            height: 800,
            width: 800,
            rows: (10, 50),
            angle: (-std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2),
            radius: (1.0, 2.0),
            spacing: (8.0, 16.0),
            margin: 40.0,
            border_slope: 0.4,
            min_length_ratio: 1.0,
            holes: HoleStats::default(),
            noise: 1.5,
            curved: false,
            curved_fraction: 1.0,
            bend: (0.05, 0.3),
            min_leg: 8.0,
            min_separation: 8.0,
            cell: 8,
            max_attempts: 2000,
        }
    }
}

impl GenConfig {
    /// Same field statistics on an `h x w` canvas.
    pub fn sized(h: usize, w: usize) -> Self {
        Self {
            height: h,
            width: w,
            ..Self::default()
        }
    }

    /// Curved fields with a strong bend, where the two row-end regions are far from convex.
    pub fn strongly_curved(h: usize, w: usize) -> Self {
        Self {
            curved: true,
            bend: (0.3, 0.45),
            ..Self::sized(h, w)
        }
    }

    pub fn validate(&self) -> Result<(), GenError> {
        let bad = |m: &str| Err(GenError::Config(m.to_string()));
        let range_ok = |r: (f64, f64)| r.0.is_finite() && r.1.is_finite() && r.0 <= r.1;
        if self.rows.0 < 2 || self.rows.0 > self.rows.1 {
            return bad("row range must satisfy 2 <= min <= max");
        }
        if !range_ok(self.angle) || !range_ok(self.radius) || !range_ok(self.spacing) || !range_ok(self.bend) {
            return bad("ranges must be finite with lo <= hi");
        }
        if self.radius.0 <= 0.0 {
            return bad("row radius must be positive");
        }
        if self.spacing.0 <= 0.0 {
            return bad("row spacing must be positive");
        }
        if self.bend.0 < 0.0 || self.bend.1 >= 1.0 {
            return bad("bend magnitude must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.curved_fraction) {
            return bad("curved fraction must lie in [0, 1]");
        }
        if self.noise < 0.0 || self.margin < 0.0 || self.border_slope < 0.0 || self.min_length_ratio < 0.0 {
            return bad("noise, margin, border slope and length ratio must be non-negative");
        }
        self.holes.validate()?;
        if self.max_attempts == 0 {
            return bad("max_attempts must be positive");
        }
        if self.max_cross_extent() < (self.rows.0 - 1) as f64 * self.spacing.0 {
            return bad("image too small for the minimum row count at the minimum spacing");
        }
        Ok(())
    }

    /// Usable inner square side.
    fn inner(&self) -> f64 {
        self.height.min(self.width) as f64 - 2.0 * self.margin - 2.0 * self.radius.1
    }

    /// Largest cross-row extent for which a field with the minimum length ratio
    /// still fits at the least favourable angle within the angle range.
    fn max_cross_extent(&self) -> f64 {
        let rho = self.min_length_ratio;
        let worst = sample_angles(self.angle)
            .map(|a| {
                let (s, c) = (a.sin().abs(), a.cos().abs());
                (rho * c + s).max(rho * s + c)
            })
            .fold(0.0f64, f64::max);
        (self.inner() / worst.max(1.0)).max(0.0)
    }
}

fn sample_angles(r: (f64, f64)) -> impl Iterator<Item = f64> {
    (0..=64).map(move |i| r.0 + (r.1 - r.0) * i as f64 / 64.0)
}

/// One rasterized row: a quadratic Bézier from `start` through `control` to `end`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowSpec {
    pub start: Point,
    pub control: Point,
    pub end: Point,
    pub radius: f64,
}

impl RowSpec {
    pub fn samples(&self) -> Vec<Point> {
        sample_curve(self.start, self.control, self.end, SAMPLE_STEP)
    }
}

/// Geometry behind one generated grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub n: usize,
    pub angle: f64,
    pub curved: bool,
    /// Half-angle of the bend between the two row arms, 0 for straight fields.
    pub bend: f64,
    pub rows: Vec<RowSpec>,
    /// Corners of the field outline: first start, last start, last end, first end.
    pub border: Vec<Point>,
}

/// Layout in the local frame before rotation, translation and noise.
struct Layout {
    offsets: Vec<f64>,
    slopes: (f64, f64),
    phi: f64,
}

impl Layout {
    /// Control points of the row at cross offset `v` for border half-width `h`.
    fn row(&self, v: f64, h: f64) -> [Point; 3] {
        let (sp, cp) = self.phi.sin_cos();
        let e_l = Point::new(-cp, -sp);
        let e_r = Point::new(cp, -sp);
        let n_l = Point::new(-sp, cp);
        let n_r = Point::new(sp, cp);
        let left = h - self.slopes.0 * v;
        let right = h + self.slopes.1 * v;
        [n_l * v + e_l * left, Point::new(0.0, v / cp), n_r * v + e_r * right]
    }

    /// Smallest half-width keeping every row valid.
    fn min_half_width(&self, rho: f64) -> f64 {
        let span = self.offsets[self.offsets.len() - 1] - self.offsets[0];
        let tan = self.phi.tan();
        let (tl, tr) = self.slopes;
        self.offsets
            .iter()
            .map(|&v| {
                if self.phi == 0.0 {
                    // row length 2h + (tr - tl) v must reach rho * span
                    0.5 * (rho * span - (tr - tl) * v)
                } else {
                    // both legs from the ends to the apex must stay positive
                    let leg_l = -tl * v + v * tan;
                    let leg_r = tr * v + v * tan;
                    -leg_l.min(leg_r)
                }
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Bounding box of all control points after rotating by `angle`.
    fn extent(&self, h: f64, angle: f64) -> (Point, Point) {
        let mut lo = Point::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for &v in &self.offsets {
            for p in self.row(v, h) {
                let q = p.rotate(angle);
                lo = Point::new(lo.x.min(q.x), lo.y.min(q.y));
                hi = Point::new(hi.x.max(q.x), hi.y.max(q.y));
            }
        }
        (lo, hi)
    }
}

fn uniform<R: Rng>(rng: &mut R, r: (f64, f64)) -> f64 {
    if r.1 > r.0 {
        rng.random_range(r.0..=r.1)
    } else {
        r.0
    }
}

/// Generates one field. Deterministic in `(config, seed)`.
pub fn generate_field(config: &GenConfig, seed: u64) -> Result<(OccupancyGrid, WaypointSet, FieldSpec), GenError> {
    config.validate()?;
    let mut kind = stream(seed, "kind", 0);
    let curved = config.curved && kind.random_bool(config.curved_fraction);
    for attempt in 0..config.max_attempts {
        let mut rng = stream(seed, "layout", attempt as u64);
        if let Some((spec, waypoints)) = try_layout(config, curved, &mut rng) {
            let mut grid = OccupancyGrid::new(config.height, config.width);
            for row in &spec.rows {
                rasterize_row(&row.samples(), row.radius, &mut grid);
            }
            let grid = carve_holes(grid, &spec, &config.holes, seed);
            return Ok((grid, waypoints, spec));
        }
    }
    Err(GenError::Infeasible {
        attempts: config.max_attempts,
    })
}

fn try_layout<R: Rng>(cfg: &GenConfig, curved: bool, rng: &mut R) -> Option<(FieldSpec, WaypointSet)> {
    let angle = uniform(rng, cfg.angle);
    let (s_lo, s_hi) = cfg.spacing;
    let max_extent = cfg.max_cross_extent();
    // at most as many rows as fit at the mean spacing, so dense fields do not
    // squeeze every gap down to the minimum
    let n_fit = (max_extent / (0.5 * (s_lo + s_hi))).floor() as usize + 1;
    let n_hi = cfg.rows.1.min(n_fit).max(cfg.rows.0);
    let n = rng.random_range(cfg.rows.0..=n_hi);
    // cap the spacing so that n rows at the drawn spacings still fit
    let s_cap = s_hi.min(max_extent / (n - 1) as f64).max(s_lo);
    let gaps: Vec<f64> = (0..n - 1).map(|_| uniform(rng, (s_lo, s_cap))).collect();
    let span: f64 = gaps.iter().sum();
    let mut offsets = Vec::with_capacity(n);
    let mut v = -0.5 * span;
    offsets.push(v);
    for g in &gaps {
        v += g;
        offsets.push(v);
    }
    let slopes = (
        uniform(rng, (-cfg.border_slope, cfg.border_slope)),
        uniform(rng, (-cfg.border_slope, cfg.border_slope)),
    );
    let phi = if curved {
        let c = uniform(rng, cfg.bend);
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        (2.0 * c).atan() * sign
    } else {
        0.0
    };
    let layout = Layout { offsets, slopes, phi };

    let h_lo = if curved {
        layout.min_half_width(0.0) + cfg.min_leg
    } else {
        layout.min_half_width(cfg.min_length_ratio).max(0.5 * cfg.min_leg)
    };
    let room = Point::new(
        cfg.width as f64 - 1.0 - 2.0 * cfg.margin,
        cfg.height as f64 - 1.0 - 2.0 * cfg.margin,
    );
    let fits = |h: f64| {
        let (lo, hi) = layout.extent(h, angle);
        hi.x - lo.x <= room.x && hi.y - lo.y <= room.y
    };
    if !fits(h_lo) {
        return None;
    }
    // widest fitting half-width by bisection; extents grow with h
    let (mut a, mut b) = (h_lo, h_lo + room.x.max(room.y));
    for _ in 0..60 {
        let mid = 0.5 * (a + b);
        if fits(mid) {
            a = mid;
        } else {
            b = mid;
        }
    }
    let h = uniform(rng, (h_lo, a));
    let (lo, hi) = layout.extent(h, angle);
    let shift = Point::new(
        cfg.margin - lo.x + uniform(rng, (0.0, (room.x - (hi.x - lo.x)).max(0.0))),
        cfg.margin - lo.y + uniform(rng, (0.0, (room.y - (hi.y - lo.y)).max(0.0))),
    );

    let jitter = Normal::new(0.0, cfg.noise.max(f64::MIN_POSITIVE)).ok()?;
    let noise = |rng: &mut R| if cfg.noise > 0.0 { jitter.sample(rng) } else { 0.0 };
    let (sp, cp) = phi.sin_cos();
    let dir_l = Point::new(-cp, -sp).rotate(angle);
    let dir_r = Point::new(cp, -sp).rotate(angle);
    let mut rows = Vec::with_capacity(n);
    for &v in &layout.offsets {
        let [p0, p1, p2] = layout.row(v, h).map(|p| p.rotate(angle) + shift);
        // endpoint jitter runs along the row so cross-row spacing is preserved
        let start = p0 + dir_l * noise(rng);
        let end = p2 + dir_r * noise(rng);
        let control = p1 + Point::new(noise(rng), noise(rng));
        let radius = uniform(rng, cfg.radius);
        rows.push(RowSpec {
            start,
            control,
            end,
            radius,
        });
    }

    let limit = |p: Point| {
        let r = cfg.radius.1;
        p.x >= r && p.y >= r && p.x <= cfg.width as f64 - 1.0 - r && p.y <= cfg.height as f64 - 1.0 - r
    };
    if !rows.iter().all(|r| limit(r.start) && limit(r.control) && limit(r.end)) {
        return None;
    }

    let mut waypoints = Vec::with_capacity(2 * (n - 1));
    let sides: [(Cluster, fn(&RowSpec) -> Point); 2] = [(Cluster::A, |r| r.start), (Cluster::B, |r| r.end)];
    for (cluster, end_of) in sides {
        for pair in rows.windows(2) {
            waypoints.push(Waypoint::new(end_of(&pair[0]).midpoint(end_of(&pair[1])), cluster));
        }
    }
    if !well_separated(&waypoints, cfg) {
        return None;
    }

    let border = vec![rows[0].start, rows[n - 1].start, rows[n - 1].end, rows[0].end];
    let spec = FieldSpec {
        n,
        angle,
        curved,
        bend: phi,
        rows,
        border,
    };
    Some((spec, WaypointSet::new(waypoints)))
}

fn well_separated(w: &[Waypoint], cfg: &GenConfig) -> bool {
    let min2 = cfg.min_separation * cfg.min_separation;
    let mut cells = std::collections::HashSet::new();
    for (i, a) in w.iter().enumerate() {
        if cfg.cell > 0 {
            let k = cfg.cell as f64;
            if !cells.insert(((a.x / k).floor() as i64, (a.y / k).floor() as i64)) {
                return false;
            }
        }
        for b in &w[i + 1..] {
            let (dx, dy) = (a.x - b.x, a.y - b.y);
            if dx * dx + dy * dy < min2 {
                return false;
            }
        }
    }
    true
}
