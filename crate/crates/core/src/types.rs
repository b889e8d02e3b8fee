use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

/// Image-frame point in pixels; `x` grows right, `y` grows down, pixel
/// `(col, row)` is centred on `(col, row)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, o: Point) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dist(self, o: Point) -> f64 {
        (self - o).norm()
    }

    pub fn midpoint(self, o: Point) -> Point {
        Point::new(0.5 * (self.x + o.x), 0.5 * (self.y + o.y))
    }

    /// Counter-clockwise rotation by `angle` radians about the origin.
    pub fn rotate(self, angle: f64) -> Point {
        let (s, c) = angle.sin_cos();
        Point::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }
}

/// Unit direction of largest spread of `points` about `center`, `None` when the
/// points are collocated or fewer than two.
pub fn principal_axis(points: &[Point], center: impl Fn(usize) -> Point) -> Option<Point> {
    if points.len() < 2 {
        return None;
    }
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (i, &p) in points.iter().enumerate() {
        let d = p - center(i);
        sxx += d.x * d.x;
        sxy += d.x * d.y;
        syy += d.y * d.y;
    }
    let scale = sxx + syy;
    if scale <= 1e-12 * points.len() as f64 {
        return None;
    }
    // orientation of the major eigenvector of [[sxx, sxy], [sxy, syy]]
    let theta = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    Some(Point::new(theta.cos(), theta.sin()))
}

/// Centroid of `points`; the origin for an empty slice.
pub fn centroid(points: &[Point]) -> Point {
    if points.is_empty() {
        return Point::default();
    }
    let sum = points.iter().fold(Point::default(), |a, &p| a + p);
    sum * (1.0 / points.len() as f64)
}

/// One of the two row-end regions. Serialized as `0` (A) / `1` (B).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Cluster {
    A,
    B,
}

impl Cluster {
    pub fn other(self) -> Cluster {
        match self {
            Cluster::A => Cluster::B,
            Cluster::B => Cluster::A,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Cluster::A => 0,
            Cluster::B => 1,
        }
    }
}

impl From<Cluster> for u8 {
    fn from(c: Cluster) -> u8 {
        c.index() as u8
    }
}

impl TryFrom<u8> for Cluster {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, String> {
        match v {
            0 => Ok(Cluster::A),
            1 => Ok(Cluster::B),
            other => Err(format!("cluster must be 0 or 1, got {other}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub x: f64,
    pub y: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    pub cluster: Cluster,
}

impl Waypoint {
    pub fn new(p: Point, cluster: Cluster) -> Self {
        Self {
            x: p.x,
            y: p.y,
            confidence: None,
            cluster,
        }
    }

    pub fn point(&self) -> Point {
        Point::new(self.x, self.y)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WaypointSet {
    pub waypoints: Vec<Waypoint>,
}

impl WaypointSet {
    pub fn new(waypoints: Vec<Waypoint>) -> Self {
        Self { waypoints }
    }

    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    pub fn points(&self) -> Vec<Point> {
        self.waypoints.iter().map(Waypoint::point).collect()
    }

    pub fn labels(&self) -> Vec<Cluster> {
        self.waypoints.iter().map(|w| w.cluster).collect()
    }
}

/// Binary top-view raster: 1 marks plant rows, 0 free terrain.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OccupancyGrid {
    height: usize,
    width: usize,
    cells: Vec<u8>,
}

impl OccupancyGrid {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            cells: vec![0; height * width],
        }
    }

    /// Builds a grid from row-major values; anything non-zero counts as occupied.
    pub fn from_cells(height: usize, width: usize, cells: Vec<u8>) -> Option<Self> {
        (cells.len() == height * width).then(|| Self {
            height,
            width,
            cells: cells.into_iter().map(|v| u8::from(v != 0)).collect(),
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.cells[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: u8) {
        self.cells[row * self.width + col] = u8::from(value != 0);
    }

    pub fn occupied(&self) -> usize {
        self.cells.iter().filter(|&&v| v != 0).count()
    }
}
