use super::ModelError;
use crate::autograd::{Scalar, Tensor};
use crate::types::{Point, WaypointSet};

/// Per-cell regression targets `(p, dx, dy)` on the `(H/K) x (W/K)` output grid.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetGrid {
    pub rows: usize,
    pub cols: usize,
    pub k: usize,
    /// Row-major `rows x cols x 3`.
    pub data: Vec<f64>,
    /// Cell of every input waypoint, in input order.
    pub cells: Vec<(usize, usize)>,
}

impl TargetGrid {
    pub fn tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::new(
            vec![self.rows, self.cols, 3],
            self.data.iter().map(|&v| T::lit(v)).collect(),
        )
        .expect("target dims")
    }

    /// Per-cell loss weight: `lambda` at waypoint cells, `1 - lambda` elsewhere.
    pub fn weights<T: Scalar>(&self, lambda: f64) -> Tensor<T> {
        let data = self
            .data
            .chunks_exact(3)
            .map(|c| T::lit(if c[0] > 0.5 { lambda } else { 1.0 - lambda }))
            .collect();
        Tensor::new(vec![self.rows, self.cols, 1], data).expect("target dims")
    }
}

/// Image point encoded by offsets `(dx, dy)` in cell `(row, col)`.
pub fn decode_cell(row: usize, col: usize, dx: f64, dy: f64, k: usize) -> Point {
    let half = k as f64 / 2.0;
    Point::new(col as f64 * k as f64 + half + dx * half, row as f64 * k as f64 + half + dy * half)
}

/// Encodes waypoints as one positive cell each, offsets relative to the cell centre
/// in units of half a cell.
pub fn build_target(waypoints: &WaypointSet, h: usize, w: usize, k: usize) -> Result<TargetGrid, ModelError> {
    if k == 0 || !h.is_multiple_of(k) || !w.is_multiple_of(k) {
        return Err(ModelError::Indivisible { h, w, k });
    }
    let (rows, cols) = (h / k, w / k);
    let mut data = vec![0.0; rows * cols * 3];
    let mut owner = vec![usize::MAX; rows * cols];
    let mut cells = Vec::with_capacity(waypoints.len());
    let (kf, half) = (k as f64, k as f64 / 2.0);
    for (i, p) in waypoints.waypoints.iter().enumerate() {
        if !(p.x >= 0.0 && p.y >= 0.0 && p.x < w as f64 && p.y < h as f64) {
            return Err(ModelError::OutOfBounds { x: p.x, y: p.y, w, h });
        }
        let (row, col) = ((p.y / kf).floor() as usize, (p.x / kf).floor() as usize);
        let cell = row * cols + col;
        if owner[cell] != usize::MAX {
            return Err(ModelError::SharedCell {
                first: owner[cell],
                second: i,
                row,
                col,
            });
        }
        owner[cell] = i;
        let t = &mut data[cell * 3..][..3];
        t[0] = 1.0;
        t[1] = (p.x - col as f64 * kf - half) / half;
        t[2] = (p.y - row as f64 * kf - half) / half;
        cells.push((row, col));
    }
    Ok(TargetGrid {
        rows,
        cols,
        k,
        data,
        cells,
    })
}
