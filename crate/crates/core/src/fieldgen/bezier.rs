use crate::types::Point;

/// Quadratic Bézier `(1-t)^2 p0 + 2(1-t)t p1 + t^2 p2`.
pub fn bezier_point(p0: Point, p1: Point, p2: Point, t: f64) -> Point {
    let u = 1.0 - t;
    p0 * (u * u) + p1 * (2.0 * u * t) + p2 * (t * t)
}

/// Points along the curve no more than `max_step` pixels apart.
///
/// The curve speed never exceeds twice the longer control leg, which bounds
/// the spacing of uniform parameter steps.
pub fn sample_curve(p0: Point, p1: Point, p2: Point, max_step: f64) -> Vec<Point> {
    let speed = 2.0 * p0.dist(p1).max(p1.dist(p2));
    let n = ((speed / max_step).ceil() as usize).max(1);
    (0..=n).map(|i| bezier_point(p0, p1, p2, i as f64 / n as f64)).collect()
}
