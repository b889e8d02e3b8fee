use std::fs::File;
use std::io::BufWriter;

use cway_core::fieldgen::load_grid;
use cway_core::types::{Cluster, Point};

use crate::commands::{config, read_json, read_waypoints, runtime, CliError, RunConfig};
use crate::RenderArgs;

const BACKGROUND: [u8; 3] = [255, 255, 255];
const ROW: [u8; 3] = [150, 150, 150];
const PATH: [u8; 3] = [20, 130, 40];
const SIDE_A: [u8; 3] = [220, 30, 30];
const SIDE_B: [u8; 3] = [30, 70, 220];
const DOT_RADIUS: f64 = 3.0;

struct Canvas {
    w: usize,
    h: usize,
    rgb: Vec<u8>,
}

impl Canvas {
    fn put(&mut self, x: i64, y: i64, c: [u8; 3]) {
        if x >= 0 && y >= 0 && (x as usize) < self.w && (y as usize) < self.h {
            let at = (y as usize * self.w + x as usize) * 3;
            self.rgb[at..at + 3].copy_from_slice(&c);
        }
    }

    fn line(&mut self, a: Point, b: Point, c: [u8; 3]) {
        let steps = (a.dist(b) * 2.0).ceil().max(1.0) as usize;
        for i in 0..=steps {
            let p = a + (b - a) * (i as f64 / steps as f64);
            self.put(p.x.round() as i64, p.y.round() as i64, c);
        }
    }

    fn dot(&mut self, p: Point, c: [u8; 3]) {
        let r = DOT_RADIUS.ceil() as i64;
        let (cx, cy) = (p.x.round() as i64, p.y.round() as i64);
        for dy in -r..=r {
            for dx in -r..=r {
                if ((dx * dx + dy * dy) as f64) <= DOT_RADIUS * DOT_RADIUS {
                    self.put(cx + dx, cy + dy, c);
                }
            }
        }
    }
}

fn side_colour(c: Cluster) -> [u8; 3] {
    match c {
        Cluster::A => SIDE_A,
        Cluster::B => SIDE_B,
    }
}

/// Rows in gray on white, the path polyline in green, then A waypoints in red
/// and B waypoints in blue. Output size equals the grid size.
pub fn render(a: &RenderArgs) -> Result<(), CliError> {
    let grid = load_grid(&a.grid).map_err(config)?;
    let (w, h) = (grid.width(), grid.height());
    let mut canvas = Canvas {
        w,
        h,
        rgb: grid.cells().iter().flat_map(|&v| if v != 0 { ROW } else { BACKGROUND }).collect(),
    };
    if let Some(p) = &a.path {
        let v = read_json(p)?;
        let pts: Vec<Point> = v
            .get("points")
            .and_then(|l| l.as_array())
            .ok_or_else(|| config(format!("{}: no `points` array", p.display())))?
            .iter()
            .map(|q| Point::new(q["x"].as_f64().unwrap_or(f64::NAN), q["y"].as_f64().unwrap_or(f64::NAN)))
            .collect();
        if pts.iter().any(|q| !q.x.is_finite() || !q.y.is_finite()) {
            return Err(config(format!("{}: path points need numeric x and y", p.display())));
        }
        for s in pts.windows(2) {
            canvas.line(s[0], s[1], PATH);
        }
    }
    if let Some(p) = &a.waypoints {
        for wp in read_waypoints(p)?.waypoints {
            canvas.dot(wp.point(), side_colour(wp.cluster));
        }
    }
    let file = File::create(&a.out).map_err(|e| runtime(format!("{}: {e}", a.out.display())))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let run = serde_json::to_string(&RunConfig::new_for("render")).map_err(runtime)?;
    enc.add_text_chunk("run".into(), run).map_err(runtime)?;
    let mut writer = enc.write_header().map_err(runtime)?;
    writer.write_image_data(&canvas.rgb).map_err(runtime)?;
    writer.finish().map_err(runtime)
}
