use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{generate_field, GenConfig, GenError};
use crate::rng::stream;
use crate::types::{OccupancyGrid, Waypoint, WaypointSet};

/// Per-image annotation stored next to each grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Label {
    pub waypoints: Vec<Waypoint>,
    pub n_rows: usize,
    pub curved: bool,
    pub seed: u64,
}

impl Label {
    pub fn waypoint_set(&self) -> WaypointSet {
        WaypointSet::new(self.waypoints.clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Counts {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }

    fn splits(&self) -> [(&'static str, usize); 3] {
        [("train", self.train), ("val", self.val), ("test", self.test)]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitInfo {
    pub name: String,
    pub count: usize,
    /// Per-image generator seeds in file order.
    pub seeds: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub total: usize,
    pub splits: Vec<SplitInfo>,
    pub config: GenConfig,
}

/// One grid with its annotation, as loaded from a split directory.
#[derive(Clone, Debug)]
pub struct Sample {
    pub name: String,
    pub grid: OccupancyGrid,
    pub label: Label,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> GenError + '_ {
    move |source| GenError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn format_err(path: &Path, msg: impl ToString) -> GenError {
    GenError::Format {
        path: path.display().to_string(),
        msg: msg.to_string(),
    }
}

/// Writes an 8-bit grayscale PNG with occupied pixels at 255.
pub fn save_grid(path: &Path, grid: &OccupancyGrid) -> Result<(), GenError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), grid.width() as u32, grid.height() as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| format_err(path, e))?;
    let pixels: Vec<u8> = grid.cells().iter().map(|&v| v * 255).collect();
    writer.write_image_data(&pixels).map_err(|e| format_err(path, e))?;
    writer.finish().map_err(|e| format_err(path, e))
}

/// Reads any 8/16-bit PNG; a pixel is occupied when its mean colour exceeds 127.
pub fn load_grid(path: &Path) -> Result<OccupancyGrid, GenError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut dec = png::Decoder::new(BufReader::new(file));
    dec.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = dec.read_info().map_err(|e| format_err(path, e))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| format_err(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| format_err(path, e))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let (channels, alpha) = match info.color_type {
        png::ColorType::Grayscale => (1, false),
        png::ColorType::GrayscaleAlpha => (2, true),
        png::ColorType::Rgb => (3, false),
        png::ColorType::Rgba => (4, true),
        png::ColorType::Indexed => return Err(format_err(path, "unexpanded palette image")),
    };
    let colour = if alpha { channels - 1 } else { channels };
    let mut cells = Vec::with_capacity(w * h);
    for row in 0..h {
        let line = &buf[row * info.line_size..][..w * channels];
        for px in line.chunks_exact(channels) {
            let sum: u32 = px[..colour].iter().map(|&v| v as u32).sum();
            cells.push(u8::from(sum > 127 * colour as u32));
        }
    }
    OccupancyGrid::from_cells(h, w, cells).ok_or_else(|| format_err(path, "pixel count mismatch"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), GenError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| format_err(path, e))?;
    text.push('\n');
    let mut f = File::create(path).map_err(io_err(path))?;
    f.write_all(text.as_bytes()).map_err(io_err(path))
}

pub fn save_label(path: &Path, label: &Label) -> Result<(), GenError> {
    write_json(path, label)
}

pub fn load_label(path: &Path) -> Result<Label, GenError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| format_err(path, e))
}

/// Loads every `images/NAME.png` that has a matching `labels/NAME.json`, sorted by name.
pub fn load_split(dir: &Path) -> Result<Vec<Sample>, GenError> {
    let images = dir.join("images");
    let labels = dir.join("labels");
    let mut names: Vec<String> = fs::read_dir(&images)
        .map_err(io_err(&images))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            name.strip_suffix(".png").map(str::to_string)
        })
        .collect();
    names.sort();
    names
        .into_par_iter()
        .map(|name| {
            let grid = load_grid(&images.join(format!("{name}.png")))?;
            let label = load_label(&labels.join(format!("{name}.json")))?;
            Ok(Sample { name, grid, label })
        })
        .collect()
}

/// Writes `DIR/{train,val,test}/{images,labels}/NNNNN.{png,json}` plus `DIR/manifest.json`.
pub fn generate_dataset(config: &GenConfig, counts: Counts, seed: u64, out_dir: &Path) -> Result<Manifest, GenError> {
    config.validate()?;
    let mut splits = Vec::new();
    for (name, count) in counts.splits() {
        let dir = out_dir.join(name);
        let (images, labels) = (dir.join("images"), dir.join("labels"));
        for d in [&images, &labels] {
            fs::create_dir_all(d).map_err(io_err(d))?;
        }
        let seeds: Vec<u64> = (0..count).map(|i| stream(seed, name, i as u64).random()).collect();
        seeds
            .par_iter()
            .enumerate()
            .try_for_each(|(i, &s)| write_sample(config, s, &images, &labels, i))?;
        splits.push(SplitInfo {
            name: name.to_string(),
            count,
            seeds,
        });
    }
    let manifest = Manifest {
        seed,
        total: counts.total(),
        splits,
        config: config.clone(),
    };
    write_json(&out_dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

fn write_sample(config: &GenConfig, seed: u64, images: &Path, labels: &Path, i: usize) -> Result<(), GenError> {
    let (grid, waypoints, spec) = generate_field(config, seed)?;
    let stem = format!("{i:05}");
    save_grid(&images.join(format!("{stem}.png")), &grid)?;
    let label = Label {
        waypoints: waypoints.waypoints,
        n_rows: spec.n,
        curved: spec.curved,
        seed,
    };
    save_label(&labels.join(format!("{stem}.json")), &label)
}

