//! Top-view raster of the path walked since the last landmark.
//!
//! The trace start is pinned to the image center. Points are projected onto a
//! local east/north plane about the start and drawn at the current
//! meters-per-pixel scale. When a new point would land closer than
//! [`MARGIN`] pixels to the border, the scale grows by [`RESCALE_FACTOR`]
//! until it fits and the whole trace is drawn again.

use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::citygraph::{GeoPoint, EARTH_RADIUS_M};
use crate::error::{NavError, Result};

pub const WIDTH: usize = 200;
pub const HEIGHT: usize = 200;
pub const MARGIN: i64 = 10;
pub const INITIAL_SCALE: f64 = 5.0;
pub const RESCALE_FACTOR: f64 = 1.25;
/// Half side of the square start marker (5x5 px).
pub const START_HALF_SIDE: i64 = 2;
/// Radius of the current-position disk.
pub const CURRENT_RADIUS: i64 = 3;

const CENTER_X: i64 = (WIDTH / 2) as i64;
const CENTER_Y: i64 = (HEIGHT / 2) as i64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Cell {
    Background = 0,
    Path = 1,
    StartMarker = 2,
    CurrentMarker = 3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryImage {
    origin: GeoPoint,
    trace: Vec<GeoPoint>,
    rescales: u32,
    scale: f64,
    /// Pixel of each trace point at the current scale.
    pixels: Vec<(i64, i64)>,
    path: Vec<bool>,
    raster: Vec<Cell>,
}

/// Local tangent-plane offset of `p` from `origin`, meters (east, north).
pub fn project(origin: GeoPoint, p: GeoPoint) -> (f64, f64) {
    let k = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
    let east = (p.lon - origin.lon) * origin.lat.to_radians().cos() * k;
    let north = (p.lat - origin.lat) * k;
    (east, north)
}

fn to_pixel(offset: (f64, f64), scale: f64) -> (i64, i64) {
    let x = (CENTER_X as f64 + offset.0 / scale).round();
    let y = (CENTER_Y as f64 - offset.1 / scale).round();
    (x as i64, y as i64)
}

fn within_margin((x, y): (i64, i64)) -> bool {
    (MARGIN..=WIDTH as i64 - MARGIN).contains(&x) && (MARGIN..=HEIGHT as i64 - MARGIN).contains(&y)
}

fn in_bounds((x, y): (i64, i64)) -> bool {
    x >= 0 && y >= 0 && (x as usize) < WIDTH && (y as usize) < HEIGHT
}

fn index((x, y): (i64, i64)) -> usize {
    y as usize * WIDTH + x as usize
}

/// Integer line from `a` to `b` inclusive (Bresenham, all octants).
pub fn line_pixels(a: (i64, i64), b: (i64, i64)) -> Vec<(i64, i64)> {
    let (mut x, mut y) = a;
    let dx = (b.0 - a.0).abs();
    let dy = -(b.1 - a.1).abs();
    let sx = if a.0 < b.0 { 1 } else { -1 };
    let sy = if a.1 < b.1 { 1 } else { -1 };
    let mut err = dx + dy;
    let mut out = Vec::with_capacity((dx - dy + 1) as usize);
    loop {
        out.push((x, y));
        if (x, y) == b {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
    out
}

fn disk_footprint(c: (i64, i64)) -> impl Iterator<Item = (i64, i64)> {
    let r = CURRENT_RADIUS;
    (-r..=r).flat_map(move |dy| (-r..=r).map(move |dx| (c.0 + dx, c.1 + dy)))
}

impl MemoryImage {
    pub fn init(start: GeoPoint) -> Result<Self> {
        if !(start.lat.is_finite() && start.lon.is_finite()) {
            return Err(NavError::InvalidPoint {
                lat: start.lat,
                lon: start.lon,
            });
        }
        let mut mem = MemoryImage {
            origin: start,
            trace: vec![start],
            rescales: 0,
            scale: INITIAL_SCALE,
            pixels: Vec::new(),
            path: vec![false; WIDTH * HEIGHT],
            raster: vec![Cell::Background; WIDTH * HEIGHT],
        };
        mem.render_all();
        Ok(mem)
    }

    /// Starts over from `current`; equivalent to [`MemoryImage::init`].
    pub fn reset_at_landmark(&mut self, current: GeoPoint) -> Result<()> {
        *self = Self::init(current)?;
        Ok(())
    }

    pub fn append(&mut self, p: GeoPoint) -> Result<()> {
        if !(p.lat.is_finite() && p.lon.is_finite()) {
            return Err(NavError::InvalidPoint { lat: p.lat, lon: p.lon });
        }
        let offset = project(self.origin, p);
        let mut rescales = self.rescales;
        let mut pixel = to_pixel(offset, scale_for(rescales));
        while !within_margin(pixel) {
            rescales += 1;
            pixel = to_pixel(offset, scale_for(rescales));
        }
        self.trace.push(p);

        if rescales != self.rescales {
            self.rescales = rescales;
            self.scale = scale_for(rescales);
            self.render_all();
            return Ok(());
        }

        let prev = *self.pixels.last().expect("trace is never empty");
        self.pixels.push(pixel);
        let segment = line_pixels(prev, pixel);
        for &px in &segment {
            self.path[index(px)] = true;
        }
        for px in disk_footprint(prev).chain(segment).chain(disk_footprint(pixel)) {
            if in_bounds(px) {
                self.raster[index(px)] = self.compose(px);
            }
        }
        Ok(())
    }

    fn render_all(&mut self) {
        self.pixels = self
            .trace
            .iter()
            .map(|&p| to_pixel(project(self.origin, p), self.scale))
            .collect();
        self.path = rasterize_path(&self.pixels);
        let raster: Vec<Cell> = (0..HEIGHT as i64)
            .flat_map(|y| (0..WIDTH as i64).map(move |x| (x, y)))
            .map(|px| self.compose(px))
            .collect();
        self.raster = raster;
    }

    /// Class of one pixel from the path layer and the two markers.
    fn compose(&self, (x, y): (i64, i64)) -> Cell {
        let (cx, cy) = *self.pixels.last().expect("trace is never empty");
        if (x - cx).pow(2) + (y - cy).pow(2) <= CURRENT_RADIUS * CURRENT_RADIUS {
            return Cell::CurrentMarker;
        }
        let (sx, sy) = self.pixels[0];
        if (x - sx).abs() <= START_HALF_SIDE && (y - sy).abs() <= START_HALF_SIDE {
            return Cell::StartMarker;
        }
        if self.path[index((x, y))] {
            Cell::Path
        } else {
            Cell::Background
        }
    }

    /// One-shot rendering of the full trace at the current scale.
    pub fn rerender(&self) -> Vec<Cell> {
        let mut copy = self.clone();
        copy.render_all();
        copy.raster
    }

    pub fn raster(&self) -> &[Cell] {
        &self.raster
    }

    pub fn cell(&self, x: usize, y: usize) -> Cell {
        self.raster[y * WIDTH + x]
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Number of ×1.25 steps since the last reset.
    pub fn rescale_count(&self) -> u32 {
        self.rescales
    }

    pub fn trace(&self) -> &[GeoPoint] {
        &self.trace
    }

    pub fn origin(&self) -> GeoPoint {
        self.origin
    }

    pub fn current_pixel(&self) -> (i64, i64) {
        *self.pixels.last().expect("trace is never empty")
    }

    pub fn start_pixel(&self) -> (i64, i64) {
        self.pixels[0]
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        let mut img = RgbImage::new(WIDTH as u32, HEIGHT as u32);
        for (i, &c) in self.raster.iter().enumerate() {
            let color = match c {
                Cell::Background => Rgb([255, 255, 255]),
                Cell::Path => Rgb([255, 0, 0]),
                Cell::StartMarker | Cell::CurrentMarker => Rgb([0, 0, 255]),
            };
            img.put_pixel((i % WIDTH) as u32, (i / WIDTH) as u32, color);
        }
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, ImageFormat::Png)
            .map_err(|e| NavError::Image(e.to_string()))?;
        Ok(out.into_inner())
    }

    /// Writes `<stem>.png` and `<stem>.json` with the scale.
    pub fn export(&self, stem: impl AsRef<Path>) -> Result<()> {
        let stem = stem.as_ref();
        let png = stem.with_extension("png");
        std::fs::write(&png, self.to_png()?).map_err(|e| NavError::io(&png, e))?;
        let side = stem.with_extension("json");
        let meta = MemorySidecar {
            scale_m_per_px: self.scale,
        };
        std::fs::write(&side, serde_json::to_string(&meta)?).map_err(|e| NavError::io(&side, e))
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct MemorySidecar {
    pub scale_m_per_px: f64,
}

fn scale_for(rescales: u32) -> f64 {
    INITIAL_SCALE * RESCALE_FACTOR.powi(rescales as i32)
}

fn rasterize_path(pixels: &[(i64, i64)]) -> Vec<bool> {
    let mut path = vec![false; WIDTH * HEIGHT];
    path[index(pixels[0])] = true;
    for w in pixels.windows(2) {
        for px in line_pixels(w[0], w[1]) {
            path[index(px)] = true;
        }
    }
    path
}

/// Turns a memory image into a feature vector.
pub trait MemoryFeaturizer: Send + Sync {
    fn featurize(&self, mem: &MemoryImage) -> Vec<f64>;
}

/// Fraction of non-background pixels in each cell of a 10x10 block grid,
/// followed by the scale relative to [`INITIAL_SCALE`].
#[derive(Debug, Clone, Copy, Default)]
pub struct BlockOccupancy;

pub const BLOCKS: usize = 10;

impl MemoryFeaturizer for BlockOccupancy {
    fn featurize(&self, mem: &MemoryImage) -> Vec<f64> {
        let bw = WIDTH / BLOCKS;
        let bh = HEIGHT / BLOCKS;
        let mut counts = vec![0usize; BLOCKS * BLOCKS];
        for (i, &c) in mem.raster().iter().enumerate() {
            if c != Cell::Background {
                let (x, y) = (i % WIDTH, i / WIDTH);
                counts[(y / bh) * BLOCKS + x / bw] += 1;
            }
        }
        let area = (bw * bh) as f64;
        let mut out: Vec<f64> = counts.into_iter().map(|c| c as f64 / area).collect();
        out.push(mem.scale() / INITIAL_SCALE);
        out
    }
}
