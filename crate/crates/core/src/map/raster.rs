//! Boundary extraction from a grayscale floor-plan raster.
//!
//! Only axis-aligned walls are found: dark runs along rows and columns of at
//! least `min_len` pixels. Runs with the same extent in adjacent rows (or
//! columns) are merged into one band and reported as a single segment along
//! the band's centre line. Segment ends sit on pixel edges, so a run covering
//! pixels `x0..=x1` spans `[x0, x1 + 1]`.

use std::collections::BTreeMap;
use std::path::Path;

use super::{Boundary, BoundarySource, MapError};
use crate::geometry::FloorPoint;

/// Luminance below which a pixel counts as wall.
pub const DARK_THRESHOLD: u8 = 128;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    /// Row-major luminance.
    pub data: Vec<u8>,
}

impl Raster {
    pub fn new(width: usize, height: usize, fill: u8) -> Self {
        Self {
            width,
            height,
            data: vec![fill; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    /// Fills the inclusive pixel rectangle with `v`, clipped to the raster.
    pub fn fill_rect(&mut self, x0: usize, y0: usize, x1: usize, y1: usize, v: u8) {
        for y in y0..=y1.min(self.height.saturating_sub(1)) {
            for x in x0..=x1.min(self.width.saturating_sub(1)) {
                self.set(x, y, v);
            }
        }
    }

    pub fn from_png(path: &Path) -> Result<Self, image::ImageError> {
        let img = image::open(path)?.into_luma8();
        Ok(Self {
            width: img.width() as usize,
            height: img.height() as usize,
            data: img.into_raw(),
        })
    }

    pub fn save_png(&self, path: &Path) -> Result<(), image::ImageError> {
        let img = image::GrayImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .expect("raster buffer matches its dimensions");
        img.save(path)
    }
}

/// Dark runs `(start, end_inclusive)` along one line of pixels.
fn runs(line: impl Iterator<Item = u8>, min_len: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    let mut n = 0;
    for (i, v) in line.enumerate() {
        n = i + 1;
        match (v < DARK_THRESHOLD, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                if i - s >= min_len {
                    out.push((s, i - 1));
                }
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        if n - s >= min_len {
            out.push((s, n - 1));
        }
    }
    out
}

/// Merges runs of equal extent across consecutive lines into bands
/// `(run, first_line, last_line)`.
fn bands(lines: usize, mut runs_of: impl FnMut(usize) -> Vec<(usize, usize)>) -> Vec<((usize, usize), usize, usize)> {
    let mut open: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut done = Vec::new();
    for line in 0..lines {
        let current = runs_of(line);
        let closed: Vec<(usize, usize)> = open.keys().filter(|k| !current.contains(k)).copied().collect();
        for k in closed {
            let first = open.remove(&k).unwrap();
            done.push((k, first, line - 1));
        }
        for r in current {
            open.entry(r).or_insert(line);
        }
    }
    for (k, first) in open {
        done.push((k, first, lines - 1));
    }
    done.sort_by_key(|&((s, e), first, _)| (first, s, e));
    done
}

/// Axis-aligned dark runs of at least `min_len` pixels as boundaries with ids
/// `0..`, horizontal bands first.
pub fn extract_boundaries(raster: &Raster, min_len: usize) -> Result<Vec<Boundary>, MapError> {
    if raster.width == 0 || raster.height == 0 || raster.data.len() != raster.width * raster.height {
        return Err(MapError::EmptyRaster);
    }
    let min_len = min_len.max(1);
    let mut out = Vec::new();
    let horizontal = bands(raster.height, |y| runs((0..raster.width).map(|x| raster.get(x, y)), min_len));
    for ((x0, x1), y0, y1) in horizontal {
        let y = (y0 + y1 + 1) as f64 / 2.0;
        out.push((FloorPoint::new(x0 as f64, y), FloorPoint::new(x1 as f64 + 1.0, y)));
    }
    let vertical = bands(raster.width, |x| runs((0..raster.height).map(|y| raster.get(x, y)), min_len));
    for ((y0, y1), x0, x1) in vertical {
        let x = (x0 + x1 + 1) as f64 / 2.0;
        out.push((FloorPoint::new(x, y0 as f64), FloorPoint::new(x, y1 as f64 + 1.0)));
    }
    Ok(out
        .into_iter()
        .enumerate()
        .map(|(i, (a, b))| Boundary {
            id: i as u32,
            a,
            b,
            source: BoundarySource::Extracted,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_raster_has_no_walls() {
        let r = Raster::new(64, 32, 255);
        assert!(extract_boundaries(&r, 5).unwrap().is_empty());
    }

    #[test]
    fn empty_raster() {
        assert_eq!(extract_boundaries(&Raster::new(0, 10, 0), 5), Err(MapError::EmptyRaster));
    }

    #[test]
    fn single_run() {
        let mut r = Raster::new(100, 20, 255);
        r.fill_rect(10, 7, 59, 7, 0);
        let b = extract_boundaries(&r, 20).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].length(), 50.0);
        assert_eq!(b[0].a, FloorPoint::new(10.0, 7.5));
    }

    #[test]
    fn short_runs_ignored() {
        let mut r = Raster::new(100, 20, 255);
        r.fill_rect(10, 7, 28, 7, 0);
        assert!(extract_boundaries(&r, 20).unwrap().is_empty());
    }

    #[test]
    fn rectangle_of_walls() {
        // Walls 3 px thick; each covers pixel edges 19..122 along its length.
        let mut r = Raster::new(160, 100, 255);
        r.fill_rect(19, 14, 121, 16, 0);
        r.fill_rect(19, 79, 121, 81, 0);
        r.fill_rect(19, 14, 21, 81, 0);
        r.fill_rect(119, 14, 121, 81, 0);
        let b = extract_boundaries(&r, 10).unwrap();
        assert_eq!(b.len(), 4);
        let truth = [
            ((19.0, 15.5), (122.0, 15.5)),
            ((19.0, 80.5), (122.0, 80.5)),
            ((20.5, 14.0), (20.5, 82.0)),
            ((120.5, 14.0), (120.5, 82.0)),
        ];
        for ((ax, ay), (bx, by)) in truth {
            let hit = b
                .iter()
                .any(|s| s.a.distance(&FloorPoint::new(ax, ay)) <= 1.0 && s.b.distance(&FloorPoint::new(bx, by)) <= 1.0);
            assert!(hit, "no segment near ({ax},{ay})-({bx},{by}): {b:?}");
        }
    }

    #[test]
    fn png_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = Raster::new(30, 12, 255);
        r.fill_rect(2, 3, 25, 3, 10);
        let p = dir.path().join("plan.png");
        r.save_png(&p).unwrap();
        assert_eq!(Raster::from_png(&p).unwrap(), r);
    }
}
