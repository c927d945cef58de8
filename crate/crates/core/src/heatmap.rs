//! Radio-map slices: one RSS value per block on a constant-x plane, written
//! as CSV rows and as a grayscale PGM image.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::channel::Configuration;
use crate::error::{Error, Result};
use crate::radiomap::CriticalMeasurements;
use crate::scene::BlockGrid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneRow {
    pub y: f64,
    pub z: f64,
    pub rss_w: f64,
}

/// RSS over the blocks cut by the plane `x = plane_x`, y-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneSlice {
    pub width: usize,
    pub height: usize,
    pub rows: Vec<PlaneRow>,
}

/// Blocks of the x-layer containing `plane_x`, ordered y-fastest then z.
pub fn plane_blocks(grid: &BlockGrid, plane_x: f64) -> Result<Vec<usize>> {
    let lo = grid.origin().x;
    let hi = grid.extent_max().x;
    if !(plane_x >= lo && plane_x <= hi) {
        return Err(Error::Domain(format!("plane x = {plane_x} misses the SOI (x from {lo} to {hi})")));
    }
    let probe = crate::scene::Vec3::new(plane_x, grid.center().y, grid.center().z);
    let [i, _, _] = grid.axis_indices(grid.block_index_of(probe)?)?;
    let [_, ny, nz] = grid.dims();
    Ok((0..nz)
        .flat_map(|k| (0..ny).map(move |j| (j, k)))
        .map(|(j, k)| grid.linear_index([i, j, k]))
        .collect())
}

pub fn plane_slice(cm: &CriticalMeasurements, grid: &BlockGrid, cfg: &Configuration, plane_x: f64) -> Result<PlaneSlice> {
    let blocks = plane_blocks(grid, plane_x)?;
    let [_, ny, nz] = grid.dims();
    let rows = blocks
        .iter()
        .map(|&n| {
            let c = grid.block_center(n)?;
            Ok(PlaneRow {
                y: c.y,
                z: c.z,
                rss_w: cm.predict_rss(cfg, n)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PlaneSlice {
        width: ny,
        height: nz,
        rows,
    })
}

impl PlaneSlice {
    /// Min–max normalized 8-bit pixels, top row at the largest z.
    pub fn pixels(&self) -> Vec<u8> {
        let lo = self.rows.iter().map(|r| r.rss_w).fold(f64::INFINITY, f64::min);
        let hi = self.rows.iter().map(|r| r.rss_w).fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        let mut px = Vec::with_capacity(self.width * self.height);
        for k in (0..self.height).rev() {
            for j in 0..self.width {
                let v = self.rows[k * self.width + j].rss_w;
                let g = if span > 0.0 { (v - lo) / span * 255.0 } else { 0.0 };
                px.push(g.round().clamp(0.0, 255.0) as u8);
            }
        }
        px
    }

    pub fn pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.pixels());
        out
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        crate::harness::write_rows(w, &self.rows)
    }
}

/// Parses a binary PGM; returns `(width, height, pixels)`.
pub fn parse_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let bad = |m: &str| Error::Format(format!("PGM: {m}"));
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header is not ASCII"))?);
    }
    if fields[0] != "P5" {
        return Err(bad("not a P5 file"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad number"));
    let (w, h, max) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if max != 255 {
        return Err(bad("only 8-bit images are supported"));
    }
    let data = &bytes[pos + 1..];
    if data.len() != w * h {
        return Err(bad("pixel count does not match the header"));
    }
    Ok((w, h, data.to_vec()))
}
