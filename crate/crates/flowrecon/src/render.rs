//! PNG slice rendering: grayscale for scalar fields, a fixed viridis-style
//! colormap over speed magnitude for vector fields. Every image carries a
//! footer strip with the min/max of the normalization range printed in a
//! tiny built-in bitmap font, so images stay self-describing. Output bytes
//! are deterministic for fixed input.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::grid::{Field, ScalarGrid, VectorGrid};
use crate::{Error, Real, Result};

/// Axis selector for slicing; the slice plane is perpendicular to it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SliceAxis {
    X,
    Y,
    Z,
}

impl SliceAxis {
    pub fn index(self) -> usize {
        match self {
            SliceAxis::X => 0,
            SliceAxis::Y => 1,
            SliceAxis::Z => 2,
        }
    }
}

impl std::str::FromStr for SliceAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x" | "X" => Ok(SliceAxis::X),
            "y" | "Y" => Ok(SliceAxis::Y),
            "z" | "Z" => Ok(SliceAxis::Z),
            other => Err(Error::Config(format!("unknown axis '{other}'"))),
        }
    }
}

const FOOTER_H: usize = 9;

/// Viridis-style anchors, dark blue-violet to yellow.
const COLORMAP: [[u8; 3]; 9] = [
    [68, 1, 84],
    [71, 44, 122],
    [59, 81, 139],
    [44, 113, 142],
    [33, 144, 141],
    [39, 173, 129],
    [92, 200, 99],
    [170, 220, 50],
    [253, 231, 37],
];

fn colormap(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0) * (COLORMAP.len() - 1) as f64;
    let i = (t.floor() as usize).min(COLORMAP.len() - 2);
    let f = t - i as f64;
    let a = COLORMAP[i];
    let b = COLORMAP[i + 1];
    [
        (a[0] as f64 + f * (b[0] as f64 - a[0] as f64)).round() as u8,
        (a[1] as f64 + f * (b[1] as f64 - a[1] as f64)).round() as u8,
        (a[2] as f64 + f * (b[2] as f64 - a[2] as f64)).round() as u8,
    ]
}

/// 3x5 bitmap glyphs, rows top to bottom, 3 bits per row (MSB left).
fn glyph(c: char) -> u16 {
    match c {
        '0' => 0b111_101_101_101_111,
        '1' => 0b010_110_010_010_111,
        '2' => 0b111_001_111_100_111,
        '3' => 0b111_001_111_001_111,
        '4' => 0b101_101_111_001_001,
        '5' => 0b111_100_111_001_111,
        '6' => 0b111_100_111_101_111,
        '7' => 0b111_001_001_010_010,
        '8' => 0b111_101_111_101_111,
        '9' => 0b111_101_111_001_111,
        '-' => 0b000_000_111_000_000,
        '+' => 0b000_010_111_010_000,
        '.' => 0b000_000_000_000_010,
        '=' => 0b000_111_000_111_000,
        'E' | 'e' => 0b111_100_110_100_111,
        'M' | 'm' => 0b101_111_101_101_101,
        'I' | 'i' => 0b111_010_010_010_111,
        'N' | 'n' => 0b110_101_101_101_101,
        'A' | 'a' => 0b010_101_111_101_101,
        'X' | 'x' => 0b101_101_010_101_101,
        _ => 0,
    }
}

fn draw_text(rgb: &mut [u8], width: usize, x0: usize, y0: usize, text: &str) {
    let mut x = x0;
    for c in text.chars() {
        let bits = glyph(c);
        for row in 0..5 {
            for col in 0..3 {
                let bit = (bits >> ((4 - row) * 3 + (2 - col))) & 1;
                if bit == 1 {
                    let px = x + col;
                    let py = y0 + row;
                    let idx = 3 * (py * width + px);
                    if idx + 2 < rgb.len() {
                        rgb[idx] = 255;
                        rgb[idx + 1] = 255;
                        rgb[idx + 2] = 255;
                    }
                }
            }
        }
        x += 4;
    }
}

struct SliceData {
    nu: usize,
    nv: usize,
    values: Vec<f64>,
}

fn extract_slice<T: Real, F: Field<T>>(
    field: &F,
    axis: SliceAxis,
    index: usize,
    magnitude: impl Fn(&F::Value) -> f64,
) -> Result<SliceData> {
    let s = *field.spec();
    let ax = axis.index();
    if index >= s.dims(ax) {
        return Err(Error::Config(format!(
            "slice index {index} out of range for axis size {}",
            s.dims(ax)
        )));
    }
    let (nu, nv) = match ax {
        0 => (s.ny, s.nz),
        1 => (s.nx, s.nz),
        _ => (s.nx, s.ny),
    };
    let mut values = Vec::with_capacity(nu * nv);
    for v in 0..nv {
        for u in 0..nu {
            let (i, j, k) = match ax {
                0 => (index, u, v),
                1 => (u, index, v),
                _ => (u, v, index),
            };
            values.push(magnitude(&field.values()[s.index(i, j, k)]));
        }
    }
    Ok(SliceData { nu, nv, values })
}

fn render_to_rgb(slice: &SliceData, grayscale: bool) -> (usize, usize, Vec<u8>) {
    let (lo, hi) = slice
        .values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    let range = hi - lo;
    let width = slice.nu.max(26 * 4 + 2);
    let height = slice.nv + FOOTER_H;
    let mut rgb = vec![0u8; 3 * width * height];
    for v in 0..slice.nv {
        for u in 0..slice.nu {
            let val = slice.values[v * slice.nu + u];
            let t = if range > 0.0 { (val - lo) / range } else { 0.5 };
            // row 0 at the top corresponds to the highest second coordinate
            let py = slice.nv - 1 - v;
            let idx = 3 * (py * width + u);
            let c = if grayscale {
                let g = (t * 255.0).round() as u8;
                [g, g, g]
            } else {
                colormap(t)
            };
            rgb[idx..idx + 3].copy_from_slice(&c);
        }
    }
    let label = format!("MIN={lo:+.3e} MAX={hi:+.3e}");
    draw_text(&mut rgb, width, 1, slice.nv + 2, &label);
    (width, height, rgb)
}

fn write_png(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    let file = File::create(path)?;
    let writer = BufWriter::new(file);
    let mut encoder = png::Encoder::new(writer, width as u32, height as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let mut w = encoder
        .write_header()
        .map_err(|e| Error::Format(format!("png header: {e}")))?;
    w.write_image_data(rgb).map_err(|e| Error::Format(format!("png data: {e}")))?;
    Ok(())
}

/// Render one scalar slice as a min-max normalized grayscale PNG with the
/// range printed in the footer strip.
pub fn render_scalar_slice<T: Real>(
    g: &ScalarGrid<T>,
    axis: SliceAxis,
    index: usize,
    path: &Path,
) -> Result<()> {
    let slice = extract_slice(g, axis, index, |v| v.to_f64().unwrap())?;
    let (w, h, rgb) = render_to_rgb(&slice, true);
    write_png(path, w, h, &rgb)
}

/// Render the speed magnitude of one vector slice with the fixed colormap.
pub fn render_vector_slice<T: Real>(
    g: &VectorGrid<T>,
    axis: SliceAxis,
    index: usize,
    path: &Path,
) -> Result<()> {
    let slice = extract_slice(g, axis, index, |v| v.norm().to_f64().unwrap())?;
    let (w, h, rgb) = render_to_rgb(&slice, false);
    write_png(path, w, h, &rgb)
}
