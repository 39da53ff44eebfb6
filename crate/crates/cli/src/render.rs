//! PNG panels: color-mapped scalar fields with probe overlays.

use std::path::Path;

use activedepth::io::write_png;
use activedepth::{Grid, Pixel, RgbImage};

const SCALE: usize = 4;

/// Piecewise-linear approximation of a perceptual dark-blue to yellow map.
const ANCHORS: [[f64; 3]; 5] = [
    [68.0, 1.0, 84.0],
    [59.0, 82.0, 139.0],
    [33.0, 145.0, 140.0],
    [94.0, 201.0, 98.0],
    [253.0, 231.0, 37.0],
];

fn colormap(t: f64) -> [u8; 3] {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let x = t * (ANCHORS.len() - 1) as f64;
    let i = (x.floor() as usize).min(ANCHORS.len() - 2);
    let f = x - i as f64;
    let mut out = [0u8; 3];
    for (c, o) in out.iter_mut().enumerate() {
        *o = (ANCHORS[i][c] * (1.0 - f) + ANCHORS[i + 1][c] * f).round() as u8;
    }
    out
}

/// Upscaled RGB canvas.
struct Canvas {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl Canvas {
    fn from_fn(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Self {
        let (height, width) = (h * SCALE, w * SCALE);
        let mut data = vec![0; height * width * 3];
        for r in 0..height {
            for c in 0..width {
                let px = f(r / SCALE, c / SCALE);
                data[(r * width + c) * 3..][..3].copy_from_slice(&px);
            }
        }
        Self { height, width, data }
    }

    /// Outlined square marker over a source pixel.
    fn mark(&mut self, p: Pixel, color: [u8; 3]) {
        let (r0, c0) = ((p.row * SCALE) as isize, (p.col * SCALE) as isize);
        for dr in -1..=SCALE as isize {
            for dc in -1..=SCALE as isize {
                let edge = dr == -1 || dc == -1 || dr == SCALE as isize || dc == SCALE as isize;
                let (r, c) = (r0 + dr, c0 + dc);
                if r < 0 || c < 0 || r >= self.height as isize || c >= self.width as isize {
                    continue;
                }
                let color = if edge { [0, 0, 0] } else { color };
                self.data[(r as usize * self.width + c as usize) * 3..][..3].copy_from_slice(&color);
            }
        }
    }

    fn save(&self, path: &Path) -> activedepth::Result<()> {
        write_png(path, self.width, self.height, 3, &self.data)
    }
}

/// Writes `field` color-mapped over its own range, earlier probes in white and
/// the newest ones in red.
pub fn field_panel(path: &Path, field: &Grid<f64>, old: &[Pixel], new: &[Pixel]) -> activedepth::Result<()> {
    let (h, w) = field.dims();
    let lo = field.as_slice().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = field.as_slice().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut canvas = Canvas::from_fn(h, w, |r, c| colormap((field.at(r, c) - lo) / span));
    for p in old {
        canvas.mark(*p, [255, 255, 255]);
    }
    for p in new {
        canvas.mark(*p, [230, 30, 30]);
    }
    canvas.save(path)
}

pub fn rgb_panel(path: &Path, img: &RgbImage) -> activedepth::Result<()> {
    let (h, w) = img.dims();
    Canvas::from_fn(h, w, |r, c| img.pixel(r, c).map(|v| (v * 255.0).round() as u8)).save(path)
}
