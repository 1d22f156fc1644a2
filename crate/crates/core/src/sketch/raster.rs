use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::stroke::{PenState, StrokeSequence};
use crate::error::{shape_err, Error, Result};
use crate::math;
use crate::tensor::Tensor;

/// Three-channel image with values in `[0, 1]`, stored as `[3, H, W]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RasterImage {
    tensor: Tensor,
}

impl RasterImage {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            tensor: Tensor::zeros(&[3, height, width]),
        }
    }

    pub fn from_tensor(tensor: Tensor) -> Result<Self> {
        let s = tensor.shape();
        if s.len() != 3 || s[0] != 3 {
            return Err(shape_err("[3, H, W]", s));
        }
        if tensor.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::InvalidArgument(
                "pixel values must lie in [0, 1]".into(),
            ));
        }
        Ok(Self { tensor })
    }

    pub fn height(&self) -> usize {
        self.tensor.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.tensor.shape()[2]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.tensor.data()[(c * self.height() + y) * self.width() + x]
    }

    /// Set all three channels of a pixel.
    pub fn set_gray(&mut self, y: usize, x: usize, v: f64) {
        let (h, w) = (self.height(), self.width());
        let d = self.tensor.data_mut();
        for c in 0..3 {
            d[(c * h + y) * w + x] = v;
        }
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        let (h, w) = (self.height(), self.width());
        self.tensor.data_mut()[(c * h + y) * w + x] = v;
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn data(&self) -> &[f64] {
        self.tensor.data()
    }

    /// Channel-wise concatenation `[photo; sketch]` as a `[6, H, W]` tensor.
    pub fn pair_channels(photo: &RasterImage, sketch: &RasterImage) -> Result<Tensor> {
        if photo.height() != sketch.height() || photo.width() != sketch.width() {
            return Err(shape_err(
                (photo.height(), photo.width()),
                (sketch.height(), sketch.width()),
            ));
        }
        let mut data = photo.data().to_vec();
        data.extend_from_slice(sketch.data());
        Tensor::new(vec![6, photo.height(), photo.width()], data)
    }

    /// Lit-pixel mask of channel 0 (`value > 0`).
    pub fn lit(&self) -> Vec<bool> {
        let n = self.height() * self.width();
        self.tensor.data()[..n].iter().map(|&v| v > 0.0).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RasterConfig {
    pub height: usize,
    pub width: usize,
    pub pad: usize,
    /// Wu-style anti-aliased lines instead of binary Bresenham lines.
    pub antialias: bool,
}

impl RasterConfig {
    /// Square canvas with the default padding for that size.
    pub fn square(size: usize) -> Self {
        Self {
            height: size,
            width: size,
            pad: (size / 32).max(2),
            antialias: false,
        }
    }
}

impl Default for RasterConfig {
    fn default() -> Self {
        Self::square(64)
    }
}

/// Pixels of the segment `(x0,y0) -> (x1,y1)` in drawing order. Along the
/// major axis every integer is visited once; the minor coordinate at major
/// step `i` is the ideal line rounded half away from the start point.
pub fn line_pixels(x0: i64, y0: i64, x1: i64, y1: i64) -> Vec<(i64, i64)> {
    let (dx, dy) = ((x1 - x0).abs(), (y1 - y0).abs());
    let (sx, sy) = ((x1 - x0).signum(), (y1 - y0).signum());
    let (major, minor, smaj, smin, x_major) = if dx >= dy {
        (dx, dy, sx, sy, true)
    } else {
        (dy, dx, sy, sx, false)
    };
    let mut out = Vec::with_capacity(major as usize + 1);
    // remainder of (2*i*minor + major) modulo 2*major
    let mut err = major;
    let mut k = 0;
    for i in 0..=major {
        let (a, b) = (i * smaj, k * smin);
        out.push(if x_major {
            (x0 + a, y0 + b)
        } else {
            (x0 + b, y0 + a)
        });
        err += 2 * minor;
        if err >= 2 * major && major > 0 {
            k += 1;
            err -= 2 * major;
        }
    }
    out
}

fn plot_max(img: &mut RasterImage, x: i64, y: i64, v: f64) {
    if x < 0 || y < 0 || x as usize >= img.width() || y as usize >= img.height() {
        return;
    }
    let (xu, yu) = (x as usize, y as usize);
    let cur = img.get(0, yu, xu);
    if v > cur {
        img.set_gray(yu, xu, v.min(1.0));
    }
}

/// Binary Bresenham line with value 1.
pub fn draw_line(img: &mut RasterImage, x0: i64, y0: i64, x1: i64, y1: i64) {
    for (x, y) in line_pixels(x0, y0, x1, y1) {
        plot_max(img, x, y, 1.0);
    }
}

fn draw_line_aa(img: &mut RasterImage, x0: f64, y0: f64, x1: f64, y1: f64) {
    let steep = math::abs(y1 - y0) > math::abs(x1 - x0);
    let (mut x0, mut y0, mut x1, mut y1) = if steep {
        (y0, x0, y1, x1)
    } else {
        (x0, y0, x1, y1)
    };
    if x0 > x1 {
        core::mem::swap(&mut x0, &mut x1);
        core::mem::swap(&mut y0, &mut y1);
    }
    let dx = x1 - x0;
    let grad = if dx == 0.0 { 0.0 } else { (y1 - y0) / dx };
    let xs = math::round(x0) as i64;
    let xe = math::round(x1) as i64;
    for x in xs..=xe {
        let y = y0 + grad * (x as f64 - x0);
        let yf = math::floor(y);
        let frac = y - yf;
        let yi = yf as i64;
        let (a, b) = if steep {
            ((yi, x), (yi + 1, x))
        } else {
            ((x, yi), (x, yi + 1))
        };
        plot_max(img, a.0, a.1, 1.0 - frac);
        plot_max(img, b.0, b.1, frac);
    }
}

/// Rasterize an absolute polyline. `pens[i]` governs the segment from point
/// `i` to point `i + 1`. The bounding box is scaled uniformly (aspect kept)
/// into the padded canvas and centred, so the image does not depend on the
/// polyline's position or size.
pub fn rasterize_polyline(
    points: &[(f64, f64)],
    pens: &[PenState],
    cfg: &RasterConfig,
) -> Result<RasterImage> {
    if cfg.height <= 2 * cfg.pad || cfg.width <= 2 * cfg.pad {
        return Err(Error::InvalidArgument(format!(
            "canvas {}x{} too small for padding {}",
            cfg.height, cfg.width, cfg.pad
        )));
    }
    if points.is_empty() || points.len() != pens.len() {
        return Err(Error::InvalidArgument(
            "polyline needs one pen state per point".into(),
        ));
    }
    let mut img = RasterImage::zeros(cfg.height, cfg.width);
    // work relative to the first point so translation cancels before scaling
    let (ox, oy) = points[0];
    let rel: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x - ox, y - oy)).collect();
    let (mut minx, mut maxx, mut miny, mut maxy) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for &(x, y) in &rel {
        minx = minx.min(x);
        maxx = maxx.max(x);
        miny = miny.min(y);
        maxy = maxy.max(y);
    }
    let avail_w = (cfg.width - 2 * cfg.pad - 1) as f64;
    let avail_h = (cfg.height - 2 * cfg.pad - 1) as f64;
    let (bw, bh) = (maxx - minx, maxy - miny);
    let scale = match (bw > 0.0, bh > 0.0) {
        (true, true) => (avail_w / bw).min(avail_h / bh),
        (true, false) => avail_w / bw,
        (false, true) => avail_h / bh,
        (false, false) => 0.0,
    };
    let (cx, cy) = ((minx + maxx) / 2.0, (miny + maxy) / 2.0);
    let (mx, my) = ((cfg.width - 1) as f64 / 2.0, (cfg.height - 1) as f64 / 2.0);
    let px: Vec<(f64, f64)> = rel
        .iter()
        .map(|&(x, y)| ((x - cx) * scale + mx, (y - cy) * scale + my))
        .collect();
    if scale == 0.0 {
        let (x, y) = (math::round(mx) as i64, math::round(my) as i64);
        plot_max(&mut img, x, y, 1.0);
        return Ok(img);
    }
    let mut drew = false;
    for i in 0..px.len() - 1 {
        if pens[i] != PenState::Down {
            continue;
        }
        drew = true;
        let (a, b) = (px[i], px[i + 1]);
        if cfg.antialias {
            draw_line_aa(&mut img, a.0, a.1, b.0, b.1);
        } else {
            draw_line(
                &mut img,
                math::round(a.0) as i64,
                math::round(a.1) as i64,
                math::round(b.0) as i64,
                math::round(b.1) as i64,
            );
        }
    }
    if !drew {
        for &(x, y) in &px {
            plot_max(&mut img, math::round(x) as i64, math::round(y) as i64, 1.0);
        }
    }
    Ok(img)
}

/// Rasterize a stroke sequence. The implicit start token `(0, 0, down)` is
/// the first vertex, so the first offset is drawn.
pub fn rasterize(seq: &StrokeSequence, cfg: &RasterConfig) -> Result<RasterImage> {
    let mut points = Vec::with_capacity(seq.len() + 1);
    let mut pens = Vec::with_capacity(seq.len() + 1);
    points.push((0.0, 0.0));
    pens.push(PenState::Down);
    for (p, a) in seq.points().iter().zip(seq.to_absolute()) {
        points.push(a);
        pens.push(p.pen);
    }
    rasterize_polyline(&points, &pens, cfg)
}
