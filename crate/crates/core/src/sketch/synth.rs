//! Procedural photo/sketch pairs: a filled, anti-aliased rendering of a
//! random shape over a lightly textured background, paired with a jittered
//! outline sketch of the same instance.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{Corpus, LabeledPair, LabeledPairSet, UnlabeledPhoto, UnlabeledPhotoSet};
use super::raster::RasterImage;
use super::stroke::{PenState, StrokePoint, StrokeSequence, DEFAULT_MAX_LEN};
use crate::error::{Error, Result};
use crate::math::{self, PI};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ShapeFamily {
    Polygon {
        min_sides: usize,
        max_sides: usize,
    },
    Ellipse,
    /// Two overlapping primitives drawn as two strokes.
    Composite,
    /// Uniform choice among the three families per instance.
    Mixed {
        min_sides: usize,
        max_sides: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub family: ShapeFamily,
    pub canvas: usize,
    /// Outer radius range in pixels.
    pub radius: (f64, f64),
    /// Relative radial jitter of polygon vertices.
    pub irregularity: f64,
    /// Standard deviation of the Gaussian noise added to sketch offsets, in pixels.
    pub jitter: f64,
    /// Per-vertex dropout probability (at most 20% of vertices are dropped).
    pub dropout: f64,
    /// Fill intensity range.
    pub fill: (f64, f64),
    /// Amplitude of the background texture.
    pub texture: f64,
    /// Number of outline samples used for ellipses in the sketch.
    pub ellipse_points: usize,
}

impl Default for ShapeSpec {
    fn default() -> Self {
        Self {
            family: ShapeFamily::Mixed {
                min_sides: 3,
                max_sides: 8,
            },
            canvas: 64,
            radius: (10.0, 22.0),
            irregularity: 0.25,
            jitter: 0.6,
            dropout: 0.1,
            fill: (0.05, 0.6),
            texture: 0.06,
            ellipse_points: 16,
        }
    }
}

impl ShapeSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(m.into()));
        match self.family {
            ShapeFamily::Polygon {
                min_sides,
                max_sides,
            }
            | ShapeFamily::Mixed {
                min_sides,
                max_sides,
            } if (min_sides < 3 || max_sides > 8 || min_sides > max_sides) => {
                return Err(Error::InvalidSpec(format!(
                    "polygon sides must satisfy 3 <= {min_sides} <= {max_sides} <= 8"
                )));
            }
            _ => {}
        }
        if self.canvas < 8 {
            return bad("canvas must be at least 8 pixels");
        }
        let (r0, r1) = self.radius;
        if !(r0 > 1.0 && r0 <= r1 && 2.0 * r1 < self.canvas as f64) {
            return bad("radius range must satisfy 1 < min <= max < canvas/2");
        }
        if !(0.0..=0.5).contains(&self.irregularity) {
            return bad("irregularity must lie in [0, 0.5]");
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return bad("jitter must be a finite non-negative number");
        }
        if !(0.0..=0.2).contains(&self.dropout) {
            return bad("dropout must lie in [0, 0.2]");
        }
        let (f0, f1) = self.fill;
        if !(0.0 <= f0 && f0 <= f1 && f1 <= 1.0) {
            return bad("fill range must lie in [0, 1]");
        }
        if !(0.0..=0.2).contains(&self.texture) {
            return bad("texture amplitude must lie in [0, 0.2]");
        }
        if self.ellipse_points < 6 {
            return bad("ellipses need at least 6 outline points");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticPair {
    pub photo: RasterImage,
    pub sketch: StrokeSequence,
    /// Canvas position of the sketch's implicit start point.
    pub anchor: (f64, f64),
}

enum Region {
    Polygon(Vec<(f64, f64)>),
    Ellipse {
        c: (f64, f64),
        a: f64,
        b: f64,
        theta: f64,
    },
}

impl Region {
    fn contains(&self, x: f64, y: f64) -> bool {
        match self {
            Region::Polygon(v) => {
                let mut inside = false;
                let n = v.len();
                let mut j = n - 1;
                for i in 0..n {
                    let (xi, yi) = v[i];
                    let (xj, yj) = v[j];
                    if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
                        inside = !inside;
                    }
                    j = i;
                }
                inside
            }
            Region::Ellipse { c, a, b, theta } => {
                let (dx, dy) = (x - c.0, y - c.1);
                let (ct, st) = (math::cos(*theta), math::sin(*theta));
                let u = (dx * ct + dy * st) / a;
                let v = (-dx * st + dy * ct) / b;
                u * u + v * v <= 1.0
            }
        }
    }
}

struct Primitive {
    region: Region,
    outline: Vec<(f64, f64)>,
}

fn polygon<R: Rng + ?Sized>(
    c: (f64, f64),
    r: f64,
    sides: usize,
    irregularity: f64,
    rng: &mut R,
) -> Primitive {
    let rot = rng.gen_range(0.0..2.0 * PI);
    let step = 2.0 * PI / sides as f64;
    let outline: Vec<(f64, f64)> = (0..sides)
        .map(|i| {
            let ang = rot + step * i as f64 + irregularity * rng.gen_range(-1.0..=1.0) * step;
            let rad = r * (1.0 + irregularity * rng.gen_range(-1.0..=1.0));
            (c.0 + rad * math::cos(ang), c.1 + rad * math::sin(ang))
        })
        .collect();
    Primitive {
        region: Region::Polygon(outline.clone()),
        outline,
    }
}

fn ellipse<R: Rng + ?Sized>(c: (f64, f64), r: f64, points: usize, rng: &mut R) -> Primitive {
    let a = r;
    let b = r * rng.gen_range(0.45..=0.95);
    let theta = rng.gen_range(0.0..PI);
    let start = rng.gen_range(0.0..2.0 * PI);
    let (ct, st) = (math::cos(theta), math::sin(theta));
    let outline = (0..points)
        .map(|i| {
            let t = start + 2.0 * PI * i as f64 / points as f64;
            let (u, v) = (a * math::cos(t), b * math::sin(t));
            (c.0 + u * ct - v * st, c.1 + u * st + v * ct)
        })
        .collect();
    Primitive {
        region: Region::Ellipse { c, a, b, theta },
        outline,
    }
}

fn drop_vertices<R: Rng + ?Sized>(outline: &[(f64, f64)], p: f64, rng: &mut R) -> Vec<(f64, f64)> {
    let n = outline.len();
    let max_drop = (n as f64 * 0.2) as usize;
    let mut keep = vec![true; n];
    let mut dropped = 0;
    // never drop two neighbours, so no chord skips more than one vertex
    for k in 1..n {
        if keep[k - 1] && dropped < max_drop && n - dropped > 3 && rng.gen_bool(p) {
            keep[k] = false;
            dropped += 1;
        }
    }
    outline
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(v, _)| *v)
        .collect()
}

/// One photo/sketch pair, fully determined by `spec` and the generator state.
pub fn generate_synthetic_pair<R: Rng + ?Sized>(
    spec: &ShapeSpec,
    rng: &mut R,
) -> Result<SyntheticPair> {
    spec.validate()?;
    let size = spec.canvas as f64;
    let family = match spec.family {
        ShapeFamily::Mixed {
            min_sides,
            max_sides,
        } => match rng.gen_range(0..3) {
            0 => ShapeFamily::Polygon {
                min_sides,
                max_sides,
            },
            1 => ShapeFamily::Ellipse,
            _ => ShapeFamily::Composite,
        },
        f => f,
    };
    let r = rng.gen_range(spec.radius.0..=spec.radius.1);
    let margin = r * if matches!(family, ShapeFamily::Composite) {
        1.3
    } else {
        1.1
    };
    let lo = margin.min(size / 2.0);
    let hi = (size - margin).max(size / 2.0);
    let c = (rng.gen_range(lo..=hi), rng.gen_range(lo..=hi));
    let sides = |rng: &mut R, lo: usize, hi: usize| rng.gen_range(lo..=hi);
    let prims = match family {
        ShapeFamily::Polygon {
            min_sides,
            max_sides,
        } => {
            let k = sides(rng, min_sides, max_sides);
            vec![polygon(c, r, k, spec.irregularity, rng)]
        }
        ShapeFamily::Ellipse => vec![ellipse(c, r, spec.ellipse_points, rng)],
        ShapeFamily::Composite | ShapeFamily::Mixed { .. } => {
            let first = if rng.gen_bool(0.5) {
                let k = sides(rng, 3, 8);
                polygon(c, r * 0.8, k, spec.irregularity, rng)
            } else {
                ellipse(c, r * 0.8, spec.ellipse_points, rng)
            };
            let ang = rng.gen_range(0.0..2.0 * PI);
            let c2 = (
                c.0 + 0.7 * r * math::cos(ang),
                c.1 + 0.7 * r * math::sin(ang),
            );
            let r2 = r * rng.gen_range(0.35..=0.55);
            let second = if rng.gen_bool(0.5) {
                let k = sides(rng, 3, 6);
                polygon(c2, r2, k, spec.irregularity, rng)
            } else {
                ellipse(c2, r2, (spec.ellipse_points * 2 / 3).max(6), rng)
            };
            vec![first, second]
        }
    };

    // photo: textured background, filled shapes with 4x4 supersampled coverage
    let n = spec.canvas;
    let base = rng.gen_range(0.75..=0.95);
    let bg_tint: [f64; 3] = core::array::from_fn(|_| rng.gen_range(-0.03..=0.03));
    let waves: [(f64, f64, f64); 2] = core::array::from_fn(|_| {
        let f = rng.gen_range(0.05..0.35);
        let a = rng.gen_range(0.0..PI);
        (
            f * math::cos(a),
            f * math::sin(a),
            rng.gen_range(0.0..2.0 * PI),
        )
    });
    let fills: Vec<[f64; 3]> = prims
        .iter()
        .map(|_| {
            let i = rng.gen_range(spec.fill.0..=spec.fill.1);
            core::array::from_fn(|_| (i + rng.gen_range(-0.08..=0.08)).clamp(0.0, 1.0))
        })
        .collect();
    let mut photo = RasterImage::zeros(n, n);
    for y in 0..n {
        for x in 0..n {
            let tex: f64 = waves
                .iter()
                .map(|(fx, fy, ph)| math::sin(fx * x as f64 + fy * y as f64 + ph))
                .sum::<f64>()
                * 0.5;
            let mut cover = vec![0.0; prims.len()];
            for sy in 0..4 {
                for sx in 0..4 {
                    let (px, py) = (
                        x as f64 + (sx as f64 + 0.5) / 4.0,
                        y as f64 + (sy as f64 + 0.5) / 4.0,
                    );
                    // later primitives are painted over earlier ones
                    if let Some(k) = (0..prims.len())
                        .rev()
                        .find(|&k| prims[k].region.contains(px, py))
                    {
                        cover[k] += 1.0 / 16.0;
                    }
                }
            }
            let total: f64 = cover.iter().sum();
            for ch in 0..3 {
                let bg = (base + bg_tint[ch] + spec.texture * tex).clamp(0.0, 1.0);
                let mut v = bg * (1.0 - total);
                for (k, cv) in cover.iter().enumerate() {
                    v += fills[k][ch] * cv;
                }
                photo.set(ch, y, x, v.clamp(0.0, 1.0));
            }
        }
    }

    // sketch: outline strokes starting at the first vertex of the first primitive
    let outlines: Vec<Vec<(f64, f64)>> = prims
        .iter()
        .map(|p| drop_vertices(&p.outline, spec.dropout, rng))
        .collect();
    let anchor = outlines[0][0];
    let mut abs = Vec::new();
    let mut pens = Vec::new();
    for (i, o) in outlines.iter().enumerate() {
        if i > 0 {
            abs.push(o[0]);
            pens.push(PenState::Down);
        }
        for &v in &o[1..] {
            abs.push(v);
            pens.push(PenState::Down);
        }
        abs.push(o[0]);
        pens.push(if i + 1 == outlines.len() {
            PenState::End
        } else {
            PenState::Lift
        });
    }
    let mut prev = anchor;
    let mut points = Vec::with_capacity(abs.len());
    for (&(x, y), &pen) in abs.iter().zip(&pens) {
        let (mut dx, mut dy) = (x - prev.0, y - prev.1);
        if spec.jitter > 0.0 {
            dx += spec.jitter * rng::normal(rng);
            dy += spec.jitter * rng::normal(rng);
        }
        points.push(StrokePoint::new(dx, dy, pen));
        prev = (x, y);
    }
    let sketch = StrokeSequence::new(points, DEFAULT_MAX_LEN)?;
    Ok(SyntheticPair {
        photo,
        sketch,
        anchor,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSizes {
    pub labeled: usize,
    pub unlabeled: usize,
    pub test: usize,
}

/// Instance `i` of the corpus draws from its own seeded stream, so corpora
/// of different sizes share their common prefix.
pub fn generate_corpus(spec: &ShapeSpec, sizes: CorpusSizes, seed: u64) -> Result<Corpus> {
    spec.validate()?;
    let gen = |tag: u64, i: usize| {
        let mut r = rng::stream(seed, rng::purpose::SYNTH + tag, i as u64);
        generate_synthetic_pair(spec, &mut r)
    };
    let labeled = crate::parallel::map_indexed(sizes.labeled, |i| gen(0, i))
        .into_iter()
        .enumerate()
        .map(|(i, p)| {
            p.map(|p| LabeledPair {
                id: format!("L{i:05}"),
                photo: p.photo,
                sketch: p.sketch,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let unlabeled = crate::parallel::map_indexed(sizes.unlabeled, |i| gen(1000, i))
        .into_iter()
        .enumerate()
        .map(|(i, p)| {
            p.map(|p| UnlabeledPhoto {
                id: format!("U{i:05}"),
                photo: p.photo,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let test = crate::parallel::map_indexed(sizes.test, |i| gen(2000, i))
        .into_iter()
        .enumerate()
        .map(|(i, p)| {
            p.map(|p| LabeledPair {
                id: format!("T{i:05}"),
                photo: p.photo,
                sketch: p.sketch,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus {
        labeled: LabeledPairSet::new(labeled)?,
        unlabeled: UnlabeledPhotoSet::new(unlabeled)?,
        test: LabeledPairSet::new(test)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sketch::raster::line_pixels;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn noise_free_square_outline_matches_corners() {
        let spec = ShapeSpec {
            family: ShapeFamily::Polygon {
                min_sides: 4,
                max_sides: 4,
            },
            irregularity: 0.0,
            jitter: 0.0,
            dropout: 0.0,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pair = generate_synthetic_pair(&spec, &mut rng).unwrap();
        let abs = pair.sketch.to_absolute();
        assert_eq!(abs.len(), 4);
        // corners relative to the first corner; the outline closes at the origin
        let all: Vec<(f64, f64)> = core::iter::once((0.0, 0.0))
            .chain(abs.iter().copied())
            .collect();
        let side = |i: usize| (all[i + 1].0 - all[i].0, all[i + 1].1 - all[i].1);
        for i in 0..3 {
            let (a, b) = (side(i), side(i + 1));
            let len2 = a.0 * a.0 + a.1 * a.1;
            assert!(
                (a.0 * b.0 + a.1 * b.1).abs() < 1e-9 * len2,
                "not perpendicular"
            );
            assert!((len2 - (b.0 * b.0 + b.1 * b.1)).abs() < 1e-9 * len2);
        }
        assert!(abs[3].0.abs() < 1e-12 && abs[3].1.abs() < 1e-12);
        assert_eq!(pair.sketch.points()[3].pen, PenState::End);
    }

    #[test]
    fn same_seed_same_pair() {
        let spec = ShapeSpec::default();
        let a = generate_synthetic_pair(&spec, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = generate_synthetic_pair(&spec, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for spec in [
            ShapeSpec {
                family: ShapeFamily::Polygon {
                    min_sides: 2,
                    max_sides: 5,
                },
                ..Default::default()
            },
            ShapeSpec {
                family: ShapeFamily::Polygon {
                    min_sides: 3,
                    max_sides: 9,
                },
                ..Default::default()
            },
            ShapeSpec {
                dropout: 0.3,
                ..Default::default()
            },
            ShapeSpec {
                radius: (30.0, 20.0),
                ..Default::default()
            },
            ShapeSpec {
                jitter: -1.0,
                ..Default::default()
            },
        ] {
            assert!(matches!(
                generate_synthetic_pair(&spec, &mut rng),
                Err(Error::InvalidSpec(_))
            ));
        }
    }

    fn edge_band(photo: &RasterImage) -> Vec<bool> {
        let n = photo.width();
        let g = |x: usize, y: usize| (0..3).map(|c| photo.get(c, y, x)).sum::<f64>() / 3.0;
        let mut edge = vec![false; n * n];
        for y in 0..n {
            for x in 0..n {
                let gx = g((x + 1).min(n - 1), y) - g(x.saturating_sub(1), y);
                let gy = g(x, (y + 1).min(n - 1)) - g(x, y.saturating_sub(1));
                if gx * gx + gy * gy > 0.006 {
                    edge[y * n + x] = true;
                }
            }
        }
        edge
    }

    #[test]
    fn sketches_overlap_their_own_photo_best() {
        let spec = ShapeSpec {
            jitter: 0.0,
            ..Default::default()
        };
        let pairs: Vec<SyntheticPair> = (0..100)
            .map(|i| generate_synthetic_pair(&spec, &mut rng::stream(9, 0, i)).unwrap())
            .collect();
        let n = spec.canvas;
        let outlines: Vec<Vec<bool>> = pairs
            .iter()
            .map(|p| {
                let mut m = vec![false; n * n];
                let mut pts = vec![p.anchor];
                pts.extend(
                    p.sketch
                        .to_absolute()
                        .iter()
                        .map(|&(x, y)| (x + p.anchor.0, y + p.anchor.1)),
                );
                let mut pens = vec![PenState::Down];
                pens.extend(p.sketch.points().iter().map(|q| q.pen));
                for i in 0..pts.len() - 1 {
                    if pens[i] != PenState::Down {
                        continue;
                    }
                    let f = |v: f64| math::floor(v) as i64;
                    for (x, y) in
                        line_pixels(f(pts[i].0), f(pts[i].1), f(pts[i + 1].0), f(pts[i + 1].1))
                    {
                        if x >= 0 && y >= 0 && (x as usize) < n && (y as usize) < n {
                            m[y as usize * n + x as usize] = true;
                        }
                    }
                }
                // thicken to match the two-sided gradient band
                let mut d = m.clone();
                for y in 0..n {
                    for x in 0..n {
                        if m[y * n + x] {
                            for (yy, xx) in [
                                (y.wrapping_sub(1), x),
                                (y + 1, x),
                                (y, x.wrapping_sub(1)),
                                (y, x + 1),
                            ] {
                                if yy < n && xx < n {
                                    d[yy * n + xx] = true;
                                }
                            }
                        }
                    }
                }
                d
            })
            .collect();
        let bands: Vec<Vec<bool>> = pairs.iter().map(|p| edge_band(&p.photo)).collect();
        let iou = |a: &[bool], b: &[bool]| {
            let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count() as f64;
            let uni = a.iter().zip(b).filter(|(x, y)| **x || **y).count() as f64;
            inter / uni
        };
        for (i, o) in outlines.iter().enumerate() {
            let scores: Vec<f64> = bands.iter().map(|b| iou(o, b)).collect();
            assert_eq!(
                math::argmax(&scores),
                i,
                "sketch {i} best matches another photo"
            );
        }
    }
}
