//! Spatial transforms applied uniformly to every plane of a [`GeoImage`].
//!
//! Resize, crop and flip move pixels around without touching the values they
//! carry (RGB under resize is the one bilinear exception). U/V channels
//! therefore keep the source coordinates while the built-in pixel indices
//! change. RoI-Align is inherently bilinear and averages every plane.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo_image::{Channel, GeoImage};

/// Continuous pixel rectangle `[u0, u1) × [v0, v1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct Roi {
    pub u0: f64,
    pub v0: f64,
    pub u1: f64,
    pub v1: f64,
}

impl Roi {
    pub fn new(u0: f64, v0: f64, u1: f64, v1: f64) -> Result<Self> {
        if ![u0, v0, u1, v1].iter().all(|x| x.is_finite()) || !(u1 > u0 && v1 > v0) {
            return Err(Error::DegenerateRoi(format!("[{u0}, {v0}, {u1}, {v1}]")));
        }
        Ok(Self { u0, v0, u1, v1 })
    }

    /// The RoI whose RoI-Align bins coincide with the pixels of a `width × height` image.
    pub fn full_image(width: usize, height: usize) -> Self {
        Self {
            u0: -0.5,
            v0: -0.5,
            u1: width as f64 - 0.5,
            v1: height as f64 - 0.5,
        }
    }
}

impl TryFrom<[f64; 4]> for Roi {
    type Error = Error;

    fn try_from(a: [f64; 4]) -> Result<Self> {
        Roi::new(a[0], a[1], a[2], a[3])
    }
}

impl From<Roi> for [f64; 4] {
    fn from(r: Roi) -> Self {
        [r.u0, r.v0, r.u1, r.v1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Horizontal,
    Vertical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum TransformStep {
    Resize {
        scale: f64,
    },
    Crop {
        roi: Roi,
    },
    Hflip,
    Vflip,
    RoiAlign {
        roi: Roi,
        /// `[out_h, out_w]`
        out: [usize; 2],
        sampling_ratio: usize,
    },
}

impl TransformStep {
    pub fn apply(&self, img: &GeoImage) -> Result<GeoImage> {
        match *self {
            TransformStep::Resize { scale } => resize(img, scale),
            TransformStep::Crop { roi } => crop(img, roi),
            TransformStep::Hflip => Ok(flip(img, Axis::Horizontal)),
            TransformStep::Vflip => Ok(flip(img, Axis::Vertical)),
            TransformStep::RoiAlign {
                roi,
                out,
                sampling_ratio,
            } => roi_align(img, roi, out[0], out[1], sampling_ratio),
        }
    }
}

/// Non-empty ordered list of transform steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<TransformStep>", into = "Vec<TransformStep>")]
pub struct TransformSpec {
    steps: Vec<TransformStep>,
}

impl TransformSpec {
    pub fn new(steps: Vec<TransformStep>) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::InvalidArgument("transform spec must have at least one step".into()));
        }
        for s in &steps {
            if let TransformStep::Resize { scale } = s {
                if !(*scale > 0.0 && scale.is_finite()) {
                    return Err(Error::InvalidArgument(format!("resize scale must be positive, got {scale}")));
                }
            }
        }
        Ok(Self { steps })
    }

    pub fn steps(&self) -> &[TransformStep] {
        &self.steps
    }

    pub fn apply(&self, img: &GeoImage) -> Result<GeoImage> {
        let mut out = img.clone();
        for step in &self.steps {
            out = step.apply(&out)?;
        }
        Ok(out)
    }
}

impl TryFrom<Vec<TransformStep>> for TransformSpec {
    type Error = Error;

    fn try_from(steps: Vec<TransformStep>) -> Result<Self> {
        TransformSpec::new(steps)
    }
}

impl From<TransformSpec> for Vec<TransformStep> {
    fn from(s: TransformSpec) -> Self {
        s.steps
    }
}

/// Builds a new image where output pixel `i` copies source pixel `map[i]`.
fn gather(img: &GeoImage, width: usize, height: usize, map: &[usize]) -> Result<GeoImage> {
    let pick = |plane: &[f64]| map.iter().map(|&s| plane[s]).collect::<Vec<f64>>();
    let depth = pick(img.depth());
    let mask = map.iter().map(|&s| img.mask()[s]).collect();
    let channels: BTreeMap<Channel, Vec<Vec<f64>>> = img
        .channels()
        .map(|(c, planes)| (c, planes.iter().map(|p| pick(p)).collect()))
        .collect();
    GeoImage::from_parts(width, height, depth, mask, channels)
}

/// Scales the image by `scale`, rounding output dimensions.
///
/// RGB is resampled bilinearly; every geometric plane, depth and the mask are
/// sampled nearest-neighbor so that no new `(u, v, d)` triples are invented.
pub fn resize(img: &GeoImage, scale: f64) -> Result<GeoImage> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidArgument(format!("resize scale must be positive, got {scale}")));
    }
    let out_w = (scale * img.width() as f64).round() as usize;
    let out_h = (scale * img.height() as f64).round() as usize;
    if out_w == 0 || out_h == 0 {
        return Err(Error::DegenerateOutput {
            width: out_w,
            height: out_h,
        });
    }
    let rx = img.width() as f64 / out_w as f64;
    let ry = img.height() as f64 / out_h as f64;
    let nearest = |o: usize, ratio: f64, n: usize| (((o as f64 + 0.5) * ratio).floor() as usize).min(n - 1);
    let cols: Vec<usize> = (0..out_w).map(|o| nearest(o, rx, img.width())).collect();
    let rows: Vec<usize> = (0..out_h).map(|o| nearest(o, ry, img.height())).collect();
    let map: Vec<usize> = rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&c| r * img.width() + c))
        .collect();
    let mut out = gather(img, out_w, out_h, &map)?;

    if let Some(rgb) = img.channel(Channel::Rgb) {
        let planes = rgb
            .iter()
            .map(|p| resample_bilinear(p, img.width(), img.height(), out_w, out_h))
            .collect();
        out.set_channel(Channel::Rgb, planes)?;
    }
    Ok(out)
}

/// Half-pixel-center bilinear resampling with edge clamping.
fn resample_bilinear(plane: &[f64], w: usize, h: usize, out_w: usize, out_h: usize) -> Vec<f64> {
    let rx = w as f64 / out_w as f64;
    let ry = h as f64 / out_h as f64;
    let mut out = Vec::with_capacity(out_w * out_h);
    for oy in 0..out_h {
        let y = ((oy as f64 + 0.5) * ry - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = y.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = y - y0 as f64;
        for ox in 0..out_w {
            let x = ((ox as f64 + 0.5) * rx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = x.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let fx = x - x0 as f64;
            let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
            let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bot * fy);
        }
    }
    out
}

/// Copies the integer-aligned window `roi ∩ image`.
pub fn crop(img: &GeoImage, roi: Roi) -> Result<GeoImage> {
    if [roi.u0, roi.v0, roi.u1, roi.v1].iter().any(|x| x.fract() != 0.0) {
        return Err(Error::InvalidArgument(format!(
            "crop bounds must be integer-aligned, got [{}, {}, {}, {}]",
            roi.u0, roi.v0, roi.u1, roi.v1
        )));
    }
    let c0 = roi.u0.max(0.0);
    let r0 = roi.v0.max(0.0);
    let c1 = roi.u1.min(img.width() as f64);
    let r1 = roi.v1.min(img.height() as f64);
    if !(c1 > c0 && r1 > r0) {
        return Err(Error::EmptyIntersection {
            u0: roi.u0,
            v0: roi.v0,
            u1: roi.u1,
            v1: roi.v1,
        });
    }
    let (c0, r0, c1, r1) = (c0 as usize, r0 as usize, c1 as usize, r1 as usize);
    let map: Vec<usize> = (r0..r1)
        .flat_map(|r| (c0..c1).map(move |c| r * img.width() + c))
        .collect();
    gather(img, c1 - c0, r1 - r0, &map)
}

/// Mirrors every plane. Values, including U/V, travel with their pixels.
pub fn flip(img: &GeoImage, axis: Axis) -> GeoImage {
    let (w, h) = (img.width(), img.height());
    let map: Vec<usize> = (0..h)
        .flat_map(|r| {
            (0..w).map(move |c| match axis {
                Axis::Horizontal => r * w + (w - 1 - c),
                Axis::Vertical => (h - 1 - r) * w + c,
            })
        })
        .collect();
    gather(img, w, h, &map).expect("flip preserves extent")
}

/// Bilinear weights of the pixels touched by a sample at continuous `(x, y)`,
/// or `None` when the sample lies outside the image.
pub(crate) fn bilinear_taps(x: f64, y: f64, w: usize, h: usize) -> Option<[(usize, f64); 4]> {
    if !(x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64) {
        return None;
    }
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let x1 = if fx > 0.0 { x0 + 1 } else { x0 };
    let y1 = if fy > 0.0 { y0 + 1 } else { y0 };
    Some([
        (y0 * w + x0, (1.0 - fx) * (1.0 - fy)),
        (y0 * w + x1, fx * (1.0 - fy)),
        (y1 * w + x0, (1.0 - fx) * fy),
        (y1 * w + x1, fx * fy),
    ])
}

/// RoI-Align: each output cell averages `sampling_ratio²` bilinear samples
/// taken at regular interior positions of its bin.
///
/// A sample is discarded when it falls outside the image or any pixel it
/// draws weight from is invalid. Cells left without samples become holes.
/// The mask is taken nearest-neighbor at the bin center.
pub fn roi_align(
    img: &GeoImage,
    roi: Roi,
    out_h: usize,
    out_w: usize,
    sampling_ratio: usize,
) -> Result<GeoImage> {
    if out_h == 0 || out_w == 0 || sampling_ratio == 0 {
        return Err(Error::DegenerateRoi(format!(
            "output {out_h}x{out_w} with sampling ratio {sampling_ratio}"
        )));
    }
    let roi = Roi::new(roi.u0, roi.v0, roi.u1, roi.v1)?;
    let (w, h) = (img.width(), img.height());
    let bin_w = (roi.u1 - roi.u0) / out_w as f64;
    let bin_h = (roi.v1 - roi.v0) / out_h as f64;
    let sr = sampling_ratio as f64;

    let planes: Vec<(Channel, usize, &[f64])> = img
        .channels()
        .flat_map(|(c, ps)| ps.iter().enumerate().map(move |(k, p)| (c, k, p.as_slice())))
        .collect();
    let n = out_w * out_h;
    let mut depth = vec![0.0; n];
    let mut mask = vec![0u32; n];
    let mut acc = vec![vec![0.0; n]; planes.len()];
    let valid = img.valid();

    for oy in 0..out_h {
        for ox in 0..out_w {
            let o = oy * out_w + ox;
            let mut count = 0usize;
            let mut d_sum = 0.0;
            let mut sums = vec![0.0; planes.len()];
            for iy in 0..sampling_ratio {
                let y = roi.v0 + oy as f64 * bin_h + (iy as f64 + 0.5) * bin_h / sr;
                for ix in 0..sampling_ratio {
                    let x = roi.u0 + ox as f64 * bin_w + (ix as f64 + 0.5) * bin_w / sr;
                    let Some(taps) = bilinear_taps(x, y, w, h) else {
                        continue;
                    };
                    if taps.iter().any(|&(i, wt)| wt > 0.0 && !valid[i]) {
                        continue;
                    }
                    count += 1;
                    d_sum += taps.iter().map(|&(i, wt)| wt * img.depth()[i]).sum::<f64>();
                    for (s, (_, _, p)) in sums.iter_mut().zip(&planes) {
                        *s += taps.iter().map(|&(i, wt)| wt * p[i]).sum::<f64>();
                    }
                }
            }
            if count > 0 {
                let inv = 1.0 / count as f64;
                depth[o] = d_sum * inv;
                for (a, s) in acc.iter_mut().zip(&sums) {
                    a[o] = s * inv;
                }
            }
            let cx = (roi.u0 + (ox as f64 + 0.5) * bin_w).round();
            let cy = (roi.v0 + (oy as f64 + 0.5) * bin_h).round();
            if cx >= 0.0 && cy >= 0.0 && (cx as usize) < w && (cy as usize) < h {
                mask[o] = img.mask()[cy as usize * w + cx as usize];
            }
        }
    }

    let mut channels: BTreeMap<Channel, Vec<Vec<f64>>> = BTreeMap::new();
    for ((c, _, _), plane) in planes.iter().zip(acc) {
        channels.entry(*c).or_default().push(plane);
    }
    GeoImage::from_parts(out_w, out_h, depth, mask, channels)
}
