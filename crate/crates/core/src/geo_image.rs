//! Multi-channel RGB-D raster and the positional encoders that decorate it.
//!
//! Every plane is stored row-major, index `row * width + col`. Depth is in
//! meters with `0` marking a hole; the validity plane is always derived from
//! depth so the two can never disagree.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{backproject, CameraIntrinsics, PixelSample};

/// Wavelength base of the sinusoidal position encoding.
pub const PE_BASE: f64 = 10000.0;

/// Named channel groups. Depth, mask and validity live outside this map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Rgb,
    U,
    V,
    X,
    Y,
    Pe,
    Nrm,
    GtAbc,
}

impl Channel {
    pub const ALL: [Channel; 8] = [
        Channel::Rgb,
        Channel::U,
        Channel::V,
        Channel::X,
        Channel::Y,
        Channel::Pe,
        Channel::Nrm,
        Channel::GtAbc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Channel::Rgb => "rgb",
            Channel::U => "u",
            Channel::V => "v",
            Channel::X => "x",
            Channel::Y => "y",
            Channel::Pe => "pe",
            Channel::Nrm => "nrm",
            Channel::GtAbc => "gt_abc",
        }
    }

    pub fn from_name(name: &str) -> Option<Channel> {
        Channel::ALL.into_iter().find(|c| c.name() == name)
    }

    /// Fixed plane count, or `None` for the variable-width PE group.
    pub fn plane_count(self) -> Option<usize> {
        match self {
            Channel::Rgb | Channel::Nrm | Channel::GtAbc => Some(3),
            Channel::U | Channel::V | Channel::X | Channel::Y => Some(1),
            Channel::Pe => None,
        }
    }
}

/// Configuration of the sinusoidal position encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeConfig {
    planes: usize,
}

impl PeConfig {
    pub fn new(planes: usize) -> Result<Self> {
        if planes == 0 || !planes.is_multiple_of(4) {
            return Err(Error::BadPeConfig(planes));
        }
        Ok(Self { planes })
    }

    pub fn planes(&self) -> usize {
        self.planes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeoImage {
    width: usize,
    height: usize,
    depth: Vec<f64>,
    mask: Vec<u32>,
    valid: Vec<bool>,
    channels: BTreeMap<Channel, Vec<Vec<f64>>>,
}

impl GeoImage {
    /// An all-hole frame.
    pub fn new(width: usize, height: usize) -> Result<Self> {
        Self::from_depth(width, height, vec![0.0; width * height])
    }

    pub fn from_depth(width: usize, height: usize, depth: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::DegenerateOutput { width, height });
        }
        check_len("depth", depth.len(), width * height)?;
        let mut img = Self {
            width,
            height,
            valid: Vec::new(),
            mask: vec![0; width * height],
            depth,
            channels: BTreeMap::new(),
        };
        img.refresh_valid();
        Ok(img)
    }

    pub(crate) fn refresh_valid(&mut self) {
        for d in self.depth.iter_mut() {
            if !(d.is_finite() && *d > 0.0) {
                *d = 0.0;
            }
        }
        self.valid = self.depth.iter().map(|&d| d > 0.0).collect();
    }

    pub fn with_mask(mut self, mask: Vec<u32>) -> Result<Self> {
        check_len("mask", mask.len(), self.len())?;
        self.mask = mask;
        Ok(self)
    }

    pub fn with_channel(mut self, channel: Channel, planes: Vec<Vec<f64>>) -> Result<Self> {
        self.set_channel(channel, planes)?;
        Ok(self)
    }

    pub(crate) fn set_channel(&mut self, channel: Channel, planes: Vec<Vec<f64>>) -> Result<()> {
        match channel.plane_count() {
            Some(n) if planes.len() != n => {
                return Err(Error::ExtentMismatch(format!(
                    "channel {} needs {n} planes, got {}",
                    channel.name(),
                    planes.len()
                )))
            }
            None if planes.is_empty() || !planes.len().is_multiple_of(4) => {
                return Err(Error::BadPeConfig(planes.len()));
            }
            _ => {}
        }
        for p in &planes {
            check_len(channel.name(), p.len(), self.len())?;
        }
        self.channels.insert(channel, planes);
        Ok(())
    }

    pub fn without_channel(mut self, channel: Channel) -> Self {
        self.channels.remove(&channel);
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, col: usize, row: usize) -> usize {
        debug_assert!(col < self.width && row < self.height);
        row * self.width + col
    }

    pub fn depth(&self) -> &[f64] {
        &self.depth
    }

    pub fn mask(&self) -> &[u32] {
        &self.mask
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn channel(&self, channel: Channel) -> Option<&[Vec<f64>]> {
        self.channels.get(&channel).map(Vec::as_slice)
    }

    pub fn has(&self, channel: Channel) -> bool {
        self.channels.contains_key(&channel)
    }

    pub fn require(&self, channel: Channel) -> Result<&[Vec<f64>]> {
        self.channel(channel).ok_or(Error::MissingPlane(channel.name()))
    }

    pub fn channels(&self) -> impl Iterator<Item = (Channel, &[Vec<f64>])> {
        self.channels.iter().map(|(c, p)| (*c, p.as_slice()))
    }

    /// Distinct non-zero object ids present in the mask, ascending.
    pub fn object_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.mask.iter().copied().filter(|&m| m != 0).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Reassembles a frame from raw parts, recomputing validity from depth.
    pub(crate) fn from_parts(
        width: usize,
        height: usize,
        depth: Vec<f64>,
        mask: Vec<u32>,
        channels: BTreeMap<Channel, Vec<Vec<f64>>>,
    ) -> Result<Self> {
        let mut img = Self::from_depth(width, height, depth)?.with_mask(mask)?;
        for (c, planes) in channels {
            img.set_channel(c, planes)?;
        }
        Ok(img)
    }

    pub(crate) fn depth_mut(&mut self) -> &mut [f64] {
        &mut self.depth
    }
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::ExtentMismatch(format!(
            "plane {what} has {got} samples, expected {want}"
        )));
    }
    Ok(())
}

/// Fills U and V with each pixel's own column and row index.
pub fn encode_plain_uv(img: &GeoImage) -> GeoImage {
    let (w, h) = (img.width, img.height);
    let u: Vec<f64> = (0..h).flat_map(|_| (0..w).map(|c| c as f64)).collect();
    let v: Vec<f64> = (0..h).flat_map(|r| std::iter::repeat_n(r as f64, w)).collect();
    let mut out = img.clone();
    out.channels.insert(Channel::U, vec![u]);
    out.channels.insert(Channel::V, vec![v]);
    out
}

/// Inverse-projected `(x, y)` of each valid pixel from its U, V and D values.
pub fn encode_xy(img: &GeoImage, k: &CameraIntrinsics) -> Result<GeoImage> {
    if img.width != k.width || img.height != k.height {
        return Err(Error::IntrinsicsMismatch {
            img_w: img.width,
            img_h: img.height,
            k_w: k.width,
            k_h: k.height,
        });
    }
    let u = &img.require(Channel::U)?[0];
    let v = &img.require(Channel::V)?[0];
    let mut xs = vec![0.0; img.len()];
    let mut ys = vec![0.0; img.len()];
    for i in 0..img.len() {
        if img.valid[i] {
            let p = backproject(k, PixelSample::new(u[i], v[i], img.depth[i]))?;
            xs[i] = p.x;
            ys[i] = p.y;
        }
    }
    let mut out = img.clone();
    out.channels.insert(Channel::X, vec![xs]);
    out.channels.insert(Channel::Y, vec![ys]);
    Ok(out)
}

/// Frequency divisor `10000^(4i/D)` for pair index `i`.
fn pe_divisor(i: usize, planes: usize) -> f64 {
    PE_BASE.powf(4.0 * i as f64 / planes as f64)
}

/// Sinusoidal encoding of the U and V channel values.
///
/// The first half of the planes encodes U as interleaved (sin, cos) pairs of
/// decreasing frequency, the second half encodes V the same way.
pub fn encode_pe(img: &GeoImage, cfg: PeConfig) -> Result<GeoImage> {
    let n = cfg.planes();
    let u = &img.require(Channel::U)?[0];
    let v = &img.require(Channel::V)?[0];
    let half = n / 2;
    let mut planes = vec![vec![0.0; img.len()]; n];
    for i in 0..n / 4 {
        let div = pe_divisor(i, n);
        for p in 0..img.len() {
            let (su, cu) = (u[p] / div).sin_cos();
            let (sv, cv) = (v[p] / div).sin_cos();
            planes[2 * i][p] = su;
            planes[2 * i + 1][p] = cu;
            planes[2 * i + half][p] = sv;
            planes[2 * i + 1 + half][p] = cv;
        }
    }
    let mut out = img.clone();
    out.channels.insert(Channel::Pe, planes);
    Ok(out)
}

/// Unit surface normals from central differences of the backprojected depth.
///
/// Normals face the camera. Border pixels and pixels with an invalid
/// 4-neighbor get `(0, 0, 0)`. Pixel positions come from the U/V channels when
/// present, otherwise from the built-in indices.
pub fn encode_normals(img: &GeoImage, k: &CameraIntrinsics) -> GeoImage {
    let (w, h) = (img.width, img.height);
    let uv = img.channel(Channel::U).zip(img.channel(Channel::V));
    let point = |col: usize, row: usize| -> [f64; 3] {
        let i = row * w + col;
        let (u, v) = match uv {
            Some((u, v)) => (u[0][i], v[0][i]),
            None => (col as f64, row as f64),
        };
        let d = img.depth[i];
        [(u - k.cx) * d / k.fx, (v - k.cy) * d / k.fy, d]
    };
    let mut nrm = vec![vec![0.0; img.len()]; 3];
    for row in 1..h.saturating_sub(1) {
        for col in 1..w.saturating_sub(1) {
            let i = row * w + col;
            if !(img.valid[i] && img.valid[i - 1] && img.valid[i + 1] && img.valid[i - w] && img.valid[i + w]) {
                continue;
            }
            let (l, r) = (point(col - 1, row), point(col + 1, row));
            let (t, b) = (point(col, row - 1), point(col, row + 1));
            let du = [r[0] - l[0], r[1] - l[1], r[2] - l[2]];
            let dv = [b[0] - t[0], b[1] - t[1], b[2] - t[2]];
            let mut n = [
                du[1] * dv[2] - du[2] * dv[1],
                du[2] * dv[0] - du[0] * dv[2],
                du[0] * dv[1] - du[1] * dv[0],
            ];
            let norm = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            if !(norm > 0.0 && norm.is_finite()) {
                continue;
            }
            let c = point(col, row);
            let s = if n[0] * c[0] + n[1] * c[1] + n[2] * c[2] > 0.0 { -1.0 } else { 1.0 } / norm;
            for (k, n) in n.iter_mut().enumerate() {
                *n *= s;
                nrm[k][i] = *n;
            }
        }
    }
    let mut out = img.clone();
    out.channels.insert(Channel::Nrm, nrm);
    out
}
