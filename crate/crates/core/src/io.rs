//! On-disk formats: frame archives, depth and color PNGs, raw planar dumps,
//! model point files, correspondence CSVs and pose lists.
//!
//! A frame archive is a directory holding
//!
//! | file | content |
//! |------|---------|
//! | `depth.png` | 16-bit depth in millimeters, 0 = hole |
//! | `mask.png` | 16-bit object ids, 0 = background |
//! | `rgb.png` | 8-bit color |
//! | `intrinsics.json` | `{"fx","fy","cx","cy","width","height"}` |
//! | `pose.json` | list of `{"id","name","occlusion","quat_wxyz","t"}` |
//! | `gt_abc.bin` | ground-truth object coordinates, float32 planar dump |
//! | `channels.bin`, `channels.json` | every plane at full float64 precision |
//! | `models/<name>.xyz`, `models/<name>.json` | object points and metadata |
//!
//! Planar dumps start with a 16-byte header: a 4-byte magic, then height,
//! width and plane count as little-endian u32. Samples follow plane by plane,
//! row-major, little-endian. `gt_abc.bin` uses magic `GABC` with float32
//! samples; `channels.bin` uses `GC64` with float64 samples. Readers prefer
//! `channels.bin` since the PNG and float32 copies are lossy.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo_image::{Channel, GeoImage};
use crate::geometry::{CamPoint, CameraIntrinsics, ModelPoint, PixelSample, Pose};
use crate::metrics::ModelPoints;
use crate::scene::Scene;
use crate::solver::{Correspondences, Observations};

pub const GT_ABC_MAGIC: &[u8; 4] = b"GABC";
pub const CHANNELS_MAGIC: &[u8; 4] = b"GC64";

/// `%g`-style formatting with 6 significant digits.
pub fn fmt_sig(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..6).contains(&exp) {
        let decimals = (5 - exp) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa.to_string()), exp.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// Writes through a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path.file_name().ok_or_else(|| Error::format(path, "path", "no file name"))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, "json", e.to_string()))?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, json_field(&e), e.to_string()))
}

fn json_field(e: &serde_json::Error) -> String {
    format!("line {} column {}", e.line(), e.column())
}

fn png_bytes(width: usize, height: usize, color: image::ExtendedColorType, raw: &[u8], path: &Path) -> Result<Vec<u8>> {
    use image::ImageEncoder;
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out)
        .write_image(raw, width as u32, height as u32, color)
        .map_err(|e| Error::Image { path: path.into(), source: e })?;
    Ok(out)
}

fn write_gray16(path: &Path, width: usize, height: usize, values: impl Iterator<Item = u16>) -> Result<()> {
    let raw: Vec<u8> = values.flat_map(u16::to_ne_bytes).collect();
    write_atomic(path, &png_bytes(width, height, image::ExtendedColorType::L16, &raw, path)?)
}

fn read_gray16(path: &Path) -> Result<(usize, usize, Vec<u16>)> {
    let img = image::open(path).map_err(|e| Error::Image { path: path.into(), source: e })?;
    let g = img.into_luma16();
    Ok((g.width() as usize, g.height() as usize, g.into_raw()))
}

/// Depth as 16-bit millimeters; values beyond 65.535 m saturate.
pub fn write_depth_png(path: &Path, img: &GeoImage) -> Result<()> {
    let mm = img.depth().iter().map(|&d| (d * 1000.0).round().clamp(0.0, u16::MAX as f64) as u16);
    write_gray16(path, img.width(), img.height(), mm)
}

/// Depth in meters from a 16-bit millimeter PNG.
pub fn read_depth_png(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let (w, h, raw) = read_gray16(path)?;
    Ok((w, h, raw.into_iter().map(|v| v as f64 / 1000.0).collect()))
}

pub fn write_mask_png(path: &Path, img: &GeoImage) -> Result<()> {
    if let Some(&id) = img.mask().iter().find(|&&m| m > u16::MAX as u32) {
        return Err(Error::format(path, "mask", format!("object id {id} does not fit 16 bits")));
    }
    write_gray16(path, img.width(), img.height(), img.mask().iter().map(|&m| m as u16))
}

pub fn read_mask_png(path: &Path) -> Result<(usize, usize, Vec<u32>)> {
    let (w, h, raw) = read_gray16(path)?;
    Ok((w, h, raw.into_iter().map(u32::from).collect()))
}

/// 8-bit color from the RGB planes (0..1), black when the frame has none.
pub fn write_rgb_png(path: &Path, img: &GeoImage) -> Result<()> {
    let n = img.len();
    let mut raw = vec![0u8; 3 * n];
    if let Some(rgb) = img.channel(Channel::Rgb) {
        for i in 0..n {
            for c in 0..3 {
                raw[3 * i + c] = (rgb[c][i].clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
    }
    write_atomic(path, &png_bytes(img.width(), img.height(), image::ExtendedColorType::Rgb8, &raw, path)?)
}

pub fn read_rgb_png(path: &Path) -> Result<(usize, usize, Vec<Vec<f64>>)> {
    let img = image::open(path).map_err(|e| Error::Image { path: path.into(), source: e })?;
    let rgb = img.into_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut planes = vec![vec![0.0; w * h]; 3];
    for (i, px) in rgb.pixels().enumerate() {
        for c in 0..3 {
            planes[c][i] = px.0[c] as f64 / 255.0;
        }
    }
    Ok((w, h, planes))
}

/// Sample width of a planar dump.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleType {
    F32,
    F64,
}

pub fn encode_planar(magic: &[u8; 4], width: usize, height: usize, planes: &[&[f64]], ty: SampleType) -> Vec<u8> {
    let size = match ty {
        SampleType::F32 => 4,
        SampleType::F64 => 8,
    };
    let mut out = Vec::with_capacity(16 + planes.len() * width * height * size);
    out.extend_from_slice(magic);
    for v in [height, width, planes.len()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for plane in planes {
        for &x in plane.iter() {
            match ty {
                SampleType::F32 => out.extend_from_slice(&(x as f32).to_le_bytes()),
                SampleType::F64 => out.extend_from_slice(&x.to_le_bytes()),
            }
        }
    }
    out
}

/// Parsed planar dump: width, height and planes.
pub type Planar = (usize, usize, Vec<Vec<f64>>);

pub fn decode_planar(path: &Path, bytes: &[u8], magic: &[u8; 4], ty: SampleType) -> Result<Planar> {
    if bytes.len() < 16 {
        return Err(Error::format(path, "header", "shorter than 16 bytes"));
    }
    if &bytes[..4] != magic {
        return Err(Error::format(
            path,
            "magic",
            format!("expected {:?}, found {:?}", String::from_utf8_lossy(magic), String::from_utf8_lossy(&bytes[..4])),
        ));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize;
    let (h, w, planes) = (word(0), word(1), word(2));
    let size = match ty {
        SampleType::F32 => 4,
        SampleType::F64 => 8,
    };
    let n = w * h;
    let want = 16 + planes * n * size;
    if bytes.len() != want {
        return Err(Error::format(path, "payload", format!("expected {want} bytes, found {}", bytes.len())));
    }
    let body = &bytes[16..];
    let out = (0..planes)
        .map(|p| {
            (0..n)
                .map(|i| {
                    let at = (p * n + i) * size;
                    match ty {
                        SampleType::F32 => f32::from_le_bytes(body[at..at + 4].try_into().expect("4 bytes")) as f64,
                        SampleType::F64 => f64::from_le_bytes(body[at..at + 8].try_into().expect("8 bytes")),
                    }
                })
                .collect()
        })
        .collect();
    Ok((w, h, out))
}

fn read_planar(path: &Path, magic: &[u8; 4], ty: SampleType) -> Result<Planar> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_planar(path, &bytes, magic, ty)
}

/// One annotated object instance, as stored in `pose.json` and prediction files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectAnnotation {
    pub id: u32,
    pub name: String,
    #[serde(default)]
    pub occlusion: f64,
    #[serde(flatten)]
    pub pose: Pose,
}

pub fn read_annotations(path: &Path) -> Result<Vec<ObjectAnnotation>> {
    read_json(path)
}

pub fn write_annotations(path: &Path, objects: &[ObjectAnnotation]) -> Result<()> {
    write_json(path, &objects)
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    name: String,
    diameter: f64,
    symmetric: bool,
}

/// `models/<name>.xyz` (one `a b c` line per point) plus a JSON sidecar.
pub fn write_model(dir: &Path, model: &ModelPoints) -> Result<()> {
    let mut text = String::with_capacity(model.len() * 48);
    for p in model.points() {
        text.push_str(&format!("{} {} {}\n", p.a, p.b, p.c));
    }
    write_atomic(&dir.join(format!("{}.xyz", model.name())), text.as_bytes())?;
    write_json(
        &dir.join(format!("{}.json", model.name())),
        &ModelMeta { name: model.name().to_string(), diameter: model.diameter(), symmetric: model.is_symmetric() },
    )
}

/// Reads `<stem>.xyz` and its sidecar; the stored diameter is verified.
pub fn read_model(xyz: &Path) -> Result<ModelPoints> {
    let text = fs::read_to_string(xyz).map_err(|e| Error::io(xyz, e))?;
    let mut points = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<&str> = line.split_whitespace().collect();
        if vals.len() != 3 {
            return Err(Error::format(xyz, format!("line {}", line_no + 1), "expected three numbers a b c"));
        }
        let mut p = [0.0; 3];
        for (k, v) in vals.iter().enumerate() {
            p[k] = v.parse().map_err(|_| {
                Error::format(xyz, format!("line {} field {}", line_no + 1, ["a", "b", "c"][k]), format!("not a number: {v:?}"))
            })?;
        }
        points.push(ModelPoint::new(p[0], p[1], p[2]));
    }
    let meta_path = xyz.with_extension("json");
    let stem = xyz.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    if meta_path.exists() {
        let meta: ModelMeta = read_json(&meta_path)?;
        ModelPoints::with_diameter(meta.name, points, meta.diameter, meta.symmetric).map_err(|e| match e {
            Error::InvalidArgument(msg) => Error::format(&meta_path, "diameter", msg),
            other => other,
        })
    } else {
        ModelPoints::new(stem, points, false)
    }
}

/// All `*.xyz` models in `dir`, keyed by model name.
pub fn read_models(dir: &Path) -> Result<BTreeMap<String, ModelPoints>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "xyz"))
        .collect();
    paths.sort();
    let mut out = BTreeMap::new();
    for p in paths {
        let m = read_model(&p)?;
        out.insert(m.name().to_string(), m);
    }
    Ok(out)
}

/// Correspondence CSV with header `a,b,c,u,v,d[,w]` (pixel observations) or
/// `a,b,c,x,y,z[,w]` (camera-frame observations).
pub fn read_correspondences(path: &Path) -> Result<Correspondences> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::format(path, "header", "file is empty"))?;
    let cols: Vec<String> = header.split(',').map(|c| c.trim().to_ascii_lowercase()).collect();
    let names: Vec<&str> = cols.iter().map(String::as_str).collect();
    let pixels = match names.as_slice() {
        ["a", "b", "c", "u", "v", "d"] | ["a", "b", "c", "u", "v", "d", "w"] => true,
        ["a", "b", "c", "x", "y", "z"] | ["a", "b", "c", "x", "y", "z", "w"] => false,
        _ => {
            return Err(Error::format(path, "header", format!("expected a,b,c,u,v,d[,w] or a,b,c,x,y,z[,w], found {header:?}")))
        }
    };
    let weighted = names.len() == 7;
    let mut model = Vec::new();
    let mut px = Vec::new();
    let mut cam = Vec::new();
    let mut weights = Vec::new();
    for (line_no, line) in lines {
        let vals: Vec<&str> = line.split(',').map(str::trim).collect();
        if vals.len() != names.len() {
            return Err(Error::format(
                path,
                format!("line {}", line_no + 1),
                format!("expected {} fields, found {}", names.len(), vals.len()),
            ));
        }
        let mut row = [0.0; 7];
        for (k, v) in vals.iter().enumerate() {
            row[k] = v
                .parse()
                .map_err(|_| Error::format(path, format!("line {} field {}", line_no + 1, names[k]), format!("not a number: {v:?}")))?;
        }
        model.push(ModelPoint::new(row[0], row[1], row[2]));
        if pixels {
            px.push(PixelSample::new(row[3], row[4], row[5]));
        } else {
            cam.push(CamPoint::new(row[3], row[4], row[5]));
        }
        if weighted {
            weights.push(row[6]);
        }
    }
    let obs = if pixels { Observations::Pixels(px) } else { Observations::Camera(cam) };
    Correspondences::new(model, obs, weighted.then_some(weights)).map_err(|e| match e {
        Error::InvalidArgument(msg) | Error::ExtentMismatch(msg) => Error::format(path, "rows", msg),
        other => other,
    })
}

/// Every object-coordinate and metadata file of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Archive {
    pub image: GeoImage,
    pub intrinsics: CameraIntrinsics,
    pub objects: Vec<ObjectAnnotation>,
    pub models: Vec<ModelPoints>,
}

#[derive(Serialize, Deserialize)]
struct PlaneLayout {
    width: usize,
    height: usize,
    /// `(name, plane count)` in file order.
    planes: Vec<(String, usize)>,
}

impl Archive {
    pub fn from_scene(scene: &Scene) -> Self {
        let objects = scene
            .models
            .iter()
            .zip(&scene.poses)
            .enumerate()
            .map(|(i, (m, &pose))| ObjectAnnotation {
                id: scene.id_of(i),
                name: m.name().to_string(),
                occlusion: scene.config.occlusion,
                pose,
            })
            .collect();
        Self {
            image: scene.image.clone(),
            intrinsics: scene.config.intrinsics,
            objects,
            models: scene.models.clone(),
        }
    }

    /// Ground-truth poses keyed by mask id.
    pub fn poses(&self) -> BTreeMap<u32, Pose> {
        self.objects.iter().map(|o| (o.id, o.pose)).collect()
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let img = &self.image;
        let mut names: Vec<&str> = self.models.iter().map(|m| m.name()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("model names in an archive must be unique".into()));
        }
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_depth_png(&dir.join("depth.png"), img)?;
        write_mask_png(&dir.join("mask.png"), img)?;
        write_rgb_png(&dir.join("rgb.png"), img)?;
        write_json(&dir.join("intrinsics.json"), &self.intrinsics)?;
        write_annotations(&dir.join("pose.json"), &self.objects)?;
        if let Some(abc) = img.channel(Channel::GtAbc) {
            let planes: Vec<&[f64]> = abc.iter().map(Vec::as_slice).collect();
            write_atomic(
                &dir.join("gt_abc.bin"),
                &encode_planar(GT_ABC_MAGIC, img.width(), img.height(), &planes, SampleType::F32),
            )?;
        }

        let mask: Vec<f64> = img.mask().iter().map(|&m| m as f64).collect();
        let mut planes: Vec<&[f64]> = vec![img.depth(), &mask];
        let mut layout = vec![("depth".to_string(), 1), ("mask".to_string(), 1)];
        for (c, p) in img.channels() {
            layout.push((c.name().to_string(), p.len()));
            planes.extend(p.iter().map(Vec::as_slice));
        }
        write_atomic(
            &dir.join("channels.bin"),
            &encode_planar(CHANNELS_MAGIC, img.width(), img.height(), &planes, SampleType::F64),
        )?;
        write_json(&dir.join("channels.json"), &PlaneLayout { width: img.width(), height: img.height(), planes: layout })?;

        let models = dir.join("models");
        fs::create_dir_all(&models).map_err(|e| Error::io(&models, e))?;
        for m in &self.models {
            write_model(&models, m)?;
        }
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let intrinsics: CameraIntrinsics = read_json(&dir.join("intrinsics.json"))?;
        let objects = read_annotations(&dir.join("pose.json"))?;
        let image = if dir.join("channels.bin").exists() {
            read_channels(dir)?
        } else {
            read_lossy(dir)?
        };
        let models_dir = dir.join("models");
        let mut models = Vec::new();
        if models_dir.is_dir() {
            // pose.json order first, then any unreferenced models by name
            let mut by_name = read_models(&models_dir)?;
            for o in &objects {
                if let Some(m) = by_name.remove(&o.name) {
                    models.push(m);
                }
            }
            models.extend(by_name.into_values());
        }
        Ok(Self { image, intrinsics, objects, models })
    }
}

fn read_channels(dir: &Path) -> Result<GeoImage> {
    let bin = dir.join("channels.bin");
    let json = dir.join("channels.json");
    let layout: PlaneLayout = read_json(&json)?;
    let (w, h, mut planes) = read_planar(&bin, CHANNELS_MAGIC, SampleType::F64)?;
    if (w, h) != (layout.width, layout.height) {
        return Err(Error::format(&bin, "header", format!("extent {w}x{h} disagrees with channels.json")));
    }
    if layout.planes.iter().map(|p| p.1).sum::<usize>() != planes.len() {
        return Err(Error::format(&json, "planes", "plane counts disagree with channels.bin"));
    }
    let mut depth = None;
    let mut mask = None;
    let mut channels = BTreeMap::new();
    let mut rest = planes.drain(..);
    for (name, count) in &layout.planes {
        let group: Vec<Vec<f64>> = rest.by_ref().take(*count).collect();
        match name.as_str() {
            "depth" => depth = group.into_iter().next(),
            "mask" => mask = group.into_iter().next().map(|m| m.into_iter().map(|v| v as u32).collect()),
            other => {
                let c = Channel::from_name(other)
                    .ok_or_else(|| Error::format(&json, "planes", format!("unknown channel {other:?}")))?;
                channels.insert(c, group);
            }
        }
    }
    let depth = depth.ok_or_else(|| Error::format(&json, "planes", "no depth plane"))?;
    let mask = mask.unwrap_or_else(|| vec![0; w * h]);
    GeoImage::from_parts(w, h, depth, mask, channels).map_err(|e| Error::format(&bin, "planes", e.to_string()))
}

fn read_lossy(dir: &Path) -> Result<GeoImage> {
    let depth_path = dir.join("depth.png");
    let (w, h, depth) = read_depth_png(&depth_path)?;
    let check = |path: &Path, pw: usize, ph: usize| -> Result<()> {
        if (pw, ph) != (w, h) {
            return Err(Error::format(path, "extent", format!("{pw}x{ph} differs from depth.png {w}x{h}")));
        }
        Ok(())
    };
    let mask_path = dir.join("mask.png");
    let mask = if mask_path.exists() {
        let (mw, mh, m) = read_mask_png(&mask_path)?;
        check(&mask_path, mw, mh)?;
        m
    } else {
        vec![0; w * h]
    };
    let mut channels = BTreeMap::new();
    let rgb_path = dir.join("rgb.png");
    if rgb_path.exists() {
        let (rw, rh, rgb) = read_rgb_png(&rgb_path)?;
        check(&rgb_path, rw, rh)?;
        channels.insert(Channel::Rgb, rgb);
    }
    let abc_path = dir.join("gt_abc.bin");
    if abc_path.exists() {
        let (aw, ah, abc) = read_planar(&abc_path, GT_ABC_MAGIC, SampleType::F32)?;
        check(&abc_path, aw, ah)?;
        if abc.len() != 3 {
            return Err(Error::format(&abc_path, "planes", format!("expected 3 planes, found {}", abc.len())));
        }
        channels.insert(Channel::GtAbc, abc);
    }
    GeoImage::from_parts(w, h, depth, mask, channels)
}
