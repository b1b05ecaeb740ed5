//! On-disk encodings for conditioning frames and baked atlases.
//!
//! Frames live at `frames/{kind}/{t:04}.png` below a root directory:
//!
//! | kind       | PNG            | mapping                          |
//! |------------|----------------|----------------------------------|
//! | `normal`   | RGB, 16 bit    | `[-1, 1] -> [0, 65535]`          |
//! | `position` | RGB, 16 bit    | `[-1, 1] -> [0, 65535]`, clamped |
//! | `depth`    | gray, 16 bit   | `[near, far] -> [0, 65535]`      |
//! | `mask`     | gray, 8 bit    | 0 or 255                         |
//! | `color`    | RGB, 8 bit     | `[0, 1] -> [0, 255]`             |
//! | `inpaint`  | gray, 8 bit    | 0 or 255                         |
//!
//! Uncovered pixels encode as 0 in every kind except depth, which uses
//! 65535.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{DynamicImage, GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use log::warn;
use serde::{Deserialize, Serialize};

use crate::atlas::TextureAtlas;
use crate::error::{Error, Result};
use crate::raster::{ColorImage, Raster};
use crate::render::GBuffer;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameKind {
    Normal,
    Position,
    Depth,
    Mask,
    Color,
    Inpaint,
}

impl FrameKind {
    pub const GEOMETRY: [FrameKind; 4] = [
        FrameKind::Normal,
        FrameKind::Position,
        FrameKind::Depth,
        FrameKind::Mask,
    ];
    pub const ALL: [FrameKind; 6] = [
        FrameKind::Normal,
        FrameKind::Position,
        FrameKind::Depth,
        FrameKind::Mask,
        FrameKind::Color,
        FrameKind::Inpaint,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FrameKind::Normal => "normal",
            FrameKind::Position => "position",
            FrameKind::Depth => "depth",
            FrameKind::Mask => "mask",
            FrameKind::Color => "color",
            FrameKind::Inpaint => "inpaint",
        }
    }

    pub fn parse(s: &str) -> Option<FrameKind> {
        FrameKind::ALL.into_iter().find(|k| k.name() == s)
    }
}

pub fn frame_dir(root: &Path, kind: FrameKind) -> PathBuf {
    root.join("frames").join(kind.name())
}

pub fn frame_path(root: &Path, kind: FrameKind, t: usize) -> PathBuf {
    frame_dir(root, kind).join(format!("{t:04}.png"))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes a PNG with one fixed encoder configuration so identical images
/// give identical bytes.
pub fn save_png(path: &Path, image: &DynamicImage) -> Result<()> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let encoder = PngEncoder::new_with_quality(&mut w, CompressionType::Default, FilterType::Adaptive);
    image.write_with_encoder(encoder)?;
    w.flush().map_err(|e| Error::io(path, e))
}

#[inline]
fn quantize16(v: f64, lo: f64, hi: f64) -> u16 {
    let s = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
    (s * 65535.0).round() as u16
}

#[inline]
pub fn dequantize16(q: u16, lo: f64, hi: f64) -> f64 {
    lo + (q as f64 / 65535.0) * (hi - lo)
}

#[inline]
fn quantize8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn color_to_rgb8(image: &ColorImage) -> RgbImage {
    let (w, h) = image.dims();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        Rgb(image.get(x as usize, y as usize).map(quantize8))
    })
}

pub fn rgb8_to_color(image: &RgbImage) -> ColorImage {
    let (w, h) = image.dimensions();
    Raster::from_fn(w as usize, h as usize, |x, y| {
        image.get_pixel(x as u32, y as u32).0.map(|c| c as f64 / 255.0)
    })
}

fn vec3_image16(g: &GBuffer, data: &[[f64; 3]], what: &str) -> DynamicImage {
    let mut clamped = 0usize;
    let img = ImageBuffer::<Rgb<u16>, Vec<u16>>::from_fn(g.width() as u32, g.height() as u32, |x, y| {
        let i = g.index(x as usize, y as usize);
        if !g.mask[i] {
            return Rgb([0; 3]);
        }
        Rgb(data[i].map(|v| {
            if !(-1.0..=1.0).contains(&v) {
                clamped += 1;
            }
            quantize16(v, -1.0, 1.0)
        }))
    });
    if clamped > 0 {
        warn!("{clamped} {what} values outside [-1, 1] were clamped");
    }
    DynamicImage::ImageRgb16(img)
}

fn bool_image(g: &GBuffer, data: &[bool]) -> DynamicImage {
    DynamicImage::ImageLuma8(GrayImage::from_fn(g.width() as u32, g.height() as u32, |x, y| {
        Luma([if data[g.index(x as usize, y as usize)] { 255 } else { 0 }])
    }))
}

/// Encodes one channel of a g-buffer; `None` when the buffer lacks it.
pub fn encode_kind(g: &GBuffer, kind: FrameKind, near: f64, far: f64) -> Option<DynamicImage> {
    Some(match kind {
        FrameKind::Normal => vec3_image16(g, &g.normal, "normal"),
        FrameKind::Position => vec3_image16(g, &g.position, "position"),
        FrameKind::Depth => {
            DynamicImage::ImageLuma16(ImageBuffer::from_fn(g.width() as u32, g.height() as u32, |x, y| {
                let i = g.index(x as usize, y as usize);
                Luma([if g.mask[i] { quantize16(g.depth[i], near, far) } else { u16::MAX }])
            }))
        }
        FrameKind::Mask => bool_image(g, &g.mask),
        FrameKind::Inpaint => bool_image(g, g.inpaint.as_ref()?),
        FrameKind::Color => DynamicImage::ImageRgb8(color_to_rgb8(&g.color_image_opt()?)),
    })
}

impl GBuffer {
    fn color_image_opt(&self) -> Option<ColorImage> {
        self.color.as_ref().map(|_| self.color_image())
    }
}

/// Writes the requested kinds of frame `t`. Fails if a kind is requested
/// that the buffer does not carry.
pub fn write_gbuffer(
    root: &Path,
    t: usize,
    g: &GBuffer,
    near: f64,
    far: f64,
    kinds: &[FrameKind],
) -> Result<()> {
    for &kind in kinds {
        let img = encode_kind(g, kind, near, far).ok_or_else(|| {
            Error::InvalidInput(format!("frame {t} has no {} channel", kind.name()))
        })?;
        save_png(&frame_path(root, kind, t), &img)?;
    }
    Ok(())
}

pub fn write_color_frame(root: &Path, t: usize, image: &RgbImage) -> Result<()> {
    save_png(&frame_path(root, FrameKind::Color, t), &DynamicImage::ImageRgb8(image.clone()))
}

fn open_image(path: &Path) -> Result<DynamicImage> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
        .map_err(|e| Error::format(path, e.to_string()))
}

pub fn read_rgb8(path: &Path) -> Result<RgbImage> {
    Ok(open_image(path)?.to_rgb8())
}

pub fn read_mask(path: &Path) -> Result<Raster<bool>> {
    let img = open_image(path)?.to_luma8();
    let (w, h) = img.dimensions();
    Ok(Raster::from_fn(w as usize, h as usize, |x, y| {
        img.get_pixel(x as u32, y as u32).0[0] >= 128
    }))
}

/// Decodes a 16-bit RGB vector frame (normal or position) back to `[-1, 1]`.
pub fn read_vec3(path: &Path) -> Result<Raster<[f64; 3]>> {
    let img = open_image(path)?.to_rgb16();
    let (w, h) = img.dimensions();
    Ok(Raster::from_fn(w as usize, h as usize, |x, y| {
        img.get_pixel(x as u32, y as u32).0.map(|q| dequantize16(q, -1.0, 1.0))
    }))
}

/// Decodes a depth frame; uncovered pixels (65535) come back as infinity.
pub fn read_depth(path: &Path, near: f64, far: f64) -> Result<Raster<f64>> {
    let img = open_image(path)?.to_luma16();
    let (w, h) = img.dimensions();
    Ok(Raster::from_fn(w as usize, h as usize, |x, y| {
        match img.get_pixel(x as u32, y as u32).0[0] {
            u16::MAX => f64::INFINITY,
            q => dequantize16(q, near, far),
        }
    }))
}

/// Reads `count` color frames, failing if any is missing.
pub fn read_color_frames(root: &Path, count: usize) -> Result<Vec<RgbImage>> {
    (0..count)
        .map(|t| read_rgb8(&frame_path(root, FrameKind::Color, t)))
        .collect()
}

/// Number of `NNNN.png` files in a frame-kind directory.
pub fn count_frames(root: &Path, kind: FrameKind) -> usize {
    let dir = frame_dir(root, kind);
    std::fs::read_dir(&dir)
        .map(|it| {
            it.filter_map(|e| e.ok())
                .filter(|e| {
                    let name = e.file_name();
                    let name = name.to_string_lossy();
                    name.len() == 8 && name.ends_with(".png") && name[..4].bytes().all(|b| b.is_ascii_digit())
                })
                .count()
        })
        .unwrap_or(0)
}

/// Loads an 8-bit texture image as an RGB raster in [0, 1].
pub fn load_texture(path: &Path) -> Result<ColorImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = image::load_from_memory(&bytes).map_err(|e| Error::format(path, e.to_string()))?;
    Ok(rgb8_to_color(&img.to_rgb8()))
}

const CONFIDENCE_MAGIC: &[u8; 8] = b"TTVCONF1";

/// Confidence grid: 16-byte header (8-byte magic, width and height as
/// little-endian u32) followed by row-major little-endian f32 values.
pub fn encode_confidence(conf: &Raster<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * conf.len());
    out.extend_from_slice(CONFIDENCE_MAGIC);
    out.extend_from_slice(&(conf.width() as u32).to_le_bytes());
    out.extend_from_slice(&(conf.height() as u32).to_le_bytes());
    for &v in conf.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_confidence(bytes: &[u8]) -> std::result::Result<Raster<f64>, String> {
    if bytes.len() < 16 || &bytes[..8] != CONFIDENCE_MAGIC {
        return Err("missing confidence header".into());
    }
    let w = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let h = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let payload = &bytes[16..];
    if payload.len() != 4 * w * h {
        return Err(format!("payload of {} bytes for a {w}x{h} grid", payload.len()));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Raster::from_vec(w, h, data).map_err(|e| e.to_string())
}

/// Metadata written next to an atlas.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtlasSummary {
    pub width: usize,
    pub height: usize,
    /// Divisor used for the confidence preview image.
    pub confidence_preview_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coverage: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence_threshold: Option<f64>,
}

pub const ATLAS_COLOR: &str = "atlas_color.png";
pub const ATLAS_COLOR16: &str = "atlas_color16.png";
pub const ATLAS_CONFIDENCE: &str = "confidence.bin";
pub const ATLAS_PREVIEW: &str = "confidence_preview.png";
pub const ATLAS_SUMMARY: &str = "atlas.toml";

/// Writes color (8-bit, and 16-bit when `with_color16`), the confidence
/// grid, its 16-bit preview and `atlas.toml`.
pub fn write_atlas(
    dir: &Path,
    atlas: &TextureAtlas,
    coverage: Option<(f64, f64)>,
    with_color16: bool,
) -> Result<AtlasSummary> {
    create_dir(dir)?;
    let (w, h) = atlas.dims();
    save_png(&dir.join(ATLAS_COLOR), &DynamicImage::ImageRgb8(color_to_rgb8(atlas.color())))?;
    if with_color16 {
        let img = ImageBuffer::<Rgb<u16>, Vec<u16>>::from_fn(w as u32, h as u32, |x, y| {
            Rgb(atlas.color().get(x as usize, y as usize).map(|c| quantize16(c, 0.0, 1.0)))
        });
        save_png(&dir.join(ATLAS_COLOR16), &DynamicImage::ImageRgb16(img))?;
    }
    let conf_path = dir.join(ATLAS_CONFIDENCE);
    std::fs::write(&conf_path, encode_confidence(atlas.confidence()))
        .map_err(|e| Error::io(&conf_path, e))?;
    let max = atlas.max_confidence();
    let preview = ImageBuffer::<Luma<u16>, Vec<u16>>::from_fn(w as u32, h as u32, |x, y| {
        let c = *atlas.confidence().get(x as usize, y as usize);
        Luma([if max > 0.0 { quantize16(c / max, 0.0, 1.0) } else { 0 }])
    });
    save_png(&dir.join(ATLAS_PREVIEW), &DynamicImage::ImageLuma16(preview))?;
    let summary = AtlasSummary {
        width: w,
        height: h,
        confidence_preview_max: max,
        coverage: coverage.map(|c| c.0),
        confidence_threshold: coverage.map(|c| c.1),
    };
    let path = dir.join(ATLAS_SUMMARY);
    std::fs::write(&path, toml::to_string(&summary).expect("summary serializes"))
        .map_err(|e| Error::io(&path, e))?;
    Ok(summary)
}

/// Reads an atlas written by [`write_atlas`]. When the confidence grid is
/// absent, the color image is treated as fully known.
pub fn read_atlas(dir: &Path) -> Result<TextureAtlas> {
    let color = rgb8_to_color(&read_rgb8(&dir.join(ATLAS_COLOR))?);
    let conf_path = dir.join(ATLAS_CONFIDENCE);
    if !conf_path.exists() {
        return Ok(TextureAtlas::from_texture(color));
    }
    let bytes = std::fs::read(&conf_path).map_err(|e| Error::io(&conf_path, e))?;
    let conf = decode_confidence(&bytes).map_err(|m| Error::format(&conf_path, m))?;
    TextureAtlas::new(color, conf)
}

/// Reads an atlas from either an atlas directory or a plain texture image.
pub fn read_atlas_or_texture(path: &Path) -> Result<TextureAtlas> {
    if path.is_dir() {
        read_atlas(path)
    } else {
        Ok(TextureAtlas::from_texture(load_texture(path)?))
    }
}

/// Recursively copies a directory tree.
pub fn copy_tree(from: &Path, to: &Path) -> Result<()> {
    create_dir(to)?;
    let entries = std::fs::read_dir(from).map_err(|e| Error::io(from, e))?;
    let mut entries: Vec<_> = entries
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(from, e))?;
    entries.sort_by_key(|e| e.file_name());
    for entry in entries {
        let src = entry.path();
        let dst = to.join(entry.file_name());
        let ty = entry.file_type().map_err(|e| Error::io(&src, e))?;
        if ty.is_dir() {
            copy_tree(&src, &dst)?;
        } else {
            std::fs::copy(&src, &dst).map_err(|e| Error::io(&src, e))?;
        }
    }
    Ok(())
}
