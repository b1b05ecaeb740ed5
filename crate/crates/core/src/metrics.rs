//! Image quality metrics between frame sets and baked textures.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::atlas::TextureAtlas;
use crate::bake::TexelMap;
use crate::camera::OrbitTrajectory;
use crate::error::{Error, Result};
use crate::fusion::coverage;
use crate::mesh::TriangleMesh;
use crate::raster::{ColorImage, Raster};
use crate::render::render_color;

/// Reported for identical inputs instead of infinity.
pub const PSNR_CAP_DB: f64 = 99.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// Peak signal-to-noise ratio for unit-range RGB, averaged over the three
/// channels of the masked pixels.
pub fn psnr(a: &ColorImage, b: &ColorImage, mask: Option<&Raster<bool>>) -> Result<f64> {
    if !a.same_dims(b) {
        return Err(Error::ResolutionMismatch(format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    if let Some(m) = mask {
        if !m.same_dims(a) {
            return Err(Error::ResolutionMismatch(format!(
                "mask {:?} vs image {:?}",
                m.dims(),
                a.dims()
            )));
        }
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, (pa, pb)) in a.data().iter().zip(b.data()).enumerate() {
        if mask.is_some_and(|m| !m.data()[i]) {
            continue;
        }
        for k in 0..3 {
            let d = pa[k] - pb[k];
            sum += d * d;
        }
        count += 3;
    }
    if count == 0 {
        return Err(Error::InvalidInput("psnr over an empty mask".into()));
    }
    let mse = sum / count as f64;
    Ok(psnr_from_mse(mse))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP_DB
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
    }
}

/// Rec. 601 luma.
pub fn luma(image: &ColorImage) -> Raster<f64> {
    image.map(|c| 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2])
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut k: [f64; SSIM_WINDOW] =
        std::array::from_fn(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
    let s: f64 = k.iter().sum();
    for v in &mut k {
        *v /= s;
    }
    k
}

/// Separable Gaussian filter keeping only positions where the window fits.
fn filter_valid(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> (Vec<f64>, usize, usize) {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * row[x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    (out, ow, oh)
}

/// Mean structural similarity of the luma channels, 11x11 Gaussian window
/// (sigma 1.5), `C1 = 0.01^2`, `C2 = 0.03^2`.
pub fn ssim(a: &ColorImage, b: &ColorImage) -> Result<f64> {
    if !a.same_dims(b) {
        return Err(Error::ResolutionMismatch(format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    ssim_gray(&luma(a), &luma(b))
}

pub fn ssim_gray(a: &Raster<f64>, b: &Raster<f64>) -> Result<f64> {
    if !a.same_dims(b) {
        return Err(Error::ResolutionMismatch(format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    let (w, h) = a.dims();
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::InvalidInput(format!(
            "image {w}x{h} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )));
    }
    let k = gaussian_kernel();
    let x = a.data();
    let y = b.data();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(p, q)| p * q).collect();
    let (mx, ow, oh) = filter_valid(x, w, h, &k);
    let (my, _, _) = filter_valid(y, w, h, &k);
    let (exx, _, _) = filter_valid(&xx, w, h, &k);
    let (eyy, _, _) = filter_valid(&yy, w, h, &k);
    let (exy, _, _) = filter_valid(&xy, w, h, &k);
    let mut total = 0.0;
    for i in 0..ow * oh {
        let (ux, uy) = (mx[i], my[i]);
        let vx = exx[i] - ux * ux;
        let vy = eyy[i] - uy * uy;
        let cxy = exy[i] - ux * uy;
        let num = (2.0 * (ux * uy) + SSIM_C1) * (2.0 * cxy + SSIM_C2);
        let den = (ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2);
        total += num / den;
    }
    Ok(total / (ow * oh) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameMetric {
    pub frame: usize,
    pub psnr_db: f64,
    pub ssim: f64,
}

/// Per-frame PSNR/SSIM between two frame sets. LPIPS and FVD need
/// pretrained networks and stay empty here; the fields exist so external
/// tools can merge their numbers into the same report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FramePairReport {
    pub frames: Vec<FrameMetric>,
    pub frame_count: usize,
    pub mean_psnr_db: f64,
    pub mean_ssim: f64,
    pub lpips: Option<f64>,
    pub fvd: Option<f64>,
    /// Fraction of UV-occupied texels at or above the confidence threshold.
    pub coverage: Option<f64>,
}

/// Compares two equally long frame sets; PSNR is restricted to `masks`
/// when given, SSIM always uses full frames.
pub fn compare_frames(
    a: &[ColorImage],
    b: &[ColorImage],
    masks: Option<&[Raster<bool>]>,
) -> Result<FramePairReport> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::InvalidInput(format!(
            "frame sets of {} and {} frames cannot be compared",
            a.len(),
            b.len()
        )));
    }
    if masks.is_some_and(|m| m.len() != a.len()) {
        return Err(Error::InvalidInput("one mask per frame required".into()));
    }
    let frames = (0..a.len())
        .into_par_iter()
        .map(|t| {
            Ok(FrameMetric {
                frame: t,
                psnr_db: psnr(&a[t], &b[t], masks.map(|m| &m[t]))?,
                ssim: ssim(&a[t], &b[t])?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = frames.len() as f64;
    Ok(FramePairReport {
        frame_count: frames.len(),
        mean_psnr_db: frames.iter().map(|f| f.psnr_db).sum::<f64>() / n,
        mean_ssim: frames.iter().map(|f| f.ssim).sum::<f64>() / n,
        frames,
        lpips: None,
        fvd: None,
        coverage: None,
    })
}

/// What a baked atlas is compared against.
pub enum Reference<'a> {
    /// Ground-truth texture, rendered along the same trajectory.
    Atlas(&'a TextureAtlas),
    /// Pre-rendered ground-truth frames, one per trajectory pose.
    Frames(&'a [ColorImage]),
}

/// Renders `baked` along `trajectory` and compares each frame against the
/// reference, with PSNR masked to object pixels. Coverage of the baked
/// atlas at `confidence_threshold` is attached.
pub fn evaluate_bake(
    mesh: &TriangleMesh,
    baked: &TextureAtlas,
    reference: Reference<'_>,
    trajectory: &OrbitTrajectory,
    confidence_threshold: f64,
) -> Result<FramePairReport> {
    let renders = trajectory
        .poses()
        .par_iter()
        .map(|pose| render_color(mesh, baked, pose, confidence_threshold))
        .collect::<Result<Vec<_>>>()?;
    let ours: Vec<ColorImage> = renders.iter().map(|g| g.color_image()).collect();
    let masks: Vec<Raster<bool>> = renders
        .iter()
        .map(|g| Raster::from_vec(g.width(), g.height(), g.mask.clone()).expect("mask size"))
        .collect();
    let theirs: Vec<ColorImage> = match reference {
        Reference::Atlas(atlas) => trajectory
            .poses()
            .par_iter()
            .map(|pose| render_color(mesh, atlas, pose, confidence_threshold).map(|g| g.color_image()))
            .collect::<Result<Vec<_>>>()?,
        Reference::Frames(frames) => {
            if frames.len() != trajectory.frames() {
                return Err(Error::InvalidInput(format!(
                    "{} reference frames for {} poses",
                    frames.len(),
                    trajectory.frames()
                )));
            }
            frames.to_vec()
        }
    };
    let mut report = compare_frames(&ours, &theirs, Some(&masks))?;
    let map = TexelMap::build(mesh, baked.width(), baked.height())?;
    report.coverage = Some(coverage(baked, &map.occupancy(), confidence_threshold)?);
    Ok(report)
}

impl FramePairReport {
    /// One line per frame followed by a summary footer.
    pub fn to_text(&self) -> String {
        let mut out = String::from("frame  psnr_db    ssim\n");
        for f in &self.frames {
            let _ = writeln!(out, "{:04}   {:8.4}  {:.6}", f.frame, f.psnr_db, f.ssim);
        }
        let _ = writeln!(out, "# summary");
        let _ = writeln!(out, "frames        {}", self.frame_count);
        let _ = writeln!(out, "mean_psnr_db  {:.4}", self.mean_psnr_db);
        let _ = writeln!(out, "mean_ssim     {:.6}", self.mean_ssim);
        if let Some(c) = self.coverage {
            let _ = writeln!(out, "coverage      {c:.6}");
        }
        out
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let text = dir.join("report.txt");
        std::fs::write(&text, self.to_text()).map_err(|e| Error::io(&text, e))?;
        let json = dir.join("report.json");
        let body = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(&json, body).map_err(|e| Error::io(&json, e))
    }
}
