//! The boundary to whatever produces RGB turntable frames from conditioning
//! frames.
//!
//! A request is a directory:
//!
//! ```text
//! frames/{normal,position,depth,mask[,color,inpaint]}/NNNN.png
//! trajectory.toml
//! manifest.toml
//! [reference.png]
//! ```
//!
//! Providers return one 8-bit RGB frame per pose at the trajectory
//! resolution. Three are included: [`OracleGenerator`] renders a known
//! textured mesh, [`FsGenerator`] hands the directory to an external
//! process through a shared folder, and [`HttpGenerator`] talks to a job
//! server.

use std::io::{Cursor, Read, Write};
use std::path::{Path, PathBuf};
use std::thread;
use std::time::{Duration, Instant};

use image::RgbImage;
use log::{debug, info};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::atlas::TextureAtlas;
use crate::camera::OrbitTrajectory;
use crate::error::{Error, GeneratorError, Result};
use crate::frames::{self, FrameKind};
use crate::mesh::{rotate_mesh, Rotation, TriangleMesh};
use crate::raster::Raster;
use crate::render::{render_color, render_gbuffer};

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const TRAJECTORY_FILE: &str = "trajectory.toml";
/// Largest fraction of pixels whose mask may differ between a rendered
/// frame and its conditioning mask.
pub const MASK_TOLERANCE: f64 = 0.005;

/// Contents of `manifest.toml`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub prompt: String,
    /// File name of the trajectory, relative to the request directory.
    pub trajectory: String,
    pub frame_kinds: Vec<FrameKind>,
    pub frames: usize,
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub iteration: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_image: Option<String>,
    /// Rotation applied to the normalized mesh before rendering.
    pub rotation: Rotation,
}

#[derive(Clone, Debug)]
pub struct GenerationRequest {
    pub frame_dir: PathBuf,
    pub trajectory: OrbitTrajectory,
    pub kinds: Vec<FrameKind>,
    pub prompt: String,
    pub reference_image: Option<PathBuf>,
    pub rotation: Rotation,
    pub iteration: usize,
}

impl GenerationRequest {
    pub fn manifest(&self) -> Manifest {
        let res = self.trajectory.resolution();
        Manifest {
            prompt: self.prompt.clone(),
            trajectory: TRAJECTORY_FILE.into(),
            frame_kinds: self.kinds.clone(),
            frames: self.trajectory.frames(),
            width: res.width,
            height: res.height,
            iteration: self.iteration,
            reference_image: self
                .reference_image
                .as_ref()
                .and_then(|p| p.file_name())
                .map(|n| n.to_string_lossy().into_owned()),
            rotation: self.rotation,
        }
    }

    /// Reads a request directory written by [`prepare_request`] or by hand.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: Manifest = toml::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        let trajectory = OrbitTrajectory::load(dir.join(&m.trajectory))?;
        let req = GenerationRequest {
            frame_dir: dir.to_path_buf(),
            trajectory,
            kinds: m.frame_kinds,
            prompt: m.prompt,
            reference_image: m.reference_image.map(|n| dir.join(n)),
            rotation: m.rotation,
            iteration: m.iteration,
        };
        let res = req.trajectory.resolution();
        if m.frames != req.trajectory.frames() || (m.width, m.height) != (res.width, res.height) {
            return Err(Error::format(
                &path,
                "manifest frame count or resolution disagrees with the trajectory",
            ));
        }
        Ok(req)
    }

    /// Checks that every listed kind has one frame per pose at the
    /// trajectory resolution.
    pub fn validate(&self) -> Result<()> {
        let res = self.trajectory.resolution();
        for &kind in &self.kinds {
            let found = frames::count_frames(&self.frame_dir, kind);
            if found != self.trajectory.frames() {
                return Err(Error::InvalidInput(format!(
                    "{} frames of kind {}, expected {}",
                    found,
                    kind.name(),
                    self.trajectory.frames()
                )));
            }
            for t in 0..found {
                let path = frames::frame_path(&self.frame_dir, kind, t);
                let dims = image::image_dimensions(&path).map_err(|e| Error::format(&path, e.to_string()))?;
                if dims != (res.width, res.height) {
                    return Err(Error::ResolutionMismatch(format!(
                        "{} is {}x{}, expected {}x{}",
                        path.display(),
                        dims.0,
                        dims.1,
                        res.width,
                        res.height
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn mask(&self, t: usize) -> Result<Raster<bool>> {
        frames::read_mask(&frames::frame_path(&self.frame_dir, FrameKind::Mask, t))
    }
}

/// Renders conditioning frames of `mesh` (already rotated) into `dir` and
/// writes the manifest and trajectory. With `atlas`, partial-texture color
/// and inpaint masks are included.
#[allow(clippy::too_many_arguments)]
pub fn prepare_request(
    dir: &Path,
    mesh: &TriangleMesh,
    atlas: Option<&TextureAtlas>,
    confidence_threshold: f64,
    trajectory: &OrbitTrajectory,
    rotation: &Rotation,
    prompt: &str,
    reference_image: Option<&Path>,
    iteration: usize,
) -> Result<GenerationRequest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let kinds: Vec<FrameKind> = match atlas {
        Some(_) => FrameKind::ALL.to_vec(),
        None => FrameKind::GEOMETRY.to_vec(),
    };
    let (near, far) = (trajectory.near(), trajectory.far());
    trajectory
        .poses()
        .par_iter()
        .enumerate()
        .try_for_each(|(t, pose)| -> Result<()> {
            let g = match atlas {
                Some(a) => render_color(mesh, a, pose, confidence_threshold)?,
                None => render_gbuffer(mesh, pose),
            };
            frames::write_gbuffer(dir, t, &g, near, far, &kinds)
        })?;
    trajectory.save(dir.join(TRAJECTORY_FILE))?;
    let reference_image = match reference_image {
        Some(src) => {
            let ext = src.extension().map(|e| e.to_string_lossy().into_owned()).unwrap_or_else(|| "png".into());
            let dst = dir.join(format!("reference.{ext}"));
            std::fs::copy(src, &dst).map_err(|e| Error::io(src, e))?;
            Some(dst)
        }
        None => None,
    };
    let req = GenerationRequest {
        frame_dir: dir.to_path_buf(),
        trajectory: trajectory.clone(),
        kinds,
        prompt: prompt.to_string(),
        reference_image,
        rotation: *rotation,
        iteration,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = toml::to_string(&req.manifest()).expect("manifest serializes");
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(req)
}

#[derive(Clone, Debug)]
pub struct GenerationResponse {
    pub frames: Vec<RgbImage>,
    pub provider: String,
    pub elapsed: Duration,
}

pub trait AppearanceGenerator: Send {
    fn name(&self) -> &str;
    fn generate(&mut self, request: &GenerationRequest) -> Result<GenerationResponse>;
}

/// Checks frame count and resolution against the trajectory.
pub fn validate_frames(frames: &[RgbImage], trajectory: &OrbitTrajectory) -> Result<(), GeneratorError> {
    if frames.len() != trajectory.frames() {
        return Err(GeneratorError::MalformedResponse(format!(
            "{} frames returned, expected {}",
            frames.len(),
            trajectory.frames()
        )));
    }
    let res = trajectory.resolution();
    for (t, f) in frames.iter().enumerate() {
        if f.dimensions() != (res.width, res.height) {
            return Err(GeneratorError::MalformedResponse(format!(
                "frame {t} is {}x{}, expected {}x{}",
                f.width(),
                f.height(),
                res.width,
                res.height
            )));
        }
    }
    Ok(())
}

/// Fraction of pixels where two masks disagree.
pub fn mask_disagreement(a: &Raster<bool>, b: &Raster<bool>) -> f64 {
    if !a.same_dims(b) || a.is_empty() {
        return 1.0;
    }
    let diff = a.data().iter().zip(b.data()).filter(|(x, y)| x != y).count();
    diff as f64 / a.len() as f64
}

/// Renders a known textured mesh; the ground truth for end-to-end checks.
pub struct OracleGenerator {
    mesh: TriangleMesh,
    atlas: TextureAtlas,
}

impl OracleGenerator {
    /// `mesh` is the normalized, unrotated reference with its texture.
    pub fn new(mesh: TriangleMesh, atlas: TextureAtlas) -> Result<Self> {
        mesh.require_uvs()?;
        Ok(OracleGenerator { mesh, atlas })
    }

    /// Quantized frames and masks of the reference under `rotation`.
    pub fn render(&self, trajectory: &OrbitTrajectory, rotation: &Rotation) -> Result<Vec<(RgbImage, Raster<bool>)>> {
        let rotated = rotate_mesh(&self.mesh, rotation);
        trajectory
            .poses()
            .par_iter()
            .map(|pose| {
                let g = render_color(&rotated, &self.atlas, pose, 0.0)?;
                let rgb = frames::color_to_rgb8(&g.color_image());
                let mask = Raster::from_vec(g.width(), g.height(), g.mask)?;
                Ok((rgb, mask))
            })
            .collect()
    }
}

impl AppearanceGenerator for OracleGenerator {
    fn name(&self) -> &str {
        "oracle"
    }

    fn generate(&mut self, request: &GenerationRequest) -> Result<GenerationResponse> {
        let start = Instant::now();
        let rendered = self.render(&request.trajectory, &request.rotation)?;
        let mut out = Vec::with_capacity(rendered.len());
        for (t, (rgb, mask)) in rendered.into_iter().enumerate() {
            let expected = request.mask(t)?;
            let d = mask_disagreement(&mask, &expected);
            if d > MASK_TOLERANCE {
                return Err(GeneratorError::GeometryMismatch(format!(
                    "frame {t}: {:.2}% of mask pixels differ from the conditioning mask",
                    100.0 * d
                ))
                .into());
            }
            out.push(rgb);
        }
        validate_frames(&out, &request.trajectory)?;
        Ok(GenerationResponse {
            frames: out,
            provider: self.name().into(),
            elapsed: start.elapsed(),
        })
    }
}

fn gen_io(path: &Path) -> impl FnOnce(std::io::Error) -> GeneratorError + '_ {
    move |source| GeneratorError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn remove_if_exists(path: &Path) -> Result<(), GeneratorError> {
    match std::fs::remove_dir_all(path) {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(gen_io(path)(e)),
        _ => Ok(()),
    }
}

const POLL_START: Duration = Duration::from_millis(20);
const POLL_MAX: Duration = Duration::from_millis(500);

/// Polls `ready` with doubling sleeps capped at [`POLL_MAX`] until it yields
/// a value or `timeout` passes.
fn poll_until<T>(
    timeout: Duration,
    mut ready: impl FnMut() -> Result<Option<T>, GeneratorError>,
) -> Result<T, GeneratorError> {
    let start = Instant::now();
    let mut wait = POLL_START;
    loop {
        if let Some(v) = ready()? {
            return Ok(v);
        }
        let elapsed = start.elapsed();
        if elapsed >= timeout {
            return Err(GeneratorError::Timeout(timeout));
        }
        thread::sleep(wait.min(timeout - elapsed));
        wait = (wait * 2).min(POLL_MAX);
    }
}

/// Exchanges requests with an external process through a directory.
///
/// The request is copied to `exchange/request/` (staged under a temporary
/// name, then renamed). The provider writes
/// `exchange/response/frames/color/NNNN.png` and then creates
/// `exchange/response/DONE`; a `FAILED` file with a message aborts instead.
pub struct FsGenerator {
    exchange: PathBuf,
    timeout: Duration,
}

impl FsGenerator {
    pub fn new(exchange: impl Into<PathBuf>, timeout: Duration) -> Self {
        FsGenerator {
            exchange: exchange.into(),
            timeout,
        }
    }

    pub fn request_dir(&self) -> PathBuf {
        self.exchange.join("request")
    }

    pub fn response_dir(&self) -> PathBuf {
        self.exchange.join("response")
    }
}

impl AppearanceGenerator for FsGenerator {
    fn name(&self) -> &str {
        "fs"
    }

    fn generate(&mut self, request: &GenerationRequest) -> Result<GenerationResponse> {
        let start = Instant::now();
        let req_dir = self.request_dir();
        let resp_dir = self.response_dir();
        let staging = self.exchange.join(".request.partial");
        remove_if_exists(&resp_dir)?;
        remove_if_exists(&req_dir)?;
        remove_if_exists(&staging)?;
        frames::copy_tree(&request.frame_dir, &staging)?;
        std::fs::rename(&staging, &req_dir).map_err(gen_io(&req_dir))?;
        info!("request staged in {}", req_dir.display());

        let done = resp_dir.join("DONE");
        let failed = resp_dir.join("FAILED");
        poll_until(self.timeout, || {
            if failed.exists() {
                let msg = std::fs::read_to_string(&failed).unwrap_or_default();
                return Err(GeneratorError::RemoteFailure(msg.trim().to_string()));
            }
            Ok(done.exists().then_some(()))
        })?;

        let count = frames::count_frames(&resp_dir, FrameKind::Color);
        if count != request.trajectory.frames() {
            return Err(GeneratorError::MalformedResponse(format!(
                "{count} color frames in response, expected {}",
                request.trajectory.frames()
            ))
            .into());
        }
        let out = frames::read_color_frames(&resp_dir, count).map_err(|e| {
            GeneratorError::MalformedResponse(format!("unreadable response frame: {e}"))
        })?;
        validate_frames(&out, &request.trajectory)?;
        Ok(GenerationResponse {
            frames: out,
            provider: self.name().into(),
            elapsed: start.elapsed(),
        })
    }
}

/// Zips a directory tree with fixed timestamps, entries sorted by path.
pub fn zip_dir(dir: &Path) -> Result<Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(String, PathBuf)>) -> Result<()> {
        let mut entries: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .collect::<std::io::Result<_>>()
            .map_err(|e| Error::io(dir, e))?;
        entries.sort_by_key(|e| e.file_name());
        for e in entries {
            let p = e.path();
            if p.is_dir() {
                walk(root, &p, out)?;
            } else {
                let rel = p.strip_prefix(root).expect("inside root");
                let name = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
                out.push((name, p));
            }
        }
        Ok(())
    }
    let mut files = Vec::new();
    walk(dir, dir, &mut files)?;
    let mut zw = zip::ZipWriter::new(Cursor::new(Vec::new()));
    let opts = zip::write::SimpleFileOptions::default().compression_method(zip::CompressionMethod::Deflated);
    for (name, path) in files {
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        zw.start_file(name, opts)
            .map_err(|e| Error::InvalidInput(format!("zip: {e}")))?;
        zw.write_all(&bytes).map_err(|e| Error::io(&path, e))?;
    }
    let cursor = zw.finish().map_err(|e| Error::InvalidInput(format!("zip: {e}")))?;
    Ok(cursor.into_inner())
}

/// Extracts `frames/color/NNNN.png` entries from a response archive.
pub fn frames_from_zip(bytes: &[u8], count: usize) -> Result<Vec<RgbImage>, GeneratorError> {
    let malformed = |m: String| GeneratorError::MalformedResponse(m);
    let mut archive = zip::ZipArchive::new(Cursor::new(bytes)).map_err(|e| malformed(format!("result archive: {e}")))?;
    let mut out = Vec::with_capacity(count);
    for t in 0..count {
        let name = format!("frames/color/{t:04}.png");
        let mut entry = archive
            .by_name(&name)
            .map_err(|_| malformed(format!("result archive lacks {name}")))?;
        let mut buf = Vec::new();
        entry
            .read_to_end(&mut buf)
            .map_err(|e| malformed(format!("{name}: {e}")))?;
        let img = image::load_from_memory_with_format(&buf, image::ImageFormat::Png)
            .map_err(|e| malformed(format!("{name}: {e}")))?;
        out.push(img.to_rgb8());
    }
    Ok(out)
}

#[derive(Debug, Deserialize)]
struct JobCreated {
    #[serde(alias = "job_id")]
    id: String,
}

#[derive(Debug, Deserialize)]
struct JobStatus {
    status: String,
    #[serde(default)]
    error: Option<String>,
}

/// Job-server client.
///
/// * `POST {endpoint}/jobs` with a multipart field `request` holding the
///   zipped request directory; answers `{"id": "..."}`.
/// * `GET {endpoint}/jobs/{id}` answers `{"status": "queued" | "running" |
///   "done" | "failed", "error": "..."}`.
/// * `GET {endpoint}/jobs/{id}/result` returns a zip containing
///   `frames/color/NNNN.png`.
pub struct HttpGenerator {
    endpoint: String,
    timeout: Duration,
    client: reqwest::blocking::Client,
}

impl HttpGenerator {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| GeneratorError::Transport(e.to_string()))?;
        Ok(HttpGenerator {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            timeout,
            client,
        })
    }

    fn transport(e: reqwest::Error) -> GeneratorError {
        GeneratorError::Transport(e.to_string())
    }
}

impl AppearanceGenerator for HttpGenerator {
    fn name(&self) -> &str {
        "http"
    }

    fn generate(&mut self, request: &GenerationRequest) -> Result<GenerationResponse> {
        let start = Instant::now();
        let archive = zip_dir(&request.frame_dir)?;
        let part = reqwest::blocking::multipart::Part::bytes(archive)
            .file_name("request.zip")
            .mime_str("application/zip")
            .map_err(Self::transport)?;
        let form = reqwest::blocking::multipart::Form::new().part("request", part);
        let created: JobCreated = self
            .client
            .post(format!("{}/jobs", self.endpoint))
            .multipart(form)
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(Self::transport)?
            .json()
            .map_err(|e| GeneratorError::MalformedResponse(format!("job creation: {e}")))?;
        debug!("job {} submitted", created.id);

        let status_url = format!("{}/jobs/{}", self.endpoint, created.id);
        let remaining = self.timeout.saturating_sub(start.elapsed());
        poll_until(remaining, || {
            let st: JobStatus = self
                .client
                .get(&status_url)
                .send()
                .and_then(|r| r.error_for_status())
                .map_err(Self::transport)?
                .json()
                .map_err(|e| GeneratorError::MalformedResponse(format!("job status: {e}")))?;
            match st.status.as_str() {
                "done" => Ok(Some(())),
                "failed" => Err(GeneratorError::RemoteFailure(
                    st.error.unwrap_or_else(|| "no reason given".into()),
                )),
                "queued" | "pending" | "running" => Ok(None),
                other => Err(GeneratorError::MalformedResponse(format!("unknown job status {other:?}"))),
            }
        })
        .map_err(|e| match e {
            GeneratorError::Timeout(_) => GeneratorError::Timeout(self.timeout),
            e => e,
        })?;

        let bytes = self
            .client
            .get(format!("{status_url}/result"))
            .send()
            .and_then(|r| r.error_for_status())
            .and_then(|r| r.bytes())
            .map_err(Self::transport)?;
        let out = frames_from_zip(&bytes, request.trajectory.frames())?;
        validate_frames(&out, &request.trajectory)?;
        Ok(GenerationResponse {
            frames: out,
            provider: self.name().into(),
            elapsed: start.elapsed(),
        })
    }
}
