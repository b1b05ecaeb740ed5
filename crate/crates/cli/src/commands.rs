//! The subcommands, callable as library functions.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{Context, Result};
use image::DynamicImage;
use log::info;
use serde::{Deserialize, Serialize};
use ttvbake_core::bake::{BakeAccumulator, BakeContext};
use ttvbake_core::camera::OrbitTrajectory;
use ttvbake_core::frames::{self, FrameKind};
use ttvbake_core::fusion::{coverage, plan_passes, progressive_texture, BakePlan, CoverageReport, Prompt};
use ttvbake_core::generator::{
    mask_disagreement, prepare_request, AppearanceGenerator, FsGenerator, GenerationRequest, HttpGenerator,
    OracleGenerator, MANIFEST_FILE, MASK_TOLERANCE, TRAJECTORY_FILE,
};
use ttvbake_core::mesh::{load_mesh, normalize_mesh, rotate_mesh, Rotation};
use ttvbake_core::metrics::{evaluate_bake, FramePairReport, Reference};
use ttvbake_core::raster::ColorImage;
use ttvbake_core::render::render_gbuffer;
use ttvbake_core::{fixtures, Raster, TextureAtlas, TriangleMesh};

use crate::config::{usage, GeneratorKind, PipelineConfig};

/// Builds into a sibling temporary directory and renames it over `output`
/// once `build` succeeds. The temporary directory is removed on failure.
pub fn publish<T>(output: &Path, build: impl FnOnce(&Path) -> Result<T>) -> Result<T> {
    let name = output
        .file_name()
        .ok_or_else(|| usage(format!("output path {} has no final component", output.display())))?
        .to_string_lossy()
        .into_owned();
    let parent = match output.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&parent).with_context(|| format!("creating {}", parent.display()))?;
    let pid = std::process::id();
    let tmp = parent.join(format!(".{name}.tmp-{pid}"));
    if tmp.exists() {
        std::fs::remove_dir_all(&tmp).with_context(|| format!("removing stale {}", tmp.display()))?;
    }
    std::fs::create_dir(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
    let value = match build(&tmp) {
        Ok(v) => v,
        Err(e) => {
            let _ = std::fs::remove_dir_all(&tmp);
            return Err(e);
        }
    };
    if output.exists() {
        let old = parent.join(format!(".{name}.old-{pid}"));
        std::fs::rename(output, &old).with_context(|| format!("moving aside {}", output.display()))?;
        std::fs::rename(&tmp, output).with_context(|| format!("publishing {}", output.display()))?;
        std::fs::remove_dir_all(&old).with_context(|| format!("removing {}", old.display()))?;
    } else {
        std::fs::rename(&tmp, output).with_context(|| format!("publishing {}", output.display()))?;
    }
    Ok(value)
}

/// Loads and normalizes the configured mesh.
pub fn load_normalized(path: &Path) -> Result<TriangleMesh> {
    let mesh = load_mesh(path)?;
    Ok(normalize_mesh(&mesh)?)
}

fn load_texture_atlas(path: Option<&Path>, what: &str) -> Result<TextureAtlas> {
    let path = path.ok_or_else(|| usage(format!("{what}: no texture given (--texture or generator.texture)")))?;
    if !path.exists() {
        return Err(usage(format!("{what}: {} does not exist", path.display())));
    }
    Ok(frames::read_atlas_or_texture(path)?)
}

/// Trajectory and object rotation of a frame directory.
fn frame_set(dir: &Path) -> Result<(OrbitTrajectory, Rotation)> {
    let traj_path = dir.join(TRAJECTORY_FILE);
    if !traj_path.is_file() {
        return Err(usage(format!("{} has no {TRAJECTORY_FILE}", dir.display())));
    }
    if dir.join(MANIFEST_FILE).is_file() {
        let req = GenerationRequest::load(dir)?;
        Ok((req.trajectory, req.rotation))
    } else {
        Ok((OrbitTrajectory::load(&traj_path)?, Rotation::identity()))
    }
}

fn read_colors(dir: &Path, traj: &OrbitTrajectory) -> Result<Vec<ColorImage>> {
    let count = frames::count_frames(dir, FrameKind::Color);
    if count == 0 {
        return Err(usage(format!("no color frames in {}", frames::frame_dir(dir, FrameKind::Color).display())));
    }
    if count != traj.frames() {
        return Err(usage(format!(
            "{} holds {count} color frames for a {}-frame trajectory",
            dir.display(),
            traj.frames()
        )));
    }
    let res = traj.resolution();
    let images = frames::read_color_frames(dir, count)?;
    images
        .iter()
        .enumerate()
        .map(|(t, img)| {
            if img.dimensions() != (res.width, res.height) {
                return Err(usage(format!(
                    "color frame {t} is {}x{}, trajectory expects {}x{}",
                    img.width(),
                    img.height(),
                    res.width,
                    res.height
                )));
            }
            Ok(frames::rgb8_to_color(img))
        })
        .collect()
}

/// Renders all geometry frame kinds and the trajectory of the normalized
/// mesh into the output directory.
pub fn cmd_condition(cfg: &PipelineConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let mesh_path = cfg.require_mesh()?;
    let output = cfg.require_output()?.to_path_buf();
    let reference = cfg.generator.reference_image.as_deref();
    if let Some(r) = reference {
        if !r.is_file() {
            return Err(usage(format!("reference image {} does not exist", r.display())));
        }
    }
    let mesh = load_normalized(mesh_path)?;
    let traj = cfg.trajectory.orbit().build()?;
    publish(&output, |tmp| {
        prepare_request(
            tmp,
            &mesh,
            None,
            cfg.bake.confidence_threshold,
            &traj,
            &Rotation::identity(),
            &cfg.generator.prompt,
            reference,
            1,
        )?;
        Ok(())
    })?;
    info!("{} frames of {} kinds written to {}", traj.frames(), FrameKind::GEOMETRY.len(), output.display());
    Ok(output)
}

/// Renders the configured ground-truth texture into `frames/color` of a
/// conditioned frame directory, standing in for a video model.
pub fn cmd_oracle(cfg: &PipelineConfig, input: &Path) -> Result<usize> {
    cfg.validate()?;
    let mesh = load_normalized(cfg.require_mesh()?)?;
    let atlas = load_texture_atlas(cfg.generator.texture.as_deref(), "oracle")?;
    let req = GenerationRequest::load(input)?;
    let mut oracle = OracleGenerator::new(mesh, atlas)?;
    let response = oracle.generate(&req)?;
    let color_dir = frames::frame_dir(input, FrameKind::Color);
    publish(&color_dir, |tmp| {
        for (t, img) in response.frames.iter().enumerate() {
            frames::save_png(&tmp.join(format!("{t:04}.png")), &DynamicImage::ImageRgb8(img.clone()))?;
        }
        Ok(())
    })?;
    Ok(response.frames.len())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BakeSummary {
    pub coverage: f64,
    pub confidence_threshold: f64,
    pub frames: usize,
}

/// Bakes the color frames of `input` into an atlas directory. Geometry is
/// re-rendered from the mesh along the recorded trajectory; stored mask
/// frames, when present, must agree with it.
pub fn cmd_bake(cfg: &PipelineConfig, input: &Path) -> Result<BakeSummary> {
    cfg.validate()?;
    let mesh_path = cfg.require_mesh()?;
    let output = cfg.require_output()?.to_path_buf();
    if !input.is_dir() {
        return Err(usage(format!("frame directory {} does not exist", input.display())));
    }
    let (traj, rotation) = frame_set(input)?;
    let colors = read_colors(input, &traj)?;
    let mesh = rotate_mesh(&load_normalized(mesh_path)?, &rotation);
    let bc = cfg.bake.bake_config();
    let ctx = BakeContext::new(&mesh, bc.atlas_width, bc.atlas_height)?;
    let has_masks = frames::count_frames(input, FrameKind::Mask) == traj.frames();
    let mut acc = BakeAccumulator::new(bc.atlas_width, bc.atlas_height);
    for (t, (color, pose)) in colors.iter().zip(traj.poses()).enumerate() {
        let g = render_gbuffer(&mesh, pose);
        if has_masks {
            let stored = frames::read_mask(&frames::frame_path(input, FrameKind::Mask, t))?;
            let rendered = Raster::from_vec(g.width(), g.height(), g.mask.clone())?;
            let d = mask_disagreement(&stored, &rendered);
            if d > MASK_TOLERANCE {
                return Err(usage(format!(
                    "frame {t}: {:.2}% of mask pixels disagree with the mesh; wrong mesh for these frames?",
                    100.0 * d
                )));
            }
        }
        acc.add(&ctx.bake_frame(color, &g, pose, bc.penalty_scale)?)?;
    }
    let atlas = acc.finish();
    let threshold = cfg.bake.confidence_threshold;
    let cov = coverage(&atlas, &ctx.texels().occupancy(), threshold)?;
    publish(&output, |tmp| {
        frames::write_atlas(tmp, &atlas, Some((cov, threshold)), true)?;
        Ok(())
    })?;
    info!("baked {} frames, coverage {cov:.4}", traj.frames());
    Ok(BakeSummary {
        coverage: cov,
        confidence_threshold: threshold,
        frames: traj.frames(),
    })
}

fn build_generator(cfg: &PipelineConfig, mesh: &TriangleMesh) -> Result<Box<dyn AppearanceGenerator>> {
    let g = &cfg.generator;
    let timeout = Duration::from_secs_f64(g.timeout_seconds);
    Ok(match g.kind {
        GeneratorKind::Oracle => {
            let atlas = load_texture_atlas(g.texture.as_deref(), "oracle generator")?;
            Box::new(OracleGenerator::new(mesh.clone(), atlas)?)
        }
        GeneratorKind::Fs => {
            let dir = g
                .exchange
                .clone()
                .ok_or_else(|| usage("fs generator needs an exchange directory (--exchange)"))?;
            std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            Box::new(FsGenerator::new(dir, timeout))
        }
        GeneratorKind::Http => {
            let endpoint = g
                .endpoint
                .clone()
                .ok_or_else(|| usage("http generator needs an endpoint (--endpoint or TTVBAKE_GENERATOR_ENDPOINT)"))?;
            Box::new(HttpGenerator::new(endpoint, timeout)?)
        }
    })
}

/// Runs the progressive loop end to end. The output directory receives
/// the per-iteration directories, `coverage.toml` and the final atlas in
/// `final/`.
pub fn cmd_run(cfg: &PipelineConfig) -> Result<CoverageReport> {
    cfg.validate()?;
    let mesh_path = cfg.require_mesh()?;
    let output = cfg.require_output()?.to_path_buf();
    let plan = cfg.bake_plan()?;
    let mesh = load_normalized(mesh_path)?;
    mesh.require_uvs()?;
    let mut generator = build_generator(cfg, &mesh)?;
    let prompt = Prompt {
        text: cfg.generator.prompt.clone(),
        reference_image: cfg.generator.reference_image.clone(),
    };
    let report = publish(&output, |tmp| {
        let result = progressive_texture(&mesh, generator.as_mut(), &plan, &cfg.bake.bake_config(), &prompt, tmp)?;
        frames::write_atlas(
            &tmp.join("final"),
            &result.atlas,
            Some((result.report.final_coverage, plan.confidence_threshold)),
            true,
        )?;
        Ok(result.report)
    })?;
    Ok(report)
}

/// Per-iteration coverage as a text table.
pub fn coverage_table(report: &CoverageReport) -> String {
    let mut out = String::from("iteration  rotation (w, x, y, z)               coverage  provider  seconds\n");
    for p in &report.passes {
        let q = p.rotation.quaternion();
        let _ = writeln!(
            out,
            "{:>9}  ({:+.4}, {:+.4}, {:+.4}, {:+.4})  {:>8.4}  {:<8}  {:>7.2}",
            p.iteration, q.w, q.i, q.j, q.k, p.coverage, p.provider, p.generation_seconds
        );
    }
    let _ = writeln!(
        out,
        "final coverage {:.4} (target {:.4}, {})",
        report.final_coverage,
        report.coverage_target,
        if report.reached_target { "reached" } else { "not reached" }
    );
    out
}

/// What a baked atlas is evaluated against.
#[derive(Clone, Debug)]
pub enum EvalReference {
    /// Atlas directory or texture image, rendered along the configured orbit.
    Texture(PathBuf),
    /// Frame directory with `frames/color` and its trajectory.
    Frames(PathBuf),
}

pub fn cmd_eval(cfg: &PipelineConfig, atlas: &Path, reference: &EvalReference) -> Result<FramePairReport> {
    cfg.validate()?;
    let mesh_path = cfg.require_mesh()?;
    let output = cfg.require_output()?.to_path_buf();
    let baked = load_texture_atlas(Some(atlas), "baked atlas")?;
    let mesh = load_normalized(mesh_path)?;
    let threshold = cfg.bake.confidence_threshold;
    let report = match reference {
        EvalReference::Texture(path) => {
            let truth = load_texture_atlas(Some(path), "reference")?;
            let traj = cfg.trajectory.orbit().build()?;
            evaluate_bake(&mesh, &baked, Reference::Atlas(&truth), &traj, threshold)?
        }
        EvalReference::Frames(dir) => {
            if !dir.is_dir() {
                return Err(usage(format!("reference frames {} do not exist", dir.display())));
            }
            let (traj, rotation) = frame_set(dir)?;
            let frames = read_colors(dir, &traj)?;
            evaluate_bake(&rotate_mesh(&mesh, &rotation), &baked, Reference::Frames(&frames), &traj, threshold)?
        }
    };
    publish(&output, |tmp| {
        report.write(tmp)?;
        Ok(())
    })?;
    Ok(report)
}

/// Builds the plan from the configuration; with `precompute`, the passes
/// are filled in by a weight-only simulation on the mesh.
pub fn cmd_plan(cfg: &PipelineConfig, precompute: bool) -> Result<BakePlan> {
    cfg.validate()?;
    let mut plan = cfg.bake_plan()?;
    if precompute {
        let mesh = load_normalized(cfg.require_mesh()?)?;
        mesh.require_uvs()?;
        plan.passes = plan_passes(&mesh, &plan, &cfg.bake.bake_config())?;
    }
    if let Some(path) = &cfg.output {
        let tmp = path.with_extension(format!("tmp-{}", std::process::id()));
        plan.save(&tmp)?;
        std::fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(plan)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum FixtureName {
    Sphere,
    Mug,
    Cube,
}

/// Writes a built-in test mesh (`mesh.obj`) and a checkerboard texture
/// (`texture.png`).
pub fn cmd_fixture(output: &Path, name: FixtureName, texture_size: usize) -> Result<()> {
    let mesh = match name {
        FixtureName::Sphere => fixtures::uv_sphere(64, 128),
        FixtureName::Mug => fixtures::mug(),
        FixtureName::Cube => fixtures::cube_with_bounds(-1.0, 1.0),
    };
    let texture = fixtures::checkerboard_atlas(texture_size, texture_size, 16, [0.9, 0.55, 0.1], [0.1, 0.3, 0.75]);
    publish(output, |tmp| {
        mesh.save_obj(tmp.join("mesh.obj"))?;
        let img = frames::color_to_rgb8(texture.color());
        frames::save_png(&tmp.join("texture.png"), &DynamicImage::ImageRgb8(img))?;
        Ok(())
    })
}
