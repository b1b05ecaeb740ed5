//! Confidence-weighted atlas fusion, rotation selection and the progressive
//! multi-pass texturing loop.

use std::path::{Path, PathBuf};
use std::time::Duration;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::atlas::TextureAtlas;
use crate::bake::{angle_weight, BakeAccumulator, BakeConfig, BakeContext, TexelMap};
use crate::camera::{CameraPose, OrbitParams, OrbitTrajectory};
use crate::error::{Error, Result};
use crate::frames;
use crate::generator::{prepare_request, AppearanceGenerator};
use crate::mesh::{default_rotation_candidates, rotate_mesh, Rotation, TriangleMesh};
use crate::raster::Raster;
use crate::render::render_gbuffer;
use crate::visibility::{texel_visible, VisibilityIndex};

pub const DEFAULT_COVERAGE_TARGET: f64 = 0.98;
pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.05;
pub const DEFAULT_MAX_ITERATIONS: usize = 4;
/// Smallest angle weight at which a texel counts as seen when scoring a
/// rotation.
pub const SCORE_ANGLE_MIN: f64 = 0.05;

/// How confidences combine when two atlases are fused.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConfidenceUpdate {
    #[default]
    Additive,
    Max,
}

/// Additive fusion; see [`fuse_with`].
pub fn fuse(a: &TextureAtlas, b: &TextureAtlas) -> Result<TextureAtlas> {
    fuse_with(a, b, ConfidenceUpdate::Additive)
}

/// Per texel, `color = (c_a * A + c_b * B) / (c_a + c_b)`, evaluated as
/// `A + c_b / (c_a + c_b) * (B - A)` so that equal colors and zero weights
/// pass through unchanged. Texels with no confidence on either side stay
/// empty.
pub fn fuse_with(a: &TextureAtlas, b: &TextureAtlas, mode: ConfidenceUpdate) -> Result<TextureAtlas> {
    if a.dims() != b.dims() {
        return Err(Error::ResolutionMismatch(format!(
            "atlas {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let (w, h) = a.dims();
    let n = w * h;
    let (ca, cb) = (a.confidence().data(), b.confidence().data());
    let (xa, xb) = (a.color().data(), b.color().data());
    let mut color = Vec::with_capacity(n);
    let mut conf = Vec::with_capacity(n);
    for i in 0..n {
        let total = ca[i] + cb[i];
        if total > 0.0 {
            let s = cb[i] / total;
            color.push([0, 1, 2].map(|k| xa[i][k] + s * (xb[i][k] - xa[i][k])));
        } else {
            color.push([0.0; 3]);
        }
        conf.push(match mode {
            ConfidenceUpdate::Additive => total,
            ConfidenceUpdate::Max => ca[i].max(cb[i]),
        });
    }
    TextureAtlas::new(Raster::from_vec(w, h, color)?, Raster::from_vec(w, h, conf)?)
}

/// Fraction of occupied texels whose confidence reaches `threshold`.
pub fn coverage(atlas: &TextureAtlas, occupancy: &Raster<bool>, threshold: f64) -> Result<f64> {
    if !atlas.confidence().same_dims(occupancy) {
        return Err(Error::ResolutionMismatch(format!(
            "atlas {:?} vs occupancy {:?}",
            atlas.dims(),
            occupancy.dims()
        )));
    }
    let mut occupied = 0usize;
    let mut covered = 0usize;
    for (&o, &c) in occupancy.data().iter().zip(atlas.confidence().data()) {
        if o {
            occupied += 1;
            if c >= threshold {
                covered += 1;
            }
        }
    }
    if occupied == 0 {
        return Err(Error::InvalidInput("atlas has no occupied texels".into()));
    }
    Ok(covered as f64 / occupied as f64)
}

/// Scores rotations by how many under-confident texels they expose.
pub struct RotationScorer<'a> {
    mesh: &'a TriangleMesh,
    texels: TexelMap,
}

impl<'a> RotationScorer<'a> {
    pub fn new(mesh: &'a TriangleMesh, atlas_width: usize, atlas_height: usize) -> Result<Self> {
        Ok(RotationScorer {
            mesh,
            texels: TexelMap::build(mesh, atlas_width, atlas_height)?,
        })
    }

    pub fn with_texel_map(mesh: &'a TriangleMesh, texels: TexelMap) -> Self {
        RotationScorer { mesh, texels }
    }

    pub fn texels(&self) -> &TexelMap {
        &self.texels
    }

    /// Number of distinct occupied texels with confidence below `threshold`
    /// that some pose sees unoccluded, inside the frame, with angle weight
    /// above [`SCORE_ANGLE_MIN`], once the mesh is rotated by `rotation`.
    pub fn score(
        &self,
        atlas: &TextureAtlas,
        rotation: &Rotation,
        poses: &[CameraPose],
        threshold: f64,
    ) -> Result<usize> {
        if atlas.dims() != (self.texels.width(), self.texels.height()) {
            return Err(Error::ResolutionMismatch(format!(
                "atlas {:?} vs texel map {}x{}",
                atlas.dims(),
                self.texels.width(),
                self.texels.height()
            )));
        }
        let rotated = rotate_mesh(self.mesh, rotation);
        let index = VisibilityIndex::build(&rotated);
        let conf = atlas.confidence().data();
        let count = self
            .texels
            .occupied()
            .par_iter()
            .filter(|&&texel| conf[texel as usize] < threshold)
            .filter(|&&texel| {
                let Some((point, normal, face)) = self.texels.surface(&rotated, texel as usize) else {
                    return false;
                };
                poses.iter().any(|pose| {
                    let view = (pose.position() - point).normalize();
                    angle_weight(&normal, &view) > SCORE_ANGLE_MIN
                        && texel_visible(&index, &point, face, pose)
                })
            })
            .count();
        Ok(count)
    }
}

/// One-off score; builds the texel map on every call.
pub fn score_rotation(
    mesh: &TriangleMesh,
    atlas: &TextureAtlas,
    rotation: &Rotation,
    poses: &[CameraPose],
    threshold: f64,
) -> Result<usize> {
    RotationScorer::new(mesh, atlas.width(), atlas.height())?.score(atlas, rotation, poses, threshold)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotationChoice {
    pub index: usize,
    pub rotation: Rotation,
    pub score: usize,
    /// Scores of all candidates, in candidate order.
    pub scores: Vec<usize>,
}

/// Highest-scoring candidate; ties go to the lowest index.
pub fn select_rotation(
    scorer: &RotationScorer<'_>,
    atlas: &TextureAtlas,
    candidates: &[Rotation],
    poses: &[CameraPose],
    threshold: f64,
) -> Result<RotationChoice> {
    if candidates.is_empty() {
        return Err(Error::InvalidInput("no rotation candidates".into()));
    }
    let scores = candidates
        .par_iter()
        .map(|r| scorer.score(atlas, r, poses, threshold))
        .collect::<Result<Vec<_>>>()?;
    let mut index = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[index] {
            index = i;
        }
    }
    Ok(RotationChoice {
        index,
        rotation: candidates[index],
        score: scores[index],
        scores,
    })
}

/// [`select_rotation`] with a freshly built scorer.
pub fn select_base_rotation(
    mesh: &TriangleMesh,
    atlas: &TextureAtlas,
    candidates: &[Rotation],
    poses: &[CameraPose],
    threshold: f64,
) -> Result<RotationChoice> {
    let scorer = RotationScorer::new(mesh, atlas.width(), atlas.height())?;
    select_rotation(&scorer, atlas, candidates, poses, threshold)
}

/// A fixed pass: which rotation to apply and which orbit to film.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannedPass {
    pub rotation: Rotation,
    pub orbit: OrbitParams,
    /// Coverage the weight-only simulation predicts after this pass.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted_coverage: Option<f64>,
}

/// Settings of the progressive loop. With a non-empty `passes` list those
/// passes run in order (the first should use the identity rotation); once
/// they are used up, rotations are chosen greedily from `candidates`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BakePlan {
    pub orbit: OrbitParams,
    pub coverage_target: f64,
    pub confidence_threshold: f64,
    pub max_iterations: usize,
    #[serde(default)]
    pub confidence_update: ConfidenceUpdate,
    pub candidates: Vec<Rotation>,
    #[serde(default)]
    pub passes: Vec<PlannedPass>,
}

impl Default for BakePlan {
    fn default() -> Self {
        BakePlan {
            orbit: OrbitParams::default(),
            coverage_target: DEFAULT_COVERAGE_TARGET,
            confidence_threshold: DEFAULT_CONFIDENCE_THRESHOLD,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            confidence_update: ConfidenceUpdate::default(),
            candidates: default_rotation_candidates(),
            passes: Vec::new(),
        }
    }
}

impl BakePlan {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidInput("max_iterations must be at least 1".into()));
        }
        if !(self.confidence_threshold > 0.0) {
            return Err(Error::InvalidInput("confidence threshold must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.coverage_target) {
            return Err(Error::InvalidInput("coverage target must lie in [0, 1]".into()));
        }
        if self.candidates.is_empty() && self.max_iterations > self.passes.len().max(1) {
            return Err(Error::InvalidInput("no rotation candidates for later passes".into()));
        }
        self.orbit.build().map(|_| ())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("plan serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidInput(format!("plan: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    fn pass(&self, iteration: usize) -> Option<&PlannedPass> {
        self.passes.get(iteration - 1)
    }
}

/// Confidence a pass would add, from geometry alone.
fn simulate_confidence(
    mesh: &TriangleMesh,
    texels: &TexelMap,
    rotation: &Rotation,
    trajectory: &OrbitTrajectory,
    config: &BakeConfig,
) -> Result<TextureAtlas> {
    let rotated = rotate_mesh(mesh, rotation);
    let ctx = BakeContext::with_texel_map(&rotated, texels.clone());
    let mut acc = BakeAccumulator::new(texels.width(), texels.height());
    for pose in trajectory.poses() {
        let g = render_gbuffer(&rotated, pose);
        let weight = ctx.bake_weights(&g, pose, config.penalty_scale)?;
        acc.add(&crate::bake::PartialBake {
            weighted_color: Raster::new(weight.width(), weight.height(), [0.0; 3]),
            weight,
        })?;
    }
    Ok(acc.finish())
}

/// Fixes the pass sequence in advance by running the loop on bake weights
/// only (no generator). Colors do not influence rotation choice, so the
/// result is what the online loop would pick.
pub fn plan_passes(mesh: &TriangleMesh, plan: &BakePlan, config: &BakeConfig) -> Result<Vec<PlannedPass>> {
    plan.validate()?;
    let trajectory = plan.orbit.build()?;
    let scorer = RotationScorer::new(mesh, config.atlas_width, config.atlas_height)?;
    let occupancy = scorer.texels().occupancy();
    let mut passes = Vec::new();
    let mut master: Option<TextureAtlas> = None;
    for k in 1..=plan.max_iterations {
        let rotation = match &master {
            None => Rotation::identity(),
            Some(m) => {
                select_rotation(&scorer, m, &plan.candidates, trajectory.poses(), plan.confidence_threshold)?.rotation
            }
        };
        let part = simulate_confidence(mesh, scorer.texels(), &rotation, &trajectory, config)?;
        let fused = match master {
            None => part,
            Some(m) => fuse_with(&m, &part, plan.confidence_update)?,
        };
        let c = coverage(&fused, &occupancy, plan.confidence_threshold)?;
        info!("planned pass {k}: predicted coverage {c:.4}");
        passes.push(PlannedPass {
            rotation,
            orbit: plan.orbit,
            predicted_coverage: Some(c),
        });
        master = Some(fused);
        if c >= plan.coverage_target {
            break;
        }
    }
    Ok(passes)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PassRecord {
    pub iteration: usize,
    pub rotation: Rotation,
    pub coverage: f64,
    pub provider: String,
    pub generation_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub coverage_target: f64,
    pub confidence_threshold: f64,
    pub final_coverage: f64,
    pub reached_target: bool,
    pub passes: Vec<PassRecord>,
}

impl CoverageReport {
    pub fn history(&self) -> Vec<f64> {
        self.passes.iter().map(|p| p.coverage).collect()
    }
}

pub struct ProgressiveResult {
    pub atlas: TextureAtlas,
    pub report: CoverageReport,
}

/// What the generator is asked to paint.
#[derive(Clone, Debug, Default)]
pub struct Prompt {
    pub text: String,
    pub reference_image: Option<PathBuf>,
}

pub fn iteration_dir(work_dir: &Path, iteration: usize) -> PathBuf {
    work_dir.join(format!("iter_{iteration:02}"))
}

/// Runs passes until coverage reaches the target or the iteration budget is
/// spent. Pass 1 conditions on geometry only under the identity rotation;
/// later passes also condition on the current atlas (partial texture and
/// inpaint mask) under a rotation exposing the most unknown texels. Each
/// pass is baked in the rotated frame and fused into the master atlas.
///
/// Every iteration leaves `iter_NN/{request,generated,bake,master}` below
/// `work_dir`; `coverage.toml` sums up the run.
pub fn progressive_texture(
    mesh: &TriangleMesh,
    generator: &mut dyn AppearanceGenerator,
    plan: &BakePlan,
    config: &BakeConfig,
    prompt: &Prompt,
    work_dir: &Path,
) -> Result<ProgressiveResult> {
    plan.validate()?;
    mesh.require_uvs()?;
    let scorer = RotationScorer::new(mesh, config.atlas_width, config.atlas_height)?;
    let occupancy = scorer.texels().occupancy();
    let mut master: Option<TextureAtlas> = None;
    let mut passes: Vec<PassRecord> = Vec::new();

    for k in 1..=plan.max_iterations {
        let wrap = |e: Error| Error::Iteration {
            iteration: k,
            source: Box::new(e),
        };
        let orbit = plan.pass(k).map_or(plan.orbit, |p| p.orbit);
        let trajectory = orbit.build().map_err(wrap)?;
        let rotation = match (plan.pass(k), &master) {
            (Some(p), _) => p.rotation,
            (None, None) => Rotation::identity(),
            (None, Some(m)) => {
                let choice = select_rotation(&scorer, m, &plan.candidates, trajectory.poses(), plan.confidence_threshold)
                    .map_err(wrap)?;
                info!(
                    "pass {k}: candidate {} exposes {} unknown texels",
                    choice.index, choice.score
                );
                choice.rotation
            }
        };
        let rotated = rotate_mesh(mesh, &rotation);
        let dir = iteration_dir(work_dir, k);

        let request = prepare_request(
            &dir.join("request"),
            &rotated,
            master.as_ref(),
            plan.confidence_threshold,
            &trajectory,
            &rotation,
            &prompt.text,
            prompt.reference_image.as_deref(),
            k,
        )
        .map_err(wrap)?;
        let response = generator.generate(&request).map_err(wrap)?;
        info!(
            "pass {k}: {} frames from {} in {:.1?}",
            response.frames.len(),
            response.provider,
            response.elapsed
        );
        let generated = dir.join("generated");
        response
            .frames
            .par_iter()
            .enumerate()
            .try_for_each(|(t, f)| frames::write_color_frame(&generated, t, f))
            .map_err(wrap)?;

        let ctx = BakeContext::with_texel_map(&rotated, scorer.texels().clone());
        let mut acc = BakeAccumulator::new(config.atlas_width, config.atlas_height);
        for (pose, frame) in trajectory.poses().iter().zip(&response.frames) {
            let g = render_gbuffer(&rotated, pose);
            let color = frames::rgb8_to_color(frame);
            acc.add(&ctx.bake_frame(&color, &g, pose, config.penalty_scale).map_err(wrap)?)
                .map_err(wrap)?;
        }
        let part = acc.finish();
        let fused = match &master {
            None => part.clone(),
            Some(m) => fuse_with(m, &part, plan.confidence_update).map_err(wrap)?,
        };
        let c = coverage(&fused, &occupancy, plan.confidence_threshold).map_err(wrap)?;
        if let Some(prev) = passes.last() {
            if c <= prev.coverage {
                warn!("pass {k}: coverage did not increase ({:.4} -> {c:.4})", prev.coverage);
            }
        }
        info!("pass {k}: coverage {c:.4}");
        let cov = Some((c, plan.confidence_threshold));
        frames::write_atlas(&dir.join("bake"), &part, None, false).map_err(wrap)?;
        frames::write_atlas(&dir.join("master"), &fused, cov, false).map_err(wrap)?;
        passes.push(PassRecord {
            iteration: k,
            rotation,
            coverage: c,
            provider: response.provider.clone(),
            generation_seconds: duration_secs(response.elapsed),
        });
        master = Some(fused);
        if c >= plan.coverage_target {
            break;
        }
    }

    let final_coverage = passes.last().map_or(0.0, |p| p.coverage);
    let report = CoverageReport {
        coverage_target: plan.coverage_target,
        confidence_threshold: plan.confidence_threshold,
        final_coverage,
        reached_target: final_coverage >= plan.coverage_target,
        passes,
    };
    let path = work_dir.join("coverage.toml");
    std::fs::write(&path, toml::to_string(&report).expect("report serializes")).map_err(|e| Error::io(&path, e))?;
    Ok(ProgressiveResult {
        atlas: master.expect("at least one pass"),
        report,
    })
}

fn duration_secs(d: Duration) -> f64 {
    d.as_secs_f64()
}
