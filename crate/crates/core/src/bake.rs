//! Back-projection of video frames into UV space.
//!
//! Every UV-occupied texel owns a surface point. For each frame the point
//! is ray-tested for visibility, projected into the image, and the frame
//! color there is accumulated with the similarity weight
//! `S = angle_weight * (1 - depth_penalty)`.

use nalgebra::{Point2, Point3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::atlas::TextureAtlas;
use crate::camera::{CameraPose, OrbitTrajectory};
use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;
use crate::raster::{ColorImage, Raster};
use crate::render::{GBuffer, NO_FACE};
use crate::visibility::{texel_visible, VisibilityIndex};

pub const DEFAULT_ATLAS_RESOLUTION: usize = 1024;
pub const DEFAULT_PENALTY_SCALE: f64 = 8.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BakeConfig {
    pub atlas_width: usize,
    pub atlas_height: usize,
    /// Gain applied to the absolute depth Laplacian before clipping.
    pub penalty_scale: f64,
}

impl Default for BakeConfig {
    fn default() -> Self {
        BakeConfig {
            atlas_width: DEFAULT_ATLAS_RESOLUTION,
            atlas_height: DEFAULT_ATLAS_RESOLUTION,
            penalty_scale: DEFAULT_PENALTY_SCALE,
        }
    }
}

impl BakeConfig {
    pub fn square(resolution: usize) -> Self {
        BakeConfig {
            atlas_width: resolution,
            atlas_height: resolution,
            ..BakeConfig::default()
        }
    }
}

/// `clamp(cos theta, 0, 1)^4` where theta is the angle between the surface
/// normal and the direction toward the camera. Back-facing samples get 0.
#[inline]
pub fn angle_weight(normal: &Vector3<f64>, view_dir: &Vector3<f64>) -> f64 {
    let c = normal.dot(view_dir).clamp(0.0, 1.0);
    let c2 = c * c;
    c2 * c2
}

/// Depth-edge penalty at pixel `(x, y)`: `clip(scale * |L(d)|, 0, 1)` with
/// the 5-point Laplacian `L`. Neighbors outside the raster or without depth
/// take the center value. Uncovered centers are fully penalized.
pub fn depth_penalty(depth: &Raster<f64>, x: usize, y: usize, scale: f64) -> f64 {
    let center = *depth.get(x, y);
    if !center.is_finite() {
        return 1.0;
    }
    let at = |dx: i64, dy: i64| -> f64 {
        let nx = x as i64 + dx;
        let ny = y as i64 + dy;
        if nx < 0 || ny < 0 || nx >= depth.width() as i64 || ny >= depth.height() as i64 {
            return center;
        }
        let d = *depth.get(nx as usize, ny as usize);
        if d.is_finite() {
            d
        } else {
            center
        }
    };
    let lap = at(-1, 0) + at(1, 0) + at(0, -1) + at(0, 1) - 4.0 * center;
    (scale * lap.abs()).clamp(0.0, 1.0)
}

/// Per-sample blending weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BakeWeights {
    pub angle: f64,
    pub depth: f64,
    pub similarity: f64,
}

impl BakeWeights {
    pub fn new(angle: f64, depth: f64) -> Self {
        BakeWeights {
            angle,
            depth,
            similarity: angle * (1.0 - depth),
        }
    }
}

/// Which mesh face owns each atlas texel, and where on the face the texel
/// center lands.
#[derive(Clone, Debug, PartialEq)]
pub struct TexelMap {
    width: usize,
    height: usize,
    face: Vec<u32>,
    bary: Vec<[f64; 3]>,
    dilated: Vec<bool>,
    occupied: Vec<u32>,
}

impl TexelMap {
    /// Rasterizes the UV layout at atlas resolution. Texel centers inside a
    /// UV triangle belong to the lowest-index face containing them; empty
    /// texels touching an owned texel (8-neighborhood) are then assigned that
    /// neighbor's face, with barycentrics clamped onto the triangle, which
    /// pads every chart by one texel.
    pub fn build(mesh: &TriangleMesh, width: usize, height: usize) -> Result<Self> {
        mesh.require_uvs()?;
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput("atlas resolution has a zero dimension".into()));
        }
        let n = width * height;
        let mut face = vec![NO_FACE; n];
        let mut bary = vec![[0.0; 3]; n];
        let (wf, hf) = (width as f64, height as f64);

        for fi in 0..mesh.face_count() {
            let uv = mesh.triangle_uvs(fi).expect("bakeable");
            let t: [(f64, f64); 3] = uv.map(|p| (p.x * wf, (1.0 - p.y) * hf));
            let area = cross(t[0], t[1], t[2]);
            if area == 0.0 {
                continue;
            }
            let min_x = t.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
            let max_x = t.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
            let min_y = t.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
            let max_y = t.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
            let x0 = ((min_x - 0.5).ceil().max(0.0)) as usize;
            let y0 = ((min_y - 0.5).ceil().max(0.0)) as usize;
            let x1 = (max_x - 0.5).floor().min(wf - 1.0);
            let y1 = (max_y - 0.5).floor().min(hf - 1.0);
            if x1 < 0.0 || y1 < 0.0 {
                continue;
            }
            for y in y0..=y1 as usize {
                for x in x0..=x1 as usize {
                    let i = y * width + x;
                    if face[i] != NO_FACE {
                        continue;
                    }
                    let p = (x as f64 + 0.5, y as f64 + 0.5);
                    let b = [
                        cross(t[1], t[2], p) / area,
                        cross(t[2], t[0], p) / area,
                        cross(t[0], t[1], p) / area,
                    ];
                    if b.iter().all(|&w| w >= 0.0) {
                        face[i] = fi as u32;
                        bary[i] = b;
                    }
                }
            }
        }

        let mut dilated = vec![false; n];
        let core = face.clone();
        const NEIGHBORS: [(i64, i64); 8] = [
            (0, -1),
            (0, 1),
            (-1, 0),
            (1, 0),
            (-1, -1),
            (1, -1),
            (-1, 1),
            (1, 1),
        ];
        for y in 0..height {
            for x in 0..width {
                let i = y * width + x;
                if core[i] != NO_FACE {
                    continue;
                }
                let owner = NEIGHBORS.iter().find_map(|(dx, dy)| {
                    let nx = x as i64 + dx;
                    let ny = y as i64 + dy;
                    if nx < 0 || ny < 0 || nx >= width as i64 || ny >= height as i64 {
                        return None;
                    }
                    let f = core[ny as usize * width + nx as usize];
                    (f != NO_FACE).then_some(f)
                });
                if let Some(fi) = owner {
                    let uv = mesh.triangle_uvs(fi as usize).expect("bakeable");
                    let t: [(f64, f64); 3] = uv.map(|p| (p.x * wf, (1.0 - p.y) * hf));
                    let area = cross(t[0], t[1], t[2]);
                    let p = (x as f64 + 0.5, y as f64 + 0.5);
                    let b = [
                        cross(t[1], t[2], p) / area,
                        cross(t[2], t[0], p) / area,
                        cross(t[0], t[1], p) / area,
                    ];
                    face[i] = fi;
                    bary[i] = clamp_barycentric(b);
                    dilated[i] = true;
                }
            }
        }
        let occupied = (0..n as u32).filter(|&i| face[i as usize] != NO_FACE).collect();
        Ok(TexelMap {
            width,
            height,
            face,
            bary,
            dilated,
            occupied,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Linear indices of all owned texels, ascending.
    pub fn occupied(&self) -> &[u32] {
        &self.occupied
    }

    pub fn occupancy(&self) -> Raster<bool> {
        Raster::from_vec(
            self.width,
            self.height,
            self.face.iter().map(|&f| f != NO_FACE).collect(),
        )
        .expect("one entry per texel")
    }

    /// Owning face and barycentrics of a texel.
    pub fn owner(&self, texel: usize) -> Option<(u32, [f64; 3])> {
        let f = self.face[texel];
        (f != NO_FACE).then(|| (f, self.bary[texel]))
    }

    pub fn is_dilated(&self, texel: usize) -> bool {
        self.dilated[texel]
    }

    /// Surface point and shading normal of a texel on `mesh` (which must
    /// share this map's UV layout; it may be rotated).
    pub fn surface(&self, mesh: &TriangleMesh, texel: usize) -> Option<(Point3<f64>, Vector3<f64>, u32)> {
        self.owner(texel)
            .map(|(f, b)| (mesh.point_at(f as usize, b), mesh.normal_at(f as usize, b), f))
    }
}

#[inline]
fn cross(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> f64 {
    (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
}

fn clamp_barycentric(b: [f64; 3]) -> [f64; 3] {
    let c = b.map(|w| w.max(0.0));
    let s: f64 = c.iter().sum();
    if s > 0.0 {
        c.map(|w| w / s)
    } else {
        [1.0 / 3.0; 3]
    }
}

/// One texel's contribution from one frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TexelSample {
    pub texel: u32,
    pub weights: BakeWeights,
    pub color: [f64; 3],
}

/// Unnormalized result of one frame: `weighted_color = S * sample` and
/// `weight = S` per texel.
#[derive(Clone, Debug, PartialEq)]
pub struct PartialBake {
    pub weighted_color: Raster<[f64; 3]>,
    pub weight: Raster<f64>,
}

impl PartialBake {
    pub fn empty(width: usize, height: usize) -> Self {
        PartialBake {
            weighted_color: Raster::new(width, height, [0.0; 3]),
            weight: Raster::new(width, height, 0.0),
        }
    }

    /// Color divided by weight where the weight is positive.
    pub fn normalized(&self) -> TextureAtlas {
        let color = Raster::from_fn(self.weight.width(), self.weight.height(), |x, y| {
            let w = *self.weight.get(x, y);
            if w > 0.0 {
                self.weighted_color.get(x, y).map(|c| c / w)
            } else {
                [0.0; 3]
            }
        });
        TextureAtlas::new(color, self.weight.clone()).expect("matching grids")
    }
}

/// Sums per-frame partial bakes in the order they are added.
#[derive(Clone, Debug)]
pub struct BakeAccumulator {
    sum: PartialBake,
    frames: usize,
}

impl BakeAccumulator {
    pub fn new(width: usize, height: usize) -> Self {
        BakeAccumulator {
            sum: PartialBake::empty(width, height),
            frames: 0,
        }
    }

    pub fn add(&mut self, part: &PartialBake) -> Result<()> {
        if !part.weight.same_dims(&self.sum.weight) {
            return Err(Error::ResolutionMismatch(format!(
                "partial bake {:?} vs accumulator {:?}",
                part.weight.dims(),
                self.sum.weight.dims()
            )));
        }
        for (a, b) in self.sum.weight.data_mut().iter_mut().zip(part.weight.data()) {
            *a += b;
        }
        for (a, b) in self
            .sum
            .weighted_color
            .data_mut()
            .iter_mut()
            .zip(part.weighted_color.data())
        {
            for k in 0..3 {
                a[k] += b[k];
            }
        }
        self.frames += 1;
        Ok(())
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn finish(&self) -> TextureAtlas {
        self.sum.normalized()
    }
}

/// A mesh with its UV texel map and visibility index, reused across frames.
pub struct BakeContext<'a> {
    mesh: &'a TriangleMesh,
    index: VisibilityIndex,
    texels: TexelMap,
}

impl<'a> BakeContext<'a> {
    pub fn new(mesh: &'a TriangleMesh, width: usize, height: usize) -> Result<Self> {
        let texels = TexelMap::build(mesh, width, height)?;
        Ok(BakeContext::with_texel_map(mesh, texels))
    }

    /// Reuses a texel map built from a mesh with the same UV layout (for
    /// example before a rotation).
    pub fn with_texel_map(mesh: &'a TriangleMesh, texels: TexelMap) -> Self {
        BakeContext {
            mesh,
            index: VisibilityIndex::build(mesh),
            texels,
        }
    }

    pub fn mesh(&self) -> &TriangleMesh {
        self.mesh
    }

    pub fn texels(&self) -> &TexelMap {
        &self.texels
    }

    pub fn index(&self) -> &VisibilityIndex {
        &self.index
    }

    /// All texels with a positive weight from this frame, ascending by texel.
    /// Without `color` only weights are computed.
    pub fn frame_samples(
        &self,
        color: Option<&ColorImage>,
        gbuffer: &GBuffer,
        pose: &CameraPose,
        penalty_scale: f64,
    ) -> Result<Vec<TexelSample>> {
        let res = pose.resolution();
        let dims = (res.width as usize, res.height as usize);
        if (gbuffer.width(), gbuffer.height()) != dims {
            return Err(Error::ResolutionMismatch(format!(
                "g-buffer {}x{} vs camera {}x{}",
                gbuffer.width(),
                gbuffer.height(),
                dims.0,
                dims.1
            )));
        }
        if let Some(c) = color {
            if c.dims() != dims {
                return Err(Error::ResolutionMismatch(format!(
                    "frame {:?} vs camera {:?}",
                    c.dims(),
                    dims
                )));
            }
        }
        let depth = gbuffer.depth_raster();
        let cam = pose.position();
        let samples = self
            .texels
            .occupied()
            .par_iter()
            .filter_map(|&texel| {
                let (point, normal, face) = self.texels.surface(self.mesh, texel as usize)?;
                let proj = pose.project(&point);
                let (px, py) = proj.pixel(res)?;
                if !gbuffer.covered(px, py) {
                    return None;
                }
                if !texel_visible(&self.index, &point, face, pose) {
                    return None;
                }
                let view = (cam - point).normalize();
                let weights = BakeWeights::new(
                    angle_weight(&normal, &view),
                    depth_penalty(&depth, px, py, penalty_scale),
                );
                if !(weights.similarity > 0.0) {
                    return None;
                }
                let color = color.map_or([0.0; 3], |c| c.sample_bilinear(proj.x, proj.y));
                Some(TexelSample {
                    texel,
                    weights,
                    color,
                })
            })
            .collect();
        Ok(samples)
    }

    pub fn bake_frame(
        &self,
        color: &ColorImage,
        gbuffer: &GBuffer,
        pose: &CameraPose,
        penalty_scale: f64,
    ) -> Result<PartialBake> {
        let samples = self.frame_samples(Some(color), gbuffer, pose, penalty_scale)?;
        Ok(self.scatter(&samples))
    }

    /// Weights only; what a frame would contribute regardless of its colors.
    pub fn bake_weights(
        &self,
        gbuffer: &GBuffer,
        pose: &CameraPose,
        penalty_scale: f64,
    ) -> Result<Raster<f64>> {
        let samples = self.frame_samples(None, gbuffer, pose, penalty_scale)?;
        Ok(self.scatter(&samples).weight)
    }

    fn scatter(&self, samples: &[TexelSample]) -> PartialBake {
        let mut part = PartialBake::empty(self.texels.width, self.texels.height);
        for s in samples {
            let i = s.texel as usize;
            let w = s.weights.similarity;
            part.weight.data_mut()[i] = w;
            part.weighted_color.data_mut()[i] = s.color.map(|c| c * w);
        }
        part
    }

    /// Weighted mean over all frames, accumulated in frame order.
    pub fn bake_video(
        &self,
        frames: &[(ColorImage, GBuffer)],
        trajectory: &OrbitTrajectory,
        penalty_scale: f64,
    ) -> Result<TextureAtlas> {
        if frames.len() != trajectory.frames() {
            return Err(Error::InvalidInput(format!(
                "{} frames for a trajectory of {} poses",
                frames.len(),
                trajectory.frames()
            )));
        }
        let mut acc = BakeAccumulator::new(self.texels.width, self.texels.height);
        for ((color, g), pose) in frames.iter().zip(trajectory.poses()) {
            acc.add(&self.bake_frame(color, g, pose, penalty_scale)?)?;
        }
        Ok(acc.finish())
    }
}

/// Single-frame bake building its own texel map and visibility index.
pub fn bake_frame(
    mesh: &TriangleMesh,
    color: &ColorImage,
    gbuffer: &GBuffer,
    pose: &CameraPose,
    config: &BakeConfig,
) -> Result<PartialBake> {
    BakeContext::new(mesh, config.atlas_width, config.atlas_height)?.bake_frame(
        color,
        gbuffer,
        pose,
        config.penalty_scale,
    )
}

/// Bakes a whole video: `color = sum(S * sample) / sum(S)`,
/// `confidence = sum(S)`.
pub fn bake_video(
    mesh: &TriangleMesh,
    frames: &[(ColorImage, GBuffer)],
    trajectory: &OrbitTrajectory,
    config: &BakeConfig,
) -> Result<TextureAtlas> {
    BakeContext::new(mesh, config.atlas_width, config.atlas_height)?.bake_video(
        frames,
        trajectory,
        config.penalty_scale,
    )
}

/// UV of a texel center, for callers walking the texel map.
pub fn texel_uv(map: &TexelMap, texel: usize) -> Point2<f64> {
    crate::atlas::texel_center_uv(texel % map.width, texel / map.width, map.width, map.height)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn angle_weight_values() {
        let n = Vector3::z();
        assert_eq!(angle_weight(&n, &Vector3::z()), 1.0);
        let v = Vector3::new((0.75f64).sqrt(), 0.0, 0.5);
        assert!((angle_weight(&n, &v) - 0.0625).abs() < 1e-15);
        assert_eq!(angle_weight(&n, &-Vector3::z()), 0.0);
        assert_eq!(angle_weight(&n, &Vector3::x()), 0.0);
    }

    #[test]
    fn depth_penalty_constant_and_affine() {
        let c = Raster::new(9, 7, 2.5);
        for y in 0..7 {
            for x in 0..9 {
                assert_eq!(depth_penalty(&c, x, y, 8.0), 0.0);
            }
        }
        let ramp = Raster::from_fn(9, 7, |x, y| 1.0 + 0.25 * x as f64 - 0.5 * y as f64);
        for y in 1..6 {
            for x in 1..8 {
                assert_eq!(depth_penalty(&ramp, x, y, 8.0), 0.0);
            }
        }
    }

    #[test]
    fn depth_penalty_unit_step() {
        let step = Raster::from_fn(8, 5, |x, _| if x < 4 { 1.0 } else { 2.0 });
        assert_eq!(depth_penalty(&step, 3, 2, 1.0), 1.0);
        assert_eq!(depth_penalty(&step, 4, 2, 1.0), 1.0);
        assert_eq!(depth_penalty(&step, 1, 2, 1.0), 0.0);
    }

    #[test]
    fn depth_penalty_ignores_uncovered_neighbors() {
        let mut d = Raster::new(3, 3, 1.0);
        d.set(0, 1, f64::INFINITY);
        assert_eq!(depth_penalty(&d, 1, 1, 8.0), 0.0);
    }

    #[test]
    fn similarity_identity() {
        let w = BakeWeights::new(0.7, 0.2);
        assert!((w.similarity - 0.7 * 0.8).abs() < 1e-15);
    }

    #[test]
    fn texel_map_covers_quad_fully() {
        let q = crate::fixtures::quad(1.0, 0.0);
        let map = TexelMap::build(&q, 16, 16).unwrap();
        assert_eq!(map.occupied().len(), 256);
        assert!((0..256).all(|i| !map.is_dilated(i)));
    }

    #[test]
    fn texel_map_dilates_by_one() {
        let cube = crate::fixtures::cube_with_bounds(-0.5, 0.5);
        let map = TexelMap::build(&cube, 96, 64).unwrap();
        let dilated = (0..96 * 64).filter(|&i| map.is_dilated(i)).count();
        assert!(dilated > 0);
        // every dilated texel touches a core texel
        for i in 0..96 * 64 {
            if map.is_dilated(i) {
                let (x, y) = ((i % 96) as i64, (i / 96) as i64);
                let touches = (-1..=1).any(|dy| {
                    (-1..=1).any(|dx| {
                        let (nx, ny) = (x + dx, y + dy);
                        nx >= 0
                            && ny >= 0
                            && nx < 96
                            && ny < 64
                            && map.owner((ny * 96 + nx) as usize).is_some()
                            && !map.is_dilated((ny * 96 + nx) as usize)
                    })
                });
                assert!(touches);
            }
        }
    }

    #[test]
    fn mesh_without_uvs_cannot_be_baked() {
        let m = TriangleMesh::from_indexed(
            vec![Point3::origin(), Point3::new(1.0, 0.0, 0.0), Point3::new(0.0, 1.0, 0.0)],
            None,
            &[[0, 1, 2]],
        )
        .unwrap();
        assert!(matches!(TexelMap::build(&m, 4, 4), Err(Error::MissingUvs)));
    }
}
