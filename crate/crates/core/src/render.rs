//! Z-buffered software rasterization of per-frame geometry buffers.
//!
//! Triangles are processed in index order and a fragment replaces the
//! stored one only when strictly nearer, so on depth ties the lower
//! triangle index wins. Sample points are pixel centers; edges follow the
//! top-left fill rule. No culling, no antialiasing.

use nalgebra::{Point2, Vector3};
use rayon::prelude::*;

use crate::atlas::TextureAtlas;
use crate::camera::{CameraPose, OrbitTrajectory};
use crate::error::Result;
use crate::mesh::TriangleMesh;
use crate::raster::ColorImage;

pub const NO_FACE: u32 = u32::MAX;

/// Per-pixel face ownership and interpolated UV, kept for texture lookups.
#[derive(Clone, Debug, PartialEq)]
pub struct TexelShadingCache {
    /// Owning face per pixel, [`NO_FACE`] where uncovered.
    pub face: Vec<u32>,
    /// Perspective-correct barycentrics of the owning face.
    pub bary: Vec<[f64; 3]>,
    /// Interpolated UV, present when the mesh is UV-mapped.
    pub uv: Option<Vec<[f64; 2]>>,
}

/// Aligned per-pixel rasters for one camera pose.
#[derive(Clone, Debug, PartialEq)]
pub struct GBuffer {
    width: usize,
    height: usize,
    pub mask: Vec<bool>,
    /// Camera-space depth; `f64::INFINITY` where uncovered.
    pub depth: Vec<f64>,
    /// Unit normals; zero where uncovered.
    pub normal: Vec<[f64; 3]>,
    /// World positions; zero where uncovered.
    pub position: Vec<[f64; 3]>,
    pub color: Option<Vec<[f64; 3]>>,
    pub inpaint: Option<Vec<bool>>,
    pub shading: TexelShadingCache,
}

impl GBuffer {
    fn empty(width: usize, height: usize) -> Self {
        let n = width * height;
        GBuffer {
            width,
            height,
            mask: vec![false; n],
            depth: vec![f64::INFINITY; n],
            normal: vec![[0.0; 3]; n],
            position: vec![[0.0; 3]; n],
            color: None,
            inpaint: None,
            shading: TexelShadingCache {
                face: vec![NO_FACE; n],
                bary: vec![[0.0; 3]; n],
                uv: None,
            },
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn covered(&self, x: usize, y: usize) -> bool {
        self.mask[self.index(x, y)]
    }

    pub fn coverage_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    pub fn normal_at(&self, x: usize, y: usize) -> Option<Vector3<f64>> {
        let i = self.index(x, y);
        self.mask[i].then(|| Vector3::from(self.normal[i]))
    }

    pub fn position_at(&self, x: usize, y: usize) -> Option<nalgebra::Point3<f64>> {
        let i = self.index(x, y);
        self.mask[i].then(|| nalgebra::Point3::from(self.position[i]))
    }

    /// Depth channel as a raster (infinite where uncovered).
    pub fn depth_raster(&self) -> crate::raster::Raster<f64> {
        crate::raster::Raster::from_vec(self.width, self.height, self.depth.clone())
            .expect("depth has one value per pixel")
    }

    /// Color channel as an image; black when no color was rendered.
    pub fn color_image(&self) -> ColorImage {
        let data = self
            .color
            .clone()
            .unwrap_or_else(|| vec![[0.0; 3]; self.width * self.height]);
        ColorImage::from_vec(self.width, self.height, data).expect("one color per pixel")
    }

    /// Checks the channel consistency invariants; returns a description of
    /// the first violation.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        for i in 0..self.mask.len() {
            let m = self.mask[i];
            if m != self.depth[i].is_finite() {
                return Err(format!("pixel {i}: mask {m} but depth {}", self.depth[i]));
            }
            let n = Vector3::from(self.normal[i]).norm();
            if m && (n - 1.0).abs() > 1e-6 {
                return Err(format!("pixel {i}: covered normal has length {n}"));
            }
            if !m && (n != 0.0 || self.position[i] != [0.0; 3]) {
                return Err(format!("pixel {i}: uncovered pixel carries attributes"));
            }
            if m != (self.shading.face[i] != NO_FACE) {
                return Err(format!("pixel {i}: mask disagrees with face ownership"));
            }
            if let Some(inp) = &self.inpaint {
                if inp[i] && !m {
                    return Err(format!("pixel {i}: inpaint outside coverage"));
                }
            }
        }
        Ok(())
    }
}

/// Screen-space vertex of a (possibly clipped) triangle.
#[derive(Clone, Copy)]
struct ScreenVertex {
    x: f64,
    y: f64,
    inv_z: f64,
    /// Barycentric weights relative to the original triangle.
    bary: [f64; 3],
}

#[derive(Clone, Copy)]
struct ClipVertex {
    cam: Vector3<f64>,
    bary: [f64; 3],
}

fn clip_near(tri: [ClipVertex; 3], near: f64) -> Vec<ClipVertex> {
    let inside = |v: &ClipVertex| v.cam.z >= near;
    if tri.iter().all(inside) {
        return tri.to_vec();
    }
    let mut out = Vec::with_capacity(4);
    for i in 0..3 {
        let a = tri[i];
        let b = tri[(i + 1) % 3];
        if inside(&a) {
            out.push(a);
        }
        if inside(&a) != inside(&b) {
            let s = (near - a.cam.z) / (b.cam.z - a.cam.z);
            out.push(ClipVertex {
                cam: a.cam + (b.cam - a.cam) * s,
                bary: std::array::from_fn(|k| a.bary[k] + (b.bary[k] - a.bary[k]) * s),
            });
        }
    }
    out
}

/// Edge function with endpoints taken in lexicographic order; shared edges
/// evaluate to exact negatives in their two triangles.
#[inline]
fn edge(a: &ScreenVertex, b: &ScreenVertex, px: f64, py: f64) -> f64 {
    let raw = |a: &ScreenVertex, b: &ScreenVertex| (b.x - a.x) * (py - a.y) - (b.y - a.y) * (px - a.x);
    if (a.x, a.y) <= (b.x, b.y) {
        raw(a, b)
    } else {
        -raw(b, a)
    }
}

/// Top-left rule for the orientation where interior edge functions are
/// positive (y grows downward): top edges run in +x, left edges run upward.
#[inline]
fn is_top_left(a: &ScreenVertex, b: &ScreenVertex) -> bool {
    let dy = b.y - a.y;
    let dx = b.x - a.x;
    (dy == 0.0 && dx > 0.0) || dy < 0.0
}

struct Fragments {
    width: usize,
    height: usize,
    depth: Vec<f64>,
    face: Vec<u32>,
    bary: Vec<[f64; 3]>,
}

fn rasterize(mesh: &TriangleMesh, pose: &CameraPose) -> Fragments {
    let res = pose.resolution();
    let (w, h) = (res.width as usize, res.height as usize);
    let mut frags = Fragments {
        width: w,
        height: h,
        depth: vec![f64::INFINITY; w * h],
        face: vec![NO_FACE; w * h],
        bary: vec![[0.0; 3]; w * h],
    };
    let cam: Vec<Vector3<f64>> = mesh.positions().iter().map(|p| pose.to_camera(p)).collect();
    let f = pose.focal_px();
    let (cx, cy) = pose.principal_point();
    let near = pose.near();
    let unit = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

    for (fi, face) in mesh.faces().iter().enumerate() {
        let tri: [ClipVertex; 3] = std::array::from_fn(|k| ClipVertex {
            cam: cam[face.positions[k] as usize],
            bary: unit[k],
        });
        if tri.iter().all(|v| v.cam.z < near) {
            continue;
        }
        let poly = clip_near(tri, near);
        if poly.len() < 3 {
            continue;
        }
        let screen: Vec<ScreenVertex> = poly
            .iter()
            .map(|v| ScreenVertex {
                x: cx + f * v.cam.x / v.cam.z,
                y: cy + f * v.cam.y / v.cam.z,
                inv_z: 1.0 / v.cam.z,
                bary: v.bary,
            })
            .collect();
        for k in 1..screen.len() - 1 {
            raster_triangle(&mut frags, [screen[0], screen[k], screen[k + 1]], fi as u32);
        }
    }
    frags
}

fn raster_triangle(frags: &mut Fragments, mut v: [ScreenVertex; 3], face: u32) {
    let mut area = edge(&v[0], &v[1], v[2].x, v[2].y);
    if area == 0.0 || !area.is_finite() {
        return;
    }
    if area < 0.0 {
        v.swap(1, 2);
        area = -area;
    }
    let min_x = v.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
    let max_x = v.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
    let min_y = v.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
    let max_y = v.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
    // pixel centers at i + 0.5 inside [min, max]
    let x0 = (min_x - 0.5).ceil().max(0.0);
    let y0 = (min_y - 0.5).ceil().max(0.0);
    let x1 = (max_x - 0.5).floor().min(frags.width as f64 - 1.0);
    let y1 = (max_y - 0.5).floor().min(frags.height as f64 - 1.0);
    if x0 > x1 || y0 > y1 {
        return;
    }
    let tl = [
        is_top_left(&v[1], &v[2]),
        is_top_left(&v[2], &v[0]),
        is_top_left(&v[0], &v[1]),
    ];
    for py in y0 as usize..=y1 as usize {
        let sy = py as f64 + 0.5;
        for px in x0 as usize..=x1 as usize {
            let sx = px as f64 + 0.5;
            let e = [
                edge(&v[1], &v[2], sx, sy),
                edge(&v[2], &v[0], sx, sy),
                edge(&v[0], &v[1], sx, sy),
            ];
            if !(0..3).all(|k| e[k] > 0.0 || (e[k] == 0.0 && tl[k])) {
                continue;
            }
            let b = e.map(|ek| ek / area);
            let inv_z = b[0] * v[0].inv_z + b[1] * v[1].inv_z + b[2] * v[2].inv_z;
            let z = 1.0 / inv_z;
            let i = py * frags.width + px;
            if !(z < frags.depth[i]) {
                continue;
            }
            let mut bary = [0.0; 3];
            for k in 0..3 {
                let wk = b[k] * v[k].inv_z * z;
                for (j, bj) in bary.iter_mut().enumerate() {
                    *bj += wk * v[k].bary[j];
                }
            }
            frags.depth[i] = z;
            frags.face[i] = face;
            frags.bary[i] = bary;
        }
    }
}

/// Normal, position, depth and coverage buffers for one pose.
pub fn render_gbuffer(mesh: &TriangleMesh, pose: &CameraPose) -> GBuffer {
    let frags = rasterize(mesh, pose);
    let mut g = GBuffer::empty(frags.width, frags.height);
    let has_uv = mesh.is_bakeable();
    let mut uv = has_uv.then(|| vec![[0.0; 2]; frags.width * frags.height]);
    for i in 0..frags.face.len() {
        let face = frags.face[i];
        if face == NO_FACE {
            continue;
        }
        let fi = face as usize;
        let b = frags.bary[i];
        g.mask[i] = true;
        g.depth[i] = frags.depth[i];
        g.normal[i] = mesh.normal_at(fi, b).into();
        g.position[i] = mesh.point_at(fi, b).coords.into();
        g.shading.face[i] = face;
        g.shading.bary[i] = b;
        if let (Some(uv), Some(t)) = (uv.as_mut(), mesh.triangle_uvs(fi)) {
            let p = t[0].coords * b[0] + t[1].coords * b[1] + t[2].coords * b[2];
            uv[i] = [p.x, p.y];
        }
    }
    g.shading.uv = uv;
    g
}

/// G-buffer plus color sampled from `atlas` and the inpaint mask of covered
/// pixels whose sampled confidence falls below `confidence_threshold`.
pub fn render_color(
    mesh: &TriangleMesh,
    atlas: &TextureAtlas,
    pose: &CameraPose,
    confidence_threshold: f64,
) -> Result<GBuffer> {
    mesh.require_uvs()?;
    let mut g = render_gbuffer(mesh, pose);
    let n = g.mask.len();
    let mut color = vec![[0.0; 3]; n];
    let mut inpaint = vec![false; n];
    let uvs = g.shading.uv.as_ref().expect("bakeable mesh yields uvs");
    for i in 0..n {
        if !g.mask[i] {
            continue;
        }
        let uv = Point2::new(uvs[i][0], uvs[i][1]);
        color[i] = atlas.sample_color(uv);
        inpaint[i] = atlas.sample_confidence(uv) < confidence_threshold;
    }
    g.color = Some(color);
    g.inpaint = Some(inpaint);
    Ok(g)
}

/// One buffer per trajectory pose, in frame order. Frames render in
/// parallel; each frame is rasterized sequentially, so output is identical
/// to a sequential run.
pub fn render_turntable(
    mesh: &TriangleMesh,
    atlas: Option<&TextureAtlas>,
    trajectory: &OrbitTrajectory,
    confidence_threshold: f64,
) -> Result<Vec<GBuffer>> {
    trajectory
        .poses()
        .par_iter()
        .map(|pose| match atlas {
            Some(a) => render_color(mesh, a, pose, confidence_threshold),
            None => Ok(render_gbuffer(mesh, pose)),
        })
        .collect()
}
