//! Triangle meshes with UV parameterization: loading, validation,
//! normalization into the unit sphere, and rigid rotation.

use std::fmt::Write as _;
use std::path::Path;

use log::warn;
use nalgebra::{Matrix3, Point2, Point3, Quaternion, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const NORMAL_TOLERANCE: f64 = 1e-4;
const UV_TOLERANCE: f64 = 1e-4;

/// One triangle; each corner references a position, a normal and
/// (optionally) a UV coordinate by index.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Face {
    pub positions: [u32; 3],
    pub normals: [u32; 3],
    pub uvs: Option<[u32; 3]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TriangleMesh {
    positions: Vec<Point3<f64>>,
    normals: Vec<Vector3<f64>>,
    uvs: Vec<Point2<f64>>,
    faces: Vec<Face>,
}

impl TriangleMesh {
    /// Builds a mesh and checks every invariant: indices in range, finite
    /// coordinates, unit normals and UVs inside the unit square.
    pub fn new(
        positions: Vec<Point3<f64>>,
        normals: Vec<Vector3<f64>>,
        uvs: Vec<Point2<f64>>,
        faces: Vec<Face>,
    ) -> Result<Self> {
        let mesh = TriangleMesh {
            positions,
            normals,
            uvs,
            faces,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    /// Builds a mesh where positions, UVs and (synthesized) normals share one
    /// index per corner.
    pub fn from_indexed(
        positions: Vec<Point3<f64>>,
        uvs: Option<Vec<Point2<f64>>>,
        triangles: &[[u32; 3]],
    ) -> Result<Self> {
        if triangles.is_empty() {
            return Err(Error::EmptyMesh);
        }
        check_indices(triangles.iter().flatten(), positions.len(), "position")?;
        let normals = area_weighted_normals(&positions, triangles.iter().copied());
        let has_uvs = uvs.is_some();
        let faces = triangles
            .iter()
            .map(|&t| Face {
                positions: t,
                normals: t,
                uvs: has_uvs.then_some(t),
            })
            .collect();
        TriangleMesh::new(positions, normals, uvs.unwrap_or_default(), faces)
    }

    fn validate(&self) -> Result<()> {
        if self.faces.is_empty() {
            return Err(Error::EmptyMesh);
        }
        if let Some(p) = self.positions.iter().find(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::MalformedGeometry(format!("non-finite position {p:?}")));
        }
        for n in &self.normals {
            let len = n.norm();
            if !len.is_finite() || (len - 1.0).abs() > NORMAL_TOLERANCE {
                return Err(Error::MalformedGeometry(format!(
                    "normal {n:?} is not unit length"
                )));
            }
        }
        for uv in &self.uvs {
            let ok = uv
                .iter()
                .all(|c| c.is_finite() && *c >= -UV_TOLERANCE && *c <= 1.0 + UV_TOLERANCE);
            if !ok {
                return Err(Error::MalformedGeometry(format!(
                    "uv ({}, {}) outside the unit square",
                    uv.x, uv.y
                )));
            }
        }
        check_indices(
            self.faces.iter().flat_map(|f| f.positions.iter()),
            self.positions.len(),
            "position",
        )?;
        check_indices(
            self.faces.iter().flat_map(|f| f.normals.iter()),
            self.normals.len(),
            "normal",
        )?;
        check_indices(
            self.faces.iter().filter_map(|f| f.uvs.as_ref()).flatten(),
            self.uvs.len(),
            "uv",
        )?;
        Ok(())
    }

    pub fn positions(&self) -> &[Point3<f64>] {
        &self.positions
    }

    pub fn normals(&self) -> &[Vector3<f64>] {
        &self.normals
    }

    pub fn uvs(&self) -> &[Point2<f64>] {
        &self.uvs
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    /// Every face carries UVs on all three corners.
    pub fn is_bakeable(&self) -> bool {
        !self.uvs.is_empty() && self.faces.iter().all(|f| f.uvs.is_some())
    }

    pub fn require_uvs(&self) -> Result<()> {
        if self.is_bakeable() {
            Ok(())
        } else {
            Err(Error::MissingUvs)
        }
    }

    #[inline]
    pub fn triangle(&self, face: usize) -> [Point3<f64>; 3] {
        let f = &self.faces[face];
        f.positions.map(|i| self.positions[i as usize])
    }

    #[inline]
    pub fn triangle_normals(&self, face: usize) -> [Vector3<f64>; 3] {
        let f = &self.faces[face];
        f.normals.map(|i| self.normals[i as usize])
    }

    /// UV corners of a face; `None` when the face is not UV-mapped.
    #[inline]
    pub fn triangle_uvs(&self, face: usize) -> Option<[Point2<f64>; 3]> {
        self.faces[face]
            .uvs
            .map(|t| t.map(|i| self.uvs[i as usize]))
    }

    pub fn point_at(&self, face: usize, bary: [f64; 3]) -> Point3<f64> {
        let [a, b, c] = self.triangle(face);
        Point3::from(a.coords * bary[0] + b.coords * bary[1] + c.coords * bary[2])
    }

    /// Interpolated shading normal, renormalized; falls back to the geometric
    /// normal when the interpolation cancels out.
    pub fn normal_at(&self, face: usize, bary: [f64; 3]) -> Vector3<f64> {
        let [a, b, c] = self.triangle_normals(face);
        let n = a * bary[0] + b * bary[1] + c * bary[2];
        match n.try_normalize(1e-12) {
            Some(n) => n,
            None => self.face_normal(face),
        }
    }

    pub fn face_normal(&self, face: usize) -> Vector3<f64> {
        let [a, b, c] = self.triangle(face);
        (b - a)
            .cross(&(c - a))
            .try_normalize(0.0)
            .unwrap_or_else(Vector3::z)
    }

    /// Axis-aligned bounds `(min, max)`.
    pub fn bounds(&self) -> (Point3<f64>, Point3<f64>) {
        let mut lo = Point3::from([f64::INFINITY; 3]);
        let mut hi = Point3::from([f64::NEG_INFINITY; 3]);
        for p in &self.positions {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (lo, hi)
    }

    /// Largest distance of any vertex from the origin.
    pub fn bounding_radius(&self) -> f64 {
        self.positions
            .iter()
            .map(|p| p.coords.norm())
            .fold(0.0, f64::max)
    }

    /// Wavefront OBJ text; indices are written 1-based, `v` before `vt`.
    pub fn to_obj_string(&self) -> String {
        let mut out = String::new();
        for p in &self.positions {
            let _ = writeln!(out, "v {} {} {}", p.x, p.y, p.z);
        }
        for t in &self.uvs {
            let _ = writeln!(out, "vt {} {}", t.x, t.y);
        }
        for n in &self.normals {
            let _ = writeln!(out, "vn {} {} {}", n.x, n.y, n.z);
        }
        for f in &self.faces {
            out.push('f');
            for k in 0..3 {
                let p = f.positions[k] + 1;
                let n = f.normals[k] + 1;
                match f.uvs {
                    Some(t) => {
                        let _ = write!(out, " {}/{}/{}", p, t[k] + 1, n);
                    }
                    None => {
                        let _ = write!(out, " {p}//{n}");
                    }
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn save_obj(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_obj_string()).map_err(|e| Error::io(path, e))
    }
}

fn check_indices<'a>(
    indices: impl Iterator<Item = &'a u32>,
    len: usize,
    what: &str,
) -> Result<()> {
    for &i in indices {
        if i as usize >= len {
            return Err(Error::MalformedGeometry(format!(
                "{what} index {i} out of range (have {len})"
            )));
        }
    }
    Ok(())
}

/// Per-vertex normals from the sum of incident face cross products, so each
/// face contributes proportionally to its area.
pub fn area_weighted_normals(
    positions: &[Point3<f64>],
    triangles: impl Iterator<Item = [u32; 3]>,
) -> Vec<Vector3<f64>> {
    let mut acc = vec![Vector3::zeros(); positions.len()];
    for [a, b, c] in triangles {
        let (pa, pb, pc) = (
            positions[a as usize],
            positions[b as usize],
            positions[c as usize],
        );
        let n = (pb - pa).cross(&(pc - pa));
        for i in [a, b, c] {
            acc[i as usize] += n;
        }
    }
    acc.into_iter()
        .map(|n| n.try_normalize(1e-300).unwrap_or_else(Vector3::z))
        .collect()
}

/// Loads a Wavefront OBJ (`.obj`) or glTF (`.glb`, `.gltf`) file.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    let path = path.as_ref();
    std::fs::metadata(path).map_err(|e| Error::io(path, e))?;
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    let mesh = match ext.as_str() {
        "obj" => load_obj(path)?,
        "glb" | "gltf" => load_gltf(path)?,
        other => return Err(Error::UnsupportedFormat(format!("extension {other:?}"))),
    };
    if !mesh.is_bakeable() {
        warn!("{}: mesh has no complete UV layout; it can be rendered but not baked", path.display());
    }
    Ok(mesh)
}

fn load_obj(path: &Path) -> Result<TriangleMesh> {
    let options = tobj::LoadOptions {
        single_index: false,
        triangulate: true,
        ignore_points: true,
        ignore_lines: true,
    };
    let (models, _materials) = tobj::load_obj(path, &options).map_err(|e| match e {
        tobj::LoadError::OpenFileFailed | tobj::LoadError::ReadError => Error::io(
            path,
            std::io::Error::other(e.to_string()),
        ),
        other => Error::MalformedGeometry(other.to_string()),
    })?;

    let mut positions = Vec::new();
    let mut uvs = Vec::new();
    let mut normals = Vec::new();
    let mut tris: Vec<[u32; 3]> = Vec::new();
    let mut uv_tris: Vec<Option<[u32; 3]>> = Vec::new();
    let mut normal_tris: Vec<Option<[u32; 3]>> = Vec::new();

    for model in &models {
        let m = &model.mesh;
        if m.indices.len() % 3 != 0 {
            return Err(Error::MalformedGeometry(format!(
                "object {:?} has a non-triangular index count",
                model.name
            )));
        }
        let p_off = positions.len() as u32;
        let t_off = uvs.len() as u32;
        let n_off = normals.len() as u32;
        positions.extend(
            m.positions
                .chunks_exact(3)
                .map(|c| Point3::new(c[0], c[1], c[2])),
        );
        uvs.extend(
            m.texcoords
                .chunks_exact(2)
                .map(|c| Point2::new(c[0], c[1])),
        );
        normals.extend(
            m.normals
                .chunks_exact(3)
                .map(|c| Vector3::new(c[0], c[1], c[2])),
        );
        let has_uv = m.texcoord_indices.len() == m.indices.len();
        let has_n = m.normal_indices.len() == m.indices.len();
        for (k, tri) in m.indices.chunks_exact(3).enumerate() {
            tris.push([tri[0] + p_off, tri[1] + p_off, tri[2] + p_off]);
            let idx = |v: &[u32], off: u32| [v[3 * k] + off, v[3 * k + 1] + off, v[3 * k + 2] + off];
            uv_tris.push(has_uv.then(|| idx(&m.texcoord_indices, t_off)));
            normal_tris.push(has_n.then(|| idx(&m.normal_indices, n_off)));
        }
    }
    assemble(positions, normals, uvs, tris, normal_tris, uv_tris)
}

/// Shared tail of the loaders: fills in missing normals, renormalizes given
/// ones and validates.
fn assemble(
    positions: Vec<Point3<f64>>,
    mut normals: Vec<Vector3<f64>>,
    uvs: Vec<Point2<f64>>,
    tris: Vec<[u32; 3]>,
    normal_tris: Vec<Option<[u32; 3]>>,
    uv_tris: Vec<Option<[u32; 3]>>,
) -> Result<TriangleMesh> {
    if tris.is_empty() {
        return Err(Error::EmptyMesh);
    }
    check_indices(tris.iter().flatten(), positions.len(), "position")?;
    check_indices(normal_tris.iter().flatten().flatten(), normals.len(), "normal")?;
    check_indices(uv_tris.iter().flatten().flatten(), uvs.len(), "uv")?;
    for n in normals.iter_mut() {
        *n = n.try_normalize(1e-12).ok_or_else(|| {
            Error::MalformedGeometry("zero-length normal in file".to_string())
        })?;
    }

    let missing_normals = normal_tris.iter().any(Option::is_none);
    let synthesized_base = normals.len() as u32;
    if missing_normals {
        normals.extend(area_weighted_normals(&positions, tris.iter().copied()));
    }
    let faces = tris
        .iter()
        .zip(&normal_tris)
        .zip(&uv_tris)
        .map(|((&p, n), t)| Face {
            positions: p,
            normals: n.unwrap_or_else(|| p.map(|i| i + synthesized_base)),
            uvs: *t,
        })
        .collect();
    TriangleMesh::new(positions, normals, uvs, faces)
}

fn load_gltf(path: &Path) -> Result<TriangleMesh> {
    let gltf = gltf::Gltf::open(path).map_err(|e| Error::format(path, e.to_string()))?;
    let base = path.parent();
    let buffers = gltf::import_buffers(&gltf.document, base, gltf.blob.clone())
        .map_err(|e| Error::format(path, e.to_string()))?;

    let scene = gltf
        .document
        .default_scene()
        .or_else(|| gltf.document.scenes().next())
        .ok_or_else(|| Error::format(path, "no scene"))?;

    // depth-first search for the first node carrying a mesh, tracking its
    // world transform
    let mut stack: Vec<(gltf::Node, nalgebra::Matrix4<f64>)> = scene
        .nodes()
        .map(|n| (n, nalgebra::Matrix4::identity()))
        .collect();
    stack.reverse();
    let mut found = None;
    while let Some((node, parent)) = stack.pop() {
        let local = nalgebra::Matrix4::from_fn(|r, c| node.transform().matrix()[c][r] as f64);
        let world = parent * local;
        if let Some(mesh) = node.mesh() {
            found = Some((mesh, world));
            break;
        }
        for child in node.children().collect::<Vec<_>>().into_iter().rev() {
            stack.push((child, world));
        }
    }
    let (mesh, world) = found.ok_or_else(|| Error::format(path, "scene has no mesh"))?;
    let prim = mesh
        .primitives()
        .next()
        .ok_or_else(|| Error::format(path, "mesh has no primitives"))?;
    if prim.mode() != gltf::mesh::Mode::Triangles {
        return Err(Error::MalformedGeometry(format!(
            "primitive mode {:?} is not triangles",
            prim.mode()
        )));
    }
    let reader = prim.reader(|b| buffers.get(b.index()).map(|d| &d.0[..]));
    let positions: Vec<Point3<f64>> = reader
        .read_positions()
        .ok_or_else(|| Error::MalformedGeometry("primitive without POSITION".into()))?
        .map(|p| world.transform_point(&Point3::new(p[0] as f64, p[1] as f64, p[2] as f64)))
        .collect();
    let normal_matrix = world
        .fixed_view::<3, 3>(0, 0)
        .try_inverse()
        .map(|m| m.transpose())
        .unwrap_or_else(Matrix3::identity);
    let normals: Vec<Vector3<f64>> = reader
        .read_normals()
        .map(|it| {
            it.map(|n| normal_matrix * Vector3::new(n[0] as f64, n[1] as f64, n[2] as f64))
                .collect()
        })
        .unwrap_or_default();
    // glTF puts v=0 at the top of the image; flip to the bottom-left origin
    let uvs: Vec<Point2<f64>> = reader
        .read_tex_coords(0)
        .map(|tc| {
            tc.into_f32()
                .map(|t| Point2::new(t[0] as f64, 1.0 - t[1] as f64))
                .collect()
        })
        .unwrap_or_default();
    let indices: Vec<u32> = match reader.read_indices() {
        Some(ix) => ix.into_u32().collect(),
        None => (0..positions.len() as u32).collect(),
    };
    if !indices.len().is_multiple_of(3) {
        return Err(Error::MalformedGeometry(
            "index count is not a multiple of 3".into(),
        ));
    }
    let tris: Vec<[u32; 3]> = indices.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    let has_n = normals.len() == positions.len();
    let has_uv = uvs.len() == positions.len();
    let normal_tris = tris.iter().map(|t| has_n.then_some(*t)).collect();
    let uv_tris = tris.iter().map(|t| has_uv.then_some(*t)).collect();
    assemble(
        positions,
        if has_n { normals } else { Vec::new() },
        if has_uv { uvs } else { Vec::new() },
        tris,
        normal_tris,
        uv_tris,
    )
}

/// Centers the bounding box on the origin and scales so the farthest vertex
/// lies on the unit sphere. UVs and topology are untouched.
pub fn normalize_mesh(mesh: &TriangleMesh) -> Result<TriangleMesh> {
    let (lo, hi) = mesh.bounds();
    let center = nalgebra::center(&lo, &hi);
    let radius = mesh
        .positions
        .iter()
        .map(|p| (p - center).norm())
        .fold(0.0, f64::max);
    if !(radius > 1e-12) {
        return Err(Error::DegenerateMesh(
            "all vertices coincide; bounding radius is zero".into(),
        ));
    }
    let scale = 1.0 / radius;
    let mut out = mesh.clone();
    for p in &mut out.positions {
        *p = Point3::from((*p - center) * scale);
    }
    Ok(out)
}

/// Indices of a rotation drawn from a yaw/pitch candidate grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridIndex {
    pub yaw: usize,
    pub pitch: usize,
}

/// A rigid rotation about the origin.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation {
    quat: UnitQuaternion<f64>,
    grid: Option<GridIndex>,
}

impl Default for Rotation {
    fn default() -> Self {
        Rotation::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Rotation {
            quat: UnitQuaternion::identity(),
            grid: None,
        }
    }

    pub fn from_quaternion(quat: UnitQuaternion<f64>) -> Self {
        Rotation { quat, grid: None }
    }

    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64) -> Result<Self> {
        let axis = Unit::try_new(axis, 1e-12)
            .ok_or_else(|| Error::InvalidInput("rotation axis has zero length".into()))?;
        Ok(Rotation::from_quaternion(UnitQuaternion::from_axis_angle(
            &axis, angle,
        )))
    }

    /// Pitch about +y is applied first, then yaw about the +z (up) axis.
    pub fn from_yaw_pitch(yaw: f64, pitch: f64) -> Self {
        let q = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw)
            * UnitQuaternion::from_axis_angle(&Vector3::y_axis(), pitch);
        Rotation::from_quaternion(q)
    }

    pub fn from_yaw_pitch_degrees(yaw: f64, pitch: f64) -> Self {
        Rotation::from_yaw_pitch(yaw.to_radians(), pitch.to_radians())
    }

    pub fn with_grid_index(mut self, yaw: usize, pitch: usize) -> Self {
        self.grid = Some(GridIndex { yaw, pitch });
        self
    }

    pub fn grid_index(&self) -> Option<GridIndex> {
        self.grid
    }

    pub fn quaternion(&self) -> &UnitQuaternion<f64> {
        &self.quat
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        self.quat.to_rotation_matrix().into_inner()
    }

    pub fn inverse(&self) -> Self {
        Rotation::from_quaternion(self.quat.inverse())
    }

    /// `self` applied after `first`.
    pub fn compose(&self, first: &Rotation) -> Self {
        Rotation::from_quaternion(self.quat * first.quat)
    }

    pub fn apply_point(&self, p: &Point3<f64>) -> Point3<f64> {
        self.quat.transform_point(p)
    }

    pub fn apply_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.quat.transform_vector(v)
    }

    pub fn is_identity(&self) -> bool {
        self.quat.angle() == 0.0
    }
}

/// Serialized form: quaternion as `[w, x, y, z]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RotationRecord {
    pub quaternion: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridIndex>,
}

impl From<&Rotation> for RotationRecord {
    fn from(r: &Rotation) -> Self {
        let q = r.quat.quaternion();
        RotationRecord {
            quaternion: [q.w, q.i, q.j, q.k],
            grid: r.grid,
        }
    }
}

impl TryFrom<RotationRecord> for Rotation {
    type Error = Error;

    fn try_from(rec: RotationRecord) -> Result<Self> {
        let [w, x, y, z] = rec.quaternion;
        let q = Quaternion::new(w, x, y, z);
        let norm = q.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidInput(format!(
                "rotation quaternion has norm {norm}, expected 1"
            )));
        }
        let quat = if (norm - 1.0).abs() < 1e-12 {
            UnitQuaternion::new_unchecked(q)
        } else {
            UnitQuaternion::new_normalize(q)
        };
        Ok(Rotation {
            quat,
            grid: rec.grid,
        })
    }
}

impl Serialize for Rotation {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        RotationRecord::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Rotation {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rec = RotationRecord::deserialize(d)?;
        Rotation::try_from(rec).map_err(serde::de::Error::custom)
    }
}

/// Rotates positions and normals; UVs and topology are kept.
pub fn rotate_mesh(mesh: &TriangleMesh, rot: &Rotation) -> TriangleMesh {
    let mut out = mesh.clone();
    for p in &mut out.positions {
        *p = rot.apply_point(p);
    }
    for n in &mut out.normals {
        *n = rot.apply_vector(n).normalize();
    }
    out
}

/// The yaw x pitch grid, yaw-major, in degrees.
pub fn rotation_grid(yaws_deg: &[f64], pitches_deg: &[f64]) -> Vec<Rotation> {
    let mut out = Vec::with_capacity(yaws_deg.len() * pitches_deg.len());
    for (i, &yaw) in yaws_deg.iter().enumerate() {
        for (j, &pitch) in pitches_deg.iter().enumerate() {
            out.push(Rotation::from_yaw_pitch_degrees(yaw, pitch).with_grid_index(i, j));
        }
    }
    out
}

/// Default candidates: yaw 0..315 in 45 degree steps, pitch in {-45, 0, 45}.
pub fn default_rotation_candidates() -> Vec<Rotation> {
    let yaws: Vec<f64> = (0..8).map(|k| 45.0 * k as f64).collect();
    rotation_grid(&yaws, &[-45.0, 0.0, 45.0])
}
