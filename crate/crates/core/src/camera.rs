//! Turntable orbit cameras: look-at extrinsics, pinhole intrinsics and the
//! trajectory file shared between the conditioning renderer, external
//! generators and the baker.

use std::f64::consts::TAU;
use std::path::Path;

use nalgebra::{Matrix3, Matrix4, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Frame count of a standard turntable video.
pub const DEFAULT_FRAMES: usize = 61;
/// Margin applied to the bounding sphere when the field of view is derived
/// automatically.
pub const DEFAULT_FOV_MARGIN: f64 = 1.1;
/// Half-width of the default clip range, in units of the bounding radius.
const CLIP_SLACK: f64 = 1.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolution {
    pub width: u32,
    pub height: u32,
}

impl Resolution {
    pub fn new(width: u32, height: u32) -> Self {
        Resolution { width, height }
    }

    pub fn square(side: u32) -> Self {
        Resolution::new(side, side)
    }

    pub fn pixels(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

/// Result of projecting a world point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    /// Continuous pixel coordinates; pixel `(i, j)` spans `[i, i+1) x [j, j+1)`.
    pub x: f64,
    pub y: f64,
    /// Distance along the camera forward axis.
    pub depth: f64,
    /// False when the point is at or behind the camera plane.
    pub in_front: bool,
}

impl Projection {
    /// Pixel containing the projection, if it lies in front of the camera and
    /// inside the image.
    pub fn pixel(&self, res: Resolution) -> Option<(usize, usize)> {
        if !self.in_front || !(self.x >= 0.0 && self.y >= 0.0) {
            return None;
        }
        let (px, py) = (self.x.floor() as usize, self.y.floor() as usize);
        (px < res.width as usize && py < res.height as usize).then_some((px, py))
    }
}

/// Pinhole camera. Camera space is right-handed with x right, y down and z
/// forward, so depth equals the camera-space z coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraPose {
    position: Point3<f64>,
    /// World-to-camera rotation; rows are the right, down and forward axes.
    rotation: Matrix3<f64>,
    fov_y: f64,
    resolution: Resolution,
    near: f64,
    far: f64,
}

impl CameraPose {
    pub fn look_at(
        position: Point3<f64>,
        target: Point3<f64>,
        up: Vector3<f64>,
        fov_y: f64,
        resolution: Resolution,
        near: f64,
        far: f64,
    ) -> Result<Self> {
        check_intrinsics(fov_y, resolution, near, far)?;
        let forward = (target - position)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidCamera("camera sits on its look-at target".into()))?;
        let right = forward.cross(&up).try_normalize(1e-9).ok_or_else(|| {
            Error::InvalidCamera("view direction is parallel to the up vector".into())
        })?;
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        Ok(CameraPose {
            position,
            rotation,
            fov_y,
            resolution,
            near,
            far,
        })
    }

    pub fn position(&self) -> Point3<f64> {
        self.position
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn right(&self) -> Vector3<f64> {
        self.rotation.row(0).transpose()
    }

    pub fn down(&self) -> Vector3<f64> {
        self.rotation.row(1).transpose()
    }

    pub fn forward(&self) -> Vector3<f64> {
        self.rotation.row(2).transpose()
    }

    pub fn fov_y(&self) -> f64 {
        self.fov_y
    }

    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    pub fn near(&self) -> f64 {
        self.near
    }

    pub fn far(&self) -> f64 {
        self.far
    }

    /// Focal length in pixels (square pixels).
    pub fn focal_px(&self) -> f64 {
        0.5 * self.resolution.height as f64 / (0.5 * self.fov_y).tan()
    }

    pub fn principal_point(&self) -> (f64, f64) {
        (
            0.5 * self.resolution.width as f64,
            0.5 * self.resolution.height as f64,
        )
    }

    /// 4x4 world-to-camera transform.
    pub fn world_to_camera(&self) -> Matrix4<f64> {
        let t = -(self.rotation * self.position.coords);
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        m
    }

    #[inline]
    pub fn to_camera(&self, p: &Point3<f64>) -> Vector3<f64> {
        self.rotation * (p - self.position)
    }

    /// Projects a camera-space point onto the image plane.
    #[inline]
    pub fn project_camera(&self, c: &Vector3<f64>) -> Projection {
        let f = self.focal_px();
        let (cx, cy) = self.principal_point();
        let in_front = c.z > 0.0;
        let (x, y) = if in_front {
            (cx + f * c.x / c.z, cy + f * c.y / c.z)
        } else {
            (f64::NAN, f64::NAN)
        };
        Projection {
            x,
            y,
            depth: c.z,
            in_front,
        }
    }

    #[inline]
    pub fn project(&self, p: &Point3<f64>) -> Projection {
        self.project_camera(&self.to_camera(p))
    }

    /// Inverse of [`CameraPose::project`] for a known depth.
    pub fn unproject(&self, x: f64, y: f64, depth: f64) -> Point3<f64> {
        let f = self.focal_px();
        let (cx, cy) = self.principal_point();
        let c = Vector3::new((x - cx) / f * depth, (y - cy) / f * depth, depth);
        self.position + self.rotation.transpose() * c
    }

    /// World-space unit direction of the ray through continuous pixel
    /// coordinates `(x, y)`.
    pub fn ray_direction(&self, x: f64, y: f64) -> Vector3<f64> {
        let f = self.focal_px();
        let (cx, cy) = self.principal_point();
        (self.rotation.transpose() * Vector3::new((x - cx) / f, (y - cy) / f, 1.0)).normalize()
    }
}

fn check_intrinsics(fov_y: f64, res: Resolution, near: f64, far: f64) -> Result<()> {
    if !(fov_y > 0.0 && fov_y < std::f64::consts::PI) {
        return Err(Error::InvalidCamera(format!("fov_y {fov_y} outside (0, pi)")));
    }
    if res.width == 0 || res.height == 0 {
        return Err(Error::InvalidCamera("resolution has a zero dimension".into()));
    }
    if !(near > 0.0 && near < far && far.is_finite()) {
        return Err(Error::InvalidCamera(format!(
            "clip range must satisfy 0 < near < far (got {near}, {far})"
        )));
    }
    Ok(())
}

/// Orbit position at (possibly fractional) frame parameter `t`:
/// `(r cos(2 pi t / T), r sin(2 pi t / T), z)`.
pub fn orbit_position(radius: f64, height: f64, frames: usize, t: f64) -> Point3<f64> {
    let a = TAU * t / frames as f64;
    Point3::new(radius * a.cos(), radius * a.sin(), height)
}

/// Vertical field of view that fits a sphere of `bound_radius * margin` at
/// `camera_distance`: `2 atan(bound_radius * margin / camera_distance)`.
pub fn compute_fov(camera_distance: f64, bound_radius: f64, margin: f64) -> Result<f64> {
    let inflated = bound_radius * margin;
    if !(inflated > 0.0) {
        return Err(Error::InvalidCamera(format!(
            "bound radius times margin must be positive (got {inflated})"
        )));
    }
    if !(camera_distance > inflated) {
        return Err(Error::InvalidCamera(format!(
            "camera distance {camera_distance} is inside the inflated bounding sphere {inflated}"
        )));
    }
    Ok(2.0 * (inflated / camera_distance).atan())
}

/// Default clip planes for an object of `bound_radius` seen from `distance`.
pub fn default_clip(distance: f64, bound_radius: f64) -> (f64, f64) {
    let far = distance + CLIP_SLACK * bound_radius;
    let near = (distance - CLIP_SLACK * bound_radius).max(1e-3 * distance);
    (near, far)
}

/// How the field of view is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FovSetting {
    /// Fit the bounding sphere with the given margin.
    Auto { margin: f64 },
    /// Fixed vertical field of view in radians.
    Fixed { fov_y: f64 },
}

impl Default for FovSetting {
    fn default() -> Self {
        FovSetting::Auto {
            margin: DEFAULT_FOV_MARGIN,
        }
    }
}

/// Everything needed to regenerate an orbit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrbitParams {
    pub radius: f64,
    pub height: f64,
    pub frames: usize,
    pub resolution: Resolution,
    pub fov: FovSetting,
    /// Radius of the object's bounding sphere (1 for normalized meshes).
    pub bound_radius: f64,
}

impl Default for OrbitParams {
    fn default() -> Self {
        OrbitParams {
            radius: 2.8,
            height: 0.8,
            frames: DEFAULT_FRAMES,
            resolution: Resolution::square(512),
            fov: FovSetting::default(),
            bound_radius: 1.0,
        }
    }
}

impl OrbitParams {
    pub fn distance(&self) -> f64 {
        self.radius.hypot(self.height)
    }

    pub fn fov_y(&self) -> Result<f64> {
        match self.fov {
            FovSetting::Auto { margin } => compute_fov(self.distance(), self.bound_radius, margin),
            FovSetting::Fixed { fov_y } => Ok(fov_y),
        }
    }

    pub fn build(&self) -> Result<OrbitTrajectory> {
        let (near, far) = default_clip(self.distance(), self.bound_radius);
        orbit_trajectory_with_clip(
            self.radius,
            self.height,
            self.frames,
            self.resolution,
            self.fov_y()?,
            near,
            far,
        )
    }
}

/// `T` look-at poses sampled uniformly around a circle of radius `r` at
/// height `z`, all aimed at the origin with +z up.
#[derive(Clone, Debug, PartialEq)]
pub struct OrbitTrajectory {
    radius: f64,
    height: f64,
    poses: Vec<CameraPose>,
}

/// Orbit with clip planes derived for a unit bounding sphere.
pub fn orbit_trajectory(
    radius: f64,
    height: f64,
    frames: usize,
    resolution: Resolution,
    fov_y: f64,
) -> Result<OrbitTrajectory> {
    let (near, far) = default_clip(radius.hypot(height), 1.0);
    orbit_trajectory_with_clip(radius, height, frames, resolution, fov_y, near, far)
}

pub fn orbit_trajectory_with_clip(
    radius: f64,
    height: f64,
    frames: usize,
    resolution: Resolution,
    fov_y: f64,
    near: f64,
    far: f64,
) -> Result<OrbitTrajectory> {
    if !(radius > 0.0) || !radius.is_finite() || !height.is_finite() {
        return Err(Error::InvalidCamera(format!(
            "orbit radius must be positive and finite (got r={radius}, z={height}); \
             a camera on the z axis has no defined look-at frame"
        )));
    }
    if frames < 2 {
        return Err(Error::InvalidCamera(format!("need at least 2 frames, got {frames}")));
    }
    let poses = (0..frames)
        .map(|t| {
            CameraPose::look_at(
                orbit_position(radius, height, frames, t as f64),
                Point3::origin(),
                Vector3::z(),
                fov_y,
                resolution,
                near,
                far,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(OrbitTrajectory {
        radius,
        height,
        poses,
    })
}

impl OrbitTrajectory {
    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn height(&self) -> f64 {
        self.height
    }

    pub fn frames(&self) -> usize {
        self.poses.len()
    }

    pub fn poses(&self) -> &[CameraPose] {
        &self.poses
    }

    pub fn pose(&self, t: usize) -> &CameraPose {
        &self.poses[t]
    }

    pub fn resolution(&self) -> Resolution {
        self.poses[0].resolution
    }

    pub fn fov_y(&self) -> f64 {
        self.poses[0].fov_y
    }

    pub fn near(&self) -> f64 {
        self.poses[0].near
    }

    pub fn far(&self) -> f64 {
        self.poses[0].far
    }

    pub fn to_record(&self) -> TrajectoryFile {
        let res = self.resolution();
        TrajectoryFile {
            r: self.radius,
            z: self.height,
            frames: self.frames(),
            fov_y: self.fov_y(),
            width: res.width,
            height: res.height,
            near: self.near(),
            far: self.far(),
            poses: self
                .poses
                .iter()
                .enumerate()
                .map(|(t, p)| {
                    let m = p.world_to_camera();
                    PoseRecord {
                        t,
                        world_to_camera: std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)])),
                    }
                })
                .collect(),
        }
    }

    /// Rebuilds the orbit from the recorded parameters and checks that every
    /// recorded matrix agrees within 1e-9, so all consumers share bit-identical
    /// poses.
    pub fn from_record(rec: &TrajectoryFile) -> Result<Self> {
        let traj = orbit_trajectory_with_clip(
            rec.r,
            rec.z,
            rec.frames,
            Resolution::new(rec.width, rec.height),
            rec.fov_y,
            rec.near,
            rec.far,
        )?;
        if rec.poses.len() != rec.frames {
            return Err(Error::InvalidInput(format!(
                "trajectory lists {} poses for {} frames",
                rec.poses.len(),
                rec.frames
            )));
        }
        for (pose, stored) in traj.poses.iter().zip(&rec.poses) {
            let m = pose.world_to_camera();
            for r in 0..4 {
                for c in 0..4 {
                    if (m[(r, c)] - stored.world_to_camera[r][c]).abs() > 1e-9 {
                        return Err(Error::InvalidInput(format!(
                            "pose {} does not match the orbit parameters",
                            stored.t
                        )));
                    }
                }
            }
        }
        Ok(traj)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_record()).expect("trajectory serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let rec: TrajectoryFile =
            toml::from_str(text).map_err(|e| Error::InvalidInput(format!("trajectory file: {e}")))?;
        OrbitTrajectory::from_record(&rec)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str::<TrajectoryFile>(&text)
            .map_err(|e| Error::format(path, e.to_string()))
            .and_then(|rec| OrbitTrajectory::from_record(&rec))
    }
}

/// On-disk trajectory: orbit parameters plus one row-major world-to-camera
/// matrix per frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryFile {
    pub r: f64,
    pub z: f64,
    pub frames: usize,
    pub fov_y: f64,
    pub width: u32,
    pub height: u32,
    pub near: f64,
    pub far: f64,
    pub poses: Vec<PoseRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub t: usize,
    pub world_to_camera: [[f64; 4]; 4],
}
