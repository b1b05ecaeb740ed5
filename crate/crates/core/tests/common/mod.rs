#![allow(dead_code)]

use nalgebra::{Point2, Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ttvbake_core::bake::TexelMap;
use ttvbake_core::camera::CameraPose;
use ttvbake_core::mesh::{rotate_mesh, Rotation, TriangleMesh};
use ttvbake_core::visibility::{intersect_triangle, Ray, VISIBILITY_EPSILON};
use ttvbake_core::TextureAtlas;

/// Ray/plane intersection followed by a same-side inside test, scanning
/// every triangle. Returns `(face, t, barycentrics)` of the nearest hit,
/// lowest face index on ties.
pub fn brute_nearest(mesh: &TriangleMesh, origin: Point3<f64>, dir: Vector3<f64>) -> Option<(u32, f64, [f64; 3])> {
    let mut best: Option<(u32, f64, [f64; 3])> = None;
    for f in 0..mesh.face_count() {
        let [a, b, c] = mesh.triangle(f);
        let n = (b - a).cross(&(c - a));
        let denom = n.dot(&dir);
        if denom.abs() < 1e-300 {
            continue;
        }
        let t = n.dot(&(a - origin)) / denom;
        if !(t > 0.0) {
            continue;
        }
        let p = origin + dir * t;
        let nn = n.norm_squared();
        let wa = (c - b).cross(&(p - b)).dot(&n) / nn;
        let wb = (a - c).cross(&(p - c)).dot(&n) / nn;
        let wc = (b - a).cross(&(p - a)).dot(&n) / nn;
        let tol = -1e-12;
        if wa < tol || wb < tol || wc < tol {
            continue;
        }
        let better = match best {
            None => true,
            Some((_, bt, _)) => t < bt,
        };
        if better {
            best = Some((f as u32, t, [wa, wb, wc]));
        }
    }
    best
}

/// Exhaustive visibility: every triangle tested, no acceleration.
pub fn brute_visible(mesh: &TriangleMesh, point: &Point3<f64>, face: u32, pose: &CameraPose) -> bool {
    if pose.project(point).pixel(pose.resolution()).is_none() {
        return false;
    }
    let origin = pose.position();
    let ray = Ray {
        origin,
        dir: point - origin,
    };
    let limit = 1.0 - VISIBILITY_EPSILON;
    !(0..mesh.face_count()).any(|f| {
        f as u32 != face
            && intersect_triangle(&ray, &mesh.triangle(f)).is_some_and(|(t, _, _)| t < limit)
    })
}

/// Exhaustive rotation score: every under-confident texel against every
/// pose with an all-triangle occlusion scan.
pub fn brute_score(
    mesh: &TriangleMesh,
    atlas: &TextureAtlas,
    rotation: &Rotation,
    poses: &[CameraPose],
    threshold: f64,
) -> usize {
    let texels = TexelMap::build(mesh, atlas.width(), atlas.height()).unwrap();
    let rotated = rotate_mesh(mesh, rotation);
    let mut count = 0;
    for &texel in texels.occupied() {
        if *atlas.confidence().data().get(texel as usize).unwrap() >= threshold {
            continue;
        }
        let (point, normal, face) = texels.surface(&rotated, texel as usize).unwrap();
        let seen = poses.iter().any(|pose| {
            let view = (pose.position() - point).normalize();
            let c = normal.dot(&view).clamp(0.0, 1.0);
            c.powi(4) > 0.05 && brute_visible(&rotated, &point, face, pose)
        });
        if seen {
            count += 1;
        }
    }
    count
}

/// UV of a surface point given barycentrics on a face.
pub fn uv_at(mesh: &TriangleMesh, face: u32, bary: [f64; 3]) -> Point2<f64> {
    let uv = mesh.triangle_uvs(face as usize).unwrap();
    Point2::from(uv[0].coords * bary[0] + uv[1].coords * bary[1] + uv[2].coords * bary[2])
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn unit_vector(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n: f64 = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}
