mod common;

use nalgebra::{Point3, Vector3};
use proptest::prelude::*;
use rand::Rng;
use ttvbake_core::camera::{orbit_position, orbit_trajectory, CameraPose, Resolution};
use ttvbake_core::fixtures;
use ttvbake_core::mesh::{normalize_mesh, rotate_mesh, Rotation, TriangleMesh};
use ttvbake_core::render::{render_color, render_gbuffer, render_turntable};
use ttvbake_core::visibility::{texel_visible, Ray, VisibilityIndex};

#[test]
fn bvh_matches_brute_force_on_dense_sphere() {
    let sphere = fixtures::uv_sphere(51, 100);
    assert_eq!(sphere.face_count(), 10_000);
    let index = VisibilityIndex::build(&sphere);
    let mut rng = common::rng(7);
    let mut hits = 0;
    for _ in 0..1000 {
        let origin = Point3::from(common::unit_vector(&mut rng) * rng.random_range(1.5..3.0));
        let target = Point3::from(common::unit_vector(&mut rng) * rng.random_range(0.0..0.9));
        let dir = target - origin;
        let fast = index.nearest_hit(&Ray { origin, dir }, f64::INFINITY);
        let slow = common::brute_nearest(&sphere, origin, dir);
        match (fast, slow) {
            (Some(h), Some((face, t, _))) => {
                assert!((h.t - t).abs() * dir.norm() < 1e-6, "distance {} vs {}", h.t, t);
                assert_eq!(h.face, face);
                hits += 1;
            }
            (None, None) => {}
            (a, b) => panic!("bvh {a:?} vs brute force {b:?}"),
        }
    }
    assert!(hits > 900);
}

#[test]
fn rays_from_outside_miss_when_pointing_away() {
    let sphere = fixtures::uv_sphere(12, 24);
    let index = VisibilityIndex::build(&sphere);
    let ray = Ray {
        origin: Point3::new(3.0, 0.0, 0.0),
        dir: Vector3::x(),
    };
    assert!(index.nearest_hit(&ray, f64::INFINITY).is_none());
}

#[test]
fn color_render_matches_ray_traced_reference() {
    let cube = normalize_mesh(&fixtures::cube_with_bounds(-1.0, 1.0)).unwrap();
    let atlas = fixtures::checkerboard_atlas(96, 64, 6, [0.9, 0.2, 0.1], [0.1, 0.3, 0.8]);
    let traj = orbit_trajectory(2.6, 1.1, 8, Resolution::square(96), 0.9).unwrap();
    let pose = traj.pose(0);
    let g = render_color(&cube, &atlas, pose, 0.5).unwrap();
    let color = g.color.as_ref().unwrap();
    let mut compared = 0;
    for y in 0..96 {
        for x in 0..96 {
            let (sx, sy) = (x as f64 + 0.5, y as f64 + 0.5);
            let dir = pose.ray_direction(sx, sy);
            let hit = common::brute_nearest(&cube, pose.position(), dir);
            let i = g.index(x, y);
            let Some((face, _, bary)) = hit else {
                assert!(!g.mask[i], "pixel {x},{y} covered without a hit");
                continue;
            };
            if bary.iter().any(|&b| b < 0.02) {
                continue;
            }
            assert!(g.mask[i], "pixel {x},{y} hit but not covered");
            let uv = common::uv_at(&cube, face, bary);
            let expected = atlas.sample_color(uv);
            for k in 0..3 {
                assert!(
                    (color[i][k] - expected[k]).abs() <= 1.0 / 255.0,
                    "pixel {x},{y}: {:?} vs {expected:?}",
                    color[i]
                );
            }
            compared += 1;
        }
    }
    assert!(compared > 1000);
}

#[test]
fn convex_mesh_normals_face_the_camera() {
    let smooth = fixtures::uv_sphere(12, 24);
    let corners: Vec<Point3<f64>> = (0..smooth.face_count()).flat_map(|f| smooth.triangle(f)).collect();
    let tris: Vec<[u32; 3]> = (0..smooth.face_count() as u32).map(|f| [3 * f, 3 * f + 1, 3 * f + 2]).collect();
    let faceted = TriangleMesh::from_indexed(corners, None, &tris).unwrap();
    let traj = orbit_trajectory(2.8, 0.8, 6, Resolution::square(64), 0.8).unwrap();
    let buffers = render_turntable(&faceted, None, &traj, 0.05).unwrap();
    for (g, pose) in buffers.iter().zip(traj.poses()) {
        g.check_invariants().unwrap();
        assert!(g.coverage_count() > 0);
        for y in 0..64 {
            for x in 0..64 {
                if let (Some(n), Some(p)) = (g.normal_at(x, y), g.position_at(x, y)) {
                    let to_cam = (pose.position() - p).normalize();
                    assert!(n.dot(&to_cam) >= -1e-3);
                }
            }
        }
    }
}

#[test]
fn rendering_is_deterministic() {
    let mug = fixtures::mug();
    let atlas = fixtures::checkerboard_atlas(64, 64, 8, [1.0; 3], [0.0; 3]);
    let traj = orbit_trajectory(2.8, 0.8, 4, Resolution::square(48), 0.8).unwrap();
    let a = render_turntable(&mug, Some(&atlas), &traj, 0.05).unwrap();
    let b = render_turntable(&mug, Some(&atlas), &traj, 0.05).unwrap();
    assert_eq!(a.len(), 4);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.depth, y.depth);
        assert_eq!(x.normal, y.normal);
        assert_eq!(x.position, y.position);
        assert_eq!(x.mask, y.mask);
        assert_eq!(x.color, y.color);
    }
}

#[test]
fn half_confident_atlas_inpaints_right_half() {
    let quad = fixtures::quad(1.0, 0.0);
    let atlas = fixtures::partial_atlas(32, 32, |uv| uv.x < 0.5, |_| [0.5; 3]);
    let pose = CameraPose::look_at(
        Point3::new(0.0, -2.0, 0.0),
        Point3::origin(),
        Vector3::z(),
        0.8,
        Resolution::square(64),
        0.1,
        10.0,
    )
    .unwrap();
    let g = render_color(&quad, &atlas, &pose, 0.5).unwrap();
    let inpaint = g.inpaint.as_ref().unwrap();
    let mut checked = 0;
    for y in 0..64 {
        for x in 0..64 {
            let i = g.index(x, y);
            let Some((face, _, bary)) = common::brute_nearest(&quad, pose.position(), pose.ray_direction(x as f64 + 0.5, y as f64 + 0.5)) else {
                assert!(!inpaint[i]);
                continue;
            };
            let u = common::uv_at(&quad, face, bary).x;
            // bilinear confidence is mixed within one texel of the boundary
            if (u - 0.5).abs() < 1.5 / 32.0 {
                continue;
            }
            assert_eq!(inpaint[i], u > 0.5, "pixel {x},{y} u={u}");
            checked += 1;
        }
    }
    assert!(checked > 500);
}

#[test]
fn cube_normalization_matches_hand_values() {
    let cube = fixtures::cube_with_bounds(0.0, 2.0);
    let n = normalize_mesh(&cube).unwrap();
    for p in n.positions() {
        assert!((p.coords.norm() - 1.0).abs() < 1e-12);
        for k in 0..3 {
            assert!((p[k].abs() - 1.0 / 3f64.sqrt()).abs() < 1e-12);
        }
    }
    let single = TriangleMesh::from_indexed(vec![Point3::new(1.0, 1.0, 1.0); 3], None, &[[0, 1, 2]]);
    assert!(single.is_err() || normalize_mesh(&single.unwrap()).is_err());
}

#[test]
fn rotation_examples() {
    let yaw90 = Rotation::from_yaw_pitch_degrees(90.0, 0.0);
    let p = yaw90.apply_point(&Point3::new(1.0, 0.0, 0.0));
    assert!((p - Point3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
    let yaw180 = Rotation::from_yaw_pitch_degrees(180.0, 0.0);
    let mug = fixtures::mug();
    let twice = rotate_mesh(&rotate_mesh(&mug, &yaw180), &yaw180);
    for (a, b) in twice.positions().iter().zip(mug.positions()) {
        assert!((a - b).norm() < 1e-9);
    }
    let same = rotate_mesh(&mug, &Rotation::identity());
    assert_eq!(same.positions(), mug.positions());
}

fn arb_rotation() -> impl Strategy<Value = Rotation> {
    (-180.0..180.0f64, -89.0..89.0f64, -180.0..180.0f64).prop_map(|(yaw, pitch, roll)| {
        let r = Rotation::from_yaw_pitch_degrees(yaw, pitch);
        r.compose(&Rotation::from_axis_angle(Vector3::x(), roll.to_radians()).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rotation_is_rigid_and_keeps_normals_unit(rot in arb_rotation()) {
        let mesh = fixtures::uv_sphere(6, 10);
        let r = rotate_mesh(&mesh, &rot);
        let (p, q) = (mesh.positions(), r.positions());
        for i in (0..p.len()).step_by(5) {
            for j in (0..p.len()).step_by(7) {
                prop_assert!(((p[i] - p[j]).norm() - (q[i] - q[j]).norm()).abs() < 1e-6);
            }
        }
        for n in r.normals() {
            prop_assert!((n.norm() - 1.0).abs() < 1e-6);
        }
        prop_assert_eq!(r.uvs(), mesh.uvs());
        let back = rotate_mesh(&r, &rot.inverse());
        for (a, b) in back.positions().iter().zip(p) {
            prop_assert!((a - b).norm() < 1e-6);
        }
    }

    #[test]
    fn normalization_is_idempotent(scale in 0.01..50.0f64, dx in -5.0..5.0f64, dy in -5.0..5.0f64, dz in -5.0..5.0f64) {
        let base = fixtures::mug();
        let moved = TriangleMesh::new(
            base.positions().iter().map(|p| Point3::from(p.coords * scale + Vector3::new(dx, dy, dz))).collect(),
            base.normals().to_vec(),
            base.uvs().to_vec(),
            base.faces().to_vec(),
        ).unwrap();
        let once = normalize_mesh(&moved).unwrap();
        let twice = normalize_mesh(&once).unwrap();
        let (lo, hi) = once.bounds();
        prop_assert!(((lo.coords + hi.coords) / 2.0).norm() < 1e-6);
        prop_assert!((once.bounding_radius() - 1.0).abs() < 1e-6);
        for (a, b) in once.positions().iter().zip(twice.positions()) {
            prop_assert!((a - b).norm() < 1e-6);
        }
    }

    #[test]
    fn orbit_poses_sit_on_the_circle_and_face_the_origin(
        r in 0.5..6.0f64, z in -3.0..3.0f64, frames in 2usize..40,
    ) {
        let traj = orbit_trajectory(r, z, frames, Resolution::square(16), 0.7).unwrap();
        for (t, pose) in traj.poses().iter().enumerate() {
            let p = pose.position();
            prop_assert!((p - orbit_position(r, z, frames, t as f64)).norm() < 1e-9);
            prop_assert!((p.x.hypot(p.y) - r).abs() < 1e-9);
            prop_assert!((p.z - z).abs() < 1e-12);
            let to_origin = (-p.coords).normalize();
            prop_assert!((pose.forward().dot(&to_origin) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn projection_round_trips(
        r in 1.5..5.0f64, z in -2.0..2.0f64, t in 0usize..12,
        px in -0.8..0.8f64, py in -0.8..0.8f64, pz in -0.8..0.8f64,
    ) {
        let traj = orbit_trajectory(r.max(z.abs() + 1.0), z, 12, Resolution::new(80, 60), 0.9).unwrap();
        let pose = traj.pose(t);
        let point = Point3::new(px, py, pz);
        let pr = pose.project(&point);
        prop_assert!(pr.in_front);
        let back = pose.unproject(pr.x, pr.y, pr.depth);
        prop_assert!((back - point).norm() < 1e-4);
    }
}

#[test]
fn gbuffer_of_mesh_outside_frustum_is_empty() {
    let quad = fixtures::quad(0.2, 0.0);
    let pose = CameraPose::look_at(
        Point3::new(0.0, 2.0, 0.0),
        Point3::new(0.0, 4.0, 0.0),
        Vector3::z(),
        0.8,
        Resolution::square(16),
        0.1,
        10.0,
    )
    .unwrap();
    let g = render_gbuffer(&quad, &pose);
    assert_eq!(g.coverage_count(), 0);
    g.check_invariants().unwrap();
}

#[test]
fn occlusion_matches_brute_force_on_seam_grazing_rays() {
    // yaw 0, pitch 45 puts mug rays exactly on triangle edges in the y = 0 seam plane
    let mug = fixtures::mug();
    let rotated = rotate_mesh(&mug, &Rotation::from_yaw_pitch_degrees(0.0, 45.0));
    let index = VisibilityIndex::build(&rotated);
    let texels = ttvbake_core::bake::TexelMap::build(&mug, 32, 32).unwrap();
    let traj = orbit_trajectory(2.8, 0.8, 6, Resolution::square(64), 0.8).unwrap();
    let mut checked = 0;
    for &texel in texels.occupied() {
        let (point, _, face) = texels.surface(&rotated, texel as usize).unwrap();
        for pose in traj.poses() {
            assert_eq!(
                texel_visible(&index, &point, face, pose),
                common::brute_visible(&rotated, &point, face, pose),
                "texel {texel}"
            );
            checked += 1;
        }
    }
    assert!(checked > 1000);
}
