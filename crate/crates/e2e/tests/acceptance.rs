//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails. Tolerances are pinned below.

use std::f64::consts::TAU;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ttvbake_cli::commands::{cmd_bake, cmd_condition, cmd_fixture, cmd_oracle, FixtureName};
use ttvbake_cli::config::PipelineConfig;
use ttvbake_core::bake::{angle_weight, depth_penalty, BakeAccumulator, BakeConfig, BakeContext, TexelMap};
use ttvbake_core::camera::{orbit_trajectory, CameraPose, OrbitParams, Resolution};
use ttvbake_core::fixtures;
use ttvbake_core::frames::{color_to_rgb8, read_atlas, rgb8_to_color};
use ttvbake_core::fusion::{
    coverage, fuse, iteration_dir, progressive_texture, select_base_rotation, BakePlan, Prompt,
};
use ttvbake_core::generator::OracleGenerator;
use ttvbake_core::mesh::{default_rotation_candidates, rotate_mesh, rotation_grid, Rotation, TriangleMesh};
use ttvbake_core::metrics::{psnr, ssim, PSNR_CAP_DB};
use ttvbake_core::render::{render_color, render_gbuffer};
use ttvbake_core::visibility::{intersect_triangle, Ray, VisibilityIndex, VISIBILITY_EPSILON};
use ttvbake_core::{Raster, TextureAtlas};

const POSE_POSITION_TOL: f64 = 1e-9;
const POSE_FORWARD_TOL: f64 = 1e-6;
const WEIGHT_TOL: f64 = 1e-9;
const HIT_DISTANCE_TOL: f64 = 1e-6;
const BAKE_PSNR_MIN_DB: f64 = 30.0;
const BAKE_COVERAGE_MIN: f64 = 0.95;
const FUSION_TOL: f64 = 1e-6;
const SSIM_CLOSED_FORM_TOL: f64 = 1e-9;
const PSNR_EXACT_TOL: f64 = 1e-9;
const PROGRESSIVE_COVERAGE_TARGET: f64 = 0.98;
const THRESHOLD: f64 = 0.05;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: impl Into<String>) -> Outcome {
    let d = detail.into();
    if ok {
        Ok(d)
    } else {
        Err(d)
    }
}

fn within(label: &str, elapsed: Duration, limit: Duration, detail: String) -> Outcome {
    check(
        elapsed <= limit,
        format!("{detail}; {label} {:.2}s of {:.0}s budget", elapsed.as_secs_f64(), limit.as_secs_f64()),
    )
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn unit_vector(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

fn trajectory_exactness() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1);
    let (mut worst_pos, mut worst_fwd) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let radius = r.random_range(1.5..6.0);
        let z = r.random_range(-1.5..1.5);
        let frames = r.random_range(2..=120);
        let traj = orbit_trajectory(radius, z, frames, Resolution::square(8), 0.8).map_err(|e| e.to_string())?;
        for (t, pose) in traj.poses().iter().enumerate() {
            let a = TAU * t as f64 / frames as f64;
            let expected = Point3::new(radius * a.cos(), radius * a.sin(), z);
            worst_pos = worst_pos.max((pose.position() - expected).norm());
            let to_origin = (-pose.position().coords).normalize();
            worst_fwd = worst_fwd.max((pose.forward() - to_origin).norm());
        }
    }
    let elapsed = start.elapsed();
    if worst_pos > POSE_POSITION_TOL || worst_fwd > POSE_FORWARD_TOL {
        return Err(format!("max position error {worst_pos:.2e}, max forward error {worst_fwd:.2e}"));
    }
    within(
        "runtime",
        elapsed,
        Duration::from_secs(1),
        format!("position error {worst_pos:.1e}, forward error {worst_fwd:.1e}"),
    )
}

fn weight_formulas() -> Outcome {
    let start = Instant::now();
    let mut r = rng(2);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let n = unit_vector(&mut r);
        let v = unit_vector(&mut r);
        worst = worst.max((angle_weight(&n, &v) - n.dot(&v).clamp(0.0, 1.0).powi(4)).abs());
    }
    if worst > WEIGHT_TOL {
        return Err(format!("angle weight error {worst:.2e}"));
    }
    let constant = Raster::new(12, 10, 1.7);
    let affine = Raster::from_fn(12, 10, |x, y| 0.25 * x as f64 - 0.5 * y as f64 + 3.0);
    for y in 1..9 {
        for x in 1..11 {
            if depth_penalty(&constant, x, y, 8.0) != 0.0 || depth_penalty(&affine, x, y, 8.0) != 0.0 {
                return Err(format!("nonzero penalty on a flat field at ({x}, {y})"));
            }
        }
    }
    let step = Raster::from_fn(8, 5, |x, _| if x < 4 { 1.0 } else { 2.0 });
    if depth_penalty(&step, 3, 2, 1.0) != 1.0 {
        return Err("unit step penalty is not 1".into());
    }
    let sphere = fixtures::uv_sphere(16, 32);
    let atlas = fixtures::checkerboard_atlas(64, 64, 8, [0.9; 3], [0.1; 3]);
    let traj = orbit_trajectory(2.8, 0.8, 6, Resolution::square(64), 0.8).map_err(|e| e.to_string())?;
    let ctx = BakeContext::new(&sphere, 64, 64).map_err(|e| e.to_string())?;
    let mut samples = 0;
    for pose in traj.poses() {
        let g = render_color(&sphere, &atlas, pose, 0.0).map_err(|e| e.to_string())?;
        let color = rgb8_to_color(&color_to_rgb8(&g.color_image()));
        for s in ctx.frame_samples(Some(&color), &g, pose, 8.0).map_err(|e| e.to_string())? {
            let w = s.weights;
            if w.similarity != w.angle * (1.0 - w.depth) {
                return Err(format!("S identity broken: {w:?}"));
            }
            samples += 1;
        }
    }
    within(
        "runtime",
        start.elapsed(),
        Duration::from_secs(1),
        format!("angle error {worst:.1e}, S identity on {samples} samples"),
    )
}

fn brute_nearest(mesh: &TriangleMesh, origin: Point3<f64>, dir: Vector3<f64>) -> Option<(u32, f64)> {
    let mut best: Option<(u32, f64)> = None;
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
        let inside = [(a, b), (b, c), (c, a)]
            .iter()
            .all(|(u, v)| (v - u).cross(&(p - u)).dot(&n) / n.norm_squared() >= -1e-12);
        if inside && best.is_none_or(|(_, bt)| t < bt) {
            best = Some((f as u32, t));
        }
    }
    best
}

fn visibility_oracle() -> Outcome {
    let start = Instant::now();
    let sphere = fixtures::uv_sphere(51, 100);
    if sphere.face_count() != 10_000 {
        return Err(format!("sphere has {} faces", sphere.face_count()));
    }
    let index = VisibilityIndex::build(&sphere);
    let mut r = rng(3);
    let mut hits = 0;
    for i in 0..1000 {
        let origin = Point3::from(unit_vector(&mut r) * r.random_range(1.5..3.0));
        let target = Point3::from(unit_vector(&mut r) * r.random_range(0.0..0.9));
        let dir = target - origin;
        match (index.nearest_hit(&Ray { origin, dir }, f64::INFINITY), brute_nearest(&sphere, origin, dir)) {
            (Some(h), Some((face, t))) => {
                if h.face != face || (h.t - t).abs() * dir.norm() > HIT_DISTANCE_TOL {
                    return Err(format!("ray {i}: bvh face {} t {} vs brute force face {face} t {t}", h.face, h.t));
                }
                hits += 1;
            }
            (None, None) => {}
            (a, b) => return Err(format!("ray {i}: bvh {a:?} vs brute force {b:?}")),
        }
    }
    within("runtime", start.elapsed(), Duration::from_secs(10), format!("{hits} hits agree"))
}

struct BakeFidelity {
    psnr: f64,
    coverage: f64,
    elapsed: Duration,
}

fn sphere_closed_loop() -> Result<BakeFidelity, String> {
    let start = Instant::now();
    let e = |e: ttvbake_core::Error| e.to_string();
    let sphere = fixtures::uv_sphere(64, 128);
    let truth = fixtures::checkerboard_atlas(1024, 1024, 16, [0.9, 0.55, 0.1], [0.1, 0.3, 0.75]);
    let traj = OrbitParams {
        frames: 61,
        resolution: Resolution::square(512),
        ..OrbitParams::default()
    }
    .build()
    .map_err(e)?;
    let ctx = BakeContext::new(&sphere, 1024, 1024).map_err(e)?;
    let mut acc = BakeAccumulator::new(1024, 1024);
    let mut oracle = Vec::with_capacity(traj.frames());
    for pose in traj.poses() {
        let rgb = color_to_rgb8(&render_color(&sphere, &truth, pose, 0.0).map_err(e)?.color_image());
        let color = rgb8_to_color(&rgb);
        let g = render_gbuffer(&sphere, pose);
        acc.add(&ctx.bake_frame(&color, &g, pose, 8.0).map_err(e)?).map_err(e)?;
        oracle.push(rgb);
    }
    let baked = acc.finish();
    let cov = coverage(&baked, &ctx.texels().occupancy(), THRESHOLD).map_err(e)?;
    let mut total = 0.0;
    for (pose, rgb) in traj.poses().iter().zip(&oracle) {
        let g = render_color(&sphere, &baked, pose, THRESHOLD).map_err(e)?;
        let mask = Raster::from_vec(g.width(), g.height(), g.mask.clone()).map_err(e)?;
        total += psnr(&g.color_image(), &rgb8_to_color(rgb), Some(&mask)).map_err(e)?;
    }
    Ok(BakeFidelity {
        psnr: total / traj.frames() as f64,
        coverage: cov,
        elapsed: start.elapsed(),
    })
}

fn bake_fidelity(run: &Result<BakeFidelity, String>) -> Outcome {
    let f = run.as_ref().map_err(|e| e.clone())?;
    let detail = format!(
        "masked PSNR {:.2} dB (min {BAKE_PSNR_MIN_DB}), coverage {:.4} (min {BAKE_COVERAGE_MIN})",
        f.psnr, f.coverage
    );
    let timed = within("runtime", f.elapsed, Duration::from_secs(120), detail);
    if f.psnr < BAKE_PSNR_MIN_DB || f.coverage < BAKE_COVERAGE_MIN {
        return Err(timed.unwrap_or_else(|d| d));
    }
    timed
}

fn atlas_close(a: &TextureAtlas, b: &TextureAtlas) -> bool {
    let colors = a.color().data().iter().zip(b.color().data()).all(|(x, y)| (0..3).all(|k| (x[k] - y[k]).abs() <= FUSION_TOL));
    let conf = a
        .confidence()
        .data()
        .iter()
        .zip(b.confidence().data())
        .all(|(x, y)| (x - y).abs() <= FUSION_TOL * x.abs().max(1.0));
    colors && conf
}

fn random_atlas(r: &mut ChaCha8Rng) -> TextureAtlas {
    let color = Raster::from_fn(7, 5, |_, _| [r.random(), r.random(), r.random()]);
    let conf = Raster::from_fn(7, 5, |_, _| if r.random_bool(0.2) { 0.0 } else { r.random_range(0.0..10.0) });
    TextureAtlas::new(color, conf).unwrap()
}

fn fusion_algebra() -> Outcome {
    let mut r = rng(5);
    let e = |e: ttvbake_core::Error| e.to_string();
    for case in 0..500 {
        let (a, b, c) = (random_atlas(&mut r), random_atlas(&mut r), random_atlas(&mut r));
        if !atlas_close(&fuse(&a, &b).map_err(e)?, &fuse(&b, &a).map_err(e)?) {
            return Err(format!("case {case}: not commutative"));
        }
        let left = fuse(&fuse(&a, &b).map_err(e)?, &c).map_err(e)?;
        let right = fuse(&a, &fuse(&b, &c).map_err(e)?).map_err(e)?;
        if !atlas_close(&left, &right) {
            return Err(format!("case {case}: not associative"));
        }
        if fuse(&a, &TextureAtlas::empty(7, 5)).map_err(e)? != a {
            return Err(format!("case {case}: empty atlas is not the identity"));
        }
        let twice = fuse(&a, &a).map_err(e)?;
        let doubled = a.confidence().data().iter().zip(twice.confidence().data()).all(|(x, y)| *y == 2.0 * x);
        if twice.color() != a.color() || !doubled {
            return Err(format!("case {case}: self fusion changed color or did not double confidence"));
        }
    }
    Ok("500 random atlas triples".into())
}

fn brute_visible(mesh: &TriangleMesh, point: &Point3<f64>, face: u32, pose: &CameraPose) -> bool {
    if pose.project(point).pixel(pose.resolution()).is_none() {
        return false;
    }
    let origin = pose.position();
    let ray = Ray {
        origin,
        dir: point - origin,
    };
    !(0..mesh.face_count()).any(|f| {
        f as u32 != face && intersect_triangle(&ray, &mesh.triangle(f)).is_some_and(|(t, _, _)| t < 1.0 - VISIBILITY_EPSILON)
    })
}

fn brute_score(mesh: &TriangleMesh, atlas: &TextureAtlas, rotation: &Rotation, poses: &[CameraPose]) -> usize {
    let texels = TexelMap::build(mesh, atlas.width(), atlas.height()).unwrap();
    let rotated = rotate_mesh(mesh, rotation);
    texels
        .occupied()
        .iter()
        .filter(|&&texel| atlas.confidence().data()[texel as usize] < THRESHOLD)
        .filter(|&&texel| {
            let (point, normal, face) = texels.surface(&rotated, texel as usize).unwrap();
            poses.iter().any(|pose| {
                let c = normal.dot(&(pose.position() - point).normalize()).clamp(0.0, 1.0);
                c.powi(4) > 0.05 && brute_visible(&rotated, &point, face, pose)
            })
        })
        .count()
}

fn inpainting_progress() -> Outcome {
    let e = |e: ttvbake_core::Error| e.to_string();
    let mug = fixtures::mug();
    let truth = fixtures::checkerboard_atlas(64, 64, 8, [0.9, 0.5, 0.1], [0.1, 0.3, 0.7]);
    let mut gen = OracleGenerator::new(mug.clone(), truth).map_err(e)?;
    let plan = BakePlan {
        orbit: OrbitParams {
            frames: 12,
            resolution: Resolution::square(96),
            ..OrbitParams::default()
        },
        candidates: default_rotation_candidates(),
        max_iterations: 2,
        coverage_target: 1.0,
        ..BakePlan::default()
    };
    if plan.candidates.len() != 24 {
        return Err(format!("{} default candidates", plan.candidates.len()));
    }
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = progressive_texture(&mug, &mut gen, &plan, &BakeConfig::square(64), &Prompt::default(), dir.path())
        .map_err(e)?;
    let h = out.report.history();
    if h.len() != 2 || h[1] <= h[0] {
        return Err(format!("coverage history {h:?}"));
    }
    let first = read_atlas(&iteration_dir(dir.path(), 1).join("master")).map_err(e)?;
    let second = read_atlas(&iteration_dir(dir.path(), 2).join("master")).map_err(e)?;
    let drops = first.confidence().data().iter().zip(second.confidence().data()).filter(|(a, b)| b < a).count();
    if drops > 0 {
        return Err(format!("confidence dropped at {drops} texels"));
    }
    let small = TextureAtlas::new(
        Raster::from_fn(32, 32, |x, y| *first.color().get(2 * x, 2 * y)),
        Raster::from_fn(32, 32, |x, y| *first.confidence().get(2 * x, 2 * y)),
    )
    .map_err(e)?;
    let poses = orbit_trajectory(2.8, 0.8, 6, Resolution::square(64), 0.8).map_err(e)?;
    let choice = select_base_rotation(&mug, &small, &plan.candidates, poses.poses(), THRESHOLD).map_err(e)?;
    let brute: Vec<usize> = plan.candidates.iter().map(|r| brute_score(&mug, &small, r, poses.poses())).collect();
    check(
        choice.scores == brute,
        format!(
            "coverage {:.4} -> {:.4}, no confidence drops, selection scores {:?} vs brute force {:?}",
            h[0], h[1], choice.scores, brute
        ),
    )
}

fn hemisphere_argmax() -> Outcome {
    let start = Instant::now();
    let e = |e: ttvbake_core::Error| e.to_string();
    let sphere = fixtures::uv_sphere(24, 48);
    let atlas = fixtures::partial_atlas(64, 64, |uv| (TAU * uv.x).cos() > 0.0, |_| [0.8, 0.3, 0.2]);
    let candidates = rotation_grid(&[0.0, 90.0, 180.0, 270.0], &[0.0]);
    let traj = orbit_trajectory(2.8, 0.8, 4, Resolution::square(128), 0.8).map_err(e)?;
    let front = &traj.poses()[..1];
    let choice = select_base_rotation(&sphere, &atlas, &candidates, front, THRESHOLD).map_err(e)?;
    let brute: Vec<usize> = candidates.iter().map(|r| brute_score(&sphere, &atlas, r, front)).collect();
    let detail = format!("selected index {} (yaw {}), scores {:?}, brute force {:?}", choice.index, choice.index * 90, choice.scores, brute);
    if choice.index != 2 || choice.scores != brute {
        return Err(detail);
    }
    within("runtime", start.elapsed(), Duration::from_secs(30), detail)
}

fn metric_correctness() -> Outcome {
    let e = |e: ttvbake_core::Error| e.to_string();
    let uniform = |v: f64| Raster::new(32, 32, [v; 3]);
    let p = psnr(&uniform(0.1), &uniform(0.0), None).map_err(e)?;
    if (p - 20.0).abs() > PSNR_EXACT_TOL {
        return Err(format!("PSNR {p}"));
    }
    let mut r = rng(8);
    let x = Raster::from_fn(40, 32, |_, _| [r.random(), r.random(), r.random()]);
    let s = ssim(&x, &x).map_err(e)?;
    if s != 1.0 {
        return Err(format!("SSIM(X, X) = {s}"));
    }
    let mut worst = 0.0f64;
    for &(a, b) in &[(0.2, 0.2), (0.1, 0.9), (0.0, 1.0), (0.5, 0.25), (0.73, 0.31)] {
        let expected = (2.0 * a * b + 1e-4) / (a * a + b * b + 1e-4);
        worst = worst.max((ssim(&uniform(a), &uniform(b)).map_err(e)? - expected).abs());
    }
    check(
        worst <= SSIM_CLOSED_FORM_TOL && psnr(&x, &x, None).map_err(e)? == PSNR_CAP_DB,
        format!("PSNR {p:.12} dB, SSIM(X, X) = 1, constant-pair error {worst:.1e}"),
    )
}

fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let fx = tmp.path().join("fixture");
    cmd_fixture(&fx, FixtureName::Mug, 256).map_err(|e| format!("{e:#}"))?;
    let mut runs = Vec::new();
    for run in 0..2 {
        let cond = tmp.path().join(format!("cond{run}"));
        let atlas = tmp.path().join(format!("atlas{run}"));
        let mut cfg = PipelineConfig::default();
        cfg.mesh = Some(fx.join("mesh.obj"));
        cfg.output = Some(cond.clone());
        cfg.trajectory.frames = 16;
        cfg.trajectory.width = 128;
        cfg.trajectory.height = 128;
        cfg.generator.texture = Some(fx.join("texture.png"));
        cfg.bake.atlas_width = 256;
        cfg.bake.atlas_height = 256;
        cmd_condition(&cfg).map_err(|e| format!("{e:#}"))?;
        cmd_oracle(&cfg, &cond).map_err(|e| format!("{e:#}"))?;
        cfg.output = Some(atlas.clone());
        cmd_bake(&cfg, &cond).map_err(|e| format!("{e:#}"))?;
        runs.push((snapshot(&cond), snapshot(&atlas)));
    }
    let files = runs[0].0.len() + runs[0].1.len();
    check(runs[0] == runs[1] && files > 0, format!("{files} artifacts compared byte for byte"))
}

fn progressive_sphere() -> Outcome {
    let e = |e: ttvbake_core::Error| e.to_string();
    let sphere = fixtures::uv_sphere(64, 128);
    let truth = fixtures::checkerboard_atlas(256, 256, 8, [0.9, 0.5, 0.1], [0.1, 0.3, 0.7]);
    let mut gen = OracleGenerator::new(sphere.clone(), truth).map_err(e)?;
    let plan = BakePlan {
        orbit: OrbitParams {
            frames: 61,
            resolution: Resolution::square(256),
            ..OrbitParams::default()
        },
        max_iterations: 2,
        coverage_target: PROGRESSIVE_COVERAGE_TARGET,
        ..BakePlan::default()
    };
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = progressive_texture(&sphere, &mut gen, &plan, &BakeConfig::square(256), &Prompt::default(), dir.path())
        .map_err(e)?;
    let h = out.report.history();
    check(
        out.report.final_coverage >= PROGRESSIVE_COVERAGE_TARGET,
        format!("coverage history {h:?}, target {PROGRESSIVE_COVERAGE_TARGET} within 2 iterations"),
    )
}

fn report(id: &str, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let secs = start.elapsed().as_secs_f64();
    match &outcome {
        Ok(d) => println!("PASS  {id:<3} {name} ({secs:.2}s): {d}"),
        Err(d) => println!("FAIL  {id:<3} {name} ({secs:.2}s): {d}"),
    }
    outcome.is_ok()
}

fn main() {
    let mut results = vec![
        report("1", "trajectory exactness", trajectory_exactness),
        report("2", "weight formulas", weight_formulas),
        report("3", "visibility oracle equivalence", visibility_oracle),
    ];
    let mut closed_loop = Err("not run".to_string());
    results.push(report("4", "closed-loop bake fidelity", || {
        closed_loop = sphere_closed_loop();
        bake_fidelity(&closed_loop)
    }));
    results.push(report("5", "fusion algebra", fusion_algebra));
    results.push(report("6", "inpainting progress", inpainting_progress));
    results.push(report("7", "hemisphere argmax", hemisphere_argmax));
    results.push(report("8", "metric correctness", metric_correctness));
    results.push(report("9", "determinism", determinism));
    results.push(report("S1", "bake command coverage after one pass", || {
        let f = closed_loop.as_ref().map_err(|e| e.clone())?;
        check(f.coverage >= BAKE_COVERAGE_MIN, format!("coverage {:.4} (min {BAKE_COVERAGE_MIN})", f.coverage))
    }));
    results.push(report("S2", "progressive sphere reaches target coverage", progressive_sphere));
    let failed = results.iter().filter(|ok| !**ok).count();
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
