//! Procedural meshes and textures with known UV layouts, used by the test
//! suites and by `ttvbake fixture`.

use std::f64::consts::{PI, TAU};

use nalgebra::{Point2, Point3, Vector3};

use crate::atlas::{texel_center_uv, TextureAtlas};
use crate::mesh::{normalize_mesh, Face, TriangleMesh};
use crate::raster::Raster;

/// Square of side `size` in the plane `y = offset_y`, facing -y. UVs map
/// x to u and z to v, so a camera on -y looking at +y with +z up sees the
/// texture upright.
pub fn quad(size: f64, offset_y: f64) -> TriangleMesh {
    let h = size / 2.0;
    let positions = vec![
        Point3::new(-h, offset_y, -h),
        Point3::new(h, offset_y, -h),
        Point3::new(h, offset_y, h),
        Point3::new(-h, offset_y, h),
    ];
    let uvs = vec![
        Point2::new(0.0, 0.0),
        Point2::new(1.0, 0.0),
        Point2::new(1.0, 1.0),
        Point2::new(0.0, 1.0),
    ];
    let faces = [[0, 1, 2], [0, 2, 3]]
        .iter()
        .map(|&t| Face {
            positions: t,
            normals: [0; 3],
            uvs: Some(t),
        })
        .collect();
    TriangleMesh::new(positions, vec![-Vector3::y()], uvs, faces).expect("valid quad")
}

/// Several quads combined into one mesh (indices offset in order).
pub fn merge(meshes: &[TriangleMesh]) -> TriangleMesh {
    let mut positions = Vec::new();
    let mut normals = Vec::new();
    let mut uvs = Vec::new();
    let mut faces = Vec::new();
    for m in meshes {
        let (po, no, to) = (positions.len() as u32, normals.len() as u32, uvs.len() as u32);
        positions.extend_from_slice(m.positions());
        normals.extend_from_slice(m.normals());
        uvs.extend_from_slice(m.uvs());
        faces.extend(m.faces().iter().map(|f| Face {
            positions: f.positions.map(|i| i + po),
            normals: f.normals.map(|i| i + no),
            uvs: f.uvs.map(|t| t.map(|i| i + to)),
        }));
    }
    TriangleMesh::new(positions, normals, uvs, faces).expect("merged meshes stay valid")
}

const CUBE_CORNERS: [[f64; 3]; 8] = [
    [0.0, 0.0, 0.0],
    [1.0, 0.0, 0.0],
    [1.0, 1.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 0.0, 1.0],
    [1.0, 0.0, 1.0],
    [1.0, 1.0, 1.0],
    [0.0, 1.0, 1.0],
];

/// Cube sides as corner quads (counter-clockwise seen from outside) with
/// their outward normals.
const CUBE_SIDES: [([u32; 4], [f64; 3]); 6] = [
    ([0, 3, 2, 1], [0.0, 0.0, -1.0]),
    ([4, 5, 6, 7], [0.0, 0.0, 1.0]),
    ([0, 1, 5, 4], [0.0, -1.0, 0.0]),
    ([2, 3, 7, 6], [0.0, 1.0, 0.0]),
    ([1, 2, 6, 5], [1.0, 0.0, 0.0]),
    ([3, 0, 4, 7], [-1.0, 0.0, 0.0]),
];

/// The 12 triangles of the unit cube, as indices into 8 corners.
pub fn cube_triangles() -> Vec<[u32; 3]> {
    CUBE_SIDES
        .iter()
        .flat_map(|(q, _)| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]])
        .collect()
}

/// Axis-aligned cube spanning `[lo, hi]^3` with flat side normals and one UV
/// chart per side laid out on a 3x2 grid with a small gutter.
pub fn cube_with_bounds(lo: f64, hi: f64) -> TriangleMesh {
    let positions: Vec<Point3<f64>> = CUBE_CORNERS
        .iter()
        .map(|c| Point3::new(lo + c[0] * (hi - lo), lo + c[1] * (hi - lo), lo + c[2] * (hi - lo)))
        .collect();
    let mut normals = Vec::new();
    let mut uvs = Vec::new();
    let mut faces = Vec::new();
    let gutter = 0.02;
    for (s, (q, n)) in CUBE_SIDES.iter().enumerate() {
        normals.push(Vector3::new(n[0], n[1], n[2]));
        let (cx, cy) = ((s % 3) as f64, (s / 3) as f64);
        let u0 = cx / 3.0 + gutter;
        let u1 = (cx + 1.0) / 3.0 - gutter;
        let v0 = cy / 2.0 + gutter;
        let v1 = (cy + 1.0) / 2.0 - gutter;
        let base = uvs.len() as u32;
        uvs.extend([
            Point2::new(u0, v0),
            Point2::new(u1, v0),
            Point2::new(u1, v1),
            Point2::new(u0, v1),
        ]);
        let ni = s as u32;
        faces.push(Face {
            positions: [q[0], q[1], q[2]],
            normals: [ni; 3],
            uvs: Some([base, base + 1, base + 2]),
        });
        faces.push(Face {
            positions: [q[0], q[2], q[3]],
            normals: [ni; 3],
            uvs: Some([base, base + 2, base + 3]),
        });
    }
    TriangleMesh::new(positions, normals, uvs, faces).expect("valid cube")
}

/// Unit sphere with a latitude/longitude UV layout: `u` follows longitude
/// from +x towards +y, `v` runs from the south pole (0) to the north pole
/// (1). Produces `2 * slices * (stacks - 1)` triangles.
pub fn uv_sphere(stacks: usize, slices: usize) -> TriangleMesh {
    assert!(stacks >= 2 && slices >= 3);
    let mut positions = Vec::new();
    let mut uvs = Vec::new();
    for i in 0..=stacks {
        let v = i as f64 / stacks as f64;
        let lat = -PI / 2.0 + PI * v;
        for j in 0..=slices {
            let u = j as f64 / slices as f64;
            let lon = TAU * u;
            positions.push(Point3::new(lat.cos() * lon.cos(), lat.cos() * lon.sin(), lat.sin()));
            uvs.push(Point2::new(u, v));
        }
    }
    let normals: Vec<Vector3<f64>> = positions.iter().map(|p| p.coords.normalize()).collect();
    let row = slices as u32 + 1;
    let mut faces = Vec::new();
    let mut push = |t: [u32; 3]| {
        faces.push(Face {
            positions: t,
            normals: t,
            uvs: Some(t),
        })
    };
    for i in 0..stacks as u32 {
        for j in 0..slices as u32 {
            let a = i * row + j;
            let b = a + 1;
            let c = a + row;
            let d = c + 1;
            if i == 0 {
                push([a, d, c]);
            } else if i == stacks as u32 - 1 {
                push([a, b, c]);
            } else {
                push([a, b, d]);
                push([a, d, c]);
            }
        }
    }
    TriangleMesh::new(positions, normals, uvs, faces).expect("valid sphere")
}

struct PatchBuilder {
    positions: Vec<Point3<f64>>,
    normals: Vec<Vector3<f64>>,
    uvs: Vec<Point2<f64>>,
    faces: Vec<Face>,
}

impl PatchBuilder {
    /// Adds an `nu x nv` parametric grid whose UVs fill `rect` =
    /// `[u0, v0, u1, v1]`; `f(s, t)` returns position and outward normal.
    fn patch(
        &mut self,
        rect: [f64; 4],
        nu: usize,
        nv: usize,
        f: impl Fn(f64, f64) -> (Point3<f64>, Vector3<f64>),
    ) {
        let base = self.positions.len() as u32;
        for j in 0..=nv {
            let t = j as f64 / nv as f64;
            for i in 0..=nu {
                let s = i as f64 / nu as f64;
                let (p, n) = f(s, t);
                self.positions.push(p);
                self.normals.push(n.normalize());
                self.uvs.push(Point2::new(
                    rect[0] + s * (rect[2] - rect[0]),
                    rect[1] + t * (rect[3] - rect[1]),
                ));
            }
        }
        let row = nu as u32 + 1;
        for j in 0..nv as u32 {
            for i in 0..nu as u32 {
                let a = base + j * row + i;
                let (b, c, d) = (a + 1, a + row, a + row + 1);
                for t in [[a, b, d], [a, d, c]] {
                    self.faces.push(Face {
                        positions: t,
                        normals: t,
                        uvs: Some(t),
                    });
                }
            }
        }
    }
}

/// A mug: open cylinder with wall thickness, a floor, and a looped handle on
/// the +x side whose inner face and the wall behind it are self-occluded
/// from most viewpoints. Normalized into the unit sphere.
pub fn mug() -> TriangleMesh {
    let (r_out, r_in) = (0.6, 0.52);
    let (z_bot, z_floor, z_top) = (-0.6, -0.5, 0.6);
    let mut b = PatchBuilder {
        positions: Vec::new(),
        normals: Vec::new(),
        uvs: Vec::new(),
        faces: Vec::new(),
    };
    let g = 0.01;
    let ring = |r: f64, a: f64, z: f64| Point3::new(r * a.cos(), r * a.sin(), z);
    let radial = |a: f64| Vector3::new(a.cos(), a.sin(), 0.0);

    b.patch([g, 0.5 + g, 0.5 - g, 1.0 - g], 48, 16, |s, t| {
        let a = TAU * s;
        (ring(r_out, a, z_bot + t * (z_top - z_bot)), radial(a))
    });
    b.patch([0.5 + g, 0.5 + g, 1.0 - g, 1.0 - g], 48, 16, |s, t| {
        let a = TAU * s;
        (ring(r_in, a, z_floor + t * (z_top - z_floor)), -radial(a))
    });
    b.patch([0.5 + g, 0.25 + g, 1.0 - g, 0.5 - g], 48, 2, |s, t| {
        let a = TAU * s;
        (ring(r_in + t * (r_out - r_in), a, z_top), Vector3::z())
    });
    b.patch([g, g, 0.5 - g, 0.25 - g], 48, 6, |s, t| {
        let a = TAU * s;
        (ring(t * r_out, a, z_bot), -Vector3::z())
    });
    b.patch([0.5 + g, g, 1.0 - g, 0.25 - g], 48, 6, |s, t| {
        let a = TAU * s;
        (ring(t * r_in, a, z_floor), Vector3::z())
    });
    // handle: tube of radius `minor` around a half-circle of radius `major`
    // in the xz-plane, centered on the outer wall
    let (major, minor) = (0.32, 0.07);
    let center = Point3::new(r_out - 0.02, 0.0, 0.0);
    b.patch([g, 0.25 + g, 0.5 - g, 0.5 - g], 32, 12, |s, t| {
        let arc = -PI / 2.0 + PI * s;
        let tube = TAU * t;
        let spine = center + Vector3::new(major * arc.cos(), 0.0, major * arc.sin());
        let outward = Vector3::new(arc.cos(), 0.0, arc.sin());
        let n = outward * tube.cos() + Vector3::y() * tube.sin();
        (spine + n * minor, n)
    });
    let mesh = TriangleMesh::new(b.positions, b.normals, b.uvs, b.faces).expect("valid mug");
    normalize_mesh(&mesh).expect("mug is not degenerate")
}

/// Checkerboard texture with `cells x cells` squares, fully confident.
pub fn checkerboard_atlas(
    width: usize,
    height: usize,
    cells: usize,
    a: [f64; 3],
    b: [f64; 3],
) -> TextureAtlas {
    let color = Raster::from_fn(width, height, |x, y| {
        let cx = x * cells / width;
        let cy = y * cells / height;
        if (cx + cy).is_multiple_of(2) {
            a
        } else {
            b
        }
    });
    TextureAtlas::from_texture(color)
}

/// Atlas with confidence 1 where `known(uv)` holds and 0 elsewhere; known
/// texels take `color(uv)`.
pub fn partial_atlas(
    width: usize,
    height: usize,
    known: impl Fn(Point2<f64>) -> bool,
    color: impl Fn(Point2<f64>) -> [f64; 3],
) -> TextureAtlas {
    let conf = Raster::from_fn(width, height, |x, y| {
        if known(texel_center_uv(x, y, width, height)) {
            1.0
        } else {
            0.0
        }
    });
    let col = Raster::from_fn(width, height, |x, y| color(texel_center_uv(x, y, width, height)));
    TextureAtlas::new(col, conf).expect("matching grids")
}
