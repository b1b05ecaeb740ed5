//! Bounding volume hierarchy over mesh triangles for nearest-hit and
//! occlusion queries.

use nalgebra::{Point3, Vector3};

use crate::camera::CameraPose;
use crate::mesh::TriangleMesh;

const LEAF_SIZE: usize = 4;
/// Relative slack on the camera-to-texel distance when deciding occlusion.
pub const VISIBILITY_EPSILON: f64 = 1e-4;

const BOX_PADDING: f64 = 1e-9;

#[derive(Clone, Copy, Debug)]
pub struct Ray {
    pub origin: Point3<f64>,
    /// Need not be normalized; hit distances are in units of `dir`.
    pub dir: Vector3<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub face: u32,
    pub t: f64,
    /// Barycentric weights of the second and third corners.
    pub u: f64,
    pub v: f64,
}

#[derive(Clone, Copy, Debug)]
struct Aabb {
    min: Point3<f64>,
    max: Point3<f64>,
}

impl Aabb {
    fn empty() -> Self {
        Aabb {
            min: Point3::from([f64::INFINITY; 3]),
            max: Point3::from([f64::NEG_INFINITY; 3]),
        }
    }

    fn grow(&mut self, p: &Point3<f64>) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    /// Grows the box by a relative margin so the slab test cannot reject a
    /// hit that lands on a face of the box after rounding.
    fn padded(mut self) -> Self {
        let scale = self.min.coords.amax().max(self.max.coords.amax()).max(1.0);
        let pad = BOX_PADDING * scale;
        self.min -= Vector3::repeat(pad);
        self.max += Vector3::repeat(pad);
        self
    }

    fn merge(&mut self, o: &Aabb) {
        self.min = self.min.inf(&o.min);
        self.max = self.max.sup(&o.max);
    }

    /// Slab test; returns true when the ray overlaps the box within
    /// `[0, t_max]`.
    #[inline]
    fn hit(&self, origin: &Point3<f64>, inv_dir: &Vector3<f64>, t_max: f64) -> bool {
        let mut t0 = 0.0f64;
        let mut t1 = t_max;
        for a in 0..3 {
            let ta = (self.min[a] - origin[a]) * inv_dir[a];
            let tb = (self.max[a] - origin[a]) * inv_dir[a];
            let (lo, hi) = if ta <= tb { (ta, tb) } else { (tb, ta) };
            // NaN (0 * inf) leaves the interval unchanged
            if lo > t0 {
                t0 = lo;
            }
            if hi < t1 {
                t1 = hi;
            }
            if t0 > t1 {
                return false;
            }
        }
        true
    }
}

#[derive(Clone, Copy, Debug)]
struct Node {
    bounds: Aabb,
    /// Leaf: first entry in `order`; interior: index of the left child (the
    /// right child follows the whole left subtree, stored in `right`).
    start: u32,
    count: u32,
    right: u32,
}

/// Immutable after construction and safe to share across threads.
#[derive(Clone, Debug)]
pub struct VisibilityIndex {
    nodes: Vec<Node>,
    order: Vec<u32>,
    tris: Vec<[Point3<f64>; 3]>,
}

impl VisibilityIndex {
    pub fn build(mesh: &TriangleMesh) -> Self {
        let tris: Vec<[Point3<f64>; 3]> = (0..mesh.face_count()).map(|f| mesh.triangle(f)).collect();
        let centroids: Vec<Point3<f64>> = tris
            .iter()
            .map(|t| Point3::from((t[0].coords + t[1].coords + t[2].coords) / 3.0))
            .collect();
        let mut order: Vec<u32> = (0..tris.len() as u32).collect();
        let mut nodes = Vec::with_capacity(2 * tris.len() / LEAF_SIZE + 1);
        build_node(&tris, &centroids, &mut order, 0, tris.len(), &mut nodes);
        VisibilityIndex { nodes, order, tris }
    }

    pub fn triangle_count(&self) -> usize {
        self.tris.len()
    }

    /// Nearest intersection with `t` in `(0, t_max)`. Ties in `t` resolve to
    /// the lower face index.
    pub fn nearest_hit(&self, ray: &Ray, t_max: f64) -> Option<Hit> {
        let inv = ray.dir.map(|d| 1.0 / d);
        let mut best: Option<Hit> = None;
        let mut limit = t_max;
        let mut stack = [0u32; 64];
        let mut sp = 1usize;
        while sp > 0 {
            sp -= 1;
            let node = &self.nodes[stack[sp] as usize];
            if !node.bounds.hit(&ray.origin, &inv, limit) {
                continue;
            }
            if node.count > 0 {
                for k in node.start..node.start + node.count {
                    let face = self.order[k as usize];
                    if let Some((t, u, v)) = intersect_triangle(ray, &self.tris[face as usize]) {
                        let better = match best {
                            None => t < limit,
                            Some(b) => t < b.t || (t == b.t && face < b.face),
                        };
                        if better {
                            best = Some(Hit { face, t, u, v });
                            limit = t;
                        }
                    }
                }
            } else {
                let idx = stack[sp] + 1;
                stack[sp] = node.right;
                stack[sp + 1] = idx;
                sp += 2;
            }
        }
        best
    }

    /// True when some face other than `skip` is hit with `t` in `(0, t_max)`.
    pub fn occluded(&self, ray: &Ray, t_max: f64, skip: u32) -> bool {
        let inv = ray.dir.map(|d| 1.0 / d);
        let mut stack = [0u32; 64];
        let mut sp = 1usize;
        while sp > 0 {
            sp -= 1;
            let node = &self.nodes[stack[sp] as usize];
            if !node.bounds.hit(&ray.origin, &inv, t_max) {
                continue;
            }
            if node.count > 0 {
                for k in node.start..node.start + node.count {
                    let face = self.order[k as usize];
                    if face == skip {
                        continue;
                    }
                    if let Some((t, _, _)) = intersect_triangle(ray, &self.tris[face as usize]) {
                        if t < t_max {
                            return true;
                        }
                    }
                }
            } else {
                let idx = stack[sp] + 1;
                stack[sp] = node.right;
                stack[sp + 1] = idx;
                sp += 2;
            }
        }
        false
    }
}

fn build_node(
    tris: &[[Point3<f64>; 3]],
    centroids: &[Point3<f64>],
    order: &mut [u32],
    start: usize,
    end: usize,
    nodes: &mut Vec<Node>,
) -> u32 {
    let mut bounds = Aabb::empty();
    let mut cbounds = Aabb::empty();
    for &f in &order[start..end] {
        for p in &tris[f as usize] {
            bounds.grow(p);
        }
        cbounds.grow(&centroids[f as usize]);
    }
    let bounds = bounds.padded();
    let id = nodes.len() as u32;
    nodes.push(Node {
        bounds,
        start: start as u32,
        count: (end - start) as u32,
        right: 0,
    });
    if end - start <= LEAF_SIZE {
        return id;
    }
    let extent = cbounds.max - cbounds.min;
    let axis = if extent.x >= extent.y && extent.x >= extent.z {
        0
    } else if extent.y >= extent.z {
        1
    } else {
        2
    };
    if !(extent[axis] > 0.0) {
        // all centroids coincide; keep as one (oversized) leaf
        return id;
    }
    let mid = (start + end) / 2;
    order[start..end].select_nth_unstable_by(mid - start, |a, b| {
        centroids[*a as usize][axis]
            .total_cmp(&centroids[*b as usize][axis])
            .then(a.cmp(b))
    });
    let left = build_node(tris, centroids, order, start, mid, nodes);
    debug_assert_eq!(left, id + 1);
    let right = build_node(tris, centroids, order, mid, end, nodes);
    let mut merged = nodes[left as usize].bounds;
    merged.merge(&nodes[right as usize].bounds);
    nodes[id as usize] = Node {
        bounds: merged,
        start: 0,
        count: 0,
        right,
    };
    id
}

/// Two-sided Moller-Trumbore; returns `(t, u, v)` for `t > 0`.
#[inline]
pub fn intersect_triangle(ray: &Ray, tri: &[Point3<f64>; 3]) -> Option<(f64, f64, f64)> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let p = ray.dir.cross(&e2);
    let det = e1.dot(&p);
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    let inv_det = 1.0 / det;
    let s = ray.origin - tri[0];
    let u = s.dot(&p) * inv_det;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = ray.dir.dot(&q) * inv_det;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&q) * inv_det;
    (t > 0.0).then_some((t, u, v))
}

/// Whether the surface point `point` on `face` is seen by `pose`: it must
/// project inside the image in front of the camera, and no other face may
/// be hit along the camera ray before `(1 - VISIBILITY_EPSILON)` of the
/// distance to the point.
pub fn texel_visible(
    index: &VisibilityIndex,
    point: &Point3<f64>,
    face: u32,
    pose: &CameraPose,
) -> bool {
    if pose.project(point).pixel(pose.resolution()).is_none() {
        return false;
    }
    let origin = pose.position();
    let ray = Ray {
        origin,
        dir: point - origin,
    };
    // dir spans the full distance, so t = 1 is the texel itself
    !index.occluded(&ray, 1.0 - VISIBILITY_EPSILON, face)
}
