//! Bounding volume hierarchy over mesh triangles for ray casts and
//! closest-point queries.

use crate::geometry::{Ray, Vec3};
use crate::mesh::{Aabb, TexturedMesh};

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone, Copy)]
struct Node {
    bounds: Aabb,
    /// Leaf: first index into `order`; inner: index of the left child.
    start: u32,
    /// Leaf triangle count, zero for inner nodes.
    count: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub triangle: u32,
    /// Barycentric weights of the second and third corners.
    pub u: f64,
    pub v: f64,
}

#[derive(Debug, Clone)]
pub struct Bvh {
    nodes: Vec<Node>,
    order: Vec<u32>,
    tris: Vec<[Vec3; 3]>,
}

impl Bvh {
    pub fn build(mesh: &TexturedMesh) -> Self {
        let tris: Vec<[Vec3; 3]> = (0..mesh.triangle_count()).map(|t| mesh.corners(t)).collect();
        let centroids: Vec<Vec3> = tris.iter().map(|c| (c[0] + c[1] + c[2]) / 3.0).collect();
        let mut order: Vec<u32> = (0..tris.len() as u32).collect();
        let mut nodes = Vec::with_capacity(2 * tris.len() / LEAF_SIZE + 1);
        if !tris.is_empty() {
            nodes.push(Node {
                bounds: Aabb::empty(),
                start: 0,
                count: 0,
            });
            build_node(&mut nodes, 0, &mut order, 0, &tris, &centroids);
        }
        Self { nodes, order, tris }
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn bounds(&self) -> Aabb {
        self.nodes.first().map(|n| n.bounds).unwrap_or_else(Aabb::empty)
    }

    /// Nearest hit with `t` in `(t_min, t_max)`.
    pub fn intersect(&self, ray: &Ray, t_min: f64, t_max: f64) -> Option<Hit> {
        self.traverse(ray, t_min, t_max, false)
    }

    /// True if any triangle is hit with `t` in `(t_min, t_max)`.
    pub fn occluded(&self, ray: &Ray, t_min: f64, t_max: f64) -> bool {
        self.traverse(ray, t_min, t_max, true).is_some()
    }

    fn traverse(&self, ray: &Ray, t_min: f64, mut t_max: f64, any: bool) -> Option<Hit> {
        if self.nodes.is_empty() {
            return None;
        }
        let inv = Vec3::new(1.0 / ray.direction.x, 1.0 / ray.direction.y, 1.0 / ray.direction.z);
        let mut best = None;
        let mut stack = [0u32; 64];
        let mut sp = 1;
        while sp > 0 {
            sp -= 1;
            let node = &self.nodes[stack[sp] as usize];
            if !slab_hit(&node.bounds, ray, &inv, t_min, t_max) {
                continue;
            }
            if node.count > 0 {
                for &tri in &self.order[node.start as usize..(node.start + node.count) as usize] {
                    if let Some((t, u, v)) = intersect_triangle(ray, &self.tris[tri as usize]) {
                        if t > t_min && t < t_max {
                            t_max = t;
                            best = Some(Hit { t, triangle: tri, u, v });
                            if any {
                                return best;
                            }
                        }
                    }
                }
            } else {
                let left = node.start;
                // Visit the nearer child first.
                let axis_dir = {
                    let l = &self.nodes[left as usize].bounds;
                    let r = &self.nodes[left as usize + 1].bounds;
                    (r.centre() - l.centre()).dot(&ray.direction) >= 0.0
                };
                if axis_dir {
                    stack[sp] = left + 1;
                    stack[sp + 1] = left;
                } else {
                    stack[sp] = left;
                    stack[sp + 1] = left + 1;
                }
                sp += 2;
            }
        }
        best
    }

    /// Closest surface point to `p`: `(distance, point, triangle)`.
    pub fn closest_point(&self, p: &Vec3) -> Option<(f64, Vec3, u32)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best_d2 = f64::INFINITY;
        let mut best = None;
        let mut stack = vec![0u32];
        while let Some(idx) = stack.pop() {
            let node = &self.nodes[idx as usize];
            if node.bounds.distance_squared(p) >= best_d2 {
                continue;
            }
            if node.count > 0 {
                for &tri in &self.order[node.start as usize..(node.start + node.count) as usize] {
                    let q = closest_on_triangle(p, &self.tris[tri as usize]);
                    let d2 = (q - p).norm_squared();
                    if d2 < best_d2 {
                        best_d2 = d2;
                        best = Some((q, tri));
                    }
                }
            } else {
                let (l, r) = (node.start, node.start + 1);
                let dl = self.nodes[l as usize].bounds.distance_squared(p);
                let dr = self.nodes[r as usize].bounds.distance_squared(p);
                if dl < dr {
                    stack.push(r);
                    stack.push(l);
                } else {
                    stack.push(l);
                    stack.push(r);
                }
            }
        }
        best.map(|(q, t)| (best_d2.sqrt(), q, t))
    }
}

fn build_node(
    nodes: &mut Vec<Node>,
    idx: usize,
    order: &mut [u32],
    offset: usize,
    tris: &[[Vec3; 3]],
    centroids: &[Vec3],
) {
    let mut bounds = Aabb::empty();
    let mut cbounds = Aabb::empty();
    for &t in order.iter() {
        for c in &tris[t as usize] {
            bounds.grow(c);
        }
        cbounds.grow(&centroids[t as usize]);
    }
    nodes[idx].bounds = bounds;
    if order.len() <= LEAF_SIZE {
        nodes[idx].start = offset as u32;
        nodes[idx].count = order.len() as u32;
        return;
    }
    let ext = cbounds.extent();
    let axis = if ext.x >= ext.y && ext.x >= ext.z {
        0
    } else if ext.y >= ext.z {
        1
    } else {
        2
    };
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        centroids[a as usize][axis]
            .total_cmp(&centroids[b as usize][axis])
            .then(a.cmp(&b))
    });
    let left = nodes.len();
    let blank = Node {
        bounds: Aabb::empty(),
        start: 0,
        count: 0,
    };
    nodes.push(blank);
    nodes.push(blank);
    nodes[idx].start = left as u32;
    nodes[idx].count = 0;
    let (lo, hi) = order.split_at_mut(mid);
    build_node(nodes, left, lo, offset, tris, centroids);
    build_node(nodes, left + 1, hi, offset + mid, tris, centroids);
}

fn slab_hit(b: &Aabb, ray: &Ray, inv: &Vec3, t_min: f64, t_max: f64) -> bool {
    let mut lo = t_min;
    let mut hi = t_max;
    for i in 0..3 {
        let t0 = (b.min[i] - ray.origin[i]) * inv[i];
        let t1 = (b.max[i] - ray.origin[i]) * inv[i];
        let (a, c) = if t0 <= t1 { (t0, t1) } else { (t1, t0) };
        // NaN (0 * inf) leaves the interval untouched.
        if a > lo {
            lo = a;
        }
        if c < hi {
            hi = c;
        }
        if lo > hi {
            return false;
        }
    }
    true
}

/// Möller–Trumbore; returns `(t, u, v)` for either facing.
pub fn intersect_triangle(ray: &Ray, tri: &[Vec3; 3]) -> Option<(f64, f64, f64)> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let p = ray.direction.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-300 {
        return None;
    }
    let inv_det = 1.0 / det;
    let s = ray.origin - tri[0];
    let u = s.dot(&p) * inv_det;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = ray.direction.dot(&q) * inv_det;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    Some((e2.dot(&q) * inv_det, u, v))
}

/// Closest point on a triangle (Ericson, Real-Time Collision Detection 5.1.5).
pub fn closest_on_triangle(p: &Vec3, tri: &[Vec3; 3]) -> Vec3 {
    let [a, b, c] = *tri;
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::shapes;
    use rand::{Rng, SeedableRng};

    #[test]
    fn ray_hits_match_brute_force() {
        let mesh = shapes::sphere(Vec3::new(1.0, 2.0, 3.0), 5.0, 20, 40)
            .merged(&shapes::cuboid(Vec3::new(8.0, -2.0, 0.0), Vec3::new(10.0, 2.0, 4.0)));
        let bvh = Bvh::build(&mesh);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for _ in 0..2000 {
            let origin = Vec3::new(rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0));
            let target = Vec3::new(rng.gen_range(-4.0..10.0), rng.gen_range(-3.0..6.0), rng.gen_range(-2.0..8.0));
            let ray = Ray::new(origin, target - origin);
            let brute = (0..mesh.triangle_count())
                .filter_map(|t| intersect_triangle(&ray, &mesh.corners(t)).map(|h| h.0))
                .filter(|&t| t > 0.0)
                .fold(f64::INFINITY, f64::min);
            let hit = bvh.intersect(&ray, 0.0, f64::INFINITY).map(|h| h.t).unwrap_or(f64::INFINITY);
            assert_eq!(hit, brute);
            assert_eq!(bvh.occluded(&ray, 0.0, f64::INFINITY), brute.is_finite());
        }
    }

    #[test]
    fn closest_point_matches_brute_force() {
        let mesh = shapes::ellipsoid(Vec3::zeros(), Vec3::new(3.0, 2.0, 1.0), 12, 24);
        let bvh = Bvh::build(&mesh);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..500 {
            let p = Vec3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
            let brute = (0..mesh.triangle_count())
                .map(|t| (closest_on_triangle(&p, &mesh.corners(t)) - p).norm())
                .fold(f64::INFINITY, f64::min);
            let (d, _, _) = bvh.closest_point(&p).unwrap();
            assert!((d - brute).abs() < 1e-12);
        }
    }
}
