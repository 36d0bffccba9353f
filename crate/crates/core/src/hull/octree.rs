use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::HullError;
use crate::geometry::{CameraIntrinsics, Pose, Vec3};
use crate::imaging::BinaryImage;

pub const CACHE_MAGIC: &[u8; 8] = b"SCRBHULL";
pub const CACHE_VERSION: u32 = 1;

/// Subtrees above this depth are carved in parallel.
const PARALLEL_DEPTH: u8 = 4;

/// Axis-aligned cube.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CubeBounds {
    pub min: Vec3,
    pub side: f64,
}

impl CubeBounds {
    pub fn new(min: Vec3, side: f64) -> Result<Self, HullError> {
        if !(side > 0.0 && side.is_finite()) || !min.iter().all(|v| v.is_finite()) {
            return Err(HullError::InvalidBounds(format!("min {min:?}, side {side}")));
        }
        Ok(Self { min, side })
    }

    pub fn centred(centre: Vec3, side: f64) -> Result<Self, HullError> {
        Self::new(centre - Vec3::repeat(side / 2.0), side)
    }

    /// Cube of side twice the mat diameter centred on the mat origin.
    pub fn around_mat(mat_diameter: f64) -> Result<Self, HullError> {
        Self::centred(Vec3::zeros(), 2.0 * mat_diameter)
    }

    pub fn cell_size(&self, depth: u8) -> f64 {
        self.side / (1u64 << depth) as f64
    }

    pub fn cell_min(&self, depth: u8, c: [u32; 3]) -> Vec3 {
        let s = self.cell_size(depth);
        Vec3::new(
            self.min.x + c[0] as f64 * s,
            self.min.y + c[1] as f64 * s,
            self.min.z + c[2] as f64 * s,
        )
    }

    pub fn cell_centre(&self, depth: u8, c: [u32; 3]) -> Vec3 {
        let s = self.cell_size(depth);
        Vec3::new(
            self.min.x + (c[0] as f64 + 0.5) * s,
            self.min.y + (c[1] as f64 + 0.5) * s,
            self.min.z + (c[2] as f64 + 0.5) * s,
        )
    }

    fn cell_corners(&self, depth: u8, c: [u32; 3]) -> [Vec3; 8] {
        let lo = self.cell_min(depth, c);
        let hi = self.cell_min(depth, [c[0] + 1, c[1] + 1, c[2] + 1]);
        std::array::from_fn(|i| {
            Vec3::new(
                if i & 1 == 0 { lo.x } else { hi.x },
                if i & 2 == 0 { lo.y } else { hi.y },
                if i & 4 == 0 { lo.z } else { hi.z },
            )
        })
    }
}

/// How many of the views that see a point must place it inside their
/// silhouette.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Consensus {
    /// At most this many counted views may disagree.
    AllBut(u32),
    /// At least this many views must agree.
    AtLeast(u32),
}

impl Consensus {
    pub const ALL: Consensus = Consensus::AllBut(0);

    fn point_inside(&self, hits: u32, counted: u32) -> bool {
        match *self {
            Consensus::AllBut(m) => hits >= 1 && counted - hits <= m,
            Consensus::AtLeast(k) => hits >= k.max(1),
        }
    }

    /// Decision valid for every point of a node given `h` views certainly
    /// hit, `m` certainly missed and `u` undecided.
    fn node_state(&self, h: u32, m: u32, u: u32) -> Option<Occupancy> {
        match *self {
            Consensus::AllBut(tol) => {
                if m > tol || h + u == 0 {
                    Some(Occupancy::Outside)
                } else if h >= 1 && m + u <= tol {
                    Some(Occupancy::Inside)
                } else {
                    None
                }
            }
            Consensus::AtLeast(k) => {
                let k = k.max(1);
                if h >= k {
                    Some(Occupancy::Inside)
                } else if h + u < k {
                    Some(Occupancy::Outside)
                } else {
                    None
                }
            }
        }
    }

    fn early_outside(&self, m: u32) -> bool {
        matches!(*self, Consensus::AllBut(tol) if m > tol)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Occupancy {
    Inside,
    Outside,
}

/// Binary mask stored as a summed-area table over the bounding box of its
/// set pixels.
#[derive(Debug, Clone)]
struct MaskIndex {
    width: u32,
    height: u32,
    x0: u32,
    y0: u32,
    cw: u32,
    ch: u32,
    sat: Vec<u32>,
}

impl MaskIndex {
    fn new(mask: &BinaryImage) -> Self {
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0u32, 0u32);
        for y in 0..mask.height {
            for x in 0..mask.width {
                if mask.get(x, y) {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                }
            }
        }
        if x0 == u32::MAX {
            return Self {
                width: mask.width,
                height: mask.height,
                x0: 0,
                y0: 0,
                cw: 0,
                ch: 0,
                sat: vec![0],
            };
        }
        let (cw, ch) = (x1 - x0 + 1, y1 - y0 + 1);
        let stride = (cw + 1) as usize;
        let mut sat = vec![0u32; stride * (ch + 1) as usize];
        for y in 0..ch {
            let mut row = 0u32;
            for x in 0..cw {
                row += mask.get(x0 + x, y0 + y) as u32;
                sat[(y + 1) as usize * stride + (x + 1) as usize] = sat[y as usize * stride + (x + 1) as usize] + row;
            }
        }
        Self {
            width: mask.width,
            height: mask.height,
            x0,
            y0,
            cw,
            ch,
            sat,
        }
    }

    /// Set pixels in the inclusive rectangle, which must lie in the image.
    fn count(&self, x0: u32, y0: u32, x1: u32, y1: u32) -> u64 {
        if self.cw == 0 {
            return 0;
        }
        let lx = x0.max(self.x0);
        let ly = y0.max(self.y0);
        let hx = x1.min(self.x0 + self.cw - 1);
        let hy = y1.min(self.y0 + self.ch - 1);
        if lx > hx || ly > hy {
            return 0;
        }
        let stride = (self.cw + 1) as usize;
        let (ax, ay) = ((lx - self.x0) as usize, (ly - self.y0) as usize);
        let (bx, by) = ((hx - self.x0 + 1) as usize, (hy - self.y0 + 1) as usize);
        (self.sat[by * stride + bx] as i64 - self.sat[ay * stride + bx] as i64 - self.sat[by * stride + ax] as i64
            + self.sat[ay * stride + ax] as i64) as u64
    }

    fn get(&self, x: u32, y: u32) -> bool {
        self.count(x, y, x, y) > 0
    }
}

/// A calibrated silhouette.
#[derive(Debug, Clone)]
pub struct HullView {
    pub intrinsics: CameraIntrinsics,
    pub pose: Pose,
    mask: MaskIndex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Footprint {
    Hit,
    Miss,
    NotCounted,
    Unknown,
}

impl HullView {
    pub fn new(mask: &BinaryImage, intrinsics: CameraIntrinsics, pose: Pose) -> Result<Self, HullError> {
        if [mask.width, mask.height] != intrinsics.image_size {
            return Err(HullError::DimensionMismatch(
                mask.width,
                mask.height,
                intrinsics.image_size[0],
                intrinsics.image_size[1],
            ));
        }
        Ok(Self {
            intrinsics,
            pose,
            mask: MaskIndex::new(mask),
        })
    }

    pub fn mask_at(&self, x: u32, y: u32) -> bool {
        self.mask.get(x, y)
    }

    /// `None` when the point is behind the camera or off the sensor.
    pub fn observe(&self, p: &Vec3) -> Option<bool> {
        let pc = self.pose.to_camera(p);
        if pc.z <= 0.0 {
            return None;
        }
        let px = self.intrinsics.project_camera(&pc);
        if !self.intrinsics.contains(px) {
            return None;
        }
        Some(self.mask.get(px[0] as u32, px[1] as u32))
    }

    /// Conservative verdict for every point of a convex cell.
    fn footprint(&self, corners: &[Vec3; 8]) -> Footprint {
        if self.intrinsics.distortion != [0.0, 0.0] {
            return Footprint::Unknown;
        }
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for c in corners {
            let pc = self.pose.to_camera(c);
            if pc.z <= 1e-9 {
                return Footprint::Unknown;
            }
            let px = self.intrinsics.project_camera(&pc);
            for k in 0..2 {
                lo[k] = lo[k].min(px[k]);
                hi[k] = hi[k].max(px[k]);
            }
        }
        // Guard against rounding in interior projections.
        for k in 0..2 {
            let pad = 1e-9 * (1.0 + lo[k].abs().max(hi[k].abs()));
            lo[k] -= pad;
            hi[k] += pad;
        }
        let (w, h) = (self.mask.width as f64, self.mask.height as f64);
        if hi[0] < 0.0 || hi[1] < 0.0 || lo[0] >= w || lo[1] >= h {
            return Footprint::NotCounted;
        }
        if lo[0] < 0.0 || lo[1] < 0.0 || hi[0] >= w || hi[1] >= h {
            return Footprint::Unknown;
        }
        let (x0, y0, x1, y1) = (lo[0] as u32, lo[1] as u32, hi[0] as u32, hi[1] as u32);
        let area = (x1 - x0 + 1) as u64 * (y1 - y0 + 1) as u64;
        match self.mask.count(x0, y0, x1, y1) {
            0 => Footprint::Miss,
            n if n == area => Footprint::Hit,
            _ => Footprint::Unknown,
        }
    }
}

/// Inside iff enough of the views that see `p` place it in their silhouette.
pub fn classify_point(p: &Vec3, views: &[HullView], consensus: Consensus) -> Occupancy {
    let (mut hits, mut counted) = (0u32, 0u32);
    for v in views {
        if let Some(fg) = v.observe(p) {
            counted += 1;
            hits += fg as u32;
        }
    }
    if counted > 0 && consensus.point_inside(hits, counted) {
        Occupancy::Inside
    } else {
        Occupancy::Outside
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Outside,
    Inside,
    /// Children indexed by `x | y << 1 | z << 2`.
    Mixed(Box<[Node; 8]>),
}

impl Node {
    fn leaf(o: Occupancy) -> Node {
        match o {
            Occupancy::Inside => Node::Inside,
            Occupancy::Outside => Node::Outside,
        }
    }

    /// Collapses eight identical leaves into one.
    fn join(children: [Node; 8]) -> Node {
        let first = &children[0];
        if !matches!(first, Node::Mixed(_)) && children.iter().all(|c| c == first) {
            first.clone()
        } else {
            Node::Mixed(Box::new(children))
        }
    }
}

fn child_coord(c: [u32; 3], i: usize) -> [u32; 3] {
    [2 * c[0] + (i & 1) as u32, 2 * c[1] + ((i >> 1) & 1) as u32, 2 * c[2] + ((i >> 2) & 1) as u32]
}

/// Dense occupancy at one resolution, indexed `(z * n + y) * n + x`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OccupancyGrid {
    pub n: usize,
    bits: Vec<u64>,
}

impl OccupancyGrid {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            bits: vec![0; (n * n * n).div_ceil(64)],
        }
    }

    #[inline]
    fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.n + j) * self.n + i
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> bool {
        let idx = self.index(i, j, k);
        self.bits[idx >> 6] >> (idx & 63) & 1 == 1
    }

    /// Out-of-range coordinates read as empty.
    #[inline]
    pub fn get_signed(&self, i: i64, j: i64, k: i64) -> bool {
        let n = self.n as i64;
        i >= 0 && j >= 0 && k >= 0 && i < n && j < n && k < n && self.get(i as usize, j as usize, k as usize)
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: bool) {
        let idx = self.index(i, j, k);
        if v {
            self.bits[idx >> 6] |= 1 << (idx & 63);
        } else {
            self.bits[idx >> 6] &= !(1 << (idx & 63));
        }
    }

    pub fn count(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Every set voxel of `self` is set in `other`.
    pub fn is_subset_of(&self, other: &OccupancyGrid) -> bool {
        self.n == other.n && self.bits.iter().zip(&other.bits).all(|(a, b)| a & !b == 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HullOctree {
    pub bounds: CubeBounds,
    pub max_depth: u8,
    pub root: Node,
}

struct Carver<'a> {
    views: &'a [HullView],
    bounds: CubeBounds,
    max_depth: u8,
    consensus: Consensus,
}

impl Carver<'_> {
    fn node_state(&self, depth: u8, c: [u32; 3]) -> Option<Occupancy> {
        let corners = self.bounds.cell_corners(depth, c);
        let (mut h, mut m, mut u) = (0u32, 0u32, 0u32);
        for v in self.views {
            match v.footprint(&corners) {
                Footprint::Hit => h += 1,
                Footprint::Miss => {
                    m += 1;
                    if self.consensus.early_outside(m) {
                        return Some(Occupancy::Outside);
                    }
                }
                Footprint::Unknown => u += 1,
                Footprint::NotCounted => {}
            }
        }
        self.consensus.node_state(h, m, u)
    }

    fn build(&self, depth: u8, c: [u32; 3]) -> Node {
        if depth == self.max_depth {
            return Node::leaf(classify_point(&self.bounds.cell_centre(depth, c), self.views, self.consensus));
        }
        if let Some(o) = self.node_state(depth, c) {
            return Node::leaf(o);
        }
        let children: Vec<Node> = if depth < PARALLEL_DEPTH {
            (0..8).into_par_iter().map(|i| self.build(depth + 1, child_coord(c, i))).collect()
        } else {
            (0..8).map(|i| self.build(depth + 1, child_coord(c, i))).collect()
        };
        Node::join(children.try_into().expect("eight children"))
    }
}

/// Carves the octree; leaves at `max_depth` are decided by their centre.
pub fn carve(views: &[HullView], bounds: CubeBounds, max_depth: u8, consensus: Consensus) -> Result<HullOctree, HullError> {
    if views.is_empty() {
        return Err(HullError::NoViews);
    }
    if !(3..=10).contains(&max_depth) {
        return Err(HullError::InvalidDepth(max_depth));
    }
    let carver = Carver {
        views,
        bounds,
        max_depth,
        consensus,
    };
    Ok(HullOctree {
        bounds,
        max_depth,
        root: carver.build(0, [0, 0, 0]),
    })
}

impl HullOctree {
    /// Visits leaves depth-first in child order.
    pub fn for_each_leaf(&self, mut f: impl FnMut(u8, [u32; 3], Occupancy)) {
        fn walk(node: &Node, depth: u8, c: [u32; 3], f: &mut impl FnMut(u8, [u32; 3], Occupancy)) {
            match node {
                Node::Inside => f(depth, c, Occupancy::Inside),
                Node::Outside => f(depth, c, Occupancy::Outside),
                Node::Mixed(ch) => {
                    for (i, n) in ch.iter().enumerate() {
                        walk(n, depth + 1, child_coord(c, i), f);
                    }
                }
            }
        }
        walk(&self.root, 0, [0, 0, 0], &mut f);
    }

    pub fn volume(&self) -> f64 {
        let mut v = 0.0;
        self.for_each_leaf(|d, _, o| {
            if o == Occupancy::Inside {
                v += self.bounds.cell_size(d).powi(3);
            }
        });
        v
    }

    /// `(inside, outside, mixed)` node counts.
    pub fn node_counts(&self) -> (usize, usize, usize) {
        fn walk(n: &Node, acc: &mut (usize, usize, usize)) {
            match n {
                Node::Inside => acc.0 += 1,
                Node::Outside => acc.1 += 1,
                Node::Mixed(ch) => {
                    acc.2 += 1;
                    ch.iter().for_each(|c| walk(c, acc));
                }
            }
        }
        let mut acc = (0, 0, 0);
        walk(&self.root, &mut acc);
        acc
    }

    pub fn has_inside(&self) -> bool {
        self.node_counts().0 > 0
    }

    /// Point query; points outside the bounds are outside.
    pub fn occupancy_at(&self, p: &Vec3) -> Occupancy {
        let rel = (p - self.bounds.min) / self.bounds.side;
        if rel.iter().any(|&r| !(0.0..1.0).contains(&r)) {
            return Occupancy::Outside;
        }
        let mut node = &self.root;
        let mut scale = 1.0;
        let mut r = rel;
        loop {
            match node {
                Node::Inside => return Occupancy::Inside,
                Node::Outside => return Occupancy::Outside,
                Node::Mixed(ch) => {
                    scale *= 0.5;
                    let mut i = 0;
                    for k in 0..3 {
                        if r[k] >= scale {
                            i |= 1 << k;
                            r[k] -= scale;
                        }
                    }
                    node = &ch[i];
                }
            }
        }
    }

    /// Occupancy of every voxel at `max_depth`.
    pub fn to_grid(&self) -> OccupancyGrid {
        let n = 1usize << self.max_depth;
        let mut grid = OccupancyGrid::new(n);
        self.for_each_leaf(|d, c, o| {
            if o == Occupancy::Inside {
                let s = 1usize << (self.max_depth - d);
                let base = c.map(|v| v as usize * s);
                for k in base[2]..base[2] + s {
                    for j in base[1]..base[1] + s {
                        for i in base[0]..base[0] + s {
                            grid.set(i, j, k, true);
                        }
                    }
                }
            }
        });
        grid
    }

    /// Canonical octree of a dense grid; `grid.n` must be `2^max_depth`.
    pub fn from_grid(bounds: CubeBounds, max_depth: u8, grid: &OccupancyGrid) -> Self {
        assert_eq!(grid.n, 1usize << max_depth, "grid resolution");
        fn build(grid: &OccupancyGrid, max_depth: u8, depth: u8, c: [u32; 3]) -> Node {
            if depth == max_depth {
                return if grid.get(c[0] as usize, c[1] as usize, c[2] as usize) {
                    Node::Inside
                } else {
                    Node::Outside
                };
            }
            let children: [Node; 8] = std::array::from_fn(|i| build(grid, max_depth, depth + 1, child_coord(c, i)));
            Node::join(children)
        }
        Self {
            bounds,
            max_depth,
            root: build(grid, max_depth, 0, [0, 0, 0]),
        }
    }

    /// Versioned binary cache: magic, version, depth, bounds, then one byte
    /// per node in preorder.
    pub fn write_cache(&self, w: &mut impl Write) -> Result<(), HullError> {
        let mut nodes = Vec::new();
        fn walk(n: &Node, out: &mut Vec<u8>) {
            match n {
                Node::Outside => out.push(0),
                Node::Inside => out.push(1),
                Node::Mixed(ch) => {
                    out.push(2);
                    ch.iter().for_each(|c| walk(c, out));
                }
            }
        }
        walk(&self.root, &mut nodes);
        w.write_all(CACHE_MAGIC)?;
        w.write_all(&CACHE_VERSION.to_le_bytes())?;
        w.write_all(&[self.max_depth])?;
        for v in [self.bounds.min.x, self.bounds.min.y, self.bounds.min.z, self.bounds.side] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&(nodes.len() as u64).to_le_bytes())?;
        w.write_all(&nodes)?;
        Ok(())
    }

    pub fn read_cache(r: &mut impl Read) -> Result<Self, HullError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CACHE_MAGIC {
            return Err(HullError::Cache("bad magic".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != CACHE_VERSION {
            return Err(HullError::Cache(format!("unsupported version {version}")));
        }
        let mut b1 = [0u8; 1];
        r.read_exact(&mut b1)?;
        let max_depth = b1[0];
        let mut f = [0.0f64; 4];
        let mut b8 = [0u8; 8];
        for v in &mut f {
            r.read_exact(&mut b8)?;
            *v = f64::from_le_bytes(b8);
        }
        let bounds = CubeBounds::new(Vec3::new(f[0], f[1], f[2]), f[3])?;
        r.read_exact(&mut b8)?;
        let len = u64::from_le_bytes(b8) as usize;
        let mut nodes = vec![0u8; len];
        r.read_exact(&mut nodes)?;
        fn parse(bytes: &[u8], pos: &mut usize, depth: u8, max_depth: u8) -> Result<Node, HullError> {
            let b = *bytes.get(*pos).ok_or_else(|| HullError::Cache("truncated".into()))?;
            *pos += 1;
            match b {
                0 => Ok(Node::Outside),
                1 => Ok(Node::Inside),
                2 if depth < max_depth => {
                    let mut ch = Vec::with_capacity(8);
                    for _ in 0..8 {
                        ch.push(parse(bytes, pos, depth + 1, max_depth)?);
                    }
                    Ok(Node::Mixed(Box::new(ch.try_into().expect("eight children"))))
                }
                _ => Err(HullError::Cache(format!("bad node byte {b} at depth {depth}"))),
            }
        }
        let mut pos = 0;
        let root = parse(&nodes, &mut pos, 0, max_depth)?;
        if pos != nodes.len() {
            return Err(HullError::Cache("trailing bytes".into()));
        }
        Ok(Self {
            bounds,
            max_depth,
            root,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::orbit_pose;

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics::centred(300.0, 160, 120).unwrap()
    }

    fn full_view(pan: f64, tilt: f64, value: bool) -> HullView {
        let mask = BinaryImage::from_fn(160, 120, |_, _| value);
        HullView::new(&mask, cam(), orbit_pose(Vec3::zeros(), 100.0, pan, tilt)).unwrap()
    }

    #[test]
    fn mask_index_counts() {
        let mask = BinaryImage::from_fn(20, 10, |x, y| (5..9).contains(&x) && (2..7).contains(&y) && (x + y) % 3 != 0);
        let idx = MaskIndex::new(&mask);
        for (x0, y0, x1, y1) in [(0, 0, 19, 9), (5, 2, 5, 2), (6, 3, 12, 8), (0, 0, 4, 9)] {
            let mut brute = 0;
            for y in y0..=y1 {
                for x in x0..=x1 {
                    brute += mask.get(x, y) as u64;
                }
            }
            assert_eq!(idx.count(x0, y0, x1, y1), brute);
        }
        for y in 0..10 {
            for x in 0..20 {
                assert_eq!(idx.get(x, y), mask.get(x, y));
            }
        }
    }

    #[test]
    fn full_masks_keep_the_centre() {
        let views = vec![full_view(0.0, 20.0, true), full_view(90.0, 30.0, true)];
        assert_eq!(classify_point(&Vec3::zeros(), &views, Consensus::ALL), Occupancy::Inside);
    }

    #[test]
    fn one_empty_silhouette_carves_with_all() {
        let views = vec![full_view(0.0, 20.0, true), full_view(90.0, 30.0, false)];
        assert_eq!(classify_point(&Vec3::zeros(), &views, Consensus::ALL), Occupancy::Outside);
        assert_eq!(classify_point(&Vec3::zeros(), &views, Consensus::AllBut(1)), Occupancy::Inside);
        assert_eq!(classify_point(&Vec3::zeros(), &views, Consensus::AtLeast(2)), Occupancy::Outside);
    }

    #[test]
    fn unseen_points_are_outside() {
        let views = vec![full_view(0.0, 20.0, true)];
        assert_eq!(classify_point(&Vec3::new(0.0, 500.0, 0.0), &views, Consensus::ALL), Occupancy::Outside);
    }

    #[test]
    fn empty_silhouettes_give_an_empty_octree() {
        let views = vec![full_view(0.0, 20.0, false), full_view(120.0, 40.0, false)];
        let oct = carve(&views, CubeBounds::centred(Vec3::zeros(), 20.0).unwrap(), 5, Consensus::ALL).unwrap();
        assert_eq!(oct.root, Node::Outside);
        assert_eq!(oct.volume(), 0.0);
    }

    #[test]
    fn carve_rejects_bad_input() {
        let b = CubeBounds::centred(Vec3::zeros(), 20.0).unwrap();
        assert!(matches!(carve(&[], b, 5, Consensus::ALL), Err(HullError::NoViews)));
        let v = vec![full_view(0.0, 20.0, true)];
        assert!(matches!(carve(&v, b, 2, Consensus::ALL), Err(HullError::InvalidDepth(2))));
        assert!(matches!(carve(&v, b, 11, Consensus::ALL), Err(HullError::InvalidDepth(11))));
        assert!(CubeBounds::new(Vec3::zeros(), 0.0).is_err());
        let bad = BinaryImage::new(10, 10);
        assert!(matches!(HullView::new(&bad, cam(), Pose::identity()), Err(HullError::DimensionMismatch(..))));
    }

    #[test]
    fn grid_round_trip_and_cache() {
        let n = 16;
        let mut g = OccupancyGrid::new(n);
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    let d = (i as f64 - 7.5).powi(2) + (j as f64 - 7.5).powi(2) + (k as f64 - 5.0).powi(2);
                    g.set(i, j, k, d < 30.0);
                }
            }
        }
        let bounds = CubeBounds::centred(Vec3::new(1.0, 2.0, 3.0), 8.0).unwrap();
        let oct = HullOctree::from_grid(bounds, 4, &g);
        assert_eq!(oct.to_grid(), g);
        assert!((oct.volume() - g.count() as f64 * 0.125).abs() < 1e-9);
        let mut bytes = Vec::new();
        oct.write_cache(&mut bytes).unwrap();
        assert_eq!(&bytes[..8], CACHE_MAGIC);
        let back = HullOctree::read_cache(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, oct);
        bytes[8] = 99;
        assert!(matches!(HullOctree::read_cache(&mut bytes.as_slice()), Err(HullError::Cache(_))));
        for (i, j, k) in [(7, 7, 5), (0, 0, 0), (15, 3, 9)] {
            let p = bounds.cell_centre(4, [i, j, k]);
            let want = if g.get(i as usize, j as usize, k as usize) { Occupancy::Inside } else { Occupancy::Outside };
            assert_eq!(oct.occupancy_at(&p), want);
        }
    }

    #[test]
    fn consensus_node_states_bound_point_states() {
        // Exhaustive check that a node decision holds for every split of the
        // undecided views.
        for c in [Consensus::AllBut(0), Consensus::AllBut(2), Consensus::AtLeast(1), Consensus::AtLeast(3)] {
            for h in 0..6u32 {
                for m in 0..6u32 {
                    for u in 0..5u32 {
                        let Some(state) = c.node_state(h, m, u) else { continue };
                        // Each undecided view is a hit, a miss or unseen.
                        for hits_u in 0..=u {
                            for miss_u in 0..=(u - hits_u) {
                                let hits = h + hits_u;
                                let counted = h + m + hits_u + miss_u;
                                let inside = counted > 0 && c.point_inside(hits, counted);
                                assert_eq!(inside, state == Occupancy::Inside, "{c:?} h{h} m{m} u{u}");
                            }
                        }
                    }
                }
            }
        }
    }
}
