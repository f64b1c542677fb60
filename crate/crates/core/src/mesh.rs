//! Periodic quadtree of square-ish quadrilateral elements.
//!
//! Elements are addressed by integer cell coordinates at their own level:
//! an element at depth `k` with coordinates `(ix, iy)` covers
//! `[ix, ix+1] × [iy, iy+1]` in units of `s_x / (n_x 2^k)` and `s_y / (n_y 2^k)`.
//! Children of `(ix, iy, k)` are `(2ix + a, 2iy + b, k + 1)`; quadrant `a + 2b`.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub struct ElementId(pub u64);

/// Geometric key of an element: depth plus cell coordinates at that depth.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellKey {
    pub depth: u32,
    pub ix: u32,
    pub iy: u32,
}

impl CellKey {
    pub fn parent(self) -> Option<CellKey> {
        (self.depth > 0).then(|| CellKey {
            depth: self.depth - 1,
            ix: self.ix / 2,
            iy: self.iy / 2,
        })
    }

    pub fn child(self, quadrant: usize) -> CellKey {
        CellKey {
            depth: self.depth + 1,
            ix: 2 * self.ix + (quadrant & 1) as u32,
            iy: 2 * self.iy + (quadrant >> 1) as u32,
        }
    }

    /// Position within the parent, `a + 2b`.
    pub fn quadrant(self) -> usize {
        (self.ix & 1) as usize + 2 * (self.iy & 1) as usize
    }

    /// Image under quarter turns about the centre of an `n×n` coarse grid,
    /// matching `(x, y) → (s − y, x)`.
    pub fn rotated(self, n: u32, quarter_turns: u32) -> CellKey {
        let side = n << self.depth;
        let mut k = self;
        for _ in 0..quarter_turns % 4 {
            k = CellKey {
                depth: k.depth,
                ix: side - 1 - k.iy,
                iy: k.ix,
            };
        }
        k
    }

    /// Periodic shift by whole coarse cells on an `nx×ny` coarse grid.
    pub fn translated(self, nx: u32, ny: u32, shift: [i64; 2]) -> CellKey {
        let (sx, sy) = ((nx as i64) << self.depth, (ny as i64) << self.depth);
        CellKey {
            depth: self.depth,
            ix: (self.ix as i64 + (shift[0] << self.depth)).rem_euclid(sx) as u32,
            iy: (self.iy as i64 + (shift[1] << self.depth)).rem_euclid(sy) as u32,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MeshError {
    #[error("element {0:?} is not live")]
    StaleHandle(ElementId),
    #[error("element {id:?} is already at the maximum depth {depth_max}")]
    DepthLimit { id: ElementId, depth_max: u32 },
    #[error("sibling group of {0:?} is incomplete or not a sibling group")]
    SiblingGroup(ElementId),
}

/// One directed adjacency record: `sender → receiver` with `dx = x_receiver − x_sender`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dx: [f64; 2],
}

/// Neighbour lists aligned with [`QuadMesh::ids`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct Adjacency {
    pub neighbors: Vec<Vec<Neighbor>>,
}

impl Adjacency {
    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuadMesh {
    nx: u32,
    ny: u32,
    sx: f64,
    sy: f64,
    depth_max: u32,
    elements: BTreeMap<ElementId, CellKey>,
    by_key: HashMap<CellKey, ElementId>,
    next_id: u64,
}

impl QuadMesh {
    /// # Panics
    /// On a zero base partition or non-positive extents.
    pub fn new_uniform(nx: u32, ny: u32, sx: f64, sy: f64, depth_max: u32) -> Self {
        assert!(nx >= 1 && ny >= 1, "base partition must be at least 1x1");
        assert!(sx > 0.0 && sy > 0.0, "domain extents must be positive");
        let mut mesh = Self {
            nx,
            ny,
            sx,
            sy,
            depth_max,
            elements: BTreeMap::new(),
            by_key: HashMap::new(),
            next_id: 0,
        };
        for iy in 0..ny {
            for ix in 0..nx {
                mesh.insert(CellKey { depth: 0, ix, iy });
            }
        }
        mesh
    }

    fn insert(&mut self, key: CellKey) -> ElementId {
        let id = ElementId(self.next_id);
        self.next_id += 1;
        self.elements.insert(id, key);
        self.by_key.insert(key, id);
        id
    }

    fn remove(&mut self, id: ElementId) -> CellKey {
        let key = self.elements.remove(&id).expect("live element");
        self.by_key.remove(&key);
        key
    }

    pub fn nx(&self) -> u32 {
        self.nx
    }
    pub fn ny(&self) -> u32 {
        self.ny
    }
    pub fn extent(&self) -> [f64; 2] {
        [self.sx, self.sy]
    }
    pub fn depth_max(&self) -> u32 {
        self.depth_max
    }

    /// `N_max = n_x n_y 4^depth_max`.
    pub fn max_elements(&self) -> usize {
        (self.nx * self.ny) as usize * 4usize.pow(self.depth_max)
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// Live element ids in ascending order; this is the node order everywhere.
    pub fn ids(&self) -> impl ExactSizeIterator<Item = ElementId> + '_ {
        self.elements.keys().copied()
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = (ElementId, CellKey)> + '_ {
        self.elements.iter().map(|(i, k)| (*i, *k))
    }

    pub fn key(&self, id: ElementId) -> Option<CellKey> {
        self.elements.get(&id).copied()
    }

    pub fn id_at(&self, key: CellKey) -> Option<ElementId> {
        self.by_key.get(&key).copied()
    }

    pub fn contains(&self, id: ElementId) -> bool {
        self.elements.contains_key(&id)
    }

    pub fn depth(&self, id: ElementId) -> Option<u32> {
        self.key(id).map(|k| k.depth)
    }

    /// Element width and height at `depth`.
    pub fn cell_size(&self, depth: u32) -> [f64; 2] {
        let f = f64::from(1u32 << depth);
        [self.sx / (f64::from(self.nx) * f), self.sy / (f64::from(self.ny) * f)]
    }

    /// Lower-left corner and size of an element.
    pub fn bounds(&self, key: CellKey) -> ([f64; 2], [f64; 2]) {
        let h = self.cell_size(key.depth);
        ([f64::from(key.ix) * h[0], f64::from(key.iy) * h[1]], h)
    }

    pub fn center(&self, key: CellKey) -> [f64; 2] {
        let (lo, h) = self.bounds(key);
        [lo[0] + 0.5 * h[0], lo[1] + 0.5 * h[1]]
    }

    /// Smallest element width over both axes.
    pub fn min_width(&self) -> f64 {
        let deepest = self.elements.values().map(|k| k.depth).max().unwrap_or(0);
        let h = self.cell_size(deepest);
        h[0].min(h[1])
    }

    pub fn dof_count(&self, basis_size: usize) -> usize {
        self.len() * basis_size
    }

    pub fn refine(&mut self, id: ElementId) -> Result<[ElementId; 4], MeshError> {
        let key = self.key(id).ok_or(MeshError::StaleHandle(id))?;
        if key.depth >= self.depth_max {
            return Err(MeshError::DepthLimit {
                id,
                depth_max: self.depth_max,
            });
        }
        self.remove(id);
        Ok(std::array::from_fn(|q| self.insert(key.child(q))))
    }

    /// The four live siblings of `id` in quadrant order, if all are live.
    pub fn sibling_group(&self, id: ElementId) -> Option<[ElementId; 4]> {
        let parent = self.key(id)?.parent()?;
        let mut group = [ElementId(0); 4];
        for (q, slot) in group.iter_mut().enumerate() {
            *slot = self.id_at(parent.child(q))?;
        }
        Some(group)
    }

    /// Replaces a complete sibling group by its parent.
    pub fn derefine_group(&mut self, group: [ElementId; 4]) -> Result<ElementId, MeshError> {
        let first = group[0];
        let found = self.sibling_group(first).ok_or(MeshError::SiblingGroup(first))?;
        let mut a = found;
        let mut b = group;
        a.sort();
        b.sort();
        if a != b {
            return Err(MeshError::SiblingGroup(first));
        }
        let parent = self.key(first).and_then(CellKey::parent).expect("checked above");
        for id in group {
            self.remove(id);
        }
        Ok(self.insert(parent))
    }

    /// Number of finest-level cells along each axis.
    fn fine_dims(&self) -> (u32, u32) {
        let f = 1u32 << self.depth_max;
        (self.nx * f, self.ny * f)
    }

    /// Element span in finest-level cells: `[x0, x1) × [y0, y1)`.
    pub(crate) fn fine_span(&self, key: CellKey) -> ([u32; 2], [u32; 2]) {
        let s = 1u32 << (self.depth_max - key.depth);
        ([key.ix * s, (key.ix + 1) * s], [key.iy * s, (key.iy + 1) * s])
    }

    /// Row-major owner map over the finest grid, holding node indices.
    pub(crate) fn owner_grid(&self) -> Vec<usize> {
        let (fx, fy) = self.fine_dims();
        let mut grid = vec![usize::MAX; (fx * fy) as usize];
        for (n, key) in self.elements.values().enumerate() {
            let (xs, ys) = self.fine_span(*key);
            for y in ys[0]..ys[1] {
                let row = (y * fx) as usize;
                grid[row + xs[0] as usize..row + xs[1] as usize].fill(n);
            }
        }
        grid
    }

    /// Minimal-image displacement `x_a − x_b` between element centres.
    pub fn displacement(&self, a: CellKey, b: CellKey) -> [f64; 2] {
        // Work in half finest cells so centres are integers.
        let (fx, fy) = self.fine_dims();
        let centre2 = |k: CellKey| {
            let (xs, ys) = self.fine_span(k);
            [i64::from(xs[0] + xs[1]), i64::from(ys[0] + ys[1])]
        };
        let (ca, cb) = (centre2(a), centre2(b));
        let period = [2 * i64::from(fx), 2 * i64::from(fy)];
        let h = [self.sx / f64::from(fx), self.sy / f64::from(fy)];
        std::array::from_fn(|k| {
            let mut d = (ca[k] - cb[k]).rem_euclid(period[k]);
            if 2 * d > period[k] {
                d -= period[k];
            }
            d as f64 * 0.5 * h[k]
        })
    }

    /// Face-or-vertex adjacency under periodic wrap; one record per ordered pair.
    pub fn adjacency(&self) -> Adjacency {
        let (fx, fy) = self.fine_dims();
        let grid = self.owner_grid();
        let keys: Vec<CellKey> = self.elements.values().copied().collect();
        let owner = |x: i64, y: i64| grid[(y.rem_euclid(i64::from(fy)) * i64::from(fx) + x.rem_euclid(i64::from(fx))) as usize];
        let neighbors = keys
            .iter()
            .enumerate()
            .map(|(n, key)| {
                let (xs, ys) = self.fine_span(*key);
                let (x0, x1) = (i64::from(xs[0]), i64::from(xs[1]));
                let (y0, y1) = (i64::from(ys[0]), i64::from(ys[1]));
                let mut found: Vec<usize> = Vec::new();
                for x in x0 - 1..=x1 {
                    found.push(owner(x, y0 - 1));
                    found.push(owner(x, y1));
                }
                for y in y0..y1 {
                    found.push(owner(x0 - 1, y));
                    found.push(owner(x1, y));
                }
                found.sort_unstable();
                found.dedup();
                found
                    .into_iter()
                    .filter(|&m| m != n)
                    .map(|m| Neighbor {
                        index: m,
                        dx: self.displacement(*key, keys[m]),
                    })
                    .collect()
            })
            .collect();
        Adjacency { neighbors }
    }

    /// One line per element: `id depth cx cy wx wy`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (id, key) in self.iter() {
            let c = self.center(key);
            let h = self.cell_size(key.depth);
            let _ = writeln!(out, "{} {} {:.9} {:.9} {:.9} {:.9}", id.0, key.depth, c[0], c[1], h[0], h[1]);
        }
        out
    }

    /// Element outlines filled by depth.
    pub fn to_svg(&self, pixels: f64) -> String {
        crate::svg::mesh_svg(self, pixels, |key| crate::svg::depth_color(key.depth, self.depth_max))
    }
}
