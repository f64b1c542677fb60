//! Bilinear discontinuous Galerkin discretisation of `u_t + v·∇u = 0`.
//!
//! Each element carries four nodal values at its corners, node `a + 2b` at
//! reference point `(2a − 1, 2b − 1)` of `[−1, 1]²`. Faces use the full upwind
//! flux; a face shared by elements of different size is split into segments
//! along the finer side and each segment is integrated with two-point Gauss.

use std::collections::{BTreeMap, HashMap};
use std::sync::OnceLock;

use thiserror::Error;

use crate::ic::InitialCondition;
use crate::mesh::{CellKey, ElementId, QuadMesh};
use crate::par;

pub type Coeffs = [f64; 4];
type Block = [f64; 16];

/// Largest admissible `dτ (|v_x| + |v_y|) / h_min`.
pub const CFL_LIMIT: f64 = 0.4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("time step {dt} violates the CFL limit: speed {speed}, smallest element width h_min = {h_min}")]
    Cfl { dt: f64, speed: f64, h_min: f64 },
}

const GAUSS4_X: [f64; 4] = [
    -0.861_136_311_594_052_6,
    -0.339_981_043_584_856_3,
    0.339_981_043_584_856_3,
    0.861_136_311_594_052_6,
];
const GAUSS4_W: [f64; 4] = [
    0.347_854_845_137_453_85,
    0.652_145_154_862_546_1,
    0.652_145_154_862_546_1,
    0.347_854_845_137_453_85,
];

fn gauss2() -> [f64; 2] {
    let g = 1.0 / 3f64.sqrt();
    [-g, g]
}

fn lin(a: usize, t: f64) -> f64 {
    if a == 0 {
        0.5 * (1.0 - t)
    } else {
        0.5 * (1.0 + t)
    }
}

fn dlin(a: usize) -> f64 {
    if a == 0 {
        -0.5
    } else {
        0.5
    }
}

/// Reference basis function `q` at `(ξ, η)`.
pub fn basis(q: usize, xi: f64, eta: f64) -> f64 {
    lin(q & 1, xi) * lin(q >> 1, eta)
}

/// All four basis functions at `(ξ, η)`.
pub fn basis_all(xi: f64, eta: f64) -> [f64; 4] {
    std::array::from_fn(|q| basis(q, xi, eta))
}

/// Evaluates a bilinear nodal field at reference point `(ξ, η)`.
pub fn evaluate(c: &Coeffs, xi: f64, eta: f64) -> f64 {
    let b = basis_all(xi, eta);
    (0..4).map(|q| c[q] * b[q]).sum()
}

/// Reference-element matrices, built once by quadrature.
pub struct Reference {
    pub mass: [[f64; 4]; 4],
    pub mass_inv: [[f64; 4]; 4],
    /// `stiff_x[p][q] = ∫ φ_q ∂_ξ φ_p`.
    pub stiff_x: [[f64; 4]; 4],
    pub stiff_y: [[f64; 4]; 4],
    /// `prolong[c][q'][p]`: parent coefficient `p` to child `c` node `q'`.
    pub prolong: [[[f64; 4]; 4]; 4],
    /// `restrict[c][p][q']`: child `c` node `q'` to parent coefficient `p`.
    pub restrict: [[[f64; 4]; 4]; 4],
}

pub fn reference() -> &'static Reference {
    static REF: OnceLock<Reference> = OnceLock::new();
    REF.get_or_init(Reference::build)
}

fn invert4(m: &[[f64; 4]; 4]) -> [[f64; 4]; 4] {
    // Gauss-Jordan with partial pivoting; only used on SPD reference matrices.
    let mut a = *m;
    let mut inv = [[0.0; 4]; 4];
    for (i, row) in inv.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for col in 0..4 {
        let piv = (col..4)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .unwrap();
        a.swap(col, piv);
        inv.swap(col, piv);
        let d = a[col][col];
        for k in 0..4 {
            a[col][k] /= d;
            inv[col][k] /= d;
        }
        for r in 0..4 {
            if r != col {
                let f = a[r][col];
                for k in 0..4 {
                    a[r][k] -= f * a[col][k];
                    inv[r][k] -= f * inv[col][k];
                }
            }
        }
    }
    inv
}

impl Reference {
    fn build() -> Self {
        let mut mass = [[0.0; 4]; 4];
        let mut stiff_x = [[0.0; 4]; 4];
        let mut stiff_y = [[0.0; 4]; 4];
        for (i, &xi) in GAUSS4_X.iter().enumerate() {
            for (j, &eta) in GAUSS4_X.iter().enumerate() {
                let w = GAUSS4_W[i] * GAUSS4_W[j];
                let phi = basis_all(xi, eta);
                for p in 0..4 {
                    let dx = dlin(p & 1) * lin(p >> 1, eta);
                    let dy = lin(p & 1, xi) * dlin(p >> 1);
                    for q in 0..4 {
                        mass[p][q] += w * phi[p] * phi[q];
                        stiff_x[p][q] += w * phi[q] * dx;
                        stiff_y[p][q] += w * phi[q] * dy;
                    }
                }
            }
        }
        let mass_inv = invert4(&mass);

        let mut prolong = [[[0.0; 4]; 4]; 4];
        for (c, pc) in prolong.iter_mut().enumerate() {
            let (ca, cb) = ((c & 1) as f64, (c >> 1) as f64);
            for (qc, row) in pc.iter_mut().enumerate() {
                let xi = ca + (qc & 1) as f64 - 1.0;
                let eta = cb + (qc >> 1) as f64 - 1.0;
                *row = basis_all(xi, eta);
            }
        }

        // restrict_c = ¼ M⁻¹ P_cᵀ M
        let mut restrict = [[[0.0; 4]; 4]; 4];
        for c in 0..4 {
            let mut ptm = [[0.0; 4]; 4];
            for p in 0..4 {
                for q in 0..4 {
                    ptm[p][q] = (0..4).map(|r| prolong[c][r][p] * mass[r][q]).sum();
                }
            }
            for p in 0..4 {
                for q in 0..4 {
                    restrict[c][p][q] = 0.25 * (0..4).map(|r| mass_inv[p][r] * ptm[r][q]).sum::<f64>();
                }
            }
        }

        Self {
            mass,
            mass_inv,
            stiff_x,
            stiff_y,
            prolong,
            restrict,
        }
    }
}

/// Nodal coefficients keyed by element; iteration order matches the mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct DgField {
    pub coeffs: BTreeMap<ElementId, Coeffs>,
}

impl DgField {
    /// Coefficients flattened in mesh order.
    pub fn to_vec(&self) -> Vec<f64> {
        self.coeffs.values().flat_map(|c| c.iter().copied()).collect()
    }

    /// Overwrites coefficients from a flat vector in mesh order.
    pub fn set_from_slice(&mut self, data: &[f64]) {
        for (c, chunk) in self.coeffs.values_mut().zip(data.chunks_exact(4)) {
            c.copy_from_slice(chunk);
        }
    }

    /// `∫ u` over the domain.
    pub fn integral(&self, mesh: &QuadMesh) -> f64 {
        self.coeffs
            .iter()
            .map(|(id, c)| {
                let h = mesh.cell_size(mesh.depth(*id).expect("field matches mesh"));
                0.25 * h[0] * h[1] * c.iter().sum::<f64>()
            })
            .sum()
    }
}

/// Element-wise L2 projection of `f` using 4×4 Gauss–Legendre per element.
pub fn project(mesh: &QuadMesh, f: impl Fn(f64, f64) -> f64) -> DgField {
    let r = reference();
    let coeffs = mesh
        .iter()
        .map(|(id, key)| {
            let (lo, h) = mesh.bounds(key);
            let mut b = [0.0; 4];
            for (i, &xi) in GAUSS4_X.iter().enumerate() {
                for (j, &eta) in GAUSS4_X.iter().enumerate() {
                    let x = lo[0] + 0.5 * h[0] * (xi + 1.0);
                    let y = lo[1] + 0.5 * h[1] * (eta + 1.0);
                    let fv = f(x, y) * GAUSS4_W[i] * GAUSS4_W[j];
                    let phi = basis_all(xi, eta);
                    for p in 0..4 {
                        b[p] += fv * phi[p];
                    }
                }
            }
            let c = std::array::from_fn(|p| (0..4).map(|q| r.mass_inv[p][q] * b[q]).sum());
            (id, c)
        })
        .collect();
    DgField { coeffs }
}

pub fn project_ic(mesh: &QuadMesh, ic: &InitialCondition) -> DgField {
    let d = mesh.extent();
    project(mesh, |x, y| ic.exact(x, y, 0.0, d))
}

/// Child coefficients interpolating the parent bilinear, in quadrant order.
pub fn prolong(parent: &Coeffs) -> [Coeffs; 4] {
    let r = reference();
    std::array::from_fn(|c| std::array::from_fn(|q| (0..4).map(|p| r.prolong[c][q][p] * parent[p]).sum()))
}

/// L2 projection of four children (quadrant order) onto the parent space.
pub fn restrict(children: &[Coeffs; 4]) -> Coeffs {
    let r = reference();
    std::array::from_fn(|p| {
        (0..4)
            .map(|c| (0..4).map(|q| r.restrict[c][p][q] * children[c][q]).sum::<f64>())
            .sum()
    })
}

/// Refines `id` in both mesh and field with exact prolongation.
pub fn refine_with_transfer(mesh: &mut QuadMesh, field: &mut DgField, id: ElementId) -> Result<[ElementId; 4], crate::mesh::MeshError> {
    let kids = mesh.refine(id)?;
    let parent = field.coeffs.remove(&id).expect("field matches mesh");
    for (kid, c) in kids.iter().zip(prolong(&parent)) {
        field.coeffs.insert(*kid, c);
    }
    Ok(kids)
}

/// De-refines a complete sibling group with L2 restriction.
pub fn derefine_with_transfer(mesh: &mut QuadMesh, field: &mut DgField, group: [ElementId; 4]) -> Result<ElementId, crate::mesh::MeshError> {
    let mut by_quadrant = [[0.0; 4]; 4];
    for id in group {
        let key = mesh.key(id).ok_or(crate::mesh::MeshError::StaleHandle(id))?;
        by_quadrant[key.quadrant()] = *field.coeffs.get(&id).expect("field matches mesh");
    }
    let parent = mesh.derefine_group(group)?;
    for id in group {
        field.coeffs.remove(&id);
    }
    field.coeffs.insert(parent, restrict(&by_quadrant));
    Ok(parent)
}

/// Per-element L2 errors against the exact solution and their global norm.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorVector {
    pub per_element: Vec<f64>,
    pub global: f64,
}

impl ErrorVector {
    pub fn from_parts(per_element: Vec<f64>) -> Self {
        let global = per_element.iter().map(|c| c * c).sum::<f64>().sqrt();
        Self { per_element, global }
    }
}

/// `‖u_exact − u_h‖` per element with 4×4 Gauss quadrature, in mesh order.
pub fn element_errors(mesh: &QuadMesh, field: &DgField, ic: &InitialCondition, t: f64) -> ErrorVector {
    let d = mesh.extent();
    let items: Vec<(CellKey, Coeffs)> = mesh
        .iter()
        .map(|(id, key)| (key, *field.coeffs.get(&id).expect("field matches mesh")))
        .collect();
    let per = par::map_slice(&items, |(key, c)| {
        let (lo, h) = mesh.bounds(*key);
        let mut acc = 0.0;
        for (i, &xi) in GAUSS4_X.iter().enumerate() {
            for (j, &eta) in GAUSS4_X.iter().enumerate() {
                let x = lo[0] + 0.5 * h[0] * (xi + 1.0);
                let y = lo[1] + 0.5 * h[1] * (eta + 1.0);
                let e = ic.exact(x, y, t, d) - evaluate(c, xi, eta);
                acc += GAUSS4_W[i] * GAUSS4_W[j] * e * e;
            }
        }
        (0.25 * h[0] * h[1] * acc).sqrt()
    });
    ErrorVector::from_parts(per)
}

/// Block-sparse `du/dt = A u` with the inverse mass folded into each block.
#[derive(Clone, Debug)]
pub struct AdvectionOperator {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    blocks: Vec<Block>,
    max_speed: f64,
    h_min: f64,
}

fn add_outer(block: &mut Block, scale: f64, left: &[f64; 4], right: &[f64; 4]) {
    for p in 0..4 {
        for q in 0..4 {
            block[4 * p + q] += scale * left[p] * right[q];
        }
    }
}

impl AdvectionOperator {
    /// Assembles the semi-discrete operator for `mesh` with the IC's velocity field.
    pub fn assemble(mesh: &QuadMesh, ic: &InitialCondition) -> Self {
        let r = reference();
        let domain = mesh.extent();
        let keys: Vec<CellKey> = mesh.iter().map(|(_, k)| k).collect();
        let n = keys.len();
        let vel: Vec<[f64; 2]> = keys
            .iter()
            .map(|k| {
                let c = mesh.center(*k);
                ic.velocity_at(c[0], c[1], domain)
            })
            .collect();
        let grid = mesh.owner_grid();
        let f = 1u32 << mesh.depth_max();
        let (fx, fy) = (mesh.nx() * f, mesh.ny() * f);
        let hf = [domain[0] / f64::from(fx), domain[1] / f64::from(fy)];
        let owner = |x: u32, y: u32| grid[((y % fy) * fx + (x % fx)) as usize];

        let mut blocks: HashMap<(usize, usize), Block> = HashMap::new();
        for (i, key) in keys.iter().enumerate() {
            let h = mesh.cell_size(key.depth);
            let v = vel[i];
            let b = blocks.entry((i, i)).or_insert([0.0; 16]);
            for p in 0..4 {
                for q in 0..4 {
                    b[4 * p + q] += v[0] * 0.5 * h[1] * r.stiff_x[p][q] + v[1] * 0.5 * h[0] * r.stiff_y[p][q];
                }
            }
        }

        let g2 = gauss2();
        for (i, key) in keys.iter().enumerate() {
            let (xs, ys) = mesh.fine_span(*key);
            // axis 0: right face (normal +x); axis 1: top face (normal +y)
            for axis in 0..2 {
                let (along, across) = if axis == 0 { (ys, xs) } else { (xs, ys) };
                let mut s = along[0];
                while s < along[1] {
                    let nb = |t: u32| if axis == 0 { owner(across[1], t) } else { owner(t, across[1]) };
                    let j = nb(s);
                    let mut e = s + 1;
                    while e < along[1] && nb(e) == j {
                        e += 1;
                    }
                    let (jx, jy) = mesh.fine_span(keys[j]);
                    let j_along = if axis == 0 { jy } else { jx };
                    let vn = 0.5 * (vel[i][axis] + vel[j][axis]);
                    let half = 0.5 * f64::from(e - s) * hf[1 - axis];
                    let mut phi_i = [[0.0; 4]; 2];
                    let mut phi_j = [[0.0; 4]; 2];
                    for (g, t) in g2.iter().enumerate() {
                        // position along the face in fine-cell units
                        let pos = 0.5 * f64::from(s + e) + 0.5 * f64::from(e - s) * t;
                        let loc = |span: [u32; 2]| 2.0 * (pos - f64::from(span[0])) / f64::from(span[1] - span[0]) - 1.0;
                        let (ti, tj) = (loc(along), loc(j_along));
                        phi_i[g] = if axis == 0 { basis_all(1.0, ti) } else { basis_all(ti, 1.0) };
                        phi_j[g] = if axis == 0 { basis_all(-1.0, tj) } else { basis_all(tj, -1.0) };
                    }
                    let (up, phi_up) = if vn >= 0.0 { (i, phi_i) } else { (j, phi_j) };
                    for g in 0..2 {
                        add_outer(blocks.entry((i, up)).or_insert([0.0; 16]), -vn * half, &phi_i[g], &phi_up[g]);
                        add_outer(blocks.entry((j, up)).or_insert([0.0; 16]), vn * half, &phi_j[g], &phi_up[g]);
                    }
                    s = e;
                }
            }
        }

        let mut rows: Vec<Vec<(usize, Block)>> = vec![Vec::new(); n];
        for ((i, j), b) in blocks {
            rows[i].push((j, b));
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut out_blocks = Vec::new();
        row_ptr.push(0);
        for (i, mut row) in rows.into_iter().enumerate() {
            row.sort_by_key(|(j, _)| *j);
            let h = mesh.cell_size(keys[i].depth);
            let scale = 4.0 / (h[0] * h[1]);
            for (j, b) in row {
                let mut folded = [0.0; 16];
                for p in 0..4 {
                    for q in 0..4 {
                        folded[4 * p + q] = scale * (0..4).map(|k| r.mass_inv[p][k] * b[4 * k + q]).sum::<f64>();
                    }
                }
                cols.push(j);
                out_blocks.push(folded);
            }
            row_ptr.push(cols.len());
        }
        let max_speed = vel.iter().map(|v| v[0].abs() + v[1].abs()).fold(0.0, f64::max);
        Self {
            row_ptr,
            cols,
            blocks: out_blocks,
            max_speed,
            h_min: mesh.min_width(),
        }
    }

    pub fn len(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn check_cfl(&self, dt: f64) -> Result<(), SolverError> {
        if dt * self.max_speed / self.h_min > CFL_LIMIT {
            return Err(SolverError::Cfl {
                dt,
                speed: self.max_speed,
                h_min: self.h_min,
            });
        }
        Ok(())
    }

    fn row_apply(&self, i: usize, u: &[f64], out: &mut [f64]) {
        let mut acc = [0.0; 4];
        for k in self.row_ptr[i]..self.row_ptr[i + 1] {
            let j = self.cols[k];
            let b = &self.blocks[k];
            let uj = &u[4 * j..4 * j + 4];
            for p in 0..4 {
                acc[p] += b[4 * p] * uj[0] + b[4 * p + 1] * uj[1] + b[4 * p + 2] * uj[2] + b[4 * p + 3] * uj[3];
            }
        }
        out.copy_from_slice(&acc);
    }

    /// `out = A u`, dispatched through the data-parallel helpers.
    pub fn apply(&self, u: &[f64], out: &mut [f64]) {
        par::for_each_chunk_mut(out, 4, 64, |i, chunk| self.row_apply(i, u, chunk));
    }

    /// `out = A u` on the calling thread.
    pub fn apply_sequential(&self, u: &[f64], out: &mut [f64]) {
        for (i, chunk) in out.chunks_mut(4).enumerate() {
            self.row_apply(i, u, chunk);
        }
    }

    /// One SSP-RK2 step of size `dt`, in place.
    pub fn step(&self, u: &mut [f64], dt: f64, scratch: &mut RkScratch) -> Result<(), SolverError> {
        self.check_cfl(dt)?;
        self.step_unchecked(u, dt, scratch);
        Ok(())
    }

    fn step_unchecked(&self, u: &mut [f64], dt: f64, scratch: &mut RkScratch) {
        let n = u.len();
        scratch.resize(n);
        let RkScratch { stage, rate } = scratch;
        self.apply(u, rate);
        for k in 0..n {
            stage[k] = u[k] + dt * rate[k];
        }
        self.apply(stage, rate);
        for k in 0..n {
            u[k] = 0.5 * u[k] + 0.5 * (stage[k] + dt * rate[k]);
        }
    }

    /// `steps` SSP-RK2 steps, calling `observe(k)` after step `k` (1-based).
    pub fn advance(&self, u: &mut [f64], dt: f64, steps: usize, mut observe: impl FnMut(usize, &[f64])) -> Result<(), SolverError> {
        self.check_cfl(dt)?;
        let mut scratch = RkScratch::default();
        for k in 1..=steps {
            self.step_unchecked(u, dt, &mut scratch);
            observe(k, u);
        }
        Ok(())
    }
}

#[derive(Default)]
pub struct RkScratch {
    stage: Vec<f64>,
    rate: Vec<f64>,
}

impl RkScratch {
    fn resize(&mut self, n: usize) {
        self.stage.resize(n, 0.0);
        self.rate.resize(n, 0.0);
    }
}
