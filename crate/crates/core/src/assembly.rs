//! Streamline-diffusion discretisation on P1 elements.
//!
//! The bilinear form is
//!
//! ```text
//! a(u, v) = ε (u_β, v_β) + ε̂ (u_η, v_η) + (b u_β + c u, v)
//!         + Σ_K δ_K (b u_β + c u, b v_β)_K
//! ```
//!
//! with the reaction coefficient `c` kept explicit. At `c = 1` this is the
//! modified (crosswind-augmented) form written with the reaction absorbed;
//! with `ε̂ = ε` it is the standard streamline-diffusion form on P1, where
//! the element Laplacian vanishes. The load is `(f, v + δ b v_β)`.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{Region, ShishkinMesh, Triangle};
use crate::quadrature::quad_rule;
use crate::sparse::CsrMatrix;
use crate::weight::StreamlineFrame;

/// Quadrature level for the load vector. Matches the base level of the norm
/// integrals so that the duality identity holds to quadrature precision.
pub const LOAD_QUAD_LEVEL: usize = 2;

pub type Source = Arc<dyn Fn([f64; 2]) -> f64 + Send + Sync>;

/// Coefficients of `-εΔu + b·∇u + cu = f` with `u = 0` on the boundary.
#[derive(Clone)]
pub struct ProblemData {
    pub epsilon: f64,
    pub b1: f64,
    pub b2: f64,
    pub c: f64,
    pub source: Source,
}

impl fmt::Debug for ProblemData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemData")
            .field("epsilon", &self.epsilon)
            .field("b1", &self.b1)
            .field("b2", &self.b2)
            .field("c", &self.c)
            .finish_non_exhaustive()
    }
}

impl ProblemData {
    /// Problem with `f ≡ 1`.
    pub fn new(epsilon: f64, b1: f64, b2: f64, c: f64) -> Self {
        Self {
            epsilon,
            b1,
            b2,
            c,
            source: Arc::new(|_| 1.0),
        }
    }

    pub fn with_source<F>(mut self, f: F) -> Self
    where
        F: Fn([f64; 2]) -> f64 + Send + Sync + 'static,
    {
        self.source = Arc::new(f);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |name: &str, v: f64| Error::InvalidProblem(format!("{name} = {v}"));
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(bad("epsilon", self.epsilon));
        }
        if !(self.b1.is_finite() && self.b1 >= 0.0) {
            return Err(bad("b1", self.b1));
        }
        if !(self.b2.is_finite() && self.b2 >= 0.0) {
            return Err(bad("b2", self.b2));
        }
        if !(self.c.is_finite() && self.c >= 0.0) {
            return Err(bad("c", self.c));
        }
        Ok(())
    }

    pub fn frame(&self) -> Result<StreamlineFrame> {
        StreamlineFrame::new(self.b1, self.b2)
    }
}

/// Crosswind diffusion coefficient choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EpsHatMode {
    /// `ε̂ = ε` everywhere.
    Standard,
    /// `ε̂ = max(ε, N^{-3/2})` on the coarse region, `ε` elsewhere.
    Acd,
}

impl EpsHatMode {
    pub fn name(self) -> &'static str {
        match self {
            EpsHatMode::Standard => "standard",
            EpsHatMode::Acd => "acd",
        }
    }
}

impl std::str::FromStr for EpsHatMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "standard" | "sd" => Ok(Self::Standard),
            "acd" | "msd" => Ok(Self::Acd),
            other => Err(Error::Config(format!("unknown mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilizationConfig {
    /// `δ = C*/N` on the coarse region.
    pub c_star: f64,
    pub eps_hat_mode: EpsHatMode,
}

impl Default for StabilizationConfig {
    fn default() -> Self {
        Self {
            c_star: 0.5,
            eps_hat_mode: EpsHatMode::Standard,
        }
    }
}

impl StabilizationConfig {
    pub fn new(c_star: f64, eps_hat_mode: EpsHatMode) -> Self {
        Self {
            c_star,
            eps_hat_mode,
        }
    }

    pub fn delta(&self, region: Region, n: usize) -> f64 {
        match region {
            Region::S => self.c_star / n as f64,
            _ => 0.0,
        }
    }

    pub fn eps_hat(&self, region: Region, n: usize, epsilon: f64) -> f64 {
        match (self.eps_hat_mode, region) {
            (EpsHatMode::Acd, Region::S) => epsilon.max((n as f64).powf(-1.5)),
            _ => epsilon,
        }
    }
}

/// Per-triangle geometry and coefficients.
#[derive(Debug, Clone, Copy)]
pub struct Element {
    pub coords: [[f64; 2]; 3],
    pub area: f64,
    /// Gradients of the barycentric coordinates.
    pub grad: [[f64; 2]; 3],
    pub grad_beta: [f64; 3],
    pub grad_eta: [f64; 3],
    pub delta: f64,
    pub eps_hat: f64,
    pub region: Region,
}

impl Element {
    fn new(mesh: &ShishkinMesh, t: &Triangle, frame: &StreamlineFrame, delta: f64, eps_hat: f64) -> Self {
        let p = mesh.vertex_coords(t);
        let det = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[1][1] - p[0][1]) * (p[2][0] - p[0][0]);
        let grad = [
            [(p[1][1] - p[2][1]) / det, (p[2][0] - p[1][0]) / det],
            [(p[2][1] - p[0][1]) / det, (p[0][0] - p[2][0]) / det],
            [(p[0][1] - p[1][1]) / det, (p[1][0] - p[0][0]) / det],
        ];
        let mut grad_beta = [0.0; 3];
        let mut grad_eta = [0.0; 3];
        for a in 0..3 {
            let (gb, ge) = frame.project(grad[a]);
            grad_beta[a] = gb;
            grad_eta[a] = ge;
        }
        Self {
            coords: p,
            area: 0.5 * det,
            grad,
            grad_beta,
            grad_eta,
            delta,
            eps_hat,
            region: t.region,
        }
    }

    /// Barycentric coordinates of a point.
    pub fn barycentric(&self, x: [f64; 2]) -> [f64; 3] {
        let p0 = self.coords[0];
        let d = [x[0] - p0[0], x[1] - p0[1]];
        let l1 = self.grad[1][0] * d[0] + self.grad[1][1] * d[1];
        let l2 = self.grad[2][0] * d[0] + self.grad[2][1] * d[1];
        [1.0 - l1 - l2, l1, l2]
    }
}

/// Mesh, coefficients and per-element data shared by assembly and the norms.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub mesh: Arc<ShishkinMesh>,
    pub problem: ProblemData,
    pub stab: StabilizationConfig,
    pub frame: StreamlineFrame,
    pub elements: Vec<Element>,
}

impl Discretization {
    pub fn new(mesh: Arc<ShishkinMesh>, problem: ProblemData, stab: StabilizationConfig) -> Result<Self> {
        problem.validate()?;
        if !stab.c_star.is_finite() || stab.c_star < 0.0 {
            return Err(Error::InvalidProblem(format!("C* = {}", stab.c_star)));
        }
        let frame = problem.frame()?;
        let n = mesh.n();
        let elements = mesh
            .triangles()
            .iter()
            .map(|t| {
                Element::new(
                    &mesh,
                    t,
                    &frame,
                    stab.delta(t.region, n),
                    stab.eps_hat(t.region, n, problem.epsilon),
                )
            })
            .collect();
        Ok(Self {
            mesh,
            problem,
            stab,
            frame,
            elements,
        })
    }

    pub fn n_dofs(&self) -> usize {
        self.mesh.num_interior()
    }

    /// `δ_M = max δ`.
    pub fn delta_max(&self) -> f64 {
        self.elements.iter().map(|e| e.delta).fold(0.0, f64::max)
    }

    /// `ε̂_M = max ε̂`.
    pub fn eps_hat_max(&self) -> f64 {
        self.elements.iter().map(|e| e.eps_hat).fold(0.0, f64::max)
    }

    /// True when `δ` exceeds `h/(2|b|)` on some coarse element, `h` the shorter cell side.
    pub fn delta_exceeds_step_bound(&self) -> bool {
        let b = self.frame.b;
        self.mesh.triangles().iter().zip(&self.elements).any(|(t, e)| {
            let (hx, hy) = self.mesh.cell_sizes(t);
            e.delta > hx.min(hy) / (2.0 * b)
        })
    }

    /// `M[a][c] = a(φ_c, φ_a)` on one element.
    pub fn element_matrix(&self, e: &Element) -> [[f64; 3]; 3] {
        let p = &self.problem;
        let b = self.frame.b;
        let mut m = [[0.0; 3]; 3];
        for (a, row) in m.iter_mut().enumerate() {
            for (c, entry) in row.iter_mut().enumerate() {
                let mass = if a == c { e.area / 6.0 } else { e.area / 12.0 };
                *entry = e.area
                    * (p.epsilon * e.grad_beta[c] * e.grad_beta[a] + e.eps_hat * e.grad_eta[c] * e.grad_eta[a])
                    + b * e.grad_beta[c] * e.area / 3.0
                    + p.c * mass
                    + e.delta
                        * (b * b * e.grad_beta[c] * e.grad_beta[a] * e.area
                            + p.c * b * e.grad_beta[a] * e.area / 3.0);
            }
        }
        m
    }

    /// `(f, φ_a + δ b (φ_a)_β)` for the three vertices of an element.
    pub fn element_load(&self, e: &Element, level: usize) -> [f64; 3] {
        let rule = quad_rule(level);
        let b = self.frame.b;
        let mut out = [0.0; 3];
        for (q, w) in rule.weights.iter().enumerate() {
            let l = rule.points[q];
            let fx = (self.problem.source)(rule.point(q, &e.coords));
            for a in 0..3 {
                out[a] += w * fx * (l[a] + e.delta * b * e.grad_beta[a]);
            }
        }
        out.map(|v| v * e.area)
    }

    /// `a(u, v)` for two piecewise-linear functions given by all nodal values,
    /// boundary included.
    pub fn form_on_nodes(&self, u: &[f64], v: &[f64]) -> Result<f64> {
        let nn = self.mesh.num_nodes();
        for len in [u.len(), v.len()] {
            if len != nn {
                return Err(Error::DimensionMismatch {
                    expected: nn,
                    found: len,
                });
            }
        }
        let mut total = 0.0;
        for (t, e) in self.mesh.triangles().iter().zip(&self.elements) {
            let m = self.element_matrix(e);
            for a in 0..3 {
                for c in 0..3 {
                    total += v[t.vertices[a]] * m[a][c] * u[t.vertices[c]];
                }
            }
        }
        Ok(total)
    }
}

/// Stiffness matrix `A[i][j] = a(φ_j, φ_i)` and load vector over interior nodes.
#[derive(Debug, Clone)]
pub struct AssembledSystem {
    pub matrix: CsrMatrix,
    pub load: Vec<f64>,
}

impl AssembledSystem {
    pub fn n_dofs(&self) -> usize {
        self.load.len()
    }
}

pub fn assemble(disc: &Discretization) -> Result<AssembledSystem> {
    let mesh = &disc.mesh;
    let n_dofs = disc.n_dofs();

    // element contributions in parallel, scattered in triangle order
    let local: Vec<([[f64; 3]; 3], [f64; 3])> = disc
        .elements
        .par_iter()
        .map(|e| (disc.element_matrix(e), disc.element_load(e, LOAD_QUAD_LEVEL)))
        .collect();

    let mut triplets = Vec::with_capacity(9 * local.len());
    let mut load = vec![0.0; n_dofs];
    for (t, (m, f)) in mesh.triangles().iter().zip(&local) {
        let dofs = t.vertices.map(|v| mesh.dof_of_node(v));
        for a in 0..3 {
            let Some(row) = dofs[a] else { continue };
            load[row] += f[a];
            for c in 0..3 {
                if let Some(col) = dofs[c] {
                    triplets.push((row, col, m[a][c]));
                }
            }
        }
    }
    if triplets.iter().any(|t| !t.2.is_finite()) || load.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidProblem("non-finite entry in assembled system".into()));
    }
    Ok(AssembledSystem {
        matrix: CsrMatrix::from_triplets(n_dofs, n_dofs, &triplets),
        load,
    })
}

/// A member of the P1 space with zero boundary values.
#[derive(Debug, Clone)]
pub struct FEFunction {
    pub mesh: Arc<ShishkinMesh>,
    pub dofs: Vec<f64>,
}

impl FEFunction {
    pub fn new(mesh: Arc<ShishkinMesh>, dofs: Vec<f64>) -> Result<Self> {
        if dofs.len() != mesh.num_interior() {
            return Err(Error::DimensionMismatch {
                expected: mesh.num_interior(),
                found: dofs.len(),
            });
        }
        Ok(Self { mesh, dofs })
    }

    pub fn zero(mesh: Arc<ShishkinMesh>) -> Self {
        let n = mesh.num_interior();
        Self { mesh, dofs: vec![0.0; n] }
    }

    /// Nodal interpolant of `f`; boundary values are dropped.
    pub fn interpolate<F: Fn([f64; 2]) -> f64>(mesh: Arc<ShishkinMesh>, f: F) -> Self {
        let dofs = (0..mesh.num_interior())
            .map(|d| f(mesh.node_coords(mesh.node_of_dof(d))))
            .collect();
        Self { mesh, dofs }
    }

    /// Values at every node, zero on the boundary.
    pub fn nodal_values(&self) -> Vec<f64> {
        (0..self.mesh.num_nodes())
            .map(|id| self.mesh.dof_of_node(id).map_or(0.0, |d| self.dofs[d]))
            .collect()
    }

    pub fn node_value(&self, node: usize) -> f64 {
        self.mesh.dof_of_node(node).map_or(0.0, |d| self.dofs[d])
    }

    pub fn vertex_values(&self, t: &Triangle) -> [f64; 3] {
        t.vertices.map(|v| self.node_value(v))
    }

    pub fn evaluate(&self, disc: &Discretization, x: [f64; 2]) -> Result<f64> {
        let k = self.mesh.triangle_at(x)?;
        let t = &self.mesh.triangles()[k];
        if let Some(&v) = t.vertices.iter().find(|&&v| self.mesh.node_coords(v) == x) {
            return Ok(self.node_value(v));
        }
        let vals = self.vertex_values(t);
        let l = disc.elements[k].barycentric(x);
        Ok(l[0] * vals[0] + l[1] * vals[1] + l[2] * vals[2])
    }

    /// Constant gradient on triangle `k`.
    pub fn gradient(&self, disc: &Discretization, k: usize) -> [f64; 2] {
        let vals = self.vertex_values(&self.mesh.triangles()[k]);
        let e = &disc.elements[k];
        let mut g = [0.0; 2];
        for a in 0..3 {
            g[0] += vals[a] * e.grad[a][0];
            g[1] += vals[a] * e.grad[a][1];
        }
        g
    }

    /// `dirᵀ ∇v` on triangle `k`.
    pub fn directional_grad(&self, disc: &Discretization, k: usize, dir: [f64; 2]) -> f64 {
        let g = self.gradient(disc, k);
        g[0] * dir[0] + g[1] * dir[1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_mesh, MeshParams};

    fn disc(n: usize, eps: f64, b: (f64, f64), c: f64, stab: StabilizationConfig) -> Discretization {
        let mesh = Arc::new(build_mesh(&MeshParams::new(n, eps)).unwrap());
        Discretization::new(mesh, ProblemData::new(eps, b.0, b.1, c), stab).unwrap()
    }

    #[test]
    fn constants_give_reaction_only() {
        let d = disc(8, 1e-3, (1.0, 0.7), 1.3, StabilizationConfig::default());
        let ones = vec![1.0; d.mesh.num_nodes()];
        let v = d.form_on_nodes(&ones, &ones).unwrap();
        assert!((v - 1.3).abs() < 1e-13);
        assert!(d.form_on_nodes(&ones, &ones[1..]).is_err());
    }

    #[test]
    fn delta_and_eps_hat_by_region() {
        let stab = StabilizationConfig::new(0.5, EpsHatMode::Acd);
        let d = disc(16, 1e-6, (1.0, 1.0), 1.0, stab);
        for e in &d.elements {
            match e.region {
                Region::S => {
                    assert_eq!(e.delta, 0.5 / 16.0);
                    assert_eq!(e.eps_hat, 16f64.powf(-1.5));
                }
                _ => {
                    assert_eq!(e.delta, 0.0);
                    assert_eq!(e.eps_hat, 1e-6);
                }
            }
            assert!(e.eps_hat >= 1e-6 && e.eps_hat <= 1.0 / 16.0);
        }
        assert_eq!(d.delta_max(), 0.5 / 16.0);
    }

    #[test]
    fn sparsity_is_seven_point() {
        let d = disc(8, 1e-3, (1.0, 1.0), 1.0, StabilizationConfig::default());
        let sys = assemble(&d).unwrap();
        let m = &d.mesh;
        assert_eq!(sys.n_dofs(), 49);
        for row in 0..sys.n_dofs() {
            let (cols, _) = sys.matrix.row(row);
            assert!(cols.len() <= 7);
            let (i, j) = m.node_indices(m.node_of_dof(row));
            let mut expected: Vec<usize> = [(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1), (1, -1), (-1, 1)]
                .iter()
                .filter_map(|&(di, dj)| m.dof((i as i64 + di) as usize, (j as i64 + dj) as usize))
                .collect();
            expected.sort();
            assert_eq!(cols, expected.as_slice());
        }
    }

    #[test]
    fn symmetric_part_is_diffusion() {
        // with δ = 0 and c = 0 the convection block is skew on V^N
        let eps = 1e-2;
        let d = disc(8, eps, (1.0, 0.0), 0.0, StabilizationConfig::new(0.0, EpsHatMode::Standard));
        let a = assemble(&d).unwrap().matrix.to_dense();
        let mut k = vec![vec![0.0; a.len()]; a.len()];
        for (t, e) in d.mesh.triangles().iter().zip(&d.elements) {
            for p in 0..3 {
                for q in 0..3 {
                    if let (Some(r), Some(c)) = (d.mesh.dof_of_node(t.vertices[p]), d.mesh.dof_of_node(t.vertices[q])) {
                        k[r][c] += eps * e.area * (e.grad[p][0] * e.grad[q][0] + e.grad[p][1] * e.grad[q][1]);
                    }
                }
            }
        }
        for i in 0..a.len() {
            for j in 0..a.len() {
                assert!((0.5 * (a[i][j] + a[j][i]) - k[i][j]).abs() < 1e-14);
            }
            let off: f64 = (0..a.len()).filter(|&j| j != i).map(|j| k[i][j].abs()).sum();
            assert!(k[i][i] > 0.0 && k[i][i] >= off - 1e-14);
        }
    }

    #[test]
    fn plane_reproduction() {
        let mesh = Arc::new(build_mesh(&MeshParams::new(8, 1e-3)).unwrap());
        let d = Discretization::new(mesh.clone(), ProblemData::new(1e-3, 1.0, 0.0, 1.0), StabilizationConfig::default()).unwrap();
        let v = FEFunction::interpolate(mesh.clone(), |p| 2.0 * p[0] + 3.0 * p[1]);
        // only triangles away from the boundary see the full plane
        for (k, t) in mesh.triangles().iter().enumerate() {
            if t.vertices.iter().all(|&n| mesh.dof_of_node(n).is_some()) {
                assert!((v.directional_grad(&d, k, d.frame.beta_dir) - 2.0).abs() < 1e-9);
            }
        }
        for dof in 0..mesh.num_interior() {
            let x = mesh.node_coords(mesh.node_of_dof(dof));
            assert_eq!(v.evaluate(&d, x).unwrap(), v.dofs[dof]);
        }
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("ACD".parse::<EpsHatMode>().unwrap(), EpsHatMode::Acd);
        assert_eq!("standard".parse::<EpsHatMode>().unwrap(), EpsHatMode::Standard);
        assert!("other".parse::<EpsHatMode>().is_err());
    }
}
