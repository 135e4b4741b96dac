//! Piecewise-uniform Shishkin triangulation of the unit square.
//!
//! The mesh has `N` intervals per direction. Half of them cover the coarse
//! part `[0, 1 - λ]`, the other half the layer `[1 - λ, 1]` at the outflow
//! sides `x = 1` and `y = 1`. Every rectangle `[x_i, x_{i+1}] × [y_j, y_{j+1}]`
//! is cut along the diagonal from `(x_i, y_{j+1})` to `(x_{i+1}, y_j)`.
//!
//! Triangles and nodes on the transition lines `x = 1 - λx`, `y = 1 - λy`
//! belong to the fine side: a point with `x >= 1 - λx` is in `Ω_x` (or
//! `Ω_xy`). Triangles never straddle a transition line, so their tag is
//! determined by the cell index alone.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Transition constant used throughout the analysis.
pub const DEFAULT_RHO: f64 = 2.5;

/// Inputs of the mesh construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeshParams {
    /// Intervals per direction (even, at least 4).
    pub n: usize,
    pub epsilon: f64,
    pub rho: f64,
    /// Lower bound for `b1` entering `λx`.
    pub beta1: f64,
    /// Lower bound for `b2` entering `λy`.
    pub beta2: f64,
}

impl MeshParams {
    /// Parameters with `ρ = 2.5` and unit convection bounds.
    pub fn new(n: usize, epsilon: f64) -> Self {
        Self {
            n,
            epsilon,
            rho: DEFAULT_RHO,
            beta1: 1.0,
            beta2: 1.0,
        }
    }

    pub fn with_rho(mut self, rho: f64) -> Self {
        self.rho = rho;
        self
    }

    pub fn with_betas(mut self, beta1: f64, beta2: f64) -> Self {
        self.beta1 = beta1;
        self.beta2 = beta2;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n % 2 != 0 {
            return Err(Error::InvalidMesh(format!("N must be even (got {})", self.n)));
        }
        if self.n < 4 {
            return Err(Error::InvalidMesh(format!("N must be at least 4 (got {})", self.n)));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::InvalidMesh(format!(
                "epsilon must be positive and finite (got {})",
                self.epsilon
            )));
        }
        if !(self.rho.is_finite() && self.rho > 0.0) {
            return Err(Error::InvalidMesh(format!("rho must be positive (got {})", self.rho)));
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidMesh(format!("{name} must be positive (got {v})")));
            }
        }
        Ok(())
    }

    /// `ε <= 1/N`, the regime the estimates are stated for.
    pub fn satisfies_eps_assumption(&self) -> bool {
        self.epsilon <= 1.0 / self.n as f64
    }

    pub fn is_standard_rho(&self) -> bool {
        self.rho == DEFAULT_RHO
    }
}

/// Transition points and the two mesh sizes in each direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionParams {
    pub lambda_x: f64,
    pub lambda_y: f64,
    /// Coarse step in x, `(1 - λx) / (N/2)`.
    pub coarse_x: f64,
    /// Fine step in x, `λx / (N/2)`.
    pub fine_x: f64,
    pub coarse_y: f64,
    pub fine_y: f64,
    /// `λx` saturated at 1/2, so the x-mesh is uniform.
    pub degenerate_x: bool,
    pub degenerate_y: bool,
}

impl TransitionParams {
    pub fn is_degenerate(&self) -> bool {
        self.degenerate_x || self.degenerate_y
    }
}

fn transition(rho: f64, epsilon: f64, beta: f64, n: usize) -> (f64, bool) {
    let layer = rho * epsilon / beta * (n as f64).ln();
    if layer >= 0.5 {
        (0.5, true)
    } else {
        (layer, false)
    }
}

pub fn compute_transitions(p: &MeshParams) -> Result<TransitionParams> {
    p.validate()?;
    let half = (p.n / 2) as f64;
    let (lambda_x, degenerate_x) = transition(p.rho, p.epsilon, p.beta1, p.n);
    let (lambda_y, degenerate_y) = transition(p.rho, p.epsilon, p.beta2, p.n);
    Ok(TransitionParams {
        lambda_x,
        lambda_y,
        coarse_x: (1.0 - lambda_x) / half,
        fine_x: lambda_x / half,
        coarse_y: (1.0 - lambda_y) / half,
        fine_y: lambda_y / half,
        degenerate_x,
        degenerate_y,
    })
}

/// Node coordinate `i` of a Shishkin mesh with `n` intervals and transition `lambda`.
///
/// Evaluated directly from the piecewise formula so that the node `n/2`
/// equals `1 - lambda` bit for bit.
pub fn shishkin_coordinate(i: usize, n: usize, lambda: f64) -> f64 {
    let half = n / 2;
    if i <= half {
        (i as f64 / half as f64) * (1.0 - lambda)
    } else {
        1.0 - ((n - i) as f64 / half as f64) * lambda
    }
}

/// One of the four closed subdomains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Region {
    /// Coarse region `[0, 1-λx] × [0, 1-λy]`.
    S,
    /// Layer at `x = 1`.
    X,
    /// Layer at `y = 1`.
    Y,
    /// Corner layer.
    XY,
}

impl Region {
    pub const ALL: [Region; 4] = [Region::S, Region::X, Region::Y, Region::XY];

    pub fn index(self) -> usize {
        match self {
            Region::S => 0,
            Region::X => 1,
            Region::Y => 2,
            Region::XY => 3,
        }
    }

    fn from_sides(fine_x: bool, fine_y: bool) -> Self {
        match (fine_x, fine_y) {
            (false, false) => Region::S,
            (true, false) => Region::X,
            (false, true) => Region::Y,
            (true, true) => Region::XY,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Region::S => "S",
            Region::X => "X",
            Region::Y => "Y",
            Region::XY => "XY",
        }
    }
}

impl std::fmt::Display for Region {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// `K1` has vertices `(i,j), (i+1,j), (i,j+1)`; `K2` has `(i,j+1), (i+1,j), (i+1,j+1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Orientation {
    K1,
    K2,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triangle {
    /// Global node ids, counter-clockwise.
    pub vertices: [usize; 3],
    pub orientation: Orientation,
    pub region: Region,
    /// Lower-left corner `(i, j)` of the rectangle containing the triangle.
    pub cell: (usize, usize),
}

#[derive(Debug, Clone)]
pub struct ShishkinMesh {
    params: MeshParams,
    transitions: TransitionParams,
    xs: Vec<f64>,
    ys: Vec<f64>,
    triangles: Vec<Triangle>,
}

pub fn build_mesh(p: &MeshParams) -> Result<ShishkinMesh> {
    ShishkinMesh::new(*p)
}

impl ShishkinMesh {
    pub fn new(params: MeshParams) -> Result<Self> {
        let transitions = compute_transitions(&params)?;
        let n = params.n;
        let xs: Vec<f64> = (0..=n)
            .map(|i| shishkin_coordinate(i, n, transitions.lambda_x))
            .collect();
        let ys: Vec<f64> = (0..=n)
            .map(|j| shishkin_coordinate(j, n, transitions.lambda_y))
            .collect();

        let half = n / 2;
        let node = |i: usize, j: usize| j * (n + 1) + i;
        let mut triangles = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                let region = Region::from_sides(i >= half, j >= half);
                triangles.push(Triangle {
                    vertices: [node(i, j), node(i + 1, j), node(i, j + 1)],
                    orientation: Orientation::K1,
                    region,
                    cell: (i, j),
                });
                triangles.push(Triangle {
                    vertices: [node(i, j + 1), node(i + 1, j), node(i + 1, j + 1)],
                    orientation: Orientation::K2,
                    region,
                    cell: (i, j),
                });
            }
        }
        Ok(Self {
            params,
            transitions,
            xs,
            ys,
            triangles,
        })
    }

    pub fn params(&self) -> &MeshParams {
        &self.params
    }

    pub fn transitions(&self) -> &TransitionParams {
        &self.transitions
    }

    pub fn n(&self) -> usize {
        self.params.n
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn triangles(&self) -> &[Triangle] {
        &self.triangles
    }

    pub fn num_nodes(&self) -> usize {
        (self.n() + 1) * (self.n() + 1)
    }

    pub fn num_interior(&self) -> usize {
        (self.n() - 1) * (self.n() - 1)
    }

    /// `x = 1 - λx`, identical to `xs[N/2]`.
    pub fn transition_x(&self) -> f64 {
        self.xs[self.n() / 2]
    }

    pub fn transition_y(&self) -> f64 {
        self.ys[self.n() / 2]
    }

    pub fn node_id(&self, i: usize, j: usize) -> usize {
        j * (self.n() + 1) + i
    }

    pub fn node_indices(&self, id: usize) -> (usize, usize) {
        (id % (self.n() + 1), id / (self.n() + 1))
    }

    pub fn node_coords(&self, id: usize) -> [f64; 2] {
        let (i, j) = self.node_indices(id);
        [self.xs[i], self.ys[j]]
    }

    /// Degree of freedom of a node, `None` on the boundary.
    ///
    /// Interior nodes are numbered lexicographically, `i` fastest.
    pub fn dof_of_node(&self, id: usize) -> Option<usize> {
        let n = self.n();
        let (i, j) = self.node_indices(id);
        if i == 0 || j == 0 || i == n || j == n {
            None
        } else {
            Some((j - 1) * (n - 1) + (i - 1))
        }
    }

    pub fn dof(&self, i: usize, j: usize) -> Option<usize> {
        if i > self.n() || j > self.n() {
            return None;
        }
        self.dof_of_node(self.node_id(i, j))
    }

    pub fn node_of_dof(&self, dof: usize) -> usize {
        let m = self.n() - 1;
        self.node_id(dof % m + 1, dof / m + 1)
    }

    pub fn vertex_coords(&self, t: &Triangle) -> [[f64; 2]; 3] {
        t.vertices.map(|v| self.node_coords(v))
    }

    pub fn area(&self, t: &Triangle) -> f64 {
        let (i, j) = t.cell;
        0.5 * (self.xs[i + 1] - self.xs[i]) * (self.ys[j + 1] - self.ys[j])
    }

    fn check_inside(&self, p: [f64; 2]) -> Result<()> {
        let inside = |v: f64| (0.0..=1.0).contains(&v);
        if inside(p[0]) && inside(p[1]) {
            Ok(())
        } else {
            Err(Error::PointOutside(p[0], p[1]))
        }
    }

    /// Region of a point in the closed square, fine side taking transition lines.
    pub fn region_of(&self, p: [f64; 2]) -> Result<Region> {
        self.check_inside(p)?;
        Ok(Region::from_sides(
            p[0] >= self.transition_x(),
            p[1] >= self.transition_y(),
        ))
    }

    /// Index into [`Self::triangles`] of a triangle containing `p`.
    ///
    /// Points on shared edges resolve to the cell with the larger index
    /// (except on `x = 1` / `y = 1`), and to `K1` on the diagonal.
    pub fn triangle_at(&self, p: [f64; 2]) -> Result<usize> {
        self.check_inside(p)?;
        let n = self.n();
        let cell = |coords: &[f64], v: f64| {
            // last index with coords[k] <= v, capped at n-1
            let k = coords.partition_point(|&c| c <= v);
            k.saturating_sub(1).min(n - 1)
        };
        let i = cell(&self.xs, p[0]);
        let j = cell(&self.ys, p[1]);
        let xi = (p[0] - self.xs[i]) / (self.xs[i + 1] - self.xs[i]);
        let zeta = (p[1] - self.ys[j]) / (self.ys[j + 1] - self.ys[j]);
        let base = 2 * (j * n + i);
        Ok(if xi + zeta <= 1.0 { base } else { base + 1 })
    }

    /// Mesh sizes `(h_x, h_y)` of the cell holding triangle `t`.
    pub fn cell_sizes(&self, t: &Triangle) -> (f64, f64) {
        let (i, j) = t.cell;
        (self.xs[i + 1] - self.xs[i], self.ys[j + 1] - self.ys[j])
    }

    pub fn summary(&self) -> MeshSummary {
        let p = &self.params;
        let t = &self.transitions;
        MeshSummary {
            n: p.n,
            epsilon: p.epsilon,
            rho: p.rho,
            beta1: p.beta1,
            beta2: p.beta2,
            lambda_x: t.lambda_x,
            lambda_y: t.lambda_y,
            coarse_x: t.coarse_x,
            fine_x: t.fine_x,
            coarse_y: t.coarse_y,
            fine_y: t.fine_y,
            degenerate: t.is_degenerate(),
            eps_assumption_holds: p.satisfies_eps_assumption(),
            standard_rho: p.is_standard_rho(),
            nodes: self.num_nodes(),
            interior_nodes: self.num_interior(),
            triangles: self.triangles.len(),
        }
    }
}

/// JSON-facing summary of a mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshSummary {
    #[serde(rename = "N")]
    pub n: usize,
    pub epsilon: f64,
    pub rho: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub lambda_x: f64,
    pub lambda_y: f64,
    #[serde(rename = "H_x")]
    pub coarse_x: f64,
    #[serde(rename = "h_x")]
    pub fine_x: f64,
    #[serde(rename = "H_y")]
    pub coarse_y: f64,
    #[serde(rename = "h_y")]
    pub fine_y: f64,
    pub degenerate: bool,
    pub eps_assumption_holds: bool,
    pub standard_rho: bool,
    pub nodes: usize,
    pub interior_nodes: usize,
    pub triangles: usize,
}
