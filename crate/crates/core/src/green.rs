//! Forward solves and discrete Green functions.
//!
//! The discrete Green function for a node `x*` is the `G ∈ V^N` with
//! `a(v, G) = v(x*)` for all `v`, which in matrix form is `Aᵀ g = e_{i*}`.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::assembly::{AssembledSystem, Discretization, FEFunction};
use crate::error::{Error, Result};
use crate::solver::{BandedLu, Solution};

#[derive(Debug, Clone)]
pub struct ForwardSolution {
    pub fe: FEFunction,
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct GreenFunction {
    pub fe: FEFunction,
    /// Mesh indices of the pole.
    pub node: (usize, usize),
    pub x_star: [f64; 2],
    pub dof: usize,
    pub residual: f64,
}

impl GreenFunction {
    /// `G(x*)`.
    pub fn pole_value(&self) -> f64 {
        self.fe.dofs[self.dof]
    }
}

/// A factorised system serving any number of forward and Green solves.
#[derive(Debug)]
pub struct GreenSolver<'a> {
    disc: &'a Discretization,
    system: &'a AssembledSystem,
    lu: BandedLu,
}

impl<'a> GreenSolver<'a> {
    pub fn new(disc: &'a Discretization, system: &'a AssembledSystem) -> Result<Self> {
        if system.n_dofs() != disc.n_dofs() {
            return Err(Error::DimensionMismatch {
                expected: disc.n_dofs(),
                found: system.n_dofs(),
            });
        }
        Ok(Self {
            disc,
            system,
            lu: BandedLu::factorize(&system.matrix)?,
        })
    }

    pub fn factorization(&self) -> &BandedLu {
        &self.lu
    }

    pub fn forward(&self) -> Result<ForwardSolution> {
        let Solution { x, residual, .. } = self.lu.solve(&self.system.load, false)?;
        Ok(ForwardSolution {
            fe: FEFunction::new(self.disc.mesh.clone(), x)?,
            residual,
        })
    }

    /// Green function for the interior node `(i, j)`.
    pub fn green(&self, i: usize, j: usize) -> Result<GreenFunction> {
        let mesh = &self.disc.mesh;
        let dof = mesh.dof(i, j).ok_or(Error::NotInteriorNode(i, j))?;
        let mut rhs = vec![0.0; self.disc.n_dofs()];
        rhs[dof] = 1.0;
        let Solution { x, residual, .. } = self.lu.solve(&rhs, true)?;
        Ok(GreenFunction {
            fe: FEFunction::new(mesh.clone(), x)?,
            node: (i, j),
            x_star: mesh.node_coords(mesh.node_id(i, j)),
            dof,
            residual,
        })
    }
}

pub fn solve_forward(disc: &Discretization, system: &AssembledSystem) -> Result<ForwardSolution> {
    GreenSolver::new(disc, system)?.forward()
}

pub fn solve_green(
    disc: &Discretization,
    system: &AssembledSystem,
    node: (usize, usize),
) -> Result<GreenFunction> {
    GreenSolver::new(disc, system)?.green(node.0, node.1)
}

/// One line of a nodal dump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NodalRow {
    pub i: usize,
    pub j: usize,
    pub x: f64,
    pub y: f64,
    pub value: f64,
}

/// Every node of the mesh, boundary included, `i` fastest.
pub fn nodal_rows(fe: &FEFunction) -> Vec<NodalRow> {
    let mesh = &fe.mesh;
    (0..mesh.num_nodes())
        .map(|id| {
            let (i, j) = mesh.node_indices(id);
            let [x, y] = mesh.node_coords(id);
            NodalRow {
                i,
                j,
                x,
                y,
                value: fe.node_value(id),
            }
        })
        .collect()
}

/// Write `i,j,x,y,G` rows as CSV.
pub fn write_nodal_csv(fe: &FEFunction, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "i,j,x,y,G")?;
    for r in nodal_rows(fe) {
        writeln!(out, "{},{},{:.16e},{:.16e},{:.16e}", r.i, r.j, r.x, r.y, r.value)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_nodal_json(fe: &FEFunction, path: &Path) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(file, &nodal_rows(fe))?;
    Ok(())
}
