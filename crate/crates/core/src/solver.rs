//! Direct solver for the nonsymmetric stiffness matrices.
//!
//! With lexicographic node numbering the seven-point stencil has bandwidth
//! `N - 1`, so a banded LU with partial pivoting is a sparse direct
//! factorisation with fill confined to the band. Rows and columns are
//! equilibrated first: entries in the layer elements are many orders of
//! magnitude smaller than in the coarse region. One factorisation serves
//! both `A x = b` and `Aᵀ x = b`.

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// Residual target, `‖b - A x‖∞ / ‖b‖∞`.
pub const RESIDUAL_TOL: f64 = 1e-10;

const MAX_REFINEMENT_STEPS: usize = 4;

#[derive(Debug, Clone)]
pub struct Solution {
    pub x: Vec<f64>,
    /// Relative residual in the infinity norm.
    pub residual: f64,
    pub refinement_steps: usize,
}

/// LU factors of `R A C` in LAPACK-style band storage.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    ld: usize,
    ab: Vec<f64>,
    piv: Vec<usize>,
    row_scale: Vec<f64>,
    col_scale: Vec<f64>,
    matrix: CsrMatrix,
    pivot_ratio: f64,
}

impl BandedLu {
    #[inline]
    fn at(&self, i: usize, j: usize) -> usize {
        j * self.ld + self.kl + self.ku + i - j
    }

    pub fn factorize(a: &CsrMatrix) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: a.ncols(),
            });
        }
        let (kl, ku) = a.bandwidths();
        let ld = 2 * kl + ku + 1;

        let mut row_scale = vec![0.0; n];
        for (r, _, v) in a.triplets() {
            row_scale[r] = f64::max(row_scale[r], v.abs());
        }
        for (r, s) in row_scale.iter_mut().enumerate() {
            if *s == 0.0 || !s.is_finite() {
                return Err(Error::Singular { column: r });
            }
            *s = 1.0 / *s;
        }
        let mut col_scale = vec![0.0; n];
        for (r, c, v) in a.triplets() {
            col_scale[c] = f64::max(col_scale[c], (v * row_scale[r]).abs());
        }
        for (c, s) in col_scale.iter_mut().enumerate() {
            if *s == 0.0 {
                return Err(Error::Singular { column: c });
            }
            *s = 1.0 / *s;
        }

        let mut lu = Self {
            n,
            kl,
            ku,
            ld,
            ab: vec![0.0; ld * n],
            piv: vec![0; n],
            row_scale,
            col_scale,
            matrix: a.clone(),
            pivot_ratio: 1.0,
        };
        for (r, c, v) in a.triplets() {
            let k = lu.at(r, c);
            lu.ab[k] = lu.row_scale[r] * v * lu.col_scale[c];
        }
        lu.eliminate()?;
        Ok(lu)
    }

    fn eliminate(&mut self) -> Result<()> {
        let (n, kl, ku, ld) = (self.n, self.kl, self.ku, self.ld);
        let diag = kl + ku;
        let mut pmax = 0.0f64;
        let mut pmin = f64::INFINITY;
        for k in 0..n {
            let km = kl.min(n - 1 - k);
            let col_k = k * ld + diag; // position of (k, k)
            let mut p = 0;
            let mut best = self.ab[col_k].abs();
            for t in 1..=km {
                let v = self.ab[col_k + t].abs();
                if v > best {
                    best = v;
                    p = t;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(Error::Singular { column: k });
            }
            self.piv[k] = k + p;
            let last = (n - 1).min(k + ku + kl);
            if p != 0 {
                for j in k..=last {
                    let base = j * ld + diag + k - j;
                    self.ab.swap(base, base + p);
                }
            }
            let pivot = self.ab[col_k];
            pmax = pmax.max(pivot.abs());
            pmin = pmin.min(pivot.abs());
            let inv = 1.0 / pivot;
            for t in 1..=km {
                self.ab[col_k + t] *= inv;
            }
            if km == 0 {
                continue;
            }
            let (head, tail) = self.ab.split_at_mut((k + 1) * ld);
            let mult = &head[col_k + 1..col_k + 1 + km];
            for j in k + 1..=last {
                let base = (j - k - 1) * ld + diag + k - j;
                let t = tail[base];
                if t != 0.0 {
                    for (dst, &l) in tail[base + 1..base + 1 + km].iter_mut().zip(mult) {
                        *dst -= l * t;
                    }
                }
            }
        }
        self.pivot_ratio = pmax / pmin;
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `max |u_kk| / min |u_kk|` of the equilibrated factors, a cheap conditioning indicator.
    pub fn pivot_ratio(&self) -> f64 {
        self.pivot_ratio
    }

    fn apply_inverse(&self, y: &mut [f64]) {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        for k in 0..n {
            let p = self.piv[k];
            y.swap(k, p);
            let km = kl.min(n - 1 - k);
            let yk = y[k];
            if yk != 0.0 {
                let c = self.at(k, k);
                for t in 1..=km {
                    y[k + t] -= self.ab[c + t] * yk;
                }
            }
        }
        for k in (0..n).rev() {
            y[k] /= self.ab[self.at(k, k)];
            let yk = y[k];
            if yk != 0.0 {
                let top = k.saturating_sub(ku + kl);
                let c = self.at(top, k);
                for (t, yi) in y[top..k].iter_mut().enumerate() {
                    *yi -= self.ab[c + t] * yk;
                }
            }
        }
    }

    fn apply_inverse_transpose(&self, y: &mut [f64]) {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        for k in 0..n {
            let top = k.saturating_sub(ku + kl);
            let c = self.at(top, k);
            let s: f64 = y[top..k]
                .iter()
                .zip(&self.ab[c..c + (k - top)])
                .map(|(a, b)| a * b)
                .sum();
            y[k] = (y[k] - s) / self.ab[self.at(k, k)];
        }
        for k in (0..n).rev() {
            let km = kl.min(n - 1 - k);
            let c = self.at(k, k);
            let s: f64 = (1..=km).map(|t| self.ab[c + t] * y[k + t]).sum();
            y[k] -= s;
            let p = self.piv[k];
            y.swap(k, p);
        }
    }

    /// One pass through the factors, no refinement.
    fn solve_once(&self, rhs: &[f64], transpose: bool) -> Vec<f64> {
        let (pre, post) = if transpose {
            (&self.col_scale, &self.row_scale)
        } else {
            (&self.row_scale, &self.col_scale)
        };
        let mut y: Vec<f64> = rhs.iter().zip(pre).map(|(b, s)| b * s).collect();
        if transpose {
            self.apply_inverse_transpose(&mut y);
        } else {
            self.apply_inverse(&mut y);
        }
        y.iter_mut().zip(post).for_each(|(v, s)| *v *= s);
        y
    }

    fn residual(&self, rhs: &[f64], x: &[f64], transpose: bool) -> Vec<f64> {
        let ax = if transpose {
            self.matrix.matvec_transpose(x)
        } else {
            self.matrix.matvec(x)
        };
        rhs.iter().zip(ax).map(|(b, v)| b - v).collect()
    }

    /// Solve `A x = rhs` (or `Aᵀ x = rhs`) with iterative refinement.
    pub fn solve(&self, rhs: &[f64], transpose: bool) -> Result<Solution> {
        if rhs.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: rhs.len(),
            });
        }
        let norm_inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let scale = norm_inf(rhs);
        if scale == 0.0 {
            return Ok(Solution {
                x: vec![0.0; self.n],
                residual: 0.0,
                refinement_steps: 0,
            });
        }
        let mut x = self.solve_once(rhs, transpose);
        let mut r = self.residual(rhs, &x, transpose);
        let mut res = norm_inf(&r) / scale;
        let mut steps = 0;
        while steps < MAX_REFINEMENT_STEPS && res > f64::EPSILON {
            let dx = self.solve_once(&r, transpose);
            let candidate: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a + b).collect();
            let r_new = self.residual(rhs, &candidate, transpose);
            let res_new = norm_inf(&r_new) / scale;
            steps += 1;
            if !(res_new < res) {
                break;
            }
            x = candidate;
            r = r_new;
            res = res_new;
        }
        if !(res <= RESIDUAL_TOL) || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::SolveFailed {
                residual: res,
                condition_estimate: self.pivot_ratio,
            });
        }
        Ok(Solution {
            x,
            residual: res,
            refinement_steps: steps,
        })
    }
}

/// Factorise and solve once.
pub fn linear_solve(a: &CsrMatrix, rhs: &[f64], transpose: bool) -> Result<Vec<f64>> {
    Ok(BandedLu::factorize(a)?.solve(rhs, transpose)?.x)
}
