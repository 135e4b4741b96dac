//! Energy norms, weighted norms and interpolation-error diagnostics.
//!
//! The weighted quantities for a Green function `G` and weight `ω` are
//! evaluated in one sweep over the elements, sharing quadrature points:
//!
//! * the five terms of `|||G|||²_ω`,
//! * `a(ω⁻¹G, G)` and the three correction terms relating it to `|||G|||²_ω`,
//! * `E = ω⁻¹G - (ω⁻¹G)^I` through `a(E, G)`, `‖ω^{1/2}E‖`, `‖ω^{1/2}E_β‖`, `‖ω^{1/2}E_η‖`.
//!
//! Derivatives of `ω⁻¹G` use the product rule with the analytic weight
//! derivatives. Region restrictions follow the triangle tags.

use std::ops::{Add, AddAssign};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::{Discretization, FEFunction, LOAD_QUAD_LEVEL};
use crate::error::{Error, Result};
use crate::green::GreenFunction;
use crate::mesh::Region;
use crate::quadrature::quad_rule;
use crate::weight::WeightSpec;

/// Relative residual allowed in the algebraic identities.
pub const IDENTITY_TOL: f64 = 1e-7;

/// The five squared terms of the (weighted) energy norm.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct NormTerms {
    /// `ε ‖ω^{-1/2} v_β‖²`.
    pub eps_beta: f64,
    /// `ε̂ ‖ω^{-1/2} v_η‖²`.
    pub eps_hat_eta: f64,
    /// `c ‖ω^{-1/2} v‖²`.
    pub l2: f64,
    /// `Σ_K δ_K ‖b ω^{-1/2} v_β‖²_K`.
    pub sd: f64,
    /// `(b/2) ‖(ω⁻¹)_β^{1/2} v‖²`, zero for the unweighted norm.
    pub weight_convective: f64,
}

impl NormTerms {
    pub fn total(&self) -> f64 {
        self.eps_beta + self.eps_hat_eta + self.l2 + self.sd + self.weight_convective
    }

    pub fn norm(&self) -> f64 {
        self.total().sqrt()
    }
}

impl Add for NormTerms {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            eps_beta: self.eps_beta + o.eps_beta,
            eps_hat_eta: self.eps_hat_eta + o.eps_hat_eta,
            l2: self.l2 + o.l2,
            sd: self.sd + o.sd,
            weight_convective: self.weight_convective + o.weight_convective,
        }
    }
}

impl AddAssign for NormTerms {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

/// Squared norm terms, globally and per region.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct NormBreakdown {
    pub global: NormTerms,
    pub s: NormTerms,
    pub x: NormTerms,
    pub y: NormTerms,
    pub xy: NormTerms,
}

impl NormBreakdown {
    fn from_regions(r: [NormTerms; 4]) -> Self {
        Self {
            global: r[0] + r[1] + r[2] + r[3],
            s: r[0],
            x: r[1],
            y: r[2],
            xy: r[3],
        }
    }

    pub fn region(&self, r: Region) -> &NormTerms {
        match r {
            Region::S => &self.s,
            Region::X => &self.x,
            Region::Y => &self.y,
            Region::XY => &self.xy,
        }
    }

    /// Terms summed over the layer regions `Ω \ Ω_s`.
    pub fn outside_s(&self) -> NormTerms {
        self.x + self.y + self.xy
    }

    pub fn norm(&self) -> f64 {
        self.global.norm()
    }
}

/// Elementwise quadrature controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadOptions {
    pub base_depth: usize,
    pub max_depth: usize,
    /// Stop refining once the weighted norm changes by less than this, relatively.
    pub rel_tol: f64,
    /// Sum element contributions in mesh order.
    pub deterministic: bool,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self {
            base_depth: 2,
            max_depth: 5,
            rel_tol: 1e-8,
            deterministic: true,
        }
    }
}

fn reduce_by_region<T, F>(disc: &Discretization, deterministic: bool, f: F) -> [T; 4]
where
    T: Default + Copy + AddAssign + Send,
    F: Fn(usize) -> T + Sync + Send,
{
    let regions: Vec<usize> = disc.elements.iter().map(|e| e.region.index()).collect();
    if deterministic {
        let parts: Vec<T> = (0..disc.elements.len()).into_par_iter().map(&f).collect();
        let mut out = [T::default(); 4];
        for (v, r) in parts.into_iter().zip(regions) {
            out[r] += v;
        }
        out
    } else {
        (0..disc.elements.len())
            .into_par_iter()
            .fold(
                || [T::default(); 4],
                |mut acc, k| {
                    acc[regions[k]] += f(k);
                    acc
                },
            )
            .reduce(
                || [T::default(); 4],
                |mut a, b| {
                    for i in 0..4 {
                        a[i] += b[i];
                    }
                    a
                },
            )
    }
}

/// Unweighted energy norm `‖v‖²_MSD` split into its terms.
///
/// Gradient terms are exact (piecewise constants); the `L²` term uses the
/// exact P1 mass matrix.
pub fn msd_norm(disc: &Discretization, v: &FEFunction) -> NormBreakdown {
    let mesh = &disc.mesh;
    let p = &disc.problem;
    let b = disc.frame.b;
    let regions = reduce_by_region(disc, true, |k| {
        let e = &disc.elements[k];
        let vals = v.vertex_values(&mesh.triangles()[k]);
        let vb: f64 = (0..3).map(|a| vals[a] * e.grad_beta[a]).sum();
        let ve: f64 = (0..3).map(|a| vals[a] * e.grad_eta[a]).sum();
        let sum: f64 = vals.iter().sum();
        let sq: f64 = vals.iter().map(|x| x * x).sum();
        NormTerms {
            eps_beta: p.epsilon * e.area * vb * vb,
            eps_hat_eta: e.eps_hat * e.area * ve * ve,
            l2: p.c * e.area / 12.0 * (sum * sum + sq),
            sd: e.delta * b * b * e.area * vb * vb,
            weight_convective: 0.0,
        }
    });
    NormBreakdown::from_regions(regions)
}

/// `(f, v + δ b v_β)` by quadrature at the load level.
pub fn load_functional(disc: &Discretization, v: &FEFunction) -> f64 {
    let rule = quad_rule(LOAD_QUAD_LEVEL);
    let b = disc.frame.b;
    let parts = reduce_by_region(disc, true, |k| {
        let e = &disc.elements[k];
        let vals = v.vertex_values(&disc.mesh.triangles()[k]);
        let vb: f64 = (0..3).map(|a| vals[a] * e.grad_beta[a]).sum();
        let mut s = 0.0;
        for (q, w) in rule.weights.iter().enumerate() {
            let l = rule.points[q];
            let vq = l[0] * vals[0] + l[1] * vals[1] + l[2] * vals[2];
            s += w * (disc.problem.source)(rule.point(q, &e.coords)) * (vq + e.delta * b * vb);
        }
        s * e.area
    });
    parts.iter().sum()
}

/// `E(x) = (ω⁻¹G)(x) - (ω⁻¹G)^I(x)` at one point.
pub fn interpolation_error_at(disc: &Discretization, g: &FEFunction, w: &WeightSpec, x: [f64; 2]) -> Result<f64> {
    let mesh = &disc.mesh;
    let k = mesh.triangle_at(x)?;
    let t = &mesh.triangles()[k];
    let interp = t.vertices.map(|v| w.omega_inv(mesh.node_coords(v)) * g.node_value(v));
    let l = match t.vertices.iter().position(|&v| mesh.node_coords(v) == x) {
        Some(a) => {
            let mut l = [0.0; 3];
            l[a] = 1.0;
            l
        }
        None => disc.elements[k].barycentric(x),
    };
    let i_x = l[0] * interp[0] + l[1] * interp[1] + l[2] * interp[2];
    Ok(w.omega_inv(x) * g.evaluate(disc, x)? - i_x)
}

/// Raw per-region integrals of one weighted evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct WeightedIntegrals {
    pub norm: NormTerms,
    /// `a(ω⁻¹G, G)`.
    pub a_wg_g: f64,
    /// `ε ((ω⁻¹)_β G, G_β)`.
    pub corr_beta: f64,
    /// `ε̂ ((ω⁻¹)_η G, G_η)`.
    pub corr_eta: f64,
    /// `Σ_K (b (ω⁻¹)_β G + c ω⁻¹ G, δ_K b G_β)_K`.
    pub corr_delta: f64,
    /// `a(E, G)`.
    pub a_e_g: f64,
    /// `‖ω^{1/2} E‖²`.
    pub e_l2: f64,
    pub e_beta_l2: f64,
    pub e_eta_l2: f64,
}

impl AddAssign for WeightedIntegrals {
    fn add_assign(&mut self, o: Self) {
        self.norm += o.norm;
        self.a_wg_g += o.a_wg_g;
        self.corr_beta += o.corr_beta;
        self.corr_eta += o.corr_eta;
        self.corr_delta += o.corr_delta;
        self.a_e_g += o.a_e_g;
        self.e_l2 += o.e_l2;
        self.e_beta_l2 += o.e_beta_l2;
        self.e_eta_l2 += o.e_eta_l2;
    }
}

/// Evaluate every weighted integral at a fixed quadrature depth.
pub fn weighted_integrals(
    disc: &Discretization,
    g: &FEFunction,
    w: &WeightSpec,
    depth: usize,
    deterministic: bool,
) -> [WeightedIntegrals; 4] {
    let mesh = &disc.mesh;
    let rule = quad_rule(depth);
    let p = &disc.problem;
    let b = disc.frame.b;

    // nodal values of (ω⁻¹G)^I
    let interp: Vec<f64> = (0..mesh.num_nodes())
        .map(|id| {
            let gv = g.node_value(id);
            if gv == 0.0 {
                0.0
            } else {
                w.omega_inv(mesh.node_coords(id)) * gv
            }
        })
        .collect();

    reduce_by_region(disc, deterministic, |k| {
        let t = &mesh.triangles()[k];
        let e = &disc.elements[k];
        let gv = g.vertex_values(t);
        let iv = t.vertices.map(|v| interp[v]);
        let dot = |vals: &[f64; 3], grad: &[f64; 3]| vals[0] * grad[0] + vals[1] * grad[1] + vals[2] * grad[2];
        let g_b = dot(&gv, &e.grad_beta);
        let g_e = dot(&gv, &e.grad_eta);
        let i_b = dot(&iv, &e.grad_beta);
        let i_e = dot(&iv, &e.grad_eta);
        let (eps, eh, c, delta) = (p.epsilon, e.eps_hat, p.c, e.delta);

        let mut acc = WeightedIntegrals::default();
        for (q, wq) in rule.weights.iter().enumerate() {
            let l = rule.points[q];
            let x = rule.point(q, &e.coords);
            let gq = l[0] * gv[0] + l[1] * gv[1] + l[2] * gv[2];
            let iq = l[0] * iv[0] + l[1] * iv[1] + l[2] * iv[2];
            let (wi, wi_b, wi_e) = w.inverse_with_gradient(x);

            // ω⁻¹G and its derivatives
            let wg = wi * gq;
            let wg_b = wi_b * gq + wi * g_b;
            let wg_e = wi_e * gq + wi * g_e;

            acc.norm.eps_beta += wq * eps * wi * g_b * g_b;
            acc.norm.eps_hat_eta += wq * eh * wi * g_e * g_e;
            acc.norm.l2 += wq * c * wi * gq * gq;
            acc.norm.sd += wq * b * b * delta * wi * g_b * g_b;
            acc.norm.weight_convective += wq * 0.5 * b * wi_b * gq * gq;

            acc.a_wg_g += wq
                * (eps * wg_b * g_b
                    + eh * wg_e * g_e
                    + (b * wg_b + c * wg) * gq
                    + delta * (b * wg_b + c * wg) * b * g_b);
            acc.corr_beta += wq * eps * wi_b * gq * g_b;
            acc.corr_eta += wq * eh * wi_e * gq * g_e;
            acc.corr_delta += wq * delta * (b * wi_b * gq + c * wi * gq) * b * g_b;

            let err = wg - iq;
            let err_b = wg_b - i_b;
            let err_e = wg_e - i_e;
            acc.a_e_g += wq
                * (eps * err_b * g_b
                    + eh * err_e * g_e
                    + (b * err_b + c * err) * gq
                    + delta * (b * err_b + c * err) * b * g_b);
            let omega = 1.0 / wi;
            acc.e_l2 += wq * omega * err * err;
            acc.e_beta_l2 += wq * omega * err_b * err_b;
            acc.e_eta_l2 += wq * omega * err_e * err_e;
        }
        let a = e.area;
        acc.norm.eps_beta *= a;
        acc.norm.eps_hat_eta *= a;
        acc.norm.l2 *= a;
        acc.norm.sd *= a;
        acc.norm.weight_convective *= a;
        acc.a_wg_g *= a;
        acc.corr_beta *= a;
        acc.corr_eta *= a;
        acc.corr_delta *= a;
        acc.a_e_g *= a;
        acc.e_l2 *= a;
        acc.e_beta_l2 *= a;
        acc.e_eta_l2 *= a;
        acc
    })
}

fn sum_regions(r: &[WeightedIntegrals; 4], which: &[Region]) -> WeightedIntegrals {
    let mut out = WeightedIntegrals::default();
    for reg in which {
        out += r[reg.index()];
    }
    out
}

/// `‖ω^{1/2}E‖`, `‖ω^{1/2}E_β‖`, `‖ω^{1/2}E_η‖` on `Ω_s` and on `Ω \ Ω_s`, plus `a(E, G)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EDiagnostics {
    pub e_s: f64,
    pub e_not_s: f64,
    pub e_beta_s: f64,
    pub e_beta_not_s: f64,
    pub e_eta_s: f64,
    pub e_eta_not_s: f64,
    pub a_e_g: f64,
}

impl EDiagnostics {
    pub fn grad_s(&self) -> f64 {
        self.e_beta_s + self.e_eta_s
    }

    pub fn grad_not_s(&self) -> f64 {
        self.e_beta_not_s + self.e_eta_not_s
    }
}

/// `a(ω⁻¹G, G)` and the terms linking it to `|||G|||²_ω` and to `G(x*)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LemmaQuantities {
    pub a_wg_g: f64,
    /// `(ω⁻¹G)(x*) = G(x*)`.
    pub pole_value: f64,
    pub a_e_g: f64,
    pub corr_beta: f64,
    pub corr_eta: f64,
    pub corr_delta: f64,
    /// `|||G|||²_ω`.
    pub norm_w_sq: f64,
    /// `| |||G|||² - (a(ω⁻¹G,G) - corrections) | / |||G|||²`.
    pub identity_residual: f64,
    /// `| a(ω⁻¹G,G) - a(E,G) - G(x*) | / |a(ω⁻¹G,G)|`.
    pub decomposition_residual: f64,
}

/// Everything the weighted analysis produces for one Green function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedAnalysis {
    pub breakdown: NormBreakdown,
    pub e: EDiagnostics,
    pub lemma: LemmaQuantities,
    pub depth: usize,
    /// Relative change of `|||G|||²_ω` between the last two depths.
    pub rel_change: f64,
}

impl WeightedAnalysis {
    fn from_integrals(r: &[WeightedIntegrals; 4], pole_value: f64, depth: usize, rel_change: f64) -> Self {
        let breakdown = NormBreakdown::from_regions(r.map(|x| x.norm));
        let s = sum_regions(r, &[Region::S]);
        let ns = sum_regions(r, &[Region::X, Region::Y, Region::XY]);
        let all = sum_regions(r, &Region::ALL);

        let e = EDiagnostics {
            e_s: s.e_l2.sqrt(),
            e_not_s: ns.e_l2.sqrt(),
            e_beta_s: s.e_beta_l2.sqrt(),
            e_beta_not_s: ns.e_beta_l2.sqrt(),
            e_eta_s: s.e_eta_l2.sqrt(),
            e_eta_not_s: ns.e_eta_l2.sqrt(),
            a_e_g: all.a_e_g,
        };
        let norm_w_sq = breakdown.global.total();
        let rebuilt = all.a_wg_g - all.corr_beta - all.corr_eta - all.corr_delta;
        let lemma = LemmaQuantities {
            a_wg_g: all.a_wg_g,
            pole_value,
            a_e_g: all.a_e_g,
            corr_beta: all.corr_beta,
            corr_eta: all.corr_eta,
            corr_delta: all.corr_delta,
            norm_w_sq,
            identity_residual: (norm_w_sq - rebuilt).abs() / norm_w_sq.abs(),
            decomposition_residual: (all.a_wg_g - all.a_e_g - pole_value).abs() / all.a_wg_g.abs(),
        };
        Self {
            breakdown,
            e,
            lemma,
            depth,
            rel_change,
        }
    }

    pub fn norm_w(&self) -> f64 {
        self.breakdown.norm()
    }

    /// `a(ω⁻¹G, G) / |||G|||²_ω`.
    pub fn lemma1_ratio(&self) -> f64 {
        self.lemma.a_wg_g / self.lemma.norm_w_sq
    }

    /// `a(E, G) / |||G|||²_ω`.
    pub fn lemma4_ratio(&self) -> f64 {
        self.lemma.a_e_g / self.lemma.norm_w_sq
    }
}

/// Weighted analysis at one fixed depth.
pub fn analyze_at_depth(
    disc: &Discretization,
    green: &GreenFunction,
    w: &WeightSpec,
    depth: usize,
    deterministic: bool,
) -> WeightedAnalysis {
    let r = weighted_integrals(disc, &green.fe, w, depth, deterministic);
    WeightedAnalysis::from_integrals(&r, green.pole_value(), depth, f64::NAN)
}

/// Weighted analysis with depth doubling until `|||G|||²_ω` settles.
pub fn analyze(
    disc: &Discretization,
    green: &GreenFunction,
    w: &WeightSpec,
    opts: &QuadOptions,
) -> Result<WeightedAnalysis> {
    analyze_fe(disc, &green.fe, green.pole_value(), w, opts)
}

fn analyze_fe(
    disc: &Discretization,
    g: &FEFunction,
    pole_value: f64,
    w: &WeightSpec,
    opts: &QuadOptions,
) -> Result<WeightedAnalysis> {
    let total = |r: &[WeightedIntegrals; 4]| r.iter().map(|x| x.norm.total()).sum::<f64>();
    let mut depth = opts.base_depth;
    let mut prev = weighted_integrals(disc, g, w, depth, opts.deterministic);
    let mut change = f64::INFINITY;
    while depth < opts.max_depth {
        depth += 1;
        let next = weighted_integrals(disc, g, w, depth, opts.deterministic);
        let (a, b) = (total(&prev), total(&next));
        change = if b == 0.0 { 0.0 } else { (a - b).abs() / b.abs() };
        prev = next;
        if change < opts.rel_tol {
            return Ok(WeightedAnalysis::from_integrals(&prev, pole_value, depth, change));
        }
    }
    if opts.base_depth >= opts.max_depth {
        return Ok(WeightedAnalysis::from_integrals(&prev, pole_value, depth, f64::NAN));
    }
    Err(Error::QuadratureNotConverged {
        achieved: change,
        depth,
    })
}

/// `|||G|||_ω` with its terms, globally and per region.
pub fn weighted_norm(
    disc: &Discretization,
    g: &FEFunction,
    w: &WeightSpec,
    opts: &QuadOptions,
) -> Result<(NormBreakdown, usize)> {
    let pole = g.evaluate(disc, w.x_star).unwrap_or(0.0);
    let a = analyze_fe(disc, g, pole, w, opts)?;
    Ok((a.breakdown, a.depth))
}

pub fn e_diagnostics(
    disc: &Discretization,
    green: &GreenFunction,
    w: &WeightSpec,
    opts: &QuadOptions,
) -> Result<EDiagnostics> {
    Ok(analyze(disc, green, w, opts)?.e)
}

/// Lemma quantities; an identity residual above [`IDENTITY_TOL`] is an error.
pub fn lemma_quantities(
    disc: &Discretization,
    green: &GreenFunction,
    w: &WeightSpec,
    opts: &QuadOptions,
) -> Result<LemmaQuantities> {
    let l = analyze(disc, green, w, opts)?.lemma;
    for (name, r) in [
        ("norm/bilinear-form identity", l.identity_residual),
        ("interpolation decomposition", l.decomposition_residual),
    ] {
        if !(r <= IDENTITY_TOL) {
            return Err(Error::InsufficientData(format!(
                "{name} residual {r:.3e} exceeds {IDENTITY_TOL:e}"
            )));
        }
    }
    Ok(l)
}
