//! Parameter sweeps over `(N, ε, mode, x*)`, scaling fits and the checks
//! run by `sdgreen verify`.
//!
//! Every `(N, ε, mode)` group shares one mesh, one assembled system and one
//! LU factorisation; the forward solve and all Green solves of the group
//! reuse it.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::{assemble, Discretization, EpsHatMode, ProblemData, StabilizationConfig};
use crate::error::{Error, Result};
use crate::green::{ForwardSolution, GreenFunction, GreenSolver};
use crate::mesh::{build_mesh, MeshParams, Region, ShishkinMesh, DEFAULT_RHO};
use crate::norms::{self, NormBreakdown, QuadOptions, WeightedAnalysis};
use crate::weight::SigmaPolicy;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Lower bound on `a(ω⁻¹G,G) / |||G|||²_ω`.
pub const LEMMA1_BOUND: f64 = 0.25;
/// Upper bound on `|a(E,G)| / |||G|||²_ω`.
pub const LEMMA4_BOUND: f64 = 1.0 / 16.0;
/// Allowed growth of a normalised ratio when `N` doubles.
pub const GROWTH_FACTOR: f64 = 1.15;
/// Largest fitted log-log slope of `|||G|||_ω` against `N` for layer poles.
pub const LAYER_SLOPE_MAX: f64 = 0.65;
/// Largest max/min ratio of a normalised quantity over the `ε` list.
pub const EPS_SPREAD_MAX: f64 = 2.0;

pub const COERCIVITY_TOL: f64 = 1e-9;
pub const DUALITY_TOL: f64 = 1e-8;

/// Where to put the pole `x*`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Placement {
    /// Middle of `Ω_s`: node `(N/4, N/4)`.
    CenterS,
    /// Middle of `Ω_x`: node `(3N/4, N/4)`.
    MidX,
    /// Middle of `Ω_y`: node `(N/4, 3N/4)`.
    MidY,
    /// Last coarse node left of `x = 1 - λ_x`, at mid-height: `(N/2 - 1, N/4)`.
    NearTransition,
    /// Explicit node indices.
    Node(usize, usize),
}

impl Placement {
    pub const DEFAULTS: [Placement; 4] = [
        Placement::CenterS,
        Placement::MidX,
        Placement::MidY,
        Placement::NearTransition,
    ];

    /// Interior node indices on a mesh with `n` intervals, in any region.
    pub fn node(&self, mesh: &ShishkinMesh) -> Result<(usize, usize)> {
        let n = mesh.n();
        let (i, j) = match *self {
            Placement::CenterS => (n / 4, n / 4),
            Placement::MidX => (3 * n / 4, n / 4),
            Placement::MidY => (n / 4, 3 * n / 4),
            Placement::NearTransition => (n / 2 - 1, n / 4),
            Placement::Node(i, j) => (i, j),
        };
        mesh.dof(i, j).ok_or(Error::NotInteriorNode(i, j))?;
        Ok((i, j))
    }

    /// Like [`Placement::node`], but also refuses poles in `Ω_xy`, where the
    /// bounds being checked say nothing.
    pub fn resolve(&self, mesh: &ShishkinMesh) -> Result<(usize, usize)> {
        let (i, j) = self.node(mesh)?;
        if mesh.region_of(mesh.node_coords(mesh.node_id(i, j)))? == Region::XY {
            return Err(Error::Config(format!(
                "pole ({i}, {j}) lies in the corner layer region xy, which is excluded"
            )));
        }
        Ok((i, j))
    }
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Placement::CenterS => f.write_str("center-s"),
            Placement::MidX => f.write_str("mid-x"),
            Placement::MidY => f.write_str("mid-y"),
            Placement::NearTransition => f.write_str("near-transition"),
            Placement::Node(i, j) => write!(f, "{i},{j}"),
        }
    }
}

impl FromStr for Placement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "center-s" | "centre-s" | "s" => Ok(Placement::CenterS),
            "mid-x" | "x" => Ok(Placement::MidX),
            "mid-y" | "y" => Ok(Placement::MidY),
            "near-transition" => Ok(Placement::NearTransition),
            other => {
                let bad = || Error::Config(format!("bad pole '{other}': expected i,j or a placement keyword"));
                let (a, b) = other.split_once(',').ok_or_else(bad)?;
                let i = a.trim().parse().map_err(|_| bad())?;
                let j = b.trim().parse().map_err(|_| bad())?;
                Ok(Placement::Node(i, j))
            }
        }
    }
}

impl TryFrom<String> for Placement {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Placement> for String {
    fn from(p: Placement) -> String {
        p.to_string()
    }
}

/// Grid of cases for [`run_sweep`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub ns: Vec<usize>,
    pub epsilons: Vec<f64>,
    pub modes: Vec<EpsHatMode>,
    pub placements: Vec<Placement>,
    pub k: f64,
    /// Largest `k` tried when the coercivity ratio falls short.
    pub max_k: f64,
    pub b1: f64,
    pub b2: f64,
    pub c: f64,
    pub c_star: f64,
    pub rho: f64,
    pub quad: QuadOptions,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            ns: vec![8, 16, 32, 64, 128],
            epsilons: vec![1e-4, 1e-6, 1e-8],
            modes: vec![EpsHatMode::Standard, EpsHatMode::Acd],
            placements: Placement::DEFAULTS.to_vec(),
            k: 2.0,
            max_k: 8.0,
            b1: 1.0,
            b2: 1.0,
            c: 1.0,
            c_star: 0.5,
            rho: DEFAULT_RHO,
            quad: QuadOptions::default(),
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.ns.is_empty() || self.epsilons.is_empty() || self.modes.is_empty() || self.placements.is_empty() {
            return bad("ns, epsilons, modes and placements must all be nonempty".into());
        }
        for &n in &self.ns {
            if n < 4 || n % 2 != 0 {
                return bad(format!("N must be even and >= 4 (got {n})"));
            }
        }
        for &eps in &self.epsilons {
            if !(eps.is_finite() && eps > 0.0) {
                return bad(format!("epsilon must be positive (got {eps})"));
            }
            for &n in &self.ns {
                if eps > 1.0 / n as f64 {
                    return Err(Error::AssumptionViolated { eps, n });
                }
            }
        }
        if !(self.k.is_finite() && self.k > 0.0) {
            return bad(format!("k must be positive (got {})", self.k));
        }
        if !(self.max_k.is_finite() && self.max_k > 0.0) {
            return bad(format!("max_k must be positive (got {})", self.max_k));
        }
        if !(self.rho.is_finite() && self.rho > 0.0) {
            return bad(format!("rho must be positive (got {})", self.rho));
        }
        if !(self.c_star.is_finite() && self.c_star >= 0.0) {
            return bad(format!("c_star must be nonnegative (got {})", self.c_star));
        }
        let q = &self.quad;
        if q.base_depth > q.max_depth || q.max_depth > crate::quadrature::MAX_LEVEL {
            return bad(format!(
                "quadrature depths must satisfy base <= max <= {} (got {} and {})",
                crate::quadrature::MAX_LEVEL,
                q.base_depth,
                q.max_depth
            ));
        }
        if !(q.rel_tol > 0.0) {
            return bad("quadrature rel_tol must be positive".into());
        }
        ProblemData::new(1e-3, self.b1, self.b2, self.c).validate()?;
        ProblemData::new(1e-3, self.b1, self.b2, self.c).frame()?;
        for &n in &self.ns {
            for &eps in &self.epsilons {
                let mesh = ShishkinMesh::new(MeshParams::new(n, eps).with_rho(self.rho))?;
                for p in &self.placements {
                    p.resolve(&mesh).map_err(|e| Error::Config(format!("N={n} eps={eps:e}: {e}")))?;
                }
            }
        }
        Ok(())
    }

    pub fn num_cases(&self) -> usize {
        self.ns.len() * self.epsilons.len() * self.modes.len() * self.placements.len()
    }
}

/// Lemma quantities recomputed at a larger `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RaisedK {
    pub k: f64,
    pub lemma1_ratio: f64,
    pub lemma4_ratio: f64,
}

/// Everything measured for one `(N, ε, mode, x*)` case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    #[serde(rename = "N")]
    pub n: usize,
    pub eps: f64,
    pub mode: EpsHatMode,
    pub k: f64,
    pub c_star: f64,
    pub placement: Placement,
    pub xstar_region: Region,
    pub xstar_i: usize,
    pub xstar_j: usize,
    pub x_star: [f64; 2],
    pub sigma_beta: f64,
    pub sigma_eta: f64,
    pub policy_accepted: bool,
    pub policy_failures: Vec<String>,
    /// `σ_β > 1`; the nodal bound at `x*` assumes otherwise.
    pub sigma_beta_exceeds_one: bool,
    pub norm_msd: f64,
    pub norm_w: f64,
    /// `‖G‖_MSD / (√8 |||G|||_ω)`.
    pub r_thm: f64,
    /// `|||G|||_ω / (N σ_β^{1/2})`.
    pub r_s: f64,
    /// `|||G|||_ω / (N ln N)^{1/2}`, the same bound with `k` divided out.
    pub r_s_unit_k: f64,
    /// `|||G|||_ω / (N^{1/2} ln^{1/2} N)`.
    pub r_layer: f64,
    pub lemma1_ratio: f64,
    pub lemma4_ratio: f64,
    /// `‖ω^{1/2}E‖_{Ω_s} / (N^{-1/2} |||G|||_{ω,Ω_s})`.
    pub e_s: f64,
    /// `‖ω^{1/2}E‖_{Ω∖Ω_s} / (ε^{1/2} |||G|||_{ω,Ω∖Ω_s})`.
    pub e_not_s: f64,
    /// `(‖ω^{1/2}E_β‖ + ‖ω^{1/2}E_η‖)_{Ω_s} / (N^{1/2} |||G|||_{ω,Ω_s})`.
    pub e_grad_s: f64,
    /// `(‖ω^{1/2}E_β‖ + ‖ω^{1/2}E_η‖)_{Ω∖Ω_s} / (ε^{-1/2} ln^{-1} N |||G|||_{ω,Ω∖Ω_s})`.
    pub e_grad_not_s: f64,
    /// Transpose-solve residual of the Green function.
    pub residual: f64,
    pub forward_residual: f64,
    /// `|a(G,G) - G(x*)| / |G(x*)|`.
    pub coercivity_residual: f64,
    /// `|u(x*) - (f, G + δ b G_β)| / |u(x*)|`.
    pub duality_residual: f64,
    pub identity_residual: f64,
    pub decomposition_residual: f64,
    pub quad_depth: usize,
    pub quad_rel_change: f64,
    pub msd_breakdown: NormBreakdown,
    pub weighted: Option<WeightedAnalysis>,
    pub raised_k: Option<RaisedK>,
    pub error: Option<String>,
}

impl BoundRow {
    fn blank(cfg: &SweepConfig, n: usize, eps: f64, mode: EpsHatMode, placement: Placement) -> Self {
        Self {
            n,
            eps,
            mode,
            k: cfg.k,
            c_star: cfg.c_star,
            placement,
            xstar_region: Region::S,
            xstar_i: 0,
            xstar_j: 0,
            x_star: [f64::NAN; 2],
            sigma_beta: f64::NAN,
            sigma_eta: f64::NAN,
            policy_accepted: false,
            policy_failures: Vec::new(),
            sigma_beta_exceeds_one: false,
            norm_msd: f64::NAN,
            norm_w: f64::NAN,
            r_thm: f64::NAN,
            r_s: f64::NAN,
            r_s_unit_k: f64::NAN,
            r_layer: f64::NAN,
            lemma1_ratio: f64::NAN,
            lemma4_ratio: f64::NAN,
            e_s: f64::NAN,
            e_not_s: f64::NAN,
            e_grad_s: f64::NAN,
            e_grad_not_s: f64::NAN,
            residual: f64::NAN,
            forward_residual: f64::NAN,
            coercivity_residual: f64::NAN,
            duality_residual: f64::NAN,
            identity_residual: f64::NAN,
            decomposition_residual: f64::NAN,
            quad_depth: 0,
            quad_rel_change: f64::NAN,
            msd_breakdown: NormBreakdown::default(),
            weighted: None,
            raised_k: None,
            error: None,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }

    /// `k` at which the coercivity bound holds, if any was found.
    pub fn accepted_k(&self) -> Option<f64> {
        if self.lemma1_ratio >= LEMMA1_BOUND {
            Some(self.k)
        } else {
            self.raised_k.filter(|r| r.lemma1_ratio >= LEMMA1_BOUND).map(|r| r.k)
        }
    }

    /// Interpolation-term ratio at [`Self::accepted_k`].
    pub fn accepted_lemma4(&self) -> Option<f64> {
        if self.lemma1_ratio >= LEMMA1_BOUND {
            Some(self.lemma4_ratio)
        } else {
            self.raised_k.filter(|r| r.lemma1_ratio >= LEMMA1_BOUND).map(|r| r.lemma4_ratio)
        }
    }
}

/// One factorised `(N, ε, mode)` problem.
pub struct CaseSetup {
    pub disc: Discretization,
    pub system: crate::assembly::AssembledSystem,
}

impl CaseSetup {
    pub fn new(cfg: &SweepConfig, n: usize, eps: f64, mode: EpsHatMode) -> Result<Self> {
        let mesh = Arc::new(build_mesh(&MeshParams::new(n, eps).with_rho(cfg.rho))?);
        let problem = ProblemData::new(eps, cfg.b1, cfg.b2, cfg.c);
        let disc = Discretization::new(mesh, problem, StabilizationConfig::new(cfg.c_star, mode))?;
        let system = assemble(&disc)?;
        Ok(Self { disc, system })
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn analyze_case(
    cfg: &SweepConfig,
    setup: &CaseSetup,
    solver: &GreenSolver,
    forward: &ForwardSolution,
    policy: &SigmaPolicy,
    row: &mut BoundRow,
) -> Result<()> {
    let disc = &setup.disc;
    let mesh = &disc.mesh;
    let (i, j) = row.placement.resolve(mesh)?;
    let green: GreenFunction = solver.green(i, j)?;
    row.xstar_i = i;
    row.xstar_j = j;
    row.x_star = green.x_star;
    row.xstar_region = mesh.region_of(green.x_star)?;
    row.residual = green.residual;
    row.forward_residual = forward.residual;
    row.sigma_beta = policy.sigma_beta;
    row.sigma_eta = policy.sigma_eta;
    row.policy_accepted = policy.accepted();
    row.policy_failures = policy.failing();
    row.sigma_beta_exceeds_one = policy.sigma_beta_exceeds_one;

    let pole = green.pole_value();
    let nodal = green.fe.nodal_values();
    row.coercivity_residual = rel(disc.form_on_nodes(&nodal, &nodal)?, pole);
    let u_star = forward.fe.dofs[green.dof];
    row.duality_residual = rel(norms::load_functional(disc, &green.fe), u_star);

    row.msd_breakdown = norms::msd_norm(disc, &green.fe);
    row.norm_msd = row.msd_breakdown.norm();

    let w = policy.weight(green.x_star, disc.frame);
    let a = norms::analyze(disc, &green, &w, &cfg.quad)?;
    let nf = row.n as f64;
    let ln_n = nf.ln();
    row.norm_w = a.norm_w();
    row.r_thm = row.norm_msd / (8f64.sqrt() * row.norm_w);
    row.r_s = row.norm_w / (nf * policy.sigma_beta.sqrt());
    row.r_s_unit_k = row.norm_w / (nf * ln_n).sqrt();
    row.r_layer = row.norm_w / (nf.sqrt() * ln_n.sqrt());
    row.lemma1_ratio = a.lemma1_ratio();
    row.lemma4_ratio = a.lemma4_ratio();
    let w_s = a.breakdown.s.norm();
    let w_ns = a.breakdown.outside_s().norm();
    row.e_s = a.e.e_s / (w_s / nf.sqrt());
    row.e_not_s = a.e.e_not_s / (row.eps.sqrt() * w_ns);
    row.e_grad_s = a.e.grad_s() / (nf.sqrt() * w_s);
    row.e_grad_not_s = a.e.grad_not_s() / (w_ns / (row.eps.sqrt() * ln_n));
    row.identity_residual = a.lemma.identity_residual;
    row.decomposition_residual = a.lemma.decomposition_residual;
    row.quad_depth = a.depth;
    row.quad_rel_change = a.rel_change;
    row.weighted = Some(a);

    if row.lemma1_ratio < LEMMA1_BOUND {
        row.raised_k = raise_k(cfg, setup, &green, row.mode)?;
    }
    Ok(())
}

/// Smallest integer `k` in `(cfg.k, cfg.max_k]` at which the coercivity bound holds.
fn raise_k(cfg: &SweepConfig, setup: &CaseSetup, green: &GreenFunction, mode: EpsHatMode) -> Result<Option<RaisedK>> {
    let disc = &setup.disc;
    let mut k = cfg.k.floor() + 1.0;
    let mut last = None;
    while k <= cfg.max_k {
        let p = SigmaPolicy::evaluate(mode, k, disc.mesh.n(), disc.problem.epsilon, &disc.stab)?;
        let a = norms::analyze(disc, green, &p.weight(green.x_star, disc.frame), &cfg.quad)?;
        let r = RaisedK {
            k,
            lemma1_ratio: a.lemma1_ratio(),
            lemma4_ratio: a.lemma4_ratio(),
        };
        last = Some(r);
        if r.lemma1_ratio >= LEMMA1_BOUND {
            break;
        }
        k += 1.0;
    }
    Ok(last)
}

fn run_group(cfg: &SweepConfig, n: usize, eps: f64, mode: EpsHatMode) -> Vec<BoundRow> {
    let mut rows: Vec<BoundRow> = cfg
        .placements
        .iter()
        .map(|&p| BoundRow::blank(cfg, n, eps, mode, p))
        .collect();
    let prepared = CaseSetup::new(cfg, n, eps, mode).and_then(|setup| {
        let policy = SigmaPolicy::evaluate(mode, cfg.k, n, eps, &setup.disc.stab)?;
        Ok((setup, policy))
    });
    let (setup, policy) = match prepared {
        Ok(x) => x,
        Err(e) => {
            for r in &mut rows {
                r.error = Some(e.to_string());
            }
            return rows;
        }
    };
    let solved = GreenSolver::new(&setup.disc, &setup.system).and_then(|s| {
        let f = s.forward()?;
        Ok((s, f))
    });
    match solved {
        Ok((solver, forward)) => {
            rows.par_iter_mut().for_each(|row| {
                if let Err(e) = analyze_case(cfg, &setup, &solver, &forward, &policy, row) {
                    row.error = Some(e.to_string());
                }
            });
        }
        Err(e) => {
            for r in &mut rows {
                r.error = Some(e.to_string());
            }
        }
    }
    rows
}

/// One row per `(N, ε, mode, x*)`, in config order. Case failures are
/// recorded on the row and do not stop the sweep.
pub fn run_sweep(cfg: &SweepConfig) -> Result<Vec<BoundRow>> {
    cfg.validate()?;
    let mut groups = Vec::new();
    for &n in &cfg.ns {
        for &eps in &cfg.epsilons {
            for &mode in &cfg.modes {
                groups.push((n, eps, mode));
            }
        }
    }
    // large N first keeps the pool busy
    let mut order: Vec<usize> = (0..groups.len()).collect();
    order.sort_by_key(|&g| std::cmp::Reverse(groups[g].0));
    let mut done: Vec<(usize, Vec<BoundRow>)> = order
        .into_par_iter()
        .map(|g| {
            let (n, eps, mode) = groups[g];
            (g, run_group(cfg, n, eps, mode))
        })
        .collect();
    done.sort_by_key(|(g, _)| *g);
    Ok(done.into_iter().flat_map(|(_, r)| r).collect())
}

/// [`run_sweep`] on a dedicated pool of `workers` threads.
pub fn run_sweep_with_workers(cfg: &SweepConfig, workers: Option<usize>) -> Result<Vec<BoundRow>> {
    match workers {
        None => run_sweep(cfg),
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w.max(1))
                .build()
                .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
            pool.install(|| run_sweep(cfg))
        }
    }
}

/// Least-squares fit of `log y = slope · log x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub slope: f64,
    pub intercept: f64,
    pub points: usize,
}

pub fn fit_power_law(points: &[(f64, f64)]) -> Result<ScalingFit> {
    let mut xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    if xs.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "need at least 3 distinct N values, got {}",
            xs.len()
        )));
    }
    if points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0 && x.is_finite() && y.is_finite())) {
        return Err(Error::InsufficientData("log-log fit needs positive finite data".into()));
    }
    let m = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / m;
    let my = ly.iter().sum::<f64>() / m;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    Ok(ScalingFit {
        slope,
        intercept: my - slope * mx,
        points: points.len(),
    })
}

/// Fit `|||G|||_ω` against `N` over the rows matching one pole, `ε` and mode.
pub fn fit_scaling(rows: &[BoundRow], placement: Placement, eps: f64, mode: EpsHatMode) -> Result<ScalingFit> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.is_ok() && r.placement == placement && r.eps == eps && r.mode == mode)
        .map(|r| (r.n as f64, r.norm_w))
        .collect();
    fit_power_law(&pts)
}

/// Outcome of one verification check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Number of individual comparisons made.
    pub evaluated: usize,
    pub failures: Vec<String>,
}

impl CheckResult {
    fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            passed: true,
            evaluated: 0,
            failures: Vec::new(),
        }
    }

    fn expect(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.evaluated += 1;
        if !ok {
            self.passed = false;
            self.failures.push(what());
        }
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {} ({} comparisons", self.name, self.evaluated)?;
        if !self.failures.is_empty() {
            write!(f, ", {} failed", self.failures.len())?;
        }
        f.write_str(")")
    }
}

fn label(r: &BoundRow) -> String {
    format!("N={} eps={:e} mode={} x*={}", r.n, r.eps, r.mode.name(), r.placement)
}

type SeriesKey = (Placement, u64, EpsHatMode);

/// Rows grouped by `(pole, ε, mode)`, sorted by `N`.
fn series(rows: &[BoundRow]) -> BTreeMap<SeriesKey, Vec<&BoundRow>> {
    let mut out: BTreeMap<SeriesKey, Vec<&BoundRow>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.is_ok()) {
        out.entry((r.placement, r.eps.to_bits(), r.mode)).or_default().push(r);
    }
    for v in out.values_mut() {
        v.sort_by_key(|r| r.n);
    }
    out
}

/// Check `f(2N) <= GROWTH_FACTOR · f(N)` over every doubling present in `rows`.
fn non_growth(check: &mut CheckResult, rows: &[&BoundRow], what: &str, f: impl Fn(&BoundRow) -> f64) {
    for a in rows {
        if let Some(b) = rows.iter().find(|b| b.n == 2 * a.n) {
            let (fa, fb) = (f(a), f(b));
            check.expect(fb <= GROWTH_FACTOR * fa, || {
                format!("{what}: {:.6e} at N={} grows to {:.6e} at N={} ({})", fa, a.n, fb, b.n, label(b))
            });
        }
    }
}

fn is_layer(p: Placement) -> bool {
    matches!(p, Placement::MidX | Placement::MidY)
}

/// The sweep-level checks: identities, the energy inequality, scaling,
/// lemma bounds and `ε`-robustness.
pub fn check_rows(rows: &[BoundRow]) -> Vec<CheckResult> {
    let mut out = Vec::new();

    let mut c = CheckResult::new("case completion");
    for r in rows {
        c.expect(r.is_ok(), || format!("{}: {}", label(r), r.error.as_deref().unwrap_or("")));
    }
    out.push(c);

    let mut c = CheckResult::new("sigma policy constraints");
    for r in rows.iter().filter(|r| r.is_ok()) {
        c.expect(r.policy_accepted, || format!("{}: {}", label(r), r.policy_failures.join("; ")));
    }
    out.push(c);

    let ok: Vec<&BoundRow> = rows.iter().filter(|r| r.is_ok()).collect();
    let mut c = CheckResult::new("identities: a(G,G)=G(x*), duality, norm identity, decomposition");
    for r in &ok {
        c.expect(r.coercivity_residual <= COERCIVITY_TOL, || {
            format!("{}: coercivity residual {:.3e}", label(r), r.coercivity_residual)
        });
        c.expect(r.duality_residual <= DUALITY_TOL, || {
            format!("{}: duality residual {:.3e}", label(r), r.duality_residual)
        });
        c.expect(r.identity_residual <= norms::IDENTITY_TOL, || {
            format!("{}: norm identity residual {:.3e}", label(r), r.identity_residual)
        });
        c.expect(r.decomposition_residual <= norms::IDENTITY_TOL, || {
            format!("{}: decomposition residual {:.3e}", label(r), r.decomposition_residual)
        });
    }
    out.push(c);

    let mut c = CheckResult::new("energy inequality ||G||_MSD <= sqrt(8) |||G|||_w");
    for r in &ok {
        c.expect(r.r_thm <= 1.0, || format!("{}: R_thm = {:.6e}", label(r), r.r_thm));
    }
    out.push(c);

    let groups = series(rows);
    let mut c = CheckResult::new("interior scaling: R_s non-growth");
    for ((p, _, _), v) in &groups {
        if *p == Placement::CenterS {
            non_growth(&mut c, v, "R_s", |r| r.r_s);
        }
    }
    out.push(c);

    let mut c = CheckResult::new("layer scaling: R_layer non-growth and slope");
    for ((p, eps, mode), v) in &groups {
        if is_layer(*p) {
            non_growth(&mut c, v, "R_layer", |r| r.r_layer);
            if let Ok(fit) = fit_scaling(rows, *p, f64::from_bits(*eps), *mode) {
                c.expect(fit.slope <= LAYER_SLOPE_MAX, || {
                    format!("slope {:.4} for {} eps={:e} mode={}", fit.slope, p, f64::from_bits(*eps), mode.name())
                });
            }
        }
    }
    out.push(c);

    let mut c = CheckResult::new("coercivity: a(G/w,G) >= |||G|||^2/4");
    for r in &ok {
        c.expect(r.accepted_k().is_some(), || {
            format!(
                "{}: ratio {:.6e} at k={}{}",
                label(r),
                r.lemma1_ratio,
                r.k,
                r.raised_k
                    .map(|x| format!(", still {:.6e} at k={}", x.lemma1_ratio, x.k))
                    .unwrap_or_default()
            )
        });
    }
    out.push(c);

    let mut c = CheckResult::new("interpolation term: |a(E,G)| <= |||G|||^2/16");
    for r in &ok {
        let l4 = r.accepted_lemma4();
        c.expect(l4.is_some_and(|x| x.abs() <= LEMMA4_BOUND), || {
            format!("{}: ratio {:?}", label(r), l4)
        });
    }
    out.push(c);

    let mut c = CheckResult::new("interpolation error scaling: E ratios non-growth");
    for v in groups.values() {
        non_growth(&mut c, v, "e_s", |r| r.e_s);
        non_growth(&mut c, v, "e_not_s", |r| r.e_not_s);
        non_growth(&mut c, v, "e_grad_s", |r| r.e_grad_s);
        non_growth(&mut c, v, "e_grad_not_s", |r| r.e_grad_not_s);
    }
    out.push(c);

    let mut c = CheckResult::new("eps robustness: spread of R_s and R_layer <= 2");
    let mut by_n: BTreeMap<(usize, EpsHatMode, Placement), Vec<&BoundRow>> = BTreeMap::new();
    for r in &ok {
        by_n.entry((r.n, r.mode, r.placement)).or_default().push(r);
    }
    for ((n, mode, p), v) in &by_n {
        if v.len() < 2 {
            continue;
        }
        for (name, f) in [("R_s", (|r: &BoundRow| r.r_s) as fn(&BoundRow) -> f64), ("R_layer", |r| r.r_layer)] {
            let hi = v.iter().map(|r| f(r)).fold(f64::MIN, f64::max);
            let lo = v.iter().map(|r| f(r)).fold(f64::MAX, f64::min);
            c.expect(hi <= EPS_SPREAD_MAX * lo, || {
                format!("{name} spread {:.4} at N={n} mode={} x*={p}", hi / lo, mode.name())
            });
        }
    }
    out.push(c);

    out
}
