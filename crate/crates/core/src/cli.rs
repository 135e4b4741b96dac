//! The `sdgreen` command line.
//!
//! Exit codes: 0 success, 1 a check failed (or a computation failed), 2 a
//! usage or configuration error. Configs are JSON with a `schema_version`;
//! command-line flags override file values.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::assembly::{assemble, Discretization, EpsHatMode, ProblemData, StabilizationConfig};
use crate::error::{Error, Result};
use crate::experiments::{check_rows, run_sweep_with_workers, CheckResult, Placement, SweepConfig, CONFIG_SCHEMA_VERSION};
use crate::green::{write_nodal_csv, write_nodal_json, GreenSolver};
use crate::mesh::{build_mesh, MeshParams, Region, DEFAULT_RHO};
use crate::norms::{self, QuadOptions};
use crate::report::{fmt_f64, write_csv, write_json, SweepReport};
use crate::weight::SigmaPolicy;

/// Worker count for sweeps when neither flag nor config sets one.
pub const WORKERS_ENV: &str = "SDGREEN_WORKERS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "sdgreen", version, about = "Discrete Green functions of streamline-diffusion FEM on Shishkin meshes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Transition parameters and counts of a Shishkin mesh, as JSON.
    MeshInfo(MeshArgs),
    /// Forward solve with f = 1.
    Solve(SolveArgs),
    /// Green function of one node, its weighted norm and identity residuals.
    Green(GreenArgs),
    /// Sweep plus every check; exit 0 only if all checks pass.
    Verify(SweepArgs),
    /// Sweep and write the report.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct MeshArgs {
    #[arg(short = 'n', long = "n")]
    pub n: usize,
    #[arg(long)]
    pub eps: f64,
    #[arg(long, default_value_t = DEFAULT_RHO)]
    pub rho: f64,
    #[arg(long, default_value_t = 1.0)]
    pub beta1: f64,
    #[arg(long, default_value_t = 1.0)]
    pub beta2: f64,
}

#[derive(Debug, Args)]
pub struct ProblemArgs {
    #[arg(short = 'n', long = "n")]
    pub n: usize,
    #[arg(long)]
    pub eps: f64,
    #[arg(long, default_value = "standard")]
    pub mode: EpsHatMode,
    #[arg(long, default_value_t = 1.0)]
    pub b1: f64,
    #[arg(long, default_value_t = 1.0)]
    pub b2: f64,
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
    #[arg(long, default_value_t = 0.5)]
    pub c_star: f64,
    #[arg(long, default_value_t = DEFAULT_RHO)]
    pub rho: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
    Both,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Write the nodal solution here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct GreenArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Pole as `i,j` or one of center-s, mid-x, mid-y, near-transition.
    #[arg(long)]
    pub xstar: Placement,
    #[arg(long, default_value_t = 2.0)]
    pub k: f64,
    #[arg(long, default_value = "sdgreen-out")]
    pub out_dir: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
    #[arg(long)]
    pub max_quad_depth: Option<usize>,
}

#[derive(Debug, Default, Args)]
pub struct SweepArgs {
    /// JSON run config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub ns: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub eps: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub modes: Option<Vec<EpsHatMode>>,
    /// Placements separated by `;`, since explicit poles contain a comma.
    #[arg(long, value_delimiter = ';')]
    pub placements: Option<Vec<Placement>>,
    #[arg(long)]
    pub k: Option<f64>,
    #[arg(long)]
    pub max_quad_depth: Option<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Sum contributions in a fixed order (the default).
    #[arg(long, overrides_with = "no_deterministic")]
    pub deterministic: bool,
    #[arg(long)]
    pub no_deterministic: bool,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

/// The JSON config accepted by `sweep` and `verify`. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub schema_version: u32,
    pub ns: Vec<usize>,
    pub epsilons: Vec<f64>,
    pub modes: Vec<EpsHatMode>,
    pub placements: Vec<Placement>,
    pub k: f64,
    pub max_k: f64,
    pub b1: f64,
    pub b2: f64,
    pub c: f64,
    pub c_star: f64,
    pub rho: f64,
    pub quad_base_depth: usize,
    pub max_quad_depth: usize,
    pub quad_rel_tol: f64,
    pub deterministic: bool,
    pub workers: Option<usize>,
    pub out_dir: PathBuf,
    pub format: Format,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::from_sweep(&SweepConfig::default())
    }
}

impl RunConfig {
    pub fn from_sweep(s: &SweepConfig) -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            ns: s.ns.clone(),
            epsilons: s.epsilons.clone(),
            modes: s.modes.clone(),
            placements: s.placements.clone(),
            k: s.k,
            max_k: s.max_k,
            b1: s.b1,
            b2: s.b2,
            c: s.c,
            c_star: s.c_star,
            rho: s.rho,
            quad_base_depth: s.quad.base_depth,
            max_quad_depth: s.quad.max_depth,
            quad_rel_tol: s.quad.rel_tol,
            deterministic: s.quad.deterministic,
            workers: None,
            out_dir: PathBuf::from("sdgreen-out"),
            format: Format::Both,
        }
    }

    pub fn sweep(&self) -> SweepConfig {
        SweepConfig {
            ns: self.ns.clone(),
            epsilons: self.epsilons.clone(),
            modes: self.modes.clone(),
            placements: self.placements.clone(),
            k: self.k,
            max_k: self.max_k,
            b1: self.b1,
            b2: self.b2,
            c: self.c,
            c_star: self.c_star,
            rho: self.rho,
            quad: QuadOptions {
                base_depth: self.quad_base_depth.min(self.max_quad_depth),
                max_depth: self.max_quad_depth,
                rel_tol: self.quad_rel_tol,
                deterministic: self.deterministic,
            },
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {CONFIG_SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Apply flags, then the worker environment variable when no flag set it.
    pub fn with_overrides(mut self, a: &SweepArgs, env_workers: Option<&str>) -> Result<Self> {
        if let Some(v) = &a.ns {
            self.ns = v.clone();
        }
        if let Some(v) = &a.eps {
            self.epsilons = v.clone();
        }
        if let Some(v) = &a.modes {
            self.modes = v.clone();
        }
        if let Some(v) = &a.placements {
            self.placements = v.clone();
        }
        if let Some(k) = a.k {
            self.k = k;
        }
        if let Some(d) = a.max_quad_depth {
            self.max_quad_depth = d;
        }
        if a.deterministic {
            self.deterministic = true;
        }
        if a.no_deterministic {
            self.deterministic = false;
        }
        if let Some(d) = &a.out_dir {
            self.out_dir = d.clone();
        }
        if let Some(f) = a.format {
            self.format = f;
        }
        if let Some(w) = a.workers {
            self.workers = Some(w);
        } else if let Some(s) = env_workers {
            let w = s
                .trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("{WORKERS_ENV} must be a positive integer (got '{s}')")))?;
            self.workers = Some(w);
        }
        if self.workers == Some(0) {
            return Err(Error::Config("worker count must be at least 1".into()));
        }
        self.sweep().validate()?;
        Ok(self)
    }
}

fn is_usage_error(e: &Error) -> bool {
    matches!(
        e,
        Error::Config(_)
            | Error::InvalidMesh(_)
            | Error::InvalidProblem(_)
            | Error::NotInteriorNode(..)
            | Error::PointOutside(..)
            | Error::AssumptionViolated { .. }
            | Error::Json(_)
    )
}

/// Exit code for an error escaping a command.
pub fn exit_code(e: &Error) -> i32 {
    if is_usage_error(e) {
        EXIT_USAGE
    } else {
        EXIT_CHECK_FAILED
    }
}

/// Parse `args` (program name first) and run; returns the exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::MeshInfo(a) => mesh_info(&a),
        Command::Solve(a) => solve(&a),
        Command::Green(a) => green(&a),
        Command::Verify(a) => sweep(&a, true),
        Command::Sweep(a) => sweep(&a, false),
    }
}

fn mesh_info(a: &MeshArgs) -> Result<i32> {
    let p = MeshParams::new(a.n, a.eps).with_rho(a.rho).with_betas(a.beta1, a.beta2);
    let mesh = build_mesh(&p)?;
    let s = mesh.summary();
    if s.degenerate {
        eprintln!("warning: transition parameter saturated at 1/2, the mesh is uniform in that direction (degenerate)");
    }
    if !s.eps_assumption_holds {
        eprintln!("warning: eps = {} exceeds 1/N = {}", fmt_f64(a.eps), fmt_f64(1.0 / a.n as f64));
    }
    if !s.standard_rho {
        eprintln!("warning: non-standard rho = {}", fmt_f64(a.rho));
    }
    println!("{}", serde_json::to_string_pretty(&s)?);
    Ok(EXIT_OK)
}

fn discretization(p: &ProblemArgs) -> Result<Discretization> {
    let mesh = Arc::new(build_mesh(&MeshParams::new(p.n, p.eps).with_rho(p.rho))?);
    if !mesh.params().satisfies_eps_assumption() {
        return Err(Error::AssumptionViolated { eps: p.eps, n: p.n });
    }
    let problem = ProblemData::new(p.eps, p.b1, p.b2, p.c);
    Discretization::new(mesh, problem, StabilizationConfig::new(p.c_star, p.mode))
}

fn write_dump(fe: &crate::assembly::FEFunction, path: &Path, format: Format) -> Result<()> {
    match format {
        Format::Csv => write_nodal_csv(fe, path),
        Format::Json => write_nodal_json(fe, path),
        Format::Both => {
            write_nodal_csv(fe, &path.with_extension("csv"))?;
            write_nodal_json(fe, &path.with_extension("json"))
        }
    }
}

fn solve(a: &SolveArgs) -> Result<i32> {
    let disc = discretization(&a.problem)?;
    let sys = assemble(&disc)?;
    let solver = GreenSolver::new(&disc, &sys)?;
    let u = solver.forward()?;
    let max = u.fe.dofs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    println!("dofs {}", disc.n_dofs());
    println!("residual {}", fmt_f64(u.residual));
    println!("max_abs_u {}", fmt_f64(max));
    println!("pivot_ratio {}", fmt_f64(solver.factorization().pivot_ratio()));
    println!("msd_norm {}", fmt_f64(norms::msd_norm(&disc, &u.fe).norm()));
    if let Some(out) = &a.out {
        write_dump(&u.fe, out, a.format)?;
    }
    Ok(EXIT_OK)
}

fn green(a: &GreenArgs) -> Result<i32> {
    let disc = discretization(&a.problem)?;
    let (i, j) = a.xstar.node(&disc.mesh)?;
    let id = disc.mesh.node_id(i, j);
    if disc.mesh.region_of(disc.mesh.node_coords(id))? == Region::XY {
        eprintln!("warning: pole ({i}, {j}) is in the corner layer; sweeps exclude such poles");
    }
    let mut quad = QuadOptions::default();
    if let Some(d) = a.max_quad_depth {
        if d > crate::quadrature::MAX_LEVEL {
            return Err(Error::Config(format!("max quadrature depth is {}", crate::quadrature::MAX_LEVEL)));
        }
        quad.max_depth = d;
        quad.base_depth = quad.base_depth.min(d);
    }
    let policy = SigmaPolicy::evaluate(a.problem.mode, a.k, a.problem.n, a.problem.eps, &disc.stab)?;
    for f in policy.failing() {
        eprintln!("warning: sigma constraint fails: {f}");
    }
    if policy.sigma_beta_exceeds_one {
        eprintln!("warning: sigma_beta = {} exceeds 1", policy.sigma_beta);
    }
    let sys = assemble(&disc)?;
    let solver = GreenSolver::new(&disc, &sys)?;
    let g = solver.green(i, j)?;
    let u = solver.forward()?;
    let w = policy.weight(g.x_star, disc.frame);
    let analysis = norms::analyze(&disc, &g, &w, &quad)?;

    let nodal = g.fe.nodal_values();
    let pole = g.pole_value();
    let coercivity = (disc.form_on_nodes(&nodal, &nodal)? - pole).abs() / pole.abs();
    let u_star = u.fe.dofs[g.dof];
    let duality = (norms::load_functional(&disc, &g.fe) - u_star).abs() / u_star.abs();

    std::fs::create_dir_all(&a.out_dir)?;
    let dump = a.out_dir.join(match a.format {
        Format::Json => "green.json",
        _ => "green.csv",
    });
    write_dump(&g.fe, &dump, a.format)?;
    let summary = serde_json::json!({
        "N": a.problem.n,
        "eps": a.problem.eps,
        "mode": a.problem.mode,
        "xstar": [i, j],
        "x_star": g.x_star,
        "k": a.k,
        "sigma_beta": policy.sigma_beta,
        "sigma_eta": policy.sigma_eta,
        "policy_accepted": policy.accepted(),
        "sigma_beta_exceeds_one": policy.sigma_beta_exceeds_one,
        "pole_value": pole,
        "solve_residual": g.residual,
        "norm_msd": norms::msd_norm(&disc, &g.fe),
        "norm_w": analysis.breakdown,
        "lemma": analysis.lemma,
        "e": analysis.e,
        "quad_depth": analysis.depth,
        "residuals": {
            "coercivity": coercivity,
            "duality": duality,
            "norm_identity": analysis.lemma.identity_residual,
            "decomposition": analysis.lemma.decomposition_residual,
        },
    });
    std::fs::write(a.out_dir.join("green_norms.json"), serde_json::to_string_pretty(&summary)?)?;

    println!("xstar {i},{j}");
    println!("norm_w {}", fmt_f64(analysis.norm_w()));
    println!("residual_coercivity {}", fmt_f64(coercivity));
    println!("residual_duality {}", fmt_f64(duality));
    println!("residual_norm_identity {}", fmt_f64(analysis.lemma.identity_residual));
    Ok(EXIT_OK)
}

/// Load, override and validate the run config for `sweep`/`verify`.
pub fn resolve_config(a: &SweepArgs, env_workers: Option<&str>) -> Result<RunConfig> {
    let base = match &a.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    base.with_overrides(a, env_workers)
}

fn sweep(a: &SweepArgs, verify: bool) -> Result<i32> {
    let env = std::env::var(WORKERS_ENV).ok();
    let cfg = resolve_config(a, env.as_deref())?;
    let sweep_cfg = cfg.sweep();
    let rows = run_sweep_with_workers(&sweep_cfg, cfg.workers)?;
    let checks: Vec<CheckResult> = if verify { check_rows(&rows) } else { Vec::new() };
    let report = SweepReport::new(&sweep_cfg, rows, checks);

    std::fs::create_dir_all(&cfg.out_dir)?;
    if matches!(cfg.format, Format::Csv | Format::Both) {
        write_csv(&report.rows, &cfg.out_dir.join("report.csv"))?;
    }
    if matches!(cfg.format, Format::Json | Format::Both) {
        write_json(&report, &cfg.out_dir.join("report.json"))?;
    }

    println!("rows {} failed {}", report.rows_total, report.rows_failed);
    for r in report.rows.iter().filter(|r| !r.is_ok()) {
        eprintln!(
            "row N={} eps={} mode={} x*={}: {}",
            r.n,
            fmt_f64(r.eps),
            r.mode.name(),
            r.placement,
            r.error.as_deref().unwrap_or("")
        );
    }
    if !verify {
        return Ok(EXIT_OK);
    }
    for c in &report.checks {
        println!("{c}");
        for f in &c.failures {
            println!("    {f}");
        }
    }
    Ok(if report.all_passed() { EXIT_OK } else { EXIT_CHECK_FAILED })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_match_sweep() {
        let c = RunConfig::default();
        assert_eq!(c.sweep(), SweepConfig::default());
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), c);
    }

    #[test]
    fn unknown_keys_and_versions_rejected() {
        assert!(RunConfig::from_json(r#"{"schema_version": 1, "nss": [8]}"#).is_err());
        assert!(RunConfig::from_json(r#"{"schema_version": 7}"#).is_err());
        assert!(RunConfig::from_json("{not json").is_err());
        let c = RunConfig::from_json(r#"{"schema_version": 1, "ns": [8, 16], "k": 3}"#).unwrap();
        assert_eq!(c.ns, vec![8, 16]);
        assert_eq!(c.k, 3.0);
    }

    #[test]
    fn flags_override_file_and_env() {
        let args = SweepArgs {
            k: Some(4.0),
            ns: Some(vec![16]),
            ..SweepArgs::default()
        };
        let c = RunConfig::default().with_overrides(&args, Some("3")).unwrap();
        assert_eq!((c.k, c.ns.clone(), c.workers), (4.0, vec![16], Some(3)));
        let args = SweepArgs {
            workers: Some(2),
            ..SweepArgs::default()
        };
        let c = RunConfig::default().with_overrides(&args, Some("3")).unwrap();
        assert_eq!(c.workers, Some(2));
        assert!(RunConfig::default().with_overrides(&SweepArgs::default(), Some("x")).is_err());
    }

    #[test]
    fn usage_errors_map_to_2() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::NotInteriorNode(0, 0)), 2);
        assert_eq!(exit_code(&Error::Singular { column: 0 }), 1);
    }
}
