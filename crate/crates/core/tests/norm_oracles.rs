mod common;

use std::sync::Arc;

use common::{duffy, gauss_legendre, weight_inverse, Setup};
use sdgreen::norms::{self, analyze_at_depth, interpolation_error_at, weighted_norm, QuadOptions};
use sdgreen::{
    assemble, build_mesh, msd_norm, Discretization, EpsHatMode, FEFunction, GreenSolver, MeshParams, ProblemData,
    StabilizationConfig, WeightSpec,
};

fn disc(n: usize, eps: f64, rho: f64, b: [f64; 2], c: f64, c_star: f64, mode: EpsHatMode) -> Discretization {
    let mesh = Arc::new(build_mesh(&MeshParams::new(n, eps).with_rho(rho)).unwrap());
    Discretization::new(mesh, ProblemData::new(eps, b[0], b[1], c), StabilizationConfig::new(c_star, mode)).unwrap()
}

fn hat(d: &Discretization, i: usize, j: usize) -> FEFunction {
    let mut v = FEFunction::zero(d.mesh.clone());
    v.dofs[d.mesh.dof(i, j).unwrap()] = 1.0;
    v
}

#[test]
fn hat_function_terms_on_uniform_mesh() {
    // rho = 5 saturates λ at 1/2, so N = 4 is uniform with h = 1/4
    let d = disc(4, 0.1, 5.0, [1.0, 0.0], 1.0, 0.0, EpsHatMode::Standard);
    assert!(d.mesh.transitions().is_degenerate());
    let nb = msd_norm(&d, &hat(&d, 2, 1));
    // ∫φ_x² = ∫φ_y² = 2 and ∫φ² = h²/2 for an interior hat on this triangulation
    assert!((nb.global.eps_beta - 0.2).abs() < 1e-12);
    assert!((nb.global.eps_hat_eta - 0.2).abs() < 1e-12);
    assert!((nb.global.l2 - 1.0 / 32.0).abs() < 1e-12);
    assert_eq!(nb.global.sd, 0.0);
}

#[test]
fn weighted_norm_of_hat_matches_brute_force() {
    let gl = gauss_legendre(24);
    for (mode, pole, b) in [
        (EpsHatMode::Standard, (2, 2), [1.0, 1.0]),
        (EpsHatMode::Acd, (1, 2), [1.0, 0.5]),
        (EpsHatMode::Standard, (3, 1), [0.6, 1.0]),
    ] {
        let s = Setup { n: 4, eps: 1e-2, rho: 2.5, b, c: 1.0, c_star: 0.5, acd: mode == EpsHatMode::Acd };
        let d = disc(4, s.eps, s.rho, b, s.c, s.c_star, mode);
        let g = hat(&d, pole.0, pole.1);
        let x_star = d.mesh.node_coords(d.mesh.node_id(pole.0, pole.1));
        let (sb, se) = (2.0 * 4f64.ln() / 4.0, 1.0);
        let w = WeightSpec::new(x_star, sb, se, d.frame);
        let (lib, _) = weighted_norm(&d, &g, &w, &QuadOptions::default()).unwrap();

        let bn = (b[0] * b[0] + b[1] * b[1]).sqrt();
        let beta = [b[0] / bn, b[1] / bn];
        let eta = [-beta[1], beta[0]];
        let mut terms = [0.0; 5];
        for t in common::triangles(&s) {
            let vals = t.nodes.map(|n| if n == pole { 1.0 } else { 0.0 });
            if vals.iter().all(|&v| v == 0.0) {
                continue;
            }
            let (delta, eps_hat) = common::coefficients(&s, &t);
            let gx: f64 = (0..3).map(|a| vals[a] * t.grad[a][0]).sum();
            let gy: f64 = (0..3).map(|a| vals[a] * t.grad[a][1]).sum();
            let gb = gx * beta[0] + gy * beta[1];
            let ge = gx * eta[0] + gy * eta[1];
            let f = |x: [f64; 2], l: [f64; 3]| {
                let gv = l[0] * vals[0] + l[1] * vals[1] + l[2] * vals[2];
                let (wi, wb, _) = weight_inverse(x, x_star, b, sb, se);
                [
                    s.eps * wi * gb * gb,
                    eps_hat * wi * ge * ge,
                    s.c * wi * gv * gv,
                    bn * bn * delta * wi * gb * gb,
                    0.5 * bn * wb * gv * gv,
                ]
            };
            for (k, term) in terms.iter_mut().enumerate() {
                *term += duffy(&t.p, &gl, |x, l| f(x, l)[k]);
            }
        }
        let got = [lib.global.eps_beta, lib.global.eps_hat_eta, lib.global.l2, lib.global.sd, lib.global.weight_convective];
        for (g, r) in got.iter().zip(terms) {
            assert!((g - r).abs() <= 1e-8 * r.abs().max(1e-300), "{mode:?}: {g} vs {r}");
        }
    }
}

#[test]
fn flat_weight_limit() {
    let d = disc(16, 1e-6, 2.5, [1.0, 1.0], 1.0, 0.5, EpsHatMode::Acd);
    let sys = assemble(&d).unwrap();
    let g = GreenSolver::new(&d, &sys).unwrap().green(4, 4).unwrap();
    let w = WeightSpec::new(g.x_star, 1e15, 1e15, d.frame);
    let a = norms::analyze(&d, &g, &w, &QuadOptions::default()).unwrap();
    let plain = msd_norm(&d, &g.fe).global.total();
    assert!((a.breakdown.global.total() - plain).abs() <= 1e-10 * plain);
    for v in [a.e.e_s, a.e.e_not_s, a.e.e_beta_s, a.e.e_eta_s, a.e.e_beta_not_s, a.e.e_eta_not_s] {
        assert!(v <= 1e-12, "{v}");
    }
    assert!(a.e.a_e_g.abs() <= 1e-12 * plain);
}

#[test]
fn interpolation_error_vanishes_at_nodes() {
    let d = disc(8, 1e-4, 2.5, [1.0, 1.0], 1.0, 0.5, EpsHatMode::Standard);
    let sys = assemble(&d).unwrap();
    let g = GreenSolver::new(&d, &sys).unwrap().green(2, 3).unwrap();
    let w = WeightSpec::new(g.x_star, 0.3, 0.5, d.frame);
    let scale = g.pole_value().abs();
    let mut off_node = 0.0f64;
    for id in 0..d.mesh.num_nodes() {
        let x = d.mesh.node_coords(id);
        assert!(interpolation_error_at(&d, &g.fe, &w, x).unwrap().abs() <= 1e-14 * scale);
    }
    for k in [10usize, 40, 77] {
        let e = &d.elements[k];
        let c = [(e.coords[0][0] + e.coords[1][0] + e.coords[2][0]) / 3.0, (e.coords[0][1] + e.coords[1][1] + e.coords[2][1]) / 3.0];
        off_node = off_node.max(interpolation_error_at(&d, &g.fe, &w, c).unwrap().abs());
    }
    assert!(off_node > 0.0);
}

#[test]
fn depth_self_convergence() {
    for (mode, pole) in [(EpsHatMode::Standard, (8, 8)), (EpsHatMode::Acd, (24, 8)), (EpsHatMode::Standard, (15, 8))] {
        let d = disc(32, 1e-6, 2.5, [1.0, 1.0], 1.0, 0.5, mode);
        let sys = assemble(&d).unwrap();
        let g = GreenSolver::new(&d, &sys).unwrap().green(pole.0, pole.1).unwrap();
        let p = sdgreen::weight::SigmaPolicy::evaluate(mode, 2.0, 32, 1e-6, &d.stab).unwrap();
        let w = p.weight(g.x_star, d.frame);
        let a3 = analyze_at_depth(&d, &g, &w, 3, true);
        let a4 = analyze_at_depth(&d, &g, &w, 4, true);
        let rel = |x: f64, y: f64| (x - y).abs() / y.abs();
        assert!(rel(a3.breakdown.global.total(), a4.breakdown.global.total()) < 1e-8);
        assert!(rel(a3.e.e_s, a4.e.e_s) < 1e-7);
    }
}

#[test]
fn load_functional_matches_forward_solution() {
    let d = disc(16, 1e-4, 2.5, [1.0, 1.0], 1.0, 0.5, EpsHatMode::Acd);
    let sys = assemble(&d).unwrap();
    let solver = GreenSolver::new(&d, &sys).unwrap();
    let u = solver.forward().unwrap();
    for (i, j) in [(3, 5), (9, 2), (14, 14)] {
        let g = solver.green(i, j).unwrap();
        let lhs = u.fe.dofs[g.dof];
        assert!((norms::load_functional(&d, &g.fe) - lhs).abs() <= 1e-8 * lhs.abs());
    }
}
