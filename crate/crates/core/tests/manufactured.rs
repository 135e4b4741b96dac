use std::sync::Arc;

use sdgreen::{
    assemble, build_mesh, msd_norm, solve_forward, Discretization, EpsHatMode, FEFunction, MeshParams, ProblemData,
    StabilizationConfig,
};

const EPS: f64 = 0.1;

fn w(p: [f64; 2]) -> f64 {
    p[0] * (1.0 - p[0]) * p[1] * (1.0 - p[1])
}

/// `-εΔw + b·∇w + cw` for `b = (1, 1)`, `c = 1`.
fn source(p: [f64; 2]) -> f64 {
    let (x, y) = (p[0], p[1]);
    let lap = -2.0 * (y * (1.0 - y) + x * (1.0 - x));
    let grad = (1.0 - 2.0 * x) * y * (1.0 - y) + x * (1.0 - x) * (1.0 - 2.0 * y);
    -EPS * lap + grad + w(p)
}

fn error(n: usize) -> f64 {
    let mesh = Arc::new(build_mesh(&MeshParams::new(n, EPS)).unwrap());
    let problem = ProblemData::new(EPS, 1.0, 1.0, 1.0).with_source(source);
    let d = Discretization::new(mesh.clone(), problem, StabilizationConfig::new(0.5, EpsHatMode::Standard)).unwrap();
    let u = solve_forward(&d, &assemble(&d).unwrap()).unwrap();
    let wi = FEFunction::interpolate(mesh.clone(), w);
    let diff: Vec<f64> = u.fe.dofs.iter().zip(&wi.dofs).map(|(a, b)| a - b).collect();
    msd_norm(&d, &FEFunction::new(mesh, diff).unwrap()).norm()
}

#[test]
fn discrete_error_shrinks_under_refinement() {
    let errs: Vec<f64> = [8, 16, 32].iter().map(|&n| error(n)).collect();
    // at ε = 0.1 the mesh is uniform and the energy error is at least first order
    for pair in errs.windows(2) {
        assert!(pair[1] < pair[0] / 1.5, "{errs:?}");
    }
}
