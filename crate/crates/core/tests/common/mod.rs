//! Independent reference implementations shared by the integration tests.
//!
//! The assembly and quadrature oracles never call the library; the weight
//! check differentiates the library's own `ω` numerically.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

pub fn lambda(n: usize, eps: f64, rho: f64) -> f64 {
    (rho * eps * (n as f64).ln()).min(0.5)
}

/// Shishkin nodes written out directly from the piecewise definition.
pub fn nodes(n: usize, eps: f64, rho: f64) -> Vec<f64> {
    let lam = lambda(n, eps, rho);
    let half = (n / 2) as f64;
    (0..=n)
        .map(|i| {
            if i <= n / 2 {
                (i as f64 / half) * (1.0 - lam)
            } else {
                1.0 - ((n - i) as f64 / half) * lam
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug)]
pub struct Setup {
    pub n: usize,
    pub eps: f64,
    pub rho: f64,
    pub b: [f64; 2],
    pub c: f64,
    pub c_star: f64,
    pub acd: bool,
}

/// A triangle of the reference mesh with its node indices `(i, j)`.
pub struct RefTriangle {
    pub nodes: [(usize, usize); 3],
    pub p: [[f64; 2]; 3],
    pub area: f64,
    /// Gradients of the three hat functions.
    pub grad: [[f64; 2]; 3],
    pub coarse: bool,
}

pub fn triangles(s: &Setup) -> Vec<RefTriangle> {
    let xs = nodes(s.n, s.eps, s.rho);
    let lam = lambda(s.n, s.eps, s.rho);
    let mut out = Vec::new();
    for j in 0..s.n {
        for i in 0..s.n {
            for tri in [
                [(i, j), (i + 1, j), (i, j + 1)],
                [(i, j + 1), (i + 1, j), (i + 1, j + 1)],
            ] {
                let p = tri.map(|(a, b)| [xs[a], xs[b]]);
                let m = nalgebra::Matrix2::new(p[1][0] - p[0][0], p[2][0] - p[0][0], p[1][1] - p[0][1], p[2][1] - p[0][1]);
                let area = 0.5 * m.determinant().abs();
                let inv = m.try_inverse().unwrap();
                // rows of inv are gradients of the local coordinates l1, l2
                let g1 = [inv[(0, 0)], inv[(0, 1)]];
                let g2 = [inv[(1, 0)], inv[(1, 1)]];
                let g0 = [-g1[0] - g2[0], -g1[1] - g2[1]];
                let cx = (p[0][0] + p[1][0] + p[2][0]) / 3.0;
                let cy = (p[0][1] + p[1][1] + p[2][1]) / 3.0;
                out.push(RefTriangle {
                    nodes: tri,
                    p,
                    area,
                    grad: [g0, g1, g2],
                    coarse: cx < 1.0 - lam && cy < 1.0 - lam,
                });
            }
        }
    }
    out
}

pub fn dof(n: usize, (i, j): (usize, usize)) -> Option<usize> {
    (i > 0 && j > 0 && i < n && j < n).then(|| (j - 1) * (n - 1) + (i - 1))
}

pub fn coefficients(s: &Setup, t: &RefTriangle) -> (f64, f64) {
    let nf = s.n as f64;
    let delta = if t.coarse { s.c_star / nf } else { 0.0 };
    let eps_hat = if s.acd && t.coarse { s.eps.max(nf.powf(-1.5)) } else { s.eps };
    (delta, eps_hat)
}

/// Dense matrix with `A[a][c] = a(φ_c, φ_a)` and load `(1, φ_a + δ b·∇φ_a)`,
/// built from the Cartesian form of the bilinear form.
pub fn dense_system(s: &Setup) -> (DMatrix<f64>, DVector<f64>) {
    let m = (s.n - 1) * (s.n - 1);
    let mut a = DMatrix::zeros(m, m);
    let mut f = DVector::zeros(m);
    let bn = (s.b[0] * s.b[0] + s.b[1] * s.b[1]).sqrt();
    let beta = [s.b[0] / bn, s.b[1] / bn];
    let eta = [-beta[1], beta[0]];
    for t in triangles(s) {
        let (delta, eps_hat) = coefficients(s, &t);
        // D = ε ββᵀ + ε̂ ηηᵀ
        let d = [
            [s.eps * beta[0] * beta[0] + eps_hat * eta[0] * eta[0], s.eps * beta[0] * beta[1] + eps_hat * eta[0] * eta[1]],
            [s.eps * beta[1] * beta[0] + eps_hat * eta[1] * eta[0], s.eps * beta[1] * beta[1] + eps_hat * eta[1] * eta[1]],
        ];
        let bgrad = |g: [f64; 2]| s.b[0] * g[0] + s.b[1] * g[1];
        for ta in 0..3 {
            let Some(ra) = dof(s.n, t.nodes[ta]) else { continue };
            let ga = t.grad[ta];
            f[ra] += t.area / 3.0 + delta * bgrad(ga) * t.area;
            for tc in 0..3 {
                let Some(rc) = dof(s.n, t.nodes[tc]) else { continue };
                let gc = t.grad[tc];
                let diff = gc[0] * (d[0][0] * ga[0] + d[0][1] * ga[1]) + gc[1] * (d[1][0] * ga[0] + d[1][1] * ga[1]);
                let mass = if ta == tc { t.area / 6.0 } else { t.area / 12.0 };
                let conv = bgrad(gc) * t.area / 3.0;
                let sd = delta * bgrad(ga) * (bgrad(gc) * t.area + s.c * t.area / 3.0);
                a[(ra, rc)] += diff * t.area + conv + s.c * mass + sd;
            }
        }
    }
    (a, f)
}

/// Gauss-Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(m: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(m);
    for k in 1..=m {
        let mut x = (std::f64::consts::PI * (k as f64 - 0.25) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for l in 2..=m {
                let p2 = ((2 * l - 1) as f64 * x * p1 - (l - 1) as f64 * p0) / l as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = m as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push((0.5 * (x + 1.0), 0.5 * w));
    }
    out
}

/// `∫_T f` by a collapsed tensor Gauss-Legendre rule; `f` receives the point
/// and its barycentric coordinates.
pub fn duffy<F: FnMut([f64; 2], [f64; 3]) -> f64>(p: &[[f64; 2]; 3], gl: &[(f64, f64)], mut f: F) -> f64 {
    let area = 0.5 * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[1][1] - p[0][1]) * (p[2][0] - p[0][0])).abs();
    let mut s = 0.0;
    for &(u, wu) in gl {
        for &(v, wv) in gl {
            // (u, v) ∈ [0,1]² ↦ l1 = u(1-v), l2 = uv
            let l1 = u * (1.0 - v);
            let l2 = u * v;
            let l0 = 1.0 - l1 - l2;
            let x = [
                l0 * p[0][0] + l1 * p[1][0] + l2 * p[2][0],
                l0 * p[0][1] + l1 * p[1][1] + l2 * p[2][1],
            ];
            s += wu * wv * u * f(x, [l0, l1, l2]);
        }
    }
    2.0 * area * s
}

/// `ω⁻¹` and `(ω⁻¹)_β` from the closed form `(1+e^r)/2 · (1+cosh t)/2`.
pub fn weight_inverse(x: [f64; 2], x_star: [f64; 2], b: [f64; 2], sb: f64, se: f64) -> (f64, f64, f64) {
    let bn = (b[0] * b[0] + b[1] * b[1]).sqrt();
    let beta = [b[0] / bn, b[1] / bn];
    let eta = [-beta[1], beta[0]];
    let d = [x[0] - x_star[0], x[1] - x_star[1]];
    let r = (d[0] * beta[0] + d[1] * beta[1]) / sb;
    let t = (d[0] * eta[0] + d[1] * eta[1]) / se;
    let a = 0.5 * (1.0 + r.exp());
    let bb = 0.5 * (1.0 + t.cosh());
    (a * bb, 0.5 * r.exp() * bb / sb, 0.5 * a * t.sinh() / se)
}

pub fn max_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Worst scaled error between the analytic weight derivatives and central
/// differences with step `1e-6·σ` along the streamline frame.
///
/// A first derivative is compared relative to `max(|analytic|, |value|/σ)`,
/// a second derivative relative to `max(|analytic|, |value|/(σ_a σ_b))`.
pub fn weight_fd_error(w: &sdgreen::WeightSpec, x: [f64; 2]) -> f64 {
    let beta = w.frame.beta_dir;
    let eta = w.frame.eta_dir;
    let (sb, se) = (w.sigma_beta, w.sigma_eta);
    let shift = |dir: [f64; 2], h: f64| [x[0] + h * dir[0], x[1] + h * dir[1]];
    let central = |f: &dyn Fn([f64; 2]) -> f64, dir: [f64; 2], h: f64| (f(shift(dir, h)) - f(shift(dir, -h))) / (2.0 * h);
    let d = w.derivatives(x);
    let (hb, he) = (1e-6 * sb, 1e-6 * se);
    let omega = |p: [f64; 2]| w.omega(p);
    let inv = |p: [f64; 2]| w.omega_inv(p);
    let inv_b = |p: [f64; 2]| w.derivatives(p).inv_beta;
    let inv_e = |p: [f64; 2]| w.derivatives(p).inv_eta;
    let err = |fd: f64, an: f64, scale: f64| (fd - an).abs() / an.abs().max(scale);
    [
        err(central(&omega, beta, hb), d.omega_beta, d.omega / sb),
        err(central(&omega, eta, he), d.omega_eta, d.omega / se),
        err(central(&inv, beta, hb), d.inv_beta, d.inv / sb),
        err(central(&inv, eta, he), d.inv_eta, d.inv / se),
        err(central(&inv_b, beta, hb), d.inv_beta_beta, d.inv / (sb * sb)),
        err(central(&inv_b, eta, he), d.inv_beta_eta, d.inv / (sb * se)),
        err(central(&inv_e, beta, hb), d.inv_beta_eta, d.inv / (sb * se)),
        err(central(&inv_e, eta, he), d.inv_eta_eta, d.inv / (se * se)),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}
