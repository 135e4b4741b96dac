//! Exponential weight centred at a mesh node, and the rules for its decay scales.
//!
//! With `r = (x - x*)·β / σ_β` and `t = (x - x*)·η / σ_η` the weight is
//! `ω = g(r) g(t) g(-t)`, `g(r) = 2 / (1 + e^r)`. Its inverse factors as
//! `ω⁻¹ = A(r) B(t)` with `A(r) = (1 + e^r)/2` and `B(t) = (1 + cosh t)/2`,
//! which makes every derivative a short closed form.

use serde::{Deserialize, Serialize};

use crate::assembly::{EpsHatMode, StabilizationConfig};
use crate::error::{Error, Result};

/// `g(r) = 2 / (1 + e^r)`, evaluated without overflow for large `|r|`.
pub fn g(r: f64) -> f64 {
    if r > 0.0 {
        let e = (-r).exp();
        2.0 * e / (1.0 + e)
    } else {
        2.0 / (1.0 + r.exp())
    }
}

/// `g'(r) = -2 e^r / (1 + e^r)^2`.
pub fn g_prime(r: f64) -> f64 {
    // even in r
    let e = (-r.abs()).exp();
    -2.0 * e / ((1.0 + e) * (1.0 + e))
}

/// Orthonormal frame aligned with the constant convection field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamlineFrame {
    /// `|b|`.
    pub b: f64,
    pub beta_dir: [f64; 2],
    pub eta_dir: [f64; 2],
}

impl StreamlineFrame {
    pub fn new(b1: f64, b2: f64) -> Result<Self> {
        let b = b1.hypot(b2);
        if !(b.is_finite() && b > 0.0) {
            return Err(Error::InvalidProblem(format!(
                "convection ({b1}, {b2}) must be finite and nonzero"
            )));
        }
        Ok(Self {
            b,
            beta_dir: [b1 / b, b2 / b],
            eta_dir: [-b2 / b, b1 / b],
        })
    }

    /// Components `(v_β, v_η)` of a vector.
    pub fn project(&self, v: [f64; 2]) -> (f64, f64) {
        (
            self.beta_dir[0] * v[0] + self.beta_dir[1] * v[1],
            self.eta_dir[0] * v[0] + self.eta_dir[1] * v[1],
        )
    }
}

/// Pole and decay scales of one weight function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightSpec {
    pub x_star: [f64; 2],
    pub sigma_beta: f64,
    pub sigma_eta: f64,
    pub frame: StreamlineFrame,
}

/// Weight, inverse weight and their streamline/crosswind derivatives at a point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WeightDerivatives {
    pub omega: f64,
    pub omega_beta: f64,
    pub omega_eta: f64,
    pub inv: f64,
    pub inv_beta: f64,
    pub inv_eta: f64,
    pub inv_beta_beta: f64,
    pub inv_beta_eta: f64,
    pub inv_eta_eta: f64,
}

impl WeightSpec {
    pub fn new(x_star: [f64; 2], sigma_beta: f64, sigma_eta: f64, frame: StreamlineFrame) -> Self {
        Self {
            x_star,
            sigma_beta,
            sigma_eta,
            frame,
        }
    }

    /// Scaled coordinates `(r, t)` of `x` relative to the pole.
    pub fn scaled(&self, x: [f64; 2]) -> (f64, f64) {
        let (s_beta, s_eta) = self
            .frame
            .project([x[0] - self.x_star[0], x[1] - self.x_star[1]]);
        (s_beta / self.sigma_beta, s_eta / self.sigma_eta)
    }

    pub fn omega(&self, x: [f64; 2]) -> f64 {
        let (r, t) = self.scaled(x);
        g(r) * g(t) * g(-t)
    }

    pub fn omega_inv(&self, x: [f64; 2]) -> f64 {
        let (r, t) = self.scaled(x);
        0.5 * (1.0 + r.exp()) * 0.5 * (1.0 + t.cosh())
    }

    /// `(ω⁻¹, (ω⁻¹)_β, (ω⁻¹)_η)` with two exponentials.
    #[inline]
    pub fn inverse_with_gradient(&self, x: [f64; 2]) -> (f64, f64, f64) {
        let (r, t) = self.scaled(x);
        let er = r.exp();
        let et = t.exp();
        let ie = 1.0 / et;
        let a = 0.5 * (1.0 + er);
        let bt = 0.5 + 0.25 * (et + ie);
        (
            a * bt,
            0.5 * er * bt / self.sigma_beta,
            a * 0.25 * (et - ie) / self.sigma_eta,
        )
    }

    pub fn derivatives(&self, x: [f64; 2]) -> WeightDerivatives {
        let (r, t) = self.scaled(x);
        let sb = self.sigma_beta;
        let se = self.sigma_eta;

        let er = r.exp();
        let a = 0.5 * (1.0 + er);
        let a_r = 0.5 * er;
        let cosh = t.cosh();
        let sinh = t.sinh();
        let bt = 0.5 * (1.0 + cosh);
        let b_t = 0.5 * sinh;
        let b_tt = 0.5 * cosh;

        // g(t) g(-t) = 1 / B(t), and its t-derivative -2 tanh(t/2) / (1 + cosh t)
        let gg = 1.0 / bt;
        let gg_t = -2.0 * (0.5 * t).tanh() / (1.0 + cosh);
        let gr = g(r);

        WeightDerivatives {
            omega: gr * gg,
            omega_beta: g_prime(r) / sb * gg,
            omega_eta: gr * gg_t / se,
            inv: a * bt,
            inv_beta: a_r * bt / sb,
            inv_eta: a * b_t / se,
            inv_beta_beta: a_r * bt / (sb * sb),
            inv_beta_eta: a_r * b_t / (sb * se),
            inv_eta_eta: a * b_tt / (se * se),
        }
    }
}

/// One inequality from the constraint list on `σ_β`, `σ_η`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Relative slack on `lhs >= rhs`; several constraints are equalities by construction.
const CONSTRAINT_SLACK: f64 = 1e-12;

impl Constraint {
    fn ge(name: &str, lhs: f64, rhs: f64) -> Self {
        Self {
            name: name.to_string(),
            lhs,
            rhs,
            holds: lhs >= rhs * (1.0 - CONSTRAINT_SLACK),
        }
    }
}

/// Decay scales picked for a crosswind mode, with every constraint evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaPolicy {
    pub mode: EpsHatMode,
    pub k: f64,
    pub n: usize,
    pub epsilon: f64,
    pub sigma_beta: f64,
    pub sigma_eta: f64,
    /// `max(ε, N^{-3/2})`.
    pub eps_tilde: f64,
    /// `max ε̂` over the domain.
    pub eps_hat_max: f64,
    /// `ε̂` on the coarse region.
    pub eps_hat_s: f64,
    /// `max δ` over the domain.
    pub delta_max: f64,
    pub sigma_eta_star: f64,
    pub constraints: Vec<Constraint>,
    /// `σ_β > 1`, outside the range assumed for the nodal bound at `x*`.
    pub sigma_beta_exceeds_one: bool,
}

impl SigmaPolicy {
    /// Evaluate the policy without rejecting on constraint failure.
    pub fn evaluate(
        mode: EpsHatMode,
        k: f64,
        n: usize,
        epsilon: f64,
        stab: &StabilizationConfig,
    ) -> Result<Self> {
        if !(k.is_finite() && k > 0.0) {
            return Err(Error::Config(format!("k must be positive and finite (got {k})")));
        }
        if n < 4 || n % 2 != 0 {
            return Err(Error::InvalidMesh(format!("N must be even and >= 4 (got {n})")));
        }
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::InvalidProblem(format!("epsilon must be positive (got {epsilon})")));
        }
        let nf = n as f64;
        if epsilon > 1.0 / nf {
            return Err(Error::AssumptionViolated { eps: epsilon, n });
        }
        let ln_n = nf.ln();
        let eps_tilde = epsilon.max(nf.powf(-1.5));
        let eps_hat_s = match mode {
            EpsHatMode::Standard => epsilon,
            EpsHatMode::Acd => eps_tilde,
        };
        let eps_hat_max = eps_hat_s.max(epsilon);
        let delta_max = stab.c_star.max(0.0) / nf;

        let sigma_beta = k * ln_n / nf;
        let sigma_eta = match mode {
            EpsHatMode::Standard => k / nf.sqrt(),
            EpsHatMode::Acd => k * eps_tilde.sqrt() * ln_n.sqrt(),
        };
        let sigma_eta_star = if eps_hat_s <= nf.powi(-2) {
            k / nf.sqrt()
        } else {
            k / eps_hat_s.sqrt() * nf.powf(-1.5)
        };

        let constraints = vec![
            Constraint {
                name: "k > 1".to_string(),
                lhs: k,
                rhs: 1.0,
                holds: k > 1.0,
            },
            Constraint::ge("sigma_beta >= k(eps + delta_M)", sigma_beta, k * (epsilon + delta_max)),
            Constraint::ge("sigma_eta >= k eps_hat_M^(1/2)", sigma_eta, k * eps_hat_max.sqrt()),
            Constraint::ge("sigma_beta >= k/N", sigma_beta, k / nf),
            Constraint::ge("sigma_eta >= k N^(-3/4)", sigma_eta, k * nf.powf(-0.75)),
            Constraint::ge("sigma_eta >= sigma_eta_star", sigma_eta, sigma_eta_star),
            Constraint::ge("sigma_beta >= k ln(N)/N", sigma_beta, k * ln_n / nf),
            Constraint::ge("sigma_eta >= k ln(N)/N", sigma_eta, k * ln_n / nf),
            Constraint::ge(
                "sigma_eta >= k eps^(1/4) N^(-1/2) ln(N)^(1/2)",
                sigma_eta,
                k * epsilon.powf(0.25) / nf.sqrt() * ln_n.sqrt(),
            ),
        ];

        Ok(Self {
            mode,
            k,
            n,
            epsilon,
            sigma_beta,
            sigma_eta,
            eps_tilde,
            eps_hat_max,
            eps_hat_s,
            delta_max,
            sigma_eta_star,
            constraints,
            sigma_beta_exceeds_one: sigma_beta > 1.0,
        })
    }

    pub fn accepted(&self) -> bool {
        self.constraints.iter().all(|c| c.holds)
    }

    pub fn failing(&self) -> Vec<String> {
        self.constraints
            .iter()
            .filter(|c| !c.holds)
            .map(|c| format!("{} ({:.6e} < {:.6e})", c.name, c.lhs, c.rhs))
            .collect()
    }

    pub fn weight(&self, x_star: [f64; 2], frame: StreamlineFrame) -> WeightSpec {
        WeightSpec::new(x_star, self.sigma_beta, self.sigma_eta, frame)
    }
}

/// Policy for `mode`, rejected unless every constraint holds.
pub fn sigma_policy(
    mode: EpsHatMode,
    k: f64,
    n: usize,
    epsilon: f64,
    stab: &StabilizationConfig,
) -> Result<SigmaPolicy> {
    let policy = SigmaPolicy::evaluate(mode, k, n, epsilon, stab)?;
    if policy.accepted() {
        Ok(policy)
    } else {
        Err(Error::PolicyRejected(policy.failing()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frame() -> StreamlineFrame {
        StreamlineFrame::new(1.0, 0.6).unwrap()
    }

    fn spec() -> WeightSpec {
        WeightSpec::new([0.4, 0.3], 0.2, 0.35, frame())
    }

    #[test]
    fn g_values() {
        assert_eq!(g(0.0), 1.0);
        for r in [0.5, 3.0, 40.0] {
            assert!((g(r) + g(-r) - 2.0).abs() < 1e-15);
        }
        let g50 = g(50.0);
        assert!((g50 - 3.857_499_695_927_835_6e-22).abs() < 1e-36);
        assert!(g(800.0).is_finite() && g(-800.0) == 2.0);
        assert_eq!(g_prime(0.0), -0.5);
        assert!(g_prime(800.0).is_finite());
    }

    #[test]
    fn g_prime_matches_difference_quotient() {
        for r in [-5.0, -0.3, 0.0, 0.7, 4.0] {
            let h = 1e-6;
            let fd = (g(r + h) - g(r - h)) / (2.0 * h);
            assert!((fd - g_prime(r)).abs() < 1e-9);
        }
    }

    #[test]
    fn frame_is_orthonormal() {
        let f = frame();
        let dot = f.beta_dir[0] * f.eta_dir[0] + f.beta_dir[1] * f.eta_dir[1];
        assert!(dot.abs() < 1e-16);
        assert!((f.beta_dir[0].hypot(f.beta_dir[1]) - 1.0).abs() < 1e-15);
        assert!((f.eta_dir[0].hypot(f.eta_dir[1]) - 1.0).abs() < 1e-15);
        assert!(StreamlineFrame::new(0.0, 0.0).is_err());
    }

    #[test]
    fn omega_at_pole() {
        let w = spec();
        assert_eq!(w.omega(w.x_star), 1.0);
        let d = w.derivatives(w.x_star);
        assert_eq!(d.inv, 1.0);
        assert!((d.inv_beta - 1.0 / (2.0 * w.sigma_beta)).abs() < 1e-15);
        assert_eq!(d.omega_eta, 0.0);
        assert_eq!(d.inv_eta, 0.0);
    }

    #[test]
    fn omega_one_sigma_downstream() {
        let w = spec();
        let b = w.frame.beta_dir;
        let x = [w.x_star[0] + w.sigma_beta * b[0], w.x_star[1] + w.sigma_beta * b[1]];
        assert!((w.omega(x) - 0.537_882_842_739_990_2).abs() < 1e-14);
    }

    #[test]
    fn crosswind_derivative_near_pole() {
        // ω(x* + sη) = 2/(1 + cosh(s/σ_η)) ≈ 1 - s²/(4σ_η²), so ω_η ≈ -s/(2σ_η²)
        let w = spec();
        let e = w.frame.eta_dir;
        let s = 1e-4 * w.sigma_eta;
        let d = w.derivatives([w.x_star[0] + s * e[0], w.x_star[1] + s * e[1]]);
        let expect = -s / (2.0 * w.sigma_eta * w.sigma_eta);
        assert!((d.omega_eta - expect).abs() < 1e-6 * expect.abs());
    }

    #[test]
    fn extreme_arguments_stay_finite() {
        let f = StreamlineFrame::new(1.0, 0.0).unwrap();
        let w = WeightSpec::new([0.0, 0.0], 1.0, 1.0, f);
        for x in [[700.0, 0.0], [-700.0, 0.0], [0.0, 700.0], [0.0, -700.0]] {
            let d = w.derivatives(x);
            for v in [
                d.omega, d.omega_beta, d.omega_eta, d.inv, d.inv_beta, d.inv_eta,
                d.inv_beta_beta, d.inv_beta_eta, d.inv_eta_eta,
            ] {
                assert!(v.is_finite(), "{x:?} {d:?}");
            }
        }
    }

    #[test]
    fn policy_standard() {
        let stab = StabilizationConfig::default();
        let p = sigma_policy(EpsHatMode::Standard, 2.0, 16, 1e-6, &stab).unwrap();
        assert!((p.sigma_beta - 0.346_573_590_279_972_64).abs() < 1e-15);
        assert_eq!(p.sigma_eta, 0.5);
        assert!(p.accepted());
        assert!(!p.sigma_beta_exceeds_one);
    }

    #[test]
    fn policy_acd() {
        let stab = StabilizationConfig {
            eps_hat_mode: EpsHatMode::Acd,
            ..StabilizationConfig::default()
        };
        let p = sigma_policy(EpsHatMode::Acd, 2.0, 16, 1e-6, &stab).unwrap();
        assert_eq!(p.eps_tilde, 0.015_625);
        assert!((p.sigma_eta - 0.416_277_305_578_848_84).abs() < 1e-15);
    }

    #[test]
    fn policy_rejects_large_eps() {
        let stab = StabilizationConfig::default();
        let err = sigma_policy(EpsHatMode::Standard, 2.0, 16, 0.1, &stab).unwrap_err();
        assert!(matches!(err, Error::AssumptionViolated { .. }));
    }

    #[test]
    fn policy_small_k_fails_constraint() {
        let stab = StabilizationConfig::default();
        let p = SigmaPolicy::evaluate(EpsHatMode::Standard, 0.5, 16, 1e-6, &stab).unwrap();
        assert!(!p.accepted());
        assert!(p.failing().iter().any(|f| f.starts_with("k > 1")));
        assert!(sigma_policy(EpsHatMode::Standard, 0.5, 16, 1e-6, &stab).is_err());
    }

    #[test]
    fn standard_sigma_eta_dominates_over_grid() {
        // the crosswind scale k N^{-1/2} clears every σ_η constraint for ε <= 1/N
        let stab = StabilizationConfig::default();
        for n in (4..=256).step_by(2) {
            let nf = n as f64;
            for e in 0..=40 {
                let eps = (1.0 / nf) * 10f64.powf(-0.25 * e as f64);
                for k in [1.5, 2.0, 4.0] {
                    let p = SigmaPolicy::evaluate(EpsHatMode::Standard, k, n, eps, &stab).unwrap();
                    for c in p.constraints.iter().filter(|c| c.name.starts_with("sigma_eta")) {
                        assert!(c.holds, "N={n} eps={eps} {}", c.name);
                    }
                }
            }
        }
    }

    proptest! {
        #[test]
        fn omega_decreases_downstream(t in -1.5f64..1.5, dt in 1e-3f64..0.5) {
            let w = spec();
            let b = w.frame.beta_dir;
            let at = |s: f64| w.omega([w.x_star[0] + s * b[0], w.x_star[1] + s * b[1]]);
            prop_assert!(at(t + dt) < at(t));
        }

        #[test]
        fn omega_symmetric_across_streamline(t in -1.0f64..1.0, s in -0.5f64..0.5) {
            let w = spec();
            let (b, e) = (w.frame.beta_dir, w.frame.eta_dir);
            let p = |u: f64| [w.x_star[0] + s * b[0] + u * e[0], w.x_star[1] + s * b[1] + u * e[1]];
            let (a, c) = (w.omega(p(t)), w.omega(p(-t)));
            prop_assert!((a - c).abs() <= 1e-14 * a.max(c));
        }

        #[test]
        fn omega_times_inverse_is_one(x in 0.0f64..1.0, y in 0.0f64..1.0) {
            let w = spec();
            let v = w.omega([x, y]) * w.omega_inv([x, y]);
            prop_assert!((v - 1.0).abs() < 1e-14);
            let d = w.derivatives([x, y]);
            prop_assert!(d.inv_beta > 0.0);
            let (inv, ib, ie) = w.inverse_with_gradient([x, y]);
            prop_assert!((inv - d.inv).abs() <= 1e-14 * d.inv);
            prop_assert!((ib - d.inv_beta).abs() <= 1e-14 * d.inv_beta);
            prop_assert!((ie - d.inv_eta).abs() <= 1e-13 * d.inv_eta.abs().max(d.inv / w.sigma_eta));
            prop_assert!(d.omega > 0.0 && d.omega < 2.0);
        }
    }
}
