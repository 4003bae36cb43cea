//! Projected SGD on `F(w) = (λ/2)‖w − w*‖²` over a ball, with a bounded
//! stochastic gradient oracle.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::concentration::{clamped_loglog, Guarantee, MomentProfile};
use crate::error::{invalid, Result};
use crate::linalg::Vector;

/// Smallest start time for which the moment bounds hold.
pub const SGD_MIN_START: u64 = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct SgdConfig {
    pub dim: usize,
    pub lambda: f64,
    pub g: f64,
    pub radius: f64,
    pub w_star: Vector,
    /// Radius of the spherical oracle noise.
    pub noise: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            dim: 5,
            lambda: 1.0,
            g: 2.0,
            radius: 1.0,
            w_star: Vector::zeros(5),
            noise: 1.0,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.w_star.dim() != self.dim {
            return Err(invalid("optimum must have the configured dimension"));
        }
        if !(self.lambda > 0.0 && self.g > 0.0 && self.radius > 0.0 && self.noise >= 0.0) {
            return Err(invalid(
                "lambda, G and radius must be positive; noise nonnegative",
            ));
        }
        let ws = self.w_star.norm();
        if ws > self.radius {
            return Err(invalid("optimum lies outside the domain"));
        }
        if self.lambda * (self.radius + ws) + self.noise > self.g * (1.0 + 1e-12) {
            return Err(invalid(format!(
                "gradient bound violated: lambda*(R+|w*|)+c = {} > G = {}",
                self.lambda * (self.radius + ws) + self.noise,
                self.g
            )));
        }
        Ok(())
    }

    /// `4G²/λ²`, an almost-sure bound on `‖w − w*‖²`.
    pub fn potential_cap(&self) -> f64 {
        4.0 * self.g * self.g / (self.lambda * self.lambda)
    }

    /// Starting point `R·e₁`.
    pub fn initial_state(&self) -> SgdState {
        SgdState {
            w: Vector::basis(self.dim, 0).scaled(self.radius),
            t: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SgdState {
    pub w: Vector,
    pub t: u64,
}

/// A uniformly random unit vector.
pub fn unit_sphere<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vector {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-300 {
            return v.into_iter().map(|x| x / n).collect::<Vec<_>>().into();
        }
    }
}

/// `ĝ = λ(w − w*) + c·u` with `u` uniform on the unit sphere.
pub fn oracle_grad<R: Rng + ?Sized>(w: &Vector, cfg: &SgdConfig, rng: &mut R) -> Vector {
    let grad = w.sub(&cfg.w_star).scaled(cfg.lambda);
    if cfg.noise == 0.0 {
        return grad;
    }
    grad.axpy(cfg.noise, &unit_sphere(cfg.dim, rng))
}

/// Radial projection onto the ball of radius `r`.
pub fn project_ball(w: Vector, r: f64) -> Vector {
    let n = w.norm();
    if n > r {
        w.scaled(r / n)
    } else {
        w
    }
}

/// One projected step with a given gradient, `η = 1/(λt)` for the new index `t`.
pub fn sgd_step_with_grad(state: &SgdState, g_hat: &Vector, cfg: &SgdConfig) -> SgdState {
    let t = state.t + 1;
    let eta = 1.0 / (cfg.lambda * t as f64);
    SgdState {
        w: project_ball(state.w.axpy(-eta, g_hat), cfg.radius),
        t,
    }
}

/// One step; also returns the oracle gradient that was used.
pub fn sgd_step_traced<R: Rng + ?Sized>(
    state: &SgdState,
    cfg: &SgdConfig,
    rng: &mut R,
) -> (SgdState, Vector) {
    let g_hat = oracle_grad(&state.w, cfg, rng);
    (sgd_step_with_grad(state, &g_hat, cfg), g_hat)
}

pub fn sgd_step<R: Rng + ?Sized>(state: &SgdState, cfg: &SgdConfig, rng: &mut R) -> SgdState {
    sgd_step_traced(state, cfg, rng).0
}

/// `‖w − w*‖²`
pub fn sgd_potential(w: &Vector, w_star: &Vector) -> f64 {
    w.sub(w_star).norm_sq()
}

/// `N_t = 2η(λX_{t−1} − ĝᵀ(w_{t−1} − w*)) + η²‖ĝ‖²`, so that
/// `X_t ≤ (1 − 2ηλ)X_{t−1} + N_t`.
pub fn sgd_noise_term(w_prev: &Vector, g_hat: &Vector, t: u64, cfg: &SgdConfig) -> f64 {
    let eta = 1.0 / (cfg.lambda * t as f64);
    let diff = w_prev.sub(&cfg.w_star);
    2.0 * eta * (cfg.lambda * diff.norm_sq() - g_hat.dot(&diff)) + eta * eta * g_hat.norm_sq()
}

/// `∏_{T0<t'≤t}(1 − 2/t') = T0(T0−1)/(t(t−1))`.
pub fn product_decay(t0: u64, t: u64) -> f64 {
    let (t0, t) = (t0 as f64, t as f64);
    t0 * (t0 - 1.0) / (t * (t - 1.0))
}

/// `B = 20G²t/(λ²T0²)`, `μ = 2G²/(λ²T0²)`, `σ² = G²t²/(λ²T0⁴)·(80Λ + 3G²/(λ²t²))`.
pub fn sgd_moment_profile(cfg: &SgdConfig, t0: u64) -> Result<MomentProfile> {
    if t0 < SGD_MIN_START {
        return Err(invalid(format!(
            "start time must be at least {SGD_MIN_START}, got {t0}"
        )));
    }
    let g2 = cfg.g * cfg.g;
    let l2 = cfg.lambda * cfg.lambda;
    let t0f = t0 as f64;
    let t02 = t0f * t0f;
    Ok(MomentProfile::new(
        move |t, _| 20.0 * g2 * t as f64 / (l2 * t02),
        move |_, _| 2.0 * g2 / (l2 * t02),
        move |t, big| {
            let t = t as f64;
            g2 * t * t / (l2 * t02 * t02) * (80.0 * big + 3.0 * g2 / (l2 * t * t))
        },
        t0,
    ))
}

/// `1000G²ln(1/δ)/(λ²t)` (last) or `1000G²(ln(1/δ) + 2lnln(t+1))/(λ²t)` (uniform).
pub fn sgd_bound(t: u64, delta: f64, guarantee: Guarantee, cfg: &SgdConfig) -> f64 {
    sgd_bound_with(t, delta, guarantee, cfg, 2.0)
}

/// Alternate uniform rate with a single `lnln(t+1)` term.
pub fn sgd_uniform_bound_alt(t: u64, delta: f64, cfg: &SgdConfig) -> f64 {
    sgd_bound_with(t, delta, Guarantee::Uniform, cfg, 1.0)
}

fn sgd_bound_with(
    t: u64,
    delta: f64,
    guarantee: Guarantee,
    cfg: &SgdConfig,
    loglog_factor: f64,
) -> f64 {
    let log = (1.0 / delta).ln();
    let extra = match guarantee {
        Guarantee::Last => 0.0,
        Guarantee::Uniform => loglog_factor * clamped_loglog(t),
    };
    1000.0 * cfg.g * cfg.g * (log + extra) / (cfg.lambda * cfg.lambda * t.max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit_cfg(noise: f64) -> SgdConfig {
        SgdConfig {
            dim: 2,
            lambda: 1.0,
            g: 2.0,
            radius: 1.0,
            w_star: Vector::zeros(2),
            noise,
        }
    }

    #[test]
    fn default_config_is_valid() {
        SgdConfig::default().validate().unwrap();
        let bad = SgdConfig {
            noise: 1.5,
            ..SgdConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn oracle_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w: Vector = vec![0.5, -0.25].into();
        assert_eq!(oracle_grad(&w, &unit_cfg(0.0), &mut rng), w);
        let cfg = unit_cfg(1.0);
        for _ in 0..100 {
            let g = oracle_grad(&Vector::zeros(2), &cfg, &mut rng);
            assert_relative_eq!(g.norm(), 1.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn oracle_is_unbiased_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cfg = SgdConfig::default();
        let w: Vector = vec![0.3, -0.2, 0.1, 0.0, 0.5].into();
        let n = 100_000;
        let mut sum = [0.0; 5];
        let mut sumsq = [0.0; 5];
        for _ in 0..n {
            let g = oracle_grad(&w, &cfg, &mut rng);
            assert!(g.norm() <= cfg.g);
            for j in 0..5 {
                sum[j] += g[j];
                sumsq[j] += g[j] * g[j];
            }
        }
        for j in 0..5 {
            let mean = sum[j] / n as f64;
            let var = sumsq[j] / n as f64 - mean * mean;
            let se = (var / n as f64).sqrt();
            assert!((mean - w[j]).abs() <= 4.0 * se, "coordinate {j}");
        }
    }

    #[test]
    fn step_examples() {
        let cfg = unit_cfg(0.0);
        let s = SgdState {
            w: vec![1.0, 0.0].into(),
            t: 0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let next = sgd_step(&s, &cfg, &mut rng);
        assert_eq!(next.t, 1);
        assert_eq!(&next.w[..], &[0.0, 0.0]);
        assert_eq!(&project_ball(vec![2.0, 0.0].into(), 1.0)[..], &[1.0, 0.0]);
    }

    #[test]
    fn potential_examples() {
        let a: Vector = vec![3.0, 4.0].into();
        assert_eq!(sgd_potential(&a, &a), 0.0);
        assert_eq!(sgd_potential(&a, &Vector::zeros(2)), 25.0);
        let b: Vector = vec![-1.0, 2.0].into();
        assert_eq!(sgd_potential(&a, &b), sgd_potential(&b, &a));
    }

    #[test]
    fn noise_term_examples() {
        let cfg = unit_cfg(0.0);
        let w: Vector = vec![1.0, 0.0].into();
        assert_relative_eq!(sgd_noise_term(&w, &w, 2, &cfg), 0.25, max_relative = 1e-15);
        let g: Vector = vec![0.3, -1.2].into();
        assert_relative_eq!(
            sgd_noise_term(&Vector::zeros(2), &g, 1, &cfg),
            g.norm_sq(),
            max_relative = 1e-15
        );
    }

    #[test]
    fn recursion_and_cap_hold_pathwise() {
        let cfg = SgdConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut s = cfg.initial_state();
        for _ in 0..10_000 {
            let x_prev = sgd_potential(&s.w, &cfg.w_star);
            let (next, g) = sgd_step_traced(&s, &cfg, &mut rng);
            let x = sgd_potential(&next.w, &cfg.w_star);
            let eta = 1.0 / (cfg.lambda * next.t as f64);
            let n = sgd_noise_term(&s.w, &g, next.t, &cfg);
            assert!(x <= (1.0 - 2.0 * eta * cfg.lambda) * x_prev + n + 1e-12);
            assert!(x <= cfg.potential_cap());
            s = next;
        }
    }

    #[test]
    fn product_decay_examples() {
        assert_relative_eq!(
            product_decay(100, 102),
            9900.0 / 10302.0,
            max_relative = 1e-15
        );
        assert_relative_eq!(
            product_decay(100, 101),
            1.0 - 2.0 / 101.0,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            product_decay(100, 10_000),
            9900.0 / (1e4 * 9999.0),
            max_relative = 1e-14
        );
    }

    #[test]
    fn product_decay_telescopes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let t0 = rng.random_range(2..500u64);
            let t = t0 + rng.random_range(1..2000u64);
            let literal: f64 = (t0 + 1..=t).map(|s| 1.0 - 2.0 / s as f64).product();
            assert_relative_eq!(product_decay(t0, t), literal, max_relative = 1e-12);
        }
    }

    #[test]
    fn moment_profile_examples() {
        let cfg = SgdConfig {
            g: 1.0,
            ..SgdConfig::default()
        };
        let p = sgd_moment_profile(&cfg, 100).unwrap();
        let (b, mu, _) = p.evaluate(200, 0.5).unwrap();
        assert_relative_eq!(b, 0.4, max_relative = 1e-12);
        assert_relative_eq!(mu, 2e-4, max_relative = 1e-12);
        let (_, _, var) = p.evaluate(200, 0.01).unwrap();
        assert_relative_eq!(var, 4e-4 * (0.8 + 7.5e-5), max_relative = 1e-12);
        let (_, _, var) = p.evaluate(100, 0.0).unwrap();
        assert_relative_eq!(var, 3.0 / 1e8, max_relative = 1e-12);
        assert!(sgd_moment_profile(&cfg, 99).is_err());
    }

    #[test]
    fn bound_examples() {
        let cfg = SgdConfig {
            g: 1.0,
            ..SgdConfig::default()
        };
        let e = (-1.0f64).exp();
        assert_relative_eq!(
            sgd_bound(1000, e, Guarantee::Last, &cfg),
            1.0,
            max_relative = 1e-12
        );
        for t in 1..2000 {
            for d in [0.5, 0.1, 0.01] {
                let last = sgd_bound(t, d, Guarantee::Last, &cfg);
                let uni = sgd_bound(t, d, Guarantee::Uniform, &cfg);
                assert!(uni >= last);
                assert!(sgd_uniform_bound_alt(t, d, &cfg) <= uni);
                if t >= 3 {
                    assert!(sgd_bound(t + 1, d, Guarantee::Uniform, &cfg) < uni);
                }
            }
        }
    }
}
