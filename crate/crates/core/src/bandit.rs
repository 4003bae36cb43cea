//! LinUCB with SGD-style parameter updates on a stochastic linear bandit.

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::linalg::{log_abs_det, sherman_morrison, solve_small, weighted_norm_sq, Matrix, Vector};
use crate::sgd::unit_sphere;

/// Steps between checks of `V·V⁻¹ = I`.
pub const INVERSE_CHECK_PERIOD: u64 = 512;

/// Entrywise tolerance on `V·V⁻¹ − I`.
pub const INVERSE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct BanditConfig {
    pub dim: usize,
    /// Actions per round.
    pub actions: usize,
    pub lambda: f64,
    /// Bound on action norms.
    pub l_bound: f64,
    /// Bound on `‖θ*‖`.
    pub l_star: f64,
    pub eta: f64,
    pub horizon: u64,
    pub delta: f64,
    pub theta_star: Vector,
}

impl Default for BanditConfig {
    fn default() -> Self {
        Self::with_dims(4, 20)
    }
}

impl BanditConfig {
    /// Defaults with `λ = L = L* = 1`, `η = λ/L²`, `T = 10⁴`, `δ = 0.1`, `θ* = L*·e₁`.
    pub fn with_dims(dim: usize, actions: usize) -> Self {
        BanditConfig {
            dim,
            actions,
            lambda: 1.0,
            l_bound: 1.0,
            l_star: 1.0,
            eta: 1.0,
            horizon: 10_000,
            delta: 0.1,
            theta_star: Vector::basis(dim.max(1), 0),
        }
    }

    /// Sets `η = λ/L²` and `θ* = L*·e₁` after changing the scalar parameters.
    pub fn normalize(mut self) -> Self {
        self.eta = self.lambda / (self.l_bound * self.l_bound);
        self.theta_star = Vector::basis(self.dim, 0).scaled(self.l_star);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.theta_star.dim() != self.dim {
            return Err(invalid("true parameter must have the configured dimension"));
        }
        if self.actions < 1 {
            return Err(invalid("need at least one action per round"));
        }
        if !(self.lambda > 0.0 && self.l_bound > 0.0 && self.l_star > 0.0 && self.eta > 0.0) {
            return Err(invalid("lambda, L, L* and eta must be positive"));
        }
        if self.eta > self.lambda / (self.l_bound * self.l_bound) * (1.0 + 1e-12) {
            return Err(invalid("eta must not exceed lambda/L^2"));
        }
        if self.theta_star.norm() > self.l_star * (1.0 + 1e-12) {
            return Err(invalid("true parameter exceeds L*"));
        }
        if self.horizon < 1 {
            return Err(invalid("horizon must be positive"));
        }
        crate::error::check_delta(self.delta)
    }

    fn log_t_over_d(&self) -> f64 {
        (self.horizon as f64 / self.dim as f64).ln_1p()
    }

    fn beta_with(&self, constant: f64) -> f64 {
        let d = self.dim as f64;
        let explore = d * self.lambda / (self.l_bound * self.l_bound)
            * self.log_t_over_d()
            * (1.0 / self.delta).ln();
        constant * (self.l_star * self.l_star * self.lambda).max(explore)
    }
}

/// `β = 288·max{L*²λ, (dλ/L²)·ln(1+T/d)·ln(1/δ)}`.
pub fn beta_t(cfg: &BanditConfig) -> f64 {
    cfg.beta_with(288.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BanditState {
    pub theta: Vector,
    pub v: Matrix,
    pub vinv: Matrix,
    pub t: u64,
    pub cumulative_regret: f64,
    /// `X_t = ‖θ_t − θ*‖²_{V_t}` for `t = 0, 1, …`.
    pub potential_history: Vec<f64>,
    /// `η‖x_t‖²_{V_{t−1}⁻¹}` for `t = 1, 2, …`.
    pub quad_form_history: Vec<f64>,
    /// Largest `|V·V⁻¹ − I|` entry seen at a periodic check.
    pub max_inverse_error: f64,
    /// Times the maintained inverse was replaced by a direct solve.
    pub inverse_resyncs: u32,
}

impl BanditState {
    /// `θ₀ = 0`, `V₀ = λI`.
    pub fn new(cfg: &BanditConfig) -> Self {
        let theta = Vector::zeros(cfg.dim);
        let v = Matrix::identity(cfg.dim).scaled(cfg.lambda);
        let x0 = weighted_norm_sq(&cfg.theta_star, &v).expect("conformable");
        BanditState {
            theta,
            vinv: Matrix::identity(cfg.dim).scaled(1.0 / cfg.lambda),
            v,
            t: 0,
            cumulative_regret: 0.0,
            potential_history: vec![x0],
            quad_form_history: Vec::new(),
            max_inverse_error: 0.0,
            inverse_resyncs: 0,
        }
    }

    pub fn potential(&self) -> f64 {
        *self
            .potential_history
            .last()
            .expect("history starts with X_0")
    }
}

/// `K` actions drawn uniformly from the ball of radius `L`.
pub fn gen_decision_set<R: Rng + ?Sized>(cfg: &BanditConfig, rng: &mut R) -> Vec<Vector> {
    (0..cfg.actions)
        .map(|_| {
            let r = cfg.l_bound * rng.random::<f64>().powf(1.0 / cfg.dim as f64);
            unit_sphere(cfg.dim, rng).scaled(r)
        })
        .collect()
}

/// `⟨x, θ⟩ + √β·‖x‖_{V⁻¹}`
pub fn ucb_score(state: &BanditState, beta: f64, x: &[f64]) -> f64 {
    let q = weighted_norm_sq(x, &state.vinv).expect("conformable");
    x.iter()
        .zip(state.theta.iter())
        .map(|(a, b)| a * b)
        .sum::<f64>()
        + (beta * q.max(0.0)).sqrt()
}

/// Index of the highest-scoring action; ties go to the lowest index.
pub fn select_action(state: &BanditState, beta: f64, actions: &[Vector]) -> Result<usize> {
    if actions.is_empty() {
        return Err(invalid("empty decision set"));
    }
    let mut best = (0, f64::NEG_INFINITY);
    for (i, x) in actions.iter().enumerate() {
        let s = ucb_score(state, beta, x);
        if s > best.1 {
            best = (i, s);
        }
    }
    Ok(best.0)
}

/// `⟨x* − x, θ*⟩` with `x*` the best action in the set.
pub fn regret_accounting(actions: &[Vector], theta_star: &Vector, chosen: &Vector) -> f64 {
    let best = actions
        .iter()
        .map(|x| x.dot(theta_star))
        .fold(f64::NEG_INFINITY, f64::max);
    (best - chosen.dot(theta_star)).max(0.0)
}

/// What one parameter update did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub eps: f64,
    /// `η‖x‖²_{V_{t−1}⁻¹}`
    pub quad: f64,
    /// `N_t` in `X_t ≤ X_{t−1} + N_t`.
    pub noise: f64,
    pub potential_prev: f64,
    pub potential: f64,
}

/// Update with a given reward noise `ε`.
pub fn bandit_step_with_noise(
    state: &mut BanditState,
    x: &Vector,
    eps: f64,
    cfg: &BanditConfig,
) -> Result<StepRecord> {
    if x.dim() != cfg.dim {
        return Err(Error::DimensionMismatch(format!(
            "action of length {} for d={}",
            x.dim(),
            cfg.dim
        )));
    }
    let eta = cfg.eta;
    let diff = state.theta.sub(&cfg.theta_star);
    let p = diff.dot(x);
    let vinv_x = state.vinv.mul_vec(x)?;
    let q = x.dot(&vinv_x);
    // y − θᵀx = θ*ᵀx + ε − θᵀx
    let residual = eps - p;
    state.theta = state.theta.axpy(eta * residual, &vinv_x);
    state.vinv = sherman_morrison(&state.vinv, x, x, eta)?;
    state.v = state.v.add(&Matrix::outer(x, x).scaled(eta))?;
    state.t += 1;

    if state.t.is_multiple_of(INVERSE_CHECK_PERIOD) {
        let err = state
            .v
            .matmul(&state.vinv)?
            .max_abs_diff(&Matrix::identity(cfg.dim));
        state.max_inverse_error = state.max_inverse_error.max(err);
        if err > INVERSE_TOL {
            state.vinv = solve_small(&state.v, &Matrix::identity(cfg.dim))?;
            state.inverse_resyncs += 1;
        }
    }

    let potential_prev = state.potential();
    let potential = weighted_norm_sq(&state.theta.sub(&cfg.theta_star), &state.v)?;
    state.potential_history.push(potential);
    state.quad_form_history.push(eta * q);
    let noise =
        2.0 * eta * eps * p - 2.0 * eta.powi(3) * eps * p * q * q + 2.0 * eps * eps * eta * eta * q;
    Ok(StepRecord {
        eps,
        quad: eta * q,
        noise,
        potential_prev,
        potential,
    })
}

/// Draws `ε ~ U[−1, 1]` and updates.
pub fn bandit_step<R: Rng + ?Sized>(
    state: &mut BanditState,
    x: &Vector,
    cfg: &BanditConfig,
    rng: &mut R,
) -> Result<StepRecord> {
    let eps = rng.random_range(-1.0..=1.0);
    bandit_step_with_noise(state, x, eps, cfg)
}

/// One full round: decision set, UCB choice, regret, update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundRecord {
    pub step: StepRecord,
    pub regret: f64,
    /// Whether `‖θ* − θ_{t−1}‖_{V_{t−1}} ≤ √β` held before the update.
    pub confident: bool,
    /// `2√β·‖x_t‖_{V_{t−1}⁻¹}`
    pub ucb_width: f64,
}

pub fn bandit_round<R: Rng + ?Sized>(
    state: &mut BanditState,
    cfg: &BanditConfig,
    beta: f64,
    rng: &mut R,
) -> Result<RoundRecord> {
    let actions = gen_decision_set(cfg, rng);
    let idx = select_action(state, beta, &actions)?;
    let x = &actions[idx];
    let regret = regret_accounting(&actions, &cfg.theta_star, x);
    let confident = state.potential() <= beta;
    let ucb_width = 2.0 * (beta * weighted_norm_sq(x, &state.vinv)?.max(0.0)).sqrt();
    let step = bandit_step(state, x, cfg, rng)?;
    state.cumulative_regret += regret;
    Ok(RoundRecord {
        step,
        regret,
        confident,
        ucb_width,
    })
}

/// `‖θ_t − θ*‖²_{V_t}`
pub fn bandit_potential(state: &BanditState, cfg: &BanditConfig) -> Result<f64> {
    weighted_norm_sq(&state.theta.sub(&cfg.theta_star), &state.v)
}

/// `(ln det V_t/det V₀, Σ η‖x_i‖²_{V_{i−1}⁻¹}, 2·ln det V_t/det V₀, 2d·ln(1 + ηtL²/(dλ)))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sandwich {
    pub lhs: f64,
    pub mid: f64,
    pub rhs1: f64,
    pub rhs2: f64,
}

impl Sandwich {
    /// `lhs ≤ mid ≤ rhs1 ≤ rhs2` up to a relative rounding slack.
    pub fn holds(&self, rtol: f64) -> bool {
        let le = |a: f64, b: f64| a <= b + rtol * (1.0 + b.abs());
        le(self.lhs, self.mid) && le(self.mid, self.rhs1) && le(self.rhs1, self.rhs2)
    }
}

pub fn elliptical_sandwich(state: &BanditState, cfg: &BanditConfig) -> Result<Sandwich> {
    let d = cfg.dim as f64;
    let lhs = log_abs_det(&state.v)? - d * cfg.lambda.ln();
    let mid = state.quad_form_history.iter().sum();
    let rhs2 =
        2.0 * d * (cfg.eta * state.t as f64 * cfg.l_bound.powi(2) / (d * cfg.lambda)).ln_1p();
    Ok(Sandwich {
        lhs,
        mid,
        rhs1: 2.0 * lhs,
        rhs2,
    })
}

/// `√(144ηd·ln(1+ηT₁L²/(dλ))·Λ·ln(1/δ')) + 16ηd·ln(1+ηT₁L²/(dλ))·√ln(1/δ')`.
pub fn bandit_deviation(cfg: &BanditConfig, t1: u64, big_lambda: f64, delta_p: f64) -> Result<f64> {
    crate::error::check_delta(delta_p)?;
    if !(big_lambda >= 0.0) {
        return Err(invalid("threshold must be nonnegative"));
    }
    let d = cfg.dim as f64;
    let ell = (cfg.eta * t1 as f64 * cfg.l_bound.powi(2) / (d * cfg.lambda)).ln_1p();
    let log = (1.0 / delta_p).ln();
    Ok((144.0 * cfg.eta * d * ell * big_lambda * log).sqrt()
        + 16.0 * cfg.eta * d * ell * log.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BanditBounds {
    pub potential_threshold: f64,
    pub regret_bound: f64,
}

/// Potential threshold `β` and regret bound `34√(2dT·max{L*²L², d·ln(1+T/d)ln(1/δ)}·ln(1+T/d))`.
pub fn bandit_bounds(cfg: &BanditConfig) -> BanditBounds {
    BanditBounds {
        potential_threshold: beta_t(cfg),
        regret_bound: regret_bound_with(cfg, 34.0, 2.0),
    }
}

/// Looser alternate constants: `300·max{…}` and `50√(dT·…)`.
pub fn bandit_bounds_alt(cfg: &BanditConfig) -> BanditBounds {
    BanditBounds {
        potential_threshold: cfg.beta_with(300.0),
        regret_bound: regret_bound_with(cfg, 50.0, 1.0),
    }
}

fn regret_bound_with(cfg: &BanditConfig, constant: f64, factor: f64) -> f64 {
    let d = cfg.dim as f64;
    let lg = cfg.log_t_over_d();
    let inner = (cfg.l_star * cfg.l_bound)
        .powi(2)
        .max(d * lg * (1.0 / cfg.delta).ln());
    constant * (factor * d * cfg.horizon as f64 * inner * lg).sqrt()
}
