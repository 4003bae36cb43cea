//! Seeded Monte Carlo runs of the dynamics against their claimed rates.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::function::beta::beta_reg;

use crate::bandit::{
    bandit_bounds, bandit_bounds_alt, bandit_round, beta_t, elliptical_sandwich, BanditConfig,
    BanditState,
};
use crate::concentration::{clamped_loglog, pullout_witness_check, Guarantee, ThresholdSequence};
use crate::error::{check_delta, invalid, Error, Result};
use crate::pca::{OjaState, Spectrum};
use crate::schedule::{
    pca_last_iterate_rates, pca_uniform_plan, sgd_interval_deviation, sgd_uniform_plan,
    IntervalPlan, LastIterateRates,
};
use crate::sgd::{product_decay, sgd_noise_term, sgd_potential, sgd_step_traced, SgdConfig};
use crate::toy::{toy_step, ToyState, TOY_X0};

/// Confidence level of the failure-probability upper bound.
pub const CONFIDENCE: f64 = 0.95;

/// Steps between direct recomputations of the PCA potential.
pub const PCA_CROSS_CHECK_EVERY: u64 = 1000;

/// Largest tolerated relative drift of the incremental PCA potential.
pub const PCA_CROSS_CHECK_TOL: f64 = 1e-6;

/// Default starting potential for PCA runs.
pub const PCA_X0: f64 = 0.5;

/// Plans and rate schedules stop growing after this many intervals.
const MAX_PLAN_INTERVALS: usize = 60;

#[derive(Debug, Clone, PartialEq)]
pub enum DynamicConfig {
    Toy { x0: f64 },
    Sgd(SgdConfig),
    Pca { spectrum: Spectrum, x0: f64 },
    Bandit(BanditConfig),
}

impl DynamicConfig {
    pub fn toy() -> Self {
        DynamicConfig::Toy { x0: TOY_X0 }
    }

    pub fn sgd() -> Self {
        DynamicConfig::Sgd(SgdConfig::default())
    }

    pub fn pca() -> Self {
        DynamicConfig::Pca {
            spectrum: Spectrum::default(),
            x0: PCA_X0,
        }
    }

    pub fn bandit() -> Self {
        DynamicConfig::Bandit(BanditConfig::default())
    }

    pub fn name(&self) -> &'static str {
        match self {
            DynamicConfig::Toy { .. } => "toy",
            DynamicConfig::Sgd(_) => "sgd",
            DynamicConfig::Pca { .. } => "pca",
            DynamicConfig::Bandit(_) => "bandit",
        }
    }
}

/// `{1, …, 10} ∪ {⌈10^{k/8}⌉} ∪ {T}`, sorted, capped at `T`.
pub fn default_checkpoints(horizon: u64) -> Vec<u64> {
    let mut cps: Vec<u64> = (1..=10.min(horizon)).collect();
    let mut k = 8;
    loop {
        let t = 10f64.powf(k as f64 / 8.0).ceil() as u64;
        if t > horizon {
            break;
        }
        cps.push(t);
        k += 1;
    }
    cps.push(horizon);
    cps.sort_unstable();
    cps.dedup();
    cps
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub dynamic: DynamicConfig,
    pub guarantee: Guarantee,
    pub trials: usize,
    pub horizon: u64,
    pub delta: f64,
    pub base_seed: u64,
    pub checkpoints: Vec<u64>,
    /// Keep every `X_t` of toy and SGD runs (memory grows with trials × horizon).
    pub record_paths: bool,
    /// Run trials on the rayon pool; results are identical either way.
    pub parallel: bool,
}

impl ExperimentSpec {
    pub fn new(
        dynamic: DynamicConfig,
        guarantee: Guarantee,
        trials: usize,
        horizon: u64,
        delta: f64,
        base_seed: u64,
    ) -> Result<Self> {
        let mut dynamic = dynamic;
        if let DynamicConfig::Bandit(cfg) = &mut dynamic {
            cfg.horizon = horizon;
            cfg.delta = delta;
        }
        let spec = ExperimentSpec {
            dynamic,
            guarantee,
            trials,
            horizon,
            delta,
            base_seed,
            checkpoints: default_checkpoints(horizon),
            record_paths: false,
            parallel: true,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials < 1 {
            return Err(invalid("need at least one trial"));
        }
        if self.horizon < 1 {
            return Err(invalid("horizon must be at least 1"));
        }
        check_delta(self.delta)?;
        if self.checkpoints.last() != Some(&self.horizon)
            || self.checkpoints.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(invalid(
                "checkpoints must increase strictly and end at the horizon",
            ));
        }
        match &self.dynamic {
            DynamicConfig::Toy { x0 } if !(0.0..=1.0).contains(x0) => {
                Err(invalid("toy start must lie in [0, 1]"))
            }
            DynamicConfig::Sgd(cfg) => cfg.validate(),
            DynamicConfig::Pca { x0, .. } if !(*x0 >= 0.0 && x0.is_finite()) => {
                Err(invalid("PCA start potential must be nonnegative"))
            }
            DynamicConfig::Bandit(cfg) => cfg.validate(),
            _ => Ok(()),
        }
    }

    /// Horizon used when none is given: `10⁴` steps, or for PCA the end of the
    /// second planned interval (uniform) or of the first rate block (last).
    pub fn default_horizon(
        dynamic: &DynamicConfig,
        guarantee: Guarantee,
        delta: f64,
    ) -> Result<u64> {
        match dynamic {
            DynamicConfig::Pca { spectrum, .. } => match guarantee {
                Guarantee::Uniform => {
                    Ok(
                        pca_uniform_plan(spectrum.lambda_top(), spectrum.gap(), delta, 2)?
                            .intervals[1]
                            .end,
                    )
                }
                Guarantee::Last => {
                    Ok(
                        pca_last_iterate_rates(spectrum.lambda_top(), spectrum.gap(), delta, 1)?
                            .horizon(),
                    )
                }
            },
            _ => Ok(10_000),
        }
    }
}

/// A rate `r(t) = scale·(log + f·lnln(t+1))/t`, or a constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rate {
    Decaying {
        scale: f64,
        log: f64,
        loglog_factor: f64,
    },
    Constant(f64),
}

impl Rate {
    pub fn at(&self, t: u64) -> f64 {
        match *self {
            Rate::Decaying {
                scale,
                log,
                loglog_factor,
            } => scale * (log + loglog_factor * clamped_loglog(t)) / t.max(1) as f64,
            Rate::Constant(v) => v,
        }
    }

    /// A value no larger than `at(t)` for every `lo < t ≤ hi`.
    fn floor_on(&self, lo: u64, hi: u64) -> f64 {
        match *self {
            Rate::Decaying {
                scale,
                log,
                loglog_factor,
            } => scale * (log + loglog_factor * clamped_loglog(lo + 1)) / hi.max(1) as f64,
            Rate::Constant(v) => v,
        }
    }
}

/// Primary and alternate-constant rates for a spec.
pub fn rates_for(spec: &ExperimentSpec) -> (Rate, Option<Rate>) {
    let log = (1.0 / spec.delta).ln();
    let uniform = spec.guarantee == Guarantee::Uniform;
    match &spec.dynamic {
        DynamicConfig::Toy { .. } => (
            Rate::Decaying {
                scale: 10.0,
                log,
                loglog_factor: 0.0,
            },
            None,
        ),
        DynamicConfig::Sgd(cfg) => {
            let scale = 1000.0 * cfg.g * cfg.g / (cfg.lambda * cfg.lambda);
            let f = if uniform { 2.0 } else { 0.0 };
            let alt = uniform.then_some(Rate::Decaying {
                scale,
                log,
                loglog_factor: 1.0,
            });
            (
                Rate::Decaying {
                    scale,
                    log,
                    loglog_factor: f,
                },
                alt,
            )
        }
        DynamicConfig::Pca { spectrum, .. } => {
            let base = spectrum.lambda_top() / spectrum.gap().powi(2);
            if uniform {
                (
                    Rate::Decaying {
                        scale: 30000.0 * base,
                        log,
                        loglog_factor: 2.0,
                    },
                    Some(Rate::Decaying {
                        scale: 60000.0 * base,
                        log,
                        loglog_factor: 1.0,
                    }),
                )
            } else {
                (
                    Rate::Decaying {
                        scale: 2000.0 * base,
                        log,
                        loglog_factor: 0.0,
                    },
                    None,
                )
            }
        }
        DynamicConfig::Bandit(cfg) => (
            Rate::Constant(beta_t(cfg)),
            Some(Rate::Constant(bandit_bounds_alt(cfg).potential_threshold)),
        ),
    }
}

/// splitmix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the RNG stream for one trial.
pub fn trial_seed(base_seed: u64, trial: usize) -> u64 {
    mix64(base_seed ^ mix64(trial as u64))
}

/// Everything recorded about one simulated run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub trial: usize,
    pub seed: u64,
    /// `X_t` at each checkpoint.
    pub checkpoint_values: Vec<f64>,
    /// `X_0, …, X_T` when paths are recorded.
    pub path: Option<Vec<f64>>,
    pub violated: bool,
    pub first_violation_t: Option<u64>,
    /// Violation of the rate with the alternate constants, where those differ.
    pub alt_violated: bool,
    /// PCA: the potential exceeded the planned threshold of its interval.
    pub threshold_violated: bool,
    pub final_x: f64,
    pub degenerate: Option<String>,
    /// Bandit: cumulative regret at each checkpoint.
    pub regret_at_checkpoints: Vec<f64>,
    pub regret_exceeded: bool,
    pub alt_regret_exceeded: bool,
    /// Bandit: checkpoints where the elliptical sandwich failed.
    pub sandwich_failures: usize,
    /// Bandit: confident rounds whose regret exceeded the UCB width.
    pub ucb_dominance_failures: usize,
    /// SGD uniform runs: pull-out witnesses found per planned interval.
    pub pullout_witness_violations: usize,
    /// Steps where a sure bound (toy range, SGD cap) failed.
    pub cap_violations: usize,
    /// PCA: largest relative drift between incremental and direct potential.
    pub max_cross_check_error: f64,
}

/// Tracks rate violations along a run without evaluating logs at every step.
struct Monitor<'a> {
    rate: Rate,
    alt: Option<Rate>,
    uniform: bool,
    checkpoints: &'a [u64],
    seg: usize,
    floor: f64,
    alt_floor: f64,
    first_violation: Option<u64>,
    alt_violated: bool,
    values: Vec<f64>,
    path: Option<Vec<f64>>,
    last: f64,
}

impl<'a> Monitor<'a> {
    fn new(spec: &'a ExperimentSpec, x0: f64, record_path: bool) -> Self {
        let (rate, alt) = rates_for(spec);
        let mut m = Monitor {
            rate,
            alt,
            uniform: spec.guarantee == Guarantee::Uniform,
            checkpoints: &spec.checkpoints,
            seg: 0,
            floor: 0.0,
            alt_floor: 0.0,
            first_violation: None,
            alt_violated: false,
            values: Vec::with_capacity(spec.checkpoints.len()),
            path: record_path.then(|| {
                let mut p = Vec::with_capacity(spec.horizon as usize + 1);
                p.push(x0);
                p
            }),
            last: x0,
        };
        m.refresh_floors();
        m
    }

    fn refresh_floors(&mut self) {
        let lo = if self.seg == 0 {
            0
        } else {
            self.checkpoints[self.seg - 1]
        };
        let hi = self.checkpoints[self.seg];
        self.floor = self.rate.floor_on(lo, hi);
        self.alt_floor = self.alt.map_or(f64::INFINITY, |r| r.floor_on(lo, hi));
    }

    #[inline]
    fn observe(&mut self, t: u64, x: f64) {
        if self.uniform {
            if x > self.floor && self.first_violation.is_none() && x > self.rate.at(t) {
                self.first_violation = Some(t);
            }
            if x > self.alt_floor && !self.alt_violated {
                self.alt_violated = self.alt.is_some_and(|r| x > r.at(t));
            }
        }
        if let Some(p) = &mut self.path {
            p.push(x);
        }
        self.last = x;
        if t == self.checkpoints[self.seg] {
            self.values.push(x);
            if self.seg + 1 < self.checkpoints.len() {
                self.seg += 1;
                self.refresh_floors();
            }
        }
    }

    /// `true` when `t` is the next checkpoint to be recorded.
    fn at_checkpoint(&self, t: u64) -> bool {
        t == self.checkpoints[self.seg]
    }

    fn finish(self, spec: &ExperimentSpec, traj: &mut Trajectory) {
        traj.final_x = self.last;
        if self.uniform {
            traj.first_violation_t = self.first_violation;
            traj.alt_violated = self.alt_violated;
        } else if self.last > self.rate.at(spec.horizon) {
            traj.first_violation_t = Some(spec.horizon);
            traj.alt_violated = self.alt.is_some_and(|r| self.last > r.at(spec.horizon));
        }
        traj.violated = traj.first_violation_t.is_some();
        traj.checkpoint_values = self.values;
        traj.path = self.path;
    }
}

/// Simulates one trial. Dynamic-specific failures become a degenerate flag.
pub fn run_trial(spec: &ExperimentSpec, trial: usize) -> Result<Trajectory> {
    if trial >= spec.trials {
        return Err(invalid(format!(
            "trial {trial} out of range for {} trials",
            spec.trials
        )));
    }
    let seed = trial_seed(spec.base_seed, trial);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut traj = Trajectory {
        trial,
        seed,
        ..Trajectory::default()
    };
    let outcome = match &spec.dynamic {
        DynamicConfig::Toy { x0 } => {
            run_toy(spec, *x0, &mut rng, &mut traj);
            Ok(())
        }
        DynamicConfig::Sgd(cfg) => run_sgd(spec, cfg, &mut rng, &mut traj),
        DynamicConfig::Pca { spectrum, x0 } => run_pca(spec, spectrum, *x0, &mut rng, &mut traj),
        DynamicConfig::Bandit(cfg) => run_bandit(spec, cfg, &mut rng, &mut traj),
    };
    match outcome {
        Ok(()) => Ok(traj),
        Err(e @ (Error::Degenerate(_) | Error::Singular { .. } | Error::SingularUpdate { .. })) => {
            traj.degenerate = Some(e.to_string());
            Ok(traj)
        }
        Err(e) => Err(e),
    }
}

fn run_toy(spec: &ExperimentSpec, x0: f64, rng: &mut ChaCha8Rng, traj: &mut Trajectory) {
    let mut mon = Monitor::new(spec, x0, spec.record_paths);
    let mut s = ToyState::new(x0);
    for t in 1..=spec.horizon {
        s = toy_step(s, rng).0;
        if !(0.0..=1.0).contains(&s.x) {
            traj.cap_violations += 1;
        }
        mon.observe(t, s.x);
    }
    mon.finish(spec, traj);
}

/// One planned SGD interval as seen by the pull-out witness check.
struct WitnessSegment {
    start: u64,
    end: u64,
    threshold: f64,
    deviation: f64,
    xs: Vec<f64>,
    ms: Vec<f64>,
}

fn sgd_segments(spec: &ExperimentSpec, cfg: &SgdConfig) -> Result<Vec<WitnessSegment>> {
    let plan = covering_plan(
        |n| sgd_uniform_plan(cfg.g, cfg.lambda, spec.delta, n),
        spec.horizon,
    )?;
    plan.intervals
        .iter()
        .filter(|iv| !iv.burn_in && iv.start < spec.horizon)
        .map(|iv| {
            Ok(WitnessSegment {
                start: iv.start,
                end: iv.end.min(spec.horizon),
                threshold: iv.threshold,
                deviation: sgd_interval_deviation(
                    cfg.g,
                    cfg.lambda,
                    iv.start,
                    iv.end,
                    iv.threshold,
                    iv.delta,
                )?,
                xs: Vec::new(),
                ms: Vec::new(),
            })
        })
        .collect()
}

fn run_sgd(
    spec: &ExperimentSpec,
    cfg: &SgdConfig,
    rng: &mut ChaCha8Rng,
    traj: &mut Trajectory,
) -> Result<()> {
    let mut s = cfg.initial_state();
    let x0 = sgd_potential(&s.w, &cfg.w_star);
    let mut mon = Monitor::new(spec, x0, spec.record_paths);
    let cap = cfg.potential_cap() * (1.0 + 1e-12);
    let mut segments = if spec.guarantee == Guarantee::Uniform {
        sgd_segments(spec, cfg)?
    } else {
        Vec::new()
    };
    let mut seg = 0;
    let mut minor = 0.0;
    let mut x_prev = x0;
    for t in 1..=spec.horizon {
        let (next, g_hat) = sgd_step_traced(&s, cfg, rng);
        let x = sgd_potential(&next.w, &cfg.w_star);
        if x > cap {
            traj.cap_violations += 1;
        }
        if let Some(sg) = segments.get_mut(seg) {
            if t > sg.start {
                if sg.xs.is_empty() {
                    sg.xs.push(x_prev);
                    sg.ms.push(0.0);
                    minor = 0.0;
                }
                minor += sgd_noise_term(&s.w, &g_hat, t, cfg) / product_decay(sg.start, t);
                sg.xs.push(x);
                sg.ms.push(minor);
                if t == sg.end {
                    seg += 1;
                }
            }
        }
        mon.observe(t, x);
        x_prev = x;
        s = next;
    }
    traj.pullout_witness_violations = segments
        .iter()
        .map(|sg| {
            pullout_witness_check(
                &[(sg.xs.clone(), sg.ms.clone())],
                &ThresholdSequence::uniform(sg.threshold),
                sg.deviation,
            )
        })
        .sum();
    mon.finish(spec, traj);
    Ok(())
}

/// Grows a plan one interval at a time until it reaches `horizon`.
fn covering_plan(
    build: impl Fn(usize) -> Result<IntervalPlan>,
    horizon: u64,
) -> Result<IntervalPlan> {
    for n in 1..=MAX_PLAN_INTERVALS {
        let plan = build(n)?;
        if plan.intervals.last().is_some_and(|iv| iv.end >= horizon) {
            return Ok(plan);
        }
    }
    Err(Error::Config(format!(
        "no plan with at most {MAX_PLAN_INTERVALS} intervals reaches step {horizon}"
    )))
}

fn covering_rates(spectrum: &Spectrum, delta: f64, horizon: u64) -> Result<LastIterateRates> {
    for n in 1..=MAX_PLAN_INTERVALS {
        let r = pca_last_iterate_rates(spectrum.lambda_top(), spectrum.gap(), delta, n)?;
        if r.horizon() >= horizon {
            return Ok(r);
        }
    }
    Err(Error::Config(format!(
        "no rate schedule with at most {MAX_PLAN_INTERVALS} blocks reaches step {horizon}"
    )))
}

/// Constant step size and threshold rule over `(previous end, end]`.
#[derive(Debug, Clone, Copy)]
struct StepSegment {
    end: u64,
    eta: f64,
    threshold: ThresholdSequence,
}

fn pca_segments(spec: &ExperimentSpec, spectrum: &Spectrum) -> Result<Vec<StepSegment>> {
    let gap = spectrum.gap();
    match spec.guarantee {
        Guarantee::Uniform => {
            let plan = covering_plan(
                |n| pca_uniform_plan(spectrum.lambda_top(), gap, spec.delta, n),
                spec.horizon,
            )?;
            Ok(plan
                .intervals
                .iter()
                .map(|iv| StepSegment {
                    end: iv.end,
                    eta: iv.gamma.expect("PCA plans carry rates") / (2.0 * gap),
                    threshold: ThresholdSequence::uniform(iv.threshold),
                })
                .collect())
        }
        Guarantee::Last => {
            let rates = covering_rates(spectrum, spec.delta, spec.horizon)?;
            let threshold = ThresholdSequence::inverse_square_scaled(rates.level, spec.horizon);
            Ok(rates
                .blocks
                .iter()
                .map(|b| StepSegment {
                    end: b.end,
                    eta: b.eta,
                    threshold,
                })
                .collect())
        }
    }
}

fn run_pca(
    spec: &ExperimentSpec,
    spectrum: &Spectrum,
    x0: f64,
    rng: &mut ChaCha8Rng,
    traj: &mut Trajectory,
) -> Result<()> {
    let segments = pca_segments(spec, spectrum)?;
    let k = spectrum.k();
    let mut state = OjaState::local_init(spectrum, x0)?;
    let mut mon = Monitor::new(spec, state.potential(), false);
    let mut seg = 0;
    for t in 1..=spec.horizon {
        if t > segments[seg].end {
            seg += 1;
        }
        let StepSegment { eta, threshold, .. } = segments[seg];
        state.step_axis(spectrum.sample_index(rng), eta, k);
        let x = state.potential();
        if x > threshold.value(t) {
            traj.threshold_violated = true;
        }
        if t.is_multiple_of(PCA_CROSS_CHECK_EVERY) || t == spec.horizon {
            traj.max_cross_check_error =
                traj.max_cross_check_error.max(state.cross_check(spectrum)?);
        }
        mon.observe(t, x);
    }
    if !(traj.max_cross_check_error <= PCA_CROSS_CHECK_TOL) {
        return Err(Error::Degenerate(format!(
            "incremental potential drifted by {:e} from the direct value",
            traj.max_cross_check_error
        )));
    }
    mon.finish(spec, traj);
    Ok(())
}

fn run_bandit(
    spec: &ExperimentSpec,
    cfg: &BanditConfig,
    rng: &mut ChaCha8Rng,
    traj: &mut Trajectory,
) -> Result<()> {
    let beta = beta_t(cfg);
    let mut state = BanditState::new(cfg);
    let mut mon = Monitor::new(spec, state.potential(), false);
    for t in 1..=spec.horizon {
        let round = bandit_round(&mut state, cfg, beta, rng)?;
        if round.confident && round.regret > round.ucb_width * (1.0 + 1e-12) {
            traj.ucb_dominance_failures += 1;
        }
        if mon.at_checkpoint(t) {
            traj.regret_at_checkpoints.push(state.cumulative_regret);
            if !elliptical_sandwich(&state, cfg)?.holds(1e-9) {
                traj.sandwich_failures += 1;
            }
        }
        mon.observe(t, round.step.potential);
    }
    traj.regret_exceeded = state.cumulative_regret > bandit_bounds(cfg).regret_bound;
    traj.alt_regret_exceeded = state.cumulative_regret > bandit_bounds_alt(cfg).regret_bound;
    mon.finish(spec, traj);
    Ok(())
}

/// One-sided upper confidence bound on a binomial proportion (Clopper–Pearson),
/// found by bisection on `P[Bin(n, p) ≤ k] = 1 − confidence`.
pub fn clopper_pearson_upper(k: usize, n: usize, confidence: f64) -> f64 {
    if n == 0 || k >= n {
        return 1.0;
    }
    let alpha = 1.0 - confidence;
    // P[Bin(n, p) ≤ k] = I_{1−p}(n−k, k+1), decreasing in p.
    let cdf = |p: f64| beta_reg((n - k) as f64, (k + 1) as f64, 1.0 - p);
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    hi
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointStats {
    pub t: u64,
    pub mean: f64,
    pub p50: f64,
    pub p90: f64,
    pub max: f64,
    pub bound: f64,
}

/// Per-trial row of the trials CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSummary {
    pub trial: usize,
    pub seed: u64,
    pub violated: bool,
    pub first_violation_t: Option<u64>,
    pub final_x: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegretSummary {
    pub bound: f64,
    pub alt_bound: f64,
    pub within_bound: usize,
    pub within_alt_bound: usize,
    pub mean_final: f64,
    /// `(t, mean R_t/t)` at each checkpoint.
    pub mean_rate: Vec<(u64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    pub dynamic: &'static str,
    pub guarantee: Guarantee,
    pub trials: usize,
    pub horizon: u64,
    pub delta: f64,
    pub violations: usize,
    pub alt_violations: Option<usize>,
    pub threshold_violations: usize,
    pub degenerate_trials: usize,
    pub empirical_failure: f64,
    pub failure_upper: f64,
    pub threshold_failure_upper: f64,
    pub checkpoints: Vec<CheckpointStats>,
    pub trial_rows: Vec<TrialSummary>,
    pub regret: Option<RegretSummary>,
    pub sandwich_failures: usize,
    pub ucb_dominance_failures: usize,
    pub pullout_witness_violations: usize,
    pub cap_violations: usize,
    pub max_cross_check_error: f64,
    pub verdict: bool,
}

/// Nearest-rank percentile of sorted data.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = (p * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

/// Folds trajectories, in trial order, into a report.
pub fn aggregate(spec: &ExperimentSpec, trajectories: &[Trajectory]) -> VerificationReport {
    let (rate, alt) = rates_for(spec);
    let n = trajectories.len();
    let healthy: Vec<&Trajectory> = trajectories
        .iter()
        .filter(|t| t.degenerate.is_none())
        .collect();
    let violations = trajectories.iter().filter(|t| t.violated).count();
    let threshold_violations = trajectories.iter().filter(|t| t.threshold_violated).count();
    let degenerate_trials = n - healthy.len();

    let checkpoints = spec
        .checkpoints
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let mut vals: Vec<f64> = healthy
                .iter()
                .filter_map(|tr| tr.checkpoint_values.get(j).copied())
                .collect();
            vals.sort_by(f64::total_cmp);
            let mean = if vals.is_empty() {
                f64::NAN
            } else {
                vals.iter().sum::<f64>() / vals.len() as f64
            };
            CheckpointStats {
                t,
                mean,
                p50: percentile(&vals, 0.5),
                p90: percentile(&vals, 0.9),
                max: vals.last().copied().unwrap_or(f64::NAN),
                bound: rate.at(t),
            }
        })
        .collect();

    let regret = match &spec.dynamic {
        DynamicConfig::Bandit(cfg) => {
            let finals: Vec<f64> = healthy
                .iter()
                .filter_map(|t| t.regret_at_checkpoints.last().copied())
                .collect();
            let mean_rate = spec
                .checkpoints
                .iter()
                .enumerate()
                .map(|(j, &t)| {
                    let v: Vec<f64> = healthy
                        .iter()
                        .filter_map(|tr| tr.regret_at_checkpoints.get(j).copied())
                        .collect();
                    (
                        t,
                        v.iter().sum::<f64>() / (v.len().max(1) as f64 * t as f64),
                    )
                })
                .collect();
            Some(RegretSummary {
                bound: bandit_bounds(cfg).regret_bound,
                alt_bound: bandit_bounds_alt(cfg).regret_bound,
                within_bound: healthy.iter().filter(|t| !t.regret_exceeded).count(),
                within_alt_bound: healthy.iter().filter(|t| !t.alt_regret_exceeded).count(),
                mean_final: finals.iter().sum::<f64>() / finals.len().max(1) as f64,
                mean_rate,
            })
        }
        _ => None,
    };

    let failure_upper = clopper_pearson_upper(violations, n, CONFIDENCE);
    let threshold_failure_upper = clopper_pearson_upper(threshold_violations, n, CONFIDENCE);
    let threshold_ok =
        !matches!(spec.dynamic, DynamicConfig::Pca { .. }) || threshold_failure_upper < spec.delta;
    VerificationReport {
        dynamic: spec.dynamic.name(),
        guarantee: spec.guarantee,
        trials: n,
        horizon: spec.horizon,
        delta: spec.delta,
        violations,
        alt_violations: alt.map(|_| trajectories.iter().filter(|t| t.alt_violated).count()),
        threshold_violations,
        degenerate_trials,
        empirical_failure: violations as f64 / n.max(1) as f64,
        failure_upper,
        threshold_failure_upper,
        checkpoints,
        trial_rows: trajectories
            .iter()
            .map(|t| TrialSummary {
                trial: t.trial,
                seed: t.seed,
                violated: t.violated,
                first_violation_t: t.first_violation_t,
                final_x: t.final_x,
            })
            .collect(),
        regret,
        sandwich_failures: trajectories.iter().map(|t| t.sandwich_failures).sum(),
        ucb_dominance_failures: trajectories.iter().map(|t| t.ucb_dominance_failures).sum(),
        pullout_witness_violations: trajectories
            .iter()
            .map(|t| t.pullout_witness_violations)
            .sum(),
        cap_violations: trajectories.iter().map(|t| t.cap_violations).sum(),
        max_cross_check_error: trajectories
            .iter()
            .map(|t| t.max_cross_check_error)
            .fold(0.0, f64::max),
        verdict: failure_upper < spec.delta && degenerate_trials == 0 && threshold_ok,
    }
}

/// Runs every trial and aggregates them; parallel and serial runs agree exactly.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<VerificationReport> {
    Ok(aggregate(spec, &run_trajectories(spec)?))
}

/// Runs every trial, returning trajectories in trial order.
pub fn run_trajectories(spec: &ExperimentSpec) -> Result<Vec<Trajectory>> {
    spec.validate()?;
    if spec.parallel {
        (0..spec.trials)
            .into_par_iter()
            .map(|i| run_trial(spec, i))
            .collect()
    } else {
        (0..spec.trials).map(|i| run_trial(spec, i)).collect()
    }
}

fn with_suffix(path: &Path, suffix: &str) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    s.into()
}

/// Writes `<path>.checkpoints.csv` and `<path>.trials.csv`.
pub fn emit_csv(report: &VerificationReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut cp = BufWriter::new(File::create(with_suffix(path, ".checkpoints.csv"))?);
    write_checkpoints_csv(report, &mut cp)?;
    cp.flush()?;
    let mut tr = BufWriter::new(File::create(with_suffix(path, ".trials.csv"))?);
    write_trials_csv(report, &mut tr)?;
    tr.flush()?;
    Ok(())
}

pub fn write_checkpoints_csv<W: Write>(report: &VerificationReport, mut out: W) -> Result<()> {
    writeln!(out, "t,mean,p50,p90,max,bound")?;
    for c in &report.checkpoints {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            c.t, c.mean, c.p50, c.p90, c.max, c.bound
        )?;
    }
    Ok(())
}

pub fn write_trials_csv<W: Write>(report: &VerificationReport, mut out: W) -> Result<()> {
    writeln!(out, "trial,seed,violated,first_violation_t,final_x")?;
    for r in &report.trial_rows {
        let first = r
            .first_violation_t
            .map(|t| t.to_string())
            .unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{}",
            r.trial, r.seed, r.violated, first, r.final_x
        )?;
    }
    Ok(())
}

impl fmt::Display for VerificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let g = match self.guarantee {
            Guarantee::Last => "last",
            Guarantee::Uniform => "uniform",
        };
        writeln!(
            f,
            "dynamic={} guarantee={g} trials={} horizon={} delta={}",
            self.dynamic, self.trials, self.horizon, self.delta
        )?;
        writeln!(
            f,
            "violations={} empirical_failure={} upper95={} degenerate={}",
            self.violations, self.empirical_failure, self.failure_upper, self.degenerate_trials
        )?;
        if let Some(a) = self.alt_violations {
            writeln!(f, "violations_alt_constants={a}")?;
        }
        if self.dynamic == "pca" {
            writeln!(
                f,
                "threshold_violations={} upper95={} max_cross_check_error={:e}",
                self.threshold_violations, self.threshold_failure_upper, self.max_cross_check_error
            )?;
        }
        if self.dynamic == "sgd" && self.guarantee == Guarantee::Uniform {
            writeln!(
                f,
                "pullout_witness_violations={}",
                self.pullout_witness_violations
            )?;
        }
        if self.cap_violations > 0 {
            writeln!(f, "sure_bound_violations={}", self.cap_violations)?;
        }
        if let Some(r) = &self.regret {
            writeln!(
                f,
                "regret mean_final={} bound={} within={}/{} alt_bound={} within={}/{}",
                r.mean_final,
                r.bound,
                r.within_bound,
                self.trials,
                r.alt_bound,
                r.within_alt_bound,
                self.trials
            )?;
            writeln!(
                f,
                "sandwich_failures={} ucb_dominance_failures={}",
                self.sandwich_failures, self.ucb_dominance_failures
            )?;
        }
        write!(f, "verdict={}", if self.verdict { "PASS" } else { "FAIL" })
    }
}
