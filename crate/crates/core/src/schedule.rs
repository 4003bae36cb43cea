//! Interval plans: level ladders, confidence splitting, the SGD and PCA
//! schedules with their per-interval deviations, and a plan verifier.

use std::f64::consts::LN_2;
use std::io::Write;

use crate::concentration::ThresholdSequence;
use crate::error::{check_delta, invalid, Error, Result};
use crate::sgd::product_decay;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LevelKind {
    /// Problem-dependent; use a dynamic-specific planner instead.
    Greedy,
    /// `a_i = 2⁻ⁱ·x0`
    Multiplicative,
    /// `a_i = (ε/4)·(4a_{i−1}/ε)^{3/4}`
    Polynomial,
}

/// Levels `a_1, a_2, …` descending from `x0` toward `eps`.
pub fn build_levels(kind: LevelKind, x0: f64, eps: f64) -> Result<Vec<f64>> {
    if !(eps > 0.0 && x0 > eps) {
        return Err(invalid(format!(
            "need x0 > eps > 0, got x0={x0}, eps={eps}"
        )));
    }
    match kind {
        LevelKind::Greedy => Err(invalid(
            "greedy levels depend on the dynamic; use the SGD or PCA planner",
        )),
        LevelKind::Multiplicative => {
            // Smallest n with x0·2⁻ⁿ ≤ eps, i.e. ⌈log₂(x0/eps)⌉ without log rounding.
            let mut levels = Vec::new();
            let mut a = x0;
            while a > eps {
                a *= 0.5;
                levels.push(a);
            }
            Ok(levels)
        }
        LevelKind::Polynomial => {
            let count = ((4.0 * x0 / eps).ln().ln() / (4.0f64 / 3.0).ln())
                .ceil()
                .max(1.0) as usize;
            let mut levels = Vec::with_capacity(count);
            let mut a = x0;
            for _ in 0..count {
                a = eps / 4.0 * (4.0 * a / eps).powf(0.75);
                levels.push(a);
            }
            Ok(levels)
        }
    }
}

/// `δ_i = δ/(2i²)`; the sum over all `i ≥ 1` is `δπ²/12 < δ`.
pub fn split_confidence(delta: f64, i: usize) -> Result<f64> {
    if i < 1 {
        return Err(invalid("interval index starts at 1"));
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(invalid(format!(
            "confidence must lie in (0, 1], got {delta}"
        )));
    }
    Ok(delta / (2.0 * (i as f64).powi(2)))
}

/// One interval `(t_{i−1}, t_i]` of a plan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanInterval {
    pub index: usize,
    /// `t_{i−1}`
    pub start: u64,
    /// `t_i`
    pub end: u64,
    /// `a_{i−1}`
    pub prev_level: f64,
    /// `a_i`
    pub level: f64,
    /// `δ_i`
    pub delta: f64,
    /// `Λ_i`
    pub threshold: f64,
    /// Per-interval rate parameter (`γ_i` for PCA).
    pub gamma: Option<f64>,
    /// `(1−γ_i)^{t_i−t_{i−1}}` where applicable.
    pub decay: Option<f64>,
    /// Interval handled by an almost-sure cap instead of a deviation bound.
    pub burn_in: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntervalPlan {
    pub t0: u64,
    pub a0: f64,
    pub intervals: Vec<PlanInterval>,
    /// Almost-sure bound on the potential, used for burn-in intervals.
    pub almost_sure_cap: Option<f64>,
}

impl IntervalPlan {
    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn boundaries(&self) -> Vec<u64> {
        std::iter::once(self.t0)
            .chain(self.intervals.iter().map(|iv| iv.end))
            .collect()
    }

    pub fn levels(&self) -> Vec<f64> {
        std::iter::once(self.a0)
            .chain(self.intervals.iter().map(|iv| iv.level))
            .collect()
    }

    pub fn confidences(&self) -> Vec<f64> {
        self.intervals.iter().map(|iv| iv.delta).collect()
    }

    pub fn thresholds(&self) -> Vec<f64> {
        self.intervals.iter().map(|iv| iv.threshold).collect()
    }

    pub fn rates(&self) -> Vec<Option<f64>> {
        self.intervals.iter().map(|iv| iv.gamma).collect()
    }

    /// Interval containing step `t`, if any.
    pub fn interval_at(&self, t: u64) -> Option<&PlanInterval> {
        let idx = self.intervals.partition_point(|iv| iv.end < t);
        self.intervals.get(idx).filter(|iv| iv.start < t)
    }

    /// Writes `i,t_i,a_i,delta_i,Lambda_i,gamma_i` rows; row 0 carries `t_0, a_0`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "i,t_i,a_i,delta_i,Lambda_i,gamma_i")?;
        writeln!(out, "0,{},{},,,", self.t0, self.a0)?;
        for iv in &self.intervals {
            let gamma = iv.gamma.map(|g| g.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{}",
                iv.index, iv.end, iv.level, iv.delta, iv.threshold, gamma
            )?;
        }
        Ok(())
    }
}

/// First SGD interval end; the moment bounds need `T0 ≥ 100`.
pub const SGD_FIRST_BOUNDARY: u64 = 100;

/// `t_1 = 100`, `t_i = 2t_{i−1}`, `a_i = 1000G²ln(1/δ_i)/(λ²t_i)`, `Λ_i = 2a_{i−1}`.
/// Interval 1 starts at step 0 and is covered by the cap `4G²/λ²`.
pub fn sgd_uniform_plan(
    g: f64,
    lambda: f64,
    delta: f64,
    max_intervals: usize,
) -> Result<IntervalPlan> {
    check_delta(delta)?;
    if !(g > 0.0 && lambda > 0.0) {
        return Err(invalid("G and lambda must be positive"));
    }
    let level = |d: f64, t: u64| 1000.0 * g * g * (1.0 / d).ln() / (lambda * lambda * t as f64);
    let a0 = level(delta, SGD_FIRST_BOUNDARY);
    let mut intervals = Vec::with_capacity(max_intervals);
    let (mut start, mut end, mut prev) = (0u64, SGD_FIRST_BOUNDARY, a0);
    for i in 1..=max_intervals {
        let d = split_confidence(delta, i)?;
        let a = level(d, end);
        intervals.push(PlanInterval {
            index: i,
            start,
            end,
            prev_level: prev,
            level: a,
            delta: d,
            threshold: 2.0 * prev,
            gamma: None,
            decay: None,
            burn_in: start < SGD_FIRST_BOUNDARY,
        });
        start = end;
        end = end.checked_mul(2).ok_or_else(|| {
            Error::Config(format!("interval {} overflows the step counter", i + 1))
        })?;
        prev = a;
    }
    Ok(IntervalPlan {
        t0: 0,
        a0,
        intervals,
        almost_sure_cap: Some(4.0 * g * g / (lambda * lambda)),
    })
}

/// `Δ = G²T₁ln(1/δ')/(λ²T₀²)·(√(70T₁Λλ²/(G²ln(1/δ'))) + 50)`.
pub fn sgd_interval_deviation(
    g: f64,
    lambda: f64,
    t0: u64,
    t1: u64,
    big_lambda: f64,
    delta_p: f64,
) -> Result<f64> {
    check_delta(delta_p)?;
    if t0 < SGD_FIRST_BOUNDARY {
        return Err(invalid(format!(
            "T0 must be at least {SGD_FIRST_BOUNDARY}, got {t0}"
        )));
    }
    if t1 <= t0 {
        return Err(invalid(format!("empty interval ({t0}, {t1}]")));
    }
    if !(big_lambda > 0.0) {
        return Err(invalid("threshold must be positive"));
    }
    let log = (1.0 / delta_p).ln();
    let (t0, t1) = (t0 as f64, t1 as f64);
    let g2 = g * g;
    let l2 = lambda * lambda;
    let pre = g2 * t1 * log / (l2 * t0 * t0);
    Ok(pre * ((70.0 * t1 * big_lambda * l2 / (g2 * log)).sqrt() + 50.0))
}

/// Which form of the `√128` term the PCA deviation uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PcaDeviationVariant {
    /// `√(128·gap/(γλ ln(1/δ')))`
    #[default]
    GammaScaled,
    /// `√(128·gap/(λ ln(1/δ')))`, the weaker term that plan verification needs.
    Unscaled,
}

/// Number of steps after which `(1−γ)^n ≤ 1/4`: `⌈2/log₂(1/(1−γ))⌉`.
pub fn quarter_decay_steps(gamma: f64) -> u64 {
    (-2.0 * LN_2 / (-gamma).ln_1p()).ceil() as u64
}

/// `(1−γ)^n`, accurate for tiny `γ`.
pub fn geometric_decay(gamma: f64, n: u64) -> f64 {
    (n as f64 * (-gamma).ln_1p()).exp()
}

/// The PCA deviation closed form without the `Λ ≤ 1` gate.
#[allow(clippy::too_many_arguments)]
pub fn pca_deviation_formula(
    variant: PcaDeviationVariant,
    gamma: f64,
    lambda_top: f64,
    gap: f64,
    t0: u64,
    t1: u64,
    big_lambda: f64,
    delta_p: f64,
) -> Result<f64> {
    check_delta(delta_p)?;
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(invalid(format!("gamma must lie in (0, 1), got {gamma}")));
    }
    if t1 <= t0 {
        return Err(invalid(format!("empty interval ({t0}, {t1}]")));
    }
    if !(big_lambda > 0.0 && lambda_top > 0.0 && gap > 0.0) {
        return Err(invalid("threshold, lambda and gap must be positive"));
    }
    let log = (1.0 / delta_p).ln();
    let gl = gamma * lambda_top * log;
    let pre = gl / (gap * gap * geometric_decay(gamma, t1 - t0));
    let second = match variant {
        PcaDeviationVariant::GammaScaled => (128.0 * gap / gl).sqrt(),
        PcaDeviationVariant::Unscaled => (128.0 * gap / (lambda_top * log)).sqrt(),
    };
    Ok(pre * ((568.0 * gap * gap * big_lambda / gl).sqrt() + second + 94.0))
}

/// Gamma-scaled form of the PCA per-interval deviation; requires `0 < Λ ≤ 1`.
pub fn pca_interval_deviation(
    gamma: f64,
    lambda_top: f64,
    gap: f64,
    t0: u64,
    t1: u64,
    big_lambda: f64,
    delta_p: f64,
) -> Result<f64> {
    if big_lambda > 1.0 {
        return Err(invalid(format!(
            "threshold must be at most 1, got {big_lambda}"
        )));
    }
    pca_deviation_formula(
        PcaDeviationVariant::GammaScaled,
        gamma,
        lambda_top,
        gap,
        t0,
        t1,
        big_lambda,
        delta_p,
    )
}

/// `γ_i = a_{i−1}gap²/(29500λ ln(1/δ_i))`, `t_i = t_{i−1} + ⌈2/log₂(1/(1−γ_i))⌉`,
/// `a_i = 2⁻ⁱ`, `Λ_i = 2a_{i−1}`, step size `γ_i/(2gap)` inside interval `i`.
pub fn pca_uniform_plan(
    lambda_top: f64,
    gap: f64,
    delta: f64,
    max_intervals: usize,
) -> Result<IntervalPlan> {
    check_delta(delta)?;
    if !(gap > 0.0 && lambda_top >= gap) {
        return Err(invalid(format!(
            "need lambda_top >= gap > 0, got {lambda_top}, {gap}"
        )));
    }
    let mut intervals = Vec::with_capacity(max_intervals);
    let (mut start, mut prev) = (0u64, 1.0f64);
    for i in 1..=max_intervals {
        let d = split_confidence(delta, i)?;
        let gamma = prev * gap * gap / (29500.0 * lambda_top * (1.0 / d).ln());
        let eta = gamma / (2.0 * gap);
        if eta > 0.25 {
            return Err(Error::Config(format!(
                "interval {i}: step size {eta} exceeds 1/4"
            )));
        }
        let n = quarter_decay_steps(gamma);
        let decay = geometric_decay(gamma, n);
        if !(0.2..=0.25).contains(&decay) {
            return Err(Error::Config(format!(
                "interval {i}: decay {decay} outside [1/5, 1/4]"
            )));
        }
        let end = start
            .checked_add(n)
            .ok_or_else(|| Error::Config(format!("interval {i} overflows the step counter")))?;
        let level = prev * 0.5;
        intervals.push(PlanInterval {
            index: i,
            start,
            end,
            prev_level: prev,
            level,
            delta: d,
            threshold: 2.0 * prev,
            gamma: Some(gamma),
            decay: Some(decay),
            burn_in: false,
        });
        start = end;
        prev = level;
    }
    Ok(IntervalPlan {
        t0: 0,
        a0: 1.0,
        intervals,
        almost_sure_cap: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateBlock {
    pub index: usize,
    pub start: u64,
    pub end: u64,
    pub gamma: f64,
    /// Step size `γ_i/(2gap)`.
    pub eta: f64,
    /// `(1−γ_i)^{end−start}`
    pub decay: f64,
}

/// Block step sizes and the `T·Λ/t²` threshold rule for last-iterate runs.
#[derive(Debug, Clone, PartialEq)]
pub struct LastIterateRates {
    pub blocks: Vec<RateBlock>,
    /// `Λ = 1000λ ln(1/δ)/gap²`
    pub level: f64,
}

impl LastIterateRates {
    pub fn horizon(&self) -> u64 {
        self.blocks.last().map_or(0, |b| b.end)
    }

    pub fn thresholds(&self) -> ThresholdSequence {
        ThresholdSequence::inverse_square_scaled(self.level, self.horizon())
    }

    pub fn eta_at(&self, t: u64) -> Option<f64> {
        let idx = self.blocks.partition_point(|b| b.end < t);
        self.blocks.get(idx).filter(|b| b.start < t).map(|b| b.eta)
    }
}

/// `γ_1 = gap²/(100000λ ln(1/δ))`, block 1 of length `⌈2/log₂(1/(1−γ_1))⌉`;
/// block `i` uses `γ_i = 2^{−(i−1)}γ_1` for `2^{i−1}` times the first length.
pub fn pca_last_iterate_rates(
    lambda_top: f64,
    gap: f64,
    delta: f64,
    num_blocks: usize,
) -> Result<LastIterateRates> {
    check_delta(delta)?;
    if !(gap > 0.0 && lambda_top > 0.0) {
        return Err(invalid("lambda and gap must be positive"));
    }
    let log = (1.0 / delta).ln();
    let gamma1 = gap * gap / (100000.0 * lambda_top * log);
    if !(gamma1 < 1.0) {
        return Err(invalid(format!("first-block rate {gamma1} is not below 1")));
    }
    let len1 = quarter_decay_steps(gamma1);
    let mut blocks = Vec::with_capacity(num_blocks);
    let mut start = 0u64;
    for i in 1..=num_blocks {
        let scale = 1u64
            .checked_shl(i as u32 - 1)
            .filter(|s| *s != 0)
            .ok_or_else(|| Error::Config(format!("block {i} overflows the step counter")))?;
        let gamma = gamma1 / scale as f64;
        let len = len1
            .checked_mul(scale)
            .ok_or_else(|| Error::Config(format!("block {i} overflows the step counter")))?;
        let end = start
            .checked_add(len)
            .ok_or_else(|| Error::Config(format!("block {i} overflows the step counter")))?;
        blocks.push(RateBlock {
            index: i,
            start,
            end,
            gamma,
            eta: gamma / (2.0 * gap),
            decay: geometric_decay(gamma, len),
        });
        start = end;
    }
    Ok(LastIterateRates {
        blocks,
        level: 1000.0 * lambda_top * log / (gap * gap),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalCheck {
    pub index: usize,
    /// `Δ_i`, absent for burn-in intervals.
    pub deviation: Option<f64>,
    /// `Λ_i − a_{i−1} − Δ_i`, or `Λ_i − cap` for burn-in intervals.
    pub pullout_margin: f64,
    /// `a_i − decay·Λ_i`, or `a_i − cap` for burn-in intervals.
    pub improvement_margin: f64,
}

impl IntervalCheck {
    pub fn pullout_ok(&self) -> bool {
        self.pullout_margin > 0.0
    }

    pub fn improvement_ok(&self) -> bool {
        self.improvement_margin > 0.0
    }

    pub fn passed(&self) -> bool {
        self.pullout_ok() && self.improvement_ok()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanReport {
    pub checks: Vec<IntervalCheck>,
}

impl PlanReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(IntervalCheck::passed)
    }

    pub fn first_failure(&self) -> Option<&IntervalCheck> {
        self.checks.iter().find(|c| !c.passed())
    }
}

/// Checks `a_{i−1} + Δ_i < Λ_i` and `decay(t_{i−1}, t_i)·Λ_i < a_i` per interval.
/// Burn-in intervals instead need the plan's almost-sure cap below `Λ_i` and `a_i`.
pub fn verify_plan(
    plan: &IntervalPlan,
    deviation: impl Fn(&PlanInterval) -> Result<f64>,
    decay: impl Fn(u64, u64) -> f64,
) -> Result<PlanReport> {
    let mut checks = Vec::with_capacity(plan.len());
    for iv in &plan.intervals {
        let check = if iv.burn_in {
            let cap = plan.almost_sure_cap.ok_or_else(|| {
                Error::Config(format!(
                    "burn-in interval {} without an almost-sure cap",
                    iv.index
                ))
            })?;
            IntervalCheck {
                index: iv.index,
                deviation: None,
                pullout_margin: iv.threshold - cap,
                improvement_margin: iv.level - cap,
            }
        } else {
            let dev = deviation(iv)?;
            IntervalCheck {
                index: iv.index,
                deviation: Some(dev),
                pullout_margin: iv.threshold - iv.prev_level - dev,
                improvement_margin: iv.level - decay(iv.start, iv.end) * iv.threshold,
            }
        };
        checks.push(check);
    }
    Ok(PlanReport { checks })
}

/// Verifies an SGD plan with its closed-form deviation and decay.
pub fn verify_sgd_plan(plan: &IntervalPlan, g: f64, lambda: f64) -> Result<PlanReport> {
    verify_plan(
        plan,
        |iv| sgd_interval_deviation(g, lambda, iv.start, iv.end, iv.threshold, iv.delta),
        product_decay,
    )
}

/// Verifies a PCA plan with the given deviation form and the recorded decays.
pub fn verify_pca_plan(
    plan: &IntervalPlan,
    lambda_top: f64,
    gap: f64,
    variant: PcaDeviationVariant,
) -> Result<PlanReport> {
    let gamma_of = |iv: &PlanInterval| {
        iv.gamma
            .ok_or_else(|| Error::Config(format!("interval {} has no rate", iv.index)))
    };
    let gammas: Vec<(u64, f64)> = plan
        .intervals
        .iter()
        .map(|iv| gamma_of(iv).map(|g| (iv.start, g)))
        .collect::<Result<_>>()?;
    verify_plan(
        plan,
        |iv| {
            pca_deviation_formula(
                variant,
                gamma_of(iv)?,
                lambda_top,
                gap,
                iv.start,
                iv.end,
                iv.threshold,
                iv.delta,
            )
        },
        |t0, t1| {
            let gamma = gammas
                .iter()
                .find(|(s, _)| *s == t0)
                .map_or(f64::NAN, |(_, g)| *g);
            geometric_decay(gamma, t1 - t0)
        },
    )
}
