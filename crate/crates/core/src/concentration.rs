//! Recursions, moment profiles, deviation bounds and stopping times.

use std::fmt;
use std::sync::Arc;

use crate::error::{check_delta, invalid, Error, Result};

/// Which convergence notion a rate certifies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Guarantee {
    /// `P[X_T > r(T, δ)] < δ` at the horizon only.
    Last,
    /// `P[∃t: X_t > r(t, δ)] < δ` over all steps simultaneously.
    Uniform,
}

/// `max{ln ln(t+1), 0}`, zero wherever the double log is undefined.
pub fn clamped_loglog(t: u64) -> f64 {
    let inner = ((t + 1) as f64).ln();
    if inner <= 1.0 {
        0.0
    } else {
        inner.ln()
    }
}

/// A moment-profile component: `(t, Λ) -> value`.
pub type ProfileFn = Arc<dyn Fn(u64, f64) -> f64 + Send + Sync>;

/// Bounds on the noise of a recursion while the process stays below a
/// threshold: bounded difference `B`, conditional mean `μ` and conditional
/// variance `σ²`, each as a function of step and threshold.
#[derive(Clone)]
pub struct MomentProfile {
    bounded_diff: ProfileFn,
    cond_mean: ProfileFn,
    cond_var: ProfileFn,
    start_time: u64,
    max_threshold: Option<f64>,
}

impl fmt::Debug for MomentProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MomentProfile")
            .field("start_time", &self.start_time)
            .field("max_threshold", &self.max_threshold)
            .finish_non_exhaustive()
    }
}

impl MomentProfile {
    pub fn new(
        bounded_diff: impl Fn(u64, f64) -> f64 + Send + Sync + 'static,
        cond_mean: impl Fn(u64, f64) -> f64 + Send + Sync + 'static,
        cond_var: impl Fn(u64, f64) -> f64 + Send + Sync + 'static,
        start_time: u64,
    ) -> Self {
        MomentProfile {
            bounded_diff: Arc::new(bounded_diff),
            cond_mean: Arc::new(cond_mean),
            cond_var: Arc::new(cond_var),
            start_time,
            max_threshold: None,
        }
    }

    /// Profile whose three components ignore `(t, Λ)`.
    pub fn constant(b: f64, mu: f64, var: f64) -> Self {
        Self::new(move |_, _| b, move |_, _| mu, move |_, _| var, 0)
    }

    /// Restricts the profile to thresholds `Λ ≤ max`; evaluation above it errors.
    pub fn with_max_threshold(mut self, max: f64) -> Self {
        self.max_threshold = Some(max);
        self
    }

    pub fn start_time(&self) -> u64 {
        self.start_time
    }

    /// Returns `(B, μ, σ²)` at `(t, Λ)`.
    pub fn evaluate(&self, t: u64, lambda: f64) -> Result<(f64, f64, f64)> {
        if let Some(max) = self.max_threshold {
            if lambda > max {
                return Err(invalid(format!(
                    "threshold {lambda} exceeds profile limit {max}"
                )));
            }
        }
        let vals = (
            (self.bounded_diff)(t, lambda),
            (self.cond_mean)(t, lambda),
            (self.cond_var)(t, lambda),
        );
        for (name, v) in [
            ("bounded difference", vals.0),
            ("mean", vals.1),
            ("variance", vals.2),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Degenerate(format!(
                    "{name} bound {v} at t={t}, threshold={lambda}"
                )));
            }
        }
        Ok(vals)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdKind {
    /// `Λ_t = Λ`
    Uniform,
    /// `Λ_t = Λ / t`
    Linear,
    /// `Λ_t = T·Λ / t²`
    InverseSquareScaled,
}

/// A time-varying threshold `Λ_t`. Time zero is treated as time one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdSequence {
    pub kind: ThresholdKind,
    pub level: f64,
    pub horizon: u64,
}

impl ThresholdSequence {
    pub fn uniform(level: f64) -> Self {
        ThresholdSequence {
            kind: ThresholdKind::Uniform,
            level,
            horizon: 0,
        }
    }

    pub fn linear(level: f64) -> Self {
        ThresholdSequence {
            kind: ThresholdKind::Linear,
            level,
            horizon: 0,
        }
    }

    pub fn inverse_square_scaled(level: f64, horizon: u64) -> Self {
        ThresholdSequence {
            kind: ThresholdKind::InverseSquareScaled,
            level,
            horizon,
        }
    }

    pub fn value(&self, t: u64) -> f64 {
        let t = t.max(1) as f64;
        match self.kind {
            ThresholdKind::Uniform => self.level,
            ThresholdKind::Linear => self.level / t,
            ThresholdKind::InverseSquareScaled => self.horizon as f64 * self.level / (t * t),
        }
    }
}

/// `X_t ≤ D_t·(X_0 + M_t)` with `D_t = ∏ H` and `M_t = Σ N/D`, for `t = 1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnfoldedRecursion {
    pub dominating: Vec<f64>,
    pub minor: Vec<f64>,
    pub start_value: f64,
}

impl UnfoldedRecursion {
    /// `D_t·(X_0 + M_t)` for each `t`.
    pub fn reconstruct(&self) -> Vec<f64> {
        self.dominating
            .iter()
            .zip(&self.minor)
            .map(|(d, m)| d * (self.start_value + m))
            .collect()
    }
}

pub fn unfold_recursion(h: &[f64], n: &[f64], x0: f64) -> Result<UnfoldedRecursion> {
    if h.len() != n.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} factors vs {} noise terms",
            h.len(),
            n.len()
        )));
    }
    let mut dominating = Vec::with_capacity(h.len());
    let mut minor = Vec::with_capacity(h.len());
    let (mut d, mut m) = (1.0, 0.0);
    for (t, (ht, nt)) in h.iter().zip(n).enumerate() {
        if !(*ht > 0.0) {
            return Err(invalid(format!(
                "factor H_{} = {ht} is not positive",
                t + 1
            )));
        }
        d *= ht;
        m += nt / d;
        dominating.push(d);
        minor.push(m);
    }
    Ok(UnfoldedRecursion {
        dominating,
        minor,
        start_value: x0,
    })
}

/// `Δ = 2·max{√(Σσ²·ln(1/δ)), max 2B·ln(1/δ)} + Σμ` over `T0 < t ≤ T1`.
pub fn deviation_bound(
    profile: &MomentProfile,
    thresholds: &ThresholdSequence,
    t0: u64,
    t1: u64,
    delta: f64,
) -> Result<f64> {
    check_delta(delta)?;
    if t0 >= t1 {
        return Err(invalid(format!("empty interval ({t0}, {t1}]")));
    }
    let log = (1.0 / delta).ln();
    let (mut var_sum, mut mean_sum, mut b_max) = (0.0f64, 0.0f64, 0.0f64);
    for t in t0 + 1..=t1 {
        let (b, mu, var) = profile.evaluate(t, thresholds.value(t))?;
        b_max = b_max.max(b);
        mean_sum += mu;
        var_sum += var;
    }
    Ok(2.0 * (var_sum * log).sqrt().max(2.0 * b_max * log) + mean_sum)
}

/// First time a trajectory rises strictly above its threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoppingRecord {
    pub crossing_time: Option<u64>,
    pub thresholds: ThresholdSequence,
}

pub fn first_crossing(trajectory: &[f64], thresholds: &ThresholdSequence) -> StoppingRecord {
    let crossing_time = trajectory
        .iter()
        .enumerate()
        .find(|(t, x)| **x > thresholds.value(*t as u64))
        .map(|(t, _)| t as u64);
    StoppingRecord {
        crossing_time,
        thresholds: *thresholds,
    }
}

/// Increments `1{τ ≥ t}(M_t − M_{t−1})` for `t = 1..len(M)`.
pub fn stopped_increments(m: &[f64], tau: &StoppingRecord) -> Vec<f64> {
    m.windows(2)
        .enumerate()
        .map(|(i, w)| match tau.crossing_time {
            Some(tau) if (i as u64 + 1) > tau => 0.0,
            _ => w[1] - w[0],
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImprovementReport {
    pub improvement_ok: bool,
    pub pullout_ok: bool,
    pub first_failing_t: Option<u64>,
}

/// Relative slack absorbing rounding in the inequality checks below.
const CHECK_RTOL: f64 = 1e-12;

fn le(lhs: f64, rhs: f64) -> bool {
    lhs <= rhs + CHECK_RTOL * rhs.abs()
}

/// Checks `D_{T1}(A0+Δ) ≤ A1` and `D_t(A0+Δ) ≤ Λ` for every `T0 < t ≤ T1`.
pub fn check_improvement(
    d_product_at: impl Fn(u64) -> f64,
    a0: f64,
    a1: f64,
    lambda: f64,
    delta: f64,
    t0: u64,
    t1: u64,
) -> ImprovementReport {
    let start = a0 + delta;
    let first_failing_t = (t0 + 1..=t1).find(|&t| !le(d_product_at(t) * start, lambda));
    ImprovementReport {
        improvement_ok: le(d_product_at(t1) * start, a1),
        pullout_ok: first_failing_t.is_none(),
        first_failing_t,
    }
}

/// Counts paths with a time `t` where `max_{t'≤t} M_{t'} ≤ Δ` but `X_t > Λ_t`.
pub fn pullout_witness_check(
    trajectories: &[(Vec<f64>, Vec<f64>)],
    thresholds: &ThresholdSequence,
    delta: f64,
) -> usize {
    trajectories
        .iter()
        .filter(|(x, m)| {
            let mut running = f64::NEG_INFINITY;
            x.iter().zip(m).enumerate().any(|(t, (xt, mt))| {
                running = running.max(*mt);
                running <= delta && *xt > thresholds.value(t as u64)
            })
        })
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::E;

    #[test]
    fn unfold_examples() {
        let u = unfold_recursion(&[0.5, 0.5], &[1.0, 1.0], 4.0).unwrap();
        assert_eq!(u.dominating, vec![0.5, 0.25]);
        assert_eq!(u.minor, vec![2.0, 6.0]);
        assert_eq!(u.reconstruct(), vec![3.0, 2.5]);

        let u = unfold_recursion(&[0.5, 2.0, 3.0], &[0.0; 3], 2.0).unwrap();
        assert_eq!(u.minor, vec![0.0; 3]);
        assert_eq!(u.reconstruct(), vec![1.0, 2.0, 6.0]);

        let u = unfold_recursion(&[1.0; 3], &[1.0, -2.0, 0.5], 1.0).unwrap();
        assert_eq!(u.dominating, vec![1.0; 3]);
        assert_eq!(u.minor, vec![1.0, -1.0, -0.5]);
        assert_eq!(u.reconstruct(), vec![2.0, 0.0, 0.5]);

        assert!(unfold_recursion(&[1.0, 0.0], &[0.0, 0.0], 1.0).is_err());
        assert!(unfold_recursion(&[1.0], &[0.0, 0.0], 1.0).is_err());
    }

    #[test]
    fn deviation_examples() {
        let th = ThresholdSequence::uniform(1.0);
        let d = deviation_bound(
            &MomentProfile::constant(1.0, 0.0, 1.0),
            &th,
            0,
            4,
            (-1.0f64).exp(),
        );
        assert_relative_eq!(d.unwrap(), 4.0, epsilon = 1e-12);
        let d = deviation_bound(&MomentProfile::constant(0.0, 0.0, 0.0), &th, 0, 4, 0.1);
        assert_eq!(d.unwrap(), 0.0);
        let d = deviation_bound(&MomentProfile::constant(1.0, 1.0, 0.0), &th, 0, 3, 1.0 / E);
        assert_relative_eq!(d.unwrap(), 7.0, epsilon = 1e-12);
        for bad in [0.0, 1.0, -0.5, f64::NAN] {
            assert!(
                deviation_bound(&MomentProfile::constant(1.0, 0.0, 1.0), &th, 0, 3, bad).is_err()
            );
        }
    }

    #[test]
    fn deviation_rejects_bad_profiles() {
        let th = ThresholdSequence::uniform(2.0);
        let neg = MomentProfile::new(|_, _| 1.0, |_, _| -1.0, |_, _| 1.0, 0);
        assert!(matches!(
            deviation_bound(&neg, &th, 0, 3, 0.1),
            Err(Error::Degenerate(_))
        ));
        let capped = MomentProfile::constant(1.0, 0.0, 1.0).with_max_threshold(1.0);
        assert!(deviation_bound(&capped, &th, 0, 3, 0.1).is_err());
    }

    #[test]
    fn deviation_uses_threshold_sequence() {
        let p = MomentProfile::new(|_, l| l, |_, _| 0.0, |_, _| 0.0, 0);
        let d = deviation_bound(&p, &ThresholdSequence::linear(4.0), 1, 4, 1.0 / E).unwrap();
        // max over t = 2..4 of 2·(4/t) is 4.
        assert_relative_eq!(d, 8.0, epsilon = 1e-12);
    }

    #[test]
    fn loglog_clamp() {
        assert_eq!(clamped_loglog(0), 0.0);
        assert_eq!(clamped_loglog(1), 0.0);
        assert_eq!(clamped_loglog(2), (3f64).ln().ln());
        assert!(clamped_loglog(2) > 0.0);
    }

    #[test]
    fn threshold_values() {
        assert_eq!(ThresholdSequence::uniform(3.0).value(7), 3.0);
        assert_eq!(ThresholdSequence::linear(3.0).value(0), 3.0);
        assert_eq!(ThresholdSequence::linear(3.0).value(6), 0.5);
        assert_eq!(
            ThresholdSequence::inverse_square_scaled(2.0, 100).value(10),
            2.0
        );
    }

    #[test]
    fn crossing_examples() {
        let r = first_crossing(&[0.1, 0.5, 0.9], &ThresholdSequence::uniform(0.6));
        assert_eq!(r.crossing_time, Some(2));
        let r = first_crossing(&[0.1, 0.2], &ThresholdSequence::uniform(1.0));
        assert_eq!(r.crossing_time, None);
        let r = first_crossing(&[2.0, 0.0, 0.0], &ThresholdSequence::linear(1.0));
        assert_eq!(r.crossing_time, Some(0));
    }

    fn record(tau: Option<u64>) -> StoppingRecord {
        StoppingRecord {
            crossing_time: tau,
            thresholds: ThresholdSequence::uniform(1.0),
        }
    }

    #[test]
    fn stopped_increment_examples() {
        let m = [0.0, 1.0, 3.0, 6.0];
        assert_eq!(
            stopped_increments(&m, &record(Some(2))),
            vec![1.0, 2.0, 0.0]
        );
        assert_eq!(stopped_increments(&m, &record(None)), vec![1.0, 2.0, 3.0]);
        assert_eq!(stopped_increments(&m, &record(Some(0))), vec![0.0; 3]);
    }

    #[test]
    fn improvement_examples() {
        let d = |t: u64| 1.0 / (t * t) as f64;
        let r = check_improvement(d, 4.0, 4.0 / 100.0, 5.0, 0.0, 1, 10);
        assert_eq!(
            r,
            ImprovementReport {
                improvement_ok: true,
                pullout_ok: true,
                first_failing_t: None
            }
        );

        let r = check_improvement(|t| 1.0 / (t - 4) as f64, 2.0, 10.0, 2.5, 1.0, 4, 12);
        assert!(!r.pullout_ok);
        assert_eq!(r.first_failing_t, Some(5));

        let r = check_improvement(|_| 1.0, 1.0, f64::MAX, 10.0, 1.0, 0, 5);
        assert!(r.improvement_ok);
    }

    #[test]
    fn pullout_witness_examples() {
        let th = ThresholdSequence::uniform(1.0);
        let ok = (vec![0.1, 0.5, 0.9], vec![0.0, 0.2, 0.4]);
        assert_eq!(pullout_witness_check(&[ok], &th, 0.5), 0);
        let vacuous = (vec![0.1, 2.0], vec![0.0, 3.0]);
        assert_eq!(pullout_witness_check(&[vacuous], &th, 1.0), 0);
        let bad = (vec![0.1, 0.2, 1.5], vec![0.0, 0.0, 0.0]);
        assert_eq!(pullout_witness_check(&[bad], &th, 1.0), 1);
    }

    proptest! {
        #[test]
        fn reconstruction_matches_iteration(
            hn in prop::collection::vec((0.05f64..3.0, -5.0f64..5.0), 1..60),
            x0 in -5.0f64..5.0,
        ) {
            let (h, n): (Vec<f64>, Vec<f64>) = hn.into_iter().unzip();
            let u = unfold_recursion(&h, &n, x0).unwrap();
            let mut x = x0;
            for (t, rec) in u.reconstruct().into_iter().enumerate() {
                x = h[t] * x + n[t];
                let scale = x.abs().max(u.dominating[t] * (x0.abs() + 1.0)).max(1.0);
                prop_assert!((rec - x).abs() <= 1e-9 * scale, "t={} rec={} x={}", t, rec, x);
            }
        }

        #[test]
        fn minor_is_adapted(
            hn in prop::collection::vec((0.05f64..3.0, -5.0f64..5.0), 2..40),
            cut in 1usize..40,
        ) {
            let (h, n): (Vec<f64>, Vec<f64>) = hn.into_iter().unzip();
            let cut = cut.min(h.len());
            let full = unfold_recursion(&h, &n, 0.0).unwrap();
            let trunc = unfold_recursion(&h[..cut], &n[..cut], 0.0).unwrap();
            prop_assert_eq!(&full.minor[..cut], &trunc.minor[..]);
        }

        #[test]
        fn deviation_monotone(
            b in 0.0f64..3.0, mu in 0.0f64..3.0, var in 0.0f64..3.0,
            bump in 0.0f64..2.0, t1 in 1u64..30, extra in 0u64..10,
            delta in 0.01f64..0.9, shrink in 0.1f64..1.0,
        ) {
            let th = ThresholdSequence::uniform(1.0);
            let base = deviation_bound(&MomentProfile::constant(b, mu, var), &th, 0, t1, delta).unwrap();
            for p in [
                MomentProfile::constant(b + bump, mu, var),
                MomentProfile::constant(b, mu + bump, var),
                MomentProfile::constant(b, mu, var + bump),
            ] {
                prop_assert!(deviation_bound(&p, &th, 0, t1, delta).unwrap() >= base);
            }
            let p = MomentProfile::constant(b, mu, var);
            prop_assert!(deviation_bound(&p, &th, 0, t1 + extra, delta).unwrap() >= base);
            prop_assert!(deviation_bound(&p, &th, 0, t1, delta * shrink).unwrap() >= base);
        }

        #[test]
        fn stopped_sum_identity(
            steps in prop::collection::vec(-3.0f64..3.0, 1..40),
            tau in prop::option::of(0u64..50),
        ) {
            let mut m = vec![0.0];
            for s in &steps {
                m.push(m.last().unwrap() + s);
            }
            let inc = stopped_increments(&m, &record(tau));
            let stop = tau.map_or(m.len() - 1, |t| (t as usize).min(m.len() - 1));
            let sum: f64 = inc.iter().sum();
            prop_assert!((sum - (m[stop] - m[0])).abs() < 1e-9);
        }
    }
}
