//! A scalar process with `E[N|x] = −x` and `Var[N|x] ≤ x/t`, decaying like `1/t`.

use rand::Rng;

/// Default starting value.
pub const TOY_X0: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyState {
    pub x: f64,
    pub t: u64,
}

impl ToyState {
    pub fn new(x: f64) -> Self {
        ToyState { x, t: 0 }
    }
}

impl Default for ToyState {
    fn default() -> Self {
        Self::new(TOY_X0)
    }
}

/// Half-width `c = min{√(x/(t+1)), (t+1)x, 1−x}` of the two-point noise.
pub fn toy_noise_scale(x: f64, t: u64) -> f64 {
    let d = (t + 1) as f64;
    (x / d).sqrt().min(d * x).min(1.0 - x).max(0.0)
}

/// Applies one step with a given noise sign: `N = −x ± c`, `x' = x + N/(t+2)`.
pub fn toy_step_with_sign(state: ToyState, positive: bool) -> (ToyState, f64) {
    let c = toy_noise_scale(state.x, state.t);
    let noise = -state.x + if positive { c } else { -c };
    let x = (state.x + noise / (state.t + 2) as f64).clamp(0.0, 1.0);
    (ToyState { x, t: state.t + 1 }, noise)
}

/// One step from index `t` to `t+1`; returns the new state and the noise `N`.
pub fn toy_step<R: Rng + ?Sized>(state: ToyState, rng: &mut R) -> (ToyState, f64) {
    toy_step_with_sign(state, rng.random::<bool>())
}

/// `10·ln(1/δ)/t`
pub fn toy_bound(t: u64, delta: f64) -> f64 {
    10.0 * (1.0 / delta).ln() / t.max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn absorbing_at_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (s, n) = toy_step(ToyState::new(0.0), &mut rng);
        assert_eq!((s.x, n), (0.0, 0.0));
    }

    #[test]
    fn first_step_noise_values() {
        assert_relative_eq!(toy_noise_scale(0.1, 0), 0.1, max_relative = 1e-15);
        let (up, n_up) = toy_step_with_sign(ToyState::new(0.1), true);
        let (down, n_down) = toy_step_with_sign(ToyState::new(0.1), false);
        assert_relative_eq!(n_up, 0.0, epsilon = 1e-15);
        assert_relative_eq!(n_down, -0.2, epsilon = 1e-15);
        assert_relative_eq!(up.x, 0.1, epsilon = 1e-15);
        assert_relative_eq!(down.x, 0.0, epsilon = 1e-15);
        assert_eq!(up.t, 1);
    }

    #[test]
    fn conditional_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let state = ToyState { x: 0.5, t: 9 };
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| toy_step(state, &mut rng).1).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!((mean + 0.5).abs() <= 4.0 * se, "mean {mean} se {se}");
        assert!(var <= 0.5 / 10.0 * 1.05);
    }

    #[test]
    fn path_stays_in_unit_interval_and_matches_recursion() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for x0 in [0.1, 0.9, 1.0, 0.5] {
            let mut s = ToyState::new(x0);
            for _ in 0..5000 {
                let (next, n) = toy_step(s, &mut rng);
                assert!((0.0..=1.0).contains(&next.x));
                assert!(n.abs() <= 1.0);
                let t = next.t as f64;
                let xi = n + s.x;
                let expected = t / (t + 1.0) * s.x + xi / (t + 1.0);
                assert_relative_eq!(next.x, expected, epsilon = 1e-14);
                s = next;
            }
        }
    }

    #[test]
    fn bound_examples() {
        assert_relative_eq!(toy_bound(100, (-10.0f64).exp()), 1.0, max_relative = 1e-12);
        assert_relative_eq!(toy_bound(10, (-1.0f64).exp()), 1.0, max_relative = 1e-12);
        assert!((1..100).all(|t| toy_bound(t + 1, 0.1) < toy_bound(t, 0.1)));
    }
}
