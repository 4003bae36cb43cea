//! Oja's streaming k-PCA on an axis-aligned distribution with a prescribed
//! diagonal covariance.
//!
//! Because the covariance is diagonal, the top-k eigenspace `V` is spanned by
//! the first `k` standard basis vectors and its complement `Z` by the rest. The
//! potential is `‖Y‖_F²` with `Y = ZᵀW(VᵀW)⁻¹`, maintained incrementally.

use rand::Rng;

use crate::concentration::{clamped_loglog, Guarantee, MomentProfile};
use crate::error::{invalid, Error, Result};
use crate::linalg::{frobenius_norm_sq, solve_small, Matrix, Vector, SINGULAR_TOL};

/// Tolerance on the eigenvalue sum.
pub const SPECTRUM_SUM_TOL: f64 = 1e-9;

/// Largest admissible step size.
pub const MAX_ETA: f64 = 0.25;

/// `W` is rescaled by this factor whenever an entry exceeds its inverse.
const RESCALE: f64 = 1e-150;

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    eigenvalues: Vec<f64>,
    k: usize,
    cdf: Vec<f64>,
}

impl Default for Spectrum {
    fn default() -> Self {
        let mut eig = vec![0.30, 0.25];
        eig.extend([0.075; 6]);
        Spectrum::normalized(eig, 2)
            .expect("default spectrum is valid")
            .0
    }
}

impl Spectrum {
    /// Requires nonincreasing, nonnegative eigenvalues summing to 1 and a positive gap.
    pub fn new(eigenvalues: Vec<f64>, k: usize) -> Result<Self> {
        let sum: f64 = eigenvalues.iter().sum();
        if (sum - 1.0).abs() > SPECTRUM_SUM_TOL {
            return Err(invalid(format!("eigenvalues sum to {sum}, not 1")));
        }
        Self::build(eigenvalues, k)
    }

    /// Like [`Spectrum::new`] but rescales the eigenvalues to sum to 1;
    /// the flag reports whether rescaling was needed.
    pub fn normalized(eigenvalues: Vec<f64>, k: usize) -> Result<(Self, bool)> {
        let sum: f64 = eigenvalues.iter().sum();
        if !(sum > 0.0 && sum.is_finite()) {
            return Err(invalid("eigenvalues must have a positive finite sum"));
        }
        let rescaled = (sum - 1.0).abs() > SPECTRUM_SUM_TOL;
        let eig = if rescaled {
            eigenvalues.iter().map(|l| l / sum).collect()
        } else {
            eigenvalues
        };
        Ok((Self::build(eig, k)?, rescaled))
    }

    fn build(eigenvalues: Vec<f64>, k: usize) -> Result<Self> {
        let d = eigenvalues.len();
        if k == 0 || k >= d {
            return Err(invalid(format!("need 0 < k < d, got k={k}, d={d}")));
        }
        if eigenvalues.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(invalid("eigenvalues must be finite and nonnegative"));
        }
        if eigenvalues.windows(2).any(|w| w[1] > w[0]) {
            return Err(invalid("eigenvalues must be sorted in nonincreasing order"));
        }
        if !(eigenvalues[k - 1] > eigenvalues[k]) {
            return Err(invalid("eigengap must be positive"));
        }
        let mut acc = 0.0;
        let cdf = eigenvalues
            .iter()
            .map(|l| {
                acc += l;
                acc
            })
            .collect();
        Ok(Spectrum {
            eigenvalues,
            k,
            cdf,
        })
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// `λ_k − λ_{k+1}`
    pub fn gap(&self) -> f64 {
        self.eigenvalues[self.k - 1] - self.eigenvalues[self.k]
    }

    /// `λ_1 + … + λ_k`
    pub fn lambda_top(&self) -> f64 {
        self.eigenvalues[..self.k].iter().sum()
    }

    /// Coordinate `i` with probability `λ_i`.
    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random::<f64>() * self.cdf[self.cdf.len() - 1];
        self.cdf.iter().position(|c| u < *c).unwrap_or_else(|| {
            // u landed on the total mass through rounding; take the last atom with mass.
            self.eigenvalues.iter().rposition(|l| *l > 0.0).unwrap_or(0)
        })
    }
}

/// `±e_i` with `i` drawn with probability `λ_i` and a uniform sign.
pub fn sphere_sample<R: Rng + ?Sized>(spec: &Spectrum, rng: &mut R) -> Vector {
    let i = spec.sample_index(rng);
    let mut x = Vector::zeros(spec.dim());
    x[i] = if rng.random::<bool>() { 1.0 } else { -1.0 };
    x
}

fn check_eta(eta: f64) -> Result<()> {
    if eta > 0.0 && eta <= MAX_ETA {
        Ok(())
    } else {
        Err(invalid(format!(
            "step size must lie in (0, {MAX_ETA}], got {eta}"
        )))
    }
}

/// `(I + η·xxᵀ)W`.
pub fn oja_step(w: &Matrix, x: &[f64], eta: f64) -> Result<Matrix> {
    check_eta(eta)?;
    let xw = w.vec_mul(x)?;
    let mut out = w.clone();
    for (i, xi) in x.iter().enumerate() {
        if *xi == 0.0 {
            continue;
        }
        for (o, v) in out.row_mut(i).iter_mut().zip(xw.iter()) {
            *o += eta * xi * v;
        }
    }
    Ok(out)
}

fn check_shape(w: &Matrix, spec: &Spectrum) -> Result<()> {
    if w.shape() != (spec.dim(), spec.k()) {
        return Err(Error::DimensionMismatch(format!(
            "iterate is {}x{}, spectrum needs {}x{}",
            w.rows(),
            w.cols(),
            spec.dim(),
            spec.k()
        )));
    }
    Ok(())
}

/// `Y = ZᵀW(VᵀW)⁻¹` by a direct solve.
pub fn pca_y_direct(w: &Matrix, spec: &Spectrum) -> Result<Matrix> {
    check_shape(w, spec)?;
    let k = spec.k();
    let top = w.row_block(0, k);
    let bottom = w.row_block(k, spec.dim());
    // Y·top = bottom  ⇔  topᵀ·Yᵀ = bottomᵀ
    let yt = solve_small(&top.transpose(), &bottom.transpose()).map_err(|e| match e {
        Error::Singular { pivot } => {
            Error::Degenerate(format!("VᵀW is singular (pivot {pivot:e})"))
        }
        other => other,
    })?;
    Ok(yt.transpose())
}

/// `‖ZᵀW(VᵀW)⁻¹‖_F²`.
pub fn pca_potential_direct(w: &Matrix, spec: &Spectrum) -> Result<f64> {
    Ok(frobenius_norm_sq(&pca_y_direct(w, spec)?))
}

/// Per-sample terms of the linearization: `a = xᵀP Vᵀx`, `B = Vᵀx·xᵀP`,
/// `C = Zᵀx·xᵀP` with `P = W(VᵀW)⁻¹`.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaTerms {
    pub a: f64,
    pub b: Matrix,
    pub c: Matrix,
}

/// The terms given `Y`, using `W(VᵀW)⁻¹ = [I; Y]`.
pub fn pca_terms_from_y(y: &Matrix, x: &[f64], k: usize) -> PcaTerms {
    let (v, z) = x.split_at(k);
    // r = xᵀP = vᵀ + zᵀY
    let mut r = v.to_vec();
    for (zi, row) in z.iter().zip(0..y.rows()) {
        for (rj, yij) in r.iter_mut().zip(y.row(row)) {
            *rj += zi * yij;
        }
    }
    PcaTerms {
        a: r.iter().zip(v).map(|(a, b)| a * b).sum(),
        b: Matrix::outer(v, &r),
        c: Matrix::outer(z, &r),
    }
}

pub fn pca_terms(w: &Matrix, x: &[f64], spec: &Spectrum) -> Result<PcaTerms> {
    Ok(pca_terms_from_y(&pca_y_direct(w, spec)?, x, spec.k()))
}

/// Oja iterate with the incrementally maintained `Y`.
#[derive(Debug, Clone, PartialEq)]
pub struct OjaState {
    pub w: Matrix,
    pub y: Matrix,
    pub t: u64,
}

impl OjaState {
    pub fn new(w: Matrix, spec: &Spectrum) -> Result<Self> {
        let y = pca_y_direct(&w, spec)?;
        Ok(OjaState { w, y, t: 0 })
    }

    /// `W₀ = V + α·Z·S` where `S` pairs each top column with one bottom
    /// column and `α = √(X₀/k)`, so that the potential starts at `X₀`.
    pub fn local_init(spec: &Spectrum, x0: f64) -> Result<Self> {
        if !(x0 >= 0.0 && x0.is_finite()) {
            return Err(invalid(format!(
                "initial potential must be nonnegative, got {x0}"
            )));
        }
        let (d, k) = (spec.dim(), spec.k());
        let alpha = (x0 / k as f64).sqrt();
        let mut w = Matrix::zeros(d, k);
        for j in 0..k {
            w[(j, j)] = 1.0;
            w[(k + j % (d - k), j)] += alpha;
        }
        Self::new(w, spec)
    }

    /// `‖Y‖_F²`
    pub fn potential(&self) -> f64 {
        frobenius_norm_sq(&self.y)
    }

    /// In-place update for `x = ±e_i`; the sign does not affect `xxᵀ`.
    pub fn step_axis(&mut self, i: usize, eta: f64, k: usize) {
        let grow = 1.0 + eta;
        let mut big = false;
        for v in self.w.row_mut(i) {
            *v *= grow;
            big |= v.abs() > 1.0 / RESCALE;
        }
        if big {
            self.w.as_mut_slice().iter_mut().for_each(|v| *v *= RESCALE);
        }
        if i < k {
            // a = 1, YB keeps column i of Y, C = 0
            let shrink = 1.0 / grow;
            let cols = self.y.cols();
            for row in self.y.as_mut_slice().chunks_exact_mut(cols) {
                row[i] *= shrink;
            }
        } else {
            // a = 0, B = 0, C = e_{i−k}·Y[i−k, :]
            self.y.row_mut(i - k).iter_mut().for_each(|v| *v *= grow);
        }
        self.t += 1;
    }

    /// Relative Frobenius gap between the maintained `Y` and a direct solve.
    pub fn cross_check(&self, spec: &Spectrum) -> Result<f64> {
        let direct = pca_y_direct(&self.w, spec)?;
        let diff = frobenius_norm_sq(&self.y.sub(&direct)?).sqrt();
        let scale = frobenius_norm_sq(&direct).sqrt();
        Ok(if scale > 0.0 { diff / scale } else { diff })
    }
}

/// `Y' = Y − s·YB + s·C` with `s = η/(1+ηa)`, alongside the Oja step on `W`.
pub fn pca_incremental_update(
    state: &OjaState,
    x: &[f64],
    eta: f64,
    spec: &Spectrum,
) -> Result<OjaState> {
    check_shape(&state.w, spec)?;
    let mut w = oja_step(&state.w, x, eta)?;
    if w.as_slice().iter().any(|v| v.abs() > 1.0 / RESCALE) {
        w = w.scaled(RESCALE);
    }
    let terms = pca_terms_from_y(&state.y, x, spec.k());
    let denom = 1.0 + eta * terms.a;
    if denom.abs() < SINGULAR_TOL {
        return Err(Error::Degenerate(format!("1 + eta*a = {denom:e}")));
    }
    let s = eta / denom;
    let yb = state.y.matmul(&terms.b)?;
    let y = state.y.sub(&yb.scaled(s))?.add(&terms.c.scaled(s))?;
    Ok(OjaState {
        w,
        y,
        t: state.t + 1,
    })
}

/// The noise `N_t` in `X_t ≤ (1 − 2η·gap)X_{t−1} + N_t`, given `Y_{t−1}`.
pub fn pca_noise_term(y: &Matrix, x: &[f64], eta: f64, spec: &Spectrum) -> Result<f64> {
    let k = spec.k();
    let PcaTerms { a, b, c } = pca_terms_from_y(y, x, k);
    let yty = y.transpose().matmul(y)?;
    let tr_yyb = yty.matmul(&b)?.trace();
    let tr_yc = y.transpose().matmul(&c)?.trace();
    let lam = spec.eigenvalues();
    let top: f64 = (0..k).map(|j| lam[j] * yty[(j, j)]).sum();
    let bottom: f64 = (0..y.rows())
        .map(|i| lam[k + i] * y.row(i).iter().map(|v| v * v).sum::<f64>())
        .sum();
    let yb_sq = frobenius_norm_sq(&y.matmul(&b)?);
    let c_sq = frobenius_norm_sq(&c);
    let denom = 1.0 + eta * a;
    Ok(2.0 * eta * (-tr_yyb + top + tr_yc - bottom)
        + 2.0 * eta * eta * a / denom * (tr_yyb - tr_yc)
        + 2.0 * eta * eta / (denom * denom) * (yb_sq + c_sq))
}

/// With `η = γ/(2gap)`: `B = 40η/(1−γ)^{t−T0}`, `μ = 56η²λ/(1−γ)^{t−T0}`,
/// `σ² = η²λ(1136Λ + 512η²)/(1−γ)^{2(t−T0)}`, for thresholds `Λ ≤ 1`.
pub fn pca_moment_profile(spec: &Spectrum, gamma: f64, t0: u64) -> Result<MomentProfile> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(invalid(format!("gamma must lie in (0, 1), got {gamma}")));
    }
    let eta = gamma / (2.0 * spec.gap());
    check_eta(eta)?;
    let lam = spec.lambda_top();
    let log_growth = -(-gamma).ln_1p();
    let growth = move |t: u64| ((t as f64 - t0 as f64) * log_growth).exp();
    Ok(MomentProfile::new(
        move |t, _| 40.0 * eta * growth(t),
        move |t, _| 56.0 * eta * eta * lam * growth(t),
        move |t, big| eta * eta * lam * (1136.0 * big + 512.0 * eta * eta) * growth(t).powi(2),
        t0,
    )
    .with_max_threshold(1.0))
}

/// `2000λ ln(1/δ)/(gap²t)` (last) or `30000λ(ln(1/δ) + 2lnln(t+1))/(gap²t)` (uniform).
pub fn pca_bound(t: u64, delta: f64, guarantee: Guarantee, spec: &Spectrum) -> f64 {
    let log = (1.0 / delta).ln();
    let num = match guarantee {
        Guarantee::Last => 2000.0 * log,
        Guarantee::Uniform => 30000.0 * (log + 2.0 * clamped_loglog(t)),
    };
    num * spec.lambda_top() / (spec.gap().powi(2) * t.max(1) as f64)
}

/// Alternate uniform rate: `60000λ(ln(1/δ) + lnln(t+1))/(gap²t)`.
pub fn pca_uniform_bound_alt(t: u64, delta: f64, spec: &Spectrum) -> f64 {
    60000.0 * spec.lambda_top() * ((1.0 / delta).ln() + clamped_loglog(t))
        / (spec.gap().powi(2) * t.max(1) as f64)
}
