//! Closed-form references for Gaussian data: mixture scores, the VE
//! probability-flow ODE, the Gaussian rectified-flow map, and Monte Carlo
//! checks of the conditioning and Jensen inequalities.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::process::{ProcessKind, ProcessSpec};

/// Isotropic Gaussian mixture `Σ w_i N(μ_i, s_i² I)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub scales: Vec<f64>,
}

impl MixtureSpec {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, scales: Vec<f64>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || scales.len() != k {
            return Err(Error::arg("mixture needs matching, non-empty weights/means/scales"));
        }
        let dim = means[0].len();
        if dim == 0 || means.iter().any(|m| m.len() != dim) {
            return Err(Error::arg("mixture means must share a positive dimension"));
        }
        if weights.iter().any(|&w| !(w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::arg("mixture weights must be non-negative and sum to 1"));
        }
        if scales.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::arg("mixture scales must be positive"));
        }
        Ok(MixtureSpec {
            weights,
            means,
            scales,
        })
    }

    pub fn single(dim: usize, scale: f64) -> Result<Self> {
        MixtureSpec::new(vec![1.0], vec![vec![0.0; dim]], vec![scale])
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    /// Per-component log of `w_i N(x; μ_i, (s_i² + σ²) I)`.
    fn component_log_terms(&self, x: &[f64], sigma: f64) -> Vec<f64> {
        let d = x.len() as f64;
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.scales)
            .map(|((&w, mu), &s)| {
                let var = s * s + sigma * sigma;
                let sq: f64 = x.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).sum();
                w.ln() - 0.5 * sq / var - 0.5 * d * (2.0 * std::f64::consts::PI * var).ln()
            })
            .collect()
    }

    /// `log p_σ(x)` of the mixture convolved with `N(0, σ² I)`.
    pub fn log_density(&self, x: &[f64], sigma: f64) -> f64 {
        log_sum_exp(&self.component_log_terms(x, sigma))
    }

    /// `∇_x log p_σ(x)`.
    pub fn ve_score(&self, x: &[f64], sigma: f64) -> Vec<f64> {
        let logs = self.component_log_terms(x, sigma);
        let lse = log_sum_exp(&logs);
        let mut score = vec![0.0; x.len()];
        for ((l, mu), &s) in logs.iter().zip(&self.means).zip(&self.scales) {
            let r = (l - lse).exp();
            if r == 0.0 {
                continue;
            }
            let var = s * s + sigma * sigma;
            for ((out, &xi), &mi) in score.iter_mut().zip(x).zip(mu) {
                *out += r * (mi - xi) / var;
            }
        }
        score
    }

    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Array2<f64> {
        let d = self.dim();
        let mut cdf = Vec::with_capacity(self.weights.len());
        let mut acc = 0.0;
        for w in &self.weights {
            acc += w;
            cdf.push(acc);
        }
        let mut out = Array2::zeros((count, d));
        for mut row in out.rows_mut() {
            let u: f64 = rng.random::<f64>() * acc;
            let k = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
            for (j, v) in row.iter_mut().enumerate() {
                let g: f64 = StandardNormal.sample(rng);
                *v = self.means[k][j] + self.scales[k] * g;
            }
        }
        out
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Free function form of [`MixtureSpec::ve_score`].
pub fn ve_score(mix: &MixtureSpec, x: &[f64], sigma: f64) -> Vec<f64> {
    mix.ve_score(x, sigma)
}

/// Explicit Euler on the VE probability-flow ODE from `t = T` down to 0.
///
/// With `σ_t = σ_min ρ^{t/T}` the ODE is `dx/dt = -(σ_t² ln ρ / T) ∇log p_t`,
/// so one step of size `T/n` adds `σ_t² ln ρ / n · score`.
pub fn euler_pf_ode(
    mix: &MixtureSpec,
    x_t: &[f64],
    spec: &ProcessSpec,
    num_steps: usize,
) -> Result<Vec<f64>> {
    if spec.kind != ProcessKind::Ve {
        return Err(Error::Unsupported(format!(
            "the Euler baseline integrates the VE ODE, not {}",
            spec.kind
        )));
    }
    if num_steps < 1 {
        return Err(Error::arg("num_steps must be at least 1"));
    }
    if x_t.len() != mix.dim() {
        return Err(Error::arg("x_T dimension differs from the mixture"));
    }
    let t_max = f64::from(spec.steps);
    let log_ratio = (spec.sigma_max / spec.sigma_min).ln();
    let mut x = x_t.to_vec();
    for i in 0..num_steps {
        let t = t_max * (1.0 - i as f64 / num_steps as f64);
        let sigma = if i == 0 {
            spec.sigma_max
        } else {
            spec.sigma_continuous(t)
        };
        let coef = sigma * sigma * log_ratio / num_steps as f64;
        let score = mix.ve_score(&x, sigma);
        for (xi, si) in x.iter_mut().zip(&score) {
            *xi += coef * si;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "Euler state became non-finite at step {} of {num_steps} (t = {t})",
                i + 1
            )));
        }
    }
    Ok(x)
}

/// Exact VE flow map for `N(0, s² I)` data: `x_T √(s² + σ_min²) / √(s² + σ_max²)`.
pub fn gaussian_ve_map(x_t: &[f64], s: f64, spec: &ProcessSpec) -> Vec<f64> {
    let k = ((s * s + spec.sigma_min * spec.sigma_min) / (s * s + spec.sigma_max * spec.sigma_max))
        .sqrt();
    x_t.iter().map(|v| k * v).collect()
}

/// Exact rectified-flow map from `N(0, I)` noise to `N(0, s² I)` data.
pub fn gaussian_rf_map(z: &[f64], s: f64) -> Result<Vec<f64>> {
    if !(s > 0.0) {
        return Err(Error::arg("s must be positive"));
    }
    Ok(z.iter().map(|v| s * v).collect())
}

/// Velocity `dz/dt = (α_t'/α_t) z` of the Gaussian rectified flow, where
/// `α_t = √((1−t)² s² + t²)` is the marginal standard deviation.
pub fn gaussian_rf_velocity(z: &[f64], t: f64, s: f64) -> Vec<f64> {
    let alpha_sq = (1.0 - t).powi(2) * s * s + t * t;
    let rate = ((t - 1.0) * s * s + t) / alpha_sq;
    z.iter().map(|v| rate * v).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Theorem1Report {
    pub mse_joint: f64,
    pub mse_marginal: f64,
    pub analytic_joint: f64,
    pub analytic_marginal: f64,
    pub se_joint: f64,
    pub se_marginal: f64,
    /// Standard error of the paired difference `marginal − joint`.
    pub se_diff: f64,
}

/// Monte Carlo comparison of `E[x0 | x_t]` against `E[x0 | x_t, anchor]` for
/// `x0 ~ N(0, s²)`, `x_t = x0 + σ ε`, `anchor = x0 + τ η`.
pub fn theorem1_check<R: Rng + ?Sized>(
    s: f64,
    sigma: f64,
    tau: f64,
    trials: usize,
    rng: &mut R,
) -> Result<Theorem1Report> {
    if [s, sigma, tau].iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::arg("s, sigma and tau must be positive"));
    }
    if trials < 2 {
        return Err(Error::arg("need at least two trials"));
    }
    let (ps, pn, pa) = (1.0 / (s * s), 1.0 / (sigma * sigma), 1.0 / (tau * tau));
    let analytic_joint = 1.0 / (ps + pn + pa);
    let analytic_marginal = 1.0 / (ps + pn);
    let mut joint = Welford::default();
    let mut marginal = Welford::default();
    let mut diff = Welford::default();
    for _ in 0..trials {
        let x0 = s * normal(rng);
        let x_t = x0 + sigma * normal(rng);
        let anchor = x0 + tau * normal(rng);
        let est_m = analytic_marginal * pn * x_t;
        let est_j = analytic_joint * (pn * x_t + pa * anchor);
        let (em, ej) = ((est_m - x0).powi(2), (est_j - x0).powi(2));
        joint.push(ej);
        marginal.push(em);
        diff.push(em - ej);
    }
    Ok(Theorem1Report {
        mse_joint: joint.mean,
        mse_marginal: marginal.mean,
        analytic_joint,
        analytic_marginal,
        se_joint: joint.std_err(),
        se_marginal: marginal.std_err(),
        se_diff: diff.std_err(),
    })
}

/// Affine velocity field `v(x, t) = A x + b t + c`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineField {
    pub a: Array2<f64>,
    pub b: Array1<f64>,
    pub c: Array1<f64>,
}

impl AffineField {
    pub fn zero(dim: usize) -> Self {
        AffineField {
            a: Array2::zeros((dim, dim)),
            b: Array1::zeros(dim),
            c: Array1::zeros(dim),
        }
    }

    /// Standard normal entries; `A` scaled by `1/√dim`.
    pub fn random<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        let scale = 1.0 / (dim as f64).sqrt();
        AffineField {
            a: Array2::from_shape_fn((dim, dim), |_| scale * normal(rng)),
            b: Array1::from_shape_fn(dim, |_| normal(rng)),
            c: Array1::zeros(dim),
        }
    }

    pub fn eval(&self, x: &Array1<f64>, t: f64) -> Array1<f64> {
        self.a.dot(x) + &self.b * t + &self.c
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }
}

/// How `(x0, x1)` pairs are drawn: `x0 ~ N(0, I)` and either an independent
/// `x1 ~ N(0, I)` or the deterministic translate `x1 = x0 + m`.
#[derive(Clone, Debug, PartialEq)]
pub enum Coupling {
    Independent,
    Translation(Array1<f64>),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Theorem3Report {
    /// `E ∫ ‖(x1 − x0) − v(x_t, t)‖² dt`
    pub lhs: f64,
    /// `E ‖∫ ((x1 − x0) − v(x_t, t)) dt‖²`
    pub rhs: f64,
    /// Standard error of the paired difference `lhs − rhs`.
    pub se: f64,
    pub holds: bool,
}

/// Compare the integrated squared residual with the squared integrated
/// residual along straight paths `x_t = (1 − t) x0 + t x1`.
pub fn theorem3_check<R: Rng + ?Sized>(
    field: &AffineField,
    coupling: &Coupling,
    path_samples: usize,
    rng: &mut R,
) -> Result<Theorem3Report> {
    let dim = field.dim();
    if let Coupling::Translation(m) = coupling {
        if m.len() != dim {
            return Err(Error::arg("translation dimension differs from the field"));
        }
    }
    if path_samples < 2 {
        return Err(Error::arg("need at least two path samples"));
    }
    let quad = GaussLegendre::unit_interval(64);
    let (mut lhs, mut rhs, mut diff) = (Welford::default(), Welford::default(), Welford::default());
    for _ in 0..path_samples {
        let x0 = Array1::from_shape_fn(dim, |_| normal(rng));
        let x1 = match coupling {
            Coupling::Independent => Array1::from_shape_fn(dim, |_| normal(rng)),
            Coupling::Translation(m) => &x0 + m,
        };
        let target = &x1 - &x0;
        let mut integral_sq = 0.0;
        let mut integral = Array1::<f64>::zeros(dim);
        for (&t, &w) in quad.nodes.iter().zip(&quad.weights) {
            let x_t = &x0 * (1.0 - t) + &x1 * t;
            let r = &target - &field.eval(&x_t, t);
            integral_sq += w * r.dot(&r);
            integral.scaled_add(w, &r);
        }
        let sq_integral = integral.dot(&integral);
        lhs.push(integral_sq);
        rhs.push(sq_integral);
        diff.push(integral_sq - sq_integral);
    }
    let se = diff.std_err();
    Ok(Theorem3Report {
        lhs: lhs.mean,
        rhs: rhs.mean,
        se,
        holds: lhs.mean >= rhs.mean - 3.0 * se,
    })
}

/// Gauss–Legendre rule.
#[derive(Clone, Debug)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    /// `n`-point rule on `[-1, 1]`, roots found by Newton iteration.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n.div_ceil(2) {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        GaussLegendre { nodes, weights }
    }

    /// Rule mapped to `[0, 1]`; weights sum to 1.
    pub fn unit_interval(n: usize) -> Self {
        let base = GaussLegendre::new(n);
        GaussLegendre {
            nodes: base.nodes.iter().map(|x| 0.5 * (x + 1.0)).collect(),
            weights: base.weights.iter().map(|w| 0.5 * w).collect(),
        }
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Smallest achievable per-coordinate MSE of any estimator of `x0` from
/// `x_t` alone, for `x0 ~ N(0, s² I)`, averaged over the training time
/// distribution of `spec`.
pub fn posterior_variance_floor(spec: &ProcessSpec, s: f64) -> Result<f64> {
    let s2 = s * s;
    match spec.kind {
        ProcessKind::Ve => {
            let mut total = 0.0;
            for t in 1..=spec.steps {
                let sig2 = spec.sigma(t)?.powi(2);
                total += s2 * sig2 / (s2 + sig2);
            }
            Ok(total / f64::from(spec.steps))
        }
        ProcessKind::Rf => {
            // x_t = (1−t) x0 + t z: Var[x0 | x_t] = s² t² / ((1−t)² s² + t²).
            let quad = GaussLegendre::unit_interval(64);
            Ok(quad.integrate(|t| s2 * t * t / ((1.0 - t).powi(2) * s2 + t * t)))
        }
        ProcessKind::Pfgmpp => Err(Error::Unsupported(
            "no closed-form posterior floor for pfgmpp".into(),
        )),
    }
}

/// Kolmogorov–Smirnov statistic of `samples` against a CDF.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Tabulated CDF of the PFGM++ radius density
/// `p(R) ∝ R^(N−1) / (R² + r²)^((N+D)/2)`, built by trapezoidal quadrature on
/// a grid in `u = R / r`. Independent of the Beta construction used by the
/// sampler.
#[derive(Clone, Debug)]
pub struct RadiusCdf {
    /// Grid in units of `r`.
    pub grid: Vec<f64>,
    pub cdf: Vec<f64>,
    pub alignment: f64,
}

impl RadiusCdf {
    pub fn new(sigma: f64, data_dim: usize, aug_dim: u32, points: usize) -> Self {
        let n = data_dim as f64;
        let d = f64::from(aug_dim);
        let log_density = |u: f64| (n - 1.0) * u.ln() - 0.5 * (n + d) * (1.0 + u * u).ln();
        // The density decays like u^(-D-1); find where it is negligible
        // relative to the mode `u* = √((N−1)/(D+1))`.
        let mode = ((n - 1.0) / (d + 1.0)).sqrt().max(1e-3);
        let peak = log_density(mode.max(1e-300));
        let mut upper = mode * 2.0 + 1e-3;
        while log_density(upper) - peak > -60.0 {
            upper *= 1.5;
        }
        // Linear near zero and geometric beyond the bulk width `w`, so both the
        // mass near the mode and a long polynomial tail are resolved.
        let w = 0.1 * (n / d).sqrt();
        let alpha = (upper / w).ln_1p();
        let grid: Vec<f64> = (0..points)
            .map(|i| w * (alpha * i as f64 / (points - 1) as f64).exp_m1())
            .collect();
        let dens: Vec<f64> = grid
            .iter()
            .map(|&u| if u == 0.0 { if n == 1.0 { 1.0 } else { 0.0 } } else { (log_density(u) - peak).exp() })
            .collect();
        let mut cdf = vec![0.0; points];
        for i in 1..points {
            cdf[i] = cdf[i - 1] + 0.5 * (dens[i] + dens[i - 1]) * (grid[i] - grid[i - 1]);
        }
        let total = cdf[points - 1];
        for c in &mut cdf {
            *c /= total;
        }
        RadiusCdf {
            grid,
            cdf,
            alignment: sigma * d.sqrt(),
        }
    }

    /// CDF at radius `R`, linearly interpolated.
    pub fn eval(&self, radius: f64) -> f64 {
        let u = radius / self.alignment;
        if u <= 0.0 {
            return 0.0;
        }
        let last = self.grid.len() - 1;
        if u >= self.grid[last] {
            return 1.0;
        }
        let i = self.grid.partition_point(|&g| g <= u) - 1;
        let w = (u - self.grid[i]) / (self.grid[i + 1] - self.grid[i]);
        self.cdf[i] + w * (self.cdf[i + 1] - self.cdf[i])
    }

    /// Inverse CDF, in units of `R` (not `u`).
    pub fn quantile(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0);
        let i = self.cdf.partition_point(|&c| c < p).clamp(1, self.cdf.len() - 1);
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        let w = if c1 > c0 { (p - c0) / (c1 - c0) } else { 0.0 };
        self.alignment * (self.grid[i - 1] + w * (self.grid[i] - self.grid[i - 1]))
    }

    /// `E[R / r]` by trapezoidal integration of `1 − F`.
    pub fn mean_ratio(&self) -> f64 {
        // Tail beyond the grid is dropped; the grid is sized to make it negligible
        // for D ≥ 2. Heavy tails (D = 1) have no finite mean.
        (1..self.grid.len())
            .map(|i| {
                0.5 * ((1.0 - self.cdf[i]) + (1.0 - self.cdf[i - 1])) * (self.grid[i] - self.grid[i - 1])
            })
            .sum()
    }
}

/// Streaming mean and variance.
#[derive(Clone, Copy, Debug, Default)]
pub struct Welford {
    pub count: usize,
    pub mean: f64,
    m2: f64,
}

impl Welford {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        self.m2 / (self.count - 1) as f64
    }

    pub fn std_err(&self) -> f64 {
        (self.variance() / self.count as f64).sqrt()
    }
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}
