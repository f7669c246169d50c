//! Forward processes for the three supported ODE families.
//!
//! * **VE** diffusion: `x_t = x0 + σ_t ε` with the geometric schedule
//!   `σ_t = σ_min (σ_max/σ_min)^(t/T)` on integer steps `t ∈ {1..T}`.
//! * **Rectified flow**: the straight interpolation `z_t = (1-t) x0 + t z`,
//!   `t ∈ [0, 1]`.
//! * **PFGM++**: `x_t = x0 + R_t v_t`, with `R_t` drawn from the radial
//!   perturbation kernel at alignment `r_t = σ_t √D` and `v_t` uniform on the
//!   unit sphere in the data space.
//!
//! Each process also fixes the preconditioning pair `(a_t, b_t)` that mixes
//! the noisy input with the network output, and the prior used at sampling.

use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProcessKind {
    Ve,
    Rf,
    Pfgmpp,
}

impl ProcessKind {
    pub fn name(self) -> &'static str {
        match self {
            ProcessKind::Ve => "ve",
            ProcessKind::Rf => "rf",
            ProcessKind::Pfgmpp => "pfgmpp",
        }
    }
}

impl std::fmt::Display for ProcessKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ProcessKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ve" => Ok(ProcessKind::Ve),
            "rf" => Ok(ProcessKind::Rf),
            "pfgmpp" => Ok(ProcessKind::Pfgmpp),
            other => Err(Error::arg(format!(
                "unknown process `{other}` (expected ve, rf or pfgmpp)"
            ))),
        }
    }
}

/// A generative process together with its schedule parameters.
///
/// Fields that a process does not use are carried but ignored (RF ignores
/// the whole schedule; only PFGM++ reads `aug_dim` and `data_dim`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessSpec {
    pub kind: ProcessKind,
    /// Number of discrete time steps `T`.
    pub steps: u32,
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// PFGM++ augmentation dimension `D`.
    pub aug_dim: u32,
    /// PFGM++ data dimension `N`.
    pub data_dim: usize,
}

pub const DEFAULT_STEPS: u32 = 1000;
pub const DEFAULT_SIGMA_MIN: f64 = 0.01;
pub const DEFAULT_SIGMA_MAX: f64 = 50.0;
pub const DEFAULT_AUG_DIM: u32 = 2048;

impl ProcessSpec {
    pub fn ve(steps: u32, sigma_min: f64, sigma_max: f64) -> Result<Self> {
        let spec = ProcessSpec {
            kind: ProcessKind::Ve,
            steps,
            sigma_min,
            sigma_max,
            aug_dim: 0,
            data_dim: 0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn rf() -> Self {
        ProcessSpec {
            kind: ProcessKind::Rf,
            steps: 0,
            sigma_min: 0.0,
            sigma_max: 0.0,
            aug_dim: 0,
            data_dim: 0,
        }
    }

    pub fn pfgmpp(
        steps: u32,
        sigma_min: f64,
        sigma_max: f64,
        aug_dim: u32,
        data_dim: usize,
    ) -> Result<Self> {
        let spec = ProcessSpec {
            kind: ProcessKind::Pfgmpp,
            steps,
            sigma_min,
            sigma_max,
            aug_dim,
            data_dim,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            ProcessKind::Rf => Ok(()),
            ProcessKind::Ve | ProcessKind::Pfgmpp => {
                if self.steps < 1 {
                    return Err(Error::arg("T must be at least 1"));
                }
                if !(self.sigma_min > 0.0 && self.sigma_min.is_finite()) {
                    return Err(Error::arg("sigma_min must be positive and finite"));
                }
                if !(self.sigma_max > self.sigma_min && self.sigma_max.is_finite()) {
                    return Err(Error::arg("sigma_max must exceed sigma_min"));
                }
                if self.kind == ProcessKind::Pfgmpp {
                    if self.aug_dim < 1 {
                        return Err(Error::arg("D must be at least 1 for pfgmpp"));
                    }
                    if self.data_dim < 1 {
                        return Err(Error::arg("N must be at least 1 for pfgmpp"));
                    }
                }
                Ok(())
            }
        }
    }

    fn require_scheduled(&self) -> Result<()> {
        if self.kind == ProcessKind::Rf {
            return Err(Error::Unsupported(
                "rectified flow has no noise schedule".into(),
            ));
        }
        Ok(())
    }

    /// Noise level `σ_min (σ_max/σ_min)^(t/T)` for `0 ≤ t ≤ T`.
    pub fn sigma(&self, t: u32) -> Result<f64> {
        self.require_scheduled()?;
        if t > self.steps {
            return Err(Error::Domain(format!(
                "time step {t} outside [0, {}]",
                self.steps
            )));
        }
        if t == 0 {
            return Ok(self.sigma_min);
        }
        if t == self.steps {
            return Ok(self.sigma_max);
        }
        let ratio = self.sigma_max / self.sigma_min;
        Ok(self.sigma_min * ratio.powf(f64::from(t) / f64::from(self.steps)))
    }

    /// Continuous-time version of the schedule, `t ∈ [0, T]`.
    pub fn sigma_continuous(&self, t: f64) -> f64 {
        let ratio = self.sigma_max / self.sigma_min;
        self.sigma_min * ratio.powf(t / f64::from(self.steps))
    }

    /// The final time at which sampling evaluates the model.
    pub fn terminal_time(&self) -> Time {
        match self.kind {
            ProcessKind::Rf => Time::Continuous(1.0),
            _ => Time::Discrete(self.steps),
        }
    }

    /// Time in `[0, 1]` as seen by the network: `t/T` for discrete
    /// processes, `t` itself for rectified flow.
    pub fn scaled_time(&self, t: Time) -> f64 {
        match t {
            Time::Discrete(step) => f64::from(step) / f64::from(self.steps.max(1)),
            Time::Continuous(t) => t,
        }
    }

    fn check_time(&self, t: Time) -> Result<()> {
        match (self.kind, t) {
            (ProcessKind::Rf, Time::Continuous(t)) if (0.0..=1.0).contains(&t) => Ok(()),
            (ProcessKind::Ve | ProcessKind::Pfgmpp, Time::Discrete(s)) if s <= self.steps => {
                Ok(())
            }
            (kind, t) => Err(Error::Domain(format!("time {t:?} is invalid for {kind}"))),
        }
    }

    /// Training-time draw: uniform on `{1..T}`, or uniform on `[0, 1)` for RF.
    pub fn sample_time<R: Rng + ?Sized>(&self, rng: &mut R) -> Time {
        match self.kind {
            ProcessKind::Rf => Time::Continuous(rng.random::<f64>()),
            _ => Time::Discrete(rng.random_range(1..=self.steps)),
        }
    }

    /// Mixing coefficients `(a_t, b_t)`. PFGM++ needs the drawn radius `R_t`.
    pub fn precondition(&self, t: Time, radius: Option<f64>) -> Result<Preconditioning> {
        self.check_time(t)?;
        match self.kind {
            ProcessKind::Rf => Ok(Preconditioning { a: 0.0, b: 1.0 }),
            ProcessKind::Ve => {
                let Time::Discrete(step) = t else {
                    unreachable!("checked above")
                };
                Ok(Preconditioning::from_skip(self.sigma_min / self.sigma(step)?))
            }
            ProcessKind::Pfgmpp => {
                let radius = radius
                    .ok_or_else(|| Error::arg("pfgmpp preconditioning requires the radius R_t"))?;
                if !(radius > 0.0 && radius.is_finite()) {
                    return Err(Error::arg(format!("radius must be positive, got {radius}")));
                }
                Ok(Preconditioning::from_skip(self.sigma_min / radius))
            }
        }
    }

    /// Preconditioning for an already perturbed state.
    pub fn precondition_state(&self, state: &PerturbedState) -> Result<Preconditioning> {
        let radius = match &state.aux {
            Aux::Pfgmpp { radius, .. } => Some(*radius),
            _ => None,
        };
        self.precondition(state.t, radius)
    }

    /// Run the forward process from `x0` to time `t`, recording the noise drawn.
    pub fn perturb<R: Rng + ?Sized>(
        &self,
        x0: &[f64],
        t: Time,
        rng: &mut R,
    ) -> Result<PerturbedState> {
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("x0 contains non-finite values"));
        }
        self.check_time(t)?;
        match self.kind {
            ProcessKind::Ve => {
                let Time::Discrete(step) = t else {
                    unreachable!()
                };
                let sigma = self.sigma(step)?;
                let epsilon = standard_normal_vec(x0.len(), rng);
                Ok(PerturbedState {
                    x_t: axpy(x0, sigma, &epsilon),
                    t,
                    aux: Aux::Ve { epsilon },
                })
            }
            ProcessKind::Rf => {
                let Time::Continuous(tau) = t else {
                    unreachable!()
                };
                let z = standard_normal_vec(x0.len(), rng);
                Ok(PerturbedState {
                    x_t: interpolate(x0, &z, tau),
                    t,
                    aux: Aux::Rf { z },
                })
            }
            ProcessKind::Pfgmpp => {
                if x0.len() != self.data_dim {
                    return Err(Error::arg(format!(
                        "pfgmpp configured for N={} but x0 has {} entries",
                        self.data_dim,
                        x0.len()
                    )));
                }
                let Time::Discrete(step) = t else {
                    unreachable!()
                };
                let sigma = self.sigma(step)?;
                let radius = sample_pfgm_radius(sigma, self.data_dim, self.aug_dim, rng)?;
                let direction = unit_direction(self.data_dim, rng);
                Ok(PerturbedState {
                    x_t: axpy(x0, radius, &direction),
                    t,
                    aux: Aux::Pfgmpp { radius, direction },
                })
            }
        }
    }

    /// Draw a starting point `x_T` for sampling.
    pub fn sample_prior<R: Rng + ?Sized>(&self, dim: usize, rng: &mut R) -> Result<Vec<f64>> {
        if dim < 1 {
            return Err(Error::arg("prior dimension must be at least 1"));
        }
        match self.kind {
            ProcessKind::Ve => Ok(standard_normal_vec(dim, rng)
                .into_iter()
                .map(|g| self.sigma_max * g)
                .collect()),
            ProcessKind::Rf => Ok(standard_normal_vec(dim, rng)),
            ProcessKind::Pfgmpp => {
                let radius = sample_pfgm_radius(self.sigma_max, dim, self.aug_dim, rng)?;
                let direction = unit_direction(dim, rng);
                Ok(direction.into_iter().map(|v| radius * v).collect())
            }
        }
    }
}

/// A process time: an integer step for VE/PFGM++, a real in `[0, 1]` for RF.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Time {
    Discrete(u32),
    Continuous(f64),
}

/// Coefficients of `g = a x_t + b G`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Preconditioning {
    pub a: f64,
    pub b: f64,
}

impl Preconditioning {
    fn from_skip(a: f64) -> Self {
        Preconditioning { a, b: 1.0 - a }
    }
}

/// Noise drawn by the forward process, kept so a training step can be replayed.
#[derive(Clone, Debug, PartialEq)]
pub enum Aux {
    Ve { epsilon: Vec<f64> },
    Rf { z: Vec<f64> },
    Pfgmpp { radius: f64, direction: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerturbedState {
    pub x_t: Vec<f64>,
    pub t: Time,
    pub aux: Aux,
}

/// Draw a PFGM++ perturbation radius.
///
/// The radius density is `p(R) ∝ R^(N-1) / (R² + r²)^((N+D)/2)` with
/// `r = σ √D`. Substituting `β = R²/(R² + r²)` turns it into a
/// `Beta(N/2, D/2)` variable, so `R = r √(β / (1 - β))`.
pub fn sample_pfgm_radius<R: Rng + ?Sized>(
    sigma: f64,
    data_dim: usize,
    aug_dim: u32,
    rng: &mut R,
) -> Result<f64> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::arg(format!("sigma must be positive, got {sigma}")));
    }
    if data_dim < 1 || aug_dim < 1 {
        return Err(Error::arg("N and D must both be at least 1"));
    }
    let alignment = sigma * f64::from(aug_dim).sqrt();
    let beta = Beta::new(data_dim as f64 / 2.0, f64::from(aug_dim) / 2.0)
        .map_err(|e| Error::arg(format!("beta parameters: {e}")))?;
    loop {
        let b: f64 = beta.sample(rng);
        // b == 0 gives a zero radius, which has no direction; b == 1 diverges.
        if b > 0.0 && b < 1.0 {
            return Ok(alignment * (b / (1.0 - b)).sqrt());
        }
    }
}

pub fn standard_normal_vec<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

/// Uniform direction on the unit sphere in `dim` dimensions.
pub fn unit_direction<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let u = standard_normal_vec(dim, rng);
        let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            return u.into_iter().map(|v| v / norm).collect();
        }
    }
}

/// `(1 - t) x0 + t z`, exact at both endpoints.
pub fn interpolate(x0: &[f64], z: &[f64], t: f64) -> Vec<f64> {
    if t == 0.0 {
        return x0.to_vec();
    }
    if t == 1.0 {
        return z.to_vec();
    }
    x0.iter()
        .zip(z)
        .map(|(x, z)| (1.0 - t) * x + t * z)
        .collect()
}

fn axpy(x: &[f64], alpha: f64, y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(x, y)| x + alpha * y).collect()
}
