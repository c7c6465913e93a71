//! Tumor/immune/drug dynamics and a fixed-step RK4 integrator.
//!
//! The model tracks four quantities: normal cells `N`, tumor cells `T`,
//! immune cells `I` and drug concentration in the bloodstream `B`:
//!
//! ```text
//! dN/dt = r2 N (1 - b2 N) - c4 T N - a3 (1 - e^-B) N
//! dT/dt = r1 T (1 - b1 T) - c2 I T - c3 T N - a2 (1 - e^-B) T
//! dI/dt = s + rho I T / (alpha + T) - c1 I T - d1 I - a1 (1 - e^-B) I
//! dB/dt = -d2 B + u
//! ```
//!
//! Process noise is multiplicative Gaussian on each derivative component.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hidden physiological state `[N, T, I, B]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentState {
    pub normal: f64,
    pub tumor: f64,
    pub immune: f64,
    pub drug: f64,
}

impl LatentState {
    pub const DIM: usize = 4;

    pub fn new(normal: f64, tumor: f64, immune: f64, drug: f64) -> Self {
        Self {
            normal,
            tumor,
            immune,
            drug,
        }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.normal, self.tumor, self.immune, self.drug]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Time derivative of a [`LatentState`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateDerivative {
    pub d_normal: f64,
    pub d_tumor: f64,
    pub d_immune: f64,
    pub d_drug: f64,
}

impl StateDerivative {
    pub fn to_array(self) -> [f64; 4] {
        [self.d_normal, self.d_tumor, self.d_immune, self.d_drug]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self {
            d_normal: a[0],
            d_tumor: a[1],
            d_immune: a[2],
            d_drug: a[3],
        }
    }
}

/// Rate constants of the cancer model plus the two noise levels.
///
/// Field names follow the conventional symbols of the model so that
/// configuration files read like the equations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OdeParams {
    /// Tumor growth rate.
    pub r1: f64,
    /// Normal-cell growth rate.
    pub r2: f64,
    /// Inverse tumor carrying capacity.
    pub b1: f64,
    /// Inverse normal-cell carrying capacity.
    pub b2: f64,
    /// Immune inactivation by tumor.
    pub c1: f64,
    /// Tumor kill by immune cells.
    pub c2: f64,
    /// Tumor inhibition by normal cells.
    pub c3: f64,
    /// Normal-cell inhibition by tumor.
    pub c4: f64,
    /// Drug kill rate on immune cells.
    pub a1: f64,
    /// Drug kill rate on tumor cells.
    pub a2: f64,
    /// Drug kill rate on normal cells.
    pub a3: f64,
    /// Constant immune source rate.
    pub s: f64,
    /// Immune recruitment rate.
    pub rho: f64,
    /// Immune recruitment half-saturation.
    pub alpha: f64,
    /// Immune death rate.
    pub d1: f64,
    /// Drug decay rate.
    pub d2: f64,
    /// Multiplicative uniform observation-noise level.
    pub alpha_obs: f64,
    /// Multiplicative Gaussian state-noise level.
    pub alpha_state: f64,
}

impl OdeParams {
    /// Parameter set used when no configuration file is given.
    pub fn bundled() -> Self {
        crate::config::ExperimentConfig::bundled().ode
    }

    /// All rates zero except the ones required to be positive.
    pub fn inert() -> Self {
        Self {
            r1: 0.0,
            r2: 0.0,
            b1: 0.0,
            b2: 0.0,
            c1: 0.0,
            c2: 0.0,
            c3: 0.0,
            c4: 0.0,
            a1: 0.0,
            a2: 0.0,
            a3: 0.0,
            s: 0.0,
            rho: 0.0,
            alpha: 1.0,
            d1: 0.0,
            d2: 1.0,
            alpha_obs: 0.0,
            alpha_state: 0.0,
        }
    }

    /// Noise-free copy.
    pub fn without_noise(&self) -> Self {
        Self {
            alpha_obs: 0.0,
            alpha_state: 0.0,
            ..self.clone()
        }
    }

    /// Parses a flat `key = value` file; unknown or missing keys are errors.
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let params: OdeParams = toml::from_str(s)?;
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("r1", self.r1),
            ("r2", self.r2),
            ("b1", self.b1),
            ("b2", self.b2),
            ("c1", self.c1),
            ("c2", self.c2),
            ("c3", self.c3),
            ("c4", self.c4),
            ("a1", self.a1),
            ("a2", self.a2),
            ("a3", self.a3),
            ("s", self.s),
            ("rho", self.rho),
            ("d1", self.d1),
            ("alpha_obs", self.alpha_obs),
            ("alpha_state", self.alpha_state),
        ];
        for (name, v) in rates {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        for (name, v) in [("alpha", self.alpha), ("d2", self.d2)] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::Config(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Right-hand side of the model for a constant dose.
pub fn derivative(state: &LatentState, dose: f64, p: &OdeParams) -> Result<StateDerivative> {
    if !state.is_finite() || !dose.is_finite() {
        return Err(Error::InvalidInput(format!(
            "non-finite state {state:?} or dose {dose}"
        )));
    }
    let LatentState {
        normal: n,
        tumor: t,
        immune: i,
        drug: b,
    } = *state;
    let kill = 1.0 - (-b).exp();
    Ok(StateDerivative {
        d_normal: p.r2 * n * (1.0 - p.b2 * n) - p.c4 * t * n - p.a3 * kill * n,
        d_tumor: p.r1 * t * (1.0 - p.b1 * t) - p.c2 * i * t - p.c3 * t * n - p.a2 * kill * t,
        d_immune: p.s + p.rho * i * t / (p.alpha + t) - p.c1 * i * t - p.d1 * i - p.a1 * kill * i,
        d_drug: -p.d2 * b + dose,
    })
}

fn draw_factors<R: Rng + ?Sized>(rng: &mut R, alpha_state: f64) -> Result<[f64; 4]> {
    let normal = Normal::new(0.0, alpha_state)
        .map_err(|e| Error::InvalidInput(format!("alpha_state {alpha_state}: {e}")))?;
    Ok(std::array::from_fn(|_| 1.0 + normal.sample(rng)))
}

/// Applies `d_i * (1 + eps_i)` with `eps_i ~ N(0, alpha_state)`.
///
/// With `alpha_state == 0` the input is returned untouched and no random
/// numbers are consumed.
pub fn perturb_derivative<R: Rng + ?Sized>(
    d: StateDerivative,
    rng: &mut R,
    alpha_state: f64,
) -> Result<StateDerivative> {
    if !alpha_state.is_finite() || alpha_state < 0.0 {
        return Err(Error::InvalidInput(format!("alpha_state must be >= 0, got {alpha_state}")));
    }
    if alpha_state == 0.0 {
        return Ok(d);
    }
    let f = draw_factors(rng, alpha_state)?;
    let a = d.to_array();
    Ok(StateDerivative::from_array(std::array::from_fn(|k| a[k] * f[k])))
}

/// Where the state noise is drawn inside one integration step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// Fresh noise for every derivative evaluation.
    #[default]
    PerEvaluation,
    /// One draw per call, shared by every evaluation in the step.
    PerStep,
}

/// Fixed-step classical RK4 with zero-order-hold dosing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Integrator {
    pub dt: f64,
    pub substeps: usize,
    pub noise_mode: NoiseMode,
}

impl Integrator {
    pub fn new(dt: f64, substeps: usize) -> Self {
        Self {
            dt,
            substeps,
            noise_mode: NoiseMode::PerEvaluation,
        }
    }

    /// Advances `state` by `dt`. Noise is applied only when `rng` is given.
    pub fn step<R: Rng + ?Sized>(
        &self,
        state: &LatentState,
        dose: f64,
        params: &OdeParams,
        mut rng: Option<&mut R>,
    ) -> Result<LatentState> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidInput(format!("dt must be > 0, got {}", self.dt)));
        }
        if self.substeps == 0 {
            return Err(Error::InvalidInput("substeps must be >= 1".into()));
        }
        if !(dose >= 0.0 && dose.is_finite()) {
            return Err(Error::InvalidInput(format!("dose must be >= 0, got {dose}")));
        }
        let noisy = rng.is_some() && params.alpha_state > 0.0;
        let shared = match (&mut rng, self.noise_mode) {
            (Some(r), NoiseMode::PerStep) if noisy => Some(draw_factors(*r, params.alpha_state)?),
            _ => None,
        };

        let mut eval = |x: [f64; 4], substep: usize| -> Result<[f64; 4]> {
            check_finite(&x, substep)?;
            let mut d = derivative(&LatentState::from_array(x), dose, params)?.to_array();
            if noisy {
                let f = match shared {
                    Some(f) => f,
                    None => draw_factors(
                        rng.as_deref_mut().expect("noisy implies rng"),
                        params.alpha_state,
                    )?,
                };
                d = std::array::from_fn(|k| d[k] * f[k]);
            }
            check_finite(&d, substep)?;
            Ok(d)
        };

        let h = self.dt / self.substeps as f64;
        let mut x = state.to_array();
        for sub in 0..self.substeps {
            let k1 = eval(x, sub)?;
            let k2 = eval(axpy(&x, 0.5 * h, &k1), sub)?;
            let k3 = eval(axpy(&x, 0.5 * h, &k2), sub)?;
            let k4 = eval(axpy(&x, h, &k3), sub)?;
            for c in 0..4 {
                let next = x[c] + h / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
                if !next.is_finite() {
                    return Err(Error::Divergence {
                        component: c,
                        value: next,
                        substep: sub,
                    });
                }
                x[c] = next.max(0.0);
            }
        }
        Ok(LatentState::from_array(x))
    }
}

fn check_finite(x: &[f64; 4], substep: usize) -> Result<()> {
    match x.iter().position(|v| !v.is_finite()) {
        Some(component) => Err(Error::Divergence {
            component,
            value: x[component],
            substep,
        }),
        None => Ok(()),
    }
}

fn axpy(x: &[f64; 4], a: f64, y: &[f64; 4]) -> [f64; 4] {
    std::array::from_fn(|k| x[k] + a * y[k])
}

/// One RK4 step of length `dt` split into `substeps` sub-intervals, with
/// per-evaluation state noise when `rng` is supplied.
pub fn integrate_step<R: Rng + ?Sized>(
    state: &LatentState,
    dose: f64,
    dt: f64,
    substeps: usize,
    params: &OdeParams,
    rng: Option<&mut R>,
) -> Result<LatentState> {
    Integrator::new(dt, substeps).step(state, dose, params, rng)
}
