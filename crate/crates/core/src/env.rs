//! Episodic chemotherapy environment with noisy, possibly partial observations.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::{Integrator, LatentState, NoiseMode, OdeParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observability {
    /// Agent sees `[N, T, I, B]`.
    Full,
    /// Normal cells hidden; agent sees `[T, I, B]`.
    #[serde(alias = "pomdp")]
    Partial,
}

impl Observability {
    pub fn obs_dim(self) -> usize {
        match self {
            Observability::Full => 4,
            Observability::Partial => 3,
        }
    }

    /// Column names for the observed components, in emission order.
    pub fn obs_labels(self) -> &'static [&'static str] {
        match self {
            Observability::Full => &["N", "T", "I", "B"],
            Observability::Partial => &["T", "I", "B"],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Observability::Full => "full",
            Observability::Partial => "pomdp",
        }
    }
}

impl std::str::FromStr for Observability {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Observability::Full),
            "partial" | "pomdp" => Ok(Observability::Partial),
            other => Err(Error::Config(format!("unknown observability '{other}'"))),
        }
    }
}

/// How the dose enters the reward penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DosePenalty {
    /// `dose / u_max`.
    #[default]
    Normalized,
    /// The raw dose.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    /// Steps per episode.
    pub horizon: usize,
    /// Model time per step.
    pub dt: f64,
    /// RK4 sub-intervals per step.
    pub substeps: usize,
    #[serde(default)]
    pub noise_mode: NoiseMode,
    pub u_max: f64,
    pub initial_state: LatentState,
    pub observability: Observability,
    pub terminal_penalty: f64,
    pub safety_fraction: f64,
    pub seed: u64,
    /// Evaluate the reward on the post-transition populations.
    #[serde(default = "default_true")]
    pub reward_on_next_state: bool,
    #[serde(default)]
    pub dose_penalty: DosePenalty,
}

fn default_true() -> bool {
    true
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.horizon == 0 {
            return fail("horizon must be >= 1".into());
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return fail(format!("dt must be > 0, got {}", self.dt));
        }
        if self.substeps == 0 {
            return fail("substeps must be >= 1".into());
        }
        if !(self.u_max > 0.0 && self.u_max.is_finite()) {
            return fail(format!("u_max must be > 0, got {}", self.u_max));
        }
        let s = &self.initial_state;
        if !s.is_finite() || s.to_array().iter().any(|&v| v < 0.0) {
            return fail(format!("initial state must be finite and >= 0: {s:?}"));
        }
        if s.normal <= 0.0 || s.tumor <= 0.0 {
            return fail("initial N and T must be > 0 (reward denominators)".into());
        }
        if !(self.terminal_penalty <= 0.0 && self.terminal_penalty.is_finite()) {
            return fail(format!("terminal_penalty must be <= 0, got {}", self.terminal_penalty));
        }
        if !(self.safety_fraction > 0.0 && self.safety_fraction < 1.0) {
            return fail(format!("safety_fraction must be in (0,1), got {}", self.safety_fraction));
        }
        Ok(())
    }

    pub fn integrator(&self) -> Integrator {
        Integrator {
            dt: self.dt,
            substeps: self.substeps,
            noise_mode: self.noise_mode,
        }
    }

    pub fn normalized_dose(&self, dose: f64) -> f64 {
        match self.dose_penalty {
            DosePenalty::Normalized => dose / self.u_max,
            DosePenalty::Raw => dose,
        }
    }
}

/// What the agent sees at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation(pub Vec<f64>);

impl Observation {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn zeros(dim: usize) -> Self {
        Observation(vec![0.0; dim])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    /// Safety threshold crossed.
    pub terminated: bool,
    /// Horizon reached.
    pub truncated: bool,
    /// True post-transition state. For logging only.
    pub info: LatentState,
}

impl StepResult {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

/// Visible components of `state`, before noise.
pub fn visible(state: &LatentState, mode: Observability) -> Vec<f64> {
    match mode {
        Observability::Full => state.to_array().to_vec(),
        Observability::Partial => vec![state.tumor, state.immune, state.drug],
    }
}

/// `o = g(s) + alpha_obs * g(s) * xi` with `xi_i ~ U(-0.5, 0.5)`.
pub fn observe<R: Rng + ?Sized>(
    state: &LatentState,
    mode: Observability,
    alpha_obs: f64,
    rng: &mut R,
) -> Observation {
    let mut g = visible(state, mode);
    if alpha_obs > 0.0 {
        for v in g.iter_mut() {
            let xi: f64 = rng.random_range(-0.5..0.5);
            *v += alpha_obs * *v * xi;
        }
    }
    Observation(g)
}

/// Discounted sum `sum_t gamma^t r_t`.
pub fn episode_return(rewards: &[f64], gamma: f64) -> f64 {
    let mut discount = 1.0;
    let mut total = 0.0;
    for r in rewards {
        total += discount * r;
        discount *= gamma;
    }
    total
}

#[derive(Debug, Clone)]
pub struct ChemoEnv {
    config: EnvConfig,
    params: OdeParams,
    integrator: Integrator,
    state: LatentState,
    t: usize,
    done: bool,
    rng: ChaCha8Rng,
}

impl ChemoEnv {
    pub fn new(config: EnvConfig, params: OdeParams) -> Result<Self> {
        config.validate()?;
        params.validate()?;
        let seed = config.seed;
        Ok(Self {
            integrator: config.integrator(),
            state: config.initial_state,
            t: 0,
            done: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
            config,
            params,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn params(&self) -> &OdeParams {
        &self.params
    }

    pub fn obs_dim(&self) -> usize {
        self.config.observability.obs_dim()
    }

    pub fn latent(&self) -> &LatentState {
        &self.state
    }

    pub fn step_count(&self) -> usize {
        self.t
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn reset(&mut self, seed: u64) -> Observation {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.state = self.config.initial_state;
        self.t = 0;
        self.done = false;
        self.emit()
    }

    fn emit(&mut self) -> Observation {
        observe(
            &self.state,
            self.config.observability,
            self.params.alpha_obs,
            &mut self.rng,
        )
    }

    pub fn step(&mut self, action: f64) -> Result<StepResult> {
        if self.done {
            return Err(Error::Usage("step called on a finished episode; call reset".into()));
        }
        if action.is_nan() {
            return Err(Error::InvalidInput("action is NaN".into()));
        }
        let cfg = &self.config;
        let dose = action.clamp(0.0, cfg.u_max);
        let prev = self.state;
        let rng: Option<&mut ChaCha8Rng> = Some(&mut self.rng);
        let next = self.integrator.step(&prev, dose, &self.params, rng)?;

        let scored = if cfg.reward_on_next_state { &next } else { &prev };
        let init = &cfg.initial_state;
        let mut reward =
            scored.normal / init.normal - scored.tumor / init.tumor - cfg.normalized_dose(dose);

        let terminated = next.normal < cfg.safety_fraction * init.normal;
        if terminated {
            reward += cfg.terminal_penalty;
        }
        self.t += 1;
        let truncated = !terminated && self.t >= cfg.horizon;
        self.state = next;
        self.done = terminated || truncated;

        Ok(StepResult {
            observation: self.emit(),
            reward,
            terminated,
            truncated,
            info: next,
        })
    }
}

/// Per-step CSV log with columns
/// `episode,t,N,T,I,B,obs_*,action,reward,terminated,truncated`.
pub struct TrajectoryWriter<W: Write> {
    out: csv::Writer<W>,
    obs_dim: usize,
}

impl<W: Write> TrajectoryWriter<W> {
    pub fn new(inner: W, mode: Observability) -> Result<Self> {
        let mut out = csv::Writer::from_writer(inner);
        let mut header: Vec<String> = ["episode", "t", "N", "T", "I", "B"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend(mode.obs_labels().iter().map(|l| format!("obs_{l}")));
        header.extend(
            ["action", "reward", "terminated", "truncated"]
                .iter()
                .map(|s| s.to_string()),
        );
        out.write_record(&header)?;
        Ok(Self {
            out,
            obs_dim: mode.obs_dim(),
        })
    }

    /// Logs one transition; `obs` is the observation the action was chosen on.
    pub fn record(
        &mut self,
        episode: usize,
        t: usize,
        obs: &Observation,
        action: f64,
        result: &StepResult,
    ) -> Result<()> {
        if obs.len() != self.obs_dim {
            return Err(Error::Shape(format!(
                "observation has {} entries, writer expects {}",
                obs.len(),
                self.obs_dim
            )));
        }
        let s = result.info;
        let mut row = vec![episode.to_string(), t.to_string()];
        row.extend(s.to_array().iter().map(|v| v.to_string()));
        row.extend(obs.values().iter().map(|v| v.to_string()));
        row.push(action.to_string());
        row.push(result.reward.to_string());
        row.push(u8::from(result.terminated).to_string());
        row.push(u8::from(result.truncated).to_string());
        self.out.write_record(&row)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.out.flush()?;
        self.out
            .into_inner()
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
    }
}
