//! Layouts of the actor and critic networks.
//!
//! A layout records where each layer lives inside a [`ParamSet`]; online and
//! target networks share one layout and differ only in their parameter sets.

use rand::Rng;

use crate::error::Result;
use crate::nn::{Activation, Bound, Dense, Graph, Lstm, ParamSet, Var};

/// Two ReLU layers followed by a linear scalar output.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpHead {
    layers: Vec<Dense>,
}

impl MlpHead {
    pub fn init<R: Rng + ?Sized>(
        params: &mut ParamSet,
        prefix: &str,
        inputs: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let l1 = Dense::init(params, &format!("{prefix}.fc1"), inputs, hidden, Activation::Relu, rng)?;
        let l2 = Dense::init(params, &format!("{prefix}.fc2"), hidden, hidden, Activation::Relu, rng)?;
        let out = Dense::init(params, &format!("{prefix}.out"), hidden, 1, Activation::Linear, rng)?;
        Ok(Self {
            layers: vec![l1, l2, out],
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let mut h = x;
        for layer in &self.layers {
            h = layer.forward(g, p, h)?;
        }
        Ok(h)
    }

    pub fn output_layer(&self) -> &Dense {
        self.layers.last().expect("head has layers")
    }
}

/// Maps a pre-activation to a dose in `[0, u_max]`.
pub(crate) fn squash(g: &mut Graph, z: Var, u_max: f64) -> Var {
    let s = g.sigmoid(z);
    g.scale(s, u_max)
}

/// Memoryless deterministic actor: observation -> dose.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorLayout {
    pub head: MlpHead,
}

impl ActorLayout {
    pub fn init<R: Rng + ?Sized>(obs_dim: usize, hidden: usize, rng: &mut R) -> Result<(Self, ParamSet)> {
        let mut p = ParamSet::new();
        let head = MlpHead::init(&mut p, "pi", obs_dim, hidden, rng)?;
        Ok((Self { head }, p))
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, obs: Var, u_max: f64) -> Result<Var> {
        let z = self.head.forward(g, p, obs)?;
        Ok(squash(g, z, u_max))
    }
}

/// Two independent Q networks over `[obs, action / u_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwinCriticLayout {
    pub q1: MlpHead,
    pub q2: MlpHead,
}

impl TwinCriticLayout {
    pub fn init<R: Rng + ?Sized>(obs_dim: usize, hidden: usize, rng: &mut R) -> Result<(Self, ParamSet)> {
        let mut p = ParamSet::new();
        let q1 = MlpHead::init(&mut p, "q1", obs_dim + 1, hidden, rng)?;
        let q2 = MlpHead::init(&mut p, "q2", obs_dim + 1, hidden, rng)?;
        Ok((Self { q1, q2 }, p))
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, obs: Var, action_norm: Var) -> Result<(Var, Var)> {
        let x = g.concat(&[obs, action_norm])?;
        Ok((self.q1.forward(g, p, x)?, self.q2.forward(g, p, x)?))
    }

    pub fn q1_only(&self, g: &mut Graph, p: &Bound, obs: Var, action_norm: Var) -> Result<Var> {
        let x = g.concat(&[obs, action_norm])?;
        self.q1.forward(g, p, x)
    }
}

/// History-encoder input width: observation, previous action, previous reward.
pub fn history_input_dim(obs_dim: usize) -> usize {
    obs_dim + 2
}

/// Recurrent actor: LSTM over `[o_t, a_{t-1}, r_t]`, a ReLU shortcut
/// embedding of `o_t`, and a head over both latents.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentActorLayout {
    pub encoder: Lstm,
    pub shortcut: Dense,
    pub head: MlpHead,
}

impl RecurrentActorLayout {
    pub fn init<R: Rng + ?Sized>(
        obs_dim: usize,
        net: &super::NetworkConfig,
        rng: &mut R,
    ) -> Result<(Self, ParamSet)> {
        let mut p = ParamSet::new();
        let encoder = Lstm::init(
            &mut p,
            "pi.lstm",
            history_input_dim(obs_dim),
            net.lstm_hidden,
            net.forget_bias,
            rng,
        )?;
        let shortcut = Dense::init(&mut p, "pi.obs", obs_dim, net.obs_embed, Activation::Relu, rng)?;
        let head = MlpHead::init(&mut p, "pi.head", net.lstm_hidden + net.obs_embed, net.head_hidden, rng)?;
        Ok((
            Self {
                encoder,
                shortcut,
                head,
            },
            p,
        ))
    }

    /// Dose from a history latent and the current observation.
    pub fn policy(&self, g: &mut Graph, p: &Bound, hidden: Var, obs: Var, u_max: f64) -> Result<Var> {
        let e = self.shortcut.forward(g, p, obs)?;
        let x = g.concat(&[hidden, e])?;
        let z = self.head.forward(g, p, x)?;
        Ok(squash(g, z, u_max))
    }
}

/// Recurrent critic: its own LSTM, an embedding of `(o_t, a_t)`, and two Q
/// heads sharing encoder and embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentCriticLayout {
    pub encoder: Lstm,
    pub embed: Dense,
    pub q1: MlpHead,
    pub q2: MlpHead,
}

impl RecurrentCriticLayout {
    pub fn init<R: Rng + ?Sized>(
        obs_dim: usize,
        net: &super::NetworkConfig,
        rng: &mut R,
    ) -> Result<(Self, ParamSet)> {
        let mut p = ParamSet::new();
        let encoder = Lstm::init(
            &mut p,
            "q.lstm",
            history_input_dim(obs_dim),
            net.lstm_hidden,
            net.forget_bias,
            rng,
        )?;
        let embed = Dense::init(&mut p, "q.obs_act", obs_dim + 1, net.obs_embed, Activation::Relu, rng)?;
        let width = net.lstm_hidden + net.obs_embed;
        let q1 = MlpHead::init(&mut p, "q1", width, net.head_hidden, rng)?;
        let q2 = MlpHead::init(&mut p, "q2", width, net.head_hidden, rng)?;
        Ok((
            Self {
                encoder,
                embed,
                q1,
                q2,
            },
            p,
        ))
    }

    fn features(&self, g: &mut Graph, p: &Bound, hidden: Var, obs: Var, action_norm: Var) -> Result<Var> {
        let oa = g.concat(&[obs, action_norm])?;
        let e = self.embed.forward(g, p, oa)?;
        g.concat(&[hidden, e])
    }

    pub fn q(&self, g: &mut Graph, p: &Bound, hidden: Var, obs: Var, action_norm: Var) -> Result<(Var, Var)> {
        let x = self.features(g, p, hidden, obs, action_norm)?;
        Ok((self.q1.forward(g, p, x)?, self.q2.forward(g, p, x)?))
    }

    pub fn q1_only(&self, g: &mut Graph, p: &Bound, hidden: Var, obs: Var, action_norm: Var) -> Result<Var> {
        let x = self.features(g, p, hidden, obs, action_norm)?;
        self.q1.forward(g, p, x)
    }
}
