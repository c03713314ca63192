use std::collections::VecDeque;

use super::latent::{frame_from_rgb8, patchify, unpatchify};
use super::model::WorldModel;
use crate::env::{env_step, render, EnvState, FRAME_SIZE};
use crate::error::{Error, Result};
use crate::memory::MemoryBank;
use crate::numeric::{RngStream, Scalar, Tensor};

/// What a predictor may condition on when a rollout starts.
#[derive(Clone, Debug)]
pub struct Observation<S: Scalar> {
    /// Observed frames (`H×W×3`, values in `[0, 1]`), oldest first.
    pub history: Vec<Tensor<S>>,
    /// Memory of frames older than the context window, if already built.
    pub bank: Option<MemoryBank<S>>,
    /// True simulator state; only oracle predictors read it.
    pub state: EnvState,
}

/// An action-conditioned frame predictor that can be stepped autoregressively.
pub trait Dynamics<S: Scalar>: Sync {
    type Session: Clone + Send;

    /// Starts a rollout; `stream` feeds any stochasticity of the predictor.
    fn begin(&self, obs: &Observation<S>, stream: RngStream) -> Result<Self::Session>;

    /// Predicts the next frame and advances the session.
    fn step(&self, session: &mut Self::Session, action: [f64; 2]) -> Result<Tensor<S>>;

    /// Number of recent frames the predictor conditions on directly.
    fn context_len(&self) -> usize {
        1
    }

    /// An empty memory for frames that leave the context window, if used.
    fn memory(&self) -> Option<MemoryBank<S>> {
        None
    }
}

/// Predicted frames of one rollout.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<S: Scalar> {
    pub frames: Vec<Tensor<S>>,
}

pub fn rollout_session<S: Scalar, D: Dynamics<S>>(
    model: &D,
    session: &mut D::Session,
    actions: &[[f64; 2]],
) -> Result<Trajectory<S>> {
    let frames = actions
        .iter()
        .map(|&a| model.step(session, a))
        .collect::<Result<Vec<_>>>()?;
    Ok(Trajectory { frames })
}

pub fn rollout<S: Scalar, D: Dynamics<S>>(
    model: &D,
    obs: &Observation<S>,
    actions: &[[f64; 2]],
    stream: RngStream,
) -> Result<Trajectory<S>> {
    let mut session = model.begin(obs, stream)?;
    rollout_session(model, &mut session, actions)
}

/// Rollout state of a [`WorldModel`].
#[derive(Clone, Debug)]
pub struct WmSession<S: Scalar> {
    /// Context frames, oldest first.
    pub context: VecDeque<Tensor<S>>,
    pub bank: MemoryBank<S>,
    pub fast_weights: Option<Vec<Tensor<S>>>,
    pub noise: RngStream,
}

impl<S: Scalar> WorldModel<S> {
    /// Context window and memory for the last observed frames; with fewer
    /// frames than the window, the oldest one is repeated.
    pub fn start_session(&self, obs: &Observation<S>, noise: RngStream) -> Result<WmSession<S>> {
        let c = self.config().context;
        let h = &obs.history;
        if h.is_empty() {
            return Err(Error::contract("rollout needs at least one observed frame"));
        }
        let split = h.len().saturating_sub(c);
        let mut context: VecDeque<Tensor<S>> = h[split..].iter().cloned().collect();
        while context.len() < c {
            context.push_front(h[split].clone());
        }
        let bank = match &obs.bank {
            Some(b) => b.clone(),
            None => {
                let mut b = self.new_bank();
                let from = split.saturating_sub(b.capacity());
                for f in &h[from..split] {
                    b.push_frame(f.clone())?;
                }
                b
            }
        };
        Ok(WmSession {
            context,
            bank,
            fast_weights: None,
            noise,
        })
    }

    pub fn step_session(&self, s: &mut WmSession<S>, action: [f64; 2]) -> Result<Tensor<S>> {
        let cfg = self.config();
        let latents = s
            .context
            .iter()
            .map(|f| patchify(f, cfg.patch))
            .collect::<Result<Vec<_>>>()?;
        let carry = if cfg.persist_ttt { s.fast_weights.as_deref() } else { None };
        let pred = self.predict_step(
            &latents,
            &[S::of(action[0]), S::of(action[1])],
            Some(&s.bank),
            cfg.ttt_mode,
            carry,
            Some(&mut s.noise),
        )?;
        if cfg.persist_ttt {
            s.fast_weights = Some(pred.ttt_final);
        }
        // predictions are fed back as displayable frames
        let frame = unpatchify(&pred.latent, cfg.patch, cfg.frame[2])?.map(|v| v.max(S::zero()).min(S::one()));
        s.context.push_back(frame.clone());
        if let Some(old) = s.context.pop_front() {
            if self.uses_memory() {
                s.bank.push_frame(old)?;
            }
        }
        Ok(frame)
    }
}

impl<S: Scalar> Dynamics<S> for WorldModel<S> {
    type Session = WmSession<S>;

    fn begin(&self, obs: &Observation<S>, stream: RngStream) -> Result<WmSession<S>> {
        self.start_session(obs, stream)
    }

    fn step(&self, session: &mut WmSession<S>, action: [f64; 2]) -> Result<Tensor<S>> {
        self.step_session(session, action)
    }

    fn context_len(&self) -> usize {
        self.config().context
    }

    fn memory(&self) -> Option<MemoryBank<S>> {
        self.uses_memory().then(|| self.new_bank())
    }
}

/// Predictor that runs the true simulator and renders its frames.
#[derive(Clone, Copy, Debug, Default)]
pub struct GroundTruthStub;

impl<S: Scalar> Dynamics<S> for GroundTruthStub {
    type Session = EnvState;

    fn begin(&self, obs: &Observation<S>, _stream: RngStream) -> Result<EnvState> {
        Ok(obs.state)
    }

    fn step(&self, s: &mut EnvState, action: [f64; 2]) -> Result<Tensor<S>> {
        *s = env_step(s, action)?;
        frame_from_rgb8(&render(s), FRAME_SIZE, FRAME_SIZE)
    }
}
