use std::collections::BTreeMap;

use rayon::prelude::*;

use super::config::PredictMode;
use super::model::{StepInput, WorldModel};
use super::params::ParamGroup;
use crate::error::{Error, Result};
use crate::numeric::{RngStream, Scalar, Tape, Tensor};

/// One supervised transition.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample<S: Scalar> {
    /// `C_ctx` latents, oldest first.
    pub context: Vec<Tensor<S>>,
    pub action: Vec<S>,
    pub target: Tensor<S>,
    /// Encoded memory of frames older than the context window.
    pub memory: Option<Tensor<S>>,
}

/// Per-group step sizes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LearningRates {
    pub base: f64,
    pub ttt: f64,
    pub adapter: f64,
}

impl LearningRates {
    pub fn scaled(self, s: f64) -> Self {
        LearningRates {
            base: self.base * s,
            ttt: self.ttt * s,
            adapter: self.adapter * s,
        }
    }

    fn for_group(&self, g: ParamGroup) -> f64 {
        match g {
            ParamGroup::Base => self.base,
            ParamGroup::Ttt => self.ttt,
            ParamGroup::Adapter => self.adapter,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments, keyed by parameter name.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<S: Scalar> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: BTreeMap<String, Tensor<S>>,
    pub v: BTreeMap<String, Tensor<S>>,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }
}

/// Mean MSE over `batch` and its gradient with respect to every non-frozen
/// parameter. Samples run concurrently on separate tapes and are reduced in
/// batch order, so the result does not depend on scheduling.
pub fn loss_and_grads<S: Scalar>(
    model: &WorldModel<S>,
    batch: &[TrainSample<S>],
    noise: Option<&mut RngStream>,
) -> Result<(S, BTreeMap<String, Tensor<S>>)> {
    if batch.is_empty() {
        return Err(Error::contract("training batch is empty"));
    }
    let contexts: Vec<Vec<Tensor<S>>> = match (model.config().mode, noise) {
        (PredictMode::Deterministic, _) => batch.iter().map(|s| s.context.clone()).collect(),
        (PredictMode::NoiseConditioned, Some(rng)) => batch
            .iter()
            .map(|s| model.perturb_last(&s.context, rng))
            .collect::<Result<_>>()?,
        (PredictMode::NoiseConditioned, None) => {
            return Err(Error::contract("noise-conditioned training needs a noise stream"))
        }
    };
    let mode = model.config().ttt_mode;
    let per_sample: Vec<Result<(S, BTreeMap<String, Tensor<S>>)>> = batch
        .par_iter()
        .zip(contexts.par_iter())
        .map(|(s, ctx)| {
            let tape = Tape::new();
            let b = model.params().bind(&tape, true);
            let out = model.forward(
                &tape,
                &b,
                &StepInput {
                    context: ctx,
                    action: &s.action,
                    memory: s.memory.as_ref(),
                    ttt_init: None,
                },
                mode,
            )?;
            let loss = out.pred.mse(tape.constant(s.target.clone()))?;
            let value = loss.value().item()?;
            Ok((value, tape.backward(loss)?.named()))
        })
        .collect();

    let n = S::from_usize(batch.len()).unwrap();
    let mut total = S::zero();
    let mut grads: BTreeMap<String, Tensor<S>> = BTreeMap::new();
    for r in per_sample {
        let (l, g) = r?;
        total += l;
        for (name, t) in g {
            match grads.get_mut(&name) {
                Some(acc) => acc.add_assign(&t),
                None => {
                    grads.insert(name, t);
                }
            }
        }
    }
    let loss = total / n;
    if !loss.is_finite() {
        return Err(Error::numeric("training loss"));
    }
    let inv = S::one() / n;
    for g in grads.values_mut() {
        *g = g.scale(inv);
    }
    Ok((loss, grads))
}

/// One Adam step on every non-frozen parameter; returns the pre-update loss.
pub fn train_step<S: Scalar>(
    model: &mut WorldModel<S>,
    opt: &mut AdamState<S>,
    batch: &[TrainSample<S>],
    lrs: LearningRates,
    noise: Option<&mut RngStream>,
) -> Result<S> {
    let (loss, grads) = loss_and_grads(model, batch, noise)?;
    opt.step += 1;
    let cfg = opt.config;
    let t = opt.step as i32;
    let bc1 = S::of(1.0 - cfg.beta1.powi(t));
    let bc2 = S::of(1.0 - cfg.beta2.powi(t));
    let (b1, b2, eps) = (S::of(cfg.beta1), S::of(cfg.beta2), S::of(cfg.eps));
    for (name, g) in grads {
        let p = model.params().get(&name)?;
        if p.frozen {
            continue;
        }
        let lr = S::of(lrs.for_group(p.group));
        let shape = g.shape().to_vec();
        let m = opt.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(&shape));
        let v = opt.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(&shape));
        let mut value = p.value.clone();
        for (((x, &gi), mi), vi) in value
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut())
            .zip(v.data_mut().iter_mut())
        {
            *mi = b1 * *mi + (S::one() - b1) * gi;
            *vi = b2 * *vi + (S::one() - b2) * gi * gi;
            let mhat = *mi / bc1;
            let vhat = *vi / bc2;
            *x -= lr * mhat / (vhat.sqrt() + eps);
        }
        model.params_mut().set(&name, value)?;
    }
    Ok(loss)
}
