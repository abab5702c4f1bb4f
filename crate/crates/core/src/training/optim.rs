use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{default_decoder, evaluate_episodes, loss_and_gradients, Gradients, ModelState, PreparedEpisode};
use crate::emission::{assign_references, AssignMode};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Episodes per gradient step.
    pub batch_episodes: usize,
    /// Dev evaluations without improvement before stopping.
    pub patience: usize,
    pub max_steps: usize,
    /// Steps between dev evaluations.
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_episodes: 4,
            patience: 3,
            max_steps: 2000,
            eval_every: 50,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning rate {} must be non-negative", self.learning_rate)));
        }
        for (name, v) in [
            ("batch_episodes", self.batch_episodes),
            ("patience", self.patience),
            ("eval_every", self.eval_every),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean batch loss of each step, in step order.
    pub losses: Vec<f64>,
    /// `(step, mean dev F1)` at each evaluation; step 0 is the initial model.
    pub dev_history: Vec<(usize, f64)>,
    /// Number of gradient steps taken.
    pub steps: usize,
    /// Step whose parameters were kept.
    pub best_step: usize,
    pub best_dev_f1: f64,
    pub early_stopped: bool,
    /// Not serialized, so written reports replay byte for byte.
    #[serde(skip)]
    pub wall_seconds: f64,
}

/// Adam over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step<T: Scalar>(&mut self, params: &mut [T], grads: &[T]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i].as_f64();
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let update = self.learning_rate * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
            params[i] -= T::of(update);
        }
    }
}

fn mean_f1(scores: &[crate::evaluation::Prf]) -> f64 {
    scores.iter().map(|p| p.f1).sum::<f64>() / scores.len() as f64
}

/// Adam on shuffled episode batches with early stopping on dev F1.
///
/// Returns the parameters of the best dev evaluation. Results do not depend on
/// the rayon thread count.
pub fn train<T: Scalar>(
    mut model: ModelState<T>,
    train_set: &[PreparedEpisode<T>],
    dev_set: &[PreparedEpisode<T>],
    cfg: &TrainConfig,
) -> Result<(ModelState<T>, TrainReport)> {
    cfg.validate()?;
    if train_set.is_empty() || dev_set.is_empty() {
        return Err(Error::Config("training needs non-empty train and dev episode sets".into()));
    }
    let started = Instant::now();
    let decoder = default_decoder(&model.config);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(model.n_parameters(), cfg.learning_rate);
    let mut params = model.parameters();

    let initial = mean_f1(&evaluate_episodes(&model, dev_set, decoder)?);
    let mut report = TrainReport {
        losses: Vec::new(),
        dev_history: vec![(0, initial)],
        steps: 0,
        best_step: 0,
        best_dev_f1: initial,
        early_stopped: false,
        wall_seconds: 0.0,
    };
    let mut best = params.clone();
    let mut stale = 0;
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;

    for step in 1..=cfg.max_steps {
        let mut batch = Vec::with_capacity(cfg.batch_episodes);
        for _ in 0..cfg.batch_episodes {
            if cursor == order.len() {
                order = (0..train_set.len()).collect();
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push((order[cursor], rng.random::<u64>()));
            cursor += 1;
        }
        let results: Vec<(T, Gradients<T>)> = batch
            .par_iter()
            .map(|&(e, seed)| {
                let ep = &train_set[e];
                let assignment = assign_references(model.pool.len(), ep.n_labels(), AssignMode::Random(seed))?;
                loss_and_gradients(&model, ep, &assignment)
            })
            .collect::<Result<_>>()?;

        let scale = T::of(1.0 / batch.len() as f64);
        let mut grads = Gradients::zeros(model.pool.len(), model.dim());
        let mut loss = T::zero();
        for (l, g) in &results {
            loss += *l * scale;
            grads.add_scaled(g, scale);
        }
        let loss = loss.as_f64();
        if !loss.is_finite() || !grads.is_finite() {
            let ids: Vec<usize> = batch.iter().map(|&(e, _)| train_set[e].episode_id).collect();
            return Err(Error::Diverged {
                step,
                detail: format!("loss {loss} on episodes {ids:?}"),
            });
        }
        report.losses.push(loss);
        adam.step(&mut params, &grads.flatten());
        model.set_parameters(&params)?;
        report.steps = step;

        if step % cfg.eval_every == 0 || step == cfg.max_steps {
            let f1 = mean_f1(&evaluate_episodes(&model, dev_set, decoder)?);
            report.dev_history.push((step, f1));
            if f1 > report.best_dev_f1 {
                report.best_dev_f1 = f1;
                report.best_step = step;
                best.clone_from(&params);
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.patience {
                    report.early_stopped = true;
                    break;
                }
            }
        }
    }
    model.set_parameters(&best)?;
    report.wall_seconds = started.elapsed().as_secs_f64();
    Ok((model, report))
}
