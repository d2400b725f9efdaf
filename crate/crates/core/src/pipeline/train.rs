//! Adam and the training loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spikefuse_tensor::{Graph, Tensor};

use super::config::{Config, TrainConfig};
use super::metrics::{evaluate_scores, Metrics};
use super::model::{bce_loss, one_hot, Model, ModelInput};
use crate::error::{Error, Result};
use crate::params::{round_f32, ParamStore};

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(cfg: &TrainConfig, store: &ParamStore) -> Self {
        Self {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            t: 0,
            m: store.zero_grads(),
            v: store.zero_grads(),
        }
    }

    /// One update. Non-finite gradients or results abort with the name of
    /// the parameter involved, leaving `store` untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
        for (id, g) in store.ids().zip(grads) {
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient of `{}` is not finite", store.name(id))));
            }
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let mut updated = Vec::with_capacity(grads.len());
        for (((id, g), m), v) in store.ids().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let mut p = store.value(id).clone();
            for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            }
            round_f32(&mut p);
            if !p.all_finite() {
                return Err(Error::NonFinite(format!("parameter `{}` became non-finite", store.name(id))));
            }
            updated.push((id, p));
        }
        for (id, p) in updated {
            *store.value_mut(id) = p;
        }
        Ok(())
    }
}

/// Summary of one epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainLog {
    pub epoch: usize,
    pub step: u64,
    /// Mean training loss over the epoch's batches.
    pub loss: f64,
    /// Training-set metrics after the epoch.
    pub metrics: Metrics,
}

impl TrainLog {
    pub fn key_values(&self) -> String {
        format!("epoch={} step={} loss={:.6} {}", self.epoch, self.step, self.loss, self.metrics.key_values())
    }
}

pub struct Trainer {
    pub config: Config,
    pub model: Model,
    pub adam: Adam,
    pub step: u64,
    pub epoch: usize,
    shuffle: ChaCha8Rng,
}

impl Trainer {
    pub fn new(config: Config) -> Result<Self> {
        config.validate()?;
        let model = Model::new(config.model.clone(), config.train.seed)?;
        Ok(Self::with_model(config, model))
    }

    pub fn with_model(config: Config, model: Model) -> Self {
        let adam = Adam::new(&config.train, &model.store);
        let shuffle = ChaCha8Rng::seed_from_u64(config.train.seed ^ 0x5348_5546);
        Self {
            config,
            model,
            adam,
            step: 0,
            epoch: 0,
            shuffle,
        }
    }

    /// Loss and parameter gradients for one sample.
    pub fn sample_gradients(&self, input: &ModelInput, label: usize) -> Result<(f64, Vec<Tensor>)> {
        let target = one_hot(label, self.model.config.num_classes)?;
        let mut g = Graph::new();
        let p = self.model.store.bind(&mut g);
        let out = self.model.forward(&mut g, &p, input)?;
        let loss = bce_loss(&mut g, out.scores, &target)?;
        let value = g.value(loss).data()[0];
        let grads = g.backward(loss)?;
        let mut acc = self.model.store.zero_grads();
        p.accumulate(&grads, &mut acc);
        Ok((value, acc))
    }

    /// One optimizer step on the mean gradient of `batch`; returns the mean loss.
    pub fn train_step(&mut self, batch: &[(&ModelInput, usize)]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Dataset("empty batch".into()));
        }
        let mut total = self.model.store.zero_grads();
        let mut loss = 0.0;
        for &(input, label) in batch {
            let (l, grads) = self.sample_gradients(input, label)?;
            loss += l;
            for (t, g) in total.iter_mut().zip(&grads) {
                t.add_assign(g);
            }
        }
        let inv = 1.0 / batch.len() as f64;
        for t in &mut total {
            t.data_mut().iter_mut().for_each(|v| *v *= inv);
        }
        self.adam.step(&mut self.model.store, &total)?;
        self.step += 1;
        Ok(loss * inv)
    }

    /// Trains epoch by epoch until `train.max_steps` optimizer steps or the
    /// target training accuracy; `on_epoch` sees every epoch's log.
    pub fn fit(&mut self, data: &[(ModelInput, usize)], mut on_epoch: impl FnMut(&TrainLog)) -> Result<Vec<TrainLog>> {
        if data.is_empty() {
            return Err(Error::Dataset("no training samples".into()));
        }
        let t = self.config.train.clone();
        let mut logs = Vec::new();
        let mut order: Vec<usize> = (0..data.len()).collect();
        while (self.step as usize) < t.max_steps {
            order.shuffle(&mut self.shuffle);
            let mut losses = Vec::new();
            for chunk in order.chunks(t.batch_size) {
                if self.step as usize >= t.max_steps {
                    break;
                }
                let batch: Vec<(&ModelInput, usize)> = chunk.iter().map(|&i| (&data[i].0, data[i].1)).collect();
                losses.push(self.train_step(&batch)?);
            }
            self.epoch += 1;
            let (metrics, _) = evaluate(&self.model, data)?;
            let log = TrainLog {
                epoch: self.epoch,
                step: self.step,
                loss: losses.iter().sum::<f64>() / losses.len().max(1) as f64,
                metrics,
            };
            on_epoch(&log);
            let done = t.target_accuracy.is_some_and(|a| log.metrics.top1 >= a);
            logs.push(log);
            if done {
                break;
            }
        }
        Ok(logs)
    }
}

/// Metrics and per-sample scores over `data`.
pub fn evaluate(model: &Model, data: &[(ModelInput, usize)]) -> Result<(Metrics, Vec<Vec<f64>>)> {
    let scores = data.iter().map(|(x, _)| model.predict(x)).collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = data.iter().map(|d| d.1).collect();
    Ok((evaluate_scores(&scores, &labels, model.config.num_classes)?, scores))
}
