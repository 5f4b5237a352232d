//! Mix-and-separate training loop.

use avsep_tensor::optim::Sgd;
use avsep_tensor::{Graph, Mode, TensorError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::corpus::{Clip, Split};
use crate::error::{data_err, AvError, Result};
use crate::frontend::Frontend;
use crate::mixing::{prepare_batch, sample_mix_pair, ClipCache, MixItem, PreparedBatch};
use crate::model::Model;

/// Losses measured before the update of one step.
#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    pub step: usize,
    pub c_loss1: f64,
    pub c_loss2: f64,
    pub sep_loss: f64,
    pub total: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

pub struct Trainer<'a> {
    pub cfg: TrainConfig,
    pub model: Model<f32>,
    pub opt: Sgd<f32>,
    pub frontend: Frontend,
    clips: &'a [Clip],
    pool: Vec<usize>,
    cache: Vec<Option<ClipCache>>,
    rng: ChaCha8Rng,
    step: usize,
}

/// Seed of the dropout masks at a given step.
fn pass_seed(seed: u64, step: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(step as u64)
}

impl<'a> Trainer<'a> {
    /// Trains on the `train` split of `clips`.
    pub fn new(cfg: &TrainConfig, clips: &'a [Clip]) -> Result<Self> {
        cfg.validate()?;
        let frontend = Frontend::new(&cfg.audio())?;
        let pool: Vec<usize> = (0..clips.len()).filter(|&i| clips[i].split == Split::Train).collect();
        if pool.len() < 2 {
            return Err(data_err("training split has fewer than 2 clips"));
        }
        let mut cache = vec![None; clips.len()];
        for &i in &pool {
            cache[i] = Some(ClipCache::build(&clips[i], &frontend)?);
        }
        let model = Model::new(&cfg.arch(), cfg.seed)?;
        let opt = Sgd::new(cfg.lr as f32, cfg.momentum as f32);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(7);
        Ok(Self { cfg: cfg.clone(), model, opt, frontend, clips, pool, cache, rng, step: 0 })
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn sample_batch(&mut self) -> Result<Vec<MixItem>> {
        (0..self.cfg.batch_size)
            .map(|_| sample_mix_pair(self.clips, &self.pool, self.cfg.duet_fraction, &mut self.rng))
            .collect()
    }

    pub fn prepare(&self, items: &[MixItem]) -> Result<PreparedBatch<f32>> {
        prepare_batch(items, self.clips, &self.cache, &self.frontend, self.cfg.classes, self.cfg.mask)
    }

    /// One SGD update on a freshly drawn batch.
    pub fn step(&mut self) -> Result<LossReport> {
        let items = self.sample_batch()?;
        let batch = self.prepare(&items)?;
        self.step_on(&batch)
    }

    /// One SGD update on a given batch.
    pub fn step_on(&mut self, batch: &PreparedBatch<f32>) -> Result<LossReport> {
        let step = self.step;
        let seed = pass_seed(self.cfg.seed, step);
        let (report, grads, updates) = {
            let mut g = Graph::with_params(&self.model.store, Mode::Train, seed);
            let res = self
                .model
                .losses(&mut g, &batch.input, &batch.labels, &batch.gt, self.cfg.mask, self.cfg.lambda)
                .and_then(|l| {
                    let grads = g.backward(l.total)?;
                    Ok((l, grads))
                });
            let (l, grads) = match res {
                Ok(v) => v,
                Err(AvError::Tensor(TensorError::NonFinite { op })) => {
                    return Err(AvError::NonFiniteLoss { step, detail: self.non_finite_report(op) })
                }
                Err(e) => return Err(e),
            };
            let v = |x| g.value(x).item() as f64;
            let report = LossReport {
                step,
                c_loss1: v(l.c_first),
                c_loss2: v(l.c_second),
                sep_loss: v(l.sep),
                total: v(l.total),
                grad_norm: 0.0,
            };
            (report, grads, g.take_stat_updates())
        };
        let clip = self.cfg.clip_norm.map(|c| c as f32);
        let norm = self.opt.step(&mut self.model.store, &grads, clip);
        for u in updates {
            u.apply(&mut self.model.store);
        }
        self.step += 1;
        if !norm.is_finite() {
            return Err(AvError::NonFiniteLoss { step, detail: format!("gradient norm is {norm}") });
        }
        Ok(LossReport { grad_norm: norm as f64, ..report })
    }

    fn non_finite_report(&self, op: &str) -> String {
        let bad: Vec<&str> = self
            .model
            .store
            .entries()
            .iter()
            .filter(|e| !e.value.is_finite())
            .map(|e| e.name.as_str())
            .collect();
        if bad.is_empty() {
            format!("operation `{op}` produced NaN or Inf; all parameters are finite")
        } else {
            format!("operation `{op}` produced NaN or Inf; non-finite parameters: {}", bad.join(", "))
        }
    }

    /// Runs the configured number of steps, calling `log` after each one.
    pub fn run(&mut self, mut log: impl FnMut(&LossReport)) -> Result<Vec<LossReport>> {
        let mut history = Vec::with_capacity(self.cfg.steps);
        while self.step < self.cfg.steps {
            let r = self.step()?;
            log(&r);
            history.push(r);
        }
        Ok(history)
    }
}

/// Trains a model from scratch and returns it with its loss history.
pub fn train(cfg: &TrainConfig, clips: &[Clip], log: impl FnMut(&LossReport)) -> Result<(Model<f32>, Vec<LossReport>)> {
    let mut t = Trainer::new(cfg, clips)?;
    let history = t.run(log)?;
    Ok((t.model, history))
}
