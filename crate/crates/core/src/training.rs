//! Alternating discriminator / generator optimization.

use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data_sim::slab_centers;
use crate::error::{Error, Result};
use crate::inference::{predict_volume, InferenceConfig};
use crate::losses::{
    bce, bce_grad, discriminator_loss, loss_u_with_grad, GgdParamMaps, LossWeights, ParamMapsGrad,
};
use crate::metrics::{psnr, ssim};
use crate::networks::{Discriminator, GenOutputs, Generator};
use crate::nn::{Adam, AdamConfig, Graph, Tensor};
use crate::seed::{derive_seed, rng_from_seed};
use crate::volume::Volume;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    /// Undersampled to fully sampled reconstruction.
    #[serde(rename = "QE")]
    Qe,
    /// T1-like to T2-like synthesis.
    #[serde(rename = "MP")]
    Mp,
}

impl Task {
    pub fn loss_weights(self) -> LossWeights {
        match self {
            Task::Qe => LossWeights::quality_enhancement(),
            Task::Mp => LossWeights::modality_propagation(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    /// Single half-cosine from `lr_init` to 0 over all epochs.
    #[default]
    Cosine,
}

/// Reconstruction term of the generator objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    #[default]
    Ggd,
    /// Baseline: mean absolute error on `x̂`; the `α̂`, `β̂` heads stay untrained.
    L1,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr_init: f64,
    pub schedule: Schedule,
    pub epochs: usize,
    pub lambda_adv: f64,
    pub seed: u64,
    pub task: Task,
    pub objective: Objective,
    /// Stops early after this many optimizer steps.
    pub max_steps: Option<u64>,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            lr_init: 2e-4,
            schedule: Schedule::Cosine,
            epochs: 30,
            lambda_adv: LossWeights::quality_enhancement().lambda_adv,
            seed: 0,
            task: Task::Qe,
            objective: Objective::Ggd,
            max_steps: None,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn for_task(task: Task) -> Self {
        Self {
            task,
            lambda_adv: task.loss_weights().lambda_adv,
            ..Self::default()
        }
    }

    pub fn full_scale(task: Task) -> Self {
        Self {
            batch_size: 16,
            ..Self::for_task(task)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be >= 1"));
        }
        if !(self.lr_init.is_finite() && self.lr_init > 0.0) {
            return Err(Error::invalid("lr_init", "must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs", "must be >= 1"));
        }
        if !(self.lambda_adv.is_finite() && self.lambda_adv > 0.0) {
            return Err(Error::invalid("lambda_adv", "must be positive"));
        }
        Ok(())
    }

    /// Learning rate used throughout epoch `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.schedule {
            Schedule::Cosine => {
                let t = epoch as f64 / self.epochs as f64;
                0.5 * self.lr_init * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}

/// Co-registered input and target volumes.
#[derive(Clone, Debug, Default)]
pub struct PairedVolumes {
    pub input: Vec<Volume>,
    pub target: Vec<Volume>,
}

impl PairedVolumes {
    pub fn new(input: Vec<Volume>, target: Vec<Volume>) -> Result<Self> {
        if input.len() != target.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![input.len()],
                actual: vec![target.len()],
            });
        }
        for (a, b) in input.iter().zip(&target) {
            if a.shape() != b.shape() {
                return Err(Error::ShapeMismatch {
                    expected: a.shape().to_vec(),
                    actual: b.shape().to_vec(),
                });
            }
        }
        Ok(Self { input, target })
    }

    pub fn len(&self) -> usize {
        self.input.len()
    }

    pub fn is_empty(&self) -> bool {
        self.input.is_empty()
    }

    /// `(volume, centre slice)` for every stride-1 slab.
    pub fn samples(&self, slab_depth: usize) -> Result<Vec<(usize, usize)>> {
        let mut out = Vec::new();
        for (v, vol) in self.input.iter().enumerate() {
            out.extend(
                slab_centers(vol.depth(), slab_depth, 1)?
                    .into_iter()
                    .map(|c| (v, c)),
            );
        }
        Ok(out)
    }

    /// Input and target slabs for `samples`, stacked `N×C×H×W`.
    pub fn batch(&self, samples: &[(usize, usize)], slab_depth: usize) -> Result<(Tensor, Tensor)> {
        let half = slab_depth / 2;
        let gather = |vols: &[Volume]| {
            let [_, h, w] = vols[samples[0].0].shape();
            let slabs: Vec<&[f32]> = samples
                .iter()
                .map(|&(v, c)| &vols[v].data()[(c - half) * h * w..(c + half + 1) * h * w])
                .collect();
            Tensor::stack(&slabs, [slab_depth, h, w])
        };
        Ok((gather(&self.input)?, gather(&self.target)?))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub loss_u: f64,
    /// `bce(D(x̂), 1)` before weighting by `λ`.
    pub loss_adv_g: f64,
    pub loss_d: f64,
}

/// One JSON-lines record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss_u: f64,
    pub loss_adv_g: f64,
    pub loss_d: f64,
    pub val_ssim: Option<f64>,
    pub val_psnr: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    /// `L_U` of every optimizer step in order.
    pub step_loss_u: Vec<f64>,
}

/// Mean slice SSIM and PSNR of single-pass, dropout-free predictions.
pub fn validate(gen: &Generator, data: &PairedVolumes) -> Result<(f64, f64)> {
    let mut s = 0.0;
    let mut p = 0.0;
    let mut n = 0usize;
    for (input, target) in data.input.iter().zip(&data.target) {
        let pred = predict_volume(gen, input, &InferenceConfig::deterministic())?;
        for z in 0..input.depth() {
            let (a, b) = (target.slice(z), pred.x_hat.slice(z));
            s += ssim(&a, &b, 1.0)?;
            p += psnr(a.data(), b.data(), 1.0)?;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::invalid("validation", "no validation slices"));
    }
    Ok((s / n as f64, p / n as f64))
}

pub struct Trainer {
    cfg: TrainConfig,
    gen: Generator,
    disc: Discriminator,
    adam_g: Adam,
    adam_d: Adam,
    step: u64,
    epoch: usize,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, gen: Generator, disc: Discriminator) -> Result<Self> {
        cfg.validate()?;
        if disc.config().in_channels != gen.config().in_channels {
            return Err(Error::invalid(
                "discriminator",
                "input channels must match the generator output channels",
            ));
        }
        let adam_g = Adam::new(cfg.adam, gen.params());
        let adam_d = Adam::new(cfg.adam, disc.params());
        Ok(Self {
            cfg,
            gen,
            disc,
            adam_g,
            adam_d,
            step: 0,
            epoch: 0,
        })
    }

    /// Continues from a checkpoint that carries optimizer state.
    pub fn resume(cfg: TrainConfig, ck: Checkpoint) -> Result<Self> {
        cfg.validate()?;
        let disc = ck
            .discriminator
            .ok_or_else(|| Error::invalid("checkpoint", "no discriminator to resume"))?;
        let (adam_g, adam_d) = ck
            .optimizers
            .ok_or_else(|| Error::invalid("checkpoint", "no optimizer state to resume"))?;
        Ok(Self {
            cfg,
            gen: ck.generator,
            disc,
            adam_g,
            adam_d,
            step: ck.step,
            epoch: ck.epoch,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn generator(&self) -> &Generator {
        &self.gen
    }

    pub fn discriminator(&self) -> &Discriminator {
        &self.disc
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn checkpoint(&self, config_echo: serde_json::Value) -> Checkpoint {
        Checkpoint {
            step: self.step,
            epoch: self.epoch,
            seed: self.cfg.seed,
            config: config_echo,
            generator: self.gen.clone(),
            discriminator: Some(self.disc.clone()),
            optimizers: Some((self.adam_g.clone(), self.adam_d.clone())),
        }
    }

    fn diverged(&self, what: &str, stats: Option<&StepStats>) -> Error {
        let norms =
            |ps: &crate::nn::ParamStore| ps.iter().map(|(_, t)| t.sq_norm()).sum::<f64>().sqrt();
        let dump = serde_json::json!({
            "reason": what,
            "lr": self.cfg.lr_at(self.epoch),
            "loss_u": stats.map(|s| s.loss_u),
            "loss_adv_g": stats.map(|s| s.loss_adv_g),
            "loss_d": stats.map(|s| s.loss_d),
            "generator_weight_norm": norms(self.gen.params()),
            "discriminator_weight_norm": norms(self.disc.params()),
        });
        Error::Diverged {
            epoch: self.epoch,
            step: self.step as usize,
            detail: dump.to_string(),
        }
    }

    /// One discriminator update on `real` against the detached `fake`.
    pub fn discriminator_step(&mut self, real: &Tensor, fake: &Tensor, lr: f64) -> Result<f64> {
        if real.shape() != fake.shape() {
            return Err(Error::ShapeMismatch {
                expected: real.shape().to_vec(),
                actual: fake.shape().to_vec(),
            });
        }
        let n = real.n();
        let [_, c, h, w] = real.shape();
        let images: Vec<&[f32]> = (0..n)
            .map(|i| real.image(i))
            .chain((0..n).map(|i| fake.image(i)))
            .collect();
        let both = Tensor::stack(&images, [c, h, w])?;
        let mut g = Graph::new();
        let x = g.constant(both);
        let out = self.disc.forward(&mut g, x, true)?;
        let probs: Vec<f64> = g.value(out.prob).data().iter().map(|&p| p as f64).collect();
        if probs.iter().any(|p| !p.is_finite()) {
            return Err(self.diverged("non-finite discriminator output", None));
        }
        let labels: Vec<f64> = (0..2 * n).map(|i| if i < n { 1.0 } else { 0.0 }).collect();
        let loss = discriminator_loss(&probs[..n], &probs[n..])?;
        if !loss.is_finite() {
            return Err(self.diverged("non-finite discriminator loss", None));
        }
        let dp = bce_grad(&probs, &labels)?;
        let seed = Tensor::from_vec([2 * n, 1, 1, 1], dp.iter().map(|&v| v as f32).collect())?;
        let mut grads = g.backward(vec![(out.prob, seed)]);
        let gd = self.disc.params().collect_grads(&out.params, &mut grads);
        self.adam_d.step(self.disc.params_mut(), &gd, lr);
        self.disc.update_running_stats(&out.batch_stats);
        Ok(loss)
    }

    /// Generator loss and parameter gradients for a forward pass already in
    /// `g`. The discriminator runs on batch statistics and is not updated.
    fn generator_grads(
        &self,
        g: &mut Graph,
        out: &GenOutputs,
        target: &Tensor,
        lambda: f64,
    ) -> Result<(Vec<Tensor>, f64, f64)> {
        let maps = GgdParamMaps::new(
            g.value(out.x_hat).clone(),
            g.value(out.alpha).clone(),
            g.value(out.beta).clone(),
        )?;
        let (lu, grad) = match self.cfg.objective {
            Objective::Ggd => loss_u_with_grad(&maps, target)?,
            Objective::L1 => l1_with_grad(&maps, target)?,
        };
        let dout = self.disc.forward(g, out.x_hat, true)?;
        let probs: Vec<f64> = g
            .value(dout.prob)
            .data()
            .iter()
            .map(|&p| p as f64)
            .collect();
        if probs.iter().any(|p| !p.is_finite()) {
            return Err(self.diverged("non-finite discriminator output", None));
        }
        let ones = vec![1.0; probs.len()];
        let adv = bce(&probs, &ones)?;
        let dp: Vec<f32> = bce_grad(&probs, &ones)?
            .iter()
            .map(|&v| (lambda * v) as f32)
            .collect();
        let mut seeds = vec![
            (out.x_hat, grad.d_x_hat),
            (dout.prob, Tensor::from_vec([probs.len(), 1, 1, 1], dp)?),
        ];
        if self.cfg.objective == Objective::Ggd {
            seeds.push((out.alpha, grad.d_alpha));
            seeds.push((out.beta, grad.d_beta));
        }
        let mut grads = g.backward(seeds);
        Ok((
            self.gen.params().collect_grads(&out.params, &mut grads),
            lu,
            adv,
        ))
    }

    /// Generator gradients at the current weights with an explicit `λ`.
    pub fn generator_gradients(
        &self,
        input: &Tensor,
        target: &Tensor,
        lambda: f64,
        dropout_seed: u64,
    ) -> Result<Vec<Tensor>> {
        let mut g = Graph::new();
        let x = g.constant(input.clone());
        let mut rng = rng_from_seed(dropout_seed);
        let out = self.gen.forward(&mut g, x, Some(&mut rng))?;
        Ok(self.generator_grads(&mut g, &out, target, lambda)?.0)
    }

    /// One discriminator update followed by one generator update.
    pub fn train_step(&mut self, input: &Tensor, target: &Tensor, lr: f64) -> Result<StepStats> {
        let mut g = Graph::new();
        let x = g.constant(input.clone());
        let mut rng = rng_from_seed(derive_seed(self.cfg.seed, "train-dropout", self.step));
        let out = self.gen.forward(&mut g, x, Some(&mut rng))?;
        if target.shape() != g.value(out.x_hat).shape() {
            return Err(Error::ShapeMismatch {
                expected: g.value(out.x_hat).shape().to_vec(),
                actual: target.shape().to_vec(),
            });
        }
        if [out.x_hat, out.alpha, out.beta]
            .iter()
            .any(|&v| g.value(v).data().iter().any(|x| !x.is_finite()))
        {
            return Err(self.diverged("non-finite generator output", None));
        }
        let fake = g.value(out.x_hat).clone();
        let loss_d = self.discriminator_step(target, &fake, lr)?;
        let (grads, loss_u, loss_adv_g) =
            self.generator_grads(&mut g, &out, target, self.cfg.lambda_adv)?;
        let stats = StepStats {
            loss_u,
            loss_adv_g,
            loss_d,
        };
        if !loss_u.is_finite() {
            return Err(self.diverged("non-finite L_U", Some(&stats)));
        }
        if grads
            .iter()
            .any(|t| t.data().iter().any(|v| !v.is_finite()))
        {
            return Err(self.diverged("non-finite generator gradient", Some(&stats)));
        }
        self.adam_g.step(self.gen.params_mut(), &grads, lr);
        self.step += 1;
        Ok(stats)
    }

    /// Runs the remaining epochs. One JSON line per epoch goes to `log`.
    pub fn fit(
        &mut self,
        train: &PairedVolumes,
        val: &PairedVolumes,
        mut log: Option<&mut dyn Write>,
    ) -> Result<TrainingLog> {
        if train.is_empty() {
            return Err(Error::invalid("dataset", "training split is empty"));
        }
        let c = self.gen.config().in_channels;
        let samples = train.samples(c)?;
        let mut history = TrainingLog::default();
        while self.epoch < self.cfg.epochs {
            if self.cfg.max_steps.is_some_and(|m| self.step >= m) {
                break;
            }
            let lr = self.cfg.lr_at(self.epoch);
            let mut order = samples.clone();
            order.shuffle(&mut rng_from_seed(derive_seed(
                self.cfg.seed,
                "train-order",
                self.epoch as u64,
            )));
            let mut sums = [0.0f64; 3];
            let mut n = 0usize;
            let mut complete = true;
            for chunk in order.chunks(self.cfg.batch_size) {
                if self.cfg.max_steps.is_some_and(|m| self.step >= m) {
                    complete = false;
                    break;
                }
                let (x, y) = train.batch(chunk, c)?;
                let s = self.train_step(&x, &y, lr)?;
                history.step_loss_u.push(s.loss_u);
                sums[0] += s.loss_u;
                sums[1] += s.loss_adv_g;
                sums[2] += s.loss_d;
                n += 1;
            }
            let (val_ssim, val_psnr) = if val.is_empty() {
                (None, None)
            } else {
                let (s, p) = validate(&self.gen, val)?;
                (Some(s), Some(p))
            };
            let k = n.max(1) as f64;
            let record = EpochRecord {
                epoch: self.epoch,
                lr,
                loss_u: sums[0] / k,
                loss_adv_g: sums[1] / k,
                loss_d: sums[2] / k,
                val_ssim,
                val_psnr: val_psnr.filter(|p| p.is_finite()),
            };
            if let Some(w) = log.as_deref_mut() {
                let line = serde_json::to_string(&record)?;
                writeln!(w, "{line}").map_err(|e| Error::io("training log", e))?;
            }
            history.epochs.push(record);
            // A truncated epoch is rerun in full on resume.
            if complete {
                self.epoch += 1;
            }
        }
        Ok(history)
    }
}

fn l1_with_grad(maps: &GgdParamMaps, target: &Tensor) -> Result<(f64, ParamMapsGrad)> {
    let shape = target.shape();
    let n = target.len() as f64;
    let mut loss = 0.0;
    let mut d = Vec::with_capacity(target.len());
    for (&p, &y) in maps.x_hat.data().iter().zip(target.data()) {
        let e = p as f64 - y as f64;
        loss += e.abs();
        d.push((e.signum() * (e != 0.0) as u8 as f64 / n) as f32);
    }
    Ok((
        loss / n,
        ParamMapsGrad {
            d_x_hat: Tensor::from_vec(shape, d)?,
            d_alpha: Tensor::zeros(shape),
            d_beta: Tensor::zeros(shape),
        },
    ))
}
