//! Three-headed U-Net generator and convolutional discriminator.
//!
//! Generator: encoder blocks (3×3 conv → instance norm → leaky ReLU 0.2, twice)
//! with 2×2 max pooling, a bottleneck block, and decoder blocks (2×2
//! transposed conv, skip concatenation, 3×3 conv → instance norm → ReLU,
//! twice). Dropout follows the innermost decoder blocks. The last decoder
//! block feeds three independent 1×1 convolutions:
//!
//! * `x̂ = raw_o`
//! * `α̂ = 1 / (ReLU(raw_α) + alpha_floor)` (the head predicts 1/α̂)
//! * `β̂ = ReLU(raw_β) + beta_floor`
//!
//! Discriminator: 4×4 stride-2 convolutions with batch norm from the second
//! stage on, leaky ReLU 0.2, global average pooling, a 1×1 projection and a
//! sigmoid, giving one probability per image.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::GgdParamMaps;
use crate::nn::{normal_tensor, BatchStats, Bound, Graph, ParamStore, Tensor, Var};
use crate::seed::rng_from_seed;

const LEAKY_SLOPE: f32 = 0.2;
const BN_MOMENTUM: f32 = 0.1;
/// Initial bias of the 1/α̂ head (α̂ = 0.05, the residual scale of unit-range images).
const INV_ALPHA_INIT: f32 = 20.0;
/// Initial bias of the β̂ head (the Gaussian case).
const BETA_INIT: f32 = 2.0;
/// Number of innermost decoder blocks followed by dropout.
const DROPOUT_BLOCKS: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    /// 2.5D slab depth, used as the channel count of input and every head.
    pub in_channels: usize,
    pub base_width: usize,
    pub depth: usize,
    pub dropout_rate: f64,
    /// Floor added to the 1/α̂ head before inversion, so α̂ ≤ 1/alpha_floor.
    pub alpha_floor: f64,
    pub beta_floor: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            base_width: 16,
            depth: 2,
            dropout_rate: 0.2,
            alpha_floor: 1e-3,
            beta_floor: 1e-2,
        }
    }
}

impl GeneratorConfig {
    /// Full-scale preset: depth 4, 64 base channels.
    pub fn full_scale() -> Self {
        Self {
            base_width: 64,
            depth: 4,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.in_channels % 2 == 0 {
            return Err(Error::invalid("in_channels", "must be odd"));
        }
        if self.base_width == 0 {
            return Err(Error::invalid("base_width", "must be positive"));
        }
        if self.depth == 0 || self.depth > 8 {
            return Err(Error::invalid("depth", "must lie in 1..=8"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid("dropout_rate", "must lie in [0, 1)"));
        }
        if !(self.alpha_floor > 0.0 && self.beta_floor > 0.0) {
            return Err(Error::invalid(
                "floors",
                "alpha_floor and beta_floor must be > 0",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Conv {
    w: usize,
    b: usize,
}

#[derive(Clone, Copy, Debug)]
struct Block {
    c1: Conv,
    c2: Conv,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    cfg: GeneratorConfig,
    params: ParamStore,
    layout: GenLayout,
}

#[derive(Clone, Debug, PartialEq)]
struct GenLayout {
    enc: Vec<[usize; 4]>,
    bottleneck: [usize; 4],
    up: Vec<[usize; 2]>,
    dec: Vec<[usize; 4]>,
    heads: [[usize; 2]; 3],
}

fn conv_of(ix: [usize; 2]) -> Conv {
    Conv { w: ix[0], b: ix[1] }
}

fn block_of(ix: [usize; 4]) -> Block {
    Block {
        c1: Conv { w: ix[0], b: ix[1] },
        c2: Conv { w: ix[2], b: ix[3] },
    }
}

/// Graph handles for one generator forward pass.
pub struct GenOutputs {
    pub x_hat: Var,
    pub alpha: Var,
    pub beta: Var,
    pub params: Bound,
}

impl Generator {
    pub fn new(cfg: GeneratorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = rng_from_seed(seed);
        let mut ps = ParamStore::new();
        let width = |l: usize| cfg.base_width << l;
        let block = |ps: &mut ParamStore, name: &str, ci: usize, co: usize, rng: &mut _| {
            let (w1, b1) = ps.add_conv(&format!("{name}.conv1"), ci, co, 3, rng);
            let (w2, b2) = ps.add_conv(&format!("{name}.conv2"), co, co, 3, rng);
            [w1, b1, w2, b2]
        };
        let mut enc = Vec::with_capacity(cfg.depth);
        for l in 0..cfg.depth {
            let ci = if l == 0 {
                cfg.in_channels
            } else {
                width(l - 1)
            };
            enc.push(block(&mut ps, &format!("enc{l}"), ci, width(l), &mut rng));
        }
        let bottleneck = block(
            &mut ps,
            "bottleneck",
            width(cfg.depth - 1),
            width(cfg.depth),
            &mut rng,
        );
        let mut up = Vec::with_capacity(cfg.depth);
        let mut dec = Vec::with_capacity(cfg.depth);
        for l in (0..cfg.depth).rev() {
            let (w, b) = ps.add_conv_transpose(&format!("up{l}"), width(l + 1), width(l), &mut rng);
            up.push([w, b]);
            dec.push(block(
                &mut ps,
                &format!("dec{l}"),
                2 * width(l),
                width(l),
                &mut rng,
            ));
        }
        let mut heads = [[0; 2]; 3];
        for (h, (name, bias)) in [
            ("head_x", 0.0),
            ("head_inv_alpha", INV_ALPHA_INIT),
            ("head_beta", BETA_INIT),
        ]
        .into_iter()
        .enumerate()
        {
            let (w, b) = ps.add_conv(name, width(0), cfg.in_channels, 1, &mut rng);
            ps.get_mut(b).data_mut().fill(bias);
            heads[h] = [w, b];
        }
        Ok(Self {
            cfg,
            params: ps,
            layout: GenLayout {
                enc,
                bottleneck,
                up,
                dec,
                heads,
            },
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Checks that an `N×C×H×W` input can run through the encoder.
    pub fn check_input(&self, shape: [usize; 4]) -> Result<()> {
        let [_, c, h, w] = shape;
        if c != self.cfg.in_channels {
            return Err(Error::ShapeMismatch {
                expected: vec![self.cfg.in_channels],
                actual: vec![c],
            });
        }
        let m = 1usize << self.cfg.depth;
        if h == 0 || w == 0 || h % m != 0 || w % m != 0 {
            return Err(Error::invalid(
                "input",
                format!("spatial size {h}x{w} must be a positive multiple of {m}"),
            ));
        }
        Ok(())
    }

    /// Builds one forward pass. Dropout is active iff `dropout` is given
    /// and the configured rate is positive.
    pub fn forward<R: Rng>(
        &self,
        g: &mut Graph,
        x: Var,
        mut dropout: Option<&mut R>,
    ) -> Result<GenOutputs> {
        self.check_input(g.value(x).shape())?;
        let bound = self.params.bind(g);
        let conv = |g: &mut Graph, x: Var, c: Conv, pad: usize| {
            g.conv2d(x, bound.var(c.w), bound.var(c.b), 1, pad)
        };
        let enc_block = |g: &mut Graph, x: Var, b: Block| {
            let y = conv(g, x, b.c1, 1);
            let y = g.instance_norm(y);
            let y = g.leaky_relu(y, LEAKY_SLOPE);
            let y = conv(g, y, b.c2, 1);
            let y = g.instance_norm(y);
            g.leaky_relu(y, LEAKY_SLOPE)
        };
        let mut skips = Vec::with_capacity(self.cfg.depth);
        let mut h = x;
        for &ix in &self.layout.enc {
            h = enc_block(g, h, block_of(ix));
            skips.push(h);
            h = g.max_pool2(h);
        }
        h = enc_block(g, h, block_of(self.layout.bottleneck));
        for (k, (&up, &dec)) in self.layout.up.iter().zip(&self.layout.dec).enumerate() {
            let u = conv_of(up);
            let up_h = g.conv_transpose2(h, bound.var(u.w), bound.var(u.b));
            let skip = skips.pop().expect("one skip per level");
            let cat = g.concat(skip, up_h);
            let b = block_of(dec);
            let y = conv(g, cat, b.c1, 1);
            let y = g.instance_norm(y);
            let y = g.relu(y);
            let y = conv(g, y, b.c2, 1);
            let y = g.instance_norm(y);
            h = g.relu(y);
            if k < DROPOUT_BLOCKS && self.cfg.dropout_rate > 0.0 {
                if let Some(rng) = dropout.as_deref_mut() {
                    let mask = dropout_mask(g.value(h).len(), self.cfg.dropout_rate, rng);
                    h = g.dropout(h, mask);
                }
            }
        }
        let [ho, ha, hb] = self.layout.heads.map(conv_of);
        let x_hat = conv(g, h, ho, 0);
        let raw_a = conv(g, h, ha, 0);
        let raw_a = g.relu(raw_a);
        let inv_alpha = g.add_scalar(raw_a, self.cfg.alpha_floor as f32);
        let alpha = g.reciprocal(inv_alpha);
        let raw_b = conv(g, h, hb, 0);
        let raw_b = g.relu(raw_b);
        let beta = g.add_scalar(raw_b, self.cfg.beta_floor as f32);
        Ok(GenOutputs {
            x_hat,
            alpha,
            beta,
            params: bound,
        })
    }

    /// Gradient-free prediction on a batch.
    pub fn predict<R: Rng>(&self, input: &Tensor, dropout: Option<&mut R>) -> Result<GgdParamMaps> {
        let mut g = Graph::new();
        let x = g.constant(input.clone());
        let out = self.forward(&mut g, x, dropout)?;
        GgdParamMaps::new(
            g.value(out.x_hat).clone(),
            g.value(out.alpha).clone(),
            g.value(out.beta).clone(),
        )
    }
}

fn dropout_mask<R: Rng>(len: usize, rate: f64, rng: &mut R) -> Vec<f32> {
    let keep = (1.0 / (1.0 - rate)) as f32;
    (0..len)
        .map(|_| {
            if rng.random::<f64>() < rate {
                0.0
            } else {
                keep
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub in_channels: usize,
    pub layer_widths: Vec<usize>,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            layer_widths: vec![64, 128, 256, 512],
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 {
            return Err(Error::invalid("in_channels", "must be positive"));
        }
        if self.layer_widths.len() < 3 {
            return Err(Error::invalid(
                "layer_widths",
                "need at least 3 conv stages",
            ));
        }
        if self.layer_widths.contains(&0) {
            return Err(Error::invalid("layer_widths", "widths must be positive"));
        }
        Ok(())
    }

    /// Smallest accepted spatial size (each stage halves the resolution).
    pub fn min_input_size(&self) -> usize {
        1 << self.layer_widths.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    cfg: DiscriminatorConfig,
    params: ParamStore,
    stages: Vec<(Conv, Option<(usize, usize)>)>,
    proj: Conv,
    running: Vec<BatchStats>,
}

pub struct DiscOutput {
    /// `N×1×1×1` probabilities.
    pub prob: Var,
    pub params: Bound,
    /// Batch statistics of each batch-norm stage (training mode only).
    pub batch_stats: Vec<BatchStats>,
}

impl Discriminator {
    pub fn new(cfg: DiscriminatorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = rng_from_seed(seed);
        let mut ps = ParamStore::new();
        let mut stages = Vec::new();
        let mut running = Vec::new();
        let mut ci = cfg.in_channels;
        for (s, &co) in cfg.layer_widths.iter().enumerate() {
            let (w, b) = ps.add_conv(&format!("stage{s}.conv"), ci, co, 4, &mut rng);
            let bn = if s > 0 {
                let gamma = ps.add(
                    format!("stage{s}.bn.weight"),
                    normal_tensor([co, 1, 1, 1], 1.0, 0.02, &mut rng),
                );
                let beta = ps.add(format!("stage{s}.bn.bias"), Tensor::zeros([co, 1, 1, 1]));
                running.push(BatchStats {
                    mean: vec![0.0; co],
                    var: vec![1.0; co],
                });
                Some((gamma, beta))
            } else {
                None
            };
            stages.push((Conv { w, b }, bn));
            ci = co;
        }
        let (w, b) = ps.add_conv("proj", ci, 1, 1, &mut rng);
        Ok(Self {
            cfg,
            params: ps,
            stages,
            proj: Conv { w, b },
            running,
        })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn running_stats(&self) -> &[BatchStats] {
        &self.running
    }

    pub fn set_running_stats(&mut self, stats: Vec<BatchStats>) -> Result<()> {
        if stats.len() != self.running.len()
            || stats
                .iter()
                .zip(&self.running)
                .any(|(a, b)| a.mean.len() != b.mean.len() || a.var.len() != b.var.len())
        {
            return Err(Error::invalid(
                "running_stats",
                "layout does not match the discriminator",
            ));
        }
        self.running = stats;
        Ok(())
    }

    /// Exponential moving average update from a training-mode pass.
    pub fn update_running_stats(&mut self, observed: &[BatchStats]) {
        for (run, obs) in self.running.iter_mut().zip(observed) {
            for (r, o) in run.mean.iter_mut().zip(&obs.mean) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * o;
            }
            for (r, o) in run.var.iter_mut().zip(&obs.var) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * o;
            }
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var, training: bool) -> Result<DiscOutput> {
        let [_, c, h, w] = g.value(x).shape();
        if c != self.cfg.in_channels {
            return Err(Error::ShapeMismatch {
                expected: vec![self.cfg.in_channels],
                actual: vec![c],
            });
        }
        let min = self.cfg.min_input_size();
        if h < min || w < min {
            return Err(Error::invalid(
                "input",
                format!("{h}x{w} is below the {min}x{min} receptive-field minimum"),
            ));
        }
        let bound = self.params.bind(g);
        let mut batch_stats = Vec::new();
        let mut y = x;
        let mut bn_idx = 0;
        for (conv, bn) in &self.stages {
            y = g.conv2d(y, bound.var(conv.w), bound.var(conv.b), 2, 1);
            if let Some((gamma, beta)) = bn {
                let running = (!training).then(|| &self.running[bn_idx]);
                let (out, stats) = g.batch_norm(y, bound.var(*gamma), bound.var(*beta), running);
                batch_stats.extend(stats);
                y = out;
                bn_idx += 1;
            }
            y = g.leaky_relu(y, LEAKY_SLOPE);
        }
        let pooled = g.global_avg_pool(y);
        let logit = g.conv2d(pooled, bound.var(self.proj.w), bound.var(self.proj.b), 1, 0);
        let prob = g.sigmoid(logit);
        Ok(DiscOutput {
            prob,
            params: bound,
            batch_stats,
        })
    }

    /// Gradient-free probabilities for a batch (running statistics).
    pub fn score(&self, images: &Tensor) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let x = g.constant(images.clone());
        let out = self.forward(&mut g, x, false)?;
        Ok(g.value(out.prob).data().iter().map(|&p| p as f64).collect())
    }
}
