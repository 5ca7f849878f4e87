use depthduet_tensor::{BatchNormMode, BatchStats, ConvGeom, Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{NetworkConfig, NetworkKind};
use crate::error::{Error, Result};

/// Momentum of the running batch-norm statistics.
pub const BN_MOMENTUM: f64 = 0.1;

/// How a forward pass treats parameters and batch normalization.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Parameters are trainable leaves; batch statistics are used and
    /// returned for the running averages.
    Train,
    /// Parameters are constants; batch norm uses the running statistics.
    Eval,
    /// Batch statistics like `Train`, but parameters are constants and the
    /// running averages are left alone. Gradients still reach the input.
    Frozen,
}

#[derive(Clone, Debug, PartialEq)]
struct Conv {
    weight: usize,
    bias: Option<usize>,
    geom: ConvGeom,
    transpose: bool,
}

#[derive(Clone, Debug, PartialEq)]
struct Norm {
    gamma: usize,
    beta: usize,
    slot: usize,
}

/// conv → optional batch norm → leaky ReLU
#[derive(Clone, Debug, PartialEq)]
struct Unit {
    conv: Conv,
    norm: Option<Norm>,
}

/// `x + second(leaky(norm(first(x))))`
#[derive(Clone, Debug, PartialEq)]
struct ResBlock {
    first: Conv,
    norm: Norm,
    second: Conv,
}

#[derive(Clone, Debug, PartialEq)]
struct EncoderStage {
    residual: Option<ResBlock>,
    down: Unit,
}

#[derive(Clone, Debug, PartialEq)]
enum Layout {
    Generator {
        stem: Option<Unit>,
        encoder: Vec<EncoderStage>,
        decoder: Vec<Unit>,
        head: Conv,
    },
    Discriminator {
        body: Vec<Unit>,
        head: Conv,
    },
}

/// Result of [`Network::forward`].
pub struct ForwardPass {
    pub output: Var,
    /// Graph leaves of the parameters, in [`Network::params`] order.
    pub params: Vec<Var>,
    /// Observed batch statistics per norm layer (`Mode::Train` only).
    pub stats: Vec<BatchStats>,
}

/// A built network: layer layout, named parameters and running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    kind: NetworkKind,
    config: NetworkConfig,
    layout: Layout,
    params: Vec<Tensor>,
    names: Vec<String>,
    running_mean: Vec<Vec<f64>>,
    running_var: Vec<Vec<f64>>,
}

struct Builder {
    rng: ChaCha8Rng,
    params: Vec<Tensor>,
    names: Vec<String>,
    norms: Vec<usize>,
}

impl Builder {
    fn push(&mut self, name: String, t: Tensor) -> usize {
        self.params.push(t);
        self.names.push(name);
        self.params.len() - 1
    }

    fn uniform(&mut self, shape: Vec<usize>, bound: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| self.rng.random_range(-bound..bound)).collect())
    }

    fn conv(&mut self, name: &str, c_in: usize, c_out: usize, geom: ConvGeom, transpose: bool, bias: bool) -> Conv {
        let taps = geom.kh * geom.kw;
        let (shape, fan_in) = if transpose {
            (vec![c_in, c_out, geom.kh, geom.kw], (c_in * taps / (geom.stride * geom.stride)).max(1))
        } else {
            (vec![c_out, c_in, geom.kh, geom.kw], c_in * taps)
        };
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = self.uniform(shape, bound);
        let weight = self.push(format!("{name}.weight"), w);
        let bias = bias.then(|| {
            let b = self.uniform(vec![c_out], bound);
            self.push(format!("{name}.bias"), b)
        });
        Conv {
            weight,
            bias,
            geom,
            transpose,
        }
    }

    fn norm(&mut self, name: &str, c: usize) -> Norm {
        let gamma = self.push(format!("{name}.gamma"), Tensor::ones([c]));
        let beta = self.push(format!("{name}.beta"), Tensor::zeros([c]));
        self.norms.push(c);
        Norm {
            gamma,
            beta,
            slot: self.norms.len() - 1,
        }
    }

    /// Convolutions feeding a batch norm carry no bias; the norm's shift
    /// subsumes it.
    fn unit(&mut self, name: &str, c_in: usize, c_out: usize, geom: ConvGeom, transpose: bool, norm: bool) -> Unit {
        let conv = self.conv(&format!("{name}.conv"), c_in, c_out, geom, transpose, !norm);
        let norm = norm.then(|| self.norm(&format!("{name}.norm"), c_out));
        Unit { conv, norm }
    }
}

const DOWN: ConvGeom = ConvGeom {
    kh: 4,
    kw: 4,
    stride: 2,
    pad: 1,
};
const SAME3: ConvGeom = ConvGeom {
    kh: 3,
    kw: 3,
    stride: 1,
    pad: 1,
};

pub fn build_sparse_generator(cfg: &NetworkConfig, seed: u64) -> Result<Network> {
    expect_channels(cfg, 3, 1, "sparse generator")?;
    Network::build(NetworkKind::SparseGenerator, cfg.clone(), seed)
}

pub fn build_dense_generator(cfg: &NetworkConfig, seed: u64) -> Result<Network> {
    expect_channels(cfg, 1, 1, "dense generator")?;
    Network::build(NetworkKind::DenseGenerator, cfg.clone(), seed)
}

pub fn build_discriminator(cfg: &NetworkConfig, seed: u64) -> Result<Network> {
    expect_channels(cfg, 4, 1, "discriminator")?;
    Network::build(NetworkKind::Discriminator, cfg.clone(), seed)
}

fn expect_channels(cfg: &NetworkConfig, input: usize, output: usize, what: &str) -> Result<()> {
    if cfg.input_channels != input || cfg.output_channels != output {
        return Err(Error::InvalidConfig(format!(
            "{what} needs {input} input and {output} output channel(s), config has {} and {}",
            cfg.input_channels, cfg.output_channels
        )));
    }
    Ok(())
}

impl Network {
    /// Builds and initializes a network. Weights are uniform in
    /// `±1/sqrt(fan_in)`, batch-norm scales 1 and shifts 0.
    pub fn build(kind: NetworkKind, config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut b = Builder {
            rng: ChaCha8Rng::seed_from_u64(seed),
            params: Vec::new(),
            names: Vec::new(),
            norms: Vec::new(),
        };
        let levels = config.depth_levels;
        let ch = |i: usize| config.channels(i);
        let layout = match kind {
            NetworkKind::Discriminator => {
                let body = (0..levels)
                    .map(|i| {
                        let c_in = if i == 0 { config.input_channels } else { ch(i - 1) };
                        b.unit(&format!("body{i}"), c_in, ch(i), DOWN, false, true)
                    })
                    .collect();
                let head_geom = ConvGeom {
                    kh: config.height >> levels,
                    kw: config.width >> levels,
                    stride: 1,
                    pad: 0,
                };
                let head = b.conv("head", ch(levels - 1), config.output_channels, head_geom, false, true);
                Layout::Discriminator { body, head }
            }
            NetworkKind::SparseGenerator | NetworkKind::DenseGenerator => {
                let residual = config.use_residual_encoder;
                let stem = residual.then(|| b.unit("stem", config.input_channels, ch(0), SAME3, false, true));
                let encoder = (0..levels)
                    .map(|i| {
                        let c_in = match (i, residual) {
                            (0, false) => config.input_channels,
                            (0, true) => ch(0),
                            _ => ch(i - 1),
                        };
                        let residual = residual.then(|| ResBlock {
                            first: b.conv(&format!("enc{i}.res.first"), c_in, c_in, SAME3, false, false),
                            norm: b.norm(&format!("enc{i}.res.norm"), c_in),
                            second: b.conv(&format!("enc{i}.res.second"), c_in, c_in, SAME3, false, true),
                        });
                        let down = b.unit(&format!("enc{i}.down"), c_in, ch(i), DOWN, false, true);
                        EncoderStage { residual, down }
                    })
                    .collect();
                let skip_factor = if config.use_skips { 2 } else { 1 };
                let decoder = (0..levels - 1)
                    .map(|k| {
                        let level = levels - 1 - k;
                        let c_in = if k == 0 { ch(level) } else { skip_factor * ch(level) };
                        b.unit(&format!("dec{k}.up"), c_in, ch(level - 1), DOWN, true, true)
                    })
                    .collect();
                let head_in = if levels > 1 { skip_factor * ch(0) } else { ch(0) };
                let head = b.conv("head", head_in, config.output_channels, DOWN, true, true);
                Layout::Generator {
                    stem,
                    encoder,
                    decoder,
                    head,
                }
            }
        };
        let running_mean = b.norms.iter().map(|&c| vec![0.0; c]).collect();
        let running_var = b.norms.iter().map(|&c| vec![1.0; c]).collect();
        Ok(Self {
            kind,
            config,
            layout,
            params: b.params,
            names: b.names,
            running_mean,
            running_var,
        })
    }

    pub fn kind(&self) -> NetworkKind {
        self.kind
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    /// Number of trainable scalars (running statistics excluded).
    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    pub fn running_stats(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.running_mean, &self.running_var)
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(Tensor::all_finite)
            && self.running_mean.iter().chain(&self.running_var).flatten().all(|v| v.is_finite())
    }

    /// Replaces parameters and running statistics, checking shapes.
    pub fn load_state(&mut self, params: Vec<Tensor>, mean: Vec<Vec<f64>>, var: Vec<Vec<f64>>) -> Result<()> {
        let same_params = params.len() == self.params.len()
            && params.iter().zip(&self.params).all(|(a, b)| a.shape() == b.shape());
        let same_stats = |new: &[Vec<f64>], old: &[Vec<f64>]| {
            new.len() == old.len() && new.iter().zip(old).all(|(a, b)| a.len() == b.len())
        };
        if !same_params || !same_stats(&mean, &self.running_mean) || !same_stats(&var, &self.running_var) {
            return Err(Error::Corrupt(format!("stored {} state does not match its config", self.kind.as_str())));
        }
        self.params = params;
        self.running_mean = mean;
        self.running_var = var;
        Ok(())
    }

    /// Folds observed batch statistics into the running averages.
    pub fn update_running_stats(&mut self, stats: &[BatchStats]) {
        assert_eq!(stats.len(), self.running_mean.len(), "one statistics entry per norm layer");
        for (slot, s) in stats.iter().enumerate() {
            for (r, &m) in self.running_mean[slot].iter_mut().zip(&s.mean) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
            }
            for (r, &v) in self.running_var[slot].iter_mut().zip(&s.var) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v;
            }
        }
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 4 || shape[0] == 0 || shape[1] != self.config.input_channels {
            return Err(Error::Shape(format!(
                "{} expects [N, {}, H, W] input, got {shape:?}",
                self.kind.as_str(),
                self.config.input_channels
            )));
        }
        self.config.check_input_size(shape[2], shape[3])?;
        if self.kind == NetworkKind::Discriminator && (shape[2], shape[3]) != (self.config.height, self.config.width) {
            return Err(Error::Shape(format!(
                "discriminator built for {}x{}, got {}x{}",
                self.config.height, self.config.width, shape[2], shape[3]
            )));
        }
        Ok(())
    }

    /// Records a forward pass on `g`. Output is `[N, out, H, W]` in (0, 1)
    /// for generators and `[N, 1, 1, 1]` in (0, 1) for discriminators.
    pub fn forward(&self, g: &mut Graph, input: Var, mode: Mode) -> Result<ForwardPass> {
        self.check_input(g.value(input).shape())?;
        let params: Vec<Var> = self
            .params
            .iter()
            .map(|p| match mode {
                Mode::Train => g.param(p.clone()),
                Mode::Eval | Mode::Frozen => g.input(p.clone()),
            })
            .collect();
        let mut ctx = Ctx {
            net: self,
            mode,
            params: &params,
            stats: Vec::new(),
        };
        let output = ctx.run(g, input);
        let stats = ctx.stats;
        Ok(ForwardPass { output, params, stats })
    }

    /// Eval-mode forward on a standalone tensor.
    pub fn predict(&self, input: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let x = g.input(input.clone());
        let pass = self.forward(&mut g, x, Mode::Eval)?;
        Ok(g.value(pass.output).clone())
    }
}

struct Ctx<'a> {
    net: &'a Network,
    mode: Mode,
    params: &'a [Var],
    stats: Vec<BatchStats>,
}

impl Ctx<'_> {
    fn conv(&self, g: &mut Graph, x: Var, c: &Conv) -> Var {
        let w = self.params[c.weight];
        let b = c.bias.map(|i| self.params[i]);
        if c.transpose {
            g.conv_transpose2d(x, w, b, c.geom)
        } else {
            g.conv2d(x, w, b, c.geom)
        }
    }

    fn norm(&mut self, g: &mut Graph, x: Var, n: &Norm) -> Var {
        let (gamma, beta) = (self.params[n.gamma], self.params[n.beta]);
        match self.mode {
            Mode::Eval => {
                let mode = BatchNormMode::Eval {
                    mean: &self.net.running_mean[n.slot],
                    var: &self.net.running_var[n.slot],
                };
                g.batch_norm(x, gamma, beta, mode).0
            }
            Mode::Train | Mode::Frozen => {
                let (y, stats) = g.batch_norm(x, gamma, beta, BatchNormMode::Train);
                if self.mode == Mode::Train {
                    debug_assert_eq!(self.stats.len(), n.slot);
                    self.stats.push(stats.expect("train mode yields statistics"));
                }
                y
            }
        }
    }

    fn unit(&mut self, g: &mut Graph, x: Var, u: &Unit) -> Var {
        let mut h = self.conv(g, x, &u.conv);
        if let Some(n) = &u.norm {
            h = self.norm(g, h, n);
        }
        g.leaky_relu(h, self.net.config.leaky_slope)
    }

    fn residual(&mut self, g: &mut Graph, x: Var, r: &ResBlock) -> Var {
        let h = self.conv(g, x, &r.first);
        let h = self.norm(g, h, &r.norm);
        let h = g.leaky_relu(h, self.net.config.leaky_slope);
        let h = self.conv(g, h, &r.second);
        g.add(x, h)
    }

    fn run(&mut self, g: &mut Graph, x: Var) -> Var {
        let net = self.net;
        match &net.layout {
            Layout::Discriminator { body, head } => {
                let mut h = x;
                for u in body {
                    h = self.unit(g, h, u);
                }
                let logit = self.conv(g, h, head);
                g.sigmoid(logit)
            }
            Layout::Generator {
                stem,
                encoder,
                decoder,
                head,
            } => {
                let mut h = x;
                if let Some(u) = stem {
                    h = self.unit(g, h, u);
                }
                let mut skips = Vec::with_capacity(encoder.len());
                for stage in encoder {
                    if let Some(r) = &stage.residual {
                        h = self.residual(g, h, r);
                    }
                    h = self.unit(g, h, &stage.down);
                    skips.push(h);
                }
                let levels = encoder.len();
                for (k, u) in decoder.iter().enumerate() {
                    h = self.unit(g, h, u);
                    if net.config.use_skips {
                        h = g.concat_channels(&[h, skips[levels - 2 - k]]);
                    }
                }
                let logit = self.conv(g, h, head);
                g.sigmoid(logit)
            }
        }
    }
}
