//! Joint optimization of the generators against the two discriminators, and
//! inference with a trained state.

mod config;

use std::fs;
use std::path::Path;

use depthduet_tensor::{Adam, AdamConfig, Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use config::{Ablation, AblationFlags, TrainConfig};

use crate::data::{derive_seed, mixed_batch, Batch, DepthImage, Domain, RgbImage, Sample};
use crate::error::{Error, Result};
use crate::losses::ops::{binary_cross_entropy, reconstruction, smoothness};
use crate::losses::{total_loss, LossComponents, LossReport, LOSS_CSV_HEADER};
use crate::model::{
    build_dense_generator, build_discriminator, build_sparse_generator, Checkpoint, Mode, Network, OptimizerState,
};

/// Samples of one batch laid out as normalized tensors.
struct BatchTensors {
    rgb: Tensor,
    intensity: Tensor,
    sparse: Tensor,
    dense: Tensor,
    /// Per sample: `None` for complete ground truth, else its validity.
    masks: Vec<Option<Vec<bool>>>,
    /// `[N, 1, H, W]` validity as 0/1 (all ones for complete ground truth).
    mask_tensor: Tensor,
    synthetic: Vec<usize>,
    real: Vec<usize>,
}

impl BatchTensors {
    fn new(batch: &Batch, d_max: f64, height: usize, width: usize) -> Result<Self> {
        if batch.is_empty() {
            return Err(Error::Dataset("empty batch".into()));
        }
        for s in &batch.samples {
            if (s.height(), s.width()) != (height, width) {
                return Err(Error::Shape(format!(
                    "sample '{}' is {}x{}, the model is configured for {height}x{width}",
                    s.id,
                    s.height(),
                    s.width()
                )));
            }
        }
        let plane = |s: &Sample, f: &dyn Fn(&Sample) -> Vec<f64>| Tensor::new([1, height, width], f(s));
        let stack = |f: &dyn Fn(&Sample) -> Vec<f64>| {
            Tensor::stack(&batch.samples.iter().map(|s| plane(s, f)).collect::<Vec<_>>())
        };
        let rgb = Tensor::stack(
            &batch.samples.iter().map(|s| s.rgb.to_tensor().reshape([3, height, width])).collect::<Vec<_>>(),
        );
        let intensity = stack(&|s| s.rgb.intensity());
        let sparse = stack(&|s| s.sparse_gt.data().iter().map(|v| v / d_max).collect());
        let dense = stack(&|s| s.dense_gt.data().iter().map(|v| v / d_max).collect());
        let masks: Vec<Option<Vec<bool>>> = batch
            .samples
            .iter()
            .map(|s| match s.domain {
                Domain::Synthetic => None,
                Domain::Real => Some(s.dense_mask.data().to_vec()),
            })
            .collect();
        let mask_tensor = stack(&|s| match s.domain {
            Domain::Synthetic => vec![1.0; height * width],
            Domain::Real => s.dense_mask.data().iter().map(|&m| f64::from(u8::from(m))).collect(),
        });
        Ok(Self {
            rgb,
            intensity,
            sparse,
            dense,
            masks,
            mask_tensor,
            synthetic: batch.indices_of(Domain::Synthetic),
            real: batch.indices_of(Domain::Real),
        })
    }
}

/// Generator forward graph of one batch.
struct GenPass {
    graph: Graph,
    rgb: Var,
    sparse: Option<Var>,
    dense: Var,
    sg: crate::model::ForwardPass,
    dg: Option<crate::model::ForwardPass>,
}

/// Networks, optimizer moments and the step counter.
///
/// Batches are drawn from a seed derived from `(config.seed, step)`, so the
/// step counter is the whole sampling state.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub config: TrainConfig,
    pub sg: Network,
    /// Absent in the single-network ablation.
    pub dg: Option<Network>,
    pub d_s: Network,
    pub d_r: Network,
    opt_sg: Adam,
    opt_dg: Option<Adam>,
    opt_d_s: Adam,
    opt_d_r: Adam,
    pub step: u64,
}

fn adam(config: &TrainConfig, net: &Network) -> Adam {
    let c = AdamConfig {
        learning_rate: config.learning_rate,
        beta1: config.adam_beta1,
        beta2: config.adam_beta2,
        ..AdamConfig::default()
    };
    Adam::new(c, net.params())
}

fn non_finite(component: &str, step: u64) -> Error {
    Error::NonFinite {
        component: component.into(),
        step: Some(step),
    }
}

/// Sums the gradients of parameters that were registered once per pass.
fn collect_grads(grads: &depthduet_tensor::Gradients, passes: &[&[Var]]) -> Vec<Option<Tensor>> {
    let n = passes[0].len();
    (0..n)
        .map(|i| {
            let mut acc: Option<Tensor> = None;
            for p in passes {
                if let Some(g) = grads.get(p[i]) {
                    match &mut acc {
                        Some(a) => a.add_assign(g),
                        None => acc = Some(g.clone()),
                    }
                }
            }
            acc
        })
        .collect()
}

fn grads_finite(grads: &[Option<Tensor>]) -> bool {
    grads.iter().flatten().all(Tensor::all_finite)
}

/// One discriminator update on real pairs `(x, gt)` against `(x, fake)`.
/// Returns the loss before the update.
fn discriminator_update(
    net: &mut Network,
    opt: &mut Adam,
    real_pair: Tensor,
    fake_pair: Tensor,
    component: &str,
    step: u64,
) -> Result<f64> {
    let mut g = Graph::new();
    let real_in = g.input(real_pair);
    let fake_in = g.input(fake_pair);
    let real = net.forward(&mut g, real_in, Mode::Train)?;
    let fake = net.forward(&mut g, fake_in, Mode::Train)?;
    let l_real = binary_cross_entropy(&mut g, real.output, true);
    let l_fake = binary_cross_entropy(&mut g, fake.output, false);
    let loss = g.weighted_sum(&[(l_real, 1.0), (l_fake, 1.0)]);
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Err(non_finite(component, step));
    }
    let grads = collect_grads(&g.backward(loss), &[&real.params, &fake.params]);
    if !grads_finite(&grads) {
        return Err(non_finite(&format!("{component} gradient"), step));
    }
    opt.step(net.params_mut(), &grads);
    net.update_running_stats(&real.stats);
    net.update_running_stats(&fake.stats);
    Ok(value)
}

impl TrainState {
    /// Fresh networks and optimizers, all seeded from `config.seed`.
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate_model()?;
        let seed = |i| derive_seed(config.seed, 10, i);
        let sg = build_sparse_generator(&config.sparse_generator_config(), seed(0))?;
        let dg = if config.ablation.single_network {
            None
        } else {
            Some(build_dense_generator(&config.dense_generator_config(), seed(1))?)
        };
        let d_s = build_discriminator(&config.discriminator_config(), seed(2))?;
        let d_r = build_discriminator(&config.discriminator_config(), seed(3))?;
        Ok(Self {
            opt_sg: adam(&config, &sg),
            opt_dg: dg.as_ref().map(|d| adam(&config, d)),
            opt_d_s: adam(&config, &d_s),
            opt_d_r: adam(&config, &d_r),
            config,
            sg,
            dg,
            d_s,
            d_r,
            step: 0,
        })
    }

    /// Sets the learning rate of every optimizer.
    pub fn set_learning_rate(&mut self, lr: f64) {
        self.config.learning_rate = lr;
        for opt in [&mut self.opt_sg, &mut self.opt_d_s, &mut self.opt_d_r] {
            opt.config.learning_rate = lr;
        }
        if let Some(o) = &mut self.opt_dg {
            o.config.learning_rate = lr;
        }
    }

    /// Number of trainable scalars in the generator path.
    pub fn generator_parameter_count(&self) -> usize {
        self.sg.parameter_count() + self.dg.as_ref().map_or(0, Network::parameter_count)
    }

    fn tensors(&self, batch: &Batch) -> Result<BatchTensors> {
        BatchTensors::new(batch, self.config.d_max, self.config.height, self.config.width)
    }

    /// Batch slots whose dense-generator input is the measured sparse depth
    /// at the current step.
    fn measured_slots(&self, n: usize) -> Vec<bool> {
        let p = self.config.measured_input_ratio;
        if p <= 0.0 || self.dg.is_none() {
            return vec![false; n];
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed, 12, self.step));
        (0..n).map(|_| rng.random_bool(p)).collect()
    }

    fn generator_forward(&self, bt: &BatchTensors, mode: Mode) -> Result<GenPass> {
        let mut graph = Graph::new();
        let rgb = graph.input(bt.rgb.clone());
        let sg = self.sg.forward(&mut graph, rgb, mode)?;
        let (sparse, dense, dg) = match &self.dg {
            Some(dg) => {
                let slots = self.measured_slots(bt.masks.len());
                let dg_in = if slots.contains(&true) {
                    let (_, _, h, w) = bt.sparse.dims4();
                    let keep: Vec<f64> =
                        slots.iter().flat_map(|&m| std::iter::repeat_n(if m { 0.0 } else { 1.0 }, h * w)).collect();
                    let keep = Tensor::new(bt.sparse.shape().to_vec(), keep);
                    let measured = bt.sparse.zip_map(&keep, |s, k| s * (1.0 - k));
                    let generated = graph.mul_const(sg.output, keep);
                    let measured = graph.input(measured);
                    graph.add(generated, measured)
                } else {
                    sg.output
                };
                let pass = dg.forward(&mut graph, dg_in, mode)?;
                (Some(sg.output), pass.output, Some(pass))
            }
            None => (None, sg.output, None),
        };
        Ok(GenPass {
            graph,
            rgb,
            sparse,
            dense,
            sg,
            dg,
        })
    }

    /// Generator input to a discriminator: `(x, fake)` for the samples
    /// `idx`, with the fake masked for real-domain samples when configured.
    fn fake_pair(&self, g: &mut Graph, rgb: Var, fake: Var, bt: &BatchTensors, idx: &[usize], real: bool) -> Var {
        let x = g.select(rgb, idx);
        let mut y = g.select(fake, idx);
        if real && self.config.mask_real_fake {
            y = g.mul_const(y, bt.mask_tensor.select(idx));
        }
        g.concat_channels(&[x, y])
    }

    /// Adds the generator objective to `pass.graph`. Discriminators run
    /// frozen: gradients reach the generated depth, not their parameters.
    fn generator_objective(&self, pass: &mut GenPass, bt: &BatchTensors) -> Result<(Var, LossComponents)> {
        let w = self.config.effective_weights();
        let a = self.config.ablation;
        let g = &mut pass.graph;
        let mut comps = LossComponents::default();
        let mut terms = Vec::new();
        if let Some(sparse) = pass.sparse {
            let v = reconstruction(g, sparse, bt.sparse.clone(), vec![None; bt.masks.len()])?;
            comps.rec_sg = g.value(v).item();
            terms.push((v, w.rec_sg));
        }
        let v = reconstruction(g, pass.dense, bt.dense.clone(), bt.masks.clone())?;
        comps.rec_dg = g.value(v).item();
        terms.push((v, w.rec_dg));
        if !a.disable_adv {
            for (idx, net, real) in [(&bt.synthetic, &self.d_s, false), (&bt.real, &self.d_r, true)] {
                if idx.is_empty() {
                    continue;
                }
                let pair = self.fake_pair(g, pass.rgb, pass.dense, bt, idx, real);
                let d = net.forward(g, pair, Mode::Frozen)?;
                let v = binary_cross_entropy(g, d.output, true);
                comps.adv_g += g.value(v).item();
                terms.push((v, w.adv));
            }
        }
        if !a.disable_smooth {
            let v = smoothness(g, pass.dense, bt.intensity.clone(), self.config.edge_weighting)?;
            comps.smooth = g.value(v).item();
            terms.push((v, w.smooth));
        }
        Ok((g.weighted_sum(&terms), comps))
    }

    /// Value of the generator objective on `batch` as a pure function of
    /// the current parameters (batch statistics, nothing updated).
    pub fn generator_objective_value(&self, batch: &Batch) -> Result<f64> {
        let bt = self.tensors(batch)?;
        let mut pass = self.generator_forward(&bt, Mode::Frozen)?;
        let (total, _) = self.generator_objective(&mut pass, &bt)?;
        Ok(pass.graph.value(total).item())
    }

    /// Analytic gradient of [`TrainState::generator_objective_value`] with
    /// respect to the sparse generator's parameters.
    pub fn sparse_generator_gradients(&self, batch: &Batch) -> Result<Vec<Option<Tensor>>> {
        let bt = self.tensors(batch)?;
        let mut pass = self.generator_forward(&bt, Mode::Train)?;
        let (total, _) = self.generator_objective(&mut pass, &bt)?;
        let grads = pass.graph.backward(total);
        Ok(collect_grads(&grads, &[&pass.sg.params]))
    }

    /// Discriminator half of a step: one update per domain present.
    fn update_discriminators(&mut self, bt: &BatchTensors, fake: &Tensor) -> Result<(f64, f64)> {
        let step = self.step;
        let mask = self.config.mask_real_fake;
        let pairs = |idx: &[usize], real: bool| {
            let x = bt.rgb.select(idx);
            let gt = bt.dense.select(idx);
            let mut y = fake.select(idx);
            if real && mask {
                y = y.zip_map(&bt.mask_tensor.select(idx), |a, b| a * b);
            }
            (Tensor::cat_channels(&[&x, &gt]), Tensor::cat_channels(&[&x, &y]))
        };
        let mut losses = (0.0, 0.0);
        if !bt.synthetic.is_empty() {
            let (r, f) = pairs(&bt.synthetic, false);
            losses.0 = discriminator_update(&mut self.d_s, &mut self.opt_d_s, r, f, "adv_d_s", step)?;
        }
        if !bt.real.is_empty() {
            let (r, f) = pairs(&bt.real, true);
            losses.1 = discriminator_update(&mut self.d_r, &mut self.opt_d_r, r, f, "adv_d_r", step)?;
        }
        Ok(losses)
    }

    /// Generator half of a step on an already recorded forward pass.
    fn update_generators(&mut self, mut pass: GenPass, bt: &BatchTensors, d_losses: (f64, f64)) -> Result<LossReport> {
        let step = self.step;
        let (total, mut comps) = self.generator_objective(&mut pass, bt)?;
        comps.adv_d_s = d_losses.0;
        comps.adv_d_r = d_losses.1;
        let report = total_loss(&comps, &self.config.effective_weights()).map_err(|e| match e {
            Error::NonFinite { component, .. } => non_finite(&component, step),
            other => other,
        })?;
        if !pass.graph.value(total).item().is_finite() {
            return Err(non_finite("total", step));
        }
        let grads = pass.graph.backward(total);
        let sg_grads = collect_grads(&grads, &[&pass.sg.params]);
        if !grads_finite(&sg_grads) {
            return Err(non_finite("sparse generator gradient", step));
        }
        if let (Some(dg), Some(opt), Some(dp)) = (&mut self.dg, &mut self.opt_dg, &pass.dg) {
            let dg_grads = collect_grads(&grads, &[&dp.params]);
            if !grads_finite(&dg_grads) {
                return Err(non_finite("dense generator gradient", step));
            }
            opt.step(dg.params_mut(), &dg_grads);
            dg.update_running_stats(&dp.stats);
        }
        self.opt_sg.step(self.sg.params_mut(), &sg_grads);
        self.sg.update_running_stats(&pass.sg.stats);
        Ok(report)
    }

    /// One discriminator update per domain in the batch, then one generator
    /// update on the weighted objective. Increments the step counter.
    pub fn train_step(&mut self, batch: &Batch) -> Result<LossReport> {
        let bt = self.tensors(batch)?;
        let pass = self.generator_forward(&bt, Mode::Train)?;
        let d_losses = if self.config.ablation.disable_adv {
            (0.0, 0.0)
        } else {
            let fake = pass.graph.value(pass.dense).clone();
            self.update_discriminators(&bt, &fake)?
        };
        let report = self.update_generators(pass, &bt, d_losses)?;
        self.step += 1;
        Ok(report)
    }

    /// The batch drawn at the current step.
    pub fn next_batch(&self, dataset: &[Sample]) -> Result<Batch> {
        mixed_batch(
            dataset,
            self.config.batch_size,
            self.config.effective_synthetic_ratio(),
            derive_seed(self.config.seed, 11, self.step),
        )
    }

    /// Runs `steps` training steps. With a checkpoint directory and
    /// `config.checkpoint_every > 0`, saves `step_NNNNNN.ckpt` whenever the
    /// step counter reaches a multiple of it. Returns `(step, report)` pairs,
    /// where `step` is the counter value before the update.
    pub fn run(
        &mut self,
        dataset: &[Sample],
        steps: u64,
        checkpoint_dir: Option<&Path>,
        mut on_step: impl FnMut(u64, &LossReport),
    ) -> Result<Vec<(u64, LossReport)>> {
        if dataset.is_empty() {
            return Err(Error::Dataset("training set is empty".into()));
        }
        let mut trace = Vec::with_capacity(steps as usize);
        for _ in 0..steps {
            let batch = self.next_batch(dataset)?;
            let step = self.step;
            let report = self.train_step(&batch)?;
            on_step(step, &report);
            trace.push((step, report));
            let every = self.config.checkpoint_every;
            if let Some(dir) = checkpoint_dir {
                if every > 0 && self.step.is_multiple_of(every) {
                    self.save(dir.join(format!("step_{:06}.ckpt", self.step)))?;
                }
            }
        }
        Ok(trace)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let config =
            serde_json::to_value(&self.config).map_err(|e| Error::Inconsistent(format!("config echo: {e}")))?;
        let mut networks = vec![("sg".to_string(), self.sg.clone())];
        let mut optimizers = vec![("sg".to_string(), OptimizerState::of(&self.opt_sg))];
        if let (Some(dg), Some(opt)) = (&self.dg, &self.opt_dg) {
            networks.push(("dg".into(), dg.clone()));
            optimizers.push(("dg".into(), OptimizerState::of(opt)));
        }
        networks.push(("d_s".into(), self.d_s.clone()));
        networks.push(("d_r".into(), self.d_r.clone()));
        optimizers.push(("d_s".into(), OptimizerState::of(&self.opt_d_s)));
        optimizers.push(("d_r".into(), OptimizerState::of(&self.opt_d_r)));
        Ok(Checkpoint {
            step: self.step,
            config,
            networks,
            optimizers,
        })
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let config: TrainConfig = serde_json::from_value(ckpt.config.clone())
            .map_err(|e| Error::Corrupt(format!("checkpoint config echo: {e}")))?;
        let net = |name: &str| {
            ckpt.network(name)
                .cloned()
                .ok_or_else(|| Error::Corrupt(format!("checkpoint has no '{name}' network")))
        };
        let opt = |name: &str, n: &Network| -> Result<Adam> {
            let o = ckpt
                .optimizer(name)
                .cloned()
                .ok_or_else(|| Error::Corrupt(format!("checkpoint has no '{name}' optimizer")))?;
            let shapes_match = o.first.len() == n.params().len()
                && o.first.iter().zip(n.params()).all(|(m, p)| m.shape() == p.shape());
            if !shapes_match {
                return Err(Error::Corrupt(format!("optimizer '{name}' does not match its network")));
            }
            Ok(o.into_adam())
        };
        let sg = net("sg")?;
        let dg = if config.ablation.single_network {
            None
        } else {
            Some(net("dg")?)
        };
        let d_s = net("d_s")?;
        let d_r = net("d_r")?;
        if sg.config() != &config.sparse_generator_config() {
            return Err(Error::Corrupt("sparse generator config disagrees with the config echo".into()));
        }
        Ok(Self {
            opt_sg: opt("sg", &sg)?,
            opt_dg: dg.as_ref().map(|d| opt("dg", d)).transpose()?,
            opt_d_s: opt("d_s", &d_s)?,
            opt_d_r: opt("d_r", &d_r)?,
            config,
            sg,
            dg,
            d_s,
            d_r,
            step: ckpt.step,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::model::save_checkpoint(&self.to_checkpoint()?, path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(crate::model::load_checkpoint(path)?)
    }

    fn check_image(&self, h: usize, w: usize) -> Result<()> {
        self.sg.config().check_input_size(h, w)
    }

    /// First-stage output in meters. In the single-network ablation this is
    /// already the dense estimate.
    pub fn infer_sparse(&self, rgb: &RgbImage) -> Result<DepthImage> {
        self.check_image(rgb.height(), rgb.width())?;
        let out = self.sg.predict(&rgb.to_tensor())?;
        DepthImage::from_normalized(rgb.height(), rgb.width(), out.data(), self.config.d_max)
    }

    /// Dense depth (m) from sparse depth (m) through the dense generator alone.
    pub fn infer_complete(&self, sparse: &DepthImage) -> Result<DepthImage> {
        let dg = self
            .dg
            .as_ref()
            .ok_or_else(|| Error::Unsupported("the single-network model has no completion stage".into()))?;
        self.check_image(sparse.height(), sparse.width())?;
        let out = dg.predict(&sparse.to_normalized(self.config.d_max))?;
        DepthImage::from_normalized(sparse.height(), sparse.width(), out.data(), self.config.d_max)
    }

    /// Dense depth (m) from a single RGB image.
    pub fn infer_estimate(&self, rgb: &RgbImage) -> Result<DepthImage> {
        Ok(self.forward_full(rgb)?.1)
    }

    /// `(sparse, dense)` predictions in meters. The dense part is computed
    /// from the sparse part exactly as [`TrainState::infer_complete`] would.
    pub fn forward_full(&self, rgb: &RgbImage) -> Result<(DepthImage, DepthImage)> {
        let sparse = self.infer_sparse(rgb)?;
        if self.dg.is_none() {
            return Ok((sparse.clone(), sparse));
        }
        let dense = self.infer_complete(&sparse)?;
        Ok((sparse, dense))
    }
}

/// Builds a fresh state and runs `config.steps` steps.
pub fn train(
    config: TrainConfig,
    dataset: &[Sample],
    checkpoint_dir: Option<&Path>,
) -> Result<(TrainState, Vec<(u64, LossReport)>)> {
    config.validate()?;
    let steps = config.steps;
    let mut state = TrainState::new(config)?;
    let trace = state.run(dataset, steps, checkpoint_dir, |_, _| {})?;
    Ok((state, trace))
}

pub fn write_loss_csv(path: impl AsRef<Path>, trace: &[(u64, LossReport)]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from(LOSS_CSV_HEADER);
    out.push('\n');
    for (step, r) in trace {
        out.push_str(&r.csv_row(*step));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_loss_csv(path: impl AsRef<Path>) -> Result<Vec<(u64, LossReport)>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(LOSS_CSV_HEADER) {
        return Err(Error::format(path, format!("expected header '{LOSS_CSV_HEADER}'")));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| LossReport::parse_csv_row(l).map_err(|e| Error::format(path, e.to_string())))
        .collect()
}

#[cfg(test)]
mod tests;
