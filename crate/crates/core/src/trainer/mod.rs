//! Alternating discriminator/generator optimization, checkpoints and the
//! metrics log.

mod adam;
mod checkpoint;

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::{ArrayD, ArrayView4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{Adam, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT_VERSION, CHECKPOINT_MAGIC};

use crate::autograd::{Graph, Var};
use crate::data::{load_manifest, PairedDataset, Resolution, TripletBatch};
use crate::error::{ensure_valid, CaganError, Result};
use crate::networks::{Discriminator, DiscriminatorSpec, Generator, GeneratorSpec, ParamSet};
use crate::objectives::{
    adversarial_loss_d_graph, adversarial_loss_g_graph, cycle_loss_graph, generator_total_graph, identity_loss_graph,
    total_losses, DiscriminatorLoss, LossComponents, LossReport, LossWeights,
};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const FINAL_CHECKPOINT_FILE: &str = "final.cagan";

/// RNG stream ids derived from the run seed.
const STREAM_GENERATOR_INIT: u64 = 1;
const STREAM_DISCRIMINATOR_INIT: u64 = 2;
const STREAM_SAMPLING: u64 = 3;

/// Everything that determines a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub weights: LossWeights,
    pub resolution: Resolution,
    pub seed: u64,
    /// Zero disables periodic checkpoints; the final one is always written.
    pub checkpoint_every: u64,
    pub data_root: PathBuf,
    pub generator_base_channels: usize,
    pub generator_depth: usize,
    pub discriminator_base_channels: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 10_000,
            batch_size: 16,
            learning_rate: 2e-4,
            adam_beta1: ADAM_BETA1,
            adam_beta2: ADAM_BETA2,
            adam_epsilon: ADAM_EPSILON,
            weights: LossWeights::default(),
            resolution: Resolution::new(48, 64),
            seed: 0,
            checkpoint_every: 1000,
            data_root: PathBuf::new(),
            generator_base_channels: 16,
            generator_depth: 4,
            discriminator_base_channels: 16,
        }
    }
}

impl TrainConfig {
    pub fn generator_spec(&self) -> GeneratorSpec {
        GeneratorSpec {
            input_resolution: self.resolution,
            base_channels: self.generator_base_channels,
            depth: self.generator_depth,
        }
    }

    pub fn discriminator_spec(&self) -> DiscriminatorSpec {
        DiscriminatorSpec::standard(self.resolution, self.discriminator_base_channels)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_valid!(self.steps >= 1, "steps must be at least 1");
        ensure_valid!(self.batch_size >= 1, "batch_size must be at least 1");
        ensure_valid!(
            self.learning_rate.is_finite() && self.learning_rate > 0.0,
            "learning_rate must be positive, got {}",
            self.learning_rate
        );
        ensure_valid!(
            (0.0..1.0).contains(&self.adam_beta1) && (0.0..1.0).contains(&self.adam_beta2),
            "Adam betas must lie in [0, 1)"
        );
        ensure_valid!(self.adam_epsilon > 0.0, "adam_epsilon must be positive");
        self.weights.validate()?;
        self.generator_spec().validate()?;
        self.discriminator_spec().validate()?;
        Ok(())
    }

    /// Equal apart from the step budget and checkpoint cadence, the fields
    /// a resumed run may change.
    fn compatible_for_resume(&self, other: &TrainConfig) -> bool {
        let strip = |c: &TrainConfig| TrainConfig {
            steps: 0,
            checkpoint_every: 0,
            data_root: PathBuf::new(),
            ..c.clone()
        };
        strip(self) == strip(other)
    }
}

/// Networks, optimizer moments and the sampling stream of a run.
#[derive(Clone, Debug)]
pub struct TrainState {
    config: TrainConfig,
    generator: Generator<f32>,
    discriminator: Discriminator<f32>,
    adam_g: Adam,
    adam_d: Adam,
    step: u64,
    rng: ChaCha8Rng,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn constant4(g: &mut Graph<f32>, a: ArrayView4<f32>) -> Var {
    g.constant(a.to_owned().into_dyn())
}

fn collect_grads(grads: &mut crate::autograd::Gradients<f32>, vars: &[Var], params: &ParamSet<f32>) -> Vec<ArrayD<f32>> {
    vars.iter()
        .zip(params.tensors())
        .map(|(&v, t)| grads.take_or_zeros(v, t.shape()))
        .collect()
}

impl TrainState {
    /// Fresh networks drawn from the seed's generator and discriminator streams.
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let generator = Generator::new(config.generator_spec(), &mut stream(config.seed, STREAM_GENERATOR_INIT))?;
        let discriminator =
            Discriminator::new(config.discriminator_spec(), &mut stream(config.seed, STREAM_DISCRIMINATOR_INIT))?;
        let adam = |p: &ParamSet<f32>| Adam::new(p, config.adam_beta1, config.adam_beta2, config.adam_epsilon);
        Ok(TrainState {
            adam_g: adam(generator.params()),
            adam_d: adam(discriminator.params()),
            generator,
            discriminator,
            step: 0,
            rng: stream(config.seed, STREAM_SAMPLING),
            config,
        })
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        ckpt.config.validate()?;
        let generator = Generator::from_params(ckpt.config.generator_spec(), ckpt.generator)?;
        let discriminator = Discriminator::from_params(ckpt.config.discriminator_spec(), ckpt.discriminator)?;
        Ok(TrainState {
            config: ckpt.config,
            generator,
            discriminator,
            adam_g: ckpt.adam_g,
            adam_d: ckpt.adam_d,
            step: ckpt.step,
            rng: ckpt.rng,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            step: self.step,
            generator: self.generator.params().clone(),
            discriminator: self.discriminator.params().clone(),
            adam_g: self.adam_g.clone(),
            adam_d: self.adam_d.clone(),
            config: self.config.clone(),
            rng: self.rng.clone(),
        }
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn generator(&self) -> &Generator<f32> {
        &self.generator
    }

    pub fn discriminator(&self) -> &Discriminator<f32> {
        &self.discriminator
    }

    /// Completed steps.
    pub fn step(&self) -> u64 {
        self.step
    }

    /// Updates applied to the generator and the discriminator.
    pub fn update_counts(&self) -> (u64, u64) {
        (self.adam_g.steps(), self.adam_d.steps())
    }

    /// Draws the next batch from the run's sampling stream.
    pub fn sample_batch(&mut self, data: &PairedDataset) -> Result<TripletBatch> {
        data.sample_triplets(self.config.batch_size, &mut self.rng)
    }

    /// One discriminator update followed by one generator update, both at
    /// the configured learning rate.
    pub fn train_step(&mut self, batch: &TripletBatch) -> Result<LossReport> {
        let lr = self.config.learning_rate;
        self.train_step_with_rates(batch, lr, lr)
    }

    /// [`TrainState::train_step`] with separate generator and
    /// discriminator learning rates.
    pub fn train_step_with_rates(&mut self, batch: &TripletBatch, lr_g: f64, lr_d: f64) -> Result<LossReport> {
        let step = self.step + 1;
        self.generator.check_inputs(batch.x.view(), batch.y_i.view(), batch.y_j.view())?;
        let d_loss = self.discriminator_update(batch, lr_d)?;
        let (g_adv, l_id, l_cyc) = self.generator_update(batch, lr_g)?;
        let report = total_losses(
            &LossComponents {
                d_real: d_loss.real as f64,
                d_fake: d_loss.fake as f64,
                d_mismatch: d_loss.mismatch as f64,
                g_adv,
                l_id,
                l_cyc,
            },
            &self.config.weights,
            step,
        )?;
        self.step = step;
        Ok(report)
    }

    /// Records the discriminator objective on `batch` with the generated
    /// images supplied as constants. Returns the graph, the bound
    /// discriminator parameters and the loss handles.
    fn discriminator_graph(&self, batch: &TripletBatch, trainable: bool) -> Result<(Graph<f32>, Vec<Var>, Var, [Var; 3])> {
        let fake = self.generator.forward(batch.x.view(), batch.y_i.view(), batch.y_j.view())?.composite;
        let mut g = Graph::new();
        let params = self.discriminator.params().bind(&mut g, trainable);
        let x = constant4(&mut g, batch.x.view());
        let y_i = constant4(&mut g, batch.y_i.view());
        let y_j = constant4(&mut g, batch.y_j.view());
        let fake = constant4(&mut g, fake.view());
        let d = &self.discriminator;
        let real_scores = d.forward_graph(&mut g, &params, x, y_i);
        let fake_scores = d.forward_graph(&mut g, &params, fake, y_j);
        let mismatch_scores = d.forward_graph(&mut g, &params, x, y_j);
        let loss = adversarial_loss_d_graph(&mut g, real_scores, fake_scores, mismatch_scores);
        Ok((g, params, loss.total, [loss.real, loss.fake, loss.mismatch]))
    }

    /// Discriminator objective of the current networks on `batch`.
    pub fn discriminator_loss(&self, batch: &TripletBatch) -> Result<DiscriminatorLoss<f32>> {
        let (g, _, total, [real, fake, mismatch]) = self.discriminator_graph(batch, false)?;
        Ok(DiscriminatorLoss {
            total: g.scalar(total),
            real: g.scalar(real),
            fake: g.scalar(fake),
            mismatch: g.scalar(mismatch),
        })
    }

    fn discriminator_update(&mut self, batch: &TripletBatch, lr: f64) -> Result<DiscriminatorLoss<f32>> {
        let (g, params, total, [real, fake, mismatch]) = self.discriminator_graph(batch, true)?;
        let loss = DiscriminatorLoss {
            total: g.scalar(total),
            real: g.scalar(real),
            fake: g.scalar(fake),
            mismatch: g.scalar(mismatch),
        };
        if !loss.total.is_finite() {
            return Err(CaganError::NonFinite {
                term: "d_total".into(),
                step: self.step + 1,
            });
        }
        let mut grads = g.backward(total);
        let grads = collect_grads(&mut grads, &params, self.discriminator.params());
        self.adam_d.update(self.discriminator.params_mut(), &grads, lr);
        Ok(loss)
    }

    /// Returns `(g_adv, l_id, l_cyc)` measured before the update.
    fn generator_update(&mut self, batch: &TripletBatch, lr: f64) -> Result<(f64, f64, f64)> {
        let mut g = Graph::new();
        let g_params = self.generator.params().bind(&mut g, true);
        let d_params = self.discriminator.params().bind(&mut g, false);
        let x = constant4(&mut g, batch.x.view());
        let y_i = constant4(&mut g, batch.y_i.view());
        let y_j = constant4(&mut g, batch.y_j.view());

        let swapped = self.generator.forward_graph(&mut g, &g_params, x, y_i, y_j);
        let scores = self.discriminator.forward_graph(&mut g, &d_params, swapped.composite, y_j);
        let g_adv = adversarial_loss_g_graph(&mut g, scores);
        let l_id = identity_loss_graph(&mut g, swapped.alpha);
        let back = self.generator.forward_graph(&mut g, &g_params, swapped.composite, y_j, y_i);
        let l_cyc = cycle_loss_graph(&mut g, x, back.composite);
        let total = generator_total_graph(&mut g, g_adv, l_id, l_cyc, &self.config.weights);

        let values = (g.scalar(g_adv) as f64, g.scalar(l_id) as f64, g.scalar(l_cyc) as f64);
        if !g.scalar(total).is_finite() {
            let term = [("g_adv", values.0), ("l_id", values.1), ("l_cyc", values.2)]
                .into_iter()
                .find(|(_, v)| !v.is_finite())
                .map_or("g_total", |(t, _)| t);
            return Err(CaganError::NonFinite {
                term: term.into(),
                step: self.step + 1,
            });
        }
        let mut grads = g.backward(total);
        let grads = collect_grads(&mut grads, &g_params, self.generator.params());
        self.adam_g.update(self.generator.params_mut(), &grads, lr);
        Ok(values)
    }
}

/// One line of the metrics log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    #[serde(flatten)]
    pub report: LossReport,
}

/// Parses a metrics log.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let file = File::open(path).map_err(|e| CaganError::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| CaganError::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Checkpoint file name for a periodic save.
pub fn checkpoint_file_name(step: u64) -> String {
    format!("ckpt-{step:06}.cagan")
}

/// Result of [`train_loop`].
#[derive(Debug)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub final_checkpoint: PathBuf,
    pub metrics: PathBuf,
}

/// Trains until `config.steps` steps are complete, writing periodic and
/// final checkpoints plus `metrics.jsonl` into `out_dir`.
///
/// With `resume`, training continues from that checkpoint; metrics lines
/// beyond its step are discarded so the log matches an uninterrupted run.
pub fn train_loop(config: &TrainConfig, out_dir: &Path, resume: Option<&Path>) -> Result<TrainOutcome> {
    config.validate()?;
    let resumed = resume.map(load_checkpoint).transpose()?;
    if let Some(ckpt) = &resumed {
        ensure_valid!(
            ckpt.config.compatible_for_resume(config),
            "checkpoint was written with a different configuration"
        );
        ensure_valid!(
            ckpt.step <= config.steps,
            "checkpoint is at step {} but only {} steps were requested",
            ckpt.step,
            config.steps
        );
    }
    let manifest = load_manifest(&config.data_root)?;
    let data = PairedDataset::load(manifest, config.resolution)?;

    let mut state = match resumed {
        Some(ckpt) => {
            let mut state = TrainState::from_checkpoint(ckpt)?;
            state.config = config.clone();
            state
        }
        None => TrainState::new(config.clone())?,
    };

    fs::create_dir_all(out_dir).map_err(|e| CaganError::io(out_dir, e))?;
    let metrics_path = out_dir.join(METRICS_FILE);
    let kept = if resume.is_some() && metrics_path.exists() {
        read_metrics(&metrics_path)?
            .into_iter()
            .filter(|r| r.step <= state.step)
            .collect()
    } else {
        Vec::new()
    };
    let file = File::create(&metrics_path).map_err(|e| CaganError::io(&metrics_path, e))?;
    let mut metrics = BufWriter::new(file);
    let write_err = |e: std::io::Error| CaganError::io(&metrics_path, e);
    for record in &kept {
        writeln!(metrics, "{}", serde_json::to_string(record)?).map_err(write_err)?;
    }

    while state.step < config.steps {
        let batch = state.sample_batch(&data)?;
        let report = match state.train_step(&batch) {
            Ok(r) => r,
            Err(e) => {
                metrics.flush().map_err(write_err)?;
                return Err(e);
            }
        };
        let record = MetricsRecord {
            step: state.step,
            report,
        };
        writeln!(metrics, "{}", serde_json::to_string(&record)?).map_err(write_err)?;
        if state.step % 100 == 0 || state.step == 1 {
            log::info!(
                "step {} d_total {:.4} g_total {:.4} g_adv {:.4} l_id {:.4} l_cyc {:.4}",
                state.step,
                report.d_total,
                report.g_total,
                report.g_adv,
                report.l_id,
                report.l_cyc
            );
        } else {
            log::debug!("step {} {:?}", state.step, report);
        }
        if config.checkpoint_every > 0 && state.step % config.checkpoint_every == 0 && state.step < config.steps {
            metrics.flush().map_err(write_err)?;
            save_checkpoint(&state.to_checkpoint(), &out_dir.join(checkpoint_file_name(state.step)))?;
        }
    }
    metrics.flush().map_err(write_err)?;
    let final_checkpoint = out_dir.join(FINAL_CHECKPOINT_FILE);
    save_checkpoint(&state.to_checkpoint(), &final_checkpoint)?;
    Ok(TrainOutcome {
        state,
        final_checkpoint,
        metrics: metrics_path,
    })
}
