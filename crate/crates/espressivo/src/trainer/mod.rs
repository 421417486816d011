//! Optimization loop over the penalized lower bound, with deterministic
//! batching, metrics logging, and bit-exact checkpoint/resume.

pub mod adam;
pub mod checkpoint;
pub mod data;

pub use adam::{clip_grad_norm, Adam};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use data::{make_batch, steps_per_epoch, Dataset, LoadedPiece, DATA_MANIFEST};

use std::io::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmvae::{self, GaussianSequence, LatentSequence, LossBreakdown};
use crate::model::{Batch, Factor, GmVae, ModelConfig};
use crate::rng::{derive_rng, stream};

/// Training hyperparameters. Serialized into config files, run manifests,
/// and checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_steps: u64,
    /// Fraction of `max_steps` over which the KL weight ramps 0 -> 1.
    pub kl_warmup_fraction: f64,
    /// Weight of the auxiliary cross-entropy terms.
    pub lambda_ce: f64,
    /// Length of the training crops in seconds.
    pub crop_seconds: f64,
    pub seed: u64,
    /// Evaluate on the validation split every this many steps (0 = never).
    pub eval_every: u64,
    /// Write a checkpoint every this many steps (0 = only at the end).
    pub checkpoint_every: u64,
    /// Global gradient-norm clip.
    pub grad_clip: f64,
    pub latent_dim: usize,
    pub hidden_size: usize,
    /// Stop the auxiliary CE gradient from reaching `z`.
    pub ce_detach_z: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 8,
            learning_rate: 1e-3,
            max_steps: 1000,
            kl_warmup_fraction: 0.25,
            lambda_ce: 1.0,
            crop_seconds: 20.0,
            seed: 0,
            eval_every: 100,
            checkpoint_every: 0,
            grad_clip: 5.0,
            latent_dim: 16,
            hidden_size: 128,
            ce_detach_z: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0
            || self.max_steps == 0
            || self.learning_rate <= 0.0
            || self.crop_seconds <= 0.0
            || self.grad_clip <= 0.0
            || self.lambda_ce < 0.0
        {
            return Err(Error::Config(
                "batch_size, max_steps, learning_rate, crop_seconds, grad_clip must be positive"
                    .into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.kl_warmup_fraction) {
            return Err(Error::Config(format!(
                "kl_warmup_fraction {} outside [0, 1]",
                self.kl_warmup_fraction
            )));
        }
        self.model_config().validate()
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            latent_dim: self.latent_dim,
            hidden_size: self.hidden_size,
            ce_detach_z: self.ce_detach_z,
            ..ModelConfig::default()
        }
    }

    /// KL weight at `step`: linear 0 -> 1 over the first
    /// `kl_warmup_fraction * max_steps` steps, 1 afterwards.
    pub fn beta_at(&self, step: u64) -> f64 {
        let warmup = (self.kl_warmup_fraction * self.max_steps as f64).ceil();
        if warmup <= 0.0 {
            1.0
        } else {
            (step as f64 / warmup).min(1.0)
        }
    }
}

/// Mutable training state: model parameters, optimizer moments, step count.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: GmVae<f32>,
    pub opt: Adam,
    pub step: u64,
    pub config: TrainConfig,
}

impl TrainState {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = GmVae::new(config.model_config(), config.seed)?;
        let n = model.num_params();
        Ok(TrainState {
            model,
            opt: Adam::new(n),
            step: 0,
            config: config.clone(),
        })
    }
}

/// Per-step log record.
#[derive(Debug, Clone, Copy)]
pub struct StepMetrics {
    pub step: u64,
    pub loss: LossBreakdown<f32>,
    /// Fraction of batch frames whose responsibility argmax matches the
    /// label, per factor.
    pub acc_art: f32,
    pub acc_dyn: f32,
    pub grad_norm: f32,
}

/// CSV header of the metrics log.
pub const METRICS_HEADER: &str = "step,recon,kl_art,kl_dyn,ce_art,ce_dyn,acc_art,acc_dyn";

impl StepMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.step,
            self.loss.recon,
            self.loss.kl_art,
            self.loss.kl_dyn,
            self.loss.ce_art,
            self.loss.ce_dyn,
            self.acc_art,
            self.acc_dyn
        )
    }
}

/// Standard-normal noise tensor from the per-step stream.
fn step_noise(seed: u64, step: u64, tag: u64, dims: (usize, usize, usize)) -> Array3<f32> {
    let mut rng = derive_rng(seed, &[stream::NOISE, step, tag]);
    Array3::from_shape_fn(dims, |_| {
        let v: f64 = StandardNormal.sample(&mut rng);
        v as f32
    })
}

fn batch_accuracy(
    z: &Array3<f32>,
    labels: &Array2<u8>,
    prior: &gmvae::MixturePrior<f32>,
) -> f32 {
    let (b, t, _) = z.dim();
    let mut correct = 0usize;
    for bi in 0..b {
        for ti in 0..t {
            let r = gmvae::responsibilities(z.slice(ndarray::s![bi, ti, ..]), prior);
            let pred = u8::from(r[1] > r[0]);
            if pred == labels[(bi, ti)].min(1) {
                correct += 1;
            }
        }
    }
    correct as f32 / (b * t) as f32
}

/// One optimizer step on one batch. Noise is drawn from the
/// `(seed, NOISE, step)` stream, the KL weight follows the warm-up
/// schedule, gradients are norm-clipped, and a non-finite loss aborts with
/// the offending term named.
pub fn train_step(state: &mut TrainState, batch: &Batch<f32>) -> Result<StepMetrics> {
    let (b, t, _) = batch.x.dim();
    let d = state.config.latent_dim;
    let beta = state.config.beta_at(state.step) as f32;
    let lambda = state.config.lambda_ce as f32;

    let noise_art = step_noise(state.config.seed, state.step, 0, (b, t, d));
    let noise_dyn = step_noise(state.config.seed, state.step, 1, (b, t, d));

    let fwd = state.model.forward_batch(batch, &noise_art, &noise_dyn)?;
    let loss = state.model.loss(batch, &fwd, beta, lambda)?;
    let mut grads = state.model.backward_batch(batch, &fwd, beta, lambda)?;
    let grad_norm = clip_grad_norm(&mut grads, state.config.grad_clip as f32);
    state.opt.step(
        &mut state.model.params,
        &grads,
        state.config.learning_rate as f32,
    );

    let acc_art = batch_accuracy(&fwd.z_art, &batch.c_art, &state.model.prior(Factor::Art));
    let acc_dyn = batch_accuracy(&fwd.z_dyn, &batch.c_dyn, &state.model.prior(Factor::Dyn));

    let metrics = StepMetrics {
        step: state.step,
        loss,
        acc_art,
        acc_dyn,
        grad_norm,
    };
    state.step += 1;
    Ok(metrics)
}

/// Split-level evaluation metrics (frame-weighted over all pieces).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalMetrics {
    pub recon: f64,
    pub kl_art: f64,
    pub kl_dyn: f64,
    pub condition_accuracy_art: f64,
    pub condition_accuracy_dyn: f64,
    pub num_frames: usize,
}

impl EvalMetrics {
    pub const CSV_HEADER: &'static str = "recon,kl_art,kl_dyn,acc_art,acc_dyn,frames";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.recon,
            self.kl_art,
            self.kl_dyn,
            self.condition_accuracy_art,
            self.condition_accuracy_dyn,
            self.num_frames
        )
    }
}

/// Evaluate on whole pieces with `z` at the posterior mean: reconstruction
/// error, per-factor KL, and frame-level condition accuracy through the
/// mixture responsibilities.
pub fn evaluate(dataset: &Dataset, indices: &[usize], model: &GmVae<f32>) -> Result<EvalMetrics> {
    if indices.is_empty() {
        return Err(Error::Config("evaluation split is empty".into()));
    }
    let prior_art = model.prior(Factor::Art);
    let prior_dyn = model.prior(Factor::Dyn);

    let mut frames = 0usize;
    let (mut recon_sum, mut kl_art_sum, mut kl_dyn_sum) = (0.0f64, 0.0f64, 0.0f64);
    let (mut correct_art, mut correct_dyn) = (0usize, 0usize);

    for &idx in indices {
        let piece = &dataset.pieces[idx].tensors;
        let t = piece.num_frames();
        let x = piece.mel.data.clone();
        let q_art = model.encode(&x, Factor::Art)?;
        let q_dyn = model.encode(&x, Factor::Dyn)?;
        let z_art = LatentSequence {
            data: q_art.mean.clone(),
        };
        let z_dyn = LatentSequence {
            data: q_dyn.mean.clone(),
        };
        let x_hat = model.decode(&piece.onset.data, &z_art, &z_dyn)?;

        let c_art: Vec<u8> = piece.conditions.c_art.to_vec();
        let c_dyn: Vec<u8> = piece.conditions.c_dyn.to_vec();
        recon_sum += gmvae::recon_loss(&x, &x_hat) as f64 * t as f64;
        kl_art_sum += seq_kl(&q_art, &c_art, &prior_art) * t as f64;
        kl_dyn_sum += seq_kl(&q_dyn, &c_dyn, &prior_dyn) * t as f64;

        for ti in 0..t {
            let r = gmvae::responsibilities(z_art.data.row(ti), &prior_art);
            if u8::from(r[1] > r[0]) == c_art[ti].min(1) {
                correct_art += 1;
            }
            let r = gmvae::responsibilities(z_dyn.data.row(ti), &prior_dyn);
            if u8::from(r[1] > r[0]) == c_dyn[ti].min(1) {
                correct_dyn += 1;
            }
        }
        frames += t;
    }

    let n = frames as f64;
    Ok(EvalMetrics {
        recon: recon_sum / n,
        kl_art: kl_art_sum / n,
        kl_dyn: kl_dyn_sum / n,
        condition_accuracy_art: correct_art as f64 / n,
        condition_accuracy_dyn: correct_dyn as f64 / n,
        num_frames: frames,
    })
}

fn seq_kl(q: &GaussianSequence<f32>, c: &[u8], prior: &gmvae::MixturePrior<f32>) -> f64 {
    gmvae::kl_sequence(q, c, prior) as f64
}

/// Artifacts of a completed training run.
#[derive(Debug, Clone)]
pub struct TrainArtifacts {
    pub final_checkpoint: PathBuf,
    pub metrics_csv: PathBuf,
}

/// Run (or resume) training on `dataset`, writing metrics CSV and
/// checkpoints under `out_dir`.
///
/// On resume the checkpoint's config is kept (for exact replay) except that
/// `max_steps` is taken from `config`, so a run can be extended.
pub fn train(
    dataset: &Dataset,
    config: &TrainConfig,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<(TrainState, TrainArtifacts)> {
    std::fs::create_dir_all(out_dir)?;
    let mut state = match resume {
        Some(path) => {
            let mut s = load_checkpoint(path)?;
            s.config.max_steps = config.max_steps;
            s
        }
        None => TrainState::new(config)?,
    };

    let train_indices = dataset.split_indices("train");
    if train_indices.is_empty() {
        return Err(Error::Config("dataset has no `train` split".into()));
    }
    let val_indices = dataset.split_indices("validation");

    let metrics_csv = out_dir.join("metrics.csv");
    let fresh = state.step == 0 || !metrics_csv.exists();
    let mut metrics_file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&metrics_csv)?;
    if fresh && metrics_file.metadata()?.len() == 0 {
        writeln!(metrics_file, "{METRICS_HEADER}")?;
    }

    let cfg = state.config.clone();
    while state.step < cfg.max_steps {
        let step = state.step;
        let batch = make_batch(
            dataset,
            &train_indices,
            cfg.seed,
            cfg.batch_size,
            cfg.crop_seconds,
            step,
        )?;
        let metrics = train_step(&mut state, &batch)?;
        writeln!(metrics_file, "{}", metrics.csv_row())?;

        if cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0 && !val_indices.is_empty() {
            let ev = evaluate(dataset, &val_indices, &state.model)?;
            println!(
                "step {:>6}  recon {:.4}  kl {:.4}/{:.4}  acc {:.3}/{:.3}",
                step + 1,
                ev.recon,
                ev.kl_art,
                ev.kl_dyn,
                ev.condition_accuracy_art,
                ev.condition_accuracy_dyn
            );
        }
        if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 {
            save_checkpoint(&state, &out_dir.join(format!("checkpoint_{:06}.ckpt", step + 1)))?;
        }
    }
    metrics_file.flush()?;

    let final_checkpoint = out_dir.join("checkpoint_final.ckpt");
    save_checkpoint(&state, &final_checkpoint)?;
    Ok((
        state,
        TrainArtifacts {
            final_checkpoint,
            metrics_csv,
        },
    ))
}
