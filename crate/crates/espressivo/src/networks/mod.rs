//! Inference and generation networks: two-layer bidirectional LSTM
//! encoders producing per-frame posterior parameters, and a decoder mapping
//! `[onset roll ‖ z_art ‖ z_dyn]` to a predicted log-Mel spectrogram.

pub mod lstm;
pub mod params;

pub use lstm::{BiLstmStack, Linear};
pub use params::{ParamEntry, ParamId, ParamLayout, ParamShape};

use ndarray::Array3;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gmvae::Real;
use crate::repr::{N_MELS, N_PITCHES};

/// Architecture of one posterior encoder.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EncoderConfig {
    /// Mel bands in (always 80).
    pub input_dim: usize,
    pub hidden_size: usize,
    /// Stacked bidirectional layers (always 2).
    pub num_layers: usize,
    pub latent_dim: usize,
    pub bidirectional: bool,
}

impl EncoderConfig {
    pub fn new(hidden_size: usize, latent_dim: usize) -> Self {
        EncoderConfig {
            input_dim: N_MELS,
            hidden_size,
            num_layers: 2,
            latent_dim,
            bidirectional: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::Config("latent_dim must be >= 1".into()));
        }
        if self.hidden_size < self.latent_dim {
            return Err(Error::Config(format!(
                "hidden_size ({}) must be >= latent_dim ({})",
                self.hidden_size, self.latent_dim
            )));
        }
        if self.input_dim != N_MELS || self.num_layers != 2 || !self.bidirectional {
            return Err(Error::Config(
                "encoder must be a 2-layer bidirectional model over 80 Mel bands".into(),
            ));
        }
        Ok(())
    }
}

/// Architecture of the generation network.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DecoderConfig {
    /// `88 + 2 * latent_dim`.
    pub input_dim: usize,
    pub hidden_size: usize,
    pub num_layers: usize,
    /// Mel bands out (always 80).
    pub output_dim: usize,
    pub bidirectional: bool,
}

impl DecoderConfig {
    pub fn new(hidden_size: usize, latent_dim: usize) -> Self {
        DecoderConfig {
            input_dim: N_PITCHES + 2 * latent_dim,
            hidden_size,
            num_layers: 2,
            output_dim: N_MELS,
            bidirectional: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.output_dim != N_MELS || self.num_layers != 2 || !self.bidirectional {
            return Err(Error::Config(
                "decoder must be a 2-layer bidirectional model onto 80 Mel bands".into(),
            ));
        }
        Ok(())
    }
}

/// Posterior encoder: BiLSTM stack plus mean / log-variance heads.
#[derive(Debug, Clone)]
pub struct Encoder {
    rnn: BiLstmStack,
    head_mean: Linear,
    head_logvar: Linear,
    pub config: EncoderConfig,
}

/// Cache of one encoder forward pass.
pub struct EncoderCache<F> {
    stack: lstm::StackCache<F>,
    /// RNN output, the input of both heads.
    features: Array3<F>,
}

impl Encoder {
    pub fn build(layout: &mut ParamLayout, prefix: &str, config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let rnn = BiLstmStack::build(
            layout,
            &format!("{prefix}.rnn"),
            config.input_dim,
            config.hidden_size,
        );
        let feat = rnn.output_dim();
        Ok(Encoder {
            head_mean: Linear::build(layout, &format!("{prefix}.mean"), feat, config.latent_dim),
            head_logvar: Linear::build(layout, &format!("{prefix}.logvar"), feat, config.latent_dim),
            rnn,
            config,
        })
    }

    pub fn init<F: Real>(&self, layout: &ParamLayout, params: &mut [F], rng: &mut ChaCha8Rng) {
        self.rnn.init(layout, params, rng);
        self.head_mean.init(layout, params, rng);
        self.head_logvar.init(layout, params, rng);
    }

    /// Per-frame posterior parameters for a batch of spectrograms,
    /// `[B, T, 80] -> ([B, T, D] means, [B, T, D] log-variances)`.
    pub fn forward<F: Real>(
        &self,
        layout: &ParamLayout,
        params: &[F],
        x: &Array3<F>,
    ) -> Result<(Array3<F>, Array3<F>, EncoderCache<F>)> {
        let (_, t_frames, bands) = x.dim();
        if t_frames == 0 {
            return Err(Error::ShapeMismatch("encode: empty sequence (T = 0)".into()));
        }
        if bands != self.config.input_dim {
            return Err(Error::ShapeMismatch(format!(
                "encode: input has {bands} bands, expected {}",
                self.config.input_dim
            )));
        }
        let (features, stack) = self.rnn.forward(layout, params, x);
        let mean = self.head_mean.forward(layout, params, &features);
        let logvar = self.head_logvar.forward(layout, params, &features);
        Ok((mean, logvar, EncoderCache { stack, features }))
    }

    /// Backprop from head gradients; parameter gradients accumulate into
    /// `grads`, the input gradient is returned.
    pub fn backward<F: Real>(
        &self,
        layout: &ParamLayout,
        params: &[F],
        grads: &mut [F],
        x: &Array3<F>,
        cache: &EncoderCache<F>,
        d_mean: &Array3<F>,
        d_logvar: &Array3<F>,
    ) -> Array3<F> {
        let d_feat_mean = self
            .head_mean
            .backward(layout, params, grads, &cache.features, d_mean);
        let d_feat_logvar =
            self.head_logvar
                .backward(layout, params, grads, &cache.features, d_logvar);
        let d_features = d_feat_mean + d_feat_logvar;
        self.rnn
            .backward(layout, params, grads, x, &cache.stack, &d_features)
    }
}

/// Generation network: BiLSTM stack over the concatenated conditioning
/// sequence, plus a linear projection to 80 Mel bands.
#[derive(Debug, Clone)]
pub struct Decoder {
    rnn: BiLstmStack,
    head: Linear,
    pub config: DecoderConfig,
}

pub struct DecoderCache<F> {
    stack: lstm::StackCache<F>,
    features: Array3<F>,
}

impl Decoder {
    pub fn build(layout: &mut ParamLayout, prefix: &str, config: DecoderConfig) -> Result<Self> {
        config.validate()?;
        let rnn = BiLstmStack::build(
            layout,
            &format!("{prefix}.rnn"),
            config.input_dim,
            config.hidden_size,
        );
        let feat = rnn.output_dim();
        Ok(Decoder {
            head: Linear::build(layout, &format!("{prefix}.out"), feat, config.output_dim),
            rnn,
            config,
        })
    }

    pub fn init<F: Real>(&self, layout: &ParamLayout, params: &mut [F], rng: &mut ChaCha8Rng) {
        self.rnn.init(layout, params, rng);
        self.head.init(layout, params, rng);
    }

    /// `[B, T, 88 + 2D] -> [B, T, 80]`.
    pub fn forward<F: Real>(
        &self,
        layout: &ParamLayout,
        params: &[F],
        input: &Array3<F>,
    ) -> Result<(Array3<F>, DecoderCache<F>)> {
        let (_, t_frames, width) = input.dim();
        if t_frames == 0 {
            return Err(Error::ShapeMismatch("decode: empty sequence (T = 0)".into()));
        }
        if width != self.config.input_dim {
            return Err(Error::ShapeMismatch(format!(
                "decode: input width {width}, expected {}",
                self.config.input_dim
            )));
        }
        let (features, stack) = self.rnn.forward(layout, params, input);
        let out = self.head.forward(layout, params, &features);
        Ok((out, DecoderCache { stack, features }))
    }

    pub fn backward<F: Real>(
        &self,
        layout: &ParamLayout,
        params: &[F],
        grads: &mut [F],
        input: &Array3<F>,
        cache: &DecoderCache<F>,
        d_out: &Array3<F>,
    ) -> Array3<F> {
        let d_features = self
            .head
            .backward(layout, params, grads, &cache.features, d_out);
        self.rnn
            .backward(layout, params, grads, input, &cache.stack, &d_features)
    }
}
