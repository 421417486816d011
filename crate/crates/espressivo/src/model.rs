//! The assembled conditional GM-VAE: two factor encoders, one decoder, two
//! learnable mixture priors, and the end-to-end loss/gradient computation
//! the trainer steps on.

use ndarray::{s, Array2, Array3, Axis};

use crate::error::{Error, Result};
use crate::gmvae::{
    self, GaussianParams, GaussianSequence, LatentSequence, LossBreakdown, MixturePrior, Real,
};
use crate::networks::{
    Decoder, DecoderConfig, Encoder, EncoderCache, EncoderConfig, ParamId, ParamLayout,
};
use crate::repr::{N_MELS, N_PITCHES};
use crate::rng::{derive_rng, stream};

pub use crate::networks::DecoderCache;

/// The two style factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Factor {
    Art,
    Dyn,
}

impl std::fmt::Display for Factor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Factor::Art => "art",
            Factor::Dyn => "dyn",
        })
    }
}

impl std::str::FromStr for Factor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "art" | "articulation" => Ok(Factor::Art),
            "dyn" | "dynamics" => Ok(Factor::Dyn),
            other => Err(Error::Config(format!(
                "unknown factor `{other}`; expected `art` or `dyn`"
            ))),
        }
    }
}

/// Model hyperparameters.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    pub latent_dim: usize,
    pub hidden_size: usize,
    /// Stop the auxiliary cross-entropy gradient from reaching `z` (and the
    /// encoders through it). Off by default: gradients flow.
    pub ce_detach_z: bool,
    /// Initial offset of the two prior component means (`-init`, `+init`).
    pub prior_mean_init: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            latent_dim: 16,
            hidden_size: 128,
            ce_detach_z: false,
            prior_mean_init: 1.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        EncoderConfig::new(self.hidden_size, self.latent_dim).validate()?;
        DecoderConfig::new(self.hidden_size, self.latent_dim).validate()
    }
}

/// Flat-parameter handles of one mixture prior.
#[derive(Debug, Clone)]
struct PriorParams {
    mean: [ParamId; 2],
    logvar: [ParamId; 2],
}

impl PriorParams {
    fn build(layout: &mut ParamLayout, prefix: &str, d: usize) -> Self {
        PriorParams {
            mean: [
                layout.vector(format!("{prefix}.mean0"), d),
                layout.vector(format!("{prefix}.mean1"), d),
            ],
            logvar: [
                layout.vector(format!("{prefix}.logvar0"), d),
                layout.vector(format!("{prefix}.logvar1"), d),
            ],
        }
    }
}

/// One training batch as dense tensors. Conditions are `[B, T]`.
#[derive(Debug, Clone)]
pub struct Batch<F> {
    pub x: Array3<F>,
    pub onset: Array3<F>,
    pub c_art: Array2<u8>,
    pub c_dyn: Array2<u8>,
}

impl<F: Real> Batch<F> {
    pub fn batch_size(&self) -> usize {
        self.x.dim().0
    }

    pub fn num_frames(&self) -> usize {
        self.x.dim().1
    }

    pub fn validate(&self) -> Result<()> {
        let (b, t, bands) = self.x.dim();
        let (bo, to, pitches) = self.onset.dim();
        if bands != N_MELS || pitches != N_PITCHES {
            return Err(Error::ShapeMismatch(format!(
                "batch: x has {bands} bands, onset {pitches} pitches"
            )));
        }
        if (bo, to) != (b, t) || self.c_art.dim() != (b, t) || self.c_dyn.dim() != (b, t) {
            return Err(Error::ShapeMismatch(
                "batch: x, onset, c_art, c_dyn disagree on [B, T]".into(),
            ));
        }
        Ok(())
    }
}

/// The conditional GM-VAE with all parameters in one flat vector.
#[derive(Debug, Clone)]
pub struct GmVae<F> {
    pub layout: ParamLayout,
    pub params: Vec<F>,
    pub config: ModelConfig,
    encoder_art: Encoder,
    encoder_dyn: Encoder,
    decoder: Decoder,
    prior_art: PriorParams,
    prior_dyn: PriorParams,
}

/// Everything cached by [`GmVae::forward_batch`] that the backward pass
/// needs.
pub struct ForwardCache<F> {
    x: Array3<F>,
    dec_input: Array3<F>,
    enc_art: EncoderCache<F>,
    enc_dyn: EncoderCache<F>,
    dec: DecoderCache<F>,
    pub mean_art: Array3<F>,
    pub logvar_art: Array3<F>,
    pub mean_dyn: Array3<F>,
    pub logvar_dyn: Array3<F>,
    pub z_art: Array3<F>,
    pub z_dyn: Array3<F>,
    pub x_hat: Array3<F>,
    noise_art: Array3<F>,
    noise_dyn: Array3<F>,
}

impl<F: Real> GmVae<F> {
    /// Build and initialize a model. Prior component means start at
    /// `-prior_mean_init` (component 0) and `+prior_mean_init` (component 1)
    /// on every dimension; log-variances start at zero.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.latent_dim;
        let mut layout = ParamLayout::new();
        let encoder_art = Encoder::build(
            &mut layout,
            "enc_art",
            EncoderConfig::new(config.hidden_size, d),
        )?;
        let encoder_dyn = Encoder::build(
            &mut layout,
            "enc_dyn",
            EncoderConfig::new(config.hidden_size, d),
        )?;
        let decoder = Decoder::build(
            &mut layout,
            "decoder",
            DecoderConfig::new(config.hidden_size, d),
        )?;
        let prior_art = PriorParams::build(&mut layout, "prior_art", d);
        let prior_dyn = PriorParams::build(&mut layout, "prior_dyn", d);

        let mut params = vec![F::zero(); layout.num_params()];
        let mut rng = derive_rng(seed, &[stream::INIT]);
        encoder_art.init(&layout, &mut params, &mut rng);
        encoder_dyn.init(&layout, &mut params, &mut rng);
        decoder.init(&layout, &mut params, &mut rng);

        let mut model = GmVae {
            layout,
            params,
            config,
            encoder_art,
            encoder_dyn,
            decoder,
            prior_art,
            prior_dyn,
        };
        model.reset_priors();
        Ok(model)
    }

    /// Number of scalar parameters.
    pub fn num_params(&self) -> usize {
        self.layout.num_params()
    }

    fn prior_ids(&self, factor: Factor) -> &PriorParams {
        match factor {
            Factor::Art => &self.prior_art,
            Factor::Dyn => &self.prior_dyn,
        }
    }

    fn encoder(&self, factor: Factor) -> &Encoder {
        match factor {
            Factor::Art => &self.encoder_art,
            Factor::Dyn => &self.encoder_dyn,
        }
    }

    /// Materialize one factor's mixture prior from the flat parameters.
    /// Weights are fixed uniform.
    pub fn prior(&self, factor: Factor) -> MixturePrior<F> {
        let ids = self.prior_ids(factor);
        let comp = |k: usize| GaussianParams {
            mean: self.layout.v(&self.params, ids.mean[k]).to_owned(),
            log_variance: self.layout.v(&self.params, ids.logvar[k]).to_owned(),
        };
        MixturePrior::uniform([comp(0), comp(1)])
    }

    /// Per-frame posterior for one spectrogram (`T x 80`), for the chosen
    /// factor.
    pub fn encode(&self, x: &Array2<F>, factor: Factor) -> Result<GaussianSequence<F>> {
        let (t, bands) = x.dim();
        let x3 = x
            .to_owned()
            .into_shape_with_order((1, t, bands))
            .expect("owned reshape");
        let (mean, logvar, _) = self.encoder(factor).forward(&self.layout, &self.params, &x3)?;
        Ok(GaussianSequence {
            mean: mean.index_axis_move(Axis(0), 0),
            log_variance: logvar.index_axis_move(Axis(0), 0),
        })
    }

    /// Decode one sequence: onset roll (`T x 88` binary) plus both latent
    /// trajectories (`T x D`), producing a predicted log-Mel spectrogram.
    pub fn decode(
        &self,
        onset: &Array2<u8>,
        z_art: &LatentSequence<F>,
        z_dyn: &LatentSequence<F>,
    ) -> Result<Array2<F>> {
        let t = onset.nrows();
        if z_art.num_frames() != t || z_dyn.num_frames() != t {
            return Err(Error::ShapeMismatch(format!(
                "decode: onset has {t} frames, z_art {}, z_dyn {}",
                z_art.num_frames(),
                z_dyn.num_frames()
            )));
        }
        let d = self.config.latent_dim;
        if z_art.dim() != d || z_dyn.dim() != d {
            return Err(Error::ShapeMismatch(format!(
                "decode: latent dim {} expected, got art {}, dyn {}",
                d,
                z_art.dim(),
                z_dyn.dim()
            )));
        }
        let mut input = Array3::<F>::zeros((1, t, N_PITCHES + 2 * d));
        for ti in 0..t {
            for p in 0..N_PITCHES {
                input[(0, ti, p)] = F::from_u8(onset[(ti, p)].min(1)).unwrap();
            }
        }
        input
            .slice_mut(s![0, .., N_PITCHES..N_PITCHES + d])
            .assign(&z_art.data);
        input
            .slice_mut(s![0, .., N_PITCHES + d..])
            .assign(&z_dyn.data);
        let (out, _) = self.decoder.forward(&self.layout, &self.params, &input)?;
        Ok(out.index_axis_move(Axis(0), 0))
    }

    /// Full batched forward pass with explicit reparameterization noise
    /// (`[B, T, D]` standard-normal draws per factor).
    pub fn forward_batch(
        &self,
        batch: &Batch<F>,
        noise_art: &Array3<F>,
        noise_dyn: &Array3<F>,
    ) -> Result<ForwardCache<F>> {
        batch.validate()?;
        let (b, t, _) = batch.x.dim();
        let d = self.config.latent_dim;
        if noise_art.dim() != (b, t, d) || noise_dyn.dim() != (b, t, d) {
            return Err(Error::ShapeMismatch(format!(
                "noise must be [{b}, {t}, {d}]"
            )));
        }

        let (mean_art, logvar_art, enc_art) =
            self.encoder_art
                .forward(&self.layout, &self.params, &batch.x)?;
        let (mean_dyn, logvar_dyn, enc_dyn) =
            self.encoder_dyn
                .forward(&self.layout, &self.params, &batch.x)?;

        let half = F::from_f64(0.5).unwrap();
        let z_art = &mean_art + &(logvar_art.mapv(|lv| (half * lv).exp()) * noise_art);
        let z_dyn = &mean_dyn + &(logvar_dyn.mapv(|lv| (half * lv).exp()) * noise_dyn);

        let mut dec_input = Array3::<F>::zeros((b, t, N_PITCHES + 2 * d));
        dec_input
            .slice_mut(s![.., .., 0..N_PITCHES])
            .assign(&batch.onset);
        dec_input
            .slice_mut(s![.., .., N_PITCHES..N_PITCHES + d])
            .assign(&z_art);
        dec_input.slice_mut(s![.., .., N_PITCHES + d..]).assign(&z_dyn);

        let (x_hat, dec) = self.decoder.forward(&self.layout, &self.params, &dec_input)?;

        Ok(ForwardCache {
            x: batch.x.clone(),
            dec_input,
            enc_art,
            enc_dyn,
            dec,
            mean_art,
            logvar_art,
            mean_dyn,
            logvar_dyn,
            z_art,
            z_dyn,
            x_hat,
            noise_art: noise_art.clone(),
            noise_dyn: noise_dyn.clone(),
        })
    }

    /// Batch-mean loss breakdown for an already-computed forward pass.
    pub fn loss(&self, batch: &Batch<F>, fwd: &ForwardCache<F>, beta: F, lambda: F) -> Result<LossBreakdown<F>> {
        let b = batch.batch_size();
        let prior_art = self.prior(Factor::Art);
        let prior_dyn = self.prior(Factor::Dyn);
        let inv_b = F::one() / F::from_usize(b).unwrap();

        let (mut recon, mut kl_a, mut kl_d, mut ce_a, mut ce_d) =
            (F::zero(), F::zero(), F::zero(), F::zero(), F::zero());
        for bi in 0..b {
            let x = batch.x.index_axis(Axis(0), bi).to_owned();
            let x_hat = fwd.x_hat.index_axis(Axis(0), bi).to_owned();
            let q_art = GaussianSequence {
                mean: fwd.mean_art.index_axis(Axis(0), bi).to_owned(),
                log_variance: fwd.logvar_art.index_axis(Axis(0), bi).to_owned(),
            };
            let q_dyn = GaussianSequence {
                mean: fwd.mean_dyn.index_axis(Axis(0), bi).to_owned(),
                log_variance: fwd.logvar_dyn.index_axis(Axis(0), bi).to_owned(),
            };
            let z_art = LatentSequence {
                data: fwd.z_art.index_axis(Axis(0), bi).to_owned(),
            };
            let z_dyn = LatentSequence {
                data: fwd.z_dyn.index_axis(Axis(0), bi).to_owned(),
            };
            let c_art: Vec<u8> = batch.c_art.row(bi).to_vec();
            let c_dyn: Vec<u8> = batch.c_dyn.row(bi).to_vec();

            recon = recon + gmvae::recon_loss(&x, &x_hat) * inv_b;
            kl_a = kl_a + gmvae::kl_sequence(&q_art, &c_art, &prior_art) * inv_b;
            kl_d = kl_d + gmvae::kl_sequence(&q_dyn, &c_dyn, &prior_dyn) * inv_b;
            ce_a = ce_a + gmvae::aux_ce_loss(&z_art, &c_art, &prior_art) * inv_b;
            ce_d = ce_d + gmvae::aux_ce_loss(&z_dyn, &c_dyn, &prior_dyn) * inv_b;
        }
        let breakdown = LossBreakdown::compose(recon, kl_a, kl_d, ce_a, ce_d, beta, lambda);
        match breakdown.first_non_finite() {
            Some(term) => Err(Error::NonFinite { term }),
            None => Ok(breakdown),
        }
    }

    /// Loss plus the gradient of `total` with respect to every parameter.
    ///
    /// The gradient flows through the decoder into both encoders via the
    /// reparameterized latents, through the KL terms into the encoders and
    /// priors, and through the auxiliary cross-entropy into the priors and
    /// (unless `ce_detach_z`) the latents.
    pub fn loss_and_grads(
        &self,
        batch: &Batch<F>,
        noise_art: &Array3<F>,
        noise_dyn: &Array3<F>,
        beta: F,
        lambda: F,
    ) -> Result<(LossBreakdown<F>, Vec<F>)> {
        let fwd = self.forward_batch(batch, noise_art, noise_dyn)?;
        let loss = self.loss(batch, &fwd, beta, lambda)?;
        let grads = self.backward_batch(batch, &fwd, beta, lambda)?;
        Ok((loss, grads))
    }

    /// Backward pass for one forward cache; returns the flat gradient.
    pub fn backward_batch(
        &self,
        batch: &Batch<F>,
        fwd: &ForwardCache<F>,
        beta: F,
        lambda: F,
    ) -> Result<Vec<F>> {
        let (b, t, _) = batch.x.dim();
        let d = self.config.latent_dim;
        let inv_b = F::one() / F::from_usize(b).unwrap();
        let half = F::from_f64(0.5).unwrap();

        let prior_art = self.prior(Factor::Art);
        let prior_dyn = self.prior(Factor::Dyn);

        let mut grads = vec![F::zero(); self.layout.num_params()];
        let mut d_x_hat = Array3::<F>::zeros((b, t, N_MELS));
        let mut d_z_art_ce = Array3::<F>::zeros((b, t, d));
        let mut d_z_dyn_ce = Array3::<F>::zeros((b, t, d));
        let mut d_mean_art = Array3::<F>::zeros((b, t, d));
        let mut d_logvar_art = Array3::<F>::zeros((b, t, d));
        let mut d_mean_dyn = Array3::<F>::zeros((b, t, d));
        let mut d_logvar_dyn = Array3::<F>::zeros((b, t, d));
        let mut dp_art = gmvae::PriorGrad::<F>::zeros(d);
        let mut dp_dyn = gmvae::PriorGrad::<F>::zeros(d);

        for bi in 0..b {
            let x = batch.x.index_axis(Axis(0), bi).to_owned();
            let x_hat = fwd.x_hat.index_axis(Axis(0), bi).to_owned();
            // recon term (coefficient 1)
            d_x_hat
                .index_axis_mut(Axis(0), bi)
                .assign(&(gmvae::recon_grad(&x, &x_hat) * inv_b));

            let c_art: Vec<u8> = batch.c_art.row(bi).to_vec();
            let c_dyn: Vec<u8> = batch.c_dyn.row(bi).to_vec();

            // KL terms (coefficient beta)
            let q_art = GaussianSequence {
                mean: fwd.mean_art.index_axis(Axis(0), bi).to_owned(),
                log_variance: fwd.logvar_art.index_axis(Axis(0), bi).to_owned(),
            };
            let (_, dq, mut dp) = gmvae::kl_sequence_with_grad(&q_art, &c_art, &prior_art);
            d_mean_art
                .index_axis_mut(Axis(0), bi)
                .assign(&(dq.mean * (beta * inv_b)));
            d_logvar_art
                .index_axis_mut(Axis(0), bi)
                .assign(&(dq.log_variance * (beta * inv_b)));
            dp.scale(beta * inv_b);
            dp_art.add(&dp);

            let q_dyn = GaussianSequence {
                mean: fwd.mean_dyn.index_axis(Axis(0), bi).to_owned(),
                log_variance: fwd.logvar_dyn.index_axis(Axis(0), bi).to_owned(),
            };
            let (_, dq, mut dp) = gmvae::kl_sequence_with_grad(&q_dyn, &c_dyn, &prior_dyn);
            d_mean_dyn
                .index_axis_mut(Axis(0), bi)
                .assign(&(dq.mean * (beta * inv_b)));
            d_logvar_dyn
                .index_axis_mut(Axis(0), bi)
                .assign(&(dq.log_variance * (beta * inv_b)));
            dp.scale(beta * inv_b);
            dp_dyn.add(&dp);

            // auxiliary CE terms (coefficient lambda)
            let z_art = LatentSequence {
                data: fwd.z_art.index_axis(Axis(0), bi).to_owned(),
            };
            let (_, dz, mut dp) = gmvae::aux_ce_with_grad(&z_art, &c_art, &prior_art);
            d_z_art_ce
                .index_axis_mut(Axis(0), bi)
                .assign(&(dz * (lambda * inv_b)));
            dp.scale(lambda * inv_b);
            dp_art.add(&dp);

            let z_dyn = LatentSequence {
                data: fwd.z_dyn.index_axis(Axis(0), bi).to_owned(),
            };
            let (_, dz, mut dp) = gmvae::aux_ce_with_grad(&z_dyn, &c_dyn, &prior_dyn);
            d_z_dyn_ce
                .index_axis_mut(Axis(0), bi)
                .assign(&(dz * (lambda * inv_b)));
            dp.scale(lambda * inv_b);
            dp_dyn.add(&dp);
        }

        // decoder backward: d x_hat -> d dec_input
        let d_dec_input = self.decoder.backward(
            &self.layout,
            &self.params,
            &mut grads,
            &fwd.dec_input,
            &fwd.dec,
            &d_x_hat,
        );

        // total gradient into the latents: decoder path + CE path
        let mut d_z_art = d_dec_input
            .slice(s![.., .., N_PITCHES..N_PITCHES + d])
            .to_owned();
        let mut d_z_dyn = d_dec_input.slice(s![.., .., N_PITCHES + d..]).to_owned();
        if !self.config.ce_detach_z {
            d_z_art += &d_z_art_ce;
            d_z_dyn += &d_z_dyn_ce;
        }

        // reparameterization backward:
        //   d mean += d z;  d logvar += d z * noise * exp(logvar/2) / 2
        d_mean_art += &d_z_art;
        d_logvar_art += &(&d_z_art
            * &fwd.noise_art
            * &fwd.logvar_art.mapv(|lv| half * (half * lv).exp()));
        d_mean_dyn += &d_z_dyn;
        d_logvar_dyn += &(&d_z_dyn
            * &fwd.noise_dyn
            * &fwd.logvar_dyn.mapv(|lv| half * (half * lv).exp()));

        self.encoder_art.backward(
            &self.layout,
            &self.params,
            &mut grads,
            &fwd.x,
            &fwd.enc_art,
            &d_mean_art,
            &d_logvar_art,
        );
        self.encoder_dyn.backward(
            &self.layout,
            &self.params,
            &mut grads,
            &fwd.x,
            &fwd.enc_dyn,
            &d_mean_dyn,
            &d_logvar_dyn,
        );

        // scatter prior gradients
        for (ids, dp) in [(&self.prior_art, &dp_art), (&self.prior_dyn, &dp_dyn)] {
            for k in 0..2 {
                {
                    let mut g = self.layout.v_mut(&mut grads, ids.mean[k]);
                    g += &dp.mean[k];
                }
                {
                    let mut g = self.layout.v_mut(&mut grads, ids.logvar[k]);
                    g += &dp.log_variance[k];
                }
            }
        }
        Ok(grads)
    }
}

impl<F: Real> GmVae<F> {
    /// Write the prior initialization (`±prior_mean_init` means, zero
    /// log-variance) into the parameter vector.
    pub fn reset_priors(&mut self) {
        let init = F::from_f64(self.config.prior_mean_init).unwrap();
        for factor in [Factor::Art, Factor::Dyn] {
            let ids = self.prior_ids(factor).clone();
            for (k, sign) in [(0usize, -init), (1usize, init)] {
                for v in self.layout.slice_mut(&mut self.params, ids.mean[k]) {
                    *v = sign;
                }
                for v in self.layout.slice_mut(&mut self.params, ids.logvar[k]) {
                    *v = F::zero();
                }
            }
        }
    }
}
