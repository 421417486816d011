//! Inference-time procedures: gradual style morphing, performance style
//! transfer, spectrogram synthesis, Mel inversion to audio, and figures.

pub mod figure;
pub mod stats;
pub mod vocoder;

pub use figure::emit_figure;
pub use stats::{mean_frame_energy, mean_note_sustain_frames, spearman};
pub use vocoder::{dominant_frequency, inversion_error, mel_to_audio, rms_dbfs};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::gmvae::{reparameterize, LatentSequence, MixturePrior, Real};
use crate::model::{Factor, GmVae};
use crate::repr::mel::MelSpectrogram;
use crate::repr::OnsetRoll;
use crate::rng::{derive_rng, stream};

/// How the fixed (non-morphing) factor's trajectory is chosen.
#[derive(Debug, Clone)]
pub enum FixedOther {
    /// Hold the other factor at one component's mean for every frame.
    Component(usize),
    /// Use an externally supplied trajectory (resampled to length if
    /// needed).
    Latents(LatentSequence<f32>),
}

/// One morphing scenario: which factor travels, between which components,
/// and what the other factor does meanwhile.
#[derive(Debug, Clone)]
pub struct MorphSpec {
    pub factor: Factor,
    pub from_component: usize,
    pub to_component: usize,
    pub fixed_other: FixedOther,
}

impl MorphSpec {
    pub fn validate(&self) -> Result<()> {
        if self.from_component > 1 || self.to_component > 1 {
            return Err(Error::Config(
                "mixture components are indexed 0 and 1".into(),
            ));
        }
        if self.from_component == self.to_component {
            return Err(Error::Config(
                "morph endpoints are equal; from != to is required".into(),
            ));
        }
        if let FixedOther::Component(k) = self.fixed_other {
            if k > 1 {
                return Err(Error::Config("fixed component must be 0 or 1".into()));
            }
        }
        Ok(())
    }
}

/// Linear interpolation between the mixture component means:
/// `z_t = mu_from + (mu_to - mu_from) * t / T` for `t = 0 .. T-1`.
///
/// The first frame sits exactly at `mu_from`; the last stops one step
/// (`1/T` of the segment) short of `mu_to`.
pub fn morph_latents<F: Real>(
    prior: &MixturePrior<F>,
    spec: &MorphSpec,
    t_frames: usize,
) -> Result<LatentSequence<F>> {
    spec.validate()?;
    if t_frames == 0 {
        return Err(Error::Config("morph needs T >= 1".into()));
    }
    let from = &prior.components[spec.from_component].mean;
    let to = &prior.components[spec.to_component].mean;
    let d = from.len();
    let inv_t = F::one() / F::from_usize(t_frames).unwrap();
    let mut data = Array2::<F>::zeros((t_frames, d));
    for t in 0..t_frames {
        let alpha = F::from_usize(t).unwrap() * inv_t;
        for j in 0..d {
            data[(t, j)] = from[j] + (to[j] - from[j]) * alpha;
        }
    }
    Ok(LatentSequence { data })
}

/// Constant trajectory at one component's mean.
pub fn component_latents<F: Real>(
    prior: &MixturePrior<F>,
    component: usize,
    t_frames: usize,
) -> LatentSequence<F> {
    let mean = &prior.components[component.min(1)].mean;
    let mut data = Array2::<F>::zeros((t_frames, mean.len()));
    for t in 0..t_frames {
        data.row_mut(t).assign(mean);
    }
    LatentSequence { data }
}

/// Whether style inference takes the posterior mean or a reparameterized
/// sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StyleMode {
    Mean,
    Sample,
}

impl std::str::FromStr for StyleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mean" => Ok(StyleMode::Mean),
            "sample" => Ok(StyleMode::Sample),
            other => Err(Error::Config(format!(
                "unknown style mode `{other}`; expected `mean` or `sample`"
            ))),
        }
    }
}

/// Latent style trajectories inferred from a style piece, with their
/// length made explicit so callers must align before rendering another
/// piece.
#[derive(Debug, Clone)]
pub struct InferredStyle {
    pub z_art: LatentSequence<f32>,
    pub z_dyn: LatentSequence<f32>,
    pub num_frames: usize,
}

/// Infer both factors' latent trajectories from a style spectrogram.
/// `Mean` is deterministic; `Sample` draws reparameterization noise from a
/// stream keyed by `seed`.
pub fn infer_style(
    model: &GmVae<f32>,
    x_style: &MelSpectrogram,
    mode: StyleMode,
    seed: u64,
) -> Result<InferredStyle> {
    use rand_distr::Distribution;
    let x = x_style.data.clone();
    let t = x.nrows();
    let d = model.config.latent_dim;
    let mut latents = Vec::with_capacity(2);
    for (i, factor) in [Factor::Art, Factor::Dyn].into_iter().enumerate() {
        let q = model.encode(&x, factor)?;
        let z = match mode {
            StyleMode::Mean => LatentSequence {
                data: q.mean.clone(),
            },
            StyleMode::Sample => {
                let mut rng = derive_rng(seed, &[stream::STYLE_SAMPLE, i as u64]);
                let noise = Array2::from_shape_fn((t, d), |_| {
                    let v: f64 = rand_distr::StandardNormal.sample(&mut rng);
                    v as f32
                });
                reparameterize(&q, &noise)?
            }
        };
        latents.push(z);
    }
    let z_dyn = latents.pop().unwrap();
    let z_art = latents.pop().unwrap();
    Ok(InferredStyle {
        z_art,
        z_dyn,
        num_frames: t,
    })
}

/// Nearest-neighbor resampling of a latent trajectory to `target_t` frames.
/// Frame values are copied, never interpolated.
pub fn align_latents<F: Real>(z: &LatentSequence<F>, target_t: usize) -> Result<LatentSequence<F>> {
    let t = z.num_frames();
    if t == 0 {
        return Err(Error::ShapeMismatch(
            "align_latents: empty trajectory".into(),
        ));
    }
    if t == target_t {
        return Ok(z.clone());
    }
    let mut data = Array2::<F>::zeros((target_t, z.dim()));
    for ti in 0..target_t {
        // nearest source frame under uniform stretching
        let src = ((ti as f64 + 0.5) * t as f64 / target_t as f64).floor() as usize;
        data.row_mut(ti).assign(&z.data.row(src.min(t - 1)));
    }
    Ok(LatentSequence { data })
}

/// Decoder forward pass wrapped at the spectrogram type level.
pub fn synthesize(
    model: &GmVae<f32>,
    onset: &OnsetRoll,
    z_art: &LatentSequence<f32>,
    z_dyn: &LatentSequence<f32>,
) -> Result<MelSpectrogram> {
    let data = model.decode(&onset.data, z_art, z_dyn)?;
    Ok(MelSpectrogram { data })
}

/// Render one morphing scenario over a piece's onset roll.
pub fn render_morph(
    model: &GmVae<f32>,
    onset: &OnsetRoll,
    spec: &MorphSpec,
) -> Result<(MelSpectrogram, LatentSequence<f32>, LatentSequence<f32>)> {
    spec.validate()?;
    let t = onset.num_frames();
    let moving = morph_latents(&model.prior(spec.factor), spec, t)?;
    let other_factor = match spec.factor {
        Factor::Art => Factor::Dyn,
        Factor::Dyn => Factor::Art,
    };
    let fixed = match &spec.fixed_other {
        FixedOther::Component(k) => component_latents(&model.prior(other_factor), *k, t),
        FixedOther::Latents(z) => align_latents(z, t)?,
    };
    let (z_art, z_dyn) = match spec.factor {
        Factor::Art => (moving, fixed),
        Factor::Dyn => (fixed, moving),
    };
    let mel = synthesize(model, onset, &z_art, &z_dyn)?;
    Ok((mel, z_art, z_dyn))
}

/// Render a content piece's notes in a style piece's inferred style.
pub fn render_transfer(
    model: &GmVae<f32>,
    content_onset: &OnsetRoll,
    style_mel: &MelSpectrogram,
    mode: StyleMode,
    seed: u64,
) -> Result<(MelSpectrogram, LatentSequence<f32>, LatentSequence<f32>)> {
    let style = infer_style(model, style_mel, mode, seed)?;
    let t = content_onset.num_frames();
    let z_art = align_latents(&style.z_art, t)?;
    let z_dyn = align_latents(&style.z_dyn, t)?;
    let mel = synthesize(model, content_onset, &z_art, &z_dyn)?;
    Ok((mel, z_art, z_dyn))
}
