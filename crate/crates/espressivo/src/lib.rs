//! Conditional Gaussian-mixture VAE for expressive piano performance synthesis.
//!
//! `espressivo` maps MIDI onset rolls to log-Mel spectrograms of piano
//! performances, with per-frame latent control of two style factors:
//! articulation (staccato vs. legato) and dynamics (soft vs. loud). Each
//! factor has a two-component Gaussian-mixture prior whose components are
//! tied to binary frame labels, which makes two inference-time tricks
//! possible:
//!
//! * **gradual style morphing** — walk the latent trajectory along the line
//!   between the two component means while rendering, and
//! * **performance style transfer** — infer the latent style trajectory from
//!   one recording and render another piece's notes with it.
//!
//! The pipeline is self-contained: a synthetic toy-piano corpus stands in
//! for a full performance dataset, and an iterative phase-reconstruction
//! vocoder stands in for a trained neural one.
//!
//! ## Crate layout
//!
//! * [`repr`] — MIDI/audio front end: note events, onset/frame rolls,
//!   condition labels, log-Mel spectrograms, aligned cropping.
//! * [`synthdata`] — deterministic toy-piano corpus generator with exactly
//!   controllable articulation and dynamics.
//! * [`gmvae`] — the probabilistic core: mixture priors, reparameterized
//!   sampling, closed-form KL, responsibilities, the ELBO with auxiliary
//!   cross-entropy terms.
//! * [`networks`] — bidirectional LSTM encoders/decoder with hand-written
//!   forward and backward passes over a flat parameter vector.
//! * [`model`] — the assembled conditional GM-VAE and its end-to-end
//!   gradient computation.
//! * [`trainer`] — Adam optimization loop, metrics logging, deterministic
//!   checkpoint/resume.
//! * [`render`] — morphing, style transfer, Mel inversion to audio, and
//!   spectrogram figures.
//! * [`io`] — named-array piece archives, WAV and Standard MIDI File I/O,
//!   manifests.
//! * [`cli`] — the `prepare`/`train`/`morph`/`transfer`/`eval` command
//!   surface used by the thin binary.
//!
//! See the `examples/` directory for one runnable example per capability.

pub mod error;
pub mod gmvae;
pub mod io;
pub mod model;
pub mod networks;
pub mod render;
pub mod repr;
pub mod rng;
pub mod synthdata;
pub mod trainer;

pub mod cli;

pub use error::{Error, Result};
pub use repr::FrameGrid;

/// Version tag written into checkpoints and run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
