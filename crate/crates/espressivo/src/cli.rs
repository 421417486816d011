//! Command-line surface: `prepare`, `train`, `morph`, `transfer`, `eval`.
//!
//! Every command is deterministic given `--seed`, resolves its
//! configuration as defaults < config file < flags, and writes a
//! `<command>.run.json` manifest next to its outputs.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::io::{
    build_piece_tensors, load_piece_archive, read_input_manifest, save_latents,
    save_piece_archive, write_data_manifest, write_wav_mono, DataRow, RunManifest,
};
use crate::model::{Factor, GmVae};
use crate::render::{
    emit_figure, mel_to_audio, render_morph, render_transfer, FixedOther, MorphSpec, StyleMode,
};
use crate::repr::{parse_midi, FrameGrid};
use crate::synthdata::{generate_corpus, CorpusParams};
use crate::trainer::{evaluate, load_checkpoint, train, Dataset, TrainConfig, DATA_MANIFEST};

#[derive(Debug, Parser)]
#[command(
    name = "espressivo",
    version,
    about = "Conditional GM-VAE piano performance synthesis"
)]
pub struct Cli {
    /// Base directory against which relative paths are resolved.
    #[arg(long, global = true, default_value = ".")]
    pub workdir: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert MIDI+WAV pairs (or a synthetic corpus) into piece archives.
    Prepare(PrepareArgs),
    /// Train the model on a prepared corpus.
    Train(TrainArgs),
    /// Render gradual style morphs from a checkpoint.
    Morph(MorphArgs),
    /// Render one piece's notes in another piece's style.
    Transfer(TransferArgs),
    /// Evaluate a checkpoint on a prepared split.
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    /// Audio sample rate in Hz.
    #[arg(long, default_value_t = 16_000)]
    pub sample_rate: u32,
    /// Analysis hop in samples.
    #[arg(long, default_value_t = 256)]
    pub hop: usize,
    /// Analysis window in samples.
    #[arg(long, default_value_t = 1024)]
    pub window: usize,
    /// Lower Mel edge in Hz.
    #[arg(long, default_value_t = 30.0)]
    pub fmin: f32,
    /// Upper Mel edge in Hz.
    #[arg(long, default_value_t = 8_000.0)]
    pub fmax: f32,
}

impl GridArgs {
    pub fn grid(&self) -> Result<FrameGrid> {
        FrameGrid::new(self.sample_rate, self.hop, self.window, self.fmin, self.fmax)
    }
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// MAESTRO-style CSV manifest (midi path, audio path, split).
    #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
    pub manifest: Option<PathBuf>,
    /// Generate this many synthetic toy-piano pieces instead.
    #[arg(long)]
    pub synthetic: Option<usize>,
    /// Output directory for archives and the data manifest.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Length of each synthetic piece in seconds.
    #[arg(long, default_value_t = 24.0)]
    pub piece_seconds: f64,
    #[command(flatten)]
    pub grid: GridArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Prepared data directory (from `prepare`).
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for checkpoints and metrics.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON config file; flags given explicitly override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Resume from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub max_steps: Option<u64>,
    #[arg(long)]
    pub kl_warmup: Option<f64>,
    #[arg(long)]
    pub lambda_ce: Option<f64>,
    #[arg(long)]
    pub crop_seconds: Option<f64>,
    #[arg(long)]
    pub eval_every: Option<u64>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[arg(long)]
    pub hidden_size: Option<usize>,
    /// Stop the auxiliary CE gradient from reaching z.
    #[arg(long)]
    pub ce_detach_z: bool,
}

#[derive(Debug, Args)]
pub struct MorphArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Piece archive providing the onset roll.
    #[arg(long)]
    pub piece: PathBuf,
    /// Factor to morph: `art` or `dyn`.
    #[arg(long, default_value = "art")]
    pub factor: String,
    #[arg(long = "from", default_value_t = 0)]
    pub from_component: usize,
    #[arg(long = "to", default_value_t = 1)]
    pub to_component: usize,
    /// Component the non-morphing factor is held at.
    #[arg(long, default_value_t = 0)]
    pub fixed_other: usize,
    /// Render all four morphing scenarios into one figure.
    #[arg(long)]
    pub all_scenarios: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub vocoder_iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TransferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Archive whose notes are rendered.
    #[arg(long)]
    pub content: PathBuf,
    /// Archive whose style is inferred.
    #[arg(long)]
    pub style: PathBuf,
    /// `mean` (deterministic) or `sample`.
    #[arg(long, default_value = "mean")]
    pub mode: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub vocoder_iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "validation")]
    pub split: String,
    /// Where to write the CSV report (default: `<data>/eval_<split>.csv`).
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Parse argv and run. Returns an error (nonzero exit) unless every
/// requested output was produced.
pub fn run_from<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| {
        // clap's rendered help/usage text
        Error::Config(e.to_string())
    })?;
    run(cli)
}

pub fn run(cli: Cli) -> Result<()> {
    let wd = &cli.workdir;
    match cli.command {
        Command::Prepare(args) => cmd_prepare(wd, args),
        Command::Train(args) => cmd_train(wd, args),
        Command::Morph(args) => cmd_morph(wd, args),
        Command::Transfer(args) => cmd_transfer(wd, args),
        Command::Eval(args) => cmd_eval(wd, args),
    }
}

fn resolve(workdir: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        workdir.join(path)
    }
}

/// Split assignment for synthetic groups of four (one group = all four
/// style cells): six groups train, one validation, one test, repeating.
fn synthetic_split(group: usize) -> &'static str {
    match group % 8 {
        6 => "validation",
        7 => "test",
        _ => "train",
    }
}

pub fn cmd_prepare(workdir: &Path, args: PrepareArgs) -> Result<()> {
    let grid = args.grid.grid()?;
    let out_dir = resolve(workdir, &args.out);
    std::fs::create_dir_all(&out_dir)?;

    let mut manifest = RunManifest::new("prepare", args.seed, serde_json::to_value(&grid)?);
    let mut rows: Vec<DataRow> = Vec::new();
    let mut failures = 0usize;
    let mut attempted = 0usize;

    if let Some(n) = args.synthetic {
        let params = CorpusParams::new(args.seed, n, args.piece_seconds);
        let corpus = generate_corpus(&params, &grid)?;
        for (i, piece) in corpus.iter().enumerate() {
            attempted += 1;
            let name = format!("piece_{i:04}.npz");
            let tensors = build_piece_tensors(&piece.events, &piece.audio, &grid)?;
            print_summary(&name, &tensors);
            save_piece_archive(&out_dir.join(&name), &tensors, &grid)?;
            rows.push(DataRow {
                archive: name,
                split: synthetic_split(i / 4).to_string(),
                art: piece.style.articulation_mode.to_string(),
                dyn_: piece.style.dynamics_mode.to_string(),
            });
        }
    } else {
        let manifest_path = resolve(workdir, args.manifest.as_ref().expect("clap enforces"));
        manifest.inputs.push(manifest_path.display().to_string());
        let input_rows = read_input_manifest(&manifest_path)?;
        for (i, row) in input_rows.iter().enumerate() {
            attempted += 1;
            let name = format!("piece_{i:04}.npz");
            match prepare_one(row, &grid) {
                Ok(tensors) => {
                    print_summary(&name, &tensors);
                    save_piece_archive(&out_dir.join(&name), &tensors, &grid)?;
                    rows.push(DataRow {
                        archive: name,
                        split: row.split.clone(),
                        art: String::new(),
                        dyn_: String::new(),
                    });
                }
                Err(e) => {
                    eprintln!("skipping {}: {e}", row.midi.display());
                    failures += 1;
                }
            }
        }
    }

    if rows.is_empty() {
        return Err(Error::Manifest(format!(
            "all {attempted} input pieces failed to prepare"
        )));
    }
    let manifest_out = out_dir.join(DATA_MANIFEST);
    write_data_manifest(&manifest_out, &rows)?;
    manifest.outputs = rows.iter().map(|r| r.archive.clone()).collect();
    manifest.outputs.push(DATA_MANIFEST.to_string());
    manifest.write(&out_dir)?;
    println!(
        "prepared {} pieces ({failures} skipped) -> {}",
        rows.len(),
        out_dir.display()
    );
    Ok(())
}

fn prepare_one(row: &crate::io::InputRow, grid: &FrameGrid) -> Result<crate::io::PieceTensors> {
    let midi_bytes = std::fs::read(&row.midi)?;
    let parsed = parse_midi(&midi_bytes)?;
    for w in &parsed.warnings {
        eprintln!("  midi warning ({}): {w}", row.midi.display());
    }
    let (audio, rate) = crate::io::read_wav_mono(&row.audio)?;
    let duration = audio.len() as f64 / rate as f64;
    // keep only events that fit inside the audio; clamp trailing offsets
    let mut events = Vec::with_capacity(parsed.events.len());
    for ev in parsed.events {
        if ev.onset >= duration {
            continue;
        }
        let mut ev = ev;
        if ev.offset > duration {
            ev.offset = duration;
        }
        if ev.offset > ev.onset {
            events.push(ev);
        }
    }
    // rate mismatch surfaces inside mel_spectrogram via build_piece_tensors
    if rate != grid.sample_rate {
        return Err(Error::Audio(format!(
            "{}: sample rate {rate} does not match grid rate {}; resample externally",
            row.audio.display(),
            grid.sample_rate
        )));
    }
    build_piece_tensors(&events, &audio, grid)
}

fn print_summary(name: &str, tensors: &crate::io::PieceTensors) {
    let t = tensors.num_frames();
    let notes = tensors.onset.data.iter().filter(|&&v| v != 0).count();
    let pct = |v: &ndarray::Array1<u8>| {
        100.0 * v.iter().filter(|&&x| x != 0).count() as f64 / t.max(1) as f64
    };
    println!(
        "{name}: T={t} notes={notes} c_art={:.1}% c_dyn={:.1}%",
        pct(&tensors.conditions.c_art),
        pct(&tensors.conditions.c_dyn)
    );
}

/// Resolve the train config: defaults < config file < explicit flags.
fn resolve_train_config(workdir: &Path, args: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let bytes = std::fs::read(resolve(workdir, path))?;
            serde_json::from_slice::<TrainConfig>(&bytes)?
        }
        None => TrainConfig::default(),
    };
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = args.max_steps {
        cfg.max_steps = v;
    }
    if let Some(v) = args.kl_warmup {
        cfg.kl_warmup_fraction = v;
    }
    if let Some(v) = args.lambda_ce {
        cfg.lambda_ce = v;
    }
    if let Some(v) = args.crop_seconds {
        cfg.crop_seconds = v;
    }
    if let Some(v) = args.eval_every {
        cfg.eval_every = v;
    }
    if let Some(v) = args.checkpoint_every {
        cfg.checkpoint_every = v;
    }
    if let Some(v) = args.latent_dim {
        cfg.latent_dim = v;
    }
    if let Some(v) = args.hidden_size {
        cfg.hidden_size = v;
    }
    if args.ce_detach_z {
        cfg.ce_detach_z = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn cmd_train(workdir: &Path, args: TrainArgs) -> Result<()> {
    let data_dir = resolve(workdir, &args.data);
    let out_dir = resolve(workdir, &args.out);
    let config = resolve_train_config(workdir, &args)?;
    let dataset = Dataset::load(&data_dir)?;

    let resume = args.resume.as_ref().map(|p| resolve(workdir, p));
    let (state, artifacts) = train(&dataset, &config, &out_dir, resume.as_deref())?;

    let mut manifest = RunManifest::new("train", config.seed, serde_json::to_value(&state.config)?);
    manifest.inputs.push(data_dir.display().to_string());
    manifest.outputs = vec![
        artifacts.final_checkpoint.display().to_string(),
        artifacts.metrics_csv.display().to_string(),
    ];
    manifest.write(&out_dir)?;
    println!(
        "trained to step {} -> {}",
        state.step,
        artifacts.final_checkpoint.display()
    );
    Ok(())
}

fn load_model(path: &Path) -> Result<GmVae<f32>> {
    Ok(load_checkpoint(path)?.model)
}

pub fn cmd_morph(workdir: &Path, args: MorphArgs) -> Result<()> {
    let out_dir = resolve(workdir, &args.out);
    std::fs::create_dir_all(&out_dir)?;
    let ckpt = resolve(workdir, &args.checkpoint);
    let model = load_model(&ckpt)?;
    let (piece, grid) = load_piece_archive(&resolve(workdir, &args.piece))?;
    let factor: Factor = args.factor.parse()?;

    let scenarios: Vec<(String, MorphSpec)> = if args.all_scenarios {
        let mut v = Vec::new();
        for (f, other) in [
            (Factor::Art, 0usize),
            (Factor::Art, 1),
            (Factor::Dyn, 0),
            (Factor::Dyn, 1),
        ] {
            v.push((
                format!("{f} 0>1, other={other}"),
                MorphSpec {
                    factor: f,
                    from_component: 0,
                    to_component: 1,
                    fixed_other: FixedOther::Component(other),
                },
            ));
        }
        v
    } else {
        vec![(
            format!(
                "{factor} {}>{} other={}",
                args.from_component, args.to_component, args.fixed_other
            ),
            MorphSpec {
                factor,
                from_component: args.from_component,
                to_component: args.to_component,
                fixed_other: FixedOther::Component(args.fixed_other),
            },
        )]
    };

    let mut manifest = RunManifest::new(
        "morph",
        args.seed,
        serde_json::json!({
            "factor": factor.to_string(),
            "all_scenarios": args.all_scenarios,
            "vocoder_iters": args.vocoder_iters,
        }),
    );
    manifest.inputs = vec![ckpt.display().to_string(), args.piece.display().to_string()];

    let mut panels = Vec::new();
    for (i, (label, spec)) in scenarios.iter().enumerate() {
        let (mel, z_art, z_dyn) = render_morph(&model, &piece.onset, spec)?;
        let audio = mel_to_audio(&mel, &grid, args.vocoder_iters)?;
        let stem = if args.all_scenarios {
            format!("morph_{i}_{}_{}", spec.factor, match spec.fixed_other {
                FixedOther::Component(k) => k,
                FixedOther::Latents(_) => 9,
            })
        } else {
            format!(
                "morph_{}_{}to{}",
                spec.factor, spec.from_component, spec.to_component
            )
        };
        write_wav_mono(&out_dir.join(format!("{stem}.wav")), &audio, grid.sample_rate)?;
        save_latents(
            &out_dir.join(format!("{stem}.latents.npz")),
            &z_art.data,
            &z_dyn.data,
        )?;
        manifest.outputs.push(format!("{stem}.wav"));
        manifest.outputs.push(format!("{stem}.latents.npz"));
        panels.push((label.clone(), mel));
    }

    let figure = out_dir.join(if args.all_scenarios {
        "morph_scenarios.png"
    } else {
        "morph.png"
    });
    let refs: Vec<&crate::repr::MelSpectrogram> = panels.iter().map(|(_, m)| m).collect();
    let labels: Vec<&str> = panels.iter().map(|(l, _)| l.as_str()).collect();
    emit_figure(&refs, &labels, &figure)?;
    manifest.outputs.push(figure.display().to_string());
    manifest.write(&out_dir)?;
    println!("rendered {} morph scenario(s) -> {}", panels.len(), out_dir.display());
    Ok(())
}

pub fn cmd_transfer(workdir: &Path, args: TransferArgs) -> Result<()> {
    let out_dir = resolve(workdir, &args.out);
    std::fs::create_dir_all(&out_dir)?;
    let model = load_model(&resolve(workdir, &args.checkpoint))?;
    let (content, grid) = load_piece_archive(&resolve(workdir, &args.content))?;
    let (style, style_grid) = load_piece_archive(&resolve(workdir, &args.style))?;
    if grid != style_grid {
        return Err(Error::Config(
            "content and style archives use different grids".into(),
        ));
    }
    let mode: StyleMode = args.mode.parse()?;

    let (mel, z_art, z_dyn) = render_transfer(&model, &content.onset, &style.mel, mode, args.seed)?;
    let audio = mel_to_audio(&mel, &grid, args.vocoder_iters)?;

    write_wav_mono(&out_dir.join("transfer.wav"), &audio, grid.sample_rate)?;
    save_latents(&out_dir.join("transfer.latents.npz"), &z_art.data, &z_dyn.data)?;
    emit_figure(
        &[&style.mel, &content.mel, &mel],
        &["style", "content", "output"],
        &out_dir.join("transfer.png"),
    )?;

    let mut manifest = RunManifest::new(
        "transfer",
        args.seed,
        serde_json::json!({ "mode": args.mode, "vocoder_iters": args.vocoder_iters }),
    );
    manifest.inputs = vec![
        args.content.display().to_string(),
        args.style.display().to_string(),
    ];
    manifest.outputs = vec![
        "transfer.wav".into(),
        "transfer.latents.npz".into(),
        "transfer.png".into(),
    ];
    manifest.write(&out_dir)?;
    println!("style transfer rendered -> {}", out_dir.display());
    Ok(())
}

pub fn cmd_eval(workdir: &Path, args: EvalArgs) -> Result<()> {
    let data_dir = resolve(workdir, &args.data);
    let model = load_model(&resolve(workdir, &args.checkpoint))?;
    let dataset = Dataset::load(&data_dir)?;
    let indices = dataset.split_indices(&args.split);
    if indices.is_empty() {
        return Err(Error::Config(format!(
            "split `{}` is empty; available: {:?}",
            args.split,
            dataset.splits()
        )));
    }
    let metrics = evaluate(&dataset, &indices, &model)?;
    println!(
        "split={} recon={:.6} kl_art={:.6} kl_dyn={:.6} acc_art={:.4} acc_dyn={:.4}",
        args.split,
        metrics.recon,
        metrics.kl_art,
        metrics.kl_dyn,
        metrics.condition_accuracy_art,
        metrics.condition_accuracy_dyn
    );

    let report = args
        .report
        .map(|p| resolve(workdir, &p))
        .unwrap_or_else(|| data_dir.join(format!("eval_{}.csv", args.split)));
    let csv = format!(
        "{}\n{}\n",
        crate::trainer::EvalMetrics::CSV_HEADER,
        metrics.csv_row()
    );
    crate::io::atomic_write(&report, csv.as_bytes())?;

    let mut manifest = RunManifest::new(
        "eval",
        args.seed,
        serde_json::json!({ "split": args.split }),
    );
    manifest.inputs = vec![data_dir.display().to_string()];
    manifest.outputs = vec![report.display().to_string()];
    manifest.write(report.parent().unwrap_or(&data_dir))?;
    Ok(())
}
