//! Prepared-corpus loading and the deterministic batch schedule.

use std::path::Path;

use ndarray::{Array2, Array3};
use rand::RngExt;

use crate::error::{Error, Result};
use crate::io::{load_piece_archive, read_data_manifest, DataRow, PieceTensors};
use crate::model::Batch;
use crate::repr::{crop_pair, crop_window_frames, FrameGrid};
use crate::rng::{derive_rng, stream};

/// Filename of the prepared-data manifest inside a data directory.
pub const DATA_MANIFEST: &str = "manifest.csv";

/// One loaded piece with its manifest row.
#[derive(Debug, Clone)]
pub struct LoadedPiece {
    pub tensors: PieceTensors,
    pub row: DataRow,
}

/// A prepared corpus held in memory; all pieces share one grid.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub pieces: Vec<LoadedPiece>,
    pub grid: FrameGrid,
}

impl Dataset {
    /// Load every archive listed in `<dir>/manifest.csv`.
    pub fn load(dir: &Path) -> Result<Self> {
        let rows = read_data_manifest(&dir.join(DATA_MANIFEST))?;
        let mut pieces = Vec::with_capacity(rows.len());
        let mut grid: Option<FrameGrid> = None;
        for row in rows {
            let path = dir.join(&row.archive);
            let (tensors, piece_grid) = load_piece_archive(&path)?;
            match &grid {
                None => grid = Some(piece_grid),
                Some(g) if *g != piece_grid => {
                    return Err(Error::Archive {
                        path,
                        message: "piece grid differs from the rest of the corpus".into(),
                    })
                }
                _ => {}
            }
            pieces.push(LoadedPiece { tensors, row });
        }
        Ok(Dataset {
            pieces,
            grid: grid.expect("manifest is never empty"),
        })
    }

    /// Indices of the pieces in one split.
    pub fn split_indices(&self, split: &str) -> Vec<usize> {
        self.pieces
            .iter()
            .enumerate()
            .filter(|(_, p)| p.row.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn splits(&self) -> Vec<String> {
        let mut names: Vec<String> = self.pieces.iter().map(|p| p.row.split.clone()).collect();
        names.sort();
        names.dedup();
        names
    }
}

/// Deterministic description of one training step's batch: which pieces and
/// which crop starts.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchPlan {
    pub epoch: u64,
    pub members: Vec<(usize, usize)>, // (piece index, start frame)
}

/// Steps per epoch for `n_train` pieces at `batch_size` (full batches only;
/// a trailing partial batch is folded into the next epoch's shuffle).
pub fn steps_per_epoch(n_train: usize, batch_size: usize) -> u64 {
    ((n_train / batch_size.min(n_train).max(1)).max(1)) as u64
}

/// Plan the batch for `step`: pieces are reshuffled and crop starts redrawn
/// once per epoch from streams keyed by `(seed, epoch)`, so any step can be
/// replayed without mutable RNG state.
pub fn plan_batch(
    dataset: &Dataset,
    train_indices: &[usize],
    seed: u64,
    batch_size: usize,
    window_frames: usize,
    step: u64,
) -> Result<BatchPlan> {
    if train_indices.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let b = batch_size.min(train_indices.len());
    let spe = steps_per_epoch(train_indices.len(), batch_size);
    let epoch = step / spe;
    let pos = (step % spe) as usize;

    let mut order: Vec<usize> = train_indices.to_vec();
    let mut shuffle_rng = derive_rng(seed, &[stream::SHUFFLE, epoch]);
    // Fisher-Yates
    for i in (1..order.len()).rev() {
        let j = shuffle_rng.random_range(0..=i);
        order.swap(i, j);
    }

    let mut crop_rng = derive_rng(seed, &[stream::CROP, epoch]);
    let starts: Vec<usize> = order
        .iter()
        .map(|&idx| {
            let t = dataset.pieces[idx].tensors.num_frames();
            if t < window_frames {
                return Err(Error::Crop(format!(
                    "piece `{}` has {t} frames but the crop window needs {window_frames}; \
                     pad the piece or drop it from the manifest",
                    dataset.pieces[idx].row.archive
                )));
            }
            Ok(crop_rng.random_range(0..=t - window_frames))
        })
        .collect::<Result<_>>()?;

    let members = (pos * b..(pos + 1) * b)
        .map(|i| {
            let i = i % order.len();
            (order[i], starts[i])
        })
        .collect();
    Ok(BatchPlan { epoch, members })
}

/// Materialize a plan as dense `f32` tensors.
pub fn assemble_batch(
    dataset: &Dataset,
    plan: &BatchPlan,
    window_frames: usize,
    window_s: f64,
) -> Result<Batch<f32>> {
    let b = plan.members.len();
    let mut x = Array3::<f32>::zeros((b, window_frames, 80));
    let mut onset = Array3::<f32>::zeros((b, window_frames, 88));
    let mut c_art = Array2::<u8>::zeros((b, window_frames));
    let mut c_dyn = Array2::<u8>::zeros((b, window_frames));

    for (bi, &(piece_idx, start)) in plan.members.iter().enumerate() {
        let piece = &dataset.pieces[piece_idx].tensors;
        let crop = crop_pair(
            &piece.mel,
            &piece.onset,
            &piece.frame,
            &piece.conditions,
            start,
            window_s,
            &dataset.grid,
        )?;
        x.index_axis_mut(ndarray::Axis(0), bi)
            .assign(&crop.mel.data);
        onset
            .index_axis_mut(ndarray::Axis(0), bi)
            .assign(&crop.onset.data.mapv(|v| v as f32));
        c_art
            .index_axis_mut(ndarray::Axis(0), bi)
            .assign(&crop.conditions.c_art);
        c_dyn
            .index_axis_mut(ndarray::Axis(0), bi)
            .assign(&crop.conditions.c_dyn);
    }
    Ok(Batch {
        x,
        onset,
        c_art,
        c_dyn,
    })
}

/// Plan and assemble in one call.
pub fn make_batch(
    dataset: &Dataset,
    train_indices: &[usize],
    seed: u64,
    batch_size: usize,
    window_s: f64,
    step: u64,
) -> Result<Batch<f32>> {
    let window_frames = crop_window_frames(window_s, &dataset.grid);
    let plan = plan_batch(dataset, train_indices, seed, batch_size, window_frames, step)?;
    assemble_batch(dataset, &plan, window_frames, window_s)
}
