//! Epoch loop with seeded shuffling, checkpoints and resumption.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{MeanReport, RegionReport};
use crate::model::write_atomic;
use crate::model::{load_model, save_model, Model};
use crate::nn::Mode;
use crate::sample::ShadowTriplet;
use crate::seed::stream_rng;

use super::adam::AdamState;
use super::augment::{augment_triplet, fit_to_side};
use super::step::{train_step, Batch, TrainConfig};

/// Indexed access to training triplets.
pub trait TripletSource: Sync {
    fn len(&self) -> usize;

    fn load(&self, index: usize) -> Result<ShadowTriplet>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl TripletSource for [ShadowTriplet] {
    fn len(&self) -> usize {
        <[ShadowTriplet]>::len(self)
    }

    fn load(&self, index: usize) -> Result<ShadowTriplet> {
        self.get(index)
            .cloned()
            .ok_or_else(|| Error::Validation(format!("sample {index} out of range")))
    }
}

impl TripletSource for Vec<ShadowTriplet> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn load(&self, index: usize) -> Result<ShadowTriplet> {
        self.as_slice().load(index)
    }
}

#[derive(Clone, Debug, Default)]
pub struct FitOptions {
    /// Root under which `step-N/` checkpoint directories are written.
    pub checkpoint_dir: Option<PathBuf>,
    /// Checkpoint every this many steps (and always at the end).
    pub checkpoint_every: Option<u64>,
    /// A `step-N/` directory to continue from.
    pub resume_from: Option<PathBuf>,
    /// JSON-lines file receiving one record per step and per epoch.
    pub history_path: Option<PathBuf>,
    /// Stop after this many global steps.
    pub max_steps: Option<u64>,
    /// Score the held-out split at the end of every epoch.
    pub validate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based global step.
    pub step: u64,
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub validation: Option<MeanReport>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum HistoryLine {
    Step(StepRecord),
    Epoch(EpochRecord),
}

/// Position in the step stream: the next batch to run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cursor {
    pub epoch: usize,
    pub batch: usize,
    pub global_step: u64,
}

#[derive(Serialize, Deserialize)]
struct CheckpointManifest {
    step: u64,
    cursor: Cursor,
    train_config: TrainConfig,
    corpus_size: usize,
    model_file: String,
    optimizer_file: String,
    /// Running loss sum of the current epoch, so its mean survives a resume.
    epoch_loss_sum: f64,
}

const MODEL_FILE: &str = "model.shau";
const OPTIMIZER_FILE: &str = "optimizer.bin";
const MANIFEST_FILE: &str = "manifest.json";

/// Seeded split into (train, validation) index lists; the validation share
/// is `floor(n · fraction)`.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream_rng(seed, "split", &[n as u64]));
    let n_val = ((n as f64) * fraction).floor() as usize;
    let val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    train.sort_unstable();
    (train, val)
}

/// Visiting order of the training indices in `epoch`.
pub fn epoch_order(train: &[usize], seed: u64, epoch: usize) -> Vec<usize> {
    let mut order = train.to_vec();
    order.shuffle(&mut stream_rng(seed, "shuffle", &[epoch as u64]));
    order
}

pub fn steps_per_epoch(train_len: usize, batch_size: usize) -> usize {
    train_len.div_ceil(batch_size)
}

/// Load, resize and augment the samples of one batch. Each sample draws from
/// its own stream keyed by global step and batch position, so the result does
/// not depend on scheduling.
fn assemble_batch(source: &dyn TripletSource, indices: &[usize], config: &TrainConfig, step: u64) -> Result<Batch> {
    let items: Vec<ShadowTriplet> = indices
        .par_iter()
        .enumerate()
        .map(|(pos, &i)| {
            let t = source
                .load(i)
                .map_err(|e| Error::Validation(format!("cannot read sample {i}: {e}")))?;
            let t = fit_to_side(&t, config.input_side);
            let mut rng = stream_rng(config.rng_seed, "augment", &[step, pos as u64]);
            Ok(augment_triplet(&t, &config.augment, &mut rng))
        })
        .collect::<Result<_>>()?;
    Batch::from_triplets(&items)
}

/// Mean region metrics of the model on `indices`, evaluated in eval mode at
/// the training resolution.
pub fn validate_split(model: &Model, source: &dyn TripletSource, indices: &[usize], side: usize) -> Result<MeanReport> {
    let reports: Vec<RegionReport> = indices
        .par_iter()
        .map(|&i| {
            let t = fit_to_side(&source.load(i)?, side);
            let pred = model.predict(&t.shadow, &t.mask)?;
            RegionReport::compute(&pred, &t.shadow_free, &t.mask)
        })
        .collect::<Result<_>>()?;
    Ok(MeanReport::from_reports(reports.iter()))
}

fn write_checkpoint(
    root: &Path,
    model: &Model,
    state: &AdamState,
    cursor: Cursor,
    config: &TrainConfig,
    corpus_size: usize,
    epoch_loss_sum: f64,
) -> Result<PathBuf> {
    let dir = root.join(format!("step-{}", cursor.global_step));
    fs::create_dir_all(&dir)?;
    save_model(model, &dir.join(MODEL_FILE))?;
    write_atomic(&dir.join(OPTIMIZER_FILE), &state.encode())?;
    let manifest = CheckpointManifest {
        step: cursor.global_step,
        cursor,
        train_config: config.clone(),
        corpus_size,
        model_file: MODEL_FILE.into(),
        optimizer_file: OPTIMIZER_FILE.into(),
        epoch_loss_sum,
    };
    write_atomic(&dir.join(MANIFEST_FILE), &serde_json::to_vec_pretty(&manifest)?)?;
    write_atomic(
        &root.join("latest"),
        format!("step-{}\n", cursor.global_step).as_bytes(),
    )?;
    Ok(dir)
}

/// Most recent `step-N/` directory recorded under a checkpoint root.
pub fn latest_checkpoint(root: &Path) -> Result<Option<PathBuf>> {
    match fs::read_to_string(root.join("latest")) {
        Ok(s) => Ok(Some(root.join(s.trim()))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e.into()),
    }
}

struct Resumed {
    model: Model,
    state: AdamState,
    cursor: Cursor,
    epoch_loss_sum: f64,
}

fn read_checkpoint(dir: &Path, config: &TrainConfig, corpus_size: usize) -> Result<Resumed> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read(&manifest_path).map_err(|_| Error::MissingFile(manifest_path.clone()))?;
    let manifest: CheckpointManifest = serde_json::from_slice(&text)?;
    if manifest.corpus_size != corpus_size {
        return Err(Error::Checkpoint(format!(
            "checkpoint was trained on {} samples, corpus has {corpus_size}",
            manifest.corpus_size
        )));
    }
    let old = &manifest.train_config;
    if old.rng_seed != config.rng_seed || old.batch_size != config.batch_size {
        return Err(Error::Checkpoint(
            "seed and batch size must match the checkpoint to continue its shuffle stream".into(),
        ));
    }
    let model = load_model(&dir.join(&manifest.model_file))?;
    let opt_path = dir.join(&manifest.optimizer_file);
    let bytes = fs::read(&opt_path).map_err(|_| Error::MissingFile(opt_path))?;
    let state = AdamState::decode(&bytes, model.params())?;
    Ok(Resumed {
        model,
        state,
        cursor: manifest.cursor,
        epoch_loss_sum: manifest.epoch_loss_sum,
    })
}

struct HistoryWriter(Option<fs::File>);

impl HistoryWriter {
    fn open(path: Option<&Path>, resume_step: Option<u64>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(HistoryWriter(None));
        };
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut kept = String::new();
        if let (Some(step), Ok(old)) = (resume_step, fs::read_to_string(path)) {
            // Drop records written after the checkpoint being resumed.
            let mut last_step = 0;
            for line in old.lines() {
                match serde_json::from_str::<HistoryLine>(line) {
                    Ok(HistoryLine::Step(s)) if s.step <= step => last_step = s.step,
                    Ok(HistoryLine::Step(_)) => break,
                    Ok(HistoryLine::Epoch(_)) if last_step <= step => {}
                    _ => break,
                }
                kept.push_str(line);
                kept.push('\n');
            }
        }
        let mut f = fs::File::create(path)?;
        f.write_all(kept.as_bytes())?;
        Ok(HistoryWriter(Some(f)))
    }

    fn write(&mut self, line: &HistoryLine) -> Result<()> {
        if let Some(f) = &mut self.0 {
            serde_json::to_writer(&mut *f, line)?;
            f.write_all(b"\n")?;
            f.flush()?;
        }
        Ok(())
    }
}

/// Train `model` on `source`. With `resume_from`, the model, optimizer and
/// step cursor are restored from the checkpoint and the run continues the
/// same shuffle and augmentation streams; the returned history then holds only
/// the newly run steps.
pub fn fit(
    model: &mut Model,
    source: &dyn TripletSource,
    config: &TrainConfig,
    options: &FitOptions,
) -> Result<TrainHistory> {
    config.validate()?;
    if source.is_empty() {
        return Err(Error::Validation("training corpus is empty".into()));
    }
    let n = source.len();
    let (train, val) = split_indices(n, config.validation_fraction, config.rng_seed);
    if train.is_empty() {
        return Err(Error::Validation(
            "no training samples left after the validation split".into(),
        ));
    }
    let per_epoch = steps_per_epoch(train.len(), config.batch_size);

    let (mut state, mut cursor, mut epoch_loss_sum) = match &options.resume_from {
        Some(dir) => {
            let r = read_checkpoint(dir, config, n)?;
            *model = r.model;
            (r.state, r.cursor, r.epoch_loss_sum)
        }
        None => (AdamState::new(model.params()), Cursor::default(), 0.0),
    };
    model.set_mode(Mode::Train);
    let resume_step = options.resume_from.as_ref().map(|_| cursor.global_step);
    let mut writer = HistoryWriter::open(options.history_path.as_deref(), resume_step)?;
    let mut history = TrainHistory::default();
    let mut last_saved = None;

    let save = |model: &Model, state: &AdamState, cursor: Cursor, sum: f64| -> Result<Option<PathBuf>> {
        match &options.checkpoint_dir {
            Some(root) => write_checkpoint(root, model, state, cursor, config, n, sum).map(Some),
            None => Ok(None),
        }
    };

    'epochs: while cursor.epoch < config.epochs {
        let order = epoch_order(&train, config.rng_seed, cursor.epoch);
        while cursor.batch < per_epoch {
            if options.max_steps.is_some_and(|m| cursor.global_step >= m) {
                break 'epochs;
            }
            let lo = cursor.batch * config.batch_size;
            let hi = (lo + config.batch_size).min(order.len());
            let batch = assemble_batch(source, &order[lo..hi], config, cursor.global_step)?;
            let loss = train_step(model, &batch, &mut state, config)?;
            cursor.global_step += 1;
            cursor.batch += 1;
            epoch_loss_sum += loss;
            let rec = StepRecord {
                step: cursor.global_step,
                epoch: cursor.epoch,
                loss,
            };
            log::debug!("step {} epoch {} loss {loss:.6}", rec.step, rec.epoch);
            writer.write(&HistoryLine::Step(rec.clone()))?;
            history.steps.push(rec);

            if cursor.batch == per_epoch {
                let validation = if options.validate && !val.is_empty() {
                    model.set_mode(Mode::Eval);
                    let v = validate_split(model, source, &val, config.input_side);
                    model.set_mode(Mode::Train);
                    Some(v?)
                } else {
                    None
                };
                let rec = EpochRecord {
                    epoch: cursor.epoch,
                    mean_loss: epoch_loss_sum / per_epoch as f64,
                    validation,
                };
                log::info!("epoch {} mean loss {:.6}", rec.epoch, rec.mean_loss);
                writer.write(&HistoryLine::Epoch(rec.clone()))?;
                history.epochs.push(rec);
                cursor.epoch += 1;
                cursor.batch = 0;
                epoch_loss_sum = 0.0;
            }
            if options
                .checkpoint_every
                .is_some_and(|k| k > 0 && cursor.global_step % k == 0)
            {
                last_saved = save(model, &state, cursor, epoch_loss_sum)?.map(|_| cursor.global_step);
            }
            if cursor.batch == 0 {
                continue 'epochs;
            }
        }
    }
    if last_saved != Some(cursor.global_step) {
        save(model, &state, cursor, epoch_loss_sum)?;
    }
    Ok(history)
}
