use std::fmt;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use super::adam::Adam;
use super::checkpoint::{Checkpoint, Stage};
use super::config::TrainConfig;
use crate::corpus::{augment_corpus, load_corpus, Utterance};
use crate::error::{Error, Result};
use crate::hybrid::{hybrid_loss_grad, hybrid_loss_parts, LossParts};
use crate::model::{Model, ModelParams};
use crate::numerics::{clip_global_norm, Matrix};
use crate::phoneset::{read_phone_file, PhoneInventory, SymbolId};
use crate::seeding::{derive_seed, rng_for};

pub const LOG_FILE: &str = "train.log";

/// One training example with features already widened to f64.
#[derive(Clone, Debug)]
pub struct Example {
    pub id: String,
    pub features: Matrix,
    pub target: Vec<SymbolId>,
}

impl Example {
    pub fn from_utterance(u: &Utterance) -> Self {
        Example {
            id: u.id.clone(),
            features: u.features.to_matrix(),
            target: u.target().to_vec(),
        }
    }

    /// Symbols the loss is normalized by: the targets plus `<eos>`.
    pub fn symbols(&self) -> usize {
        self.target.len() + 1
    }
}

pub fn examples(utts: &[Utterance]) -> Vec<Example> {
    utts.iter().map(Example::from_utterance).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub stage: Stage,
    pub epoch: usize,
    /// Per-symbol training loss accumulated while the epoch ran.
    pub train_loss: f64,
    pub dev_loss: Option<f64>,
    pub skipped: usize,
    pub examples: usize,
}

impl fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "stage={} epoch={} train_loss={:.6} dev_loss=",
            self.stage, self.epoch, self.train_loss
        )?;
        match self.dev_loss {
            Some(d) => write!(f, "{d:.6}")?,
            None => f.write_str("-")?,
        }
        write!(f, " skipped={} examples={}", self.skipped, self.examples)
    }
}

impl EpochRecord {
    pub fn parse(line: &str) -> Option<EpochRecord> {
        let mut stage = None;
        let mut epoch = None;
        let mut train = None;
        let mut dev = None;
        let mut skipped = None;
        let mut examples = None;
        for field in line.split_whitespace() {
            let (k, v) = field.split_once('=')?;
            match k {
                "stage" => stage = Stage::ALL.into_iter().find(|s| s.as_str() == v),
                "epoch" => epoch = v.parse().ok(),
                "train_loss" => train = v.parse().ok(),
                "dev_loss" => dev = Some(if v == "-" { None } else { Some(v.parse().ok()?) }),
                "skipped" => skipped = v.parse().ok(),
                "examples" => examples = v.parse().ok(),
                _ => return None,
            }
        }
        Some(EpochRecord {
            stage: stage?,
            epoch: epoch?,
            train_loss: train?,
            dev_loss: dev?,
            skipped: skipped?,
            examples: examples?,
        })
    }
}

/// Groups example indices into batches of similar length. Within the
/// sort, ties keep corpus order.
pub fn length_batches(lengths: &[usize], batch_size: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.sort_by_key(|&i| (lengths[i], i));
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

struct UtteranceGrad {
    parts: Option<LossParts>,
    grad: ModelParams,
}

fn compute_grads(
    model: &Model,
    batch: &[&Example],
    lambda: f64,
    slots: &mut [UtteranceGrad],
    threads: usize,
) -> Result<()> {
    let work = |ex: &Example, slot: &mut UtteranceGrad| -> Result<()> {
        slot.grad.fill(0.0);
        let parts = hybrid_loss_grad(&ex.features, &ex.target, model, lambda, &mut slot.grad, None)?;
        slot.parts = Some(parts);
        Ok(())
    };
    let slots = &mut slots[..batch.len()];
    if threads <= 1 || batch.len() <= 1 {
        for (ex, slot) in batch.iter().zip(slots.iter_mut()) {
            work(ex, slot)?;
        }
        return Ok(());
    }
    let per = batch.len().div_ceil(threads);
    std::thread::scope(|scope| {
        let handles: Vec<_> = batch
            .chunks(per)
            .zip(slots.chunks_mut(per))
            .map(|(exs, ss)| {
                scope.spawn(move || -> Result<()> {
                    for (ex, slot) in exs.iter().zip(ss.iter_mut()) {
                        work(ex, slot)?;
                    }
                    Ok(())
                })
            })
            .collect();
        handles
            .into_iter()
            .try_for_each(|h| h.join().expect("gradient worker panicked"))
    })
}

fn classify_loss(ex: &Example, parts: &LossParts) -> Result<bool> {
    if parts.hybrid.is_finite() {
        return Ok(true);
    }
    if !parts.ctc_feasible && !parts.hybrid.is_nan() {
        log::debug!(
            "skipping {}: {} frames cannot carry {} target symbols",
            ex.id,
            ex.features.rows(),
            ex.target.len()
        );
        return Ok(false);
    }
    Err(Error::NonFinite(format!(
        "loss {} on utterance {}",
        parts.hybrid, ex.id
    )))
}

/// Mean per-symbol hybrid loss over the examples the CTC branch can align.
pub fn corpus_loss(model: &Model, data: &[Example], lambda: f64) -> Result<Option<f64>> {
    let mut total = 0.0;
    let mut symbols = 0usize;
    for ex in data {
        let parts = hybrid_loss_parts(&ex.features, &ex.target, model, lambda)?;
        if classify_loss(ex, &parts)? {
            total += parts.hybrid;
            symbols += ex.symbols();
        }
    }
    Ok((symbols > 0).then(|| total / symbols as f64))
}

/// Runs `cfg.epochs[stage]` epochs of mini-batch training in place.
pub fn train_epochs(
    model: &mut Model,
    data: &[Example],
    dev: &[Example],
    cfg: &TrainConfig,
    stage: Stage,
    sink: &mut dyn FnMut(&EpochRecord) -> Result<()>,
) -> Result<Vec<EpochRecord>> {
    let epochs = cfg.epochs[stage.index()];
    let mut records = Vec::with_capacity(epochs);
    if epochs == 0 {
        return Ok(records);
    }
    let lengths: Vec<usize> = data.iter().map(|e| e.features.rows()).collect();
    let batches = length_batches(&lengths, cfg.batch_size);
    let mut adam = Adam::new(model.params.num_params(), cfg.learning_rate);
    let mut slots: Vec<UtteranceGrad> = (0..cfg.batch_size.min(data.len().max(1)))
        .map(|_| UtteranceGrad {
            parts: None,
            grad: model.params.zeros_like(),
        })
        .collect();
    let mut sum = model.params.zeros_like();
    let threads = cfg.threads.min(cfg.batch_size).max(1);

    for epoch in 1..=epochs {
        let mut order: Vec<usize> = (0..batches.len()).collect();
        order.shuffle(&mut rng_for(
            cfg.seed,
            &format!("batches-{}", stage.as_str()),
            epoch as u64,
        ));
        let mut loss_total = 0.0;
        let mut symbol_total = 0usize;
        let mut skipped = 0usize;
        for &b in &order {
            let batch: Vec<&Example> = batches[b].iter().map(|&i| &data[i]).collect();
            compute_grads(model, &batch, cfg.lambda, &mut slots, threads)?;
            sum.fill(0.0);
            let mut batch_loss = 0.0;
            let mut batch_symbols = 0usize;
            // Fixed reduction order keeps results independent of `threads`.
            for (ex, slot) in batch.iter().zip(&slots) {
                let parts = slot.parts.as_ref().expect("filled by compute_grads");
                if !classify_loss(ex, parts)? {
                    skipped += 1;
                    continue;
                }
                batch_loss += parts.hybrid;
                batch_symbols += ex.symbols();
                sum.add_scaled(&slot.grad, 1.0);
            }
            if batch_symbols == 0 {
                continue;
            }
            let scale = 1.0 / batch_symbols as f64;
            for t in sum.tensors_mut() {
                t.iter_mut().for_each(|g| *g *= scale);
            }
            clip_global_norm(&mut sum.tensors_mut(), cfg.clip_norm);
            adam.step(&mut model.params, &sum);
            loss_total += batch_loss;
            symbol_total += batch_symbols;
        }
        if !model.params.is_finite() {
            return Err(Error::NonFinite(format!(
                "parameters after {stage} epoch {epoch}"
            )));
        }
        let dev_loss = if dev.is_empty() {
            None
        } else {
            corpus_loss(model, dev, cfg.lambda)?
        };
        let record = EpochRecord {
            stage,
            epoch,
            train_loss: if symbol_total > 0 {
                loss_total / symbol_total as f64
            } else {
                f64::NAN
            },
            dev_loss,
            skipped,
            examples: data.len(),
        };
        log::info!("{record}");
        sink(&record)?;
        records.push(record);
    }
    Ok(records)
}

#[derive(Clone, Debug)]
pub struct StageResult {
    pub checkpoint: Checkpoint,
    pub records: Vec<EpochRecord>,
    /// Examples the optimizer saw in each epoch.
    pub examples: usize,
}

fn no_sink(_: &EpochRecord) -> Result<()> {
    Ok(())
}

fn fresh_model(inv: &PhoneInventory, cfg: &TrainConfig, stage: Stage) -> Result<Model> {
    let mut rng = rng_for(cfg.seed, &format!("init-{}", stage.as_str()), 0);
    Model::new(inv.clone(), cfg.dims.clone(), &mut rng)
}

pub fn train_stage1(
    native: &[Utterance],
    dev: &[Example],
    inv: &PhoneInventory,
    cfg: &TrainConfig,
    sink: Option<&mut dyn FnMut(&EpochRecord) -> Result<()>>,
) -> Result<StageResult> {
    if let Some(u) = native
        .iter()
        .find(|u| u.target().iter().any(|&s| !inv.is_canonical(s)))
    {
        return Err(Error::Corpus(format!(
            "{}: native training transcripts must contain canonical phones only",
            u.id
        )));
    }
    let mut model = fresh_model(inv, cfg, Stage::AccentFree)?;
    let data = examples(native);
    let records = train_epochs(
        &mut model,
        &data,
        dev,
        cfg,
        Stage::AccentFree,
        sink.unwrap_or(&mut no_sink),
    )?;
    Ok(StageResult {
        checkpoint: Checkpoint {
            stage: Stage::AccentFree,
            config: cfg.clone(),
            model,
        },
        records,
        examples: data.len(),
    })
}

/// The stage-2 starting point: a fresh model carrying the stage-1 encoder.
pub fn init_stage2(stage1: &Checkpoint, cfg: &TrainConfig) -> Result<Model> {
    let mut model = fresh_model(&stage1.model.inventory, cfg, Stage::Stage2)?;
    if stage1.model.dims != model.dims {
        return Err(Error::config(
            "dims",
            "stage-1 checkpoint shape differs from the configured model",
        ));
    }
    model.params.encoder = stage1.model.params.encoder.clone();
    Ok(model)
}

pub fn train_stage2(
    stage1: &Checkpoint,
    cp: &[Utterance],
    dev: &[Example],
    inv: &PhoneInventory,
    cfg: &TrainConfig,
    sink: Option<&mut dyn FnMut(&EpochRecord) -> Result<()>>,
) -> Result<StageResult> {
    stage1.check_inventory(inv)?;
    let augmented = augment_corpus(cp, cfg.shuffle_prob, inv, derive_seed(cfg.seed, "augment", 0))?;
    let mut model = init_stage2(stage1, cfg)?;
    let data = examples(&augmented);
    let records = train_epochs(
        &mut model,
        &data,
        dev,
        cfg,
        Stage::Stage2,
        sink.unwrap_or(&mut no_sink),
    )?;
    Ok(StageResult {
        checkpoint: Checkpoint {
            stage: Stage::Stage2,
            config: cfg.clone(),
            model,
        },
        records,
        examples: data.len(),
    })
}

pub fn train_stage3(
    stage2: &Checkpoint,
    mp: &[Utterance],
    dev: &[Example],
    inv: &PhoneInventory,
    cfg: &TrainConfig,
    sink: Option<&mut dyn FnMut(&EpochRecord) -> Result<()>>,
) -> Result<StageResult> {
    stage2.check_inventory(inv)?;
    if let Some(u) = mp.iter().find(|u| u.annotated.is_none()) {
        return Err(Error::Corpus(format!(
            "{}: stage-3 utterances need annotated transcripts",
            u.id
        )));
    }
    let mut model = stage2.model.clone();
    let data = examples(mp);
    let records = train_epochs(
        &mut model,
        &data,
        dev,
        cfg,
        Stage::Final,
        sink.unwrap_or(&mut no_sink),
    )?;
    Ok(StageResult {
        checkpoint: Checkpoint {
            stage: Stage::Final,
            config: cfg.clone(),
            model,
        },
        records,
        examples: data.len(),
    })
}

#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub final_checkpoint: Checkpoint,
    pub records: Vec<EpochRecord>,
    /// Checkpoints written by this run, in stage order.
    pub checkpoint_paths: Vec<PathBuf>,
    pub output_dir: PathBuf,
}

pub fn load_inventory(cfg: &TrainConfig) -> Result<PhoneInventory> {
    let phones = read_phone_file(&cfg.resolve(&cfg.phones))?;
    PhoneInventory::build(&phones, cfg.inventory_mode)
}

fn load_stage_corpus(cfg: &TrainConfig, path: &Path, inv: &PhoneInventory) -> Result<Vec<Utterance>> {
    let utts = load_corpus(&cfg.resolve(path), inv)?;
    if let Some(u) = utts
        .iter()
        .find(|u| u.features.dim() != cfg.dims.feat_dim)
    {
        return Err(Error::Corpus(format!(
            "{}: feature dimension {} but the model expects feat_dim = {}",
            u.id,
            u.features.dim(),
            cfg.dims.feat_dim
        )));
    }
    Ok(utts)
}

/// Runs stages 1 to 3, or only those after `resume`'s stage, writing each
/// checkpoint and appending one log line per epoch.
pub fn run_pipeline(cfg: &TrainConfig, resume: Option<Checkpoint>) -> Result<PipelineOutput> {
    cfg.validate()?;
    let inv = load_inventory(cfg)?;
    let first = match &resume {
        None => Stage::AccentFree,
        Some(ck) => {
            ck.check_inventory(&inv)?;
            if ck.model.dims != cfg.dims {
                return Err(Error::config(
                    "dims",
                    "resume checkpoint shape differs from the configured model",
                ));
            }
            if ck.config.to_text() != cfg.to_text() {
                log::warn!("resume checkpoint was trained with a different configuration");
            }
            match ck.stage {
                Stage::AccentFree => Stage::Stage2,
                Stage::Stage2 | Stage::Final => Stage::Final,
            }
        }
    };
    let resumed_at = resume.as_ref().map(|ck| ck.stage);
    let needed = |s: Stage| resumed_at.is_none_or(|r| s > r);
    // Fail on unreadable corpora before any training time is spent.
    for (stage, path) in [
        (Stage::AccentFree, &cfg.l1_manifest),
        (Stage::Stage2, &cfg.cp_manifest),
        (Stage::Final, &cfg.mp_manifest),
    ] {
        let p = cfg.resolve(path);
        if needed(stage) && !p.is_file() {
            return Err(Error::Stage {
                stage: stage.as_str(),
                source: Box::new(Error::io(
                    p,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "corpus manifest not found"),
                )),
            });
        }
    }
    log::debug!("starting at stage {first}");

    let out_dir = cfg.resolve(&cfg.output_dir);
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let log_path = out_dir.join(LOG_FILE);
    let mut log_file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let mut sink = |r: &EpochRecord| -> Result<()> {
        writeln!(log_file, "{r}").map_err(|e| Error::io(&log_path, e))
    };

    let dev = match &cfg.dev_manifest {
        Some(p) => examples(&load_stage_corpus(cfg, p, &inv)?),
        None => Vec::new(),
    };
    let mut records = Vec::new();
    let mut paths = Vec::new();
    let mut current = resume;
    let wrap = |stage: Stage| move |e: Error| Error::Stage {
        stage: stage.as_str(),
        source: Box::new(e),
    };

    if needed(Stage::AccentFree) {
        let s = Stage::AccentFree;
        let native = load_stage_corpus(cfg, &cfg.l1_manifest, &inv).map_err(wrap(s))?;
        let r = train_stage1(&native, &dev, &inv, cfg, Some(&mut sink)).map_err(wrap(s))?;
        current = Some(finish_stage(r, &out_dir, &mut records, &mut paths)?);
    }
    if needed(Stage::Stage2) {
        let s = Stage::Stage2;
        let cp = load_stage_corpus(cfg, &cfg.cp_manifest, &inv).map_err(wrap(s))?;
        let prev = current.take().expect("stage 1 result or resume checkpoint");
        let r = train_stage2(&prev, &cp, &dev, &inv, cfg, Some(&mut sink)).map_err(wrap(s))?;
        current = Some(finish_stage(r, &out_dir, &mut records, &mut paths)?);
    }
    if needed(Stage::Final) {
        let s = Stage::Final;
        let mp = load_stage_corpus(cfg, &cfg.mp_manifest, &inv).map_err(wrap(s))?;
        let prev = current.take().expect("stage 2 result or resume checkpoint");
        let r = train_stage3(&prev, &mp, &dev, &inv, cfg, Some(&mut sink)).map_err(wrap(s))?;
        current = Some(finish_stage(r, &out_dir, &mut records, &mut paths)?);
    }
    Ok(PipelineOutput {
        final_checkpoint: current.expect("at least one checkpoint"),
        records,
        checkpoint_paths: paths,
        output_dir: out_dir,
    })
}

fn finish_stage(
    r: StageResult,
    out_dir: &Path,
    records: &mut Vec<EpochRecord>,
    paths: &mut Vec<PathBuf>,
) -> Result<Checkpoint> {
    let path = out_dir.join(r.checkpoint.stage.file_name());
    r.checkpoint.save(&path)?;
    log::info!("wrote {}", path.display());
    records.extend(r.records);
    paths.push(path);
    Ok(r.checkpoint)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_group_by_length() {
        let lengths = [9, 3, 7, 3, 1];
        let b = length_batches(&lengths, 2);
        assert_eq!(b, vec![vec![4, 1], vec![3, 2], vec![0]]);
        assert_eq!(length_batches(&[], 4).len(), 0);
    }

    #[test]
    fn record_line_round_trip() {
        let r = EpochRecord {
            stage: Stage::Stage2,
            epoch: 3,
            train_loss: 1.25,
            dev_loss: None,
            skipped: 2,
            examples: 40,
        };
        let line = r.to_string();
        assert_eq!(
            line,
            "stage=stage2 epoch=3 train_loss=1.250000 dev_loss=- skipped=2 examples=40"
        );
        assert_eq!(EpochRecord::parse(&line), Some(r));
        assert_eq!(EpochRecord::parse("stage=x epoch=1"), None);
    }
}
