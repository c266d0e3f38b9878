use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::augment::Dihedral;
use super::config::ExperimentConfig;
use super::data::{stack, BitemporalSample};
use super::metrics::{Confusion, MetricsReport};
use super::optim::Adam;
use crate::error::{Error, Result};
use crate::model::{hybrid_loss, weights, SteinFormer};
use crate::nn::{Mode, Module};
use crate::tensor::{no_grad, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Epochs,
    MaxSteps,
    TargetLoss,
    TimeLimit,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: u64,
    pub mean_loss: f64,
    pub lr: f64,
    pub seconds: f64,
    pub val: Option<MetricsReport>,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Total loss of every optimiser step, in order.
    pub step_losses: Vec<f64>,
    pub epochs: Vec<EpochRecord>,
    /// Epoch (1-based) and F1 of the best validation result.
    pub best: Option<(usize, f64)>,
    pub stop: StopReason,
}

impl TrainReport {
    pub fn steps(&self) -> u64 {
        self.step_losses.len() as u64
    }
}

pub struct TrainOutcome {
    /// Weights after the last step.
    pub model: SteinFormer,
    /// `f32`-rounded weights of the best validation epoch, as checkpointed.
    pub best_model: Option<SteinFormer>,
    pub report: TrainReport,
}

/// Metadata written next to every checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointInfo {
    pub format: String,
    pub epoch: usize,
    pub step: u64,
    pub params: u64,
    pub metrics: Option<MetricsReport>,
    pub config: ExperimentConfig,
}

/// Changed-class decision per pixel: `1` where the change logit is larger.
pub fn argmax_maps(logits: &Tensor) -> Result<Vec<Vec<u8>>> {
    let (n, c, h, w) = logits.dims4("argmax")?;
    if c != 2 {
        return Err(Error::dims("argmax classes", &[2], &[c]));
    }
    let plane = h * w;
    let z = logits.data();
    Ok((0..n)
        .map(|i| {
            let b = i * 2 * plane;
            (0..plane).map(|k| (z[b + plane + k] > z[b + k]) as u8).collect()
        })
        .collect())
}

/// Groups of consecutive same-sized samples, at most `batch` long.
fn batches(samples: &[BitemporalSample], batch: usize) -> Vec<&[BitemporalSample]> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < samples.len() {
        let hw = (samples[start].height, samples[start].width);
        let mut end = start + 1;
        while end < samples.len() && end - start < batch && (samples[end].height, samples[end].width) == hw {
            end += 1;
        }
        out.push(&samples[start..end]);
        start = end;
    }
    out
}

/// Binary change maps for each sample, in evaluation mode.
pub fn predict(model: &SteinFormer, samples: &[BitemporalSample], batch: usize) -> Result<Vec<Vec<u8>>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in batches(samples, batch.max(1)) {
        let refs: Vec<&BitemporalSample> = chunk.iter().collect();
        let (t1, t2, _) = stack(&refs)?;
        let logits = no_grad(|| model.forward(&t1, &t2, Mode::Eval))?.logits;
        out.extend(argmax_maps(&logits)?);
    }
    Ok(out)
}

/// Pooled confusion counts over labelled samples.
pub fn evaluate(model: &SteinFormer, samples: &[BitemporalSample], batch: usize) -> Result<MetricsReport> {
    if let Some(s) = samples.iter().find(|s| !s.has_label()) {
        return Err(Error::data(format!("sample {} has no label to evaluate against", s.id)));
    }
    let preds = predict(model, samples, batch)?;
    let mut total = Confusion::default();
    for (p, s) in preds.iter().zip(samples) {
        total += Confusion::from_maps(p, &s.label)?;
    }
    Ok(total.report())
}

fn write_checkpoint(dir: &Path, stem: &str, model: &SteinFormer, info: &CheckpointInfo) -> Result<()> {
    weights::save(model, &dir.join(format!("{stem}.stein")))?;
    std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(info)?)?;
    Ok(())
}

struct Logs {
    dir: PathBuf,
    steps: File,
    epochs: File,
}

impl Logs {
    fn open(dir: &Path, cfg: &ExperimentConfig) -> Result<Logs> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(cfg)?)?;
        let mut steps = File::create(dir.join("train_log.csv"))?;
        writeln!(steps, "step,epoch,loss,focal,dice,lr")?;
        let mut epochs = File::create(dir.join("epoch_log.csv"))?;
        writeln!(epochs, "epoch,steps,mean_loss,lr,seconds,precision,recall,f1,iou,oa")?;
        Ok(Logs { dir: dir.to_path_buf(), steps, epochs })
    }
}

/// Optimise a fresh model on `train`, validating on `val` after each epoch.
pub fn train(
    cfg: &ExperimentConfig,
    train: &[BitemporalSample],
    val: &[BitemporalSample],
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::data("no training samples"));
    }
    for s in train.iter().chain(val) {
        s.validate()?;
        if !s.has_label() {
            return Err(Error::data(format!("sample {} has no label", s.id)));
        }
    }
    let run = &cfg.run;
    let mut model = SteinFormer::new(&cfg.model)?;
    let mut opt = Adam::new(run.optimizer.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
    let mut logs = run.out_dir.as_deref().map(|d| Logs::open(d, cfg)).transpose()?;
    let params = model.num_params() as u64;
    let started = Instant::now();

    let mut step_losses = Vec::new();
    let mut epochs = Vec::new();
    let mut best: Option<(usize, f64)> = None;
    let mut best_model = None;
    let mut stop = StopReason::Epochs;
    let mut order: Vec<usize> = (0..train.len()).collect();

    'outer: for epoch in 1..=run.epochs {
        if run.time_limit_secs.is_some_and(|t| started.elapsed().as_secs_f64() >= t) {
            stop = StopReason::TimeLimit;
            break;
        }
        order.shuffle(&mut rng);
        let mut epoch_losses = Vec::new();
        let mut halted = None;
        for idx in order.chunks(run.batch_size) {
            let picked: Vec<BitemporalSample> = if cfg.data.augment {
                idx.iter().map(|&i| Dihedral::random(&mut rng).apply(&train[i])).collect::<Result<_>>()?
            } else {
                idx.iter().map(|&i| train[i].clone()).collect()
            };
            let refs: Vec<&BitemporalSample> = picked.iter().collect();
            let (t1, t2, y) = stack(&refs)?;
            let out = model.forward(&t1, &t2, Mode::Train)?;
            let loss = hybrid_loss(&out.logits, &y, &cfg.loss)?;
            let value = loss.total.item()?;
            let step = step_losses.len() as u64 + 1;
            if !value.is_finite() {
                return Err(Error::Numeric(format!("loss became {value} at step {step} (epoch {epoch})")));
            }
            model.zero_grad();
            loss.total.backward()?;
            opt.step(&mut model)?;
            step_losses.push(value);
            epoch_losses.push(value);
            if let Some(l) = logs.as_mut() {
                writeln!(l.steps, "{step},{epoch},{value},{},{},{}", loss.focal, loss.dice, opt.lr())?;
            }
            if run.target_loss.is_some_and(|t| value < t) {
                halted = Some(StopReason::TargetLoss);
                break;
            }
            if run.max_steps.is_some_and(|m| step >= m) {
                halted = Some(StopReason::MaxSteps);
                break;
            }
        }
        let lr_used = opt.lr();
        opt.end_epoch();

        let mut snapshot = model.clone();
        weights::round_to_f32(&mut snapshot);
        let metrics = if val.is_empty() { None } else { Some(evaluate(&snapshot, val, run.batch_size)?) };
        let record = EpochRecord {
            epoch,
            steps: step_losses.len() as u64,
            mean_loss: epoch_losses.iter().sum::<f64>() / epoch_losses.len().max(1) as f64,
            lr: lr_used,
            seconds: started.elapsed().as_secs_f64(),
            val: metrics.clone(),
        };
        let info = CheckpointInfo {
            format: "STEIN1".into(),
            epoch,
            step: record.steps,
            params,
            metrics: metrics.clone(),
            config: cfg.clone(),
        };
        let improved = match (&metrics, best) {
            (Some(m), Some((_, f))) => m.f1 > f,
            (Some(_), None) => true,
            (None, _) => false,
        };
        if let Some(l) = logs.as_mut() {
            let m = metrics.as_ref();
            let f = |g: fn(&MetricsReport) -> f64| m.map(|m| g(m).to_string()).unwrap_or_default();
            writeln!(
                l.epochs,
                "{epoch},{},{},{},{},{},{},{},{},{}",
                record.steps,
                record.mean_loss,
                record.lr,
                record.seconds,
                f(|m| m.precision),
                f(|m| m.recall),
                f(|m| m.f1),
                f(|m| m.iou),
                f(|m| m.oa)
            )?;
            write_checkpoint(&l.dir, "last", &snapshot, &info)?;
            if improved {
                write_checkpoint(&l.dir, "best", &snapshot, &info)?;
            }
        }
        if improved {
            best = Some((epoch, metrics.as_ref().expect("improved implies metrics").f1));
            best_model = Some(snapshot);
        }
        on_epoch(&record);
        epochs.push(record);
        if let Some(reason) = halted {
            stop = reason;
            break 'outer;
        }
    }
    Ok(TrainOutcome { model, best_model, report: TrainReport { step_losses, epochs, best, stop } })
}

/// Synthetic training and validation sets described by `cfg.data`, or the
/// PNG directories when given.
pub fn load_training_data(cfg: &ExperimentConfig) -> Result<(Vec<BitemporalSample>, Vec<BitemporalSample>)> {
    let d = &cfg.data;
    let train = match &d.train_dir {
        Some(dir) => super::data::load_dataset(dir)?,
        None => super::synth::synth_generate(&d.synth)?,
    };
    let val = match (&d.val_dir, &d.train_dir) {
        (Some(dir), _) => super::data::load_dataset(dir)?,
        (None, None) => super::synth::generate_range(&d.synth, d.synth.count as u64, d.holdout)?,
        (None, Some(_)) => Vec::new(),
    };
    Ok((train, val))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::synth::SynthSpec;
    use crate::model::ModelConfig;

    fn tiny() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.model = ModelConfig {
            stage_channels: vec![4, 4, 6, 8],
            heads: 2,
            p: 3,
            expansion: 1,
            decoder_channels: 4,
            input_size: [32, 32],
            ..ModelConfig::default()
        };
        cfg.data.synth = SynthSpec { size: 32, count: 4, ..SynthSpec::default() };
        cfg.data.holdout = 2;
        cfg.run.epochs = 2;
        cfg.run.batch_size = 2;
        cfg
    }

    #[test]
    fn deterministic_runs() {
        let cfg = tiny();
        let (tr, va) = load_training_data(&cfg).unwrap();
        let a = train(&cfg, &tr, &va, &mut |_| {}).unwrap();
        let b = train(&cfg, &tr, &va, &mut |_| {}).unwrap();
        assert_eq!(a.report.step_losses, b.report.step_losses);
        assert_eq!(weights::to_bytes(&a.model).unwrap(), weights::to_bytes(&b.model).unwrap());
    }

    #[test]
    fn writes_logs_and_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny();
        cfg.run.out_dir = Some(dir.path().to_path_buf());
        let (tr, va) = load_training_data(&cfg).unwrap();
        let out = train(&cfg, &tr, &va, &mut |_| {}).unwrap();
        let log = std::fs::read_to_string(dir.path().join("train_log.csv")).unwrap();
        assert_eq!(log.lines().count(), 1 + out.report.step_losses.len());
        for f in ["last.stein", "last.json", "best.stein", "best.json", "epoch_log.csv", "config.json"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let mut reloaded = SteinFormer::new(&cfg.model).unwrap();
        weights::load(&mut reloaded, &dir.path().join("best.stein")).unwrap();
        let info: CheckpointInfo =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("best.json")).unwrap()).unwrap();
        assert_eq!(evaluate(&reloaded, &va, 2).unwrap(), info.metrics.unwrap());
    }

    #[test]
    fn non_finite_loss_names_step() {
        let mut cfg = tiny();
        cfg.run.optimizer.lr = 1e300;
        cfg.run.optimizer.lr_decay = 1.0;
        cfg.run.optimizer.weight_decay = 0.0;
        let (tr, va) = load_training_data(&cfg).unwrap();
        match train(&cfg, &tr, &va, &mut |_| {}) {
            Err(Error::Numeric(m)) => assert!(m.contains("step"), "{m}"),
            Err(e) => panic!("unexpected error {e}"),
            Ok(_) => panic!("training should have diverged"),
        }
    }

    #[test]
    fn max_steps_stops() {
        let mut cfg = tiny();
        cfg.run.max_steps = Some(3);
        cfg.run.epochs = 10;
        let (tr, va) = load_training_data(&cfg).unwrap();
        let out = train(&cfg, &tr, &va, &mut |_| {}).unwrap();
        assert_eq!(out.report.steps(), 3);
        assert_eq!(out.report.stop, StopReason::MaxSteps);
    }
}
