use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::mpsc::sync_channel;
use std::thread;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{Checkpoint, Record};
use super::config::TrainConfig;
use super::eval::{evaluate, CropPolicy};
use super::sgd::Sgd;
use super::state::{load_model, model_checkpoint};
use crate::data::{make_batch, Dataset, InputMode, LabeledImage, Normalization};
use crate::error::{Error, Result};
use crate::lgc::condensation_stage_for_epoch;
use crate::model::Model;
use crate::nnops::{softmax_cross_entropy, softmax_cross_entropy_backward};
use crate::tensor::{Element, Tensor};
use crate::Mode;

const PREFETCH: usize = 2;
const MOMENTUM_PREFIX: &str = "optim.momentum.";
pub const METRICS_FILE: &str = "metrics.csv";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
const METRICS_HEADER: &str = "epoch,lr,train_loss,train_acc,val_acc,wall_seconds";

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    /// Center-crop accuracy on the validation split, when one exists.
    pub val_acc: Option<f64>,
    pub wall_seconds: f64,
}

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        let val = self.val_acc.map_or_else(String::new, |v| v.to_string());
        format!(
            "{},{},{},{},{},{:.3}",
            self.epoch, self.lr, self.train_loss, self.train_acc, val, self.wall_seconds
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CondenseEvent {
    pub epoch: usize,
    pub layer: String,
    /// Stage reached by this event.
    pub stage: usize,
}

/// Training state: model, optimizer, schedule position and data statistics.
pub struct Trainer<T: Element> {
    pub model: Model<T>,
    pub config: TrainConfig,
    pub norm: Normalization,
    pub sgd: Sgd<T>,
    /// Next epoch to run.
    pub epoch: usize,
    pub best_score: Option<f64>,
    pub history: Vec<EpochMetrics>,
    pub events: Vec<CondenseEvent>,
}

impl<T: Element> Trainer<T> {
    pub fn new(model: Model<T>, config: TrainConfig, norm: Normalization) -> Result<Self> {
        config.validate()?;
        norm.validate()?;
        for (_, l) in model.learned_layers() {
            condensation_stage_for_epoch(0, config.total_epochs, l.condensation())?;
        }
        let sgd = Sgd::new(config.momentum, config.weight_decay, config.decay_all);
        Ok(Trainer {
            model,
            config,
            norm,
            sgd,
            epoch: 0,
            best_score: None,
            history: Vec::new(),
            events: Vec::new(),
        })
    }

    fn epoch_rng(&self, epoch: usize, lane: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(2 * epoch as u64 + lane);
        rng
    }

    /// Index batches for `epoch`; a lone trailing sample joins the previous batch.
    pub fn batches(&self, epoch: usize, n: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.epoch_rng(epoch, 0));
        let mut out: Vec<Vec<usize>> = order.chunks(self.config.batch_size).map(<[usize]>::to_vec).collect();
        if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
            let tail = out.pop().unwrap();
            out.last_mut().unwrap().extend(tail);
        }
        out
    }

    /// Advances learned layers to the stage scheduled for `epoch`.
    pub fn condense_for_epoch(&mut self, epoch: usize) -> Result<Vec<CondenseEvent>> {
        let total = self.config.total_epochs;
        let mut fired = Vec::new();
        for (name, l) in self.model.learned_layers_mut() {
            let target = condensation_stage_for_epoch(epoch, total, l.condensation())?;
            while l.stage() < target {
                l.condense()?;
                fired.push(CondenseEvent {
                    epoch,
                    layer: name.clone(),
                    stage: l.stage(),
                });
            }
        }
        self.events.extend(fired.iter().cloned());
        Ok(fired)
    }

    fn diverged(&self, batch: usize, lr: f64, loss: f64) -> Error {
        Error::Diverged {
            epoch: self.epoch,
            batch,
            lr,
            loss,
        }
    }

    fn step(&mut self, x: &Tensor<T>, labels: &[usize], batch: usize, lr: f64) -> Result<(f64, usize)> {
        self.model.zero_grad();
        let logits = match self.model.forward(x, Mode::Train) {
            Err(Error::NonFinite(_)) => return Err(self.diverged(batch, lr, f64::NAN)),
            r => r?,
        };
        let (loss, probs) = match softmax_cross_entropy(&logits, labels) {
            Err(Error::NonFinite(_)) => return Err(self.diverged(batch, lr, f64::NAN)),
            r => r?,
        };
        let loss = loss.to_f64_lossy();
        if !loss.is_finite() {
            return Err(self.diverged(batch, lr, loss));
        }
        let k = logits.shape().item();
        let correct = logits
            .data()
            .chunks(k)
            .zip(labels)
            .filter(|(row, &l)| row.iter().enumerate().all(|(j, v)| j == l || (*v < row[l]) || (*v == row[l] && j > l)))
            .count();
        let g = softmax_cross_entropy_backward(&probs, labels)?;
        self.model.backward(&g)?;
        self.sgd.step(self.model.params_mut(), lr)?;
        Ok((loss, correct))
    }

    /// Runs one epoch over `data.train` and validates on a center crop.
    pub fn run_epoch(&mut self, data: &Dataset) -> Result<EpochMetrics> {
        let epoch = self.epoch;
        if epoch >= self.config.total_epochs {
            return Err(Error::Config(format!("training already finished ({epoch} epochs)")));
        }
        if data.train.len() < 2 {
            return Err(Error::Config(format!("training split holds {} images; need at least 2", data.train.len())));
        }
        let started = Instant::now();
        let lr = self.config.lr_at_epoch(epoch);
        self.condense_for_epoch(epoch)?;
        let batches = self.batches(epoch, data.train.len());
        let mut crop_rng = self.epoch_rng(epoch, 1);
        let norm = self.norm;
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        thread::scope(|s| -> Result<()> {
            let (tx, rx) = sync_channel(PREFETCH);
            let train: &[LabeledImage] = &data.train;
            s.spawn(move || {
                for b in &batches {
                    let imgs: Vec<&LabeledImage> = b.iter().map(|&i| &train[i]).collect();
                    if tx.send(make_batch::<T, _>(&imgs, InputMode::Train, &norm, &mut crop_rng)).is_err() {
                        break;
                    }
                }
            });
            for (bi, item) in rx.into_iter().enumerate() {
                let (x, labels) = item?;
                let (loss, c) = self.step(&x, &labels, bi, lr)?;
                loss_sum += loss * labels.len() as f64;
                correct += c;
                seen += labels.len();
            }
            Ok(())
        })?;
        let val = data.validation();
        let val_acc = if val.is_empty() {
            None
        } else {
            Some(evaluate(&self.model, val, &self.norm, CropPolicy::Center)?.accuracy)
        };
        self.epoch += 1;
        let m = EpochMetrics {
            epoch,
            lr,
            train_loss: loss_sum / seen as f64,
            train_acc: correct as f64 / seen as f64,
            val_acc,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        self.history.push(m.clone());
        Ok(m)
    }

    /// Trains to `total_epochs` (or the early-stop accuracy). With `out_dir`,
    /// appends to `metrics.csv` and writes `best.ckpt` / `last.ckpt` each epoch.
    pub fn fit(&mut self, data: &Dataset, out_dir: Option<&Path>, mut on_epoch: impl FnMut(&EpochMetrics)) -> Result<()> {
        let metrics = match out_dir {
            Some(dir) => Some(prepare_metrics(dir)?),
            None => None,
        };
        while self.epoch < self.config.total_epochs {
            let m = self.run_epoch(data)?;
            let score = m.val_acc.unwrap_or(m.train_acc);
            let improved = self.best_score.is_none_or(|b| score > b);
            if improved {
                self.best_score = Some(score);
            }
            if let (Some(dir), Some(path)) = (out_dir, &metrics) {
                let ck = self.to_checkpoint()?;
                if improved {
                    ck.save(&dir.join(BEST_CHECKPOINT))?;
                }
                ck.save(&dir.join(LAST_CHECKPOINT))?;
                let mut f = OpenOptions::new()
                    .append(true)
                    .open(path)
                    .map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
                writeln!(f, "{}", m.csv_row()).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
            }
            on_epoch(&m);
            if self.config.stop_at_train_acc.is_some_and(|t| m.train_acc >= t) {
                break;
            }
        }
        Ok(())
    }

    /// Full state: model, normalization, optimizer buffers, schedule position and RNG.
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = model_checkpoint(&self.model, &self.norm, false)?;
        self.config.to_kv(&mut ck.header);
        ck.header.set("epoch", self.epoch);
        // per-epoch generators are ChaCha8(seed) on streams 2e (shuffle) and 2e+1 (crops)
        ck.header.set("rng", format!("chacha8 seed={} stream={}", self.config.seed, 2 * self.epoch));
        if let Some(b) = self.best_score {
            ck.header.set("best_score", b);
        }
        for (name, v) in self.sgd.buffers() {
            ck.records.push(Record::vector(format!("{MOMENTUM_PREFIX}{name}"), v));
        }
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let (mut model, norm) = load_model::<T>(ck)?;
        let config = TrainConfig::from_kv(&ck.header)?;
        let mut t = Trainer::new(model.clone(), config, norm)?;
        t.epoch = ck.header.require("epoch")?;
        t.best_score = ck.header.get("best_score")?;
        let sizes: Vec<(String, usize)> = model.params_mut().into_iter().map(|p| (p.name, p.tensor.data().len())).collect();
        for r in ck.records.iter().filter(|r| r.name.starts_with(MOMENTUM_PREFIX)) {
            let name = &r.name[MOMENTUM_PREFIX.len()..];
            let Some((_, n)) = sizes.iter().find(|(p, _)| p == name) else {
                return Err(Error::Format(format!("momentum buffer for unknown parameter `{name}`")));
            };
            if r.numel() != *n {
                return Err(Error::Format(format!("momentum buffer `{name}` has {} entries, expected {n}", r.numel())));
            }
            t.sgd.set_buffer(name, r.to_vec()?);
        }
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

fn prepare_metrics(dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let path = dir.join(METRICS_FILE);
    let fresh = fs::metadata(&path).map(|m| m.len() == 0).unwrap_or(true);
    if fresh {
        fs::write(&path, format!("{METRICS_HEADER}\n")).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    }
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic;
    use crate::model::{ModelConfig, Variant};

    fn tiny(seed: u64) -> (Dataset, Normalization) {
        let d = synthetic::generate_dataset(2, 1, 1, seed);
        let n = Normalization::from_images(&d.train).unwrap();
        (d, n)
    }

    fn cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            batch_size: 8,
            total_epochs: epochs,
            seed: 11,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn batches_cover_every_index_once() {
        let (_, n) = tiny(0);
        let t = Trainer::new(Model::<f32>::build(&ModelConfig::default(), 0).unwrap(), cfg(3), n).unwrap();
        for len in [2, 9, 16, 17] {
            let b = t.batches(1, len);
            let mut all: Vec<usize> = b.concat();
            all.sort();
            assert_eq!(all, (0..len).collect::<Vec<_>>());
            assert!(b.iter().all(|x| x.len() >= 2));
        }
        assert_eq!(t.batches(0, 20), t.batches(0, 20));
        assert_ne!(t.batches(0, 20), t.batches(1, 20));
    }

    #[test]
    fn seeded_epochs_are_identical() {
        let (d, n) = tiny(1);
        let run = || {
            let mut t = Trainer::new(Model::<f32>::build(&ModelConfig::default(), 3).unwrap(), cfg(2), n).unwrap();
            let m = t.run_epoch(&d).unwrap();
            (m.train_loss, t.model)
        };
        let (a, ma) = run();
        let (b, mb) = run();
        assert_eq!(a.to_bits(), b.to_bits());
        assert_eq!(ma, mb);
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let (d, n) = tiny(2);
        let model = Model::<f32>::build(&ModelConfig::default(), 4).unwrap();
        let mut straight = Trainer::new(model.clone(), cfg(2), n).unwrap();
        straight.run_epoch(&d).unwrap();
        straight.run_epoch(&d).unwrap();

        let mut first = Trainer::new(model, cfg(2), n).unwrap();
        first.run_epoch(&d).unwrap();
        let bytes = first.to_checkpoint().unwrap().encode();
        let mut resumed = Trainer::<f32>::from_checkpoint(&Checkpoint::decode(&bytes).unwrap()).unwrap();
        assert_eq!(resumed.sgd, first.sgd);
        resumed.run_epoch(&d).unwrap();
        assert_eq!(resumed.model, straight.model);
        assert_eq!(resumed.sgd, straight.sgd);
    }

    #[test]
    fn condensation_fires_on_schedule() {
        let (_, n) = tiny(0);
        let model = Model::<f32>::build(&ModelConfig::for_variant(Variant::Grouped), 0).unwrap();
        let mut t = Trainer::new(model, cfg(120), n).unwrap();
        for e in 0..120 {
            t.condense_for_epoch(e).unwrap();
        }
        let conv1: Vec<(usize, usize)> = t
            .events
            .iter()
            .filter(|e| e.layer == "block1.layer0.conv1")
            .map(|e| (e.epoch, e.stage))
            .collect();
        assert_eq!(conv1, vec![(20, 1), (40, 2), (60, 3)]);
        let conv2 = t.events.iter().filter(|e| e.layer == "block2.layer3.conv2").count();
        assert_eq!(conv2, 7);
        assert!(t.model.is_fully_condensed());
    }

    #[test]
    fn too_short_schedule_for_grouped_variant() {
        let model = Model::<f32>::build(&ModelConfig::for_variant(Variant::Grouped), 0).unwrap();
        assert!(matches!(Trainer::new(model, cfg(4), Normalization::default()), Err(Error::Schedule(_))));
    }

    #[test]
    fn divergence_is_reported() {
        let (d, n) = tiny(3);
        let mut model = Model::<f32>::build(&ModelConfig::default(), 0).unwrap();
        model.classifier_bias.data_mut()[0] = f32::NAN;
        let mut t = Trainer::new(model, cfg(2), n).unwrap();
        match t.run_epoch(&d) {
            Err(Error::Diverged { epoch: 0, batch: 0, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn fit_writes_logs_and_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let (d, n) = tiny(4);
        let mut t = Trainer::new(Model::<f32>::build(&ModelConfig::default(), 0).unwrap(), cfg(2), n).unwrap();
        let mut seen = 0;
        t.fit(&d, Some(dir.path()), |_| seen += 1).unwrap();
        assert_eq!(seen, 2);
        let log = fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
        assert_eq!(log.lines().count(), 3);
        assert!(log.starts_with(METRICS_HEADER));
        let last = Trainer::<f32>::load(&dir.path().join(LAST_CHECKPOINT)).unwrap();
        assert_eq!(last.epoch, 2);
        assert_eq!(last.model, t.model);
        assert!(dir.path().join(BEST_CHECKPOINT).exists());
    }
}
