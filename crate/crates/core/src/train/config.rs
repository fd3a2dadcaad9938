use crate::error::{Error, Result};
use crate::kvtext::KvText;

/// Step decay: constant until `start`, then multiplied by `factor` every `every` epochs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepSchedule {
    pub start: usize,
    pub every: usize,
    pub factor: f64,
}

impl Default for StepSchedule {
    fn default() -> Self {
        StepSchedule {
            start: 80,
            every: 5,
            factor: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub total_epochs: usize,
    pub schedule: StepSchedule,
    pub seed: u64,
    /// Apply weight decay to biases and batch-norm parameters as well.
    pub decay_all: bool,
    /// Stop once an epoch's training accuracy reaches this fraction.
    pub stop_at_train_acc: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_lr: 1e-2,
            weight_decay: 5e-4,
            momentum: 0.9,
            batch_size: 128,
            total_epochs: 120,
            schedule: StepSchedule::default(),
            seed: 0,
            decay_all: false,
            stop_at_train_acc: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.base_lr));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight decay must be nonnegative, got {}", self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if self.batch_size < 2 {
            return bad(format!("batch size must be at least 2 for batch norm, got {}", self.batch_size));
        }
        if self.total_epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if self.schedule.every == 0 || !(self.schedule.factor > 0.0) {
            return bad("lr schedule step must be positive".into());
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        let s = self.schedule;
        if epoch < s.start {
            self.base_lr
        } else {
            let drops = (epoch - s.start) / s.every + 1;
            self.base_lr * s.factor.powi(drops as i32)
        }
    }

    pub fn to_kv(&self, kv: &mut KvText) {
        kv.set("base_lr", self.base_lr);
        kv.set("weight_decay", self.weight_decay);
        kv.set("momentum", self.momentum);
        kv.set("batch_size", self.batch_size);
        kv.set("total_epochs", self.total_epochs);
        kv.set("lr_step_start", self.schedule.start);
        kv.set("lr_step_every", self.schedule.every);
        kv.set("lr_step_factor", self.schedule.factor);
        kv.set("seed", self.seed);
        kv.set("decay_all", self.decay_all);
        if let Some(a) = self.stop_at_train_acc {
            kv.set("stop_at_train_acc", a);
        }
    }

    pub fn from_kv(kv: &KvText) -> Result<Self> {
        let cfg = TrainConfig {
            base_lr: kv.require("base_lr")?,
            weight_decay: kv.require("weight_decay")?,
            momentum: kv.require("momentum")?,
            batch_size: kv.require("batch_size")?,
            total_epochs: kv.require("total_epochs")?,
            schedule: StepSchedule {
                start: kv.require("lr_step_start")?,
                every: kv.require("lr_step_every")?,
                factor: kv.require("lr_step_factor")?,
            },
            seed: kv.require("seed")?,
            decay_all: kv.require("decay_all")?,
            stop_at_train_acc: kv.get("stop_at_train_acc")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Learning rate for `epoch` under `config`'s step schedule.
pub fn lr_at_epoch(epoch: usize, config: &TrainConfig) -> f64 {
    config.lr_at_epoch(epoch)
}
