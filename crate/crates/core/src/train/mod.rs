//! Optimisation, the training loop, evaluation and benchmarking.

mod bench;
mod eval;
mod optim;

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::data::{batch_iter, Dataset, DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::loss::{weighted_ce_loss, WeightMapMode};
use crate::model::{save_checkpoint, CheckpointPrecision, Model, ModelSpec};

pub use bench::{bench, machine_info, BenchReport};
pub use eval::{evaluate_identity, evaluate_model, predict_labels, predict_masks, EvalReport, ImageScore};
pub use optim::{adam_step, AdamConfig, OptimState};

pub const RUNLOG_FILE: &str = "runlog.csv";
pub const RUNLOG_HEADER: &str = "epoch,loss,miou,lr,seconds";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const CONFIG_ECHO: &str = "config.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    /// Multiplicative learning-rate decay per epoch.
    pub decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Seeds model initialisation, shuffling and augmentation.
    pub seed: u64,
    pub data_root: PathBuf,
    pub out_dir: PathBuf,
    pub weight_map: WeightMapMode,
    pub adam: AdamConfig,
    pub model: ModelSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 5e-4,
            decay: 0.9,
            epochs: 30,
            batch_size: 8,
            seed: 0,
            data_root: PathBuf::from("data"),
            out_dir: PathBuf::from("run"),
            weight_map: WeightMapMode::Inverted,
            adam: AdamConfig::default(),
            model: ModelSpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0) || !self.lr0.is_finite() {
            return Err(Error::Config(format!("lr0 must be positive, got {}", self.lr0)));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::Config(format!("decay must lie in (0, 1], got {}", self.decay)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.model.num_classes != 2 {
            return Err(Error::Config(format!(
                "portrait masks are binary; num_classes must be 2, got {}",
                self.model.num_classes
            )));
        }
        self.model.validate()
    }

    /// Applies one `key = value` override. Model keys are forwarded to [`ModelSpec::set`].
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
        }
        match key {
            "lr0" | "lr" => self.lr0 = num(key, value)?,
            "decay" => self.decay = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "batch_size" | "batch" => self.batch_size = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "data_root" | "data" => self.data_root = PathBuf::from(value),
            "out_dir" | "out" => self.out_dir = PathBuf::from(value),
            "weight_map" => self.weight_map = value.parse().map_err(Error::Config)?,
            "weight_decay" => self.adam.weight_decay = num(key, value)?,
            "beta1" => self.adam.beta1 = num(key, value)?,
            "beta2" => self.adam.beta2 = num(key, value)?,
            "eps" => self.adam.eps = num(key, value)?,
            _ => self.model.set(key, value)?,
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (k, v) in crate::config::parse_pairs(text)? {
            cfg.set(&k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "lr0 = {}", self.lr0);
        let _ = writeln!(s, "decay = {}", self.decay);
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "data_root = {}", self.data_root.display());
        let _ = writeln!(s, "out_dir = {}", self.out_dir.display());
        let _ = writeln!(s, "weight_map = {}", self.weight_map);
        let _ = writeln!(s, "weight_decay = {}", self.adam.weight_decay);
        let _ = writeln!(s, "beta1 = {}", self.adam.beta1);
        let _ = writeln!(s, "beta2 = {}", self.adam.beta2);
        let _ = writeln!(s, "eps = {}", self.adam.eps);
        s.push_str(&self.model.to_text());
        s
    }
}

/// `lr0 · decay^epoch`.
pub fn lr_schedule(epoch: usize, config: &TrainConfig) -> f64 {
    config.lr0 * config.decay.powi(epoch as i32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    /// Mean training loss over the epoch's samples.
    pub loss: f64,
    /// Held-out mIoU after the epoch.
    pub miou: f64,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct RunLog {
    pub config: String,
    pub rows: Vec<EpochRow>,
    pub final_checkpoint: PathBuf,
    pub best_checkpoint: Option<PathBuf>,
}

impl RunLog {
    pub fn best(&self) -> Option<&EpochRow> {
        self.rows.iter().fold(None, |best: Option<&EpochRow>, r| match best {
            Some(b) if b.miou >= r.miou => Some(b),
            _ => Some(r),
        })
    }

    pub fn losses(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.loss).collect()
    }
}

fn row_line(r: &EpochRow) -> String {
    format!("{},{},{},{},{:.3}", r.epoch, r.loss, r.miou, r.lr, r.seconds)
}

/// Reads a RunLog CSV back into rows.
pub fn read_runlog(path: &Path) -> Result<Vec<EpochRow>> {
    let bad = |msg: String| Error::format(path, msg);
    let mut rdr = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let field = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad(format!("bad field {i} in {rec:?}")))
        };
        rows.push(EpochRow {
            epoch: field(0)? as usize,
            loss: field(1)?,
            miou: field(2)?,
            lr: field(3)?,
            seconds: field(4)?,
        });
    }
    Ok(rows)
}

/// Result of a training run: the log and the final-epoch model.
pub struct TrainOutcome {
    pub log: RunLog,
    pub model: Model<f64>,
}

fn epoch_shuffle_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_mul(0xD129_0A4F_3C8B_6E15).wrapping_add(epoch as u64 + 1)
}

/// Loads the train and test splits under `config.data_root` and trains.
pub fn train(config: &TrainConfig, on_epoch: &mut dyn FnMut(&EpochRow)) -> Result<TrainOutcome> {
    config.validate()?;
    let train_set = Dataset::load(&DatasetManifest::load(&config.data_root, Split::Train)?, config.weight_map)?;
    let test_set = Dataset::load(&DatasetManifest::load(&config.data_root, Split::Test)?, config.weight_map)?;
    train_with(config, &train_set, &test_set, on_epoch)
}

/// Trains on in-memory datasets, writing the RunLog and checkpoints to `config.out_dir`.
///
/// After every epoch the model is evaluated on `test_set`; the checkpoint with the
/// highest mIoU so far is kept as `best.ckpt` and the last one as `final.ckpt`.
pub fn train_with(
    config: &TrainConfig,
    train_set: &Dataset,
    test_set: &Dataset,
    on_epoch: &mut dyn FnMut(&EpochRow),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let out = &config.out_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let config_text = config.to_text();
    let echo = out.join(CONFIG_ECHO);
    std::fs::write(&echo, &config_text).map_err(|e| Error::io(&echo, e))?;
    let log_path = out.join(RUNLOG_FILE);
    let mut log_file = std::fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    writeln!(log_file, "{RUNLOG_HEADER}").map_err(|e| Error::io(&log_path, e))?;

    let mut model = Model::<f64>::new(&config.model, config.seed)?;
    let mut optim = OptimState::new(config.lr0, config.adam)?;
    let final_path = out.join(FINAL_CHECKPOINT);
    let best_path = out.join(BEST_CHECKPOINT);
    let mut log = RunLog {
        config: config_text,
        rows: Vec::new(),
        final_checkpoint: final_path.clone(),
        best_checkpoint: None,
    };
    let mut best_miou = f64::NEG_INFINITY;

    for epoch in 0..config.epochs {
        let start = Instant::now();
        let lr = lr_schedule(epoch, config);
        optim.set_lr(lr)?;
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for batch in batch_iter(train_set, config.batch_size, Some(epoch_shuffle_seed(config.seed, epoch)), true)? {
            let batch = batch?;
            let logits = model.forward_train(&batch.images)?;
            let loss = weighted_ce_loss(&logits, &batch.masks, &batch.weights)?;
            model.zero_grad();
            model.backward(&loss.grad)?;
            adam_step(&mut model.parameters_mut(), &mut optim)?;
            loss_sum += loss.loss * batch.len() as f64;
            seen += batch.len();
        }
        let miou = evaluate_model(&model, test_set)?.miou;
        let row = EpochRow {
            epoch,
            loss: loss_sum / seen as f64,
            miou,
            lr,
            seconds: start.elapsed().as_secs_f64(),
        };
        writeln!(log_file, "{}", row_line(&row)).map_err(|e| Error::io(&log_path, e))?;
        log_file.flush().map_err(|e| Error::io(&log_path, e))?;
        if miou > best_miou {
            best_miou = miou;
            save_checkpoint(&model, &best_path, CheckpointPrecision::F64)?;
            log.best_checkpoint = Some(best_path.clone());
        }
        on_epoch(&row);
        log.rows.push(row);
    }
    save_checkpoint(&model, &final_path, CheckpointPrecision::F64)?;
    Ok(TrainOutcome { log, model })
}
