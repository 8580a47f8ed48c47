use std::collections::HashSet;
use std::path::Path;

use log::{info, warn};

use super::adam::{Adam, AdamConfig};
use super::checkpoint::{Checkpoint, Record};
use super::config::RunConfig;
use super::evaluate::derain;
use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::image::{Batch, Dataset, DatasetManifest};
use crate::loss::{composite_loss, psnr, LossWeights, SsimParams, Triple};
use crate::net::{Ablation, ForwardOptions, Model, ModelConfig};
use crate::nn::{Mode, ParamStore, Session, BN_MOMENTUM};
use crate::seed;

pub const CHECKPOINT_FILE: &str = "checkpoint.dfd";
pub const LOG_FILE: &str = "train_log.csv";

const ADAM_M: &str = "adam.m.";
const ADAM_V: &str = "adam.v.";

/// Model, parameters and optimizer state at some iteration.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub model: Model,
    pub store: ParamStore<f32>,
    pub adam: Adam<f32>,
    /// Completed optimizer steps.
    pub iteration: u64,
}

/// Parameter and buffer records in registration order.
pub fn model_records(store: &ParamStore<f32>) -> Vec<Record> {
    store
        .entries()
        .iter()
        .map(|e| Record {
            name: e.name.clone(),
            shape: e.value.shape().to_vec(),
            data: e.value.data().to_vec(),
        })
        .collect()
}

fn model_config_from(ckpt: &Checkpoint) -> Result<ModelConfig> {
    let mut config = ModelConfig::default();
    for (k, v) in &ckpt.config {
        config
            .set(k, v)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
    }
    config
        .validate()
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok(config)
}

fn fill(store: &mut ParamStore<f32>, name: &str, record: &Record) -> Result<()> {
    let id = store
        .id(name)
        .ok_or_else(|| Error::Checkpoint(format!("unexpected record `{}`", record.name)))?;
    let target = store.get_mut(id);
    if target.shape() != record.shape.as_slice() {
        return Err(Error::Checkpoint(format!(
            "record `{}` has shape {:?}, model expects {:?}",
            record.name,
            record.shape,
            target.shape()
        )));
    }
    target.data_mut().copy_from_slice(&record.data);
    Ok(())
}

/// Model and parameters stored in a checkpoint; optimizer records are ignored.
pub fn load_model(path: &Path) -> Result<(Model, ParamStore<f32>)> {
    let state = TrainState::from_checkpoint(&Checkpoint::load(path)?)?;
    Ok((state.model, state.store))
}

impl TrainState {
    pub fn new(config: &ModelConfig, root_seed: u64) -> Result<Self> {
        let (model, store) = Model::init(config, root_seed)?;
        let adam = Adam::new(&store, AdamConfig::default());
        Ok(TrainState {
            model,
            store,
            adam,
            iteration: 0,
        })
    }

    /// Checkpoint with the model configuration, counters and `extra` settings
    /// in the config block.
    pub fn to_checkpoint(&self, extra: &[(String, String)]) -> Checkpoint {
        let mut config: Vec<(String, String)> = self
            .model
            .config
            .to_pairs()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        config.push(("iteration".into(), self.iteration.to_string()));
        config.push(("adam_step".into(), self.adam.step.to_string()));
        let model_keys: HashSet<String> = config.iter().map(|(k, _)| k.clone()).collect();
        config.extend(
            extra
                .iter()
                .filter(|(k, _)| !model_keys.contains(k))
                .cloned(),
        );
        let mut records = model_records(&self.store);
        for (id, m, v) in &self.adam.moments {
            let name = &self.store.entry(*id).name;
            for (prefix, t) in [(ADAM_M, m), (ADAM_V, v)] {
                records.push(Record {
                    name: format!("{prefix}{name}"),
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                });
            }
        }
        Checkpoint { config, records }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let model_config = model_config_from(ckpt)?;
        let (model, mut store) = Model::skeleton(&model_config)?;
        let mut adam = Adam::new(&store, AdamConfig::default());
        let counter = |key: &str| -> Result<u64> {
            ckpt.config_value(key)
                .ok_or_else(|| Error::Checkpoint(format!("missing `{key}`")))?
                .parse()
                .map_err(|_| Error::Checkpoint(format!("bad `{key}`")))
        };
        let iteration = counter("iteration")?;
        adam.step = counter("adam_step")?;
        let mut seen = HashSet::new();
        for record in &ckpt.records {
            if !seen.insert(record.name.as_str()) {
                return Err(Error::Checkpoint(format!(
                    "duplicate record `{}`",
                    record.name
                )));
            }
            let moment = [(ADAM_M, 1), (ADAM_V, 2)]
                .into_iter()
                .find_map(|(p, slot)| record.name.strip_prefix(p).map(|n| (n, slot)));
            match moment {
                None => fill(&mut store, &record.name, record)?,
                Some((name, slot)) => {
                    let entry = adam
                        .moments
                        .iter_mut()
                        .find(|(id, _, _)| store.entry(*id).name == name)
                        .ok_or_else(|| {
                            Error::Checkpoint(format!("unexpected record `{}`", record.name))
                        })?;
                    let t = if slot == 1 {
                        &mut entry.1
                    } else {
                        &mut entry.2
                    };
                    if t.shape() != record.shape.as_slice() {
                        return Err(Error::Checkpoint(format!(
                            "record `{}` has the wrong shape",
                            record.name
                        )));
                    }
                    t.data_mut().copy_from_slice(&record.data);
                }
            }
        }
        let expected = store.len() + 2 * adam.moments.len();
        if seen.len() != expected {
            let missing = store
                .entries()
                .iter()
                .map(|e| e.name.clone())
                .find(|n| !seen.contains(n.as_str()))
                .unwrap_or_else(|| "optimizer state".into());
            return Err(Error::Checkpoint(format!("missing record `{missing}`")));
        }
        Ok(TrainState {
            model,
            store,
            adam,
            iteration,
        })
    }
}

/// Loss terms of one iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLosses {
    pub detail: f64,
    pub structure: f64,
    pub reconstruction: f64,
    pub total: f64,
}

/// One row of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub iteration: u64,
    pub losses: StepLosses,
    pub val_psnr: Option<f64>,
}

/// Drives optimization over a dataset.
pub struct Trainer {
    pub config: RunConfig,
    pub state: TrainState,
    pub data: Dataset<f32>,
    pub val: Option<Dataset<f32>>,
    /// Every logged row since this trainer was created.
    pub log: Vec<LogRow>,
    /// Losses of every step since this trainer was created.
    pub history: Vec<StepLosses>,
}

fn load_dataset(path: &Path) -> Result<Dataset<f32>> {
    let manifest = DatasetManifest::load(path)?;
    if manifest.is_empty() {
        return Err(Error::Config(format!(
            "{}: manifest has no entries",
            path.display()
        )));
    }
    Dataset::load(&manifest)
}

/// Rows of an existing training log up to `upto`; none if there is no log.
fn read_log(
    path: &Path,
    upto: u64,
) -> std::result::Result<Vec<LogRow>, Box<dyn std::error::Error>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut rows = Vec::new();
    for record in csv::Reader::from_path(path)?.records() {
        let record = record?;
        let field = |i: usize| record.get(i).ok_or("short row");
        let num = |i: usize| -> std::result::Result<f64, Box<dyn std::error::Error>> {
            Ok(field(i)?.parse()?)
        };
        let iteration: u64 = field(0)?.parse()?;
        if iteration > upto {
            break;
        }
        let val = field(5)?;
        rows.push(LogRow {
            iteration,
            losses: StepLosses {
                detail: num(1)?,
                structure: num(2)?,
                reconstruction: num(3)?,
                total: num(4)?,
            },
            val_psnr: if val.is_empty() {
                None
            } else {
                Some(val.parse()?)
            },
        });
    }
    Ok(rows)
}

impl Trainer {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let state = TrainState::new(&config.model, config.train.seed)?;
        Self::with_state(config, state)
    }

    /// Continues from a checkpoint whose model configuration must equal the
    /// run's.
    pub fn resume(config: RunConfig, ckpt: &Checkpoint) -> Result<Self> {
        config.validate()?;
        let state = TrainState::from_checkpoint(ckpt)?;
        if let Some((field, ours, theirs)) = config.model.first_difference(&state.model.config) {
            return Err(Error::Config(format!(
                "checkpoint model config differs in `{field}`: config has {ours}, checkpoint has {theirs}"
            )));
        }
        let iteration = state.iteration;
        let mut trainer = Self::with_state(config, state)?;
        let log_path = trainer.config.output_dir.join(LOG_FILE);
        match read_log(&log_path, iteration) {
            Ok(rows) => trainer.log = rows,
            Err(e) => warn!("{}: earlier log not kept: {e}", log_path.display()),
        }
        Ok(trainer)
    }

    pub fn with_state(config: RunConfig, state: TrainState) -> Result<Self> {
        let data = load_dataset(&config.train_manifest)?;
        let val = config
            .val_manifest
            .as_deref()
            .map(load_dataset)
            .transpose()?;
        Ok(Trainer {
            config,
            state,
            data,
            val,
            log: Vec::new(),
            history: Vec::new(),
        })
    }

    /// Loss weights actually used: the single-branch baseline has no
    /// detail/structure outputs to supervise, so only reconstruction counts.
    pub fn effective_weights(&self) -> LossWeights {
        let w = self.config.train.weights;
        if self.config.model.ablation == Ablation::Bl {
            LossWeights {
                detail: 0.0,
                structure: 0.0,
                ..w
            }
        } else {
            w
        }
    }

    /// The batch for zero-based `iteration`; a pure function of the seed.
    pub fn batch(&self, iteration: u64) -> Result<Batch<f32>> {
        let t = &self.config.train;
        let mut rng = seed::rng(t.seed, "batch", iteration);
        let samples = self
            .data
            .sample_patches(t.batch_size, t.patch_size, &mut rng)?;
        Batch::from_samples(&samples)
    }

    /// One optimizer step on the next batch.
    pub fn step(&mut self) -> Result<StepLosses> {
        let iteration = self.state.iteration;
        let batch = self.batch(iteration)?;
        let weights = self.effective_weights();
        let lr = self.config.train.lr_at(iteration);
        let mut g = Graph::new();
        let mut s = Session::bind(&mut g, &self.state.store, Mode::Train, true);
        let x = s.graph.constant(batch.rainy);
        let out = self
            .state
            .model
            .forward(&mut s, x, ForwardOptions::default())?;
        let target = Triple {
            detail: s.graph.constant(batch.detail),
            structure: s.graph.constant(batch.structure),
            image: s.graph.constant(batch.clean),
        };
        let predicted = Triple {
            detail: out.detail,
            structure: out.structure,
            image: out.prediction,
        };
        let terms = composite_loss(s.graph, predicted, target, &weights, &SsimParams::default())?;
        let scalar = |v| s.graph.value(v).data()[0] as f64;
        let losses = StepLosses {
            detail: scalar(terms.detail),
            structure: scalar(terms.structure),
            reconstruction: scalar(terms.reconstruction),
            total: scalar(terms.total),
        };
        if !losses.total.is_finite() {
            return Err(Error::NonFinite(format!("loss at iteration {iteration}")));
        }
        s.graph.backward(terms.total)?;
        let grads = s.weight_grads();
        let bn = s.take_bn_updates();
        drop(s);
        self.state.adam.update(&mut self.state.store, &grads, lr)?;
        self.state.store.apply_bn_updates(&bn, BN_MOMENTUM as f32);
        self.state.iteration += 1;
        self.history.push(losses);
        Ok(losses)
    }

    /// Mean PSNR of the clamped predictions on the validation set.
    pub fn validate(&self) -> Result<Option<f64>> {
        let Some(val) = &self.val else {
            return Ok(None);
        };
        let mut total = 0.0;
        for pair in &val.pairs {
            let out = derain(&self.state.model, &self.state.store, &pair.sample.rainy)?;
            total += psnr(&out, &pair.sample.clean, 1.0)?;
        }
        Ok(Some(total / val.len() as f64))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        self.state.to_checkpoint(&self.config.to_pairs())
    }

    pub fn log_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| Error::Config(format!("cannot format log: {e}"));
        w.write_record(["iter", "L_d", "L_s", "L_r", "L_c", "val_psnr"])
            .map_err(err)?;
        for row in &self.log {
            let l = row.losses;
            w.write_record([
                row.iteration.to_string(),
                l.detail.to_string(),
                l.structure.to_string(),
                l.reconstruction.to_string(),
                l.total.to_string(),
                row.val_psnr.map(|v| v.to_string()).unwrap_or_default(),
            ])
            .map_err(err)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Config(format!("cannot format log: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    /// Writes the checkpoint and the log into the output directory.
    pub fn save(&self) -> Result<()> {
        let dir = &self.config.output_dir;
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.checkpoint().save(&dir.join(CHECKPOINT_FILE))?;
        write_atomic(&dir.join(LOG_FILE), self.log_csv()?.as_bytes())
    }

    /// Trains until the configured iteration count, logging, validating and
    /// checkpointing on schedule. A failure leaves the last checkpoint as it
    /// was.
    pub fn run(&mut self) -> Result<()> {
        let t = self.config.train.clone();
        if self.config.model.ablation == Ablation::Bl
            && self.config.train.weights != self.effective_weights()
        {
            warn!("BL has no detail/structure outputs; training on the reconstruction term only");
        }
        while self.state.iteration < t.iterations {
            let losses = self.step()?;
            let it = self.state.iteration;
            let last = it == t.iterations;
            let val_psnr = if last || (t.val_every > 0 && it % t.val_every == 0) {
                self.validate()?
            } else {
                None
            };
            if last || it % t.log_every == 0 || val_psnr.is_some() {
                self.log.push(LogRow {
                    iteration: it,
                    losses,
                    val_psnr,
                });
                info!(
                    "iter {it}: L_d {:.5} L_s {:.5} L_r {:.5} L_c {:.5}{}",
                    losses.detail,
                    losses.structure,
                    losses.reconstruction,
                    losses.total,
                    val_psnr
                        .map(|p| format!(" val_psnr {p:.3}"))
                        .unwrap_or_default()
                );
            }
            if last || (t.checkpoint_every > 0 && it % t.checkpoint_every == 0) {
                self.save()?;
            }
        }
        Ok(())
    }
}
