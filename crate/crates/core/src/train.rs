//! Training loop, optimizer, learning-rate schedule and ablation runs.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::{EntityCatalog, SourceKind};
use crate::checkpoint;
use crate::corpus::TaggedSentence;
use crate::encoder::{EncoderConfig, Vocabulary};
use crate::error::{Error, Result};
use crate::graph::{Mat, ParamStore};
use crate::hrca::HrcaConfig;
use crate::metrics::{micro_f1, F1Report};
use crate::model::{prepare_examples, Example, ModelConfig, NerMrcModel, Variant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub warmup_fraction: f64,
    pub seed: u64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Stop after this many epochs without a dev F1 improvement.
    pub early_stopping_patience: Option<usize>,
    pub ablation: Variant,
    pub hrca: HrcaConfig,
    pub encoder: EncoderConfig,
    pub truncate: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 8e-6,
            epochs: 10,
            batch_size: 2,
            warmup_fraction: 0.1,
            seed: 42,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            early_stopping_patience: None,
            ablation: Variant::Full,
            hrca: HrcaConfig::default(),
            encoder: EncoderConfig::default(),
            truncate: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be ≥ 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be ≥ 1".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::Config(format!(
                "warmup_fraction must lie in [0, 1), got {}",
                self.warmup_fraction
            )));
        }
        self.encoder.validate()?;
        self.hrca.validate()
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            encoder: self.encoder.clone(),
            hrca: self.hrca.clone(),
            variant: self.ablation,
            truncate: self.truncate,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Linear warmup from 0 to the peak, then linear decay to 0 at `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarmupLinearSchedule {
    pub peak: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl WarmupLinearSchedule {
    pub fn new(peak: f64, warmup_fraction: f64, total_steps: usize) -> Self {
        Self {
            peak,
            warmup_steps: (warmup_fraction * total_steps as f64).floor() as usize,
            total_steps,
        }
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.peak * step as f64 / self.warmup_steps as f64;
        }
        let decay = self.total_steps.saturating_sub(self.warmup_steps);
        if decay == 0 {
            return 0.0;
        }
        let left = self.total_steps.saturating_sub(step);
        self.peak * left as f64 / decay as f64
    }
}

/// Adam with decoupled weight decay. Decay applies to `*.weight` tensors only.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    first: Vec<Mat>,
    second: Vec<Mat>,
}

impl AdamW {
    pub fn new(store: &ParamStore, beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        let zeros: Vec<Mat> = store.iter().map(|t| Mat::zeros(t.value.dim())).collect();
        Self {
            beta1,
            beta2,
            eps,
            weight_decay,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Mat>], lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let Some(g) = grads.get(id.0).and_then(Option::as_ref) else {
                continue;
            };
            let decays = store.name(id).ends_with(".weight");
            let (m, v) = (&mut self.first[id.0], &mut self.second[id.0]);
            let p = store.get_mut(id);
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let update = (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
                if decays {
                    *p -= lr * self.weight_decay * *p;
                }
                *p -= lr * update;
            });
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_f1: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub variant: Variant,
    pub config: TrainConfig,
    pub catalog: String,
    pub source_kind: SourceKind,
    pub vocab_size: usize,
    pub n_parameters: usize,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_dev_f1: f64,
    pub final_test_f1: Option<f64>,
    /// Learning rate used at every optimizer step.
    pub schedule: Vec<f64>,
    /// Seconds per epoch; kept out of the serialized record so identical
    /// runs serialize identically.
    #[serde(skip)]
    pub wall_time_s: Vec<f64>,
}

impl RunRecord {
    pub fn final_dev_f1(&self) -> f64 {
        self.epochs.last().map_or(0.0, |e| e.dev_f1)
    }
}

pub struct TrainOutcome {
    /// Parameters from the epoch with the best dev F1.
    pub best: NerMrcModel,
    /// Parameters after the last epoch.
    pub last: NerMrcModel,
    pub record: RunRecord,
}

pub struct TrainData<'a> {
    pub train: &'a [TaggedSentence],
    pub dev: &'a [TaggedSentence],
    pub test: Option<&'a [TaggedSentence]>,
}

/// Vocabulary over training passages plus the question and option texts.
pub fn build_vocab(train: &[TaggedSentence], catalog: &EntityCatalog) -> Vocabulary {
    let question = crate::reconstruct::question_tokens();
    let options = crate::reconstruct::option_tokens(catalog);
    Vocabulary::build(
        train
            .iter()
            .flat_map(|s| s.tokens.iter().map(|t| t.surface.as_str()))
            .chain(question.iter().map(String::as_str))
            .chain(options.iter().flatten().map(String::as_str)),
    )
}

pub fn evaluate(model: &NerMrcModel, sentences: &[TaggedSentence]) -> Result<F1Report> {
    let predicted = predict_corpus(model, sentences)?;
    let gold: Vec<_> = sentences.iter().map(TaggedSentence::tags).collect();
    micro_f1(&gold, &predicted, true)
}

pub fn predict_corpus(model: &NerMrcModel, sentences: &[TaggedSentence]) -> Result<Vec<Vec<crate::corpus::Tag>>> {
    sentences
        .par_iter()
        .map(|s| model.predict_tags(&s.surfaces()))
        .collect()
}

/// Mean loss and summed gradients over a batch, reduced in batch order.
pub fn batch_gradients(model: &NerMrcModel, batch: &[&Example]) -> Result<(f64, Vec<Option<Mat>>)> {
    let per_example: Vec<(f64, Vec<Option<Mat>>)> = batch
        .par_iter()
        .map(|ex| model.loss_and_grads(ex))
        .collect::<Result<_>>()?;
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    let mut acc: Vec<Option<Mat>> = vec![None; model.store.len()];
    for (loss, grads) in per_example {
        total += loss;
        for (slot, g) in acc.iter_mut().zip(grads) {
            if let Some(g) = g {
                match slot {
                    Some(a) => *a += &g,
                    None => *slot = Some(g),
                }
            }
        }
    }
    for g in acc.iter_mut().flatten() {
        *g *= scale;
    }
    Ok((total * scale, acc))
}

fn dump_diagnostics(dir: &Path, model: &NerMrcModel, epoch: usize, step: usize, loss: f64) {
    let norms: Vec<_> = model
        .store
        .iter()
        .map(|t| serde_json::json!({"name": t.name, "l2": t.value.iter().map(|v| v * v).sum::<f64>().sqrt()}))
        .collect();
    let doc = serde_json::json!({"epoch": epoch, "step": step, "loss": loss, "parameters": norms});
    let path = dir.join("diagnostics.json");
    if let Err(e) = fs::write(&path, serde_json::to_vec_pretty(&doc).unwrap_or_default()) {
        log::error!("could not write {}: {e}", path.display());
    }
}

/// Trains one model. With `out_dir`, writes `last.ckpt` every epoch,
/// `best.ckpt` whenever dev F1 improves, and `run.jsonl` / `run.json` /
/// `timing.jsonl` records.
pub fn train(
    config: &TrainConfig,
    data: TrainData<'_>,
    catalog: &EntityCatalog,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if data.train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let variant = config.ablation;
    let examples = prepare_examples(data.train, catalog, variant)?;
    let vocab = build_vocab(data.train, catalog);
    let mut model = NerMrcModel::new(config.model_config(), vocab, catalog.clone(), config.seed)?;
    let mut opt = AdamW::new(
        &model.store,
        config.beta1,
        config.beta2,
        config.adam_eps,
        config.weight_decay,
    );
    let steps_per_epoch = examples.len().div_ceil(config.batch_size);
    let schedule = WarmupLinearSchedule::new(
        config.learning_rate,
        config.warmup_fraction,
        steps_per_epoch * config.epochs,
    );
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_5eed);
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let mut record = RunRecord {
        variant,
        config: config.clone(),
        catalog: catalog.dataset().to_string(),
        source_kind: catalog.source_kind(),
        vocab_size: model.vocab.len(),
        n_parameters: model.store.num_scalars(),
        epochs: Vec::new(),
        best_epoch: 0,
        best_dev_f1: f64::NEG_INFINITY,
        final_test_f1: None,
        schedule: Vec::with_capacity(schedule.total_steps),
        wall_time_s: Vec::new(),
    };
    let mut best = model.clone();
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut step = 0;
    let mut stale = 0;

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut lr = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &examples[i]).collect();
            let (loss, grads) = batch_gradients(&model, &batch)?;
            if !loss.is_finite() {
                if let Some(dir) = out_dir {
                    dump_diagnostics(dir, &model, epoch, step, loss);
                }
                return Err(Error::NonFiniteLoss { loss, epoch, step });
            }
            loss_sum += loss * batch.len() as f64;
            lr = schedule.lr_at(step);
            record.schedule.push(lr);
            opt.step(&mut model.store, &grads, lr);
            step += 1;
        }
        let train_loss = loss_sum / examples.len() as f64;
        let dev_f1 = if data.dev.is_empty() {
            0.0
        } else {
            evaluate(&model, data.dev)?.f1
        };
        let elapsed = started.elapsed().as_secs_f64();
        log::info!(
            "{} epoch {epoch}/{}: loss {train_loss:.5} dev F1 {dev_f1:.4} ({elapsed:.1}s)",
            variant.name(),
            config.epochs
        );
        let entry = EpochRecord {
            epoch,
            train_loss,
            dev_f1,
            learning_rate: lr,
        };
        record.wall_time_s.push(elapsed);
        let improved = dev_f1 > record.best_dev_f1;
        if improved {
            record.best_dev_f1 = dev_f1;
            record.best_epoch = epoch;
            best = model.clone();
            stale = 0;
        } else {
            stale += 1;
        }
        if let Some(dir) = out_dir {
            checkpoint::save(&model, &dir.join("last.ckpt"))?;
            if improved {
                checkpoint::save(&model, &dir.join("best.ckpt"))?;
            }
            append_line(&dir.join("run.jsonl"), &serde_json::to_string(&entry)?, epoch == 1)?;
            let timing = serde_json::json!({"epoch": epoch, "wall_time_s": elapsed});
            append_line(&dir.join("timing.jsonl"), &timing.to_string(), epoch == 1)?;
        }
        record.epochs.push(entry);
        if config.early_stopping_patience.is_some_and(|p| stale >= p) {
            log::info!("early stop after epoch {epoch}");
            break;
        }
    }

    if let Some(test) = data.test.filter(|t| !t.is_empty()) {
        record.final_test_f1 = Some(evaluate(&best, test)?.f1);
    }
    if let Some(dir) = out_dir {
        let path = dir.join("run.json");
        fs::write(&path, serde_json::to_vec_pretty(&record)?).map_err(|e| Error::io(&path, e))?;
    }
    Ok(TrainOutcome {
        best,
        last: model,
        record,
    })
}

fn append_line(path: &Path, line: &str, truncate: bool) -> Result<()> {
    let mut f = fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(!truncate)
        .truncate(truncate)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub catalog: String,
    pub source_kind: SourceKind,
    pub variant: Variant,
    pub seed: u64,
    pub record: RunRecord,
}

pub struct AblationSpec<'a> {
    pub base: TrainConfig,
    pub variants: Vec<Variant>,
    pub catalogs: Vec<&'a EntityCatalog>,
    pub seeds: Vec<u64>,
    /// Per-run output directories are created below this one when set.
    pub out_dir: Option<PathBuf>,
}

/// One training run per (catalog, variant, seed), executed in parallel.
/// Rows come back in that nesting order.
pub fn run_ablation(spec: &AblationSpec<'_>, data: &TrainData<'_>) -> Result<Vec<AblationRow>> {
    let mut jobs = Vec::new();
    for (ci, catalog) in spec.catalogs.iter().enumerate() {
        for &variant in &spec.variants {
            for &seed in &spec.seeds {
                jobs.push((ci, *catalog, variant, seed));
            }
        }
    }
    jobs.par_iter()
        .map(|&(ci, catalog, variant, seed)| {
            let mut config = spec.base.clone();
            config.ablation = variant;
            config.seed = seed;
            let dir = spec
                .out_dir
                .as_ref()
                .map(|d| d.join(format!("c{ci}-{}-{}-s{seed}", catalog.dataset(), variant.name())));
            let data = TrainData {
                train: data.train,
                dev: data.dev,
                test: data.test,
            };
            let outcome = train(&config, data, catalog, dir.as_deref())?;
            Ok(AblationRow {
                catalog: catalog.dataset().to_string(),
                source_kind: catalog.source_kind(),
                variant,
                seed,
                record: outcome.record,
            })
        })
        .collect()
}

/// Plain-text comparison table.
pub fn format_ablation(rows: &[AblationRow]) -> String {
    let mut out = format!(
        "{:<16} {:<22} {:<20} {:>6} {:>10} {:>10} {:>10}\n",
        "catalog", "source", "variant", "seed", "dev_f1", "best_dev", "test_f1"
    );
    for r in rows {
        let source = serde_json::to_value(r.source_kind)
            .ok()
            .and_then(|v| v.as_str().map(String::from))
            .unwrap_or_default();
        let test = r
            .record
            .final_test_f1
            .map_or_else(|| "-".to_string(), |f| format!("{f:.4}"));
        out.push_str(&format!(
            "{:<16} {:<22} {:<20} {:>6} {:>10.4} {:>10.4} {:>10}\n",
            r.catalog,
            source,
            r.variant.name(),
            r.seed,
            r.record.final_dev_f1(),
            r.record.best_dev_f1,
            test
        ));
    }
    out
}
