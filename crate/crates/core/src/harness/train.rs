use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::config::TrainConfig;
use super::data::ImageSet;
use super::model::ReidModel;
use super::optim::{cosine_lr, Sgd};
use crate::autograd::Tape;
use crate::backbone::{extract_patches, ClassToken};
use crate::datapipe::{augment_pair, augment_view, derived_rng, normalize, AugmentConfig, PkSampler};
use crate::error::{Error, Result};
use crate::evaluator::{evaluate, EvalReport, FeatureGallery};
use crate::objectives::{total_loss, HighFrequencyFeatures, LossBreakdown};
use crate::selection::{dual_forward, DynamicMemory};

const INIT_STREAM: u64 = 1;
const SAMPLER_STREAM: u64 = 2;
const AUGMENT_SALT: u64 = 0x5851_F42D_4C95_7F2D;

/// One optimisation step, as written to the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub id_o: f64,
    pub tri_o: f64,
    pub id_h: f64,
    pub tri_h: f64,
    #[serde(rename = "L_F")]
    pub l_f: f64,
    pub total: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub steps: usize,
    /// Loss terms averaged over the epoch's steps.
    pub mean: LossBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSnapshot {
    /// Epochs completed.
    pub epoch: usize,
    pub test: Option<EvalReport>,
    pub train_rank1: Option<f64>,
}

/// Everything a run produces that is fixed by config and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: TrainConfig,
    pub identities: Vec<String>,
    pub epochs: Vec<EpochRecord>,
    /// Learning rate used in each epoch.
    pub lr_trace: Vec<f64>,
    pub snapshots: Vec<EvalSnapshot>,
    pub final_report: Option<EvalReport>,
    /// Epoch after which training stopped on the Rank-1 criterion.
    pub stopped_early: Option<usize>,
}

/// Wall-clock figures, kept apart from the reproducible record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunTiming {
    pub wall_seconds: f64,
    pub seconds_per_epoch: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ReidModel,
    pub record: RunRecord,
    pub steps: Vec<StepLog>,
    pub timing: RunTiming,
}

impl TrainOutcome {
    pub fn checkpoint(&self) -> Checkpoint {
        let epoch = self.record.epochs.len();
        Checkpoint::from_model(&self.model, &self.record.config, &self.record.identities, epoch)
    }
}

/// Normalised inputs of one batch in both streams. `hf` is empty for the baseline.
struct BatchViews {
    orig: Vec<Vec<f64>>,
    hf: Vec<Vec<f64>>,
}

fn prepare_views(
    set: &ImageSet,
    items: &[usize],
    aug: &AugmentConfig,
    two_stream: bool,
    seed: u64,
    epoch: usize,
    first_slot: usize,
    workers: usize,
) -> Result<BatchViews> {
    let view = |j: usize| -> Result<(Vec<f64>, Vec<f64>)> {
        let mut rng = derived_rng(seed ^ AUGMENT_SALT, epoch as u64, (first_slot + j) as u64);
        let img = &set.images[items[j]];
        if two_stream {
            let pair = augment_pair(img, aug, &mut rng)?;
            Ok((pair.original_input(), pair.high_frequency_input()))
        } else {
            Ok((normalize(&augment_view(img, aug, &mut rng).0), Vec::new()))
        }
    };
    let results: Vec<Result<(Vec<f64>, Vec<f64>)>> = if workers <= 1 {
        (0..items.len()).map(view).collect()
    } else {
        let chunk = items.len().div_ceil(workers);
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..items.len())
                .step_by(chunk)
                .map(|start| {
                    let view = &view;
                    s.spawn(move || {
                        crate::probe::reset();
                        let out: Vec<_> = (start..(start + chunk).min(items.len())).map(view).collect();
                        (out, crate::probe::snapshot())
                    })
                })
                .collect();
            let mut all = Vec::with_capacity(items.len());
            for h in handles {
                let (out, counts) = h.join().expect("augmentation worker panicked");
                crate::probe::absorb(counts);
                all.extend(out);
            }
            all
        })
    };
    let mut views = BatchViews {
        orig: Vec::with_capacity(items.len()),
        hf: Vec::with_capacity(items.len()),
    };
    for r in results {
        let (o, h) = r?;
        views.orig.push(o);
        if two_stream {
            views.hf.push(h);
        }
    }
    Ok(views)
}

fn numeric_context(e: Error, step: usize, last: &Option<LossBreakdown>) -> Error {
    match e {
        Error::Numeric(m) => Error::Numeric(format!("step {step}: {m}; last finite breakdown {last:?}")),
        other => other,
    }
}

/// Features of every image in `set` (evaluation transform), with labels.
pub fn gallery(model: &ReidModel, set: &ImageSet) -> Result<FeatureGallery> {
    let (h, w) = (model.config.image_height, model.config.image_width);
    let features = model.embed(&set.eval_inputs(h, w))?;
    let (labels, _) = set.labels();
    FeatureGallery::new(features, labels, set.sources.clone())
}

pub fn evaluate_model(model: &ReidModel, set: &ImageSet, config: &TrainConfig) -> Result<EvalReport> {
    evaluate(&gallery(model, set)?, config.metric)
}

/// Trains from scratch. When `out` is given the resolved config, a per-step
/// log (`train_log.jsonl`), checkpoints and `run.json` are written there.
pub fn train(
    config: &TrainConfig,
    train_set: &ImageSet,
    test_set: Option<&ImageSet>,
    out: Option<&Path>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let started = Instant::now();
    let sampler = PkSampler::new(config.batch(), &train_set.items())?;
    let identities = sampler.identities().to_vec();
    let mut init_rng = derived_rng(config.seed, INIT_STREAM, 0);
    let mut model = ReidModel::init(config.model(), sampler.num_classes(), config.neck, &mut init_rng)?;
    let mut opt = Sgd::new(config.momentum, config.weight_decay, model.store.len())
        .with_clip((config.grad_clip > 0.0).then_some(config.grad_clip));
    let objective = config.objective();
    let aug = config.augment();
    let two_stream = config.stage.uses_high_frequency();

    let mut log = match out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            config.save(&dir.join("config.toml"))?;
            let p = dir.join("train_log.jsonl");
            Some(BufWriter::new(File::create(&p).map_err(|e| Error::io(&p, e))?))
        }
        None => None,
    };

    let mut record = RunRecord {
        config: config.clone(),
        identities: identities.clone(),
        epochs: Vec::new(),
        lr_trace: Vec::new(),
        snapshots: Vec::new(),
        final_report: None,
        stopped_early: None,
    };
    let mut steps = Vec::new();
    let mut last: Option<LossBreakdown> = None;
    let per_epoch = sampler.batches_per_epoch();
    let bsize = config.batch().batch_size();

    for epoch in 0..config.epochs {
        let lr = cosine_lr(config.lr, epoch, config.epochs, config.warmup_epochs);
        let mut batch_rng = derived_rng(config.seed, SAMPLER_STREAM, epoch as u64);
        let mut sum = LossBreakdown::default();
        for b in 0..per_epoch {
            let step = steps.len();
            let batch = sampler.sample_batch(&mut batch_rng);
            let items: Vec<usize> = batch.iter().map(|x| x.0).collect();
            let labels: Vec<usize> = batch.iter().map(|x| x.1).collect();
            let views = prepare_views(
                train_set,
                &items,
                &aug,
                two_stream,
                config.seed,
                epoch,
                b * bsize,
                config.workers,
            )?;

            let mut tape = Tape::new();
            let orig = extract_patches(&model.config, &views.orig)?;
            let forward = |tape: &mut Tape| -> Result<_> {
                if two_stream {
                    let hf = extract_patches(&model.config, &views.hf)?;
                    let mut memory = DynamicMemory::new();
                    let d = dual_forward(
                        tape,
                        &model.store,
                        &model.vit,
                        &model.vit,
                        &orig,
                        &hf,
                        config.selection(),
                        &mut memory,
                    )?;
                    let extra = HighFrequencyFeatures {
                        c_h: d.c_h,
                        f_o: d.f_o,
                        f_h: d.f_h,
                    };
                    total_loss(
                        tape,
                        &model.store,
                        &objective,
                        &model.classifier,
                        d.c_o,
                        Some(extra),
                        &labels,
                    )
                } else {
                    let tokens = model.vit.patchify(tape, &model.store, &orig, ClassToken::Original)?;
                    let enc = model.vit.encode(tape, &model.store, &tokens)?;
                    total_loss(
                        tape,
                        &model.store,
                        &objective,
                        &model.classifier,
                        enc.class_feature,
                        None,
                        &labels,
                    )
                }
            };
            let (root, br) = forward(&mut tape).map_err(|e| numeric_context(e, step, &last))?;
            let grads = tape.backward(root);
            opt.step(&mut model.store, &grads, lr);

            let entry = StepLog {
                step,
                epoch,
                id_o: br.id_o,
                tri_o: br.tri_o,
                id_h: br.id_h,
                tri_h: br.tri_h,
                l_f: br.equilibrium,
                total: br.total,
                lr,
            };
            if let Some(w) = log.as_mut() {
                serde_json::to_writer(&mut *w, &entry).map_err(|e| Error::Config(e.to_string()))?;
                w.write_all(b"\n").map_err(|e| Error::io(out.unwrap(), e))?;
            }
            steps.push(entry);
            for (acc, v) in [
                (&mut sum.id_o, br.id_o),
                (&mut sum.tri_o, br.tri_o),
                (&mut sum.id_h, br.id_h),
                (&mut sum.tri_h, br.tri_h),
                (&mut sum.equilibrium, br.equilibrium),
                (&mut sum.total, br.total),
            ] {
                *acc += v / per_epoch as f64;
            }
            last = Some(br);
        }
        sum.lambda = objective.lambda;
        record.lr_trace.push(lr);
        record.epochs.push(EpochRecord {
            epoch,
            lr,
            steps: per_epoch,
            mean: sum,
        });

        let done = epoch + 1;
        let is_last = done == config.epochs;
        if config.eval_every > 0 && (done % config.eval_every == 0 || is_last) {
            let test = test_set.map(|t| evaluate_model(&model, t, config)).transpose()?;
            let train_rank1 = if config.stop_at_train_rank1 {
                Some(evaluate_model(&model, train_set, config)?.rank1)
            } else {
                None
            };
            let stop = train_rank1 == Some(1.0);
            record.snapshots.push(EvalSnapshot {
                epoch: done,
                test,
                train_rank1,
            });
            if stop && !is_last {
                record.stopped_early = Some(done);
            }
        }
        if let Some(dir) = out {
            if config.checkpoint_every > 0 && done % config.checkpoint_every == 0 && !is_last {
                Checkpoint::from_model(&model, config, &identities, done)
                    .save(&dir.join(format!("checkpoint_{done:04}.bin")))?;
            }
        }
        if record.stopped_early.is_some() {
            break;
        }
    }

    record.final_report = match test_set {
        Some(t) => match record.snapshots.last() {
            Some(s) if s.epoch == record.epochs.len() && s.test.is_some() => s.test.clone(),
            _ => Some(evaluate_model(&model, t, config)?),
        },
        None => None,
    };
    let wall = started.elapsed().as_secs_f64();
    let timing = RunTiming {
        wall_seconds: wall,
        seconds_per_epoch: wall / record.epochs.len().max(1) as f64,
    };
    let outcome = TrainOutcome {
        model,
        record,
        steps,
        timing,
    };
    if let Some(dir) = out {
        if let Some(mut w) = log {
            w.flush().map_err(|e| Error::io(dir, e))?;
        }
        outcome.checkpoint().save(&dir.join("checkpoint.bin"))?;
        super::write_json(
            &dir.join("run.json"),
            &serde_json::json!({
                "record": &outcome.record,
                "timing": &outcome.timing,
            }),
        )?;
        if let Some(r) = &outcome.record.final_report {
            super::write_json(&dir.join("report.json"), r)?;
        }
    }
    Ok(outcome)
}
