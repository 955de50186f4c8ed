//! Training with on-the-fly augmentation, clip scoring and the equal error
//! rate.

mod data;
mod scores;

pub use data::{augmented_input, load_audio, load_stems, segment_input, segment_starts, ClipStems};
pub use scores::{compute_eer, operating_points, Eer, OperatingPoint, ScoreFile, ScoreRow};

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{AugmentPlan, RawBoostConfig};
use crate::autograd::{adam_step, AdamConfig, AdamState, Tape, Tensor};
use crate::dsp::{FeatureSequence, Waveform};
use crate::error::{Error, Result};
use crate::manifest::{
    build_tempo_index_with, ClipRecord, Label, Manifest, ReplacementPool, Split,
};
use crate::model::{BnBatchStats, InputSetup, Mode, ModelConfig, SingGraph};
use crate::{par, seed};

/// Optimization and data settings of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub input_setup: InputSetup,
    pub use_rawboost: bool,
    pub use_beat_matching: bool,
    /// Segment length in seconds, for training and scoring alike.
    pub clip_dur_s: f64,
    /// Tempo bucket width for beat matching.
    pub bucket_width_bpm: f64,
    pub replacement_pool: ReplacementPool,
    /// Split used to pick the best checkpoint.
    pub select_split: Split,
    /// Stop once the selection EER is at or below this value.
    pub target_eer: Option<f64>,
    /// Stop after this many epochs without a better selection EER; 0 never
    /// stops early.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 8,
            lr: 1e-3,
            seed: 0,
            input_setup: InputSetup::IV,
            use_rawboost: false,
            use_beat_matching: false,
            clip_dur_s: 4.0,
            bucket_width_bpm: 2.0,
            replacement_pool: ReplacementPool::All,
            select_split: Split::Val,
            target_eer: None,
            patience: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.clip_dur_s > 0.0 && self.clip_dur_s.is_finite()) {
            return bad(format!(
                "clip_dur_s must be positive, got {}",
                self.clip_dur_s
            ));
        }
        if !(self.bucket_width_bpm > 0.0 && self.bucket_width_bpm.is_finite()) {
            return bad(format!(
                "bucket_width_bpm must be positive, got {}",
                self.bucket_width_bpm
            ));
        }
        if let Some(t) = self.target_eer {
            if !(0.0..=1.0).contains(&t) {
                return bad(format!("target_eer {t} outside [0, 1]"));
            }
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Class-weighted mean cross-entropy over the epoch's segments.
    pub loss: f64,
    /// EER on the selection split; `null` when that split is empty.
    pub val_eer: Option<f64>,
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// The parameters of the best epoch, or the initialization when no
    /// epoch ran.
    pub model: SingGraph,
    /// 1-based; `None` when no epoch ran.
    pub best_epoch: Option<usize>,
    pub best_val_eer: Option<f64>,
    pub log: Vec<EpochLog>,
}

/// Per-class loss weights `N / (2 N_c)`, so both classes carry equal mass.
pub fn class_weights(labels: &[Label]) -> Result<[f64; 2]> {
    let mut counts = [0usize; 2];
    for l in labels {
        counts[l.class()] += 1;
    }
    if counts.contains(&0) {
        return Err(Error::Data(format!(
            "training needs both classes, got {} bona fide and {} spoof clips",
            counts[0], counts[1]
        )));
    }
    let n = labels.len() as f64;
    Ok([n / (2.0 * counts[0] as f64), n / (2.0 * counts[1] as f64)])
}

/// Loss, gradients and batch statistics of one training segment.
struct SampleGrad {
    loss: f64,
    grads: Vec<Tensor>,
    stats: BnBatchStats,
}

fn sample_gradient(
    model: &SingGraph,
    input: &FeatureSequence,
    class: usize,
    weight: f64,
) -> Result<SampleGrad> {
    let tape = Tape::new();
    let vars = model.bind(&tape, true);
    let (loss, stats) = model.loss_on(&vars, input, class, weight, Mode::Train)?;
    let value = loss.item();
    tape.backward(loss)?;
    let grads = vars
        .iter()
        .zip(model.params().tensors())
        .map(|(v, p)| v.grad().unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();
    Ok(SampleGrad {
        loss: value,
        grads,
        stats,
    })
}

/// Trains a fresh model on the manifest's train split.
///
/// Each epoch shuffles the clips with a seeded generator, cuts one random
/// `clip_dur_s` segment per clip, applies the enabled augmentations with
/// per-(epoch, clip) seeds and takes one Adam step per batch on the
/// class-weighted cross-entropy. Per-segment gradients run in parallel and
/// are summed in batch order, so results do not depend on the thread count.
/// After every epoch the selection split is scored; the best epoch by EER
/// (the earliest among equals) is returned and every epoch is passed to
/// `on_epoch`.
pub fn train(
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    rawboost: &RawBoostConfig,
    m: &Manifest,
    on_epoch: &mut dyn FnMut(&EpochLog) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model_cfg.validate()?;
    if cfg.use_rawboost {
        rawboost.validate()?;
    }
    let train_recs: Vec<&ClipRecord> = m.split(Split::Train).collect();
    let labels: Vec<Label> = train_recs.iter().map(|r| r.label).collect();
    let weights = class_weights(&labels)?;
    let augmenting = cfg.use_rawboost || cfg.use_beat_matching;
    if augmenting && !model_cfg.frontend.is_waveform() {
        return Err(Error::Config(
            "augmentation needs a waveform front-end, not embedding files".into(),
        ));
    }

    let mut model = SingGraph::new(model_cfg.clone())?;
    let mut log = Vec::new();
    if cfg.epochs == 0 {
        return Ok(TrainOutcome {
            model,
            best_epoch: None,
            best_val_eer: None,
            log,
        });
    }

    let stems = par::map(&train_recs, |r| {
        load_stems(m, r, model_cfg, cfg.input_setup)
    });
    let stems: Vec<ClipStems> = stems
        .into_iter()
        .zip(&train_recs)
        .map(|(s, r)| s.map_err(|e| Error::Data(format!("{}: {e}", r.clip_id))))
        .collect::<Result<_>>()?;
    let select_recs: Vec<&ClipRecord> = m.split(cfg.select_split).collect();
    let select_stems = if cfg.select_split == Split::Train {
        stems.clone()
    } else {
        par::map(&select_recs, |r| {
            load_stems(m, r, model_cfg, cfg.input_setup)
        })
        .into_iter()
        .zip(&select_recs)
        .map(|(s, r)| s.map_err(|e| Error::Data(format!("{}: {e}", r.clip_id))))
        .collect::<Result<_>>()?
    };

    let tempo_index = if cfg.use_beat_matching {
        Some(build_tempo_index_with(
            m,
            cfg.bucket_width_bpm,
            cfg.replacement_pool,
        )?)
    } else {
        None
    };
    let by_id: HashMap<&str, usize> = train_recs
        .iter()
        .enumerate()
        .map(|(i, r)| (r.clip_id.as_str(), i))
        .collect();
    let load_instrumental = |rec: &ClipRecord| -> Result<Waveform> {
        if let Some(ClipStems::Audio {
            instrumental: Some(w),
            ..
        }) = by_id.get(rec.clip_id.as_str()).map(|&i| &stems[i])
        {
            return Ok(w.clone());
        }
        load_audio(&m.resolve(&rec.instrumental_path))
    };

    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut state = AdamState::new(model.params().tensors());
    let mut best: Option<((f64, f64), usize, SingGraph)> = None;
    let mut since_best = 0;

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train_recs.len()).collect();
        order.shuffle(&mut seed::rng(seed::derive(
            cfg.seed,
            &[b"shuffle", &(epoch as u64).to_le_bytes()],
        )));
        let (mut loss_sum, mut weight_sum) = (0.0, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            let frozen = &model;
            let results = par::map(batch, |&i| -> Result<SampleGrad> {
                let rec = train_recs[i];
                let item = seed::item_seed(cfg.seed, epoch as u64, &rec.clip_id);
                let mut rng = seed::rng(seed::derive(item, &[b"segment"]));
                let spare = stems[i].duration_s() - cfg.clip_dur_s;
                let start = if spare > 0.0 {
                    rng.random_range(0.0..=spare)
                } else {
                    0.0
                };
                let input = if augmenting {
                    let plan = AugmentPlan {
                        rawboost: cfg.use_rawboost.then_some(rawboost),
                        beat_matching: tempo_index
                            .as_ref()
                            .filter(|idx| idx.bucket_for(rec).is_ok())
                            .map(|idx| (idx, m)),
                    };
                    augmented_input(
                        model_cfg,
                        cfg.input_setup,
                        rec,
                        &stems[i],
                        start,
                        cfg.clip_dur_s,
                        &plan,
                        &load_instrumental,
                        seed::derive(item, &[b"augment"]),
                    )?
                } else {
                    segment_input(model_cfg, cfg.input_setup, &stems[i], start, cfg.clip_dur_s)?
                };
                let class = rec.label.class();
                sample_gradient(frozen, &input, class, weights[class])
            });
            let results: Vec<SampleGrad> = results.into_iter().collect::<Result<_>>()?;

            let batch_weight: f64 = batch
                .iter()
                .map(|&i| weights[train_recs[i].label.class()])
                .sum();
            let mut grads: Vec<Tensor> = model
                .params()
                .tensors()
                .iter()
                .map(|p| Tensor::zeros(p.shape()))
                .collect();
            for r in &results {
                loss_sum += r.loss;
                for (acc, g) in grads.iter_mut().zip(&r.grads) {
                    acc.data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .for_each(|(a, b)| *a += b);
                }
            }
            weight_sum += batch_weight;
            for g in &mut grads {
                g.data_mut().iter_mut().for_each(|v| *v /= batch_weight);
            }
            adam_step(model.params_mut().tensors_mut(), &grads, &mut state, &adam)?;
            let stats: Vec<BnBatchStats> = results.into_iter().map(|r| r.stats).collect();
            model.update_running_stats(&stats)?;
        }

        let val_eer = if select_recs.is_empty() {
            None
        } else {
            let rows = score_loaded(
                &model,
                &select_recs,
                &select_stems,
                cfg.input_setup,
                cfg.clip_dur_s,
            )?;
            let labeled: Vec<(f64, Label)> = rows
                .iter()
                .map(|r| (r.score, r.label.expect("scored from manifest")))
                .collect();
            match compute_eer(&labeled) {
                Ok(e) => Some(e.eer),
                Err(Error::Metric(msg)) => {
                    log::warn!("selection split has no EER: {msg}");
                    None
                }
                Err(e) => return Err(e),
            }
        };
        let entry = EpochLog {
            epoch,
            loss: loss_sum / weight_sum,
            val_eer,
        };
        log::info!(
            "epoch {epoch}: loss {:.6} eer {:?}",
            entry.loss,
            entry.val_eer
        );
        on_epoch(&entry)?;
        log.push(entry);

        // without a selection EER, the lowest training loss picks the epoch
        let key = match val_eer {
            Some(e) => (e, 0.0),
            None => (f64::INFINITY, log.last().expect("just pushed").loss),
        };
        if best.as_ref().is_none_or(|(k, _, _)| key < *k) {
            best = Some((key, epoch, model.clone()));
            since_best = 0;
        } else {
            since_best += 1;
        }
        if matches!((cfg.target_eer, val_eer), (Some(t), Some(v)) if v <= t) {
            log::info!("selection EER reached the target after epoch {epoch}");
            break;
        }
        if cfg.patience > 0 && since_best >= cfg.patience {
            log::info!("no improvement for {} epochs, stopping", cfg.patience);
            break;
        }
    }

    let ((eer, _), best_epoch, model) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        model,
        best_epoch: Some(best_epoch),
        best_val_eer: eer.is_finite().then_some(eer),
        log,
    })
}

/// Mean eval-mode score over a clip's consecutive segments.
pub fn score_clip(
    model: &SingGraph,
    setup: InputSetup,
    stems: &ClipStems,
    clip_dur_s: f64,
) -> Result<f64> {
    let starts = segment_starts(stems.duration_s(), clip_dur_s);
    let mut total = 0.0;
    for &s in &starts {
        let input = segment_input(model.config(), setup, stems, s, clip_dur_s)?;
        total += model.predict(&input)?.score;
    }
    Ok(total / starts.len() as f64)
}

fn score_loaded(
    model: &SingGraph,
    recs: &[&ClipRecord],
    stems: &[ClipStems],
    setup: InputSetup,
    clip_dur_s: f64,
) -> Result<Vec<ScoreRow>> {
    let idx: Vec<usize> = (0..recs.len()).collect();
    par::map(&idx, |&i| {
        Ok(ScoreRow {
            clip_id: recs[i].clip_id.clone(),
            score: score_clip(model, setup, &stems[i], clip_dur_s)?,
            label: Some(recs[i].label),
        })
    })
    .into_iter()
    .collect()
}

/// A clip that could not be scored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClipError {
    pub clip_id: String,
    pub message: String,
}

/// Scores of one split plus the clips that failed.
#[derive(Debug, Clone)]
pub struct ScoreOutcome {
    pub scores: ScoreFile,
    pub errors: Vec<ClipError>,
}

/// Scores every clip of `split` in eval mode. A clip whose stems cannot be
/// loaded or featurized becomes an error entry; the others are still scored.
pub fn score(
    model: &SingGraph,
    m: &Manifest,
    split: Split,
    setup: InputSetup,
    clip_dur_s: f64,
) -> Result<ScoreOutcome> {
    if !(clip_dur_s > 0.0 && clip_dur_s.is_finite()) {
        return Err(Error::Config(format!(
            "clip_dur_s must be positive, got {clip_dur_s}"
        )));
    }
    let recs: Vec<&ClipRecord> = m.split(split).collect();
    if recs.is_empty() {
        return Err(Error::Data(format!("split {split} has no clips")));
    }
    let results = par::map(&recs, |r| -> Result<f64> {
        let stems = load_stems(m, r, model.config(), setup)?;
        score_clip(model, setup, &stems, clip_dur_s)
    });
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for (r, res) in recs.iter().zip(results) {
        match res {
            Ok(score) => rows.push(ScoreRow {
                clip_id: r.clip_id.clone(),
                score,
                label: Some(r.label),
            }),
            Err(e) => errors.push(ClipError {
                clip_id: r.clip_id.clone(),
                message: e.to_string(),
            }),
        }
    }
    Ok(ScoreOutcome {
        scores: ScoreFile::new(rows)?,
        errors,
    })
}
