//! Training loop, evaluation, checkpoints, embedding export and clustering.

pub mod checkpoint;
pub mod cluster;
mod export;
mod gradcheck;
pub mod metrics;

use std::collections::HashMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{AdamState, Graph};
use crate::corpus::{Dataset, EncodedSnippet, Split};
use crate::error::{AmnError, Result};
use crate::model::{PersonaModel, Target};
use crate::objectives::{LossBreakdown, TripletKind};

pub use checkpoint::{load, save};
pub use cluster::{agglomerative, cluster_and_purity, purity, ClusteringResult};
pub use export::{character_tropes, export_embeddings, EntityEmbedding, EntityKind};
pub use gradcheck::{default_check_options, gradcheck_config, gradcheck_fixture, model_gradcheck};
pub use metrics::EvalMetrics;

use crate::config::VariantConfig;

#[derive(Clone, Debug, Serialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub trope: usize,
    pub j_ce: f64,
    pub j_t: Option<f64>,
    pub j_mt: Option<f64>,
    pub j_mr: Option<f64>,
    pub j_mce: Option<f64>,
    pub j_total: f64,
    pub betas: [f64; 4],
    pub gammas: [f64; 3],
}

#[derive(Clone, Debug, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Validation metrics; `None` without a validation split.
    pub val: Option<EvalMetrics>,
    /// Mean validation cross-entropy of the true trope.
    pub val_ce: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LogRecord {
    Step(StepRecord),
    Epoch(EpochRecord),
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Best model by validation macro F1, ties broken by lower validation
    /// cross-entropy; the last one without a validation split.
    pub model: PersonaModel<f32>,
    pub best_epoch: Option<usize>,
    pub log: Vec<LogRecord>,
    /// `(epoch, step)` of a non-finite loss, after which training stopped.
    pub diverged: Option<(usize, usize)>,
}

/// Trains `model` on the train split of `data`. Each epoch visits the
/// tropes in shuffled order with one sampled batch each. Log records are
/// also streamed to `sink` as JSON lines.
pub fn train(
    mut model: PersonaModel<f32>,
    data: &Dataset,
    mut sink: Option<&mut dyn Write>,
) -> Result<TrainOutcome> {
    let cfg = model.cfg.clone();
    if data.split_len(Split::Train) == 0 {
        return Err(AmnError::EmptyTrainSplit);
    }
    if data.seq_len != cfg.seq_len {
        return Err(AmnError::Config(format!(
            "dataset encoded with T = {}, config has {}",
            data.seq_len, cfg.seq_len
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7472_6169_6e00);
    let mut adam = AdamState::new(&model.store, cfg.adam);
    let has_val = data.split_len(Split::Val) > 0;
    let tropes: Vec<usize> = (0..data.n_tropes())
        .filter(|&t| !data.pool(Split::Train, t).is_empty())
        .collect();
    let needs_negative = model.heads.triplet != TripletKind::None && data.n_tropes() > 1;

    let mut log = Vec::new();
    let mut emit = |rec: LogRecord, log: &mut Vec<LogRecord>| -> Result<()> {
        if let Some(w) = sink.as_mut() {
            serde_json::to_writer(&mut **w, &rec)?;
            w.write_all(b"\n")?;
        }
        log.push(rec);
        Ok(())
    };

    let mut best: Option<(f64, f64, usize, PersonaModel<f32>)> = None;
    let mut step = 0usize;
    let mut diverged = None;
    'epochs: for epoch in 0..cfg.epochs {
        let mut order = tropes.clone();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for &trope in &order {
            let batch = data.sample_batch(Split::Train, trope, cfg.n_diag, &mut rng)?;
            let negative = needs_negative.then(|| {
                let n = rng.gen_range(0..data.n_tropes() - 1);
                if n >= trope {
                    n + 1
                } else {
                    n
                }
            });
            let snippets: Vec<&EncodedSnippet> =
                batch.members.iter().map(|&i| &data.snippets[i]).collect();
            let (grads, parts, gammas, write) = {
                let mut g = Graph::new(&model.store);
                let out = model.forward(&mut g, &snippets, Some(Target { trope, negative }))?;
                let (loss, parts) = out.loss.expect("target given");
                if !parts.j_total.is_finite() {
                    diverged = Some((epoch, step));
                    break 'epochs;
                }
                let gm = g.value(out.rep.gamma).data();
                let gammas = [gm[0] as f64, gm[1] as f64, gm[2] as f64];
                let write = out
                    .rw
                    .as_ref()
                    .map(|r| (g.value(out.rep.z).data().to_vec(), r.neighbors.clone()));
                (g.param_grads(loss)?, parts, gammas, write)
            };
            if !grads.grads.iter().all(|t| t.is_finite()) {
                diverged = Some((epoch, step));
                break 'epochs;
            }
            adam.step(&mut model.store, &grads)?;
            model.after_step();
            if let Some((z, neighbors)) = write {
                model.rw_write(&z, trope, &neighbors)?;
            }
            loss_sum += parts.j_total;
            emit(
                LogRecord::Step(step_record(epoch, step, trope, &parts, gammas)),
                &mut log,
            )?;
            step += 1;
        }
        let val = if has_val {
            Some(evaluate(&model, data, Split::Val)?)
        } else {
            None
        };
        if let Some(v) = &val {
            let (f1, ce) = (v.metrics.f1, v.mean_ce);
            if best
                .as_ref()
                .is_none_or(|(bf, bc, _, _)| f1 > *bf || (f1 == *bf && ce < *bc))
            {
                best = Some((f1, ce, epoch, model.clone()));
            }
        }
        emit(
            LogRecord::Epoch(EpochRecord {
                epoch,
                mean_loss: loss_sum / order.len().max(1) as f64,
                val: val.as_ref().map(|v| v.metrics),
                val_ce: val.as_ref().map(|v| v.mean_ce),
            }),
            &mut log,
        )?;
    }
    if let Some((epoch, step)) = diverged {
        log::warn!(
            "non-finite loss at epoch {epoch}, step {step}; keeping the last finite parameters"
        );
    }
    let (model, best_epoch) = match best {
        Some((_, _, epoch, m)) => (m, Some(epoch)),
        None => (model, None),
    };
    Ok(TrainOutcome {
        model,
        best_epoch,
        log,
        diverged,
    })
}

fn step_record(
    epoch: usize,
    step: usize,
    trope: usize,
    p: &LossBreakdown,
    gammas: [f64; 3],
) -> StepRecord {
    StepRecord {
        epoch,
        step,
        trope,
        j_ce: p.j_ce,
        j_t: p.j_t,
        j_mt: p.j_mt,
        j_mr: p.j_mr,
        j_mce: p.j_mce,
        j_total: p.j_total,
        betas: p.betas,
        gammas,
    }
}

#[derive(Clone, Debug)]
pub struct EvalOutcome {
    pub metrics: EvalMetrics,
    pub truth: Vec<usize>,
    pub predicted: Vec<usize>,
    /// Mean of `-ln q[truth]` over the batches.
    pub mean_ce: f64,
}

/// Classifies every evaluation batch of `split` by the argmax of `q`.
pub fn evaluate<F: crate::autodiff::Real>(
    model: &PersonaModel<F>,
    data: &Dataset,
    split: Split,
) -> Result<EvalOutcome> {
    let batches = data.eval_batches(split, model.cfg.n_diag);
    if batches.is_empty() {
        return Err(AmnError::EmptySplit(split.to_string()));
    }
    let mut truth = Vec::with_capacity(batches.len());
    let mut predicted = Vec::with_capacity(batches.len());
    let mut ce = 0.0;
    for b in &batches {
        let snippets: Vec<&EncodedSnippet> = b.members.iter().map(|&i| &data.snippets[i]).collect();
        let p = model.predict(&snippets)?;
        ce -= p.q[b.trope_index].max(f64::MIN_POSITIVE).ln();
        predicted.push(p.trope);
        truth.push(b.trope_index);
    }
    Ok(EvalOutcome {
        metrics: EvalMetrics::compute(&truth, &predicted)?,
        truth,
        predicted,
        mean_ce: ce / batches.len() as f64,
    })
}

/// Loads quotes and descriptions, builds the dataset and a fresh model.
pub fn prepare(
    cfg: &VariantConfig,
    quotes: &[crate::corpus::RawQuote],
    descriptions: &[crate::corpus::TropeDescription],
    pretrained: Option<&HashMap<String, Vec<f32>>>,
) -> Result<(Dataset, PersonaModel<f32>)> {
    cfg.validate()?;
    let data = Dataset::build(quotes, descriptions, cfg.vocab_size, cfg.seq_len)?;
    let model = PersonaModel::new(cfg, &data.vocab, &data.catalog, pretrained)?;
    Ok((data, model))
}
