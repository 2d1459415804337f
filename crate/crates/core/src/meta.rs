//! Bi-level meta-training on artefact-specific tasks, fine-tuning for
//! unseen artefacts, prediction, and the three implementation modes.
//!
//! One meta iteration draws a stratified mini-batch from the support
//! partition and one from the query partition. Every task present in
//! both gets an independent inner run: clone the current parameters,
//! open fresh Adam moments, take `inner_steps_support` steps on the
//! task's support samples, then `inner_steps_query` steps on its query
//! samples. The outer update pulls the parameters towards the mean of
//! the per-task results at rate `eta`. Inner runs are independent and
//! fan out in parallel; the aggregation averages in fixed task order,
//! so scheduling never changes the result.

use serde::{Deserialize, Serialize};

use crate::corpus::{
    make_meta_train, assign_temporary_label, DatasetSplits, LabelledSample, MetaTrainSet, Part,
    StratifiedSampler,
};
use crate::error::{Error, Result};
use crate::exec;
use crate::image::ImageGray;
use crate::kspace::ArtefactClass;
use crate::nn::{
    adam_step, backward, forward, param_axpy, softmax_cross_entropy, AdamState, BatchNormState,
    BnMode, ModelSpec, ParamSet, Tensor,
};
use crate::seeds;

const SEED_INIT: u64 = 0x17_17;
const SEED_SUPPORT_SAMPLER: u64 = 0x50_01;
const SEED_QUERY_SAMPLER: u64 = 0x50_02;
const SEED_FT_SAMPLER: u64 = 0x50_03;
const SEED_HEAD: u64 = 0xF1_E7;
const SEED_SPLIT: u64 = 0x5E_ED;

/// Hyper-parameters shared by meta-training and fine-tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetaConfig {
    /// Adam learning rate for inner and fine-tune updates.
    pub inner_lr: f64,
    /// Outer interpolation rate eta in (0, 1].
    pub outer_lr: f64,
    /// Linearly decay eta to 0.1 over the epochs.
    pub outer_lr_decay: bool,
    pub inner_steps_support: usize,
    pub inner_steps_query: usize,
    pub batch: usize,
    pub epochs: usize,
    pub support_fraction: f64,
    pub seed: u64,
    /// Divide the outer update by the full task count even when some
    /// tasks are absent from the mini-batch (default divides by the
    /// number of tasks actually updated).
    pub outer_k_all_tasks: bool,
    /// Restrict fine-tuning to the replaced head module.
    pub finetune_head_only: bool,
}

impl Default for MetaConfig {
    fn default() -> Self {
        MetaConfig {
            inner_lr: 1e-4,
            outer_lr: 1.0,
            outer_lr_decay: false,
            inner_steps_support: 1,
            inner_steps_query: 1,
            batch: 64,
            epochs: 30,
            support_fraction: 0.5,
            seed: 0,
            outer_k_all_tasks: false,
            finetune_head_only: false,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.inner_lr > 0.0) {
            return Err(Error::config("inner_lr must be positive"));
        }
        // 0 is admitted as a "frozen prior" control even though useful
        // training needs a positive eta.
        if !(self.outer_lr >= 0.0 && self.outer_lr <= 1.0) {
            return Err(Error::config("outer_lr must lie in [0, 1]"));
        }
        if self.inner_steps_support == 0 || self.inner_steps_query == 0 {
            return Err(Error::config("inner step counts must be positive"));
        }
        if self.batch == 0 || self.epochs == 0 {
            return Err(Error::config("batch and epochs must be positive"));
        }
        if !(self.support_fraction > 0.0 && self.support_fraction < 1.0) {
            return Err(Error::config("support_fraction must lie in (0, 1)"));
        }
        Ok(())
    }

    fn eta_at(&self, epoch: usize) -> f64 {
        if self.outer_lr_decay && self.epochs > 1 {
            let t = epoch as f64 / (self.epochs - 1) as f64;
            self.outer_lr + (0.1 - self.outer_lr) * t
        } else {
            self.outer_lr
        }
    }
}

/// The three implementation modes: pooled supervised training without
/// any meta-learning (M1), meta-training on the labelled prior classes
/// only (M2), and the full pipeline including temporarily labelled
/// unlabelled images (M3).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    M1,
    M2,
    M3,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mode::M1 => write!(f, "m1"),
            Mode::M2 => write!(f, "m2"),
            Mode::M3 => write!(f, "m3"),
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "m1" => Ok(Mode::M1),
            "m2" => Ok(Mode::M2),
            "m3" => Ok(Mode::M3),
            other => Err(Error::config(format!("unknown mode '{other}'"))),
        }
    }
}

/// One logged training step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub iteration: usize,
    pub task: String,
    pub phase: String,
    pub loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub rows: Vec<HistoryRow>,
    /// Mean query-phase loss per epoch.
    pub epoch_losses: Vec<f64>,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,iteration,task,phase,loss\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{:.17e}\n",
                r.epoch, r.iteration, r.task, r.phase, r.loss
            ));
        }
        out
    }
}

/// Meta-knowledge produced by the prior stage.
#[derive(Debug, Clone)]
pub struct TrainedPrior {
    pub params: ParamSet,
    pub bn: BatchNormState,
    pub spec: ModelSpec,
    /// Classes the head serves, in slot order.
    pub task_labels: Vec<ArtefactClass>,
    pub history: TrainHistory,
}

/// The final model for the unseen classes.
#[derive(Debug, Clone)]
pub struct FineTunedModel {
    pub params: ParamSet,
    pub spec: ModelSpec,
    pub bn: BatchNormState,
    /// (class, head slot) pairs in slot order; prediction considers
    /// only these slots, so modes with wider heads evaluate masked.
    pub class_map: Vec<(ArtefactClass, usize)>,
    pub history: TrainHistory,
}

/// Stack images into an `[n, h, w]` batch tensor.
pub fn batch_tensor(images: &[&ImageGray]) -> Result<Tensor> {
    if images.is_empty() {
        return Err(Error::param("empty batch"));
    }
    let (h, w) = (images[0].height(), images[0].width());
    let mut data = Vec::with_capacity(images.len() * h * w);
    for img in images {
        if img.height() != h || img.width() != w {
            return Err(Error::shape("batch images must share dimensions"));
        }
        data.extend_from_slice(img.pixels());
    }
    Tensor::new(vec![images.len(), h, w], data)
}

fn slot_of(classes: &[ArtefactClass], class: ArtefactClass) -> Result<usize> {
    classes
        .iter()
        .position(|&c| c == class)
        .ok_or_else(|| Error::config(format!("class {class} missing from task set")))
}

/// Forward + loss + backward + one Adam step over the given samples,
/// using 1-based head-slot labels. Returns the loss before the update.
fn sgd_step(
    spec: &ModelSpec,
    params: &mut ParamSet,
    bn: &mut BatchNormState,
    adam: &mut AdamState,
    samples: &[&LabelledSample],
    classes: &[ArtefactClass],
    head_only: bool,
) -> Result<f64> {
    let batch = batch_tensor(&samples.iter().map(|s| &s.image).collect::<Vec<_>>())?;
    let labels: Vec<usize> = samples
        .iter()
        .map(|s| slot_of(classes, s.label).map(|i| i + 1))
        .collect::<Result<_>>()?;
    let (logits, cache) = forward(spec, params, bn, &batch)?;
    let (loss, dlogits) = softmax_cross_entropy(&logits, &labels)?;
    let mut grads = backward(spec, params, &cache, &dlogits)?;
    if head_only {
        for (name, tensor) in grads.iter_mut() {
            if !name.starts_with("head3.") {
                tensor.data_mut().fill(0.0);
            }
        }
    }
    adam_step(params, &grads, adam)?;
    Ok(loss)
}

/// Bi-level meta-training (the prior stage).
pub fn meta_train(meta: &MetaTrainSet, spec: &ModelSpec, cfg: &MetaConfig) -> Result<TrainedPrior> {
    cfg.validate()?;
    if meta.samples.is_empty() {
        return Err(Error::param("meta-training set is empty"));
    }
    let classes = meta.classes();
    if spec.out != classes.len() {
        return Err(Error::config(format!(
            "head width {} does not match {} task labels",
            spec.out,
            classes.len()
        )));
    }
    let (mut params, mut bn) = crate::nn::init_params(spec, seeds::derive(cfg.seed, SEED_INIT))?;
    bn.set_mode(BnMode::Train);

    let mut support_sampler =
        StratifiedSampler::new(meta, Part::Support, seeds::derive(cfg.seed, SEED_SUPPORT_SAMPLER));
    let mut query_sampler =
        StratifiedSampler::new(meta, Part::Query, seeds::derive(cfg.seed, SEED_QUERY_SAMPLER));
    let batch = cfg
        .batch
        .min(support_sampler.partition_len())
        .min(query_sampler.partition_len());
    if batch == 0 {
        return Err(Error::param("support or query partition is empty"));
    }
    let iterations = support_sampler.batches_per_epoch(batch);

    let mut history = TrainHistory::default();
    for epoch in 0..cfg.epochs {
        let mut query_losses = Vec::new();
        for iteration in 0..iterations {
            let support_idx = support_sampler.sample_minibatch(batch)?;
            let query_idx = query_sampler.sample_minibatch(batch)?;

            // Tasks need samples on both sides of the bi-level split.
            let tasks: Vec<ArtefactClass> = classes
                .iter()
                .copied()
                .filter(|&c| {
                    let in_support = support_idx.iter().any(|&i| meta.samples[i].label == c);
                    let in_query = query_idx.iter().any(|&i| meta.samples[i].label == c);
                    if !(in_support && in_query) {
                        log::debug!(
                            "epoch {epoch} iteration {iteration}: task {c} absent from batch, skipped"
                        );
                    }
                    in_support && in_query
                })
                .collect();
            if tasks.is_empty() {
                continue;
            }

            type TaskOutcome = (ParamSet, BatchNormState, f64, f64);
            let results: Vec<Result<TaskOutcome>> = exec::map(&tasks, |&task| {
                let mut task_params = params.clone();
                let mut task_bn = bn.clone();
                let mut adam = AdamState::new(&task_params, cfg.inner_lr);
                let support_samples: Vec<&LabelledSample> = support_idx
                    .iter()
                    .map(|&i| &meta.samples[i])
                    .filter(|s| s.label == task)
                    .collect();
                let query_samples: Vec<&LabelledSample> = query_idx
                    .iter()
                    .map(|&i| &meta.samples[i])
                    .filter(|s| s.label == task)
                    .collect();
                let mut support_loss = 0.0;
                for _ in 0..cfg.inner_steps_support {
                    support_loss += sgd_step(
                        spec, &mut task_params, &mut task_bn, &mut adam,
                        &support_samples, &classes, false,
                    )?;
                }
                let mut query_loss = 0.0;
                for _ in 0..cfg.inner_steps_query {
                    query_loss += sgd_step(
                        spec, &mut task_params, &mut task_bn, &mut adam,
                        &query_samples, &classes, false,
                    )?;
                }
                Ok((
                    task_params,
                    task_bn,
                    support_loss / cfg.inner_steps_support as f64,
                    query_loss / cfg.inner_steps_query as f64,
                ))
            });

            let mut task_params = Vec::with_capacity(tasks.len());
            let mut task_bns = Vec::with_capacity(tasks.len());
            for (task, result) in tasks.iter().zip(results) {
                let (p, b, support_loss, query_loss) = result?;
                history.rows.push(HistoryRow {
                    epoch,
                    iteration,
                    task: task.name(),
                    phase: "support".into(),
                    loss: support_loss,
                });
                history.rows.push(HistoryRow {
                    epoch,
                    iteration,
                    task: task.name(),
                    phase: "query".into(),
                    loss: query_loss,
                });
                query_losses.push(query_loss);
                task_params.push(p);
                task_bns.push(b);
            }

            let eta = if cfg.outer_k_all_tasks {
                cfg.eta_at(epoch) * tasks.len() as f64 / classes.len() as f64
            } else {
                cfg.eta_at(epoch)
            };
            params = param_axpy(&params, &task_params, eta)?;
            bn.interpolate_towards(&task_bns, eta);
        }
        let epoch_loss = if query_losses.is_empty() {
            f64::NAN
        } else {
            query_losses.iter().sum::<f64>() / query_losses.len() as f64
        };
        history.epoch_losses.push(epoch_loss);
    }

    Ok(TrainedPrior { params, bn, spec: spec.clone(), task_labels: classes, history })
}

fn check_balanced(samples: &[LabelledSample]) -> Result<Vec<ArtefactClass>> {
    let mut counts = std::collections::BTreeMap::new();
    for s in samples {
        *counts.entry(s.label).or_insert(0usize) += 1;
    }
    let mut values = counts.values();
    if let Some(&first) = values.next() {
        if values.any(|&v| v != first) {
            return Err(Error::config("fine-tune samples must be class-balanced"));
        }
    }
    Ok(counts.into_keys().collect())
}

/// Replace the head with an `M`-way module and train on the labelled
/// unseen-class samples.
pub fn fine_tune(
    prior: &TrainedPrior,
    labelled: &[LabelledSample],
    cfg: &MetaConfig,
) -> Result<FineTunedModel> {
    cfg.validate()?;
    if labelled.is_empty() {
        return Err(Error::param("fine-tuning needs labelled samples"));
    }
    let classes = check_balanced(labelled)?;
    for class in &classes {
        if prior.task_labels.contains(class) {
            return Err(Error::config(format!(
                "fine-tune class {class} overlaps a prior task label"
            )));
        }
    }
    let m = classes.len();
    if m < 2 {
        return Err(Error::config("fine-tuning needs at least 2 classes"));
    }

    let (mut params, spec) =
        crate::nn::replace_head(&prior.params, &prior.spec, m, seeds::derive(cfg.seed, SEED_HEAD))?;
    let mut bn = prior.bn.clone();
    bn.replace_final(m);
    bn.set_mode(BnMode::Train);
    let mut adam = AdamState::new(&params, cfg.inner_lr);

    let mut sampler =
        StratifiedSampler::from_samples(labelled, seeds::derive(cfg.seed, SEED_FT_SAMPLER));
    let batch = cfg.batch.min(labelled.len());
    let iterations = sampler.batches_per_epoch(batch);

    let mut history = TrainHistory::default();
    for epoch in 0..cfg.epochs {
        let mut losses = Vec::new();
        for iteration in 0..iterations {
            let idx = sampler.sample_minibatch(batch)?;
            let samples: Vec<&LabelledSample> = idx.iter().map(|&i| &labelled[i]).collect();
            let loss = sgd_step(
                &spec, &mut params, &mut bn, &mut adam, &samples, &classes,
                cfg.finetune_head_only,
            )?;
            history.rows.push(HistoryRow {
                epoch,
                iteration,
                task: "all".into(),
                phase: "finetune".into(),
                loss,
            });
            losses.push(loss);
        }
        history
            .epoch_losses
            .push(losses.iter().sum::<f64>() / losses.len().max(1) as f64);
    }

    let class_map = classes.into_iter().enumerate().map(|(i, c)| (c, i)).collect();
    Ok(FineTunedModel { params, spec, bn, class_map, history })
}

/// Plain pooled supervised training (no meta-learning); the head covers
/// every class present in `samples`.
pub fn train_supervised(
    samples: &[LabelledSample],
    spec: &ModelSpec,
    cfg: &MetaConfig,
) -> Result<(ParamSet, BatchNormState, Vec<ArtefactClass>, TrainHistory)> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::param("training set is empty"));
    }
    let classes: Vec<ArtefactClass> = {
        let set: std::collections::BTreeSet<_> = samples.iter().map(|s| s.label).collect();
        set.into_iter().collect()
    };
    if spec.out != classes.len() {
        return Err(Error::config(format!(
            "head width {} does not match {} classes",
            spec.out,
            classes.len()
        )));
    }
    let (mut params, mut bn) = crate::nn::init_params(spec, seeds::derive(cfg.seed, SEED_INIT))?;
    bn.set_mode(BnMode::Train);
    let mut adam = AdamState::new(&params, cfg.inner_lr);
    let mut sampler =
        StratifiedSampler::from_samples(samples, seeds::derive(cfg.seed, SEED_FT_SAMPLER));
    let batch = cfg.batch.min(samples.len());
    let iterations = sampler.batches_per_epoch(batch);

    let mut history = TrainHistory::default();
    for epoch in 0..cfg.epochs {
        let mut losses = Vec::new();
        for iteration in 0..iterations {
            let idx = sampler.sample_minibatch(batch)?;
            let chosen: Vec<&LabelledSample> = idx.iter().map(|&i| &samples[i]).collect();
            let loss = sgd_step(spec, &mut params, &mut bn, &mut adam, &chosen, &classes, false)?;
            history.rows.push(HistoryRow {
                epoch,
                iteration,
                task: "all".into(),
                phase: "supervised".into(),
                loss,
            });
            losses.push(loss);
        }
        history
            .epoch_losses
            .push(losses.iter().sum::<f64>() / losses.len().max(1) as f64);
    }
    Ok((params, bn, classes, history))
}

/// Classify images with the fine-tuned model (eval-mode batch norm).
/// Prediction is the argmax over the class-mapped head slots; exact
/// ties resolve to the lowest slot.
pub fn predict(model: &FineTunedModel, images: &[ImageGray]) -> Result<Vec<ArtefactClass>> {
    if images.is_empty() {
        return Ok(Vec::new());
    }
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(256) {
        let batch = batch_tensor(&chunk.iter().collect::<Vec<_>>())?;
        let logits = crate::nn::model::forward_eval(&model.spec, &model.params, &model.bn, &batch)?;
        let c = model.spec.out;
        for row in logits.data().chunks_exact(c) {
            let mut best = &model.class_map[0];
            for entry in &model.class_map[1..] {
                if row[entry.1] > row[best.1] {
                    best = entry;
                }
            }
            out.push(best.0);
        }
    }
    Ok(out)
}

/// Execute one implementation mode end to end. Only the public split
/// fields are touched; hidden test labels stay unread.
pub fn run_mode(
    mode: Mode,
    splits: &DatasetSplits,
    spec: &ModelSpec,
    cfg: &MetaConfig,
) -> Result<FineTunedModel> {
    cfg.validate()?;
    let l = splits.label_map().num_prior();
    match mode {
        Mode::M1 => {
            let pooled: Vec<LabelledSample> = splits
                .artefact_specific
                .iter()
                .chain(&splits.unseen_labelled)
                .cloned()
                .collect();
            let class_count = {
                let set: std::collections::BTreeSet<_> = pooled.iter().map(|s| s.label).collect();
                set.len()
            };
            let mut wide_spec = spec.clone();
            wide_spec.out = class_count;
            let (params, mut bn, classes, history) = train_supervised(&pooled, &wide_spec, cfg)?;
            bn.set_mode(BnMode::Eval);
            // Only the unseen-class slots take part in evaluation.
            let class_map = classes
                .iter()
                .enumerate()
                .filter(|(_, c)| splits.label_map().finetune_classes().contains(c))
                .map(|(i, &c)| (c, i))
                .collect();
            Ok(FineTunedModel { params, spec: wide_spec, bn, class_map, history })
        }
        Mode::M2 | Mode::M3 => {
            let assigned = if mode == Mode::M3 {
                assign_temporary_label(&splits.unseen_unlabelled, l)?
            } else {
                Vec::new()
            };
            let meta = make_meta_train(
                &splits.artefact_specific,
                &assigned,
                cfg.support_fraction,
                seeds::derive(cfg.seed, SEED_SPLIT),
            )?;
            let mut prior_spec = spec.clone();
            prior_spec.out = meta.classes().len();
            let prior = meta_train(&meta, &prior_spec, cfg)?;
            let mut model = fine_tune(&prior, &splits.unseen_labelled, cfg)?;
            model.bn.set_mode(BnMode::Eval);
            model.history.rows.splice(0..0, prior.history.rows);
            Ok(model)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, size: usize) -> ImageGray {
        let data = (0..size * size).map(|_| rng.random_range(0.0..1.0)).collect();
        ImageGray::new(size, size, data).unwrap()
    }

    fn tiny_spec(out: usize) -> ModelSpec {
        ModelSpec { input_size: 8, conv_channels: vec![2], head_widths: [6, 4], out }
    }

    fn tiny_cfg() -> MetaConfig {
        MetaConfig { epochs: 1, batch: 8, inner_lr: 1e-3, seed: 5, ..MetaConfig::default() }
    }

    /// Build a meta set where the second class has a single sample that
    /// the 0.5 split sends entirely to the support side, so exactly one
    /// task runs per iteration (k = 1).
    fn single_task_meta(rng: &mut ChaCha8Rng) -> MetaTrainSet {
        let mut samples = Vec::new();
        for i in 0..6u64 {
            samples.push(LabelledSample {
                image: random_image(rng, 8),
                label: ArtefactClass::ArtefactFree,
                sample_id: i,
            });
        }
        samples.push(LabelledSample {
            image: random_image(rng, 8),
            label: ArtefactClass::Gibbs,
            sample_id: 6,
        });
        make_meta_train(&samples, &[], 0.5, 123).unwrap()
    }

    #[test]
    fn single_task_full_eta_collapses_to_sequential_training() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let meta = single_task_meta(&mut rng);
        assert!(meta.query.iter().all(|&i| meta.samples[i].label == ArtefactClass::ArtefactFree));

        let spec = tiny_spec(2);
        let cfg = MetaConfig { outer_lr: 1.0, ..tiny_cfg() };
        let prior = meta_train(&meta, &spec, &cfg).unwrap();

        // Sequential comparator: same init, same batches, two Adam steps.
        let classes = meta.classes();
        let (mut params, mut bn) =
            crate::nn::init_params(&spec, seeds::derive(cfg.seed, SEED_INIT)).unwrap();
        bn.set_mode(BnMode::Train);
        let mut support_sampler = StratifiedSampler::new(
            &meta,
            Part::Support,
            seeds::derive(cfg.seed, SEED_SUPPORT_SAMPLER),
        );
        let mut query_sampler = StratifiedSampler::new(
            &meta,
            Part::Query,
            seeds::derive(cfg.seed, SEED_QUERY_SAMPLER),
        );
        let batch = cfg.batch.min(support_sampler.partition_len()).min(query_sampler.partition_len());
        for _ in 0..support_sampler.batches_per_epoch(batch) {
            let support_idx = support_sampler.sample_minibatch(batch).unwrap();
            let query_idx = query_sampler.sample_minibatch(batch).unwrap();
            let support: Vec<&LabelledSample> = support_idx
                .iter()
                .map(|&i| &meta.samples[i])
                .filter(|s| s.label == ArtefactClass::ArtefactFree)
                .collect();
            let query: Vec<&LabelledSample> = query_idx
                .iter()
                .map(|&i| &meta.samples[i])
                .filter(|s| s.label == ArtefactClass::ArtefactFree)
                .collect();
            if support.is_empty() || query.is_empty() {
                continue;
            }
            // One meta iteration = two sequential Adam steps from a
            // fresh optimiser on the current parameters.
            let mut adam = AdamState::new(&params, cfg.inner_lr);
            sgd_step(&spec, &mut params, &mut bn, &mut adam, &support, &classes, false).unwrap();
            sgd_step(&spec, &mut params, &mut bn, &mut adam, &query, &classes, false).unwrap();
        }
        assert_eq!(prior.params, params);
        assert_eq!(prior.bn, bn);
    }

    #[test]
    fn zero_eta_keeps_parameters_but_records_history() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let meta = single_task_meta(&mut rng);
        let spec = tiny_spec(2);
        let cfg = MetaConfig { outer_lr: 0.0, ..tiny_cfg() };
        let (params0, _) = crate::nn::init_params(&spec, seeds::derive(cfg.seed, SEED_INIT)).unwrap();
        let prior = meta_train(&meta, &spec, &cfg).unwrap();
        assert_eq!(prior.params, params0);
        assert!(!prior.history.rows.is_empty());
    }

    #[test]
    fn finetune_rejects_overlapping_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let meta = single_task_meta(&mut rng);
        let spec = tiny_spec(2);
        let prior = meta_train(&meta, &spec, &tiny_cfg()).unwrap();
        let labelled: Vec<LabelledSample> = (0..4)
            .map(|i| LabelledSample {
                image: random_image(&mut rng, 8),
                label: if i % 2 == 0 { ArtefactClass::Gibbs } else { ArtefactClass::Aliasing },
                sample_id: 100 + i as u64,
            })
            .collect();
        // Gibbs is a prior task label here.
        assert!(fine_tune(&prior, &labelled, &tiny_cfg()).is_err());
    }

    #[test]
    fn finetune_with_zero_lr_keeps_non_head_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let meta = single_task_meta(&mut rng);
        let spec = tiny_spec(2);
        let prior = meta_train(&meta, &spec, &tiny_cfg()).unwrap();
        let labelled: Vec<LabelledSample> = (0..4)
            .map(|i| LabelledSample {
                image: random_image(&mut rng, 8),
                label: if i % 2 == 0 { ArtefactClass::Aliasing } else { ArtefactClass::CardiacMotion },
                sample_id: 100 + i as u64,
            })
            .collect();
        let cfg = MetaConfig { inner_lr: 1e-30, epochs: 1, ..tiny_cfg() };
        let model = fine_tune(&prior, &labelled, &cfg).unwrap();
        for (name, tensor) in prior.params.iter() {
            if !name.starts_with("head3.") {
                let after = model.params.get(name).unwrap();
                let max_diff = tensor
                    .data()
                    .iter()
                    .zip(after.data())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                assert!(max_diff < 1e-25, "{name} moved by {max_diff}");
            }
        }
    }

    #[test]
    fn predictions_are_argmax_with_low_slot_ties() {
        let model_spec = tiny_spec(2);
        let (params, bn) = crate::nn::init_params(&model_spec, 3).unwrap();
        let model = FineTunedModel {
            params,
            spec: model_spec,
            bn,
            class_map: vec![(ArtefactClass::Aliasing, 0), (ArtefactClass::CardiacMotion, 1)],
            history: TrainHistory::default(),
        };
        // Zeroed parameters give all-zero logits: a tie, resolved to
        // slot 0.
        let mut zero_model = model.clone();
        zero_model.params = zero_model.params.zeros_like();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let images = vec![random_image(&mut rng, 8)];
        let out = predict(&zero_model, &images).unwrap();
        assert_eq!(out, vec![ArtefactClass::Aliasing]);
    }
}
