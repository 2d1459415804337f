//! Balanced labelled corpora and their split structure.
//!
//! A corpus is generated from seeded phantoms and split three ways:
//! fully labelled samples of the prior classes, a small labelled budget
//! of the unseen (fine-tune) classes, and the remaining unseen-class
//! images whose ground-truth labels are hidden behind an audited
//! accessor so no training path can read them.
//!
//! Label codes are corpus-relative: prior classes get `1..=l` in
//! canonical class order, `l + 1` is reserved for the temporary label
//! attached to unlabelled images during meta-training, and fine-tune
//! classes get `l + 2..`.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::image::ImageGray;
use crate::kspace::{synthesize_sample, ArtefactClass, ArtefactParams};
use crate::phantom::generate_phantom;
use crate::seeds;

pub type LabelCode = u16;

/// Sample ids assigned by [`assign_temporary_label`]; far above any
/// corpus-generated id so the two ranges cannot collide.
const TEMP_ID_BASE: u64 = 1 << 48;

/// Uniform ranges the per-sample severity parameters are drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParamRanges {
    /// Inclusive pixel range of the respiratory shift.
    pub translation_px: (i64, i64),
    pub sine_period: (f64, f64),
    pub sine_duty: (f64, f64),
    pub gibbs_keep_fraction: (f64, f64),
    pub aliasing_factor: usize,
}

impl Default for ParamRanges {
    fn default() -> Self {
        ParamRanges {
            translation_px: (2, 6),
            sine_period: (6.0, 16.0),
            sine_duty: (0.3, 0.6),
            gibbs_keep_fraction: (0.2, 0.5),
            aliasing_factor: 2,
        }
    }
}

impl ParamRanges {
    /// Milder severities whose weakest draws sit near the visibility
    /// threshold; used by the desk-scale experiment harness so that a
    /// handful of labels is genuinely insufficient for from-scratch
    /// training.
    pub fn mild() -> Self {
        ParamRanges {
            translation_px: (1, 4),
            sine_period: (6.0, 16.0),
            sine_duty: (0.15, 0.5),
            gibbs_keep_fraction: (0.35, 0.65),
            aliasing_factor: 2,
        }
    }
}

impl ParamRanges {
    pub fn draw(&self, rng: &mut ChaCha8Rng) -> ArtefactParams {
        ArtefactParams {
            translation_px: rng.random_range(self.translation_px.0..=self.translation_px.1),
            sine_period: rng.random_range(self.sine_period.0..self.sine_period.1),
            sine_duty: rng.random_range(self.sine_duty.0..self.sine_duty.1),
            gibbs_keep_fraction: rng
                .random_range(self.gibbs_keep_fraction.0..self.gibbs_keep_fraction.1),
            aliasing_factor: self.aliasing_factor,
            rng_seed: rng.random(),
        }
    }
}

/// Everything needed to regenerate a corpus byte-for-byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    /// Identical for every class; balance is exact by construction.
    pub per_class_count: usize,
    pub image_size: usize,
    pub cine_frames: usize,
    pub param_ranges: ParamRanges,
    pub rng_seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            per_class_count: 512,
            image_size: 64,
            cine_frames: 8,
            param_ranges: ParamRanges::default(),
            rng_seed: 7,
        }
    }
}

/// One labelled image.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelledSample {
    pub image: ImageGray,
    pub label: ArtefactClass,
    pub sample_id: u64,
}

/// Corpus-relative label codes for prior, temporary and fine-tune
/// classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    prior: Vec<ArtefactClass>,
    finetune: Vec<ArtefactClass>,
}

impl LabelMap {
    pub fn new(prior: &[ArtefactClass], finetune: &[ArtefactClass]) -> Result<Self> {
        let prior_set: BTreeSet<_> = prior.iter().copied().collect();
        let finetune_set: BTreeSet<_> = finetune.iter().copied().collect();
        if prior_set.len() != prior.len() || finetune_set.len() != finetune.len() {
            return Err(Error::config("duplicate class in class set"));
        }
        if prior_set.is_empty() || finetune_set.is_empty() {
            return Err(Error::config("prior and fine-tune class sets must be non-empty"));
        }
        if !prior_set.is_disjoint(&finetune_set) {
            return Err(Error::config("prior and fine-tune class sets must be disjoint"));
        }
        for class in prior_set.iter().chain(&finetune_set) {
            if matches!(class, ArtefactClass::Temporary(_)) {
                return Err(Error::config("temporary labels cannot appear in class sets"));
            }
        }
        Ok(LabelMap {
            prior: prior_set.into_iter().collect(),
            finetune: finetune_set.into_iter().collect(),
        })
    }

    /// Number of prior classes (`l`).
    pub fn num_prior(&self) -> usize {
        self.prior.len()
    }

    pub fn prior_classes(&self) -> &[ArtefactClass] {
        &self.prior
    }

    pub fn finetune_classes(&self) -> &[ArtefactClass] {
        &self.finetune
    }

    pub fn temporary_code(&self) -> LabelCode {
        (self.prior.len() + 1) as LabelCode
    }

    pub fn code_of(&self, class: ArtefactClass) -> Option<LabelCode> {
        if let ArtefactClass::Temporary(code) = class {
            return Some(code);
        }
        if let Some(i) = self.prior.iter().position(|&c| c == class) {
            return Some((i + 1) as LabelCode);
        }
        self.finetune
            .iter()
            .position(|&c| c == class)
            .map(|i| (self.prior.len() + 2 + i) as LabelCode)
    }

    pub fn class_of(&self, code: LabelCode) -> Option<ArtefactClass> {
        let c = code as usize;
        let l = self.prior.len();
        if (1..=l).contains(&c) {
            Some(self.prior[c - 1])
        } else if c == l + 1 {
            Some(ArtefactClass::Temporary(code))
        } else if (l + 2..l + 2 + self.finetune.len()).contains(&c) {
            Some(self.finetune[c - l - 2])
        } else {
            None
        }
    }

    pub fn prior_codes(&self) -> Vec<LabelCode> {
        (1..=self.prior.len() as LabelCode).collect()
    }

    pub fn finetune_codes(&self) -> Vec<LabelCode> {
        let l = self.prior.len() as LabelCode;
        (l + 2..l + 2 + self.finetune.len() as LabelCode).collect()
    }
}

/// The three-way split of a corpus. Training code sees labelled samples
/// and bare test images only; the hidden test labels sit behind
/// [`DatasetSplits::hidden_labels`], which counts every access so runs
/// can be audited for peeking.
#[derive(Debug)]
pub struct DatasetSplits {
    pub artefact_specific: Vec<LabelledSample>,
    pub unseen_labelled: Vec<LabelledSample>,
    pub unseen_unlabelled: Vec<ImageGray>,
    label_map: LabelMap,
    test_ids: Vec<u64>,
    hidden: Vec<ArtefactClass>,
    hidden_reads: AtomicU64,
}

impl Clone for DatasetSplits {
    fn clone(&self) -> Self {
        DatasetSplits {
            artefact_specific: self.artefact_specific.clone(),
            unseen_labelled: self.unseen_labelled.clone(),
            unseen_unlabelled: self.unseen_unlabelled.clone(),
            label_map: self.label_map.clone(),
            test_ids: self.test_ids.clone(),
            hidden: self.hidden.clone(),
            hidden_reads: AtomicU64::new(0),
        }
    }
}

impl PartialEq for DatasetSplits {
    fn eq(&self, other: &Self) -> bool {
        self.artefact_specific == other.artefact_specific
            && self.unseen_labelled == other.unseen_labelled
            && self.unseen_unlabelled == other.unseen_unlabelled
            && self.label_map == other.label_map
            && self.test_ids == other.test_ids
            && self.hidden == other.hidden
    }
}

impl DatasetSplits {
    /// Assemble splits from parts, checking the structural invariants:
    /// disjoint label sets, exact class balance within each split, and
    /// one hidden label per test image.
    pub fn from_parts(
        artefact_specific: Vec<LabelledSample>,
        unseen_labelled: Vec<LabelledSample>,
        unseen_unlabelled: Vec<ImageGray>,
        hidden: Vec<ArtefactClass>,
        test_ids: Vec<u64>,
        label_map: LabelMap,
    ) -> Result<Self> {
        if unseen_unlabelled.len() != hidden.len() || unseen_unlabelled.len() != test_ids.len() {
            return Err(Error::config("test images, hidden labels and ids must align"));
        }
        let check_balance = |name: &str, labels: &mut dyn Iterator<Item = ArtefactClass>| {
            let mut counts = std::collections::BTreeMap::new();
            for class in labels {
                *counts.entry(class).or_insert(0usize) += 1;
            }
            let mut values = counts.values();
            if let Some(&first) = values.next() {
                if values.any(|&v| v != first) {
                    return Err(Error::config(format!("{name} split is not class-balanced")));
                }
            }
            Ok(())
        };
        check_balance("artefact_specific", &mut artefact_specific.iter().map(|s| s.label))?;
        check_balance("unseen_labelled", &mut unseen_labelled.iter().map(|s| s.label))?;
        check_balance("unseen_unlabelled", &mut hidden.iter().copied())?;
        let specific_labels: BTreeSet<_> = artefact_specific.iter().map(|s| s.label).collect();
        let labelled_labels: BTreeSet<_> = unseen_labelled.iter().map(|s| s.label).collect();
        if !specific_labels.is_disjoint(&labelled_labels) {
            return Err(Error::config(
                "artefact_specific and unseen_labelled share a label",
            ));
        }
        for sample in artefact_specific.iter().chain(&unseen_labelled) {
            if label_map.code_of(sample.label).is_none() {
                return Err(Error::config(format!(
                    "label {} missing from label map",
                    sample.label
                )));
            }
        }
        let mut ids: Vec<u64> = artefact_specific
            .iter()
            .chain(&unseen_labelled)
            .map(|s| s.sample_id)
            .chain(test_ids.iter().copied())
            .collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != artefact_specific.len() + unseen_labelled.len() + test_ids.len() {
            return Err(Error::config("sample ids must be unique within a corpus"));
        }
        Ok(DatasetSplits {
            artefact_specific,
            unseen_labelled,
            unseen_unlabelled,
            label_map,
            test_ids,
            hidden,
            hidden_reads: AtomicU64::new(0),
        })
    }

    pub fn label_map(&self) -> &LabelMap {
        &self.label_map
    }

    pub fn test_ids(&self) -> &[u64] {
        &self.test_ids
    }

    /// Ground-truth classes of the unlabelled test images, aligned with
    /// `unseen_unlabelled`. Evaluation only; every call is counted.
    pub fn hidden_labels(&self) -> &[ArtefactClass] {
        self.hidden_reads.fetch_add(1, Ordering::SeqCst);
        &self.hidden
    }

    /// How many times [`Self::hidden_labels`] has been called on this
    /// instance.
    pub fn hidden_label_reads(&self) -> u64 {
        self.hidden_reads.load(Ordering::SeqCst)
    }
}

/// Generate the balanced corpus for one experiment cell. Every sample
/// comes from a fresh seeded phantom; generation fans out per sample
/// and is ordered by `sample_id`, so the result does not depend on the
/// execution strategy. Images are snapped to the 16-bit grid so saving
/// and loading reproduces them exactly.
pub fn build_corpus(
    cfg: &CorpusConfig,
    prior_classes: &[ArtefactClass],
    finetune_classes: &[ArtefactClass],
    labelled_budget: usize,
) -> Result<DatasetSplits> {
    let label_map = LabelMap::new(prior_classes, finetune_classes)?;
    if cfg.per_class_count == 0 {
        return Err(Error::config("per_class_count must be positive"));
    }
    if labelled_budget > cfg.per_class_count {
        return Err(Error::config(format!(
            "labelled_budget {labelled_budget} exceeds per_class_count {}",
            cfg.per_class_count
        )));
    }
    if cfg.cine_frames < 2 {
        return Err(Error::config("cine_frames must be >= 2"));
    }

    let mut classes: Vec<ArtefactClass> = label_map.prior_classes().to_vec();
    classes.extend_from_slice(label_map.finetune_classes());

    let total = classes.len() * cfg.per_class_count;
    let samples: Vec<Result<LabelledSample>> = exec::map_indexed(total, |global| {
        let class = classes[global / cfg.per_class_count];
        let sample_seed = seeds::derive(cfg.rng_seed, global as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
        let phantom_seed: u64 = rng.random();
        let stack = generate_phantom(phantom_seed, cfg.image_size, cfg.cine_frames)?;
        let params = cfg.param_ranges.draw(&mut rng);
        let image = synthesize_sample(&stack, class, &params)?.quantize_u16();
        Ok(LabelledSample { image, label: class, sample_id: global as u64 })
    });

    let mut artefact_specific = Vec::new();
    let mut unseen_labelled = Vec::new();
    let mut unseen_unlabelled = Vec::new();
    let mut hidden = Vec::new();
    let mut test_ids = Vec::new();
    let l = label_map.num_prior();
    for (global, sample) in samples.into_iter().enumerate() {
        let sample = sample?;
        let class_idx = global / cfg.per_class_count;
        let within = global % cfg.per_class_count;
        if class_idx < l {
            artefact_specific.push(sample);
        } else if within < labelled_budget {
            unseen_labelled.push(sample);
        } else {
            hidden.push(sample.label);
            test_ids.push(sample.sample_id);
            unseen_unlabelled.push(sample.image);
        }
    }

    DatasetSplits::from_parts(
        artefact_specific,
        unseen_labelled,
        unseen_unlabelled,
        hidden,
        test_ids,
        label_map,
    )
}

/// Attach the temporary label `l + 1` to every unlabelled image.
pub fn assign_temporary_label(
    unlabelled: &[ImageGray],
    l: usize,
) -> Result<Vec<LabelledSample>> {
    if l < 1 {
        return Err(Error::param("temporary label needs at least one prior class"));
    }
    let code = (l + 1) as LabelCode;
    Ok(unlabelled
        .iter()
        .enumerate()
        .map(|(i, image)| LabelledSample {
            image: image.clone(),
            label: ArtefactClass::Temporary(code),
            sample_id: TEMP_ID_BASE + i as u64,
        })
        .collect())
}

/// The meta-training pool with its support/query partition.
#[derive(Debug, Clone)]
pub struct MetaTrainSet {
    pub samples: Vec<LabelledSample>,
    pub support: Vec<usize>,
    pub query: Vec<usize>,
}

impl MetaTrainSet {
    pub fn partition(&self, part: Part) -> &[usize] {
        match part {
            Part::Support => &self.support,
            Part::Query => &self.query,
        }
    }

    /// Distinct classes present, in canonical order.
    pub fn classes(&self) -> Vec<ArtefactClass> {
        let set: BTreeSet<_> = self.samples.iter().map(|s| s.label).collect();
        set.into_iter().collect()
    }
}

/// Union the labelled prior pool with the temporarily labelled images
/// and split it into support and query, stratified per class at
/// `support_fraction` (per-class counts differ by at most one sample
/// from the exact fraction).
pub fn make_meta_train(
    specific: &[LabelledSample],
    assigned: &[LabelledSample],
    support_fraction: f64,
    seed: u64,
) -> Result<MetaTrainSet> {
    if !(support_fraction > 0.0 && support_fraction < 1.0) {
        return Err(Error::param("support_fraction must lie in (0, 1)"));
    }
    let samples: Vec<LabelledSample> = specific.iter().chain(assigned).cloned().collect();
    if samples.is_empty() {
        return Err(Error::param("meta-training set is empty"));
    }
    let mut by_class: std::collections::BTreeMap<ArtefactClass, Vec<usize>> = Default::default();
    for (i, s) in samples.iter().enumerate() {
        by_class.entry(s.label).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, 0x5417));
    let mut support = Vec::new();
    let mut query = Vec::new();
    for (_, mut indices) in by_class {
        indices.shuffle(&mut rng);
        let take = (support_fraction * indices.len() as f64).round() as usize;
        let take = take.min(indices.len());
        support.extend_from_slice(&indices[..take]);
        query.extend_from_slice(&indices[take..]);
    }
    support.sort_unstable();
    query.sort_unstable();
    Ok(MetaTrainSet { samples, support, query })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Support,
    Query,
}

impl std::fmt::Display for Part {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Part::Support => write!(f, "support"),
            Part::Query => write!(f, "query"),
        }
    }
}

/// Class-stratified without-replacement mini-batch source over one
/// partition of a [`MetaTrainSet`].
///
/// An epoch is `batches_per_epoch` consecutive draws; together they
/// emit every index of the partition exactly once. Within a batch the
/// per-class counts are as equal as the remaining pool allows (64 over
/// five classes gives 12 or 13 per class).
#[derive(Debug, Clone)]
pub struct StratifiedSampler {
    /// (class, shuffled index queue) in canonical class order.
    queues: Vec<(ArtefactClass, Vec<usize>)>,
    cursors: Vec<usize>,
    rng: ChaCha8Rng,
    batch_no: u64,
    partition_len: usize,
}

impl StratifiedSampler {
    pub fn new(set: &MetaTrainSet, part: Part, seed: u64) -> Self {
        Self::from_labelled(
            set.partition(part).iter().map(|&i| (i, set.samples[i].label)),
            seed,
        )
    }

    /// Sampler over a plain labelled slice (indices `0..len`).
    pub fn from_samples(samples: &[LabelledSample], seed: u64) -> Self {
        Self::from_labelled(samples.iter().enumerate().map(|(i, s)| (i, s.label)), seed)
    }

    fn from_labelled(items: impl Iterator<Item = (usize, ArtefactClass)>, seed: u64) -> Self {
        let mut by_class: std::collections::BTreeMap<ArtefactClass, Vec<usize>> = Default::default();
        for (i, label) in items {
            by_class.entry(label).or_default().push(i);
        }
        let queues: Vec<(ArtefactClass, Vec<usize>)> = by_class.into_iter().collect();
        let partition_len = queues.iter().map(|(_, q)| q.len()).sum();
        let mut sampler = StratifiedSampler {
            queues,
            cursors: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seeds::derive(seed, 0xBA7C)),
            batch_no: 0,
            partition_len,
        };
        sampler.reshuffle();
        sampler
    }

    pub fn partition_len(&self) -> usize {
        self.partition_len
    }

    /// Batches needed to cover the partition once (last one may be
    /// short when the batch size does not divide the partition).
    pub fn batches_per_epoch(&self, batch: usize) -> usize {
        self.partition_len.div_ceil(batch)
    }

    fn reshuffle(&mut self) {
        for (_, queue) in self.queues.iter_mut() {
            queue.shuffle(&mut self.rng);
        }
        self.cursors = vec![0; self.queues.len()];
    }

    fn remaining(&self) -> usize {
        self.queues
            .iter()
            .zip(&self.cursors)
            .map(|((_, q), &c)| q.len() - c)
            .sum()
    }

    /// Draw the next stratified mini-batch of `batch` indices.
    pub fn sample_minibatch(&mut self, batch: usize) -> Result<Vec<usize>> {
        if batch == 0 || batch > self.partition_len {
            return Err(Error::param(format!(
                "batch {batch} exceeds partition size {}",
                self.partition_len
            )));
        }
        if self.remaining() == 0 {
            self.reshuffle();
        }
        let take = batch.min(self.remaining());
        let n_classes = self.queues.len();
        let mut quotas = vec![0usize; n_classes];
        let mut assigned = 0;
        // Round-robin one index at a time, rotating the starting class
        // each batch so the +1 remainder does not always favour the
        // same classes.
        let mut k = (self.batch_no as usize) % n_classes;
        let mut stalled = 0;
        while assigned < take && stalled < n_classes {
            let (_, queue) = &self.queues[k];
            if self.cursors[k] + quotas[k] < queue.len() {
                quotas[k] += 1;
                assigned += 1;
                stalled = 0;
            } else {
                stalled += 1;
            }
            k = (k + 1) % n_classes;
        }
        let mut out = Vec::with_capacity(take);
        for (k, quota) in quotas.into_iter().enumerate() {
            let cursor = self.cursors[k];
            out.extend_from_slice(&self.queues[k].1[cursor..cursor + quota]);
            self.cursors[k] += quota;
        }
        out.shuffle(&mut self.rng);
        self.batch_no += 1;
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Persistence: images/<sample_id>.pgm + manifest.jsonl + eval/hidden.jsonl
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct CorpusHeader {
    prior_classes: Vec<String>,
    finetune_classes: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRecord {
    sample_id: u64,
    file: String,
    split: String,
    label_code: Option<LabelCode>,
    class_name: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct HiddenRecord {
    sample_id: u64,
    hidden_label_code: LabelCode,
    class_name: String,
}

/// Persist a corpus. Layout:
///
/// ```text
/// dir/corpus.json      class sets
/// dir/manifest.jsonl   one record per sample (no test labels)
/// dir/images/<id>.pgm  16-bit binary PGM
/// dir/eval/hidden.jsonl  test-split ground truth, evaluation only
/// ```
pub fn save_corpus(splits: &DatasetSplits, dir: &Path) -> Result<()> {
    let images_dir = dir.join("images");
    let eval_dir = dir.join("eval");
    fs::create_dir_all(&images_dir)?;
    fs::create_dir_all(&eval_dir)?;

    let header = CorpusHeader {
        prior_classes: splits.label_map.prior.iter().map(|c| c.name()).collect(),
        finetune_classes: splits.label_map.finetune.iter().map(|c| c.name()).collect(),
    };
    fs::write(dir.join("corpus.json"), serde_json::to_string_pretty(&header)?)?;

    let mut manifest = Vec::new();
    let mut write_sample = |sample: &LabelledSample, split: &str| -> Result<()> {
        let file = format!("images/{}.pgm", sample.sample_id);
        sample.image.write_pgm(&dir.join(&file))?;
        let record = ManifestRecord {
            sample_id: sample.sample_id,
            file,
            split: split.to_string(),
            label_code: splits.label_map.code_of(sample.label),
            class_name: Some(sample.label.name()),
        };
        manifest.push(serde_json::to_string(&record)?);
        Ok(())
    };
    for sample in &splits.artefact_specific {
        write_sample(sample, "artefact_specific")?;
    }
    for sample in &splits.unseen_labelled {
        write_sample(sample, "unseen_labelled")?;
    }
    let mut hidden_lines = Vec::new();
    for ((image, &id), &class) in splits
        .unseen_unlabelled
        .iter()
        .zip(&splits.test_ids)
        .zip(&splits.hidden)
    {
        let file = format!("images/{id}.pgm");
        image.write_pgm(&dir.join(&file))?;
        manifest.push(serde_json::to_string(&ManifestRecord {
            sample_id: id,
            file,
            split: "unseen_unlabelled".to_string(),
            label_code: None,
            class_name: None,
        })?);
        hidden_lines.push(serde_json::to_string(&HiddenRecord {
            sample_id: id,
            hidden_label_code: splits.label_map.code_of(class).expect("hidden class mapped"),
            class_name: class.name(),
        })?);
    }

    let mut manifest_file = fs::File::create(dir.join("manifest.jsonl"))?;
    for line in &manifest {
        writeln!(manifest_file, "{line}")?;
    }
    let mut hidden_file = fs::File::create(eval_dir.join("hidden.jsonl"))?;
    for line in &hidden_lines {
        writeln!(hidden_file, "{line}")?;
    }
    Ok(())
}

/// Load a corpus saved by [`save_corpus`]; verifies that every manifest
/// record resolves to an image file.
pub fn load_corpus(dir: &Path) -> Result<DatasetSplits> {
    let header: CorpusHeader = serde_json::from_str(&fs::read_to_string(dir.join("corpus.json"))?)?;
    let parse_classes = |names: &[String]| -> Result<Vec<ArtefactClass>> {
        names.iter().map(|n| n.parse()).collect()
    };
    let label_map = LabelMap::new(
        &parse_classes(&header.prior_classes)?,
        &parse_classes(&header.finetune_classes)?,
    )?;

    let mut hidden_by_id = std::collections::BTreeMap::new();
    let hidden_path = dir.join("eval").join("hidden.jsonl");
    if hidden_path.exists() {
        for line in BufReader::new(fs::File::open(&hidden_path)?).lines() {
            let record: HiddenRecord = serde_json::from_str(&line?)?;
            let class: ArtefactClass = record.class_name.parse()?;
            hidden_by_id.insert(record.sample_id, class);
        }
    }

    let mut artefact_specific = Vec::new();
    let mut unseen_labelled = Vec::new();
    let mut unseen_unlabelled = Vec::new();
    let mut hidden = Vec::new();
    let mut test_ids = Vec::new();
    for line in BufReader::new(fs::File::open(dir.join("manifest.jsonl"))?).lines() {
        let record: ManifestRecord = serde_json::from_str(&line?)?;
        let path = dir.join(&record.file);
        if !path.exists() {
            return Err(Error::integrity(format!(
                "manifest references missing file {}",
                record.file
            )));
        }
        let image = ImageGray::read_pgm(&path)?;
        match record.split.as_str() {
            "artefact_specific" | "unseen_labelled" => {
                let name = record.class_name.ok_or_else(|| {
                    Error::integrity(format!("sample {} lacks a class name", record.sample_id))
                })?;
                let label: ArtefactClass = name.parse()?;
                if splits_code_mismatch(&label_map, label, record.label_code) {
                    return Err(Error::integrity(format!(
                        "sample {}: label code does not match class name",
                        record.sample_id
                    )));
                }
                let sample = LabelledSample { image, label, sample_id: record.sample_id };
                if record.split == "artefact_specific" {
                    artefact_specific.push(sample);
                } else {
                    unseen_labelled.push(sample);
                }
            }
            "unseen_unlabelled" => {
                let class = hidden_by_id.get(&record.sample_id).copied().ok_or_else(|| {
                    Error::integrity(format!(
                        "test sample {} missing from eval manifest",
                        record.sample_id
                    ))
                })?;
                unseen_unlabelled.push(image);
                hidden.push(class);
                test_ids.push(record.sample_id);
            }
            other => {
                return Err(Error::integrity(format!("unknown split '{other}'")));
            }
        }
    }

    DatasetSplits::from_parts(
        artefact_specific,
        unseen_labelled,
        unseen_unlabelled,
        hidden,
        test_ids,
        label_map,
    )
}

fn splits_code_mismatch(
    map: &LabelMap,
    label: ArtefactClass,
    code: Option<LabelCode>,
) -> bool {
    map.code_of(label) != code
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> CorpusConfig {
        CorpusConfig {
            per_class_count: 6,
            image_size: 32,
            cine_frames: 3,
            param_ranges: ParamRanges::default(),
            rng_seed: 99,
        }
    }

    fn exp1_classes() -> (Vec<ArtefactClass>, Vec<ArtefactClass>) {
        (
            vec![
                ArtefactClass::RespiratoryMotion,
                ArtefactClass::Gibbs,
                ArtefactClass::ArtefactFree,
            ],
            vec![ArtefactClass::Aliasing, ArtefactClass::CardiacMotion],
        )
    }

    #[test]
    fn label_codes_partition_prior_temp_finetune() {
        let (prior, finetune) = exp1_classes();
        let map = LabelMap::new(&prior, &finetune).unwrap();
        assert_eq!(map.num_prior(), 3);
        assert_eq!(map.temporary_code(), 4);
        assert_eq!(map.prior_codes(), vec![1, 2, 3]);
        assert_eq!(map.finetune_codes(), vec![5, 6]);
        // canonical order: cardiac < aliasing is false; enum order is
        // respiratory, cardiac, gibbs, aliasing, free
        assert_eq!(map.code_of(ArtefactClass::RespiratoryMotion), Some(1));
        assert_eq!(map.code_of(ArtefactClass::Gibbs), Some(2));
        assert_eq!(map.code_of(ArtefactClass::ArtefactFree), Some(3));
        assert_eq!(map.code_of(ArtefactClass::CardiacMotion), Some(5));
        assert_eq!(map.code_of(ArtefactClass::Aliasing), Some(6));
        assert_eq!(map.class_of(4), Some(ArtefactClass::Temporary(4)));
    }

    #[test]
    fn overlapping_class_sets_are_rejected() {
        let prior = vec![ArtefactClass::Gibbs, ArtefactClass::ArtefactFree];
        let finetune = vec![ArtefactClass::Gibbs];
        assert!(LabelMap::new(&prior, &finetune).is_err());
    }

    #[test]
    fn corpus_splits_have_expected_sizes() {
        let (prior, finetune) = exp1_classes();
        let splits = build_corpus(&tiny_config(), &prior, &finetune, 2).unwrap();
        assert_eq!(splits.artefact_specific.len(), 18);
        assert_eq!(splits.unseen_labelled.len(), 4);
        assert_eq!(splits.unseen_unlabelled.len(), 8);
        assert_eq!(splits.hidden_labels().len(), 8);
    }

    #[test]
    fn full_budget_leaves_no_test_samples() {
        let (prior, finetune) = exp1_classes();
        let splits = build_corpus(&tiny_config(), &prior, &finetune, 6).unwrap();
        assert!(splits.unseen_unlabelled.is_empty());
    }

    #[test]
    fn oversized_budget_is_rejected() {
        let (prior, finetune) = exp1_classes();
        assert!(build_corpus(&tiny_config(), &prior, &finetune, 7).is_err());
    }

    #[test]
    fn corpus_is_deterministic() {
        let (prior, finetune) = exp1_classes();
        let a = build_corpus(&tiny_config(), &prior, &finetune, 2).unwrap();
        let b = build_corpus(&tiny_config(), &prior, &finetune, 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn temporary_label_assignment() {
        let images = vec![ImageGray::zeros(32, 32).unwrap(); 10];
        let assigned = assign_temporary_label(&images, 3).unwrap();
        assert_eq!(assigned.len(), 10);
        assert!(assigned.iter().all(|s| s.label == ArtefactClass::Temporary(4)));
        assert!(assign_temporary_label(&[], 3).unwrap().is_empty());
        assert!(assign_temporary_label(&images, 0).is_err());
    }

    #[test]
    fn meta_train_partition_is_disjoint_and_covering() {
        let (prior, finetune) = exp1_classes();
        let splits = build_corpus(&tiny_config(), &prior, &finetune, 2).unwrap();
        let assigned = assign_temporary_label(&splits.unseen_unlabelled, 3).unwrap();
        let meta = make_meta_train(&splits.artefact_specific, &assigned, 0.5, 1).unwrap();
        assert_eq!(meta.samples.len(), 26);
        let mut all: Vec<usize> = meta.support.iter().chain(&meta.query).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..26).collect::<Vec<_>>());
    }

    #[test]
    fn sampler_covers_partition_once_per_epoch() {
        let (prior, finetune) = exp1_classes();
        let splits = build_corpus(&tiny_config(), &prior, &finetune, 2).unwrap();
        let assigned = assign_temporary_label(&splits.unseen_unlabelled, 3).unwrap();
        let meta = make_meta_train(&splits.artefact_specific, &assigned, 0.5, 1).unwrap();
        let mut sampler = StratifiedSampler::new(&meta, Part::Support, 44);
        let batch = 5;
        let mut seen = Vec::new();
        for _ in 0..sampler.batches_per_epoch(batch) {
            seen.extend(sampler.sample_minibatch(batch).unwrap());
        }
        let mut expected = meta.support.clone();
        expected.sort_unstable();
        seen.sort_unstable();
        assert_eq!(seen, expected);
    }

    #[test]
    fn sampler_rejects_oversized_batch() {
        let (prior, finetune) = exp1_classes();
        let splits = build_corpus(&tiny_config(), &prior, &finetune, 2).unwrap();
        let meta = make_meta_train(&splits.artefact_specific, &[], 0.5, 1).unwrap();
        let mut sampler = StratifiedSampler::new(&meta, Part::Support, 44);
        assert!(sampler.sample_minibatch(meta.support.len() + 1).is_err());
    }

    #[test]
    fn sampler_is_deterministic() {
        let (prior, finetune) = exp1_classes();
        let splits = build_corpus(&tiny_config(), &prior, &finetune, 2).unwrap();
        let meta = make_meta_train(&splits.artefact_specific, &[], 0.5, 1).unwrap();
        let mut a = StratifiedSampler::new(&meta, Part::Query, 7);
        let mut b = StratifiedSampler::new(&meta, Part::Query, 7);
        assert_eq!(a.sample_minibatch(4).unwrap(), b.sample_minibatch(4).unwrap());
    }
}
