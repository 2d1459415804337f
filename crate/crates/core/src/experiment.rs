//! Experiment harness: TOML-configured experiment grids, seeded runs,
//! CSV reports, checkpoint round trips and the inspection gallery.
//!
//! A grid is `modes x budgets x seeds` for one experiment description.
//! Cells that share a `(budget, seed)` pair reuse one generated corpus;
//! everything else is derived independently, so removing a cell never
//! changes another cell's numbers and rerunning a grid reproduces the
//! report CSVs byte for byte.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{build_corpus, load_corpus, save_corpus, CorpusConfig, DatasetSplits};
use crate::error::{Error, Result};
use crate::exec;
use crate::kspace::{synthesize_sample, ArtefactClass, ArtefactParams};
use crate::meta::{predict, run_mode, FineTunedModel, MetaConfig, Mode, TrainHistory};
use crate::metrics::{compute_metrics, aggregate_runs, Averaging, ConfusionMatrix, MetricReport};
use crate::nn::checkpoint::{load_checkpoint, save_checkpoint};
use crate::nn::{BatchNormState, ModelSpec, ParamSet};
use crate::phantom::generate_phantom;
use crate::seeds;

/// Extractor/head widths; the input size always tracks the corpus
/// image size and the output width is set per training phase.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub conv_channels: Vec<usize>,
    pub head_widths: [usize; 2],
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { conv_channels: vec![8, 16, 32], head_widths: [128, 64] }
    }
}

/// One experiment description: class sets, labelled budgets, modes and
/// seeds, plus corpus/model/training configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSpec {
    pub name: String,
    pub prior_classes: Vec<String>,
    pub finetune_classes: Vec<String>,
    pub budgets: Vec<usize>,
    pub modes: Vec<Mode>,
    pub seeds: Vec<u64>,
    /// Load this corpus instead of generating one (single-budget runs).
    pub corpus_dir: Option<PathBuf>,
    pub corpus: CorpusConfig,
    pub model: ModelConfig,
    pub meta: MetaConfig,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            name: "experiment-1".into(),
            prior_classes: vec![
                "respiratory_motion".into(),
                "gibbs".into(),
                "artefact_free".into(),
            ],
            finetune_classes: vec!["aliasing".into(), "cardiac_motion".into()],
            budgets: vec![64, 128, 256],
            modes: vec![Mode::M1, Mode::M2, Mode::M3],
            seeds: vec![1, 2, 3, 4, 5],
            corpus_dir: None,
            corpus: CorpusConfig::default(),
            model: ModelConfig::default(),
            meta: MetaConfig::default(),
        }
    }
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: ExperimentSpec =
            toml::from_str(text).map_err(|e| Error::config(format!("{e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("spec serialises")
    }

    pub fn prior(&self) -> Result<Vec<ArtefactClass>> {
        self.prior_classes.iter().map(|s| s.parse()).collect()
    }

    pub fn finetune(&self) -> Result<Vec<ArtefactClass>> {
        self.finetune_classes.iter().map(|s| s.parse()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty()
            || !self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
        {
            return Err(Error::config(
                "experiment name must be non-empty ASCII alphanumeric/-/_",
            ));
        }
        let prior = self.prior()?;
        let finetune = self.finetune()?;
        crate::corpus::LabelMap::new(&prior, &finetune)?;
        if self.budgets.is_empty() || self.modes.is_empty() || self.seeds.is_empty() {
            return Err(Error::config("budgets, modes and seeds must be non-empty"));
        }
        for &b in &self.budgets {
            if b == 0 {
                return Err(Error::config("budgets must be positive"));
            }
            if b >= self.corpus.per_class_count && self.corpus_dir.is_none() {
                return Err(Error::config(format!(
                    "budget {b} leaves no test samples at per_class_count {}",
                    self.corpus.per_class_count
                )));
            }
        }
        if self.corpus_dir.is_some() && self.budgets.len() != 1 {
            return Err(Error::config("a preloaded corpus supports exactly one budget"));
        }
        let mut seeds_dedup = self.seeds.clone();
        seeds_dedup.sort_unstable();
        seeds_dedup.dedup();
        if seeds_dedup.len() != self.seeds.len() {
            return Err(Error::config("seeds must be distinct"));
        }
        self.meta.validate()?;
        self.model_spec(2).validate()?;
        Ok(())
    }

    /// The network topology for a head of `out` tasks.
    pub fn model_spec(&self, out: usize) -> ModelSpec {
        ModelSpec {
            input_size: self.corpus.image_size,
            conv_channels: self.model.conv_channels.clone(),
            head_widths: self.model.head_widths,
            out,
        }
    }

    /// Platform-stable content hash of the canonical serialisation.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("spec serialises");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// The four built-in experiment rows (prior classes / fine-tune classes):
///
/// 1. respiratory motion, gibbs, artefact-free vs aliasing, cardiac motion
/// 2. respiratory motion, cardiac motion, artefact-free vs aliasing, gibbs
/// 3. respiratory motion, aliasing, artefact-free vs cardiac motion, gibbs
/// 4. respiratory motion, artefact-free vs aliasing, cardiac motion, gibbs
pub fn builtin_table1() -> Vec<ExperimentSpec> {
    let rows: [(&str, &[&str], &[&str]); 4] = [
        (
            "experiment-1",
            &["respiratory_motion", "gibbs", "artefact_free"],
            &["aliasing", "cardiac_motion"],
        ),
        (
            "experiment-2",
            &["respiratory_motion", "cardiac_motion", "artefact_free"],
            &["aliasing", "gibbs"],
        ),
        (
            "experiment-3",
            &["respiratory_motion", "aliasing", "artefact_free"],
            &["cardiac_motion", "gibbs"],
        ),
        (
            "experiment-4",
            &["respiratory_motion", "artefact_free"],
            &["aliasing", "cardiac_motion", "gibbs"],
        ),
    ];
    rows.iter()
        .map(|(name, prior, finetune)| ExperimentSpec {
            name: name.to_string(),
            prior_classes: prior.iter().map(|s| s.to_string()).collect(),
            finetune_classes: finetune.iter().map(|s| s.to_string()).collect(),
            ..ExperimentSpec::default()
        })
        .collect()
}

/// Outcome of one (experiment, mode, budget, seed) cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub spec_hash: String,
    pub experiment: String,
    pub mode: Mode,
    pub budget: usize,
    pub seed: u64,
    pub status: String,
    pub weighted: Option<MetricReport>,
    pub macro_avg: Option<MetricReport>,
    pub wall_seconds: f64,
    pub checkpoint: Option<String>,
}

impl RunRecord {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug)]
pub struct RunSummary {
    pub records: Vec<RunRecord>,
    pub any_failed: bool,
}

/// Checkpoint header: everything needed to rebuild a [`FineTunedModel`]
/// next to the stored parameters and batch-norm state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub experiment: String,
    pub mode: Mode,
    pub budget: usize,
    pub seed: u64,
    pub meta: MetaConfig,
    pub model_spec: ModelSpec,
    /// (class name, head slot) pairs.
    pub class_map: Vec<(String, usize)>,
}

fn corpus_for_cell(spec: &ExperimentSpec, budget: usize, seed: u64) -> Result<DatasetSplits> {
    if let Some(dir) = &spec.corpus_dir {
        let splits = load_corpus(dir)?;
        let m = splits.label_map().finetune_classes().len();
        if m == 0 || splits.unseen_labelled.len() != budget * m {
            return Err(Error::config(format!(
                "stored corpus holds {} labelled unseen samples, budget {budget} needs {}",
                splits.unseen_labelled.len(),
                budget * m
            )));
        }
        return Ok(splits);
    }
    let mut corpus_cfg = spec.corpus.clone();
    corpus_cfg.rng_seed = seeds::derive2(spec.corpus.rng_seed, budget as u64, seed);
    build_corpus(&corpus_cfg, &spec.prior()?, &spec.finetune()?, budget)
}

/// Score a fine-tuned model on the hidden test labels. This is the one
/// place outside `eval_checkpoint` that reads them.
fn evaluate_model(
    model: &FineTunedModel,
    splits: &DatasetSplits,
) -> Result<(MetricReport, MetricReport)> {
    if splits.unseen_unlabelled.is_empty() {
        return Err(Error::param("no test samples in corpus"));
    }
    let predictions = predict(model, &splits.unseen_unlabelled)?;
    let map = splits.label_map();
    let to_code = |class: ArtefactClass| {
        map.code_of(class)
            .ok_or_else(|| Error::config(format!("class {class} missing from label map")))
    };
    let truth: Vec<u16> = splits
        .hidden_labels()
        .iter()
        .map(|&c| to_code(c))
        .collect::<Result<_>>()?;
    let pred: Vec<u16> = predictions.into_iter().map(to_code).collect::<Result<_>>()?;
    let cm = ConfusionMatrix::from_pairs(&map.finetune_codes(), &truth, &pred)?;
    Ok((
        compute_metrics(&cm, Averaging::Weighted)?,
        compute_metrics(&cm, Averaging::Macro)?,
    ))
}

fn cell_stem(spec: &ExperimentSpec, mode: Mode, budget: usize, seed: u64) -> String {
    format!("{}_{mode}_b{budget}_s{seed}", spec.name)
}

struct CellOutcome {
    record: RunRecord,
    history: Option<TrainHistory>,
    model: Option<FineTunedModel>,
}

fn run_cell(
    spec: &ExperimentSpec,
    splits: &DatasetSplits,
    mode: Mode,
    budget: usize,
    seed: u64,
) -> CellOutcome {
    let start = Instant::now();
    let mut cfg = spec.meta.clone();
    cfg.seed = seeds::derive2(spec.meta.seed, budget as u64, seed);
    let template = spec.model_spec(2);
    let outcome = run_mode(mode, splits, &template, &cfg)
        .and_then(|model| evaluate_model(&model, splits).map(|reports| (model, reports)));
    let wall_seconds = start.elapsed().as_secs_f64();
    match outcome {
        Ok((model, (weighted, macro_avg))) => CellOutcome {
            record: RunRecord {
                spec_hash: spec.hash(),
                experiment: spec.name.clone(),
                mode,
                budget,
                seed,
                status: "ok".into(),
                weighted: Some(weighted),
                macro_avg: Some(macro_avg),
                wall_seconds,
                checkpoint: None,
            },
            history: Some(model.history.clone()),
            model: Some(model),
        },
        Err(e) => CellOutcome {
            record: RunRecord {
                spec_hash: spec.hash(),
                experiment: spec.name.clone(),
                mode,
                budget,
                seed,
                status: format!("failed: {e}"),
                weighted: None,
                macro_avg: None,
                wall_seconds,
                checkpoint: None,
            },
            history: None,
            model: None,
        },
    }
}

/// Run a list of experiment grids and write reports under `out_dir`.
pub fn run_experiments(specs: &[ExperimentSpec], out_dir: &Path) -> Result<RunSummary> {
    for spec in specs {
        spec.validate()?;
    }
    fs::create_dir_all(out_dir.join("checkpoints"))?;
    fs::create_dir_all(out_dir.join("history"))?;

    // One work item per (spec, budget, seed); the modes inside share
    // the generated corpus.
    let mut groups = Vec::new();
    for (spec_idx, spec) in specs.iter().enumerate() {
        for &budget in &spec.budgets {
            for &seed in &spec.seeds {
                groups.push((spec_idx, budget, seed));
            }
        }
    }

    let outcomes: Vec<Vec<CellOutcome>> = exec::map(&groups, |&(spec_idx, budget, seed)| {
        let spec = &specs[spec_idx];
        match corpus_for_cell(spec, budget, seed) {
            Ok(splits) => spec
                .modes
                .iter()
                .map(|&mode| run_cell(spec, &splits, mode, budget, seed))
                .collect(),
            Err(e) => spec
                .modes
                .iter()
                .map(|&mode| CellOutcome {
                    record: RunRecord {
                        spec_hash: spec.hash(),
                        experiment: spec.name.clone(),
                        mode,
                        budget,
                        seed,
                        status: format!("failed: {e}"),
                        weighted: None,
                        macro_avg: None,
                        wall_seconds: 0.0,
                        checkpoint: None,
                    },
                    history: None,
                    model: None,
                })
                .collect(),
        }
    });

    let mut records = Vec::new();
    for (group, cells) in groups.iter().zip(outcomes) {
        let spec = &specs[group.0];
        for mut cell in cells {
            let stem = cell_stem(spec, cell.record.mode, cell.record.budget, cell.record.seed);
            if let Some(model) = &cell.model {
                let path = out_dir.join("checkpoints").join(format!("{stem}.ckpt"));
                let header = CheckpointHeader {
                    experiment: spec.name.clone(),
                    mode: cell.record.mode,
                    budget: cell.record.budget,
                    seed: cell.record.seed,
                    meta: spec.meta.clone(),
                    model_spec: model.spec.clone(),
                    class_map: model
                        .class_map
                        .iter()
                        .map(|(c, slot)| (c.name(), *slot))
                        .collect(),
                };
                save_checkpoint(&path, &header, &model.params, &model.bn)?;
                cell.record.checkpoint = Some(format!("checkpoints/{stem}.ckpt"));
            }
            if let Some(history) = &cell.history {
                fs::write(out_dir.join("history").join(format!("{stem}.csv")), history.to_csv())?;
            }
            records.push(cell.record);
        }
    }

    write_reports(specs, &records, out_dir)?;
    let any_failed = records.iter().any(|r| !r.ok());
    Ok(RunSummary { records, any_failed })
}

fn metric_row(report: &MetricReport) -> String {
    format!(
        "{:.6},{:.6},{:.6},{:.6}",
        report.accuracy, report.precision, report.recall, report.f_measure
    )
}

fn write_reports(specs: &[ExperimentSpec], records: &[RunRecord], out_dir: &Path) -> Result<()> {
    let mut weighted_csv = String::from(
        "experiment,mode,budget,seed,accuracy,precision,recall,f_measure\n",
    );
    let mut macro_csv = weighted_csv.clone();
    for r in records {
        if let (Some(w), Some(m)) = (&r.weighted, &r.macro_avg) {
            weighted_csv.push_str(&format!(
                "{},{},{},{},{}\n",
                r.experiment,
                r.mode,
                r.budget,
                r.seed,
                metric_row(w)
            ));
            macro_csv.push_str(&format!(
                "{},{},{},{},{}\n",
                r.experiment,
                r.mode,
                r.budget,
                r.seed,
                metric_row(m)
            ));
        }
    }
    fs::write(out_dir.join("reports.csv"), weighted_csv)?;
    fs::write(out_dir.join("reports_macro.csv"), macro_csv)?;

    // Aggregate CSV shaped like the result tables: one row per
    // (experiment, budget, metric), modes across the columns, the
    // across-seeds standard deviation next to each mean.
    let mut aggregate_csv = String::from(
        "experiment,budget,metric,m1_mean,m1_std_across_seeds,m2_mean,m2_std_across_seeds,m3_mean,m3_std_across_seeds\n",
    );
    for spec in specs {
        for &budget in &spec.budgets {
            let mut per_mode: Vec<Option<crate::metrics::AggregateReport>> = Vec::new();
            for mode in [Mode::M1, Mode::M2, Mode::M3] {
                let reports: Vec<MetricReport> = records
                    .iter()
                    .filter(|r| {
                        r.experiment == spec.name
                            && r.budget == budget
                            && r.mode == mode
                            && r.ok()
                    })
                    .filter_map(|r| r.weighted.clone())
                    .collect();
                per_mode.push(if reports.len() >= 2 {
                    Some(aggregate_runs(&reports)?)
                } else {
                    None
                });
            }
            type Field = (&'static str, fn(&crate::metrics::AggregateReport) -> (f64, f64));
            let fields: [Field; 4] = [
                ("accuracy", |a| (a.accuracy_mean, a.accuracy_std)),
                ("precision", |a| (a.precision_mean, a.precision_std)),
                ("recall", |a| (a.recall_mean, a.recall_std)),
                ("f_measure", |a| (a.f_measure_mean, a.f_measure_std)),
            ];
            for (metric, extract) in fields {
                let mut row = format!("{},{budget},{metric}", spec.name);
                for agg in &per_mode {
                    match agg {
                        Some(a) => {
                            let (mean, std) = extract(a);
                            row.push_str(&format!(",{mean:.6},{std:.6}"));
                        }
                        None => row.push_str(",,"),
                    }
                }
                aggregate_csv.push_str(&row);
                aggregate_csv.push('\n');
            }
        }
    }
    fs::write(out_dir.join("aggregate.csv"), aggregate_csv)?;

    let mut runs_jsonl = String::new();
    for r in records {
        runs_jsonl.push_str(&serde_json::to_string(r)?);
        runs_jsonl.push('\n');
    }
    fs::write(out_dir.join("runs.jsonl"), runs_jsonl)?;
    Ok(())
}

/// Generate and persist the corpus described by `spec` (first budget).
/// Returns the per-class sample counts as (class name, total) pairs.
pub fn synth_corpus(spec: &ExperimentSpec, out_dir: &Path) -> Result<Vec<(String, usize)>> {
    spec.validate()?;
    let budget = spec.budgets[0];
    let splits = build_corpus(&spec.corpus, &spec.prior()?, &spec.finetune()?, budget)?;
    save_corpus(&splits, out_dir)?;
    let mut counts: std::collections::BTreeMap<ArtefactClass, usize> = Default::default();
    for s in splits.artefact_specific.iter().chain(&splits.unseen_labelled) {
        *counts.entry(s.label).or_default() += 1;
    }
    for &c in splits.hidden_labels() {
        *counts.entry(c).or_default() += 1;
    }
    Ok(counts.into_iter().map(|(c, n)| (c.name(), n)).collect())
}

/// Load a checkpoint and score it on the stored corpus' test split.
pub fn eval_checkpoint(
    checkpoint: &Path,
    corpus_dir: &Path,
) -> Result<(MetricReport, MetricReport)> {
    let (header, params, bn): (CheckpointHeader, ParamSet, BatchNormState) =
        load_checkpoint(checkpoint)?;
    let splits = load_corpus(corpus_dir)?;
    if splits.unseen_unlabelled.is_empty() {
        return Err(Error::param("no test samples in corpus"));
    }
    let image_size = splits.unseen_unlabelled[0].height();
    if header.model_spec.input_size != image_size {
        return Err(Error::shape(format!(
            "checkpoint expects {}px inputs, corpus holds {image_size}px images",
            header.model_spec.input_size
        )));
    }
    let class_map = header
        .class_map
        .iter()
        .map(|(name, slot)| Ok((name.parse::<ArtefactClass>()?, *slot)))
        .collect::<Result<Vec<_>>>()?;
    let model = FineTunedModel {
        params,
        spec: header.model_spec.clone(),
        bn,
        class_map,
        history: TrainHistory::default(),
    };
    evaluate_model(&model, &splits)
}

/// Fixed-seed clean/degraded sample pairs for every class, for human
/// inspection. Returns the written file names.
pub fn gallery(out_dir: &Path, seed: u64, image_size: usize) -> Result<Vec<String>> {
    fs::create_dir_all(out_dir)?;
    let stack = generate_phantom(seed, image_size, 8)?;
    let params = ArtefactParams {
        translation_px: 4,
        sine_period: 10.0,
        sine_duty: 0.5,
        gibbs_keep_fraction: 0.3,
        aliasing_factor: 2,
        rng_seed: seeds::derive(seed, 0x6A11),
    };
    let mut written = Vec::new();
    for class in ArtefactClass::CONCRETE {
        let clean = stack.frame(0).clone();
        let degraded = synthesize_sample(&stack, class, &params)?;
        let clean_name = format!("{}_clean.pgm", class.name());
        let degraded_name = format!("{}_degraded.pgm", class.name());
        clean.write_pgm(&out_dir.join(&clean_name))?;
        degraded.write_pgm(&out_dir.join(&degraded_name))?;
        written.push(clean_name);
        written.push(degraded_name);
    }
    Ok(written)
}
